fn main() -> std::process::ExitCode {
    let code = rdmd::cli::run(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::ExitCode::from(code)
}
