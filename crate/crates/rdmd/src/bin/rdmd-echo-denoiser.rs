//! Test fixture speaking the RDMD protocol with an identity denoiser.

use std::io::{self, BufReader, BufWriter, Write};
use std::net::TcpListener;

use clap::Parser;
use rdmd::echo::{serve, EchoConfig};
use rdmd::protocol::Handshake;

#[derive(Parser)]
#[command(about = "Identity noise predictor over the RDMD wire protocol")]
struct Args {
    /// Listen on this address instead of using stdin/stdout; the bound address is printed on stdout.
    #[arg(long)]
    tcp: Option<String>,
    #[arg(long, default_value_t = 1000)]
    t_train: u32,
    #[arg(long, default_value_t = 1e-4)]
    beta_start: f64,
    #[arg(long, default_value_t = 0.02)]
    beta_end: f64,
    /// Only accept this shape, as CxHxW.
    #[arg(long)]
    shape: Option<String>,
    /// Stop responding after this many requests.
    #[arg(long)]
    hang_after: Option<usize>,
}

fn parse_shape(s: &str) -> Result<[u32; 3], String> {
    let parts: Vec<u32> = s
        .split('x')
        .map(|p| p.parse().map_err(|_| format!("bad shape {s:?}")))
        .collect::<Result<_, _>>()?;
    parts.try_into().map_err(|_| format!("shape {s:?} needs three dims"))
}

fn main() -> io::Result<()> {
    let args = Args::parse();
    let dims = match args.shape.as_deref().map(parse_shape).transpose() {
        Ok(d) => d.unwrap_or([0, 0, 0]),
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(2);
        }
    };
    let cfg = EchoConfig {
        handshake: Handshake {
            train_steps: args.t_train,
            beta_start: args.beta_start,
            beta_end: args.beta_end,
            dims,
        },
        hang_after: args.hang_after,
    };
    match args.tcp {
        None => serve(BufReader::new(io::stdin().lock()), BufWriter::new(io::stdout().lock()), &cfg),
        Some(addr) => {
            let listener = TcpListener::bind(addr)?;
            println!("{}", listener.local_addr()?);
            io::stdout().flush()?;
            for stream in listener.incoming() {
                let stream = stream?;
                std::thread::spawn(move || {
                    let read_half = stream.try_clone()?;
                    serve(BufReader::new(read_half), BufWriter::new(stream), &cfg)
                });
            }
            Ok(())
        }
    }
}
