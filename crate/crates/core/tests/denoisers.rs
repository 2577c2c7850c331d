mod common;

use common::{circulant_from_spectrum, dft2_real, idft2_real, matvec, max_abs_diff, smooth_spectrum, solve_dense, Inputs};
use num_complex::Complex64;
use proptest::prelude::*;
use rdmd_core::denoisers::{clean_estimate, noise_from_clean, wiener_matrix_action};
use rdmd_core::{DctShrinkDenoiser, Denoiser, Error, Image, NoiseSchedule, PriorSpectrum, Shape, WienerDenoiser};

fn sched() -> NoiseSchedule {
    NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap()
}

fn backends() -> Vec<Box<dyn Denoiser>> {
    vec![
        Box::new(WienerDenoiser::new(PriorSpectrum::Smooth { variance: 1.0, rho: 50.0 }).unwrap()),
        Box::new(WienerDenoiser::new(PriorSpectrum::White { variance: 0.3 }).unwrap()),
        Box::new(DctShrinkDenoiser::new(8, 1.0).unwrap()),
        Box::new(DctShrinkDenoiser::new(4, 2.5).unwrap()),
    ]
}

#[test]
fn clean_estimate_inverts_noise_from_clean() {
    let mut inp = Inputs::new(1);
    let s = Shape::new(2, 5, 6);
    let sched = sched();
    for t in [1, 17, 500, 1000] {
        let ab = sched.alpha_bar(t);
        let (x, x0) = (inp.image(s), inp.image(s));
        let eps = noise_from_clean(&x, &x0, ab);
        let back = clean_estimate(&x, &eps, ab);
        assert!(max_abs_diff(back.data(), x0.data()) < 1e-10 / ab.sqrt());
    }
}

#[test]
fn denoise_is_the_clean_estimate_of_the_predicted_noise() {
    let mut inp = Inputs::new(2);
    let s = Shape::new(1, 16, 12);
    let sched = sched();
    for mut b in backends() {
        for t in [1, 250, 999] {
            let x = inp.image(s);
            let eps = b.predict_eps(&x, t, &sched).unwrap();
            let direct = clean_estimate(&x, &eps, sched.alpha_bar(t));
            let via = b.denoise(&x, t, &sched).unwrap();
            assert_eq!(direct, via);
        }
    }
}

#[test]
fn clean_signal_round_trip_per_backend() {
    // Given a predicted eps, forming x_t from (x0|t, eps) reproduces the input
    let mut inp = Inputs::new(3);
    let s = Shape::new(1, 8, 8);
    let sched = sched();
    for mut b in backends() {
        let t = 321;
        let ab = sched.alpha_bar(t);
        let x = inp.image(s);
        let eps = b.predict_eps(&x, t, &sched).unwrap();
        let x0 = b.denoise(&x, t, &sched).unwrap();
        let rebuilt = x0.zip_map(&eps, |c, e| ab.sqrt() * c + (1.0 - ab).sqrt() * e);
        assert!(max_abs_diff(rebuilt.data(), x.data()) < 1e-12);
    }
}

/// Posterior mean of a scalar Gaussian prior by quadrature over x0.
fn scalar_posterior_mean(prior_var: f64, alpha_bar: f64, x_t: f64) -> f64 {
    let s = prior_var.sqrt();
    let (sa, var_n) = (alpha_bar.sqrt(), 1.0 - alpha_bar);
    let n = 20_001;
    let (lo, hi) = (-14.0 * s, 14.0 * s);
    let h = (hi - lo) / (n - 1) as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        let x0 = lo + i as f64 * h;
        let r = x_t - sa * x0;
        let wgt = (-0.5 * x0 * x0 / prior_var - 0.5 * r * r / var_n).exp();
        num += x0 * wgt;
        den += wgt;
    }
    num / den
}

#[test]
fn white_prior_matches_scalar_quadrature() {
    let sched = sched();
    let prior_var = 0.25;
    let mut den = WienerDenoiser::new(PriorSpectrum::White { variance: prior_var }).unwrap();
    for (t, xv) in [(50, 0.3), (300, -1.2), (800, 2.0), (1000, 0.7)] {
        let x = Image::filled(Shape::new(1, 1, 1), xv);
        let got = den.denoise(&x, t, &sched).unwrap().data()[0];
        let want = scalar_posterior_mean(prior_var, sched.alpha_bar(t), xv);
        assert!((got - want).abs() < 1e-10, "t={t}: {got} vs {want}");
    }
}

fn per_frequency_oracle(spec: &[f64], x: &[f64], h: usize, w: usize, alpha_bar: f64) -> Vec<f64> {
    let xf = dft2_real(x, h, w);
    let sa = alpha_bar.sqrt();
    let post: Vec<Complex64> =
        xf.iter().zip(spec).map(|(v, &s)| v * (sa * s / (alpha_bar * s + 1.0 - alpha_bar))).collect();
    idft2_real(&post, h, w)
}

#[test]
fn smooth_prior_matches_per_frequency_posterior_mean() {
    let sched = sched();
    let mut inp = Inputs::new(4);
    for (h, w) in [(8, 8), (16, 16), (6, 10)] {
        let spec = smooth_spectrum(1.0, 60.0, h, w);
        let mut den = WienerDenoiser::new(PriorSpectrum::Smooth { variance: 1.0, rho: 60.0 }).unwrap();
        for t in [1, 10, 200, 700, 1000] {
            let x = inp.image(Shape::new(1, h, w));
            let got = den.denoise(&x, t, &sched).unwrap();
            let want = per_frequency_oracle(&spec, x.data(), h, w, sched.alpha_bar(t));
            assert!(max_abs_diff(got.data(), &want) < 1e-10, "{h}x{w} t={t}");
        }
    }
}

#[test]
fn explicit_spectrum_is_used_verbatim() {
    let (h, w) = (8, 8);
    let spec = smooth_spectrum(2.0, 10.0, h, w);
    let mut a = WienerDenoiser::new(PriorSpectrum::Explicit { height: h, width: w, values: spec.clone() }).unwrap();
    let mut b = WienerDenoiser::new(PriorSpectrum::Smooth { variance: 2.0, rho: 10.0 }).unwrap();
    let x = Inputs::new(5).image(Shape::new(2, h, w));
    let sched = sched();
    let (pa, pb) = (a.denoise(&x, 40, &sched).unwrap(), b.denoise(&x, 40, &sched).unwrap());
    assert!(max_abs_diff(pa.data(), pb.data()) < 1e-13);
    let wrong = Image::zeros(Shape::new(1, 4, 8));
    assert!(matches!(a.denoise(&wrong, 40, &sched), Err(Error::Param { .. })));
}

#[test]
fn asymmetric_explicit_spectrum_is_rejected() {
    let mut values = vec![1.0; 16];
    values[1] = 2.0;
    let err = WienerDenoiser::new(PriorSpectrum::Explicit { height: 4, width: 4, values }).unwrap_err();
    assert!(matches!(err, Error::Param { name: "spectrum", .. }));
}

#[test]
fn wiener_matrix_action_matches_dense_solve() {
    let (h, w) = (8, 8);
    let spec = smooth_spectrum(1.0, 30.0, h, w);
    let cov = circulant_from_spectrum(&spec, h, w);
    let v = Inputs::new(6).image(Shape::new(1, h, w));
    for sigma in [0.05, 0.3, 1.0] {
        let mut m = cov.clone();
        for (i, row) in m.iter_mut().enumerate() {
            row[i] += sigma * sigma;
        }
        let want = matvec(&cov, &solve_dense(m, v.data().to_vec()));
        let got = wiener_matrix_action(&PriorSpectrum::Smooth { variance: 1.0, rho: 30.0 }, sigma, &v).unwrap();
        assert!(max_abs_diff(got.data(), &want) < 1e-10, "sigma={sigma}");
    }
}

#[test]
fn wiener_matrix_action_limits() {
    let v = Inputs::new(7).image(Shape::new(1, 6, 6));
    let sp = PriorSpectrum::Smooth { variance: 1.0, rho: 5.0 };
    assert_eq!(wiener_matrix_action(&sp, 0.0, &v).unwrap(), v);
    let flat = PriorSpectrum::White { variance: f64::INFINITY };
    assert_eq!(wiener_matrix_action(&flat, 0.7, &v).unwrap(), v);
    assert!(wiener_matrix_action(&sp, -1.0, &v).is_err());
}

#[test]
fn denoisers_reject_bad_steps_and_non_finite_input() {
    let sched = sched();
    let mut x = Image::zeros(Shape::new(1, 4, 4));
    for mut b in backends() {
        assert!(b.predict_eps(&x, 0, &sched).is_err());
        assert!(b.predict_eps(&x, 1001, &sched).is_err());
    }
    x.data_mut()[3] = f64::NAN;
    for mut b in backends() {
        assert!(matches!(b.predict_eps(&x, 5, &sched), Err(Error::NonFinite(_))));
    }
}

#[test]
fn dct_shrink_with_zero_threshold_is_identity() {
    let x = Inputs::new(8).image(Shape::new(3, 11, 13));
    let mut d = DctShrinkDenoiser::new(8, 0.0).unwrap();
    assert_eq!(d.shrink(&x, 0.0), x);
}

#[test]
fn dct_shrink_keeps_constant_blocks() {
    let x = Image::filled(Shape::new(1, 16, 16), 0.4);
    let mut d = DctShrinkDenoiser::new(8, 1.0).unwrap();
    let out = d.shrink(&x, 10.0);
    assert!(max_abs_diff(out.data(), x.data()) < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn wiener_filter_is_symmetric_and_linear(seed in any::<u64>(), sigma in 0.01f64..2.0, a in -2.0f64..2.0) {
        let mut inp = Inputs::new(seed);
        let s = Shape::new(1, 6, 8);
        let sp = PriorSpectrum::Smooth { variance: 1.0, rho: 20.0 };
        let (u, v) = (inp.image(s), inp.image(s));
        let wu = wiener_matrix_action(&sp, sigma, &u).unwrap();
        let wv = wiener_matrix_action(&sp, sigma, &v).unwrap();
        prop_assert!((wu.dot(&v) - u.dot(&wv)).abs() < 1e-12 * (1.0 + u.norm() * v.norm()));
        let mut combo = u.scaled(a);
        combo.add_scaled(1.0, &v);
        let wc = wiener_matrix_action(&sp, sigma, &combo).unwrap();
        let mut expect = wu.scaled(a);
        expect.add_scaled(1.0, &wv);
        prop_assert!(max_abs_diff(wc.data(), expect.data()) < 1e-12 * (1.0 + a.abs()) * 10.0);
        // eigenvalues lie in [0, 1]
        prop_assert!(wu.norm() <= u.norm() * (1.0 + 1e-12));
        prop_assert!(wu.dot(&u) >= -1e-12);
    }

    #[test]
    fn dct_shrink_is_non_expansive(seed in any::<u64>(), thr in 0.0f64..1.5, block in 1usize..10) {
        let mut inp = Inputs::new(seed);
        let x = inp.image(Shape::new(2, 13, 9));
        let mut d = DctShrinkDenoiser::new(block, 1.0).unwrap();
        let out = d.shrink(&x, thr);
        prop_assert!(out.norm() <= x.norm() * (1.0 + 1e-12));
    }
}
