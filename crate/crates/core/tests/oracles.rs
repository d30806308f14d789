//! Implementation vs. straight-line oracle comparisons.

use zeresfdg::qsilk::{micro_detail_inject, quantile_clamp, DepthMap, QSilkConfig};
use zeresfdg::sampler::{run, seeded_normal, SigmaSchedule, ToyModel};
use zeresfdg::tensor::{
    dot_per_sample, gaussian_blur, quantile_per_sample, sobel_magnitude, std_per_sample, GaussianKernel, Shape4,
    Tensor4,
};
use zeresfdg::{fdg_reweight, zero_project, zeresfdg_step, ControllerState, GuidanceConfig, Mode};
use zeresfdg_oracle as oracle;
use zeresfdg_oracle::{Dims, XorShift};

fn dims(s: Shape4) -> Dims {
    Dims::new(s.n, s.c, s.h, s.w)
}

fn random(s: Shape4, seed: u64) -> Tensor4<f32> {
    Tensor4::new(s, XorShift::new(seed).vec_f32(s.len(), -2.0, 2.0)).unwrap()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}

fn shapes() -> Vec<Shape4> {
    [(1, 1, 1, 1), (1, 1, 3, 5), (2, 3, 4, 4), (2, 4, 8, 8), (1, 2, 16, 9), (2, 4, 16, 16)]
        .iter()
        .map(|&(n, c, h, w)| Shape4::new(n, c, h, w).unwrap())
        .collect()
}

#[test]
fn reductions_match_naive_loops() {
    for (k, s) in shapes().into_iter().enumerate() {
        let a = random(s, 10 + k as u64);
        let b = random(s, 100 + k as u64);
        let (af, bf) = (oracle::to_f64(a.data()), oracle::to_f64(b.data()));
        for (x, y) in dot_per_sample(&a, &b).unwrap().iter().zip(oracle::dot(&af, &bf, dims(s))) {
            assert!(rel_close(*x, y, 1e-6), "dot {x} vs {y}");
        }
        for (x, y) in std_per_sample(&a).iter().zip(oracle::std_two_pass(&af, dims(s))) {
            assert!(rel_close(*x, y, 1e-6), "std {x} vs {y}");
        }
        for q in [0.0, 0.001, 0.25, 0.5, 0.999, 1.0] {
            let m = s.sample_len();
            for (i, x) in quantile_per_sample(&a, q).unwrap().iter().enumerate() {
                let y = oracle::quantile(&af[i * m..(i + 1) * m], q);
                assert!(rel_close(*x, y, 1e-12), "quantile {x} vs {y}");
            }
        }
    }
}

#[test]
fn blur_matches_direct_2d_convolution() {
    for sigma in [0.5, 1.0, 2.0] {
        let k = GaussianKernel::new(sigma).unwrap();
        for (i, s) in shapes().into_iter().enumerate() {
            let a = random(s, 7 + i as u64);
            let got = gaussian_blur(&a.cast::<f64>(), &k);
            let want = oracle::blur(&oracle::to_f64(a.data()), dims(s), sigma);
            for (x, y) in got.data().iter().zip(&want) {
                assert!((x - y).abs() <= 1e-12, "sigma {sigma} {s}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn small_sigma_blur_is_near_identity() {
    let s = Shape4::new(1, 2, 9, 9).unwrap();
    let a = random(s, 3);
    let k = GaussianKernel::new(0.1).unwrap();
    assert_eq!(k.radius(), 1);
    let out = gaussian_blur(&a, &k);
    let want = oracle::blur(&oracle::to_f64(a.data()), dims(s), 0.1);
    for ((x, y), z) in out.data().iter().zip(&want).zip(a.data()) {
        assert!((*x as f64 - y).abs() < 1e-6);
        assert!((x - z).abs() < 1e-3);
    }
}

#[test]
fn sobel_matches_naive_stencil() {
    let s = Shape4::new(1, 3, 8, 8).unwrap();
    let a = random(s, 4);
    let got = sobel_magnitude(&a.cast::<f64>()).unwrap();
    let want = oracle::sobel(&oracle::to_f64(a.data()), dims(s));
    for (x, y) in got.data().iter().zip(&want) {
        assert!((x - y).abs() <= 1e-6);
    }
}

#[test]
fn fdg_impulse_matches_convolution_oracle() {
    let s = Shape4::new(1, 1, 9, 9).unwrap();
    let mut d = Tensor4::<f32>::zeros(s);
    d.set(0, 0, 4, 4, 1.0);
    let cfg = GuidanceConfig::default();
    let bands = fdg_reweight(&d, &cfg).unwrap();
    let df = oracle::to_f64(d.data());
    let low = oracle::blur(&df, dims(s), 1.0);
    for i in 0..s.len() {
        let want = 0.6 * low[i] + 1.3 * (df[i] - low[i]);
        assert!((bands.tilde.data()[i] - want).abs() < 1e-7, "{i}");
    }
}

#[test]
fn projection_residual_orthogonal() {
    let s = Shape4::new(2, 4, 8, 8).unwrap();
    for seed in 0..20 {
        let c = random(s, seed);
        let u = random(s, seed + 1000);
        let p = zero_project(&c, &u).unwrap();
        let r = oracle::to_f64(p.residual.data());
        let uf = oracle::to_f64(u.data());
        let ru = oracle::dot(&r, &uf, dims(s));
        let rr = oracle::dot(&r, &r, dims(s));
        let uu = oracle::dot(&uf, &uf, dims(s));
        for b in 0..2 {
            assert!(ru[b].abs() / (rr[b].sqrt() * uu[b].sqrt()) <= 1e-6);
        }
    }
}

#[test]
fn injection_matches_naive_eq() {
    let s = Shape4::new(1, 3, 16, 16).unwrap();
    let x = random(s, 11);
    let cfg = QSilkConfig::default();
    let got = micro_detail_inject(&x, None, 0.08, &cfg).unwrap();
    let want = oracle::inject(&oracle::to_f64(x.data()), dims(s), 0.08, 1.0, 1.0, None);
    for (a, b) in got.data().iter().zip(&want) {
        assert!((*a as f64 - b).abs() <= 1e-6);
    }

    let depth = random(s.with_channels(1), 12);
    let dm = DepthMap::new(depth.clone()).unwrap();
    let got = micro_detail_inject(&x, Some(&dm), 0.5, &cfg).unwrap();
    let want = oracle::inject(&oracle::to_f64(x.data()), dims(s), 0.5, 1.0, 1.0, Some(&oracle::to_f64(depth.data())));
    for (a, b) in got.data().iter().zip(&want) {
        assert!((*a as f64 - b).abs() <= 1e-6);
    }
}

#[test]
fn clamp_matches_oracle_bounds_with_inf() {
    let s = Shape4::new(1, 1, 1, 1000).unwrap();
    let mut data: Vec<f32> = (0..999).map(|v| v as f32).collect();
    data.push(f32::INFINITY);
    let x = Tensor4::new(s, data).unwrap();
    let (out, stats) = quantile_clamp(&x, &QSilkConfig::default()).unwrap();
    let (_, bounds) = oracle::qclamp(&oracle::to_f64(x.data()), dims(s), 0.001, 0.999);
    let (lo, hi) = bounds[0];
    assert!(out.is_finite());
    assert!((out.data()[999] as f64 - hi).abs() < 1e-4);
    assert!((stats.bounds[0].0 as f64 - lo).abs() < 1e-6);
}

fn ref_params(cfg: &GuidanceConfig) -> oracle::RefParams {
    oracle::RefParams {
        s: cfg.scale,
        alpha: cfg.alpha_rescale,
        lambda_low: cfg.lambda_low,
        lambda_high: cfg.lambda_high,
        sigma: cfg.sigma_split,
        beta: cfg.beta_ema,
        tau_lo: cfg.tau_lo,
        tau_hi: cfg.tau_hi,
    }
}

fn golden_pair() -> (Tensor4<f32>, Tensor4<f32>) {
    let s = Shape4::new(2, 4, 16, 16).unwrap();
    (random(s, 2024), random(s, 2025))
}

#[test]
fn step_matches_reference_and_golden_bytes() {
    let (c, u) = golden_pair();
    let cfg = GuidanceConfig::default();
    let (out, _) = zeresfdg_step(&c, &u, &cfg, &ControllerState::new(), None).unwrap();
    let r = oracle::guidance_step(
        &oracle::to_f64(c.data()),
        &oracle::to_f64(u.data()),
        dims(c.shape()),
        &ref_params(&cfg),
        oracle::RefState::default(),
        None,
        None,
    );
    assert_eq!(
        out.mode_used == Mode::RescaleFdg,
        r.mode == oracle::RefMode::Rescale
    );
    for (a, b) in out.y.data().iter().zip(&r.y) {
        assert!((*a as f64 - b).abs() <= 1e-6);
    }

    let stem = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/step_default");
    if std::env::var_os("ZERESFDG_BLESS").is_some() {
        zeresfdg::tensor::write_tensor(stem, &out.y).unwrap();
    }
    let golden = zeresfdg::tensor::read_tensor(stem).unwrap();
    assert_eq!(
        zeresfdg::tensor::tensor_to_le_bytes(&golden),
        zeresfdg::tensor::tensor_to_le_bytes(&out.y),
        "step output drifted from tests/golden/step_default.f32"
    );
}

#[test]
fn plain_cfg_run_matches_reference_loop() {
    let s = Shape4::new(1, 3, 16, 16).unwrap();
    let model = ToyModel::new(random(s, 1), random(s, 2), 42).unwrap();
    let schedule = SigmaSchedule::default_for(25).unwrap();
    let cfg = GuidanceConfig {
        scale: 1.0,
        lambda_low: 1.0,
        lambda_high: 1.0,
        alpha_rescale: 0.0,
        ..Default::default()
    };
    let out = run(&model, &schedule, &cfg, &QSilkConfig::disabled(), None, None).unwrap();
    let init = model.initial_latent(schedule.sigmas()[0]);
    let want = oracle::plain_cfg_loop(
        &oracle::to_f64(init.data()),
        &oracle::to_f64(model.target_cond.data()),
        &oracle::to_f64(model.target_uncond.data()),
        &oracle::karras(25, 0.03, 14.6, 7.0),
        1.0,
    );
    for (a, b) in out.final_image.data().iter().zip(&want) {
        assert!((*a as f64 - b).abs() <= 1e-5, "{a} vs {b}");
    }
}

#[test]
fn schedule_matches_oracle() {
    let s = SigmaSchedule::default_for(25).unwrap();
    for (a, b) in s.sigmas().iter().zip(oracle::karras(25, 0.03, 14.6, 7.0)) {
        assert!((a - b).abs() <= 1e-12 * b.max(1.0));
    }
}

#[test]
fn run_traces_are_valid_hysteresis_and_deterministic() {
    let s = Shape4::new(1, 4, 32, 32).unwrap();
    let model = ToyModel::new(random(s, 5), seeded_normal(s, 6), 3).unwrap();
    let schedule = SigmaSchedule::default_for(25).unwrap();
    let cfg = GuidanceConfig::default();
    let a = run(&model, &schedule, &cfg, &QSilkConfig::default(), None, None).unwrap();
    let b = run(&model, &schedule, &cfg, &QSilkConfig::default(), None, None).unwrap();
    assert_eq!(a.final_image, b.final_image);
    assert_eq!(a.traces, b.traces);

    let p = ref_params(&cfg);
    let mut st = oracle::RefState::default();
    for t in &a.traces {
        st = oracle::controller_step(st, t.r_hf, &p);
        assert_eq!(t.rho, st.rho);
        assert_eq!(t.mode == Mode::RescaleFdg, st.mode == oracle::RefMode::Rescale);
        assert!((0.0..=1.0).contains(&t.r_hf) && (0.0..=1.0).contains(&t.rho));
    }
    for t in &a.traces[..20] {
        assert_eq!(t.alpha_t, 0.0);
    }
    assert!(a.traces[20..].iter().all(|t| t.alpha_t > 0.0));
    assert!(a.final_image.is_finite());
}

#[test]
fn mask_gating_in_run() {
    let s = Shape4::new(1, 2, 16, 16).unwrap();
    let model = ToyModel::new(random(s, 8), random(s, 9), 1).unwrap();
    let schedule = SigmaSchedule::default_for(10).unwrap();
    let zero_mask = Tensor4::<f32>::zeros(s.with_channels(1));
    let cfg = GuidanceConfig::default();
    // guidance fully gated off: the conservative branch keeps only alpha_par * y_u
    let out = run(&model, &schedule, &cfg, &QSilkConfig::disabled(), Some(&zero_mask), None).unwrap();
    assert!(out.final_image.is_finite());
    assert_eq!(out.traces.len(), 10);
}
