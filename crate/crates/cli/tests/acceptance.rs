//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.
//!
//! Run a subset by number: `cargo test -p sammd-cli --test acceptance -- 6 7`.

use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use sammd_core::pipeline::{
    run_calibration, run_comparison, run_power_sweep, Scenario, SweepAxis, World, WorldConfig,
};
use sammd_core::rng::stream;
use sammd_core::toymodels::{fgsm, gen_synthetic, pgd, AttackConfig, AttackKind, NonIidFlavor, SyntheticKind};
use sammd_core::{
    gaussian_kernel, grad_j_hat, gram_bundle, h_matrix, hsic, hsic_dependence_protocol, j_hat, mmd_u_squared,
    sigma_h1_hat_sq, wild_weights, DeepKernelParams, FeatureMatrix, GaussianBandwidth, Kernel, Method, Sample, TestSpec,
    DEFAULT_LAMBDA,
};

const SEEDS: u64 = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn world() -> World {
    World::build(WorldConfig::default(), 0).expect("world builds")
}

fn spec(method: Method) -> TestSpec {
    TestSpec::new(method)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

fn autocorr(v: &[f64], k: usize) -> f64 {
    let m = mean(v);
    let var: f64 = v.iter().map(|x| (x - m).powi(2)).sum();
    let cov: f64 = v.windows(k + 1).map(|w| (w[0] - m) * (w[k] - m)).sum();
    cov / var
}

/// Nondecreasing up to at most one inversion of at most `tol`.
fn monotone(curve: &[f64], tol: f64) -> bool {
    let drops: Vec<f64> = curve.windows(2).map(|w| w[0] - w[1]).filter(|d| *d > 0.0).collect();
    drops.len() <= 1 && drops.iter().all(|d| *d <= tol)
}

fn fmt_curve(v: &[f64]) -> String {
    v.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(", ")
}

fn gaussian(n: usize, cols: usize, shift: f64, seed: u64) -> FeatureMatrix {
    let kind = SyntheticKind::Gaussian {
        mean: vec![shift; cols],
        std: 1.0,
    };
    gen_synthetic(&kind, n, seed).unwrap().0
}

fn bw(sigma: f64) -> GaussianBandwidth {
    GaussianBandwidth::from_sigma(sigma).unwrap()
}

fn calibration() -> Outcome {
    let specs = [spec(Method::Sammd), spec(Method::MmdG), spec(Method::MmdOWb)];
    let rep = run_comparison(&world(), &Scenario::GaussianH0 { n: 200 }, &specs, 500, 1).unwrap();
    let rates: Vec<f64> = rep.rows.iter().map(|r| r.rejection_rate).collect();
    let pass = rates.iter().all(|r| (0.02..=0.09).contains(r));
    let detail = rep
        .rows
        .iter()
        .map(|r| format!("{} {:.3}", r.method, r.rejection_rate))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(pass, format!("IID H0 type-I in [0.02, 0.09]: {detail}"))
}

fn dependent_contrast() -> Outcome {
    let world = world();
    let scenario = Scenario::DependentH0 { n: 100, l: 1.0 };
    let mut wb = spec(Method::MmdOWb);
    wb.bootstrap.l = 2.0;
    let mut sammd = spec(Method::Sammd);
    sammd.bootstrap.l = 2.0;
    let specs = [spec(Method::MmdO), wb, sammd];
    let mut good = 0;
    let mut lines = Vec::new();
    for seed in 0..SEEDS {
        let rep = run_comparison(&world, &scenario, &specs, 500, seed).unwrap();
        let r: Vec<f64> = rep.rows.iter().map(|r| r.rejection_rate).collect();
        let ok = r[0] > 0.10 && r[1] <= 0.10 && r[2] <= 0.10;
        good += ok as usize;
        lines.push(format!("[{}]", fmt_curve(&r)));
    }
    outcome(
        good >= 8,
        format!("MMD-O > 0.10 >= MMD-O-WB, SAMMD on {good}/10 seeds (need 8): {}", lines.join(" ")),
    )
}

fn power_ordering() -> Outcome {
    let world = world();
    let scenario = Scenario::Adversarial {
        n: 200,
        epsilon: 0.2,
        attack: AttackKind::Pgd,
        natural_fraction: 0.0,
    };
    let specs = [spec(Method::Sammd), spec(Method::MmdG)];
    let (mut s, mut g) = (Vec::new(), Vec::new());
    for seed in 0..SEEDS {
        let rep = run_comparison(&world, &scenario, &specs, 50, seed).unwrap();
        s.push(rep.rows[0].rejection_rate);
        g.push(rep.rows[1].rejection_rate);
    }
    let (ms, mg) = (median(&s), median(&g));
    outcome(ms >= 0.9 && ms >= mg, format!("median power SAMMD {ms:.3}, MMD-G {mg:.3}"))
}

fn median_curve(axis: SweepAxis, values: &[f64], base: &Scenario, trials: usize) -> Vec<f64> {
    let world = world();
    let per_seed: Vec<Vec<f64>> = (0..SEEDS)
        .map(|seed| {
            run_power_sweep(&world, axis, values, base, &spec(Method::Sammd), trials, seed)
                .unwrap()
                .rows
                .iter()
                .map(|r| r.rejection_rate)
                .collect()
        })
        .collect();
    (0..values.len())
        .map(|i| median(&per_seed.iter().map(|r| r[i]).collect::<Vec<_>>()))
        .collect()
}

fn attacked(n: usize, natural_fraction: f64) -> Scenario {
    Scenario::Adversarial {
        n,
        epsilon: 0.2,
        attack: AttackKind::Pgd,
        natural_fraction,
    }
}

fn monotone_power() -> Outcome {
    let eps = median_curve(SweepAxis::Epsilon, &[0.05, 0.1, 0.2], &attacked(200, 0.0), 20);
    let n = median_curve(SweepAxis::SetSize, &[20.0, 50.0, 200.0], &attacked(200, 0.0), 20);
    outcome(
        monotone(&eps, 0.05) && monotone(&n, 0.05),
        format!("epsilon curve [{}], set-size curve [{}]", fmt_curve(&eps), fmt_curve(&n)),
    )
}

fn mixture() -> Outcome {
    let mut curve = median_curve(SweepAxis::MixtureFraction, &[0.0, 0.5], &attacked(200, 0.0), 20);
    let world = world();
    let full = attacked(200, 1.0);
    let (mut rej, mut tot, mut rates) = (0, 0, Vec::new());
    for seed in 0..SEEDS {
        let rep = run_calibration(&world, &full, &spec(Method::Sammd), 50, 100 + seed).unwrap();
        rej += rep.rows[0].rejections;
        tot += rep.rows[0].trials;
        rates.push(rep.rejection_rate);
    }
    curve.push(median(&rates));
    let pooled = rej as f64 / tot as f64;
    let falling: Vec<f64> = curve.iter().map(|r| -r).collect();
    outcome(
        monotone(&falling, 0.05) && (0.02..=0.09).contains(&pooled),
        format!("natural fraction 0, 0.5, 1 -> [{}]; fraction 1 pooled over {tot} trials {pooled:.3}", fmt_curve(&curve)),
    )
}

/// Textbook U-statistic and variance straight from the data.
fn naive_stats(x: &FeatureMatrix, y: &FeatureMatrix, b: GaussianBandwidth) -> (f64, f64) {
    let n = x.rows();
    let k = |a: &[f64], c: &[f64]| gaussian_kernel(a, c, b).unwrap();
    let h = |i: usize, j: usize| k(x.row(i), x.row(j)) + k(y.row(i), y.row(j)) - k(x.row(i), y.row(j)) - k(x.row(j), y.row(i));
    let (mut off, mut all, mut row_sq) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let r: f64 = (0..n).map(|j| h(i, j)).sum();
        off += r - h(i, i);
        all += r;
        row_sq += r * r;
    }
    let nf = n as f64;
    let var = 4.0 * row_sq / nf.powi(3) - 4.0 * all * all / nf.powi(4);
    (off / (nf * (nf - 1.0)), (var + DEFAULT_LAMBDA).max(DEFAULT_LAMBDA))
}

fn naive_hsic(x: &FeatureMatrix, y: &FeatureMatrix, bx: GaussianBandwidth, by: GaussianBandwidth) -> f64 {
    let n = x.rows();
    let kx = |i: usize, j: usize| gaussian_kernel(x.row(i), x.row(j), bx).unwrap();
    let ky = |i: usize, j: usize| gaussian_kernel(y.row(i), y.row(j), by).unwrap();
    let nf = n as f64;
    let (mut joint, mut sx, mut sy, mut mixed) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            joint += kx(i, j) * ky(i, j);
            sx += kx(i, j);
            sy += ky(i, j);
            for l in 0..n {
                mixed += kx(i, j) * ky(i, l);
            }
        }
    }
    joint / (nf * nf) + (sx / (nf * nf)) * (sy / (nf * nf)) - 2.0 * mixed / nf.powi(3)
}

fn estimator_oracles() -> Outcome {
    let mut failures = Vec::new();

    let vals: Vec<f64> = (0..1000u64)
        .into_par_iter()
        .map(|s| {
            let b = gram_bundle(
                &Sample::raw(gaussian(50, 2, 0.0, 2 * s)),
                &Sample::raw(gaussian(50, 2, 0.0, 2 * s + 1)),
                &Kernel::Gaussian(bw(1.0)),
            )
            .unwrap();
            mmd_u_squared(&h_matrix(&b).unwrap()).unwrap()
        })
        .collect();
    let se = (variance(&vals) / vals.len() as f64).sqrt();
    if mean(&vals).abs() > 3.0 * se {
        failures.push(format!("unbiasedness: mean {:.2e} vs 3 SE {:.2e}", mean(&vals), 3.0 * se));
    }

    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let n = 2 + (seed as usize % 7);
        let x = gaussian(n, 2, 0.0, seed);
        let y = gaussian(n, 2, 0.7, seed + 500);
        let b = bw(0.5 + 0.1 * seed as f64);
        let bundle = gram_bundle(&Sample::raw(x.clone()), &Sample::raw(y.clone()), &Kernel::Gaussian(b)).unwrap();
        let h = h_matrix(&bundle).unwrap();
        let (mmd, var) = naive_stats(&x, &y, b);
        worst = worst.max((mmd_u_squared(&h).unwrap() - mmd).abs());
        worst = worst.max((sigma_h1_hat_sq(&h, DEFAULT_LAMBDA) - var).abs());
        let z = gaussian(n, 3, 0.0, seed + 100);
        let (bx, by) = (b, bw(1.3));
        worst = worst.max((hsic(&x, &z, bx, by).unwrap() - naive_hsic(&x, &z, bx, by)).abs());
    }
    if worst > 1e-12 {
        failures.push(format!("naive-loop oracle gap {worst:.2e}"));
    }

    let mut grad_err = 0.0f64;
    for seed in 0..20u64 {
        let mut r = stream(seed, 40);
        let n = 6 + (seed as usize % 10);
        let shift = r.random_range(0.2..1.5);
        let sx = Sample::with_features(gaussian(n, 2, 0.0, seed * 10), gaussian(n, 3, 0.0, seed * 10 + 1)).unwrap();
        let sy = Sample::with_features(gaussian(n, 2, shift, seed * 10 + 2), gaussian(n, 3, shift, seed * 10 + 3)).unwrap();
        let mut p = DeepKernelParams::new(bw(r.random_range(0.5..3.0)), bw(r.random_range(0.5..3.0)));
        p.eps0_logit = r.random_range(-2.0..2.0);
        let kernel = Kernel::Deep(p);
        let lambda = 1e-4;
        let (_, g) = grad_j_hat(&sx, &sy, &kernel, lambda).unwrap();
        let theta = kernel.params();
        let h = 1e-5;
        let fd: Vec<f64> = (0..theta.len())
            .map(|q| {
                let f = |d: f64| {
                    let mut t = theta.clone();
                    t[q] += d;
                    j_hat(&sx, &sy, &kernel.with_params(&t), lambda).unwrap().j_hat
                };
                (f(h) - f(-h)) / (2.0 * h)
            })
            .collect();
        let scale = g.iter().chain(&fd).fold(0.0f64, |a, v| a.max(v.abs())).max(1e-8);
        let err = g.iter().zip(&fd).fold(0.0f64, |a, (u, v)| a.max((u - v).abs())) / scale;
        grad_err = grad_err.max(err);
    }
    if grad_err > 1e-4 {
        failures.push(format!("gradient relative error {grad_err:.2e}"));
    }

    let detail = format!(
        "unbiasedness mean {:.2e} (3 SE {:.2e}), loop gap {worst:.1e}, gradient rel err {grad_err:.1e}",
        mean(&vals),
        3.0 * se
    );
    outcome(failures.is_empty(), detail)
}

fn wild_process() -> Outcome {
    let mut worst_ac = 0.0f64;
    let mut worst_var = 0.0f64;
    for l in [0.2, 5.0] {
        let w = wild_weights(100_000, l, &mut stream(11, 0));
        for k in [1, 2, 5] {
            worst_ac = worst_ac.max((autocorr(&w, k) - (-(k as f64) / l).exp()).abs());
        }
        worst_var = worst_var.max((variance(&w) - 1.0).abs());
    }
    outcome(
        worst_ac <= 0.02 && worst_var <= 0.05,
        format!("max autocorrelation error {worst_ac:.4}, max variance error {worst_var:.4}"),
    )
}

fn attack_contracts() -> Outcome {
    let world = world();
    let model = &world.classifier;
    let (x, y) = (&world.train_data, &world.train_labels);
    let bounds = x.column_bounds();
    let mut outside = 0;
    let mut increased = 0;
    let mut mismatched = 0;
    for eps in [0.05, 0.2] {
        let f = AttackConfig::fgsm(eps).with_bounds(bounds.clone());
        let p = AttackConfig::pgd(eps).with_bounds(bounds.clone());
        let one = AttackConfig {
            steps: 1,
            step_size: eps,
            ..f.clone()
        };
        for i in 0..x.rows() {
            let xi = x.row(i);
            let a = fgsm(model, xi, y[i], &f).unwrap();
            let b = pgd(model, xi, y[i], &p).unwrap();
            for adv in [&a, &b] {
                if adv.iter().zip(xi).any(|(u, v)| (u - v).abs() > eps) {
                    outside += 1;
                }
            }
            if eps == 0.2 && model.loss(&a, y[i]).unwrap() >= model.loss(xi, y[i]).unwrap() {
                increased += 1;
            }
            let s = pgd(model, xi, y[i], &one).unwrap();
            if !a.iter().zip(&s).all(|(u, v)| u.to_bits() == v.to_bits()) {
                mismatched += 1;
            }
        }
    }
    let frac = increased as f64 / x.rows() as f64;
    outcome(
        outside == 0 && frac >= 0.9 && mismatched == 0,
        format!("{outside} outputs outside the ball, FGSM loss increase on {frac:.3}, {mismatched} single-step PGD mismatches"),
    )
}

fn hsic_ordering() -> Outcome {
    let world = world();
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..SEEDS {
        let (_, dup) = Scenario::NonIid {
            n: 200,
            epsilon: 0.2,
            flavor: NonIidFlavor::B,
        }
        .draw(&world, seed)
        .unwrap();
        let (_, iid) = attacked(200, 0.0).draw(&world, 1000 + seed).unwrap();
        let a = hsic_dependence_protocol(&dup, 50, 20, seed).unwrap();
        let b = hsic_dependence_protocol(&iid, 50, 20, seed).unwrap();
        wins += (a > b) as usize;
        pairs.push(format!("{a:.4}/{b:.4}"));
    }
    outcome(wins >= 9, format!("non-IID (b) above IID on {wins}/10 seeds: {}", pairs.join(" ")))
}

fn cli(args: &[&str], threads: &str) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_sammd"))
        .args(args)
        .env("SAMMD_THREADS", threads)
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let (x, y, model) = (path("x.samf"), path("y.samf"), path("model.json"));
    cli(&["experiment", "gen", "--kind", "noniid-b", "--n", "80", "--seed", "3", "--out-x", &x, "--out-y", &y], "1");
    cli(&["experiment", "gen", "--kind", "classifier", "--seed", "3", "--out-x", &model], "1");
    let features = format!("toy-mlp:{model}");
    let invocations: Vec<Vec<&str>> = vec![
        vec!["test", "--x", &x, "--y", &y, "--method", "sammd", "--features", &features, "--seed", "9"],
        vec!["test", "--x", &x, "--y", &y, "--method", "mmd-g", "--seed", "9"],
        vec!["test", "--x", &x, "--y", &y, "--method", "mmd-o", "--seed", "9"],
        vec!["test", "--x", &x, "--y", &y, "--method", "mmd-o-wb", "--seed", "9", "--l", "2"],
        vec!["experiment", "calibrate", "--method", "mmd-o-wb", "--scenario", "dependent", "--n", "60", "--trials", "8", "--seed", "4"],
        vec!["experiment", "power", "--axis", "epsilon", "--values", "0.1,0.2", "--method", "sammd", "--n", "60", "--trials", "4", "--seed", "4"],
        vec!["experiment", "noniid", "--n", "60", "--trials", "3", "--seed", "4"],
        vec!["experiment", "hsic", "--data", &x, "--data", &y, "--subset-size", "30", "--seed", "4"],
    ];
    let mut differing = Vec::new();
    for args in &invocations {
        if cli(args, "1") != cli(args, "4") {
            differing.push(args[..2].join(" "));
        }
    }
    outcome(
        differing.is_empty(),
        format!("{} invocations compared at 1 and 4 threads; differing: {differing:?}", invocations.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("type-I calibration", calibration),
        ("dependent-data contrast", dependent_contrast),
        ("power ordering", power_ordering),
        ("monotone power curves", monotone_power),
        ("mixture behavior", mixture),
        ("estimator oracles", estimator_oracles),
        ("wild-bootstrap process", wild_process),
        ("attack contracts", attack_contracts),
        ("HSIC ordering", hsic_ordering),
        ("CLI reproducibility", reproducibility),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        failed += !o.pass as usize;
        println!(
            "criterion {id:>2} {} {name}: {} [{:.0}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
