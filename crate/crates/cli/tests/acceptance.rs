//! Acceptance suite: one PASS/FAIL line per criterion, with detail lines
//! below it. Criteria that miss their tolerance are reported, not hidden;
//! the process still exits 0 unless `ACCEPTANCE_STRICT=1` is set.
//!
//! `cargo test --test acceptance -- 3 5` runs only criteria 3 and 5.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use scatchain::ensemble::stream_rng;
use scatchain::fit::{fit_cubic_tail_amplitude, fit_measure_scaling, fit_tail_exponent, linear_fit, ScalingModel};
use scatchain::haar::{adaptive_estimate, measure_tally, scaling_collapse, spectral_survey, AdaptivePlan, HaarSampler, SetId, SpectralSurvey};
use scatchain::multi_channel::{classify, evolve_chain, EvolveOptions, TransientFit, TransportClass, TAU_SPEC};
use scatchain::single_channel::{
    decay_rate_series, discriminant, eigenvalues_1d, fixed_points, gaussian_prediction, integral_f, wrap_pi, Amplitude,
    ChainState1D, DisorderModel, Dist, FixedPointReport, MapKind, SingleChannelParams,
};
use scatchain::stats::{ks_critical, ks_statistic};
use scatchain::{Binning, ScatteringMatrix};
use scatchain_cli::config::*;
use scatchain_cli::{run, Experiment, ExperimentConfig};

struct Report {
    id: u32,
    title: &'static str,
    pass: bool,
    lines: Vec<String>,
}

impl Report {
    fn new(id: u32, title: &'static str) -> Self {
        Self { id, title, pass: true, lines: Vec::new() }
    }

    /// Records a gating sub-check.
    fn check(&mut self, ok: bool, msg: String) {
        self.pass &= ok;
        self.lines.push(format!("[{}] {msg}", if ok { "ok" } else { "miss" }));
    }

    /// Records a non-gating diagnostic.
    fn note(&mut self, msg: String) {
        self.lines.push(format!("[info] {msg}"));
    }
}

fn max_abs_diff(a: &scatchain::linalg::CMat, b: &scatchain::linalg::CMat) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn max_abs(a: &scatchain::linalg::CMat) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn c1_algebra() -> Report {
    let mut r = Report::new(1, "group/conversion algebra");
    for d in [1usize, 2, 4] {
        let (mut hom, mut rt) = (0.0_f64, 0.0_f64);
        let mut sampler = HaarSampler::with_stream(d, 1, 0);
        for _ in 0..1000 {
            let (s1, s2) = (sampler.sample(), sampler.sample());
            let t1 = s1.to_transfer().unwrap();
            let t2 = s2.to_transfer().unwrap();
            let chained = s1.compose(&s2).unwrap().to_transfer().unwrap();
            let product = t2.matrix() * t1.matrix();
            // Transfer entries grow like 1/|t|, so compare relative to their size.
            hom = hom.max(max_abs_diff(chained.matrix(), &product) / max_abs(&product).max(1.0));
            rt = rt.max(max_abs_diff(t1.to_scattering().unwrap().matrix(), s1.matrix()));
        }
        r.check(hom < 1e-10 && rt < 1e-10, format!("d = {d}: homomorphism {hom:.2e}, round trip {rt:.2e} (limit 1e-10)"));
    }
    r
}

fn c2_manifold() -> Report {
    let mut r = Report::new(2, "manifold stability");
    for d in [1usize, 4] {
        for k in 0..3 {
            let gen = HaarSampler::with_stream(d, 2, k).sample();
            let label = classify(&gen, TAU_SPEC).map(|c| format!("{:?}", c.label)).unwrap_or_default();
            match evolve_chain(&gen, 10_000, &EvolveOptions::default()) {
                Ok(t) => {
                    let worst = t.rows.iter().map(|x| x.unitarity_residual).fold(0.0, f64::max);
                    r.check(worst <= 1e-10, format!("d = {d}, generator {k} ({label}): max residual {worst:.2e} over 1e4 steps"));
                    // Growth per decade: linear growth means roundoff accumulating
                    // along a neutral direction, exponential growth would not.
                    let upto = |m: usize| t.rows.iter().filter(|x| x.n <= m).map(|x| x.unitarity_residual).fold(0.0, f64::max);
                    r.note(format!("  max residual up to n = 1e2 / 1e3 / 1e4: {:.1e} / {:.1e} / {:.1e}", upto(100), upto(1000), worst));
                }
                Err(e) => r.check(false, format!("d = {d}, generator {k}: {e}")),
            }
        }
    }
    r
}

fn c3_dichotomy() -> Report {
    let mut r = Report::new(3, "discriminant dichotomy and fixed points");
    let mut rng = stream_rng(3, 0);
    let steps = 10_000;
    let (mut ballistic, mut localised, mut marginal) = (0, 0, 0);
    let mut mispredicted = Vec::new();
    let mut worst_rate: f64 = 0.0;
    let mut worst_fixed: f64 = 0.0;
    for i in 0..1000 {
        let gen = SingleChannelParams::with_lambda(rng.random_range(0.0..1.0), rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)).unwrap();
        let d = discriminant(&gen);
        // Near D = 0 neither behaviour is resolvable in 1e4 steps.
        if d.abs() < 1e-4 {
            marginal += 1;
            continue;
        }
        let mut s = ChainState1D::from_params(&gen);
        let mut half = 0.0;
        let mut min_b = s.b;
        for n in 2..=steps {
            s = s.step(&gen);
            min_b = min_b.min(s.b);
            if n == steps / 2 {
                half = s.log_b;
            }
        }
        let rate = (s.log_b - half) / (steps - steps / 2) as f64;
        let decays = s.log_b < -10.0 && rate < 0.0;
        if d < 0.0 {
            ballistic += 1;
            if decays || min_b <= 0.0 {
                mispredicted.push(i);
            }
            if let Ok(FixedPointReport::Elliptic { a, chi }) = fixed_points(&gen) {
                let p = ChainState1D::from_static(a, chi, &gen).unwrap();
                let q = p.step(&gen);
                worst_fixed = worst_fixed.max((q.a - a).abs()).max(wrap_pi(q.chi(&gen) - chi).abs());
            }
        } else {
            localised += 1;
            if !decays {
                mispredicted.push(i);
            }
            let (k1, _) = eigenvalues_1d(&gen).unwrap();
            worst_rate = worst_rate.max((rate / k1.norm().ln() - 1.0).abs());
        }
    }
    r.check(mispredicted.is_empty(), format!("{ballistic} ballistic, {localised} localised, {marginal} near-marginal skipped; mispredicted {mispredicted:?}"));
    r.check(worst_rate < 0.01, format!("decay rate vs log|kappa_1|: worst relative error {worst_rate:.2e} (limit 1e-2)"));
    r.check(worst_fixed < 1e-12, format!("elliptic point moved by at most {worst_fixed:.2e} (limit 1e-12)"));
    r
}

fn c4_integral() -> Report {
    let mut r = Report::new(4, "integral of motion");
    let gen = SingleChannelParams::with_lambda(0.5, 0.628319, 0.0).unwrap();
    let mut worst: f64 = 0.0;
    for (a, chi) in [(0.1, 0.0), (0.3, 1.0), (0.5, -2.0), (0.7, 2.5), (0.9, 0.3)] {
        let mut s = ChainState1D::from_static(a, chi, &gen).unwrap();
        let f1 = integral_f(&s, &gen).unwrap();
        for _ in 0..10_000 {
            s = s.step(&gen);
            worst = worst.max((integral_f(&s, &gen).unwrap() - f1).abs());
        }
    }
    r.check(worst < 1e-10, format!("max |F_n - F_1| = {worst:.2e} over 5 orbits x 1e4 steps (limit 1e-10)"));
    r
}

fn strong_model(alpha: Dist, lambda: f64, seed: u64) -> DisorderModel {
    DisorderModel::new(Amplitude::B(Dist::Uniform { lo: 0.0, hi: 1.0 }), Dist::Const { value: lambda }, alpha, seed).unwrap()
}

fn c5_decay_histograms() -> Report {
    let mut r = Report::new(5, "decay-rate distribution at n = 100");
    let n = 100;
    let cases = [
        ("uniform alpha_L", Dist::Uniform { lo: 0.0, hi: TAU }, PI / 10.0, -1.0, 0.02, 1.4674, true),
        ("alpha_L in [0.5, 0.7]", Dist::Uniform { lo: 0.5, hi: 0.7 }, PI / 10.0, -1.56325, 0.03, 1.19556, true),
        ("alpha_L in [0.5, 0.7], lambda = 0.1", Dist::Uniform { lo: 0.5, hi: 0.7 }, 0.1, -1.56325, 0.03, 1.19556, false),
    ];
    for (name, alpha, lambda, mean_target, mean_tol, var_target, gating) in cases {
        let model = strong_model(alpha, lambda, 5);
        let ens = decay_rate_series(&model, n, 10_000, MapKind::Full, 0).unwrap();
        let m = ens.moments();
        let sigma2 = n as f64 * m.variance();
        let pred = gaussian_prediction(&model, 1000, 1_000_000).unwrap();
        let ks = ks_statistic(&ens.values(), |x| pred.cdf(n, x));
        let crit = ks_critical(0.01, 10_000);
        let lines = [
            (
                (m.mean - mean_target).abs() <= mean_tol,
                format!("{name}: mean {:.4} vs {mean_target} +- {mean_tol} (prediction {:.4} +- {:.4})", m.mean, pred.mean, pred.mean_se),
            ),
            (
                (sigma2 / var_target - 1.0).abs() <= 0.1,
                format!("{name}: sigma^2 {sigma2:.4} vs {var_target} +- 10% (prediction {:.4})", pred.variance),
            ),
            (ks < crit, format!("{name}: KS distance to the predicted Gaussian {ks:.4} vs 1% critical {crit:.4}")),
        ];
        for (ok, msg) in lines {
            if gating {
                r.check(ok, msg);
            } else {
                r.note(format!("{} {msg}", if ok { "within" } else { "outside" }));
            }
        }
        r.note(format!("{name}: skewness {:.3} +- {:.3}", m.skewness(), m.skewness_stderr()));
    }
    r
}

fn c6_single_channel_measure() -> Report {
    let mut r = Report::new(6, "ballistic measure at d = 1");
    let t = measure_tally(1, 100_000, 6, 0).unwrap();
    let e = t.estimate(SetId::Ballistic);
    r.check((e.estimate - 0.5).abs() <= 0.005, format!("mu(M_b) = {:.5} [{:.5}, {:.5}] vs 0.500 +- 0.005", e.estimate, e.ci_lo, e.ci_hi));
    r
}

fn c7_measure_fits() -> Report {
    let mut r = Report::new(7, "measure scaling fits");
    let mut ballistic = Vec::new();
    for d in 1..=4usize {
        let (e, t) = adaptive_estimate(d, SetId::Ballistic, &AdaptivePlan::default(), 70 + d as u64, 0).unwrap();
        r.note(format!(
            "M_b d = {d}: {:.4e} [{:.4e}, {:.4e}] from {} samples{}",
            e.estimate,
            e.ci_lo,
            e.ci_hi,
            t.n_samples,
            if e.upper_bound { " (upper bound)" } else { "" }
        ));
        ballistic.push(e);
    }
    let mut total = Vec::new();
    for d in [1usize, 2, 4, 8, 16] {
        let e = measure_tally(d, 100_000, 700 + d as u64, 0).unwrap().estimate(SetId::TotallyLocalised);
        r.note(format!("M_l* d = {d}: {:.4e} [{:.4e}, {:.4e}]", e.estimate, e.ci_lo, e.ci_hi));
        total.push(e);
    }
    let fb = fit_measure_scaling(&ballistic, ScalingModel::Ballistic).unwrap();
    let ft = fit_measure_scaling(&total, ScalingModel::TotallyLocalised).unwrap();
    let (omega, zeta) = (fb.param("omega"), ft.param("zeta"));
    r.check((omega / 0.4658 - 1.0).abs() <= 0.1, format!("omega = {omega:.4} +- {:.4} vs 0.4658 +- 10%", fb.stderr["omega"]));
    r.check((zeta / 1.034 - 1.0).abs() <= 0.1, format!("zeta = {zeta:.4} +- {:.4} vs 1.034 +- 10%", ft.stderr["zeta"]));
    r.note(format!("prefactors: Omega = {:.4}, Z = {:.4}", fb.param("Omega"), ft.param("Z")));
    r
}

fn scaled(s: &SpectralSurvey) -> Vec<f64> {
    let k = (s.d as f64).sqrt();
    s.samples.iter().filter(|x| x.d_u > 0).map(|x| x.max_abs / k).collect()
}

fn c8_spectral_distributions() -> Report {
    let mut r = Report::new(8, "largest-modulus distribution");
    let surveys: BTreeMap<usize, SpectralSurvey> =
        [2usize, 4, 8].into_iter().map(|d| (d, spectral_survey(d, 100_000, 800 + d as u64, 0).unwrap())).collect();
    for (d, s) in &surveys {
        let f = fit_tail_exponent(&scaled(s), s.samples.len(), 3.0, 30.0, 12).unwrap();
        let x = f.param("exponent");
        r.check((x + 3.0).abs() <= 0.3, format!("d = {d}: tail exponent {x:.3} +- {:.3} vs -3 +- 0.3", f.stderr["exponent"]));
    }
    let s8 = &surveys[&8];
    let a = fit_cubic_tail_amplitude(&scaled(s8), s8.samples.len(), 3.0, 30.0).unwrap();
    r.check((a.param("a") - 4.0).abs() <= 0.3, format!("d = 8: scaled tail amplitude {:.3} +- {:.3} vs 4.0 +- 0.3", a.param("a"), a.stderr["a"]));

    let refs: Vec<&SpectralSurvey> = surveys.values().collect();
    let c = scaling_collapse(&refs, &Binning::Log { lo: 0.3, hi: 30.0, bins: 40 }).unwrap();
    let sups: Vec<f64> = c.sup_distances.iter().map(|x| x.2).collect();
    r.check(sups.windows(2).all(|w| w[1] < w[0]), format!("collapse sup-distances (2,4), (4,8): {sups:.4?}"));

    let s16 = spectral_survey(16, 20_000, 816, 0).unwrap();
    let pts = [(4.0_f64, surveys[&4].median_log_max()), (8.0, surveys[&8].median_log_max()), (16.0, s16.median_log_max())];
    let fit = linear_fit(&pts.map(|p| p.0.ln()), &pts.map(|p| p.1)).unwrap();
    r.check(
        (fit.slope / 0.5 - 1.0).abs() <= 0.15,
        format!("median log max|kappa| vs log d: slope {:.3} vs 0.5 +- 15% (medians {:.3?})", fit.slope, pts.map(|p| p.1)),
    );
    r
}

fn c9_plateau() -> Report {
    let mut r = Report::new(9, "plateau law at d = 3");
    let (mut used, mut k) = (0, 0u64);
    let (mut banded, mut beta_max, mut beta_min) = (0, 0, 0);
    let mut misses = Vec::new();
    while used < 100 {
        let s: ScatteringMatrix = HaarSampler::with_stream(3, 9, k).sample();
        k += 1;
        let Ok(c) = classify(&s, TAU_SPEC) else { continue };
        if c.label != TransportClass::PartiallyLocalised {
            continue;
        }
        used += 1;
        // Long enough for the slowest transient to fall far below 1e-6
        // before the last quarter of the trace.
        let n_max = ((40.0 / c.slowest_decay_rate).ceil() as usize).clamp(200, 100_000);
        let t = match evolve_chain(&s, n_max, &EvolveOptions::default()) {
            Ok(t) => t,
            Err(e) => {
                misses.push(format!("sample {k}: {e}"));
                continue;
            }
        };
        let in_band = t.plateau.is_some_and(|p| p.max_deviation < 1e-6);
        banded += in_band as usize;
        if let Some(f) = t.fit {
            let ok = TransientFit::beta_class(f.beta_vs_max).is_some();
            beta_max += ok as usize;
            beta_min += TransientFit::beta_class(f.beta_vs_min).is_some() as usize;
            if !ok && misses.len() < 5 {
                misses.push(format!("d_u = {}: rate {:.4}, I = {:.4}, log min|kappa| = {:.4}", c.d_u, f.rate, c.decay_rate, c.slowest_decay_rate));
            }
        }
    }
    r.check(banded == 100, format!("{banded}/100 traces settle within 1e-6 of the plateau over the last quarter"));
    r.check(beta_max == 100, format!("{beta_max}/100 fitted rates within 20% of beta I, beta in {{1, 2}}, I = log max|kappa|"));
    for m in misses {
        r.note(format!("example miss: {m}"));
    }
    r.note(format!("{beta_min}/100 fitted rates within 20% of beta log min|kappa| over the outside eigenvalues"));
    r
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn c10_reproducibility() -> Report {
    let mut r = Report::new(10, "reproducible artifacts");
    let tmp = tempfile::tempdir().unwrap();
    for name in EXPERIMENTS {
        let mut ex = Experiment::default_for(name).unwrap();
        match &mut ex {
            Experiment::DecayHist(p) => p.ensemble = 3000,
            Experiment::Measure(p) => {
                p.ballistic.truncate(2);
                p.total_localised = vec![ChannelPlan { d: 2, samples: Samples::Fixed(5000) }];
            }
            Experiment::Pmax(p) => p.samples = 5000,
            Experiment::Pu(p) => p.samples = 5000,
            Experiment::Collapse(p) => p.samples = 5000,
            Experiment::Fit(p) => p.inputs = vec![tmp.path().join("measure-1/measure.csv")],
            _ => {}
        }
        let cfg = ExperimentConfig { experiment: ex, seed: 10, parallel: Some(1), out: None };
        let mut outputs = Vec::new();
        for (i, threads) in [(1, 1), (2, 1), (3, 4)] {
            let dir = tmp.path().join(format!("{name}-{i}"));
            if let Err(e) = run(&ExperimentConfig { parallel: Some(threads), ..cfg.clone() }, &dir) {
                r.check(false, format!("{name}: {e}"));
            }
            outputs.push(dir_bytes(&dir));
        }
        let same = outputs[0] == outputs[1] && outputs[0] == outputs[2];
        r.check(same && !outputs[0].is_empty(), format!("{name}: {} artifacts identical across rerun and 1 vs 4 threads", outputs[0].len()));
    }
    r
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(u32, fn() -> Report); 10] = [
        (1, c1_algebra),
        (2, c2_manifold),
        (3, c3_dichotomy),
        (4, c4_integral),
        (5, c5_decay_histograms),
        (6, c6_single_channel_measure),
        (7, c7_measure_fits),
        (8, c8_spectral_distributions),
        (9, c9_plateau),
        (10, c10_reproducibility),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (id, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let rep = f();
        ran += 1;
        failed += !rep.pass as usize;
        println!("{} {:>2} {} ({:.1}s)", if rep.pass { "PASS" } else { "FAIL" }, rep.id, rep.title, start.elapsed().as_secs_f64());
        for l in &rep.lines {
            println!("        {l}");
        }
    }
    println!("acceptance: {}/{ran} criteria pass", ran - failed);
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
