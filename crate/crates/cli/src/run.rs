//! One runner per experiment. Each writes its artifacts and returns the
//! checks that `--check` enforces.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use scatchain::ensemble::{derive_seed, stream_rng};
use scatchain::fit::{fit_cubic_tail_amplitude, fit_measure_scaling, fit_tail_exponent, FitResult, ScalingModel};
use scatchain::haar::{adaptive_estimate, measure_tally, spectral_survey, HaarSampler, MeasureEstimate, SetId, SpectralSurvey};
use scatchain::multi_channel::{
    classify, eigenvector_structure, evolve_chain, EvolveOptions, ModeReport, TransientFit, TransportClass, TAU_SPEC,
};
use scatchain::single_channel::{
    decay_rate_series, discriminant, fixed_points, gaussian_prediction, integral_f, wrap_pi, Amplitude, ChainState1D,
    DisorderModel, FixedPointReport, SingleChannelParams,
};
use scatchain::smatrix::ScatteringMatrix;
use scatchain::stats::{ks_critical, ks_statistic, HistRow};
use scatchain::{EnsembleStats, SpectralClassification};
use serde::Serialize;

use crate::artifact::{fmt_f64, ArtifactWriter};
use crate::config::*;
use crate::error::{CliError, CliResult};

/// One acceptance assertion of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), pass, detail: detail.into() }
    }
}

#[derive(Debug, Default)]
pub struct RunSummary {
    pub artifacts: Vec<PathBuf>,
    pub checks: Vec<Check>,
    pub notices: Vec<String>,
}

impl RunSummary {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Seed-stream tags of the Haar sub-experiments, offset by `d`.
const TAG_BALLISTIC: u64 = 1 << 32;
const TAG_TOTAL: u64 = 2 << 32;
const TAG_SURVEY: u64 = 3 << 32;

struct Ctx {
    w: ArtifactWriter,
    checks: Vec<Check>,
    notices: Vec<String>,
    seed: u64,
    threads: usize,
}

impl Ctx {
    fn notice(&mut self, msg: String) {
        log::warn!("{msg}");
        self.notices.push(msg);
    }
}

/// Runs `cfg` and writes its artifacts into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> CliResult<RunSummary> {
    cfg.validate()?;
    let w = ArtifactWriter::create(out, cfg)?;
    let mut ctx = Ctx { w, checks: Vec::new(), notices: Vec::new(), seed: cfg.seed, threads: cfg.threads() };
    match &cfg.experiment {
        Experiment::Portrait(p) => portrait(&mut ctx, p)?,
        Experiment::NoisyPortrait(p) => noisy_portrait(&mut ctx, p)?,
        Experiment::DecayHist(p) => decay_hist(&mut ctx, p)?,
        Experiment::Evolve(p) => evolve(&mut ctx, p)?,
        Experiment::Classify(p) => classify_all(&mut ctx, p)?,
        Experiment::Measure(p) => measure(&mut ctx, p)?,
        Experiment::Pmax(p) => pmax(&mut ctx, p)?,
        Experiment::Pu(p) => pu(&mut ctx, p)?,
        Experiment::Collapse(p) => collapse(&mut ctx, p)?,
        Experiment::Fit(p) => refit(&mut ctx, p)?,
    }
    let checks = ctx.checks.clone();
    ctx.w.json("checks.json", &checks)?;
    Ok(RunSummary { artifacts: ctx.w.into_written(), checks: ctx.checks, notices: ctx.notices })
}

fn hist_rows(h: &EnsembleStats) -> Vec<Vec<String>> {
    h.rows()
        .iter()
        .map(|r: &HistRow| vec![fmt_f64(r.bin_lo), fmt_f64(r.bin_hi), r.count.to_string(), fmt_f64(r.density)])
        .collect()
}

const HIST_HEADER: [&str; 4] = ["bin_lo", "bin_hi", "count", "density"];

#[derive(Serialize)]
struct OrbitSummary {
    orbit: usize,
    a_max: f64,
    a_final: f64,
    chi_final: f64,
    /// `max |F_n - F_1|`, absent when `F` is undefined on the orbit.
    f_drift: Option<f64>,
}

#[derive(Serialize)]
struct PortraitReport {
    discriminant: f64,
    ballistic: bool,
    fixed_point: FixedPointReport,
    orbits: Vec<OrbitSummary>,
}

fn portrait(ctx: &mut Ctx, p: &PortraitParams) -> CliResult<()> {
    let gen = SingleChannelParams::with_lambda(p.a, p.lambda, p.alpha_l)?;
    let d = discriminant(&gen);
    let fixed = fixed_points(&gen)?;
    let mut rows = Vec::with_capacity(p.initial.len() * p.steps);
    let mut orbits = Vec::new();
    for (i, ic) in p.initial.iter().enumerate() {
        let mut s = ChainState1D::from_static(ic.a, ic.chi, &gen)?;
        let f1 = integral_f(&s, &gen).ok();
        let mut a_max: f64 = 0.0;
        let mut f_drift: Option<f64> = f1.map(|_| 0.0);
        for n in 1..=p.steps {
            if n > 1 {
                s = s.step(&gen);
            }
            a_max = a_max.max(s.a);
            if let (Some(f1), Some(drift)) = (f1, f_drift.as_mut()) {
                match integral_f(&s, &gen) {
                    Ok(f) => *drift = drift.max((f - f1).abs()),
                    Err(_) => f_drift = None,
                }
            }
            rows.push(vec![i.to_string(), n.to_string(), fmt_f64(s.a), fmt_f64(wrap_pi(s.chi(&gen)))]);
        }
        orbits.push(OrbitSummary { orbit: i, a_max, a_final: s.a, chi_final: wrap_pi(s.chi(&gen)), f_drift });
    }
    ctx.w.csv("orbits.csv", &["orbit", "n", "A", "chi"], rows)?;

    match fixed {
        FixedPointReport::Elliptic { .. } => {
            for o in &orbits {
                ctx.checks.push(Check::new(format!("orbit {} bounded", o.orbit), o.a_max < 1.0, format!("max A = {}", o.a_max)));
                if let Some(drift) = o.f_drift {
                    ctx.checks.push(Check::new(format!("orbit {} conserves F", o.orbit), drift < 1e-10, format!("max |F_n - F_1| = {drift:e}")));
                }
            }
        }
        FixedPointReport::Attractor { chi, .. } => {
            for o in &orbits {
                let miss = (1.0 - o.a_final).max(wrap_pi(o.chi_final - chi).abs());
                ctx.checks.push(Check::new(format!("orbit {} reaches attractor", o.orbit), miss < 1e-6, format!("distance {miss:e}")));
            }
        }
    }
    ctx.w.json("fixed_point.json", &PortraitReport { discriminant: d, ballistic: d < 0.0, fixed_point: fixed, orbits })
}

/// Static generator at the centre of the model's parameter ranges.
fn centre_generator(m: &DisorderModel) -> CliResult<SingleChannelParams> {
    let mid = |(lo, hi): (f64, f64)| 0.5 * (lo + hi);
    let a = match m.amplitude {
        Amplitude::A(d) => mid(d.bounds()),
        Amplitude::B(d) => (1.0 - mid(d.bounds()).powi(2)).max(0.0).sqrt(),
    };
    Ok(SingleChannelParams::with_lambda(a, mid(m.lambda.bounds()), mid(m.alpha_l.bounds()))?)
}

fn model_with_seed(m: &DisorderModel, seed: u64) -> DisorderModel {
    DisorderModel { seed, ..*m }
}

#[derive(Serialize)]
struct NoisyOrbit {
    orbit: usize,
    b_min: f64,
    f_drift: Option<f64>,
}

#[derive(Serialize)]
struct NoisyReport {
    reference_discriminant: f64,
    orbits: Vec<NoisyOrbit>,
}

fn noisy_portrait(ctx: &mut Ctx, p: &NoisyPortraitParams) -> CliResult<()> {
    let model = model_with_seed(&p.model, ctx.seed);
    let reference = centre_generator(&model)?;
    let d_ref = discriminant(&reference);
    let mut rows = Vec::with_capacity(p.initial.len() * p.steps);
    let mut orbits = Vec::new();
    for (i, ic) in p.initial.iter().enumerate() {
        let mut rng = stream_rng(model.seed, i as u64);
        let mut s = ChainState1D::from_static(ic.a, ic.chi, &reference)?;
        let f1 = integral_f(&s, &reference).ok();
        let mut b_min = f64::INFINITY;
        let mut f_drift = f1.map(|_| 0.0_f64);
        for n in 1..=p.steps {
            if n > 1 {
                s = s.step(&model.sample_generator(&mut rng));
            }
            b_min = b_min.min(s.b);
            let f = integral_f(&s, &reference).ok();
            if let (Some(f1), Some(f), Some(drift)) = (f1, f, f_drift.as_mut()) {
                *drift = drift.max((f - f1).abs());
            }
            rows.push(vec![
                i.to_string(),
                n.to_string(),
                fmt_f64(s.a),
                fmt_f64(wrap_pi(s.phi)),
                fmt_f64(s.b),
                f.map(fmt_f64).unwrap_or_default(),
            ]);
        }
        if d_ref < 0.0 {
            ctx.checks.push(Check::new(format!("orbit {i} not localised"), b_min > 1e-3, format!("min B = {b_min}")));
        }
        orbits.push(NoisyOrbit { orbit: i, b_min, f_drift });
    }
    ctx.w.csv("noisy_orbits.csv", &["orbit", "n", "A", "phi", "B", "F_ref"], rows)?;
    ctx.w.json("noisy_report.json", &NoisyReport { reference_discriminant: d_ref, orbits })
}

#[derive(Serialize)]
struct SampleMoments {
    mean: f64,
    variance: f64,
    /// `n` times the variance of `I_n`, comparable with the one-step variance.
    sigma2: f64,
    skewness: f64,
    skewness_se: f64,
    finite: u64,
}

#[derive(Serialize)]
struct PredictionSummary {
    mean: f64,
    variance: f64,
    mean_se: f64,
    variance_se: f64,
    chain_means: [f64; 2],
}

#[derive(Serialize)]
struct KsReport {
    statistic: f64,
    critical_1pct: f64,
}

#[derive(Serialize)]
struct DecayReport {
    n: usize,
    ensemble: usize,
    degenerate: bool,
    sample: Option<SampleMoments>,
    prediction: Option<PredictionSummary>,
    ks: Option<KsReport>,
    notices: Vec<String>,
}

fn decay_hist(ctx: &mut Ctx, p: &DecayHistParams) -> CliResult<()> {
    let model = model_with_seed(&p.model, ctx.seed);
    let mut notices = Vec::new();
    if p.n < 50 {
        notices.push(format!("n = {} is short; I_n is far from its Gaussian limit", p.n));
    }
    let ens = decay_rate_series(&model, p.n, p.ensemble, p.map, ctx.threads)?;
    let nf = p.n as f64;
    ctx.w.csv(
        "ensemble.csv",
        &["n", "chain_id", "B_n", "I_n"],
        ens.samples.iter().map(|s| vec![p.n.to_string(), s.chain_id.to_string(), fmt_f64(s.log_b.exp()), fmt_f64(s.i_n)]),
    )?;
    let hist = ens.histogram(&p.bins)?;
    ctx.w.csv("histogram.csv", &HIST_HEADER, hist_rows(&hist))?;

    let m = ens.moments();
    let sample = (m.n >= 2).then(|| SampleMoments {
        mean: m.mean,
        variance: m.variance(),
        sigma2: nf * m.variance(),
        skewness: m.skewness(),
        skewness_se: m.skewness_stderr(),
        finite: m.n,
    });
    if p.ensemble == 1 {
        notices.push("ensemble of one chain: no distribution comparison".to_string());
    }

    let prediction = if ens.degenerate {
        notices.push("degenerate model: every I_n is -inf, no prediction".to_string());
        None
    } else {
        Some(gaussian_prediction(&model, p.burn_in, p.prediction_samples)?)
    };
    let mut ks = None;
    if let Some(pred) = &prediction {
        let sd = (pred.variance / nf).sqrt();
        let curve: Vec<Vec<String>> = hist.rows().iter().map(|r| {
            let x = 0.5 * (r.bin_lo + r.bin_hi);
            let z = (x - pred.mean) / sd;
            let pdf = (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
            vec![fmt_f64(x), fmt_f64(pdf), fmt_f64(pred.cdf(p.n, x))]
        }).collect();
        ctx.w.csv("prediction.csv", &["x", "density", "cdf"], curve)?;
        ctx.w.csv("phi_density.csv", &HIST_HEADER, hist_rows(&pred.phi_density))?;
        if p.ensemble > 1 {
            let stat = ks_statistic(&ens.values(), |x| pred.cdf(p.n, x));
            let crit = ks_critical(0.01, p.ensemble);
            ctx.checks.push(Check::new("ks below 1% critical value", stat < crit, format!("D = {stat}, critical {crit}")));
            ks = Some(KsReport { statistic: stat, critical_1pct: crit });
        }
        if let Some(s) = &sample {
            let se = (s.variance / s.finite as f64 + pred.mean_se.powi(2)).sqrt();
            ctx.checks.push(Check::new(
                "mean agrees with prediction",
                (s.mean - pred.mean).abs() < 3.0 * se,
                format!("{} vs {} (3 se = {})", s.mean, pred.mean, 3.0 * se),
            ));
            let ratio = s.sigma2 / pred.variance;
            ctx.checks.push(Check::new("sigma2 agrees with prediction", (ratio - 1.0).abs() < 0.1, format!("ratio {ratio}")));
        }
    }
    if let Some(s) = &sample {
        ctx.checks.push(Check::new(
            "skewness within 3 se of 0",
            s.skewness.abs() < 3.0 * s.skewness_se,
            format!("{} +- {}", s.skewness, s.skewness_se),
        ));
        if let Some(e) = &p.expect {
            ctx.checks.push(Check::new("expected mean", (s.mean - e.mean).abs() <= e.mean_tol, format!("{} vs {} +- {}", s.mean, e.mean, e.mean_tol)));
            let rel = s.sigma2 / e.sigma2 - 1.0;
            ctx.checks.push(Check::new("expected sigma2", rel.abs() <= e.sigma2_tol, format!("{} vs {} (rel {rel})", s.sigma2, e.sigma2)));
        }
    }
    for n in &notices {
        log::warn!("{n}");
    }
    ctx.notices.extend(notices.iter().cloned());
    let prediction = prediction.map(|q| PredictionSummary {
        mean: q.mean,
        variance: q.variance,
        mean_se: q.mean_se,
        variance_se: q.variance_se,
        chain_means: q.chain_means,
    });
    ctx.w.json("report.json", &DecayReport { n: p.n, ensemble: p.ensemble, degenerate: ens.degenerate, sample, prediction, ks, notices })
}

/// Materialises a generator spec into labelled matrices.
pub fn load_generators(spec: &GeneratorSpec, seed: u64) -> CliResult<Vec<(String, ScatteringMatrix)>> {
    Ok(match spec {
        GeneratorSpec::File { path } => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            vec![(path.display().to_string(), ScatteringMatrix::from_json_str(&text)?.matrix)]
        }
        GeneratorSpec::Matrix { matrix } => {
            let text = serde_json::to_string(matrix).expect("matrix serialises");
            vec![("inline".to_string(), ScatteringMatrix::from_json_str(&text)?.matrix)]
        }
        GeneratorSpec::Haar { d, index, count } => (*index..index + count)
            .map(|k| (format!("haar d={d} index={k}"), HaarSampler::with_stream(*d, seed, k).sample()))
            .collect(),
        GeneratorSpec::SingleChannel { a, lambda, alpha_l } => {
            vec![("single_channel".to_string(), SingleChannelParams::with_lambda(*a, *lambda, *alpha_l)?.to_smatrix())]
        }
    })
}

#[derive(Serialize)]
struct EvolveReport {
    classification: Option<SpectralClassification>,
    plateau: Option<scatchain::multi_channel::PlateauEstimate>,
    fit: Option<TransientFit>,
    beta: Option<u8>,
    min_transmission: f64,
    max_unitarity_residual: f64,
}

fn evolve(ctx: &mut Ctx, p: &EvolveParams) -> CliResult<()> {
    let mut gens = load_generators(&p.generator, ctx.seed)?;
    if gens.len() != 1 {
        return Err(CliError::Config("experiment.generator: evolve takes exactly one generator".into()));
    }
    let (_, gen) = gens.remove(0);
    let trace = evolve_chain(&gen, p.n_max, &EvolveOptions { initial: None, policy: p.reunitarize })?;
    ctx.w.csv(
        "trace.csv",
        &["n", "T_n", "R_n", "unitarity_residual"],
        trace.rows.iter().map(|r| vec![r.n.to_string(), fmt_f64(r.t), fmt_f64(r.r), fmt_f64(r.unitarity_residual)]),
    )?;
    if let Some(t0) = &trace.plateau_series {
        ctx.w.csv("plateau.csv", &["n", "T0_n"], trace.rows.iter().zip(t0).map(|(r, v)| vec![r.n.to_string(), fmt_f64(*v)]))?;
    }
    let max_res = trace.rows.iter().map(|r| r.unitarity_residual).fold(0.0, f64::max);
    let beta = trace.fit.and_then(|f| TransientFit::beta_class(f.beta_vs_max));
    match trace.classification.as_ref().map(|c| c.label) {
        Some(TransportClass::Ballistic) => {
            ctx.checks.push(Check::new("transmission bounded away from 0", trace.min_transmission > 0.0, format!("min T = {}", trace.min_transmission)));
            ctx.checks.push(Check::new("no unitarity drift", max_res <= 1e-10, format!("max residual {max_res:e}")));
        }
        Some(label) => {
            let detail = trace.fit.map_or("no fit".to_string(), |f| format!("rate {} = {} I", f.rate, f.beta_vs_max));
            ctx.checks.push(Check::new("decay exponent is beta I", beta.is_some(), detail));
            if label == TransportClass::PartiallyLocalised {
                ctx.checks.push(Check::new("plateau reached", trace.plateau.is_some(), format!("{:?}", trace.plateau)));
            }
        }
        None => ctx.notice("generator has no transfer matrix; no classification".to_string()),
    }
    ctx.w.json(
        "report.json",
        &EvolveReport {
            classification: trace.classification.clone(),
            plateau: trace.plateau,
            fit: trace.fit,
            beta,
            min_transmission: trace.min_transmission,
            max_unitarity_residual: max_res,
        },
    )
}

#[derive(Serialize)]
struct Classified {
    source: String,
    classification: SpectralClassification,
    modes: Option<Vec<ModeReport>>,
}

fn classify_all(ctx: &mut Ctx, p: &ClassifyParams) -> CliResult<()> {
    let mut out = Vec::new();
    for spec in &p.generators {
        for (source, s) in load_generators(spec, ctx.seed)? {
            let classification = classify(&s, TAU_SPEC)?;
            let modes = match eigenvector_structure(&s, TAU_SPEC) {
                Ok(es) => Some(es.modes),
                Err(e) => {
                    ctx.notice(format!("{source}: no eigenvector structure ({e})"));
                    None
                }
            };
            let pair = classification.pairing_defect;
            ctx.checks.push(Check::new(format!("{source}: spectrum paired"), pair < 1e-9, format!("defect {pair:e}")));
            if let Some(modes) = &modes {
                let worst = modes.iter().filter(|m| m.outside).map(|m| m.k_form.abs()).fold(0.0, f64::max);
                ctx.checks.push(Check::new(format!("{source}: outside modes K-null"), worst < 1e-9, format!("max |v'Kv| {worst:e}")));
            }
            out.push(Classified { source, classification, modes });
        }
    }
    ctx.w.json("classification.json", &out)
}

const MEASURE_HEADER: [&str; 8] = ["d", "set", "n_samples", "hits", "estimate", "ci_lo", "ci_hi", "upper_bound"];

fn measure_row(e: &MeasureEstimate) -> Vec<String> {
    vec![
        e.d.to_string(),
        e.set.name().to_string(),
        e.n_samples.to_string(),
        e.hits.to_string(),
        fmt_f64(e.estimate),
        fmt_f64(e.ci_lo),
        fmt_f64(e.ci_hi),
        e.upper_bound.to_string(),
    ]
}

#[derive(Serialize, Default)]
struct Fits {
    ballistic: Option<FitResult>,
    total_localised: Option<FitResult>,
    notes: Vec<String>,
}

/// Fits both scaling laws where enough channel numbers are available and
/// checks them against `expect`.
fn fit_both(ctx: &mut Ctx, ballistic: &[MeasureEstimate], total: &[MeasureEstimate], expect: Option<&MeasureExpect>) -> Fits {
    let mut fits = Fits::default();
    for (model, points) in [(ScalingModel::Ballistic, ballistic), (ScalingModel::TotallyLocalised, total)] {
        let name = match model {
            ScalingModel::Ballistic => "ballistic",
            ScalingModel::TotallyLocalised => "total_localised",
        };
        if points.is_empty() {
            continue;
        }
        let result = if points.len() < 3 {
            Err(format!("{name} fit skipped: {} channel number(s), at least 3 needed", points.len()))
        } else {
            fit_measure_scaling(points, model).map_err(|e| format!("{name} fit skipped: {e}"))
        };
        match result {
            Ok(f) => {
                let (rate, target) = match model {
                    ScalingModel::Ballistic => ("omega", expect.and_then(|e| e.omega)),
                    ScalingModel::TotallyLocalised => ("zeta", expect.and_then(|e| e.zeta)),
                };
                if let (Some(target), Some(e)) = (target, expect) {
                    let rel = f.param(rate) / target - 1.0;
                    ctx.checks.push(Check::new(format!("{rate} within tolerance"), rel.abs() <= e.rel_tol, format!("{} vs {target} (rel {rel})", f.param(rate))));
                }
                match model {
                    ScalingModel::Ballistic => fits.ballistic = Some(f),
                    ScalingModel::TotallyLocalised => fits.total_localised = Some(f),
                }
            }
            Err(msg) => {
                ctx.notice(msg.clone());
                fits.notes.push(msg);
            }
        }
    }
    fits
}

#[derive(Serialize)]
struct Diagnostics {
    section: &'static str,
    d: usize,
    redraws: u64,
    marginal: u64,
}

fn measure(ctx: &mut Ctx, p: &MeasureParams) -> CliResult<()> {
    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    let mut ballistic = Vec::new();
    let mut total = Vec::new();
    for (section, set, tag, plans) in [
        ("ballistic", SetId::Ballistic, TAG_BALLISTIC, &p.ballistic),
        ("total_localised", SetId::TotallyLocalised, TAG_TOTAL, &p.total_localised),
    ] {
        for plan in plans.iter() {
            let seed = derive_seed(ctx.seed, tag + plan.d as u64);
            let (est, tally) = match plan.samples {
                Samples::Fixed(n) => {
                    let t = measure_tally(plan.d, n, seed, ctx.threads)?;
                    (t.estimate(set), t)
                }
                Samples::Adaptive { adaptive } => adaptive_estimate(plan.d, set, &adaptive, seed, ctx.threads)?,
            };
            if est.upper_bound {
                ctx.notice(format!("d = {}: {} hit the sample cap; reported as an upper bound", plan.d, set.name()));
            }
            rows.push(measure_row(&est));
            if set == SetId::Ballistic {
                rows.push(measure_row(&tally.estimate(SetId::Localised)));
                ballistic.push(est);
            } else {
                total.push(est);
            }
            diagnostics.push(Diagnostics { section, d: plan.d, redraws: tally.redraws, marginal: tally.marginal });
        }
    }
    ctx.w.csv("measure.csv", &MEASURE_HEADER, rows)?;
    let fits = fit_both(ctx, &ballistic, &total, p.expect.as_ref());
    ctx.w.json("fits.json", &fits)?;
    ctx.w.json("diagnostics.json", &diagnostics)
}

fn survey(ctx: &Ctx, d: usize, samples: usize) -> CliResult<SpectralSurvey> {
    Ok(spectral_survey(d, samples, derive_seed(ctx.seed, TAG_SURVEY + d as u64), ctx.threads)?)
}

/// Localised maxima in the scaled variable `max|kappa| / sqrt(d)`.
fn scaled_maxima(s: &SpectralSurvey) -> Vec<f64> {
    let scale = (s.d as f64).sqrt();
    s.samples.iter().filter(|x| x.d_u > 0).map(|x| x.max_abs / scale).collect()
}

#[derive(Serialize)]
struct PmaxEntry {
    d: usize,
    samples: usize,
    point_mass: f64,
    below: u64,
    above: u64,
    median_log_max: f64,
    redraws: u64,
    tail_exponent: Option<FitResult>,
    tail_amplitude: Option<FitResult>,
}

fn pmax(ctx: &mut Ctx, p: &PmaxParams) -> CliResult<()> {
    let mut entries = Vec::new();
    for &d in &p.channels {
        let s = survey(ctx, d, p.samples)?;
        let h = s.pmax(&p.bins)?;
        ctx.w.csv(&format!("pmax_d{d}.csv"), &HIST_HEADER, hist_rows(&h))?;
        let scaled = scaled_maxima(&s);
        let exponent = fit_tail_exponent(&scaled, s.samples.len(), p.tail.lo, p.tail.hi, p.tail.bins);
        let amplitude = fit_cubic_tail_amplitude(&scaled, s.samples.len(), p.tail.lo, p.tail.hi);
        match &exponent {
            Ok(f) => {
                let x = f.param("exponent");
                ctx.checks.push(Check::new(format!("d = {d}: tail exponent -3"), (x + 3.0).abs() <= p.exponent_tol, format!("{x} +- {}", f.stderr["exponent"])));
            }
            Err(e) => {
                ctx.checks.push(Check::new(format!("d = {d}: tail exponent -3"), false, e.to_string()));
            }
        }
        entries.push(PmaxEntry {
            d,
            samples: p.samples,
            point_mass: h.point_mass as f64 / h.total() as f64,
            below: h.below,
            above: h.above,
            median_log_max: s.median_log_max(),
            redraws: s.redraws,
            tail_exponent: exponent.ok(),
            tail_amplitude: amplitude.ok(),
        });
    }
    ctx.w.json("pmax.json", &entries)
}

#[derive(Serialize)]
struct PuEntry {
    d: usize,
    mean_fraction: f64,
    mass_at_zero: f64,
    mass_at_one: f64,
    ballistic_fraction: f64,
    totally_localised_fraction: f64,
}

fn pu(ctx: &mut Ctx, p: &PuParams) -> CliResult<()> {
    let mut entries: Vec<PuEntry> = Vec::new();
    for &d in &p.channels {
        let s = survey(ctx, d, p.samples)?;
        let h = s.pu()?;
        ctx.w.csv(&format!("pu_d{d}.csv"), &HIST_HEADER, hist_rows(&h))?;
        let t = s.tally();
        let n = s.samples.len() as f64;
        let counts = h.counts();
        let e = PuEntry {
            d,
            mean_fraction: h.mean(),
            mass_at_zero: counts[0] as f64 / n,
            mass_at_one: counts[d] as f64 / n,
            ballistic_fraction: t.ballistic as f64 / n,
            totally_localised_fraction: t.totally_localised as f64 / n,
        };
        ctx.checks.push(Check::new(
            format!("d = {d}: end masses match set measures"),
            e.mass_at_zero == e.ballistic_fraction && e.mass_at_one == e.totally_localised_fraction,
            format!("{} / {}", e.mass_at_zero, e.mass_at_one),
        ));
        entries.push(e);
    }
    let mut by_d: Vec<&PuEntry> = entries.iter().collect();
    by_d.sort_by_key(|e| e.d);
    if by_d.len() > 1 {
        let increasing = by_d.windows(2).all(|w| w[0].mean_fraction < w[1].mean_fraction);
        let means: Vec<String> = by_d.iter().map(|e| format!("d={}: {}", e.d, e.mean_fraction)).collect();
        ctx.checks.push(Check::new("mean d_u/d increases with d", increasing, means.join(", ")));
    }
    ctx.w.json("pu.json", &entries)
}

#[derive(Serialize)]
struct CollapseOut {
    channels: Vec<usize>,
    sup_distances: Vec<(usize, usize, f64)>,
    tail_amplitude: BTreeMap<usize, FitResult>,
    notes: Vec<String>,
}

fn collapse(ctx: &mut Ctx, p: &CollapseParams) -> CliResult<()> {
    let surveys = p.channels.iter().map(|&d| survey(ctx, d, p.samples)).collect::<CliResult<Vec<_>>>()?;
    let refs: Vec<&SpectralSurvey> = surveys.iter().collect();
    let report = scatchain::haar::scaling_collapse(&refs, &p.grid)?;
    for n in &report.notes {
        ctx.notice(n.clone());
    }
    let mut header = vec!["x_lo".to_string(), "x_hi".to_string()];
    header.extend(report.channels.iter().map(|d| format!("density_d{d}")));
    let rows = (0..report.grid.len() - 1).map(|k| {
        let mut r = vec![fmt_f64(report.grid[k]), fmt_f64(report.grid[k + 1])];
        r.extend(report.densities.iter().map(|row| fmt_f64(row[k])));
        r
    });
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    ctx.w.csv("collapse.csv", &header_refs, rows.collect::<Vec<_>>())?;

    let mut tail_amplitude = BTreeMap::new();
    for s in surveys.iter().filter(|s| s.d >= 2) {
        if let Ok(f) = fit_cubic_tail_amplitude(&scaled_maxima(s), s.samples.len(), p.tail.lo, p.tail.hi) {
            tail_amplitude.insert(s.d, f);
        }
    }
    let sups: Vec<f64> = report.sup_distances.iter().map(|x| x.2).collect();
    ctx.checks.push(Check::new("sup-distance decreases with d", sups.windows(2).all(|w| w[1] < w[0]), format!("{sups:?}")));
    if let Some(e) = &p.expect {
        let largest = report.channels.last().copied().unwrap_or(0);
        let a = tail_amplitude.get(&largest).map_or(f64::NAN, |f| f.param("a"));
        ctx.checks.push(Check::new(format!("d = {largest}: tail amplitude"), (a - e.amplitude).abs() <= e.tol, format!("{a} vs {} +- {}", e.amplitude, e.tol)));
    }
    ctx.w.json(
        "collapse.json",
        &CollapseOut { channels: report.channels, sup_distances: report.sup_distances, tail_amplitude, notes: report.notes },
    )
}

/// Reads measure CSV files; `#` lines are comments.
pub fn read_measure_csv(path: &Path) -> CliResult<Vec<MeasureEstimate>> {
    let wrap = |e| CliError::Csv { path: path.to_path_buf(), source: e };
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(wrap)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(wrap)?;
        let field = |k: usize| rec.get(k).unwrap_or("").trim().to_string();
        let bad = |what: &str| CliError::Config(format!("{}: line {}: bad {what}", path.display(), rec.position().map_or(0, |p| p.line())));
        let d: usize = field(0).parse().map_err(|_| bad("d"))?;
        let set: SetId = field(1).parse().map_err(|_| bad("set"))?;
        let n: u64 = field(2).parse().map_err(|_| bad("n_samples"))?;
        let hits: u64 = field(3).parse().map_err(|_| bad("hits"))?;
        if hits > n || d == 0 {
            return Err(bad("counts"));
        }
        let upper_bound = field(7) == "true";
        out.push(MeasureEstimate { upper_bound, ..MeasureEstimate::new(set, d, n, hits) });
    }
    Ok(out)
}

fn refit(ctx: &mut Ctx, p: &FitParams) -> CliResult<()> {
    let mut ballistic = Vec::new();
    let mut total = Vec::new();
    for path in &p.inputs {
        for e in read_measure_csv(path)? {
            let (keep, list) = match e.set {
                SetId::Ballistic => (p.ballistic_channels.as_ref().is_none_or(|c| c.contains(&e.d)), &mut ballistic),
                SetId::TotallyLocalised => (p.total_localised_channels.as_ref().is_none_or(|c| c.contains(&e.d)), &mut total),
                SetId::Localised => (false, &mut total),
            };
            if !keep {
                continue;
            }
            if list.iter().any(|x: &MeasureEstimate| x.d == e.d) {
                return Err(CliError::Config(format!("{}: duplicate {} row for d = {}", path.display(), e.set.name(), e.d)));
            }
            list.push(e);
        }
    }
    let fits = fit_both(ctx, &ballistic, &total, p.expect.as_ref());
    ctx.w.json("fits.json", &fits)
}
