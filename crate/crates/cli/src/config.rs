//! Experiment configuration files.
//!
//! A config is one JSON object:
//!
//! ```json
//! {"experiment": {"kind": "portrait", ...}, "seed": 7, "parallel": 4, "out": "runs/portrait"}
//! ```
//!
//! `parallel` and `out` only decide where and how fast a run happens. They
//! are left out of the config hash, so artifacts do not depend on them.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::PathBuf;

use scatchain::haar::AdaptivePlan;
use scatchain::single_channel::{Amplitude, DisorderModel, Dist, MapKind};
use scatchain::smatrix::{MatrixFile, Reunitarize};
use scatchain::Binning;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    /// Worker threads; `0` or absent uses every core.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    Portrait(PortraitParams),
    NoisyPortrait(NoisyPortraitParams),
    DecayHist(DecayHistParams),
    Evolve(EvolveParams),
    Classify(ClassifyParams),
    Measure(MeasureParams),
    Pmax(PmaxParams),
    Pu(PuParams),
    Collapse(CollapseParams),
    Fit(FitParams),
}

pub const EXPERIMENTS: [&str; 10] =
    ["portrait", "noisy-portrait", "decay-hist", "evolve", "classify", "measure", "pmax", "pu", "collapse", "fit"];

/// Starting point `(A_1, chi_1)` of a single-channel orbit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialPoint {
    #[serde(rename = "A")]
    pub a: f64,
    pub chi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortraitParams {
    #[serde(rename = "A")]
    pub a: f64,
    pub lambda: f64,
    #[serde(rename = "alpha_L", default)]
    pub alpha_l: f64,
    pub steps: usize,
    pub initial: Vec<InitialPoint>,
}

/// Orbits of the noisy map. The static generator at the centre of the
/// model's ranges defines `chi` for the initial points and the reference
/// level sets of `F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoisyPortraitParams {
    pub model: DisorderModel,
    pub steps: usize,
    pub initial: Vec<InitialPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayExpect {
    pub mean: f64,
    pub mean_tol: f64,
    pub sigma2: f64,
    /// Relative tolerance on `sigma2`.
    pub sigma2_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayHistParams {
    pub model: DisorderModel,
    pub n: usize,
    pub ensemble: usize,
    #[serde(default)]
    pub map: MapKind,
    pub bins: Binning,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_prediction_samples")]
    pub prediction_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<DecayExpect>,
}

fn default_burn_in() -> usize {
    1000
}

fn default_prediction_samples() -> usize {
    100_000
}

/// Where a generating scattering matrix comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    /// Matrix JSON file, path relative to the working directory.
    File { path: PathBuf },
    Matrix { matrix: MatrixFile },
    /// Haar samples `index .. index + count`, sample `k` drawn from stream `k`.
    Haar {
        d: usize,
        #[serde(default)]
        index: u64,
        #[serde(default = "one")]
        count: u64,
    },
    SingleChannel {
        #[serde(rename = "A")]
        a: f64,
        lambda: f64,
        #[serde(rename = "alpha_L", default)]
        alpha_l: f64,
    },
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveParams {
    pub generator: GeneratorSpec,
    pub n_max: usize,
    #[serde(default)]
    pub reunitarize: Reunitarize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyParams {
    pub generators: Vec<GeneratorSpec>,
}

/// Sample count for one channel number: a fixed size or an adaptive plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Samples {
    Fixed(usize),
    Adaptive { adaptive: AdaptivePlan },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelPlan {
    pub d: usize,
    pub samples: Samples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureExpect {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    /// Relative tolerance on both rates.
    pub rel_tol: f64,
}

/// Ballistic and totally localised measures are sampled as separate
/// sections because they need different channel ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureParams {
    #[serde(default)]
    pub ballistic: Vec<ChannelPlan>,
    #[serde(default)]
    pub total_localised: Vec<ChannelPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<MeasureExpect>,
}

/// Tail window in the scaled variable `max|kappa| / sqrt(d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailWindow {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Default for TailWindow {
    fn default() -> Self {
        Self { lo: 3.0, hi: 30.0, bins: 12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmaxParams {
    pub channels: Vec<usize>,
    pub samples: usize,
    pub bins: Binning,
    #[serde(default)]
    pub tail: TailWindow,
    /// Accepted distance of the tail exponent from -3 in `--check` mode.
    #[serde(default = "default_exponent_tol")]
    pub exponent_tol: f64,
}

fn default_exponent_tol() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PuParams {
    pub channels: Vec<usize>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmplitudeExpect {
    pub amplitude: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseParams {
    pub channels: Vec<usize>,
    pub samples: usize,
    /// Common grid in the scaled variable.
    pub grid: Binning,
    #[serde(default)]
    pub tail: TailWindow,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<AmplitudeExpect>,
}

/// Refit of measure CSV files written by the `measure` experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitParams {
    pub inputs: Vec<PathBuf>,
    /// Restrict the ballistic fit to these channel numbers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ballistic_channels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_localised_channels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<MeasureExpect>,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Portrait(_) => "portrait",
            Experiment::NoisyPortrait(_) => "noisy-portrait",
            Experiment::DecayHist(_) => "decay-hist",
            Experiment::Evolve(_) => "evolve",
            Experiment::Classify(_) => "classify",
            Experiment::Measure(_) => "measure",
            Experiment::Pmax(_) => "pmax",
            Experiment::Pu(_) => "pu",
            Experiment::Collapse(_) => "collapse",
            Experiment::Fit(_) => "fit",
        }
    }

    /// A ready-to-run configuration for each experiment.
    pub fn default_for(name: &str) -> CliResult<Experiment> {
        let uniform = |lo: f64, hi: f64| Dist::Uniform { lo, hi };
        let strong = DisorderModel {
            amplitude: Amplitude::B(uniform(0.0, 1.0)),
            lambda: Dist::Const { value: PI / 10.0 },
            alpha_l: uniform(0.0, 2.0 * PI),
            seed: 0,
        };
        let ring = |count: usize| -> Vec<InitialPoint> {
            (0..count)
                .map(|k| InitialPoint { a: 0.05 + 0.9 * k as f64 / count as f64, chi: -FRAC_PI_2 + PI * k as f64 / count as f64 })
                .collect()
        };
        let ex = match name {
            "portrait" => Experiment::Portrait(PortraitParams { a: 0.5, lambda: 0.628319, alpha_l: 0.0, steps: 2000, initial: ring(20) }),
            "noisy-portrait" => Experiment::NoisyPortrait(NoisyPortraitParams {
                model: DisorderModel {
                    amplitude: Amplitude::A(uniform(0.499, 0.501)),
                    lambda: uniform(0.627319, 0.629319),
                    alpha_l: Dist::Const { value: 0.0 },
                    seed: 0,
                },
                steps: 10_000,
                initial: ring(5),
            }),
            "decay-hist" => Experiment::DecayHist(DecayHistParams {
                model: strong,
                n: 100,
                ensemble: 10_000,
                map: MapKind::Full,
                bins: Binning::Linear { lo: -1.5, hi: -0.5, bins: 50 },
                burn_in: default_burn_in(),
                prediction_samples: default_prediction_samples(),
                expect: None,
            }),
            "evolve" => Experiment::Evolve(EvolveParams {
                generator: GeneratorSpec::Haar { d: 3, index: 0, count: 1 },
                n_max: 200,
                reunitarize: Reunitarize::Off,
            }),
            "classify" => Experiment::Classify(ClassifyParams { generators: vec![GeneratorSpec::Haar { d: 2, index: 0, count: 10 }] }),
            "measure" => Experiment::Measure(MeasureParams {
                ballistic: [1, 2, 3]
                    .into_iter()
                    .map(|d| ChannelPlan { d, samples: Samples::Adaptive { adaptive: AdaptivePlan::default() } })
                    .collect(),
                total_localised: [1, 2, 4, 8].into_iter().map(|d| ChannelPlan { d, samples: Samples::Fixed(20_000) }).collect(),
                expect: None,
            }),
            "pmax" => Experiment::Pmax(PmaxParams {
                channels: vec![2, 4],
                samples: 20_000,
                bins: Binning::Log { lo: 1.0, hi: 1000.0, bins: 60 },
                tail: TailWindow::default(),
                exponent_tol: default_exponent_tol(),
            }),
            "pu" => Experiment::Pu(PuParams { channels: vec![2, 4, 8], samples: 10_000 }),
            "collapse" => Experiment::Collapse(CollapseParams {
                channels: vec![2, 4, 8],
                samples: 10_000,
                grid: Binning::Log { lo: 0.3, hi: 30.0, bins: 40 },
                tail: TailWindow::default(),
                expect: None,
            }),
            "fit" => Experiment::Fit(FitParams {
                inputs: vec![PathBuf::from("measure.csv")],
                ballistic_channels: None,
                total_localised_channels: None,
                expect: None,
            }),
            other => return Err(CliError::Config(format!("unknown experiment \"{other}\""))),
        };
        Ok(ex)
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> CliResult<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// The config with run-placement fields removed; this is what gets hashed
    /// and copied next to the artifacts.
    pub fn canonical(&self) -> ExperimentConfig {
        ExperimentConfig { parallel: None, out: None, ..self.clone() }
    }

    /// Hex SHA-256 of the canonical compact JSON.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.canonical()).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn threads(&self) -> usize {
        self.parallel.unwrap_or(0)
    }

    /// Checks every field and reports the first problem with its path.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |path: &str, msg: &str| Err(CliError::Config(format!("experiment.{path}: {msg}")));
        match &self.experiment {
            Experiment::Portrait(p) => {
                if !(0.0..1.0).contains(&p.a) {
                    return bad("A", "must lie in [0, 1)");
                }
                if !p.lambda.is_finite() || !p.alpha_l.is_finite() {
                    return bad("lambda", "phases must be finite");
                }
                check_orbits(p.steps, &p.initial)?;
            }
            Experiment::NoisyPortrait(p) => check_orbits(p.steps, &p.initial)?,
            Experiment::DecayHist(p) => {
                if p.n == 0 {
                    return bad("n", "must be positive");
                }
                if p.ensemble == 0 {
                    return bad("ensemble", "must be positive");
                }
                if p.prediction_samples < 500 {
                    return bad("prediction_samples", "must be at least 500");
                }
                check_bins("bins", &p.bins)?;
            }
            Experiment::Evolve(p) => {
                if p.n_max == 0 {
                    return bad("n_max", "must be positive");
                }
                check_generator("generator", &p.generator)?;
            }
            Experiment::Classify(p) => {
                if p.generators.is_empty() {
                    return bad("generators", "must not be empty");
                }
                for (i, g) in p.generators.iter().enumerate() {
                    check_generator(&format!("generators[{i}]"), g)?;
                }
            }
            Experiment::Measure(p) => {
                if p.ballistic.is_empty() && p.total_localised.is_empty() {
                    return bad("ballistic", "at least one section needs channel numbers");
                }
                for (name, plans) in [("ballistic", &p.ballistic), ("total_localised", &p.total_localised)] {
                    for (i, c) in plans.iter().enumerate() {
                        if c.d == 0 {
                            return bad(&format!("{name}[{i}].d"), "must be positive");
                        }
                        match c.samples {
                            Samples::Fixed(n) if n < 1000 => return bad(&format!("{name}[{i}].samples"), "must be at least 1000"),
                            Samples::Adaptive { adaptive: a }
                                if !(a.target_rel > 0.0) || a.max_samples < a.min_samples.max(1000) =>
                            {
                                return bad(&format!("{name}[{i}].samples.adaptive"), "needs target_rel > 0 and max_samples >= max(min_samples, 1000)")
                            }
                            _ => {}
                        }
                    }
                }
            }
            Experiment::Pmax(p) => {
                check_channels(&p.channels, p.samples)?;
                check_bins("bins", &p.bins)?;
                check_tail(&p.tail)?;
            }
            Experiment::Pu(p) => check_channels(&p.channels, p.samples)?,
            Experiment::Collapse(p) => {
                check_channels(&p.channels, p.samples)?;
                check_bins("grid", &p.grid)?;
                check_tail(&p.tail)?;
            }
            Experiment::Fit(p) => {
                if p.inputs.is_empty() {
                    return bad("inputs", "must not be empty");
                }
            }
        }
        Ok(())
    }
}

fn check_orbits(steps: usize, initial: &[InitialPoint]) -> CliResult<()> {
    if steps == 0 {
        return Err(CliError::Config("experiment.steps: must be positive".into()));
    }
    if initial.is_empty() {
        return Err(CliError::Config("experiment.initial: at least one initial condition is required".into()));
    }
    for (i, p) in initial.iter().enumerate() {
        if !(0.0..=1.0).contains(&p.a) || !p.chi.is_finite() {
            return Err(CliError::Config(format!("experiment.initial[{i}]: need A in [0, 1] and finite chi")));
        }
    }
    Ok(())
}

fn check_bins(path: &str, b: &Binning) -> CliResult<()> {
    b.edges().map(|_| ()).map_err(|e| CliError::Config(format!("experiment.{path}: {e}")))
}

fn check_channels(channels: &[usize], samples: usize) -> CliResult<()> {
    if channels.is_empty() || channels.contains(&0) {
        return Err(CliError::Config("experiment.channels: need at least one positive channel number".into()));
    }
    if samples == 0 {
        return Err(CliError::Config("experiment.samples: must be positive".into()));
    }
    Ok(())
}

fn check_tail(t: &TailWindow) -> CliResult<()> {
    if !(0.0 < t.lo && t.lo < t.hi) || t.bins < 3 {
        return Err(CliError::Config("experiment.tail: need 0 < lo < hi and at least 3 bins".into()));
    }
    Ok(())
}

fn check_generator(path: &str, g: &GeneratorSpec) -> CliResult<()> {
    match g {
        GeneratorSpec::Haar { d, count, .. } if *d == 0 || *count == 0 => {
            Err(CliError::Config(format!("experiment.{path}: d and count must be positive")))
        }
        GeneratorSpec::SingleChannel { a, .. } if !(0.0..=1.0).contains(a) => {
            Err(CliError::Config(format!("experiment.{path}.A: must lie in [0, 1]")))
        }
        _ => Ok(()),
    }
}
