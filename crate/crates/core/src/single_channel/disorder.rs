use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{wrap_2pi, ChainState1D, SingleChannelParams};
use crate::ensemble::{run_chunked, stream_rng, CHUNK};
use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::stats::{normal_cdf, Binning, EnsembleStats, Moments};

/// Distribution of one generator parameter along the chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dist {
    Uniform { lo: f64, hi: f64 },
    Const { value: f64 },
}

impl Dist {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Dist::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Dist::Const { value } => value,
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Dist::Uniform { lo, hi } => (lo, hi),
            Dist::Const { value } => (value, value),
        }
    }

    fn check(&self, name: &str, range: Option<(f64, f64)>) -> Result<()> {
        let (lo, hi) = self.bounds();
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::invalid(format!("{name}: invalid range [{lo}, {hi}]")));
        }
        if let Some((min, max)) = range {
            if lo < min || hi > max {
                return Err(Error::invalid(format!("{name}: [{lo}, {hi}] not inside [{min}, {max}]")));
            }
        }
        Ok(())
    }
}

/// Which amplitude the model samples; the other follows from `A^2 + B^2 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Amplitude {
    A(Dist),
    B(Dist),
}

/// Independent per-position distributions of the generator parameters. The
/// transmission phases are symmetric, `beta_L = beta_R = lambda`, and phases
/// are reduced to `[0, 2 pi)` after sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct DisorderModel {
    pub amplitude: Amplitude,
    pub lambda: Dist,
    pub alpha_l: Dist,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    a: Option<Dist>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    b: Option<Dist>,
    lambda: Dist,
    #[serde(rename = "alpha_L")]
    alpha_l: Dist,
    seed: u64,
}

impl TryFrom<RawModel> for DisorderModel {
    type Error = Error;

    fn try_from(raw: RawModel) -> Result<Self> {
        let amplitude = match (raw.a, raw.b) {
            (Some(a), None) => Amplitude::A(a),
            (None, Some(b)) => Amplitude::B(b),
            _ => return Err(Error::Parse("exactly one of \"A\" and \"B\" is required".into())),
        };
        DisorderModel::new(amplitude, raw.lambda, raw.alpha_l, raw.seed)
    }
}

impl From<DisorderModel> for RawModel {
    fn from(m: DisorderModel) -> Self {
        let (a, b) = match m.amplitude {
            Amplitude::A(d) => (Some(d), None),
            Amplitude::B(d) => (None, Some(d)),
        };
        RawModel { a, b, lambda: m.lambda, alpha_l: m.alpha_l, seed: m.seed }
    }
}

impl DisorderModel {
    pub fn new(amplitude: Amplitude, lambda: Dist, alpha_l: Dist, seed: u64) -> Result<Self> {
        match amplitude {
            Amplitude::A(d) => d.check("A", Some((0.0, 1.0)))?,
            Amplitude::B(d) => d.check("B", Some((0.0, 1.0)))?,
        }
        lambda.check("lambda", None)?;
        alpha_l.check("alpha_L", None)?;
        Ok(Self { amplitude, lambda, alpha_l, seed })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Every generator is a perfect reflector, so `B_n = 0` identically.
    pub fn is_degenerate(&self) -> bool {
        match self.amplitude {
            Amplitude::A(d) => d.bounds().0 >= 1.0,
            Amplitude::B(d) => d.bounds().1 <= 0.0,
        }
    }

    /// Draws amplitude, `lambda` and `alpha_L` in that order.
    pub fn sample_generator<R: Rng + ?Sized>(&self, rng: &mut R) -> SingleChannelParams {
        let amp = match self.amplitude {
            Amplitude::A(d) => Err(d.sample(rng)),
            Amplitude::B(d) => Ok(d.sample(rng)),
        };
        let lambda = wrap_2pi(self.lambda.sample(rng));
        let alpha = wrap_2pi(self.alpha_l.sample(rng));
        let p = match amp {
            Err(a) => SingleChannelParams::new(a, alpha, lambda, lambda),
            Ok(b) => SingleChannelParams::from_transmission(b, alpha, lambda, lambda),
        };
        p.expect("ranges validated at construction")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    #[default]
    Full,
    /// Strong-disorder approximation after the first scatterer.
    Approximate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecaySample {
    pub chain_id: usize,
    pub log_b: f64,
    pub i_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayEnsemble {
    pub n: usize,
    pub samples: Vec<DecaySample>,
    /// Set when the model cannot transmit at all; every `I_n` is then `-inf`.
    pub degenerate: bool,
}

impl DecayEnsemble {
    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.i_n).collect()
    }

    pub fn moments(&self) -> Moments {
        let mut m = Moments::default();
        self.samples.iter().filter(|s| s.i_n.is_finite()).for_each(|s| m.push(s.i_n));
        m
    }

    pub fn histogram(&self, binning: &Binning) -> Result<EnsembleStats> {
        EnsembleStats::from_samples(binning, &self.values())
    }
}

/// Final `log B_n` of one chain of `n` generators drawn from `model`.
pub fn simulate_chain<R: Rng + ?Sized>(model: &DisorderModel, n: usize, map: MapKind, rng: &mut R) -> f64 {
    let mut s = ChainState1D::empty();
    for k in 0..n {
        let g = model.sample_generator(rng);
        s = match map {
            MapKind::Approximate if k > 0 => s.approx_step(&g),
            _ => s.step(&g),
        };
    }
    s.log_b
}

/// Ensemble of decay rates `I_n = log(B_n) / n` for chains of `n` scatterers.
///
/// Chain `j` belongs to chunk `j / CHUNK` and draws from that chunk's stream,
/// so the result depends only on `model.seed`, not on `threads`.
pub fn decay_rate_series(
    model: &DisorderModel,
    n: usize,
    ensemble: usize,
    map: MapKind,
    threads: usize,
) -> Result<DecayEnsemble> {
    if n == 0 || ensemble == 0 {
        return Err(Error::invalid("chain length and ensemble size must be positive"));
    }
    if n < 50 {
        log::warn!("chain length {n} is short; I_n is far from its Gaussian limit");
    }
    let degenerate = model.is_degenerate();
    if degenerate {
        log::warn!("degenerate disorder model: B = 0 for every scatterer");
    }
    let chunks = run_chunked(ensemble, CHUNK, model.seed, threads, |_, start, len, rng| {
        (start..start + len)
            .map(|chain_id| {
                let log_b = simulate_chain(model, n, map, rng);
                DecaySample { chain_id, log_b, i_n: log_b / n as f64 }
            })
            .collect::<Vec<_>>()
    });
    Ok(DecayEnsemble { n, samples: chunks.into_iter().flatten().collect(), degenerate })
}

/// Stationary-law estimate of the decay-rate moments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianPrediction {
    pub mean: f64,
    pub variance: f64,
    pub mean_se: f64,
    pub variance_se: f64,
    pub chain_means: [f64; 2],
    /// Empirical stationary density of `phi` on `[0, 2 pi)`.
    pub phi_density: EnsembleStats,
}

impl GaussianPrediction {
    /// Limiting law of `I_n`: normal with the predicted mean and variance `sigma^2 / n`.
    pub fn cdf(&self, n: usize, x: f64) -> f64 {
        normal_cdf(x, self.mean, (self.variance / n as f64).sqrt())
    }
}

const BATCHES: usize = 50;
/// Stream offset keeping the prediction chains apart from ensemble chunks.
const PREDICTION_STREAM: u64 = 1 << 40;

struct ChainEstimate {
    mean: f64,
    mean_se: f64,
    variance: f64,
    variance_se: f64,
}

fn batch_estimate(g: &[f64]) -> ChainEstimate {
    let mean = g.iter().sum::<f64>() / g.len() as f64;
    let size = g.len() / BATCHES;
    let mut means = Moments::default();
    let mut vars = Moments::default();
    for batch in g.chunks_exact(size) {
        means.push(batch.iter().sum::<f64>() / size as f64);
        vars.push(batch.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / size as f64);
    }
    let variance = g.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (g.len() - 1) as f64;
    let nb = means.n as f64;
    ChainEstimate {
        mean,
        mean_se: (means.variance() / nb).sqrt(),
        variance,
        variance_se: (vars.variance() / nb).sqrt(),
    }
}

/// Estimates the stationary phase density by running the strong-disorder
/// phase map past `burn_in`, then averages `log f(B, phi + alpha)` and its
/// square over `samples` further steps. Two independent chains are run;
/// disagreement beyond three combined standard errors is reported as
/// non-convergence.
pub fn gaussian_prediction(model: &DisorderModel, burn_in: usize, samples: usize) -> Result<GaussianPrediction> {
    if samples < 10 * BATCHES {
        return Err(Error::invalid(format!("need at least {} samples", 10 * BATCHES)));
    }
    if model.is_degenerate() {
        return Err(Error::invalid("degenerate model has no finite decay rate"));
    }
    let mut phi_density = EnsembleStats::new(&Binning::Linear { lo: 0.0, hi: TAU, bins: 64 })?;
    let mut estimates = Vec::with_capacity(2);
    for c in 0..2 {
        let mut rng = stream_rng(model.seed, PREDICTION_STREAM + c);
        let mut phi: f64 = rng.random_range(0.0..TAU);
        let mut g = Vec::with_capacity(samples);
        for k in 0..burn_in + samples {
            let gen = model.sample_generator(&mut rng);
            let q = C64::new(1.0, 0.0) + C64::from_polar(gen.a, phi + gen.alpha_l);
            if k >= burn_in {
                g.push(gen.b.ln() - q.norm().ln());
                phi_density.push(wrap_2pi(phi));
            }
            phi = wrap_2pi(phi + 2.0 * gen.lambda() - 2.0 * q.arg());
        }
        estimates.push(batch_estimate(&g));
    }
    let (a, b) = (&estimates[0], &estimates[1]);
    let mean_se = a.mean_se.hypot(b.mean_se);
    let var_se = a.variance_se.hypot(b.variance_se);
    if (a.mean - b.mean).abs() > 3.0 * mean_se || (a.variance - b.variance).abs() > 3.0 * var_se {
        return Err(Error::NonConvergence(format!(
            "phase chains disagree: means {} vs {} (se {mean_se:e}), variances {} vs {} (se {var_se:e})",
            a.mean, b.mean, a.variance, b.variance
        )));
    }
    Ok(GaussianPrediction {
        mean: 0.5 * (a.mean + b.mean),
        variance: 0.5 * (a.variance + b.variance),
        mean_se: 0.5 * mean_se,
        variance_se: 0.5 * var_se,
        chain_means: [a.mean, b.mean],
        phi_density,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn model(alpha: Dist) -> DisorderModel {
        DisorderModel::new(
            Amplitude::B(Dist::Uniform { lo: 0.0, hi: 1.0 }),
            Dist::Const { value: PI / 10.0 },
            alpha,
            7,
        )
        .unwrap()
    }

    #[test]
    fn json_round_trip_and_validation() {
        let text = r#"{"B": {"dist": "uniform", "lo": 0, "hi": 1},
                       "lambda": {"dist": "const", "value": 0.3},
                       "alpha_L": {"dist": "uniform", "lo": 0.5, "hi": 0.7}, "seed": 3}"#;
        let m = DisorderModel::from_json_str(text).unwrap();
        assert_eq!(m.amplitude, Amplitude::B(Dist::Uniform { lo: 0.0, hi: 1.0 }));
        let back = DisorderModel::from_json_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);

        let both = text.replace("\"lambda\"", "\"A\": {\"dist\": \"const\", \"value\": 0.5}, \"lambda\"");
        assert!(DisorderModel::from_json_str(&both).is_err());
        let out_of_range = text.replace("\"hi\": 1}", "\"hi\": 1.5}");
        assert!(DisorderModel::from_json_str(&out_of_range).is_err());
        let inverted = text.replace("\"lo\": 0.5, \"hi\": 0.7", "\"lo\": 0.7, \"hi\": 0.5");
        assert!(DisorderModel::from_json_str(&inverted).is_err());
        let unknown = text.replace("\"seed\"", "\"extra\": 1, \"seed\"");
        assert!(DisorderModel::from_json_str(&unknown).is_err());
    }

    #[test]
    fn samples_stay_in_range() {
        let m = model(Dist::Uniform { lo: -10.0, hi: 10.0 });
        let mut rng = stream_rng(1, 0);
        for _ in 0..10_000 {
            let g = m.sample_generator(&mut rng);
            assert!((0.0..=1.0).contains(&g.a) && (0.0..=1.0).contains(&g.b));
            assert!((0.0..TAU).contains(&g.alpha_l) && (0.0..TAU).contains(&g.beta_l));
            assert_eq!(g.beta_l, g.beta_r);
        }
    }

    #[test]
    fn zero_noise_reproduces_static_orbit() {
        let m = DisorderModel::new(
            Amplitude::A(Dist::Const { value: 0.5 }),
            Dist::Const { value: 0.628319 },
            Dist::Const { value: 0.2 },
            0,
        )
        .unwrap();
        let fixed = SingleChannelParams::with_lambda(0.5, 0.628319, 0.2).unwrap();
        let mut rng = stream_rng(0, 0);
        let (mut noisy, mut stat) = (ChainState1D::from_params(&fixed), ChainState1D::from_params(&fixed));
        for _ in 0..1000 {
            noisy = super::super::noisy_step(&noisy, &m.sample_generator(&mut rng));
            stat = super::super::static_step(&stat, &fixed);
        }
        assert_eq!(noisy, stat);
    }

    #[test]
    fn weak_noise_stays_near_level_set() {
        let eps = 0.001;
        let m = DisorderModel::new(
            Amplitude::A(Dist::Uniform { lo: 0.5 - eps, hi: 0.5 + eps }),
            Dist::Uniform { lo: 0.628319 - eps, hi: 0.628319 + eps },
            Dist::Const { value: 0.0 },
            11,
        )
        .unwrap();
        let reference = SingleChannelParams::with_lambda(0.5, 0.628319, 0.0).unwrap();
        let mut s = ChainState1D::from_static(0.3, 1.0, &reference).unwrap();
        let f0 = super::super::integral_f(&s, &reference).unwrap();
        let mut rng = stream_rng(m.seed, 0);
        let mut worst = 0.0_f64;
        for _ in 0..1_000 {
            s = s.step(&m.sample_generator(&mut rng));
            worst = worst.max((super::super::integral_f(&s, &reference).unwrap() - f0).abs());
        }
        // Drift across level sets is diffusive, roughly 1.5 eps sqrt(n), so
        // the band is only O(eps) over a fixed horizon.
        assert!(worst < 100.0 * eps, "drift {worst}");
        assert!(s.b > 0.5);
    }

    #[test]
    fn degenerate_model_is_flagged() {
        let m = DisorderModel::new(
            Amplitude::B(Dist::Const { value: 0.0 }),
            Dist::Const { value: 0.3 },
            Dist::Const { value: 0.0 },
            0,
        )
        .unwrap();
        let e = decay_rate_series(&m, 60, 10, MapKind::Full, 1).unwrap();
        assert!(e.degenerate);
        assert!(e.samples.iter().all(|s| s.i_n == f64::NEG_INFINITY));
        assert!(gaussian_prediction(&m, 10, 1000).is_err());
    }

    #[test]
    fn series_is_thread_independent() {
        let m = model(Dist::Uniform { lo: 0.0, hi: TAU });
        let a = decay_rate_series(&m, 60, 3000, MapKind::Full, 1).unwrap();
        let b = decay_rate_series(&m, 60, 3000, MapKind::Full, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples[2999].chain_id, 2999);
    }

    /// Oracle for the uniform-phase mean: `<log B> - <log|1 + A e^{iy}|>`
    /// with the phase average of the second term vanishing for `A < 1`.
    #[test]
    fn phase_average_vanishes() {
        for a in [0.1, 0.5, 0.9, 0.99] {
            let k = 20_000;
            let avg = (0..k)
                .map(|j| {
                    let y = TAU * (j as f64 + 0.5) / k as f64;
                    (1.0 + 2.0 * a * y.cos() + a * a).ln()
                })
                .sum::<f64>()
                / k as f64;
            assert!(avg.abs() < 1e-10);
        }
    }

    #[test]
    fn uniform_phase_mean_is_minus_one() {
        let m = model(Dist::Uniform { lo: 0.0, hi: TAU });
        let e = decay_rate_series(&m, 100, 4000, MapKind::Full, 1).unwrap();
        let mom = e.moments();
        assert!((mom.mean + 1.0).abs() < 4.0 * (mom.variance() / 4000.0).sqrt());
        let approx = decay_rate_series(&m, 100, 4000, MapKind::Approximate, 1).unwrap();
        assert!((approx.moments().mean - mom.mean).abs() < 0.05);
    }

    #[test]
    fn prediction_agrees_with_simulation() {
        let m = model(Dist::Uniform { lo: 0.0, hi: TAU });
        let p = gaussian_prediction(&m, 1000, 20_000).unwrap();
        assert!((p.mean + 1.0).abs() < 0.03);
        assert!((p.variance / 1.4674 - 1.0).abs() < 0.1);
        assert!((p.phi_density.total_mass() - 1.0).abs() < 1e-12);
        // At n = 100 the ensemble is still visibly skewed, so compare moments.
        let e = decay_rate_series(&m, 100, 3000, MapKind::Full, 1).unwrap();
        let mo = e.moments();
        let se = (p.variance / 100.0 / 3000.0).sqrt();
        assert!((mo.mean - p.mean).abs() < 4.0 * se + 4.0 * p.mean_se, "mean {} vs {}", mo.mean, p.mean);
        assert!((100.0 * mo.variance() / p.variance - 1.0).abs() < 0.1);
    }
}
