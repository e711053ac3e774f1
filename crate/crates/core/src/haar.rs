//! Haar-uniform sampling of `U(2d)` and Monte Carlo statistics of the
//! transfer spectra of random scatterers.

use std::f64::consts::FRAC_1_SQRT_2;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ensemble::{run_chunk_range, run_chunked, stream_rng, CHUNK};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat, C64};
use crate::multi_channel::{count_outside, TAU_SPEC};
use crate::smatrix::ScatteringMatrix;
use crate::stats::{median, wilson_interval, Binning, EnsembleStats, Z95};

/// Haar-distributed `n x n` unitary: QR of a complex Ginibre matrix with the
/// phases of `diag(R)` moved into `Q`.
pub fn haar_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMat {
    let z = CMat::from_fn(n, n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
    });
    let qr = z.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        let rjj = r[(j, j)];
        let phase = if rjj.norm() > 0.0 { rjj / rjj.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Deterministic stream of Haar-random scattering matrices with `d` channels.
#[derive(Debug, Clone)]
pub struct HaarSampler {
    d: usize,
    seed: u64,
    counter: u64,
    rng: ChaCha8Rng,
}

impl HaarSampler {
    pub fn new(d: usize, seed: u64) -> Self {
        Self::with_stream(d, seed, 0)
    }

    pub fn with_stream(d: usize, seed: u64, stream: u64) -> Self {
        assert!(d >= 1, "channel count must be positive");
        Self { d, seed, counter: 0, rng: stream_rng(seed, stream) }
    }

    pub fn channels(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of matrices drawn so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn sample(&mut self) -> ScatteringMatrix {
        self.counter += 1;
        ScatteringMatrix::from_matrix(haar_unitary(2 * self.d, &mut self.rng)).expect("even order, finite")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SetId {
    /// All transfer eigenvalues on the unit circle.
    #[serde(rename = "M_b")]
    Ballistic,
    /// At least one eigenvalue off the circle.
    #[serde(rename = "M_l")]
    Localised,
    /// All `d` outward eigenvalues off the circle.
    #[serde(rename = "M_l_star")]
    TotallyLocalised,
}

impl SetId {
    pub fn name(&self) -> &'static str {
        match self {
            SetId::Ballistic => "M_b",
            SetId::Localised => "M_l",
            SetId::TotallyLocalised => "M_l_star",
        }
    }

    pub fn contains(&self, d_u: usize, d: usize) -> bool {
        match self {
            SetId::Ballistic => d_u == 0,
            SetId::Localised => d_u > 0,
            SetId::TotallyLocalised => d_u == d,
        }
    }
}

impl std::str::FromStr for SetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "M_b" => Ok(SetId::Ballistic),
            "M_l" => Ok(SetId::Localised),
            "M_l_star" => Ok(SetId::TotallyLocalised),
            _ => Err(Error::invalid(format!("unknown set {s:?}"))),
        }
    }
}

/// Eigenvalues whose modulus deviates from 1 by less than `TAU_SPEC` but by
/// more than this count as near-marginal rather than rounding noise.
pub const MARGINAL_FLOOR: f64 = 1e-11;

/// Spectral summary of one Haar sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralSample {
    pub d_u: usize,
    /// `max |kappa|`; exactly 1 for ballistic samples.
    pub max_abs: f64,
    /// In-band eigenvalue with `| |kappa| - 1 |` above [`MARGINAL_FLOOR`].
    pub marginal: bool,
}

/// Draws Haar samples until the transfer matrix exists; returns the summary
/// and the number of rejected draws.
pub fn draw_spectrum<R: Rng + ?Sized>(d: usize, rng: &mut R) -> (SpectralSample, u64) {
    let mut redraws = 0;
    loop {
        let s = ScatteringMatrix::from_matrix(haar_unitary(2 * d, rng)).expect("even order, finite");
        match s.to_transfer() {
            Ok(t) => {
                let values = linalg::eigenvalues(t.matrix());
                let d_u = count_outside(&values, TAU_SPEC).min(d);
                let marginal = values.iter().any(|k| {
                    let dev = (k.norm() - 1.0).abs();
                    dev > MARGINAL_FLOOR && dev <= TAU_SPEC
                });
                let max_abs = if d_u == 0 { 1.0 } else { values.iter().map(|k| k.norm()).fold(1.0, f64::max) };
                return (SpectralSample { d_u, max_abs, marginal }, redraws);
            }
            Err(_) => redraws += 1,
        }
    }
}

/// Counts of every set from one batch of Haar samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct MeasureTally {
    pub d: usize,
    pub n_samples: u64,
    pub ballistic: u64,
    pub localised: u64,
    pub totally_localised: u64,
    /// Draws rejected because `t_R` was singular.
    pub redraws: u64,
    /// Samples counted as ballistic with an eigenvalue inside the tolerance band.
    pub marginal: u64,
}

impl MeasureTally {
    pub fn merge(&mut self, o: &MeasureTally) {
        self.n_samples += o.n_samples;
        self.ballistic += o.ballistic;
        self.localised += o.localised;
        self.totally_localised += o.totally_localised;
        self.redraws += o.redraws;
        self.marginal += o.marginal;
    }

    pub fn hits(&self, set: SetId) -> u64 {
        match set {
            SetId::Ballistic => self.ballistic,
            SetId::Localised => self.localised,
            SetId::TotallyLocalised => self.totally_localised,
        }
    }

    pub fn estimate(&self, set: SetId) -> MeasureEstimate {
        MeasureEstimate::new(set, self.d, self.n_samples, self.hits(set))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureEstimate {
    pub set: SetId,
    pub d: usize,
    pub n_samples: u64,
    pub hits: u64,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Sampling stopped at the cap before reaching the precision target; the
    /// estimate is then best read through its upper bound `ci_hi`.
    #[serde(default)]
    pub upper_bound: bool,
}

impl MeasureEstimate {
    pub fn new(set: SetId, d: usize, n_samples: u64, hits: u64) -> Self {
        let (ci_lo, ci_hi) = wilson_interval(hits, n_samples, Z95);
        let estimate = if n_samples == 0 { 0.0 } else { hits as f64 / n_samples as f64 };
        Self { set, d, n_samples, hits, estimate, ci_lo, ci_hi, upper_bound: false }
    }

    /// Half-width of the 95% interval relative to the estimate.
    pub fn relative_half_width(&self) -> f64 {
        if self.hits == 0 {
            f64::INFINITY
        } else {
            0.5 * (self.ci_hi - self.ci_lo) / self.estimate
        }
    }
}

fn tally_chunk(d: usize, len: usize, rng: &mut ChaCha8Rng) -> MeasureTally {
    let mut t = MeasureTally { d, ..Default::default() };
    for _ in 0..len {
        let (s, redraws) = draw_spectrum(d, rng);
        t.n_samples += 1;
        t.redraws += redraws;
        if s.d_u == 0 {
            t.ballistic += 1;
            t.marginal += s.marginal as u64;
        } else {
            t.localised += 1;
        }
        t.totally_localised += (s.d_u == d) as u64;
    }
    t
}

/// Fixed-size Monte Carlo tally of all sets at channel count `d`.
pub fn measure_tally(d: usize, n_samples: usize, seed: u64, threads: usize) -> Result<MeasureTally> {
    if d == 0 {
        return Err(Error::invalid("channel count must be positive"));
    }
    if n_samples < 1000 {
        return Err(Error::invalid("measure estimates need at least 1000 samples"));
    }
    let parts = run_chunked(n_samples, CHUNK, seed, threads, |_, _, len, rng| tally_chunk(d, len, rng));
    let mut total = MeasureTally { d, ..Default::default() };
    parts.iter().for_each(|p| total.merge(p));
    Ok(total)
}

pub fn measure_estimate(d: usize, set: SetId, n_samples: usize, seed: u64, threads: usize) -> Result<MeasureEstimate> {
    Ok(measure_tally(d, n_samples, seed, threads)?.estimate(set))
}

/// Sampling schedule for [`adaptive_estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptivePlan {
    /// Target relative half-width of the 95% interval.
    pub target_rel: f64,
    pub min_samples: usize,
    pub max_samples: usize,
}

impl Default for AdaptivePlan {
    fn default() -> Self {
        Self { target_rel: 0.2, min_samples: 10_000, max_samples: 10_000_000 }
    }
}

/// Draws chunks in rounds of doubling size until the estimate of `set`
/// reaches the target precision or the cap. Chunk `k` always uses stream `k`,
/// so the samples are a prefix of one fixed sequence and the result does not
/// depend on `threads`.
pub fn adaptive_estimate(
    d: usize,
    set: SetId,
    plan: &AdaptivePlan,
    seed: u64,
    threads: usize,
) -> Result<(MeasureEstimate, MeasureTally)> {
    if d == 0 || !(plan.target_rel > 0.0) || plan.max_samples < plan.min_samples.max(1000) {
        return Err(Error::invalid("invalid adaptive sampling plan"));
    }
    let mut total = MeasureTally { d, ..Default::default() };
    let mut next_chunk = 0usize;
    let mut round = plan.min_samples.max(1000).div_ceil(CHUNK);
    let cap_chunks = plan.max_samples.div_ceil(CHUNK);
    loop {
        let chunks = round.min(cap_chunks - next_chunk);
        let first = next_chunk;
        let parts = run_chunk_range(first, chunks, CHUNK, seed, threads, |_, len, rng| tally_chunk(d, len, rng));
        parts.iter().for_each(|p| total.merge(p));
        next_chunk += chunks;
        let est = total.estimate(set);
        if est.relative_half_width() <= plan.target_rel {
            return Ok((est, total));
        }
        if next_chunk >= cap_chunks {
            log::warn!("d = {d}: {} reached the sample cap; reporting an upper bound", set.name());
            return Ok((MeasureEstimate { upper_bound: true, ..est }, total));
        }
        round = next_chunk;
    }
}

/// Raw spectral samples used by the distribution experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSurvey {
    pub d: usize,
    pub samples: Vec<SpectralSample>,
    pub redraws: u64,
}

pub fn spectral_survey(d: usize, n_samples: usize, seed: u64, threads: usize) -> Result<SpectralSurvey> {
    if d == 0 || n_samples == 0 {
        return Err(Error::invalid("channel count and sample size must be positive"));
    }
    let parts = run_chunked(n_samples, CHUNK, seed, threads, |_, _, len, rng| {
        let mut redraws = 0;
        let v: Vec<SpectralSample> = (0..len)
            .map(|_| {
                let (s, r) = draw_spectrum(d, rng);
                redraws += r;
                s
            })
            .collect();
        (v, redraws)
    });
    let redraws = parts.iter().map(|p| p.1).sum();
    Ok(SpectralSurvey { d, samples: parts.into_iter().flat_map(|p| p.0).collect(), redraws })
}

impl SpectralSurvey {
    pub fn maxima(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.max_abs).collect()
    }

    /// `P_max`: histogram of `max |kappa|` over localised samples, with the
    /// ballistic samples (`t = 1` exactly) recorded as the point mass.
    pub fn pmax(&self, binning: &Binning) -> Result<EnsembleStats> {
        let mut h = EnsembleStats::new(binning)?;
        for s in &self.samples {
            if s.d_u == 0 {
                h.push_point_mass();
            } else {
                h.push(s.max_abs);
            }
        }
        Ok(h)
    }

    /// `P_u`: distribution of `d_u / d` on the grid `{0, 1/d, ..., 1}`, one
    /// bin of width `1/d` centred on each grid point.
    pub fn pu(&self) -> Result<EnsembleStats> {
        let d = self.d as f64;
        let edges = (0..=self.d + 1).map(|k| (k as f64 - 0.5) / d).collect();
        let mut h = EnsembleStats::new(&Binning::Edges { edges })?;
        self.samples.iter().for_each(|s| h.push(s.d_u as f64 / d));
        Ok(h)
    }

    pub fn tally(&self) -> MeasureTally {
        let mut t = MeasureTally { d: self.d, n_samples: self.samples.len() as u64, redraws: self.redraws, ..Default::default() };
        for s in &self.samples {
            if s.d_u == 0 {
                t.ballistic += 1;
                t.marginal += s.marginal as u64;
            } else {
                t.localised += 1;
            }
            t.totally_localised += (s.d_u == self.d) as u64;
        }
        t
    }

    /// Median of `log max |kappa|` (ballistic samples contribute 0).
    pub fn median_log_max(&self) -> f64 {
        median(&self.samples.iter().map(|s| s.max_abs.ln()).collect::<Vec<_>>())
    }
}

pub fn pmax_distribution(d: usize, n_samples: usize, binning: &Binning, seed: u64, threads: usize) -> Result<EnsembleStats> {
    if n_samples < 10_000 {
        log::warn!("P_max from {n_samples} samples is noisy; at least 10^4 recommended");
    }
    spectral_survey(d, n_samples, seed, threads)?.pmax(binning)
}

pub fn pu_distribution(d: usize, n_samples: usize, seed: u64, threads: usize) -> Result<EnsembleStats> {
    if n_samples < 10_000 {
        log::warn!("P_u from {n_samples} samples is noisy; at least 10^4 recommended");
    }
    spectral_survey(d, n_samples, seed, threads)?.pu()
}

/// Rescaled densities `sqrt(d) P_max(sqrt(d) x; d)` on a common grid in `x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseReport {
    pub grid: Vec<f64>,
    pub channels: Vec<usize>,
    /// One density row per entry of `channels`.
    pub densities: Vec<Vec<f64>>,
    /// `(d_i, d_{i+1}, sup |difference|)` for consecutive channel counts.
    pub sup_distances: Vec<(usize, usize, f64)>,
    pub notes: Vec<String>,
}

/// Histograms `x = max|kappa| / sqrt(d)` of each survey on `grid` and
/// compares consecutive channel counts. Ballistic samples stay in the
/// normalisation (as the point mass at `x = 1 / sqrt(d)`), `d = 1` is left out.
pub fn scaling_collapse(surveys: &[&SpectralSurvey], grid: &Binning) -> Result<CollapseReport> {
    let mut notes = Vec::new();
    let mut used: Vec<&SpectralSurvey> = Vec::new();
    for s in surveys {
        if s.d < 2 {
            notes.push("d = 1 excluded: the single-channel case does not follow the sqrt(d) scaling".to_string());
        } else {
            used.push(s);
        }
    }
    used.sort_by_key(|s| s.d);
    if used.len() < 2 {
        return Err(Error::invalid("scaling collapse needs at least two channel counts d >= 2"));
    }
    let mut densities = Vec::new();
    let mut edges = Vec::new();
    for s in &used {
        let scale = (s.d as f64).sqrt();
        let mut h = EnsembleStats::new(grid)?;
        for x in &s.samples {
            if x.d_u == 0 {
                h.push_point_mass();
            } else {
                h.push(x.max_abs / scale);
            }
        }
        edges = h.edges().to_vec();
        densities.push(h.rows().iter().map(|r| r.density).collect::<Vec<f64>>());
    }
    let mut sup_distances = Vec::new();
    for i in 0..used.len() - 1 {
        let (a, b) = (&densities[i], &densities[i + 1]);
        let both = a.iter().zip(b).filter(|(x, y)| **x > 0.0 && **y > 0.0).count();
        if (both as f64) < 0.5 * a.len() as f64 {
            notes.push(format!(
                "coverage: d = {} and d = {} overlap on {both} of {} bins",
                used[i].d,
                used[i + 1].d,
                a.len()
            ));
        }
        let sup = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        sup_distances.push((used[i].d, used[i + 1].d, sup));
    }
    Ok(CollapseReport { grid: edges, channels: used.iter().map(|s| s.d).collect(), densities, sup_distances, notes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_critical, ks_critical_two_sample, ks_statistic, ks_two_sample};

    #[test]
    fn samples_are_unitary_and_reproducible() {
        let mut a = HaarSampler::new(3, 42);
        let mut b = HaarSampler::new(3, 42);
        for _ in 0..100 {
            let s = a.sample();
            assert!(s.validate(1e-12).unwrap());
            assert_eq!(s, b.sample());
        }
        assert_eq!(a.counter(), 100);
        assert_ne!(HaarSampler::new(3, 43).sample(), HaarSampler::new(3, 42).sample());
    }

    #[test]
    fn reflection_intensity_is_uniform_at_d1() {
        // |r|^2 of a Haar U(2) matrix is uniform on [0, 1].
        let mut s = HaarSampler::new(1, 5);
        let x: Vec<f64> = (0..20_000).map(|_| s.sample().matrix()[(0, 0)].norm_sqr()).collect();
        assert!(ks_statistic(&x, |t| t.clamp(0.0, 1.0)) < ks_critical(0.01, x.len()));
    }

    #[test]
    fn left_multiplication_leaves_distribution_invariant() {
        let mut rng = stream_rng(9, 1);
        let v = haar_unitary(4, &mut rng);
        let mut s = HaarSampler::new(2, 6);
        let mut t = HaarSampler::new(2, 7);
        let stat = |m: &CMat| m.trace().re;
        let a: Vec<f64> = (0..10_000).map(|_| stat(s.sample().matrix())).collect();
        let b: Vec<f64> = (0..10_000).map(|_| stat(&(&v * t.sample().matrix()))).collect();
        assert!(ks_two_sample(&a, &b) < ks_critical_two_sample(0.01, a.len(), b.len()));
    }

    #[test]
    fn d1_ballistic_measure_is_one_half() {
        let t = measure_tally(1, 20_000, 3, 1).unwrap();
        let e = t.estimate(SetId::Ballistic);
        assert!(e.ci_lo < 0.5 && 0.5 < e.ci_hi, "{e:?}");
        assert_eq!(t.ballistic + t.localised, t.n_samples);
        assert_eq!(t.localised, t.totally_localised);
    }

    #[test]
    fn tally_does_not_depend_on_threads() {
        assert_eq!(measure_tally(2, 3000, 1, 1).unwrap(), measure_tally(2, 3000, 1, 2).unwrap());
        assert!(measure_tally(2, 10, 1, 1).is_err());
    }

    #[test]
    fn adaptive_sampling_reaches_target() {
        let plan = AdaptivePlan { target_rel: 0.05, min_samples: 1000, max_samples: 100_000 };
        let (e, t) = adaptive_estimate(1, SetId::Ballistic, &plan, 4, 1).unwrap();
        assert!(e.relative_half_width() <= 0.05 && !e.upper_bound);
        assert_eq!(e.n_samples, t.n_samples);
        let tiny = AdaptivePlan { target_rel: 1e-4, min_samples: 1000, max_samples: 3000 };
        let (e, _) = adaptive_estimate(1, SetId::Ballistic, &tiny, 4, 1).unwrap();
        assert!(e.upper_bound);
        assert_eq!(e.n_samples, 3072);
    }

    #[test]
    fn wilson_width_shrinks_like_inverse_root() {
        let a = measure_estimate(1, SetId::Ballistic, 5000, 8, 1).unwrap();
        let b = measure_estimate(1, SetId::Ballistic, 20_000, 8, 1).unwrap();
        let ratio = (a.ci_hi - a.ci_lo) / (b.ci_hi - b.ci_lo);
        assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn distributions_are_consistent_with_tally() {
        let s = spectral_survey(2, 5000, 12, 1).unwrap();
        let t = s.tally();
        let pu = s.pu().unwrap();
        assert_eq!(pu.counts()[0], t.ballistic);
        assert_eq!(pu.counts()[2], t.totally_localised);
        assert!((pu.total_mass() - 1.0).abs() < 1e-12);
        let pm = s.pmax(&Binning::Log { lo: 1.0, hi: 1e3, bins: 30 }).unwrap();
        assert_eq!(pm.point_mass, t.ballistic);
        assert!((pm.total_mass() - 1.0).abs() < 1e-12);
        let binned: u64 = pm.counts().iter().sum();
        assert_eq!(binned + pm.above + pm.below + pm.point_mass, 5000);
    }

    #[test]
    fn collapse_excludes_single_channel() {
        let s1 = spectral_survey(1, 2000, 1, 1).unwrap();
        let s2 = spectral_survey(2, 2000, 1, 1).unwrap();
        let s4 = spectral_survey(4, 2000, 1, 1).unwrap();
        let grid = Binning::Log { lo: 0.5, hi: 20.0, bins: 16 };
        let r = scaling_collapse(&[&s4, &s1, &s2], &grid).unwrap();
        assert_eq!(r.channels, vec![2, 4]);
        assert_eq!(r.sup_distances.len(), 1);
        assert!(r.notes.iter().any(|n| n.contains("d = 1")));
        assert!(scaling_collapse(&[&s1, &s2], &grid).is_err());
    }
}
