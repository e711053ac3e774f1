//! Histogram and moment accumulators for Monte Carlo observables, plus the
//! small set of test statistics the experiments need.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Binning {
    Linear { lo: f64, hi: f64, bins: usize },
    Log { lo: f64, hi: f64, bins: usize },
    Edges { edges: Vec<f64> },
}

impl Binning {
    pub fn edges(&self) -> Result<Vec<f64>> {
        let edges = match *self {
            Binning::Linear { lo, hi, bins } => {
                check_range(lo, hi, bins)?;
                (0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect()
            }
            Binning::Log { lo, hi, bins } => {
                check_range(lo, hi, bins)?;
                if lo <= 0.0 {
                    return Err(Error::invalid("logarithmic bins need lo > 0"));
                }
                let (a, b) = (lo.ln(), hi.ln());
                let mut e: Vec<f64> =
                    (0..=bins).map(|i| (a + (b - a) * i as f64 / bins as f64).exp()).collect();
                e[0] = lo;
                e[bins] = hi;
                e
            }
            Binning::Edges { ref edges } => {
                if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::invalid("bin edges must be strictly increasing"));
                }
                edges.clone()
            }
        };
        Ok(edges)
    }
}

fn check_range(lo: f64, hi: f64, bins: usize) -> Result<()> {
    if bins == 0 {
        return Err(Error::invalid("bins must be at least 1"));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::invalid(format!("invalid bin range [{lo}, {hi}]")));
    }
    Ok(())
}

/// Streaming central moments up to third order; mergeable.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    m2: f64,
    m3: f64,
    pub min: f64,
    pub max: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        let n1 = self.n as f64;
        self.n += 1;
        let n = self.n as f64;
        let delta = x - self.mean;
        let delta_n = delta / n;
        let term1 = delta * delta_n * n1;
        self.mean += delta_n;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
        if self.n == 1 {
            self.min = x;
            self.max = x;
        } else {
            self.min = self.min.min(x);
            self.max = self.max.max(x);
        }
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta = other.mean - self.mean;
        let m2 = self.m2 + other.m2 + delta * delta * na * nb / n;
        let m3 = self.m3
            + other.m3
            + delta.powi(3) * na * nb * (na - nb) / (n * n)
            + 3.0 * delta * (na * other.m2 - nb * self.m2) / n;
        self.mean += delta * nb / n;
        self.m2 = m2;
        self.m3 = m3;
        self.n += other.n;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        self.m2 / (self.n as f64 - 1.0)
    }

    /// Moment-based sample skewness `g1 = m3 / m2^(3/2)`.
    pub fn skewness(&self) -> f64 {
        if self.n < 3 || self.m2 == 0.0 {
            return f64::NAN;
        }
        let n = self.n as f64;
        (self.m3 / n) / (self.m2 / n).powf(1.5)
    }

    /// Standard error of `g1` for normal data.
    pub fn skewness_stderr(&self) -> f64 {
        let n = self.n as f64;
        (6.0 * n * (n - 1.0) / ((n - 2.0) * (n + 1.0) * (n + 3.0))).sqrt()
    }
}

/// One histogram bin with its normalised density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: u64,
    pub density: f64,
}

/// Histogram over fixed edges plus moments of every finite sample.
///
/// Normalisation counts every pushed observation (in range, out of range,
/// non-finite and the separate point mass), so
/// `sum(density * width) + (below + above + non_finite + point_mass) / total == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    edges: Vec<f64>,
    counts: Vec<u64>,
    pub below: u64,
    pub above: u64,
    pub non_finite: u64,
    pub point_mass: u64,
    pub moments: Moments,
}

impl EnsembleStats {
    pub fn new(binning: &Binning) -> Result<Self> {
        let edges = binning.edges()?;
        let counts = vec![0; edges.len() - 1];
        Ok(Self { edges, counts, below: 0, above: 0, non_finite: 0, point_mass: 0, moments: Moments::default() })
    }

    pub fn from_samples(binning: &Binning, samples: &[f64]) -> Result<Self> {
        let mut s = Self::new(binning)?;
        samples.iter().for_each(|&x| s.push(x));
        Ok(s)
    }

    pub fn push(&mut self, x: f64) {
        if !x.is_finite() {
            self.non_finite += 1;
            return;
        }
        self.moments.push(x);
        let last = *self.edges.last().expect("at least two edges");
        if x < self.edges[0] {
            self.below += 1;
        } else if x > last {
            self.above += 1;
        } else {
            // Upper edge is inclusive for the last bin.
            let k = self.edges.partition_point(|&e| e <= x).saturating_sub(1);
            let k = k.min(self.counts.len() - 1);
            self.counts[k] += 1;
        }
    }

    /// Records an observation that belongs to a separately reported atom
    /// (e.g. the `t = 1` mass of ballistic samples) rather than to the bins.
    pub fn push_point_mass(&mut self) {
        self.point_mass += 1;
    }

    pub fn merge(&mut self, other: &EnsembleStats) -> Result<()> {
        if self.edges != other.edges {
            return Err(Error::invalid("cannot merge histograms with different edges"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.below += other.below;
        self.above += other.above;
        self.non_finite += other.non_finite;
        self.point_mass += other.point_mass;
        self.moments.merge(&other.moments);
        Ok(())
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn binned(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.binned() + self.below + self.above + self.non_finite + self.point_mass
    }

    pub fn rows(&self) -> Vec<HistRow> {
        let total = self.total().max(1) as f64;
        self.edges
            .windows(2)
            .zip(&self.counts)
            .map(|(w, &count)| HistRow {
                bin_lo: w[0],
                bin_hi: w[1],
                count,
                density: count as f64 / (total * (w[1] - w[0])),
            })
            .collect()
    }

    /// Total probability mass: binned mass plus every out-of-bin category.
    pub fn total_mass(&self) -> f64 {
        let total = self.total().max(1) as f64;
        let binned: f64 = self.rows().iter().map(|r| r.density * (r.bin_hi - r.bin_lo)).sum();
        binned + (self.below + self.above + self.non_finite + self.point_mass) as f64 / total
    }

    pub fn mean(&self) -> f64 {
        self.moments.mean
    }

    pub fn variance(&self) -> f64 {
        self.moments.variance()
    }
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(hits: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if hits == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if hits as f64 == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

pub fn normal_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd).map(|n| n.cdf(x)).unwrap_or(f64::NAN)
}

/// One-sample Kolmogorov–Smirnov distance `sup |F_n - F|`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0_f64, |acc, (i, &x)| {
        let f = cdf(x);
        acc.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
    })
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a: Vec<f64> = a.iter().copied().filter(|x| x.is_finite()).collect();
    let mut b: Vec<f64> = b.iter().copied().filter(|x| x.is_finite()).collect();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0_f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic Kolmogorov coefficient `c(alpha) = sqrt(-ln(alpha/2) / 2)`.
pub fn ks_coefficient(alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt()
}

/// Critical one-sample KS distance at level `alpha` for `n` samples.
pub fn ks_critical(alpha: f64, n: usize) -> f64 {
    ks_coefficient(alpha) / (n as f64).sqrt()
}

pub fn ks_critical_two_sample(alpha: f64, n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    ks_coefficient(alpha) * ((n + m) / (n * m)).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}
