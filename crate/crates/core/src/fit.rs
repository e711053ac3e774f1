//! Least-squares fits of the scaling laws measured on Haar ensembles.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::haar::MeasureEstimate;
use crate::stats::Z95;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    /// Weighted sum of squared residuals.
    pub residual: f64,
}

/// Weighted least squares `y = slope x + intercept`. Standard errors are
/// scaled by the reduced residual when more than two points are given, so
/// weights only need to be correct up to a common factor.
pub fn weighted_linear_fit(x: &[f64], y: &[f64], w: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() != w.len() {
        return Err(Error::Dimension("fit inputs differ in length".into()));
    }
    if x.len() < 2 {
        return Err(Error::invalid("a line needs at least two points"));
    }
    if w.iter().any(|&v| !(v > 0.0) || !v.is_finite()) || x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("fit inputs must be finite with positive weights"));
    }
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - xm).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::invalid("abscissae are all equal"));
    }
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (a - xm) * (c - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let residual: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (c - slope * a - intercept).powi(2)).sum();
    let scale = if x.len() > 2 { residual / (x.len() - 2) as f64 } else { 1.0 };
    let slope_var = scale / sxx;
    let intercept_var = scale * (1.0 / sw + xm * xm / sxx);
    Ok(LinearFit { slope, intercept, slope_se: slope_var.sqrt(), intercept_se: intercept_var.sqrt(), residual })
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    weighted_linear_fit(x, y, &vec![1.0; x.len()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub params: BTreeMap<String, f64>,
    pub stderr: BTreeMap<String, f64>,
    pub residual: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl FitResult {
    pub fn param(&self, name: &str) -> f64 {
        self.params.get(name).copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingModel {
    /// `mu(M_b) = Omega exp(-omega d (d + 1))`.
    Ballistic,
    /// `mu(M_l*) = Z exp(-zeta sqrt(d))`.
    TotallyLocalised,
}

impl ScalingModel {
    pub fn abscissa(&self, d: usize) -> f64 {
        let d = d as f64;
        match self {
            ScalingModel::Ballistic => d * (d + 1.0),
            ScalingModel::TotallyLocalised => d.sqrt(),
        }
    }

    fn names(&self) -> (&'static str, &'static str, &'static str) {
        match self {
            ScalingModel::Ballistic => ("ballistic", "omega", "Omega"),
            ScalingModel::TotallyLocalised => ("total_localised", "zeta", "Z"),
        }
    }
}

/// Fits `-log mu = rate x - log(prefactor)` by weighted least squares with
/// weights `1 / var(log mu)`, the variance taken from the Wilson interval
/// through the delta method. Zero-hit estimates are dropped with a note.
pub fn fit_measure_scaling(points: &[MeasureEstimate], model: ScalingModel) -> Result<FitResult> {
    let (name, rate, prefactor) = model.names();
    let mut notes = Vec::new();
    let (mut x, mut y, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for p in points {
        if p.hits == 0 {
            let msg = format!("d = {}: no hits in {} samples, excluded", p.d, p.n_samples);
            log::warn!("{msg}");
            notes.push(msg);
            continue;
        }
        let sd = (p.ci_hi - p.ci_lo) / (2.0 * Z95);
        let var_log = (sd / p.estimate).powi(2);
        x.push(model.abscissa(p.d));
        y.push(-p.estimate.ln());
        w.push(1.0 / var_log);
    }
    if x.len() < 3 {
        return Err(Error::invalid(format!("{name} fit needs at least 3 points with hits, got {}", x.len())));
    }
    let f = weighted_linear_fit(&x, &y, &w)?;
    let pre = (-f.intercept).exp();
    Ok(FitResult {
        model: name.to_string(),
        params: BTreeMap::from([(rate.to_string(), f.slope), (prefactor.to_string(), pre)]),
        stderr: BTreeMap::from([(rate.to_string(), f.slope_se), (prefactor.to_string(), pre * f.intercept_se)]),
        residual: f.residual,
        notes,
    })
}

/// Power-law exponent of a density tail: weighted fit of log density against
/// log bin centre over `bins` logarithmic bins spanning `[lo, hi]`, weights
/// equal to bin counts. `total` is the full sample size used for the density.
pub fn fit_tail_exponent(values: &[f64], total: usize, lo: f64, hi: f64, bins: usize) -> Result<FitResult> {
    if !(0.0 < lo && lo < hi) || bins < 3 || total == 0 {
        return Err(Error::invalid("tail window needs 0 < lo < hi, three bins and samples"));
    }
    let edges: Vec<f64> = (0..=bins).map(|i| (lo.ln() + (hi / lo).ln() * i as f64 / bins as f64).exp()).collect();
    let mut counts = vec![0u64; bins];
    for &v in values {
        if v >= lo && v < hi {
            let k = edges.partition_point(|&e| e <= v) - 1;
            counts[k.min(bins - 1)] += 1;
        }
    }
    let (mut x, mut y, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for (k, &c) in counts.iter().enumerate() {
        if c > 0 {
            let width = edges[k + 1] - edges[k];
            x.push((edges[k] * edges[k + 1]).sqrt().ln());
            y.push((c as f64 / (total as f64 * width)).ln());
            w.push(c as f64);
        }
    }
    if x.len() < 3 {
        return Err(Error::invalid("too few occupied tail bins"));
    }
    let f = weighted_linear_fit(&x, &y, &w)?;
    Ok(FitResult {
        model: "power_tail".to_string(),
        params: BTreeMap::from([("exponent".to_string(), f.slope), ("log_amplitude".to_string(), f.intercept)]),
        stderr: BTreeMap::from([("exponent".to_string(), f.slope_se), ("log_amplitude".to_string(), f.intercept_se)]),
        residual: f.residual,
        notes: vec![format!("window [{lo}, {hi}], {} occupied bins", x.len())],
    })
}

/// Amplitude `a` of a tail `a x^-3` from the probability mass in `[lo, hi)`:
/// `P = a (lo^-2 - hi^-2) / 2`, with a binomial standard error.
pub fn fit_cubic_tail_amplitude(values: &[f64], total: usize, lo: f64, hi: f64) -> Result<FitResult> {
    if !(0.0 < lo && lo < hi) || total == 0 {
        return Err(Error::invalid("amplitude window needs 0 < lo < hi and samples"));
    }
    let hits = values.iter().filter(|&&v| v >= lo && v < hi).count() as f64;
    let p = hits / total as f64;
    let norm = 0.5 * (lo.powi(-2) - hi.powi(-2));
    let se = (p * (1.0 - p) / total as f64).sqrt() / norm;
    Ok(FitResult {
        model: "cubic_tail_amplitude".to_string(),
        params: BTreeMap::from([("a".to_string(), p / norm)]),
        stderr: BTreeMap::from([("a".to_string(), se)]),
        residual: 0.0,
        notes: vec![format!("window [{lo}, {hi}), {hits} samples")],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haar::SetId;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn noiseless_lines_are_recovered(slope in -5.0f64..5.0, intercept in -5.0f64..5.0) {
            let x = [1.0, 2.0, 4.0, 7.0, 11.0];
            let y: Vec<f64> = x.iter().map(|v| slope * v + intercept).collect();
            let f = weighted_linear_fit(&x, &y, &[1.0, 3.0, 0.5, 2.0, 1.0]).unwrap();
            prop_assert!((f.slope - slope).abs() < 1e-12);
            prop_assert!((f.intercept - intercept).abs() < 1e-12);
        }
    }

    #[test]
    fn refits_are_bit_identical() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [0.1, 0.9, 2.2, 2.8];
        let a = linear_fit(&x, &y).unwrap();
        let b = linear_fit(&x, &y).unwrap();
        assert_eq!(a, b);
        assert!(a.slope_se > 0.0);
    }

    fn synthetic(model: ScalingModel, rate: f64, pre: f64, ds: &[usize]) -> Vec<MeasureEstimate> {
        ds.iter()
            .map(|&d| {
                let mu = pre * (-rate * model.abscissa(d)).exp();
                let n = 1_000_000_000u64;
                let mut e = MeasureEstimate::new(SetId::Ballistic, d, n, (mu * n as f64).round() as u64);
                e.estimate = mu;
                e
            })
            .collect()
    }

    #[test]
    fn exact_exponentials_are_recovered() {
        let pts = synthetic(ScalingModel::Ballistic, 0.4658, 1.27, &[1, 2, 3]);
        let f = fit_measure_scaling(&pts, ScalingModel::Ballistic).unwrap();
        assert!((f.param("omega") - 0.4658).abs() < 1e-12);
        assert!((f.param("Omega") - 1.27).abs() < 1e-12);
        let pts = synthetic(ScalingModel::TotallyLocalised, 1.034, 1.4, &[1, 2, 4, 8]);
        let f = fit_measure_scaling(&pts, ScalingModel::TotallyLocalised).unwrap();
        assert!((f.param("zeta") - 1.034).abs() < 1e-12);
        assert_eq!(f.model, "total_localised");
    }

    #[test]
    fn zero_hits_are_excluded() {
        let mut pts = synthetic(ScalingModel::Ballistic, 0.5, 1.0, &[1, 2, 3, 4]);
        pts[3] = MeasureEstimate::new(SetId::Ballistic, 4, 1000, 0);
        let f = fit_measure_scaling(&pts, ScalingModel::Ballistic).unwrap();
        assert_eq!(f.notes.len(), 1);
        pts[2] = MeasureEstimate::new(SetId::Ballistic, 3, 1000, 0);
        assert!(fit_measure_scaling(&pts, ScalingModel::Ballistic).is_err());
    }

    #[test]
    fn tail_fits_recover_pareto_law() {
        // Deterministic quantiles of the density 2 x^-3 on [1, inf).
        let n = 200_000;
        let v: Vec<f64> = (0..n).map(|i| (1.0 - (i as f64 + 0.5) / n as f64).powf(-0.5)).collect();
        let e = fit_tail_exponent(&v, n, 3.0, 30.0, 12).unwrap();
        assert!((e.param("exponent") + 3.0).abs() < 0.02, "{e:?}");
        let a = fit_cubic_tail_amplitude(&v, n, 3.0, 30.0).unwrap();
        assert!((a.param("a") - 2.0).abs() < 0.01, "{a:?}");
    }
}
