//! Transfer spectra of `d`-channel generators and the transport behaviour of
//! the chains they build.
//!
//! For a fixed generator the chain of `n` scatterers has `T_n = T^n`, so its
//! fate is read off the eigenvalues `kappa_i` of `T`. They come in pairs
//! `kappa, 1/conj(kappa)`; `d_u` counts those outside the unit circle.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fit::linear_fit;
use crate::linalg::{self, CMat, EigenDecomposition, C64};
use crate::smatrix::{Reunitarize, ScatteringMatrix, TransferMatrix};

/// Relative width of the band around the unit circle counted as "on" it.
pub const TAU_SPEC: f64 = 1e-8;
/// Eigenvalues closer than this (relative) form one degenerate cluster.
pub const CLUSTER_TOL: f64 = 1e-6;
/// Eigenvector matrices with a smaller reciprocal condition are rejected.
pub const DEFECTIVE_RCOND: f64 = 1e-12;

pub fn count_outside(values: &[C64], tol: f64) -> usize {
    values.iter().filter(|k| k.norm() > 1.0 + tol).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportClass {
    Ballistic,
    PartiallyLocalised,
    TotallyLocalised,
}

impl TransportClass {
    pub fn from_counts(d_u: usize, d: usize) -> Self {
        match d_u {
            0 => TransportClass::Ballistic,
            k if k >= d => TransportClass::TotallyLocalised,
            _ => TransportClass::PartiallyLocalised,
        }
    }
}

fn serialize_spectrum<S: Serializer>(v: &[C64], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|z| [z.re, z.im]))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralClassification {
    pub d: usize,
    /// Eigenvalues of `T[S]` sorted by modulus, then argument.
    #[serde(serialize_with = "serialize_spectrum")]
    pub spectrum: Vec<C64>,
    pub d_u: usize,
    pub label: TransportClass,
    /// `I = log max |kappa|`.
    #[serde(rename = "I")]
    pub decay_rate: f64,
    /// `log min |kappa|` over the eigenvalues outside the circle (0 if none):
    /// the rate of the slowest decaying transient.
    #[serde(rename = "I_min")]
    pub slowest_decay_rate: f64,
    /// `max_i min_j |kappa_j - 1/conj(kappa_i)|`, relative to `|kappa_i|^-1`.
    pub pairing_defect: f64,
}

pub fn pairing_defect(values: &[C64]) -> f64 {
    values
        .iter()
        .map(|k| {
            let partner = C64::new(1.0, 0.0) / k.conj();
            let best = values.iter().map(|q| (q - partner).norm()).fold(f64::INFINITY, f64::min);
            best / partner.norm().max(1.0)
        })
        .fold(0.0, f64::max)
}

fn sort_spectrum(values: &mut [C64]) {
    values.sort_by(|a, b| a.norm().total_cmp(&b.norm()).then(a.arg().total_cmp(&b.arg())));
}

fn classification_from(d: usize, mut values: Vec<C64>, tol: f64) -> SpectralClassification {
    sort_spectrum(&mut values);
    let outside: Vec<f64> = values.iter().map(|k| k.norm()).filter(|&m| m > 1.0 + tol).collect();
    let d_u = outside.len().min(d);
    let decay_rate = if d_u == 0 { 0.0 } else { outside.iter().fold(1.0, |a: f64, &b| a.max(b)).ln() };
    let slowest_decay_rate = if d_u == 0 { 0.0 } else { outside.iter().fold(f64::INFINITY, |a: f64, &b| a.min(b)).ln() };
    SpectralClassification {
        d,
        pairing_defect: pairing_defect(&values),
        spectrum: values,
        d_u,
        label: TransportClass::from_counts(d_u, d),
        decay_rate,
        slowest_decay_rate,
    }
}

/// Spectrum, `d_u` and transport class of the chain generated by `s`.
pub fn classify(s: &ScatteringMatrix, tol: f64) -> Result<SpectralClassification> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    let t = s.to_transfer()?;
    Ok(classification_from(s.channels(), t.eigenvalues(), tol))
}

/// Block-diagonal scatterer that acts independently on each channel.
pub fn decoupled(parts: &[ScatteringMatrix]) -> Result<ScatteringMatrix> {
    if parts.iter().any(|p| p.channels() != 1) || parts.is_empty() {
        return Err(Error::Dimension("decoupled scatterers are built from single-channel parts".into()));
    }
    let d = parts.len();
    let mut m = CMat::zeros(2 * d, 2 * d);
    for (i, p) in parts.iter().enumerate() {
        let q = p.matrix();
        m[(i, i)] = q[(0, 0)];
        m[(i, d + i)] = q[(0, 1)];
        m[(d + i, i)] = q[(1, 0)];
        m[(d + i, d + i)] = q[(1, 1)];
    }
    ScatteringMatrix::from_matrix(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeReport {
    #[serde(serialize_with = "serialize_scalar")]
    pub kappa: C64,
    pub outside: bool,
    /// `v^dagger K v = |alpha|^2 - |beta|^2` for the unit right eigenvector.
    pub k_form: f64,
    pub alpha_norm2: f64,
    pub beta_norm2: f64,
    pub zeta_norm2: f64,
    pub eta_norm2: f64,
    /// Member of a cluster of (near-)equal eigenvalues; norm identities are
    /// not meaningful for individual vectors of such a cluster.
    pub degenerate: bool,
}

fn serialize_scalar<S: Serializer>(z: &C64, s: S) -> std::result::Result<S::Ok, S::Error> {
    [z.re, z.im].serialize(s)
}

/// Right (`v_i = [alpha_i; beta_i]`, columns of `P`) and left
/// (`u_i = [zeta_i, eta_i]`, rows of `P^-1`) eigenvectors of `T[S]`.
#[derive(Debug, Clone)]
pub struct EigenStructure {
    pub classification: SpectralClassification,
    pub values: Vec<C64>,
    pub right: CMat,
    pub left: CMat,
    pub rcond: f64,
    pub modes: Vec<ModeReport>,
    tol: f64,
}

pub fn eigenvector_structure(s: &ScatteringMatrix, tol: f64) -> Result<EigenStructure> {
    let classification = classify(s, tol)?;
    let d = s.channels();
    let t = s.to_transfer()?;
    let eig = EigenDecomposition::new(t.matrix());
    let (left, rcond) = eig.left_vectors().ok_or(Error::Defective(0.0))?;
    if rcond < DEFECTIVE_RCOND {
        return Err(Error::Defective(rcond));
    }
    let values = eig.values.clone();
    let modes = (0..2 * d)
        .map(|i| {
            let v: Vec<C64> = eig.vectors.column(i).iter().copied().collect();
            let u: Vec<C64> = left.row(i).iter().copied().collect();
            let norm2 = |x: &[C64]| x.iter().map(|z| z.norm_sqr()).sum::<f64>();
            let (alpha_norm2, beta_norm2) = (norm2(&v[..d]), norm2(&v[d..]));
            let (zeta_norm2, eta_norm2) = (norm2(&u[..d]), norm2(&u[d..]));
            let k = values[i];
            let degenerate = values
                .iter()
                .enumerate()
                .any(|(j, q)| j != i && (q - k).norm() <= CLUSTER_TOL * k.norm().max(1.0));
            ModeReport {
                kappa: k,
                outside: k.norm() > 1.0 + tol,
                k_form: alpha_norm2 - beta_norm2,
                alpha_norm2,
                beta_norm2,
                zeta_norm2,
                eta_norm2,
                degenerate,
            }
        })
        .collect();
    Ok(EigenStructure { classification, values, right: eig.vectors, left, rcond, modes, tol })
}

/// Non-decaying part of the transmission of `S_n` for a fixed generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlateauValue {
    /// `tr((X~^dagger)^-1 X~^-1)`.
    pub unnormalised: f64,
    /// The same divided by `d`, comparable with the transmission `T_n`.
    pub normalised: f64,
    /// The generator is ballistic; the value is then the full transmission.
    pub degenerate_use: bool,
}

/// Precomputed projections for the plateau of a generator.
///
/// With `X_n = sum_i kappa_i^n beta_i eta_i` the lower-right block of `T^n`,
/// the growing modes `i in K` are removed by restricting `X_n` to the
/// orthogonal complement of `span{beta_i}` on the left and of
/// `span{conj(eta_i)}` on the right (`i in K`). Only the remaining modes
/// contribute to the restricted block, which is assembled directly from
/// them.
#[derive(Debug, Clone)]
pub struct PlateauModel {
    d: usize,
    kept: Vec<(C64, Vec<C64>, Vec<C64>)>,
    rank: usize,
    label: TransportClass,
}

impl PlateauModel {
    pub fn new(es: &EigenStructure) -> Self {
        let d = es.classification.d;
        let label = es.classification.label;
        let outside: Vec<usize> = (0..2 * d).filter(|&i| es.values[i].norm() > 1.0 + es.tol).collect();
        let beta_k = CMat::from_fn(d, outside.len(), |r, c| es.right[(d + r, outside[c])]);
        let eta_k = CMat::from_fn(d, outside.len(), |r, c| es.left[(outside[c], d + r)].conj());
        let u_perp = linalg::orthonormal_complement(&beta_k);
        let v_perp = linalg::orthonormal_complement(&eta_k);
        let rank = d - outside.len();
        let kept = (0..2 * d)
            .filter(|i| !outside.contains(i))
            .map(|i| {
                let beta = CMat::from_fn(d, 1, |r, _| es.right[(d + r, i)]);
                let eta = CMat::from_fn(1, d, |_, c| es.left[(i, d + c)]);
                let b = (u_perp.adjoint() * beta).iter().copied().collect();
                let e = (eta * &v_perp).iter().copied().collect();
                (es.values[i], b, e)
            })
            .collect();
        Self { d, kept, rank, label }
    }

    pub fn at(&self, n: u32) -> PlateauValue {
        let degenerate_use = self.label == TransportClass::Ballistic;
        if self.rank == 0 {
            return PlateauValue { unnormalised: 0.0, normalised: 0.0, degenerate_use };
        }
        let mut x = CMat::zeros(self.rank, self.rank);
        for (k, b, e) in &self.kept {
            let w = k.powu(n);
            if w.norm() == 0.0 {
                continue;
            }
            for r in 0..self.rank {
                for c in 0..self.rank {
                    x[(r, c)] += w * b[r] * e[c];
                }
            }
        }
        let unnormalised: f64 = linalg::singular_values(&x).iter().map(|s| 1.0 / (s * s)).sum();
        PlateauValue { unnormalised, normalised: unnormalised / self.d as f64, degenerate_use }
    }
}

/// Plateau transmission of the chain of `n` copies of `s`.
pub fn plateau_transmission(s: &ScatteringMatrix, n: u32) -> Result<PlateauValue> {
    let es = eigenvector_structure(s, TAU_SPEC)?;
    if es.classification.label == TransportClass::Ballistic {
        log::warn!("plateau requested for a ballistic generator: returning the full transmission");
    }
    Ok(PlateauModel::new(&es).at(n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub n: usize,
    pub t: f64,
    pub r: f64,
    pub unitarity_residual: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EvolveOptions {
    /// Chain to start from; defaults to the generator itself (`S_1 = S`).
    pub initial: Option<ScatteringMatrix>,
    pub policy: Reunitarize,
}

/// Plateau level and oscillation band over the tail of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlateauEstimate {
    pub mean: f64,
    pub band_lo: f64,
    pub band_hi: f64,
    /// `max |T_n - T0_n|` over the window.
    pub max_deviation: f64,
    pub window_start: usize,
}

/// Exponential fit of the transient `|T_n - T0_n| ~ e^{-rate n}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransientFit {
    pub rate: f64,
    pub rate_se: f64,
    pub points: usize,
    /// `rate / I` with `I = log max |kappa|`.
    pub beta_vs_max: f64,
    /// `rate / log min |kappa|` over the outside eigenvalues.
    pub beta_vs_min: f64,
}

impl TransientFit {
    /// Nearest of `{1, 2}` when within 20% of it.
    pub fn beta_class(ratio: f64) -> Option<u8> {
        [1u8, 2].into_iter().find(|&b| ((ratio - b as f64) / b as f64).abs() <= 0.2)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainTrace {
    pub rows: Vec<TraceRow>,
    pub classification: Option<SpectralClassification>,
    /// Normalised plateau `T0_n` for each row, when `S_1 = S`.
    pub plateau_series: Option<Vec<f64>>,
    pub plateau: Option<PlateauEstimate>,
    pub fit: Option<TransientFit>,
    pub min_transmission: f64,
}

/// Deviation below which the transient counts as gone.
const SETTLED: f64 = 1e-6;

/// Grows the chain `S_{n+1} = S_n ⊙ S` up to `n_max` scatterers, recording
/// transport at every length, and analyses the approach to the plateau.
pub fn evolve_chain(gen: &ScatteringMatrix, n_max: usize, opts: &EvolveOptions) -> Result<ChainTrace> {
    if n_max == 0 {
        return Err(Error::invalid("n_max must be positive"));
    }
    let mut s = opts.initial.clone().unwrap_or_else(|| gen.clone());
    if s.channels() != gen.channels() {
        return Err(Error::Dimension("initial chain and generator differ in channel count".into()));
    }
    let mut rows = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        if n > 1 {
            s = s.compose_with(gen, opts.policy).map_err(|e| Error::ChainFailure { n, source: Box::new(e) })?;
        }
        let tr = s.transport();
        rows.push(TraceRow { n, t: s.transmission(), r: tr.r_avg, unitarity_residual: s.unitarity_residual() });
    }
    let min_transmission = rows.iter().map(|r| r.t).fold(f64::INFINITY, f64::min);

    let classification = classify(gen, TAU_SPEC).ok();
    let model = match (&classification, &opts.initial) {
        (Some(_), None) => eigenvector_structure(gen, TAU_SPEC).ok().map(|es| PlateauModel::new(&es)),
        _ => None,
    };
    let plateau_series: Option<Vec<f64>> =
        model.map(|m| rows.iter().map(|r| m.at(r.n as u32).normalised).collect());

    let (plateau, fit) = match (&classification, &plateau_series) {
        (Some(c), Some(t0)) if c.label != TransportClass::Ballistic => analyse_transient(&rows, t0, c),
        _ => (None, None),
    };
    Ok(ChainTrace { rows, classification, plateau_series, plateau, fit, min_transmission })
}

fn analyse_transient(
    rows: &[TraceRow],
    t0: &[f64],
    c: &SpectralClassification,
) -> (Option<PlateauEstimate>, Option<TransientFit>) {
    let dev: Vec<f64> = rows.iter().zip(t0).map(|(r, p)| (r.t - p).abs()).collect();
    // Relative rounding of T_n sets the floor of a resolvable transient.
    let floor = if c.label == TransportClass::TotallyLocalised { 1e-250 } else { 1e-11 };
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .zip(&dev)
        .filter(|(_, &e)| e > floor && e < 1e-2)
        .map(|(r, e)| (r.n as f64, e.ln()))
        .unzip();
    let fit = linear_fit(&xs, &ys).ok().map(|f| TransientFit {
        rate: -f.slope,
        rate_se: f.slope_se,
        points: xs.len(),
        beta_vs_max: -f.slope / c.decay_rate,
        beta_vs_min: -f.slope / c.slowest_decay_rate,
    });

    let window_start = rows.len() - rows.len() / 4;
    let settled = dev.iter().rposition(|&e| e >= SETTLED).map_or(0, |i| i + 1);
    let plateau = (settled <= window_start && window_start < rows.len()).then(|| {
        let tail = &rows[window_start..];
        PlateauEstimate {
            mean: tail.iter().map(|r| r.t).sum::<f64>() / tail.len() as f64,
            band_lo: tail.iter().map(|r| r.t).fold(f64::INFINITY, f64::min),
            band_hi: tail.iter().map(|r| r.t).fold(f64::NEG_INFINITY, f64::max),
            max_deviation: dev[window_start..].iter().copied().fold(0.0, f64::max),
            window_start: rows[window_start].n,
        }
    });
    (plateau, fit)
}

impl TransferMatrix {
    /// Eigenvalues sorted like [`SpectralClassification::spectrum`].
    pub fn sorted_eigenvalues(&self) -> Vec<C64> {
        let mut v = self.eigenvalues();
        sort_spectrum(&mut v);
        v
    }
}
