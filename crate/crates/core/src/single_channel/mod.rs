//! Lengthening dynamics of single-channel (`d = 1`) chains.
//!
//! A `2 x 2` scatterer is parametrised by its reflection amplitude `A`, the
//! reflection phase `alpha_L` and the transmission phases `beta_L`, `beta_R`:
//!
//! ```text
//!     S = [ A e^{i alpha}     B e^{i beta_R}                       ]
//!         [ B e^{i beta_L}   -A e^{i(beta_L + beta_R - alpha)}     ]
//! ```
//!
//! with `B = sqrt(1 - A^2)` and `lambda = (beta_L + beta_R) / 2`. Appending a
//! generator to a chain reduces to a map on `(A_n, phi_n)` plus the
//! accumulated transmission phases.

mod analysis;
mod disorder;

pub use analysis::{discriminant, eigenvalues_1d, fixed_points, integral_f, FixedPointReport, MARGINAL_BAND};
pub use disorder::{
    decay_rate_series, gaussian_prediction, Amplitude, DecayEnsemble, DecaySample, DisorderModel, Dist,
    GaussianPrediction, MapKind,
};

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMat, C64};
use crate::smatrix::{ScatteringMatrix, UNITARITY_TOL};

/// Reduces an angle to `(-pi, pi]`.
pub fn wrap_pi(x: f64) -> f64 {
    let y = x.rem_euclid(TAU);
    if y > PI {
        y - TAU
    } else {
        y
    }
}

/// Reduces an angle to `[0, 2 pi)`.
pub fn wrap_2pi(x: f64) -> f64 {
    let y = x.rem_euclid(TAU);
    if y >= TAU {
        0.0
    } else {
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleChannelParams {
    pub a: f64,
    /// Transmission amplitude, stored separately so that `B << 1` keeps full
    /// relative precision.
    pub b: f64,
    pub alpha_l: f64,
    pub beta_l: f64,
    pub beta_r: f64,
}

impl SingleChannelParams {
    pub fn new(a: f64, alpha_l: f64, beta_l: f64, beta_r: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::invalid(format!("A = {a} outside [0, 1]")));
        }
        Self::build(a, (1.0 - a * a).sqrt(), alpha_l, beta_l, beta_r)
    }

    /// Parametrisation by the transmission amplitude `B` instead of `A`.
    pub fn from_transmission(b: f64, alpha_l: f64, beta_l: f64, beta_r: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&b) {
            return Err(Error::invalid(format!("B = {b} outside [0, 1]")));
        }
        Self::build((1.0 - b * b).sqrt(), b, alpha_l, beta_l, beta_r)
    }

    /// Symmetric transmission phases `beta_L = beta_R = lambda`.
    pub fn with_lambda(a: f64, lambda: f64, alpha_l: f64) -> Result<Self> {
        Self::new(a, alpha_l, lambda, lambda)
    }

    fn build(a: f64, b: f64, alpha_l: f64, beta_l: f64, beta_r: f64) -> Result<Self> {
        if ![alpha_l, beta_l, beta_r].iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("phases must be finite"));
        }
        Ok(Self { a, b, alpha_l: wrap_2pi(alpha_l), beta_l: wrap_2pi(beta_l), beta_r: wrap_2pi(beta_r) })
    }

    pub fn lambda(&self) -> f64 {
        0.5 * (self.beta_l + self.beta_r)
    }

    pub fn to_smatrix(&self) -> ScatteringMatrix {
        let m = CMat::from_row_slice(
            2,
            2,
            &[
                C64::from_polar(self.a, self.alpha_l),
                C64::from_polar(self.b, self.beta_r),
                C64::from_polar(self.b, self.beta_l),
                -C64::from_polar(self.a, self.beta_l + self.beta_r - self.alpha_l),
            ],
        );
        ScatteringMatrix::from_matrix(m).expect("2x2 with finite entries")
    }

    /// Inverse of [`to_smatrix`](Self::to_smatrix) for any unitary `2 x 2`
    /// matrix. Phases that the matrix does not determine (`alpha_L` when
    /// `A = 0`, the split of `beta_L + beta_R` when `B = 0`) are set to
    /// symmetric defaults.
    pub fn from_smatrix(s: &ScatteringMatrix) -> Result<Self> {
        if s.channels() != 1 {
            return Err(Error::Dimension(format!("expected 1 channel, got {}", s.channels())));
        }
        let residual = s.unitarity_residual();
        if residual > UNITARITY_TOL {
            return Err(Error::NotUnitary { residual, tol: UNITARITY_TOL });
        }
        let m = s.matrix();
        let (r_l, t_r, t_l, r_r) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
        let a = r_l.norm().min(1.0);
        let b = 0.5 * (t_l.norm() + t_r.norm());
        let alpha = if a > 0.0 { r_l.arg() } else { 0.0 };
        let (beta_l, beta_r) = if b > 0.0 {
            (t_l.arg(), t_r.arg())
        } else {
            let sum = (-r_r).arg() + alpha;
            (0.5 * sum, 0.5 * sum)
        };
        Self::build(a, b.min(1.0), alpha, beta_l, beta_r)
    }
}

/// State of a chain of `n` scatterers in map variables.
///
/// `phi = beta_L + beta_R - alpha_L` of the chain; the static-map phase
/// against a generator is `chi = phi + alpha_L(gen)`. Transmission phases
/// are kept unwrapped, `phi` is reduced to `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainState1D {
    pub a: f64,
    pub b: f64,
    pub phi: f64,
    pub beta_l: f64,
    pub beta_r: f64,
    /// `log B_n`, accumulated as a sum of per-step logarithms.
    pub log_b: f64,
    pub n: usize,
}

impl ChainState1D {
    /// The empty chain (perfect transmitter).
    pub fn empty() -> Self {
        Self { a: 0.0, b: 1.0, phi: 0.0, beta_l: 0.0, beta_r: 0.0, log_b: 0.0, n: 0 }
    }

    /// A chain consisting of the single scatterer `p`.
    pub fn from_params(p: &SingleChannelParams) -> Self {
        Self {
            a: p.a,
            b: p.b,
            phi: wrap_pi(p.beta_l + p.beta_r - p.alpha_l),
            beta_l: p.beta_l,
            beta_r: p.beta_r,
            log_b: p.b.ln(),
            n: 1,
        }
    }

    /// A chain with prescribed static-map coordinates `(A_n, chi_n)` against `gen`.
    pub fn from_static(a: f64, chi: f64, gen: &SingleChannelParams) -> Result<Self> {
        if !(0.0..=1.0).contains(&a) || !chi.is_finite() {
            return Err(Error::invalid(format!("invalid static state A = {a}, chi = {chi}")));
        }
        let b = (1.0 - a * a).sqrt();
        Ok(Self { a, b, phi: wrap_pi(chi - gen.alpha_l), beta_l: 0.0, beta_r: 0.0, log_b: b.ln(), n: 1 })
    }

    pub fn chi(&self, gen: &SingleChannelParams) -> f64 {
        wrap_pi(self.phi + gen.alpha_l)
    }

    pub fn alpha_l(&self) -> f64 {
        self.beta_l + self.beta_r - self.phi
    }

    pub fn params(&self) -> SingleChannelParams {
        SingleChannelParams {
            a: self.a,
            b: self.b,
            alpha_l: wrap_2pi(self.alpha_l()),
            beta_l: wrap_2pi(self.beta_l),
            beta_r: wrap_2pi(self.beta_r),
        }
    }

    pub fn to_smatrix(&self) -> ScatteringMatrix {
        self.params().to_smatrix()
    }

    /// Appends `gen` on the right of the chain.
    pub fn step(&self, gen: &SingleChannelParams) -> ChainState1D {
        let chi = self.phi + gen.alpha_l;
        let lambda = gen.lambda();
        if self.a == 1.0 && gen.a == 1.0 {
            // Two perfect reflectors: the numerator and denominator of the
            // amplitude map coincide and the phase advance tends to 2 lambda.
            let half = 0.5 * wrap_pi(chi);
            return ChainState1D {
                a: 1.0,
                b: 0.0,
                phi: wrap_pi(2.0 * lambda - gen.alpha_l),
                beta_l: self.beta_l + gen.beta_l - half,
                beta_r: self.beta_r + gen.beta_r - half,
                log_b: f64::NEG_INFINITY,
                n: self.n + 1,
            };
        }
        let e = C64::from_polar(1.0, chi);
        let one_z = C64::new(1.0, 0.0) + e * (self.a * gen.a);
        let w = e * gen.a + self.a;
        let den = one_z.norm();
        let arg_l = one_z.arg();
        ChainState1D {
            a: (w.norm() / den).min(1.0),
            b: self.b * gen.b / den,
            phi: wrap_pi(self.phi + 2.0 * lambda - (one_z * w).arg()),
            beta_l: self.beta_l + gen.beta_l - arg_l,
            beta_r: self.beta_r + gen.beta_r - arg_l,
            log_b: self.log_b + gen.b.ln() - den.ln(),
            n: self.n + 1,
        }
    }

    /// Strong-disorder approximation of [`step`](Self::step): the chain is
    /// treated as a near-perfect reflector (`A_n = 1`), so `B_{n+1} = B_n f(B, chi)`
    /// with `f(B, y) = B / |1 + A e^{iy}|` and `phi` advances by
    /// `2 lambda - 2 arg(1 + A e^{i chi})`.
    pub fn approx_step(&self, gen: &SingleChannelParams) -> ChainState1D {
        let chi = self.phi + gen.alpha_l;
        let q = C64::new(1.0, 0.0) + C64::from_polar(gen.a, chi);
        let den = q.norm();
        let arg_l = q.arg();
        ChainState1D {
            a: 1.0,
            b: self.b * gen.b / den,
            phi: wrap_pi(self.phi + 2.0 * gen.lambda() - 2.0 * arg_l),
            beta_l: self.beta_l + gen.beta_l - arg_l,
            beta_r: self.beta_r + gen.beta_r - arg_l,
            log_b: self.log_b + gen.b.ln() - den.ln(),
            n: self.n + 1,
        }
    }
}

/// Autonomous map: one step with a fixed generator.
pub fn static_step(state: &ChainState1D, gen: &SingleChannelParams) -> ChainState1D {
    state.step(gen)
}

/// Non-autonomous map: one step with the generator drawn for this position.
pub fn noisy_step(state: &ChainState1D, gen: &SingleChannelParams) -> ChainState1D {
    state.step(gen)
}

/// Logarithm of the approximate per-step transmission factor `f(B, y)`.
pub fn log_f(b: f64, y: f64) -> f64 {
    let a2 = 1.0 - b * b;
    b.ln() - 0.5 * (1.0 + 2.0 * a2.sqrt() * y.cos() + a2).ln()
}
