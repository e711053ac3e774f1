use std::f64::consts::{FRAC_PI_2, PI};

use serde::Serialize;

use super::{wrap_pi, ChainState1D, SingleChannelParams};
use crate::error::{Error, Result};
use crate::linalg::C64;

/// `|D|` below this is treated as the marginal case `D = 0`.
pub const MARGINAL_BAND: f64 = 1e-12;

/// `D = A^2 - sin^2 lambda`; negative for ballistic, positive for localising generators.
pub fn discriminant(gen: &SingleChannelParams) -> f64 {
    let s = gen.lambda().sin();
    gen.a * gen.a - s * s
}

/// Transfer-matrix eigenvalues `e^{i delta} (cos lambda -/+ sqrt D) / B` with
/// `delta = (beta_L - beta_R) / 2`, ordered by modulus.
pub fn eigenvalues_1d(gen: &SingleChannelParams) -> Result<(C64, C64)> {
    if gen.b == 0.0 {
        return Err(Error::DegenerateTransfer);
    }
    let phase = C64::from_polar(1.0 / gen.b, 0.5 * (gen.beta_l - gen.beta_r));
    let root = C64::new(discriminant(gen), 0.0).sqrt();
    let c = C64::new(gen.lambda().cos(), 0.0);
    let (k1, k2) = (phase * (c - root), phase * (c + root));
    Ok(if k1.norm() <= k2.norm() { (k1, k2) } else { (k2, k1) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FixedPointReport {
    /// Ballistic generator: centre of the family of invariant curves.
    Elliptic { a: f64, chi: f64 },
    /// Localising generator: `A = 1` with the stable phase. `contraction` is
    /// `|kappa_1|`, the per-step factor by which `B_n` shrinks near it.
    Attractor { a: f64, chi: f64, repeller_chi: f64, contraction: f64 },
}

impl FixedPointReport {
    pub fn point(&self) -> (f64, f64) {
        match *self {
            FixedPointReport::Elliptic { a, chi } | FixedPointReport::Attractor { a, chi, .. } => (a, chi),
        }
    }
}

pub fn fixed_points(gen: &SingleChannelParams) -> Result<FixedPointReport> {
    let d = discriminant(gen);
    if d.abs() < MARGINAL_BAND {
        return Err(Error::Marginal(d));
    }
    let lambda = gen.lambda();
    let s = lambda.sin();
    if d < 0.0 {
        // A_e = u - sqrt(u^2 - 1) with u = sin(lambda) / A, written so that it
        // stays finite as A -> 0 and takes |u| for negative sin(lambda).
        let a = gen.a / (s.abs() + (s * s - gen.a * gen.a).sqrt());
        let chi = [-1.0, 0.0, 1.0]
            .iter()
            .map(|m| wrap_pi(lambda + FRAC_PI_2 + m * PI))
            .find(|c| !(-FRAC_PI_2 < *c && *c < FRAC_PI_2))
            .expect("one of three candidates lies outside (-pi/2, pi/2)");
        return Ok(FixedPointReport::Elliptic { a, chi });
    }
    // On A_n = 1 the phase is fixed where sin(chi - lambda) = sin(lambda) / A.
    // Of the two solutions the attractor is the one where the transmission
    // contracts, |1 + A e^{i chi}| > B.
    let asin = (s / gen.a).clamp(-1.0, 1.0).asin();
    let candidates = [wrap_pi(lambda + asin), wrap_pi(lambda + PI - asin)];
    let modulus = |chi: f64| (C64::new(1.0, 0.0) + C64::from_polar(gen.a, chi)).norm();
    let (chi, repeller_chi) = if modulus(candidates[0]) >= modulus(candidates[1]) {
        (candidates[0], candidates[1])
    } else {
        (candidates[1], candidates[0])
    };
    Ok(FixedPointReport::Attractor { a: 1.0, chi, repeller_chi, contraction: gen.b / modulus(chi) })
}

/// Integral of motion `F = (sin lambda + A_n A sin(lambda - chi_n)) / (1 - A_n^2)`
/// of the static map.
pub fn integral_f(state: &ChainState1D, gen: &SingleChannelParams) -> Result<f64> {
    if state.b == 0.0 || state.a >= 1.0 {
        return Err(Error::IntegralUndefined);
    }
    let lambda = gen.lambda();
    let chi = state.chi(gen);
    Ok((lambda.sin() + state.a * gen.a * (lambda - chi).sin()) / (state.b * state.b))
}
