//! Scattering and transfer matrices of two-port scatterers.
//!
//! A scatterer with `d` channels on each side is described by a `2d x 2d`
//! scattering matrix with the block layout
//!
//! ```text
//!     S = [ r_L  t_R ]        T = [ x1  x2 ]
//!         [ t_L  r_R ]            [ x3  x4 ]
//! ```
//!
//! where `S` maps incoming amplitudes `(a_L, b_R)` to outgoing `(b_L, a_R)`
//! and `T` maps left amplitudes `(a_L, b_L)` to right amplitudes `(a_R, b_R)`.
//! `S` is unitary, `T` is pseudo-unitary with respect to `K = diag(1, -1)`.
//!
//! Chains grow by concatenation ([`ScatteringMatrix::compose`]), which is
//! numerically stable because it never leaves the compact unitary group. The
//! equivalent transfer-matrix product `T_{n+1} = T T_n` is exposed for
//! cross-checks only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, C64, ONE, ZERO};

/// Tolerance for unitarity / pseudo-unitarity validation.
pub const UNITARITY_TOL: f64 = 1e-9;
/// Tolerance for `t_to_s(s_to_t(S)) == S` round trips.
pub const ROUND_TRIP_TOL: f64 = 1e-10;
/// Blocks with a reciprocal condition number below this are treated as singular.
pub const MIN_RCOND: f64 = 1e-12;

fn block(m: &CMat, d: usize, row: usize, col: usize) -> CMat {
    m.view((row * d, col * d), (d, d)).into_owned()
}

fn assemble(d: usize, b11: &CMat, b12: &CMat, b21: &CMat, b22: &CMat) -> CMat {
    let mut m = CMat::zeros(2 * d, 2 * d);
    m.view_mut((0, 0), (d, d)).copy_from(b11);
    m.view_mut((0, d), (d, d)).copy_from(b12);
    m.view_mut((d, 0), (d, d)).copy_from(b21);
    m.view_mut((d, d), (d, d)).copy_from(b22);
    m
}

fn check_blocks(blocks: [&CMat; 4]) -> Result<usize> {
    let d = blocks[0].nrows();
    if d == 0 {
        return Err(Error::Dimension("channel count must be positive".into()));
    }
    for b in blocks {
        if b.shape() != (d, d) {
            return Err(Error::Dimension(format!(
                "block of shape {:?}, expected ({d}, {d})",
                b.shape()
            )));
        }
    }
    Ok(d)
}

fn channels_of(m: &CMat) -> Result<usize> {
    let (r, c) = m.shape();
    if r != c || r == 0 || r % 2 != 0 {
        return Err(Error::Dimension(format!(
            "expected a square matrix of even order, got {r}x{c}"
        )));
    }
    Ok(r / 2)
}

/// Side of the scatterer whose blocks are used for transport averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Projection back onto the unitary group after each concatenation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reunitarize {
    #[default]
    Off,
    /// Polar projection whenever the residual exceeds `UNITARITY_TOL / 10`.
    Polar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringMatrix {
    d: usize,
    m: CMat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    d: usize,
    m: CMat,
}

/// Average transmission / reflection probabilities and their shared variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportStats {
    pub t_avg: f64,
    pub r_avg: f64,
    pub sigma2: f64,
}

impl ScatteringMatrix {
    /// Wraps a `2d x 2d` matrix without checking unitarity.
    pub fn from_matrix(m: CMat) -> Result<Self> {
        let d = channels_of(&m)?;
        if m.iter().any(|z| !z.is_finite()) {
            return Err(Error::invalid("matrix has non-finite entries"));
        }
        Ok(Self { d, m })
    }

    pub fn from_blocks(r_l: &CMat, t_r: &CMat, t_l: &CMat, r_r: &CMat) -> Result<Self> {
        let d = check_blocks([r_l, t_r, t_l, r_r])?;
        Self::from_matrix(assemble(d, r_l, t_r, t_l, r_r))
    }

    /// `r = 0, t = 1`: the identity element of concatenation.
    pub fn perfect_transmitter(d: usize) -> Self {
        let z = CMat::zeros(d, d);
        let i = CMat::identity(d, d);
        Self { d, m: assemble(d, &z, &i, &i, &z) }
    }

    /// `r_L = r_R = 1, t = 0`.
    pub fn perfect_reflector(d: usize) -> Self {
        Self { d, m: CMat::identity(2 * d, 2 * d) }
    }

    pub fn channels(&self) -> usize {
        self.d
    }

    pub fn matrix(&self) -> &CMat {
        &self.m
    }

    pub fn into_matrix(self) -> CMat {
        self.m
    }

    pub fn r_left(&self) -> CMat {
        block(&self.m, self.d, 0, 0)
    }

    pub fn t_right(&self) -> CMat {
        block(&self.m, self.d, 0, 1)
    }

    pub fn t_left(&self) -> CMat {
        block(&self.m, self.d, 1, 0)
    }

    pub fn r_right(&self) -> CMat {
        block(&self.m, self.d, 1, 1)
    }

    /// `max |S^dagger S - 1|`.
    pub fn unitarity_residual(&self) -> f64 {
        linalg::unitarity_residual(&self.m)
    }

    /// True iff `max |S^dagger S - 1| <= tol`.
    pub fn validate(&self, tol: f64) -> Result<bool> {
        if !(tol > 0.0) {
            return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
        }
        Ok(self.unitarity_residual() <= tol)
    }

    /// `max |Pi_x + Sigma_x - 1|` over both sides.
    pub fn block_identity_residual(&self) -> f64 {
        let id = CMat::identity(self.d, self.d);
        let left = self.r_left().adjoint() * self.r_left() + self.t_left().adjoint() * self.t_left();
        let right =
            self.r_right().adjoint() * self.r_right() + self.t_right().adjoint() * self.t_right();
        linalg::max_abs_diff(&left, &id).max(linalg::max_abs_diff(&right, &id))
    }

    /// Transfer matrix `T[S]`. Fails when `t_R` is (nearly) singular.
    pub fn to_transfer(&self) -> Result<TransferMatrix> {
        let (r_l, t_r, t_l, r_r) = (self.r_left(), self.t_right(), self.t_left(), self.r_right());
        let t_r_inv = linalg::guarded_inverse(&t_r, MIN_RCOND)
            .map_err(|rcond| Error::SingularTransmission { block: "t_R", rcond })?;
        let r_r_tinv = &r_r * &t_r_inv;
        let x1 = &t_l - &r_r_tinv * &r_l;
        let x3 = -(&t_r_inv * &r_l);
        Ok(TransferMatrix { d: self.d, m: assemble(self.d, &x1, &r_r_tinv, &x3, &t_r_inv) })
    }

    /// Concatenation `self ⊙ gen`: the generator is attached on the right of
    /// the chain described by `self`.
    pub fn compose(&self, gen: &ScatteringMatrix) -> Result<ScatteringMatrix> {
        if self.d != gen.d {
            return Err(Error::Dimension(format!(
                "cannot concatenate {} and {} channels",
                self.d, gen.d
            )));
        }
        let d = self.d;
        let (rl_n, tr_n, tl_n, rr_n) = (self.r_left(), self.t_right(), self.t_left(), self.r_right());
        let (rl, tr, tl, rr) = (gen.r_left(), gen.t_right(), gen.t_left(), gen.r_right());
        let id = CMat::identity(d, d);

        let l = &id - &rr_n * &rl;
        let l_lu = linalg::guarded_lu(&l, MIN_RCOND)
            .map_err(|rcond| Error::ResonantCavity { block: "L", rcond })?;
        let lp = &id - &rl * &rr_n;
        let lp_lu = linalg::guarded_lu(&lp, MIN_RCOND)
            .map_err(|rcond| Error::ResonantCavity { block: "L'", rcond })?;

        let l_inv_tl_n = l_lu.solve(&tl_n).ok_or(Error::ResonantCavity { block: "L", rcond: 0.0 })?;
        let lp_inv_tr = lp_lu.solve(&tr).ok_or(Error::ResonantCavity { block: "L'", rcond: 0.0 })?;
        let rl_next = &rl_n + &tr_n * &rl * &l_inv_tl_n;
        let tl_next = &tl * &l_inv_tl_n;
        let rr_next = &rr + &tl * &rr_n * &lp_inv_tr;
        let tr_next = &tr_n * &lp_inv_tr;
        Ok(ScatteringMatrix { d, m: assemble(d, &rl_next, &tr_next, &tl_next, &rr_next) })
    }

    pub fn compose_with(&self, gen: &ScatteringMatrix, policy: Reunitarize) -> Result<ScatteringMatrix> {
        let next = self.compose(gen)?;
        match policy {
            Reunitarize::Off => Ok(next),
            Reunitarize::Polar if next.unitarity_residual() > UNITARITY_TOL / 10.0 => {
                Ok(next.reunitarized())
            }
            Reunitarize::Polar => Ok(next),
        }
    }

    /// Nearest unitary matrix (polar projection).
    pub fn reunitarized(&self) -> ScatteringMatrix {
        ScatteringMatrix { d: self.d, m: linalg::polar_unitary(&self.m) }
    }

    /// Transport averages from the left blocks.
    pub fn transport(&self) -> TransportStats {
        self.transport_side(Side::Left)
    }

    /// `R = <r^dagger r>`, `T = 1 - R`, `sigma^2 = (<Pi^2> - R^2) / (d + 1)` with `<.> = tr(.)/d`.
    pub fn transport_side(&self, side: Side) -> TransportStats {
        let r = match side {
            Side::Left => self.r_left(),
            Side::Right => self.r_right(),
        };
        let d = self.d as f64;
        let pi = r.adjoint() * &r;
        let r_avg = pi.trace().re / d;
        let pi2 = (&pi * &pi).trace().re / d;
        let sigma2 = ((pi2 - r_avg * r_avg) / (d + 1.0)).max(0.0);
        TransportStats { t_avg: 1.0 - r_avg, r_avg, sigma2 }
    }

    /// `tr(t_L^dagger t_L) / d` evaluated directly from the transmission block.
    /// Unlike `1 - R` this keeps full relative precision for exponentially
    /// small transmissions.
    pub fn transmission(&self) -> f64 {
        let t = self.t_left();
        t.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.d as f64
    }

    pub fn to_json(&self) -> MatrixFile {
        MatrixFile::from_matrix(&self.m)
    }

    /// Parses the JSON matrix file format and validates unitarity at
    /// [`UNITARITY_TOL`].
    pub fn from_json_str(text: &str) -> Result<LoadedMatrix> {
        let file: MatrixFile = serde_json::from_str(text)?;
        let m = file.to_matrix()?;
        let s = ScatteringMatrix::from_matrix(m)?;
        let residual = s.unitarity_residual();
        if !(residual <= UNITARITY_TOL) {
            return Err(Error::NotUnitary { residual, tol: UNITARITY_TOL });
        }
        Ok(LoadedMatrix { matrix: s, residual })
    }
}

impl TransferMatrix {
    pub fn from_matrix(m: CMat) -> Result<Self> {
        let d = channels_of(&m)?;
        if m.iter().any(|z| !z.is_finite()) {
            return Err(Error::invalid("matrix has non-finite entries"));
        }
        Ok(Self { d, m })
    }

    pub fn identity(d: usize) -> Self {
        Self { d, m: CMat::identity(2 * d, 2 * d) }
    }

    /// `K = diag(1, -1)` in `d x d` blocks.
    pub fn metric(d: usize) -> CMat {
        CMat::from_fn(2 * d, 2 * d, |i, j| match (i == j, i < d) {
            (true, true) => ONE,
            (true, false) => -ONE,
            _ => ZERO,
        })
    }

    pub fn channels(&self) -> usize {
        self.d
    }

    pub fn matrix(&self) -> &CMat {
        &self.m
    }

    pub fn x1(&self) -> CMat {
        block(&self.m, self.d, 0, 0)
    }

    pub fn x2(&self) -> CMat {
        block(&self.m, self.d, 0, 1)
    }

    pub fn x3(&self) -> CMat {
        block(&self.m, self.d, 1, 0)
    }

    pub fn x4(&self) -> CMat {
        block(&self.m, self.d, 1, 1)
    }

    /// `max(|T^dagger K T - K|, |T K T^dagger - K|)` entrywise.
    pub fn pseudo_unitarity_residual(&self) -> f64 {
        let k = Self::metric(self.d);
        let a = self.m.adjoint() * &k * &self.m;
        let b = &self.m * &k * self.m.adjoint();
        linalg::max_abs_diff(&a, &k).max(linalg::max_abs_diff(&b, &k))
    }

    /// Scattering matrix `S[T]`. Fails when `x4` is (nearly) singular.
    pub fn to_scattering(&self) -> Result<ScatteringMatrix> {
        let (x1, x2, x3, x4) = (self.x1(), self.x2(), self.x3(), self.x4());
        let x4_inv = linalg::guarded_inverse(&x4, MIN_RCOND)
            .map_err(|rcond| Error::SingularBlock { block: "x4", rcond })?;
        let x4_inv_x3 = &x4_inv * &x3;
        let r_l = -&x4_inv_x3;
        let t_l = &x1 - &x2 * &x4_inv_x3;
        let r_r = &x2 * &x4_inv;
        Ok(ScatteringMatrix { d: self.d, m: assemble(self.d, &r_l, &x4_inv, &t_l, &r_r) })
    }

    /// Matrix product `self * rhs`, i.e. `rhs` acts first.
    pub fn then_after(&self, rhs: &TransferMatrix) -> Result<TransferMatrix> {
        if self.d != rhs.d {
            return Err(Error::Dimension(format!("{} vs {} channels", self.d, rhs.d)));
        }
        Ok(TransferMatrix { d: self.d, m: &self.m * &rhs.m })
    }

    pub fn powi(&self, n: u32) -> TransferMatrix {
        let mut acc = CMat::identity(2 * self.d, 2 * self.d);
        for _ in 0..n {
            acc = &self.m * &acc;
        }
        TransferMatrix { d: self.d, m: acc }
    }

    pub fn eigenvalues(&self) -> Vec<C64> {
        linalg::eigenvalues(&self.m)
    }
}

/// A matrix file validated on load, with its measured unitarity residual.
#[derive(Debug, Clone)]
pub struct LoadedMatrix {
    pub matrix: ScatteringMatrix,
    pub residual: f64,
}

/// On-disk matrix format: `{"d": int, "re": [[...]], "im": [[...]]}` with
/// row-major `2d x 2d` arrays in the `[[r_L, t_R], [t_L, r_R]]` block layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixFile {
    pub d: usize,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl MatrixFile {
    pub fn from_matrix(m: &CMat) -> Self {
        let n = m.nrows();
        let re = (0..n).map(|i| (0..n).map(|j| m[(i, j)].re).collect()).collect();
        let im = (0..n).map(|i| (0..n).map(|j| m[(i, j)].im).collect()).collect();
        Self { d: n / 2, re, im }
    }

    pub fn to_matrix(&self) -> Result<CMat> {
        if self.d == 0 {
            return Err(Error::Parse("d must be positive".into()));
        }
        let n = self
            .d
            .checked_mul(2)
            .filter(|&n| n <= 4096)
            .ok_or_else(|| Error::Parse(format!("d = {} too large", self.d)))?;
        for (name, rows) in [("re", &self.re), ("im", &self.im)] {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(Error::Parse(format!("\"{name}\" must be a {n}x{n} array")));
            }
        }
        let m = CMat::from_fn(n, n, |i, j| C64::new(self.re[i][j], self.im[i][j]));
        if m.iter().any(|z| !z.is_finite()) {
            return Err(Error::Parse("non-finite entry".into()));
        }
        Ok(m)
    }
}
