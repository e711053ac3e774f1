//! Dense complex linear algebra helpers shared by the matrix, spectral and
//! sampling modules.

use nalgebra::linalg::Schur;
use nalgebra::DMatrix;
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).norm()))
}

/// `max |m^dagger m - 1|` over all entries.
pub fn unitarity_residual(m: &CMat) -> f64 {
    let g = m.adjoint() * m;
    let n = g.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in 0..n {
            let target = if i == j { ONE } else { ZERO };
            worst = worst.max((g[(i, j)] - target).norm());
        }
    }
    worst
}

fn norm_1(m: &CMat) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Inverse together with the 1-norm reciprocal condition number
/// `1 / (|A|_1 |A^-1|_1)`. `None` when LU finds an exact zero pivot.
/// Goes through LU even for small sizes: nalgebra's closed-form inverses up
/// to 4x4 lose several digits on ill-conditioned blocks.
pub fn inverse_with_rcond(a: &CMat) -> Option<(CMat, f64)> {
    let inv = a.clone().lu().try_inverse()?;
    let denom = norm_1(a) * norm_1(&inv);
    if !denom.is_finite() || denom == 0.0 {
        return None;
    }
    Some((inv, 1.0 / denom))
}

/// Inverse that refuses matrices whose reciprocal condition falls below
/// `min_rcond`; the error carries the offending value (0 when singular).
pub fn guarded_inverse(a: &CMat, min_rcond: f64) -> std::result::Result<CMat, f64> {
    match inverse_with_rcond(a) {
        Some((inv, rcond)) if rcond >= min_rcond && inv.iter().all(|z| z.is_finite()) => Ok(inv),
        Some((_, rcond)) => Err(rcond),
        None => Err(0.0),
    }
}

/// LU factorisation that refuses matrices whose reciprocal condition falls
/// below `min_rcond`, for callers that only need `A^-1 B`.
pub fn guarded_lu(a: &CMat, min_rcond: f64) -> std::result::Result<nalgebra::linalg::LU<C64, nalgebra::Dyn, nalgebra::Dyn>, f64> {
    let lu = a.clone().lu();
    let inv = lu.try_inverse().ok_or(0.0)?;
    let denom = norm_1(a) * norm_1(&inv);
    if !denom.is_finite() || denom == 0.0 {
        return Err(0.0);
    }
    let rcond = 1.0 / denom;
    if rcond < min_rcond {
        return Err(rcond);
    }
    Ok(lu)
}

/// Nearest unitary matrix in Frobenius norm (polar factor), `U V^dagger` from the SVD.
pub fn polar_unitary(m: &CMat) -> CMat {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    u * v_t
}

pub fn singular_values(m: &CMat) -> Vec<f64> {
    m.clone().singular_values().iter().copied().collect()
}

/// Eigenvalues of a general complex matrix from its complex Schur form.
pub fn eigenvalues(m: &CMat) -> Vec<C64> {
    let schur = Schur::new(m.clone());
    let (_, t) = schur.unpack();
    (0..t.nrows()).map(|i| t[(i, i)]).collect()
}

/// Right eigen-decomposition `m P = P diag(values)` with unit-norm columns.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: Vec<C64>,
    pub vectors: CMat,
}

impl EigenDecomposition {
    pub fn new(m: &CMat) -> Self {
        let n = m.nrows();
        let (q, t) = Schur::new(m.clone()).unpack();
        let values: Vec<C64> = (0..n).map(|i| t[(i, i)]).collect();
        let scale = max_abs(&t).max(f64::MIN_POSITIVE);
        let small = f64::EPSILON * scale;

        let mut y = CMat::zeros(n, n);
        for k in 0..n {
            let lambda = values[k];
            y[(k, k)] = ONE;
            for i in (0..k).rev() {
                let mut s = ZERO;
                for j in (i + 1)..=k {
                    s += t[(i, j)] * y[(j, k)];
                }
                let mut denom = t[(i, i)] - lambda;
                if denom.norm() < small {
                    // Perturbed pivot for (near-)repeated eigenvalues.
                    denom = C64::new(small, 0.0);
                }
                y[(i, k)] = -s / denom;
            }
        }
        let mut vectors = q * y;
        for mut col in vectors.column_iter_mut() {
            let nrm = col.norm();
            if nrm > 0.0 {
                col /= C64::new(nrm, 0.0);
            }
        }
        Self { values, vectors }
    }

    /// Rows of `P^-1` (left eigenvectors) with the reciprocal condition of `P`.
    pub fn left_vectors(&self) -> Option<(CMat, f64)> {
        inverse_with_rcond(&self.vectors)
    }
}

/// Orthonormal basis of the orthogonal complement of the column span of `v`
/// (assumed full column rank), from a complete Householder QR of `[v | 1]`.
pub fn orthonormal_complement(v: &CMat) -> CMat {
    let n = v.nrows();
    let k = v.ncols();
    if k == 0 {
        return CMat::identity(n, n);
    }
    let mut aug = CMat::zeros(n, k + n);
    aug.view_mut((0, 0), (n, k)).copy_from(v);
    aug.view_mut((0, k), (n, n)).copy_from(&CMat::identity(n, n));
    let q = aug.qr().q();
    q.columns(k, n - k).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_matrix(n: usize) -> CMat {
        CMat::from_fn(n, n, |i, j| {
            C64::new(((i * 7 + j * 3) % 5) as f64 - 2.0, ((i + 2 * j) % 3) as f64 - 0.5)
        })
    }

    #[test]
    fn eigenpairs_satisfy_definition() {
        let m = test_matrix(6);
        let eig = EigenDecomposition::new(&m);
        for (k, lambda) in eig.values.iter().enumerate() {
            let v = eig.vectors.column(k).into_owned();
            let r = &m * &v - &v * *lambda;
            assert!(r.norm() < 1e-10, "residual {}", r.norm());
        }
        let (left, rcond) = eig.left_vectors().unwrap();
        assert!(rcond > 1e-6);
        let id = &left * &eig.vectors;
        assert!(max_abs_diff(&id, &CMat::identity(6, 6)) < 1e-10);
    }

    #[test]
    fn guarded_inverse_rejects_singular() {
        let mut m = CMat::identity(3, 3);
        m[(2, 2)] = ZERO;
        assert!(guarded_inverse(&m, 1e-12).is_err());
        let mut near = CMat::identity(3, 3);
        near[(2, 2)] = C64::new(1e-14, 0.0);
        assert!(guarded_inverse(&near, 1e-12).is_err());
        assert!(guarded_inverse(&CMat::identity(3, 3), 1e-12).is_ok());
    }

    #[test]
    fn complement_is_orthogonal() {
        let v = test_matrix(5).columns(0, 2).into_owned();
        let c = orthonormal_complement(&v);
        assert_eq!(c.shape(), (5, 3));
        assert!(max_abs(&(c.adjoint() * &v)) < 1e-12);
        assert!(unitarity_residual(&c) < 1e-12);
    }

    #[test]
    fn polar_factor_is_unitary() {
        let p = polar_unitary(&test_matrix(4));
        assert!(unitarity_residual(&p) < 1e-12);
    }
}
