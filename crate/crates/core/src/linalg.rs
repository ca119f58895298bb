//! Dense linear-algebra kernels for the small matrices that show up in
//! triangulation (a few hundred rows at most).
//!
//! Everything here is a thin contract layer over `nalgebra`: results are
//! sorted, checked for finiteness and reported through [`Error`] rather than
//! `Option`.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Absolute floor used when scaling relative tolerances.
pub const ABS_FLOOR: f64 = 1e-14;

/// A real symmetric matrix.
///
/// Construction either checks symmetry ([`SymmetricMatrix::new`]) or enforces it
/// by averaging with the transpose ([`SymmetricMatrix::symmetrize`]). The
/// stored matrix is always exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    /// Wraps `m`, which must be square and symmetric to within `1e-12` relative.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidInput(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidInput("empty matrix".into()));
        }
        check_finite(&m)?;
        let tol = 1e-12 * (m.norm() + ABS_FLOOR);
        for i in 0..m.nrows() {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > tol {
                    return Err(Error::InvalidInput(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self::symmetrize(m))
    }

    /// Returns `(m + mᵀ) / 2`. Panics if `m` is not square.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "symmetrize needs a square matrix");
        let t = m.transpose();
        Self((m + t) * 0.5)
    }

    pub fn identity(k: usize) -> Self {
        Self(DMatrix::identity(k, k))
    }

    pub fn zeros(k: usize) -> Self {
        Self(DMatrix::zeros(k, k))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    /// Trace inner product `⟨A, B⟩ = Σ A_ij B_ij`.
    pub fn inner(&self, other: &SymmetricMatrix) -> f64 {
        self.0.dot(&other.0)
    }

    /// `xᵀ A x`.
    pub fn quadratic_form(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.0 * x))
    }
}

impl std::ops::Index<(usize, usize)> for SymmetricMatrix {
    type Output = f64;

    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

/// Eigen-decomposition of a symmetric matrix with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct EigDecomposition {
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns, in eigenvalue order.
    pub eigenvectors: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    /// Nonnegative, descending.
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("matrix has non-finite entries".into()))
    }
}

pub fn sym_eig(a: &SymmetricMatrix) -> Result<EigDecomposition> {
    check_finite(a.as_matrix())?;
    let eig = a.as_matrix().clone().symmetric_eigen();
    let k = a.dim();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let eigenvalues = DVector::from_iterator(k, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = DMatrix::zeros(k, k);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(EigDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

pub fn min_eigenvalue(a: &SymmetricMatrix) -> Result<f64> {
    check_finite(a.as_matrix())?;
    let vals = a.as_matrix().symmetric_eigenvalues();
    Ok(vals.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Thin SVD: for an `m×n` input, `u` is `m×r`, `v` is `n×r` with `r = min(m, n)`.
pub fn svd(a: &DMatrix<f64>) -> Result<Svd> {
    check_finite(a)?;
    if a.is_empty() {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    let dec = a.clone().svd(true, true);
    let (u, v_t) = match (dec.u, dec.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::InvalidInput("SVD did not converge".into())),
    };
    let r = dec.singular_values.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| dec.singular_values[j].total_cmp(&dec.singular_values[i]));
    let mut su = DMatrix::zeros(u.nrows(), r);
    let mut sv = DMatrix::zeros(v_t.ncols(), r);
    let mut s = DVector::zeros(r);
    for (dst, &src) in order.iter().enumerate() {
        su.set_column(dst, &u.column(src));
        sv.set_column(dst, &v_t.row(src).transpose());
        s[dst] = dec.singular_values[src];
    }
    Ok(Svd {
        u: su,
        singular_values: s,
        v: sv,
    })
}

/// Lower-triangular Cholesky factor, or [`Error::NotPositiveDefinite`].
pub fn cholesky(a: &SymmetricMatrix) -> Result<DMatrix<f64>> {
    check_finite(a.as_matrix())?;
    nalgebra::linalg::Cholesky::new(a.as_matrix().clone())
        .map(|c| c.l())
        .ok_or(Error::NotPositiveDefinite)
}

/// Ratio of largest to smallest singular value; infinite when singular.
pub fn condition_number(a: &DMatrix<f64>) -> Result<f64> {
    let s = svd(a)?.singular_values;
    let smax = s[0];
    let smin = s[s.len() - 1];
    Ok(if smin > 0.0 { smax / smin } else { f64::INFINITY })
}

/// Solves `A x = b` for square `A` by partial-pivoting LU.
pub fn solve_linear(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::InvalidInput("solve_linear needs a square matrix".into()));
    }
    if b.len() != a.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: b.len(),
        });
    }
    check_finite(a)?;
    if !b.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("right-hand side has non-finite entries".into()));
    }
    let condition = condition_number(a)?;
    if !(condition < 1e14) {
        return Err(Error::Singular { condition });
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or(Error::Singular { condition })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sym(rows: usize, data: &[f64]) -> SymmetricMatrix {
        SymmetricMatrix::new(DMatrix::from_row_slice(rows, rows, data)).unwrap()
    }

    fn random_symmetric(k: usize, entries: &[f64]) -> SymmetricMatrix {
        let m = DMatrix::from_fn(k, k, |i, j| entries[i * k + j]);
        SymmetricMatrix::symmetrize(m)
    }

    #[test]
    fn eig_identity_and_diagonal() {
        let e = sym_eig(&SymmetricMatrix::identity(3)).unwrap();
        assert_eq!(e.eigenvalues.as_slice(), &[1.0, 1.0, 1.0]);
        let e = sym_eig(&SymmetricMatrix::from_diagonal(&[2.0, -1.0])).unwrap();
        assert_eq!(e.eigenvalues.as_slice(), &[-1.0, 2.0]);
    }

    #[test]
    fn eig_swap_matrix() {
        // Characteristic polynomial λ² - 1: eigenvalues ∓1 with vectors (1, ∓1)/√2.
        let e = sym_eig(&sym(2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert!((e.eigenvalues[0] + 1.0).abs() < 1e-14);
        assert!((e.eigenvalues[1] - 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v0 = e.eigenvectors.column(0);
        let v1 = e.eigenvectors.column(1);
        assert!((v0[0].abs() - h).abs() < 1e-12 && (v0[0] + v0[1]).abs() < 1e-12);
        assert!((v1[0].abs() - h).abs() < 1e-12 && (v1[0] - v1[1]).abs() < 1e-12);
    }

    #[test]
    fn eig_rejects_nan() {
        let m = SymmetricMatrix(DMatrix::from_element(2, 2, f64::NAN));
        assert!(matches!(sym_eig(&m), Err(Error::InvalidInput(_))));
        assert!(matches!(min_eigenvalue(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn new_rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 1.0]);
        assert!(SymmetricMatrix::new(m).is_err());
    }

    #[test]
    fn min_eig_examples() {
        assert_eq!(min_eigenvalue(&SymmetricMatrix::identity(5)).unwrap(), 1.0);
        let d = SymmetricMatrix::from_diagonal(&[3.0, -0.5, 7.0]);
        assert_eq!(min_eigenvalue(&d).unwrap(), -0.5);
        let m = sym(2, &[1.0, 0.5, 0.5, 1.0]);
        assert!((min_eigenvalue(&m).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn svd_examples() {
        let s = svd(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(s.singular_values.as_slice(), &[1.0, 1.0, 1.0]);
        let s = svd(&DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 4.0]))).unwrap();
        assert_eq!(s.singular_values.as_slice(), &[4.0, 0.0]);

        // ‖u‖ = 2, ‖v‖ = 3: the only nonzero singular value is 6.
        let u = DVector::from_vec(vec![2.0, 0.0, 0.0, 0.0]);
        let v = DVector::from_vec(vec![0.0, 3.0 / 5.0 * 3.0, 4.0 / 5.0 * 3.0]);
        let s = svd(&(&u * v.transpose())).unwrap();
        assert!((s.singular_values[0] - 6.0).abs() < 1e-12);
        assert!(s.singular_values[1].abs() < 1e-12);
        assert!(s.singular_values[2].abs() < 1e-12);
    }

    #[test]
    fn cholesky_examples() {
        assert_eq!(
            cholesky(&SymmetricMatrix::identity(4)).unwrap(),
            DMatrix::identity(4, 4)
        );
        let l = cholesky(&sym(2, &[4.0, 2.0, 2.0, 2.0])).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 1.0]);
        assert!((l - expected).norm() < 1e-14);
        assert_eq!(
            cholesky(&SymmetricMatrix::from_diagonal(&[1.0, -1.0])),
            Err(Error::NotPositiveDefinite)
        );
    }

    #[test]
    fn solve_examples() {
        let b = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        assert_eq!(solve_linear(&DMatrix::identity(3, 3), &b).unwrap(), b);
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let x = solve_linear(&a, &DVector::from_vec(vec![2.0, 8.0])).unwrap();
        assert!((x - DVector::from_vec(vec![1.0, 2.0])).norm() < 1e-15);
        let err = solve_linear(&DMatrix::zeros(2, 2), &DVector::from_vec(vec![1.0, 1.0]));
        match err {
            Err(Error::Singular { condition }) => assert!(condition.is_infinite()),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn eig_reconstructs(k in 1usize..25, seed in proptest::collection::vec(-10.0f64..10.0, 625)) {
            let a = random_symmetric(k, &seed);
            let e = sym_eig(&a).unwrap();
            let norm = a.norm().max(ABS_FLOOR);
            let lam = DMatrix::from_diagonal(&e.eigenvalues);
            let recon = &e.eigenvectors * lam * e.eigenvectors.transpose();
            prop_assert!((recon - a.as_matrix()).norm() <= 1e-9 * norm);
            let gram = e.eigenvectors.transpose() * &e.eigenvectors;
            prop_assert!((gram - DMatrix::identity(k, k)).norm() <= 1e-10 * k as f64);
            for i in 0..k {
                let v = e.eigenvectors.column(i);
                let r = a.as_matrix() * v - v * e.eigenvalues[i];
                prop_assert!(r.norm() <= 1e-10 * norm);
                if i > 0 {
                    prop_assert!(e.eigenvalues[i - 1] <= e.eigenvalues[i]);
                }
            }
        }

        #[test]
        fn min_eig_shifts(k in 1usize..12, t in -50.0f64..50.0, seed in proptest::collection::vec(-3.0f64..3.0, 144)) {
            let a = random_symmetric(k, &seed);
            let shifted = SymmetricMatrix::symmetrize(a.as_matrix() + DMatrix::identity(k, k) * t);
            let lhs = min_eigenvalue(&shifted).unwrap();
            let rhs = min_eigenvalue(&a).unwrap() + t;
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + t.abs()));
        }

        #[test]
        fn cholesky_matches_min_eig(k in 1usize..10, eps in prop_oneof![-2.0f64..-1e-3, 1e-3f64..2.0],
                                    seed in proptest::collection::vec(-2.0f64..2.0, 100)) {
            let b = DMatrix::from_fn(k, k, |i, j| seed[i * 10 + j]);
            let a = SymmetricMatrix::symmetrize(b.transpose() * &b + DMatrix::identity(k, k) * eps);
            let pd = min_eigenvalue(&a).unwrap() > 1e-12 * a.norm();
            let chol = cholesky(&a);
            prop_assert_eq!(chol.is_ok(), pd);
            if let Ok(l) = chol {
                prop_assert!((&l * l.transpose() - a.as_matrix()).norm() <= 1e-10 * a.norm());
            }
        }

        #[test]
        fn svd_reconstructs(m in 1usize..9, n in 1usize..9, seed in proptest::collection::vec(-5.0f64..5.0, 64)) {
            let a = DMatrix::from_fn(m, n, |i, j| seed[i * 8 + j]);
            let s = svd(&a).unwrap();
            let recon = &s.u * DMatrix::from_diagonal(&s.singular_values) * s.v.transpose();
            prop_assert!((recon - &a).norm() <= 1e-9 * a.norm().max(ABS_FLOOR));
            let r = s.singular_values.len();
            prop_assert!((s.u.transpose() * &s.u - DMatrix::identity(r, r)).norm() < 1e-9);
            prop_assert!((s.v.transpose() * &s.v - DMatrix::identity(r, r)).norm() < 1e-9);
            for i in 1..r {
                prop_assert!(s.singular_values[i - 1] >= s.singular_values[i]);
                prop_assert!(s.singular_values[i] >= 0.0);
            }
        }

        #[test]
        fn solve_residual(k in 1usize..10, seed in proptest::collection::vec(-5.0f64..5.0, 110)) {
            let a = DMatrix::from_fn(k, k, |i, j| seed[i * 10 + j]) + DMatrix::identity(k, k) * 12.0;
            let b = DVector::from_fn(k, |i, _| seed[100 + i]);
            let x = solve_linear(&a, &b).unwrap();
            prop_assert!((&a * &x - &b).norm() <= 1e-9 * (a.norm() * x.norm() + b.norm()));
        }
    }
}
