//! The triangulation QCQP in lifted form.
//!
//! Variables are ordered `(u₁, v₁, …, uₙ, vₙ, 1)`. The objective is
//! `g(x) = ‖x − x̂‖² = x̃ᵀ G x̃` and each camera pair `i < j` contributes one
//! epipolar constraint `f_ij(x) = x̃ᵀ F_ij x̃ = x̃_iᵀ F^{3×3}_ij x̃_j = 0`.
//!
//! The lifted `F_ij` holds two half-weighted copies of the 3×3 fundamental
//! matrix, one in block `(i, j)` and its transpose in block `(j, i)`, with the
//! third row and column routed to the homogenizing coordinate. Multipliers are
//! indexed lexicographically over pairs `(0,1), (0,2), …, (n−2,n−1)`.

use nalgebra::{DMatrix, DVector};

use crate::geometry::{fundamental_matrix, Camera, FundamentalMatrix, ImagePoint};
use crate::linalg::SymmetricMatrix;
use crate::{Error, Result};

/// Stacked observations `x̂ = [x̂₁; …; x̂ₙ] ∈ R^{2n}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationVector(DVector<f64>);

impl ObservationVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || !values.len().is_multiple_of(2) {
            return Err(Error::InvalidInput(format!(
                "observation vector must have positive even length, got {}",
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("observations must be finite".into()));
        }
        Ok(Self(DVector::from_vec(values)))
    }

    pub fn from_points(points: &[ImagePoint]) -> Result<Self> {
        Self::new(points.iter().flat_map(|p| [p.0[0], p.0[1]]).collect())
    }

    pub fn n_views(&self) -> usize {
        self.0.len() / 2
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn point(&self, i: usize) -> ImagePoint {
        ImagePoint::new(self.0[2 * i], self.0[2 * i + 1])
    }

    pub fn points(&self) -> Vec<ImagePoint> {
        (0..self.n_views()).map(|i| self.point(i)).collect()
    }
}

/// Splits a stacked `2n` vector into image points.
pub fn unstack(x: &DVector<f64>) -> Vec<ImagePoint> {
    (0..x.len() / 2)
        .map(|i| ImagePoint::new(x[2 * i], x[2 * i + 1]))
        .collect()
}

/// `x̃ = [x; 1]`.
pub fn homogenize(x: &DVector<f64>) -> DVector<f64> {
    x.clone().push(1.0)
}

/// One lifted epipolar constraint `F = [[H, b], [bᵀ, β]]`.
#[derive(Debug, Clone)]
pub struct LiftedConstraint {
    pub pair: (usize, usize),
    pub fundamental: FundamentalMatrix,
    pub full: SymmetricMatrix,
    pub h: SymmetricMatrix,
    pub b: DVector<f64>,
    pub beta: f64,
}

impl LiftedConstraint {
    fn new(n: usize, pair: (usize, usize), fundamental: FundamentalMatrix) -> Self {
        let k = 2 * n + 1;
        let last = 2 * n;
        let (i, j) = pair;
        let index = |view: usize, a: usize| if a == 2 { last } else { 2 * view + a };
        let f = fundamental.matrix();
        let mut m = DMatrix::zeros(k, k);
        for a in 0..3 {
            for c in 0..3 {
                let p = index(i, a);
                let q = index(j, c);
                let half = 0.5 * f[(a, c)];
                m[(p, q)] += half;
                m[(q, p)] += half;
            }
        }
        let full = SymmetricMatrix::symmetrize(m);
        let h = SymmetricMatrix::symmetrize(full.as_matrix().view((0, 0), (last, last)).into_owned());
        let b = full.as_matrix().view((0, last), (last, 1)).column(0).into_owned();
        let beta = full[(last, last)];
        Self {
            pair,
            fundamental,
            full,
            h,
            b,
            beta,
        }
    }

    /// `f_ij(x) = x̃ᵀ F x̃`.
    pub fn evaluate(&self, x: &DVector<f64>) -> f64 {
        self.full.quadratic_form(&homogenize(x))
    }

    /// `∇f_ij(x) = 2 (H x + b)`.
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.h.as_matrix() * x + &self.b) * 2.0
    }
}

#[derive(Debug, Clone)]
pub struct LiftedQcqp {
    n: usize,
    observations: ObservationVector,
    g: SymmetricMatrix,
    constraints: Vec<LiftedConstraint>,
    e: SymmetricMatrix,
}

/// Lexicographic list of camera pairs `i < j`.
pub fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect()
}

pub fn build_qcqp(cameras: &[Camera], obs: &ObservationVector) -> Result<LiftedQcqp> {
    let n = cameras.len();
    if n < 2 {
        return Err(Error::InvalidInput("need at least two cameras".into()));
    }
    if obs.n_views() != n {
        return Err(Error::DimensionMismatch {
            expected: 2 * n,
            got: obs.as_vector().len(),
        });
    }
    let constraints = pairs(n)
        .into_iter()
        .map(|(i, j)| {
            let f = fundamental_matrix(&cameras[i], &cameras[j]).map_err(|e| match e {
                Error::DegeneratePair(..) => Error::DegeneratePair(i, j),
                other => other,
            })?;
            Ok(LiftedConstraint::new(n, (i, j), f))
        })
        .collect::<Result<Vec<_>>>()?;

    let k = 2 * n + 1;
    let xh = obs.as_vector();
    let mut g = DMatrix::identity(k, k);
    for r in 0..2 * n {
        g[(r, k - 1)] = -xh[r];
        g[(k - 1, r)] = -xh[r];
    }
    g[(k - 1, k - 1)] = xh.norm_squared();
    let mut e = DMatrix::zeros(k, k);
    e[(k - 1, k - 1)] = 1.0;

    Ok(LiftedQcqp {
        n,
        observations: obs.clone(),
        g: SymmetricMatrix::symmetrize(g),
        constraints,
        e: SymmetricMatrix::symmetrize(e),
    })
}

impl LiftedQcqp {
    pub fn n_views(&self) -> usize {
        self.n
    }

    /// Size of the lifted matrices, `2n + 1`.
    pub fn lifted_dim(&self) -> usize {
        2 * self.n + 1
    }

    pub fn observations(&self) -> &ObservationVector {
        &self.observations
    }

    pub fn g(&self) -> &SymmetricMatrix {
        &self.g
    }

    pub fn e(&self) -> &SymmetricMatrix {
        &self.e
    }

    pub fn constraints(&self) -> &[LiftedConstraint] {
        &self.constraints
    }

    pub fn pair_index(&self, i: usize, j: usize) -> Option<usize> {
        self.constraints.iter().position(|c| c.pair == (i, j))
    }

    fn check_x(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != 2 * self.n {
            return Err(Error::DimensionMismatch {
                expected: 2 * self.n,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_multipliers(&self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.constraints.len() {
            return Err(Error::DimensionMismatch {
                expected: self.constraints.len(),
                got: lambda.len(),
            });
        }
        Ok(())
    }

    /// `‖x − x̂‖²`.
    pub fn objective(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_x(x)?;
        Ok((x - self.observations.as_vector()).norm_squared())
    }

    /// `x̃ᵀ G x̃`, the lifted form of [`Self::objective`].
    pub fn objective_lifted(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_x(x)?;
        Ok(self.g.quadratic_form(&homogenize(x)))
    }

    pub fn constraint_residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_x(x)?;
        Ok(DVector::from_iterator(
            self.constraints.len(),
            self.constraints.iter().map(|c| c.evaluate(x)),
        ))
    }

    pub fn constraint_gradient(&self, pair: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_x(x)?;
        let c = self.constraints.get(pair).ok_or(Error::DimensionMismatch {
            expected: self.constraints.len(),
            got: pair,
        })?;
        Ok(c.gradient(x))
    }

    /// `I + Σ λ_ij H_ij`, half the Hessian of the Lagrangian.
    pub fn certificate_matrix(&self, lambda: &[f64]) -> Result<SymmetricMatrix> {
        self.check_multipliers(lambda)?;
        let m = 2 * self.n;
        let mut acc = DMatrix::identity(m, m);
        for (c, &l) in self.constraints.iter().zip(lambda) {
            acc += c.h.as_matrix() * l;
        }
        Ok(SymmetricMatrix::symmetrize(acc))
    }

    /// `G + Σ λ_ij F_ij − ρ E`, the dual slack of the relaxation.
    pub fn dual_matrix(&self, lambda: &[f64], rho: f64) -> Result<SymmetricMatrix> {
        self.check_multipliers(lambda)?;
        let mut acc = self.g.as_matrix().clone();
        for (c, &l) in self.constraints.iter().zip(lambda) {
            acc += c.full.as_matrix() * l;
        }
        acc -= self.e.as_matrix() * rho;
        Ok(SymmetricMatrix::symmetrize(acc))
    }

    /// `L(x, λ, ρ) = g(x) + Σ λ_ij f_ij(x) − ρ`.
    pub fn lagrangian_value(&self, x: &DVector<f64>, lambda: &[f64], rho: f64) -> Result<f64> {
        self.check_multipliers(lambda)?;
        let residuals = self.constraint_residuals(x)?;
        let penalty: f64 = residuals.iter().zip(lambda).map(|(r, l)| r * l).sum();
        Ok(self.objective(x)? + penalty - rho)
    }

    /// The same Lagrangian evaluated as `x̃ᵀ (G + Σ λ F − ρ E) x̃`.
    pub fn lagrangian_value_lifted(&self, x: &DVector<f64>, lambda: &[f64], rho: f64) -> Result<f64> {
        self.check_x(x)?;
        Ok(self.dual_matrix(lambda, rho)?.quadratic_form(&homogenize(x)))
    }
}
