//! Dense primal-dual interior-point solver for standard-form SDPs.
//!
//! ```text
//! primal:  min ⟨C, X⟩  s.t.  ⟨A_k, X⟩ = b_k,  X ⪰ 0
//! dual:    max bᵀy     s.t.  S = C − Σ y_k A_k ⪰ 0
//! ```
//!
//! Infeasible-start path following with the HKM search direction and a
//! Mehrotra predictor-corrector. Problems here are tiny (`k = 2n + 1`), so the
//! Schur complement is formed and factored densely every iteration.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{self, SymmetricMatrix};
use crate::qcqp::{homogenize, LiftedQcqp};
use crate::{Error, Result};

/// Relative tolerance on the normalized Gram matrix of the constraints.
const INDEPENDENCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SdpProblem {
    cost: SymmetricMatrix,
    constraints: Vec<SymmetricMatrix>,
    rhs: DVector<f64>,
}

impl SdpProblem {
    pub fn new(cost: SymmetricMatrix, constraints: Vec<SymmetricMatrix>, rhs: Vec<f64>) -> Result<Self> {
        if constraints.is_empty() {
            return Err(Error::InvalidInput("SDP needs at least one constraint".into()));
        }
        if constraints.len() != rhs.len() {
            return Err(Error::DimensionMismatch {
                expected: constraints.len(),
                got: rhs.len(),
            });
        }
        let k = cost.dim();
        if let Some(bad) = constraints.iter().find(|a| a.dim() != k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: bad.dim(),
            });
        }
        if !rhs.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("right-hand side must be finite".into()));
        }
        Ok(Self {
            cost,
            constraints,
            rhs: DVector::from_vec(rhs),
        })
    }

    pub fn dim(&self) -> usize {
        self.cost.dim()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn cost(&self) -> &SymmetricMatrix {
        &self.cost
    }

    pub fn constraints(&self) -> &[SymmetricMatrix] {
        &self.constraints
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    /// `A(X) = (⟨A_k, X⟩)_k`.
    fn apply(&self, x: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.constraints.len(),
            self.constraints.iter().map(|a| a.as_matrix().dot(x)),
        )
    }

    /// `Aᵀ(y) = Σ y_k A_k`.
    fn adjoint(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let k = self.dim();
        self.constraints
            .iter()
            .zip(y.iter())
            .fold(DMatrix::zeros(k, k), |acc, (a, &yk)| acc + a.as_matrix() * yk)
    }

    fn check_independent(&self) -> Result<()> {
        let m = self.constraints.len();
        let norms: Vec<f64> = self.constraints.iter().map(|a| a.norm()).collect();
        if let Some(i) = norms.iter().position(|&v| v == 0.0) {
            return Err(Error::DegenerateProblem(format!("constraint {i} is zero")));
        }
        let gram = DMatrix::from_fn(m, m, |i, j| {
            self.constraints[i].inner(&self.constraints[j]) / (norms[i] * norms[j])
        });
        let min = linalg::min_eigenvalue(&SymmetricMatrix::symmetrize(gram))?;
        if min <= INDEPENDENCE_TOL {
            return Err(Error::DegenerateProblem(
                "constraint matrices are linearly dependent".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iterations: usize,
    pub step_fraction: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gap_tol: 1e-9,
            feas_tol: 1e-9,
            max_iterations: 100,
            step_fraction: 0.98,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gap_tol > 0.0 && self.feas_tol > 0.0) {
            return Err(Error::InvalidInput("solver tolerances must be positive".into()));
        }
        if !(self.step_fraction > 0.0 && self.step_fraction < 1.0) {
            return Err(Error::InvalidInput("step_fraction must lie in (0, 1)".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum SolverStatus {
    Converged,
    MaxIterations,
    NumericalFailure,
}

/// Per-iteration diagnostics, recorded before each step is taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterateLog {
    pub primal_obj: f64,
    pub dual_obj: f64,
    /// `⟨X, S⟩ / k` for the iterate's own slack.
    pub complementarity: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    /// Primal matrix `X` (called `Y` in the triangulation relaxation).
    pub primal: SymmetricMatrix,
    pub dual: DVector<f64>,
    /// `C − Σ y_k A_k`, recomputed from `dual`.
    pub slack: SymmetricMatrix,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub iterations: usize,
    pub status: SolverStatus,
    pub history: Vec<IterateLog>,
}

impl SdpSolution {
    pub fn gap(&self) -> f64 {
        (self.primal_obj - self.dual_obj).abs()
    }
}

/// Accepted steps may raise the complementarity `⟨X, S⟩ / k` by at most this
/// factor; corrector steps overshoot slightly, anything more is rounding noise.
const MAX_GROWTH: f64 = 1.1;

struct Measures {
    log: IterateLog,
    /// `max_k |b_k − ⟨A_k, X⟩| / (1 + |b_k|)`
    pinf: f64,
    /// `‖C − S − Aᵀy‖ / (1 + ‖C‖)`
    dinf: f64,
    /// `|pobj − dobj| / (1 + |pobj|)`
    rel_gap: f64,
}

impl Measures {
    fn score(&self) -> f64 {
        self.pinf.max(self.dinf).max(self.rel_gap)
    }
}

struct Iterate {
    x: DMatrix<f64>,
    y: DVector<f64>,
    s: DMatrix<f64>,
}

struct Direction {
    dx: DMatrix<f64>,
    dy: DVector<f64>,
    ds: DMatrix<f64>,
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Largest `α` with `M + α D ⪰ 0` given the Cholesky factor `L` of `M`.
fn max_step(l: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    let Some(linv) = l.clone().try_inverse() else {
        return 0.0;
    };
    let scaled = sym(&linv * d * linv.transpose());
    if !scaled.iter().all(|v| v.is_finite()) {
        return 0.0;
    }
    let min = scaled.symmetric_eigenvalues().min();
    if min < 0.0 {
        -1.0 / min
    } else {
        f64::INFINITY
    }
}

fn chol(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    nalgebra::linalg::Cholesky::new(m.clone()).map(|c| c.l())
}

struct Solver<'a> {
    prob: &'a SdpProblem,
    cfg: SolverConfig,
    cost_norm: f64,
    /// Factored Gram matrix `⟨A_i, A_j⟩`, used to pull `dX` back onto
    /// `A(dX) = r_p` when the Schur solve loses accuracy near the optimum.
    gram: nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>,
}

impl Solver<'_> {
    fn measure(&self, it: &Iterate) -> Measures {
        let c = self.prob.cost.as_matrix();
        let b = &self.prob.rhs;
        let ax = self.prob.apply(&it.x);
        let pinf = (b - &ax)
            .iter()
            .zip(b.iter())
            .map(|(r, bk)| r.abs() / (1.0 + bk.abs()))
            .fold(0.0, f64::max);
        let rd = c - &it.s - self.prob.adjoint(&it.y);
        let dinf = rd.norm() / (1.0 + self.cost_norm);
        let primal_obj = c.dot(&it.x);
        let dual_obj = b.dot(&it.y);
        let k = self.prob.dim() as f64;
        Measures {
            log: IterateLog {
                primal_obj,
                dual_obj,
                complementarity: it.x.dot(&it.s) / k,
                primal_infeasibility: pinf,
                dual_infeasibility: dinf,
            },
            pinf,
            dinf,
            rel_gap: (primal_obj - dual_obj).abs() / (1.0 + primal_obj.abs()),
        }
    }

    fn converged(&self, m: &Measures) -> bool {
        m.pinf <= self.cfg.feas_tol && m.dinf <= self.cfg.feas_tol && m.rel_gap <= self.cfg.gap_tol
    }

    /// Solves the HKM Newton system whose complementarity target is
    /// `dX S + X dS = target·I − X S − corr`. The product `(X S) S⁻¹` is
    /// replaced by `X` exactly, otherwise the small eigenvalues of `X` drown
    /// in rounding once `S` becomes ill-conditioned.
    fn direction(
        &self,
        it: &Iterate,
        s_inv: &DMatrix<f64>,
        schur: &SchurFactor,
        target: f64,
        corr: Option<&DMatrix<f64>>,
    ) -> Option<Direction> {
        let c = self.prob.cost.as_matrix();
        let rp = &self.prob.rhs - self.prob.apply(&it.x);
        let rd = c - &it.s - self.prob.adjoint(&it.y);
        let mut r_sinv = s_inv * target - &it.x;
        if let Some(corr) = corr {
            r_sinv -= corr * s_inv;
        }
        let x_rd_sinv = &it.x * &rd * s_inv;
        let rhs = &rp - self.prob.apply(&r_sinv) + self.prob.apply(&x_rd_sinv);
        let dy = schur.solve(&rhs)?;
        let ds = rd - self.prob.adjoint(&dy);
        let mut dx = sym(r_sinv - &it.x * &ds * s_inv);
        let miss = &rp - self.prob.apply(&dx);
        dx += self.prob.adjoint(&self.gram.solve(&miss));
        Some(Direction { dx, dy, ds })
    }

    fn run(&self) -> Result<SdpSolution> {
        let k = self.prob.dim();
        let tau = 1.0 + self.cost_norm + self.prob.rhs.amax();
        let mut it = Iterate {
            x: DMatrix::identity(k, k) * tau,
            y: DVector::zeros(self.prob.n_constraints()),
            s: DMatrix::identity(k, k) * tau,
        };
        let mut history = Vec::new();
        let mut best: Option<(f64, usize)> = None;
        let mut best_iterate: Option<Iterate> = None;
        let mut status = SolverStatus::MaxIterations;
        let mut iterations = 0;

        for iter in 0..=self.cfg.max_iterations {
            let m = self.measure(&it);
            history.push(m.log);
            if best.is_none_or(|(score, _)| m.score() < score) {
                best = Some((m.score(), iter));
                best_iterate = Some(Iterate {
                    x: it.x.clone(),
                    y: it.y.clone(),
                    s: it.s.clone(),
                });
            }
            iterations = iter;
            if self.converged(&m) {
                status = SolverStatus::Converged;
                break;
            }
            if iter == self.cfg.max_iterations {
                break;
            }
            match self.step(&it) {
                Some(next) => it = next,
                None => {
                    status = SolverStatus::NumericalFailure;
                    break;
                }
            }
        }

        let final_it = if status == SolverStatus::Converged {
            it
        } else {
            best_iterate.unwrap_or(it)
        };
        Ok(self.finish(final_it, iterations, status, history))
    }

    fn step(&self, it: &Iterate) -> Option<Iterate> {
        let k = self.prob.dim();
        let lx = chol(&it.x)?;
        let ls = chol(&it.s)?;
        let s_inv = {
            let linv = ls.clone().try_inverse()?;
            sym(linv.transpose() * linv)
        };
        let schur = SchurFactor::new(self.prob, &it.x, &s_inv)?;
        let mu = it.x.dot(&it.s) / k as f64;

        // Predictor (affine scaling, σ = 0).
        let aff = self.direction(it, &s_inv, &schur, 0.0, None)?;
        let ap = max_step(&lx, &aff.dx).min(1.0);
        let ad = max_step(&ls, &aff.ds).min(1.0);
        let mu_aff = (&it.x + &aff.dx * ap).dot(&(&it.s + &aff.ds * ad)) / k as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector with the second-order term dX_aff dS_aff.
        let corr = &aff.dx * &aff.ds;
        let dir = self.direction(it, &s_inv, &schur, sigma * mu, Some(&corr))?;
        let gamma = self.cfg.step_fraction;
        let mut ap = (gamma * max_step(&lx, &dir.dx)).min(1.0);
        let mut ad = (gamma * max_step(&ls, &dir.ds)).min(1.0);

        for _ in 0..30 {
            let x = sym(&it.x + &dir.dx * ap);
            let s = sym(&it.s + &dir.ds * ad);
            let grows = x.dot(&s) / k as f64 > MAX_GROWTH * mu;
            if !grows && chol(&x).is_some() && chol(&s).is_some() {
                return Some(Iterate {
                    x,
                    y: &it.y + &dir.dy * ad,
                    s,
                });
            }
            ap *= 0.8;
            ad *= 0.8;
        }
        None
    }

    fn finish(&self, it: Iterate, iterations: usize, status: SolverStatus, history: Vec<IterateLog>) -> SdpSolution {
        let c = self.prob.cost.as_matrix();
        let slack = SymmetricMatrix::symmetrize(c - self.prob.adjoint(&it.y));
        SdpSolution {
            primal_obj: c.dot(&it.x),
            dual_obj: self.prob.rhs.dot(&it.y),
            primal: SymmetricMatrix::symmetrize(it.x),
            dual: it.y,
            slack,
            iterations,
            status,
            history,
        }
    }
}

/// Factored Schur complement `M_ij = ⟨A_i, X A_j S⁻¹⟩`.
struct SchurFactor {
    matrix: DMatrix<f64>,
    chol: Option<nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>>,
    lu: Option<nalgebra::linalg::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl SchurFactor {
    fn new(prob: &SdpProblem, x: &DMatrix<f64>, s_inv: &DMatrix<f64>) -> Option<Self> {
        let m = prob.n_constraints();
        let products: Vec<DMatrix<f64>> = prob
            .constraints
            .iter()
            .map(|a| x * a.as_matrix() * s_inv)
            .collect();
        let mut schur = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                schur[(i, j)] = prob.constraints[i].as_matrix().dot(&products[j]);
            }
        }
        let schur = sym(schur);
        if !schur.iter().all(|v| v.is_finite()) {
            return None;
        }
        match nalgebra::linalg::Cholesky::new(schur.clone()) {
            Some(c) => Some(Self {
                matrix: schur,
                chol: Some(c),
                lu: None,
            }),
            None => Some(Self {
                lu: Some(schur.clone().lu()),
                matrix: schur,
                chol: None,
            }),
        }
    }

    fn solve_once(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        match (&self.chol, &self.lu) {
            (Some(c), _) => Some(c.solve(rhs)),
            (None, Some(lu)) => lu.solve(rhs),
            _ => None,
        }
    }

    /// Solve with two rounds of iterative refinement.
    fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        let mut sol = self.solve_once(rhs)?;
        for _ in 0..2 {
            let residual = rhs - &self.matrix * &sol;
            sol += self.solve_once(&residual)?;
        }
        sol.iter().all(|v| v.is_finite()).then_some(sol)
    }
}

pub fn solve_sdp(prob: &SdpProblem, cfg: &SolverConfig) -> Result<SdpSolution> {
    cfg.validate()?;
    prob.check_independent()?;
    let m = prob.n_constraints();
    let gram = DMatrix::from_fn(m, m, |i, j| prob.constraints[i].inner(&prob.constraints[j]));
    let gram = nalgebra::linalg::Cholesky::new(gram)
        .ok_or_else(|| Error::DegenerateProblem("constraint matrices are linearly dependent".into()))?;
    Solver {
        prob,
        cfg: *cfg,
        cost_norm: prob.cost.norm(),
        gram,
    }
    .run()
}

/// The moment relaxation of a triangulation QCQP: cost `G`, constraints
/// `F_ij` (in pair order) with right-hand side 0, and finally `E` with 1.
pub fn sdp_problem(qcqp: &LiftedQcqp) -> SdpProblem {
    let mut constraints: Vec<SymmetricMatrix> = qcqp.constraints().iter().map(|c| c.full.clone()).collect();
    constraints.push(qcqp.e().clone());
    let mut rhs = vec![0.0; constraints.len()];
    *rhs.last_mut().unwrap() = 1.0;
    SdpProblem {
        cost: qcqp.g().clone(),
        constraints,
        rhs: DVector::from_vec(rhs),
    }
}

/// Maps the generic dual vector to `(λ, ρ)` with
/// `G + Σ λ_ij F_ij − ρ E = S`, i.e. `λ = −y_F` and `ρ = y_E`.
pub fn triangulation_duals(qcqp: &LiftedQcqp, sol: &SdpSolution) -> Result<(Vec<f64>, f64)> {
    let m = qcqp.constraints().len();
    if sol.dual.len() != m + 1 || sol.primal.dim() != qcqp.lifted_dim() {
        return Err(Error::Precondition(
            "solution does not come from this triangulation relaxation".into(),
        ));
    }
    let lambda = sol.dual.rows(0, m).iter().map(|v| -v).collect();
    Ok((lambda, sol.dual[m]))
}

/// Strictly feasible points for the relaxation pair, built from a point on
/// the epipolar variety: `Y = x̃x̃ᵀ + diag(1, …, 1, 0)` for the primal and
/// `λ = 0, ρ = −1` for the dual.
pub fn slater_points(qcqp: &LiftedQcqp, feasible_x: &DVector<f64>) -> Result<(SymmetricMatrix, (Vec<f64>, f64))> {
    let residuals = qcqp.constraint_residuals(feasible_x)?;
    if residuals.amax() > 1e-9 {
        return Err(Error::Precondition(format!(
            "point is not on the epipolar variety (max residual {:e})",
            residuals.amax()
        )));
    }
    let xt = homogenize(feasible_x);
    let k = xt.len();
    let mut y = &xt * xt.transpose();
    for i in 0..k - 1 {
        y[(i, i)] += 1.0;
    }
    Ok((
        SymmetricMatrix::symmetrize(y),
        (vec![0.0; qcqp.constraints().len()], -1.0),
    ))
}
