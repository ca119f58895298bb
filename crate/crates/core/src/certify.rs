//! Solve the relaxation, extract a candidate, and certify it.
//!
//! The candidate image vector is read from the last column of the primal
//! solution and lifted to a world point by DLT. It is declared optimal when the
//! dual multipliers make `I + Σ λ_ij H_ij` positive definite by a margin `δ`,
//! the primal and dual objectives agree, and (for coplanar camera centers,
//! where the epipolar variety is larger than the set of true image tuples) the
//! candidate reprojects exactly. Anything else is reported as suboptimal with
//! the dual bound attached, optionally polished by local refinement.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::geometry::{self, are_coplanar, dlt_triangulate, project, reprojection_exact, Camera, WorldPoint};
use crate::linalg::{min_eigenvalue, sym_eig};
use crate::qcqp::{build_qcqp, unstack, LiftedQcqp, ObservationVector};
use crate::sdp::{sdp_problem, solve_sdp, triangulation_duals, SolverConfig, SolverStatus};
use crate::{Error, Result};

mod refine;

pub use refine::{refine, Refinement};

/// Relative tolerance on `objective − dual_bound` for an optimal result.
pub const GAP_TOL: f64 = 1e-6;
/// Largest constraint residual accepted for the extracted candidate.
pub const FEASIBILITY_TOL: f64 = 1e-8;
/// Largest `λ₂ / λ₁` of the primal solution accepted as rank one.
pub const RANK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Optimal,
    Suboptimal,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Optimal => "OPTIMAL",
            Status::Suboptimal => "SUBOPTIMAL",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifyConfig {
    /// Absolute threshold on the smallest eigenvalue of `I + Σ λ_ij H_ij`.
    pub delta: f64,
    /// Tolerance for the reprojection check on coplanar cameras, in image units.
    pub reproj_tol: f64,
    pub coplanar_tol: f64,
    /// Polish suboptimal results with Levenberg-Marquardt.
    pub refine: bool,
    pub solver: SolverConfig,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            delta: 0.05,
            reproj_tol: 1e-6,
            coplanar_tol: geometry::DEFAULT_COPLANAR_TOL,
            refine: true,
            solver: SolverConfig::default(),
        }
    }
}

impl CertifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::InvalidInput("delta must be positive".into()));
        }
        if !(self.reproj_tol > 0.0 && self.coplanar_tol > 0.0) {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverSummary {
    pub status: SolverStatus,
    pub iterations: usize,
    pub primal_obj: f64,
    pub dual_obj: f64,
}

#[derive(Debug, Clone)]
pub struct TriangulationResult {
    pub status: Status,
    pub point: WorldPoint,
    /// Image vector of the returned solution: the extracted candidate when
    /// optimal, otherwise the reprojection of `point`.
    pub projections: DVector<f64>,
    /// `g` at `projections`.
    pub objective: f64,
    /// `ρ*`, a lower bound on the optimal objective.
    pub dual_bound: f64,
    pub certificate_min_eig: f64,
    /// Second-largest over largest eigenvalue of the primal solution.
    pub rank_gap: f64,
    pub coplanar: bool,
    /// Dual multipliers `λ*` in pair order.
    pub multipliers: Vec<f64>,
    pub solver: SolverSummary,
    pub refined: bool,
}

/// `(min_eig > δ, min_eig)` for `I + Σ λ_ij H_ij`.
pub fn check_certificate(qcqp: &LiftedQcqp, lambda: &[f64], delta: f64) -> Result<(bool, f64)> {
    let min = min_eigenvalue(&qcqp.certificate_matrix(lambda)?)?;
    Ok((min > delta, min))
}

/// KKT stationarity residual `‖x̂ − x* − Σ (λ_ij / 2) ∇f_ij(x*)‖`.
pub fn gradient_slice_check(qcqp: &LiftedQcqp, x_star: &DVector<f64>, lambda: &[f64]) -> Result<f64> {
    if lambda.len() != qcqp.constraints().len() {
        return Err(Error::DimensionMismatch {
            expected: qcqp.constraints().len(),
            got: lambda.len(),
        });
    }
    let residuals = qcqp.constraint_residuals(x_star)?;
    if residuals.amax() > 1e-6 {
        return Err(Error::Precondition(format!(
            "x* is not on the epipolar variety (max residual {:e})",
            residuals.amax()
        )));
    }
    let mut r = qcqp.observations().as_vector() - x_star;
    for (c, &l) in qcqp.constraints().iter().zip(lambda) {
        r -= c.gradient(x_star) * (0.5 * l);
    }
    Ok(r.norm())
}

/// Multipliers satisfying the stationarity condition at `x`, paired with the
/// minimum of the resulting Lagrangian over all `x`. The pair is dual feasible
/// whenever the certificate matrix is positive definite, which makes it a
/// second witness alongside the solver's own multipliers: for four or more
/// views the multipliers are not unique and the interior-point iterates
/// settle near the center of the optimal face, not where the certificate is
/// strongest.
///
/// Stationary multipliers form an affine set; the one returned is closest to
/// `reference`, or of least norm when there is none.
pub fn stationary_duals(qcqp: &LiftedQcqp, x: &DVector<f64>, reference: Option<&[f64]>) -> Result<(Vec<f64>, f64)> {
    let m = qcqp.constraints().len();
    let dim = x.len();
    if dim != 2 * qcqp.n_views() {
        return Err(Error::DimensionMismatch { expected: 2 * qcqp.n_views(), got: dim });
    }
    let base = match reference {
        Some(r) if r.len() == m => DVector::from_column_slice(r),
        Some(r) => return Err(Error::DimensionMismatch { expected: m, got: r.len() }),
        None => DVector::zeros(m),
    };
    let mut jac = DMatrix::zeros(dim, m);
    for (k, c) in qcqp.constraints().iter().enumerate() {
        jac.set_column(k, &(c.gradient(x) * 0.5));
    }
    let rhs = qcqp.observations().as_vector() - x - &jac * &base;
    let eps = 1e-10 * (1.0 + jac.norm());
    let shift = jac
        .svd(true, true)
        .solve(&rhs, eps)
        .map_err(|e| Error::InvalidInput(e.into()))?;
    let lambda: Vec<f64> = (base + shift).iter().copied().collect();

    let full = qcqp.dual_matrix(&lambda, 0.0)?;
    let a = full.as_matrix().view((0, 0), (dim, dim)).into_owned();
    let c = full.as_matrix().view((0, dim), (dim, 1)).column(0).into_owned();
    let d = full.entry(dim, dim);
    let rho = match a.cholesky() {
        Some(ch) => d - c.dot(&ch.solve(&c)),
        None => f64::NEG_INFINITY,
    };
    Ok((lambda, rho))
}

/// The first stationary witness, over the given references, whose
/// certificate passes and whose bound closes the gap at objective `g`.
fn stationary_witness(
    qcqp: &LiftedQcqp,
    x: &DVector<f64>,
    g: f64,
    delta: f64,
    references: &[Option<&[f64]>],
) -> Option<(Vec<f64>, f64, f64)> {
    references.iter().find_map(|r| {
        let (lambda, rho) = stationary_duals(qcqp, x, *r).ok()?;
        let (passes, min) = check_certificate(qcqp, &lambda, delta).ok()?;
        (passes && g - rho <= GAP_TOL * (1.0 + g.abs())).then_some((lambda, rho, min))
    })
}

fn stack_projections(cameras: &[Camera], point: &WorldPoint) -> Result<DVector<f64>> {
    let mut out = Vec::with_capacity(2 * cameras.len());
    for cam in cameras {
        let p = project(cam, point)?;
        out.extend([p.0[0], p.0[1]]);
    }
    Ok(DVector::from_vec(out))
}

/// Sharpen a certified result to full precision. The relaxation is solved to
/// a relative gap near 1e-9, which leaves the extracted point and multipliers
/// accurate only to about the square root of that. A local refinement from the
/// certified point lands on the same minimizer, where the stationarity
/// multipliers and their exact bound are recomputed. The polished values are
/// kept only if they certify on their own.
fn polish(qcqp: &LiftedQcqp, cameras: &[Camera], delta: f64, result: &mut TriangulationResult) {
    let Ok(local) = refine(cameras, qcqp.observations(), &result.point) else {
        return;
    };
    let Ok(x) = stack_projections(cameras, &local.point) else {
        return;
    };
    let Ok(objective) = qcqp.objective(&x) else {
        return;
    };
    let current = result.multipliers.clone();
    let Some((lambda, rho, min)) = stationary_witness(qcqp, &x, objective, delta, &[Some(&current), None]) else {
        return;
    };
    if objective <= result.objective + GAP_TOL * (1.0 + objective.abs()) {
        result.point = local.point;
        result.projections = x;
        result.objective = objective;
        result.dual_bound = rho;
        result.certificate_min_eig = min;
        result.multipliers = lambda;
        result.refined = true;
    }
}

pub fn triangulate(cameras: &[Camera], obs: &ObservationVector, cfg: &CertifyConfig) -> Result<TriangulationResult> {
    cfg.validate()?;
    let n = cameras.len();
    let qcqp = build_qcqp(cameras, obs)?;
    let coplanar = are_coplanar(cameras, cfg.coplanar_tol)?;
    let sol = solve_sdp(&sdp_problem(&qcqp), &cfg.solver)?;
    let (multipliers, rho) = triangulation_duals(&qcqp, &sol)?;

    let last = 2 * n;
    let x = sol.primal.as_matrix().view((0, last), (last, 1)).column(0).into_owned();
    let eig = sym_eig(&sol.primal)?.eigenvalues;
    let top = eig[eig.len() - 1];
    let rank_gap = if top > 0.0 { eig[eig.len() - 2].max(0.0) / top } else { f64::INFINITY };

    let candidate_points = unstack(&x);
    let candidate = dlt_triangulate(cameras, &candidate_points);
    let candidate_objective = qcqp.objective(&x)?;
    let feasible = qcqp.constraint_residuals(&x)?.amax() <= FEASIBILITY_TOL;

    let summary = SolverSummary {
        status: sol.status,
        iterations: sol.iterations,
        primal_obj: sol.primal_obj,
        dual_obj: sol.dual_obj,
    };

    let gap_closed = |rho: f64| candidate_objective - rho <= GAP_TOL * (1.0 + candidate_objective.abs());
    let (passes, certificate_min_eig) = check_certificate(&qcqp, &multipliers, cfg.delta)?;
    let mut witness = (passes && sol.status == SolverStatus::Converged && gap_closed(rho))
        .then(|| (multipliers.clone(), rho, certificate_min_eig));
    if witness.is_none() && feasible {
        witness = stationary_witness(&qcqp, &x, candidate_objective, cfg.delta, &[Some(&multipliers), None]);
    }

    if let (Ok(point), Some((lambda, rho_w, min_w))) = (&candidate, &witness) {
        let consistent =
            n == 2 || !coplanar || reprojection_exact(cameras, point, &candidate_points, cfg.reproj_tol);
        if consistent && rank_gap <= RANK_TOL {
            let mut result = TriangulationResult {
                status: Status::Optimal,
                point: *point,
                projections: x,
                objective: candidate_objective,
                dual_bound: *rho_w,
                certificate_min_eig: *min_w,
                rank_gap,
                coplanar,
                multipliers: lambda.clone(),
                solver: summary,
                refined: false,
            };
            polish(&qcqp, cameras, cfg.delta, &mut result);
            return Ok(result);
        }
    }

    // Fall back to the linear estimate from the candidate, or from the raw
    // observations when the candidate is unusable.
    let from_obs = dlt_triangulate(cameras, &obs.points());
    let start = match (&candidate, &from_obs) {
        (Ok(p), _) => *p,
        (Err(_), Ok(p)) => *p,
        (Err(_), Err(e)) => return Err(e.clone()),
    };
    let mut point = start;
    let mut refined = false;
    if cfg.refine {
        let mut best = geometry::reprojection_error(cameras, &start, &obs.points()).unwrap_or(f64::INFINITY);
        for seed in [candidate.ok(), from_obs.ok()].into_iter().flatten() {
            if let Ok(r) = refine(cameras, obs, &seed) {
                if r.objective < best {
                    best = r.objective;
                    point = r.point;
                    refined = true;
                }
            }
        }
    }
    let (projections, objective) = match stack_projections(cameras, &point) {
        Ok(p) => {
            let g = qcqp.objective(&p)?;
            (p, g)
        }
        Err(_) => (x.clone(), candidate_objective),
    };
    Ok(TriangulationResult {
        status: Status::Suboptimal,
        point,
        projections,
        objective,
        dual_bound: rho,
        certificate_min_eig,
        rank_gap,
        coplanar,
        multipliers,
        solver: summary,
        refined,
    })
}
