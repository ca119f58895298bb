//! Levenberg-Marquardt refinement of a world point against its observations.

use nalgebra::{Matrix3, Matrix4x3, Vector3, Vector4};

use crate::geometry::{reprojection_error, Camera, WorldPoint};
use crate::qcqp::ObservationVector;
use crate::{Error, Result};

const MAX_ITERATIONS: usize = 200;
const GRADIENT_TOL: f64 = 1e-15;
const POLISH_STEPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub point: WorldPoint,
    /// `Σ ‖Π P_i X̃ − x̂_i‖²` at `point`.
    pub objective: f64,
    pub iterations: usize,
}

/// Residuals and Jacobian rows of the reprojection error, or `None` when some
/// depth vanishes.
fn linearize(cameras: &[Camera], obs: &ObservationVector, x: &Vector3<f64>) -> Option<(Matrix3<f64>, Vector3<f64>, f64)> {
    let xh = x.push(1.0);
    let mut jtj = Matrix3::zeros();
    let mut jtr = Vector3::zeros();
    let mut cost = 0.0;
    for (i, cam) in cameras.iter().enumerate() {
        let p = cam.matrix();
        let h = p * xh;
        if !(h[2].abs() > 1e-12 * p.norm() * xh.norm()) {
            return None;
        }
        let u = h[0] / h[2];
        let v = h[1] / h[2];
        let target = obs.point(i).0;
        let ru = u - target[0];
        let rv = v - target[1];
        let du = Vector3::from_fn(|k, _| (p[(0, k)] - u * p[(2, k)]) / h[2]);
        let dv = Vector3::from_fn(|k, _| (p[(1, k)] - v * p[(2, k)]) / h[2]);
        jtj += du * du.transpose() + dv * dv.transpose();
        jtr += du * ru + dv * rv;
        cost += ru * ru + rv * rv;
    }
    Some((jtj, jtr, cost))
}

/// Orthonormal basis of the complement of `v` (unit norm).
fn tangent_basis(v: &Vector4<f64>) -> Matrix4x3<f64> {
    let k = v.iamax();
    let mut basis = Matrix4x3::zeros();
    for (col, e) in (0..4).filter(|&e| e != k).enumerate() {
        let mut b = Vector4::zeros();
        b[e] = 1.0;
        b -= v * v[e];
        for c in 0..col {
            let prev = basis.column(c).into_owned();
            b -= prev * prev.dot(&b);
        }
        basis.set_column(col, &b.normalize());
    }
    basis
}

/// Gradient and full Hessian (halved) of the reprojection error at a unit
/// homogeneous point, in coordinates of its tangent space.
fn linearize_homogeneous(cameras: &[Camera], obs: &ObservationVector, xh: &Vector4<f64>) -> Option<(Matrix3<f64>, Vector3<f64>, f64)> {
    let basis = tangent_basis(xh);
    let mut jtj = Matrix3::zeros();
    let mut jtr = Vector3::zeros();
    let mut cost = 0.0;
    for (i, cam) in cameras.iter().enumerate() {
        let p = cam.matrix();
        let h = p * xh;
        if !(h[2].abs() > 1e-12 * p.norm()) {
            return None;
        }
        let u = h[0] / h[2];
        let v = h[1] / h[2];
        let target = obs.point(i).0;
        let ru = u - target[0];
        let rv = v - target[1];
        let gu = Vector4::from_fn(|k, _| (p[(0, k)] - u * p[(2, k)]) / h[2]);
        let gv = Vector4::from_fn(|k, _| (p[(1, k)] - v * p[(2, k)]) / h[2]);
        let c = basis.transpose() * Vector4::from_fn(|k, _| p[(2, k)] / h[2]);
        let du = basis.transpose() * gu;
        let dv = basis.transpose() * gv;
        let second = |d: &Vector3<f64>| -(d * c.transpose() + c * d.transpose());
        jtj += du * du.transpose() + dv * dv.transpose() + second(&du) * ru + second(&dv) * rv;
        jtr += du * ru + dv * rv;
        cost += ru * ru + rv * rv;
    }
    Some((jtj, jtr, cost))
}

pub fn refine(cameras: &[Camera], obs: &ObservationVector, start: &WorldPoint) -> Result<Refinement> {
    if obs.n_views() != cameras.len() {
        return Err(Error::DimensionMismatch {
            expected: 2 * cameras.len(),
            got: obs.as_vector().len(),
        });
    }
    let points = obs.points();
    let cost_at = |x: &Vector3<f64>| reprojection_error(cameras, &WorldPoint(*x), &points).ok();

    let mut x = start.0;
    let Some((mut jtj, mut jtr, mut cost)) = linearize(cameras, obs, &x) else {
        return Err(Error::RefinementFailed("start point has a degenerate depth".into()));
    };
    // Damping follows the gain-ratio rule: shrink it smoothly when the
    // quadratic model predicts the decrease well, double the growth factor on
    // each rejection.
    let mut damping = 1e-3;
    let mut growth = 2.0;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS && jtr.norm() > GRADIENT_TOL && damping < 1e16 {
        iterations += 1;
        let mut a = jtj;
        for k in 0..3 {
            a[(k, k)] += damping * (jtj[(k, k)] + 1e-12);
        }
        let Some(step) = a.lu().solve(&-jtr) else {
            damping *= growth;
            growth *= 2.0;
            continue;
        };
        let cand = x + step;
        // Predicted decrease of the Gauss-Newton model, Σ r² − Σ (r + J s)².
        let predicted = -(2.0 * step.dot(&jtr) + step.dot(&(jtj * step)));
        let accepted = cost_at(&cand)
            .filter(|&c| c <= cost + 4.0 * f64::EPSILON * cost)
            .and_then(|c| Some((c, linearize(cameras, obs, &cand)?)));
        match accepted {
            Some((c, lin)) => {
                let gain = if predicted > 0.0 { (cost - c) / predicted } else { 0.0 };
                damping *= (1.0 - (2.0 * gain - 1.0).powi(3)).max(1.0 / 3.0);
                damping = damping.max(1e-15);
                growth = 2.0;
                x = cand;
                (jtj, jtr, cost) = lin;
                if step.norm() <= 1e-15 * (1.0 + x.norm()) {
                    break;
                }
            }
            None => {
                damping *= growth;
                growth *= 2.0;
            }
        }
    }
    // Near the minimum cost differences drop below rounding in affine
    // coordinates for distant points; finish with Newton steps on the
    // unit-norm homogeneous point.
    let mut xh = x.push(1.0).normalize();
    let Some(mut lin) = linearize_homogeneous(cameras, obs, &xh) else {
        return Ok(Refinement { point: WorldPoint(x), objective: cost, iterations });
    };
    for _ in 0..POLISH_STEPS {
        let Some(step) = lin.0.lu().solve(&-lin.1) else { break };
        let cand = (xh + tangent_basis(&xh) * step).normalize();
        if !(cand[3].abs() > 1e-12) {
            break;
        }
        let affine = cand.xyz() / cand[3];
        let (Some(c), Some(next)) = (cost_at(&affine), linearize_homogeneous(cameras, obs, &cand)) else { break };
        if !(next.1.norm() < lin.1.norm() && c <= cost + 16.0 * f64::EPSILON * cost) {
            break;
        }
        xh = cand;
        x = affine;
        cost = c;
        lin = next;
    }
    Ok(Refinement {
        point: WorldPoint(x),
        objective: cost,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project;

    fn cameras() -> Vec<Camera> {
        [Vector3::new(2.0, 0.0, 0.3), Vector3::new(0.0, 2.0, 0.8), Vector3::new(-1.5, -1.0, 1.0)]
            .into_iter()
            .map(|c| Camera::look_at(c, Vector3::new(0.5, 0.5, 0.5), Vector3::z()).unwrap())
            .collect()
    }

    #[test]
    fn noiseless_start_is_fixed_point() {
        let cams = cameras();
        let p = WorldPoint::new(0.3, 0.4, 0.6);
        let pts: Vec<_> = cams.iter().map(|c| project(c, &p).unwrap()).collect();
        let obs = ObservationVector::from_points(&pts).unwrap();
        let r = refine(&cams, &obs, &p).unwrap();
        assert!(r.objective < 1e-24);
        assert!((r.point.0 - p.0).norm() < 1e-12);
    }

    #[test]
    fn objective_never_increases() {
        let cams = cameras();
        let obs = ObservationVector::new(vec![0.1, -0.2, 0.05, 0.3, -0.1, 0.0]).unwrap();
        let start = WorldPoint::new(0.5, 0.5, 0.5);
        let before = reprojection_error(&cams, &start, &obs.points()).unwrap();
        let r = refine(&cams, &obs, &start).unwrap();
        assert!(r.objective <= before);
        assert!(r.iterations <= MAX_ITERATIONS);
    }

    #[test]
    fn degenerate_start_fails() {
        let cams = cameras();
        let obs = ObservationVector::new(vec![0.0; 6]).unwrap();
        // The first camera's center has zero depth in its own image.
        let err = refine(&cams, &obs, &WorldPoint::new(2.0, 0.0, 0.3));
        assert!(matches!(err, Err(Error::RefinementFailed(_))));
    }

    #[test]
    fn homogeneous_derivatives_match_finite_differences() {
        let cams = cameras();
        let obs = ObservationVector::new(vec![0.1, -0.2, 0.05, 0.3, -0.1, 0.0]).unwrap();
        let xh = Vector4::new(0.3, 0.4, 0.6, 1.0).normalize();
        let basis = tangent_basis(&xh);
        assert!((basis.transpose() * basis - Matrix3::identity()).amax() < 1e-14);
        assert!((basis.transpose() * xh).amax() < 1e-14);

        let (hess, grad, _) = linearize_homogeneous(&cams, &obs, &xh).unwrap();
        let at = |d: &Vector3<f64>| (xh + basis * d).normalize();
        let half_cost = |d: &Vector3<f64>| linearize_homogeneous(&cams, &obs, &at(d)).unwrap().2 / 2.0;
        let h = 1e-5;
        for k in 0..3 {
            let mut e = Vector3::zeros();
            e[k] = h;
            let fd = (half_cost(&e) - half_cost(&-e)) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-8, "gradient {k}");
            for l in 0..3 {
                let mut f = Vector3::zeros();
                f[l] = h;
                let fd = (half_cost(&(e + f)) - half_cost(&(e - f)) - half_cost(&(f - e)) + half_cost(&(-e - f)))
                    / (4.0 * h * h);
                assert!((fd - hess[(k, l)]).abs() < 1e-4, "hessian {k} {l}");
            }
        }
    }

    #[test]
    fn distant_minimum_is_stationary_in_the_image() {
        let cams: Vec<Camera> = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)]
            .into_iter()
            .map(|c| Camera::look_at(c, Vector3::new(0.5, 0.0, 300.0), Vector3::y()).unwrap())
            .collect();
        let truth = WorldPoint::new(0.5, 0.2, 300.0);
        let mut pts: Vec<_> = cams.iter().map(|c| project(c, &truth).unwrap()).collect();
        pts[0].0[0] += 0.2;
        pts[1].0[1] -= 0.1;
        let obs = ObservationVector::from_points(&pts).unwrap();
        let r = refine(&cams, &obs, &truth).unwrap();
        let (_, grad, _) = linearize_homogeneous(&cams, &obs, &r.point.0.push(1.0).normalize()).unwrap();
        assert!(grad.norm() < 1e-12, "{}", grad.norm());
    }
}
