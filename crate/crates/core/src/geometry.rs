//! Projective cameras and the two-view and n-view geometry built on them.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, Vector2, Vector3, Vector4};

use crate::linalg;
use crate::{Error, Result};

/// Default relative tolerance for the camera-center coplanarity test.
pub const DEFAULT_COPLANAR_TOL: f64 = 1e-6;

/// A finite projective camera `P ∈ R^{3×4}` of rank 3, defined up to scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera(Matrix3x4<f64>);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldPoint(pub Vector3<f64>);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagePoint(pub Vector2<f64>);

impl WorldPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self(Vector3::new(x, y, z))
    }

    pub fn homogeneous(&self) -> Vector4<f64> {
        self.0.push(1.0)
    }
}

impl ImagePoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self(Vector2::new(u, v))
    }

    pub fn homogeneous(&self) -> Vector3<f64> {
        self.0.push(1.0)
    }
}

impl Camera {
    /// Validates finiteness and rank 3 (third singular value above `1e-10 σ₁`).
    pub fn new(p: Matrix3x4<f64>) -> Result<Self> {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("camera has non-finite entries".into()));
        }
        let s = linalg::svd(&DMatrix::from_column_slice(3, 4, p.as_slice()))?.singular_values;
        if s[0] == 0.0 || s[2] <= 1e-10 * s[0] {
            return Err(Error::InvalidInput("camera matrix must have rank 3".into()));
        }
        Ok(Self(p))
    }

    pub fn from_row_slice(rows: &[f64]) -> Result<Self> {
        if rows.len() != 12 {
            return Err(Error::DimensionMismatch {
                expected: 12,
                got: rows.len(),
            });
        }
        Self::new(Matrix3x4::from_row_slice(rows))
    }

    pub fn matrix(&self) -> &Matrix3x4<f64> {
        &self.0
    }

    /// Camera at `center` looking at `target` with identity intrinsics.
    ///
    /// The image x-axis is `forward × up`; when `forward` is nearly parallel to
    /// `up` the fallback `+x` is used instead.
    pub fn look_at(center: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let forward = (target - center)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidInput("camera center equals target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-6)
            .or_else(|| forward.cross(&Vector3::x()).try_normalize(1e-6))
            .ok_or_else(|| Error::InvalidInput("cannot orient camera".into()))?;
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let mut p = Matrix3x4::zeros();
        p.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        p.set_column(3, &-(r * center));
        Self::new(p)
    }
}

pub fn project(camera: &Camera, point: &WorldPoint) -> Result<ImagePoint> {
    let xh = point.homogeneous();
    let p = camera.0 * xh;
    let w = p[2];
    if !(w.abs() > 1e-12 * camera.0.norm() * xh.norm()) {
        return Err(Error::PointAtInfinity);
    }
    Ok(ImagePoint::new(p[0] / w, p[1] / w))
}

/// Homogeneous null vector of `P` from its signed 3×3 minors.
fn center_homogeneous(p: &Matrix3x4<f64>) -> Vector4<f64> {
    let minor = |skip: usize| {
        let cols: Vec<usize> = (0..4).filter(|&c| c != skip).collect();
        Matrix3::from_fn(|r, c| p[(r, cols[c])]).determinant()
    };
    Vector4::new(minor(0), -minor(1), minor(2), -minor(3))
}

pub fn camera_center(camera: &Camera) -> Result<Vector3<f64>> {
    let c = center_homogeneous(&camera.0);
    if !(c[3].abs() > 1e-12 * c.norm()) {
        return Err(Error::UnsupportedCamera("camera center is at infinity".into()));
    }
    Ok(c.xyz() / c[3])
}

/// Whether all camera centers lie on a common plane.
///
/// Three or fewer centers are always coplanar. Otherwise the centered center
/// matrix must have third singular value at most `tol · (1 + σ₁)`.
pub fn are_coplanar(cameras: &[Camera], tol: f64) -> Result<bool> {
    if cameras.len() < 2 {
        return Err(Error::InvalidInput("need at least two cameras".into()));
    }
    let centers = cameras
        .iter()
        .map(camera_center)
        .collect::<Result<Vec<_>>>()?;
    if centers.len() <= 3 {
        return Ok(true);
    }
    let mean = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    let m = DMatrix::from_fn(centers.len(), 3, |i, j| centers[i][j] - mean[j]);
    let s = linalg::svd(&m)?.singular_values;
    Ok(s[2] <= tol * (1.0 + s[0]))
}

/// A rank-2 fundamental matrix scaled to unit spectral norm.
///
/// For the pair built by [`fundamental_matrix`]`(P_i, P_j)`, corresponding image
/// points satisfy `x̃_iᵀ F x̃_j = 0`: image `i` sits on the left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalMatrix(Matrix3<f64>);

impl FundamentalMatrix {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// `x̃_iᵀ F x̃_j`.
    pub fn residual(&self, xi: &ImagePoint, xj: &ImagePoint) -> f64 {
        xi.homogeneous().dot(&(self.0 * xj.homogeneous()))
    }

    pub fn singular_values(&self) -> Vector3<f64> {
        self.0.singular_values()
    }
}

/// `F = [e]_× P_i P_j⁺` with `e = P_i c_j`, normalized by its largest singular value.
pub fn fundamental_matrix(pi: &Camera, pj: &Camera) -> Result<FundamentalMatrix> {
    let ci = center_homogeneous(&pi.0);
    let cj = center_homogeneous(&pj.0);
    // Coincident centers make the epipole vanish.
    let cin = ci / ci.norm();
    let cjn = cj / cj.norm();
    if (cin - cjn).norm().min((cin + cjn).norm()) <= 1e-10 {
        return Err(Error::DegeneratePair(0, 1));
    }
    let e = pi.0 * cj;
    let ex = e.cross_matrix();
    let pj_t = pj.0.transpose();
    let gram = pj.0 * pj_t;
    let gram_inv = gram
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("camera matrix must have rank 3".into()))?;
    let pinv = pj_t * gram_inv;
    let f = ex * pi.0 * pinv;
    let s = f.singular_values();
    let smax = s.max();
    if !(smax > 0.0) || !smax.is_finite() {
        return Err(Error::DegeneratePair(0, 1));
    }
    Ok(FundamentalMatrix(f / smax))
}

/// Linear (DLT) triangulation: the unit null vector of the stacked rows
/// `u_i P_i³ − P_i¹` and `v_i P_i³ − P_i²`, dehomogenized.
pub fn dlt_triangulate(cameras: &[Camera], points: &[ImagePoint]) -> Result<WorldPoint> {
    if cameras.len() < 2 {
        return Err(Error::InvalidInput("need at least two views".into()));
    }
    if cameras.len() != points.len() {
        return Err(Error::DimensionMismatch {
            expected: cameras.len(),
            got: points.len(),
        });
    }
    let mut a = DMatrix::zeros(2 * cameras.len(), 4);
    for (i, (cam, x)) in cameras.iter().zip(points).enumerate() {
        if !x.0.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("image point has non-finite entries".into()));
        }
        let p = &cam.0;
        let r0 = p.row(2) * x.0[0] - p.row(0);
        let r1 = p.row(2) * x.0[1] - p.row(1);
        a.row_mut(2 * i).copy_from(&r0);
        a.row_mut(2 * i + 1).copy_from(&r1);
    }
    let dec = linalg::svd(&a)?;
    let s = &dec.singular_values;
    if s[0] == 0.0 || s[2] <= 1e-10 * s[0] {
        return Err(Error::DegenerateTriangulation(
            "linear system has a multi-dimensional null space".into(),
        ));
    }
    let h = dec.v.column(3);
    if !(h[3].abs() >= 1e-10 * h.norm()) {
        return Err(Error::PointAtInfinity);
    }
    Ok(WorldPoint(Vector3::new(h[0], h[1], h[2]) / h[3]))
}

/// Whether `point` reprojects onto every `points[i]` within `tol`. Any depth
/// failure counts as not exact.
pub fn reprojection_exact(
    cameras: &[Camera],
    point: &WorldPoint,
    points: &[ImagePoint],
    tol: f64,
) -> bool {
    cameras.len() == points.len()
        && cameras.iter().zip(points).all(|(cam, x)| match project(cam, point) {
            Ok(p) => (p.0 - x.0).norm() <= tol,
            Err(_) => false,
        })
}

/// Sum of squared reprojection errors, `Σ ‖Π P_i X̃ − x_i‖²`.
pub fn reprojection_error(
    cameras: &[Camera],
    point: &WorldPoint,
    points: &[ImagePoint],
) -> Result<f64> {
    cameras.iter().zip(points).try_fold(0.0, |acc, (cam, x)| {
        Ok(acc + (project(cam, point)?.0 - x.0).norm_squared())
    })
}

/// Applies a rigid motion to the world frame: `P ↦ P · T⁻¹` where `T` maps old
/// world coordinates to new ones.
pub fn transform_camera(camera: &Camera, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Result<Camera> {
    let mut t = Matrix4::identity();
    t.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation.transpose());
    let back = -(rotation.transpose() * translation);
    t.fixed_view_mut::<3, 1>(0, 3).copy_from(&back);
    Camera::new(camera.0 * t)
}


#[cfg(test)]
mod tests {
    use super::fixtures::axis_pair;
    use super::*;
    use nalgebra::Rotation3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn canonical() -> Camera {
        Camera::new(Matrix3x4::identity()).unwrap()
    }

    fn random_camera(rng: &mut ChaCha8Rng) -> Camera {
        let center = Vector3::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(3.0..5.0),
        );
        Camera::look_at(center, Vector3::new(0.5, 0.5, 0.5), Vector3::z()).unwrap()
    }

    fn random_point(rng: &mut ChaCha8Rng) -> WorldPoint {
        WorldPoint::new(rng.random(), rng.random(), rng.random())
    }

    #[test]
    fn rejects_rank_deficient_camera() {
        let p = Matrix3x4::from_row_slice(&[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert!(Camera::new(p).is_err());
        let mut q = Matrix3x4::identity();
        q[(0, 0)] = f64::NAN;
        assert!(Camera::new(q).is_err());
    }

    #[test]
    fn project_examples() {
        let x = project(&canonical(), &WorldPoint::new(0.2, -0.4, 5.0)).unwrap();
        assert!((x.0 - Vector2::new(0.04, -0.08)).norm() < 1e-15);

        let (a1, _) = axis_pair(1.0, 2.0);
        let x = project(&a1, &WorldPoint::new(0.0, 0.2, 0.3)).unwrap();
        assert!((x.0 - Vector2::new(0.3, 0.2)).norm() < 1e-15);

        assert_eq!(
            project(&canonical(), &WorldPoint::new(1.0, 1.0, 0.0)),
            Err(Error::PointAtInfinity)
        );
    }

    #[test]
    fn center_examples() {
        assert!(camera_center(&canonical()).unwrap().norm() < 1e-15);
        let (a1, a2) = axis_pair(1.0, 2.0);
        assert!((camera_center(&a1).unwrap() - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-14);
        assert!((camera_center(&a2).unwrap() - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-14);

        let affine = Camera::from_row_slice(&[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(camera_center(&affine), Err(Error::UnsupportedCamera(_))));
    }

    #[test]
    fn center_is_null_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let cam = random_camera(&mut rng);
            let c = camera_center(&cam).unwrap();
            assert!((cam.matrix() * c.push(1.0)).norm() <= 1e-9 * cam.matrix().norm());
        }
    }

    fn at_center(c: Vector3<f64>) -> Camera {
        Camera::look_at(c, Vector3::new(5.0, 5.0, 5.0), Vector3::z()).unwrap()
    }

    #[test]
    fn coplanarity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let three: Vec<_> = (0..3).map(|_| random_camera(&mut rng)).collect();
        assert!(are_coplanar(&three, DEFAULT_COPLANAR_TOL).unwrap());

        let cube: Vec<_> = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        ]
        .into_iter()
        .map(at_center)
        .collect();
        assert!(!are_coplanar(&cube, DEFAULT_COPLANAR_TOL).unwrap());

        let flat: Vec<_> = (0..5)
            .map(|_| at_center(Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 0.0)))
            .collect();
        assert!(are_coplanar(&flat, DEFAULT_COPLANAR_TOL).unwrap());
    }

    #[test]
    fn coplanarity_is_rigid_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for planar in [true, false] {
            let cams: Vec<_> = (0..6)
                .map(|_| {
                    let z = if planar { 0.0 } else { rng.random_range(-2.0..2.0) };
                    at_center(Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), z))
                })
                .collect();
            let rot = Rotation3::from_euler_angles(0.3, -1.1, 2.0).into_inner();
            let t = Vector3::new(1.0, -2.0, 0.5);
            let moved: Vec<_> = cams.iter().map(|c| transform_camera(c, &rot, &t).unwrap()).collect();
            assert_eq!(are_coplanar(&cams, 1e-6).unwrap(), planar);
            assert_eq!(are_coplanar(&moved, 1e-6).unwrap(), planar);
        }
    }

    #[test]
    fn fundamental_of_axis_pair() {
        let (a1, a2) = axis_pair(1.0, 2.0);
        let f = fundamental_matrix(&a1, &a2).unwrap();
        let expected = Matrix3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let scale = f.matrix()[(0, 1)];
        assert!((scale.abs() - 1.0).abs() < 1e-12);
        assert!((f.matrix() - expected * scale).norm() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x = WorldPoint::new(rng.random_range(-1.0..0.5), rng.random(), rng.random());
            let xi = project(&a1, &x).unwrap();
            let xj = project(&a2, &x).unwrap();
            assert!(f.residual(&xi, &xj).abs() < 1e-9);
        }
    }

    #[test]
    fn fundamental_rejects_same_camera() {
        let (a1, _) = axis_pair(1.0, 2.0);
        assert!(matches!(fundamental_matrix(&a1, &a1), Err(Error::DegeneratePair(..))));
    }

    #[test]
    fn fundamental_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let pi = random_camera(&mut rng);
            let pj = random_camera(&mut rng);
            let f = fundamental_matrix(&pi, &pj).unwrap();
            let s = f.singular_values();
            let mut sorted = [s[0], s[1], s[2]];
            sorted.sort_by(|a, b| b.total_cmp(a));
            assert!((sorted[0] - 1.0).abs() < 1e-12);
            assert!(sorted[2] <= 1e-8);
            for _ in 0..100 {
                let x = random_point(&mut rng);
                let r = f.residual(&project(&pi, &x).unwrap(), &project(&pj, &x).unwrap());
                assert!(r.abs() <= 1e-9, "epipolar residual {r}");
            }
            // F annihilates the epipole of camera i's center in image j.
            let e = pj.matrix() * camera_center(&pi).unwrap().push(1.0);
            assert!((f.matrix() * e).norm() <= 1e-8 * e.norm());

            // Swapping the pair transposes F (up to sign).
            let g = fundamental_matrix(&pj, &pi).unwrap();
            let t = f.matrix().transpose();
            assert!((g.matrix() - t).norm().min((g.matrix() + t).norm()) < 1e-9);
        }
    }

    #[test]
    fn dlt_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cams: Vec<_> = (0..4).map(|_| random_camera(&mut rng)).collect();
        let x = WorldPoint::new(0.1, 0.2, 0.3);
        let obs: Vec<_> = cams.iter().map(|c| project(c, &x).unwrap()).collect();
        let rec = dlt_triangulate(&cams, &obs).unwrap();
        assert!((rec.0 - x.0).norm() < 1e-8);

        let (a1, a2) = axis_pair(1.0, 2.0);
        let x = WorldPoint::new(0.0, 0.2, 0.3);
        let obs = [project(&a1, &x).unwrap(), project(&a2, &x).unwrap()];
        let rec = dlt_triangulate(&[a1, a2], &obs).unwrap();
        assert!((rec.0 - x.0).norm() < 1e-8);

        let same = [a1, a1];
        let p = [obs[0], obs[0]];
        assert!(matches!(
            dlt_triangulate(&same, &p),
            Err(Error::PointAtInfinity | Error::DegenerateTriangulation(_))
        ));
    }

    #[test]
    fn reprojection_exact_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cams: Vec<_> = (0..3).map(|_| random_camera(&mut rng)).collect();
        let x = random_point(&mut rng);
        let mut obs: Vec<_> = cams.iter().map(|c| project(c, &x).unwrap()).collect();
        assert!(reprojection_exact(&cams, &x, &obs, 1e-6));
        obs[1].0[0] += 1e-5;
        assert!(!reprojection_exact(&cams, &x, &obs, 1e-6));
    }

    #[test]
    fn spurious_collinear_points_are_rejected() {
        // Collinear centers on the x-axis: any three points on one plane through
        // the axis satisfy all epipolar constraints pairwise, yet their rays need
        // not meet.
        let cams: Vec<_> = [3.0, 5.0, 7.0]
            .into_iter()
            .map(|d| Camera::look_at(Vector3::new(d, 0.0, 0.0), Vector3::new(0.5, 0.5, 0.5), Vector3::z()).unwrap())
            .collect();
        let plane_point = |s: f64, t: f64| WorldPoint(Vector3::new(s, t * 0.6, t * 0.8));
        let worlds = [plane_point(0.2, 0.5), plane_point(0.6, 0.9), plane_point(0.1, 0.3)];
        let obs: Vec<_> = cams.iter().zip(&worlds).map(|(c, w)| project(c, w).unwrap()).collect();
        for i in 0..3 {
            for j in (i + 1)..3 {
                let f = fundamental_matrix(&cams[i], &cams[j]).unwrap();
                assert!(f.residual(&obs[i], &obs[j]).abs() < 1e-12);
            }
        }
        let x = dlt_triangulate(&cams, &obs).unwrap();
        assert!(!reprojection_exact(&cams, &x, &obs, 1e-6));
    }

    proptest! {
        #[test]
        fn dlt_round_trip(seed in any::<u64>(), n in 2usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cams: Vec<_> = (0..n).map(|_| random_camera(&mut rng)).collect();
            let x = random_point(&mut rng);
            let obs: Vec<_> = cams.iter().map(|c| project(c, &x).unwrap()).collect();
            let rec = dlt_triangulate(&cams, &obs).unwrap();
            prop_assert!((rec.0 - x.0).norm() <= 1e-7 * (1.0 + x.0.norm()));
        }
    }
}
