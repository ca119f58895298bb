//! Synthetic triangulation experiments.
//!
//! World points are drawn uniformly from the unit cube `[0, 1]³`. Cameras have
//! identity intrinsics and look at the cube center `(0.5, 0.5, 0.5)` from one of
//! three layouts:
//!
//! * `Sphere`: uniformly random on the sphere of radius 2 about the origin
//! * `Circle`: uniformly random on the radius-2 circle in the `xy`-plane
//! * `Line`: on the `x`-axis at distances 3, 5, 7, 9 (then 11, 13, … for
//!   more than four cameras)
//!
//! Observations are exact projections plus i.i.d. Gaussian noise of standard
//! deviation `σ` on each image coordinate. Every trial draws from its own
//! ChaCha8 stream seeded from `(seed, σ index, trial)`, so a batch is
//! reproducible regardless of how trials are scheduled.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::certify::{triangulate, CertifyConfig, Status};
use crate::geometry::{project, Camera, ImagePoint, WorldPoint};
use crate::qcqp::ObservationVector;
use crate::{Error, Result};

pub const RNG_NAME: &str = "ChaCha8Rng";

pub const RECORD_HEADER: &str =
    "geometry,n_cameras,sigma,trial,seed,status,objective,dual_bound,cert_min_eig,recon_error,runtime_ms";
pub const SUMMARY_HEADER: &str =
    "geometry,n_cameras,sigma,trials,fraction_optimal,mean_objective,mean_recon_error,mean_runtime_ms";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Geometry {
    Sphere,
    Circle,
    Line,
}

impl Geometry {
    pub const ALL: [Geometry; 3] = [Geometry::Sphere, Geometry::Circle, Geometry::Line];

    /// CSV label; lines with more than four cameras use extrapolated distances
    /// and are tagged `line_extended`.
    pub fn label(self, n_cameras: usize) -> &'static str {
        match self {
            Geometry::Sphere => "sphere",
            Geometry::Circle => "circle",
            Geometry::Line if n_cameras > 4 => "line_extended",
            Geometry::Line => "line",
        }
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label(0))
    }
}

impl FromStr for Geometry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sphere" => Ok(Geometry::Sphere),
            "circle" => Ok(Geometry::Circle),
            "line" => Ok(Geometry::Line),
            other => Err(Error::InvalidInput(format!("unknown geometry '{other}'"))),
        }
    }
}

const CUBE_CENTER: Vector3<f64> = Vector3::new(0.5, 0.5, 0.5);

#[derive(Debug, Clone)]
pub struct Instance {
    pub cameras: Vec<Camera>,
    pub truth: WorldPoint,
    pub exact: Vec<ImagePoint>,
    pub observations: ObservationVector,
}

fn camera_centers<R: Rng + ?Sized>(geometry: Geometry, n: usize, rng: &mut R) -> Vec<Vector3<f64>> {
    match geometry {
        Geometry::Sphere => (0..n)
            .map(|_| loop {
                let v = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                if let Some(u) = v.try_normalize(1e-9) {
                    break u * 2.0;
                }
            })
            .collect(),
        Geometry::Circle => (0..n)
            .map(|_| {
                let t = rng.random_range(0.0..std::f64::consts::TAU);
                Vector3::new(2.0 * t.cos(), 2.0 * t.sin(), 0.0)
            })
            .collect(),
        Geometry::Line => (0..n).map(|i| Vector3::new(3.0 + 2.0 * i as f64, 0.0, 0.0)).collect(),
    }
}

pub fn generate_instance<R: Rng + ?Sized>(geometry: Geometry, n_cameras: usize, sigma: f64, rng: &mut R) -> Result<Instance> {
    if n_cameras < 2 {
        return Err(Error::InvalidInput("need at least two cameras".into()));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput("sigma must be finite and nonnegative".into()));
    }
    let cameras = camera_centers(geometry, n_cameras, rng)
        .into_iter()
        .map(|c| Camera::look_at(c, CUBE_CENTER, Vector3::z()))
        .collect::<Result<Vec<_>>>()?;
    let truth = WorldPoint::new(rng.random(), rng.random(), rng.random());
    let exact = cameras
        .iter()
        .map(|c| project(c, &truth))
        .collect::<Result<Vec<_>>>()?;
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let noisy: Vec<f64> = exact
        .iter()
        .flat_map(|p| [p.0[0], p.0[1]])
        .map(|v| if sigma > 0.0 { v + noise.sample(rng) } else { v })
        .collect();
    Ok(Instance {
        cameras,
        truth,
        exact,
        observations: ObservationVector::new(noisy)?,
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub geometry: Geometry,
    pub n_cameras: usize,
    pub sigma_grid: Vec<f64>,
    pub trials_per_sigma: usize,
    pub seed: u64,
    pub certify: CertifyConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cameras < 2 {
            return Err(Error::InvalidInput("need at least two cameras".into()));
        }
        if self.trials_per_sigma == 0 {
            return Err(Error::InvalidInput("need at least one trial".into()));
        }
        if self.sigma_grid.is_empty() {
            return Err(Error::InvalidInput("sigma grid is empty".into()));
        }
        if self.sigma_grid.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput("sigma values must be finite and nonnegative".into()));
        }
        if self.sigma_grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidInput("sigma grid must be ascending".into()));
        }
        self.certify.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub geometry: Geometry,
    pub n_cameras: usize,
    pub sigma: f64,
    pub trial_index: usize,
    pub seed: u64,
    pub status: Status,
    pub objective: f64,
    pub dual_bound: f64,
    pub certificate_min_eig: f64,
    pub reconstruction_error: f64,
    pub runtime_ms: f64,
    /// Set when the trial itself failed; the numeric fields are then NaN.
    pub error: Option<String>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the RNG stream for one trial.
pub fn trial_seed(seed: u64, sigma_index: usize, trial: usize) -> u64 {
    splitmix64(seed ^ splitmix64(((sigma_index as u64) << 32) ^ trial as u64))
}

pub fn run_trial(cfg: &ExperimentConfig, sigma_index: usize, trial: usize) -> ExperimentRecord {
    let sigma = cfg.sigma_grid[sigma_index];
    let seed = trial_seed(cfg.seed, sigma_index, trial);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let started = Instant::now();
    let outcome = generate_instance(cfg.geometry, cfg.n_cameras, sigma, &mut rng).and_then(|inst| {
        let res = triangulate(&inst.cameras, &inst.observations, &cfg.certify)?;
        Ok((inst, res))
    });
    let runtime_ms = started.elapsed().as_secs_f64() * 1e3;
    let base = ExperimentRecord {
        geometry: cfg.geometry,
        n_cameras: cfg.n_cameras,
        sigma,
        trial_index: trial,
        seed,
        status: Status::Suboptimal,
        objective: f64::NAN,
        dual_bound: f64::NAN,
        certificate_min_eig: f64::NAN,
        reconstruction_error: f64::NAN,
        runtime_ms,
        error: None,
    };
    match outcome {
        Ok((inst, res)) => ExperimentRecord {
            status: res.status,
            objective: res.objective,
            dual_bound: res.dual_bound,
            certificate_min_eig: res.certificate_min_eig,
            reconstruction_error: (res.point.0 - inst.truth.0).norm(),
            ..base
        },
        Err(e) => ExperimentRecord {
            error: Some(e.to_string()),
            ..base
        },
    }
}

/// Runs every `(σ, trial)` cell in parallel; records come back ordered by σ
/// then trial index.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    cfg.validate()?;
    let cells: Vec<(usize, usize)> = (0..cfg.sigma_grid.len())
        .flat_map(|s| (0..cfg.trials_per_sigma).map(move |t| (s, t)))
        .collect();
    Ok(cells.par_iter().map(|&(s, t)| run_trial(cfg, s, t)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub geometry: Geometry,
    pub n_cameras: usize,
    pub sigma: f64,
    pub trials: usize,
    pub fraction_optimal: f64,
    pub mean_objective: f64,
    pub median_objective: f64,
    pub mean_recon_error: f64,
    pub mean_runtime_ms: f64,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s: Vec<f64> = v.iter().copied().filter(|x| !x.is_nan()).collect();
    if s.is_empty() {
        return f64::NAN;
    }
    s.sort_by(f64::total_cmp);
    let mid = s.len() / 2;
    if s.len() % 2 == 1 {
        s[mid]
    } else {
        0.5 * (s[mid - 1] + s[mid])
    }
}

/// Aggregates records per `(geometry, n, σ)` cell, in order of first appearance.
pub fn summarize(records: &[ExperimentRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no records to summarize".into()));
    }
    let mut keys: Vec<(Geometry, usize, u64)> = Vec::new();
    for r in records {
        let key = (r.geometry, r.n_cameras, r.sigma.to_bits());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    Ok(keys
        .into_iter()
        .map(|(geometry, n_cameras, sigma_bits)| {
            let cell: Vec<&ExperimentRecord> = records
                .iter()
                .filter(|r| r.geometry == geometry && r.n_cameras == n_cameras && r.sigma.to_bits() == sigma_bits)
                .collect();
            let field = |f: fn(&ExperimentRecord) -> f64| -> Vec<f64> { cell.iter().map(|r| f(r)).filter(|v| !v.is_nan()).collect() };
            let optimal = cell.iter().filter(|r| r.status == Status::Optimal).count();
            let objectives = field(|r| r.objective);
            SummaryRow {
                geometry,
                n_cameras,
                sigma: f64::from_bits(sigma_bits),
                trials: cell.len(),
                fraction_optimal: optimal as f64 / cell.len() as f64,
                mean_objective: mean(&objectives),
                median_objective: median(&objectives),
                mean_recon_error: mean(&field(|r| r.reconstruction_error)),
                mean_runtime_ms: mean(&field(|r| r.runtime_ms)),
            }
        })
        .collect())
}

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn timing(v: f64, include: bool) -> String {
    if include {
        real(v)
    } else {
        String::new()
    }
}

/// Writes the per-trial CSV. Wall-clock runtimes are only written when
/// `include_timing` is set; otherwise the column is left empty so reruns are
/// byte-identical.
pub fn write_records_csv<W: Write>(mut w: W, records: &[ExperimentRecord], include_timing: bool) -> io::Result<()> {
    writeln!(w, "# rng={RNG_NAME} trial_seed=splitmix64(seed,sigma_index,trial)")?;
    writeln!(w, "{RECORD_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.geometry.label(r.n_cameras),
            r.n_cameras,
            real(r.sigma),
            r.trial_index,
            r.seed,
            r.status,
            real(r.objective),
            real(r.dual_bound),
            real(r.certificate_min_eig),
            real(r.reconstruction_error),
            timing(r.runtime_ms, include_timing),
        )?;
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(mut w: W, rows: &[SummaryRow], include_timing: bool) -> io::Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.geometry.label(r.n_cameras),
            r.n_cameras,
            real(r.sigma),
            r.trials,
            real(r.fraction_optimal),
            real(r.mean_objective),
            real(r.mean_recon_error),
            timing(r.mean_runtime_ms, include_timing),
        )?;
    }
    Ok(())
}
