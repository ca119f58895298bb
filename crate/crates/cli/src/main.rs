//! `sdptri`: certified triangulation, synthetic experiments, and fundamental
//! matrices from the command line.
//!
//! Exit codes: 0 for an optimal (or otherwise successful) run, 2 when
//! triangulation returns a suboptimal point, 1 on any input or I/O error.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sdp_triangulate::geometry::fundamental_matrix;
use sdp_triangulate::harness::{run_experiment, summarize, write_records_csv, write_summary_csv, ExperimentConfig, Geometry};
use sdp_triangulate::scene::{parse_json_scene, parse_observations, parse_scene, parse_sigma_grid, Scene};
use sdp_triangulate::{triangulate, CertifyConfig, SolverConfig, Status, TriangulationResult};

#[derive(Parser)]
#[command(name = "sdptri", version, about = "Certifiably optimal n-view triangulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Triangulate one point and certify global optimality.
    Triangulate(TriangulateArgs),
    /// Run a synthetic noise sweep and write per-trial CSV records.
    Synth(SynthArgs),
    /// Print the normalized fundamental matrix of a camera pair.
    Fmatrix(FmatrixArgs),
}

#[derive(Args)]
struct SceneArgs {
    /// Scene file with cameras (and optionally observations).
    #[arg(long, value_name = "FILE")]
    cameras: PathBuf,
    /// Read the scene file as JSON.
    #[arg(long)]
    json_scene: bool,
}

#[derive(Args)]
struct CertifyArgs {
    /// Certificate threshold on the smallest eigenvalue.
    #[arg(long, default_value_t = CertifyConfig::default().delta)]
    delta: f64,
    /// Relative duality-gap tolerance of the interior-point solver.
    #[arg(long, default_value_t = SolverConfig::default().gap_tol)]
    gap_tol: f64,
    /// Feasibility tolerance of the interior-point solver.
    #[arg(long, default_value_t = SolverConfig::default().feas_tol)]
    feas_tol: f64,
    #[arg(long, default_value_t = SolverConfig::default().max_iterations)]
    max_iterations: usize,
    /// Skip local refinement of suboptimal results.
    #[arg(long)]
    no_refine: bool,
}

impl CertifyArgs {
    fn config(&self) -> CertifyConfig {
        let base = CertifyConfig::default();
        CertifyConfig {
            delta: self.delta,
            refine: !self.no_refine,
            solver: SolverConfig {
                gap_tol: self.gap_tol,
                feas_tol: self.feas_tol,
                max_iterations: self.max_iterations,
                ..base.solver
            },
            ..base
        }
    }
}

#[derive(Args)]
struct TriangulateArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Observation file (`obs` header optional, one `u v` line per camera);
    /// overrides observations embedded in the scene.
    #[arg(long, value_name = "FILE")]
    obs: Option<PathBuf>,
    #[command(flatten)]
    certify: CertifyArgs,
    /// Emit a single JSON object.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// sphere, circle, or line
    #[arg(long)]
    geometry: Geometry,
    /// Number of cameras.
    #[arg(long)]
    cameras: usize,
    /// LO:STEP:HI, a comma list, or a single value.
    #[arg(long, value_name = "GRID")]
    sigma_grid: String,
    #[arg(long)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-trial record CSV.
    #[arg(long, value_name = "CSV")]
    out: PathBuf,
    /// Per-noise-level summary CSV.
    #[arg(long, value_name = "CSV")]
    summary: Option<PathBuf>,
    /// Fill the runtime column (makes output nondeterministic).
    #[arg(long)]
    timing: bool,
    #[command(flatten)]
    certify: CertifyArgs,
}

#[derive(Args)]
struct FmatrixArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Two distinct 1-based camera indices.
    #[arg(long, num_args = 2, value_names = ["I", "J"])]
    pair: Vec<usize>,
}

/// A failure reported to the user with exit code 1.
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn load_scene(args: &SceneArgs) -> Result<Scene, Failure> {
    let text = read(&args.cameras)?;
    let parsed = if args.json_scene { parse_json_scene(&text) } else { parse_scene(&text) };
    parsed.map_err(|e| Failure(format!("{}: {e}", args.cameras.display())))
}

fn report_json(r: &TriangulationResult) -> serde_json::Value {
    json!({
        "schema": 1,
        "status": r.status,
        "point": [r.point.0[0], r.point.0[1], r.point.0[2]],
        "projections": r.projections.as_slice(),
        "objective": r.objective,
        "dual_bound": r.dual_bound,
        "certificate_min_eig": r.certificate_min_eig,
        "rank_gap": r.rank_gap,
        "coplanar": r.coplanar,
        "refined": r.refined,
        "multipliers": r.multipliers,
        "solver": r.solver,
    })
}

fn report_text(r: &TriangulationResult) -> String {
    let p = r.point.0;
    format!(
        "status              {}\n\
         point               {:.12} {:.12} {:.12}\n\
         objective           {:.12e}\n\
         dual_bound          {:.12e}\n\
         certificate_min_eig {:.6}\n\
         rank_gap            {:.3e}\n\
         coplanar            {}\n\
         refined             {}\n\
         solver              {:?} after {} iterations\n",
        r.status,
        p[0],
        p[1],
        p[2],
        r.objective,
        r.dual_bound,
        r.certificate_min_eig,
        r.rank_gap,
        r.coplanar,
        r.refined,
        r.solver.status,
        r.solver.iterations
    )
}

fn cmd_triangulate(args: &TriangulateArgs) -> Result<ExitCode, Failure> {
    let scene = load_scene(&args.scene)?;
    let n = scene.cameras.len();
    let obs = match &args.obs {
        Some(path) => parse_observations(&read(path)?, n).map_err(|e| Failure(format!("{}: {e}", path.display())))?,
        None => scene
            .observations
            .ok_or_else(|| Failure("no observations: pass --obs or add an `obs` block to the scene".into()))?,
    };
    let result = triangulate(&scene.cameras, &obs, &args.certify.config())?;
    let mut out = io::stdout().lock();
    if args.json {
        writeln!(out, "{}", report_json(&result))?;
    } else {
        write!(out, "{}", report_text(&result))?;
    }
    Ok(match result.status {
        Status::Optimal => ExitCode::SUCCESS,
        Status::Suboptimal => ExitCode::from(2),
    })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, Failure> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn cmd_synth(args: &SynthArgs) -> Result<ExitCode, Failure> {
    let cfg = ExperimentConfig {
        geometry: args.geometry,
        n_cameras: args.cameras,
        sigma_grid: parse_sigma_grid(&args.sigma_grid)?,
        trials_per_sigma: args.trials,
        seed: args.seed,
        certify: args.certify.config(),
    };
    cfg.validate()?;
    // Open outputs first so an unwritable path fails before the sweep runs.
    let mut records_out = create(&args.out)?;
    let mut summary_out = args.summary.as_deref().map(create).transpose()?;

    let records = run_experiment(&cfg)?;
    write_records_csv(&mut records_out, &records, args.timing)?;
    records_out.flush()?;
    if let Some(w) = summary_out.as_mut() {
        write_summary_csv(&mut *w, &summarize(&records)?, args.timing)?;
        w.flush()?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_fmatrix(args: &FmatrixArgs) -> Result<ExitCode, Failure> {
    let scene = load_scene(&args.scene)?;
    let n = scene.cameras.len();
    let (i, j) = (args.pair[0], args.pair[1]);
    if i == j || !(1..=n).contains(&i) || !(1..=n).contains(&j) {
        return Err(Failure(format!("pair must be two distinct indices in 1..={n}, got {i} {j}")));
    }
    let f = fundamental_matrix(&scene.cameras[i - 1], &scene.cameras[j - 1])
        .map_err(|_| Failure(format!("cameras {i} and {j} share a center")))?;
    let mut out = io::stdout().lock();
    for r in 0..3 {
        let m = f.matrix();
        writeln!(out, "{:.17e} {:.17e} {:.17e}", m[(r, 0)], m[(r, 1)], m[(r, 2)])?;
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match &cli.command {
        Command::Triangulate(a) => cmd_triangulate(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Fmatrix(a) => cmd_fmatrix(a),
    };
    outcome.unwrap_or_else(|Failure(msg)| {
        eprintln!("error: {msg}");
        ExitCode::from(1)
    })
}
