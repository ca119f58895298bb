//! Scene files: cameras plus optional observations and ground truth.
//!
//! Text format (blank lines and lines starting with `#` are ignored):
//!
//! ```text
//! 2                       # number of cameras
//! 0 0 1 0                 # camera 1, three rows of four reals
//! 0 1 0 0
//! -1 0 0 1
//! 0 0 1 0                 # camera 2
//! 0 1 0 0
//! -1 0 0 2
//! obs                     # optional: one "u v" line per camera
//! 0 0.1
//! 0.1 0
//! truth                   # optional: "X Y Z" on this line or the next
//! 0 0 0
//! ```
//!
//! Trailing `#` comments after numbers are allowed. The JSON form carries the
//! same data as `{"cameras": [[[..4], [..4], [..4]], ...], "observations":
//! [[u, v], ...], "truth": [x, y, z]}`.

use std::fmt::Write as _;

use serde::Deserialize;

use crate::geometry::{Camera, ImagePoint, WorldPoint};
use crate::qcqp::ObservationVector;
use crate::{Error, Result};

/// Upper bound on the camera count accepted from files.
pub const MAX_CAMERAS: usize = 4096;

/// Upper bound on the number of values a sigma grid may expand to.
pub const MAX_SIGMA_LEVELS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cameras: Vec<Camera>,
    pub observations: Option<ObservationVector>,
    pub truth: Option<WorldPoint>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Meaningful lines with their 1-based line numbers, comments stripped.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let body = raw.split('#').next().unwrap_or("").trim();
        (!body.is_empty()).then_some((i + 1, body))
    })
}

fn parse_reals(line: usize, body: &str, expected: usize) -> Result<Vec<f64>> {
    let values = body
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("expected a finite real, found '{tok}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != expected {
        return Err(parse_err(
            line,
            format!("expected {expected} values, found {}", values.len()),
        ));
    }
    Ok(values)
}

fn parse_count(line: usize, body: &str) -> Result<usize> {
    let n: usize = body
        .parse()
        .map_err(|_| parse_err(line, format!("expected camera count, found '{body}'")))?;
    if !(2..=MAX_CAMERAS).contains(&n) {
        return Err(parse_err(line, format!("camera count must be in 2..={MAX_CAMERAS}, got {n}")));
    }
    Ok(n)
}

fn observation_lines<'a, I>(lines: &mut std::iter::Peekable<I>, n: usize, last_line: usize) -> Result<ObservationVector>
where
    I: Iterator<Item = (usize, &'a str)>,
{
    let mut values = Vec::with_capacity(2 * n);
    let mut at = last_line;
    for _ in 0..n {
        let (line, body) = lines
            .next()
            .ok_or_else(|| parse_err(at + 1, format!("expected {n} observation lines")))?;
        values.extend(parse_reals(line, body, 2)?);
        at = line;
    }
    ObservationVector::new(values).map_err(|e| parse_err(at, e.to_string()))
}

pub fn parse_scene(text: &str) -> Result<Scene> {
    let mut lines = content_lines(text).peekable();
    let (first, body) = lines.next().ok_or_else(|| parse_err(1, "empty scene file"))?;
    let n = parse_count(first, body)?;
    let mut cameras = Vec::with_capacity(n);
    let mut at = first;
    for c in 0..n {
        let mut rows = Vec::with_capacity(12);
        let mut block_start = None;
        for _ in 0..3 {
            let (line, body) = lines
                .next()
                .ok_or_else(|| parse_err(at + 1, format!("camera {} is truncated", c + 1)))?;
            block_start.get_or_insert(line);
            rows.extend(parse_reals(line, body, 4)?);
            at = line;
        }
        let camera = Camera::from_row_slice(&rows)
            .map_err(|e| parse_err(block_start.unwrap_or(at), format!("camera {}: {e}", c + 1)))?;
        cameras.push(camera);
    }

    let mut observations = None;
    let mut truth = None;
    while let Some((line, body)) = lines.next() {
        let mut words = body.split_whitespace();
        let keyword = words.next().unwrap_or("");
        let rest: Vec<&str> = words.collect();
        match keyword {
            "obs" if observations.is_none() => {
                if !rest.is_empty() {
                    return Err(parse_err(line, "'obs' takes no values on its own line"));
                }
                observations = Some(observation_lines(&mut lines, n, line)?);
            }
            "truth" if truth.is_none() => {
                let values = if rest.is_empty() {
                    let (l, b) = lines
                        .next()
                        .ok_or_else(|| parse_err(line + 1, "expected ground-truth point"))?;
                    parse_reals(l, b, 3)?
                } else {
                    parse_reals(line, &rest.join(" "), 3)?
                };
                truth = Some(WorldPoint::new(values[0], values[1], values[2]));
            }
            "obs" | "truth" => return Err(parse_err(line, format!("duplicate '{keyword}' section"))),
            _ => return Err(parse_err(line, format!("unexpected content '{body}'"))),
        }
    }
    Ok(Scene {
        cameras,
        observations,
        truth,
    })
}

/// Parses an observation file holding `n` lines of `u v`, optionally preceded
/// by an `obs` header line.
pub fn parse_observations(text: &str, n: usize) -> Result<ObservationVector> {
    let mut lines = content_lines(text).peekable();
    let mut start = 0;
    if let Some(&(line, "obs")) = lines.peek() {
        start = line;
        lines.next();
    }
    let obs = observation_lines(&mut lines, n, start)?;
    if let Some((line, body)) = lines.next() {
        return Err(parse_err(line, format!("unexpected content '{body}'")));
    }
    Ok(obs)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonScene {
    cameras: Vec<[[f64; 4]; 3]>,
    #[serde(default)]
    observations: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    truth: Option<[f64; 3]>,
}

pub fn parse_json_scene(text: &str) -> Result<Scene> {
    let raw: JsonScene = serde_json::from_str(text).map_err(|e| parse_err(e.line(), e.to_string()))?;
    let n = raw.cameras.len();
    if !(2..=MAX_CAMERAS).contains(&n) {
        return Err(parse_err(1, format!("camera count must be in 2..={MAX_CAMERAS}, got {n}")));
    }
    let cameras = raw
        .cameras
        .iter()
        .enumerate()
        .map(|(i, rows)| {
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            Camera::from_row_slice(&flat).map_err(|e| parse_err(1, format!("camera {}: {e}", i + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    let observations = match raw.observations {
        Some(obs) if obs.len() != n => {
            return Err(parse_err(1, format!("expected {n} observations, found {}", obs.len())));
        }
        Some(obs) => {
            let pts: Vec<ImagePoint> = obs.iter().map(|p| ImagePoint::new(p[0], p[1])).collect();
            Some(ObservationVector::from_points(&pts).map_err(|e| parse_err(1, e.to_string()))?)
        }
        None => None,
    };
    let truth = match raw.truth {
        Some(t) if t.iter().all(|v| v.is_finite()) => Some(WorldPoint::new(t[0], t[1], t[2])),
        Some(_) => return Err(parse_err(1, "ground truth must be finite")),
        None => None,
    };
    Ok(Scene {
        cameras,
        observations,
        truth,
    })
}

/// Renders a scene in the text format, with full round-trip precision.
pub fn write_scene(scene: &Scene) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", scene.cameras.len());
    for cam in &scene.cameras {
        let p = cam.matrix();
        for r in 0..3 {
            let _ = writeln!(out, "{:?} {:?} {:?} {:?}", p[(r, 0)], p[(r, 1)], p[(r, 2)], p[(r, 3)]);
        }
    }
    if let Some(obs) = &scene.observations {
        out.push_str("obs\n");
        for p in obs.points() {
            let _ = writeln!(out, "{:?} {:?}", p.0[0], p.0[1]);
        }
    }
    if let Some(t) = &scene.truth {
        let _ = writeln!(out, "truth\n{:?} {:?} {:?}", t.0[0], t.0[1], t.0[2]);
    }
    out
}

fn parse_real(tok: &str) -> Result<f64> {
    tok.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite() && *v >= 0.0)
        .ok_or_else(|| Error::InvalidInput(format!("'{tok}' is not a finite nonnegative real")))
}

/// Expands a noise grid: `LO:STEP:HI` (inclusive), a comma list, or one value.
pub fn parse_sigma_grid(spec: &str) -> Result<Vec<f64>> {
    let spec = spec.trim();
    let grid = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [lo, step, hi] = parts[..] else {
            return Err(Error::InvalidInput(format!("expected LO:STEP:HI, got '{spec}'")));
        };
        let (lo, step, hi) = (parse_real(lo)?, parse_real(step)?, parse_real(hi)?);
        if !(step > 0.0) {
            return Err(Error::InvalidInput("sigma step must be positive".into()));
        }
        if hi < lo {
            return Err(Error::InvalidInput("sigma grid upper bound is below lower bound".into()));
        }
        let span = (hi - lo) / step;
        if !(span < MAX_SIGMA_LEVELS as f64) {
            return Err(Error::InvalidInput("sigma grid is too large".into()));
        }
        let count = (span + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|i| {
                let v = lo + step * i as f64;
                // Trim accumulated binary noise, e.g. 3 × 0.05.
                let trimmed = (v * 1e12).round() / 1e12;
                if trimmed.is_finite() {
                    trimmed
                } else {
                    v
                }
            })
            .collect()
    } else {
        spec.split(',').map(parse_real).collect::<Result<Vec<_>>>()?
    };
    if grid.len() > MAX_SIGMA_LEVELS {
        return Err(Error::InvalidInput("sigma grid is too large".into()));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("sigma grid must be ascending".into()));
    }
    Ok(grid)
}
