//! Replays the checked-in fuzz seeds through the parser entry points so they
//! stay valid inputs on stable toolchains.

use std::fs;
use std::path::PathBuf;

use sdp_triangulate::scene::{parse_json_scene, parse_observations, parse_scene, parse_sigma_grid, write_scene};
use sdp_triangulate::{triangulate, CertifyConfig, Status};

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut paths: Vec<_> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    assert!(!paths.is_empty(), "no seeds in {}", dir.display());
    paths.iter().map(|p| fs::read(p).unwrap()).collect()
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

#[test]
fn scene_seeds_round_trip() {
    for seed in seeds("parse_scene") {
        let scene = parse_scene(text(&seed)).unwrap();
        assert_eq!(parse_scene(&write_scene(&scene)).unwrap(), scene);
    }
}

#[test]
fn json_scene_seeds_parse() {
    for seed in seeds("parse_json_scene") {
        let scene = parse_json_scene(text(&seed)).unwrap();
        assert_eq!(parse_scene(&write_scene(&scene)).unwrap(), scene);
    }
}

#[test]
fn observation_seeds_parse() {
    for seed in seeds("parse_observations") {
        let (&n, rest) = seed.split_first().unwrap();
        let obs = parse_observations(text(rest), usize::from(n % 8)).unwrap();
        assert_eq!(obs.n_views(), usize::from(n % 8));
    }
}

#[test]
fn sigma_grid_seeds_parse() {
    for seed in seeds("parse_sigma_grid") {
        let grid = parse_sigma_grid(text(&seed)).unwrap();
        assert!(grid.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn triangulation_seeds_run() {
    for seed in seeds("scene_triangulate") {
        let scene = parse_scene(text(&seed)).unwrap();
        let obs = scene.observations.unwrap();
        let r = triangulate(&scene.cameras, &obs, &CertifyConfig::default()).unwrap();
        if r.status == Status::Optimal {
            assert!(r.objective - r.dual_bound <= 1e-6 * (1.0 + r.objective.abs()));
        }
    }
}

#[test]
fn extreme_scenes_do_not_panic() {
    let base = fs::read_to_string(
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus/scene_triangulate/with_truth.txt"),
    )
    .unwrap();
    for value in ["1e300", "-1e300", "1e-300", "1e154"] {
        let Ok(scene) = parse_scene(&base.replacen("0 0 1 5", &format!("0 0 1 {value}"), 1)) else {
            continue;
        };
        let obs = scene.observations.unwrap();
        let _ = triangulate(&scene.cameras, &obs, &CertifyConfig::default());
    }
}
