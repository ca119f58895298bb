#![no_main]

use libfuzzer_sys::fuzz_target;
use sdp_triangulate::scene::parse_scene;
use sdp_triangulate::{triangulate, CertifyConfig, Status};

// Arbitrary parsed scenes must produce a result or an error, never a panic,
// and an optimal result must carry a closed gap.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(scene) = parse_scene(text) else { return };
    let Some(obs) = scene.observations else { return };
    if scene.cameras.len() > 6 {
        return;
    }
    if let Ok(r) = triangulate(&scene.cameras, &obs, &CertifyConfig::default()) {
        if r.status == Status::Optimal {
            assert!(r.objective - r.dual_bound <= 1e-6 * (1.0 + r.objective.abs()));
        }
    }
});
