#![no_main]

use libfuzzer_sys::fuzz_target;
use sdp_triangulate::scene::{parse_sigma_grid, MAX_SIGMA_LEVELS};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(grid) = parse_sigma_grid(text) {
        assert!(!grid.is_empty() && grid.len() <= MAX_SIGMA_LEVELS);
        assert!(grid.iter().all(|s| s.is_finite() && *s >= 0.0));
        assert!(grid.windows(2).all(|w| w[0] <= w[1]));
    }
});
