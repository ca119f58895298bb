#![no_main]

use libfuzzer_sys::fuzz_target;
use sdp_triangulate::scene::parse_observations;

fuzz_target!(|data: &[u8]| {
    let Some((&n, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let n = usize::from(n % 8);
    if let Ok(obs) = parse_observations(text, n) {
        assert_eq!(obs.n_views(), n);
        assert!(obs.as_vector().iter().all(|v| v.is_finite()));
    }
});
