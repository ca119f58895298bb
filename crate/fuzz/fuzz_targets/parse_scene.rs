#![no_main]

use libfuzzer_sys::fuzz_target;
use sdp_triangulate::scene::{parse_scene, write_scene};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(scene) = parse_scene(text) {
        // Whatever parses must survive a write/read round trip unchanged.
        let again = parse_scene(&write_scene(&scene)).expect("written scene reparses");
        assert_eq!(scene, again);
    }
});
