//! Scene JSON parsing must never panic, and every accepted scene must pass
//! validation and survive a serialize/parse round trip.

#![no_main]

use libfuzzer_sys::fuzz_target;
use noise_nerf::formats::parse_scene;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(scene) = parse_scene(text) {
        scene.validate().expect("parse_scene only returns validated scenes");
        let json = serde_json::to_string(&scene).expect("scenes serialize");
        assert_eq!(parse_scene(&json).expect("round trip parses"), scene);
    }
});
