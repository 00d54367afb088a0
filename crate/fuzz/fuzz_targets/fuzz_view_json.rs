//! Camera pose JSON parsing must never panic; accepted poses are validated
//! (unit axes, sane field of view) and round-trip through serialization.

#![no_main]

use libfuzzer_sys::fuzz_target;
use noise_nerf::formats::parse_pose;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(pose) = parse_pose(text) {
        pose.validate().expect("parse_pose only returns validated poses");
        let json = serde_json::to_string(&pose).expect("poses serialize");
        assert_eq!(parse_pose(&json).expect("round trip parses"), pose);
    }
});
