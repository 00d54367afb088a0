//! Run-config JSON parsing must never panic; accepted configs satisfy their
//! numeric invariants and round-trip through serialization.

#![no_main]

use libfuzzer_sys::fuzz_target;
use noise_nerf::formats::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(text) {
        cfg.validate().expect("parse only returns validated configs");
        let json = serde_json::to_string(&cfg).expect("configs serialize");
        assert_eq!(RunConfig::parse(&json).expect("round trip parses"), cfg);
    }
});
