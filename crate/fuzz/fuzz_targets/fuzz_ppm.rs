//! Decoder must never panic, and every accepted image must round-trip
//! bit-exactly through the canonical writer.

#![no_main]

use libfuzzer_sys::fuzz_target;
use noise_nerf::formats::{read_ppm, write_ppm};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = read_ppm(data) {
        let canon = write_ppm(&img);
        let back = read_ppm(&canon).expect("canonical form must parse");
        assert_eq!(back, img);
    }
});
