//! Noise checkpoint decoder must never panic, and accepted checkpoints must
//! round-trip bit-exactly, digests included.

#![no_main]

use libfuzzer_sys::fuzz_target;
use noise_nerf::formats::{read_noise, write_noise};

fuzz_target!(|data: &[u8]| {
    if let Ok(noise) = read_noise(data) {
        let canon = write_noise(&noise).expect("accepted noise must serialize");
        let back = read_noise(&canon).expect("canonical form must parse");
        assert_eq!(back.viewpoint_id(), noise.viewpoint_id());
        assert_eq!(back.grid_hash(), noise.grid_hash());
        assert_eq!(back.values().shape(), noise.values().shape());
        assert!(back
            .values()
            .data()
            .iter()
            .zip(noise.values().data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
});
