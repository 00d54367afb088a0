//! Weight checkpoint decoder must never panic, and accepted checkpoints must
//! round-trip bit-exactly.

#![no_main]

use libfuzzer_sys::fuzz_target;
use noise_nerf::formats::{read_weights, write_weights};

fuzz_target!(|data: &[u8]| {
    if let Ok(params) = read_weights(data) {
        let canon = write_weights(&params).expect("accepted params must serialize");
        let back = read_weights(&canon).expect("canonical form must parse");
        for (a, b) in params.tensors().iter().zip(back.tensors()) {
            assert_eq!(a.shape(), b.shape());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
});
