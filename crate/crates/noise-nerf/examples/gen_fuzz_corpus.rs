//! Regenerates the checked-in fuzz corpus seeds under `fuzz/corpus/`.
//!
//! Run from anywhere in the workspace:
//! `cargo run -p noise-nerf --example gen_fuzz_corpus`

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use noise_nerf::formats::{write_noise, write_ppm, write_weights};
use noise_nerf::image::Image8;
use noise_nerf::nerf::{viewpoint_digest, RadianceFieldParams, RenderConfig, SampleGrid};
use noise_nerf::scene::{close_up_pose, make_poses, AnalyticScene};
use noise_nerf::stego::NoiseField;
use noise_nerf::tensor::Tensor;

fn main() {
    let corpus = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus");
    let write = |target: &str, name: &str, bytes: &[u8]| {
        let dir = corpus.join(target);
        std::fs::create_dir_all(&dir).expect("corpus dir");
        std::fs::write(dir.join(name), bytes).expect("seed write");
        println!("wrote {target}/{name} ({} bytes)", bytes.len());
    };

    // --- PPM ---
    let img = Image8::new(4, 3, (0..36).map(|i| (i * 7) as u8).collect()).unwrap();
    write("fuzz_ppm", "tiny.ppm", &write_ppm(&img));
    let mut commented = b"P6 # comment\n# line\n 4\t3\n255\n".to_vec();
    commented.extend_from_slice(img.data());
    write("fuzz_ppm", "comment.ppm", &commented);

    // --- Weights ---
    let params = RadianceFieldParams::init(2, 1, 8, 0).unwrap();
    write("fuzz_weights", "small.nnrf", &write_weights(&params).unwrap());

    // --- Noise ---
    let scene = AnalyticScene::tri_sphere();
    let pose = close_up_pose(&scene, 2).unwrap();
    let cfg = RenderConfig { near: 0.6, far: 4.4, n_samples: 3, coord_scale: 4.4 };
    let grid = SampleGrid::deterministic(4, cfg.near, cfg.far, cfg.n_samples).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let values = Tensor::rand_normal(&[4, 3, params.enc_pos_dim()], 0.0, 0.05, &mut rng).unwrap();
    let noise = NoiseField::new(viewpoint_digest(&pose, &cfg), grid.digest(), values).unwrap();
    write("fuzz_noise", "small.nnsz", &write_noise(&noise).unwrap());
    let zeros = NoiseField::new(
        *noise.viewpoint_id(),
        *noise.grid_hash(),
        Tensor::zeros(&[4, 3, params.enc_pos_dim()]).unwrap(),
    )
    .unwrap();
    write("fuzz_noise", "zero.nnsz", &write_noise(&zeros).unwrap());

    // --- Scene JSON ---
    for name in AnalyticScene::names() {
        let scene = AnalyticScene::named(name).unwrap();
        let json = serde_json::to_string_pretty(&scene).unwrap();
        write("fuzz_scene_json", &format!("{name}.json"), json.as_bytes());
    }

    // --- View JSON ---
    let ring = make_poses(1, 16, 2.5, 0).unwrap().remove(0);
    write("fuzz_view_json", "ring.json", serde_json::to_string_pretty(&ring).unwrap().as_bytes());
    write(
        "fuzz_view_json",
        "close_up.json",
        serde_json::to_string_pretty(&close_up_pose(&scene, 16).unwrap()).unwrap().as_bytes(),
    );

    // --- Run config JSON ---
    let run = r#"{
  "scene": "scene/scene.json",
  "dataset": {"n_views": 2, "resolution": 16, "radius": 2.5, "seed": 0},
  "train": {
    "iters": 6, "batch_rays": 8, "lr": 5e-4, "seed": 1, "jitter": true,
    "render": {"near": 0.6, "far": 4.4, "n_samples": 4, "coord_scale": 4.4}
  },
  "stego": {"iters": 3, "mu": 1, "batch_sizes": [8, 16], "lr": 0.02, "seed": 3},
  "out_dir": "out"
}
"#;
    write("fuzz_run_config", "run.json", run.as_bytes());
}
