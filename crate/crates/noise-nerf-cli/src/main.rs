//! Command-line front end: scene/dataset generation, training, embedding,
//! extraction, evaluation, and the ablation table.
//!
//! Exit codes: 0 ok, 1 runtime/IO failure, 2 configuration error, 3 file
//! format error, 4 viewpoint/grid binding mismatch. `NOISENERF_THREADS` caps
//! render parallelism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use noise_nerf::formats::{
    load_noise, load_ppm, load_weights, parse_pose, save_noise, save_ppm, save_weights, write_ppm,
    RunConfig,
};
use noise_nerf::image::{Image, Image8};
use noise_nerf::metrics::{psnr, ssim};
use noise_nerf::nerf::{render_view, train_nerf_range, CameraPose, RadianceFieldParams};
use noise_nerf::scene::{close_up_pose, make_dataset, make_secret, AnalyticScene, SecretKind};
use noise_nerf::stego::{
    ablation_csv, embed_with_variant, extract, EmbedReport, EmbedVariant, ABLATION_VARIANTS,
};
use noise_nerf::{Error, Result};

/// Network architecture of every checkpoint this binary trains.
const L_POS: usize = 6;
const L_DIR: usize = 2;
const HIDDEN: usize = 64;

#[derive(Parser)]
#[command(
    name = "noise-nerf",
    version,
    about = "Tiny radiance-field workbench: train on procedural scenes, hide images in trainable input noise, extract them losslessly."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a built-in scene, its camera ring, and ground-truth views.
    GenScene {
        /// Scene name (see error message for the catalog).
        #[arg(long)]
        name: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        views: usize,
        #[arg(long, default_value_t = 64)]
        resolution: u32,
        #[arg(long, default_value_t = 2.5)]
        radius: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a procedural secret image.
    GenSecret {
        #[arg(long, value_enum)]
        kind: SecretKindArg,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output image (.ppm, or .png for viewing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a field on the configured scene; resumes when artifacts exist.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render the clean (noise-free) view of a trained field.
    Render {
        #[arg(long)]
        weights: PathBuf,
        /// Camera pose JSON.
        #[arg(long)]
        view: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimize noise so the view renders a secret image.
    Embed {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        view: PathBuf,
        /// Secret image (PPM).
        #[arg(long)]
        secret: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Render a view with its bound noise, revealing the hidden image.
    Extract {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        view: PathBuf,
        /// Noise checkpoint (NNSZ).
        #[arg(long)]
        noise: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two images; prints {"psnr": ..., "ssim": ...} JSON.
    Eval {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Embed under {full, no-adaptive, no-perturb, neither} and tabulate.
    Ablate {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        view: PathBuf,
        #[arg(long)]
        secret: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SecretKindArg {
    Checker,
    Gradient,
    TextGlyph,
    RandomSmooth,
}

impl From<SecretKindArg> for SecretKind {
    fn from(v: SecretKindArg) -> SecretKind {
        match v {
            SecretKindArg::Checker => SecretKind::Checker,
            SecretKindArg::Gradient => SecretKind::Gradient,
            SecretKindArg::TextGlyph => SecretKind::TextGlyph,
            SecretKindArg::RandomSmooth => SecretKind::RandomSmooth,
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::Format(_) => 3,
                Error::ViewpointMismatch(_) => 4,
                _ => 1,
            })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenScene { name, out, views, resolution, radius, seed } => {
            cmd_gen_scene(&name, &out, views, resolution, radius, seed)
        }
        Cmd::GenSecret { kind, width, height, seed, out } => {
            let secret = make_secret(kind.into(), width, height, seed)?;
            write_image(&out, &secret.image.to_8bit())?;
            println!("wrote {:?} secret to {}", secret.kind, out.display());
            Ok(())
        }
        Cmd::Train { config } => cmd_train(&config),
        Cmd::Render { weights, view, config, out } => {
            let run = RunConfig::load(&config)?;
            let params = load_weights(&weights)?;
            let pose = load_pose(&view)?;
            let img = render_view(&params, &pose, &run.train.render, None)?;
            write_image(&out, &img.to_8bit())?;
            println!("rendered {}x{} view to {}", pose.width, pose.height, out.display());
            Ok(())
        }
        Cmd::Embed { weights, view, secret, config } => cmd_embed(&weights, &view, &secret, &config),
        Cmd::Extract { weights, view, noise, config, out } => {
            let run = RunConfig::load(&config)?;
            let params = load_weights(&weights)?;
            let pose = load_pose(&view)?;
            let noise = load_noise(&noise)?;
            let img = extract(&params, &pose, &run.train.render, &noise)?;
            write_image(&out, &img.to_8bit())?;
            println!("extracted hidden image to {}", out.display());
            Ok(())
        }
        Cmd::Eval { a, b } => cmd_eval(&a, &b),
        Cmd::Ablate { weights, view, secret, config } => {
            cmd_ablate(&weights, &view, &secret, &config)
        }
    }
}

fn cmd_gen_scene(
    name: &str,
    out: &Path,
    views: usize,
    resolution: u32,
    radius: f32,
    seed: u64,
) -> Result<()> {
    let scene = AnalyticScene::named(name).ok_or_else(|| {
        Error::config(format!(
            "unknown scene {name:?}; known scenes: {}",
            AnalyticScene::names().join(", ")
        ))
    })?;
    fs::create_dir_all(out)?;
    fs::write(out.join("scene.json"), pretty_json(&scene)?)?;
    let dataset = make_dataset(&scene, views, resolution, radius, seed)?;
    for (i, (pose, img)) in dataset.iter().enumerate() {
        fs::write(out.join(format!("view_{i:03}.json")), pretty_json(pose)?)?;
        save_ppm(&out.join(format!("view_{i:03}.ppm")), &img.to_8bit())?;
    }
    // A ready-made embedding viewpoint: a close-up where every ray is live.
    fs::write(out.join("stego_view.json"), pretty_json(&close_up_pose(&scene, resolution)?)?)?;
    println!("wrote scene '{name}' and {views} views to {}", out.display());
    Ok(())
}

fn cmd_train(config: &Path) -> Result<()> {
    let run = RunConfig::load(config)?;
    let scene = noise_nerf::formats::load_scene(&run.scene)?;
    let dataset = make_dataset(
        &scene,
        run.dataset.n_views,
        run.dataset.resolution,
        run.dataset.radius,
        run.dataset.seed,
    )?;
    fs::create_dir_all(&run.out_dir)?;
    let weights_path = run.out_dir.join("weights.nnrf");
    let csv_path = run.out_dir.join("loss.csv");

    // Resume from the recorded iteration count when both artifacts exist.
    let (mut params, start, mut csv) = if weights_path.exists() && csv_path.exists() {
        let params = load_weights(&weights_path)?;
        let csv = fs::read_to_string(&csv_path)?;
        let rows = csv.lines().skip(1).filter(|l| !l.trim().is_empty()).count();
        if rows > run.train.iters {
            return Err(Error::config(format!(
                "existing loss log has {rows} rows but the config asks for {} iterations",
                run.train.iters
            )));
        }
        (params, rows, csv)
    } else {
        (
            RadianceFieldParams::init(L_POS, L_DIR, HIDDEN, run.train.seed)?,
            0,
            String::from("iteration,loss\n"),
        )
    };

    let history = train_nerf_range(&mut params, &dataset, &run.train, start)?;
    for (offset, loss) in history.iter().enumerate() {
        csv.push_str(&format!("{},{loss}\n", start + offset));
    }
    fs::write(&csv_path, csv)?;
    save_weights(&weights_path, &params)?;
    match history.last() {
        Some(loss) => println!(
            "trained iterations {start}..{}; final minibatch loss {loss}",
            run.train.iters
        ),
        None => println!("nothing to do: {} iterations already trained", run.train.iters),
    }
    Ok(())
}

fn cmd_embed(weights: &Path, view: &Path, secret: &Path, config: &Path) -> Result<()> {
    let run = RunConfig::load(config)?;
    let params = load_weights(weights)?;
    let pose = load_pose(view)?;
    let secret_img = Image::from_8bit(&load_ppm(secret)?);
    fs::create_dir_all(&run.out_dir)?;

    let (noise, report) = embed_with_variant(
        &params,
        &pose,
        &run.train.render,
        &secret_img,
        &run.stego,
        EmbedVariant::default(),
    )?;
    save_noise(&run.out_dir.join("noise.nnsz"), &noise)?;
    fs::write(run.out_dir.join("embed_report.csv"), report_csv(&report))?;
    fs::write(run.out_dir.join("embed_summary.json"), pretty_json(&report_summary(&report))?)?;
    // The untouched carrier render, for side-by-side comparison.
    let clean = render_view(&params, &pose, &run.train.render, None)?;
    save_ppm(&run.out_dir.join("clean.ppm"), &clean.to_8bit())?;
    println!(
        "embedded {} iterations; final psnr {} ssim {}",
        run.stego.iters,
        report.final_psnr,
        report.final_ssim.map_or_else(|| "n/a".into(), |v| v.to_string()),
    );
    Ok(())
}

fn cmd_eval(a: &Path, b: &Path) -> Result<()> {
    let ia = Image::from_8bit(&load_ppm(a)?);
    let ib = Image::from_8bit(&load_ppm(b)?);
    let p = psnr(&ia, &ib)?;
    let s = ssim(&ia, &ib)?;
    let p_json = if p.is_infinite() {
        serde_json::Value::from("inf")
    } else {
        serde_json::Value::from(f64::from(p))
    };
    println!("{}", serde_json::json!({ "psnr": p_json, "ssim": f64::from(s) }));
    Ok(())
}

fn cmd_ablate(weights: &Path, view: &Path, secret: &Path, config: &Path) -> Result<()> {
    let run = RunConfig::load(config)?;
    let params = load_weights(weights)?;
    let pose = load_pose(view)?;
    let secret_img = Image::from_8bit(&load_ppm(secret)?);
    fs::create_dir_all(&run.out_dir)?;

    let mut rows = Vec::new();
    for (label, variant) in ABLATION_VARIANTS {
        let (_, report) =
            embed_with_variant(&params, &pose, &run.train.render, &secret_img, &run.stego, variant)?;
        println!("{label}: final rgb loss {}", report.milestones.last().map_or(f32::NAN, |m| m.full_rgb_loss));
        rows.push((label, report));
    }

    let csv = ablation_csv(&rows)?;
    let path = run.out_dir.join("ablate.csv");
    fs::write(&path, csv)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn report_csv(report: &EmbedReport) -> String {
    let mut csv = String::from("iteration,total_loss,rgb_loss,perturb_loss,batch_size,tracked_ssim\n");
    for r in &report.iterations {
        let tracked = r.tracked_ssim.map_or_else(String::new, |v| v.to_string());
        csv.push_str(&format!(
            "{},{},{},{},{},{tracked}\n",
            r.iteration, r.total_loss, r.rgb_loss, r.perturb_loss, r.batch_size
        ));
    }
    csv
}

fn report_summary(report: &EmbedReport) -> serde_json::Value {
    serde_json::json!({
        "milestones": report.milestones,
        "final_psnr": report.final_psnr,
        "final_ssim": report.final_ssim,
    })
}

fn load_pose(path: &Path) -> Result<CameraPose> {
    parse_pose(&fs::read_to_string(path)?)
}

fn pretty_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(format!("serialization failed: {e}")))?;
    text.push('\n');
    Ok(text)
}

/// Writes PPM by default; a `.png` extension selects PNG for viewing.
fn write_image(path: &Path, img: &Image8) -> Result<()> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        let (w, h) = (img.width() as u32, img.height() as u32);
        let buf = image::RgbImage::from_raw(w, h, img.data().to_vec())
            .ok_or_else(|| Error::format("image buffer does not match its dimensions"))?;
        buf.save(path).map_err(|e| Error::format(format!("png write failed: {e}")))?;
        Ok(())
    } else {
        Ok(fs::write(path, write_ppm(img))?)
    }
}
