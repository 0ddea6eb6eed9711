//! `e3d`: synthetic data, ground truth, training, evaluation, gradient checks and rendering.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use e3d_core::data::{load_manifest, synth_sequence, PreparedFrames, SynthConfig};
use e3d_core::density::{DensityMap, Provenance};
use e3d_core::gradsuite::{gradcheck_all, gradcheck_op};
use e3d_core::tca::{load_checkpoint, CheckpointHeader, NetConfig};
use e3d_core::tensor::{load_dmap, save_dmap};
use e3d_core::train::{evaluate, montage, save_image, train_to_dir, Precision, TrainConfig};
use e3d_core::{Error, Result, Scalar};

#[derive(Parser)]
#[command(name = "e3d", version, about = "Temporal channel-aware crowd counting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic moving-crowd dataset (frames + manifest.json).
    Synth {
        /// SynthConfig JSON; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render ground-truth density maps of a dataset as DMAP files.
    Gt {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Network output stride the targets are downscaled by.
        #[arg(long, default_value_t = 16)]
        factor: usize,
    },
    /// Train a network and write checkpoints plus the loss curve.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// NetConfig JSON (defaults if omitted).
        #[arg(long)]
        net: Option<PathBuf>,
        /// TrainConfig JSON (defaults if omitted).
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset and write a JSON metrics report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Also write each frame's ROI-masked prediction and target as DMAP files here.
        #[arg(long)]
        maps: Option<PathBuf>,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// Check a single operation.
        #[arg(long, conflicts_with = "all")]
        op: Option<String>,
        /// Check every operation (the default).
        #[arg(long)]
        all: bool,
    },
    /// Render density maps (DMAP) as a heatmap PNG; several inputs form a side-by-side montage.
    Render {
        #[arg(long = "in", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Plane of a multi-frame map to draw.
        #[arg(long, default_value_t = 0)]
        frame: usize,
        /// Pixels per map cell.
        #[arg(long, default_value_t = 16)]
        scale: u32,
    },
}

fn read_json<C: DeserializeOwned>(path: &Path) -> Result<C> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        what: "config",
        reason: format!("{}: {e}", path.display()),
    })
}

fn read_json_or_default<C: DeserializeOwned + Default>(path: Option<&Path>) -> Result<C> {
    path.map_or_else(|| Ok(C::default()), read_json)
}

fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// One line of JSON on stdout per completed command.
fn emit(value: serde_json::Value) {
    println!("{value}");
}

fn cmd_synth(config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg: SynthConfig = read_json_or_default(config)?;
    let seq = synth_sequence(&cfg)?;
    let manifest = seq.write(out)?;
    emit(serde_json::json!({
        "manifest": manifest,
        "frames": seq.frames.len(),
        "people": seq.points[0].len(),
    }));
    Ok(())
}

fn cmd_gt(manifest: &Path, out: &Path, factor: usize) -> Result<()> {
    let m = load_manifest(manifest)?;
    let data = PreparedFrames::from_manifest(&m, factor)?;
    create_dir(out)?;
    for (i, target) in data.targets.iter().enumerate() {
        save_dmap(out.join(format!("target_{i:04}.dmap")), &target.to_tensor::<f64>())?;
    }
    let counts = serde_json::json!({
        "input_dims": [data.h, data.w],
        "target_dims": [data.h / factor, data.w / factor],
        "clamped_points": m.clamped_points,
        "counts": data.truths,
    });
    write_json(&out.join("counts.json"), &counts)?;
    emit(serde_json::json!({ "frames": data.len(), "out": out }));
    Ok(())
}

fn cmd_train(manifest: &Path, net: Option<&Path>, train: Option<&Path>, out: &Path) -> Result<()> {
    let net_cfg: NetConfig = read_json_or_default(net)?;
    let train_cfg: TrainConfig = read_json_or_default(train)?;
    net_cfg.validate()?;
    train_cfg.validate()?;
    let m = load_manifest(manifest)?;
    let data = PreparedFrames::from_manifest(&m, net_cfg.spatial_factor())?;
    let artifacts = match train_cfg.precision {
        Precision::F32 => train_to_dir::<f32>(&data, &net_cfg, &train_cfg, out)?,
        Precision::F64 => train_to_dir::<f64>(&data, &net_cfg, &train_cfg, out)?,
    };
    emit(serde_json::json!({
        "checkpoint": artifacts.final_checkpoint,
        "losses": artifacts.loss_curve,
        "initial_loss": artifacts.losses.first(),
        "final_loss": artifacts.losses.last(),
    }));
    Ok(())
}

fn read_header(path: &Path) -> Result<CheckpointHeader> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut line = String::new();
    BufReader::new(file).read_line(&mut line).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&line).map_err(|e| Error::Format {
        what: "checkpoint",
        reason: format!("{}: {e}", path.display()),
    })
}

fn eval_with<T: Scalar>(ckpt: &Path, manifest: &Path, report: &Path, maps: Option<&Path>) -> Result<()> {
    let (_, net) = load_checkpoint::<T>(ckpt)?;
    let m = load_manifest(manifest)?;
    let data = PreparedFrames::from_manifest(&m, net.config.spatial_factor())?;
    let eval = evaluate(&net, &data)?;
    write_json(report, &eval.report)?;
    if let Some(dir) = maps {
        create_dir(dir)?;
        for (i, (p, t)) in eval.predictions.iter().zip(&eval.targets).enumerate() {
            save_dmap(dir.join(format!("pred_{i:04}.dmap")), &p.to_tensor::<f64>())?;
            save_dmap(dir.join(format!("target_{i:04}.dmap")), &t.to_tensor::<f64>())?;
        }
    }
    emit(serde_json::json!({
        "report": report,
        "frames": eval.report.frames,
        "mae": eval.report.mae,
        "mse": eval.report.mse,
        "game": eval.report.game,
    }));
    Ok(())
}

fn cmd_eval(ckpt: &Path, manifest: &Path, report: &Path, maps: Option<&Path>) -> Result<()> {
    match read_header(ckpt)?.dtype.as_str() {
        "f64" => eval_with::<f64>(ckpt, manifest, report, maps),
        _ => eval_with::<f32>(ckpt, manifest, report, maps),
    }
}

fn cmd_gradcheck(op: Option<&str>) -> Result<bool> {
    let reports = match op {
        Some(op) => vec![gradcheck_op(op)?],
        None => gradcheck_all()?,
    };
    for r in &reports {
        println!("{r}");
    }
    Ok(reports.iter().all(|r| r.passed()))
}

fn cmd_render(inputs: &[PathBuf], out: &Path, frame: usize, scale: u32) -> Result<()> {
    let maps = inputs
        .iter()
        .map(|path| {
            let t = load_dmap::<f64>(path)?;
            let s = t.shape();
            let planes = s.n() * s.c() * s.d();
            if frame >= planes {
                return Err(Error::Format {
                    what: "render input",
                    reason: format!("{} has {planes} planes, frame {frame} requested", path.display()),
                });
            }
            let grid = t.data()[frame * s.plane()..(frame + 1) * s.plane()].to_vec();
            Ok(DensityMap { h: s.h(), w: s.w(), grid, provenance: Provenance::Fixed })
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&DensityMap> = maps.iter().collect();
    save_image(&montage(&refs, scale)?, out)?;
    emit(serde_json::json!({ "image": out, "panels": maps.len() }));
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synth { config, out } => cmd_synth(config.as_deref(), &out)?,
        Command::Gt { manifest, out, factor } => cmd_gt(&manifest, &out, factor)?,
        Command::Train { manifest, net, train, out } => cmd_train(&manifest, net.as_deref(), train.as_deref(), &out)?,
        Command::Eval { ckpt, manifest, report, maps } => cmd_eval(&ckpt, &manifest, &report, maps.as_deref())?,
        Command::Gradcheck { op, all: _ } => return cmd_gradcheck(op.as_deref()),
        Command::Render { inputs, out, frame, scale } => cmd_render(&inputs, &out, frame, scale)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{}", serde_json::json!({ "error": "gradcheck_failed", "message": "one or more gradient checks failed" }));
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
