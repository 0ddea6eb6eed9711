use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::loss::masked_mse_loss;
use super::optim::Optimizer;
use crate::data::{window_specs, PreparedFrames, WindowMode, WindowSpec};
use crate::error::{Error, Result};
use crate::nn::Parameters;
use crate::scalar::Scalar;
use crate::tca::{build_network, network_backward, network_forward, save_checkpoint, NetConfig, Network};

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainRun<T> {
    pub net: Network<T>,
    /// Loss of each step, measured before that step's update.
    pub losses: Vec<f64>,
}

/// Checks that prepared data can be fed to a network built from `cfg`.
pub fn check_compatible(cfg: &NetConfig, data: &PreparedFrames) -> Result<()> {
    if cfg.input_channels != data.channels {
        return Err(Error::InvalidConfig(format!(
            "network expects {} input channels, data has {}",
            cfg.input_channels, data.channels
        )));
    }
    if cfg.spatial_factor() != data.factor {
        return Err(Error::InvalidConfig(format!(
            "network output stride is {}, data was prepared for {}",
            cfg.spatial_factor(),
            data.factor
        )));
    }
    if cfg.clip_length > data.len() {
        return Err(Error::InvalidConfig(format!(
            "clip length {} exceeds the {}-frame sequence",
            cfg.clip_length,
            data.len()
        )));
    }
    Ok(())
}

/// Loss and parameter gradients of one clip.
pub fn clip_gradients<T: Scalar>(net: &Network<T>, data: &PreparedFrames, spec: &WindowSpec) -> Result<(f64, Network<T>)> {
    let clip = data.clip::<T>(spec)?;
    let fwd = network_forward(&clip.input, net)?;
    let (loss, g) = masked_mse_loss(&fwd.value, &clip.targets, &clip.roi_small)?;
    let grads = network_backward(&g, &fwd.saved, net)?;
    Ok((loss.to_f64_lossy(), grads))
}

fn accumulate<T: Scalar>(acc: &mut Network<T>, g: &Network<T>) {
    for (a, (_, b)) in acc.slices_mut().into_iter().zip(g.slices()) {
        for (x, &y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

fn scale<T: Scalar>(g: &mut Network<T>, k: T) {
    for s in g.slices_mut() {
        for v in s {
            *v *= k;
        }
    }
}

/// Trains a freshly initialised network on `data`.
///
/// Everything is determined by `cfg.seed`: the initial weights and, through a separate
/// stream of the same generator, the order clips are visited in (reshuffled every pass).
/// `on_step(step, loss, net)` runs after each update with the 1-based step number.
pub fn train<T: Scalar>(
    data: &PreparedFrames,
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64, &Network<T>) -> Result<()>,
) -> Result<TrainRun<T>> {
    cfg.validate()?;
    net_cfg.validate()?;
    check_compatible(net_cfg, data)?;
    let mut net = build_network::<T>(net_cfg, cfg.seed)?;
    let specs = window_specs(data.len(), net_cfg.clip_length, WindowMode::Train { stride: cfg.window_stride })?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(1);
    let mut order: Vec<usize> = Vec::new();
    let mut next = 0;

    let mut opt = Optimizer::<T>::new(cfg.optimizer)?;
    let mut losses = Vec::with_capacity(cfg.steps);
    let inv_batch = T::from_f64_lossy(1.0 / cfg.batch_size as f64);
    for step in 1..=cfg.steps {
        let mut grads = net.zeros_like();
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            if next == order.len() {
                order = (0..specs.len()).collect();
                order.shuffle(&mut order_rng);
                next = 0;
            }
            let (l, g) = clip_gradients(&net, data, &specs[order[next]])?;
            next += 1;
            loss += l;
            accumulate(&mut grads, &g);
        }
        loss /= cfg.batch_size as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        if cfg.batch_size > 1 {
            scale(&mut grads, inv_batch);
        }
        opt.step(&mut net, &grads)?;
        losses.push(loss);
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step == 1) {
            log::info!("step {step}/{}: loss {loss:.6e}", cfg.steps);
        }
        on_step(step, loss, &net)?;
    }
    Ok(TrainRun { net, losses })
}

/// Files written by [`train_to_dir`].
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub final_checkpoint: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub loss_curve: PathBuf,
    pub losses: Vec<f64>,
}

/// Trains and writes `step_NNNNNN.ckpt` every `checkpoint_every` steps, `final.ckpt`, and
/// `losses.json` (the per-step loss curve) into `out`.
pub fn train_to_dir<T: Scalar>(
    data: &PreparedFrames,
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
    out: impl AsRef<Path>,
) -> Result<TrainArtifacts> {
    let out = out.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut checkpoints = Vec::new();
    let run = train::<T>(data, net_cfg, cfg, |step, _, net| {
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.steps {
            let path = out.join(format!("step_{step:06}.ckpt"));
            save_checkpoint(&path, net, cfg.seed, step as u64)?;
            checkpoints.push(path);
        }
        Ok(())
    })?;
    let final_checkpoint = out.join("final.ckpt");
    save_checkpoint(&final_checkpoint, &run.net, cfg.seed, cfg.steps as u64)?;
    checkpoints.push(final_checkpoint.clone());
    let loss_curve = out.join("losses.json");
    let json = serde_json::to_string_pretty(&run.losses)?;
    fs::write(&loss_curve, json + "\n").map_err(|e| Error::io(&loss_curve, e))?;
    Ok(TrainArtifacts {
        final_checkpoint,
        checkpoints,
        loss_curve,
        losses: run.losses,
    })
}
