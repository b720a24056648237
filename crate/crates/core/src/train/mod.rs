//! L1 training loop with Adam and a cosine-annealed learning rate.
//!
//! Determinism contract: a run is a pure function of (model config, train
//! config, dataset bytes). Every step derives its own ChaCha stream from
//! (seed, step), so interrupting at a checkpoint and resuming replays the
//! exact same batch sequence and arithmetic.

mod adam;
mod checkpoint;

pub use adam::{adam_step, OptimState};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::haze::{load_dataset, sample_patch, Dihedral};
use crate::model::{init_params, BoundModel, ModelConfig};
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Total steps T of the run (also the cosine-schedule horizon).
    pub steps: u64,
    /// Initial learning rate η0.
    pub lr0: f64,
    pub batch: usize,
    /// Square patch edge in pixels.
    pub patch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Extra checkpoint cadence; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    /// Dihedral augmentation of sampled patches.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            lr0: 1e-4,
            batch: 2,
            patch: 48,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            checkpoint_every: 0,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if !(self.lr0 > 0.0) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if self.batch < 1 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if self.patch < 1 {
            return Err(Error::Config("patch must be >= 1".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0,1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Cosine annealing: η_t = ½·(1 + cos(tπ/T))·η0. Exact at the endpoints:
/// η_0 = η0, η_{T/2} = η0/2 (even T), η_T = 0.
pub fn cosine_lr(t: u64, total: u64, eta0: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::Config("schedule length must be >= 1".into()));
    }
    if t > total {
        return Err(Error::Domain(format!("step {t} beyond schedule length {total}")));
    }
    Ok(0.5 * (1.0 + (t as f64 * std::f64::consts::PI / total as f64).cos()) * eta0)
}

/// Mean absolute difference over all elements. Shape mismatches error via
/// the elementwise subtraction.
pub fn l1_loss<E: crate::scalar::Scalar>(
    tape: &mut Tape<E>,
    pred: ValueId,
    gt: ValueId,
) -> Result<ValueId> {
    let d = tape.sub(pred, gt)?;
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

/// Output locations of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    /// CSV `step,lr,l1`, one row per step.
    pub loss_csv: PathBuf,
}

#[derive(Debug)]
pub struct TrainResult {
    pub checkpoint: Checkpoint,
    pub final_loss: f32,
}

/// Fresh training run over the dataset directory.
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    data_dir: &Path,
    outputs: &TrainOutputs,
) -> Result<TrainResult> {
    train_until(model_cfg, train_cfg, data_dir, outputs, train_cfg.steps)
}

/// Fresh run halted after `stop_at` steps (for interrupt/resume flows the
/// schedule still spans `train_cfg.steps`).
pub fn train_until(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    data_dir: &Path,
    outputs: &TrainOutputs,
    stop_at: u64,
) -> Result<TrainResult> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    let params = init_params::<f32>(model_cfg, train_cfg.seed)?;
    let optim = OptimState::new(&params);
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        model: model_cfg.clone(),
        train: train_cfg.clone(),
        step: 0,
        seed: train_cfg.seed,
        params,
        optim,
    };
    let csv = fs::File::create(&outputs.loss_csv)
        .map_err(|e| Error::io(&outputs.loss_csv, e))?;
    let mut csv = std::io::BufWriter::new(csv);
    csv.write_all(b"step,lr,l1\n").map_err(|e| Error::io(&outputs.loss_csv, e))?;
    run(ckpt, data_dir, outputs, stop_at, csv)
}

/// Continues a loaded checkpoint to the end of its schedule, appending to
/// the loss CSV.
pub fn resume(ckpt: Checkpoint, data_dir: &Path, outputs: &TrainOutputs) -> Result<TrainResult> {
    let stop_at = ckpt.train.steps;
    let csv = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&outputs.loss_csv)
        .map_err(|e| Error::io(&outputs.loss_csv, e))?;
    let csv = std::io::BufWriter::new(csv);
    run(ckpt, data_dir, outputs, stop_at, csv)
}

fn step_rng(seed: u64, step: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    // streams 0..count are taken by dataset generation; training steps get
    // their own namespace
    rng.set_stream(u64::MAX - step);
    rng
}

fn run(
    mut ckpt: Checkpoint,
    data_dir: &Path,
    outputs: &TrainOutputs,
    stop_at: u64,
    mut csv: std::io::BufWriter<fs::File>,
) -> Result<TrainResult> {
    let cfg = ckpt.train.clone();
    let model_cfg = ckpt.model.clone();
    let samples = load_dataset(data_dir)?;
    for s in &samples {
        let (_, h, w) = s.clean.chw()?;
        if cfg.patch > h.min(w) {
            return Err(Error::Config(format!(
                "patch {} exceeds sample {} ({h}x{w})",
                cfg.patch, s.name
            )));
        }
    }

    let stop_at = stop_at.min(cfg.steps);
    let mut final_loss = f32::NAN;
    for step in ckpt.step + 1..=stop_at {
        let lr = cosine_lr(step - 1, cfg.steps, cfg.lr0)?;
        let mut rng = step_rng(ckpt.seed, step);

        let mut hazy_patches = Vec::with_capacity(cfg.batch);
        let mut clean_patches = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let sample = &samples[rng.gen_range(0..samples.len())];
            let (hazy, (top, left)) = sample_patch(&sample.hazy, cfg.patch, &mut rng)?;
            let clean = crate::haze::crop(&sample.clean, top, left, cfg.patch)?;
            let transform =
                if cfg.augment { Dihedral::sample(&mut rng) } else { Dihedral::IDENTITY };
            hazy_patches.push(transform.apply(&hazy)?);
            clean_patches.push(transform.apply(&clean)?);
        }
        let hazy_batch = Tensor::stack_batch(&hazy_patches)?;
        let clean_batch = Tensor::stack_batch(&clean_patches)?;

        let mut tape = Tape::<f32>::new();
        let model = BoundModel::bind(&mut tape, &model_cfg, &ckpt.params)?;
        let x = tape.leaf(hazy_batch);
        let (y, _) = model.forward(&mut tape, x)?;
        let gt = tape.leaf(clean_batch);
        let loss_id = l1_loss(&mut tape, y, gt)?;
        let loss = tape.value(loss_id).data()[0];
        if !loss.is_finite() {
            return Err(Error::Abort(format!(
                "non-finite loss {loss} at step {step}; stopping"
            )));
        }
        let bw = tape.backward(loss_id)?;
        let grads = tape.param_gradients(&bw);
        adam_step(
            &mut ckpt.params,
            &grads,
            &mut ckpt.optim,
            lr,
            cfg.beta1,
            cfg.beta2,
            cfg.eps,
        )?;
        ckpt.step = step;
        final_loss = loss;

        writeln!(csv, "{step},{lr},{loss}").map_err(|e| Error::io(&outputs.loss_csv, e))?;
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            csv.flush().map_err(|e| Error::io(&outputs.loss_csv, e))?;
            ckpt.save(&outputs.checkpoint)?;
        }
    }
    csv.flush().map_err(|e| Error::io(&outputs.loss_csv, e))?;
    ckpt.save(&outputs.checkpoint)?;
    Ok(TrainResult { checkpoint: ckpt, final_loss })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_endpoints_exact() {
        let eta0 = 1e-4;
        assert_eq!(cosine_lr(0, 1000, eta0).unwrap(), eta0);
        assert_eq!(cosine_lr(500, 1000, eta0).unwrap(), eta0 / 2.0);
        assert_eq!(cosine_lr(1000, 1000, eta0).unwrap(), 0.0);
        assert!(cosine_lr(1001, 1000, eta0).is_err());
    }

    #[test]
    fn cosine_schedule_monotone_decreasing() {
        let mut last = f64::INFINITY;
        for t in 0..=100 {
            let lr = cosine_lr(t, 100, 1e-3).unwrap();
            assert!(lr < last);
            last = lr;
        }
    }

    #[test]
    fn l1_loss_values_and_gradient() {
        let mut tape = Tape::<f32>::new();
        let pred = tape.leaf(
            Tensor::from_vec(&[4], vec![0.5, 0.5, 0.5, 0.5]).unwrap().with_grad(),
        );
        let gt = tape.leaf(Tensor::from_vec(&[4], vec![0.4, 0.4, 0.6, 0.6]).unwrap());
        let loss = l1_loss(&mut tape, pred, gt).unwrap();
        assert!((tape.value(loss).data()[0] - 0.1).abs() < 1e-7);
        let bw = tape.backward(loss).unwrap();
        // gradient is sign(pred - gt)/N
        assert_eq!(bw.wrt(pred).unwrap().data(), &[0.25, 0.25, -0.25, -0.25]);

        // identical inputs give zero loss
        let mut tape = Tape::<f32>::new();
        let a = tape.leaf(Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap());
        let b = tape.leaf(Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap());
        let loss = l1_loss(&mut tape, a, b).unwrap();
        assert_eq!(tape.value(loss).data()[0], 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { steps: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr0: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch: 0, ..Default::default() }.validate().is_err());
    }
}
