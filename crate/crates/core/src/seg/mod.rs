//! Patch-transformer segmentation over synthetic occluded shapes, with an
//! optional static-memory retrieval branch fused into every block.

pub mod checkpoint;
pub mod data;
pub mod metrics;
pub mod model;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use data::{generate_dataset, SyntheticSample, IMAGE_SIZE};
pub use metrics::{dice, Metrics};
pub use model::{forward_seg, predict_mask, seg_loss, seg_loss_and_grads, SegParams};
pub use train::{ablate, evaluate, train, EpochRow, RunRecord, ABLATE_CSV_HEADER, RUN_CSV_HEADER};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub classes: usize,
    pub memory_slots: usize,
    pub use_memory: bool,
}

impl Default for SegConfig {
    fn default() -> Self {
        SegConfig {
            image_size: 32,
            patch_size: 4,
            embed_dim: 64,
            blocks: 4,
            heads: 4,
            classes: 4,
            memory_slots: 8,
            use_memory: true,
        }
    }
}

impl SegConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0
            || self.patch_size == 0
            || self.embed_dim == 0
            || self.blocks == 0
            || self.heads == 0
            || self.memory_slots == 0
        {
            return Err(Error::InvalidParameter(
                "all architecture dimensions must be at least 1".to_string(),
            ));
        }
        if self.classes < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::InvalidParameter(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::InvalidParameter(format!(
                "embed_dim {} is not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }

    /// Tokens per image: one per non-overlapping patch.
    pub fn tokens(&self) -> usize {
        let side = self.image_size / self.patch_size;
        side * side
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_lr: f64,
    pub min_lr: f64,
    pub batch: usize,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            warmup_lr: 1e-6,
            min_lr: 1e-5,
            batch: 32,
            warmup_epochs: 10,
            epochs: 60,
            patience: 10,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lrs = [self.lr, self.warmup_lr, self.min_lr];
        if lrs.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidParameter(
                "learning rates must be positive and finite".to_string(),
            ));
        }
        if !(self.warmup_lr <= self.min_lr && self.min_lr <= self.lr) {
            return Err(Error::InvalidParameter(format!(
                "need warmup_lr <= min_lr <= lr, got {} / {} / {}",
                self.warmup_lr, self.min_lr, self.lr
            )));
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::InvalidParameter(
                "epochs and batch must be at least 1".to_string(),
            ));
        }
        if self.patience > self.epochs {
            return Err(Error::InvalidParameter(format!(
                "patience {} exceeds epochs {}",
                self.patience, self.epochs
            )));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::InvalidParameter(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        for b in [self.beta1, self.beta2] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidParameter(format!(
                    "Adam betas must lie in [0, 1), got {b}"
                )));
            }
        }
        Ok(())
    }
}

/// Linear warmup from warmup_lr to lr over warmup_epochs, then cosine decay
/// from lr down to min_lr across the remaining epochs.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    cfg.validate()?;
    if epoch >= cfg.epochs {
        return Err(Error::InvalidParameter(format!(
            "epoch {} out of range for {} epochs",
            epoch, cfg.epochs
        )));
    }
    if epoch < cfg.warmup_epochs {
        let t = epoch as f64 / cfg.warmup_epochs as f64;
        return Ok(cfg.warmup_lr + (cfg.lr - cfg.warmup_lr) * t);
    }
    let span = cfg.epochs - 1 - cfg.warmup_epochs;
    if span == 0 {
        return Ok(cfg.lr);
    }
    let t = (epoch - cfg.warmup_epochs) as f64 / span as f64;
    Ok(cfg.min_lr + (cfg.lr - cfg.min_lr) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}
