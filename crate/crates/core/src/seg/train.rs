//! Adam training with warmup-cosine schedule, early stopping on validation
//! dice, and the memory on/off ablation sweep.

use super::data::{generate_dataset, SyntheticSample};
use super::metrics::{dice, Metrics};
use super::model::{predict_mask, seg_loss_and_grads, SegParams};
use super::{lr_at, SegConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::numerics::rng::stream;
use rand::seq::SliceRandom;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_mean_dice: f64,
    pub val_dice: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunRecord {
    pub rows: Vec<EpochRow>,
}

pub const RUN_CSV_HEADER: &str =
    "epoch,lr,train_loss,val_mean_dice,val_dice_c1,val_dice_c2,val_dice_c3";

impl RunRecord {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(RUN_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{},{},{}", r.epoch, r.lr, r.train_loss, r.val_mean_dice);
            for d in &r.val_dice {
                let _ = write!(out, ",{d}");
            }
            out.push('\n');
        }
        out
    }

    pub fn best_row(&self) -> Option<&EpochRow> {
        self.rows.iter().max_by(|a, b| {
            a.val_mean_dice
                .partial_cmp(&b.val_mean_dice)
                .expect("dice is finite")
        })
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(params: &SegParams, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .entries()
            .iter()
            .map(|(_, t)| vec![0.0; t.numel()])
            .collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: 1e-8,
        }
    }

    fn step(&mut self, params: &mut SegParams, grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (idx, grad) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            let data = &mut params.tensor_at_mut(idx).data;
            for (j, &g) in grad.iter().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                data[j] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Mean per-structure dice of the argmax predictions over `samples`.
pub fn evaluate(cfg: &SegConfig, params: &SegParams, samples: &[&SyntheticSample]) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("empty evaluation set".to_string()));
    }
    let classes = cfg.classes as u8;
    let mut sums = vec![0.0; cfg.classes - 1];
    for s in samples {
        let pred = predict_mask(cfg, params, &s.image)?;
        for c in 1..cfg.classes {
            sums[c - 1] += dice(&pred, &s.mask, c as u8, classes)?;
        }
    }
    let n = samples.len() as f64;
    Ok(Metrics::from_per_class(
        sums.into_iter().map(|s| s / n).collect(),
    ))
}

/// 90/10 train/validation index split, shuffled deterministically by seed.
fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, "split", 0));
    let n_val = (n / 10).max(1);
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

/// Minimizes cross-entropy + (1 - mean soft dice) with Adam; returns the
/// parameters of the best validation epoch and the per-epoch log.
pub fn train(
    seg_cfg: &SegConfig,
    train_cfg: &TrainConfig,
    dataset: &[SyntheticSample],
    seed: u64,
) -> Result<(SegParams, RunRecord)> {
    seg_cfg.validate()?;
    train_cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidParameter("empty dataset".to_string()));
    }
    let (train_idx, val_idx) = split_indices(dataset.len(), seed);
    if train_idx.is_empty() {
        return Err(Error::InvalidParameter(
            "dataset too small to hold out a validation split".to_string(),
        ));
    }
    let val: Vec<&SyntheticSample> = val_idx.iter().map(|&i| &dataset[i]).collect();

    let mut params = SegParams::init(seg_cfg, seed)?;
    let mut adam = Adam::new(&params, train_cfg);
    let mut record = RunRecord::default();
    let mut best = params.clone();
    let mut best_dice = f64::NEG_INFINITY;
    let mut stale = 0usize;

    for epoch in 0..train_cfg.epochs {
        let lr = lr_at(train_cfg, epoch)?;
        let mut order = train_idx.clone();
        order.shuffle(&mut stream(seed, "epoch.shuffle", epoch as u64));

        let mut loss_sum = 0.0;
        for chunk in order.chunks(train_cfg.batch) {
            let batch: Vec<&SyntheticSample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let (loss, grads) = seg_loss_and_grads(seg_cfg, &params, &batch)?;
            if !loss.is_finite() || loss < 0.0 {
                return Err(Error::NonFinite { op: "train" });
            }
            adam.step(&mut params, &grads, lr);
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train_idx.len() as f64;

        let metrics = evaluate(seg_cfg, &params, &val)?;
        record.rows.push(EpochRow {
            epoch,
            lr,
            train_loss,
            val_mean_dice: metrics.mean,
            val_dice: metrics.per_class.clone(),
        });

        if metrics.mean > best_dice {
            best_dice = metrics.mean;
            best = params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= train_cfg.patience {
                break;
            }
        }
    }
    Ok((best, record))
}

pub const ABLATE_CSV_HEADER: &str =
    "occlusion,seed,use_memory,dice_c1,dice_c2,dice_c3,mean_dice";

/// Trains the memory and no-memory variants for every (occlusion, seed)
/// pair on a fresh dataset of `samples` images and reports best-epoch
/// validation dice per structure. Rows: 2 * |levels| * |seeds|.
pub fn ablate(
    seg_cfg: &SegConfig,
    train_cfg: &TrainConfig,
    samples: usize,
    occlusion_levels: &[f64],
    seeds: &[u64],
) -> Result<String> {
    if seeds.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "ablation needs at least 3 seeds, got {}",
            seeds.len()
        )));
    }
    if occlusion_levels.is_empty() {
        return Err(Error::InvalidParameter(
            "ablation needs at least one occlusion level".to_string(),
        ));
    }
    let mut out = String::from(ABLATE_CSV_HEADER);
    out.push('\n');
    for &level in occlusion_levels {
        for &seed in seeds {
            let dataset = generate_dataset(samples, level, seed)?;
            for use_memory in [true, false] {
                let cfg = SegConfig {
                    use_memory,
                    ..seg_cfg.clone()
                };
                let (_, record) = train(&cfg, train_cfg, &dataset, seed)?;
                let row = record
                    .best_row()
                    .ok_or_else(|| Error::Contract("training produced no epochs".to_string()))?;
                let _ = write!(
                    out,
                    "{level},{seed},{}",
                    if use_memory { "on" } else { "off" }
                );
                for d in &row.val_dice {
                    let _ = write!(out, ",{d}");
                }
                let _ = writeln!(out, ",{}", row.val_mean_dice);
            }
        }
    }
    Ok(out)
}
