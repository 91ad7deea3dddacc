//! Patch transformer with a per-block static-memory retrieval branch.
//!
//! Parameters live in a single named, ordered registry so that
//! initialization, the optimizer, checkpoints, and finite-difference probes
//! all agree on one layout. Names shared between the memory and no-memory
//! variants are seeded identically, which makes the two variants comparable
//! parameter-for-parameter.

use super::data::SyntheticSample;
use super::SegConfig;
use crate::dam::dam_forward_tape;
use crate::error::{Error, Result};
use crate::numerics::rng::stream;
use crate::numerics::{Tape, Tensor, TensorId};
use rand::Rng;
use rand_distr::StandardNormal;

const LN_EPS: f64 = 1e-5;
const SOFT_DICE_SMOOTH: f64 = 1.0;
const MLP_RATIO: usize = 4;

#[derive(Clone, Copy)]
enum InitKind {
    Zeros,
    Ones,
    ScaledNormal,
    SmallNormal,
    MemorySlots,
    NearIdentity,
}

fn layout(cfg: &SegConfig) -> Vec<(String, Vec<usize>, InitKind)> {
    let d = cfg.embed_dim;
    let pp = cfg.patch_size * cfg.patch_size;
    let t = cfg.tokens();
    let hidden = MLP_RATIO * d;
    let mut out: Vec<(String, Vec<usize>, InitKind)> = vec![
        ("patch_embed.w".into(), vec![pp, d], InitKind::ScaledNormal),
        ("patch_embed.b".into(), vec![1, d], InitKind::Zeros),
        ("pos_embed".into(), vec![t, d], InitKind::SmallNormal),
    ];
    for i in 0..cfg.blocks {
        let p = |s: &str| format!("block{i}.{s}");
        out.push((p("ln1.g"), vec![1, d], InitKind::Ones));
        out.push((p("ln1.b"), vec![1, d], InitKind::Zeros));
        out.push((p("attn.qkv_w"), vec![d, 3 * d], InitKind::ScaledNormal));
        out.push((p("attn.qkv_b"), vec![1, 3 * d], InitKind::Zeros));
        out.push((p("attn.out_w"), vec![d, d], InitKind::ScaledNormal));
        out.push((p("attn.out_b"), vec![1, d], InitKind::Zeros));
        out.push((p("ln2.g"), vec![1, d], InitKind::Ones));
        out.push((p("ln2.b"), vec![1, d], InitKind::Zeros));
        out.push((p("mlp.w1"), vec![d, hidden], InitKind::ScaledNormal));
        out.push((p("mlp.b1"), vec![1, hidden], InitKind::Zeros));
        out.push((p("mlp.w2"), vec![hidden, d], InitKind::ScaledNormal));
        out.push((p("mlp.b2"), vec![1, d], InitKind::Zeros));
        if cfg.use_memory {
            out.push((p("mem.xi"), vec![cfg.memory_slots, d], InitKind::MemorySlots));
            out.push((p("mem.w_k"), vec![d, d], InitKind::NearIdentity));
            out.push((p("mem.w_q"), vec![d, d], InitKind::ScaledNormal));
        }
    }
    out.push(("ln_f.g".into(), vec![1, d], InitKind::Ones));
    out.push(("ln_f.b".into(), vec![1, d], InitKind::Zeros));
    out.push((
        "decoder.w".into(),
        vec![d, pp * cfg.classes],
        InitKind::ScaledNormal,
    ));
    out.push((
        "decoder.b".into(),
        vec![1, pp * cfg.classes],
        InitKind::Zeros,
    ));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegParams {
    entries: Vec<(String, Tensor)>,
}

impl SegParams {
    /// Fresh parameters; every tensor draws from a stream keyed by its own
    /// name, so configs that share a tensor name initialize it identically.
    pub fn init(cfg: &SegConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim as f64;
        let mut entries = Vec::new();
        for (name, shape, kind) in layout(cfg) {
            let n = shape.iter().product::<usize>();
            let mut rng = stream(seed, &format!("param.{name}"), 0);
            let data: Vec<f64> = match kind {
                InitKind::Zeros => vec![0.0; n],
                InitKind::Ones => vec![1.0; n],
                InitKind::ScaledNormal => {
                    let s = 1.0 / (shape[0] as f64).sqrt();
                    (0..n)
                        .map(|_| rng.sample::<f64, _>(StandardNormal) * s)
                        .collect()
                }
                InitKind::SmallNormal => (0..n)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) * 0.02)
                    .collect(),
                InitKind::MemorySlots => (0..n)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) / d.sqrt())
                    .collect(),
                InitKind::NearIdentity => {
                    let side = shape[0];
                    let mut v: Vec<f64> = (0..n)
                        .map(|_| rng.sample::<f64, _>(StandardNormal) * 0.02 / d.sqrt())
                        .collect();
                    for i in 0..side {
                        v[i * side + i] += 1.0;
                    }
                    v
                }
            };
            entries.push((name, Tensor::new(shape, data)?));
        }
        Ok(SegParams { entries })
    }

    pub fn expected_shapes(cfg: &SegConfig) -> Vec<(String, Vec<usize>)> {
        layout(cfg).into_iter().map(|(n, s, _)| (n, s)).collect()
    }

    pub(crate) fn from_entries(cfg: &SegConfig, entries: Vec<(String, Tensor)>) -> Result<Self> {
        let expected = Self::expected_shapes(cfg);
        if entries.len() != expected.len() {
            return Err(Error::Format(format!(
                "parameter count {} does not match configuration ({} expected)",
                entries.len(),
                expected.len()
            )));
        }
        for ((name, tensor), (want_name, want_shape)) in entries.iter().zip(&expected) {
            if name != want_name || &tensor.shape != want_shape {
                return Err(Error::Format(format!(
                    "parameter {name} {:?} does not match expected {want_name} {want_shape:?}",
                    tensor.shape
                )));
            }
        }
        Ok(SegParams { entries })
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub(crate) fn tensor_at_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.entries[idx].1
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }
}

fn bind(tape: &mut Tape, params: &SegParams, trainable: bool) -> Result<Vec<TensorId>> {
    params
        .entries
        .iter()
        .map(|(_, t)| {
            if trainable {
                tape.leaf(t.clone().with_grad())
            } else {
                tape.constant(t.clone())
            }
        })
        .collect()
}

fn extract_patches(cfg: &SegConfig, image: &[f64]) -> Vec<f64> {
    let (p, side) = (cfg.patch_size, cfg.image_size / cfg.patch_size);
    let w = cfg.image_size;
    let mut out = vec![0.0; cfg.tokens() * p * p];
    for tr in 0..side {
        for tc in 0..side {
            let t = tr * side + tc;
            for pr in 0..p {
                for pc in 0..p {
                    out[t * p * p + pr * p + pc] = image[(tr * p + pr) * w + tc * p + pc];
                }
            }
        }
    }
    out
}

fn token_major_labels(cfg: &SegConfig, mask: &[u8]) -> Vec<usize> {
    let (p, side) = (cfg.patch_size, cfg.image_size / cfg.patch_size);
    let w = cfg.image_size;
    let mut out = vec![0usize; mask.len()];
    for tr in 0..side {
        for tc in 0..side {
            let t = tr * side + tc;
            for pr in 0..p {
                for pc in 0..p {
                    out[t * p * p + pr * p + pc] = mask[(tr * p + pr) * w + tc * p + pc] as usize;
                }
            }
        }
    }
    out
}

/// Per-pixel logits in token-major row order, shape [tokens*patch², classes].
fn build_logits(
    tape: &mut Tape,
    cfg: &SegConfig,
    params: &SegParams,
    ids: &[TensorId],
    image: &[f64],
) -> Result<TensorId> {
    if image.len() != cfg.image_size * cfg.image_size {
        return Err(Error::ShapeMismatch {
            op: "forward_seg",
            lhs: vec![image.len()],
            rhs: vec![cfg.image_size, cfg.image_size],
        });
    }
    let pid = |name: &str| -> Result<TensorId> {
        params
            .index_of(name)
            .map(|i| ids[i])
            .ok_or_else(|| Error::InvalidParameter(format!("missing parameter {name}")))
    };
    let d = cfg.embed_dim;
    let hd = d / cfg.heads;
    let pp = cfg.patch_size * cfg.patch_size;

    let patches = tape.constant(Tensor::new(
        vec![cfg.tokens(), pp],
        extract_patches(cfg, image),
    )?)?;
    let emb = tape.matmul(patches, pid("patch_embed.w")?)?;
    let emb = tape.add_row(emb, pid("patch_embed.b")?)?;
    let mut x = tape.add(emb, pid("pos_embed")?)?;

    for i in 0..cfg.blocks {
        let p = |s: &str| format!("block{i}.{s}");

        let h = tape.layer_norm_rows(x, pid(&p("ln1.g"))?, pid(&p("ln1.b"))?, LN_EPS)?;
        let qkv = tape.matmul(h, pid(&p("attn.qkv_w"))?)?;
        let qkv = tape.add_row(qkv, pid(&p("attn.qkv_b"))?)?;
        let q = tape.slice_cols(qkv, 0, d)?;
        let k = tape.slice_cols(qkv, d, d)?;
        let v = tape.slice_cols(qkv, 2 * d, d)?;
        let mut heads_out: Option<TensorId> = None;
        for head in 0..cfg.heads {
            let qh = tape.slice_cols(q, head * hd, hd)?;
            let kh = tape.slice_cols(k, head * hd, hd)?;
            let vh = tape.slice_cols(v, head * hd, hd)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, 1.0 / (hd as f64).sqrt())?;
            let attn = tape.softmax_rows(scores)?;
            let oh = tape.matmul(attn, vh)?;
            heads_out = Some(match heads_out {
                None => oh,
                Some(acc) => tape.concat_cols(acc, oh)?,
            });
        }
        let o = heads_out.expect("at least one head");
        let o = tape.matmul(o, pid(&p("attn.out_w"))?)?;
        let o = tape.add_row(o, pid(&p("attn.out_b"))?)?;
        x = tape.add(x, o)?;

        let h2 = tape.layer_norm_rows(x, pid(&p("ln2.g"))?, pid(&p("ln2.b"))?, LN_EPS)?;
        let m1 = tape.matmul(h2, pid(&p("mlp.w1"))?)?;
        let m1 = tape.add_row(m1, pid(&p("mlp.b1"))?)?;
        let m1 = tape.gelu(m1)?;
        let m2 = tape.matmul(m1, pid(&p("mlp.w2"))?)?;
        let m2 = tape.add_row(m2, pid(&p("mlp.b2"))?)?;
        x = tape.add(x, m2)?;

        if cfg.use_memory {
            let qm = tape.matmul(x, pid(&p("mem.w_q"))?)?;
            let z = dam_forward_tape(tape, pid(&p("mem.xi"))?, pid(&p("mem.w_k"))?, qm)?;
            x = tape.add(x, z)?;
        }
    }

    let x = tape.layer_norm_rows(x, pid("ln_f.g")?, pid("ln_f.b")?, LN_EPS)?;
    let logits = tape.matmul(x, pid("decoder.w")?)?;
    let logits = tape.add_row(logits, pid("decoder.b")?)?;
    tape.reshape(logits, vec![cfg.tokens() * pp, cfg.classes])
}

/// Mean per-pixel cross-entropy plus one minus the mean soft dice over the
/// structure classes.
fn build_loss(
    tape: &mut Tape,
    cfg: &SegConfig,
    params: &SegParams,
    ids: &[TensorId],
    sample: &SyntheticSample,
) -> Result<TensorId> {
    let logits = build_logits(tape, cfg, params, ids, &sample.image)?;
    let targets = token_major_labels(cfg, &sample.mask);
    let ce = tape.cross_entropy_rows(logits, &targets)?;

    let probs = tape.softmax_rows(logits)?;
    let n = targets.len();
    let mut dice_sum: Option<TensorId> = None;
    for class in 1..cfg.classes {
        let pc = tape.slice_cols(probs, class, 1)?;
        let gcol: Vec<f64> = targets
            .iter()
            .map(|&t| if t == class { 1.0 } else { 0.0 })
            .collect();
        let count: f64 = gcol.iter().sum();
        let gc = tape.constant(Tensor::new(vec![n, 1], gcol)?)?;
        let inter = tape.mul(pc, gc)?;
        let inter = tape.sum_all(inter)?;
        let num = tape.scale(inter, 2.0)?;
        let num = tape.add_scalar(num, SOFT_DICE_SMOOTH)?;
        let psum = tape.sum_all(pc)?;
        let den = tape.add_scalar(psum, count + SOFT_DICE_SMOOTH)?;
        let dc = tape.div(num, den)?;
        dice_sum = Some(match dice_sum {
            None => dc,
            Some(acc) => tape.add(acc, dc)?,
        });
    }
    let dice_mean = tape.scale(
        dice_sum.expect("at least one structure class"),
        1.0 / (cfg.classes - 1) as f64,
    )?;
    let dice_loss = tape.scale(dice_mean, -1.0)?;
    let dice_loss = tape.add_scalar(dice_loss, 1.0)?;
    tape.add(ce, dice_loss)
}

/// Class scores per pixel, shape [image_size, image_size, classes].
pub fn forward_seg(cfg: &SegConfig, params: &SegParams, image: &[f64]) -> Result<Tensor> {
    cfg.validate()?;
    let mut tape = Tape::new();
    let ids = bind(&mut tape, params, false)?;
    let logits = build_logits(&mut tape, cfg, params, &ids, image)?;
    let token_major = &tape.value(logits).data;

    let (p, side, w, c) = (
        cfg.patch_size,
        cfg.image_size / cfg.patch_size,
        cfg.image_size,
        cfg.classes,
    );
    let mut out = vec![0.0; w * w * c];
    for tr in 0..side {
        for tc in 0..side {
            let t = tr * side + tc;
            for pr in 0..p {
                for pc in 0..p {
                    let px = (tr * p + pr) * w + tc * p + pc;
                    let tok = t * p * p + pr * p + pc;
                    out[px * c..(px + 1) * c].copy_from_slice(&token_major[tok * c..(tok + 1) * c]);
                }
            }
        }
    }
    Tensor::new(vec![w, w, c], out)
}

/// Argmax class per pixel, row-major; ties resolve to the lowest class id.
pub fn predict_mask(cfg: &SegConfig, params: &SegParams, image: &[f64]) -> Result<Vec<u8>> {
    let scores = forward_seg(cfg, params, image)?;
    let c = cfg.classes;
    Ok(scores
        .data
        .chunks_exact(c)
        .map(|row| {
            let mut best = 0usize;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best as u8
        })
        .collect())
}

pub fn seg_loss(cfg: &SegConfig, params: &SegParams, sample: &SyntheticSample) -> Result<f64> {
    cfg.validate()?;
    let mut tape = Tape::new();
    let ids = bind(&mut tape, params, false)?;
    let loss = build_loss(&mut tape, cfg, params, &ids, sample)?;
    Ok(tape.scalar_value(loss))
}

/// Mean loss over the batch and its gradient for every parameter, in
/// registry order.
pub fn seg_loss_and_grads(
    cfg: &SegConfig,
    params: &SegParams,
    samples: &[&SyntheticSample],
) -> Result<(f64, Vec<Vec<f64>>)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidParameter("empty batch".to_string()));
    }
    let mut grads: Vec<Vec<f64>> = params
        .entries
        .iter()
        .map(|(_, t)| vec![0.0; t.numel()])
        .collect();
    let mut total = 0.0;
    let inv = 1.0 / samples.len() as f64;
    for sample in samples {
        let mut tape = Tape::new();
        let ids = bind(&mut tape, params, true)?;
        let loss = build_loss(&mut tape, cfg, params, &ids, sample)?;
        tape.backward(loss)?;
        total += tape.scalar_value(loss);
        for (buf, &id) in grads.iter_mut().zip(&ids) {
            if let Some(g) = tape.grad(id) {
                for (acc, &v) in buf.iter_mut().zip(g) {
                    *acc += v * inv;
                }
            }
        }
    }
    Ok((total * inv, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seg::data::generate_dataset;

    fn small_cfg(use_memory: bool) -> SegConfig {
        SegConfig {
            image_size: 32,
            patch_size: 4,
            embed_dim: 16,
            blocks: 2,
            heads: 2,
            classes: 4,
            memory_slots: 4,
            use_memory,
        }
    }

    #[test]
    fn output_shape_is_pixel_grid_by_classes() {
        let cfg = SegConfig::default();
        let params = SegParams::init(&cfg, 3).unwrap();
        let sample = &generate_dataset(1, 0.0, 3).unwrap()[0];
        let scores = forward_seg(&cfg, &params, &sample.image).unwrap();
        assert_eq!(scores.shape, vec![32, 32, 4]);
        assert!(scores.all_finite());
    }

    #[test]
    fn zeroed_memory_matches_memoryless_network() {
        let seed = 41;
        let cfg_on = small_cfg(true);
        let cfg_off = small_cfg(false);
        let mut on = SegParams::init(&cfg_on, seed).unwrap();
        let off = SegParams::init(&cfg_off, seed).unwrap();
        // shared names initialize identically regardless of the memory flag
        for (name, t) in off.entries() {
            assert_eq!(
                on.entries()[on.index_of(name).unwrap()].1.data,
                t.data,
                "{name}"
            );
        }
        for i in 0..cfg_on.blocks {
            let wk = on.tensor_mut(&format!("block{i}.mem.w_k")).unwrap();
            wk.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let sample = &generate_dataset(1, 0.2, seed).unwrap()[0];
        let a = forward_seg(&cfg_on, &on, &sample.image).unwrap();
        let b = forward_seg(&cfg_off, &off, &sample.image).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn loss_is_finite_positive_and_deterministic() {
        let cfg = small_cfg(true);
        let params = SegParams::init(&cfg, 5).unwrap();
        let sample = &generate_dataset(1, 0.3, 5).unwrap()[0];
        let l1 = seg_loss(&cfg, &params, sample).unwrap();
        let l2 = seg_loss(&cfg, &params, sample).unwrap();
        assert_eq!(l1, l2);
        assert!(l1.is_finite() && l1 > 0.0);
    }

    #[test]
    fn batch_loss_is_mean_of_single_losses() {
        let cfg = small_cfg(true);
        let params = SegParams::init(&cfg, 7).unwrap();
        let data = generate_dataset(3, 0.2, 7).unwrap();
        let refs: Vec<&SyntheticSample> = data.iter().collect();
        let (batch, _) = seg_loss_and_grads(&cfg, &params, &refs).unwrap();
        let mean = data
            .iter()
            .map(|s| seg_loss(&cfg, &params, s).unwrap())
            .sum::<f64>()
            / 3.0;
        assert!((batch - mean).abs() < 1e-12);
    }

    #[test]
    fn sampled_parameter_gradients_match_finite_differences() {
        let cfg = small_cfg(true);
        let mut params = SegParams::init(&cfg, 11).unwrap();
        let sample = generate_dataset(1, 0.3, 11).unwrap().remove(0);
        let (_, grads) = seg_loss_and_grads(&cfg, &params, &[&sample]).unwrap();

        let mut rng = stream(11, "model.fd", 0);
        let eps = 1e-6;
        let mut worst = 0.0f64;
        for _ in 0..32 {
            let entry = rng.gen_range(0..params.entries().len());
            let len = params.entries()[entry].1.numel();
            let elem = rng.gen_range(0..len);
            let orig = params.entries()[entry].1.data[elem];
            params.tensor_at_mut(entry).data[elem] = orig + eps;
            let up = seg_loss(&cfg, &params, &sample).unwrap();
            params.tensor_at_mut(entry).data[elem] = orig - eps;
            let down = seg_loss(&cfg, &params, &sample).unwrap();
            params.tensor_at_mut(entry).data[elem] = orig;
            let fd = (up - down) / (2.0 * eps);
            let rel = (grads[entry][elem] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "max rel err {worst}");
    }

    #[test]
    fn prediction_has_one_label_per_pixel() {
        let cfg = small_cfg(true);
        let params = SegParams::init(&cfg, 13).unwrap();
        let sample = &generate_dataset(1, 0.0, 13).unwrap()[0];
        let mask = predict_mask(&cfg, &params, &sample.image).unwrap();
        assert_eq!(mask.len(), 32 * 32);
        assert!(mask.iter().all(|&c| c < 4));
    }

    #[test]
    fn forward_rejects_wrong_image_size() {
        let cfg = small_cfg(false);
        let params = SegParams::init(&cfg, 1).unwrap();
        assert!(forward_seg(&cfg, &params, &vec![0.5; 100]).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = small_cfg(true);
        assert_eq!(
            SegParams::init(&cfg, 9).unwrap(),
            SegParams::init(&cfg, 9).unwrap()
        );
        assert_ne!(
            SegParams::init(&cfg, 9).unwrap(),
            SegParams::init(&cfg, 10).unwrap()
        );
    }
}
