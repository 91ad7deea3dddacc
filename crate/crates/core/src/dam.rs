//! Static-memory attention: learnable memory slots with tied key/value
//! projections.
//!
//! The memory is a parameter matrix xi (m slots of width d) that never
//! depends on the input. Keys and values are both projected from xi with a
//! single matrix: K = xi W_k^T and V = xi W_k, the transpose tie standing
//! in for a second projection parameter. Queries attend over the slots and
//! read back a convex combination of value rows.

use crate::error::{Error, Result};
use crate::numerics::rng::stream;
use crate::numerics::tensor::{matmul_raw, transpose_raw};
use crate::numerics::{Tape, Tensor, TensorId};
use rand::Rng;
use rand_distr::StandardNormal;
use std::io::{Read, Write};
use std::path::Path;

// ── Parameters ──

#[derive(Debug, Clone, PartialEq)]
pub struct StaticMemory {
    pub xi: Tensor,
    pub w_k: Tensor,
}

impl StaticMemory {
    pub fn new(xi: Tensor, w_k: Tensor) -> Result<Self> {
        if xi.shape.len() != 2 || xi.shape[0] == 0 || xi.shape[1] == 0 {
            return Err(Error::ShapeMismatch {
                op: "static_memory",
                lhs: xi.shape.clone(),
                rhs: vec![0, 0],
            });
        }
        let d = xi.shape[1];
        if w_k.shape != vec![d, d] {
            return Err(Error::ShapeMismatch {
                op: "static_memory",
                lhs: xi.shape.clone(),
                rhs: w_k.shape.clone(),
            });
        }
        if !xi.all_finite() || !w_k.all_finite() {
            return Err(Error::NonFinite { op: "static_memory" });
        }
        Ok(StaticMemory { xi, w_k })
    }

    pub fn slots(&self) -> usize {
        self.xi.shape[0]
    }

    pub fn width(&self) -> usize {
        self.xi.shape[1]
    }

    /// (K, V): K = xi W_k^T, V = xi W_k. Depends only on parameters.
    pub fn projections(&self) -> (Tensor, Tensor) {
        let (m, d) = (self.slots(), self.width());
        let wkt = transpose_raw(&self.w_k.data, d, d);
        let k = matmul_raw(&self.xi.data, &wkt, m, d, d);
        let v = matmul_raw(&self.xi.data, &self.w_k.data, m, d, d);
        (
            Tensor::new(vec![m, d], k).expect("projection shape"),
            Tensor::new(vec![m, d], v).expect("projection shape"),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// W_k = I + small noise; keys and values start close to the slots.
    NearOrthogonalWk,
    /// W_k = I exactly, so K = xi and V = xi.
    IdentityWk,
}

pub fn init_static_memory(m: usize, d: usize, seed: u64, scheme: InitScheme) -> Result<StaticMemory> {
    if m == 0 || d == 0 {
        return Err(Error::InvalidParameter(format!(
            "memory needs m >= 1 and d >= 1, got m={m}, d={d}"
        )));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut rng = stream(seed, "static_memory.xi", 0);
    let xi_data: Vec<f64> = (0..m * d)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect();
    let mut wk_data = vec![0.0; d * d];
    for i in 0..d {
        wk_data[i * d + i] = 1.0;
    }
    if scheme == InitScheme::NearOrthogonalWk {
        let mut rng = stream(seed, "static_memory.wk", 0);
        for v in wk_data.iter_mut() {
            *v += 0.02 * scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    StaticMemory::new(
        Tensor::new(vec![m, d], xi_data)?,
        Tensor::new(vec![d, d], wk_data)?,
    )
}

// ── Forward ──

#[derive(Debug, Clone)]
pub struct ForwardDetail {
    pub output: Tensor,
    pub k: Tensor,
    pub v: Tensor,
    pub attention: Tensor,
}

/// z = softmax(Q K^T / sqrt(d)) V, one retrieval per query row.
pub fn dam_forward(mem: &StaticMemory, q: &Tensor) -> Result<Tensor> {
    Ok(dam_forward_detailed(mem, q)?.output)
}

pub fn dam_forward_detailed(mem: &StaticMemory, q: &Tensor) -> Result<ForwardDetail> {
    let d = mem.width();
    if q.shape.len() != 2 || q.shape[1] != d {
        return Err(Error::ShapeMismatch {
            op: "dam_forward",
            lhs: q.shape.clone(),
            rhs: mem.xi.shape.clone(),
        });
    }
    if !q.all_finite() {
        return Err(Error::NonFinite { op: "dam_forward" });
    }
    let (t, m) = (q.shape[0], mem.slots());
    let (k, v) = mem.projections();
    let kt = transpose_raw(&k.data, m, d);
    let mut scores = matmul_raw(&q.data, &kt, t, d, m);
    let scale = 1.0 / (d as f64).sqrt();
    for s in scores.iter_mut() {
        *s *= scale;
    }
    let mut attn = vec![0.0; t * m];
    for r in 0..t {
        crate::numerics::tensor::softmax_into(
            &scores[r * m..(r + 1) * m],
            &mut attn[r * m..(r + 1) * m],
        );
    }
    let out = matmul_raw(&attn, &v.data, t, m, d);
    Ok(ForwardDetail {
        output: Tensor::new(vec![t, d], out)?,
        k,
        v,
        attention: Tensor::new(vec![t, m], attn)?,
    })
}

/// Tape version of the same retrieval, for end-to-end training.
pub fn dam_forward_tape(
    tape: &mut Tape,
    xi: TensorId,
    w_k: TensorId,
    q: TensorId,
) -> Result<TensorId> {
    let d = tape.value(xi).shape[1];
    let wkt = tape.transpose(w_k)?;
    let k = tape.matmul(xi, wkt)?;
    let v = tape.matmul(xi, w_k)?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
    let attn = tape.softmax_rows(scaled)?;
    tape.matmul(attn, v)
}

// ── Diagnostics ──

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalDiagnostics {
    /// Shannon entropy (nats) of each query's attention row; 0 for a
    /// one-hot read, ln m for a uniform one.
    pub attention_entropy: Vec<f64>,
    /// Distinct value-row clusters under complete linkage at
    /// 1e-3 * mean value-row norm.
    pub effective_states: usize,
}

pub fn dam_diagnostics(mem: &StaticMemory, q: &Tensor) -> Result<RetrievalDiagnostics> {
    let detail = dam_forward_detailed(mem, q)?;
    let (t, m) = (detail.attention.shape[0], detail.attention.shape[1]);
    let mut entropy = Vec::with_capacity(t);
    for r in 0..t {
        let row = &detail.attention.data[r * m..(r + 1) * m];
        let h: f64 = row
            .iter()
            .map(|&w| if w > 0.0 { -w * w.ln() } else { 0.0 })
            .sum();
        entropy.push(h);
    }
    let d = mem.width();
    let mean_norm = (0..m)
        .map(|r| {
            detail.v.data[r * d..(r + 1) * d]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / m as f64;
    let effective = complete_linkage_clusters(&detail.v.data, m, d, 1e-3 * mean_norm);
    Ok(RetrievalDiagnostics {
        attention_entropy: entropy,
        effective_states: effective,
    })
}

/// Number of clusters when rows are agglomerated while the farthest pair
/// inside a merged cluster stays within `tol`.
fn complete_linkage_clusters(rows: &[f64], m: usize, d: usize, tol: f64) -> usize {
    let dist = |a: usize, b: usize| -> f64 {
        rows[a * d..(a + 1) * d]
            .iter()
            .zip(&rows[b * d..(b + 1) * d])
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut clusters: Vec<Vec<usize>> = (0..m).map(|i| vec![i]).collect();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut worst = 0.0f64;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        worst = worst.max(dist(i, j));
                    }
                }
                if best.map_or(true, |(_, _, w)| worst < w) {
                    best = Some((a, b, worst));
                }
            }
        }
        match best {
            Some((a, b, worst)) if worst <= tol => {
                let merged = clusters.remove(b);
                clusters[a].extend(merged);
            }
            _ => break,
        }
    }
    clusters.len()
}

// ── Persistence ──

pub const WEIGHT_MAGIC: &[u8; 4] = b"DAMW";
pub const WEIGHT_VERSION: u16 = 1;

pub(crate) fn write_f64s(w: &mut impl Write, data: &[f64]) -> Result<()> {
    for &v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut buf = [0u8; 8];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut buf)
            .map_err(|_| Error::Format("weight data truncated".to_string()))?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("weight header truncated".to_string()))?;
    Ok(u32::from_le_bytes(buf))
}

/// Memory payload without the container header: m, d as u32 little-endian,
/// then xi rows, then W_k rows, as little-endian float64 row-major.
pub(crate) fn write_memory_payload(mem: &StaticMemory, w: &mut impl Write) -> Result<()> {
    w.write_all(&(mem.slots() as u32).to_le_bytes())?;
    w.write_all(&(mem.width() as u32).to_le_bytes())?;
    write_f64s(w, &mem.xi.data)?;
    write_f64s(w, &mem.w_k.data)
}

pub(crate) fn read_memory_payload(r: &mut impl Read) -> Result<StaticMemory> {
    let m = read_u32(r)? as usize;
    let d = read_u32(r)? as usize;
    if m == 0 || d == 0 || m.saturating_mul(d) > 1 << 28 {
        return Err(Error::Format(format!(
            "implausible memory dimensions m={m}, d={d}"
        )));
    }
    let xi = read_f64s(r, m * d)?;
    let wk = read_f64s(r, d * d)?;
    StaticMemory::new(Tensor::new(vec![m, d], xi)?, Tensor::new(vec![d, d], wk)?)
}

pub fn write_static_memory(mem: &StaticMemory, w: &mut impl Write) -> Result<()> {
    w.write_all(WEIGHT_MAGIC)?;
    w.write_all(&WEIGHT_VERSION.to_le_bytes())?;
    write_memory_payload(mem, w)
}

pub fn read_static_memory(r: &mut impl Read) -> Result<StaticMemory> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("weight file truncated".to_string()))?;
    if &magic != WEIGHT_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}; expected {WEIGHT_MAGIC:?}"
        )));
    }
    let mut ver = [0u8; 2];
    r.read_exact(&mut ver)
        .map_err(|_| Error::Format("weight file truncated".to_string()))?;
    let version = u16::from_le_bytes(ver);
    if version != WEIGHT_VERSION {
        return Err(Error::Format(format!(
            "unsupported weight version {version}; expected {WEIGHT_VERSION}"
        )));
    }
    read_memory_payload(r)
}

pub fn save_static_memory(mem: &StaticMemory, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_static_memory(mem, &mut file)
}

pub fn load_static_memory(path: &Path) -> Result<StaticMemory> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    read_static_memory(&mut file)
}
