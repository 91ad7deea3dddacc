//! Continuous associative memory with softmax retrieval.
//!
//! Patterns live in the columns of X. The energy couples a log-sum-exp of
//! pattern overlaps with a quadratic confinement term; one retrieval step
//! is X * softmax(beta * X^T xi). The same step is also expressed as the
//! generic composition projection(separation(similarity(M, q))), and the
//! static-query attention read is that composition with keys and values.
//!
//! All three entry points share the same dot-product, softmax, and
//! column-combination kernels, so cross-path equality tests are exact.

use crate::error::{Error, Result};
use crate::numerics::tensor::softmax_into;
use crate::numerics::{logsumexp, Tape, Tensor};

// ── Types ──

/// Stored continuous patterns: columns of a d x N matrix, plus the
/// softmax sharpness beta.
#[derive(Debug, Clone)]
pub struct ContinuousStore {
    x: Tensor,
    beta: f64,
}

impl ContinuousStore {
    /// `beta` defaults to 1/sqrt(d) when not given.
    pub fn new(x: Tensor, beta: Option<f64>) -> Result<Self> {
        if x.shape.len() != 2 || x.shape[1] == 0 || x.shape[0] == 0 {
            return Err(Error::ShapeMismatch {
                op: "continuous_store",
                lhs: x.shape.clone(),
                rhs: vec![0, 0],
            });
        }
        if !x.all_finite() {
            return Err(Error::NonFinite {
                op: "continuous_store",
            });
        }
        let beta = beta.unwrap_or(1.0 / (x.shape[0] as f64).sqrt());
        if beta <= 0.0 || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "beta must be positive and finite, got {beta}"
            )));
        }
        Ok(ContinuousStore { x, beta })
    }

    pub fn d(&self) -> usize {
        self.x.shape[0]
    }

    pub fn n(&self) -> usize {
        self.x.shape[1]
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn matrix(&self) -> &Tensor {
        &self.x
    }

    pub fn column(&self, n: usize) -> Vec<f64> {
        (0..self.d()).map(|i| self.x.at(i, n)).collect()
    }

    fn max_column_sqnorm(&self) -> f64 {
        let (d, n) = (self.d(), self.n());
        let mut best = 0.0f64;
        for c in 0..n {
            let mut sq = 0.0;
            for i in 0..d {
                let v = self.x.at(i, c);
                sq += v * v;
            }
            best = best.max(sq);
        }
        best
    }

    pub fn mean_column_norm(&self) -> f64 {
        let (d, n) = (self.d(), self.n());
        let mut total = 0.0;
        for c in 0..n {
            let mut sq = 0.0;
            for i in 0..d {
                let v = self.x.at(i, c);
                sq += v * v;
            }
            total += sq.sqrt();
        }
        total / n as f64
    }
}

/// Continuous query/state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryState {
    pub xi: Vec<f64>,
}

impl QueryState {
    pub fn new(xi: Vec<f64>) -> Result<Self> {
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "query_state" });
        }
        Ok(QueryState { xi })
    }
}

// ── Shared retrieval kernels ──

/// out[c] = column c of `m` dotted with q, accumulating over rows in order.
fn col_dots(m: &Tensor, q: &[f64]) -> Vec<f64> {
    let (rows, cols) = (m.shape[0], m.shape[1]);
    let mut out = vec![0.0; cols];
    for i in 0..rows {
        let qi = q[i];
        let row = &m.data[i * cols..(i + 1) * cols];
        for (o, &v) in out.iter_mut().zip(row) {
            *o += qi * v;
        }
    }
    out
}

/// out = sum_c w[c] * column c of `p`, accumulating columns in order.
fn weighted_col_sum(p: &Tensor, w: &[f64]) -> Vec<f64> {
    let (rows, cols) = (p.shape[0], p.shape[1]);
    let mut out = vec![0.0; rows];
    for (i, o) in out.iter_mut().enumerate() {
        let row = &p.data[i * cols..(i + 1) * cols];
        let mut acc = 0.0;
        for (wc, &v) in w.iter().zip(row) {
            acc += wc * v;
        }
        *o = acc;
    }
    out
}

fn softmax_scaled(scores: &[f64], beta: f64) -> Vec<f64> {
    let scaled: Vec<f64> = scores.iter().map(|&s| beta * s).collect();
    let mut out = vec![0.0; scaled.len()];
    softmax_into(&scaled, &mut out);
    out
}

// ── Energy ──

/// E = -lse(beta, X^T xi) + 1/2 |xi|^2 + beta^-1 ln N + 1/2 M^2, with M
/// the largest column norm. M^2 is taken directly as the squared norm (no
/// square root), which makes the single-stored-pattern identity E = 0
/// exact rather than merely close.
pub fn energy_continuous(store: &ContinuousStore, xi: &QueryState) -> Result<f64> {
    if xi.xi.len() != store.d() {
        return Err(Error::ShapeMismatch {
            op: "energy_continuous",
            lhs: store.x.shape.clone(),
            rhs: vec![xi.xi.len()],
        });
    }
    let scores = col_dots(&store.x, &xi.xi);
    let lse = logsumexp(store.beta, &scores)?;
    let sq: f64 = xi.xi.iter().map(|v| v * v).sum();
    let e = -lse + 0.5 * sq + (store.n() as f64).ln() / store.beta
        + 0.5 * store.max_column_sqnorm();
    if !e.is_finite() {
        return Err(Error::NonFinite {
            op: "energy_continuous",
        });
    }
    Ok(e)
}

/// Energy and its gradient in xi, via the reverse-mode tape.
pub fn energy_continuous_grad(store: &ContinuousStore, xi: &QueryState) -> Result<(f64, Vec<f64>)> {
    if xi.xi.len() != store.d() {
        return Err(Error::ShapeMismatch {
            op: "energy_continuous",
            lhs: store.x.shape.clone(),
            rhs: vec![xi.xi.len()],
        });
    }
    let d = store.d();
    let mut tape = Tape::new();
    let q = tape.leaf(Tensor::new(vec![1, d], xi.xi.clone())?.with_grad())?;
    let x = tape.constant(store.x.clone())?;
    let scores = tape.matmul(q, x)?;
    let lse = tape.logsumexp_rows(scores, store.beta)?;
    let lse_flat = tape.reshape(lse, vec![1])?;
    let neg_lse = tape.scale(lse_flat, -1.0)?;
    let sq = tape.mul(q, q)?;
    let sum_sq = tape.sum_all(sq)?;
    let half_sq = tape.scale(sum_sq, 0.5)?;
    let partial = tape.add(neg_lse, half_sq)?;
    let constant = (store.n() as f64).ln() / store.beta + 0.5 * store.max_column_sqnorm();
    let energy = tape.add_scalar(partial, constant)?;
    tape.backward(energy)?;
    let grad = tape
        .grad(q)
        .cloned()
        .ok_or_else(|| Error::Contract("energy gradient missing".to_string()))?;
    Ok((tape.scalar_value(energy), grad))
}

// ── Retrieval ──

/// Softmax weights over stored columns for one retrieval step.
pub fn retrieval_weights(store: &ContinuousStore, xi: &QueryState) -> Result<Vec<f64>> {
    if xi.xi.len() != store.d() {
        return Err(Error::ShapeMismatch {
            op: "update_continuous",
            lhs: store.x.shape.clone(),
            rhs: vec![xi.xi.len()],
        });
    }
    Ok(softmax_scaled(&col_dots(&store.x, &xi.xi), store.beta))
}

/// One retrieval step: xi_new = X * softmax(beta * X^T xi).
pub fn update_continuous(store: &ContinuousStore, xi: &QueryState) -> Result<QueryState> {
    let w = retrieval_weights(store, xi)?;
    Ok(QueryState {
        xi: weighted_col_sum(&store.x, &w),
    })
}

// ── Generic composition: projection(separation(similarity)) ──

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Similarity {
    Dot,
    Cosine,
}

impl Similarity {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "dot" => Ok(Similarity::Dot),
            "cosine" => Ok(Similarity::Cosine),
            other => Err(Error::InvalidParameter(format!(
                "unknown similarity '{other}'; registered: dot, cosine"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Separation {
    Softmax { beta: f64 },
    Max,
}

impl Separation {
    pub fn parse(name: &str, beta: Option<f64>) -> Result<Self> {
        match name {
            "softmax" => {
                let beta = beta.ok_or_else(|| {
                    Error::InvalidParameter("softmax separation needs beta".to_string())
                })?;
                if beta <= 0.0 || !beta.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "softmax separation needs beta > 0, got {beta}"
                    )));
                }
                Ok(Separation::Softmax { beta })
            }
            "max" => Ok(Separation::Max),
            other => Err(Error::InvalidParameter(format!(
                "unknown separation '{other}'; registered: softmax, max"
            ))),
        }
    }
}

/// Retrieval recipe: a similarity kernel, a separation nonlinearity, and a
/// projection matrix whose columns are combined by the separated weights.
#[derive(Debug, Clone)]
pub struct UhnSpec {
    pub sim: Similarity,
    pub sep: Separation,
    pub p: Tensor,
}

impl UhnSpec {
    pub fn new(sim: &str, sep: &str, beta: Option<f64>, p: Tensor) -> Result<Self> {
        if p.shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "uhn_spec",
                lhs: p.shape.clone(),
                rhs: vec![0, 0],
            });
        }
        Ok(UhnSpec {
            sim: Similarity::parse(sim)?,
            sep: Separation::parse(sep, beta)?,
            p,
        })
    }
}

/// z = P * sep(sim(M, q)); memory patterns are the columns of `m`.
pub fn uhn_retrieve(spec: &UhnSpec, m: &Tensor, q: &[f64]) -> Result<Vec<f64>> {
    if m.shape.len() != 2 || m.shape[0] != q.len() {
        return Err(Error::ShapeMismatch {
            op: "uhn_retrieve",
            lhs: m.shape.clone(),
            rhs: vec![q.len()],
        });
    }
    let n = m.shape[1];
    if spec.p.shape[1] != n {
        return Err(Error::ShapeMismatch {
            op: "uhn_retrieve",
            lhs: spec.p.shape.clone(),
            rhs: m.shape.clone(),
        });
    }
    let scores = match spec.sim {
        Similarity::Dot => col_dots(m, q),
        Similarity::Cosine => {
            let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if qn == 0.0 {
                return Err(Error::InvalidParameter(
                    "cosine similarity undefined for a zero query".to_string(),
                ));
            }
            let raw = col_dots(m, q);
            let mut out = Vec::with_capacity(n);
            for (c, dot) in raw.into_iter().enumerate() {
                let mut sq = 0.0;
                for i in 0..m.shape[0] {
                    let v = m.at(i, c);
                    sq += v * v;
                }
                let mn = sq.sqrt();
                if mn == 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "cosine similarity undefined for zero memory column {c}"
                    )));
                }
                out.push(dot / (mn * qn));
            }
            out
        }
    };
    let weights = match spec.sep {
        Separation::Softmax { beta } => softmax_scaled(&scores, beta),
        Separation::Max => {
            let mut best = 0usize;
            for (i, &s) in scores.iter().enumerate() {
                if s > scores[best] {
                    best = i;
                }
            }
            let mut w = vec![0.0; n];
            w[best] = 1.0;
            w
        }
    };
    Ok(weighted_col_sum(&spec.p, &weights))
}

/// Attention read with a fixed query: z = softmax(xi^T K^T / sqrt(d_k)) Z,
/// with keys in the rows of `k` and values in the rows of `z`. Implemented
/// as the composition uhn_retrieve(dot, softmax(1/sqrt(d_k)), P = Z^T)
/// over M = K^T, so the two formulations agree exactly.
pub fn retrieve_static_query(xi: &[f64], k: &Tensor, z: &Tensor) -> Result<Vec<f64>> {
    if k.shape.len() != 2 || z.shape.len() != 2 || k.shape[0] != z.shape[0] {
        return Err(Error::ShapeMismatch {
            op: "retrieve_static_query",
            lhs: k.shape.clone(),
            rhs: z.shape.clone(),
        });
    }
    let d_k = k.shape[1];
    if xi.len() != d_k {
        return Err(Error::ShapeMismatch {
            op: "retrieve_static_query",
            lhs: k.shape.clone(),
            rhs: vec![xi.len()],
        });
    }
    let m = transpose(k);
    let p = transpose(z);
    let spec = UhnSpec::new("dot", "softmax", Some(1.0 / (d_k as f64).sqrt()), p)?;
    uhn_retrieve(&spec, &m, xi)
}

fn transpose(t: &Tensor) -> Tensor {
    let (r, c) = (t.shape[0], t.shape[1]);
    let data = crate::numerics::tensor::transpose_raw(&t.data, r, c);
    Tensor {
        shape: vec![c, r],
        data,
        requires_grad: false,
        grad: None,
    }
}

// ── Attractor census ──

#[derive(Debug, Clone, PartialEq)]
pub struct CensusEntry {
    pub attractor: Vec<f64>,
    pub basin_count: usize,
}

pub const CENSUS_CSV_HEADER: &str = "attractor_id,basin_count,norm";

/// 1e-4 of the mean stored-column norm.
pub fn default_merge_tol(store: &ContinuousStore) -> f64 {
    1e-4 * store.mean_column_norm()
}

/// Iterate retrieval from every probe and merge endpoints closer than
/// merge_tol (Euclidean). Attractors are reported in lexicographic order
/// so the output does not depend on probe order.
pub fn metastable_census(
    store: &ContinuousStore,
    probes: &[QueryState],
    iters: usize,
    merge_tol: f64,
) -> Result<Vec<CensusEntry>> {
    if iters == 0 {
        return Err(Error::InvalidParameter(
            "census needs iters >= 1".to_string(),
        ));
    }
    if merge_tol < 0.0 || !merge_tol.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "merge tolerance must be non-negative and finite, got {merge_tol}"
        )));
    }
    let mut entries: Vec<CensusEntry> = Vec::new();
    for probe in probes {
        let mut state = probe.clone();
        for _ in 0..iters {
            state = update_continuous(store, &state)?;
        }
        let found = entries.iter_mut().find(|e| {
            let sq: f64 = e
                .attractor
                .iter()
                .zip(&state.xi)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            sq.sqrt() <= merge_tol
        });
        match found {
            Some(e) => e.basin_count += 1,
            None => entries.push(CensusEntry {
                attractor: state.xi,
                basin_count: 1,
            }),
        }
    }
    entries.sort_by(|a, b| {
        a.attractor
            .partial_cmp(&b.attractor)
            .expect("attractors are finite")
    });
    Ok(entries)
}

pub fn census_csv(entries: &[CensusEntry]) -> String {
    let mut out = String::from(CENSUS_CSV_HEADER);
    out.push('\n');
    for (id, e) in entries.iter().enumerate() {
        let norm = e.attractor.iter().map(|v| v * v).sum::<f64>().sqrt();
        out.push_str(&format!("{},{},{}\n", id, e.basin_count, norm));
    }
    out
}
