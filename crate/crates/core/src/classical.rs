//! Binary Hopfield network with Hebbian storage.
//!
//! Spins are ±1, couplings come from the scaled pattern outer-product sum,
//! and retrieval runs asynchronous sign updates to a fixed point.

use crate::error::{Error, Result};
use rand::Rng;

// ── States and patterns ──

/// Spin vector with entries exactly ±1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BipolarState {
    spins: Vec<i8>,
}

impl BipolarState {
    pub fn new(spins: Vec<i8>) -> Result<Self> {
        if spins.is_empty() {
            return Err(Error::InvalidParameter(
                "bipolar state must be non-empty".to_string(),
            ));
        }
        if let Some(&bad) = spins.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::InvalidParameter(format!(
                "bipolar state entries must be +1 or -1, got {bad}"
            )));
        }
        Ok(BipolarState { spins })
    }

    pub fn random<R: Rng>(n: usize, rng: &mut R) -> Self {
        let spins = (0..n).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
        BipolarState { spins }
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn flip(&mut self, i: usize) {
        self.spins[i] = -self.spins[i];
    }

    pub fn negated(&self) -> Self {
        BipolarState {
            spins: self.spins.iter().map(|s| -s).collect(),
        }
    }

    /// Flip `count` distinct random positions.
    pub fn corrupted<R: Rng>(&self, count: usize, rng: &mut R) -> Self {
        let n = self.spins.len();
        let mut idx: Vec<usize> = (0..n).collect();
        let mut out = self.clone();
        for pick in 0..count.min(n) {
            let j = rng.gen_range(pick..n);
            idx.swap(pick, j);
            out.flip(idx[pick]);
        }
        out
    }
}

/// Stored ±1 patterns, one per row.
#[derive(Debug, Clone)]
pub struct PatternStore {
    data: Vec<i8>,
    k: usize,
    n: usize,
}

impl PatternStore {
    pub fn new(rows: Vec<Vec<i8>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidParameter(
                "pattern store must hold at least one pattern".to_string(),
            ));
        }
        let n = rows[0].len();
        if n == 0 {
            return Err(Error::InvalidParameter(
                "patterns must be non-empty".to_string(),
            ));
        }
        let mut data = Vec::with_capacity(rows.len() * n);
        for row in &rows {
            if row.len() != n {
                return Err(Error::ShapeMismatch {
                    op: "pattern_store",
                    lhs: vec![rows.len(), n],
                    rhs: vec![row.len()],
                });
            }
            if let Some(&bad) = row.iter().find(|&&s| s != 1 && s != -1) {
                return Err(Error::InvalidParameter(format!(
                    "pattern entries must be +1 or -1, got {bad}"
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(PatternStore {
            data,
            k: rows.len(),
            n,
        })
    }

    pub fn random<R: Rng>(k: usize, n: usize, rng: &mut R) -> Result<Self> {
        if k == 0 || n == 0 {
            return Err(Error::InvalidParameter(
                "pattern store needs k >= 1 and n >= 1".to_string(),
            ));
        }
        let data = (0..k * n)
            .map(|_| if rng.gen::<bool>() { 1i8 } else { -1 })
            .collect();
        Ok(PatternStore { data, k, n })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, mu: usize) -> &[i8] {
        &self.data[mu * self.n..(mu + 1) * self.n]
    }

    pub fn row_state(&self, mu: usize) -> BipolarState {
        BipolarState {
            spins: self.row(mu).to_vec(),
        }
    }
}

// ── Hebbian couplings ──

/// Symmetric zero-diagonal couplings T_ij = overlap_ij / N.
///
/// The unscaled integer overlap sums are kept alongside T: sign decisions
/// use them so that ties (field exactly zero) are exact integer events
/// rather than float-rounding accidents. The 1/N factor is positive, so
/// the sign is the same either way.
#[derive(Debug, Clone)]
pub struct HebbianWeights {
    n: usize,
    t: Vec<f64>,
    overlap: Vec<f64>,
}

impl HebbianWeights {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Row-major N x N coupling matrix.
    pub fn matrix(&self) -> &[f64] {
        &self.t
    }

    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.n + j]
    }
}

pub fn store(patterns: &PatternStore) -> HebbianWeights {
    let n = patterns.n();
    let mut overlap = vec![0.0; n * n];
    for mu in 0..patterns.k() {
        let row = patterns.row(mu);
        for i in 0..n {
            let xi = row[i] as f64;
            for j in 0..n {
                overlap[i * n + j] += xi * row[j] as f64;
            }
        }
    }
    for i in 0..n {
        overlap[i * n + i] = 0.0;
    }
    let t = overlap.iter().map(|&s| s / n as f64).collect();
    HebbianWeights { n, t, overlap }
}

// ── Energy and dynamics ──

/// E = -1/2 * sum_{i != j} T_ij s_i s_j.
pub fn energy(w: &HebbianWeights, state: &BipolarState) -> Result<f64> {
    if state.len() != w.n {
        return Err(Error::ShapeMismatch {
            op: "classical_energy",
            lhs: vec![w.n, w.n],
            rhs: vec![state.len()],
        });
    }
    let n = w.n;
    let s = state.spins();
    let mut e = 0.0;
    for i in 0..n {
        let si = s[i] as f64;
        let row = &w.t[i * n..(i + 1) * n];
        let mut h = 0.0;
        for j in 0..n {
            h += row[j] * s[j] as f64;
        }
        e += si * h;
    }
    Ok(-0.5 * e)
}

fn check_order(order: &[usize], n: usize) -> Result<()> {
    if order.len() != n {
        return Err(Error::InvalidParameter(format!(
            "update order has {} entries for {} sites",
            order.len(),
            n
        )));
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n || seen[i] {
            return Err(Error::InvalidParameter(format!(
                "update order is not a permutation of 0..{n}"
            )));
        }
        seen[i] = true;
    }
    Ok(())
}

/// Exact integer local field in overlap units: sum_j overlap_ij * s_j.
fn field(w: &HebbianWeights, spins: &[i8], i: usize) -> f64 {
    let n = w.n;
    let row = &w.overlap[i * n..(i + 1) * n];
    let mut h = 0.0;
    for j in 0..n {
        h += row[j] * spins[j] as f64;
    }
    h
}

/// One asynchronous sweep: each site in `order` is set to the sign of its
/// local field, with a zero field keeping the current spin.
pub fn update_async(
    w: &HebbianWeights,
    state: &BipolarState,
    order: &[usize],
) -> Result<BipolarState> {
    if state.len() != w.n {
        return Err(Error::ShapeMismatch {
            op: "classical_update",
            lhs: vec![w.n, w.n],
            rhs: vec![state.len()],
        });
    }
    check_order(order, w.n)?;
    let mut current = state.clone();
    for &i in order {
        let h = field(w, current.spins(), i);
        if h > 0.0 {
            current.spins[i] = 1;
        } else if h < 0.0 {
            current.spins[i] = -1;
        }
    }
    Ok(current)
}

/// As `update_async`, also reporting the energy after every site visit.
pub fn update_async_traced(
    w: &HebbianWeights,
    state: &BipolarState,
    order: &[usize],
) -> Result<(BipolarState, Vec<f64>)> {
    if state.len() != w.n {
        return Err(Error::ShapeMismatch {
            op: "classical_update",
            lhs: vec![w.n, w.n],
            rhs: vec![state.len()],
        });
    }
    check_order(order, w.n)?;
    let mut current = state.clone();
    let mut energies = Vec::with_capacity(order.len());
    for &i in order {
        let h = field(w, current.spins(), i);
        if h > 0.0 {
            current.spins[i] = 1;
        } else if h < 0.0 {
            current.spins[i] = -1;
        }
        energies.push(energy(w, &current)?);
    }
    Ok((current, energies))
}

/// Synchronous variant: every site updated from the same old state.
pub fn update_sync(w: &HebbianWeights, state: &BipolarState) -> Result<BipolarState> {
    if state.len() != w.n {
        return Err(Error::ShapeMismatch {
            op: "classical_update",
            lhs: vec![w.n, w.n],
            rhs: vec![state.len()],
        });
    }
    let mut next = state.clone();
    for i in 0..w.n {
        let h = field(w, state.spins(), i);
        if h > 0.0 {
            next.spins[i] = 1;
        } else if h < 0.0 {
            next.spins[i] = -1;
        }
    }
    Ok(next)
}

/// Sweep ascending site order until a full sweep changes nothing or
/// `max_sweeps` is hit. Returns the final state, sweeps executed, and the
/// energy after the initial state and after each sweep.
pub fn recall(
    w: &HebbianWeights,
    probe: &BipolarState,
    max_sweeps: usize,
) -> Result<(BipolarState, usize, Vec<f64>)> {
    if max_sweeps == 0 {
        return Err(Error::InvalidParameter(
            "recall needs max_sweeps >= 1".to_string(),
        ));
    }
    let order: Vec<usize> = (0..w.n).collect();
    let mut current = probe.clone();
    let mut trajectory = vec![energy(w, &current)?];
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        let next = update_async(w, &current, &order)?;
        sweeps += 1;
        trajectory.push(energy(w, &next)?);
        let converged = next == current;
        current = next;
        if converged {
            break;
        }
    }
    Ok((current, sweeps, trajectory))
}
