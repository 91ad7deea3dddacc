//! Dense associative memories over ±1 states.
//!
//! The energy applies an interaction function F to every pattern-state
//! overlap, E = -sum_mu F(xi_mu . sigma). Sharper F (higher polynomial
//! degree, exponential) packs more retrievable patterns into the same N,
//! which capacity_experiment measures empirically.

use crate::classical::{BipolarState, PatternStore};
use crate::error::{Error, Result};
use crate::numerics::stream;
use rand::Rng;
use std::fmt;
use std::str::FromStr;

// ── Configuration ──

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interaction {
    Polynomial(u32),
    Exponential,
}

impl fmt::Display for Interaction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Interaction::Polynomial(n) => write!(f, "poly{n}"),
            Interaction::Exponential => write!(f, "exp"),
        }
    }
}

impl FromStr for Interaction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "exp" {
            return Ok(Interaction::Exponential);
        }
        if let Some(digits) = s.strip_prefix("poly") {
            if let Ok(n) = digits.parse::<u32>() {
                if n >= 2 {
                    return Ok(Interaction::Polynomial(n));
                }
            }
        }
        Err(Error::InvalidParameter(format!(
            "unknown interaction '{s}'; expected poly<n> with n >= 2, or exp"
        )))
    }
}

#[derive(Debug, Clone)]
pub struct DamConfig {
    pub interaction: Interaction,
    pub patterns: PatternStore,
}

impl DamConfig {
    pub fn new(interaction: Interaction, patterns: PatternStore) -> Result<Self> {
        if let Interaction::Polynomial(n) = interaction {
            if n < 2 {
                return Err(Error::InvalidParameter(format!(
                    "polynomial interaction needs n >= 2, got {n}"
                )));
            }
        }
        Ok(DamConfig {
            interaction,
            patterns,
        })
    }
}

// ── Energy ──

fn overlaps(patterns: &PatternStore, state: &BipolarState) -> Vec<f64> {
    let n = patterns.n();
    let s = state.spins();
    (0..patterns.k())
        .map(|mu| {
            let row = patterns.row(mu);
            let mut o = 0i64;
            for j in 0..n {
                o += (row[j] * s[j]) as i64;
            }
            o as f64
        })
        .collect()
}

fn energy_from_overlaps(interaction: Interaction, o: &[f64]) -> Result<f64> {
    let e = match interaction {
        Interaction::Polynomial(n) => -o.iter().map(|&v| v.powi(n as i32)).sum::<f64>(),
        Interaction::Exponential => {
            // -sum_mu e^{o_mu}, evaluated with the max overlap factored out
            let m = o.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = o.iter().map(|&v| (v - m).exp()).sum();
            -(m + sum.ln()).exp()
        }
    };
    if !e.is_finite() {
        return Err(Error::NonFinite { op: "energy_dam" });
    }
    Ok(e)
}

pub fn energy_dam(cfg: &DamConfig, state: &BipolarState) -> Result<f64> {
    if state.len() != cfg.patterns.n() {
        return Err(Error::ShapeMismatch {
            op: "energy_dam",
            lhs: vec![cfg.patterns.k(), cfg.patterns.n()],
            rhs: vec![state.len()],
        });
    }
    energy_from_overlaps(cfg.interaction, &overlaps(&cfg.patterns, state))
}

// ── Dynamics ──

/// Sign statistic for clamping site i to +1 vs -1: the difference of the
/// two clamped-site energies, sum_mu F(xi_i + s_mu) - F(-xi_i + s_mu) with
/// s_mu the overlap excluding site i.
///
/// Polynomial overlaps are small integers, so the difference is evaluated
/// literally and is exact. For the exponential the common factor e^{s_max}
/// is removed before summing; the removed factor and the residual constant
/// (e - 1/e) are positive, so the sign is unchanged and never overflows.
fn site_statistic(
    interaction: Interaction,
    patterns: &PatternStore,
    full_overlaps: &[f64],
    spins: &[i8],
    i: usize,
) -> f64 {
    match interaction {
        Interaction::Polynomial(n) => {
            let p = n as i32;
            let mut stat = 0.0;
            for (mu, &o) in full_overlaps.iter().enumerate() {
                let xi = patterns.row(mu)[i] as f64;
                let s = o - xi * spins[i] as f64;
                stat += (xi + s).powi(p) - (-xi + s).powi(p);
            }
            stat
        }
        Interaction::Exponential => {
            let mut s_max = f64::NEG_INFINITY;
            for (mu, &o) in full_overlaps.iter().enumerate() {
                let xi = patterns.row(mu)[i] as f64;
                s_max = s_max.max(o - xi * spins[i] as f64);
            }
            let mut stat = 0.0;
            for (mu, &o) in full_overlaps.iter().enumerate() {
                let xi = patterns.row(mu)[i] as f64;
                let s = o - xi * spins[i] as f64;
                stat += xi * (s - s_max).exp();
            }
            stat
        }
    }
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

fn run_update(
    cfg: &DamConfig,
    state: &BipolarState,
    order: &[usize],
    mut energies: Option<&mut Vec<f64>>,
) -> Result<BipolarState> {
    if state.len() != cfg.patterns.n() {
        return Err(Error::ShapeMismatch {
            op: "update_dam",
            lhs: vec![cfg.patterns.k(), cfg.patterns.n()],
            rhs: vec![state.len()],
        });
    }
    check_order(order, cfg.patterns.n())?;
    let mut current = state.clone();
    let mut o = overlaps(&cfg.patterns, &current);
    for &i in order {
        let stat = site_statistic(cfg.interaction, &cfg.patterns, &o, current.spins(), i);
        let target = if stat > 0.0 {
            1
        } else if stat < 0.0 {
            -1
        } else {
            current.spins()[i]
        };
        if target != current.spins()[i] {
            for (mu, ov) in o.iter_mut().enumerate() {
                // spin flips by 2*target at this site
                *ov += 2.0 * (patterns_entry(&cfg.patterns, mu, i) * target) as f64;
            }
            current.flip(i);
        }
        if let Some(track) = energies.as_deref_mut() {
            track.push(energy_from_overlaps(cfg.interaction, &o)?);
        }
    }
    Ok(current)
}

fn patterns_entry(patterns: &PatternStore, mu: usize, i: usize) -> i8 {
    patterns.row(mu)[i]
}

/// One asynchronous sweep of the sign-difference rule; sign ties keep the
/// current spin. Energy never increases along accepted flips.
pub fn update_dam(cfg: &DamConfig, state: &BipolarState, order: &[usize]) -> Result<BipolarState> {
    run_update(cfg, state, order, None)
}

/// As `update_dam`, also reporting the energy after every site visit.
pub fn update_dam_traced(
    cfg: &DamConfig,
    state: &BipolarState,
    order: &[usize],
) -> Result<(BipolarState, Vec<f64>)> {
    let mut energies = Vec::with_capacity(order.len());
    let out = run_update(cfg, state, order, Some(&mut energies))?;
    Ok((out, energies))
}

/// Ascending-order sweeps until a fixed point or `max_sweeps`.
pub fn recall_dam(
    cfg: &DamConfig,
    probe: &BipolarState,
    max_sweeps: usize,
) -> Result<(BipolarState, usize, Vec<f64>)> {
    if max_sweeps == 0 {
        return Err(Error::InvalidParameter(
            "recall needs max_sweeps >= 1".to_string(),
        ));
    }
    let order: Vec<usize> = (0..cfg.patterns.n()).collect();
    let mut current = probe.clone();
    let mut trajectory = vec![energy_dam(cfg, &current)?];
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        let next = update_dam(cfg, &current, &order)?;
        sweeps += 1;
        trajectory.push(energy_dam(cfg, &next)?);
        let converged = next == current;
        current = next;
        if converged {
            break;
        }
    }
    Ok((current, sweeps, trajectory))
}

// ── Capacity measurement ──

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityRow {
    pub interaction: Interaction,
    pub n: usize,
    pub k: usize,
    pub corruption: f64,
    pub trials: usize,
    pub recovery_rate: f64,
}

pub const CAPACITY_CSV_HEADER: &str = "interaction,N,K,corruption,trials,recovery_rate";

pub fn capacity_csv(rows: &[CapacityRow]) -> String {
    let mut out = String::from(CAPACITY_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.interaction, r.n, r.k, r.corruption, r.trials, r.recovery_rate
        ));
    }
    out
}

/// Fraction of exact recoveries from probes with round(corruption*N)
/// flipped sites, per K in the grid. Each trial derives its own RNG stream
/// from the master seed, so results do not depend on evaluation order.
pub fn capacity_experiment(
    interaction: Interaction,
    n: usize,
    k_grid: &[usize],
    corruption: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<CapacityRow>> {
    if n == 0 || n > 256 {
        return Err(Error::InvalidParameter(format!(
            "capacity experiment needs 1 <= N <= 256, got {n}"
        )));
    }
    if trials < 50 {
        return Err(Error::InvalidParameter(format!(
            "capacity experiment needs >= 50 trials, got {trials}"
        )));
    }
    if !(0.0..=1.0).contains(&corruption) {
        return Err(Error::InvalidParameter(format!(
            "corruption must lie in [0, 1], got {corruption}"
        )));
    }
    if k_grid.is_empty() || k_grid.iter().any(|&k| k == 0) {
        return Err(Error::InvalidParameter(
            "K grid must be non-empty with K >= 1".to_string(),
        ));
    }
    let flips = (corruption * n as f64).round() as usize;
    let mut rows = Vec::with_capacity(k_grid.len());
    for &k in k_grid {
        let tag = format!("capacity.{interaction}.k{k}");
        let mut hits = 0usize;
        for trial in 0..trials {
            let mut rng = stream(seed, &tag, trial as u64);
            let patterns = PatternStore::random(k, n, &mut rng)?;
            let target_idx = rng.gen_range(0..k);
            let cfg = DamConfig::new(interaction, patterns)?;
            let target = cfg.patterns.row_state(target_idx);
            let probe = target.corrupted(flips, &mut rng);
            let (recalled, _, _) = recall_dam(&cfg, &probe, 32)?;
            if recalled == target {
                hits += 1;
            }
        }
        rows.push(CapacityRow {
            interaction,
            n,
            k,
            corruption,
            trials,
            recovery_rate: hits as f64 / trials as f64,
        });
    }
    Ok(rows)
}

/// Largest K in the rows with recovery_rate >= threshold, if any.
pub fn max_k_at_threshold(rows: &[CapacityRow], threshold: f64) -> Option<usize> {
    rows.iter()
        .filter(|r| r.recovery_rate >= threshold)
        .map(|r| r.k)
        .max()
}
