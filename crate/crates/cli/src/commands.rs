//! Command implementations. Each resolves its parameters (flag > config
//! file > default), validates through the library's own preconditions, and
//! emits CSV or a short report.

use crate::config::{
    parse_list, resolve, resolve_required, resolve_seed, CliError, FileConfig,
};
use crate::{
    AblateArgs, CapacityArgs, CensusArgs, GradcheckArgs, TrainArgs, TrainingFlags,
};
use dam_core::dam::dam_forward_tape;
use dam_core::dense::{capacity_csv, capacity_experiment, Interaction};
use dam_core::modern::{
    census_csv, default_merge_tol, energy_continuous_grad, metastable_census, ContinuousStore,
    QueryState,
};
use dam_core::numerics::{grad_check, stream, Tape, Tensor};
use dam_core::seg::{
    ablate, generate_dataset, save_checkpoint, seg_loss, seg_loss_and_grads, train, SegConfig,
    SegParams, SyntheticSample, TrainConfig,
};
use rand::Rng;
use rand_distr::StandardNormal;
use std::path::{Path, PathBuf};

fn emit(out: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, content)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

// ── capacity ──

const CAPACITY_KEYS: &[&str] = &["interaction", "n", "k", "trials", "corruption", "seed"];

pub fn cmd_capacity(args: CapacityArgs) -> Result<(), CliError> {
    let file = match &args.config {
        Some(p) => FileConfig::load(p, CAPACITY_KEYS)?,
        None => FileConfig::empty(),
    };
    let interaction: String = resolve_required(args.interaction, &file, "interaction")?;
    let interaction: Interaction = interaction.parse()?;
    let n: usize = resolve_required(args.n, &file, "n")?;
    let k_raw: String = resolve_required(args.k, &file, "k")?;
    let k_grid = parse_list::<usize>(&k_raw, "--k")?;
    let trials: usize = resolve(args.trials, &file, "trials", 200)?;
    let corruption: f64 = resolve(args.corruption, &file, "corruption", 0.1)?;
    let seed = resolve_seed(args.seed, &file)?;

    let rows = capacity_experiment(interaction, n, &k_grid, corruption, trials, seed)?;
    emit(&args.out, &capacity_csv(&rows))
}

// ── gradcheck ──

const GRADCHECK_KEYS: &[&str] = &["target", "seed"];
pub const GRADCHECK_TARGETS: &[&str] = &["dam_forward", "energy_continuous", "seg_loss"];

pub fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), CliError> {
    let file = match &args.config {
        Some(p) => FileConfig::load(p, GRADCHECK_KEYS)?,
        None => FileConfig::empty(),
    };
    let target: String = resolve_required(args.target, &file, "target")?;
    let seed = resolve_seed(args.seed, &file)?;

    let (err, tol) = match target.as_str() {
        "dam_forward" => (gradcheck_dam_forward(seed)?, 1e-5),
        "energy_continuous" => (gradcheck_energy_continuous(seed)?, 1e-5),
        "seg_loss" => (gradcheck_seg_loss(seed)?, 1e-4),
        other => {
            return Err(CliError::Usage(format!(
                "unknown gradcheck target `{other}`; registered targets: {}",
                GRADCHECK_TARGETS.join(", ")
            )))
        }
    };
    let ok = err < tol;
    let report = format!(
        "gradcheck {target}: max rel err {err:.3e} (tolerance {tol:.0e}) {}\n",
        if ok { "PASS" } else { "FAIL" }
    );
    emit(&args.out, &report)?;
    if ok {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "gradcheck {target}: {err:.3e} exceeds {tol:.0e}"
        )))
    }
}

fn gradcheck_dam_forward(seed: u64) -> Result<f64, CliError> {
    let (m, d, t) = (4usize, 8usize, 3usize);
    let mut worst = 0.0f64;
    for instance in 0..5u64 {
        let mut rng = stream(seed, "gradcheck.dam_forward", instance);
        let x0: Vec<f64> = (0..m * d + d * d + t * d)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * 0.5)
            .collect();
        let err = grad_check(
            |x| {
                let mut tape = Tape::new();
                let xi = tape.leaf(Tensor::new(vec![m, d], x[..m * d].to_vec())?.with_grad())?;
                let wk = tape.leaf(
                    Tensor::new(vec![d, d], x[m * d..m * d + d * d].to_vec())?.with_grad(),
                )?;
                let q = tape.leaf(
                    Tensor::new(vec![t, d], x[m * d + d * d..].to_vec())?.with_grad(),
                )?;
                let z = dam_forward_tape(&mut tape, xi, wk, q)?;
                let s = tape.sum_all(z)?;
                tape.backward(s)?;
                let mut g = tape.grad(xi).expect("leaf grad").clone();
                g.extend_from_slice(tape.grad(wk).expect("leaf grad"));
                g.extend_from_slice(tape.grad(q).expect("leaf grad"));
                Ok((tape.scalar_value(s), g))
            },
            &x0,
            1e-6,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn gradcheck_energy_continuous(seed: u64) -> Result<f64, CliError> {
    let (d, n) = (6usize, 4usize);
    let mut worst = 0.0f64;
    for instance in 0..5u64 {
        let mut rng = stream(seed, "gradcheck.energy", instance);
        let patterns: Vec<f64> = (0..d * n).map(|_| rng.sample(StandardNormal)).collect();
        let store = ContinuousStore::new(Tensor::new(vec![d, n], patterns)?, None)?;
        let x0: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let err = grad_check(
            |x| {
                let q = QueryState::new(x.to_vec())?;
                energy_continuous_grad(&store, &q)
            },
            &x0,
            1e-6,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn gradcheck_seg_loss(seed: u64) -> Result<f64, CliError> {
    let cfg = SegConfig {
        embed_dim: 16,
        blocks: 2,
        heads: 2,
        memory_slots: 4,
        ..SegConfig::default()
    };
    let mut params = SegParams::init(&cfg, seed)?;
    let sample: SyntheticSample = generate_dataset(1, 0.3, seed)?.remove(0);
    let (_, grads) = seg_loss_and_grads(&cfg, &params, &[&sample])?;

    let mut rng = stream(seed, "gradcheck.seg_loss", 0);
    let eps = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..32 {
        let entry = rng.gen_range(0..params.entries().len());
        let len = params.entries()[entry].1.numel();
        let elem = rng.gen_range(0..len);
        let name = params.entries()[entry].0.clone();
        let orig = params.entries()[entry].1.data[elem];
        let bump = |params: &mut SegParams, v: f64| {
            params.tensor_mut(&name).expect("known name").data[elem] = v;
        };
        bump(&mut params, orig + eps);
        let up = seg_loss(&cfg, &params, &sample)?;
        bump(&mut params, orig - eps);
        let down = seg_loss(&cfg, &params, &sample)?;
        bump(&mut params, orig);
        let fd = (up - down) / (2.0 * eps);
        let rel = (grads[entry][elem] - fd).abs() / fd.abs().max(1.0);
        worst = worst.max(rel);
    }
    Ok(worst)
}

// ── train / ablate ──

const MODEL_KEYS: &[&str] = &[
    "samples",
    "occlusion",
    "embed_dim",
    "blocks",
    "heads",
    "memory_slots",
    "use_memory",
    "lr",
    "warmup_lr",
    "min_lr",
    "batch",
    "warmup_epochs",
    "epochs",
    "patience",
    "seed",
    "seeds",
];

struct ResolvedTrain {
    seg: SegConfig,
    train: TrainConfig,
    samples: usize,
    seed: u64,
}

fn resolve_training(
    file: &FileConfig,
    args: &TrainingFlags,
) -> Result<ResolvedTrain, CliError> {
    let seg_default = SegConfig::default();
    let train_default = TrainConfig::default();
    let use_memory = if args.no_memory {
        false
    } else {
        resolve(None::<bool>, file, "use_memory", true)?
    };
    let seg = SegConfig {
        image_size: seg_default.image_size,
        patch_size: seg_default.patch_size,
        embed_dim: resolve(args.embed_dim, file, "embed_dim", seg_default.embed_dim)?,
        blocks: resolve(args.blocks, file, "blocks", seg_default.blocks)?,
        heads: resolve(args.heads, file, "heads", seg_default.heads)?,
        classes: seg_default.classes,
        memory_slots: resolve(
            args.memory_slots,
            file,
            "memory_slots",
            seg_default.memory_slots,
        )?,
        use_memory,
    };
    let train = TrainConfig {
        lr: resolve(args.lr, file, "lr", train_default.lr)?,
        warmup_lr: resolve(args.warmup_lr, file, "warmup_lr", train_default.warmup_lr)?,
        min_lr: resolve(args.min_lr, file, "min_lr", train_default.min_lr)?,
        batch: resolve(args.batch, file, "batch", train_default.batch)?,
        warmup_epochs: resolve(
            args.warmup_epochs,
            file,
            "warmup_epochs",
            train_default.warmup_epochs,
        )?,
        epochs: resolve(args.epochs, file, "epochs", train_default.epochs)?,
        patience: resolve(args.patience, file, "patience", train_default.patience)?,
        beta1: train_default.beta1,
        beta2: train_default.beta2,
    };
    // the schedule needs warmup and patience inside the horizon even when
    // only --epochs was shortened
    let train = TrainConfig {
        warmup_epochs: train.warmup_epochs.min(train.epochs),
        patience: train.patience.min(train.epochs),
        ..train
    };
    seg.validate()?;
    train.validate()?;
    Ok(ResolvedTrain {
        seg,
        train,
        samples: resolve(args.samples, file, "samples", 64)?,
        seed: resolve_seed(args.seed, file)?,
    })
}

pub fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let file = match &args.config {
        Some(p) => FileConfig::load(p, MODEL_KEYS)?,
        None => FileConfig::empty(),
    };
    let occlusion: f64 = resolve(args.occlusion, &file, "occlusion", 0.3)?;
    let r = resolve_training(&file, &args.flags)?;

    let dataset = generate_dataset(r.samples, occlusion, r.seed)?;
    let (params, record) = train(&r.seg, &r.train, &dataset, r.seed)?;
    if let Some(path) = &args.checkpoint {
        save_checkpoint(Path::new(path), &r.seg, &params)?;
    }
    emit(&args.out, &record.to_csv())
}

pub fn cmd_ablate(args: AblateArgs) -> Result<(), CliError> {
    let file = match &args.config {
        Some(p) => FileConfig::load(p, MODEL_KEYS)?,
        None => FileConfig::empty(),
    };
    let occlusion_raw: String = resolve(
        args.occlusion.clone(),
        &file,
        "occlusion",
        "0.0,0.4".to_string(),
    )?;
    let levels = parse_list::<f64>(&occlusion_raw, "--occlusion")?;
    let seed_count: usize = resolve(args.seeds, &file, "seeds", 3)?;
    let r = resolve_training(&file, &args.flags)?;
    let seeds: Vec<u64> = (0..seed_count as u64).map(|i| r.seed + i).collect();

    let csv = ablate(&r.seg, &r.train, r.samples, &levels, &seeds)?;
    emit(&args.out, &csv)
}

// ── census ──

const CENSUS_KEYS: &[&str] = &["beta", "patterns", "queries", "iters", "tol", "seed"];
pub const BUILTIN_PATTERNS: &str = "well_separated_3";

pub fn cmd_census(args: CensusArgs) -> Result<(), CliError> {
    let file = match &args.config {
        Some(p) => FileConfig::load(p, CENSUS_KEYS)?,
        None => FileConfig::empty(),
    };
    let beta: f64 = resolve_required(args.beta, &file, "beta")?;
    let patterns: String = resolve(
        args.patterns,
        &file,
        "patterns",
        BUILTIN_PATTERNS.to_string(),
    )?;
    let queries: usize = resolve(args.queries, &file, "queries", 64)?;
    let iters: usize = resolve(args.iters, &file, "iters", 50)?;
    let seed = resolve_seed(args.seed, &file)?;

    let matrix = if patterns == BUILTIN_PATTERNS {
        builtin_well_separated_3()
    } else {
        load_pattern_file(Path::new(&patterns))?
    };
    let store = ContinuousStore::new(matrix, Some(beta))?;
    let tol: f64 = resolve(args.tol, &file, "tol", default_merge_tol(&store))?;

    let d = store.d();
    let probes: Vec<QueryState> = (0..queries as u64)
        .map(|i| {
            let mut rng = stream(seed, "census.query", i);
            QueryState::new((0..d).map(|_| rng.sample(StandardNormal)).collect())
        })
        .collect::<Result<_, _>>()?;
    let entries = metastable_census(&store, &probes, iters, tol)?;
    emit(&args.out, &census_csv(&entries))
}

/// Three orthogonal patterns of norm 3 in an 8-dimensional space: far
/// enough apart that sharp retrieval keeps three attractors, while very
/// small beta collapses everything onto their mean.
fn builtin_well_separated_3() -> Tensor {
    let (d, n) = (8usize, 3usize);
    let mut data = vec![0.0; d * n];
    for (j, axis) in [0usize, 3, 6].iter().enumerate() {
        data[axis * n + j] = 3.0;
    }
    Tensor::new(vec![d, n], data).expect("static shape")
}

/// One pattern per line, whitespace- or comma-separated floats; every line
/// must have the same width.
fn load_pattern_file(path: &Path) -> Result<Tensor, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read patterns {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut row = Vec::new();
        for token in line.split(|c: char| c == ',' || c.is_whitespace()) {
            if token.is_empty() {
                continue;
            }
            let v: f64 = token.parse().map_err(|_| {
                CliError::Usage(format!(
                    "pattern file line {}: cannot parse `{token}` as a number",
                    idx + 1
                ))
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(CliError::Usage(format!(
                    "pattern file line {}: {} values, expected {}",
                    idx + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(CliError::Usage(
            "pattern file contains no patterns".to_string(),
        ));
    }
    let (n, d) = (rows.len(), rows[0].len());
    let mut data = vec![0.0; d * n];
    for (j, row) in rows.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            data[i * n + j] = v;
        }
    }
    Tensor::new(vec![d, n], data).map_err(CliError::from)
}
