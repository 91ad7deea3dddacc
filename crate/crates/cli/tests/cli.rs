//! End-to-end runs of the compiled binary: flag handling, config files,
//! exit codes, and output determinism.

use std::path::PathBuf;
use std::process::Command;

fn dam() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dam"))
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = dam().args(args).output().expect("binary runs");
    (
        out.status.code().expect("exit code"),
        String::from_utf8(out.stdout).expect("utf8 stdout"),
        String::from_utf8(out.stderr).expect("utf8 stderr"),
    )
}

fn tmp(name: &str) -> PathBuf {
    std::env::temp_dir().join(format!("dam-cli-test-{}-{name}", std::process::id()))
}

#[test]
fn capacity_trivial_row_is_perfect_recovery() {
    let (code, stdout, _) = run(&[
        "capacity",
        "--interaction",
        "poly2",
        "--n",
        "64",
        "--k",
        "1",
        "--trials",
        "50",
        "--corruption",
        "0",
    ]);
    assert_eq!(code, 0);
    let mut lines = stdout.lines();
    assert_eq!(
        lines.next().unwrap(),
        "interaction,N,K,corruption,trials,recovery_rate"
    );
    assert_eq!(lines.next().unwrap(), "poly2,64,1,0,50,1");
}

#[test]
fn capacity_exponential_beats_cubic_at_equal_load() {
    let rate = |interaction: &str| -> f64 {
        let (code, stdout, _) = run(&[
            "capacity",
            "--interaction",
            interaction,
            "--n",
            "16",
            "--k",
            "40",
            "--trials",
            "100",
            "--corruption",
            "0.1",
            "--seed",
            "5",
        ]);
        assert_eq!(code, 0);
        stdout
            .lines()
            .nth(1)
            .unwrap()
            .rsplit(',')
            .next()
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!(rate("exp") >= rate("poly3"));
}

#[test]
fn capacity_missing_n_is_a_usage_error() {
    let (code, _, stderr) = run(&["capacity", "--interaction", "poly2", "--k", "1"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("--n"), "{stderr}");
}

#[test]
fn capacity_bad_interaction_is_a_usage_error() {
    let (code, _, _) = run(&[
        "capacity",
        "--interaction",
        "poly1",
        "--n",
        "8",
        "--k",
        "1",
    ]);
    assert_eq!(code, 2);
}

#[test]
fn gradcheck_targets_pass_and_unknowns_list_the_registry() {
    for target in ["dam_forward", "energy_continuous", "seg_loss"] {
        let (code, stdout, _) = run(&["gradcheck", "--target", target, "--seed", "7"]);
        assert_eq!(code, 0, "{target}");
        assert!(stdout.contains("max rel err"), "{stdout}");
        assert!(stdout.contains("PASS"), "{stdout}");
    }
    let (code, _, stderr) = run(&["gradcheck", "--target", "nope"]);
    assert_eq!(code, 2);
    for target in ["dam_forward", "energy_continuous", "seg_loss"] {
        assert!(stderr.contains(target), "{stderr}");
    }
}

#[test]
fn train_smoke_run_exits_cleanly() {
    let (code, stdout, stderr) = run(&["train", "--epochs", "1", "--samples", "8"]);
    assert_eq!(code, 0, "{stderr}");
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(
        lines[0],
        "epoch,lr,train_loss,val_mean_dice,val_dice_c1,val_dice_c2,val_dice_c3"
    );
    assert_eq!(lines.len(), 2);
}

#[test]
fn train_writes_a_loadable_checkpoint() {
    let ckpt = tmp("train.ckpt");
    let (code, _, stderr) = run(&[
        "train",
        "--epochs",
        "1",
        "--samples",
        "8",
        "--embed-dim",
        "16",
        "--heads",
        "2",
        "--blocks",
        "1",
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{stderr}");
    let (cfg, params) = dam_core::seg::load_checkpoint(&ckpt).unwrap();
    assert_eq!(cfg.embed_dim, 16);
    assert!(params.numel() > 0);
    std::fs::remove_file(ckpt).ok();
}

#[test]
fn identical_invocations_give_byte_identical_output() {
    let args = [
        "train",
        "--epochs",
        "2",
        "--samples",
        "10",
        "--embed-dim",
        "16",
        "--heads",
        "2",
        "--blocks",
        "1",
        "--seed",
        "13",
    ];
    let (c1, out1, _) = run(&args);
    let (c2, out2, _) = run(&args);
    assert_eq!(c1, 0);
    assert_eq!(c2, 0);
    assert_eq!(out1, out2);
    assert!(!out1.is_empty());
}

#[test]
fn ablate_emits_a_row_per_variant_seed_and_level() {
    let (code, stdout, stderr) = run(&[
        "ablate",
        "--occlusion",
        "0.4",
        "--seeds",
        "3",
        "--samples",
        "8",
        "--epochs",
        "1",
        "--embed-dim",
        "16",
        "--heads",
        "2",
        "--blocks",
        "1",
    ]);
    assert_eq!(code, 0, "{stderr}");
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(
        lines[0],
        "occlusion,seed,use_memory,dice_c1,dice_c2,dice_c3,mean_dice"
    );
    assert_eq!(lines.len(), 1 + 6);
}

#[test]
fn census_counts_attractors() {
    let (code, stdout, _) = run(&["census", "--beta", "0.0001"]);
    assert_eq!(code, 0);
    assert_eq!(stdout.lines().count(), 2, "{stdout}");

    let (code, stdout, _) = run(&[
        "census",
        "--beta",
        "32",
        "--patterns",
        "well_separated_3",
    ]);
    assert_eq!(code, 0);
    assert_eq!(stdout.lines().count(), 4, "{stdout}");
    assert_eq!(stdout.lines().next().unwrap(), "attractor_id,basin_count,norm");
}

#[test]
fn census_reads_pattern_files_and_reports_bad_lines() {
    let good = tmp("patterns-good.txt");
    std::fs::write(&good, "# two separated patterns\n5 0 0 0\n0 0 5 0\n").unwrap();
    let (code, stdout, _) = run(&[
        "census",
        "--beta",
        "16",
        "--patterns",
        good.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert_eq!(stdout.lines().count(), 3, "{stdout}");
    std::fs::remove_file(good).ok();

    let bad = tmp("patterns-bad.txt");
    std::fs::write(&bad, "1 2 3\n4 five 6\n").unwrap();
    let (code, _, stderr) = run(&[
        "census",
        "--beta",
        "16",
        "--patterns",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    assert!(stderr.contains("line 2"), "{stderr}");
    std::fs::remove_file(bad).ok();

    let ragged = tmp("patterns-ragged.txt");
    std::fs::write(&ragged, "1 2 3\n4 5\n").unwrap();
    let (code, _, stderr) = run(&[
        "census",
        "--beta",
        "16",
        "--patterns",
        ragged.to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    assert!(stderr.contains("line 2"), "{stderr}");
    std::fs::remove_file(ragged).ok();
}

#[test]
fn config_file_fills_gaps_and_flags_win() {
    let cfg = tmp("capacity.conf");
    std::fs::write(
        &cfg,
        "interaction = poly2\nn = 64\nk = 1\ntrials = 50\ncorruption = 0\n",
    )
    .unwrap();
    let (code, from_file, _) = run(&["capacity", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(from_file.contains("poly2,64,1,0,50,1"), "{from_file}");

    // flag overrides the file's n
    let (code, overridden, _) = run(&[
        "capacity",
        "--config",
        cfg.to_str().unwrap(),
        "--n",
        "32",
    ]);
    assert_eq!(code, 0);
    assert!(overridden.contains("poly2,32,1,0,50,1"), "{overridden}");
    std::fs::remove_file(cfg).ok();

    let bad = tmp("capacity-bad.conf");
    std::fs::write(&bad, "bogus_key = 3\n").unwrap();
    let (code, _, stderr) = run(&["capacity", "--config", bad.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(stderr.contains("line 1"), "{stderr}");
    std::fs::remove_file(bad).ok();
}

#[test]
fn seed_comes_from_env_when_flags_are_silent() {
    let with_env = dam()
        .args(["census", "--beta", "32"])
        .env("DAM_SEED", "123")
        .output()
        .unwrap();
    let with_flag = dam()
        .args(["census", "--beta", "32", "--seed", "123"])
        .output()
        .unwrap();
    assert_eq!(with_env.stdout, with_flag.stdout);

    let bad_env = dam()
        .args(["census", "--beta", "32"])
        .env("DAM_SEED", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(bad_env.status.code(), Some(2));
}

#[test]
fn out_flag_writes_the_same_bytes_as_stdout() {
    let path = tmp("capacity.csv");
    let args = [
        "capacity",
        "--interaction",
        "exp",
        "--n",
        "16",
        "--k",
        "1,2",
        "--trials",
        "50",
        "--seed",
        "3",
    ];
    let (code, stdout, _) = run(&args);
    assert_eq!(code, 0);
    let mut with_out: Vec<&str> = args.to_vec();
    with_out.extend(["--out", path.to_str().unwrap()]);
    let (code, piped, _) = run(&with_out);
    assert_eq!(code, 0);
    assert!(piped.is_empty());
    assert_eq!(std::fs::read_to_string(&path).unwrap(), stdout);
    std::fs::remove_file(path).ok();
}
