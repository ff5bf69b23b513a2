use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use fedsim::cli::{
    cmd_compare, cmd_run, cmd_sweep, read_events, read_summary, recompute_summary, CliError, RunOptions,
};
use fedsim::metrics::ROUNDS_HEADER;
use fedsim::scenario::parse_scenario;
use fedsim::StrategyKind;
use tempfile::TempDir;

const SMALL: &str = r#"
name = "small"

[[hardware]]
name = "cpu"
capacity = 1.0
cold_penalty = 2.0
cost_rate = 0.00002

[[clients]]
count = 8
hardware = "cpu"
cardinality = [40, 120]
epochs = 1
batch_size = 10
dropout = 0.1
slow_factor = 0.3

[task]
dim = 3
spread = 0.5
lr_relative = 0.2

[strategy]
name = "fedavg"

[run]
clients_per_round = 4
max_rounds = 40
target_gap = 0.05
round_timeout = 100.0
seeds = [3]
"#;

fn small_scenario(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

fn seeds(s: &[u64]) -> RunOptions {
    RunOptions {
        seeds: Some(s.to_vec()),
        strategy: None,
    }
}

#[test]
fn run_creates_missing_output_dirs_and_all_artifacts() {
    let tmp = TempDir::new().unwrap();
    let scenario = small_scenario(tmp.path());
    let out = tmp.path().join("a/b/c");
    let runs = cmd_run(&scenario, &out, &RunOptions::default()).unwrap();
    assert_eq!(runs.len(), 1);
    let dir = out.join("seed-3");
    for f in ["events.jsonl", "rounds.csv", "summary.json", "scenario.toml"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let rounds = read(&dir.join("rounds.csv"));
    assert_eq!(rounds.lines().next(), Some(ROUNDS_HEADER));
    let doc = read_summary(&dir.join("summary.json")).unwrap();
    assert_eq!(doc.seed, 3);
    assert_eq!(doc.strategy, StrategyKind::FedAvg);
    assert_eq!(doc.summary.rounds as usize, rounds.lines().count() - 1);
    assert!(!read_events(&dir.join("events.jsonl")).unwrap().is_empty());
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let scenario = small_scenario(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    cmd_run(&scenario, &a, &seeds(&[1, 2])).unwrap();
    cmd_run(&scenario, &b, &seeds(&[1, 2])).unwrap();
    for seed in ["seed-1", "seed-2"] {
        for f in ["events.jsonl", "rounds.csv", "summary.json", "scenario.toml"] {
            assert_eq!(read(&a.join(seed).join(f)), read(&b.join(seed).join(f)), "{seed}/{f}");
        }
    }
}

#[test]
fn summary_recomputes_from_the_event_log() {
    let tmp = TempDir::new().unwrap();
    let scenario = small_scenario(tmp.path());
    let out = tmp.path().join("out");
    let options = RunOptions {
        seeds: Some(vec![5]),
        strategy: Some(StrategyKind::Apodotiko),
    };
    cmd_run(&scenario, &out, &options).unwrap();
    let dir = out.join("seed-5");
    let doc = read_summary(&dir.join("summary.json")).unwrap();
    assert_eq!(doc.strategy, StrategyKind::Apodotiko);
    assert_eq!(recompute_summary(&dir).unwrap(), doc.summary);
}

#[test]
fn written_scenario_reloads_to_the_same_run() {
    let tmp = TempDir::new().unwrap();
    let scenario = small_scenario(tmp.path());
    let first = tmp.path().join("first");
    cmd_run(&scenario, &first, &RunOptions::default()).unwrap();
    let reloaded = parse_scenario(&first.join("seed-3/scenario.toml")).unwrap();
    assert_eq!(reloaded, parse_scenario(&scenario).unwrap());
    let second = tmp.path().join("second");
    cmd_run(&first.join("seed-3/scenario.toml"), &second, &RunOptions::default()).unwrap();
    assert_eq!(
        read(&first.join("seed-3/events.jsonl")),
        read(&second.join("seed-3/events.jsonl"))
    );
}

#[test]
fn comparing_a_strategy_with_itself_gives_unit_speedup() {
    let tmp = TempDir::new().unwrap();
    let scenario = small_scenario(tmp.path());
    let out = tmp.path().join("cmp");
    let cmp = cmd_compare(&scenario, &[StrategyKind::FedAvg, StrategyKind::FedAvg], &out, &seeds(&[1, 2, 3])).unwrap();
    let lines: Vec<&str> = cmp.table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[1], lines[2]);
    assert!(lines[1].contains(",1.00x,"), "{}", lines[1]);
    assert_eq!(read(&out.join("compare.csv")), cmp.table);
}

#[test]
fn compare_writes_one_directory_per_strategy_and_seed() {
    let tmp = TempDir::new().unwrap();
    let scenario = small_scenario(tmp.path());
    let out = tmp.path().join("cmp");
    let strategies = [StrategyKind::FedAvg, StrategyKind::FedLesScan, StrategyKind::Apodotiko];
    let cmp = cmd_compare(&scenario, &strategies, &out, &seeds(&[1, 2, 3, 4, 5])).unwrap();
    assert_eq!(cmp.runs.len(), 15);
    let mut dirs = 0;
    for (i, s) in strategies.iter().enumerate() {
        for seed in 1..=5 {
            assert!(out.join(format!("{i}-{s}/seed-{seed}/summary.json")).is_file());
            dirs += 1;
        }
    }
    assert_eq!(dirs, 15);
    assert_eq!(cmp.table.lines().count(), 4);
}

#[test]
fn compare_needs_two_strategies() {
    let tmp = TempDir::new().unwrap();
    let scenario = small_scenario(tmp.path());
    let err = cmd_compare(&scenario, &[StrategyKind::FedAvg], tmp.path(), &RunOptions::default()).unwrap_err();
    assert!(matches!(err, CliError::InvalidArguments(_)));
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn sweep_over_one_value_and_unknown_parameters() {
    let tmp = TempDir::new().unwrap();
    let scenario = small_scenario(tmp.path());
    let out = tmp.path().join("sweep");
    let sweep = cmd_sweep(&scenario, "concurrency_ratio", &[0.5], &out, &seeds(&[1, 2])).unwrap();
    assert_eq!(sweep.rows.len(), 1);
    assert_eq!(sweep.table.lines().count(), 2);
    assert!(out.join("concurrency_ratio-0.5/seed-2/events.jsonl").is_file());
    assert!(out.join("sweep.csv").is_file());

    let err = cmd_sweep(&scenario, "learning_rate", &[0.1], &out, &RunOptions::default()).unwrap_err();
    assert!(matches!(err, CliError::UnknownParameter(_)));
    assert_eq!(err.exit_code(), 1);
    let err = cmd_sweep(&scenario, "clients_per_round", &[2.5], &out, &RunOptions::default()).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn bundled_names_resolve_when_no_file_exists() {
    let scenarios = parse_scenario(Path::new("straggler-30pct")).unwrap();
    assert_eq!(scenarios.len(), 10);
    assert_eq!(scenarios[0].strategy, StrategyKind::FedLesScan);
}

fn fedsim(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fedsim")).args(args).output().unwrap()
}

#[test]
fn binary_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let scenario = small_scenario(tmp.path());
    let scenario = scenario.to_str().unwrap();
    let out = tmp.path().join("bin");
    let out = out.to_str().unwrap();

    let ok = fedsim(&["run", "--scenario", scenario, "--out", out, "--seeds", "1,2", "--quiet"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(Path::new(out).join("seed-2/summary.json").is_file());

    let cmp = fedsim(&["compare", "--scenario", scenario, "--out", out, "--strategy", "fedavg,fedbuff"]);
    assert!(cmp.status.success());
    assert!(String::from_utf8_lossy(&cmp.stdout).starts_with("strategy,"));

    let bad_toml = tmp.path().join("bad.toml");
    fs::write(&bad_toml, SMALL.replace("[task]", "[task]\nbogus = 1")).unwrap();
    let bad = fedsim(&["run", "--scenario", bad_toml.to_str().unwrap(), "--out", out]);
    assert_eq!(bad.status.code(), Some(1));

    let k_too_big = tmp.path().join("k.toml");
    fs::write(&k_too_big, SMALL.replace("clients_per_round = 4", "clients_per_round = 9")).unwrap();
    assert_eq!(fedsim(&["run", "--scenario", k_too_big.to_str().unwrap(), "--out", out]).status.code(), Some(1));

    let unknown = fedsim(&["sweep", "--scenario", scenario, "--out", out, "--param", "nope", "--values", "1"]);
    assert_eq!(unknown.status.code(), Some(1));

    assert_eq!(fedsim(&["run", "--out", out]).status.code(), Some(1));
    assert_eq!(fedsim(&["--help"]).status.code(), Some(0));

    let blocked = tmp.path().join("file");
    fs::write(&blocked, "").unwrap();
    let io = fedsim(&["run", "--scenario", scenario, "--out", blocked.to_str().unwrap()]);
    assert_eq!(io.status.code(), Some(2));
}

#[test]
fn artifacts_round_trip_exactly_for_bundled_scenarios() {
    use fedsim::cli::write_artifacts;
    use fedsim::scenario::{bundled, BUNDLED};
    let tmp = TempDir::new().unwrap();
    for (name, _) in BUNDLED {
        let base = bundled(name).unwrap().remove(0);
        for strategy in StrategyKind::ALL {
            let s = base.with_strategy(strategy);
            let result = fedsim::simulate(&s).unwrap();
            let dir = tmp.path().join(format!("{name}-{strategy}"));
            write_artifacts(&result, &dir).unwrap();
            assert_eq!(read_events(&dir.join("events.jsonl")).unwrap(), result.events, "{name}/{strategy}");
            let doc = read_summary(&dir.join("summary.json")).unwrap();
            assert_eq!(doc.context, result.context);
            assert_eq!(doc.scenario, s);
            assert_eq!(recompute_summary(&dir).unwrap(), result.summary, "{name}/{strategy}");
            assert_eq!(parse_scenario(&dir.join("scenario.toml")).unwrap(), vec![s]);
        }
    }
}
