use std::path::Path;
use std::process::Command;

fn hybridcast(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_hybridcast"))
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Synthetic prices plus the generated config, 80 days.
fn fixture(root: &Path) -> String {
    let data = root.join("data");
    let (code, _, err) = hybridcast(&["synth", "--dir", data.to_str().unwrap(), "--days", "80", "--seed", "4"]);
    assert_eq!(code, 0, "{err}");
    data.join("synth.toml").display().to_string()
}

const SMALL: [&str; 8] = [
    "--set",
    "plan.base_train_days=70",
    "--set",
    "plan.test_days=3",
    "--set",
    "model.train.epochs=10",
    "--set",
    "model.train.lookback=5",
];

#[test]
fn ingest_and_graph_write_their_tables() {
    let root = tempfile::tempdir().unwrap();
    let cfg = fixture(root.path());
    let out = root.path().join("ingest");
    let (code, _, err) = hybridcast(&["ingest", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let summary = read(&out, "panel_summary.csv");
    assert_eq!(summary.lines().count(), 11);
    let ma = read(&out, "ma_prices.csv");
    assert!(ma.starts_with("date,ticker,norm_close,ma50,ma200\n"));
    // 80 days: ma200 never defined
    assert!(ma.lines().skip(1).all(|l| l.ends_with(',')));
    assert!(read(&out, "manifest.toml").contains("command = \"ingest\""));

    let out = root.path().join("graph");
    let (code, _, err) = hybridcast(&["graph", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let edges = read(&out, "graph_edges.csv");
    assert!(edges.lines().count() > 1);
    for line in edges.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert!(f[0] < f[1], "{line}");
    }
    let rules = read(&out, "assoc_rules.csv");
    assert!(rules.starts_with("antecedent,consequent,support,confidence,lift\n"));
    for line in rules.lines().skip(1) {
        let lift: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(lift > 1.7);
    }

    let out = root.path().join("strict");
    let (code, _, err) = hybridcast(&[
        "graph", "--config", &cfg, "--out", out.to_str().unwrap(),
        "--set", "graph.corr_threshold=0.999", "--set", "graph.min_support=0.99",
    ]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(read(&out, "graph_edges.csv").lines().count(), 1);
}

#[test]
fn backtest_outputs_are_reproducible() {
    let root = tempfile::tempdir().unwrap();
    let cfg = fixture(root.path());
    let run = |dir: &Path| {
        let mut args = vec!["backtest", "--config", &cfg, "--out", dir.to_str().unwrap()];
        args.extend(SMALL);
        let (code, stdout, err) = hybridcast(&args);
        assert_eq!(code, 0, "{err}");
        stdout
    };
    let out = root.path().join("bt");
    let stdout = run(&out);
    assert!(stdout.contains("hybrid"));
    let per_day = read(&out, "per_day_mse.csv");
    assert!(per_day.starts_with("date,mse\n"));
    assert_eq!(per_day.lines().count(), 4);
    assert_eq!(read(&out, "model_comparison.csv").lines().count(), 6);
    assert_eq!(read(&out, "per_stock_mse.csv").lines().count(), 1 + 10 * 5);
    let before: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    run(&out);
    for (name, bytes) in before {
        assert_eq!(std::fs::read(out.join(&name)).unwrap(), bytes, "{name} changed");
    }
}

#[test]
fn manifest_reruns_the_experiment() {
    let root = tempfile::tempdir().unwrap();
    let cfg = fixture(root.path());
    let first = root.path().join("a");
    let mut args = vec!["backtest", "--config", &cfg, "--out", first.to_str().unwrap(), "--set", "compare=[\"linreg\", \"dense\"]"];
    args.extend(SMALL);
    assert_eq!(hybridcast(&args).0, 0);

    // the manifest's config table is a complete config file
    let manifest: toml::Table = read(&first, "manifest.toml").parse().unwrap();
    let config = toml::to_string(&manifest["config"]).unwrap();
    let replay = root.path().join("replay.toml");
    std::fs::write(&replay, config).unwrap();
    let second = root.path().join("b");
    let (code, _, err) = hybridcast(&["backtest", "--config", replay.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    for name in ["per_day_mse.csv", "per_stock_mse.csv", "model_comparison.csv"] {
        assert_eq!(read(&first, name), read(&second, name), "{name}");
    }
}

#[test]
fn failures_map_to_distinct_exit_codes_without_output() {
    let root = tempfile::tempdir().unwrap();
    let cfg = fixture(root.path());
    let out = root.path().join("never");
    let o = out.to_str().unwrap();

    let (code, _, err) = hybridcast(&["backtest", "--config", &cfg, "--out", o, "--set", "model.train.learning_rate=0"]);
    assert_eq!(code, 2);
    assert!(err.contains("model.train.learning_rate"), "{err}");

    let (code, _, err) = hybridcast(&["ingest", "--config", &cfg, "--out", o, "--set", "unknown_key=1"]);
    assert_eq!(code, 2, "{err}");

    let (code, _, err) = hybridcast(&["ingest", "--config", &cfg, "--out", o, "--set", "data.tickers=[\"A0\", \"MSFT\"]"]);
    assert_eq!(code, 3);
    assert!(err.contains("MSFT"), "{err}");

    // the default plan needs 554 days, the fixture has 80
    let (code, _, err) = hybridcast(&["backtest", "--config", &cfg, "--out", o]);
    assert_eq!(code, 3, "{err}");

    assert!(!out.exists());
}
