use std::path::Path;
use std::process::{Command, Output};

use proca_lattice_cli::{Experiment, RunConfig};

const BIN: &str = env!("CARGO_BIN_EXE_proca-lattice");

const PROCA: &str = r#"
seed = 11
[group]
family = "u1"
[lattice]
dim = 2
side = 3
[model]
beta = 2.0
mass = 1.0
[proca]
samples = 4
"#;

const SCALING: &str = r#"
[group]
family = "u1"
[lattice]
dim = 2
side = 3
[model]
beta = 1.0
mass = 1.0
[form]
family = "bump"
radius = 1.0
[scaling]
epsilons = [0.5, 0.25, 0.125]
"#;

fn run(dir: &Path, sub: &str, config: &str, extra: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    Command::new(BIN)
        .arg(sub)
        .arg("--config")
        .arg(&cfg)
        .args(extra)
        .env_remove("PROCA_LATTICE_THREADS")
        .output()
        .expect("binary runs")
}

fn data_rows(csv: &str) -> Vec<&str> {
    csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect()
}

#[test]
fn sequential_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = run(dir.path(), "sample-proca", PROCA, &["--threads", "1", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(out);
    }
    for file in ["proca_samples.csv", "proca_snapshot.json", "summary.json"] {
        let a = std::fs::read(outputs[0].join(file)).unwrap();
        let b = std::fs::read(outputs[1].join(file)).unwrap();
        // `out` differs, so compare everything after the recorded config.
        let strip = |bytes: &[u8]| {
            let s = String::from_utf8(bytes.to_vec()).unwrap();
            s.replace(outputs[0].to_str().unwrap(), "OUT").replace(outputs[1].to_str().unwrap(), "OUT")
        };
        assert_eq!(strip(&a), strip(&b), "{file} differs between reruns");
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one");
    let four = dir.path().join("four");
    for (out, t) in [(&one, "1"), (&four, "4")] {
        let o = run(dir.path(), "sample-proca", PROCA, &["--threads", t, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read_to_string(one.join("proca_samples.csv")).unwrap();
    let b = std::fs::read_to_string(four.join("proca_samples.csv")).unwrap();
    assert_eq!(data_rows(&a), data_rows(&b));
}

#[test]
fn zero_mass_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let bad = PROCA.replace("mass = 1.0", "mass = 0.0");
    let o = run(dir.path(), "sample-proca", &bad, &["--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("mass"), "{err}");
    assert!(!dir.path().join("o").exists(), "nothing is written for an invalid config");
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = format!("{PROCA}\nbogus = 1\n");
    let o = run(dir.path(), "sample-proca", &bad, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
}

#[test]
fn scaling_writes_one_row_per_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = run(dir.path(), "scaling", SCALING, &["--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("scaling.csv")).unwrap();
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 3);
    for (row, eps) in rows.iter().zip(["0.5", "0.25", "0.125"]) {
        assert!(row.starts_with(&format!("{eps},")), "{row}");
    }
    assert!(csv.lines().next().unwrap().starts_with("# proca-lattice "));
    let schema: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("schema.json")).unwrap()).unwrap();
    assert_eq!(schema["result"][0]["file"], "scaling.csv");
}

#[test]
fn recorded_config_reparses_to_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = run(dir.path(), "sample-proca", PROCA, &["--seed", "99", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let mut want = RunConfig::parse(PROCA).unwrap();
    want.seed = 99;
    want.out = out.clone();
    let want = want.resolve(Experiment::SampleProca).unwrap();

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let got: RunConfig = serde_json::from_value(summary["config"].clone()).unwrap();
    assert_eq!(got, want);
    // The TOML rendering of the recorded config is itself a valid config.
    assert_eq!(RunConfig::parse(&got.to_toml()).unwrap(), want);
}

#[test]
fn missing_snapshot_input_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "lift", PROCA, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("input"));
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let cases = [
        ("sample-ymh", Experiment::SampleYmh),
        ("sample-proca", Experiment::SampleProca),
        ("lift", Experiment::Lift),
        ("pair", Experiment::Pair),
        ("compare-exact-tv", Experiment::Compare),
        ("compare-ks", Experiment::Compare),
        ("decay", Experiment::Decay),
        ("scaling", Experiment::Scaling),
        ("spectrum", Experiment::Spectrum),
    ];
    for (name, exp) in cases {
        let cfg = RunConfig::load(&dir.join(format!("{name}.toml"))).unwrap();
        cfg.resolve(exp).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
