use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fdpb::config::{parse_str, ConfigFile};

const SMALL: &str = "[dataset]\nn_classes = 4\nsamples_per_class = 30\ntest_samples_per_class = 10\ndim = 6\n\
[partition]\nn_clients = 5\n[attack]\nkind = \"pcfdla\"\nfraction = 0.2\npeak = 3.0\n[run]\nrounds = 3\nseed = 4\n";

fn fdpb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdpb")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("out");
    let o = fdpb(&["run", s(&cfg), "--out", s(&out), "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());

    let headers = [
        ("summary.csv", "round,tol_avg_acc,vctm_avg_acc,misdirection_count", 3),
        ("per_client.csv", "round,client_id,role,accuracy", 15),
        ("pca.csv", "client_id,role,x,y", 5),
    ];
    for (name, header, rows) in headers {
        let text = fs::read_to_string(out.join(name)).unwrap();
        assert!(!text.contains('\r'));
        assert!(text.ends_with('\n'));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], header);
        assert_eq!(lines.len() - 1, rows, "{name}");
    }
    assert!(out.join("manifest.toml").exists());
    assert!(!out.join("knowledge.csv").exists());
    let pca = fs::read_to_string(out.join("pca.csv")).unwrap();
    assert!(pca.lines().nth(1).unwrap().starts_with("0,malicious,"));
    assert!(pca.lines().nth(2).unwrap().starts_with("1,honest,"));
}

#[test]
fn manifest_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("out");
    let o = fdpb(&["run", s(&cfg), "--out", s(&out), "--quiet", "--seed", "17"]);
    assert_eq!(o.status.code(), Some(0));

    let manifest: toml::Table = fs::read_to_string(out.join("manifest.toml")).unwrap().parse().unwrap();
    assert_eq!(manifest["tool"].as_str(), Some("fdpb"));
    assert!(manifest["started"].as_str().unwrap() <= manifest["finished"].as_str().unwrap());
    let snapshot: ConfigFile = manifest["config"].clone().try_into().unwrap();
    let reparsed = parse_str(&toml::to_string(&snapshot).unwrap(), Path::new("manifest")).unwrap();

    let mut expected = parse_str(SMALL, Path::new("c.toml")).unwrap().experiment;
    expected.run.seed = 17;
    assert_eq!(reparsed.experiment, expected);
}

#[test]
fn seed_override_and_knowledge_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(fdpb(&["run", s(&cfg), "--out", s(&a), "--quiet", "--dump-knowledge"]).status.code(), Some(0));
    assert_eq!(fdpb(&["run", s(&cfg), "--out", s(&b), "--quiet", "--seed", "99"]).status.code(), Some(0));
    assert_ne!(fs::read(a.join("summary.csv")).unwrap(), fs::read(b.join("summary.csv")).unwrap());

    let dump = fs::read_to_string(a.join("knowledge.csv")).unwrap();
    let mut lines = dump.lines();
    assert_eq!(lines.next(), Some("round,client_id,sample_id,logit_0,logit_1,logit_2,logit_3"));
    // Every training sample is uploaded once per round.
    assert_eq!(lines.count(), 3 * 4 * 30);
    // Client 0 is the PCFDLA attacker: only +-3 appear in its rows.
    let row = dump.lines().find(|l| l.starts_with("1,0,")).unwrap();
    assert!(row.split(',').skip(3).all(|v| v == "3" || v == "-3"), "{row}");
}

#[test]
fn validation_errors_exit_1_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cases = [
        ("fraction.toml", SMALL.replace("fraction = 0.2", "fraction = 1.5"), "fraction"),
        ("unknown.toml", SMALL.replace("[run]\n", "[run]\nspeed = 2\n"), "speed"),
        ("type.toml", SMALL.replace("rounds = 3", "rounds = \"three\""), "rounds"),
        ("missing.toml", "[run]\nrounds = 2\n".to_string(), "[dataset]"),
    ];
    for (name, text, needle) in cases {
        let cfg = write(dir.path(), name, &text);
        let o = fdpb(&["run", s(&cfg), "--out", s(&out)]);
        assert_eq!(o.status.code(), Some(1), "{name}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(needle), "{name}: {err}");
        assert!(!out.exists(), "{name} created output");
    }
    assert_eq!(fdpb(&["run", "/nonexistent/c.toml", "--out", s(&out)]).status.code(), Some(1));
    assert_eq!(fdpb(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(fdpb(&["run", "c.toml"]).status.code(), Some(1));
}

#[test]
fn unwritable_output_exits_2_and_leaves_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let blocker = write(dir.path(), "blocker", "not a directory");
    let out = blocker.join("out");
    let o = fdpb(&["run", s(&cfg), "--out", s(&out), "--quiet"]);
    assert_eq!(o.status.code(), Some(2));
    let entries: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(entries.len(), 2);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(fdpb(&["run", s(&cfg), "--out", s(out), "--quiet", "--dump-knowledge"]).status.code(), Some(0));
    }
    for name in ["summary.csv", "per_client.csv", "pca.csv", "knowledge.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn fraction_sweep_covers_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("rounds = 3", "rounds = 2")
        + "[sweep]\naxis = \"fraction\"\nvalues = [0.1, 0.2, 0.3, 0.3]\n";
    let cfg = write(dir.path(), "c.toml", &text);
    let out = dir.path().join("out");
    let o = fdpb(&["sweep", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("duplicate"));

    let combined = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = combined.lines().collect();
    assert_eq!(lines[0], "method,axis,value,tol_avg_acc,vctm_avg_acc,misdirection_count");
    assert_eq!(lines.len() - 1, 15);
    for method in ["none", "random", "zero", "fdla", "pcfdla"] {
        for value in ["0.1", "0.2", "0.3"] {
            let sub = out.join(format!("{method}-fraction-{value}"));
            assert!(sub.join("summary.csv").exists(), "{sub:?}");
            assert!(combined.contains(&format!("{method},fraction,{value},")));
        }
    }
    assert!(out.join("manifest.toml").exists());
}

#[test]
fn peak_sweep_defaults_to_pcfdla_and_averages_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("rounds = 3", "rounds = 2")
        + "[sweep]\naxis = \"peak\"\nvalues = [1, 2, 5, 10]\nseeds = [1, 2]\n";
    let cfg = write(dir.path(), "c.toml", &text);
    let out = dir.path().join("out");
    let o = fdpb(&["sweep", s(&cfg), "--out", s(&out), "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let combined = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(combined.lines().count() - 1, 4);
    assert!(out.join("pcfdla-peak-5/seed-1/summary.csv").exists());
    assert!(out.join("pcfdla-peak-5/seed-2/summary.csv").exists());

    // The combined row is the mean of the two seeds' final rounds.
    let last_vctm = |seed: u32| -> f64 {
        let text = fs::read_to_string(out.join(format!("pcfdla-peak-5/seed-{seed}/summary.csv"))).unwrap();
        text.lines().last().unwrap().split(',').nth(2).unwrap().parse().unwrap()
    };
    let row = combined.lines().find(|l| l.starts_with("pcfdla,peak,5,")).unwrap();
    let vctm: f64 = row.split(',').nth(4).unwrap().parse().unwrap();
    assert!((vctm - (last_vctm(1) + last_vctm(2)) / 2.0).abs() < 1e-12);
}

#[test]
fn sweep_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let no_section = write(dir.path(), "a.toml", SMALL);
    assert_eq!(fdpb(&["sweep", s(&no_section), "--out", s(&out)]).status.code(), Some(1));
    let empty = write(dir.path(), "b.toml", &(SMALL.to_string() + "[sweep]\naxis = \"alpha\"\nvalues = []\n"));
    let o = fdpb(&["sweep", s(&empty), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty"));
    assert!(!out.exists());
}
