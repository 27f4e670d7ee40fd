use std::path::Path;
use std::process::{Command, Output};

fn driftrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_driftrack")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

const SMALL_RATES: &str = "replications = 16\nhorizons = 200, 400, 800\npath.theta = 0.3\nconstants.lambda1 = 1\n";

#[test]
fn rates_writes_schema_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "r.cfg", SMALL_RATES);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let o = driftrack(&["rates", "--config", &cfg, "--seed", "11", "--out", out.to_str().unwrap(), "--quiet"]);
        assert!(o.status.code().unwrap() <= 1, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(o.stderr.is_empty());
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    let text = String::from_utf8(bytes).unwrap();
    assert!(text.starts_with("horizon,replication,final_error_l1,final_error_l2,final_error_lp,p,seed\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 16);
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "r.cfg", &format!("{SMALL_RATES}seed = 1\n"));
    let run = |seed: &str| driftrack(&["rates", "--config", &cfg, "--seed", seed, "--replications", "4", "--quiet"]).stdout;
    let one = String::from_utf8(run("1")).unwrap();
    assert_eq!(one.lines().count(), 1 + 3 * 4);
    assert_ne!(one, String::from_utf8(run("2")).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let kalman = driftrack(&["kalman-compare", "--replications", "8", "--quiet"]);
    assert_eq!(kalman.status.code(), Some(0), "{}", String::from_utf8_lossy(&kalman.stderr));

    let lagged = write(
        dir.path(),
        "lagged.cfg",
        "model.kind = ar-lagged\npath.theta = 0.4, 0.2\nverify.past = 1, -0.5\nverify.samples = 2000\nconstants.lambda1 = 0.05\nconstants.L = 1\n",
    );
    let o = driftrack(&["verify", "--config", &lagged]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("FAIL"));

    let bad = write(dir.path(), "bad.cfg", "model.kind = nonsense\n");
    let o = driftrack(&["run", "--config", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    let missing = dir.path().join("absent.cfg");
    assert_eq!(driftrack(&["run", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(driftrack(&["rates", "--replications", "0"]).status.code(), Some(2));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        driftrack::experiments::ExperimentConfig::from_file(&path)
            .and_then(|c| c.validate())
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        seen += 1;
    }
    assert!(seen >= 8);
}
