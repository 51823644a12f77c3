use std::path::Path;
use std::process::{Command, Output};

fn daugs(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_daugs")).current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn summary(dir: &Path) -> Vec<(String, String)> {
    let mut r = csv::Reader::from_path(dir.join("summary.csv")).unwrap();
    r.records().map(|r| r.unwrap()).map(|r| (r[0].to_string(), r[1].to_string())).collect()
}

fn value(dir: &Path, key: &str) -> String {
    summary(dir).into_iter().find(|(k, _)| k == key).unwrap_or_else(|| panic!("no {key}")).1
}

const FAST: &[&str] = &["--umap-stride", "16", "--jobs", "2"];

#[test]
fn phantom_writes_cohort_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let o = daugs(tmp.path(), &["phantom", "--n", "10", "--out", "d"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let d = tmp.path().join("d");
    assert_eq!(value(&d, "status"), "ok");
    let manifest = std::fs::read_to_string(d.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 11);
    let fpts = std::fs::read_dir(d.join("cases"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "fpt"))
        .count();
    assert_eq!(fpts, 20);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        assert_eq!(
            code(&daugs(tmp.path(), &["phantom", "--n", "2", "--regime", "shifted", "--seed", "4", "--out", out])),
            0
        );
    }
    for f in ["summary.csv", "manifest.csv", "config.ini", "cases/case0001_series.fpt"] {
        let a = std::fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}

#[test]
fn usage_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&daugs(tmp.path(), &["frobnicate"])), 1);
    assert_eq!(code(&daugs(tmp.path(), &["phantom", "--bogus"])), 1);
    assert_eq!(code(&daugs(tmp.path(), &["run"])), 1);
    assert_eq!(code(&daugs(tmp.path(), &["phantom", "--jobs", "0"])), 1);
    assert_eq!(code(&daugs(tmp.path(), &["--help"])), 0);
    assert_eq!(code(&daugs(tmp.path(), &["--version"])), 0);
}

#[test]
fn missing_input_exits_2_naming_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let o = daugs(tmp.path(), &["run", "--manifest", "nope.csv", "--out", "r"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.csv"));
    assert_eq!(value(&tmp.path().join("r"), "status"), "error");
}

#[test]
fn config_file_then_flags() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("c.ini"), "[run]\nseed = 5\numap_stride = 8\n\n[cohort]\nshifted = 3\n").unwrap();
    let o = daugs(tmp.path(), &["phantom", "--n", "1", "--config", "c.ini", "--seed", "9", "--out", "d"]);
    assert_eq!(code(&o), 0);
    let echo = std::fs::read_to_string(tmp.path().join("d/config.ini")).unwrap();
    assert!(echo.contains("seed = 9\n"));
    assert!(echo.contains("umap_stride = 8\n"));
    assert!(echo.contains("shifted = 3\n"));
    assert!(echo.contains("command = phantom\n"));

    // the echo is itself a valid config
    let o = daugs(tmp.path(), &["phantom", "--n", "1", "--config", "d/config.ini", "--out", "e"]);
    assert_eq!(code(&o), 0);
    let again = std::fs::read_to_string(tmp.path().join("e/config.ini")).unwrap();
    assert_eq!(echo, again);

    std::fs::write(tmp.path().join("bad.ini"), "[run]\nsead = 5\n").unwrap();
    assert_eq!(code(&daugs(tmp.path(), &["phantom", "--config", "bad.ini", "--out", "f"])), 1);
}

#[test]
fn run_select_eval_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    assert_eq!(code(&daugs(t, &["phantom", "--n", "2", "--out", "d"])), 0);
    std::fs::write(
        t.join("pool.cfg"),
        "[model.0]\nkind = uniform\nvalidation_dice = 0.2\n\n[model.1]\nkind = oracle\nvalidation_dice = 0.1\n\n\
         [model.2]\nkind = perturbed_oracle\njitter = 2\nsensitivity = 1\nvalidation_dice = 0.9\n",
    )
    .unwrap();
    let mut args = vec!["run", "--manifest", "d/manifest.csv", "--pool", "pool.cfg", "--out", "r"];
    args.extend(FAST);
    let o = daugs(t, &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(value(&t.join("r"), "solutions"), "6");

    assert_eq!(code(&daugs(t, &["select", "--solutions", "r/solutions.csv", "--out", "s"])), 0);
    let sel = std::fs::read_to_string(t.join("s/selection.csv")).unwrap();
    // the oracle has zero uncertainty
    assert!(sel.lines().skip(1).all(|l| l.split(',').nth(3) == Some("1")), "{sel}");

    let o = daugs(
        t,
        &["select", "--solutions", "r/solutions.csv", "--method", "established", "--pool", "pool.cfg", "--out", "se"],
    );
    assert_eq!(code(&o), 0);
    let sel = std::fs::read_to_string(t.join("se/selection.csv")).unwrap();
    assert!(sel.lines().skip(1).all(|l| l.split(',').nth(3) == Some("2")), "{sel}");

    let o = daugs(
        t,
        &["eval", "--manifest", "d/manifest.csv", "--run-dir", "r", "--selection", "s/selection.csv", "--out", "e"],
    );
    assert_eq!(code(&o), 0);
    assert_eq!(value(&t.join("e"), "dice_mean"), "1");
    assert_eq!(value(&t.join("e"), "failures"), "0");

    let o = daugs(
        t,
        &[
            "mbf",
            "--manifest",
            "d/manifest.csv",
            "--run-dir",
            "r",
            "--selection",
            "daugs=s/selection.csv",
            "--out",
            "m",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(value(&t.join("m"), "bias.daugs"), "0");
    assert_eq!(value(&t.join("m"), "pairs.daugs"), "12");
}

#[test]
fn metric_choice_changes_selection_on_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    assert_eq!(code(&daugs(t, &["metriccompare", "--fixture", "--out", "mc"])), 0);
    assert_eq!(value(&t.join("mc"), "disagreements.fixture"), "1");
    let mut chosen = Vec::new();
    for m in ["upp", "utot"] {
        let out = format!("s_{m}");
        assert_eq!(code(&daugs(t, &["select", "--solutions", "mc/solutions.csv", "--metric", m, "--out", &out])), 0);
        let sel = std::fs::read_to_string(t.join(&out).join("selection.csv")).unwrap();
        chosen.push(sel.lines().nth(1).unwrap().split(',').nth(3).unwrap().to_string());
    }
    assert_eq!(chosen, ["0", "1"]);
}

#[test]
fn failing_backend_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    assert_eq!(code(&daugs(t, &["phantom", "--n", "1", "--out", "d"])), 0);
    std::fs::write(t.join("pool.cfg"), "[model.0]\nkind = external\ncommand = sh -c \"exit 7\"\ntimeout_s = 10\n")
        .unwrap();
    let o = daugs(t, &["run", "--manifest", "d/manifest.csv", "--pool", "pool.cfg", "--out", "r"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(value(&t.join("r"), "exit_code"), "3");

    // one healthy member keeps the run alive and records the failure
    std::fs::write(
        t.join("pool2.cfg"),
        "[model.0]\nkind = oracle\n\n[model.1]\nkind = external\ncommand = sh -c \"exit 7\"\ntimeout_s = 10\n",
    )
    .unwrap();
    let mut args = vec!["run", "--manifest", "d/manifest.csv", "--pool", "pool2.cfg", "--out", "r2"];
    args.extend(FAST);
    let o = daugs(t, &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(value(&t.join("r2"), "model_failures"), "1");
    let failures = std::fs::read_to_string(t.join("r2/failures.csv")).unwrap();
    assert_eq!(failures.lines().count(), 2);
}

#[test]
fn bad_pool_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    assert_eq!(code(&daugs(t, &["phantom", "--n", "1", "--out", "d"])), 0);
    std::fs::write(t.join("pool.cfg"), "[model.0]\nkind = wizard\n").unwrap();
    let o = daugs(t, &["run", "--manifest", "d/manifest.csv", "--pool", "pool.cfg", "--out", "r"]);
    assert_eq!(code(&o), 1);
}
