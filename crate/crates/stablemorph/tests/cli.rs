mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use stablemorph::backend::Registry;
use stablemorph::cli::run;
use stablemorph::config::RunConfig;
use stablemorph::pipeline::RunManifest;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn call(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["stablemorph"];
    argv.extend_from_slice(args);
    let code = run(argv, &Registry::builtin(), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn map_on_bundled_fixture_matches_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    let scores = fixture("map20/scores.tsv");
    let (code, out, err) = call(&["--out", s(dir.path()), "map", "--scores", s(&scores)]);
    assert_eq!(code, 0, "{err}");
    assert!(out.starts_with("config-hash: "));
    assert!(out.contains("\nseed: 0\n"));
    let expected = fs::read_to_string(fixture("map20/expected_map.tsv")).unwrap();
    assert!(out.contains(&expected), "{out}");
    assert_eq!(fs::read_to_string(dir.path().join("map/map.tsv")).unwrap(), expected);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("map/map.json")).unwrap()).unwrap();
    assert_eq!(json["morph_count"], 20);
    assert_eq!(json["map"].as_array().unwrap().len(), 3);
    assert_eq!(json["map"][0].as_array().unwrap().len(), 4);
}

#[test]
fn unknown_generation_backend_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = call(&["--out", s(dir.path()), "--backend-gen", "foo", "morph"]);
    assert_eq!(code, 2);
    assert!(err.starts_with("error[config]:") && err.contains("\"foo\""), "{err}");
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn missing_prerequisites_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = call(&["--out", s(dir.path()), "pairs"]);
    assert_eq!(code, 4);
    assert!(err.contains("missing ingest artifact"), "{err}");
}

#[test]
fn malformed_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = \"soon\"\n").unwrap();
    let (code, _, err) = call(&["--config", s(&cfg), "map", "--scores", "x"]);
    assert_eq!(code, 2);
    assert!(err.starts_with("error[config]:"), "{err}");
}

#[test]
fn config_hash_ignores_key_order_and_flags_win() {
    let a = RunConfig::parse("seed = 3\nmax_jobs = 2\n[generation]\nsteps = 30\noutputs = 2\n").unwrap();
    let b = RunConfig::parse("[generation]\noutputs = 2\nsteps = 30\n\n[pairing]\ntop_k = 3\n").unwrap();
    let mut b = b;
    b.seed = 3;
    b.max_jobs = 2;
    assert_eq!(a.hash(), b.hash());

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 3\n").unwrap();
    let scores = fixture("map20/scores.tsv");
    let (_, out, _) = call(&["--config", s(&cfg), "--seed", "9", "--out", s(dir.path()), "map", "--scores", s(&scores)]);
    assert!(out.contains("\nseed: 9\n"), "{out}");
}

#[test]
fn report_renders_table_one_cells() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.tsv");
    let mut text = String::from("method\tdataset\tmetric\timage\tscore\n");
    for (m, vals) in [("ours", [1.0, 2.0, 3.0]), ("mipgan", [96.5, 87.65, 105.35])] {
        for (i, v) in vals.iter().enumerate() {
            text.push_str(&format!("{m}\tfrll\tsharpness\t{i}.png\t{v}\n"));
        }
    }
    fs::write(&scores, text).unwrap();
    let (code, out, err) = call(&["--out", s(dir.path()), "report", "--scores", s(&scores)]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("# std: sample (N-1)"));
    assert!(out.contains("ours\t2.00±1.00"), "{out}");
    assert!(out.contains("mipgan\t96.50±8.85"), "{out}");
    assert!(dir.path().join("report/raw_sharpness.tsv").exists());
}

#[test]
fn full_run_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    common::write_corpus(&root, 6, 10);
    let layout = dir.path().join("layout.toml");
    fs::write(&layout, common::layout_toml(6)).unwrap();
    let out = dir.path().join("out");
    let cache = dir.path().join("cache");
    let base = ["--out", s(&out), "--cache", s(&cache), "-j", "2"];
    let with = |rest: &[&str]| {
        let mut v: Vec<&str> = base.to_vec();
        v.extend_from_slice(rest);
        call(&v)
    };

    let (code, o, e) = with(&["ingest", "--root", s(&root), "--layout", s(&layout)]);
    assert_eq!(code, 0, "{e}");
    assert!(o.contains("6 subjects, 60 images"), "{o}");
    let (code, o, e) = with(&["--top-k", "1", "pairs"]);
    assert_eq!(code, 0, "{e}");
    let pairs = stablemorph::corpus::read_pairs(&out.join("pairs.tsv")).unwrap();
    assert!(!pairs.is_empty(), "{o}");
    let (code, o, e) = with(&["finetune"]);
    assert_eq!(code, 0, "{e}");
    assert!(o.contains("fine_tune: 6 computed, 0 cached"), "{o}");
    let (code, o, e) = with(&["identity", "--all-variants"]);
    assert_eq!(code, 0, "{e}");
    assert!(o.contains("identity n=10: 0 computed, 6 cached"), "{o}");
    assert!(o.contains("identity n=3: 6 computed"), "{o}");
    let (code, o, e) = with(&["morph", "--all-variants"]);
    assert_eq!(code, 0, "{e}");
    assert_eq!(o.matches("| failed 0 |").count(), 5, "{o}");

    // A second pass does no backend work at any stage.
    let (_, o, _) = with(&["finetune"]);
    assert!(o.contains("0 computed, 6 cached"), "{o}");
    let (_, o, _) = with(&["identity", "--all-variants"]);
    assert!(!o.contains("1 computed") && o.contains("0 computed"), "{o}");
    let (code, o, _) = with(&["morph", "--all-variants"]);
    assert_eq!(code, 0);
    assert_eq!(o.matches("backend calls 0").count(), 5, "{o}");

    let log = RunManifest::open(&out.join("runs.jsonl")).unwrap();
    assert_eq!(log.records().unwrap().len(), 5 * pairs.len());

    // Quality and plots over the generated morphs.
    let qroot = dir.path().join("quality-input/ours");
    fs::create_dir_all(&qroot).unwrap();
    fs::create_dir_all(qroot.join("synthetic")).unwrap();
    for (i, entry) in walk_pngs(&out.join("morphs/default")).iter().enumerate() {
        fs::copy(entry, qroot.join(format!("synthetic/{i}.png"))).unwrap();
    }
    let qin = dir.path().join("quality-input");
    let (code, o, e) = with(&["--scorer", "laplacian-sharpness", "--scorer", "stub", "quality", "--images", s(&qin)]);
    assert_eq!(code, 0, "{e}");
    assert!(o.contains("ours\t"), "{o}");
    let (code, o, e) = with(&["plots", "--report", s(&out.join("quality"))]);
    assert_eq!(code, 0, "{e}");
    assert_eq!(o.matches(".svg").count(), 2, "{o}");
    let (code, o, e) = with(&["fid", "--real", s(&root.join("s000")), "--generated", s(&qroot)]);
    assert_eq!(code, 0, "{e}");
    assert!(o.contains("fid[color-histogram]"), "{o}");
}

fn walk_pngs(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = walkdir::WalkDir::new(dir)
        .into_iter()
        .filter_map(|e| e.ok())
        .map(|e| e.into_path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    v.sort();
    v
}

#[test]
fn external_scorer_plugin() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("in/plugin/set/a.png");
    common::write_png(&img, 0, 0);
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "[backends]\nscorers = [\"const42\"]\n\n[[plugins]]\nkind = \"scorer\"\nname = \"const42\"\ncommand = [\"sh\", \"-c\", \"echo 42\", \"plugin\"]\n",
    )
    .unwrap();
    let (code, o, e) = call(&[
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("out")),
        "--cache",
        s(&dir.path().join("cache")),
        "quality",
        "--images",
        s(&dir.path().join("in")),
    ]);
    assert_eq!(code, 0, "{e}");
    assert!(o.contains("plugin\t42.00±0.00"), "{o}");
}

#[test]
fn binary_reports_error_class_and_exit_code() {
    let out = Command::new(env!("CARGO_BIN_EXE_stablemorph"))
        .args(["--backend-gen", "foo", "morph"])
        .current_dir(tempfile::tempdir().unwrap().path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error[config]") && err.contains("foo"), "{err}");
}
