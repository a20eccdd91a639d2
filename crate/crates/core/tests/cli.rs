mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

struct Env {
    root: tempfile::TempDir,
    clip: PathBuf,
    config: PathBuf,
}

impl Env {
    fn new() -> Self {
        let root = tempfile::tempdir().unwrap();
        let clip = common::scene_dir(root.path());
        let config = root.path().join("default.toml");
        fs::write(&config, "").unwrap();
        Env { root, clip, config }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.path().join(name)
    }

    fn config_with(&self, text: &str) -> PathBuf {
        let p = self.path("custom.toml");
        fs::write(&p, text).unwrap();
        p
    }

    fn fixture_with(&self, value: Value) -> PathBuf {
        let p = self.path("fixture.json");
        fs::write(&p, value.to_string()).unwrap();
        p
    }
}

fn mock() -> PathBuf {
    common::fixtures_dir().join("mock_backend.json")
}

fn trajex(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    Command::new(common::bin()).args(args).env_remove("TRAJEX_API_KEY").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn run(env: &Env, config: &Path, fixture: &Path, out: &Path) -> Output {
    trajex(&[&"run", &"--input", &env.clip, &"--config", &config, &"--out", &out, &"--mock-backend", &fixture])
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn help_version_and_usage_errors() {
    let help = trajex(&[&"--help"]);
    assert_eq!(code(&help), 0);
    assert!(String::from_utf8_lossy(&help.stdout).contains("run"));
    let version = trajex(&[&"--version"]);
    assert_eq!(code(&version), 0);
    assert!(String::from_utf8_lossy(&version.stdout).contains("bundle schema 1"));
    assert_eq!(code(&trajex(&[&"frobnicate"])), 64);
    assert_eq!(code(&trajex(&[&"run", &"--input", &"x"])), 64);
    assert_eq!(code(&trajex(&[])), 64);
}

#[test]
fn full_run_succeeds_and_stage_chain_matches() {
    let env = Env::new();
    let out = env.path("run");
    let o = run(&env, &env.config, &mock(), &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let full = fs::read(out.join("bundle.json")).unwrap();
    let b: Value = serde_json::from_slice(&full).unwrap();
    assert_eq!(b["source_id"], "clip01");
    assert_eq!(b["error"], Value::Null);
    assert_eq!(b["end_effector"]["samples"].as_array().unwrap().len(), 64);

    let step = |name: &str| env.path(name);
    let mut prev = step("p.json");
    let o = trajex(&[
        &"propose",
        &"--input",
        &env.clip,
        &"--config",
        &env.config,
        &"--out",
        &prev,
        &"--mock-backend",
        &mock(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t = step("t.json");
    assert_eq!(code(&trajex(&[&"track", &"--input", &env.clip, &"--bundle", &prev, &"--out", &t])), 0);
    prev = t;
    for name in ["filter", "interp", "retarget"] {
        let next = step(&format!("{name}.json"));
        assert_eq!(code(&trajex(&[&name, &"--bundle", &prev, &"--out", &next])), 0, "{name}");
        prev = next;
    }
    assert!(fs::read(&prev).unwrap() == full, "stage-by-stage bundle differs from full run");
}

#[test]
fn external_tracker_run_matches_builtin() {
    let env = Env::new();
    let builtin = env.path("builtin");
    assert_eq!(code(&run(&env, &env.config, &mock(), &builtin)), 0);
    let external = env.path("external");
    let o = trajex(&[
        &"run",
        &"--input",
        &env.clip,
        &"--config",
        &env.config,
        &"--out",
        &external,
        &"--mock-backend",
        &mock(),
        &"--tracker-cmd",
        &common::bin(),
        &"serve-tracker",
        &"--input",
        &env.clip,
        &"--config",
        &env.config,
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read(builtin.join("bundle.json")).unwrap() == fs::read(external.join("bundle.json")).unwrap());
}

#[test]
fn tracker_failure_writes_partial_bundle() {
    let env = Env::new();
    let out = env.path("out");
    let o = trajex(&[
        &"run",
        &"--input",
        &env.clip,
        &"--config",
        &env.config,
        &"--out",
        &out,
        &"--mock-backend",
        &mock(),
        &"--tracker-cmd",
        &"/nonexistent/tracker",
    ]);
    assert_eq!(code(&o), 8);
    let b = read_json(&out.join("bundle.json"));
    assert_eq!(b["error"]["stage"], "track");
    assert_eq!(b["error"]["exit_code"], 8);
    assert_eq!(b["stages"], serde_json::json!(["load", "seed", "propose"]));
    assert_eq!(b["tracks"], serde_json::json!([]));
}

#[test]
fn missing_api_key_exits_before_writing() {
    let env = Env::new();
    let out = env.path("out");
    let o = trajex(&[&"run", &"--input", &env.clip, &"--config", &env.config, &"--out", &out]);
    assert_eq!(code(&o), 6);
    assert!(String::from_utf8_lossy(&o.stderr).contains("TRAJEX_API_KEY"));
    assert!(!out.join("bundle.json").exists());
}

#[test]
fn config_and_input_errors() {
    let env = Env::new();
    let out = env.path("out");
    for bad in ["bogus_key = 1", "[tracker]\nwin_radius = 0", "max_gap = \"five\"", "resize_w = "] {
        let cfg = env.config_with(bad);
        assert_eq!(code(&run(&env, &cfg, &mock(), &out)), 2, "{bad}");
    }
    assert_eq!(code(&run(&env, &env.path("missing.toml"), &mock(), &out)), 2);

    let o = trajex(&[
        &"run",
        &"--input",
        &env.path("nope"),
        &"--config",
        &env.config,
        &"--out",
        &out,
        &"--mock-backend",
        &mock(),
    ]);
    assert_eq!(code(&o), 3);
    let empty = env.path("empty");
    fs::create_dir(&empty).unwrap();
    let o = trajex(&[&"run", &"--input", &empty, &"--config", &env.config, &"--out", &out, &"--mock-backend", &mock()]);
    assert_eq!(code(&o), 3);
    assert!(!out.exists());
}

#[test]
fn seed_and_proposal_failures() {
    let env = Env::new();
    let out = env.path("out");
    let cfg = env.config_with("seed_frame_override = 80");
    assert_eq!(code(&run(&env, &cfg, &mock(), &out)), 5);

    let no_hand = env.fixture_with(serde_json::json!({
        "format": "trajex-mock-backend", "version": 1, "model_id": "m",
        "entries": [{"frames": [0, 79], "prompt_id": "hand_presence_v1", "body": "No hand here."}],
    }));
    assert_eq!(code(&run(&env, &env.config, &no_hand, &out)), 4);

    let bad_grasp = env.fixture_with(serde_json::json!({
        "format": "trajex-mock-backend", "version": 1, "model_id": "m",
        "entries": [
            {"frames": [0, 79], "prompt_id": "hand_presence_v1", "body": "Yes."},
            {"frames": [0, 0], "prompt_id": "grasp_v1", "body": "[{\"label\":\"wrist\",\"category\":\"hand\",\"x\":1.4,\"y\":0.5}]"},
        ],
    }));
    assert_eq!(code(&run(&env, &env.config, &bad_grasp, &out)), 7);

    let unavailable = env.fixture_with(serde_json::json!({
        "format": "trajex-mock-backend", "version": 1, "model_id": "m",
        "entries": [{"frames": [0, 79], "prompt_id": "hand_presence_v1", "status": 500, "body": "down"}],
    }));
    let cfg = env.config_with("[backend]\nmax_retries = 0");
    assert_eq!(code(&run(&env, &cfg, &unavailable, &out)), 6);
    assert!(!out.join("bundle.json").exists());
}

#[test]
fn render_export_and_bundle_errors() {
    let env = Env::new();
    let out = env.path("out");
    assert_eq!(code(&run(&env, &env.config, &mock(), &out)), 0);
    let bundle = out.join("bundle.json");
    let b = read_json(&bundle);

    let frames = env.path("frames");
    assert_eq!(code(&trajex(&[&"render", &"--input", &env.clip, &"--bundle", &bundle, &"--out", &frames])), 0);
    assert_eq!(fs::read_dir(&frames).unwrap().count(), 80);
    assert!(frames.join("000079.ppm").exists());

    let short = env.path("short");
    fs::create_dir(&short).unwrap();
    for t in 0..10 {
        let name = format!("{t:04}.ppm");
        fs::copy(env.clip.join(&name), short.join(&name)).unwrap();
    }
    let o = trajex(&[&"render", &"--input", &short, &"--bundle", &bundle, &"--out", &env.path("r2")]);
    assert_eq!(code(&o), 12);

    let csv = env.path("tracks.csv");
    let ee = env.path("ee.csv");
    assert_eq!(code(&trajex(&[&"export", &"--bundle", &bundle, &"--out", &csv, &"--end-effector", &ee])), 0);
    let rows = fs::read_to_string(&csv).unwrap().lines().count();
    assert_eq!(rows, 1 + b["tracks"].as_array().unwrap().len() * 80);
    assert_eq!(fs::read_to_string(&ee).unwrap().lines().count(), 1 + 64);

    // filtering twice has no backward tracks to compare against
    assert_eq!(code(&trajex(&[&"filter", &"--bundle", &bundle, &"--out", &env.path("f.json")])), 9);

    let corrupt = env.path("corrupt.json");
    let text = fs::read_to_string(&bundle).unwrap();
    fs::write(&corrupt, &text[..text.len() / 2]).unwrap();
    assert_eq!(code(&trajex(&[&"export", &"--bundle", &corrupt, &"--out", &csv])), 11);

    let mut v = b.clone();
    v["schema_version"] = 99.into();
    fs::write(&corrupt, v.to_string()).unwrap();
    assert_eq!(code(&trajex(&[&"interp", &"--bundle", &corrupt, &"--out", &csv])), 11);

    let mut v = b;
    v["config"]["max_gap"] = 7.into();
    fs::write(&corrupt, v.to_string()).unwrap();
    assert_eq!(code(&trajex(&[&"retarget", &"--bundle", &corrupt, &"--out", &csv])), 11);

    assert_eq!(code(&trajex(&[&"export", &"--bundle", &env.path("absent.json"), &"--out", &csv])), 13);
}
