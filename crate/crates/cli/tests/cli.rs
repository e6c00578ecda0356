//! End-to-end checks of the `eballoc` binary and its file formats.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_eballoc"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

struct TempDir(PathBuf);

impl TempDir {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("eballoc-cli-{tag}-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        Self(dir)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    fn write(&self, name: &str, body: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, body).unwrap();
        p
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        fs::remove_dir_all(&self.0).ok();
    }
}

const SPEC_64F: &str = r#"{
  "t": 64, "n": 256, "evidence_mode": "spread", "evidence_frames": 10,
  "feature_dim": 8, "noise": 0.05, "seed": 7
}"#;

fn str_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn workload_train_score_allocate_verify_round_trip() {
    let dir = TempDir::new("flow");
    let spec = dir.write("spec.json", SPEC_64F);
    let workload = dir.path("workload.json");
    run_ok(&["gen-workload", "--spec", str_arg(&spec), "--out", str_arg(&workload)]);

    let model = dir.path("image.json");
    run_ok(&[
        "train-router",
        "--head",
        "image",
        "--data",
        str_arg(&workload),
        "--out",
        str_arg(&model),
        "--epochs",
        "150",
        "--lr",
        "0.5",
    ]);
    let model_json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(model_json["head_kind"], "image");
    assert_eq!(model_json["dim"], 8);

    let scores = dir.path("scores.jsonl");
    run_ok(&[
        "score",
        "--workload",
        str_arg(&workload),
        "--model",
        str_arg(&model),
        "--out",
        str_arg(&scores),
    ]);
    assert_eq!(fs::read_to_string(&scores).unwrap().lines().count(), 64);

    let plan = dir.path("plan.json");
    run_ok(&[
        "allocate",
        "--scores",
        str_arg(&scores),
        "--budget",
        "3000",
        "--scales",
        "2,1,4",
        "--n",
        "256",
        "--out",
        str_arg(&plan),
    ]);
    let plan_json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&plan).unwrap()).unwrap();
    assert_eq!(plan_json["policy"], "fragment");
    assert!(plan_json["total_tokens"].as_u64().unwrap() <= 3000);

    // The trained router recovers the ground truth on this easy workload, so
    // the instance below matches the plan it produced.
    let mut relevance = vec![0u8; 64];
    for entry in fs::read_to_string(&scores).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(entry).unwrap();
        relevance[v["frame_index"].as_u64().unwrap() as usize] = v["y_hat"].as_u64().unwrap() as u8;
    }
    let instance = dir.write(
        "instance.json",
        &format!(
            r#"{{"n":256,"budget":3000,"scales":{{"global":2,"critical":1,"irrelevant":4}},"relevance":{}}}"#,
            serde_json::to_string(&relevance).unwrap()
        ),
    );
    let verdict = run_ok(&["verify", "--plan", str_arg(&plan), "--instance", str_arg(&instance)]);
    assert!(verdict.contains("plan ok"));

    // A tampered plan must be rejected with a nonzero exit code.
    let mut tampered: serde_json::Value = plan_json;
    tampered["total_tokens"] = serde_json::json!(4000);
    let bad_plan = dir.write("tampered.json", &tampered.to_string());
    let out = run(&["verify", "--plan", str_arg(&bad_plan), "--instance", str_arg(&instance)]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("BudgetExceeded") || text.contains("WrongCount"), "{text}");
}

#[test]
fn budget_accepts_config_files() {
    let dir = TempDir::new("budget");
    let spec = dir.write("spec.json", SPEC_64F);
    let workload = dir.path("workload.json");
    run_ok(&["gen-workload", "--spec", str_arg(&spec), "--out", str_arg(&workload)]);

    let config = dir.write(
        "run.json",
        r#"{"budget": {"l_max": 16384, "l_text": 512, "l_gen": 256, "epsilon": 100}}"#,
    );
    let summary = dir.path("summary.json");
    let stdout = run_ok(&[
        "pipeline",
        "--spec",
        str_arg(&spec),
        "--budget",
        str_arg(&config),
        "--text-tokens",
        "512",
        "--out",
        str_arg(&summary),
    ]);
    assert!(stdout.contains("context check"), "{stdout}");
    let summary_json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&summary).unwrap()).unwrap();
    // 512 text + 10 relevant at scale 1 + 54 background at scale 4
    assert_eq!(summary_json["total_length"], 512 + 3424);
}

#[test]
fn derive_labels_prints_csv() {
    let dir = TempDir::new("labels");
    let ab = dir.write(
        "ab.csv",
        "category,acc_fragment,acc_global\nneedle,0.72,0.60\nholistic,0.64,0.62\nboundary,0.65,0.60\n",
    );
    let stdout = run_ok(&["derive-labels", "--ab", str_arg(&ab), "--tau", "0.05"]);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(
        lines,
        vec!["category,label", "needle,fragment", "holistic,global", "boundary,global"]
    );
}

#[test]
fn sweep_reports_are_byte_stable() {
    let dir = TempDir::new("sweep");
    let grid = dir.write(
        "grid.json",
        r#"{
          "workloads": [
            {"t": 64, "n": 256, "evidence_mode": "spread", "evidence_frames": 10,
             "feature_dim": 4, "noise": 0.02, "seed": 11},
            {"t": 128, "n": 256, "evidence_mode": "spread", "evidence_frames": 20,
             "feature_dim": 4, "noise": 0.02, "seed": 12}
          ],
          "configs": [
            {"label": "64f", "frames": 64,
             "scales": {"global": 2, "critical": 1, "irrelevant": 4}},
            {"label": "128f", "frames": 128,
             "scales": {"global": 2, "critical": 1, "irrelevant": 4}}
          ],
          "budgets": [64, 4096, 24576],
          "scorer": "ground-truth"
        }"#,
    );
    let csv_a = dir.path("a.csv");
    let csv_b = dir.path("b.csv");
    run_ok(&["sweep", "--grid", str_arg(&grid), "--out", str_arg(&csv_a)]);
    run_ok(&["sweep", "--grid", str_arg(&grid), "--out", str_arg(&csv_b)]);
    let body_a = fs::read(&csv_a).unwrap();
    assert_eq!(body_a, fs::read(&csv_b).unwrap());

    let text = String::from_utf8(body_a).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "config,budget,frames,total_tokens,utility,reduction_pct,cost_units,status"
    );
    assert_eq!(text.lines().count(), 1 + 6);
    assert!(text.contains("budget_too_small"));

    // JSON emission parses back into the same shape.
    let json_out = dir.path("rows.json");
    run_ok(&["sweep", "--grid", str_arg(&grid), "--out", str_arg(&json_out)]);
    let rows: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&json_out).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 6);
}

#[test]
fn sweep_accepts_trained_scorers() {
    let dir = TempDir::new("trained");
    let spec = dir.write("spec.json", SPEC_64F);
    let workload = dir.path("workload.json");
    run_ok(&["gen-workload", "--spec", str_arg(&spec), "--out", str_arg(&workload)]);

    let image = dir.path("image.json");
    let semantic = dir.path("semantic.json");
    for (head, out) in [("image", &image), ("semantic", &semantic)] {
        run_ok(&[
            "train-router",
            "--head",
            head,
            "--data",
            str_arg(&workload),
            "--out",
            str_arg(out),
            "--epochs",
            "150",
            "--lr",
            "0.5",
        ]);
    }

    let grid = dir.write(
        "grid.json",
        &format!(
            r#"{{
              "workloads": [{{"t": 64, "n": 256, "evidence_mode": "spread",
                "evidence_frames": 10, "feature_dim": 8, "noise": 0.05, "seed": 7}}],
              "configs": [{{"label": "64f", "frames": 64,
                "scales": {{"global": 2, "critical": 1, "irrelevant": 4}}}}],
              "budgets": [12288],
              "scorer": {{"trained": {{"semantic": {}, "image": {}}}}},
              "cost": {{"router_overhead_units": 1290}}
            }}"#,
            serde_json::to_string(&semantic).unwrap(),
            serde_json::to_string(&image).unwrap()
        ),
    );
    let out = dir.path("trained.csv");
    run_ok(&["sweep", "--grid", str_arg(&grid), "--out", str_arg(&out)]);
    let body = fs::read_to_string(&out).unwrap();
    let row = body.lines().nth(1).unwrap();
    // trained routers recover the ground truth on this easy workload, and
    // the router overhead lands in the cost column: 3424 + 1290
    assert_eq!(row, "64f,12288,64,3424,1.000000,79.1,4714,ok");
}

#[test]
fn eb_seed_overrides_spec_seeds() {
    let dir = TempDir::new("seed");
    let spec = dir.write("spec.json", SPEC_64F);
    let out_a = dir.path("a.json");
    let out_b = dir.path("b.json");
    let out_c = dir.path("c.json");

    let seeded = |out: &Path, seed: &str| {
        let run = bin()
            .args(["gen-workload", "--spec", str_arg(&spec), "--out", str_arg(out)])
            .env("EB_SEED", seed)
            .output()
            .unwrap();
        assert!(run.status.success());
    };
    seeded(&out_a, "123");
    seeded(&out_b, "123");
    seeded(&out_c, "456");

    let a = fs::read_to_string(&out_a).unwrap();
    assert_eq!(a, fs::read_to_string(&out_b).unwrap());
    assert_ne!(a, fs::read_to_string(&out_c).unwrap());
}

#[test]
fn allocate_reports_budget_too_small() {
    let dir = TempDir::new("tiny");
    let scores: String = (0..4)
        .map(|i| format!(r#"{{"frame_index":{i},"p":0.9,"y_hat":1}}"#))
        .collect::<Vec<_>>()
        .join("\n");
    let scores = dir.write("scores.jsonl", &scores);
    let out = run(&[
        "allocate",
        "--scores",
        str_arg(&scores),
        "--budget",
        "10",
        "--n",
        "256",
        "--out",
        str_arg(&dir.path("plan.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("budget 10"));
}
