use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use saformer::data::{percentile_limit, Dataset};

fn saformer(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saformer"))
        .args(args)
        .current_dir(dir)
        .env_remove("SAFORMER_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = saformer(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

const TINY: &[&str] = &[
    "--k",
    "4",
    "--embed-dim",
    "8",
    "--n-blocks",
    "1",
    "--n-heads",
    "2",
    "--epochs",
    "2",
    "--iterations-per-epoch",
    "3",
    "--batch",
    "8",
    "--eval-episodes",
    "2",
    "--n-candidates",
    "4",
];

/// Every file a tiny end-to-end pipeline writes, by name.
fn pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    ok(
        dir,
        &[
            "gen-data",
            "--episodes",
            "20",
            "--seed",
            "3",
            "--out",
            "data.json",
        ],
    );
    ok(dir, &["stats", "--data", "data.json"]);
    let mut train = vec!["train", "--data", "data.json", "--out", "model.json"];
    train.extend_from_slice(TINY);
    ok(dir, &train);
    ok(
        dir,
        &[
            "eval",
            "--ckpt",
            "model.json",
            "--limit",
            "3.5",
            "--n-candidates",
            "4",
            "--episodes",
            "3",
        ],
    );
    ok(
        dir,
        &[
            "sweep",
            "--data",
            "data.json",
            "--ckpt",
            "model.json",
            "--n-candidates",
            "1,4",
            "--episodes",
            "2",
        ],
    );
    ok(
        dir,
        &[
            "finetune",
            "--data",
            "data.json",
            "--ckpt",
            "model.json",
            "--budget",
            "2",
            "--updates-per-rollout",
            "2",
            "--n-candidates",
            "4",
            "--eval-episodes",
            "2",
            "--batch",
            "8",
        ],
    );
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| {
            (
                e.file_name().into_string().unwrap(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = pipeline(a.path());
    let fb = pipeline(b.path());
    let names: Vec<&str> = fa.iter().map(|f| f.0.as_str()).collect();
    for expected in [
        "data.json",
        "stats.csv",
        "model.json",
        "model.json.metrics.csv",
        "eval.csv",
        "sweep.csv",
        "finetuned.json",
        "finetuned.json.rollouts.csv",
        "finetuned.json.summary.csv",
        "eval.csv.config",
    ] {
        assert!(names.contains(&expected), "missing {expected} in {names:?}");
    }
    assert_eq!(fa.len(), fb.len());
    for ((na, ca), (nb, cb)) in fa.iter().zip(&fb) {
        assert_eq!(na, nb);
        assert!(ca == cb, "{na} differs between identical runs");
    }
    let sweep =
        String::from_utf8(fa.iter().find(|f| f.0 == "sweep.csv").unwrap().1.clone()).unwrap();
    // 2 candidate counts × 4 default percentiles
    assert_eq!(sweep.lines().count(), 1 + 8);
}

#[test]
fn echo_files_replay_the_run() {
    let a = tempfile::tempdir().unwrap();
    ok(
        a.path(),
        &[
            "gen-data",
            "--episodes",
            "12",
            "--seed",
            "5",
            "--out",
            "data.json",
        ],
    );
    let mut train = vec![
        "train",
        "--data",
        "data.json",
        "--exec",
        "sequential",
        "--lr",
        "0.002",
    ];
    train.extend_from_slice(TINY);
    ok(a.path(), &train);
    let original = fs::read(a.path().join("model.json")).unwrap();
    let echo = fs::read_to_string(a.path().join("model.json.config")).unwrap();
    assert!(echo.starts_with("command=train\n"));
    assert!(
        echo.contains("\nlr=0.002\n")
            && echo.contains("\nembed-dim=8\n")
            && echo.contains("\nexec=sequential\n")
    );

    fs::remove_file(a.path().join("model.json")).unwrap();
    ok(a.path(), &["--config", "model.json.config"]);
    assert_eq!(fs::read(a.path().join("model.json")).unwrap(), original);

    // the parallel path trains the same model
    train[4] = "parallel";
    train.extend_from_slice(&["--out", "par.json"]);
    ok(a.path(), &train);
    assert_eq!(fs::read(a.path().join("par.json")).unwrap(), original);
}

#[test]
fn printed_percentiles_match_the_library() {
    let a = tempfile::tempdir().unwrap();
    let stdout = ok(
        a.path(),
        &["gen-data", "--episodes", "30", "--out", "d.json"],
    );
    let ds = Dataset::load(&a.path().join("d.json")).unwrap();
    for p in [10.0, 20.0, 30.0, 50.0] {
        let want = format!("{p:>4}%  {}", percentile_limit(&ds, p / 100.0).unwrap());
        assert!(stdout.contains(&want), "`{want}` not in\n{stdout}");
    }
}

#[test]
fn usage_and_io_errors_exit_with_2() {
    let a = tempfile::tempdir().unwrap();
    let d = a.path();
    assert_eq!(code(&saformer(d, &["gen-data", "--episodes", "0"])), 2);
    assert_eq!(code(&saformer(d, &["gen-data", "--no-such-flag", "1"])), 2);
    assert_eq!(code(&saformer(d, &["gen-data", "--env", "moon"])), 2);
    assert_eq!(
        code(&saformer(d, &["gen-data", "--out", "missing/dir/d.json"])),
        2
    );
    assert_eq!(code(&saformer(d, &[])), 2);
    ok(d, &["gen-data", "--episodes", "5", "--out", "d.json"]);
    assert_eq!(
        code(&saformer(
            d,
            &["sweep", "--data", "d.json", "--ckpt", "absent.json"]
        )),
        2
    );
    assert_eq!(
        code(&saformer(
            d,
            &["eval", "--ckpt", "absent.json", "--limit", "1"]
        )),
        2
    );
    assert_eq!(
        code(&saformer(
            d,
            &["train", "--data", "d.json", "--profile", "huge"]
        )),
        2
    );
    assert_eq!(code(&saformer(d, &["--config", "absent.config"])), 2);
    assert_eq!(
        code(&saformer(d, &["--config", "d.json.config", "stats"])),
        2
    );
}

#[test]
fn gradcheck_passes_and_reports_a_corrupted_case() {
    let a = tempfile::tempdir().unwrap();
    let stdout = ok(a.path(), &["gradcheck"]);
    assert!(stdout.contains("actor_nll") && stdout.contains("critic_loss"));
    let csv = fs::read_to_string(a.path().join("gradcheck.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));

    let bad = saformer(
        a.path(),
        &["gradcheck", "--corrupt", "layer_norm", "--out", "bad.csv"],
    );
    assert_eq!(code(&bad), 1);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("`layer_norm`"));
    assert_eq!(
        code(&saformer(a.path(), &["gradcheck", "--corrupt", "nonsense"])),
        2
    );
}

#[test]
fn output_directory_override() {
    let a = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_saformer"))
        .args(["gen-data", "--episodes", "4", "--out", "d.json"])
        .current_dir(a.path())
        .env("SAFORMER_OUT_DIR", "results")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(a.path().join("results/d.json").exists());
    assert!(!a.path().join("d.json").exists());
    let echo = fs::read_to_string(a.path().join("results/d.json.config")).unwrap();
    let out_line = echo.lines().find(|l| l.starts_with("out=")).unwrap();
    assert!(Path::new(&out_line[4..]).is_absolute());
}
