#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

pub fn core_fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

pub fn test_data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// A scratch run directory with `fixtures/` and `run.conf` copied in.
pub struct Workspace {
    pub dir: TempDir,
}

impl Workspace {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let fx = dir.path().join("fixtures");
        fs::create_dir(&fx).unwrap();
        for entry in fs::read_dir(core_fixtures()).unwrap() {
            let p = entry.unwrap().path();
            fs::copy(&p, fx.join(p.file_name().unwrap())).unwrap();
        }
        fs::copy(test_data("pipeline.conf"), dir.path().join("run.conf")).unwrap();
        fs::create_dir(dir.path().join("out")).unwrap();
        Self { dir }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn run(&self, args: &[&str]) -> Output {
        self.run_with_stdin(args, None)
    }

    pub fn run_with_stdin(&self, args: &[&str], stdin: Option<&str>) -> Output {
        use std::io::Write;
        use std::process::Stdio;
        let mut child = Command::new(env!("CARGO_BIN_EXE_statelink"))
            .args(args)
            .current_dir(self.dir.path())
            .env_remove("RUST_LOG")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        let mut pipe = child.stdin.take().unwrap();
        pipe.write_all(stdin.unwrap_or("").as_bytes()).unwrap();
        drop(pipe);
        child.wait_with_output().unwrap()
    }

    /// Runs and asserts success.
    pub fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "statelink {args:?} failed ({:?}):\n{}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    /// The whole pipeline: extract, evaluate, graph, train, predict.
    pub fn pipeline(&self, jobs: &str) {
        let c = ["--config", "run.conf"];
        self.ok(&[&["extract", "-j", jobs, "--out", "out/predictions.jsonl"][..], &c].concat());
        self.ok(&[&["evaluate", "--out", "out/report.json"][..], &c].concat());
        self.ok(&[&["graph"][..], &c].concat());
        self.ok(&[&["train", "--out", "out/train_metrics.json", "--cv-folds", "3"][..], &c].concat());
        self.ok(&[&["predict", "--out", "out/candidates.jsonl"][..], &c].concat());
    }

    pub fn read(&self, rel: &str) -> String {
        fs::read_to_string(self.path(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }
}

pub const PIPELINE_OUTPUTS: &[&str] = &[
    "out/predictions.jsonl",
    "out/report.json",
    "out/graph/nodes.jsonl",
    "out/graph/edges.txt",
    "out/model.json",
    "out/history.jsonl",
    "out/train_metrics.json",
    "out/candidates.jsonl",
];

/// Outputs compared against `tests/golden/` (by file name).
pub const GOLDEN_OUTPUTS: &[&str] = &[
    "out/predictions.jsonl",
    "out/report.json",
    "out/graph/nodes.jsonl",
    "out/graph/edges.txt",
    "out/train_metrics.json",
    "out/candidates.jsonl",
];

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Drops a leading provenance line so outputs from different configs compare.
pub fn without_provenance(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with("{\"provenance\"") && !l.starts_with("# provenance"))
        .collect::<Vec<_>>()
        .join("\n")
}
