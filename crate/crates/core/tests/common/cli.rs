//! Helpers for driving the `tmaxer` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

pub const SMALL_CONFIG: &str = r#"
[data]
num_videos = 3
length = 32
input_dim = 4
num_classes = 2
max_duration = 10

[model]
embed_dim = 8
num_levels = 3

[train]
steps = 5
batch_size = 2
"#;

pub fn tmaxer(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tmaxer"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("failed to spawn tmaxer")
}

pub fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Runs synth, train, infer and eval in `dir` and returns the eval output.
pub fn pipeline(dir: &Path) -> String {
    fs::write(dir.join("config.toml"), SMALL_CONFIG).unwrap();
    let c = ["--config", "config.toml", "--seed", "7"];
    ok(tmaxer(&[&c[..], &["synth", "--out", "data"]].concat(), dir));
    ok(tmaxer(
        &[
            &c[..],
            &[
                "train",
                "--features",
                "data/features",
                "--annotations",
                "data/annotations.json",
                "--out",
                "run",
            ],
        ]
        .concat(),
        dir,
    ));
    ok(tmaxer(
        &[
            &c[..],
            &[
                "infer",
                "--checkpoint",
                "run/model.ckpt",
                "--features",
                "data/features",
                "--out",
                "pred.json",
            ],
        ]
        .concat(),
        dir,
    ));
    ok(tmaxer(
        &[
            &c[..],
            &[
                "eval",
                "--predictions",
                "pred.json",
                "--annotations",
                "data/annotations.json",
            ],
        ]
        .concat(),
        dir,
    ))
}

pub fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                files.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}
