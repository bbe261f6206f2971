#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_promptdict"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures").join(name)
}

pub fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout))
    })
}

const VOCAB: &[&str] = &[
    "INFO", "WARN", "ERROR", "user", "session", "opened", "closed", "for", "root", "from", "port",
    "22", "ssh2", "id=42", "block", "blk_-1608", "received", "size", "67108864", "src:", "/10.250.19.102",
    "dest:", "[main]", "kernel:", "é", "naïve", "日本", "a", "b", "c",
];

const META_LIKE: &[&str] = &["<M1>", "<M3>", "x<M12>y", "<M01>", "<M>", "<M2", "M4>", "<<M5>>", "<M0>"];

const SEPARATORS: &[&str] = &[" ", " ", " ", "  ", "\t", "\n", "\r\n", " \n", "\x0b", "\x0c", "\n\n"];

fn word(rng: &mut StdRng, meta_rate: f64) -> String {
    if rng.gen_bool(meta_rate) {
        META_LIKE.choose(rng).unwrap().to_string()
    } else if rng.gen_bool(0.1) {
        format!("v{}", rng.gen_range(0..50))
    } else {
        VOCAB.choose(rng).unwrap().to_string()
    }
}

/// A synthetic log-like text: a few recurring phrases interleaved with noise,
/// joined by assorted whitespace, with optional leading/trailing whitespace.
pub fn random_corpus(rng: &mut StdRng) -> String {
    let meta_rate = *[0.0, 0.0, 0.02, 0.1].choose(rng).unwrap();
    let phrases: Vec<Vec<String>> = (0..rng.gen_range(1..=5))
        .map(|_| (0..rng.gen_range(1..=8)).map(|_| word(rng, meta_rate)).collect())
        .collect();
    let repeat_rate = rng.gen_range(0.0..1.0);
    let target = rng.gen_range(0..=120);
    let mut words: Vec<String> = Vec::new();
    while words.len() < target {
        if rng.gen_bool(repeat_rate) {
            words.extend(phrases.choose(rng).unwrap().iter().cloned());
        } else {
            words.push(word(rng, meta_rate));
        }
    }
    let sep_variety = rng.gen_range(1..=SEPARATORS.len());
    let mut text = String::new();
    if rng.gen_bool(0.2) {
        text.push_str(SEPARATORS[rng.gen_range(0..sep_variety)]);
    }
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            text.push_str(SEPARATORS[rng.gen_range(0..sep_variety)]);
        }
        text.push_str(w);
    }
    if rng.gen_bool(0.3) {
        text.push('\n');
    }
    text
}
