#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use seqmem::stream::Task;

/// Marker positions of the golden stream: task i carries HINT when
/// `HINTS[i - 1] == 1`.
pub const HINTS: [u8; 20] = [1, 1, 1, 0, 0, 0, 0, 1, 1, 1, 1, 1, 0, 0, 1, 1, 1, 1, 1, 1];

/// Answers with the current key only when a HINT-bearing experience sits in
/// the memory section of the prompt.
pub const HINT_RULE: &str = r"(?s)Relevant past experience:.*HINT.*---.*key=(\w+)";

pub fn golden_tasks() -> Vec<Task> {
    let mut tasks: Vec<Task> = HINTS
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            let n = i + 1;
            let prompt = if h == 1 { format!("key=W{n} HINT") } else { format!("key=W{n}") };
            Task::new(format!("w{n}"), prompt, format!("W{n}"))
        })
        .collect();
    tasks.extend((1..=5).map(|j| Task::new(format!("h{j}"), format!("key=H{j}"), format!("H{j}"))));
    tasks
}

pub fn write_jsonl(path: &Path, tasks: &[Task]) {
    let text: String = tasks.iter().map(|t| serde_json::to_string(t).unwrap() + "\n").collect();
    fs::write(path, text).unwrap();
}

/// Golden dataset and config in `dir`; returns the config path. The run
/// writes to `dir/<out>`.
pub fn golden_fixture(dir: &Path, out: &str) -> PathBuf {
    write_jsonl(&dir.join("golden.jsonl"), &golden_tasks());
    let cfg = format!(
        r#"output_dir = "{out}"
seed = 0

[dataset]
id = "golden"
path = "golden.jsonl"
split = {{ mode = "tail_fraction", fraction = 0.2 }}

[policy]
id = "exp_recent"
k = 1

[gateway]
backend = "scripted"

[gateway.script]
default = "WRONG"

[[gateway.script.rules]]
pattern = '{HINT_RULE}'
response = "$1"

[schedule]
n_checkpoints = 20
horizons = [1, 2, 5]
"#
    );
    let path = dir.join("golden.toml");
    fs::write(&path, cfg).unwrap();
    path
}

/// `metric,value` rows of the frozen golden file.
pub fn golden_values() -> Vec<(String, String)> {
    let text = include_str!("../golden/golden_metrics.csv");
    text.lines()
        .skip(1)
        .map(|l| {
            let (k, v) = l.split_once(',').unwrap();
            (k.to_string(), v.to_string())
        })
        .collect()
}

/// Tiny xorshift stream for generating test inputs without sharing code
/// with the library's seeded sampling.
pub struct Xorshift(pub u64);

impl Xorshift {
    pub fn next(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next() % n
    }

    pub fn bit(&mut self, p_num: u64, p_den: u64) -> u8 {
        u8::from(self.below(p_den) < p_num)
    }
}
