#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use chrono::{Duration, NaiveDate};
use gmv_shrink::exec::stream_rng;
use gmv_shrink::io::{write_returns, ReturnsFile};
use gmv_shrink::sim::{build_population_with, Generator, GeneratorOptions, Scenario};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gmvshrink"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

/// One continuous t5 series of `obs` days over `p` assets.
pub fn synthetic_returns(p: usize, obs: usize, seed: u64) -> ReturnsFile {
    let mut rng = stream_rng(seed, 0);
    let pop = build_population_with(p, &mut rng).unwrap();
    let mut generator = Generator::new(&pop, Scenario::T5, GeneratorOptions::default(), &mut rng).unwrap();
    let block = generator.next_block(obs, &mut rng).unwrap();
    // Scale to daily-return magnitudes.
    let returns = gmv_shrink::ReturnsBlock::new(block.values() * 0.01).unwrap();
    let start = NaiveDate::from_ymd_opt(2000, 1, 3).unwrap();
    ReturnsFile {
        dates: (0..obs).map(|t| start + Duration::days(t as i64)).collect(),
        assets: (1..=p).map(|j| format!("A{j}")).collect(),
        returns,
    }
}

pub fn write_synthetic(path: &Path, p: usize, obs: usize, seed: u64) {
    let f = synthetic_returns(p, obs, seed);
    write_returns(&f, std::fs::File::create(path).unwrap()).unwrap();
}

/// `key=value` lookup in a report document.
pub fn kv<'a>(doc: &'a str, key: &str) -> Option<&'a str> {
    doc.lines().find_map(|l| l.strip_prefix(key)?.strip_prefix('='))
}

/// Data rows of a CSV that may start with `#` comment lines.
pub fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}
