#![allow(dead_code)]

use std::path::Path;

use vcprof::pipeline::{Pipeline, RunConfig};
use vcprof::synth::{self, SynthParams, SynthWorld};

/// Writes a synthetic world and its sample config into `dir`.
pub fn world_in(dir: &Path, params: &SynthParams, seed: u64) -> SynthWorld {
    let w = synth::generate(params, seed);
    w.write(dir).unwrap();
    std::fs::write(dir.join("vcprof.toml"), synth::sample_config(seed)).unwrap();
    w
}

pub fn config_in(dir: &Path, tweak: impl FnOnce(&mut RunConfig)) -> RunConfig {
    let mut cfg = RunConfig::load(&dir.join("vcprof.toml")).unwrap();
    tweak(&mut cfg);
    cfg
}

pub fn pipeline(dir: &Path, params: &SynthParams, seed: u64, tweak: impl FnOnce(&mut RunConfig)) -> (Pipeline, SynthWorld) {
    let w = world_in(dir, params, seed);
    let cfg = config_in(dir, tweak);
    (Pipeline::new(cfg).unwrap(), w)
}

/// Every file below `dir`, relative path and bytes, sorted by path.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_file() {
            out.push((p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}
