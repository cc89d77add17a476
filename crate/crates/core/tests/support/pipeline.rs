//! Small end-to-end runs in temporary directories.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use earlygest::config::RunConfig;
use earlygest::pipeline;

/// Two classes, 16 x 16 crops, two epochs: seconds per run.
pub const TINY: &str = r#"
seed = 11
[generator]
num_classes = 2
train_per_class = 3
test_per_class = 2
height = 20
width = 20
slot_frames = 16
gesture_frames = [6, 8]
min_gap = 1
amplitude = [3.0, 4.0]
center_jitter = 1.0
[model]
conv_widths = [2, 4]
linear_width = 8
recurrent_units = 4
[training]
epochs = 2
finetune_epochs = 1
frames_per_slot = 8
[training.augmentation]
crop = 16
translation = 1
[detector]
epsilon = 0.3
"#;

pub fn config(text: &str, out: &Path) -> RunConfig {
    let mut cfg = RunConfig::from_toml_str(text).unwrap();
    cfg.paths.out = out.to_path_buf();
    cfg
}

/// generate, train and eval with `cfg`.
pub fn run_all(cfg: &RunConfig) -> earlygest::Result<()> {
    pipeline::generate(cfg, true)?;
    pipeline::train_models(cfg, &mut |_| {})?;
    pipeline::evaluate_and_emit(cfg)?;
    Ok(())
}

/// Every file under `root`, keyed by relative path.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Runs the pipeline twice into the same directory (cleared in between) and
/// lists files whose bytes differ or that exist in only one run.
pub fn rerun_differences(cfg: &RunConfig) -> earlygest::Result<(usize, Vec<PathBuf>)> {
    let root = &cfg.paths.out;
    run_all(cfg)?;
    let first = snapshot(root);
    for entry in std::fs::read_dir(root).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            std::fs::remove_dir_all(&p).unwrap();
        } else {
            std::fs::remove_file(&p).unwrap();
        }
    }
    run_all(cfg)?;
    let second = snapshot(root);
    let mut diff: Vec<PathBuf> = first
        .iter()
        .filter(|(k, v)| second.get(*k) != Some(*v))
        .map(|(k, _)| k.clone())
        .collect();
    diff.extend(second.keys().filter(|k| !first.contains_key(*k)).cloned());
    Ok((first.len(), diff))
}
