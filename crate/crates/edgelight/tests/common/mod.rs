//! Shared helpers for loopback network tests.

use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard, OnceLock};

use edgelight::agent::FrameContent;
use edgelight::config::ConfigDoc;

/// Serializes the tests that measure wall-clock behavior or bind sockets so
/// they do not contend with each other inside one test binary.
pub fn net_lock() -> MutexGuard<'static, ()> {
    static LOCK: OnceLock<Mutex<()>> = OnceLock::new();
    LOCK.get_or_init(|| Mutex::new(())).lock().unwrap_or_else(|e| e.into_inner())
}

/// A config document with every duration compressed for fast loopback runs.
pub fn compressed_config(
    epoch_interval_s: f64,
    sample_low_s: f64,
    sample_mid_s: f64,
    min_green_s: f64,
) -> ConfigDoc {
    let mut doc = ConfigDoc::default();
    doc.epoch_interval_s = epoch_interval_s;
    doc.controller.sample_interval_low_s = sample_low_s;
    doc.controller.sample_interval_mid_s = sample_mid_s;
    doc.controller.min_green_s = min_green_s;
    doc.controller.threshold_time_s = 120.0;
    doc
}

pub fn constant_frames(count: u32, n: usize) -> Vec<FrameContent> {
    std::iter::repeat_with(|| FrameContent { count, readings: Vec::new() }).take(n).collect()
}

pub fn out_dir(root: &Path, name: &str) -> PathBuf {
    let dir = root.join(name);
    std::fs::create_dir_all(&dir).expect("create out dir");
    dir
}
