#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use layerwise::data::{write_idx_images, write_idx_labels, IdxImages, MNIST_FILES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Square images whose class decides where a bright patch sits, plus
/// uniform background noise. Pixels are 0..=255.
pub fn synthetic_images(n: usize, side: usize, classes: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patch = (side / 3).max(1);
    let mut pixels = Vec::with_capacity(n * side * side);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        labels.push(c as u8);
        let angle = c as f64 * std::f64::consts::TAU / classes as f64;
        let span = (side - patch) as f64 / 2.0;
        let r0 = (span + span * angle.sin()).round() as usize;
        let c0 = (span + span * angle.cos()).round() as usize;
        for r in 0..side {
            for col in 0..side {
                let inside = (r0..r0 + patch).contains(&r) && (c0..c0 + patch).contains(&col);
                let v = if inside {
                    rng.gen_range(150..=255)
                } else {
                    rng.gen_range(0..=100)
                };
                pixels.push(v as u8);
            }
        }
    }
    (pixels, labels)
}

/// Writes train and test IDX files under the standard MNIST names.
pub fn write_idx_fixture(dir: &Path, n_train: usize, n_test: usize, side: usize, classes: usize) {
    for (i, (n, seed)) in [(n_train, 1), (n_test, 2)].into_iter().enumerate() {
        let (pixels, labels) = synthetic_images(n, side, classes, seed);
        let images = IdxImages {
            count: n,
            rows: side,
            cols: side,
            pixels,
        };
        write_idx_images(dir.join(MNIST_FILES[2 * i]), &images).unwrap();
        write_idx_labels(dir.join(MNIST_FILES[2 * i + 1]), &labels).unwrap();
    }
}

/// Label-first pixel CSV.
pub fn write_csv_fixture(
    path: &Path,
    n: usize,
    side: usize,
    classes: usize,
    header: bool,
    seed: u64,
) {
    let (pixels, labels) = synthetic_images(n, side, classes, seed);
    let mut text = String::new();
    if header {
        text.push_str("label");
        for j in 0..side * side {
            text.push_str(&format!(",p{j}"));
        }
        text.push('\n');
    }
    for (i, label) in labels.iter().enumerate() {
        text.push_str(&label.to_string());
        for p in &pixels[i * side * side..(i + 1) * side * side] {
            text.push_str(&format!(",{p}"));
        }
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

pub fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_layerwise"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// The value printed as `test_error=<v>`.
pub fn printed_error(o: &Output) -> f64 {
    let out = stdout(o);
    let line = out
        .lines()
        .find_map(|l| l.strip_prefix("test_error="))
        .unwrap_or_else(|| panic!("no test_error line in {out:?}; stderr {}", stderr(o)));
    line.trim().parse().unwrap()
}

/// MNIST IDX directory: `LAYERWISE_MNIST_DIR`, else `data/mnist` at the
/// workspace root. `None` when the files are missing.
pub fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("LAYERWISE_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    MNIST_FILES
        .iter()
        .all(|f| dir.join(f).is_file())
        .then_some(dir)
}

pub fn write(path: &Path, text: &str) -> PathBuf {
    std::fs::write(path, text).unwrap();
    path.to_path_buf()
}
