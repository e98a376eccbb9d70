#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qpf_core::dataset::{write_idx_images, write_idx_labels};
use qpf_core::Image;

pub fn qpf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qpf"))
}

pub fn run(args: &[&str]) -> Output {
    qpf().args(args).output().expect("spawn qpf")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

/// `n` 28×28 images in three classes; class `k` brightens band `k` of the
/// image, with a deterministic hash for texture.
pub fn synthetic_images(n: usize, salt: usize) -> (Vec<Image>, Vec<u8>) {
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 3;
        let bytes: Vec<u8> = (0..28 * 28)
            .map(|k| {
                let row = k / 28;
                let noise = ((k * 2654435761 + (i + salt) * 40503) >> 7) % 60;
                let base = if row / 10 == class { 180 } else { 10 };
                (base + noise) as u8
            })
            .collect();
        images.push(Image::from_bytes(28, 28, &bytes).unwrap());
        labels.push(class as u8);
    }
    (images, labels)
}

/// Writes train/t10k IDX files into `dir` and returns it.
pub fn synthetic_dataset(dir: &Path, train: usize, val: usize) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let (ti, tl) = synthetic_images(train, 0);
    let (vi, vl) = synthetic_images(val, 1000);
    write_idx_images(dir.join("train-images-idx3-ubyte.gz"), &ti, true).unwrap();
    write_idx_labels(dir.join("train-labels-idx1-ubyte.gz"), &tl, true).unwrap();
    write_idx_images(dir.join("t10k-images-idx3-ubyte"), &vi, false).unwrap();
    write_idx_labels(dir.join("t10k-labels-idx1-ubyte"), &vl, false).unwrap();
    dir.to_path_buf()
}

pub fn write_plan(path: &Path, data_dir: &Path) {
    let text = format!(
        r#"
configs = ["diagonal", "vertical", "horizontal:rev,fwd"]
depths = [0, 1]
train_subsample = 60
val_subsample = 30
epochs = 3
batch_size = 16

[[datasets]]
name = "toy"
dir = "{}"
"#,
        data_dir.display()
    );
    std::fs::write(path, text).unwrap();
}
