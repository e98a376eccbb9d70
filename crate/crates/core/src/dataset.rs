//! MNIST-family datasets in IDX format, optionally gzip-compressed.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{QpfError, Result};
use crate::filter::Image;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Decoded contents of an IDX image file.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count·rows·cols` intensities in `[0, 1]`.
    pub pixels: Vec<f32>,
}

impl IdxImages {
    pub fn image_slice(&self, i: usize) -> &[f32] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn into_images(self) -> Result<Vec<Image>> {
        let n = self.rows * self.cols;
        (0..self.count)
            .map(|i| Image::new(self.cols, self.rows, self.pixels[i * n..(i + 1) * n].to_vec()))
            .collect()
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| QpfError::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        MultiGzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| QpfError::Format {
                path: path.to_path_buf(),
                reason: format!("gzip: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(path: &Path, bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| QpfError::Truncated {
            path: path.to_path_buf(),
            needed: at + 4,
            found: bytes.len(),
        })
}

fn check_magic(path: &Path, bytes: &[u8], expected: u32) -> Result<()> {
    let found = be_u32(path, bytes, 0)?;
    if found != expected {
        return Err(QpfError::BadMagic {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

pub fn read_idx_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    check_magic(path, &bytes, IMAGES_MAGIC)?;
    let count = be_u32(path, &bytes, 4)? as usize;
    let rows = be_u32(path, &bytes, 8)? as usize;
    let cols = be_u32(path, &bytes, 12)? as usize;
    let total = count
        .checked_mul(rows)
        .and_then(|x| x.checked_mul(cols))
        .ok_or_else(|| QpfError::DimensionOverflow {
            path: path.to_path_buf(),
        })?;
    let needed = total
        .checked_add(16)
        .ok_or_else(|| QpfError::DimensionOverflow {
            path: path.to_path_buf(),
        })?;
    if bytes.len() < needed {
        return Err(QpfError::Truncated {
            path: path.to_path_buf(),
            needed,
            found: bytes.len(),
        });
    }
    let pixels = bytes[16..needed].iter().map(|&v| v as f32 / 255.0).collect();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    check_magic(path, &bytes, LABELS_MAGIC)?;
    let count = be_u32(path, &bytes, 4)? as usize;
    let needed = count + 8;
    if bytes.len() < needed {
        return Err(QpfError::Truncated {
            path: path.to_path_buf(),
            needed,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..needed].to_vec())
}

fn create(path: &Path, gzip: bool) -> Result<Box<dyn Write>> {
    let file = BufWriter::new(File::create(path).map_err(|e| QpfError::io(path, e))?);
    Ok(if gzip {
        Box::new(GzEncoder::new(file, Compression::default()))
    } else {
        Box::new(file)
    })
}

/// Writes images as unsigned bytes, `round(255·x)`.
pub fn write_idx_images(path: impl AsRef<Path>, images: &[Image], gzip: bool) -> Result<()> {
    let path = path.as_ref();
    let (rows, cols) = images
        .first()
        .map(|im| (im.height(), im.width()))
        .unwrap_or((0, 0));
    if images.iter().any(|im| (im.height(), im.width()) != (rows, cols)) {
        return Err(QpfError::MixedDimensions);
    }
    let mut buf = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        buf.extend_from_slice(&v.to_be_bytes());
    }
    for im in images {
        buf.extend(im.pixels().iter().map(|&x| (x * 255.0).round() as u8));
    }
    let mut w = create(path, gzip)?;
    w.write_all(&buf)
        .and_then(|_| w.flush())
        .map_err(|e| QpfError::io(path, e))
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8], gzip: bool) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(8 + labels.len());
    buf.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    buf.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    buf.extend_from_slice(labels);
    let mut w = create(path, gzip)?;
    w.write_all(&buf)
        .and_then(|_| w.flush())
        .map_err(|e| QpfError::io(path, e))
}

/// Images with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    images: Vec<Image>,
    labels: Vec<usize>,
    classes: usize,
}

impl LabeledDataset {
    /// `classes` defaults to one past the largest label.
    pub fn new(
        name: impl Into<String>,
        images: Vec<Image>,
        labels: Vec<usize>,
        classes: Option<usize>,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(QpfError::LengthMismatch {
                images: images.len(),
                labels: labels.len(),
            });
        }
        if let Some(first) = images.first() {
            let dims = (first.width(), first.height());
            if images.iter().any(|im| (im.width(), im.height()) != dims) {
                return Err(QpfError::MixedDimensions);
            }
        }
        let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(QpfError::LabelOutOfRange { label, classes });
        }
        Ok(LabeledDataset {
            name: name.into(),
            images,
            labels,
            classes,
        })
    }

    /// Loads a paired image/label IDX file set.
    pub fn load(
        name: impl Into<String>,
        images: impl AsRef<Path>,
        labels: impl AsRef<Path>,
    ) -> Result<Self> {
        let raw = read_idx_images(images)?;
        let labels: Vec<usize> = read_idx_labels(labels)?
            .into_iter()
            .map(usize::from)
            .collect();
        LabeledDataset::new(name, raw.into_images()?, labels, None)
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    fn select(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            name: self.name.clone(),
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// Deterministic stratified subsample of `n` items.
    ///
    /// Each class receives its proportional quota (largest remainder, ties to
    /// the lower class index), members are drawn from a seeded shuffle of that
    /// class, and the combined selection is shuffled once more.
    pub fn subsample(&self, n: usize, seed: u64) -> Result<LabeledDataset> {
        let total = self.len();
        if n > total {
            return Err(QpfError::SubsampleTooLarge {
                requested: n,
                available: total,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        for members in &mut by_class {
            members.shuffle(&mut rng);
        }

        let mut quota: Vec<usize> = by_class.iter().map(|m| m.len() * n / total.max(1)).collect();
        let mut short = n - quota.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..self.classes).collect();
        // remainder of count·n / total, compared exactly in integers
        order.sort_by_key(|&k| std::cmp::Reverse(by_class[k].len() * n % total.max(1)));
        for &k in order.iter().cycle().take(order.len() * 2) {
            if short == 0 {
                break;
            }
            if quota[k] < by_class[k].len() {
                quota[k] += 1;
                short -= 1;
            }
        }

        let mut chosen: Vec<usize> = by_class
            .iter()
            .zip(&quota)
            .flat_map(|(m, &q)| m[..q].iter().copied())
            .collect();
        chosen.shuffle(&mut rng);
        Ok(self.select(&chosen))
    }
}

/// Where a dataset's files live, recorded in result tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetFiles {
    pub name: String,
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub val_images: PathBuf,
    pub val_labels: PathBuf,
}

impl DatasetFiles {
    /// Standard MNIST file names inside `dir`, preferring `.gz` when present.
    pub fn in_dir(name: impl Into<String>, dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        let pick = |stem: &str| {
            let gz = dir.join(format!("{stem}.gz"));
            if gz.exists() {
                gz
            } else {
                dir.join(stem)
            }
        };
        DatasetFiles {
            name: name.into(),
            train_images: pick("train-images-idx3-ubyte"),
            train_labels: pick("train-labels-idx1-ubyte"),
            val_images: pick("t10k-images-idx3-ubyte"),
            val_labels: pick("t10k-labels-idx1-ubyte"),
        }
    }

    pub fn load_train(&self) -> Result<LabeledDataset> {
        LabeledDataset::load(&self.name, &self.train_images, &self.train_labels)
    }

    pub fn load_validation(&self) -> Result<LabeledDataset> {
        LabeledDataset::load(&self.name, &self.val_images, &self.val_labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize, classes: usize) -> LabeledDataset {
        let images = (0..n)
            .map(|i| Image::from_bytes(2, 2, &[(i % 256) as u8, 0, 255, 7]).unwrap())
            .collect();
        let labels = (0..n).map(|i| i % classes).collect();
        LabeledDataset::new("tiny", images, labels, Some(classes)).unwrap()
    }

    #[test]
    fn single_image_file_scales_to_unit_interval() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one");
        let mut bytes = Vec::new();
        for v in [IMAGES_MAGIC, 1, 2, 2] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        bytes.extend_from_slice(&[255, 0, 0, 51]);
        std::fs::write(&path, &bytes).unwrap();
        let raw = read_idx_images(&path).unwrap();
        assert_eq!((raw.count, raw.rows, raw.cols), (1, 2, 2));
        assert_eq!(raw.pixels[0], 1.0);
        assert_eq!(raw.pixels[3], 0.2);
    }

    #[test]
    fn magic_and_truncation_errors() {
        let dir = tempfile::tempdir().unwrap();
        let labels = dir.path().join("labels");
        write_idx_labels(&labels, &[1, 2, 3], false).unwrap();
        assert!(matches!(
            read_idx_images(&labels),
            Err(QpfError::BadMagic { found: LABELS_MAGIC, .. })
        ));

        let mut bytes = std::fs::read(&labels).unwrap();
        bytes.pop();
        std::fs::write(&labels, &bytes).unwrap();
        assert!(matches!(read_idx_labels(&labels), Err(QpfError::Truncated { .. })));

        let empty = dir.path().join("empty");
        write_idx_labels(&empty, &[], false).unwrap();
        assert_eq!(read_idx_labels(&empty).unwrap(), Vec::<u8>::new());

        let huge = dir.path().join("huge");
        let mut bytes = Vec::new();
        for v in [IMAGES_MAGIC, u32::MAX, u32::MAX, u32::MAX] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        std::fs::write(&huge, &bytes).unwrap();
        assert!(matches!(
            read_idx_images(&huge),
            Err(QpfError::DimensionOverflow { .. }) | Err(QpfError::Truncated { .. })
        ));

        assert!(matches!(
            read_idx_images(dir.path().join("missing")),
            Err(QpfError::Io { .. })
        ));
    }

    #[test]
    fn gzip_round_trip() {
        let ds = tiny(9, 3);
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i.gz"), dir.path().join("l.gz"));
        write_idx_images(&ip, ds.images(), true).unwrap();
        let labels: Vec<u8> = ds.labels().iter().map(|&l| l as u8).collect();
        write_idx_labels(&lp, &labels, true).unwrap();
        assert_eq!(std::fs::read(&ip).unwrap()[..2], [0x1f, 0x8b]);
        let back = LabeledDataset::load("tiny", &ip, &lp).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn dataset_invariants() {
        let im = Image::new(2, 2, vec![0.0; 4]).unwrap();
        assert!(LabeledDataset::new("x", vec![im.clone()], vec![], None).is_err());
        assert!(LabeledDataset::new("x", vec![im.clone()], vec![5], Some(3)).is_err());
        let big = Image::new(4, 2, vec![0.0; 8]).unwrap();
        assert!(matches!(
            LabeledDataset::new("x", vec![im, big], vec![0, 1], None),
            Err(QpfError::MixedDimensions)
        ));
    }

    #[test]
    fn subsample_contract() {
        let ds = tiny(100, 4);
        let full = ds.subsample(100, 1).unwrap();
        let mut a: Vec<_> = full.images().iter().map(|im| im.get(0, 0).to_bits()).collect();
        let mut b: Vec<_> = ds.images().iter().map(|im| im.get(0, 0).to_bits()).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);

        assert_eq!(ds.subsample(37, 5).unwrap(), ds.subsample(37, 5).unwrap());
        assert_ne!(ds.subsample(37, 5).unwrap(), ds.subsample(37, 6).unwrap());
        assert!(ds.subsample(101, 0).is_err());
    }

    #[test]
    fn subsample_is_proportional_for_unbalanced_classes() {
        let labels: Vec<usize> = (0..1000).map(|i| if i < 700 { 0 } else if i < 950 { 1 } else { 2 }).collect();
        let images = vec![Image::new(2, 2, vec![0.0; 4]).unwrap(); 1000];
        let ds = LabeledDataset::new("u", images, labels, None).unwrap();
        let sub = ds.subsample(101, 3).unwrap();
        let counts = sub.class_counts();
        assert_eq!(counts.iter().sum::<usize>(), 101);
        for (k, &c) in counts.iter().enumerate() {
            let ideal = ds.class_counts()[k] as f64 * 101.0 / 1000.0;
            assert!((c as f64 - ideal).abs() <= 1.0, "class {k}: {c} vs {ideal}");
        }
    }
}
