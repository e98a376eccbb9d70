//! The 2×2 quantum pre-processing filter.
//!
//! An image is cut into non-overlapping 2×2 patches. Within a patch the pixels
//! are indexed row-major (0 = top-left, 1 = top-right, 2 = bottom-left,
//! 3 = bottom-right), each pixel is angle-encoded on its own qubit and the four
//! qubits are entangled in two independent CNOT pairs. Channel `k` of the
//! output holds the measurement of the qubit that encodes pixel `k`.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{QpfError, Result};
use crate::parallel::{self, Exec};
use crate::qkernel::{channel_probabilities, Angle};

/// Which pixels of a patch are entangled with each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Symmetry {
    Diagonal,
    Vertical,
    Horizontal,
}

impl Symmetry {
    pub const ALL: [Symmetry; 3] = [Symmetry::Diagonal, Symmetry::Vertical, Symmetry::Horizontal];

    /// Pixel pairs, lower index first; the pair holding pixel 0 comes first.
    pub fn pixel_pairs(self) -> [(usize, usize); 2] {
        match self {
            Symmetry::Diagonal => [(0, 3), (1, 2)],
            Symmetry::Vertical => [(0, 1), (2, 3)],
            Symmetry::Horizontal => [(0, 2), (1, 3)],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Symmetry::Diagonal => "diagonal",
            Symmetry::Vertical => "vertical",
            Symmetry::Horizontal => "horizontal",
        }
    }

    fn from_partner_of_zero(partner: usize) -> Symmetry {
        match partner {
            3 => Symmetry::Diagonal,
            1 => Symmetry::Vertical,
            _ => Symmetry::Horizontal,
        }
    }
}

impl fmt::Display for Symmetry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Symmetry {
    type Err = QpfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diagonal" => Ok(Symmetry::Diagonal),
            "vertical" => Ok(Symmetry::Vertical),
            "horizontal" => Ok(Symmetry::Horizontal),
            other => Err(QpfError::Config(format!("unknown symmetry '{other}'"))),
        }
    }
}

/// CNOT orientation within a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub enum Direction {
    #[default]
    #[serde(rename = "fwd")]
    Forward,
    #[serde(rename = "rev")]
    Reversed,
}

impl Direction {
    pub const ALL: [Direction; 2] = [Direction::Forward, Direction::Reversed];

    pub fn flip(self) -> Direction {
        match self {
            Direction::Forward => Direction::Reversed,
            Direction::Reversed => Direction::Forward,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Forward => "fwd",
            Direction::Reversed => "rev",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Direction {
    type Err = QpfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fwd" | "forward" => Ok(Direction::Forward),
            "rev" | "reversed" => Ok(Direction::Reversed),
            other => Err(QpfError::Config(format!("unknown direction '{other}'"))),
        }
    }
}

/// What number a measured qubit contributes to its channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Observable {
    /// `P(|1⟩)`, in `[0, 1]`.
    #[default]
    #[serde(rename = "p1")]
    ProbOne,
    /// `⟨Z⟩ = 1 − 2·P(|1⟩)`, in `[-1, 1]`.
    #[serde(rename = "z")]
    ExpectationZ,
}

impl Observable {
    fn apply(self, p1: f64) -> f64 {
        match self {
            Observable::ProbOne => p1,
            Observable::ExpectationZ => 1.0 - 2.0 * p1,
        }
    }
}

impl FromStr for Observable {
    type Err = QpfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p1" => Ok(Observable::ProbOne),
            "z" => Ok(Observable::ExpectationZ),
            other => Err(QpfError::Config(format!("unknown observable '{other}'"))),
        }
    }
}

/// A pixel-to-qubit assignment: qubit `q` encodes pixel `self.pixels()[q]`.
///
/// The circuit is fixed as `CNOT(q0 → q1)` and `CNOT(q2 → q3)`, so the
/// permutation decides both the pairing and the control pixel of each pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Permutation([usize; 4]);

impl Permutation {
    pub fn new(pixels: [usize; 4]) -> Result<Self> {
        let mut seen = [false; 4];
        for &p in &pixels {
            if p >= 4 || seen[p] {
                return Err(QpfError::InvalidPermutation(pixels.to_vec()));
            }
            seen[p] = true;
        }
        Ok(Permutation(pixels))
    }

    pub fn pixels(&self) -> [usize; 4] {
        self.0
    }

    /// The named configuration that yields identical channels.
    pub fn equivalent_named(&self, observable: Observable) -> KernelConfig {
        let p = self.0;
        let (first, second) = if p[0] == 0 || p[1] == 0 {
            ((p[0], p[1]), (p[2], p[3]))
        } else {
            ((p[2], p[3]), (p[0], p[1]))
        };
        let dir = |(control, target): (usize, usize)| {
            if control < target {
                Direction::Forward
            } else {
                Direction::Reversed
            }
        };
        KernelConfig {
            pairing: Pairing::Named(classify_permutation(self)),
            dir1: dir(first),
            dir2: dir(second),
            observable,
        }
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.0;
        write!(f, "{},{},{},{}", p[0], p[1], p[2], p[3])
    }
}

impl FromStr for Permutation {
    type Err = QpfError;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| QpfError::Config(format!("cannot parse permutation '{s}'")))?;
        let arr: [usize; 4] = parts
            .clone()
            .try_into()
            .map_err(|_| QpfError::InvalidPermutation(parts))?;
        Permutation::new(arr)
    }
}

/// All 24 permutations of `(0, 1, 2, 3)` in lexicographic order.
pub fn enumerate_permutations() -> Vec<Permutation> {
    let mut out = Vec::with_capacity(24);
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    if let Ok(p) = Permutation::new([a, b, c, d]) {
                        out.push(p);
                    }
                }
            }
        }
    }
    out
}

/// Names the spatial symmetry a permutation induces.
pub fn classify_permutation(perm: &Permutation) -> Symmetry {
    let p = perm.0;
    let partner = match p.iter().position(|&x| x == 0) {
        Some(0) => p[1],
        Some(1) => p[0],
        Some(2) => p[3],
        _ => p[2],
    };
    Symmetry::from_partner_of_zero(partner)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pairing {
    Named(Symmetry),
    Explicit(Permutation),
}

/// One variant of the filter.
///
/// For a named symmetry, `Forward` makes the lower pixel index the control.
/// For an explicit permutation, `Forward` keeps the circuit's own
/// `q0 → q1` / `q2 → q3` orientation and `dir1`/`dir2` refer to those two CNOTs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KernelConfig {
    pub pairing: Pairing,
    pub dir1: Direction,
    pub dir2: Direction,
    pub observable: Observable,
}

impl KernelConfig {
    pub fn named(symmetry: Symmetry) -> Self {
        KernelConfig {
            pairing: Pairing::Named(symmetry),
            dir1: Direction::Forward,
            dir2: Direction::Forward,
            observable: Observable::ProbOne,
        }
    }

    pub fn permutation(perm: Permutation) -> Self {
        KernelConfig {
            pairing: Pairing::Explicit(perm),
            ..KernelConfig::named(Symmetry::Diagonal)
        }
    }

    pub fn with_directions(mut self, dir1: Direction, dir2: Direction) -> Self {
        self.dir1 = dir1;
        self.dir2 = dir2;
        self
    }

    pub fn with_observable(mut self, observable: Observable) -> Self {
        self.observable = observable;
        self
    }

    pub fn symmetry(&self) -> Symmetry {
        match self.pairing {
            Pairing::Named(s) => s,
            Pairing::Explicit(p) => classify_permutation(&p),
        }
    }

    /// `(control pixel, target pixel)` for both CNOTs.
    pub fn control_target_pairs(&self) -> [(usize, usize); 2] {
        let base = match self.pairing {
            Pairing::Named(s) => s.pixel_pairs(),
            Pairing::Explicit(p) => {
                let p = p.pixels();
                [(p[0], p[1]), (p[2], p[3])]
            }
        };
        let orient = |(c, t): (usize, usize), d: Direction| match d {
            Direction::Forward => (c, t),
            Direction::Reversed => (t, c),
        };
        [orient(base[0], self.dir1), orient(base[1], self.dir2)]
    }

    /// Short identifier used in result tables.
    pub fn label(&self) -> String {
        match self.pairing {
            Pairing::Named(s) => s.name().to_string(),
            Pairing::Explicit(p) => {
                let p = p.pixels();
                format!("perm{}{}{}{}", p[0], p[1], p[2], p[3])
            }
        }
    }
}

/// A grayscale image with unit-interval intensities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || width % 2 != 0 || height % 2 != 0 {
            return Err(QpfError::OddDimensions { width, height });
        }
        if pixels.len() != width * height {
            return Err(QpfError::PixelCount {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        if let Some(&bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(QpfError::IntensityOutOfRange(bad as f64));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    /// Builds from raw bytes scaled by `v / 255`.
    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Image::new(
            width,
            height,
            bytes.iter().map(|&v| v as f32 / 255.0).collect(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }
}

/// Per-pixel angles `π·x`, row-major.
pub fn normalize_to_angles(image: &Image) -> Vec<Angle> {
    image
        .pixels
        .iter()
        .map(|&x| Angle::new_unchecked((std::f64::consts::PI * x as f64).min(std::f64::consts::PI)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Patch {
    pub row: usize,
    pub col: usize,
    pub angles: [Angle; 4],
}

fn patch_at(image: &Image, row: usize, col: usize) -> [Angle; 4] {
    let enc = |r: usize, c: usize| {
        Angle::new_unchecked(
            (std::f64::consts::PI * image.get(r, c) as f64).min(std::f64::consts::PI),
        )
    };
    let (r, c) = (2 * row, 2 * col);
    [enc(r, c), enc(r, c + 1), enc(r + 1, c), enc(r + 1, c + 1)]
}

fn check_even(image: &Image) -> Result<()> {
    if image.width % 2 != 0 || image.height % 2 != 0 || image.width == 0 || image.height == 0 {
        return Err(QpfError::OddDimensions {
            width: image.width,
            height: image.height,
        });
    }
    Ok(())
}

/// Non-overlapping stride-2 patches in row-major patch order.
pub fn extract_patches(image: &Image) -> Result<Vec<Patch>> {
    check_even(image)?;
    let (rows, cols) = (image.height / 2, image.width / 2);
    let mut out = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            out.push(Patch {
                row,
                col,
                angles: patch_at(image, row, col),
            });
        }
    }
    Ok(out)
}

/// Channel values for one patch; entry `k` belongs to pixel `k`.
pub fn apply_kernel(patch: &[Angle; 4], config: &KernelConfig) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (control, target) in config.control_target_pairs() {
        let probs = channel_probabilities(patch[control], patch[target]);
        out[control] = config.observable.apply(probs.control_p1);
        out[target] = config.observable.apply(probs.target_p1);
    }
    out
}

/// Four channel planes of `(height/2)×(width/2)`, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMaps {
    pub const CHANNELS: usize = 4;

    pub fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != Self::CHANNELS * height * width {
            return Err(QpfError::PixelCount {
                expected: Self::CHANNELS * height * width,
                actual: data.len(),
            });
        }
        Ok(FeatureMaps {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.channel(channel)[row * self.width + col]
    }

    /// Channel-major, row-major flattening; `4·(N/2)²` values.
    pub fn flattened(&self) -> &[f64] {
        &self.data
    }
}

pub fn filter_image(image: &Image, config: &KernelConfig) -> Result<FeatureMaps> {
    filter_image_with(image, config, Exec::Sequential)
}

/// Like [`filter_image`], spreading patch rows across threads when `exec` allows.
pub fn filter_image_with(image: &Image, config: &KernelConfig, exec: Exec) -> Result<FeatureMaps> {
    check_even(image)?;
    let (rows, cols) = (image.height / 2, image.width / 2);
    let plane = rows * cols;
    let row_values = parallel::map_range(exec, rows, |row| {
        (0..cols)
            .map(|col| apply_kernel(&patch_at(image, row, col), config))
            .collect::<Vec<_>>()
    });
    let mut data = vec![0.0; 4 * plane];
    for (row, values) in row_values.into_iter().enumerate() {
        for (col, v) in values.into_iter().enumerate() {
            for (c, x) in v.into_iter().enumerate() {
                data[c * plane + row * cols + col] = x;
            }
        }
    }
    Ok(FeatureMaps {
        height: rows,
        width: cols,
        data,
    })
}

/// Filters many images, one task per image, results in input order.
pub fn filter_batch(images: &[Image], config: &KernelConfig, exec: Exec) -> Result<Vec<FeatureMaps>> {
    parallel::map_slice(exec, images, |img| filter_image(img, config))
        .into_iter()
        .collect()
}

const QPFT_MAGIC: &[u8; 4] = b"QPFT";
const QPFT_VERSION: u8 = 1;
const QPFT_DTYPE_F32_LE: u8 = 1;

/// Appends one tensor record: 16-byte header then channel-major f32 LE data.
pub fn write_qpft<W: Write>(mut w: W, maps: &FeatureMaps) -> std::io::Result<()> {
    let mut header = [0u8; 16];
    header[..4].copy_from_slice(QPFT_MAGIC);
    header[4] = QPFT_VERSION;
    header[5] = QPFT_DTYPE_F32_LE;
    header[6] = FeatureMaps::CHANNELS as u8;
    header[7] = 0;
    header[8..12].copy_from_slice(&(maps.height as u32).to_le_bytes());
    header[12..16].copy_from_slice(&(maps.width as u32).to_le_bytes());
    w.write_all(&header)?;
    let mut buf = Vec::with_capacity(maps.data.len() * 4);
    for &v in &maps.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

/// Reads every record of a tensor file; values come back as f32-rounded f64.
pub fn read_qpft(path: &Path) -> Result<Vec<FeatureMaps>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| QpfError::io(path, e))?;
    let format = |reason: String| QpfError::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut out = Vec::new();
    let mut at = 0;
    while at < bytes.len() {
        let header = bytes.get(at..at + 16).ok_or_else(|| QpfError::Truncated {
            path: path.to_path_buf(),
            needed: at + 16,
            found: bytes.len(),
        })?;
        if &header[..4] != QPFT_MAGIC {
            return Err(format("missing QPFT magic".into()));
        }
        if header[4] != QPFT_VERSION || header[5] != QPFT_DTYPE_F32_LE {
            return Err(format(format!(
                "unsupported version {} / dtype {}",
                header[4], header[5]
            )));
        }
        let channels = header[6] as usize;
        if channels != FeatureMaps::CHANNELS {
            return Err(format(format!("expected 4 channels, found {channels}")));
        }
        let height = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        let n = channels * height * width;
        let start = at + 16;
        let end = start + 4 * n;
        let payload = bytes.get(start..end).ok_or_else(|| QpfError::Truncated {
            path: path.to_path_buf(),
            needed: end,
            found: bytes.len(),
        })?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        out.push(FeatureMaps {
            height,
            width,
            data,
        });
        at = end;
    }
    Ok(out)
}

/// Writes one channel as a binary PGM. Values in `[lo, hi]` map to `0..=255`.
pub fn write_pgm(path: &Path, maps: &FeatureMaps, channel: usize, lo: f64, hi: f64) -> Result<()> {
    let file = File::create(path).map_err(|e| QpfError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let body: Vec<u8> = maps
        .channel(channel)
        .iter()
        .map(|&v| (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write!(w, "P5\n{} {}\n255\n", maps.width, maps.height)
        .and_then(|_| w.write_all(&body))
        .and_then(|_| w.flush())
        .map_err(|e| QpfError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn angles(v: [f64; 4]) -> [Angle; 4] {
        v.map(|x| Angle::new(x).unwrap())
    }

    #[test]
    fn angle_normalization() {
        let img = Image::new(2, 2, vec![0.0, 1.0, 0.5, 0.25]).unwrap();
        let a = normalize_to_angles(&img);
        assert_eq!(a[0].radians(), 0.0);
        assert_eq!(a[1].radians(), PI);
        assert_eq!(a[2].radians(), PI / 2.0);
        assert_eq!(a[3].radians(), PI / 4.0);
    }

    #[test]
    fn patch_extraction_order() {
        let img = Image::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let p = extract_patches(&img).unwrap();
        assert_eq!(p.len(), 1);
        let want: Vec<f64> = [0.1f32, 0.2, 0.3, 0.4]
            .iter()
            .map(|&x| PI * x as f64)
            .collect();
        let got: Vec<f64> = p[0].angles.iter().map(|a| a.radians()).collect();
        assert_eq!(got, want);

        let pixels: Vec<f32> = (0..16).map(|i| i as f32 / 15.0).collect();
        let img = Image::new(4, 4, pixels).unwrap();
        let p = extract_patches(&img).unwrap();
        let coords: Vec<_> = p.iter().map(|p| (p.row, p.col)).collect();
        assert_eq!(coords, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        // patch (1,0) covers pixels 8, 9, 12, 13
        let got: Vec<f64> = p[2].angles.iter().map(|a| a.radians()).collect();
        let want: Vec<f64> = [8, 9, 12, 13]
            .iter()
            .map(|&i| PI * (i as f32 / 15.0) as f64)
            .collect();
        assert_eq!(got, want);

        let img = Image::new(28, 28, vec![0.0; 784]).unwrap();
        assert_eq!(extract_patches(&img).unwrap().len(), 196);
    }

    #[test]
    fn odd_images_are_rejected() {
        assert!(matches!(
            Image::new(3, 2, vec![0.0; 6]),
            Err(QpfError::OddDimensions { .. })
        ));
        assert!(Image::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Image::new(2, 2, vec![0.0, 0.0, 1.5, 0.0]).is_err());
    }

    #[test]
    fn kernel_examples() {
        let cfg = KernelConfig::named(Symmetry::Diagonal);
        let out = apply_kernel(&angles([PI / 2.0, 0.0, 0.0, 0.0]), &cfg);
        let want = [0.5, 0.0, 0.0, 0.5];
        for k in 0..4 {
            assert!((out[k] - want[k]).abs() < 1e-15, "{out:?}");
        }

        for perm in enumerate_permutations() {
            let cfg = KernelConfig::permutation(perm);
            assert_eq!(apply_kernel(&angles([0.0; 4]), &cfg), [0.0; 4]);
        }

        for sym in Symmetry::ALL {
            for d1 in Direction::ALL {
                for d2 in Direction::ALL {
                    let cfg = KernelConfig::named(sym).with_directions(d1, d2);
                    let out = apply_kernel(&angles([PI / 2.0; 4]), &cfg);
                    for v in out {
                        assert!((v - 0.5).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn reversed_directions_swap_roles() {
        let patch = angles([0.3, 1.2, 2.0, 2.9]);
        let fwd = apply_kernel(&patch, &KernelConfig::named(Symmetry::Vertical));
        let rev = apply_kernel(
            &patch,
            &KernelConfig::named(Symmetry::Vertical)
                .with_directions(Direction::Reversed, Direction::Reversed),
        );
        let s2 = |t: f64| (t / 2.0).sin().powi(2);
        // forward: 0 and 2 are controls; reversed: 1 and 3 are
        assert!((fwd[0] - s2(0.3)).abs() < 1e-15);
        assert!((fwd[2] - s2(2.0)).abs() < 1e-15);
        assert!((rev[1] - s2(1.2)).abs() < 1e-15);
        assert!((rev[3] - s2(2.9)).abs() < 1e-15);
        assert!((fwd[1] - rev[0]).abs() < 1e-15);
        assert!((fwd[3] - rev[2]).abs() < 1e-15);
    }

    #[test]
    fn permutation_census() {
        let perms = enumerate_permutations();
        assert_eq!(perms.len(), 24);
        assert_eq!(perms[0].pixels(), [0, 1, 2, 3]);
        assert_eq!(perms[23].pixels(), [3, 2, 1, 0]);
        let count = |s| perms.iter().filter(|p| classify_permutation(p) == s).count();
        assert_eq!(count(Symmetry::Diagonal), 8);
        assert_eq!(count(Symmetry::Vertical), 8);
        assert_eq!(count(Symmetry::Horizontal), 8);
    }

    #[test]
    fn classify_examples() {
        let c = |p: [usize; 4]| classify_permutation(&Permutation::new(p).unwrap());
        assert_eq!(c([0, 1, 2, 3]), Symmetry::Vertical);
        assert_eq!(c([0, 3, 1, 2]), Symmetry::Diagonal);
        assert_eq!(c([0, 2, 1, 3]), Symmetry::Horizontal);
        assert!(Permutation::new([0, 1, 1, 3]).is_err());
        assert!(Permutation::new([0, 1, 2, 4]).is_err());
        assert!("0,3,1,2".parse::<Permutation>().is_ok());
        assert!("0,3,1".parse::<Permutation>().is_err());
    }

    #[test]
    fn filter_shapes_and_observables() {
        let pixels: Vec<f32> = (0..36).map(|i| (i % 7) as f32 / 6.0).collect();
        let img = Image::new(6, 6, pixels).unwrap();
        let cfg = KernelConfig::named(Symmetry::Horizontal);
        let p = filter_image(&img, &cfg).unwrap();
        let z = filter_image(&img, &cfg.with_observable(Observable::ExpectationZ)).unwrap();
        assert_eq!((p.height(), p.width()), (3, 3));
        assert_eq!(p.flattened().len(), 36);
        for (a, b) in p.flattened().iter().zip(z.flattened()) {
            assert!((b - (1.0 - 2.0 * a)).abs() < 1e-15);
        }
        let zero = Image::new(4, 4, vec![0.0; 16]).unwrap();
        assert!(filter_image(&zero, &cfg).unwrap().flattened().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn qpft_round_trip_and_header_layout() {
        let img = Image::new(4, 2, vec![0.1, 0.9, 0.3, 0.0, 0.5, 0.5, 1.0, 0.7]).unwrap();
        let maps = filter_image(&img, &KernelConfig::named(Symmetry::Diagonal)).unwrap();
        let mut buf = Vec::new();
        write_qpft(&mut buf, &maps).unwrap();
        write_qpft(&mut buf, &maps).unwrap();
        assert_eq!(&buf[..8], b"QPFT\x01\x01\x04\x00");
        assert_eq!(&buf[8..16], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(buf.len(), 2 * (16 + 4 * 8));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.qpft");
        std::fs::write(&path, &buf).unwrap();
        let back = read_qpft(&path).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in back[1].flattened().iter().zip(maps.flattened()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        std::fs::write(&path, &buf[..20]).unwrap();
        assert!(matches!(read_qpft(&path), Err(QpfError::Truncated { .. })));
    }

    #[test]
    fn pgm_scaling() {
        let maps = FeatureMaps::from_raw(1, 2, vec![0.0, 1.0, 0.5, 0.2, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c1.pgm");
        write_pgm(&path, &maps, 1, 0.0, 1.0).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes, b"P5\n2 1\n255\n\x80\x33".to_vec());
    }
}
