//! Entanglement analytics: the entropy surface over both encoding angles and
//! per-dataset entropy statistics of filtered images.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{QpfError, Result};
use crate::filter::{extract_patches, Image, KernelConfig};
use crate::parallel::{self, Exec};
use crate::qkernel::{pair_entropy, Angle};

/// Pair entropy sampled on an inclusive square grid over `[0, π]²`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropySurface {
    pub step: f64,
    pub thetas: Vec<f64>,
    /// `values[i * thetas.len() + j] = S(thetas[i], thetas[j])`, control first.
    pub values: Vec<f64>,
}

impl EntropySurface {
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.thetas.len() + j]
    }

    /// Largest value and every grid point attaining it within `tol`.
    pub fn maxima(&self, tol: f64) -> (f64, Vec<(f64, f64)>) {
        let max = self.values.iter().copied().fold(f64::MIN, f64::max);
        let n = self.thetas.len();
        let points = self
            .values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v >= max - tol)
            .map(|(k, _)| (self.thetas[k / n], self.thetas[k % n]))
            .collect();
        (max, points)
    }

    /// `theta_i,theta_j,entropy` with shortest round-trip float formatting.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["theta_i", "theta_j", "entropy"])?;
        let n = self.thetas.len();
        for (k, v) in self.values.iter().enumerate() {
            csv.write_record([
                self.thetas[k / n].to_string(),
                self.thetas[k % n].to_string(),
                v.to_string(),
            ])?;
        }
        csv.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Grid angles: `k·step` up to `π`, snapped to `π·k/m` when `step` divides `π`.
fn grid_angles(step: f64) -> Vec<f64> {
    let ratio = PI / step;
    let m = ratio.round();
    if (ratio - m).abs() < 1e-9 {
        let m = m as usize;
        (0..=m).map(|k| PI * k as f64 / m as f64).collect()
    } else {
        let n = ratio.floor() as usize;
        (0..=n).map(|k| (k as f64 * step).min(PI)).collect()
    }
}

pub fn scan_surface(step: f64) -> Result<EntropySurface> {
    scan_surface_with(step, Exec::Sequential)
}

pub fn scan_surface_with(step: f64, exec: Exec) -> Result<EntropySurface> {
    if !(step > 0.0 && step <= PI / 2.0) {
        return Err(QpfError::StepOutOfRange(step));
    }
    let thetas = grid_angles(step);
    let n = thetas.len();
    let rows = parallel::map_range(exec, n, |i| {
        let ti = Angle::new_unchecked(thetas[i]);
        thetas
            .iter()
            .map(|&tj| pair_entropy(ti, Angle::new_unchecked(tj)))
            .collect::<Vec<_>>()
    });
    Ok(EntropySurface {
        step,
        thetas,
        values: rows.into_iter().flatten().collect(),
    })
}

/// How per-pair entropies of one image collapse into a single number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyAggregation {
    /// Mean over all `2·(N/2)²` pair entropies.
    #[default]
    PairMean,
    /// Mean over patches of the summed entropy of the two pairs, i.e. the
    /// entropy of the joint marginal of both control qubits.
    PatchSum,
}

impl std::str::FromStr for EntropyAggregation {
    type Err = QpfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pair-mean" => Ok(EntropyAggregation::PairMean),
            "patch-sum" => Ok(EntropyAggregation::PatchSum),
            other => Err(QpfError::Config(format!("unknown aggregation '{other}'"))),
        }
    }
}

/// Entropies of both pairs of one patch, in the config's pair order.
pub fn patch_pair_entropies(angles: &[Angle; 4], config: &KernelConfig) -> [f64; 2] {
    config
        .control_target_pairs()
        .map(|(c, t)| pair_entropy(angles[c], angles[t]))
}

pub fn image_entropy(image: &Image, config: &KernelConfig, agg: EntropyAggregation) -> Result<f64> {
    let patches = extract_patches(image)?;
    let mut total = 0.0;
    for p in &patches {
        let [e1, e2] = patch_pair_entropies(&p.angles, config);
        total += e1;
        total += e2;
    }
    let denom = match agg {
        EntropyAggregation::PairMean => 2 * patches.len(),
        EntropyAggregation::PatchSum => patches.len(),
    };
    Ok(total / denom as f64)
}

/// Mean entropy over every pair of every patch.
pub fn image_entropy_mean(image: &Image, config: &KernelConfig) -> Result<f64> {
    image_entropy(image, config, EntropyAggregation::PairMean)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntropyStats {
    pub mean: f64,
    /// Population standard deviation of `per_image_means`.
    pub std: f64,
    pub per_image_means: Vec<f64>,
}

impl DatasetEntropyStats {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(QpfError::EmptyDataset);
        }
        let n = values.len() as f64;
        let mut sum = 0.0;
        for v in &values {
            sum += v;
        }
        let mean = sum / n;
        let mut sq = 0.0;
        for v in &values {
            sq += (v - mean) * (v - mean);
        }
        Ok(DatasetEntropyStats {
            mean,
            std: (sq / n).sqrt(),
            per_image_means: values,
        })
    }
}

pub fn dataset_entropy_stats(
    dataset: &LabeledDataset,
    config: &KernelConfig,
    agg: EntropyAggregation,
    exec: Exec,
) -> Result<DatasetEntropyStats> {
    images_entropy_stats(dataset.images(), config, agg, exec)
}

/// Per-image values may be computed in parallel; the reduction is sequential.
pub fn images_entropy_stats(
    images: &[Image],
    config: &KernelConfig,
    agg: EntropyAggregation,
    exec: Exec,
) -> Result<DatasetEntropyStats> {
    if images.is_empty() {
        return Err(QpfError::EmptyDataset);
    }
    let values = parallel::map_slice(exec, images, |im| image_entropy(im, config, agg))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    DatasetEntropyStats::from_values(values)
}

/// One row of the dataset statistics table.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyStatsRow {
    pub dataset: String,
    pub config: KernelConfig,
    pub stats: DatasetEntropyStats,
}

/// `dataset,pairing,dir1,dir2,mean,std,n_images`.
pub fn write_stats_csv<W: Write>(w: W, rows: &[EntropyStatsRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["dataset", "pairing", "dir1", "dir2", "mean", "std", "n_images"])?;
    for r in rows {
        csv.write_record([
            r.dataset.clone(),
            r.config.label(),
            r.config.dir1.to_string(),
            r.config.dir2.to_string(),
            r.stats.mean.to_string(),
            r.stats.std.to_string(),
            r.stats.per_image_means.len().to_string(),
        ])?;
    }
    csv.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{Direction, Symmetry};

    #[test]
    fn surface_examples() {
        let s = scan_surface(0.01 * PI).unwrap();
        assert_eq!(s.len(), 101);
        let (max, at) = s.maxima(1e-9);
        assert!((max - 1.0).abs() < 1e-9);
        assert!(at.contains(&(PI / 2.0, 0.0)));
        assert!(at.contains(&(PI / 2.0, PI)));
        for i in 0..101 {
            assert!(s.at(i, 50).abs() < 1e-12);
        }
        assert!((s.at(50, 25) - 0.6008760366928562).abs() < 1e-12);

        let coarse = scan_surface(PI / 2.0).unwrap();
        assert_eq!(coarse.thetas, vec![0.0, PI / 2.0, PI]);
        assert!(scan_surface(0.0).is_err());
        assert!(scan_surface(2.0).is_err());
        assert!(scan_surface(f64::NAN).is_err());
    }

    #[test]
    fn non_dividing_step_stays_in_range() {
        let s = scan_surface(1.0).unwrap();
        assert_eq!(s.thetas, vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn surface_csv_shape() {
        let mut buf = Vec::new();
        scan_surface(PI / 2.0).unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 10);
        assert_eq!(text.lines().next(), Some("theta_i,theta_j,entropy"));
    }

    #[test]
    fn image_entropy_examples() {
        let diag = KernelConfig::named(Symmetry::Diagonal);
        let zero = Image::new(4, 4, vec![0.0; 16]).unwrap();
        assert_eq!(image_entropy_mean(&zero, &diag).unwrap(), 0.0);
        let half = Image::new(4, 4, vec![0.5; 16]).unwrap();
        assert!(image_entropy_mean(&half, &diag).unwrap().abs() < 1e-12);

        let one_bell = Image::new(2, 2, vec![0.5, 0.0, 0.0, 0.0]).unwrap();
        assert!((image_entropy_mean(&one_bell, &diag).unwrap() - 0.5).abs() < 1e-12);
        let sum = image_entropy(&one_bell, &diag, EntropyAggregation::PatchSum).unwrap();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn direction_changes_entropy() {
        let img = Image::new(2, 2, vec![0.5, 0.2, 0.1, 0.0]).unwrap();
        let fwd = KernelConfig::named(Symmetry::Diagonal);
        let rev = fwd.with_directions(Direction::Reversed, Direction::Forward);
        let a = image_entropy_mean(&img, &fwd).unwrap();
        let b = image_entropy_mean(&img, &rev).unwrap();
        assert!((a - b).abs() > 1e-3);
    }

    #[test]
    fn stats_population_std() {
        let s = DatasetEntropyStats::from_values(vec![0.1, 0.3]).unwrap();
        assert!((s.mean - 0.2).abs() < 1e-15);
        assert!((s.std - 0.1).abs() < 1e-15);
        let single = DatasetEntropyStats::from_values(vec![0.42]).unwrap();
        assert_eq!((single.mean, single.std), (0.42, 0.0));
        assert!(matches!(
            DatasetEntropyStats::from_values(vec![]),
            Err(QpfError::EmptyDataset)
        ));
    }
}
