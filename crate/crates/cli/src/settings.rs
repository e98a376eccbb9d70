//! Optional key-value config file; command-line flags take precedence.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSettings {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,

    pub symmetry: Option<String>,
    pub perm: Option<String>,
    pub dir1: Option<String>,
    pub dir2: Option<String>,
    pub observable: Option<String>,

    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub name: Option<String>,
    pub split: Option<String>,
    pub limit: Option<usize>,
    pub batch: Option<usize>,
    pub preview: Option<usize>,

    pub step: Option<String>,
    pub aggregate: Option<String>,
    pub subsample: Option<usize>,

    pub depth: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub train_subsample: Option<usize>,
    pub val_subsample: Option<usize>,
    pub baseline: Option<bool>,

    pub plan: Option<PathBuf>,
    pub timings: Option<bool>,
}

impl FileSettings {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(FileSettings::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        let mut s: FileSettings = toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut s.out,
            &mut s.images,
            &mut s.labels,
            &mut s.data_dir,
            &mut s.plan,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(s)
    }
}

/// Parses a value that came from the config file.
pub fn parse_file_value<T>(key: &str, value: Option<&String>) -> Result<Option<T>, CliError>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    value
        .map(|v| {
            v.parse::<T>()
                .map_err(|e| CliError::usage(format!("config key '{key}': {e}")))
        })
        .transpose()
}
