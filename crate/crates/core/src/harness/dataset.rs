//! Manifests of text point-cloud files.
//!
//! A manifest has one `path<TAB>label` entry per line; relative paths are
//! resolved against the manifest's directory. Blank lines and `#` comments
//! are skipped. Labels are class ids for classification and object
//! categories for segmentation, and must cover `0..=max` without gaps.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng;

use super::io::read_cloud;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::models::Example;

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(PathBuf, usize)>,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim_end();
            if line.trim().is_empty() {
                continue;
            }
            let (path, label) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: "expected path<TAB>label".into(),
            })?;
            let label = label.trim().parse::<usize>().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("bad label {label:?}"),
            })?;
            let path = Path::new(path.trim());
            entries.push((if path.is_absolute() { path.to_path_buf() } else { base.join(path) }, label));
        }
        if entries.is_empty() {
            return Err(Error::EmptyFile);
        }
        let max = entries.iter().map(|e| e.1).max().expect("non-empty");
        if let Some(missing) = (0..=max).find(|l| !entries.iter().any(|e| e.1 == *l)) {
            return Err(Error::InvalidArgument(format!(
                "labels must be contiguous from 0, {missing} is missing"
            )));
        }
        Ok(Self { entries })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&fs::read_to_string(path)?, base)
    }

    pub fn num_labels(&self) -> usize {
        self.entries.iter().map(|e| e.1).max().map_or(0, |m| m + 1)
    }

    /// Reads every referenced cloud, reporting the first that fails.
    pub fn load(&self, opts: &LoadOptions, rng: &mut impl Rng) -> Result<Vec<Example>> {
        self.entries
            .iter()
            .map(|(path, label)| {
                let cloud = read_cloud(path)
                    .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
                Ok(Example {
                    cloud: opts.apply(&cloud, rng)?,
                    label: *label,
                })
            })
            .collect()
    }
}

/// Writes a manifest whose paths are relative to its own directory.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[(String, usize)]) -> Result<()> {
    let text: String = entries.iter().map(|(p, l)| format!("{p}\t{l}\n")).collect();
    fs::write(path, text)?;
    Ok(())
}

/// Optional per-cloud preprocessing when loading external data.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LoadOptions {
    /// Keep only points inside a square xy block of this side length,
    /// centred on a randomly chosen point.
    pub block_size: Option<f64>,
    /// Randomly subsample to at most this many points.
    pub max_points: Option<usize>,
}

impl LoadOptions {
    pub fn apply(&self, cloud: &PointCloud, rng: &mut impl Rng) -> Result<PointCloud> {
        let mut cloud = cloud.clone();
        if let Some(size) = self.block_size {
            let c = cloud.position(rng.random_range(0..cloud.len()));
            let half = (size / 2.0) as f32;
            let ids: Vec<usize> = (0..cloud.len())
                .filter(|&i| {
                    let p = cloud.position(i);
                    (p[0] - c[0]).abs() <= half && (p[1] - c[1]).abs() <= half
                })
                .collect();
            cloud = cloud.subset(&ids)?;
        }
        if let Some(m) = self.max_points {
            if cloud.len() > m {
                let mut ids = sample(rng, cloud.len(), m).into_vec();
                ids.sort_unstable();
                cloud = cloud.subset(&ids)?;
            }
        }
        Ok(cloud)
    }
}
