//! Turning sequences into model-ready clouds, with and without labels.

use std::path::PathBuf;

use crate::chamfer::Point6;
use crate::colorize::{apply_color_mask, build_cloud, colorize_cloud, ColorScheme, SkeletonCloud};
use crate::error::{Error, Result};
use crate::net::InputMode;
use crate::par;
use crate::skeleton_data::{normalize_sequence, sample_frames, DatasetManifest, SkeletonSequence};
use crate::training::config::DataConfig;

/// Normalize, resample to `cfg.frames`, and stack into a cloud.
pub fn prepare_cloud(seq: &SkeletonSequence, cfg: &DataConfig) -> Result<SkeletonCloud> {
    let seq = normalize_sequence(seq, cfg.root_joint)?;
    let seq = sample_frames(&seq, cfg.frames)?;
    Ok(build_cloud(&seq))
}

/// Encoder input for `cloud` under a stream's scheme and input mode.
pub fn model_input(cloud: &SkeletonCloud, scheme: ColorScheme, mode: InputMode) -> Result<Vec<Point6>> {
    match mode {
        InputMode::Raw => Ok(cloud.raw_points6()),
        InputMode::Hint(ratio) => Ok(apply_color_mask(&colorize_cloud(cloud, scheme)?, ratio).points6()),
    }
}

/// Fully colorized repainting target.
pub fn repaint_target(cloud: &SkeletonCloud, scheme: ColorScheme) -> Result<Vec<Point6>> {
    Ok(colorize_cloud(cloud, scheme)?.points6())
}

/// Clouds with no label information at all; the only input pretraining accepts.
#[derive(Debug, Clone)]
pub struct UnlabeledSet {
    clouds: Vec<SkeletonCloud>,
}

impl UnlabeledSet {
    /// Builds clouds from sequences. Only joint coordinates are read; the
    /// sequence metadata (labels included) is never touched.
    pub fn from_sequences(seqs: &[SkeletonSequence], cfg: &DataConfig) -> Result<Self> {
        Ok(UnlabeledSet {
            clouds: par::try_map(seqs, |s| prepare_cloud(s, cfg))?,
        })
    }

    pub fn from_clouds(clouds: Vec<SkeletonCloud>) -> Self {
        UnlabeledSet { clouds }
    }

    pub fn clouds(&self) -> &[SkeletonCloud] {
        &self.clouds
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn max_points(&self) -> usize {
        self.clouds.iter().map(SkeletonCloud::len).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub clouds: Vec<SkeletonCloud>,
    pub labels: Vec<usize>,
    /// Source file of each sample, used as its identity.
    pub ids: Vec<PathBuf>,
    pub class_count: usize,
}

impl LabeledSet {
    pub fn from_manifest(manifest: &DatasetManifest, cfg: &DataConfig) -> Result<Self> {
        let seqs = manifest.load_sequences()?;
        let clouds = par::try_map(&seqs, |s| prepare_cloud(s, cfg))?;
        Ok(LabeledSet {
            clouds,
            labels: manifest.entries.iter().map(|e| e.label).collect(),
            ids: manifest.entries.iter().map(|e| e.path.clone()).collect(),
            class_count: manifest.class_count,
        })
    }

    pub fn new(clouds: Vec<SkeletonCloud>, labels: Vec<usize>, ids: Vec<PathBuf>, class_count: usize) -> Result<Self> {
        if clouds.len() != labels.len() || clouds.len() != ids.len() {
            return Err(Error::shape("labeled set", "clouds, labels and ids differ in length"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Config(format!("label {bad} outside [0, {class_count})")));
        }
        Ok(LabeledSet {
            clouds,
            labels,
            ids,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledSet {
        LabeledSet {
            clouds: indices.iter().map(|&i| self.clouds[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            class_count: self.class_count,
        }
    }

    pub fn unlabeled(&self) -> UnlabeledSet {
        UnlabeledSet::from_clouds(self.clouds.clone())
    }

    /// Indices of each class's samples, in set order.
    pub fn class_pools(&self) -> Vec<Vec<usize>> {
        let mut pools = vec![Vec::new(); self.class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            pools[l].push(i);
        }
        pools
    }
}
