//! Deterministic synthetic skeleton-action datasets and evaluation metrics.
//!
//! A synthetic skeleton is a root joint with up to four limbs branching from
//! it; each limb is a kinematic chain of segments of equal length. A class is
//! a motion family: a set of limb base joints that swing sinusoidally about
//! the vertical axis with a class-specific frequency and phase. Because limb
//! children follow their parents, motions propagate down the chain.
//!
//! Classes are laid out so that some pairs differ *only* in phase (the same
//! limbs sweep the same arc, half a cycle apart). Without temporal order the
//! point sets of such a pair are indistinguishable, which is what gives
//! temporal information something to contribute.

mod metrics;

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use metrics::Metrics;

use crate::error::{Error, Result};
use crate::net::RepaintModel;
use crate::par;
use crate::rng::{derive_indexed, Rng};
use crate::skeleton_data::{
    sample_frames, write_manifest, write_sequence, ClassLabel, DatasetManifest, Joint, ManifestEntry, PersonFrame,
    SequenceMeta, SkeletonSequence,
};
use crate::training::classify::{argmax, predict_probabilities, FusedClassifier};
use crate::training::data::LabeledSet;

/// Number of disjoint moving-limb groups classes cycle through.
const LIMB_GROUPS: usize = 2;
const MAX_LIMBS: usize = 4;
/// Fixed limb elevation above the horizontal plane, radians.
const ELEVATION: f64 = 0.3;
/// Horizontal offset of the second person, meters.
const PERSON_OFFSET: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub joints: usize,
    pub frames: usize,
    pub persons: usize,
    /// Standard deviation of the Gaussian positional noise, meters.
    pub noise: f64,
    pub limb_length: f64,
    /// Swing amplitude, radians.
    pub amplitude: f64,
    /// Per-sequence phase offset is uniform in `[-phase_jitter, phase_jitter]`.
    pub phase_jitter: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 5,
            per_class: 40,
            joints: 8,
            frames: 16,
            persons: 1,
            noise: 0.01,
            limb_length: 0.25,
            amplitude: 0.6,
            phase_jitter: 0.25,
            seed: 0,
        }
    }
}

/// One class's motion parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMotion {
    /// Limb base joints that swing (0-based joint indices).
    pub moving: Vec<usize>,
    /// Cycles per sequence.
    pub frequency: f64,
    pub phase: f64,
    pub amplitude: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("synthetic data needs at least 2 classes".into()));
        }
        if self.joints < 1 + LIMB_GROUPS {
            return Err(Error::Config(format!(
                "synthetic skeletons need at least {} joints",
                1 + LIMB_GROUPS
            )));
        }
        if self.frames == 0 || self.per_class == 0 {
            return Err(Error::Config("frames and per_class must be >= 1".into()));
        }
        if !(1..=2).contains(&self.persons) {
            return Err(Error::Config("persons must be 1 or 2".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("noise must be a finite value >= 0".into()));
        }
        let valid = self.limb_length > 0.0 && self.phase_jitter >= 0.0 && self.amplitude.is_finite();
        if !valid {
            return Err(Error::Config("limb_length must be > 0, phase_jitter >= 0".into()));
        }
        if self.phase_jitter >= PI / 2.0 {
            return Err(Error::Config(
                "phase_jitter must stay below pi/2 to keep phase classes apart".into(),
            ));
        }
        Ok(())
    }

    fn limbs(&self) -> usize {
        MAX_LIMBS.min(self.joints - 1)
    }

    /// Parent of joint `j >= 1` and the limb it belongs to.
    fn parent(&self, j: usize) -> usize {
        let limbs = self.limbs();
        j.saturating_sub(limbs)
    }

    fn limb_of(&self, j: usize) -> usize {
        (j - 1) % self.limbs()
    }

    /// Class `c` cycles through (limb group, phase 0 / pi), then raises the
    /// frequency: classes 0..4 are group 0 at phase 0, group 0 at pi, group 1
    /// at 0, group 1 at pi, and class 4 restarts with frequency 2.
    pub fn class_motion(&self, c: usize) -> ClassMotion {
        let group = (c / 2) % LIMB_GROUPS;
        let phase = if c.is_multiple_of(2) { 0.0 } else { PI };
        let frequency = 1.0 + (c / (2 * LIMB_GROUPS)) as f64;
        let moving = (1..=self.limbs())
            .filter(|&j| self.limb_of(j) % LIMB_GROUPS == group)
            .collect();
        ClassMotion {
            moving,
            frequency,
            phase,
            amplitude: self.amplitude,
        }
    }

    /// Joint positions of one person at one instant, with swing angles
    /// `swing[j]` for the segment ending at joint `j`.
    fn pose(&self, swing: &[f64], origin: [f64; 3]) -> Vec<Joint> {
        let limbs = self.limbs() as f64;
        let mut pos = vec![origin; self.joints];
        let mut heading = vec![0.0; self.joints];
        for j in 1..self.joints {
            let p = self.parent(j);
            let base = if p == 0 {
                2.0 * PI * self.limb_of(j) as f64 / limbs + PI / 4.0
            } else {
                heading[p]
            };
            heading[j] = base + swing[j];
            let l = self.limb_length;
            pos[j] = [
                pos[p][0] + l * ELEVATION.cos() * heading[j].cos(),
                pos[p][1] + l * ELEVATION.cos() * heading[j].sin(),
                pos[p][2] + l * ELEVATION.sin(),
            ];
        }
        pos.into_iter().map(|[x, y, z]| Joint::new(x, y, z)).collect()
    }
}

/// The `index`-th sequence of class `class`, noise included.
pub fn synthesize_sequence(spec: &SyntheticSpec, class: usize, index: usize) -> Result<SkeletonSequence> {
    let motion = spec.class_motion(class);
    let global = class * spec.per_class + index;
    let mut rng = Rng::seed_from_u64(derive_indexed(spec.seed, "synthetic/sequence", global as u64));
    let jitter = if spec.phase_jitter > 0.0 {
        rng.gen_range(-spec.phase_jitter..=spec.phase_jitter)
    } else {
        0.0
    };
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut frames = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let mut persons = Vec::with_capacity(spec.persons);
        for n in 0..spec.persons {
            // the second person moves in anti-phase
            let phase = motion.phase + jitter + if n == 1 { PI } else { 0.0 };
            let angle = motion.amplitude * (2.0 * PI * motion.frequency * t as f64 / spec.frames as f64 + phase).sin();
            let mut swing = vec![0.0; spec.joints];
            for &j in &motion.moving {
                swing[j] = angle;
            }
            let origin = [n as f64 * PERSON_OFFSET, 0.0, 0.0];
            let joints = spec
                .pose(&swing, origin)
                .into_iter()
                .map(|p| {
                    if spec.noise == 0.0 {
                        p
                    } else {
                        Joint::new(
                            p.x + noise.sample(&mut rng),
                            p.y + noise.sample(&mut rng),
                            p.z + noise.sample(&mut rng),
                        )
                    }
                })
                .collect();
            persons.push(PersonFrame { joints });
        }
        frames.push(persons);
    }
    let meta = SequenceMeta {
        label: Some(ClassLabel::new(class)),
        subject: Some(index as u32),
        view: Some(0),
        dataset: Some("synthetic".into()),
    };
    SkeletonSequence::new(frames, meta)
}

/// All sequences, class-major.
pub fn synthesize(spec: &SyntheticSpec) -> Result<Vec<SkeletonSequence>> {
    spec.validate()?;
    par::try_map_indexed(spec.classes * spec.per_class, |i| {
        synthesize_sequence(spec, i / spec.per_class, i % spec.per_class)
    })
}

pub const MANIFEST_NAME: &str = "manifest.tsv";

/// Writes every sequence to `dir` plus a manifest, which is returned.
pub fn generate_dataset(spec: &SyntheticSpec, dir: &Path) -> Result<DatasetManifest> {
    let seqs = synthesize(spec)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let entries: Vec<ManifestEntry> = seqs
        .iter()
        .enumerate()
        .map(|(i, _)| ManifestEntry {
            path: dir.join(format!("c{:03}_s{:04}.skl", i / spec.per_class, i % spec.per_class)),
            label: i / spec.per_class,
            subject: (i % spec.per_class) as u32,
            view: 0,
        })
        .collect();
    par::try_map_indexed(seqs.len(), |i| write_sequence(&seqs[i], &entries[i].path))?;
    let manifest = DatasetManifest::new(entries, spec.classes, spec.joints, spec.persons)?;
    write_manifest(&manifest, &dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}

/// Stratified split: per class, a seeded shuffle puts
/// `round(test_fraction * pool)` (at least one) entries in the test split.
pub fn train_test_split(
    manifest: &DatasetManifest,
    test_fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config("test fraction must be in (0, 1)".into()));
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (c, pool) in manifest.class_pools().into_iter().enumerate() {
        if pool.len() < 2 {
            return Err(Error::Config(format!("class {c} needs at least 2 samples to split")));
        }
        let mut shuffled = pool;
        shuffled.shuffle(&mut Rng::seed_from_u64(derive_indexed(seed, "split/class", c as u64)));
        let k = ((test_fraction * shuffled.len() as f64).round() as usize).clamp(1, shuffled.len() - 1);
        test.extend_from_slice(&shuffled[..k]);
        train.extend_from_slice(&shuffled[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    let (train, test) = (manifest.subset(&train), manifest.subset(&test));
    check_disjoint(
        &train.entries.iter().map(|e| e.path.clone()).collect::<Vec<_>>(),
        &test.entries.iter().map(|e| e.path.clone()).collect::<Vec<_>>(),
    )?;
    Ok((train, test))
}

/// Errors if any id appears in both splits.
pub fn check_disjoint(train: &[PathBuf], test: &[PathBuf]) -> Result<()> {
    let train: std::collections::BTreeSet<&PathBuf> = train.iter().collect();
    match test.iter().find(|id| train.contains(id)) {
        Some(id) => Err(Error::Config(format!(
            "{} is in both train and test splits",
            id.display()
        ))),
        None => Ok(()),
    }
}

/// Deterministic forward pass over `test`, argmax prediction, metrics.
pub fn evaluate(classifier: &FusedClassifier, models: &[RepaintModel], test: &LabeledSet) -> Result<Metrics> {
    if test.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut ordered = models.to_vec();
    crate::training::classify::sort_streams(&mut ordered);
    let probs = predict_probabilities(classifier, &ordered, &test.clouds)?;
    let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    Metrics::from_predictions(&pred, &test.labels, classifier.class_count)
}

/// Raw coordinates in `(t, n, j, xyz)` order after resampling to `frames`.
pub fn flatten_sequence(seq: &SkeletonSequence, frames: usize) -> Result<Vec<f64>> {
    let seq = sample_frames(seq, frames)?;
    Ok(seq
        .frames()
        .iter()
        .flat_map(|f| f.iter().flat_map(|p| p.joints.iter().flat_map(|j| j.to_array())))
        .collect())
}

/// Nearest-centroid classification under Euclidean distance: the trivial
/// classifier used to certify that a benchmark is solvable at all.
pub fn nearest_centroid(
    train: &[Vec<f64>],
    labels: &[usize],
    class_count: usize,
    test: &[Vec<f64>],
) -> Result<Vec<usize>> {
    let dim = train.first().ok_or(Error::EmptySet)?.len();
    let mut centroids = vec![vec![0.0; dim]; class_count];
    let mut counts = vec![0usize; class_count];
    for (x, &l) in train.iter().zip(labels) {
        if x.len() != dim {
            return Err(Error::shape("nearest centroid", "feature lengths differ"));
        }
        counts[l] += 1;
        centroids[l].iter_mut().zip(x).for_each(|(c, v)| *c += v);
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        if n > 0 {
            c.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    test.iter()
        .map(|x| {
            if x.len() != dim {
                return Err(Error::shape("nearest centroid", "feature lengths differ"));
            }
            let d: Vec<f64> = centroids
                .iter()
                .zip(&counts)
                .map(|(c, &n)| {
                    if n == 0 {
                        f64::INFINITY
                    } else {
                        c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum()
                    }
                })
                .collect();
            Ok(argmin(&d))
        })
        .collect()
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}
