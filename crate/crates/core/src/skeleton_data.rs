//! Skeleton sequences: the on-disk text format, dataset manifests, frame
//! resampling and root-joint normalization.
//!
//! Sequence file (UTF-8):
//!
//! ```text
//! SKEL v1 T=<frames> J=<joints> M=<persons>
//! t n j x y z        # T*M*J lines, 1-based t, n, j; t-major, then n, then j
//! ```
//!
//! Manifest file: one sequence per line, `path<TAB>label<TAB>subject<TAB>view`.
//! Relative paths resolve against the manifest's directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Joint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Joint {
    pub const ORIGIN: Joint = Joint { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Joint { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn is_zero(&self) -> bool {
        self.x == 0.0 && self.y == 0.0 && self.z == 0.0
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    fn translated(self, by: Joint) -> Joint {
        Joint::new(self.x - by.x, self.y - by.y, self.z - by.z)
    }
}

/// One person's joints at one time step, in dataset joint order.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonFrame {
    pub joints: Vec<Joint>,
}

/// Class label slot. A poisoned label is a sentinel that aborts when read;
/// it lets tests prove that a code path never looks at labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassLabel(u32);

impl ClassLabel {
    const POISON: u32 = u32::MAX;

    pub fn new(id: usize) -> Self {
        assert!(id < Self::POISON as usize, "label id too large");
        ClassLabel(id as u32)
    }

    pub fn poisoned() -> Self {
        ClassLabel(Self::POISON)
    }

    pub fn is_poisoned(&self) -> bool {
        self.0 == Self::POISON
    }

    pub fn id(&self) -> usize {
        assert!(!self.is_poisoned(), "poisoned label was read");
        self.0 as usize
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SequenceMeta {
    pub label: Option<ClassLabel>,
    pub subject: Option<u32>,
    pub view: Option<u32>,
    pub dataset: Option<String>,
}

/// Ordered frames of 1 or 2 persons with a fixed joint count.
///
/// Every frame holds the same number of person slots.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    frames: Vec<Vec<PersonFrame>>,
    joint_count: usize,
    pub meta: SequenceMeta,
}

pub const MAX_PERSONS: usize = 2;

impl SkeletonSequence {
    /// Validates shape and finiteness. `frames[t][n].joints[j]`.
    pub fn new(frames: Vec<Vec<PersonFrame>>, meta: SequenceMeta) -> Result<Self> {
        let first = frames.first().ok_or(Error::EmptySequence)?;
        let persons = first.len();
        if persons == 0 || persons > MAX_PERSONS {
            return Err(Error::shape(
                "sequence",
                format!("person count {persons} not in 1..={MAX_PERSONS}"),
            ));
        }
        let joint_count = first[0].joints.len();
        if joint_count == 0 {
            return Err(Error::shape("sequence", "joint count must be >= 1"));
        }
        for (t, frame) in frames.iter().enumerate() {
            if frame.len() != persons {
                return Err(Error::shape(
                    "sequence",
                    format!("frame {} has {} persons, expected {persons}", t + 1, frame.len()),
                ));
            }
            for (n, person) in frame.iter().enumerate() {
                if person.joints.len() != joint_count {
                    return Err(Error::shape(
                        "sequence",
                        format!(
                            "frame {} person {} has {} joints, expected {joint_count}",
                            t + 1,
                            n + 1,
                            person.joints.len()
                        ),
                    ));
                }
                if let Some(j) = person.joints.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteJoint {
                        t: t + 1,
                        n: n + 1,
                        j: j + 1,
                    });
                }
            }
        }
        Ok(SkeletonSequence {
            frames,
            joint_count,
            meta,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn person_count(&self) -> usize {
        self.frames[0].len()
    }

    pub fn frames(&self) -> &[Vec<PersonFrame>] {
        &self.frames
    }

    /// Zero-based accessor.
    pub fn joint(&self, t: usize, n: usize, j: usize) -> Joint {
        self.frames[t][n].joints[j]
    }

    pub fn with_meta(mut self, meta: SequenceMeta) -> Self {
        self.meta = meta;
        self
    }
}

fn malformed(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedFile {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceHeader {
    pub frames: usize,
    pub joints: usize,
    pub persons: usize,
}

fn parse_header(path: &Path, line: &str) -> Result<SequenceHeader> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some("SKEL") || parts.next() != Some("v1") {
        return Err(malformed(path, 1, "expected header `SKEL v1 T=.. J=.. M=..`"));
    }
    let mut field = |key: &str| -> Result<usize> {
        let tok = parts
            .next()
            .ok_or_else(|| malformed(path, 1, format!("missing {key}= field")))?;
        tok.strip_prefix(key)
            .and_then(|v| v.strip_prefix('='))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| malformed(path, 1, format!("bad header field `{tok}`")))
    };
    let frames = field("T")?;
    let joints = field("J")?;
    let persons = field("M")?;
    if parts.next().is_some() {
        return Err(malformed(path, 1, "trailing header fields"));
    }
    if joints == 0 {
        return Err(malformed(path, 1, "J must be >= 1"));
    }
    if persons == 0 || persons > MAX_PERSONS {
        return Err(malformed(path, 1, "M must be 1 or 2"));
    }
    Ok(SequenceHeader {
        frames,
        joints,
        persons,
    })
}

/// Reads only the header line of a sequence file.
pub fn read_header(path: &Path) -> Result<SequenceHeader> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = text.lines().next().ok_or_else(|| malformed(path, 1, "empty file"))?;
    parse_header(path, first)
}

pub fn parse_sequence(path: &Path) -> Result<SkeletonSequence> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sequence_str(path, &text)
}

/// Parses sequence text; `path` is used only for error messages.
pub fn parse_sequence_str(path: &Path, text: &str) -> Result<SkeletonSequence> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| malformed(path, 1, "empty file"))?;
    let h = parse_header(path, header)?;
    if h.frames == 0 {
        return Err(Error::EmptySequence);
    }
    let mut frames = Vec::with_capacity(h.frames);
    for t in 1..=h.frames {
        let mut persons = Vec::with_capacity(h.persons);
        for n in 1..=h.persons {
            let mut joints = Vec::with_capacity(h.joints);
            for j in 1..=h.joints {
                let (lineno, line) = lines
                    .next()
                    .ok_or_else(|| malformed(path, 0, format!("missing data line for t={t} n={n} j={j}")))?;
                let lineno = lineno + 1;
                let toks: Vec<&str> = line.split_whitespace().collect();
                if toks.len() != 6 {
                    return Err(malformed(path, lineno, "expected `t n j x y z`"));
                }
                let idx: Vec<usize> = toks[..3]
                    .iter()
                    .map(|s| s.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| malformed(path, lineno, "bad index"))?;
                if idx != [t, n, j] {
                    return Err(malformed(
                        path,
                        lineno,
                        format!("expected indices {t} {n} {j}, found {} {} {}", idx[0], idx[1], idx[2]),
                    ));
                }
                let xyz: Vec<f64> = toks[3..]
                    .iter()
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| malformed(path, lineno, "bad coordinate"))?;
                let joint = Joint::new(xyz[0], xyz[1], xyz[2]);
                if !joint.is_finite() {
                    return Err(Error::NonFiniteJoint { t, n, j });
                }
                joints.push(joint);
            }
            persons.push(PersonFrame { joints });
        }
        frames.push(persons);
    }
    if let Some((lineno, _)) = lines.next() {
        return Err(malformed(path, lineno + 1, "more data lines than the header declares"));
    }
    SkeletonSequence::new(frames, SequenceMeta::default())
}

pub fn format_sequence(seq: &SkeletonSequence) -> String {
    let mut out = format!(
        "SKEL v1 T={} J={} M={}\n",
        seq.frame_count(),
        seq.joint_count(),
        seq.person_count()
    );
    for (t, frame) in seq.frames.iter().enumerate() {
        for (n, person) in frame.iter().enumerate() {
            for (j, v) in person.joints.iter().enumerate() {
                // `{}` on f64 prints the shortest string that parses back exactly.
                let _ = writeln!(out, "{} {} {} {} {} {}", t + 1, n + 1, j + 1, v.x, v.y, v.z);
            }
        }
    }
    out
}

pub fn write_sequence(seq: &SkeletonSequence, path: &Path) -> Result<()> {
    fs::write(path, format_sequence(seq)).map_err(|e| Error::io(path, e))
}

/// Source frame indices (zero-based) selected when resampling `source` frames to `target`.
pub fn sample_indices(source: usize, target: usize) -> Vec<usize> {
    assert!(source >= 1 && target >= 1);
    if source < target {
        // cyclic extension to `target` frames, then identity sampling
        return (0..target).map(|i| i % source).collect();
    }
    // round(i * source / target), half rounds up, in exact integer arithmetic
    (0..target)
        .map(|i| ((2 * i * source + target) / (2 * target)).min(source - 1))
        .collect()
}

pub fn sample_frames(seq: &SkeletonSequence, target: usize) -> Result<SkeletonSequence> {
    if target == 0 {
        return Err(Error::Config("frame count T must be >= 1".into()));
    }
    let frames = sample_indices(seq.frame_count(), target)
        .into_iter()
        .map(|i| seq.frames[i].clone())
        .collect();
    Ok(SkeletonSequence {
        frames,
        joint_count: seq.joint_count,
        meta: seq.meta.clone(),
    })
}

/// Drops person slots that are all-zero in every frame (at least one slot is
/// kept), then translates everything so the first frame's root joint of the
/// first remaining person sits at the origin.
pub fn normalize_sequence(seq: &SkeletonSequence, root_joint: usize) -> Result<SkeletonSequence> {
    if root_joint >= seq.joint_count {
        return Err(Error::IndexOutOfRange {
            what: "root joint",
            index: root_joint + 1,
            max: seq.joint_count,
        });
    }
    let persons = seq.person_count();
    let mut keep: Vec<usize> = (0..persons)
        .filter(|&n| !seq.frames.iter().all(|f| f[n].joints.iter().all(Joint::is_zero)))
        .collect();
    if keep.is_empty() {
        keep.push(0);
    }
    let origin = seq.frames[0][keep[0]].joints[root_joint];
    let frames = seq
        .frames
        .iter()
        .map(|frame| {
            keep.iter()
                .map(|&n| PersonFrame {
                    joints: frame[n].joints.iter().map(|v| v.translated(origin)).collect(),
                })
                .collect()
        })
        .collect();
    Ok(SkeletonSequence {
        frames,
        joint_count: seq.joint_count,
        meta: seq.meta.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
    pub subject: u32,
    pub view: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub class_count: usize,
    pub joint_count: usize,
    pub max_persons: usize,
}

impl DatasetManifest {
    pub fn new(
        entries: Vec<ManifestEntry>,
        class_count: usize,
        joint_count: usize,
        max_persons: usize,
    ) -> Result<Self> {
        if let Some(e) = entries.iter().find(|e| e.label >= class_count) {
            return Err(Error::Config(format!(
                "label {} of {} outside [0, {class_count})",
                e.label,
                e.path.display()
            )));
        }
        if max_persons == 0 || max_persons > MAX_PERSONS {
            return Err(Error::Config("max persons must be 1 or 2".into()));
        }
        Ok(DatasetManifest {
            entries,
            class_count,
            joint_count,
            max_persons,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Indices of the entries of each class, in manifest order.
    pub fn class_pools(&self) -> Vec<Vec<usize>> {
        let mut pools = vec![Vec::new(); self.class_count];
        for (i, e) in self.entries.iter().enumerate() {
            pools[e.label].push(i);
        }
        pools
    }

    pub fn subset(&self, indices: &[usize]) -> DatasetManifest {
        DatasetManifest {
            entries: indices.iter().map(|&i| self.entries[i].clone()).collect(),
            ..self.clone()
        }
    }

    /// Parses and validates every referenced sequence, attaching manifest metadata.
    pub fn load_sequences(&self) -> Result<Vec<SkeletonSequence>> {
        par::try_map(&self.entries, |e| {
            let seq = parse_sequence(&e.path)?;
            if seq.joint_count() != self.joint_count {
                return Err(malformed(
                    &e.path,
                    1,
                    format!("J={} but manifest expects {}", seq.joint_count(), self.joint_count),
                ));
            }
            Ok(seq.with_meta(SequenceMeta {
                label: Some(ClassLabel::new(e.label)),
                subject: Some(e.subject),
                view: Some(e.view),
                dataset: None,
            }))
        })
    }
}

/// Reads a manifest. The class count is `max label + 1` unless `class_count`
/// is given; joint and person counts come from the referenced file headers,
/// which must all exist and agree on J.
pub fn load_manifest(path: &Path, class_count: Option<usize>) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(malformed(path, i + 1, "expected path<TAB>label<TAB>subject<TAB>view"));
        }
        let num = |s: &str, what: &str| -> Result<u64> {
            s.trim()
                .parse()
                .map_err(|_| malformed(path, i + 1, format!("bad {what} `{s}`")))
        };
        let file = PathBuf::from(cols[0]);
        let file = if file.is_absolute() { file } else { base.join(file) };
        if !file.exists() {
            return Err(Error::io(
                &file,
                std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    "sequence file listed in manifest not found",
                ),
            ));
        }
        entries.push(ManifestEntry {
            path: file,
            label: num(cols[1], "label")? as usize,
            subject: num(cols[2], "subject")? as u32,
            view: num(cols[3], "view")? as u32,
        });
    }
    let classes = class_count.unwrap_or_else(|| entries.iter().map(|e| e.label + 1).max().unwrap_or(0));
    let headers = par::try_map(&entries, |e| read_header(&e.path))?;
    let joints = headers.first().map(|h| h.joints).unwrap_or(0);
    if let Some((e, h)) = entries.iter().zip(&headers).find(|(_, h)| h.joints != joints) {
        return Err(malformed(&e.path, 1, format!("J={} differs from J={joints}", h.joints)));
    }
    let persons = headers.iter().map(|h| h.persons).max().unwrap_or(1);
    DatasetManifest::new(entries, classes, joints, persons)
}

/// Writes a manifest; paths under `base` are stored relative to it.
pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = String::new();
    for e in &manifest.entries {
        let p = e.path.strip_prefix(base).unwrap_or(&e.path);
        let _ = writeln!(out, "{}\t{}\t{}\t{}", p.display(), e.label, e.subject, e.view);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
