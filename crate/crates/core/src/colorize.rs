//! Skeleton clouds and their three colorizations.
//!
//! A skeleton cloud stacks every joint of every frame into one unordered
//! point set, remembering each point's frame `t`, joint `j` and person `n`
//! (all 1-based). The temporal scheme walks red -> green -> blue with `t`,
//! the spatial scheme does the same with `j`, and the person scheme paints
//! person 1 red and person 2 blue.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton_data::SkeletonSequence;

pub type Rgb = [f64; 3];

/// Fill color of points that carry no scheme color.
pub const UNCOLORED: Rgb = [0.0, 0.0, 0.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub position: [f64; 3],
    /// Frame index, 1..=T.
    pub t: usize,
    /// Joint index, 1..=J.
    pub j: usize,
    /// Person index, 1 or 2.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonCloud {
    pub points: Vec<CloudPoint>,
    pub frames: usize,
    pub joints: usize,
    pub persons: usize,
}

impl SkeletonCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// 6-channel rows with the uncolored fill, as fed to an encoder in raw mode.
    pub fn raw_points6(&self) -> Vec<[f64; 6]> {
        self.points
            .iter()
            .map(|p| {
                let [x, y, z] = p.position;
                [x, y, z, 0.0, 0.0, 0.0]
            })
            .collect()
    }
}

/// Stacks all frames into a cloud, ordered t-major, then person, then joint.
pub fn build_cloud(seq: &SkeletonSequence) -> SkeletonCloud {
    let mut points = Vec::with_capacity(seq.frame_count() * seq.person_count() * seq.joint_count());
    for (t, frame) in seq.frames().iter().enumerate() {
        for (n, person) in frame.iter().enumerate() {
            for (j, v) in person.joints.iter().enumerate() {
                points.push(CloudPoint {
                    position: v.to_array(),
                    t: t + 1,
                    j: j + 1,
                    n: n + 1,
                });
            }
        }
    }
    SkeletonCloud {
        points,
        frames: seq.frame_count(),
        joints: seq.joint_count(),
        persons: seq.person_count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorScheme {
    Temporal,
    Spatial,
    Person,
}

impl ColorScheme {
    pub const ALL: [ColorScheme; 3] = [ColorScheme::Temporal, ColorScheme::Spatial, ColorScheme::Person];

    pub fn name(self) -> &'static str {
        match self {
            ColorScheme::Temporal => "temporal",
            ColorScheme::Spatial => "spatial",
            ColorScheme::Person => "person",
        }
    }

    /// Stream abbreviation used in result tables: TS, SS, PS.
    pub fn stream_tag(self) -> &'static str {
        match self {
            ColorScheme::Temporal => "TS",
            ColorScheme::Spatial => "SS",
            ColorScheme::Person => "PS",
        }
    }
}

impl std::str::FromStr for ColorScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "temporal" | "ts" => Ok(ColorScheme::Temporal),
            "spatial" | "ss" => Ok(ColorScheme::Spatial),
            "person" | "ps" => Ok(ColorScheme::Person),
            _ => Err(Error::Config(format!(
                "unknown color scheme `{s}` (expected temporal, spatial or person)"
            ))),
        }
    }
}

impl std::fmt::Display for ColorScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Red -> green -> blue ramp over `index` in 1..=`len`. The branch test
/// `index <= len/2` is done as `2*index <= len`, so no truncation happens.
fn ramp(index: usize, len: usize, what: &'static str) -> Result<Rgb> {
    if index == 0 || index > len {
        return Err(Error::IndexOutOfRange { what, index, max: len });
    }
    let s = index as f64 / len as f64;
    Ok(if 2 * index <= len {
        [-2.0 * s + 1.0, 2.0 * s, 0.0]
    } else {
        [0.0, -2.0 * s + 2.0, 2.0 * s - 1.0]
    })
}

pub fn temporal_color(t: usize, frames: usize) -> Result<Rgb> {
    ramp(t, frames, "frame")
}

pub fn spatial_color(j: usize, joints: usize) -> Result<Rgb> {
    ramp(j, joints, "joint")
}

pub fn person_color(n: usize) -> Result<Rgb> {
    match n {
        1 => Ok([1.0, 0.0, 0.0]),
        2 => Ok([0.0, 0.0, 1.0]),
        _ => Err(Error::IndexOutOfRange {
            what: "person",
            index: n,
            max: 2,
        }),
    }
}

/// A skeleton cloud with a color per point. Positions are shared with the
/// source cloud untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorizedCloud {
    pub cloud: SkeletonCloud,
    pub colors: Vec<Rgb>,
    pub colored: Vec<bool>,
    pub scheme: ColorScheme,
}

impl ColorizedCloud {
    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn colored_count(&self) -> usize {
        self.colored.iter().filter(|&&c| c).count()
    }

    pub fn points6(&self) -> Vec<[f64; 6]> {
        self.cloud
            .points
            .iter()
            .zip(&self.colors)
            .map(|(p, c)| {
                let [x, y, z] = p.position;
                [x, y, z, c[0], c[1], c[2]]
            })
            .collect()
    }
}

pub fn colorize_cloud(cloud: &SkeletonCloud, scheme: ColorScheme) -> Result<ColorizedCloud> {
    let colors = cloud
        .points
        .iter()
        .map(|p| match scheme {
            ColorScheme::Temporal => temporal_color(p.t, cloud.frames),
            ColorScheme::Spatial => spatial_color(p.j, cloud.joints),
            ColorScheme::Person => person_color(p.n),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ColorizedCloud {
        cloud: cloud.clone(),
        colored: vec![true; colors.len()],
        colors,
        scheme,
    })
}

/// 1-based indices in `1..=len` kept colored at ratio `ratio`: the
/// `ceil(ratio*len)` indices `1 + ceil(i*len/m)`, spread evenly over the
/// range. At ratio 0.5 this is exactly the odd indices.
pub fn mask_indices(len: usize, ratio: f64) -> Vec<usize> {
    let ratio = ratio.clamp(0.0, 1.0);
    // the epsilon keeps products like 0.3*10 = 3.0000000000000004 from rounding up
    let m = ((ratio * len as f64) - 1e-9).ceil().max(0.0) as usize;
    let m = m.min(len);
    (0..m).map(|i| 1 + (i * len).div_ceil(m)).collect()
}

/// Keeps colors on a stride-uniform subset of frames (temporal and person
/// schemes) or joints (spatial scheme); the rest get the uncolored fill.
pub fn apply_color_mask(cloud: &ColorizedCloud, ratio: f64) -> ColorizedCloud {
    let (len, key): (usize, fn(&CloudPoint) -> usize) = match cloud.scheme {
        ColorScheme::Temporal | ColorScheme::Person => (cloud.cloud.frames, |p| p.t),
        ColorScheme::Spatial => (cloud.cloud.joints, |p| p.j),
    };
    let mut keep = vec![false; len + 1];
    for i in mask_indices(len, ratio) {
        keep[i] = true;
    }
    let mut out = cloud.clone();
    for ((p, color), flag) in cloud.cloud.points.iter().zip(&mut out.colors).zip(&mut out.colored) {
        if !keep[key(p)] {
            *color = UNCOLORED;
            *flag = false;
        }
    }
    out
}

fn channel_byte(c: f64) -> u8 {
    (255.0 * c).round().clamp(0.0, 255.0) as u8
}

/// ASCII PLY text for 6-channel rows (xyz + rgb in [0,1]).
pub fn format_ply(points: &[[f64; 6]]) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\ncomment skelpaint colored skeleton cloud\n");
    let _ = writeln!(out, "element vertex {}", points.len());
    for axis in ["x", "y", "z"] {
        let _ = writeln!(out, "property double {axis}");
    }
    for ch in ["red", "green", "blue"] {
        let _ = writeln!(out, "property uchar {ch}");
    }
    out.push_str("end_header\n");
    for p in points {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {}",
            p[0],
            p[1],
            p[2],
            channel_byte(p[3]),
            channel_byte(p[4]),
            channel_byte(p[5])
        );
    }
    out
}

pub fn export_ply(cloud: &ColorizedCloud, path: &Path) -> Result<()> {
    write_ply(&cloud.points6(), path)
}

pub fn write_ply(points: &[[f64; 6]], path: &Path) -> Result<()> {
    fs::write(path, format_ply(points)).map_err(|e| Error::io(path, e))
}

/// Vertex count declared in a PLY header, if present.
pub fn ply_vertex_count(text: &str) -> Option<usize> {
    text.lines()
        .take_while(|l| *l != "end_header")
        .find_map(|l| l.strip_prefix("element vertex "))
        .and_then(|n| n.trim().parse().ok())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton_data::{Joint, PersonFrame, SequenceMeta};

    fn seq(frames: usize, persons: usize, joints: usize) -> SkeletonSequence {
        let f = (0..frames)
            .map(|t| {
                (0..persons)
                    .map(|n| PersonFrame {
                        joints: (0..joints).map(|j| Joint::new(t as f64, n as f64, j as f64)).collect(),
                    })
                    .collect()
            })
            .collect();
        SkeletonSequence::new(f, SequenceMeta::default()).unwrap()
    }

    fn close(a: Rgb, b: Rgb) -> bool {
        a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-12)
    }

    #[test]
    fn cloud_sizes() {
        assert_eq!(build_cloud(&seq(40, 2, 25)).len(), 2000);
        assert_eq!(build_cloud(&seq(50, 1, 20)).len(), 1000);
        let one = build_cloud(&seq(1, 1, 1));
        assert_eq!(
            one.points,
            vec![CloudPoint {
                position: [0.0, 0.0, 0.0],
                t: 1,
                j: 1,
                n: 1
            }]
        );
    }

    #[test]
    fn cloud_order_is_t_then_n_then_j() {
        let c = build_cloud(&seq(2, 2, 2));
        let prov: Vec<_> = c.points.iter().map(|p| (p.t, p.n, p.j)).collect();
        assert_eq!(prov[..5], [(1, 1, 1), (1, 1, 2), (1, 2, 1), (1, 2, 2), (2, 1, 1)]);
    }

    #[test]
    fn temporal_spot_values() {
        assert!(close(temporal_color(10, 40).unwrap(), [0.5, 0.5, 0.0]));
        assert_eq!(temporal_color(20, 40).unwrap(), [0.0, 1.0, 0.0]);
        assert_eq!(temporal_color(40, 40).unwrap(), [0.0, 0.0, 1.0]);
        assert!(close(temporal_color(30, 40).unwrap(), [0.0, 0.5, 0.5]));
        assert!(matches!(temporal_color(0, 40), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(temporal_color(41, 40), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn spatial_spot_values() {
        assert!(close(spatial_color(5, 20).unwrap(), [0.5, 0.5, 0.0]));
        assert_eq!(spatial_color(10, 20).unwrap(), [0.0, 1.0, 0.0]);
        assert_eq!(spatial_color(20, 20).unwrap(), [0.0, 0.0, 1.0]);
        assert!(spatial_color(21, 20).is_err());
    }

    #[test]
    fn person_colors() {
        assert_eq!(person_color(1).unwrap(), [1.0, 0.0, 0.0]);
        assert_eq!(person_color(2).unwrap(), [0.0, 0.0, 1.0]);
        assert!(matches!(person_color(3), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn temporal_on_two_frame_cloud() {
        let c = colorize_cloud(&build_cloud(&seq(2, 1, 1)), ColorScheme::Temporal).unwrap();
        assert_eq!(c.colors, vec![[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(c.colored.iter().all(|&f| f));
    }

    #[test]
    fn spatial_depends_only_on_joint() {
        let c = colorize_cloud(&build_cloud(&seq(5, 2, 7)), ColorScheme::Spatial).unwrap();
        for (a, ca) in c.cloud.points.iter().zip(&c.colors) {
            for (b, cb) in c.cloud.points.iter().zip(&c.colors) {
                if a.j == b.j {
                    assert_eq!(ca, cb);
                }
            }
        }
    }

    #[test]
    fn person_scheme_splits_evenly() {
        let c = colorize_cloud(&build_cloud(&seq(4, 2, 3)), ColorScheme::Person).unwrap();
        let red = c.colors.iter().filter(|c| **c == [1.0, 0.0, 0.0]).count();
        let blue = c.colors.iter().filter(|c| **c == [0.0, 0.0, 1.0]).count();
        assert_eq!((red, blue), (12, 12));
    }

    #[test]
    fn colorize_keeps_positions_bitwise() {
        let cloud = build_cloud(&seq(3, 2, 4));
        for s in ColorScheme::ALL {
            let c = colorize_cloud(&cloud, s).unwrap();
            assert_eq!(c.cloud, cloud);
        }
    }

    #[test]
    fn mask_indices_rules() {
        assert_eq!(mask_indices(4, 0.5), vec![1, 3]);
        assert_eq!(mask_indices(5, 0.5), vec![1, 3, 5]);
        assert_eq!(mask_indices(6, 1.0), vec![1, 2, 3, 4, 5, 6]);
        assert!(mask_indices(6, 0.0).is_empty());
        assert_eq!(mask_indices(10, 0.3), vec![1, 5, 8]);
        for len in 1..60 {
            let odd: Vec<usize> = (1..=len).step_by(2).collect();
            assert_eq!(mask_indices(len, 0.5), odd);
        }
    }

    #[test]
    fn temporal_mask_keeps_odd_frames() {
        let c = colorize_cloud(&build_cloud(&seq(4, 1, 2)), ColorScheme::Temporal).unwrap();
        let m = apply_color_mask(&c, 0.5);
        for ((p, col), flag) in m.cloud.points.iter().zip(&m.colors).zip(&m.colored) {
            if p.t % 2 == 1 {
                assert!(*flag);
                assert_eq!(*col, temporal_color(p.t, 4).unwrap());
            } else {
                assert!(!*flag);
                assert_eq!(*col, UNCOLORED);
            }
        }
        assert_eq!(m.colored_count(), 4);
    }

    #[test]
    fn spatial_mask_keeps_odd_joints_and_person_uses_frames() {
        let cloud = build_cloud(&seq(3, 2, 5));
        let s = apply_color_mask(&colorize_cloud(&cloud, ColorScheme::Spatial).unwrap(), 0.5);
        assert!(s.cloud.points.iter().zip(&s.colored).all(|(p, &f)| f == (p.j % 2 == 1)));
        let p = apply_color_mask(&colorize_cloud(&cloud, ColorScheme::Person).unwrap(), 0.5);
        assert!(p.cloud.points.iter().zip(&p.colored).all(|(q, &f)| f == (q.t % 2 == 1)));
    }

    #[test]
    fn mask_extremes() {
        let c = colorize_cloud(&build_cloud(&seq(5, 1, 3)), ColorScheme::Temporal).unwrap();
        assert_eq!(apply_color_mask(&c, 1.0), c);
        let none = apply_color_mask(&c, 0.0);
        assert!(none.colored.iter().all(|&f| !f));
        assert!(none.colors.iter().all(|c| *c == UNCOLORED));
    }

    #[test]
    fn ply_lines() {
        let text = format_ply(&[[0.0, 0.0, 0.0, 0.0, 1.0, 0.0], [1.5, -2.0, 0.25, 0.0, 0.0, 0.0]]);
        let body: Vec<&str> = text.split("end_header\n").nth(1).unwrap().lines().collect();
        assert_eq!(body, vec!["0 0 0 0 255 0", "1.5 -2 0.25 0 0 0"]);
        assert_eq!(ply_vertex_count(&text), Some(2));
    }

    #[test]
    fn export_writes_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let c = colorize_cloud(&build_cloud(&seq(4, 1, 2)), ColorScheme::Temporal).unwrap();
        export_ply(&apply_color_mask(&c, 0.5), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(ply_vertex_count(&text), Some(8));
        assert!(export_ply(&c, &dir.path().join("missing/dir/c.ply"))
            .unwrap_err()
            .is_io());
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("Temporal".parse::<ColorScheme>().unwrap(), ColorScheme::Temporal);
        assert_eq!("ss".parse::<ColorScheme>().unwrap(), ColorScheme::Spatial);
        assert!("hue".parse::<ColorScheme>().is_err());
    }
}
