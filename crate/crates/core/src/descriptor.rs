//! Hierarchical segment sampling and the arc-length-normalized pairwise
//! distance matrix descriptor.
//!
//! A segment's matrix holds `|p_i - p_j| / L` over its uniformly resampled
//! control points, so it is unchanged by rotation, translation, reflection and
//! uniform scaling of the segment.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{bad_param, FlowError, Result};
use crate::tracer::{fmt_sig9, Streamline};
use crate::Vec3;

/// Control points per segment.
pub const CONTROL_POINTS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: u64,
    pub streamline_id: u64,
    pub level: u32,
    pub arc_start: f64,
    pub arc_end: f64,
    pub points: Vec<Vec3>,
}

impl Segment {
    /// Polyline length of `points`.
    pub fn arc_length(&self) -> f64 {
        polyline_length(&self.points)
    }
}

pub fn polyline_length(points: &[Vec3]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub levels: u32,
    /// Arc length of the top-level window; each level halves it.
    pub max_len: f64,
    /// Window stride is `(1 - overlap) * level_length`.
    pub overlap: f64,
    pub min_points: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { levels: 3, max_len: 4.0, overlap: 0.5, min_points: 4 }
    }
}

impl SamplingConfig {
    fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(bad_param("sampling needs at least one level"));
        }
        if !(self.max_len > 0.0 && self.max_len.is_finite()) {
            return Err(bad_param(format!("max_len must be positive, got {}", self.max_len)));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(bad_param(format!("overlap must lie in [0, 1), got {}", self.overlap)));
        }
        if self.min_points < 4 {
            return Err(bad_param("min_points must be at least 4"));
        }
        Ok(())
    }

    pub fn level_length(&self, level: u32) -> f64 {
        self.max_len / 2f64.powi(level as i32)
    }
}

/// Slides windows of length `max_len / 2^k` along the streamline for every
/// level `k`. Windows holding fewer than `min_points` raw points are skipped.
///
/// Each segment's polyline starts and ends at points interpolated exactly at
/// its arc span, with the raw streamline points in between.
pub fn sample_segments(s: &Streamline, cfg: &SamplingConfig) -> Result<Vec<Segment>> {
    cfg.validate()?;
    let total = s.arc_length();
    let slack = 1e-9 * total.max(1.0);
    let mut out = Vec::new();
    for level in 0..cfg.levels {
        let len = cfg.level_length(level);
        let stride = (1.0 - cfg.overlap) * len;
        let mut m = 0usize;
        loop {
            let start = m as f64 * stride;
            if start + len > total + slack {
                break;
            }
            let end = (start + len).min(total);
            m += 1;
            let lo = s.cumulative_arc.partition_point(|&a| a < start);
            let hi = s.cumulative_arc.partition_point(|&a| a <= end);
            if hi.saturating_sub(lo) < cfg.min_points {
                continue;
            }
            let mut points = Vec::with_capacity(hi - lo + 2);
            points.push(point_at_arc(s, start));
            for i in lo..hi {
                let a = s.cumulative_arc[i];
                if a > start && a < end {
                    points.push(s.points[i]);
                }
            }
            points.push(point_at_arc(s, end));
            out.push(Segment {
                id: out.len() as u64,
                streamline_id: s.seed_id,
                level,
                arc_start: start,
                arc_end: end,
                points,
            });
        }
    }
    Ok(out)
}

/// Samples every streamline and numbers segments consecutively from 0.
pub fn sample_all(lines: &[Streamline], cfg: &SamplingConfig) -> Result<Vec<Segment>> {
    let mut all = Vec::new();
    for s in lines {
        for mut seg in sample_segments(s, cfg)? {
            seg.id = all.len() as u64;
            all.push(seg);
        }
    }
    Ok(all)
}

fn point_at_arc(s: &Streamline, arc: f64) -> Vec3 {
    let arcs = &s.cumulative_arc;
    let i = arcs.partition_point(|&a| a <= arc);
    if i == 0 {
        return s.points[0];
    }
    if i >= arcs.len() {
        return *s.points.last().unwrap();
    }
    let (a0, a1) = (arcs[i - 1], arcs[i]);
    if a1 <= a0 {
        return s.points[i - 1];
    }
    let t = (arc - a0) / (a1 - a0);
    s.points[i - 1] + (s.points[i] - s.points[i - 1]) * t
}

/// Places `n` points at equal arc-length spacing along the segment polyline.
/// The first and last points are the polyline's endpoints, bit for bit.
pub fn resample(seg: &Segment, n: usize) -> Result<Vec<Vec3>> {
    resample_polyline(&seg.points, n)
}

pub fn resample_polyline(points: &[Vec3], n: usize) -> Result<Vec<Vec3>> {
    if n < 2 {
        return Err(bad_param("resampling needs at least 2 control points"));
    }
    let total = polyline_length(points);
    if !(total > 0.0) {
        return Err(FlowError::DegenerateSegment);
    }
    let mut out = Vec::with_capacity(n);
    out.push(points[0]);
    let mut j = 0usize;
    let mut walked = 0.0;
    let mut seg_len = (points[1] - points[0]).norm();
    for i in 1..n - 1 {
        let target = i as f64 * total / (n - 1) as f64;
        while walked + seg_len < target && j + 2 < points.len() {
            walked += seg_len;
            j += 1;
            seg_len = (points[j + 1] - points[j]).norm();
        }
        let t = if seg_len > 0.0 { ((target - walked) / seg_len).clamp(0.0, 1.0) } else { 0.0 };
        out.push(points[j] + (points[j + 1] - points[j]) * t);
    }
    out.push(*points.last().unwrap());
    Ok(out)
}

/// Square matrix of pairwise control-point distances divided by arc length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(FlowError::ShapeMismatch { expected: n * n, actual: values.len() });
        }
        Ok(Self { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Row-major values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

pub fn distance_matrix(points: &[Vec3], arc_len: f64) -> Result<DistanceMatrix> {
    if !(arc_len > 0.0 && arc_len.is_finite()) {
        return Err(FlowError::DegenerateSegment);
    }
    let n = points.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = (points[i] - points[j]).norm() / arc_len;
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix { n, values })
}

/// Resamples to `n` control points and builds the normalized matrix, using
/// the segment's polyline length as the arc length.
pub fn describe(seg: &Segment, n: usize) -> Result<DistanceMatrix> {
    let pts = resample(seg, n)?;
    distance_matrix(&pts, seg.arc_length())
}

pub fn describe_all(segments: &[Segment]) -> Result<Vec<DistanceMatrix>> {
    segments.iter().map(|s| describe(s, CONTROL_POINTS)).collect()
}

const DM_MAGIC: &[u8; 4] = b"FQDM";

/// Serializes a batch: `FQDM`, u64 count, u32 n, u32 scalar bits (32), then
/// `count·n·n` little-endian f32, row-major per matrix.
pub fn encode_dm(matrices: &[DistanceMatrix]) -> Result<Vec<u8>> {
    let n = matrices.first().map_or(CONTROL_POINTS, |m| m.n);
    if let Some(bad) = matrices.iter().find(|m| m.n != n) {
        return Err(FlowError::ShapeMismatch { expected: n, actual: bad.n });
    }
    let mut buf = Vec::with_capacity(20 + matrices.len() * n * n * 4);
    buf.extend_from_slice(DM_MAGIC);
    buf.extend_from_slice(&(matrices.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&32u32.to_le_bytes());
    for m in matrices {
        for v in &m.values {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn decode_dm(bytes: &[u8]) -> Result<Vec<DistanceMatrix>> {
    if bytes.len() < 20 || &bytes[..4] != DM_MAGIC {
        return Err(FlowError::Format("not a distance-matrix batch".into()));
    }
    let count = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let n = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let bits = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
    if bits != 32 {
        return Err(FlowError::Format(format!("unsupported scalar width {bits}")));
    }
    let body = &bytes[20..];
    if body.len() != count * n * n * 4 {
        return Err(FlowError::Format(format!(
            "payload holds {} bytes, header implies {}",
            body.len(),
            count * n * n * 4
        )));
    }
    Ok(body
        .chunks_exact((n * n * 4).max(1))
        .take(count)
        .map(|c| DistanceMatrix {
            n,
            values: c
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
        })
        .collect())
}

pub fn write_dm(path: impl AsRef<Path>, matrices: &[DistanceMatrix]) -> Result<()> {
    fs::write(path, encode_dm(matrices)?)?;
    Ok(())
}

pub fn read_dm(path: impl AsRef<Path>) -> Result<Vec<DistanceMatrix>> {
    decode_dm(&fs::read(path)?)
}

/// One segment per line:
/// `id streamline_id level arc_start arc_end n x0 y0 z0 ...`.
pub fn export_segments(segments: &[Segment]) -> String {
    let mut out = String::new();
    for s in segments {
        write!(
            out,
            "{} {} {} {} {} {}",
            s.id,
            s.streamline_id,
            s.level,
            s.arc_start,
            s.arc_end,
            s.points.len()
        )
        .unwrap();
        for p in &s.points {
            write!(out, " {} {} {}", fmt_sig9(p.x), fmt_sig9(p.y), fmt_sig9(p.z)).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn import_segments(text: &str) -> Result<Vec<Segment>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(lineno, line)| {
            let err = || FlowError::Format(format!("segment line {}", lineno + 1));
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() < 6 {
                return Err(err());
            }
            let n: usize = f[5].parse().map_err(|_| err())?;
            if f.len() != 6 + 3 * n || n < 2 {
                return Err(err());
            }
            let coords: Vec<f64> =
                f[6..].iter().map(|s| s.parse().map_err(|_| err())).collect::<Result<_>>()?;
            Ok(Segment {
                id: f[0].parse().map_err(|_| err())?,
                streamline_id: f[1].parse().map_err(|_| err())?,
                level: f[2].parse().map_err(|_| err())?,
                arc_start: f[3].parse().map_err(|_| err())?,
                arc_end: f[4].parse().map_err(|_| err())?,
                points: coords.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect(),
            })
        })
        .collect()
}
