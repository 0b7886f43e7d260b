//! Regular-grid vector fields: trilinear sampling, analytic generators and the
//! `.meta`/`.vec` raw file pair.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bad_param, FlowError, Result};
use crate::Vec3;

/// Axis-aligned physical domain of a field, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Bounds {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        for a in 0..3 {
            if !(min[a].is_finite() && max[a].is_finite() && min[a] < max[a]) {
                return Err(bad_param(format!(
                    "bounds axis {a}: min {} must be below max {}",
                    min[a], max[a]
                )));
            }
        }
        Ok(Self { min, max })
    }

    pub fn unit() -> Self {
        Self { min: [0.0; 3], max: [1.0; 3] }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn extent(&self) -> Vec3 {
        Vec3::new(
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        )
    }

    pub fn center(&self) -> Vec3 {
        Vec3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }
}

/// Velocity samples on a regular grid, x-fastest.
///
/// Immutable after construction, so a single field can be shared across
/// tracing threads without locking.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    dims: [usize; 3],
    bounds: Bounds,
    data: Vec<[f32; 3]>,
}

impl VectorField {
    pub fn new(dims: [usize; 3], bounds: Bounds, data: Vec<[f32; 3]>) -> Result<Self> {
        if dims.iter().any(|&n| n < 2) {
            return Err(bad_param(format!("grid dims {dims:?} need at least 2 nodes per axis")));
        }
        Bounds::new(bounds.min, bounds.max)?;
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(FlowError::ShapeMismatch { expected, actual: data.len() });
        }
        if data.iter().flatten().any(|c| !c.is_finite()) {
            return Err(bad_param("field contains non-finite velocity components"));
        }
        Ok(Self { dims, bounds, data })
    }

    /// Samples `f` at every grid node.
    pub fn from_fn(dims: [usize; 3], bounds: Bounds, f: impl Fn(Vec3) -> Vec3) -> Result<Self> {
        if dims.iter().any(|&n| n < 2) {
            return Err(bad_param(format!("grid dims {dims:?} need at least 2 nodes per axis")));
        }
        let bounds = Bounds::new(bounds.min, bounds.max)?;
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let p = node_position(&bounds, dims, [i, j, k]);
                    let v = f(p);
                    data.push([v.x as f32, v.y as f32, v.z as f32]);
                }
            }
        }
        Self::new(dims, bounds, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn data(&self) -> &[[f32; 3]] {
        &self.data
    }

    pub fn spacing(&self) -> Vec3 {
        let e = self.bounds.extent();
        Vec3::new(
            e.x / (self.dims[0] - 1) as f64,
            e.y / (self.dims[1] - 1) as f64,
            e.z / (self.dims[2] - 1) as f64,
        )
    }

    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let v = self.data[self.node_index(i, j, k)];
        Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64)
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        node_position(&self.bounds, self.dims, [i, j, k])
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.bounds.contains(p)
    }

    /// Trilinear interpolation of the eight nodes around `p`.
    pub fn interpolate(&self, p: &Vec3) -> Result<Vec3> {
        if !self.contains(p) {
            return Err(FlowError::OutOfDomain([p.x, p.y, p.z]));
        }
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let cells = self.dims[a] - 1;
            let f = (p[a] - self.bounds.min[a]) / (self.bounds.max[a] - self.bounds.min[a])
                * cells as f64;
            let i = (f.floor() as usize).min(cells - 1);
            base[a] = i;
            frac[a] = f - i as f64;
        }
        let [i, j, k] = base;
        let [tx, ty, tz] = frac;
        let mut out = Vec3::zeros();
        for (dk, wz) in [(0, 1.0 - tz), (1, tz)] {
            for (dj, wy) in [(0, 1.0 - ty), (1, ty)] {
                for (di, wx) in [(0, 1.0 - tx), (1, tx)] {
                    let w = wx * wy * wz;
                    if w != 0.0 {
                        out += self.node(i + di, j + dj, k + dk) * w;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Returns a copy with every velocity negated.
    pub fn reversed(&self) -> Self {
        Self {
            dims: self.dims,
            bounds: self.bounds,
            data: self.data.iter().map(|v| [-v[0], -v[1], -v[2]]).collect(),
        }
    }
}

fn node_position(bounds: &Bounds, dims: [usize; 3], idx: [usize; 3]) -> Vec3 {
    let mut p = Vec3::zeros();
    for a in 0..3 {
        let t = idx[a] as f64 / (dims[a] - 1) as f64;
        p[a] = if idx[a] == dims[a] - 1 {
            bounds.max[a]
        } else {
            bounds.min[a] + t * (bounds.max[a] - bounds.min[a])
        };
    }
    p
}

/// A linearized critical point blended in with a Gaussian weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPointSpec {
    pub position: [f64; 3],
    pub jacobian: [[f64; 3]; 3],
    pub radius: f64,
}

impl CriticalPointSpec {
    fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(bad_param(format!("critical point radius {} must be > 0", self.radius)));
        }
        if self.jacobian.iter().flatten().chain(&self.position).any(|v| !v.is_finite()) {
            return Err(bad_param("critical point jacobian/position must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Uniform,
    Rotor,
    Helix,
    CriticalPoints,
    TwoSwirls,
}

impl SyntheticKind {
    pub const ALL: [SyntheticKind; 5] = [
        SyntheticKind::Uniform,
        SyntheticKind::Rotor,
        SyntheticKind::Helix,
        SyntheticKind::CriticalPoints,
        SyntheticKind::TwoSwirls,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SyntheticKind::Uniform => "uniform",
            SyntheticKind::Rotor => "rotor",
            SyntheticKind::Helix => "helix",
            SyntheticKind::CriticalPoints => "critical_points",
            SyntheticKind::TwoSwirls => "two_swirls",
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SyntheticKind {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        SyntheticKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| bad_param(format!("unknown field kind `{s}`")))
    }
}

/// Knobs for the analytic generators. Unused fields are ignored per kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    /// Axial velocity `c` of helix and two-swirl fields.
    pub pitch: f64,
    /// Explicit critical points; when empty, five are drawn from the seed.
    pub critical_points: Vec<CriticalPointSpec>,
    /// Archetypes allowed when critical points are drawn from the seed.
    pub critical_kinds: Vec<CriticalKind>,
    /// Distance between the two swirl axes.
    pub swirl_separation: f64,
    /// Gaussian core radius of each swirl.
    pub swirl_core_radius: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            pitch: 0.5,
            critical_points: Vec::new(),
            critical_kinds: CriticalKind::ALL.to_vec(),
            swirl_separation: 1.0,
            swirl_core_radius: 0.6,
        }
    }
}

/// Builds one of the analytic fields. The result depends only on the
/// arguments.
///
/// * uniform: `(1, 0, 0)`
/// * rotor: `(-y, x, 0)`
/// * helix: `(-y, x, c)` with `c = params.pitch`
/// * critical_points: `Σ_k exp(-|p - p_k|² / r_k²) J_k (p - p_k)`
/// * two_swirls: two counter-rotating swirls about z-parallel axes at
///   `center ± separation/2` along x, each with rotation enveloped by
///   `exp(-ρ_k² / R²)`, plus the shared axial component `c`.
pub fn gen_synthetic(
    kind: SyntheticKind,
    dims: [usize; 3],
    bounds: Bounds,
    params: &SyntheticParams,
    seed: u64,
) -> Result<VectorField> {
    match kind {
        SyntheticKind::Uniform => VectorField::from_fn(dims, bounds, |_| Vec3::new(1.0, 0.0, 0.0)),
        SyntheticKind::Rotor => VectorField::from_fn(dims, bounds, |p| Vec3::new(-p.y, p.x, 0.0)),
        SyntheticKind::Helix => {
            let c = positive(params.pitch, "pitch")?;
            VectorField::from_fn(dims, bounds, |p| Vec3::new(-p.y, p.x, c))
        }
        SyntheticKind::CriticalPoints => {
            let specs = if params.critical_points.is_empty() {
                random_critical_points_of(&Bounds::new(bounds.min, bounds.max)?, 5, &params.critical_kinds, seed)?
            } else {
                params.critical_points.clone()
            };
            for s in &specs {
                s.validate()?;
            }
            let lin: Vec<(Vec3, Matrix3<f64>, f64)> = specs
                .iter()
                .map(|s| {
                    let j = Matrix3::from_fn(|r, c| s.jacobian[r][c]);
                    (Vec3::from(s.position), j, s.radius * s.radius)
                })
                .collect();
            VectorField::from_fn(dims, bounds, move |p| {
                lin.iter().fold(Vec3::zeros(), |acc, (p0, j, r2)| {
                    let d = p - p0;
                    acc + j * d * (-d.norm_squared() / r2).exp()
                })
            })
        }
        SyntheticKind::TwoSwirls => {
            let c = positive(params.pitch, "pitch")?;
            let sep = positive(params.swirl_separation, "swirl separation")?;
            let r2 = positive(params.swirl_core_radius, "swirl core radius")?.powi(2);
            let center = Bounds::new(bounds.min, bounds.max)?.center();
            let axes = [
                (center.x - 0.5 * sep, center.y, 1.0),
                (center.x + 0.5 * sep, center.y, -1.0),
            ];
            VectorField::from_fn(dims, bounds, move |p| {
                let mut v = Vec3::new(0.0, 0.0, c);
                for &(ax, ay, spin) in &axes {
                    let (dx, dy) = (p.x - ax, p.y - ay);
                    let g = spin * (-(dx * dx + dy * dy) / r2).exp();
                    v.x -= g * dy;
                    v.y += g * dx;
                }
                v
            })
        }
    }
}

fn positive(v: f64, what: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(bad_param(format!("{what} must be positive, got {v}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalKind {
    Spiral,
    Saddle,
    Node,
    Center,
}

impl CriticalKind {
    pub const ALL: [CriticalKind; 4] = [CriticalKind::Spiral, CriticalKind::Saddle, CriticalKind::Node, CriticalKind::Center];
}

/// Draws `count` critical points inside the central 80% of `bounds` with
/// jacobians from the usual archetypes (spiral, saddle, node, center),
/// randomly oriented.
pub fn random_critical_points(bounds: &Bounds, count: usize, seed: u64) -> Vec<CriticalPointSpec> {
    random_critical_points_of(bounds, count, &CriticalKind::ALL, seed).expect("non-empty archetype list")
}

/// Like [`random_critical_points`], restricted to the given archetypes.
pub fn random_critical_points_of(
    bounds: &Bounds,
    count: usize,
    kinds: &[CriticalKind],
    seed: u64,
) -> Result<Vec<CriticalPointSpec>> {
    if kinds.is_empty() {
        return Err(bad_param("critical point archetype list is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ext = bounds.extent();
    let radius = 0.25 * ext.x.min(ext.y).min(ext.z);
    Ok((0..count)
        .map(|_| {
            let position = [0, 1, 2].map(|a| bounds.min[a] + ext[a] * rng.random_range(0.1..0.9));
            let s = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let base = match kinds[rng.random_range(0..kinds.len())] {
                CriticalKind::Spiral => {
                    let a = s(&mut rng) * rng.random_range(0.1..0.4);
                    let w = rng.random_range(0.8..1.5);
                    Matrix3::new(a, -w, 0.0, w, a, 0.0, 0.0, 0.0, s(&mut rng) * 0.3)
                }
                CriticalKind::Saddle => Matrix3::from_diagonal(&Vec3::new(1.0, -1.0, s(&mut rng) * 0.5)),
                CriticalKind::Node => {
                    let g = s(&mut rng);
                    Matrix3::from_diagonal(&Vec3::new(g, g * 0.5, g * 0.25))
                }
                CriticalKind::Center => Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.3),
            };
            let rot = random_rotation(&mut rng);
            let j = rot * base * rot.transpose();
            CriticalPointSpec {
                position,
                jacobian: [0, 1, 2].map(|r| [0, 1, 2].map(|c| j[(r, c)])),
                radius,
            }
        })
        .collect())
}

fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let axis = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    match nalgebra::Unit::try_new(axis, 1e-9) {
        Some(axis) => *nalgebra::Rotation3::from_axis_angle(&axis, angle).matrix(),
        None => Matrix3::identity(),
    }
}

fn pair_paths(path: &Path) -> (PathBuf, PathBuf) {
    let base = match path.extension().and_then(|e| e.to_str()) {
        Some("meta") | Some("vec") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = base.clone().into_os_string();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    (with("meta"), with("vec"))
}

/// Writes `<path>.meta` and `<path>.vec`.
///
/// The payload is `nx·ny·nz·3` little-endian f32, x-fastest, components
/// interleaved.
pub fn save_raw(field: &VectorField, path: impl AsRef<Path>) -> Result<()> {
    let (meta_path, vec_path) = pair_paths(path.as_ref());
    let [nx, ny, nz] = field.dims;
    let b = &field.bounds;
    let meta = format!(
        "format flowquery-raw 1\n\
         dims {nx} {ny} {nz}\n\
         bounds_min {} {} {}\n\
         bounds_max {} {} {}\n\
         components 3\n\
         scalar f32le\n\
         order x-fastest interleaved\n",
        b.min[0], b.min[1], b.min[2], b.max[0], b.max[1], b.max[2]
    );
    let mut payload = Vec::with_capacity(field.data.len() * 12);
    for v in &field.data {
        for c in v {
            payload.extend_from_slice(&c.to_le_bytes());
        }
    }
    fs::write(meta_path, meta)?;
    fs::write(vec_path, payload)?;
    Ok(())
}

pub fn load_raw(path: impl AsRef<Path>) -> Result<VectorField> {
    let (meta_path, vec_path) = pair_paths(path.as_ref());
    let meta = fs::read_to_string(&meta_path)?;
    let mut dims = None;
    let mut min = None;
    let mut max = None;
    for line in meta.lines() {
        let mut parts = line.split_whitespace();
        let Some(key) = parts.next() else { continue };
        let rest: Vec<&str> = parts.collect();
        match key {
            "dims" => dims = Some(parse3::<usize>(&rest, "dims")?),
            "bounds_min" => min = Some(parse3::<f64>(&rest, "bounds_min")?),
            "bounds_max" => max = Some(parse3::<f64>(&rest, "bounds_max")?),
            "components" if rest != ["3"] => {
                return Err(FlowError::Format(format!("unsupported component count {rest:?}")))
            }
            "scalar" if rest != ["f32le"] => {
                return Err(FlowError::Format(format!("unsupported scalar type {rest:?}")))
            }
            _ => {}
        }
    }
    let missing = |k: &str| FlowError::Format(format!("{} missing `{k}`", meta_path.display()));
    let dims = dims.ok_or_else(|| missing("dims"))?;
    let bounds = Bounds {
        min: min.ok_or_else(|| missing("bounds_min"))?,
        max: max.ok_or_else(|| missing("bounds_max"))?,
    };
    let bounds = Bounds::new(bounds.min, bounds.max)
        .map_err(|e| FlowError::Format(e.to_string()))?;
    let payload = fs::read(&vec_path)?;
    let nodes = dims[0] * dims[1] * dims[2];
    if payload.len() != nodes * 12 {
        return Err(FlowError::Format(format!(
            "{} holds {} bytes but dims {:?} need {}",
            vec_path.display(),
            payload.len(),
            dims,
            nodes * 12
        )));
    }
    let data = payload
        .chunks_exact(12)
        .map(|c| {
            [0, 1, 2].map(|i| f32::from_le_bytes(c[4 * i..4 * i + 4].try_into().unwrap()))
        })
        .collect();
    VectorField::new(dims, bounds, data).map_err(|e| match e {
        FlowError::Io(e) => FlowError::Io(e),
        other => FlowError::Format(other.to_string()),
    })
}

fn parse3<T: FromStr>(parts: &[&str], key: &str) -> Result<[T; 3]> {
    if parts.len() != 3 {
        return Err(FlowError::Format(format!("`{key}` needs 3 values")));
    }
    let parse = |s: &str| {
        s.parse::<T>()
            .map_err(|_| FlowError::Format(format!("bad `{key}` value `{s}`")))
    };
    Ok([parse(parts[0])?, parse(parts[1])?, parse(parts[2])?])
}
