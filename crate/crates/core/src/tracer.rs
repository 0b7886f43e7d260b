//! Fixed-step RK4 streamline integration.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bad_param, FlowError, Result};
use crate::field::{Bounds, VectorField};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    DomainExit,
    MaxSteps,
    Stagnation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
    Both,
}

impl FromStr for Direction {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            "both" => Ok(Direction::Both),
            _ => Err(bad_param(format!("unknown direction `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub step: f64,
    pub max_steps: usize,
    pub min_speed: f64,
    pub direction: Direction,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self { step: 0.01, max_steps: 2000, min_speed: 1e-6, direction: Direction::Forward }
    }
}

impl TraceConfig {
    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(bad_param(format!("step must be positive, got {}", self.step)));
        }
        if self.max_steps == 0 {
            return Err(bad_param("max_steps must be at least 1"));
        }
        if !(self.min_speed >= 0.0) {
            return Err(bad_param("min_speed must be non-negative"));
        }
        Ok(())
    }
}

/// An integral curve with its cumulative arc length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Streamline {
    pub seed_id: u64,
    pub points: Vec<Vec3>,
    pub cumulative_arc: Vec<f64>,
    pub termination: Termination,
}

impl Streamline {
    /// Builds the cumulative arc table from raw points.
    pub fn from_points(seed_id: u64, points: Vec<Vec3>, termination: Termination) -> Self {
        let mut cumulative_arc = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        for (i, p) in points.iter().enumerate() {
            if i > 0 {
                acc += (p - points[i - 1]).norm();
            }
            cumulative_arc.push(acc);
        }
        Self { seed_id, points, cumulative_arc, termination }
    }

    pub fn arc_length(&self) -> f64 {
        self.cumulative_arc.last().copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Integrates from `seed` through the raw (unnormalized) velocity.
///
/// Stops when the next point would leave the domain (the last in-domain
/// point is kept), after `max_steps` steps, or when the local speed drops
/// below `min_speed`.
pub fn trace(field: &VectorField, seed: Vec3, cfg: &TraceConfig) -> Result<Streamline> {
    trace_with_id(field, seed, cfg, 0)
}

pub fn trace_with_id(
    field: &VectorField,
    seed: Vec3,
    cfg: &TraceConfig,
    seed_id: u64,
) -> Result<Streamline> {
    cfg.validate()?;
    if !field.contains(&seed) {
        return Err(FlowError::OutOfDomain([seed.x, seed.y, seed.z]));
    }
    let (points, termination) = match cfg.direction {
        Direction::Forward => integrate(field, seed, cfg, 1.0),
        Direction::Backward => integrate(field, seed, cfg, -1.0),
        Direction::Both => {
            let (mut back, _) = integrate(field, seed, cfg, -1.0);
            let (fwd, term) = integrate(field, seed, cfg, 1.0);
            back.reverse();
            back.extend_from_slice(&fwd[1..]);
            (back, term)
        }
    };
    Ok(Streamline::from_points(seed_id, points, termination))
}

fn integrate(field: &VectorField, seed: Vec3, cfg: &TraceConfig, sign: f64) -> (Vec<Vec3>, Termination) {
    let h = cfg.step;
    let velocity = |p: &Vec3| field.interpolate(p).ok().map(|v| v * sign);
    let mut points = vec![seed];
    let mut p = seed;
    for _ in 0..cfg.max_steps {
        let Some(k1) = velocity(&p) else {
            return (points, Termination::DomainExit);
        };
        if k1.norm() < cfg.min_speed {
            return (points, Termination::Stagnation);
        }
        let stages = velocity(&(p + k1 * (0.5 * h))).and_then(|k2| {
            let k3 = velocity(&(p + k2 * (0.5 * h)))?;
            let k4 = velocity(&(p + k3 * h))?;
            Some((k2, k3, k4))
        });
        let Some((k2, k3, k4)) = stages else {
            return (points, Termination::DomainExit);
        };
        let next = p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if !field.contains(&next) {
            return (points, Termination::DomainExit);
        }
        points.push(next);
        p = next;
    }
    (points, Termination::MaxSteps)
}

/// `n` seeds drawn i.i.d. uniformly inside `bounds`.
pub fn seed_uniform(bounds: &Bounds, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    if n == 0 {
        return Err(bad_param("seed count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            Vec3::new(
                rng.random_range(bounds.min[0]..=bounds.max[0]),
                rng.random_range(bounds.min[1]..=bounds.max[1]),
                rng.random_range(bounds.min[2]..=bounds.max[2]),
            )
        })
        .collect())
}

/// Traces every seed; seed ids are assigned by position.
pub fn trace_all(field: &VectorField, seeds: &[Vec3], cfg: &TraceConfig) -> Result<Vec<Streamline>> {
    seeds
        .iter()
        .enumerate()
        .map(|(i, s)| trace_with_id(field, *s, cfg, i as u64))
        .collect()
}

/// Formats `v` with 9 significant digits, `%.9g` style.
pub fn fmt_sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".to_string() } else { v.to_string() };
    }
    let exp = v.abs().log10().floor() as i32;
    let sci = format!("{v:.8e}");
    // rounding can bump the exponent (9.999999999 -> 1.00000000e1)
    let exp = sci
        .rsplit_once('e')
        .and_then(|(_, e)| e.parse::<i32>().ok())
        .unwrap_or(exp);
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let (mant, e) = sci.split_once('e').unwrap();
        let mant = if mant.contains('.') {
            mant.trim_end_matches('0').trim_end_matches('.')
        } else {
            mant
        };
        format!("{mant}e{e}")
    }
}

/// One record per line: `id n x0 y0 z0 ... x{n-1} y{n-1} z{n-1}`.
pub fn export_streamlines(lines: &[Streamline]) -> String {
    let mut out = String::new();
    for s in lines {
        write!(out, "{} {}", s.seed_id, s.points.len()).unwrap();
        for p in &s.points {
            write!(out, " {} {} {}", fmt_sig9(p.x), fmt_sig9(p.y), fmt_sig9(p.z)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parses the line format written by [`export_streamlines`]. Termination is
/// not part of the format and comes back as `MaxSteps`.
pub fn import_streamlines(text: &str) -> Result<Vec<Streamline>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(lineno, line)| {
            let err = |m: &str| FlowError::Format(format!("streamline line {}: {m}", lineno + 1));
            let mut it = line.split_whitespace();
            let id: u64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| err("bad id"))?;
            let n: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| err("bad count"))?;
            let coords: Vec<f64> = it
                .map(|s| s.parse::<f64>().map_err(|_| err("bad coordinate")))
                .collect::<Result<_>>()?;
            if coords.len() != 3 * n || n == 0 {
                return Err(err("coordinate count does not match point count"));
            }
            let points = coords.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
            Ok(Streamline::from_points(id, points, Termination::MaxSteps))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{gen_synthetic, SyntheticKind};

    fn cfg(step: f64, max_steps: usize) -> TraceConfig {
        TraceConfig { step, max_steps, min_speed: 0.0, direction: Direction::Forward }
    }

    #[test]
    fn uniform_flow_travels_straight() {
        let f = gen_synthetic(SyntheticKind::Uniform, [5, 5, 5], Bounds::unit(), &Default::default(), 0)
            .unwrap();
        let s = trace(&f, Vec3::new(0.0, 0.5, 0.5), &cfg(0.1, 10)).unwrap();
        assert_eq!(s.len(), 11);
        let end = s.points.last().unwrap();
        assert!((end - Vec3::new(1.0, 0.5, 0.5)).norm() < 1e-12, "{end:?}");
        assert!((s.arc_length() - 1.0).abs() < 1e-12);
        assert_eq!(s.termination, Termination::MaxSteps);
    }

    #[test]
    fn rotor_orbit_keeps_its_radius() {
        let b = Bounds::new([-2.0, -2.0, -1.0], [2.0, 2.0, 1.0]).unwrap();
        let f = gen_synthetic(SyntheticKind::Rotor, [17, 17, 3], b, &Default::default(), 0).unwrap();
        let s = trace(&f, Vec3::new(1.0, 0.0, 0.0), &cfg(0.01, 629)).unwrap();
        assert_eq!(s.len(), 630);
        let worst = s
            .points
            .iter()
            .map(|p| (p.x.hypot(p.y) - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-5, "radius drift {worst}");
    }

    #[test]
    fn zero_field_stagnates_immediately() {
        let f = VectorField::from_fn([3, 3, 3], Bounds::unit(), |_| Vec3::zeros()).unwrap();
        let c = TraceConfig { min_speed: 1e-6, ..cfg(0.1, 100) };
        let s = trace(&f, Vec3::new(0.5, 0.5, 0.5), &c).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.termination, Termination::Stagnation);
    }

    #[test]
    fn domain_exit_keeps_last_inside_point() {
        let f = gen_synthetic(SyntheticKind::Uniform, [3, 3, 3], Bounds::unit(), &Default::default(), 0)
            .unwrap();
        let s = trace(&f, Vec3::new(0.05, 0.5, 0.5), &cfg(0.3, 100)).unwrap();
        assert_eq!(s.termination, Termination::DomainExit);
        assert!(s.points.iter().all(|p| f.contains(p)));
        assert!((s.points.last().unwrap().x - 0.95).abs() < 1e-12);
    }

    #[test]
    fn seed_outside_domain_fails() {
        let f = gen_synthetic(SyntheticKind::Uniform, [3, 3, 3], Bounds::unit(), &Default::default(), 0)
            .unwrap();
        assert!(matches!(
            trace(&f, Vec3::new(2.0, 0.5, 0.5), &cfg(0.1, 5)),
            Err(FlowError::OutOfDomain(_))
        ));
        assert!(trace(&f, Vec3::new(0.5, 0.5, 0.5), &cfg(0.0, 5)).is_err());
    }

    #[test]
    fn both_directions_share_the_seed_once() {
        let b = Bounds::new([-2.0; 3], [2.0; 3]).unwrap();
        let f = gen_synthetic(SyntheticKind::Helix, [9, 9, 9], b, &Default::default(), 0).unwrap();
        let seed = Vec3::new(1.0, 0.0, 0.0);
        let mk = |d| TraceConfig { direction: d, ..cfg(0.05, 20) };
        let fwd = trace(&f, seed, &mk(Direction::Forward)).unwrap();
        let back = trace(&f, seed, &mk(Direction::Backward)).unwrap();
        let both = trace(&f, seed, &mk(Direction::Both)).unwrap();
        assert_eq!(both.len(), fwd.len() + back.len() - 1);
        assert_eq!(both.points[back.len() - 1], seed);
        assert_eq!(both.points[0], *back.points.last().unwrap());
    }

    #[test]
    fn seeding_is_deterministic_and_validated() {
        assert!(seed_uniform(&Bounds::unit(), 0, 1).is_err());
        let a = seed_uniform(&Bounds::unit(), 50, 9).unwrap();
        assert_eq!(a, seed_uniform(&Bounds::unit(), 50, 9).unwrap());
        assert_ne!(a, seed_uniform(&Bounds::unit(), 50, 10).unwrap());
    }

    #[test]
    fn seeding_mean_is_centered() {
        let pts = seed_uniform(&Bounds::unit(), 10_000, 2).unwrap();
        let mean = pts.iter().fold(Vec3::zeros(), |a, p| a + p) / pts.len() as f64;
        for a in 0..3 {
            assert!((mean[a] - 0.5).abs() < 0.02, "axis {a}: {}", mean[a]);
        }
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(1.0), "1");
        assert_eq!(fmt_sig9(-0.5), "-0.5");
        assert_eq!(fmt_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_sig9(123456.789123), "123456.789");
        assert_eq!(fmt_sig9(9.9999999999), "10");
        assert_eq!(fmt_sig9(1.5e-7), "1.5e-7");
        assert_eq!(fmt_sig9(2.0e12), "2e12");
    }

    #[test]
    fn export_import_round_trip() {
        let b = Bounds::new([-2.0; 3], [2.0; 3]).unwrap();
        let f = gen_synthetic(SyntheticKind::Helix, [9, 9, 9], b, &Default::default(), 0).unwrap();
        let seeds = seed_uniform(&b, 4, 3).unwrap();
        let lines = trace_all(&f, &seeds, &cfg(0.05, 30)).unwrap();
        let text = export_streamlines(&lines);
        assert_eq!(text.lines().count(), 4);
        let back = import_streamlines(&text).unwrap();
        for (a, b) in lines.iter().zip(&back) {
            assert_eq!(a.seed_id, b.seed_id);
            for (p, q) in a.points.iter().zip(&b.points) {
                assert!((p - q).norm() <= 1e-8 * p.norm().max(1.0));
            }
        }
        assert!(import_streamlines("0 2 1 2 3").is_err());
    }
}
