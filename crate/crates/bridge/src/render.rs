//! Orthographic multi-view line renders of segments as grayscale PNGs.

use std::f64::consts::PI;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use flowquery_core::descriptor::Segment;
use flowquery_core::Vec3;
use image::{GrayImage, ImageFormat, Luma};

use crate::error::{BridgeError, Result};

/// Blank border around the fitted drawing, as a fraction of the image size.
const MARGIN: f64 = 0.08;

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub azimuth_deg: f64,
    pub image: GrayImage,
}

impl View {
    pub fn png_bytes(&self) -> Result<Vec<u8>> {
        encode_png(&self.image)
    }
}

pub fn encode_png(img: &GrayImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|e| BridgeError::Image(e.to_string()))?;
    Ok(buf.into_inner())
}

/// Screen coordinates for a camera at azimuth `theta` around the z axis:
/// horizontal is `(-sin θ, cos θ, 0)`, vertical is `z`.
fn project(p: &Vec3, theta: f64) -> (f64, f64) {
    (-theta.sin() * p.x + theta.cos() * p.y, p.z)
}

/// Renders `n_views` projections at azimuths `360° · k / n_views`. The
/// drawing is centered on its bounding box and scaled uniformly to fit, so
/// translating the input leaves the images unchanged.
pub fn render_points(points: &[Vec3], n_views: usize, size: u32) -> Result<Vec<View>> {
    if points.len() < 2 {
        return Err(BridgeError::BadInput("rendering needs at least two points".into()));
    }
    if n_views == 0 || size < 8 {
        return Err(BridgeError::BadInput(format!("need n_views >= 1 and size >= 8, got {n_views} and {size}")));
    }
    Ok((0..n_views)
        .map(|k| {
            let theta = 2.0 * PI * k as f64 / n_views as f64;
            View { azimuth_deg: 360.0 * k as f64 / n_views as f64, image: draw(points, theta, size) }
        })
        .collect())
}

pub fn render_views(seg: &Segment, n_views: usize, size: u32) -> Result<Vec<View>> {
    render_points(&seg.points, n_views, size)
}

fn draw(points: &[Vec3], theta: f64, size: u32) -> GrayImage {
    let proj: Vec<(f64, f64)> = points.iter().map(|p| project(p, theta)).collect();
    let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
    for &(x, y) in &proj {
        lo = (lo.0.min(x), lo.1.min(y));
        hi = (hi.0.max(x), hi.1.max(y));
    }
    let center = ((lo.0 + hi.0) / 2.0, (lo.1 + hi.1) / 2.0);
    let extent = (hi.0 - lo.0).max(hi.1 - lo.1);
    let s = size as f64;
    let scale = if extent > 0.0 { s * (1.0 - 2.0 * MARGIN) / extent } else { 0.0 };
    let half = (s - 1.0) / 2.0;
    let to_px = |(x, y): (f64, f64)| (half + scale * (x - center.0), half - scale * (y - center.1));

    let mut canvas = Canvas { w: size as usize, h: size as usize, ink: vec![0.0; (size * size) as usize] };
    for pair in proj.windows(2) {
        canvas.line(to_px(pair[0]), to_px(pair[1]));
    }
    GrayImage::from_fn(size, size, |x, y| {
        let c = canvas.ink[y as usize * canvas.w + x as usize].clamp(0.0, 1.0);
        Luma([(255.0 * (1.0 - c)).round() as u8])
    })
}

struct Canvas {
    w: usize,
    h: usize,
    ink: Vec<f64>,
}

impl Canvas {
    fn plot(&mut self, x: i64, y: i64, c: f64) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            let cell = &mut self.ink[y as usize * self.w + x as usize];
            *cell = cell.max(c);
        }
    }

    /// Xiaolin Wu's anti-aliased line.
    fn line(&mut self, a: (f64, f64), b: (f64, f64)) {
        let (mut x0, mut y0, mut x1, mut y1) = (a.0, a.1, b.0, b.1);
        let steep = (y1 - y0).abs() > (x1 - x0).abs();
        if steep {
            std::mem::swap(&mut x0, &mut y0);
            std::mem::swap(&mut x1, &mut y1);
        }
        if x0 > x1 {
            std::mem::swap(&mut x0, &mut x1);
            std::mem::swap(&mut y0, &mut y1);
        }
        let dx = x1 - x0;
        let grad = if dx == 0.0 { 1.0 } else { (y1 - y0) / dx };
        let mut put = |x: i64, y: i64, c: f64| if steep { self.plot(y, x, c) } else { self.plot(x, y, c) };
        let fpart = |v: f64| v - v.floor();

        let xend = x0.round();
        let yend = y0 + grad * (xend - x0);
        let xgap = 1.0 - fpart(x0 + 0.5);
        let xpx1 = xend as i64;
        put(xpx1, yend.floor() as i64, (1.0 - fpart(yend)) * xgap);
        put(xpx1, yend.floor() as i64 + 1, fpart(yend) * xgap);
        let mut intery = yend + grad;

        let xend = x1.round();
        let yend = y1 + grad * (xend - x1);
        let xgap = fpart(x1 + 0.5);
        let xpx2 = xend as i64;
        put(xpx2, yend.floor() as i64, (1.0 - fpart(yend)) * xgap);
        put(xpx2, yend.floor() as i64 + 1, fpart(yend) * xgap);

        for x in xpx1 + 1..xpx2 {
            put(x, intery.floor() as i64, 1.0 - fpart(intery));
            put(x, intery.floor() as i64 + 1, fpart(intery));
            intery += grad;
        }
    }
}

/// Writes `{stem}_v{k}.png` for each view into `dir`.
pub fn save_views(views: &[View], dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    views
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let path = dir.join(format!("{stem}_v{k}.png"));
            std::fs::write(&path, v.png_bytes()?)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn segment(points: Vec<Vec3>) -> Segment {
        Segment { id: 0, streamline_id: 0, level: 0, arc_start: 0.0, arc_end: 1.0, points }
    }

    fn straight(a: Vec3, b: Vec3, n: usize) -> Vec<Vec3> {
        (0..n).map(|i| a + (b - a) * (i as f64 / (n - 1) as f64)).collect()
    }

    /// Darkness-weighted centroid of each column, then a least-squares line
    /// through those centroids; returns the largest residual in pixels.
    fn column_fit_residual(img: &GrayImage) -> f64 {
        let mut pts = Vec::new();
        for x in 0..img.width() {
            let (mut w, mut wy) = (0.0, 0.0);
            for y in 0..img.height() {
                let d = 255.0 - img.get_pixel(x, y)[0] as f64;
                w += d;
                wy += d * y as f64;
            }
            if w > 0.0 {
                pts.push((x as f64, wy / w));
            }
        }
        assert!(pts.len() > 20, "too few lit columns: {}", pts.len());
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        pts.iter().map(|p| (p.1 - (my + slope * (p.0 - mx))).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn straight_segment_draws_a_straight_line() {
        let seg = segment(straight(Vec3::new(0.0, -1.0, -0.3), Vec3::new(0.0, 1.0, 0.4), 32));
        let views = render_views(&seg, 1, 128).unwrap();
        let img = &views[0].image;
        let r = column_fit_residual(img);
        assert!(r < 1.0, "residual {r}");
        // anti-aliasing leaves partially covered pixels
        assert!(img.pixels().any(|p| p[0] > 0 && p[0] < 255));
        assert!(img.pixels().filter(|p| p[0] == 255).count() > 128 * 128 * 9 / 10);
    }

    #[test]
    fn three_views_at_even_azimuths() {
        let seg = segment(straight(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.5, 0.2), 10));
        let views = render_views(&seg, 3, 64).unwrap();
        let az: Vec<f64> = views.iter().map(|v| v.azimuth_deg).collect();
        assert_eq!(az, vec![0.0, 120.0, 240.0]);
    }

    #[test]
    fn rendering_is_byte_deterministic() {
        let pts: Vec<Vec3> = (0..40).map(|i| {
            let t = i as f64 * 0.2;
            Vec3::new(t.cos(), t.sin(), 0.1 * t)
        }).collect();
        let a = render_points(&pts, 2, 96).unwrap();
        let b = render_points(&pts, 2, 96).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.png_bytes().unwrap(), y.png_bytes().unwrap());
        }
    }

    #[test]
    fn degenerate_inputs() {
        assert!(render_points(&[Vec3::zeros()], 1, 64).is_err());
        assert!(render_points(&[Vec3::zeros(), Vec3::x()], 0, 64).is_err());
        // a segment seen end-on collapses to a dot in the center
        let v = render_points(&[Vec3::zeros(), Vec3::x()], 1, 16).unwrap();
        assert!(v[0].image.pixels().any(|p| p[0] < 255));
    }
}
