use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};

/// PSNR reported when the RMSE is below this floor.
pub const PSNR_CAP_DB: f64 = 99.0;
const RMSE_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconMetrics {
    pub rmse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

fn check(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(FlowError::ShapeMismatch { expected: a.len(), actual: b.len() });
    }
    Ok(())
}

pub fn rmse(x: &[f64], y: &[f64]) -> Result<f64> {
    check(x, y)?;
    let mse = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64;
    Ok(mse.sqrt())
}

/// `20·log10(1 / rmse)`, capped at 99 dB. Matrices are normalized to [0, 1].
pub fn psnr(rmse: f64) -> f64 {
    if rmse < RMSE_FLOOR {
        PSNR_CAP_DB
    } else {
        20.0 * (1.0 / rmse).log10()
    }
}

/// Mean SSIM over an `n×n` image with an 11×11 Gaussian window (σ = 1.5),
/// `K1 = 0.01`, `K2 = 0.03` and dynamic range 1. Only windows that fit
/// entirely inside the image are averaged; images smaller than the window
/// use a window clipped to the image.
pub fn ssim(x: &[f64], y: &[f64], n: usize) -> Result<f64> {
    check(x, y)?;
    if x.len() != n * n {
        return Err(FlowError::ShapeMismatch { expected: n * n, actual: x.len() });
    }
    let win = 11.min(n);
    let sigma = 1.5;
    let half = (win as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..win).map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let gs: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / gs).collect();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let span = n - win + 1;
    let mut total = 0.0;
    for oi in 0..span {
        for oj in 0..span {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for a in 0..win {
                for b in 0..win {
                    let w = g[a] * g[b];
                    let idx = (oi + a) * n + oj + b;
                    let (u, v) = (x[idx], y[idx]);
                    mx += w * u;
                    my += w * v;
                    sxx += w * u * u;
                    syy += w * v * v;
                    sxy += w * u * v;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cxy = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (span * span) as f64)
}

pub fn metrics(x0: &[f64], recon: &[f64], n: usize) -> Result<ReconMetrics> {
    let r = rmse(x0, recon)?;
    Ok(ReconMetrics { rmse: r, psnr: psnr(r), ssim: ssim(x0, recon, n)? })
}

/// Per-sample metrics averaged over the batch.
pub fn batch_metrics(pairs: &[(Vec<f64>, Vec<f64>)], n: usize) -> Result<ReconMetrics> {
    let mut acc = ReconMetrics { rmse: 0.0, psnr: 0.0, ssim: 0.0 };
    for (x, y) in pairs {
        let m = metrics(x, y, n)?;
        acc.rmse += m.rmse;
        acc.psnr += m.psnr;
        acc.ssim += m.ssim;
    }
    let k = pairs.len().max(1) as f64;
    Ok(ReconMetrics { rmse: acc.rmse / k, psnr: acc.psnr / k, ssim: acc.ssim / k })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Vec<f64> {
        (0..1024).map(|k| ((k / 32) as f64 - (k % 32) as f64).abs() / 31.0).collect()
    }

    #[test]
    fn perfect_reconstruction() {
        let x = ramp();
        let m = metrics(&x, &x, 32).unwrap();
        assert_eq!(m.rmse, 0.0);
        assert_eq!(m.psnr, 99.0);
        assert!((m.ssim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_at_one_percent_error() {
        let x = ramp();
        let y: Vec<f64> = x.iter().map(|v| v + 0.01).collect();
        let m = metrics(&x, &y, 32).unwrap();
        assert!((m.rmse - 0.01).abs() < 1e-12);
        assert!((m.psnr - 40.0).abs() < 1e-9);
        assert!(m.ssim < 1.0 && m.ssim > 0.9);
    }

    #[test]
    fn shape_mismatch() {
        assert!(rmse(&[0.0; 3], &[0.0; 4]).is_err());
        assert!(ssim(&[0.0; 9], &[0.0; 9], 4).is_err());
    }

    #[test]
    fn ssim_drops_for_unrelated_images() {
        let x = ramp();
        let y: Vec<f64> = x.iter().map(|v| 1.0 - v).collect();
        assert!(ssim(&x, &y, 32).unwrap() < 0.5);
    }
}
