use super::{dot, norm};
use crate::error::{bad_param, FlowError, Result};

/// `softmax(q·k_i / √d)` over the keys, `d = q.len()`.
pub fn attention_weights(q: &[f64], keys: &[Vec<f64>]) -> Result<Vec<f64>> {
    if keys.is_empty() {
        return Err(bad_param("attention needs at least one key"));
    }
    if let Some(k) = keys.iter().find(|k| k.len() != q.len()) {
        return Err(FlowError::ShapeMismatch { expected: q.len(), actual: k.len() });
    }
    let scale = 1.0 / (q.len() as f64).sqrt();
    let logits: Vec<f64> = keys.iter().map(|k| dot(q, k) * scale).collect();
    Ok(softmax(&logits))
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Attention-weighted convex combination of `values`.
pub fn cross_attention(q: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>]) -> Result<Vec<f64>> {
    if keys.len() != values.len() {
        return Err(bad_param(format!("{} keys but {} values", keys.len(), values.len())));
    }
    let w = attention_weights(q, keys)?;
    let d = values[0].len();
    if let Some(v) = values.iter().find(|v| v.len() != d) {
        return Err(FlowError::ShapeMismatch { expected: d, actual: v.len() });
    }
    if keys.len() == 1 {
        return Ok(values[0].clone());
    }
    let mut out = vec![0.0; d];
    for (wi, v) in w.iter().zip(values) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += wi * x;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceGrad {
    pub loss: f64,
    pub d_text: Vec<Vec<f64>>,
    pub d_flow: Vec<Vec<f64>>,
}

/// Symmetric InfoNCE over cosine similarities: the mean of the text→flow and
/// flow→text cross-entropies with the diagonal as targets.
pub fn infonce_loss(text: &[Vec<f64>], flow: &[Vec<f64>], tau: f64) -> Result<f64> {
    Ok(infonce_with_grad(text, flow, tau)?.loss)
}

pub fn infonce_with_grad(text: &[Vec<f64>], flow: &[Vec<f64>], tau: f64) -> Result<InfoNceGrad> {
    let b = text.len();
    if b != flow.len() {
        return Err(bad_param(format!("batch mismatch: {b} texts, {} flows", flow.len())));
    }
    if b < 2 {
        return Err(bad_param("contrastive batch needs at least two pairs"));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(bad_param(format!("temperature must be positive, got {tau}")));
    }
    let d = text[0].len();
    if let Some(v) = text.iter().chain(flow).find(|v| v.len() != d) {
        return Err(FlowError::ShapeMismatch { expected: d, actual: v.len() });
    }
    let unit = |vs: &[Vec<f64>]| -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let norms: Vec<f64> = vs.iter().map(|v| norm(v)).collect();
        if norms.iter().any(|&n| !(n > 0.0)) {
            return Err(bad_param("contrastive inputs must be non-zero"));
        }
        let u = vs.iter().zip(&norms).map(|(v, n)| v.iter().map(|x| x / n).collect()).collect();
        Ok((u, norms))
    };
    let (tu, tn) = unit(text)?;
    let (fu, fnorm) = unit(flow)?;
    let logits: Vec<Vec<f64>> = tu.iter().map(|t| fu.iter().map(|f| dot(t, f) / tau).collect()).collect();

    let mut loss = 0.0;
    // dL/dlogit, accumulated from both directions
    let mut g = vec![vec![0.0; b]; b];
    let half_mean = 0.5 / b as f64;
    for i in 0..b {
        let p = softmax(&logits[i]);
        loss -= p[i].ln();
        for j in 0..b {
            g[i][j] += half_mean * (p[j] - if i == j { 1.0 } else { 0.0 });
        }
    }
    for j in 0..b {
        let col: Vec<f64> = (0..b).map(|i| logits[i][j]).collect();
        let p = softmax(&col);
        loss -= p[j].ln();
        for i in 0..b {
            g[i][j] += half_mean * (p[i] - if i == j { 1.0 } else { 0.0 });
        }
    }
    loss *= half_mean;

    let mut d_text = vec![vec![0.0; d]; b];
    let mut d_flow = vec![vec![0.0; d]; b];
    for i in 0..b {
        for j in 0..b {
            let s = g[i][j] / tau;
            for k in 0..d {
                d_text[i][k] += s * fu[j][k];
                d_flow[j][k] += s * tu[i][k];
            }
        }
    }
    // back through the normalization: (I - ûûᵀ) / |v|
    let project = |dv: &mut Vec<f64>, u: &[f64], n: f64| {
        let r = dot(dv, u);
        for (x, ui) in dv.iter_mut().zip(u) {
            *x = (*x - r * ui) / n;
        }
    };
    for i in 0..b {
        project(&mut d_text[i], &tu[i], tn[i]);
        project(&mut d_flow[i], &fu[i], fnorm[i]);
    }
    Ok(InfoNceGrad { loss, d_text, d_flow })
}
