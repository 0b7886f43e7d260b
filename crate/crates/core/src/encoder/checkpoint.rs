use std::fs;
use std::path::Path;

use super::model::{DaeArch, DaeModel};
use crate::binio::Reader;
use crate::error::{FlowError, Result};

const MAGIC: &[u8; 4] = b"FQAE";
const VERSION: u32 = 1;

/// `FQAE`, u32 version, u32 input_dim, u32 latent_dim, u32 time_dim,
/// u32 hidden count, u32 per hidden layer, u64 parameter count, then the
/// parameters as little-endian f32 (encoder layers, time projection, decoder
/// layers; weights then bias per layer).
pub fn encode_checkpoint(model: &DaeModel) -> Vec<u8> {
    let arch = model.arch();
    let params = model.flat_params();
    let mut buf = Vec::with_capacity(40 + params.len() * 4);
    buf.extend_from_slice(MAGIC);
    for v in [VERSION, arch.input_dim as u32, arch.latent_dim as u32, arch.time_dim as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(arch.hidden.len() as u32).to_le_bytes());
    for h in &arch.hidden {
        buf.extend_from_slice(&(*h as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        buf.extend_from_slice(&(p as f32).to_le_bytes());
    }
    buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<DaeModel> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(FlowError::Format("not an encoder checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(FlowError::Format(format!("unsupported checkpoint version {version}")));
    }
    let input_dim = r.u32()? as usize;
    let latent_dim = r.u32()? as usize;
    let time_dim = r.u32()? as usize;
    let n_hidden = r.u32()? as usize;
    if n_hidden > 64 {
        return Err(FlowError::Format("implausible hidden layer count".into()));
    }
    let hidden = (0..n_hidden).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let arch = DaeArch { input_dim, hidden, latent_dim, time_dim };
    let mut model = DaeModel::new(arch, 0).map_err(|e| FlowError::Format(e.to_string()))?;
    let count = r.u64()? as usize;
    if count != model.param_count() {
        return Err(FlowError::Format(format!(
            "checkpoint holds {count} parameters, architecture needs {}",
            model.param_count()
        )));
    }
    let params: Vec<f64> = r.f32_vec(count)?.into_iter().map(f64::from).collect();
    r.finish()?;
    model.set_flat_params(&params)?;
    Ok(model)
}

pub fn save_checkpoint(model: &DaeModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DaeModel> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_rounds_to_f32() {
        let arch = DaeArch { input_dim: 16, hidden: vec![8, 6], latent_dim: 4, time_dim: 4 };
        let m = DaeModel::new(arch, 3).unwrap();
        let bytes = encode_checkpoint(&m);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.arch(), m.arch());
        for (a, b) in m.flat_params().iter().zip(back.flat_params()) {
            assert_eq!(b, *a as f32 as f64);
        }
        // a second round trip is lossless
        assert_eq!(encode_checkpoint(&back), bytes);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 2]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
    }
}
