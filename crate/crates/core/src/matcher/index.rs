use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::MatcherModel;
use super::text::TextEmbedder;
use super::{dot, norm};
use crate::binio::{put_u32, put_u64, Reader};
use crate::descriptor::{describe_all, Segment};
use crate::encoder::DaeModel;
use crate::error::{bad_param, FlowError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub segment_id: u64,
    /// Cosine similarity in the common space.
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// Immutable store of unit-length common-space segment embeddings, with the
/// text projection needed to answer queries on its own. Geometry is looked
/// up by segment id in the segment store the index was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchIndex {
    text_dim: usize,
    common_dim: usize,
    text_proj: Vec<f32>,
    ids: Vec<u64>,
    embeddings: Vec<f32>,
    fingerprint: [u8; 32],
}

/// SHA-256 over segment ids and geometry, identifying the segment store an
/// index was built from.
pub fn segments_fingerprint(segments: &[Segment]) -> [u8; 32] {
    let mut h = Sha256::new();
    for s in segments {
        h.update(s.id.to_le_bytes());
        h.update((s.points.len() as u64).to_le_bytes());
        for p in &s.points {
            for c in p.iter() {
                h.update(c.to_le_bytes());
            }
        }
    }
    h.finalize().into()
}

/// Encodes every segment (descriptor, latent, flow projection, normalize).
pub fn build_index(segments: &[Segment], encoder: &DaeModel, matcher: &MatcherModel) -> Result<MatchIndex> {
    let matrices = describe_all(segments)?;
    let latents = encoder.encode_all(&matrices)?;
    let rows: Vec<Vec<f64>> = latents.rows().into_iter().map(|r| r.to_vec()).collect();
    let ids: Vec<u64> = segments.iter().map(|s| s.id).collect();
    build_index_from_latents(&ids, &rows, matcher, segments_fingerprint(segments))
}

pub fn build_index_from_latents(
    ids: &[u64],
    latents: &[Vec<f64>],
    matcher: &MatcherModel,
    fingerprint: [u8; 32],
) -> Result<MatchIndex> {
    if ids.len() != latents.len() {
        return Err(FlowError::ShapeMismatch { expected: ids.len(), actual: latents.len() });
    }
    let mut seen = HashSet::with_capacity(ids.len());
    if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
        return Err(bad_param(format!("duplicate segment id {dup}")));
    }
    let c = matcher.common_dim();
    let mut embeddings = Vec::with_capacity(ids.len() * c);
    for z in latents {
        let f = matcher.project_flow(z)?;
        let n = norm(&f);
        if !(n > 0.0) {
            return Err(FlowError::DegenerateSegment);
        }
        embeddings.extend(f.iter().map(|v| (v / n) as f32));
    }
    Ok(MatchIndex {
        text_dim: matcher.text_dim(),
        common_dim: c,
        text_proj: matcher.text_proj.w.iter().map(|&v| v as f32).collect(),
        ids: ids.to_vec(),
        embeddings,
        fingerprint,
    })
}

impl MatchIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn text_dim(&self) -> usize {
        self.text_dim
    }

    pub fn common_dim(&self) -> usize {
        self.common_dim
    }

    pub fn embedding(&self, row: usize) -> &[f32] {
        &self.embeddings[row * self.common_dim..(row + 1) * self.common_dim]
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        self.fingerprint
    }

    pub fn fingerprint_hex(&self) -> String {
        self.fingerprint.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Common-space query vector for a text embedding (not normalized).
    pub fn project_text(&self, text_emb: &[f64]) -> Result<Vec<f64>> {
        if text_emb.len() != self.text_dim {
            return Err(FlowError::ShapeMismatch { expected: self.text_dim, actual: text_emb.len() });
        }
        Ok(self
            .text_proj
            .chunks_exact(self.text_dim)
            .map(|row| row.iter().zip(text_emb).map(|(w, x)| *w as f64 * x).sum())
            .collect())
    }

    /// Cosine of `q` against every entry, in index order.
    pub fn scores(&self, q: &[f64]) -> Result<Vec<f64>> {
        if q.len() != self.common_dim {
            return Err(FlowError::ShapeMismatch { expected: self.common_dim, actual: q.len() });
        }
        let qn = norm(q);
        if !(qn > 0.0) {
            return Err(FlowError::EmptyQuery);
        }
        Ok(self
            .embeddings
            .chunks_exact(self.common_dim)
            .map(|e| {
                let e: Vec<f64> = e.iter().map(|&v| v as f64).collect();
                (dot(q, &e) / (qn * norm(&e))).clamp(-1.0, 1.0)
            })
            .collect())
    }

    /// Exact top-k by cosine; ties go to the smaller segment id.
    pub fn query_vector(&self, q: &[f64], k: usize) -> Result<Vec<MatchResult>> {
        if self.is_empty() {
            return Err(FlowError::EmptyIndex);
        }
        if k == 0 {
            return Err(bad_param("k must be at least 1"));
        }
        let scores = self.scores(q)?;
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(self.ids[a].cmp(&self.ids[b])));
        Ok(order
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(r, i)| MatchResult { segment_id: self.ids[i], score: scores[i], rank: r + 1 })
            .collect())
    }

    pub fn query(&self, embedder: &dyn TextEmbedder, text: &str, k: usize) -> Result<Vec<MatchResult>> {
        if self.is_empty() {
            return Err(FlowError::EmptyIndex);
        }
        if text.trim().is_empty() {
            return Err(FlowError::EmptyQuery);
        }
        if embedder.dim() != self.text_dim {
            return Err(FlowError::ShapeMismatch { expected: self.text_dim, actual: embedder.dim() });
        }
        let e = embedder.embed(text)?;
        self.query_vector(&self.project_text(&e.vector)?, k)
    }
}

const MAGIC: &[u8; 4] = b"FQIX";
const VERSION: u32 = 1;

/// `FQIX`, u32 version, u32 text_dim, u32 common_dim, u64 entry count,
/// 32-byte fingerprint, text projection (`common_dim × text_dim` f32),
/// u64 ids, then the `count × common_dim` f32 embedding blob. Little endian.
pub fn encode_index(index: &MatchIndex) -> Vec<u8> {
    let mut buf = Vec::with_capacity(56 + 4 * index.text_proj.len() + 8 * index.len() + 4 * index.embeddings.len());
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_u32(&mut buf, index.text_dim as u32);
    put_u32(&mut buf, index.common_dim as u32);
    put_u64(&mut buf, index.len() as u64);
    buf.extend_from_slice(&index.fingerprint);
    for v in &index.text_proj {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &id in &index.ids {
        put_u64(&mut buf, id);
    }
    for v in &index.embeddings {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_index(bytes: &[u8]) -> Result<MatchIndex> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(FlowError::Format("not a match index".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(FlowError::Format(format!("unsupported index version {version}")));
    }
    let text_dim = r.u32()? as usize;
    let common_dim = r.u32()? as usize;
    let n = r.u64()? as usize;
    if text_dim == 0 || common_dim == 0 {
        return Err(FlowError::Format("zero index dimension".into()));
    }
    let fingerprint: [u8; 32] = r.take(32)?.try_into().unwrap();
    let text_proj = r.f32_vec(text_dim * common_dim)?;
    let ids = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let embeddings = r.f32_vec(n.checked_mul(common_dim).ok_or_else(|| FlowError::Format("overflow".into()))?)?;
    r.finish()?;
    let mut seen = HashSet::with_capacity(n);
    if ids.iter().any(|id| !seen.insert(*id)) {
        return Err(FlowError::Format("duplicate ids in index".into()));
    }
    Ok(MatchIndex { text_dim, common_dim, text_proj, ids, embeddings, fingerprint })
}

pub fn save_index(index: &MatchIndex, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_index(index))?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>) -> Result<MatchIndex> {
    decode_index(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::HashedEmbedder;

    fn toy_index(n: usize) -> (MatchIndex, MatcherModel) {
        let m = MatcherModel::new(256, 6, 8, 0.07, 1).unwrap();
        let lat: Vec<Vec<f64>> = (0..n).map(|i| (0..6).map(|k| ((i * 7 + k * 3) % 11) as f64 - 5.0).collect()).collect();
        let ids: Vec<u64> = (0..n as u64).map(|i| 100 + 3 * i).collect();
        (build_index_from_latents(&ids, &lat, &m, [7; 32]).unwrap(), m)
    }

    #[test]
    fn full_k_returns_everything_sorted() {
        let (ix, _) = toy_index(20);
        let r = ix.query(&HashedEmbedder::default(), "swirl", 50).unwrap();
        assert_eq!(r.len(), 20);
        assert!(r.windows(2).all(|w| w[0].score >= w[1].score));
        assert!(r.iter().enumerate().all(|(i, m)| m.rank == i + 1));
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let m = MatcherModel::new(256, 2, 4, 0.07, 1).unwrap();
        let lat = vec![vec![1.0, 2.0]; 3];
        let ix = build_index_from_latents(&[9, 2, 5], &lat, &m, [0; 32]).unwrap();
        let r = ix.query(&HashedEmbedder::default(), "vortex", 3).unwrap();
        assert_eq!(r.iter().map(|m| m.segment_id).collect::<Vec<_>>(), vec![2, 5, 9]);
    }

    #[test]
    fn errors_are_typed() {
        let m = MatcherModel::new(256, 2, 4, 0.07, 1).unwrap();
        let empty = build_index_from_latents(&[], &[], &m, [0; 32]).unwrap();
        let e = HashedEmbedder::default();
        assert!(matches!(empty.query(&e, "x", 1), Err(FlowError::EmptyIndex)));
        let (ix, _) = toy_index(3);
        assert!(matches!(ix.query(&e, "  ", 1), Err(FlowError::EmptyQuery)));
        assert!(ix.query(&e, "x", 0).is_err());
        assert!(build_index_from_latents(&[1, 1], &[vec![1.0, 0.0], vec![0.0, 1.0]], &m, [0; 32]).is_err());
    }

    #[test]
    fn file_round_trip_is_exact() {
        let (ix, _) = toy_index(12);
        let bytes = encode_index(&ix);
        let back = decode_index(&bytes).unwrap();
        assert_eq!(back, ix);
        let e = HashedEmbedder::default();
        assert_eq!(back.query(&e, "helix", 5).unwrap(), ix.query(&e, "helix", 5).unwrap());
        assert!(decode_index(&bytes[..bytes.len() - 1]).is_err());
    }
}
