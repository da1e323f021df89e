//! Labelled unit-norm embeddings and their on-disk format.
//!
//! File layout: an ASCII header block
//!
//! ```text
//! ecgid-embeddings v1
//! dim=<d>
//! count=<n>
//! labels=patient_id,exam_id,acquired_at
//! <key>=<value>          (caller metadata, any number of lines)
//! end-header
//! ```
//!
//! then `n` tab-separated label lines (an empty date field means unknown),
//! then `n * d` little-endian `f32` values, row-major.

use chrono::NaiveDate;
use std::io::{BufRead, Write};

const MAGIC: &str = "ecgid-embeddings v1";
const LABEL_SCHEMA: &str = "patient_id,exam_id,acquired_at";
const END: &str = "end-header";

/// Tolerance on `| ||z|| - 1 |` accepted by [`EmbeddingSet::check_unit_norm`].
pub const UNIT_NORM_TOL: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed embedding file: {0}")]
    Format(String),
    #[error("expected {expected} values for {rows} rows of dim {dim}, got {got}")]
    Shape { rows: usize, dim: usize, expected: usize, got: usize },
    #[error("embedding {index} has norm {norm}, expected 1")]
    NotUnitNorm { index: usize, norm: f64 },
    #[error("embedding {index} has a non-finite component")]
    NonFinite { index: usize },
    #[error("label field contains a tab or newline: {0:?}")]
    BadLabel(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EmbeddingLabel {
    pub patient_id: String,
    pub exam_id: String,
    pub acquired_at: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    labels: Vec<EmbeddingLabel>,
    data: Vec<f32>,
}

/// Inner product of two `f32` rows accumulated in `f64`.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

impl EmbeddingSet {
    pub fn new(dim: usize, labels: Vec<EmbeddingLabel>, data: Vec<f32>) -> Result<Self, EmbeddingError> {
        let expected = labels.len() * dim;
        if data.len() != expected || dim == 0 {
            return Err(EmbeddingError::Shape { rows: labels.len(), dim, expected, got: data.len() });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite { index: i / dim });
        }
        Ok(Self { dim, labels, data })
    }

    /// Normalise each `f64` row to unit length and store it as `f32`.
    pub fn from_rows_normalized(labels: Vec<EmbeddingLabel>, rows: &[Vec<f64>]) -> Result<Self, EmbeddingError> {
        let dim = rows.first().map_or(1, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n > 0.0 && n.is_finite()) || r.len() != dim {
                return Err(EmbeddingError::NonFinite { index: i });
            }
            data.extend(r.iter().map(|v| (v / n) as f32));
        }
        Self::new(dim, labels, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[EmbeddingLabel] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &EmbeddingLabel {
        &self.labels[i]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn cosine(&self, i: usize, j: usize) -> f64 {
        dot(self.row(i), self.row(j))
    }

    pub fn check_unit_norm(&self) -> Result<(), EmbeddingError> {
        for (index, r) in self.rows().enumerate() {
            let norm = dot(r, r).sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(EmbeddingError::NotUnitNorm { index, norm });
            }
        }
        Ok(())
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { dim: self.dim, labels: indices.iter().map(|&i| self.labels[i].clone()).collect(), data }
    }

    /// Apply `f` to every row; used to test rotation invariance.
    pub fn map_rows<F: Fn(&[f32]) -> Vec<f32>>(&self, f: F) -> Self {
        let data: Vec<f32> = self.rows().flat_map(&f).collect();
        Self { dim: data.len() / self.len().max(1), labels: self.labels.clone(), data }
    }

    pub fn write_to<W: Write>(&self, mut out: W, meta: &[(String, String)]) -> Result<(), EmbeddingError> {
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "dim={}", self.dim)?;
        writeln!(out, "count={}", self.len())?;
        writeln!(out, "labels={LABEL_SCHEMA}")?;
        for (k, v) in meta {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(EmbeddingError::BadLabel(format!("{k}={v}")));
            }
            writeln!(out, "{k}={v}")?;
        }
        writeln!(out, "{END}")?;
        for l in &self.labels {
            for field in [&l.patient_id, &l.exam_id] {
                if field.contains(['\t', '\n', '\r']) {
                    return Err(EmbeddingError::BadLabel(field.clone()));
                }
            }
            let date = l.acquired_at.map(|d| d.to_string()).unwrap_or_default();
            writeln!(out, "{}\t{}\t{}", l.patient_id, l.exam_id, date)?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    /// Returns the set and the caller metadata lines in file order.
    pub fn read_from<R: BufRead>(mut input: R) -> Result<(Self, Vec<(String, String)>), EmbeddingError> {
        let fmt = |m: &str| EmbeddingError::Format(m.to_string());
        let mut line = String::new();
        let mut next_line = |input: &mut R| -> Result<String, EmbeddingError> {
            line.clear();
            if input.read_line(&mut line)? == 0 {
                return Err(fmt("unexpected end of file"));
            }
            Ok(line.trim_end_matches(['\n', '\r']).to_string())
        };
        if next_line(&mut input)? != MAGIC {
            return Err(fmt("missing magic line"));
        }
        let mut dim = None;
        let mut count = None;
        let mut meta = Vec::new();
        loop {
            let l = next_line(&mut input)?;
            if l == END {
                break;
            }
            let (k, v) = l.split_once('=').ok_or_else(|| fmt(&format!("bad header line {l:?}")))?;
            match k {
                "dim" => dim = Some(v.parse::<usize>().map_err(|_| fmt("bad dim"))?),
                "count" => count = Some(v.parse::<usize>().map_err(|_| fmt("bad count"))?),
                "labels" if v == LABEL_SCHEMA => {}
                "labels" => return Err(fmt(&format!("unsupported label schema {v:?}"))),
                _ => meta.push((k.to_string(), v.to_string())),
            }
        }
        let (dim, count) = (dim.ok_or_else(|| fmt("missing dim"))?, count.ok_or_else(|| fmt("missing count"))?);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let l = next_line(&mut input)?;
            let parts: Vec<&str> = l.split('\t').collect();
            if parts.len() != 3 {
                return Err(fmt(&format!("bad label line {l:?}")));
            }
            let acquired_at = match parts[2] {
                "" => None,
                d => Some(d.parse::<NaiveDate>().map_err(|_| fmt(&format!("bad date {d:?}")))?),
            };
            labels.push(EmbeddingLabel { patient_id: parts[0].into(), exam_id: parts[1].into(), acquired_at });
        }
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() != count * dim * 4 {
            return Err(EmbeddingError::Shape { rows: count, dim, expected: count * dim, got: bytes.len() / 4 });
        }
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok((Self::new(dim, labels, data)?, meta))
    }
}
