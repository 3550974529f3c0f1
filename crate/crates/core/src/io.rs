//! Vector files, label files and synthetic labeled data.
//!
//! `.fvecs` / `.ivecs` hold repeated records `[d: i32 LE][d × f32 or i32 LE]`.
//! Label files are plain text with one non-negative integer per line.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{GarlicError, Result};
use crate::vectors::VectorSet;

fn format_err<T>(offset: usize, msg: impl Into<String>) -> Result<T> {
    Err(GarlicError::Format {
        offset: offset as u64,
        msg: msg.into(),
    })
}

/// Decodes `[d][payload]` records; returns `(d, flat payload words)`.
fn parse_records(bytes: &[u8]) -> Result<(usize, Vec<[u8; 4]>)> {
    if bytes.is_empty() {
        return format_err(0, "empty file");
    }
    let mut pos = 0;
    let mut dim: Option<usize> = None;
    let mut words = Vec::new();
    while pos < bytes.len() {
        if bytes.len() - pos < 4 {
            return format_err(pos, "truncated record header");
        }
        let d = i32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
        if d <= 0 {
            return format_err(pos, format!("record dimension {d} must be positive"));
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(prev) if prev != d => {
                return format_err(pos, format!("record dimension {d} differs from {prev}"));
            }
            _ => {}
        }
        pos += 4;
        let need = d * 4;
        if bytes.len() - pos < need {
            return format_err(pos, format!("truncated record: need {need} bytes"));
        }
        words.extend(bytes[pos..pos + need].chunks_exact(4).map(|c| <[u8; 4]>::try_from(c).unwrap()));
        pos += need;
    }
    Ok((dim.unwrap(), words))
}

pub fn parse_fvecs(bytes: &[u8]) -> Result<VectorSet> {
    let (d, words) = parse_records(bytes)?;
    let data: Vec<f32> = words.into_iter().map(f32::from_le_bytes).collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return format_err((i / d) * (4 + 4 * d) + 4 + 4 * (i % d), "non-finite value");
    }
    VectorSet::new(d, data)
}

pub fn load_fvecs(path: &Path) -> Result<VectorSet> {
    parse_fvecs(&fs::read(path)?)
}

pub fn encode_fvecs(v: &VectorSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(v.len() * (4 + 4 * v.dim()));
    for row in v.rows() {
        out.extend_from_slice(&(v.dim() as i32).to_le_bytes());
        for x in row {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn write_fvecs(path: &Path, v: &VectorSet) -> Result<()> {
    fs::write(path, encode_fvecs(v))?;
    Ok(())
}

/// Integer rows sharing one width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntMatrix {
    pub dim: usize,
    pub data: Vec<i32>,
}

impl IntMatrix {
    pub fn from_rows(rows: &[Vec<i32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(GarlicError::InvalidInput("rows must be non-empty and equally long".into()));
        }
        Ok(Self {
            dim,
            data: rows.concat(),
        })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[i32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn parse_ivecs(bytes: &[u8]) -> Result<IntMatrix> {
    let (dim, words) = parse_records(bytes)?;
    Ok(IntMatrix {
        dim,
        data: words.into_iter().map(i32::from_le_bytes).collect(),
    })
}

pub fn load_ivecs(path: &Path) -> Result<IntMatrix> {
    parse_ivecs(&fs::read(path)?)
}

pub fn encode_ivecs(m: &IntMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(m.len() * (4 + 4 * m.dim));
    for i in 0..m.len() {
        out.extend_from_slice(&(m.dim as i32).to_le_bytes());
        for x in m.row(i) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn write_ivecs(path: &Path, m: &IntMatrix) -> Result<()> {
    fs::write(path, encode_ivecs(m))?;
    Ok(())
}

pub fn parse_labels(text: &str) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let t = line.trim();
        if !t.is_empty() {
            match t.parse::<u32>() {
                Ok(v) => out.push(v),
                Err(_) => return format_err(offset, format!("bad label {t:?}")),
            }
        }
        offset += line.len();
    }
    Ok(out)
}

pub fn load_labels(path: &Path) -> Result<Vec<u32>> {
    let bytes = fs::read(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| GarlicError::Format {
        offset: e.valid_up_to() as u64,
        msg: "label file is not UTF-8".into(),
    })?;
    parse_labels(text)
}

pub fn write_labels(path: &Path, labels: &[u32]) -> Result<()> {
    let mut s = String::with_capacity(labels.len() * 3);
    for l in labels {
        s.push_str(&l.to_string());
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Vectors with an optional integer label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub vectors: VectorSet,
    pub labels: Option<Vec<u32>>,
}

impl LabeledDataset {
    pub fn new(vectors: VectorSet, labels: Option<Vec<u32>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != vectors.len() {
                return Err(GarlicError::InvalidInput(format!(
                    "{} labels for {} vectors",
                    l.len(),
                    vectors.len()
                )));
            }
        }
        Ok(Self { vectors, labels })
    }
}

/// Parameters of a synthetic Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub dim: usize,
    pub means: Vec<Vec<f64>>,
    /// Per component, a `d × d` row-major mixing matrix `A` with covariance `A Aᵀ`.
    pub mixing: Vec<Vec<f64>>,
}

impl Mixture {
    /// Means uniform in `[−1, 1]^d`; `A = spread · G / √d` with standard normal `G`.
    pub fn random(dim: usize, components: usize, spread: f64, seed: u64) -> Result<Self> {
        if dim < 2 || components == 0 {
            return Err(GarlicError::InvalidParameter("need d >= 2 and at least one component".into()));
        }
        if !(spread >= 0.0 && spread.is_finite()) {
            return Err(GarlicError::InvalidParameter("spread must be finite and >= 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = spread / (dim as f64).sqrt();
        let mut means = Vec::with_capacity(components);
        let mut mixing = Vec::with_capacity(components);
        for _ in 0..components {
            means.push((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect());
            mixing.push(
                (0..dim * dim)
                    .map(|_| {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        scale * g
                    })
                    .collect(),
            );
        }
        Ok(Self { dim, means, mixing })
    }

    /// Draws `n` points with uniformly chosen components.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<LabeledDataset> {
        let d = self.dim;
        let mut data = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        let mut z = vec![0.0f64; d];
        for _ in 0..n {
            let c = rng.random_range(0..self.means.len());
            for v in z.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
            let a = &self.mixing[c];
            for j in 0..d {
                let row = &a[j * d..(j + 1) * d];
                let x = self.means[c][j] + row.iter().zip(&z).map(|(p, q)| p * q).sum::<f64>();
                data.push(x as f32);
            }
            labels.push(c as u32);
        }
        LabeledDataset::new(VectorSet::new(d, data)?, Some(labels))
    }
}

/// `n` labeled points from a random mixture; deterministic in `seed`.
pub fn synth_mixture(n: usize, dim: usize, components: usize, spread: f64, seed: u64) -> Result<LabeledDataset> {
    let mixture = Mixture::random(dim, components, spread, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_da7a);
    mixture.sample(n, &mut rng)
}

/// Replaces the labels of `⌊fraction · n⌋` randomly chosen points with a different label
/// drawn uniformly from `0..classes`. Returns the flipped ids, ascending.
pub fn apply_label_noise<R: Rng + ?Sized>(labels: &mut [u32], fraction: f64, classes: u32, rng: &mut R) -> Vec<usize> {
    if classes < 2 || !(fraction > 0.0) {
        return Vec::new();
    }
    let count = ((fraction.min(1.0) * labels.len() as f64).floor() as usize).min(labels.len());
    let mut ids = sample(rng, labels.len(), count).into_vec();
    ids.sort_unstable();
    for &i in &ids {
        let shift = rng.random_range(1..classes);
        labels[i] = (labels[i] + shift) % classes;
    }
    ids
}
