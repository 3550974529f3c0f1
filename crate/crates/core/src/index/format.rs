//! Little-endian index file.
//!
//! ```text
//! "GRLC" | version u32 | n u64 | d u32 | K u32 | r u32
//! hyperparameters (u32 length + `key = value` text)
//! dataset path (u32 length + UTF-8, empty when unknown) | dataset crc32 u32
//! K × Gaussian: mu[d] f64, log_diag[d] f64, lower[d(d−1)/2] f64
//! K × bucket:  gaussian id u32, degenerate u8, centroid[d] f64, eigenvalues[r] f64,
//!              basis[r·d] f64, axis count u32, axes (lo f64, hi f64, divisions u32),
//!              pool length u32, pool[] u32, bin count u32,
//!              bins (coords[axis count] u16, offset u32, length u32)
//! crc32 of everything above, u32
//! ```

use crate::error::{GarlicError, Result};
use crate::gaussian::{strict_lower_len, GaussianParams, GaussianSet};
use crate::params::HyperParams;

use super::{Axis, Bin, Bucket, Fingerprint, Grid, Index, Pca};

pub const MAGIC: [u8; 4] = *b"GRLC";
pub const FORMAT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn text(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

pub(super) fn encode(index: &Index) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    let d = index.dim();
    let r = index.buckets.first().map_or(0, |b| b.pca.rank());
    w.0.extend_from_slice(&MAGIC);
    w.u32(FORMAT_VERSION);
    w.u64(index.fingerprint.n as u64);
    w.u32(d as u32);
    w.u32(index.gaussians.len() as u32);
    w.u32(r as u32);
    w.text(&index.hp.to_config_text());
    w.text(index.dataset_path.as_deref().unwrap_or(""));
    w.u32(index.fingerprint.checksum);
    for (_, g, _) in index.gaussians.iter() {
        w.f64s(&g.mu);
        w.f64s(&g.log_diag);
        w.f64s(&g.lower);
    }
    for b in &index.buckets {
        w.u32(b.gaussian_id as u32);
        w.u8(b.pca.degenerate as u8);
        w.f64s(&b.pca.centroid);
        w.f64s(&b.pca.eigenvalues);
        w.f64s(&b.pca.basis);
        w.u32(b.grid.axes.len() as u32);
        for a in &b.grid.axes {
            w.f64s(&[a.lo, a.hi]);
            w.u32(a.divisions as u32);
        }
        w.u32(b.grid.pool.len() as u32);
        for &m in &b.grid.pool {
            w.u32(m);
        }
        w.u32(b.grid.bins.len() as u32);
        for bin in &b.grid.bins {
            for &c in &bin.coords {
                w.u16(c);
            }
            w.u32(bin.offset);
            w.u32(bin.len);
        }
    }
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    w.0
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(GarlicError::Format {
            offset: self.pos as u64,
            msg: msg.into(),
        })
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        match self.pos.checked_add(len) {
            Some(end) if end <= self.bytes.len() => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => self.fail(format!("truncated: need {len} more bytes")),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Element count that must fit in the remaining bytes at `elem_size` each.
    fn count(&mut self, elem_size: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        self.check_fits(n, elem_size)?;
        Ok(n)
    }

    fn check_fits(&self, n: usize, elem_size: usize) -> Result<()> {
        let remaining = self.bytes.len() - self.pos;
        if n.checked_mul(elem_size).is_none_or(|b| b > remaining) {
            return self.fail(format!("count {n} exceeds the remaining {remaining} bytes"));
        }
        Ok(())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        self.check_fits(n, 8)?;
        let raw = self.take(n * 8)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn text(&mut self) -> Result<String> {
        let n = self.count(1)?;
        let raw = self.take(n)?;
        match std::str::from_utf8(raw) {
            Ok(s) => Ok(s.to_string()),
            Err(_) => self.fail("text field is not UTF-8"),
        }
    }
}

fn parse_hp(text: &str) -> Result<HyperParams> {
    let mut hp = HyperParams::default();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| GarlicError::Format { offset: 0, msg: format!("bad hyperparameter line {line:?}") })?;
        hp.set(k.trim(), v).map_err(|e| GarlicError::Format { offset: 0, msg: e.to_string() })?;
    }
    Ok(hp)
}

pub(super) fn decode(bytes: &[u8]) -> Result<Index> {
    if bytes.len() < MAGIC.len() + 8 {
        return Err(GarlicError::Format { offset: 0, msg: "file too short".into() });
    }
    if bytes[..4] != MAGIC {
        return Err(GarlicError::Format { offset: 0, msg: "bad magic".into() });
    }
    let body_len = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
    if crc32fast::hash(&bytes[..body_len]) != stored {
        return Err(GarlicError::Format { offset: body_len as u64, msg: "checksum mismatch".into() });
    }
    let mut r = Reader { bytes: &bytes[..body_len], pos: 4 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return r.fail(format!("unsupported format version {version}"));
    }
    let n = r.u64()?;
    let d = r.u32()? as usize;
    let k = r.u32()? as usize;
    let rank = r.u32()? as usize;
    if d < 2 || n > u32::MAX as u64 || rank > d {
        return r.fail("invalid header dimensions");
    }
    let n = n as usize;
    let per_gaussian = 2 * d + strict_lower_len(d);
    r.check_fits(k, per_gaussian.saturating_mul(8))?;
    let hp = parse_hp(&r.text()?)?;
    let path = r.text()?;
    let checksum = r.u32()?;

    let mut gaussians = GaussianSet::new(d);
    for _ in 0..k {
        let g = GaussianParams {
            mu: r.f64s(d)?,
            log_diag: r.f64s(d)?,
            lower: r.f64s(strict_lower_len(d))?,
        };
        if !g.is_finite() {
            return r.fail("non-finite Gaussian parameter");
        }
        gaussians.push(g)?;
    }
    let mut buckets = Vec::with_capacity(k);
    for _ in 0..k {
        let gaussian_id = r.u32()? as usize;
        let degenerate = match r.u8()? {
            0 => false,
            1 => true,
            _ => return r.fail("bad degenerate flag"),
        };
        let centroid = r.f64s(d)?;
        let eigenvalues = r.f64s(rank)?;
        let basis = r.f64s(rank.saturating_mul(d))?;
        let n_axes = r.count(20)?;
        if !(n_axes == 0 || n_axes == rank) {
            return r.fail("axis count differs from the PCA rank");
        }
        let mut axes = Vec::with_capacity(n_axes);
        for _ in 0..n_axes {
            let lohi = r.f64s(2)?;
            let divisions = r.u32()? as usize;
            if divisions == 0 || divisions > u16::MAX as usize || !(lohi[0] <= lohi[1]) {
                return r.fail("invalid grid axis");
            }
            axes.push(Axis { lo: lohi[0], hi: lohi[1], divisions });
        }
        let pool_len = r.count(4)?;
        let mut pool = Vec::with_capacity(pool_len);
        for _ in 0..pool_len {
            let m = r.u32()?;
            if m as usize >= n {
                return r.fail("member id out of range");
            }
            pool.push(m);
        }
        let n_bins = r.count(8 + 2 * n_axes)?;
        let mut bins = Vec::with_capacity(n_bins);
        for _ in 0..n_bins {
            let mut coords = Vec::with_capacity(n_axes);
            for a in &axes {
                let c = r.u16()?;
                if c as usize >= a.divisions {
                    return r.fail("bin coordinate out of range");
                }
                coords.push(c);
            }
            let offset = r.u32()?;
            let len = r.u32()?;
            if offset as u64 + len as u64 > pool_len as u64 {
                return r.fail("bin exceeds the member pool");
            }
            bins.push(Bin { coords, offset, len });
        }
        let mut members = pool.clone();
        members.sort_unstable();
        buckets.push(Bucket {
            gaussian_id,
            members,
            pca: Pca { centroid, basis, eigenvalues, degenerate },
            grid: Grid { axes, bins, pool },
        });
    }
    if r.pos != body_len {
        return r.fail("trailing bytes before checksum");
    }
    // Every id must sit in some pool, which also bounds the coverage check below.
    if buckets.iter().map(|b| b.grid.pool.len()).sum::<usize>() < n {
        return r.fail("fewer bucket members than points");
    }
    let fingerprint = Fingerprint { n, dim: d, checksum };
    let path = if path.is_empty() { None } else { Some(path) };
    Index::from_parts(gaussians, buckets, fingerprint, path, hp).map_err(|e| match e {
        GarlicError::Format { .. } => e,
        other => GarlicError::Format { offset: body_len as u64, msg: other.to_string() },
    })
}
