//! Uniform bins over the hyperspherical coordinates of a bucket's projected points.

use std::collections::BTreeMap;

/// Edges of one coordinate's uniform partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub divisions: usize,
}

impl Axis {
    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.divisions as f64
    }

    /// `floor((v − lo) / width)`, with the top edge clamped into the last bin.
    pub fn bin_of(&self, v: f64) -> usize {
        let w = self.width();
        if !(w > 0.0) {
            return 0;
        }
        let b = ((v - self.lo) / w).floor();
        if b < 0.0 {
            0
        } else {
            (b as usize).min(self.divisions - 1)
        }
    }

    pub fn edge(&self, i: usize) -> f64 {
        if i == self.divisions {
            self.hi
        } else {
            self.lo + self.width() * i as f64
        }
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.divisions).map(|i| self.edge(i)).collect()
    }
}

/// One non-empty bin: integer coordinates and a slice of the member pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bin {
    pub coords: Vec<u16>,
    pub offset: u32,
    pub len: u32,
}

/// Radial axis followed by one axis per angle; non-empty bins in lexicographic order of
/// their coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub axes: Vec<Axis>,
    pub bins: Vec<Bin>,
    /// Member ids grouped by bin.
    pub pool: Vec<u32>,
}

impl Grid {
    pub fn radial_edges(&self) -> Vec<f64> {
        self.axes[0].edges()
    }

    pub fn angular_ranges(&self) -> Vec<(f64, f64)> {
        self.axes[1..].iter().map(|a| (a.lo, a.hi)).collect()
    }

    pub fn coords_of(&self, s: &[f64]) -> Vec<u16> {
        self.axes.iter().zip(s).map(|(a, v)| a.bin_of(*v) as u16).collect()
    }

    /// Box `[lo, hi]` covered by a bin, per coordinate.
    pub fn bin_box(&self, bin: &Bin, lo: &mut [f64], hi: &mut [f64]) {
        for (k, (a, &c)) in self.axes.iter().zip(&bin.coords).enumerate() {
            lo[k] = a.edge(c as usize);
            hi[k] = a.edge(c as usize + 1);
        }
    }

    pub fn members(&self, bin: &Bin) -> &[u32] {
        &self.pool[bin.offset as usize..(bin.offset + bin.len) as usize]
    }
}

/// Builds the grid over `coords` (one spherical-coordinate vector per member, radius
/// first). Edges span the observed min/max of each coordinate; `r_min` is forced to 0
/// when `force_rmin_zero` is set.
pub fn build_grid(
    ids: &[u32],
    coords: &[Vec<f64>],
    n_radial: usize,
    n_angular: usize,
    force_rmin_zero: bool,
) -> Grid {
    assert_eq!(ids.len(), coords.len());
    let r = coords.first().map_or(0, Vec::len);
    let mut axes = Vec::with_capacity(r);
    for k in 0..r {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in coords {
            lo = lo.min(c[k]);
            hi = hi.max(c[k]);
        }
        if k == 0 && force_rmin_zero {
            lo = 0.0;
        }
        axes.push(Axis {
            lo,
            hi,
            divisions: if k == 0 { n_radial } else { n_angular },
        });
    }
    let mut table: BTreeMap<Vec<u16>, Vec<u32>> = BTreeMap::new();
    for (id, c) in ids.iter().zip(coords) {
        let key: Vec<u16> = axes.iter().zip(c).map(|(a, v)| a.bin_of(*v) as u16).collect();
        table.entry(key).or_default().push(*id);
    }
    let mut bins = Vec::with_capacity(table.len());
    let mut pool = Vec::with_capacity(ids.len());
    for (coords, members) in table {
        bins.push(Bin {
            coords,
            offset: pool.len() as u32,
            len: members.len() as u32,
        });
        pool.extend(members);
    }
    Grid { axes, bins, pool }
}
