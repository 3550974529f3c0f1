//! Frozen buckets with per-bucket PCA and hyperspherical binning.

mod format;
pub mod grid;
pub mod pca;
pub mod sphere;

use std::path::Path;

use rayon::prelude::*;

use crate::error::{GarlicError, Result};
use crate::gaussian::{CholeskyFactor, GaussianSet};
use crate::params::HyperParams;
use crate::refinement::current_buckets;
use crate::vectors::VectorSet;

pub use format::{FORMAT_VERSION, MAGIC};
pub use grid::{build_grid, Axis, Bin, Grid};
pub use pca::{bucket_pca, Pca};
pub use sphere::{cart2sph, cart2sph_vec, sph2cart};

/// Members of one Gaussian with their quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct Bucket {
    pub gaussian_id: usize,
    /// Sorted member ids.
    pub members: Vec<u32>,
    pub pca: Pca,
    pub grid: Grid,
}

impl Bucket {
    pub fn is_degenerate(&self) -> bool {
        self.pca.degenerate
    }

    /// Spherical coordinates of `x` in this bucket's PCA frame.
    pub fn spherical(&self, x: &[f32]) -> Vec<f64> {
        let mut z = vec![0.0; self.pca.rank()];
        self.pca.project(x, &mut z);
        cart2sph_vec(&z)
    }

    pub fn bin_coords(&self, x: &[f32]) -> Vec<u16> {
        self.grid.coords_of(&self.spherical(x))
    }
}

/// Same rule as training: Gaussians covering a point within `tau`, else the nearest one.
pub fn assign_buckets(points: &VectorSet, gaussians: &GaussianSet, tau: f64) -> Result<Vec<Vec<usize>>> {
    current_buckets(points, gaussians, tau)
}

/// Summary of the data an index was built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fingerprint {
    pub n: usize,
    pub dim: usize,
    pub checksum: u32,
}

impl Fingerprint {
    pub fn of(points: &VectorSet) -> Self {
        Self {
            n: points.len(),
            dim: points.dim(),
            checksum: points.checksum(),
        }
    }
}

/// A built index: compacted Gaussians (all active) and one bucket per Gaussian, where
/// bucket `i` belongs to Gaussian `i`.
#[derive(Debug, Clone)]
pub struct Index {
    pub gaussians: GaussianSet,
    pub buckets: Vec<Bucket>,
    pub fingerprint: Fingerprint,
    pub dataset_path: Option<String>,
    pub hp: HyperParams,
    factors: Vec<CholeskyFactor>,
}

impl PartialEq for Index {
    fn eq(&self, other: &Self) -> bool {
        self.gaussians == other.gaussians
            && self.buckets == other.buckets
            && self.fingerprint == other.fingerprint
            && self.dataset_path == other.dataset_path
            && self.hp == other.hp
    }
}

impl Index {
    pub(crate) fn from_parts(
        gaussians: GaussianSet,
        buckets: Vec<Bucket>,
        fingerprint: Fingerprint,
        dataset_path: Option<String>,
        hp: HyperParams,
    ) -> Result<Self> {
        let factors = gaussians
            .iter()
            .map(|(_, g, _)| g.factor())
            .collect::<Result<Vec<_>>>()?;
        let index = Self {
            gaussians,
            buckets,
            fingerprint,
            dataset_path,
            hp,
            factors,
        };
        index.validate()?;
        Ok(index)
    }

    pub fn dim(&self) -> usize {
        self.fingerprint.dim
    }

    pub fn len(&self) -> usize {
        self.fingerprint.n
    }

    pub fn is_empty(&self) -> bool {
        self.fingerprint.n == 0
    }

    pub fn n_buckets(&self) -> usize {
        self.buckets.len()
    }

    pub fn factors(&self) -> &[CholeskyFactor] {
        &self.factors
    }

    /// Fails unless `points` matches the fingerprint the index was built with.
    pub fn check_dataset(&self, points: &VectorSet) -> Result<()> {
        let fp = Fingerprint::of(points);
        if fp != self.fingerprint {
            return Err(GarlicError::InvalidInput(format!(
                "dataset does not match the index (index n={} d={} crc={:08x}, data n={} d={} crc={:08x})",
                self.fingerprint.n, self.fingerprint.dim, self.fingerprint.checksum, fp.n, fp.dim, fp.checksum
            )));
        }
        Ok(())
    }

    /// Structural invariants: one bucket per Gaussian, members in range and covered by
    /// the bins exactly once, union of members equal to every id.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GarlicError::InvalidInput(msg));
        let n = self.fingerprint.n;
        if self.gaussians.dim() != self.fingerprint.dim {
            return bad("Gaussian dimension differs from the dataset".into());
        }
        if self.gaussians.len() != self.buckets.len() || self.gaussians.active_count() != self.gaussians.len() {
            return bad("bucket count must equal the active Gaussian count".into());
        }
        let mut seen = vec![false; n];
        for (i, b) in self.buckets.iter().enumerate() {
            if b.gaussian_id != i {
                return bad(format!("bucket {i} refers to Gaussian {}", b.gaussian_id));
            }
            if b.members.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("bucket {i} members are not strictly sorted"));
            }
            if b.members.iter().any(|&m| m as usize >= n) {
                return bad(format!("bucket {i} has a member id out of range"));
            }
            let mut pooled = b.grid.pool.clone();
            pooled.sort_unstable();
            if pooled != b.members {
                return bad(format!("bucket {i} bins do not partition its members"));
            }
            let mut end = 0u64;
            for bin in &b.grid.bins {
                if bin.offset as u64 != end || bin.len == 0 || bin.coords.len() != b.grid.axes.len() {
                    return bad(format!("bucket {i} has an inconsistent bin table"));
                }
                end += bin.len as u64;
            }
            if end as usize != b.grid.pool.len() && !(b.is_degenerate() && b.grid.bins.is_empty()) {
                return bad(format!("bucket {i} bin table does not cover its pool"));
            }
            for &m in &b.members {
                seen[m as usize] = true;
            }
        }
        if n > 0 && !seen.iter().all(|s| *s) {
            return bad("some points belong to no bucket".into());
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        format::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        format::decode(bytes)
    }
}

fn quantize(points: &VectorSet, gaussian_id: usize, members: &[usize], hp: &HyperParams) -> Bucket {
    let pca = bucket_pca(points, members, hp.r_pca);
    let ids: Vec<u32> = members.iter().map(|&m| m as u32).collect();
    let grid = if pca.degenerate || members.is_empty() {
        Grid {
            axes: Vec::new(),
            bins: Vec::new(),
            pool: ids.clone(),
        }
    } else {
        let mut z = vec![0.0; pca.rank()];
        let coords: Vec<Vec<f64>> = members
            .iter()
            .map(|&m| {
                pca.project(points.row(m), &mut z);
                cart2sph_vec(&z)
            })
            .collect();
        build_grid(&ids, &coords, hp.n_radial, hp.n_angular, hp.force_rmin_zero)
    };
    Bucket {
        gaussian_id,
        members: ids,
        pca,
        grid,
    }
}

/// Assigns points to the active Gaussians and quantizes each bucket. Inactive Gaussians
/// are dropped, so Gaussian and bucket ids are renumbered densely.
pub fn build_index(points: &VectorSet, gaussians: &GaussianSet, hp: &HyperParams) -> Result<Index> {
    hp.validate()?;
    if gaussians.active_count() == 0 {
        return Err(GarlicError::EmptyIndex);
    }
    if points.len() > u32::MAX as usize {
        return Err(GarlicError::InvalidInput("too many points for 32-bit ids".into()));
    }
    let compact = gaussians.compacted();
    let members = assign_buckets(points, &compact, hp.tau)?;
    let buckets: Vec<Bucket> = members
        .par_iter()
        .enumerate()
        .map(|(g, m)| quantize(points, g, m, hp))
        .collect();
    Index::from_parts(compact, buckets, Fingerprint::of(points), None, hp.clone())
}
