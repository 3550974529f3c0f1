//! Hyperparameters for training, refinement, quantization and querying.

use std::fmt;
use std::str::FromStr;

use crate::error::{GarlicError, Result};

/// Parameter update rule used by [`crate::training::fit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    /// Plain gradient descent with the scheduled rate.
    Sgd,
    /// Heavy-ball momentum (coefficient `HyperParams::momentum`).
    Momentum,
    /// Adam with the usual `β₁ = 0.9, β₂ = 0.999`.
    Adam,
}

/// Per-feature standardization applied to the training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    None,
    /// Subtract the per-dimension mean, divide by the per-dimension standard deviation.
    PerDimension,
    /// Subtract the per-dimension mean, divide by one global standard deviation.
    Global,
}

/// Which neighbors define the initial Gaussian scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitNeighbors {
    /// Nearest other centers.
    Centers,
    /// Nearest data points.
    Data,
}

/// Outer radius of the clone shell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShellMode {
    /// `(τ, e·τ)`.
    Scaled,
    /// `(τ, (1 + e)·τ)`.
    OnePlus,
}

macro_rules! str_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                match self {
                    $($ty::$variant => f.write_str($name),)+
                }
            }
        }

        impl FromStr for $ty {
            type Err = GarlicError;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    other => Err(GarlicError::InvalidParameter(format!(
                        "unknown {} value {other:?}",
                        stringify!($ty)
                    ))),
                }
            }
        }
    };
}

str_enum!(Optimizer { Sgd => "sgd", Momentum => "momentum", Adam => "adam" });
str_enum!(Normalization { None => "none", PerDimension => "per_dim", Global => "global" });
str_enum!(InitNeighbors { Centers => "centers", Data => "data" });
str_enum!(ShellMode { Scaled => "scaled", OnePlus => "one_plus" });

macro_rules! hyper_params {
    ($( $(#[$doc:meta])* $field:ident : $ty:ty = $default:expr ),+ $(,)?) => {
        /// Every tunable of the build and query pipeline.
        ///
        /// Field names double as configuration keys (see [`HyperParams::set`]).
        #[derive(Debug, Clone, PartialEq)]
        pub struct HyperParams {
            $( $(#[$doc])* pub $field: $ty, )+
        }

        impl Default for HyperParams {
            fn default() -> Self {
                Self { $( $field: $default, )+ }
            }
        }

        impl HyperParams {
            /// All configuration keys in declaration order.
            pub const KEYS: &'static [&'static str] = &[$( stringify!($field), )+];

            /// Sets one parameter from its textual form.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                let value = value.trim();
                match key {
                    $( stringify!($field) => {
                        self.$field = value.parse::<$ty>().map_err(|_| {
                            GarlicError::InvalidParameter(format!(
                                "cannot parse {value:?} for {key}"
                            ))
                        })?;
                    } )+
                    other => {
                        return Err(GarlicError::InvalidParameter(format!(
                            "unknown hyperparameter {other:?}"
                        )))
                    }
                }
                Ok(())
            }

            /// `(key, value)` pairs whose values parse back to identical parameters.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$( (stringify!($field), format_value(&self.$field)), )+]
            }
        }
    };
}

trait ConfigValue {
    fn render(&self) -> String;
}

impl ConfigValue for f64 {
    fn render(&self) -> String {
        // Debug formatting of f64 is the shortest exact round-trip representation.
        format!("{self:?}")
    }
}

macro_rules! display_value {
    ($($t:ty),+) => {
        $(impl ConfigValue for $t {
            fn render(&self) -> String {
                self.to_string()
            }
        })+
    };
}

display_value!(usize, u64, bool, Optimizer, Normalization, InitNeighbors, ShellMode);

fn format_value<T: ConfigValue>(v: &T) -> String {
    v.render()
}

hyper_params! {
    /// Coverage threshold in standard-deviation units.
    tau: f64 = 3.0,
    lambda_div: f64 = 1.0,
    lambda_cov: f64 = 1.0,
    lambda_anchor: f64 = 1e-2,
    /// Weight of the covariance term inside the anchor loss.
    alpha_anchor: f64 = 1e-1,
    /// Factor applied to `L` of both children of a split.
    alpha_split: f64 = 0.9,
    /// A Gaussian is split when its bucket exceeds `gamma_split · n` points.
    gamma_split: f64 = 1e-2,
    /// Shell multiplier for the clone boundary region.
    e_clone: f64 = 2.2,
    /// Fraction of boundary points sampled for density estimation.
    rho_clone: f64 = 0.6,
    /// Minimum boundary/interior ratio for cloning.
    beta_clone: f64 = 0.3,
    /// Minimum bucket size, as a fraction of `n`, for cloning.
    clone_min_frac: f64 = 8e-4,
    /// Gaussians with fewer bucket members are pruned.
    prune_min_card: usize = 2,
    k_density: usize = 10,
    k_init_nn: usize = 3,
    k_init: usize = 32,
    epochs_max: usize = 250,
    warmup_epochs: usize = 35,
    splitclone_period: usize = 35,
    prune_period: usize = 60,
    lr_mu_start: f64 = 1e-7,
    lr_mu_peak: f64 = 9e-3,
    lr_mu_final: f64 = 3e-3,
    lr_l_start: f64 = 1e-7,
    lr_l_peak: f64 = 5e-4,
    lr_l_final: f64 = 9e-5,
    batch_size: usize = 250,
    /// Dimension of the per-bucket PCA space.
    r_pca: usize = 3,
    n_radial: usize = 6,
    n_angular: usize = 4,
    /// Fraction of a bucket's bins probed per query.
    probe_ratio: f64 = 0.3,
    eps_num: f64 = 1e-12,
    seed: u64 = 0,
    optimizer: Optimizer = Optimizer::Adam,
    momentum: f64 = 0.9,
    normalization: Normalization = Normalization::PerDimension,
    init_neighbors: InitNeighbors = InitNeighbors::Centers,
    shell: ShellMode = ShellMode::Scaled,
    /// Use `r_min = 0` for radial bin edges instead of the bucket minimum.
    force_rmin_zero: bool = false,
    /// K-Means++ runs on at most `kmeans_subsample · K` points.
    kmeans_subsample: usize = 100,
    /// Epoch window for the early-stopping test.
    early_stop_window: usize = 10,
    /// Minimum relative loss improvement over the window to keep training.
    early_stop_tol: f64 = 1e-4,
    /// Cap on the points handed to DBSCAN during a split and to the density estimate
    /// during a clone.
    refine_sample_cap: usize = 1024,
    /// Number of Gaussians probed by the top-k bucket mode when none is given.
    topk_buckets: usize = 3,
}

impl HyperParams {
    /// Checks the documented invariants.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(GarlicError::InvalidParameter(msg.to_string()));
        let finite = [
            self.tau,
            self.lambda_div,
            self.lambda_cov,
            self.lambda_anchor,
            self.alpha_anchor,
            self.alpha_split,
            self.gamma_split,
            self.e_clone,
            self.rho_clone,
            self.beta_clone,
            self.clone_min_frac,
            self.lr_mu_start,
            self.lr_mu_peak,
            self.lr_mu_final,
            self.lr_l_start,
            self.lr_l_peak,
            self.lr_l_final,
            self.probe_ratio,
            self.eps_num,
            self.momentum,
            self.early_stop_tol,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return fail("hyperparameters must be finite");
        }
        if self.tau <= 0.0 {
            return fail("tau must be > 0");
        }
        if !(self.rho_clone > 0.0 && self.rho_clone <= 1.0) {
            return fail("rho_clone must lie in (0, 1]");
        }
        if self.e_clone <= 1.0 && self.shell == ShellMode::Scaled {
            return fail("e_clone must be > 1");
        }
        if !(self.probe_ratio > 0.0 && self.probe_ratio <= 1.0) {
            return fail("probe_ratio must lie in (0, 1]");
        }
        if self.r_pca < 2 {
            return fail("r_pca must be >= 2");
        }
        if self.n_radial < 1 || self.n_angular < 1 {
            return fail("n_radial and n_angular must be >= 1");
        }
        if self.n_radial > u16::MAX as usize || self.n_angular > u16::MAX as usize {
            return fail("grid resolution too large");
        }
        if !(self.alpha_split > 0.0) {
            return fail("alpha_split must be > 0");
        }
        if self.k_init < 1 {
            return fail("k_init must be >= 1");
        }
        if self.k_init_nn < 1 || self.k_density < 1 {
            return fail("neighbor counts must be >= 1");
        }
        if self.batch_size < 1 {
            return fail("batch_size must be >= 1");
        }
        if self.splitclone_period < 1 || self.prune_period < 1 {
            return fail("refinement periods must be >= 1");
        }
        if self.lr_mu_start > self.lr_mu_peak
            || self.lr_mu_final > self.lr_mu_peak
            || self.lr_l_start > self.lr_l_peak
            || self.lr_l_final > self.lr_l_peak
        {
            return fail("learning-rate schedules need start <= peak and final <= peak");
        }
        if self.lr_mu_final <= 0.0 || self.lr_l_final <= 0.0 {
            return fail("final learning rates must be > 0");
        }
        if self.eps_num < 0.0 {
            return fail("eps_num must be >= 0");
        }
        if self.kmeans_subsample < 1 || self.topk_buckets < 1 || self.refine_sample_cap < 1 {
            return fail("kmeans_subsample, topk_buckets and refine_sample_cap must be >= 1");
        }
        Ok(())
    }

    /// Outer radius of the clone shell.
    pub fn shell_outer(&self) -> f64 {
        match self.shell {
            ShellMode::Scaled => self.e_clone * self.tau,
            ShellMode::OnePlus => (1.0 + self.e_clone) * self.tau,
        }
    }

    /// Renders `key = value` lines in declaration order.
    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }
}
