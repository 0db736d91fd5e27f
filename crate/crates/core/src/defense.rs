//! Sanitization defenses: sphere and slab feasible sets around class
//! centroids, in oracle (fixed) and data-dependent variants.
//!
//! For a point `(x, y)` with `v = μ_y − μ_{−y}`:
//!
//! * sphere: `‖x − μ_y‖₂ ≤ r_y`
//! * slab:   `|⟨x − μ_y, v⟩| ≤ s_y`
//!
//! Integer-wrapped sets additionally require non-negative integer coordinates.

use serde::{Deserialize, Serialize};

use crate::data::{ceil_count, class_stats, ClassStats, Dataset, Label, LabeledPoint};
use crate::error::{Error, Result};
use crate::vecops;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereSlabParams {
    pub mu_plus: Vec<f64>,
    pub mu_minus: Vec<f64>,
    pub r_plus: f64,
    pub r_minus: f64,
    pub s_plus: f64,
    pub s_minus: f64,
    pub use_sphere: bool,
    pub use_slab: bool,
}

impl SphereSlabParams {
    pub fn mu(&self, y: Label) -> &[f64] {
        match y {
            Label::Pos => &self.mu_plus,
            Label::Neg => &self.mu_minus,
        }
    }

    pub fn radius(&self, y: Label) -> f64 {
        match y {
            Label::Pos => self.r_plus,
            Label::Neg => self.r_minus,
        }
    }

    pub fn half_width(&self, y: Label) -> f64 {
        match y {
            Label::Pos => self.s_plus,
            Label::Neg => self.s_minus,
        }
    }

    /// `μ_y − μ_{−y}`
    pub fn slab_direction(&self, y: Label) -> Vec<f64> {
        vecops::sub(self.mu(y), self.mu(y.opposite()))
    }

    pub fn dim(&self) -> usize {
        self.mu_plus.len()
    }

    pub fn validate(&self) -> Result<()> {
        Error::check_dim(self.mu_plus.len(), self.mu_minus.len())?;
        for v in [self.r_plus, self.r_minus, self.s_plus, self.s_minus] {
            if v.is_nan() || v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "defense thresholds must be non-negative, got {v}"
                )));
            }
        }
        if !self.use_sphere && !self.use_slab {
            return Err(Error::InvalidArgument(
                "at least one of sphere/slab must be enabled".into(),
            ));
        }
        Ok(())
    }

    /// `(‖x − μ_y‖, ⟨x − μ_y, μ_y − μ_{−y}⟩)`
    pub fn constraint_values(&self, x: &[f64], y: Label) -> (f64, f64) {
        let mu = self.mu(y);
        let other = self.mu(y.opposite());
        let mut sq = 0.0;
        let mut slab = 0.0;
        for i in 0..x.len() {
            let z = x[i] - mu[i];
            sq += z * z;
            slab += z * (mu[i] - other[i]);
        }
        (sq.sqrt(), slab)
    }

    /// Largest amount by which an enabled constraint is exceeded (≤ 0 when feasible).
    pub fn violation(&self, x: &[f64], y: Label) -> f64 {
        let (dist, slab) = self.constraint_values(x, y);
        let mut worst = f64::NEG_INFINITY;
        if self.use_sphere {
            worst = worst.max(dist - self.radius(y));
        }
        if self.use_slab {
            worst = worst.max(slab.abs() - self.half_width(y));
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefenseKind {
    Oracle,
    #[serde(alias = "data-dep")]
    DataDependent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleSet {
    pub kind: DefenseKind,
    pub params: SphereSlabParams,
    pub integer_features: bool,
    /// Slack allowed on constraint values in membership tests.
    pub tol: f64,
}

pub const DEFAULT_MEMBERSHIP_TOL: f64 = 1e-9;

impl FeasibleSet {
    pub fn new(kind: DefenseKind, params: SphereSlabParams, integer_features: bool) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            kind,
            params,
            integer_features,
            tol: DEFAULT_MEMBERSHIP_TOL,
        })
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn membership(&self, p: &LabeledPoint) -> Result<bool> {
        Error::check_dim(self.dim(), p.dim())?;
        if self.integer_features && !p.is_nonneg_integer() {
            return Ok(false);
        }
        Ok(self.params.violation(&p.x, p.y) <= self.tol)
    }

    /// `D ∩ F`, order preserved.
    pub fn filter(&self, data: &Dataset) -> Result<Dataset> {
        Error::check_dim(self.dim(), data.dim())?;
        Ok(data.retain_by(|p| self.membership(p).unwrap_or(false)))
    }
}

/// Per-class, per-constraint lower empirical quantiles of the clean data's
/// sphere distances and absolute slab values.
pub fn calibrate_thresholds(
    clean: &Dataset,
    stats: &ClassStats,
    keep_fraction: f64,
) -> Result<SphereSlabParams> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep_fraction must be in (0,1], got {keep_fraction}"
        )));
    }
    Error::check_dim(clean.dim(), stats.mu_plus.len())?;
    let mut params = SphereSlabParams {
        mu_plus: stats.mu_plus.clone(),
        mu_minus: stats.mu_minus.clone(),
        r_plus: 0.0,
        r_minus: 0.0,
        s_plus: 0.0,
        s_minus: 0.0,
        use_sphere: true,
        use_slab: true,
    };
    for y in Label::BOTH {
        let (mut dists, mut slabs): (Vec<f64>, Vec<f64>) = clean
            .iter()
            .filter(|p| p.y == y)
            .map(|p| {
                let (d, s) = params.constraint_values(&p.x, y);
                (d, s.abs())
            })
            .unzip();
        if dists.is_empty() {
            return Err(Error::Stats(format!("class {y} is empty")));
        }
        let k = ceil_count(keep_fraction * dists.len() as f64).max(1);
        dists.sort_by(f64::total_cmp);
        slabs.sort_by(f64::total_cmp);
        let (r, s) = (dists[k - 1], slabs[k - 1]);
        match y {
            Label::Pos => {
                params.r_plus = r;
                params.s_plus = s;
            }
            Label::Neg => {
                params.r_minus = r;
                params.s_minus = s;
            }
        }
    }
    Ok(params)
}

/// Replaces the centroids with the class means over `D_c ∪ D_p`, keeping the
/// thresholds.
pub fn recompute_data_dependent(f: &FeasibleSet, clean: &Dataset, poison: &Dataset) -> Result<FeasibleSet> {
    if f.kind != DefenseKind::DataDependent {
        return Err(Error::InvalidArgument(
            "recompute_data_dependent requires a data-dependent feasible set".into(),
        ));
    }
    let stats = class_stats(&clean.union(poison)?)?;
    let mut out = f.clone();
    out.params.mu_plus = stats.mu_plus;
    out.params.mu_minus = stats.mu_minus;
    Ok(out)
}

/// Serializable description of a defense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefenseConfig {
    pub kind: DefenseKind,
    #[serde(default = "default_keep")]
    pub keep_fraction: f64,
    #[serde(default = "yes")]
    pub use_sphere: bool,
    #[serde(default = "yes")]
    pub use_slab: bool,
    #[serde(default)]
    pub integer_features: bool,
}

fn default_keep() -> f64 {
    0.7
}

fn yes() -> bool {
    true
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            kind: DefenseKind::Oracle,
            keep_fraction: default_keep(),
            use_sphere: true,
            use_slab: true,
            integer_features: false,
        }
    }
}

impl DefenseConfig {
    /// Calibrates the thresholds on `clean` around its empirical centroids.
    pub fn build(&self, clean: &Dataset) -> Result<FeasibleSet> {
        let stats = class_stats(clean)?;
        let mut params = calibrate_thresholds(clean, &stats, self.keep_fraction)?;
        params.use_sphere = self.use_sphere;
        params.use_slab = self.use_slab;
        FeasibleSet::new(self.kind, params, self.integer_features)
    }
}
