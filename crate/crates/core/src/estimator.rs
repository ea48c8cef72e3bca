//! The mixing-density estimator: spectral-cutoff deconvolution of an observed
//! eigenvalue sample against the Wishart transform, the unbiased risk
//! surrogate M₀(T) with argmin cutoff selection, and integrated squared error
//! against reference densities.
//!
//! Estimates live on a rectangular eigenvalue grid restricted to a₁ > a₂ and
//! carry quadrature weights for the invariant measure d*a. On the ordered
//! chamber the Lebesgue density of d*a is π (a₁a₂)^{−3/2} (a₁ − a₂): the
//! normalizing constant π/2 of the diagonal group folds both orderings of the
//! eigenvalue pair onto a₁ > a₂.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spd::EigenPair;
use crate::transform::{
    wishart_transform, CutoffRegion, QuadratureSpec, SpectralNodes, TransformError,
};

/// Lebesgue density of the eigenvalue measure d*a on the ordered chamber
/// a₁ > a₂ > 0 (zero elsewhere).
pub fn eigen_measure_density(a1: f64, a2: f64) -> f64 {
    if a1 > a2 && a2 > 0.0 {
        std::f64::consts::PI * (a1 * a2).powf(-1.5) * (a1 - a2)
    } else {
        0.0
    }
}

/// Estimator-layer failures.
#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("estimation needs a non-empty sample")]
    EmptySample,

    #[error("unbiased risk needs at least 2 observations, got {0}")]
    SampleTooSmall(usize),

    #[error("amplification cap {0} must be at least 1")]
    InvalidCap(f64),

    #[error("cutoff grid for selection must be non-empty")]
    EmptyCutoffGrid,

    #[error("all {total} spectral nodes were excluded by the amplification guard")]
    AllNodesExcluded { total: usize },

    #[error("density grids do not share identical nodes")]
    GridMismatch,

    #[error("grid specification invalid: {0}")]
    InvalidGrid(String),

    #[error(transparent)]
    Transform(#[from] TransformError),
}

/// Evaluation-grid specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum GridSpec {
    /// Geometric grid between per-axis sample quantiles of the observed
    /// eigenvalues, divided by the noise degrees of freedom: E[Y] = N·X, so
    /// the mixing density lives a factor N below the observed scale. The
    /// default is 40×40 over [q₀.₀₁, q₀.₉₉].
    Quantile {
        nodes_per_axis: usize,
        q_low: f64,
        q_high: f64,
    },
    /// Explicit strictly-increasing positive nodes per axis.
    Explicit {
        a1_nodes: Vec<f64>,
        a2_nodes: Vec<f64>,
    },
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Quantile {
            nodes_per_axis: 40,
            q_low: 0.01,
            q_high: 0.99,
        }
    }
}

/// Cutoff choice: a fixed T or data-driven selection over a T grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CutoffChoice {
    Fixed(f64),
    Select { t_grid: Vec<f64> },
}

impl CutoffChoice {
    /// The default selection grid: 25 geometric points on [0.5, 200].
    pub fn default_selection_grid() -> Vec<f64> {
        geometric_nodes(0.5, 200.0, 25)
    }
}

/// Configuration of the deconvolution estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Degrees of freedom N of the Wishart noise (must exceed 1/2).
    pub noise_df: f64,
    /// Spectral cutoff, fixed or selected by unbiased risk.
    pub cutoff: CutoffChoice,
    /// Integration scheme over the spectral disk.
    pub quad: QuadratureSpec,
    /// Nodes with 1/|ŵ(s)| above this cap are excluded (and counted).
    pub amplification_cap: f64,
    /// Evaluation grid.
    pub grid: GridSpec,
}

impl EstimatorConfig {
    pub fn new(noise_df: f64, cutoff: CutoffChoice) -> Self {
        Self {
            noise_df,
            cutoff,
            quad: QuadratureSpec::default(),
            amplification_cap: 1e12,
            grid: GridSpec::default(),
        }
    }

    fn validate(&self) -> Result<(), EstimatorError> {
        if !(self.noise_df > 0.5) {
            return Err(TransformError::InvalidDegreesOfFreedom(self.noise_df).into());
        }
        if !(self.amplification_cap >= 1.0) {
            return Err(EstimatorError::InvalidCap(self.amplification_cap));
        }
        match &self.cutoff {
            CutoffChoice::Fixed(t) => {
                CutoffRegion::new(*t)?;
            }
            CutoffChoice::Select { t_grid } => {
                if t_grid.is_empty() {
                    return Err(EstimatorError::EmptyCutoffGrid);
                }
                for t in t_grid {
                    CutoffRegion::new(*t)?;
                }
            }
        }
        Ok(())
    }
}

/// Density estimate over an eigenvalue grid with attached d*a weights.
///
/// `values` and `weights` are row-major over (a₁ index, a₂ index); cells with
/// a₁ ≤ a₂ are outside the ordered chamber and carry value 0 and weight 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub a1_nodes: Vec<f64>,
    pub a2_nodes: Vec<f64>,
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

impl DensityGrid {
    /// Fresh zero-valued grid over the given nodes, with d*a weights from the
    /// midpoint cell rule.
    pub fn zeros(a1_nodes: Vec<f64>, a2_nodes: Vec<f64>) -> Result<Self, EstimatorError> {
        for nodes in [&a1_nodes, &a2_nodes] {
            if nodes.is_empty() {
                return Err(EstimatorError::InvalidGrid("empty axis".into()));
            }
            if nodes[0] <= 0.0 {
                return Err(EstimatorError::InvalidGrid("nodes must be positive".into()));
            }
            if nodes.windows(2).any(|w| w[0] >= w[1]) {
                return Err(EstimatorError::InvalidGrid(
                    "nodes must be strictly increasing".into(),
                ));
            }
        }
        let d1 = cell_widths(&a1_nodes);
        let d2 = cell_widths(&a2_nodes);
        let mut weights = vec![0.0; a1_nodes.len() * a2_nodes.len()];
        for (i, &a1) in a1_nodes.iter().enumerate() {
            for (j, &a2) in a2_nodes.iter().enumerate() {
                weights[i * a2_nodes.len() + j] = eigen_measure_density(a1, a2) * d1[i] * d2[j];
            }
        }
        Ok(Self {
            values: vec![0.0; a1_nodes.len() * a2_nodes.len()],
            a1_nodes,
            a2_nodes,
            weights,
        })
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.a2_nodes.len() + j]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.a2_nodes.len() + j]
    }

    /// True for cells inside the ordered chamber a₁ > a₂.
    pub fn in_chamber(&self, i: usize, j: usize) -> bool {
        self.a1_nodes[i] > self.a2_nodes[j]
    }

    /// Integrated squared difference Σ (self − reference)² · weight, one
    /// replicate's ISE contribution under d*a.
    pub fn mise_against(&self, reference: &DensityGrid) -> Result<f64, EstimatorError> {
        if self.a1_nodes != reference.a1_nodes || self.a2_nodes != reference.a2_nodes {
            return Err(EstimatorError::GridMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&reference.values)
            .zip(&self.weights)
            .map(|((v, r), w)| (v - r) * (v - r) * w)
            .sum())
    }

    /// Number of local maxima of the surface over the ordered chamber.
    ///
    /// A cell counts when it is not on the grid boundary, carries at least
    /// `floor_frac` of the grid maximum, and is strictly greater than every
    /// neighbouring in-chamber cell. Neighbours masked by a₁ ≤ a₂ are simply
    /// absent: densities relative to d*a typically crest along the diagonal,
    /// so summits sit next to the mask.
    pub fn count_local_maxima(&self, floor_frac: f64) -> usize {
        let n2 = self.a2_nodes.len();
        let n1 = self.a1_nodes.len();
        let max = self.values.iter().cloned().fold(f64::MIN, f64::max);
        if !(max > 0.0) {
            return 0;
        }
        let floor = floor_frac * max;
        let mut count = 0;
        for i in 1..n1.saturating_sub(1) {
            for j in 1..n2.saturating_sub(1) {
                if !self.in_chamber(i, j) || self.value(i, j) < floor {
                    continue;
                }
                let mut neighbours = 0;
                let mut is_peak = true;
                'outer: for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        if di == 0 && dj == 0 {
                            continue;
                        }
                        let ni = (i as i64 + di) as usize;
                        let nj = (j as i64 + dj) as usize;
                        if !self.in_chamber(ni, nj) {
                            continue;
                        }
                        neighbours += 1;
                        if self.value(ni, nj) >= self.value(i, j) {
                            is_peak = false;
                            break 'outer;
                        }
                    }
                }
                if is_peak && neighbours >= 3 {
                    count += 1;
                }
            }
        }
        count
    }

    /// CSV serialization: header `a1,a2,value,weight`, rows in row-major
    /// (a₁-outer) order, one row per grid cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("a1,a2,value,weight\n");
        for (i, &a1) in self.a1_nodes.iter().enumerate() {
            for (j, &a2) in self.a2_nodes.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    a1,
                    a2,
                    self.value(i, j),
                    self.weight(i, j)
                ));
            }
        }
        out
    }

    /// JSON serialization: nodes plus row-major values and weights.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("grid serializes")
    }
}

fn cell_widths(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|k| {
            if k == 0 {
                0.5 * (nodes[1] - nodes[0])
            } else if k == n - 1 {
                0.5 * (nodes[n - 1] - nodes[n - 2])
            } else {
                0.5 * (nodes[k + 1] - nodes[k - 1])
            }
        })
        .collect()
}

/// Geometric progression of `n` nodes from `lo` to `hi`.
pub fn geometric_nodes(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (llo + (lhi - llo) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

fn grid_axes(
    spec: &GridSpec,
    eigs: &[EigenPair],
    noise_df: f64,
) -> Result<(Vec<f64>, Vec<f64>), EstimatorError> {
    match spec {
        GridSpec::Explicit { a1_nodes, a2_nodes } => Ok((a1_nodes.clone(), a2_nodes.clone())),
        GridSpec::Quantile {
            nodes_per_axis,
            q_low,
            q_high,
        } => {
            if *nodes_per_axis < 2 {
                return Err(EstimatorError::InvalidGrid(
                    "quantile grids need at least 2 nodes per axis".into(),
                ));
            }
            if !(0.0 <= *q_low && q_low < q_high && *q_high <= 1.0) {
                return Err(EstimatorError::InvalidGrid("bad quantile range".into()));
            }
            let mut a1s: Vec<f64> = eigs.iter().map(|e| e.a1() / noise_df).collect();
            let mut a2s: Vec<f64> = eigs.iter().map(|e| e.a2() / noise_df).collect();
            a1s.sort_by(f64::total_cmp);
            a2s.sort_by(f64::total_cmp);
            let (lo1, hi1) = (
                empirical_quantile(&a1s, *q_low),
                empirical_quantile(&a1s, *q_high),
            );
            let (lo2, hi2) = (
                empirical_quantile(&a2s, *q_low),
                empirical_quantile(&a2s, *q_high),
            );
            if !(hi1 > lo1 && hi2 > lo2) {
                return Err(EstimatorError::InvalidGrid(
                    "degenerate quantile range; supply explicit nodes".into(),
                ));
            }
            Ok((
                geometric_nodes(lo1, hi1, *nodes_per_axis),
                geometric_nodes(lo2, hi2, *nodes_per_axis),
            ))
        }
    }
}

/// Result of a deconvolution run.
#[derive(Debug, Clone)]
pub struct DeconvolveOutput {
    pub grid: DensityGrid,
    /// Cutoff actually used (selected or fixed).
    pub t: f64,
    /// Curve of (T, M₀(T)) evaluated during selection; empty for fixed T.
    pub risk_curve: Vec<(f64, f64)>,
    /// Spectral nodes excluded by the amplification guard (within the used
    /// cutoff).
    pub excluded_nodes: usize,
    /// Spectral nodes that contributed.
    pub active_nodes: usize,
}

/// Per-node sufficient statistics of a sample on a spectral node set.
struct NodeStats {
    rows: Vec<RowStats>,
    n: usize,
}

struct RowStats {
    b1: f64,
    /// (β₂, weight, λ, ŵ, S = Σ_j conj h_s(E_j), Q = Σ_j |h_s(E_j)|²)
    nodes: Vec<NodeStat>,
}

#[derive(Clone, Copy)]
struct NodeStat {
    beta2: f64,
    weight: f64,
    lambda: f64,
    what: Complex64,
    s_sum: Complex64,
    q_sum: f64,
    excluded: bool,
}

fn prepare_stats(
    nodes: &SpectralNodes,
    eigs: &[EigenPair],
    noise_df: f64,
    cap: f64,
) -> Result<NodeStats, EstimatorError> {
    let sums = crate::transform::empirical_sums(nodes, eigs)?;
    let rows: Result<Vec<RowStats>, EstimatorError> = sums
        .into_iter()
        .map(|row| {
            let mut out = Vec::with_capacity(row.nodes.len());
            for node in row.nodes {
                let what = wishart_transform(&node.point, noise_df)?;
                out.push(NodeStat {
                    beta2: node.point.beta2(),
                    weight: node.weight,
                    lambda: node.point.lambda(),
                    what,
                    s_sum: node.s_sum,
                    q_sum: node.q_sum,
                    excluded: what.norm() * cap < 1.0,
                });
            }
            Ok(RowStats {
                b1: row.b1,
                nodes: out,
            })
        })
        .collect();

    Ok(NodeStats {
        rows: rows?,
        n: eigs.len(),
    })
}

impl NodeStats {
    /// M₀(T) over nodes with λ < t:
    /// ∫ ( |r̂_n|² − 2 P̂_n ) / |ŵ|² d*s with the pairwise U-statistic
    /// P̂_n = (|S|² − Q) / (n(n−1)).
    fn unbiased_risk(&self, t: f64) -> f64 {
        let n = self.n as f64;
        let mut total = 0.0;
        for row in &self.rows {
            for node in &row.nodes {
                if node.lambda >= t || node.excluded {
                    continue;
                }
                let s2 = node.s_sum.norm_sqr();
                let rhat2 = s2 / (n * n);
                let pairwise = (s2 - node.q_sum) / (n * (n - 1.0));
                total += node.weight * (rhat2 - 2.0 * pairwise) / node.what.norm_sqr();
            }
        }
        total
    }

    fn guard_counts(&self, t: f64) -> (usize, usize) {
        let mut excluded = 0;
        let mut active = 0;
        for row in &self.rows {
            for node in &row.nodes {
                if node.lambda >= t {
                    continue;
                }
                if node.excluded {
                    excluded += 1;
                } else {
                    active += 1;
                }
            }
        }
        (excluded, active)
    }
}

/// Deconvolution estimator f^D_n on the configured grid:
///
/// ```text
/// f^D_n(a) = ∫_{λ_s<T} Re{ (r̂_n(s)/ŵ(s)) · h_s(a) } d*s
/// ```
///
/// Values are real and may be negative (no clipping). When the configuration
/// asks for cutoff selection, T̂ = argmin M₀(T) over the grid is used and the
/// risk curve is reported.
pub fn deconvolve(eigs: &[EigenPair], cfg: &EstimatorConfig) -> Result<DeconvolveOutput, EstimatorError> {
    cfg.validate()?;
    if eigs.is_empty() {
        return Err(EstimatorError::EmptySample);
    }
    let (t_max, t_grid) = match &cfg.cutoff {
        CutoffChoice::Fixed(t) => (*t, None),
        CutoffChoice::Select { t_grid } => {
            if eigs.len() < 2 {
                return Err(EstimatorError::SampleTooSmall(eigs.len()));
            }
            let max = t_grid.iter().cloned().fold(f64::MIN, f64::max);
            (max, Some(t_grid.clone()))
        }
    };

    let region = CutoffRegion::new(t_max)?;
    let nodes = SpectralNodes::build(&region, &cfg.quad)?;
    let stats = prepare_stats(&nodes, eigs, cfg.noise_df, cfg.amplification_cap)?;

    let (t_used, risk_curve) = match t_grid {
        None => (t_max, Vec::new()),
        Some(grid) => {
            let mut curve: Vec<(f64, f64)> = grid
                .iter()
                .map(|&t| (t, stats.unbiased_risk(t)))
                .collect();
            curve.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut best = curve[0];
            for &(t, m0) in &curve[1..] {
                if m0 < best.1 {
                    best = (t, m0);
                }
            }
            (best.0, curve)
        }
    };

    let (excluded, active) = stats.guard_counts(t_used);
    if active == 0 {
        return Err(EstimatorError::AllNodesExcluded {
            total: excluded + active,
        });
    }

    let (a1_nodes, a2_nodes) = grid_axes(&cfg.grid, eigs, cfg.noise_df)?;
    let mut grid = DensityGrid::zeros(a1_nodes, a2_nodes)?;

    // Radial conical values per (row, grid point) are shared across β₂.
    let points: Vec<(usize, usize, f64, f64)> = {
        let mut pts = Vec::new();
        for (i, &a1) in grid.a1_nodes.iter().enumerate() {
            for (j, &a2) in grid.a2_nodes.iter().enumerate() {
                if a1 > a2 {
                    let e = EigenPair::new(a1, a2, 0.0).expect("grid node is ordered");
                    let u = e.to_polar();
                    pts.push((i, j, u.u1.cosh(), u.u2));
                }
            }
        }
        pts
    };

    let n = stats.n as f64;
    let values: Result<Vec<(usize, usize, f64)>, EstimatorError> = points
        .par_iter()
        .map(|&(i, j, cosh_u1, u2)| {
            let mut acc = 0.0;
            for row in &stats.rows {
                let radial = crate::specfn::conical_legendre(row.b1, cosh_u1)
                    .map_err(TransformError::from)?;
                for node in &row.nodes {
                    if node.lambda >= t_used || node.excluded {
                        continue;
                    }
                    let fhat = node.s_sum / n / node.what;
                    let h = Complex64::from_polar(radial, node.beta2 * u2);
                    acc += node.weight * (fhat * h).re;
                }
            }
            Ok((i, j, acc))
        })
        .collect();

    let n2 = grid.a2_nodes.len();
    for (i, j, v) in values? {
        grid.values[i * n2 + j] = v;
    }

    Ok(DeconvolveOutput {
        grid,
        t: t_used,
        risk_curve,
        excluded_nodes: excluded,
        active_nodes: active,
    })
}

/// Unbiased risk surrogate M₀(T) at a single cutoff.
pub fn unbiased_risk(
    eigs: &[EigenPair],
    cfg: &EstimatorConfig,
    t: f64,
) -> Result<f64, EstimatorError> {
    cfg.validate()?;
    if eigs.len() < 2 {
        return Err(EstimatorError::SampleTooSmall(eigs.len()));
    }
    let region = CutoffRegion::new(t)?;
    let nodes = SpectralNodes::build(&region, &cfg.quad)?;
    let stats = prepare_stats(&nodes, eigs, cfg.noise_df, cfg.amplification_cap)?;
    Ok(stats.unbiased_risk(t))
}

/// Cutoff selection T̂ = argmin_T M₀(T) over the configuration's T grid,
/// ties resolved toward the smaller cutoff. Returns the selected cutoff and
/// the full risk curve.
pub fn select_cutoff(
    eigs: &[EigenPair],
    cfg: &EstimatorConfig,
) -> Result<(f64, Vec<(f64, f64)>), EstimatorError> {
    cfg.validate()?;
    if eigs.len() < 2 {
        return Err(EstimatorError::SampleTooSmall(eigs.len()));
    }
    let t_grid = match &cfg.cutoff {
        CutoffChoice::Select { t_grid } => t_grid.clone(),
        CutoffChoice::Fixed(t) => vec![*t],
    };
    if t_grid.is_empty() {
        return Err(EstimatorError::EmptyCutoffGrid);
    }
    let t_max = t_grid.iter().cloned().fold(f64::MIN, f64::max);
    let region = CutoffRegion::new(t_max)?;
    let nodes = SpectralNodes::build(&region, &cfg.quad)?;
    let stats = prepare_stats(&nodes, eigs, cfg.noise_df, cfg.amplification_cap)?;
    let mut curve: Vec<(f64, f64)> = t_grid
        .iter()
        .map(|&t| (t, stats.unbiased_risk(t)))
        .collect();
    curve.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = curve[0];
    for &(t, m0) in &curve[1..] {
        if m0 < best.1 {
            best = (t, m0);
        }
    }
    Ok((best.0, curve))
}
