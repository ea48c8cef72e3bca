//! Wishart and mixture sampling, the convolution simulation protocol
//! (Z ~ W_N(I₂) noise, X ~ mixing law, Y = Xᵗ⸍² Z X¹⸍²), reference densities
//! for the mixing eigenvalue law, and seeded replicate studies.
//!
//! Draws use the Bartlett decomposition (triangular factor with
//! chi-distributed diagonal, standard-normal off-diagonal), which supports
//! non-integer degrees of freedom N > 1. All randomness flows through
//! `ChaCha12Rng`; parallel replicates derive per-task seeds with SplitMix64
//! so results are independent of thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{
    deconvolve, eigen_measure_density, geometric_nodes, CutoffChoice, DensityGrid,
    EstimatorConfig, EstimatorError, GridSpec,
};
use crate::spd::{EigenPair, SpdMatrix};
use crate::specfn::multivariate_gamma_log_real;
use crate::transform::QuadratureSpec;

/// Sampling-layer failures.
#[derive(Debug, Error)]
pub enum SamplingError {
    /// The Bartlett construction needs N > 1 at rank two.
    #[error("Wishart sampling needs degrees of freedom N > 1, got {0}")]
    InvalidDegreesOfFreedom(f64),

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// Counter-based seed derivation (SplitMix64) for reproducible parallel
/// streams.
pub fn derive_seed(base: u64, counter: u64) -> u64 {
    let mut z = base.wrapping_add(counter.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One mixture component: weight times either W_df(sigma) or, when `df` is
/// absent, a point mass fixing X = sigma exactly (the documented degenerate
/// mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
    pub sigma: SpdMatrix,
}

/// Mixing law for the covariance parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub components: Vec<MixtureComponent>,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.components.is_empty() {
            return Err(SamplingError::InvalidMixture("no components".into()));
        }
        let mut total = 0.0;
        for c in &self.components {
            if !(c.weight > 0.0) {
                return Err(SamplingError::InvalidMixture(format!(
                    "component weight {} must be positive",
                    c.weight
                )));
            }
            if let Some(df) = c.df {
                if !(df > 1.0) {
                    return Err(SamplingError::InvalidDegreesOfFreedom(df));
                }
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(SamplingError::InvalidMixture(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(())
    }

    /// Single Wishart component W_df(c·I₂).
    pub fn single_wishart(df: f64, scale: f64) -> Self {
        Self {
            components: vec![MixtureComponent {
                weight: 1.0,
                df: Some(df),
                sigma: SpdMatrix::scaled_identity(scale).expect("positive scale"),
            }],
        }
    }

    /// The unimodal reference experiment: W₁₅(2·I₂).
    pub fn unimodal_reference() -> Self {
        Self::single_wishart(15.0, 2.0)
    }

    /// The bimodal reference experiment: 0.5·W₁₅(2·I₂) + 0.5·W₁₅(6·I₂).
    pub fn bimodal_reference() -> Self {
        Self {
            components: vec![
                MixtureComponent {
                    weight: 0.5,
                    df: Some(15.0),
                    sigma: SpdMatrix::scaled_identity(2.0).unwrap(),
                },
                MixtureComponent {
                    weight: 0.5,
                    df: Some(15.0),
                    sigma: SpdMatrix::scaled_identity(6.0).unwrap(),
                },
            ],
        }
    }

    pub fn sample(&self, rng: &mut ChaCha12Rng) -> Result<SpdMatrix, SamplingError> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let last = self.components.len() - 1;
        for (k, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc || k == last {
                return match c.df {
                    Some(df) => sample_wishart(df, &c.sigma, rng),
                    None => Ok(c.sigma),
                };
            }
        }
        unreachable!("component selection is total")
    }

    /// True when every component's sigma is isotropic (c·I₂), which is what
    /// K-invariance of the mixing density requires of Wishart components.
    pub fn is_isotropic(&self) -> bool {
        self.components.iter().all(|c| {
            c.sigma.x12() == 0.0 && (c.sigma.x11() - c.sigma.x22()).abs() <= 1e-12 * c.sigma.x11()
        })
    }

    /// Closed-form mixing eigenvalue density (f^D units, i.e. relative to
    /// d*a) for isotropic Wishart mixtures; `None` otherwise.
    pub fn fd_density(&self, a1: f64, a2: f64) -> Option<f64> {
        if !self.is_isotropic() {
            return None;
        }
        let mut total = 0.0;
        for c in &self.components {
            let df = c.df?;
            total += c.weight * scaled_wishart_fd_density(df, c.sigma.x11(), a1, a2);
        }
        Some(total)
    }
}

/// Configuration of the convolution protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Sample size.
    pub n: usize,
    /// Degrees of freedom of the Wishart noise Z.
    pub noise_df: f64,
    pub mixing: MixtureSpec,
    pub seed: u64,
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.n == 0 {
            return Err(SamplingError::InvalidMixture("n must be at least 1".into()));
        }
        if !(self.noise_df > 1.0) {
            return Err(SamplingError::InvalidDegreesOfFreedom(self.noise_df));
        }
        self.mixing.validate()
    }
}

/// One draw from W_N(sigma) by the Bartlett decomposition: W = (LA)(LA)ᵀ
/// with L the lower Cholesky factor of sigma and A lower-triangular with
/// a₁₁ ~ χ_N, a₂₂ ~ χ_{N−1}, a₂₁ ~ N(0,1). Then E[W] = N·sigma.
pub fn sample_wishart(
    n_df: f64,
    sigma: &SpdMatrix,
    rng: &mut ChaCha12Rng,
) -> Result<SpdMatrix, SamplingError> {
    if !(n_df > 1.0) {
        return Err(SamplingError::InvalidDegreesOfFreedom(n_df));
    }
    let chi1 = ChiSquared::new(n_df).expect("df > 1");
    let chi2 = ChiSquared::new(n_df - 1.0).expect("df > 1");
    let a11 = chi1.sample(rng).sqrt();
    let a21: f64 = StandardNormal.sample(rng);
    let a22 = chi2.sample(rng).sqrt();

    // L = Uᵀ for the upper Cholesky factor U of sigma.
    let u = sigma.cholesky_upper();
    let (l11, l21, l22) = (u.u11, u.u12, u.u22);

    // B = L·A, W = B·Bᵀ.
    let b11 = l11 * a11;
    let b21 = l21 * a11 + l22 * a21;
    let b22 = l22 * a22;
    let w11 = b11 * b11;
    let w12 = b11 * b21;
    let w22 = b21 * b21 + b22 * b22;
    SpdMatrix::new(w11, w12, w22)
        .map_err(|_| SamplingError::InvalidMixture("degenerate Wishart draw".into()))
}

/// The convolution protocol: for j = 1..n draw Z_j ~ W_{noise}(I₂), then
/// X_j from the mixing law, and emit Y_j = X_j ∘ Z_j. Deterministic for a
/// fixed seed.
pub fn run_protocol(cfg: &ProtocolConfig) -> Result<Vec<SpdMatrix>, SamplingError> {
    cfg.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let identity = SpdMatrix::identity();
    let mut out = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let z = sample_wishart(cfg.noise_df, &identity, &mut rng)?;
        let x = cfg.mixing.sample(&mut rng)?;
        out.push(x.convolve(&z));
    }
    Ok(out)
}

/// Eigenvalue pairs of a dataset, sorted per observation.
pub fn eigenvalues(data: &[SpdMatrix]) -> Vec<EigenPair> {
    data.iter().map(|y| y.eigen_sorted()).collect()
}

/// Mixing eigenvalue density of W_N(c·I₂) in f^D units (relative to d*a):
/// the standard Wishart density evaluated at diag(a)/c.
pub fn scaled_wishart_fd_density(n_df: f64, scale: f64, a1: f64, a2: f64) -> f64 {
    let log_norm = n_df * 2.0f64.ln() + multivariate_gamma_log_real(0.5 * n_df);
    (0.5 * n_df * (a1 * a2 / (scale * scale)).ln() - 0.5 * (a1 + a2) / scale - log_norm).exp()
}

/// Gaussian product-kernel density estimate (Lebesgue units) of eigenvalue
/// draws, evaluated on a rectangular grid. Bandwidths follow the 2-d
/// Silverman rule h_k = sd_k · n^{−1/6}; evaluation runs over a binned
/// histogram with a separable kernel.
pub fn kde_lebesgue_values(
    draws: &[(f64, f64)],
    a1_nodes: &[f64],
    a2_nodes: &[f64],
) -> Vec<f64> {
    assert!(!draws.is_empty(), "KDE needs draws");
    let n = draws.len() as f64;
    let (mean1, mean2) = draws
        .iter()
        .fold((0.0, 0.0), |acc, d| (acc.0 + d.0, acc.1 + d.1));
    let (mean1, mean2) = (mean1 / n, mean2 / n);
    let (var1, var2) = draws.iter().fold((0.0, 0.0), |acc, d| {
        (acc.0 + (d.0 - mean1).powi(2), acc.1 + (d.1 - mean2).powi(2))
    });
    let h1 = (var1 / (n - 1.0)).sqrt() * n.powf(-1.0 / 6.0);
    let h2 = (var2 / (n - 1.0)).sqrt() * n.powf(-1.0 / 6.0);

    const BINS: usize = 512;
    let (mut lo1, mut hi1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut lo2, mut hi2) = (f64::INFINITY, f64::NEG_INFINITY);
    for d in draws {
        lo1 = lo1.min(d.0);
        hi1 = hi1.max(d.0);
        lo2 = lo2.min(d.1);
        hi2 = hi2.max(d.1);
    }
    let w1 = (hi1 - lo1).max(1e-12) / BINS as f64;
    let w2 = (hi2 - lo2).max(1e-12) / BINS as f64;
    let mut counts = vec![0.0f64; BINS * BINS];
    for d in draws {
        let i = (((d.0 - lo1) / w1) as usize).min(BINS - 1);
        let j = (((d.1 - lo2) / w2) as usize).min(BINS - 1);
        counts[i * BINS + j] += 1.0;
    }

    let kernel_row = |nodes: &[f64], lo: f64, w: f64, h: f64| -> Vec<Vec<f64>> {
        nodes
            .iter()
            .map(|&x| {
                (0..BINS)
                    .map(|b| {
                        let center = lo + (b as f64 + 0.5) * w;
                        let z = (x - center) / h;
                        if z.abs() > 6.0 {
                            0.0
                        } else {
                            (-0.5 * z * z).exp() / (h * (2.0 * std::f64::consts::PI).sqrt())
                        }
                    })
                    .collect()
            })
            .collect()
    };
    let k1 = kernel_row(a1_nodes, lo1, w1, h1);
    let k2 = kernel_row(a2_nodes, lo2, w2, h2);

    // density(x, y) = (1/n) Σ_b counts_b K1(x − b1) K2(y − b2): contract the
    // second bin axis first.
    let partial: Vec<Vec<f64>> = k2
        .iter()
        .map(|row2| {
            (0..BINS)
                .map(|bi| {
                    let mut acc = 0.0;
                    for (bj, k) in row2.iter().enumerate() {
                        if *k != 0.0 {
                            acc += counts[bi * BINS + bj] * k;
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect();

    let mut out = vec![0.0; a1_nodes.len() * a2_nodes.len()];
    for (i, row1) in k1.iter().enumerate() {
        for (j, part) in partial.iter().enumerate() {
            let mut acc = 0.0;
            for (bi, k) in row1.iter().enumerate() {
                if *k != 0.0 {
                    acc += k * part[bi];
                }
            }
            out[i * a2_nodes.len() + j] = acc / n;
        }
    }
    out
}

/// Reference mixing eigenvalue density in f^D units on a grid, from
/// `n_draws` direct draws of the mixing law smoothed by [`kde_lebesgue_values`]
/// and divided by the d*a measure density. Cells outside the ordered chamber
/// are zero.
pub fn reference_density_grid(
    mixing: &MixtureSpec,
    n_draws: usize,
    seed: u64,
    a1_nodes: Vec<f64>,
    a2_nodes: Vec<f64>,
) -> Result<DensityGrid, SamplingError> {
    let draws = mixing_eigen_draws(mixing, n_draws, seed)?;
    let lebesgue = kde_lebesgue_values(&draws, &a1_nodes, &a2_nodes);
    let mut grid = DensityGrid::zeros(a1_nodes, a2_nodes)?;
    let n2 = grid.a2_nodes.len();
    for i in 0..grid.a1_nodes.len() {
        for j in 0..n2 {
            let m = eigen_measure_density(grid.a1_nodes[i], grid.a2_nodes[j]);
            grid.values[i * n2 + j] = if m > 0.0 { lebesgue[i * n2 + j] / m } else { 0.0 };
        }
    }
    Ok(grid)
}

/// Ordered eigenvalue pairs of direct draws from the mixing law.
pub fn mixing_eigen_draws(
    mixing: &MixtureSpec,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>, SamplingError> {
    mixing.validate()?;
    let chunk = 65_536;
    let chunks = n_draws.div_ceil(chunk);
    let all: Result<Vec<Vec<(f64, f64)>>, SamplingError> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, c as u64));
            let m = chunk.min(n_draws - c * chunk);
            let mut out = Vec::with_capacity(m);
            for _ in 0..m {
                let x = mixing.sample(&mut rng)?;
                let e = x.eigen_sorted();
                out.push((e.a1(), e.a2()));
            }
            Ok(out)
        })
        .collect();
    Ok(all?.into_iter().flatten().collect())
}

/// One cell of a replicate study: a mixing law crossed with sample sizes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyCell {
    pub label: String,
    pub mixing: MixtureSpec,
    pub n_values: Vec<usize>,
}

/// Configuration of a replicate study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub cells: Vec<StudyCell>,
    pub replicates: usize,
    pub noise_df: f64,
    pub cutoff: CutoffChoice,
    pub quad: QuadratureSpec,
    pub amplification_cap: f64,
    /// Per-axis node count of the (cell-fixed) evaluation grid.
    pub grid_nodes_per_axis: usize,
    /// Direct mixing draws behind each cell's reference density.
    pub reference_draws: usize,
    /// Mode-count floor as a fraction of the surface maximum.
    pub mode_floor_frac: f64,
    pub seed: u64,
}

impl StudyConfig {
    /// The reference-experiment defaults: selection over the standard T grid,
    /// 64-node spectral grid, 40×40 evaluation grid, 10⁶ reference draws.
    pub fn reference(cells: Vec<StudyCell>, replicates: usize, seed: u64) -> Self {
        Self {
            cells,
            replicates,
            noise_df: 20.0,
            cutoff: CutoffChoice::Select {
                t_grid: CutoffChoice::default_selection_grid(),
            },
            quad: QuadratureSpec::default(),
            amplification_cap: 1e12,
            grid_nodes_per_axis: 40,
            reference_draws: 1_000_000,
            mode_floor_frac: 0.05,
            seed,
        }
    }
}

/// One replicate's outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyRow {
    pub cell: String,
    pub n: usize,
    pub replicate: usize,
    pub ise: f64,
    pub selected_t: f64,
    pub local_maxima: usize,
}

/// Per-(cell, n) summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub n: usize,
    pub replicates: usize,
    pub median_ise: f64,
    pub q1_ise: f64,
    pub q3_ise: f64,
    /// Fraction of replicates whose estimate shows at least two local maxima.
    pub multimodal_share: f64,
}

/// Full study output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
}

impl StudyTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cell,n,replicate,ise,selected_t,local_maxima\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.cell, r.n, r.replicate, r.ise, r.selected_t, r.local_maxima
            ));
        }
        out
    }

    pub fn summaries(&self) -> Vec<CellSummary> {
        let mut keys: Vec<(String, usize)> = Vec::new();
        for r in &self.rows {
            if !keys.iter().any(|k| k.0 == r.cell && k.1 == r.n) {
                keys.push((r.cell.clone(), r.n));
            }
        }
        keys.iter()
            .map(|(cell, n)| {
                let mut ises: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| &r.cell == cell && r.n == *n)
                    .map(|r| r.ise)
                    .collect();
                ises.sort_by(f64::total_cmp);
                let multi = self
                    .rows
                    .iter()
                    .filter(|r| &r.cell == cell && r.n == *n && r.local_maxima >= 2)
                    .count();
                let count = ises.len();
                CellSummary {
                    cell: cell.clone(),
                    n: *n,
                    replicates: count,
                    median_ise: median(&ises),
                    q1_ise: quantile_sorted(&ises, 0.25),
                    q3_ise: quantile_sorted(&ises, 0.75),
                    multimodal_share: multi as f64 / count as f64,
                }
            })
            .collect()
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summaries()).expect("summaries serialize")
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// Runs the full study: per cell, a fixed reference density and evaluation
/// grid are built from direct mixing draws, then `replicates` datasets per
/// sample size are generated, deconvolved (with cutoff selection when
/// configured) and scored by ISE against the reference. Replicates run in
/// parallel over SplitMix-derived seeds; row order is deterministic.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyTable, SamplingError> {
    let mut rows = Vec::new();
    for (cell_idx, cell) in cfg.cells.iter().enumerate() {
        cell.mixing.validate()?;
        // Reference grid: geometric between the 1%/99% quantiles of the
        // reference eigenvalue draws, fixed across replicates.
        let ref_seed = derive_seed(cfg.seed, 0x5eed_0000 + cell_idx as u64);
        let draws = mixing_eigen_draws(&cell.mixing, cfg.reference_draws, ref_seed)?;
        let mut a1s: Vec<f64> = draws.iter().map(|d| d.0).collect();
        let mut a2s: Vec<f64> = draws.iter().map(|d| d.1).collect();
        a1s.sort_by(f64::total_cmp);
        a2s.sort_by(f64::total_cmp);
        let q = |v: &[f64], p: f64| v[(((v.len() - 1) as f64) * p).round() as usize];
        let a1_nodes = geometric_nodes(q(&a1s, 0.01), q(&a1s, 0.99), cfg.grid_nodes_per_axis);
        let a2_nodes = geometric_nodes(q(&a2s, 0.01), q(&a2s, 0.99), cfg.grid_nodes_per_axis);

        let lebesgue = kde_lebesgue_values(&draws, &a1_nodes, &a2_nodes);
        let mut reference = DensityGrid::zeros(a1_nodes.clone(), a2_nodes.clone())?;
        for i in 0..a1_nodes.len() {
            for j in 0..a2_nodes.len() {
                let m = eigen_measure_density(a1_nodes[i], a2_nodes[j]);
                reference.values[i * a2_nodes.len() + j] = if m > 0.0 {
                    lebesgue[i * a2_nodes.len() + j] / m
                } else {
                    0.0
                };
            }
        }

        for (n_idx, &n) in cell.n_values.iter().enumerate() {
            let est_cfg = EstimatorConfig {
                noise_df: cfg.noise_df,
                cutoff: cfg.cutoff.clone(),
                quad: cfg.quad,
                amplification_cap: cfg.amplification_cap,
                grid: GridSpec::Explicit {
                    a1_nodes: a1_nodes.clone(),
                    a2_nodes: a2_nodes.clone(),
                },
            };
            let cell_tag = ((cell_idx as u64) << 16) | (n_idx as u64);
            let reps: Result<Vec<StudyRow>, SamplingError> = (0..cfg.replicates)
                .into_par_iter()
                .map(|rep| {
                    let seed =
                        derive_seed(cfg.seed, (cell_tag << 32) | (rep as u64 + 1));
                    let data = run_protocol(&ProtocolConfig {
                        n,
                        noise_df: cfg.noise_df,
                        mixing: cell.mixing.clone(),
                        seed,
                    })?;
                    let eigs = eigenvalues(&data);
                    let out = deconvolve(&eigs, &est_cfg)?;
                    let ise = out.grid.mise_against(&reference)?;
                    Ok(StudyRow {
                        cell: cell.label.clone(),
                        n,
                        replicate: rep,
                        ise,
                        selected_t: out.t,
                        local_maxima: out.grid.count_local_maxima(cfg.mode_floor_frac),
                    })
                })
                .collect();
            rows.extend(reps?);
        }
    }
    Ok(StudyTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn wishart_rejects_small_df() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        assert!(matches!(
            sample_wishart(1.0, &SpdMatrix::identity(), &mut rng),
            Err(SamplingError::InvalidDegreesOfFreedom(_))
        ));
    }

    #[test]
    fn wishart_mean_matches_n_sigma() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let n_df = 20.0;
        let k = 100_000;
        let mut m = [0.0f64; 3];
        for _ in 0..k {
            let w = sample_wishart(n_df, &SpdMatrix::identity(), &mut rng).unwrap();
            assert!(w.det() > 0.0);
            m[0] += w.x11();
            m[1] += w.x12();
            m[2] += w.x22();
        }
        for v in &mut m {
            *v /= k as f64;
        }
        // Var(W11) = 2N, Var(W12) = N at sigma = I.
        let se_diag = (2.0 * n_df / k as f64).sqrt();
        let se_off = (n_df / k as f64).sqrt();
        assert!((m[0] - n_df).abs() < 4.0 * se_diag, "m11 = {}", m[0]);
        assert!((m[1]).abs() < 4.0 * se_off, "m12 = {}", m[1]);
        assert!((m[2] - n_df).abs() < 4.0 * se_diag, "m22 = {}", m[2]);
    }

    #[test]
    fn wishart_mean_with_anisotropic_sigma() {
        let sigma = SpdMatrix::new(2.0, 0.6, 1.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let n_df = 7.5;
        let k = 100_000;
        let mut m = [0.0f64; 3];
        for _ in 0..k {
            let w = sample_wishart(n_df, &sigma, &mut rng).unwrap();
            m[0] += w.x11();
            m[1] += w.x12();
            m[2] += w.x22();
        }
        for v in &mut m {
            *v /= k as f64;
        }
        // Var(W_ij) = N (σ_ij² + σ_ii σ_jj).
        let tol = |sij: f64, sii: f64, sjj: f64| {
            4.0 * (n_df * (sij * sij + sii * sjj) / k as f64).sqrt()
        };
        assert!((m[0] - n_df * 2.0).abs() < tol(2.0, 2.0, 2.0));
        assert!((m[1] - n_df * 0.6).abs() < tol(0.6, 2.0, 1.0));
        assert!((m[2] - n_df * 1.0).abs() < tol(1.0, 1.0, 1.0));
    }

    /// Two-sample Kolmogorov–Smirnov p-value (asymptotic).
    fn ks_two_sample(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (n, m) = (a.len(), b.len());
        let (mut i, mut j) = (0usize, 0usize);
        let mut d: f64 = 0.0;
        while i < n && j < m {
            let (fa, fb) = (i as f64 / n as f64, j as f64 / m as f64);
            d = d.max((fa - fb).abs());
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
        let ne = (n as f64 * m as f64) / (n as f64 + m as f64);
        let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
        let mut p = 0.0;
        for k in 1..101 {
            let term = 2.0 * (-1.0f64).powi(k - 1) * (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
            p += term;
        }
        p.clamp(0.0, 1.0)
    }

    #[test]
    fn wishart_scaling_in_distribution() {
        // det of draws at sigma = cI, divided by c², matches det at identity.
        let c = 3.0;
        let k = 10_000;
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let at_scaled: Vec<f64> = (0..k)
            .map(|_| {
                sample_wishart(9.0, &SpdMatrix::scaled_identity(c).unwrap(), &mut rng)
                    .unwrap()
                    .det()
                    / (c * c)
            })
            .collect();
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let at_identity: Vec<f64> = (0..k)
            .map(|_| sample_wishart(9.0, &SpdMatrix::identity(), &mut rng).unwrap().det())
            .collect();
        let p = ks_two_sample(at_scaled, at_identity);
        assert!(p > 0.01, "KS p-value {p}");
    }

    #[test]
    fn protocol_is_deterministic() {
        let cfg = ProtocolConfig {
            n: 50,
            noise_df: 20.0,
            mixing: MixtureSpec::unimodal_reference(),
            seed: 77,
        };
        let a = run_protocol(&cfg).unwrap();
        let b = run_protocol(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mixture_validation() {
        let bad = MixtureSpec {
            components: vec![MixtureComponent {
                weight: 0.7,
                df: Some(15.0),
                sigma: SpdMatrix::identity(),
            }],
        };
        assert!(bad.validate().is_err());

        let bad_df = MixtureSpec {
            components: vec![MixtureComponent {
                weight: 1.0,
                df: Some(0.5),
                sigma: SpdMatrix::identity(),
            }],
        };
        assert!(bad_df.validate().is_err());

        assert!(MixtureSpec::bimodal_reference().validate().is_ok());
    }

    #[test]
    fn degenerate_mode_reduces_to_pure_wishart() {
        // X fixed at sigma0 makes Y ~ W_N(sigma0): check E[Y] = N sigma0 and
        // the transform identity E[conj h_s(Y)] = conj(h_s(sigma0)) ŵ_N(s).
        use crate::transform::{spherical_function, wishart_transform, SpectralPoint};
        use num_complex::Complex64;

        let sigma0 = SpdMatrix::new(2.0, 0.6, 1.0).unwrap();
        let n_df = 20.0;
        let cfg = ProtocolConfig {
            n: 5000,
            noise_df: n_df,
            mixing: MixtureSpec {
                components: vec![MixtureComponent {
                    weight: 1.0,
                    df: None,
                    sigma: sigma0,
                }],
            },
            seed: 99,
        };
        let data = run_protocol(&cfg).unwrap();

        let k = data.len() as f64;
        let mean = data.iter().fold([0.0f64; 3], |acc, y| {
            [acc[0] + y.x11(), acc[1] + y.x12(), acc[2] + y.x22()]
        });
        let mean = [mean[0] / k, mean[1] / k, mean[2] / k];
        let tol = |sij: f64, sii: f64, sjj: f64| {
            4.0 * (n_df * (sij * sij + sii * sjj) / k).sqrt()
        };
        assert!((mean[0] - n_df * 2.0).abs() < tol(2.0, 2.0, 2.0));
        assert!((mean[1] - n_df * 0.6).abs() < tol(0.6, 2.0, 1.0));
        assert!((mean[2] - n_df * 1.0).abs() < tol(1.0, 1.0, 1.0));

        let eigs = eigenvalues(&data);
        for s in [SpectralPoint::new(0.8, 0.5), SpectralPoint::new(2.0, 1.5)] {
            let mut sum = Complex64::new(0.0, 0.0);
            let mut terms = Vec::with_capacity(eigs.len());
            for e in &eigs {
                let h = spherical_function(&s, e).unwrap().conj();
                sum += h;
                terms.push(h);
            }
            let mean_t = sum / k;
            let mut var = 0.0;
            for t in terms {
                var += (t - mean_t).norm_sqr();
            }
            let se = (var / (k * (k - 1.0))).sqrt();
            let expect = spherical_function(&s, &sigma0.eigen_sorted()).unwrap().conj()
                * wishart_transform(&s, n_df).unwrap();
            assert!(
                (mean_t - expect).norm() <= 4.0 * se,
                "transform mismatch at {s:?}: {mean_t} vs {expect} (4se = {})",
                4.0 * se
            );
        }
    }

    #[test]
    fn closed_form_fd_density_normalizes() {
        // W15(2I): f^D integrates to 1 against the grid weights.
        let grid = DensityGrid::zeros(
            geometric_nodes(0.5, 220.0, 260),
            geometric_nodes(0.5, 220.0, 260),
        )
        .unwrap();
        let spec = MixtureSpec::unimodal_reference();
        let mut total = 0.0;
        for (i, &a1) in grid.a1_nodes.iter().enumerate() {
            for (j, &a2) in grid.a2_nodes.iter().enumerate() {
                total += spec.fd_density(a1, a2).unwrap() * grid.weight(i, j);
            }
        }
        assert_relative_eq!(total, 1.0, max_relative = 3e-3);
    }

    #[test]
    fn kde_reference_matches_closed_form_interior() {
        let spec = MixtureSpec::unimodal_reference();
        let a1_nodes = geometric_nodes(20.0, 60.0, 8);
        let a2_nodes = geometric_nodes(8.0, 25.0, 8);
        let reference =
            reference_density_grid(&spec, 200_000, 1234, a1_nodes.clone(), a2_nodes.clone())
                .unwrap();
        // KDE bias concentrates in thin tails; check the bulk of the density.
        let mut max_truth = 0.0f64;
        for &a1 in &a1_nodes {
            for &a2 in &a2_nodes {
                if a1 > a2 {
                    max_truth = max_truth.max(spec.fd_density(a1, a2).unwrap());
                }
            }
        }
        let mut checked = 0;
        for (i, &a1) in a1_nodes.iter().enumerate() {
            for (j, &a2) in a2_nodes.iter().enumerate() {
                if a1 <= 1.3 * a2 {
                    continue; // skip the near-diagonal band
                }
                let truth = spec.fd_density(a1, a2).unwrap();
                if truth < 0.25 * max_truth {
                    continue;
                }
                let got = reference.value(i, j);
                assert!(
                    (got - truth).abs() <= 0.1 * truth,
                    "KDE off at ({a1},{a2}): {got} vs {truth}"
                );
                checked += 1;
            }
        }
        assert!(checked >= 5, "too few bulk cells checked: {checked}");
    }

    #[test]
    fn mode_count_oracle_on_reference_densities() {
        // The closed-form mixing densities have one and two summits; the
        // grid mode counter must see exactly that.
        let grid_nodes = geometric_nodes(8.0, 220.0, 40);
        let fill = |spec: &MixtureSpec| -> DensityGrid {
            let mut g = DensityGrid::zeros(grid_nodes.clone(), grid_nodes.clone()).unwrap();
            let n2 = g.a2_nodes.len();
            for i in 0..g.a1_nodes.len() {
                for j in 0..n2 {
                    if g.a1_nodes[i] > g.a2_nodes[j] {
                        g.values[i * n2 + j] =
                            spec.fd_density(g.a1_nodes[i], g.a2_nodes[j]).unwrap();
                    }
                }
            }
            g
        };
        let uni = fill(&MixtureSpec::unimodal_reference());
        assert_eq!(uni.count_local_maxima(0.05), 1);
        let bi = fill(&MixtureSpec::bimodal_reference());
        assert_eq!(bi.count_local_maxima(0.05), 2);
    }

    #[test]
    fn study_single_cell_single_replicate() {
        let cfg = StudyConfig {
            cells: vec![StudyCell {
                label: "unimodal".into(),
                mixing: MixtureSpec::unimodal_reference(),
                n_values: vec![100],
            }],
            replicates: 1,
            noise_df: 20.0,
            cutoff: CutoffChoice::Fixed(10.0),
            quad: QuadratureSpec::Grid { nodes_per_axis: 24 },
            amplification_cap: 1e12,
            grid_nodes_per_axis: 16,
            reference_draws: 20_000,
            mode_floor_frac: 0.05,
            seed: 4242,
        };
        let table = run_study(&cfg).unwrap();
        assert_eq!(table.rows.len(), 1);
        let row = &table.rows[0];
        assert_eq!(row.cell, "unimodal");
        assert_eq!(row.n, 100);
        assert!(row.ise.is_finite() && row.ise >= 0.0);
        let csv = table.to_csv();
        assert!(csv.starts_with("cell,n,replicate,ise,selected_t,local_maxima\n"));
        assert_eq!(csv.trim_end().lines().count(), 2);
        let summaries = table.summaries();
        assert_eq!(summaries.len(), 1);
        assert_eq!(summaries[0].replicates, 1);
    }
}
