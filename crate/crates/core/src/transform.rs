//! Spherical-transform machinery for the rank-two cone: power and spherical
//! functions on the critical line, the closed-form Wishart transform, the
//! empirical transform of a sample, a numerical forward transform used as an
//! oracle, and spectral-cutoff inversion.
//!
//! Spectral points are parametrized by two real frequencies (b₁, β₂), i.e.
//! s = (−½ + i b₁, ¼ + i b₂) with β₂ = b₁ + 2 b₂. In these coordinates the
//! Laplacian eigenvalue is λ_s = ½(b₁² + β₂² + ¼), the spherical function in
//! polar coordinates is h_s(u) = P_{−1/2+ib₁}(cosh u₁) e^{iβ₂u₂}, and the
//! inversion measure factorizes as κ₂ · b₁ tanh(πb₁) db₁ dβ₂ over b₁ ≥ 0,
//! β₂ ∈ ℝ against the spatial measure 4π sinh u₁ du₁ du₂.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quad::{self, QuadError, QuadTol};
use crate::spd::{EigenPair, PolarPoint, SpdMatrix};
use crate::specfn::{self, SpecFnError};

/// Cutoffs must exceed the bottom of the Laplace spectrum, λ_min = 1/8.
pub const LAMBDA_MIN: f64 = 0.125;

/// Transform-layer failures.
#[derive(Debug, Clone, Error)]
pub enum TransformError {
    /// The empirical transform needs at least one observation.
    #[error("empirical transform of an empty sample")]
    EmptySample,

    /// Spectral cutoffs must satisfy T > 1/8.
    #[error("cutoff T = {0} must exceed 1/8")]
    InvalidCutoff(f64),

    /// Degrees of freedom must exceed 1/2 for the Wishart transform.
    #[error("degrees of freedom N = {0} must exceed 1/2")]
    InvalidDegreesOfFreedom(f64),

    /// Quadrature node counts must be positive.
    #[error("quadrature specification needs a positive node/sample count")]
    EmptyQuadrature,

    #[error(transparent)]
    SpecFn(#[from] SpecFnError),

    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

/// A point s on the critical line, carried as the frequency pair (b₁, β₂)
/// together with its Laplacian eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralPoint {
    b1: f64,
    beta2: f64,
    lambda: f64,
}

impl SpectralPoint {
    pub fn new(b1: f64, beta2: f64) -> Self {
        Self {
            b1,
            beta2,
            lambda: 0.5 * (b1 * b1 + beta2 * beta2 + 0.25),
        }
    }

    pub fn b1(&self) -> f64 {
        self.b1
    }

    pub fn beta2(&self) -> f64 {
        self.beta2
    }

    /// Laplacian eigenvalue λ_s = ½(b₁² + β₂² + ¼) > 0.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// First coordinate s₁ = −½ + i b₁.
    pub fn s1(&self) -> Complex64 {
        Complex64::new(-0.5, self.b1)
    }

    /// Second coordinate s₂ = ¼ + i b₂ with b₂ = (β₂ − b₁)/2.
    pub fn s2(&self) -> Complex64 {
        Complex64::new(0.25, 0.5 * (self.beta2 - self.b1))
    }
}

/// The spectral cutoff region C²(ρ, T) = {s : λ_s < T}, a disk
/// b₁² + β₂² < 2T − ¼ in frequency coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffRegion {
    t: f64,
}

impl CutoffRegion {
    pub fn new(t: f64) -> Result<Self, TransformError> {
        if !(t > LAMBDA_MIN) {
            return Err(TransformError::InvalidCutoff(t));
        }
        Ok(Self { t })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    /// Radius of the frequency disk, √(2T − ¼).
    pub fn radius(&self) -> f64 {
        (2.0 * self.t - 0.25).sqrt()
    }

    pub fn contains(&self, s: &SpectralPoint) -> bool {
        s.lambda() < self.t
    }
}

/// Integration scheme over the spectral disk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum QuadratureSpec {
    /// Tensor Gauss–Legendre grid on the bounding square of the disk, with an
    /// indicator for λ_s < T. Deterministic; the default.
    Grid { nodes_per_axis: usize },
    /// Uniform Monte Carlo on the disk with the Plancherel weight as
    /// importance factor. Deterministic for a fixed seed.
    MonteCarlo { n_samples: usize, seed: u64 },
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec::Grid { nodes_per_axis: 64 }
    }
}

/// Power function p_s(y) = |y₁|^{s₁} |y₂|^{s₂} on the principal minors.
pub fn power_function(s: &SpectralPoint, y: &SpdMatrix) -> Complex64 {
    let (m1, m2) = y.principal_minors();
    (s.s1() * m1.ln() + s.s2() * m2.ln()).exp()
}

/// Zonal spherical function h_s evaluated at an eigenvalue pair:
/// h_s(a) = P_{−1/2+ib₁}(cosh u₁) · e^{iβ₂u₂} in polar coordinates.
pub fn spherical_function(s: &SpectralPoint, e: &EigenPair) -> Result<Complex64, SpecFnError> {
    let u = e.to_polar();
    let radial = specfn::conical_legendre(s.b1(), u.u1.cosh())?;
    Ok(Complex64::from_polar(1.0, s.beta2() * u.u2) * radial)
}

/// Closed-form zonal spherical transform of the standard Wishart density with
/// N degrees of freedom:
///
/// ```text
/// ŵ(s) = Γ₂(s₁, −(s₁+s₂)+N/2) / Γ₂(0, N/2) · 2^{−(s₁+2s₂)}
/// ```
///
/// where 2^{−(s₁+2s₂)} = h_s(½I₂) has unit modulus on the critical line.
pub fn wishart_transform(s: &SpectralPoint, n_df: f64) -> Result<Complex64, TransformError> {
    if !(n_df > 0.5) {
        return Err(TransformError::InvalidDegreesOfFreedom(n_df));
    }
    let s1 = s.s1();
    let s2 = s.s2();
    let num = specfn::multivariate_gamma_log(s1, Complex64::new(0.5 * n_df, 0.0) - s1 - s2)?;
    let den = specfn::multivariate_gamma_log_real(0.5 * n_df);
    let phase = Complex64::from_polar(1.0, -s.beta2() * 2.0f64.ln());
    Ok((num - den).exp() * phase)
}

/// Empirical transform r̂_n(s) = (1/n) Σ_j conj(h_s(E_j)) of a sample of
/// eigenvalue pairs. Its modulus never exceeds 1.
pub fn empirical_transform(
    eigs: &[EigenPair],
    s: &SpectralPoint,
) -> Result<Complex64, TransformError> {
    if eigs.is_empty() {
        return Err(TransformError::EmptySample);
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for e in eigs {
        let u = e.to_polar();
        let radial = specfn::conical_legendre(s.b1(), u.u1.cosh())?;
        acc += Complex64::from_polar(radial, -s.beta2() * u.u2);
    }
    Ok(acc / eigs.len() as f64)
}

/// Effective support box for numerical forward transforms: u₁ ∈ [0, u1_max],
/// u₂ ∈ [u2_min, u2_max].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SupportBox {
    pub u1_max: f64,
    pub u2_min: f64,
    pub u2_max: f64,
}

/// Numerical zonal transform of a K-invariant density given in polar
/// coordinates:
///
/// ```text
/// f̂(s) = ∫∫ f(u) · P_{−1/2+ib₁}(cosh u₁) e^{−iβ₂u₂} · 4π sinh u₁ du₁ du₂
/// ```
///
/// by nested adaptive quadrature over the supplied support box. This is the
/// oracle against which the closed-form Wishart transform is checked.
pub fn forward_transform_numeric<F>(
    density: F,
    support: &SupportBox,
    s: &SpectralPoint,
) -> Result<Complex64, TransformError>
where
    F: Fn(PolarPoint) -> f64,
{
    let tol = QuadTol::default();
    let inner_failure = std::cell::Cell::new(None::<QuadError>);
    let specfn_failure = std::cell::Cell::new(None::<SpecFnError>);
    let beta2 = s.beta2();
    let b1 = s.b1();

    let outer = quad::integrate(
        |u1: f64| {
            let inner = quad::integrate(
                |u2: f64| {
                    let f = density(PolarPoint::new(u1.max(0.0), u2));
                    Complex64::from_polar(f, -beta2 * u2)
                },
                support.u2_min,
                support.u2_max,
                tol,
            );
            let inner = match inner {
                Ok(v) => v,
                Err(e) => {
                    inner_failure.set(Some(e));
                    Complex64::new(0.0, 0.0)
                }
            };
            let radial = match specfn::conical_legendre(b1, u1.cosh()) {
                Ok(v) => v,
                Err(e) => {
                    specfn_failure.set(Some(e));
                    0.0
                }
            };
            inner * radial * 4.0 * std::f64::consts::PI * u1.sinh()
        },
        0.0,
        support.u1_max,
        tol,
    )?;

    if let Some(e) = specfn_failure.take() {
        return Err(e.into());
    }
    if let Some(e) = inner_failure.take() {
        return Err(e.into());
    }
    Ok(outer)
}

/// One quadrature node on the spectral disk. The weight folds the rule
/// weight, the Plancherel density κ₂ b₁ tanh(πb₁), and the β₂-symmetry
/// factor 2 (integrands are even in β₂ for conjugate-symmetric spectra).
#[derive(Debug, Clone, Copy)]
pub struct SpectralNode {
    pub point: SpectralPoint,
    pub weight: f64,
}

/// Spectral quadrature nodes grouped by distinct b₁, so that per-b₁ conical
/// evaluations are shared across a row.
#[derive(Debug, Clone)]
pub struct SpectralNodes {
    rows: Vec<SpectralRow>,
    t: f64,
}

#[derive(Debug, Clone)]
pub struct SpectralRow {
    pub b1: f64,
    pub nodes: Vec<SpectralNode>,
}

impl SpectralNodes {
    /// Builds nodes for a cutoff region under the given scheme. Nodes outside
    /// the disk (grid mode’s bounding square corners) are dropped here; their
    /// λ values are retained so smaller cutoffs can reuse the same nodes via
    /// [`SpectralNodes::rows_within`].
    pub fn build(region: &CutoffRegion, spec: &QuadratureSpec) -> Result<Self, TransformError> {
        let radius = region.radius();
        let mut rows = Vec::new();
        match *spec {
            QuadratureSpec::Grid { nodes_per_axis } => {
                if nodes_per_axis == 0 {
                    return Err(TransformError::EmptyQuadrature);
                }
                let (b1s, wb1) = quad::gauss_legendre(nodes_per_axis, 0.0, radius);
                let (beta2s, wbeta2) = quad::gauss_legendre(nodes_per_axis, 0.0, radius);
                for (b1, w1) in b1s.iter().zip(&wb1) {
                    let spectral = specfn::plancherel_weight(*b1);
                    let mut nodes = Vec::new();
                    for (beta2, w2) in beta2s.iter().zip(&wbeta2) {
                        let point = SpectralPoint::new(*b1, *beta2);
                        if region.contains(&point) {
                            nodes.push(SpectralNode {
                                point,
                                weight: w1 * spectral * w2 * 2.0,
                            });
                        }
                    }
                    if !nodes.is_empty() {
                        rows.push(SpectralRow { b1: *b1, nodes });
                    }
                }
            }
            QuadratureSpec::MonteCarlo { n_samples, seed } => {
                if n_samples == 0 {
                    return Err(TransformError::EmptyQuadrature);
                }
                let mut rng = ChaCha12Rng::seed_from_u64(seed);
                let quarter_area = 0.25 * std::f64::consts::PI * radius * radius;
                let per_sample = quarter_area / n_samples as f64;
                for _ in 0..n_samples {
                    let r = radius * rng.random::<f64>().sqrt();
                    let phi = std::f64::consts::FRAC_PI_2 * rng.random::<f64>();
                    let b1 = r * phi.cos();
                    let beta2 = r * phi.sin();
                    let point = SpectralPoint::new(b1, beta2);
                    rows.push(SpectralRow {
                        b1,
                        nodes: vec![SpectralNode {
                            point,
                            weight: per_sample * specfn::plancherel_weight(b1) * 2.0,
                        }],
                    });
                }
            }
        }
        Ok(Self { rows, t: region.t() })
    }

    pub fn rows(&self) -> &[SpectralRow] {
        &self.rows
    }

    /// Rows filtered to nodes with λ_s < t (t no larger than the build-time
    /// cutoff), for sweeping a family of nested cutoffs over shared nodes.
    pub fn rows_within(&self, t: f64) -> impl Iterator<Item = (f64, Vec<&SpectralNode>)> + '_ {
        self.rows.iter().filter_map(move |row| {
            let nodes: Vec<&SpectralNode> = row
                .nodes
                .iter()
                .filter(|n| n.point.lambda() < t)
                .collect();
            if nodes.is_empty() {
                None
            } else {
                Some((row.b1, nodes))
            }
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn node_count(&self) -> usize {
        self.rows.iter().map(|r| r.nodes.len()).sum()
    }
}

/// Empirical sums of a sample over one spectral row (shared b₁).
#[derive(Debug, Clone)]
pub struct EmpiricalRow {
    pub b1: f64,
    pub nodes: Vec<EmpiricalNode>,
}

/// Per-node sums: S = Σ_j conj(h_s(E_j)) and Q = Σ_j |h_s(E_j)|², together
/// with the node's quadrature weight. The empirical transform is S/n.
#[derive(Debug, Clone, Copy)]
pub struct EmpiricalNode {
    pub point: SpectralPoint,
    pub weight: f64,
    pub s_sum: Complex64,
    pub q_sum: f64,
}

/// Batched empirical transform over a spectral node set: conical evaluations
/// are computed once per (row, observation) and shared across the row's β₂
/// nodes. Rows evaluate in parallel; ordering is deterministic.
pub fn empirical_sums(
    nodes: &SpectralNodes,
    eigs: &[EigenPair],
) -> Result<Vec<EmpiricalRow>, TransformError> {
    use rayon::prelude::*;
    if eigs.is_empty() {
        return Err(TransformError::EmptySample);
    }
    let polar: Vec<(f64, f64)> = eigs
        .iter()
        .map(|e| {
            let u = e.to_polar();
            (u.u1.cosh(), u.u2)
        })
        .collect();
    nodes
        .rows()
        .par_iter()
        .map(|row| {
            let radial: Result<Vec<f64>, SpecFnError> = polar
                .iter()
                .map(|(cosh_u1, _)| specfn::conical_legendre(row.b1, *cosh_u1))
                .collect();
            let radial = radial?;
            let mut out = Vec::with_capacity(row.nodes.len());
            for node in &row.nodes {
                let mut s_sum = Complex64::new(0.0, 0.0);
                let mut q_sum = 0.0;
                for ((_, u2), p) in polar.iter().zip(&radial) {
                    s_sum += Complex64::from_polar(*p, -node.point.beta2() * u2);
                    q_sum += p * p;
                }
                out.push(EmpiricalNode {
                    point: node.point,
                    weight: node.weight,
                    s_sum,
                    q_sum,
                });
            }
            Ok(EmpiricalRow {
                b1: row.b1,
                nodes: out,
            })
        })
        .collect()
}

/// Spectral-cutoff inverse transform at an eigenvalue pair:
///
/// ```text
/// ∫_{λ_s < T} Re{ f̂(s) · h_s(a) } d*s
/// ```
///
/// `fhat` must be conjugate-symmetric in β₂ (true for transforms of real
/// K-invariant densities): the integral is evaluated over β₂ ≥ 0 and doubled.
pub fn inverse_transform<F>(
    fhat: F,
    at: &EigenPair,
    region: &CutoffRegion,
    spec: &QuadratureSpec,
) -> Result<f64, TransformError>
where
    F: Fn(&SpectralPoint) -> Result<Complex64, TransformError>,
{
    let nodes = SpectralNodes::build(region, spec)?;
    let u = at.to_polar();
    let cosh_u1 = u.u1.cosh();
    let mut total = 0.0;
    for row in nodes.rows() {
        let radial = specfn::conical_legendre(row.b1, cosh_u1)?;
        for node in &row.nodes {
            let h = Complex64::from_polar(radial, node.point.beta2() * u.u2);
            total += node.weight * (fhat(&node.point)? * h).re;
        }
    }
    Ok(total)
}

/// Captured Plancherel mass ∫_{λ_s<T} |f̂(s)|² d*s over the given nodes.
pub fn plancherel_mass<F>(fhat: F, nodes: &SpectralNodes) -> Result<f64, TransformError>
where
    F: Fn(&SpectralPoint) -> Result<Complex64, TransformError>,
{
    let mut total = 0.0;
    for row in nodes.rows() {
        for node in &row.nodes {
            total += node.weight * fhat(&node.point)?.norm_sqr();
        }
    }
    Ok(total)
}
