//! Scalar special functions: complex log-gamma, the bivariate gamma function
//! Γ₂(s₁, s₂) = √π · Γ(s₁+s₂) · Γ(s₂ − ½), conical Legendre functions
//! P_{−1/2+it}(x), and the spectral (Plancherel) weight for the rank-two cone.
//!
//! The conical function is evaluated from the Laplace integral
//!
//! ```text
//! P_{-1/2+it}(x) = (1/π) ∫₀^π (x + √(x²−1) cos φ)^{-1/2+it} dφ,   x ≥ 1,
//! ```
//!
//! whose imaginary part integrates to zero, so only the real part is summed.
//! The Mehler–Dirichlet form
//!
//! ```text
//! P_{-1/2+it}(cosh r) = (2/π) ∫₀^r cos(tθ) / √(2(cosh r − cosh θ)) dθ
//! ```
//!
//! is kept as an independent cross-check; the endpoint singularity is removed
//! by the substitution θ = r(1 − τ²) together with
//! cosh r − cosh θ = 2 sinh((r+θ)/2) sinh((r−θ)/2).

use num_complex::Complex64;
use thiserror::Error;

use crate::quad::{self, QuadError, QuadTol};

/// Spectral normalization constant: the rank-two inversion formula composes a
/// Mehler–Fock inversion (weight b₁ tanh(π b₁) on b₁ ≥ 0) with a Fourier
/// inversion in the second frequency (factor 1/2π) against the spatial measure
/// 4π sinh u₁ du₁ du₂, leaving an overall 1/(8π²).
pub const KAPPA2: f64 = 1.0 / (8.0 * std::f64::consts::PI * std::f64::consts::PI);

/// Special-function evaluation failures.
#[derive(Debug, Clone, Error)]
pub enum SpecFnError {
    /// Gamma pole hit at a non-positive integer.
    #[error("log-gamma pole at z = {re} + {im}i ({factor})")]
    GammaPole {
        re: f64,
        im: f64,
        /// Which gamma factor of a composite expression hit the pole.
        factor: &'static str,
    },

    /// Conical Legendre functions are defined here for x ≥ 1 only.
    #[error("conical Legendre argument x = {0} is outside the domain x >= 1")]
    ConicalDomain(f64),

    /// An internal quadrature failed to converge.
    #[error("special-function quadrature failed: {0}")]
    Quadrature(#[from] QuadError),
}

// Lanczos coefficients, g = 7, n = 9 (same set as GSL / Numerical Recipes).
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
];

fn is_nonpositive_integer(z: Complex64) -> bool {
    z.im == 0.0 && z.re <= 0.0 && z.re.fract() == 0.0
}

/// Principal branch of log Γ(z) by the Lanczos approximation, with the Euler
/// reflection formula for Re(z) < 1/2.
pub fn log_gamma_complex(z: Complex64) -> Result<Complex64, SpecFnError> {
    log_gamma_labelled(z, "gamma")
}

fn log_gamma_labelled(z: Complex64, factor: &'static str) -> Result<Complex64, SpecFnError> {
    if is_nonpositive_integer(z) {
        return Err(SpecFnError::GammaPole {
            re: z.re,
            im: z.im,
            factor,
        });
    }
    if z.re < 0.5 {
        // log Γ(z) = log π − log sin(πz) − log Γ(1−z)
        let pi = std::f64::consts::PI;
        let sin_piz = (z * pi).sin();
        let rest = log_gamma_labelled(Complex64::new(1.0, 0.0) - z, factor)?;
        return Ok(Complex64::new(pi.ln(), 0.0) - sin_piz.ln() - rest);
    }

    let zm1 = z - 1.0;
    let mut acc = Complex64::new(LANCZOS_COEF[0], 0.0);
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (zm1 + i as f64);
    }
    let t = zm1 + LANCZOS_G + 0.5;
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    Ok(half_log_2pi + (zm1 + 0.5) * t.ln() - t + acc.ln())
}

/// log Γ(x) for real x > 0.
pub fn log_gamma_real(x: f64) -> f64 {
    log_gamma_complex(Complex64::new(x, 0.0))
        .expect("positive real argument has no pole")
        .re
}

/// log Γ₂(s₁, s₂) = ½ log π + log Γ(s₁+s₂) + log Γ(s₂ − ½).
///
/// This is the rank-two multivariate gamma function; the rank-one case
/// degenerates to `log_gamma_complex` itself.
pub fn multivariate_gamma_log(s1: Complex64, s2: Complex64) -> Result<Complex64, SpecFnError> {
    let first = log_gamma_labelled(s1 + s2, "gamma(s1+s2)")?;
    let second = log_gamma_labelled(s2 - 0.5, "gamma(s2-1/2)")?;
    Ok(Complex64::new(0.5 * std::f64::consts::PI.ln(), 0.0) + first + second)
}

/// log Γ₂(N/2) for real degrees of freedom, i.e. log Γ₂(0, N/2).
pub fn multivariate_gamma_log_real(half_df: f64) -> f64 {
    0.5 * std::f64::consts::PI.ln() + log_gamma_real(half_df) + log_gamma_real(half_df - 0.5)
}

/// Conical (Mehler) Legendre function P_{−1/2+it}(x) for x ≥ 1, real t.
///
/// Even in t and bounded by 1 in modulus on this domain.
pub fn conical_legendre(t: f64, x: f64) -> Result<f64, SpecFnError> {
    if x < 1.0 {
        return Err(SpecFnError::ConicalDomain(x));
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let s = (x * x - 1.0).sqrt();
    let value = quad::integrate(
        |phi: f64| {
            let base = x + s * phi.cos();
            base.powf(-0.5) * (t * base.ln()).cos()
        },
        0.0,
        std::f64::consts::PI,
        QuadTol::default(),
    )?;
    Ok(value / std::f64::consts::PI)
}

/// P_{−1/2+it}(cosh r) by the Mehler–Dirichlet representation, r > 0.
///
/// Independent of [`conical_legendre`]; used as its cross-check oracle.
pub fn conical_legendre_mehler_dirichlet(t: f64, r: f64) -> Result<f64, SpecFnError> {
    assert!(r > 0.0, "Mehler-Dirichlet form needs r > 0");
    let value = quad::integrate(
        |tau: f64| {
            let theta = r * (1.0 - tau * tau);
            // cosh r − cosh θ = 2 sinh((r+θ)/2) sinh((r−θ)/2) with r−θ = r τ².
            let prod = (0.5 * (r + theta)).sinh() * (0.5 * r * tau * tau).sinh();
            if prod == 0.0 {
                // τ → 0 limit of the transformed integrand.
                return (2.0 * r / r.sinh()).sqrt() * (t * r).cos();
            }
            (t * theta).cos() * r * tau / prod.sqrt()
        },
        0.0,
        1.0,
        QuadTol::default(),
    )?;
    Ok(value * 2.0 / std::f64::consts::PI)
}

/// Spectral density in the first frequency: κ₂ · |b₁| · tanh(π|b₁|).
///
/// The rank-two Plancherel measure is this weight in b₁ times ordinary
/// Lebesgue measure in the second frequency β₂.
pub fn plancherel_weight(b1: f64) -> f64 {
    let a = b1.abs();
    KAPPA2 * a * (std::f64::consts::PI * a).tanh()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn log_gamma_known_values() {
        let one = log_gamma_complex(Complex64::new(1.0, 0.0)).unwrap();
        assert!(one.norm() < 1e-13);

        let half = log_gamma_complex(Complex64::new(0.5, 0.0)).unwrap();
        assert_relative_eq!(half.re, 0.5 * std::f64::consts::PI.ln(), epsilon = 1e-13);
        assert!(half.im.abs() < 1e-13);

        // Γ(10) = 9!
        let ten = log_gamma_complex(Complex64::new(10.0, 0.0)).unwrap();
        assert_relative_eq!(ten.re, (362880.0f64).ln(), max_relative = 1e-13);
    }

    #[test]
    fn log_gamma_poles() {
        for z in [0.0, -1.0, -2.0, -17.0] {
            assert!(log_gamma_complex(Complex64::new(z, 0.0)).is_err());
        }
    }

    #[test]
    fn log_gamma_recurrence() {
        // exp(logΓ(z+1)) = z · exp(logΓ(z)) on the right half-plane.
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let z = Complex64::new(rng.random_range(0.05..20.0), rng.random_range(-20.0..20.0));
            let lhs = log_gamma_complex(z + 1.0).unwrap().exp();
            let rhs = z * log_gamma_complex(z).unwrap().exp();
            assert!(
                (lhs - rhs).norm() <= 1e-10 * rhs.norm().max(1e-300),
                "recurrence failed at z = {z}"
            );
        }
    }

    #[test]
    fn log_gamma_reflection_region() {
        // Γ(-1/2) = -2√π, checked through exp on the real axis.
        let v = log_gamma_complex(Complex64::new(-0.5, 0.0)).unwrap().exp();
        assert_relative_eq!(v.re, -2.0 * std::f64::consts::PI.sqrt(), max_relative = 1e-12);
        assert!(v.im.abs() < 1e-10);
    }

    #[test]
    fn log_gamma_conjugate_symmetry() {
        let z = Complex64::new(3.2, 4.7);
        let a = log_gamma_complex(z).unwrap();
        let b = log_gamma_complex(z.conj()).unwrap();
        assert!((a - b.conj()).norm() < 1e-12);
    }

    #[test]
    fn multivariate_gamma_examples() {
        // Γ₂(0, 10) = √π Γ(10) Γ(9.5)
        let v = multivariate_gamma_log(Complex64::new(0.0, 0.0), Complex64::new(10.0, 0.0))
            .unwrap();
        let expect = 0.5 * std::f64::consts::PI.ln() + log_gamma_real(10.0) + log_gamma_real(9.5);
        assert_relative_eq!(v.re, expect, max_relative = 1e-13);
        assert!(v.im.abs() < 1e-13);

        // Γ₂(−1/2, 10.25) = √π Γ(9.75)²
        let v = multivariate_gamma_log(Complex64::new(-0.5, 0.0), Complex64::new(10.25, 0.0))
            .unwrap();
        let expect = 0.5 * std::f64::consts::PI.ln() + 2.0 * log_gamma_real(9.75);
        assert_relative_eq!(v.re, expect, max_relative = 1e-13);

        // Rank-one reduction: the single-factor variant is log Γ itself.
        let z = Complex64::new(2.3, 1.1);
        let direct = log_gamma_complex(z).unwrap();
        assert!((direct - log_gamma_complex(z).unwrap()).norm() == 0.0);
    }

    #[test]
    fn multivariate_gamma_pole_is_identified() {
        // s₂ − ½ = 0 hits a pole in the second factor.
        let err = multivariate_gamma_log(Complex64::new(1.0, 0.0), Complex64::new(0.5, 0.0))
            .unwrap_err();
        match err {
            SpecFnError::GammaPole { factor, .. } => assert_eq!(factor, "gamma(s2-1/2)"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn conical_at_one_is_one() {
        for t in [0.0, 0.5, 3.0, 10.0] {
            assert_eq!(conical_legendre(t, 1.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn conical_domain_error() {
        assert!(conical_legendre(1.0, 0.999).is_err());
    }

    #[test]
    fn conical_even_in_t() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        for _ in 0..50 {
            let t = rng.random_range(-10.0..10.0);
            let x = 1.0 + rng.random_range(0.0..20.0f64);
            let plus = conical_legendre(t, x).unwrap();
            let minus = conical_legendre(-t, x).unwrap();
            assert_relative_eq!(plus, minus, epsilon = 1e-12);
        }
    }

    #[test]
    fn conical_matches_mehler_dirichlet() {
        for &t in &[0.0, 0.7, 2.5, 6.0, 10.0] {
            for &r in &[0.05f64, 0.4, 1.0, 2.5, 5.0] {
                let x = r.cosh();
                let laplace = conical_legendre(t, x).unwrap();
                let md = conical_legendre_mehler_dirichlet(t, r).unwrap();
                assert!(
                    (laplace - md).abs() < 1e-8,
                    "t={t} r={r}: laplace={laplace} md={md}"
                );
            }
        }
    }

    #[test]
    fn conical_bounded_and_decaying() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        for _ in 0..200 {
            let t = rng.random_range(0.0..15.0);
            let x = 1.0 + rng.random_range(0.0..50.0f64);
            let p = conical_legendre(t, x).unwrap();
            assert!(p.abs() <= 1.0 + 1e-12, "|P({t},{x})| = {p}");
        }
        // P_{-1/2} is positive and strictly decreasing; for t != 0 the
        // function oscillates inside that envelope, |P_t(x)| <= P_0(x).
        let mut prev = f64::INFINITY;
        for i in 0..40 {
            let x = 2.0 + 98.0 * (i as f64) / 39.0;
            let p0 = conical_legendre(0.0, x).unwrap();
            assert!(p0 > 0.0 && p0 <= prev + 1e-12, "P_0 grew at x={x}");
            prev = p0;
            for &t in &[0.6, 1.7, 4.0, 9.0] {
                let pt = conical_legendre(t, x).unwrap().abs();
                assert!(pt <= p0 + 1e-12, "envelope violated at t={t}, x={x}");
            }
        }
    }

    #[test]
    fn plancherel_weight_shape() {
        assert_eq!(plancherel_weight(0.0), 0.0);
        // tanh saturates: weight(b)/(κ₂ b) → 1.
        assert_relative_eq!(plancherel_weight(50.0) / (KAPPA2 * 50.0), 1.0, epsilon = 1e-12);
        // Even function.
        assert_eq!(plancherel_weight(-3.0), plancherel_weight(3.0));
    }
}
