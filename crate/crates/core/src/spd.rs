//! Matrix algebra on the open cone of 2×2 symmetric positive-definite
//! matrices: Cholesky and eigen factorizations, the polar change of variables
//! a₁ = e^{u₁+u₂}, a₂ = e^{−u₁+u₂}, and the group convolution
//! X ∘ Z = Xᵗ⸍² Z X¹⸍² built on the upper-triangular square root.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative determinant floor below which a matrix is treated as singular.
pub const SINGULARITY_FLOOR: f64 = 1e-14;

/// Errors for cone-membership violations.
#[derive(Debug, Clone, Error)]
pub enum SpdError {
    /// Entries must be finite.
    #[error("matrix entry is not finite: [[{x11}, {x12}], [{x12}, {x22}]]")]
    NonFinite { x11: f64, x12: f64, x22: f64 },

    /// x11 > 0 and det > 0 are required, with a guard band against
    /// numerically singular input.
    #[error("matrix is not positive definite: x11 = {x11}, det = {det}")]
    NotPositiveDefinite { x11: f64, det: f64 },
}

/// A 2×2 symmetric positive-definite matrix, stored as its upper triangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpdMatrix {
    x11: f64,
    x12: f64,
    x22: f64,
}

/// Upper-triangular Cholesky factor U with UᵀU equal to the source matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpperTriangular {
    pub u11: f64,
    pub u12: f64,
    pub u22: f64,
}

/// Ordered eigenvalues a₁ ≥ a₂ > 0 of an SPD matrix together with the
/// rotation angle θ of the diagonalizing frame: the source matrix is
/// R(θ) · diag(a₁, a₂) · R(θ)ᵀ with R(θ) = [[cos θ, −sin θ], [sin θ, cos θ]].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenPair {
    a1: f64,
    a2: f64,
    theta: f64,
}

/// Polar coordinates (u₁, u₂) of an ordered eigenvalue pair:
/// u₁ = ½ log(a₁/a₂) ≥ 0 and u₂ = ½ log(a₁ a₂).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarPoint {
    pub u1: f64,
    pub u2: f64,
}

impl SpdMatrix {
    /// Validates cone membership: x11 > 0 and det above the singularity
    /// guard band `SINGULARITY_FLOOR · x11 · x22`.
    pub fn new(x11: f64, x12: f64, x22: f64) -> Result<Self, SpdError> {
        if !(x11.is_finite() && x12.is_finite() && x22.is_finite()) {
            return Err(SpdError::NonFinite { x11, x12, x22 });
        }
        let det = x11 * x22 - x12 * x12;
        if x11 <= 0.0 || x22 <= 0.0 || det <= SINGULARITY_FLOOR * x11 * x22 {
            return Err(SpdError::NotPositiveDefinite { x11, det });
        }
        Ok(Self { x11, x12, x22 })
    }

    /// Trusted constructor for values produced by operations that preserve
    /// positive definiteness exactly (convolution, reconstruction).
    fn new_unchecked(x11: f64, x12: f64, x22: f64) -> Self {
        Self { x11, x12, x22 }
    }

    pub fn identity() -> Self {
        Self::new_unchecked(1.0, 0.0, 1.0)
    }

    /// c · I₂ for c > 0.
    pub fn scaled_identity(c: f64) -> Result<Self, SpdError> {
        Self::new(c, 0.0, c)
    }

    pub fn x11(&self) -> f64 {
        self.x11
    }

    pub fn x12(&self) -> f64 {
        self.x12
    }

    pub fn x22(&self) -> f64 {
        self.x22
    }

    pub fn det(&self) -> f64 {
        self.x11 * self.x22 - self.x12 * self.x12
    }

    pub fn trace(&self) -> f64 {
        self.x11 + self.x22
    }

    /// Principal minors (|y₁|, |y₂|) = (x11, det).
    pub fn principal_minors(&self) -> (f64, f64) {
        (self.x11, self.det())
    }

    /// Upper-triangular Cholesky factor: U with UᵀU = self.
    pub fn cholesky_upper(&self) -> UpperTriangular {
        let u11 = self.x11.sqrt();
        let u12 = self.x12 / u11;
        // x22 − u12² = det / x11 > 0 by the cone invariant.
        let u22 = (self.x22 - u12 * u12).max(0.0).sqrt();
        UpperTriangular { u11, u12, u22 }
    }

    /// Ordered eigendecomposition. Ties (a₁ = a₂) take θ = 0.
    pub fn eigen_sorted(&self) -> EigenPair {
        let mean = 0.5 * (self.x11 + self.x22);
        let half_diff = 0.5 * (self.x11 - self.x22);
        let disc = half_diff.hypot(self.x12);
        let a1 = mean + disc;
        // a₂ via the determinant avoids the cancellation in mean − disc.
        let a2 = self.det() / a1;
        let theta = if disc == 0.0 || (self.x12 == 0.0 && half_diff >= 0.0) {
            0.0
        } else {
            0.5 * (2.0 * self.x12).atan2(self.x11 - self.x22)
        };
        EigenPair { a1, a2, theta }
    }

    /// Group convolution X ∘ Z = Xᵗ⸍² Z X¹⸍² with X¹⸍² the upper-triangular
    /// Cholesky factor of X (= self).
    pub fn convolve(&self, z: &SpdMatrix) -> SpdMatrix {
        let u = self.cholesky_upper();
        let r11 = u.u11 * u.u11 * z.x11;
        let r12 = u.u11 * (z.x11 * u.u12 + z.x12 * u.u22);
        let r22 =
            z.x11 * u.u12 * u.u12 + 2.0 * u.u12 * u.u22 * z.x12 + u.u22 * u.u22 * z.x22;
        SpdMatrix::new_unchecked(r11, r12, r22)
    }

    /// Congruence kᵀ · self · k by the rotation k = R(θ).
    pub fn rotate(&self, theta: f64) -> SpdMatrix {
        let (s, c) = theta.sin_cos();
        // R(θ)ᵀ M R(θ)
        let x11 = c * c * self.x11 + 2.0 * s * c * self.x12 + s * s * self.x22;
        let x12 = (c * c - s * s) * self.x12 + s * c * (self.x22 - self.x11);
        let x22 = s * s * self.x11 - 2.0 * s * c * self.x12 + c * c * self.x22;
        SpdMatrix::new_unchecked(x11, x12, x22)
    }
}

impl UpperTriangular {
    /// UᵀU, the matrix this factor reconstructs.
    pub fn gram(&self) -> SpdMatrix {
        SpdMatrix::new_unchecked(
            self.u11 * self.u11,
            self.u11 * self.u12,
            self.u12 * self.u12 + self.u22 * self.u22,
        )
    }
}

impl EigenPair {
    /// Validated constructor: a₁ ≥ a₂ > 0.
    pub fn new(a1: f64, a2: f64, theta: f64) -> Result<Self, SpdError> {
        if !(a1.is_finite() && a2.is_finite() && theta.is_finite()) {
            return Err(SpdError::NonFinite {
                x11: a1,
                x12: 0.0,
                x22: a2,
            });
        }
        if a2 <= 0.0 || a1 < a2 {
            return Err(SpdError::NotPositiveDefinite {
                x11: a1,
                det: a1 * a2,
            });
        }
        Ok(Self { a1, a2, theta })
    }

    pub fn a1(&self) -> f64 {
        self.a1
    }

    pub fn a2(&self) -> f64 {
        self.a2
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// R(θ) · diag(a₁, a₂) · R(θ)ᵀ.
    pub fn reconstruct(&self) -> SpdMatrix {
        let (s, c) = self.theta.sin_cos();
        SpdMatrix::new_unchecked(
            self.a1 * c * c + self.a2 * s * s,
            (self.a1 - self.a2) * s * c,
            self.a1 * s * s + self.a2 * c * c,
        )
    }

    /// Polar coordinates u₁ = ½ log(a₁/a₂), u₂ = ½ log(a₁ a₂).
    pub fn to_polar(&self) -> PolarPoint {
        PolarPoint {
            u1: 0.5 * (self.a1 / self.a2).ln(),
            u2: 0.5 * (self.a1 * self.a2).ln(),
        }
    }
}

impl PolarPoint {
    pub fn new(u1: f64, u2: f64) -> Self {
        assert!(u1 >= 0.0, "polar coordinate u1 must be nonnegative");
        Self { u1, u2 }
    }

    /// Inverse of [`EigenPair::to_polar`]; the angle of the result is 0.
    pub fn to_eigen(&self) -> EigenPair {
        EigenPair {
            a1: (self.u2 + self.u1).exp(),
            a2: (self.u2 - self.u1).exp(),
            theta: 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn rejects_invalid_matrices() {
        assert!(SpdMatrix::new(-1.0, 0.0, 1.0).is_err());
        assert!(SpdMatrix::new(1.0, 2.0, 1.0).is_err());
        assert!(SpdMatrix::new(1.0, 1.0, 1.0).is_err()); // singular
        assert!(SpdMatrix::new(1.0, f64::NAN, 1.0).is_err());
        // Near-singular guard band.
        assert!(SpdMatrix::new(1.0, (1.0f64 - 1e-16).sqrt(), 1.0).is_err());
    }

    #[test]
    fn cholesky_examples() {
        let id = SpdMatrix::identity().cholesky_upper();
        assert_eq!((id.u11, id.u12, id.u22), (1.0, 0.0, 1.0));

        let u = SpdMatrix::new(4.0, 2.0, 5.0).unwrap().cholesky_upper();
        assert_relative_eq!(u.u11, 2.0, epsilon = 1e-14);
        assert_relative_eq!(u.u12, 1.0, epsilon = 1e-14);
        assert_relative_eq!(u.u22, 2.0, epsilon = 1e-14);

        let c = 7.3;
        let u = SpdMatrix::scaled_identity(c).unwrap().cholesky_upper();
        assert_relative_eq!(u.u11, c.sqrt(), epsilon = 1e-14);
        assert_eq!(u.u12, 0.0);
        assert_relative_eq!(u.u22, c.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn eigen_examples() {
        let e = SpdMatrix::new(3.0, 0.0, 1.0).unwrap().eigen_sorted();
        assert_eq!((e.a1(), e.a2(), e.theta()), (3.0, 1.0, 0.0));

        let e = SpdMatrix::new(2.0, 1.0, 2.0).unwrap().eigen_sorted();
        assert_relative_eq!(e.a1(), 3.0, epsilon = 1e-14);
        assert_relative_eq!(e.a2(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(e.theta(), std::f64::consts::FRAC_PI_4, epsilon = 1e-14);

        // Tie case is deterministic.
        let e = SpdMatrix::scaled_identity(4.2).unwrap().eigen_sorted();
        assert_eq!(e.theta(), 0.0);
        assert_relative_eq!(e.a1(), 4.2, epsilon = 1e-14);
        assert_relative_eq!(e.a2(), 4.2, epsilon = 1e-14);
    }

    #[test]
    fn convolve_identity_cases() {
        let z = SpdMatrix::new(4.0, 2.0, 5.0).unwrap();
        let id = SpdMatrix::identity();
        assert_eq!(id.convolve(&z), z);

        let x = SpdMatrix::new(2.0, -1.0, 3.0).unwrap();
        let back = x.convolve(&id);
        assert_relative_eq!(back.x11(), x.x11(), epsilon = 1e-14);
        assert_relative_eq!(back.x12(), x.x12(), epsilon = 1e-14);
        assert_relative_eq!(back.x22(), x.x22(), epsilon = 1e-14);
    }

    #[test]
    fn principal_minor_examples() {
        assert_eq!(SpdMatrix::identity().principal_minors(), (1.0, 1.0));
        let (m1, m2) = SpdMatrix::new(4.0, 2.0, 5.0).unwrap().principal_minors();
        assert_eq!(m1, 4.0);
        assert_relative_eq!(m2, 16.0, epsilon = 1e-14);
        let (m1, m2) = SpdMatrix::new(3.0, 0.0, 2.0).unwrap().principal_minors();
        assert_eq!((m1, m2), (3.0, 6.0));
    }

    #[test]
    fn polar_examples() {
        let e = EigenPair::new(std::f64::consts::E, 1.0 / std::f64::consts::E, 0.0).unwrap();
        let u = e.to_polar();
        assert_relative_eq!(u.u1, 1.0, epsilon = 1e-12);
        assert!(u.u2.abs() < 1e-12);

        let c = 5.5;
        let u = EigenPair::new(c, c, 0.0).unwrap().to_polar();
        assert!(u.u1.abs() < 1e-12);
        assert_relative_eq!(u.u2, c.ln(), epsilon = 1e-12);
    }

    #[test]
    fn det_multiplicative_over_random_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let mk = |rng: &mut rand_chacha::ChaCha12Rng| {
                let a1: f64 = rng.random_range(0.1..10.0);
                let a2: f64 = rng.random_range(0.1..10.0);
                let th: f64 = rng.random_range(-3.2..3.2);
                let (hi, lo) = if a1 >= a2 { (a1, a2) } else { (a2, a1) };
                EigenPair::new(hi, lo, th).unwrap().reconstruct()
            };
            let x = mk(&mut rng);
            let z = mk(&mut rng);
            let y = x.convolve(&z);
            assert!(y.x11() > 0.0 && y.det() > 0.0);
            assert_relative_eq!(y.det(), x.det() * z.det(), max_relative = 1e-12);
        }
    }

    #[test]
    fn eigenvalues_are_rotation_invariant() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(9);
        for _ in 0..500 {
            let y = SpdMatrix::new(
                rng.random_range(0.5..5.0),
                rng.random_range(-0.4..0.4),
                rng.random_range(0.5..5.0),
            )
            .unwrap();
            let e = y.eigen_sorted();
            let k = rng.random_range(-3.2..3.2);
            let rotated = y.rotate(k).eigen_sorted();
            assert_relative_eq!(e.a1(), rotated.a1(), max_relative = 1e-10);
            assert_relative_eq!(e.a2(), rotated.a2(), max_relative = 1e-10);
        }
    }

    fn arb_spd() -> impl Strategy<Value = SpdMatrix> {
        (
            -3.0f64..3.0,
            -3.0f64..3.0,
            -std::f64::consts::PI..std::f64::consts::PI,
        )
            .prop_map(|(l1, l2, th)| {
                let a = l1.exp();
                let b = l2.exp();
                let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
                EigenPair::new(hi, lo, th).unwrap().reconstruct()
            })
    }

    proptest! {
        #[test]
        fn cholesky_reconstructs(y in arb_spd()) {
            let g = y.cholesky_upper().gram();
            prop_assert!((g.x11() - y.x11()).abs() <= 1e-12 * y.x11().abs().max(1.0));
            prop_assert!((g.x12() - y.x12()).abs() <= 1e-12 * y.x11().abs().max(1.0));
            prop_assert!((g.x22() - y.x22()).abs() <= 1e-12 * y.x22().abs().max(1.0));
        }

        #[test]
        fn eigen_reconstructs(y in arb_spd()) {
            let r = y.eigen_sorted().reconstruct();
            let scale = y.trace();
            prop_assert!((r.x11() - y.x11()).abs() <= 1e-12 * scale);
            prop_assert!((r.x12() - y.x12()).abs() <= 1e-12 * scale);
            prop_assert!((r.x22() - y.x22()).abs() <= 1e-12 * scale);
        }

        #[test]
        fn polar_round_trip(l1 in -4.0f64..4.0, l2 in -4.0f64..4.0) {
            let (hi, lo) = if l1 >= l2 { (l1, l2) } else { (l2, l1) };
            let e = EigenPair::new(hi.exp(), lo.exp(), 0.0).unwrap();
            let back = e.to_polar().to_eigen();
            prop_assert!((back.a1() - e.a1()).abs() <= 1e-12 * e.a1());
            prop_assert!((back.a2() - e.a2()).abs() <= 1e-12 * e.a2());

            let u = PolarPoint::new((hi - lo).abs(), 0.3);
            let round = u.to_eigen().to_polar();
            prop_assert!((round.u1 - u.u1).abs() <= 1e-12 * u.u1.max(1.0));
            prop_assert!((round.u2 - u.u2).abs() <= 1e-12);
        }
    }
}
