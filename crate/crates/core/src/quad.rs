//! One-dimensional quadrature building blocks: adaptive Gauss–Kronrod (7–15)
//! integration for real- and complex-valued integrands, and Gauss–Legendre
//! node/weight generation for fixed tensor grids.

use num_complex::Complex64;
use thiserror::Error;

/// Absolute tolerance used by the adaptive rule unless a caller overrides it.
pub const DEFAULT_ABS_TOL: f64 = 1e-10;
/// Relative tolerance used by the adaptive rule unless a caller overrides it.
pub const DEFAULT_REL_TOL: f64 = 1e-8;
/// Maximum number of bisection levels before giving up on a panel.
pub const DEFAULT_MAX_DEPTH: u32 = 20;

/// Quadrature failures.
#[derive(Debug, Clone, Error)]
pub enum QuadError {
    /// The requested tolerance was not met at the maximum refinement depth.
    #[error("quadrature did not converge: residual error {achieved:.3e} > tolerance {requested:.3e}")]
    NoConvergence {
        /// Error estimate left on the worst panel.
        achieved: f64,
        /// Tolerance that panel was asked to meet.
        requested: f64,
    },
}

/// Tolerance settings for the adaptive rule.
#[derive(Debug, Clone, Copy)]
pub struct QuadTol {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_depth: u32,
}

impl Default for QuadTol {
    fn default() -> Self {
        Self {
            abs_tol: DEFAULT_ABS_TOL,
            rel_tol: DEFAULT_REL_TOL,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

/// Values that can be accumulated by the quadrature kernel.
pub trait QuadValue: Copy {
    fn zero() -> Self;
    fn add(self, other: Self) -> Self;
    fn scale(self, factor: f64) -> Self;
    fn norm(self) -> f64;
}

impl QuadValue for f64 {
    fn zero() -> Self {
        0.0
    }
    fn add(self, other: Self) -> Self {
        self + other
    }
    fn scale(self, factor: f64) -> Self {
        self * factor
    }
    fn norm(self) -> f64 {
        self.abs()
    }
}

impl QuadValue for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn add(self, other: Self) -> Self {
        self + other
    }
    fn scale(self, factor: f64) -> Self {
        self * factor
    }
    fn norm(self) -> f64 {
        self.norm()
    }
}

// 15-point Kronrod abscissae (positive half) and weights, with the embedded
// 7-point Gauss weights, as tabulated in QUADPACK's dqk15.
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];

const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// One Gauss–Kronrod 7–15 panel. Returns the Kronrod estimate and the
/// |K15 − G7| error estimate.
fn gk15_panel<V, F>(f: &F, a: f64, b: f64) -> (V, f64)
where
    V: QuadValue,
    F: Fn(f64) -> V,
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);

    let fc = f(center);
    let mut kronrod = fc.scale(WGK[7]);
    let mut gauss = fc.scale(WG[3]);

    for (j, &x) in XGK.iter().enumerate().take(7) {
        let dx = half * x;
        let pair = f(center - dx).add(f(center + dx));
        kronrod = kronrod.add(pair.scale(WGK[j]));
        if j % 2 == 1 {
            gauss = gauss.add(pair.scale(WG[(j - 1) / 2]));
        }
    }

    let kronrod = kronrod.scale(half);
    let gauss = gauss.scale(half);
    (kronrod, kronrod.add(gauss.scale(-1.0)).norm())
}

/// Adaptive Gauss–Kronrod integration of `f` over `[a, b]` with a global
/// error budget: the panel with the largest error estimate is bisected until
/// the summed error meets `max(abs_tol, rel_tol·|I|)`. Panels narrower than
/// `(b−a)·2^{−max_depth}` are not split further; the call fails only if the
/// budget is still unmet once no panel can be refined.
pub fn integrate<V, F>(f: F, a: f64, b: f64, tol: QuadTol) -> Result<V, QuadError>
where
    V: QuadValue,
    F: Fn(f64) -> V,
{
    if a == b {
        return Ok(V::zero());
    }

    struct Panel<V> {
        a: f64,
        b: f64,
        value: V,
        err: f64,
    }

    let width_floor = (b - a).abs() * (0.5f64).powi(tol.max_depth as i32);
    let (value, err) = gk15_panel(&f, a, b);
    let mut active = vec![Panel { a, b, value, err }];
    let mut retired: Vec<Panel<V>> = Vec::new();
    let mut active_err = err;
    let mut stuck_err = 0.0; // error held by panels at the width floor
    let mut total_norm = value.norm();

    loop {
        let threshold = tol.abs_tol.max(tol.rel_tol * total_norm);
        if active_err + stuck_err <= threshold {
            break;
        }
        let worst = active
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.total_cmp(&y.1.err))
            .map(|(i, _)| i);
        let Some(idx) = worst else {
            return Err(QuadError::NoConvergence {
                achieved: stuck_err,
                requested: threshold,
            });
        };
        let panel = active.swap_remove(idx);
        if (panel.b - panel.a).abs() <= width_floor {
            active_err -= panel.err;
            stuck_err += panel.err;
            retired.push(panel);
            continue;
        }
        let mid = 0.5 * (panel.a + panel.b);
        let (lv, le) = gk15_panel(&f, panel.a, mid);
        let (rv, re) = gk15_panel(&f, mid, panel.b);
        active_err = active_err - panel.err + le + re;
        total_norm = total_norm - panel.value.norm() + lv.norm() + rv.norm();
        active.push(Panel {
            a: panel.a,
            b: mid,
            value: lv,
            err: le,
        });
        active.push(Panel {
            a: mid,
            b: panel.b,
            value: rv,
            err: re,
        });
    }

    // Deterministic summation order: by panel position.
    retired.extend(active);
    retired.sort_by(|x, y| x.a.total_cmp(&y.a));
    let mut acc = V::zero();
    for p in &retired {
        acc = acc.add(p.value);
    }
    Ok(acc)
}

/// Gauss–Legendre nodes and weights on `[a, b]`.
///
/// Nodes are returned in increasing order; the rule is exact for polynomials
/// of degree `2n - 1`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "gauss_legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];

    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess for the i-th root of P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n and P_n' by the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let delta = p1 / dp;
            x -= delta;
            if delta.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }

    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    for i in 0..n {
        nodes[i] = mid + half * nodes[i];
        weights[i] *= half;
    }
    (nodes, weights)
}
