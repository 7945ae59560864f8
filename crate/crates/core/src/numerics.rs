//! Quadrature and root finding for the game solvers.
//!
//! Outer integrals use adaptive Gauss–Kronrod (7/15) with global bisection;
//! nested inner integrals use a fixed [`GaussLegendre`] rule. Expectations
//! against the GBM transition law are taken in standardized log space, where
//! the integrand is a Gaussian density times a smooth payoff.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pricemodel::{self, GbmParams, PriceModelError, PriceState};
use crate::Hours;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("bracket requires lo < hi, got [{lo}, {hi}]")]
    InvalidBracket { lo: f64, hi: f64 },
    #[error("invalid quadrature spec: {0}")]
    InvalidSpec(&'static str),
    #[error("integrand is not finite at {at}")]
    NonFinite { at: f64 },
    #[error("subdivision limit reached with estimate {estimate} and error bound {error}")]
    DepthExhausted { estimate: f64, error: f64 },
    #[error("root scan needs at least 2 grid points, got {0}")]
    InvalidGrid(usize),
    #[error(transparent)]
    PriceModel(#[from] PriceModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Maximum number of bisections applied to any one subinterval.
    pub max_depth: u32,
    /// Probability mass dropped from each open tail of a transition law.
    pub tail_quantile: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            abs_tol: 1e-9,
            rel_tol: 1e-7,
            max_depth: 30,
            tail_quantile: 1e-9,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<(), NumericsError> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(NumericsError::InvalidSpec("tolerances must be positive"));
        }
        if !(self.tail_quantile > 0.0 && self.tail_quantile < 1.0) {
            return Err(NumericsError::InvalidSpec("tail_quantile must lie in (0, 1)"));
        }
        if self.max_depth == 0 {
            return Err(NumericsError::InvalidSpec("max_depth must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
}

impl Bracket {
    pub fn new(lo: f64, hi: f64) -> Result<Self, NumericsError> {
        if !(lo < hi) {
            return Err(NumericsError::InvalidBracket { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Half-open membership `(lo, hi]`.
    pub fn contains(&self, x: f64) -> bool {
        x > self.lo && x <= self.hi
    }
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const K15_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];
// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5) and the centre.
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One 15-point Kronrod panel on `[a, b]`; returns the Kronrod estimate and
/// its difference from the embedded 7-point Gauss estimate.
pub fn gauss_kronrod_15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = K15_WEIGHTS[7] * fc;
    let mut gauss = G7_WEIGHTS[3] * fc;
    for i in 0..7 {
        let dx = h * GK_NODES[i];
        let sum = f(c - dx) + f(c + dx);
        kronrod += K15_WEIGHTS[i] * sum;
        if i % 2 == 1 {
            gauss += G7_WEIGHTS[i / 2] * sum;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    depth: u32,
}

/// Adaptive integral of `f` over `bracket`.
///
/// Repeatedly bisects the panel with the largest error estimate until the
/// summed estimate is within `max(abs_tol, rel_tol·|result|)`.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    bracket: Bracket,
    spec: &QuadratureSpec,
) -> Result<f64, NumericsError> {
    spec.validate()?;
    let mut fail = None;
    let mut eval = |a: f64, b: f64, depth: u32, fail: &mut Option<NumericsError>| {
        let mut g = |x: f64| {
            let y = f(x);
            if !y.is_finite() {
                fail.get_or_insert(NumericsError::NonFinite { at: x });
                return 0.0;
            }
            y
        };
        let (value, error) = gauss_kronrod_15(&mut g, a, b);
        Panel { a, b, value, error, depth }
    };

    let mut panels = vec![eval(bracket.lo, bracket.hi, 0, &mut fail)];
    loop {
        let total: f64 = panels.iter().map(|p| p.value).sum();
        let error: f64 = panels.iter().map(|p| p.error).sum();
        if let Some(e) = fail.take() {
            return Err(e);
        }
        if error <= spec.abs_tol.max(spec.rel_tol * total.abs()) {
            return Ok(total);
        }
        let worst = panels
            .iter()
            .enumerate()
            .filter(|(_, p)| p.depth < spec.max_depth)
            .max_by(|(_, x), (_, y)| x.error.total_cmp(&y.error))
            .map(|(i, _)| i);
        let Some(i) = worst else {
            return Err(NumericsError::DepthExhausted { estimate: total, error });
        };
        let p = panels.swap_remove(i);
        let mid = 0.5 * (p.a + p.b);
        panels.push(eval(p.a, mid, p.depth + 1, &mut fail));
        panels.push(eval(mid, p.b, p.depth + 1, &mut fail));
    }
}

/// Fixed-order Gauss–Legendre rule.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Nodes are the roots of `P_n`, found by Newton iteration from the
    /// Chebyshev-like initial guesses.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss-Legendre order must be positive");
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64) -> f64 {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(c + h * x))
            .sum::<f64>()
            * h
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    (p1, n as f64 * (x * p1 - p0) / (x * x - 1.0))
}

/// Upper integration limit standing in for `+∞`: the `1 − tail_quantile`
/// quantile of the transition law.
pub fn truncate_upper(
    state: &PriceState,
    params: &GbmParams,
    lambda: Hours,
    spec: &QuadratureSpec,
) -> Result<f64, NumericsError> {
    spec.validate()?;
    let law = LogNormalLaw::new(state, params, lambda)?;
    Ok(law.price(-pricemodel::normal_quantile(spec.tail_quantile)?))
}

/// Transition law of the price after `lambda` hours, parameterized by the
/// standard normal variate `z` with `price = x·exp(m + s·z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormalLaw {
    pub start: f64,
    pub m: f64,
    pub s: f64,
}

impl LogNormalLaw {
    pub fn new(state: &PriceState, params: &GbmParams, lambda: Hours) -> Result<Self, NumericsError> {
        // Surface the same argument errors as the density itself.
        pricemodel::transition_cdf(state.value, state, params, lambda)?;
        Ok(Self {
            start: state.value,
            m: params.log_drift(lambda),
            s: params.log_sd(lambda),
        })
    }

    /// Same law restarted from a different price.
    pub fn from_price(&self, start: f64) -> Self {
        Self { start, ..*self }
    }

    pub fn price(&self, z: f64) -> f64 {
        self.start * (self.m + self.s * z).exp()
    }

    /// Standardized variate of `price`; `0` maps to `-∞` and `∞` to `+∞`.
    pub fn z(&self, price: f64) -> f64 {
        if price <= 0.0 {
            f64::NEG_INFINITY
        } else {
            ((price / self.start).ln() - self.m) / self.s
        }
    }

    pub fn cdf(&self, price: f64) -> f64 {
        pricemodel::normal_cdf(self.z(price))
    }

    /// `z`-interval for `∫_lo^hi P(p)·u(p) dp`, clipped to the central
    /// `1 − 2·tail` mass. `None` when the clipped interval is empty.
    pub fn z_range(&self, lo: f64, hi: f64, tail: f64) -> Option<(f64, f64)> {
        let zq = -pricemodel::normal_quantile(tail).ok()?;
        let a = self.z(lo).max(-zq);
        let b = self.z(hi).min(zq);
        (a < b).then_some((a, b))
    }

    /// `∫_lo^hi P(p)·u(p) dp` with a fixed rule.
    pub fn expect_fixed<F: FnMut(f64) -> f64>(
        &self,
        lo: f64,
        hi: f64,
        mut u: F,
        rule: &GaussLegendre,
        tail: f64,
    ) -> f64 {
        match self.z_range(lo, hi, tail) {
            None => 0.0,
            Some((a, b)) => rule.integrate(|z| pricemodel::normal_pdf(z) * u(self.price(z)), a, b),
        }
    }

    /// `∫_lo^hi P(p)·u(p) dp` with adaptive quadrature.
    pub fn expect_adaptive<F: FnMut(f64) -> f64>(
        &self,
        lo: f64,
        hi: f64,
        mut u: F,
        spec: &QuadratureSpec,
    ) -> Result<f64, NumericsError> {
        match self.z_range(lo, hi, spec.tail_quantile) {
            None => Ok(0.0),
            Some((a, b)) => integrate(
                |z| pricemodel::normal_pdf(z) * u(self.price(z)),
                Bracket::new(a, b)?,
                spec,
            ),
        }
    }
}

/// Roots of `g` on `scan`: a uniform scan of `grid_points` points, then
/// bisection of each sign change until `|g| ≤ tol` or the interval is no
/// wider than `tol`. Grid points where `g` is exactly zero are roots as is.
pub fn find_roots<F: FnMut(f64) -> f64>(
    mut g: F,
    scan: Bracket,
    grid_points: usize,
    tol: f64,
) -> Result<Vec<f64>, NumericsError> {
    if grid_points < 2 {
        return Err(NumericsError::InvalidGrid(grid_points));
    }
    let step = scan.width() / (grid_points - 1) as f64;
    let xs: Vec<f64> = (0..grid_points)
        .map(|i| if i + 1 == grid_points { scan.hi } else { scan.lo + i as f64 * step })
        .collect();
    let ys: Vec<f64> = xs.iter().map(|&x| g(x)).collect();
    let mut roots = Vec::new();
    for i in 0..grid_points {
        if ys[i] == 0.0 {
            roots.push(xs[i]);
            continue;
        }
        if i + 1 < grid_points && ys[i + 1] != 0.0 && (ys[i] < 0.0) != (ys[i + 1] < 0.0) {
            let (mut a, mut b, mut ga) = (xs[i], xs[i + 1], ys[i]);
            let mut root = 0.5 * (a + b);
            while b - a > tol {
                root = 0.5 * (a + b);
                let gm = g(root);
                if gm.abs() <= tol || gm == 0.0 {
                    break;
                }
                if (gm < 0.0) == (ga < 0.0) {
                    a = root;
                    ga = gm;
                } else {
                    b = root;
                }
                root = 0.5 * (a + b);
            }
            roots.push(root);
        }
    }
    Ok(roots)
}

/// Among the intervals delimited by `roots` within `scan`, the widest one on
/// which `g` is nonnegative (tested at its midpoint).
pub fn widest_nonnegative_interval<F: FnMut(f64) -> f64>(
    mut g: F,
    roots: &[f64],
    scan: Bracket,
) -> Option<Bracket> {
    let mut edges = Vec::with_capacity(roots.len() + 2);
    edges.push(scan.lo);
    edges.extend(roots.iter().copied().filter(|r| *r > scan.lo && *r < scan.hi));
    edges.push(scan.hi);
    edges
        .windows(2)
        .filter(|w| w[1] > w[0] && g(0.5 * (w[0] + w[1])) >= 0.0)
        .map(|w| Bracket { lo: w[0], hi: w[1] })
        .max_by(|a, b| a.width().total_cmp(&b.width()))
}
