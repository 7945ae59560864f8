//! Backward-induction solver for Quick Swap, the premium-backed variant of
//! the two-party swap.
//!
//! B first locks a griefing premium `Q` (claimable by A after `D + Δ`), A
//! then locks `x_a` together with a premium `1.5Q` (claimable by B after
//! `D`), and B finally locks `y_b`. Either side can cancel early by revealing
//! a cancellation preimage, so nobody speculates by waiting; the success rate
//! depends only on `x_a`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::htlcgame::{
    sr_surface, Action, GameError, HtlcGame, InitiatedRate, SolverOptions, SwapParams,
};
use crate::numerics::{self, Bracket, GaussLegendre, LogNormalLaw};
use crate::pricemodel::PriceModelError;
use crate::Hours;

/// Raw rates at or below this count as zero when comparing success ranges.
pub const NONZERO_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuickSwapParams {
    pub base: SwapParams,
    /// Locktime of A's premium; B's premium is locked for `D + Δ`.
    pub d: Hours,
    pub delta: Hours,
    /// Premium rate: `c(v·t) = ρ·v·t`.
    pub rho: f64,
}

impl Default for QuickSwapParams {
    fn default() -> Self {
        Self { base: SwapParams::default(), d: 10.0, delta: 4.0, rho: 0.001 }
    }
}

impl QuickSwapParams {
    /// B's premium `Q = c(x_a·t_a)`; A's is `1.5Q`.
    pub fn q(&self) -> f64 {
        self.rho * self.base.x_a * self.base.t_a
    }

    pub fn validate(&self) -> Result<(), GameError> {
        self.base.validate()?;
        let b = &self.base;
        let bad = |m: &str| Err(GameError::InvalidParams(m.to_string()));
        if !(self.d.is_finite() && self.delta.is_finite() && self.rho.is_finite()) {
            return bad("D, Delta and rho must be finite");
        }
        if self.rho < 0.0 || self.delta < 0.0 {
            return bad("rho and Delta must be non-negative");
        }
        let window = self.d + self.delta;
        if !(b.tau_a + 2.0 * b.tau_b < window && window < b.t_b) {
            return bad("premium window must satisfy tau_a + 2 tau_b < D + Delta < t_b");
        }
        if !(self.d > b.tau_a + b.tau_b) {
            return bad("D must exceed tau_a + tau_b");
        }
        if self.d < b.eps {
            return bad("D must be at least eps");
        }
        Ok(())
    }

    pub fn with_x_a(mut self, x_a: f64) -> Self {
        self.base.x_a = x_a;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuickThresholds {
    pub x_t4_star: f64,
    pub band: Option<Bracket>,
}

/// `(payoff_A, payoff_B)` at `t4` when A redeems (`Continue`) or cancels.
pub fn payoff_t4(
    params: &QuickSwapParams,
    price: f64,
    action: Action,
) -> Result<(f64, f64), GameError> {
    if !(price.is_finite() && price > 0.0) {
        return Err(GameError::NonPositivePrice(price));
    }
    let p = &params.base;
    let q = params.q();
    let mu = p.gbm.mu;
    match action {
        Action::Continue => Ok((
            (1.0 + p.sp_a) * price * ((mu - p.r_a) * p.tau_b).exp() + 1.5 * q * (-p.r_a * p.tau_a).exp()
                - p.f_a
                - p.f_b,
            (1.0 + p.sp_b) * p.x_a * (-p.r_b * (p.tau_a + p.t_eps)).exp()
                + q * (-p.r_b * (p.t_eps + p.tau_b)).exp()
                - p.f_a
                - p.f_b,
        )),
        Action::Cancel => Ok((
            p.x_a * (-p.r_a * (2.0 * p.t_eps + p.tau_b + p.tau_a)).exp() + 1.5 * q * (-p.r_a * p.tau_a).exp()
                - 2.0 * p.f_a,
            price * (mu * (p.t_eps + p.tau_b)).exp() * (-p.r_b * (p.tau_b + p.t_eps)).exp()
                + q * (-p.r_b * (p.t_eps + 2.0 * p.tau_b)).exp()
                - 2.0 * p.f_b,
        )),
        Action::Stop => Err(GameError::InvalidAction(action)),
    }
}

/// Lowest `t4` price at which A redeems rather than cancels. The premium
/// terms appear on both sides and drop out.
pub fn claim_threshold_t4(params: &QuickSwapParams) -> f64 {
    let p = &params.base;
    (p.x_a * (-p.r_a * (2.0 * p.t_eps + p.tau_b + p.tau_a)).exp() - p.f_a + p.f_b)
        / ((1.0 + p.sp_a) * ((p.gbm.mu - p.r_a) * p.tau_b).exp())
}

#[derive(Debug, Clone)]
pub struct QuickSwapGame {
    params: QuickSwapParams,
    opts: SolverOptions,
    rule: GaussLegendre,
    x4_star: f64,
}

impl QuickSwapGame {
    pub fn new(params: QuickSwapParams, opts: SolverOptions) -> Result<Self, GameError> {
        params.validate()?;
        opts.quad.validate()?;
        if params.base.gbm.sigma == 0.0 {
            return Err(PriceModelError::DegenerateVolatility.into());
        }
        if opts.scan_points < 2 || !(opts.scan_lo > 0.0 && opts.scan_hi > opts.scan_lo) {
            return Err(GameError::InvalidParams("invalid band scan settings".into()));
        }
        Ok(Self {
            x4_star: claim_threshold_t4(&params),
            rule: GaussLegendre::new(opts.inner_order.max(2)),
            params,
            opts,
        })
    }

    pub fn params(&self) -> &QuickSwapParams {
        &self.params
    }

    pub fn claim_threshold_t4(&self) -> f64 {
        self.x4_star
    }

    fn law(&self, start: f64, lambda: Hours) -> LogNormalLaw {
        let g = &self.params.base.gbm;
        LogNormalLaw { start, m: g.log_drift(lambda), s: g.log_sd(lambda) }
    }

    fn t4(&self, price: f64, action: Action) -> (f64, f64) {
        payoff_t4(&self.params, price, action).expect("positive price")
    }

    pub fn payoff_t4(&self, price: f64, action: Action) -> Result<(f64, f64), GameError> {
        payoff_t4(&self.params, price, action)
    }

    fn b_cont_t3(&self, price: f64) -> f64 {
        let p = &self.params.base;
        let (d, q) = (self.params.d, self.params.q());
        let tail = self.opts.quad.tail_quantile;
        let next = self.law(price, p.tau_b);
        let redeemed = (1.0 - next.cdf(self.x4_star)) * self.t4(self.x4_star, Action::Continue).1;
        let cancelled = next.expect_fixed(0.0, self.x4_star, |x| self.t4(x, Action::Cancel).1, &self.rule, tail);
        // A malicious A sits on the swap until just before her premium unlocks.
        let stalled = price * (p.gbm.mu * p.tau_b).exp() * (p.gbm.mu * (p.t_eps + d)).exp()
            * (-p.r_b * (d - p.eps + p.t_eps)).exp()
            + q * (-p.r_b * (p.t_eps + d - p.eps + p.tau_b)).exp()
            - 2.0 * p.f_b;
        p.theta_1 * (-p.r_b * p.tau_b).exp() * (redeemed + cancelled) + (1.0 - p.theta_1) * stalled
    }

    fn a_cont_t3(&self, price: f64) -> f64 {
        let p = &self.params.base;
        let next = self.law(price, p.tau_b);
        let redeemed = next.expect_fixed(
            self.x4_star,
            f64::INFINITY,
            |x| self.t4(x, Action::Continue).0,
            &self.rule,
            self.opts.quad.tail_quantile,
        );
        let cancelled = next.cdf(self.x4_star) * self.t4(self.x4_star, Action::Cancel).0;
        (-p.r_a * p.tau_b).exp() * (redeemed + cancelled)
    }

    fn t3_cancel(&self, price: f64) -> (f64, f64) {
        let p = &self.params.base;
        let q = self.params.q();
        (
            p.x_a * (-p.r_a * (p.tau_a + p.t_eps)).exp() + 1.5 * q * (-p.r_a * (p.t_eps + p.tau_a)).exp()
                - 2.0 * p.f_a,
            price + q * (-p.r_b * p.tau_b).exp() - p.f_b,
        )
    }

    fn t3_stop(&self, price: f64) -> (f64, f64) {
        let p = &self.params.base;
        let q = self.params.q();
        (
            p.x_a * (-p.r_a * (p.t_a + p.tau_a)).exp() + 1.5 * q * (-p.r_a * (p.t_b + p.tau_a)).exp()
                - 2.0 * p.f_a
                + q * (-p.r_b * p.tau_b).exp()
                - p.f_b,
            price,
        )
    }

    /// `(payoff_A, payoff_B)` at `t3`, when B locks `y_b` (`Continue`),
    /// cancels with his cancellation preimage, or walks away (`Stop`).
    pub fn payoff_t3(&self, price: f64, action: Action) -> Result<(f64, f64), GameError> {
        if !(price.is_finite() && price > 0.0) {
            return Err(GameError::NonPositivePrice(price));
        }
        Ok(match action {
            Action::Continue => (self.a_cont_t3(price), self.b_cont_t3(price)),
            Action::Cancel => self.t3_cancel(price),
            Action::Stop => self.t3_stop(price),
        })
    }

    fn scan_bracket(&self) -> Bracket {
        let x_a = self.params.base.x_a;
        Bracket { lo: self.opts.scan_lo * x_a, hi: self.opts.scan_hi * x_a }
    }

    fn band_gap(&self, price: f64) -> f64 {
        self.b_cont_t3(price) - self.t3_cancel(price).1
    }

    pub fn band_roots_t3(&self) -> Result<Vec<f64>, GameError> {
        Ok(numerics::find_roots(
            |x| self.band_gap(x),
            self.scan_bracket(),
            self.opts.scan_points,
            self.opts.root_tol,
        )?)
    }

    /// B's continuation band `(x³₁, x³₂]` at `t3`.
    pub fn continuation_band_t3(&self) -> Result<Option<Bracket>, GameError> {
        let roots = self.band_roots_t3()?;
        if roots.len() > 2 {
            log::warn!(
                "t3 continuation condition has {} crossings at x_a={}; using the widest band",
                roots.len(),
                self.params.base.x_a
            );
        }
        Ok(numerics::widest_nonnegative_interval(|x| self.band_gap(x), &roots, self.scan_bracket()))
    }

    pub fn thresholds(&self) -> Result<QuickThresholds, GameError> {
        Ok(QuickThresholds { x_t4_star: self.x4_star, band: self.continuation_band_t3()? })
    }

    /// `(payoff_A, payoff_B)` at `t2`. `Stop` and `Cancel` coincide: A has
    /// locked nothing yet and B reclaims his premium.
    pub fn payoff_t2(&self, price: f64, action: Action) -> Result<(f64, f64), GameError> {
        if !(price.is_finite() && price > 0.0) {
            return Err(GameError::NonPositivePrice(price));
        }
        let p = &self.params.base;
        let q = self.params.q();
        match action {
            Action::Stop | Action::Cancel => Ok((
                p.x_a + 1.5 * q,
                price + q * (-p.r_b * (p.tau_a + p.tau_b)).exp() - p.f_b,
            )),
            Action::Continue => {
                let band = self.continuation_band_t3()?;
                Ok(self.cont_t2(price, band))
            }
        }
    }

    fn cont_t2(&self, price: f64, band: Option<Bracket>) -> (f64, f64) {
        let p = &self.params.base;
        let tail = self.opts.quad.tail_quantile;
        let law = self.law(price, p.tau_a);
        // Outside the band B walks away.
        let (inside, a_band, b_band) = match band {
            None => (0.0, 0.0, 0.0),
            Some(b) => (
                law.cdf(b.hi) - law.cdf(b.lo),
                law.expect_fixed(b.lo, b.hi, |x| self.a_cont_t3(x), &self.rule, tail),
                law.expect_fixed(b.lo, b.hi, |x| self.b_cont_t3(x), &self.rule, tail),
            ),
        };
        let a_stop3 = self.t3_stop(1.0).0;
        let a_out = (1.0 - inside) * a_stop3;
        let b_out = match band {
            None => law.expect_fixed(0.0, f64::INFINITY, |x| x, &self.rule, tail),
            Some(b) => {
                law.expect_fixed(0.0, b.lo, |x| x, &self.rule, tail)
                    + law.expect_fixed(b.hi, f64::INFINITY, |x| x, &self.rule, tail)
            }
        };
        let a = p.theta_2 * (-p.r_a * p.tau_a).exp() * (a_band + a_out)
            + (1.0 - p.theta_2) * a_stop3 * (-p.r_a * p.tau_a).exp();
        let b = (-p.r_b * p.tau_a).exp() * (b_band + b_out);
        (a, b)
    }

    /// Success rate of an initiated Quick Swap, taking `x(y_b, t2)` to be
    /// `x(y_b, t1)`.
    pub fn success_rate(&self) -> Result<InitiatedRate, GameError> {
        let band = self.continuation_band_t3()?;
        self.success_rate_with_band(band)
    }

    pub fn success_rate_with_band(&self, band: Option<Bracket>) -> Result<InitiatedRate, GameError> {
        let p = &self.params.base;
        let conditional = match band {
            None => 0.0,
            Some(b) => {
                let lock = self.law(p.x_yb_t1, p.tau_a);
                let claim = self.law(1.0, p.tau_b);
                lock.expect_adaptive(
                    b.lo,
                    b.hi,
                    |x| 1.0 - claim.from_price(x).cdf(self.x4_star),
                    &self.opts.quad,
                )?
            }
        };
        Ok(InitiatedRate { raw: p.theta_1 * p.theta_2 * conditional, conditional })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipationRow {
    pub x_a: f64,
    /// HTLC raw rate at `T = T' = 0`; `None` when A would not initiate.
    pub htlc_raw_zero_delay: Option<f64>,
    pub htlc_conditional_zero_delay: Option<f64>,
    /// Minimum HTLC raw rate over the delay grid, not-applicable counted as 0.
    pub htlc_raw_worst: f64,
    pub quick_raw: f64,
    pub quick_conditional: f64,
    pub x_t4_star: f64,
    pub quick_band: Option<Bracket>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipationReport {
    pub rows: Vec<ParticipationRow>,
    /// Smallest and largest grid `x_a` with a nonzero rate.
    pub htlc_range_zero_delay: Option<(f64, f64)>,
    pub htlc_range_worst: Option<(f64, f64)>,
    pub quick_range: Option<(f64, f64)>,
    /// Every grid `x_a` with a nonzero HTLC rate at zero delay also has a
    /// nonzero Quick Swap rate.
    pub quick_contains_zero_delay: bool,
    /// As above for the worst-case HTLC rate, with at least one extra point.
    pub quick_strictly_contains_worst: bool,
}

fn economics_match(h: &SwapParams, q: &SwapParams) -> bool {
    let mut a = *h;
    a.x_a = q.x_a;
    a == *q
}

fn nonzero(v: f64) -> bool {
    v > NONZERO_FLOOR
}

fn range(points: &[(f64, bool)]) -> Option<(f64, f64)> {
    let inside: Vec<f64> = points.iter().filter(|p| p.1).map(|p| p.0).collect();
    Some((*inside.first()?, *inside.last()?))
}

/// Compares the `x_a` ranges with a nonzero success rate under HTLC and
/// Quick Swap with the same economics.
pub fn compare_participation(
    h: &SwapParams,
    q: &QuickSwapParams,
    opts: &SolverOptions,
    xa_grid: &[f64],
    t_grid: &[Hours],
    tp_grid: &[Hours],
) -> Result<ParticipationReport, GameError> {
    if !economics_match(h, &q.base) {
        return Err(GameError::InvalidParams(
            "Quick Swap base parameters must match the HTLC parameters".into(),
        ));
    }
    let surface = sr_surface(h, opts, xa_grid, t_grid, tp_grid)?;
    let rows = xa_grid
        .par_iter()
        .enumerate()
        .map(|(i, &x_a)| {
            let zero = HtlcGame::new(h.with_x_a(x_a), *opts)?.success_rate(0.0, 0.0)?;
            let worst = (0..t_grid.len())
                .flat_map(|j| (0..tp_grid.len()).map(move |k| (j, k)))
                .map(|(j, k)| surface.cell(i, j, k).raw().unwrap_or(0.0))
                .fold(f64::INFINITY, f64::min);
            let game = QuickSwapGame::new(q.with_x_a(x_a), *opts)?;
            let band = game.continuation_band_t3()?;
            let rate = game.success_rate_with_band(band)?;
            Ok(ParticipationRow {
                x_a,
                htlc_raw_zero_delay: zero.raw(),
                htlc_conditional_zero_delay: zero.conditional(),
                htlc_raw_worst: if worst.is_finite() { worst } else { 0.0 },
                quick_raw: rate.raw,
                quick_conditional: rate.conditional,
                x_t4_star: game.claim_threshold_t4(),
                quick_band: band,
            })
        })
        .collect::<Result<Vec<_>, GameError>>()?;

    let htlc_zero: Vec<(f64, bool)> =
        rows.iter().map(|r| (r.x_a, nonzero(r.htlc_raw_zero_delay.unwrap_or(0.0)))).collect();
    let htlc_worst: Vec<(f64, bool)> = rows.iter().map(|r| (r.x_a, nonzero(r.htlc_raw_worst))).collect();
    let quick: Vec<(f64, bool)> = rows.iter().map(|r| (r.x_a, nonzero(r.quick_raw))).collect();
    let covers = |h: &[(f64, bool)]| h.iter().zip(&quick).all(|(a, b)| !a.1 || b.1);
    let count = |s: &[(f64, bool)]| s.iter().filter(|p| p.1).count();

    Ok(ParticipationReport {
        htlc_range_zero_delay: range(&htlc_zero),
        htlc_range_worst: range(&htlc_worst),
        quick_range: range(&quick),
        quick_contains_zero_delay: covers(&htlc_zero),
        quick_strictly_contains_worst: covers(&htlc_worst) && count(&quick) > count(&htlc_worst),
        rows,
    })
}
