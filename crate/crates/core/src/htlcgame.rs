//! Backward-induction solver for the two-party HTLC swap game.
//!
//! Timeline: A locks `x_a` at `t1`; B locks `y_b` at `t2 = t1 + τ_a + T'`;
//! A claims (or not) at `t3 = t2 + τ_b + T`. B's coins are valued in A's
//! asset through the GBM price `x(y_b, t)`. Payoffs are solved from `t3`
//! back to `t1`, yielding A's claim threshold at `t3`, B's continuation band
//! `(x1, x2]` at `t2`, A's participation decision at `t1` and the success
//! rate of an initiated swap.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{
    self, Bracket, GaussLegendre, LogNormalLaw, NumericsError, QuadratureSpec,
};
use crate::pricemodel::{GbmParams, PriceModelError, PriceState};
use crate::Hours;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GameError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("delay {name} = {value} outside [0, {max}]")]
    DelayOutsideWindow { name: &'static str, value: f64, max: f64 },
    #[error("price must be positive, got {0}")]
    NonPositivePrice(f64),
    #[error("action {0:?} is not available at this node")]
    InvalidAction(Action),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    PriceModel(#[from] PriceModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Continue,
    Stop,
    Cancel,
}

/// Economic and timing parameters of a two-party swap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwapParams {
    pub x_a: f64,
    /// `x(y_b, t1)`: B's coins priced in A's asset when A locks.
    pub x_yb_t1: f64,
    pub t_a: Hours,
    pub t_b: Hours,
    pub tau_a: Hours,
    pub tau_b: Hours,
    pub t_eps: Hours,
    pub eps: Hours,
    pub sp_a: f64,
    pub sp_b: f64,
    pub r_a: f64,
    pub r_b: f64,
    pub f_a: f64,
    pub f_b: f64,
    pub theta_1: f64,
    pub theta_2: f64,
    pub gbm: GbmParams,
}

impl Default for SwapParams {
    /// The low-volatility baseline: `σ = 0.1`, `r = 0.005`, `sp = 0.3`.
    fn default() -> Self {
        Self {
            x_a: 2.0,
            x_yb_t1: 2.0,
            t_a: 48.0,
            t_b: 24.0,
            tau_a: 3.0,
            tau_b: 3.0,
            t_eps: 1.0,
            eps: 1.0,
            sp_a: 0.3,
            sp_b: 0.3,
            r_a: 0.005,
            r_b: 0.005,
            f_a: 0.0,
            f_b: 0.0,
            theta_1: 0.5,
            theta_2: 0.5,
            gbm: GbmParams { mu: 0.002, sigma: 0.1 },
        }
    }
}

impl SwapParams {
    pub fn validate(&self) -> Result<(), GameError> {
        let bad = |m: &str| Err(GameError::InvalidParams(m.to_string()));
        let finite = [
            self.x_a, self.x_yb_t1, self.t_a, self.t_b, self.tau_a, self.tau_b, self.t_eps,
            self.eps, self.sp_a, self.sp_b, self.r_a, self.r_b, self.f_a, self.f_b,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite");
        }
        self.gbm.validate()?;
        if !(self.x_a > 0.0 && self.x_yb_t1 > 0.0) {
            return bad("x_a and x_yb_t1 must be positive");
        }
        if self.f_a < 0.0 || self.f_b < 0.0 {
            return bad("fees must be non-negative");
        }
        if !(self.t_a > self.t_b && self.t_b > 0.0) {
            return bad("locktimes must satisfy t_a > t_b > 0");
        }
        if self.tau_a < 0.0 || self.tau_b < 0.0 || self.t_eps < 0.0 || self.eps < 0.0 {
            return bad("delays must be non-negative");
        }
        if self.t_a < self.t_b + self.eps + self.t_eps + self.tau_a {
            return bad("t_a must be at least t_b + eps + t_eps + tau_a");
        }
        if self.t_b < self.tau_b + self.eps {
            return bad("t_b must be at least tau_b + eps");
        }
        if !(0.0..=1.0).contains(&self.theta_1) || !(0.0..=1.0).contains(&self.theta_2) {
            return bad("beliefs must lie in [0, 1]");
        }
        if !(self.sp_a > -1.0 && self.sp_b > -1.0) {
            return bad("success premiums must exceed -1");
        }
        Ok(())
    }

    /// Largest admissible claim delay `T` of A.
    pub fn max_claim_delay(&self) -> Hours {
        self.t_b - self.tau_b - self.eps
    }

    /// Largest admissible lock delay `T'` of B.
    pub fn max_lock_delay(&self) -> Hours {
        self.t_a - (self.t_b - self.eps + self.t_eps) - self.tau_a
    }

    pub fn with_x_a(mut self, x_a: f64) -> Self {
        self.x_a = x_a;
        self
    }
}

/// How A weighs B's type when deciding whether to initiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ParticipationBelief {
    /// Decide as if B is known to be interested (`θ2 = 1`), the same
    /// conditioning as the conditional success rate.
    #[default]
    Conditional,
    /// Use the stated `θ2`.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub quad: QuadratureSpec,
    /// Gauss–Legendre order for inner expectations.
    pub inner_order: usize,
    /// Points in the continuation-band scan.
    pub scan_points: usize,
    /// Band scan bracket as multiples of `x_a`.
    pub scan_lo: f64,
    pub scan_hi: f64,
    pub root_tol: f64,
    /// Discount B's stop branch at `t2` over `τ_b + T` instead of `τ_b`.
    pub uniform_discount: bool,
    pub participation: ParticipationBelief,
    pub stop_mass: StopMassHorizon,
}

/// Horizon of the probability that B declines to lock, in A's `t1` payoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum StopMassHorizon {
    /// `τ_a + T'`, the same law as the continue branch, so the two branch
    /// weights sum to one.
    #[default]
    LockTime,
    /// `τ_a` regardless of `T'`.
    Immediate,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            quad: QuadratureSpec::default(),
            inner_order: 64,
            scan_points: 512,
            scan_lo: 1e-3,
            scan_hi: 20.0,
            root_tol: 1e-10,
            uniform_discount: false,
            participation: ParticipationBelief::Conditional,
            stop_mass: StopMassHorizon::LockTime,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct T2Payoffs {
    pub a_cont: f64,
    pub b_cont: f64,
    pub a_stop: f64,
    pub b_stop: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct T1Payoffs {
    pub a_cont: f64,
    pub a_stop: f64,
    pub band: Option<Bracket>,
    /// Probability weights of B continuing and stopping as used in the
    /// continue payoff.
    pub continue_mass: f64,
    pub stop_mass: f64,
}

impl T1Payoffs {
    pub fn participates(&self) -> bool {
        self.a_cont >= self.a_stop
    }
}

/// Thresholds of one solved game at a given claim delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HtlcThresholds {
    pub x_t3_star: f64,
    pub band: Option<Bracket>,
}

/// Success rate of an initiated swap, before the participation check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitiatedRate {
    /// `θ1·θ2·I`.
    pub raw: f64,
    /// `I`, the rate given both parties are interested.
    pub conditional: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SuccessRate {
    NotApplicable,
    Rate { raw: f64, conditional: f64 },
}

impl SuccessRate {
    pub fn raw(&self) -> Option<f64> {
        match self {
            Self::Rate { raw, .. } => Some(*raw),
            Self::NotApplicable => None,
        }
    }

    pub fn conditional(&self) -> Option<f64> {
        match self {
            Self::Rate { conditional, .. } => Some(*conditional),
            Self::NotApplicable => None,
        }
    }
}

/// Solver bound to one parameter set.
#[derive(Debug, Clone)]
pub struct HtlcGame {
    params: SwapParams,
    opts: SolverOptions,
    rule: GaussLegendre,
    x3_star: f64,
}

impl HtlcGame {
    pub fn new(params: SwapParams, opts: SolverOptions) -> Result<Self, GameError> {
        params.validate()?;
        opts.quad.validate()?;
        if params.gbm.sigma == 0.0 {
            return Err(PriceModelError::DegenerateVolatility.into());
        }
        if opts.scan_points < 2 || !(opts.scan_lo > 0.0 && opts.scan_hi > opts.scan_lo) {
            return Err(GameError::InvalidParams("invalid band scan settings".into()));
        }
        Ok(Self {
            x3_star: claim_threshold_t3(&params),
            rule: GaussLegendre::new(opts.inner_order.max(2)),
            params,
            opts,
        })
    }

    pub fn params(&self) -> &SwapParams {
        &self.params
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    pub fn claim_threshold_t3(&self) -> f64 {
        self.x3_star
    }

    fn law(&self, start: f64, lambda: Hours) -> LogNormalLaw {
        let p = &self.params.gbm;
        LogNormalLaw { start, m: p.log_drift(lambda), s: p.log_sd(lambda) }
    }

    fn check_claim_delay(&self, t: Hours) -> Result<(), GameError> {
        check_window("T", t, self.params.max_claim_delay())
    }

    pub fn payoff_t3(&self, price: f64, action: Action) -> Result<(f64, f64), GameError> {
        payoff_t3(&self.params, price, action)
    }

    fn b_cont_t3(&self) -> f64 {
        let p = &self.params;
        (1.0 + p.sp_b) * p.x_a * (-p.r_b * (p.tau_a + p.t_eps)).exp() - p.f_a
    }

    fn b_stop_t3(&self, price: f64) -> f64 {
        let p = &self.params;
        price * ((p.gbm.mu - p.r_b) * p.t_b).exp() - p.f_b
    }

    fn a_cont_t3(&self, price: f64) -> f64 {
        let p = &self.params;
        (1.0 + p.sp_a) * price * ((p.gbm.mu - p.r_a) * p.tau_b).exp() - p.f_b
    }

    fn a_stop_t3(&self) -> f64 {
        let p = &self.params;
        p.x_a * (-p.r_a * p.t_a).exp() - p.f_a
    }

    /// B's continue payoff at `t2`.
    fn b_cont_t2(&self, price: f64, t: Hours) -> f64 {
        let p = &self.params;
        let tail = self.opts.quad.tail_quantile;
        let short = self.law(price, p.tau_b);
        let long = self.law(price, p.tau_b + t);
        let claimed = (1.0 - long.cdf(self.x3_star)) * self.b_cont_t3() * (-p.r_b * (p.tau_b + t)).exp();
        let stop_discount = if self.opts.uniform_discount { p.tau_b + t } else { p.tau_b };
        let refunded = (-p.r_b * stop_discount).exp()
            * short.expect_fixed(0.0, self.x3_star, |q| self.b_stop_t3(q), &self.rule, tail);
        // A malicious A never claims; B's refund value is averaged over the
        // price at t3.
        let griefed = (-p.r_b * p.tau_b).exp()
            * short.expect_fixed(0.0, f64::INFINITY, |q| self.b_stop_t3(q), &self.rule, tail);
        p.theta_1 * (claimed + refunded) + (1.0 - p.theta_1) * griefed
    }

    /// A's continue payoff at `t2`.
    fn a_cont_t2(&self, price: f64, t: Hours) -> f64 {
        let p = &self.params;
        let long = self.law(price, p.tau_b + t);
        let short = self.law(price, p.tau_b);
        let claimed = (-p.r_a * (p.tau_b + t)).exp()
            * long.expect_fixed(
                self.x3_star,
                f64::INFINITY,
                |q| self.a_cont_t3(q),
                &self.rule,
                self.opts.quad.tail_quantile,
            );
        claimed + short.cdf(self.x3_star) * self.a_stop_t3() * (-p.r_a * p.tau_b).exp()
    }

    fn a_stop_t2(&self) -> f64 {
        self.a_stop_t3()
    }

    pub fn payoff_t2(&self, price: f64, t: Hours) -> Result<T2Payoffs, GameError> {
        check_price(price)?;
        self.check_claim_delay(t)?;
        Ok(T2Payoffs {
            a_cont: self.a_cont_t2(price, t),
            b_cont: self.b_cont_t2(price, t),
            a_stop: self.a_stop_t2(),
            b_stop: price,
        })
    }

    fn scan_bracket(&self) -> Bracket {
        Bracket {
            lo: self.opts.scan_lo * self.params.x_a,
            hi: self.opts.scan_hi * self.params.x_a,
        }
    }

    /// Prices at which B is indifferent between locking and walking away.
    pub fn band_roots_t2(&self, t: Hours) -> Result<Vec<f64>, GameError> {
        self.check_claim_delay(t)?;
        Ok(numerics::find_roots(
            |x| self.b_cont_t2(x, t) - x,
            self.scan_bracket(),
            self.opts.scan_points,
            self.opts.root_tol,
        )?)
    }

    /// B's continuation band `(x1, x2]` at `t2`, or `None` when B never locks.
    pub fn continuation_band_t2(&self, t: Hours) -> Result<Option<Bracket>, GameError> {
        let roots = self.band_roots_t2(t)?;
        if roots.len() > 2 {
            log::warn!(
                "t2 continuation condition has {} crossings at x_a={} T={}; using the widest band",
                roots.len(),
                self.params.x_a,
                t
            );
        }
        Ok(numerics::widest_nonnegative_interval(
            |x| self.b_cont_t2(x, t) - x,
            &roots,
            self.scan_bracket(),
        ))
    }

    pub fn thresholds(&self, t: Hours) -> Result<HtlcThresholds, GameError> {
        Ok(HtlcThresholds {
            x_t3_star: self.x3_star,
            band: self.continuation_band_t2(t)?,
        })
    }

    fn effective_theta_2(&self) -> f64 {
        match self.opts.participation {
            ParticipationBelief::Conditional => 1.0,
            ParticipationBelief::Literal => self.params.theta_2,
        }
    }

    pub fn payoff_t1(&self, t: Hours, t_prime: Hours) -> Result<T1Payoffs, GameError> {
        let band = self.continuation_band_t2(t)?;
        self.payoff_t1_with_band(band, t, t_prime)
    }

    /// `payoff_t1` reusing a band already solved for the same `T`.
    pub fn payoff_t1_with_band(
        &self,
        band: Option<Bracket>,
        t: Hours,
        t_prime: Hours,
    ) -> Result<T1Payoffs, GameError> {
        let p = &self.params;
        self.check_claim_delay(t)?;
        check_window("T'", t_prime, p.max_lock_delay())?;
        let theta_2 = self.effective_theta_2();
        let stop_value = self.a_stop_t2() * (-p.r_a * p.tau_a).exp();
        let (cont, continue_mass, stop_mass) = match band {
            None => (0.0, 0.0, 1.0),
            Some(b) => {
                let lag = self.law(p.x_yb_t1, p.tau_a + t_prime);
                let on_time = match self.opts.stop_mass {
                    StopMassHorizon::LockTime => lag,
                    StopMassHorizon::Immediate => self.law(p.x_yb_t1, p.tau_a),
                };
                let integral =
                    lag.expect_adaptive(b.lo, b.hi, |q| self.a_cont_t2(q, t), &self.opts.quad)?;
                (
                    integral * (-p.r_a * (p.tau_a + t_prime)).exp(),
                    lag.cdf(b.hi) - lag.cdf(b.lo),
                    1.0 - on_time.cdf(b.hi) + on_time.cdf(b.lo),
                )
            }
        };
        let a_cont = theta_2 * (cont + stop_mass * stop_value) + (1.0 - theta_2) * stop_value;
        Ok(T1Payoffs { a_cont, a_stop: p.x_a, band, continue_mass, stop_mass })
    }

    /// The success-rate integral ignoring A's participation decision.
    pub fn initiated_rate(&self, t: Hours, t_prime: Hours) -> Result<InitiatedRate, GameError> {
        let band = self.continuation_band_t2(t)?;
        self.initiated_rate_with_band(band, t, t_prime)
    }

    pub fn initiated_rate_with_band(
        &self,
        band: Option<Bracket>,
        t: Hours,
        t_prime: Hours,
    ) -> Result<InitiatedRate, GameError> {
        let p = &self.params;
        self.check_claim_delay(t)?;
        check_window("T'", t_prime, p.max_lock_delay())?;
        let conditional = match band {
            None => 0.0,
            Some(b) => {
                let lag = self.law(p.x_yb_t1, p.tau_a + t_prime);
                let claim = self.law(1.0, p.tau_b + t);
                lag.expect_adaptive(
                    b.lo,
                    b.hi,
                    |q| 1.0 - claim.from_price(q).cdf(self.x3_star),
                    &self.opts.quad,
                )?
            }
        };
        Ok(InitiatedRate {
            raw: p.theta_1 * p.theta_2 * conditional,
            conditional,
        })
    }

    /// Success rate, or `NotApplicable` when A would not initiate.
    pub fn success_rate(&self, t: Hours, t_prime: Hours) -> Result<SuccessRate, GameError> {
        Ok(self.evaluate_cell(self.continuation_band_t2(t)?, t, t_prime)?.rate())
    }

    fn evaluate_cell(&self, band: Option<Bracket>, t: Hours, t_prime: Hours) -> Result<SrCell, GameError> {
        let t1 = self.payoff_t1_with_band(band, t, t_prime)?;
        let rate = self.initiated_rate_with_band(band, t, t_prime)?;
        Ok(SrCell {
            x_a: self.params.x_a,
            t,
            t_prime,
            participates: t1.participates(),
            u_a_cont_t1: t1.a_cont,
            raw_if_initiated: rate.raw,
            conditional_if_initiated: rate.conditional,
        })
    }
}

fn check_price(price: f64) -> Result<(), GameError> {
    if !(price.is_finite() && price > 0.0) {
        return Err(GameError::NonPositivePrice(price));
    }
    Ok(())
}

fn check_window(name: &'static str, value: f64, max: f64) -> Result<(), GameError> {
    if !(value >= 0.0 && value <= max + 1e-9) {
        return Err(GameError::DelayOutsideWindow { name, value, max });
    }
    Ok(())
}

/// `(payoff_A, payoff_B)` at `t3` when A claims (`Continue`) or lets the
/// locks expire (`Stop`).
pub fn payoff_t3(params: &SwapParams, price: f64, action: Action) -> Result<(f64, f64), GameError> {
    check_price(price)?;
    let p = params;
    match action {
        Action::Continue => Ok((
            (1.0 + p.sp_a) * price * (p.gbm.mu * p.tau_b).exp() * (-p.r_a * p.tau_b).exp() - p.f_b,
            (1.0 + p.sp_b) * p.x_a * (-p.r_b * (p.tau_a + p.t_eps)).exp() - p.f_a,
        )),
        Action::Stop => Ok((
            p.x_a * (-p.r_a * p.t_a).exp() - p.f_a,
            price * (p.gbm.mu * p.t_b).exp() * (-p.r_b * p.t_b).exp() - p.f_b,
        )),
        Action::Cancel => Err(GameError::InvalidAction(action)),
    }
}

/// Lowest `t3` price at which A prefers claiming to letting the locks expire.
pub fn claim_threshold_t3(params: &SwapParams) -> f64 {
    let p = params;
    (p.x_a * (-p.r_a * (p.t_a - p.tau_b)).exp() - (p.f_a - p.f_b) * (p.r_a * p.tau_b).exp())
        * (-p.gbm.mu * p.tau_b).exp()
        / (1.0 + p.sp_a)
}

/// One surface cell. The rate fields hold the integral even when A would
/// not initiate; [`SrCell::raw`] and [`SrCell::conditional`] apply the
/// participation gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrCell {
    pub x_a: f64,
    pub t: Hours,
    pub t_prime: Hours,
    pub participates: bool,
    pub u_a_cont_t1: f64,
    pub raw_if_initiated: f64,
    pub conditional_if_initiated: f64,
}

impl SrCell {
    pub fn rate(&self) -> SuccessRate {
        if self.participates {
            SuccessRate::Rate {
                raw: self.raw_if_initiated,
                conditional: self.conditional_if_initiated,
            }
        } else {
            SuccessRate::NotApplicable
        }
    }

    pub fn raw(&self) -> Option<f64> {
        self.rate().raw()
    }

    pub fn conditional(&self) -> Option<f64> {
        self.rate().conditional()
    }
}

/// Success rate over an `x_a × T × T'` grid, stored with `T'` fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrGrid {
    pub xa: Vec<f64>,
    pub t: Vec<Hours>,
    pub t_prime: Vec<Hours>,
    pub cells: Vec<SrCell>,
}

impl SrGrid {
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.t.len() + j) * self.t_prime.len() + k
    }

    pub fn cell(&self, i: usize, j: usize, k: usize) -> &SrCell {
        &self.cells[self.index(i, j, k)]
    }
}

/// Evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
            .collect(),
    }
}

/// Solves every cell of the grid. Cells sharing `(x_a, T)` share one band
/// solve; `(x_a, T)` pairs run in parallel and merge by index.
pub fn sr_surface(
    params: &SwapParams,
    opts: &SolverOptions,
    xa_grid: &[f64],
    t_grid: &[Hours],
    tp_grid: &[Hours],
) -> Result<SrGrid, GameError> {
    let games = xa_grid
        .iter()
        .map(|&x| HtlcGame::new(params.with_x_a(x), *opts))
        .collect::<Result<Vec<_>, _>>()?;
    let pairs: Vec<(usize, usize)> = (0..xa_grid.len())
        .flat_map(|i| (0..t_grid.len()).map(move |j| (i, j)))
        .collect();
    let rows = pairs
        .par_iter()
        .map(|&(i, j)| {
            let game = &games[i];
            let t = t_grid[j];
            let band = game.continuation_band_t2(t)?;
            tp_grid
                .iter()
                .map(|&tp| game.evaluate_cell(band, t, tp))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SrGrid {
        xa: xa_grid.to_vec(),
        t: t_grid.to_vec(),
        t_prime: tp_grid.to_vec(),
        cells: rows.into_iter().flatten().collect(),
    })
}

/// `(x*, x*')`: smallest and largest `x_a` on the grid for which A initiates
/// at the given delays.
pub fn participation_range(
    params: &SwapParams,
    opts: &SolverOptions,
    xa_grid: &[f64],
    t: Hours,
    t_prime: Hours,
) -> Result<Option<(f64, f64)>, GameError> {
    let ok = xa_grid
        .par_iter()
        .map(|&x| Ok((x, HtlcGame::new(params.with_x_a(x), *opts)?.payoff_t1(t, t_prime)?.participates())))
        .collect::<Result<Vec<_>, GameError>>()?;
    let inside: Vec<f64> = ok.into_iter().filter(|(_, yes)| *yes).map(|(x, _)| x).collect();
    Ok(inside.first().map(|lo| (*lo, *inside.last().unwrap())))
}

/// Convenience used by examples and tests: the price state at `t1`.
pub fn initial_state(params: &SwapParams) -> PriceState {
    PriceState { value: params.x_yb_t1, at_time: 0.0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricemodel::normal_cdf;
    use proptest::prelude::*;

    fn base() -> SwapParams {
        SwapParams::default()
    }

    fn game(p: SwapParams) -> HtlcGame {
        HtlcGame::new(p, SolverOptions::default()).unwrap()
    }

    #[test]
    fn t3_payoffs_at_baseline() {
        let (a, b) = payoff_t3(&base(), 2.0, Action::Continue).unwrap();
        assert!((a - 1.3 * 2.0 * 0.006f64.exp() * (-0.015f64).exp()).abs() < 1e-12);
        assert!((a - 2.5767).abs() < 1e-4);
        assert!((b - 2.5485).abs() < 1e-4);
        assert!(payoff_t3(&base(), 0.0, Action::Stop).is_err());
        assert!(payoff_t3(&base(), 1.0, Action::Cancel).is_err());
    }

    #[test]
    fn frictionless_t3() {
        let p = SwapParams {
            sp_a: 0.0,
            sp_b: 0.0,
            r_a: 0.0,
            r_b: 0.0,
            gbm: GbmParams { mu: 0.0, sigma: 0.1 },
            ..base()
        };
        let (a_cont, _) = payoff_t3(&p, 1.7, Action::Continue).unwrap();
        let (a_stop, _) = payoff_t3(&p, 1.7, Action::Stop).unwrap();
        assert_eq!(a_cont, 1.7);
        assert_eq!(a_stop, 2.0);
        assert_eq!(claim_threshold_t3(&p), 2.0);
        assert_eq!(payoff_t3(&p, 9.0, Action::Stop).unwrap().0, a_stop);
    }

    #[test]
    fn claim_threshold_baseline_and_monotone_in_premium() {
        let x = claim_threshold_t3(&base());
        assert!((x - 2.0 * (-0.005f64 * 45.0).exp() * (-0.006f64).exp() / 1.3).abs() < 1e-12);
        assert!((x - 1.2211).abs() < 1e-4);
        let mut last = f64::INFINITY;
        for sp in [0.0, 0.1, 0.3, 1.0] {
            let y = claim_threshold_t3(&SwapParams { sp_a: sp, ..base() });
            assert!(y < last);
            last = y;
        }
    }

    /// `∫_0^k P(p)·p dp` and `P[X ≤ k]` for the transition from `x` over `lam`.
    fn partial(x: f64, k: f64, mu: f64, sigma: f64, lam: f64) -> (f64, f64) {
        let s = sigma * lam.sqrt();
        let z = ((k / x).ln() - (mu - 0.5 * sigma * sigma) * lam) / s;
        (x * (mu * lam).exp() * normal_cdf(z - s), normal_cdf(z))
    }

    fn b_cont_closed(p: &SwapParams, x: f64, t: f64) -> f64 {
        let (mu, sig) = (p.gbm.mu, p.gbm.sigma);
        let k = claim_threshold_t3(p);
        let b_c3 = (1.0 + p.sp_b) * p.x_a * (-p.r_b * (p.tau_a + p.t_eps)).exp() - p.f_a;
        let growth = ((mu - p.r_b) * p.t_b).exp();
        let (_, c_long) = partial(x, k, mu, sig, p.tau_b + t);
        let (pe, c_short) = partial(x, k, mu, sig, p.tau_b);
        let refund = growth * pe - p.f_b * c_short;
        let mean = growth * x * (mu * p.tau_b).exp() - p.f_b;
        p.theta_1 * ((1.0 - c_long) * b_c3 * (-p.r_b * (p.tau_b + t)).exp() + (-p.r_b * p.tau_b).exp() * refund)
            + (1.0 - p.theta_1) * (-p.r_b * p.tau_b).exp() * mean
    }

    #[test]
    fn b_continue_matches_closed_form() {
        let p = SwapParams { f_a: 0.01, f_b: 0.02, ..base() };
        let g = game(p);
        for &(x, t) in &[(2.0, 0.0), (1.3, 5.0), (2.8, 20.0), (0.9, 11.5)] {
            let got = g.payoff_t2(x, t).unwrap().b_cont;
            let want = b_cont_closed(&p, x, t);
            assert!((got - want).abs() < 2e-8, "x={x} T={t}: {got} vs {want}");
        }
    }

    #[test]
    fn a_continue_matches_closed_form() {
        let p = base();
        let g = game(p);
        let (mu, sig) = (p.gbm.mu, p.gbm.sigma);
        for &(x, t) in &[(2.0, 0.0), (1.5, 8.0)] {
            let k = claim_threshold_t3(&p);
            let lam = p.tau_b + t;
            let (pe, _) = partial(x, k, mu, sig, lam);
            let tail = x * (mu * lam).exp() - pe;
            let cont = (1.0 + p.sp_a) * ((mu - p.r_a) * p.tau_b).exp() * tail * (-p.r_a * lam).exp();
            let (_, c) = partial(x, k, mu, sig, p.tau_b);
            let want = cont + c * p.x_a * (-p.r_a * p.t_a).exp() * (-p.r_a * p.tau_b).exp();
            let got = g.payoff_t2(x, t).unwrap().a_cont;
            assert!((got - want).abs() < 2e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn t2_stop_payoffs_and_windows() {
        let g = game(base());
        let a = g.payoff_t2(1.0, 0.0).unwrap();
        let b = g.payoff_t2(3.0, 20.0).unwrap();
        assert_eq!(a.a_stop, b.a_stop);
        assert!((a.a_stop - 2.0 * (-0.24f64).exp()).abs() < 1e-12);
        assert_eq!(b.b_stop, 3.0);
        assert!(matches!(g.payoff_t2(1.0, 20.5), Err(GameError::DelayOutsideWindow { .. })));
        assert!(g.payoff_t2(1.0, -1.0).is_err());
        assert!(g.payoff_t1(0.0, 21.5).is_err());
        assert_eq!(base().max_claim_delay(), 20.0);
        assert_eq!(base().max_lock_delay(), 21.0);
    }

    #[test]
    fn malicious_a_leaves_only_stop_branch() {
        let p = SwapParams { theta_1: 0.0, ..base() };
        let g = game(p);
        let x = 2.0;
        let want = (-p.r_b * p.tau_b).exp() * (x * ((p.gbm.mu - p.r_b) * p.t_b).exp() * (p.gbm.mu * p.tau_b).exp());
        assert!((g.payoff_t2(x, 0.0).unwrap().b_cont - want).abs() < 2e-8);
        assert!(g.continuation_band_t2(0.0).unwrap().is_none());
    }

    #[test]
    fn baseline_band_contains_initial_price() {
        let g = game(base());
        let band = g.continuation_band_t2(0.0).unwrap().unwrap();
        assert!(band.contains(2.0), "{band:?}");
        for x in [band.lo, band.hi] {
            assert!((g.payoff_t2(x, 0.0).unwrap().b_cont - x).abs() < 1e-8);
        }
    }

    #[test]
    fn band_root_count_matches_dense_scan() {
        let g = game(base());
        let roots = g.band_roots_t2(0.0).unwrap();
        let n = 10_000;
        let (lo, hi) = (0.002, 40.0);
        let mut changes = 0;
        let mut prev = g.payoff_t2(lo, 0.0).unwrap().b_cont - lo;
        for i in 1..n {
            let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            let v = g.payoff_t2(x, 0.0).unwrap().b_cont - x;
            if (v < 0.0) != (prev < 0.0) {
                changes += 1;
            }
            prev = v;
        }
        assert_eq!(changes, 2);
        assert_eq!(roots.len(), 2);
        assert!(roots[0] < roots[1]);
    }

    #[test]
    fn participation_at_baseline() {
        let g = game(base());
        let t1 = g.payoff_t1(0.0, 0.0).unwrap();
        assert!(t1.participates(), "{t1:?}");
        assert_eq!(t1.a_stop, 2.0);
        assert!((t1.continue_mass + t1.stop_mass - 1.0).abs() < 1e-9);
        let late = g.payoff_t1(0.0, 12.0).unwrap();
        assert!((late.continue_mass + late.stop_mass - 1.0).abs() < 1e-9);
        let opts = SolverOptions { stop_mass: StopMassHorizon::Immediate, ..Default::default() };
        let printed = HtlcGame::new(base(), opts).unwrap().payoff_t1(0.0, 12.0).unwrap();
        assert!((printed.continue_mass + printed.stop_mass - 1.0).abs() > 1e-3);
    }

    #[test]
    fn no_trust_in_b_means_no_participation() {
        let opts = SolverOptions { participation: ParticipationBelief::Literal, ..Default::default() };
        let p = SwapParams { theta_2: 0.0, ..base() };
        let g = HtlcGame::new(p, opts).unwrap();
        let t1 = g.payoff_t1(0.0, 0.0).unwrap();
        let want = (-p.r_a * p.tau_a).exp() * (p.x_a * (-p.r_a * p.t_a).exp() - p.f_a);
        assert!((t1.a_cont - want).abs() < 1e-12);
        assert!(!t1.participates());
        assert_eq!(g.success_rate(0.0, 0.0).unwrap(), SuccessRate::NotApplicable);
    }

    #[test]
    fn a_continue_nonincreasing_in_lock_delay() {
        let g = game(base());
        let band = g.continuation_band_t2(0.0).unwrap();
        let mut last = f64::INFINITY;
        for tp in 0..=21 {
            let u = g.payoff_t1_with_band(band, 0.0, tp as f64).unwrap().a_cont;
            assert!(u <= last + 1e-12, "T'={tp}");
            last = u;
        }
    }

    #[test]
    fn degenerate_beliefs_give_zero_rate() {
        for (t1, t2) in [(0.0, 0.5), (0.5, 0.0)] {
            let g = game(SwapParams { theta_1: t1, theta_2: t2, ..base() });
            assert_eq!(g.initiated_rate(0.0, 0.0).unwrap().raw, 0.0);
        }
        let g = game(base());
        assert_eq!(g.initiated_rate_with_band(None, 0.0, 0.0).unwrap().conditional, 0.0);
    }

    #[test]
    fn baseline_rate_is_high() {
        let g = game(base().with_x_a(2.3));
        let SuccessRate::Rate { raw, conditional } = g.success_rate(0.0, 0.0).unwrap() else {
            panic!("baseline should initiate");
        };
        assert!((0.85..=1.0).contains(&conditional));
        assert!((raw - 0.25 * conditional).abs() < 1e-15);
    }

    #[test]
    fn surface_layout() {
        let p = base();
        let grid = sr_surface(&p, &SolverOptions::default(), &[1.9, 2.3], &[0.0, 10.0], &[0.0, 5.0, 21.0]).unwrap();
        assert_eq!(grid.cells.len(), 12);
        let c = grid.cell(1, 1, 2);
        assert_eq!((c.x_a, c.t, c.t_prime), (2.3, 10.0, 21.0));
        let direct = game(p.with_x_a(2.3)).success_rate(10.0, 21.0).unwrap();
        assert_eq!(c.rate(), direct);
    }

    #[test]
    fn linspace_endpoints() {
        assert_eq!(linspace(1.0, 3.0, 21).len(), 21);
        assert_eq!(*linspace(1.0, 3.0, 21).last().unwrap(), 3.0);
        assert_eq!(linspace(0.0, 20.0, 21)[7], 7.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn claim_threshold_splits_actions(
            x_a in 0.5f64..4.0, sp in 0.0f64..1.0, r in 0.0f64..0.02,
            mu in -0.005f64..0.005, f_a in 0.0f64..0.05, f_b in 0.0f64..0.05, u in 0.05f64..3.0,
        ) {
            let p = SwapParams { x_a, sp_a: sp, r_a: r, f_a, f_b, gbm: GbmParams { mu, sigma: 0.1 }, ..base() };
            let k = claim_threshold_t3(&p);
            let price = k * u;
            let (c, _) = payoff_t3(&p, price, Action::Continue).unwrap();
            let (s, _) = payoff_t3(&p, price, Action::Stop).unwrap();
            if (c - s).abs() > 1e-9 {
                prop_assert_eq!(c > s, price >= k);
            }
        }

        #[test]
        fn rescaling_scales_payoffs(k in 0.2f64..5.0, x in 0.5f64..4.0, t in 0.0f64..20.0) {
            let p = SwapParams { f_a: 0.01, f_b: 0.02, ..base() };
            let q = SwapParams { x_a: k * p.x_a, x_yb_t1: k * p.x_yb_t1, f_a: k * p.f_a, f_b: k * p.f_b, ..p };
            let (gp, gq) = (game(p), game(q));
            prop_assert!((gq.claim_threshold_t3() - k * gp.claim_threshold_t3()).abs() < 1e-12 * k);
            let a = gp.payoff_t2(x, t).unwrap();
            let b = gq.payoff_t2(k * x, t).unwrap();
            prop_assert!((b.b_cont - k * a.b_cont).abs() < 1e-9 * k);
            prop_assert!((b.a_cont - k * a.a_cont).abs() < 1e-9 * k);
            prop_assert_eq!(a.b_cont >= x, b.b_cont >= k * x);
        }
    }
}
