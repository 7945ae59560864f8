//! Sampling oracles for the price model and both game solvers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use swapgame_core::htlcgame::{Action, HtlcGame, SolverOptions, SwapParams};
use swapgame_core::pricemodel::{self, GbmParams, PriceState};
use swapgame_core::quickswapgame::{QuickSwapGame, QuickSwapParams};

struct Stats {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl Stats {
    fn new() -> Self {
        Self { n: 0.0, sum: 0.0, sum_sq: 0.0 }
    }

    fn push(&mut self, x: f64) {
        self.n += 1.0;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n
    }

    fn stderr(&self) -> f64 {
        let m = self.mean();
        ((self.sum_sq / self.n - m * m).max(0.0) / self.n).sqrt()
    }

    fn assert_within(&self, want: f64, z: f64, what: &str) {
        let (m, se) = (self.mean(), self.stderr());
        assert!((m - want).abs() <= z * se, "{what}: sample {m} ± {se}, analytic {want}");
    }
}

/// Draws the price `lambda` hours ahead from `x`.
fn step(rng: &mut ChaCha8Rng, gbm: &GbmParams, x: f64, lambda: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    x * ((gbm.mu - 0.5 * gbm.sigma * gbm.sigma) * lambda + gbm.sigma * lambda.sqrt() * z).exp()
}

fn baseline() -> (PriceState, GbmParams) {
    (PriceState::at_origin(2.0), GbmParams::new(0.002, 0.1).unwrap())
}

#[test]
fn expected_price_matches_sample_mean() {
    let (s, p) = baseline();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut stats = Stats::new();
    for _ in 0..1_000_000 {
        stats.push(step(&mut rng, &p, 2.0, 3.0));
    }
    stats.assert_within(pricemodel::expected_price(&s, &p, 3.0).unwrap(), 3.0, "mean");
}

#[test]
fn pdf_and_cdf_match_sampled_endpoints() {
    let (s, p) = baseline();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 1_000_000;
    let (mut below, mut in_bin) = (Stats::new(), Stats::new());
    for _ in 0..n {
        let x = step(&mut rng, &p, 2.0, 3.0);
        below.push(if x <= 2.0 { 1.0 } else { 0.0 });
        in_bin.push(if (1.995..2.005).contains(&x) { 1.0 } else { 0.0 });
    }
    below.assert_within(pricemodel::transition_cdf(2.0, &s, &p, 3.0).unwrap(), 3.0, "cdf");
    // Bin average of the density, 0.01 wide around 2.0.
    let bin = (pricemodel::transition_cdf(2.005, &s, &p, 3.0).unwrap()
        - pricemodel::transition_cdf(1.995, &s, &p, 3.0).unwrap())
        / 0.01;
    let density = pricemodel::transition_pdf(2.0, &s, &p, 3.0).unwrap();
    assert!((bin - density).abs() < 1e-4 * density);
    let hist = in_bin.mean() / 0.01;
    let se = in_bin.stderr() / 0.01;
    assert!((hist - density).abs() <= 3.0 * se, "histogram {hist} ± {se} vs pdf {density}");
}

#[test]
fn path_ensemble_mean() {
    let (s, p) = baseline();
    let mut stats = Stats::new();
    for seed in 0..100_000u64 {
        let path = pricemodel::sample_path(&s, &p, 3.0, 1.0, seed).unwrap();
        stats.push(path.last().unwrap().value);
    }
    stats.assert_within(pricemodel::expected_price(&s, &p, 3.0).unwrap(), 3.0, "ensemble");
}

#[test]
fn cdf_derivative_is_pdf() {
    let (s, p) = baseline();
    for x in [1.6, 1.8, 2.0, 2.2, 2.5] {
        let h = 1e-5;
        let d = (pricemodel::transition_cdf(x + h, &s, &p, 3.0).unwrap()
            - pricemodel::transition_cdf(x - h, &s, &p, 3.0).unwrap())
            / (2.0 * h);
        assert!((d - pricemodel::transition_pdf(x, &s, &p, 3.0).unwrap()).abs() < 1e-6);
    }
    let mut last = 0.0;
    for i in 1..400 {
        let c = pricemodel::transition_cdf(i as f64 * 0.01, &s, &p, 3.0).unwrap();
        assert!(c >= last);
        last = c;
    }
}

#[test]
fn htlc_b_continue_payoff_matches_sampling() {
    let p = SwapParams::default();
    let game = HtlcGame::new(p, SolverOptions::default()).unwrap();
    let x3 = game.claim_threshold_t3();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut stats = Stats::new();
    let disc = (-p.r_b * p.tau_b).exp();
    for _ in 0..1_000_000 {
        let price = step(&mut rng, &p.gbm, 2.0, p.tau_b);
        let (_, cont) = game.payoff_t3(price, Action::Continue).unwrap();
        let (_, stop) = game.payoff_t3(price, Action::Stop).unwrap();
        let interested = if price >= x3 { cont } else { stop };
        stats.push(disc * (p.theta_1 * interested + (1.0 - p.theta_1) * stop));
    }
    stats.assert_within(game.payoff_t2(2.0, 0.0).unwrap().b_cont, 3.0, "u_B(cont,t2)");
}

fn htlc_rate_by_sampling(p: &SwapParams, t: f64, tp: f64, seed: u64) -> (f64, f64) {
    let game = HtlcGame::new(*p, SolverOptions::default()).unwrap();
    let band = game.continuation_band_t2(t).unwrap().unwrap();
    let x3 = game.claim_threshold_t3();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Stats::new();
    for _ in 0..1_000_000 {
        let p2 = step(&mut rng, &p.gbm, p.x_yb_t1, p.tau_a + tp);
        let ok = band.contains(p2) && step(&mut rng, &p.gbm, p2, p.tau_b + t) >= x3;
        stats.push(if ok { 1.0 } else { 0.0 });
    }
    let analytic = game.initiated_rate(t, tp).unwrap().conditional;
    assert!(
        (stats.mean() - analytic).abs() <= 3.0 * stats.stderr(),
        "T={t} T'={tp}: sampled {} ± {}, analytic {analytic}",
        stats.mean(),
        stats.stderr()
    );
    (stats.mean(), analytic)
}

#[test]
fn htlc_rate_matches_sampling() {
    let p = SwapParams::default();
    let (sampled, analytic) = htlc_rate_by_sampling(&p, 0.0, 0.0, 14);
    assert!((sampled - analytic).abs() <= 0.005);
    htlc_rate_by_sampling(&p.with_x_a(2.4), 7.0, 13.0, 15);
}

#[test]
fn quick_swap_rate_matches_sampling() {
    let q = QuickSwapParams::default();
    let p = q.base;
    let game = QuickSwapGame::new(q, SolverOptions::default()).unwrap();
    let band = game.continuation_band_t3().unwrap().unwrap();
    let x4 = game.claim_threshold_t4();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut stats = Stats::new();
    for _ in 0..1_000_000 {
        let p3 = step(&mut rng, &p.gbm, p.x_yb_t1, p.tau_a);
        let ok = band.contains(p3) && step(&mut rng, &p.gbm, p3, p.tau_b) >= x4;
        stats.push(if ok { 1.0 } else { 0.0 });
    }
    let analytic = game.success_rate().unwrap().conditional;
    stats.assert_within(analytic, 3.0, "quick swap SR");
    assert!((stats.mean() - analytic).abs() <= 0.005);
}

#[test]
fn quick_swap_a_continue_t2_matches_sampling() {
    let q = QuickSwapParams::default();
    let p = q.base;
    let game = QuickSwapGame::new(q, SolverOptions::default()).unwrap();
    let band = game.continuation_band_t3().unwrap().unwrap();
    let x4 = game.claim_threshold_t4();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut stats = Stats::new();
    let (a_stop3, _) = game.payoff_t3(1.0, Action::Stop).unwrap();
    for _ in 0..1_000_000 {
        let p3 = step(&mut rng, &p.gbm, 2.0, p.tau_a);
        let interested = if band.contains(p3) {
            let p4 = step(&mut rng, &p.gbm, p3, p.tau_b);
            let action = if p4 >= x4 { Action::Continue } else { Action::Cancel };
            game.payoff_t4(p4, action).unwrap().0 * (-p.r_a * p.tau_b).exp()
        } else {
            a_stop3
        };
        let v = p.theta_2 * interested + (1.0 - p.theta_2) * a_stop3;
        stats.push(v * (-p.r_a * p.tau_a).exp());
    }
    let (analytic, _) = game.payoff_t2(2.0, Action::Continue).unwrap();
    stats.assert_within(analytic, 3.0, "u_A(cont,t2)");
}
