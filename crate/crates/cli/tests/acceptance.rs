//! Acceptance run. Prints one PASS/FAIL line per criterion and exits nonzero
//! if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use swapgame_core::htlcgame::{self, sr_surface, SolverOptions, SrGrid, SwapParams};
use swapgame_core::pricemodel::{self, erfc, GbmParams, PriceState};
use swapgame_core::quickswapgame::{self, compare_participation, QuickSwapParams};
use swapgame_sim::cyclic::{check_cyclic, generate, validate_plan, CyclicSpec};
use swapgame_sim::protocol::{
    build_htlc_instance, build_quickswap_instance, check_properties, montecarlo_htlc, montecarlo_quickswap,
};
use swapgame_sim::Outcome;

const SURFACE_BUDGET: Duration = Duration::from_secs(300);
const MC_BUDGET: Duration = Duration::from_secs(120);
const GRID_BUDGET: Duration = Duration::from_secs(60);
const MC_PATHS: u64 = 100_000;
const Z_LIMIT: f64 = 3.0;
/// Slack for quadrature noise when comparing neighbouring surface cells.
const MONOTONE_SLACK: f64 = 1e-9;

struct Verdict {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: u8, name: &'static str, pass: bool, detail: String) -> Verdict {
    Verdict { id, name, pass, detail }
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| ((lo + (hi - lo) * i as f64 / (n - 1) as f64) * 1e12).round() / 1e12).collect()
}

fn surface_axes() -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    (grid(1.0, 3.0, 21), grid(0.0, 20.0, 21), grid(0.0, 20.0, 21))
}

fn zero_delay_conditional(g: &SrGrid) -> Vec<(f64, Option<f64>)> {
    g.xa.iter().enumerate().map(|(i, &x)| (x, g.cell(i, 0, 0).conditional())).collect()
}

fn criterion_1(surface: &SrGrid, elapsed: Duration) -> Verdict {
    let hits: Vec<f64> =
        zero_delay_conditional(surface).into_iter().filter(|(_, c)| c.is_some_and(|c| c >= 0.85)).map(|(x, _)| x).collect();
    let peak = zero_delay_conditional(surface).into_iter().filter_map(|(x, c)| c.map(|c| (x, c))).fold((0.0, 0.0), |a, b| {
        if b.1 > a.1 {
            b
        } else {
            a
        }
    });
    let pass = !hits.is_empty() && elapsed < SURFACE_BUDGET;
    verdict(
        1,
        "sigma = 0.1 surface, conditional SR >= 0.85 at T = T' = 0",
        pass,
        format!(
            "x_a with SR >= 0.85: {:?}; peak {:.4} at x_a = {}; 21x21x21 surface in {:.2?}",
            hits, peak.1, peak.0, elapsed
        ),
    )
}

fn criterion_2(opts: &SolverOptions) -> Verdict {
    let mut p = SwapParams::default();
    p.gbm.sigma = 0.2;
    let (xa, _, _) = surface_axes();
    let g = match sr_surface(&p, opts, &xa, &[0.0], &[0.0]) {
        Ok(g) => g,
        Err(e) => return verdict(2, "sigma = 0.2 surface", false, format!("solver error: {e}")),
    };
    let (mut best_x, mut best) = (f64::NAN, f64::NEG_INFINITY);
    for c in &g.cells {
        if c.conditional_if_initiated > best {
            best = c.conditional_if_initiated;
            best_x = c.x_a;
        }
    }
    let participating = g.cells.iter().filter(|c| c.participates).count();
    let pass = (0.45..=0.75).contains(&best);
    verdict(
        2,
        "sigma = 0.2 surface, conditional SR at T = T' = 0 in [0.45, 0.75]",
        pass,
        format!(
            "peak if-initiated conditional SR {best:.4} at x_a = {best_x}; cells where A initiates: {participating} of {}",
            g.cells.len()
        ),
    )
}

fn criterion_3(g: &SrGrid) -> Verdict {
    let mut rises = Vec::new();
    let mut na_breaks = Vec::new();
    let (nx, nt, ntp) = (g.xa.len(), g.t.len(), g.t_prime.len());
    for i in 0..nx {
        for j in 0..nt {
            for k in 0..ntp {
                let here = g.cell(i, j, k).conditional();
                for (nj, nk) in [(j + 1, k), (j, k + 1)] {
                    if nj >= nt || nk >= ntp {
                        continue;
                    }
                    let next = g.cell(i, nj, nk).conditional();
                    match (here, next) {
                        (Some(a), Some(b)) if b > a + MONOTONE_SLACK => {
                            rises.push(format!("x_a={} ({},{})->({},{}) {a:.4}->{b:.4}", g.xa[i], g.t[j], g.t_prime[k], g.t[nj], g.t_prime[nk]))
                        }
                        (None, Some(_)) => na_breaks.push(format!(
                            "x_a={} NA at ({},{}) but not at ({},{})",
                            g.xa[i], g.t[j], g.t_prime[k], g.t[nj], g.t_prime[nk]
                        )),
                        _ => {}
                    }
                }
            }
        }
    }
    let pass = rises.is_empty() && na_breaks.is_empty();
    let mut detail = format!("{} increasing steps, {} NA cells below applicable ones", rises.len(), na_breaks.len());
    for w in rises.iter().chain(&na_breaks).take(4) {
        detail.push_str("; ");
        detail.push_str(w);
    }
    verdict(3, "SR nonincreasing in T and T', NA only at high delays", pass, detail)
}

fn criterion_4(opts: &SolverOptions) -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let base = SwapParams::default();
    let mut lines = Vec::new();
    let mut worst = 0.0_f64;
    let mut errors = Vec::new();
    for i in 0..5u64 {
        let x = (rng.random_range(15..=25) as f64) / 10.0;
        let t = rng.random_range(0..=10) as f64;
        let tp = rng.random_range(0..=10) as f64;
        match montecarlo_htlc(&base.with_x_a(x), opts, t, tp, MC_PATHS, 7_000 + i) {
            Ok(c) => {
                worst = worst.max(c.z.abs());
                lines.push(format!("htlc({x},{t},{tp}) z={:.2}", c.z));
            }
            Err(e) => errors.push(e.to_string()),
        }
    }
    for i in 0..5u64 {
        let x = (rng.random_range(10..=30) as f64) / 10.0;
        match montecarlo_quickswap(&QuickSwapParams::default().with_x_a(x), opts, MC_PATHS, 8_000 + i) {
            Ok(c) => {
                worst = worst.max(c.z.abs());
                lines.push(format!("quick({x}) z={:.2}", c.z));
            }
            Err(e) => errors.push(e.to_string()),
        }
    }
    let elapsed = start.elapsed();
    let pass = errors.is_empty() && lines.len() == 10 && worst <= Z_LIMIT && elapsed < MC_BUDGET;
    verdict(
        4,
        "analytic SR within 3 standard errors of Monte Carlo",
        pass,
        format!("max |z| {worst:.2} over {} cells in {elapsed:.2?}: {}{}", lines.len(), lines.join(", "), errors.join("; ")),
    )
}

fn criterion_5(opts: &SolverOptions) -> Verdict {
    let (xa, t, tp) = surface_axes();
    let q = QuickSwapParams { rho: 0.001, ..QuickSwapParams::default() };
    match compare_participation(&q.base, &q, opts, &xa, &t, &tp) {
        Ok(r) => verdict(
            5,
            "Quick Swap nonzero-SR range contains the HTLC ranges",
            r.quick_contains_zero_delay && r.quick_strictly_contains_worst,
            format!(
                "quick {:?}, htlc at zero delay {:?}, htlc over all delays {:?}; contains {}, strictly contains {}",
                r.quick_range,
                r.htlc_range_zero_delay,
                r.htlc_range_worst,
                r.quick_contains_zero_delay,
                r.quick_strictly_contains_worst
            ),
        ),
        Err(e) => verdict(5, "Quick Swap nonzero-SR range contains the HTLC ranges", false, e.to_string()),
    }
}

fn criterion_6() -> Verdict {
    let name = "strategy grid: Quick Swap correct, safe, live; HTLC grief unsafe";
    let start = Instant::now();
    let quick = build_quickswap_instance(&QuickSwapParams::default()).and_then(|i| check_properties(&i, 1));
    let htlc = build_htlc_instance(&SwapParams::default()).and_then(|i| check_properties(&i, 1));
    let elapsed = start.elapsed();
    let (quick, htlc) = match (quick, htlc) {
        (Ok(q), Ok(h)) => (q, h),
        (q, h) => return verdict(6, name, false, format!("{:?} {:?}", q.err(), h.err())),
    };
    let grief = htlc.grief_rows();
    let grief_unsafe = !grief.is_empty() && grief.iter().all(|r| !r.safety);
    let pass = quick.all_correct()
        && quick.all_safe()
        && quick.all_live()
        && htlc.all_live()
        && htlc.all_correct()
        && grief_unsafe
        && elapsed < GRID_BUDGET;
    verdict(
        6,
        name,
        pass,
        format!(
            "quick: {} profiles, correct {}, safe {}, live {}; htlc: {} profiles, live {}, {} grief profiles all unsafe {}; {elapsed:.2?}",
            quick.rows.len(),
            quick.all_correct(),
            quick.all_safe(),
            quick.all_live(),
            htlc.rows.len(),
            htlc.all_live(),
            grief.len(),
            grief_unsafe
        ),
    )
}

fn criterion_7() -> Verdict {
    let name = "cyclic swaps for n = 2..5";
    let mut parts = Vec::new();
    let mut pass = true;
    for n in 2..=5 {
        let cp = match generate(&CyclicSpec::uniform(n)) {
            Ok(cp) => cp,
            Err(e) => return verdict(7, name, false, format!("n = {n}: {e}")),
        };
        let violations = validate_plan(&cp);
        let rep = match check_cyclic(&cp, 3) {
            Ok(r) => r,
            Err(e) => return verdict(7, name, false, format!("n = {n}: {e}")),
        };
        let compliant = &rep.rows[0];
        let swapped_ok = compliant.profile.iter().all(|s| s == "compliant") && compliant.outcome == Outcome::Swapped;
        let grief_positions = (0..n)
            .filter(|&p| rep.rows.iter().any(|r| r.profile[p].starts_with("grief")))
            .count();
        let grief_safe = rep.rows.iter().filter(|r| r.profile.iter().any(|s| s.starts_with("grief"))).all(|r| r.safety);
        let ok = violations.is_empty() && swapped_ok && grief_positions == n && grief_safe && rep.all_hold();
        pass &= ok;
        parts.push(format!("n={n}: {} profiles {}", rep.rows.len(), if ok { "ok" } else { "violated" }));
    }
    let qs = QuickSwapParams::default();
    let same_shape = match (generate(&CyclicSpec::from_quickswap(&qs)), build_quickswap_instance(&qs)) {
        (Ok(cp), Ok(inst)) => cp.plan.shape() == inst.plan.shape(),
        _ => false,
    };
    pass &= same_shape;
    parts.push(format!("n=2 lock graph equals two-party Quick Swap: {same_shape}"));
    verdict(7, name, pass, parts.join("; "))
}

/// Composite Simpson rule with `n` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(a) + f(b) + inner) * h / 3.0
}

/// Lowest price in `[lo, hi]` at which `gain` turns nonnegative, by scan and bisection.
fn sign_change(gain: impl Fn(f64) -> f64, lo: f64, hi: f64) -> Option<f64> {
    let steps = 10_000;
    let mut prev = lo;
    for i in 1..=steps {
        let x = lo + (hi - lo) * i as f64 / steps as f64;
        if gain(prev) < 0.0 && gain(x) >= 0.0 {
            let (mut a, mut b) = (prev, x);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if gain(m) < 0.0 {
                    a = m
                } else {
                    b = m
                }
            }
            return Some(0.5 * (a + b));
        }
        prev = x;
    }
    None
}

fn criterion_8() -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;
    let mut check = |ok: bool, what: String| {
        pass &= ok;
        if !ok {
            notes.push(what);
        }
    };

    let state = PriceState::at_origin(2.0);
    let mut worst_norm = 0.0_f64;
    let mut worst_deriv = 0.0_f64;
    for (mu, sigma, lambda) in [(0.002, 0.1, 3.0), (0.002, 0.2, 24.0), (-0.01, 0.05, 0.5), (0.0, 0.3, 48.0)] {
        let g = GbmParams { mu, sigma };
        let (m, s) = (mu * lambda - 0.5 * sigma * sigma * lambda, sigma * lambda.sqrt());
        let (m, s) = (state.value.ln() + m, s);
        let mass = simpson(
            |u| pricemodel::transition_pdf(u.exp(), &state, &g, lambda).unwrap() * u.exp(),
            m - 14.0 * s,
            m + 14.0 * s,
            20_000,
        );
        worst_norm = worst_norm.max((mass - 1.0).abs());
        for q in [-2.0, -0.7, 0.0, 0.4, 1.5, 2.5] {
            let x = (m + q * s).exp();
            let h = 1e-5 * x;
            let cdf = |y: f64| pricemodel::transition_cdf(y, &state, &g, lambda).unwrap();
            let slope = (cdf(x + h) - cdf(x - h)) / (2.0 * h);
            worst_deriv = worst_deriv.max((slope - pricemodel::transition_pdf(x, &state, &g, lambda).unwrap()).abs());
        }
    }
    check(worst_norm <= 1e-8, format!("pdf mass error {worst_norm:e}"));
    check(worst_deriv <= 1e-6, format!("cdf slope vs pdf {worst_deriv:e}"));

    let mut worst_sym = 0.0_f64;
    for i in 0..=600 {
        let x = -6.0 + 0.02 * i as f64;
        worst_sym = worst_sym.max((erfc(x) + erfc(-x) - 2.0).abs());
    }
    check(erfc(0.0) == 1.0, format!("erfc(0) = {}", erfc(0.0)));
    check(worst_sym <= 1e-12, format!("erfc symmetry {worst_sym:e}"));

    let g = GbmParams { mu: 0.002, sigma: 0.1 };
    let horizon = 24.0;
    let (mut sum, mut sq) = (0.0, 0.0);
    let n = 100_000u64;
    for seed in 0..n {
        let v = pricemodel::sample_path(&state, &g, horizon, 1.0, 90_000 + seed).unwrap().last().unwrap().value;
        sum += v;
        sq += v * v;
    }
    let mean = sum / n as f64;
    let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
    let want = state.value * (g.mu * horizon).exp();
    let z_mean = (mean - want) / se;
    check(z_mean.abs() <= 3.0, format!("ensemble mean z = {z_mean:.2}"));

    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut worst_t3 = 0.0_f64;
    let mut worst_t4 = 0.0_f64;
    for _ in 0..50 {
        let p = SwapParams {
            x_a: rng.random_range(1.0..3.0),
            sp_a: rng.random_range(0.05..0.6),
            r_a: rng.random_range(0.0..0.02),
            gbm: GbmParams { mu: rng.random_range(-0.01..0.01), sigma: 0.1 },
            tau_a: rng.random_range(1.0..5.0),
            tau_b: rng.random_range(1.0..5.0),
            f_a: rng.random_range(0.0..0.02),
            f_b: rng.random_range(0.0..0.02),
            ..SwapParams::default()
        };
        // A at t3: claim now, or let both locks expire.
        let claim = |x: f64| (1.0 + p.sp_a) * x * (p.gbm.mu * p.tau_b).exp() * (-p.r_a * p.tau_b).exp() - p.f_b;
        let expire = p.x_a * (-p.r_a * p.t_a).exp() - p.f_a;
        match sign_change(|x| claim(x) - expire, 1e-3, 20.0) {
            Some(x) => worst_t3 = worst_t3.max((x - htlcgame::claim_threshold_t3(&p)).abs()),
            None => worst_t3 = f64::INFINITY,
        }
        // A at t4 in Quick Swap: redeem, or cancel; the premium refund is common to both.
        let q = QuickSwapParams { base: p, ..QuickSwapParams::default() };
        let redeem = |x: f64| (1.0 + p.sp_a) * x * ((p.gbm.mu - p.r_a) * p.tau_b).exp() - p.f_a - p.f_b;
        let cancel = p.x_a * (-p.r_a * (2.0 * p.t_eps + p.tau_b + p.tau_a)).exp() - 2.0 * p.f_a;
        match sign_change(|x| redeem(x) - cancel, 1e-3, 20.0) {
            Some(x) => worst_t4 = worst_t4.max((x - quickswapgame::claim_threshold_t4(&q)).abs()),
            None => worst_t4 = f64::INFINITY,
        }
    }
    check(worst_t3 <= 1e-6, format!("t3 threshold error {worst_t3:e}"));
    check(worst_t4 <= 1e-6, format!("t4 threshold error {worst_t4:e}"));

    let detail = format!(
        "pdf mass {worst_norm:.1e}, cdf slope {worst_deriv:.1e}, erfc symmetry {worst_sym:.1e}, ensemble z {z_mean:.2}, thresholds {worst_t3:.1e}/{worst_t4:.1e}{}",
        if notes.is_empty() { String::new() } else { format!("; failed: {}", notes.join(", ")) }
    );
    verdict(8, "numerical foundations", pass, detail)
}

fn main() -> ExitCode {
    let opts = SolverOptions::default();
    let (xa, t, tp) = surface_axes();
    let start = Instant::now();
    let surface = sr_surface(&SwapParams::default(), &opts, &xa, &t, &tp);
    let elapsed = start.elapsed();

    let mut verdicts = Vec::new();
    match &surface {
        Ok(g) => {
            verdicts.push(criterion_1(g, elapsed));
            verdicts.push(criterion_2(&opts));
            verdicts.push(criterion_3(g));
        }
        Err(e) => {
            verdicts.push(verdict(1, "sigma = 0.1 surface", false, format!("solver error: {e}")));
            verdicts.push(criterion_2(&opts));
            verdicts.push(verdict(3, "delay monotonicity", false, format!("solver error: {e}")));
        }
    }
    verdicts.push(criterion_4(&opts));
    verdicts.push(criterion_5(&opts));
    verdicts.push(criterion_6());
    verdicts.push(criterion_7());
    verdicts.push(criterion_8());

    for v in &verdicts {
        println!("criterion {}: {} | {} | {}", v.id, if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail);
    }
    let failed = verdicts.iter().filter(|v| !v.pass).count();
    println!("acceptance: {} of {} criteria pass", verdicts.len() - failed, verdicts.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
