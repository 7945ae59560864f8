//! Subcommand implementations. Each returns whether the run's checks held.

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use log::info;
use serde::Serialize;
use serde_json::{json, Value as Json};

use swapgame_core::htlcgame::{sr_surface, SrGrid};
use swapgame_core::quickswapgame::compare_participation;
use swapgame_sim::cyclic::{check_cyclic, generate, validate_plan, write_plan_jsonl};
use swapgame_sim::protocol::{
    build_htlc_instance, build_quickswap_instance, check_properties, montecarlo_htlc, montecarlo_quickswap, McCell,
    PropertyReport,
};

use crate::output::{Cell, Format, Normalization, Run, Table};
use crate::params::Params;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolChoice {
    Htlc,
    Quickswap,
    Cyclic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum McChoice {
    Htlc,
    Quickswap,
    Both,
}

pub struct Ctx<'a> {
    pub params: &'a Params,
    pub seed: u64,
    pub normalization: Normalization,
    pub format: Format,
}

fn tidy(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| (x * 1e12).round() / 1e12).collect()
}

pub const SURFACE_COLUMNS: [&str; 6] = ["x_a", "T", "T_prime", "sr_raw", "sr_conditional", "participation"];

pub fn surface_tables(grid: &SrGrid, norm: Normalization) -> (Table, Table) {
    let mut long = Table::new(SURFACE_COLUMNS);
    let mut wide = Table::new(["x_a".to_string(), "T".to_string()].into_iter().chain(grid.t_prime.iter().map(|tp| format!("tp_{tp}"))));
    for (i, &x) in grid.xa.iter().enumerate() {
        for (j, &t) in grid.t.iter().enumerate() {
            let mut row = vec![Cell::from(x), Cell::from(t)];
            for (k, &tp) in grid.t_prime.iter().enumerate() {
                let c = grid.cell(i, j, k);
                long.push(vec![x.into(), t.into(), tp.into(), c.raw().into(), c.conditional().into(), c.participates.into()]);
                row.push(match norm {
                    Normalization::Raw => c.raw(),
                    Normalization::Conditional => c.conditional(),
                }
                .into());
            }
            wide.push(row);
        }
    }
    (long, wide)
}

pub fn htlc_surface(cx: &Ctx, run: &mut Run) -> Result<(bool, Json)> {
    let p = cx.params;
    let (xa, t, tp) = (tidy(p.axis("xa")?), tidy(p.axis("t")?), tidy(p.axis("tp")?));
    info!("solving {} cells", xa.len() * t.len() * tp.len());
    let grid = sr_surface(&p.swap(), &p.solver(), &xa, &t, &tp)?;
    let (long, wide) = surface_tables(&grid, cx.normalization);
    run.table("htlc_surface", &long)?;
    run.table("htlc_surface_grid", &wide)?;
    let na = grid.cells.iter().filter(|c| !c.participates).count();
    let zero: Vec<(f64, Option<f64>)> = (0..xa.len())
        .filter(|_| t.first() == Some(&0.0) && tp.first() == Some(&0.0))
        .map(|i| (xa[i], grid.cell(i, 0, 0).conditional()))
        .collect();
    let best = zero.iter().filter_map(|(x, c)| c.map(|c| (x, c))).fold(None, |acc: Option<(f64, f64)>, (x, c)| match acc {
        Some((_, b)) if b >= c => acc,
        _ => Some((*x, c)),
    });
    Ok((
        true,
        json!({
            "cells": grid.cells.len(),
            "na_cells": na,
            "best_conditional_zero_delay": best.map(|(x, c)| json!({"x_a": x, "sr_conditional": c})),
        }),
    ))
}

pub fn quickswap_sr(cx: &Ctx, run: &mut Run) -> Result<(bool, Json)> {
    let p = cx.params;
    let (xa, t, tp) = (tidy(p.axis("xa")?), tidy(p.axis("t")?), tidy(p.axis("tp")?));
    let mut table = Table::new([
        "rho",
        "x_a",
        "sr_raw",
        "sr_conditional",
        "x_t4_star",
        "band_lower",
        "band_upper",
        "htlc_sr_raw_zero_delay",
        "htlc_sr_conditional_zero_delay",
        "htlc_sr_raw_worst",
    ]);
    let mut reports = Vec::new();
    let mut all = true;
    for rho in p.rhos() {
        let mut q = p.quick();
        q.rho = rho;
        info!("comparing participation at rho = {rho}");
        let rep = compare_participation(&p.swap(), &q, &p.solver(), &xa, &t, &tp)?;
        for r in &rep.rows {
            table.push(vec![
                rho.into(),
                r.x_a.into(),
                r.quick_raw.into(),
                r.quick_conditional.into(),
                r.x_t4_star.into(),
                r.quick_band.map(|b| b.lo).into(),
                r.quick_band.map(|b| b.hi).into(),
                r.htlc_raw_zero_delay.into(),
                r.htlc_conditional_zero_delay.into(),
                r.htlc_raw_worst.into(),
            ]);
        }
        all &= rep.quick_contains_zero_delay && rep.quick_strictly_contains_worst;
        reports.push(json!({
            "rho": rho,
            "htlc_range_zero_delay": rep.htlc_range_zero_delay,
            "htlc_range_worst": rep.htlc_range_worst,
            "quick_range": rep.quick_range,
            "quick_contains_zero_delay": rep.quick_contains_zero_delay,
            "quick_strictly_contains_worst": rep.quick_strictly_contains_worst,
        }));
    }
    run.table("quickswap_sr", &table)?;
    run.json("participation_report.json", &reports)?;
    Ok((true, json!({ "quick_contains_htlc": all, "reports": reports })))
}

fn protocol_table(rep: &PropertyReport) -> Table {
    let mut t = Table::new(["profile", "outcome", "correctness", "safety", "liveness", "net_alice", "net_bob", "witnesses"]);
    for r in &rep.rows {
        t.push(vec![
            r.profile.label().into(),
            format!("{:?}", r.outcome).into(),
            r.correctness.map_or(Cell::Missing, Cell::Bool),
            r.safety.into(),
            r.liveness.into(),
            r.net_alice.into(),
            r.net_bob.into(),
            r.witnesses.join("; ").into(),
        ]);
    }
    t
}

pub fn validate(cx: &Ctx, run: &mut Run, kind: ProtocolChoice) -> Result<(bool, Json)> {
    let p = cx.params;
    match kind {
        ProtocolChoice::Htlc => {
            let rep = check_properties(&build_htlc_instance(&p.swap())?, cx.seed)?;
            run.table("validate_htlc", &protocol_table(&rep))?;
            let grief = rep.grief_rows();
            let violations_present = !grief.is_empty() && grief.iter().all(|r| !r.safety);
            let ok = rep.all_correct() && rep.all_live() && violations_present;
            Ok((
                ok,
                json!({
                    "profiles": rep.rows.len(),
                    "correct": rep.all_correct(),
                    "live": rep.all_live(),
                    "grief_profiles": grief.len(),
                    "grief_safety_violations_present": violations_present,
                }),
            ))
        }
        ProtocolChoice::Quickswap => {
            let rep = check_properties(&build_quickswap_instance(&p.quick())?, cx.seed)?;
            run.table("validate_quickswap", &protocol_table(&rep))?;
            let ok = rep.all_correct() && rep.all_safe() && rep.all_live();
            Ok((
                ok,
                json!({
                    "profiles": rep.rows.len(),
                    "correct": rep.all_correct(),
                    "safe": rep.all_safe(),
                    "live": rep.all_live(),
                }),
            ))
        }
        ProtocolChoice::Cyclic => {
            let cp = generate(&p.cyclic())?;
            let violations = validate_plan(&cp);
            let rep = check_cyclic(&cp, cx.seed)?;
            let n = cp.spec.n;
            let mut t = Table::new(
                ["profile", "outcome", "safety", "liveness", "single_secret"]
                    .into_iter()
                    .map(String::from)
                    .chain((0..n).map(|i| format!("net_P{i}")))
                    .chain(["witnesses".to_string()]),
            );
            for r in &rep.rows {
                let mut row: Vec<Cell> = vec![
                    r.profile.join(" ").into(),
                    format!("{:?}", r.outcome).into(),
                    r.safety.into(),
                    r.liveness.into(),
                    r.single_secret.into(),
                ];
                row.extend(r.net_values.iter().map(|&v| Cell::from(v)));
                row.push(r.witnesses.join("; ").into());
                t.push(row);
            }
            run.table("validate_cyclic", &t)?;
            let ok = violations.is_empty() && rep.all_hold();
            Ok((ok, json!({ "n": n, "profiles": rep.rows.len(), "plan_violations": violations, "all_hold": rep.all_hold() })))
        }
    }
}

fn mc_row(c: &McCell, scale: f64) -> Vec<Cell> {
    let htlc = matches!(c.kind, swapgame_sim::protocol::ProtocolKind::Htlc);
    vec![
        (if htlc { "htlc" } else { "quickswap" }).into(),
        c.x_a.into(),
        if htlc { c.t.into() } else { Cell::Missing },
        if htlc { c.t_prime.into() } else { Cell::Missing },
        (c.analytic * scale).into(),
        (c.empirical * scale).into(),
        (c.std_error * scale).into(),
        c.z.into(),
        c.paths.into(),
        c.successes.into(),
    ]
}

pub const MIN_PATHS: u64 = 1_000;

pub fn montecarlo(cx: &Ctx, run: &mut Run, kind: McChoice) -> Result<(bool, Json)> {
    let p = cx.params;
    let paths = p.int("paths");
    if paths < MIN_PATHS {
        bail!("paths = {paths} is below the minimum of {MIN_PATHS}");
    }
    let swap = p.swap();
    let scale = match cx.normalization {
        Normalization::Raw => 1.0,
        Normalization::Conditional => {
            let th = swap.theta_1 * swap.theta_2;
            if th <= 0.0 {
                bail!("conditional normalization needs theta_1 * theta_2 > 0");
            }
            1.0 / th
        }
    };
    let mut cells = Vec::new();
    if kind != McChoice::Quickswap {
        for (i, (x, t, tp)) in p.htlc_cells()?.into_iter().enumerate() {
            info!("htlc cell x_a = {x}, T = {t}, T' = {tp}");
            let c = montecarlo_htlc(&swap.with_x_a(x), &p.solver(), t, tp, paths, cx.seed.wrapping_add(i as u64))
                .with_context(|| format!("htlc cell x_a = {x}, T = {t}, T' = {tp}"))?;
            cells.push(c);
        }
    }
    if kind != McChoice::Htlc {
        for (i, &x) in p.list("mc_quick_xa").iter().enumerate() {
            info!("quickswap cell x_a = {x}");
            let c = montecarlo_quickswap(&p.quick().with_x_a(x), &p.solver(), paths, cx.seed.wrapping_add(1_000 + i as u64))
                .with_context(|| format!("quickswap cell x_a = {x}"))?;
            cells.push(c);
        }
    }
    let mut table = Table::new([
        "kind", "x_a", "T", "T_prime", "analytic", "empirical", "std_error", "z", "paths", "successes",
    ]);
    for c in &cells {
        table.push(mc_row(c, scale));
    }
    run.table("montecarlo", &table)?;
    let max_z = cells.iter().map(|c| c.z.abs()).fold(0.0, f64::max);
    let exceeds = cells.iter().any(|c| c.z.abs() > 3.0);
    Ok((true, json!({ "cells": cells.len(), "paths": paths, "max_abs_z": max_z, "any_abs_z_above_3": exceeds })))
}

pub fn cyclic_plan(cx: &Ctx, run: &mut Run) -> Result<(bool, Json)> {
    let cp = generate(&cx.params.cyclic())?;
    match cx.format {
        Format::Json => {
            let mut buf = Vec::new();
            write_plan_jsonl(&cp, &mut buf)?;
            run.text("cyclic_plan.jsonl", &buf)?;
        }
        Format::Csv => {
            let mut t = Table::new([
                "step", "start", "label", "party", "receiver", "chain", "kind", "amount", "locktime", "hashlock", "early_refund",
            ]);
            for a in &cp.actions {
                t.push(vec![
                    (a.step as u64).into(),
                    a.start.into(),
                    a.label.as_str().into(),
                    a.party.as_str().into(),
                    a.receiver.as_str().into(),
                    a.chain.as_str().into(),
                    format!("{:?}", a.kind).to_lowercase().into(),
                    a.amount.into(),
                    a.locktime.into(),
                    a.hashlock.join("|").into(),
                    a.early_refund.as_deref().map_or(Cell::Missing, Cell::from),
                ]);
            }
            run.table("cyclic_plan", &t)?;
        }
    }
    let violations = validate_plan(&cp);
    Ok((violations.is_empty(), json!({ "n": cp.spec.n, "locks": cp.actions.len(), "violations": violations })))
}
