//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//! Runs as a plain binary (`harness = false`) so the lines always reach the output.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use hetlb::criticality::{
    epsilon_allocation, refinement_history, solve_minimax_routing, PartitionPlan, RoutingMatrix,
    SearchOptions,
};
use hetlb::fluid::{icrd_fixed_point, stolyar_fixed_point};
use hetlb::model::{build_instance, ArrivalRateFunction, MembershipMap, StepwiseRateFunction, SystemInstance};
use hetlb::policies::{icrd_reserve_shrinking, PolicySpec};
use hetlb::simulator::{
    coupled_dominance_run, mean_and_stderr, simulate, steady_state_estimate, uniform_grid,
    CouplingMode, InitialState, SimOptions, SimParams, Trace, TraceLayout,
};
use hetlb_cli::commands::{nonincreasing_within, run_policy, tail_gap, PolicyRun, Stat};
use hetlb_cli::{worker_pool, Experiment, ExperimentConfig, PolicyName};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::ThreadPool;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

/// The reference configuration with eight replications from seed 1.
fn reference() -> Experiment {
    let mut cfg = ExperimentConfig::reference();
    cfg.simulation.replications = 8;
    cfg.simulation.seed = 1;
    cfg.simulation.warmup = 0.5;
    Experiment::new(cfg).unwrap()
}

fn run(exp: &Experiment, pool: &ThreadPool, name: PolicyName, n: usize, horizon: f64, step: f64, init: InitialState) -> PolicyRun {
    let instance = exp.instance(n).unwrap();
    run_policy(exp, pool, name, &instance, horizon, step, init).unwrap()
}

fn icrd_fixed_point_matches(pool: &ThreadPool) -> Verdict {
    let exp = reference();
    let plan = exp.plan().unwrap();
    let target = icrd_fixed_point(&plan.lambda_h, &plan.p, &plan.mu).unwrap();
    let r = run(&exp, pool, PolicyName::Icrd, 2000, 200.0, 2.0, InitialState::Empty);
    let (mut worst_rel, mut worst_ratio) = (0.0f64, 0.0f64);
    for h in 0..plan.classes() {
        let level = |l: usize| Stat::of(r.summaries.iter().map(|s| s.tail(h + 1, h, l))).mean;
        let (x1, x2) = (level(1), level(2));
        worst_rel = worst_rel.max((x1 - target[h][h]).abs() / target[h][h]);
        worst_ratio = worst_ratio.max(x2 / x1);
    }
    verdict(
        worst_rel <= 0.05 && worst_ratio <= 0.01,
        format!("max relative error {worst_rel:.4} (<= 0.05), max X2/X1 {worst_ratio:.5} (<= 0.01)"),
    )
}

/// Sup over the grid of |X(t) - x(t)| for every (m, k), maximised over (m, k), for the
/// replication-mean curve and for single replications (averaged).
fn fluid_gap(exp: &Experiment, pool: &ThreadPool, n: usize) -> (f64, f64) {
    let r = run(exp, pool, PolicyName::Spd, n, 20.0, 0.2, InitialState::Empty);
    let fluid = exp.fluid().unwrap();
    let times = r.mean.times();
    let zeros = vec![vec![0.0; fluid.rate_classes()]; fluid.server_types()];
    let curves = fluid.curves(&zeros, &times).unwrap();
    let sup = |t: &Trace, m: usize, k: usize| -> f64 {
        (0..times.len()).map(|s| (t.busy(s, m, k) - curves[m][k][s]).abs()).fold(0.0, f64::max)
    };
    let (mut of_mean, mut mean_of_sups) = (0.0f64, 0.0f64);
    for m in 0..fluid.server_types() {
        for k in 0..fluid.rate_classes() {
            of_mean = of_mean.max(sup(&r.mean, m, k));
            let per_rep = r.traces.iter().map(|t| sup(t, m, k)).sum::<f64>() / r.traces.len() as f64;
            mean_of_sups = mean_of_sups.max(per_rep);
        }
    }
    (of_mean, mean_of_sups)
}

fn spd_fluid_limit(pool: &ThreadPool) -> Verdict {
    let exp = reference();
    let (small, small_reps) = fluid_gap(&exp, pool, 200);
    let (large, large_reps) = fluid_gap(&exp, pool, 2000);
    verdict(
        large < small && large <= 0.03,
        format!(
            "sup gap of the 8-replication mean: N=200 {small:.4}, N=2000 {large:.4} (<= 0.03); \
             per-replication sup averaged: {small_reps:.4}, {large_reps:.4}"
        ),
    )
}

fn zero_queueing(pool: &ThreadPool) -> Verdict {
    let exp = reference();
    let mut pass = true;
    let mut detail = Vec::new();
    for name in [PolicyName::Icrd, PolicyName::Spd] {
        let stats: Vec<Stat> = [100, 500, 2000]
            .into_iter()
            .map(|n| run(&exp, pool, name, n, 100.0, 1.0, InitialState::Empty).queueing())
            .collect();
        let ok = nonincreasing_within(&stats, 2.0) && stats[2].mean <= 0.05;
        pass &= ok;
        detail.push(format!(
            "{} {}",
            name.as_str(),
            stats.iter().map(|s| format!("{:.4}+-{:.4}", s.mean, s.stderr)).collect::<Vec<_>>().join(" ")
        ));
    }
    verdict(pass, format!("queueing probability at N=100,500,2000: {}", detail.join("; ")))
}

fn policy_comparison(pool: &ThreadPool) -> Verdict {
    let exp = reference();
    let runs: Vec<PolicyRun> = [PolicyName::Icrd, PolicyName::Spd, PolicyName::Jiq, PolicyName::Jfiq]
        .into_iter()
        .map(|name| run(&exp, pool, name, 50, 500.0, 5.0, InitialState::Empty))
        .collect();
    let never_bad = |r: &PolicyRun| r.traces.iter().all(|t| t.samples.last().unwrap().bad_assignments == 0);
    let (icrd, spd, jiq, jfiq) = (&runs[0], &runs[1], &runs[2], &runs[3]);
    let ratio = jiq.final_queue().mean / icrd.final_queue().mean;
    let pass = never_bad(icrd)
        && never_bad(spd)
        && jiq.bad().mean > 0.05
        && jfiq.bad().mean > 0.05
        && ratio > 5.0;
    verdict(
        pass,
        format!(
            "bad: icrd {:.4} spd {:.4} jiq {:.4} jfiq {:.4}; final queue jiq/icrd = {ratio:.1}",
            icrd.bad().mean,
            spd.bad().mean,
            jiq.bad().mean,
            jfiq.bad().mean
        ),
    )
}

fn refinement_monotone() -> Verdict {
    let lam = ArrivalRateFunction::affine(5.0, 0.0).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let f = common::random_bumps(1000 + seed);
        let hist = refinement_history(&lam, &f, 4, SearchOptions::default()).unwrap();
        for w in hist.windows(2) {
            worst = worst.max(w[1].rho - w[0].rho).max(w[0].rho_bar - w[1].rho_bar);
        }
    }
    verdict(worst <= 1e-7, format!("largest monotonicity breach {worst:.3e} (<= 1e-7) over 20 surfaces"))
}

fn lp_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (lambda, mu, widths) = common::random_lp_instance(&mut rng);
        let (rho, _) = solve_minimax_routing(&lambda, &mu, &widths).unwrap();
        let grid = common::dual_grid_minimax(&lambda, &mu, &widths, 1e-3);
        worst = worst.max((rho - grid).abs());
    }
    verdict(worst <= 2e-3, format!("largest |LP - grid| {worst:.2e} (<= 2e-3) over 50 instances"))
}

fn stolyar() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let j = rng.gen_range(1..=5);
        let mu: Vec<f64> = (0..j).map(|_| rng.gen_range(0.1..5.0)).collect();
        let beta: Vec<f64> = (0..j).map(|_| rng.gen_range(0.05..1.0)).collect();
        let capacity: f64 = mu.iter().zip(&beta).map(|(m, b)| m * b).sum();
        let lambda = rng.gen_range(0.01..0.99) * capacity;
        let x = stolyar_fixed_point(lambda, &mu, &beta).unwrap();
        let balance = (mu.iter().zip(&x).map(|(m, v)| m * v).sum::<f64>() - lambda).abs();
        let ratios: Vec<f64> = (0..j).map(|i| mu[i] * x[i] / (beta[i] - x[i])).collect();
        let spread = ratios.iter().map(|r| (r - ratios[0]).abs()).fold(0.0, f64::max);
        worst = worst.max(balance).max(spread);
    }
    verdict(worst <= 1e-10, format!("largest residual {worst:.2e} (<= 1e-10) over 100 systems"))
}

/// A random two-band instance, its blockwise slower copy and an ICRD reservation.
fn coupled_case(seed: u64) -> (SystemInstance, SystemInstance, hetlb::policies::ReservationPlan) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(8..=20);
    let fast: Vec<Vec<f64>> = (0..2)
        .map(|h| (0..2).map(|m| if h == m { rng.gen_range(1.0..3.0) } else { rng.gen_range(0.1..0.5) }).collect())
        .collect();
    let slow: Vec<Vec<f64>> = fast.iter().map(|row| row.iter().map(|r| r * rng.gen_range(0.5..1.0)).collect()).collect();
    let breaks = vec![0.0, 0.5, 1.0];
    let lam = ArrivalRateFunction::stepwise(breaks.clone(), vec![rng.gen_range(0.2..0.6), rng.gen_range(0.2..0.6)]).unwrap();
    let build = |rates: &Vec<Vec<f64>>| {
        let f = StepwiseRateFunction::new(breaks.clone(), breaks.clone(), rates.clone()).unwrap();
        build_instance(n, n, &f.into(), &lam, &MembershipMap::Equispaced, &MembershipMap::Equispaced).unwrap()
    };
    let (g, gprime) = (build(&fast), build(&slow));
    let lambda_h = vec![lam.eval(0.0) * 0.5, lam.eval(0.5) * 0.5];
    let plan = PartitionPlan::evaluate(breaks.clone(), breaks, RoutingMatrix::identity(2), lambda_h, slow).unwrap();
    let eps = epsilon_allocation(&plan.p, &plan.lambda_h, &plan.mu, &plan.v_widths()).unwrap();
    let (reservation, _) = icrd_reserve_shrinking(&g, &plan, &eps, 8).unwrap();
    (g, gprime, reservation)
}

fn coupled_dominance() -> Verdict {
    let (mut dominated, mut mutated) = (0, 0);
    for case in 0..20u64 {
        let (g, gprime, plan) = coupled_case(800 + case);
        let faithful = coupled_dominance_run(&g, &gprime, &plan, 100.0, case, CouplingMode::Faithful).unwrap();
        if faithful.dominated && faithful.violation_count == 0 {
            dominated += 1;
        }
        let broken =
            coupled_dominance_run(&g, &gprime, &plan, 100.0, case, CouplingMode::IndependentDepartures).unwrap();
        if broken.violation_count > 0 {
            mutated += 1;
        }
    }
    verdict(
        dominated == 20 && mutated >= 16,
        format!("dominated on {dominated}/20 instances; mutation caught on {mutated}/20 (>= 16)"),
    )
}

fn mm1_at(rho: f64) -> (bool, String) {
    let inst = SystemInstance::from_matrix(vec![rho], vec![vec![1.0]]).unwrap();
    let layout = TraceLayout::trivial(&inst).with_l_cap(80);
    let (mut busy, mut queue) = (Vec::new(), Vec::new());
    for seed in 0..16 {
        let params = SimParams {
            horizon: 50_000.0,
            seed: 9000 + seed,
            init: InitialState::Empty,
            sample_times: uniform_grid(50_000.0, 500.0),
            options: SimOptions::default(),
        };
        let trace = simulate(&inst, &PolicySpec::Jiq, &layout, &params).unwrap();
        let s = steady_state_estimate(&trace, 0.1).unwrap();
        busy.push(s.tail(0, 0, 1));
        queue.push(s.queue);
    }
    let ((b, b_se), (q, q_se)) = (mean_and_stderr(&busy), mean_and_stderr(&queue));
    let target = rho / (1.0 - rho);
    (
        (b - rho).abs() <= 3.0 * b_se && (q - target).abs() <= 3.0 * q_se,
        format!("rho {rho}: P(busy) {b:.4} +- {b_se:.4}, mean queue {q:.4} +- {q_se:.4} vs {target:.4}"),
    )
}

fn mm1() -> Verdict {
    let (a, b) = (mm1_at(0.5), mm1_at(0.7));
    verdict(a.0 && b.0, format!("{}; {}", a.1, b.1))
}

fn initial_states(pool: &ThreadPool) -> Verdict {
    let exp = reference();
    let horizon = 40.0;
    let means: Vec<Trace> = [InitialState::Empty, InitialState::AllOne, InitialState::HalfHalf]
        .into_iter()
        .map(|init| run(&exp, pool, PolicyName::Icrd, 2000, horizon, 1.0, init).mean)
        .collect();
    let mut worst = 0.0f64;
    for a in 0..3 {
        for b in a + 1..3 {
            worst = worst.max(tail_gap(&means[a], &means[b], horizon / 2.0));
        }
    }
    verdict(worst <= 0.02, format!("max tail-window gap {worst:.5} (<= 0.02)"))
}

fn main() {
    // Libtest-style flags (e.g. `--nocapture`, filters) are accepted and ignored.
    let pool = worker_pool(None).unwrap();
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        ("1 ICRD fixed point", Box::new(|| icrd_fixed_point_matches(&pool))),
        ("2 SPD transient fluid limit", Box::new(|| spd_fluid_limit(&pool))),
        ("3 zero-queueing scaling", Box::new(|| zero_queueing(&pool))),
        ("4 policy comparison", Box::new(|| policy_comparison(&pool))),
        ("5 refinement monotonicity", Box::new(refinement_monotone)),
        ("6 LP oracle equivalence", Box::new(lp_oracle)),
        ("7 Stolyar fixed point", Box::new(stolyar)),
        ("8 coupled dominance", Box::new(coupled_dominance)),
        ("9 M/M/1 sanity", Box::new(mm1)),
        ("10 initial-state convergence", Box::new(|| initial_states(&pool))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {name}: {} ({:.1}s) {}",
            if v.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            v.detail
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
