//! The subcommands. Each writes its files into the output directory and returns how the
//! run ended; `report.txt` is itself a valid config (results are TOML comments).

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hetlb::criticality::Verdict;
use hetlb::model::SystemInstance;
use hetlb::simulator::{
    coupled_dominance_run, mean_and_stderr, steady_state_estimate, CouplingMode, InitialState,
    SteadyStateSummary, Trace,
};
use rayon::ThreadPool;

use crate::config::{CoupleMode, InitConfig, PolicyName};
use crate::experiment::{Experiment, Policy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    HeavyLoad,
    Undecided,
    /// A checked property failed (a coupling dominance violation).
    Violated,
}

pub struct RunContext {
    pub exp: Experiment,
    pub out: PathBuf,
    pub pool: ThreadPool,
    pub command: String,
}

impl RunContext {
    fn file(&self, rel: impl AsRef<Path>) -> Result<BufWriter<File>> {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(file))
    }

    /// Header of every report: run metadata as comments, then the resolved config.
    fn report(&self) -> Report {
        let sim = &self.exp.config.simulation;
        let seeds = self.exp.seeds();
        let mut text = String::new();
        let _ = writeln!(text, "# hetlb {} {}", env!("CARGO_PKG_VERSION"), self.command);
        let _ = writeln!(
            text,
            "# replication seeds: {} ({} replications from base seed {})",
            seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" "),
            sim.replications,
            sim.seed
        );
        let _ = writeln!(text, "# workers: {}", self.pool.current_num_threads());
        let _ = writeln!(text, "# resolved configuration follows; results are at the end.\n");
        text.push_str(&self.exp.config.to_toml());
        text.push_str("\n# ---- results ----\n");
        Report(text)
    }

    fn save_report(&self, report: Report) -> Result<()> {
        let mut f = self.file("report.txt")?;
        f.write_all(report.0.as_bytes())?;
        f.flush()?;
        Ok(())
    }

    fn write_traces(&self, dir: &str, mean: &Trace) -> Result<()> {
        let mut tail = self.file(Path::new(dir).join("traces.csv"))?;
        mean.write_tail_csv(&mut tail, true)?;
        tail.flush()?;
        let mut busy = self.file(Path::new(dir).join("busy.csv"))?;
        mean.write_busy_csv(&mut busy, true)?;
        busy.flush()?;
        let mut queue = self.file(Path::new(dir).join("queue.csv"))?;
        mean.write_queue_csv(&mut queue, true)?;
        queue.flush()?;
        Ok(())
    }

    /// Fluid curves from an empty start on the same grid as the traces.
    fn write_fluid(&self, times: &[f64]) -> Result<bool> {
        let Ok(fluid) = self.exp.fluid() else {
            return Ok(false);
        };
        let zeros = vec![vec![0.0; fluid.rate_classes()]; fluid.server_types()];
        let mut f = self.file("fluid.csv")?;
        fluid.write_curves_csv(&mut f, &zeros, times, true)?;
        f.flush()?;
        Ok(true)
    }
}

/// Report text; every line added after the header is a TOML comment.
pub struct Report(String);

impl Report {
    fn line(&mut self, text: impl AsRef<str>) {
        for l in text.as_ref().lines() {
            self.0.push_str("# ");
            self.0.push_str(l);
            self.0.push('\n');
        }
        if text.as_ref().is_empty() {
            self.0.push_str("#\n");
        }
    }

    pub fn text(&self) -> &str {
        &self.0
    }
}

/// Replicated runs of one policy and their steady-state summaries.
pub struct PolicyRun {
    pub policy: Policy,
    pub traces: Vec<Trace>,
    pub summaries: Vec<SteadyStateSummary>,
    pub mean: Trace,
}

pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        let (mean, stderr) = mean_and_stderr(&v);
        Self { mean, stderr }
    }
}

impl PolicyRun {
    pub fn bad(&self) -> Stat {
        Stat::of(self.summaries.iter().map(|s| s.bad_probability))
    }

    pub fn queueing(&self) -> Stat {
        Stat::of(self.summaries.iter().map(|s| s.queueing_probability))
    }

    pub fn mean_queue(&self) -> Stat {
        Stat::of(self.summaries.iter().map(|s| s.queue))
    }

    pub fn final_queue(&self) -> Stat {
        Stat::of(self.traces.iter().map(|t| t.samples.last().map_or(0.0, |s| s.queue)))
    }

    pub fn busy(&self) -> Stat {
        Stat::of(self.summaries.iter().map(SteadyStateSummary::total_busy))
    }
}

pub fn run_policy(
    exp: &Experiment,
    pool: &ThreadPool,
    name: PolicyName,
    instance: &SystemInstance,
    horizon: f64,
    step: f64,
    init: InitialState,
) -> Result<PolicyRun> {
    let policy = exp.policy(name, instance)?;
    let layout = exp.layout(instance, &policy)?;
    let template = exp.sim_params(horizon, step, 0, init);
    let traces = exp.replicate(pool, instance, &policy, &layout, &template)?;
    let summaries = traces
        .iter()
        .map(|t| steady_state_estimate(t, exp.config.simulation.warmup))
        .collect::<hetlb::Result<Vec<_>>>()?;
    let mean = Trace::mean(&traces)?;
    Ok(PolicyRun { policy, traces, summaries, mean })
}

pub const SUMMARY_HEADER: &str = "policy,servers,replications,bad_probability,bad_stderr,\
queueing_probability,queueing_stderr,mean_queue,mean_queue_stderr,final_queue,final_queue_stderr,\
busy_fraction,busy_stderr";

fn summary_row(run: &PolicyRun, servers: usize) -> String {
    let (b, q, mq, fq, busy) = (run.bad(), run.queueing(), run.mean_queue(), run.final_queue(), run.busy());
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        run.policy.name.as_str(),
        servers,
        run.traces.len(),
        b.mean,
        b.stderr,
        q.mean,
        q.stderr,
        mq.mean,
        mq.stderr,
        fq.mean,
        fq.stderr,
        busy.mean,
        busy.stderr
    )
}

fn describe_run(report: &mut Report, run: &PolicyRun) {
    let (b, q, mq, fq) = (run.bad(), run.queueing(), run.mean_queue(), run.final_queue());
    report.line(format!(
        "{:<9} bad {:.4} +- {:.4}  queueing {:.4} +- {:.4}  mean queue {:.4} +- {:.4}  final queue {:.4} +- {:.4}",
        run.policy.name.as_str(),
        b.mean,
        b.stderr,
        q.mean,
        q.stderr,
        mq.mean,
        mq.stderr,
        fq.mean,
        fq.stderr
    ));
    if run.policy.eps_halvings > 0 {
        report.line(format!(
            "          (reservation fit after halving eps {} times)",
            run.policy.eps_halvings
        ));
    }
}

pub fn check(ctx: &RunContext) -> Result<Outcome> {
    let plan = ctx.exp.search()?;
    let mut report = ctx.report();
    let mut csv = ctx.file("summary.csv")?;
    writeln!(csv, "n,rho_bar,rho")?;
    report.line(format!(
        "dyadic search with rho* = {}, n_max = {}",
        ctx.exp.config.check.rho_star, ctx.exp.config.check.n_max
    ));
    for r in &plan.history {
        writeln!(csv, "{},{},{}", r.n, r.rho_bar, r.rho)?;
        report.line(format!("n = {}: rho_bar = {:.6}, rho = {:.6}", r.n, r.rho_bar, r.rho));
    }
    csv.flush()?;
    report.line(format!("verdict: {}", plan.verdict.as_str()));
    let outcome = match plan.verdict {
        Verdict::Subcritical => {
            report.line(format!(
                "level {} certifies max load {:.6} < rho*",
                plan.level.unwrap_or(0),
                plan.rho_max
            ));
            report.line(format!("p = {:?}", plan.p.as_rows()));
            Outcome::Success
        }
        Verdict::HeavyLoad => {
            report.line("some servers are overloaded: no partition brings every load below rho*");
            Outcome::HeavyLoad
        }
        Verdict::Undecided => {
            report.line("no verdict up to n_max; raise n_max or samples_per_axis");
            Outcome::Undecided
        }
    };
    ctx.save_report(report)?;
    Ok(outcome)
}

pub fn reserve(ctx: &RunContext) -> Result<Outcome> {
    let servers = ctx.exp.config.simulation.servers;
    let instance = ctx.exp.instance(servers)?;
    let policy = ctx.exp.policy(PolicyName::Icrd, &instance)?;
    let res = policy.reservation.as_ref().expect("icrd always reserves");
    let mut report = ctx.report();
    report.line(format!("ICRD reservation at N = {servers}"));
    report.line(format!("eps halvings: {}", policy.eps_halvings));
    let mut csv = ctx.file("summary.csv")?;
    writeln!(csv, "h,m,servers,eps")?;
    for h in 0..res.classes() {
        for m in 0..res.server_types() {
            writeln!(csv, "{},{},{},{}", h + 1, m + 1, res.block_sizes()[h][m], res.eps().get(h, m))?;
        }
        report.line(format!("class {}: blocks {:?}", h + 1, res.block_sizes()[h]));
    }
    for (m, count) in res.unreserved_counts().into_iter().enumerate() {
        writeln!(csv, "0,{},{},0", m + 1, count)?;
    }
    report.line(format!("unreserved per group: {:?}", res.unreserved_counts()));
    csv.flush()?;
    ctx.save_report(report)?;
    Ok(Outcome::Success)
}

pub fn simulate(ctx: &RunContext, policy: Option<PolicyName>) -> Result<Outcome> {
    let sim = &ctx.exp.config.simulation;
    let name = policy.unwrap_or(sim.policies[0]);
    let instance = ctx.exp.instance(sim.servers)?;
    let run = run_policy(&ctx.exp, &ctx.pool, name, &instance, sim.horizon, sim.sample_step, sim.init.state())?;
    ctx.write_traces("", &run.mean)?;
    ctx.write_fluid(&run.mean.times())?;
    let mut csv = ctx.file("summary.csv")?;
    writeln!(csv, "{SUMMARY_HEADER}")?;
    writeln!(csv, "{}", summary_row(&run, sim.servers))?;
    csv.flush()?;
    let mut report = ctx.report();
    report.line(format!("{} at N = {}, T = {}", name.as_str(), sim.servers, sim.horizon));
    describe_run(&mut report, &run);
    ctx.save_report(report)?;
    Ok(Outcome::Success)
}

pub fn compare(ctx: &RunContext) -> Result<Outcome> {
    let sim = &ctx.exp.config.simulation;
    let instance = ctx.exp.instance(sim.servers)?;
    let mut report = ctx.report();
    report.line(format!(
        "policy comparison at N = {}, T = {}, warm-up {}",
        sim.servers, sim.horizon, sim.warmup
    ));
    let mut csv = ctx.file("summary.csv")?;
    writeln!(csv, "{SUMMARY_HEADER}")?;
    let mut times = Vec::new();
    for &name in &sim.policies {
        let run = run_policy(&ctx.exp, &ctx.pool, name, &instance, sim.horizon, sim.sample_step, sim.init.state())?;
        ctx.write_traces(name.as_str(), &run.mean)?;
        writeln!(csv, "{}", summary_row(&run, sim.servers))?;
        describe_run(&mut report, &run);
        times = run.mean.times();
    }
    csv.flush()?;
    ctx.write_fluid(&times)?;
    ctx.save_report(report)?;
    Ok(Outcome::Success)
}

/// Whether `values` never rise by more than two combined standard errors.
pub fn nonincreasing_within(values: &[Stat], sigmas: f64) -> bool {
    values.windows(2).all(|w| {
        w[1].mean <= w[0].mean + sigmas * (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt()
    })
}

pub fn scaling(ctx: &RunContext) -> Result<Outcome> {
    let cfg = ctx.exp.config.scaling.as_ref().context("the config has no [scaling] section")?;
    let mut report = ctx.report();
    let mut csv = ctx.file("summary.csv")?;
    writeln!(csv, "{SUMMARY_HEADER}")?;
    let mut groups = ctx.file("groups.csv")?;
    writeln!(groups, "servers,policy,m,sup_busy,fluid_limit")?;
    let fluid = ctx.exp.fluid().ok();
    let mut times = Vec::new();
    for &name in &cfg.policies {
        let mut queueing = Vec::new();
        for &n in &cfg.servers {
            let instance = ctx.exp.instance(n)?;
            let run = run_policy(&ctx.exp, &ctx.pool, name, &instance, cfg.horizon, cfg.sample_step, cfg.init.state())?;
            ctx.write_traces(&format!("{}_n{}", name.as_str(), n), &run.mean)?;
            writeln!(csv, "{}", summary_row(&run, n))?;
            let q = run.queueing();
            report.line(format!(
                "{} N = {n}: queueing probability {:.5} +- {:.5}",
                name.as_str(),
                q.mean,
                q.stderr
            ));
            for m in 0..run.mean.dims.server_types {
                let sup = (0..run.mean.samples.len())
                    .map(|s| run.mean.group_busy(s, m))
                    .fold(0.0, f64::max);
                let limit = fluid.as_ref().map_or(f64::NAN, |f| f.x_p[m].iter().sum());
                writeln!(groups, "{n},{},{},{sup},{limit}", name.as_str(), m + 1)?;
            }
            queueing.push(q);
            times = run.mean.times();
        }
        report.line(format!(
            "{}: queueing probability nonincreasing in N within 2 SE: {}",
            name.as_str(),
            nonincreasing_within(&queueing, 2.0)
        ));
    }
    csv.flush()?;
    groups.flush()?;
    ctx.write_fluid(&times)?;
    ctx.save_report(report)?;
    Ok(Outcome::Success)
}

/// Largest gap between two traces' busy-fraction curves at samples in `[from, T]`.
pub fn tail_gap(a: &Trace, b: &Trace, from: f64) -> f64 {
    let mut gap = 0.0f64;
    for s in 0..a.samples.len().min(b.samples.len()) {
        if a.samples[s].time + 1e-9 < from {
            continue;
        }
        for (x, y) in a.samples[s].busy.iter().zip(&b.samples[s].busy) {
            gap = gap.max((x - y).abs());
        }
    }
    gap
}

pub fn scenarios(ctx: &RunContext) -> Result<Outcome> {
    let cfg = ctx.exp.config.scenarios.as_ref().context("the config has no [scenarios] section")?;
    let instance = ctx.exp.instance(cfg.servers)?;
    let mut means: Vec<(InitConfig, Trace)> = Vec::new();
    for &init in &cfg.inits {
        let run = run_policy(&ctx.exp, &ctx.pool, cfg.policy, &instance, cfg.horizon, cfg.sample_step, init.state())?;
        ctx.write_traces(init.as_str(), &run.mean)?;
        means.push((init, run.mean));
    }
    let mut report = ctx.report();
    report.line(format!(
        "{} at N = {} from {} initial states; gaps over [{}, {}]",
        cfg.policy.as_str(),
        cfg.servers,
        cfg.inits.len(),
        cfg.horizon / 2.0,
        cfg.horizon
    ));
    let mut csv = ctx.file("summary.csv")?;
    writeln!(csv, "init_a,init_b,max_gap,within_band")?;
    let mut worst = 0.0f64;
    for a in 0..means.len() {
        for b in a + 1..means.len() {
            let gap = tail_gap(&means[a].1, &means[b].1, cfg.horizon / 2.0);
            worst = worst.max(gap);
            writeln!(csv, "{},{},{gap},{}", means[a].0.as_str(), means[b].0.as_str(), gap <= cfg.band)?;
            report.line(format!("{} vs {}: {gap:.5}", means[a].0.as_str(), means[b].0.as_str()));
        }
    }
    csv.flush()?;
    report.line(format!("max gap {worst:.5} (band {})", cfg.band));
    ctx.save_report(report)?;
    Ok(Outcome::Success)
}

/// The same instance with every rate multiplied by `factor`.
pub fn slowed(instance: &SystemInstance, factor: f64) -> Result<SystemInstance> {
    let rates = (0..instance.dispatchers())
        .map(|i| (0..instance.servers()).map(|j| instance.rate(i, j) * factor).collect())
        .collect();
    Ok(SystemInstance::from_matrix(instance.arrival_rates().to_vec(), rates)?)
}

pub fn couple(ctx: &RunContext) -> Result<Outcome> {
    let cfg = ctx.exp.config.couple.as_ref().context("the config has no [couple] section")?;
    let g = ctx.exp.instance(cfg.servers)?;
    let gprime = slowed(&g, cfg.slowdown)?;
    let policy = ctx.exp.policy(PolicyName::Icrd, &g)?;
    let plan = policy.reservation.as_ref().expect("icrd always reserves");
    let mode = match cfg.mode {
        CoupleMode::Faithful => CouplingMode::Faithful,
        CoupleMode::IndependentDepartures => CouplingMode::IndependentDepartures,
    };
    let seeds = ctx.exp.seeds();
    let outcomes = ctx.pool.install(|| {
        use rayon::prelude::*;
        seeds
            .par_iter()
            .map(|&seed| coupled_dominance_run(&g, &gprime, plan, cfg.horizon, seed, mode))
            .collect::<hetlb::Result<Vec<_>>>()
    })?;
    let mut report = ctx.report();
    report.line(format!(
        "coupled ICRD runs at N = {}, slowdown {}, mode {:?}",
        cfg.servers, cfg.slowdown, cfg.mode
    ));
    let mut csv = ctx.file("summary.csv")?;
    writeln!(csv, "seed,dominated,events,violations")?;
    let mut violated = 0;
    for (seed, out) in seeds.iter().zip(&outcomes) {
        writeln!(csv, "{seed},{},{},{}", out.dominated, out.events, out.violation_count)?;
        if !out.dominated {
            violated += 1;
            if let Some(v) = out.violations.first() {
                report.line(format!(
                    "seed {seed}: first violation at t = {:.4} in block ({}, {}) level {}: {} > {}",
                    v.time,
                    v.h + 1,
                    v.m + 1,
                    v.level,
                    v.count,
                    v.count_prime
                ));
            }
        }
    }
    csv.flush()?;
    report.line(format!("{violated} of {} runs violated dominance", outcomes.len()));
    ctx.save_report(report)?;
    Ok(if violated > 0 && cfg.mode == CoupleMode::Faithful {
        Outcome::Violated
    } else {
        Outcome::Success
    })
}
