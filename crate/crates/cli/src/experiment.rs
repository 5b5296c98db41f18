//! Turning a configuration into instances, policies, layouts and replicated runs.

use std::fmt;

use anyhow::{anyhow, Context, Result};
use hetlb::criticality::{
    epsilon_allocation, find_subcritical, plan_for_partition, solve_minimax_routing, PartitionPlan,
    RoutingMatrix, SearchOptions, Verdict,
};
use hetlb::fluid::{lambda_p_matrix, FluidParams};
use hetlb::model::{
    build_instance, cell_extrema, integrate_lambda, ArrivalRateFunction, EnvelopeOptions,
    RateFunction, SystemInstance,
};
use hetlb::policies::{icrd_reserve_shrinking, PolicySpec, ReservationPlan};
use hetlb::simulator::{simulate, uniform_grid, InitialState, SimOptions, SimParams, Trace, TraceLayout};
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::config::{ExperimentConfig, PolicyName};

/// No subcritical plan could be certified; carries the search verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoPlan(pub Verdict);

impl fmt::Display for NoPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Verdict::HeavyLoad => write!(
                f,
                "heavy load: every partition leaves some server type loaded at or above rho*"
            ),
            _ => write!(f, "undecided: no subcritical partition found up to n_max"),
        }
    }
}

impl std::error::Error for NoPlan {}

/// A routing policy bound to one instance, with what it took to build it.
#[derive(Debug, Clone)]
pub struct Policy {
    pub name: PolicyName,
    pub spec: PolicySpec,
    pub reservation: Option<ReservationPlan>,
    /// Halvings of eps needed before the reservation fit.
    pub eps_halvings: usize,
}

/// A validated configuration with its functions built and its partition plan resolved.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub f: RateFunction,
    pub lambda: ArrivalRateFunction,
    plan: Option<PartitionPlan>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let f = config.rate_function.build()?;
        let lambda = config.arrival.build()?;
        let mut exp = Self { config, f, lambda, plan: None };
        if exp.config.partition.is_some() {
            exp.plan = Some(exp.partition_plan()?);
        }
        Ok(exp)
    }

    pub fn search_options(&self) -> SearchOptions {
        SearchOptions {
            envelope: EnvelopeOptions {
                samples_per_axis: self.config.check.samples_per_axis,
                ..EnvelopeOptions::default()
            },
            xi: self.config.instance.xi,
            ..SearchOptions::default()
        }
    }

    fn partition_plan(&self) -> Result<PartitionPlan> {
        let part = self.config.partition.as_ref().expect("checked by caller");
        let envelope = self.search_options().envelope;
        let plan = match &part.p {
            Some(rows) => plan_for_partition(
                &self.lambda,
                &self.f,
                self.config.instance.xi,
                part.w_breaks.clone(),
                part.v_breaks.clone(),
                RoutingMatrix::new(rows.clone()).context("[partition] p")?,
                envelope,
            )?,
            None => {
                let lambda_h = part
                    .w_breaks
                    .windows(2)
                    .map(|w| integrate_lambda(&self.lambda, w[0], w[1], self.config.instance.xi))
                    .collect::<hetlb::Result<Vec<_>>>()?;
                let mu = cell_extrema(&self.f, &part.w_breaks, &part.v_breaks, envelope)?.min;
                let widths: Vec<f64> = part.v_breaks.windows(2).map(|w| w[1] - w[0]).collect();
                let (_, p) = solve_minimax_routing(&lambda_h, &mu, &widths)?;
                PartitionPlan::evaluate(part.w_breaks.clone(), part.v_breaks.clone(), p, lambda_h, mu)?
            }
        };
        Ok(plan)
    }

    /// The configured partition plan, or the result of the dyadic search when none is
    /// configured. Errors with [`NoPlan`] when the plan is not subcritical.
    pub fn plan(&self) -> Result<PartitionPlan> {
        let plan = match &self.plan {
            Some(plan) => plan.clone(),
            None => self.search()?,
        };
        if plan.verdict != Verdict::Subcritical {
            return Err(NoPlan(plan.verdict).into());
        }
        Ok(plan)
    }

    pub fn search(&self) -> Result<PartitionPlan> {
        Ok(find_subcritical(
            &self.lambda,
            &self.f,
            self.config.check.rho_star,
            self.config.check.n_max,
            self.search_options(),
        )?)
    }

    pub fn instance(&self, servers: usize) -> Result<SystemInstance> {
        let inst = &self.config.instance;
        build_instance(
            servers,
            self.config.dispatchers(servers),
            &self.f,
            &self.lambda,
            &inst.dispatcher_map.to_map(),
            &inst.server_map.to_map(),
        )
        .with_context(|| format!("building the instance with N = {servers}"))
    }

    pub fn fluid(&self) -> Result<FluidParams> {
        let plan = self.plan()?;
        Ok(lambda_p_matrix(&plan.p, &plan.lambda_h, &plan.mu)?)
    }

    pub fn policy(&self, name: PolicyName, instance: &SystemInstance) -> Result<Policy> {
        let mut policy = Policy { name, spec: PolicySpec::Jiq, reservation: None, eps_halvings: 0 };
        policy.spec = match name {
            PolicyName::Jiq => PolicySpec::Jiq,
            PolicyName::Jfiq => PolicySpec::Jfiq,
            PolicyName::Jfsq => PolicySpec::Jfsq,
            PolicyName::Mindrift => PolicySpec::MinDrift,
            PolicyName::Spd | PolicyName::Random => {
                let plan = self.plan()?;
                let (p, w_breaks, v_breaks) = (plan.p, plan.w_breaks, plan.v_breaks);
                if name == PolicyName::Spd {
                    PolicySpec::PBasedJiq { p, w_breaks, v_breaks }
                } else {
                    PolicySpec::RandomOpenLoop { p, w_breaks, v_breaks }
                }
            }
            PolicyName::Icrd => {
                let plan = self.plan()?;
                let eps = epsilon_allocation(&plan.p, &plan.lambda_h, &plan.mu, &plan.v_widths())?;
                let (reservation, halvings) = icrd_reserve_shrinking(
                    instance,
                    &plan,
                    &eps,
                    self.config.simulation.reserve_attempts,
                )
                .with_context(|| {
                    format!(
                        "ICRD reservation at N = {} (raise N or reserve_attempts)",
                        instance.servers()
                    )
                })?;
                policy.reservation = Some(reservation.clone());
                policy.eps_halvings = halvings;
                PolicySpec::IcrdJiq(reservation)
            }
        };
        Ok(policy)
    }

    /// Trace layout on the plan's partition when one is available, else a single group.
    pub fn layout(&self, instance: &SystemInstance, policy: &Policy) -> Result<TraceLayout> {
        let plan = match self.plan() {
            Ok(plan) => plan,
            Err(e) if e.is::<NoPlan>() && !policy.name.needs_plan() => {
                return Ok(TraceLayout::trivial(instance).with_l_cap(self.config.simulation.l_cap));
            }
            Err(e) => return Err(e),
        };
        let fluid = lambda_p_matrix(&plan.p, &plan.lambda_h, &plan.mu)?;
        Ok(TraceLayout::new(
            instance,
            &plan.w_breaks,
            &plan.v_breaks,
            &plan.mu,
            fluid.mu_k,
            policy.reservation.as_ref(),
        )?
        .with_l_cap(self.config.simulation.l_cap))
    }

    pub fn sim_params(&self, horizon: f64, step: f64, seed: u64, init: InitialState) -> SimParams {
        let sim = &self.config.simulation;
        SimParams {
            horizon,
            seed,
            init,
            sample_times: uniform_grid(horizon, step),
            options: SimOptions {
                bad_rate_threshold: sim.bad_rate_threshold,
                audit_every: sim.audit_every,
            },
        }
    }

    /// Replication seeds `seed, seed + 1, ..., seed + R - 1`.
    pub fn seeds(&self) -> Vec<u64> {
        let sim = &self.config.simulation;
        (0..sim.replications as u64).map(|r| sim.seed.wrapping_add(r)).collect()
    }

    /// One run per seed on the worker pool, returned in seed order.
    pub fn replicate(
        &self,
        pool: &ThreadPool,
        instance: &SystemInstance,
        policy: &Policy,
        layout: &TraceLayout,
        template: &SimParams,
    ) -> Result<Vec<Trace>> {
        let seeds = self.seeds();
        pool.install(|| {
            seeds
                .par_iter()
                .map(|&seed| {
                    let params = SimParams { seed, ..template.clone() };
                    simulate(instance, &policy.spec, layout, &params)
                        .map_err(|e| anyhow!("{} replication with seed {seed}: {e}", policy.name.as_str()))
                })
                .collect()
        })
    }
}

pub fn worker_pool(workers: Option<usize>) -> Result<ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n.max(1));
    }
    Ok(builder.build()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_plan_is_the_diagonal() {
        let exp = Experiment::new(ExperimentConfig::reference()).unwrap();
        let plan = exp.plan().unwrap();
        assert_eq!(plan.p, RoutingMatrix::identity(5));
        let expected = [0.1, 0.3, 0.5, 0.7, 0.9];
        for (got, want) in plan.lambda_h.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(plan.rho_max < 0.8);
    }

    #[test]
    fn solved_routing_when_p_is_omitted() {
        let mut cfg = ExperimentConfig::reference();
        cfg.partition.as_mut().unwrap().p = None;
        let exp = Experiment::new(cfg).unwrap();
        let plan = exp.plan().unwrap();
        // The optimum can only improve on the diagonal routing.
        assert!(plan.rho_max <= 0.45 + 1e-9);
    }

    #[test]
    fn icrd_fits_at_small_n() {
        let exp = Experiment::new(ExperimentConfig::reference()).unwrap();
        let inst = exp.instance(50).unwrap();
        let policy = exp.policy(PolicyName::Icrd, &inst).unwrap();
        let res = policy.reservation.unwrap();
        for m in 0..5 {
            let used: usize = res.block_sizes().iter().map(|r| r[m]).sum();
            assert!(used <= 10);
        }
    }
}
