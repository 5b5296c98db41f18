use hetlb::criticality::{epsilon_allocation, PartitionPlan, RoutingMatrix};
use hetlb::model::{build_instance, ArrivalRateFunction, MembershipMap, StepwiseRateFunction, SystemInstance};
use hetlb::policies::{icrd_reserve, PolicySpec, Router};
use hetlb::simulator::SimState;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn sparse_instance(seed: u64, w: usize, n: usize) -> SystemInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rates = (0..w)
        .map(|_| {
            let mut row: Vec<f64> = (0..n)
                .map(|_| if rng.gen_bool(0.6) { 0.0 } else { rng.gen_range(0.1..4.0) })
                .collect();
            if row.iter().all(|r| *r == 0.0) {
                row[rng.gen_range(0..n)] = 1.0;
            }
            row
        })
        .collect();
    SystemInstance::from_matrix(vec![1.0; w], rates).unwrap()
}

/// Random queue contents, with every pushed task compatible with its server.
fn random_state(inst: &SystemInstance, pools: &[Vec<usize>], rng: &mut ChaCha8Rng) -> SimState {
    let mut state = SimState::new(inst.servers(), pools);
    for _ in 0..rng.gen_range(0..3 * inst.servers()) {
        let i = rng.gen_range(0..inst.dispatchers());
        let j = rng.gen_range(0..inst.servers());
        if inst.rate(i, j) > 0.0 {
            state.push(j, i, inst.rate(i, j));
        }
    }
    state
}

fn one_group() -> (Vec<f64>, Vec<f64>) {
    (vec![0.0, 1.0], vec![0.0, 1.0])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn routing_never_picks_an_incompatible_server(seed in any::<u64>(), w in 1usize..6, n in 1usize..12) {
        let inst = sparse_instance(seed, w, n);
        let (w_breaks, v_breaks) = one_group();
        let p = RoutingMatrix::new(vec![vec![1.0]]).unwrap();
        let specs = [
            PolicySpec::Jiq,
            PolicySpec::Jfiq,
            PolicySpec::Jfsq,
            PolicySpec::MinDrift,
            PolicySpec::RandomOpenLoop { p: p.clone(), w_breaks: w_breaks.clone(), v_breaks: v_breaks.clone() },
            PolicySpec::PBasedJiq { p, w_breaks, v_breaks },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for spec in &specs {
            let router = Router::new(&inst, spec).unwrap();
            for _ in 0..20 {
                let state = random_state(&inst, router.pools(), &mut rng);
                let i = rng.gen_range(0..w);
                let j = router.route(&state, i, &mut rng);
                prop_assert!(inst.rate(i, j) > 0.0, "{} sent {i} to {j}", spec.name());
            }
        }
    }

    #[test]
    fn mindrift_ignores_power_of_two_rescaling(seed in any::<u64>(), exp in -4i32..5) {
        let inst = sparse_instance(seed, 3, 8);
        let scale = 2f64.powi(exp);
        let scaled_rates = (0..3)
            .map(|i| (0..8).map(|j| inst.rate(i, j) * scale).collect())
            .collect();
        let scaled = SystemInstance::from_matrix(vec![1.0; 3], scaled_rates).unwrap();
        let a = Router::new(&inst, &PolicySpec::MinDrift).unwrap();
        let b = Router::new(&scaled, &PolicySpec::MinDrift).unwrap();
        let mut fill = ChaCha8Rng::seed_from_u64(seed);
        let mut sa = SimState::new(8, a.pools());
        let mut sb = SimState::new(8, b.pools());
        for _ in 0..30 {
            let i = fill.gen_range(0..3);
            let j = fill.gen_range(0..8);
            if inst.rate(i, j) > 0.0 {
                sa.push(j, i, inst.rate(i, j));
                sb.push(j, i, scaled.rate(i, j));
            }
        }
        for i in 0..3 {
            let mut ra = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let mut rb = ChaCha8Rng::seed_from_u64(seed ^ 1);
            prop_assert_eq!(a.route(&sa, i, &mut ra), b.route(&sb, i, &mut rb));
        }
    }
}

fn three_type_instance() -> SystemInstance {
    let f = StepwiseRateFunction::new(
        vec![0.0, 0.5, 1.0],
        vec![0.0, 0.3, 0.6, 1.0],
        vec![vec![1.0, 2.0, 0.0], vec![0.5, 0.5, 3.0]],
    )
    .unwrap();
    build_instance(
        30,
        10,
        &f.into(),
        &ArrivalRateFunction::constant(1.0).unwrap(),
        &MembershipMap::Equispaced,
        &MembershipMap::Equispaced,
    )
    .unwrap()
}

#[test]
fn p_based_group_frequencies_follow_p() {
    let inst = three_type_instance();
    let w_breaks = vec![0.0, 0.5, 1.0];
    let v_breaks = vec![0.0, 0.3, 0.6, 1.0];
    let p = RoutingMatrix::new(vec![vec![0.25, 0.75, 0.0], vec![0.2, 0.3, 0.5]]).unwrap();
    let spec = PolicySpec::PBasedJiq { p: p.clone(), w_breaks, v_breaks: v_breaks.clone() };
    let router = Router::new(&inst, &spec).unwrap();
    let group_of = |j: usize| v_breaks.windows(2).position(|w| inst.server_coords()[j] < w[1]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    // Dispatcher 7 sits in the second class. Check both an idle and a saturated system.
    let empty = SimState::new(inst.servers(), router.pools());
    let mut full = SimState::new(inst.servers(), router.pools());
    for j in 0..inst.servers() {
        full.push(j, 7, inst.rate(7, j));
    }
    for state in [&empty, &full] {
        let draws = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..draws {
            counts[group_of(router.route(state, 7, &mut rng))] += 1;
        }
        let chi2: f64 = (0..3)
            .map(|m| {
                let expected = draws as f64 * p.get(1, m);
                (counts[m] as f64 - expected).powi(2) / expected
            })
            .sum();
        let critical = ChiSquared::new(2.0).unwrap().inverse_cdf(0.999);
        assert!(chi2 < critical, "chi2 {chi2} >= {critical}, counts {counts:?}");
    }
}

#[test]
fn icrd_stays_in_its_class_pool() {
    let inst = three_type_instance();
    let p = RoutingMatrix::new(vec![vec![0.4, 0.6, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
    let plan = PartitionPlan::evaluate(
        vec![0.0, 0.5, 1.0],
        vec![0.0, 0.3, 0.6, 1.0],
        p.clone(),
        vec![0.1, 0.15],
        vec![vec![1.0, 2.0, 0.0], vec![0.5, 0.5, 3.0]],
    )
    .unwrap();
    let eps = epsilon_allocation(&p, &plan.lambda_h, &plan.mu, &plan.v_widths()).unwrap();
    let reservation = icrd_reserve(&inst, &plan, &eps).unwrap();

    // Blocks are disjoint, sized as floor(N (lambda p / mu + eps)) and inside their group.
    let mut seen = vec![false; inst.servers()];
    for h in 0..2 {
        for &j in reservation.class_pool(h) {
            assert!(!seen[j]);
            seen[j] = true;
            let (bh, m) = reservation.block_of_server(j).unwrap();
            assert_eq!(bh, h);
            assert!(p.get(h, m) > 0.0);
            assert!(reservation.grouping().server_groups[m].contains(&j));
        }
        for m in 0..3 {
            let target = 30.0 * (plan.lambda_h[h] * p.get(h, m) / plan.mu[h][m].max(1e-300) + eps.get(h, m));
            let expected = if p.get(h, m) > 0.0 { (target + 1e-9).floor() as usize } else { 0 };
            assert_eq!(reservation.block_sizes()[h][m], expected);
        }
    }

    let spec = PolicySpec::IcrdJiq(reservation.clone());
    let router = Router::new(&inst, &spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let mut state = SimState::new(inst.servers(), router.pools());
        for _ in 0..rng.gen_range(0..60) {
            let i = rng.gen_range(0..10);
            let pool = reservation.class_pool(reservation.class_of_dispatcher(i));
            let j = pool[rng.gen_range(0..pool.len())];
            state.push(j, i, router.effective_rate(i, j));
        }
        let i = rng.gen_range(0..10);
        let j = router.route(&state, i, &mut rng);
        let h = reservation.class_of_dispatcher(i);
        assert!(reservation.class_pool(h).contains(&j));
        assert_eq!(reservation.pruned_rate(&inst, i, j), inst.rate(i, j));
        assert!(inst.rate(i, j) > 0.0);
    }
}
