use ge_remote::dp_finite::solve_finite;
use ge_remote::dp_threshold::{backward_induction, extract_thresholds, Ar1Problem, SolverGrid, ThresholdMode, ThresholdSchedule};
use ge_remote::models::{Ar1Source, DistortionFn, FiniteDistortion, FiniteMarkovSource, GilbertElliottChannel, NoiseSpec};
use ge_remote::oracle::{
    exact_cost, exhaustive_search, monte_carlo_profile, profile_from_finite_solution, Granularity, StrategyProfile, TinyInstance,
    TxInfoSet,
};
use ge_remote::simulator::{monte_carlo_cost, perturbation_check, simulate_finite, FiniteModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CAL_Q: [[f64; 2]; 2] = [[0.7, 0.3], [0.2, 0.8]];

fn calibration(lambda: f64, horizon: usize) -> TinyInstance {
    TinyInstance {
        source: FiniteMarkovSource::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]], vec![0.5, 0.5]).unwrap(),
        channel: GilbertElliottChannel::new(CAL_Q, [0.4, 0.6]).unwrap(),
        distortion: FiniteDistortion::zero_one(2),
        lambda,
        horizon,
    }
}

fn model(inst: &TinyInstance) -> FiniteModel {
    FiniteModel { source: inst.source.clone(), channel: inst.channel.clone(), distortion: inst.distortion.clone(), lambda: inst.lambda }
}

#[test]
fn dp_value_matches_restricted_search() {
    for lambda in [0.0, 0.4, 1.5] {
        for horizon in 0..=2 {
            let inst = calibration(lambda, horizon);
            let sol = solve_finite(&inst.source, &inst.channel, &inst.distortion, lambda, horizon).unwrap();
            let search = exhaustive_search(&inst, Granularity::Restricted).unwrap();
            assert!((sol.value - search.min_cost).abs() < 1e-9, "lambda={lambda} T={horizon}: {} vs {}", sol.value, search.min_cost);
        }
    }
}

#[test]
fn full_and_restricted_searches_agree() {
    for lambda in [0.1, 0.4, 0.9] {
        let inst = calibration(lambda, 1);
        let full = exhaustive_search(&inst, Granularity::Full).unwrap();
        let restricted = exhaustive_search(&inst, Granularity::Restricted).unwrap();
        assert!((full.min_cost - restricted.min_cost).abs() < 1e-9);
    }
}

#[test]
fn dp_policy_replayed_exactly() {
    let inst = calibration(0.4, 2);
    let sol = solve_finite(&inst.source, &inst.channel, &inst.distortion, 0.4, 2).unwrap();
    let profile = profile_from_finite_solution(&inst, &sol).unwrap();
    let v = exact_cost(&inst, &profile, Granularity::Restricted).unwrap();
    assert!((v - sol.value).abs() < 1e-9, "{v} vs {}", sol.value);
}

#[test]
fn dp_value_lower_bounds_random_profiles() {
    let inst = calibration(0.4, 2);
    let sol = solve_finite(&inst.source, &inst.channel, &inst.distortion, 0.4, 2).unwrap();
    let base = profile_from_finite_solution(&inst, &sol).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..300 {
        // random transmitter on every reachable set, receiver best-responding is not needed for a bound
        let mut p = StrategyProfile::default();
        for k in base.transmitter.keys() {
            p.transmitter.insert(TxInfoSet { history: k.history.clone(), local: k.local.clone() }, rng.random::<bool>());
        }
        fill_receiver(&inst, &mut p, &mut rng);
        let v = exact_cost(&inst, &p, Granularity::Restricted).unwrap();
        assert!(v >= sol.value - 1e-12);
    }
}

fn fill_receiver(inst: &TinyInstance, p: &mut StrategyProfile, rng: &mut ChaCha8Rng) {
    use ge_remote::models::{ChannelState, ChannelSymbol};
    use ge_remote::oracle::CommonHistory;
    let mut frontier: Vec<CommonHistory> =
        ChannelState::BOTH.into_iter().filter(|s| inst.channel.initial[s.index()] > 0.0).map(CommonHistory::root).collect();
    for t in 0..=inst.horizon {
        let mut next = Vec::new();
        for h in &frontier {
            let mut outs = vec![(ChannelState::Off, ChannelSymbol::Blank0), (ChannelState::On, ChannelSymbol::Blank1)];
            outs.extend((0..2).map(|x| (ChannelState::On, ChannelSymbol::Payload(x))));
            for (s, y) in outs {
                let e = h.extended(s, y);
                p.receiver.insert(e.clone(), rng.random_range(0..2));
                if t < inst.horizon {
                    for x in 0..2 {
                        p.transmitter.entry(TxInfoSet { history: e.clone(), local: vec![x] }).or_insert_with(|| rng.random());
                    }
                }
                next.push(e);
            }
        }
        frontier = next;
    }
}

#[test]
fn finite_simulation_matches_dp() {
    for horizon in [0, 2] {
        let inst = calibration(0.4, horizon);
        let sol = solve_finite(&inst.source, &inst.channel, &inst.distortion, 0.4, horizon).unwrap();
        let est = simulate_finite(&model(&inst), &sol, horizon, 40_000, 5).unwrap();
        assert!(est.within_3se(sol.value), "T={horizon}: {} +- {} vs {}", est.mean, est.std_error, sol.value);
    }
}

#[test]
fn exact_cost_matches_profile_simulation() {
    let inst = calibration(0.4, 2);
    let search = exhaustive_search(&inst, Granularity::Restricted).unwrap();
    let est = monte_carlo_profile(&inst, &search.argmin, Granularity::Restricted, 40_000, 3).unwrap();
    assert!(est.within_3se(search.min_cost), "{} +- {} vs {}", est.mean, est.std_error, search.min_cost);
}

fn ar1(a: f64, noise: NoiseSpec, lambda: f64, horizon: usize) -> Ar1Problem {
    Ar1Problem {
        source: Ar1Source::new(a, noise).unwrap(),
        channel: GilbertElliottChannel::new(CAL_Q, [0.4, 0.6]).unwrap(),
        distortion: DistortionFn::Squared,
        lambda,
        horizon,
    }
}

#[test]
fn threshold_policy_simulates_to_dp_value() {
    let p = ar1(0.9, NoiseSpec::gaussian(1.0), 1.0, 4);
    let vg = backward_induction(&p, SolverGrid::new(30.0, 2001).unwrap()).unwrap();
    let k = extract_thresholds(&vg, ThresholdMode::Refined).unwrap();
    let est = monte_carlo_cost(&p, &k, 4, 40_000, 21).unwrap();
    let j0 = vg.initial_value(p.channel.initial);
    assert!(est.within_3se(j0), "{} +- {} vs {j0}", est.mean, est.std_error);
}

#[test]
fn never_transmit_random_walk() {
    let p = ar1(1.0, NoiseSpec::gaussian(1.0), 1.0, 4);
    let est = monte_carlo_cost(&p, &ThresholdSchedule::never(4), 4, 40_000, 2).unwrap();
    assert!(est.within_3se(10.0), "{} +- {}", est.mean, est.std_error);
    assert_eq!(est.mean_transmissions, 0.0);
}

#[test]
fn zero_lambda_zero_threshold_is_locally_optimal() {
    let p = ar1(1.0, NoiseSpec::gaussian(1.0), 0.0, 3);
    let report = perturbation_check(&p, &ThresholdSchedule::always(3), &[1.0], 3, 20_000, 4).unwrap();
    assert!(!report.any_improvement());
    assert!(report.entries.iter().all(|e| e.diff_mean >= -3.0 * e.paired_std_error));
}

#[test]
fn sequential_and_parallel_pools_agree() {
    let p = ar1(1.1, NoiseSpec::laplace(0.8), 2.0, 5);
    let run = || {
        let vg = backward_induction(&p, SolverGrid::new(40.0, 801).unwrap()).unwrap();
        let k = extract_thresholds(&vg, ThresholdMode::Refined).unwrap();
        let est = monte_carlo_cost(&p, &k, 5, 5_000, 8).unwrap();
        let inst = calibration(0.4, 2);
        let sol = solve_finite(&inst.source, &inst.channel, &inst.distortion, 0.4, 2).unwrap();
        let search = exhaustive_search(&inst, Granularity::Restricted).unwrap();
        (vg, k, est, sol.value, sol.policy, search.min_cost)
    };
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(run);
    let many = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap().install(run);
    assert_eq!(one.0, many.0);
    assert_eq!(one.1, many.1);
    assert_eq!(one.2, many.2);
    assert_eq!(one.3.to_bits(), many.3.to_bits());
    assert_eq!(one.4, many.4);
    assert_eq!(one.5.to_bits(), many.5.to_bits());
}
