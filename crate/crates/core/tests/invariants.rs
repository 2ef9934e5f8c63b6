use pld_alloc::oracle::{brute_force_alloc_pld, exact_subsampled_pair, gaussian_delta_analytic};
use pld_alloc::*;
use proptest::prelude::*;

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    let mut out: Vec<f64> = v.into_iter().map(|x| x / s).collect();
    let head: f64 = out[..out.len() - 1].iter().sum();
    *out.last_mut().unwrap() = 1.0 - head;
    out
}

fn pair() -> impl Strategy<Value = DiscretePair> {
    (2usize..=3).prop_flat_map(|m| {
        (prop::collection::vec(0.02f64..1.0, m), prop::collection::vec(0.02f64..1.0, m))
            .prop_map(|(p, q)| DiscretePair::new(normalized(p), normalized(q)).unwrap())
    })
}

fn adjacency() -> impl Strategy<Value = AdjacencyDirection> {
    prop_oneof![Just(AdjacencyDirection::Remove), Just(AdjacencyDirection::Add)]
}

fn budget(alpha: f64) -> TightnessParams {
    TightnessParams::new(alpha, 1e-12).unwrap()
}

fn alloc(l: &DiscretePld, t: usize, adj: AdjacencyDirection, dir: BoundDirection) -> DiscretePld {
    match adj {
        AdjacencyDirection::Remove => rand_alloc_remove(l, t, budget(1e-3), dir).unwrap(),
        AdjacencyDirection::Add => rand_alloc_add(l, t, budget(1e-3), dir).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn allocation_brackets_brute_force(pair in pair(), t in 2usize..=4, adj in adjacency()) {
        let exact = brute_force_alloc_pld(&pair, t, adj).unwrap();
        let single = discrete_pair_pld(&pair, adj).unwrap();
        let upper = alloc(&single, t, adj, BoundDirection::Upper);
        let lower = alloc(&single, t, adj, BoundDirection::Lower);
        prop_assert!(check_stoch_dom(&exact, &upper, 0.0, 0.0));
        prop_assert!(check_stoch_dom(&lower, &exact, 0.0, 0.0));
        prop_assert!(check_stoch_dom(&upper, &exact, 1e-3, 1e-12));
    }

    #[test]
    fn subsampling_matches_mixture_pair(pair in pair(), lambda in 0.0f64..=1.0) {
        let rate = SamplingRate::new(lambda).unwrap();
        let mixed = exact_subsampled_pair(&pair, lambda).unwrap();
        let got = subsample_remove(&discrete_pair_pld(&pair, AdjacencyDirection::Remove).unwrap(), rate).unwrap();
        let want = discrete_pair_pld(&mixed, AdjacencyDirection::Remove).unwrap();
        for eps in [0.0, 0.1, 0.5, 1.0] {
            prop_assert!((got.hockey_stick_delta(eps) - want.hockey_stick_delta(eps)).abs() < 1e-12);
        }
        let got = subsample_add(&discrete_pair_pld(&pair, AdjacencyDirection::Add).unwrap(), rate).unwrap();
        let want = discrete_pair_pld(&mixed, AdjacencyDirection::Add).unwrap();
        for eps in [0.0, 0.1, 0.5, 1.0] {
            prop_assert!((got.hockey_stick_delta(eps) - want.hockey_stick_delta(eps)).abs() < 1e-12);
        }
    }

    #[test]
    fn composition_sandwich(a in pair(), b in pair(), k in 1usize..=5) {
        let la = discrete_pair_pld(&a, AdjacencyDirection::Remove).unwrap();
        let lb = discrete_pair_pld(&b, AdjacencyDirection::Remove).unwrap();
        let up = compose(&la, &lb, 1e-2, BoundDirection::Upper).unwrap();
        let lo = compose(&la, &lb, 1e-2, BoundDirection::Lower).unwrap();
        prop_assert!(check_stoch_dom(&lo, &up, 0.0, 0.0));
        prop_assert!(check_stoch_dom(&up, &lo, 2e-2, 0.0));
        let up = self_compose(&la, k, 1e-2, BoundDirection::Upper).unwrap();
        let lo = self_compose(&la, k, 1e-2, BoundDirection::Lower).unwrap();
        prop_assert!(check_stoch_dom(&lo, &up, 0.0, 0.0));
        prop_assert!((up.total_mass() - 1.0).abs() < 1e-12);
        prop_assert!(up.is_realization());
    }

    #[test]
    fn delta_curve_is_nonincreasing(pair in pair(), adj in adjacency()) {
        let l = discrete_pair_pld(&pair, adj).unwrap();
        let deltas: Vec<f64> = (0..40).map(|i| l.hockey_stick_delta(i as f64 * 0.1)).collect();
        prop_assert!(deltas.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn epsilon_inverts_delta(pair in pair(), delta in 1e-6f64..0.5) {
        let l = discrete_pair_pld(&pair, AdjacencyDirection::Remove).unwrap();
        let eps = l.epsilon_for_delta(delta).unwrap();
        prop_assert!(l.hockey_stick_delta(eps.max(0.0)) <= delta + 1e-9);
    }

    #[test]
    fn dual_is_an_involution(pair in pair()) {
        let l = discrete_pair_pld(&pair, AdjacencyDirection::Remove).unwrap();
        let back = l.dual().unwrap().dual().unwrap();
        for eps in [0.0, 0.3, 1.0] {
            prop_assert!((back.hockey_stick_delta(eps) - l.hockey_stick_delta(eps)).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip(pair in pair()) {
        let l = discrete_pair_pld(&pair, AdjacencyDirection::Add).unwrap();
        prop_assert_eq!(DiscretePld::from_json(&l.to_json()).unwrap(), l);
    }
}

#[test]
fn discretized_gaussian_matches_closed_form() {
    let g = gaussian_pld_source(GaussianMechanism::new(1.0).unwrap(), AdjacencyDirection::Remove);
    let (alpha, beta) = (1e-4, 1e-12);
    let up = discretize(&g, TightnessParams::new(alpha, beta).unwrap(), BoundDirection::Upper).unwrap();
    let lo = discretize(&g, TightnessParams::new(alpha, beta).unwrap(), BoundDirection::Lower).unwrap();
    for eps in [0.0, 0.5, 1.0, 2.0] {
        let exact = gaussian_delta_analytic(1.0, eps);
        assert!(up.hockey_stick_delta(eps) >= exact - 1e-12);
        assert!(up.hockey_stick_delta(eps) <= gaussian_delta_analytic(1.0, eps - alpha) + beta + 1e-12);
        assert!(lo.hockey_stick_delta(eps) <= exact + 1e-12);
    }
}

#[test]
fn brute_force_moment_is_mass_of_support() {
    // P has full support, so the mixture covers every sequence and E[e^{-L}] = 1.
    let rr = DiscretePair::randomized_response(0.8).unwrap();
    let l = brute_force_alloc_pld(&rr, 4, AdjacencyDirection::Remove).unwrap();
    assert!((l.neg_exp_moment().unwrap() - 1.0).abs() < 1e-12);
    // With Q missing an outcome, the moment drops to the Q^t mass of the support.
    let pair = DiscretePair::new(vec![0.5, 0.5], vec![1.0, 0.0]).unwrap();
    let l = brute_force_alloc_pld(&pair, 3, AdjacencyDirection::Remove).unwrap();
    assert!(l.neg_exp_moment().unwrap() <= 1.0 + 1e-12);
}
