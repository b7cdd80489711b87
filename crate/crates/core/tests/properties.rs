use edgemine::comms::{uplink_rate, OffloadAction};
use edgemine::consensus::expected_sum;
use edgemine::game::GameInstance;
use edgemine::madrl::{Experience, ReplayBuffer};
use edgemine::model::{generate_scenario, GeneratorParams, Scenario};
use edgemine::nn::Mlp;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn extra_interferer_never_raises_rate(seed in 0u64..10_000, n in 2usize..8, k in 1usize..4, p in 0.01f64..1.0) {
        let s = generate_scenario(&GeneratorParams::sample(n, k, seed)).unwrap();
        let mut joint: Vec<OffloadAction> = s.devices.iter().map(|d| OffloadAction::local(d.cpu_budget_hz, 1.0)).collect();
        joint[0] = OffloadAction::offload(0, s.devices[0].max_tx_power_w, s.devices[0].cpu_budget_hz, 1.0);
        let alone = uplink_rate(0, &joint, &s).unwrap();
        joint[1] = OffloadAction::offload(0, p * s.devices[1].max_tx_power_w, s.devices[1].cpu_budget_hz, 1.0);
        let shared = uplink_rate(0, &joint, &s).unwrap();
        prop_assert!(shared <= alone);
        joint[1].tx_power_w = s.devices[1].max_tx_power_w;
        prop_assert!(uplink_rate(0, &joint, &s).unwrap() <= shared);
    }

    #[test]
    fn scenario_json_round_trip(seed in 0u64..10_000, n in 1usize..10, k in 1usize..6) {
        let s = generate_scenario(&GeneratorParams::sample(n.max(2), k, seed)).unwrap();
        let back = Scenario::from_json_str(&s.to_json_string().unwrap()).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn sum_identity(n in 1usize..100_000) {
        let n64 = n as u64;
        prop_assert_eq!(2 * expected_sum(n), n64 * (n64 + 1));
    }

    #[test]
    fn target_lag_closed_form(seed in 0u64..1000, k in 1usize..30, zeta in 0.05f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let behavior = Mlp::<f64>::new(&[3, 5, 2], &mut rng, None);
        let mut target = Mlp::<f64>::new(&[3, 5, 2], &mut rng, None);
        let t0 = target.params_flat();
        for _ in 0..k {
            target.soft_update_from(&behavior, zeta).unwrap();
        }
        let keep = (1.0 - zeta).powi(k as i32);
        for ((t, b), t0) in target.params_flat().iter().zip(behavior.params_flat()).zip(t0) {
            let expect = b * (1.0 - keep) + t0 * keep;
            prop_assert!((t - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn potential_rises_along_improvement_paths(seed in 0u64..10_000, n in 1usize..7, k in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = GameInstance::<f64>::random(n, k, &mut rng);
        let mut p = vec![0; n];
        let mut steps = 0;
        loop {
            let mut moved = false;
            for i in 0..n {
                let (a, u) = g.best_response(i, &p);
                if u > g.utility(i, &p) + 1e-12 {
                    let before = g.potential(&p);
                    p[i] = a;
                    prop_assert!(g.potential(&p) > before);
                    moved = true;
                    steps += 1;
                }
            }
            if !moved {
                break;
            }
        }
        prop_assert!(steps as u128 <= g.num_profiles());
    }

    #[test]
    fn positive_scaling_keeps_best_responses(seed in 0u64..10_000, n in 1usize..7, k in 1usize..4, c in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = GameInstance::<f64>::random(n, k, &mut rng);
        let h = g.scaled(c);
        for idx in 0..g.num_profiles().min(200) {
            let p = g.profile_at(idx);
            for i in 0..n {
                prop_assert_eq!(g.best_response(i, &p).0, h.best_response(i, &p).0);
            }
        }
        let start = vec![0; n];
        prop_assert_eq!(g.solve_nash(&start, 1000).unwrap().profile, h.solve_nash(&start, 1000).unwrap().profile);
    }
}

#[test]
fn replay_sampling_is_uniform() {
    let entries = 1000;
    let draws = 100_000;
    let mut buf = ReplayBuffer::<f64>::new(entries);
    for i in 0..entries {
        buf.push(Experience {
            obs: vec![i as f64],
            actions: vec![],
            rewards: vec![],
            next_obs: vec![],
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut counts = vec![0u32; entries];
    let mut left = draws;
    while left > 0 {
        let b = left.min(128);
        for i in buf.sample_indices(b, &mut rng) {
            counts[i] += 1;
        }
        left -= b;
    }
    let p = 1.0 / entries as f64;
    let mean = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for (i, c) in counts.iter().enumerate() {
        assert!(
            (*c as f64 - mean).abs() <= 5.0 * sigma,
            "entry {i} drawn {c} times, expected {mean} +- {sigma}"
        );
    }
}
