use edgemine::comms::OffloadMode;
use edgemine::madrl::{actor_act, actor_grad_from_action_grad, ActionHead};
use edgemine::model::GeneratorParams;
use edgemine::nn::{Adam, AdamConfig, Mlp};
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One agent, synthetic critic `Q = -||a - a*||^2` on the squashed action.
#[test]
fn actor_converges_to_quadratic_critic_optimum() {
    let head = ActionHead::new(1);
    let target = Array1::from(vec![0.3, -0.4, 0.2, 0.7, 0.5]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut actor = Mlp::<f64>::new(&[2, 16, head.dim()], &mut rng, Some(3e-3));
    let mut opt = Adam::new(&actor, AdamConfig::default());
    let obs = Array2::from_shape_fn((8, 2), |_| rng.gen_range(-1.0..1.0));
    let b = obs.nrows() as f64;
    for _ in 0..2000 {
        let (raw, cache) = actor.forward(obs.view()).unwrap();
        let a = head.squash(raw.view());
        // d(-mean Q)/da
        let grad_a = (&a - &target.view().insert_axis(Axis(0))) * (2.0 / b);
        let g =
            actor_grad_from_action_grad(&actor, &cache, &raw, &head, grad_a.view(), 0.0).unwrap();
        opt.step(&mut actor, &g).unwrap();
    }
    let a = head.squash(actor.predict(obs.view()).unwrap().view());
    for row in a.rows() {
        for (x, t) in row.iter().zip(target.iter()) {
            assert!((x - t).abs() < 1e-2, "{row} vs {target}");
        }
    }
}

/// At epsilon = 1 every draw is the exploration action: the mode is uniform
/// over local plus K sub-bands and each scaled resource is uniform on its
/// budget interval.
#[test]
fn full_exploration_is_uniform() {
    let k = 3;
    let head = ActionHead::new(k);
    let dev = GeneratorParams::sample(1, k, 0).template;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let actor = Mlp::<f64>::new(&[4, 8, head.dim()], &mut rng, None);
    let draws = 10_000;
    let bins = 10;
    let mut modes = vec![0.0; k + 1];
    let mut power = vec![0.0; bins];
    let mut cpu = vec![0.0; bins];
    let obs = [0.1, 0.2, 0.3, 0.4];
    let bin = |v: f64, budget: f64| {
        let u = (v / budget - head.floor) / (1.0 - head.floor);
        ((u * bins as f64) as usize).min(bins - 1)
    };
    for _ in 0..draws {
        let c = actor_act(&actor, &head, &dev, &obs, 1.0, &mut rng).unwrap();
        assert!(c.explored);
        assert!(c.action.tx_power_w > 0.0 && c.action.tx_power_w <= dev.max_tx_power_w);
        let m = match c.action.mode {
            OffloadMode::Local => 0,
            OffloadMode::Offload { channel } => channel + 1,
        };
        modes[m] += 1.0;
        power[bin(c.action.tx_power_w, dev.max_tx_power_w)] += 1.0;
        cpu[bin(c.action.local_cpu_hz, dev.cpu_budget_hz)] += 1.0;
    }
    let chi2 = |obs: &[f64]| {
        let e = draws as f64 / obs.len() as f64;
        obs.iter().map(|o| (o - e) * (o - e) / e).sum::<f64>()
    };
    // 0.999 quantiles of chi-squared with 3 and 9 degrees of freedom
    assert!(chi2(&modes) < 16.27, "modes {modes:?}");
    assert!(chi2(&power) < 27.88, "power {power:?}");
    assert!(chi2(&cpu) < 27.88, "cpu {cpu:?}");
}
