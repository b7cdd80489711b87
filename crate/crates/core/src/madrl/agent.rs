use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::action::ActionHead;
use crate::comms::OffloadAction;
use crate::error::{Error, Result};
use crate::model::DeviceConfig;
use crate::nn::{Adam, ForwardCache, Gradients, Mlp};
use crate::scalar::Scalar;

/// Initial half-width of actor and critic output layers.
const OUTPUT_INIT: f64 = 3e-3;

/// Behavior and target networks of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentNets<T> {
    pub actor: Mlp<T>,
    pub actor_target: Mlp<T>,
    pub critic: Mlp<T>,
    pub critic_target: Mlp<T>,
}

impl<T: Scalar> AgentNets<T> {
    /// Targets start as exact copies of the behavior networks.
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        critic_in: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let dims = |i: usize, o: usize| -> Vec<usize> {
            std::iter::once(i)
                .chain(hidden.iter().copied())
                .chain(std::iter::once(o))
                .collect()
        };
        let actor = Mlp::new(&dims(obs_dim, act_dim), rng, Some(OUTPUT_INIT));
        let critic = Mlp::new(&dims(critic_in, 1), rng, Some(OUTPUT_INIT));
        Self {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
        }
    }

    pub fn soft_update(&mut self, zeta: T) -> Result<()> {
        self.actor_target.soft_update_from(&self.actor, zeta)?;
        self.critic_target.soft_update_from(&self.critic, zeta)
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite()
            && self.actor_target.is_finite()
            && self.critic.is_finite()
            && self.critic_target.is_finite()
    }
}

/// Squashed action vector and its decoded form.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorChoice<T> {
    pub squashed: Vec<T>,
    pub action: OffloadAction,
    pub explored: bool,
}

/// Epsilon-greedy action of one agent from its local observation only.
pub fn actor_act<T: Scalar, R: Rng + ?Sized>(
    actor: &Mlp<T>,
    head: &ActionHead,
    device: &DeviceConfig,
    obs: &[T],
    epsilon: f64,
    rng: &mut R,
) -> Result<ActorChoice<T>> {
    if obs.len() != actor.input_dim() {
        return Err(Error::Dimension {
            expected: actor.input_dim(),
            actual: obs.len(),
        });
    }
    let explored = rng.gen::<f64>() < epsilon;
    let squashed = if explored {
        head.random(rng)
    } else {
        let raw = actor.predict_one(obs)?;
        let raw = Array2::from_shape_vec((1, raw.len()), raw).expect("row vector");
        head.squash(raw.view()).into_raw_vec_and_offset().0
    };
    let action = head.decode(&squashed, device);
    Ok(ActorChoice {
        squashed,
        action,
        explored,
    })
}

/// `y = r + gamma * Q'(next_x)`.
pub fn td_targets<T: Scalar>(
    critic_target: &Mlp<T>,
    next_x: ArrayView2<T>,
    rewards: ArrayView1<T>,
    gamma: T,
) -> Result<Array1<T>> {
    let q = critic_target.predict(next_x)?;
    Ok(&rewards + &(q.column(0).to_owned() * gamma))
}

/// Mean squared TD error and its parameter gradient.
pub fn critic_loss_and_grad<T: Scalar>(
    critic: &Mlp<T>,
    x: ArrayView2<T>,
    y: ArrayView1<T>,
) -> Result<(T, Gradients<T>)> {
    if x.nrows() == 0 {
        return Err(Error::Contract("empty batch".into()));
    }
    if y.len() != x.nrows() {
        return Err(Error::Dimension {
            expected: x.nrows(),
            actual: y.len(),
        });
    }
    let (q, cache) = critic.forward(x)?;
    let diff = &q.column(0) - &y;
    let b = T::lit(x.nrows() as f64);
    let loss = diff.mapv(|d| d * d).sum() / b;
    let two = T::lit(2.0);
    let grad_out = diff.mapv(|d| two * d / b).insert_axis(Axis(1));
    let (grads, _) = critic.backward(&cache, grad_out.view())?;
    Ok((loss, grads))
}

/// One Adam step on the critic; returns the loss before the step.
pub fn critic_update<T: Scalar>(
    critic: &mut Mlp<T>,
    opt: &mut Adam<T>,
    x: ArrayView2<T>,
    y: ArrayView1<T>,
) -> Result<T> {
    let (loss, grads) = critic_loss_and_grad(critic, x, y)?;
    opt.step(critic, &grads)?;
    Ok(loss)
}

/// Mean `Q(x)` with the columns `slot` of `x` replaced by the squashed actor
/// output on `obs`, and the gradient w.r.t. the actor parameters of the loss
/// `-mean Q + preact_reg * mean ||z||^2`, where `z` is the raw actor output.
/// The small penalty on `z` keeps the squashing functions out of saturation.
pub fn actor_objective_and_grad<T: Scalar>(
    actor: &Mlp<T>,
    critic: &Mlp<T>,
    head: &ActionHead,
    obs: ArrayView2<T>,
    x: ArrayView2<T>,
    slot: Range<usize>,
    preact_reg: T,
) -> Result<(T, Gradients<T>)> {
    if obs.nrows() == 0 {
        return Err(Error::Contract("empty batch".into()));
    }
    if actor.output_dim() != head.dim()
        || slot.len() != head.dim()
        || slot.end > x.ncols()
        || obs.nrows() != x.nrows()
    {
        return Err(Error::Contract(
            "action slot does not fit the critic input".into(),
        ));
    }
    let (raw, actor_cache) = actor.forward(obs)?;
    let a = head.squash(raw.view());
    let mut joint = x.to_owned();
    joint.slice_mut(s![.., slot.clone()]).assign(&a);
    let (q, critic_cache) = critic.forward(joint.view())?;
    let b = T::lit(obs.nrows() as f64);
    let objective = q.sum() / b;
    let grad_q = Array2::from_elem((obs.nrows(), 1), -T::one() / b);
    let (_, grad_x) = critic.backward(&critic_cache, grad_q.view())?;
    let grad_a = grad_x.slice(s![.., slot]);
    let grads = actor_grad_from_action_grad(actor, &actor_cache, &raw, head, grad_a, preact_reg)?;
    Ok((objective, grads))
}

/// Actor parameter gradient given `grad_a`, the loss gradient w.r.t. the
/// squashed actions of a forward pass (`cache`, `raw`). Adds the gradient of
/// `preact_reg * mean ||z||^2`. Lets callers drive the actor with any
/// differentiable critic.
pub fn actor_grad_from_action_grad<T: Scalar>(
    actor: &Mlp<T>,
    cache: &ForwardCache<T>,
    raw: &Array2<T>,
    head: &ActionHead,
    grad_a: ArrayView2<T>,
    preact_reg: T,
) -> Result<Gradients<T>> {
    if grad_a.dim() != raw.dim() || raw.ncols() != head.dim() {
        return Err(Error::Dimension {
            expected: head.dim(),
            actual: grad_a.ncols(),
        });
    }
    let a = head.squash(raw.view());
    let mut grad_raw = head.squash_backward(a.view(), grad_a);
    let k = T::lit(2.0) * preact_reg / T::lit(raw.nrows() as f64);
    grad_raw.zip_mut_with(raw, |g, z| *g += k * *z);
    Ok(actor.backward(cache, grad_raw.view())?.0)
}

/// One Adam step ascending the deterministic policy gradient; returns the
/// gradient norm.
pub fn actor_update<T: Scalar>(
    actor: &mut Mlp<T>,
    opt: &mut Adam<T>,
    critic: &Mlp<T>,
    head: &ActionHead,
    obs: ArrayView2<T>,
    x: ArrayView2<T>,
    slot: Range<usize>,
    preact_reg: T,
) -> Result<T> {
    let (_, grads) = actor_objective_and_grad(actor, critic, head, obs, x, slot, preact_reg)?;
    opt.step(actor, &grads)?;
    Ok(grads.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{AdamConfig, Dense};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn targets_start_equal() {
        let a: AgentNets<f64> = AgentNets::new(4, 5, 9, &[8], &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(a.actor, a.actor_target);
        assert_eq!(a.critic, a.critic_target);
    }

    #[test]
    fn gamma_zero_target_is_reward() {
        let c: Mlp<f64> = Mlp::new(&[3, 4, 1], &mut ChaCha8Rng::seed_from_u64(1), None);
        let y = td_targets(
            &c,
            Array2::ones((2, 3)).view(),
            array![1.5, -2.0].view(),
            0.0,
        )
        .unwrap();
        assert_eq!(y, array![1.5, -2.0]);
    }

    #[test]
    fn critic_loss_zero_when_fit() {
        let c: Mlp<f64> = Mlp::new(&[2, 3, 1], &mut ChaCha8Rng::seed_from_u64(2), None);
        let x = array![[0.1, 0.2], [0.3, -0.1]];
        let y = c.predict(x.view()).unwrap().column(0).to_owned();
        let (loss, g) = critic_loss_and_grad(&c, x.view(), y.view()).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.norm(), 0.0);
        let mut c2 = c.clone();
        let mut opt = Adam::new(&c2, AdamConfig::default());
        critic_update(&mut c2, &mut opt, x.view(), y.view()).unwrap();
        assert_eq!(c2, c);
    }

    #[test]
    fn mismatched_head_is_rejected() {
        let actor: Mlp<f64> = Mlp::new(&[2, 4, 3], &mut ChaCha8Rng::seed_from_u64(3), None);
        let critic = Mlp::from_layers(vec![Dense {
            weight: Array2::zeros((4, 1)),
            bias: array![2.0],
        }])
        .unwrap();
        let head = ActionHead::new(0);
        let obs = array![[0.5, -0.5]];
        let r = actor_objective_and_grad(
            &actor,
            &critic,
            &head,
            obs.view(),
            Array2::zeros((1, 4)).view(),
            0..4,
            0.0,
        );
        assert!(r.is_err());
    }

    #[test]
    fn constant_critic_gives_zero_actor_gradient() {
        let head = ActionHead::new(0);
        let actor: Mlp<f64> =
            Mlp::new(&[2, 4, head.dim()], &mut ChaCha8Rng::seed_from_u64(3), None);
        let critic = Mlp::from_layers(vec![Dense {
            weight: Array2::zeros((head.dim(), 1)),
            bias: array![2.0],
        }])
        .unwrap();
        let obs = array![[0.5, -0.5], [0.1, 0.9]];
        let x = Array2::zeros((2, head.dim()));
        let (obj, g) = actor_objective_and_grad(
            &actor,
            &critic,
            &head,
            obs.view(),
            x.view(),
            0..head.dim(),
            0.0,
        )
        .unwrap();
        assert_eq!(obj, 2.0);
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn deterministic_when_not_exploring() {
        let head = ActionHead::new(2);
        let actor: Mlp<f64> =
            Mlp::new(&[3, 8, head.dim()], &mut ChaCha8Rng::seed_from_u64(4), None);
        let dev = crate::model::GeneratorParams::sample(1, 2, 0).template;
        let o = [0.2, 0.4, 0.6];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = actor_act(&actor, &head, &dev, &o, 0.0, &mut rng).unwrap();
        let b = actor_act(&actor, &head, &dev, &o, 0.0, &mut rng).unwrap();
        assert_eq!(a, b);
        assert!(!a.explored);
        assert!(actor_act(&actor, &head, &dev, &[0.0], 0.0, &mut rng).is_err());
    }
}
