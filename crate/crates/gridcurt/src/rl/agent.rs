//! Deterministic-policy actor-critic with target networks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{adam_step, soft_update, AdamParams, AdamState, Mlp, MlpGrads, OutputActivation};

use super::replay::Experience;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AgentConfig {
    /// Width of both hidden layers of actor and critic.
    pub hidden_width: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig { hidden_width: 512, actor_lr: 1e-4, critic_lr: 1e-3 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DdpgLosses {
    pub critic_loss: f64,
    pub actor_loss: f64,
}

/// Actor maps observations to actions in (-1, 1); the critic scores
/// (observation, action) pairs. Target copies stabilize the bootstrap.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DdpgAgent {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
}

impl DdpgAgent {
    pub fn new(obs_dim: usize, action_dim: usize, config: &AgentConfig, rng: &mut impl Rng) -> Self {
        let h = config.hidden_width;
        let actor = Mlp::new(&[obs_dim, h, h, action_dim], OutputActivation::Tanh, rng);
        let critic = Mlp::new(&[obs_dim + action_dim, h, h, 1], OutputActivation::Identity, rng);
        let actor_opt = AdamState::new(&actor, AdamParams::with_learning_rate(config.actor_lr));
        let critic_opt = AdamState::new(&critic, AdamParams::with_learning_rate(config.critic_lr));
        DdpgAgent {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            actor_opt,
            critic_opt,
        }
    }

    /// Greedy action for one observation.
    pub fn act(&self, observation: &[f64]) -> Result<Vec<f64>> {
        self.actor.forward(observation)
    }

    fn q_value(critic: &Mlp, observation: &[f64], action: &[f64]) -> Result<f64> {
        let mut input = Vec::with_capacity(observation.len() + action.len());
        input.extend_from_slice(observation);
        input.extend_from_slice(action);
        Ok(critic.forward(&input)?[0])
    }

    /// Mean-squared-error gradients of the critic against the bootstrapped
    /// targets r + gamma * (1 - done) * Q'(o', mu'(o')).
    fn critic_gradients(&self, batch: &[&Experience], gamma: f64) -> Result<(MlpGrads, f64)> {
        let inv = 1.0 / batch.len() as f64;
        let mut grads = MlpGrads::zeros_like(&self.critic);
        let mut loss = 0.0;
        for e in batch {
            let next_action = self.actor_target.forward(&e.next_observation)?;
            let next_q = Self::q_value(&self.critic_target, &e.next_observation, &next_action)?;
            let target = e.reward + gamma * if e.done { 0.0 } else { next_q };

            let mut input = Vec::with_capacity(e.observation.len() + e.action.len());
            input.extend_from_slice(&e.observation);
            input.extend_from_slice(&e.action);
            let cache = self.critic.forward_cached(&input)?;
            let q = cache.output[0];
            let diff = q - target;
            loss += diff * diff * inv;
            let (g, _) = self.critic.backward(&cache, &[2.0 * diff * inv])?;
            grads.add_scaled(&g, 1.0);
        }
        Ok((grads, loss))
    }

    /// Gradients of the actor loss -mean Q(o, mu(o)), chained through the
    /// critic's action input.
    fn actor_gradients(&self, batch: &[&Experience]) -> Result<(MlpGrads, f64)> {
        let inv = 1.0 / batch.len() as f64;
        let obs_dim = batch[0].observation.len();
        let mut grads = MlpGrads::zeros_like(&self.actor);
        let mut mean_q = 0.0;
        for e in batch {
            let actor_cache = self.actor.forward_cached(&e.observation)?;
            let mut input = Vec::with_capacity(obs_dim + actor_cache.output.len());
            input.extend_from_slice(&e.observation);
            input.extend_from_slice(&actor_cache.output);
            let critic_cache = self.critic.forward_cached(&input)?;
            mean_q += critic_cache.output[0] * inv;

            let (_, grad_input) = self.critic.backward(&critic_cache, &[1.0])?;
            let dq_da = &grad_input[obs_dim..];
            let (g, _) = self.actor.backward(&actor_cache, dq_da)?;
            // Descend on -Q.
            grads.add_scaled(&g, -inv);
        }
        Ok((grads, -mean_q))
    }

    /// One DDPG update on a sampled batch: critic regression, actor ascent
    /// through the updated critic, then soft target updates. Non-finite
    /// losses or gradients abort before the offending stage is applied.
    pub fn update(&mut self, batch: &[&Experience], gamma: f64, tau: f64) -> Result<DdpgLosses> {
        if batch.is_empty() {
            return Err(Error::Config("empty update batch".into()));
        }
        let (critic_grads, critic_loss) = self.critic_gradients(batch, gamma)?;
        if !critic_loss.is_finite() || !critic_grads.is_finite() {
            return Err(Error::NonFinite("critic update".into()));
        }
        adam_step(&mut self.critic, &critic_grads, &mut self.critic_opt)?;

        let (actor_grads, actor_loss) = self.actor_gradients(batch)?;
        if !actor_loss.is_finite() || !actor_grads.is_finite() {
            return Err(Error::NonFinite("actor update".into()));
        }
        adam_step(&mut self.actor, &actor_grads, &mut self.actor_opt)?;

        soft_update(&mut self.actor_target, &self.actor, tau)?;
        soft_update(&mut self.critic_target, &self.critic, tau)?;
        Ok(DdpgLosses { critic_loss, actor_loss })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_agent(seed: u64) -> DdpgAgent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DdpgAgent::new(3, 2, &AgentConfig { hidden_width: 4, actor_lr: 1e-3, critic_lr: 1e-2 }, &mut rng)
    }

    fn constant_batch(reward: f64) -> Vec<Experience> {
        let e = Experience {
            observation: vec![0.2, -0.4, 0.6],
            action: vec![0.1, -0.3],
            reward,
            next_observation: vec![0.2, -0.4, 0.6],
            done: false,
        };
        vec![e; 16]
    }

    #[test]
    fn zero_gamma_regresses_the_critic_to_the_reward() {
        let mut agent = tiny_agent(1);
        let batch = constant_batch(0.7);
        let refs: Vec<&Experience> = batch.iter().collect();

        let mut losses = Vec::new();
        for _ in 0..400 {
            losses.push(agent.update(&refs, 0.0, 0.005).unwrap().critic_loss);
        }
        assert!(losses[399] < 1e-3, "critic converges to the reward, loss {}", losses[399]);
        assert!(losses[399] < losses[0] * 1e-2);
        // Decrease is monotone until Adam reaches its noise floor.
        for w in losses.windows(2) {
            if w[0] < 1e-4 {
                break;
            }
            assert!(w[1] <= w[0] + 1e-9, "critic loss increased early: {w:?}");
        }
        let e = &batch[0];
        let q = DdpgAgent::q_value(&agent.critic, &e.observation, &e.action).unwrap();
        assert!((q - 0.7).abs() < 0.05, "Q = {q}");
    }

    #[test]
    fn actor_gradient_matches_finite_differences_through_both_networks() {
        let agent = tiny_agent(2);
        let batch = constant_batch(0.0);
        let refs: Vec<&Experience> = batch.iter().collect();
        let (grads, _) = agent.actor_gradients(&refs).unwrap();

        let mean_q = |agent: &DdpgAgent| -> f64 {
            refs.iter()
                .map(|e| {
                    let a = agent.actor.forward(&e.observation).unwrap();
                    DdpgAgent::q_value(&agent.critic, &e.observation, &a).unwrap()
                })
                .sum::<f64>()
                / refs.len() as f64
        };

        let h = 1e-6;
        for layer in 0..agent.actor.layers.len() {
            let n_weights = agent.actor.layers[layer].weights.data.len();
            for i in (0..n_weights).step_by(2) {
                let mut plus = agent.clone();
                plus.actor.layers[layer].weights.data[i] += h;
                let mut minus = agent.clone();
                minus.actor.layers[layer].weights.data[i] -= h;
                // Gradient of the loss -mean Q.
                let expected = -(mean_q(&plus) - mean_q(&minus)) / (2.0 * h);
                let got = grads.layers[layer].weights.data[i];
                let scale = expected.abs().max(got.abs()).max(1e-6);
                assert!(
                    (got - expected).abs() / scale < 1e-3,
                    "layer {layer} weight {i}: {got} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn full_tau_copies_targets_after_one_update() {
        let mut agent = tiny_agent(3);
        let batch = constant_batch(0.2);
        let refs: Vec<&Experience> = batch.iter().collect();
        agent.update(&refs, 0.9, 1.0).unwrap();
        assert_eq!(agent.actor, agent.actor_target);
        assert_eq!(agent.critic, agent.critic_target);
    }

    #[test]
    fn updates_are_deterministic() {
        let run = || {
            let mut agent = tiny_agent(4);
            let batch = constant_batch(-0.4);
            let refs: Vec<&Experience> = batch.iter().collect();
            for _ in 0..20 {
                agent.update(&refs, 0.95, 0.01).unwrap();
            }
            serde_json::to_string(&agent).unwrap()
        };
        assert_eq!(run(), run());
    }
}
