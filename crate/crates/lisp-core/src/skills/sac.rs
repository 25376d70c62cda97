//! Entropy-regularized actor-critic (SAC) with twin critics, Polyak-averaged
//! targets, and automatic temperature tuning.
//!
//! The machinery is agnostic to what the "action" is: the skill policy uses
//! observations `(s, z)` and emits primitive actions, while the skill-practice
//! distribution uses observations `s` and emits skills. The critic bootstrap
//! keeps the observation's conditioning fixed (for the skill policy, the same
//! z appears on both sides of the Bellman target).

use rand::Rng;

use crate::mat::Mat;
use crate::nn::policy::PolicyNet;
use crate::nn::{Activation, Adam, LogStdBounds, Mlp, NonFinite, Tape};

#[derive(Debug, thiserror::Error)]
#[error("non-finite value during {phase} update ({source})")]
pub struct SacError {
    pub phase: &'static str,
    #[source]
    pub source: NonFinite,
}

#[derive(Clone, Copy, Debug)]
pub struct SacConfig {
    pub gamma: f64,
    /// Polyak coefficient: target <- (1 - tau) target + tau live.
    pub tau: f64,
    pub lr: f64,
    pub target_entropy: f64,
}

pub struct SacMachinery {
    pub actor: PolicyNet,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    log_alpha: Mat,
    actor_opt: Adam,
    critic_opt: Adam,
    alpha_opt: Adam,
    pub cfg: SacConfig,
    obs_dim: usize,
    act_dim: usize,
}

/// One training minibatch. `reward` is recomputed by the caller under the
/// current discriminator and disagreement before every update.
pub struct SacBatch {
    pub obs: Mat,
    pub action: Mat,
    pub reward: Vec<f64>,
    pub next_obs: Mat,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SacLosses {
    pub critic: f64,
    pub actor: f64,
    pub alpha: f64,
    pub mean_q: f64,
    /// Monte-Carlo estimate of the actor's entropy, -E[log pi].
    pub entropy: f64,
}

impl SacMachinery {
    pub fn new(
        obs_dim: usize,
        act_dim: usize,
        actor_hidden: &[usize],
        critic_hidden: &[usize],
        cfg: SacConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let mut actor_widths = vec![obs_dim];
        actor_widths.extend_from_slice(actor_hidden);
        actor_widths.push(2 * act_dim);
        let actor = PolicyNet::new(
            Mlp::new(&actor_widths, Activation::Relu, rng),
            LogStdBounds::DEFAULT,
        );
        let mut critic_widths = vec![obs_dim + act_dim];
        critic_widths.extend_from_slice(critic_hidden);
        critic_widths.push(1);
        let q1 = Mlp::new(&critic_widths, Activation::Relu, rng);
        let q2 = Mlp::new(&critic_widths, Activation::Relu, rng);
        let q1_target = q1.clone();
        let q2_target = q2.clone();
        let log_alpha = Mat::zeros(1, 1);

        let actor_opt = Adam::for_params(cfg.lr, &actor.net.params());
        let mut critic_params: Vec<&Mat> = q1.params();
        critic_params.extend(q2.params());
        let critic_opt = Adam::for_params(cfg.lr, &critic_params);
        let alpha_opt = Adam::for_params(cfg.lr, &[&log_alpha]);

        SacMachinery {
            actor,
            q1,
            q2,
            q1_target,
            q2_target,
            log_alpha,
            actor_opt,
            critic_opt,
            alpha_opt,
            cfg,
            obs_dim,
            act_dim,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.get(0, 0).exp()
    }

    pub fn log_alpha(&self) -> f64 {
        self.log_alpha.get(0, 0)
    }

    pub fn set_log_alpha(&mut self, v: f64) {
        self.log_alpha.set(0, 0, (v as f32) as f64);
    }

    /// Total optimizer steps taken across actor, critics, and temperature.
    pub fn optimizer_steps(&self) -> u64 {
        self.actor_opt.step_count() + self.critic_opt.step_count() + self.alpha_opt.step_count()
    }

    pub fn act(&self, obs: &[f64], rng: &mut impl Rng) -> (Vec<f64>, f64) {
        self.actor.sample_one(obs, rng)
    }

    fn q_forward(net: &Mlp, obs: &Mat, action: &Mat) -> Vec<f64> {
        let mut input = Mat::zeros(obs.rows(), obs.cols() + action.cols());
        for i in 0..obs.rows() {
            let row = input.row_mut(i);
            row[..obs.cols()].copy_from_slice(obs.row(i));
            row[obs.cols()..].copy_from_slice(action.row(i));
        }
        let out = net.forward_batch(&input);
        (0..out.rows()).map(|i| out.get(i, 0)).collect()
    }

    /// One SAC update: twin-critic Bellman regression, reparametrized actor
    /// step, temperature step, Polyak target update.
    pub fn update(&mut self, batch: &SacBatch, rng: &mut impl Rng) -> Result<SacLosses, SacError> {
        let b = batch.obs.rows();
        assert_eq!(batch.action.rows(), b);
        assert_eq!(batch.reward.len(), b);
        let alpha = self.alpha();

        // Bellman targets from the target critics and a fresh next action.
        let next_sample = self.actor.sample_batch(&batch.next_obs, rng);
        let q1n = Self::q_forward(&self.q1_target, &batch.next_obs, &next_sample.value);
        let q2n = Self::q_forward(&self.q2_target, &batch.next_obs, &next_sample.value);
        let mut targets = Mat::zeros(b, 1);
        for i in 0..b {
            let soft_q = q1n[i].min(q2n[i]) - alpha * next_sample.log_prob[i];
            targets.set(i, 0, batch.reward[i] + self.cfg.gamma * soft_q);
        }

        // Critic step.
        let critic_loss = {
            let mut tape = Tape::new();
            let mut qin = Mat::zeros(b, self.obs_dim + self.act_dim);
            for i in 0..b {
                let row = qin.row_mut(i);
                row[..self.obs_dim].copy_from_slice(batch.obs.row(i));
                row[self.obs_dim..].copy_from_slice(batch.action.row(i));
            }
            let x = tape.constant(qin);
            let (q1out, q1params) = self.q1.on_tape(&mut tape, x);
            let (q2out, q2params) = self.q2.on_tape(&mut tape, x);
            let y = tape.constant(targets.clone());
            let e1 = tape.sub(q1out, y);
            let e2 = tape.sub(q2out, y);
            let s1 = tape.square(e1);
            let s2 = tape.square(e2);
            let m1 = tape.mean_all(s1);
            let m2 = tape.mean_all(s2);
            let loss = tape.add(m1, m2);
            let mut grads = tape
                .backward(loss)
                .map_err(|source| SacError { phase: "critic", source })?;
            let all_params: Vec<_> = q1params.iter().chain(q2params.iter()).copied().collect();
            let grad_mats: Vec<Mat> = all_params
                .iter()
                .map(|&p| tape.grad_of(&mut grads, p))
                .collect();
            let mut refs: Vec<&mut Mat> = self.q1.params_mut();
            refs.extend(self.q2.params_mut());
            self.critic_opt.step(&mut refs, &grad_mats);
            tape.scalar(loss).map_err(|source| SacError { phase: "critic", source })?
        };

        // Actor step (gradients flow through the sampled action into the
        // critics, but only actor parameters are updated).
        let mut eps = Mat::zeros(b, self.act_dim);
        for i in 0..b {
            for j in 0..self.act_dim {
                eps.set(i, j, rng.sample(rand_distr::StandardNormal));
            }
        }
        let (actor_loss, mean_q, entropy, logp_vals) = {
            let mut tape = Tape::new();
            let obs_v = tape.constant(batch.obs.clone());
            let pol = self.actor.on_tape(&mut tape, obs_v, &eps);
            let qin = tape.concat_cols(obs_v, pol.action);
            let q1out = self.q1.on_tape_frozen(&mut tape, qin);
            let q2out = self.q2.on_tape_frozen(&mut tape, qin);
            let qmin = tape.min(q1out, q2out);
            let scaled_logp = tape.scale(pol.log_prob, alpha);
            let term = tape.sub(scaled_logp, qmin);
            let loss = tape.mean_all(term);
            let mut grads = tape
                .backward(loss)
                .map_err(|source| SacError { phase: "actor", source })?;
            let grad_mats: Vec<Mat> = pol
                .params
                .iter()
                .map(|&p| tape.grad_of(&mut grads, p))
                .collect();
            let mut refs = self.actor.net.params_mut();
            self.actor_opt.step(&mut refs, &grad_mats);

            let logp_vals: Vec<f64> = (0..b).map(|i| tape.value(pol.log_prob).get(i, 0)).collect();
            let mean_q = tape.value(qmin).sum() / b as f64;
            let entropy = -logp_vals.iter().sum::<f64>() / b as f64;
            let loss_v = tape.scalar(loss).map_err(|source| SacError { phase: "actor", source })?;
            (loss_v, mean_q, entropy, logp_vals)
        };

        // Temperature step: d/d(log_alpha) of -log_alpha * E[log pi + H_bar].
        let alpha_grad = -(logp_vals.iter().sum::<f64>() / b as f64 + self.cfg.target_entropy);
        let alpha_loss = -self.log_alpha.get(0, 0) * (-alpha_grad);
        self.alpha_opt.step(
            &mut [&mut self.log_alpha],
            &[Mat::from_vec(1, 1, vec![alpha_grad])],
        );

        // Polyak-averaged targets, snapped back to the f32 grid.
        let tau = self.cfg.tau;
        for (live, target) in [(&self.q1, &mut self.q1_target), (&self.q2, &mut self.q2_target)] {
            let live_params = live.params();
            for (t, l) in target.params_mut().into_iter().zip(live_params) {
                for k in 0..t.len() {
                    let v = (1.0 - tau) * t.as_slice()[k] + tau * l.as_slice()[k];
                    t.as_mut_slice()[k] = (v as f32) as f64;
                }
            }
        }

        Ok(SacLosses {
            critic: critic_loss,
            actor: actor_loss,
            alpha: alpha_loss,
            mean_q,
            entropy,
        })
    }
}
