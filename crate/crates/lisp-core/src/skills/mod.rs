//! Model-based skill discovery.
//!
//! Skills are latent vectors z in [-1, 1]^dim_z with a uniform prior. One
//! iteration generates single-step model rollouts seeded from replay states
//! and skills proposed by the skill-practice distribution, fits the
//! discriminator on the fresh batch, then trains the skill policy and the
//! practice distribution with SAC on a mutual-information intrinsic reward,
//! hard-switched to a penalty wherever the ensemble disagrees.

pub mod sac;

pub use sac::{SacBatch, SacConfig, SacError, SacLosses, SacMachinery};

use rand::Rng;

use crate::dynamics::{EnsembleDynamics, Normalizer};
use crate::mat::Mat;
use crate::nn::checkpoint::{find_unit, CheckpointError, CheckpointUnit};
use crate::nn::{Activation, Adam, Mlp, NonFinite, Tape};
use crate::replay::{ReplayBuffer, Transition};

/// Densities are floored here before any log.
pub const DENSITY_FLOOR_LOG: f64 = -69.077552789821368; // ln(1e-30)
const LN_2PI: f64 = 1.837_877_066_409_345_2;

#[derive(Debug, thiserror::Error)]
pub enum SkillsError {
    #[error("rollout generation requires a non-empty replay buffer")]
    EmptyReplay,
    #[error("non-finite discriminator loss ({0})")]
    Discriminator(NonFinite),
    #[error(transparent)]
    Sac(#[from] SacError),
    #[error(transparent)]
    Replay(#[from] crate::replay::ReplayError),
}

#[derive(Clone, Debug)]
pub struct SkillConfig {
    pub dim_z: usize,
    pub policy_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub lr: f64,
    pub batch: usize,
    /// Prior samples L in the intrinsic-reward denominator.
    pub prior_samples: usize,
    /// Rollouts generated per iteration (M).
    pub rollouts_per_iter: usize,
    pub gen_capacity: usize,
    pub policy_steps: usize,
    pub disc_steps: usize,
    pub practice_steps: usize,
    /// Intrinsic reward multiplier applied before the disagreement switch.
    pub reward_scale: f64,
    pub alpha_thres: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub tau: f64,
    /// Disagreement penalty switch; on in both offline and online phases.
    pub penalty_enabled: bool,
}

impl SkillConfig {
    pub fn defaults(dim_z: usize, alpha_thres: f64) -> Self {
        SkillConfig {
            dim_z,
            policy_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            disc_hidden: vec![96, 96],
            lr: 3e-4,
            batch: 128,
            prior_samples: 16,
            rollouts_per_iter: 128,
            gen_capacity: 5000,
            policy_steps: 8,
            disc_steps: 4,
            practice_steps: 4,
            reward_scale: 5.0,
            alpha_thres,
            kappa: 30.0,
            gamma: 0.99,
            tau: 0.005,
            penalty_enabled: true,
        }
    }
}

/// Gaussian density model q(s' | s, z) over the whitened next-state delta,
/// with state-conditioned mean and learned diagonal variance. The whitening
/// statistics are synced from the dynamics ensemble; the Jacobian they
/// introduce is constant in z and cancels in the intrinsic-reward ratio.
pub struct Discriminator {
    pub net: Mlp,
    opt: Adam,
    norm_state: Normalizer,
    norm_delta: Normalizer,
    state_dim: usize,
    dim_z: usize,
    lv_bounds: (f64, f64),
}

impl Discriminator {
    pub fn new(state_dim: usize, dim_z: usize, hidden: &[usize], lr: f64, rng: &mut impl Rng) -> Self {
        let mut widths = vec![state_dim + dim_z];
        widths.extend_from_slice(hidden);
        widths.push(2 * state_dim);
        let net = Mlp::new(&widths, Activation::Relu, rng);
        let opt = Adam::for_params(lr, &net.params());
        Discriminator {
            net,
            opt,
            norm_state: Normalizer::identity(state_dim),
            norm_delta: Normalizer::identity(state_dim),
            state_dim,
            dim_z,
            lv_bounds: (-8.0, 2.0),
        }
    }

    pub fn sync_norms(&mut self, ensemble: &EnsembleDynamics) {
        let in_norm = &ensemble.norm_in;
        self.norm_state = Normalizer {
            mean: in_norm.mean[..self.state_dim].to_vec(),
            std: in_norm.std[..self.state_dim].to_vec(),
        };
        self.norm_delta = ensemble.norm_delta.clone();
    }

    fn whiten_input(&self, s: &[f64], z: &[f64], out: &mut [f64]) {
        for d in 0..self.state_dim {
            out[d] = (s[d] - self.norm_state.mean[d]) / self.norm_state.std[d];
        }
        out[self.state_dim..].copy_from_slice(z);
    }

    fn whiten_delta(&self, s: &[f64], s_next: &[f64], out: &mut [f64]) {
        for d in 0..self.state_dim {
            out[d] = (s_next[d] - s[d] - self.norm_delta.mean[d]) / self.norm_delta.std[d];
        }
    }

    #[inline]
    fn clamp_lv(&self, raw: f64) -> f64 {
        // smooth clamp keeps gradients alive at the bounds
        let (min, max) = self.lv_bounds;
        let upper = max - softplus(max - raw);
        min + softplus(upper - min)
    }

    /// Log-density for a batch of rows; all inputs are raw (unwhitened).
    pub fn log_density_batch(&self, s: &Mat, z: &Mat, s_next: &Mat) -> Vec<f64> {
        let b = s.rows();
        let mut input = Mat::zeros(b, self.state_dim + self.dim_z);
        let mut target = Mat::zeros(b, self.state_dim);
        for i in 0..b {
            self.whiten_input(s.row(i), z.row(i), input.row_mut(i));
            let mut tmp = vec![0.0; self.state_dim];
            self.whiten_delta(s.row(i), s_next.row(i), &mut tmp);
            target.row_mut(i).copy_from_slice(&tmp);
        }
        let out = self.net.forward_batch(&input);
        (0..b)
            .map(|i| {
                let row = out.row(i);
                let mut logp = -0.5 * LN_2PI * self.state_dim as f64;
                for d in 0..self.state_dim {
                    let lv = self.clamp_lv(row[self.state_dim + d]);
                    let err = target.get(i, d) - row[d];
                    logp += -0.5 * (err * err * (-lv).exp() + lv);
                }
                logp
            })
            .collect()
    }

    pub fn log_density(&self, s: &[f64], z: &[f64], s_next: &[f64]) -> f64 {
        self.log_density_batch(
            &Mat::row_vec(s.to_vec()),
            &Mat::row_vec(z.to_vec()),
            &Mat::row_vec(s_next.to_vec()),
        )[0]
    }

    /// One Gaussian-NLL gradient step on a batch of (s, z, s') rows.
    pub fn nll_step(&mut self, s: &Mat, z: &Mat, s_next: &Mat) -> Result<f64, SkillsError> {
        let b = s.rows();
        let mut input = Mat::zeros(b, self.state_dim + self.dim_z);
        let mut target = Mat::zeros(b, self.state_dim);
        for i in 0..b {
            self.whiten_input(s.row(i), z.row(i), input.row_mut(i));
            let mut tmp = vec![0.0; self.state_dim];
            self.whiten_delta(s.row(i), s_next.row(i), &mut tmp);
            target.row_mut(i).copy_from_slice(&tmp);
        }
        let d = self.state_dim;
        let (min, max) = self.lv_bounds;
        let mut tape = Tape::new();
        let x = tape.constant(input);
        let (out, params) = self.net.on_tape(&mut tape, x);
        let mean = tape.slice_cols(out, 0, d);
        let raw_lv = tape.slice_cols(out, d, 2 * d);
        // soft clamp with fixed bounds
        let neg_raw = tape.scale(raw_lv, -1.0);
        let shifted = tape.add_scalar(neg_raw, max);
        let sp1 = tape.softplus(shifted);
        let neg_sp1 = tape.scale(sp1, -1.0);
        let upper = tape.add_scalar(neg_sp1, max);
        let shifted2 = tape.add_scalar(upper, -min);
        let sp2 = tape.softplus(shifted2);
        let lv = tape.add_scalar(sp2, min);

        let t = tape.constant(target);
        let err = tape.sub(t, mean);
        let err_sq = tape.square(err);
        let neg_lv = tape.scale(lv, -1.0);
        let inv_var = tape.exp(neg_lv);
        let weighted = tape.mul(err_sq, inv_var);
        let terms = tape.add(weighted, lv);
        let rows = tape.sum_rows(terms);
        let mean_loss = tape.mean_all(rows);
        let loss = tape.scale(mean_loss, 0.5);

        let mut grads = tape.backward(loss).map_err(SkillsError::Discriminator)?;
        let grad_mats: Vec<Mat> = params.iter().map(|&p| tape.grad_of(&mut grads, p)).collect();
        let mut refs = self.net.params_mut();
        self.opt.step(&mut refs, &grad_mats);
        tape.scalar(loss).map_err(SkillsError::Discriminator)
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.opt.step_count()
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Mutual-information intrinsic reward from an arbitrary conditional
/// log-density `logq(z)` = log q(s'|s,z), with `L` prior skills drawn i.i.d.
/// uniform from [-1, 1]^dim_z. Computed in log space via log-sum-exp;
/// densities are floored at 1e-30.
pub fn intrinsic_reward_from(
    logq: impl Fn(&[f64]) -> f64,
    z: &[f64],
    dim_z: usize,
    prior_samples: usize,
    rng: &mut impl Rng,
) -> f64 {
    assert!(prior_samples >= 1, "need at least one prior sample");
    let num = logq(z).max(DENSITY_FLOOR_LOG);
    let mut prior_logs = Vec::with_capacity(prior_samples);
    for _ in 0..prior_samples {
        let zi: Vec<f64> = (0..dim_z).map(|_| rng.gen_range(-1.0..1.0)).collect();
        prior_logs.push(logq(&zi).max(DENSITY_FLOOR_LOG));
    }
    num - (log_sum_exp(&prior_logs) - (prior_samples as f64).ln())
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Intrinsic reward under a discriminator, for one transition.
pub fn intrinsic_reward(
    disc: &Discriminator,
    s: &[f64],
    z: &[f64],
    s_next: &[f64],
    prior_samples: usize,
    rng: &mut impl Rng,
) -> f64 {
    intrinsic_reward_from(
        |zz| disc.log_density(s, zz, s_next),
        z,
        disc.dim_z,
        prior_samples,
        rng,
    )
}

/// Batched intrinsic rewards: one forward pass over B x (L+1) rows.
pub fn intrinsic_reward_batch(
    disc: &Discriminator,
    s: &Mat,
    z: &Mat,
    s_next: &Mat,
    prior_samples: usize,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let b = s.rows();
    let l = prior_samples;
    let dz = z.cols();
    let mut all_s = Mat::zeros(b * (l + 1), s.cols());
    let mut all_z = Mat::zeros(b * (l + 1), dz);
    let mut all_next = Mat::zeros(b * (l + 1), s.cols());
    for i in 0..b {
        let base = i * (l + 1);
        all_s.row_mut(base).copy_from_slice(s.row(i));
        all_z.row_mut(base).copy_from_slice(z.row(i));
        all_next.row_mut(base).copy_from_slice(s_next.row(i));
        for k in 0..l {
            let r = base + 1 + k;
            all_s.row_mut(r).copy_from_slice(s.row(i));
            for d in 0..dz {
                all_z.set(r, d, rng.gen_range(-1.0..1.0));
            }
            all_next.row_mut(r).copy_from_slice(s_next.row(i));
        }
    }
    let logs = disc.log_density_batch(&all_s, &all_z, &all_next);
    (0..b)
        .map(|i| {
            let base = i * (l + 1);
            let num = logs[base].max(DENSITY_FLOOR_LOG);
            let prior: Vec<f64> = (0..l)
                .map(|k| logs[base + 1 + k].max(DENSITY_FLOOR_LOG))
                .collect();
            num - (log_sum_exp(&prior) - (l as f64).ln())
        })
        .collect()
}

/// The disagreement switch: keep the reward inside the model's trust region,
/// replace it with -kappa outside (the comparison is inclusive).
pub fn adjusted_reward(r_tilde: f64, dis: f64, alpha_thres: f64, kappa: f64) -> f64 {
    if dis <= alpha_thres {
        r_tilde
    } else {
        -kappa
    }
}

/// The three learned skill distributions plus their critics.
pub struct SkillBundle {
    /// pi(a | s, z): observations are (s, z).
    pub policy: SacMachinery,
    /// p(z | s): observations are s, "actions" are skills.
    pub practice: SacMachinery,
    pub discriminator: Discriminator,
    pub cfg: SkillConfig,
    state_dim: usize,
    action_dim: usize,
}

#[derive(Clone, Debug, Default)]
pub struct SkillDiagnostics {
    pub intrinsic_mean: f64,
    pub penalized_fraction: f64,
    pub disc_loss: f64,
    pub policy_losses: SacLosses,
    pub practice_losses: SacLosses,
    pub practice_entropy: f64,
}

impl SkillBundle {
    pub fn new(state_dim: usize, action_dim: usize, cfg: SkillConfig, rng: &mut impl Rng) -> Self {
        let sac_cfg = SacConfig {
            gamma: cfg.gamma,
            tau: cfg.tau,
            lr: cfg.lr,
            target_entropy: -(action_dim as f64),
        };
        let policy = SacMachinery::new(
            state_dim + cfg.dim_z,
            action_dim,
            &cfg.policy_hidden,
            &cfg.critic_hidden,
            sac_cfg,
            rng,
        );
        let practice_cfg = SacConfig {
            target_entropy: -(cfg.dim_z as f64),
            ..sac_cfg
        };
        let practice = SacMachinery::new(
            state_dim,
            cfg.dim_z,
            &cfg.policy_hidden,
            &cfg.critic_hidden,
            practice_cfg,
            rng,
        );
        let discriminator = Discriminator::new(state_dim, cfg.dim_z, &cfg.disc_hidden, cfg.lr, rng);
        SkillBundle {
            policy,
            practice,
            discriminator,
            cfg,
            state_dim,
            action_dim,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn dim_z(&self) -> usize {
        self.cfg.dim_z
    }

    /// Fresh generated replay buffer sized for this bundle.
    pub fn make_gen_buffer(&self) -> ReplayBuffer {
        ReplayBuffer::new(
            self.state_dim,
            self.action_dim,
            self.cfg.dim_z,
            self.cfg.gen_capacity,
        )
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.policy.optimizer_steps()
            + self.practice.optimizer_steps()
            + self.discriminator.optimizer_steps()
    }

    /// Samples a skill for state `s`: from the practice distribution, or
    /// uniform from the prior when the curriculum is disabled.
    pub fn propose_skill(&self, s: &[f64], use_practice: bool, rng: &mut impl Rng) -> Vec<f64> {
        if use_practice {
            self.practice.act(s, rng).0
        } else {
            (0..self.cfg.dim_z).map(|_| rng.gen_range(-1.0..1.0)).collect()
        }
    }

    /// Generates M one-step model rollouts seeded from replay states and
    /// appends them to the generated buffer. Rewards are filled by the
    /// caller after the discriminator update. Returns the index range of the
    /// fresh transitions as owned copies.
    pub fn generate_rollouts(
        &self,
        ensemble: &EnsembleDynamics,
        buffer: &ReplayBuffer,
        gen: &mut ReplayBuffer,
        m_rollouts: usize,
        use_practice: bool,
        rng: &mut impl Rng,
    ) -> Result<Vec<Transition>, SkillsError> {
        if m_rollouts == 0 {
            return Ok(Vec::new());
        }
        if buffer.is_empty() {
            return Err(SkillsError::EmptyReplay);
        }
        let n = ensemble.ensemble_size();
        // Draw everything sequentially for determinism, then batch by member.
        let mut starts = Mat::zeros(m_rollouts, self.state_dim);
        let mut skills = Mat::zeros(m_rollouts, self.cfg.dim_z);
        let mut members = Vec::with_capacity(m_rollouts);
        for i in 0..m_rollouts {
            let t = buffer.get(buffer.sample_index(rng));
            starts.row_mut(i).copy_from_slice(&t.state);
            let z = self.propose_skill(&t.state, use_practice, rng);
            skills.row_mut(i).copy_from_slice(&z);
            members.push(rng.gen_range(0..n));
        }
        // Policy actions for all rollouts in one batch.
        let mut pol_in = Mat::zeros(m_rollouts, self.state_dim + self.cfg.dim_z);
        for i in 0..m_rollouts {
            let row = pol_in.row_mut(i);
            row[..self.state_dim].copy_from_slice(starts.row(i));
            row[self.state_dim..].copy_from_slice(skills.row(i));
        }
        let actions = self.policy.actor.sample_batch(&pol_in, rng).value;
        // Next states, batched per member in member order.
        let mut next = Mat::zeros(m_rollouts, self.state_dim);
        for mem in 0..n {
            let rows: Vec<usize> = (0..m_rollouts).filter(|&i| members[i] == mem).collect();
            if rows.is_empty() {
                continue;
            }
            let mut s_m = Mat::zeros(rows.len(), self.state_dim);
            let mut a_m = Mat::zeros(rows.len(), self.action_dim);
            for (k, &i) in rows.iter().enumerate() {
                s_m.row_mut(k).copy_from_slice(starts.row(i));
                a_m.row_mut(k).copy_from_slice(actions.row(i));
            }
            let out = ensemble.predict_batch(mem, &s_m, &a_m, rng);
            for (k, &i) in rows.iter().enumerate() {
                next.row_mut(i).copy_from_slice(out.row(k));
            }
        }
        let mut fresh = Vec::with_capacity(m_rollouts);
        for i in 0..m_rollouts {
            let t = Transition {
                state: starts.row(i).to_vec(),
                action: actions.row(i).to_vec(),
                skill: skills.row(i).to_vec(),
                reward: 0.0,
                next_state: next.row(i).to_vec(),
            };
            gen.push(t.clone())?;
            fresh.push(t);
        }
        Ok(fresh)
    }

    /// Adjusted intrinsic rewards for a batch of transitions under the
    /// current discriminator and current model disagreement.
    pub fn rewards_for(
        &self,
        ensemble: &EnsembleDynamics,
        s: &Mat,
        z: &Mat,
        a: &Mat,
        s_next: &Mat,
        rng: &mut impl Rng,
    ) -> (Vec<f64>, Vec<f64>, f64) {
        let r_tilde = intrinsic_reward_batch(
            &self.discriminator,
            s,
            z,
            s_next,
            self.cfg.prior_samples,
            rng,
        );
        let dis = ensemble.disagreement_batch(s, a, None);
        let penalized = if self.cfg.penalty_enabled {
            dis.iter().filter(|&&d| d > self.cfg.alpha_thres).count()
        } else {
            0
        };
        let adjusted: Vec<f64> = r_tilde
            .iter()
            .zip(&dis)
            .map(|(&r, &d)| {
                if self.cfg.penalty_enabled {
                    adjusted_reward(self.cfg.reward_scale * r, d, self.cfg.alpha_thres, self.cfg.kappa)
                } else {
                    self.cfg.reward_scale * r
                }
            })
            .collect();
        let frac = penalized as f64 / r_tilde.len().max(1) as f64;
        (adjusted, r_tilde, frac)
    }

    fn sample_gen_batch(&self, gen: &ReplayBuffer, rng: &mut impl Rng) -> (Mat, Mat, Mat, Mat) {
        let b = self.cfg.batch.min(gen.len()).max(1);
        let idx = gen.sample_indices(rng, b);
        let mut s = Mat::zeros(b, self.state_dim);
        let mut z = Mat::zeros(b, self.cfg.dim_z);
        let mut a = Mat::zeros(b, self.action_dim);
        let mut sn = Mat::zeros(b, self.state_dim);
        for (r, &i) in idx.iter().enumerate() {
            let t = gen.get(i);
            s.row_mut(r).copy_from_slice(&t.state);
            z.row_mut(r).copy_from_slice(&t.skill);
            a.row_mut(r).copy_from_slice(&t.action);
            sn.row_mut(r).copy_from_slice(&t.next_state);
        }
        (s, z, a, sn)
    }

    /// One full skill-learning iteration: generate rollouts, fit the
    /// discriminator on the fresh batch, then run the configured SAC step
    /// budgets for the policy and the practice distribution with rewards
    /// recomputed for every minibatch. The ensemble is read-only throughout.
    pub fn update_policy(
        &mut self,
        ensemble: &EnsembleDynamics,
        buffer: &ReplayBuffer,
        gen: &mut ReplayBuffer,
        use_practice: bool,
        rng: &mut impl Rng,
    ) -> Result<SkillDiagnostics, SkillsError> {
        self.discriminator.sync_norms(ensemble);
        let mut diag = SkillDiagnostics::default();

        let fresh = self.generate_rollouts(
            ensemble,
            buffer,
            gen,
            self.cfg.rollouts_per_iter,
            use_practice,
            rng,
        )?;

        // Discriminator: NLL steps on minibatches of the fresh rollouts.
        if !fresh.is_empty() {
            for _ in 0..self.cfg.disc_steps {
                let b = self.cfg.batch.min(fresh.len());
                let mut s = Mat::zeros(b, self.state_dim);
                let mut z = Mat::zeros(b, self.cfg.dim_z);
                let mut sn = Mat::zeros(b, self.state_dim);
                for r in 0..b {
                    let t = &fresh[rng.gen_range(0..fresh.len())];
                    s.row_mut(r).copy_from_slice(&t.state);
                    z.row_mut(r).copy_from_slice(&t.skill);
                    sn.row_mut(r).copy_from_slice(&t.next_state);
                }
                diag.disc_loss = self.discriminator.nll_step(&s, &z, &sn)?;
            }

            // Write-time rewards for the fresh entries (diagnostics; training
            // recomputes per minibatch below).
            let b = fresh.len();
            let mut s = Mat::zeros(b, self.state_dim);
            let mut z = Mat::zeros(b, self.cfg.dim_z);
            let mut a = Mat::zeros(b, self.action_dim);
            let mut sn = Mat::zeros(b, self.state_dim);
            for (r, t) in fresh.iter().enumerate() {
                s.row_mut(r).copy_from_slice(&t.state);
                z.row_mut(r).copy_from_slice(&t.skill);
                a.row_mut(r).copy_from_slice(&t.action);
                sn.row_mut(r).copy_from_slice(&t.next_state);
            }
            let (_adjusted, r_tilde, frac) = self.rewards_for(ensemble, &s, &z, &a, &sn, rng);
            diag.intrinsic_mean = r_tilde.iter().sum::<f64>() / b as f64;
            diag.penalized_fraction = frac;
        }

        if gen.is_empty() {
            return Ok(diag);
        }

        // Skill policy SAC steps.
        for _ in 0..self.cfg.policy_steps {
            let (s, z, a, sn) = self.sample_gen_batch(gen, rng);
            let (rewards, _, _) = self.rewards_for(ensemble, &s, &z, &a, &sn, rng);
            let b = s.rows();
            let mut obs = Mat::zeros(b, self.state_dim + self.cfg.dim_z);
            let mut next_obs = Mat::zeros(b, self.state_dim + self.cfg.dim_z);
            for i in 0..b {
                let row = obs.row_mut(i);
                row[..self.state_dim].copy_from_slice(s.row(i));
                row[self.state_dim..].copy_from_slice(z.row(i));
                let row = next_obs.row_mut(i);
                row[..self.state_dim].copy_from_slice(sn.row(i));
                row[self.state_dim..].copy_from_slice(z.row(i)); // same z bootstrap
            }
            let batch = SacBatch {
                obs,
                action: a,
                reward: rewards,
                next_obs,
            };
            diag.policy_losses = self.policy.update(&batch, rng)?;
        }

        // Skill-practice SAC steps: state -> skill, same adjusted reward.
        for _ in 0..self.cfg.practice_steps {
            let (s, z, a, sn) = self.sample_gen_batch(gen, rng);
            let (rewards, _, _) = self.rewards_for(ensemble, &s, &z, &a, &sn, rng);
            let batch = SacBatch {
                obs: s,
                action: z,
                reward: rewards,
                next_obs: sn,
            };
            diag.practice_losses = self.practice.update(&batch, rng)?;
            diag.practice_entropy = diag.practice_losses.entropy;
        }

        Ok(diag)
    }

    pub fn to_units(&self, prefix: &str) -> Vec<CheckpointUnit> {
        let mut units = Vec::new();
        for (tag, m) in [("policy", &self.policy), ("practice", &self.practice)] {
            units.push(CheckpointUnit::from_mlp(&format!("{prefix}.{tag}.actor"), &m.actor.net));
            units.push(CheckpointUnit::from_mlp(&format!("{prefix}.{tag}.q1"), &m.q1));
            units.push(CheckpointUnit::from_mlp(&format!("{prefix}.{tag}.q2"), &m.q2));
            units.push(CheckpointUnit::from_mlp(&format!("{prefix}.{tag}.q1_target"), &m.q1_target));
            units.push(CheckpointUnit::from_mlp(&format!("{prefix}.{tag}.q2_target"), &m.q2_target));
            units.push(CheckpointUnit::scalar(&format!("{prefix}.{tag}.log_alpha"), m.log_alpha()));
        }
        units.push(CheckpointUnit::from_mlp(&format!("{prefix}.disc"), &self.discriminator.net));
        units
    }

    pub fn load_units(&mut self, units: &[CheckpointUnit], prefix: &str) -> Result<(), CheckpointError> {
        fn load_machinery(
            units: &[CheckpointUnit],
            prefix: &str,
            tag: &str,
            m: &mut SacMachinery,
        ) -> Result<(), CheckpointError> {
            find_unit(units, &format!("{prefix}.{tag}.actor"))?.into_mlp(&mut m.actor.net)?;
            find_unit(units, &format!("{prefix}.{tag}.q1"))?.into_mlp(&mut m.q1)?;
            find_unit(units, &format!("{prefix}.{tag}.q2"))?.into_mlp(&mut m.q2)?;
            find_unit(units, &format!("{prefix}.{tag}.q1_target"))?.into_mlp(&mut m.q1_target)?;
            find_unit(units, &format!("{prefix}.{tag}.q2_target"))?.into_mlp(&mut m.q2_target)?;
            let la = find_unit(units, &format!("{prefix}.{tag}.log_alpha"))?;
            m.set_log_alpha(la.data[0] as f64);
            Ok(())
        }
        load_machinery(units, prefix, "policy", &mut self.policy)?;
        load_machinery(units, prefix, "practice", &mut self.practice)?;
        find_unit(units, &format!("{prefix}.disc"))?.into_mlp(&mut self.discriminator.net)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests;
