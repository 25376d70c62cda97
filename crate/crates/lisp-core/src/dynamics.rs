//! Probabilistic ensemble dynamics model.
//!
//! N members each predict the mean and variance of the next-state delta from
//! a whitened (s, a) input. Training maximizes Gaussian log-likelihood with
//! soft-clamped log-variances (learnable bounds, PETS style). The ensemble
//! backs three consumers: stochastic single-step prediction for rollout
//! generation, the pairwise mean-disagreement signal, and trajectory-sampled
//! return estimation for planning.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::env::RewardFn;
use crate::mat::Mat;
use crate::nn::checkpoint::{find_unit, CheckpointError, CheckpointUnit};
use crate::nn::policy::PolicyNet;
use crate::nn::{Activation, Adam, Mlp, Tape};
use crate::replay::ReplayBuffer;

#[derive(Debug, thiserror::Error)]
pub enum DynamicsError {
    #[error("training requires at least {need} transitions, buffer has {have}")]
    NotEnoughData { need: usize, have: usize },
    #[error("non-finite loss in ensemble member {member} at step {step} ({source})")]
    NonFinite {
        member: usize,
        step: usize,
        source: crate::nn::NonFinite,
    },
}

/// Per-dimension whitening statistics, snapped to the f32 grid so they
/// serialize losslessly.
#[derive(Clone, Debug)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Normalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit<'a>(rows: impl Iterator<Item = Vec<f64>> + 'a, dim: usize) -> Self {
        let mut n = 0.0f64;
        let mut mean = vec![0.0f64; dim];
        let mut m2 = vec![0.0f64; dim];
        for row in rows {
            n += 1.0;
            for d in 0..dim {
                let delta = row[d] - mean[d];
                mean[d] += delta / n;
                m2[d] += delta * (row[d] - mean[d]);
            }
        }
        let std: Vec<f64> = m2
            .iter()
            .map(|&v| ((v / n.max(1.0)).sqrt().max(1e-8) as f32) as f64)
            .collect();
        let mean = mean.into_iter().map(|m| (m as f32) as f64).collect();
        Normalizer { mean, std }
    }

    #[inline]
    pub fn normalize_into(&self, row: &[f64], out: &mut [f64]) {
        for d in 0..row.len() {
            out[d] = (row[d] - self.mean[d]) / self.std[d];
        }
    }

    pub fn normalize_mat(&self, m: &Mat) -> Mat {
        let mut out = m.clone();
        for i in 0..m.rows() {
            let row = out.row_mut(i);
            for d in 0..row.len() {
                row[d] = (row[d] - self.mean[d]) / self.std[d];
            }
        }
        out
    }
}

/// Numerically stable softplus.
#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// PETS-style soft clamp of a raw log-variance into (min, max).
#[inline]
fn soft_clamp(raw: f64, min: f64, max: f64) -> f64 {
    let upper = max - softplus(max - raw);
    min + softplus(upper - min)
}

struct Member {
    net: Mlp,
    logvar_max: Mat, // 1 x state_dim, learnable bound
    logvar_min: Mat,
    opt: Adam,
}

/// How the pairwise expectation in the disagreement signal is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DisagreementMode {
    /// Average over all N(N-1) ordered pairs.
    Exact,
    /// Monte-Carlo over this many sampled ordered pairs.
    Sampled(usize),
}

pub struct EnsembleDynamics {
    members: Vec<Member>,
    pub norm_in: Normalizer,
    pub norm_delta: Normalizer,
    state_dim: usize,
    action_dim: usize,
    pub disagreement_mode: DisagreementMode,
    /// Weight of the logvar-bound regularizer in the NLL loss.
    bound_reg: f64,
}

/// Rollout evaluation settings for trajectory sampling.
pub struct RolloutSpec<'a> {
    /// Skill-conditioned action policy; `None` plans directly in action space.
    pub policy: Option<&'a PolicyNet>,
    pub reward: &'a RewardFn,
    pub gamma: f64,
    pub particles: usize,
}

/// States beyond this sup-norm are treated as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e3;
/// Return surrogate for a diverged particle.
pub const DIVERGENCE_PENALTY: f64 = -1e3;

impl EnsembleDynamics {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        ensemble_size: usize,
        hidden: &[usize],
        lr: f64,
        seed: u64,
    ) -> Self {
        assert!(ensemble_size >= 1);
        let mut widths = vec![state_dim + action_dim];
        widths.extend_from_slice(hidden);
        widths.push(2 * state_dim);
        let members = (0..ensemble_size)
            .map(|m| {
                let mut rng = crate::rng::derive_slot(seed, crate::rng::Stream::ModelInit, m as u64);
                let net = Mlp::new(&widths, Activation::Tanh, &mut rng);
                let logvar_max = Mat::from_fn(1, state_dim, |_, _| 0.5);
                let logvar_min = Mat::from_fn(1, state_dim, |_, _| -10.0);
                let mut params: Vec<&Mat> = net.params();
                params.push(&logvar_max);
                params.push(&logvar_min);
                let opt = Adam::for_params(lr, &params);
                Member {
                    net,
                    logvar_max,
                    logvar_min,
                    opt,
                }
            })
            .collect();
        EnsembleDynamics {
            members,
            norm_in: Normalizer::identity(state_dim + action_dim),
            norm_delta: Normalizer::identity(state_dim),
            state_dim,
            action_dim,
            disagreement_mode: DisagreementMode::Exact,
            bound_reg: 0.01,
        }
    }

    /// Hand-assembled ensemble with identity normalizers; used by analytic
    /// test setups that pin exact member behavior.
    pub fn manual(
        nets: Vec<Mlp>,
        logvar_bounds: (f64, f64),
        state_dim: usize,
        action_dim: usize,
    ) -> Self {
        let members = nets
            .into_iter()
            .map(|net| {
                assert_eq!(net.input_dim(), state_dim + action_dim);
                assert_eq!(net.output_dim(), 2 * state_dim);
                let logvar_min = Mat::from_fn(1, state_dim, |_, _| logvar_bounds.0);
                let logvar_max = Mat::from_fn(1, state_dim, |_, _| logvar_bounds.1);
                let mut params: Vec<&Mat> = net.params();
                params.push(&logvar_max);
                params.push(&logvar_min);
                let opt = Adam::for_params(1e-3, &params);
                Member {
                    net,
                    logvar_max,
                    logvar_min,
                    opt,
                }
            })
            .collect();
        EnsembleDynamics {
            members,
            norm_in: Normalizer::identity(state_dim + action_dim),
            norm_delta: Normalizer::identity(state_dim),
            state_dim,
            action_dim,
            disagreement_mode: DisagreementMode::Exact,
            bound_reg: 0.01,
        }
    }

    pub fn ensemble_size(&self) -> usize {
        self.members.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn member_net(&self, m: usize) -> &Mlp {
        &self.members[m].net
    }

    pub fn member_net_mut(&mut self, m: usize) -> &mut Mlp {
        &mut self.members[m].net
    }

    /// Combined hash over every member's parameters.
    pub fn param_hash(&self) -> Vec<[u8; 32]> {
        self.members.iter().map(|m| m.net.param_hash()).collect()
    }

    /// Total optimizer steps across members.
    pub fn optimizer_steps(&self) -> u64 {
        self.members.iter().map(|m| m.opt.step_count()).sum()
    }

    /// Mean per-transition Gaussian NLL over the given buffer indices,
    /// averaged across members. No gradients.
    pub fn eval_nll(&self, buffer: &ReplayBuffer, indices: &[usize]) -> f64 {
        assert!(!indices.is_empty());
        let b = indices.len();
        let in_dim = self.state_dim + self.action_dim;
        let mut input = Mat::zeros(b, in_dim);
        let mut target = Mat::zeros(b, self.state_dim);
        for (r, &i) in indices.iter().enumerate() {
            let t = buffer.get(i);
            let row = input.row_mut(r);
            for (d, &v) in t.state.iter().chain(&t.action).enumerate() {
                row[d] = v;
            }
            let copy = row.to_vec();
            self.norm_in.normalize_into(&copy, row);
            for d in 0..self.state_dim {
                target.set(
                    r,
                    d,
                    (t.next_state[d] - t.state[d] - self.norm_delta.mean[d])
                        / self.norm_delta.std[d],
                );
            }
        }
        let mut total = 0.0;
        for m in 0..self.members.len() {
            let (mean, log_std) = self.member_heads(m, &input);
            for r in 0..b {
                for d in 0..self.state_dim {
                    let lv = 2.0 * log_std.get(r, d);
                    let err = target.get(r, d) - mean.get(r, d);
                    total += 0.5 * (err * err * (-lv).exp() + lv);
                }
            }
        }
        total / (self.members.len() * b) as f64
    }

    /// Refreshes whitening statistics from the buffer contents.
    pub fn refresh_normalizers(&mut self, buffer: &ReplayBuffer) {
        let in_dim = self.state_dim + self.action_dim;
        self.norm_in = Normalizer::fit(
            buffer.iter().map(|t| {
                let mut row = Vec::with_capacity(in_dim);
                row.extend_from_slice(&t.state);
                row.extend_from_slice(&t.action);
                row
            }),
            in_dim,
        );
        self.norm_delta = Normalizer::fit(
            buffer.iter().map(|t| {
                t.next_state
                    .iter()
                    .zip(&t.state)
                    .map(|(n, s)| n - s)
                    .collect()
            }),
            self.state_dim,
        );
    }

    /// Trains every member for `steps` gradient steps on independently drawn
    /// minibatches. Normalizers are refreshed first. Returns per-member loss
    /// traces.
    pub fn train(
        &mut self,
        buffer: &ReplayBuffer,
        steps: usize,
        batch: usize,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>, DynamicsError> {
        if buffer.len() < batch.max(1) {
            return Err(DynamicsError::NotEnoughData {
                need: batch.max(1),
                have: buffer.len(),
            });
        }
        self.refresh_normalizers(buffer);
        let norm_in = self.norm_in.clone();
        let norm_delta = self.norm_delta.clone();
        let state_dim = self.state_dim;
        let bound_reg = self.bound_reg;

        let results: Vec<Result<Vec<f64>, DynamicsError>> = self
            .members
            .par_iter_mut()
            .enumerate()
            .map(|(mi, member)| {
                let mut rng =
                    crate::rng::derive_slot(seed, crate::rng::Stream::ModelTrain, mi as u64);
                let mut trace = Vec::with_capacity(steps);
                for step in 0..steps {
                    let idx = buffer.sample_indices(&mut rng, batch);
                    let mut input = Mat::zeros(batch, norm_in.mean.len());
                    let mut target = Mat::zeros(batch, state_dim);
                    for (r, &i) in idx.iter().enumerate() {
                        let t = buffer.get(i);
                        let row = input.row_mut(r);
                        for (d, &v) in t.state.iter().chain(&t.action).enumerate() {
                            row[d] = v;
                        }
                        norm_in.normalize_into(&row.to_vec(), row);
                        let trow = target.row_mut(r);
                        for d in 0..state_dim {
                            trow[d] = (t.next_state[d] - t.state[d] - norm_delta.mean[d])
                                / norm_delta.std[d];
                        }
                    }
                    let loss = member
                        .nll_step(&input, &target, bound_reg)
                        .map_err(|source| DynamicsError::NonFinite {
                            member: mi,
                            step,
                            source,
                        })?;
                    trace.push(loss);
                }
                Ok(trace)
            })
            .collect();

        results.into_iter().collect()
    }

    /// Per-member normalized-space head: (mean, log_std), both B x state_dim.
    fn member_heads(&self, m: usize, norm_input: &Mat) -> (Mat, Mat) {
        let member = &self.members[m];
        let out = member.net.forward_batch(norm_input);
        let b = out.rows();
        let d = self.state_dim;
        let mut mean = Mat::zeros(b, d);
        let mut log_std = Mat::zeros(b, d);
        for i in 0..b {
            let row = out.row(i);
            mean.row_mut(i).copy_from_slice(&row[..d]);
            for j in 0..d {
                let lv = soft_clamp(
                    row[d + j],
                    member.logvar_min.get(0, j),
                    member.logvar_max.get(0, j),
                );
                log_std.set(i, j, 0.5 * lv);
            }
        }
        (mean, log_std)
    }

    fn build_norm_input(&self, states: &Mat, actions: &Mat) -> Mat {
        assert_eq!(states.rows(), actions.rows());
        assert_eq!(states.cols(), self.state_dim);
        assert_eq!(actions.cols(), self.action_dim);
        let mut input = Mat::zeros(states.rows(), self.state_dim + self.action_dim);
        for i in 0..states.rows() {
            let row = input.row_mut(i);
            row[..self.state_dim].copy_from_slice(states.row(i));
            row[self.state_dim..].copy_from_slice(actions.row(i));
            let copy = row.to_vec();
            self.norm_in.normalize_into(&copy, row);
        }
        input
    }

    /// Member `m`'s mean next-state prediction for a batch.
    pub fn mean_next_batch(&self, m: usize, states: &Mat, actions: &Mat) -> Mat {
        let input = self.build_norm_input(states, actions);
        let (mean, _) = self.member_heads(m, &input);
        let mut out = states.clone();
        for i in 0..states.rows() {
            for d in 0..self.state_dim {
                let delta = mean.get(i, d) * self.norm_delta.std[d] + self.norm_delta.mean[d];
                out.set(i, d, states.get(i, d) + delta);
            }
        }
        out
    }

    /// Stochastic next-state sample from member `m` for a batch of rows.
    pub fn predict_batch(&self, m: usize, states: &Mat, actions: &Mat, rng: &mut impl Rng) -> Mat {
        let input = self.build_norm_input(states, actions);
        let (mean, log_std) = self.member_heads(m, &input);
        let mut out = states.clone();
        for i in 0..states.rows() {
            for d in 0..self.state_dim {
                let eps: f64 = rng.sample(StandardNormal);
                let noise = log_std.get(i, d).exp() * eps;
                let delta_n = mean.get(i, d) + noise;
                let delta = delta_n * self.norm_delta.std[d] + self.norm_delta.mean[d];
                out.set(i, d, states.get(i, d) + delta);
            }
        }
        out
    }

    /// Single-transition stochastic prediction (delta parametrization).
    pub fn predict(&self, m: usize, s: &[f64], a: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        assert!(m < self.members.len(), "member index out of range");
        let out = self.predict_batch(
            m,
            &Mat::row_vec(s.to_vec()),
            &Mat::row_vec(a.to_vec()),
            rng,
        );
        out.row(0).to_vec()
    }

    /// Pairwise squared-L2 disagreement between member mean predictions,
    /// averaged over ordered pairs (exactly, or sampled per the mode).
    pub fn disagreement(&self, s: &[f64], a: &[f64], rng: Option<&mut dyn rand::RngCore>) -> f64 {
        self.disagreement_batch(
            &Mat::row_vec(s.to_vec()),
            &Mat::row_vec(a.to_vec()),
            rng,
        )[0]
    }

    pub fn disagreement_batch(
        &self,
        states: &Mat,
        actions: &Mat,
        rng: Option<&mut dyn rand::RngCore>,
    ) -> Vec<f64> {
        let n = self.members.len();
        let input = self.build_norm_input(states, actions);
        // Denormalized delta means; the shared s cancels in pairwise diffs.
        let means: Vec<Mat> = (0..n)
            .map(|m| {
                let (mean, _) = self.member_heads(m, &input);
                let mut out = mean;
                for i in 0..out.rows() {
                    for d in 0..self.state_dim {
                        let v = out.get(i, d) * self.norm_delta.std[d] + self.norm_delta.mean[d];
                        out.set(i, d, v);
                    }
                }
                out
            })
            .collect();

        let pair_dist = |row: usize, i: usize, j: usize| -> f64 {
            let a = means[i].row(row);
            let b = means[j].row(row);
            let mut acc = 0.0;
            for d in 0..a.len() {
                let diff = a[d] - b[d];
                acc += diff * diff;
            }
            acc
        };

        let rows = states.rows();
        match self.disagreement_mode {
            DisagreementMode::Exact => (0..rows)
                .map(|r| {
                    if n < 2 {
                        return 0.0;
                    }
                    let mut acc = 0.0;
                    for i in 0..n {
                        for j in 0..n {
                            if i != j {
                                acc += pair_dist(r, i, j);
                            }
                        }
                    }
                    acc / (n * (n - 1)) as f64
                })
                .collect(),
            DisagreementMode::Sampled(k) => {
                let rng = rng.expect("sampled disagreement needs an rng");
                (0..rows)
                    .map(|r| {
                        if n < 2 {
                            return 0.0;
                        }
                        let mut acc = 0.0;
                        for _ in 0..k {
                            let i = rng.gen_range(0..n);
                            let j = loop {
                                let j = rng.gen_range(0..n);
                                if j != i {
                                    break j;
                                }
                            };
                            acc += pair_dist(r, i, j);
                        }
                        acc / k as f64
                    })
                    .collect()
            }
        }
    }

    /// Trajectory-sampled return estimates for a set of candidate skill (or
    /// action) sequences from a shared start state. `skills[c]` holds
    /// candidate c's per-timestep vector (horizon x dim). Each candidate is
    /// rolled out under every member for `particles` independent particles;
    /// the result is the mean over members and particles.
    pub fn rollout_returns(
        &self,
        s0: &[f64],
        skills: &[Mat],
        spec: &RolloutSpec,
        seed: u64,
    ) -> Vec<f64> {
        assert!(!skills.is_empty());
        let horizon = skills[0].rows();
        assert!(horizon >= 1, "horizon must be at least 1");
        let n_cand = skills.len();
        let particles = spec.particles.max(1);
        let rows = n_cand * particles;
        let dz = skills[0].cols();

        let per_member: Vec<Vec<f64>> = (0..self.members.len())
            .into_par_iter()
            .map(|m| {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    seed ^ (m as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03),
                );
                rng.set_stream(crate::rng::Stream::Planner as u64);
                let mut states = Mat::zeros(rows, self.state_dim);
                for r in 0..rows {
                    states.row_mut(r).copy_from_slice(s0);
                }
                let mut returns = vec![0.0f64; rows];
                let mut discount = vec![1.0f64; rows];
                let mut alive = vec![true; rows];

                for t in 0..horizon {
                    // Per-row skill at this timestep.
                    let mut zmat = Mat::zeros(rows, dz);
                    for r in 0..rows {
                        zmat.row_mut(r).copy_from_slice(skills[r / particles].row(t));
                    }
                    let actions = match spec.policy {
                        Some(pol) => {
                            let mut input = Mat::zeros(rows, self.state_dim + dz);
                            for r in 0..rows {
                                let row = input.row_mut(r);
                                row[..self.state_dim].copy_from_slice(states.row(r));
                                row[self.state_dim..].copy_from_slice(zmat.row(r));
                            }
                            pol.sample_batch(&input, &mut rng).value
                        }
                        None => zmat,
                    };
                    let next = self.predict_batch(m, &states, &actions, &mut rng);
                    for r in 0..rows {
                        if !alive[r] {
                            continue;
                        }
                        let row = next.row(r);
                        let diverged = row
                            .iter()
                            .any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT);
                        if diverged {
                            returns[r] = DIVERGENCE_PENALTY;
                            alive[r] = false;
                            continue;
                        }
                        let r_t = (spec.reward)(states.row(r), actions.row(r), row);
                        returns[r] += discount[r] * r_t;
                        discount[r] *= spec.gamma;
                    }
                    // Freeze diverged rows at zero to keep the math local.
                    let mut next = next;
                    for r in 0..rows {
                        if !alive[r] {
                            for v in next.row_mut(r) {
                                *v = 0.0;
                            }
                        }
                    }
                    states = next;
                }
                returns
            })
            .collect();

        // Sequential reduction in member order keeps results bit-stable.
        let mut out = vec![0.0f64; n_cand];
        for member_returns in &per_member {
            for c in 0..n_cand {
                for p in 0..particles {
                    out[c] += member_returns[c * particles + p];
                }
            }
        }
        let scale = (self.members.len() * particles) as f64;
        for v in &mut out {
            *v /= scale;
        }
        out
    }

    /// Return estimate for a single skill sequence (one row per timestep).
    pub fn trajectory_sample_returns(
        &self,
        s0: &[f64],
        skills_per_step: &Mat,
        spec: &RolloutSpec,
        seed: u64,
    ) -> f64 {
        self.rollout_returns(s0, std::slice::from_ref(skills_per_step), spec, seed)[0]
    }

    pub fn to_units(&self, prefix: &str) -> Vec<CheckpointUnit> {
        let mut units = Vec::new();
        for (i, m) in self.members.iter().enumerate() {
            units.push(CheckpointUnit::from_mlp(&format!("{prefix}.member{i}.net"), &m.net));
            units.push(CheckpointUnit::vector(
                &format!("{prefix}.member{i}.logvar_max"),
                m.logvar_max.to_f32_vec(),
            ));
            units.push(CheckpointUnit::vector(
                &format!("{prefix}.member{i}.logvar_min"),
                m.logvar_min.to_f32_vec(),
            ));
        }
        units.push(CheckpointUnit::vector(
            &format!("{prefix}.norm_in.mean"),
            self.norm_in.mean.iter().map(|&v| v as f32).collect(),
        ));
        units.push(CheckpointUnit::vector(
            &format!("{prefix}.norm_in.std"),
            self.norm_in.std.iter().map(|&v| v as f32).collect(),
        ));
        units.push(CheckpointUnit::vector(
            &format!("{prefix}.norm_delta.mean"),
            self.norm_delta.mean.iter().map(|&v| v as f32).collect(),
        ));
        units.push(CheckpointUnit::vector(
            &format!("{prefix}.norm_delta.std"),
            self.norm_delta.std.iter().map(|&v| v as f32).collect(),
        ));
        units
    }

    pub fn load_units(
        &mut self,
        units: &[CheckpointUnit],
        prefix: &str,
    ) -> Result<(), CheckpointError> {
        for (i, m) in self.members.iter_mut().enumerate() {
            find_unit(units, &format!("{prefix}.member{i}.net"))?.into_mlp(&mut m.net)?;
            let vmax = find_unit(units, &format!("{prefix}.member{i}.logvar_max"))?;
            let vmin = find_unit(units, &format!("{prefix}.member{i}.logvar_min"))?;
            m.logvar_max = Mat::from_f32_slice(1, vmax.data.len(), &vmax.data);
            m.logvar_min = Mat::from_f32_slice(1, vmin.data.len(), &vmin.data);
        }
        let load_vec = |name: &str| -> Result<Vec<f64>, CheckpointError> {
            Ok(find_unit(units, name)?.data.iter().map(|&v| v as f64).collect())
        };
        self.norm_in.mean = load_vec(&format!("{prefix}.norm_in.mean"))?;
        self.norm_in.std = load_vec(&format!("{prefix}.norm_in.std"))?;
        self.norm_delta.mean = load_vec(&format!("{prefix}.norm_delta.mean"))?;
        self.norm_delta.std = load_vec(&format!("{prefix}.norm_delta.std"))?;
        Ok(())
    }
}

impl Member {
    /// One Gaussian-NLL gradient step; returns the loss.
    fn nll_step(&mut self, input: &Mat, target: &Mat, bound_reg: f64) -> Result<f64, crate::nn::NonFinite> {
        let d = target.cols();
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let (out, mut params) = self.net.on_tape(&mut tape, x);
        let vmax = tape.param(self.logvar_max.clone());
        let vmin = tape.param(self.logvar_min.clone());
        params.push(vmax);
        params.push(vmin);

        let mean = tape.slice_cols(out, 0, d);
        let raw_lv = tape.slice_cols(out, d, 2 * d);
        // lv = max - softplus(max - raw), then lv = min + softplus(lv - min)
        let neg_raw = tape.scale(raw_lv, -1.0);
        let max_minus_raw = tape.add_row(neg_raw, vmax);
        let sp1 = tape.softplus(max_minus_raw);
        let neg_sp1 = tape.scale(sp1, -1.0);
        let lv_upper = tape.add_row(neg_sp1, vmax);
        let neg_vmin = tape.scale(vmin, -1.0);
        let lv_minus_min = tape.add_row(lv_upper, neg_vmin);
        let sp2 = tape.softplus(lv_minus_min);
        let lv = tape.add_row(sp2, vmin);

        let t = tape.constant(target.clone());
        let err = tape.sub(t, mean);
        let err_sq = tape.square(err);
        let neg_lv = tape.scale(lv, -1.0);
        let inv_var = tape.exp(neg_lv);
        let weighted = tape.mul(err_sq, inv_var);
        let terms = tape.add(weighted, lv);
        let row_sums = tape.sum_rows(terms);
        let nll = tape.mean_all(row_sums);
        let nll = tape.scale(nll, 0.5);

        let smax = tape.sum_all(vmax);
        let smin = tape.sum_all(vmin);
        let spread = tape.sub(smax, smin);
        let reg = tape.scale(spread, bound_reg);
        let loss = tape.add(nll, reg);

        let mut grads = tape.backward(loss)?;
        let grad_mats: Vec<Mat> = params.iter().map(|&p| tape.grad_of(&mut grads, p)).collect();
        let mut param_refs: Vec<&mut Mat> = self.net.params_mut();
        param_refs.push(&mut self.logvar_max);
        param_refs.push(&mut self.logvar_min);
        self.opt.step(&mut param_refs, &grad_mats);
        tape.scalar(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    /// Linear system: s' = s + A s + B a with fixed matrices.
    fn linear_data(n: usize, seed: u64) -> ReplayBuffer {
        use crate::replay::Transition;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut buf = ReplayBuffer::new(2, 1, 0, n);
        for _ in 0..n {
            let s = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let a = rng.gen_range(-1.0f64..1.0);
            let delta = [0.1 * s[1] + 0.3 * a, -0.2 * s[0] + 0.1 * a];
            buf.push(Transition {
                state: s.to_vec(),
                action: vec![a],
                skill: vec![],
                reward: 0.0,
                next_state: vec![s[0] + delta[0], s[1] + delta[1]],
            })
            .unwrap();
        }
        buf
    }

    #[test]
    fn learns_linear_system_with_small_variance() {
        let buf = linear_data(4000, 1);
        let mut ens = EnsembleDynamics::new(2, 1, 2, &[32, 32], 1e-3, 7);
        ens.train(&buf, 1500, 64, 3).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut max_err = 0.0f64;
        for _ in 0..100 {
            let s = vec![rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8)];
            let a = vec![rng.gen_range(-0.8..0.8)];
            let truth = [
                s[0] + 0.1 * s[1] + 0.3 * a[0],
                s[1] - 0.2 * s[0] + 0.1 * a[0],
            ];
            for m in 0..2 {
                let pred = ens.mean_next_batch(
                    m,
                    &Mat::row_vec(s.clone()),
                    &Mat::row_vec(a.clone()),
                );
                for d in 0..2 {
                    max_err = max_err.max((pred.get(0, d) - truth[d]).abs());
                }
            }
        }
        assert!(max_err <= 1e-2, "member mean error {max_err}");
    }

    #[test]
    fn empty_buffer_is_an_error() {
        let buf = ReplayBuffer::new(2, 1, 0, 10);
        let mut ens = EnsembleDynamics::new(2, 1, 2, &[16], 1e-3, 0);
        assert!(matches!(
            ens.train(&buf, 10, 8, 0),
            Err(DynamicsError::NotEnoughData { .. })
        ));
    }

    #[test]
    fn duplicated_transition_gives_near_zero_variance() {
        use crate::replay::Transition;
        let mut buf = ReplayBuffer::new(1, 1, 0, 512);
        for _ in 0..512 {
            buf.push(Transition {
                state: vec![0.2],
                action: vec![-0.4],
                skill: vec![],
                reward: 0.0,
                next_state: vec![0.7],
            })
            .unwrap();
        }
        let mut ens = EnsembleDynamics::new(1, 1, 1, &[16], 3e-3, 2);
        ens.train(&buf, 800, 64, 1).unwrap();
        // mean prediction nails the delta...
        let pred = ens.mean_next_batch(0, &Mat::row_vec(vec![0.2]), &Mat::row_vec(vec![-0.4]));
        assert!((pred.get(0, 0) - 0.7).abs() < 2e-2, "pred {}", pred.get(0, 0));
        // ...and samples concentrate tightly around it.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut spread = 0.0f64;
        for _ in 0..200 {
            let s = ens.predict(0, &[0.2], &[-0.4], &mut rng);
            spread = spread.max((s[0] - pred.get(0, 0)).abs());
        }
        assert!(spread < 5e-2, "sample spread {spread}");
    }

    #[test]
    fn deterministic_member_matches_identity_map() {
        // state_dim 2, action_dim 2, net out 4 = [mean(2), logvar(2)].
        let mut net = Mlp::zeros(&[4, 4], Activation::Tanh);
        // mean-delta = a - s
        net.weight_mut(0).set(0, 0, -1.0);
        net.weight_mut(0).set(1, 1, -1.0);
        net.weight_mut(0).set(2, 0, 1.0);
        net.weight_mut(0).set(3, 1, 1.0);
        let ens = EnsembleDynamics::manual(vec![net], (-1600.0, -1600.0), 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = [0.25, -0.5];
        let a = [0.9, 0.1];
        let next = ens.predict(0, &s, &a, &mut rng);
        // s' = s + mu exactly, with mu = a - s evaluated in floating point
        assert_eq!(next, vec![s[0] + (a[0] - s[0]), s[1] + (a[1] - s[1])]);
        // same seed, same result
        let mut rng2 = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(ens.predict(0, &s, &a, &mut rng2), next);
    }

    #[test]
    fn stochastic_prediction_mean_is_unbiased() {
        // One member with constant mean delta and moderate variance; the
        // empirical mean over many samples approaches s + mu within 3 sigma.
        let mut net = Mlp::zeros(&[2, 2], Activation::Tanh);
        net.bias_mut(0).set(0, 0, 0.5); // mean delta
        net.bias_mut(0).set(0, 1, -2.0); // raw logvar -> clamped into bounds
        let ens = EnsembleDynamics::manual(vec![net], (-6.0, 1.0), 1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            acc += ens.predict(0, &[1.0], &[0.0], &mut rng)[0];
        }
        let mean = acc / n as f64;
        let lv = soft_clamp(-2.0, -6.0, 1.0);
        let sigma = (0.5 * lv).exp();
        let tol = 3.0 * sigma / (n as f64).sqrt();
        assert!(
            (mean - 1.5).abs() < tol,
            "empirical mean {mean} not within {tol} of 1.5"
        );
    }

    #[test]
    fn disagreement_zero_for_identical_members_and_exact_for_two() {
        let mk_net = |delta0: f64| {
            let mut net = Mlp::zeros(&[2, 2], Activation::Tanh);
            net.bias_mut(0).set(0, 0, delta0);
            net
        };
        // identical members
        let ens = EnsembleDynamics::manual(vec![mk_net(0.3), mk_net(0.3)], (-10.0, 0.5), 1, 1);
        assert_eq!(ens.disagreement(&[0.0], &[0.0], None), 0.0);
        // two members one unit apart: E over ordered pairs of ||.||^2 = 1
        let ens = EnsembleDynamics::manual(vec![mk_net(0.0), mk_net(1.0)], (-10.0, 0.5), 1, 1);
        let d = ens.disagreement(&[0.0], &[0.0], None);
        assert!((d - 1.0).abs() < 1e-9, "got {d}");
    }

    #[test]
    fn disagreement_matches_brute_force_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let nets: Vec<Mlp> = (0..4)
            .map(|_| Mlp::new(&[3, 8, 4], Activation::Tanh, &mut rng))
            .collect();
        let ens = EnsembleDynamics::manual(nets, (-10.0, 0.5), 2, 1);
        let s = [0.3, -0.7];
        let a = [0.2];
        let got = ens.disagreement(&s, &a, None);

        // brute force double loop over ordered pairs
        let means: Vec<Vec<f64>> = (0..4)
            .map(|m| {
                ens.mean_next_batch(m, &Mat::row_vec(s.to_vec()), &Mat::row_vec(a.to_vec()))
                    .row(0)
                    .to_vec()
            })
            .collect();
        let mut acc = 0.0;
        let mut cnt = 0;
        for i in 0..4 {
            for j in 0..4 {
                if i == j {
                    continue;
                }
                let mut d2 = 0.0;
                for k in 0..2 {
                    let diff = means[i][k] - means[j][k];
                    d2 += diff * diff;
                }
                acc += d2;
                cnt += 1;
            }
        }
        let expected = acc / cnt as f64;
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn disagreement_is_permutation_symmetric_and_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let nets: Vec<Mlp> = (0..3)
            .map(|_| Mlp::new(&[2, 6, 2], Activation::Tanh, &mut rng))
            .collect();
        let nets_rev: Vec<Mlp> = nets.iter().rev().cloned().collect();
        let ens1 = EnsembleDynamics::manual(nets, (-10.0, 0.5), 1, 1);
        let ens2 = EnsembleDynamics::manual(nets_rev, (-10.0, 0.5), 1, 1);
        for v in [-1.0, 0.0, 0.5] {
            let d1 = ens1.disagreement(&[v], &[v * 0.5], None);
            let d2 = ens2.disagreement(&[v], &[v * 0.5], None);
            assert!(d1 >= 0.0);
            assert!((d1 - d2).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_reward_rollout_is_geometric_series() {
        let mut net = Mlp::zeros(&[4, 4], Activation::Tanh);
        net.weight_mut(0).set(2, 0, 0.1);
        let ens = EnsembleDynamics::manual(vec![net], (-1600.0, -1600.0), 2, 2);
        let reward: RewardFn = Arc::new(|_, _, _| 3.0);
        let gamma = 0.9;
        let h = 7;
        let skills = Mat::zeros(h, 2);
        let spec = RolloutSpec {
            policy: None,
            reward: &reward,
            gamma,
            particles: 1,
        };
        let got = ens.trajectory_sample_returns(&[0.0, 0.0], &skills, &spec, 0);
        let expected = 3.0 * (1.0 - gamma.powi(h as i32)) / (1.0 - gamma);
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn gamma_zero_rollout_is_immediate_reward() {
        let mut net = Mlp::zeros(&[4, 4], Activation::Tanh);
        net.weight_mut(0).set(2, 0, 1.0); // delta_x = a_x
        let ens = EnsembleDynamics::manual(vec![net], (-1600.0, -1600.0), 2, 2);
        let reward: RewardFn = Arc::new(|_s, _a, s_next| s_next[0]);
        let spec = RolloutSpec {
            policy: None,
            reward: &reward,
            gamma: 0.0,
            particles: 1,
        };
        let mut skills = Mat::zeros(10, 2);
        for t in 0..10 {
            skills.set(t, 0, 0.5);
        }
        let got = ens.trajectory_sample_returns(&[0.0, 0.0], &skills, &spec, 0);
        assert!((got - 0.5).abs() < 1e-12);
    }

    #[test]
    fn divergence_guard_truncates_with_penalty() {
        // delta_x = 600 every step: exceeds the limit on step 2.
        let mut net = Mlp::zeros(&[4, 4], Activation::Tanh);
        net.bias_mut(0).set(0, 0, 600.0);
        let ens = EnsembleDynamics::manual(vec![net], (-1600.0, -1600.0), 2, 2);
        let reward: RewardFn = Arc::new(|_, _, _| 1.0);
        let spec = RolloutSpec {
            policy: None,
            reward: &reward,
            gamma: 1.0,
            particles: 1,
        };
        let got = ens.trajectory_sample_returns(&[0.0, 0.0], &Mat::zeros(5, 2), &spec, 0);
        assert_eq!(got, DIVERGENCE_PENALTY);
    }
}
