//! The lifelong agent loop: offline pretraining, the reset-free online
//! phase, and offline multi-task evaluation.
//!
//! The online loop owns the real replay buffer. Per timestep it retrains the
//! model on a fixed cadence, runs the configured skill-learning budget, acts
//! through the planner, and appends the real transition. There is no reset
//! path: a trapped or fallen agent keeps stepping.

pub mod collect;

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{DynamicsError, EnsembleDynamics};
use crate::env::{EnvKind, Environment, PerformanceSpec};
use crate::nn::checkpoint::{read_checkpoint, write_checkpoint, CheckpointError};
use crate::planner::{get_action, PlanDistribution, PlannerConfig, PlanInfo};
use crate::replay::{ReplayBuffer, ReplayError, Transition};
use crate::rng::{derive, Stream};
use crate::skills::{SacBatch, SkillBundle, SkillConfig, SkillsError};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Skills(#[from] SkillsError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("offline pretraining requires a non-empty dataset")]
    EmptyDataset,
}

/// Which acting/updating recipe a run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    /// Full agent: skill learning + skill-space planning.
    Lisp,
    /// Ablation: skills trained from uniform-prior proposals instead of the
    /// practice distribution.
    LispNoPractice,
    /// Control: act with loaded networks, no gradient updates of any kind.
    LispFrozen,
    /// Action-space MPC with the configured (long) horizon.
    MpcActionLong,
    /// Action-space MPC with a short horizon.
    MpcActionShort,
    /// Model-free SAC on the environment reward.
    Sac,
}

impl Algorithm {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "lisp" => Algorithm::Lisp,
            "lisp-no-practice" => Algorithm::LispNoPractice,
            "lisp-frozen" => Algorithm::LispFrozen,
            "mpc-action-long" => Algorithm::MpcActionLong,
            "mpc-action-short" => Algorithm::MpcActionShort,
            "sac" => Algorithm::Sac,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Lisp => "lisp",
            Algorithm::LispNoPractice => "lisp-no-practice",
            Algorithm::LispFrozen => "lisp-frozen",
            Algorithm::MpcActionLong => "mpc-action-long",
            Algorithm::MpcActionShort => "mpc-action-short",
            Algorithm::Sac => "sac",
        }
    }

    pub fn uses_planner(&self) -> bool {
        !matches!(self, Algorithm::Sac)
    }

    pub fn plans_in_action_space(&self) -> bool {
        matches!(self, Algorithm::MpcActionLong | Algorithm::MpcActionShort)
    }

    pub fn updates_skills(&self) -> bool {
        matches!(self, Algorithm::Lisp | Algorithm::LispNoPractice)
    }

    pub fn frozen(&self) -> bool {
        matches!(self, Algorithm::LispFrozen)
    }
}

/// Everything the agent loop needs to know, resolved from the config file.
#[derive(Clone, Debug)]
pub struct AgentConfig {
    pub env_kind: EnvKind,
    pub lifetime: u64,
    pub segment_period: u64,
    pub velocity_targets: Vec<f64>,

    pub model_hidden: Vec<usize>,
    pub ensemble_size: usize,
    pub model_lr: f64,
    pub model_batch: usize,
    /// Online retraining cadence in environment steps.
    pub model_train_interval: u64,
    /// Gradient steps per member per online retrain.
    pub model_train_steps: usize,
    /// Pretraining: plateau rule parameters and the hard cap.
    pub model_pretrain_max_steps: usize,
    pub model_plateau_tol: f64,
    pub model_plateau_evals: usize,
    pub model_eval_interval: usize,
    pub holdout_frac: f64,

    pub skills: SkillConfig,
    pub planner: PlannerConfig,
    /// Horizon for the short action-space MPC ablation.
    pub mpc_short_horizon: usize,

    pub buffer_capacity: usize,
    pub pretrain_policy_iters: usize,
    /// Skill-learning iterations per online environment step.
    pub online_policy_iters: usize,
}

impl AgentConfig {
    pub fn dims(&self) -> (usize, usize) {
        match self.env_kind {
            EnvKind::Volcano => (crate::env::VOLCANO_STATE_DIM, 2),
            EnvKind::Minecraft => (crate::env::MINECRAFT_STATE_DIM, 2),
            EnvKind::PointMass => (crate::env::POINTMASS_STATE_DIM, 2),
        }
    }

    pub fn build_env(&self, seed: u64) -> Box<dyn Environment> {
        crate::env::build_env(
            self.env_kind,
            seed,
            self.lifetime,
            self.segment_period,
            &self.velocity_targets,
        )
    }

    /// Planner configuration for the given algorithm (action-space MPC plans
    /// over raw actions; the short variant truncates the horizon).
    pub fn planner_for(&self, algorithm: Algorithm) -> PlannerConfig {
        let mut p = self.planner.clone();
        if algorithm == Algorithm::MpcActionShort {
            p.horizon = self.mpc_short_horizon;
            if p.horizon % p.skill_repeat != 0 {
                p.skill_repeat = 1;
            }
        }
        p
    }
}

/// The learned state of a model-based agent.
pub struct LispAgent {
    pub ensemble: EnsembleDynamics,
    pub bundle: SkillBundle,
    pub gen_buffer: ReplayBuffer,
}

impl LispAgent {
    pub fn new(cfg: &AgentConfig, seed: u64) -> Self {
        let (state_dim, action_dim) = cfg.dims();
        let ensemble = EnsembleDynamics::new(
            state_dim,
            action_dim,
            cfg.ensemble_size,
            &cfg.model_hidden,
            cfg.model_lr,
            seed,
        );
        let mut init_rng = derive(seed, Stream::PolicyInit);
        let bundle = SkillBundle::new(state_dim, action_dim, cfg.skills.clone(), &mut init_rng);
        let gen_buffer = bundle.make_gen_buffer();
        LispAgent {
            ensemble,
            bundle,
            gen_buffer,
        }
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.ensemble.optimizer_steps() + self.bundle.optimizer_steps()
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut units = self.ensemble.to_units("model");
        units.extend(self.bundle.to_units("skills"));
        write_checkpoint(path, &units)
    }

    pub fn load_checkpoint(cfg: &AgentConfig, path: &Path) -> Result<Self, CheckpointError> {
        let mut agent = LispAgent::new(cfg, 0);
        let units = read_checkpoint(path)?;
        agent.ensemble.load_units(&units, "model")?;
        agent.bundle.load_units(&units, "skills")?;
        agent.bundle.discriminator.sync_norms(&agent.ensemble);
        Ok(agent)
    }
}

/// One row of the per-step run log.
#[derive(Clone, Debug)]
pub struct StepLog {
    pub t: u64,
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub stuck: bool,
    pub segment: usize,
    pub segment_changed: bool,
    /// NaN for environments without a performance metric.
    pub performance: f64,
    pub plan_best_return: f64,
    pub plan_weight_entropy: f64,
    /// Wall-clock per planning call; logged separately from metrics so
    /// metrics files stay bit-reproducible.
    pub plan_ms: f64,
}

#[derive(Clone, Debug, Default)]
pub struct RunMetrics {
    pub steps: Vec<StepLog>,
    pub stuck_events: usize,
    pub best_tier: usize,
    pub optimizer_steps_taken: u64,
}

impl RunMetrics {
    /// Mean per-step performance over a window of steps (locomotion only).
    pub fn performance_over(&self, range: std::ops::Range<usize>, target: f64) -> f64 {
        let window: Vec<Vec<f64>> = self.steps[range].iter().map(|s| s.state.clone()).collect();
        PerformanceSpec::hopper_form(target).performance(&window)
    }
}

/// Trains the ensemble until the validation NLL plateaus (relative
/// improvement below `tol` for `patience` consecutive evaluations) or the
/// step cap is reached. Returns the NLL trace at evaluation points.
pub fn train_model_to_plateau(
    ensemble: &mut EnsembleDynamics,
    buffer: &ReplayBuffer,
    cfg: &AgentConfig,
    seed: u64,
) -> Result<Vec<f64>, AgentError> {
    let holdout: Vec<usize> = {
        let n = buffer.len();
        let k = ((n as f64 * cfg.holdout_frac) as usize).clamp(1, 4096.min(n));
        // deterministic fixed holdout: a stride through the buffer
        (0..k).map(|i| i * n / k).collect()
    };
    let mut trace = Vec::new();
    let mut best = f64::INFINITY;
    let mut flat = 0usize;
    let mut taken = 0usize;
    let mut round = 0u64;
    while taken < cfg.model_pretrain_max_steps {
        let chunk = cfg.model_eval_interval.min(cfg.model_pretrain_max_steps - taken);
        ensemble.train(buffer, chunk, cfg.model_batch, seed ^ (round << 32))?;
        taken += chunk;
        round += 1;
        let nll = ensemble.eval_nll(buffer, &holdout);
        trace.push(nll);
        let improved = (best - nll) / best.abs().max(1e-9);
        if nll < best {
            best = nll;
        }
        if improved < cfg.model_plateau_tol {
            flat += 1;
            if flat >= cfg.model_plateau_evals {
                break;
            }
        } else {
            flat = 0;
        }
    }
    Ok(trace)
}

/// Offline pretraining: load the dataset into the real buffer, train the
/// ensemble to its NLL plateau, then run the configured skill-learning
/// budget with the disagreement penalty active.
pub fn offline_pretrain(
    dataset: ReplayBuffer,
    cfg: &AgentConfig,
    seed: u64,
    use_practice: bool,
) -> Result<(LispAgent, ReplayBuffer, Vec<f64>), AgentError> {
    if dataset.is_empty() {
        return Err(AgentError::EmptyDataset);
    }
    let (state_dim, action_dim) = cfg.dims();
    let mut buffer = ReplayBuffer::new(state_dim, action_dim, dataset.skill_dim(), cfg.buffer_capacity);
    for t in dataset.iter() {
        buffer.push(t.clone())?;
    }
    let mut agent = LispAgent::new(cfg, seed);
    let nll_trace = train_model_to_plateau(&mut agent.ensemble, &buffer, cfg, seed)?;

    let mut rng = derive(seed, Stream::SacPolicy);
    for _ in 0..cfg.pretrain_policy_iters {
        agent.bundle.update_policy(
            &agent.ensemble,
            &buffer,
            &mut agent.gen_buffer,
            use_practice,
            &mut rng,
        )?;
    }
    Ok((agent, buffer, nll_trace))
}

/// The reset-free online loop for the model-based algorithms, and the SAC
/// baseline when `algorithm == Sac`.
pub struct LifelongRun<'a> {
    pub cfg: &'a AgentConfig,
    pub algorithm: Algorithm,
    pub seed: u64,
    /// Skill-learning on/off is implied by the algorithm; this additionally
    /// caps total steps for tests (defaults to cfg.lifetime).
    pub max_steps: Option<u64>,
}

impl LifelongRun<'_> {
    /// Runs the loop. `buffer` carries pretraining data in and accumulates
    /// one real transition per step. The SAC baseline ignores `agent`'s
    /// bundle/ensemble except for acting via its own machinery, which the
    /// caller passes as `sac_baseline`.
    pub fn run(
        &self,
        env: &mut dyn Environment,
        agent: &mut LispAgent,
        buffer: &mut ReplayBuffer,
        mut sac_baseline: Option<&mut crate::skills::SacMachinery>,
    ) -> Result<RunMetrics, AgentError> {
        let cfg = self.cfg;
        let alg = self.algorithm;
        let steps = self.max_steps.unwrap_or(cfg.lifetime);
        let planner_cfg = cfg.planner_for(alg);
        let plan_dim = if alg.plans_in_action_space() {
            env.action_dim()
        } else {
            cfg.skills.dim_z
        };
        let mut plan = PlanDistribution::fresh(&planner_cfg, plan_dim);
        let mut planner_rng = derive(self.seed, Stream::Planner);
        let mut update_rng = derive(self.seed, Stream::SacPolicy);
        let opt_steps_before = agent.optimizer_steps()
            + sac_baseline.as_ref().map(|s| s.optimizer_steps()).unwrap_or(0);

        let mut metrics = RunMetrics::default();
        let mut window: Vec<Vec<f64>> = Vec::new();

        for t in 0..steps {
            // Model retraining on its fixed cadence.
            if !alg.frozen()
                && alg != Algorithm::Sac
                && t > 0
                && t % cfg.model_train_interval == 0
                && buffer.len() >= cfg.model_batch
            {
                agent
                    .ensemble
                    .train(buffer, cfg.model_train_steps, cfg.model_batch, self.seed ^ t)?;
            }

            // Learning budget for this step.
            if alg.updates_skills() && buffer.len() >= 1 {
                for _ in 0..cfg.online_policy_iters {
                    agent.bundle.update_policy(
                        &agent.ensemble,
                        buffer,
                        &mut agent.gen_buffer,
                        alg != Algorithm::LispNoPractice,
                        &mut update_rng,
                    )?;
                }
            }
            if alg == Algorithm::Sac {
                if let Some(sac) = sac_baseline.as_deref_mut() {
                    if buffer.len() >= cfg.skills.batch {
                        let batch = sample_env_batch(buffer, cfg.skills.batch, &mut update_rng);
                        sac.update(&batch, &mut update_rng)
                            .map_err(SkillsError::from)?;
                    }
                }
            }

            // Act.
            let state = env.state();
            let (action, info, plan_ms) = if alg.uses_planner() {
                let reward = env.planning_reward();
                let policy = if alg.plans_in_action_space() {
                    None
                } else {
                    Some(&agent.bundle.policy.actor)
                };
                let started = Instant::now();
                let (a, info) = get_action(
                    &state,
                    &agent.ensemble,
                    policy,
                    &reward,
                    &mut plan,
                    &planner_cfg,
                    &mut planner_rng,
                );
                (a, info, started.elapsed().as_secs_f64() * 1e3)
            } else {
                let sac = sac_baseline
                    .as_deref_mut()
                    .expect("SAC baseline run needs its machinery");
                let (a, _) = sac.act(&state, &mut planner_rng);
                (a, PlanInfo::default(), 0.0)
            };

            let result = env.step(&action);
            if result.stuck && result.segment_changed {
                metrics.stuck_events += 1;
            }
            if env.kind() == EnvKind::Minecraft {
                metrics.best_tier = metrics
                    .best_tier
                    .max(crate::env::best_tier(&result.next_state[10..16]));
            }

            // Rolling performance over the recent window (locomotion only).
            window.push(result.next_state.clone());
            if window.len() > 200 {
                window.remove(0);
            }
            let performance = env.performance(&window).unwrap_or(f64::NAN);

            buffer.push(Transition {
                state: state.clone(),
                action: action.clone(),
                skill: if buffer.skill_dim() == cfg.skills.dim_z && !alg.plans_in_action_space() {
                    let mut z = info.planned_first_skill.clone();
                    z.resize(buffer.skill_dim(), 0.0);
                    z
                } else {
                    vec![0.0; buffer.skill_dim()]
                },
                reward: result.reward,
                next_state: result.next_state.clone(),
            })?;

            metrics.steps.push(StepLog {
                t,
                state,
                action,
                reward: result.reward,
                stuck: result.stuck,
                segment: env.segment_index(),
                segment_changed: result.segment_changed,
                performance,
                plan_best_return: info.best_return,
                plan_weight_entropy: info.weight_entropy,
                plan_ms,
            });
        }
        metrics.optimizer_steps_taken = agent.optimizer_steps()
            + sac_baseline.as_ref().map(|s| s.optimizer_steps()).unwrap_or(0)
            - opt_steps_before;
        Ok(metrics)
    }
}

fn sample_env_batch(buffer: &ReplayBuffer, batch: usize, rng: &mut ChaCha8Rng) -> SacBatch {
    use crate::mat::Mat;
    let idx = buffer.sample_indices(rng, batch);
    let sd = buffer.state_dim();
    let ad = buffer.action_dim();
    let mut obs = Mat::zeros(batch, sd);
    let mut action = Mat::zeros(batch, ad);
    let mut next_obs = Mat::zeros(batch, sd);
    let mut reward = Vec::with_capacity(batch);
    for (r, &i) in idx.iter().enumerate() {
        let t = buffer.get(i);
        obs.row_mut(r).copy_from_slice(&t.state);
        action.row_mut(r).copy_from_slice(&t.action);
        next_obs.row_mut(r).copy_from_slice(&t.next_state);
        reward.push(t.reward);
    }
    SacBatch {
        obs,
        action,
        reward,
        next_obs,
    }
}

/// One row of the offline multi-task evaluation table.
#[derive(Clone, Debug)]
pub struct EvalRow {
    pub task: f64,
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<f64>,
    /// Fraction of executed actions whose model disagreement exceeded the
    /// threshold (support check for the offline regime).
    pub exceed_fraction: f64,
}

/// Evaluates a loaded agent on a list of target-velocity tasks with no
/// gradient updates: plan, act, score the trajectory window.
pub fn eval_offline_multitask(
    agent: &LispAgent,
    algorithm: Algorithm,
    cfg: &AgentConfig,
    tasks: &[f64],
    eval_steps: u64,
    seeds: &[u64],
) -> Vec<EvalRow> {
    let warmup = (eval_steps / 5).min(100);
    tasks
        .iter()
        .map(|&task| {
            let mut per_seed = Vec::new();
            let mut exceed = 0usize;
            let mut total = 0usize;
            for &seed in seeds {
                let planner_cfg = cfg.planner_for(algorithm);
                let plan_dim = if algorithm.plans_in_action_space() {
                    2
                } else {
                    cfg.skills.dim_z
                };
                let mut plan = PlanDistribution::fresh(&planner_cfg, plan_dim);
                let mut rng = derive(seed, Stream::Eval);
                let mut env = crate::env::PointMass::new(crate::env::MdpSchedule::single(
                    crate::env::RewardSpec::TargetVelocity(task),
                    eval_steps + 1,
                ));
                let mut window = Vec::new();
                for _ in 0..eval_steps {
                    let state = env.state();
                    let reward = env.planning_reward();
                    let policy = if algorithm.plans_in_action_space() {
                        None
                    } else {
                        Some(&agent.bundle.policy.actor)
                    };
                    let (action, _) = get_action(
                        &state,
                        &agent.ensemble,
                        policy,
                        &reward,
                        &mut plan,
                        &planner_cfg,
                        &mut rng,
                    );
                    let dis = agent.ensemble.disagreement(&state, &action, None);
                    if dis > cfg.skills.alpha_thres {
                        exceed += 1;
                    }
                    total += 1;
                    let r = env.step(&action);
                    window.push(r.next_state);
                }
                let spec = PerformanceSpec::hopper_form(task);
                per_seed.push(spec.performance(&window[warmup as usize..]));
            }
            EvalRow {
                task,
                mean: crate::stats::mean(&per_seed),
                std: crate::stats::std_dev(&per_seed),
                per_seed,
                exceed_fraction: exceed as f64 / total.max(1) as f64,
            }
        })
        .collect()
}

/// Rolls each probe skill in the real environment from its current state and
/// records the x-y trace; used for skill visualization.
pub fn skill_traces(
    agent: &LispAgent,
    cfg: &AgentConfig,
    n_skills: usize,
    steps: usize,
    seed: u64,
) -> Vec<(usize, usize, f64, f64)> {
    let mut rows = Vec::new();
    let mut rng = derive(seed, Stream::Eval);
    for k in 0..n_skills {
        let angle = k as f64 * 2.0 * std::f64::consts::PI / n_skills as f64;
        let mut z = vec![0.0; cfg.skills.dim_z];
        z[0] = angle.cos() * 0.9;
        if cfg.skills.dim_z > 1 {
            z[1] = angle.sin() * 0.9;
        }
        let mut env = cfg.build_env(seed);
        for step in 0..steps {
            let state = env.state();
            rows.push((k, step, state[0], state[1]));
            let mut obs = state.clone();
            obs.extend_from_slice(&z);
            let (a, _) = agent.bundle.policy.act(&obs, &mut rng);
            env.step(&a);
        }
    }
    rows
}
