//! Offline dataset collection.
//!
//! Three collectors feed the pretraining pipeline: a uniform-random policy,
//! scripted demonstration policies for the gridworlds, and an episodic SAC
//! trainer for the locomotion proxy whose whole replay buffer becomes the
//! dataset (the policies in the buffer range from random early to competent
//! late, like a real training log).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::{item, EnvKind, Environment, MdpSchedule, PointMass, RewardSpec};
use crate::mat::Mat;
use crate::replay::{ReplayBuffer, Transition};
use crate::rng::{derive, Stream};
use crate::skills::{SacBatch, SacConfig, SacError, SacMachinery};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CollectPolicy {
    Random,
    /// Scripted per-environment demonstrations with action noise.
    Demo,
    /// Episodic SAC trained on the task; the dataset is its replay buffer.
    Sac,
}

impl CollectPolicy {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "random" => CollectPolicy::Random,
            "demo" => CollectPolicy::Demo,
            "sac" => CollectPolicy::Sac,
            _ => return None,
        })
    }
}

/// Collects exactly `budget` transitions from a fresh environment.
pub fn collect(
    env_kind: EnvKind,
    policy: CollectPolicy,
    budget: usize,
    seed: u64,
    segment_period: u64,
    velocity_targets: &[f64],
) -> Result<ReplayBuffer, SacError> {
    match policy {
        CollectPolicy::Sac => collect_sac_pointmass(budget, seed, velocity_targets),
        _ => {
            let mut env = crate::env::build_env(
                env_kind,
                seed,
                budget as u64 + 1,
                segment_period,
                velocity_targets,
            );
            let mut rng = derive(seed, Stream::Collector);
            let mut buf = ReplayBuffer::new(env.state_dim(), env.action_dim(), 0, budget.max(1));
            let mut demo = DemoPolicy::new(env_kind);
            for _ in 0..budget {
                let state = env.state();
                let action = match policy {
                    CollectPolicy::Random => {
                        vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]
                    }
                    CollectPolicy::Demo => demo.act(&state, &mut rng),
                    CollectPolicy::Sac => unreachable!(),
                };
                let r = env.step(&action);
                buf.push(Transition {
                    state,
                    action,
                    skill: vec![],
                    reward: r.reward,
                    next_state: r.next_state,
                })
                .expect("dims are consistent");
            }
            Ok(buf)
        }
    }
}

/// Noisy scripted controllers that exercise each environment's mechanics.
struct DemoPolicy {
    kind: EnvKind,
}

impl DemoPolicy {
    fn new(kind: EnvKind) -> Self {
        DemoPolicy { kind }
    }

    fn act(&mut self, state: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self.kind {
            EnvKind::Volcano => {
                // goal seeking with heavy exploration noise
                if rng.gen_bool(0.2) {
                    return vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                }
                let dx = state[4] - state[0];
                let dy = state[5] - state[1];
                vec![
                    (dx * 1.5).clamp(-1.0, 1.0) + rng.gen_range(-0.5..0.5),
                    (dy * 1.5).clamp(-1.0, 1.0) + rng.gen_range(-0.5..0.5),
                ]
            }
            EnvKind::Minecraft => {
                if rng.gen_bool(0.15) {
                    return vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                }
                let target = Self::next_block(state);
                let dx = target[0] - state[0];
                let dy = target[1] - state[1];
                vec![
                    (dx * 1.5).clamp(-1.0, 1.0) + rng.gen_range(-0.35..0.35),
                    (dy * 1.5).clamp(-1.0, 1.0) + rng.gen_range(-0.35..0.35),
                ]
            }
            EnvKind::PointMass => {
                // hover-ish thrust with noise; occasionally let it drop
                let hover = 0.667;
                let z_err = 1.3 - state[1];
                vec![
                    rng.gen_range(-1.0..1.0),
                    (hover + z_err * 0.8 - state[3] * 0.5 + rng.gen_range(-0.3..0.3))
                        .clamp(-1.0, 1.0),
                ]
            }
        }
    }

    /// The block the crafting chain wants next, given the inventory bits.
    fn next_block(state: &[f64]) -> [f64; 2] {
        let inv = |k: usize| state[10 + k] > 0.5;
        let wood_pos = [state[2], state[3]];
        let craft_pos = [state[4], state[5]];
        let stone_pos = [state[6], state[7]];
        let iron_pos = [state[8], state[9]];
        if inv(item::STONE_PICKAXE) {
            iron_pos
        } else if inv(item::STONE) && inv(item::STICK) {
            craft_pos
        } else if inv(item::WOODEN_PICKAXE) && !inv(item::STONE) {
            stone_pos
        } else if inv(item::WOOD) {
            craft_pos
        } else {
            wood_pos
        }
    }
}

/// Episodic SAC on the locomotion proxy; returns the full replay buffer once
/// `budget` environment steps have been taken.
fn collect_sac_pointmass(
    budget: usize,
    seed: u64,
    velocity_targets: &[f64],
) -> Result<ReplayBuffer, SacError> {
    let target = velocity_targets.first().copied().unwrap_or(1.0);
    let episode_len = 250usize;
    let warmup = 1000usize.min(budget / 4);
    let batch = 96usize;

    let mut init_rng = derive(seed, Stream::PolicyInit);
    let mut sac = SacMachinery::new(
        4,
        2,
        &[48, 48],
        &[48, 48],
        SacConfig {
            gamma: 0.99,
            tau: 0.005,
            lr: 3e-4,
            target_entropy: -2.0,
        },
        &mut init_rng,
    );
    let mut rng = derive(seed, Stream::Collector);
    let mut buf = ReplayBuffer::new(4, 2, 0, budget.max(1));

    let mut taken = 0usize;
    while taken < budget {
        // fresh episode: hover start with jitter
        let mut env = PointMass::new(MdpSchedule::single(
            RewardSpec::TargetVelocity(target),
            (episode_len + 1) as u64,
        ));
        env.set_state(&[
            0.0,
            rng.gen_range(0.9..1.7),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.3..0.3),
        ]);
        for _ in 0..episode_len {
            if taken >= budget {
                break;
            }
            let state = env.state();
            let action = if taken < warmup {
                vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]
            } else {
                sac.act(&state, &mut rng).0
            };
            let r = env.step(&action);
            buf.push(Transition {
                state,
                action,
                skill: vec![],
                reward: r.reward,
                next_state: r.next_state,
            })
            .expect("dims are consistent");
            taken += 1;

            if taken > warmup {
                let idx = buf.sample_indices(&mut rng, batch);
                let mut obs = Mat::zeros(batch, 4);
                let mut action_m = Mat::zeros(batch, 2);
                let mut next_obs = Mat::zeros(batch, 4);
                let mut reward = Vec::with_capacity(batch);
                for (r_i, &i) in idx.iter().enumerate() {
                    let t = buf.get(i);
                    obs.row_mut(r_i).copy_from_slice(&t.state);
                    action_m.row_mut(r_i).copy_from_slice(&t.action);
                    next_obs.row_mut(r_i).copy_from_slice(&t.next_state);
                    reward.push(t.reward);
                }
                sac.update(
                    &SacBatch {
                        obs,
                        action: action_m,
                        reward,
                        next_obs,
                    },
                    &mut rng,
                )?;
            }
        }
    }
    Ok(buf)
}
