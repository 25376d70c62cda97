//! Reset-free environments and the nonstationary MDP schedule.
//!
//! A lifelong run is a concatenation of MDP segments; each segment fixes a
//! reward spec and a dynamics spec for a duration. Environments never reset:
//! the only state mutation is `step`, and segment boundaries rearrange the
//! world in place (pitfalls and goals move, target velocities change).

mod minecraft;
mod pointmass;
mod volcano;

pub use minecraft::{best_tier, item, resolve_tile, Inventory, Minecraft, Tile, MINECRAFT_STATE_DIM};
pub use pointmass::{locomotion_reward, PointMass, PointMassParams, POINTMASS_STATE_DIM};
pub use volcano::{Volcano, VOLCANO_STATE_DIM};

use std::sync::Arc;

/// Reward over one transition `(s, a, s')`, usable on model-predicted states.
pub type RewardFn = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync>;

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("schedule too short: total duration {total} < lifetime {lifetime}")]
    ScheduleTooShort { total: u64, lifetime: u64 },
    #[error("schedule has no segments")]
    EmptySchedule,
    #[error("unknown environment `{0}`")]
    UnknownEnv(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvKind {
    Volcano,
    Minecraft,
    PointMass,
}

impl EnvKind {
    pub fn parse(s: &str) -> Result<Self, EnvError> {
        match s {
            "volcano" => Ok(EnvKind::Volcano),
            "minecraft" => Ok(EnvKind::Minecraft),
            "pointmass" => Ok(EnvKind::PointMass),
            other => Err(EnvError::UnknownEnv(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvKind::Volcano => "volcano",
            EnvKind::Minecraft => "minecraft",
            EnvKind::PointMass => "pointmass",
        }
    }
}

/// Reward specification of one segment.
#[derive(Clone, Debug, PartialEq)]
pub enum RewardSpec {
    /// Locomotion: match a target x-velocity while holding the height setpoint.
    TargetVelocity(f64),
    /// Volcano: negative distance to the goal of this segment's layout.
    GoalLayout { layout_seed: u64 },
    /// Minecraft: tiered crafting rewards; constant across segments.
    CraftingTiers,
}

/// Dynamics specification of one segment.
#[derive(Clone, Debug, PartialEq)]
pub enum DynamicsSpec {
    /// Transition rules do not change at this boundary.
    Fixed,
    /// Volcano: pitfall/goal tiles are resampled from this seed.
    VolcanoLayout { layout_seed: u64 },
}

#[derive(Clone, Debug)]
pub struct SegmentSpec {
    pub reward: RewardSpec,
    pub dynamics: DynamicsSpec,
    pub duration: u64,
}

/// Ordered list of MDP segments realizing the lifelong environment.
#[derive(Clone, Debug)]
pub struct MdpSchedule {
    segments: Vec<SegmentSpec>,
}

impl MdpSchedule {
    pub fn new(segments: Vec<SegmentSpec>) -> Self {
        MdpSchedule { segments }
    }

    /// Locomotion schedule cycling through target velocities, one segment per
    /// `period` steps, extended to cover `lifetime`.
    pub fn velocity_cycle(targets: &[f64], period: u64, lifetime: u64) -> Self {
        assert!(!targets.is_empty() && period > 0);
        let n = (lifetime + period - 1) / period + 1;
        let segments = (0..n)
            .map(|i| SegmentSpec {
                reward: RewardSpec::TargetVelocity(targets[(i as usize) % targets.len()]),
                dynamics: DynamicsSpec::Fixed,
                duration: period,
            })
            .collect();
        MdpSchedule { segments }
    }

    /// Volcano schedule: layout reseeded every `period` steps.
    pub fn volcano_cycle(seed: u64, period: u64, lifetime: u64) -> Self {
        assert!(period > 0);
        let n = (lifetime + period - 1) / period + 1;
        let segments = (0..n)
            .map(|i| {
                let layout_seed = seed ^ (0xA076_1D64_78BD_642F_u64.wrapping_mul(i + 1));
                SegmentSpec {
                    reward: RewardSpec::GoalLayout { layout_seed },
                    dynamics: DynamicsSpec::VolcanoLayout { layout_seed },
                    duration: period,
                }
            })
            .collect();
        MdpSchedule { segments }
    }

    /// One segment covering the whole lifetime.
    pub fn single(reward: RewardSpec, lifetime: u64) -> Self {
        MdpSchedule {
            segments: vec![SegmentSpec {
                reward,
                dynamics: DynamicsSpec::Fixed,
                duration: lifetime.max(1),
            }],
        }
    }

    pub fn segments(&self) -> &[SegmentSpec] {
        &self.segments
    }

    pub fn total_duration(&self) -> u64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn validate(&self, lifetime: u64) -> Result<(), EnvError> {
        if self.segments.is_empty() {
            return Err(EnvError::EmptySchedule);
        }
        let total = self.total_duration();
        if total < lifetime {
            return Err(EnvError::ScheduleTooShort { total, lifetime });
        }
        Ok(())
    }

    /// Index of the unique segment containing global time `t`. Times beyond
    /// the schedule clamp to the last segment.
    pub fn active(&self, t: u64) -> usize {
        let mut acc = 0u64;
        for (i, seg) in self.segments.iter().enumerate() {
            acc += seg.duration;
            if t < acc {
                return i;
            }
        }
        self.segments.len() - 1
    }
}

/// Result of one environment step.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// Agent is in a trapped/sunk configuration after this step.
    pub stuck: bool,
    /// This step crossed a segment boundary (the world rearranged).
    pub segment_changed: bool,
}

/// A reset-free environment. `step` is the only mutation; there is no reset.
pub trait Environment: Send {
    fn kind(&self) -> EnvKind;
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn state(&self) -> Vec<f64>;
    fn global_t(&self) -> u64;
    fn segment_index(&self) -> usize;

    /// Advances exactly one timestep. Actions are clamped to [-1, 1].
    fn step(&mut self, action: &[f64]) -> StepResult;

    /// The active segment's reward as a pure function over (s, a, s'),
    /// evaluable on model-predicted states.
    fn planning_reward(&self) -> RewardFn;

    /// Ground-truth deterministic next state under the active segment's
    /// dynamics; used by the model-error study.
    fn ideal_next(&self, s: &[f64], a: &[f64]) -> Vec<f64>;

    /// Normalized performance over a window of states, if defined.
    fn performance(&self, window: &[Vec<f64>]) -> Option<f64>;
}

/// Normalized scoring of a locomotion trajectory window. The ideal window
/// (height at setpoint, velocity on target) scores exactly 1.
#[derive(Clone, Debug)]
pub struct PerformanceSpec {
    pub target_velocity: f64,
    pub height_setpoint: f64,
    pub height_weight: f64,
    pub height_normalizer: f64,
    pub velocity_weight: f64,
    pub velocity_normalizer: f64,
}

impl PerformanceSpec {
    /// The hopping-form metric: `1 - 0.8 (z_avg - 1.3)^2 / 1.3^2
    /// - 0.2 |xv_avg - target| / 4`.
    pub fn hopper_form(target_velocity: f64) -> Self {
        PerformanceSpec {
            target_velocity,
            height_setpoint: 1.3,
            height_weight: 0.8,
            height_normalizer: 1.3 * 1.3,
            velocity_weight: 0.2,
            velocity_normalizer: 4.0,
        }
    }

    pub fn score(&self, z_avg: f64, xv_avg: f64) -> f64 {
        let dz = z_avg - self.height_setpoint;
        1.0 - self.height_weight * dz * dz / self.height_normalizer
            - self.velocity_weight * (xv_avg - self.target_velocity).abs()
                / self.velocity_normalizer
    }

    /// Averages height and x-velocity over the window, then scores.
    /// States use the point-mass layout (x, z, x_vel, z_vel).
    pub fn performance(&self, window: &[Vec<f64>]) -> f64 {
        assert!(!window.is_empty(), "performance of empty trajectory");
        let n = window.len() as f64;
        let mut z_avg = 0.0;
        let mut xv_avg = 0.0;
        for s in window {
            z_avg += s[1];
            xv_avg += s[2];
        }
        self.score(z_avg / n, xv_avg / n)
    }
}

/// Counts segment boundaries at which the agent was stuck at the boundary
/// step; each such event would have required an external intervention.
/// Input rows are `(stuck, segment_changed)` per step.
pub fn stuck_count(rows: impl IntoIterator<Item = (bool, bool)>) -> usize {
    rows.into_iter()
        .filter(|&(stuck, changed)| stuck && changed)
        .count()
}

/// Builds an environment from its kind with the standard schedules used by
/// the experiment harness.
pub fn build_env(
    kind: EnvKind,
    seed: u64,
    lifetime: u64,
    segment_period: u64,
    velocity_targets: &[f64],
) -> Box<dyn Environment> {
    match kind {
        EnvKind::Volcano => Box::new(Volcano::new(
            seed,
            MdpSchedule::volcano_cycle(seed, segment_period, lifetime),
        )),
        EnvKind::Minecraft => Box::new(Minecraft::new(MdpSchedule::single(
            RewardSpec::CraftingTiers,
            lifetime,
        ))),
        EnvKind::PointMass => Box::new(PointMass::new(MdpSchedule::velocity_cycle(
            velocity_targets,
            segment_period,
            lifetime,
        ))),
    }
}
