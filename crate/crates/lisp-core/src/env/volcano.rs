//! Continuous 8x8 volcano gridworld.
//!
//! Free tiles, lava tiles (penalty but no movement effect), one pitfall tile
//! that permanently traps the agent, and one goal tile. Reward is negative
//! L2 distance to the goal minus the lava penalty. Every segment boundary the
//! pitfall and goal are resampled over free tiles, which is also the only
//! thing that can free a trapped agent.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvKind, Environment, MdpSchedule, RewardFn, StepResult};

pub const VOLCANO_STATE_DIM: usize = 6;
const ARENA: f64 = 8.0;
const STEP_SCALE: f64 = 0.5;
const LAVA_PENALTY: f64 = 1.0;
const NUM_LAVA: usize = 10;

pub struct Volcano {
    schedule: MdpSchedule,
    t: u64,
    seg_idx: usize,
    agent: [f64; 2],
    pit: [f64; 2],
    goal: [f64; 2],
    lava: Vec<(i64, i64)>,
}

#[inline]
fn tile_of(p: &[f64]) -> (i64, i64) {
    ((p[0].min(ARENA - 1e-9).floor() as i64), (p[1].min(ARENA - 1e-9).floor() as i64))
}

#[inline]
fn same_tile(a: &[f64], b: &[f64]) -> bool {
    tile_of(a) == tile_of(b)
}

impl Volcano {
    pub fn new(seed: u64, schedule: MdpSchedule) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x70);
        let mut tiles: Vec<(i64, i64)> = (0..8)
            .flat_map(|i| (0..8).map(move |j| (i, j)))
            .collect();
        tiles.retain(|&t| t != (4, 4)); // keep the start tile clear
        tiles.shuffle(&mut rng);
        let lava: Vec<(i64, i64)> = tiles.into_iter().take(NUM_LAVA).collect();

        let mut env = Volcano {
            schedule,
            t: 0,
            seg_idx: 0,
            agent: [4.5, 4.5],
            pit: [0.5, 0.5],
            goal: [7.5, 7.5],
            lava,
        };
        env.relayout(0);
        env
    }

    fn layout_seed(&self, seg: usize) -> u64 {
        match self.schedule.segments()[seg].dynamics {
            super::DynamicsSpec::VolcanoLayout { layout_seed } => layout_seed,
            _ => seg as u64,
        }
    }

    /// Resamples pitfall and goal uniformly over free tiles (not lava, not
    /// the agent's current tile, not each other).
    fn relayout(&mut self, seg: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.layout_seed(seg));
        let agent_tile = tile_of(&self.agent);
        let free: Vec<(i64, i64)> = (0..8)
            .flat_map(|i| (0..8).map(move |j| (i, j)))
            .filter(|t| !self.lava.contains(t) && *t != agent_tile)
            .collect();
        let pit = free[rng.gen_range(0..free.len())];
        let goal = loop {
            let g = free[rng.gen_range(0..free.len())];
            if g != pit {
                break g;
            }
        };
        self.pit = [pit.0 as f64 + 0.5, pit.1 as f64 + 0.5];
        self.goal = [goal.0 as f64 + 0.5, goal.1 as f64 + 0.5];
    }

    fn in_lava(lava: &[(i64, i64)], p: &[f64]) -> bool {
        lava.contains(&tile_of(p))
    }

    fn reward_at(lava: &[(i64, i64)], agent: &[f64], goal: &[f64]) -> f64 {
        let d = ((agent[0] - goal[0]).powi(2) + (agent[1] - goal[1]).powi(2)).sqrt();
        let lava_pen = if Self::in_lava(lava, agent) { LAVA_PENALTY } else { 0.0 };
        -d - lava_pen
    }

    /// One-step movement rule shared by `step` and `ideal_next`.
    fn advance(agent: &[f64; 2], pit: &[f64; 2], action: &[f64]) -> [f64; 2] {
        if same_tile(agent, pit) {
            return *agent; // trapped: position invariant under all actions
        }
        let ax = action[0].clamp(-1.0, 1.0);
        let ay = action[1].clamp(-1.0, 1.0);
        [
            (agent[0] + STEP_SCALE * ax).clamp(0.0, ARENA),
            (agent[1] + STEP_SCALE * ay).clamp(0.0, ARENA),
        ]
    }
}

impl Environment for Volcano {
    fn kind(&self) -> EnvKind {
        EnvKind::Volcano
    }

    fn state_dim(&self) -> usize {
        VOLCANO_STATE_DIM
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn state(&self) -> Vec<f64> {
        vec![
            self.agent[0], self.agent[1], self.pit[0], self.pit[1], self.goal[0], self.goal[1],
        ]
    }

    fn global_t(&self) -> u64 {
        self.t
    }

    fn segment_index(&self) -> usize {
        self.seg_idx
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        self.agent = Self::advance(&self.agent, &self.pit, action);
        let reward = Self::reward_at(&self.lava, &self.agent, &self.goal);
        // Stuck status is read at the boundary moment, before rearrangement.
        let stuck = same_tile(&self.agent, &self.pit);

        self.t += 1;
        let new_seg = self.schedule.active(self.t);
        let segment_changed = new_seg != self.seg_idx;
        if segment_changed {
            self.seg_idx = new_seg;
            self.relayout(new_seg);
        }
        StepResult {
            next_state: self.state(),
            reward,
            stuck,
            segment_changed,
        }
    }

    fn planning_reward(&self) -> RewardFn {
        // Goal and pit live in the state vector, so the same closure stays
        // valid across segment changes.
        let lava = self.lava.clone();
        Arc::new(move |_s: &[f64], _a: &[f64], s_next: &[f64]| {
            Volcano::reward_at(&lava, &s_next[0..2], &s_next[4..6])
        })
    }

    fn ideal_next(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let agent = [s[0], s[1]];
        let pit = [s[2], s[3]];
        let next = Self::advance(&agent, &pit, a);
        vec![next[0], next[1], s[2], s[3], s[4], s[5]]
    }

    fn performance(&self, _window: &[Vec<f64>]) -> Option<f64> {
        None
    }
}
