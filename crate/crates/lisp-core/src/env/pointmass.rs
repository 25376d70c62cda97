//! Point-mass locomotion proxy with a sink state.
//!
//! State (x, z, x_vel, z_vel), action (horizontal thrust, vertical thrust).
//! Gravity pulls z down; thrust counteracts it only while z is above the
//! sink threshold. Below the threshold vertical actuation is disabled and
//! upward momentum is cancelled, so the floor is absorbing: a fallen agent
//! stays fallen. Reward follows the hopping form
//! `-5 (z - z*)^2 - |x_vel - target| + |target|` with setpoint z* = 1.3.

use std::sync::Arc;

use super::{EnvKind, Environment, MdpSchedule, PerformanceSpec, RewardFn, RewardSpec, StepResult};

pub const POINTMASS_STATE_DIM: usize = 4;

#[derive(Clone, Copy, Debug)]
pub struct PointMassParams {
    pub dt: f64,
    pub gravity: f64,
    pub thrust_x: f64,
    pub thrust_z: f64,
    pub drag: f64,
    /// Below this height the vertical thrust is disabled.
    pub z_sink: f64,
    pub z_ceiling: f64,
    /// x wraps on [-x_wrap, x_wrap) to keep the state bounded.
    pub x_wrap: f64,
    pub height_setpoint: f64,
}

impl Default for PointMassParams {
    fn default() -> Self {
        PointMassParams {
            dt: 0.1,
            gravity: 2.0,
            thrust_x: 2.5,
            thrust_z: 3.0,
            drag: 0.8,
            z_sink: 0.3,
            z_ceiling: 4.0,
            x_wrap: 8.0,
            height_setpoint: 1.3,
        }
    }
}

/// Hopping-form reward for a state (x, z, x_vel, z_vel) and target velocity.
pub fn locomotion_reward(state: &[f64], target_velocity: f64) -> f64 {
    let z = state[1];
    let xv = state[2];
    -5.0 * (z - 1.3) * (z - 1.3) - (xv - target_velocity).abs() + target_velocity.abs()
}

pub struct PointMass {
    params: PointMassParams,
    schedule: MdpSchedule,
    t: u64,
    seg_idx: usize,
    state: [f64; 4],
}

/// Hover start: at the height setpoint with zero velocity.
pub const START_STATE: [f64; 4] = [0.0, 1.3, 0.0, 0.0];

impl PointMass {
    pub fn new(schedule: MdpSchedule) -> Self {
        Self::with_params(PointMassParams::default(), schedule)
    }

    pub fn with_params(params: PointMassParams, schedule: MdpSchedule) -> Self {
        PointMass {
            params,
            schedule,
            t: 0,
            seg_idx: 0,
            state: START_STATE,
        }
    }

    /// Places the environment at an arbitrary state (used by evaluation
    /// harnesses before a run begins, never during one).
    pub fn set_state(&mut self, s: &[f64]) {
        self.state = [s[0], s[1], s[2], s[3]];
    }

    pub fn active_target(&self) -> f64 {
        match self.schedule.segments()[self.seg_idx].reward {
            RewardSpec::TargetVelocity(v) => v,
            _ => 0.0,
        }
    }

    fn dynamics(p: &PointMassParams, s: &[f64], action: &[f64]) -> [f64; 4] {
        let (x, z, xv, zv) = (s[0], s[1], s[2], s[3]);
        let ax = action[0].clamp(-1.0, 1.0);
        let az = action[1].clamp(-1.0, 1.0);
        let sunk = z < p.z_sink;
        // Sunk: no vertical authority and upward momentum is cancelled.
        let zv = if sunk { zv.min(0.0) } else { zv };
        let az_eff = if sunk { 0.0 } else { p.thrust_z * az };
        let xv_next = xv + p.dt * (p.thrust_x * ax - p.drag * xv);
        let mut zv_next = zv + p.dt * (az_eff - p.drag * zv - p.gravity);
        let mut z_next = z + p.dt * zv_next;
        if z_next <= 0.0 {
            z_next = 0.0;
            zv_next = 0.0;
        }
        if z_next >= p.z_ceiling {
            z_next = p.z_ceiling;
            zv_next = zv_next.min(0.0);
        }
        let mut x_next = x + p.dt * xv_next;
        if x_next >= p.x_wrap {
            x_next -= 2.0 * p.x_wrap;
        } else if x_next < -p.x_wrap {
            x_next += 2.0 * p.x_wrap;
        }
        [x_next, z_next, xv_next, zv_next]
    }
}

impl Environment for PointMass {
    fn kind(&self) -> EnvKind {
        EnvKind::PointMass
    }

    fn state_dim(&self) -> usize {
        POINTMASS_STATE_DIM
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn state(&self) -> Vec<f64> {
        self.state.to_vec()
    }

    fn global_t(&self) -> u64 {
        self.t
    }

    fn segment_index(&self) -> usize {
        self.seg_idx
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        self.state = Self::dynamics(&self.params, &self.state, action);
        let reward = locomotion_reward(&self.state, self.active_target());
        let stuck = self.state[1] < self.params.z_sink;
        self.t += 1;
        let new_seg = self.schedule.active(self.t);
        let segment_changed = new_seg != self.seg_idx;
        self.seg_idx = new_seg;
        StepResult {
            next_state: self.state.to_vec(),
            reward,
            stuck,
            segment_changed,
        }
    }

    fn planning_reward(&self) -> RewardFn {
        let target = self.active_target();
        Arc::new(move |_s: &[f64], _a: &[f64], s_next: &[f64]| {
            locomotion_reward(s_next, target)
        })
    }

    fn ideal_next(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        Self::dynamics(&self.params, s, a).to_vec()
    }

    fn performance(&self, window: &[Vec<f64>]) -> Option<f64> {
        Some(PerformanceSpec::hopper_form(self.active_target()).performance(window))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mk(targets: &[f64], period: u64) -> PointMass {
        PointMass::new(MdpSchedule::velocity_cycle(targets, period, 10_000))
    }

    #[test]
    fn reward_closed_form() {
        // both penalty terms vanish
        assert_eq!(locomotion_reward(&[0.0, 1.3, 0.7, 0.0], 0.7), 0.7);
        // single height term (z one unit above the setpoint)
        assert!((locomotion_reward(&[0.0, 2.3, 0.0, 0.0], 0.0) - (-5.0)).abs() < 1e-12);
    }

    #[test]
    fn target_changes_at_exact_boundaries() {
        let mut env = mk(&[0.0, 1.0, -1.0, 2.0, -1.0], 1000);
        let mut switches = Vec::new();
        for t in 0..4001u64 {
            let before = env.active_target();
            let r = env.step(&[0.0, 0.667]);
            if r.segment_changed {
                switches.push((t, before, env.active_target()));
            }
        }
        let times: Vec<u64> = switches.iter().map(|x| x.0).collect();
        assert_eq!(times, vec![999, 1999, 2999, 3999]);
        let targets: Vec<f64> = switches.iter().map(|x| x.2).collect();
        assert_eq!(targets, vec![1.0, -1.0, 2.0, -1.0]);
    }

    #[test]
    fn hover_thrust_keeps_agent_alive() {
        let mut env = mk(&[0.0], 1000);
        for _ in 0..2000 {
            let r = env.step(&[0.0, 0.667]);
            assert!(!r.stuck);
        }
        let s = env.state();
        assert!(s[1] > 0.5 && s[1] < 2.0, "z drifted to {}", s[1]);
    }

    #[test]
    fn sink_is_absorbing_under_exhaustive_action_probes() {
        // From any sunk state, no action ever raises z.
        let params = PointMassParams::default();
        for z0 in [0.0, 0.1, 0.25, 0.29] {
            for zv0 in [-1.0, 0.0, 0.5, 2.0] {
                let mut grid = Vec::new();
                for i in 0..9 {
                    for j in 0..9 {
                        grid.push([i as f64 / 4.0 - 1.0, j as f64 / 4.0 - 1.0]);
                    }
                }
                for a in grid {
                    let s = [0.0, z0, 0.0, zv0];
                    let next = PointMass::dynamics(&params, &s, &a);
                    assert!(
                        next[1] <= z0 + 1e-12,
                        "z rose from {z0} to {} under action {a:?}",
                        next[1]
                    );
                }
            }
        }
    }

    #[test]
    fn sunk_agent_never_recovers() {
        let mut env = mk(&[1.0], 1000);
        env.set_state(&[0.0, 0.2, 0.0, 0.0]);
        for _ in 0..500 {
            let r = env.step(&[1.0, 1.0]); // full thrust, no effect on z
            assert!(r.stuck);
        }
        assert!(env.state()[1] < 0.01);
    }

    #[test]
    fn x_wraps_to_stay_bounded() {
        let mut env = mk(&[2.0], 100_000);
        for _ in 0..50_000 {
            env.step(&[1.0, 0.667]);
        }
        let s = env.state();
        assert!(s[0].abs() <= 8.0);
    }
}
