//! Continuous 2D crafting environment.
//!
//! Four interactive tiles (wood, craft table, stone, iron) on an 8x8 arena.
//! The agent holds up to one of each item; rewards double with each tier of
//! the crafting hierarchy. Mining and crafting consume prerequisites:
//!
//!   wood (free) -> stick (consumes wood) -> wooden pickaxe (wood + stick)
//!   -> stone (consumes wooden pickaxe) -> stone pickaxe (stone + stick)
//!   -> iron (consumes stone pickaxe, maximum reward)

use std::sync::Arc;

use super::{EnvKind, Environment, MdpSchedule, RewardFn, StepResult};

pub const MINECRAFT_STATE_DIM: usize = 16;
const ARENA: f64 = 8.0;
const STEP_SCALE: f64 = 0.5;

/// Inventory slot indices; tier k pays reward 2^(k-1).
pub mod item {
    pub const WOOD: usize = 0;
    pub const STICK: usize = 1;
    pub const WOODEN_PICKAXE: usize = 2;
    pub const STONE: usize = 3;
    pub const STONE_PICKAXE: usize = 4;
    pub const IRON: usize = 5;
}

pub const NUM_ITEMS: usize = 6;

/// Reward for obtaining the item with inventory index `idx` (tier idx+1).
pub fn tier_reward(idx: usize) -> f64 {
    (1u64 << idx) as f64
}

pub type Inventory = [bool; NUM_ITEMS];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tile {
    Wood,
    CraftTable,
    Stone,
    Iron,
}

/// Block tile centers: wood bottom-left, craft table bottom-right, stone
/// top-left, iron top-right.
pub const BLOCKS: [(Tile, [f64; 2]); 4] = [
    (Tile::Wood, [1.5, 1.5]),
    (Tile::CraftTable, [6.5, 1.5]),
    (Tile::Stone, [1.5, 6.5]),
    (Tile::Iron, [6.5, 6.5]),
];

/// Applies one tile interaction to an inventory. Returns the reward gained.
/// Unmet prerequisites are a no-op with zero reward. The craft table crafts
/// everything possible, highest tier first.
pub fn resolve_tile(inv: &mut Inventory, tile: Tile) -> f64 {
    use item::*;
    let mut reward = 0.0;
    match tile {
        Tile::Wood => {
            if !inv[WOOD] {
                inv[WOOD] = true;
                reward += tier_reward(WOOD);
            }
        }
        Tile::Stone => {
            if inv[WOODEN_PICKAXE] && !inv[STONE] {
                inv[WOODEN_PICKAXE] = false;
                inv[STONE] = true;
                reward += tier_reward(STONE);
            }
        }
        Tile::Iron => {
            if inv[STONE_PICKAXE] && !inv[IRON] {
                inv[STONE_PICKAXE] = false;
                inv[IRON] = true;
                reward += tier_reward(IRON);
            }
        }
        Tile::CraftTable => loop {
            if inv[STONE] && inv[STICK] && !inv[STONE_PICKAXE] {
                inv[STONE] = false;
                inv[STICK] = false;
                inv[STONE_PICKAXE] = true;
                reward += tier_reward(STONE_PICKAXE);
            } else if inv[WOOD] && inv[STICK] && !inv[WOODEN_PICKAXE] {
                inv[WOOD] = false;
                inv[STICK] = false;
                inv[WOODEN_PICKAXE] = true;
                reward += tier_reward(WOODEN_PICKAXE);
            } else if inv[WOOD] && !inv[STICK] {
                inv[WOOD] = false;
                inv[STICK] = true;
                reward += tier_reward(STICK);
            } else {
                break;
            }
        },
    }
    reward
}

pub struct Minecraft {
    schedule: MdpSchedule,
    t: u64,
    seg_idx: usize,
    agent: [f64; 2],
    inv: Inventory,
}

#[inline]
fn tile_index_at(p: &[f64]) -> Option<Tile> {
    let tx = p[0].min(ARENA - 1e-9).floor();
    let ty = p[1].min(ARENA - 1e-9).floor();
    for (tile, c) in BLOCKS {
        if (c[0] - 0.5 - tx).abs() < 1e-9 && (c[1] - 0.5 - ty).abs() < 1e-9 {
            return Some(tile);
        }
    }
    None
}

impl Minecraft {
    pub fn new(schedule: MdpSchedule) -> Self {
        Minecraft {
            schedule,
            t: 0,
            seg_idx: 0,
            agent: [4.0, 4.0],
            inv: [false; NUM_ITEMS],
        }
    }

    pub fn inventory(&self) -> &Inventory {
        &self.inv
    }

    fn compose_state(agent: &[f64; 2], inv: &Inventory) -> Vec<f64> {
        let mut s = Vec::with_capacity(MINECRAFT_STATE_DIM);
        s.extend_from_slice(agent);
        for (_, c) in BLOCKS {
            s.extend_from_slice(&c);
        }
        s.extend(inv.iter().map(|&b| if b { 1.0 } else { 0.0 }));
        s
    }

    fn advance(agent: &[f64; 2], action: &[f64]) -> [f64; 2] {
        let ax = action[0].clamp(-1.0, 1.0);
        let ay = action[1].clamp(-1.0, 1.0);
        [
            (agent[0] + STEP_SCALE * ax).clamp(0.0, ARENA),
            (agent[1] + STEP_SCALE * ay).clamp(0.0, ARENA),
        ]
    }
}

impl Environment for Minecraft {
    fn kind(&self) -> EnvKind {
        EnvKind::Minecraft
    }

    fn state_dim(&self) -> usize {
        MINECRAFT_STATE_DIM
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn state(&self) -> Vec<f64> {
        Self::compose_state(&self.agent, &self.inv)
    }

    fn global_t(&self) -> u64 {
        self.t
    }

    fn segment_index(&self) -> usize {
        self.seg_idx
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        self.agent = Self::advance(&self.agent, action);
        let reward = match tile_index_at(&self.agent) {
            Some(tile) => resolve_tile(&mut self.inv, tile),
            None => 0.0,
        };
        self.t += 1;
        let new_seg = self.schedule.active(self.t);
        let segment_changed = new_seg != self.seg_idx;
        self.seg_idx = new_seg;
        StepResult {
            next_state: self.state(),
            reward,
            stuck: false,
            segment_changed,
        }
    }

    fn planning_reward(&self) -> RewardFn {
        // Reward for newly-obtained items, readable off predicted inventory
        // bits: positive inventory deltas weighted by tier value.
        Arc::new(|s: &[f64], _a: &[f64], s_next: &[f64]| {
            let mut r = 0.0;
            for k in 0..NUM_ITEMS {
                let delta = s_next[10 + k] - s[10 + k];
                if delta > 0.0 {
                    r += tier_reward(k) * delta.min(1.0);
                }
            }
            r
        })
    }

    fn ideal_next(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let agent = [s[0], s[1]];
        let next = Self::advance(&agent, a);
        let mut inv: Inventory = [false; NUM_ITEMS];
        for k in 0..NUM_ITEMS {
            inv[k] = s[10 + k] > 0.5;
        }
        if let Some(tile) = tile_index_at(&next) {
            resolve_tile(&mut inv, tile);
        }
        Self::compose_state(&next, &inv)
    }

    fn performance(&self, _window: &[Vec<f64>]) -> Option<f64> {
        None
    }
}

/// Highest tier (1-based) present in an inventory bit vector, 0 if empty.
pub fn best_tier(inv_bits: &[f64]) -> usize {
    let mut best = 0;
    for (k, &b) in inv_bits.iter().enumerate().take(NUM_ITEMS) {
        if b > 0.5 {
            best = best.max(k + 1);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::item::*;
    use super::*;
    use crate::env::RewardSpec;

    #[test]
    fn empty_inventory_at_stone_is_noop() {
        let mut inv: Inventory = [false; NUM_ITEMS];
        let r = resolve_tile(&mut inv, Tile::Stone);
        assert_eq!(r, 0.0);
        assert_eq!(inv, [false; NUM_ITEMS]);
    }

    #[test]
    fn wood_and_stick_craft_wooden_pickaxe() {
        let mut inv: Inventory = [false; NUM_ITEMS];
        inv[WOOD] = true;
        inv[STICK] = true;
        let r = resolve_tile(&mut inv, Tile::CraftTable);
        assert_eq!(r, 4.0); // tier-3 magnitude
        assert!(!inv[WOOD] && !inv[STICK] && inv[WOODEN_PICKAXE]);
    }

    #[test]
    fn holding_wood_at_wood_block_is_noop() {
        let mut inv: Inventory = [false; NUM_ITEMS];
        inv[WOOD] = true;
        let r = resolve_tile(&mut inv, Tile::Wood);
        assert_eq!(r, 0.0);
        assert!(inv[WOOD]);
    }

    #[test]
    fn iron_requires_and_consumes_stone_pickaxe() {
        let mut inv: Inventory = [false; NUM_ITEMS];
        inv[STONE_PICKAXE] = true;
        let r = resolve_tile(&mut inv, Tile::Iron);
        assert_eq!(r, 32.0); // maximum reward in the environment
        assert!(!inv[STONE_PICKAXE] && inv[IRON]);
        // second visit: already holds iron
        inv[STONE_PICKAXE] = true;
        assert_eq!(resolve_tile(&mut inv, Tile::Iron), 0.0);
        assert!(inv[STONE_PICKAXE]);
    }

    #[test]
    fn full_progression_reaches_iron() {
        // Scripted walk through the six-step hierarchy.
        let mut inv: Inventory = [false; NUM_ITEMS];
        let mut log: Vec<usize> = Vec::new();
        let mut total = 0.0;
        let mut visit = |inv: &mut Inventory, tile: Tile, log: &mut Vec<usize>| {
            let before = *inv;
            let r = resolve_tile(inv, tile);
            for k in 0..NUM_ITEMS {
                if inv[k] && !before[k] {
                    log.push(k);
                }
            }
            r
        };
        total += visit(&mut inv, Tile::Wood, &mut log);
        total += visit(&mut inv, Tile::CraftTable, &mut log); // stick
        total += visit(&mut inv, Tile::Wood, &mut log);
        total += visit(&mut inv, Tile::CraftTable, &mut log); // wooden pickaxe
        total += visit(&mut inv, Tile::Stone, &mut log);
        total += visit(&mut inv, Tile::Wood, &mut log);
        total += visit(&mut inv, Tile::CraftTable, &mut log); // stick
        total += visit(&mut inv, Tile::CraftTable, &mut log); // stone pickaxe
        total += visit(&mut inv, Tile::Iron, &mut log);
        assert!(inv[IRON]);
        assert_eq!(total, 1.0 + 2.0 + 1.0 + 4.0 + 8.0 + 1.0 + 2.0 + 16.0 + 32.0);
        // prerequisite structure: iron only after a stone-pickaxe craft
        let iron_at = log.iter().position(|&k| k == IRON).unwrap();
        let spick_at = log.iter().position(|&k| k == STONE_PICKAXE).unwrap();
        assert!(spick_at < iron_at);
    }

    #[test]
    fn env_step_interacts_with_tiles() {
        let mut env = Minecraft::new(MdpSchedule::single(RewardSpec::CraftingTiers, 1000));
        env.agent = [1.6, 1.6]; // on the wood tile
        let r = env.step(&[0.0, 0.0]);
        assert_eq!(r.reward, 1.0);
        assert_eq!(r.next_state[10 + WOOD], 1.0);
        // ideal_next agrees with step
        let s = env.state();
        let predicted = env.ideal_next(&s, &[0.3, -0.1]);
        let r2 = env.step(&[0.3, -0.1]);
        assert_eq!(predicted, r2.next_state);
    }

    #[test]
    fn inventory_stays_binary_under_random_walk() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut env = Minecraft::new(MdpSchedule::single(RewardSpec::CraftingTiers, 100_000));
        for _ in 0..5000 {
            let a = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let r = env.step(&a);
            for k in 0..NUM_ITEMS {
                let v = r.next_state[10 + k];
                assert!(v == 0.0 || v == 1.0);
            }
        }
    }
}
