//! Transition ring buffers and their on-disk format.
//!
//! File layout: magic `LRBF`, version u32, state/action/skill dims (u32
//! each), transition count u64, then packed little-endian f32 records in
//! `(s, a, z, r, s')` order. Loader errors carry the byte offset of the
//! first corrupt field.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

pub const REPLAY_MAGIC: &[u8; 4] = b"LRBF";
pub const REPLAY_VERSION: u32 = 1;

/// One environment or model step. The skill vector is empty for data
/// collected without skills.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub skill: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt replay file at byte offset {offset}: {what}")]
    Corrupt { offset: u64, what: String },
    #[error("transition dims ({state}, {action}, {skill}) do not match buffer ({bstate}, {baction}, {bskill})")]
    DimMismatch {
        state: usize,
        action: usize,
        skill: usize,
        bstate: usize,
        baction: usize,
        bskill: usize,
    },
}

/// Fixed-capacity ring buffer with FIFO eviction and uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    state_dim: usize,
    action_dim: usize,
    skill_dim: usize,
    capacity: usize,
    cursor: usize,
    data: Vec<Transition>,
}

impl ReplayBuffer {
    pub fn new(state_dim: usize, action_dim: usize, skill_dim: usize, capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            state_dim,
            action_dim,
            skill_dim,
            capacity,
            cursor: 0,
            data: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn skill_dim(&self) -> usize {
        self.skill_dim
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.data.iter()
    }

    pub fn push(&mut self, t: Transition) -> Result<(), ReplayError> {
        if t.state.len() != self.state_dim
            || t.action.len() != self.action_dim
            || t.skill.len() != self.skill_dim
        {
            return Err(ReplayError::DimMismatch {
                state: t.state.len(),
                action: t.action.len(),
                skill: t.skill.len(),
                bstate: self.state_dim,
                baction: self.action_dim,
                bskill: self.skill_dim,
            });
        }
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.cursor] = t;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
        Ok(())
    }

    /// Uniform index over current contents.
    pub fn sample_index(&self, rng: &mut impl Rng) -> usize {
        assert!(!self.is_empty(), "sampling from empty replay buffer");
        rng.gen_range(0..self.data.len())
    }

    pub fn sample_indices(&self, rng: &mut impl Rng, n: usize) -> Vec<usize> {
        (0..n).map(|_| self.sample_index(rng)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), ReplayError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(REPLAY_MAGIC)?;
        w.write_all(&REPLAY_VERSION.to_le_bytes())?;
        w.write_all(&(self.state_dim as u32).to_le_bytes())?;
        w.write_all(&(self.action_dim as u32).to_le_bytes())?;
        w.write_all(&(self.skill_dim as u32).to_le_bytes())?;
        w.write_all(&(self.data.len() as u64).to_le_bytes())?;
        for t in &self.data {
            for &v in t.state.iter().chain(&t.action).chain(&t.skill) {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
            w.write_all(&(t.reward as f32).to_le_bytes())?;
            for &v in &t.next_state {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a file into a fresh buffer whose capacity is at least the file's
    /// transition count.
    pub fn load(path: &Path, capacity: usize) -> Result<Self, ReplayError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut offset = 0u64;

        let mut magic = [0u8; 4];
        read_at(&mut r, &mut magic, &mut offset, "magic")?;
        if &magic != REPLAY_MAGIC {
            return Err(ReplayError::Corrupt {
                offset: 0,
                what: "bad magic bytes".into(),
            });
        }
        let version = read_u32_at(&mut r, &mut offset, "version")?;
        if version != REPLAY_VERSION {
            return Err(ReplayError::Corrupt {
                offset: 4,
                what: format!("unsupported version {version}"),
            });
        }
        let state_dim = read_u32_at(&mut r, &mut offset, "state_dim")? as usize;
        let action_dim = read_u32_at(&mut r, &mut offset, "action_dim")? as usize;
        let skill_dim = read_u32_at(&mut r, &mut offset, "skill_dim")? as usize;
        let count = {
            let mut buf = [0u8; 8];
            read_at(&mut r, &mut buf, &mut offset, "count")?;
            u64::from_le_bytes(buf) as usize
        };
        if state_dim == 0 || state_dim > 4096 || action_dim > 4096 || skill_dim > 4096 {
            return Err(ReplayError::Corrupt {
                offset: 8,
                what: format!("implausible dims ({state_dim}, {action_dim}, {skill_dim})"),
            });
        }

        let mut buf = ReplayBuffer::new(state_dim, action_dim, skill_dim, capacity.max(count).max(1));
        let rec = state_dim + action_dim + skill_dim + 1 + state_dim;
        let mut floats = vec![0f32; rec];
        for _ in 0..count {
            for (k, slot) in floats.iter_mut().enumerate() {
                let mut b = [0u8; 4];
                read_at(&mut r, &mut b, &mut offset, &format!("record field {k}"))?;
                *slot = f32::from_le_bytes(b);
            }
            let mut it = floats.iter().map(|&v| v as f64);
            let state: Vec<f64> = it.by_ref().take(state_dim).collect();
            let action: Vec<f64> = it.by_ref().take(action_dim).collect();
            let skill: Vec<f64> = it.by_ref().take(skill_dim).collect();
            let reward = it.next().unwrap();
            let next_state: Vec<f64> = it.by_ref().take(state_dim).collect();
            buf.push(Transition {
                state,
                action,
                skill,
                reward,
                next_state,
            })
            .expect("dims are consistent by construction");
        }
        Ok(buf)
    }
}

fn read_at(
    r: &mut impl Read,
    buf: &mut [u8],
    offset: &mut u64,
    what: &str,
) -> Result<(), ReplayError> {
    match r.read_exact(buf) {
        Ok(()) => {
            *offset += buf.len() as u64;
            Ok(())
        }
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(ReplayError::Corrupt {
            offset: *offset,
            what: format!("truncated while reading {what}"),
        }),
        Err(e) => Err(e.into()),
    }
}

fn read_u32_at(r: &mut impl Read, offset: &mut u64, what: &str) -> Result<u32, ReplayError> {
    let mut buf = [0u8; 4];
    read_at(r, &mut buf, offset, what)?;
    Ok(u32::from_le_bytes(buf))
}
