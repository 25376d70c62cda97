//! Checkpoint container.
//!
//! Layout: magic bytes `LISP`, format version (u32 LE), then one record per
//! unit until EOF. Each record is `[name_len u32][name utf8][n_widths u32]`
//! `[widths u32 ...]` followed by the raw little-endian f32 parameter block in
//! declaration order. For a unit with two or more widths the block length is
//! the MLP parameter count implied by the widths (weights then bias per
//! layer); a single-width unit is a flat vector of `widths[0]` floats, used
//! for normalizer statistics, variance bounds, and temperatures.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::nn::mlp::Mlp;

pub const MAGIC: &[u8; 4] = b"LISP";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes (not a checkpoint file)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint is missing unit `{0}`")]
    MissingUnit(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointUnit {
    pub name: String,
    pub widths: Vec<u32>,
    pub data: Vec<f32>,
}

impl CheckpointUnit {
    pub fn from_mlp(name: &str, net: &Mlp) -> Self {
        CheckpointUnit {
            name: name.to_string(),
            widths: net.widths().iter().map(|&w| w as u32).collect(),
            data: net.params_f32(),
        }
    }

    pub fn vector(name: &str, data: Vec<f32>) -> Self {
        CheckpointUnit {
            name: name.to_string(),
            widths: vec![data.len() as u32],
            data,
        }
    }

    pub fn scalar(name: &str, v: f64) -> Self {
        Self::vector(name, vec![v as f32])
    }

    pub fn expected_len(widths: &[u32]) -> usize {
        if widths.len() == 1 {
            widths[0] as usize
        } else {
            widths
                .windows(2)
                .map(|p| (p[0] as usize) * (p[1] as usize) + p[1] as usize)
                .sum()
        }
    }

    /// Loads this unit's parameters into an MLP with matching widths.
    pub fn into_mlp(&self, net: &mut Mlp) -> Result<(), CheckpointError> {
        let widths: Vec<u32> = net.widths().iter().map(|&w| w as u32).collect();
        if widths != self.widths {
            return Err(CheckpointError::Malformed(format!(
                "unit `{}` widths {:?} do not match network {:?}",
                self.name, self.widths, widths
            )));
        }
        net.load_params_f32(&self.data)
            .map_err(CheckpointError::Malformed)
    }
}

pub fn write_checkpoint(path: &Path, units: &[CheckpointUnit]) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for u in units {
        let name = u.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(u.widths.len() as u32).to_le_bytes())?;
        for &width in &u.widths {
            w.write_all(&width.to_le_bytes())?;
        }
        let expected = CheckpointUnit::expected_len(&u.widths);
        assert_eq!(
            u.data.len(),
            expected,
            "unit `{}` data length {} != {} implied by widths",
            u.name,
            u.data.len(),
            expected
        );
        for &v in &u.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<CheckpointUnit>, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let mut units = Vec::new();
    loop {
        let name_len = match read_u32(&mut r) {
            Ok(n) => n as usize,
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        };
        if name_len > 4096 {
            return Err(CheckpointError::Malformed(format!(
                "unit name length {name_len} is implausible"
            )));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::Malformed("unit name is not utf-8".into()))?;
        let n_widths = read_u32(&mut r)? as usize;
        if n_widths == 0 || n_widths > 64 {
            return Err(CheckpointError::Malformed(format!(
                "unit `{name}` has {n_widths} widths"
            )));
        }
        let mut widths = Vec::with_capacity(n_widths);
        for _ in 0..n_widths {
            widths.push(read_u32(&mut r)?);
        }
        let n = CheckpointUnit::expected_len(&widths);
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 4];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f32::from_le_bytes(buf));
        }
        units.push(CheckpointUnit { name, widths, data });
    }
    Ok(units)
}

/// Looks a unit up by name.
pub fn find_unit<'a>(
    units: &'a [CheckpointUnit],
    name: &str,
) -> Result<&'a CheckpointUnit, CheckpointError> {
    units
        .iter()
        .find(|u| u.name == name)
        .ok_or_else(|| CheckpointError::MissingUnit(name.to_string()))
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::Activation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_preserves_forward_outputs_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.lisp");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Mlp::new(&[4, 16, 16, 3], Activation::Tanh, &mut rng);
        let units = vec![
            CheckpointUnit::from_mlp("policy", &net),
            CheckpointUnit::vector("norm.mean", vec![1.0, 2.0, 3.0, 4.0]),
            CheckpointUnit::scalar("policy.log_alpha", -0.7),
        ];
        write_checkpoint(&path, &units).unwrap();
        let loaded = read_checkpoint(&path).unwrap();
        assert_eq!(units, loaded);

        let mut net2 = Mlp::zeros(&[4, 16, 16, 3], Activation::Tanh);
        find_unit(&loaded, "policy").unwrap().into_mlp(&mut net2).unwrap();
        let mut probe_rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| probe_rng.gen_range(-2.0..2.0)).collect();
            assert_eq!(net.forward(&x), net2.forward(&x));
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.lisp");
        std::fs::write(&path, b"NOPE____junk").unwrap();
        assert!(matches!(
            read_checkpoint(&path),
            Err(CheckpointError::BadMagic)
        ));
    }
}
