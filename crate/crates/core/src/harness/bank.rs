//! Binary model-bank files.
//!
//! ```text
//! "ESNB" | version u32 = 1 | payload length u64 | payload | SHA-256(payload)
//!
//! payload (little-endian):
//!   mode u8 (0 cil, 1 dil, 2 xdcil)
//!   anchor f64 | lambda f64 | train_temperature f64
//!   omega length u32 | omega f64...
//!   head count u32, then per head:
//!     stage_id u16 | architecture u8 (0 linear, 1 mlp) | hidden u32 | dim u32
//!     label count u32 | labels u32... | parameter count u64 | parameters f64...
//! ```
//!
//! Floats are stored as raw bits, so a save/load cycle is bit-exact.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::StreamMode;
use crate::head::{Architecture, EnergyConfig, StageHead};
use crate::inference::ModelBank;
use crate::{Error, Result};

pub const BANK_MAGIC: [u8; 4] = *b"ESNB";
pub const BANK_VERSION: u32 = 1;

pub fn encode_bank(bank: &ModelBank) -> Vec<u8> {
    let mut p = Vec::new();
    p.push(match bank.mode() {
        StreamMode::Cil => 0u8,
        StreamMode::Dil => 1,
        StreamMode::Xdcil => 2,
    });
    let cfg = bank.cfg();
    for v in [cfg.anchor, cfg.lambda, cfg.train_temperature] {
        p.extend_from_slice(&v.to_le_bytes());
    }
    p.extend_from_slice(&(bank.omega().len() as u32).to_le_bytes());
    for t in bank.omega() {
        p.extend_from_slice(&t.to_le_bytes());
    }
    p.extend_from_slice(&(bank.heads().len() as u32).to_le_bytes());
    for h in bank.heads() {
        p.extend_from_slice(&h.stage_id().to_le_bytes());
        let (kind, hidden) = match h.architecture() {
            Architecture::Linear => (0u8, 0u32),
            Architecture::Mlp { hidden } => (1, hidden as u32),
        };
        p.push(kind);
        p.extend_from_slice(&hidden.to_le_bytes());
        p.extend_from_slice(&(h.dim() as u32).to_le_bytes());
        p.extend_from_slice(&(h.num_classes() as u32).to_le_bytes());
        for l in h.label_set() {
            p.extend_from_slice(&l.to_le_bytes());
        }
        p.extend_from_slice(&(h.params().len() as u64).to_le_bytes());
        for v in h.params() {
            p.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut out = Vec::with_capacity(p.len() + 48);
    out.extend_from_slice(&BANK_MAGIC);
    out.extend_from_slice(&BANK_VERSION.to_le_bytes());
    out.extend_from_slice(&(p.len() as u64).to_le_bytes());
    out.extend_from_slice(&p);
    out.extend_from_slice(&Sha256::digest(&p));
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::BankLoad(format!("truncated at byte {}", self.pos))),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Guards length prefixes against absurd allocations.
    fn count(&mut self, n: u64, elem: usize) -> Result<usize> {
        let remaining = (self.bytes.len() - self.pos) as u64;
        if n.saturating_mul(elem as u64) > remaining {
            return Err(Error::BankLoad(format!("length {n} at byte {} exceeds remaining data", self.pos)));
        }
        Ok(n as usize)
    }
}

pub fn decode_bank(bytes: &[u8]) -> Result<ModelBank> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4)?;
    if magic != BANK_MAGIC {
        return Err(Error::BankLoad(format!("bad magic {magic:02x?}")));
    }
    let version = c.u32()?;
    if version != BANK_VERSION {
        return Err(Error::BankLoad(format!("unsupported version {version}")));
    }
    let len = c.u64()?;
    let len = c.count(len, 1)?;
    let payload = c.take(len)?;
    let digest = c.take(32)?;
    if c.pos != bytes.len() {
        return Err(Error::BankLoad(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    if Sha256::digest(payload).as_slice() != digest {
        return Err(Error::BankLoad("checksum mismatch".into()));
    }

    let mut c = Cursor { bytes: payload, pos: 0 };
    let mode = match c.u8()? {
        0 => StreamMode::Cil,
        1 => StreamMode::Dil,
        2 => StreamMode::Xdcil,
        m => return Err(Error::BankLoad(format!("unknown mode tag {m}"))),
    };
    let cfg = EnergyConfig { anchor: c.f64()?, lambda: c.f64()?, train_temperature: c.f64()? };
    let n = c.u32()?;
    let n = c.count(n as u64, 8)?;
    let omega = (0..n).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
    let n_heads = c.u32()?;
    let n_heads = c.count(n_heads as u64, 1)?;
    let mut heads = Vec::with_capacity(n_heads);
    for _ in 0..n_heads {
        let stage_id = c.u16()?;
        let kind = c.u8()?;
        let hidden = c.u32()? as usize;
        let arch = match kind {
            0 => Architecture::Linear,
            1 => Architecture::Mlp { hidden },
            k => return Err(Error::BankLoad(format!("unknown architecture tag {k}"))),
        };
        let dim = c.u32()? as usize;
        let n_labels = c.u32()?;
        let n_labels = c.count(n_labels as u64, 4)?;
        let labels = (0..n_labels).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        let n_params = c.u64()?;
        let n_params = c.count(n_params, 8)?;
        let params = (0..n_params).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        heads.push(
            StageHead::from_parts(stage_id, labels, dim, arch, params)
                .map_err(|e| Error::BankLoad(format!("invalid head {stage_id}: {e}")))?,
        );
    }
    if c.pos != payload.len() {
        return Err(Error::BankLoad("payload has trailing bytes".into()));
    }
    cfg.validate().map_err(|e| Error::BankLoad(e.to_string()))?;
    ModelBank::from_parts(mode, cfg, heads, omega).map_err(|e| Error::BankLoad(e.to_string()))
}

/// Writes the bank through a temporary file and a rename.
pub fn save_bank(path: impl AsRef<Path>, bank: &ModelBank) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_bank(bank))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_bank(path: impl AsRef<Path>) -> Result<ModelBank> {
    decode_bank(&fs::read(path)?)
}
