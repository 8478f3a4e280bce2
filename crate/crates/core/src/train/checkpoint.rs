//! Checkpoint files.
//!
//! ```text
//! magic     b"ECGCKPT\0"
//! version   u32
//! config    u32 length + UTF-8 TOML (encoder config, then the run config echo)
//! seed      u64
//! groups    u8 count, each: u8 tag (0 encoder, 1 head, 2 best encoder),
//!           u32 tensors, each: u16 name length, name, u8 ndim, u64 dims, f64 data
//! state     u8 present; if 1: u64 next epoch, u64 optimizer step,
//!           f64 moments (m then v, in parameter order), early-stopping
//!           (u64 patience, f64 best, u64 best epoch + 1 or 0, u64 bad epochs),
//!           u32 history rows of (f64 lr, f64 train loss, f64 val loss)
//! sha256    [u8; 32] over everything before it
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::optim::{EarlyStopping, OptimizerState};
use crate::autodiff::{ParamStore, Tensor};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ECGCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

const TAG_ENCODER: u8 = 0;
const TAG_HEAD: u8 = 1;
const TAG_BEST: u8 = 2;

/// One row of the per-epoch training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Everything needed to continue an interrupted run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub next_epoch: usize,
    pub optimizer: OptimizerState,
    pub early: EarlyStopping,
    pub best: ParamStore,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder_config: EncoderConfig,
    /// Free-form TOML describing the run that produced the checkpoint.
    pub run_config: String,
    pub seed: u64,
    pub encoder: ParamStore,
    pub head: Option<ParamStore>,
    pub state: Option<TrainState>,
}

#[derive(Serialize, Deserialize)]
struct ConfigEcho {
    encoder: EncoderConfig,
    run: String,
}

impl Checkpoint {
    pub fn from_encoder(encoder: &Encoder, run_config: impl Into<String>) -> Self {
        Self {
            encoder_config: encoder.config().clone(),
            run_config: run_config.into(),
            seed: encoder.seed(),
            encoder: encoder.params().clone(),
            head: None,
            state: None,
        }
    }

    pub fn encoder(&self) -> Result<Encoder> {
        Encoder::from_params(&self.encoder_config, self.seed, self.encoder.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let echo = toml::to_string(&ConfigEcho { encoder: self.encoder_config.clone(), run: self.run_config.clone() })
            .map_err(|e| Error::Malformed(format!("cannot encode config: {e}")))?;
        put_u32(&mut buf, len_u32(echo.len())?);
        buf.extend_from_slice(echo.as_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());

        let mut groups = vec![(TAG_ENCODER, &self.encoder)];
        if let Some(h) = &self.head {
            groups.push((TAG_HEAD, h));
        }
        if let Some(s) = &self.state {
            groups.push((TAG_BEST, &s.best));
        }
        buf.push(groups.len() as u8);
        for (tag, store) in groups {
            buf.push(tag);
            put_u32(&mut buf, len_u32(store.len())?);
            for (name, t) in store.iter() {
                let name = name.as_bytes();
                buf.extend_from_slice(&u16::try_from(name.len()).map_err(|_| Error::Malformed("name too long".into()))?.to_le_bytes());
                buf.extend_from_slice(name);
                buf.push(t.ndim() as u8);
                for &d in t.shape() {
                    buf.extend_from_slice(&(d as u64).to_le_bytes());
                }
                put_f64s(&mut buf, t.data());
            }
        }

        match &self.state {
            None => buf.push(0),
            Some(s) => {
                buf.push(1);
                buf.extend_from_slice(&(s.next_epoch as u64).to_le_bytes());
                buf.extend_from_slice(&s.optimizer.step.to_le_bytes());
                for m in s.optimizer.m.iter().chain(&s.optimizer.v) {
                    put_f64s(&mut buf, m);
                }
                buf.extend_from_slice(&(s.early.patience as u64).to_le_bytes());
                buf.extend_from_slice(&s.early.best.to_le_bytes());
                buf.extend_from_slice(&s.early.best_epoch.map_or(0, |e| e as u64 + 1).to_le_bytes());
                buf.extend_from_slice(&(s.early.bad_epochs as u64).to_le_bytes());
                put_u32(&mut buf, len_u32(s.history.len())?);
                for r in &s.history {
                    buf.extend_from_slice(&(r.epoch as u64).to_le_bytes());
                    put_f64s(&mut buf, &[r.lr, r.train_loss, r.val_loss]);
                }
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::BadMagic { path: Default::default(), expected: "checkpoint" });
        }
        if bytes.len() < 12 + 32 {
            return Err(Error::Truncated(format!("checkpoint is only {} bytes", bytes.len())));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
        }
        let (payload, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(payload).as_slice() != digest {
            return Err(Error::ChecksumMismatch);
        }
        let mut r = Cursor { buf: payload, pos: 12 };
        let echo_len = r.u32()? as usize;
        let echo = std::str::from_utf8(r.take(echo_len)?).map_err(|_| Error::Malformed("config echo is not UTF-8".into()))?;
        let echo: ConfigEcho = toml::from_str(echo).map_err(|e| Error::Malformed(format!("config echo: {e}")))?;
        let seed = r.u64()?;

        let mut encoder = None;
        let mut head = None;
        let mut best = None;
        for _ in 0..r.u8()? {
            let tag = r.u8()?;
            let count = r.u32()? as usize;
            let mut store = ParamStore::new();
            for _ in 0..count {
                let nlen = r.u16()? as usize;
                let name = std::str::from_utf8(r.take(nlen)?)
                    .map_err(|_| Error::Malformed("parameter name is not UTF-8".into()))?
                    .to_string();
                let ndim = r.u8()? as usize;
                let shape = (0..ndim).map(|_| Ok(r.u64()? as usize)).collect::<Result<Vec<_>>>()?;
                let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Malformed("tensor too large".into()))?;
                let data = r.f64s(n)?;
                store.add(name, Tensor::new(shape, data)?);
            }
            match tag {
                TAG_ENCODER => encoder = Some(store),
                TAG_HEAD => head = Some(store),
                TAG_BEST => best = Some(store),
                t => return Err(Error::Malformed(format!("unknown parameter group {t}"))),
            }
        }
        let encoder = encoder.ok_or_else(|| Error::Malformed("checkpoint has no encoder parameters".into()))?;

        let state = match r.u8()? {
            0 => None,
            1 => {
                let next_epoch = r.u64()? as usize;
                let step = r.u64()?;
                let lens: Vec<usize> = encoder.tensors().iter().map(Tensor::len).collect();
                let m = lens.iter().map(|&n| r.f64s(n)).collect::<Result<Vec<_>>>()?;
                let v = lens.iter().map(|&n| r.f64s(n)).collect::<Result<Vec<_>>>()?;
                let patience = r.u64()? as usize;
                let best_loss = r.f64()?;
                let best_epoch = r.u64()?.checked_sub(1).map(|e| e as usize);
                let bad_epochs = r.u64()? as usize;
                let rows = r.u32()? as usize;
                let history = (0..rows)
                    .map(|_| {
                        let epoch = r.u64()? as usize;
                        let v = r.f64s(3)?;
                        Ok(EpochRecord { epoch, lr: v[0], train_loss: v[1], val_loss: v[2] })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(TrainState {
                    next_epoch,
                    optimizer: OptimizerState { step, m, v },
                    early: EarlyStopping { patience, best: best_loss, best_epoch, bad_epochs },
                    best: best.ok_or_else(|| Error::Malformed("training state without best parameters".into()))?,
                    history,
                })
            }
            f => return Err(Error::Malformed(format!("bad state flag {f}"))),
        };
        if r.pos != payload.len() {
            return Err(Error::Malformed(format!("{} trailing bytes", payload.len() - r.pos)));
        }
        let ckpt = Self { encoder_config: echo.encoder, run_config: echo.run, seed, encoder, head, state };
        ckpt.encoder()?;
        Ok(ckpt)
    }

    /// Writes atomically: a temporary sibling is renamed over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?).map_err(|e| Error::io_at(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io_at(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io_at(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::BadMagic { expected, .. } => Error::BadMagic { path: path.to_path_buf(), expected },
            other => other,
        })
    }

    /// Parameter counts per module, as reported by `inspect`.
    pub fn module_counts(&self) -> Vec<(String, usize)> {
        let mut out = self.encoder_config.module_counts();
        if let Some(h) = &self.head {
            out.push(("head".into(), h.count()));
        }
        out
    }
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Malformed(format!("{n} entries do not fit the format")))
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, v: &[f64]) {
    buf.reserve(v.len() * 8);
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Truncated(format!("checkpoint ends at {} bytes, needed {} more at {}", self.buf.len(), n, self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Malformed("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let enc = Encoder::build(&EncoderConfig::preset("tiny").unwrap(), 11).unwrap();
        let mut ck = Checkpoint::from_encoder(&enc, "[pretrain]\nepochs = 3\n");
        let mut head = ParamStore::new();
        head.add("head.weight", Tensor::new(vec![1, 32], (0..32).map(|i| i as f64 * 0.25).collect()).unwrap());
        head.add("head.bias", Tensor::new(vec![1], vec![-0.5]).unwrap());
        ck.head = Some(head);
        let mut opt = OptimizerState::new(enc.params().tensors());
        opt.step = 7;
        opt.m[0][3] = 0.125;
        opt.v[2][0] = f64::MIN_POSITIVE;
        ck.state = Some(TrainState {
            next_epoch: 2,
            optimizer: opt,
            early: EarlyStopping { patience: 20, best: 3.5, best_epoch: Some(1), bad_epochs: 0 },
            best: enc.params().clone(),
            history: vec![EpochRecord { epoch: 0, lr: 1e-3, train_loss: 4.0, val_loss: 3.9 }],
        });
        ck
    }

    #[test]
    fn round_trip_is_lossless() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        let bare = Checkpoint { head: None, state: None, ..ck };
        assert_eq!(Checkpoint::from_bytes(&bare.to_bytes().unwrap()).unwrap(), bare);
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let ck = sample();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);

        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::ChecksumMismatch)));

        let good = ck.to_bytes().unwrap();
        assert!(matches!(Checkpoint::from_bytes(&good[..30]), Err(Error::ChecksumMismatch | Error::Truncated(_))));
        let mut v = good.clone();
        v[8] = 2;
        assert!(matches!(Checkpoint::from_bytes(&v), Err(Error::VersionMismatch { found: 2, .. })));
        assert!(matches!(Checkpoint::load(&dir.path().join("missing")), Err(Error::Io(_))));
    }

    #[test]
    fn module_counts_include_head() {
        let counts = sample().module_counts();
        assert_eq!(counts.last().unwrap(), &("head".to_string(), 33));
    }
}
