//! Binary dataset container.
//!
//! ```text
//! magic      b"ECGCONT\0"
//! version    u32
//! kind       u8   (1 pretrain, 2 downstream)
//! task       u8   (0 none, 1 binary, 2 categorical, 3 regression)
//! classes    u16
//! lead       u8   (downstream lead, 0 for pretrain)
//! reserved   [u8; 3]
//! fs         f64
//! count      u64
//! offsets    u64 * count  (byte offset of each record from the file start)
//! records    ...
//! sha256     [u8; 32] over every preceding byte
//! ```
//!
//! Pretrain record: `subject u64, present u8 (bit i = covariate i),
//! values f64 * 7, leads u8, len u32, samples f32 * leads * len`.
//! Downstream record: `subject u64, label f64, len u32, samples f32 * len`.
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{DownstreamSample, DownstreamSet, EcgRecord, Label, PretrainSet, TaskKind};
use crate::error::{Error, Result};
use crate::risk::{Gender, MetadataRecord};
use crate::signal::{NoiseBank, NoiseCategory, NoiseSource};

const MAGIC: &[u8; 8] = b"ECGCONT\0";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 1 + 1 + 2 + 1 + 3 + 8 + 8;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContainerKind {
    Pretrain,
    Downstream,
}

/// Header fields of a container, read without decoding the records.
#[derive(Debug, Clone, PartialEq)]
pub struct ContainerSummary {
    pub kind: ContainerKind,
    pub version: u32,
    pub task: Option<TaskKind>,
    pub lead: u8,
    pub fs: f64,
    pub count: u64,
    pub sha256: String,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        self.buf.reserve(v.len() * 4);
        for x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Truncated(format!("needed {n} bytes at offset {}, file has {}", self.pos, self.buf.len()))
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
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Malformed("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

fn header(w: &mut Writer, kind: ContainerKind, task: Option<TaskKind>, lead: u8, fs: f64, count: usize) {
    w.buf.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.u8(match kind {
        ContainerKind::Pretrain => 1,
        ContainerKind::Downstream => 2,
    });
    w.u8(task.map_or(0, TaskKind::code));
    w.u16(match task {
        Some(TaskKind::Categorical(k)) => k,
        _ => 0,
    });
    w.u8(lead);
    w.buf.extend_from_slice(&[0; 3]);
    w.f64(fs);
    w.u64(count as u64);
}

fn finish(mut w: Writer, path: &Path) -> Result<()> {
    let digest = Sha256::digest(&w.buf);
    w.buf.extend_from_slice(&digest);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, &w.buf).map_err(|e| Error::io_at(path, e))?;
    Ok(())
}

fn encode_metadata(w: &mut Writer, m: &MetadataRecord) {
    let values = [
        m.age,
        m.gender.map(|g| if g == Gender::Female { 1.0 } else { 0.0 }),
        m.smoking.map(|b| b as u8 as f64),
        m.sbp,
        m.diabetes.map(|b| b as u8 as f64),
        m.total_cholesterol,
        m.hdl_cholesterol,
    ];
    let mut present = 0u8;
    for (i, v) in values.iter().enumerate() {
        if v.is_some() {
            present |= 1 << i;
        }
    }
    w.u8(present);
    for v in values {
        w.f64(v.unwrap_or(0.0));
    }
}

fn decode_metadata(r: &mut Reader) -> Result<MetadataRecord> {
    let present = r.u8()?;
    if present >> 7 != 0 {
        return Err(Error::Malformed(format!("bad presence mask {present:#010b}")));
    }
    let mut v = [None; 7];
    for (i, slot) in v.iter_mut().enumerate() {
        let x = r.f64()?;
        if present & (1 << i) != 0 {
            *slot = Some(x);
        }
    }
    let flag = |x: Option<f64>| -> Result<Option<bool>> {
        x.map(|x| match x {
            0.0 => Ok(false),
            1.0 => Ok(true),
            other => Err(Error::Malformed(format!("binary covariate holds {other}"))),
        })
        .transpose()
    };
    Ok(MetadataRecord {
        age: v[0],
        gender: flag(v[1])?.map(|f| if f { Gender::Female } else { Gender::Male }),
        smoking: flag(v[2])?,
        sbp: v[3],
        diabetes: flag(v[4])?,
        total_cholesterol: v[5],
        hdl_cholesterol: v[6],
    })
}

pub fn save_pretrain(set: &PretrainSet, path: &Path) -> Result<()> {
    let mut w = Writer { buf: Vec::new() };
    header(&mut w, ContainerKind::Pretrain, None, 0, set.fs, set.len());
    let index_at = w.buf.len();
    w.buf.resize(index_at + 8 * set.len(), 0);
    for (i, rec) in set.records.iter().enumerate() {
        rec.validate()?;
        let off = w.buf.len() as u64;
        w.buf[index_at + 8 * i..index_at + 8 * i + 8].copy_from_slice(&off.to_le_bytes());
        w.u64(rec.subject_id);
        encode_metadata(&mut w, &rec.metadata);
        let leads = u8::try_from(rec.leads.len()).map_err(|_| Error::Malformed("too many leads".into()))?;
        w.u8(leads);
        w.u32(u32::try_from(rec.len()).map_err(|_| Error::Malformed("record too long".into()))?);
        for l in &rec.leads {
            w.f32s(l);
        }
    }
    finish(w, path)
}

pub fn save_downstream(set: &DownstreamSet, path: &Path) -> Result<()> {
    set.validate()?;
    let mut w = Writer { buf: Vec::new() };
    header(&mut w, ContainerKind::Downstream, Some(set.task), set.lead, set.fs, set.len());
    let index_at = w.buf.len();
    w.buf.resize(index_at + 8 * set.len(), 0);
    for (i, s) in set.samples.iter().enumerate() {
        let off = w.buf.len() as u64;
        w.buf[index_at + 8 * i..index_at + 8 * i + 8].copy_from_slice(&off.to_le_bytes());
        w.u64(s.subject_id);
        w.f64(s.label.as_f64());
        w.u32(u32::try_from(s.signal.len()).map_err(|_| Error::Malformed("record too long".into()))?);
        w.f32s(&s.signal);
    }
    finish(w, path)
}

/// Reads and verifies a whole file; returns the payload without the digest.
fn read_verified(path: &Path) -> Result<(Vec<u8>, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io_at(path, e))?;
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic { path: path.to_path_buf(), expected: "dataset container" });
    }
    if bytes.len() < HEADER_LEN + DIGEST_LEN {
        return Err(Error::Truncated(format!("{} is only {} bytes", path.display(), bytes.len())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let (payload, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    let actual = Sha256::digest(payload);
    if actual.as_slice() != digest {
        return Err(Error::ChecksumMismatch);
    }
    let hex = actual.iter().map(|b| format!("{b:02x}")).collect();
    let mut payload = bytes;
    payload.truncate(payload.len() - DIGEST_LEN);
    Ok((payload, hex))
}

struct Header {
    kind: ContainerKind,
    task: Option<TaskKind>,
    lead: u8,
    fs: f64,
    count: u64,
}

fn read_header(r: &mut Reader) -> Result<Header> {
    r.take(8)?;
    r.u32()?;
    let kind = match r.u8()? {
        1 => ContainerKind::Pretrain,
        2 => ContainerKind::Downstream,
        k => return Err(Error::Malformed(format!("unknown container kind {k}"))),
    };
    let task_code = r.u8()?;
    let classes = r.u16()?;
    let task = match task_code {
        0 => None,
        1 => Some(TaskKind::Binary),
        2 => Some(TaskKind::Categorical(classes)),
        3 => Some(TaskKind::Regression),
        t => return Err(Error::Malformed(format!("unknown task code {t}"))),
    };
    let lead = r.u8()?;
    r.take(3)?;
    let fs = r.f64()?;
    let count = r.u64()?;
    if !(fs > 0.0) {
        return Err(Error::Malformed(format!("sampling rate {fs}")));
    }
    Ok(Header { kind, task, lead, fs, count })
}

fn offsets(r: &mut Reader, count: u64, payload_len: usize) -> Result<Vec<usize>> {
    if count.saturating_mul(8) > payload_len as u64 {
        return Err(Error::Truncated(format!("index of {count} records does not fit")));
    }
    (0..count).map(|_| Ok(r.u64()? as usize)).collect()
}

pub fn inspect(path: &Path) -> Result<ContainerSummary> {
    let (payload, sha256) = read_verified(path)?;
    let h = read_header(&mut Reader { buf: &payload, pos: 0 })?;
    Ok(ContainerSummary {
        kind: h.kind,
        version: FORMAT_VERSION,
        task: h.task,
        lead: h.lead,
        fs: h.fs,
        count: h.count,
        sha256,
    })
}

pub fn load_pretrain(path: &Path) -> Result<PretrainSet> {
    let (payload, _) = read_verified(path)?;
    let mut r = Reader { buf: &payload, pos: 0 };
    let h = read_header(&mut r)?;
    if h.kind != ContainerKind::Pretrain {
        return Err(Error::Malformed(format!("{} holds downstream data, not pretraining records", path.display())));
    }
    let offs = offsets(&mut r, h.count, payload.len())?;
    let mut records = Vec::with_capacity(offs.len());
    for off in offs {
        let mut r = Reader { buf: &payload, pos: off };
        let subject_id = r.u64()?;
        let metadata = decode_metadata(&mut r)?;
        let nleads = r.u8()? as usize;
        let len = r.u32()? as usize;
        let leads = (0..nleads).map(|_| r.f32s(len)).collect::<Result<Vec<_>>>()?;
        records.push(EcgRecord { subject_id, leads, metadata });
    }
    Ok(PretrainSet { fs: h.fs, records })
}

pub fn load_downstream(path: &Path) -> Result<DownstreamSet> {
    let (payload, _) = read_verified(path)?;
    let mut r = Reader { buf: &payload, pos: 0 };
    let h = read_header(&mut r)?;
    let task = match (h.kind, h.task) {
        (ContainerKind::Downstream, Some(t)) => t,
        _ => return Err(Error::Malformed(format!("{} does not hold downstream data", path.display()))),
    };
    let offs = offsets(&mut r, h.count, payload.len())?;
    let mut samples = Vec::with_capacity(offs.len());
    for off in offs {
        let mut r = Reader { buf: &payload, pos: off };
        let subject_id = r.u64()?;
        let raw = r.f64()?;
        let label = match task {
            TaskKind::Binary if raw == 0.0 || raw == 1.0 => Label::Binary(raw == 1.0),
            TaskKind::Categorical(k) if raw >= 0.0 && raw.fract() == 0.0 && raw < k as f64 => Label::Class(raw as u16),
            TaskKind::Regression => Label::Real(raw),
            _ => return Err(Error::LabelMismatch(format!("label {raw} for a {task} task"))),
        };
        let len = r.u32()? as usize;
        let signal = r.f32s(len)?;
        samples.push(DownstreamSample { subject_id, signal, label });
    }
    Ok(DownstreamSet { fs: h.fs, lead: h.lead, task, samples })
}

/// Loads recorded noise from `dir`: one pretraining container per category
/// named `<category>.ecgc`, whose first record holds the per-lead noise.
/// Categories without a file keep their synthetic generator.
pub fn load_noise_bank(dir: &Path) -> Result<NoiseBank> {
    let mut bank = NoiseBank::synthetic();
    for cat in NoiseCategory::ALL {
        let path = dir.join(format!("{cat}.ecgc"));
        if !path.exists() {
            continue;
        }
        let set = load_pretrain(&path)?;
        let rec = set.records.first().ok_or_else(|| Error::Malformed(format!("{} is empty", path.display())))?;
        let leads = rec.leads.iter().map(|l| l.iter().map(|&v| v as f64).collect()).collect();
        bank.set(cat, NoiseSource::Recorded { fs: set.fs, leads });
    }
    Ok(bank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_set() -> PretrainSet {
        let full = MetadataRecord {
            age: Some(61.5),
            gender: Some(Gender::Female),
            smoking: Some(true),
            sbp: Some(141.0),
            diabetes: Some(false),
            total_cholesterol: Some(5.9),
            hdl_cholesterol: Some(1.1),
        };
        let partial = MetadataRecord { age: Some(44.0), gender: Some(Gender::Male), sbp: Some(118.0), ..Default::default() };
        PretrainSet {
            fs: 250.0,
            records: vec![
                EcgRecord { subject_id: 7, leads: vec![vec![0.5, -1.25, 3.0]; 12], metadata: full },
                EcgRecord { subject_id: 9, leads: vec![vec![1.0, 2.0, f32::MIN_POSITIVE]; 12], metadata: partial },
            ],
        }
    }

    #[test]
    fn pretrain_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ecgc");
        let set = sample_set();
        save_pretrain(&set, &path).unwrap();
        assert_eq!(load_pretrain(&path).unwrap(), set);
        let s = inspect(&path).unwrap();
        assert_eq!((s.kind, s.count, s.fs), (ContainerKind::Pretrain, 2, 250.0));
    }

    #[test]
    fn empty_set_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.ecgc");
        let set = PretrainSet { fs: 500.0, records: vec![] };
        save_pretrain(&set, &path).unwrap();
        assert_eq!(load_pretrain(&path).unwrap(), set);
    }

    #[test]
    fn downstream_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for (task, labels) in [
            (TaskKind::Binary, vec![Label::Binary(true), Label::Binary(false)]),
            (TaskKind::Categorical(3), vec![Label::Class(2), Label::Class(0)]),
            (TaskKind::Regression, vec![Label::Real(-0.25), Label::Real(3.5)]),
        ] {
            let set = DownstreamSet {
                fs: 250.0,
                lead: 1,
                task,
                samples: labels
                    .into_iter()
                    .enumerate()
                    .map(|(i, label)| DownstreamSample { subject_id: i as u64, signal: vec![i as f32; 5], label })
                    .collect(),
            };
            let path = dir.path().join(format!("{task}.ecgc").replace(':', "_"));
            save_downstream(&set, &path).unwrap();
            assert_eq!(load_downstream(&path).unwrap(), set);
            assert!(load_pretrain(&path).is_err());
        }
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ecgc");
        save_pretrain(&sample_set(), &path).unwrap();
        let good = fs::read(&path).unwrap();

        let mut bad = good.clone();
        let mid = bad.len() / 2;
        bad[mid] ^= 0x40;
        fs::write(&path, &bad).unwrap();
        assert!(matches!(load_pretrain(&path), Err(Error::ChecksumMismatch)));

        let mut bad = good.clone();
        let last = bad.len() - 1;
        bad[last] ^= 1;
        fs::write(&path, &bad).unwrap();
        assert!(matches!(load_pretrain(&path), Err(Error::ChecksumMismatch)));

        fs::write(&path, &good[..20]).unwrap();
        assert!(matches!(load_pretrain(&path), Err(Error::Truncated(_))));

        let mut bad = good.clone();
        bad[8] = 9;
        fs::write(&path, &bad).unwrap();
        assert!(matches!(load_pretrain(&path), Err(Error::VersionMismatch { found: 9, .. })));

        fs::write(&path, b"not a container at all, just text").unwrap();
        assert!(matches!(load_pretrain(&path), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn noise_bank_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let rec = EcgRecord {
            subject_id: 0,
            leads: vec![(0..400).map(|i| (i % 7) as f32).collect(); 12],
            metadata: MetadataRecord::default(),
        };
        save_pretrain(&PretrainSet { fs: 360.0, records: vec![rec] }, &dir.path().join("muscle.ecgc")).unwrap();
        let bank = load_noise_bank(dir.path()).unwrap();
        assert!(bank.has(NoiseCategory::Muscle, 12));
        assert!(bank.has(NoiseCategory::White, 1));
    }

    fn maybe<T: std::fmt::Debug + Clone>(s: impl Strategy<Value = T>) -> impl Strategy<Value = Option<T>> {
        proptest::option::of(s)
    }

    proptest! {
        #[test]
        fn arbitrary_records_round_trip(
            rows in prop::collection::vec(
                (
                    any::<u64>(),
                    prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 1..40),
                    (maybe(20.0f64..95.0), maybe(any::<bool>()), maybe(any::<bool>()), maybe(80.0f64..220.0)),
                    (maybe(any::<bool>()), maybe(2.0f64..12.0), maybe(0.3f64..3.0)),
                ),
                1..6,
            ),
            fs in 100.0f64..1000.0,
        ) {
            let records = rows
                .into_iter()
                .map(|(id, lead, (age, female, smoking, sbp), (diabetes, tc, hdl))| EcgRecord {
                    subject_id: id,
                    leads: vec![lead; 12],
                    metadata: MetadataRecord {
                        age,
                        gender: female.map(|f| if f { Gender::Female } else { Gender::Male }),
                        smoking,
                        sbp,
                        diabetes,
                        total_cholesterol: tc,
                        hdl_cholesterol: hdl,
                    },
                })
                .collect();
            let set = PretrainSet { fs, records };
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.ecgc");
            save_pretrain(&set, &path).unwrap();
            prop_assert_eq!(load_pretrain(&path).unwrap(), set);
        }
    }
}
