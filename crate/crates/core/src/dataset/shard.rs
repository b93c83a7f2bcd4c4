//! Binary shard codec.
//!
//! Header: `GRSP`, version u16, record type u8, count u32. Records follow
//! back to back, little-endian, with a fixed stride per type:
//!
//! ```text
//! part_id u32 | trial u32 | task u8 | lifted u8 | grasp 4xf32 | dp 4xf32
//! [dp_est 4xf32]  (IQN only)
//! eps f32 | patch 96*96 f32 | [masks 2*96*96 u8]  (IQN only)
//! ```

use std::path::Path;

use super::{DatasetError, RecordType, TrialRecord};
use crate::geometry::Family;
use crate::render::PATCH_LEN;

pub const SHARD_MAGIC: [u8; 4] = *b"GRSP";
pub const SHARD_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 4;

impl RecordType {
    pub fn stride(self) -> usize {
        let common = 4 + 4 + 1 + 1 + 16 + 16 + 4 + 4 * PATCH_LEN;
        match self {
            RecordType::GqGd => common,
            RecordType::Iqn => common + 16 + 2 * PATCH_LEN,
        }
    }
}

pub fn encode_shard(kind: RecordType, records: &[TrialRecord]) -> Result<Vec<u8>, DatasetError> {
    let count = u32::try_from(records.len()).map_err(|_| DatasetError::Inconsistent("too many records".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + records.len() * kind.stride());
    out.extend_from_slice(&SHARD_MAGIC);
    out.extend_from_slice(&SHARD_VERSION.to_le_bytes());
    out.push(kind as u8);
    out.extend_from_slice(&count.to_le_bytes());
    let f32s = |out: &mut Vec<u8>, v: &[f32]| {
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    };
    for r in records {
        r.check(kind)?;
        out.extend_from_slice(&r.part_id.to_le_bytes());
        out.extend_from_slice(&r.trial.to_le_bytes());
        out.push(r.task.tag());
        out.push(r.lifted as u8);
        f32s(&mut out, &r.grasp);
        f32s(&mut out, &r.displacement);
        if let Some(e) = &r.estimate {
            f32s(&mut out, e);
        }
        out.extend_from_slice(&r.eps.to_le_bytes());
        f32s(&mut out, &r.patch);
        if let Some(m) = &r.masks {
            out.extend_from_slice(m);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut a = [0u8; N];
        a.copy_from_slice(&self.buf[self.at..self.at + N]);
        self.at += N;
        a
    }

    fn f32s<const N: usize>(&mut self) -> [f32; N] {
        std::array::from_fn(|_| f32::from_le_bytes(self.take()))
    }

    fn f32_vec(&mut self, n: usize) -> Vec<f32> {
        let out = self.buf[self.at..self.at + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        self.at += 4 * n;
        out
    }
}

pub fn decode_shard(buf: &[u8]) -> Result<(RecordType, Vec<TrialRecord>), DatasetError> {
    if buf.len() < HEADER_LEN {
        return Err(DatasetError::Truncated { expected: HEADER_LEN, found: buf.len() });
    }
    if buf[..4] != SHARD_MAGIC {
        return Err(DatasetError::BadMagic([buf[0], buf[1], buf[2], buf[3]]));
    }
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    if version != SHARD_VERSION {
        return Err(DatasetError::BadVersion(version));
    }
    let kind = match buf[6] {
        1 => RecordType::GqGd,
        2 => RecordType::Iqn,
        t => return Err(DatasetError::BadRecordType(t)),
    };
    let count = u32::from_le_bytes([buf[7], buf[8], buf[9], buf[10]]) as usize;
    let expected = HEADER_LEN + count * kind.stride();
    if buf.len() != expected {
        return Err(DatasetError::Truncated { expected, found: buf.len() });
    }
    let mut rd = Reader { buf, at: HEADER_LEN };
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let part_id = u32::from_le_bytes(rd.take());
        let trial = u32::from_le_bytes(rd.take());
        let [tag] = rd.take();
        let task = Family::from_tag(tag).ok_or(DatasetError::Inconsistent(format!("unknown task tag {tag}")))?;
        let [lifted] = rd.take();
        if lifted > 1 {
            return Err(DatasetError::Inconsistent(format!("lift flag {lifted}")));
        }
        let grasp = rd.f32s();
        let displacement = rd.f32s();
        let estimate = (kind == RecordType::Iqn).then(|| rd.f32s());
        let eps = f32::from_le_bytes(rd.take());
        let patch = rd.f32_vec(PATCH_LEN);
        let masks = (kind == RecordType::Iqn).then(|| {
            let m = rd.buf[rd.at..rd.at + 2 * PATCH_LEN].to_vec();
            rd.at += 2 * PATCH_LEN;
            m
        });
        records.push(TrialRecord {
            part_id,
            trial,
            task,
            grasp,
            patch,
            masks,
            lifted: lifted == 1,
            displacement,
            estimate,
            eps,
        });
    }
    Ok((kind, records))
}

pub fn write_shard(path: &Path, kind: RecordType, records: &[TrialRecord]) -> Result<Vec<u8>, DatasetError> {
    let bytes = encode_shard(kind, records)?;
    std::fs::write(path, &bytes)?;
    Ok(bytes)
}

pub fn read_shard(path: &Path) -> Result<(RecordType, Vec<TrialRecord>), DatasetError> {
    decode_shard(&std::fs::read(path)?)
}
