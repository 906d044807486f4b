//! Binary attribution dump format, also the input of standalone hardening.
//!
//! ```text
//! magic    b"XATT"
//! version  u16
//! count    u32
//! record   u8 method tag, u32 rank + rank x u32 dims, u32 params length +
//!          params JSON, u32 class index, u8 group, u32 source index,
//!          little-endian f64 values
//! ```
//!
//! Wall time is deliberately not stored so that dumps are reproducible.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AttributionMap, ExplainerKind, ExplainerParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const XATT_MAGIC: &[u8; 4] = b"XATT";
pub const XATT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordGroup {
    Unlabeled,
    ShadowMember,
    ShadowNonmember,
    TargetMember,
    TargetNonmember,
    /// Attribution of a perturbed copy of record `source`, used for
    /// sensitivity.
    Perturbed,
}

impl RecordGroup {
    fn tag(self) -> u8 {
        match self {
            RecordGroup::Unlabeled => 0,
            RecordGroup::ShadowMember => 1,
            RecordGroup::ShadowNonmember => 2,
            RecordGroup::TargetMember => 3,
            RecordGroup::TargetNonmember => 4,
            RecordGroup::Perturbed => 5,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        Ok(match t {
            0 => RecordGroup::Unlabeled,
            1 => RecordGroup::ShadowMember,
            2 => RecordGroup::ShadowNonmember,
            3 => RecordGroup::TargetMember,
            4 => RecordGroup::TargetNonmember,
            5 => RecordGroup::Perturbed,
            _ => return Err(Error::Format(format!("unknown record group {t}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            RecordGroup::Unlabeled => "unlabeled",
            RecordGroup::ShadowMember => "shadow_member",
            RecordGroup::ShadowNonmember => "shadow_nonmember",
            RecordGroup::TargetMember => "target_member",
            RecordGroup::TargetNonmember => "target_nonmember",
            RecordGroup::Perturbed => "perturbed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XattRecord {
    pub method: ExplainerKind,
    pub params: ExplainerParams,
    pub class_index: usize,
    pub group: RecordGroup,
    pub source: usize,
    pub values: Tensor,
}

impl XattRecord {
    pub fn from_map(map: &AttributionMap, group: RecordGroup, source: usize) -> Self {
        Self {
            method: map.method,
            params: map.params.clone(),
            class_index: map.class_index,
            group,
            source,
            values: map.values.clone(),
        }
    }
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

pub fn write_xatt(records: &[XattRecord], w: &mut impl Write) -> Result<()> {
    w.write_all(XATT_MAGIC)?;
    w.write_all(&XATT_VERSION.to_le_bytes())?;
    put_u32(w, records.len())?;
    for rec in records {
        let tag = ExplainerKind::ALL
            .iter()
            .position(|k| *k == rec.method)
            .expect("listed kind");
        w.write_all(&[tag as u8])?;
        put_u32(w, rec.values.rank())?;
        for &d in rec.values.shape() {
            put_u32(w, d)?;
        }
        let json = serde_json::to_vec(&rec.params)?;
        put_u32(w, json.len())?;
        w.write_all(&json)?;
        put_u32(w, rec.class_index)?;
        w.write_all(&[rec.group.tag()])?;
        put_u32(w, rec.source)?;
        for v in rec.values.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_xatt(r: &mut impl Read) -> Result<Vec<XattRecord>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != XATT_MAGIC {
        return Err(Error::Format("bad attribution dump magic".into()));
    }
    let mut vb = [0u8; 2];
    r.read_exact(&mut vb)?;
    let version = u16::from_le_bytes(vb);
    if version != XATT_VERSION {
        return Err(Error::Format(format!("unsupported attribution dump version {version}")));
    }
    let count = get_u32(r)?;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let tag = get_u8(r)? as usize;
        let method = *ExplainerKind::ALL
            .get(tag)
            .ok_or_else(|| Error::Format(format!("unknown method tag {tag}")))?;
        let rank = get_u32(r)?;
        if rank == 0 || rank > 8 {
            return Err(Error::Format(format!("implausible rank {rank}")));
        }
        let shape = (0..rank).map(|_| get_u32(r)).collect::<Result<Vec<_>>>()?;
        let json_len = get_u32(r)?;
        let mut json = vec![0u8; json_len];
        r.read_exact(&mut json)?;
        let params: ExplainerParams = serde_json::from_slice(&json)?;
        let class_index = get_u32(r)?;
        let group = RecordGroup::from_tag(get_u8(r)?)?;
        let source = get_u32(r)?;
        let n: usize = shape.iter().product();
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        out.push(XattRecord {
            method,
            params,
            class_index,
            group,
            source,
            values: Tensor::new(shape, data)?,
        });
    }
    Ok(out)
}

/// One row per record: `group, source, method, class_index, v0, v1, ...`.
/// Records of different sizes are padded with empty cells.
pub fn write_xatt_csv(records: &[XattRecord], path: impl AsRef<Path>) -> Result<()> {
    let width = records.iter().map(|r| r.values.len()).max().unwrap_or(0);
    let mut w = csv::WriterBuilder::new().flexible(true).from_path(path)?;
    let mut header = vec![
        "group".to_string(),
        "source".into(),
        "method".into(),
        "class_index".into(),
    ];
    header.extend((0..width).map(|i| format!("v{i}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.group.name().to_string(),
            r.source.to_string(),
            r.method.name().to_string(),
            r.class_index.to_string(),
        ];
        row.extend(r.values.data().iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
