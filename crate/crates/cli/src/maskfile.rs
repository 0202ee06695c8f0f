//! Binary mask files: the bridge between `pool` and `unpool`.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            12 bytes  "ADAPOOLMASK1"
//! version          u8        1
//! dims             u8        2 or 3
//! flags            u8        bit0: beta payload present
//! reserved         u8        0
//! channels         u64
//! target extents   dims x u64   original spatial shape
//! kernel           dims x u64
//! stride           dims x u64
//! padding          dims x u64
//! output extents   dims x u64
//! n_regions        u64
//! total_members    u64
//! pooled           (channels * n_regions) x f64
//! em weights       (total_members * channels) x f64
//! edsc weights     total_members x f64
//! beta             n_regions x f64          when flagged
//! checksum         u32       CRC-32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use adapool::{enumerate_regions, ActivationMap, BetaMap, PoolGeometry, WeightMasks};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 12] = b"ADAPOOLMASK1";
const VERSION: u8 = 1;

/// Deserialized mask file contents.
#[derive(Debug, Clone)]
pub struct MaskFile {
    pub target_spatial: Vec<usize>,
    pub pooled: ActivationMap,
    pub masks: WeightMasks,
    pub beta: Option<BetaMap>,
}

fn push_u64(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u64).to_le_bytes());
}

fn push_f64s(buf: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_mask_file(path: &Path, mask: &MaskFile) -> CliResult<()> {
    let geom = mask.masks.geometry();
    let dims = geom.dims();
    let out_extents = geom
        .output_extents(&mask.target_spatial)
        .map_err(|e| CliError::Data(e.to_string()))?;
    if out_extents != mask.pooled.spatial() {
        return Err(CliError::Data("pooled extents inconsistent with geometry".into()));
    }
    let em = mask
        .masks
        .em_raw()
        .ok_or_else(|| CliError::Data("mask file requires em weights".into()))?;
    let edsc = mask
        .masks
        .edsc_raw()
        .ok_or_else(|| CliError::Data("mask file requires edsc weights".into()))?;
    let n_regions = mask.masks.n_regions();
    let total_members = *mask.masks.offsets().last().unwrap();

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.push(dims as u8);
    buf.push(mask.beta.is_some() as u8);
    buf.push(0);
    push_u64(&mut buf, mask.pooled.channels());
    for &e in &mask.target_spatial {
        push_u64(&mut buf, e);
    }
    for &e in geom.kernel() {
        push_u64(&mut buf, e);
    }
    for &e in geom.stride() {
        push_u64(&mut buf, e);
    }
    for &e in geom.padding() {
        push_u64(&mut buf, e);
    }
    for &e in &out_extents {
        push_u64(&mut buf, e);
    }
    push_u64(&mut buf, n_regions);
    push_u64(&mut buf, total_members);
    push_f64s(&mut buf, mask.pooled.data());
    push_f64s(&mut buf, em);
    push_f64s(&mut buf, edsc);
    if let Some(beta) = &mask.beta {
        push_f64s(&mut buf, beta.values());
    }
    let checksum = crc32fast::hash(&buf);
    buf.extend_from_slice(&checksum.to_le_bytes());
    fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CliError::Data("mask file truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> CliResult<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> CliResult<usize> {
        let s = self.take(8)?;
        let v = u64::from_le_bytes(s.try_into().unwrap());
        usize::try_from(v).map_err(|_| CliError::Data("mask file field overflows usize".into()))
    }

    fn f64s(&mut self, n: usize) -> CliResult<Vec<f64>> {
        let s = self.take(n * 8)?;
        Ok(s.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn read_mask_file(path: &Path) -> CliResult<MaskFile> {
    let buf = fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    if buf.len() < MAGIC.len() + 4 + 4 {
        return Err(CliError::Data("mask file truncated".into()));
    }
    let (body, trailer) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(CliError::Data("mask file checksum mismatch".into()));
    }

    let mut r = Reader { buf: body, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(CliError::Data("not a mask file (bad magic)".into()));
    }
    if r.u8()? != VERSION {
        return Err(CliError::Data("unsupported mask file version".into()));
    }
    let dims = r.u8()? as usize;
    if dims != 2 && dims != 3 {
        return Err(CliError::Data("mask file has an invalid rank".into()));
    }
    let flags = r.u8()?;
    let _reserved = r.u8()?;
    let channels = r.u64()?;

    let vec_of = |r: &mut Reader| -> CliResult<Vec<usize>> {
        (0..dims).map(|_| r.u64()).collect()
    };
    let target = vec_of(&mut r)?;
    let kernel = vec_of(&mut r)?;
    let stride = vec_of(&mut r)?;
    let padding = vec_of(&mut r)?;
    let out_extents = vec_of(&mut r)?;
    let n_regions = r.u64()?;
    let total_members = r.u64()?;

    let geometry = PoolGeometry::new(kernel, stride, padding)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let expected_out = geometry
        .output_extents(&target)
        .map_err(|e| CliError::Data(e.to_string()))?;
    if expected_out != out_extents || out_extents.iter().product::<usize>() != n_regions {
        return Err(CliError::Data("mask file geometry is inconsistent".into()));
    }
    let regions = enumerate_regions(&target, &geometry)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let mut offsets = Vec::with_capacity(n_regions + 1);
    offsets.push(0usize);
    for region in &regions {
        offsets.push(offsets.last().unwrap() + region.valid_count());
    }
    if *offsets.last().unwrap() != total_members {
        return Err(CliError::Data("mask file member count is inconsistent".into()));
    }

    let pooled_data = r.f64s(channels * n_regions)?;
    let em = r.f64s(total_members * channels)?;
    let edsc = r.f64s(total_members)?;
    let beta = if flags & 1 != 0 {
        let values = r.f64s(n_regions)?;
        Some(
            BetaMap::new(values, out_extents.clone(), true)
                .map_err(|e| CliError::Data(e.to_string()))?,
        )
    } else {
        None
    };
    if r.pos != body.len() {
        return Err(CliError::Data("mask file has trailing bytes".into()));
    }

    let pooled = ActivationMap::new(channels, out_extents, pooled_data)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let masks = WeightMasks::from_parts(geometry, channels, offsets, Some(em), Some(edsc))
        .map_err(|e| CliError::Data(e.to_string()))?;
    Ok(MaskFile { target_spatial: target, pooled, masks, beta })
}
