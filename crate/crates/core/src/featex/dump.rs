//! FPD1 feature-dump format, little-endian throughout:
//!
//! ```text
//! magic "FPD1" | version u32 = 1 | id_len u32 | id bytes (UTF-8) | stage u8
//! num_levels u32
//! per level: level_index u32 | scale f64 | stride u32 | C u32 | rows u32 | cols u32
//!            | C*rows*cols f32, channel-major
//! ```
//!
//! No trailing bytes are allowed. The format does not carry level image
//! sizes; on read they are taken to be the area covered by the cell grid.

use std::io::{Read, Write};

use super::{FeatureLevel, FeatureMap, FeaturePyramid, Stage};
use crate::error::{FormatError, Result};
use crate::imaging::LevelGeometry;

pub const DUMP_MAGIC: [u8; 4] = *b"FPD1";
pub const DUMP_VERSION: u32 = 1;

pub fn write_feature_dump<W: Write>(fp: &FeaturePyramid, sink: &mut W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&DUMP_MAGIC);
    buf.extend_from_slice(&DUMP_VERSION.to_le_bytes());
    let id = fp.image_id.as_bytes();
    buf.extend_from_slice(&u32_len(id.len(), "image_id")?.to_le_bytes());
    buf.extend_from_slice(id);
    buf.push(fp.stage.tag());
    buf.extend_from_slice(&u32_len(fp.levels.len(), "num_levels")?.to_le_bytes());
    for level in &fp.levels {
        let g = &level.geometry;
        let m = &level.map;
        buf.extend_from_slice(&u32_len(g.level_index, "level_index")?.to_le_bytes());
        buf.extend_from_slice(&g.scale.to_le_bytes());
        buf.extend_from_slice(&g.stride.to_le_bytes());
        for (v, what) in [(m.channels, "channels"), (m.rows, "rows"), (m.cols, "cols")] {
            buf.extend_from_slice(&u32_len(v, what)?.to_le_bytes());
        }
        buf.reserve(m.data.len() * 4);
        for v in &m.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    sink.write_all(&buf)?;
    Ok(())
}

fn u32_len(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| FormatError::DimOverflow { what: what.into() }.into())
}

pub fn read_feature_dump<R: Read>(source: &mut R) -> Result<FeaturePyramid> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    parse(&bytes)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        if self.buf.len() - self.pos < n {
            return Err(FormatError::Truncated { what });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

fn parse(bytes: &[u8]) -> Result<FeaturePyramid> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4, "magic")?.try_into().unwrap();
    if magic != DUMP_MAGIC {
        return Err(FormatError::BadMagic {
            expected: DUMP_MAGIC,
            found: magic,
        }
        .into());
    }
    let version = cur.u32("version")?;
    if version != DUMP_VERSION {
        return Err(FormatError::Version {
            expected: DUMP_VERSION,
            found: version,
        }
        .into());
    }
    let id_len = cur.u32("image_id length")? as usize;
    let image_id = std::str::from_utf8(cur.take(id_len, "image_id")?)
        .map_err(|e| FormatError::Invalid(format!("image_id is not UTF-8: {e}")))?
        .to_string();
    let tag = cur.u8("stage")?;
    let stage =
        Stage::from_tag(tag).ok_or_else(|| FormatError::Invalid(format!("stage tag {tag}")))?;
    let num_levels = cur.u32("num_levels")?;
    let mut levels = Vec::new();
    for _ in 0..num_levels {
        let level_index = cur.u32("level_index")? as usize;
        let scale = cur.f64("scale")?;
        let stride = cur.u32("stride")?;
        let channels = cur.u32("channels")? as usize;
        let rows = cur.u32("rows")? as usize;
        let cols = cur.u32("cols")? as usize;
        if !(scale > 0.0 && scale.is_finite()) || stride == 0 {
            return Err(FormatError::Invalid(format!(
                "level {level_index}: scale {scale}, stride {stride}"
            ))
            .into());
        }
        let count = channels
            .checked_mul(rows)
            .and_then(|v| v.checked_mul(cols))
            .ok_or_else(|| FormatError::DimOverflow {
                what: format!("level {level_index}: {channels}x{rows}x{cols}"),
            })?;
        let nbytes = count.checked_mul(4).ok_or_else(|| FormatError::DimOverflow {
            what: format!("level {level_index}: payload bytes"),
        })?;
        if nbytes > cur.remaining() {
            return Err(FormatError::Truncated { what: "payload" }.into());
        }
        let payload = cur.take(nbytes, "payload")?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let px = |cells: usize| {
            u32::try_from(cells)
                .ok()
                .and_then(|c| c.checked_mul(stride))
                .ok_or_else(|| FormatError::DimOverflow {
                    what: format!("level {level_index}: pixel extent"),
                })
        };
        let mut geometry = LevelGeometry::new(level_index, scale, stride, px(cols)?, px(rows)?);
        geometry.feature_dims = (rows, cols);
        levels.push(FeatureLevel {
            geometry,
            map: FeatureMap {
                channels,
                rows,
                cols,
                data,
            },
        });
    }
    if cur.remaining() != 0 {
        return Err(FormatError::TrailingBytes(cur.remaining()).into());
    }
    Ok(FeaturePyramid {
        image_id,
        stage,
        levels,
    })
}
