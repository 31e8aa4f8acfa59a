//! DPMF model file, little-endian:
//!
//! ```text
//! magic "DPMF" | version u32 = 1 | channels u32 | components u32
//! per component: h u32 | w u32 | bias f32 | weights f32 * (C*h*w)
//! extractor descriptor: len u32 + UTF-8
//! pyramid config digest: 32 bytes (SHA-256)
//! default threshold f64
//! metadata: len u32 + UTF-8
//! regressor flag u8; when 1, per component:
//!     lambda f64 | feature_len u32 | 4 x (intercept f64 | weights f64 * feature_len)
//! ```

use std::io::{Read, Write};

use super::{DpmModel, RootFilter};
use crate::error::{FormatError, Result};
use crate::train::BBoxRegressor;

pub const MODEL_MAGIC: [u8; 4] = *b"DPMF";
pub const MODEL_VERSION: u32 = 1;

pub fn write_model<W: Write>(model: &DpmModel, sink: &mut W) -> Result<()> {
    model.validate()?;
    let mut b = Vec::new();
    b.extend_from_slice(&MODEL_MAGIC);
    put_u32(&mut b, MODEL_VERSION);
    put_u32(&mut b, model.channels as u32);
    put_u32(&mut b, model.components.len() as u32);
    for f in &model.components {
        put_u32(&mut b, f.h as u32);
        put_u32(&mut b, f.w as u32);
        b.extend_from_slice(&f.bias.to_le_bytes());
        for v in &f.weights {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    put_str(&mut b, &model.extractor);
    b.extend_from_slice(&model.config_digest);
    b.extend_from_slice(&model.threshold.to_le_bytes());
    put_str(&mut b, &model.metadata);
    match &model.regressors {
        None => b.push(0),
        Some(regs) => {
            b.push(1);
            for r in regs {
                b.extend_from_slice(&r.lambda.to_le_bytes());
                put_u32(&mut b, r.feature_len() as u32);
                for t in 0..4 {
                    b.extend_from_slice(&r.intercepts[t].to_le_bytes());
                    for v in &r.weights[t] {
                        b.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
    }
    sink.write_all(&b)?;
    Ok(())
}

fn put_u32(b: &mut Vec<u8>, v: u32) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_str(b: &mut Vec<u8>, s: &str) {
    put_u32(b, s.len() as u32);
    b.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        if self.buf.len() - self.pos < n {
            return Err(FormatError::Truncated { what });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &'static str) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &'static str) -> Result<String, FormatError> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| FormatError::Invalid(format!("{what} is not UTF-8")))
    }

    fn f32s(&mut self, n: usize, what: &'static str) -> Result<Vec<f32>, FormatError> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| FormatError::DimOverflow { what: what.into() })?;
        Ok(self
            .take(bytes, what)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn f64s(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>, FormatError> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| FormatError::DimOverflow { what: what.into() })?;
        Ok(self
            .take(bytes, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn read_model<R: Read>(source: &mut R) -> Result<DpmModel> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != MODEL_MAGIC {
        return Err(FormatError::BadMagic {
            expected: MODEL_MAGIC,
            found: magic,
        }
        .into());
    }
    let version = r.u32("version")?;
    if version != MODEL_VERSION {
        return Err(FormatError::Version {
            expected: MODEL_VERSION,
            found: version,
        }
        .into());
    }
    let channels = r.u32("channels")? as usize;
    let ncomp = r.u32("component count")? as usize;
    let mut components = Vec::new();
    for id in 0..ncomp {
        let h = r.u32("filter height")? as usize;
        let w = r.u32("filter width")? as usize;
        let bias = r.f32("filter bias")?;
        let n = h
            .checked_mul(w)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| FormatError::DimOverflow {
                what: format!("filter {id}: {h}x{w}x{channels}"),
            })?;
        let weights = r.f32s(n, "filter weights")?;
        components.push(RootFilter::new(id, h, w, channels, weights, bias)?);
    }
    let extractor = r.string("extractor descriptor")?;
    let config_digest: [u8; 32] = r.take(32, "config digest")?.try_into().unwrap();
    let threshold = r.f64("threshold")?;
    let metadata = r.string("metadata")?;
    let regressors = match r.take(1, "regressor flag")?[0] {
        0 => None,
        1 => {
            let mut regs = Vec::with_capacity(ncomp);
            for _ in 0..ncomp {
                let lambda = r.f64("regressor lambda")?;
                let len = r.u32("regressor length")? as usize;
                let mut intercepts = [0.0; 4];
                let mut weights: [Vec<f64>; 4] = Default::default();
                for t in 0..4 {
                    intercepts[t] = r.f64("regressor intercept")?;
                    weights[t] = r.f64s(len, "regressor weights")?;
                }
                regs.push(BBoxRegressor {
                    weights,
                    intercepts,
                    lambda,
                });
            }
            Some(regs)
        }
        other => return Err(FormatError::Invalid(format!("regressor flag {other}")).into()),
    };
    if r.pos != buf.len() {
        return Err(FormatError::TrailingBytes(buf.len() - r.pos).into());
    }
    let model = DpmModel {
        channels,
        components,
        config_digest,
        extractor,
        threshold,
        regressors,
        metadata,
    };
    model.validate()?;
    Ok(model)
}
