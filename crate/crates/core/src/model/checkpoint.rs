//! Binary model checkpoints.
//!
//! All integers are little-endian `u32` unless noted; floats are
//! little-endian `f64`.
//!
//! ```text
//! magic            4 bytes  "IDML"
//! version          u32      1
//! input_dim        u32
//! n_hidden         u32
//! hidden widths    n_hidden x u32
//! semantic_dim     u32
//! uncertainty_dim  u32
//! activation       u32      0 = tanh, 1 = identity
//! head_u_scale     f64
//! frozen           u32      1 when the uncertainty path is frozen
//! n_proxies        u32
//! proxy classes    n_proxies x u32
//! n_params         u64
//! params           n_params x f64
//! ```

use std::fs;
use std::path::Path;

use crate::error::{IdmlError, Result};

use super::{Activation, EncoderConfig, Model};

const MAGIC: &[u8; 4] = b"IDML";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| IdmlError::param(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let c = model.config();
    let mut out = Vec::with_capacity(64 + 8 * model.n_params());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize)?;
    put_u32(&mut out, c.input_dim)?;
    put_u32(&mut out, c.hidden.len())?;
    for &h in &c.hidden {
        put_u32(&mut out, h)?;
    }
    put_u32(&mut out, c.semantic_dim)?;
    put_u32(&mut out, c.uncertainty_dim)?;
    put_u32(
        &mut out,
        match c.activation {
            Activation::Tanh => 0,
            Activation::Identity => 1,
        },
    )?;
    out.extend_from_slice(&c.head_u_scale.to_le_bytes());
    put_u32(&mut out, model.is_uncertainty_frozen() as usize)?;
    put_u32(&mut out, model.proxy_classes().len())?;
    for &p in model.proxy_classes() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out.extend_from_slice(&(model.n_params() as u64).to_le_bytes());
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| IdmlError::format(0, format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 4], version: u32) -> Result<()> {
        if self.take(4)? != magic {
            return Err(IdmlError::format(0, format!("bad magic, expected {:?}", std::str::from_utf8(magic))));
        }
        let v = self.u32()?;
        if v != version {
            return Err(IdmlError::format(0, format!("unsupported version {v}")));
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(IdmlError::format(0, format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader::new(bytes);
    r.expect_magic(MAGIC, VERSION)?;
    let input_dim = r.usize()?;
    let n_hidden = r.usize()?;
    let hidden = (0..n_hidden).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let semantic_dim = r.usize()?;
    let uncertainty_dim = r.usize()?;
    let activation = match r.u32()? {
        0 => Activation::Tanh,
        1 => Activation::Identity,
        a => return Err(IdmlError::format(0, format!("unknown activation code {a}"))),
    };
    let head_u_scale = r.f64()?;
    let frozen = r.u32()? != 0;
    let n_proxies = r.usize()?;
    let classes = (0..n_proxies).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let config = EncoderConfig {
        input_dim,
        hidden,
        semantic_dim,
        uncertainty_dim,
        activation,
        head_u_scale,
    };
    let mut model = Model::zeros(config, classes)?;
    let n = r.u64()?;
    if n != model.n_params() as u64 {
        return Err(IdmlError::format(0, format!("{n} parameters stored, layout needs {}", model.n_params())));
    }
    let params = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    model.set_params(params)?;
    model.set_frozen_flag(frozen);
    Ok(model)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn model() -> Model {
        let cfg = EncoderConfig {
            input_dim: 3,
            hidden: vec![4],
            semantic_dim: 2,
            uncertainty_dim: 2,
            activation: Activation::Tanh,
            head_u_scale: 0.1,
        };
        Model::new(cfg, vec![3, 7], &mut Rng::new(2)).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let mut m = model();
        m.freeze_uncertainty();
        let back = from_bytes(&to_bytes(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn header_layout() {
        let b = to_bytes(&model()).unwrap();
        assert_eq!(&b[..4], b"IDML");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 3);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let b = to_bytes(&model()).unwrap();
        assert!(from_bytes(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        let mut long = b.clone();
        long.push(0);
        assert!(from_bytes(&long).is_err());
        let mut version = b;
        version[4] = 9;
        assert!(from_bytes(&version).is_err());
    }
}
