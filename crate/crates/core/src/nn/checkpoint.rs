//! NLMD checkpoint format (little-endian):
//!
//! ```text
//! "NLMD" | version u32 = 1 | architecture u32 | H u32 | W u32 | C u32
//! | n_classes u32 | n_layers u32
//! | n_layers × (kind u8 | a u32 | b u32 | rate f64)
//! | parameters: per conv/dense layer, weight then bias, as f64
//! ```
//!
//! Layer kinds: 0 conv (a = in channels, b = filters), 1 max-pool, 2 relu,
//! 3 dropout (rate), 4 flatten, 5 dense (a = inputs, b = outputs), 6 softmax.

use std::path::Path;

use super::layer::{Conv2d, Dense, Layer};
use super::model::{Architecture, Model};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NLMD_MAGIC: &[u8; 4] = b"NLMD";
pub const NLMD_VERSION: u32 = 1;

fn arch_code(a: Architecture) -> u32 {
    match a {
        Architecture::SmallCnn => 0,
        Architecture::EnhancedCnn => 1,
        Architecture::Custom => 2,
    }
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    let put = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    out.extend_from_slice(NLMD_MAGIC);
    out.extend_from_slice(&NLMD_VERSION.to_le_bytes());
    out.extend_from_slice(&arch_code(model.architecture()).to_le_bytes());
    let (h, w, c) = model.input_shape();
    for v in [h, w, c, model.n_classes(), model.layers().len()] {
        put(&mut out, v);
    }
    for layer in model.layers() {
        let (kind, a, b, rate) = match layer {
            Layer::Conv2d(conv) => (0u8, conv.in_ch, conv.out_ch, 0.0),
            Layer::MaxPool2x2 => (1, 0, 0, 0.0),
            Layer::Relu => (2, 0, 0, 0.0),
            Layer::Dropout { rate } => (3, 0, 0, *rate),
            Layer::Flatten => (4, 0, 0, 0.0),
            Layer::Dense(d) => (5, d.inputs, d.outputs, 0.0),
            Layer::Softmax => (6, 0, 0, 0.0),
        };
        out.push(kind);
        put(&mut out, a);
        put(&mut out, b);
        out.extend_from_slice(&rate.to_le_bytes());
    }
    for p in model.params() {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Truncated(format!("{what} at offset {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Parse("overflow".into()))?,
            what,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != NLMD_MAGIC {
        return Err(Error::BadMagic {
            expected: "NLMD".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = cur.u32("version")? as u32;
    if version != NLMD_VERSION {
        return Err(Error::Version {
            found: version,
            expected: NLMD_VERSION,
        });
    }
    let architecture = match cur.u32("architecture")? {
        0 => Architecture::SmallCnn,
        1 => Architecture::EnhancedCnn,
        2 => Architecture::Custom,
        other => return Err(Error::Parse(format!("architecture code {other}"))),
    };
    let h = cur.u32("H")?;
    let w = cur.u32("W")?;
    let c = cur.u32("C")?;
    let n_classes = cur.u32("n_classes")?;
    let n_layers = cur.u32("n_layers")?;
    let mut descriptors = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let kind = cur.take(1, "layer kind")?[0];
        let a = cur.u32("layer descriptor")?;
        let b = cur.u32("layer descriptor")?;
        let rate = f64::from_le_bytes(cur.take(8, "layer descriptor")?.try_into().unwrap());
        descriptors.push((kind, a, b, rate));
    }
    let mut layers = Vec::with_capacity(descriptors.len());
    for (kind, a, b, rate) in descriptors {
        let layer = match kind {
            0 => Layer::Conv2d(Conv2d {
                in_ch: a,
                out_ch: b,
                weight: Tensor::new(vec![9 * a, b], cur.f64s(9 * a * b, "conv weight")?)?,
                bias: Tensor::new(vec![b], cur.f64s(b, "conv bias")?)?,
            }),
            1 => Layer::MaxPool2x2,
            2 => Layer::Relu,
            3 => Layer::Dropout { rate },
            4 => Layer::Flatten,
            5 => Layer::Dense(Dense {
                inputs: a,
                outputs: b,
                weight: Tensor::new(vec![a, b], cur.f64s(a * b, "dense weight")?)?,
                bias: Tensor::new(vec![b], cur.f64s(b, "dense bias")?)?,
            }),
            6 => Layer::Softmax,
            other => return Err(Error::Parse(format!("layer kind {other}"))),
        };
        layers.push(layer);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Parse(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    Model::from_layers(architecture, (h, w, c), n_classes, layers)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let m = Model::build(Architecture::SmallCnn, (8, 8, 1), 3, 4).unwrap();
        let bytes = to_bytes(&m);
        assert_eq!(&bytes[..4], b"NLMD");
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back.layers(), m.layers());
        assert_eq!(back.architecture(), Architecture::SmallCnn);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let m = Model::build(Architecture::SmallCnn, (8, 8, 1), 3, 4).unwrap();
        let bytes = to_bytes(&m);
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            from_bytes(&bad),
            Err(Error::Version { found: 9, .. })
        ));
        assert!(matches!(
            from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated(_))
        ));
    }
}
