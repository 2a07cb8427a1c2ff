//! `FHB1` checkpoint: layer weights, optional probe, the config text the run
//! was started from, and the RNG state after pretraining.
//!
//! Layout (little-endian): magic, `u32` version, `u32` layer count; per layer
//! a `u8` rule id, `u8` rank, `u32` extents and `f64` data; a `u8` probe flag
//! followed by `u32` K, `u32` F, weights, bias, mean and std; the `u32`
//! length-prefixed config text; the RNG seed (32 bytes), `u64` stream and
//! `u128` word position.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use super::probe::LinearProbe;
use crate::error::{Error, Result};
use crate::rules::Rule;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"FHB1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub rule: Rule,
    pub weights: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub layers: Vec<LayerRecord>,
    pub probe: Option<LinearProbe>,
    pub config: String,
    pub rng: RngState,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v)
        .map_err(|_| Error::CorruptFile(format!("value {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_u32(&mut out, self.layers.len())?;
        for layer in &self.layers {
            out.push(layer.rule.id());
            out.push(layer.weights.rank() as u8);
            for &d in layer.weights.shape() {
                put_u32(&mut out, d)?;
            }
            put_f64s(&mut out, layer.weights.data());
        }
        match &self.probe {
            None => out.push(0),
            Some(p) => {
                out.push(1);
                put_u32(&mut out, p.classes())?;
                put_u32(&mut out, p.features())?;
                put_f64s(&mut out, p.weights.data());
                put_f64s(&mut out, &p.bias);
                put_f64s(&mut out, &p.mean);
                put_f64s(&mut out, &p.std);
            }
        }
        put_u32(&mut out, self.config.len())?;
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found: magic,
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                expected: VERSION,
                found: version,
            });
        }
        let count = r.u32()? as usize;
        let mut layers = Vec::new();
        for _ in 0..count {
            let id = r.u8()?;
            let rule = Rule::from_id(id)
                .ok_or_else(|| Error::CorruptFile(format!("unknown rule id {id}")))?;
            let rank = r.u8()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = checked_product(&shape)?;
            let data = r.f64s(len)?;
            let weights =
                Tensor::new(shape, data).map_err(|e| Error::CorruptFile(e.to_string()))?;
            layers.push(LayerRecord { rule, weights });
        }
        let probe = match r.u8()? {
            0 => None,
            1 => {
                let k = r.u32()? as usize;
                let f = r.u32()? as usize;
                let data = r.f64s(checked_product(&[k, f])?)?;
                let weights =
                    Tensor::new([k, f], data).map_err(|e| Error::CorruptFile(e.to_string()))?;
                Some(LinearProbe {
                    weights,
                    bias: r.f64s(k)?,
                    mean: r.f64s(f)?,
                    std: r.f64s(f)?,
                })
            }
            flag => return Err(Error::CorruptFile(format!("bad probe flag {flag}"))),
        };
        let len = r.u32()? as usize;
        let config = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::CorruptFile("config text is not UTF-8".into()))?;
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        if r.pos != bytes.len() {
            return Err(Error::CorruptFile(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            layers,
            probe,
            config,
            rng: RngState {
                seed,
                stream,
                word_pos,
            },
        })
    }
}

fn checked_product(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::CorruptFile("tensor extents overflow".into()))
}

fn truncated(len: usize) -> Error {
    Error::CorruptFile(format!("truncated after {len} bytes"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| truncated(self.bytes.len()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| truncated(self.bytes.len()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    fs::write(path, checkpoint.encode()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::decode(&fs::read(path)?)
}
