//! Binary checkpoint of a network and (optionally) its prototype set.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic            8 bytes  "VMFMLCKP"
//! version          u32      1
//! activation       u8       0 = relu, 1 = tanh
//! has_prototypes   u8       0 or 1
//! reserved         u16      0
//! init_seed        u64
//! width_count      u32      number of layer widths (L + 1)
//! widths           u64 x (L + 1)
//! per layer l:     f64 x (w_l * w_{l+1})  weights, row-major fan_in x fan_out
//!                  f64 x w_{l+1}          biases
//! if has_prototypes:
//!   kappa          f64
//!   classes        u32
//!   dim            u32
//!   mus            f64 x (classes * dim)  row-major, one prototype per row
//! ```
//!
//! The file ends exactly after the last field; trailing bytes are rejected.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::network::{Activation, Network, NetworkConfig};
use crate::objective::PrototypeSet;
use crate::sphere::UnitVector;

pub const MAGIC: &[u8; 8] = b"VMFMLCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub prototypes: Option<PrototypeSet>,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let cfg = self.network.config();
        let mut out = Vec::with_capacity(64 + 8 * self.network.parameter_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(cfg.activation.code());
        out.push(u8::from(self.prototypes.is_some()));
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&cfg.seed.to_le_bytes());
        out.extend_from_slice(&(cfg.layer_widths.len() as u32).to_le_bytes());
        for &w in &cfg.layer_widths {
            out.extend_from_slice(&(w as u64).to_le_bytes());
        }
        for (w, b) in self.network.weights().iter().zip(self.network.biases()) {
            // Iteration order of a standard-layout array is row-major.
            for x in w.iter().chain(b.iter()) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        if let Some(protos) = &self.prototypes {
            out.extend_from_slice(&protos.kappa().to_le_bytes());
            out.extend_from_slice(&(protos.num_classes() as u32).to_le_bytes());
            out.extend_from_slice(&(protos.dim() as u32).to_le_bytes());
            for mu in protos.mus() {
                for x in mu.as_slice() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let activation =
            Activation::from_code(r.u8()?).ok_or_else(|| Error::Checkpoint("unknown activation code".into()))?;
        let has_protos = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(Error::Checkpoint(format!("bad prototype flag {other}"))),
        };
        r.take(2)?;
        let seed = r.u64()?;
        let count = r.u32()? as usize;
        if !(2..=64).contains(&count) {
            return Err(Error::Checkpoint(format!("implausible layer count {count}")));
        }
        let widths = (0..count)
            .map(|_| r.u64().map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        let config = NetworkConfig::new(widths.clone(), activation, seed);
        config.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let w = r.f64s(pair[0] * pair[1])?;
            weights.push(Array2::from_shape_vec((pair[0], pair[1]), w).expect("length checked"));
            biases.push(Array1::from(r.f64s(pair[1])?));
        }
        let network = Network::from_parts(config, weights, biases).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let prototypes = if has_protos {
            let kappa = r.f64()?;
            let classes = r.u32()? as usize;
            let dim = r.u32()? as usize;
            let mut mus = Vec::with_capacity(classes);
            for _ in 0..classes {
                let coords = r.f64s(dim)?;
                mus.push(UnitVector::new(coords).map_err(|e| Error::Checkpoint(e.to_string()))?);
            }
            Some(PrototypeSet::new(mus, kappa).map_err(|e| Error::Checkpoint(e.to_string()))?)
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { network, prototypes })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::decode(&bytes)
    }
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
            .ok_or_else(|| Error::Checkpoint(format!("truncated: needed {n} bytes at offset {}", self.pos)))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
