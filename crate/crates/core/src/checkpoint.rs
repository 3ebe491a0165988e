//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian `u32`, floats little-endian `f64`):
//!
//! ```text
//! magic      8 bytes   "VANCKPT\0"
//! version    u32       1
//! header     u32 len + UTF-8 text, one `key=value` per line, in order:
//!            variant, dim, k, hidden, classes, sigma_t2, seed
//! tensors    u32 count, then per tensor:
//!            u32 name len + name, u32 rows, u32 cols, rows*cols f64 (row-major)
//! ```
//!
//! Tensors appear as `fc1.weight`, `fc1.bias`, `fc2.weight`, `fc2.bias` and,
//! for `van_o`, `var_head.weight`, `var_head.bias`. Biases are stored as
//! `1 × cols`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::moments::WeightMatrix;
use crate::network::{Network, NetworkConfig, NetworkParams};

const MAGIC: &[u8; 8] = b"VANCKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub seed: u64,
}

pub(crate) struct Writer(pub Vec<u8>);

impl Writer {
    pub fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("value fits in u32");
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    pub fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    pub fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
}

pub(crate) struct Reader<'a> {
    pub buf: &'a [u8],
    pub what: &'static str,
}

impl<'a> Reader<'a> {
    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::format(self.what, "unexpected end of file"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }
    pub fn u32(&mut self) -> Result<usize> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }
    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }
    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::format(self.what, "tensor too large"))?;
        let b = self.bytes(len)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    pub fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        let b = self.bytes(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::format(self.what, "invalid UTF-8"))
    }
    pub fn expect_magic(&mut self, magic: &[u8]) -> Result<()> {
        if self.bytes(magic.len())? != magic {
            return Err(Error::format(self.what, "bad magic"));
        }
        Ok(())
    }
    pub fn finish(&self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::format(self.what, "trailing bytes"))
        }
    }
}

/// Parses `key=value` lines into ordered pairs.
pub(crate) fn parse_header(text: &str, what: &'static str) -> Result<Vec<(String, String)>> {
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::format(what, format!("bad header line `{l}`")))
        })
        .collect()
}

fn header_value<T: std::str::FromStr>(pairs: &[(String, String)], key: &str) -> Result<T> {
    let raw = pairs
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v)
        .ok_or_else(|| Error::format("checkpoint", format!("missing header key `{key}`")))?;
    raw.parse()
        .map_err(|_| Error::format("checkpoint", format!("bad value for `{key}`: {raw}")))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.network.config;
        let mut w = Writer(MAGIC.to_vec());
        w.u32(VERSION as usize);
        let header = format!(
            "variant={}\ndim={}\nk={}\nhidden={}\nclasses={}\nsigma_t2={}\nseed={}\n",
            c.variant, c.dim, c.k, c.hidden, c.classes, c.sigma_t2, self.seed
        );
        w.str(&header);
        let layers = self.network.params.layers();
        w.u32(layers.len() * 2);
        for (name, m) in layers {
            w.str(&format!("{name}.weight"));
            w.u32(m.rows);
            w.u32(m.cols);
            w.f64s(&m.values);
            w.str(&format!("{name}.bias"));
            w.u32(1);
            w.u32(m.cols);
            w.f64s(&m.bias);
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader {
            buf: bytes,
            what: "checkpoint",
        };
        r.expect_magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let pairs = parse_header(&r.string()?, "checkpoint")?;
        let config = NetworkConfig {
            variant: header_value::<String>(&pairs, "variant")?.parse()?,
            dim: header_value(&pairs, "dim")?,
            k: header_value(&pairs, "k")?,
            hidden: header_value(&pairs, "hidden")?,
            classes: header_value(&pairs, "classes")?,
            sigma_t2: header_value(&pairs, "sigma_t2")?,
        };
        let seed = header_value(&pairs, "seed")?;

        let count = r.u32()?;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let rows = r.u32()?;
            let cols = r.u32()?;
            let values = r.f64s(rows * cols)?;
            tensors.push((name, rows, cols, values));
        }
        r.finish()?;

        let take = |name: &str| -> Result<Option<WeightMatrix>> {
            let weight = tensors.iter().position(|t| t.0 == format!("{name}.weight"));
            let bias = tensors.iter().position(|t| t.0 == format!("{name}.bias"));
            match (weight, bias) {
                (None, None) => Ok(None),
                (Some(wi), Some(bi)) => {
                    let (_, rows, cols, values) = tensors[wi].clone();
                    let bias = tensors[bi].3.clone();
                    WeightMatrix::new(rows, cols, values, bias).map(Some)
                }
                _ => Err(Error::format("checkpoint", format!("incomplete tensor pair `{name}`"))),
            }
        };
        let missing = |n: &str| Error::format("checkpoint", format!("missing `{n}` tensors"));
        let params = NetworkParams {
            fc1: take("fc1")?.ok_or_else(|| missing("fc1"))?,
            fc2: take("fc2")?.ok_or_else(|| missing("fc2"))?,
            var_head: take("var_head")?,
        };
        Ok(Self {
            network: Network::from_parts(config, params)?,
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Variant;

    #[test]
    fn round_trip_every_variant() {
        for v in Variant::ALL {
            let cfg = NetworkConfig {
                variant: v,
                dim: 2,
                k: 1,
                hidden: 3,
                classes: 2,
                sigma_t2: 0.01,
            };
            let ck = Checkpoint {
                network: Network::build(cfg, 5).unwrap(),
                seed: 5,
            };
            let bytes = ck.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let cfg = NetworkConfig::reference(Variant::Baseline);
        let cfg = NetworkConfig { dim: 2, hidden: 2, ..cfg };
        let bytes = Checkpoint { network: Network::build(cfg, 1).unwrap(), seed: 1 }.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"nonsense").is_err());
    }
}
