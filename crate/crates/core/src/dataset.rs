//! Train/test splits and their on-disk container.
//!
//! ```text
//! magic      8 bytes  "VANDATA\0"
//! version    u32      1
//! header     u32 len + UTF-8 `key=value` lines (generator config echo, then `split`)
//! sequences  u32 count, then per sequence:
//!            u32 id, u32 len, u32 dim, len*dim f64 (row-major units),
//!            u32 n, then n × (u32 class, u32 start, u32 end)
//! proposals  u32 count, then per proposal:
//!            u32 seq_id, u32 start, u32 end, u32 label, u8 has_target,
//!            [f64 start offset, f64 end offset, f64 sigma2] if has_target
//! ```
//!
//! Integers are little-endian `u32`, floats little-endian `f64`. Writing a
//! file that was just read reproduces it byte for byte.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::checkpoint::{parse_header, Reader, Writer};
use crate::error::{Error, Result};
use crate::layers::PooledFeature;
use crate::losses::{Assignment, RegressionTarget};
use crate::config::KeyValue;
use crate::rng;
use crate::synth::{featurize, gen_proposals, gen_sequence, Annotation, Proposal, SynthConfig, SyntheticSequence};

const MAGIC: &[u8; 8] = b"VANDATA\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Test,
}

impl SplitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        match self {
            SplitKind::Train => 0x7a1,
            SplitKind::Test => 0x7e5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `key=value` lines echoing the generator configuration.
    pub header: String,
    pub sequences: Vec<SyntheticSequence>,
    pub proposals: Vec<Proposal>,
}

/// One training example: pooled input and what it should predict.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub feature: PooledFeature,
    pub assignment: Assignment,
}

/// Generates `count` sequences and their proposals. Each sequence draws from
/// a stream keyed by `(seed, split, id)`, so splits never share randomness.
pub fn gen_split(config: &SynthConfig, kind: SplitKind, count: usize) -> Result<Dataset> {
    config.validate()?;
    let made: Vec<(SyntheticSequence, Vec<Proposal>)> = (0..count as u32)
        .into_par_iter()
        .map(|id| {
            let seed = rng::derive_seed(config.seed, &[kind.tag(), u64::from(id)]);
            let seq = gen_sequence(config, id, seed)?;
            let props = gen_proposals(&seq, config, rng::derive_seed(seed, &[1]));
            Ok((seq, props))
        })
        .collect::<Result<_>>()?;
    let mut header = String::new();
    for (k, v) in config.echo() {
        header.push_str(&format!("{k}={v}\n"));
    }
    header.push_str(&format!("split={}\n", kind.as_str()));
    let (sequences, proposals): (Vec<_>, Vec<_>) = made.into_iter().unzip();
    Ok(Dataset {
        header,
        sequences,
        proposals: proposals.into_iter().flatten().collect(),
    })
}

impl Dataset {
    pub fn sequence(&self, id: u32) -> Result<&SyntheticSequence> {
        self.sequences
            .get(id as usize)
            .filter(|s| s.id == id)
            .or_else(|| self.sequences.iter().find(|s| s.id == id))
            .ok_or_else(|| Error::usage(format!("no sequence with id {id}")))
    }

    pub fn header_pairs(&self) -> Result<Vec<(String, String)>> {
        parse_header(&self.header, "dataset")
    }

    /// Pools every proposal with `k` parts.
    pub fn examples(&self, k: usize) -> Result<Vec<Example>> {
        self.proposals
            .par_iter()
            .map(|p| {
                let seq = self.sequence(p.seq_id)?;
                Ok(Example {
                    feature: featurize(seq, p, k)?,
                    assignment: p.assignment(),
                })
            })
            .collect()
    }

    /// Number of proposals per label, index 0 being background.
    pub fn label_histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes + 1];
        for p in &self.proposals {
            if p.label < h.len() {
                h[p.label] += 1;
            }
        }
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(MAGIC.to_vec());
        w.u32(VERSION as usize);
        w.str(&self.header);
        w.u32(self.sequences.len());
        for s in &self.sequences {
            w.u32(s.id as usize);
            w.u32(s.len);
            w.u32(s.dim);
            w.f64s(&s.units);
            w.u32(s.annotations.len());
            for a in &s.annotations {
                w.u32(a.class);
                w.u32(a.start);
                w.u32(a.end);
            }
        }
        w.u32(self.proposals.len());
        for p in &self.proposals {
            w.u32(p.seq_id as usize);
            w.u32(p.start);
            w.u32(p.end);
            w.u32(p.label);
            match p.target {
                None => w.u8(0),
                Some(t) => {
                    w.u8(1);
                    w.f64s(&[t.start.mu, t.end.mu, t.start.sigma2]);
                }
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader {
            buf: bytes,
            what: "dataset",
        };
        r.expect_magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::format("dataset", format!("unsupported version {version}")));
        }
        let header = r.string()?;
        parse_header(&header, "dataset")?;

        let n = r.u32()?;
        let mut sequences = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let id = r.u32()? as u32;
            let len = r.u32()?;
            let dim = r.u32()?;
            let units = r.f64s(len * dim)?;
            let na = r.u32()?;
            let mut annotations = Vec::with_capacity(na.min(1 << 16));
            for _ in 0..na {
                let (class, start, end) = (r.u32()?, r.u32()?, r.u32()?);
                if start >= end || end > len {
                    return Err(Error::format("dataset", format!("bad annotation [{start}, {end})")));
                }
                annotations.push(Annotation { class, start, end });
            }
            sequences.push(SyntheticSequence {
                id,
                len,
                dim,
                units,
                annotations,
            });
        }

        let np = r.u32()?;
        let mut proposals = Vec::with_capacity(np.min(1 << 20));
        for _ in 0..np {
            let seq_id = r.u32()? as u32;
            let (start, end, label) = (r.u32()?, r.u32()?, r.u32()?);
            let target = match r.u8()? {
                0 => None,
                1 => {
                    let v = r.f64s(3)?;
                    Some(RegressionTarget::new(v[0], v[1], v[2]))
                }
                b => return Err(Error::format("dataset", format!("bad target flag {b}"))),
            };
            if start >= end || (label == 0) != target.is_none() {
                return Err(Error::format("dataset", "inconsistent proposal record"));
            }
            proposals.push(Proposal {
                seq_id,
                start,
                end,
                label,
                target,
            });
        }
        r.finish()?;
        Ok(Self {
            header,
            sequences,
            proposals,
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
    use proptest::prelude::*;

    fn small() -> SynthConfig {
        SynthConfig {
            dim: 3,
            t_min: 80,
            t_max: 120,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn splits_do_not_share_sequences() {
        let cfg = small();
        let train = gen_split(&cfg, SplitKind::Train, 10).unwrap();
        let test = gen_split(&cfg, SplitKind::Test, 10).unwrap();
        for a in &train.sequences {
            assert!(test.sequences.iter().all(|b| a.units != b.units));
        }
        assert!(train.header.ends_with("split=train\n"));
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small();
        let a = gen_split(&cfg, SplitKind::Train, 6).unwrap();
        let b = gen_split(&cfg, SplitKind::Train, 6).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let d = gen_split(&small(), SplitKind::Test, 2).unwrap();
        let bytes = d.to_bytes();
        assert!(Dataset::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Dataset::from_bytes(&extra).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn byte_exact_round_trip(seed in 0u64..10_000, n in 0usize..4) {
            let cfg = SynthConfig { seed, ..small() };
            let d = gen_split(&cfg, SplitKind::Train, n).unwrap();
            let bytes = d.to_bytes();
            let back = Dataset::from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &d);
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
