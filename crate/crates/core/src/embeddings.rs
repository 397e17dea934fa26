//! Per-subword context vectors.
//!
//! The encoder is not part of this crate. Vectors come either from a table
//! file (`EMB v1`) produced elsewhere or from a deterministic pseudo-random
//! backend that depends on the subword string and its position.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_DIM: usize = 768;

#[derive(Clone, Debug)]
pub enum Backend {
    PseudoRandom { seed: u64 },
    Table(HashMap<(String, usize), Vec<f64>>),
}

#[derive(Clone, Debug)]
pub struct EmbeddingProvider {
    backend: Backend,
    dim: usize,
}

impl EmbeddingProvider {
    pub fn pseudo_random(seed: u64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingProvider {
            backend: Backend::PseudoRandom { seed },
            dim,
        })
    }

    pub fn from_table(dim: usize, table: HashMap<(String, usize), Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("embedding dimension must be positive".into()));
        }
        if let Some(((id, idx), v)) = table.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::EmbeddingFormat(format!(
                "record ({}, {}) has {} values, expected {}",
                id,
                idx,
                v.len(),
                dim
            )));
        }
        Ok(EmbeddingProvider {
            backend: Backend::Table(table),
            dim,
        })
    }

    /// Parses a provider description: `pseudo:<seed>:<dim>` or a table file path.
    pub fn from_spec(spec: &str) -> Result<Self> {
        if let Some(rest) = spec.strip_prefix("pseudo:") {
            let (seed, dim) = rest
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("expected pseudo:<seed>:<dim>, got '{}'", spec)))?;
            let seed = seed
                .parse()
                .map_err(|_| Error::Config(format!("bad embedding seed '{}'", seed)))?;
            let dim = dim
                .parse()
                .map_err(|_| Error::Config(format!("bad embedding dimension '{}'", dim)))?;
            Self::pseudo_random(seed, dim)
        } else {
            load_embedding_file(spec)
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    /// One row per subword.
    pub fn embed_sentence<S: AsRef<str>>(&self, subwords: &[S], sent_id: &str) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((subwords.len(), self.dim));
        match &self.backend {
            Backend::PseudoRandom { seed } => {
                for (position, subword) in subwords.iter().enumerate() {
                    let mut rng = ChaCha8Rng::seed_from_u64(pseudo_key(*seed, subword.as_ref(), position));
                    for value in out.row_mut(position) {
                        *value = rng.gen_range(-0.5..0.5);
                    }
                }
            }
            Backend::Table(table) => {
                for position in 0..subwords.len() {
                    let row = table
                        .get(&(sent_id.to_string(), position))
                        .ok_or_else(|| Error::MissingEmbedding {
                            sent_id: sent_id.to_string(),
                            position,
                        })?;
                    for (d, &v) in row.iter().enumerate() {
                        out[[position, d]] = v;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Checks that every position of every sentence can be embedded.
    pub fn check_coverage<S: AsRef<str>>(&self, sent_id: &str, subwords: &[S]) -> Result<()> {
        if let Backend::Table(table) = &self.backend {
            for position in 0..subwords.len() {
                if !table.contains_key(&(sent_id.to_string(), position)) {
                    return Err(Error::MissingEmbedding {
                        sent_id: sent_id.to_string(),
                        position,
                    });
                }
            }
        }
        Ok(())
    }
}

// FNV-1a over the key material, finished with a splitmix64 round.
fn pseudo_key(seed: u64, subword: &str, position: usize) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    feed(&seed.to_le_bytes());
    feed(subword.as_bytes());
    feed(&[0xff]);
    feed(&(position as u64).to_le_bytes());

    let mut z = hash.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn parse_embedding_table(text: &str) -> Result<EmbeddingProvider> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::EmbeddingFormat("no header".into()))?;

    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "EMB" || fields[1] != "v1" {
        return Err(Error::EmbeddingFormat(format!("bad header '{}'", header)));
    }
    let header_value = |field: &str, key: &str| -> Result<usize> {
        field
            .strip_prefix(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::EmbeddingFormat(format!("bad header field '{}'", field)))
    };
    let dim = header_value(fields[2], "dim=")?;
    let count = header_value(fields[3], "count=")?;

    let mut table = HashMap::with_capacity(count);
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != dim + 2 {
            return Err(Error::EmbeddingFormat(format!(
                "line {}: expected {} fields, found {}",
                lineno + 1,
                dim + 2,
                fields.len()
            )));
        }
        let index: usize = fields[1]
            .parse()
            .map_err(|_| Error::EmbeddingFormat(format!("line {}: bad subword index '{}'", lineno + 1, fields[1])))?;
        let values = fields[2..]
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::EmbeddingFormat(format!("line {}: {}", lineno + 1, e)))?;
        table.insert((fields[0].to_string(), index), values);
    }
    if table.len() != count {
        return Err(Error::EmbeddingFormat(format!(
            "header announces {} records, found {}",
            count,
            table.len()
        )));
    }
    EmbeddingProvider::from_table(dim, table)
}

pub fn load_embedding_file(path: impl AsRef<Path>) -> Result<EmbeddingProvider> {
    parse_embedding_table(&std::fs::read_to_string(path)?)
}

/// Serializes a table in `EMB v1` format, records ordered by (sent_id, index).
pub fn write_embedding_table(dim: usize, table: &HashMap<(String, usize), Vec<f64>>) -> String {
    let mut keys: Vec<_> = table.keys().collect();
    keys.sort();
    let mut out = format!("EMB v1 dim={} count={}\n", dim, table.len());
    for key in keys {
        write!(out, "{} {}", key.0, key.1).unwrap();
        for v in &table[key] {
            write!(out, " {}", v).unwrap();
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_backend_is_deterministic() {
        let provider = EmbeddingProvider::pseudo_random(1, 16).unwrap();
        let a = provider.embed_sentence(&["the", "cat"], "s1").unwrap();
        let b = provider.embed_sentence(&["the", "cat"], "s1").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), (2, 16));
        assert!(a.iter().all(|v| (-0.5..0.5).contains(v)));

        let other = EmbeddingProvider::pseudo_random(2, 16).unwrap();
        let c = other.embed_sentence(&["the", "cat"], "s1").unwrap();
        assert_ne!(a[[0, 0]], c[[0, 0]]);
    }

    #[test]
    fn pseudo_backend_depends_on_identity_and_position() {
        let provider = EmbeddingProvider::pseudo_random(7, 8).unwrap();
        let m = provider.embed_sentence(&["a", "a", "b"], "x").unwrap();
        assert_ne!(m.row(0), m.row(1));
        let swapped = provider.embed_sentence(&["b", "a", "a"], "x").unwrap();
        assert_eq!(m.row(1), swapped.row(1));
        assert_ne!(m.row(0), swapped.row(0));
    }

    #[test]
    fn pseudo_backend_is_centered() {
        let provider = EmbeddingProvider::pseudo_random(3, 4).unwrap();
        let words: Vec<String> = (0..10_000).map(|i| format!("w{}", i % 97)).collect();
        let m = provider.embed_sentence(&words, "big").unwrap();
        for d in 0..4 {
            let mean = m.column(d).mean().unwrap();
            assert!(mean.abs() < 0.1, "dimension {} mean {}", d, mean);
        }
    }

    #[test]
    fn table_lookup() {
        let text = "EMB v1 dim=8 count=2\n\
s1 0 1 2 3 4 5 6 7 8\n\
s1 1 -1 -2 -3 -4 -5 -6 -7 -8.5\n";
        let provider = parse_embedding_table(text).unwrap();
        assert_eq!(provider.dim(), 8);
        let m = provider.embed_sentence(&["x", "y"], "s1").unwrap();
        assert_eq!(m.dim(), (2, 8));
        assert_eq!(m[[0, 7]], 8.0);
        assert_eq!(m[[1, 7]], -8.5);

        match provider.embed_sentence(&["x", "y", "z"], "s1") {
            Err(Error::MissingEmbedding { sent_id, position }) => {
                assert_eq!(sent_id, "s1");
                assert_eq!(position, 2);
            }
            other => panic!("unexpected {:?}", other),
        }
        assert!(provider.check_coverage("s2", &["x"]).is_err());
    }

    #[test]
    fn table_format_errors() {
        match parse_embedding_table("") {
            Err(Error::EmbeddingFormat(msg)) => assert_eq!(msg, "no header"),
            other => panic!("unexpected {:?}", other),
        }
        assert!(parse_embedding_table("EMB v1 dim=3 count=1\ns1 0 1 2\n").is_err());
        assert!(parse_embedding_table("EMB v1 dim=1 count=2\ns1 0 1\n").is_err());
        assert!(parse_embedding_table("EMB v2 dim=1 count=0\n").is_err());
    }

    #[test]
    fn table_round_trip() {
        let mut table = HashMap::new();
        table.insert(("a".to_string(), 0), vec![0.1, -1e-7]);
        table.insert(("a".to_string(), 1), vec![1.0 / 3.0, 2.5]);
        let text = write_embedding_table(2, &table);
        let provider = parse_embedding_table(&text).unwrap();
        match provider.backend() {
            Backend::Table(parsed) => assert_eq!(parsed, &table),
            _ => unreachable!(),
        }
    }

    #[test]
    fn spec_strings() {
        assert_eq!(EmbeddingProvider::from_spec("pseudo:3:12").unwrap().dim(), 12);
        assert!(EmbeddingProvider::from_spec("pseudo:3").is_err());
        assert!(EmbeddingProvider::from_spec("pseudo:3:0").is_err());
    }
}
