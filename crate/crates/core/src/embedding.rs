//! Word-vector table in the plain-text word2vec format.
//!
//! ```text
//! 2 3
//! lung 0.1 0.2 0.3
//! nevus 1 0 0
//! ```
//!
//! The header line is optional; without it the dimension is taken from the
//! first vector line.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numcore::Tensor2;

pub const UNK_TOKEN: &str = "<unk>";
pub const UNK_ID: usize = 0;

/// Word → vector lookup with a dedicated all-zero UNK row at id 0.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    words: Vec<String>,
    vectors: Tensor2,
    /// Whether the models may fine-tune the vectors.
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            index: HashMap::new(),
            words: vec![UNK_TOKEN.to_string()],
            vectors: Tensor2::zeros(1, dim),
            trainable: false,
        }
    }

    /// Builds a table from `(word, vector)` pairs. Later duplicates are
    /// ignored.
    pub fn from_pairs<I>(dim: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut words = vec![UNK_TOKEN.to_string()];
        let mut index = HashMap::new();
        let mut data = vec![0.0; dim];
        for (w, v) in pairs {
            if v.len() != dim {
                return Err(Error::invalid(format!(
                    "vector for {w:?} has {} values, expected {dim}",
                    v.len()
                )));
            }
            if w == UNK_TOKEN || index.contains_key(&w) {
                continue;
            }
            index.insert(w.clone(), words.len());
            words.push(w);
            data.extend(v);
        }
        let vectors = Tensor2::from_vec(words.len(), dim, data)?;
        Ok(EmbeddingTable {
            dim,
            index,
            words,
            vectors,
            trainable: false,
        })
    }

    /// Random vectors, uniform in `±0.5`, for the given words. Values are
    /// drawn as `f32` so the table survives a checkpoint round trip exactly.
    pub fn random<R: Rng + ?Sized>(words: &[String], dim: usize, rng: &mut R) -> Result<Self> {
        let pairs = words
            .iter()
            .map(|w| {
                let v = (0..dim)
                    .map(|_| f64::from(rng.random_range(-0.5f32..0.5)))
                    .collect();
                (w.clone(), v)
            })
            .collect::<Vec<_>>();
        Self::from_pairs(dim, pairs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = File::open(path.as_ref())?;
        Self::read(BufReader::new(f))
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut dim: Option<usize> = None;
        let mut declared_count: Option<usize> = None;
        let mut pairs: Vec<(String, Vec<f64>)> = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if lineno == 1 && fields.len() == 2 {
                if let (Ok(n), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                    declared_count = Some(n);
                    dim = Some(d);
                    continue;
                }
            }
            let word = fields[0];
            let values = &fields[1..];
            let d = *dim.get_or_insert(values.len());
            if d == 0 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "embedding dimension must be positive".into(),
                });
            }
            if values.len() != d {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected {d} values for {word:?}, found {}", values.len()),
                });
            }
            let mut v = Vec::with_capacity(d);
            for s in values {
                let x: f64 = s.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("invalid number {s:?}"),
                })?;
                if !x.is_finite() {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("non-finite value {s:?}"),
                    });
                }
                v.push(x);
            }
            pairs.push((word.to_string(), v));
        }
        let dim = dim.ok_or_else(|| Error::Parse {
            line: 1,
            msg: "empty embedding file".into(),
        })?;
        if let Some(n) = declared_count {
            if n != pairs.len() {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("header declares {n} words, file has {}", pairs.len()),
                });
            }
        }
        let table = Self::from_pairs(dim, pairs)?;
        if table.len() != declared_count.unwrap_or(table.len()) {
            log::warn!("embedding file contains duplicate words; kept first occurrences");
        }
        Ok(table)
    }

    /// Writes the table (without the UNK row) with a header line.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim)?;
        for (id, word) in self.words.iter().enumerate().skip(1) {
            write!(w, "{word}")?;
            for x in self.vectors.row(id) {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = File::create(path.as_ref())?;
        let mut w = std::io::BufWriter::new(f);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of real words (UNK excluded).
    pub fn len(&self) -> usize {
        self.words.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn words(&self) -> &[String] {
        &self.words[1..]
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn vector(&self, id: usize) -> &[f64] {
        self.vectors.row(id)
    }

    pub fn lookup(&self, word: &str) -> &[f64] {
        self.vector(self.id(word))
    }

    pub fn vectors(&self) -> &Tensor2 {
        &self.vectors
    }

    pub fn vectors_mut(&mut self) -> &mut Tensor2 {
        &mut self.vectors
    }

    /// Replaces the vectors (same shape) after fine-tuning.
    pub fn with_vectors(&self, vectors: Tensor2) -> Result<Self> {
        if vectors.shape() != self.vectors.shape() {
            return Err(Error::invalid("replacement embedding matrix has the wrong shape"));
        }
        let mut t = self.clone();
        t.vectors = vectors;
        Ok(t)
    }

    /// SHA-256 over dimension, word order and vector bits.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for (id, word) in self.words.iter().enumerate() {
            h.update(word.as_bytes());
            h.update([0u8]);
            for x in self.vectors.row(id) {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Coordinate-wise mean of the token vectors; zero vector for no tokens.
pub fn mean_embedding<S: AsRef<str>>(tokens: &[S], table: &EmbeddingTable) -> Vec<f64> {
    mean_of_ids(&table.ids(tokens), table.vectors())
}

pub fn mean_of_ids(ids: &[usize], vectors: &Tensor2) -> Vec<f64> {
    let mut out = vec![0.0; vectors.cols()];
    if ids.is_empty() {
        return out;
    }
    for &id in ids {
        for (o, v) in out.iter_mut().zip(vectors.row(id)) {
            *o += v;
        }
    }
    let n = ids.len() as f64;
    out.iter_mut().for_each(|x| *x /= n);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<EmbeddingTable> {
        EmbeddingTable::read(s.as_bytes())
    }

    #[test]
    fn header_file() {
        let t = parse("2 3\nlung 0.1 0.2 0.3\nnevus 1 0 0\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.dim(), 3);
        assert_eq!(t.lookup("lung"), &[0.1, 0.2, 0.3]);
    }

    #[test]
    fn headerless_infers_dimension() {
        let t = parse("lung 0.1 0.2\nnevus 1 0\n").unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn absent_word_is_unk() {
        let t = parse("lung 0.1 0.2\n").unwrap();
        assert_eq!(t.id("melanoma"), UNK_ID);
        assert_eq!(t.lookup("melanoma"), &[0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_names_line() {
        let err = parse("2 3\nlung 0.1 0.2 0.3\nnevus 1 0\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let err = parse("lung 1 2\nbad x y\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn write_then_read_preserves_hash() {
        let t = parse("3 2\na 0.1 -0.25\nb 1e-3 7\nc 0.3333333333333333 2\n").unwrap();
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        let back = EmbeddingTable::read(buf.as_slice()).unwrap();
        assert_eq!(t.content_hash(), back.content_hash());
    }

    #[test]
    fn mean_embedding_cases() {
        let t = parse("a 1 0\nb 0 1\n").unwrap();
        assert_eq!(mean_embedding(&["a"], &t), vec![1.0, 0.0]);
        assert_eq!(mean_embedding::<&str>(&[], &t), vec![0.0, 0.0]);
        assert_eq!(mean_embedding(&["a", "b"], &t), vec![0.5, 0.5]);
        assert_eq!(mean_embedding(&["b", "a"], &t), mean_embedding(&["a", "b"], &t));
    }
}
