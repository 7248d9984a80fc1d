//! Pretrained word-vector tables in the whitespace-separated text format
//! (`word v1 v2 ... vD` per line).

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::scene::{tokenize, TextToken, TOKEN_DIM};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a row under its case-folded key; the first row for a key wins.
    pub fn insert(&mut self, word: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != TOKEN_DIM {
            return Err(CoreError::Dimension {
                expected: TOKEN_DIM,
                got: vector.len(),
            });
        }
        self.vectors.entry(word.to_lowercase()).or_insert(vector);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vectors.contains_key(&word.to_lowercase())
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    /// The word's vector, or zeros when out of vocabulary.
    pub fn embed(&self, word: &str) -> Vec<f64> {
        self.get(word)
            .map_or_else(|| vec![0.0; TOKEN_DIM], <[f64]>::to_vec)
    }

    pub fn text_tokens(&self, text: &str) -> Vec<TextToken> {
        tokenize(text)
            .into_iter()
            .map(|surface| TextToken {
                embedding: self.embed(&surface),
                surface,
            })
            .collect()
    }

    /// Loads a table, keeping only rows whose case-folded word is in `vocab` (all rows if `None`).
    pub fn load(path: impl AsRef<Path>, vocab: Option<&HashSet<String>>) -> Result<Self> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path)?);
        let mut table = Self::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts.next().unwrap_or_default();
            let folded = word.to_lowercase();
            if vocab.is_some_and(|v| !v.contains(&folded)) {
                continue;
            }
            let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
            let location = format!("{}:{}", path.display(), n + 1);
            let values = values.map_err(|e| CoreError::format(&location, e.to_string()))?;
            if values.len() != TOKEN_DIM {
                return Err(CoreError::format(
                    location,
                    format!("expected {TOKEN_DIM} values, found {}", values.len()),
                ));
            }
            table.insert(&folded, values)?;
        }
        Ok(table)
    }

    /// Writes the table sorted by word, values with `precision` decimals.
    pub fn save(&self, path: impl AsRef<Path>, precision: usize) -> Result<()> {
        let mut w = std::io::BufWriter::new(File::create(path)?);
        let mut words: Vec<&String> = self.vectors.keys().collect();
        words.sort();
        for word in words {
            write!(w, "{word}")?;
            for v in &self.vectors[word] {
                write!(w, " {v:.precision$}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }
}
