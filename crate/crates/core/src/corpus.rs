//! Tokenized corpora with document boundaries.
//!
//! Documents are concatenated into one stream; a position's usable context
//! never reaches back past the start of its document.
//!
//! On disk a corpus is a text file with one document per line and
//! whitespace-separated decimal token ids.

use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenStream {
    pub vocab_size: u32,
    pub tokens: Vec<u32>,
    /// `doc_start[i]` is true iff token `i` opens a document.
    pub doc_start: Vec<bool>,
}

impl TokenStream {
    pub fn from_documents<D: AsRef<[u32]>>(vocab_size: u32, docs: &[D]) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut doc_start = Vec::new();
        for doc in docs {
            let doc = doc.as_ref();
            for (j, &t) in doc.iter().enumerate() {
                if t >= vocab_size {
                    return Err(Error::invalid(format!(
                        "token {t} outside vocabulary of size {vocab_size}"
                    )));
                }
                tokens.push(t);
                doc_start.push(j == 0);
            }
        }
        Ok(Self {
            vocab_size,
            tokens,
            doc_start,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn documents(&self) -> impl Iterator<Item = &[u32]> + '_ {
        let mut starts: Vec<usize> = (0..self.len()).filter(|&i| self.doc_start[i]).collect();
        starts.push(self.len());
        (0..starts.len() - 1).map(move |d| &self.tokens[starts[d]..starts[d + 1]])
    }

    /// Start index of the document containing position `i`.
    pub fn doc_begin(&self, i: usize) -> usize {
        (0..=i).rev().find(|&j| self.doc_start[j]).unwrap_or(0)
    }

    /// Start index of the document containing each position, in one pass.
    pub fn doc_begins(&self) -> Vec<usize> {
        let mut begin = 0;
        self.doc_start
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                if s {
                    begin = i;
                }
                begin
            })
            .collect()
    }

    /// The `k` tokens before position `i` within its document, left-padded
    /// with `pad` when the document is shorter.
    pub fn context(&self, i: usize, begin: usize, k: usize, pad: u32) -> Vec<u32> {
        let available = i - begin;
        let mut ctx = Vec::with_capacity(k);
        ctx.extend(std::iter::repeat_n(pad, k.saturating_sub(available)));
        ctx.extend_from_slice(&self.tokens[i - k.min(available)..i]);
        ctx
    }

    pub fn read_text(vocab_size: u32, reader: impl BufRead) -> Result<Self> {
        let mut docs = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let doc = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<u32>().map_err(|_| Error::Parse {
                        line: lineno + 1,
                        message: format!("bad token id {tok:?}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            docs.push(doc);
        }
        Self::from_documents(vocab_size, &docs).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::Parse { line: 0, message: m },
            other => other,
        })
    }

    pub fn write_text(&self, mut w: impl Write) -> Result<()> {
        for doc in self.documents() {
            let line: Vec<String> = doc.iter().map(|t| t.to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    /// Byte-level tokenization of plain text (`V = 256`); blank lines
    /// separate documents.
    pub fn from_plain_text(text: &str) -> Self {
        let docs: Vec<Vec<u32>> = text
            .split("\n\n")
            .map(str::trim)
            .filter(|d| !d.is_empty())
            .map(|d| d.bytes().map(u32::from).collect())
            .collect();
        Self::from_documents(256, &docs).expect("bytes are below 256")
    }
}

/// A seeded sparse first-order "language" used as a desk-scale corpus.
///
/// Every token has `branching` successors drawn from a Zipf-distributed
/// popularity ranking, weighted by `rank^-zipf_exponent`. Documents open
/// with a popularity-weighted token and have lengths uniform in
/// `doc_len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLanguage {
    pub vocab_size: u32,
    pub branching: usize,
    pub zipf_exponent: f64,
    pub doc_len: (usize, usize),
    pub seed: u64,
}

impl Default for SyntheticLanguage {
    fn default() -> Self {
        Self {
            vocab_size: 1024,
            branching: 24,
            zipf_exponent: 1.1,
            doc_len: (50, 400),
            seed: 0,
        }
    }
}

impl SyntheticLanguage {
    /// Generates documents until at least `min_tokens` tokens exist.
    pub fn generate(&self, min_tokens: usize) -> Result<TokenStream> {
        let v = self.vocab_size as usize;
        if v < 2 || self.branching == 0 || self.doc_len.0 == 0 || self.doc_len.0 > self.doc_len.1 {
            return Err(Error::invalid("degenerate synthetic language configuration"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let popularity: Vec<f64> = (1..=v).map(|r| (r as f64).powf(-self.zipf_exponent)).collect();
        let popular = WeightedIndex::new(&popularity).map_err(|e| Error::invalid(e.to_string()))?;
        let succ_weights: Vec<f64> = (1..=self.branching)
            .map(|r| (r as f64).powf(-self.zipf_exponent))
            .collect();
        let succ_pick = WeightedIndex::new(&succ_weights).map_err(|e| Error::invalid(e.to_string()))?;
        let successors: Vec<Vec<u32>> = (0..v)
            .map(|_| (0..self.branching).map(|_| popular.sample(&mut rng) as u32).collect())
            .collect();

        let mut docs: Vec<Vec<u32>> = Vec::new();
        let mut total = 0;
        while total < min_tokens {
            let len = rng.random_range(self.doc_len.0..=self.doc_len.1);
            let mut doc = Vec::with_capacity(len);
            let mut tok = popular.sample(&mut rng) as u32;
            doc.push(tok);
            while doc.len() < len {
                tok = successors[tok as usize][succ_pick.sample(&mut rng)];
                doc.push(tok);
            }
            total += doc.len();
            docs.push(doc);
        }
        TokenStream::from_documents(self.vocab_size, &docs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documents_and_contexts() {
        let s = TokenStream::from_documents(5, &[vec![1, 2, 3], vec![4, 0]]).unwrap();
        assert_eq!(s.doc_start, vec![true, false, false, true, false]);
        let docs: Vec<&[u32]> = s.documents().collect();
        assert_eq!(docs, vec![&[1, 2, 3][..], &[4, 0][..]]);
        assert_eq!(s.doc_begin(4), 3);
        assert_eq!(s.doc_begins(), vec![0, 0, 0, 3, 3]);
        assert_eq!(s.context(2, 0, 2, 9), vec![1, 2]);
        assert_eq!(s.context(4, 3, 3, 9), vec![9, 9, 4]);
        assert_eq!(s.context(3, 3, 2, 9), vec![9, 9]);
        assert!(TokenStream::from_documents(3, &[vec![3]]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let s = TokenStream::from_documents(10, &[vec![1, 2], vec![3], vec![9, 9, 0]]).unwrap();
        let mut buf = Vec::new();
        s.write_text(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "1 2\n3\n9 9 0\n");
        assert_eq!(TokenStream::read_text(10, buf.as_slice()).unwrap(), s);
        let err = TokenStream::read_text(10, "1 2\n3 x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn plain_text_documents() {
        let s = TokenStream::from_plain_text("ab\n\n\ncd e\n");
        assert_eq!(s.vocab_size, 256);
        assert_eq!(s.documents().count(), 2);
    }

    #[test]
    fn synthetic_language_is_seeded() {
        let lang = SyntheticLanguage {
            vocab_size: 50,
            doc_len: (5, 20),
            ..Default::default()
        };
        let a = lang.generate(2_000).unwrap();
        assert_eq!(a, lang.generate(2_000).unwrap());
        assert!(a.len() >= 2_000);
        assert!(a.tokens.iter().all(|&t| t < 50));
        let b = SyntheticLanguage { seed: 1, ..lang }.generate(2_000).unwrap();
        assert_ne!(a.tokens, b.tokens);
    }
}
