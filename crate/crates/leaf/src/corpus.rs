//! Document store and BM25 retrieval.
//!
//! Retrieval only has to put the right passages in front of the rater, so
//! the index is a plain in-memory inverted file over a deterministic
//! tokenizer. Scoring is Okapi BM25 with the non-negative idf variant
//!
//! ```text
//! idf(t)      = ln(1 + (N - df + 0.5) / (df + 0.5))
//! tfnorm(t,d) = tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl/avgdl))
//! score(q,d)  = sum over query tokens of idf * tfnorm
//! ```
//!
//! The `+ 1` inside the log keeps every term contribution, and therefore
//! every score, nonnegative even when a term appears in most documents.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One corpus passage as stored on disk and returned as evidence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
}

/// A retrieval hit. `snippet` is the full passage text; passages in the
/// corpora this crate targets are already paragraph-sized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedDoc {
    pub doc_id: String,
    pub score: f64,
    pub snippet: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    fn validate(&self) -> Result<()> {
        if !(self.k1.is_finite() && self.k1 >= 0.0) {
            return Err(Error::InvalidBm25Params {
                detail: format!("k1 must be finite and >= 0, got {}", self.k1),
            });
        }
        if !(self.b.is_finite() && (0.0..=1.0).contains(&self.b)) {
            return Err(Error::InvalidBm25Params {
                detail: format!("b must be in [0, 1], got {}", self.b),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub doc_count: usize,
    pub avg_doc_len: f64,
    pub vocab_size: usize,
}

/// Anything that can hand back scored passages for a query. BM25 is the
/// only implementation here; a different retriever plugs in behind this.
pub trait Retriever: Send + Sync {
    fn retrieve(&self, query: &str, k: usize) -> Vec<RetrievedDoc>;
}

/// Lowercase a string and split it on every non-alphanumeric character.
///
/// `"13-year-old boy"` becomes `["13", "year", "old", "boy"]`. The same
/// function tokenizes documents and queries, which is all BM25 needs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Posting {
    doc: u32,
    tf: u32,
}

#[derive(Debug)]
pub struct Bm25Index {
    params: Bm25Params,
    docs: Vec<Document>,
    doc_len: Vec<u32>,
    avg_doc_len: f64,
    postings: HashMap<String, Vec<Posting>>,
}

impl Bm25Index {
    /// Build an index over `docs`. Rejects an empty corpus, duplicate ids,
    /// and corpora whose documents tokenize to nothing at all (the average
    /// document length must stay positive).
    pub fn build(docs: Vec<Document>, params: Bm25Params) -> Result<Self> {
        params.validate()?;
        if docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut seen: HashMap<&str, ()> = HashMap::with_capacity(docs.len());
        for d in &docs {
            if seen.insert(&d.id, ()).is_some() {
                return Err(Error::DuplicateDocId { id: d.id.clone() });
            }
        }

        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut doc_len = Vec::with_capacity(docs.len());
        let mut total_tokens: u64 = 0;
        for (idx, d) in docs.iter().enumerate() {
            let tokens = tokenize(&d.text);
            doc_len.push(tokens.len() as u32);
            total_tokens += tokens.len() as u64;
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *counts.entry(t).or_insert(0) += 1;
            }
            for (term, tf) in counts {
                postings.entry(term).or_default().push(Posting {
                    doc: idx as u32,
                    tf,
                });
            }
        }
        if total_tokens == 0 {
            return Err(Error::NoIndexableTokens);
        }
        let avg_doc_len = total_tokens as f64 / docs.len() as f64;
        Ok(Bm25Index {
            params,
            docs,
            doc_len,
            avg_doc_len,
            postings,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn stats(&self) -> IndexStats {
        IndexStats {
            doc_count: self.docs.len(),
            avg_doc_len: self.avg_doc_len,
            vocab_size: self.postings.len(),
        }
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.docs.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Top-`k` documents for `query`, highest score first, ties broken by
    /// ascending `doc_id`. Only documents sharing at least one token with
    /// the query are candidates; an empty or all-separator query returns
    /// nothing. Repeated query tokens count twice, as in classic Okapi.
    pub fn retrieve(&self, query: &str, k: usize) -> Vec<RetrievedDoc> {
        let tokens = tokenize(query);
        if tokens.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut scores = vec![0.0f64; self.docs.len()];
        let mut matched = vec![false; self.docs.len()];
        for tok in &tokens {
            let Some(list) = self.postings.get(tok) else {
                continue;
            };
            let idf = self.idf(list.len());
            for p in list {
                let tf = p.tf as f64;
                let dl = self.doc_len[p.doc as usize] as f64;
                let denom =
                    tf + self.params.k1 * (1.0 - self.params.b + self.params.b * dl / self.avg_doc_len);
                scores[p.doc as usize] += idf * (tf * (self.params.k1 + 1.0) / denom);
                matched[p.doc as usize] = true;
            }
        }
        let mut hits: Vec<usize> = (0..self.docs.len()).filter(|&i| matched[i]).collect();
        hits.sort_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then_with(|| self.docs[a].id.cmp(&self.docs[b].id))
        });
        hits.truncate(k);
        hits.into_iter()
            .map(|i| RetrievedDoc {
                doc_id: self.docs[i].id.clone(),
                score: scores[i],
                snippet: self.docs[i].text.clone(),
            })
            .collect()
    }

    /// Write the index to `writer` as versioned JSON. Only the documents
    /// and parameters are stored; postings are rebuilt on load, which keeps
    /// the format small and the loader trivial to validate.
    pub fn save_to_writer<W: Write>(&self, mut writer: W) -> Result<()> {
        let file = IndexFile {
            format: INDEX_FORMAT.to_owned(),
            version: INDEX_VERSION,
            k1: self.params.k1,
            b: self.params.b,
            docs: self.docs.clone(),
        };
        let json = serde_json::to_string(&file)?;
        writer
            .write_all(json.as_bytes())
            .map_err(|e| Error::io("<writer>", e))?;
        writer.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.save_to_writer(std::io::BufWriter::new(f))
    }

    pub fn load_from_reader<R: Read>(reader: R) -> Result<Self> {
        let file: IndexFile = serde_json::from_reader(reader).map_err(|e| Error::IndexFormat {
            detail: e.to_string(),
        })?;
        if file.format != INDEX_FORMAT {
            return Err(Error::IndexFormat {
                detail: format!("unknown format {:?}", file.format),
            });
        }
        if file.version != INDEX_VERSION {
            return Err(Error::IndexFormat {
                detail: format!(
                    "unsupported version {} (supported: {})",
                    file.version, INDEX_VERSION
                ),
            });
        }
        Bm25Index::build(
            file.docs,
            Bm25Params {
                k1: file.k1,
                b: file.b,
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::load_from_reader(BufReader::new(f))
    }
}

impl Retriever for Bm25Index {
    fn retrieve(&self, query: &str, k: usize) -> Vec<RetrievedDoc> {
        Bm25Index::retrieve(self, query, k)
    }
}

const INDEX_FORMAT: &str = "leaf-bm25-index";
const INDEX_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    k1: f64,
    b: f64,
    docs: Vec<Document>,
}

/// Read a corpus from JSONL: one `{"id", "title", "text"}` object per line.
/// Blank lines are skipped; anything else malformed reports its line number.
pub fn load_corpus_from_reader<R: BufRead>(reader: R, origin: &Path) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| Error::Jsonl {
            path: origin.to_owned(),
            line: i + 1,
            detail: e.to_string(),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn load_corpus(path: &Path) -> Result<Vec<Document>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_corpus_from_reader(BufReader::new(f), path)
}
