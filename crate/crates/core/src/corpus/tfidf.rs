//! TF-IDF index with raw-count term frequency, smoothed inverse document
//! frequency `ln((1+N)/(1+df)) + 1` and L2-normalized document vectors.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use super::{tokenize, CorpusError};

pub const INDEX_MAGIC: [u8; 8] = *b"C2BIDX01";

/// Sparse vector with strictly increasing column indices.
#[derive(Debug, Clone, Default, PartialEq)]
struct SparseVec {
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseVec {
    fn dot(&self, other: &SparseVec) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.cols.len() && j < other.cols.len() {
            match self.cols[i].cmp(&other.cols[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.vals[i] * other.vals[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    fn is_zero(&self) -> bool {
        self.cols.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfIndex {
    /// Sorted vocabulary; a term's position is its column.
    terms: Vec<String>,
    idf: Vec<f64>,
    ids: Vec<String>,
    texts: Vec<String>,
    vectors: Vec<SparseVec>,
    /// column -> documents containing the term, ascending
    postings: Vec<Vec<u32>>,
}

impl TfIdfIndex {
    /// Builds the index from `(id, text)` pairs; document order is preserved.
    pub fn build<I, S, T>(docs: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut ids = Vec::new();
        let mut texts = Vec::new();
        let mut seen = HashSet::new();
        for (i, (id, text)) in docs.into_iter().enumerate() {
            let id = id.into();
            if !seen.insert(id.clone()) {
                return Err(CorpusError::DuplicateId { id, line: i + 1 });
            }
            ids.push(id);
            texts.push(text.into());
        }
        if ids.is_empty() {
            return Err(CorpusError::EmptyIndex);
        }

        let tokenized: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for toks in &tokenized {
            let uniq: HashSet<&str> = toks.iter().map(String::as_str).collect();
            for t in uniq {
                *df.entry(t).or_default() += 1;
            }
        }
        let n = ids.len() as f64;
        let terms: Vec<String> = df.keys().map(|t| t.to_string()).collect();
        let idf = df
            .values()
            .map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0)
            .collect();

        let mut index = TfIdfIndex {
            terms,
            idf,
            ids,
            texts,
            vectors: Vec::new(),
            postings: Vec::new(),
        };
        index.vectors = tokenized.iter().map(|t| index.vectorize_tokens(t)).collect();
        index.rebuild_postings();
        Ok(index)
    }

    fn rebuild_postings(&mut self) {
        let mut postings = vec![Vec::new(); self.terms.len()];
        for (d, v) in self.vectors.iter().enumerate() {
            for &c in &v.cols {
                postings[c as usize].push(d as u32);
            }
        }
        self.postings = postings;
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn vocabulary_size(&self) -> usize {
        self.terms.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn column(&self, term: &str) -> Option<usize> {
        self.terms.binary_search_by(|t| t.as_str().cmp(term)).ok()
    }

    /// Inverse document frequency; unseen terms get the `df = 0` value.
    pub fn idf(&self, term: &str) -> f64 {
        match self.column(term) {
            Some(c) => self.idf[c],
            None => (1.0 + self.len() as f64).ln() + 1.0,
        }
    }

    fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|i| i == id)
    }

    pub fn text(&self, id: &str) -> Option<&str> {
        self.position(id).map(|p| self.texts[p].as_str())
    }

    /// Stored weights of a document as `(term, weight)` pairs in column order.
    pub fn document_weights(&self, id: &str) -> Option<Vec<(&str, f64)>> {
        let v = &self.vectors[self.position(id)?];
        Some(
            v.cols
                .iter()
                .zip(&v.vals)
                .map(|(&c, &w)| (self.terms[c as usize].as_str(), w))
                .collect(),
        )
    }

    fn vectorize_tokens(&self, tokens: &[String]) -> SparseVec {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in tokens {
            if let Some(c) = self.column(t) {
                *counts.entry(c).or_default() += 1.0;
            }
        }
        let mut v = SparseVec {
            cols: Vec::with_capacity(counts.len()),
            vals: Vec::with_capacity(counts.len()),
        };
        for (c, tf) in counts {
            v.cols.push(c as u32);
            v.vals.push(tf * self.idf[c]);
        }
        let norm = v.vals.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.vals.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }

    fn vectorize(&self, text: &str) -> SparseVec {
        self.vectorize_tokens(&tokenize(text))
    }

    /// Cosine-ranked documents, best first, ties by ascending id. Documents
    /// with zero similarity are omitted.
    pub fn search(&self, query: &str, k: usize) -> Vec<SearchHit> {
        let q = self.vectorize(query);
        if q.is_zero() || k == 0 {
            return Vec::new();
        }
        // postings only select candidates; scoring uses the same merge dot as
        // cosine_similarity so both agree to the last bit
        let mut candidates: Vec<u32> = q
            .cols
            .iter()
            .flat_map(|&c| self.postings[c as usize].iter().copied())
            .collect();
        candidates.sort_unstable();
        candidates.dedup();
        let mut hits: Vec<SearchHit> = candidates
            .into_iter()
            .map(|d| SearchHit {
                id: self.ids[d as usize].clone(),
                score: q.dot(&self.vectors[d as usize]).clamp(0.0, 1.0),
            })
            .filter(|h| h.score > 0.0)
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
        hits.truncate(k);
        hits
    }

    /// Cosine of the two texts' TF-IDF vectors; unknown terms are ignored.
    pub fn cosine_similarity(&self, a: &str, b: &str) -> f64 {
        self.vectorize(a).dot(&self.vectorize(b)).clamp(0.0, 1.0)
    }

    /// Cosine between a text and a stored document.
    pub fn similarity_to(&self, text: &str, id: &str) -> Result<f64, CorpusError> {
        let p = self
            .position(id)
            .ok_or_else(|| CorpusError::UnknownId(id.to_string()))?;
        Ok(self.vectorize(text).dot(&self.vectors[p]).clamp(0.0, 1.0))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn write_index<W: Write>(index: &TfIdfIndex, mut w: W) -> Result<(), CorpusError> {
    let mut out = Vec::new();
    out.extend_from_slice(&INDEX_MAGIC);
    out.extend_from_slice(&(index.ids.len() as u64).to_le_bytes());
    out.extend_from_slice(&(index.terms.len() as u64).to_le_bytes());
    for (t, idf) in index.terms.iter().zip(&index.idf) {
        put_str(&mut out, t);
        out.extend_from_slice(&idf.to_le_bytes());
    }
    for ((id, text), v) in index.ids.iter().zip(&index.texts).zip(&index.vectors) {
        put_str(&mut out, id);
        put_str(&mut out, text);
        out.extend_from_slice(&(v.cols.len() as u32).to_le_bytes());
        for (c, x) in v.cols.iter().zip(&v.vals) {
            out.extend_from_slice(&c.to_le_bytes());
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    w.write_all(&out)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8], CorpusError> {
        if self.buf.len() - self.pos < n {
            return Err(CorpusError::Format {
                field,
                detail: format!("truncated at byte {} (need {n} more)", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self, field: &'static str) -> Result<u32, CorpusError> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }
    fn u64(&mut self, field: &'static str) -> Result<u64, CorpusError> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
    fn f64(&mut self, field: &'static str) -> Result<f64, CorpusError> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
    fn string(&mut self, field: &'static str) -> Result<String, CorpusError> {
        let n = self.u32(field)? as usize;
        String::from_utf8(self.take(n, field)?.to_vec()).map_err(|e| CorpusError::Format {
            field,
            detail: e.to_string(),
        })
    }
}

pub fn read_index<R: Read>(mut r: R) -> Result<TfIdfIndex, CorpusError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(8, "magic")? != INDEX_MAGIC {
        return Err(CorpusError::Format {
            field: "magic",
            detail: "expected C2BIDX01".into(),
        });
    }
    let n_docs = c.u64("n_docs")? as usize;
    let n_terms = c.u64("n_terms")? as usize;
    let mut terms = Vec::new();
    let mut idf = Vec::new();
    for _ in 0..n_terms {
        terms.push(c.string("term")?);
        idf.push(c.f64("idf")?);
    }
    let mut ids = Vec::new();
    let mut texts = Vec::new();
    let mut vectors = Vec::new();
    for _ in 0..n_docs {
        ids.push(c.string("id")?);
        texts.push(c.string("text")?);
        let nnz = c.u32("nnz")? as usize;
        let mut v = SparseVec::default();
        for _ in 0..nnz {
            let col = c.u32("column")?;
            if col as usize >= n_terms {
                return Err(CorpusError::Format {
                    field: "column",
                    detail: format!("column {col} outside vocabulary of {n_terms}"),
                });
            }
            v.cols.push(col);
            v.vals.push(c.f64("weight")?);
        }
        vectors.push(v);
    }
    if c.pos != buf.len() {
        return Err(CorpusError::Format {
            field: "trailer",
            detail: format!("{} unexpected trailing bytes", buf.len() - c.pos),
        });
    }
    if ids.is_empty() {
        return Err(CorpusError::EmptyIndex);
    }
    let mut index = TfIdfIndex {
        terms,
        idf,
        ids,
        texts,
        vectors,
        postings: Vec::new(),
    };
    index.rebuild_postings();
    Ok(index)
}
