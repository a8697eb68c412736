//! Fact corpus and BM25 ranking.
//!
//! Documents are tiny "title + text" records. The index is an in-memory
//! inverted file scored with BM25 using the nonnegative idf variant
//! `ln(1 + (N - df + 0.5) / (df + 0.5))`, so a document that matches at
//! least one query term always scores strictly above the (absent) zero
//! score of a document that matches none. Ranking ties break by ascending
//! document id, which makes retrieval fully deterministic.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{count, real, Scalar};

/// One searchable record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
}

/// A ranked search hit.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedDoc<S> {
    pub id: String,
    pub title: String,
    pub text: String,
    pub score: S,
}

/// Splits exactly like [`crate::vocab::Vocab::tokenize`], but keeps words as
/// strings so the index does not depend on a token table.
fn terms(text: &str) -> Vec<String> {
    text.split_whitespace().map(|w| w.to_ascii_lowercase()).collect()
}

#[derive(Debug, Clone)]
struct Posting {
    doc: usize,
    tf: usize,
}

/// Inverted index over a corpus, with BM25 parameters fixed at build time.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    docs: Vec<Document>,
    postings: HashMap<String, Vec<Posting>>,
    doc_len: Vec<usize>,
    avg_len: f64,
    k1: f64,
    b: f64,
}

impl CorpusIndex {
    /// Indexes title and text of every document.
    ///
    /// Fails on an empty corpus, duplicate ids, or BM25 parameters outside
    /// `k1 >= 0`, `0 <= b <= 1`.
    pub fn build(docs: Vec<Document>, k1: f64, b: f64) -> Result<CorpusIndex> {
        if docs.is_empty() {
            return Err(Error::Data("cannot index an empty corpus".into()));
        }
        if !(k1 >= 0.0) {
            return Err(Error::Config(format!("bm25_k1 must be >= 0, got {k1}")));
        }
        if !(0.0..=1.0).contains(&b) {
            return Err(Error::Config(format!("bm25_b must be in [0, 1], got {b}")));
        }
        let mut seen = HashMap::new();
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut doc_len = Vec::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            if seen.insert(doc.id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate document id {:?}", doc.id)));
            }
            let mut tf: HashMap<String, usize> = HashMap::new();
            let mut len = 0usize;
            for w in terms(&doc.title).into_iter().chain(terms(&doc.text)) {
                *tf.entry(w).or_insert(0) += 1;
                len += 1;
            }
            doc_len.push(len);
            for (w, n) in tf {
                let entry = postings.entry(w).or_default();
                entry.push(Posting { doc: i, tf: n });
            }
        }
        // Postings were filled in ascending doc order already; keep that as an
        // invariant for deterministic accumulation.
        let total: usize = doc_len.iter().sum();
        let avg_len = total as f64 / docs.len() as f64;
        Ok(CorpusIndex { docs, postings, doc_len, avg_len, k1, b })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    /// BM25 score of one document for one term.
    fn term_score<S: Scalar>(&self, tf: usize, df: usize, dl: usize) -> S {
        let n = self.docs.len() as f64;
        let idf = ((n - df as f64 + 0.5) / (df as f64 + 0.5) + 1.0).ln();
        let idf = real::<S>(idf);
        let tf = count::<S>(tf);
        let k1 = real::<S>(self.k1);
        let norm = real::<S>(1.0 - self.b + self.b * dl as f64 / self.avg_len);
        idf * tf * (k1 + S::one()) / (tf + k1 * norm)
    }

    /// Top-`k` documents for a whitespace query, best first.
    ///
    /// Only documents containing at least one query term are candidates, so
    /// the result may be shorter than `k`; an empty or all-miss query yields
    /// an empty list. Repeated query terms count once.
    pub fn retrieve<S: Scalar>(&self, query: &str, k: usize) -> Vec<RetrievedDoc<S>> {
        let mut unique = terms(query);
        let mut seen = HashMap::new();
        unique.retain(|w| seen.insert(w.clone(), ()).is_none());
        if unique.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut scores: Vec<S> = vec![S::zero(); self.docs.len()];
        let mut matched: Vec<bool> = vec![false; self.docs.len()];
        for w in &unique {
            if let Some(list) = self.postings.get(w) {
                let df = list.len();
                for p in list {
                    scores[p.doc] += self.term_score::<S>(p.tf, df, self.doc_len[p.doc]);
                    matched[p.doc] = true;
                }
            }
        }
        let mut hits: Vec<usize> = (0..self.docs.len()).filter(|&i| matched[i]).collect();
        hits.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .expect("BM25 scores are finite")
                .then_with(|| self.docs[a].id.cmp(&self.docs[b].id))
        });
        hits.truncate(k);
        hits.into_iter()
            .map(|i| RetrievedDoc {
                id: self.docs[i].id.clone(),
                title: self.docs[i].title.clone(),
                text: self.docs[i].text.clone(),
                score: scores[i],
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_doc_index() -> CorpusIndex {
        let docs = vec![
            Document { id: "d1".into(), title: "".into(), text: "paris capital france".into() },
            Document { id: "d2".into(), title: "".into(), text: "berlin capital germany".into() },
        ];
        CorpusIndex::build(docs, 1.2, 0.75).unwrap()
    }

    #[test]
    fn unique_term_scores_match_hand_arithmetic() {
        // Both docs have length 3 = avg length, so the length norm is exactly 1
        // and the score collapses to idf * (k1 + 1) / (1 + k1) = idf.
        let idx = two_doc_index();
        let hits = idx.retrieve::<f64>("paris", 3);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].id, "d1");
        let idf = ((2.0 - 1.0 + 0.5) / (1.0 + 0.5) + 1.0f64).ln(); // ln 2
        assert!((hits[0].score - idf).abs() < 1e-12);
        assert!((idf - 2.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn shared_term_ties_break_by_ascending_id() {
        let idx = two_doc_index();
        let hits = idx.retrieve::<f64>("capital", 5);
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].id, "d1");
        assert_eq!(hits[1].id, "d2");
        assert!((hits[0].score - hits[1].score).abs() < 1e-15);
        let idf = ((2.0 - 2.0 + 0.5) / (2.0 + 0.5) + 1.0f64).ln(); // ln 1.2
        assert!((hits[0].score - idf).abs() < 1e-12);
    }

    #[test]
    fn multi_term_query_sums_per_term_scores() {
        let idx = two_doc_index();
        let hits = idx.retrieve::<f64>("paris capital", 5);
        assert_eq!(hits[0].id, "d1");
        let expected = 2.0f64.ln() + 1.2f64.ln();
        assert!((hits[0].score - expected).abs() < 1e-12);
        // d2 only matches "capital".
        assert!((hits[1].score - 1.2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn repeated_query_terms_count_once() {
        let idx = two_doc_index();
        let once = idx.retrieve::<f64>("paris", 5);
        let twice = idx.retrieve::<f64>("paris paris", 5);
        assert_eq!(once, twice);
    }

    #[test]
    fn miss_and_empty_queries_return_nothing() {
        let idx = two_doc_index();
        assert!(idx.retrieve::<f64>("tokyo", 3).is_empty());
        assert!(idx.retrieve::<f64>("", 3).is_empty());
        assert!(idx.retrieve::<f64>("paris", 0).is_empty());
    }

    #[test]
    fn k_caps_the_result_count() {
        let idx = two_doc_index();
        assert_eq!(idx.retrieve::<f64>("capital", 1).len(), 1);
        assert_eq!(idx.retrieve::<f64>("capital", 2).len(), 2);
        assert_eq!(idx.retrieve::<f64>("capital", 99).len(), 2);
    }

    #[test]
    fn titles_are_searchable() {
        let docs = vec![
            Document { id: "a".into(), title: "orly".into(), text: "airport near paris".into() },
            Document { id: "b".into(), title: "tegel".into(), text: "airport near berlin".into() },
        ];
        let idx = CorpusIndex::build(docs, 1.2, 0.75).unwrap();
        let hits = idx.retrieve::<f64>("orly", 2);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].id, "a");
    }

    #[test]
    fn build_rejects_bad_inputs() {
        assert!(CorpusIndex::build(vec![], 1.2, 0.75).is_err());
        let dup = vec![
            Document { id: "x".into(), title: "".into(), text: "a".into() },
            Document { id: "x".into(), title: "".into(), text: "b".into() },
        ];
        assert!(CorpusIndex::build(dup, 1.2, 0.75).is_err());
        let one = vec![Document { id: "x".into(), title: "".into(), text: "a".into() }];
        assert!(CorpusIndex::build(one.clone(), -0.1, 0.75).is_err());
        assert!(CorpusIndex::build(one, 1.2, 1.5).is_err());
    }

    #[test]
    fn retrieval_is_deterministic_across_calls() {
        let idx = two_doc_index();
        let a = idx.retrieve::<f64>("capital paris", 5);
        let b = idx.retrieve::<f64>("capital paris", 5);
        assert_eq!(a, b);
    }

    #[test]
    fn f32_and_f64_agree_on_ranking() {
        let idx = two_doc_index();
        let a: Vec<String> = idx.retrieve::<f32>("paris capital", 5).into_iter().map(|h| h.id).collect();
        let b: Vec<String> = idx.retrieve::<f64>("paris capital", 5).into_iter().map(|h| h.id).collect();
        assert_eq!(a, b);
    }
}
