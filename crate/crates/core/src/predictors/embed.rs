use std::collections::{BTreeMap, HashMap};

use crate::program::ProgramTree;

/// Sparse vector keyed by word.
pub type SparseVec = BTreeMap<String, f64>;

/// Term-frequency vectors weighted by smoothed inverse document frequency
/// `ln((1 + N) / (1 + df)) + 1`, scaled to unit length.
#[derive(Debug, Clone, Default)]
pub struct QuestionEmbedder {
    documents: usize,
    df: HashMap<String, usize>,
}

impl QuestionEmbedder {
    pub fn fit<'a, I>(corpus: I) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut e = QuestionEmbedder::default();
        for q in corpus {
            e.documents += 1;
            for w in super::distinct_words(q) {
                *e.df.entry(w.to_string()).or_insert(0) += 1;
            }
        }
        e
    }

    pub fn idf(&self, word: &str) -> f64 {
        let df = self.df.get(word).copied().unwrap_or(0);
        ((1.0 + self.documents as f64) / (1.0 + df as f64)).ln() + 1.0
    }

    /// Unit-length embedding; the empty question maps to the zero vector.
    pub fn embed(&self, question: &[String]) -> SparseVec {
        let mut v = SparseVec::new();
        for w in question {
            *v.entry(w.clone()).or_insert(0.0) += 1.0;
        }
        for (w, x) in v.iter_mut() {
            *x *= self.idf(w);
        }
        let norm = v.values().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.values_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

pub fn l2_distance(a: &SparseVec, b: &SparseVec) -> f64 {
    let mut sum = 0.0;
    for (k, x) in a {
        let y = b.get(k).copied().unwrap_or(0.0);
        sum += (x - y) * (x - y);
    }
    for (k, y) in b {
        if !a.contains_key(k) {
            sum += y * y;
        }
    }
    sum.sqrt()
}

#[derive(Debug, Clone)]
pub struct SolvedEntry {
    pub question_id: usize,
    pub question: Vec<String>,
    pub embedding: SparseVec,
    pub program: ProgramTree,
    pub score: f64,
}

/// Best programs of solved questions, searchable by question similarity.
#[derive(Debug, Clone, Default)]
pub struct SolvedStore {
    entries: Vec<SolvedEntry>,
}

impl SolvedStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[SolvedEntry] {
        &self.entries
    }

    pub fn insert(
        &mut self,
        embedder: &QuestionEmbedder,
        question_id: usize,
        question: &[String],
        program: ProgramTree,
        score: f64,
    ) {
        self.entries.push(SolvedEntry {
            question_id,
            question: question.to_vec(),
            embedding: embedder.embed(question),
            program,
            score,
        });
    }

    /// Program of the stored question closest in embedding distance, with
    /// that distance. Ties go to the earliest insertion.
    pub fn closest(&self, embedder: &QuestionEmbedder, question: &[String]) -> Option<(&ProgramTree, f64)> {
        let target = embedder.embed(question);
        let mut best: Option<(&SolvedEntry, f64)> = None;
        for e in &self.entries {
            let d = l2_distance(&target, &e.embedding);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((e, d));
            }
        }
        best.map(|(e, d)| (&e.program, d))
    }
}
