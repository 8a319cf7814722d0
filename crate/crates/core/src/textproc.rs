//! Text to TF-IDF vectors.
//!
//! Weighting is raw term count times smoothed IDF, `ln((N + 1) / (df + 1)) + 1`,
//! followed by L2 normalization of each document vector.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::sparse::SparseVector;

/// Ordered lowercase alphanumeric tokens of one document.
pub type TokenSeq = Vec<String>;

/// Splits on every run of non-alphanumeric characters and lowercases.
pub fn tokenize(text: &str) -> TokenSeq {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            // Some uppercase letters lowercase to a base letter plus a combining mark.
            current.extend(ch.to_lowercase().filter(|c| c.is_alphanumeric()));
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

const ENGLISH_STOPWORDS: &str = include_str!("../resources/stopwords_en.txt");

/// A set of lowercase stop words.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StopWords {
    words: HashSet<String>,
}

impl StopWords {
    /// The bundled 179-word English list.
    pub fn english() -> Self {
        Self::parse(ENGLISH_STOPWORDS)
    }

    /// Parses one word per line; blank lines are ignored, words are lowercased.
    pub fn parse(text: &str) -> Self {
        StopWords {
            words: text
                .lines()
                .map(str::trim)
                .filter(|w| !w.is_empty())
                .map(str::to_lowercase)
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        std::fs::read_to_string(path)
            .map(|t| Self::parse(&t))
            .map_err(|e| Error::io(path, e))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for StopWords {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        StopWords {
            words: iter.into_iter().map(Into::into).collect(),
        }
    }
}

pub fn remove_stopwords(mut tokens: TokenSeq, stoplist: &StopWords) -> TokenSeq {
    tokens.retain(|t| !stoplist.contains(t));
    tokens
}

/// Term index with document frequencies.
///
/// Terms are indexed in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    document_frequency: Vec<u64>,
    n_documents: u64,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_parts(terms: Vec<String>, document_frequency: Vec<u64>, n_documents: u64) -> Self {
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary {
            terms,
            document_frequency,
            n_documents,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n_documents(&self) -> u64 {
        self.n_documents
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).map(|&i| i as usize)
    }

    pub fn document_frequency(&self, index: usize) -> u64 {
        self.document_frequency[index]
    }
}

const DF_CHUNK: usize = 4096;

fn count_document_frequencies(documents: &[TokenSeq]) -> HashMap<&str, u64> {
    documents
        .par_chunks(DF_CHUNK)
        .map(|chunk| {
            let mut counts: HashMap<&str, u64> = HashMap::new();
            let mut seen: HashSet<&str> = HashSet::new();
            for doc in chunk {
                seen.clear();
                for t in doc {
                    if seen.insert(t.as_str()) {
                        *counts.entry(t.as_str()).or_insert(0) += 1;
                    }
                }
            }
            counts
        })
        .reduce(HashMap::new, |a, b| {
            let (mut big, small) = if a.len() >= b.len() { (a, b) } else { (b, a) };
            for (t, c) in small {
                *big.entry(t).or_insert(0) += c;
            }
            big
        })
}

/// Builds a vocabulary from stop-word-filtered documents.
///
/// Terms below `min_df` documents are dropped; if more than `max_terms`
/// remain, the most frequent are kept (ties resolved by lexicographic order).
pub fn build_vocabulary(documents: &[TokenSeq], max_terms: usize, min_df: u64) -> Vocabulary {
    let min_df = min_df.max(1);
    let counts = count_document_frequencies(documents);
    let mut retained: Vec<(&str, u64)> = counts.into_iter().filter(|&(_, df)| df >= min_df).collect();
    if retained.len() > max_terms {
        retained.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        retained.truncate(max_terms);
    }
    retained.sort_unstable_by(|a, b| a.0.cmp(b.0));
    let (terms, df): (Vec<String>, Vec<u64>) = retained.into_iter().map(|(t, c)| (t.to_owned(), c)).unzip();
    Vocabulary::from_parts(terms, df, documents.len() as u64)
}

/// Vocabulary plus fitted IDF weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfModel<T> {
    vocabulary: Vocabulary,
    idf: Vec<T>,
}

/// `ln((N + 1) / (df + 1)) + 1`
pub fn smoothed_idf<T: Scalar>(n_documents: u64, document_frequency: u64) -> T {
    let n = T::of(n_documents as f64);
    let df = T::of(document_frequency as f64);
    ((n + T::one()) / (df + T::one())).ln() + T::one()
}

pub fn fit_idf<T: Scalar>(vocabulary: Vocabulary) -> Result<TfIdfModel<T>> {
    if vocabulary.n_documents == 0 {
        return Err(Error::EmptyInput(
            "IDF needs a vocabulary built on at least one document",
        ));
    }
    let idf = vocabulary
        .document_frequency
        .iter()
        .map(|&df| smoothed_idf(vocabulary.n_documents, df))
        .collect();
    Ok(TfIdfModel { vocabulary, idf })
}

const TFIDF_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TfIdfDocument {
    version: u32,
    n_documents: u64,
    terms: Vec<String>,
    df: Vec<u64>,
}

impl<T: Scalar> TfIdfModel<T> {
    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn idf(&self) -> &[T] {
        &self.idf
    }

    pub fn dimension(&self) -> usize {
        self.idf.len()
    }

    /// Count times IDF for in-vocabulary tokens, L2-normalized.
    ///
    /// Out-of-vocabulary tokens are ignored; a document with no known tokens
    /// maps to the zero vector.
    pub fn transform(&self, tokens: &[String]) -> SparseVector<T> {
        let mut hits: Vec<u32> = tokens
            .iter()
            .filter_map(|t| self.vocabulary.index.get(t.as_str()).copied())
            .collect();
        hits.sort_unstable();
        let mut entries: Vec<(usize, T)> = Vec::new();
        for group in hits.chunk_by(|a, b| a == b) {
            let i = group[0] as usize;
            entries.push((i, T::count(group.len()) * self.idf[i]));
        }
        SparseVector::from_sorted_unchecked(self.dimension(), entries).normalized()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&TfIdfDocument {
            version: TFIDF_FORMAT_VERSION,
            n_documents: self.vocabulary.n_documents,
            terms: self.vocabulary.terms.clone(),
            df: self.vocabulary.document_frequency.clone(),
        })
        .expect("tf-idf serialization cannot fail")
    }

    /// Restores a model from its JSON document, recomputing IDF weights.
    pub fn from_json(path: &Path, text: &str) -> Result<Self> {
        let doc: TfIdfDocument = serde_json::from_str(text).map_err(|e| Error::json(path, e))?;
        if doc.version != TFIDF_FORMAT_VERSION {
            return Err(Error::ArtifactVersion {
                path: path.into(),
                found: doc.version,
            });
        }
        if doc.terms.len() != doc.df.len() {
            return Err(Error::LengthMismatch {
                what: "tf-idf terms vs document frequencies",
                left: doc.terms.len(),
                right: doc.df.len(),
            });
        }
        fit_idf(Vocabulary::from_parts(doc.terms, doc.df, doc.n_documents))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(words: &[&str]) -> TokenSeq {
        words.iter().map(|w| w.to_string()).collect()
    }

    /// Independent tokenizer: classify every char, then cut at class changes.
    fn char_scan_oracle(text: &str) -> Vec<String> {
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        let mut start = None;
        for i in 0..=chars.len() {
            let word = i < chars.len() && chars[i].is_alphanumeric();
            match (start, word) {
                (None, true) => start = Some(i),
                (Some(s), false) => {
                    out.push(chars[s..i].iter().collect::<String>().to_lowercase());
                    start = None;
                }
                _ => {}
            }
        }
        out
    }

    #[test]
    fn tokenizes_table_sentence() {
        assert_eq!(
            tokenize("This phone case is great."),
            toks(&["this", "phone", "case", "is", "great"])
        );
    }

    #[test]
    fn tokenizes_empty() {
        assert!(tokenize("").is_empty());
        assert!(tokenize(" ,.;! ").is_empty());
    }

    #[test]
    fn tokenizes_punctuation_runs() {
        let expected = char_scan_oracle("Wi-Fi 100%");
        assert_eq!(expected, toks(&["wi", "fi", "100"]));
        assert_eq!(tokenize("Wi-Fi 100%"), expected);
    }

    #[test]
    fn tokens_stay_alphanumeric_after_lowercasing() {
        for t in tokenize("İstanbul ÀÉÎ straße") {
            assert!(t.chars().all(char::is_alphanumeric), "{t:?}");
        }
    }

    #[test]
    fn removes_table_stop_words() {
        let out = remove_stopwords(toks(&["this", "phone", "case", "is", "great"]), &StopWords::english());
        assert_eq!(out, toks(&["phone", "case", "great"]));
    }

    #[test]
    fn stop_word_edge_cases() {
        assert!(remove_stopwords(Vec::new(), &StopWords::english()).is_empty());
        let empty = StopWords::default();
        assert_eq!(
            remove_stopwords(toks(&["phone", "phone"]), &empty),
            toks(&["phone", "phone"])
        );
    }

    #[test]
    fn bundled_list_has_179_lowercase_words() {
        let list = StopWords::english();
        assert_eq!(list.len(), 179);
        assert!(ENGLISH_STOPWORDS.lines().all(|w| w == w.to_lowercase()));
    }

    fn brute_force_df(docs: &[TokenSeq]) -> std::collections::BTreeMap<String, u64> {
        let mut df = std::collections::BTreeMap::new();
        for doc in docs {
            let mut uniq = doc.clone();
            uniq.sort();
            uniq.dedup();
            for t in uniq {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        df
    }

    #[test]
    fn vocabulary_counts_document_frequency() {
        let docs = vec![toks(&["phone", "case"]), toks(&["phone", "great"])];
        let oracle = brute_force_df(&docs);
        let v = build_vocabulary(&docs, 10, 1);
        assert_eq!(v.len(), 3);
        assert_eq!(v.terms(), &["case", "great", "phone"]);
        for (term, df) in &oracle {
            assert_eq!(v.document_frequency(v.index_of(term).unwrap()), *df);
        }
        assert_eq!(oracle["phone"], 2);
    }

    #[test]
    fn vocabulary_min_df_filters() {
        let docs = vec![toks(&["phone", "case"]), toks(&["phone", "great"])];
        let v = build_vocabulary(&docs, 10, 2);
        assert_eq!(v.terms(), &["phone"]);
    }

    #[test]
    fn vocabulary_cap_breaks_ties_lexicographically() {
        let docs = vec![toks(&["b", "c", "a"]), toks(&["d", "c"])];
        let v = build_vocabulary(&docs, 2, 1);
        assert_eq!(v.terms(), &["a", "c"]);
    }

    #[test]
    fn empty_corpus_gives_empty_vocabulary() {
        let v = build_vocabulary(&[], 10, 1);
        assert!(v.is_empty());
        assert_eq!(v.n_documents(), 0);
        assert!(fit_idf::<f64>(v).is_err());
    }

    #[test]
    fn idf_worked_values() {
        assert_eq!(smoothed_idf::<f64>(2, 2), 1.0);
        assert!((smoothed_idf::<f64>(2, 1) - 1.405465).abs() < 1e-6);
        let docs = vec![toks(&["x", "y"]), toks(&["x", "y"])];
        let m = fit_idf::<f64>(build_vocabulary(&docs, 10, 1)).unwrap();
        assert!(m.idf().iter().all(|&w| w == 1.0));
    }

    fn phone_model() -> TfIdfModel<f64> {
        let docs = vec![toks(&["phone", "case"]), toks(&["phone", "great"])];
        fit_idf(build_vocabulary(&docs, 10, 1)).unwrap()
    }

    #[test]
    fn transform_worked_example() {
        let m = phone_model();
        let v = m.transform(&toks(&["phone", "case"]));
        let phone = v.get(m.vocabulary().index_of("phone").unwrap());
        let case = v.get(m.vocabulary().index_of("case").unwrap());
        // 1 / sqrt(1 + 1.405465^2) = 0.579739 (rounds to 0.5797, not 0.5798).
        let oracle = 1.0 / (1.0 + (1.5f64.ln() + 1.0).powi(2)).sqrt();
        assert!((oracle - 0.579739).abs() < 1e-6);
        assert!((phone - oracle).abs() < 1e-12, "{phone}");
        assert!((case - 0.8148).abs() < 5e-5, "{case}");
        assert!((v.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transform_empty_and_oov() {
        let m = phone_model();
        let empty = m.transform(&[]);
        assert!(empty.is_zero());
        assert_eq!(empty.dimension(), 3);
        assert!(m.transform(&toks(&["zzz"])).is_zero());
    }

    #[test]
    fn transform_in_f32() {
        let docs = vec![toks(&["phone", "case"]), toks(&["phone", "great"])];
        let m: TfIdfModel<f32> = fit_idf(build_vocabulary(&docs, 10, 1)).unwrap();
        let v = m.transform(&toks(&["phone", "case"]));
        assert!((v.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn json_round_trip() {
        let m = phone_model();
        let back = TfIdfModel::<f64>::from_json(Path::new("m.json"), &m.to_json()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn json_rejects_unknown_version() {
        let text = phone_model().to_json().replace("\"version\":1", "\"version\":9");
        assert!(matches!(
            TfIdfModel::<f64>::from_json(Path::new("m.json"), &text),
            Err(Error::ArtifactVersion { found: 9, .. })
        ));
    }

    proptest! {
        #[test]
        fn tokenizer_matches_char_scan(text in "\\PC{0,40}") {
            prop_assert_eq!(tokenize(&text), char_scan_oracle(&text).into_iter()
                .map(|t| t.chars().filter(|c| c.is_alphanumeric()).collect::<String>())
                .filter(|t| !t.is_empty())
                .collect::<Vec<_>>());
        }

        #[test]
        fn idf_is_monotone(n in 1u64..1000, a in 1u64..1000, b in 1u64..1000) {
            let (a, b) = (a.min(n), b.min(n));
            if a < b {
                prop_assert!(smoothed_idf::<f64>(n, a) > smoothed_idf::<f64>(n, b));
            }
            prop_assert!(smoothed_idf::<f64>(n, a) >= 1.0);
        }

        #[test]
        fn vocabulary_is_a_bijection(docs in proptest::collection::vec(
            proptest::collection::vec("[a-e]{1,2}", 0..6), 0..12)) {
            let v = build_vocabulary(&docs, 8, 1);
            prop_assert!(v.len() <= 8);
            for (i, t) in v.terms().iter().enumerate() {
                prop_assert_eq!(v.index_of(t), Some(i));
                let df = v.document_frequency(i);
                prop_assert!(df >= 1 && df <= v.n_documents());
            }
            prop_assert!(v.terms().windows(2).all(|w| w[0] < w[1]));
        }
    }
}
