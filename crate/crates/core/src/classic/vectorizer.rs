use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ClassicError;

/// Sparse row: `(column, value)` pairs with strictly increasing columns.
pub type SparseRow = Vec<(usize, f64)>;

const STOP_WORDS: &str = include_str!("../../resources/stop_words_en.txt");

/// The embedded English stop-word list.
pub fn english_stop_words() -> BTreeSet<String> {
    STOP_WORDS.lines().map(str::trim).filter(|w| !w.is_empty()).map(String::from).collect()
}

/// Lowercased maximal runs of alphanumeric characters.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BowVectorizer {
    vocabulary: BTreeMap<String, usize>,
    stop_words: BTreeSet<String>,
    min_df: usize,
}

impl BowVectorizer {
    pub fn fit<S: AsRef<str>>(texts: &[S], min_df: usize) -> Result<Self, ClassicError> {
        Self::fit_with(texts, english_stop_words(), min_df)
    }

    /// Vocabulary columns follow lexicographic token order, so the result
    /// does not depend on document order.
    pub fn fit_with<S: AsRef<str>>(
        texts: &[S],
        stop_words: BTreeSet<String>,
        min_df: usize,
    ) -> Result<Self, ClassicError> {
        if texts.is_empty() {
            return Err(ClassicError::EmptyCorpus);
        }
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for text in texts {
            let seen: BTreeSet<String> = tokenize(text.as_ref()).filter(|t| !stop_words.contains(t)).collect();
            for token in seen {
                *df.entry(token).or_default() += 1;
            }
        }
        let vocabulary = df
            .into_iter()
            .filter(|(_, n)| *n >= min_df.max(1))
            .enumerate()
            .map(|(i, (token, _))| (token, i))
            .collect();
        Ok(Self {
            vocabulary,
            stop_words,
            min_df,
        })
    }

    pub fn vocabulary(&self) -> &BTreeMap<String, usize> {
        &self.vocabulary
    }

    pub fn stop_words(&self) -> &BTreeSet<String> {
        &self.stop_words
    }

    pub fn min_df(&self) -> usize {
        self.min_df
    }

    pub fn len(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocabulary.is_empty()
    }

    /// Token counts; out-of-vocabulary tokens are ignored.
    pub fn transform(&self, text: &str) -> SparseRow {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for token in tokenize(text) {
            if let Some(&col) = self.vocabulary.get(&token) {
                *counts.entry(col).or_default() += 1.0;
            }
        }
        counts.into_iter().collect()
    }

    pub fn transform_all<S: AsRef<str>>(&self, texts: &[S]) -> Vec<SparseRow> {
        texts.iter().map(|t| self.transform(t.as_ref())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stops(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn stop_words_never_enter_vocabulary() {
        let v = BowVectorizer::fit_with(&["a cat", "the cat"], stops(&["a", "the"]), 1).unwrap();
        assert_eq!(v.vocabulary().keys().collect::<Vec<_>>(), vec!["cat"]);
    }

    #[test]
    fn min_df_drops_singletons() {
        let docs = ["red apple", "green apple", "red pear"];
        let v = BowVectorizer::fit_with(&docs, stops(&[]), 2).unwrap();
        assert_eq!(v.vocabulary().keys().collect::<Vec<_>>(), vec!["apple", "red"]);
        let v = BowVectorizer::fit_with(&docs, stops(&[]), 1).unwrap();
        assert_eq!(v.len(), 4);
    }

    #[test]
    fn counts_and_dense_indices() {
        let v = BowVectorizer::fit_with(&["Cat, dog!", "bird"], stops(&[]), 1).unwrap();
        assert_eq!(v.vocabulary().values().copied().collect::<Vec<_>>(), vec![0, 1, 2]);
        let cat = v.vocabulary()["cat"];
        assert_eq!(v.transform("cat CAT unknown"), vec![(cat, 2.0)]);
    }

    #[test]
    fn order_independent() {
        let a = BowVectorizer::fit(&["the quick fox", "lazy dog barks"], 1).unwrap();
        let b = BowVectorizer::fit(&["lazy dog barks", "the quick fox"], 1).unwrap();
        assert_eq!(a, b);
        assert!(!a.vocabulary().contains_key("the"));
    }

    #[test]
    fn tokenizer_splits_on_non_alphanumerics() {
        let tokens: Vec<String> = tokenize("Don't stop-believing, 2024ÄB!").collect();
        assert_eq!(tokens, vec!["don", "t", "stop", "believing", "2024äb"]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let none: [&str; 0] = [];
        assert!(matches!(BowVectorizer::fit(&none, 1), Err(ClassicError::EmptyCorpus)));
    }
}
