//! Labeled document collections: loading, statistics, stratified sampling and
//! evaluation splits.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::IntentCode;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("line {line}: unknown intent code `{code}`")]
    UnknownIntentCode { line: usize, code: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("stratum {class} has {have} documents, {need} needed")]
    InsufficientStratum {
        class: Credibility,
        have: usize,
        need: usize,
    },
    #[error("invalid sampling target: {0}")]
    InvalidTarget(String),
    #[error("document `{0}` has no publish date")]
    MissingDate(String),
    #[error("invalid month `{0}`, expected YYYY-MM")]
    InvalidMonth(String),
    #[error("invalid split `{0}`")]
    InvalidSplit(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Credibility {
    Credible,
    Disinformation,
    HardToSay,
}

impl Credibility {
    pub fn as_str(self) -> &'static str {
        match self {
            Credibility::Credible => "Credible",
            Credibility::Disinformation => "Disinformation",
            Credibility::HardToSay => "HardToSay",
        }
    }
}

impl fmt::Display for Credibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Credibility {
    type Err = String;

    /// Accepts the release spellings ("Hard-to-say", "disinformation", ...)
    /// by comparing lower-cased alphanumerics only.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        match key.as_str() {
            "credible" | "credibleinformation" => Ok(Credibility::Credible),
            "disinformation" => Ok(Credibility::Disinformation),
            "hardtosay" => Ok(Credibility::HardToSay),
            _ => Err(format!("unknown credibility label `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Genre {
    Article,
    Post,
}

impl FromStr for Genre {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "article" | "articles" | "news" => Ok(Genre::Article),
            "post" | "posts" | "tweet" => Ok(Genre::Post),
            _ => Err(format!("unknown genre `{s}`")),
        }
    }
}

/// A calendar month, used for knowledge cutoffs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    year: i32,
    month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Option<Self> {
        (1..=12).contains(&month).then_some(Self { year, month })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn month(self) -> u32 {
        self.month
    }

    /// True when `date` falls in this month or earlier.
    pub fn covers(self, date: NaiveDate) -> bool {
        (date.year(), date.month()) <= (self.year, self.month)
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CorpusError::InvalidMonth(s.to_string());
        let (year, month) = s.trim().split_once('-').ok_or_else(bad)?;
        let year: i32 = year.parse().map_err(|_| bad())?;
        let month: u32 = month.parse().map_err(|_| bad())?;
        YearMonth::new(year, month).ok_or_else(bad)
    }
}

impl Serialize for YearMonth {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub credibility: Credibility,
    #[serde(default)]
    pub intents: BTreeSet<IntentCode>,
    pub genre: Genre,
    pub language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default)]
    pub dataset: String,
}

impl Document {
    /// Hard-to-say documents are kept for statistics but never enter an
    /// experiment.
    pub fn excluded(&self) -> bool {
        self.credibility == Credibility::HardToSay
    }

    pub fn is_disinformation(&self) -> bool {
        self.credibility == Credibility::Disinformation
    }

    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }

    pub fn char_count(&self) -> usize {
        self.text.chars().count()
    }

    fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.text.trim().is_empty() {
            return Err("text is empty".into());
        }
        if self.credibility == Credibility::Credible && !self.intents.is_empty() {
            return Err("credible document carries intent labels".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    docs: Vec<Document>,
}

impl Corpus {
    /// Builds a corpus from already-validated documents, rejecting duplicate
    /// ids and rows that break a document invariant.
    pub fn from_documents(docs: Vec<Document>) -> Result<Self, CorpusError> {
        let mut ids = HashSet::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            doc.validate().map_err(|reason| CorpusError::MalformedRow { line: i + 1, reason })?;
            if !ids.insert(doc.id.as_str()) {
                return Err(CorpusError::DuplicateId(doc.id.clone()));
            }
        }
        Ok(Self { docs })
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.docs.iter().find(|d| d.id == id)
    }

    /// Documents eligible for experiments (Hard-to-say removed).
    pub fn experimental(&self) -> impl Iterator<Item = &Document> {
        self.docs.iter().filter(|d| !d.excluded())
    }

    pub fn excluded_count(&self) -> usize {
        self.docs.iter().filter(|d| d.excluded()).count()
    }

    fn subset<'a>(&self, docs: impl Iterator<Item = &'a Document>) -> Corpus {
        Corpus {
            docs: docs.cloned().collect(),
        }
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = BufWriter::new(File::create(path)?);
        for doc in &self.docs {
            serde_json::to_writer(&mut out, doc).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "csv" => Ok(CorpusFormat::Csv),
            _ => Err(format!("unknown corpus format `{s}`")),
        }
    }
}

impl CorpusFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Some(CorpusFormat::Jsonl),
            "csv" => Some(CorpusFormat::Csv),
            _ => None,
        }
    }
}

/// Wire form of one row, before label parsing.
#[derive(Debug, Deserialize)]
struct RawRow {
    id: String,
    text: String,
    credibility: String,
    #[serde(default)]
    intents: RawIntents,
    genre: String,
    language: String,
    #[serde(default)]
    published: Option<String>,
    #[serde(default)]
    source: Option<String>,
    #[serde(default)]
    dataset: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(untagged)]
enum RawIntents {
    #[default]
    Missing,
    List(Vec<String>),
    Piped(String),
}

impl RawIntents {
    fn codes(self) -> Vec<String> {
        match self {
            RawIntents::Missing => Vec::new(),
            RawIntents::List(list) => list,
            RawIntents::Piped(cell) => cell.split('|').map(str::to_string).collect(),
        }
    }
}

fn convert_row(line: usize, raw: RawRow) -> Result<Document, CorpusError> {
    let malformed = |reason: String| CorpusError::MalformedRow { line, reason };
    let credibility = raw.credibility.parse().map_err(malformed)?;
    let genre = raw.genre.parse().map_err(malformed)?;
    let mut intents = BTreeSet::new();
    for code in raw.intents.codes() {
        let code = code.trim();
        if code.is_empty() {
            continue;
        }
        let parsed = code.parse::<IntentCode>().map_err(|_| CorpusError::UnknownIntentCode {
            line,
            code: code.to_string(),
        })?;
        intents.insert(parsed);
    }
    let published = match raw.published.as_deref().map(str::trim) {
        None | Some("") => None,
        Some(s) => Some(
            NaiveDate::parse_from_str(s.get(..10).unwrap_or(s), "%Y-%m-%d")
                .map_err(|e| malformed(format!("bad published date `{s}`: {e}")))?,
        ),
    };
    let blank_to_none = |s: Option<String>| s.filter(|v| !v.trim().is_empty());
    let doc = Document {
        id: raw.id.trim().to_string(),
        text: raw.text,
        credibility,
        intents,
        genre,
        language: raw.language.trim().to_string(),
        published,
        source: blank_to_none(raw.source),
        dataset: raw.dataset.unwrap_or_default(),
    };
    doc.validate().map_err(malformed)?;
    Ok(doc)
}

/// Loads a corpus. JSONL rows carry intents as an array, CSV rows as a
/// pipe-separated cell. Line numbers in errors are 1-based and count the CSV
/// header.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    let file = File::open(path)?;
    let mut docs = Vec::new();
    match format {
        CorpusFormat::Jsonl => {
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line_no = i + 1;
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let raw: RawRow = serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRow {
                    line: line_no,
                    reason: e.to_string(),
                })?;
                docs.push(convert_row(line_no, raw)?);
            }
        }
        CorpusFormat::Csv => {
            let mut reader = csv::Reader::from_reader(file);
            for (i, record) in reader.deserialize::<RawRow>().enumerate() {
                let line_no = i + 2;
                let raw = record.map_err(|e| CorpusError::MalformedRow {
                    line: line_no,
                    reason: e.to_string(),
                })?;
                docs.push(convert_row(line_no, raw)?);
            }
        }
    }
    let mut ids = HashSet::with_capacity(docs.len());
    for doc in &docs {
        if !ids.insert(doc.id.clone()) {
            return Err(CorpusError::DuplicateId(doc.id.clone()));
        }
    }
    Ok(Corpus { docs })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntentShare {
    pub count: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub doc_count: usize,
    pub excluded_count: usize,
    pub avg_words: f64,
    pub avg_chars: f64,
    /// Over Credible and Disinformation only.
    pub class_proportions: BTreeMap<Credibility, f64>,
    pub intent_counts: BTreeMap<IntentCode, IntentShare>,
}

pub fn compute_stats(corpus: &Corpus) -> Result<CorpusStats, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let n = corpus.len() as f64;
    let words: usize = corpus.docs.iter().map(Document::word_count).sum();
    let chars: usize = corpus.docs.iter().map(Document::char_count).sum();

    let mut class_counts = BTreeMap::new();
    for doc in corpus.experimental() {
        *class_counts.entry(doc.credibility).or_insert(0usize) += 1;
    }
    let labeled: usize = class_counts.values().sum();
    let class_proportions = [Credibility::Credible, Credibility::Disinformation]
        .into_iter()
        .map(|class| {
            let count = class_counts.get(&class).copied().unwrap_or(0);
            let fraction = if labeled == 0 { 0.0 } else { count as f64 / labeled as f64 };
            (class, fraction)
        })
        .collect();

    let intent_counts = IntentCode::ALL
        .into_iter()
        .map(|code| {
            let count = corpus.docs.iter().filter(|d| d.intents.contains(&code)).count();
            (
                code,
                IntentShare {
                    count,
                    fraction: count as f64 / n,
                },
            )
        })
        .collect();

    Ok(CorpusStats {
        doc_count: corpus.len(),
        excluded_count: corpus.excluded_count(),
        avg_words: words as f64 / n,
        avg_chars: chars as f64 / n,
        class_proportions,
        intent_counts,
    })
}

/// Per-class sample sizes by the largest-remainder method.
///
/// Each class first gets `floor(n * fraction)`; the seats left over go to the
/// classes with the largest fractional parts. Ties go to Disinformation
/// before Credible.
pub fn allocate_counts(
    n: usize,
    target: &BTreeMap<Credibility, f64>,
) -> Result<BTreeMap<Credibility, usize>, CorpusError> {
    if target.contains_key(&Credibility::HardToSay) {
        return Err(CorpusError::InvalidTarget(
            "Hard-to-say documents cannot be sampled".into(),
        ));
    }
    if target.values().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(CorpusError::InvalidTarget("fractions must be finite and nonnegative".into()));
    }
    let total: f64 = target.values().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(CorpusError::InvalidTarget(format!("fractions sum to {total}, expected 1")));
    }
    let mut counts = BTreeMap::new();
    let mut remainders = Vec::new();
    for (&class, &fraction) in target {
        let quota = n as f64 * fraction;
        let floor = quota.floor() as usize;
        counts.insert(class, floor);
        remainders.push((class, quota - floor as f64));
    }
    let assigned: usize = counts.values().sum();
    // Disinformation sorts after Credible in the enum, so reverse the class
    // order to break ties in its favour.
    remainders.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.0.cmp(&a.0)));
    for (class, _) in remainders.iter().take(n.saturating_sub(assigned)) {
        *counts.get_mut(class).expect("class present") += 1;
    }
    Ok(counts)
}

/// Seeded stratified sampling without replacement. Selected documents keep
/// their corpus order.
pub fn stratified_sample(
    corpus: &Corpus,
    n: usize,
    target: &BTreeMap<Credibility, f64>,
    seed: u64,
) -> Result<Corpus, CorpusError> {
    let counts = allocate_counts(n, target)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; corpus.len()];
    for (&class, &need) in &counts {
        let members: Vec<usize> = corpus
            .docs
            .iter()
            .enumerate()
            .filter(|(_, d)| d.credibility == class)
            .map(|(i, _)| i)
            .collect();
        if members.len() < need {
            return Err(CorpusError::InsufficientStratum {
                class,
                have: members.len(),
                need,
            });
        }
        for pick in rand::seq::index::sample(&mut rng, members.len(), need) {
            chosen[members[pick]] = true;
        }
    }
    Ok(corpus.subset(
        corpus
            .docs
            .iter()
            .zip(&chosen)
            .filter(|(_, keep)| **keep)
            .map(|(d, _)| d),
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitSpec {
    /// Articles on the left, posts on the right.
    Genre,
    /// Published in or before the cutoff month on the left.
    TemporalCutoff { cutoff: YearMonth },
    /// Documents in the given language on the left.
    Language { language: String },
}

impl SplitSpec {
    /// Names of the (left, right) sides, as used in reports.
    pub fn side_names(&self) -> (&'static str, &'static str) {
        match self {
            SplitSpec::Genre => ("articles", "posts"),
            SplitSpec::TemporalCutoff { .. } => ("prior", "post"),
            SplitSpec::Language { .. } => ("matching", "rest"),
        }
    }
}

impl fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitSpec::Genre => f.write_str("genre"),
            SplitSpec::TemporalCutoff { cutoff } => write!(f, "temporal:{cutoff}"),
            SplitSpec::Language { language } => write!(f, "language:{language}"),
        }
    }
}

impl FromStr for SplitSpec {
    type Err = CorpusError;

    /// `genre`, `temporal:YYYY-MM` or `language:<tag>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        match (kind.trim().to_ascii_lowercase().as_str(), arg) {
            ("genre", None) => Ok(SplitSpec::Genre),
            ("temporal", Some(cutoff)) => Ok(SplitSpec::TemporalCutoff {
                cutoff: cutoff.parse()?,
            }),
            ("language", Some(tag)) if !tag.trim().is_empty() => Ok(SplitSpec::Language {
                language: tag.trim().to_string(),
            }),
            _ => Err(CorpusError::InvalidSplit(s.to_string())),
        }
    }
}

/// `en` matches `en`, `EN` and `en-US`.
fn language_matches(tag: &str, wanted: &str) -> bool {
    let primary = |t: &str| t.split(['-', '_']).next().unwrap_or("").to_ascii_lowercase();
    tag.eq_ignore_ascii_case(wanted) || (!wanted.contains(['-', '_']) && primary(tag) == primary(wanted))
}

/// Exhaustive, disjoint partition of the corpus.
pub fn split(corpus: &Corpus, spec: &SplitSpec) -> Result<(Corpus, Corpus), CorpusError> {
    let mut left = Vec::new();
    let mut right = Vec::new();
    for doc in &corpus.docs {
        let goes_left = match spec {
            SplitSpec::Genre => doc.genre == Genre::Article,
            SplitSpec::TemporalCutoff { cutoff } => {
                let date = doc.published.ok_or_else(|| CorpusError::MissingDate(doc.id.clone()))?;
                cutoff.covers(date)
            }
            SplitSpec::Language { language } => language_matches(&doc.language, language),
        };
        if goes_left {
            left.push(doc.clone());
        } else {
            right.push(doc.clone());
        }
    }
    Ok((Corpus { docs: left }, Corpus { docs: right }))
}

#[cfg(test)]
mod tests {
    use std::io::Write as _;

    use super::*;

    pub(crate) fn doc(id: &str, text: &str, credibility: Credibility) -> Document {
        Document {
            id: id.into(),
            text: text.into(),
            credibility,
            intents: BTreeSet::new(),
            genre: Genre::Article,
            language: "en".into(),
            published: None,
            source: None,
            dataset: "test".into(),
        }
    }

    fn write_tmp(contents: &str, suffix: &str) -> tempfile::NamedTempFile {
        let mut file = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        file.write_all(contents.as_bytes()).unwrap();
        file
    }

    const THREE_ROWS: &str = r#"{"id":"a","text":"one two","credibility":"Credible","intents":[],"genre":"article","language":"en","published":"2024-01-02","source":"x","dataset":"t"}
{"id":"b","text":"three","credibility":"Disinformation","intents":["UCPI","CPV"],"genre":"post","language":"en","published":"2024-10-01","dataset":"t"}
{"id":"c","text":"four five six","credibility":"Hard-to-say","intents":[],"genre":"article","language":"pl","dataset":"t"}
"#;

    #[test]
    fn loads_jsonl_and_flags_hard_to_say() {
        let file = write_tmp(THREE_ROWS, ".jsonl");
        let corpus = load_corpus(file.path(), CorpusFormat::Jsonl).unwrap();
        assert_eq!(corpus.len(), 3);
        let c = corpus.get("c").unwrap();
        assert_eq!(c.credibility, Credibility::HardToSay);
        assert!(c.excluded());
        assert_eq!(corpus.experimental().count(), 2);
        let b = corpus.get("b").unwrap();
        assert_eq!(b.intents, BTreeSet::from([IntentCode::Ucpi, IntentCode::Cpv]));
        assert_eq!(b.published, NaiveDate::from_ymd_opt(2024, 10, 1));
    }

    #[test]
    fn loads_csv_with_piped_intents() {
        let csv = "id,text,credibility,intents,genre,language,published,source,dataset\n\
                   a,\"hello, world\",Disinformation,UCPI|PASV,article,en,2024-09-30,,m\n\
                   b,fine,Credible,,post,en,,,m\n";
        let file = write_tmp(csv, ".csv");
        let corpus = load_corpus(file.path(), CorpusFormat::Csv).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(
            corpus.get("a").unwrap().intents,
            BTreeSet::from([IntentCode::Ucpi, IntentCode::Pasv])
        );
        assert_eq!(corpus.get("a").unwrap().text, "hello, world");
        assert!(corpus.get("b").unwrap().intents.is_empty());
        assert_eq!(corpus.get("b").unwrap().source, None);
    }

    #[test]
    fn credible_row_with_intents_is_malformed() {
        let row = r#"{"id":"a","text":"t","credibility":"Credible","intents":["UCPI"],"genre":"article","language":"en","dataset":"t"}"#;
        let file = write_tmp(row, ".jsonl");
        assert!(matches!(
            load_corpus(file.path(), CorpusFormat::Jsonl),
            Err(CorpusError::MalformedRow { line: 1, .. })
        ));
    }

    #[test]
    fn load_errors() {
        let dup = format!("{}\n{}", THREE_ROWS.lines().next().unwrap(), THREE_ROWS.lines().next().unwrap());
        let file = write_tmp(&dup, ".jsonl");
        assert!(matches!(
            load_corpus(file.path(), CorpusFormat::Jsonl),
            Err(CorpusError::DuplicateId(id)) if id == "a"
        ));

        let unknown = r#"{"id":"a","text":"t","credibility":"Disinformation","intents":["NOPE"],"genre":"article","language":"en"}"#;
        let file = write_tmp(unknown, ".jsonl");
        assert!(matches!(
            load_corpus(file.path(), CorpusFormat::Jsonl),
            Err(CorpusError::UnknownIntentCode { line: 1, code }) if code == "NOPE"
        ));

        let blank = r#"{"id":"a","text":"   ","credibility":"Credible","genre":"article","language":"en"}"#;
        let file = write_tmp(blank, ".jsonl");
        assert!(matches!(
            load_corpus(file.path(), CorpusFormat::Jsonl),
            Err(CorpusError::MalformedRow { .. })
        ));

        let missing = r#"{"id":"a","credibility":"Credible","genre":"article","language":"en"}"#;
        let file = write_tmp(missing, ".jsonl");
        assert!(matches!(
            load_corpus(file.path(), CorpusFormat::Jsonl),
            Err(CorpusError::MalformedRow { .. })
        ));
    }

    #[test]
    fn jsonl_write_then_load() {
        let file = write_tmp(THREE_ROWS, ".jsonl");
        let corpus = load_corpus(file.path(), CorpusFormat::Jsonl).unwrap();
        let out = tempfile::Builder::new().suffix(".jsonl").tempfile().unwrap();
        corpus.write_jsonl(out.path()).unwrap();
        assert_eq!(load_corpus(out.path(), CorpusFormat::Jsonl).unwrap(), corpus);
    }

    #[test]
    fn stats_simple_cases() {
        let one = Corpus::from_documents(vec![doc("a", "a b c", Credibility::Credible)]).unwrap();
        let stats = compute_stats(&one).unwrap();
        assert_eq!(stats.avg_words, 3.0);
        assert_eq!(stats.avg_chars, 5.0);

        let ten = ["w"; 10].join(" ");
        let twenty = ["w"; 20].join(" ");
        let two = Corpus::from_documents(vec![
            doc("a", &ten, Credibility::Credible),
            doc("b", &twenty, Credibility::Disinformation),
            doc("c", "x", Credibility::HardToSay),
        ])
        .unwrap();
        let stats = compute_stats(&two).unwrap();
        assert_eq!(stats.class_proportions[&Credibility::Credible], 0.5);
        assert_eq!(stats.class_proportions[&Credibility::Disinformation], 0.5);
        assert!(!stats.class_proportions.contains_key(&Credibility::HardToSay));
        assert_eq!(stats.excluded_count, 1);
        assert!(matches!(compute_stats(&Corpus::default()), Err(CorpusError::EmptyCorpus)));
    }

    #[test]
    fn stats_two_documents_average() {
        let corpus = Corpus::from_documents(vec![
            doc("a", &["w"; 10].join(" "), Credibility::Credible),
            doc("b", &["w"; 20].join(" "), Credibility::Credible),
        ])
        .unwrap();
        assert_eq!(compute_stats(&corpus).unwrap().avg_words, 15.0);
    }

    fn target(disinfo: f64, credible: f64) -> BTreeMap<Credibility, f64> {
        BTreeMap::from([
            (Credibility::Disinformation, disinfo),
            (Credibility::Credible, credible),
        ])
    }

    #[test]
    fn largest_remainder_allocation() {
        let counts = allocate_counts(500, &target(0.3, 0.7)).unwrap();
        assert_eq!(counts[&Credibility::Disinformation], 150);
        assert_eq!(counts[&Credibility::Credible], 350);

        // 1.5 / 1.5: one seat left over, tie goes to Disinformation.
        let counts = allocate_counts(3, &target(0.5, 0.5)).unwrap();
        assert_eq!(counts[&Credibility::Disinformation], 2);
        assert_eq!(counts[&Credibility::Credible], 1);

        // 7 * 0.45 = 3.15, 7 * 0.55 = 3.85: remainder goes to the larger part.
        let counts = allocate_counts(7, &target(0.45, 0.55)).unwrap();
        assert_eq!(counts[&Credibility::Disinformation], 3);
        assert_eq!(counts[&Credibility::Credible], 4);

        assert!(allocate_counts(10, &target(0.5, 0.6)).is_err());
    }

    fn synthetic(n: usize, positives: usize) -> Corpus {
        let docs = (0..n)
            .map(|i| {
                let class = if i < positives {
                    Credibility::Disinformation
                } else {
                    Credibility::Credible
                };
                doc(&format!("d{i:04}"), &format!("text {i}"), class)
            })
            .collect();
        Corpus::from_documents(docs).unwrap()
    }

    #[test]
    fn sampling_counts_and_determinism() {
        let corpus = synthetic(1000, 300);
        let a = stratified_sample(&corpus, 500, &target(0.3, 0.7), 11).unwrap();
        let b = stratified_sample(&corpus, 500, &target(0.3, 0.7), 11).unwrap();
        let c = stratified_sample(&corpus, 500, &target(0.3, 0.7), 12).unwrap();
        assert_eq!(a.len(), 500);
        assert_eq!(a.documents().iter().filter(|d| d.is_disinformation()).count(), 150);
        assert_eq!(a, b);
        assert_ne!(a, c);

        let empty = stratified_sample(&corpus, 0, &target(0.3, 0.7), 1).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn sampling_reports_short_stratum() {
        let corpus = synthetic(10, 2);
        assert!(matches!(
            stratified_sample(&corpus, 10, &target(0.5, 0.5), 1),
            Err(CorpusError::InsufficientStratum {
                class: Credibility::Disinformation,
                have: 2,
                need: 5
            })
        ));
    }

    #[test]
    fn temporal_boundary_is_inclusive_month_end() {
        let mut before = doc("a", "x", Credibility::Credible);
        before.published = NaiveDate::from_ymd_opt(2024, 9, 30);
        let mut after = doc("b", "y", Credibility::Credible);
        after.published = NaiveDate::from_ymd_opt(2024, 10, 1);
        let corpus = Corpus::from_documents(vec![before, after]).unwrap();
        let spec: SplitSpec = "temporal:2024-09".parse().unwrap();
        let (prior, post) = split(&corpus, &spec).unwrap();
        assert_eq!(prior.documents()[0].id, "a");
        assert_eq!(post.documents()[0].id, "b");
    }

    #[test]
    fn temporal_split_needs_dates() {
        let corpus = Corpus::from_documents(vec![doc("a", "x", Credibility::Credible)]).unwrap();
        let spec = SplitSpec::TemporalCutoff {
            cutoff: YearMonth::new(2024, 9).unwrap(),
        };
        assert!(matches!(split(&corpus, &spec), Err(CorpusError::MissingDate(id)) if id == "a"));
    }

    #[test]
    fn genre_and_language_splits() {
        let mut post = doc("c", "z", Credibility::Credible);
        post.genre = Genre::Post;
        post.language = "pl".into();
        let mut us = doc("b", "y", Credibility::Credible);
        us.language = "en-US".into();
        let corpus = Corpus::from_documents(vec![doc("a", "x", Credibility::Credible), us, post]).unwrap();
        let (articles, posts) = split(&corpus, &SplitSpec::Genre).unwrap();
        assert_eq!((articles.len(), posts.len()), (2, 1));
        let (en, rest) = split(&corpus, &"language:en".parse().unwrap()).unwrap();
        assert_eq!((en.len(), rest.len()), (2, 1));
        let (us_only, _) = split(&corpus, &"language:en-us".parse().unwrap()).unwrap();
        assert_eq!(us_only.len(), 1);
    }

    #[test]
    fn split_spec_parsing() {
        assert_eq!("genre".parse::<SplitSpec>().unwrap(), SplitSpec::Genre);
        assert!("temporal".parse::<SplitSpec>().is_err());
        assert!("temporal:2024-13".parse::<SplitSpec>().is_err());
        assert!("language:".parse::<SplitSpec>().is_err());
        let t: SplitSpec = "temporal:2024-09".parse().unwrap();
        assert_eq!(t.to_string(), "temporal:2024-09");
    }

    mod props {
        use proptest::prelude::*;

        use super::*;

        proptest! {
            #[test]
            fn splits_partition_the_corpus(
                genres in proptest::collection::vec(any::<bool>(), 0..40),
                months in proptest::collection::vec(1u32..=12, 0..40),
                cutoff in 1u32..=12,
            ) {
                let docs: Vec<Document> = genres.iter().zip(months.iter().chain(std::iter::repeat(&6))).enumerate()
                    .map(|(i, (article, month))| {
                        let mut d = doc(&format!("d{i}"), "t", Credibility::Credible);
                        d.genre = if *article { Genre::Article } else { Genre::Post };
                        d.published = NaiveDate::from_ymd_opt(2024, *month, 15);
                        d.language = if i % 3 == 0 { "de".into() } else { "en".into() };
                        d
                    })
                    .collect();
                let corpus = Corpus::from_documents(docs).unwrap();
                let specs = [
                    SplitSpec::Genre,
                    SplitSpec::TemporalCutoff { cutoff: YearMonth::new(2024, cutoff).unwrap() },
                    SplitSpec::Language { language: "en".into() },
                ];
                for spec in specs {
                    let (left, right) = split(&corpus, &spec).unwrap();
                    prop_assert_eq!(left.len() + right.len(), corpus.len());
                    let left_ids: HashSet<_> = left.documents().iter().map(|d| &d.id).collect();
                    prop_assert!(right.documents().iter().all(|d| !left_ids.contains(&d.id)));
                }
            }

            #[test]
            fn allocation_sums_to_n(n in 0usize..2000, p in 0.0f64..=1.0) {
                let counts = allocate_counts(n, &target(p, 1.0 - p)).unwrap();
                prop_assert_eq!(counts.values().sum::<usize>(), n);
                for (class, count) in counts {
                    let quota = n as f64 * if class == Credibility::Disinformation { p } else { 1.0 - p };
                    prop_assert!((count as f64 - quota).abs() < 1.0 + 1e-9);
                }
            }

            #[test]
            fn intent_fractions_match_counts(flags in proptest::collection::vec(0u8..32, 1..60)) {
                let docs: Vec<Document> = flags.iter().enumerate().map(|(i, bits)| {
                    let mut d = doc(&format!("d{i}"), "t", Credibility::Disinformation);
                    d.intents = IntentCode::ALL.iter().enumerate()
                        .filter(|(k, _)| bits & (1 << k) != 0).map(|(_, c)| *c).collect();
                    d
                }).collect();
                let corpus = Corpus::from_documents(docs).unwrap();
                let stats = compute_stats(&corpus).unwrap();
                for share in stats.intent_counts.values() {
                    prop_assert!((share.fraction - share.count as f64 / corpus.len() as f64).abs() <= 1e-12);
                    prop_assert!((0.0..=1.0).contains(&share.fraction));
                }
            }
        }
    }
}
