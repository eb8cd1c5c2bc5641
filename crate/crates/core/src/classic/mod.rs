//! Non-LLM baselines: a seeded random classifier and bag-of-words logistic
//! regression (one-vs-rest for multilabel targets).

mod logreg;
mod vectorizer;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::metrics::{InterchangeRow, DISINFORMATION};
use crate::taxonomy::IntentCode;

pub use logreg::{
    gradient, lipschitz_bound, objective, train_logreg, train_ovr, LabelModel, LogRegHyper, LogRegModel, OvRModel,
};
pub use vectorizer::{english_stop_words, tokenize, BowVectorizer, SparseRow};

#[derive(Debug, Error)]
pub enum ClassicError {
    #[error("cannot fit on an empty corpus")]
    EmptyCorpus,
    #[error("training labels contain a single class{}", .0.as_ref().map(|l| format!(" for `{l}`")).unwrap_or_default())]
    DegenerateLabels(Option<String>),
    #[error("{rows} feature rows but {labels} labels")]
    ShapeMismatch { rows: usize, labels: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("class prior {0} is outside [0, 1]")]
    InvalidPrior(f64),
    #[error("training diverged; lower the learning rate")]
    Diverged,
    #[error("unknown baseline `{0}`")]
    UnknownBaseline(String),
    #[error("model file: {0}")]
    ModelFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which gold labels a baseline learns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassicTarget {
    Detection,
    IntentBinary(IntentCode),
    IntentMultilabel,
}

impl ClassicTarget {
    pub fn labels(self) -> Vec<String> {
        match self {
            ClassicTarget::Detection => vec![DISINFORMATION.to_string()],
            ClassicTarget::IntentBinary(code) => vec![code.to_string()],
            ClassicTarget::IntentMultilabel => IntentCode::ALL.iter().map(|c| c.to_string()).collect(),
        }
    }

    pub fn gold(self, doc: &Document) -> BTreeSet<String> {
        match self {
            ClassicTarget::Detection => {
                if doc.is_disinformation() {
                    BTreeSet::from([DISINFORMATION.to_string()])
                } else {
                    BTreeSet::new()
                }
            }
            ClassicTarget::IntentBinary(code) => doc
                .intents
                .iter()
                .filter(|c| **c == code)
                .map(|c| c.to_string())
                .collect(),
            ClassicTarget::IntentMultilabel => doc.intents.iter().map(|c| c.to_string()).collect(),
        }
    }

    /// Task name written to interchange rows.
    pub fn task_name(self) -> String {
        match self {
            ClassicTarget::Detection => "detect".into(),
            ClassicTarget::IntentBinary(code) => format!("intent-binary:{code}"),
            ClassicTarget::IntentMultilabel => "intent-multilabel".into(),
        }
    }
}

impl fmt::Display for ClassicTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.task_name())
    }
}

impl FromStr for ClassicTarget {
    type Err = ClassicError;

    /// `detect`, `intent-binary:<CODE>` or `intent-multilabel`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.split_once(':') {
            None if lower == "detect" || lower == "detection" => Ok(ClassicTarget::Detection),
            None if lower == "intent-multilabel" => Ok(ClassicTarget::IntentMultilabel),
            Some(("intent-binary", code)) => code
                .parse()
                .map(ClassicTarget::IntentBinary)
                .map_err(|_| ClassicError::UnknownBaseline(s.to_string())),
            _ => Err(ClassicError::UnknownBaseline(format!("target `{s}`"))),
        }
    }
}

/// Expected F1 of a classifier that says positive with probability `p` on
/// data with positive rate `q`, in the large-sample limit.
pub fn expected_random_f1(p: f64, q: f64) -> f64 {
    if p + q == 0.0 {
        0.0
    } else {
        2.0 * p * q / (p + q)
    }
}

/// Independent Bernoulli draws per (document, label), in document-major
/// order.
pub fn random_baseline<L: Ord + Clone>(
    n_docs: usize,
    priors: &[(L, f64)],
    seed: u64,
) -> Result<Vec<BTreeSet<L>>, ClassicError> {
    if let Some((_, p)) = priors.iter().find(|(_, p)| !(0.0..=1.0).contains(p)) {
        return Err(ClassicError::InvalidPrior(*p));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_docs)
        .map(|_| {
            priors
                .iter()
                .filter(|(_, p)| rng.random_bool(*p))
                .map(|(l, _)| l.clone())
                .collect()
        })
        .collect())
}

/// Vectorizer plus fitted weights, saved as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicModel {
    pub target: ClassicTarget,
    pub vectorizer: BowVectorizer,
    pub model: OvRModel,
}

impl ClassicModel {
    pub fn fit(
        train: &[&Document],
        target: ClassicTarget,
        hyper: &LogRegHyper,
        min_df: usize,
    ) -> Result<Self, ClassicError> {
        let texts: Vec<&str> = train.iter().map(|d| d.text.as_str()).collect();
        let vectorizer = BowVectorizer::fit(&texts, min_df)?;
        let xs = vectorizer.transform_all(&texts);
        let ys: Vec<BTreeSet<String>> = train.iter().map(|d| target.gold(d)).collect();
        let model = train_ovr(&xs, &ys, &target.labels(), vectorizer.len(), hyper)?;
        Ok(Self {
            target,
            vectorizer,
            model,
        })
    }

    pub fn predict(&self, text: &str) -> BTreeSet<String> {
        self.model.predict(&self.vectorizer.transform(text))
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassicError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| ClassicError::ModelFile(e.to_string()))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ClassicError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| ClassicError::ModelFile(format!("{}: {e}", path.display())))
    }
}

pub trait Baseline: Send + Sync {
    fn name(&self) -> &'static str;

    /// Fits on `train` and predicts `test`, returning interchange rows.
    fn fit_predict(
        &self,
        train: &[&Document],
        test: &[&Document],
        target: ClassicTarget,
        seed: u64,
    ) -> Result<Vec<InterchangeRow>, ClassicError>;
}

fn rows(test: &[&Document], target: ClassicTarget, preds: Vec<BTreeSet<String>>) -> Vec<InterchangeRow> {
    test.iter()
        .zip(preds)
        .map(|(doc, pred)| InterchangeRow {
            doc_id: doc.id.clone(),
            task: target.task_name(),
            gold: target.gold(doc),
            pred,
            parse_failed: false,
        })
        .collect()
}

/// Says positive for each label at that label's training-set rate.
pub struct RandomClassifier;

impl Baseline for RandomClassifier {
    fn name(&self) -> &'static str {
        "random"
    }

    fn fit_predict(
        &self,
        train: &[&Document],
        test: &[&Document],
        target: ClassicTarget,
        seed: u64,
    ) -> Result<Vec<InterchangeRow>, ClassicError> {
        if train.is_empty() {
            return Err(ClassicError::EmptyCorpus);
        }
        let priors: Vec<(String, f64)> = target
            .labels()
            .into_iter()
            .map(|label| {
                let hits = train.iter().filter(|d| target.gold(d).contains(&label)).count();
                (label, hits as f64 / train.len() as f64)
            })
            .collect();
        Ok(rows(test, target, random_baseline(test.len(), &priors, seed)?))
    }
}

pub struct LogisticRegression {
    pub hyper: LogRegHyper,
    pub min_df: usize,
}

impl Default for LogisticRegression {
    fn default() -> Self {
        Self {
            hyper: LogRegHyper::default(),
            min_df: 1,
        }
    }
}

impl Baseline for LogisticRegression {
    fn name(&self) -> &'static str {
        "logreg"
    }

    fn fit_predict(
        &self,
        train: &[&Document],
        test: &[&Document],
        target: ClassicTarget,
        _seed: u64,
    ) -> Result<Vec<InterchangeRow>, ClassicError> {
        let model = ClassicModel::fit(train, target, &self.hyper, self.min_df)?;
        let preds = test.iter().map(|d| model.predict(&d.text)).collect();
        Ok(rows(test, target, preds))
    }
}

#[derive(Clone, Default)]
pub struct BaselineRegistry {
    baselines: BTreeMap<&'static str, Arc<dyn Baseline>>,
}

impl fmt::Debug for BaselineRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.baselines.keys()).finish()
    }
}

impl BaselineRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn builtin() -> Self {
        let mut registry = Self::new();
        registry.register(Arc::new(RandomClassifier));
        registry.register(Arc::new(LogisticRegression::default()));
        registry
    }

    pub fn register(&mut self, baseline: Arc<dyn Baseline>) {
        self.baselines.insert(baseline.name(), baseline);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Baseline>, ClassicError> {
        self.baselines
            .get(name)
            .cloned()
            .ok_or_else(|| ClassicError::UnknownBaseline(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.baselines.keys().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Credibility, Genre};
    use crate::metrics::{f1_positive, ConfusionCounts};

    #[test]
    fn prior_one_is_all_positive() {
        let preds = random_baseline(50, &[("x", 1.0)], 3).unwrap();
        assert!(preds.iter().all(|s| s.contains("x")));
        let preds = random_baseline(50, &[("x", 0.0)], 3).unwrap();
        assert!(preds.iter().all(|s| s.is_empty()));
        assert!(random_baseline(1, &[("x", 1.5)], 0).is_err());
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let a = random_baseline(100, &[("x", 0.3), ("y", 0.6)], 42).unwrap();
        assert_eq!(a, random_baseline(100, &[("x", 0.3), ("y", 0.6)], 42).unwrap());
        assert_ne!(a, random_baseline(100, &[("x", 0.3), ("y", 0.6)], 43).unwrap());
    }

    #[test]
    fn random_f1_matches_closed_form() {
        // Balanced gold, prior 0.3: expected F1 = 2*0.3*0.5/0.8.
        let n = 10_000;
        let gold: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let seeds = 20;
        let mean: f64 = (0..seeds)
            .map(|seed| {
                let preds = random_baseline(n, &[((), 0.3)], seed).unwrap();
                f1_positive(&ConfusionCounts::from_pairs(gold.iter().zip(&preds).map(|(g, p)| (*g, !p.is_empty()))))
            })
            .sum::<f64>()
            / seeds as f64;
        assert!((mean - expected_random_f1(0.3, 0.5)).abs() < 0.01, "{mean}");
    }

    fn doc(id: usize, text: &str, disinfo: bool) -> Document {
        Document {
            id: format!("d{id}"),
            text: text.into(),
            credibility: if disinfo { Credibility::Disinformation } else { Credibility::Credible },
            intents: if disinfo { BTreeSet::from([IntentCode::Cpv]) } else { BTreeSet::new() },
            genre: Genre::Post,
            language: "en".into(),
            published: None,
            source: None,
            dataset: "t".into(),
        }
    }

    #[test]
    fn model_save_load_round_trip() {
        let docs: Vec<Document> = (0..20)
            .map(|i| if i % 2 == 0 { doc(i, "hoax plot lies", true) } else { doc(i, "weather report sunny", false) })
            .collect();
        let refs: Vec<&Document> = docs.iter().collect();
        let model = ClassicModel::fit(&refs, ClassicTarget::IntentMultilabel, &LogRegHyper::default(), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let loaded = ClassicModel::load(&path).unwrap();
        assert_eq!(loaded, model);
        assert_eq!(loaded.predict("a hoax"), BTreeSet::from(["CPV".to_string()]));
        assert_eq!(model.model.degenerate_labels().len(), 4);
    }

    #[test]
    fn registry_and_targets() {
        let registry = BaselineRegistry::builtin();
        assert_eq!(registry.names().collect::<Vec<_>>(), vec!["logreg", "random"]);
        assert!(registry.get("svm").is_err());
        assert_eq!("detect".parse::<ClassicTarget>().unwrap(), ClassicTarget::Detection);
        assert_eq!(
            "intent-binary:pasv".parse::<ClassicTarget>().unwrap(),
            ClassicTarget::IntentBinary(IntentCode::Pasv)
        );
    }
}
