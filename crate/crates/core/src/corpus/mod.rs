//! Statement datasets, their logical variants, and instruction prompts.

mod comparison;
mod compose;
mod io;
mod negation;
mod prompt;
mod split;
mod template;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use comparison::{make_comparisons, Direction};
pub use compose::{make_conjunctions, make_disjunctions, DisjunctionStyle, ProperNounLexicon};
pub use io::{load_base_dataset, read_base_dataset, read_answers, read_jsonl, write_jsonl, write_prompts, Answer, AnswerRecord};
pub use negation::{negate, NegationRule, NegationRuleTable};
pub use prompt::{build_prompt, Condition, PromptRecord};
pub use split::{cv_split, Fold};
pub(crate) use split::cv_split_ids;
pub use template::Template;

/// The six curated single-topic datasets.
pub const CURATED_TOPICS: [&str; 6] = [
    "cities",
    "sp_en_trans",
    "element_symb",
    "animal_class",
    "inventors",
    "facts",
];

/// Curated topics whose statements follow a single template with an end word.
pub const TEMPLATED_TOPICS: [&str; 5] = [
    "cities",
    "sp_en_trans",
    "element_symb",
    "animal_class",
    "inventors",
];

pub const COMPARISON_SETS: [&str; 2] = ["larger_than", "smaller_than"];
pub const OPEN_DOMAIN_SETS: [&str; 2] = ["common_claim_true_false", "counterfact_true_false"];

/// Row counts of the released dataset files.
pub fn released_row_count(dataset_id: &str) -> Option<usize> {
    Some(match dataset_id {
        "cities" => 1496,
        "sp_en_trans" => 354,
        "element_symb" => 186,
        "animal_class" => 164,
        "inventors" => 406,
        "facts" => 561,
        "larger_than" | "smaller_than" => 1980,
        "common_claim_true_false" => 4450,
        "counterfact_true_false" => 31960,
        _ => return None,
    })
}

/// Whether `id` names a base dataset or one of its generated derivatives.
pub fn is_known_dataset_id(id: &str) -> bool {
    base_form(id).is_some()
}

/// Logical form implied by a dataset id, `None` for unknown ids.
pub fn base_form(id: &str) -> Option<LogicalForm> {
    if let Some(topic) = id.strip_prefix("neg_") {
        return CURATED_TOPICS.contains(&topic).then_some(LogicalForm::Negated);
    }
    if let Some(topic) = id.strip_suffix("_conj") {
        return CURATED_TOPICS.contains(&topic).then_some(LogicalForm::Conjunction);
    }
    if let Some(topic) = id.strip_suffix("_disj") {
        return CURATED_TOPICS.contains(&topic).then_some(LogicalForm::Disjunction);
    }
    if CURATED_TOPICS.contains(&id) {
        Some(LogicalForm::Affirmative)
    } else if COMPARISON_SETS.contains(&id) {
        Some(LogicalForm::Comparison)
    } else if OPEN_DOMAIN_SETS.contains(&id) {
        Some(LogicalForm::OpenDomain)
    } else {
        None
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("dataset {dataset_id}: expected {expected} rows, found {found}")]
    RowCount { dataset_id: String, expected: usize, found: usize },
    #[error("unknown dataset id `{0}`")]
    UnknownDataset(String),
    #[error("no negation rule matches statement {row} of {dataset_id}: {text:?}")]
    UnhandledTemplate { dataset_id: String, row: usize, text: String },
    #[error("negate requires affirmative input, but {dataset_id} row {row} is {form:?}")]
    NotAffirmative { dataset_id: String, row: usize, form: LogicalForm },
    #[error("generation error: {0}")]
    Generation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid statement: {0}")]
    InvalidStatement(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogicalForm {
    Affirmative,
    Negated,
    Conjunction,
    Disjunction,
    Comparison,
    OpenDomain,
}

/// Statement polarity: +1 for affirmative, -1 for negated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Polarity {
    Affirmative,
    Negated,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Affirmative => 1.0,
            Polarity::Negated => -1.0,
        }
    }
}

impl From<Polarity> for i8 {
    fn from(p: Polarity) -> i8 {
        match p {
            Polarity::Affirmative => 1,
            Polarity::Negated => -1,
        }
    }
}

impl TryFrom<i8> for Polarity {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Polarity::Affirmative),
            -1 => Ok(Polarity::Negated),
            other => Err(format!("polarity must be 1 or -1, got {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub text: String,
    pub label: bool,
    pub polarity: Polarity,
    pub logical_form: LogicalForm,
    pub dataset_id: String,
    pub source_ids: Vec<usize>,
}

impl Statement {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.text.trim().is_empty() {
            return Err(CorpusError::InvalidStatement("empty text".into()));
        }
        if !self.text.ends_with('.') {
            return Err(CorpusError::InvalidStatement(format!(
                "text does not end with a period: {:?}",
                self.text
            )));
        }
        let needs_sources = matches!(
            self.logical_form,
            LogicalForm::Conjunction | LogicalForm::Disjunction
        );
        let expected = if needs_sources { 2 } else { 0 };
        if self.source_ids.len() != expected {
            return Err(CorpusError::InvalidStatement(format!(
                "{:?} statement carries {} source ids, expected {expected}",
                self.logical_form,
                self.source_ids.len()
            )));
        }
        Ok(())
    }

    /// The label as the ±1 target used by TTPD.
    pub fn target(&self) -> f64 {
        if self.label {
            1.0
        } else {
            -1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Generated,
    Loaded,
}

/// An ordered, indexable statement dataset. Row `i` of every activation
/// matrix aligned with this set belongs to `statements[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatementSet {
    pub dataset_id: String,
    pub statements: Vec<Statement>,
    pub provenance: Provenance,
}

impl StatementSet {
    /// Builds a set after checking the dataset id and every statement invariant.
    pub fn new(
        dataset_id: impl Into<String>,
        statements: Vec<Statement>,
        provenance: Provenance,
    ) -> Result<Self, CorpusError> {
        let dataset_id = dataset_id.into();
        if !is_known_dataset_id(&dataset_id) {
            return Err(CorpusError::UnknownDataset(dataset_id));
        }
        for (row, s) in statements.iter().enumerate() {
            s.validate().map_err(|e| match e {
                CorpusError::InvalidStatement(m) => {
                    CorpusError::InvalidStatement(format!("{dataset_id} row {row}: {m}"))
                }
                other => other,
            })?;
        }
        Ok(Self { dataset_id, statements, provenance })
    }

    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.statements.iter().map(|s| s.label).collect()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.statements.iter().map(|s| s.text.as_str())
    }

    /// The dataset's common polarity, if all statements agree.
    pub fn polarity(&self) -> Option<Polarity> {
        let first = self.statements.first()?.polarity;
        self.statements.iter().all(|s| s.polarity == first).then_some(first)
    }

    pub fn logical_form(&self) -> Option<LogicalForm> {
        let first = self.statements.first()?.logical_form;
        self.statements
            .iter()
            .all(|s| s.logical_form == first)
            .then_some(first)
    }

    /// Fraction of statements labelled true.
    pub fn true_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.statements.iter().filter(|s| s.label).count() as f64 / self.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_ids() {
        assert!(is_known_dataset_id("cities"));
        assert!(is_known_dataset_id("neg_facts"));
        assert!(is_known_dataset_id("sp_en_trans_conj"));
        assert!(is_known_dataset_id("counterfact_true_false"));
        assert!(!is_known_dataset_id("neg_larger_than"));
        assert!(!is_known_dataset_id("weather"));
        assert_eq!(base_form("inventors_disj"), Some(LogicalForm::Disjunction));
    }

    #[test]
    fn polarity_serializes_as_integer() {
        assert_eq!(serde_json::to_string(&Polarity::Negated).unwrap(), "-1");
        let p: Polarity = serde_json::from_str("1").unwrap();
        assert_eq!(p, Polarity::Affirmative);
        assert!(serde_json::from_str::<Polarity>("0").is_err());
    }

    #[test]
    fn statement_invariants() {
        let mut s = Statement {
            text: "The city of Tokyo is in Japan.".into(),
            label: true,
            polarity: Polarity::Affirmative,
            logical_form: LogicalForm::Affirmative,
            dataset_id: "cities".into(),
            source_ids: vec![],
        };
        assert!(s.validate().is_ok());
        s.text = "No period".into();
        assert!(s.validate().is_err());
        s.text = "Ok.".into();
        s.logical_form = LogicalForm::Conjunction;
        assert!(s.validate().is_err());
        s.source_ids = vec![0, 1];
        assert!(s.validate().is_ok());
    }
}
