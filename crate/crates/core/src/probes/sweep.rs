use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{accuracy, classify_ttpd, fit_ttpd, predict_lr, train_lr, Centering, LrConfig, ProbeError, ProbeKind, TtpdGroup};
use crate::corpus::{cv_split_ids, AnswerRecord, Condition, LogicalForm, Polarity, StatementSet};
use crate::matrix::Matrix;
use crate::store::ActivationStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    /// Topic-held-out cross-validation over whole datasets.
    #[serde(rename = "cv_topics")]
    CvTopics,
    /// Train on affirmative and negated sets, test on every other set.
    #[serde(rename = "train_affneg_test_14")]
    TrainAffNegTest,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::CvTopics => "cv_topics",
            Protocol::TrainAffNegTest => "train_affneg_test_14",
        })
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cv_topics" => Ok(Protocol::CvTopics),
            "train_affneg_test_14" => Ok(Protocol::TrainAffNegTest),
            other => Err(format!("unknown protocol `{other}`")),
        }
    }
}

/// Labelled activations of one dataset at one layer.
#[derive(Debug, Clone)]
pub struct DatasetActs {
    pub dataset_id: String,
    pub logical_form: LogicalForm,
    pub polarity: Polarity,
    pub labels: Vec<bool>,
    pub acts: Matrix,
}

impl DatasetActs {
    /// Pairs a verified store with labels. With `answers`, rows whose answer
    /// is `None` (unparsed) are dropped and the parsed answers become labels.
    pub fn from_store(
        store: &ActivationStore,
        set: &StatementSet,
        answers: Option<&[Option<bool>]>,
    ) -> Result<Self, ProbeError> {
        if store.n_rows() != set.len() {
            return Err(ProbeError::LabelMismatch { labels: set.len(), rows: store.n_rows() });
        }
        let polarity = set.polarity().ok_or_else(|| {
            ProbeError::Config(format!("dataset `{}` mixes polarities", set.dataset_id))
        })?;
        let logical_form = set.logical_form().ok_or_else(|| {
            ProbeError::Config(format!("dataset `{}` mixes logical forms", set.dataset_id))
        })?;
        let (labels, acts) = match answers {
            None => (set.labels(), store.matrix.clone()),
            Some(a) => {
                if a.len() != set.len() {
                    return Err(ProbeError::LabelMismatch { labels: a.len(), rows: set.len() });
                }
                let keep: Vec<usize> = (0..a.len()).filter(|&i| a[i].is_some()).collect();
                let labels = keep.iter().map(|&i| a[i].unwrap_or_default()).collect();
                (labels, store.matrix.select_rows(&keep))
            }
        };
        Ok(Self { dataset_id: set.dataset_id.clone(), logical_form, polarity, labels, acts })
    }
}

/// Per-row parsed answers for one dataset and condition; rows without a record are `None`.
pub fn answer_labels(records: &[AnswerRecord], dataset_id: &str, condition: Condition, n_rows: usize) -> Vec<Option<bool>> {
    let mut out = vec![None; n_rows];
    for r in records {
        if r.dataset_id == dataset_id && r.condition == condition && r.row < n_rows {
            out[r.row] = r.answer.as_bool();
        }
    }
    out
}

/// Activations for every layer of one (model, condition).
#[derive(Debug, Clone)]
pub struct SweepInput {
    pub model_id: String,
    pub condition: Condition,
    pub layers: BTreeMap<usize, Vec<DatasetActs>>,
}

impl SweepInput {
    pub fn new(model_id: impl Into<String>, condition: Condition) -> Self {
        Self { model_id: model_id.into(), condition, layers: BTreeMap::new() }
    }

    /// Adds one store, rejecting mismatched model or condition.
    pub fn add(
        &mut self,
        store: &ActivationStore,
        set: &StatementSet,
        answers: Option<&[Option<bool>]>,
    ) -> Result<(), ProbeError> {
        if store.model_id() != self.model_id {
            return Err(ProbeError::Config(format!(
                "store model `{}` differs from `{}`",
                store.model_id(),
                self.model_id
            )));
        }
        if store.condition() != self.condition {
            return Err(ProbeError::Config(format!(
                "store condition `{}` differs from `{}`",
                store.condition(),
                self.condition
            )));
        }
        let acts = DatasetActs::from_store(store, set, answers)?;
        self.layers.entry(store.layer()).or_default().push(acts);
        Ok(())
    }

    pub fn insert(&mut self, layer: usize, acts: DatasetActs) {
        self.layers.entry(layer).or_default().push(acts);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub protocol: Protocol,
    pub probes: Vec<ProbeKind>,
    pub lr: LrConfig,
    pub folds: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::CvTopics,
            probes: vec![ProbeKind::Lr, ProbeKind::Ttpd],
            lr: LrConfig::default(),
            folds: 6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub layer: usize,
    pub condition: Condition,
    pub probe: ProbeKind,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub folds: usize,
    /// Accuracy of each fold (cv_topics) or held-out dataset (train_affneg_test_14).
    #[serde(skip)]
    pub fold_accuracies: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub const CSV_HEADER: [&'static str; 6] = ["layer", "condition", "probe", "mean_acc", "std_acc", "folds"];

    /// Layer with the highest mean accuracy for `probe` (earliest on ties).
    pub fn peak(&self, probe: ProbeKind) -> Option<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| r.probe == probe)
            .fold(None, |best: Option<&SweepRow>, r| match best {
                Some(b) if b.mean_accuracy >= r.mean_accuracy => Some(b),
                _ => Some(r),
            })
    }

    pub fn write_csv(&self, w: impl Write) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::CSV_HEADER)?;
        for r in &self.rows {
            out.write_record([
                r.layer.to_string(),
                r.condition.to_string(),
                r.probe.to_string(),
                format!("{:.2}", r.mean_accuracy),
                format!("{:.2}", r.std_accuracy),
                r.folds.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// (train indices, test index groups). Each test group is scored as one unit.
fn plan(sets: &[DatasetActs], cfg: &SweepConfig) -> Result<Vec<(Vec<usize>, Vec<usize>)>, ProbeError> {
    match cfg.protocol {
        Protocol::CvTopics => {
            let ids: Vec<&str> = sets.iter().map(|s| s.dataset_id.as_str()).collect();
            let folds = cv_split_ids(&ids, cfg.folds, cfg.seed).map_err(|e| ProbeError::Config(e.to_string()))?;
            Ok(folds.into_iter().map(|f| (f.train, f.test)).collect())
        }
        Protocol::TrainAffNegTest => {
            let is_train = |s: &DatasetActs| matches!(s.logical_form, LogicalForm::Affirmative | LogicalForm::Negated);
            let train: Vec<usize> = (0..sets.len()).filter(|&i| is_train(&sets[i])).collect();
            let tests: Vec<usize> = (0..sets.len()).filter(|&i| !is_train(&sets[i])).collect();
            if train.is_empty() || tests.is_empty() {
                return Err(ProbeError::Config(
                    "train_affneg_test_14 needs affirmative/negated training sets and at least one other set".into(),
                ));
            }
            Ok(tests.into_iter().map(|t| (train.clone(), vec![t])).collect())
        }
    }
}

fn stack(sets: &[DatasetActs], idx: &[usize]) -> (Matrix, Vec<bool>) {
    let x = Matrix::vstack(idx.iter().map(|&i| &sets[i].acts)).expect("layer datasets share a dimension");
    let y = idx.iter().flat_map(|&i| sets[i].labels.iter().copied()).collect();
    (x, y)
}

fn score(
    kind: ProbeKind,
    sets: &[DatasetActs],
    train: &[usize],
    test: &[usize],
    lr: &LrConfig,
) -> Result<f64, ProbeError> {
    let (tx, ty) = stack(sets, test);
    let pred = match kind {
        ProbeKind::Lr => {
            let (x, y) = stack(sets, train);
            let fit = train_lr(&x, &y, lr)?;
            predict_lr(&fit.probe, &tx)?.1
        }
        ProbeKind::Ttpd => {
            let groups: Vec<TtpdGroup<'_>> = train
                .iter()
                .map(|&i| TtpdGroup {
                    dataset_id: &sets[i].dataset_id,
                    x: &sets[i].acts,
                    labels: &sets[i].labels,
                    polarity: sets[i].polarity,
                })
                .collect();
            let fit = fit_ttpd(&groups)?;
            classify_ttpd(&fit.probe, &tx, &Centering::GlobalTrainMean)?
        }
    };
    Ok(accuracy(&pred, &ty))
}

fn sweep_layer(layer: usize, sets: &[DatasetActs], condition: Condition, cfg: &SweepConfig) -> Result<Vec<SweepRow>, ProbeError> {
    let d = sets.first().map_or(0, |s| s.acts.cols());
    for s in sets {
        if s.acts.cols() != d {
            return Err(ProbeError::DimensionMismatch { expected: d, got: s.acts.cols() });
        }
        if s.labels.len() != s.acts.rows() {
            return Err(ProbeError::LabelMismatch { labels: s.labels.len(), rows: s.acts.rows() });
        }
    }
    let plan = plan(sets, cfg)?;
    cfg.probes
        .iter()
        .map(|&kind| {
            let accs = plan
                .iter()
                .map(|(train, test)| score(kind, sets, train, test, &cfg.lr))
                .collect::<Result<Vec<f64>, _>>()?;
            let (mean, std) = mean_std(&accs);
            Ok(SweepRow {
                layer,
                condition,
                probe: kind,
                mean_accuracy: mean,
                std_accuracy: std,
                folds: accs.len(),
                fold_accuracies: accs,
            })
        })
        .collect()
}

fn sorted_ids(sets: &[DatasetActs]) -> Vec<&str> {
    let mut v: Vec<&str> = sets.iter().map(|s| s.dataset_id.as_str()).collect();
    v.sort_unstable();
    v
}

/// Trains and scores probes independently at every layer (in parallel).
/// Rows come out ordered by layer, then probe kind as listed in `cfg`.
pub fn layer_sweep(input: &SweepInput, expected_layers: &[usize], cfg: &SweepConfig) -> Result<SweepResult, ProbeError> {
    let missing: Vec<usize> = expected_layers.iter().copied().filter(|l| !input.layers.contains_key(l)).collect();
    if !missing.is_empty() {
        return Err(ProbeError::MissingLayers(missing));
    }
    if cfg.probes.is_empty() {
        return Err(ProbeError::Config("no probe kinds selected".into()));
    }
    let layers: Vec<(&usize, &Vec<DatasetActs>)> = input.layers.iter().collect();
    if let Some((_, first)) = layers.first() {
        let reference = sorted_ids(first);
        if let Some((l, _)) = layers.iter().find(|(_, s)| sorted_ids(s) != reference) {
            return Err(ProbeError::Config(format!("layer {l} holds a different dataset list")));
        }
    }
    let per_layer = layers
        .par_iter()
        .map(|(&layer, sets)| sweep_layer(layer, sets, input.condition, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepResult { rows: per_layer.into_iter().flatten().collect() })
}
