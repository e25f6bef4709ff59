use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::charts::{line_chart, scatter_chart, ScatterPoint, Series};
use super::config::RunConfig;
use super::ReportError;
use crate::corpus::{read_answers, read_jsonl, Condition, StatementSet};
use crate::geometry::{layer_scatter, write_scatter_csv, ScatterRow};
use crate::matrix::Matrix;
use crate::probes::{answer_labels, layer_sweep, LrConfig, ProbeKind, SweepConfig, SweepInput, SweepResult};
use crate::sae::{
    feature_distributions, layer_shift_sweep, load_sae, mean_features, ConditionPair, FeatureRanking, SaeModel,
    ShiftConfig, ShiftInput, ShiftReport, ViolinRecord,
};
use crate::store::{open_activation_store, store_path, ActivationStore};

/// Statement sets named in the config, in config order.
pub fn load_sets(cfg: &RunConfig) -> Result<Vec<StatementSet>, ReportError> {
    cfg.datasets
        .iter()
        .map(|id| Ok(read_jsonl(&cfg.dataset_dir.join(format!("{id}.jsonl")), id)?))
        .collect()
}

fn open(cfg: &RunConfig, set: &StatementSet, condition: Condition, layer: usize) -> Result<ActivationStore, ReportError> {
    let path = store_path(&cfg.store_root, &cfg.model_id, &set.dataset_id, condition, layer);
    if !path.is_file() {
        return Err(ReportError::Runtime(format!("missing store {}", path.display())));
    }
    let store = open_activation_store(&path, set)?;
    if store.model_id() != cfg.model_id || store.layer() != layer || store.condition() != condition {
        return Err(ReportError::Runtime(format!("{} has a manifest for a different slice", path.display())));
    }
    Ok(store)
}

fn stacked(cfg: &RunConfig, sets: &[StatementSet], condition: Condition, layer: usize) -> Result<Matrix, ReportError> {
    let parts = sets.iter().map(|s| Ok(open(cfg, s, condition, layer)?.matrix)).collect::<Result<Vec<_>, ReportError>>()?;
    Matrix::vstack(&parts).ok_or_else(|| ReportError::Runtime(format!("layer {layer}: stores differ in width")))
}

pub fn run_probe_sweep(cfg: &RunConfig, sets: &[StatementSet]) -> Result<SweepResult, ReportError> {
    let p = &cfg.probe;
    let answers = p.answers.as_deref().map(read_answers).transpose()?;
    let mut input = SweepInput::new(cfg.model_id.clone(), p.condition);
    let mut missing = Vec::new();
    for &layer in &cfg.layers {
        for set in sets {
            let path = store_path(&cfg.store_root, &cfg.model_id, &set.dataset_id, p.condition, layer);
            if !path.is_file() {
                missing.push(layer);
                break;
            }
            let store = open(cfg, set, p.condition, layer)?;
            let labels = answers.as_ref().map(|a| answer_labels(a, &set.dataset_id, p.condition, set.len()));
            input.add(&store, set, labels.as_deref())?;
        }
    }
    if !missing.is_empty() {
        return Err(crate::probes::ProbeError::MissingLayers(missing).into());
    }
    let sweep = SweepConfig {
        protocol: p.protocol,
        probes: p.kinds.clone(),
        lr: LrConfig { reg: p.reg, tol: p.tol, max_iter: p.max_iter },
        folds: p.folds,
        seed: cfg.seed,
    };
    Ok(layer_sweep(&input, &cfg.layers, &sweep)?)
}

fn load_saes(cfg: &RunConfig) -> Result<BTreeMap<usize, SaeModel>, ReportError> {
    cfg.layers
        .iter()
        .map(|&l| {
            let path = cfg.sae_path(l).ok_or_else(|| ReportError::Validation("sae.weights is required".into()))?;
            Ok((l, load_sae(&path, &cfg.sae.names, l)?))
        })
        .collect()
}

pub fn run_shift(cfg: &RunConfig, sets: &[StatementSet]) -> Result<ShiftReport, ReportError> {
    let saes = load_saes(cfg)?;
    let mut needed: Vec<Condition> = cfg.sae.pairs.iter().flat_map(|p| [p.conditions().0, p.conditions().1]).collect();
    needed.sort();
    needed.dedup();
    let mut input = ShiftInput::default();
    for &layer in &cfg.layers {
        for &c in &needed {
            input.add(layer, c, &stacked(cfg, sets, c, layer)?)?;
        }
    }
    let shift = ShiftConfig { pairs: cfg.sae.pairs.clone(), eps: cfg.sae.eps, resamples: cfg.sae.resamples, seed: cfg.seed };
    Ok(layer_shift_sweep(&input, &saes, &shift)?)
}

/// Truthful and deceptive centroids per layer.
pub fn shift_centroids(cfg: &RunConfig, sets: &[StatementSet]) -> Result<BTreeMap<usize, BTreeMap<Condition, Vec<f64>>>, ReportError> {
    let saes = load_saes(cfg)?;
    let mut out = BTreeMap::new();
    for &layer in &cfg.layers {
        let mut conds = BTreeMap::new();
        for c in [Condition::Truthful, Condition::Deceptive] {
            conds.insert(c, mean_features(&saes[&layer], &stacked(cfg, sets, c, layer)?)?);
        }
        out.insert(layer, conds);
    }
    Ok(out)
}

pub fn run_top_features(
    cfg: &RunConfig,
    centroids: &BTreeMap<usize, BTreeMap<Condition, Vec<f64>>>,
) -> Result<FeatureRanking, ReportError> {
    Ok(FeatureRanking::from_centroids(centroids, cfg.sae.top_k)?)
}

/// Per-row values of the chosen features under every configured condition.
pub fn run_violin(cfg: &RunConfig, sets: &[StatementSet], ranking: &FeatureRanking) -> Result<Vec<ViolinRecord>, ReportError> {
    let layer = match cfg.violin.layer {
        Some(l) => l,
        None => ranking
            .layers
            .iter()
            .filter_map(|(&l, rows)| rows.first().map(|r| (l, r.abs_delta)))
            .fold(None, |best: Option<(usize, f64)>, (l, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((l, d)),
            })
            .map(|(l, _)| l)
            .ok_or_else(|| ReportError::Runtime("no ranking to pick a violin layer from".into()))?,
    };
    let features: Vec<usize> = if cfg.violin.features.is_empty() {
        ranking.layers.get(&layer).map(|r| r.iter().map(|f| f.feature_id).collect()).unwrap_or_default()
    } else {
        cfg.violin.features.clone()
    };
    let path = cfg.sae_path(layer).ok_or_else(|| ReportError::Validation("sae.weights is required".into()))?;
    let sae = load_sae(&path, &cfg.sae.names, layer)?;
    let mut per_condition = BTreeMap::new();
    for &c in &cfg.conditions {
        per_condition.insert(c, stacked(cfg, sets, c, layer)?);
    }
    Ok(feature_distributions(&sae, &per_condition, &features)?)
}

pub fn run_pca(cfg: &RunConfig, sets: &[StatementSet]) -> Result<Vec<ScatterRow>, ReportError> {
    let labels: Vec<bool> = sets.iter().flat_map(|s| s.labels()).collect();
    let mut rows = Vec::new();
    for layer in cfg.pca_layers() {
        let mut per_condition = BTreeMap::new();
        for &c in &cfg.conditions {
            per_condition.insert(c, (stacked(cfg, sets, c, layer)?, labels.clone()));
        }
        rows.extend(layer_scatter(layer, &per_condition, cfg.pca.mode)?);
    }
    Ok(rows)
}

/// Writes artifacts under one directory and remembers their digests.
#[derive(Debug)]
pub struct Outputs {
    pub dir: PathBuf,
    pub digests: BTreeMap<String, String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self, ReportError> {
        fs::create_dir_all(dir.join("charts"))?;
        Ok(Self { dir: dir.to_path_buf(), digests: BTreeMap::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), ReportError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| ReportError::Runtime(format!("{}: {e}", path.display())))?;
        self.digests.insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
        Ok(())
    }

    fn chart(&mut self, name: &str, svg: Option<String>) -> Result<(), ReportError> {
        match svg {
            Some(svg) => self.write(&format!("charts/{name}.svg"), svg.as_bytes()),
            None => Ok(()),
        }
    }

    pub fn sweep(&mut self, sweep: &SweepResult) -> Result<(), ReportError> {
        let mut buf = Vec::new();
        sweep.write_csv(&mut buf)?;
        self.write("sweep.csv", &buf)?;
        let kinds: Vec<ProbeKind> = {
            let mut k: Vec<ProbeKind> = sweep.rows.iter().map(|r| r.probe).collect();
            k.sort();
            k.dedup();
            k
        };
        let series: Vec<Series> = kinds
            .iter()
            .map(|&k| Series {
                name: format!("{k} ({})", sweep.rows.first().map_or(String::new(), |r| r.condition.to_string())),
                points: sweep
                    .rows
                    .iter()
                    .filter(|r| r.probe == k)
                    .map(|r| (r.layer as f64, r.mean_accuracy, r.std_accuracy))
                    .collect(),
            })
            .collect();
        self.chart("sweep", line_chart("Layer-wise probing accuracy", "layer", "accuracy (%)", &series))
    }

    pub fn shift(&mut self, report: &ShiftReport) -> Result<(), ReportError> {
        let mut buf = Vec::new();
        report.write_csv(&mut buf)?;
        self.write("shift.csv", &buf)?;
        let mut buf = Vec::new();
        report.write_per_sample_csv(&mut buf)?;
        self.write("shift_per_sample.csv", &buf)?;
        let mut pairs: Vec<ConditionPair> = report.rows.iter().map(|r| r.pair).collect();
        pairs.sort();
        pairs.dedup();
        type Pick = fn(&crate::sae::ShiftRow) -> (f64, f64);
        let metrics: [(&str, &str, Pick); 3] = [
            ("shift_l2", "L2 distance", |r| (r.metrics.l2, r.l2_sigma)),
            ("shift_cosine", "cosine similarity", |r| (r.metrics.cosine.unwrap_or(f64::NAN), r.cosine_sigma)),
            ("shift_overlap", "feature overlap", |r| (r.metrics.overlap, r.overlap_sigma)),
        ];
        for (name, label, pick) in metrics {
            let series: Vec<Series> = pairs
                .iter()
                .map(|&p| Series {
                    name: p.to_string(),
                    points: report
                        .rows
                        .iter()
                        .filter(|r| r.pair == p)
                        .map(|r| {
                            let (v, s) = pick(r);
                            (r.layer as f64, v, s)
                        })
                        .collect(),
                })
                .collect();
            self.chart(name, line_chart(&format!("Layer-wise {label}"), "layer", label, &series))?;
        }
        Ok(())
    }

    pub fn top_features(&mut self, ranking: &FeatureRanking) -> Result<(), ReportError> {
        let mut buf = Vec::new();
        ranking.write_csv(&mut buf)?;
        self.write("top_features.csv", &buf)
    }

    pub fn violin(&mut self, records: &[ViolinRecord]) -> Result<(), ReportError> {
        let mut buf = serde_json::to_vec_pretty(records)?;
        buf.push(b'\n');
        self.write("violin.json", &buf)
    }

    pub fn pca(&mut self, rows: &[ScatterRow]) -> Result<(), ReportError> {
        let mut buf = Vec::new();
        write_scatter_csv(rows, &mut buf)?;
        self.write("pca_scatter.csv", &buf)?;
        let mut panels: BTreeMap<(usize, Condition), Vec<ScatterPoint>> = BTreeMap::new();
        for r in rows {
            panels.entry((r.layer, r.condition)).or_default().push(ScatterPoint { x: r.pc1, y: r.pc2, label: r.label });
        }
        for ((layer, c), pts) in panels {
            let title = format!("PCA, layer {layer}, {c}");
            self.chart(&format!("pca_layer_{layer:03}_{c}"), scatter_chart(&title, &pts))?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct Summary {
    sweep_peak_layer: BTreeMap<String, usize>,
    l2_peak_layer: BTreeMap<String, usize>,
    cosine_min_layer: BTreeMap<String, usize>,
    overlap_min_layer: BTreeMap<String, usize>,
}

fn arg_best(rows: impl Iterator<Item = (usize, f64)>, larger: bool) -> Option<usize> {
    rows.filter(|(_, v)| v.is_finite())
        .fold(None, |best: Option<(usize, f64)>, (l, v)| match best {
            Some((_, b)) if (larger && b >= v) || (!larger && b <= v) => best,
            _ => Some((l, v)),
        })
        .map(|(l, _)| l)
}

fn summarize(sweep: &SweepResult, shift: &ShiftReport) -> Summary {
    let mut s = Summary {
        sweep_peak_layer: BTreeMap::new(),
        l2_peak_layer: BTreeMap::new(),
        cosine_min_layer: BTreeMap::new(),
        overlap_min_layer: BTreeMap::new(),
    };
    for kind in [ProbeKind::Lr, ProbeKind::Ttpd] {
        if let Some(r) = sweep.peak(kind) {
            s.sweep_peak_layer.insert(kind.to_string(), r.layer);
        }
    }
    for pair in ConditionPair::ALL {
        let rows = || shift.rows.iter().filter(move |r| r.pair == pair);
        let name = pair.to_string();
        if let Some(l) = arg_best(rows().map(|r| (r.layer, r.metrics.l2)), true) {
            s.l2_peak_layer.insert(name.clone(), l);
        }
        if let Some(l) = arg_best(rows().map(|r| (r.layer, r.metrics.cosine.unwrap_or(f64::NAN))), false) {
            s.cosine_min_layer.insert(name.clone(), l);
        }
        if let Some(l) = arg_best(rows().map(|r| (r.layer, r.metrics.overlap)), false) {
            s.overlap_min_layer.insert(name, l);
        }
    }
    s
}

/// Digest over every input store container and SAE file, in path order.
fn input_digest(cfg: &RunConfig, sets: &[StatementSet]) -> Result<(usize, String), ReportError> {
    let mut paths = Vec::new();
    for &layer in &cfg.layers {
        for set in sets {
            for &c in &cfg.conditions {
                paths.push(store_path(&cfg.store_root, &cfg.model_id, &set.dataset_id, c, layer));
            }
        }
        if let Some(p) = cfg.sae_path(layer) {
            paths.push(p);
        }
    }
    paths.sort();
    let mut h = Sha256::new();
    for p in &paths {
        let bytes = fs::read(p).map_err(|e| ReportError::Runtime(format!("{}: {e}", p.display())))?;
        h.update(Sha256::digest(&bytes));
    }
    Ok((paths.len(), hex::encode(h.finalize())))
}

/// Every stage plus `report.json`. `echo` is the config as written; its
/// output directory is left out so copies of a run compare equal.
pub fn run_all(cfg: &RunConfig, echo: &RunConfig) -> Result<Outputs, ReportError> {
    let sets = load_sets(cfg)?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    let sweep = run_probe_sweep(cfg, &sets)?;
    out.sweep(&sweep)?;
    let shift = run_shift(cfg, &sets)?;
    out.shift(&shift)?;
    let has_centroids = shift
        .centroids
        .values()
        .all(|c| c.contains_key(&Condition::Truthful) && c.contains_key(&Condition::Deceptive));
    let centroids = if has_centroids { shift.centroids.clone() } else { shift_centroids(cfg, &sets)? };
    let ranking = run_top_features(cfg, &centroids)?;
    out.top_features(&ranking)?;
    out.violin(&run_violin(cfg, &sets, &ranking)?)?;
    out.pca(&run_pca(cfg, &sets)?)?;

    let mut echo_value = serde_json::to_value(echo)?;
    if let Some(obj) = echo_value.as_object_mut() {
        obj.remove("output_dir");
    }
    let (n_inputs, inputs_sha256) = input_digest(cfg, &sets)?;
    let report = serde_json::json!({
        "config": echo_value,
        "inputs": { "files": n_inputs, "sha256": inputs_sha256 },
        "outputs": out.digests,
        "summary": summarize(&sweep, &shift),
    });
    let mut buf = serde_json::to_vec_pretty(&report)?;
    buf.push(b'\n');
    out.write("report.json", &buf)?;
    Ok(out)
}
