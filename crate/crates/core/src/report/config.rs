use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use super::ReportError;
use crate::corpus::{is_known_dataset_id, Condition};
use crate::geometry::PcaMode;
use crate::probes::{ProbeKind, Protocol};
use crate::sae::{ConditionPair, SaeTensorNames, DEFAULT_EPS};

/// Everything a run reads. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model_id: String,
    pub layers: Vec<usize>,
    pub conditions: Vec<Condition>,
    pub datasets: Vec<String>,
    pub dataset_dir: PathBuf,
    pub store_root: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
    pub probe: ProbeSection,
    pub sae: SaeSection,
    pub pca: PcaSection,
    pub violin: ViolinSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model_id: String::new(),
            layers: Vec::new(),
            conditions: Condition::ALL.to_vec(),
            datasets: Vec::new(),
            dataset_dir: PathBuf::from("datasets"),
            store_root: PathBuf::from("stores"),
            output_dir: PathBuf::from("out"),
            seed: 0,
            threads: None,
            probe: ProbeSection::default(),
            sae: SaeSection::default(),
            pca: PcaSection::default(),
            violin: ViolinSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub condition: Condition,
    pub protocol: Protocol,
    pub kinds: Vec<ProbeKind>,
    pub reg: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub folds: usize,
    /// Answers JSONL; when set, parsed answers replace ground-truth labels.
    pub answers: Option<PathBuf>,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            condition: Condition::Truthful,
            protocol: Protocol::CvTopics,
            kinds: vec![ProbeKind::Lr, ProbeKind::Ttpd],
            reg: 1e-3,
            tol: 1e-6,
            max_iter: 1000,
            folds: 6,
            answers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaeSection {
    /// Weight file path with a `{layer}` placeholder (zero-padded to three
    /// digits as `{layer:03}`).
    pub weights: Option<String>,
    pub names: SaeTensorNames,
    pub eps: f64,
    pub resamples: usize,
    pub pairs: Vec<ConditionPair>,
    pub top_k: usize,
}

impl Default for SaeSection {
    fn default() -> Self {
        Self {
            weights: None,
            names: SaeTensorNames::default(),
            eps: DEFAULT_EPS,
            resamples: 100,
            pairs: ConditionPair::ALL.to_vec(),
            top_k: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaSection {
    /// Layers to project; empty means every configured layer.
    pub layers: Vec<usize>,
    pub mode: PcaMode,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViolinSection {
    /// Layer to export; defaults to the layer whose top feature moves most.
    pub layer: Option<usize>,
    /// Features to export; defaults to that layer's top-k ranking.
    pub features: Vec<usize>,
}

/// Which inputs a subcommand needs validated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Needs {
    Probes,
    Sae,
    Pca,
    All,
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<(), ReportError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| ReportError::Validation(format!("empty key in `{key}`")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ReportError::Validation(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Parses a `--set` value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

impl RunConfig {
    /// Reads `path` (if any), applies `key=value` overrides and resolves
    /// relative paths. Also returns the unresolved config for echoing.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<(Self, Self), ReportError> {
        let (mut table, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ReportError::Validation(format!("cannot read config {}: {e}", p.display())))?;
                let table: Table = toml::from_str(&text)
                    .map_err(|e| ReportError::Validation(format!("{}: {e}", p.display())))?;
                (table, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (Table::new(), PathBuf::new()),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| ReportError::Validation(format!("override `{o}` is not key=value")))?;
            set_path(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        let raw: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ReportError::Validation(format!("config: {}", e.message())))?;
        let mut cfg = raw.clone();
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.dataset_dir);
        resolve(&mut cfg.store_root);
        resolve(&mut cfg.output_dir);
        if let Some(a) = cfg.probe.answers.as_mut() {
            resolve(a);
        }
        if let Some(w) = cfg.sae.weights.as_mut() {
            if Path::new(w.as_str()).is_relative() {
                *w = base.join(w.as_str()).to_string_lossy().into_owned();
            }
        }
        Ok((cfg, raw))
    }

    pub fn sae_path(&self, layer: usize) -> Option<PathBuf> {
        self.sae.weights.as_ref().map(|w| {
            PathBuf::from(w.replace("{layer:03}", &format!("{layer:03}")).replace("{layer}", &layer.to_string()))
        })
    }

    pub fn pca_layers(&self) -> Vec<usize> {
        if self.pca.layers.is_empty() {
            self.layers.clone()
        } else {
            self.pca.layers.clone()
        }
    }

    pub fn validate(&self, needs: Needs) -> Result<(), ReportError> {
        let fail = |m: String| Err(ReportError::Validation(m));
        if self.model_id.is_empty() {
            return fail("model_id is required".into());
        }
        if self.layers.is_empty() {
            return fail("layers must list at least one layer".into());
        }
        if self.datasets.is_empty() {
            return fail("datasets must list at least one dataset id".into());
        }
        if let Some(bad) = self.datasets.iter().find(|d| !is_known_dataset_id(d)) {
            return fail(format!("unknown dataset id `{bad}`"));
        }
        if self.conditions.is_empty() {
            return fail("conditions must not be empty".into());
        }
        if self.threads == Some(0) {
            return fail("threads must be at least 1".into());
        }
        for (name, dir) in [("dataset_dir", &self.dataset_dir), ("store_root", &self.store_root)] {
            if !dir.is_dir() {
                return fail(format!("{name} {} does not exist", dir.display()));
            }
        }
        if matches!(needs, Needs::Probes | Needs::All) {
            let p = &self.probe;
            if p.kinds.is_empty() {
                return fail("probe.kinds must not be empty".into());
            }
            if !(p.reg >= 0.0 && p.tol > 0.0 && p.max_iter > 0) {
                return fail("probe.reg must be ≥ 0, probe.tol > 0 and probe.max_iter > 0".into());
            }
            if p.protocol == Protocol::CvTopics && (p.folds < 2 || p.folds > self.datasets.len()) {
                return fail(format!("probe.folds = {} must be in 2..={}", p.folds, self.datasets.len()));
            }
            if let Some(a) = &p.answers {
                if !a.is_file() {
                    return fail(format!("probe.answers {} does not exist", a.display()));
                }
            }
        }
        if matches!(needs, Needs::Sae | Needs::All) {
            let s = &self.sae;
            if s.weights.is_none() {
                return fail("sae.weights is required (path pattern with {layer})".into());
            }
            for &layer in &self.layers {
                let p = self.sae_path(layer).expect("weights set");
                if !p.is_file() {
                    return fail(format!("SAE weights for layer {layer} not found at {}", p.display()));
                }
            }
            if s.pairs.is_empty() || s.top_k == 0 || !(s.eps >= 0.0) {
                return fail("sae.pairs must be non-empty, sae.top_k ≥ 1 and sae.eps ≥ 0".into());
            }
            for pair in &s.pairs {
                let (a, b) = pair.conditions();
                if !self.conditions.contains(&a) || !self.conditions.contains(&b) {
                    return fail(format!("sae pair {pair} needs conditions {a} and {b}"));
                }
            }
            if let Some(l) = self.violin.layer {
                if !self.layers.contains(&l) {
                    return fail(format!("violin.layer {l} is not in layers"));
                }
            }
        }
        if matches!(needs, Needs::Pca | Needs::All) {
            if let Some(l) = self.pca.layers.iter().find(|l| !self.layers.contains(l)) {
                return fail(format!("pca layer {l} is not in layers"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_nest_and_parse() {
        let (cfg, raw) = RunConfig::load(
            None,
            &["model_id=m".into(), "layers=[1,2]".into(), "probe.folds=3".into(), "sae.weights=w/{layer:03}.st".into()],
        )
        .unwrap();
        assert_eq!(cfg.layers, vec![1, 2]);
        assert_eq!(cfg.probe.folds, 3);
        assert_eq!(raw.model_id, "m");
        assert_eq!(cfg.sae_path(7).unwrap(), PathBuf::from("w/007.st"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::load(None, &["bogus=1".into()]), Err(ReportError::Validation(_))));
        assert!(RunConfig::load(None, &["probe.protocol=nope".into()]).is_err());
    }

    #[test]
    fn missing_sae_weights_fail_validation() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().display();
        let (cfg, _) = RunConfig::load(
            None,
            &[
                "model_id=m".into(),
                "layers=[1]".into(),
                "datasets=[\"cities\"]".into(),
                format!("dataset_dir={d}"),
                format!("store_root={d}"),
            ],
        )
        .unwrap();
        assert!(cfg.validate(Needs::Pca).is_ok());
        assert!(matches!(cfg.validate(Needs::Sae), Err(ReportError::Validation(m)) if m.contains("sae.weights")));
    }
}
