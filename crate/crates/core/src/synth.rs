//! Synthetic activation dumps with planted structure.
//!
//! Rows follow `x = μ_i + ε + [layer = probe] τ (a t_G + b p t_P)`, where `μ_i`
//! is a per-dataset mean orthogonal to both planted directions. Deceptive rows
//! equal truthful rows plus a fixed offset at the shift layer only; neutral
//! rows add a small independent perturbation everywhere.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::corpus::{
    make_conjunctions, negate, read_base_dataset, write_jsonl, Condition, CorpusError, NegationRuleTable,
    StatementSet, CURATED_TOPICS,
};
use crate::matrix::Matrix;
use crate::sae::{SaeError, SaeModel};
use crate::store::{alignment_digest, store_path, write_activation_store, write_container, StoreError, StoreManifest, Tensor};

/// Hand-written sample rows for the six curated topics.
pub const SAMPLE_CSVS: [(&str, &str); 6] = [
    ("cities", include_str!("../data/samples/cities.csv")),
    ("sp_en_trans", include_str!("../data/samples/sp_en_trans.csv")),
    ("element_symb", include_str!("../data/samples/element_symb.csv")),
    ("animal_class", include_str!("../data/samples/animal_class.csv")),
    ("inventors", include_str!("../data/samples/inventors.csv")),
    ("facts", include_str!("../data/samples/facts.csv")),
];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Sae(#[from] SaeError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub fn sample_dataset(topic: &str) -> Result<StatementSet, CorpusError> {
    let (_, text) = SAMPLE_CSVS
        .iter()
        .find(|(id, _)| *id == topic)
        .ok_or_else(|| CorpusError::UnknownDataset(topic.into()))?;
    read_base_dataset(text.as_bytes(), topic, None)
}

/// The bundled topics, their negations and `conj_rows` conjunctions per topic.
pub fn fixture_datasets(conj_rows: usize, seed: u64) -> Result<Vec<StatementSet>, CorpusError> {
    let mut out = Vec::new();
    for topic in CURATED_TOPICS {
        let base = sample_dataset(topic)?;
        let rules = NegationRuleTable::for_dataset(topic).expect("curated topics have rules");
        out.push(negate(&base, &rules)?);
        out.push(make_conjunctions(&base, conj_rows, seed)?);
        out.push(base);
    }
    out.sort_by(|a, b| a.dataset_id.cmp(&b.dataset_id));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub model_id: String,
    pub d: usize,
    pub d_sae: usize,
    pub layers: Vec<usize>,
    pub probe_layer: usize,
    pub shift_layer: usize,
    /// Magnitude along `t_G` at the probe layer.
    pub truth_signal: f64,
    /// Magnitude along `t_P` at the probe layer.
    pub polarity_signal: f64,
    pub noise: f64,
    pub dataset_spread: f64,
    pub offset_norm: f64,
    pub neutral_noise: f64,
    pub conj_rows: usize,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            model_id: "synthetic-16d".into(),
            d: 16,
            d_sae: 64,
            layers: (1..=32).collect(),
            probe_layer: 14,
            shift_layer: 16,
            truth_signal: 2.0,
            polarity_signal: 1.0,
            noise: 0.5,
            dataset_spread: 1.0,
            offset_norm: 8.0,
            neutral_noise: 0.01,
            conj_rows: 24,
            seed: 0,
        }
    }
}

/// Planted unit directions; `t_g ⟂ t_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Planted {
    pub t_g: Vec<f64>,
    pub t_p: Vec<f64>,
    pub offset: Vec<f64>,
}

fn fnv(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

fn rng_for(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv(parts.join("\u{1f}").as_bytes()));
    rng
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn remove(v: &mut [f64], dir: &[f64]) {
    let p: f64 = v.iter().zip(dir).map(|(a, b)| a * b).sum();
    v.iter_mut().zip(dir).for_each(|(a, b)| *a -= p * b);
}

pub fn planted_directions(spec: &FixtureSpec) -> Planted {
    let mut rng = rng_for(spec.seed, &["planted"]);
    let t_g = unit(gaussian(&mut rng, spec.d));
    let mut t_p = gaussian(&mut rng, spec.d);
    remove(&mut t_p, &t_g);
    let t_p = unit(t_p);
    let offset = unit(gaussian(&mut rng, spec.d)).into_iter().map(|v| v * spec.offset_norm).collect();
    Planted { t_g, t_p, offset }
}

/// Activations of every row of `set` at `layer` under `condition`.
pub fn synth_activations(spec: &FixtureSpec, planted: &Planted, set: &StatementSet, layer: usize, condition: Condition) -> Matrix {
    let layer_tag = layer.to_string();
    let mut mu_rng = rng_for(spec.seed, &["mean", &set.dataset_id, &layer_tag]);
    let mut mu = gaussian(&mut mu_rng, spec.d);
    remove(&mut mu, &planted.t_g);
    remove(&mut mu, &planted.t_p);
    mu.iter_mut().for_each(|v| *v *= spec.dataset_spread);

    let mut row_rng = rng_for(spec.seed, &["rows", &set.dataset_id, &layer_tag]);
    let mut neutral_rng = rng_for(spec.seed, &["neutral", &set.dataset_id, &layer_tag]);
    let mut data = Vec::with_capacity(set.len() * spec.d);
    for s in &set.statements {
        let mut x: Vec<f64> = mu.iter().map(|m| m + spec.noise * row_rng.sample::<f64, _>(StandardNormal)).collect();
        if layer == spec.probe_layer {
            let tau = s.target();
            let p = s.polarity.sign();
            for ((v, g), q) in x.iter_mut().zip(&planted.t_g).zip(&planted.t_p) {
                *v += tau * (spec.truth_signal * g + p * spec.polarity_signal * q);
            }
        }
        let jitter = gaussian(&mut neutral_rng, spec.d);
        match condition {
            Condition::Truthful => {}
            Condition::Deceptive if layer == spec.shift_layer => {
                x.iter_mut().zip(&planted.offset).for_each(|(v, o)| *v += o);
            }
            Condition::Deceptive => {}
            Condition::Neutral => x.iter_mut().zip(&jitter).for_each(|(v, j)| *v += spec.neutral_noise * j),
        }
        data.extend(x.into_iter().map(|v| v as f32));
    }
    Matrix::from_vec(set.len(), spec.d, data)
}

/// A random JumpReLU SAE for `layer`: unit encoder columns, tied decoder.
pub fn synth_sae(spec: &FixtureSpec, layer: usize) -> Result<SaeModel, SaeError> {
    let mut rng = rng_for(spec.seed, &["sae", &layer.to_string()]);
    let cols: Vec<Vec<f64>> = (0..spec.d_sae).map(|_| unit(gaussian(&mut rng, spec.d))).collect();
    let w_enc = Matrix::from_vec(
        spec.d,
        spec.d_sae,
        (0..spec.d).flat_map(|j| cols.iter().map(move |c| c[j] as f32)).collect(),
    );
    let w_dec = Matrix::from_vec(spec.d_sae, spec.d, cols.iter().flatten().map(|&v| v as f32).collect());
    let theta = (0..spec.d_sae).map(|_| rng.gen_range(0.05f32..0.3)).collect();
    SaeModel::new(w_enc, vec![0.0; spec.d_sae], theta, w_dec, vec![0.0; spec.d], layer)
}

/// SAE weight file name for a layer.
pub fn sae_file_name(layer: usize) -> String {
    format!("layer_{layer:03}.safetensors")
}

pub fn write_sae(path: &Path, sae: &SaeModel) -> Result<(), StoreError> {
    let tensors = [
        ("W_enc", Tensor::from(sae.w_enc())),
        ("b_enc", Tensor::vector(sae.b_enc().to_vec())),
        ("threshold", Tensor::vector(sae.theta().to_vec())),
        ("W_dec", Tensor::from(sae.w_dec())),
        ("b_dec", Tensor::vector(sae.b_dec().to_vec())),
    ];
    write_container(path, tensors.iter().map(|(n, t)| (*n, t)))
}

/// Directory layout of a written fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureLayout {
    pub root: PathBuf,
    pub store_root: PathBuf,
    pub sae_dir: PathBuf,
    pub dataset_dir: PathBuf,
    pub dataset_ids: Vec<String>,
}

/// Writes statements (JSONL), activation stores for every condition and
/// layer, and one SAE per layer under `root`.
pub fn write_fixture(root: &Path, spec: &FixtureSpec) -> Result<FixtureLayout, SynthError> {
    let layout = FixtureLayout {
        root: root.to_path_buf(),
        store_root: root.join("stores"),
        sae_dir: root.join("sae"),
        dataset_dir: root.join("datasets"),
        dataset_ids: Vec::new(),
    };
    let io = |path: &Path, source| SynthError::Io { path: path.display().to_string(), source };
    fs::create_dir_all(&layout.dataset_dir).map_err(|e| io(&layout.dataset_dir, e))?;
    let sets = fixture_datasets(spec.conj_rows, spec.seed)?;
    let planted = planted_directions(spec);
    for set in &sets {
        let path = layout.dataset_dir.join(format!("{}.jsonl", set.dataset_id));
        let mut buf = Vec::new();
        write_jsonl(set, &mut buf).map_err(|e| io(&path, e))?;
        fs::write(&path, buf).map_err(|e| io(&path, e))?;
        let digest = alignment_digest(set.texts());
        for &layer in &spec.layers {
            for condition in Condition::ALL {
                let x = synth_activations(spec, &planted, set, layer, condition);
                let manifest = StoreManifest {
                    model_id: spec.model_id.clone(),
                    layer,
                    condition,
                    dataset_id: set.dataset_id.clone(),
                    n_rows: x.rows(),
                    d: x.cols(),
                    tokenizer_hash: "synthetic".into(),
                    token_position_rule: "final_prompt_token".into(),
                    extraction_timestamp: "1970-01-01T00:00:00Z".into(),
                    alignment_digest: digest.clone(),
                    extra: BTreeMap::new(),
                };
                let path = store_path(&layout.store_root, &spec.model_id, &set.dataset_id, condition, layer);
                write_activation_store(&path, &manifest, &x)?;
            }
        }
    }
    for &layer in &spec.layers {
        write_sae(&layout.sae_dir.join(sae_file_name(layer)), &synth_sae(spec, layer)?)?;
    }
    Ok(FixtureLayout { dataset_ids: sets.into_iter().map(|s| s.dataset_id).collect(), ..layout })
}
