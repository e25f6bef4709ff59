use std::collections::BTreeMap;
use std::path::Path;

use super::{LrProbe, ProbeError, Standardizer, TtpdProbe};
use crate::store::{read_container, write_container, StoreError, Tensor};

const MEAN_PREFIX: &str = "mu.";

fn vector(v: &[f64]) -> Tensor {
    Tensor::vector(v.iter().map(|&x| x as f32).collect())
}

fn take(map: &BTreeMap<String, Tensor>, name: &str) -> Result<Vec<f64>, ProbeError> {
    map.get(name)
        .map(|t| t.data.iter().map(|&v| f64::from(v)).collect())
        .ok_or_else(|| StoreError::MissingTensor(name.into()).into())
}

fn scalar(map: &BTreeMap<String, Tensor>, name: &str) -> Result<f64, ProbeError> {
    take(map, name)?
        .first()
        .copied()
        .ok_or_else(|| ProbeError::Config(format!("tensor `{name}` is empty")))
}

/// Stores `w`, `b` and the standardizer as f32 tensors.
pub fn save_lr(path: &Path, probe: &LrProbe) -> Result<(), ProbeError> {
    let tensors = [
        ("w", vector(&probe.w)),
        ("b", Tensor::vector(vec![probe.b as f32])),
        ("std_mean", vector(&probe.standardizer.mean)),
        ("std_scale", vector(&probe.standardizer.scale)),
    ];
    write_container(path, tensors.iter().map(|(n, t)| (*n, t)))?;
    Ok(())
}

pub fn load_lr(path: &Path) -> Result<LrProbe, ProbeError> {
    let map = read_container(path)?;
    let w = take(&map, "w")?;
    let standardizer = Standardizer { mean: take(&map, "std_mean")?, scale: take(&map, "std_scale")? };
    if standardizer.mean.len() != w.len() || standardizer.scale.len() != w.len() {
        return Err(ProbeError::DimensionMismatch { expected: w.len(), got: standardizer.mean.len() });
    }
    Ok(LrProbe { standardizer, w, b: scalar(&map, "b")?, tag: None })
}

/// Stores `t_G`, `t_P`, the threshold, magnitudes and every dataset mean.
pub fn save_ttpd(path: &Path, probe: &TtpdProbe) -> Result<(), ProbeError> {
    let mut tensors = vec![
        ("t_G".to_string(), vector(&probe.t_g)),
        ("t_P".to_string(), vector(&probe.t_p)),
        ("threshold".to_string(), Tensor::vector(vec![probe.threshold as f32])),
        ("scales".to_string(), Tensor::vector(vec![probe.g_scale as f32, probe.p_scale as f32])),
        ("global_mean".to_string(), vector(&probe.global_mean)),
    ];
    for (id, mu) in &probe.dataset_means {
        tensors.push((format!("{MEAN_PREFIX}{id}"), vector(mu)));
    }
    write_container(path, tensors.iter().map(|(n, t)| (n.as_str(), t)))?;
    Ok(())
}

pub fn load_ttpd(path: &Path) -> Result<TtpdProbe, ProbeError> {
    let map = read_container(path)?;
    let scales = take(&map, "scales")?;
    if scales.len() != 2 {
        return Err(ProbeError::Config("`scales` must hold two values".into()));
    }
    let dataset_means = map
        .iter()
        .filter_map(|(name, t)| {
            let id = name.strip_prefix(MEAN_PREFIX)?;
            Some((id.to_string(), t.data.iter().map(|&v| f64::from(v)).collect()))
        })
        .collect();
    Ok(TtpdProbe {
        t_g: take(&map, "t_G")?,
        t_p: take(&map, "t_P")?,
        g_scale: scales[0],
        p_scale: scales[1],
        threshold: scalar(&map, "threshold")?,
        dataset_means,
        global_mean: take(&map, "global_mean")?,
        tag: None,
    })
}
