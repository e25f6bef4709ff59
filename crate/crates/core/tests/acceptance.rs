//! Acceptance suite. Every criterion prints one PASS/FAIL line; the process
//! exits nonzero if any fails.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use deceptrace::corpus::{
    make_conjunctions, make_disjunctions, negate, DisjunctionStyle, NegationRuleTable, StatementSet, CURATED_TOPICS,
};
use deceptrace::geometry::pca_fit;
use deceptrace::probes::{fit_ttpd, predict_lr, train_lr, LrConfig, ProbeKind, TtpdGroup};
use deceptrace::report::{cli, load_sets, run_probe_sweep, run_shift, run_top_features, shift_centroids, RunConfig};
use deceptrace::sae::{decode, encode, shift_metrics, top_k_features, ConditionPair, SaeModel};
use deceptrace::store::{parse_container, read_container, write_container, StoreError, Tensor};
use deceptrace::synth::sample_dataset;
use deceptrace::{Matrix, Polarity};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

fn to_matrix(rows: &[Vec<f64>]) -> Matrix {
    let cols = rows.first().map_or(0, Vec::len);
    Matrix::from_vec(rows.len(), cols, rows.iter().flatten().map(|&v| v as f32).collect())
}

// ---------------------------------------------------------------- corpus

/// Subject and end word of a templated sentence.
fn parse_subject_end(topic: &str, text: &str) -> Option<(String, String)> {
    let strip = |s: &str, p: &str| s.strip_prefix(p).map(str::to_string);
    let body = text.strip_suffix('.')?;
    let (s, e) = match topic {
        "cities" => {
            let rest = strip(body, "The city of ")?;
            let (s, e) = rest.split_once(" is in ")?;
            (s.to_string(), e.to_string())
        }
        "sp_en_trans" => {
            let rest = strip(body, "The Spanish word '")?;
            let (s, e) = rest.split_once("' means '")?;
            (s.to_string(), e.strip_suffix('\'')?.to_string())
        }
        "element_symb" => {
            let (s, e) = body.split_once(" has the symbol ")?;
            (s.to_string(), e.to_string())
        }
        "animal_class" => {
            let rest = strip(body, "The ")?;
            let (s, e) = rest.split_once(" is a ").or_else(|| rest.split_once(" is an "))?;
            (s.to_string(), e.to_string())
        }
        "inventors" => {
            let (s, e) = body.split_once(" lived in ")?;
            (s.to_string(), e.to_string())
        }
        _ => return None,
    };
    Some((s, e))
}

fn embedded_parts<'a>(text: &'a str, lead: &str, joint: &str) -> Option<(&'a str, &'a str)> {
    text.strip_prefix(lead)?.strip_suffix('.')?.split_once(joint)
}

fn same_clause(embedded: &str, source: &str) -> bool {
    let source = source.strip_suffix('.').unwrap_or(source);
    embedded.eq_ignore_ascii_case(source)
}

fn check_balance(set: &StatementSet) -> Result<(), String> {
    let frac = set.true_fraction();
    ensure(set.len() == 500, || format!("{}: {} rows", set.dataset_id, set.len()))?;
    ensure((0.44..=0.56).contains(&frac), || format!("{}: true fraction {frac:.3}", set.dataset_id))
}

fn corpus_correctness() -> Check {
    let start = Instant::now();
    let mut checked = 0;
    for topic in CURATED_TOPICS {
        let base = sample_dataset(topic).map_err(|e| e.to_string())?;
        let src = &base.statements;

        let conj = make_conjunctions(&base, 500, 0).map_err(|e| e.to_string())?;
        check_balance(&conj)?;
        for (row, s) in conj.statements.iter().enumerate() {
            let [i, j] = s.source_ids[..] else { return Err(format!("{}[{row}] sources", conj.dataset_id)) };
            let (a, b) = embedded_parts(&s.text, "It is the case both that ", " and that ")
                .ok_or_else(|| format!("{}[{row}] shape: {}", conj.dataset_id, s.text))?;
            ensure(same_clause(a, &src[i].text) && same_clause(b, &src[j].text), || {
                format!("{}[{row}] components differ from sources", conj.dataset_id)
            })?;
            ensure(s.label == (src[i].label && src[j].label), || format!("{}[{row}] AND label", conj.dataset_id))?;
            checked += 1;
        }

        let disj = if topic == "facts" {
            make_disjunctions(&base, 500, 0, DisjunctionStyle::Independent)
        } else {
            make_disjunctions(&base, 500, 0, DisjunctionStyle::EndWord)
        }
        .map_err(|e| e.to_string())?;
        check_balance(&disj)?;

        if topic == "facts" {
            for (row, s) in disj.statements.iter().enumerate() {
                let [i, j] = s.source_ids[..] else { return Err(format!("{}[{row}] sources", disj.dataset_id)) };
                let (a, b) = embedded_parts(&s.text, "It is the case either that ", " or that ")
                    .ok_or_else(|| format!("{}[{row}] shape: {}", disj.dataset_id, s.text))?;
                ensure(same_clause(a, &src[i].text) && same_clause(b, &src[j].text), || {
                    format!("{}[{row}] components differ from sources", disj.dataset_id)
                })?;
                ensure(s.label == (src[i].label || src[j].label), || format!("{}[{row}] OR label", disj.dataset_id))?;
                checked += 1;
            }
            continue;
        }

        let mut correct: HashMap<String, HashSet<String>> = HashMap::new();
        for s in src {
            let (subj, end) = parse_subject_end(topic, &s.text).ok_or_else(|| format!("unparsed {}", s.text))?;
            let entry = correct.entry(subj).or_default();
            if s.label {
                entry.insert(end);
            }
        }
        for (row, s) in disj.statements.iter().enumerate() {
            let [i, j] = s.source_ids[..] else { return Err(format!("{}[{row}] sources", disj.dataset_id)) };
            let (subj, e1) = parse_subject_end(topic, &src[i].text).unwrap();
            let (_, e2) = parse_subject_end(topic, &src[j].text).unwrap();
            ensure(s.text.starts_with("It is the case either that ") && s.text.contains(" or "), || {
                format!("{}[{row}] shape: {}", disj.dataset_id, s.text)
            })?;
            ensure(s.text.contains(&e1) && s.text.contains(&e2), || {
                format!("{}[{row}] lacks end words {e1}/{e2}: {}", disj.dataset_id, s.text)
            })?;
            ensure(s.text.contains(&subj), || format!("{}[{row}] lacks subject {subj}", disj.dataset_id))?;
            let truth = correct[&subj].contains(&e1) || correct[&subj].contains(&e2);
            ensure(s.label == truth, || format!("{}[{row}] OR label: {}", disj.dataset_id, s.text))?;
            checked += 1;
        }
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!("{checked} composite labels re-evaluated"))
}

fn negation_integrity() -> Check {
    let start = Instant::now();
    let mut rows = 0;
    for topic in CURATED_TOPICS {
        let base = sample_dataset(topic).map_err(|e| e.to_string())?;
        let rules = NegationRuleTable::for_dataset(topic).ok_or_else(|| format!("no rules for {topic}"))?;
        let neg = negate(&base, &rules).map_err(|e| e.to_string())?;
        ensure(neg.len() == base.len(), || format!("{topic}: {} -> {} rows", base.len(), neg.len()))?;
        for (a, n) in base.statements.iter().zip(&neg.statements) {
            ensure(n.label == !a.label, || format!("{topic}: label not flipped for {}", a.text))?;
            ensure(n.polarity == Polarity::Negated, || format!("{topic}: polarity of {}", n.text))?;
            let (ra, slots_a) = rules.match_affirmative(&a.text).ok_or_else(|| format!("unmatched {}", a.text))?;
            let (rn, slots_n) = rules.match_negated(&n.text).ok_or_else(|| format!("negation unmatched {}", n.text))?;
            ensure(ra == rn && slots_a == slots_n, || format!("{topic}: slots differ {} / {}", a.text, n.text))?;
            rows += 1;
        }
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!("{rows} rows over 6 topics (bundled samples)"))
}

// ----------------------------------------------------------------- store

fn random_f32(rng: &mut ChaCha8Rng) -> f32 {
    match rng.gen_range(0..50) {
        0 => -0.0,
        1 => f32::from_bits(rng.gen_range(1..0x0080_0000)),
        2 => f32::MAX,
        _ => rng.sample::<f32, _>(StandardNormal) * 100.0,
    }
}

fn raw_container(header: &str, payload_len: usize) -> Vec<u8> {
    let mut out = (header.len() as u64).to_le_bytes().to_vec();
    out.extend_from_slice(header.as_bytes());
    out.extend(std::iter::repeat(0u8).take(payload_len));
    out
}

fn store_round_trip() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("t.safetensors");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut floats = 0usize;
    for i in 0..1000 {
        let (r, c) = (rng.gen_range(1..=64), rng.gen_range(1..=4096));
        let t = Tensor::new(vec![r, c], (0..r * c).map(|_| random_f32(&mut rng)).collect());
        write_container(&path, [("acts", &t)]).map_err(|e| e.to_string())?;
        let back = read_container(&path).map_err(|e| e.to_string())?;
        let got = back.get("acts").ok_or("missing tensor")?;
        ensure(got.shape == t.shape, || format!("tensor {i}: shape {:?}", got.shape))?;
        ensure(got.data.iter().map(|v| v.to_bits()).eq(t.data.iter().map(|v| v.to_bits())), || {
            format!("tensor {i}: bits differ")
        })?;
        floats += r * c;
    }

    let good = write_and_read_bytes(dir.path())?;
    let cases: Vec<(&str, Vec<u8>, fn(&StoreError) -> bool)> = vec![
        ("short file", vec![1, 2, 3], |e| matches!(e, StoreError::MissingHeaderLength(3))),
        ("header overflow", {
            let mut b = good.clone();
            b[..8].copy_from_slice(&(1u64 << 40).to_le_bytes());
            b
        }, |e| matches!(e, StoreError::HeaderOutOfBounds { .. })),
        ("bad json", raw_container("{\"a\":", 0), |e| matches!(e, StoreError::MalformedHeader(_))),
        ("truncated", good[..good.len() - 4].to_vec(), |e| matches!(e, StoreError::TruncatedPayload { .. })),
        ("trailing", [good.clone(), vec![0; 4]].concat(), |e| matches!(e, StoreError::TrailingBytes { extra: 4 })),
        (
            "overlap",
            raw_container(
                r#"{"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},"b":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}}"#,
                12,
            ),
            |e| matches!(e, StoreError::OverlappingOffsets { .. }),
        ),
        (
            "gap",
            raw_container(r#"{"a":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}}"#, 8),
            |e| matches!(e, StoreError::OffsetGap { .. }),
        ),
        (
            "shape",
            raw_container(r#"{"a":{"dtype":"F32","shape":[3],"data_offsets":[0,8]}}"#, 8),
            |e| matches!(e, StoreError::ShapeMismatch { .. }),
        ),
        (
            "dtype",
            raw_container(r#"{"a":{"dtype":"I64","shape":[1],"data_offsets":[0,8]}}"#, 8),
            |e| matches!(e, StoreError::UnsupportedDtype { .. }),
        ),
    ];
    for (name, bytes, expected) in &cases {
        match parse_container(bytes) {
            Err(e) if expected(&e) => {}
            other => return Err(format!("{name}: unexpected {other:?}")),
        }
    }
    within(start.elapsed(), 30.0)?;
    Ok(format!("1000 tensors ({floats} floats) bit-exact, {} corruptions rejected", cases.len()))
}

fn write_and_read_bytes(dir: &Path) -> Result<Vec<u8>, String> {
    let path = dir.join("small.safetensors");
    let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    write_container(&path, [("x", &t)]).map_err(|e| e.to_string())?;
    std::fs::read(&path).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- probes

/// Class-mixture data labelled by the planted rule `w*·x + b* > 0`, then 5% flipped.
fn planted_lr(rng: &mut ChaCha8Rng, n: usize, w: &[f64], b: f64) -> (Vec<Vec<f64>>, Vec<bool>) {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for _ in 0..n {
        let s = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let shift = s * 3.0 - b;
        let x: Vec<f64> = gaussian(rng, w.len()).iter().zip(w).map(|(z, wi)| z + shift * wi).collect();
        let clean = dot(w, &x) + b > 0.0;
        ys.push(clean ^ rng.gen_bool(0.05));
        xs.push(x);
    }
    (xs, ys)
}

/// Damped Newton on the same standardized objective.
fn newton_lr(z: &DMatrix<f64>, y: &[bool], reg: f64) -> DVector<f64> {
    let (n, d) = (z.nrows(), z.ncols());
    let design = z.clone().insert_column(d, 1.0);
    let yv = DVector::from_iterator(n, y.iter().map(|&v| f64::from(u8::from(v))));
    let mut theta = DVector::zeros(d + 1);
    let mut penalty = DMatrix::identity(d + 1, d + 1) * reg;
    penalty[(d, d)] = 0.0;
    for _ in 0..100 {
        let s = &design * &theta;
        let p = s.map(|v| 1.0 / (1.0 + (-v).exp()));
        let mut grad = design.transpose() * (&p - &yv) / n as f64;
        grad += &penalty * &theta;
        let wts = p.map(|v| v * (1.0 - v));
        let mut weighted = design.clone();
        for (mut row, w) in weighted.row_iter_mut().zip(wts.iter()) {
            row *= *w;
        }
        let hess = design.transpose() * weighted / n as f64 + &penalty;
        let step = hess.cholesky().expect("positive definite").solve(&grad);
        theta -= &step;
        if step.amax() < 1e-12 {
            break;
        }
    }
    theta
}

struct LrTrial {
    acc: f64,
    cos: f64,
    agree: f64,
    floor: f64,
}

fn lr_trial(seed: u64, reg: f64) -> Result<LrTrial, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 64;
    let w_star = unit(gaussian(&mut rng, d));
    let b_star = 0.7;
    let (xtr, ytr) = planted_lr(&mut rng, 500, &w_star, b_star);
    let (xte, yte) = planted_lr(&mut rng, 10_000, &w_star, b_star);

    let fit = train_lr(&to_matrix(&xtr), &ytr, &LrConfig { reg, ..LrConfig::default() }).map_err(|e| e.to_string())?;
    ensure(fit.converged, || format!("seed {seed}: not converged after {} iterations", fit.iterations))?;
    let (_, pred) = predict_lr(&fit.probe, &to_matrix(&xte)).map_err(|e| e.to_string())?;
    let acc = pred.iter().zip(&yte).filter(|(p, y)| p == y).count() as f64 / yte.len() as f64;
    let bayes = xte.iter().zip(&yte).filter(|(x, &y)| (dot(&w_star, x) + b_star > 0.0) == y).count() as f64
        / yte.len() as f64;
    let floor = bayes - 3.0 * (bayes * (1.0 - bayes) / yte.len() as f64).sqrt();

    let std = &fit.probe.standardizer;
    let z = DMatrix::from_fn(xtr.len(), d, |i, j| (f64::from(xtr[i][j] as f32) - std.mean[j]) / std.scale[j]);
    let oracle = newton_lr(&z, &ytr, reg);
    let ours: Vec<f64> = fit.probe.w.iter().copied().chain([fit.probe.b]).collect();
    Ok(LrTrial { acc, cos: cosine(&fit.probe.raw_weights().0, &w_star), agree: cosine(&ours, oracle.as_slice()), floor })
}

fn lr_planted() -> Check {
    let start = Instant::now();
    let reg = 1.0;
    let mut trials = Vec::new();
    for seed in 0..5 {
        let t = lr_trial(seed, reg)?;
        ensure(t.acc >= 0.92, || format!("seed {seed}: held-out accuracy {:.2}% < 92%", t.acc * 100.0))?;
        ensure(t.cos >= 0.9, || format!("seed {seed}: cos(w, w*) = {:.4}", t.cos))?;
        ensure(t.agree >= 0.9999, || format!("seed {seed}: Newton baseline disagrees, cos {:.6}", t.agree))?;
        trials.push(t);
    }
    let weak = lr_trial(0, LrConfig::default().reg)?;
    within(start.elapsed(), 10.0)?;
    let min = |f: fn(&LrTrial) -> f64| trials.iter().map(f).fold(f64::INFINITY, f64::min);
    Ok(format!(
        "reg {reg}, 5 seeds: min acc {:.2}% (planted rule minus 3σ at most {:.2}%), min cos {:.4}, Newton agreement ≥ {:.6}; \
         at reg 1e-3: acc {:.2}%, cos {:.4}",
        min(|t| t.acc) * 100.0,
        trials.iter().map(|t| t.floor).fold(f64::NEG_INFINITY, f64::max) * 100.0,
        min(|t| t.cos),
        min(|t| t.agree),
        weak.acc * 100.0,
        weak.cos
    ))
}

struct TtpdData {
    ids: Vec<String>,
    xs: Vec<Matrix>,
    labels: Vec<Vec<bool>>,
    pols: Vec<Polarity>,
}

fn ttpd_data(rng: &mut ChaCha8Rng, t_g: &[f64], t_p: &[f64], sigma: f64) -> TtpdData {
    let d = t_g.len();
    let pols = vec![Polarity::Affirmative, Polarity::Negated, Polarity::Affirmative, Polarity::Negated];
    let mut data = TtpdData { ids: vec![], xs: vec![], labels: vec![], pols: pols.clone() };
    for (i, pol) in pols.iter().enumerate() {
        let mu = gaussian(rng, d);
        let p = pol.sign();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for r in 0..100 {
            let label = r % 2 == 0;
            let tau = if label { 1.0 } else { -1.0 };
            let noise = gaussian(rng, d);
            rows.push((0..d).map(|j| mu[j] + tau * t_g[j] + tau * p * t_p[j] + sigma * noise[j]).collect());
            labels.push(label);
        }
        data.ids.push(format!("set{i}"));
        data.xs.push(to_matrix(&rows));
        data.labels.push(labels);
    }
    data
}

/// Ordinary least squares of centred rows on `[τ, τ·p]`, solved by SVD.
fn ttpd_oracle(data: &TtpdData) -> (Vec<f64>, Vec<f64>) {
    let d = data.xs[0].cols();
    let n: usize = data.xs.iter().map(Matrix::rows).sum();
    let mut design = DMatrix::zeros(n, 2);
    let mut target = DMatrix::zeros(n, d);
    let mut r = 0;
    for ((x, labels), pol) in data.xs.iter().zip(&data.labels).zip(&data.pols) {
        let mean: Vec<f64> = (0..d).map(|j| x.iter_rows().map(|row| f64::from(row[j])).sum::<f64>() / x.rows() as f64).collect();
        for (row, &label) in x.iter_rows().zip(labels) {
            let tau = if label { 1.0 } else { -1.0 };
            design[(r, 0)] = tau;
            design[(r, 1)] = tau * pol.sign();
            for j in 0..d {
                target[(r, j)] = f64::from(row[j]) - mean[j];
            }
            r += 1;
        }
    }
    let coef = design.svd(true, true).solve(&target, 1e-12).expect("solvable");
    (coef.row(0).iter().copied().collect(), coef.row(1).iter().copied().collect())
}

fn ttpd_fit(data: &TtpdData) -> Result<deceptrace::probes::TtpdFit, String> {
    let groups: Vec<TtpdGroup> = (0..data.ids.len())
        .map(|i| TtpdGroup { dataset_id: &data.ids[i], x: &data.xs[i], labels: &data.labels[i], polarity: data.pols[i] })
        .collect();
    fit_ttpd(&groups).map_err(|e| e.to_string())
}

fn ttpd_planted() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = 64;
    let t_g = unit(gaussian(&mut rng, d));
    let mut t_p = gaussian(&mut rng, d);
    let proj = dot(&t_p, &t_g);
    t_p.iter_mut().zip(&t_g).for_each(|(p, g)| *p -= proj * g);
    let t_p: Vec<f64> = unit(t_p).into_iter().map(|v| 0.6 * v).collect();

    let noisy = ttpd_data(&mut rng, &t_g, &t_p, 0.05);
    let fit = ttpd_fit(&noisy)?;
    let cg = cosine(&fit.probe.t_g, &t_g).abs();
    let cp = cosine(&fit.probe.t_p, &t_p).abs();
    let (og, op) = ttpd_oracle(&noisy);
    let oracle_gap = fit
        .probe
        .t_g
        .iter()
        .zip(&og)
        .map(|(v, o)| (v * fit.probe.g_scale - o).abs())
        .chain(fit.probe.t_p.iter().zip(&op).map(|(v, o)| (v * fit.probe.p_scale - o).abs()))
        .fold(0.0, f64::max);

    let clean = ttpd_data(&mut rng, &t_g, &t_p, 0.0);
    let cfit = ttpd_fit(&clean)?;
    let mut residual = 0.0f64;
    for i in 0..clean.ids.len() {
        for (row, &label) in clean.xs[i].iter_rows().zip(&clean.labels[i]) {
            let rec = cfit.probe.reconstruct(&clean.ids[i], label, clean.pols[i]).ok_or("unknown id")?;
            residual = rec.iter().zip(row).fold(residual, |m, (r, &x)| m.max((r - f64::from(x)).abs()));
        }
    }

    ensure(cg >= 0.95, || format!("|cos(t_G)| = {cg:.4}"))?;
    ensure(cp >= 0.95, || format!("|cos(t_P)| = {cp:.4}"))?;
    ensure(oracle_gap <= 1e-6, || format!("normal-equation oracle gap {oracle_gap:.2e}"))?;
    ensure(residual <= 1e-6, || format!("noise-free residual {residual:.2e}"))?;
    within(start.elapsed(), 10.0)?;
    Ok(format!("|cos t_G| {cg:.4}, |cos t_P| {cp:.4}, oracle gap {oracle_gap:.1e}, residual {residual:.1e}"))
}

// --------------------------------------------------------------- fixture

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    cfg: RunConfig,
}

fn fixture() -> Result<&'static Fixture, String> {
    use std::sync::OnceLock;
    static FIXTURE: OnceLock<Result<Fixture, String>> = OnceLock::new();
    FIXTURE
        .get_or_init(|| {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let root = dir.path().join("fixture");
            let code = cli::run(["deceptrace", "make-fixture", "--out", root.to_str().unwrap()]);
            ensure(code == 0, || format!("make-fixture exited {code}"))?;
            let (cfg, _) = RunConfig::load(Some(&root.join("fixture.toml")), &[]).map_err(|e| e.to_string())?;
            Ok(Fixture { _dir: dir, root, cfg })
        })
        .as_ref()
        .map_err(Clone::clone)
}

fn sweep_peak() -> Check {
    let start = Instant::now();
    let fx = fixture()?;
    let sets = load_sets(&fx.cfg).map_err(|e| e.to_string())?;
    let sweep = run_probe_sweep(&fx.cfg, &sets).map_err(|e| e.to_string())?;
    let mut detail = Vec::new();
    for kind in [ProbeKind::Lr, ProbeKind::Ttpd] {
        let peak = sweep.peak(kind).ok_or("empty sweep")?;
        let runner_up = sweep
            .rows
            .iter()
            .filter(|r| r.probe == kind && r.layer != peak.layer)
            .map(|r| r.mean_accuracy)
            .fold(f64::NEG_INFINITY, f64::max);
        ensure(peak.layer == 14, || format!("{kind} peaks at layer {}", peak.layer))?;
        detail.push(format!("{kind} {:.1}% at 14 (next best {runner_up:.1}%)", peak.mean_accuracy));
    }
    within(start.elapsed(), 60.0)?;
    Ok(detail.join(", "))
}

fn shift_peak() -> Check {
    let start = Instant::now();
    let fx = fixture()?;
    let sets = load_sets(&fx.cfg).map_err(|e| e.to_string())?;
    let report = run_shift(&fx.cfg, &sets).map_err(|e| e.to_string())?;
    let rows: Vec<_> = report.rows.iter().filter(|r| r.pair == ConditionPair::DecVsTruth).collect();
    let arg = |key: &dyn Fn(&&&deceptrace::sae::ShiftRow) -> f64, max: bool| {
        let it = rows.iter();
        let best = if max {
            it.max_by(|a, b| key(a).total_cmp(&key(b)))
        } else {
            it.min_by(|a, b| key(a).total_cmp(&key(b)))
        };
        best.map(|r| r.layer)
    };
    let l2 = arg(&|r| r.metrics.l2, true);
    let cos = arg(&|r| r.metrics.cosine.unwrap_or(f64::NAN), false);
    let overlap = arg(&|r| r.metrics.overlap, false);
    ensure(rows.len() == 32, || format!("{} dec_vs_truth rows", rows.len()))?;
    ensure(l2 == Some(16) && cos == Some(16) && overlap == Some(16), || {
        format!("l2 argmax {l2:?}, cosine argmin {cos:?}, overlap argmin {overlap:?}")
    })?;
    let flat = report
        .rows
        .iter()
        .filter(|r| r.pair == ConditionPair::TruthVsNeutral)
        .map(|r| r.metrics.cosine.unwrap_or(f64::NAN))
        .fold(f64::INFINITY, f64::min);
    ensure(flat > 0.99, || format!("truth_vs_neutral min cosine {flat:.4}"))?;
    within(start.elapsed(), 60.0)?;
    let at16 = report.row(16, ConditionPair::DecVsTruth).unwrap();
    Ok(format!(
        "layer 16: l2 {:.3}, cos {:.3}, overlap {:.3}; truth_vs_neutral min cos {flat:.6}",
        at16.metrics.l2,
        at16.metrics.cosine.unwrap_or(f64::NAN),
        at16.metrics.overlap
    ))
}

// ------------------------------------------------------------------- sae

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Matrix {
    Matrix::from_vec(r, c, gaussian(rng, r * c).into_iter().map(|v| (v * scale) as f32).collect())
}

fn sae_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut worst_val, mut worst_dec, mut active) = (0.0f64, 0.0f64, 0usize);
    for s in 0..100 {
        let d = rng.gen_range(2..=32);
        let w = rng.gen_range(d + 1..=128);
        let w_enc = random_matrix(&mut rng, d, w, 1.0 / (d as f64).sqrt());
        let b_enc: Vec<f32> = gaussian(&mut rng, w).iter().map(|v| (v * 0.1) as f32).collect();
        let theta: Vec<f32> = (0..w).map(|_| rng.gen_range(0.0..0.5)).collect();
        let w_dec = random_matrix(&mut rng, w, d, 0.3);
        let b_dec: Vec<f32> = gaussian(&mut rng, d).iter().map(|&v| v as f32).collect();
        let sae = SaeModel::new(w_enc.clone(), b_enc.clone(), theta.clone(), w_dec.clone(), b_dec.clone(), 1)
            .map_err(|e| e.to_string())?;
        let enc = DMatrix::from_fn(d, w, |i, j| f64::from(w_enc.get(i, j)));
        let dec = DMatrix::from_fn(w, d, |i, j| f64::from(w_dec.get(i, j)));
        for _ in 0..20 {
            let x: Vec<f32> = gaussian(&mut rng, d).iter().map(|&v| v as f32).collect();
            let xv = DVector::from_iterator(d, x.iter().map(|&v| f64::from(v)));
            let z = enc.transpose() * xv + DVector::from_iterator(w, b_enc.iter().map(|&v| f64::from(v)));
            let dense = DVector::from_iterator(w, z.iter().zip(&theta).map(|(&z, &t)| if z > f64::from(t) { z } else { 0.0 }));
            let support: Vec<u32> = (0..w).filter(|&i| dense[i] != 0.0).map(|i| i as u32).collect();

            let f = encode(&sae, &x).map_err(|e| e.to_string())?;
            ensure(f.indices == support, || format!("sae {s}: support {:?} vs oracle {support:?}", f.indices))?;
            for (&i, &v) in f.indices.iter().zip(&f.values) {
                worst_val = worst_val.max((v - dense[i as usize]).abs());
            }
            let rec = dec.transpose() * &dense + DVector::from_iterator(d, b_dec.iter().map(|&v| f64::from(v)));
            let ours = decode(&sae, &f).map_err(|e| e.to_string())?;
            worst_dec = ours.iter().zip(rec.iter()).fold(worst_dec, |m, (a, b)| m.max((a - b).abs()));
            active += support.len();
        }
    }
    ensure(worst_val <= 1e-5, || format!("value error {worst_val:.2e}"))?;
    ensure(worst_dec <= 1e-5, || format!("decode error {worst_dec:.2e}"))?;
    Ok(format!("2000 inputs, {active} active features, max value err {worst_val:.1e}, decode err {worst_dec:.1e}"))
}

fn sparse_vec(rng: &mut ChaCha8Rng, w: usize) -> Vec<f64> {
    (0..w).map(|_| if rng.gen_bool(0.3) { rng.gen_range(0.0..3.0) } else { 0.0 }).collect()
}

fn shift_identities() -> Check {
    let eps = deceptrace::sae::DEFAULT_EPS;
    let m = |a: &[f64], b: &[f64]| shift_metrics(a, b, eps).map_err(|e| e.to_string());
    let worked = m(&[1.0, 0.0, 1.0, 0.0], &[1.0, 1.0, 0.0, 0.0])?;
    ensure(worked.overlap == 1.0 / 3.0, || format!("worked example overlap {}", worked.overlap))?;

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for t in 0..10_000 {
        let w = rng.gen_range(1..=64);
        let (a, b, c) = (sparse_vec(&mut rng, w), sparse_vec(&mut rng, w), sparse_vec(&mut rng, w));
        let aa = m(&a, &a)?;
        ensure(aa.l2 == 0.0 && aa.overlap == 1.0, || format!("triple {t}: self metrics {aa:?}"))?;
        if let Some(cs) = aa.cosine {
            ensure((cs - 1.0).abs() <= 1e-12, || format!("triple {t}: self cosine {cs}"))?;
        } else {
            ensure(a.iter().all(|&v| v == 0.0), || format!("triple {t}: undefined self cosine"))?;
        }
        let (ab, ba, bc, ac) = (m(&a, &b)?, m(&b, &a)?, m(&b, &c)?, m(&a, &c)?);
        ensure(ab.l2 == ba.l2 && ab.overlap == ba.overlap && ab.cosine == ba.cosine, || {
            format!("triple {t}: asymmetric {ab:?} / {ba:?}")
        })?;
        ensure(ac.l2 <= ab.l2 + bc.l2 + 1e-12, || format!("triple {t}: triangle inequality"))?;
        ensure((0.0..=1.0).contains(&ab.overlap), || format!("triple {t}: overlap {}", ab.overlap))?;
        if let Some(cs) = ab.cosine {
            ensure((-1e-12..=1.0 + 1e-12).contains(&cs), || format!("triple {t}: cosine {cs}"))?;
        }
    }
    Ok("self identities, overlap([1,0,1,0],[1,1,0,0]) = 1/3, 10^4 random triples".into())
}

fn brute_top_k(fa: &[f64], fb: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = fa.iter().zip(fb).map(|(a, b)| (b - a).abs()).enumerate().collect();
    all.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    all.truncate(k);
    all
}

fn top_k() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let w = 131_072;
    for trial in 0..5 {
        // Coarse quantization forces many ties.
        let q = if trial % 2 == 0 { 1.0 } else { 1e6 };
        let fa: Vec<f64> = (0..w).map(|_| (rng.gen_range(0.0..4.0f64) * q).round() / q).collect();
        let fb: Vec<f64> = (0..w).map(|_| (rng.gen_range(0.0..4.0f64) * q).round() / q).collect();
        for k in [1, 2, 10] {
            let ours: Vec<(usize, f64)> = top_k_features(&fa, &fb, k)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|r| (r.feature_id, r.abs_delta))
                .collect();
            let truth = brute_top_k(&fa, &fb, k);
            ensure(ours == truth, || format!("trial {trial}, k={k}: {ours:?} vs {truth:?}"))?;
        }
    }

    let fx = fixture()?;
    let sets = load_sets(&fx.cfg).map_err(|e| e.to_string())?;
    let centroids = shift_centroids(&fx.cfg, &sets).map_err(|e| e.to_string())?;
    let ranking = run_top_features(&fx.cfg, &centroids).map_err(|e| e.to_string())?;
    ensure(fx.cfg.sae.top_k == 2, || format!("fixture top_k {}", fx.cfg.sae.top_k))?;
    for (layer, feats) in &ranking.layers {
        let c = &centroids[layer];
        let truth = brute_top_k(&c[&deceptrace::Condition::Truthful], &c[&deceptrace::Condition::Deceptive], 2);
        let ours: Vec<(usize, f64)> = feats.iter().map(|r| (r.feature_id, r.abs_delta)).collect();
        ensure(ours == truth, || format!("fixture layer {layer}: {ours:?} vs {truth:?}"))?;
    }
    let at16 = &ranking.layers[&16];
    Ok(format!(
        "k in {{1,2,10}} over 5 vectors of width {w}; fixture k=2 at layer 16: features {} and {}",
        at16[0].feature_id, at16[1].feature_id
    ))
}

// -------------------------------------------------------------- geometry

/// Cyclic Jacobi eigendecomposition of a symmetric matrix, eigenvalues descending.
fn jacobi(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let vals = order.iter().map(|&i| a[i][i]).collect();
    let vecs = order.iter().map(|&i| v.iter().map(|row| row[i]).collect()).collect();
    (vals, vecs)
}

fn pca_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (mut worst, mut worst_orth) = (0.0f64, 0.0f64);
    let mut trials = 0;
    for _ in 0..200 {
        let d = rng.gen_range(2..=16);
        let n = if rng.gen_bool(0.25) { rng.gen_range(3..=d.max(3)) } else { rng.gen_range(d + 1..=60) };
        let scales: Vec<f64> = (0..d).map(|_| rng.gen_range(0.2..3.0)).collect();
        let x = Matrix::from_vec(
            n,
            d,
            (0..n * d).map(|i| (rng.sample::<f64, _>(StandardNormal) * scales[i % d]) as f32).collect(),
        );
        let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| f64::from(x.get(i, j))).sum::<f64>() / n as f64).collect();
        let cov: Vec<Vec<f64>> = (0..d)
            .map(|a| {
                (0..d)
                    .map(|b| {
                        (0..n).map(|i| (f64::from(x.get(i, a)) - mean[a]) * (f64::from(x.get(i, b)) - mean[b])).sum::<f64>()
                            / (n - 1) as f64
                    })
                    .collect()
            })
            .collect();
        let (vals, vecs) = jacobi(cov);
        // Components are compared only where the spectrum is non-degenerate.
        let rank = (n - 1).min(d);
        let k = (0..rank)
            .take_while(|&i| {
                let gap_prev = if i == 0 { f64::INFINITY } else { vals[i - 1] - vals[i] };
                let gap_next = if i + 1 < d { vals[i] - vals[i + 1] } else { f64::INFINITY };
                gap_prev.min(gap_next) > 1e-3 * vals[0] && vals[i] > 1e-9
            })
            .count();
        if k == 0 {
            continue;
        }
        let model = pca_fit(&x, k).map_err(|e| e.to_string())?;
        for c in 0..k {
            let ours = &model.components[c];
            let sign = dot(ours, &vecs[c]).signum();
            let diff = ours.iter().zip(&vecs[c]).fold(0.0f64, |m, (a, b)| m.max((a - sign * b).abs()));
            worst = worst.max(diff);
            worst = worst.max((model.explained_variance[c] - vals[c]).abs() / vals[0].max(1.0));
            for c2 in 0..k {
                let target = f64::from(u8::from(c == c2));
                worst_orth = worst_orth.max((dot(ours, &model.components[c2]) - target).abs());
            }
        }
        trials += 1;
    }
    ensure(worst <= 1e-6, || format!("max component deviation {worst:.2e}"))?;
    ensure(worst_orth <= 1e-6, || format!("orthonormality error {worst_orth:.2e}"))?;
    Ok(format!("{trials} random matrices, max deviation {worst:.1e}, orthonormality {worst_orth:.1e}"))
}

// ------------------------------------------------------------ end to end

fn read_tree(root: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), bytes);
            }
        }
    }
    Ok(out)
}

fn determinism() -> Check {
    let fx = fixture()?;
    let config = fx.root.join("fixture.toml");
    let mut trees = Vec::new();
    for run in ["run_a", "run_b"] {
        let out = fx.root.join(run);
        let code = cli::run([
            "deceptrace".into(),
            "report".into(),
            "--config".into(),
            config.display().to_string(),
            "--set".into(),
            format!("output_dir=\"{}\"", out.display()),
        ]);
        ensure(code == 0, || format!("{run}: report exited {code}"))?;
        trees.push(read_tree(&out)?);
    }
    ensure(!trees[0].is_empty(), || "report wrote nothing".into())?;
    let names: Vec<_> = trees[0].keys().collect();
    ensure(trees[0].keys().eq(trees[1].keys()), || "file sets differ".into())?;
    for (name, bytes) in &trees[0] {
        ensure(trees[1][name] == *bytes, || format!("{} differs between runs", name.display()))?;
    }
    Ok(format!("{} files byte-identical across two runs", names.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 12] = [
        ("corpus correctness", corpus_correctness),
        ("negation integrity", negation_integrity),
        ("store round-trip", store_round_trip),
        ("LR planted-model oracle", lr_planted),
        ("TTPD planted-model oracle", ttpd_planted),
        ("layer-sweep peak localization", sweep_peak),
        ("SAE encode/decode oracle", sae_oracle),
        ("shift-metric identities", shift_identities),
        ("shift peak localization", shift_peak),
        ("top-k ranking", top_k),
        ("PCA oracle", pca_oracle),
        ("end-to-end determinism", determinism),
    ];
    let suite = Instant::now();
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name} ({secs:.2} s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name} ({secs:.2} s): {why}");
            }
        }
    }
    let total = suite.elapsed().as_secs_f64();
    if total >= 300.0 {
        failed += 1;
        println!("FAIL  total suite runtime {total:.1} s exceeds 300 s");
    }
    println!("{} of 12 criteria passed in {total:.1} s", 12 - failed.min(12));
    if failed > 0 {
        std::process::exit(1);
    }
}
