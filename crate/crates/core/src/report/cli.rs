//! Command-line entry point. Exit codes: 0 success, 1 usage or validation
//! error, 2 runtime error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::config::{Needs, RunConfig};
use super::pipeline::{
    load_sets, run_all, run_pca, run_probe_sweep, run_shift, run_top_features, run_violin, shift_centroids, Outputs,
};
use super::ReportError;
use crate::corpus::{
    base_form, load_base_dataset, make_comparisons, make_conjunctions, make_disjunctions, negate, write_jsonl,
    Direction, DisjunctionStyle, LogicalForm, NegationRuleTable, StatementSet,
};
use crate::synth::{sample_dataset, write_fixture, FixtureSpec};

pub const THREADS_ENV: &str = "DECEPTRACE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "deceptrace", version, about = "Layer-wise probing and SAE shift analysis of LLM activations")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set probe.folds=3` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a dataset (base, negated, conjunction, disjunction or comparison) as JSONL.
    GenData(GenData),
    /// Layer-wise LR/TTPD probing sweep → sweep.csv.
    ProbeSweep,
    /// SAE centroid shift metrics with bootstrap bands → shift.csv.
    SaeShift,
    /// Features whose mean activation changes most under deception → top_features.csv.
    TopFeatures,
    /// Per-row activations of selected features → violin.json.
    ViolinData,
    /// 2-D PCA coordinates per layer and condition → pca_scatter.csv.
    Pca,
    /// Every stage plus charts and report.json.
    Report,
    /// Write a synthetic activation dump with planted structure and a matching config.
    MakeFixture(MakeFixture),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Style {
    EndWord,
    Independent,
}

#[derive(Debug, Args)]
struct GenData {
    #[arg(long)]
    dataset: String,
    /// Rows to generate for conjunctions and disjunctions.
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `statement,label` CSV of the base topic; defaults to the bundled sample.
    #[arg(long, value_name = "CSV")]
    source: Option<PathBuf>,
    /// Disjunction style; defaults to independent for facts, end-word otherwise.
    #[arg(long, value_enum)]
    style: Option<Style>,
    /// Output file; stdout when omitted.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MakeFixture {
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn thread_count(cfg_threads: Option<usize>) -> Result<Option<usize>, ReportError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(cfg_threads.map_or(n, |c| c.min(n)))),
            _ => Err(ReportError::Validation(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(cfg_threads),
    }
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T, ReportError> + Send) -> Result<T, ReportError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| ReportError::Runtime(e.to_string()))?;
    pool.install(f)
}

fn execute(cli: Cli) -> Result<(), ReportError> {
    let needs = match &cli.command {
        Command::GenData(g) => return gen_data(g),
        Command::MakeFixture(m) => return make_fixture(m),
        Command::ProbeSweep => Needs::Probes,
        Command::SaeShift | Command::TopFeatures | Command::ViolinData => Needs::Sae,
        Command::Pca => Needs::Pca,
        Command::Report => Needs::All,
    };
    let (cfg, echo) = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    cfg.validate(needs)?;
    let threads = thread_count(cfg.threads)?;
    with_pool(threads, || {
        if matches!(cli.command, Command::Report) {
            let out = run_all(&cfg, &echo)?;
            return announce(&out);
        }
        let sets = load_sets(&cfg)?;
        let mut out = Outputs::new(&cfg.output_dir)?;
        match cli.command {
            Command::ProbeSweep => out.sweep(&run_probe_sweep(&cfg, &sets)?)?,
            Command::SaeShift => out.shift(&run_shift(&cfg, &sets)?)?,
            Command::TopFeatures => out.top_features(&run_top_features(&cfg, &shift_centroids(&cfg, &sets)?)?)?,
            Command::ViolinData => {
                let ranking = run_top_features(&cfg, &shift_centroids(&cfg, &sets)?)?;
                out.violin(&run_violin(&cfg, &sets, &ranking)?)?
            }
            Command::Pca => out.pca(&run_pca(&cfg, &sets)?)?,
            _ => unreachable!("handled above"),
        }
        announce(&out)
    })
}

fn announce(out: &Outputs) -> Result<(), ReportError> {
    let mut stdout = std::io::stdout().lock();
    for name in out.digests.keys() {
        writeln!(stdout, "wrote {}", out.dir.join(name).display())?;
    }
    Ok(())
}

fn base_set(topic: &str, source: Option<&Path>) -> Result<StatementSet, ReportError> {
    Ok(match source {
        Some(p) => load_base_dataset(p, topic, None)?,
        None => sample_dataset(topic)?,
    })
}

fn gen_data(g: &GenData) -> Result<(), ReportError> {
    let id = g.dataset.as_str();
    let form = base_form(id).ok_or_else(|| ReportError::Validation(format!("unknown dataset id `{id}`")))?;
    let set = match form {
        LogicalForm::Affirmative | LogicalForm::OpenDomain => match (&g.source, form) {
            (None, LogicalForm::OpenDomain) => {
                return Err(ReportError::Validation(format!("{id} has no bundled sample; pass --source")))
            }
            (src, _) => base_set(id, src.as_deref())?,
        },
        LogicalForm::Negated => {
            let topic = &id["neg_".len()..];
            let rules = NegationRuleTable::for_dataset(topic).expect("curated topic");
            negate(&base_set(topic, g.source.as_deref())?, &rules)?
        }
        LogicalForm::Conjunction => {
            let topic = &id[..id.len() - "_conj".len()];
            make_conjunctions(&base_set(topic, g.source.as_deref())?, g.n, g.seed)?
        }
        LogicalForm::Disjunction => {
            let topic = &id[..id.len() - "_disj".len()];
            let style = match g.style {
                Some(Style::EndWord) => DisjunctionStyle::EndWord,
                Some(Style::Independent) => DisjunctionStyle::Independent,
                None if topic == "facts" => DisjunctionStyle::Independent,
                None => DisjunctionStyle::EndWord,
            };
            make_disjunctions(&base_set(topic, g.source.as_deref())?, g.n, g.seed, style)
                .map_err(|e| match e {
                    crate::corpus::CorpusError::Config(m) => ReportError::Validation(m),
                    other => other.into(),
                })?
        }
        LogicalForm::Comparison => {
            let dir = if id == "larger_than" { Direction::Larger } else { Direction::Smaller };
            make_comparisons(1, 45, dir)?
        }
    };
    let mut buf = Vec::new();
    write_jsonl(&set, &mut buf)?;
    match &g.out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, buf)?;
        }
        None => std::io::stdout().lock().write_all(&buf)?,
    }
    Ok(())
}

fn make_fixture(m: &MakeFixture) -> Result<(), ReportError> {
    let spec = FixtureSpec { seed: m.seed, ..FixtureSpec::default() };
    let layout = write_fixture(&m.out, &spec)?;
    let cfg = RunConfig {
        model_id: spec.model_id.clone(),
        layers: spec.layers.clone(),
        datasets: layout.dataset_ids.clone(),
        seed: m.seed,
        sae: super::SaeSection {
            weights: Some("sae/layer_{layer:03}.safetensors".into()),
            ..Default::default()
        },
        pca: super::PcaSection { layers: vec![8, 16, 32], ..Default::default() },
        ..RunConfig::default()
    };
    let text = toml::to_string(&cfg).map_err(|e| ReportError::Runtime(e.to_string()))?;
    let path = m.out.join("fixture.toml");
    fs::write(&path, text)?;
    println!("wrote fixture to {} (config {})", m.out.display(), path.display());
    Ok(())
}
