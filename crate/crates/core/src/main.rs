use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use factlab::data::{RenderOptions, TemplatePolicy, TrainingSet};
use factlab::factgen::{
    company_schema, read_schema_json, read_triples_jsonl, select, split_heldout, synth_corpus_with, write_schema_json,
    write_triples_jsonl, FactDataset, KeyStyle, Split, SynthOptions, TemplateStyle,
};
use factlab::harness::{self, ExperimentSpec};
use factlab::model::{count_params, load_checkpoint, Checkpoint, ModelConfig};
use factlab::scaling::{self, fit_linear, fit_negexp, fit_powerlaw, ProbeSetup, SearchOptions};
use factlab::trainer::{self, train_in_dir, RunDir, TrainConfig};
use factlab::{evaluator, Error, Result};

#[derive(Parser)]
#[command(name = "factlab", version, about = "Fact memorization experiments on tiny language models")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus into a data directory (triples.jsonl + schema.json).
    Synth(SynthArgs),
    /// Train a model on a data directory; writes a run directory.
    Train(TrainArgs),
    /// Memorization rate of a run's latest checkpoint.
    Eval(EvalArgs),
    /// Search the largest |D| a model memorizes at the threshold.
    Capacity(CapacityArgs),
    /// Fit a scaling law to an x,y CSV.
    Fit(FitArgs),
    /// Declarative experiments.
    Experiment {
        #[command(subcommand)]
        cmd: ExperimentCmd,
    },
    /// Tables and plots from a run directory's records.csv.
    Report {
        dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum ExperimentCmd {
    Run { spec: PathBuf },
    Resume { dir: PathBuf },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    keys: usize,
    /// Comma-separated attribute ids.
    #[arg(long, value_delimiter = ',', default_value = "operator,status,longitude,register_capital")]
    attributes: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Style::Compact)]
    style: Style,
    #[arg(long, value_enum, default_value_t = Keys::Company)]
    key_style: Keys,
    /// Fraction of keys moved to heldout.jsonl.
    #[arg(long, default_value_t = 0.0)]
    heldout: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Style {
    Compact,
    Table,
}

#[derive(Clone, Copy, ValueEnum)]
enum Keys {
    Company,
    Book,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    intermediate: Option<usize>,
}

impl ModelArgs {
    fn config(&self, seed: u64) -> ModelConfig {
        let heads = self.heads.unwrap_or((self.hidden / 32).max(1));
        let mut cfg = ModelConfig::desk(self.layers, self.hidden, heads).with_seed(seed);
        if let Some(i) = self.intermediate {
            cfg.intermediate = i;
        }
        cfg
    }
}

#[derive(Args)]
struct OptimArgs {
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Peak learning rate; defaults to the size-interpolated table value.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    eval_every: usize,
    #[arg(long)]
    rotate_templates: bool,
}

impl OptimArgs {
    fn config(&self, model: &ModelConfig) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr.unwrap_or_else(|| trainer::default_learning_rate(count_params(model).1, false)),
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            eval_every: self.eval_every,
            ..Default::default()
        }
    }

    fn render(&self) -> RenderOptions {
        RenderOptions {
            policy: if self.rotate_templates {
                TemplatePolicy::RotatePerEpoch
            } else {
                TemplatePolicy::FixedByHash
            },
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    run: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// Continue the run from its newest checkpoint instead of starting over.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Evaluate heldout.jsonl instead of the training triples.
    #[arg(long)]
    heldout: bool,
    #[arg(long, default_value_t = 20)]
    samples: usize,
}

#[derive(Args)]
struct CapacityArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long, default_value_t = 95.0)]
    phi: f64,
    #[arg(long, default_value_t = 8)]
    budget: usize,
    #[arg(long)]
    start: Option<usize>,
    /// Writes the point and probe trace as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LawArg {
    Linear,
    Negexp,
    Powerlaw,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, value_enum)]
    law: LawArg,
    /// CSV with a header row and two numeric columns.
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extrapolate the fit to these x values.
    #[arg(long, value_delimiter = ',')]
    at: Vec<f64>,
}

fn style(s: Style) -> TemplateStyle {
    match s {
        Style::Compact => TemplateStyle::Compact,
        Style::Table => TemplateStyle::Table,
    }
}

fn write_dataset(path: &Path, ds: &FactDataset) -> Result<()> {
    let f = File::create(path).map_err(|e| io(path, e))?;
    write_triples_jsonl(BufWriter::new(f), &ds.triples)
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn load_dataset(dir: &Path, file: &str, split: Split) -> Result<FactDataset> {
    let sp = dir.join("schema.json");
    let schema = read_schema_json(BufReader::new(File::open(&sp).map_err(|e| io(&sp, e))?))?;
    let tp = dir.join(file);
    let triples = read_triples_jsonl(BufReader::new(File::open(&tp).map_err(|e| io(&tp, e))?))?;
    FactDataset::new(triples, schema, split, 0)
}

fn synth(a: &SynthArgs) -> Result<()> {
    let ids: Vec<&str> = a.attributes.iter().map(String::as_str).collect();
    let schema = select(&company_schema(style(a.style)), &ids)?;
    let opts = SynthOptions {
        key_style: match a.key_style {
            Keys::Company => KeyStyle::Company,
            Keys::Book => KeyStyle::Book,
        },
    };
    let corpus = synth_corpus_with(&schema, a.keys, a.seed, opts)?;
    fs::create_dir_all(&a.out).map_err(|e| io(&a.out, e))?;
    let sp = a.out.join("schema.json");
    write_schema_json(File::create(&sp).map_err(|e| io(&sp, e))?, &corpus.schema)?;
    let (train, held) = if a.heldout > 0.0 {
        let (t, h) = split_heldout(&corpus, a.heldout, a.seed)?;
        (t, Some(h))
    } else {
        (corpus, None)
    };
    write_dataset(&a.out.join("triples.jsonl"), &train)?;
    if let Some(h) = &held {
        write_dataset(&a.out.join("heldout.jsonl"), h)?;
    }
    println!(
        "{} training triples, {} held-out triples -> {}",
        train.len(),
        held.as_ref().map_or(0, |h| h.len()),
        a.out.display()
    );
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let ds = load_dataset(&a.data, "triples.jsonl", Split::Train)?;
    let set = TrainingSet::from_dataset(&ds, a.optim.render())?;
    let (model, report) = if a.resume {
        trainer::resume(&a.run, &set)?
    } else {
        let model = a.model.config(a.optim.seed);
        let cfg = a.optim.config(&model);
        let meta = serde_json::json!({ "data": a.data, "render": a.optim.render() });
        train_in_dir(&a.run, &model, &set, &cfg, meta)?
    };
    let mr = evaluator::memorization_rate(&model, &set)?;
    println!(
        "non-embed {}  epochs {}  final loss {:.4}  MR {:.4}",
        model.layout.non_embed(),
        report.epochs.len(),
        report.final_loss().unwrap_or(f64::NAN),
        mr.mr
    );
    Ok(())
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let dir = RunDir::new(&a.run);
    let Some((epoch, path)) = dir.latest_checkpoint()? else {
        return Err(Error::Checkpoint(format!("no checkpoint under {}", a.run.display())));
    };
    let ckpt: Checkpoint<f32> = load_checkpoint(&path)?;
    let render: RenderOptions = serde_json::from_value(dir.read_config()?.data["render"].clone()).unwrap_or_default();
    let report = if a.heldout {
        let train = TrainingSet::from_dataset(&load_dataset(&a.data, "triples.jsonl", Split::Train)?, render)?;
        let held = TrainingSet::from_dataset(&load_dataset(&a.data, "heldout.jsonl", Split::Heldout)?, render)?;
        evaluator::generalization_eval(&ckpt.model, &held, &train.keys())?
    } else {
        let set = TrainingSet::from_dataset(&load_dataset(&a.data, "triples.jsonl", Split::Train)?, render)?;
        evaluator::memorization_rate_with(&ckpt.model, &set, evaluator::EvalOptions { sample_predictions: a.samples })?
    };
    let out = a.run.join(if a.heldout { "eval_heldout.json" } else { "eval.json" });
    fs::write(&out, serde_json::to_vec_pretty(&report)?).map_err(|e| io(&out, e))?;
    println!("epoch {epoch}  {} / {} correct  MR {:.4}", report.correct, report.count, report.mr);
    if let Some(l) = report.heldout_loss {
        println!("held-out loss {l:.4}");
    }
    for (g, r) in &report.per_attribute {
        println!("  {g:<24} {:.4}", r.rate);
    }
    Ok(())
}

fn capacity_cmd(a: &CapacityArgs) -> Result<()> {
    let corpus = load_dataset(&a.data, "triples.jsonl", Split::Train)?;
    let model = a.model.config(a.optim.seed);
    let train = a.optim.config(&model);
    let setup = ProbeSetup {
        model: &model,
        train: &train,
        corpus: &corpus,
        render: a.optim.render(),
        seed: a.optim.seed,
    };
    let g = setup.facts_per_key();
    let opts = SearchOptions {
        phi: a.phi,
        budget: a.budget,
        start: a.start.unwrap_or((corpus.len() / 4).max(g)),
        granularity: g,
        max_size: corpus.len(),
    };
    let s = scaling::find_capacity(&setup, &opts)?;
    for (d, mr) in &s.trace {
        println!("probe |D|={d:<8} MR={mr:.4}");
    }
    let p = &s.point;
    println!(
        "capacity {:.1} at |D|={} (MR {:.4}, non-embed {}, {} epochs){}",
        p.effective_capacity,
        p.dataset_size,
        p.mr,
        p.non_embed,
        p.epochs,
        if p.band_miss { " [band missed]" } else { "" }
    );
    for w in &p.warnings {
        println!("warning: {w}");
    }
    if let Some(out) = &a.out {
        fs::write(out, serde_json::to_vec_pretty(&s)?).map_err(|e| io(out, e))?;
    }
    Ok(())
}

fn fit_cmd(a: &FitArgs) -> Result<()> {
    let pts = scaling::read_xy_csv(&a.input)?;
    let fit = match a.law {
        LawArg::Linear => fit_linear(&pts)?,
        LawArg::Negexp => fit_negexp(&pts)?,
        LawArg::Powerlaw => fit_powerlaw(&pts)?,
    };
    println!("{}", serde_json::to_string_pretty(&fit.params)?);
    println!("r² {:.5}  residual RMS {:.5}", fit.r_squared, fit.residual_rms);
    for f in &fit.flags {
        println!("note: {f}");
    }
    for &x in &a.at {
        let e = fit.extrapolate(x);
        println!("f({x}) = {:.5}{}", e.value, if e.beyond_range { "  [beyond fitted range]" } else { "" });
    }
    if let Some(out) = &a.out {
        scaling::write_fit_json(out, &fit)?;
    }
    Ok(())
}

fn experiment_done(out: harness::ExperimentOutcome, root: &Path) -> Result<ExitCode> {
    if !out.records.is_empty() {
        harness::report(&out.records, root)?;
    }
    let failed = out.manifest.failures();
    println!(
        "{} cells, {} failed, {} records -> {}",
        out.manifest.cells.len(),
        failed.len(),
        out.records.len(),
        root.display()
    );
    for c in &failed {
        eprintln!("cell {} seed {}: {}", c.group, c.seed, c.error.as_deref().unwrap_or("?"));
    }
    Ok(if failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Synth(a) => synth(&a)?,
        Cmd::Train(a) => train_cmd(&a)?,
        Cmd::Eval(a) => eval_cmd(&a)?,
        Cmd::Capacity(a) => capacity_cmd(&a)?,
        Cmd::Fit(a) => fit_cmd(&a)?,
        Cmd::Experiment { cmd: ExperimentCmd::Run { spec } } => {
            let spec = ExperimentSpec::load(&spec)?;
            let out = harness::run_experiment(&spec)?;
            return experiment_done(out, &spec.output_dir);
        }
        Cmd::Experiment { cmd: ExperimentCmd::Resume { dir } } => {
            let out = harness::resume_dir(&dir)?;
            return experiment_done(out, &dir);
        }
        Cmd::Report { dir } => {
            let recs = harness::read_records_csv(&dir.join("records.csv"))?;
            for p in harness::report(&recs, &dir)? {
                println!("{}", p.display());
            }
            if let Ok(c) = harness::compare_groups(&recs, None) {
                for g in &c.groups {
                    println!("{:<28} MR {:.4} ± {:.4}  ({} seeds)", g.label, g.mean_mr, g.spread, g.seeds.len());
                }
                for p in &c.predicates {
                    println!("{} {}: {}", if p.holds { "holds" } else { "FAILS" }, p.name, p.detail);
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::SpecValidation(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
