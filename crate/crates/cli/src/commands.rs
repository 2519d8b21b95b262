use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use uschema::checkpoint;
use uschema::data::{
    generate_synthetic, ingest_triples, make_unseen_row_split, split_dataset, write_triples, ColumnId, DatasetSplit,
    RowId, Source, SynthSpec, Triple, Vocabulary,
};
use uschema::evaluation::{evaluate, RankingReport, Universe};
use uschema::math::sigmoid;
use uschema::model::{init_model, Init, Model, ModelSummary};
use uschema::training::{train as train_model, TrainReport};
use uschema::Error;

use crate::config::{load_table, ConfigArgs, RunConfig};
use crate::{EvalArgs, ExplainArgs, IngestArgs, PredictArgs, SynthArgs};

const CONFIG_FILE: &str = "config.toml";
const VOCAB_DIR: &str = "vocab";
const CHECKPOINT_DIR: &str = "checkpoint";

struct Dataset {
    vocab: Vocabulary,
    split: DatasetSplit,
    universe: Universe,
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let (vocab, triples) = ingest_triples(cfg.data_path()?, &cfg.filters())?;
    let split = match cfg.unseen() {
        Some(n) => make_unseen_row_split(&vocab, &triples, cfg.split_ratios(), n, cfg.seed)?,
        None => split_dataset(&vocab, &triples, cfg.split_ratios(), cfg.seed)?,
    };
    let universe = Universe::new(&vocab, &split);
    Ok(Dataset { vocab, split, universe })
}

/// Resolves flags over `--config`, or over `<run-dir>/config.toml` when no
/// config file is named.
fn resolve_for_run(args: &ConfigArgs) -> Result<RunConfig> {
    if args.config.is_none() {
        if let Some(dir) = &args.run_dir {
            let path = dir.join(CONFIG_FILE);
            if path.exists() {
                return args.resolve_over(load_table(&path)?);
            }
        }
    }
    args.resolve()
}

fn set_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")
}

/// A checkpoint directory, or a run directory containing one.
fn checkpoint_dir(path: &Path) -> PathBuf {
    let nested = path.join(CHECKPOINT_DIR);
    if nested.join(checkpoint::META_FILE).exists() {
        nested
    } else {
        path.to_path_buf()
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_report(dir: &Path, name: &str, report: &RankingReport, vocab: &Vocabulary) -> Result<()> {
    write_json(&dir.join(format!("eval_{name}.json")), report)?;
    let file = fs::File::create(dir.join(format!("eval_{name}.tsv")))?;
    let mut w = BufWriter::new(file);
    report.write_tsv(vocab, &mut w)?;
    w.flush()?;
    Ok(())
}

fn warn_cold_start(report: &RankingReport) {
    if report.cold_start_rows > 0 {
        eprintln!(
            "warning: {} cold-start rows had no learned embedding and were scored with a zero vector",
            report.cold_start_rows
        );
    }
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        text_fraction: a.text_fraction,
        ..SynthSpec::new(a.rows, a.cols, a.blocks, a.noise, a.seed)
    };
    let (vocab, triples, blocks) = generate_synthetic(&spec)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_triples(&a.out, &vocab, &triples)?;

    let truth = a.truth.clone().unwrap_or_else(|| {
        let mut name = a.out.clone().into_os_string();
        name.push(".blocks.tsv");
        PathBuf::from(name)
    });
    let mut w = BufWriter::new(fs::File::create(&truth)?);
    for (r, b) in blocks.rows.iter().enumerate() {
        writeln!(w, "row\t{}\t{b}", vocab.row_name(RowId(r as u32)))?;
    }
    for (c, b) in blocks.columns.iter().enumerate() {
        writeln!(w, "column\t{}\t{b}", vocab.column_name(ColumnId(c as u32)))?;
    }
    w.flush()?;
    println!(
        "wrote {} triples over {} rows and {} columns to {}",
        triples.len(),
        vocab.n_rows(),
        vocab.n_columns(),
        a.out.display()
    );
    Ok(())
}

pub fn ingest(a: &IngestArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let (vocab, triples) = ingest_triples(cfg.data_path()?, &cfg.filters())?;
    fs::create_dir_all(&a.out)?;
    vocab.save(&a.out.join(VOCAB_DIR))?;
    write_triples(&a.out.join("triples.tsv"), &vocab, &triples)?;
    let kb = vocab.kb_columns().count();
    let kb_triples = triples.iter().filter(|t| t.source == Source::Kb).count();
    println!("rows\t{}", vocab.n_rows());
    println!("columns\t{} ({kb} kb, {} text)", vocab.n_columns(), vocab.n_columns() - kb);
    println!("tokens\t{}", vocab.n_tokens());
    println!("triples\t{} ({kb_triples} kb, {} text)", triples.len(), triples.len() - kb_triples);
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    report: &'a TrainReport,
    model: ModelSummary,
    test_seen: Option<&'a RankingReport>,
    test_unseen: Option<&'a RankingReport>,
}

pub fn train(args: &ConfigArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let run_dir = cfg.run_dir_path()?.to_path_buf();
    set_threads(cfg.threads)?;
    let ds = load_dataset(&cfg)?;

    let donor = match &cfg.init_from {
        Some(p) => Some(checkpoint::load(&checkpoint_dir(p), &ds.vocab)?.0),
        None => None,
    };
    let mut model = init_model(&cfg.model_config(), &ds.vocab, ds.split.trained_rows(), cfg.seed, donor.as_ref())?;
    let protocol = cfg.eval_protocol();
    let report = train_model(&mut model, &ds.split, &ds.universe, &cfg.train_config(), &protocol)?;

    fs::create_dir_all(&run_dir)?;
    fs::write(run_dir.join(CONFIG_FILE), cfg.to_toml()?)?;
    ds.vocab.save(&run_dir.join(VOCAB_DIR))?;
    checkpoint::save(&run_dir.join(CHECKPOINT_DIR), &model, &ds.vocab, cfg.objective, cfg.seed)?;
    fs::write(run_dir.join("train_log.tsv"), report.to_tsv())?;

    let evaluate_on = |positives: Vec<Triple>| -> Result<Option<RankingReport>> {
        if positives.is_empty() {
            return Ok(None);
        }
        Ok(Some(evaluate(&model, &ds.split, &ds.universe, &protocol, &positives)?))
    };
    let seen = evaluate_on(ds.split.test_seen())?;
    let unseen = if cfg.eval_unseen { evaluate_on(ds.split.test_unseen())? } else { None };
    for (name, r) in [("seen", &seen), ("unseen", &unseen)] {
        if let Some(r) = r {
            write_report(&run_dir, name, r, &ds.vocab)?;
        }
    }
    write_json(
        &run_dir.join("train_summary.json"),
        &TrainSummary {
            report: &report,
            model: model.summary(),
            test_seen: seen.as_ref(),
            test_unseen: unseen.as_ref(),
        },
    )?;

    println!(
        "trained {} epochs (best {}), checkpoint in {}",
        report.epochs.len(),
        report.best_epoch,
        run_dir.join(CHECKPOINT_DIR).display()
    );
    if let Some(r) = &seen {
        println!("test (seen rows): {r}");
    }
    if let Some(r) = &unseen {
        println!("test (unseen rows): {r}");
        warn_cold_start(r);
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let cfg = resolve_for_run(&a.config)?;
    set_threads(cfg.threads)?;
    let run_dir = cfg.run_dir_path()?.to_path_buf();
    let ckpt = a.checkpoint.clone().unwrap_or_else(|| run_dir.join(CHECKPOINT_DIR));
    checkpoint::load_meta(&ckpt)?;
    let ds = load_dataset(&cfg)?;
    let (model, _) = checkpoint::load(&ckpt, &ds.vocab)?;

    let positives = match a.split.as_str() {
        "seen" => ds.split.test_seen(),
        "unseen" => ds.split.test_unseen(),
        "test" => ds.split.test.clone(),
        "validation" => ds.split.validation.clone(),
        other => return Err(Error::Config(format!("unknown split {other:?}")).into()),
    };
    if positives.is_empty() {
        return Err(Error::Config(format!("split {:?} has no positives", a.split)).into());
    }
    let report = evaluate(&model, &ds.split, &ds.universe, &cfg.eval_protocol(), &positives)?;
    fs::create_dir_all(&run_dir)?;
    write_report(&run_dir, &a.split, &report, &ds.vocab)?;
    println!("{}: {report}", a.split);
    warn_cold_start(&report);
    Ok(())
}

struct Loaded {
    ds: Dataset,
    model: Model,
}

fn load_run(args: &ConfigArgs) -> Result<Loaded> {
    let cfg = resolve_for_run(args)?;
    let ckpt = checkpoint_dir(cfg.run_dir_path()?);
    checkpoint::load_meta(&ckpt)?;
    let ds = load_dataset(&cfg)?;
    let (model, _) = checkpoint::load(&ckpt, &ds.vocab)?;
    Ok(Loaded { ds, model })
}

fn lookup_row(vocab: &Vocabulary, name: &str) -> Result<RowId> {
    vocab
        .row_id(name)
        .ok_or_else(|| Error::Config(format!("unknown row {name:?}")).into())
}

fn lookup_column(vocab: &Vocabulary, name: &str) -> Result<ColumnId> {
    vocab
        .column_id(name)
        .ok_or_else(|| Error::Config(format!("unknown column {name:?}")).into())
}

fn evidence(split: &DatasetSplit, row: RowId, query: ColumnId) -> Vec<ColumnId> {
    split.observed_columns(row).iter().copied().filter(|&c| c != query).collect()
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let Loaded { ds, model } = load_run(&a.config)?;
    let row = lookup_row(&ds.vocab, &a.row)?;
    if !model.has_row_embedding(row) {
        eprintln!("warning: row {:?} has no learned embedding; scoring with a zero vector", a.row);
    }
    let score = |col: ColumnId| -> Result<f64> {
        let (logit, _) = model.eval_logit(row, &evidence(&ds.split, row, col), col)?;
        Ok(sigmoid(logit))
    };
    match &a.column {
        Some(name) => {
            let col = lookup_column(&ds.vocab, name)?;
            println!("{}\t{}\t{:.6}", a.row, name, score(col)?);
        }
        None => {
            let mut scored = Vec::new();
            for col in ds.vocab.kb_columns() {
                if !ds.split.is_observed(row, col) {
                    scored.push((score(col)?, col));
                }
            }
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for (p, col) in scored.into_iter().take(a.top) {
                println!("{}\t{}\t{p:.6}", a.row, ds.vocab.column_name(col));
            }
        }
    }
    Ok(())
}

pub fn explain(a: &ExplainArgs) -> Result<()> {
    let cfg = resolve_for_run(&a.config)?;
    if !cfg.aggregator.is_query_dependent() {
        bail!(Error::UnsupportedExplain(format!("aggregator {}", cfg.aggregator)));
    }
    let Loaded { ds, model } = load_run(&a.config)?;
    if !model.aggregator().is_query_dependent() {
        bail!(Error::UnsupportedExplain(format!("aggregator {}", model.aggregator())));
    }
    let row = lookup_row(&ds.vocab, &a.row)?;
    let col = lookup_column(&ds.vocab, &a.column)?;
    let ev = evidence(&ds.split, row, col);
    let (_, trace) = model.row_vector(row, &ev, col)?;
    let p = model.probability(row, &ev, col)?;
    println!("# row={} column={} score={p:.6}", a.row, a.column);
    if let Some(trace) = trace {
        for (c, w) in trace.ranked() {
            println!("{}\t{w:.6}", ds.vocab.column_name(c));
        }
    }
    Ok(())
}

pub fn summary(args: &ConfigArgs) -> Result<()> {
    let cfg = resolve_for_run(args)?;
    if let Some(dir) = &cfg.run_dir {
        let ckpt = checkpoint_dir(dir);
        if ckpt.join(checkpoint::META_FILE).exists() {
            let vocab = Vocabulary::load(&dir.join(VOCAB_DIR))?;
            let (model, _) = checkpoint::load(&ckpt, &vocab)?;
            println!("{}", model.summary());
            return Ok(());
        }
    }
    let (vocab, _) = ingest_triples(cfg.data_path()?, &cfg.filters())?;
    let rows = vec![true; vocab.n_rows()];
    let model = Model::new(cfg.model_config(), &vocab, rows, Init::Zeros)?;
    println!("{}", model.summary());
    Ok(())
}
