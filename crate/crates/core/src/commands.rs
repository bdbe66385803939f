//! Pipeline commands behind the CLI binary: run configuration, data
//! preparation, training, generation, evaluation, and gradient checking.
//! Everything here is file-in/file-out so runs can be reproduced and diffed.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, oracle_by_name, render_table, EvalReport};
use crate::model::{model_suite, ConditioningConfig, ModelConfig};
use crate::synth::synthetic_corpus;
use crate::tensor::{op_suite, sign_flip_fixture_report, GradCheckReport};
use crate::text::{
    load_split_ids, load_squad, select_split, to_squad_json, RawExample, TokenizedExample,
    Vocabulary,
};
use crate::train::{load_checkpoint, train, TrainConfig, TrainState, CHECKPOINT_FILE};

pub const VOCAB_FILE: &str = "vocab.txt";
pub const SPLIT_NAMES: [&str; 3] = ["train", "dev", "test"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Small model, minutes on a CPU.
    Desk,
    /// Published training setup; several hyperparameters are locked.
    Paper,
}

/// Everything a run needs beyond file paths. Built from defaults, then a
/// key=value config file, then command-line overrides, in that order.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub profile: Profile,
    /// Dimension/conditioning template; `vocab` is a placeholder until a
    /// vocabulary file pins it.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub beam: usize,
    pub max_len: usize,
    /// Length-normalization exponent for beam scoring.
    pub alpha: f64,
    pub oracle: String,
    /// Vocabulary size cap for prepare-data.
    pub vocab_size: usize,
    /// True when a mode was set explicitly (file or flag), as opposed to
    /// inherited; generate uses this to arbitrate against the checkpoint.
    pub mode_explicit: bool,
}

impl RunConfig {
    fn with_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => RunConfig {
                profile,
                model: ModelConfig::desk(0),
                train: TrainConfig::default(),
                beam: 4,
                max_len: 32,
                alpha: 1.0,
                oracle: "lexical".into(),
                vocab_size: 8000,
                mode_explicit: false,
            },
            Profile::Paper => RunConfig {
                profile,
                model: ModelConfig::paper(),
                train: TrainConfig {
                    lr: 1e-5,
                    steps: 100_000,
                    batch_size: 8,
                    ..TrainConfig::default()
                },
                beam: 4,
                max_len: 64,
                alpha: 1.0,
                oracle: "lexical".into(),
                vocab_size: 50_265,
                mode_explicit: false,
            },
        }
    }
}

/// Hyperparameters the paper profile pins; overriding them to a different
/// value is a configuration error rather than a silent drift.
const PAPER_LOCKED: [(&str, f64); 6] = [
    ("d", 768.0),
    ("layers", 6.0),
    ("lr", 1e-5),
    ("batch_size", 8.0),
    ("steps", 100_000.0),
    ("beam", 4.0),
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for config key {key:?}")))
}

fn parse_profile(value: &str) -> Result<Profile> {
    match value.to_ascii_lowercase().as_str() {
        "desk" => Ok(Profile::Desk),
        "paper" => Ok(Profile::Paper),
        other => Err(Error::Config(format!(
            "unknown profile {other:?} (expected desk or paper)"
        ))),
    }
}

/// Reads `key = value` lines; `#` starts a comment, blank lines are skipped.
fn parse_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::parse(
                path,
                format!("line {}: expected key=value, got {raw:?}", lineno + 1),
            ));
        };
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Builds a run configuration from an optional config file plus override
/// pairs (command-line flags, applied last).
pub fn build_run_config(
    config_file: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<RunConfig> {
    let mut pairs: Vec<(String, String)> = match config_file {
        Some(path) => parse_config_file(path)?,
        None => Vec::new(),
    };
    pairs.extend(overrides.iter().cloned());

    let profile = pairs
        .iter()
        .rev()
        .find(|(k, _)| k == "profile")
        .map(|(_, v)| parse_profile(v))
        .transpose()?
        .unwrap_or(Profile::Desk);
    let mut cfg = RunConfig::with_profile(profile);

    for (key, value) in &pairs {
        if profile == Profile::Paper {
            if let Some((_, locked)) = PAPER_LOCKED.iter().find(|(k, _)| k == key) {
                let given: f64 = parse_value(key, value)?;
                if given != *locked {
                    return Err(Error::Config(format!(
                        "profile \"paper\" fixes {key}={locked}; cannot override with {given}"
                    )));
                }
            }
        }
        match key.as_str() {
            "profile" => {}
            "mode" => {
                let k = cfg.model.conditioning.k;
                cfg.model.conditioning = ConditioningConfig::parse_mode(value, k)?;
                cfg.mode_explicit = true;
            }
            "k" => cfg.model.conditioning.k = parse_value(key, value)?,
            "d" => cfg.model.d = parse_value(key, value)?,
            "layers" => cfg.model.layers = parse_value(key, value)?,
            "heads" => cfg.model.heads = parse_value(key, value)?,
            "d_ff" => cfg.model.d_ff = parse_value(key, value)?,
            "max_positions" => cfg.model.max_positions = parse_value(key, value)?,
            "dropout" => cfg.model.dropout = parse_value(key, value)?,
            "lr" => cfg.train.lr = parse_value(key, value)?,
            "warmup" => cfg.train.warmup = parse_value(key, value)?,
            "steps" => cfg.train.steps = parse_value(key, value)?,
            "batch_size" => cfg.train.batch_size = parse_value(key, value)?,
            "seed" => cfg.train.seed = parse_value(key, value)?,
            "clip_norm" => {
                cfg.train.clip_norm = match value.to_ascii_lowercase().as_str() {
                    "none" | "off" => None,
                    _ => Some(parse_value(key, value)?),
                }
            }
            "val_every" => cfg.train.val_every = parse_value(key, value)?,
            "checkpoint_every" => cfg.train.checkpoint_every = parse_value(key, value)?,
            "ap_sep" => cfg.train.ap_sep = parse_value(key, value)?,
            "beam" => cfg.beam = parse_value(key, value)?,
            "max_len" => cfg.max_len = parse_value(key, value)?,
            "alpha" => cfg.alpha = parse_value(key, value)?,
            "oracle" => cfg.oracle = value.clone(),
            "vocab_size" => cfg.vocab_size = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
    }
    cfg.model.conditioning.validate()?;
    if cfg.beam == 0 {
        return Err(Error::Config("beam must be >= 1".into()));
    }
    Ok(cfg)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_examples_jsonl(path: &Path, examples: &[TokenizedExample]) -> Result<()> {
    let mut out = String::new();
    for ex in examples {
        out.push_str(
            &serde_json::to_string(ex)
                .map_err(|e| Error::Data(format!("cannot serialize example {}: {e}", ex.id)))?,
        );
        out.push('\n');
    }
    write_file(path, &out)
}

pub fn read_examples_jsonl(path: &Path) -> Result<Vec<TokenizedExample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: TokenizedExample = serde_json::from_str(line)
            .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 1)))?;
        out.push(ex);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareOutcome {
    pub vocab_size: usize,
    /// Example counts for train/dev/test.
    pub split_counts: [usize; 3],
    pub offset_mismatches: usize,
}

/// Tokenizes a corpus into per-split archives plus a vocabulary file.
/// `raw` is a SQuAD-format JSON file; `None` uses the built-in synthetic
/// corpus (written alongside as `raw.json` for reference). `splits` are
/// optional id-list files; without them every split holds the full corpus.
pub fn cmd_prepare_data(
    raw: Option<&Path>,
    splits: Option<[&Path; 3]>,
    out_dir: &Path,
    vocab_size: usize,
) -> Result<PrepareOutcome> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (examples, offset_mismatches) = match raw {
        Some(path) => {
            let load = load_squad(path)?;
            (load.examples, load.offset_mismatches)
        }
        None => {
            let corpus = synthetic_corpus();
            let json = serde_json::to_string_pretty(&to_squad_json(&corpus))
                .map_err(|e| Error::Data(format!("cannot serialize synthetic corpus: {e}")))?;
            write_file(&out_dir.join("raw.json"), &json)?;
            (corpus, 0)
        }
    };

    let split_sets: [Vec<RawExample>; 3] = match splits {
        Some(paths) => {
            let mut sets = Vec::new();
            for path in paths {
                let ids = load_split_ids(path)?;
                sets.push(select_split(&examples, &ids));
            }
            sets.try_into().expect("three split files")
        }
        None => [examples.clone(), examples.clone(), examples],
    };
    if split_sets[0].is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }

    let train_texts: Vec<&str> = split_sets[0]
        .iter()
        .flat_map(|ex| [ex.passage.as_str(), ex.question.as_str()])
        .collect();
    let vocab = Vocabulary::build(train_texts, vocab_size)?;
    vocab.save(&out_dir.join(VOCAB_FILE))?;

    let mut counts = [0usize; 3];
    for (set, name) in split_sets.iter().zip(SPLIT_NAMES) {
        let tokenized: Vec<TokenizedExample> =
            set.iter().map(|ex| TokenizedExample::from_raw(ex, &vocab)).collect();
        write_examples_jsonl(&out_dir.join(format!("{name}.jsonl")), &tokenized)?;
        counts[SPLIT_NAMES.iter().position(|n| *n == name).unwrap()] = tokenized.len();
    }

    println!("vocab: {} tokens -> {}", vocab.size(), out_dir.join(VOCAB_FILE).display());
    for (name, count) in SPLIT_NAMES.iter().zip(counts) {
        println!("split {name}: {count} examples");
    }
    if offset_mismatches > 0 {
        println!("dropped {offset_mismatches} records with unresolvable answer offsets");
    }
    Ok(PrepareOutcome { vocab_size: vocab.size(), split_counts: counts, offset_mismatches })
}

/// Trains on prepared data, writing `checkpoint.bin` and `loss.csv` into
/// `out_dir`. With `resume` set and a checkpoint present, continues from it.
/// Returns the final training loss.
pub fn cmd_train(run: &RunConfig, data_dir: &Path, out_dir: &Path, resume: bool) -> Result<f64> {
    let vocab = Vocabulary::load(&data_dir.join(VOCAB_FILE))?;
    let train_set = read_examples_jsonl(&data_dir.join("train.jsonl"))?;
    let dev_set = read_examples_jsonl(&data_dir.join("dev.jsonl"))?;

    let mut cfg = run.model.clone();
    cfg.vocab = vocab.size();
    cfg.validate()?;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let checkpoint_path = out_dir.join(CHECKPOINT_FILE);
    let state: Option<TrainState<f32>> = if resume && checkpoint_path.exists() {
        let state = load_checkpoint(&checkpoint_path, Some(&cfg))?;
        println!("resuming from {} at step {}", checkpoint_path.display(), state.step);
        Some(state)
    } else {
        None
    };

    println!(
        "mode {}: training {} steps on {} examples (d={}, layers={}, heads={})",
        cfg.conditioning.mode_label(),
        run.train.steps,
        train_set.len(),
        cfg.d,
        cfg.layers,
        cfg.heads,
    );
    let outcome = train::<f32>(&cfg, &run.train, &train_set, &dev_set, &vocab, Some(out_dir), state)?;
    let final_loss = outcome.final_loss.unwrap_or(f64::NAN);
    println!("final loss: {final_loss:.4}");
    if let Some(path) = &outcome.checkpoint {
        println!("checkpoint: {}", path.display());
    }
    Ok(final_loss)
}

/// One generated question, serialized as a JSON line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub question: String,
    pub score: f64,
    pub mode: String,
}

/// Generates questions for every example of a prepared split with a trained
/// checkpoint, writing JSONL predictions to `out`. Returns the line count.
pub fn cmd_generate(
    run: &RunConfig,
    data_dir: &Path,
    split: &str,
    checkpoint: &Path,
    out: &Path,
) -> Result<usize> {
    let vocab = Vocabulary::load(&data_dir.join(VOCAB_FILE))?;
    let examples = read_examples_jsonl(&data_dir.join(format!("{split}.jsonl")))?;
    let state: TrainState<f32> = load_checkpoint(checkpoint, None)?;
    let cfg = state.config;

    let trained = cfg.conditioning.mode_label();
    if run.mode_explicit {
        let requested = run.model.conditioning.mode_label();
        if requested != trained {
            return Err(Error::Config(format!(
                "checkpoint was trained with mode {trained}, but mode {requested} was requested"
            )));
        }
    }
    if cfg.vocab != vocab.size() {
        return Err(Error::Config(format!(
            "checkpoint vocabulary size {} does not match prepared vocabulary {}",
            cfg.vocab,
            vocab.size()
        )));
    }

    let mut lines = String::new();
    for ex in &examples {
        let gen = crate::decoding::generate_for_example(
            ex,
            &state.weights,
            &cfg,
            &vocab,
            run.beam,
            run.max_len,
            run.alpha,
            run.train.ap_sep,
        )?;
        let pred = Prediction {
            id: ex.id.clone(),
            question: vocab.detokenize(&gen.ids),
            score: gen.score,
            mode: trained.clone(),
        };
        lines.push_str(
            &serde_json::to_string(&pred)
                .map_err(|e| Error::Data(format!("cannot serialize prediction: {e}")))?,
        );
        lines.push('\n');
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_file(out, &lines)?;
    println!("wrote {} predictions (mode {trained}, beam {}) to {}", examples.len(), run.beam, out.display());
    Ok(examples.len())
}

/// Reads a predictions file into an id → question map plus its (single) mode.
pub fn read_predictions(path: &Path) -> Result<(HashMap<String, String>, String)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = HashMap::new();
    let mut mode: Option<String> = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pred: Prediction = serde_json::from_str(line)
            .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 1)))?;
        match &mode {
            None => mode = Some(pred.mode.clone()),
            Some(m) if *m != pred.mode => {
                return Err(Error::Data(format!(
                    "predictions file {} mixes modes {m} and {}",
                    path.display(),
                    pred.mode
                )))
            }
            Some(_) => {}
        }
        if map.insert(pred.id.clone(), pred.question).is_some() {
            return Err(Error::Data(format!(
                "duplicate prediction id {:?} in {}",
                pred.id,
                path.display()
            )));
        }
    }
    let mode = mode.ok_or_else(|| Error::Data(format!("no predictions in {}", path.display())))?;
    Ok((map, mode))
}

/// Scores prediction files against a prepared split, one report row each.
/// Writes a JSON report (object for one row, array otherwise) and a plain
/// text table, and prints the table.
pub fn cmd_evaluate(
    run: &RunConfig,
    data_dir: &Path,
    split: &str,
    predictions: &[PathBuf],
    out_json: &Path,
    out_table: &Path,
) -> Result<Vec<EvalReport>> {
    if predictions.is_empty() {
        return Err(Error::Config("at least one predictions file is required".into()));
    }
    let dataset = read_examples_jsonl(&data_dir.join(format!("{split}.jsonl")))?;
    let oracle = oracle_by_name(&run.oracle, &dataset)?;
    let mut rows = Vec::new();
    for path in predictions {
        let (map, mode) = read_predictions(path)?;
        rows.push(evaluate(&dataset, &map, oracle.as_ref(), &mode)?);
    }
    let json = if rows.len() == 1 {
        rows[0].to_json()?
    } else {
        serde_json::to_string_pretty(&rows)
            .map_err(|e| Error::Data(format!("cannot serialize reports: {e}")))?
    };
    write_file(out_json, &json)?;
    let table = render_table(&rows);
    write_file(out_table, &table)?;
    print!("{table}");
    Ok(rows)
}

/// Runs the finite-difference suites over tensor ops and model blocks,
/// printing one line per check. `inject_fault` adds a deliberately broken
/// backward rule that must fail, exercising the failure path. Returns true
/// when every (non-injected) check passed and false otherwise.
pub fn cmd_grad_check(inject_fault: bool) -> bool {
    let mut reports: Vec<GradCheckReport> = op_suite();
    reports.extend(model_suite());
    if inject_fault {
        reports.push(sign_flip_fixture_report());
    }
    let mut all_passed = true;
    for r in &reports {
        println!(
            "{:44} max rel err {:>9.3e}  tol {:.0e}  {}",
            r.op,
            r.max_rel_error,
            r.tolerance,
            if r.passed { "pass" } else { "FAIL" }
        );
        all_passed &= r.passed;
    }
    println!(
        "{} checks, {} failed",
        reports.len(),
        reports.iter().filter(|r| !r.passed).count()
    );
    all_passed
}
