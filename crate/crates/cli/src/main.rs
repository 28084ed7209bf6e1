use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use fcog::eval::{self, Aligned};
use fcog::fcs::UpdateOutcome;
use fcog::io::{self, AnnotationRecord, SequenceInput, StreamRecord};
use fcog::rules::{self, Diagnostic, DiagnosticKind};
use fcog::synth::{self, SynthConfig};
use fcog::{Error, FrameRecord, Pipeline, PipelineConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(name = "fcog", version, about = "Fuzzy cognitive re-scoring and repair of action-detection streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every frame and repair low-cognition frames.
    Run(RunArgs),
    /// Generate a synthetic corrupted detection corpus.
    Synth(SynthArgs),
    /// Compare a stream before and after updating against ground truth.
    Eval(EvalArgs),
    /// Inspect, validate and generate rule files.
    #[command(subcommand)]
    Rules(RulesCommand),
}

#[derive(Args)]
struct RunArgs {
    /// Detection stream, one JSON record per line.
    #[arg(long)]
    input: PathBuf,
    /// Pipeline configuration (TOML, flat key = value).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for cognition.jsonl, outcomes.jsonl, output.jsonl and meta.json.
    #[arg(long)]
    output: PathBuf,
    /// Override a configuration value, e.g. `--set tau=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct SynthArgs {
    /// Generator configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for stream.jsonl, truth.jsonl, annotations.jsonl and world.json.
    #[arg(long)]
    output: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    before: PathBuf,
    #[arg(long)]
    after: PathBuf,
    /// Ground-truth labels; defaults to the `truth_label` fields of `--before`.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Update outcomes of the run that produced `--after`, needed for a sweep.
    #[arg(long)]
    outcomes: Option<PathBuf>,
    /// Comma-separated update margins to replay.
    #[arg(long, value_delimiter = ',')]
    taus: Vec<f64>,
    /// Also write the report as JSON to this path.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Subcommand)]
enum RulesCommand {
    /// Parse a rule file and report diagnostics.
    Validate {
        file: PathBuf,
        /// Also require full coverage of all 125 antecedent triples.
        #[arg(long)]
        strict: bool,
    },
    /// Print a complete rule base built from weighted antecedent peaks.
    Generate {
        #[arg(long, default_value_t = rules::DEFAULT_MU1)]
        mu1: f64,
        #[arg(long, default_value_t = rules::DEFAULT_MU2)]
        mu2: f64,
        /// Rules replacing generated ones with the same antecedents.
        #[arg(long)]
        overrides: Option<PathBuf>,
        /// Do not apply the bundled example rules.
        #[arg(long)]
        plain: bool,
    },
    /// Print a rule file in canonical form.
    Show { file: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Rules(cmd) => cmd_rules(cmd),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Contract(_) | Error::NoActiveRules) => EXIT_INTERNAL,
        Some(Error::AtFrame { source, .. }) if matches!(**source, Error::Contract(_)) => {
            EXIT_INTERNAL
        }
        _ => EXIT_DATA,
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn tagged<T: serde::Serialize>(sequence_id: &str, item: &T) -> Result<Value> {
    let mut value = serde_json::to_value(item)?;
    let map = value
        .as_object_mut()
        .ok_or_else(|| anyhow!("record is not a JSON object"))?;
    map.insert("sequence_id".into(), Value::String(sequence_id.to_string()));
    Ok(value)
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let (text, base) = match &args.config {
        Some(path) => (
            read_text(path)?,
            path.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (String::new(), PathBuf::from(".")),
    };
    let cfg = PipelineConfig::from_toml_with(&text, &args.overrides)?;
    let pipeline = Pipeline::load(cfg, &base)?;
    let inputs = io::read_stream(&args.input)?;
    if inputs.is_empty() {
        bail!(Error::InvalidInput(format!(
            "no sequences in {}",
            args.input.display()
        )));
    }
    let out = pipeline.run(&inputs)?;

    fs::create_dir_all(&args.output)
        .with_context(|| format!("creating {}", args.output.display()))?;
    let mut cognition = Vec::new();
    let mut outcomes = Vec::new();
    let mut output = Vec::new();
    for (seq, input) in out.sequences.iter().zip(&inputs) {
        for r in &seq.cognition {
            cognition.push(tagged(&seq.id, r)?);
        }
        for o in &seq.outcomes {
            outcomes.push(tagged(&seq.id, o)?);
        }
        for (k, frame) in seq.output.iter().enumerate() {
            output.push(StreamRecord {
                sequence_id: seq.id.clone(),
                frame: frame.clone(),
                truth_label: input.truth.as_ref().map(|t| t[k].clone()),
                corruption: None,
            });
        }
    }
    io::write_jsonl(&args.output.join("cognition.jsonl"), &cognition)?;
    io::write_jsonl(&args.output.join("outcomes.jsonl"), &outcomes)?;
    io::write_jsonl(&args.output.join("output.jsonl"), &output)?;
    fs::write(
        args.output.join("meta.json"),
        serde_json::to_string_pretty(&out.meta)? + "\n",
    )?;
    for seq in &out.sequences {
        for (index, message) in &seq.errors {
            eprintln!("warning: {} frame {index}: {message}", seq.id);
        }
    }
    println!(
        "{} sequences, {} frames, {} low-cognition, {} updated",
        out.meta.sequences, out.meta.frames, out.meta.low_cognition, out.meta.accepted
    );
    Ok(ExitCode::SUCCESS)
}

fn synth_config(path: Option<&Path>, overrides: &[String]) -> Result<SynthConfig> {
    let text = match path {
        Some(p) => read_text(p)?,
        None => String::new(),
    };
    let mut table: toml::Table = text
        .parse()
        .map_err(|e| Error::InvalidInput(format!("synth config: {e}")))?;
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("override `{item}` is not key=value")))?;
        let value = format!("v = {}", raw.trim())
            .parse::<toml::Table>()
            .map_err(|e| Error::InvalidInput(format!("override `{item}`: {e}")))?
            .remove("v")
            .expect("parsed key");
        table.insert(key.trim().to_string(), value);
    }
    let cfg: SynthConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::InvalidInput(format!("synth config: {e}")))?;
    Ok(cfg)
}

fn cmd_synth(args: SynthArgs) -> Result<ExitCode> {
    let cfg = synth_config(args.config.as_deref(), &args.overrides)?;
    let corpus = synth::generate(&cfg)?;
    fs::create_dir_all(&args.output)
        .with_context(|| format!("creating {}", args.output.display()))?;

    let mut stream = Vec::new();
    let mut truth = Vec::new();
    for seq in &corpus.sequences {
        for (k, frame) in seq.frames.iter().enumerate() {
            stream.push(StreamRecord {
                sequence_id: seq.id.clone(),
                frame: frame.clone(),
                truth_label: Some(seq.truth[k].clone()),
                corruption: Some(seq.corruption[k]),
            });
            truth.push(AnnotationRecord {
                sequence_id: seq.id.clone(),
                index: Some(frame.index),
                label: seq.truth[k].clone(),
            });
        }
    }
    let annotations: Vec<AnnotationRecord> = corpus
        .training
        .iter()
        .enumerate()
        .flat_map(|(s, labels)| {
            labels.iter().enumerate().map(move |(i, l)| AnnotationRecord {
                sequence_id: format!("train_{s:04}"),
                index: Some(i),
                label: l.clone(),
            })
        })
        .collect();
    io::write_jsonl(&args.output.join("stream.jsonl"), &stream)?;
    io::write_jsonl(&args.output.join("truth.jsonl"), &truth)?;
    io::write_jsonl(&args.output.join("annotations.jsonl"), &annotations)?;
    let world = serde_json::json!({
        "schema_version": io::SCHEMA_VERSION,
        "config": cfg,
        "labels": corpus.labels,
        "prototypes": corpus.prototypes,
        "transition": corpus.transition,
    });
    fs::write(
        args.output.join("world.json"),
        serde_json::to_string_pretty(&world)? + "\n",
    )?;
    println!(
        "{} sequences, {} frames, {} training sequences",
        corpus.sequences.len(),
        stream.len(),
        corpus.training.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn read_outcomes(path: &Path) -> Result<HashMap<String, Vec<UpdateOutcome>>> {
    let mut out: HashMap<String, Vec<UpdateOutcome>> = HashMap::new();
    for (i, line) in read_text(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line).map_err(|e| Error::Format {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let id = value
            .get("sequence_id")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Format {
                path: path.display().to_string(),
                line: i + 1,
                message: "missing sequence_id".into(),
            })?
            .to_string();
        let outcome: UpdateOutcome = serde_json::from_value(value).map_err(|e| Error::Format {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.entry(id).or_default().push(outcome);
    }
    Ok(out)
}

fn read_truth(path: &Path) -> Result<HashMap<String, Vec<String>>> {
    let text = read_text(path)?;
    let mut out: HashMap<String, Vec<String>> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: AnnotationRecord = serde_json::from_str(line).map_err(|e| Error::Format {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.entry(r.sequence_id).or_default().push(r.label);
    }
    Ok(out)
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode> {
    let before = io::read_stream(&args.before)?;
    let after: HashMap<String, SequenceInput> = io::read_stream(&args.after)?
        .into_iter()
        .map(|s| (s.id.clone(), s))
        .collect();
    let truth_file = args.truth.as_deref().map(read_truth).transpose()?;
    let outcomes = args.outcomes.as_deref().map(read_outcomes).transpose()?;
    if !args.taus.is_empty() && outcomes.is_none() {
        bail!(Error::InvalidInput("--taus needs --outcomes".into()));
    }

    let mut rows: Vec<(&[FrameRecord], &[FrameRecord], Vec<String>, &[UpdateOutcome])> =
        Vec::new();
    for seq in &before {
        let a = after
            .get(&seq.id)
            .ok_or_else(|| Error::InvalidInput(format!("sequence `{}` missing from --after", seq.id)))?;
        let truth = match (&truth_file, &seq.truth) {
            (Some(t), _) => t.get(&seq.id).cloned().ok_or_else(|| {
                Error::InvalidInput(format!("sequence `{}` missing from --truth", seq.id))
            })?,
            (None, Some(t)) => t.clone(),
            (None, None) => bail!(Error::InvalidInput(format!(
                "sequence `{}` has no truth_label; pass --truth",
                seq.id
            ))),
        };
        let seq_outcomes = outcomes
            .as_ref()
            .and_then(|o| o.get(&seq.id))
            .map_or(&[][..], Vec::as_slice);
        rows.push((&seq.frames, &a.frames, truth, seq_outcomes));
    }
    if after.len() != before.len() {
        bail!(Error::InvalidInput(format!(
            "--before has {} sequences, --after has {}",
            before.len(),
            after.len()
        )));
    }
    let items: Vec<Aligned> = rows
        .iter()
        .map(|(b, a, t, o)| Aligned {
            before: b,
            after: a,
            truth: t,
            outcomes: o,
        })
        .collect();
    let report = eval::compare(&items, &args.taus)?;
    if let Some(path) = &args.json {
        fs::write(path, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    print!("{}", eval::render_table(&report));
    Ok(ExitCode::SUCCESS)
}

fn print_diagnostics(diags: &[Diagnostic]) {
    for d in diags {
        println!("{d}");
    }
}

fn cmd_rules(cmd: RulesCommand) -> Result<ExitCode> {
    match cmd {
        RulesCommand::Validate { file, strict } => {
            let text = read_text(&file)?;
            let diags = match rules::parse_rulebase(&text) {
                Ok(rb) => {
                    let diags = rules::validate(&rb, strict);
                    println!("{} rules", rb.len());
                    diags
                }
                Err(diags) => diags,
            };
            print_diagnostics(&diags);
            let count = |kind: DiagnosticKind| diags.iter().filter(|d| d.kind == kind).count();
            println!(
                "{} syntax, {} unknown-label, {} duplicate-antecedent-triple, {} coverage-gap",
                count(DiagnosticKind::Syntax),
                count(DiagnosticKind::UnknownLabel),
                count(DiagnosticKind::DuplicateAntecedentTriple),
                count(DiagnosticKind::CoverageGap),
            );
            Ok(if diags.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_DATA)
            })
        }
        RulesCommand::Generate {
            mu1,
            mu2,
            overrides,
            plain,
        } => {
            let mut extra = if plain {
                Vec::new()
            } else {
                rules::example_overrides()
            };
            if let Some(path) = overrides {
                let rb = rules::parse_str(&read_text(&path)?)?;
                extra.extend(rb.iter().cloned());
            }
            let rb = rules::generate_default_rulebase(mu1, mu2, &extra)?;
            print!("{}", rules::serialize(&rb));
            Ok(ExitCode::SUCCESS)
        }
        RulesCommand::Show { file } => {
            let rb = rules::parse_str(&read_text(&file)?)?;
            print!("{}", rules::serialize(&rb));
            Ok(ExitCode::SUCCESS)
        }
    }
}
