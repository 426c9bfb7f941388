//! The `cot3d` command line: generation, conversion, validation, training,
//! evaluation, reporting, remote annotation, and the review manifest.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::cotformat::{self, render, AnnotationFormat};
use crate::dataset::{
    self, build_dataset_with_points, read_records, sample_review_manifest, split_dataset,
    write_records, AnnotatorClient, AnnotatorRequest, DatasetRecord, FormatMix, PartInfo, Split,
};
use crate::error::{CotError, Result};
use crate::evalkit::{self, aggregate, jsonl_rows, markdown_table, score_sample, AggregateRow};
use crate::trainer::{
    load_checkpoint, save_checkpoint, train_stage1, train_stage2, ModelPreset, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "cot3d",
    about = "Desk-scale 3D point-cloud / text alignment with chain-of-thought annotations",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark (both subsets, with splits)
    Gen(GenArgs),
    /// Re-render record texts in another annotation format
    Convert(ConvertArgs),
    /// Validate records: structure, format grammar, text regeneration
    Validate(ValidateArgs),
    /// Train stage 1 or stage 2
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test set with the dual-layer rubric
    Eval(EvalArgs),
    /// Rebuild a markdown table from an aggregate JSONL
    Report(ReportArgs),
    /// Build records through a remote annotator instead of templates
    Annotate(AnnotateArgs),
    /// Emit the expert-review manifest (fraction of record ids)
    ReviewManifest(ReviewArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Records per subset
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory (one JSONL per subset)
    #[arg(long)]
    out: PathBuf,
    /// Format mix as tagged,unmarked,none weights
    #[arg(long, default_value = "0.34,0.33,0.33")]
    mix: String,
    /// Surface samples per shape
    #[arg(long, default_value_t = dataset::DEFAULT_POINTS)]
    points: usize,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Target format: tagged|unmarked|none
    #[arg(long)]
    to: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long = "in")]
    input: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    stage: u8,
    /// Training records (JSONL with splits)
    #[arg(long = "in")]
    input: PathBuf,
    /// Where to write the checkpoint
    #[arg(long)]
    out: PathBuf,
    /// Stage-2 input checkpoint
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// key=value config file; flags below override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// no_cot|unmarked|tagged
    #[arg(long)]
    condition: Option<String>,
    /// lrm_like|llm_like
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Test records (JSONL); rows with split=test are used, or all rows
    /// if none are marked
    #[arg(long)]
    test: PathBuf,
    /// Markdown report path (a .jsonl companion is written next to it)
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// AggregateRow JSONL
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnnotateArgs {
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Annotator endpoint; defaults to $COT3D_ANNOTATOR_URL
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Requested rendering: tagged|unmarked|none
    #[arg(long, default_value = "tagged")]
    to: String,
    #[arg(long, default_value_t = dataset::DEFAULT_POINTS)]
    points: usize,
}

#[derive(Args)]
struct ReviewArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 0.20)]
    fraction: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn parse_mix(spec: &str) -> Result<FormatMix> {
    let parts: Vec<f64> = spec
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CotError::Config(format!("invalid mix `{spec}`")))?;
    if parts.len() != 3 {
        return Err(CotError::Config(format!(
            "mix `{spec}` must have three weights"
        )));
    }
    FormatMix::new(parts[0], parts[1], parts[2])
}

fn parse_format(s: &str) -> Result<AnnotationFormat> {
    s.parse()
        .map_err(|_| CotError::Config(format!("unknown format `{s}`")))
}

fn run_gen(args: &GenArgs) -> Result<()> {
    eprintln!(
        "gen: n={} seed={} mix={} points={} out={}",
        args.n,
        args.seed,
        args.mix,
        args.points,
        args.out.display()
    );
    let mix = parse_mix(&args.mix)?;
    let mut records = build_dataset_with_points(args.n, mix, args.seed, args.points)?;
    split_dataset(&mut records, (0.8, 0.1, 0.1), args.seed)?;
    fs::create_dir_all(&args.out)?;
    for subset in [dataset::SubsetKind::Cap3dLike, dataset::SubsetKind::GapartnetLike] {
        let rows: Vec<DatasetRecord> = records
            .iter()
            .filter(|r| r.subset == subset)
            .cloned()
            .collect();
        let path = args.out.join(format!("{}.jsonl", subset.name()));
        write_records(&rows, &path)?;
        eprintln!("gen: wrote {} records to {}", rows.len(), path.display());
    }
    Ok(())
}

fn run_convert(args: &ConvertArgs) -> Result<()> {
    let to = parse_format(&args.to)?;
    eprintln!(
        "convert: in={} to={} out={}",
        args.input.display(),
        args.to,
        args.out.display()
    );
    let mut records = read_records(&args.input)?;
    for rec in &mut records {
        // tagged sources convert losslessly from the text itself; other
        // formats re-render from the structured gold
        rec.text = if rec.format == AnnotationFormat::Tagged && to != AnnotationFormat::Tagged {
            cotformat::convert(&rec.text, AnnotationFormat::Tagged, to)?
        } else {
            render(&rec.gold, to)?
        };
        rec.format = to;
    }
    write_records(&records, &args.out)?;
    Ok(())
}

fn run_validate(args: &ValidateArgs) -> Result<()> {
    eprintln!("validate: in={}", args.input.display());
    let records = read_records(&args.input)?;
    let mut problems = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for rec in &records {
        if !seen.insert(&rec.shape_id) {
            problems.push(format!("{}: duplicate shape_id", rec.shape_id));
        }
        let report = cotformat::validate(&rec.gold, rec.format);
        for v in &report.violations {
            problems.push(format!("{}: {} ({})", rec.shape_id, v.code, v.message));
        }
        if report.is_clean() {
            let expect = render(&rec.gold, rec.format)?;
            if expect != rec.text {
                problems.push(format!(
                    "{}: text does not regenerate from gold",
                    rec.shape_id
                ));
            }
        }
    }
    if problems.is_empty() {
        println!("{} records valid", records.len());
        Ok(())
    } else {
        for p in &problems {
            println!("{p}");
        }
        Err(CotError::Validation(format!(
            "{} violations in {} records",
            problems.len(),
            records.len()
        )))
    }
}

fn resolve_train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::from_text(&fs::read_to_string(path)?)?,
        None => match args.stage {
            1 => TrainConfig::stage1_defaults(),
            2 => {
                let preset = match args.preset.as_deref() {
                    Some(p) => p.parse()?,
                    None => ModelPreset::LrmLike,
                };
                TrainConfig::stage2_defaults(preset)
            }
            other => return Err(CotError::Config(format!("stage {other} must be 1 or 2"))),
        },
    };
    if cfg.stage != args.stage {
        return Err(CotError::Config(format!(
            "--stage {} conflicts with config stage {}",
            args.stage, cfg.stage
        )));
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(cond) = &args.condition {
        cfg.annotation_condition = cond.parse()?;
    }
    if let Some(preset) = &args.preset {
        let preset: ModelPreset = preset.parse()?;
        cfg.model_preset = preset;
        if cfg.stage == 2 {
            cfg.unfreeze_policy = preset.default_policy();
        }
    }
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    if let Some(batch) = args.batch_size {
        cfg.batch_size = batch;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let cfg = resolve_train_config(args)?;
    eprintln!("train: resolved config\n{}", cfg.to_text());
    let records = read_records(&args.input)?;
    let ckpt = match cfg.stage {
        1 => train_stage1(&cfg, &records)?,
        _ => {
            let prev_path = args.ckpt.as_ref().ok_or_else(|| {
                CotError::Config("stage 2 requires --ckpt with the stage-1 checkpoint".into())
            })?;
            let prev = load_checkpoint(prev_path)?;
            train_stage2(&cfg, &prev, &records)?
        }
    };
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    save_checkpoint(&ckpt, &args.out)?;
    eprintln!(
        "train: {} steps, loss log {:?}, checkpoint {}",
        ckpt.step,
        ckpt.loss_log,
        args.out.display()
    );
    Ok(())
}

fn eval_rows(ckpt_path: &Path, test_path: &Path) -> Result<AggregateRow> {
    let ckpt = load_checkpoint(ckpt_path)?;
    let records = read_records(test_path)?;
    let mut test: Vec<&DatasetRecord> = records.iter().filter(|r| r.split == Split::Test).collect();
    if test.is_empty() {
        test = records.iter().collect();
    }
    if test.is_empty() {
        return Err(CotError::Data("no test records".into()));
    }
    let pool: Vec<String> = test.iter().map(|r| r.text.clone()).collect();
    let mut scores = Vec::with_capacity(test.len());
    for rec in &test {
        let out = evalkit::retrieve_as_generation(&ckpt, &rec.cloud()?, &pool)?;
        scores.push(score_sample(&out, &rec.gold));
    }
    aggregate(
        &scores,
        ckpt.config.model_preset.as_str(),
        ckpt.config.annotation_condition.as_str(),
    )
}

fn run_eval(args: &EvalArgs) -> Result<()> {
    eprintln!(
        "eval: ckpt={} test={} report={}",
        args.ckpt.display(),
        args.test.display(),
        args.report.display()
    );
    let row = eval_rows(&args.ckpt, &args.test)?;
    let table = markdown_table(std::slice::from_ref(&row));
    write_atomic(&args.report, &table)?;
    let jsonl_path = args.report.with_extension("jsonl");
    write_atomic(&jsonl_path, &jsonl_rows(std::slice::from_ref(&row))?)?;
    print!("{table}");
    Ok(())
}

fn run_report(args: &ReportArgs) -> Result<()> {
    eprintln!("report: in={} out={}", args.input.display(), args.out.display());
    let text = fs::read_to_string(&args.input)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: AggregateRow = serde_json::from_str(line).map_err(|e| CotError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CotError::Data("no aggregate rows in input".into()));
    }
    let table = markdown_table(&rows);
    write_atomic(&args.out, &table)?;
    print!("{table}");
    Ok(())
}

fn run_annotate(args: &AnnotateArgs) -> Result<()> {
    let endpoint = args
        .endpoint
        .clone()
        .or_else(|| std::env::var("COT3D_ANNOTATOR_URL").ok())
        .ok_or_else(|| {
            CotError::Config("no endpoint: pass --endpoint or set COT3D_ANNOTATOR_URL".into())
        })?;
    let format = parse_format(&args.to)?;
    eprintln!(
        "annotate: n={} seed={} endpoint={} to={} out={}",
        args.n,
        args.seed,
        endpoint,
        args.to,
        args.out.display()
    );
    // template records provide the specs and clouds; the remote annotator
    // supplies the gold text in place of the templates
    let base = build_dataset_with_points(args.n.max(10), FormatMix::only(format), args.seed, args.points)?;
    let client = AnnotatorClient::new(endpoint);
    let mut records = Vec::with_capacity(args.n);
    for rec in base.into_iter().take(args.n) {
        let family = family_of(&rec)?;
        let req = AnnotatorRequest {
            shape_id: rec.shape_id.clone(),
            family,
            parts: parts_of(&rec.gold),
            format,
        };
        let resp = client.request_annotation(&req)?;
        let gold = resp.annotation;
        let text = render(&gold, format)?;
        records.push(DatasetRecord {
            text,
            gold,
            ..rec
        });
    }
    write_records(&records, &args.out)?;
    eprintln!("annotate: wrote {} records", records.len());
    Ok(())
}

/// Recover the family token from a gold stage-1 template sentence.
fn family_of(rec: &DatasetRecord) -> Result<dataset::ShapeFamily> {
    for family in dataset::ShapeFamily::ALL {
        if rec
            .gold
            .object_recognition
            .contains(&format!("a {} ", family.name()))
        {
            return Ok(family);
        }
    }
    Err(CotError::Data(format!(
        "record {}: cannot infer family from gold",
        rec.shape_id
    )))
}

/// Recover part labels and affordances from gold stage-2 sentences.
fn parts_of(gold: &cotformat::CoTAnnotation) -> Vec<PartInfo> {
    use dataset::Affordance::*;
    let mut parts: Vec<PartInfo> = Vec::new();
    for sentence in gold.functional_inference.split(". ") {
        let words: Vec<&str> = sentence.split_whitespace().collect();
        if words.len() < 3 || words[0] != "The" {
            continue;
        }
        let label = words[1].to_string();
        let aff = if sentence.contains("grasped") {
            Graspable
        } else if sentence.contains("opened") {
            Openable
        } else if sentence.contains("contain") {
            Containable
        } else {
            Supportive
        };
        match parts.iter_mut().find(|p| p.label == label) {
            Some(p) => {
                if !p.affordances.contains(&aff) {
                    p.affordances.push(aff);
                }
            }
            None => parts.push(PartInfo {
                label,
                affordances: vec![aff],
            }),
        }
    }
    parts
}

fn run_review(args: &ReviewArgs) -> Result<()> {
    eprintln!(
        "review-manifest: in={} fraction={} seed={} out={}",
        args.input.display(),
        args.fraction,
        args.seed,
        args.out.display()
    );
    let records = read_records(&args.input)?;
    let ids = sample_review_manifest(&records, args.fraction, args.seed)?;
    let mut body = ids.join("\n");
    if !body.is_empty() {
        body.push('\n');
    }
    write_atomic(&args.out, &body)?;
    eprintln!("review-manifest: {} of {} ids", ids.len(), records.len());
    Ok(())
}

/// Run the parsed CLI; errors map to exit code 1 in main.
pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(args) => run_gen(args),
        Command::Convert(args) => run_convert(args),
        Command::Validate(args) => run_validate(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Report(args) => run_report(args),
        Command::Annotate(args) => run_annotate(args),
        Command::ReviewManifest(args) => run_review(args),
    }
}
