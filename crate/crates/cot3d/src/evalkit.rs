//! Dual-layer evaluation: deterministic lexical rubric for OBJ/FUNC/INTER
//! (intermediate reasoning) and TRU/COMP (conclusion), aggregation to
//! "mean ± std" rows, and an optional remote-judge client.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::cotformat::{parse_tagged, CoTAnnotation};
use crate::encoders::vocab::tokenize_words;
use crate::error::{CotError, Result};
use crate::net::post_json_retry;

/// Fixed stop-word list; everything else is a content word.
pub const STOP_WORDS: &[&str] = &[
    "a", "an", "the", "is", "are", "was", "were", "be", "been", "being", "it", "its", "this",
    "that", "these", "those", "and", "or", "of", "to", "in", "on", "with", "for", "from", "by",
    "at", "as", "so", "can", "has", "have", "had",
];

fn content_words(text: &str) -> Vec<String> {
    tokenize_words(text)
        .into_iter()
        .filter(|w| !STOP_WORDS.contains(&w.as_str()))
        .collect()
}

fn counts(words: &[String]) -> BTreeMap<&str, usize> {
    let mut map = BTreeMap::new();
    for w in words {
        *map.entry(w.as_str()).or_insert(0) += 1;
    }
    map
}

/// Multiset-overlap F1 over content words; both empty -> 1.0, one empty -> 0.0.
pub fn lexical_f1(candidate: &str, reference: &str) -> f64 {
    let c = content_words(candidate);
    let r = content_words(reference);
    match (c.is_empty(), r.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let cc = counts(&c);
    let rc = counts(&r);
    let overlap: usize = cc
        .iter()
        .map(|(w, n)| n.min(rc.get(w).unwrap_or(&0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / c.len() as f64;
    let recall = overlap as f64 / r.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Fraction of `needle` content words (as a multiset) present in `haystack`.
/// Empty needle against anything scores 0.0.
fn multiset_recall(needle: &str, haystack: &str) -> f64 {
    let n = content_words(needle);
    if n.is_empty() {
        return 0.0;
    }
    let h = content_words(haystack);
    let nc = counts(&n);
    let hc = counts(&h);
    let hit: usize = nc
        .iter()
        .map(|(w, k)| k.min(hc.get(w).unwrap_or(&0)))
        .sum();
    hit as f64 / n.len() as f64
}

/// One model output for one test shape, segmented for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedOutput {
    pub text: String,
    /// Present iff the text parsed as tagged.
    pub parsed: Option<CoTAnnotation>,
    pub reasoning: String,
    pub conclusion: String,
    pub has_reasoning: bool,
}

impl GeneratedOutput {
    /// Segment raw text: tagged parse first, then unmarked (reasoning up
    /// to the last newline), else conclusion-only.
    pub fn from_text(text: &str) -> Self {
        if let Ok(ann) = parse_tagged(text) {
            let reasoning = format!(
                "{} {} {}",
                ann.object_recognition, ann.functional_inference, ann.causal_reasoning
            );
            let conclusion = ann.conclusion.clone();
            return Self {
                text: text.to_string(),
                parsed: Some(ann),
                reasoning,
                conclusion,
                has_reasoning: true,
            };
        }
        if let Some(at) = text.rfind('\n') {
            let (reasoning, conclusion) = text.split_at(at);
            let reasoning = reasoning.trim().to_string();
            let has_reasoning = !reasoning.is_empty();
            return Self {
                text: text.to_string(),
                parsed: None,
                conclusion: conclusion[1..].trim().to_string(),
                reasoning,
                has_reasoning,
            };
        }
        Self {
            text: text.to_string(),
            parsed: None,
            reasoning: String::new(),
            conclusion: text.trim().to_string(),
            has_reasoning: false,
        }
    }
}

/// Per-sample scores; None marks not-applicable (the Table 2 dash).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalScores {
    pub obj: Option<f64>,
    pub func: Option<f64>,
    pub inter: Option<f64>,
    pub tru: f64,
    pub comp: f64,
}

fn clamp_score(raw: f64) -> f64 {
    raw.clamp(1.0, 5.0)
}

/// Deterministic rubric. Stage scores are recall of the gold stage's
/// content words in the output's full reasoning; TRU is conclusion F1
/// against gold; COMP is conclusion-in-reasoning recall, falling back to
/// conclusion F1 when there is no reasoning.
pub fn score_sample(out: &GeneratedOutput, gold: &CoTAnnotation) -> EvalScores {
    let stage = |gold_stage: &str| -> Option<f64> {
        if out.has_reasoning {
            Some(clamp_score(1.0 + 4.0 * multiset_recall(gold_stage, &out.reasoning)))
        } else {
            None
        }
    };
    let obj = stage(&gold.object_recognition);
    let func = stage(&gold.functional_inference);
    let inter = stage(&gold.causal_reasoning);
    let tru = clamp_score(1.0 + 4.0 * lexical_f1(&out.conclusion, &gold.conclusion));
    let comp = if out.has_reasoning {
        clamp_score(1.0 + 4.0 * multiset_recall(&out.conclusion, &out.reasoning))
    } else {
        clamp_score(1.0 + 4.0 * lexical_f1(&out.conclusion, &gold.conclusion))
    };
    EvalScores {
        obj,
        func,
        inter,
        tru,
        comp,
    }
}

/// One metric cell of an aggregate row: mean/std over applicable samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub count: usize,
}

impl MetricCell {
    fn from_values(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: None,
                std: None,
                count: 0,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean: Some(mean),
            std: Some(var.sqrt()),
            count: values.len(),
        }
    }

    /// "m.mm ± s.ss", or an em dash when no sample was applicable.
    pub fn formatted(&self) -> String {
        match (self.mean, self.std) {
            (Some(m), Some(s)) => format!("{m:.2} ± {s:.2}"),
            _ => "—".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub preset: String,
    pub condition: String,
    pub n: usize,
    pub obj: MetricCell,
    pub func: MetricCell,
    pub inter: MetricCell,
    pub tru: MetricCell,
    pub comp: MetricCell,
}

/// Population mean/std per metric, excluding not-applicable entries.
pub fn aggregate(scores: &[EvalScores], preset: &str, condition: &str) -> Result<AggregateRow> {
    if scores.is_empty() {
        return Err(CotError::Data("cannot aggregate an empty score list".into()));
    }
    let pick = |f: &dyn Fn(&EvalScores) -> Option<f64>| -> Vec<f64> {
        scores.iter().filter_map(f).collect()
    };
    Ok(AggregateRow {
        preset: preset.to_string(),
        condition: condition.to_string(),
        n: scores.len(),
        obj: MetricCell::from_values(&pick(&|s| s.obj)),
        func: MetricCell::from_values(&pick(&|s| s.func)),
        inter: MetricCell::from_values(&pick(&|s| s.inter)),
        tru: MetricCell::from_values(&pick(&|s| Some(s.tru))),
        comp: MetricCell::from_values(&pick(&|s| Some(s.comp))),
    })
}

/// UTF-8 markdown table in the reported-table layout.
pub fn markdown_table(rows: &[AggregateRow]) -> String {
    let mut out = String::from(
        "| Preset | Condition | N | OBJ | FUNC | INTER | TRU | COMP |\n\
         |---|---|---|---|---|---|---|---|\n",
    );
    for row in rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} |\n",
            row.preset,
            row.condition,
            row.n,
            row.obj.formatted(),
            row.func.formatted(),
            row.inter.formatted(),
            row.tru.formatted(),
            row.comp.formatted(),
        ));
    }
    out
}

/// Machine-readable companion: one AggregateRow JSON object per line.
pub fn jsonl_rows(rows: &[AggregateRow]) -> Result<String> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row)?);
        out.push('\n');
    }
    Ok(out)
}

/// Desk-scale surrogate for generation: embed the shape and every pool
/// text with the checkpointed model and return the nearest text (ties by
/// lowest index) as a scoreable output.
pub fn retrieve_as_generation(
    ckpt: &crate::trainer::Checkpoint,
    shape: &crate::geometry::PointCloud,
    pool: &[String],
) -> Result<GeneratedOutput> {
    use crate::tensorkit::Tensor;
    if pool.is_empty() {
        return Err(CotError::Data("empty retrieval candidate pool".into()));
    }
    let (params, model) =
        crate::trainer::AlignModel::attach(&ckpt.config.model, &ckpt.params, ckpt.vocab.size())?;
    let z3d = model.encode_cloud(&params, shape)?;
    let mut rows = Vec::with_capacity(pool.len());
    for text in pool {
        let z = model.encode_text(&params, &ckpt.vocab, text)?;
        rows.push(z.data().to_vec());
    }
    let ztext = Tensor::from_rows(&rows)?;
    let best = crate::alignment::retrieve_best(&z3d, &ztext)?;
    Ok(GeneratedOutput::from_text(&pool[best]))
}

#[derive(Debug, Clone)]
pub struct JudgeClient {
    pub endpoint: String,
    pub timeout: Duration,
}

impl JudgeClient {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(10),
        }
    }
}

fn judge_field(value: &serde_json::Value, name: &str, required: bool) -> Result<Option<f64>> {
    let field = value
        .get(name)
        .ok_or_else(|| CotError::Validation(format!("judge response missing field `{name}`")))?;
    if field.is_null() {
        if required {
            return Err(CotError::Validation(format!(
                "judge response field `{name}` may not be null"
            )));
        }
        return Ok(None);
    }
    let score = field.as_f64().ok_or_else(|| {
        CotError::Validation(format!("judge response field `{name}` is not numeric"))
    })?;
    if !(1.0..=5.0).contains(&score) {
        return Err(CotError::Validation(format!(
            "judge response field `{name}` = {score} outside [1, 5]"
        )));
    }
    Ok(Some(score))
}

/// POST /judge with the output, gold, and rubric id; validate the five
/// score fields (each in [1,5], OBJ/FUNC/INTER nullable).
pub fn judge_remote(
    client: &JudgeClient,
    out: &GeneratedOutput,
    gold: &CoTAnnotation,
    rubric_id: &str,
) -> Result<EvalScores> {
    let url = format!("{}/judge", client.endpoint.trim_end_matches('/'));
    let body = serde_json::json!({
        "output": out.text,
        "gold": gold,
        "rubric_id": rubric_id,
    });
    let (value, _attempts) = post_json_retry(&url, &body, client.timeout)?;
    Ok(EvalScores {
        obj: judge_field(&value, "obj", false)?,
        func: judge_field(&value, "func", false)?,
        inter: judge_field(&value, "inter", false)?,
        tru: judge_field(&value, "tru", true)?.expect("required field"),
        comp: judge_field(&value, "comp", true)?.expect("required field"),
    })
}
