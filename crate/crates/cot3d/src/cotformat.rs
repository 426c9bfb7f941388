//! The three annotation renderings (tagged, unmarked, conclusion-only),
//! with parser, converter and structural validator.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CotError, Result};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";

/// Structured three-stage reasoning plus conclusion for one shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoTAnnotation {
    pub object_recognition: String,
    pub functional_inference: String,
    pub causal_reasoning: String,
    pub conclusion: String,
}

impl CoTAnnotation {
    pub fn stages(&self) -> [&str; 3] {
        [
            &self.object_recognition,
            &self.functional_inference,
            &self.causal_reasoning,
        ]
    }
}

/// How an annotation is rendered to text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationFormat {
    Tagged,
    Unmarked,
    None,
}

impl fmt::Display for AnnotationFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnnotationFormat::Tagged => write!(f, "tagged"),
            AnnotationFormat::Unmarked => write!(f, "unmarked"),
            AnnotationFormat::None => write!(f, "none"),
        }
    }
}

impl std::str::FromStr for AnnotationFormat {
    type Err = CotError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tagged" => Ok(AnnotationFormat::Tagged),
            "unmarked" => Ok(AnnotationFormat::Unmarked),
            "none" | "no_cot" => Ok(AnnotationFormat::None),
            other => Err(CotError::Config(format!("unknown annotation format {other:?}"))),
        }
    }
}

/// A single structural violation found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: String,
    pub message: String,
}

/// Zero violations means the annotation is structurally valid for its format.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_code(&self, code: &str) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }
}

fn contains_marker(text: &str) -> bool {
    text.contains(THINK_OPEN) || text.contains(THINK_CLOSE)
}

/// Structural validation; violations are data, not errors.
pub fn validate(ann: &CoTAnnotation, fmt: AnnotationFormat) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut push = |code: &str, message: String| {
        report.violations.push(Violation {
            code: code.into(),
            message,
        });
    };
    if ann.conclusion.trim().is_empty() {
        push("MISSING_CONCLUSION", "conclusion is empty".into());
    }
    if fmt != AnnotationFormat::None {
        for (i, stage) in ann.stages().iter().enumerate() {
            if stage.trim().is_empty() {
                push(
                    &format!("MISSING_STAGE_{}", i + 1),
                    format!("stage {} is empty", i + 1),
                );
            }
        }
    }
    for field in [
        &ann.object_recognition,
        &ann.functional_inference,
        &ann.causal_reasoning,
        &ann.conclusion,
    ] {
        if contains_marker(field) {
            push("NESTED_MARKER", "field contains a think marker".into());
            break;
        }
    }
    report
}

/// Render an annotation in the requested format.
pub fn render(ann: &CoTAnnotation, fmt: AnnotationFormat) -> Result<String> {
    let report = validate(ann, fmt);
    if !report.is_clean() {
        let codes: Vec<&str> = report.violations.iter().map(|v| v.code.as_str()).collect();
        return Err(CotError::Validation(format!(
            "cannot render annotation: {}",
            codes.join(", ")
        )));
    }
    Ok(match fmt {
        AnnotationFormat::Tagged => format!(
            "{THINK_OPEN}{}\n\n{}\n\n{}{THINK_CLOSE}\n{}",
            ann.object_recognition, ann.functional_inference, ann.causal_reasoning, ann.conclusion
        ),
        AnnotationFormat::Unmarked => format!(
            "{} {} {}\n{}",
            ann.object_recognition, ann.functional_inference, ann.causal_reasoning, ann.conclusion
        ),
        AnnotationFormat::None => ann.conclusion.clone(),
    })
}

/// Parse a tagged rendering back into its structured form.
///
/// Requires exactly one think block at the start, three blank-line separated
/// stages inside it, and a non-empty conclusion after the closing marker.
pub fn parse_tagged(text: &str) -> Result<CoTAnnotation> {
    let opens = text.matches(THINK_OPEN).count();
    let closes = text.matches(THINK_CLOSE).count();
    if opens == 0 || closes == 0 {
        return Err(CotError::Validation(
            "MISSING_THINK_BLOCK: no <think>...</think> block found".into(),
        ));
    }
    if opens > 1 || closes > 1 {
        return Err(CotError::Validation(
            "MULTIPLE_THINK_BLOCKS: more than one think marker pair".into(),
        ));
    }
    let rest = text.strip_prefix(THINK_OPEN).ok_or_else(|| {
        CotError::Validation("MISPLACED_THINK_BLOCK: text must start with <think>".into())
    })?;
    let close_at = rest.find(THINK_CLOSE).ok_or_else(|| {
        CotError::Validation("MISSING_THINK_BLOCK: unclosed <think>".into())
    })?;
    let body = &rest[..close_at];
    let after = &rest[close_at + THINK_CLOSE.len()..];

    let stages: Vec<&str> = body.split("\n\n").collect();
    if stages.len() != 3 {
        return Err(CotError::Validation(format!(
            "STAGE_COUNT: expected 3 stages, found {}",
            stages.len()
        )));
    }
    let conclusion = after.trim();
    if conclusion.is_empty() {
        return Err(CotError::Validation(
            "MISSING_CONCLUSION: nothing after </think>".into(),
        ));
    }
    Ok(CoTAnnotation {
        object_recognition: stages[0].to_string(),
        functional_inference: stages[1].to_string(),
        causal_reasoning: stages[2].to_string(),
        conclusion: conclusion.to_string(),
    })
}

/// Convert a rendered annotation between formats. Only the tagged rendering
/// is losslessly parseable, so it is the only supported source.
pub fn convert(text: &str, from: AnnotationFormat, to: AnnotationFormat) -> Result<String> {
    if from != AnnotationFormat::Tagged {
        return Err(CotError::Validation(format!(
            "unsupported conversion direction: {from} -> {to} (stage boundaries are not recoverable)"
        )));
    }
    let ann = parse_tagged(text)?;
    render(&ann, to)
}
