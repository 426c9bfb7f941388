//! Remote-annotator client: POSTs structured shape metadata and expects a
//! structurally valid CoT annotation back.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::shapes::{Affordance, ShapeFamily};
use crate::cotformat::{validate, AnnotationFormat, CoTAnnotation};
use crate::error::{CotError, Result};
use crate::net::post_json_retry;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartInfo {
    pub label: String,
    pub affordances: Vec<Affordance>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotatorRequest {
    pub shape_id: String,
    pub family: ShapeFamily,
    pub parts: Vec<PartInfo>,
    pub format: AnnotationFormat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotatorResponse {
    pub annotation: CoTAnnotation,
    pub model: String,
    pub latency_ms: f64,
    /// Filled in by the client, not the wire format.
    #[serde(default)]
    pub attempts: usize,
}

#[derive(Debug, Clone)]
pub struct AnnotatorClient {
    pub endpoint: String,
    pub timeout: Duration,
}

impl AnnotatorClient {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(10),
        }
    }

    /// POST /annotate with retry; the returned annotation must pass
    /// structural validation for the requested format (not retried).
    pub fn request_annotation(&self, req: &AnnotatorRequest) -> Result<AnnotatorResponse> {
        let url = format!("{}/annotate", self.endpoint.trim_end_matches('/'));
        let body = serde_json::to_value(req)?;
        let (value, attempts) = post_json_retry(&url, &body, self.timeout)?;
        let mut resp: AnnotatorResponse = serde_json::from_value(value)
            .map_err(|e| CotError::Validation(format!("malformed annotator response: {e}")))?;
        let report = validate(&resp.annotation, req.format);
        if !report.is_clean() {
            let codes: Vec<&str> = report.violations.iter().map(|v| v.code.as_str()).collect();
            return Err(CotError::Validation(format!(
                "annotator response failed validation: {}",
                codes.join(", ")
            )));
        }
        resp.attempts = attempts;
        Ok(resp)
    }
}
