//! Request/response audit records.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChatTurn, GenerationParams, Role};
use crate::seed::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditTurn {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    /// SHA-256 of the image file bytes; `None` when the file is unreadable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub backend_id: String,
    pub stage: String,
    pub request: Vec<AuditTurn>,
    pub params: GenerationParams,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn image_hash(path: &str) -> Option<String> {
    std::fs::read(Path::new(path)).ok().map(|b| sha256_hex(&b))
}

pub fn audit_turns(history: &[ChatTurn]) -> Vec<AuditTurn> {
    history
        .iter()
        .map(|t| AuditTurn {
            role: t.role,
            text: t.text.clone(),
            image: t.image.clone(),
            image_sha256: t.image.as_deref().and_then(image_hash),
        })
        .collect()
}
