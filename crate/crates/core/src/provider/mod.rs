//! Segmentation providers: turn a box-and-points prompt into a mask.

mod external;
mod oracle;

pub use external::{serve_oracle, ExternalProvider};
pub use oracle::{oracle_segment, OracleProvider};

use serde::{Deserialize, Serialize};

use crate::env::Scene;
use crate::mask::{BitMask, PixelBox, PointPrompt};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationPrompt {
    pub bbox: PixelBox,
    pub points: Vec<PointPrompt>,
}

impl SegmentationPrompt {
    pub fn validate(&self, width: u32, height: u32) -> Result<(), ProviderError> {
        self.bbox
            .validate(width, height)
            .map_err(|e| ProviderError::Domain(e.to_string()))?;
        if let Some(p) = self.points.iter().find(|p| !p.in_bounds(width, height)) {
            return Err(ProviderError::Domain(format!(
                "point ({}, {}) outside image {width}x{height}",
                p.x, p.y
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Oracle,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderDescriptor {
    pub kind: ProviderKind,
    pub concurrency_safe: bool,
    /// `tcp://host:port` or `exec:<command line>`; external providers only.
    pub endpoint: Option<String>,
}

impl Default for ProviderDescriptor {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Oracle,
            concurrency_safe: true,
            endpoint: None,
        }
    }
}

impl ProviderDescriptor {
    pub fn external(endpoint: impl Into<String>) -> Self {
        Self {
            kind: ProviderKind::External,
            concurrency_safe: false,
            endpoint: Some(endpoint.into()),
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        match (self.kind, self.endpoint.as_deref()) {
            (ProviderKind::External, None) => Err(ProviderError::Config("external provider needs an endpoint".into())),
            (ProviderKind::External, Some(e)) if e.trim().is_empty() => {
                Err(ProviderError::Config("external provider needs an endpoint".into()))
            }
            _ => Ok(()),
        }
    }

    /// Instantiates the provider described.
    pub fn build(&self) -> Result<Box<dyn SegmentationProvider>, ProviderError> {
        self.validate()?;
        Ok(match self.kind {
            ProviderKind::Oracle => Box::new(OracleProvider::new()),
            ProviderKind::External => Box::new(ExternalProvider::new(self.endpoint.as_deref().unwrap_or(""))?),
        })
    }
}

/// Identifies the image a prompt refers to. Providers that can read the
/// scene directly use `scene`; remote ones send `id`.
#[derive(Debug, Clone, Copy)]
pub struct SceneRef<'a> {
    pub id: &'a str,
    pub scene: Option<&'a Scene>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    #[error("unknown scene {0:?}")]
    UnknownScene(String),
    #[error("{0}")]
    Domain(String),
    #[error("invalid provider configuration: {0}")]
    Config(String),
    #[error("transport failure ({}): {message}", if *retryable { "retryable" } else { "fatal" })]
    Transport { message: String, retryable: bool },
    #[error("segmenter reported: {0}")]
    Remote(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Transport { retryable: true, .. })
    }
}

pub trait SegmentationProvider: Send + Sync {
    fn descriptor(&self) -> ProviderDescriptor;

    /// A mask with the scene's dimensions for `prompt`.
    fn segment(&self, scene: SceneRef<'_>, prompt: &SegmentationPrompt) -> Result<BitMask, ProviderError>;
}
