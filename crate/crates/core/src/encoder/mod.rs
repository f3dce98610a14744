//! Sentence encoding: tokenization, summed input embeddings, transformer
//! hidden states and `[CLS]` pooling.

pub mod tiny;
pub mod tokenizer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use tiny::{EmbeddingTensor, EncoderConfig, EncoderOutput, EncoderTrace, TinyEncoder};
pub use tokenizer::{TokenizedExample, Vocab};

/// Which encoder implementation backs a model (`tiny` or `pretrained:<name>`).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendKind {
    #[default]
    Tiny,
    Pretrained(String),
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(BackendKind::Tiny),
            other => match other.strip_prefix("pretrained:") {
                Some(name) if !name.is_empty() => Ok(BackendKind::Pretrained(name.to_string())),
                _ => Err(Error::Config(format!(
                    "backend must be `tiny` or `pretrained:<name>`, got `{other}`"
                ))),
            },
        }
    }
}

impl TryFrom<String> for BackendKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BackendKind> for String {
    fn from(b: BackendKind) -> Self {
        b.to_string()
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendKind::Tiny => f.write_str("tiny"),
            BackendKind::Pretrained(name) => write!(f, "pretrained:{name}"),
        }
    }
}

impl BackendKind {
    /// Fails for backends this build cannot instantiate.
    pub fn ensure_available(&self) -> Result<()> {
        match self {
            BackendKind::Tiny => Ok(()),
            BackendKind::Pretrained(name) => Err(Error::Config(format!(
                "pretrained backend `{name}` is not available in this build; use `tiny`"
            ))),
        }
    }
}
