//! Construction of steering and evaluation backends from configuration.

use std::fs;
use std::path::{Path, PathBuf};

use detox_core::backend::toy::{self, parse_pairs, parse_replacements, DEFAULT_BIAS};
use detox_core::backend::{BackendSuite, InfillCandidate, ToyBackend, ToyLexicon, UnigramModel};

use crate::error::{DetoxError, Result};
use crate::http::{connect, ServerConfig};

/// Which classifier a backend plays; selects the shipped toy lexicon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Steering,
    Oracle,
}

/// Optional overrides for the shipped toy data files.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ToyFiles {
    pub lexicon: Option<PathBuf>,
    pub bias: Option<f64>,
    pub replacements: Option<PathBuf>,
    pub fallback: Option<PathBuf>,
    pub unigrams: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| DetoxError::io(path, e))
}

fn with_path(path: &Path, e: detox_core::Error) -> DetoxError {
    match e {
        detox_core::Error::InvalidData { line, message } => DetoxError::Input {
            path: path.into(),
            line,
            message,
        },
        other => other.into(),
    }
}

impl ToyFiles {
    pub fn build(&self, role: Role) -> Result<ToyBackend> {
        let bias = self.bias.unwrap_or(DEFAULT_BIAS);
        let lexicon = match &self.lexicon {
            Some(p) => ToyLexicon::parse(&read(p)?, bias).map_err(|e| with_path(p, e))?,
            None => {
                let data = match role {
                    Role::Steering => toy::STEERING_LEXICON,
                    Role::Oracle => toy::ORACLE_LEXICON,
                };
                ToyLexicon::parse(data, bias)?
            }
        };
        let mut backend = ToyBackend::new(lexicon);
        if role == Role::Oracle {
            backend = backend.with_neighbourhood_embedding();
        }
        if let Some(p) = &self.replacements {
            backend = backend
                .with_replacements(parse_replacements(&read(p)?).map_err(|e| with_path(p, e))?);
        }
        if let Some(p) = &self.fallback {
            let pairs = parse_pairs(&read(p)?).map_err(|e| with_path(p, e))?;
            backend = backend.with_fallback(
                pairs
                    .into_iter()
                    .map(|(token, score)| InfillCandidate { token, score })
                    .collect(),
            );
        }
        if let Some(p) = &self.unigrams {
            backend =
                backend.with_unigrams(UnigramModel::parse(&read(p)?).map_err(|e| with_path(p, e))?);
        }
        Ok(backend)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendConfig {
    Toy(ToyFiles),
    Http(ServerConfig),
}

impl BackendConfig {
    pub fn build(&self, role: Role) -> Result<Box<dyn BackendSuite>> {
        Ok(match self {
            BackendConfig::Toy(files) => Box::new(files.build(role)?),
            BackendConfig::Http(server) => Box::new(connect(server.clone())?),
        })
    }

    /// Whether two role configurations would load the same model.
    pub fn same_model(&self, self_role: Role, other: &BackendConfig, other_role: Role) -> bool {
        match (self, other) {
            (BackendConfig::Toy(a), BackendConfig::Toy(b)) => {
                a == b && (a.lexicon.is_some() || self_role == other_role)
            }
            (BackendConfig::Http(a), BackendConfig::Http(b)) => a.base_url == b.base_url,
            _ => false,
        }
    }
}
