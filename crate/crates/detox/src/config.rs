//! Run configuration: a flat `key = value` file whose keys can all be
//! overridden from the command line.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use detox_core::attribution::DEFAULT_IG_STEPS;
use detox_core::SearchConfig;
use serde::Deserialize;

use crate::backends::{BackendConfig, ToyFiles};
use crate::corpus::InputFormat;
use crate::error::{DetoxError, Result};
use crate::http::ServerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LfiMethod {
    Kshap,
    Ig,
    Attention,
}

impl FromStr for LfiMethod {
    type Err = DetoxError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kshap" => Ok(LfiMethod::Kshap),
            "ig" => Ok(LfiMethod::Ig),
            "attention" => Ok(LfiMethod::Attention),
            other => Err(DetoxError::Config(format!(
                "unknown lfi method {other:?} (kshap|ig|attention)"
            ))),
        }
    }
}

impl LfiMethod {
    pub fn name(self) -> &'static str {
        match self {
            LfiMethod::Kshap => "kshap",
            LfiMethod::Ig => "ig",
            LfiMethod::Attention => "attention",
        }
    }
}

/// Every configurable key. Unset keys fall back to defaults on [`Settings::resolve`].
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub input: Option<PathBuf>,
    pub format: Option<String>,
    pub text_field: Option<String>,
    pub id_field: Option<String>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,

    pub backend: Option<String>,
    pub oracle_backend: Option<String>,
    pub steering_url: Option<String>,
    pub oracle_url: Option<String>,
    pub timeout_ms: Option<u64>,
    pub max_retries: Option<u32>,
    pub pool_size: Option<usize>,
    pub mask_token: Option<String>,

    pub steering_lexicon: Option<PathBuf>,
    pub oracle_lexicon: Option<PathBuf>,
    pub steering_bias: Option<f64>,
    pub oracle_bias: Option<f64>,
    pub replacements: Option<PathBuf>,
    pub fallback: Option<PathBuf>,
    pub unigrams: Option<PathBuf>,

    pub lfi: Option<String>,
    pub kshap_samples: Option<usize>,
    pub ig_steps: Option<usize>,
    pub alpha: Option<f64>,
    pub beam_width: Option<usize>,
    pub top_k: Option<usize>,
    pub max_edit_fraction: Option<f64>,
    pub max_expansions: Option<usize>,
    pub refine: Option<bool>,
    pub seed: Option<u64>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($field:ident),* $(,)?) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field; } )*
    };
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| DetoxError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DetoxError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| DetoxError::Config(format!("{}: {e}", path.display())))
    }

    /// Values set in `top` replace those in `self`.
    pub fn overlay(mut self, top: Settings) -> Self {
        overlay!(
            self,
            top,
            input,
            format,
            text_field,
            id_field,
            out,
            workers,
            backend,
            oracle_backend,
            steering_url,
            oracle_url,
            timeout_ms,
            max_retries,
            pool_size,
            mask_token,
            steering_lexicon,
            oracle_lexicon,
            steering_bias,
            oracle_bias,
            replacements,
            fallback,
            unigrams,
            lfi,
            kshap_samples,
            ig_steps,
            alpha,
            beam_width,
            top_k,
            max_edit_fraction,
            max_expansions,
            refine,
            seed,
        );
        self
    }

    fn server(&self, url: &Option<String>, which: &str) -> Result<ServerConfig> {
        let url = url
            .clone()
            .ok_or_else(|| DetoxError::Config(format!("http backend needs {which}_url")))?;
        let mut server = ServerConfig::new(url);
        if let Some(t) = self.timeout_ms {
            server.timeout_ms = t;
        }
        if let Some(r) = self.max_retries {
            server.max_retries = r;
        }
        if let Some(p) = self.pool_size {
            server.pool_size = p;
        }
        if let Some(m) = &self.mask_token {
            server.mask_token = m.clone();
        }
        server.validate()?;
        Ok(server)
    }

    fn backend_config(&self, kind: Option<&str>, steering: bool) -> Result<BackendConfig> {
        match kind.unwrap_or("toy") {
            "toy" => Ok(BackendConfig::Toy(ToyFiles {
                lexicon: if steering {
                    self.steering_lexicon.clone()
                } else {
                    self.oracle_lexicon.clone()
                },
                bias: if steering {
                    self.steering_bias
                } else {
                    self.oracle_bias
                },
                replacements: self.replacements.clone(),
                fallback: self.fallback.clone(),
                unigrams: self.unigrams.clone(),
            })),
            "http" => {
                let (url, which) = if steering {
                    (&self.steering_url, "steering")
                } else {
                    (&self.oracle_url, "oracle")
                };
                Ok(BackendConfig::Http(self.server(url, which)?))
            }
            other => Err(DetoxError::Config(format!(
                "unknown backend {other:?} (toy|http)"
            ))),
        }
    }

    pub fn steering_backend(&self) -> Result<BackendConfig> {
        self.backend_config(self.backend.as_deref(), true)
    }

    /// The oracle uses `oracle_backend` when set, otherwise `backend`, or http
    /// whenever only an oracle URL is given.
    pub fn oracle_backend(&self) -> Result<BackendConfig> {
        let kind = self
            .oracle_backend
            .as_deref()
            .or(self.backend.as_deref())
            .or(self.oracle_url.as_ref().map(|_| "http"));
        self.backend_config(kind, false)
    }

    pub fn search(&self) -> Result<SearchConfig> {
        let d = SearchConfig::default();
        let config = SearchConfig {
            alpha: self.alpha.unwrap_or(d.alpha),
            beam_width: self.beam_width.unwrap_or(d.beam_width),
            top_k_candidates: self.top_k.unwrap_or(d.top_k_candidates),
            max_edit_fraction: self.max_edit_fraction.unwrap_or(d.max_edit_fraction),
            max_expansions: self.max_expansions.unwrap_or(d.max_expansions),
            seed: self.seed.unwrap_or(d.seed),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn attribution(&self) -> Result<AttributionConfig> {
        let config = AttributionConfig {
            method: self.lfi.as_deref().unwrap_or("kshap").parse()?,
            kshap_samples: self.kshap_samples,
            ig_steps: self.ig_steps.unwrap_or(DEFAULT_IG_STEPS),
        };
        if config.ig_steps == 0 || config.kshap_samples == Some(0) {
            return Err(DetoxError::Config(
                "ig_steps and kshap_samples must be positive".into(),
            ));
        }
        Ok(config)
    }

    pub fn resolve(&self) -> Result<PipelineConfig> {
        let input = self
            .input
            .clone()
            .ok_or_else(|| DetoxError::Config("no input given".into()))?;
        let format = match &self.format {
            Some(f) => f.parse()?,
            None => InputFormat::from_path(&input),
        };
        if self.workers == Some(0) {
            return Err(DetoxError::Config("workers must be positive".into()));
        }
        Ok(PipelineConfig {
            input,
            format,
            text_field: self.text_field.clone().unwrap_or_else(|| "text".into()),
            id_field: self.id_field.clone().unwrap_or_else(|| "id".into()),
            steering: self.steering_backend()?,
            oracle: self.oracle_backend()?,
            attribution: self.attribution()?,
            search: self.search()?,
            refine: self.refine.unwrap_or(true),
            seed: self.seed.unwrap_or(0),
            out_dir: self
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("detox-out")),
            workers: self.workers,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionConfig {
    pub method: LfiMethod,
    /// `None` means `min(2^d, 2048)` per text.
    pub kshap_samples: Option<usize>,
    pub ig_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub format: InputFormat,
    pub text_field: String,
    pub id_field: String,
    pub steering: BackendConfig,
    pub oracle: BackendConfig,
    pub attribution: AttributionConfig,
    pub search: SearchConfig,
    pub refine: bool,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads; `None` uses the available parallelism.
    pub workers: Option<usize>,
}
