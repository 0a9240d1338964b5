//! JSON-over-HTTP backend.
//!
//! The client sends pre-split word tokens; the server owns subword alignment
//! and answers with one value per word. Endpoints live under `/v1`.

use std::time::Duration;

use detox_core::backend::{
    sort_candidates, BackendSuite, BaselineSpec, Capabilities, InfillCandidate, ToxicityScore,
};
use detox_core::{BackendError, BackendErrorKind, Capability, Error, Result, TokenText};
use reqwest::blocking::Client;
use reqwest::Url;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const API_VERSION: &str = "v1";
const MANDATORY: [&str; 4] = ["classify", "fill_mask", "embed", "perplexity"];
const SALIENCY_TOTAL_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub base_url: String,
    pub timeout_ms: u64,
    /// Extra attempts after a transport failure. HTTP error responses are never retried.
    pub max_retries: u32,
    pub api_version: String,
    /// Idle connections kept per host.
    pub pool_size: usize,
    /// Token the server's masked LM treats as the mask.
    pub mask_token: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".into(),
            timeout_ms: 30_000,
            max_retries: 2,
            api_version: API_VERSION.into(),
            pool_size: 4,
            mask_token: "[MASK]".into(),
        }
    }
}

impl ServerConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            ..Self::default()
        }
    }

    fn url(&self) -> Result<Url> {
        let url = Url::parse(&self.base_url)
            .map_err(|e| Error::InvalidConfig(format!("base_url {:?}: {e}", self.base_url)))?;
        if !matches!(url.scheme(), "http" | "https") {
            return Err(Error::InvalidConfig(format!(
                "base_url {:?} is not http(s)",
                self.base_url
            )));
        }
        Ok(url)
    }

    pub fn validate(&self) -> Result<()> {
        self.url()?;
        if self.timeout_ms == 0 {
            return Err(Error::InvalidConfig("timeout_ms must be positive".into()));
        }
        if self.api_version != API_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported api_version {:?}",
                self.api_version
            )));
        }
        Ok(())
    }
}

fn protocol(what: &str, payload: &str) -> Error {
    BackendError::new(
        BackendErrorKind::Protocol,
        format!("{what}; payload: {payload}"),
    )
    .into()
}

#[derive(Deserialize)]
struct CapabilitiesResponse {
    api_version: String,
    capabilities: Vec<String>,
}

#[derive(Serialize)]
struct TextsRequest<'a> {
    texts: Vec<&'a [String]>,
}

#[derive(Deserialize)]
struct ClassifyResponse {
    probs: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct FillMaskRequest<'a> {
    tokens: &'a [String],
    position: usize,
    top_k: usize,
}

#[derive(Deserialize)]
struct FillMaskResponse {
    candidates: Vec<InfillCandidate>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct PerplexityResponse {
    ppl: Vec<f64>,
}

#[derive(Serialize)]
#[serde(untagged)]
enum WireBaseline<'a> {
    Named(&'static str),
    Tokens(&'a [String]),
}

#[derive(Serialize)]
struct SaliencyRequest<'a> {
    tokens: &'a [String],
    alpha: f64,
    baseline: WireBaseline<'a>,
}

#[derive(Deserialize)]
struct SaliencyResponse {
    saliency: Vec<f64>,
    total: f64,
}

#[derive(Serialize)]
struct TokensRequest<'a> {
    tokens: &'a [String],
}

#[derive(Deserialize)]
struct AttentionResponse {
    heads: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: ErrorDetail,
}

#[derive(Deserialize)]
struct ErrorDetail {
    code: String,
    message: String,
}

/// Backend suite served over the `/v1` wire protocol.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: Client,
    base: Url,
    config: ServerConfig,
    capabilities: Capabilities,
}

/// Queries `/v1/capabilities` and returns a suite routed to the server.
pub fn connect(config: ServerConfig) -> Result<HttpBackend> {
    config.validate()?;
    let client = Client::builder()
        .timeout(Duration::from_millis(config.timeout_ms))
        .pool_max_idle_per_host(config.pool_size)
        .build()
        .map_err(|e| BackendError::new(BackendErrorKind::Other, e.to_string()))?;
    let mut backend = HttpBackend {
        client,
        base: config.url()?,
        config,
        capabilities: Capabilities::default(),
    };
    let (status, body) = backend.send(|c, url| c.get(url), "capabilities")?;
    backend.check_status(status, &body)?;
    let caps: CapabilitiesResponse =
        serde_json::from_str(&body).map_err(|e| protocol(&format!("capabilities: {e}"), &body))?;
    if caps.api_version != backend.config.api_version {
        return Err(BackendError::new(
            BackendErrorKind::VersionMismatch,
            format!(
                "server speaks {:?}, client expects {:?}",
                caps.api_version, backend.config.api_version
            ),
        )
        .into());
    }
    if let Some(missing) = MANDATORY
        .iter()
        .find(|m| !caps.capabilities.iter().any(|c| c == *m))
    {
        return Err(protocol(
            &format!("server lacks mandatory capability {missing:?}"),
            &body,
        ));
    }
    backend.capabilities = Capabilities {
        gradient_saliency: caps.capabilities.iter().any(|c| c == "gradient_saliency"),
        attention: caps.capabilities.iter().any(|c| c == "attention"),
    };
    Ok(backend)
}

impl HttpBackend {
    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    fn endpoint(&self, name: &str) -> Result<Url> {
        let path = format!(
            "{}/{}/{name}",
            self.base.path().trim_end_matches('/'),
            self.config.api_version
        );
        let mut url = self.base.clone();
        url.set_path(&path);
        Ok(url)
    }

    /// Sends a request, retrying only transport failures.
    fn send<F>(&self, build: F, name: &str) -> Result<(u16, String)>
    where
        F: Fn(&Client, Url) -> reqwest::blocking::RequestBuilder,
    {
        let url = self.endpoint(name)?;
        let mut attempt = 0;
        loop {
            match build(&self.client, url.clone()).send() {
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    let body = resp.text().map_err(|e| {
                        BackendError::new(
                            BackendErrorKind::Other,
                            format!("{name}: reading body: {e}"),
                        )
                    })?;
                    return Ok((status, body));
                }
                Err(e) if attempt < self.config.max_retries => {
                    log::debug!("{name}: transport failure (attempt {}): {e}", attempt + 1);
                    attempt += 1;
                }
                Err(e) => {
                    let kind = if e.is_connect() {
                        BackendErrorKind::Connect
                    } else {
                        BackendErrorKind::Other
                    };
                    return Err(BackendError::new(kind, format!("{name}: {e}")).into());
                }
            }
        }
    }

    fn check_status(&self, status: u16, body: &str) -> Result<()> {
        if (200..300).contains(&status) {
            return Ok(());
        }
        let message = match serde_json::from_str::<ErrorBody>(body) {
            Ok(b) => format!("{}: {}", b.error.code, b.error.message),
            Err(_) => body.to_string(),
        };
        Err(BackendError::new(BackendErrorKind::Status(status), message).into())
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        name: &str,
        request: &Req,
    ) -> Result<(Resp, String)> {
        let (status, body) = self.send(|c, url| c.post(url).json(request), name)?;
        self.check_status(status, &body)?;
        let parsed =
            serde_json::from_str(&body).map_err(|e| protocol(&format!("{name}: {e}"), &body))?;
        Ok((parsed, body))
    }
}

fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

impl BackendSuite for HttpBackend {
    fn capabilities(&self) -> Capabilities {
        self.capabilities
    }

    fn mask_token(&self) -> &str {
        &self.config.mask_token
    }

    fn classify(&self, text: &TokenText) -> Result<ToxicityScore> {
        Ok(self.classify_batch(std::slice::from_ref(text))?.remove(0))
    }

    fn classify_batch(&self, texts: &[TokenText]) -> Result<Vec<ToxicityScore>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let request = TextsRequest {
            texts: texts.iter().map(|t| t.tokens()).collect(),
        };
        let (resp, body): (ClassifyResponse, _) = self.post("classify", &request)?;
        if resp.probs.len() != texts.len() {
            return Err(protocol("classify: wrong number of results", &body));
        }
        resp.probs
            .iter()
            .map(|pair| match pair.as_slice() {
                [p_nontoxic, p_toxic] => ToxicityScore::renormalized(*p_nontoxic, *p_toxic)
                    .ok_or_else(|| protocol("classify: invalid probabilities", &body)),
                _ => Err(protocol("classify: expected [p_nontoxic, p_toxic]", &body)),
            })
            .collect()
    }

    fn fill_mask(
        &self,
        text: &TokenText,
        position: usize,
        k: usize,
    ) -> Result<Vec<InfillCandidate>> {
        text.token(position)?;
        if k == 0 {
            return Ok(Vec::new());
        }
        let request = FillMaskRequest {
            tokens: text.tokens(),
            position,
            top_k: k,
        };
        let (resp, body): (FillMaskResponse, _) = self.post("fill_mask", &request)?;
        if resp.candidates.iter().any(|c| !c.score.is_finite()) {
            return Err(protocol("fill_mask: non-finite score", &body));
        }
        let mut candidates: Vec<InfillCandidate> = resp
            .candidates
            .into_iter()
            .filter(|c| c.token != self.config.mask_token)
            .collect();
        sort_candidates(&mut candidates);
        candidates.truncate(k);
        Ok(candidates)
    }

    fn embed(&self, text: &TokenText) -> Result<Vec<f64>> {
        Ok(self.embed_batch(std::slice::from_ref(text))?.remove(0))
    }

    fn embed_batch(&self, texts: &[TokenText]) -> Result<Vec<Vec<f64>>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let request = TextsRequest {
            texts: texts.iter().map(|t| t.tokens()).collect(),
        };
        let (resp, body): (EmbedResponse, _) = self.post("embed", &request)?;
        if resp.vectors.len() != texts.len() {
            return Err(protocol("embed: wrong number of vectors", &body));
        }
        let dim = resp.vectors[0].len();
        if dim == 0
            || resp
                .vectors
                .iter()
                .any(|v| v.len() != dim || !all_finite(v))
        {
            return Err(protocol(
                "embed: vectors must share a positive dimension",
                &body,
            ));
        }
        Ok(resp.vectors)
    }

    fn perplexity(&self, text: &TokenText) -> Result<f64> {
        let request = TextsRequest {
            texts: vec![text.tokens()],
        };
        let (resp, body): (PerplexityResponse, _) = self.post("perplexity", &request)?;
        match resp.ppl.as_slice() {
            [p] if p.is_finite() && *p > 0.0 => Ok(*p),
            _ => Err(protocol("perplexity: expected one positive value", &body)),
        }
    }

    fn gradient_saliency(
        &self,
        text: &TokenText,
        alpha: f64,
        baseline: &BaselineSpec,
    ) -> Result<Vec<f64>> {
        self.capabilities.require(Capability::GradientSaliency)?;
        let baseline = match baseline {
            BaselineSpec::Mask => WireBaseline::Named("mask"),
            BaselineSpec::Tokens(tokens) => {
                if tokens.len() != text.len() {
                    return Err(Error::LengthMismatch {
                        left: text.len(),
                        right: tokens.len(),
                    });
                }
                WireBaseline::Tokens(tokens)
            }
        };
        let request = SaliencyRequest {
            tokens: text.tokens(),
            alpha,
            baseline,
        };
        let (resp, body): (SaliencyResponse, _) = self.post("gradient_saliency", &request)?;
        if resp.saliency.len() != text.len() || !all_finite(&resp.saliency) {
            return Err(protocol(
                "gradient_saliency: expected one finite value per word",
                &body,
            ));
        }
        let sum: f64 = resp.saliency.iter().sum();
        if (sum - resp.total).abs() > SALIENCY_TOTAL_TOLERANCE {
            return Err(protocol(
                &format!(
                    "gradient_saliency: words sum to {sum}, total is {}",
                    resp.total
                ),
                &body,
            ));
        }
        Ok(resp.saliency)
    }

    fn attention_weights(&self, text: &TokenText) -> Result<Vec<Vec<f64>>> {
        self.capabilities.require(Capability::Attention)?;
        let (resp, body): (AttentionResponse, _) = self.post(
            "attention",
            &TokensRequest {
                tokens: text.tokens(),
            },
        )?;
        if resp.heads.is_empty()
            || resp
                .heads
                .iter()
                .any(|h| h.len() != text.len() || !all_finite(h))
        {
            return Err(protocol(
                "attention: expected one row of d weights per head",
                &body,
            ));
        }
        Ok(resp.heads)
    }
}
