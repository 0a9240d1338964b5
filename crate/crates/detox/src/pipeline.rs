//! Corpus orchestration: filter toxic inputs, target, search, refine, evaluate
//! and write artifacts.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use detox_core::attribution::{
    default_samples, integrated_gradients, kernel_shap, self_attention_importance,
};
use detox_core::backend::BaselineSpec;
use detox_core::eval::{score_item, EvalItem, EvaluationReport, ItemMetrics, ItemRecord};
use detox_core::hash::item_seed;
use detox_core::search::{generate_cf, refine};
use detox_core::text::{tokenize, TokenText};
use detox_core::{
    BackendSuite, Capability, CounterfactualResult, EditSet, ImportanceVector, SearchConfig,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::backends::{BackendConfig, Role};
use crate::config::{AttributionConfig, LfiMethod, PipelineConfig, Settings};
use crate::corpus::{compare_keys, read_corpus, CorpusItem, Fields};
use crate::error::{DetoxError, Result};

/// Steering and evaluation backends plus the per-text search settings.
pub struct Pipeline {
    steering: Box<dyn BackendSuite>,
    oracle: Box<dyn BackendSuite>,
    attribution: AttributionConfig,
    search: SearchConfig,
    refine: bool,
    seed: u64,
}

/// Outcome of the steering stages for one text.
#[derive(Debug, Clone)]
pub struct Detoxified {
    pub importance: ImportanceVector,
    pub raw: CounterfactualResult,
    pub refined: CounterfactualResult,
}

impl Pipeline {
    /// Builds from already-constructed suites, failing fast when the chosen
    /// methods need a capability the steering backend lacks.
    pub fn new(
        steering: Box<dyn BackendSuite>,
        oracle: Box<dyn BackendSuite>,
        attribution: AttributionConfig,
        search: SearchConfig,
        refine: bool,
        seed: u64,
    ) -> Result<Self> {
        search.validate()?;
        let caps = steering.capabilities();
        match attribution.method {
            LfiMethod::Ig => caps.require(Capability::GradientSaliency)?,
            LfiMethod::Attention => caps.require(Capability::Attention)?,
            LfiMethod::Kshap => {}
        }
        if refine {
            caps.require(Capability::GradientSaliency)?;
        }
        Ok(Self {
            steering,
            oracle,
            attribution,
            search,
            refine,
            seed,
        })
    }

    pub fn from_config(config: &PipelineConfig) -> Result<Self> {
        Self::build(
            &config.steering,
            &config.oracle,
            config.attribution.clone(),
            config.search.clone(),
            config.refine,
            config.seed,
        )
    }

    /// Like [`Pipeline::from_config`] without needing an input corpus.
    pub fn from_settings(settings: &Settings) -> Result<Self> {
        Self::build(
            &settings.steering_backend()?,
            &settings.oracle_backend()?,
            settings.attribution()?,
            settings.search()?,
            settings.refine.unwrap_or(true),
            settings.seed.unwrap_or(0),
        )
    }

    fn build(
        steering: &BackendConfig,
        oracle: &BackendConfig,
        attribution: AttributionConfig,
        search: SearchConfig,
        refine: bool,
        seed: u64,
    ) -> Result<Self> {
        if steering.same_model(Role::Steering, oracle, Role::Oracle) {
            log::warn!(
                "steering and evaluation backends are the same model; metrics will be optimistic"
            );
        }
        let steering = steering.build(Role::Steering)?;
        let oracle = oracle.build(Role::Oracle)?;
        Self::new(steering, oracle, attribution, search, refine, seed)
    }

    pub fn refines(&self) -> bool {
        self.refine
    }

    pub fn steering(&self) -> &dyn BackendSuite {
        self.steering.as_ref()
    }

    pub fn oracle(&self) -> &dyn BackendSuite {
        self.oracle.as_ref()
    }

    pub fn importance(&self, x: &TokenText, seed: u64) -> Result<ImportanceVector> {
        let suite = self.steering.as_ref();
        Ok(match self.attribution.method {
            LfiMethod::Kshap => {
                let n = self
                    .attribution
                    .kshap_samples
                    .unwrap_or_else(|| default_samples(x.len()));
                kernel_shap(suite, x, n, seed)?
            }
            LfiMethod::Ig => {
                integrated_gradients(suite, x, self.attribution.ig_steps, &BaselineSpec::Mask)?
            }
            LfiMethod::Attention => self_attention_importance(suite, x)?,
        })
    }

    /// Targets, searches and (when enabled) refines one toxic text. A refine
    /// failure keeps the raw counterfactual.
    pub fn detoxify(&self, x: &TokenText, key: &str) -> Result<Detoxified> {
        let seed = item_seed(self.seed, key);
        let importance = self.importance(x, seed)?;
        let search = SearchConfig {
            seed,
            ..self.search.clone()
        };
        let raw = generate_cf(self.steering.as_ref(), x, &importance, &search)?;
        let refined = if self.refine {
            match refine(
                self.steering.as_ref(),
                x,
                &raw,
                &search,
                self.attribution.ig_steps,
            ) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("item {key}: refinement failed, keeping raw counterfactual: {e}");
                    CounterfactualResult {
                        refined: false,
                        ..raw.clone()
                    }
                }
            }
        } else {
            raw.clone()
        };
        Ok(Detoxified {
            importance,
            raw,
            refined,
        })
    }

    /// Runs every stage for one corpus item; never fails.
    pub fn process(&self, item: &CorpusItem) -> ItemResult {
        let mut result = ItemResult {
            id: item.id.clone(),
            key: item.key.clone(),
            status: Status::Ok,
            reason: None,
            original: item.text.clone(),
            detoxified: item.text.clone(),
            edits: EditSet::default(),
            raw_edits: None,
            refined: false,
            steering_p_toxic: None,
            steering_p_nontoxic_after: None,
            cost: None,
            metrics: None,
            fields: item.extra.clone(),
        };
        let x = match tokenize(&item.text) {
            Ok(x) => x,
            Err(e) => {
                result.status = Status::Skipped;
                result.reason = Some(e.to_string());
                return result;
            }
        };
        match self.steering.classify(&x) {
            Ok(score) => {
                result.steering_p_toxic = Some(score.p_toxic);
                if !score.is_toxic() {
                    result.status = Status::Skipped;
                    result.reason = Some("non-toxic".into());
                    return result;
                }
            }
            Err(e) => result.fail(e.to_string()),
        }
        let mut output = x.clone();
        if result.status == Status::Ok {
            match self.detoxify(&x, &item.key) {
                Ok(d) => {
                    output = d.refined.counterfactual.clone();
                    result.detoxified = output.raw().to_string();
                    result.raw_edits = Some(d.raw.edits.len());
                    result.refined = d.refined.refined;
                    result.steering_p_nontoxic_after = Some(d.refined.p_nontoxic);
                    result.cost = Some(d.refined.cost);
                    result.edits = d.refined.edits;
                }
                Err(e) => result.fail(e.to_string()),
            }
        }
        let eval_item = EvalItem {
            id: item.key.clone(),
            original: x,
            output,
            failed: result.status == Status::Failed,
        };
        match score_item(self.oracle.as_ref(), &eval_item) {
            Ok(record) => result.metrics = record.metrics,
            Err(e) => {
                log::warn!("item {}: evaluation failed: {e}", item.key);
                if result.reason.is_none() {
                    result.reason = Some(format!("evaluation: {e}"));
                }
            }
        }
        result
    }

    /// Processes a corpus on `workers` threads (`None`: available
    /// parallelism); results are sorted by id.
    pub fn process_all(
        &self,
        items: &[CorpusItem],
        workers: Option<usize>,
    ) -> Result<Vec<ItemResult>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.unwrap_or(0))
            .build()
            .map_err(|e| DetoxError::Config(e.to_string()))?;
        let mut results: Vec<ItemResult> =
            pool.install(|| items.par_iter().map(|i| self.process(i)).collect());
        results.sort_by(|a, b| compare_keys(&a.key, &b.key));
        Ok(results)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
    Skipped,
}

/// One line of `results.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemResult {
    pub id: Value,
    #[serde(skip)]
    pub key: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub original: String,
    pub detoxified: String,
    pub edits: EditSet,
    /// Edit count of the counterfactual before refinement.
    pub raw_edits: Option<usize>,
    pub refined: bool,
    pub steering_p_toxic: Option<f64>,
    pub steering_p_nontoxic_after: Option<f64>,
    pub cost: Option<f64>,
    pub metrics: Option<ItemMetrics>,
    /// Input fields other than id and text.
    #[serde(skip_serializing_if = "Map::is_empty")]
    pub fields: Map<String, Value>,
}

impl ItemResult {
    fn fail(&mut self, reason: String) {
        log::warn!("item {}: {reason}", self.key);
        self.status = Status::Failed;
        self.reason = Some(reason);
    }

    fn record(&self) -> ItemRecord {
        ItemRecord {
            id: self.key.clone(),
            edits: if self.status == Status::Failed {
                0
            } else {
                self.edits.len()
            },
            failed: self.status == Status::Failed,
            metrics: self.metrics,
        }
    }
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub lfi: &'static str,
    pub refine: bool,
    pub seed: u64,
    pub n_skipped: usize,
    #[serde(flatten)]
    pub evaluation: EvaluationReport,
}

impl RunReport {
    pub fn from_results(results: &[ItemResult], lfi: LfiMethod, refine: bool, seed: u64) -> Self {
        let records: Vec<ItemRecord> = results
            .iter()
            .filter(|r| r.status != Status::Skipped)
            .map(ItemResult::record)
            .collect();
        let n_skipped = results.len() - records.len();
        let evaluation =
            EvaluationReport::aggregate(records).unwrap_or_else(|_| EvaluationReport {
                acc_percent: 0.0,
                mean_toxicity_score: 0.0,
                sparsity_percent: 0.0,
                content_preservation_percent: 0.0,
                delta_ppl_median: f64::NAN,
                n_inputs: 0,
                n_success: 0,
                n_failed: 0,
                per_item: Vec::new(),
            });
        Self {
            lfi: lfi.name(),
            refine,
            seed,
            n_skipped,
            evaluation,
        }
    }

    pub fn table(&self) -> String {
        let label = format!("{}{}", self.lfi, if self.refine { "+refine" } else { "" });
        let mut out = self.evaluation.table(&label);
        let _ = writeln!(out, "skipped (non-toxic or empty): {}", self.n_skipped);
        out
    }

    /// 0 when every toxic input was processed, 1 when some failed.
    pub fn exit_code(&self) -> i32 {
        if self.evaluation.n_failed > 0 {
            1
        } else {
            0
        }
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub results: Vec<ItemResult>,
    pub report: RunReport,
    pub out_dir: PathBuf,
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| DetoxError::io(path, e))?;
    f.write_all(contents).map_err(|e| DetoxError::io(path, e))
}

pub fn write_artifacts(dir: &Path, results: &[ItemResult], report: &RunReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DetoxError::io(dir, e))?;
    let mut lines = Vec::new();
    for r in results {
        serde_json::to_writer(&mut lines, r)?;
        lines.push(b'\n');
    }
    write_file(&dir.join("results.jsonl"), &lines)?;
    let mut json = serde_json::to_vec_pretty(report)?;
    json.push(b'\n');
    write_file(&dir.join("report.json"), &json)?;
    write_file(&dir.join("report.txt"), report.table().as_bytes())
}

/// The full corpus run.
pub fn run(config: &PipelineConfig) -> Result<RunOutput> {
    let pipeline = Pipeline::from_config(config)?;
    let fields = Fields {
        text: &config.text_field,
        id: &config.id_field,
    };
    let items = read_corpus(&config.input, config.format, &fields)?;
    log::info!("{} items read from {}", items.len(), config.input.display());
    let results = pipeline.process_all(&items, config.workers)?;
    let report = RunReport::from_results(
        &results,
        config.attribution.method,
        config.refine,
        config.seed,
    );
    write_artifacts(&config.out_dir, &results, &report)?;
    Ok(RunOutput {
        results,
        report,
        out_dir: config.out_dir.clone(),
    })
}

/// What `explain` found for one text.
#[derive(Debug, Clone)]
pub enum Explanation {
    NotToxic {
        p_toxic: f64,
    },
    Detoxified {
        text: TokenText,
        p_toxic: f64,
        stages: Box<Detoxified>,
    },
}

pub fn explain(pipeline: &Pipeline, raw: &str) -> Result<Explanation> {
    let x = tokenize(raw)?;
    let p_toxic = pipeline.steering().classify(&x)?.p_toxic;
    if p_toxic <= 0.5 {
        return Ok(Explanation::NotToxic { p_toxic });
    }
    let stages = pipeline.detoxify(&x, "explain")?;
    Ok(Explanation::Detoxified {
        text: x,
        p_toxic,
        stages: Box::new(stages),
    })
}

fn render_edits(out: &mut String, cf: &CounterfactualResult) {
    for e in cf.edits.edits() {
        let _ = writeln!(
            out,
            "    [{}] {} -> {}",
            e.position, e.original, e.replacement
        );
    }
}

impl Explanation {
    pub fn render(&self) -> String {
        let mut out = String::new();
        match self {
            Explanation::NotToxic { p_toxic } => {
                let _ = writeln!(out, "steering p_toxic = {p_toxic:.4}");
                let _ = writeln!(out, "input not classified toxic; nothing to do");
            }
            Explanation::Detoxified {
                text,
                p_toxic,
                stages,
            } => {
                let _ = writeln!(out, "input: {text}");
                let _ = writeln!(out, "steering p_toxic = {p_toxic:.4}");
                let _ = writeln!(out, "\ntargeting ({:?}):", stages.importance.method);
                let ranking = stages.importance.ranking();
                for (pos, (tok, score)) in text
                    .tokens()
                    .iter()
                    .zip(&stages.importance.scores)
                    .enumerate()
                {
                    let rank = ranking.iter().position(|&p| p == pos).unwrap_or(pos) + 1;
                    let _ = writeln!(out, "  {pos:>3}  {tok:<16} {score:>+10.4}  #{rank}");
                }
                let raw = &stages.raw;
                let _ = writeln!(out, "\nraw counterfactual: {}", raw.counterfactual);
                let _ = writeln!(
                    out,
                    "  cost {:.4}  p_nontoxic {:.4}  similarity {:.4}  expansions {}",
                    raw.cost, raw.p_nontoxic, raw.similarity, raw.expansions
                );
                render_edits(&mut out, raw);
                let refined = &stages.refined;
                if refined.refined {
                    let _ = writeln!(out, "\nrefined counterfactual: {}", refined.counterfactual);
                    let _ = writeln!(
                        out,
                        "  cost {:.4}  p_nontoxic {:.4}  similarity {:.4}",
                        refined.cost, refined.p_nontoxic, refined.similarity
                    );
                    render_edits(&mut out, refined);
                } else if raw.edits.len() < 2 {
                    let _ = writeln!(
                        out,
                        "\nrefinement: not applicable ({} edit)",
                        raw.edits.len()
                    );
                } else {
                    let _ = writeln!(out, "\nrefinement: no improvement");
                }
            }
        }
        out
    }
}

/// Scores rewrites produced elsewhere, joined to their originals by id. An
/// original without a rewrite (or with an untokenizable one) counts as failed.
pub fn evaluate_rewrites(
    oracle: &dyn BackendSuite,
    originals: &[CorpusItem],
    rewrites: &[CorpusItem],
) -> Result<EvaluationReport> {
    let by_key: std::collections::HashMap<&str, &CorpusItem> =
        rewrites.iter().map(|r| (r.key.as_str(), r)).collect();
    let mut sorted: Vec<&CorpusItem> = originals.iter().collect();
    sorted.sort_by(|a, b| compare_keys(&a.key, &b.key));
    let mut records = Vec::new();
    for item in sorted {
        let original = tokenize(&item.text)?;
        let rewrite = by_key
            .get(item.key.as_str())
            .and_then(|r| tokenize(&r.text).ok());
        if rewrite.is_none() {
            log::warn!("item {}: no usable rewrite", item.key);
        }
        let eval_item = EvalItem {
            id: item.key.clone(),
            failed: rewrite.is_none(),
            output: rewrite.unwrap_or_else(|| original.clone()),
            original,
        };
        records.push(score_item(oracle, &eval_item)?);
    }
    Ok(EvaluationReport::aggregate(records)?)
}
