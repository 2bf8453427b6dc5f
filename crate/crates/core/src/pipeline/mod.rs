//! End-to-end orchestration: decompose, enhance, build queries, select a
//! checkpoint, gate adapters, compose, refine, generate. Every intermediate
//! lands in a [`RunRecord`]; a failing stage stops the run and is recorded.

mod config;
mod record;
mod store;

use std::num::NonZeroUsize;
use std::path::Path;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::backend::{Backend, BackendError, GeneratedImage};
use crate::concept::{parse_concept_map, ConceptMap, RawDecomposition};
use crate::enhance::{DetailEnhancer, EnhancementScope};
use crate::eval::{evaluate_pair, EvalRun, ImageSource};
use crate::gating::{build_queries, choose_checkpoint, gate_adapters, Guardrails, SelectionResult};
use crate::hashing::{hex8, stable_hash};
use crate::index::{load_snapshot, Collection, IndexError, ScoredHit};
use crate::llm::{Criterion, Gateway, TokenLedger};
use crate::workflow::{compose, refine_passthrough, GenerationWorkflow, Knobs};

pub use config::{ClockMode, CollectionNames, Config, EnhancementConfig, GuardrailsConfig, ServiceConfig};
pub use record::{
    Candidate, FailureKind, RefineSource, RetrievalReport, RunKind, RunRecord, Stage, StageFailure, StageTiming,
};
pub use store::RunStore;

pub const DEFAULT_DECOMPOSITION_TEMPLATE: &str = include_str!("../../assets/concept_decomposition.txt");

const REPORTED_CANDIDATES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unknown run `{0}`")]
    UnknownRun(String),
    #[error("run `{run}` has no image {index}")]
    UnknownImage { run: String, index: usize },
    #[error("io error: {0}")]
    Io(String),
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    pub prompt: String,
    #[serde(default)]
    pub knobs: Option<Knobs>,
    /// Details requested per enhanced concept.
    #[serde(default)]
    pub details: Option<usize>,
    #[serde(default)]
    pub scope: Option<EnhancementScope>,
    /// An edited concept map; decomposition and enhancement are skipped.
    #[serde(default)]
    pub concept_map: Option<ConceptMap>,
    /// Extra exclusions for this request only.
    #[serde(default)]
    pub guardrails: Option<Guardrails>,
    #[serde(default)]
    pub budget: Option<u64>,
    #[serde(default = "default_true")]
    pub persist: bool,
}

impl RunRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            knobs: None,
            details: None,
            scope: None,
            concept_map: None,
            guardrails: None,
            budget: None,
            persist: true,
        }
    }

    pub fn with_seed(mut self, seed: i64) -> Self {
        let mut knobs = self.knobs.unwrap_or_default();
        knobs.seed = Some(seed);
        self.knobs = Some(knobs);
        self
    }
}

struct Tracker<'a> {
    record: RunRecord,
    ledger: &'a TokenLedger,
    clock: ClockMode,
}

impl Tracker<'_> {
    fn stage<R, E: std::fmt::Display + 'static>(&mut self, stage: Stage, f: impl FnOnce() -> Result<R, E>) -> Option<R> {
        if self.record.failure.is_some() {
            return None;
        }
        let before = self.ledger.total();
        let start = Instant::now();
        let result = f();
        let millis = match self.clock {
            ClockMode::Wall => start.elapsed().as_secs_f64() * 1000.0,
            ClockMode::Frozen => 0.0,
        };
        self.record.timings.push(StageTiming {
            stage,
            millis,
            tokens: self.ledger.total() - before,
        });
        match result {
            Ok(v) => Some(v),
            Err(e) => {
                warn!(%stage, error = %e, "stage failed");
                let busy = matches!(
                    (&e as &dyn std::any::Any).downcast_ref::<BackendError>(),
                    Some(BackendError::Busy { .. })
                );
                self.fail(stage, if busy { FailureKind::Busy } else { FailureKind::Upstream }, e.to_string());
                None
            }
        }
    }

    fn fail(&mut self, stage: Stage, kind: FailureKind, message: String) {
        self.record.failure = Some(StageFailure { stage, kind, message });
    }

    fn finish(mut self) -> RunRecord {
        self.record.ledger_snapshot = self.ledger.snapshot();
        self.record
    }
}

type SharedCollection = RwLock<Option<Arc<Collection<f32>>>>;

pub struct Pipeline {
    config: Config,
    llm: Gateway,
    embedder: Gateway,
    judge: Gateway,
    enhancer: DetailEnhancer,
    decomposition_template: String,
    guardrails: Guardrails,
    checkpoints: SharedCollection,
    adapters: SharedCollection,
    backend: Backend,
    store: RunStore,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline").field("data_dir", &self.config.data_dir).finish_non_exhaustive()
    }
}

fn candidates(hits: &[ScoredHit<f32>], rails: &Guardrails) -> Vec<Candidate> {
    hits.iter()
        .filter(|h| rails.allows(&h.record))
        .take(REPORTED_CANDIDATES)
        .map(|h| Candidate {
            id: h.record.id.clone(),
            context: h.context as f64,
            margin_sum: h.margin_sum as f64,
        })
        .collect()
}

fn load_optional(path: &Path) -> Result<Option<Arc<Collection<f32>>>, PipelineError> {
    match load_snapshot(path) {
        Ok(c) => Ok(Some(Arc::new(c))),
        Err(IndexError::Io(_)) if !path.exists() => Ok(None),
        Err(e) => Err(PipelineError::Config(format!("{}: {e}", path.display()))),
    }
}

impl Pipeline {
    /// Build from config, loading collections from the data directory when present.
    pub fn open(config: Config) -> Result<Self, PipelineError> {
        let checkpoints = load_optional(&config.collection_path(&config.collections.checkpoints))?;
        let adapters = load_optional(&config.collection_path(&config.collections.adapters))?;
        Self::assemble(config, checkpoints, adapters)
    }

    pub fn with_collections(
        config: Config,
        checkpoints: Collection<f32>,
        adapters: Collection<f32>,
    ) -> Result<Self, PipelineError> {
        Self::assemble(config, Some(Arc::new(checkpoints)), Some(Arc::new(adapters)))
    }

    fn assemble(
        config: Config,
        checkpoints: Option<Arc<Collection<f32>>>,
        adapters: Option<Arc<Collection<f32>>>,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        let cfg_err = |e: String| PipelineError::Config(e);
        let llm = Gateway::from_config(&config.llm).map_err(|e| cfg_err(format!("llm: {e}")))?;
        let embedder = Gateway::from_config(&config.embedding).map_err(|e| cfg_err(format!("embedding: {e}")))?;
        let judge = Gateway::from_config(&config.judge).map_err(|e| cfg_err(format!("judge: {e}")))?;
        let enhancer = match &config.enhancement.template_path {
            Some(path) => DetailEnhancer::from_file(&config.data_dir.join(path)).map_err(|e| cfg_err(e.to_string()))?,
            None => DetailEnhancer::default(),
        };
        let decomposition_template = match &config.decomposition_template {
            Some(path) => {
                let path = config.data_dir.join(path);
                std::fs::read_to_string(&path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?
            }
            None => DEFAULT_DECOMPOSITION_TEMPLATE.to_string(),
        };
        if !decomposition_template.contains("{prompt}") {
            return Err(cfg_err("decomposition template lacks {prompt}".into()));
        }
        let guardrails = config.guardrails.resolve(&config.data_dir)?;
        let backend = Backend::from_config(&config.backend).map_err(|e| cfg_err(e.to_string()))?;
        let store = RunStore::open(config.runs_dir())?;
        Ok(Self {
            config,
            llm,
            embedder,
            judge,
            enhancer,
            decomposition_template,
            guardrails,
            checkpoints: RwLock::new(checkpoints),
            adapters: RwLock::new(adapters),
            backend,
            store,
        })
    }

    /// Replace the configured backend, e.g. with a custom [`crate::backend::ImageBackend`].
    pub fn with_backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn store(&self) -> &RunStore {
        &self.store
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn checkpoints(&self) -> Option<Arc<Collection<f32>>> {
        self.checkpoints.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn adapters(&self) -> Option<Arc<Collection<f32>>> {
        self.adapters.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    /// Re-read both collection snapshots from disk.
    pub fn reload_collections(&self) -> Result<(), PipelineError> {
        let c = load_optional(&self.config.collection_path(&self.config.collections.checkpoints))?;
        let a = load_optional(&self.config.collection_path(&self.config.collections.adapters))?;
        *self.checkpoints.write().unwrap_or_else(|p| p.into_inner()) = c;
        *self.adapters.write().unwrap_or_else(|p| p.into_inner()) = a;
        Ok(())
    }

    pub fn render_decomposition_prompt(&self, prompt: &str) -> String {
        self.decomposition_template.replace("{prompt}", prompt)
    }

    fn validate_request(&self, req: &RunRequest) -> Result<(), PipelineError> {
        if let Some(knobs) = &req.knobs {
            knobs.validate().map_err(|e| PipelineError::InvalidRequest(e.to_string()))?;
        }
        if req.details == Some(0) {
            return Err(PipelineError::InvalidRequest("details must be at least 1".into()));
        }
        Ok(())
    }

    fn new_record(&self, kind: RunKind, request_id: String, sequence: u64, prompt: &str) -> RunRecord {
        RunRecord {
            request_id,
            sequence,
            kind,
            parent_id: None,
            refine_source: None,
            input_prompt: prompt.to_string(),
            concept_map: None,
            selection: None,
            retrieval: None,
            workflow: None,
            images: Vec::new(),
            ledger_snapshot: Default::default(),
            timings: Vec::new(),
            failure: None,
        }
    }

    /// Stages up to and including refinement; shared by compose and run.
    fn plan(&self, req: &RunRequest, tracker: &mut Tracker<'_>) -> Option<GenerationWorkflow> {
        let ledger = tracker.ledger;
        let map = match &req.concept_map {
            Some(map) => map.clone(),
            None => {
                if req.prompt.trim().is_empty() {
                    tracker.record.timings.push(StageTiming {
                        stage: Stage::Decompose,
                        millis: 0.0,
                        tokens: 0,
                    });
                    tracker.fail(Stage::Decompose, FailureKind::Input, "prompt is empty".into());
                    return None;
                }
                let raw = tracker.stage(Stage::Decompose, || {
                    let response = self
                        .llm
                        .complete(&self.render_decomposition_prompt(req.prompt.trim()), ledger)
                        .map_err(|e| e.to_string())?;
                    parse_concept_map(&RawDecomposition::new(response)).map_err(|e| e.to_string())
                })?;
                tracker.record.concept_map = Some(raw.clone());
                let n = req.details.unwrap_or(self.config.enhancement.details);
                let scope = req.scope.unwrap_or(self.config.enhancement.scope);
                tracker.stage(Stage::Enhance, || {
                    let n = NonZeroUsize::new(n).ok_or("details must be at least 1")?;
                    self.enhancer
                        .enhance_map(&self.llm, &raw, n, scope, ledger)
                        .map_err(|e| e.to_string())
                })?
            }
        };
        tracker.record.concept_map = Some(map.clone());
        let policy = &self.config.policy;
        let rails = match &req.guardrails {
            Some(extra) => self.guardrails.merged(extra),
            None => self.guardrails.clone(),
        };
        let queries = tracker.stage(Stage::BuildQueries, || build_queries(&map, &self.embedder, policy, ledger))?;
        let ckpt_ranked = tracker.stage(Stage::SelectCheckpoint, || {
            let col = self.checkpoints().ok_or_else(|| {
                format!("checkpoint collection `{}` is not loaded", self.config.collections.checkpoints)
            })?;
            let ranked = col.rank(&queries.positives, &queries.negative).map_err(|e| e.to_string())?;
            let choice = choose_checkpoint(&ranked, policy, &rails).map_err(|e| e.to_string())?;
            Ok::<_, String>((ranked, choice))
        })?;
        let (ckpt_hits, ckpt) = ckpt_ranked;
        let (adapter_hits, loras) = tracker.stage(Stage::SelectAdapters, || {
            let col = self
                .adapters()
                .ok_or_else(|| format!("adapter collection `{}` is not loaded", self.config.collections.adapters))?;
            let ranked = col.rank(&queries.positives, &queries.negative).map_err(|e| e.to_string())?;
            let choice = gate_adapters(&ranked, policy, &rails);
            Ok::<_, String>((ranked, choice))
        })?;
        tracker.record.retrieval = Some(RetrievalReport {
            checkpoints: candidates(&ckpt_hits, &rails),
            adapters: candidates(&adapter_hits, &rails),
            omega_c: policy.omega_c,
            checkpoint_threshold_met: ckpt.threshold_met,
            adapter_decays: loras.decays,
            adapter_threshold: loras.final_threshold,
        });
        let mut trace = ckpt.trace;
        trace.extend(loras.trace);
        let selection = SelectionResult {
            checkpoint: ckpt.record,
            adapters: loras.adapters,
            trace,
        };
        tracker.record.selection = Some(selection.clone());
        let knobs = req.knobs.clone().unwrap_or_else(|| self.config.knobs.clone());
        let workflow = tracker.stage(Stage::Compose, || {
            compose(&map, &selection, &knobs, &policy.negative_query, &rails)
        })?;
        let workflow = tracker.stage(Stage::Refine, || Ok::<_, String>(refine_passthrough(workflow)))?;
        tracker.record.workflow = Some(workflow.clone());
        Some(workflow)
    }

    /// Dry run: everything except generation. Nothing is persisted.
    pub fn compose(&self, req: &RunRequest) -> Result<RunRecord, PipelineError> {
        self.validate_request(req)?;
        let ledger = TokenLedger::new(req.budget.or(self.config.budget));
        let id = format!("dry-{}", hex8(stable_hash([req.prompt.as_bytes()])));
        let mut tracker = Tracker {
            record: self.new_record(RunKind::Compose, id, 0, &req.prompt),
            ledger: &ledger,
            clock: self.config.clock,
        };
        self.plan(req, &mut tracker);
        Ok(tracker.finish())
    }

    /// Full pipeline. Stage failures come back inside the record.
    pub fn run(&self, req: &RunRequest) -> Result<RunRecord, PipelineError> {
        self.validate_request(req)?;
        let ledger = TokenLedger::new(req.budget.or(self.config.budget));
        let (sequence, id) = if req.persist {
            self.store.allocate(&["run", &req.prompt])
        } else {
            (0, format!("ephemeral-{}", hex8(stable_hash([req.prompt.as_bytes()]))))
        };
        info!(run = %id, "starting run");
        let mut tracker = Tracker {
            record: self.new_record(RunKind::Generate, id, sequence, &req.prompt),
            ledger: &ledger,
            clock: self.config.clock,
        };
        if let Some(workflow) = self.plan(req, &mut tracker) {
            if let Some(images) = tracker.stage(Stage::Generate, || self.backend.txt2img(&workflow)) {
                tracker.record.images = images;
            }
        }
        let record = tracker.finish();
        if req.persist {
            self.store.save(&record)?;
        }
        Ok(record)
    }

    /// Unassisted baseline: raw prompt on the base checkpoint, no adapters.
    pub fn run_base(&self, prompt: &str, knobs: &Knobs, persist: bool) -> Result<RunRecord, PipelineError> {
        knobs.validate().map_err(|e| PipelineError::InvalidRequest(e.to_string()))?;
        let ledger = TokenLedger::unlimited();
        let (sequence, id) = if persist {
            self.store.allocate(&["base", prompt])
        } else {
            (0, format!("ephemeral-{}", hex8(stable_hash([b"base".as_slice(), prompt.as_bytes()]))))
        };
        let mut tracker = Tracker {
            record: self.new_record(RunKind::Baseline, id, sequence, prompt),
            ledger: &ledger,
            clock: self.config.clock,
        };
        if prompt.trim().is_empty() {
            return Err(PipelineError::InvalidRequest("prompt is empty".into()));
        }
        let workflow = tracker.stage(Stage::Compose, || {
            let checkpoint_id = match &self.config.base_checkpoint {
                Some(id) => id.clone(),
                None => self
                    .checkpoints()
                    .and_then(|c| c.documents().first().map(|d| d.record.id.clone()))
                    .ok_or_else(|| "no base checkpoint configured and no checkpoint collection loaded".to_string())?,
            };
            let w = GenerationWorkflow {
                checkpoint_id,
                adapters: Vec::new(),
                positive_prompt: prompt.trim().to_string(),
                negative_prompt: self.config.policy.negative_query.clone(),
                cfg_scale: knobs.cfg_scale,
                seed: knobs.seed.unwrap_or_else(|| (rand::random::<u32>() >> 1) as i64),
                width: knobs.width,
                height: knobs.height,
                batch_size: knobs.batch_size,
            };
            Ok::<_, String>(w)
        });
        if let Some(w) = workflow {
            tracker.record.workflow = Some(w.clone());
            if let Some(images) = tracker.stage(Stage::Generate, || self.backend.txt2img(&w)) {
                tracker.record.images = images;
            }
        }
        let record = tracker.finish();
        if persist {
            self.store.save(&record)?;
        }
        Ok(record)
    }

    /// img2img on one image of a stored run, recorded as a child run.
    pub fn refine(&self, run_id: &str, image_index: usize, denoise: Option<f64>) -> Result<RunRecord, PipelineError> {
        let parent = self.store.load(run_id)?;
        let image = parent.images.get(image_index).cloned().ok_or(PipelineError::UnknownImage {
            run: run_id.to_string(),
            index: image_index,
        })?;
        let parent_workflow = parent
            .workflow
            .clone()
            .ok_or_else(|| PipelineError::InvalidRequest(format!("run `{run_id}` has no workflow")))?;
        let denoise = denoise.unwrap_or(self.backend.default_denoise());
        if !(0.0..=1.0).contains(&denoise) {
            return Err(PipelineError::InvalidRequest(format!("denoise {denoise} outside [0, 1]")));
        }
        let index_text = image_index.to_string();
        let seed = (stable_hash([b"refine".as_slice(), run_id.as_bytes(), index_text.as_bytes()]) >> 33) as i64;
        let workflow = GenerationWorkflow {
            seed,
            ..parent_workflow
        };
        let ledger = TokenLedger::unlimited();
        let (sequence, id) = self.store.allocate(&["refine", run_id, &index_text]);
        let mut record = self.new_record(RunKind::Refine, id, sequence, &parent.input_prompt);
        record.parent_id = Some(parent.request_id.clone());
        record.refine_source = Some(RefineSource { image_index, denoise });
        record.concept_map = parent.concept_map.clone();
        record.selection = parent.selection.clone();
        record.workflow = Some(workflow.clone());
        let mut tracker = Tracker {
            record,
            ledger: &ledger,
            clock: self.config.clock,
        };
        if let Some(images) = tracker.stage(Stage::Generate, || self.backend.img2img(&image, &workflow, denoise)) {
            tracker.record.images = images;
        }
        let record = tracker.finish();
        self.store.save(&record)?;
        Ok(record)
    }

    pub fn runs(&self) -> Result<Vec<RunRecord>, PipelineError> {
        self.store.list()
    }

    pub fn get_run(&self, id: &str) -> Result<RunRecord, PipelineError> {
        self.store.load(id)
    }

    pub fn image(&self, id: &str, index: usize) -> Result<GeneratedImage, PipelineError> {
        self.store.image(id, index)
    }

    /// The judge used by [`Pipeline::evaluate`].
    pub fn judge(&self) -> &Gateway {
        &self.judge
    }

    /// Full system against `against` over `prompts`, judged in both orders.
    pub fn evaluate(&self, prompts: &[String], against: SystemMode, criteria: &[Criterion]) -> EvalRun {
        let a = PipelineSource::new(self, SystemMode::Full);
        let b = PipelineSource::new(self, against);
        evaluate_pair(prompts, &a, &b, &self.judge, criteria, &TokenLedger::unlimited())
    }
}

/// Which system a [`PipelineSource`] runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemMode {
    Full,
    NoEnhance,
    Base,
}

impl SystemMode {
    pub fn label(self) -> &'static str {
        match self {
            SystemMode::Full => "full",
            SystemMode::NoEnhance => "no-enhance",
            SystemMode::Base => "base",
        }
    }
}

impl std::str::FromStr for SystemMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "full" => Ok(SystemMode::Full),
            "no-enhance" => Ok(SystemMode::NoEnhance),
            "base" => Ok(SystemMode::Base),
            other => Err(format!("unknown system `{other}` (expected full, no-enhance or base)")),
        }
    }
}

/// Adapts a pipeline mode to the evaluator. Runs are not persisted, and the
/// seed defaults to a hash of the prompt so evaluations are repeatable.
pub struct PipelineSource<'a> {
    pipeline: &'a Pipeline,
    mode: SystemMode,
}

impl<'a> PipelineSource<'a> {
    pub fn new(pipeline: &'a Pipeline, mode: SystemMode) -> Self {
        Self { pipeline, mode }
    }

    fn knobs(&self, prompt: &str) -> Knobs {
        let mut knobs = self.pipeline.config.knobs.clone();
        if knobs.seed.is_none() {
            knobs.seed = Some((stable_hash([prompt.as_bytes()]) >> 33) as i64);
        }
        knobs
    }
}

impl ImageSource for PipelineSource<'_> {
    fn label(&self) -> &str {
        self.mode.label()
    }

    fn generate(&self, prompt: &str, ledger: &TokenLedger) -> Result<Vec<GeneratedImage>, String> {
        let record = match self.mode {
            SystemMode::Base => self.pipeline.run_base(prompt, &self.knobs(prompt), false),
            mode => {
                let mut req = RunRequest::new(prompt);
                req.knobs = Some(self.knobs(prompt));
                req.persist = false;
                if mode == SystemMode::NoEnhance {
                    req.scope = Some(EnhancementScope::None);
                }
                self.pipeline.run(&req)
            }
        }
        .map_err(|e| e.to_string())?;
        let snapshot = record.ledger_snapshot;
        ledger.charge_completion(snapshot.completion_tokens);
        ledger.charge_embedding(snapshot.embedding_tokens);
        match record.failure {
            Some(f) => Err(format!("{} stage: {}", f.stage, f.message)),
            None => Ok(record.images),
        }
    }
}
