mod common;

use common::{pipeline_in, SAMURAI};
use manta_core::backend::STUB_FEATURE_DIM;
use manta_core::llm::count_tokens;
use manta_core::pipeline::{PipelineError, RunKind, Stage, SystemMode};
use manta_core::workflow::parse_lora_tags;
use manta_core::{Config, Pipeline, RunRequest};

fn seeded(prompt: &str) -> RunRequest {
    RunRequest::new(prompt).with_seed(42)
}

#[test]
fn samurai_prompt_runs_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline_in(dir.path());
    let r = p.run(&seeded(SAMURAI)).unwrap();
    assert!(r.succeeded(), "{:?}", r.failure);
    assert_eq!(
        r.stages(),
        [
            Stage::Decompose,
            Stage::Enhance,
            Stage::BuildQueries,
            Stage::SelectCheckpoint,
            Stage::SelectAdapters,
            Stage::Compose,
            Stage::Refine,
            Stage::Generate,
        ]
    );
    let map = r.concept_map.as_ref().unwrap();
    assert_eq!(map.main().name(), "techno samurai warrior");
    let support: Vec<_> = map.support().iter().map(|c| c.name()).collect();
    assert_eq!(support, ["cyberpunk dog"]);
    assert_eq!(map.main().details().len(), 8);
    let w = r.workflow.as_ref().unwrap();
    assert_eq!(w.seed, 42);
    assert_eq!(r.images.len(), w.batch_size as usize);
    assert!(r.images.iter().all(|i| i.feature_vector.as_ref().unwrap().len() == STUB_FEATURE_DIM));
    let tagged: Vec<_> = parse_lora_tags(&w.positive_prompt).into_iter().map(|a| a.id).collect();
    let selected: Vec<_> = r.selection.as_ref().unwrap().adapters.iter().map(|a| a.record.id.clone()).collect();
    assert_eq!(tagged, selected);
}

#[test]
fn stage_tokens_sum_to_ledger_total() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline_in(dir.path());
    let r = p.run(&seeded(SAMURAI)).unwrap();
    let per_stage: u64 = r.timings.iter().map(|t| t.tokens).sum();
    assert_eq!(per_stage, r.ledger_snapshot.total());
    // Decomposition is one completion: rendered template plus the reply.
    let decompose = r.timings.iter().find(|t| t.stage == Stage::Decompose).unwrap();
    let rendered = p.render_decomposition_prompt(SAMURAI);
    assert!(decompose.tokens > count_tokens(&rendered));
    // Query embedding charges every query text exactly once.
    let queries = manta_core::gating::query_texts(r.concept_map.as_ref().unwrap(), &p.config().policy);
    let embed = r.timings.iter().find(|t| t.stage == Stage::BuildQueries).unwrap();
    assert_eq!(embed.tokens, queries.iter().map(|q| count_tokens(q)).sum::<u64>());
    assert_eq!(r.ledger_snapshot.embedding_tokens, embed.tokens);
}

#[test]
fn empty_prompt_stops_at_decompose() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline_in(dir.path());
    let r = p.run(&seeded("   ")).unwrap();
    let failure = r.failure.as_ref().unwrap();
    assert_eq!(failure.stage, Stage::Decompose);
    assert_eq!(r.stages(), [Stage::Decompose]);
    assert!(r.workflow.is_none() && r.images.is_empty());
    assert_eq!(r.ledger_snapshot.total(), 0);
}

#[test]
fn budget_exhaustion_is_a_stage_failure() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline_in(dir.path());
    let mut req = seeded(SAMURAI);
    req.budget = Some(200);
    let r = p.run(&req).unwrap();
    let failure = r.failure.clone().unwrap();
    assert_eq!(failure.stage, Stage::Enhance);
    assert!(failure.message.contains("budget"), "{}", failure.message);
    assert!(r.ledger_snapshot.total() <= 200);
    assert!(!r.stages().contains(&Stage::BuildQueries));
}

#[test]
fn runs_persist_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline_in(dir.path());
    let first = p.run(&seeded(SAMURAI)).unwrap();
    let second = p.run(&seeded("a red fox in a snowy forest")).unwrap();
    assert_eq!(p.get_run(&first.request_id).unwrap(), first);
    let reopened = Pipeline::open(p.config().clone()).unwrap();
    let listed: Vec<_> = reopened.runs().unwrap().into_iter().map(|r| r.request_id).collect();
    assert_eq!(listed, [first.request_id.clone(), second.request_id.clone()]);
    assert_eq!(reopened.image(&first.request_id, 1).unwrap(), first.images[1]);
    let third = reopened.run(&seeded(SAMURAI)).unwrap();
    assert_eq!(third.sequence, 3);
    assert!(matches!(
        reopened.image(&first.request_id, 9),
        Err(PipelineError::UnknownImage { index: 9, .. })
    ));
}

#[test]
fn same_inputs_same_record_in_fresh_stores() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = pipeline_in(d1.path()).run(&seeded(SAMURAI)).unwrap();
    let b = pipeline_in(d2.path()).run(&seeded(SAMURAI)).unwrap();
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn edited_concept_map_skips_decomposition() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline_in(dir.path());
    let composed = p.compose(&seeded(SAMURAI)).unwrap();
    assert_eq!(composed.kind, RunKind::Compose);
    assert!(composed.images.is_empty());
    assert!(p.runs().unwrap().is_empty());
    let map = composed.concept_map.unwrap();
    let dropped = map.main().details()[0].clone();
    let kept: Vec<String> = map.main().details()[1..].to_vec();
    let edited_main = manta_core::concept::Concept::new(map.main().name(), map.main().styles().to_vec(), kept).unwrap();
    let mut req = seeded(SAMURAI);
    req.concept_map = Some(map.clone().with_main(edited_main));
    let r = p.run(&req).unwrap();
    assert_eq!(r.stages()[0], Stage::BuildQueries);
    let prompt = &r.workflow.unwrap().positive_prompt;
    assert!(!prompt.contains(&dropped), "{prompt}");
}

#[test]
fn request_guardrails_exclude_adapters() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline_in(dir.path());
    let baseline = p.run(&seeded(SAMURAI)).unwrap();
    let excluded = baseline.selection.unwrap().adapters[0].record.id.clone();
    let mut req = seeded(SAMURAI);
    req.guardrails = Some(manta_core::gating::Guardrails::parse(&format!("id:{excluded}")));
    let r = p.run(&req).unwrap();
    let ids: Vec<_> = r.selection.unwrap().adapters.into_iter().map(|a| a.record.id).collect();
    assert!(!ids.contains(&excluded));
    assert!(r.retrieval.unwrap().adapters.iter().all(|c| c.id != excluded));
}

#[test]
fn refine_links_child_to_parent() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline_in(dir.path());
    let parent = p.run(&seeded(SAMURAI)).unwrap();
    let child = p.refine(&parent.request_id, 0, Some(0.5)).unwrap();
    assert_eq!(child.kind, RunKind::Refine);
    assert_eq!(child.parent_id.as_deref(), Some(parent.request_id.as_str()));
    assert_eq!(child.stages(), [Stage::Generate]);
    let parent_features = parent.images[0].feature_vector.clone().unwrap();
    assert!(child.images.iter().all(|i| i.feature_vector.as_ref().unwrap() != &parent_features));

    let still = p.refine(&parent.request_id, 0, Some(0.0)).unwrap();
    assert!(still.images.iter().all(|i| i.feature_vector.as_ref().unwrap() == &parent_features));
    assert_eq!(p.get_run(&still.request_id).unwrap(), still);

    assert!(matches!(p.refine("run-999999-deadbeef", 0, None), Err(PipelineError::UnknownRun(_))));
    assert!(matches!(p.refine(&parent.request_id, 7, None), Err(PipelineError::UnknownImage { .. })));
    assert!(matches!(p.refine("../etc", 0, None), Err(PipelineError::UnknownRun(_))));
    assert!(matches!(p.refine(&parent.request_id, 0, Some(1.5)), Err(PipelineError::InvalidRequest(_))));
}

#[test]
fn missing_collections_fail_at_selection() {
    let dir = tempfile::tempdir().unwrap();
    let config = manta_core::Config {
        data_dir: dir.path().to_path_buf(),
        ..Default::default()
    };
    let p = Pipeline::open(config).unwrap();
    let r = p.run(&seeded(SAMURAI)).unwrap();
    assert_eq!(r.failure.unwrap().stage, Stage::SelectCheckpoint);
}

#[test]
fn invalid_knobs_are_rejected_up_front() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline_in(dir.path());
    let mut req = seeded(SAMURAI);
    req.knobs.as_mut().unwrap().width = 100;
    assert!(matches!(p.run(&req), Err(PipelineError::InvalidRequest(_))));
    req = seeded(SAMURAI);
    req.details = Some(0);
    assert!(matches!(p.compose(&req), Err(PipelineError::InvalidRequest(_))));
}

#[test]
fn baseline_and_no_enhance_modes() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline_in(dir.path());
    let knobs = manta_core::workflow::Knobs {
        seed: Some(5),
        ..Default::default()
    };
    let base = p.run_base(SAMURAI, &knobs, true).unwrap();
    assert_eq!(base.kind, RunKind::Baseline);
    let w = base.workflow.unwrap();
    assert_eq!(w.positive_prompt, SAMURAI);
    assert!(w.adapters.is_empty());
    assert_eq!(w.checkpoint_id, p.checkpoints().unwrap().documents()[0].record.id);
    assert_eq!(base.ledger_snapshot.total(), 0);

    let mut req = seeded(SAMURAI);
    req.scope = Some(manta_core::enhance::EnhancementScope::None);
    let plain = p.run(&req).unwrap();
    assert!(plain.concept_map.unwrap().main().details().is_empty());
    assert_eq!(SystemMode::NoEnhance.label(), "no-enhance");
    assert_eq!("no_enhance".parse::<SystemMode>().unwrap(), SystemMode::NoEnhance);
}

#[test]
fn concurrent_runs_get_distinct_ids() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline_in(dir.path());
    let ids: Vec<String> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..4)
            .map(|i| {
                let p = &p;
                s.spawn(move || p.run(&RunRequest::new(format!("{SAMURAI} {i}")).with_seed(i)).unwrap().request_id)
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut unique = ids.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(unique.len(), 4);
    assert_eq!(p.runs().unwrap().len(), 4);
}

#[test]
fn example_config_loads() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../manta.example.toml");
    let config = Config::load(&path).unwrap();
    assert_eq!(config.backend.mode, manta_core::backend::BackendMode::Http);
    assert_eq!(config.llm.api_key_env.as_deref(), Some("OPENAI_API_KEY"));
    assert_eq!(config.budget, Some(8000));
    let rails = config.guardrails.resolve(&config.data_dir).unwrap();
    assert!(rails.id_blacklist.contains("nsfw-pinup"));
}
