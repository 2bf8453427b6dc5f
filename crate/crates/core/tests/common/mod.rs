#![allow(dead_code)]

use std::path::{Path, PathBuf};

use manta_core::index::{save_snapshot, DocKind};
use manta_core::ingest::{build_collection, load_dataset, IngestOptions};
use manta_core::llm::{Gateway, TokenLedger};
use manta_core::{Config, Pipeline};

pub const SAMURAI: &str = "a techno samurai warrior walking his cyberpunk dog";

pub fn fixture_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/stylus_docs_50.json")
}

/// Ingest the bundled fixture into `data_dir` using the config's embedder.
pub fn ingest_fixture(config: &Config) {
    let ds = load_dataset(&fixture_path()).unwrap();
    let gateway = Gateway::from_config(&config.embedding).unwrap();
    for (kind, name) in [
        (DocKind::Checkpoint, &config.collections.checkpoints),
        (DocKind::Adapter, &config.collections.adapters),
    ] {
        let records: Vec<_> = ds.of_kind(kind).into_iter().map(|e| e.record).collect();
        let col = build_collection(name, &records, &gateway, &TokenLedger::unlimited(), IngestOptions::default()).unwrap();
        save_snapshot(&col, &config.collection_path(name)).unwrap();
    }
}

pub fn pipeline_in(dir: &Path) -> Pipeline {
    let config = Config {
        data_dir: dir.to_path_buf(),
        ..Config::default()
    };
    ingest_fixture(&config);
    Pipeline::open(config).unwrap()
}
