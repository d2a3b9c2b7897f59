use std::collections::HashSet;
use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use instruct_curate::corpus::{read_corpus, InstructionSample};
use instruct_curate::scoring::{HttpScorer, ScoreBackend, ScorerHandle, ScorerKind, StubScorer, StubTable};

use crate::config::CurateConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::GlobalArgs;

pub mod convert;
pub mod distort;
pub mod eval;
pub mod filter;
pub mod pack;
pub mod plan;
pub mod rewrite;
pub mod validate;

const SCORER_TIMEOUT: Duration = Duration::from_secs(60);

/// Shared state for one invocation.
pub struct Ctx {
    pub global: GlobalArgs,
    pub cfg: CurateConfig,
    pub config_hash: String,
    backend: OnceLock<Option<Arc<dyn ScoreBackend>>>,
}

impl Ctx {
    pub fn new(global: GlobalArgs, cfg: CurateConfig) -> Self {
        let config_hash = cfg.hash();
        Ctx { global, cfg, config_hash, backend: OnceLock::new() }
    }

    pub fn seed(&self) -> u64 {
        self.global.seed
    }

    pub fn manifest(&self, command: &str) -> ManifestBuilder {
        ManifestBuilder::start(command, &self.config_hash, self.seed())
    }

    fn backend(&self) -> CliResult<Option<Arc<dyn ScoreBackend>>> {
        if let Some(b) = self.backend.get() {
            return Ok(b.clone());
        }
        let built: Option<Arc<dyn ScoreBackend>> = match (&self.global.stub_scorers, &self.global.scorer_endpoint) {
            (Some(path), _) => {
                let table = StubTable::load(path)?;
                log::info!("scoring from stub table {} ({})", path.display(), table.model_id);
                Some(Arc::new(StubScorer::new(table)))
            }
            (None, Some(url)) => {
                let token = std::env::var("PF_SCORER_TOKEN").ok();
                let client = HttpScorer::new(url, token, SCORER_TIMEOUT)?;
                let health = client.health()?;
                log::info!("scoring service at {url}: {}", health.status);
                Some(Arc::new(client))
            }
            (None, None) => None,
        };
        Ok(self.backend.get_or_init(|| built).clone())
    }

    /// A scorer of `kind`, if any scorer source was given.
    pub fn scorer(&self, kind: ScorerKind) -> CliResult<Option<ScorerHandle>> {
        Ok(self.backend()?.map(|b| ScorerHandle::new(kind, b)))
    }

    pub fn require_scorer(&self, kind: ScorerKind) -> CliResult<ScorerHandle> {
        self.scorer(kind)?.ok_or_else(|| {
            CliError::invalid(format!("a {kind} scorer is needed: pass --stub-scorers or --scorer-endpoint"))
        })
    }
}

/// Read a corpus and reject duplicate ids.
pub fn load_corpus(path: &Path) -> CliResult<Vec<InstructionSample>> {
    let corpus = read_corpus(path)?;
    let mut seen = HashSet::with_capacity(corpus.len());
    for (i, s) in corpus.iter().enumerate() {
        if !seen.insert(s.id.as_str()) {
            return Err(CliError::invalid(format!(
                "{}: line {}: duplicate id {:?}",
                path.display(),
                i + 1,
                s.id
            )));
        }
        s.check()
            .map_err(|e| CliError::invalid(format!("{}: line {}: {e}", path.display(), i + 1)))?;
    }
    Ok(corpus)
}
