use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::Args;

use instruct_curate::corpus::write_corpus;
use instruct_curate::gateway::{DiskCache, GatewayError, HttpEndpoint, RewriteGateway, RewriteRequest};

use super::{load_corpus, Ctx};
use crate::error::{CliError, CliResult};

#[derive(Args, Debug)]
pub struct RewriteArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Base URL of the generation service (`POST <url>/generate`)
    #[arg(long, required_unless_present = "cache_only", conflicts_with = "cache_only")]
    endpoint: Option<String>,
    /// Serve every rewrite from the cache; a miss fails the run
    #[arg(long)]
    cache_only: bool,
    /// Response cache directory; falls back to PF_CACHE_DIR
    #[arg(long, env = "PF_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    /// Identity baked into cache keys; keep it fixed across endpoint and cache-only runs
    #[arg(long, default_value = "rewriter")]
    endpoint_id: String,
    /// Per-request timeout in seconds
    #[arg(long, default_value_t = 120)]
    timeout: u64,
}

pub fn run(ctx: &Ctx, args: RewriteArgs) -> CliResult<()> {
    let mut manifest = ctx.manifest("rewrite");
    manifest.input(&args.input).output(&args.output);
    let corpus = load_corpus(&args.input)?;

    let cache = match &args.cache_dir {
        Some(dir) => Some(DiskCache::open(dir).map_err(|e| CliError::io(format!("cache {}: {e}", dir.display())))?),
        None => None,
    };
    let cfg = ctx.cfg.gateway.clone();
    let gateway = if args.cache_only {
        let cache = cache.ok_or_else(|| CliError::invalid("--cache-only needs --cache-dir or PF_CACHE_DIR"))?;
        RewriteGateway::cache_only(args.endpoint_id.clone(), cache, cfg)
    } else {
        let url = args.endpoint.as_deref().expect("clap requires an endpoint");
        let token = std::env::var("PF_ENDPOINT_TOKEN").ok();
        let endpoint = HttpEndpoint::new(url, Some(args.endpoint_id.clone()), token, Duration::from_secs(args.timeout))
            .map_err(|e| CliError::io(e.to_string()))?;
        RewriteGateway::new(Arc::new(endpoint), cache, cfg)
    };

    let mut requests = Vec::new();
    for s in corpus.iter().filter(|s| s.raw_annotation.is_some()) {
        requests.push(gateway.request_for(s)?);
    }
    let n_requests = requests.len();

    // Stop handing out work after the first fatal failure; in-flight calls drain.
    let abort = AtomicBool::new(false);
    let feed = requests.into_iter().take_while(|_: &RewriteRequest| !abort.load(Ordering::SeqCst));
    let mut rewritten: HashMap<String, String> = HashMap::with_capacity(n_requests);
    let mut dropped = Vec::new();
    let mut fatal: Option<GatewayError> = None;
    let mut from_cache = 0;
    gateway.batch_rewrite(feed, |outcome| match outcome {
        Ok(r) => {
            from_cache += r.from_cache as usize;
            rewritten.insert(r.sample_id, r.rewritten);
        }
        Err(GatewayError::MalformedResponse { sample_id, message }) => {
            log::warn!("dropping {sample_id:?}: {message}");
            dropped.push(sample_id);
        }
        Err(e) => {
            abort.store(true, Ordering::SeqCst);
            fatal.get_or_insert(e);
        }
    });
    if let Some(e) = fatal {
        return Err(e.into());
    }

    let mut out = Vec::with_capacity(corpus.len());
    let mut passthrough = 0;
    for mut s in corpus {
        if s.raw_annotation.is_none() {
            passthrough += 1;
            out.push(s);
        } else if let Some(text) = rewritten.remove(&s.id) {
            s.response = text;
            out.push(s);
        }
    }
    dropped.sort();
    write_corpus(&args.output, &out)?;
    log::info!(
        "rewrote {} samples ({from_cache} from cache, {} endpoint calls), dropped {}",
        n_requests - dropped.len(),
        gateway.endpoint_calls(),
        dropped.len()
    );
    manifest
        .count("requests", n_requests)
        .count("rewritten", n_requests - dropped.len())
        .count("from_cache", from_cache)
        .count("endpoint_calls", gateway.endpoint_calls())
        .count("dropped_malformed", dropped.len())
        .count("passthrough", passthrough)
        .count("samples_out", out.len())
        .details(serde_json::json!({ "dropped": dropped, "endpoint_id": args.endpoint_id }));
    if let Some(dir) = &args.cache_dir {
        manifest.input(dir);
    }
    manifest.finish(&args.output)?;
    Ok(())
}
