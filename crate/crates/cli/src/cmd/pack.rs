use std::collections::HashSet;
use std::path::PathBuf;

use clap::Args;

use instruct_curate::jsonl::write_jsonl;
use instruct_curate::packing::{pack_multiturn, PackManifest, Tokenizer, WhitespaceTokenizer};

use super::{load_corpus, Ctx};
use crate::error::{CliError, CliResult};

#[derive(Args, Debug)]
pub struct PackArgs {
    /// Corpus files, packed together in the order given; repeatable
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    /// Packed sequences, one per line
    #[arg(long)]
    output: PathBuf,
}

pub fn run(ctx: &Ctx, args: PackArgs) -> CliResult<()> {
    let mut manifest = ctx.manifest("pack");
    let mut corpus = Vec::new();
    for path in &args.input {
        manifest.input(path);
        corpus.extend(load_corpus(path)?);
    }
    manifest.output(&args.output);
    let mut seen = HashSet::with_capacity(corpus.len());
    if let Some(dup) = corpus.iter().find(|s| !seen.insert(s.id.as_str())) {
        return Err(CliError::invalid(format!("id {:?} appears in more than one input", dup.id)));
    }
    let cfg = ctx.cfg.pack;
    let tok = WhitespaceTokenizer;
    let sequences = pack_multiturn(&corpus, cfg, &tok, ctx.seed())?;
    write_jsonl(&args.output, &sequences)?;

    let supervised: usize = sequences.iter().map(|s| s.loss_mask.iter().filter(|&&b| b == 1).count()).sum();
    let truncated = sequences.iter().flat_map(|s| &s.turns).filter(|t| t.truncated).count();
    log::info!("packed {} samples into {} sequences of {} tokens", corpus.len(), sequences.len(), cfg.budget);
    manifest
        .count("samples", corpus.len())
        .count("sequences", sequences.len())
        .count("supervised_tokens", supervised)
        .count("truncated_turns", truncated)
        .details(PackManifest {
            budget: cfg.budget,
            max_images: cfg.max_images,
            lookahead: cfg.lookahead,
            seed: ctx.seed(),
            tokenizer: tok.id().to_string(),
            sequences: sequences.len(),
            samples: corpus.len(),
        });
    manifest.finish(&args.output)?;
    Ok(())
}
