use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;

use instruct_curate::corpus::InstructionSample;
use instruct_curate::distortion::{assemble_rewriter_training_set, CaptionSource, CommandPool, Strategy};
use instruct_curate::gateway::rewriter_training_example;
use instruct_curate::jsonl::write_jsonl;

use super::{load_corpus, Ctx};
use crate::error::{CliError, CliResult};

#[derive(Args, Debug)]
pub struct DistortArgs {
    /// Multimodal corpus (LLM-instructed and augmentation source)
    #[arg(long)]
    multimodal: Option<PathBuf>,
    /// Text-only corpus (LLM-instructed and augmentation source)
    #[arg(long)]
    text: Option<PathBuf>,
    /// Captioning corpus carrying `captions`/`boxes` metadata
    #[arg(long)]
    captions: Option<PathBuf>,
    /// Multiplies every target count of the mixture
    #[arg(long)]
    scale: Option<f64>,
    /// Distortion records, one per line
    #[arg(long)]
    output: PathBuf,
    /// Also write prompt/target rewriter examples for the materialized records
    #[arg(long)]
    examples: Option<PathBuf>,
}

pub fn run(ctx: &Ctx, args: DistortArgs) -> CliResult<()> {
    let mut manifest = ctx.manifest("distort");
    let mut mix = ctx.cfg.mix.clone();
    if let Some(s) = args.scale {
        mix.scale = s;
    }
    if !(mix.scale.is_finite() && mix.scale >= 0.0) {
        return Err(CliError::invalid(format!("scale must be a non-negative number, got {}", mix.scale)));
    }
    let mut load = |p: &Option<PathBuf>| -> CliResult<Vec<InstructionSample>> {
        match p {
            Some(p) => {
                manifest.input(p);
                load_corpus(p)
            }
            None => Ok(Vec::new()),
        }
    };
    let multimodal = load(&args.multimodal)?;
    let text = load(&args.text)?;
    let captions = load(&args.captions)?
        .into_iter()
        .map(CaptionSource::from_sample)
        .collect::<Result<Vec<_>, _>>()?;
    let pool = CommandPool::shipped();

    let records = assemble_rewriter_training_set(&multimodal, &text, &captions, &mix, &pool, ctx.seed())?;
    manifest.output(&args.output);
    write_jsonl(&args.output, &records)?;

    let mut per_strategy: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &records {
        let key = match r.strategy {
            Strategy::LlmInstructed => "llm_instructed",
            Strategy::TextAugment => "text_augment",
            Strategy::CaptionBbox => "caption_bbox",
        };
        *per_strategy.entry(key).or_default() += 1;
    }
    let pending = records.iter().filter(|r| r.is_pending()).count();
    if let Some(path) = &args.examples {
        let by_id: BTreeMap<&str, &InstructionSample> = multimodal
            .iter()
            .chain(&text)
            .chain(captions.iter().map(|c| &c.sample))
            .map(|s| (s.id.as_str(), s))
            .collect();
        let examples: Vec<_> = records
            .iter()
            .filter_map(|r| {
                let distorted = r.distorted_response.as_deref()?;
                Some(rewriter_training_example(by_id[r.sample_id.as_str()], distorted, &r.original_response))
            })
            .collect();
        write_jsonl(path, &examples)?;
        manifest.output(path).count("examples", examples.len());
    }
    log::info!("{} distortion records ({pending} awaiting LLM completion)", records.len());
    manifest.count("records", records.len()).count("pending", pending);
    for (k, v) in per_strategy {
        manifest.count(k, v);
    }
    manifest.finish(&args.output)?;
    Ok(())
}
