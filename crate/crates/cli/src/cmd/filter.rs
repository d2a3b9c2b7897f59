use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::Args;

use instruct_curate::corpus::write_corpus;
use instruct_curate::filters::{FilterKind, FilterPipeline, FilterScorers};
use instruct_curate::scoring::ScorerKind;

use super::{load_corpus, Ctx};
use crate::error::{CliError, CliResult};
use crate::manifest::{sidecar, write_json};

#[derive(Args, Debug)]
pub struct FilterArgs {
    #[arg(long)]
    input: PathBuf,
    /// Surviving samples, responses pruned where paragraphs were dropped
    #[arg(long)]
    output: PathBuf,
    /// Per-sample verdicts; defaults to `<output>.verdicts.jsonl`
    #[arg(long)]
    verdicts: Option<PathBuf>,
    /// Totals; defaults to `<output>.report.json`
    #[arg(long)]
    report: Option<PathBuf>,
}

pub fn run(ctx: &Ctx, args: FilterArgs) -> CliResult<()> {
    let mut manifest = ctx.manifest("filter");
    let cfg = ctx.cfg.filters.clone();
    cfg.check()?;
    let wants = |k: FilterKind| cfg.enabled.contains(&k);
    let scorers = FilterScorers {
        sts: if wants(FilterKind::Sts) { ctx.scorer(ScorerKind::Sts)? } else { None },
        clipscore: if wants(FilterKind::Clipscore) { ctx.scorer(ScorerKind::Clipscore)? } else { None },
        nli: if wants(FilterKind::Nli) { ctx.scorer(ScorerKind::Nli)? } else { None },
    };
    let pipeline = FilterPipeline::new(cfg, scorers)?;

    let verdicts_path = args.verdicts.unwrap_or_else(|| sidecar(&args.output, "verdicts.jsonl"));
    let report_path = args.report.unwrap_or_else(|| sidecar(&args.output, "report.json"));
    manifest.input(&args.input).output(&args.output).output(&verdicts_path).output(&report_path);

    let corpus = load_corpus(&args.input)?;
    let file = File::create(&verdicts_path).map_err(|e| CliError::io(format!("{}: {e}", verdicts_path.display())))?;
    let mut sink = BufWriter::new(file);
    let outcome = pipeline.run(corpus, |v| {
        serde_json::to_writer(&mut sink, v).map_err(std::io::Error::from)?;
        sink.write_all(b"\n")
    })?;
    sink.flush().map_err(|e| CliError::io(format!("{}: {e}", verdicts_path.display())))?;

    write_corpus(&args.output, &outcome.kept)?;
    write_json(&report_path, &outcome.report)?;
    let r = &outcome.report;
    log::info!("kept {}/{} (keep rate {:.4})", r.total_kept, r.total_in, r.keep_rate);
    manifest.count("total_in", r.total_in).count("total_kept", r.total_kept);
    for (kind, n) in &r.per_filter_rejections {
        manifest.count(&format!("rejected_{}", kind.as_str()), *n);
    }
    manifest.finish(&args.output)?;
    Ok(())
}
