use std::path::{Path, PathBuf};

use clap::Args;

use instruct_curate::tuning_plan::{emit_u_shaped_plan, materialize_mixes};

use super::{load_corpus, Ctx};
use crate::error::{CliError, CliResult};
use crate::manifest::write_json;

#[derive(Args, Debug)]
pub struct PlanArgs {
    /// Plan document (JSON)
    #[arg(long)]
    output: PathBuf,
    /// Filtered rewritten corpus; with --text and --llava, also emit the per-stage id lists
    #[arg(long, requires_all = ["text", "llava", "mix_output"])]
    pf: Option<PathBuf>,
    #[arg(long, requires = "pf")]
    text: Option<PathBuf>,
    #[arg(long, requires = "pf")]
    llava: Option<PathBuf>,
    #[arg(long, requires = "pf")]
    mix_output: Option<PathBuf>,
}

fn ids(path: &Path) -> CliResult<Vec<String>> {
    Ok(load_corpus(path)?.into_iter().map(|s| s.id).collect())
}

pub fn run(ctx: &Ctx, args: PlanArgs) -> CliResult<()> {
    let mut manifest = ctx.manifest("plan");
    let plan = emit_u_shaped_plan(&ctx.cfg.plan)?;
    write_json(&args.output, &plan)?;
    manifest.output(&args.output).count("stages", plan.stages.len());

    if let (Some(pf), Some(text), Some(llava), Some(out)) = (&args.pf, &args.text, &args.llava, &args.mix_output) {
        let mixes = materialize_mixes(&ids(pf)?, &ids(text)?, &ids(llava)?, ctx.seed())?;
        write_json(out, &mixes)?;
        manifest.input(pf).input(text).input(llava).output(out);
        manifest
            .count("stage1_samples", mixes.stage1.len())
            .count("stage2_samples", mixes.stage2.len())
            .count("stage3_samples", mixes.stage3.len());
    } else if args.pf.is_some() {
        return Err(CliError::invalid("--pf needs --text, --llava and --mix-output"));
    }
    log::info!("plan written to {} (provenance {})", args.output.display(), &plan.provenance[..12]);
    manifest.details(&plan).finish(&args.output)?;
    Ok(())
}
