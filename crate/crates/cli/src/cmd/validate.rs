use std::path::PathBuf;

use clap::Args;

use instruct_curate::corpus::validate_corpus;

use super::Ctx;
use crate::error::{CliError, CliResult};
use crate::manifest::{sidecar, write_json};

#[derive(Args, Debug)]
pub struct ValidateArgs {
    input: PathBuf,
    /// Report path; defaults to `<input>.validation.json`
    #[arg(long)]
    report: Option<PathBuf>,
}

pub fn run(ctx: &Ctx, args: ValidateArgs) -> CliResult<()> {
    let mut manifest = ctx.manifest("validate");
    let report_path = args.report.unwrap_or_else(|| sidecar(&args.input, "validation.json"));
    manifest.input(&args.input).output(&report_path);
    let report = validate_corpus(&args.input).map_err(|e| CliError::io(format!("{}: {e}", args.input.display())))?;
    write_json(&report_path, &report)?;
    manifest.count("valid", report.valid).count("errors", report.errors.len());
    manifest.finish(&report_path)?;
    if let Some(first) = report.errors.first() {
        return Err(CliError::invalid(format!(
            "{}: {} invalid line(s); first at line {}: {}",
            args.input.display(),
            report.errors.len(),
            first.line,
            first.message
        )));
    }
    log::info!("{}: {} valid samples", args.input.display(), report.valid);
    Ok(())
}
