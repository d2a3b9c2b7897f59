use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::Value;

use instruct_curate::corpus::region::render_markers;
use instruct_curate::corpus::{write_corpus, AdapterRegistry, InstructionSample};

use super::Ctx;
use crate::error::{CliError, CliResult};

#[derive(Args, Debug)]
pub struct ConvertArgs {
    /// Adapter name, as declared in its config file
    #[arg(long)]
    adapter: String,
    /// Adapter config file or directory of them
    #[arg(long, default_value = "configs/adapters")]
    adapters: PathBuf,
    /// Source records, one JSON object per line
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Where image URIs resolve; needed to render region markers
    #[arg(long, requires = "marker_dir")]
    image_root: Option<PathBuf>,
    /// Write marker-annotated copies here and point the samples at them
    #[arg(long, requires = "image_root")]
    marker_dir: Option<PathBuf>,
}

pub fn run(ctx: &Ctx, args: ConvertArgs) -> CliResult<()> {
    let mut manifest = ctx.manifest("convert");
    manifest.input(&args.input).input(&args.adapters).output(&args.output);
    let registry = AdapterRegistry::load(&args.adapters)?;
    let adapter = registry.get(&args.adapter)?;

    let file = File::open(&args.input).map_err(|e| CliError::io(format!("{}: {e}", args.input.display())))?;
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(format!("{}: {e}", args.input.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |msg: String| CliError::invalid(format!("{}: line {}: {msg}", args.input.display(), i + 1));
        let record: Value = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        let sample = adapter.convert(&record).map_err(|e| at(e.to_string()))?;
        if !seen.insert(sample.id.clone()) {
            return Err(at(format!("duplicate id {:?}", sample.id)));
        }
        samples.push(sample);
    }

    let mut rendered = 0;
    if let (Some(root), Some(out_dir)) = (&args.image_root, &args.marker_dir) {
        rendered = render_all(&mut samples, root, out_dir)?;
        manifest.output(out_dir);
    }
    let n = write_corpus(&args.output, &samples)?;
    log::info!("converted {n} records with adapter {}", adapter.name);
    manifest.count("samples", n).count("rendered_images", rendered);
    manifest.finish(&args.output)?;
    Ok(())
}

fn render_all(samples: &mut [InstructionSample], root: &Path, out_dir: &Path) -> CliResult<usize> {
    let mut n = 0;
    for sample in samples {
        for image in sample.images.iter_mut().filter(|i| !i.regions.is_empty()) {
            let src = root.join(&image.uri);
            let bytes = std::fs::read(&src).map_err(|e| CliError::io(format!("{}: {e}", src.display())))?;
            let png = render_markers(image, &image.regions, &bytes)
                .map_err(|e| CliError::invalid(format!("{}: {e}", sample.id)))?;
            let rel = Path::new(&image.uri).with_extension("marked.png");
            let dst = out_dir.join(&rel);
            if let Some(parent) = dst.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&dst, png).map_err(|e| CliError::io(format!("{}: {e}", dst.display())))?;
            image.uri = dst.to_string_lossy().into_owned();
            n += 1;
        }
    }
    Ok(n)
}
