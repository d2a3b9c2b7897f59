//! Unified instruction-sample data model.
//!
//! Every pipeline stage reads and writes [`InstructionSample`] records as JSONL,
//! one object per line. Source datasets are mapped into this shape by the
//! declarative adapters in [`adapter`]; region prompts are burned into images by
//! [`region`].

pub mod adapter;
pub mod region;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use adapter::{AdapterConfig, AdapterError, AdapterRegistry};
pub use region::{render_region_marker, RenderError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Captioning,
    Classification,
    ChangeCaptioning,
    VqaRationale,
    VqaPlain,
    Region,
    TextOnly,
}

impl Category {
    pub fn is_vqa(self) -> bool {
        matches!(self, Category::VqaRationale | Category::VqaPlain)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Captioning => "captioning",
            Category::Classification => "classification",
            Category::ChangeCaptioning => "change_captioning",
            Category::VqaRationale => "vqa_rationale",
            Category::VqaPlain => "vqa_plain",
            Category::Region => "region",
            Category::TextOnly => "text_only",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Box,
    Circle,
    Arrow,
}

impl RegionKind {
    pub fn coord_arity(self) -> usize {
        match self {
            RegionKind::Box => 4,
            RegionKind::Circle => 3,
            RegionKind::Arrow => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerColor {
    Green,
    Red,
    Blue,
}

impl MarkerColor {
    pub fn rgb(self) -> [u8; 3] {
        match self {
            MarkerColor::Green => [0, 255, 0],
            MarkerColor::Red => [255, 0, 0],
            MarkerColor::Blue => [0, 0, 255],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MarkerColor::Green => "green",
            MarkerColor::Red => "red",
            MarkerColor::Blue => "blue",
        }
    }
}

/// A visual prompt drawn onto an image.
///
/// Coordinates are pixels. Boxes are `[x1, y1, x2, y2]` with the right and bottom
/// edges exclusive, circles `[cx, cy, r]`, arrows `[x, y]` (the tip).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionAnnotation {
    pub kind: RegionKind,
    pub coords: Vec<u32>,
    pub color: MarkerColor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl RegionAnnotation {
    pub fn new(kind: RegionKind, coords: Vec<u32>, color: MarkerColor) -> Self {
        RegionAnnotation {
            kind,
            coords,
            color,
            label: None,
        }
    }

    /// Check arity, geometry and that the region lies inside a `width`×`height` image.
    pub fn check_bounds(&self, width: u32, height: u32) -> Result<(), String> {
        let c = &self.coords;
        if c.len() != self.kind.coord_arity() {
            return Err(format!(
                "{:?} region needs {} coordinates, got {}",
                self.kind,
                self.kind.coord_arity(),
                c.len()
            ));
        }
        match self.kind {
            RegionKind::Box => {
                let (x1, y1, x2, y2) = (c[0], c[1], c[2], c[3]);
                if x1 >= x2 || y1 >= y2 {
                    return Err(format!("degenerate box ({x1},{y1},{x2},{y2})"));
                }
                if x2 > width || y2 > height {
                    return Err(format!(
                        "box ({x1},{y1},{x2},{y2}) outside {width}x{height} image"
                    ));
                }
            }
            RegionKind::Circle => {
                let (cx, cy, r) = (c[0] as u64, c[1] as u64, c[2] as u64);
                if r == 0 {
                    return Err("circle radius must be positive".into());
                }
                if cx < r || cy < r || cx + r >= width as u64 || cy + r >= height as u64 {
                    return Err(format!(
                        "circle ({cx},{cy},r={r}) outside {width}x{height} image"
                    ));
                }
            }
            RegionKind::Arrow => {
                if c[0] >= width || c[1] >= height {
                    return Err(format!(
                        "arrow tip ({},{}) outside {width}x{height} image",
                        c[0], c[1]
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub uri: String,
    pub width_px: u32,
    pub height_px: u32,
    #[serde(default)]
    pub regions: Vec<RegionAnnotation>,
}

impl ImageRef {
    pub fn new(uri: impl Into<String>, width_px: u32, height_px: u32) -> Self {
        ImageRef {
            uri: uri.into(),
            width_px,
            height_px,
            regions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub id: String,
    pub source_dataset: String,
    pub category: Category,
    pub instruction: String,
    pub response: String,
    /// Pre-rewrite ground truth. Downstream stages write to `response` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_annotation: Option<String>,
    #[serde(default)]
    pub images: Vec<ImageRef>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl InstructionSample {
    /// Check the per-record invariants (everything except corpus-level id uniqueness).
    pub fn check(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.instruction.trim().is_empty() {
            return Err("empty instruction".into());
        }
        match (self.category, self.images.is_empty()) {
            (Category::TextOnly, false) => {
                return Err(format!(
                    "invariant violation: text_only sample carries {} image(s)",
                    self.images.len()
                ))
            }
            (cat, true) if cat != Category::TextOnly => {
                return Err(format!("invariant violation: {cat} sample has no images"))
            }
            _ => {}
        }
        for (i, img) in self.images.iter().enumerate() {
            if img.width_px == 0 || img.height_px == 0 {
                return Err(format!("image {i} has zero dimension"));
            }
            for region in &img.regions {
                region
                    .check_bounds(img.width_px, img.height_px)
                    .map_err(|e| format!("image {i}: {e}"))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: usize,
    pub errors: Vec<LineError>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Validate a corpus file line by line. The file is only read.
pub fn validate_corpus(path: &Path) -> io::Result<ValidationReport> {
    let reader = BufReader::new(File::open(path)?);
    validate_lines(reader)
}

pub fn validate_lines<R: BufRead>(reader: R) -> io::Result<ValidationReport> {
    let mut report = ValidationReport::default();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let sample: InstructionSample = match serde_json::from_str(&line) {
            Ok(s) => s,
            Err(e) => {
                report.errors.push(LineError {
                    line: lineno,
                    message: format!("parse error: {e}"),
                });
                continue;
            }
        };
        if let Err(message) = sample.check() {
            report.errors.push(LineError {
                line: lineno,
                message,
            });
            continue;
        }
        if !seen.insert(sample.id.clone()) {
            report.errors.push(LineError {
                line: lineno,
                message: format!("duplicate id {:?}", sample.id),
            });
            continue;
        }
        report.valid += 1;
    }
    Ok(report)
}

pub fn read_corpus(path: &Path) -> Result<Vec<InstructionSample>, crate::jsonl::JsonlError> {
    crate::jsonl::read_jsonl(path)
}

pub fn write_corpus(
    path: &Path,
    samples: &[InstructionSample],
) -> Result<usize, crate::jsonl::JsonlError> {
    crate::jsonl::write_jsonl(path, samples)
}
