//! Declarative source-dataset adapters.
//!
//! An adapter is a field mapping plus template strings, loaded from TOML. Templates
//! reference record fields as `{field}` (dotted paths reach into nested objects,
//! `{{` and `}}` are literal braces). Adding a dataset means adding a config file.
//!
//! ```toml
//! name = "elevater"
//! source_dataset = "ELEVATER-IC"
//! category = "classification"
//! id_field = "id"
//!
//! [images]
//! uri = "image"
//! width = "width"
//! height = "height"
//!
//! [instruction]
//! template = "What is this?"
//!
//! [annotation]
//! template = "a photo of a {class}."
//! append = ["knowledge"]
//! ```

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Category, ImageRef, InstructionSample, MarkerColor, RegionAnnotation, RegionKind};
use crate::distortion::caption::{caption_bbox_distortion, LabeledBox};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AdapterError {
    #[error("schema error: field {0:?} missing, empty or ill-typed")]
    Schema(String),
    #[error("unknown adapter {0:?}")]
    UnknownAdapter(String),
    #[error("converted sample is invalid: {0}")]
    Invalid(String),
    #[error("bad adapter config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSpec {
    pub template: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageFields {
    /// String field, or array field for multi-image records.
    pub uri: String,
    pub width: String,
    pub height: String,
}

/// How the raw annotation (and initial response) is rendered.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationSpec {
    #[serde(default)]
    pub template: Option<String>,
    /// Optional fields appended after the template, space-separated, when present.
    #[serde(default)]
    pub append: Vec<String>,
    /// Caption list field (string or array); rendered through the caption/box layout.
    #[serde(default)]
    pub captions: Option<String>,
    /// Array of `{label, bbox: [x1, y1, x2, y2]}` objects in pixels.
    #[serde(default)]
    pub boxes: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionFields {
    pub kind: RegionKind,
    pub coords: String,
    pub color: MarkerColor,
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterConfig {
    pub name: String,
    pub source_dataset: String,
    pub category: Category,
    pub id_field: String,
    #[serde(default)]
    pub images: Option<ImageFields>,
    pub instruction: TemplateSpec,
    pub annotation: AnnotationSpec,
    #[serde(default)]
    pub region: Option<RegionFields>,
    /// Record fields copied verbatim into `metadata`.
    #[serde(default)]
    pub metadata: Vec<String>,
}

impl AdapterConfig {
    pub fn from_toml(text: &str) -> Result<Self, AdapterError> {
        let cfg: AdapterConfig =
            toml::from_str(text).map_err(|e| AdapterError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), AdapterError> {
        let a = &self.annotation;
        if a.template.is_none() && a.captions.is_none() {
            return Err(AdapterError::Config(format!(
                "{}: annotation needs a template or a captions field",
                self.name
            )));
        }
        if (self.category == Category::TextOnly) != self.images.is_none() {
            return Err(AdapterError::Config(format!(
                "{}: images mapping must be present exactly when category is not text_only",
                self.name
            )));
        }
        if self.region.is_some() && self.images.is_none() {
            return Err(AdapterError::Config(format!(
                "{}: region mapping needs an images mapping",
                self.name
            )));
        }
        Ok(())
    }

    /// Convert one source record into a validated sample.
    pub fn convert(&self, record: &Value) -> Result<InstructionSample, AdapterError> {
        let id_value = scalar_text(record, &self.id_field)?;
        let mut images = match &self.images {
            Some(fields) => extract_images(record, fields)?,
            None => Vec::new(),
        };
        if let Some(region) = &self.region {
            let annotation = extract_region(record, region)?;
            images
                .first_mut()
                .ok_or_else(|| AdapterError::Schema(self.images.as_ref().unwrap().uri.clone()))?
                .regions
                .push(annotation);
        }

        let instruction = render_template(&self.instruction.template, record)?;
        let rendered = self.render_annotation(record, &images)?;

        let mut metadata = BTreeMap::new();
        for field in &self.metadata {
            if let Some(v) = lookup(record, field) {
                let text = match v {
                    Value::String(s) => s.clone(),
                    Value::Null => continue,
                    other => other.to_string(),
                };
                metadata.insert(field.clone(), text);
            }
        }

        let raw_annotation = match self.category {
            Category::TextOnly => None,
            _ => Some(rendered.clone()),
        };
        let sample = InstructionSample {
            id: format!("{}/{}", self.name, id_value),
            source_dataset: self.source_dataset.clone(),
            category: self.category,
            instruction,
            response: rendered,
            raw_annotation,
            images,
            metadata,
        };
        sample.check().map_err(AdapterError::Invalid)?;
        Ok(sample)
    }

    fn render_annotation(
        &self,
        record: &Value,
        images: &[ImageRef],
    ) -> Result<String, AdapterError> {
        let spec = &self.annotation;
        let mut parts: Vec<String> = Vec::new();
        if let Some(field) = &spec.captions {
            let captions = string_list(record, field)?;
            let boxes = match &spec.boxes {
                Some(bf) => extract_boxes(record, bf)?,
                None => Vec::new(),
            };
            let (w, h) = images
                .first()
                .map(|i| (i.width_px, i.height_px))
                .unwrap_or((1, 1));
            let text = caption_bbox_distortion(&captions, &boxes, w, h)
                .map_err(|_| AdapterError::Schema(field.clone()))?;
            parts.push(text);
        }
        if let Some(template) = &spec.template {
            parts.push(render_template(template, record)?);
        }
        let mut text = parts.join("\n");
        for field in &spec.append {
            match lookup(record, field) {
                None | Some(Value::Null) => {}
                Some(Value::String(s)) => {
                    let s = s.trim();
                    if !s.is_empty() {
                        text.push(' ');
                        text.push_str(s);
                    }
                }
                Some(_) => return Err(AdapterError::Schema(field.clone())),
            }
        }
        Ok(text)
    }
}

/// Named adapters loaded from configs.
#[derive(Debug, Clone, Default)]
pub struct AdapterRegistry {
    adapters: HashMap<String, AdapterConfig>,
}

impl AdapterRegistry {
    pub fn new(configs: impl IntoIterator<Item = AdapterConfig>) -> Self {
        AdapterRegistry {
            adapters: configs.into_iter().map(|c| (c.name.clone(), c)).collect(),
        }
    }

    /// Load a single `.toml` file, or every `.toml` file in a directory.
    pub fn load(path: &Path) -> Result<Self, AdapterError> {
        let mut files = Vec::new();
        if path.is_dir() {
            let entries = std::fs::read_dir(path)
                .map_err(|e| AdapterError::Config(format!("{}: {e}", path.display())))?;
            for entry in entries {
                let p = entry
                    .map_err(|e| AdapterError::Config(e.to_string()))?
                    .path();
                if p.extension().is_some_and(|e| e == "toml") {
                    files.push(p);
                }
            }
            files.sort();
        } else {
            files.push(path.to_path_buf());
        }
        let mut configs = Vec::new();
        for f in files {
            let text = std::fs::read_to_string(&f)
                .map_err(|e| AdapterError::Config(format!("{}: {e}", f.display())))?;
            configs.push(AdapterConfig::from_toml(&text)?);
        }
        Ok(Self::new(configs))
    }

    pub fn get(&self, name: &str) -> Result<&AdapterConfig, AdapterError> {
        self.adapters
            .get(name)
            .ok_or_else(|| AdapterError::UnknownAdapter(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.adapters.keys().map(String::as_str).collect();
        v.sort_unstable();
        v
    }

    pub fn convert(&self, adapter: &str, record: &Value) -> Result<InstructionSample, AdapterError> {
        self.get(adapter)?.convert(record)
    }
}

fn lookup<'a>(record: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(record, |v, key| v.get(key))
}

fn scalar_text(record: &Value, field: &str) -> Result<String, AdapterError> {
    match lookup(record, field) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(Value::Bool(b)) => Ok(b.to_string()),
        _ => Err(AdapterError::Schema(field.to_string())),
    }
}

fn render_template(template: &str, record: &Value) -> Result<String, AdapterError> {
    let mut out = String::with_capacity(template.len());
    let mut chars = template.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                out.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                out.push('}');
            }
            '{' => {
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some(ch) => name.push(ch),
                        None => {
                            return Err(AdapterError::Config(format!(
                                "unterminated placeholder in {template:?}"
                            )))
                        }
                    }
                }
                out.push_str(scalar_text(record, name.trim())?.trim());
            }
            _ => out.push(c),
        }
    }
    Ok(out)
}

fn string_list(record: &Value, field: &str) -> Result<Vec<String>, AdapterError> {
    let schema = || AdapterError::Schema(field.to_string());
    let items: Vec<String> = match lookup(record, field) {
        Some(Value::String(s)) => vec![s.clone()],
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().map(str::to_string).ok_or_else(schema))
            .collect::<Result<_, _>>()?,
        _ => return Err(schema()),
    };
    let items: Vec<String> = items
        .into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        return Err(schema());
    }
    Ok(items)
}

fn as_u32(v: &Value) -> Option<u32> {
    let f = v.as_f64()?;
    (f >= 0.0 && f <= u32::MAX as f64).then(|| f.round() as u32)
}

/// Scalar or array field, as a list.
fn scalar_or_array<'a>(record: &'a Value, field: &str) -> Result<Vec<&'a Value>, AdapterError> {
    match lookup(record, field) {
        Some(Value::Array(items)) if !items.is_empty() => Ok(items.iter().collect()),
        Some(Value::Null) | None | Some(Value::Array(_)) => {
            Err(AdapterError::Schema(field.to_string()))
        }
        Some(v) => Ok(vec![v]),
    }
}

fn extract_images(record: &Value, fields: &ImageFields) -> Result<Vec<ImageRef>, AdapterError> {
    let uris = scalar_or_array(record, &fields.uri)?;
    let widths = scalar_or_array(record, &fields.width)?;
    let heights = scalar_or_array(record, &fields.height)?;
    let n = uris.len();
    fn pick<'v>(vals: &[&'v Value], i: usize) -> &'v Value {
        if vals.len() == 1 {
            vals[0]
        } else {
            vals[i]
        }
    }
    if (widths.len() != 1 && widths.len() != n) || (heights.len() != 1 && heights.len() != n) {
        return Err(AdapterError::Schema(fields.width.clone()));
    }
    (0..n)
        .map(|i| {
            let uri = uris[i]
                .as_str()
                .filter(|s| !s.is_empty())
                .ok_or_else(|| AdapterError::Schema(fields.uri.clone()))?;
            let w = as_u32(pick(&widths, i))
                .filter(|&w| w > 0)
                .ok_or_else(|| AdapterError::Schema(fields.width.clone()))?;
            let h = as_u32(pick(&heights, i))
                .filter(|&h| h > 0)
                .ok_or_else(|| AdapterError::Schema(fields.height.clone()))?;
            Ok(ImageRef::new(uri, w, h))
        })
        .collect()
}

fn extract_region(record: &Value, fields: &RegionFields) -> Result<RegionAnnotation, AdapterError> {
    let schema = || AdapterError::Schema(fields.coords.clone());
    let coords = lookup(record, &fields.coords)
        .and_then(Value::as_array)
        .ok_or_else(schema)?
        .iter()
        .map(|v| as_u32(v).ok_or_else(schema))
        .collect::<Result<Vec<u32>, _>>()?;
    if coords.len() != fields.kind.coord_arity() {
        return Err(schema());
    }
    let label = match &fields.label {
        Some(f) => Some(scalar_text(record, f)?),
        None => None,
    };
    Ok(RegionAnnotation {
        kind: fields.kind,
        coords,
        color: fields.color,
        label,
    })
}

fn extract_boxes(record: &Value, field: &str) -> Result<Vec<LabeledBox>, AdapterError> {
    let schema = || AdapterError::Schema(field.to_string());
    let items = match lookup(record, field) {
        None | Some(Value::Null) => return Ok(Vec::new()),
        Some(Value::Array(items)) => items,
        Some(_) => return Err(schema()),
    };
    items
        .iter()
        .map(|item| {
            let label = item
                .get("label")
                .and_then(Value::as_str)
                .ok_or_else(schema)?;
            let bbox = item
                .get("bbox")
                .and_then(Value::as_array)
                .filter(|b| b.len() == 4)
                .ok_or_else(schema)?;
            let mut c = [0f64; 4];
            for (slot, v) in c.iter_mut().zip(bbox) {
                *slot = v.as_f64().ok_or_else(schema)?;
            }
            Ok(LabeledBox::new(label, c))
        })
        .collect()
}
