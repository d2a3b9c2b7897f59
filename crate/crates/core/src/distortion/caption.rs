//! Caption-and-box distortion: the raw captions and object boxes an image was
//! annotated with, laid out the way detailed-description generation was prompted.

use serde::{Deserialize, Serialize};

use super::DistortionError;

pub const LOCATION_PREAMBLE: &str = "The followings are specific object locations within the image, represented as (category: [x1, y1, x2, y2]):";

/// An object box in pixel coordinates `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub label: String,
    pub bbox: [f64; 4],
}

impl LabeledBox {
    pub fn new(label: impl Into<String>, bbox: [f64; 4]) -> Self {
        LabeledBox {
            label: label.into(),
            bbox,
        }
    }
}

/// Newline-joined captions, then (when boxes exist) the location preamble and one
/// line per box with coordinates normalized by the image size to three decimals.
pub fn caption_bbox_distortion(
    captions: &[String],
    boxes: &[LabeledBox],
    image_width: u32,
    image_height: u32,
) -> Result<String, DistortionError> {
    if captions.is_empty() && boxes.is_empty() {
        return Err(DistortionError::EmptyInput);
    }
    let mut lines: Vec<String> = captions.to_vec();
    if !boxes.is_empty() {
        let (w, h) = (image_width.max(1) as f64, image_height.max(1) as f64);
        lines.push(LOCATION_PREAMBLE.to_string());
        for b in boxes {
            let [x1, y1, x2, y2] = b.bbox;
            lines.push(format!(
                "{}: [{:.3}, {:.3}, {:.3}, {:.3}]",
                b.label,
                x1 / w,
                y1 / h,
                x2 / w,
                y2 / h
            ));
        }
    }
    Ok(lines.join("\n"))
}
