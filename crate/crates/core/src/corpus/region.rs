//! Burn region prompts (boxes, circles, arrows) into images.
//!
//! Geometry is fixed: 4 px strokes for boxes and rings, arrows are filled isosceles
//! triangles 24 px tall with a 16 px base whose apex sits on the target pixel.
//! Markers are drawn at native resolution; resizing is left to the consumer.

use std::io::Cursor;

use image::{DynamicImage, ImageFormat, Rgb, RgbImage, Rgba, RgbaImage};

use super::{ImageRef, RegionAnnotation, RegionKind};

pub const STROKE_PX: u32 = 4;
pub const ARROW_HEIGHT_PX: i64 = 24;
pub const ARROW_HALF_BASE_PX: i64 = 8;

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("region out of bounds: {0}")]
    OutOfBounds(String),
    #[error("could not decode image: {0}")]
    Decode(String),
    #[error("could not encode image: {0}")]
    Encode(String),
}

/// Draw `region` onto the encoded image and return PNG bytes.
///
/// `image` carries the declared dimensions; they must match the decoded raster.
pub fn render_region_marker(
    image: &ImageRef,
    region: &RegionAnnotation,
    encoded: &[u8],
) -> Result<Vec<u8>, RenderError> {
    render_markers(image, std::slice::from_ref(region), encoded)
}

/// Draw every region in order. Later markers paint over earlier ones.
pub fn render_markers(
    image: &ImageRef,
    regions: &[RegionAnnotation],
    encoded: &[u8],
) -> Result<Vec<u8>, RenderError> {
    for region in regions {
        region
            .check_bounds(image.width_px, image.height_px)
            .map_err(RenderError::OutOfBounds)?;
    }
    let decoded = image::load_from_memory(encoded).map_err(|e| RenderError::Decode(e.to_string()))?;
    if decoded.width() != image.width_px || decoded.height() != image.height_px {
        return Err(RenderError::OutOfBounds(format!(
            "declared {}x{} but raster is {}x{}",
            image.width_px,
            image.height_px,
            decoded.width(),
            decoded.height()
        )));
    }
    let out = if decoded.color().has_alpha() {
        let mut raster: RgbaImage = decoded.to_rgba8();
        for region in regions {
            let [r, g, b] = region.color.rgb();
            paint(region, raster.width(), raster.height(), |x, y| {
                raster.put_pixel(x, y, Rgba([r, g, b, 255]))
            });
        }
        DynamicImage::ImageRgba8(raster)
    } else {
        let mut raster: RgbImage = decoded.to_rgb8();
        for region in regions {
            let rgb = region.color.rgb();
            paint(region, raster.width(), raster.height(), |x, y| {
                raster.put_pixel(x, y, Rgb(rgb))
            });
        }
        DynamicImage::ImageRgb8(raster)
    };
    let mut bytes = Cursor::new(Vec::new());
    out.write_to(&mut bytes, ImageFormat::Png)
        .map_err(|e| RenderError::Encode(e.to_string()))?;
    Ok(bytes.into_inner())
}

/// Whether pixel `(x, y)` belongs to the marker. Bounds are assumed checked.
pub fn marker_covers(region: &RegionAnnotation, x: u32, y: u32, height: u32) -> bool {
    let c = &region.coords;
    match region.kind {
        RegionKind::Box => {
            let (x1, y1, x2, y2) = (c[0], c[1], c[2], c[3]);
            if x < x1 || x >= x2 || y < y1 || y >= y2 {
                return false;
            }
            x < x1 + STROKE_PX || x + STROKE_PX >= x2 || y < y1 + STROKE_PX || y + STROKE_PX >= y2
        }
        RegionKind::Circle => {
            let (cx, cy, r) = (c[0] as i64, c[1] as i64, c[2] as i64);
            let (dx, dy) = (x as i64 - cx, y as i64 - cy);
            let d2 = dx * dx + dy * dy;
            let inner = (r - STROKE_PX as i64).max(0);
            d2 <= r * r && (inner == 0 || d2 > inner * inner)
        }
        RegionKind::Arrow => {
            let (tx, ty) = (c[0] as i64, c[1] as i64);
            let (px, py) = (x as i64, y as i64);
            let dy = if arrow_points_down(ty, height) {
                ty - py
            } else {
                py - ty
            };
            // half-width grows by ARROW_HALF_BASE_PX over ARROW_HEIGHT_PX rows
            (0..=ARROW_HEIGHT_PX).contains(&dy)
                && (px - tx).abs() * ARROW_HEIGHT_PX <= ARROW_HALF_BASE_PX * dy
        }
    }
}

/// The arrow body sits below its tip unless that would leave the image.
fn arrow_points_down(tip_y: i64, height: u32) -> bool {
    tip_y + ARROW_HEIGHT_PX >= height as i64
}

fn paint(region: &RegionAnnotation, width: u32, height: u32, mut set: impl FnMut(u32, u32)) {
    let c = &region.coords;
    let (x0, y0, x1, y1) = match region.kind {
        RegionKind::Box => (c[0], c[1], c[2], c[3]),
        RegionKind::Circle => (c[0] - c[2], c[1] - c[2], c[0] + c[2] + 1, c[1] + c[2] + 1),
        RegionKind::Arrow => {
            let (tx, ty) = (c[0] as i64, c[1] as i64);
            let (ylo, yhi) = if arrow_points_down(ty, height) {
                (ty - ARROW_HEIGHT_PX, ty)
            } else {
                (ty, ty + ARROW_HEIGHT_PX)
            };
            let clamp = |v: i64, hi: u32| v.clamp(0, hi as i64) as u32;
            (
                clamp(tx - ARROW_HALF_BASE_PX, width),
                clamp(ylo, height),
                clamp(tx + ARROW_HALF_BASE_PX + 1, width),
                clamp(yhi + 1, height),
            )
        }
    };
    for y in y0..y1.min(height) {
        for x in x0..x1.min(width) {
            if marker_covers(region, x, y, height) {
                set(x, y);
            }
        }
    }
}
