use serde::{Deserialize, Serialize};

use super::{BoundingBox, ObjectInstance, Scene};
use crate::error::{Error, Result};

/// How a margin fraction maps onto the crop scale factor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginConvention {
    /// Width and height grow by `margin` in total (half on each side): 0.2 → ×1.2.
    #[default]
    Total,
    /// Each side grows by `margin`: 0.2 → ×1.4.
    PerSide,
}

impl MarginConvention {
    /// Margin fraction to pass to [`crop_with_margin`].
    pub fn effective(self, margin: f64) -> f64 {
        match self {
            MarginConvention::Total => margin,
            MarginConvention::PerSide => 2.0 * margin,
        }
    }
}

/// Scale `bbox` about its center by `1 + margin_fraction`, then clamp to the scene.
pub fn crop_with_margin(
    bbox: &BoundingBox,
    scene_w: f64,
    scene_h: f64,
    margin_fraction: f64,
) -> Result<BoundingBox> {
    bbox.validate()?;
    if !(margin_fraction >= 0.0 && margin_fraction.is_finite()) {
        return Err(Error::InvalidBox(format!(
            "margin fraction {margin_fraction} must be finite and non-negative"
        )));
    }
    if margin_fraction == 0.0 {
        return BoundingBox::new(
            bbox.x0.max(0.0),
            bbox.y0.max(0.0),
            bbox.x1.min(scene_w),
            bbox.y1.min(scene_h),
        );
    }
    let (cx, cy) = bbox.center();
    let hw = bbox.width() * 0.5 * (1.0 + margin_fraction);
    let hh = bbox.height() * 0.5 * (1.0 + margin_fraction);
    // min/max keep the original box inside the result despite rounding.
    BoundingBox::new(
        (cx - hw).min(bbox.x0).max(0.0),
        (cy - hh).min(bbox.y0).max(0.0),
        (cx + hw).max(bbox.x1).min(scene_w),
        (cy + hh).max(bbox.y1).min(scene_h),
    )
}

/// Restrict a scene to `crop`: keeps objects whose box has more than
/// `visibility` of its own area inside the crop, clips their boxes and
/// re-expresses them in crop coordinates. Relations to dropped objects are
/// removed.
pub fn crop_scene(scene: &Scene, crop: &BoundingBox, visibility: f64) -> Result<Scene> {
    crop.validate()?;
    let kept: Vec<&ObjectInstance> = scene
        .objects
        .iter()
        .filter(|o| o.bbox.fraction_inside(crop) > visibility)
        .collect();
    let kept_ids: Vec<&str> = kept.iter().map(|o| o.id.as_str()).collect();
    let objects = kept
        .into_iter()
        .map(|o| {
            let clipped = BoundingBox::new(
                o.bbox.x0.max(crop.x0) - crop.x0,
                o.bbox.y0.max(crop.y0) - crop.y0,
                o.bbox.x1.min(crop.x1) - crop.x0,
                o.bbox.y1.min(crop.y1) - crop.y0,
            )?;
            Ok(ObjectInstance {
                id: o.id.clone(),
                class_name: o.class_name.clone(),
                attributes: o.attributes.clone(),
                relations: o
                    .relations
                    .iter()
                    .filter(|r| kept_ids.contains(&r.target.as_str()))
                    .cloned()
                    .collect(),
                bbox: clipped,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Scene {
        id: scene.id.clone(),
        width: crop.width(),
        height: crop.height(),
        objects,
    })
}
