//! Repeat-factor sampling for long-tailed class distributions.

use std::collections::HashMap;

use rand::Rng as _;

use super::Scene;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Default repeat-factor threshold used for baseline training.
pub const RFS_THRESHOLD: f64 = 0.001;

/// `max(1, sqrt(threshold / class_freq))`.
pub fn rfs_repeat_factor(class_freq: f64, threshold: f64) -> Result<f64> {
    if !(class_freq > 0.0 && class_freq <= 1.0) {
        return Err(Error::InvalidFrequency(class_freq));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!(
            "repeat-factor threshold {threshold} must lie in (0, 1]"
        )));
    }
    Ok((threshold / class_freq).sqrt().max(1.0))
}

/// Maximum class repeat factor over the scene's objects; 1 for empty scenes.
/// Classes absent from `frequencies` are ignored.
pub fn scene_repeat_factor(
    scene: &Scene,
    frequencies: &HashMap<String, f64>,
    threshold: f64,
) -> Result<f64> {
    let mut factor: f64 = 1.0;
    for obj in &scene.objects {
        if let Some(&f) = frequencies.get(&obj.class_name) {
            factor = factor.max(rfs_repeat_factor(f, threshold)?);
        }
    }
    Ok(factor)
}

/// One epoch of scene indices where scene `i` appears `floor(r_i)` times plus
/// one more with probability `frac(r_i)`.
pub fn repeat_factor_epoch(factors: &[f64], rng: &mut Rng) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, &r) in factors.iter().enumerate() {
        let whole = r.floor();
        let mut n = whole as usize;
        if rng.random::<f64>() < r - whole {
            n += 1;
        }
        out.extend(std::iter::repeat_n(i, n));
    }
    out
}
