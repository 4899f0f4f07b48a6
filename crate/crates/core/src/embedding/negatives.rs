use std::collections::HashSet;

use rand::Rng as _;

use crate::dataset::ClassEntry;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Draw `n` distinct non-positive classes without replacement, each draw
/// proportional to the square root of class frequency.
pub fn sample_negative_classes(
    catalog: &[ClassEntry],
    positives: &HashSet<String>,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<String>> {
    let mut pool: Vec<(&str, f64)> = catalog
        .iter()
        .filter(|c| !positives.contains(&c.name))
        .map(|c| (c.name.as_str(), c.frequency.sqrt()))
        .collect();
    if n > pool.len() {
        return Err(Error::InsufficientClasses {
            requested: n,
            available: pool.len(),
        });
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let total: f64 = pool.iter().map(|(_, w)| w).sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = pool.len() - 1;
        for (i, (_, w)) in pool.iter().enumerate() {
            if u < *w {
                pick = i;
                break;
            }
            u -= w;
        }
        out.push(pool.swap_remove(pick).0.to_string());
    }
    Ok(out)
}
