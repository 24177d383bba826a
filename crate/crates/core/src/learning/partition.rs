use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CellConfig;
use crate::learning::data::Dataset;

/// Number of concentric areas in the location-dependent split.
pub const NUM_RINGS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    #[default]
    Iid,
    Location,
}

/// Give each of `k` EDs `per_class` distinct samples of every class.
pub fn partition_iid<R: Rng + ?Sized>(
    data: &Dataset,
    k: usize,
    per_class: usize,
    rng: &mut R,
) -> Result<Vec<Dataset>> {
    if k == 0 || per_class == 0 {
        return Err(Error::OutOfRange("need K >= 1 and per_class >= 1".into()));
    }
    let mut shards = vec![Vec::with_capacity(per_class * data.num_classes()); k];
    for (c, mut pool) in data.class_indices().into_iter().enumerate() {
        if pool.len() < k * per_class {
            return Err(Error::InsufficientData(format!(
                "class {c} has {} samples, {} needed",
                pool.len(),
                k * per_class
            )));
        }
        pool.shuffle(rng);
        for (e, shard) in shards.iter_mut().enumerate() {
            shard.extend_from_slice(&pool[e * per_class..(e + 1) * per_class]);
        }
    }
    Ok(shards.iter().map(|s| data.subset(s)).collect())
}

/// Outer radii `r_u = sqrt(r_min² + u (r_max² - r_min²) / 5)` of the
/// equal-area rings, `u = 1..=5`.
pub fn ring_radii(cfg: &CellConfig) -> Vec<f64> {
    let lo = cfg.r_min * cfg.r_min;
    let span = cfg.r_max * cfg.r_max - lo;
    (1..=NUM_RINGS)
        .map(|u| {
            if u == NUM_RINGS {
                cfg.r_max
            } else {
                (lo + u as f64 * span / NUM_RINGS as f64).sqrt()
            }
        })
        .collect()
}

/// Ring index `u ∈ 1..=5` containing distance `d`.
pub fn ring_of(d: f64, cfg: &CellConfig) -> Result<usize> {
    if !(d >= cfg.r_min - 1e-9 && d <= cfg.r_max + 1e-9) {
        return Err(Error::OutOfRange(format!("distance {d} outside the cell")));
    }
    let radii = ring_radii(cfg);
    Ok(radii
        .iter()
        .position(|&r| d <= r + 1e-9)
        .unwrap_or(NUM_RINGS - 1)
        + 1)
}

/// Labels held in ring `u`: `{u-1, ..., u + C/2 - 1}` clipped to `0..C`.
pub fn ring_labels(u: usize, classes: usize) -> Vec<usize> {
    let lo = u.saturating_sub(1);
    let hi = (u + classes / 2 - 1).min(classes - 1);
    (lo..=hi).collect()
}

/// Location-dependent split: an ED in ring `u` only sees [`ring_labels`]`(u)`.
/// Each label's samples are shuffled and dealt out evenly to the EDs that
/// hold that label, the first EDs taking one extra when the count does not
/// divide.
pub fn partition_location<R: Rng + ?Sized>(
    data: &Dataset,
    distances: &[f64],
    cfg: &CellConfig,
    rng: &mut R,
) -> Result<Vec<Dataset>> {
    if distances.is_empty() {
        return Err(Error::OutOfRange("no EDs to partition over".into()));
    }
    let classes = data.num_classes();
    if classes < 2 {
        return Err(Error::OutOfRange(
            "location split needs at least two classes".into(),
        ));
    }
    let rings = distances
        .iter()
        .map(|&d| ring_of(d, cfg))
        .collect::<Result<Vec<_>>>()?;
    let holds: Vec<Vec<usize>> = rings.iter().map(|&u| ring_labels(u, classes)).collect();
    let mut shards = vec![Vec::new(); distances.len()];
    for (c, mut pool) in data.class_indices().into_iter().enumerate() {
        let holders: Vec<usize> = (0..distances.len())
            .filter(|&e| holds[e].contains(&c))
            .collect();
        if holders.is_empty() {
            continue;
        }
        if pool.len() < holders.len() {
            return Err(Error::InsufficientData(format!(
                "class {c} has {} samples for {} EDs",
                pool.len(),
                holders.len()
            )));
        }
        pool.shuffle(rng);
        let base = pool.len() / holders.len();
        let extra = pool.len() % holders.len();
        let mut start = 0;
        for (j, &e) in holders.iter().enumerate() {
            let n = base + usize::from(j < extra);
            shards[e].extend_from_slice(&pool[start..start + n]);
            start += n;
        }
    }
    Ok(shards.iter().map(|s| data.subset(s)).collect())
}
