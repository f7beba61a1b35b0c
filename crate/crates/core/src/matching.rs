//! Region descriptors, per-space shape dissimilarity by optimal partial
//! assignment, and fusion across feature spaces.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureSpace;
use crate::hungarian;
use crate::partition::RegionLabeling;
use crate::rpca::DistinctnessField;

/// 100 bins of width 0.01 over `[0, 1)` plus one bin holding exactly 1.0.
pub const HIST_BINS: usize = 101;

/// Cost placed on assignments that are not allowed (a region paired with
/// another region's "unmatched" slot).
pub const FORBIDDEN: f64 = 1e9;

#[derive(Debug, Clone, PartialEq)]
pub struct RegionDescriptor {
    /// Distinctness histogram scaled to sum to `area_ratio`.
    pub hist: Vec<f64>,
    /// Region area over shape area.
    pub area_ratio: f64,
}

pub fn histogram_bin(v: f64) -> usize {
    if v >= 1.0 {
        HIST_BINS - 1
    } else if v <= 0.0 {
        0
    } else {
        ((v * 100.0).floor() as usize).min(HIST_BINS - 2)
    }
}

pub fn describe_regions(labeling: &RegionLabeling, field: &DistinctnessField) -> Vec<RegionDescriptor> {
    let m = field.len();
    let mut counts = vec![vec![0u32; HIST_BINS]; labeling.region_count];
    let mut areas = vec![0usize; labeling.region_count];
    for (i, &label) in labeling.labels.iter().enumerate() {
        let k = label as usize - 1;
        counts[k][histogram_bin(field.normalized[i])] += 1;
        areas[k] += 1;
    }
    let total = m as f64;
    counts
        .into_iter()
        .zip(areas)
        .map(|(c, a)| RegionDescriptor {
            hist: c.into_iter().map(|n| n as f64 / total).collect(),
            area_ratio: a as f64 / total,
        })
        .collect()
}

/// L1 distance between the two scaled histograms.
pub fn region_match_cost(a: &RegionDescriptor, b: &RegionDescriptor) -> f64 {
    a.hist.iter().zip(&b.hist).map(|(x, y)| (x - y).abs()).sum()
}

pub fn unmatched_cost(a: &RegionDescriptor) -> f64 {
    a.area_ratio
}

fn cmp_descriptor(a: &RegionDescriptor, b: &RegionDescriptor) -> Ordering {
    a.area_ratio.total_cmp(&b.area_ratio).then_with(|| {
        a.hist
            .iter()
            .zip(&b.hist)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

fn cmp_regions(a: &[RegionDescriptor], b: &[RegionDescriptor]) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| {
        a.iter()
            .zip(b)
            .map(|(x, y)| cmp_descriptor(x, y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Minimum over one-to-one partial matchings of the matched L1 costs plus
/// the area ratios of the regions left unmatched.
///
/// Solved as a square `(|A|+|B|)` assignment: `A_i`–`B_j` costs the L1
/// distance, each region may instead take its own dummy slot at its
/// unmatched cost, and dummy–dummy pairs are free. The arguments are put in
/// a canonical order first, so `d(A, B) == d(B, A)` bit for bit.
pub fn shape_dissimilarity_per_space(a: &[RegionDescriptor], b: &[RegionDescriptor]) -> f64 {
    let (a, b) = if cmp_regions(a, b) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    };
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    if n == 0 {
        return 0.0;
    }
    let mut cost = vec![vec![FORBIDDEN; n]; n];
    for i in 0..na {
        for j in 0..nb {
            cost[i][j] = region_match_cost(&a[i], &b[j]);
        }
        cost[i][nb + i] = unmatched_cost(&a[i]);
    }
    for j in 0..nb {
        cost[na + j][j] = unmatched_cost(&b[j]);
        for i in 0..na {
            cost[na + j][nb + i] = 0.0;
        }
    }
    let assignment = hungarian::solve(&cost);
    let mut terms: Vec<f64> = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i][j])
        .collect();
    debug_assert!(terms.iter().all(|&t| t < FORBIDDEN));
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// Weighted average over the canonical six spaces (1/4 for each R-based
/// space, 1/12 for each G-based one).
pub fn fuse(per_space: &[f64], spaces: &[FeatureSpace]) -> Result<f64> {
    if per_space.len() != spaces.len() || !is_canonical(spaces) {
        return Err(Error::InvalidParameter(
            "fusion requires exactly the canonical six feature spaces".into(),
        ));
    }
    Ok(per_space
        .iter()
        .zip(spaces)
        .map(|(d, s)| s.fusion_weight() * d)
        .sum())
}

pub fn is_canonical(spaces: &[FeatureSpace]) -> bool {
    let mut sorted = spaces.to_vec();
    sorted.sort();
    let mut canon = FeatureSpace::CANONICAL.to_vec();
    canon.sort();
    sorted == canon
}

/// Fusion weights for an arbitrary space list: the canonical weights for the
/// canonical set, otherwise the same per-kind weights rescaled to sum to 1.
pub fn fusion_weights(spaces: &[FeatureSpace]) -> Vec<f64> {
    let w: Vec<f64> = spaces.iter().map(|s| s.fusion_weight()).collect();
    if is_canonical(spaces) {
        return w;
    }
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSignature {
    pub shape_id: String,
    pub spaces: Vec<(FeatureSpace, Vec<RegionDescriptor>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    pub ids: Vec<String>,
    pub fused: DMatrix<f64>,
    pub per_space: Vec<(FeatureSpace, DMatrix<f64>)>,
}

impl DissimilarityMatrix {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn build_dissimilarity_matrix(signatures: &[ShapeSignature]) -> Result<DissimilarityMatrix> {
    let n = signatures.len();
    let spaces: Vec<FeatureSpace> = signatures
        .first()
        .map(|s| s.spaces.iter().map(|(sp, _)| *sp).collect())
        .unwrap_or_else(|| FeatureSpace::CANONICAL.to_vec());
    for s in signatures {
        if s.spaces.len() != spaces.len() || s.spaces.iter().zip(&spaces).any(|((a, _), b)| a != b) {
            return Err(Error::InvalidParameter(format!(
                "signature {} uses a different feature-space list",
                s.shape_id
            )));
        }
    }
    let weights = fusion_weights(&spaces);

    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let values: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            (0..spaces.len())
                .map(|s| shape_dissimilarity_per_space(&signatures[i].spaces[s].1, &signatures[j].spaces[s].1))
                .collect()
        })
        .collect();

    let mut per_space: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, n); spaces.len()];
    let mut fused = DMatrix::zeros(n, n);
    for (&(i, j), d) in pairs.iter().zip(&values) {
        let f: f64 = d.iter().zip(&weights).map(|(x, w)| w * x).sum();
        for (s, &x) in d.iter().enumerate() {
            per_space[s][(i, j)] = x;
            per_space[s][(j, i)] = x;
        }
        fused[(i, j)] = f;
        fused[(j, i)] = f;
    }
    Ok(DissimilarityMatrix {
        ids: signatures.iter().map(|s| s.shape_id.clone()).collect(),
        fused,
        per_space: spaces.into_iter().zip(per_space).collect(),
    })
}
