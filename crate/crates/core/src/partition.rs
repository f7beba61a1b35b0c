//! Region partitioning from a distinctness field.
//!
//! Pixels are split at the mean distinctness into a high and a low set.
//! Then, visiting pixels from most to least distinct, every pixel not yet
//! claimed seeds a patch and claims the unclaimed pixels of its own set
//! within a disk of radius `max(1, dist)`. Touching patches of one set merge
//! only when their seeds are within the sum of their radii, which keeps
//! parts joined through thin necks apart.

use crate::geometry::DistanceField;
use crate::mask::ShapeMask;
use crate::rpca::DistinctnessField;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionLabeling {
    /// Region id per shape pixel (row-major), contiguous from 1.
    pub labels: Vec<u32>,
    pub region_count: usize,
    /// Per region (index `id - 1`): whether it came from the high set.
    pub high_set: Vec<bool>,
}

impl RegionLabeling {
    pub fn region_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.region_count];
        for &l in &self.labels {
            sizes[l as usize - 1] += 1;
        }
        sizes
    }
}

/// `true` for pixels whose normalized distinctness is strictly above the
/// mean over the shape.
pub fn threshold_split(field: &DistinctnessField) -> Vec<bool> {
    split_above_mean(&field.normalized)
}

pub(crate) fn split_above_mean(values: &[f64]) -> Vec<bool> {
    if values.is_empty() {
        return Vec::new();
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|&v| v > mean).collect()
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins so the result does not depend on call order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

struct Patch {
    seed: (usize, usize),
    radius: f64,
}

pub fn ordered_dilation_partition(
    mask: &ShapeMask,
    field: &DistinctnessField,
    dist: &DistanceField,
) -> RegionLabeling {
    let index = mask.pixel_index();
    let m = index.len();
    assert_eq!(field.len(), m, "distinctness field does not match mask");
    assert_eq!(dist.dist.len(), m, "distance field does not match mask");

    let high = threshold_split(field);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        field.normalized[b]
            .total_cmp(&field.normalized[a])
            .then(a.cmp(&b))
    });

    const UNCLAIMED: usize = usize::MAX;
    let mut claim = vec![UNCLAIMED; m];
    let mut patches: Vec<Patch> = Vec::new();
    for &p in &order {
        if claim[p] != UNCLAIMED {
            continue;
        }
        let id = patches.len();
        let radius = dist.dist[p].max(1.0);
        let (pr, pc) = index.coords()[p];
        let reach = radius.floor() as isize;
        let r2 = radius * radius;
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                if ((dr * dr + dc * dc) as f64) > r2 {
                    continue;
                }
                if let Some(q) = index.at(pr as isize + dr, pc as isize + dc) {
                    if claim[q] == UNCLAIMED && high[q] == high[p] {
                        claim[q] = id;
                    }
                }
            }
        }
        patches.push(Patch {
            seed: (pr, pc),
            radius,
        });
    }

    let mut sets = DisjointSet::new(patches.len());
    for i in 0..m {
        let (r, c) = index.coords()[i];
        for j in [index.at(r as isize + 1, c as isize), index.at(r as isize, c as isize + 1)]
            .into_iter()
            .flatten()
        {
            let (a, b) = (claim[i], claim[j]);
            if a == b || high[i] != high[j] {
                continue;
            }
            let (pa, pb) = (&patches[a], &patches[b]);
            let dr = pa.seed.0 as f64 - pb.seed.0 as f64;
            let dc = pa.seed.1 as f64 - pb.seed.1 as f64;
            if (dr * dr + dc * dc).sqrt() <= pa.radius + pb.radius {
                sets.union(a, b);
            }
        }
    }

    // group pixels by merged patch root; root ids follow first-pixel order
    let mut root_of_pixel = vec![0usize; m];
    let mut members: std::collections::BTreeMap<usize, (usize, usize, bool)> = Default::default();
    for i in 0..m {
        let root = sets.find(claim[i]);
        root_of_pixel[i] = root;
        let e = members.entry(root).or_insert((0, i, high[i]));
        e.0 += 1;
    }
    let mut groups: Vec<(usize, (usize, usize, bool))> = members.into_iter().collect();
    // largest first, then by first pixel in row-major order
    groups.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
    let mut label_of_root = std::collections::HashMap::new();
    let mut high_set = Vec::with_capacity(groups.len());
    for (k, (root, (_, _, h))) in groups.iter().enumerate() {
        label_of_root.insert(*root, (k + 1) as u32);
        high_set.push(*h);
    }
    let labels = root_of_pixel.iter().map(|r| label_of_root[r]).collect();
    RegionLabeling {
        labels,
        region_count: groups.len(),
        high_set,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::distance_transform;
    use crate::mask::GridTransform;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field_from(mask: &ShapeMask, mut f: impl FnMut(usize, usize) -> f64) -> DistinctnessField {
        let px = mask.pixels();
        let raw = px.iter().map(|&(r, c)| f(r, c)).collect();
        DistinctnessField::from_raw(px, raw)
    }

    fn assert_partition(l: &RegionLabeling, m: usize) {
        assert_eq!(l.labels.len(), m);
        assert!(l.region_count >= 1 && l.region_count <= m);
        let sizes = l.region_sizes();
        assert!(sizes.iter().all(|&s| s > 0));
        assert_eq!(sizes.iter().sum::<usize>(), m);
        assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
    }

    /// Plus sign: 7×7 body with 3-wide, 10-long limbs on every side.
    fn cross() -> (ShapeMask, impl Fn(usize, usize) -> bool) {
        let n = 27;
        let in_body = |r: usize, c: usize| (10..17).contains(&r) && (10..17).contains(&c);
        let in_limb = move |r: usize, c: usize| {
            !in_body(r, c) && (((12..15).contains(&c)) || ((12..15).contains(&r)))
        };
        let cells: Vec<bool> = (0..n * n)
            .map(|i| in_body(i / n, i % n) || in_limb(i / n, i % n))
            .collect();
        (ShapeMask::from_grid("cross", "", n, n, &cells).unwrap(), in_limb)
    }

    #[test]
    fn threshold_examples() {
        let px = vec![(0, 0); 3];
        let constant = DistinctnessField::from_raw(px.clone(), vec![0.4; 3]);
        assert_eq!(threshold_split(&constant), vec![false; 3]);
        let halves = DistinctnessField::from_raw(vec![(0, 0); 4], vec![0.0, 1.0, 0.0, 1.0]);
        assert_eq!(threshold_split(&halves), vec![false, true, false, true]);
        let f = DistinctnessField {
            pixels: px,
            raw: vec![0.2, 0.4, 0.9],
            normalized: vec![0.2, 0.4, 0.9],
        };
        assert_eq!(threshold_split(&f), vec![false, false, true]);
    }

    #[test]
    fn threshold_on_raw_equals_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let raw: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..7.0)).collect();
            let f = DistinctnessField::from_raw(vec![(0, 0); 40], raw.clone());
            assert_eq!(threshold_split(&f), split_above_mean(&raw));
        }
    }

    #[test]
    fn constant_field_square_is_one_region() {
        let sq = ShapeMask::rectangle("s", 12, 9);
        let f = field_from(&sq, |_, _| 0.3);
        let l = ordered_dilation_partition(&sq, &f, &distance_transform(&sq));
        assert_partition(&l, sq.pixel_count());
        assert_eq!(l.region_count, 1);
        assert_eq!(l.high_set, vec![false]);
    }

    #[test]
    fn single_pixel() {
        let dot = ShapeMask::rectangle("p", 1, 1);
        let f = field_from(&dot, |_, _| 0.0);
        let l = ordered_dilation_partition(&dot, &f, &distance_transform(&dot));
        assert_eq!((l.region_count, l.labels.clone()), (1, vec![1]));
    }

    #[test]
    fn cross_with_distinct_limbs_gives_five_regions() {
        let (cross, in_limb) = cross();
        let f = field_from(&cross, |r, c| {
            if in_limb(r, c) {
                // grows toward the tips
                let d = (r as f64 - 13.0).abs().max((c as f64 - 13.0).abs());
                0.6 + 0.04 * d
            } else {
                0.1
            }
        });
        let l = ordered_dilation_partition(&cross, &f, &distance_transform(&cross));
        assert_partition(&l, cross.pixel_count());
        assert_eq!(l.region_count, 5, "{:?}", l.region_sizes());
        assert_eq!(l.high_set.iter().filter(|&&h| h).count(), 4);
        // the body is the largest region and is low
        assert!(!l.high_set[0]);
        // oracle: each limb is exactly one region
        let idx = cross.pixel_index();
        for (rows, cols) in [(0..10, 12..15), (17..27, 12..15), (12..15, 0..10), (12..15, 17..27)] {
            let mut seen = std::collections::HashSet::new();
            for r in rows.clone() {
                for c in cols.clone() {
                    seen.insert(l.labels[idx.at(r, c).unwrap()]);
                }
            }
            assert_eq!(seen.len(), 1);
        }
    }

    #[test]
    fn deterministic() {
        let (cross, _) = cross();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = field_from(&cross, |_, _| rng.random_range(0.0..1.0));
        let dist = distance_transform(&cross);
        let a = ordered_dilation_partition(&cross, &f, &dist);
        let b = ordered_dilation_partition(&cross, &f, &dist);
        assert_eq!(a, b);
        assert_partition(&a, cross.pixel_count());
    }

    /// Sorted (area, high, distinctness histogram) per region.
    fn signature(l: &RegionLabeling, f: &DistinctnessField) -> Vec<(usize, bool, Vec<u32>)> {
        let mut out: Vec<(usize, bool, Vec<u32>)> = (0..l.region_count)
            .map(|k| (0, l.high_set[k], vec![0u32; 101]))
            .collect();
        for (i, &lab) in l.labels.iter().enumerate() {
            let e = &mut out[lab as usize - 1];
            e.0 += 1;
            e.2[(f.normalized[i] * 100.0).floor() as usize] += 1;
        }
        out.sort();
        out
    }

    #[test]
    fn rotation_equivariant_up_to_renaming() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let base = ShapeMask::from_ascii(
            "y",
            "##........##\n\
             .##......##.\n\
             ..##....##..\n\
             ...######...\n\
             ....####....\n\
             ....####....\n\
             ....####....",
        )
        .unwrap();
        for _ in 0..5 {
            let values: std::collections::HashMap<(usize, usize), f64> = base
                .pixels()
                .into_iter()
                .map(|p| (p, rng.random_range(0.0..1.0)))
                .collect();
            let f = field_from(&base, |r, c| values[&(r, c)]);
            let l = ordered_dilation_partition(&base, &f, &distance_transform(&base));
            for t in [GridTransform::Rotate90, GridTransform::FlipHorizontal] {
                let rot = base.transform(t);
                let rf = field_from(&rot, |r, c| {
                    // find preimage
                    let (pr, pc) = base
                        .pixels()
                        .into_iter()
                        .find(|&(a, b)| t.map(a, b, base.rows(), base.cols()) == (r, c))
                        .unwrap();
                    values[&(pr, pc)]
                });
                let rl = ordered_dilation_partition(&rot, &rf, &distance_transform(&rot));
                assert_eq!(signature(&l, &f), signature(&rl, &rf));
            }
        }
    }
}
