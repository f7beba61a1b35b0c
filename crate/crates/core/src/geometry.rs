//! Global shape measurements: body thickness `R` (maximum of the exact
//! Euclidean distance transform) and extent `G` (largest boundary-to-boundary
//! geodesic distance through the shape).

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::mask::{PixelIndex, ShapeMask};

pub const DEFAULT_SAMPLE_CAP: usize = 512;

/// Euclidean distance from each shape pixel center to the nearest
/// background pixel center, with everything off-grid counted as background.
/// Indexed like [`ShapeMask::pixels`].
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    pub dist: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeMeasurements {
    pub r: f64,
    pub g: f64,
}

pub fn distance_transform(mask: &ShapeMask) -> DistanceField {
    let sq = squared_edt(mask);
    let dist = mask
        .pixels()
        .into_iter()
        .map(|(r, c)| (sq[(r + 1) * (mask.cols() + 2) + c + 1] as f64).sqrt())
        .collect();
    DistanceField { dist }
}

/// Squared EDT over the mask padded by one background cell on each side.
/// A single background ring is enough: the nearest off-grid cell of any
/// pixel lies on it.
fn squared_edt(mask: &ShapeMask) -> Vec<i64> {
    let (h, w) = (mask.rows() + 2, mask.cols() + 2);
    let inside = |r: usize, c: usize| r >= 1 && c >= 1 && r <= mask.rows() && c <= mask.cols() && mask.get(r - 1, c - 1);

    // vertical pass: distance to the nearest background cell in the column
    let mut col = vec![0i64; h * w];
    for c in 0..w {
        let mut last: Option<usize> = None;
        for r in 0..h {
            if !inside(r, c) {
                last = Some(r);
                col[r * w + c] = 0;
            } else {
                col[r * w + c] = last.map_or(i64::MAX, |l| (r - l) as i64);
            }
        }
        let mut last: Option<usize> = None;
        for r in (0..h).rev() {
            if !inside(r, c) {
                last = Some(r);
            } else if let Some(l) = last {
                col[r * w + c] = col[r * w + c].min((l - r) as i64);
            }
        }
    }
    for v in col.iter_mut() {
        *v *= *v;
    }

    // horizontal pass: lower envelope of parabolas
    let mut out = vec![0i64; h * w];
    let mut f = vec![0i64; w];
    let mut d = vec![0i64; w];
    for r in 0..h {
        f.copy_from_slice(&col[r * w..(r + 1) * w]);
        lower_envelope(&f, &mut d);
        out[r * w..(r + 1) * w].copy_from_slice(&d);
    }
    out
}

/// 1-D squared distance transform of a sampled function (Felzenszwalb and
/// Huttenlocher). Inputs are finite integers, so the envelope values are
/// exact; rounding in the breakpoints only matters at ties, where both
/// parabolas agree.
fn lower_envelope(f: &[i64], d: &mut [i64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let key = |p: usize| (f[p] + (p * p) as i64) as f64;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = (key(q) - key(p)) / (2.0 * (q - p) as f64);
            if s <= z[k] && k > 0 {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as i64 - v[k] as i64;
        *out = dq * dq + f[v[k]];
    }
}

pub fn compute_r(field: &DistanceField) -> f64 {
    field.dist.iter().copied().fold(0.0, f64::max)
}

/// Shape pixels with at least one 4-neighbor outside the shape, row-major.
pub fn boundary_pixels(mask: &ShapeMask) -> Vec<(usize, usize)> {
    mask.pixels()
        .into_iter()
        .filter(|&(r, c)| {
            let (r, c) = (r as isize, c as isize);
            !(mask.contains(r - 1, c)
                && mask.contains(r + 1, c)
                && mask.contains(r, c - 1)
                && mask.contains(r, c + 1))
        })
        .collect()
}

/// Exact path length `axial + diagonal·√2` on the 8-connected pixel graph.
/// Ordering is exact integer arithmetic, so ties and comparisons do not
/// depend on summation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GeodesicLength {
    pub axial: u32,
    pub diagonal: u32,
}

impl GeodesicLength {
    pub const ZERO: GeodesicLength = GeodesicLength {
        axial: 0,
        diagonal: 0,
    };

    pub fn value(self) -> f64 {
        self.axial as f64 + self.diagonal as f64 * std::f64::consts::SQRT_2
    }
}

impl Ord for GeodesicLength {
    fn cmp(&self, other: &Self) -> Ordering {
        // compare x against y·√2
        let x = self.axial as i64 - other.axial as i64;
        let y = other.diagonal as i64 - self.diagonal as i64;
        match (x.signum(), y.signum()) {
            (0, 0) => Ordering::Equal,
            (sx, sy) if sx >= 0 && sy <= 0 => {
                if sx == 0 && sy == 0 {
                    Ordering::Equal
                } else {
                    Ordering::Greater
                }
            }
            (sx, sy) if sx <= 0 && sy >= 0 => Ordering::Less,
            (1, 1) => (x * x).cmp(&(2 * y * y)),
            _ => (2 * y * y).cmp(&(x * x)),
        }
    }
}

impl PartialOrd for GeodesicLength {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest paths over the 8-connected shape graph.
pub fn geodesic_from(index: &PixelIndex, source: usize) -> Vec<Option<GeodesicLength>> {
    let mut best: Vec<Option<GeodesicLength>> = vec![None; index.len()];
    let mut heap = BinaryHeap::new();
    best[source] = Some(GeodesicLength::ZERO);
    heap.push(Reverse((GeodesicLength::ZERO, source)));
    while let Some(Reverse((d, i))) = heap.pop() {
        if best[i].is_some_and(|b| b < d) {
            continue;
        }
        let (r, c) = index.coords()[i];
        let (r, c) = (r as isize, c as isize);
        for dr in -1..=1isize {
            for dc in -1..=1isize {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let Some(j) = index.at(r + dr, c + dc) else {
                    continue;
                };
                let nd = if dr != 0 && dc != 0 {
                    GeodesicLength {
                        diagonal: d.diagonal + 1,
                        ..d
                    }
                } else {
                    GeodesicLength {
                        axial: d.axial + 1,
                        ..d
                    }
                };
                if best[j].is_none_or(|b| nd < b) {
                    best[j] = Some(nd);
                    heap.push(Reverse((nd, j)));
                }
            }
        }
    }
    best
}

/// Largest geodesic distance between boundary pixels. With more than
/// `sample_cap` boundary pixels, only every ⌈B/sample_cap⌉-th one (row-major)
/// acts as a source; all boundary pixels remain targets.
pub fn compute_g(mask: &ShapeMask, sample_cap: usize) -> f64 {
    geodesic_extent(mask, sample_cap).value()
}

pub fn geodesic_extent(mask: &ShapeMask, sample_cap: usize) -> GeodesicLength {
    let index = mask.pixel_index();
    let boundary: Vec<usize> = boundary_pixels(mask)
        .into_iter()
        .map(|(r, c)| index.at(r as isize, c as isize).expect("shape pixel"))
        .collect();
    let stride = if boundary.len() <= sample_cap.max(1) {
        1
    } else {
        boundary.len().div_ceil(sample_cap.max(1))
    };
    let sources: Vec<usize> = boundary.iter().copied().step_by(stride).collect();
    sources
        .par_iter()
        .map(|&s| {
            let d = geodesic_from(&index, s);
            boundary
                .iter()
                .filter_map(|&t| d[t])
                .max()
                .unwrap_or(GeodesicLength::ZERO)
        })
        .max()
        .unwrap_or(GeodesicLength::ZERO)
}

pub fn measure(mask: &ShapeMask, sample_cap: usize) -> (DistanceField, ShapeMeasurements) {
    let field = distance_transform(mask);
    let r = compute_r(&field);
    let g = compute_g(mask, sample_cap);
    (field, ShapeMeasurements { r, g })
}
