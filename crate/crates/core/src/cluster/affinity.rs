//! Affinity propagation (responsibility / availability message passing).

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApOptions {
    pub damping: f64,
    pub max_iter: usize,
    /// Iterations the exemplar set must stay unchanged to stop.
    pub stable_window: usize,
}

impl Default for ApOptions {
    fn default() -> Self {
        ApOptions {
            damping: 0.9,
            max_iter: 1000,
            stable_window: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApResult {
    /// Cluster per point in `1..=K`; clusters are numbered by exemplar index.
    pub labels: Vec<usize>,
    /// Exemplar point index of each cluster.
    pub exemplars: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

impl ApResult {
    pub fn cluster_count(&self) -> usize {
        self.exemplars.len()
    }
}

/// Negative squared Euclidean distances between 2-D points.
pub fn negative_squared_distances(points: &[[f64; 2]]) -> DMatrix<f64> {
    let n = points.len();
    DMatrix::from_fn(n, n, |i, j| {
        let dx = points[i][0] - points[j][0];
        let dy = points[i][1] - points[j][1];
        -(dx * dx + dy * dy)
    })
}

fn assign(sim: &DMatrix<f64>, exemplars: &[usize], iterations: usize, converged: bool) -> ApResult {
    let n = sim.nrows();
    let labels = (0..n)
        .map(|i| {
            if let Some(k) = exemplars.iter().position(|&e| e == i) {
                return k + 1;
            }
            let mut best = 0;
            for (k, &e) in exemplars.iter().enumerate() {
                if sim[(i, e)] > sim[(i, exemplars[best])] {
                    best = k;
                }
            }
            best + 1
        })
        .collect();
    ApResult {
        labels,
        exemplars: exemplars.to_vec(),
        iterations,
        converged,
    }
}

/// Runs affinity propagation with a shared `preference` on the diagonal.
///
/// A tiny deterministic perturbation breaks exact ties the way the common
/// reference implementation does. Matrices whose off-diagonal similarities
/// are all equal are resolved directly: one cluster when the preference does
/// not exceed them, otherwise every point on its own.
pub fn affinity_propagation(sim: &DMatrix<f64>, preference: f64, opts: &ApOptions) -> ApResult {
    let n = sim.nrows();
    assert_eq!(sim.ncols(), n, "similarity matrix must be square");
    if n == 0 {
        return ApResult {
            labels: vec![],
            exemplars: vec![],
            iterations: 0,
            converged: true,
        };
    }
    if n == 1 {
        return assign(sim, &[0], 0, true);
    }
    let first = sim[(0, 1)];
    let all_equal = (0..n).all(|i| (0..n).all(|j| i == j || sim[(i, j)] == first));
    if all_equal {
        let exemplars: Vec<usize> = if preference > first { (0..n).collect() } else { vec![0] };
        return assign(sim, &exemplars, 0, true);
    }

    let mut s = sim.clone();
    for i in 0..n {
        s[(i, i)] = preference;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for v in s.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += (f64::EPSILON * *v + f64::MIN_POSITIVE * 100.0) * z;
    }

    let damp = opts.damping;
    // row-major copies for cache-friendly row and column sweeps
    let sr: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|k| s[(i, k)]).collect()).collect();
    let mut r = vec![vec![0.0; n]; n];
    let mut a = vec![vec![0.0; n]; n];
    let mut last_exemplars: Vec<usize> = Vec::new();
    let mut stable = 0usize;
    let mut iterations = 0;
    let mut converged = false;

    for it in 0..opts.max_iter {
        iterations = it + 1;
        // responsibilities
        r.par_iter_mut().enumerate().for_each(|(i, ri)| {
            let (mut best, mut best_k, mut second) = (f64::NEG_INFINITY, 0usize, f64::NEG_INFINITY);
            for k in 0..n {
                let v = a[i][k] + sr[i][k];
                if v > best {
                    second = best;
                    best = v;
                    best_k = k;
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let fresh = sr[i][k] - if k == best_k { second } else { best };
                ri[k] = damp * ri[k] + (1.0 - damp) * fresh;
            }
        });

        // availabilities, column by column
        let cols: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|k| {
                let pos_sum: f64 = (0..n)
                    .map(|i| if i == k { r[k][k] } else { r[i][k].max(0.0) })
                    .sum();
                (0..n)
                    .map(|i| {
                        let fresh = if i == k {
                            pos_sum - r[k][k]
                        } else {
                            (pos_sum - r[i][k].max(0.0)).min(0.0)
                        };
                        damp * a[i][k] + (1.0 - damp) * fresh
                    })
                    .collect()
            })
            .collect();
        for (k, col) in cols.into_iter().enumerate() {
            for (i, v) in col.into_iter().enumerate() {
                a[i][k] = v;
            }
        }

        let exemplars: Vec<usize> = (0..n).filter(|&k| a[k][k] + r[k][k] > 0.0).collect();
        if exemplars == last_exemplars {
            stable += 1;
        } else {
            stable = 1;
            last_exemplars = exemplars;
        }
        if stable >= opts.stable_window && !last_exemplars.is_empty() {
            converged = true;
            break;
        }
    }

    if last_exemplars.is_empty() {
        log::warn!("affinity propagation found no exemplar; collapsing to one cluster");
        let best = (0..n)
            .max_by(|&x, &y| (a[x][x] + r[x][x]).total_cmp(&(a[y][y] + r[y][y])).then(y.cmp(&x)))
            .unwrap_or(0);
        return assign(sim, &[best], iterations, false);
    }
    assign(sim, &last_exemplars, iterations, converged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blob_points(rng: &mut ChaCha8Rng, centers: &[[f64; 2]], per: usize) -> (Vec<[f64; 2]>, Vec<usize>) {
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (c, ctr) in centers.iter().enumerate() {
            for _ in 0..per {
                pts.push([ctr[0] + rng.random_range(-0.5..0.5), ctr[1] + rng.random_range(-0.5..0.5)]);
                truth.push(c);
            }
        }
        (pts, truth)
    }

    fn median_offdiag(s: &DMatrix<f64>) -> f64 {
        let n = s.nrows();
        let mut v: Vec<f64> = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| s[(i, j)]).collect();
        v.sort_by(f64::total_cmp);
        let m = v.len();
        if m % 2 == 1 {
            v[m / 2]
        } else {
            (v[m / 2 - 1] + v[m / 2]) / 2.0
        }
    }

    #[test]
    fn identical_points_make_one_cluster() {
        let s = negative_squared_distances(&[[1.0, 2.0]; 6]);
        let res = affinity_propagation(&s, median_offdiag(&s), &ApOptions::default());
        assert_eq!(res.cluster_count(), 1);
        assert!(res.labels.iter().all(|&l| l == 1));
    }

    #[test]
    fn two_blobs_at_median_preference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (pts, truth) = blob_points(&mut rng, &[[0.0, 0.0], [40.0, 0.0]], 8);
        let s = negative_squared_distances(&pts);
        let res = affinity_propagation(&s, median_offdiag(&s), &ApOptions::default());
        assert!(res.converged);
        assert_eq!(res.cluster_count(), 2);
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                assert_eq!(res.labels[i] == res.labels[j], truth[i] == truth[j]);
            }
        }
        // exemplars belong to their own clusters
        for (k, &e) in res.exemplars.iter().enumerate() {
            assert_eq!(res.labels[e], k + 1);
        }
    }

    #[test]
    fn zero_preference_makes_every_point_an_exemplar() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (pts, _) = blob_points(&mut rng, &[[0.0, 0.0], [5.0, 5.0]], 5);
        let s = negative_squared_distances(&pts);
        let res = affinity_propagation(&s, 0.0, &ApOptions::default());
        assert_eq!(res.cluster_count(), pts.len());
    }

    #[test]
    fn count_is_mostly_monotone_in_preference() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut ok = 0;
        for _ in 0..100 {
            let n = rng.random_range(8..20);
            let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)]).collect();
            let s = negative_squared_distances(&pts);
            let min = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| s[(i, j)]).fold(0.0, f64::min);
            let counts: Vec<usize> = (0..8)
                .map(|t| {
                    let pref = min * (1.0 - t as f64 / 8.0);
                    affinity_propagation(&s, pref, &ApOptions::default()).cluster_count()
                })
                .collect();
            if counts.windows(2).all(|w| w[0] <= w[1]) {
                ok += 1;
            } else {
                eprintln!("non-monotone instance: {counts:?}");
            }
        }
        assert!(ok >= 95, "{ok}/100 monotone");
    }
}
