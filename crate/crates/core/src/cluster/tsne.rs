//! Exact t-SNE from a precomputed dissimilarity matrix.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TsneOptions {
    /// `None` picks `min(30, (N − 1)/3)`.
    pub perplexity: Option<f64>,
    pub iterations: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum_switch: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub init_std: f64,
}

impl Default for TsneOptions {
    fn default() -> Self {
        TsneOptions {
            perplexity: None,
            iterations: 1000,
            seed: 42,
            learning_rate: 200.0,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            momentum_switch: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            init_std: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding2D {
    pub ids: Vec<String>,
    pub coords: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    pub coords: Vec<[f64; 2]>,
    /// KL(P‖Q) with the unexaggerated P after every iteration.
    pub kl_history: Vec<f64>,
    pub perplexity: f64,
}

pub fn default_perplexity(n: usize) -> f64 {
    30f64.min((n as f64 - 1.0) / 3.0)
}

const ENTROPY_TOL: f64 = 1e-5;
const MAX_BISECTIONS: usize = 200;

/// Conditional probabilities `p_{j|i}` for one row with the Gaussian
/// precision chosen so the entropy equals `ln(perplexity)`.
fn calibrate_row(sq: &[f64], i: usize, target: f64) -> Vec<f64> {
    let n = sq.len();
    let mut beta = 1.0;
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut p = vec![0.0; n];
    for _ in 0..MAX_BISECTIONS {
        // shift by the smallest distance so exp does not underflow to all zeros
        let dmin = sq
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &d)| d)
            .fold(f64::INFINITY, f64::min);
        let mut sum = 0.0;
        for j in 0..n {
            p[j] = if j == i { 0.0 } else { (-(sq[j] - dmin) * beta).exp() };
            sum += p[j];
        }
        let mut weighted = 0.0;
        for j in 0..n {
            weighted += (sq[j] - dmin) * p[j];
        }
        let entropy = sum.ln() + beta * weighted / sum;
        for v in p.iter_mut() {
            *v /= sum;
        }
        let diff = entropy - target;
        if diff.abs() < ENTROPY_TOL {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
        }
    }
    p
}

/// Symmetrized joint probabilities, floored at 1e-12.
pub fn joint_probabilities(dist: &DMatrix<f64>, perplexity: f64) -> DMatrix<f64> {
    let n = dist.nrows();
    let target = perplexity.ln();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let sq: Vec<f64> = (0..n).map(|j| dist[(i, j)] * dist[(i, j)]).collect();
            calibrate_row(&sq, i, target)
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            ((rows[i][j] + rows[j][i]) / (2.0 * n as f64)).max(1e-12)
        }
    })
}

pub fn tsne(dist: &DMatrix<f64>, opts: &TsneOptions) -> Result<TsneResult> {
    let n = dist.nrows();
    if dist.ncols() != n {
        return Err(Error::InvalidParameter("distance matrix must be square".into()));
    }
    let perplexity = opts.perplexity.unwrap_or_else(|| default_perplexity(n));
    if n < 4 || !(perplexity > 0.0) || 3.0 * perplexity > (n - 1) as f64 {
        return Err(Error::InvalidParameter(format!(
            "perplexity {perplexity} infeasible for {n} points (need N ≥ 4 and 3·perplexity ≤ N − 1)"
        )));
    }
    let p = joint_probabilities(dist, perplexity);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let normal = Normal::new(0.0, opts.init_std).expect("positive std");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut velocity = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl_history = Vec::with_capacity(opts.iterations);

    for iter in 0..opts.iterations {
        let exaggeration = if iter < opts.exaggeration_iters { opts.exaggeration } else { 1.0 };
        let momentum = if iter < opts.momentum_switch {
            opts.initial_momentum
        } else {
            opts.final_momentum
        };

        // Student-t kernel, rows in parallel; sums are per row in fixed order
        let kernel: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            0.0
                        } else {
                            let dx = y[i][0] - y[j][0];
                            let dy = y[i][1] - y[j][1];
                            1.0 / (1.0 + dx * dx + dy * dy)
                        }
                    })
                    .collect()
            })
            .collect();
        let z: f64 = kernel.iter().map(|r| r.iter().sum::<f64>()).sum();

        let grad: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let w = (exaggeration * p[(i, j)] - kernel[i][j] / z) * kernel[i][j];
                    g[0] += w * (y[i][0] - y[j][0]);
                    g[1] += w * (y[i][1] - y[j][1]);
                }
                [4.0 * g[0], 4.0 * g[1]]
            })
            .collect();

        for i in 0..n {
            for d in 0..2 {
                let same_sign = (grad[i][d] > 0.0) == (velocity[i][d] > 0.0);
                gains[i][d] = if same_sign { gains[i][d] * 0.8 } else { gains[i][d] + 0.2 };
                gains[i][d] = gains[i][d].max(0.01);
                velocity[i][d] = momentum * velocity[i][d] - opts.learning_rate * gains[i][d] * grad[i][d];
                y[i][d] += velocity[i][d];
            }
        }
        center(&mut y);

        let kl: f64 = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| {
                        let q = (kernel[i][j] / z).max(1e-300);
                        p[(i, j)] * (p[(i, j)] / q).ln()
                    })
                    .sum::<f64>()
            })
            .sum();
        kl_history.push(kl);
    }
    Ok(TsneResult {
        coords: y,
        kl_history,
        perplexity,
    })
}

fn center(y: &mut [[f64; 2]]) {
    let n = y.len() as f64;
    let mx = y.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = y.iter().map(|p| p[1]).sum::<f64>() / n;
    for p in y.iter_mut() {
        p[0] -= mx;
        p[1] -= my;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n: usize, split: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else if (i < split) == (j < split) {
                0.01
            } else {
                1.0
            }
        })
    }

    #[test]
    fn perplexity_is_calibrated() {
        let n = 30;
        let d = DMatrix::from_fn(n, n, |i, j| ((i as f64) - (j as f64)).abs() / 7.0);
        let target = 5.0f64;
        for i in [0, 13, 29] {
            let sq: Vec<f64> = (0..n).map(|j| d[(i, j)].powi(2)).collect();
            let p = calibrate_row(&sq, i, target.ln());
            let h: f64 = -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>();
            assert!((h - target.ln()).abs() < 1e-4);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_blobs_separate() {
        let d = blobs(20, 10);
        let res = tsne(&d, &TsneOptions::default()).unwrap();
        let c0 = centroid(&res.coords[..10]);
        let c1 = centroid(&res.coords[10..]);
        // perpendicular bisector of the two centroids
        let dir = [c1[0] - c0[0], c1[1] - c0[1]];
        let mid = [(c0[0] + c1[0]) / 2.0, (c0[1] + c1[1]) / 2.0];
        for (i, p) in res.coords.iter().enumerate() {
            let side = (p[0] - mid[0]) * dir[0] + (p[1] - mid[1]) * dir[1];
            assert_eq!(side > 0.0, i >= 10, "point {i}");
        }
        let c = centroid(&res.coords);
        assert!(c[0].abs() < 1e-6 && c[1].abs() < 1e-6);
    }

    fn centroid(pts: &[[f64; 2]]) -> [f64; 2] {
        let n = pts.len() as f64;
        [pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n]
    }

    #[test]
    fn kl_decreases_after_exaggeration() {
        let n = 24;
        let d = DMatrix::from_fn(n, n, |i, j| {
            let a = (i as f64 * 0.7).sin() + (i % 3) as f64;
            let b = (j as f64 * 0.7).sin() + (j % 3) as f64;
            (a - b).abs() + if i == j { 0.0 } else { 0.05 }
        });
        let res = tsne(&d, &TsneOptions::default()).unwrap();
        let h = &res.kl_history;
        let late = h[950..].iter().copied().fold(f64::INFINITY, f64::min);
        let early = h[250..300].iter().copied().fold(f64::INFINITY, f64::min);
        assert!(late <= early, "{late} > {early}");
    }

    #[test]
    fn smallest_case_and_errors() {
        let d = blobs(4, 2);
        let opts = TsneOptions {
            perplexity: Some(1.0),
            ..Default::default()
        };
        let res = tsne(&d, &opts).unwrap();
        assert!(res.coords.iter().all(|p| p[0].is_finite() && p[1].is_finite()));
        assert!(tsne(&blobs(3, 1), &TsneOptions::default()).is_err());
        let too_high = TsneOptions {
            perplexity: Some(5.0),
            ..Default::default()
        };
        assert!(tsne(&blobs(10, 5), &too_high).is_err());
    }

    #[test]
    fn same_seed_same_bits() {
        let d = blobs(12, 5);
        let opts = TsneOptions {
            iterations: 300,
            ..Default::default()
        };
        let a = tsne(&d, &opts).unwrap();
        let b = tsne(&d, &opts).unwrap();
        assert_eq!(a, b);
        let other = tsne(&d, &TsneOptions { seed: 7, ..opts }).unwrap();
        assert_ne!(a.coords, other.coords);
    }
}
