//! Robust PCA by inexact augmented Lagrange multipliers, and the per-pixel
//! distinctness read off the sparse component.
//!
//! Solves `min ‖L‖_* + λ‖S‖₁  s.t.  L + S = D`. Hyperparameters follow the
//! usual reference implementation: `Y₀ = D / max(‖D‖₂, ‖D‖_∞/λ)`,
//! `μ₀ = 1.25/‖D‖₂`, `μ ← min(1.5μ, 10⁷μ₀)`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-7;
pub const DEFAULT_MAX_ITER: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpcaOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub mu_growth: f64,
    pub mu_max_ratio: f64,
}

impl Default for RpcaOptions {
    fn default() -> Self {
        RpcaOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            mu_growth: 1.5,
            mu_max_ratio: 1e7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpcaResult {
    pub low_rank: DMatrix<f64>,
    pub sparse: DMatrix<f64>,
    pub iterations: usize,
    /// `‖D − L − S‖_F / ‖D‖_F` at return.
    pub residual: f64,
    pub converged: bool,
}

/// Entrywise soft threshold `sign(x)·max(|x| − τ, 0)`.
pub fn shrink(m: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    m.map(|x| soft(x, tau))
}

#[inline]
fn soft(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// Eigendecomposition of the smaller Gram matrix of `m`. Returns the
/// eigenvectors together with singular values, and whether the Gram matrix
/// was `MᵀM` (right singular vectors) or `MMᵀ` (left).
fn gram_eigen(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, bool)> {
    let (rows, cols) = m.shape();
    let right = rows >= cols;
    let gram = if right { m.tr_mul(m) } else { m * m.transpose() };
    if gram.iter().any(|v| !v.is_finite()) {
        return Err(Error::Svd("non-finite entries".into()));
    }
    let eig = SymmetricEigen::new(gram);
    let sigma = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    Ok((eig.eigenvectors, sigma, right))
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    if m.is_empty() {
        return Ok(0.0);
    }
    let (_, sigma, _) = gram_eigen(m)?;
    Ok(sigma.into_iter().fold(0.0, f64::max))
}

/// Sum of singular values.
pub fn nuclear_norm(m: &DMatrix<f64>) -> Result<f64> {
    if m.is_empty() {
        return Ok(0.0);
    }
    Ok(gram_eigen(m)?.1.into_iter().sum())
}

/// Singular value thresholding `U·shrink(Σ, τ)·Vᵀ`.
///
/// Computed as `M·V·diag(max(0, 1 − τ/σ))·Vᵀ` from the eigenvectors of the
/// Gram matrix on the short side, which never forms `U` explicitly.
pub fn svt(m: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    if tau == 0.0 || m.is_empty() {
        return Ok(m.clone());
    }
    let (vecs, sigma, right) = gram_eigen(m)?;
    let mut scaled = vecs.clone();
    for (j, &s) in sigma.iter().enumerate() {
        let f = if s > tau { 1.0 - tau / s } else { 0.0 };
        scaled.column_mut(j).scale_mut(f);
    }
    let proj = scaled * vecs.transpose();
    Ok(if right { m * proj } else { proj * m })
}

pub fn default_lambda(rows: usize) -> f64 {
    1.0 / (rows.max(1) as f64).sqrt()
}

pub fn rpca_ialm(d: &DMatrix<f64>, lambda: f64, opts: &RpcaOptions) -> Result<RpcaResult> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    let shape = d.shape();
    let d_norm = d.norm();
    if d_norm == 0.0 {
        return Ok(RpcaResult {
            low_rank: DMatrix::zeros(shape.0, shape.1),
            sparse: DMatrix::zeros(shape.0, shape.1),
            iterations: 0,
            residual: 0.0,
            converged: true,
        });
    }

    let norm_two = spectral_norm(d)?;
    let norm_inf = d.amax() / lambda;
    let mut y = d / norm_two.max(norm_inf);
    let mut mu = 1.25 / norm_two;
    let mu_max = mu * opts.mu_max_ratio;

    let mut low = DMatrix::zeros(shape.0, shape.1);
    let mut sparse = DMatrix::zeros(shape.0, shape.1);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let inv_mu = 1.0 / mu;
        let thresh = lambda * inv_mu;
        sparse = d.zip_zip_map(&low, &y, |dv, lv, yv| soft(dv - lv + inv_mu * yv, thresh));
        let target = d.zip_zip_map(&sparse, &y, |dv, sv, yv| dv - sv + inv_mu * yv);
        low = svt(&target, inv_mu)?;
        let z = d - &low - &sparse;
        residual = z.norm() / d_norm;
        y += mu * &z;
        mu = (mu * opts.mu_growth).min(mu_max);
        if residual < opts.tol {
            break;
        }
    }
    let converged = residual < opts.tol;
    if !converged {
        log::warn!("rpca stopped after {iterations} iterations with residual {residual:.3e}");
    }
    Ok(RpcaResult {
        low_rank: low,
        sparse,
        iterations,
        residual,
        converged,
    })
}

/// Per-pixel distinctness: Euclidean norms of the rows of `S`, plus the same
/// values divided by their maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct DistinctnessField {
    pub pixels: Vec<(usize, usize)>,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

pub fn distinctness(sparse: &DMatrix<f64>, pixels: &[(usize, usize)]) -> Result<DistinctnessField> {
    if sparse.nrows() != pixels.len() {
        return Err(Error::InvalidParameter(format!(
            "sparse matrix has {} rows for {} pixels",
            sparse.nrows(),
            pixels.len()
        )));
    }
    let raw: Vec<f64> = sparse.row_iter().map(|r| r.norm()).collect();
    Ok(DistinctnessField::from_raw(pixels.to_vec(), raw))
}

impl DistinctnessField {
    pub fn from_raw(pixels: Vec<(usize, usize)>, raw: Vec<f64>) -> Self {
        let max = raw.iter().copied().fold(0.0, f64::max);
        let normalized = if max > 0.0 {
            raw.iter().map(|v| v / max).collect()
        } else {
            vec![0.0; raw.len()]
        };
        DistinctnessField {
            pixels,
            raw,
            normalized,
        }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}
