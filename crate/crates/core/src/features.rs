//! Multi-scale screened-Poisson features.
//!
//! For each scale `ρ` the shape pixels solve
//! `(4ρ² + 1)·u_p − ρ²·Σ_{q ∈ N4(p) ∩ shape} u_q = ρ²`, i.e. every pixel is
//! `ρ²/(4ρ²+1)` times one plus the sum of its four neighbors, with
//! off-shape neighbors fixed at zero. Thirty scales `ρ_k = k·ρ*/30` give the
//! thirty columns of the feature matrix, each divided by its maximum.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::ShapeMeasurements;
use crate::mask::{PixelIndex, ShapeMask};

pub const FEATURE_DIM: usize = 30;
pub const DEFAULT_PCG_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MeasureKind {
    /// Body thickness `R`.
    Thickness,
    /// Geodesic extent `G`.
    Extent,
}

/// A feature space: `ρ* = (numerator/denominator) · R` or `· G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureSpace {
    pub kind: MeasureKind,
    pub numerator: u32,
    pub denominator: u32,
}

impl FeatureSpace {
    pub const fn thickness(multiple: u32) -> Self {
        FeatureSpace {
            kind: MeasureKind::Thickness,
            numerator: multiple,
            denominator: 1,
        }
    }

    pub const fn extent(numerator: u32, denominator: u32) -> Self {
        FeatureSpace {
            kind: MeasureKind::Extent,
            numerator,
            denominator,
        }
    }

    /// 2R, 3R, 4R, (2/3)G, (2/4)G, (2/5)G.
    pub const CANONICAL: [FeatureSpace; 6] = [
        FeatureSpace::thickness(2),
        FeatureSpace::thickness(3),
        FeatureSpace::thickness(4),
        FeatureSpace::extent(2, 3),
        FeatureSpace::extent(2, 4),
        FeatureSpace::extent(2, 5),
    ];

    pub fn multiplier(self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }

    /// 1/4 for R-based spaces, 1/12 for G-based ones.
    pub fn fusion_weight(self) -> f64 {
        match self.kind {
            MeasureKind::Thickness => 0.25,
            MeasureKind::Extent => 1.0 / 12.0,
        }
    }

    /// `ρ*` for a shape. Degenerate shapes with `G < R` (a single pixel has
    /// `G = 0`) fall back to `R` so that `ρ*` stays positive.
    pub fn rho_star(self, m: &ShapeMeasurements) -> f64 {
        let base = match self.kind {
            MeasureKind::Thickness => m.r,
            MeasureKind::Extent => m.g.max(m.r),
        };
        self.multiplier() * base
    }
}

impl fmt::Display for FeatureSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            MeasureKind::Thickness if self.denominator == 1 => write!(f, "{}R", self.numerator),
            MeasureKind::Thickness => write!(f, "{}R{}", self.numerator, self.denominator),
            MeasureKind::Extent => write!(f, "{}G{}", self.numerator, self.denominator),
        }
    }
}

impl FromStr for FeatureSpace {
    type Err = Error;

    /// Accepts `3R`, `2G3` (two thirds of G) and the general `aRb` / `aGb`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("unknown feature space {s:?}"));
        let upper = s.trim().to_ascii_uppercase();
        let (pos, kind) = match (upper.find('R'), upper.find('G')) {
            (Some(p), None) => (p, MeasureKind::Thickness),
            (None, Some(p)) => (p, MeasureKind::Extent),
            _ => return Err(bad()),
        };
        let numerator: u32 = upper[..pos].parse().map_err(|_| bad())?;
        let denominator: u32 = if upper[pos + 1..].is_empty() {
            1
        } else {
            upper[pos + 1..].parse().map_err(|_| bad())?
        };
        if numerator == 0 || denominator == 0 {
            return Err(bad());
        }
        Ok(FeatureSpace {
            kind,
            numerator,
            denominator,
        })
    }
}

/// `ρ_k = k·ρ*/30` for `k = 1..=30`.
pub fn rho_schedule(rho_star: f64) -> Result<Vec<f64>> {
    if !(rho_star > 0.0) || !rho_star.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "rho_star must be positive, got {rho_star}"
        )));
    }
    Ok((1..=FEATURE_DIM)
        .map(|k| k as f64 * rho_star / FEATURE_DIM as f64)
        .collect())
}

/// Shape-pixel adjacency in row-major order, four slots per pixel with
/// `u32::MAX` marking an off-shape neighbor.
#[derive(Debug, Clone)]
pub struct Stencil {
    neighbors: Vec<[u32; 4]>,
}

impl Stencil {
    pub fn new(index: &PixelIndex) -> Self {
        let neighbors = (0..index.len())
            .map(|i| {
                let mut slots = [u32::MAX; 4];
                for (s, j) in index.neighbors4(i).enumerate() {
                    slots[s] = j as u32;
                }
                slots
            })
            .collect();
        Stencil { neighbors }
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// `out = A·x` for the screened-Poisson operator at scale `ρ`.
    pub fn apply(&self, rho: f64, x: &[f64], out: &mut [f64]) {
        let r2 = rho * rho;
        let diag = 4.0 * r2 + 1.0;
        for (i, nb) in self.neighbors.iter().enumerate() {
            let mut s = 0.0;
            for &j in nb {
                if j != u32::MAX {
                    s += x[j as usize];
                }
            }
            out[i] = diag * x[i] - r2 * s;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relative residual `‖Au − b‖₂ / ‖b‖₂` of a candidate solution.
pub fn relative_residual(stencil: &Stencil, rho: f64, u: &[f64]) -> f64 {
    let b = rho * rho;
    let mut au = vec![0.0; u.len()];
    stencil.apply(rho, u, &mut au);
    let num: f64 = au.iter().map(|v| (v - b).powi(2)).sum::<f64>().sqrt();
    num / (b * (u.len() as f64).sqrt())
}

pub fn solve_screened_poisson(mask: &ShapeMask, rho: f64, tol: f64) -> Result<Vec<f64>> {
    let stencil = Stencil::new(&mask.pixel_index());
    solve_with_stencil(&stencil, rho, tol)
}

/// Jacobi-preconditioned conjugate gradient, capped at `10·m` iterations.
/// Convergence is checked against the true residual, not only the
/// recurrence.
pub fn solve_with_stencil(stencil: &Stencil, rho: f64, tol: f64) -> Result<Vec<f64>> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
    }
    let m = stencil.len();
    let r2 = rho * rho;
    let inv_diag = 1.0 / (4.0 * r2 + 1.0);
    let b_norm = r2 * (m as f64).sqrt();
    let max_iter = 10 * m.max(1);

    // with x₀ = 0 the Jacobi step is already a good start
    let mut x = vec![r2 * inv_diag; m];
    let mut ax = vec![0.0; m];
    let mut r = vec![0.0; m];
    let mut z = vec![0.0; m];
    let mut p = vec![0.0; m];
    let mut ap = vec![0.0; m];

    let mut iterations = 0;
    loop {
        stencil.apply(rho, &x, &mut ax);
        for i in 0..m {
            r[i] = r2 - ax[i];
        }
        let true_res = dot(&r, &r).sqrt() / b_norm;
        if true_res <= tol {
            return Ok(x);
        }
        if iterations >= max_iter {
            return Err(Error::SolverDiverged {
                iterations,
                residual: true_res,
                tol,
            });
        }
        for i in 0..m {
            z[i] = r[i] * inv_diag;
        }
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        while iterations < max_iter {
            iterations += 1;
            stencil.apply(rho, &p, &mut ap);
            let alpha = rz / dot(&p, &ap);
            for i in 0..m {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if dot(&r, &r).sqrt() / b_norm <= tol * 0.5 {
                break;
            }
            for i in 0..m {
                z[i] = r[i] * inv_diag;
            }
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..m {
                p[i] = z[i] + beta * p[i];
            }
        }
    }
}

/// Divides by the maximum so the largest value becomes exactly 1.
pub fn normalize_features(u: &[f64]) -> Result<Vec<f64>> {
    let max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::InvalidParameter(
            "cannot normalize a field whose maximum is not positive".into(),
        ));
    }
    Ok(u.iter().map(|v| v / max).collect())
}

/// The `m × 30` matrix of normalized features of one shape in one space.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub shape_id: String,
    pub space: FeatureSpace,
    pub rho_star: f64,
    /// Row-major `(row, col)` coordinates, one per matrix row.
    pub pixels: Vec<(usize, usize)>,
    pub data: DMatrix<f64>,
}

pub fn build_feature_matrix(
    mask: &ShapeMask,
    space: FeatureSpace,
    measurements: &ShapeMeasurements,
    tol: f64,
) -> Result<FeatureMatrix> {
    let rho_star = space.rho_star(measurements);
    build_feature_matrix_with_rho(mask, space, rho_star, tol)
}

pub fn build_feature_matrix_with_rho(
    mask: &ShapeMask,
    space: FeatureSpace,
    rho_star: f64,
    tol: f64,
) -> Result<FeatureMatrix> {
    let index = mask.pixel_index();
    let stencil = Stencil::new(&index);
    let rhos = rho_schedule(rho_star)?;
    let columns = rhos
        .par_iter()
        .map(|&rho| solve_with_stencil(&stencil, rho, tol).and_then(|u| normalize_features(&u)))
        .collect::<Result<Vec<_>>>()?;
    let m = index.len();
    let data = DMatrix::from_fn(m, FEATURE_DIM, |i, k| columns[k][i]);
    Ok(FeatureMatrix {
        shape_id: mask.id.clone(),
        space,
        rho_star,
        pixels: index.coords().to_vec(),
        data,
    })
}

impl FeatureMatrix {
    /// Little-endian `u64 m`, `u64 30`, then the matrix as row-major `f64`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let (m, n) = self.data.shape();
        w.write_all(&(m as u64).to_le_bytes())?;
        w.write_all(&(n as u64).to_le_bytes())?;
        for i in 0..m {
            for k in 0..n {
                w.write_all(&self.data[(i, k)].to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads the matrix written by [`FeatureMatrix::write_binary`].
    pub fn read_binary<R: Read>(mut r: R) -> std::io::Result<DMatrix<f64>> {
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let m = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let n = u64::from_le_bytes(word) as usize;
        if n != FEATURE_DIM {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("expected {FEATURE_DIM} columns, found {n}"),
            ));
        }
        let mut out = DMatrix::zeros(m, n);
        for i in 0..m {
            for k in 0..n {
                r.read_exact(&mut word)?;
                out[(i, k)] = f64::from_le_bytes(word);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::GridTransform;
    use nalgebra::DVector;

    /// Dense direct solve of the same system (LU).
    fn dense_solve(mask: &ShapeMask, rho: f64) -> Vec<f64> {
        let idx = mask.pixel_index();
        let m = idx.len();
        let r2 = rho * rho;
        let mut a = DMatrix::zeros(m, m);
        for i in 0..m {
            a[(i, i)] = 4.0 * r2 + 1.0;
            for j in idx.neighbors4(i) {
                a[(i, j)] = -r2;
            }
        }
        let b = DVector::from_element(m, r2);
        a.lu().solve(&b).unwrap().iter().copied().collect()
    }

    #[test]
    fn schedule() {
        let s = rho_schedule(30.0).unwrap();
        assert_eq!(s, (1..=30).map(|k| k as f64).collect::<Vec<_>>());
        let s = rho_schedule(3.0).unwrap();
        assert!((s[0] - 0.1).abs() < 1e-15 && s[29] == 3.0);
        assert_eq!(rho_schedule(15.0).unwrap()[14], 7.5);
        assert!(rho_schedule(0.0).is_err());
        assert!(rho_schedule(-1.0).is_err());
    }

    #[test]
    fn single_pixel() {
        let dot = ShapeMask::rectangle("p", 1, 1);
        let u = solve_screened_poisson(&dot, 1.0, 1e-8).unwrap();
        assert!((u[0] - 0.2).abs() < 1e-15);
        assert_eq!(normalize_features(&u).unwrap(), vec![1.0]);
    }

    #[test]
    fn three_bar_matches_dense_oracle() {
        let bar = ShapeMask::rectangle("b", 1, 3);
        let oracle = dense_solve(&bar, 1.0);
        let exact = [6.0 / 23.0, 7.0 / 23.0, 6.0 / 23.0];
        for (o, e) in oracle.iter().zip(exact) {
            assert!((o - e).abs() < 1e-14);
        }
        let u = solve_screened_poisson(&bar, 1.0, 1e-8).unwrap();
        for (v, e) in u.iter().zip(exact) {
            assert!((v - e).abs() < 1e-8);
        }
        let f = normalize_features(&u).unwrap();
        assert_eq!(f[1], 1.0);
        assert!((f[0] - 6.0 / 7.0).abs() < 1e-8 && (f[2] - 6.0 / 7.0).abs() < 1e-8);
    }

    #[test]
    fn normalization_is_scale_free() {
        let u = [0.3, 1.7, 0.9, 2.2];
        let f = normalize_features(&u).unwrap();
        let scaled: Vec<f64> = u.iter().map(|v| v * 3.5).collect();
        let g = normalize_features(&scaled).unwrap();
        for (a, b) in f.iter().zip(&g) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(normalize_features(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn large_square_interior_approaches_rho_squared() {
        let sq = ShapeMask::rectangle("s", 41, 41);
        let rho = 2.0;
        let u = solve_screened_poisson(&sq, rho, 1e-10).unwrap();
        let idx = sq.pixel_index();
        let row: Vec<f64> = (0..=20).map(|c| u[idx.at(20, c).unwrap()]).collect();
        for w in row.windows(2) {
            assert!(w[1] > w[0]);
        }
        assert!((row[20] - 4.0).abs() < 1e-3);
        assert!(u.iter().all(|&v| v > 0.0 && v <= 4.0));
    }

    #[test]
    fn bar_increases_toward_middle() {
        // near the middle of a long bar at small rho the increments are ~1e-10,
        // so the solve has to be tighter than the pipeline default
        for l in [2usize, 5, 10] {
            for rho in [0.5, 1.0, 5.0] {
                let bar = ShapeMask::rectangle("b", 1, 2 * l + 1);
                let u = solve_screened_poisson(&bar, rho, 1e-13).unwrap();
                for i in 0..l {
                    assert!(u[i] < u[i + 1], "L={l} rho={rho} i={i}");
                    assert!(u[2 * l - i] < u[2 * l - i - 1]);
                }
            }
        }
    }

    #[test]
    fn feature_matrix_columns_peak_at_one() {
        let dot = ShapeMask::rectangle("p", 1, 1);
        let ms = ShapeMeasurements { r: 1.0, g: 0.0 };
        for space in FeatureSpace::CANONICAL {
            let fm = build_feature_matrix(&dot, space, &ms, 1e-8).unwrap();
            assert_eq!(fm.data.shape(), (1, 30));
            assert!(fm.data.iter().all(|&v| v == 1.0));
        }

        let bar = ShapeMask::rectangle("b", 1, 3);
        let fm = build_feature_matrix_with_rho(&bar, FeatureSpace::thickness(1), 1.0, 1e-8).unwrap();
        assert!((fm.data[(0, 29)] - 6.0 / 7.0).abs() < 1e-8);
        assert_eq!(fm.data[(1, 29)], 1.0);

        let l = ShapeMask::from_ascii("l", "#...\n#...\n#...\n####").unwrap();
        let fm = build_feature_matrix_with_rho(&l, FeatureSpace::thickness(3), 3.0, 1e-8).unwrap();
        for k in 0..30 {
            assert_eq!(fm.data.column(k).max(), 1.0);
            assert!(fm.data.column(k).min() > 0.0);
        }
    }

    #[test]
    fn rotation_permutes_solution() {
        let m = ShapeMask::from_ascii("t", "#####\n..#..\n..#..\n.###.").unwrap();
        let u = solve_screened_poisson(&m, 1.3, 1e-12).unwrap();
        let idx = m.pixel_index();
        let rot = m.transform(GridTransform::Rotate90);
        let ur = solve_screened_poisson(&rot, 1.3, 1e-12).unwrap();
        let ridx = rot.pixel_index();
        for (i, &(r, c)) in idx.coords().iter().enumerate() {
            let (tr, tc) = GridTransform::Rotate90.map(r, c, m.rows(), m.cols());
            let j = ridx.at(tr as isize, tc as isize).unwrap();
            assert!((u[i] - ur[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn space_names() {
        let names: Vec<String> = FeatureSpace::CANONICAL.iter().map(|s| s.to_string()).collect();
        assert_eq!(names, ["2R", "3R", "4R", "2G3", "2G4", "2G5"]);
        for s in FeatureSpace::CANONICAL {
            assert_eq!(s.to_string().parse::<FeatureSpace>().unwrap(), s);
        }
        assert!("G".parse::<FeatureSpace>().is_err());
        assert!("2X".parse::<FeatureSpace>().is_err());
        let w: f64 = FeatureSpace::CANONICAL.iter().map(|s| s.fusion_weight()).sum();
        assert!((w - 1.0).abs() < 1e-15);
    }

    #[test]
    fn binary_layout() {
        let bar = ShapeMask::rectangle("b", 2, 3);
        let fm = build_feature_matrix_with_rho(&bar, FeatureSpace::thickness(2), 2.0, 1e-8).unwrap();
        let mut buf = Vec::new();
        fm.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 6 * 30 * 8);
        assert_eq!(&buf[..8], &6u64.to_le_bytes());
        assert_eq!(&buf[8..16], &30u64.to_le_bytes());
        assert_eq!(&buf[16..24], &fm.data[(0, 0)].to_le_bytes());
        assert_eq!(&buf[24..32], &fm.data[(0, 1)].to_le_bytes());
        assert_eq!(FeatureMatrix::read_binary(&buf[..]).unwrap(), fm.data);
    }
}
