//! Seeded synthetic shapes: articulated figures for clustering tests
//! and random connected blobs for solver tests.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::mask_to_pbm;
use crate::mask::ShapeMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Bar,
    Cross,
    LShape,
    TShape,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Bar, Category::Cross, Category::LShape, Category::TShape];
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Bar => "bar",
            Category::Cross => "cross",
            Category::LShape => "lshape",
            Category::TShape => "tshape",
        })
    }
}

/// Geometry of the generated figures, in pixels and radians.
///
/// Bars are a thick stroke bent at its middle. L-shapes are a thick stroke
/// with one thin limb at an end; T-shapes have two thin limbs there,
/// pointing to either side. Crosses are a round body with four thin limbs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FigureParams {
    pub body_radius: f64,
    pub stroke_half_width: f64,
    pub stroke_length: (f64, f64),
    pub limb_half_width: f64,
    pub limb_length: (f64, f64),
    /// Limbs (and the two halves of a bar) turn about their joint by up to
    /// this much.
    pub max_limb_rotation: f64,
}

impl Default for FigureParams {
    fn default() -> Self {
        FigureParams {
            body_radius: 11.0,
            stroke_half_width: 7.0,
            stroke_length: (40.0, 48.0),
            limb_half_width: 3.5,
            limb_length: (26.0, 32.0),
            max_limb_rotation: 20f64.to_radians(),
        }
    }
}

/// A segment thickened to a capsule.
#[derive(Debug, Clone, Copy)]
struct Capsule {
    a: (f64, f64),
    b: (f64, f64),
    half_width: f64,
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

fn toward(from: (f64, f64), angle: f64, len: f64) -> (f64, f64) {
    (from.0 + len * angle.cos(), from.1 + len * angle.sin())
}

fn capsules<R: Rng>(category: Category, p: &FigureParams, rng: &mut R) -> Vec<Capsule> {
    let turn = |rng: &mut R| rng.random_range(-p.max_limb_rotation..=p.max_limb_rotation);
    let origin = (0.0, 0.0);
    let limb = |from, angle, len| Capsule {
        a: from,
        b: toward(from, angle, len),
        half_width: p.limb_half_width,
    };
    let stroke = |a, b| Capsule {
        a,
        b,
        half_width: p.stroke_half_width,
    };
    match category {
        Category::Bar => {
            let half = 0.5 * rng.random_range(p.stroke_length.0..=p.stroke_length.1) * 1.4;
            let bend = turn(rng);
            vec![
                stroke(origin, toward(origin, 0.0, half)),
                stroke(origin, toward(origin, PI + bend, half)),
            ]
        }
        Category::Cross => {
            let mut out = vec![Capsule {
                a: origin,
                b: origin,
                half_width: p.body_radius,
            }];
            for k in 0..4 {
                let angle = 0.5 * PI * k as f64 + turn(rng);
                out.push(limb(origin, angle, rng.random_range(p.limb_length.0..=p.limb_length.1)));
            }
            out
        }
        Category::LShape | Category::TShape => {
            let len = rng.random_range(p.stroke_length.0..=p.stroke_length.1);
            let (a, b) = ((-0.5 * len, 0.0), (0.5 * len, 0.0));
            let mut out = vec![stroke(a, b)];
            let arms: &[f64] = if category == Category::LShape { &[0.5 * PI] } else { &[0.5 * PI, -0.5 * PI] };
            for &base in arms {
                let angle = base + turn(rng);
                let limb_len = rng.random_range(p.limb_length.0..=p.limb_length.1);
                out.push(limb(b, angle, limb_len + p.stroke_half_width));
            }
            out
        }
    }
}

/// One articulated figure with a random orientation, random part lengths
/// and randomly turned limbs.
pub fn articulated_figure(
    id: impl Into<String>,
    category: Category,
    params: &FigureParams,
    rng: &mut impl Rng,
) -> Result<ShapeMask> {
    let parts = capsules(category, params, rng);
    let orientation = rng.random_range(0.0..2.0 * PI);
    let (sin, cos) = orientation.sin_cos();
    let rotate = |(x, y): (f64, f64)| (x * cos - y * sin, x * sin + y * cos);
    let parts: Vec<Capsule> = parts
        .into_iter()
        .map(|c| Capsule {
            a: rotate(c.a),
            b: rotate(c.b),
            ..c
        })
        .collect();
    let reach = parts
        .iter()
        .flat_map(|c| [c.a, c.b].map(|q| q.0.abs().max(q.1.abs()) + c.half_width))
        .fold(0.0, f64::max)
        + 2.0;
    let half = reach.ceil() as usize;
    let size = 2 * half + 1;
    let mut cells = vec![false; size * size];
    for r in 0..size {
        for c in 0..size {
            let q = (r as f64 - half as f64, c as f64 - half as f64);
            cells[r * size + c] = parts.iter().any(|cap| segment_distance(q, cap.a, cap.b) <= cap.half_width);
        }
    }
    ShapeMask::from_grid(id, category.to_string(), size, size, &cells)
}

/// `per_category` figures of each of the four categories, ids
/// `<category>NN`, generated from one seed.
pub fn articulated_dataset(per_category: usize, seed: u64) -> Result<Vec<ShapeMask>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = FigureParams::default();
    let mut out = Vec::with_capacity(4 * per_category);
    for category in Category::ALL {
        for k in 0..per_category {
            out.push(articulated_figure(format!("{category}{:02}", k + 1), category, &params, &mut rng)?);
        }
    }
    Ok(out)
}

/// Writes each mask as `<dir>/<id>.pbm` plus `<dir>/manifest.csv`, and
/// returns the manifest path. Categories are written when present.
pub fn write_dataset(dir: impl AsRef<Path>, masks: &[ShapeMask]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::from("path,id,category\n");
    for m in masks {
        let file = format!("{}.pbm", m.id);
        let path = dir.join(&file);
        std::fs::write(&path, mask_to_pbm(m)).map_err(|e| Error::io(&path, e))?;
        manifest.push_str(&format!("{file},{},{}\n", m.id, m.category));
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// A random 4-connected blob of `1..=max_pixels` pixels grown from a single
/// seed by repeatedly adding a random 4-neighbor of the current shape.
pub fn random_blob(id: impl Into<String>, max_pixels: usize, rng: &mut impl Rng) -> ShapeMask {
    let target = rng.random_range(1..=max_pixels.max(1));
    let side = 2 * target + 1;
    let mut cells = vec![false; side * side];
    let mut members = vec![(target, target)];
    cells[target * side + target] = true;
    while members.len() < target {
        let (r, c) = members[rng.random_range(0..members.len())];
        let (nr, nc) = match rng.random_range(0..4) {
            0 => (r - 1, c),
            1 => (r + 1, c),
            2 => (r, c - 1),
            _ => (r, c + 1),
        };
        if !cells[nr * side + nc] {
            cells[nr * side + nc] = true;
            members.push((nr, nc));
        }
    }
    ShapeMask::from_grid(id, "", side, side, &cells).expect("grown blob is connected")
}
