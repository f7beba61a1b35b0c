//! Binary shape masks.
//!
//! A [`ShapeMask`] is always tightly cropped and holds exactly one
//! 4-connected foreground component. Coordinates are `(row, col)`, zero
//! based, and every per-pixel array in the crate is indexed in row-major
//! order over the shape pixels (see [`PixelIndex`]).

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeMask {
    pub id: String,
    pub category: String,
    rows: usize,
    cols: usize,
    cells: Vec<bool>,
    pixel_count: usize,
}

/// One of the eight symmetries of the square grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GridTransform {
    Identity,
    Rotate90,
    Rotate180,
    Rotate270,
    FlipHorizontal,
    FlipVertical,
    Transpose,
    AntiTranspose,
}

impl GridTransform {
    pub const ALL: [GridTransform; 8] = [
        GridTransform::Identity,
        GridTransform::Rotate90,
        GridTransform::Rotate180,
        GridTransform::Rotate270,
        GridTransform::FlipHorizontal,
        GridTransform::FlipVertical,
        GridTransform::Transpose,
        GridTransform::AntiTranspose,
    ];

    /// Output grid dimensions for an input of `rows × cols`.
    pub fn dims(self, rows: usize, cols: usize) -> (usize, usize) {
        match self {
            GridTransform::Identity
            | GridTransform::Rotate180
            | GridTransform::FlipHorizontal
            | GridTransform::FlipVertical => (rows, cols),
            _ => (cols, rows),
        }
    }

    /// Where input cell `(r, c)` lands in the transformed grid.
    pub fn map(self, r: usize, c: usize, rows: usize, cols: usize) -> (usize, usize) {
        match self {
            GridTransform::Identity => (r, c),
            // clockwise
            GridTransform::Rotate90 => (c, rows - 1 - r),
            GridTransform::Rotate180 => (rows - 1 - r, cols - 1 - c),
            GridTransform::Rotate270 => (cols - 1 - c, r),
            GridTransform::FlipHorizontal => (r, cols - 1 - c),
            GridTransform::FlipVertical => (rows - 1 - r, c),
            GridTransform::Transpose => (c, r),
            GridTransform::AntiTranspose => (cols - 1 - c, rows - 1 - r),
        }
    }
}

impl ShapeMask {
    /// Builds a mask from an arbitrary (possibly uncropped) occupancy grid.
    ///
    /// The grid is cropped to the bounding box of its true cells and must
    /// contain exactly one 4-connected component.
    pub fn from_grid(
        id: impl Into<String>,
        category: impl Into<String>,
        rows: usize,
        cols: usize,
        cells: &[bool],
    ) -> Result<Self> {
        if cells.len() != rows * cols {
            return Err(Error::InvalidMask(format!(
                "grid has {} cells, expected {rows}×{cols}",
                cells.len()
            )));
        }
        let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
        for r in 0..rows {
            for c in 0..cols {
                if cells[r * cols + c] {
                    r0 = r0.min(r);
                    r1 = r1.max(r);
                    c0 = c0.min(c);
                    c1 = c1.max(c);
                }
            }
        }
        if r0 == usize::MAX {
            return Err(Error::EmptyForeground);
        }
        let (nr, nc) = (r1 - r0 + 1, c1 - c0 + 1);
        let mut cropped = Vec::with_capacity(nr * nc);
        for r in r0..=r1 {
            cropped.extend_from_slice(&cells[r * cols + c0..r * cols + c1 + 1]);
        }
        let components = count_components(nr, nc, &cropped);
        if components != 1 {
            return Err(Error::MultipleComponents(components));
        }
        let pixel_count = cropped.iter().filter(|&&b| b).count();
        Ok(ShapeMask {
            id: id.into(),
            category: category.into(),
            rows: nr,
            cols: nc,
            cells: cropped,
            pixel_count,
        })
    }

    /// Parses an ASCII picture where `#` (or `1`) marks shape pixels and
    /// anything else is background. Handy in tests.
    pub fn from_ascii(id: impl Into<String>, art: &str) -> Result<Self> {
        let lines: Vec<&str> = art
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.trim().is_empty())
            .collect();
        let rows = lines.len();
        let cols = lines.iter().map(|l| l.len()).max().unwrap_or(0);
        let mut cells = vec![false; rows * cols];
        for (r, line) in lines.iter().enumerate() {
            for (c, ch) in line.bytes().enumerate() {
                cells[r * cols + c] = ch == b'#' || ch == b'1';
            }
        }
        Self::from_grid(id, "", rows, cols, &cells)
    }

    /// Filled axis-aligned rectangle.
    pub fn rectangle(id: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self::from_grid(id, "", rows, cols, &vec![true; rows * cols])
            .expect("nonempty rectangle is a valid mask")
    }

    pub fn with_category(mut self, category: impl Into<String>) -> Self {
        self.category = category.into();
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    /// Number of shape pixels `m`.
    pub fn pixel_count(&self) -> usize {
        self.pixel_count
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.cells[r * self.cols + c]
    }

    /// Occupancy with off-grid cells reported as background.
    #[inline]
    pub fn contains(&self, r: isize, c: isize) -> bool {
        r >= 0
            && c >= 0
            && (r as usize) < self.rows
            && (c as usize) < self.cols
            && self.cells[r as usize * self.cols + c as usize]
    }

    /// Shape pixel coordinates in row-major order.
    pub fn pixels(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.pixel_count);
        for r in 0..self.rows {
            for c in 0..self.cols {
                if self.get(r, c) {
                    out.push((r, c));
                }
            }
        }
        out
    }

    pub fn pixel_index(&self) -> PixelIndex {
        PixelIndex::new(self)
    }

    pub fn transform(&self, t: GridTransform) -> ShapeMask {
        let (nr, nc) = t.dims(self.rows, self.cols);
        let mut cells = vec![false; nr * nc];
        for r in 0..self.rows {
            for c in 0..self.cols {
                if self.get(r, c) {
                    let (tr, tc) = t.map(r, c, self.rows, self.cols);
                    cells[tr * nc + tc] = true;
                }
            }
        }
        ShapeMask {
            id: self.id.clone(),
            category: self.category.clone(),
            rows: nr,
            cols: nc,
            cells,
            pixel_count: self.pixel_count,
        }
    }

    /// The dihedral image of this mask with the smallest
    /// `(rows, cols, cells)` key. All eight rotations and reflections of a
    /// shape share one canonical pose, so downstream floating-point work is
    /// bit-identical across them.
    pub fn canonical_pose(&self) -> ShapeMask {
        GridTransform::ALL
            .iter()
            .map(|&t| self.transform(t))
            .min_by(|a, b| {
                (a.rows, a.cols)
                    .cmp(&(b.rows, b.cols))
                    .then_with(|| a.cells.cmp(&b.cells))
            })
            .expect("eight candidates")
    }

    /// SHA-256 over the grid dimensions and occupancy bits. Ids and
    /// categories do not participate.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.rows as u64).to_le_bytes());
        h.update((self.cols as u64).to_le_bytes());
        let mut byte = 0u8;
        for (i, &b) in self.cells.iter().enumerate() {
            byte |= (b as u8) << (i % 8);
            if i % 8 == 7 {
                h.update([byte]);
                byte = 0;
            }
        }
        h.update([byte]);
        hex::encode(h.finalize())
    }
}

/// Maps grid cells to row-major shape pixel indices.
#[derive(Debug, Clone)]
pub struct PixelIndex {
    rows: usize,
    cols: usize,
    index: Vec<u32>,
    coords: Vec<(usize, usize)>,
}

impl PixelIndex {
    const NONE: u32 = u32::MAX;

    pub fn new(mask: &ShapeMask) -> Self {
        let mut index = vec![Self::NONE; mask.rows * mask.cols];
        let coords = mask.pixels();
        for (i, &(r, c)) in coords.iter().enumerate() {
            index[r * mask.cols + c] = i as u32;
        }
        PixelIndex {
            rows: mask.rows,
            cols: mask.cols,
            index,
            coords,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[(usize, usize)] {
        &self.coords
    }

    /// Index of the shape pixel at `(r, c)`; `None` for background and
    /// off-grid cells.
    #[inline]
    pub fn at(&self, r: isize, c: isize) -> Option<usize> {
        if r < 0 || c < 0 || r as usize >= self.rows || c as usize >= self.cols {
            return None;
        }
        match self.index[r as usize * self.cols + c as usize] {
            Self::NONE => None,
            i => Some(i as usize),
        }
    }

    /// Indices of the 4-neighbors of pixel `i` that are shape pixels.
    pub fn neighbors4(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let (r, c) = self.coords[i];
        let (r, c) = (r as isize, c as isize);
        [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)]
            .into_iter()
            .filter_map(move |(nr, nc)| self.at(nr, nc))
    }
}

/// Number of 4-connected components of the true cells.
pub fn count_components(rows: usize, cols: usize, cells: &[bool]) -> usize {
    let mut seen = vec![false; cells.len()];
    let mut stack = Vec::new();
    let mut count = 0;
    for start in 0..cells.len() {
        if !cells[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (r, c) = (i / cols, i % cols);
            let mut visit = |j: usize| {
                if cells[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(i - cols);
            }
            if r + 1 < rows {
                visit(i + cols);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < cols {
                visit(i + 1);
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l_shape() -> ShapeMask {
        ShapeMask::from_ascii(
            "l",
            "#..\n\
             #..\n\
             ###",
        )
        .unwrap()
    }

    #[test]
    fn crops_to_bounding_box() {
        let mut cells = vec![false; 25];
        for r in 1..4 {
            for c in 1..4 {
                cells[r * 5 + c] = true;
            }
        }
        let m = ShapeMask::from_grid("a", "", 5, 5, &cells).unwrap();
        assert_eq!((m.rows(), m.cols(), m.pixel_count()), (3, 3, 9));
        assert!(m.cells().iter().all(|&b| b));
    }

    #[test]
    fn rejects_empty_and_split() {
        assert!(matches!(
            ShapeMask::from_grid("a", "", 2, 2, &[false; 4]),
            Err(Error::EmptyForeground)
        ));
        let err = ShapeMask::from_ascii("b", "#.#").unwrap_err();
        assert!(matches!(err, Error::MultipleComponents(2)));
        assert!(err.to_string().contains("2 components"));
        // diagonal contact does not connect
        assert!(matches!(
            ShapeMask::from_ascii("c", "#.\n.#"),
            Err(Error::MultipleComponents(2))
        ));
    }

    #[test]
    fn rotations_compose() {
        let m = l_shape();
        let r4 = m
            .transform(GridTransform::Rotate90)
            .transform(GridTransform::Rotate90)
            .transform(GridTransform::Rotate90)
            .transform(GridTransform::Rotate90);
        assert_eq!(m, r4);
        let r2 = m
            .transform(GridTransform::Rotate90)
            .transform(GridTransform::Rotate90);
        assert_eq!(r2, m.transform(GridTransform::Rotate180));
        let r3 = r2.transform(GridTransform::Rotate90);
        assert_eq!(r3, m.transform(GridTransform::Rotate270));
    }

    #[test]
    fn canonical_pose_is_shared_by_all_symmetries() {
        let m = ShapeMask::from_ascii(
            "t",
            "####.\n\
             .#...\n\
             .##..",
        )
        .unwrap();
        let canon = m.canonical_pose();
        for t in GridTransform::ALL {
            assert_eq!(m.transform(t).canonical_pose(), canon, "{t:?}");
        }
    }

    #[test]
    fn pixel_index_round_trip() {
        let m = l_shape();
        let idx = m.pixel_index();
        assert_eq!(idx.len(), 5);
        for (i, &(r, c)) in idx.coords().iter().enumerate() {
            assert_eq!(idx.at(r as isize, c as isize), Some(i));
        }
        assert_eq!(idx.at(0, 1), None);
        assert_eq!(idx.at(-1, 0), None);
        let corner = idx.at(2, 0).unwrap();
        let mut n: Vec<_> = idx.neighbors4(corner).collect();
        n.sort();
        assert_eq!(n, vec![idx.at(1, 0).unwrap(), idx.at(2, 1).unwrap()]);
    }

    #[test]
    fn hash_ignores_labels() {
        let a = l_shape();
        let b = l_shape().with_category("x");
        assert_eq!(a.content_hash(), b.content_hash());
        assert_ne!(
            a.content_hash(),
            a.transform(GridTransform::Rotate90).content_hash()
        );
    }
}
