//! Mask and manifest input, plus the small image writers used for debug
//! output (PBM masks, PGM heatmaps).

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::mask::ShapeMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// Gray levels at or above this value are foreground (PGM/PNG).
    pub threshold: u8,
    /// Swap foreground and background for every format.
    pub invert: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            threshold: 128,
            invert: false,
        }
    }
}

/// Loads a PBM, PGM (plain or raw) or PNG file as a cropped single-component
/// mask. The id is the file stem; the category is empty.
pub fn load_mask(path: impl AsRef<Path>, opts: LoadOptions) -> Result<ShapeMask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (rows, cols, cells) = decode(path, &bytes, opts)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ShapeMask::from_grid(id, "", rows, cols, &cells)
}

fn decode(path: &Path, bytes: &[u8], opts: LoadOptions) -> Result<(usize, usize, Vec<bool>)> {
    if bytes.starts_with(b"\x89PNG") {
        return decode_png(path, bytes, opts);
    }
    if bytes.len() >= 2 && bytes[0] == b'P' {
        return decode_pnm(bytes, opts).map_err(|reason| Error::Image {
            path: path.to_path_buf(),
            reason,
        });
    }
    Err(Error::Image {
        path: path.to_path_buf(),
        reason: "expected PBM, PGM or PNG data".into(),
    })
}

fn decode_png(path: &Path, bytes: &[u8], opts: LoadOptions) -> Result<(usize, usize, Vec<bool>)> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .into_luma8();
    let (w, h) = img.dimensions();
    let cells = img
        .pixels()
        .map(|p| (p.0[0] >= opts.threshold) != opts.invert)
        .collect();
    Ok((h as usize, w as usize, cells))
}

struct PnmReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PnmReader<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn uint(&mut self) -> std::result::Result<usize, String> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format!("expected integer at byte {start}"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|e| format!("{e}"))
    }

    /// One plain-PBM bit; digits may be packed without separators.
    fn bit(&mut self) -> std::result::Result<bool, String> {
        self.skip_ws();
        match self.bytes.get(self.pos) {
            Some(b'0') => {
                self.pos += 1;
                Ok(false)
            }
            Some(b'1') => {
                self.pos += 1;
                Ok(true)
            }
            _ => Err("truncated or invalid PBM raster".into()),
        }
    }
}

fn decode_pnm(bytes: &[u8], opts: LoadOptions) -> std::result::Result<(usize, usize, Vec<bool>), String> {
    let kind = bytes[1];
    let mut rd = PnmReader { bytes, pos: 2 };
    let cols = rd.uint()?;
    let rows = rd.uint()?;
    if rows == 0 || cols == 0 {
        return Err("zero-sized image".into());
    }
    let n = rows * cols;
    let mut cells = Vec::with_capacity(n);
    match kind {
        // PBM: 1 = black = shape
        b'1' => {
            for _ in 0..n {
                cells.push(rd.bit()? != opts.invert);
            }
        }
        b'4' => {
            rd.pos += 1;
            let stride = cols.div_ceil(8);
            let data = &bytes[rd.pos.min(bytes.len())..];
            if data.len() < stride * rows {
                return Err("truncated raw PBM raster".into());
            }
            for r in 0..rows {
                for c in 0..cols {
                    let bit = (data[r * stride + c / 8] >> (7 - c % 8)) & 1 == 1;
                    cells.push(bit != opts.invert);
                }
            }
        }
        b'2' | b'5' => {
            let maxval = rd.uint()?;
            if maxval == 0 || maxval > 65535 {
                return Err(format!("invalid maxval {maxval}"));
            }
            let scale = |v: usize| -> u8 { ((v.min(maxval) * 255 + maxval / 2) / maxval) as u8 };
            if kind == b'2' {
                for _ in 0..n {
                    let v = scale(rd.uint()?);
                    cells.push((v >= opts.threshold) != opts.invert);
                }
            } else {
                rd.pos += 1;
                let data = &bytes[rd.pos.min(bytes.len())..];
                let wide = maxval > 255;
                let need = if wide { 2 * n } else { n };
                if data.len() < need {
                    return Err("truncated raw PGM raster".into());
                }
                for i in 0..n {
                    let raw = if wide {
                        u16::from_be_bytes([data[2 * i], data[2 * i + 1]]) as usize
                    } else {
                        data[i] as usize
                    };
                    cells.push((scale(raw) >= opts.threshold) != opts.invert);
                }
            }
        }
        other => return Err(format!("unsupported PNM variant P{}", other as char)),
    }
    Ok((rows, cols, cells))
}

/// Plain PBM with `1` for shape pixels.
pub fn mask_to_pbm(mask: &ShapeMask) -> String {
    let mut out = format!("P1\n# {}\n{} {}\n", mask.id, mask.cols(), mask.rows());
    for r in 0..mask.rows() {
        let line: Vec<&str> = (0..mask.cols())
            .map(|c| if mask.get(r, c) { "1" } else { "0" })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Raw 8-bit PGM.
pub fn write_pgm(path: impl AsRef<Path>, rows: usize, cols: usize, gray: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub id: String,
    pub category: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True when every entry carries a nonempty category.
    pub fn has_categories(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| !e.category.is_empty())
    }

    pub fn load_masks(&self, opts: LoadOptions) -> Result<Vec<ShapeMask>> {
        self.entries
            .iter()
            .map(|e| {
                let mut m = load_mask(&e.path, opts).map_err(|err| Error::Stage {
                    stage: "load",
                    shape: e.id.clone(),
                    source: Box::new(err),
                })?;
                m.id = e.id.clone();
                m.category = e.category.clone();
                Ok(m)
            })
            .collect()
    }
}

/// Reads a `path,id,category` CSV. Lines starting with `#` and blank lines
/// are skipped; relative paths resolve against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let err = |line: usize, reason: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        reason,
    };

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    let mut header_seen = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if !header_seen {
            header_seen = true;
            if fields != ["path", "id", "category"] {
                return Err(err(line_no, "expected header `path,id,category`".into()));
            }
            continue;
        }
        if fields.len() != 3 {
            return Err(err(line_no, format!("expected 3 fields, found {}", fields.len())));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(err(line_no, "path and id must be nonempty".into()));
        }
        let id = fields[1].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        let file = base.join(fields[0]);
        if !file.is_file() {
            return Err(err(line_no, format!("missing file {}", file.display())));
        }
        entries.push(ManifestEntry {
            path: file,
            id,
            category: fields[2].to_string(),
        });
    }
    if !header_seen {
        return Err(err(1, "empty manifest".into()));
    }
    Ok(DatasetManifest { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, data: &[u8]) -> PathBuf {
        let p = dir.join(name);
        fs::File::create(&p).unwrap().write_all(data).unwrap();
        p
    }

    fn centered_block_pgm() -> Vec<u8> {
        let mut s = String::from("P2\n5 5\n255\n");
        for r in 0..5 {
            for c in 0..5 {
                let v = if (1..4).contains(&r) && (1..4).contains(&c) { 255 } else { 0 };
                s.push_str(&format!("{v} "));
            }
            s.push('\n');
        }
        s.into_bytes()
    }

    #[test]
    fn plain_pgm_center_block() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "blk.pgm", &centered_block_pgm());
        let m = load_mask(&p, LoadOptions::default()).unwrap();
        assert_eq!((m.rows(), m.cols(), m.pixel_count()), (3, 3, 9));
        assert_eq!(m.id, "blk");
    }

    #[test]
    fn invert_flag_swaps_polarity() {
        let dir = tempfile::tempdir().unwrap();
        // white frame around a black center: inverted, the center is the shape
        let p = write(dir.path(), "f.pgm", b"P2 3 3 255\n255 255 255\n255 0 255\n255 255 255\n");
        let m = load_mask(
            &p,
            LoadOptions {
                invert: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(m.pixel_count(), 1);
    }

    #[test]
    fn all_black_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "z.pgm", b"P5 4 2 255\n\0\0\0\0\0\0\0\0");
        let err = load_mask(&p, LoadOptions::default()).unwrap_err();
        assert_eq!(err.to_string(), "empty foreground");
    }

    #[test]
    fn two_blocks_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "two.pbm", b"P1\n5 1\n1 1 0 1 1\n");
        let err = load_mask(&p, LoadOptions::default()).unwrap_err();
        assert!(err.to_string().contains("2 components"), "{err}");
    }

    #[test]
    fn raw_pbm_and_png() {
        let dir = tempfile::tempdir().unwrap();
        // 10 wide: two bytes per row
        let p = write(dir.path(), "r.pbm", &[b"P4\n10 2\n".as_slice(), &[0b0111_0000, 0, 0b0010_0000, 0]].concat());
        let m = load_mask(&p, LoadOptions::default()).unwrap();
        assert_eq!((m.rows(), m.cols(), m.pixel_count()), (2, 3, 4));

        let mut img = image::GrayImage::new(6, 4);
        for (x, y) in [(1, 1), (2, 1), (3, 1), (2, 2)] {
            img.put_pixel(x, y, image::Luma([200]));
        }
        let png = dir.path().join("t.png");
        img.save(&png).unwrap();
        let m = load_mask(&png, LoadOptions::default()).unwrap();
        assert_eq!((m.rows(), m.cols(), m.pixel_count()), (2, 3, 4));
    }

    #[test]
    fn pbm_dump_reloads_identically() {
        let dir = tempfile::tempdir().unwrap();
        let m = ShapeMask::from_ascii("x", "##.\n.##\n..#").unwrap();
        let p = write(dir.path(), "x.pbm", mask_to_pbm(&m).as_bytes());
        let again = load_mask(&p, LoadOptions::default()).unwrap();
        assert_eq!(again.cells(), m.cells());
        let p2 = write(dir.path(), "y.pbm", mask_to_pbm(&again).as_bytes());
        assert_eq!(fs::read(&p).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn translated_masks_load_identically() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "a.pbm", b"P1 4 3\n0 1 1 0\n0 0 1 0\n0 0 0 0\n");
        let b = write(dir.path(), "b.pbm", b"P1 4 3\n0 0 0 0\n0 0 1 1\n0 0 0 1\n");
        let ma = load_mask(&a, LoadOptions::default()).unwrap();
        let mb = load_mask(&b, LoadOptions::default()).unwrap();
        assert_eq!(ma.cells(), mb.cells());
    }

    fn manifest_dir() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for n in ["a", "b", "c"] {
            write(dir.path(), &format!("{n}.pbm"), b"P1 1 1 1\n");
        }
        dir
    }

    #[test]
    fn manifest_valid() {
        let dir = manifest_dir();
        let p = write(
            dir.path(),
            "m.csv",
            b"# comment\npath,id,category\na.pbm,cat01,cat\nb.pbm,cat02,cat\n# x\nc.pbm,dog01,dog\n",
        );
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.entries[2].id, "dog01");
        assert_eq!(m.entries[0].path, dir.path().join("a.pbm"));
        assert!(m.has_categories());
    }

    #[test]
    fn manifest_duplicate_id() {
        let dir = manifest_dir();
        let p = write(dir.path(), "m.csv", b"path,id,category\na.pbm,cat01,c\nb.pbm,cat01,c\n");
        let err = load_manifest(&p).unwrap_err();
        assert!(err.to_string().contains("cat01"));
    }

    #[test]
    fn manifest_short_row() {
        let dir = manifest_dir();
        let p = write(
            dir.path(),
            "m.csv",
            b"path,id,category\na.pbm,x,c\nb.pbm,y,c\nc.pbm,z\n",
        );
        let err = load_manifest(&p).unwrap_err();
        assert!(err.to_string().contains("line 4: expected 3 fields"), "{err}");
    }

    #[test]
    fn manifest_missing_file() {
        let dir = manifest_dir();
        let p = write(dir.path(), "m.csv", b"path,id,category\nnope.pbm,x,c\n");
        assert!(load_manifest(&p).unwrap_err().to_string().contains("missing file"));
    }
}
