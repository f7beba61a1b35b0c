//! CSV and SVG outputs.
//!
//! Floats are written with 17 significant digits so every value reads back
//! bit-exact. Lines starting with `#` are comments and are skipped on read.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::cluster::{ClusterAssignment, Embedding2D};
use crate::error::{Error, Result};

pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn csv_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn parse_float(path: &Path, line: usize, field: &str) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| csv_err(path, line, format!("not a number: {field:?}")))
}

/// Square matrix with an `id` header row and an id column.
pub fn matrix_csv(ids: &[String], m: &DMatrix<f64>) -> String {
    let mut out = String::from("id");
    for id in ids {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for (i, id) in ids.iter().enumerate() {
        out.push_str(id);
        for j in 0..m.ncols() {
            out.push(',');
            out.push_str(&format_float(m[(i, j)]));
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: impl AsRef<Path>, ids: &[String], m: &DMatrix<f64>) -> Result<()> {
    write_atomic(path, matrix_csv(ids, m).as_bytes())
}

/// Reads a matrix written by [`write_matrix_csv`]; the row ids must repeat
/// the header ids in order.
pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, DMatrix<f64>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = data_lines(&text);
    let (hline, header) = lines.next().ok_or_else(|| csv_err(path, 1, "empty file"))?;
    let mut fields = header.split(',');
    if fields.next().map(str::trim) != Some("id") {
        return Err(csv_err(path, hline, "header must start with `id`"));
    }
    let ids: Vec<String> = fields.map(|s| s.trim().to_string()).collect();
    let n = ids.len();
    let mut m = DMatrix::zeros(n, n);
    let mut row = 0;
    for (line, text) in lines {
        if row == n {
            return Err(csv_err(path, line, format!("more than {n} data rows")));
        }
        let fields: Vec<&str> = text.split(',').collect();
        if fields.len() != n + 1 {
            return Err(csv_err(path, line, format!("expected {} fields, found {}", n + 1, fields.len())));
        }
        if fields[0].trim() != ids[row] {
            return Err(csv_err(path, line, format!("row id {:?} does not match column id {:?}", fields[0], ids[row])));
        }
        for j in 0..n {
            m[(row, j)] = parse_float(path, line, fields[j + 1])?;
        }
        row += 1;
    }
    if row != n {
        return Err(csv_err(path, text.lines().count(), format!("{row} data rows for {n} columns")));
    }
    Ok((ids, m))
}

pub fn embedding_csv(emb: &Embedding2D, seed: u64) -> String {
    let mut out = format!("# seed={seed}\nid,x,y\n");
    for (id, p) in emb.ids.iter().zip(&emb.coords) {
        let _ = writeln!(out, "{id},{},{}", format_float(p[0]), format_float(p[1]));
    }
    out
}

pub fn read_embedding_csv(path: impl AsRef<Path>) -> Result<Embedding2D> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = data_lines(&text);
    match lines.next() {
        Some((_, "id,x,y")) => {}
        Some((line, _)) => return Err(csv_err(path, line, "expected header `id,x,y`")),
        None => return Err(csv_err(path, 1, "empty file")),
    }
    let mut emb = Embedding2D {
        ids: Vec::new(),
        coords: Vec::new(),
    };
    for (line, text) in lines {
        let f: Vec<&str> = text.split(',').collect();
        if f.len() != 3 {
            return Err(csv_err(path, line, format!("expected 3 fields, found {}", f.len())));
        }
        emb.ids.push(f[0].trim().to_string());
        emb.coords.push([parse_float(path, line, f[1])?, parse_float(path, line, f[2])?]);
    }
    Ok(emb)
}

pub fn clusters_csv(c: &ClusterAssignment, seed: u64) -> String {
    let mut out = format!("# seed={seed}\nid,cluster,exemplar\n");
    for (id, &k) in c.ids.iter().zip(&c.cluster) {
        let _ = writeln!(out, "{id},{k},{}", c.exemplars[k - 1]);
    }
    out
}

pub fn read_clusters_csv(path: impl AsRef<Path>) -> Result<ClusterAssignment> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = data_lines(&text);
    match lines.next() {
        Some((_, "id,cluster,exemplar")) => {}
        Some((line, _)) => return Err(csv_err(path, line, "expected header `id,cluster,exemplar`")),
        None => return Err(csv_err(path, 1, "empty file")),
    }
    let mut ids = Vec::new();
    let mut cluster = Vec::new();
    let mut exemplar_of: HashMap<usize, String> = HashMap::new();
    for (line, text) in lines {
        let f: Vec<&str> = text.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(csv_err(path, line, format!("expected 3 fields, found {}", f.len())));
        }
        let k: usize = f[1]
            .parse()
            .ok()
            .filter(|&k| k >= 1)
            .ok_or_else(|| csv_err(path, line, format!("cluster must be a positive integer, got {:?}", f[1])))?;
        if let Some(prev) = exemplar_of.insert(k, f[2].to_string()) {
            if prev != f[2] {
                return Err(csv_err(path, line, format!("cluster {k} has two exemplars")));
            }
        }
        ids.push(f[0].to_string());
        cluster.push(k);
    }
    let k = exemplar_of.len();
    let exemplars = (1..=k)
        .map(|c| {
            exemplar_of
                .remove(&c)
                .ok_or_else(|| csv_err(path, 0, format!("cluster ids are not contiguous: {c} missing")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusterAssignment { ids, cluster, exemplars })
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Scatter plot of an embedding, colored by category when given.
pub fn embedding_svg(emb: &Embedding2D, categories: Option<&HashMap<String, String>>, title: &str) -> String {
    let (w, h, pad) = (640.0, 640.0, 40.0);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in &emb.coords {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-12);
    let sx = |x: f64| pad + (x - x0) / span * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / span * (h - 2.0 * pad);

    let mut names: Vec<&str> = categories
        .map(|c| c.values().map(String::as_str).collect())
        .unwrap_or_default();
    names.sort_unstable();
    names.dedup();

    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <title>{}</title>\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        escape(title)
    );
    for (id, p) in emb.ids.iter().zip(&emb.coords) {
        let cat = categories.and_then(|c| c.get(id));
        let color = cat
            .and_then(|c| names.iter().position(|n| n == c))
            .map_or("#333333", |k| PALETTE[k % PALETTE.len()]);
        let label = match cat {
            Some(c) => format!("{id} ({c})"),
            None => id.clone(),
        };
        let _ = writeln!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{color}\"><title>{}</title></circle>",
            sx(p[0]),
            sy(p[1]),
            escape(&label)
        );
    }
    for (k, name) in names.iter().enumerate() {
        let y = 16.0 + 14.0 * k as f64;
        let _ = writeln!(
            out,
            "<circle cx=\"12\" cy=\"{}\" r=\"4\" fill=\"{}\"/><text x=\"20\" y=\"{}\" font-size=\"11\" font-family=\"sans-serif\">{}</text>",
            y - 4.0,
            PALETTE[k % PALETTE.len()],
            y,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 5e-324, 0.0, 123456.789, std::f64::consts::PI] {
            assert_eq!(format_float(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn matrix_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let ids = vec!["a".to_string(), "b".to_string()];
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 0.1 + 0.2, 0.1 + 0.2, 0.0]);
        let p = dir.path().join("d.csv");
        write_matrix_csv(&p, &ids, &m).unwrap();
        let (rid, rm) = read_matrix_csv(&p).unwrap();
        assert_eq!(rid, ids);
        assert_eq!(rm, m);

        fs::write(&p, "id,a,b\na,0,1\nb,1\n").unwrap();
        let err = read_matrix_csv(&p).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn clusters_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = ClusterAssignment {
            ids: vec!["x".into(), "y".into(), "z".into()],
            cluster: vec![2, 1, 2],
            exemplars: vec!["y".into(), "z".into()],
        };
        let p = dir.path().join("c.csv");
        write_atomic(&p, clusters_csv(&c, 42).as_bytes()).unwrap();
        assert_eq!(read_clusters_csv(&p).unwrap(), c);
        assert!(fs::read_to_string(&p).unwrap().starts_with("# seed=42\nid,cluster,exemplar\nx,2,z\n"));
    }

    #[test]
    fn embedding_round_trip_and_svg() {
        let emb = Embedding2D {
            ids: vec!["p".into(), "q".into()],
            coords: vec![[0.5, -1.25], [1e-7, 3.0]],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        write_atomic(&p, embedding_csv(&emb, 7).as_bytes()).unwrap();
        assert_eq!(read_embedding_csv(&p).unwrap(), emb);
        let mut cats = HashMap::new();
        cats.insert("p".to_string(), "a<b".to_string());
        cats.insert("q".to_string(), "c".to_string());
        let svg = embedding_svg(&emb, Some(&cats), "seed 7");
        assert_eq!(svg.matches("<circle").count(), 4);
        assert!(svg.contains("a&lt;b"));
    }
}
