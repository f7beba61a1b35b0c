//! Per-shape analysis, the on-disk analysis cache, and the end-to-end run
//! from a manifest to distances, embedding, clusters and NMI.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::cluster::{
    cluster_similarities_at_k, embed, nmi_against, ApOptions, ClusterAssignment, Embedding2D, NmiScore, TsneOptions,
};
use crate::error::{Error, Result};
use crate::features::{build_feature_matrix, FeatureSpace, DEFAULT_PCG_TOL};
use crate::geometry::{measure, DistanceField, ShapeMeasurements, DEFAULT_SAMPLE_CAP};
use crate::io::{load_manifest, write_pgm, LoadOptions};
use crate::mask::ShapeMask;
use crate::matching::{build_dissimilarity_matrix, describe_regions, DissimilarityMatrix, RegionDescriptor, ShapeSignature};
use crate::partition::{ordered_dilation_partition, RegionLabeling};
use crate::report::{clusters_csv, embedding_csv, embedding_svg, format_float, matrix_csv, write_atomic};
use crate::rpca::{default_lambda, distinctness, rpca_ialm, DistinctnessField, RpcaOptions};

/// Everything that changes the per-shape, per-space analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub spaces: Vec<FeatureSpace>,
    pub pcg_tol: f64,
    pub rpca: RpcaOptions,
    pub sample_cap: usize,
    /// RPCA weight; `None` means `1/√m`.
    pub lambda: Option<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            spaces: FeatureSpace::CANONICAL.to_vec(),
            pcg_tol: DEFAULT_PCG_TOL,
            rpca: RpcaOptions::default(),
            sample_cap: DEFAULT_SAMPLE_CAP,
            lambda: None,
        }
    }
}

impl AnalysisConfig {
    /// Hash of every setting that affects a single space's analysis (the
    /// space list itself is part of each cache key instead).
    pub fn fingerprint(&self) -> String {
        let text = format!(
            "v{CACHE_VERSION};pcg_tol={:e};rpca_tol={:e};rpca_max_iter={};mu_growth={:e};mu_max_ratio={:e};sample_cap={};lambda={}",
            self.pcg_tol,
            self.rpca.tol,
            self.rpca.max_iter,
            self.rpca.mu_growth,
            self.rpca.mu_max_ratio,
            self.sample_cap,
            self.lambda.map_or("auto".to_string(), |l| format!("{l:e}")),
        );
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Result of features → RPCA → distinctness → partition for one space.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceAnalysis {
    pub space: FeatureSpace,
    pub distinctness: DistinctnessField,
    pub labeling: RegionLabeling,
    pub rpca_iterations: usize,
    pub rpca_residual: f64,
    pub rpca_converged: bool,
}

impl SpaceAnalysis {
    pub fn descriptors(&self) -> Vec<RegionDescriptor> {
        describe_regions(&self.labeling, &self.distinctness)
    }
}

/// Wall time spent in each per-shape stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ShapeTimings {
    pub measure: Duration,
    pub features: Duration,
    pub rpca: Duration,
    pub partition: Duration,
}

impl std::ops::AddAssign for ShapeTimings {
    fn add_assign(&mut self, o: Self) {
        self.measure += o.measure;
        self.features += o.features;
        self.rpca += o.rpca;
        self.partition += o.partition;
    }
}

fn stage_err<'a>(stage: &'static str, shape: &'a str) -> impl FnOnce(Error) -> Error + 'a {
    move |e| Error::Stage {
        stage,
        shape: shape.to_string(),
        source: Box::new(e),
    }
}

/// Analyzes `mask` as given (no pose normalization).
pub fn analyze_space(
    mask: &ShapeMask,
    dist: &DistanceField,
    measurements: &ShapeMeasurements,
    space: FeatureSpace,
    cfg: &AnalysisConfig,
    timings: &mut ShapeTimings,
) -> Result<SpaceAnalysis> {
    let t = Instant::now();
    let features = build_feature_matrix(mask, space, measurements, cfg.pcg_tol).map_err(stage_err("features", &mask.id))?;
    timings.features += t.elapsed();

    let t = Instant::now();
    let lambda = cfg.lambda.unwrap_or_else(|| default_lambda(features.data.nrows()));
    let rpca = rpca_ialm(&features.data, lambda, &cfg.rpca).map_err(stage_err("rpca", &mask.id))?;
    if !rpca.converged {
        log::warn!("{}: RPCA in {space} stopped at residual {:.3e}", mask.id, rpca.residual);
    }
    let field = distinctness(&rpca.sparse, &features.pixels).map_err(stage_err("rpca", &mask.id))?;
    timings.rpca += t.elapsed();

    let t = Instant::now();
    let labeling = ordered_dilation_partition(mask, &field, dist);
    timings.partition += t.elapsed();

    Ok(SpaceAnalysis {
        space,
        distinctness: field,
        labeling,
        rpca_iterations: rpca.iterations,
        rpca_residual: rpca.residual,
        rpca_converged: rpca.converged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeAnalysis {
    pub id: String,
    /// The mask in canonical pose; all per-space results refer to its grid.
    pub canonical: ShapeMask,
    pub spaces: Vec<SpaceAnalysis>,
}

impl ShapeAnalysis {
    pub fn signature(&self) -> ShapeSignature {
        ShapeSignature {
            shape_id: self.id.clone(),
            spaces: self.spaces.iter().map(|s| (s.space, s.descriptors())).collect(),
        }
    }
}

/// Analyzes every configured space of one shape in its canonical pose,
/// reading and filling the cache. Measuring is skipped when every space is
/// cached.
pub fn analyze_shape(mask: &ShapeMask, cfg: &AnalysisConfig, cache: &AnalysisCache) -> Result<(ShapeAnalysis, ShapeTimings)> {
    let mut canonical = mask.canonical_pose();
    canonical.id = mask.id.clone();
    let content = canonical.content_hash();
    let fingerprint = cfg.fingerprint();
    let mut timings = ShapeTimings::default();
    let mut measured: Option<(DistanceField, ShapeMeasurements)> = None;
    let mut spaces = Vec::with_capacity(cfg.spaces.len());
    for &space in &cfg.spaces {
        let key = AnalysisCache::key(&content, space, &fingerprint);
        if let Some(hit) = cache.load(&key, &canonical, space) {
            spaces.push(hit);
            continue;
        }
        if measured.is_none() {
            let t = Instant::now();
            measured = Some(measure(&canonical, cfg.sample_cap));
            timings.measure += t.elapsed();
        }
        let (dist, ms) = measured.as_ref().expect("measured above");
        let analysis = analyze_space(&canonical, dist, ms, space, cfg, &mut timings)?;
        cache.store(&key, &analysis).map_err(stage_err("cache", &mask.id))?;
        spaces.push(analysis);
    }
    Ok((
        ShapeAnalysis {
            id: mask.id.clone(),
            canonical,
            spaces,
        },
        timings,
    ))
}

/// [`analyze_shape`] over all masks in parallel; timings are summed.
pub fn analyze_all(
    masks: &[ShapeMask],
    cfg: &AnalysisConfig,
    cache: &AnalysisCache,
) -> Result<(Vec<ShapeAnalysis>, ShapeTimings)> {
    let results = masks
        .par_iter()
        .map(|m| analyze_shape(m, cfg, cache))
        .collect::<Result<Vec<_>>>()?;
    let mut total = ShapeTimings::default();
    let analyses = results
        .into_iter()
        .map(|(a, t)| {
            total += t;
            a
        })
        .collect();
    Ok((analyses, total))
}

const CACHE_MAGIC: &[u8; 8] = b"ARTSHAPE";
const CACHE_VERSION: u8 = 1;

/// Content-addressed store of [`SpaceAnalysis`] records keyed by the
/// canonical mask's hash, the feature space and the analysis fingerprint.
#[derive(Debug, Default)]
pub struct AnalysisCache {
    dir: Option<PathBuf>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl AnalysisCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        AnalysisCache {
            dir: Some(dir.into()),
            ..Default::default()
        }
    }

    pub fn disabled() -> Self {
        AnalysisCache::default()
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn key(content_hash: &str, space: FeatureSpace, fingerprint: &str) -> String {
        hex::encode(Sha256::digest(format!("{content_hash}|{space}|{fingerprint}").as_bytes()))
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(&key[..2]).join(format!("{key}.bin")))
    }

    /// A cached record, or `None` on a miss. Unreadable or corrupt entries
    /// count as misses and are logged.
    pub fn load(&self, key: &str, mask: &ShapeMask, space: FeatureSpace) -> Option<SpaceAnalysis> {
        let found = self.path(key).and_then(|path| match fs::read(&path) {
            Ok(bytes) => match decode(&bytes, key, mask, space) {
                Ok(a) => Some(a),
                Err(reason) => {
                    log::warn!("{}", Error::Cache { path, reason });
                    None
                }
            },
            Err(_) => None,
        });
        let counter = if found.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        found
    }

    pub fn store(&self, key: &str, a: &SpaceAnalysis) -> Result<()> {
        match self.path(key) {
            Some(path) => write_atomic(path, &encode(key, a)),
            None => Ok(()),
        }
    }
}

fn encode(key: &str, a: &SpaceAnalysis) -> Vec<u8> {
    let m = a.distinctness.len();
    let mut out = Vec::with_capacity(64 + 12 * m);
    out.extend_from_slice(CACHE_MAGIC);
    out.push(CACHE_VERSION);
    out.extend_from_slice(&hex::decode(key).expect("hex key"));
    out.extend_from_slice(&(m as u64).to_le_bytes());
    for v in &a.distinctness.raw {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for l in &a.labeling.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out.extend_from_slice(&(a.labeling.region_count as u64).to_le_bytes());
    out.extend(a.labeling.high_set.iter().map(|&h| h as u8));
    out.extend_from_slice(&(a.rpca_iterations as u64).to_le_bytes());
    out.extend_from_slice(&a.rpca_residual.to_le_bytes());
    out.push(a.rpca_converged as u8);
    out
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.0.len() < n {
            return Err("truncated".into());
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn decode(bytes: &[u8], key: &str, mask: &ShapeMask, space: FeatureSpace) -> std::result::Result<SpaceAnalysis, String> {
    let mut r = Reader(bytes);
    if r.take(8)? != CACHE_MAGIC {
        return Err("bad magic".into());
    }
    let version = r.take(1)?[0];
    if version != CACHE_VERSION {
        return Err(format!("version {version}, expected {CACHE_VERSION}"));
    }
    if hex::encode(r.take(32)?) != key {
        return Err("key mismatch".into());
    }
    let m = r.u64()? as usize;
    if m != mask.pixel_count() {
        return Err(format!("{m} pixels, mask has {}", mask.pixel_count()));
    }
    let raw = (0..m).map(|_| r.f64()).collect::<std::result::Result<Vec<_>, _>>()?;
    let labels = (0..m)
        .map(|_| Ok(u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"))))
        .collect::<std::result::Result<Vec<_>, String>>()?;
    let region_count = r.u64()? as usize;
    if labels.iter().any(|&l| l == 0 || l as usize > region_count) {
        return Err("label out of range".into());
    }
    let high_set = r.take(region_count)?.iter().map(|&b| b != 0).collect();
    let rpca_iterations = r.u64()? as usize;
    let rpca_residual = r.f64()?;
    let rpca_converged = r.take(1)?[0] != 0;
    if !r.0.is_empty() {
        return Err("trailing bytes".into());
    }
    Ok(SpaceAnalysis {
        space,
        distinctness: DistinctnessField::from_raw(mask.pixels(), raw),
        labeling: RegionLabeling {
            labels,
            region_count,
            high_set,
        },
        rpca_iterations,
        rpca_residual,
        rpca_converged,
    })
}

/// Normalized distinctness × 255 on the mask grid; background is 0.
pub fn distinctness_image(mask: &ShapeMask, field: &DistinctnessField) -> Vec<u8> {
    let mut img = vec![0u8; mask.rows() * mask.cols()];
    for (&(r, c), &v) in field.pixels.iter().zip(&field.normalized) {
        img[r * mask.cols() + c] = (v * 255.0).round() as u8;
    }
    img
}

/// One gray level per region, spread over 64..=255 in label order;
/// background is 0.
pub fn partition_image(mask: &ShapeMask, labeling: &RegionLabeling) -> Vec<u8> {
    let mut img = vec![0u8; mask.rows() * mask.cols()];
    let span = labeling.region_count.saturating_sub(1).max(1) as f64;
    for ((r, c), &l) in mask.pixels().into_iter().zip(&labeling.labels) {
        img[r * mask.cols() + c] = (64.0 + 191.0 * (l - 1) as f64 / span).round() as u8;
    }
    img
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
    pub use_cache: bool,
    pub seed: u64,
    /// Target cluster count; defaults to the number of categories.
    pub k: Option<usize>,
    pub load: LoadOptions,
    pub analysis: AnalysisConfig,
    pub tsne: TsneOptions,
    pub ap: ApOptions,
    pub per_space: bool,
    pub emit_images: bool,
}

impl PipelineConfig {
    pub fn new(manifest: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            manifest: manifest.into(),
            out_dir: out_dir.into(),
            cache_dir: None,
            use_cache: true,
            seed: 42,
            k: None,
            load: LoadOptions::default(),
            analysis: AnalysisConfig::default(),
            tsne: TsneOptions::default(),
            ap: ApOptions::default(),
            per_space: false,
            emit_images: false,
        }
    }

    /// Resets every algorithmic setting to the reference configuration,
    /// keeping paths, seed, K and output switches.
    pub fn reset_to_defaults(&mut self) {
        self.load = LoadOptions::default();
        self.analysis = AnalysisConfig::default();
        self.tsne = TsneOptions::default();
        self.ap = ApOptions::default();
    }

    pub fn effective_cache_dir(&self) -> Option<PathBuf> {
        self.use_cache
            .then(|| self.cache_dir.clone().unwrap_or_else(|| self.out_dir.join("cache")))
    }

    /// Applies one `key=value` setting, as found in a config file.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("{key}: cannot parse {value:?}")))
        }
        fn auto<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
            if value == "auto" {
                Ok(None)
            } else {
                parse(key, value).map(Some)
            }
        }
        match key {
            "manifest" => self.manifest = value.into(),
            "out_dir" => self.out_dir = value.into(),
            "cache_dir" => self.cache_dir = Some(value.into()),
            "cache" => self.use_cache = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "k" => self.k = auto(key, value)?,
            "threshold" => self.load.threshold = parse(key, value)?,
            "invert" => self.load.invert = parse(key, value)?,
            "spaces" => {
                self.analysis.spaces = value
                    .split(',')
                    .map(|s| s.trim().parse::<FeatureSpace>())
                    .collect::<Result<Vec<_>>>()?
            }
            "pcg_tol" => self.analysis.pcg_tol = parse(key, value)?,
            "rpca_tol" => self.analysis.rpca.tol = parse(key, value)?,
            "rpca_max_iter" => self.analysis.rpca.max_iter = parse(key, value)?,
            "sample_cap" => self.analysis.sample_cap = parse(key, value)?,
            "lambda" => self.analysis.lambda = auto(key, value)?,
            "perplexity" => self.tsne.perplexity = auto(key, value)?,
            "tsne_iterations" => self.tsne.iterations = parse(key, value)?,
            "learning_rate" => self.tsne.learning_rate = parse(key, value)?,
            "exaggeration" => self.tsne.exaggeration = parse(key, value)?,
            "exaggeration_iters" => self.tsne.exaggeration_iters = parse(key, value)?,
            "damping" => self.ap.damping = parse(key, value)?,
            "ap_max_iter" => self.ap.max_iter = parse(key, value)?,
            "stable_window" => self.ap.stable_window = parse(key, value)?,
            "per_space" => self.per_space = parse(key, value)?,
            "emit_images" => self.emit_images = parse(key, value)?,
            _ => return Err(Error::InvalidParameter(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Reads `key=value` lines; `#` starts a comment line.
    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Manifest {
                path: path.to_path_buf(),
                line: i + 1,
                reason: "expected key=value".into(),
            })?;
            self.apply(k.trim(), v.trim()).map_err(|e| Error::Manifest {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Every setting as `key=value` lines, in a form [`apply_file`] reads back.
    ///
    /// [`apply_file`]: PipelineConfig::apply_file
    pub fn describe(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "auto".into());
        let spaces: Vec<String> = self.analysis.spaces.iter().map(|s| s.to_string()).collect();
        let lines = [
            ("manifest", self.manifest.display().to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("cache", self.use_cache.to_string()),
            ("cache_dir", opt(self.effective_cache_dir().map(|p| p.display().to_string()))),
            ("seed", self.seed.to_string()),
            ("k", opt(self.k.map(|k| k.to_string()))),
            ("threshold", self.load.threshold.to_string()),
            ("invert", self.load.invert.to_string()),
            ("spaces", spaces.join(",")),
            ("pcg_tol", format!("{:e}", self.analysis.pcg_tol)),
            ("rpca_tol", format!("{:e}", self.analysis.rpca.tol)),
            ("rpca_max_iter", self.analysis.rpca.max_iter.to_string()),
            ("sample_cap", self.analysis.sample_cap.to_string()),
            ("lambda", opt(self.analysis.lambda.map(|l| format!("{l:e}")))),
            ("perplexity", opt(self.tsne.perplexity.map(|p| p.to_string()))),
            ("tsne_iterations", self.tsne.iterations.to_string()),
            ("learning_rate", self.tsne.learning_rate.to_string()),
            ("exaggeration", self.tsne.exaggeration.to_string()),
            ("exaggeration_iters", self.tsne.exaggeration_iters.to_string()),
            ("damping", self.ap.damping.to_string()),
            ("ap_max_iter", self.ap.max_iter.to_string()),
            ("stable_window", self.ap.stable_window.to_string()),
            ("per_space", self.per_space.to_string()),
            ("emit_images", self.emit_images.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

/// Outcome of a pipeline run; also written as `summary.txt`/`summary.csv`.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub n: usize,
    pub seed: u64,
    pub k_target: usize,
    pub k_found: usize,
    pub nmi: Option<NmiScore>,
    /// Why NMI was not computed, when it was not.
    pub nmi_skipped: Option<String>,
    pub timings: Vec<(&'static str, Duration)>,
    pub cache_hits: usize,
    pub cache_misses: usize,
    pub flags: Vec<String>,
    pub distances: DissimilarityMatrix,
    pub embedding: Option<Embedding2D>,
    pub clusters: ClusterAssignment,
}

impl RunSummary {
    pub fn nmi_display(&self) -> String {
        match (&self.nmi, &self.nmi_skipped) {
            (Some(s), _) => format!("NMI={:.4}", s.value),
            (None, Some(why)) => format!("NMI skipped: {why}"),
            (None, None) => "NMI skipped".into(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "shapes: {}", self.n);
        let _ = writeln!(out, "seed: {}", self.seed);
        let _ = writeln!(out, "clusters: {} (target {})", self.k_found, self.k_target);
        let _ = writeln!(out, "{}", self.nmi_display());
        let _ = writeln!(out, "cache: {} hits, {} misses", self.cache_hits, self.cache_misses);
        let _ = writeln!(out, "stage timings (s):");
        for (name, t) in &self.timings {
            let _ = writeln!(out, "  {name:<11}{:>10.3}", t.as_secs_f64());
        }
        if self.flags.is_empty() {
            let _ = writeln!(out, "flags: none");
        } else {
            let _ = writeln!(out, "flags:");
            for f in &self.flags {
                let _ = writeln!(out, "  {f}");
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("key,value\n");
        let mut row = |k: &str, v: String| {
            out.push_str(k);
            out.push(',');
            out.push_str(&v);
            out.push('\n');
        };
        row("n", self.n.to_string());
        row("seed", self.seed.to_string());
        row("k_target", self.k_target.to_string());
        row("k_found", self.k_found.to_string());
        row("nmi", self.nmi.map_or("skipped".into(), |s| format_float(s.value)));
        row("cache_hits", self.cache_hits.to_string());
        row("cache_misses", self.cache_misses.to_string());
        for (name, t) in &self.timings {
            row(&format!("time_{name}"), format_float(t.as_secs_f64()));
        }
        row("flags", self.flags.join(";").replace(',', " "));
        out
    }
}

/// Loads the manifest, analyzes every shape, builds the dissimilarity
/// matrix, embeds, clusters and scores, writing all outputs to `out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunSummary> {
    let mut timings: Vec<(&'static str, Duration)> = Vec::new();
    let mut flags = Vec::new();
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;

    let t = Instant::now();
    let manifest = load_manifest(&cfg.manifest)?;
    if manifest.is_empty() {
        return Err(Error::InvalidParameter(format!("{}: manifest lists no shapes", cfg.manifest.display())));
    }
    let masks = manifest.load_masks(cfg.load)?;
    timings.push(("load", t.elapsed()));
    let n = masks.len();
    let labeled = manifest.has_categories();
    let categories: HashMap<String, String> = masks.iter().map(|m| (m.id.clone(), m.category.clone())).collect();
    let k_target = match cfg.k {
        Some(k) => k,
        None if labeled => categories.values().collect::<BTreeSet<_>>().len(),
        None => {
            return Err(Error::InvalidParameter(
                "the manifest has no categories; a target cluster count is required".into(),
            ))
        }
    };
    if k_target == 0 || k_target > n {
        return Err(Error::InvalidParameter(format!("target cluster count {k_target} outside 1..={n}")));
    }

    let cache = match cfg.effective_cache_dir() {
        Some(dir) => AnalysisCache::new(dir),
        None => AnalysisCache::disabled(),
    };
    let (analyses, shape_times) = analyze_all(&masks, &cfg.analysis, &cache)?;
    timings.push(("measure", shape_times.measure));
    timings.push(("features", shape_times.features));
    timings.push(("rpca", shape_times.rpca));
    timings.push(("partition", shape_times.partition));
    let unconverged = analyses
        .iter()
        .flat_map(|a| &a.spaces)
        .filter(|s| !s.rpca_converged)
        .count();
    if unconverged > 0 {
        flags.push(format!("rpca: {unconverged} decompositions hit the iteration cap"));
    }
    if cfg.emit_images {
        write_images(&cfg.out_dir.join("images"), &analyses)?;
    }

    let t = Instant::now();
    let signatures: Vec<ShapeSignature> = analyses.iter().map(ShapeAnalysis::signature).collect();
    timings.push(("signatures", t.elapsed()));

    let t = Instant::now();
    let distances = build_dissimilarity_matrix(&signatures)?;
    write_atomic(cfg.out_dir.join("distmat.csv"), matrix_csv(&distances.ids, &distances.fused).as_bytes())?;
    if cfg.per_space {
        for (space, m) in &distances.per_space {
            write_atomic(
                cfg.out_dir.join(format!("distmat_{space}.csv")),
                matrix_csv(&distances.ids, m).as_bytes(),
            )?;
        }
    }
    timings.push(("distmat", t.elapsed()));

    let t = Instant::now();
    let tsne_opts = TsneOptions {
        seed: cfg.seed,
        ..cfg.tsne.clone()
    };
    let embedding = if n >= 4 {
        let (emb, res) = embed(&distances.ids, &distances.fused, &tsne_opts)?;
        log::info!("t-SNE perplexity {:.3}, final KL {:.4}", res.perplexity, res.kl_history.last().unwrap_or(&0.0));
        write_atomic(cfg.out_dir.join("embedding.csv"), embedding_csv(&emb, cfg.seed).as_bytes())?;
        let svg = embedding_svg(&emb, labeled.then_some(&categories), &format!("t-SNE embedding, seed {}", cfg.seed));
        write_atomic(cfg.out_dir.join("embedding.svg"), svg.as_bytes())?;
        Some(emb)
    } else {
        flags.push(format!("embed: skipped for {n} shapes (t-SNE needs at least 4); clustered on dissimilarities"));
        None
    };
    timings.push(("embed", t.elapsed()));

    let t = Instant::now();
    let sim = match &embedding {
        Some(e) => crate::cluster::negative_squared_distances(&e.coords),
        None => distances.fused.map(|d| -d * d),
    };
    let clustered = cluster_similarities_at_k(&distances.ids, &sim, k_target, &cfg.ap)?;
    if !clustered.exact {
        flags.push(format!(
            "cluster: reached {} clusters instead of {k_target} after {} probes",
            clustered.assignment.cluster_count(),
            clustered.probes
        ));
    }
    if !clustered.converged {
        flags.push("cluster: affinity propagation did not converge".into());
    }
    write_atomic(cfg.out_dir.join("clusters.csv"), clusters_csv(&clustered.assignment, cfg.seed).as_bytes())?;
    timings.push(("cluster", t.elapsed()));

    let t = Instant::now();
    let (nmi, nmi_skipped) = if !labeled {
        (None, Some("no labels".to_string()))
    } else if n == 1 {
        (None, Some("single shape".to_string()))
    } else {
        let score = nmi_against(&clustered.assignment, &categories)?;
        if score.degenerate {
            flags.push("nmi: single cluster or single category; reported as 0".into());
        }
        (Some(score), None)
    };
    timings.push(("nmi", t.elapsed()));

    let summary = RunSummary {
        n,
        seed: cfg.seed,
        k_target,
        k_found: clustered.assignment.cluster_count(),
        nmi,
        nmi_skipped,
        timings,
        cache_hits: cache.hits(),
        cache_misses: cache.misses(),
        flags,
        distances,
        embedding,
        clusters: clustered.assignment,
    };
    write_atomic(cfg.out_dir.join("summary.txt"), summary.to_text().as_bytes())?;
    write_atomic(cfg.out_dir.join("summary.csv"), summary.to_csv().as_bytes())?;
    Ok(summary)
}

fn write_images(dir: &Path, analyses: &[ShapeAnalysis]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for a in analyses {
        let m = &a.canonical;
        for s in &a.spaces {
            let stem = format!("{}_{}", a.id, s.space);
            write_pgm(
                dir.join(format!("{stem}_distinctness.pgm")),
                m.rows(),
                m.cols(),
                &distinctness_image(m, &s.distinctness),
            )?;
            write_pgm(
                dir.join(format!("{stem}_partition.pgm")),
                m.rows(),
                m.cols(),
                &partition_image(m, &s.labeling),
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::GridTransform;
    use crate::synth::{articulated_dataset, write_dataset};

    fn small_config() -> AnalysisConfig {
        AnalysisConfig::default()
    }

    #[test]
    fn cache_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mask = ShapeMask::from_ascii("t", "#######\n#######\n..###..\n..###..\n..###..").unwrap();
        let cache = AnalysisCache::new(dir.path());
        let (cold, _) = analyze_shape(&mask, &small_config(), &cache).unwrap();
        assert_eq!((cache.hits(), cache.misses()), (0, 6));
        let (warm, times) = analyze_shape(&mask, &small_config(), &cache).unwrap();
        assert_eq!((cache.hits(), cache.misses()), (6, 6));
        assert_eq!(cold, warm);
        assert_eq!(times.features, Duration::ZERO);

        // another pose of the same shape shares the entries
        let turned = mask.transform(GridTransform::Rotate90);
        let (again, _) = analyze_shape(&turned, &small_config(), &cache).unwrap();
        assert_eq!(cache.hits(), 12);
        assert_eq!(again.signature(), cold.signature());
    }

    #[test]
    fn corrupt_or_foreign_entries_are_misses() {
        let dir = tempfile::tempdir().unwrap();
        let mask = ShapeMask::from_ascii("l", "#..\n#..\n###").unwrap();
        let cache = AnalysisCache::new(dir.path());
        analyze_shape(&mask, &small_config(), &cache).unwrap();
        for entry in walk(dir.path()) {
            let mut bytes = fs::read(&entry).unwrap();
            bytes.truncate(bytes.len() - 3);
            fs::write(&entry, bytes).unwrap();
        }
        let (_, _) = analyze_shape(&mask, &small_config(), &cache).unwrap();
        assert_eq!(cache.hits(), 0);

        let other = AnalysisConfig {
            pcg_tol: 1e-9,
            ..small_config()
        };
        assert_ne!(other.fingerprint(), small_config().fingerprint());
        analyze_shape(&mask, &other, &cache).unwrap();
        assert_eq!(cache.hits(), 0);
    }

    fn walk(dir: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn config_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::new("m.csv", "out");
        cfg.apply("seed", "7").unwrap();
        cfg.apply("spaces", "3R,2G4").unwrap();
        cfg.apply("lambda", "0.25").unwrap();
        cfg.apply("k", "3").unwrap();
        let p = dir.path().join("cfg.txt");
        fs::write(&p, format!("# saved\n{}", cfg.describe())).unwrap();
        let mut back = PipelineConfig::new("x", "y");
        back.apply_file(&p).unwrap();
        back.cache_dir = None;
        assert_eq!(back, cfg);
        assert!(cfg.apply("nope", "1").is_err());
        fs::write(&p, "seed=abc\n").unwrap();
        let err = back.apply_file(&p).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn single_shape_and_unlabeled_runs() {
        let dir = tempfile::tempdir().unwrap();
        let mut masks = articulated_dataset(1, 4).unwrap();
        masks.truncate(1);
        let manifest = write_dataset(dir.path().join("one"), &masks).unwrap();
        let mut cfg = PipelineConfig::new(&manifest, dir.path().join("out1"));
        let s = run_pipeline(&cfg).unwrap();
        assert_eq!(s.distances.fused.as_slice(), &[0.0]);
        assert_eq!(s.k_found, 1);
        assert!(s.nmi.is_none());

        let mut unlabeled = articulated_dataset(1, 4).unwrap();
        for m in &mut unlabeled {
            m.category.clear();
        }
        let manifest = write_dataset(dir.path().join("nolabels"), &unlabeled).unwrap();
        cfg.manifest = manifest;
        cfg.out_dir = dir.path().join("out2");
        assert!(run_pipeline(&cfg).is_err(), "K is required without labels");
        cfg.k = Some(2);
        let s = run_pipeline(&cfg).unwrap();
        assert_eq!(s.nmi_skipped.as_deref(), Some("no labels"));
        assert_eq!(s.k_found, 2);
        assert!(s.to_text().contains("NMI skipped: no labels"));
    }
}
