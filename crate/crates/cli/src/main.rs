use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use artishape_core::cluster::{cluster_similarities_at_k, embed, negative_squared_distances, nmi_against};
use artishape_core::features::build_feature_matrix;
use artishape_core::geometry::measure;
use artishape_core::io::{load_manifest, load_mask, mask_to_pbm, write_pgm};
use artishape_core::matching::build_dissimilarity_matrix;
use artishape_core::pipeline::{
    analyze_all, analyze_space, distinctness_image, partition_image, run_pipeline, AnalysisCache, PipelineConfig,
    ShapeAnalysis, ShapeTimings,
};
use artishape_core::report::{
    clusters_csv, embedding_csv, embedding_svg, format_float, matrix_csv, read_clusters_csv, read_matrix_csv,
    write_atomic,
};
use artishape_core::{FeatureSpace, ShapeMask};

#[derive(Parser)]
#[command(name = "artishape", version, about = "Articulated shape features, matching and clustering")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Random seed for t-SNE initialization [default: 42]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Analysis cache directory
    #[arg(long, global = true, env = "ARTISHAPE_CACHE")]
    cache_dir: Option<PathBuf>,
    /// key=value settings file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Gray level at or above which a PGM/PNG pixel is foreground
    #[arg(long, global = true)]
    threshold: Option<u8>,
    /// Swap foreground and background
    #[arg(long, global = true)]
    invert: bool,
    /// Log progress to stderr (repeat for more)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Print body thickness R, geodesic extent G and pixel count
    Measure { mask: PathBuf },
    /// Write the m×30 feature matrix of one space as CSV
    Features {
        mask: PathBuf,
        #[arg(long, default_value = "3R")]
        space: FeatureSpace,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the little-endian binary matrix here
        #[arg(long)]
        binary: Option<PathBuf>,
    },
    /// Write the distinctness heatmap (PGM) and per-pixel values (CSV)
    Distinctness {
        mask: PathBuf,
        #[arg(long, default_value = "3R")]
        space: FeatureSpace,
        /// Heatmap path
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write the region partition as a gray-level PGM
    Partition {
        mask: PathBuf,
        #[arg(long, default_value = "3R")]
        space: FeatureSpace,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Fused dissimilarity matrix of every shape in a manifest
    Distmat {
        manifest: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write one matrix per feature space next to the output
        #[arg(long)]
        per_space: bool,
    },
    /// t-SNE embedding of a dissimilarity matrix
    Embed {
        dist: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Manifest whose categories color the SVG
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        tsne: TsneArgs,
    },
    /// t-SNE followed by affinity propagation tuned to K clusters
    Cluster {
        dist: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        tsne: TsneArgs,
        #[arg(long)]
        damping: Option<f64>,
    },
    /// NMI of a clustering against manifest categories
    Nmi { clusters: PathBuf, manifest: PathBuf },
    /// Full pipeline from a manifest
    Run {
        manifest: PathBuf,
        #[arg(short, long, default_value = "artishape-out")]
        output: PathBuf,
        /// Target cluster count (default: number of categories)
        #[arg(long)]
        k: Option<usize>,
        /// Reset every tunable to the reference configuration and print it
        #[arg(long)]
        paper_defaults: bool,
        /// Also write one dissimilarity matrix per feature space
        #[arg(long)]
        per_space: bool,
        /// Write distinctness and partition images per shape and space
        #[arg(long)]
        images: bool,
        /// Neither read nor write the analysis cache
        #[arg(long)]
        no_cache: bool,
    },
    /// Print a loaded mask as ASCII art (or plain PBM)
    DumpMask {
        mask: PathBuf,
        #[arg(long)]
        pbm: bool,
    },
}

#[derive(Args)]
struct TsneArgs {
    /// Default min(30, (N−1)/3)
    #[arg(long)]
    perplexity: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
}

impl Global {
    /// Settings from `--config`, then explicit flags on top.
    fn pipeline_config(&self, manifest: &Path, out_dir: &Path) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::new(manifest, out_dir);
        if let Some(path) = &self.config {
            cfg.apply_file(path).with_context(|| format!("reading config {}", path.display()))?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &self.cache_dir {
            cfg.cache_dir = Some(dir.clone());
        }
        if let Some(t) = self.threshold {
            cfg.load.threshold = t;
        }
        if self.invert {
            cfg.load.invert = true;
        }
        Ok(cfg)
    }
}

impl TsneArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if self.perplexity.is_some() {
            cfg.tsne.perplexity = self.perplexity;
        }
        if let Some(it) = self.iterations {
            cfg.tsne.iterations = it;
        }
        cfg.tsne.seed = cfg.seed;
    }
}

fn load_one(path: &Path, cfg: &PipelineConfig) -> Result<ShapeMask> {
    load_mask(path, cfg.load).with_context(|| format!("loading {}", path.display()))
}

fn categories_of(manifest: &Path) -> Result<HashMap<String, String>> {
    let m = load_manifest(manifest)?;
    if !m.has_categories() {
        bail!("{}: manifest has no categories", manifest.display());
    }
    Ok(m.entries.into_iter().map(|e| (e.id, e.category)).collect())
}

fn single_space(mask: &ShapeMask, space: FeatureSpace, cfg: &PipelineConfig) -> Result<artishape_core::pipeline::SpaceAnalysis> {
    let (dist, ms) = measure(mask, cfg.analysis.sample_cap);
    let mut t = ShapeTimings::default();
    Ok(analyze_space(mask, &dist, &ms, space, &cfg.analysis, &mut t)?)
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if let Some(jobs) = g.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker threads")?;
    }
    let here = Path::new(".");
    match &cli.command {
        Command::Measure { mask } => {
            let cfg = g.pipeline_config(here, here)?;
            let m = load_one(mask, &cfg)?;
            let (_, ms) = measure(&m, cfg.analysis.sample_cap);
            println!("R={} G={} m={}", ms.r, ms.g, m.pixel_count());
        }
        Command::Features {
            mask,
            space,
            output,
            binary,
        } => {
            let cfg = g.pipeline_config(here, here)?;
            let m = load_one(mask, &cfg)?;
            let (_, ms) = measure(&m, cfg.analysis.sample_cap);
            let fm = build_feature_matrix(&m, *space, &ms, cfg.analysis.pcg_tol)?;
            let mut out = String::from("x,y");
            for k in 1..=fm.data.ncols() {
                out.push_str(&format!(",f{k}"));
            }
            out.push('\n');
            for (i, &(r, c)) in fm.pixels.iter().enumerate() {
                out.push_str(&format!("{c},{r}"));
                for v in fm.data.row(i).iter() {
                    out.push(',');
                    out.push_str(&format_float(*v));
                }
                out.push('\n');
            }
            write_atomic(output, out.as_bytes())?;
            if let Some(bin) = binary {
                let mut bytes = Vec::new();
                fm.write_binary(&mut bytes)?;
                write_atomic(bin, &bytes)?;
            }
        }
        Command::Distinctness {
            mask,
            space,
            output,
            csv,
        } => {
            let cfg = g.pipeline_config(here, here)?;
            let m = load_one(mask, &cfg)?;
            let a = single_space(&m, *space, &cfg)?;
            write_pgm(output, m.rows(), m.cols(), &distinctness_image(&m, &a.distinctness))?;
            if let Some(csv) = csv {
                let f = &a.distinctness;
                let mut out = String::from("x,y,raw,normalized\n");
                for (i, &(r, c)) in f.pixels.iter().enumerate() {
                    out.push_str(&format!("{c},{r},{},{}\n", format_float(f.raw[i]), format_float(f.normalized[i])));
                }
                write_atomic(csv, out.as_bytes())?;
            }
        }
        Command::Partition { mask, space, output } => {
            let cfg = g.pipeline_config(here, here)?;
            let m = load_one(mask, &cfg)?;
            let a = single_space(&m, *space, &cfg)?;
            write_pgm(output, m.rows(), m.cols(), &partition_image(&m, &a.labeling))?;
            let sizes = a.labeling.region_sizes();
            for (k, size) in sizes.iter().enumerate() {
                let set = if a.labeling.high_set[k] { "high" } else { "low" };
                println!("region {}: {size} pixels ({set})", k + 1);
            }
        }
        Command::Distmat {
            manifest,
            output,
            per_space,
        } => {
            let out_dir = output.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(here);
            let cfg = g.pipeline_config(manifest, out_dir)?;
            let masks = load_manifest(manifest)?.load_masks(cfg.load)?;
            let cache = match cfg.effective_cache_dir() {
                Some(d) => AnalysisCache::new(d),
                None => AnalysisCache::disabled(),
            };
            let (analyses, _) = analyze_all(&masks, &cfg.analysis, &cache)?;
            let sigs: Vec<_> = analyses.iter().map(ShapeAnalysis::signature).collect();
            let d = build_dissimilarity_matrix(&sigs)?;
            write_atomic(output, matrix_csv(&d.ids, &d.fused).as_bytes())?;
            if *per_space {
                let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("dist");
                for (space, m) in &d.per_space {
                    write_atomic(out_dir.join(format!("{stem}_{space}.csv")), matrix_csv(&d.ids, m).as_bytes())?;
                }
            }
            log::info!("cache: {} hits, {} misses", cache.hits(), cache.misses());
        }
        Command::Embed {
            dist,
            output,
            svg,
            manifest,
            tsne,
        } => {
            let mut cfg = g.pipeline_config(here, here)?;
            tsne.apply(&mut cfg);
            let (ids, d) = read_matrix_csv(dist)?;
            let (emb, res) = embed(&ids, &d, &cfg.tsne)?;
            log::info!("perplexity {:.3}, final KL {:.5}", res.perplexity, res.kl_history.last().unwrap_or(&0.0));
            write_atomic(output, embedding_csv(&emb, cfg.seed).as_bytes())?;
            if let Some(svg) = svg {
                let cats = manifest.as_deref().map(categories_of).transpose()?;
                let title = format!("t-SNE embedding, seed {}", cfg.seed);
                write_atomic(svg, embedding_svg(&emb, cats.as_ref(), &title).as_bytes())?;
            }
        }
        Command::Cluster {
            dist,
            k,
            output,
            tsne,
            damping,
        } => {
            let mut cfg = g.pipeline_config(here, here)?;
            tsne.apply(&mut cfg);
            if let Some(d) = damping {
                cfg.ap.damping = *d;
            }
            let (ids, d) = read_matrix_csv(dist)?;
            let sim = if ids.len() >= 4 {
                let (emb, _) = embed(&ids, &d, &cfg.tsne)?;
                negative_squared_distances(&emb.coords)
            } else {
                log::warn!("fewer than 4 shapes: clustering on dissimilarities without t-SNE");
                d.map(|x| -x * x)
            };
            let res = cluster_similarities_at_k(&ids, &sim, *k, &cfg.ap)?;
            if !res.exact {
                eprintln!(
                    "warning: reached {} clusters instead of {k}",
                    res.assignment.cluster_count()
                );
            }
            write_atomic(output, clusters_csv(&res.assignment, cfg.seed).as_bytes())?;
        }
        Command::Nmi { clusters, manifest } => {
            let c = read_clusters_csv(clusters)?;
            let cats = categories_of(manifest)?;
            let score = nmi_against(&c, &cats)?;
            println!("NMI={:.4}", score.value);
            if score.degenerate {
                eprintln!("warning: single cluster or single category; NMI reported as 0");
            }
        }
        Command::Run {
            manifest,
            output,
            k,
            paper_defaults,
            per_space,
            images,
            no_cache,
        } => {
            let mut cfg = g.pipeline_config(manifest, output)?;
            if *paper_defaults {
                cfg.reset_to_defaults();
            }
            if k.is_some() {
                cfg.k = *k;
            }
            cfg.per_space |= *per_space;
            cfg.emit_images |= *images;
            if *no_cache {
                cfg.use_cache = false;
            }
            if *paper_defaults {
                println!("# effective configuration");
                print!("{}", cfg.describe());
            }
            let summary = run_pipeline(&cfg)?;
            print!("{}", summary.to_text());
        }
        Command::DumpMask { mask, pbm } => {
            let cfg = g.pipeline_config(here, here)?;
            let m = load_one(mask, &cfg)?;
            if *pbm {
                print!("{}", mask_to_pbm(&m));
            } else {
                println!("# {} {}x{} m={}", m.id, m.rows(), m.cols(), m.pixel_count());
                for r in 0..m.rows() {
                    let line: String = (0..m.cols()).map(|c| if m.get(r, c) { '#' } else { '.' }).collect();
                    println!("{line}");
                }
            }
        }
    }
    Ok(())
}
