//! Fixtures shared by the benchmarks.

use artishape_core::pipeline::{analyze_all, AnalysisCache};
use artishape_core::synth::articulated_dataset;
use artishape_core::{AnalysisConfig, ShapeMask, ShapeSignature};

/// One figure per category, always the same ones.
pub fn figures() -> Vec<ShapeMask> {
    articulated_dataset(1, 17).expect("synthetic figures are valid")
}

/// Region signatures of `per_category × 4` figures.
pub fn signatures(per_category: usize) -> Vec<ShapeSignature> {
    let masks = articulated_dataset(per_category, 17).expect("synthetic figures are valid");
    let (analyses, _) =
        analyze_all(&masks, &AnalysisConfig::default(), &AnalysisCache::disabled()).expect("analysis succeeds");
    analyses.iter().map(|a| a.signature()).collect()
}
