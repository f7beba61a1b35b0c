//! Clustering evaluation: t-SNE embedding, affinity propagation tuned to a
//! target cluster count, and NMI against ground-truth categories.

pub mod affinity;
pub mod nmi;
pub mod tsne;

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
pub use affinity::{affinity_propagation, negative_squared_distances, ApOptions, ApResult};
pub use nmi::{nmi, NmiScore};
pub use tsne::{tsne, Embedding2D, TsneOptions, TsneResult};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub ids: Vec<String>,
    /// Cluster per shape in `1..=K`.
    pub cluster: Vec<usize>,
    /// Exemplar id of each cluster.
    pub exemplars: Vec<String>,
}

impl ClusterAssignment {
    pub fn cluster_count(&self) -> usize {
        self.exemplars.len()
    }

    fn from_ap(ids: &[String], ap: &ApResult) -> Self {
        ClusterAssignment {
            ids: ids.to_vec(),
            cluster: ap.labels.clone(),
            exemplars: ap.exemplars.iter().map(|&e| ids[e].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAtK {
    pub assignment: ClusterAssignment,
    pub preference: f64,
    pub probes: usize,
    /// The returned count equals the requested one.
    pub exact: bool,
    /// The affinity-propagation run behind the result converged.
    pub converged: bool,
}

pub const MAX_PROBES: usize = 60;

/// Bisection on the shared preference until affinity propagation returns
/// `k` clusters.
///
/// The bracket is `[10·min similarity, max off-diagonal similarity]`; when
/// the upper end still yields fewer than `k` clusters it is raised to 0,
/// where every point becomes its own exemplar. After [`MAX_PROBES`] probes
/// the probe closest to `k` is returned (ties prefer fewer clusters).
pub fn cluster_at_k(emb: &Embedding2D, k: usize, opts: &ApOptions) -> Result<ClusterAtK> {
    cluster_similarities_at_k(&emb.ids, &negative_squared_distances(&emb.coords), k, opts)
}

/// [`cluster_at_k`] on an arbitrary symmetric similarity matrix.
pub fn cluster_similarities_at_k(ids: &[String], sim: &DMatrix<f64>, k: usize, opts: &ApOptions) -> Result<ClusterAtK> {
    let n = sim.nrows();
    if ids.len() != n || sim.ncols() != n {
        return Err(Error::InvalidParameter(format!(
            "{} ids for a {}×{} similarity matrix",
            ids.len(),
            sim.nrows(),
            sim.ncols()
        )));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("target cluster count {k} outside 1..={n}")));
    }
    if n == 1 {
        let ap = affinity_propagation(sim, 0.0, opts);
        return Ok(ClusterAtK {
            assignment: ClusterAssignment::from_ap(ids, &ap),
            preference: 0.0,
            probes: 1,
            exact: true,
            converged: true,
        });
    }
    let offdiag = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)));
    let min_sim = offdiag.clone().map(|(i, j)| sim[(i, j)]).fold(f64::INFINITY, f64::min);
    let max_sim = offdiag.map(|(i, j)| sim[(i, j)]).fold(f64::NEG_INFINITY, f64::max);

    let mut probes = 0;
    let mut best: Option<(f64, ApResult)> = None;
    let run = |pref: f64, probes: &mut usize, best: &mut Option<(f64, ApResult)>| -> usize {
        *probes += 1;
        let ap = affinity_propagation(sim, pref, opts);
        let count = ap.cluster_count();
        let better = match best {
            None => true,
            Some((_, b)) => {
                let (dn, db) = (count.abs_diff(k), b.cluster_count().abs_diff(k));
                dn < db || (dn == db && count < b.cluster_count())
            }
        };
        if better {
            *best = Some((pref, ap));
        }
        count
    };

    let mut lo = 10.0 * min_sim;
    let mut hi = max_sim;
    let c_hi = run(hi, &mut probes, &mut best);
    if c_hi < k {
        lo = hi;
        hi = 0.0;
        run(hi, &mut probes, &mut best);
    } else if c_hi > k {
        run(lo, &mut probes, &mut best);
    }
    while probes < MAX_PROBES && best.as_ref().is_some_and(|(_, b)| b.cluster_count() != k) {
        let mid = 0.5 * (lo + hi);
        let c = run(mid, &mut probes, &mut best);
        if c < k {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (preference, ap) = best.expect("at least one probe");
    let exact = ap.cluster_count() == k;
    if !exact {
        log::warn!("affinity propagation reached {} clusters instead of {k}", ap.cluster_count());
    }
    Ok(ClusterAtK {
        assignment: ClusterAssignment::from_ap(ids, &ap),
        preference,
        probes,
        exact,
        converged: ap.converged,
    })
}

/// NMI of a clustering against categories looked up by shape id.
pub fn nmi_against(clusters: &ClusterAssignment, categories: &HashMap<String, String>) -> Result<NmiScore> {
    if clusters.ids.len() != categories.len() {
        return Err(Error::IdMismatch(format!(
            "{} clustered shapes but {} labeled shapes",
            clusters.ids.len(),
            categories.len()
        )));
    }
    let labels = clusters
        .ids
        .iter()
        .map(|id| {
            categories
                .get(id)
                .ok_or_else(|| Error::IdMismatch(format!("no category for {id:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(nmi(&clusters.cluster, &labels))
}

/// Runs t-SNE on a dissimilarity matrix and wraps the result with ids.
pub fn embed(ids: &[String], dist: &DMatrix<f64>, opts: &TsneOptions) -> Result<(Embedding2D, TsneResult)> {
    let res = tsne(dist, opts)?;
    Ok((
        Embedding2D {
            ids: ids.to_vec(),
            coords: res.coords.clone(),
        },
        res,
    ))
}
