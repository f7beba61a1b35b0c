//! Normalized mutual information between two partitions,
//! `2·I(C; K) / (H(C) + H(K))`.

use std::collections::HashMap;
use std::hash::Hash;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmiScore {
    pub value: f64,
    /// Set when either partition has a single block; `value` is then 0.
    pub degenerate: bool,
}

fn block_sizes<T: Eq + Hash>(labels: &[T]) -> (Vec<usize>, HashMap<&T, usize>) {
    let mut ids: HashMap<&T, usize> = HashMap::new();
    let mut sizes = Vec::new();
    for l in labels {
        let next = ids.len();
        let id = *ids.entry(l).or_insert(next);
        if id == sizes.len() {
            sizes.push(0);
        }
        sizes[id] += 1;
    }
    (sizes, ids)
}

/// Sum of the terms in ascending order, so the result depends only on the
/// multiset of terms (not on label naming or partition order).
fn ordered_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// `(n/N)·ln(N/n)`, the entropy contribution of a block of size `n`.
fn entropy_term(n: usize, total: usize) -> f64 {
    let p = n as f64 / total as f64;
    p * ((total as u64 * n as u64) as f64 / (n as u64 * n as u64) as f64).ln()
}

pub fn nmi<A: Eq + Hash, B: Eq + Hash>(a: &[A], b: &[B]) -> NmiScore {
    assert_eq!(a.len(), b.len(), "partitions must cover the same items");
    let total = a.len();
    let (sa, ia) = block_sizes(a);
    let (sb, ib) = block_sizes(b);
    if sa.len() < 2 || sb.len() < 2 {
        return NmiScore {
            value: 0.0,
            degenerate: true,
        };
    }
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *joint.entry((ia[x], ib[y])).or_insert(0) += 1;
    }
    let mutual = ordered_sum(
        joint
            .iter()
            .map(|(&(i, j), &nij)| {
                let p = nij as f64 / total as f64;
                let ratio = (nij as u64 * total as u64) as f64 / (sa[i] as u64 * sb[j] as u64) as f64;
                p * ratio.ln()
            })
            .collect(),
    );
    let ha = ordered_sum(sa.iter().map(|&n| entropy_term(n, total)).collect());
    let hb = ordered_sum(sb.iter().map(|&n| entropy_term(n, total)).collect());
    // order the denominator so swapping the partitions is exact
    let denom = if ha <= hb { ha + hb } else { hb + ha };
    NmiScore {
        value: 2.0 * mutual / denom,
        degenerate: false,
    }
}
