use crate::costs::state_cost;
use crate::error::{Error, Result};
use crate::gridworld::GridState;

/// Longest sequence accepted on either side.
pub const DTW_BRUTE_MAX_LEN: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct BruteDtw {
    pub distance: f64,
    /// Number of warping paths enumerated.
    pub paths: u64,
}

/// Minimum summed Euclidean cost over every monotone, contiguous warping path.
///
/// Costs are accumulated from `(0, 0)` forward, one pair at a time.
pub fn dtw_brute_force(a: &[GridState], b: &[GridState]) -> Result<BruteDtw> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySequence("dtw oracle"));
    }
    if a.len() > DTW_BRUTE_MAX_LEN || b.len() > DTW_BRUTE_MAX_LEN {
        return Err(Error::InstanceTooLarge {
            oracle: "dtw-brute",
            detail: format!("lengths {} and {}, limit {DTW_BRUTE_MAX_LEN}", a.len(), b.len()),
        });
    }
    let mut best = BruteDtw {
        distance: f64::INFINITY,
        paths: 0,
    };
    walk(a, b, 0, 0, state_cost(a[0], b[0]), &mut best);
    Ok(best)
}

fn walk(a: &[GridState], b: &[GridState], i: usize, j: usize, acc: f64, best: &mut BruteDtw) {
    if i + 1 == a.len() && j + 1 == b.len() {
        best.paths += 1;
        if acc < best.distance {
            best.distance = acc;
        }
        return;
    }
    if i + 1 < a.len() && j + 1 < b.len() {
        walk(a, b, i + 1, j + 1, acc + state_cost(a[i + 1], b[j + 1]), best);
    }
    if i + 1 < a.len() {
        walk(a, b, i + 1, j, acc + state_cost(a[i + 1], b[j]), best);
    }
    if j + 1 < b.len() {
        walk(a, b, i, j + 1, acc + state_cost(a[i], b[j + 1]), best);
    }
}
