//! Ground costs: Euclidean state cost and dynamic time warping over state sequences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::GridState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    /// DTW between trajectories' state sequences.
    TrajectoryDtw,
    /// Euclidean distance between individual visited states.
    StateL2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub mode: CostMode,
}

impl Default for CostSpec {
    fn default() -> Self {
        CostSpec {
            mode: CostMode::TrajectoryDtw,
        }
    }
}

pub fn state_cost(a: GridState, b: GridState) -> f64 {
    a.dist(b)
}

/// `d/db ‖a - b‖`, defined as zero when `a == b`.
pub fn state_cost_grad(a: GridState, b: GridState) -> [f64; 2] {
    let d = a.dist(b);
    if d == 0.0 {
        [0.0, 0.0]
    } else {
        [(b.x - a.x) / d, (b.y - a.y) / d]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtwResult {
    pub distance: f64,
    /// Monotone warping path from `(0, 0)` to `(n-1, m-1)`.
    pub alignment: Vec<(usize, usize)>,
}

/// Full-table DTW with Euclidean base cost.
///
/// Predecessor ties resolve diagonal first, then `(i-1, j)`, then `(i, j-1)`.
pub fn dtw(a: &[GridState], b: &[GridState]) -> Result<DtwResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySequence("dtw"));
    }
    let (n, m) = (a.len(), b.len());
    let mut acc = vec![0.0f64; n * m];
    for i in 0..n {
        for j in 0..m {
            let c = state_cost(a[i], b[j]);
            let best = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => acc[j - 1],
                (_, 0) => acc[(i - 1) * m],
                _ => acc[(i - 1) * m + j - 1].min(acc[(i - 1) * m + j]).min(acc[i * m + j - 1]),
            };
            acc[i * m + j] = c + best;
        }
    }
    let mut alignment = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n - 1, m - 1);
    alignment.push((i, j));
    while (i, j) != (0, 0) {
        (i, j) = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = acc[(i - 1) * m + j - 1];
            let up = acc[(i - 1) * m + j];
            let left = acc[i * m + j - 1];
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        alignment.push((i, j));
    }
    alignment.reverse();
    Ok(DtwResult {
        distance: acc[n * m - 1],
        alignment,
    })
}

/// Gradient of the DTW distance with respect to each state of `b`, holding the
/// optimal alignment fixed.
pub fn dtw_subgradient(a: &[GridState], b: &[GridState]) -> Result<Vec<[f64; 2]>> {
    Ok(dtw_with_subgradient(a, b)?.1)
}

pub fn dtw_with_subgradient(a: &[GridState], b: &[GridState]) -> Result<(DtwResult, Vec<[f64; 2]>)> {
    let res = dtw(a, b)?;
    let grad = alignment_gradient(a, b, &res.alignment);
    Ok((res, grad))
}

pub(crate) fn alignment_gradient(a: &[GridState], b: &[GridState], alignment: &[(usize, usize)]) -> Vec<[f64; 2]> {
    let mut grad = vec![[0.0; 2]; b.len()];
    for &(i, j) in alignment {
        let g = state_cost_grad(a[i], b[j]);
        grad[j][0] += g[0];
        grad[j][1] += g[1];
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gs(x: f64, y: f64) -> GridState {
        GridState::new(x, y)
    }

    fn seq() -> impl Strategy<Value = Vec<GridState>> {
        prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0).prop_map(|(x, y)| gs(x, y)), 1..12)
    }

    #[test]
    fn state_cost_examples() {
        assert_eq!(state_cost(gs(0.0, 0.0), gs(0.0, 0.0)), 0.0);
        assert_eq!(state_cost(gs(0.0, 0.0), gs(3.0, 4.0)), 5.0);
    }

    #[test]
    fn dtw_examples() {
        let a = [gs(0.0, 0.0), gs(1.0, 0.0)];
        assert_eq!(dtw(&a, &a).unwrap().distance, 0.0);
        let b = [gs(0.0, 0.0), gs(0.0, 0.0), gs(1.0, 0.0)];
        let r = dtw(&a, &b).unwrap();
        assert_eq!(r.distance, 0.0);
        assert_eq!(r.alignment.first(), Some(&(0, 0)));
        assert_eq!(r.alignment.last(), Some(&(1, 2)));
        assert!(matches!(dtw(&[], &a), Err(Error::EmptySequence(_))));
    }

    #[test]
    fn subgradient_examples() {
        let a = [gs(0.0, 0.0), gs(2.0, 1.0), gs(3.0, 3.0)];
        assert!(dtw_subgradient(&a, &a).unwrap().iter().all(|g| *g == [0.0, 0.0]));
        let g = dtw_subgradient(&[gs(0.0, 0.0)], &[gs(3.0, 4.0)]).unwrap();
        assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[0][1] - 0.8).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn state_cost_is_symmetric(ax in -9.0f64..9.0, ay in -9.0f64..9.0, bx in -9.0f64..9.0, by in -9.0f64..9.0) {
            prop_assert_eq!(state_cost(gs(ax, ay), gs(bx, by)), state_cost(gs(bx, by), gs(ax, ay)));
        }

        #[test]
        fn alignment_is_a_valid_warping_path(a in seq(), b in seq()) {
            let r = dtw(&a, &b).unwrap();
            prop_assert_eq!(r.alignment[0], (0, 0));
            prop_assert_eq!(*r.alignment.last().unwrap(), (a.len() - 1, b.len() - 1));
            for w in r.alignment.windows(2) {
                let (di, dj) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
                prop_assert!((di, dj) == (1, 0) || (di, dj) == (0, 1) || (di, dj) == (1, 1));
            }
            let along: f64 = r.alignment.iter().map(|&(i, j)| state_cost(a[i], b[j])).sum();
            prop_assert!((along - r.distance).abs() <= 1e-9 * r.distance.max(1.0));
            prop_assert!(r.distance >= 0.0);
        }

        #[test]
        fn dtw_is_symmetric(a in seq(), b in seq()) {
            let ab = dtw(&a, &b).unwrap().distance;
            let ba = dtw(&b, &a).unwrap().distance;
            prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0));
        }

        #[test]
        fn warping_never_exceeds_lockstep_cost(pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 1..12)) {
            let a: Vec<_> = pairs.iter().map(|p| gs(p.0, p.1)).collect();
            let b: Vec<_> = pairs.iter().map(|p| gs(p.2, p.3)).collect();
            let lockstep: f64 = a.iter().zip(&b).map(|(x, y)| state_cost(*x, *y)).sum();
            prop_assert!(dtw(&a, &b).unwrap().distance <= lockstep + 1e-12);
        }

        #[test]
        fn small_step_against_subgradient_does_not_increase(a in seq(), b in seq()) {
            let (r, g) = dtw_with_subgradient(&a, &b).unwrap();
            let norm: f64 = g.iter().map(|v| v[0] * v[0] + v[1] * v[1]).sum::<f64>().sqrt();
            prop_assume!(norm > 1e-6);
            let eps = 1e-4;
            let moved: Vec<_> = b.iter().zip(&g).map(|(s, v)| gs(s.x - eps * v[0] / norm, s.y - eps * v[1] / norm)).collect();
            // the fixed-alignment cost is an upper bound on the new DTW, and it decreases to first order
            let fixed: f64 = r.alignment.iter().map(|&(i, j)| state_cost(a[i], moved[j])).sum();
            prop_assert!(dtw(&a, &moved).unwrap().distance <= fixed + 1e-12);
            prop_assert!(fixed <= r.distance + 1e-9);
        }
    }

    #[test]
    fn subgradient_matches_finite_differences_where_alignment_is_stable() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut checked = 0;
        for _ in 0..200 {
            let n = rng.gen_range(1..8);
            let m = rng.gen_range(1..8);
            let a: Vec<_> = (0..n).map(|_| gs(rng.gen_range(0.0..7.0), rng.gen_range(0.0..7.0))).collect();
            let b: Vec<_> = (0..m).map(|_| gs(rng.gen_range(0.0..7.0), rng.gen_range(0.0..7.0))).collect();
            let (r, g) = dtw_with_subgradient(&a, &b).unwrap();
            let h = 1e-6;
            for j in 0..m {
                for axis in 0..2 {
                    let mut plus = b.clone();
                    let mut minus = b.clone();
                    if axis == 0 {
                        plus[j].x += h;
                        minus[j].x -= h;
                    } else {
                        plus[j].y += h;
                        minus[j].y -= h;
                    }
                    let rp = dtw(&a, &plus).unwrap();
                    let rm = dtw(&a, &minus).unwrap();
                    if rp.alignment != r.alignment || rm.alignment != r.alignment {
                        continue;
                    }
                    let fd = (rp.distance - rm.distance) / (2.0 * h);
                    let an = g[j][axis];
                    assert!((fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()).max(1e-3), "fd {fd} an {an}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 500);
    }
}
