//! Adaptation curves, the undo-map error, and trajectory heatmaps.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::divergences::{wasserstein_objective, DualPotentials, DualProblem};
use crate::error::{Error, Result};
use crate::gridworld::{GridState, GridWorldSpec, StateTransform, Trajectory};
use crate::policy::StateMap;
use crate::rng::Rng;

pub const METRICS_HEADER: &str = "iteration,wasserstein_estimate,target_return,undo_map_error";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iteration: usize,
    pub wasserstein_estimate: f64,
    pub target_return: f64,
    pub undo_map_error: f64,
}

/// Rows as CSV text with [`METRICS_HEADER`]. Reals use the shortest
/// round-tripping representation.
pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{:?},{:?},{:?}",
            r.iteration, r.wasserstein_estimate, r.target_return, r.undo_map_error
        )
        .expect("writing to a String");
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(METRICS_HEADER) {
        return Err(Error::format("metrics csv", "missing or wrong header"));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::format("metrics csv", format!("line {}: expected 4 fields", n + 2)));
        }
        let real = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| Error::format("metrics csv", format!("line {}: bad number {s:?}", n + 2)))
        };
        rows.push(MetricRow {
            iteration: fields[0]
                .trim()
                .parse()
                .map_err(|_| Error::format("metrics csv", format!("line {}: bad iteration", n + 2)))?,
            wasserstein_estimate: real(fields[1])?,
            target_return: real(fields[2])?,
            undo_map_error: real(fields[3])?,
        });
    }
    Ok(rows)
}

/// Mean of `‖p - u(T p)‖²` over the given source states.
pub fn undo_map_error(source_states: &[GridState], undo: &dyn StateMap, transform: &StateTransform) -> f64 {
    if source_states.is_empty() {
        return 0.0;
    }
    let total: f64 = source_states
        .iter()
        .map(|&p| {
            let q = undo.map_state(transform.apply(p));
            (p.x - q.x).powi(2) + (p.y - q.y).powi(2)
        })
        .sum();
    total / source_states.len() as f64
}

/// `n` states drawn uniformly, with replacement, from all states visited by `episodes`.
pub fn sample_visited_states(episodes: &[Trajectory], n: usize, rng: &mut Rng) -> Vec<GridState> {
    let pool: Vec<GridState> = episodes.iter().flat_map(|t| t.states.iter().copied()).collect();
    if pool.is_empty() {
        return Vec::new();
    }
    (0..n).map(|_| *pool.choose(rng).expect("non-empty pool")).collect()
}

/// Evaluates the dual objective with the current potentials; never trains them.
pub fn wasserstein_track(problem: &DualProblem, potentials: &DualPotentials, alpha: f64) -> f64 {
    wasserstein_objective(problem, potentials, alpha).value
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (average ranks for ties). `None` if either
/// series is constant or shorter than 2.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

/// Spearman correlation of a curve against its iteration index.
pub fn trend(curve: &[f64]) -> Option<f64> {
    let idx: Vec<f64> = (0..curve.len()).map(|i| i as f64).collect();
    spearman(&idx, curve)
}

/// Visit and transition counts of a batch of episodes on the grid.
///
/// States are rounded to the nearest cell; anything outside the grid is
/// counted in `off_grid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeatmap {
    pub width: usize,
    pub height: usize,
    /// Row-major `height x width` visit counts.
    pub cells: Vec<u64>,
    /// Transition counts between distinct cells, keyed `(from, to)` row-major indices.
    pub edges: Vec<((usize, usize), u64)>,
    pub start: GridState,
    pub goal: GridState,
    pub episodes: usize,
    pub off_grid: u64,
}

impl TrajectoryHeatmap {
    /// `start`/`goal` are marked in the frame the episodes were observed in.
    pub fn from_episodes(grid: &GridWorldSpec, episodes: &[Trajectory], start: GridState, goal: GridState) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::EmptySequence("heatmap episodes"));
        }
        let (w, h) = (grid.width, grid.height);
        let cell_of = |s: GridState| -> Option<usize> {
            let (x, y) = (s.x.round(), s.y.round());
            (x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h).then(|| y as usize * w + x as usize)
        };
        let mut cells = vec![0u64; w * h];
        let mut edges = std::collections::BTreeMap::new();
        let mut off_grid = 0;
        for t in episodes {
            let mut prev = None;
            for &s in &t.states {
                let c = cell_of(s);
                match c {
                    Some(c) => cells[c] += 1,
                    None => off_grid += 1,
                }
                if let (Some(p), Some(c)) = (prev, c) {
                    if p != c {
                        *edges.entry((p, c)).or_insert(0u64) += 1;
                    }
                }
                prev = c;
            }
        }
        Ok(TrajectoryHeatmap {
            width: w,
            height: h,
            cells,
            edges: edges.into_iter().collect(),
            start,
            goal,
            episodes: episodes.len(),
            off_grid,
        })
    }

    pub fn count(&self, x: usize, y: usize) -> u64 {
        self.cells[y * self.width + x]
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().sum::<u64>() + self.off_grid
    }

    /// `x,y,count` rows for every cell.
    pub fn counts_csv(&self) -> String {
        let mut out = String::from("x,y,count\n");
        for y in 0..self.height {
            for x in 0..self.width {
                writeln!(out, "{x},{y},{}", self.count(x, y)).expect("writing to a String");
            }
        }
        out
    }

    /// Self-contained SVG: cell darkness and edge width scale with counts,
    /// start outlined in blue, goal in green.
    pub fn to_svg(&self, title: &str) -> String {
        const CELL: f64 = 40.0;
        const MARGIN: f64 = 20.0;
        let (w, h) = (self.width as f64 * CELL, self.height as f64 * CELL);
        let max_cell = self.cells.iter().copied().max().unwrap_or(0).max(1) as f64;
        let max_edge = self.edges.iter().map(|(_, c)| *c).max().unwrap_or(0).max(1) as f64;
        let mut s = String::new();
        writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
            w + 2.0 * MARGIN,
            h + 2.0 * MARGIN + 20.0,
            w + 2.0 * MARGIN,
            h + 2.0 * MARGIN + 20.0
        )
        .unwrap();
        writeln!(s, r#"<title>{}</title>"#, escape(title)).unwrap();
        writeln!(s, r#"<text x="{MARGIN}" y="14" font-family="sans-serif" font-size="12">{}</text>"#, escape(title)).unwrap();
        writeln!(s, r#"<g transform="translate({MARGIN},{})">"#, MARGIN + 10.0).unwrap();
        for y in 0..self.height {
            for x in 0..self.width {
                let shade = 255.0 * (1.0 - self.count(x, y) as f64 / max_cell);
                let v = shade.round() as u8;
                writeln!(
                    s,
                    r##"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="rgb({v},{v},{v})" stroke="#bbbbbb"/>"##,
                    x as f64 * CELL,
                    y as f64 * CELL
                )
                .unwrap();
            }
        }
        for &((from, to), c) in &self.edges {
            let (fx, fy) = ((from % self.width) as f64, (from / self.width) as f64);
            let (tx, ty) = ((to % self.width) as f64, (to / self.width) as f64);
            writeln!(
                s,
                r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#d04020" stroke-opacity="0.7" stroke-width="{:.2}"/>"##,
                (fx + 0.5) * CELL,
                (fy + 0.5) * CELL,
                (tx + 0.5) * CELL,
                (ty + 0.5) * CELL,
                0.5 + 5.0 * c as f64 / max_edge
            )
            .unwrap();
        }
        for (marker, color) in [(self.start, "#2060d0"), (self.goal, "#20a040")] {
            writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="none" stroke="{color}" stroke-width="4"/>"#,
                marker.x.round() * CELL,
                marker.y.round() * CELL
            )
            .unwrap();
        }
        s.push_str("</g>\n</svg>\n");
        s
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{Action, StateTransform};
    use std::f64::consts::FRAC_PI_2;

    fn spec() -> GridWorldSpec {
        GridWorldSpec::default()
    }

    fn straight_right() -> Trajectory {
        let states: Vec<_> = (0..8).map(|x| GridState::new(x as f64, 0.0)).collect();
        Trajectory {
            actions: vec![Action::Right; 7],
            rewards: vec![-1.0; 7],
            states,
            reached_goal: false,
        }
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            MetricRow {
                iteration: 0,
                wasserstein_estimate: 1.0 / 3.0,
                target_return: -50.0,
                undo_map_error: 24.5,
            },
            MetricRow {
                iteration: 1,
                wasserstein_estimate: -1e-17,
                target_return: -14.0,
                undo_map_error: 0.0,
            },
        ];
        let text = metrics_csv(&rows);
        assert!(text.starts_with(METRICS_HEADER));
        assert_eq!(parse_metrics_csv(&text).unwrap(), rows);
        assert!(parse_metrics_csv("a,b\n").is_err());
    }

    #[test]
    fn undo_error_examples() {
        let s = spec();
        let t = StateTransform::rotation(&s, FRAC_PI_2);
        let states: Vec<_> = s.cells().collect();
        assert!(undo_map_error(&states, &t.inverse(), &t) < 1e-20);
        let by_hand: f64 = states.iter().map(|p| {
            let q = t.apply(*p);
            (p.x - q.x).powi(2) + (p.y - q.y).powi(2)
        }).sum::<f64>() / states.len() as f64;
        assert_eq!(undo_map_error(&states, &StateTransform::Identity, &t), by_hand);
        let doubled: Vec<_> = states.iter().chain(&states).copied().collect();
        assert!((undo_map_error(&doubled, &StateTransform::Identity, &t) - by_hand).abs() < 1e-12);
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(trend(&[5.0, 4.0, 3.0, 1.0]), Some(-1.0));
        assert_eq!(trend(&[1.0, 2.0, 2.0, 3.0]).map(|r| r > 0.9), Some(true));
        assert_eq!(trend(&[2.0, 2.0]), None);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
    }

    #[test]
    fn heatmap_counts() {
        let t = straight_right();
        let hm = TrajectoryHeatmap::from_episodes(&spec(), &[t.clone(), t.clone()], spec().start, spec().goal).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(hm.count(x, y), if y == 0 { 2 } else { 0 });
            }
        }
        assert_eq!(hm.total(), 16);
        assert_eq!(hm.count(0, 0), hm.episodes as u64);
        assert_eq!(hm.edges.len(), 7);
        let svg = hm.to_svg("a <b>");
        assert!(svg.starts_with("<svg") && svg.contains("a &lt;b&gt;"));
        assert_eq!(hm.counts_csv().lines().count(), 65);
        assert!(TrajectoryHeatmap::from_episodes(&spec(), &[], spec().start, spec().goal).is_err());
    }

    #[test]
    fn visited_sample_comes_from_episodes() {
        let t = straight_right();
        let mut rng = crate::rng::substream(0, "t", 0);
        let sample = sample_visited_states(&[t.clone()], 1000, &mut rng);
        assert_eq!(sample.len(), 1000);
        assert!(sample.iter().all(|s| t.states.contains(s)));
    }
}
