use std::collections::VecDeque;

use crate::error::Result;
use crate::gridworld::{step, Action, GridWorldSpec};

/// Fewest steps from `start` to `goal`, or `None` if unreachable.
pub fn bfs_shortest_path(spec: &GridWorldSpec) -> Result<Option<usize>> {
    spec.validate()?;
    let (sx, sy) = spec.check_cell(spec.start)?;
    spec.check_cell(spec.goal)?;
    let idx = |x: i64, y: i64| y as usize * spec.width + x as usize;
    let mut dist = vec![usize::MAX; spec.width * spec.height];
    dist[idx(sx, sy)] = 0;
    let mut queue = VecDeque::from([spec.start]);
    while let Some(s) = queue.pop_front() {
        let d = dist[idx(s.x as i64, s.y as i64)];
        if s == spec.goal {
            return Ok(Some(d));
        }
        for a in Action::ALL {
            let (next, _, _) = step(spec, s, a)?;
            let k = idx(next.x as i64, next.y as i64);
            if dist[k] == usize::MAX {
                dist[k] = d + 1;
                queue.push_back(next);
            }
        }
    }
    Ok(None)
}
