//! Trajectory files: one JSON header line followed by one JSON record per
//! trajectory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{step, Action, GridState, GridWorldSpec, StateTransform, Trajectory};
use crate::policy::DemoSet;

pub const TRAJECTORY_FORMAT: &str = "tvd-trajectories";
pub const TRAJECTORY_FORMAT_VERSION: u32 = 1;

/// Tolerance when mapping observed states back onto the lattice.
const LATTICE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryHeader {
    pub format: String,
    pub version: u32,
    pub gridworld: GridWorldSpec,
    /// Transform the stored (observed) states were produced under.
    pub transform: StateTransform,
    /// Policy checkpoint or generator that produced the episodes.
    pub source: String,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    states: Vec<[f64; 2]>,
    actions: Vec<Action>,
    rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFile {
    pub header: TrajectoryHeader,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryFile {
    pub fn new(
        gridworld: GridWorldSpec,
        transform: StateTransform,
        source: impl Into<String>,
        seed: u64,
        trajectories: Vec<Trajectory>,
    ) -> Self {
        TrajectoryFile {
            header: TrajectoryHeader {
                format: TRAJECTORY_FORMAT.into(),
                version: TRAJECTORY_FORMAT_VERSION,
                gridworld,
                transform,
                source: source.into(),
                seed,
            },
            trajectories,
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        serde_json::to_writer(&mut *w, &self.header).map_err(json_err)?;
        w.write_all(b"\n")?;
        for t in &self.trajectories {
            let rec = Record {
                states: t.states.iter().map(|s| s.as_array()).collect(),
                actions: t.actions.clone(),
                rewards: t.rewards.clone(),
            };
            serde_json::to_writer(&mut *w, &rec).map_err(json_err)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Parses and validates every record against the header's dynamics.
    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines.next().ok_or_else(|| Error::format("trajectory file", "missing header"))??;
        let header: TrajectoryHeader = serde_json::from_str(&first).map_err(json_err)?;
        if header.format != TRAJECTORY_FORMAT || header.version != TRAJECTORY_FORMAT_VERSION {
            return Err(Error::format(
                "trajectory file",
                format!("unsupported format {} v{}", header.format, header.version),
            ));
        }
        header.gridworld.validate()?;
        let mut trajectories = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(json_err)?;
            let t = rebuild(&header, rec).map_err(|e| Error::format("trajectory file", format!("record {}: {e}", n + 1)))?;
            trajectories.push(t);
        }
        Ok(TrajectoryFile { header, trajectories })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        TrajectoryFile::read_from(BufReader::new(File::open(path)?))
    }

    /// Demonstrations must be recorded in the untransformed domain.
    pub fn demo_set(&self) -> Result<DemoSet> {
        if self.header.transform != StateTransform::Identity {
            return Err(Error::Config("demonstrations must be recorded in the source domain".into()));
        }
        DemoSet::new(&self.header.gridworld, self.trajectories.clone())
    }
}

fn json_err(e: serde_json::Error) -> Error {
    Error::format("trajectory file", e.to_string())
}

fn rebuild(header: &TrajectoryHeader, rec: Record) -> std::result::Result<Trajectory, String> {
    let spec = &header.gridworld;
    let l = rec.actions.len();
    if rec.states.len() != l + 1 || rec.rewards.len() != l {
        return Err("states, actions and rewards have inconsistent lengths".into());
    }
    if l == 0 || l > spec.horizon {
        return Err(format!("length {l} outside 1..={}", spec.horizon));
    }
    let inverse = header.transform.inverse();
    let internal: Vec<GridState> = rec
        .states
        .iter()
        .map(|&[x, y]| {
            let s = inverse.apply(GridState::new(x, y));
            let snapped = GridState::new(s.x.round(), s.y.round());
            if snapped.dist(s) > LATTICE_TOL {
                return Err(format!("state ({x}, {y}) is not the image of a grid cell"));
            }
            spec.check_cell(snapped).map_err(|e| e.to_string())?;
            Ok(snapped)
        })
        .collect::<std::result::Result<_, String>>()?;
    if internal[0] != spec.start {
        return Err("trajectory does not begin at the start cell".into());
    }
    let mut reached_goal = false;
    for t in 0..l {
        let (next, r, done) = step(spec, internal[t], rec.actions[t]).map_err(|e| e.to_string())?;
        if next != internal[t + 1] || r != rec.rewards[t] {
            return Err(format!("step {t} disagrees with the dynamics"));
        }
        if done {
            if t + 1 != l {
                return Err("trajectory continues past the goal".into());
            }
            reached_goal = true;
        }
    }
    if !reached_goal && l != spec.horizon {
        return Err("trajectory stops before the goal and the horizon".into());
    }
    Ok(Trajectory {
        states: rec.states.iter().map(|&[x, y]| GridState::new(x, y)).collect(),
        actions: rec.actions,
        rewards: rec.rewards,
        reached_goal,
    })
}
