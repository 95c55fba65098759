//! Deterministic grid navigation, state-space transforms and the rollout engine.

use std::f64::consts::FRAC_PI_2;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::{derive_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    pub x: f64,
    pub y: f64,
}

impl GridState {
    pub const fn new(x: f64, y: f64) -> Self {
        GridState { x, y }
    }

    pub fn as_array(self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn dist(self, other: GridState) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Left,
    Right,
    Up,
    Down,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Left, Action::Right, Action::Up, Action::Down];

    pub fn index(self) -> usize {
        match self {
            Action::Left => 0,
            Action::Right => 1,
            Action::Up => 2,
            Action::Down => 3,
        }
    }

    pub fn from_index(i: usize) -> Action {
        Action::ALL[i]
    }

    /// Grid displacement; `y` grows downwards so the goal sits bottom-right.
    pub fn delta(self) -> (i64, i64) {
        match self {
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::Up => (0, -1),
            Action::Down => (0, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridWorldSpec {
    #[serde(default = "default_side")]
    pub width: usize,
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default = "default_start")]
    pub start: GridState,
    #[serde(default = "default_goal")]
    pub goal: GridState,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_step_reward")]
    pub step_reward: f64,
}

fn default_side() -> usize {
    8
}
fn default_start() -> GridState {
    GridState::new(0.0, 0.0)
}
fn default_goal() -> GridState {
    GridState::new(7.0, 7.0)
}
fn default_horizon() -> usize {
    50
}
fn default_step_reward() -> f64 {
    -1.0
}

impl Default for GridWorldSpec {
    fn default() -> Self {
        GridWorldSpec {
            width: 8,
            height: 8,
            start: default_start(),
            goal: default_goal(),
            horizon: 50,
            step_reward: -1.0,
        }
    }
}

impl GridWorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.horizon == 0 {
            return Err(Error::Config("width, height and horizon must be positive".into()));
        }
        if self.start == self.goal {
            return Err(Error::Config("start and goal must differ".into()));
        }
        self.check_cell(self.start)?;
        self.check_cell(self.goal)?;
        Ok(())
    }

    pub fn center(&self) -> GridState {
        GridState::new((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }

    pub fn check_cell(&self, s: GridState) -> Result<(i64, i64)> {
        let ok = s.x.fract() == 0.0
            && s.y.fract() == 0.0
            && s.x >= 0.0
            && s.y >= 0.0
            && s.x < self.width as f64
            && s.y < self.height as f64;
        if ok {
            Ok((s.x as i64, s.y as i64))
        } else {
            Err(Error::InvalidState((s.x, s.y)))
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = GridState> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| GridState::new(x as f64, y as f64)))
    }

    /// Maps grid coordinates to `[-1, 1]` per axis.
    pub fn normalize(&self, s: GridState) -> [f64; 2] {
        [self.norm_x_scale() * s.x - 1.0, self.norm_y_scale() * s.y - 1.0]
    }

    pub(crate) fn norm_x_scale(&self) -> f64 {
        if self.width > 1 {
            2.0 / (self.width as f64 - 1.0)
        } else {
            1.0
        }
    }

    pub(crate) fn norm_y_scale(&self) -> f64 {
        if self.height > 1 {
            2.0 / (self.height as f64 - 1.0)
        } else {
            1.0
        }
    }
}

/// One transition of the untransformed environment.
pub fn step(spec: &GridWorldSpec, s: GridState, a: Action) -> Result<(GridState, f64, bool)> {
    let (x, y) = spec.check_cell(s)?;
    let (dx, dy) = a.delta();
    let (nx, ny) = (x + dx, y + dy);
    let next = if nx < 0 || ny < 0 || nx >= spec.width as i64 || ny >= spec.height as i64 {
        s
    } else {
        GridState::new(nx as f64, ny as f64)
    };
    Ok((next, spec.step_reward, next == spec.goal))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateTransform {
    Identity,
    Rotation { angle: f64, center: [f64; 2] },
}

/// `(cos, sin)` with exact entries at multiples of a quarter turn.
pub(crate) fn exact_cos_sin(angle: f64) -> (f64, f64) {
    let quarters = angle / FRAC_PI_2;
    let rounded = quarters.round();
    if (quarters - rounded).abs() < 1e-12 {
        match (rounded as i64).rem_euclid(4) {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        (angle.cos(), angle.sin())
    }
}

impl StateTransform {
    /// Rotation about the grid center.
    pub fn rotation(spec: &GridWorldSpec, angle: f64) -> Self {
        let c = spec.center();
        StateTransform::Rotation {
            angle,
            center: [c.x, c.y],
        }
    }

    pub fn apply(&self, s: GridState) -> GridState {
        match *self {
            StateTransform::Identity => s,
            StateTransform::Rotation { angle, center } => {
                let (c, sn) = exact_cos_sin(angle);
                let (dx, dy) = (s.x - center[0], s.y - center[1]);
                GridState::new(center[0] + c * dx - sn * dy, center[1] + sn * dx + c * dy)
            }
        }
    }

    pub fn inverse(&self) -> Self {
        match *self {
            StateTransform::Identity => StateTransform::Identity,
            StateTransform::Rotation { angle, center } => StateTransform::Rotation { angle: -angle, center },
        }
    }

    /// Linear part as a row-major 2x2 matrix.
    pub fn matrix(&self) -> [f64; 4] {
        match *self {
            StateTransform::Identity => [1.0, 0.0, 0.0, 1.0],
            StateTransform::Rotation { angle, .. } => {
                let (c, s) = exact_cos_sin(angle);
                [c, -s, s, c]
            }
        }
    }
}

pub fn apply_transform(t: &StateTransform, s: GridState) -> GridState {
    t.apply(s)
}

pub fn invert_transform(t: &StateTransform) -> StateTransform {
    t.inverse()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<GridState>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub reached_goal: bool,
}

impl Trajectory {
    /// Number of transitions `L`.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn map_states(&self, f: impl Fn(GridState) -> GridState) -> Trajectory {
        Trajectory {
            states: self.states.iter().map(|&s| f(s)).collect(),
            actions: self.actions.clone(),
            rewards: self.rewards.clone(),
            reached_goal: self.reached_goal,
        }
    }
}

/// Chooses an action from the state as observed in the (possibly transformed) domain.
pub trait ActionSampler {
    fn sample(&self, observed: GridState, rng: &mut Rng) -> Action;
}

impl<F> ActionSampler for F
where
    F: Fn(GridState, &mut Rng) -> Action,
{
    fn sample(&self, observed: GridState, rng: &mut Rng) -> Action {
        self(observed, rng)
    }
}

/// Runs one episode. The true state stays on the integer lattice; the sampler
/// and the returned trajectory see `transform` applied to it.
pub fn rollout<S: ActionSampler + ?Sized>(
    spec: &GridWorldSpec,
    transform: &StateTransform,
    sampler: &S,
    rng_seed: u64,
) -> Trajectory {
    let mut rng = Rng::seed_from_u64(rng_seed);
    let mut s = spec.start;
    let mut states = vec![transform.apply(s)];
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let mut reached_goal = false;
    for _ in 0..spec.horizon {
        let a = sampler.sample(*states.last().expect("non-empty"), &mut rng);
        let (next, r, done) = step(spec, s, a).expect("engine keeps the internal state on the grid");
        s = next;
        states.push(transform.apply(s));
        actions.push(a);
        rewards.push(r);
        if done {
            reached_goal = true;
            break;
        }
    }
    Trajectory {
        states,
        actions,
        rewards,
        reached_goal,
    }
}

/// Episode `k` uses seed `derive_seed(master_seed, stream, first_index + k)`.
#[allow(clippy::too_many_arguments)]
pub fn rollout_batch<S: ActionSampler + Sync + ?Sized>(
    spec: &GridWorldSpec,
    transform: &StateTransform,
    sampler: &S,
    master_seed: u64,
    stream: &str,
    first_index: u64,
    episodes: usize,
    exec: Exec,
) -> Vec<Trajectory> {
    exec.map_range(episodes, |k| {
        rollout(spec, transform, sampler, derive_seed(master_seed, stream, first_index + k as u64))
    })
}
