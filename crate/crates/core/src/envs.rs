//! Navigation environments with hidden ground-truth rewards.
//!
//! * `nav2d`: a 10x10 arena, the action is a displacement in `[-1,1]^2`,
//!   positions are projected back into the arena, reward is the negative
//!   distance to the goal corner `(10,10)`.
//! * `pointmaze`: a unit-mass point on a 5x5 cell grid with walls. The layout
//!   is a U: the left arm dead-ends in an upper-left room close to the goal,
//!   the true route runs along the bottom, up the right arm and back left to
//!   the goal cell. The ground-truth reward increases along that route.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Nav2d,
    PointMaze,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Nav2d => "nav2d",
            EnvKind::PointMaze => "pointmaze",
        }
    }
}

/// Static description of an environment instance.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub episode_len: usize,
    pub action_bound: f64,
    pub goal: [f64; 2],
    pub maze: Option<Maze>,
}

/// Side length of the nav2d arena.
pub const ARENA: f64 = 10.0;

/// Integration step of the point-mass dynamics.
pub const MAZE_DT: f64 = 0.1;
/// Per-axis speed limit of the point mass.
pub const MAZE_MAX_SPEED: f64 = 2.0;

impl EnvSpec {
    pub fn nav2d() -> Self {
        Self {
            kind: EnvKind::Nav2d,
            episode_len: 50,
            action_bound: 1.0,
            goal: [ARENA, ARENA],
            maze: None,
        }
    }

    pub fn pointmaze() -> Self {
        let maze = Maze::u_maze();
        Self {
            kind: EnvKind::PointMaze,
            episode_len: 300,
            action_bound: 1.0,
            goal: maze.waypoints[maze.waypoints.len() - 1],
            maze: Some(maze),
        }
    }

    pub fn for_kind(kind: EnvKind) -> Self {
        match kind {
            EnvKind::Nav2d => Self::nav2d(),
            EnvKind::PointMaze => Self::pointmaze(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self.kind {
            EnvKind::Nav2d => 2,
            EnvKind::PointMaze => 4,
        }
    }

    pub fn act_dim(&self) -> usize {
        2
    }

    /// Affine map taking raw observations to roughly `[-1, 1]`.
    pub fn obs_scale(&self) -> ObsScale {
        match &self.maze {
            None => ObsScale {
                center: alloc::vec![ARENA / 2.0; 2],
                half_range: alloc::vec![ARENA / 2.0; 2],
            },
            Some(m) => {
                let (w, h) = (m.width as f64, m.height as f64);
                ObsScale {
                    center: alloc::vec![w / 2.0, h / 2.0, 0.0, 0.0],
                    half_range: alloc::vec![w / 2.0, h / 2.0, MAZE_MAX_SPEED, MAZE_MAX_SPEED],
                }
            }
        }
    }

    /// Initial state. Starts are fixed, so the seed does not influence them.
    pub fn reset(&self, _seed: u64) -> EnvState {
        let pos = match &self.maze {
            None => [0.0, 0.0],
            Some(m) => m.waypoints[0],
        };
        EnvState {
            pos,
            vel: [0.0, 0.0],
            t: 0,
        }
    }

    /// Applies `action` (clipped to the bounds) and returns the successor
    /// state with its ground-truth reward.
    pub fn step(&self, state: &EnvState, action: [f64; 2]) -> Result<(EnvState, f64)> {
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::InputContract(format!("non-finite action {action:?}")));
        }
        let b = self.action_bound;
        let a = [action[0].clamp(-b, b), action[1].clamp(-b, b)];
        let next = match &self.maze {
            None => EnvState {
                pos: [
                    (state.pos[0] + a[0]).clamp(0.0, ARENA),
                    (state.pos[1] + a[1]).clamp(0.0, ARENA),
                ],
                vel: [0.0, 0.0],
                t: state.t + 1,
            },
            Some(m) => {
                let vel = [
                    (state.vel[0] + a[0] * MAZE_DT).clamp(-MAZE_MAX_SPEED, MAZE_MAX_SPEED),
                    (state.vel[1] + a[1] * MAZE_DT).clamp(-MAZE_MAX_SPEED, MAZE_MAX_SPEED),
                ];
                let (pos, vel) = m.advance(state.pos, vel, MAZE_DT);
                EnvState { pos, vel, t: state.t + 1 }
            }
        };
        let reward = self.reward(&next);
        Ok((next, reward))
    }

    /// Hidden ground-truth reward of arriving in `state`.
    pub fn reward(&self, state: &EnvState) -> f64 {
        match &self.maze {
            None => -dist(state.pos, self.goal),
            Some(m) => m.progress_reward(state.pos),
        }
    }

    pub fn observe(&self, state: &EnvState) -> Vec<f32> {
        match self.kind {
            EnvKind::Nav2d => alloc::vec![state.pos[0] as f32, state.pos[1] as f32],
            EnvKind::PointMaze => alloc::vec![
                state.pos[0] as f32,
                state.pos[1] as f32,
                state.vel[0] as f32,
                state.vel[1] as f32
            ],
        }
    }

    pub fn is_last_step(&self, state: &EnvState) -> bool {
        state.t >= self.episode_len
    }
}

/// Per-dimension observation normalization: `(x - center) / half_range`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsScale {
    pub center: Vec<f64>,
    pub half_range: Vec<f64>,
}

impl ObsScale {
    pub fn identity(dim: usize) -> Self {
        Self {
            center: alloc::vec![0.0; dim],
            half_range: alloc::vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn write<T: Float>(&self, raw: &[f32], out: &mut [T]) {
        for k in 0..raw.len() {
            out[k] = T::from((raw[k] as f64 - self.center[k]) / self.half_range[k]).unwrap();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub t: usize,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Keeps positions strictly inside free cells after a wall contact.
const WALL_BACKOFF: f64 = 1e-7;

/// Grid maze with unit cells; cell `(x, y)` covers `[x, x+1) x [y, y+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Maze {
    pub width: usize,
    pub height: usize,
    /// Row-major from the bottom row, `true` = wall.
    pub walls: Vec<bool>,
    /// Route through the maze, start first, goal last (cell centers).
    pub waypoints: Vec<[f64; 2]>,
    /// Progress index per cell: number of waypoints passed on the route.
    pub progress: Vec<usize>,
}

impl Maze {
    /// The U-shaped maze. Top row first in the picture below.
    ///
    /// ```text
    /// D D # G .
    /// D D # # .
    /// . # # # .
    /// . # # # .
    /// S . . . .
    /// ```
    pub fn u_maze() -> Self {
        let rows = ["..#G.", "..##.", ".###.", ".###.", "S...."];
        let (width, height) = (5, 5);
        let mut walls = alloc::vec![false; width * height];
        for (r, line) in rows.iter().enumerate() {
            let y = height - 1 - r;
            for (x, ch) in line.chars().enumerate() {
                walls[y * width + x] = ch == '#';
            }
        }
        let waypoints = alloc::vec![[0.5, 0.5], [4.5, 0.5], [4.5, 4.5], [3.5, 4.5]];
        let mut progress = alloc::vec![0; width * height];
        progress[4] = 1;
        for y in 1..4 {
            progress[y * width + 4] = 1;
        }
        progress[4 * width + 4] = 2;
        progress[4 * width + 3] = 3;
        Self {
            width,
            height,
            walls,
            waypoints,
            progress,
        }
    }

    /// Whether the cell containing `p` is free (inside the grid and not a wall).
    pub fn is_free(&self, p: [f64; 2]) -> bool {
        self.cell_free(p[0].floor() as i64, p[1].floor() as i64)
    }

    pub fn cell_free(&self, cx: i64, cy: i64) -> bool {
        if cx < 0 || cy < 0 || cx >= self.width as i64 || cy >= self.height as i64 {
            return false;
        }
        !self.walls[cy as usize * self.width + cx as usize]
    }

    /// Route progress of the cell containing `p`.
    pub fn progress_index(&self, p: [f64; 2]) -> usize {
        let cx = (p[0].floor() as i64).clamp(0, self.width as i64 - 1) as usize;
        let cy = (p[1].floor() as i64).clamp(0, self.height as i64 - 1) as usize;
        self.progress[cy * self.width + cx]
    }

    /// `10 * progress - distance to the next waypoint`; the goal cell pays the maximum.
    pub fn progress_reward(&self, p: [f64; 2]) -> f64 {
        let k = self.progress_index(p);
        let last = self.waypoints.len() - 1;
        if k >= last {
            return 10.0 * last as f64;
        }
        10.0 * k as f64 - dist(p, self.waypoints[k + 1])
    }

    /// Whether `p` lies in the goal cell (final waypoint reached).
    pub fn at_goal(&self, p: [f64; 2]) -> bool {
        self.progress_index(p) + 1 >= self.waypoints.len()
    }

    /// Moves from `pos` with velocity `vel` for `dt`, stopping at walls and
    /// sliding along them; the blocked velocity component is zeroed.
    pub fn advance(&self, pos: [f64; 2], vel: [f64; 2], dt: f64) -> ([f64; 2], [f64; 2]) {
        let mut p = pos;
        let mut v = vel;
        let mut remaining = dt;
        // At most one boundary per axis can be crossed since |v| * dt < 1.
        for _ in 0..4 {
            if remaining <= 0.0 || (v[0] == 0.0 && v[1] == 0.0) {
                break;
            }
            let d = [v[0] * remaining, v[1] * remaining];
            let cell = [p[0].floor(), p[1].floor()];
            let cross = |axis: usize| -> f64 {
                if d[axis] > 0.0 {
                    (cell[axis] + 1.0 - p[axis]) / d[axis]
                } else if d[axis] < 0.0 {
                    (cell[axis] - p[axis]) / d[axis]
                } else {
                    f64::INFINITY
                }
            };
            let tx = cross(0);
            let ty = cross(1);
            let (first, second, t1, t2) = if tx <= ty { (0, 1, tx, ty) } else { (1, 0, ty, tx) };
            if t1 > 1.0 {
                p = [p[0] + d[0], p[1] + d[1]];
                break;
            }
            let step_dir = |axis: usize| if d[axis] > 0.0 { 1.0 } else { -1.0 };
            let mut entered = cell;
            entered[first] += step_dir(first);
            if !self.cell_free(entered[0] as i64, entered[1] as i64) {
                p = Self::stop_at(p, d, t1, first, cell);
                v[first] = 0.0;
                remaining *= 1.0 - t1;
                continue;
            }
            if t2 <= 1.0 {
                let mut corner = entered;
                corner[second] += step_dir(second);
                if !self.cell_free(corner[0] as i64, corner[1] as i64) {
                    p = Self::stop_at(p, d, t2, second, entered);
                    v[second] = 0.0;
                    remaining *= 1.0 - t2;
                    continue;
                }
            }
            p = [p[0] + d[0], p[1] + d[1]];
            break;
        }
        (p, v)
    }

    /// Position at fraction `t` of displacement `d`, backed off the boundary
    /// on `axis` so it stays inside `cell`.
    fn stop_at(p: [f64; 2], d: [f64; 2], t: f64, axis: usize, cell: [f64; 2]) -> [f64; 2] {
        let mut q = [p[0] + d[0] * t, p[1] + d[1] * t];
        q[axis] = if d[axis] > 0.0 {
            cell[axis] + 1.0 - WALL_BACKOFF
        } else {
            cell[axis] + WALL_BACKOFF
        };
        q
    }
}

/// One environment step as recorded in a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub t: usize,
    pub state: Vec<f32>,
    pub action: Vec<f32>,
    pub next_state: Vec<f32>,
    pub reward_gt: f64,
    /// Filled in by the learner; never read by the teacher.
    pub reward_learned: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub agent_id: usize,
    pub episode: u64,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Positions visited, including the start.
    pub fn positions(&self) -> Vec<[f32; 2]> {
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        if let Some(s) = self.steps.first() {
            out.push([s.state[0], s.state[1]]);
        }
        out.extend(self.steps.iter().map(|s| [s.next_state[0], s.next_state[1]]));
        out
    }
}

/// Undiscounted sum of ground-truth rewards.
pub fn ground_truth_return(traj: &Trajectory) -> Result<f64> {
    if traj.is_empty() {
        return Err(Error::InputContract("empty trajectory".into()));
    }
    Ok(traj.steps.iter().map(|s| s.reward_gt).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nav2d_reset_at_origin() {
        let spec = EnvSpec::nav2d();
        assert_eq!(spec.reset(0).pos, [0.0, 0.0]);
        assert_eq!(spec.reset(3), spec.reset(3));
    }

    #[test]
    fn pointmaze_reset_at_rest() {
        let spec = EnvSpec::pointmaze();
        let s = spec.reset(11);
        assert_eq!(s.vel, [0.0, 0.0]);
        assert!(spec.maze.as_ref().unwrap().is_free(s.pos));
    }

    #[test]
    fn nav2d_step_examples() {
        let spec = EnvSpec::nav2d();
        let (s, r) = spec.step(&spec.reset(0), [1.0, 1.0]).unwrap();
        assert_eq!(s.pos, [1.0, 1.0]);
        // -|(1,1) - (10,10)| = -9 * sqrt(2)
        assert!((r + 12.727922061357855).abs() < 1e-9);

        let corner = EnvState {
            pos: [10.0, 10.0],
            vel: [0.0; 2],
            t: 3,
        };
        let (s, r) = spec.step(&corner, [1.0, 1.0]).unwrap();
        assert_eq!(s.pos, [10.0, 10.0]);
        assert_eq!(r, 0.0);
        let (_, r) = spec.step(&corner, [0.0, 0.0]).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn actions_are_clipped() {
        let spec = EnvSpec::nav2d();
        let (s, _) = spec.step(&spec.reset(0), [5.0, 0.5]).unwrap();
        assert_eq!(s.pos, [1.0, 0.5]);
    }

    #[test]
    fn non_finite_action_rejected() {
        let spec = EnvSpec::pointmaze();
        assert!(matches!(spec.step(&spec.reset(0), [f64::NAN, 0.0]), Err(Error::InputContract(_))));
    }

    #[test]
    fn return_of_goal_pinned_trajectory_is_zero() {
        let spec = EnvSpec::nav2d();
        let mut s = EnvState {
            pos: [10.0, 10.0],
            vel: [0.0; 2],
            t: 0,
        };
        let mut steps = Vec::new();
        for t in 0..50 {
            let (n, r) = spec.step(&s, [0.0, 0.0]).unwrap();
            steps.push(Step {
                t,
                state: spec.observe(&s),
                action: alloc::vec![0.0, 0.0],
                next_state: spec.observe(&n),
                reward_gt: r,
                reward_learned: 0.0,
            });
            s = n;
        }
        let traj = Trajectory {
            agent_id: 0,
            episode: 0,
            steps,
        };
        assert_eq!(ground_truth_return(&traj).unwrap(), 0.0);
        let empty = Trajectory {
            agent_id: 0,
            episode: 0,
            steps: Vec::new(),
        };
        assert!(ground_truth_return(&empty).is_err());
    }

    #[test]
    fn maze_reward_increases_along_route() {
        let m = Maze::u_maze();
        let route = [[0.5, 0.5], [2.5, 0.5], [4.5, 0.5], [4.5, 2.5], [4.5, 4.5], [3.5, 4.5]];
        for w in route.windows(2) {
            assert!(m.progress_reward(w[1]) > m.progress_reward(w[0]));
        }
        // The decoy room pays less than the start.
        assert!(m.progress_reward([0.5, 4.5]) < m.progress_reward([0.5, 0.5]));
        assert!(m.at_goal([3.5, 4.5]));
        assert!(!m.at_goal([4.5, 4.5]));
    }

    #[test]
    fn maze_blocks_and_slides() {
        let m = Maze::u_maze();
        // Moving right from the left column into the wall at x = 1, row 1.
        let (p, v) = m.advance([0.95, 1.5], [2.0, 1.0], 0.1);
        assert!(p[0] < 1.0 && p[0] > 0.99);
        assert_eq!(v[0], 0.0);
        assert!((p[1] - 1.6).abs() < 1e-9);
        // Free motion in the bottom corridor.
        let (p, _) = m.advance([2.0, 0.5], [1.0, 0.0], 0.1);
        assert!((p[0] - 2.1).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn nav2d_stays_in_arena(actions in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..120)) {
            let spec = EnvSpec::nav2d();
            let mut s = spec.reset(0);
            for (ax, ay) in actions {
                s = spec.step(&s, [ax, ay]).unwrap().0;
                prop_assert!((0.0..=ARENA).contains(&s.pos[0]) && (0.0..=ARENA).contains(&s.pos[1]));
            }
        }

        #[test]
        fn nav2d_moving_toward_goal_never_lowers_reward(x in 0.0f64..10.0, y in 0.0f64..10.0, frac in 0.0f64..1.0) {
            let spec = EnvSpec::nav2d();
            let s = EnvState { pos: [x, y], vel: [0.0; 2], t: 0 };
            let to_goal = [ARENA - x, ARENA - y];
            let len = (to_goal[0].powi(2) + to_goal[1].powi(2)).sqrt().max(1e-12);
            let a = [to_goal[0] / len * frac, to_goal[1] / len * frac];
            let (n, r) = spec.step(&s, a).unwrap();
            prop_assert!(r >= spec.reward(&s) - 1e-12);
            prop_assert!(n.pos[0] >= x && n.pos[1] >= y);
        }

        #[test]
        fn maze_segments_never_cross_walls(seed in 0u64..200) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let spec = EnvSpec::pointmaze();
            let m = spec.maze.clone().unwrap();
            let mut s = spec.reset(seed);
            for _ in 0..300 {
                let a = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let (n, _) = spec.step(&s, a).unwrap();
                for k in 0..=64 {
                    let f = k as f64 / 64.0;
                    let q = [s.pos[0] + (n.pos[0] - s.pos[0]) * f, s.pos[1] + (n.pos[1] - s.pos[1]) * f];
                    prop_assert!(m.is_free(q), "segment {:?} -> {:?} enters a wall at {:?}", s.pos, n.pos, q);
                }
                s = n;
            }
        }
    }
}
