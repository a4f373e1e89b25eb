//! Benchmark environments as explicit tabular MDPs.
//!
//! The frozen-lake layouts are replicas of the standard public 4×4 and 8×8
//! maps, shipped as text fixtures. Rewards are turned into costs here
//! (`cost = −reward`).

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{sample_row, TabularMdp};
use crate::rng::{seeded, SimRng};

pub const MAP_4X4: &str = include_str!("../fixtures/maps/4x4.txt");
pub const MAP_8X8: &str = include_str!("../fixtures/maps/8x8.txt");

/// Grid moves, in the frozen-lake numbering.
pub const LEFT: usize = 0;
pub const DOWN: usize = 1;
pub const RIGHT: usize = 2;
pub const UP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlipModel {
    Deterministic,
    /// Intended move or either perpendicular move, ⅓ each.
    Slippery3Way,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MapSource {
    /// `"4x4"` or `"8x8"`.
    Named(String),
    Rows(Vec<String>),
}

impl MapSource {
    fn rows(&self) -> Result<Vec<String>> {
        match self {
            MapSource::Named(name) => {
                let text = match name.as_str() {
                    "4x4" => MAP_4X4,
                    "8x8" => MAP_8X8,
                    other => {
                        return Err(Error::InvalidArgument(format!("unknown map name {other:?}")))
                    }
                };
                Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
            }
            MapSource::Rows(rows) => Ok(rows.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridWorldSpec {
    pub map: MapSource,
    pub slip_model: SlipModel,
    #[serde(default)]
    pub step_cost: f64,
    #[serde(default)]
    pub hole_cost: f64,
    #[serde(default = "one")]
    pub goal_reward: f64,
    #[serde(default = "default_discount")]
    pub discount: f64,
}

fn one() -> f64 {
    1.0
}

fn default_discount() -> f64 {
    0.95
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Start,
    Frozen,
    Hole,
    Goal,
}

/// Parsed map.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<Cell>,
    pub start: usize,
}

impl Layout {
    pub fn parse(rows: &[String]) -> Result<Self> {
        let bad = |row, col, msg: &str| Error::MalformedMap { row, col, msg: msg.to_string() };
        if rows.is_empty() {
            return Err(bad(0, 0, "empty map"));
        }
        let cols = rows[0].chars().count();
        if cols == 0 {
            return Err(bad(0, 0, "empty row"));
        }
        let mut cells = Vec::with_capacity(rows.len() * cols);
        let mut start = None;
        let mut goals = 0;
        for (r, line) in rows.iter().enumerate() {
            let len = line.chars().count();
            if len != cols {
                return Err(bad(r, len.min(cols), &format!("row has {len} cells, expected {cols}")));
            }
            for (c, ch) in line.chars().enumerate() {
                let cell = match ch {
                    'S' => {
                        if start.is_some() {
                            return Err(bad(r, c, "second start cell"));
                        }
                        start = Some(r * cols + c);
                        Cell::Start
                    }
                    'F' => Cell::Frozen,
                    'H' => Cell::Hole,
                    'G' => {
                        goals += 1;
                        Cell::Goal
                    }
                    other => return Err(bad(r, c, &format!("unknown cell {other:?}"))),
                };
                cells.push(cell);
            }
        }
        let start = start.ok_or_else(|| bad(0, 0, "no start cell"))?;
        if goals == 0 {
            return Err(bad(0, 0, "no goal cell"));
        }
        Ok(Self { rows: rows.len(), cols, cells, start })
    }

    pub fn n_cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Index of the terminal state appended after the grid cells.
    pub fn absorbing(&self) -> usize {
        self.n_cells()
    }

    fn step(&self, cell: usize, action: usize) -> usize {
        let (r, c) = (cell / self.cols, cell % self.cols);
        let (r, c) = match action {
            LEFT => (r, c.saturating_sub(1)),
            DOWN => ((r + 1).min(self.rows - 1), c),
            RIGHT => (r, (c + 1).min(self.cols - 1)),
            _ => (r.saturating_sub(1), c),
        };
        r * self.cols + c
    }
}

impl GridWorldSpec {
    pub fn frozen_lake(name: &str, slippery: bool) -> Self {
        Self {
            map: MapSource::Named(name.to_string()),
            slip_model: if slippery { SlipModel::Slippery3Way } else { SlipModel::Deterministic },
            step_cost: 0.0,
            hole_cost: 0.0,
            goal_reward: 1.0,
            discount: default_discount(),
        }
    }

    pub fn layout(&self) -> Result<Layout> {
        Layout::parse(&self.map.rows()?)
    }
}

/// Grid cells plus one absorbing state. Holes and goals move to the
/// absorbing state under every action, charging `hole_cost` or
/// `−goal_reward`; other cells charge `step_cost`.
pub fn make_gridworld(spec: &GridWorldSpec) -> Result<TabularMdp> {
    let layout = spec.layout()?;
    let n = layout.n_cells() + 1;
    let m = 4;
    let term = layout.absorbing();
    let mut cost = vec![0.0; n * m];
    let mut p = vec![0.0; m * n * n];
    for a in 0..m {
        for i in 0..n {
            let row = &mut p[(a * n + i) * n..][..n];
            if i == term {
                row[term] = 1.0;
                continue;
            }
            let c = match layout.cells[i] {
                Cell::Hole => spec.hole_cost,
                Cell::Goal => -spec.goal_reward,
                Cell::Start | Cell::Frozen => spec.step_cost,
            };
            cost[i * m + a] = c;
            match layout.cells[i] {
                Cell::Hole | Cell::Goal => row[term] = 1.0,
                _ => match spec.slip_model {
                    SlipModel::Deterministic => row[layout.step(i, a)] = 1.0,
                    SlipModel::Slippery3Way => {
                        for b in [(a + 3) % 4, a, (a + 1) % 4] {
                            row[layout.step(i, b)] += 1.0 / 3.0;
                        }
                    }
                },
            }
        }
    }
    TabularMdp::new(n, m, spec.discount, cost, p)
}

/// Gym-style chain: action 0 moves forward (staying at the last state and
/// collecting `forward_reward` there), action 1 returns to state 0 and
/// collects `backward_reward`. With probability `slip` the other action is
/// executed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub length: usize,
    pub slip: f64,
    pub forward_reward: f64,
    pub backward_reward: f64,
    #[serde(default = "default_discount")]
    pub discount: f64,
}

impl Default for ChainSpec {
    fn default() -> Self {
        Self { length: 5, slip: 0.2, forward_reward: 10.0, backward_reward: 2.0, discount: 0.95 }
    }
}

pub const FORWARD: usize = 0;
pub const BACKWARD: usize = 1;

pub fn make_nchain(spec: &ChainSpec) -> Result<TabularMdp> {
    let n = spec.length;
    if n < 2 {
        return Err(Error::InvalidArgument(format!("chain length {n} < 2")));
    }
    if !(0.0..=1.0).contains(&spec.slip) {
        return Err(Error::InvalidArgument(format!("slip {} not in [0, 1]", spec.slip)));
    }
    let m = 2;
    let mut cost = vec![0.0; n * m];
    let mut p = vec![0.0; m * n * n];
    for i in 0..n {
        let fwd_dest = (i + 1).min(n - 1);
        let fwd_reward = if i == n - 1 { spec.forward_reward } else { 0.0 };
        for a in 0..m {
            let w_fwd = if a == FORWARD { 1.0 - spec.slip } else { spec.slip };
            let w_back = 1.0 - w_fwd;
            let row = &mut p[(a * n + i) * n..][..n];
            row[fwd_dest] += w_fwd;
            row[0] += w_back;
            cost[i * m + a] = -(w_fwd * fwd_reward + w_back * spec.backward_reward);
        }
    }
    TabularMdp::new(n, m, spec.discount, cost, p)
}

/// Blend every row with the uniform distribution: `(1 − p)·row + p/n`.
pub fn perturb(mdp: &TabularMdp, p: f64) -> Result<TabularMdp> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("perturbation probability {p} not in [0, 1]")));
    }
    let u = p / mdp.n_states() as f64;
    let t = mdp.transitions().iter().map(|&x| (1.0 - p) * x + u).collect();
    mdp.with_transitions(t)
}

/// Applies the same perturbation while sampling: with probability `p` the
/// next state is uniform, otherwise it follows the nominal row.
#[derive(Debug, Clone)]
pub struct PerturbedSampler<'a> {
    mdp: &'a TabularMdp,
    p: f64,
}

impl<'a> PerturbedSampler<'a> {
    pub fn new(mdp: &'a TabularMdp, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("perturbation probability {p} not in [0, 1]")));
        }
        Ok(Self { mdp, p })
    }

    pub fn sample(&self, i: usize, a: usize, rng: &mut SimRng) -> Result<usize> {
        self.mdp.check_pair(i, a)?;
        if rng.random::<f64>() < self.p {
            Ok(rng.random_range(0..self.mdp.n_states()))
        } else {
            Ok(sample_row(self.mdp.row(i, a), rng))
        }
    }
}

/// Random MDP with `branching` successors per row (uniformly chosen, weights
/// normalised unit exponentials), costs uniform on `[0, 1]`, discount 0.9.
pub fn random_mdp(n: usize, m: usize, branching: usize, seed: u64) -> Result<TabularMdp> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("need at least one state and action".into()));
    }
    if branching == 0 || branching > n {
        return Err(Error::InvalidArgument(format!("branching {branching} not in 1..={n}")));
    }
    let mut rng = seeded(seed);
    let mut p = vec![0.0; m * n * n];
    for a in 0..m {
        for i in 0..n {
            let row = &mut p[(a * n + i) * n..][..n];
            let idx = sample_indices(&mut rng, n, branching);
            let w: Vec<f64> = (0..branching).map(|_| Exp1.sample(&mut rng)).collect();
            let total: f64 = w.iter().sum();
            for (j, wj) in idx.iter().zip(&w) {
                row[j] = wj / total;
            }
            // Normalising may leave the row a few ulps from 1.
            let s: f64 = row.iter().sum();
            let k = idx.index(0);
            row[k] += 1.0 - s;
        }
    }
    let cost = (0..n * m).map(|_| rng.random::<f64>()).collect();
    TabularMdp::new(n, m, 0.9, cost, p)
}

/// Five states, two actions, ϑ = 0.5, every transition probability in
/// `[0.15, 0.35]`. Any zero-sum ℓ2 region of radius ≤ 0.16 stays inside the
/// simplex around every row, so proxy and true uncertainty sets coincide.
pub fn interior_fixture() -> TabularMdp {
    let circulant = |first: [f64; 5]| -> Vec<Vec<f64>> {
        (0..5).map(|i| (0..5).map(|j| first[(j + 5 - i) % 5]).collect()).collect()
    };
    let p0 = circulant([0.30, 0.25, 0.15, 0.15, 0.15]);
    let p1 = circulant([0.20, 0.15, 0.15, 0.15, 0.35]);
    let cost = vec![
        vec![0.0, 0.5],
        vec![1.0, 0.4],
        vec![2.0, 1.2],
        vec![1.5, 0.8],
        vec![0.2, 1.0],
    ];
    TabularMdp::from_tables(0.5, &cost, &[p0, p1]).expect("fixture is valid")
}

/// A two-state, one-action MDP with uniform rows, costs (1, 0) and ϑ = 0.5.
pub fn two_state_fixture() -> TabularMdp {
    TabularMdp::from_tables(0.5, &[vec![1.0], vec![0.0]], &[vec![vec![0.5, 0.5], vec![0.5, 0.5]]])
        .expect("fixture is valid")
}
