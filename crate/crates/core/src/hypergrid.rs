//! The hypergrid DAG: a `D`-dimensional lattice of side `H` walked from the
//! origin by unit increments until a terminate action.
//!
//! Cells are addressed by a flat index `Σ_d s_d H^d`, so every increment moves
//! to a strictly larger index and ascending index order is a topological order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `H^D` for which exact distributions are computed.
pub const EXACT_CELL_CAP: f64 = 1e6;
/// Largest trajectory count [`HypergridEnv::enumerate_trajectories`] will produce.
pub const TRAJECTORY_CAP: f64 = 1e6;
/// Cells with reward above this threshold are mode cells.
pub const MODE_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Increment(usize),
    Terminate,
}

impl Action {
    /// Dense index: increments are `0..D`, terminate is `D`.
    pub fn index(self, d: usize) -> usize {
        match self {
            Action::Increment(i) => i,
            Action::Terminate => d,
        }
    }

    pub fn from_index(i: usize, d: usize) -> Self {
        if i == d {
            Action::Terminate
        } else {
            Action::Increment(i)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridState {
    pub coords: Vec<usize>,
    pub terminal: bool,
}

impl GridState {
    pub fn new(coords: Vec<usize>) -> Self {
        Self {
            coords,
            terminal: false,
        }
    }
}

/// A complete trajectory: the visited cells from the origin to the terminal
/// cell (flat indices) and the actions taken, the last being terminate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<Action>,
}

impl Trajectory {
    pub fn terminal(&self) -> usize {
        *self
            .states
            .last()
            .expect("trajectory has at least the initial state")
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnvSpec", into = "EnvSpec")]
pub struct HypergridEnv {
    d: usize,
    h: usize,
    r0: f64,
    strides: Vec<usize>,
    num_states: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvSpec {
    d: usize,
    h: usize,
    r0: f64,
}

impl TryFrom<EnvSpec> for HypergridEnv {
    type Error = Error;

    fn try_from(s: EnvSpec) -> Result<Self> {
        HypergridEnv::new(s.d, s.h, s.r0)
    }
}

impl From<HypergridEnv> for EnvSpec {
    fn from(e: HypergridEnv) -> Self {
        EnvSpec {
            d: e.d,
            h: e.h,
            r0: e.r0,
        }
    }
}

impl HypergridEnv {
    pub fn new(d: usize, h: usize, r0: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("hypergrid dimension must be positive".into()));
        }
        if h < 2 {
            return Err(Error::Config(format!(
                "hypergrid side must be at least 2, got {h}"
            )));
        }
        if !(r0.is_finite() && r0 > 0.0) {
            return Err(Error::Config(format!(
                "background reward must be positive, got {r0}"
            )));
        }
        let mut strides = Vec::with_capacity(d);
        let mut n: usize = 1;
        for _ in 0..d {
            strides.push(n);
            n = n
                .checked_mul(h)
                .ok_or_else(|| Error::Config(format!("hypergrid {h}^{d} is too large to index")))?;
        }
        Ok(Self {
            d,
            h,
            r0,
            strides,
            num_states: n,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.d + 1
    }

    pub fn initial(&self) -> usize {
        0
    }

    pub fn coord(&self, s: usize, dim: usize) -> usize {
        (s / self.strides[dim]) % self.h
    }

    pub fn coords(&self, s: usize) -> Vec<usize> {
        (0..self.d).map(|i| self.coord(s, i)).collect()
    }

    pub fn index(&self, state: &GridState) -> Result<usize> {
        self.check(state)?;
        Ok(state
            .coords
            .iter()
            .zip(&self.strides)
            .map(|(c, s)| c * s)
            .sum())
    }

    pub fn state(&self, s: usize) -> GridState {
        GridState::new(self.coords(s))
    }

    fn check(&self, state: &GridState) -> Result<()> {
        if state.coords.len() != self.d {
            return Err(Error::InvalidState(format!(
                "expected {} coordinates, got {}",
                self.d,
                state.coords.len()
            )));
        }
        if let Some(c) = state.coords.iter().find(|&&c| c >= self.h) {
            return Err(Error::InvalidState(format!(
                "coordinate {c} outside [0, {}]",
                self.h - 1
            )));
        }
        Ok(())
    }

    /// `R0 + 0.5·[all deviations in (0.25, 0.5]] + 2·[all deviations in (0.3, 0.4)]`
    /// with deviation `|s_d/(H-1) - 0.5|`, compared exactly.
    pub fn reward(&self, state: &GridState) -> Result<f64> {
        Ok(self.reward_at(self.index(state)?))
    }

    pub fn reward_at(&self, s: usize) -> f64 {
        let mut outer = true;
        let mut inner = true;
        let side = (self.h - 1) as f64;
        for i in 0..self.d {
            let dev = (self.coord(s, i) as f64 / side - 0.5).abs();
            outer &= dev > 0.25 && dev <= 0.5;
            inner &= dev > 0.3 && dev < 0.4;
        }
        self.r0 + if outer { 0.5 } else { 0.0 } + if inner { 2.0 } else { 0.0 }
    }

    pub fn log_rewards(&self) -> Vec<f64> {
        (0..self.num_states)
            .map(|s| self.reward_at(s).ln())
            .collect()
    }

    pub fn can_increment(&self, s: usize, dim: usize) -> bool {
        self.coord(s, dim) + 1 < self.h
    }

    /// The child reached by incrementing `dim`; the caller checks legality.
    pub fn child(&self, s: usize, dim: usize) -> usize {
        s + self.strides[dim]
    }

    pub fn allowed_actions(&self, state: &GridState) -> Result<Vec<Action>> {
        if state.terminal {
            return Err(Error::InvalidState(
                "terminal states have no actions".into(),
            ));
        }
        let s = self.index(state)?;
        Ok(self.allowed_at(s))
    }

    pub fn allowed_at(&self, s: usize) -> Vec<Action> {
        (0..self.d)
            .filter(|&i| self.can_increment(s, i))
            .map(Action::Increment)
            .chain(std::iter::once(Action::Terminate))
            .collect()
    }

    /// Cells one decrement away, paired with the increment that leads back.
    pub fn parents(&self, state: &GridState) -> Result<Vec<(GridState, Action)>> {
        if state.terminal {
            return Err(Error::InvalidState(
                "terminal states have no parents in the DAG".into(),
            ));
        }
        let s = self.index(state)?;
        Ok(self
            .parents_at(s)
            .into_iter()
            .map(|(p, a)| (self.state(p), a))
            .collect())
    }

    pub fn parents_at(&self, s: usize) -> Vec<(usize, Action)> {
        (0..self.d)
            .filter(|&i| self.coord(s, i) > 0)
            .map(|i| (s - self.strides[i], Action::Increment(i)))
            .collect()
    }

    pub fn num_parents(&self, s: usize) -> usize {
        (0..self.d).filter(|&i| self.coord(s, i) > 0).count()
    }

    pub fn check_exact_cap(&self) -> Result<()> {
        let cells = (self.h as f64).powi(self.d as i32);
        if cells > EXACT_CELL_CAP {
            Err(Error::CapExceeded {
                count: cells,
                cap: EXACT_CELL_CAP,
            })
        } else {
            Ok(())
        }
    }

    /// `p_⋆(x) = R(x)/Σ R`, indexed by flat cell index.
    pub fn exact_target_distribution(&self) -> Result<Vec<f64>> {
        self.check_exact_cap()?;
        let r: Vec<f64> = (0..self.num_states).map(|s| self.reward_at(s)).collect();
        let total = crate::numeric::compensated_sum(r.iter().copied());
        Ok(r.into_iter().map(|x| x / total).collect())
    }

    /// Number of complete trajectories (paths from the origin, times one
    /// terminate per cell).
    pub fn trajectory_count(&self) -> Result<f64> {
        self.check_exact_cap()?;
        let mut paths = vec![0.0f64; self.num_states];
        paths[0] = 1.0;
        for s in 1..self.num_states {
            paths[s] = self.parents_at(s).iter().map(|&(p, _)| paths[p]).sum();
        }
        Ok(paths.iter().sum())
    }

    /// Every complete trajectory exactly once.
    pub fn enumerate_trajectories(&self) -> Result<Vec<Trajectory>> {
        let count = self.trajectory_count()?;
        if count > TRAJECTORY_CAP {
            return Err(Error::CapExceeded {
                count,
                cap: TRAJECTORY_CAP,
            });
        }
        let mut out = Vec::with_capacity(count as usize);
        let mut states = vec![0usize];
        let mut actions = Vec::new();
        self.extend(&mut states, &mut actions, &mut out);
        Ok(out)
    }

    fn extend(
        &self,
        states: &mut Vec<usize>,
        actions: &mut Vec<Action>,
        out: &mut Vec<Trajectory>,
    ) {
        let s = *states.last().expect("non-empty path");
        let mut done = actions.clone();
        done.push(Action::Terminate);
        out.push(Trajectory {
            states: states.clone(),
            actions: done,
        });
        for i in 0..self.d {
            if self.can_increment(s, i) {
                states.push(self.child(s, i));
                actions.push(Action::Increment(i));
                self.extend(states, actions, out);
                states.pop();
                actions.pop();
            }
        }
    }

    /// Checks that `traj` starts at the origin, follows legal increments and
    /// ends with a single terminate.
    pub fn validate(&self, traj: &Trajectory) -> Result<()> {
        let bad = |m: String| Err(Error::IllegalTrajectory(m));
        if traj.actions.last() != Some(&Action::Terminate) {
            return bad("trajectory must end with terminate".into());
        }
        if traj.states.len() != traj.actions.len() || traj.states.first() != Some(&0) {
            return bad("states must start at the origin and match the actions".into());
        }
        for (k, a) in traj.actions[..traj.actions.len() - 1].iter().enumerate() {
            let s = traj.states[k];
            match *a {
                Action::Increment(i) if i < self.d && self.can_increment(s, i) => {
                    if traj.states[k + 1] != self.child(s, i) {
                        return bad(format!("state {} does not follow action {k}", k + 1));
                    }
                }
                _ => return bad(format!("action {k} ({a:?}) is illegal at cell {s}")),
            }
        }
        if traj.states.iter().any(|&s| s >= self.num_states) {
            return bad("cell index out of range".into());
        }
        Ok(())
    }

    /// Build a trajectory from a dense action sequence.
    pub fn trajectory_from_actions(&self, actions: &[Action]) -> Result<Trajectory> {
        let mut states = vec![0usize];
        for a in actions.iter().take(actions.len().saturating_sub(1)) {
            let s = *states.last().expect("non-empty");
            match *a {
                Action::Increment(i) if i < self.d && self.can_increment(s, i) => {
                    states.push(self.child(s, i))
                }
                _ => {
                    return Err(Error::IllegalTrajectory(format!(
                        "action {a:?} illegal at cell {s}"
                    )))
                }
            }
        }
        let t = Trajectory {
            states,
            actions: actions.to_vec(),
        };
        self.validate(&t)?;
        Ok(t)
    }

    pub fn is_mode(&self, s: usize) -> bool {
        self.reward_at(s) > MODE_THRESHOLD
    }

    /// Labels each cell with its mode region (a connected component of mode
    /// cells under unit-step adjacency), or `None`. Returns the labels and
    /// the number of regions.
    pub fn mode_regions(&self) -> (Vec<Option<usize>>, usize) {
        let mut label = vec![None; self.num_states];
        let mut regions = 0;
        let mut stack = Vec::new();
        for start in 0..self.num_states {
            if label[start].is_some() || !self.is_mode(start) {
                continue;
            }
            label[start] = Some(regions);
            stack.push(start);
            while let Some(s) = stack.pop() {
                for i in 0..self.d {
                    let mut nbrs = [None, None];
                    if self.coord(s, i) > 0 {
                        nbrs[0] = Some(s - self.strides[i]);
                    }
                    if self.can_increment(s, i) {
                        nbrs[1] = Some(s + self.strides[i]);
                    }
                    for n in nbrs.into_iter().flatten() {
                        if label[n].is_none() && self.is_mode(n) {
                            label[n] = Some(regions);
                            stack.push(n);
                        }
                    }
                }
            }
            regions += 1;
        }
        (label, regions)
    }
}
