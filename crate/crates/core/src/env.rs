//! Deterministic episodic tasks exposed as afterstate lists, with tabular
//! optimal-value oracles.

use thiserror::Error;

use crate::config::EnvConfig;
use crate::network::Network;

pub type State = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Successor {
    State(State),
    Terminal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Afterstate {
    pub action: usize,
    pub successor: Successor,
    pub reward: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("state {0} is terminal and has no afterstates")]
    Terminal(State),
    #[error("environment '{0}' cannot enumerate its states")]
    Enumeration(String),
    #[error("unknown environment '{0}' (expected chain, xor or grid)")]
    Unknown(String),
}

/// A deterministic task. States are caller-owned indices.
pub trait Environment: Sync {
    fn name(&self) -> &str;

    /// Length of every feature vector.
    fn input_count(&self) -> usize;

    /// Start state of the given episode.
    fn initial_state(&self, episode: usize) -> State;

    /// Legal moves from a non-terminal state, in action order.
    fn afterstates(&self, state: State) -> Result<Vec<Afterstate>, EnvError>;

    /// Network input for a state; `None` for states that are never valued.
    fn features(&self, state: State) -> Option<Vec<f64>>;

    /// Every non-terminal state, in a fixed order.
    fn states(&self) -> Result<Vec<State>, EnvError>;

    /// Whether the greedy policy of `net` solves the task.
    fn success(&self, net: &Network, gamma: f64, max_steps: usize) -> bool;
}

/// Value of a successor under `net`; terminals and featureless states are 0.
pub fn successor_value(env: &dyn Environment, net: &Network, s: Successor) -> f64 {
    match s {
        Successor::Terminal => 0.0,
        Successor::State(x) => env
            .features(x)
            .map(|f| net.forward(&f).expect("feature length matches network"))
            .unwrap_or(0.0),
    }
}

/// Index into `options` of the afterstate maximizing `R + gamma V(x')`,
/// lowest index on ties.
pub fn greedy_choice(env: &dyn Environment, net: &Network, options: &[Afterstate], gamma: f64) -> usize {
    let mut best = 0;
    let mut best_q = f64::NEG_INFINITY;
    for (k, a) in options.iter().enumerate() {
        let q = a.reward + gamma * successor_value(env, net, a.successor);
        if q > best_q {
            best_q = q;
            best = k;
        }
    }
    best
}

/// Follows the greedy policy from `start`; returns the rewards collected
/// and whether a terminal was reached within `max_steps`.
pub fn greedy_rollout(
    env: &dyn Environment,
    net: &Network,
    start: State,
    gamma: f64,
    max_steps: usize,
) -> (Vec<f64>, bool) {
    let mut rewards = Vec::new();
    let mut state = start;
    for _ in 0..max_steps {
        let options = env.afterstates(state).expect("rollout stays on non-terminal states");
        let a = options[greedy_choice(env, net, &options, gamma)];
        rewards.push(a.reward);
        match a.successor {
            Successor::Terminal => return (rewards, true),
            Successor::State(s) => state = s,
        }
    }
    (rewards, false)
}

/// Optimal state values by value iteration, iterated until the largest
/// change falls below 1e-12. Returned in the order of `env.states()`.
pub fn optimal_values(env: &dyn Environment, gamma: f64) -> Result<Vec<(State, f64)>, EnvError> {
    let states = env.states()?;
    let index = |s: State| states.iter().position(|&x| x == s);
    let mut v = vec![0.0; states.len()];
    loop {
        let mut change: f64 = 0.0;
        for (k, &s) in states.iter().enumerate() {
            let best = env
                .afterstates(s)?
                .iter()
                .map(|a| {
                    let next = match a.successor {
                        Successor::Terminal => 0.0,
                        Successor::State(x) => index(x).map_or(0.0, |j| v[j]),
                    };
                    a.reward + gamma * next
                })
                .fold(f64::NEG_INFINITY, f64::max);
            change = change.max((best - v[k]).abs());
            v[k] = best;
        }
        if change < 1e-12 {
            break;
        }
    }
    Ok(states.into_iter().zip(v).collect())
}

fn one_hot(len: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[k] = 1.0;
    v
}

/// Corridor of `length` cells with terminals at both ends. Every move costs
/// 1; entering the right end adds 10, entering the left end adds 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainMdp {
    pub length: usize,
    pub start: State,
}

impl ChainMdp {
    pub const RIGHT_BONUS: f64 = 10.0;
    pub const LEFT_BONUS: f64 = 1.0;

    pub fn new(length: usize, start: Option<State>) -> Self {
        assert!(length >= 3, "a chain needs at least one non-terminal state");
        let start = start.unwrap_or(length / 2);
        assert!(start > 0 && start < length - 1, "start must be non-terminal");
        Self { length, start }
    }

    fn is_terminal(&self, s: State) -> bool {
        s == 0 || s == self.length - 1
    }

    fn step(&self, to: State) -> Afterstate {
        let (successor, bonus) = if to == 0 {
            (Successor::Terminal, Self::LEFT_BONUS)
        } else if to == self.length - 1 {
            (Successor::Terminal, Self::RIGHT_BONUS)
        } else {
            (Successor::State(to), 0.0)
        };
        Afterstate { action: 0, successor, reward: -1.0 + bonus }
    }
}

impl Environment for ChainMdp {
    fn name(&self) -> &str {
        "chain"
    }

    fn input_count(&self) -> usize {
        self.length
    }

    fn initial_state(&self, _episode: usize) -> State {
        self.start
    }

    fn afterstates(&self, state: State) -> Result<Vec<Afterstate>, EnvError> {
        if self.is_terminal(state) {
            return Err(EnvError::Terminal(state));
        }
        let left = self.step(state - 1);
        let right = Afterstate { action: 1, ..self.step(state + 1) };
        Ok(vec![left, right])
    }

    fn features(&self, state: State) -> Option<Vec<f64>> {
        Some(one_hot(self.length, state))
    }

    fn states(&self) -> Result<Vec<State>, EnvError> {
        Ok((1..self.length - 1).collect())
    }

    fn success(&self, net: &Network, gamma: f64, max_steps: usize) -> bool {
        let (rewards, done) = greedy_rollout(self, net, self.start, gamma, max_steps);
        done && rewards.last() == Some(&(-1.0 + Self::RIGHT_BONUS))
    }
}

/// Two-input exclusive-or posed as a two-step episode. The agent sees a
/// context, commits to an answer (reward 0), and the committed
/// (context, answer) state then pays +1 for the XOR of the context and -1
/// otherwise. Context states carry no features; answered states are valued
/// on `(c1, c2, answer)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct XorBandit;

impl XorBandit {
    pub const CONTEXTS: [(u8, u8); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

    /// State reached after answering `answer` in context `c`.
    pub fn answered(c: usize, answer: usize) -> State {
        4 + 2 * c + answer
    }

    fn payoff(c: usize, answer: usize) -> f64 {
        let (a, b) = Self::CONTEXTS[c];
        if usize::from(a ^ b) == answer {
            1.0
        } else {
            -1.0
        }
    }
}

impl Environment for XorBandit {
    fn name(&self) -> &str {
        "xor"
    }

    fn input_count(&self) -> usize {
        3
    }

    fn initial_state(&self, episode: usize) -> State {
        let mut order = [0, 1, 2, 3];
        let mut h = splitmix64(episode as u64 / 4);
        for i in (1..4).rev() {
            order.swap(i, (h % (i as u64 + 1)) as usize);
            h /= i as u64 + 1;
        }
        order[episode % 4]
    }

    fn afterstates(&self, state: State) -> Result<Vec<Afterstate>, EnvError> {
        match state {
            0..4 => Ok((0..2)
                .map(|a| Afterstate { action: a, successor: Successor::State(Self::answered(state, a)), reward: 0.0 })
                .collect()),
            4..12 => {
                let (c, a) = ((state - 4) / 2, (state - 4) % 2);
                Ok(vec![Afterstate { action: 0, successor: Successor::Terminal, reward: Self::payoff(c, a) }])
            }
            _ => Err(EnvError::Terminal(state)),
        }
    }

    fn features(&self, state: State) -> Option<Vec<f64>> {
        match state {
            4..12 => {
                let (c, a) = ((state - 4) / 2, (state - 4) % 2);
                let (x, y) = Self::CONTEXTS[c];
                Some(vec![f64::from(x), f64::from(y), a as f64])
            }
            _ => None,
        }
    }

    fn states(&self) -> Result<Vec<State>, EnvError> {
        Ok((0..12).collect())
    }

    fn success(&self, net: &Network, gamma: f64, _max_steps: usize) -> bool {
        (0..4).all(|c| {
            let options = self.afterstates(c).expect("context is non-terminal");
            let k = greedy_choice(self, net, &options, gamma);
            Self::payoff(c, options[k].action) > 0.0
        })
    }
}

/// `width x height` grid starting in the top-left corner with the goal in
/// the bottom-right corner. Moves that would leave the grid stay put; every
/// move costs 1 and entering the goal pays 10 instead.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    pub width: usize,
    pub height: usize,
    pub goal: (usize, usize),
}

impl GridWorld {
    pub const GOAL_REWARD: f64 = 10.0;
    /// (dx, dy) for up, right, down, left.
    const MOVES: [(isize, isize); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];

    pub fn new(width: usize, height: usize) -> Self {
        assert!(width * height >= 2, "grid needs a start and a goal");
        Self { width, height, goal: (width - 1, height - 1) }
    }

    fn coords(&self, s: State) -> (usize, usize) {
        (s % self.width, s / self.width)
    }

    fn index(&self, x: usize, y: usize) -> State {
        y * self.width + x
    }

    fn is_goal(&self, s: State) -> bool {
        self.coords(s) == self.goal
    }
}

impl Environment for GridWorld {
    fn name(&self) -> &str {
        "grid"
    }

    fn input_count(&self) -> usize {
        4
    }

    fn initial_state(&self, _episode: usize) -> State {
        0
    }

    fn afterstates(&self, state: State) -> Result<Vec<Afterstate>, EnvError> {
        if self.is_goal(state) || state >= self.width * self.height {
            return Err(EnvError::Terminal(state));
        }
        let (x, y) = self.coords(state);
        Ok(Self::MOVES
            .iter()
            .enumerate()
            .map(|(action, &(dx, dy))| {
                let nx = x.checked_add_signed(dx).filter(|&v| v < self.width).unwrap_or(x);
                let ny = y.checked_add_signed(dy).filter(|&v| v < self.height).unwrap_or(y);
                let next = self.index(nx, ny);
                if self.is_goal(next) {
                    Afterstate { action, successor: Successor::Terminal, reward: Self::GOAL_REWARD }
                } else {
                    Afterstate { action, successor: Successor::State(next), reward: -1.0 }
                }
            })
            .collect())
    }

    fn features(&self, state: State) -> Option<Vec<f64>> {
        let (x, y) = self.coords(state);
        let (w, h) = (self.width as f64, self.height as f64);
        let (gx, gy) = (self.goal.0 as f64, self.goal.1 as f64);
        Some(vec![x as f64 / w, y as f64 / h, (gx - x as f64) / w, (gy - y as f64) / h])
    }

    fn states(&self) -> Result<Vec<State>, EnvError> {
        Ok((0..self.width * self.height).filter(|&s| !self.is_goal(s)).collect())
    }

    fn success(&self, net: &Network, gamma: f64, max_steps: usize) -> bool {
        let (rewards, done) = greedy_rollout(self, net, 0, gamma, max_steps);
        done && rewards.last() == Some(&Self::GOAL_REWARD)
    }
}

/// Forced walk s0 -> s1 -> terminal costing 1 per step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ForcedChain;

impl Environment for ForcedChain {
    fn name(&self) -> &str {
        "forced"
    }

    fn input_count(&self) -> usize {
        2
    }

    fn initial_state(&self, _episode: usize) -> State {
        0
    }

    fn afterstates(&self, state: State) -> Result<Vec<Afterstate>, EnvError> {
        let successor = match state {
            0 => Successor::State(1),
            1 => Successor::Terminal,
            _ => return Err(EnvError::Terminal(state)),
        };
        Ok(vec![Afterstate { action: 0, successor, reward: -1.0 }])
    }

    fn features(&self, state: State) -> Option<Vec<f64>> {
        (state < 2).then(|| one_hot(2, state))
    }

    fn states(&self) -> Result<Vec<State>, EnvError> {
        Ok(vec![0, 1])
    }

    fn success(&self, _net: &Network, _gamma: f64, _max_steps: usize) -> bool {
        true
    }
}

/// Environment selected by configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvKind {
    Chain(ChainMdp),
    Xor(XorBandit),
    Grid(GridWorld),
}

impl EnvKind {
    pub fn from_config(cfg: &EnvConfig) -> Result<Self, EnvError> {
        match cfg.name.as_str() {
            "chain" => Ok(Self::Chain(ChainMdp::new(cfg.length, cfg.start))),
            "xor" => Ok(Self::Xor(XorBandit)),
            "grid" => Ok(Self::Grid(GridWorld::new(cfg.width, cfg.height))),
            other => Err(EnvError::Unknown(other.to_string())),
        }
    }

    pub fn as_dyn(&self) -> &dyn Environment {
        match self {
            Self::Chain(e) => e,
            Self::Xor(e) => e,
            Self::Grid(e) => e,
        }
    }
}


fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
