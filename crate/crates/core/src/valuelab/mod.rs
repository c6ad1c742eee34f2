//! Exact value functions of the four planner families on finite games.
//!
//! A game has `T` steps. At every step the robot and the human act
//! simultaneously; the human's first action has a fixed distribution and
//! later ones follow the full conditional `p(h_t | r_<t, h_<t)` (the
//! "green" operator). The "orange" operator drops the robot history by
//! marginalizing it out under a robot prior. Returns are defined on whole
//! joint sequences.
//!
//! | planner | robot decisions | human model |
//! |---------|-----------------|-------------|
//! | NL (no leader) | open loop | orange |
//! | RL (robot leader) | open loop | green |
//! | HL (human leader) | contingent | orange |
//! | CL (co-leader) | contingent | green |

#[cfg(test)]
mod tests;

use alloc::vec;
use alloc::vec::Vec;

use crate::domain::RngStream;

/// Enumeration guard for the T-step recursion.
pub const MAX_HORIZON: usize = 5;
pub const MAX_ACTIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ValueError {
    #[error("invalid game: {0}")]
    Invalid(&'static str),
    #[error("conditional row {row} at step {t} sums to {sum}")]
    Unnormalized { t: usize, row: usize, sum: f64 },
    #[error("game horizon {horizon} exceeds the guard (T <= {MAX_HORIZON}, actions <= {MAX_ACTIONS})")]
    Guard { horizon: usize },
    #[error("two-step form needs horizon 2, game has {0}")]
    NotTwoStep(usize),
    #[error("robot action {action} out of range {size}")]
    Action { action: usize, size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PlannerKind {
    NoLeader,
    RobotLeader,
    HumanLeader,
    CoLeader,
}

impl PlannerKind {
    pub const ALL: [PlannerKind; 4] = [PlannerKind::NoLeader, PlannerKind::RobotLeader, PlannerKind::HumanLeader, PlannerKind::CoLeader];

    pub fn as_str(self) -> &'static str {
        match self {
            PlannerKind::NoLeader => "NL",
            PlannerKind::RobotLeader => "RL",
            PlannerKind::HumanLeader => "HL",
            PlannerKind::CoLeader => "CL",
        }
    }

    fn contingent(self) -> bool {
        matches!(self, PlannerKind::HumanLeader | PlannerKind::CoLeader)
    }

    fn active(self) -> bool {
        matches!(self, PlannerKind::RobotLeader | PlannerKind::CoLeader)
    }
}

/// Tabular two-player game. Joint sequences are indexed in mixed radix
/// over the interleaved slots `(r_0, h_0, r_1, h_1, ...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteGame {
    robot_sizes: Vec<usize>,
    human_sizes: Vec<usize>,
    /// `p(h_0)`.
    first: Vec<f64>,
    /// `green[t - 1][joint prefix index of (r_<t, h_<t)]` is `p(h_t | .)`.
    green: Vec<Vec<Vec<f64>>>,
    /// Robot prior per step for the orange operator.
    robot_prior: Vec<Vec<f64>>,
    returns: Vec<f64>,
}

fn check_row(row: &[f64], t: usize, index: usize) -> Result<(), ValueError> {
    let sum: f64 = row.iter().sum();
    if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) || (sum - 1.0).abs() > 1e-9 {
        return Err(ValueError::Unnormalized { t, row: index, sum });
    }
    Ok(())
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn dirichlet(rng: &mut RngStream, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.exp1()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

impl FiniteGame {
    /// Validates and builds a game with a uniform robot prior.
    pub fn new(robot_sizes: Vec<usize>, human_sizes: Vec<usize>, first: Vec<f64>, green: Vec<Vec<Vec<f64>>>, returns: Vec<f64>) -> Result<Self, ValueError> {
        let horizon = robot_sizes.len();
        if horizon == 0 || human_sizes.len() != horizon {
            return Err(ValueError::Invalid("robot and human action sets need one entry per step"));
        }
        if robot_sizes.iter().chain(&human_sizes).any(|&s| s == 0) {
            return Err(ValueError::Invalid("action sets must be non-empty"));
        }
        if first.len() != human_sizes[0] {
            return Err(ValueError::Invalid("first human distribution has the wrong size"));
        }
        check_row(&first, 0, 0)?;
        if green.len() != horizon - 1 {
            return Err(ValueError::Invalid("need one conditional table per step after the first"));
        }
        let mut prefixes = robot_sizes[0] * human_sizes[0];
        for t in 1..horizon {
            let table = &green[t - 1];
            if table.len() != prefixes || table.iter().any(|r| r.len() != human_sizes[t]) {
                return Err(ValueError::Invalid("conditional table has the wrong shape"));
            }
            for (i, row) in table.iter().enumerate() {
                check_row(row, t, i)?;
            }
            prefixes *= robot_sizes[t] * human_sizes[t];
        }
        if returns.len() != prefixes || returns.iter().any(|r| !r.is_finite()) {
            return Err(ValueError::Invalid("return table must be finite with one entry per joint sequence"));
        }
        let robot_prior = robot_sizes.iter().map(|&n| uniform(n)).collect();
        Ok(FiniteGame { robot_sizes, human_sizes, first, green, robot_prior, returns })
    }

    /// Replaces the robot prior used by the orange operator.
    pub fn with_robot_prior(mut self, prior: Vec<Vec<f64>>) -> Result<Self, ValueError> {
        if prior.len() != self.horizon() || prior.iter().zip(&self.robot_sizes).any(|(p, &n)| p.len() != n) {
            return Err(ValueError::Invalid("robot prior needs one distribution per step"));
        }
        for (t, p) in prior.iter().enumerate() {
            check_row(p, t, 0)?;
        }
        self.robot_prior = prior;
        Ok(self)
    }

    /// Random game: Dirichlet(1, ..., 1) conditionals and returns uniform
    /// in `[-1, 1]` plus a perturbation below `1e-6`.
    pub fn random(rng: &mut RngStream, robot_sizes: Vec<usize>, human_sizes: Vec<usize>) -> Result<Self, ValueError> {
        let horizon = robot_sizes.len();
        if horizon == 0 || human_sizes.len() != horizon {
            return Err(ValueError::Invalid("robot and human action sets need one entry per step"));
        }
        let first = dirichlet(rng, human_sizes[0]);
        let mut green = Vec::with_capacity(horizon - 1);
        let mut prefixes = robot_sizes[0] * human_sizes[0];
        for t in 1..horizon {
            green.push((0..prefixes).map(|_| dirichlet(rng, human_sizes[t])).collect());
            prefixes *= robot_sizes[t] * human_sizes[t];
        }
        let returns = (0..prefixes).map(|_| rng.uniform_range(-1.0, 1.0) + 1e-6 * rng.uniform()).collect();
        FiniteGame::new(robot_sizes, human_sizes, first, green, returns)
    }

    pub fn horizon(&self) -> usize {
        self.robot_sizes.len()
    }

    pub fn robot_actions(&self, t: usize) -> usize {
        self.robot_sizes[t]
    }

    pub fn human_actions(&self, t: usize) -> usize {
        self.human_sizes[t]
    }

    /// Copy with every return mapped through `f`.
    pub fn map_returns(&self, f: impl Fn(f64) -> f64) -> FiniteGame {
        let mut g = self.clone();
        g.returns.iter_mut().for_each(|r| *r = f(*r));
        g
    }

    fn joint_index(&self, r: &[usize], h: &[usize]) -> usize {
        let mut idx = 0;
        for (t, (&a, &b)) in r.iter().zip(h).enumerate() {
            idx = (idx * self.robot_sizes[t] + a) * self.human_sizes[t] + b;
        }
        idx
    }

    fn human_index(&self, h: &[usize]) -> usize {
        h.iter().zip(&self.human_sizes).fold(0, |acc, (&b, &n)| acc * n + b)
    }

    pub fn return_of(&self, r: &[usize], h: &[usize]) -> f64 {
        self.returns[self.joint_index(r, h)]
    }

    /// Green operator `p(h_t | r_<t, h_<t)`.
    pub fn green(&self, r: &[usize], h: &[usize]) -> &[f64] {
        match h.len() {
            0 => &self.first,
            t => &self.green[t - 1][self.joint_index(&r[..t], h)],
        }
    }

    fn guard(&self) -> Result<(), ValueError> {
        if self.horizon() > MAX_HORIZON || self.robot_sizes.iter().chain(&self.human_sizes).any(|&n| n > MAX_ACTIONS) {
            return Err(ValueError::Guard { horizon: self.horizon() });
        }
        Ok(())
    }
}

/// Every sequence over `0..radices[i]`, lexicographic.
fn sequences(radices: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &n in radices {
        out = out.into_iter().flat_map(|p| (0..n).map(move |x| [p.as_slice(), &[x]].concat())).collect();
    }
    out
}

/// The orange operator: `p(h_t | h_<t)` for `t = 1..T`, indexed by the
/// human history in mixed radix. Robot histories are weighted by the
/// robot prior times the likelihood of the observed human history, so the
/// table is the exact marginal of the joint under that prior. At `t = 1`
/// the first human action carries no information and the weights are the
/// prior itself. Human histories impossible under every robot history fall
/// back to prior weights.
#[derive(Debug, Clone, PartialEq)]
pub struct OrangeTable {
    pub rows: Vec<Vec<Vec<f64>>>,
    human_sizes: Vec<usize>,
}

impl OrangeTable {
    /// `p(h_t | h_<t)`; `h` holds `h_<t`.
    pub fn row(&self, h: &[usize]) -> &[f64] {
        let idx = h.iter().zip(&self.human_sizes).fold(0, |acc, (&b, &n)| acc * n + b);
        &self.rows[h.len() - 1][idx]
    }
}

pub fn orange_conditional(game: &FiniteGame) -> Result<OrangeTable, ValueError> {
    let horizon = game.horizon();
    let mut rows = Vec::with_capacity(horizon.saturating_sub(1));
    for t in 1..horizon {
        let robot_histories = sequences(&game.robot_sizes[..t]);
        let human_histories = sequences(&game.human_sizes[..t]);
        let mut table = vec![Vec::new(); human_histories.len()];
        for h in &human_histories {
            let prior: Vec<f64> = robot_histories.iter().map(|r| r.iter().enumerate().map(|(s, &a)| game.robot_prior[s][a]).product()).collect();
            let like: Vec<f64> = robot_histories.iter().map(|r| (1..t).map(|s| game.green(r, &h[..s])[h[s]]).product()).collect();
            let mut w: Vec<f64> = prior.iter().zip(&like).map(|(p, l)| p * l).collect();
            if w.iter().sum::<f64>() <= 0.0 {
                w = prior;
            }
            let total: f64 = w.iter().sum();
            let mut row = vec![0.0; game.human_sizes[t]];
            for (r, wr) in robot_histories.iter().zip(&w) {
                for (x, p) in row.iter_mut().zip(game.green(r, h)) {
                    *x += wr / total * p;
                }
            }
            check_row(&row, t, game.human_index(h))?;
            table[game.human_index(h)] = row;
        }
        rows.push(table);
    }
    Ok(OrangeTable { rows, human_sizes: game.human_sizes.clone() })
}

struct Evaluator<'a> {
    game: &'a FiniteGame,
    orange: Option<OrangeTable>,
}

impl<'a> Evaluator<'a> {
    fn new(game: &'a FiniteGame, kind: PlannerKind) -> Result<Self, ValueError> {
        let orange = if kind.active() { None } else { Some(orange_conditional(game)?) };
        Ok(Evaluator { game, orange })
    }

    fn human(&self, r: &[usize], h: &[usize]) -> &[f64] {
        match (&self.orange, h.len()) {
            (Some(o), t) if t > 0 => o.row(h),
            _ => self.game.green(r, h),
        }
    }

    /// Expected return of a fixed robot sequence `r`.
    fn open_loop(&self, r: &[usize], h: &mut Vec<usize>) -> f64 {
        let t = h.len();
        if t == self.game.horizon() {
            return self.game.return_of(r, h);
        }
        let row = self.human(r, h).to_vec();
        let mut total = 0.0;
        for (x, p) in row.iter().enumerate() {
            if *p == 0.0 {
                continue;
            }
            h.push(x);
            total += p * self.open_loop(r, h);
            h.pop();
        }
        total
    }

    /// `E_{h_t} max_{r_{t+1}} E_{h_{t+1}} ...` with `r` holding `r_{<=t}`.
    fn contingent(&self, r: &mut Vec<usize>, h: &mut Vec<usize>) -> f64 {
        let t = h.len();
        let row = self.human(r, h).to_vec();
        let mut total = 0.0;
        for (x, p) in row.iter().enumerate() {
            if *p == 0.0 {
                continue;
            }
            h.push(x);
            let v = if t + 1 == self.game.horizon() {
                self.game.return_of(r, h)
            } else {
                let mut best = f64::NEG_INFINITY;
                for a in 0..self.game.robot_sizes[t + 1] {
                    r.push(a);
                    best = best.max(self.contingent(r, h));
                    r.pop();
                }
                best
            };
            h.pop();
            total += p * v;
        }
        total
    }

    fn q(&self, kind: PlannerKind, first: usize) -> f64 {
        if kind.contingent() {
            self.contingent(&mut vec![first], &mut Vec::new())
        } else {
            self.best_sequence(first).1
        }
    }

    /// Best open-loop robot sequence starting with `first` and its value;
    /// ties go to the lexicographically smallest sequence.
    fn best_sequence(&self, first: usize) -> (Vec<usize>, f64) {
        let mut best = (Vec::new(), f64::NEG_INFINITY);
        for tail in sequences(&self.game.robot_sizes[1..]) {
            let r: Vec<usize> = core::iter::once(first).chain(tail).collect();
            let v = self.open_loop(&r, &mut Vec::new());
            if v > best.1 {
                best = (r, v);
            }
        }
        best
    }
}

fn check_first(game: &FiniteGame, first: usize) -> Result<(), ValueError> {
    if first >= game.robot_sizes[0] {
        return Err(ValueError::Action { action: first, size: game.robot_sizes[0] });
    }
    Ok(())
}

/// `Q̂(x^r_1)` of `kind` by recursion over any horizon.
pub fn q_tstep(game: &FiniteGame, kind: PlannerKind, first: usize) -> Result<f64, ValueError> {
    game.guard()?;
    check_first(game, first)?;
    Ok(Evaluator::new(game, kind)?.q(kind, first))
}

fn two_step(game: &FiniteGame, first: usize) -> Result<(), ValueError> {
    if game.horizon() != 2 {
        return Err(ValueError::NotTwoStep(game.horizon()));
    }
    check_first(game, first)
}

/// `E_{h_2 | .}[return]` with the step-2 human law `p2`.
fn inner(game: &FiniteGame, r: [usize; 2], h1: usize, p2: &[f64]) -> f64 {
    p2.iter().enumerate().map(|(h2, p)| p * game.return_of(&r, &[h1, h2])).sum()
}

fn orange_two_step(game: &FiniteGame, h1: usize) -> Vec<f64> {
    // E_{r'_1 ~ prior}[p(h_2 | r'_1, h_1)]
    let mut row = vec![0.0; game.human_sizes[1]];
    for (rp, w) in game.robot_prior[0].iter().enumerate() {
        for (x, p) in row.iter_mut().zip(game.green(&[rp], &[h1])) {
            *x += w * p;
        }
    }
    row
}

fn max_over<F: Fn(usize) -> f64>(n: usize, f: F) -> f64 {
    (0..n).map(f).fold(f64::NEG_INFINITY, f64::max)
}

/// `max_{r_2} E_{h_1} E_{h_2 | h_1}[return]` (orange).
pub fn q_nl(game: &FiniteGame, first: usize) -> Result<f64, ValueError> {
    two_step(game, first)?;
    Ok(max_over(game.robot_sizes[1], |r2| {
        game.first.iter().enumerate().map(|(h1, p1)| p1 * inner(game, [first, r2], h1, &orange_two_step(game, h1))).sum()
    }))
}

/// `max_{r_2} E_{h_1} E_{h_2 | r_1, h_1}[return]` (green).
pub fn q_rl(game: &FiniteGame, first: usize) -> Result<f64, ValueError> {
    two_step(game, first)?;
    Ok(max_over(game.robot_sizes[1], |r2| {
        game.first.iter().enumerate().map(|(h1, p1)| p1 * inner(game, [first, r2], h1, game.green(&[first], &[h1]))).sum()
    }))
}

/// `E_{h_1} max_{r_2} E_{h_2 | h_1}[return]` (orange).
pub fn q_hl(game: &FiniteGame, first: usize) -> Result<f64, ValueError> {
    two_step(game, first)?;
    Ok(game
        .first
        .iter()
        .enumerate()
        .map(|(h1, p1)| {
            let p2 = orange_two_step(game, h1);
            p1 * max_over(game.robot_sizes[1], |r2| inner(game, [first, r2], h1, &p2))
        })
        .sum())
}

/// `E_{h_1} max_{r_2} E_{h_2 | r_1, h_1}[return]` (green).
pub fn q_cl(game: &FiniteGame, first: usize) -> Result<f64, ValueError> {
    two_step(game, first)?;
    Ok(game
        .first
        .iter()
        .enumerate()
        .map(|(h1, p1)| p1 * max_over(game.robot_sizes[1], |r2| inner(game, [first, r2], h1, game.green(&[first], &[h1]))))
        .sum())
}

/// Index of the largest value, smallest index on ties.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `V̂ = max_{x^r_1} Q̂` and the maximizing first action.
pub fn v(kind: PlannerKind, game: &FiniteGame) -> Result<(f64, usize), ValueError> {
    let q = q_values(game, kind)?;
    let a = argmax(&q);
    Ok((q[a], a))
}

fn q_values(game: &FiniteGame, kind: PlannerKind) -> Result<Vec<f64>, ValueError> {
    game.guard()?;
    let ev = Evaluator::new(game, kind)?;
    Ok((0..game.robot_sizes[0]).map(|a| ev.q(kind, a)).collect())
}

/// True value of the human-leader planner: the co-leader value of the
/// first action the human-leader planner picks.
pub fn true_value_hl(game: &FiniteGame) -> Result<f64, ValueError> {
    let (_, a) = v(PlannerKind::HumanLeader, game)?;
    q_tstep(game, PlannerKind::CoLeader, a)
}

/// True value of the no-leader planner: the green-model expected return
/// of the open-loop sequence it picks.
pub fn true_value_nl(game: &FiniteGame) -> Result<f64, ValueError> {
    game.guard()?;
    let nl = Evaluator::new(game, PlannerKind::NoLeader)?;
    let q: Vec<(Vec<usize>, f64)> = (0..game.robot_sizes[0]).map(|a| nl.best_sequence(a)).collect();
    let values: Vec<f64> = q.iter().map(|s| s.1).collect();
    let plan = &q[argmax(&values)].0;
    Ok(Evaluator::new(game, PlannerKind::RobotLeader)?.open_loop(plan, &mut Vec::new()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueReport {
    /// `Q̂` per planner (in [`PlannerKind::ALL`] order) per first action.
    pub q: [Vec<f64>; 4],
    /// `V̂` per planner.
    pub v: [f64; 4],
    /// Maximizing first action per planner.
    pub argmax: [usize; 4],
    pub true_value_nl: f64,
    pub true_value_hl: f64,
}

impl ValueReport {
    pub fn v_of(&self, kind: PlannerKind) -> f64 {
        self.v[kind as usize]
    }
}

pub fn value_report(game: &FiniteGame) -> Result<ValueReport, ValueError> {
    let mut q: [Vec<f64>; 4] = Default::default();
    let mut vs = [0.0; 4];
    let mut am = [0; 4];
    for kind in PlannerKind::ALL {
        let values = q_values(game, kind)?;
        let a = argmax(&values);
        vs[kind as usize] = values[a];
        am[kind as usize] = a;
        q[kind as usize] = values;
    }
    let true_hl = q[PlannerKind::CoLeader as usize][am[PlannerKind::HumanLeader as usize]];
    Ok(ValueReport { q, v: vs, argmax: am, true_value_nl: true_value_nl(game)?, true_value_hl: true_hl })
}

/// One checked inequality `lhs <= rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingCheck {
    pub name: alloc::string::String,
    /// `rhs - lhs`; negative means violated.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingReport {
    pub checks: Vec<OrderingCheck>,
    pub report: ValueReport,
}

impl OrderingReport {
    /// Checks whose margin is below `-tol`.
    pub fn violations(&self, tol: f64) -> usize {
        self.checks.iter().filter(|c| c.margin < -tol).count()
    }

    pub fn min_margin(&self) -> f64 {
        self.checks.iter().map(|c| c.margin).fold(f64::INFINITY, f64::min)
    }
}

/// Evaluates the inequalities: per first action `Q̂^NL <= Q̂^HL` and
/// `Q̂^RL <= Q̂^CL`; on values, true `V^NL <= V^RL` and
/// `true_value_hl <= V^CL`.
pub fn check_orderings(game: &FiniteGame) -> Result<OrderingReport, ValueError> {
    use alloc::format;
    let report = value_report(game)?;
    let [nl, rl, hl, cl] = &report.q;
    let mut checks = Vec::new();
    for a in 0..nl.len() {
        checks.push(OrderingCheck { name: format!("Q_NL({a}) <= Q_HL({a})"), margin: hl[a] - nl[a] });
        checks.push(OrderingCheck { name: format!("Q_RL({a}) <= Q_CL({a})"), margin: cl[a] - rl[a] });
    }
    checks.push(OrderingCheck { name: "V_NL <= V_RL".into(), margin: report.v_of(PlannerKind::RobotLeader) - report.true_value_nl });
    checks.push(OrderingCheck { name: "V_HL <= V_CL".into(), margin: report.v_of(PlannerKind::CoLeader) - report.true_value_hl });
    Ok(OrderingReport { checks, report })
}

/// Two-step turn-or-wait game: the human's first action (yield or go) is a
/// fair coin, the robot's first action is vacuous and only the robot's
/// second action matters: turning pays +1 against a yielding human and -1
/// otherwise, waiting pays 0.
pub fn game_g0() -> FiniteGame {
    // Slots (r_0, h_0, r_1, h_1) with sizes (1, 2, 2, 1); r_1: 0 = turn.
    let returns = sequences(&[1, 2, 2, 1])
        .iter()
        .map(|s| match (s[1], s[2]) {
            (_, 1) => 0.0,
            (0, 0) => 1.0,
            _ => -1.0,
        })
        .collect();
    FiniteGame::new(vec![1, 2], vec![2, 1], vec![0.5, 0.5], vec![vec![vec![1.0]; 2]], returns).expect("valid game")
}

/// Two-step probing game with a strict human-leader gap. The robot first
/// waits (0) or probes (1, costs 0.1); the human yields on step two only
/// after a probe. The robot then turns (0) or holds (1): turning pays +1
/// against a yielding human and -1 otherwise.
pub fn game_probe() -> FiniteGame {
    // Slots (r_0, h_0, r_1, h_1) with sizes (2, 1, 2, 2); h_1: 0 = yield.
    let returns = sequences(&[2, 1, 2, 2])
        .iter()
        .map(|s| {
            let cost = if s[0] == 1 { -0.1 } else { 0.0 };
            cost + match (s[2], s[3]) {
                (1, _) => 0.0,
                (0, 0) => 1.0,
                _ => -1.0,
            }
        })
        .collect();
    let green = vec![vec![vec![0.0, 1.0], vec![1.0, 0.0]]];
    FiniteGame::new(vec![2, 2], vec![1, 2], vec![1.0], green, returns).expect("valid game")
}
