//! Discrete autoregressive flows and an exhaustive check of which robot
//! contingency plans a fixed robot base sequence can represent.
//!
//! Symbols are generated slot by slot in the order `(t, a)` for
//! `t = 0..T`, `a = 0..A`, agent 0 being the robot. The symbol of a slot is
//! `x = f(z; history)` where `history` is every earlier symbol and `f` is a
//! permutation table looked up by history, so `q(x) = prod q̄(f⁻¹(x))`.
//!
//! A robot policy assigns an action to every node `(t, h)`, where `h` is
//! the non-robot symbols before step `t`; the robot's own earlier symbols
//! follow from the policy itself.


use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::domain::RngStream;

/// Largest supported alphabet.
pub const MAX_ALPHABET: usize = 4;
/// Upper bound on enumerated policy counts.
pub const POLICY_GUARD: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiscreteError {
    #[error("symbol {symbol} out of alphabet of size {size} at step {t}, agent {agent}")]
    SymbolOutOfAlphabet { t: usize, agent: usize, symbol: usize, size: usize },
    #[error("expected {expected} symbols, got {got}")]
    Length { expected: usize, got: usize },
    #[error("rank {n} out of range 1..={size}")]
    RankOutOfRange { n: usize, size: usize },
    #[error("{count} policies exceed the enumeration guard of {POLICY_GUARD}")]
    GuardExceeded { count: u128 },
    #[error("invalid flow: {0}")]
    Invalid(&'static str),
}

/// Finite autoregressive flow over `T` steps and `A` agents.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteFlow {
    horizon: usize,
    agents: usize,
    /// Alphabet size per slot `t * A + a`.
    sizes: Vec<usize>,
    /// Base pmf per slot.
    base: Vec<Vec<f64>>,
    /// `perms[k][h][z]` is the symbol for base symbol `z` after history
    /// index `h` (mixed radix over the sizes of slots `< k`).
    perms: Vec<Vec<Vec<usize>>>,
}

fn is_permutation(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    p.iter().all(|&v| v < p.len() && !core::mem::replace(&mut seen[v], true))
}

/// Ranks symbols by descending probability, ties by smallest index.
fn ranking(p: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b)));
    idx
}

/// 1-based rank of `symbol` under `p`.
fn rank_of(p: &[f64], symbol: usize) -> usize {
    ranking(p).iter().position(|&s| s == symbol).expect("symbol in range") + 1
}

impl DiscreteFlow {
    /// Builds a flow from per-slot alphabet sizes, base pmfs and
    /// permutation tables, validating every invariant.
    pub fn new(horizon: usize, agents: usize, base: Vec<Vec<f64>>, perms: Vec<Vec<Vec<usize>>>) -> Result<Self, DiscreteError> {
        let slots = horizon * agents;
        if horizon == 0 || agents == 0 {
            return Err(DiscreteError::Invalid("horizon and agents must be positive"));
        }
        if base.len() != slots || perms.len() != slots {
            return Err(DiscreteError::Invalid("need one base pmf and one permutation table per slot"));
        }
        let sizes: Vec<usize> = base.iter().map(Vec::len).collect();
        if sizes.iter().any(|&s| s == 0 || s > MAX_ALPHABET) {
            return Err(DiscreteError::Invalid("alphabet sizes must lie in 1..=4"));
        }
        for p in &base {
            if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(DiscreteError::Invalid("base pmf must be non-negative and sum to 1"));
            }
        }
        let mut histories = 1usize;
        for k in 0..slots {
            if perms[k].len() != histories {
                return Err(DiscreteError::Invalid("permutation table needs one entry per history"));
            }
            if perms[k].iter().any(|p| p.len() != sizes[k] || !is_permutation(p)) {
                return Err(DiscreteError::Invalid("bijection is not a permutation of the alphabet"));
            }
            histories *= sizes[k];
        }
        Ok(DiscreteFlow { horizon, agents, sizes, base, perms })
    }

    /// Flow whose bijections are all the identity.
    pub fn identity(horizon: usize, agents: usize, base: Vec<Vec<f64>>) -> Result<Self, DiscreteError> {
        let mut perms = Vec::with_capacity(base.len());
        let mut histories = 1usize;
        for p in &base {
            perms.push(vec![(0..p.len()).collect(); histories]);
            histories *= p.len().max(1);
        }
        DiscreteFlow::new(horizon, agents, base, perms)
    }

    /// Random flow with uniform alphabet size. Base pmfs are
    /// Dirichlet(1, ..., 1) draws resampled until every pair of entries
    /// differs by at least `1e-3`; bijections are uniform permutations.
    pub fn random(rng: &mut RngStream, horizon: usize, agents: usize, alphabet: usize) -> Result<Self, DiscreteError> {
        if alphabet == 0 || alphabet > MAX_ALPHABET {
            return Err(DiscreteError::Invalid("alphabet sizes must lie in 1..=4"));
        }
        let slots = horizon * agents;
        let mut base = Vec::with_capacity(slots);
        let mut perms = Vec::with_capacity(slots);
        let mut histories = 1usize;
        for _ in 0..slots {
            base.push(tie_free_pmf(rng, alphabet, 1e-3));
            let table = (0..histories)
                .map(|_| {
                    let mut p: Vec<usize> = (0..alphabet).collect();
                    rng.shuffle(&mut p);
                    p
                })
                .collect();
            perms.push(table);
            histories *= alphabet;
        }
        DiscreteFlow::new(horizon, agents, base, perms)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn alphabet(&self, t: usize, agent: usize) -> usize {
        self.sizes[t * self.agents + agent]
    }

    pub fn base(&self, t: usize, agent: usize) -> &[f64] {
        &self.base[t * self.agents + agent]
    }

    /// Whether any base pmf has two equal entries, in which case ranks rely
    /// on the index tie rule.
    pub fn has_ties(&self) -> bool {
        self.base.iter().any(|p| (0..p.len()).any(|i| (i + 1..p.len()).any(|j| p[i] == p[j])))
    }

    fn history_index(&self, prefix: &[usize]) -> usize {
        prefix.iter().zip(&self.sizes).fold(0, |h, (&x, &s)| h * s + x)
    }

    /// `f(z; prefix)` for the slot following `prefix`.
    fn forward(&self, prefix: &[usize], z: usize) -> usize {
        self.perms[prefix.len()][self.history_index(prefix)][z]
    }

    /// `f⁻¹(x; prefix)` for the slot following `prefix`.
    fn inverse(&self, prefix: &[usize], x: usize) -> usize {
        let p = &self.perms[prefix.len()][self.history_index(prefix)];
        p.iter().position(|&v| v == x).expect("permutation covers the alphabet")
    }

    fn check(&self, x: &[usize]) -> Result<(), DiscreteError> {
        if x.len() != self.sizes.len() {
            return Err(DiscreteError::Length { expected: self.sizes.len(), got: x.len() });
        }
        for (k, (&v, &s)) in x.iter().zip(&self.sizes).enumerate() {
            if v >= s {
                return Err(DiscreteError::SymbolOutOfAlphabet { t: k / self.agents, agent: k % self.agents, symbol: v, size: s });
            }
        }
        Ok(())
    }

    /// `q(X = x)` for a full joint sequence in slot order.
    pub fn pmf(&self, x: &[usize]) -> Result<f64, DiscreteError> {
        self.check(x)?;
        Ok((0..x.len()).map(|k| self.base[k][self.inverse(&x[..k], x[k])]).product())
    }

    /// Conditional `q(x_k | prefix)` for the slot following `prefix`.
    pub fn conditional(&self, prefix: &[usize], x: usize) -> f64 {
        self.base[prefix.len()][self.inverse(prefix, x)]
    }

    /// Every joint sequence in lexicographic slot order.
    pub fn sequences(&self) -> Vec<Vec<usize>> {
        product(&self.sizes)
    }

    /// The `n`-th most likely robot base symbol at step `t` (1-based).
    pub fn nth_best_base(&self, t: usize, n: usize) -> Result<usize, DiscreteError> {
        let p = self.base(t, 0);
        if n == 0 || n > p.len() {
            return Err(DiscreteError::RankOutOfRange { n, size: p.len() });
        }
        Ok(ranking(p)[n - 1])
    }

    /// 1-based rank of the robot base symbol `z` at step `t`.
    pub fn base_rank(&self, t: usize, z: usize) -> usize {
        rank_of(self.base(t, 0), z)
    }

    /// Alphabet sizes of the non-robot slots before step `t`.
    fn human_sizes(&self, t: usize) -> Vec<usize> {
        (0..t).flat_map(|s| (1..self.agents).map(move |a| (s, a))).map(|(s, a)| self.alphabet(s, a)).collect()
    }

    /// Number of robot decision nodes at step `t`.
    pub fn nodes(&self, t: usize) -> usize {
        self.human_sizes(t).iter().product()
    }

    /// Full slot prefix before `(t, robot)` for the node `(t, node)` when
    /// the robot follows `policy`.
    fn node_prefix(&self, policy: &PolicyTree, t: usize, node: usize) -> Vec<usize> {
        let humans = decode(node, &self.human_sizes(t));
        let mut prefix = Vec::with_capacity(t * self.agents);
        for s in 0..t {
            let h_node = encode(&humans[..s * (self.agents - 1)], &self.human_sizes(s));
            prefix.push(policy.actions[s][h_node]);
            prefix.extend_from_slice(&humans[s * (self.agents - 1)..(s + 1) * (self.agents - 1)]);
        }
        prefix
    }

    /// Robot policy obtained by fixing the robot's base symbols:
    /// `action(t, h) = f(zr[t]; h)`.
    pub fn induced_policy(&self, zr: &[usize]) -> Result<PolicyTree, DiscreteError> {
        if zr.len() != self.horizon {
            return Err(DiscreteError::Length { expected: self.horizon, got: zr.len() });
        }
        for (t, &z) in zr.iter().enumerate() {
            if z >= self.alphabet(t, 0) {
                return Err(DiscreteError::SymbolOutOfAlphabet { t, agent: 0, symbol: z, size: self.alphabet(t, 0) });
            }
        }
        let mut policy = PolicyTree { actions: Vec::with_capacity(self.horizon) };
        for t in 0..self.horizon {
            let layer = (0..self.nodes(t)).map(|node| self.forward(&self.node_prefix(&policy, t, node), zr[t])).collect();
            policy.actions.push(layer);
        }
        Ok(policy)
    }

    /// 1-based rank of the policy's action at every node under the model's
    /// conditional `q^r(. | h)`.
    pub fn action_ranks(&self, policy: &PolicyTree) -> Vec<Vec<usize>> {
        (0..self.horizon)
            .map(|t| {
                (0..self.nodes(t))
                    .map(|node| {
                        let prefix = self.node_prefix(policy, t, node);
                        rank_of(self.base(t, 0), self.inverse(&prefix, policy.actions[t][node]))
                    })
                    .collect()
            })
            .collect()
    }

    /// Per-step rank when it is the same at every node of that step.
    pub fn rank_profile(&self, policy: &PolicyTree) -> Option<Vec<usize>> {
        self.action_ranks(policy).into_iter().map(|layer| if layer.iter().all(|&r| r == layer[0]) { Some(layer[0]) } else { None }).collect()
    }

    fn policy_count(&self) -> u128 {
        (0..self.horizon).fold(1u128, |acc, t| acc.saturating_mul((self.alphabet(t, 0) as u128).saturating_pow(self.nodes(t) as u32)))
    }

    /// Every complete robot policy.
    pub fn all_policies(&self) -> Result<Vec<PolicyTree>, DiscreteError> {
        let count = self.policy_count();
        if count > POLICY_GUARD {
            return Err(DiscreteError::GuardExceeded { count });
        }
        let mut radices = Vec::new();
        for t in 0..self.horizon {
            radices.extend(core::iter::repeat_n(self.alphabet(t, 0), self.nodes(t)));
        }
        Ok(product(&radices)
            .into_iter()
            .map(|flat| {
                let mut actions = Vec::with_capacity(self.horizon);
                let mut k = 0;
                for t in 0..self.horizon {
                    let n = self.nodes(t);
                    actions.push(flat[k..k + n].to_vec());
                    k += n;
                }
                PolicyTree { actions }
            })
            .collect())
    }

    /// `{induced_policy(zr)}` over every robot base sequence.
    pub fn representable_set(&self) -> Result<BTreeSet<PolicyTree>, DiscreteError> {
        let count = self.policy_count();
        if count > POLICY_GUARD {
            return Err(DiscreteError::GuardExceeded { count });
        }
        let radices: Vec<usize> = (0..self.horizon).map(|t| self.alphabet(t, 0)).collect();
        product(&radices).iter().map(|zr| self.induced_policy(zr)).collect()
    }
}

/// Robot action at every decision node; `actions[t][node]` with nodes
/// indexed in mixed radix over the non-robot symbols before step `t`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PolicyTree {
    pub actions: Vec<Vec<usize>>,
}

impl PolicyTree {
    /// Action at step `t` after non-robot history `humans` (slot order).
    pub fn action(&self, t: usize, humans: &[usize], flow: &DiscreteFlow) -> usize {
        self.actions[t][encode(humans, &flow.human_sizes(t))]
    }
}

fn encode(digits: &[usize], radices: &[usize]) -> usize {
    digits.iter().zip(radices).fold(0, |acc, (&d, &r)| acc * r + d)
}

fn decode(mut index: usize, radices: &[usize]) -> Vec<usize> {
    let mut out = vec![0; radices.len()];
    for (d, &r) in out.iter_mut().zip(radices).rev() {
        *d = index % r;
        index /= r;
    }
    out
}

/// Cartesian product of `0..r` over `radices`, lexicographic.
fn product(radices: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = radices.iter().product();
    (0..total).map(|i| decode(i, radices)).collect()
}

fn tie_free_pmf(rng: &mut RngStream, n: usize, min_gap: f64) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..n).map(|_| rng.exp1()).collect();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
        if (0..n).all(|i| (i + 1..n).all(|j| (p[i] - p[j]).abs() >= min_gap)) {
            return p;
        }
    }
}

/// Outcome of comparing the representable set with the rank
/// characterization on one flow.
#[derive(Debug, Clone, PartialEq)]
pub struct Characterization {
    pub total: usize,
    pub representable: usize,
    /// Policies whose per-step rank is history-independent.
    pub rank_consistent: usize,
    /// Whether the two sets are equal.
    pub matches: bool,
    /// Unrepresentable policies (up to the requested limit).
    pub counterexamples: Vec<PolicyTree>,
    pub ties: bool,
}

/// Enumerates every policy and checks that the representable ones are
/// exactly those with a history-independent rank per step.
pub fn characterize(flow: &DiscreteFlow, max_counterexamples: usize) -> Result<Characterization, DiscreteError> {
    let all = flow.all_policies()?;
    let representable = flow.representable_set()?;
    let consistent: BTreeSet<PolicyTree> = all.iter().filter(|p| flow.rank_profile(p).is_some()).cloned().collect();
    let counterexamples = all.iter().filter(|p| !representable.contains(*p)).take(max_counterexamples).cloned().collect();
    Ok(Characterization {
        total: all.len(),
        representable: representable.len(),
        rank_consistent: consistent.len(),
        matches: consistent == representable,
        counterexamples,
        ties: flow.has_ties(),
    })
}
