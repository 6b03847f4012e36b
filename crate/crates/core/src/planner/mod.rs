//! Monte Carlo tree search over action-observation histories.
//!
//! The search is generic over a [`Simulator`]: it only needs to sample state
//! transitions and observations, update a belief with an action-observation
//! pair (yielding a reward normalized to `[-1, 0]`) and pick rollout actions.
//! [`tracking`] binds it to the acoustic tracking model.
//!
//! Each simulation descends the tree with UCB action selection, sampling one
//! state trajectory. The first history not yet in the tree is added as a node
//! holding the updated belief and its reward; from there the return is
//! completed by a default-policy rollout up to the horizon. Returns are
//! backed up as incremental means per (node, action).

pub mod tracking;

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};

/// Exploration-bonus regularizer used unless configured otherwise.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Generative model the planner searches over.
pub trait Simulator {
    type State: Clone;
    type Belief;

    fn num_actions(&self) -> usize;

    fn step<R: Rng + ?Sized>(&self, state: &Self::State, action: usize, rng: &mut R) -> Self::State;

    fn observe<R: Rng + ?Sized>(&self, state: &Self::State, rng: &mut R) -> usize;

    /// Posterior belief after `(action, observation)` and the normalized
    /// reward earned by reaching it. `state` is the sampled successor state.
    fn update<R: Rng + ?Sized>(
        &self,
        belief: &Self::Belief,
        state: &Self::State,
        action: usize,
        observation: usize,
        rng: &mut R,
    ) -> (Self::Belief, f64);

    /// Action of the rollout policy beyond the tree frontier.
    fn default_action<R: Rng + ?Sized>(&self, state: &Self::State, belief: &Self::Belief, rng: &mut R) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerConfig {
    /// Planning horizon K in steps.
    pub horizon: usize,
    /// Simulations per planning call, L.
    pub budget: usize,
    pub gamma: f64,
    /// UCB exploration constant c.
    pub exploration: f64,
    pub epsilon: f64,
    /// Particles per planning belief.
    pub plan_particles: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            horizon: 5,
            budget: 500,
            gamma: 0.9,
            exploration: 1.75,
            epsilon: DEFAULT_EPSILON,
            plan_particles: 200,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget < 1 {
            return Err(Error::config("planner.budget", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config(
                "planner.gamma",
                format!("must lie in [0, 1], got {}", self.gamma),
            ));
        }
        if !(self.exploration > 0.0 && self.exploration.is_finite()) {
            return Err(Error::config("planner.exploration", "must be > 0"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("planner.epsilon", "must be > 0"));
        }
        if self.plan_particles < 1 {
            return Err(Error::config("planner.plan_particles", "must be >= 1"));
        }
        Ok(())
    }

    /// Bounds of any backed-up return when rewards lie in `[-1, 0]`.
    pub fn return_bounds(&self) -> (f64, f64) {
        let k = self.horizon as f64;
        let lower = if self.gamma < 1.0 {
            -(1.0 - self.gamma.powi(self.horizon as i32)) / (1.0 - self.gamma)
        } else {
            -k
        };
        (lower, 0.0)
    }
}

/// Visit count and mean return of one action at one node.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ActionStats {
    pub visits: u64,
    pub value: f64,
}

pub type NodeId = usize;

/// Sequence of (action, observation) pairs from the tree root.
pub type HistoryKey = Vec<(usize, usize)>;

#[derive(Debug, Clone)]
pub struct TreeNode<B> {
    pub belief: B,
    /// Normalized reward earned on arrival; `None` at the root.
    pub reward: Option<f64>,
    pub visits: u64,
    pub stats: Vec<ActionStats>,
    pub key: HistoryKey,
    children: HashMap<(usize, usize), NodeId>,
}

impl<B> TreeNode<B> {
    fn new(belief: B, reward: Option<f64>, num_actions: usize, key: HistoryKey) -> Self {
        TreeNode {
            belief,
            reward,
            visits: 0,
            stats: vec![ActionStats::default(); num_actions],
            key,
            children: HashMap::new(),
        }
    }

    pub fn child(&self, action: usize, observation: usize) -> Option<NodeId> {
        self.children.get(&(action, observation)).copied()
    }

    pub fn num_children(&self) -> usize {
        self.children.len()
    }
}

/// Arena-allocated search tree rooted at the current history.
#[derive(Debug, Clone)]
pub struct HistoryTree<B> {
    nodes: Vec<TreeNode<B>>,
    root: NodeId,
}

impl<B> HistoryTree<B> {
    pub fn new(root_belief: B, num_actions: usize) -> Self {
        HistoryTree {
            nodes: vec![TreeNode::new(root_belief, None, num_actions, Vec::new())],
            root: 0,
        }
    }

    pub fn root(&self) -> &TreeNode<B> {
        &self.nodes[self.root]
    }

    pub fn root_id(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, id: NodeId) -> &TreeNode<B> {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TreeNode<B>> {
        self.nodes.iter()
    }

    pub fn find(&self, key: &[(usize, usize)]) -> Option<NodeId> {
        let mut id = self.root;
        for &(u, z) in key {
            id = self.nodes[id].child(u, z)?;
        }
        Some(id)
    }

    fn insert(&mut self, parent: NodeId, action: usize, observation: usize, belief: B, reward: f64) -> NodeId {
        let num_actions = self.nodes[parent].stats.len();
        let mut key = self.nodes[parent].key.clone();
        key.push((action, observation));
        let id = self.nodes.len();
        self.nodes.push(TreeNode::new(belief, Some(reward), num_actions, key));
        self.nodes[parent].children.insert((action, observation), id);
        id
    }

    /// Keeps only the subtree below `(action, observation)` of the root and
    /// makes it the new root. Returns `false`, leaving a fresh single-node
    /// tree built from `fresh_root`, when that child does not exist.
    pub fn advance(&mut self, action: usize, observation: usize, fresh_root: impl FnOnce() -> B) -> bool {
        let num_actions = self.nodes[self.root].stats.len();
        let Some(child) = self.nodes[self.root].child(action, observation) else {
            *self = HistoryTree::new(fresh_root(), num_actions);
            return false;
        };

        let old = std::mem::take(&mut self.nodes);
        let mut slots: Vec<Option<TreeNode<B>>> = old.into_iter().map(Some).collect();
        let mut nodes = Vec::new();
        // (old id, new parent id, edge)
        let mut queue = std::collections::VecDeque::from([(child, None::<(NodeId, (usize, usize))>)]);
        while let Some((old_id, parent)) = queue.pop_front() {
            let mut node = slots[old_id].take().expect("tree nodes are visited once");
            node.key.drain(..1);
            let new_id = nodes.len();
            if let Some((p, edge)) = parent {
                let parent_node: &mut TreeNode<B> = &mut nodes[p];
                parent_node.children.insert(edge, new_id);
            }
            let mut edges: Vec<_> = node.children.drain().collect();
            edges.sort_unstable();
            for (edge, grandchild) in edges {
                queue.push_back((grandchild, Some((new_id, edge))));
            }
            nodes.push(node);
        }
        nodes[0].reward = None;
        self.nodes = nodes;
        self.root = 0;
        true
    }
}

/// UCB action choice at a node: argmax of `V + c * sqrt(ln N / (N_u + eps))`.
///
/// `ln N` is taken as 0 while the node is unvisited. Ties go to the lowest
/// action index.
pub fn ucb_select(stats: &[ActionStats], visits: u64, exploration: f64, epsilon: f64) -> usize {
    let log_n = if visits == 0 { 0.0 } else { (visits as f64).ln() };
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (u, s) in stats.iter().enumerate() {
        let score = s.value + exploration * (log_n / (s.visits as f64 + epsilon)).sqrt();
        if score > best_score {
            best = u;
            best_score = score;
        }
    }
    best
}

/// Visited action with the highest estimated value, lowest index on ties;
/// action 0 when nothing has been visited.
pub fn greedy_action(stats: &[ActionStats]) -> usize {
    let mut best: Option<usize> = None;
    for (u, s) in stats.iter().enumerate() {
        if s.visits > 0 && best.is_none_or(|b| s.value > stats[b].value) {
            best = Some(u);
        }
    }
    best.unwrap_or(0)
}

/// Running extrema of backed-up returns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnRange {
    pub min: f64,
    pub max: f64,
    pub count: u64,
}

impl Default for ReturnRange {
    fn default() -> Self {
        ReturnRange {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            count: 0,
        }
    }
}

impl ReturnRange {
    pub fn record(&mut self, g: f64) {
        self.min = self.min.min(g);
        self.max = self.max.max(g);
        self.count += 1;
    }

    pub fn merge(&mut self, other: &ReturnRange) {
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        self.count += other.count;
    }
}

/// One backed-up return, kept when tracing is enabled.
#[derive(Debug, Clone, PartialEq)]
pub struct Backup {
    pub key: HistoryKey,
    pub action: usize,
    pub value: f64,
}

/// Tree search state carried across real time steps.
#[derive(Debug, Clone)]
pub struct Planner<B> {
    config: PlannerConfig,
    tree: HistoryTree<B>,
    returns: ReturnRange,
    trace: Option<Vec<Backup>>,
}

impl<B> Planner<B> {
    pub fn new(config: PlannerConfig, root_belief: B, num_actions: usize) -> Self {
        Planner {
            config,
            tree: HistoryTree::new(root_belief, num_actions),
            returns: ReturnRange::default(),
            trace: None,
        }
    }

    /// Records every backed-up return from now on.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    pub fn tree(&self) -> &HistoryTree<B> {
        &self.tree
    }

    pub fn returns(&self) -> ReturnRange {
        self.returns
    }

    pub fn trace(&self) -> Option<&[Backup]> {
        self.trace.as_deref()
    }

    /// Runs the simulation budget from the root and returns the greedy action.
    ///
    /// `sample_root` draws a state from the current belief.
    pub fn plan<S, R>(&mut self, sim: &S, mut sample_root: impl FnMut(&mut R) -> S::State, rng: &mut R) -> usize
    where
        S: Simulator<Belief = B>,
        R: Rng + ?Sized,
    {
        for _ in 0..self.config.budget {
            let state = sample_root(rng);
            let root = self.tree.root;
            self.simulate(sim, state, root, 0, rng);
        }
        self.best_action()
    }

    pub fn best_action(&self) -> usize {
        greedy_action(&self.tree.root().stats)
    }

    /// One simulation from `node` at depth `depth`; returns the sampled return.
    pub fn simulate<S, R>(&mut self, sim: &S, state: S::State, node: NodeId, depth: usize, rng: &mut R) -> f64
    where
        S: Simulator<Belief = B>,
        R: Rng + ?Sized,
    {
        let cfg = self.config;
        if depth >= cfg.horizon {
            return 0.0;
        }
        let action = {
            let n = &self.tree.nodes[node];
            ucb_select(&n.stats, n.visits, cfg.exploration, cfg.epsilon)
        };
        let next = sim.step(&state, action, rng);
        let observation = sim.observe(&next, rng);

        let g = match self.tree.nodes[node].child(action, observation) {
            Some(child) => {
                let reward = self.tree.nodes[child].reward.unwrap_or(0.0);
                reward + cfg.gamma * self.simulate(sim, next, child, depth + 1, rng)
            }
            None => {
                let (belief, reward) = sim.update(&self.tree.nodes[node].belief, &next, action, observation, rng);
                let child = self.tree.insert(node, action, observation, belief, reward);
                reward + cfg.gamma * default_rollout(sim, next, &self.tree.nodes[child].belief, depth + 1, &cfg, rng)
            }
        };

        let n = &mut self.tree.nodes[node];
        n.visits += 1;
        let s = &mut n.stats[action];
        s.visits += 1;
        let inv = 1.0 / s.visits as f64;
        s.value = (1.0 - inv) * s.value + g * inv;
        self.returns.record(g);
        if let Some(trace) = &mut self.trace {
            trace.push(Backup {
                key: n.key.clone(),
                action,
                value: g,
            });
        }
        g
    }

    /// Moves the root to the child reached by the executed action and the
    /// real observation, discarding every other branch.
    pub fn advance(&mut self, action: usize, observation: usize, fresh_root: impl FnOnce() -> B) -> bool {
        self.tree.advance(action, observation, fresh_root)
    }
}

/// Return of a default-policy rollout from `depth` to the horizon.
///
/// The rollout carries its own belief chain and adds nothing to the tree.
pub fn default_rollout<S, R>(
    sim: &S,
    mut state: S::State,
    belief: &S::Belief,
    depth: usize,
    cfg: &PlannerConfig,
    rng: &mut R,
) -> f64
where
    S: Simulator,
    R: Rng + ?Sized,
{
    if depth >= cfg.horizon {
        return 0.0;
    }
    let mut rewards = Vec::with_capacity(cfg.horizon - depth);
    let mut owned: Option<S::Belief> = None;
    for _ in depth..cfg.horizon {
        let current = owned.as_ref().unwrap_or(belief);
        let action = sim.default_action(&state, current, rng);
        let next = sim.step(&state, action, rng);
        let observation = sim.observe(&next, rng);
        let (updated, reward) = sim.update(current, &next, action, observation, rng);
        rewards.push(reward);
        owned = Some(updated);
        state = next;
    }
    // Same association as the recursive form R1 + gamma * (R2 + gamma * ...).
    rewards.iter().rev().fold(0.0, |acc, r| r + cfg.gamma * acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng as StreamRng;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;

    /// Stateless toy: rewards depend only on the action, observations are
    /// coin flips.
    struct Bandit {
        rewards: Vec<f64>,
        observations: usize,
    }

    impl Simulator for Bandit {
        type State = ();
        type Belief = ();

        fn num_actions(&self) -> usize {
            self.rewards.len()
        }

        fn step<R: Rng + ?Sized>(&self, _: &(), _: usize, _: &mut R) {}

        fn observe<R: Rng + ?Sized>(&self, _: &(), rng: &mut R) -> usize {
            rng.random_range(0..self.observations)
        }

        fn update<R: Rng + ?Sized>(&self, _: &(), _: &(), action: usize, _: usize, _: &mut R) -> ((), f64) {
            ((), self.rewards[action])
        }

        fn default_action<R: Rng + ?Sized>(&self, _: &(), _: &(), rng: &mut R) -> usize {
            rng.random_range(0..self.rewards.len())
        }
    }

    fn stats(values: &[f64], visits: &[u64]) -> Vec<ActionStats> {
        values
            .iter()
            .zip(visits)
            .map(|(&value, &visits)| ActionStats { visits, value })
            .collect()
    }

    #[test]
    fn ucb_examples() {
        let s = stats(&[-0.5, -0.6], &[6, 4]);
        assert_eq!(ucb_select(&s, 10, 1.75, 1e-12), 1);
        let bonus = |n: f64| 1.75 * (10f64.ln() / n).sqrt();
        assert!((-0.5 + bonus(6.0) - 0.584).abs() < 1e-3);
        assert!((-0.6 + bonus(4.0) - 0.728).abs() < 1e-3);

        assert_eq!(ucb_select(&stats(&[-0.1, -0.9], &[5, 0]), 5, 1.75, 1e-6), 1);
        assert_eq!(ucb_select(&s, 10, 0.0, 1e-6), 0);
        assert_eq!(ucb_select(&stats(&[0.0, 0.0, 0.0], &[0, 0, 0]), 0, 1.75, 1e-6), 0);
    }

    proptest! {
        #[test]
        fn ucb_ignores_common_value_shift(
            values in prop::collection::vec(-1f64..0.0, 2..6),
            shift in -5f64..5.0,
            seed in any::<u64>(),
        ) {
            let mut rng = StreamRng::seed_from_u64(seed);
            let visits: Vec<u64> = values.iter().map(|_| rng.random_range(1..50)).collect();
            let total = visits.iter().sum();
            let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
            let a = ucb_select(&stats(&values, &visits), total, 1.75, 1e-6);
            let b = ucb_select(&stats(&shifted, &visits), total, 1.75, 1e-6);
            // Shifting can only flip an exact tie, which rounding may create.
            let score = |v: &[f64], u: usize| v[u] + 1.75 * ((total as f64).ln() / (visits[u] as f64 + 1e-6)).sqrt();
            prop_assert!(a == b || (score(&values, a) - score(&values, b)).abs() < 1e-9);
        }
    }

    fn cfg(horizon: usize, budget: usize, gamma: f64) -> PlannerConfig {
        PlannerConfig {
            horizon,
            budget,
            gamma,
            ..PlannerConfig::default()
        }
    }

    #[test]
    fn zero_horizon_leaves_tree_untouched() {
        let sim = Bandit { rewards: vec![-0.5], observations: 2 };
        let mut p = Planner::new(cfg(0, 1, 0.9), (), 1);
        let mut rng = StreamRng::seed_from_u64(0);
        assert_eq!(p.simulate(&sim, (), 0, 0, &mut rng), 0.0);
        assert_eq!(p.tree().len(), 1);
        assert_eq!(p.tree().root().visits, 0);
    }

    #[test]
    fn single_simulation_trace() {
        let sim = Bandit { rewards: vec![-0.3, -0.1], observations: 3 };
        let mut p = Planner::new(cfg(1, 1, 0.9), (), 2);
        let mut rng = StreamRng::seed_from_u64(0);
        let u = p.plan(&sim, |_| (), &mut rng);
        assert_eq!(u, 0);
        assert_eq!(p.tree().len(), 2);
        let root = p.tree().root();
        assert_eq!(root.visits, 1);
        assert_eq!(root.stats[0], ActionStats { visits: 1, value: -0.3 });
    }

    #[test]
    fn repeated_visits_average_returns() {
        let sim = Bandit { rewards: vec![-0.4], observations: 1 };
        let mut p = Planner::new(cfg(2, 2, 0.5), (), 1).with_trace();
        let mut rng = StreamRng::seed_from_u64(0);
        p.plan(&sim, |_| (), &mut rng);
        let root_backups: Vec<f64> = p
            .trace()
            .unwrap()
            .iter()
            .filter(|b| b.key.is_empty())
            .map(|b| b.value)
            .collect();
        assert_eq!(root_backups.len(), 2);
        let mean = (root_backups[0] + root_backups[1]) / 2.0;
        assert!((p.tree().root().stats[0].value - mean).abs() < 1e-15);
        assert!((mean - (-0.4 - 0.5 * 0.4)).abs() < 1e-12);
    }

    #[test]
    fn rollout_sums_discounted_rewards() {
        let sim = Bandit { rewards: vec![-0.25, -0.25], observations: 2 };
        let mut rng = StreamRng::seed_from_u64(0);
        assert_eq!(default_rollout(&sim, (), &(), 3, &cfg(3, 1, 1.0), &mut rng), 0.0);
        let g = default_rollout(&sim, (), &(), 1, &cfg(5, 1, 1.0), &mut rng);
        assert!((g + 0.25 * 4.0).abs() < 1e-12);
    }

    #[test]
    fn bookkeeping_invariants_hold() {
        let sim = Bandit { rewards: vec![-0.2, -0.7, -0.4], observations: 3 };
        let config = cfg(4, 300, 0.9);
        let mut p = Planner::new(config, (), 3).with_trace();
        let mut rng = StreamRng::seed_from_u64(17);
        p.plan(&sim, |_| (), &mut rng);
        assert!(p.tree().len() <= 301);
        let (lo, hi) = config.return_bounds();
        for b in p.trace().unwrap() {
            assert!(b.value >= lo - 1e-12 && b.value <= hi);
        }
        for node in p.tree().iter() {
            assert_eq!(node.visits, node.stats.iter().map(|s| s.visits).sum::<u64>());
            for (u, s) in node.stats.iter().enumerate() {
                let backed: Vec<f64> = p
                    .trace()
                    .unwrap()
                    .iter()
                    .filter(|b| b.key == node.key && b.action == u)
                    .map(|b| b.value)
                    .collect();
                assert_eq!(backed.len() as u64, s.visits);
                if s.visits > 0 {
                    let mean = backed.iter().sum::<f64>() / backed.len() as f64;
                    assert!((mean - s.value).abs() < 1e-12);
                }
            }
        }
        assert_eq!(p.best_action(), 0);
    }

    #[test]
    fn advance_prunes_to_subtree() {
        let sim = Bandit { rewards: vec![-0.2, -0.7], observations: 2 };
        let mut p = Planner::new(cfg(3, 200, 0.9), (), 2);
        let mut rng = StreamRng::seed_from_u64(5);
        p.plan(&sim, |_| (), &mut rng);
        let child = p.tree().root().child(0, 1).expect("explored");
        let kept_stats = p.tree().node(child).stats.clone();
        let kept_visits = p.tree().node(child).visits;
        assert!(p.advance(0, 1, || ()));
        assert_eq!(p.tree().root().stats, kept_stats);
        assert_eq!(p.tree().root().visits, kept_visits);
        assert!(p.tree().root().reward.is_none());
        for node in p.tree().iter() {
            assert_eq!(p.tree().find(&node.key).map(|id| p.tree().node(id).key.clone()), Some(node.key.clone()));
            assert!(node.key.len() <= 2);
        }

        let mut fresh = Planner::new(cfg(1, 1, 0.9), (), 2);
        assert!(!fresh.advance(1, 1, || ()));
        assert_eq!(fresh.tree().len(), 1);
    }

    #[test]
    fn config_validation_names_fields() {
        let bad = PlannerConfig { gamma: 1.5, ..PlannerConfig::default() };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("planner.gamma"), "{msg}");
        assert!(PlannerConfig::default().validate().is_ok());
        assert_eq!(cfg(3, 1, 1.0).return_bounds(), (-3.0, 0.0));
    }
}
