//! Episodic deep Q-learning over deployments.
//!
//! Each episode starts from the partially connected graph in which cell-center
//! UEs sit on their strongest cell, and connects the remaining (reshuffled)
//! UEs one at a time. The action space is every `(cell, ue)` pair where `ue`
//! is unconnected and `cell` is in its measurement report. There is no target
//! network: TD targets use the live parameters.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{score_graph, score_with_grad, GnnParams};
use crate::graph::{CapacityMatrix, ConnectionGraph, DEFAULT_D_MAX_M};
use crate::metrics::{self, RewardKind, DEFAULT_LAMBDA_FAIR};
use crate::net_model::Deployment;
use crate::xapp::{initial_graph, DEFAULT_EDGE_THRESHOLD_DB};

pub type Action = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub episodes_per_deployment: usize,
    pub n_deployments: usize,
    pub epsilon: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub buffer_size: usize,
    pub batch_size: usize,
    pub reward_kind: RewardKind,
    pub lambda_fair: f64,
    pub seed: u64,
    pub layers: usize,
    pub width: usize,
    pub init_std: f64,
    /// Global-norm clip applied to the averaged update; `None` runs the plain update.
    pub grad_clip: Option<f64>,
    pub d_max_m: f64,
    pub edge_threshold_db: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes_per_deployment: 1,
            n_deployments: 1000,
            epsilon: 0.1,
            alpha: 0.01,
            gamma: 1.0,
            buffer_size: 8,
            batch_size: 4,
            reward_kind: RewardKind::Throughput,
            lambda_fair: DEFAULT_LAMBDA_FAIR,
            seed: 0,
            layers: 2,
            width: 8,
            init_std: 0.1,
            grad_clip: Some(10.0),
            d_max_m: DEFAULT_D_MAX_M,
            edge_threshold_db: DEFAULT_EDGE_THRESHOLD_DB,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("train config: {msg}")));
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon {} outside [0, 1]", self.epsilon));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha {} must be >= 0", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if self.buffer_size == 0 || self.batch_size == 0 || self.batch_size > self.buffer_size {
            return bad(format!(
                "need 1 <= batch_size ({}) <= buffer_size ({})",
                self.batch_size, self.buffer_size
            ));
        }
        if self.episodes_per_deployment == 0 {
            return bad("episodes_per_deployment must be >= 1".into());
        }
        if self.lambda_fair < 0.0 {
            return bad("lambda_fair must be >= 0".into());
        }
        Ok(())
    }
}

/// Per-deployment data shared by every state of an episode.
#[derive(Debug)]
pub struct Instance {
    pub cap: CapacityMatrix,
    /// Reported cells per UE, strongest first.
    pub candidates: Vec<Vec<usize>>,
}

impl Instance {
    pub fn from_deployment(dep: &Deployment) -> Result<Self> {
        let candidates = (0..dep.n_ues())
            .map(|ue| Ok(dep.measurement_report(ue)?.cells().collect()))
            .collect::<Result<_>>()?;
        Ok(Self {
            cap: CapacityMatrix::from_deployment(dep),
            candidates,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub graph: ConnectionGraph,
    /// Unconnected UEs still to be placed, ascending.
    pub unassigned: Vec<usize>,
    pub instance: Arc<Instance>,
}

impl EpisodeState {
    pub fn new(graph: ConnectionGraph, instance: Arc<Instance>) -> Result<Self> {
        let unassigned: Vec<usize> = graph.unassigned().collect();
        if let Some(&ue) = unassigned.iter().find(|&&ue| instance.candidates[ue].is_empty()) {
            return Err(Error::EmptyReport(ue));
        }
        Ok(Self { graph, unassigned, instance })
    }

    /// The training start state for a deployment: cell-center UEs attached,
    /// cell-edge UEs left to the policy.
    pub fn initial(dep: &Deployment, edge_threshold_db: f64, d_max_m: f64) -> Result<Self> {
        let (graph, _) = initial_graph(dep, edge_threshold_db, d_max_m)?;
        Self::new(graph, Arc::new(Instance::from_deployment(dep)?))
    }

    pub fn cap(&self) -> &CapacityMatrix {
        &self.instance.cap
    }

    pub fn is_terminal(&self) -> bool {
        self.unassigned.is_empty()
    }

    pub fn apply(&self, (cell, ue): Action) -> Result<Self> {
        let pos = self
            .unassigned
            .binary_search(&ue)
            .map_err(|_| Error::InvalidArgument(format!("UE {ue} is not awaiting a connection")))?;
        if !self.instance.candidates[ue].contains(&cell) {
            return Err(Error::InvalidArgument(format!("cell {cell} is not a candidate for UE {ue}")));
        }
        let mut unassigned = self.unassigned.clone();
        unassigned.remove(pos);
        Ok(Self {
            graph: self.graph.connect(cell, ue)?,
            unassigned,
            instance: Arc::clone(&self.instance),
        })
    }
}

/// Legal `(cell, ue)` pairs, ordered by UE then cell.
pub fn legal_actions(s: &EpisodeState) -> Vec<Action> {
    let mut out = Vec::new();
    for &ue in &s.unassigned {
        let mut cells = s.instance.candidates[ue].clone();
        cells.sort_unstable();
        out.extend(cells.into_iter().map(|c| (c, ue)));
    }
    out
}

/// `Q(s, a)` for every legal action, in [`legal_actions`] order.
pub fn score_actions(p: &GnnParams, s: &EpisodeState) -> Result<Vec<(Action, f64)>> {
    legal_actions(s)
        .into_iter()
        .map(|(cell, ue)| {
            let g = s.graph.connect(cell, ue)?;
            Ok(((cell, ue), score_graph(p, &g, s.cap())?))
        })
        .collect()
}

/// First action with the highest score; ties resolve to the lower UE, then lower cell.
pub fn greedy_action(p: &GnnParams, s: &EpisodeState) -> Result<Option<(Action, f64)>> {
    let mut best: Option<(Action, f64)> = None;
    for (a, q) in score_actions(p, s)? {
        if best.is_none_or(|(_, bq)| q > bq) {
            best = Some((a, q));
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Choice {
    pub action: Action,
    pub explored: bool,
}

pub fn choose_action<R: Rng>(p: &GnnParams, s: &EpisodeState, epsilon: f64, rng: &mut R) -> Result<Choice> {
    if s.is_terminal() {
        return Err(Error::InvalidArgument("no legal actions in a terminal state".into()));
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        let actions = legal_actions(s);
        let action = actions[rng.random_range(0..actions.len())];
        return Ok(Choice { action, explored: true });
    }
    let (action, _) = greedy_action(p, s)?.expect("non-terminal state has actions");
    Ok(Choice { action, explored: false })
}

pub fn select_action<R: Rng>(p: &GnnParams, s: &EpisodeState, epsilon: f64, rng: &mut R) -> Result<Action> {
    Ok(choose_action(p, s, epsilon, rng)?.action)
}

/// Runs the greedy policy to the terminal state, returning the decisions in order.
pub fn greedy_rollout(p: &GnnParams, start: &EpisodeState) -> Result<(EpisodeState, Vec<Action>)> {
    let mut s = start.clone();
    let mut decisions = Vec::with_capacity(s.unassigned.len());
    while let Some((a, _)) = greedy_action(p, &s)? {
        s = s.apply(a)?;
        decisions.push(a);
    }
    Ok((s, decisions))
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: EpisodeState,
    pub action: Action,
    pub reward: f64,
    /// `state` with `action` applied; its graph is the one `Q(s, a)` scores.
    pub next_state: EpisodeState,
    pub terminal: bool,
}

pub fn td_target(p: &GnnParams, t: &Transition, gamma: f64) -> Result<f64> {
    if t.terminal || gamma == 0.0 {
        return Ok(t.reward);
    }
    let best = score_actions(p, &t.next_state)?
        .into_iter()
        .map(|(_, q)| q)
        .fold(f64::NEG_INFINITY, f64::max);
    if best == f64::NEG_INFINITY {
        return Ok(t.reward);
    }
    Ok(gamma * best + t.reward)
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform sample without replacement.
    pub fn sample<R: Rng>(&self, k: usize, rng: &mut R) -> Vec<&Transition> {
        sample(rng, self.items.len(), k.min(self.items.len()))
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub params: GnnParams,
    /// Mean squared TD error over the batch, before the update.
    pub loss: f64,
}

/// One averaged Q-learning update: `θ += α · mean[(y − Q) ∇Q]`.
pub fn sgd_step(
    p: &GnnParams,
    batch: &[&Transition],
    alpha: f64,
    gamma: f64,
    grad_clip: Option<f64>,
) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut update = GnnParams::zeros(p.layers(), p.width());
    let mut loss = 0.0;
    for t in batch {
        let y = td_target(p, t, gamma)?;
        let (q, grad) = score_with_grad(p, &t.next_state.graph, t.next_state.cap())?;
        let err = y - q;
        loss += err * err;
        update.add_scaled(&grad, err);
    }
    let n = batch.len() as f64;
    update.scale(1.0 / n);
    loss /= n;
    if !loss.is_finite() || !update.is_finite() {
        return Err(Error::Diverged(format!("non-finite TD loss {loss} or gradient")));
    }
    if let Some(limit) = grad_clip {
        let norm = update.norm();
        if norm > limit {
            update.scale(limit / norm);
        }
    }
    let mut next = p.clone();
    next.add_scaled(&update, alpha);
    if !next.is_finite() {
        return Err(Error::Diverged("parameters became non-finite".into()));
    }
    Ok(StepOutcome { params: next, loss })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub deployment_id: usize,
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    #[serde(rename = "U_th")]
    pub u_th: f64,
    #[serde(rename = "U_cov")]
    pub u_cov: f64,
    #[serde(rename = "U_Jain")]
    pub u_jain: f64,
    pub epsilon_used: f64,
    pub loss_mean: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub episodes: Vec<EpisodeLog>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.episodes {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io("<train log>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn returns(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.episode_return).collect()
    }
}

/// Stateful trainer; [`train`] wraps it for the common one-shot case.
pub struct Trainer {
    cfg: TrainConfig,
    params: GnnParams,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    log: TrainLog,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let params = GnnParams::init(cfg.seed, cfg.layers, cfg.width, cfg.init_std)?;
        Ok(Self::with_params(cfg, params))
    }

    pub fn with_params(cfg: TrainConfig, params: GnnParams) -> Self {
        // Separate stream from the one used for weight initialization.
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
        Self {
            buffer: ReplayBuffer::new(cfg.buffer_size),
            cfg,
            params,
            rng,
            log: TrainLog::default(),
        }
    }

    pub fn params(&self) -> &GnnParams {
        &self.params
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn into_parts(self) -> (GnnParams, TrainLog) {
        (self.params, self.log)
    }

    pub fn run_deployment(&mut self, deployment_id: usize, dep: &Deployment) -> Result<()> {
        let start = EpisodeState::initial(dep, self.cfg.edge_threshold_db, self.cfg.d_max_m)?;
        for episode in 0..self.cfg.episodes_per_deployment {
            self.run_episode(deployment_id, episode, &start)?;
        }
        Ok(())
    }

    pub fn run_episode(&mut self, deployment_id: usize, episode: usize, start: &EpisodeState) -> Result<()> {
        let cfg = &self.cfg;
        let mut state = start.clone();
        let (mut ret, mut explored, mut steps) = (0.0, 0usize, 0usize);
        let (mut loss_sum, mut updates) = (0.0, 0usize);

        while !state.is_terminal() {
            let choice = choose_action(&self.params, &state, cfg.epsilon, &mut self.rng)?;
            let next = state.apply(choice.action)?;
            let r = metrics::reward(cfg.reward_kind, &state.graph, &next.graph, state.cap(), cfg.lambda_fair);
            ret += r;
            explored += choice.explored as usize;
            steps += 1;
            let terminal = next.is_terminal();
            self.buffer.push(Transition {
                state,
                action: choice.action,
                reward: r,
                next_state: next.clone(),
                terminal,
            });
            if self.buffer.len() >= cfg.batch_size && cfg.alpha > 0.0 {
                let batch = self.buffer.sample(cfg.batch_size, &mut self.rng);
                let out = sgd_step(&self.params, &batch, cfg.alpha, cfg.gamma, cfg.grad_clip)?;
                self.params = out.params;
                loss_sum += out.loss;
                updates += 1;
            }
            state = next;
        }

        let g = &state.graph;
        self.log.episodes.push(EpisodeLog {
            deployment_id,
            episode,
            episode_return: ret,
            u_th: metrics::sum_throughput(g, state.cap()),
            u_cov: metrics::coverage(g, state.cap()).unwrap_or(0.0),
            u_jain: metrics::jain_index(g).unwrap_or(0.0),
            epsilon_used: if steps > 0 { explored as f64 / steps as f64 } else { 0.0 },
            loss_mean: if updates > 0 { loss_sum / updates as f64 } else { 0.0 },
        });
        Ok(())
    }
}

pub fn train(cfg: &TrainConfig, deployments: &[Deployment]) -> Result<(GnnParams, TrainLog)> {
    if deployments.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one deployment".into()));
    }
    let mut trainer = Trainer::new(cfg.clone())?;
    for (id, dep) in deployments.iter().enumerate() {
        trainer.run_deployment(id, dep)?;
    }
    Ok(trainer.into_parts())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn toy_state(assign: Vec<Option<usize>>, candidates: Vec<Vec<usize>>, cap: Array2<f64>) -> EpisodeState {
        let n = cap.nrows();
        let g = ConnectionGraph::with_assignment(Array2::zeros((n, n)), assign, 1.0).unwrap();
        let inst = Instance { cap: CapacityMatrix::new(cap).unwrap(), candidates };
        EpisodeState::new(g, Arc::new(inst)).unwrap()
    }

    #[test]
    fn legal_action_counts() {
        let cap = Array2::from_elem((4, 3), 1.0);
        let s = toy_state(vec![None, None, Some(0)], vec![vec![3, 1, 0, 2]; 3], cap.clone());
        let actions = legal_actions(&s);
        assert_eq!(actions.len(), 8);
        assert_eq!(actions[0], (0, 0));
        assert_eq!(actions[4], (0, 1));
        let single = toy_state(vec![None, Some(0), Some(0)], vec![vec![2], vec![0], vec![0]], cap);
        assert_eq!(legal_actions(&single), vec![(2, 0)]);
        let done = single.apply((2, 0)).unwrap();
        assert!(legal_actions(&done).is_empty());
        assert!(done.is_terminal());
    }

    #[test]
    fn zero_params_pick_first_action() {
        let cap = Array2::from_elem((2, 2), 1.0);
        let s = toy_state(vec![None, None], vec![vec![1, 0], vec![1, 0]], cap);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = select_action(&GnnParams::zeros(2, 4), &s, 0.0, &mut rng).unwrap();
        assert_eq!(a, (0, 0));
    }

    #[test]
    fn td_target_edge_cases() {
        let cap = array![[4.0, 2.0]];
        let s = toy_state(vec![None, None], vec![vec![0], vec![0]], cap);
        let next = s.apply((0, 0)).unwrap();
        let p = GnnParams::init(1, 2, 4, 0.5).unwrap();
        let mut t = Transition { state: s, action: (0, 0), reward: 2.5, terminal: false, next_state: next };
        assert_eq!(td_target(&p, &t, 0.0).unwrap(), 2.5);
        assert_eq!(td_target(&GnnParams::zeros(2, 4), &t, 1.0).unwrap(), 2.5);
        t.terminal = true;
        assert_eq!(td_target(&p, &t, 1.0).unwrap(), 2.5);
    }

    #[test]
    fn replay_buffer_is_fifo() {
        let cap = array![[1.0]];
        let s = toy_state(vec![None], vec![vec![0]], cap);
        let next = s.apply((0, 0)).unwrap();
        let mut buf = ReplayBuffer::new(3);
        for k in 0..5 {
            buf.push(Transition {
                state: s.clone(),
                action: (0, 0),
                reward: k as f64,
                next_state: next.clone(),
                terminal: true,
            });
            assert!(buf.len() <= 3);
        }
        let rewards: Vec<f64> = buf.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut picked: Vec<f64> = buf.sample(3, &mut rng).iter().map(|t| t.reward).collect();
        picked.sort_by(f64::total_cmp);
        assert_eq!(picked, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn zero_alpha_and_zero_error_leave_params() {
        let cap = array![[4.0, 2.0]];
        let s = toy_state(vec![None, None], vec![vec![0], vec![0]], cap);
        let next = s.apply((0, 0)).unwrap();
        let p = GnnParams::init(4, 2, 4, 0.5).unwrap();
        let q = score_graph(&p, &next.graph, next.cap()).unwrap();
        let t = Transition { state: s, action: (0, 0), reward: q, terminal: true, next_state: next };
        let same = sgd_step(&p, &[&t], 0.3, 1.0, None).unwrap();
        assert_eq!(same.params, p);
        assert_eq!(same.loss, 0.0);
        let t2 = Transition { reward: q + 1.0, ..t };
        let frozen = sgd_step(&p, &[&t2], 0.0, 1.0, None).unwrap();
        assert_eq!(frozen.params, p);
    }

    #[test]
    fn divergence_is_reported() {
        let cap = array![[4.0]];
        let s = toy_state(vec![None], vec![vec![0]], cap);
        let next = s.apply((0, 0)).unwrap();
        let p = GnnParams::init(4, 2, 4, 0.5).unwrap();
        let t = Transition { state: s, action: (0, 0), reward: f64::INFINITY, terminal: true, next_state: next };
        assert!(matches!(sgd_step(&p, &[&t], 0.1, 1.0, None), Err(Error::Diverged(_))));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { epsilon: 1.5, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 9, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { gamma: -0.1, ..Default::default() }.validate().is_err());
        assert!(train(&TrainConfig::default(), &[]).is_err());
    }
}
