//! Learning utilities: running normalization, advantage estimation over
//! asynchronous events, demonstration datasets and tabular SMDP Q-learning.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GpeTable, MonitorGraph, NodeId};
use crate::mdp::{
    action_index, actions_for, legal_actions, mdp_reset, mdp_transition, observe, reward_time_normalized,
    AgentAction, EventState, MdpConfig, ObsNormalizer,
};
use crate::policy::{run_policy, Policy};
use crate::scalar::Scalar;

/// Normalizer epsilon.
pub const EPS: f64 = 1e-8;

/// Streaming mean/variance (Welford) with an exact-order merge.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStat {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl RunningStat {
    pub fn update(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn extend(&mut self, xs: impl IntoIterator<Item = f64>) {
        for x in xs {
            self.update(x);
        }
    }

    /// Combines two shards (Chan et al. pairwise update).
    pub fn merge(&mut self, other: &RunningStat) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (a, b) = (self.count as f64, other.count as f64);
        let n = a + b;
        let delta = other.mean - self.mean;
        self.mean += delta * b / n;
        self.m2 += other.m2 + delta * delta * a * b / n;
        self.count += other.count;
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m2 / self.count as f64
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }

    /// `(x - mean) / (std + EPS)`; identity before the first update.
    pub fn apply(&self, x: f64) -> f64 {
        if self.count == 0 {
            x
        } else {
            (x - self.mean) / (self.std() + EPS)
        }
    }
}

/// Per-agent rollout arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutBatch {
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// `true` where the agent took a decision.
    pub active: Vec<bool>,
    pub dts: Vec<f64>,
    /// Episode ended after the last step; otherwise `bootstrap` is the value
    /// of the state following it.
    pub terminal: bool,
    pub bootstrap: f64,
    pub gamma: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaeOutput {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    fn validate(&self) -> Result<()> {
        let n = self.rewards.len();
        if self.values.len() != n || self.active.len() != n || (!self.dts.is_empty() && self.dts.len() != n) {
            return Err(Error::Range("rollout arrays differ in length".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Range("gamma and lambda must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Advantage estimation that folds the agent's inactive steps into the TD
/// error of its previous decision: with `n+` the next active step and
/// `l = n+ - n - 1`, `d_n = sum_{j<=l} g^j r_{n+j} + g^{l+1} V(n+) - V(n)` and
/// `A_n = d_n + (g lam)^{l+1} A_{n+}`. Inactive steps get 0.
pub fn trans_gae(batch: &RolloutBatch) -> Result<GaeOutput> {
    batch.validate()?;
    let n = batch.rewards.len();
    let (gamma, lambda) = (batch.gamma, batch.lambda);
    let mut advantages = vec![0.0; n];
    let mut returns = vec![0.0; n];
    let mut next: Option<usize> = None;
    for i in (0..n).rev() {
        if !batch.active[i] {
            continue;
        }
        let end = next.unwrap_or(n);
        let mut acc = batch.rewards[i];
        let mut disc = 1.0;
        for j in i + 1..end {
            disc *= gamma;
            acc += disc * batch.rewards[j];
        }
        let reach = disc * gamma;
        let (v_next, a_next) = match next {
            Some(k) => (batch.values[k], advantages[k]),
            None if batch.terminal => (0.0, 0.0),
            None => (batch.bootstrap, 0.0),
        };
        let delta = acc + reach * v_next - batch.values[i];
        let mut trace = gamma * lambda;
        for _ in i + 1..end {
            trace *= gamma * lambda;
        }
        advantages[i] = delta + trace * a_next;
        returns[i] = advantages[i] + batch.values[i];
        next = Some(i);
    }
    Ok(GaeOutput { advantages, returns })
}

/// Discounted returns `G_n = r_n + gamma G_{n+1}` computed from the end.
pub fn mc_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for i in (0..rewards.len()).rev() {
        acc = rewards[i] + gamma * acc;
        out[i] = acc;
    }
    out
}

/// Dataset header: return statistics used for normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoHeader {
    pub gamma: f64,
    pub mean: f64,
    pub std: f64,
    pub eps: f64,
    pub episodes: usize,
    pub observation_normalizer: ObsNormalizer,
}

/// Serialized event state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateRecord {
    pub poses: Vec<(NodeId, NodeId, String)>,
    pub latencies: Vec<String>,
    pub z: String,
    pub eta: String,
    pub clock: String,
}

impl StateRecord {
    pub fn of<S: Scalar>(s: &EventState<S>) -> Self {
        Self {
            poses: s.poses().iter().map(|p| (p.from, p.to, p.remaining.to_string())).collect(),
            latencies: s.latencies().iter().map(ToString::to_string).collect(),
            z: s.z.to_string(),
            eta: s.eta.to_string(),
            clock: s.clock().to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoTuple {
    pub episode: usize,
    pub step: usize,
    pub robot: usize,
    pub observation: Vec<f64>,
    pub state: StateRecord,
    /// Flattened mask index of the action taken.
    pub action: usize,
    pub mask: Vec<bool>,
    pub reward: f64,
    #[serde(rename = "return")]
    pub ret: f64,
    pub normalized_return: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoDataset {
    pub header: DemoHeader,
    pub tuples: Vec<DemoTuple>,
}

impl DemoDataset {
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for t in &self.tuples {
            serde_json::to_writer(&mut out, t)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines();
        let head = lines.next().ok_or_else(|| Error::Parse("empty dataset".into()))??;
        let header: DemoHeader = serde_json::from_str(&head)?;
        let mut tuples = Vec::new();
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                tuples.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { header, tuples })
    }
}

/// Settings of a demonstration run.
#[derive(Clone, Debug)]
pub struct DemoSettings<S> {
    pub episodes: usize,
    pub gamma: f64,
    pub horizon: S,
    pub seed: u64,
    pub gpe_dim: usize,
}

/// Per-episode seed derived from the run seed.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64 + 1);
    rng.gen()
}

/// Rolls out a demonstrator policy and builds normalized-return tuples.
/// Rewards are time-normalized (`z_n Δt_n`); each robot's return runs over
/// all events of the episode, but only its decision steps are stored and
/// enter the return statistics.
pub fn build_demo_dataset<S: Scalar>(
    g: &MonitorGraph<S>,
    cfg: &MdpConfig<S>,
    p0: &[NodeId],
    make_policy: &(dyn Fn() -> Box<dyn Policy<S>> + Sync),
    settings: &DemoSettings<S>,
) -> Result<DemoDataset> {
    let gpe = g.laplacian_gpe(settings.gpe_dim)?;
    let episodes: Vec<_> = (0..settings.episodes)
        .into_par_iter()
        .map(|ep| {
            let mut policy = make_policy();
            let traj = run_policy(g, cfg, p0, policy.as_mut(), &settings.horizon, episode_seed(settings.seed, ep))?;
            let mut shard = ObsNormalizer::default();
            for step in &traj.steps {
                shard.update(g, &step.state);
            }
            Ok((traj, shard))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut normalizer = ObsNormalizer::default();
    for (_, shard) in &episodes {
        normalizer.merge(shard);
    }
    let mut stats = RunningStat::default();
    let mut raw = Vec::new();
    for (ep, (traj, _)) in episodes.iter().enumerate() {
        let rewards: Vec<f64> = traj.steps.iter().map(|s| reward_time_normalized(&s.state, &s.dt).as_f64()).collect();
        let returns = mc_returns(&rewards, settings.gamma);
        for (n, step) in traj.steps.iter().enumerate() {
            let obs = observe(g, cfg, &step.state, &gpe, &normalizer);
            for (robot, pose) in step.state.poses().iter().enumerate() {
                if !pose.is_ready() {
                    continue;
                }
                stats.update(returns[n]);
                let action = action_index(g, cfg, pose.to, step.actions[robot])
                    .ok_or_else(|| Error::Command { event: n, reason: "demonstrator action outside the mask".into() })?;
                raw.push(DemoTuple {
                    episode: ep,
                    step: n,
                    robot,
                    observation: obs[robot].clone(),
                    state: StateRecord::of(&step.state),
                    action,
                    mask: legal_actions(g, cfg, &step.state, robot)?.flat(),
                    reward: rewards[n],
                    ret: returns[n],
                    normalized_return: 0.0,
                });
            }
        }
    }
    let (mean, std) = (stats.mean, stats.std());
    for t in &mut raw {
        t.normalized_return = (t.ret - mean) / (std + EPS);
    }
    Ok(DemoDataset {
        header: DemoHeader { gamma: settings.gamma, mean, std, eps: EPS, episodes: settings.episodes, observation_normalizer: normalizer },
        tuples: raw,
    })
}

/// Abstracted state used as Q-table key.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateKey {
    pub poses: Vec<(NodeId, NodeId, u32)>,
    pub latencies: Vec<u32>,
    pub z: u32,
    pub active: bool,
}

/// Uniform buckets of width `Δ` up to a cap, with one overflow bucket.
#[derive(Clone, Debug, PartialEq)]
pub struct Bucketing<S> {
    pub width: S,
    pub latency_buckets: u32,
    pub z_width: S,
    pub z_buckets: u32,
}

impl<S: Scalar> Bucketing<S> {
    /// Width `Δ`; latency cap `2 · TSP · w_max / w_min` (or `cap`).
    pub fn for_graph(g: &MonitorGraph<S>, delta: &S, cap: Option<&S>) -> Self {
        let two = S::one() + S::one();
        let default_cap = two * g.tsp_tour().1 * g.w_max().clone() / g.w_min().clone();
        let cap = cap.cloned().unwrap_or(default_cap);
        let buckets = |c: &S, w: &S| ((c.clone() / w.clone()).as_f64().ceil().max(1.0)) as u32;
        let z_width = delta.clone() * g.w_min().clone();
        let z_cap = cap.clone() * g.w_max().clone();
        Self { latency_buckets: buckets(&cap, delta), z_buckets: buckets(&z_cap, &z_width), width: delta.clone(), z_width }
    }

    fn bucket(x: &S, width: &S, cap: u32) -> u32 {
        let b = (x.clone() / width.clone()).as_f64().floor();
        if b >= cap as f64 {
            cap
        } else {
            b.max(0.0) as u32
        }
    }

    pub fn key(&self, cfg: &MdpConfig<S>, s: &EventState<S>) -> StateKey {
        StateKey {
            poses: s
                .poses()
                .iter()
                .map(|p| (p.from, p.to, Self::bucket(&p.remaining, &self.width, u32::MAX)))
                .collect(),
            latencies: s.latencies().iter().map(|l| Self::bucket(l, &self.width, self.latency_buckets)).collect(),
            z: Self::bucket(&s.z, &self.z_width, self.z_buckets),
            active: s.active(cfg),
        }
    }
}

/// Joint actions available at `s`, robot-major lexicographic order.
pub fn joint_actions<S: Scalar>(g: &MonitorGraph<S>, cfg: &MdpConfig<S>, s: &EventState<S>) -> Vec<Vec<AgentAction>> {
    let mut out: Vec<Vec<AgentAction>> = vec![Vec::new()];
    for r in 0..s.robots() {
        let options = actions_for(g, cfg, s, r);
        out = out
            .into_iter()
            .flat_map(|prefix| {
                options.iter().map(move |a| {
                    let mut v = prefix.clone();
                    v.push(*a);
                    v
                })
            })
            .collect();
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QConfig {
    /// Number of Q updates.
    pub budget: u64,
    pub alpha: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Discount per unit of physical time.
    pub gamma: f64,
    /// Physical-time length of a training episode.
    pub episode_horizon: f64,
    pub seed: u64,
    /// Abort when the table would exceed this many states.
    pub max_states: usize,
}

impl Default for QConfig {
    fn default() -> Self {
        Self {
            budget: 100_000,
            alpha: 0.5,
            epsilon_start: 0.5,
            epsilon_end: 0.01,
            gamma: 0.98,
            episode_horizon: 50.0,
            seed: 0,
            max_states: 200_000,
        }
    }
}

/// Tabular action values over abstracted states. Values are discounted
/// costs (lower is better).
#[derive(Clone, Debug)]
pub struct QTable<S> {
    pub bucketing: Bucketing<S>,
    pub values: HashMap<StateKey, Vec<f64>>,
    pub updates: u64,
    pub episodes: u64,
}

impl<S: Scalar> QTable<S> {
    pub fn new(bucketing: Bucketing<S>) -> Self {
        Self { bucketing, values: HashMap::new(), updates: 0, episodes: 0 }
    }

    pub fn states(&self) -> usize {
        self.values.len()
    }

    fn best(values: &[f64]) -> f64 {
        values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Indices of minimal entries.
    fn argmins(values: &[f64]) -> Vec<usize> {
        let best = Self::best(values);
        (0..values.len()).filter(|&i| values[i] == best).collect()
    }

    /// Greedy joint action; ties and unseen states fall back to `rng`.
    pub fn greedy(&self, g: &MonitorGraph<S>, cfg: &MdpConfig<S>, s: &EventState<S>, rng: &mut ChaCha8Rng) -> Vec<AgentAction> {
        let options = joint_actions(g, cfg, s);
        let pick = match self.values.get(&self.bucketing.key(cfg, s)) {
            Some(v) => *Self::argmins(v).choose(rng).expect("nonempty"),
            None => rng.gen_range(0..options.len()),
        };
        options[pick].clone()
    }

    /// Greedy action set at `s` (all joint actions attaining the minimum).
    pub fn greedy_set(&self, g: &MonitorGraph<S>, cfg: &MdpConfig<S>, s: &EventState<S>) -> Option<Vec<Vec<AgentAction>>> {
        let v = self.values.get(&self.bucketing.key(cfg, s))?;
        let options = joint_actions(g, cfg, s);
        Some(Self::argmins(v).into_iter().map(|i| options[i].clone()).collect())
    }
}

/// SMDP Q-learning on the event MDP. The cost of a decision epoch is the
/// time-normalized tracker over its interval, `z_{n+1} Δt_n`, and the
/// successor value is discounted by `gamma^{Δt_n}`.
pub fn smdp_q_learn<S: Scalar>(
    g: &MonitorGraph<S>,
    cfg: &MdpConfig<S>,
    p0: &[NodeId],
    qc: &QConfig,
    latency_cap: Option<&S>,
) -> Result<QTable<S>> {
    if cfg.horizon_t.is_none() {
        return Err(Error::Config("learning requires a finite evaluation start T".into()));
    }
    if !(qc.episode_horizon > 0.0) {
        return Err(Error::Config("episode_horizon must be positive".into()));
    }
    let horizon = S::from_f64(qc.episode_horizon).ok_or_else(|| Error::Config("bad episode horizon".into()))?;
    let horizon = if S::is_exact() {
        S::parse_literal(&format!("{}", qc.episode_horizon)).unwrap_or(horizon)
    } else {
        horizon
    };
    let mut table = QTable::new(Bucketing::for_graph(g, &cfg.delta, latency_cap));
    let mut rng = ChaCha8Rng::seed_from_u64(qc.seed);
    while table.updates < qc.budget {
        let mut s = mdp_reset(g, p0, cfg)?;
        table.episodes += 1;
        let mut episode = Vec::new();
        while *s.clock() < horizon && table.updates + (episode.len() as u64) < qc.budget {
            let key = table.bucketing.key(cfg, &s);
            let options = joint_actions(g, cfg, &s);
            if !table.values.contains_key(&key) && table.values.len() >= qc.max_states {
                return Err(Error::Limit(format!(
                    "Q-table reached {} states; coarsen the bucketing or raise max_states",
                    qc.max_states
                )));
            }
            let entry = table.values.entry(key.clone()).or_insert_with(|| vec![0.0; options.len()]);
            let progress = table.updates as f64 / qc.budget.max(1) as f64;
            let epsilon = qc.epsilon_start + (qc.epsilon_end - qc.epsilon_start) * progress;
            let pick = if rng.gen::<f64>() < epsilon {
                rng.gen_range(0..options.len())
            } else {
                *QTable::<S>::argmins(entry).choose(&mut rng).expect("nonempty")
            };
            // the last epoch runs to completion so that the bootstrap state is
            // an ordinary decision state rather than a mid-edge cut
            let tr = mdp_transition(g, cfg, &s, &options[pick])?;
            let dt = tr.dt.as_f64();
            let next_key = table.bucketing.key(cfg, &tr.next);
            episode.push((key, pick, tr.next.z.as_f64() * dt, dt, next_key));
            s = tr.next;
        }
        // sweeping the episode backwards carries the end of the episode
        // into its start within one pass
        for (key, pick, cost, dt, next_key) in episode.into_iter().rev() {
            let next_best = table.values.get(&next_key).map_or(0.0, |v| QTable::<S>::best(v));
            let target = cost + qc.gamma.powf(dt) * next_best;
            let q = &mut table.values.get_mut(&key).expect("inserted during the episode")[pick];
            *q += qc.alpha * (target - *q);
            table.updates += 1;
        }
    }
    Ok(table)
}

/// Greedy policy of a learned table.
#[derive(Clone, Debug)]
pub struct QPolicy<S> {
    pub table: QTable<S>,
    rng: ChaCha8Rng,
}

impl<S: Scalar> QPolicy<S> {
    pub fn new(table: QTable<S>) -> Self {
        Self { table, rng: ChaCha8Rng::seed_from_u64(0) }
    }
}

impl<S: Scalar> Policy<S> for QPolicy<S> {
    fn name(&self) -> String {
        "qtable".into()
    }

    fn reset(&mut self, _g: &MonitorGraph<S>, _cfg: &MdpConfig<S>, _s0: &EventState<S>, seed: u64) -> Result<()> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(())
    }

    fn decide(&mut self, g: &MonitorGraph<S>, cfg: &MdpConfig<S>, s: &EventState<S>) -> Result<Vec<AgentAction>> {
        Ok(self.table.greedy(g, cfg, s, &mut self.rng))
    }
}

/// GPE table helper shared by dataset consumers.
pub fn gpe_for<S: Scalar>(g: &MonitorGraph<S>, dim: usize) -> Result<GpeTable> {
    g.laplacian_gpe(dim)
}
