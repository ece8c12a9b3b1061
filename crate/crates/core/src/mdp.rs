//! Event-driven MDP over the monitoring world.
//!
//! A state carries robot poses, node latencies, the tracker `z` (running
//! supremum of the worst weighted latency since the evaluation start `T`)
//! and the elapsed time `eta`, which saturates at `T`. Decisions happen only
//! at events; an extra event is inserted when the elapsed time reaches `T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GpeTable, MonitorGraph, NodeId};
use crate::learn::RunningStat;
use crate::scalar::{smax, smin, Scalar};
use crate::world::{advance, apply_commands, Command, EventLog, RobotPose, StepOutcome, Visit, WorldState};

/// How the counterfactual branch replaces the credited robot's action.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// The robot stays at its node for the realized interval and its visits
    /// are not counted; only other robots refresh latencies.
    #[default]
    HoldUnseen,
    /// The robot waits at its node for the realized interval, keeping that
    /// node occupied.
    HoldAndVisit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MdpConfig<S> {
    /// Evaluation start `T`; `None` means evaluation never starts.
    pub horizon_t: Option<S>,
    /// Wait resolution `Δ`.
    pub delta: S,
    /// Waits are `Δ, 2Δ, ..., kappa_max·Δ`.
    pub kappa_max: u32,
    pub lambda_l: S,
    pub lambda_z: S,
    pub baseline: Baseline,
}

impl<S: Scalar> MdpConfig<S> {
    pub fn new(horizon_t: Option<S>, delta: S, kappa_max: u32) -> Result<Self> {
        let cfg = Self { horizon_t, delta, kappa_max, lambda_l: S::one(), lambda_z: S::one(), baseline: Baseline::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > S::zero()) {
            return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
        }
        if self.kappa_max == 0 {
            return Err(Error::Config("kappa_max must be at least 1".into()));
        }
        if matches!(&self.horizon_t, Some(t) if *t < S::zero()) {
            return Err(Error::Config("T must be nonnegative".into()));
        }
        if self.lambda_l < S::zero() || self.lambda_z < S::zero() {
            return Err(Error::Config("credit weights must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn tau_max(&self) -> S {
        self.delta.clone() * S::from_count(self.kappa_max as usize)
    }

    pub fn wait(&self, k: u32) -> S {
        self.delta.clone() * S::from_count(k as usize)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EventState<S> {
    pub world: WorldState<S>,
    pub z: S,
    pub eta: S,
    /// Time each robot reached its current node; orders co-located robots.
    pub arrived_at: Vec<S>,
}

impl<S: Scalar> EventState<S> {
    pub fn poses(&self) -> &[RobotPose<S>] {
        &self.world.poses
    }

    pub fn latencies(&self) -> &[S] {
        &self.world.latencies
    }

    pub fn clock(&self) -> &S {
        &self.world.clock
    }

    pub fn robots(&self) -> usize {
        self.world.poses.len()
    }

    /// `true` once the elapsed time has reached `T`.
    pub fn active(&self, cfg: &MdpConfig<S>) -> bool {
        matches!(&cfg.horizon_t, Some(t) if self.eta == *t)
    }
}

/// Per-robot action: move to a neighbor, wait `k·Δ`, or continue (busy robots).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentAction {
    Move(NodeId),
    Wait(u32),
    Noop,
}

/// Legal-action mask; flattened layout is moves (adjacency order), waits
/// (`1..=kappa_max`), then no-op.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionMask {
    pub moves: Vec<bool>,
    pub waits: Vec<bool>,
    pub noop: bool,
}

impl ActionMask {
    pub fn flat(&self) -> Vec<bool> {
        let mut out = self.moves.clone();
        out.extend_from_slice(&self.waits);
        out.push(self.noop);
        out
    }

    pub fn len(&self) -> usize {
        self.moves.len() + self.waits.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn mdp_reset<S: Scalar>(g: &MonitorGraph<S>, p0: &[NodeId], cfg: &MdpConfig<S>) -> Result<EventState<S>> {
    cfg.validate()?;
    let world = crate::world::world_reset(g, p0)?;
    Ok(EventState { arrived_at: vec![S::zero(); p0.len()], world, z: S::zero(), eta: S::zero() })
}

pub fn legal_actions<S: Scalar>(g: &MonitorGraph<S>, cfg: &MdpConfig<S>, s: &EventState<S>, robot: usize) -> Result<ActionMask> {
    let p = s.poses().get(robot).ok_or_else(|| Error::Range(format!("robot {robot}")))?;
    let ready = p.is_ready();
    let deg = g.degree(p.to);
    Ok(ActionMask { moves: vec![ready; deg], waits: vec![ready; cfg.kappa_max as usize], noop: !ready })
}

/// Legal actions of one robot in flattened-mask order.
pub fn actions_for<S: Scalar>(g: &MonitorGraph<S>, cfg: &MdpConfig<S>, s: &EventState<S>, robot: usize) -> Vec<AgentAction> {
    let p = &s.poses()[robot];
    if !p.is_ready() {
        return vec![AgentAction::Noop];
    }
    let mut out: Vec<AgentAction> = g.neighbors(p.to).iter().map(|&(x, _)| AgentAction::Move(x)).collect();
    out.extend((1..=cfg.kappa_max).map(AgentAction::Wait));
    out
}

/// Action at a flattened mask index (moves, waits, no-op).
pub fn action_at<S: Scalar>(g: &MonitorGraph<S>, cfg: &MdpConfig<S>, node: NodeId, index: usize) -> Option<AgentAction> {
    let deg = g.degree(node);
    let k = cfg.kappa_max as usize;
    if index < deg {
        Some(AgentAction::Move(g.neighbors(node)[index].0))
    } else if index < deg + k {
        Some(AgentAction::Wait((index - deg + 1) as u32))
    } else if index == deg + k {
        Some(AgentAction::Noop)
    } else {
        None
    }
}

/// Flattened mask index of an action taken at `node`.
pub fn action_index<S: Scalar>(g: &MonitorGraph<S>, cfg: &MdpConfig<S>, node: NodeId, a: AgentAction) -> Option<usize> {
    let deg = g.degree(node);
    match a {
        AgentAction::Move(x) => g.neighbors(node).iter().position(|&(y, _)| y == x),
        AgentAction::Wait(k) if k >= 1 && k <= cfg.kappa_max => Some(deg + k as usize - 1),
        AgentAction::Wait(_) => None,
        AgentAction::Noop => Some(deg + cfg.kappa_max as usize),
    }
}

/// Translates a joint action into world commands, checking masks.
pub fn commands_for<S: Scalar>(
    g: &MonitorGraph<S>,
    cfg: &MdpConfig<S>,
    s: &EventState<S>,
    joint: &[AgentAction],
) -> Result<Vec<Option<Command<S>>>> {
    if joint.len() != s.robots() {
        return Err(Error::Command { event: 0, reason: format!("{} actions for {} robots", joint.len(), s.robots()) });
    }
    joint
        .iter()
        .zip(s.poses())
        .enumerate()
        .map(|(r, (a, p))| match (p.is_ready(), a) {
            (false, AgentAction::Noop) => Ok(None),
            (true, AgentAction::Move(x)) if g.edge_between(p.to, *x).is_some() => Ok(Some(Command::Move(*x))),
            (true, AgentAction::Wait(k)) if *k >= 1 && *k <= cfg.kappa_max => Ok(Some(Command::Wait(cfg.wait(*k)))),
            _ => Err(Error::Command { event: 0, reason: format!("robot {r}: action {a:?} violates the mask") }),
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct Transition<S> {
    pub next: EventState<S>,
    pub dt: S,
    pub commands: Vec<Option<Command<S>>>,
    pub outcome: StepOutcome<S>,
}

fn interval_length<S: Scalar>(cfg: &MdpConfig<S>, s: &EventState<S>, committed: &[RobotPose<S>], cap: Option<&S>) -> Result<S> {
    let mut dt: Option<S> = cap.cloned();
    if let Some(t) = &cfg.horizon_t {
        if s.eta < *t {
            let left = t.clone() - s.eta.clone();
            dt = Some(dt.map_or(left.clone(), |d| smin(d, left)));
        }
    }
    for p in committed {
        dt = Some(dt.map_or(p.remaining.clone(), |d| smin(d, p.remaining.clone())));
    }
    match dt {
        Some(d) if d > S::zero() => Ok(d),
        Some(d) => Err(Error::Command { event: 0, reason: format!("nonpositive interval {d}") }),
        None => Err(Error::Command { event: 0, reason: "no robots and no evaluation start to advance to".into() }),
    }
}

/// New `(eta, z)` after an interval of length `dt` whose supremum of the
/// worst weighted latency is `interval_sup` and which ends with worst
/// weighted latency `m_next`.
fn track<S: Scalar>(cfg: &MdpConfig<S>, s: &EventState<S>, dt: &S, interval_sup: &S, m_next: &S) -> (S, S) {
    match &cfg.horizon_t {
        None => (s.eta.clone() + dt.clone(), S::zero()),
        Some(t) => {
            let eta = smin(s.eta.clone() + dt.clone(), t.clone());
            let z = if eta < *t {
                S::zero()
            } else if s.eta < *t {
                // the window starts exactly at this event
                m_next.clone()
            } else {
                smax(s.z.clone(), interval_sup.clone())
            };
            (eta, z)
        }
    }
}

pub fn mdp_transition<S: Scalar>(g: &MonitorGraph<S>, cfg: &MdpConfig<S>, s: &EventState<S>, joint: &[AgentAction]) -> Result<Transition<S>> {
    mdp_transition_capped(g, cfg, s, joint, None)
}

/// Transition whose interval is additionally capped at `cap` (used to stop
/// rollouts at a physical-time horizon).
pub fn mdp_transition_capped<S: Scalar>(
    g: &MonitorGraph<S>,
    cfg: &MdpConfig<S>,
    s: &EventState<S>,
    joint: &[AgentAction],
    cap: Option<&S>,
) -> Result<Transition<S>> {
    let commands = commands_for(g, cfg, s, joint)?;
    let committed = apply_commands(g, s.poses(), &commands)?;
    let dt = interval_length(cfg, s, &committed, cap)?;
    let iv = advance(g.weights(), &committed, s.latencies(), &dt, None);
    let clock = s.clock().clone() + dt.clone();
    let world = WorldState { poses: iv.poses, latencies: iv.latencies, clock: clock.clone() };
    let m_next = world.worst_weighted(g.weights());
    let (eta, z) = track(cfg, s, &dt, &iv.interval_sup, &m_next);
    let arrived_at = committed
        .iter()
        .zip(&world.poses)
        .zip(&s.arrived_at)
        .map(|((before, after), old)| if !before.is_stationary() && after.is_ready() { clock.clone() } else { old.clone() })
        .collect();
    let outcome = StepOutcome {
        visits: iv.visited.iter().map(|&node| Visit { node, t: clock.clone() }).collect(),
        state: world.clone(),
        dt: dt.clone(),
        interval_sup: iv.interval_sup,
        occupied: iv.occupied,
        committed,
    };
    Ok(Transition { next: EventState { world, z, eta, arrived_at }, dt, commands, outcome })
}

/// `R_n = z_n`.
pub fn reward_step<S: Scalar>(s: &EventState<S>) -> S {
    s.z.clone()
}

/// `z_n · Δt_n`.
pub fn reward_time_normalized<S: Scalar>(s: &EventState<S>, dt: &S) -> S {
    s.z.clone() * dt.clone()
}

/// One decision epoch of a rollout.
#[derive(Clone, Debug)]
pub struct MdpStep<S> {
    pub state: EventState<S>,
    pub actions: Vec<AgentAction>,
    pub dt: S,
}

#[derive(Clone, Debug)]
pub struct Trajectory<S> {
    pub steps: Vec<MdpStep<S>>,
    pub final_state: EventState<S>,
    pub log: EventLog<S>,
}

impl<S: Scalar> Trajectory<S> {
    /// Tracker after step `n`, i.e. `z_{n+1}`.
    pub fn z_after(&self, n: usize) -> &S {
        self.steps.get(n + 1).map_or(&self.final_state.z, |s| &s.state.z)
    }
}

/// Runs `decide` from `s0` until the clock reaches `horizon`.
pub fn rollout<S: Scalar>(
    g: &MonitorGraph<S>,
    cfg: &MdpConfig<S>,
    s0: EventState<S>,
    horizon: &S,
    mut decide: impl FnMut(&EventState<S>) -> Result<Vec<AgentAction>>,
) -> Result<Trajectory<S>> {
    let mut log = EventLog::start(g, s0.world.clone());
    let mut steps = Vec::new();
    let mut s = s0;
    while s.clock() < horizon {
        let n = steps.len();
        let joint = decide(&s).map_err(|e| e.at_event(n))?;
        let left = horizon.clone() - s.clock().clone();
        let tr = mdp_transition_capped(g, cfg, &s, &joint, Some(&left)).map_err(|e| e.at_event(n))?;
        log.push(tr.commands, &tr.outcome);
        steps.push(MdpStep { state: s, actions: joint, dt: tr.dt });
        s = tr.next;
    }
    Ok(Trajectory { steps, final_state: s, log })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    /// `(1/N) Σ z`.
    Step,
    /// `Σ z Δt / Σ Δt`.
    TimeNormalized,
}

/// Average-reward estimate over a trajectory. Each step contributes the
/// tracker at the end of its interval, so step `n` weighs `z_{n+1}` with
/// `Δt_n`.
pub fn average_reward_estimate<S: Scalar>(traj: &Trajectory<S>, mode: EstimatorMode) -> Option<S> {
    if traj.steps.is_empty() {
        return None;
    }
    let mut num = S::zero();
    let mut den = S::zero();
    for (n, step) in traj.steps.iter().enumerate() {
        let z = traj.z_after(n).clone();
        match mode {
            EstimatorMode::Step => {
                num = num + z;
                den = den + S::one();
            }
            EstimatorMode::TimeNormalized => {
                num = num + z * step.dt.clone();
                den = den + step.dt.clone();
            }
        }
    }
    Some(num / den)
}

/// Difference-reward credit of one robot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Credit<S> {
    pub r_l: S,
    pub r_z: S,
    pub combined: S,
}

/// Marginal contribution of ready robot `r`: the transition is recomputed
/// with `r` replaced by the configured baseline over the same interval, and
/// the increase of weighted latencies (`R_L`) and of the tracker (`R_z`) is
/// reported.
pub fn counterfactual_rewards<S: Scalar>(
    g: &MonitorGraph<S>,
    cfg: &MdpConfig<S>,
    s: &EventState<S>,
    joint: &[AgentAction],
    r: usize,
) -> Result<Credit<S>> {
    let pose = s.poses().get(r).ok_or_else(|| Error::Range(format!("robot {r}")))?;
    if !pose.is_ready() {
        return Err(Error::Command { event: 0, reason: format!("robot {r} is busy; credit is defined for ready robots") });
    }
    let commands = commands_for(g, cfg, s, joint)?;
    let committed = apply_commands(g, s.poses(), &commands)?;
    let dt = interval_length(cfg, s, &committed, None)?;
    let w = g.weights();
    let factual = advance(w, &committed, s.latencies(), &dt, None);
    let counter = match cfg.baseline {
        Baseline::HoldUnseen => advance(w, &committed, s.latencies(), &dt, Some(r)),
        Baseline::HoldAndVisit => {
            let mut alt = committed.clone();
            alt[r] = RobotPose { from: pose.to, to: pose.to, remaining: dt.clone() };
            advance(w, &alt, s.latencies(), &dt, None)
        }
    };
    let worst = |lat: &[S]| w.iter().zip(lat).fold(S::zero(), |m, (w, l)| smax(m, w.clone() * l.clone()));
    let (_, z_f) = track(cfg, s, &dt, &factual.interval_sup, &worst(&factual.latencies));
    let (_, z_c) = track(cfg, s, &dt, &counter.interval_sup, &worst(&counter.latencies));
    let r_l = w
        .iter()
        .zip(counter.latencies.iter().zip(&factual.latencies))
        .fold(S::zero(), |acc, (w, (c, f))| acc + w.clone() * (c.clone() - f.clone()));
    let r_z = z_c - z_f;
    let combined = cfg.lambda_l.clone() * r_l.clone() + cfg.lambda_z.clone() * r_z.clone();
    Ok(Credit { r_l, r_z, combined })
}

/// Decision-order labels: ready robots sharing a node are ranked by arrival
/// time, then robot index, starting at 1; busy robots get 0.
pub fn role_labels<S: Scalar>(s: &EventState<S>) -> Vec<usize> {
    let poses = s.poses();
    (0..poses.len())
        .map(|i| {
            if !poses[i].is_ready() {
                return 0;
            }
            1 + (0..poses.len())
                .filter(|&j| {
                    j != i
                        && poses[j].is_ready()
                        && poses[j].to == poses[i].to
                        && (s.arrived_at[j] < s.arrived_at[i] || (s.arrived_at[j] == s.arrived_at[i] && j < i))
                })
                .count()
        })
        .collect()
}

/// Running statistics feeding the observation map.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub log_z: RunningStat,
    pub latency: RunningStat,
    pub remaining: RunningStat,
}

impl ObsNormalizer {
    pub fn update<S: Scalar>(&mut self, g: &MonitorGraph<S>, s: &EventState<S>) {
        self.log_z.update(s.z.as_f64().ln_1p());
        for (w, l) in g.weights().iter().zip(s.latencies()) {
            self.latency.update((w.clone() * l.clone()).as_f64());
        }
        for p in s.poses() {
            self.remaining.update(p.remaining.as_f64());
        }
    }

    pub fn merge(&mut self, other: &ObsNormalizer) {
        self.log_z.merge(&other.log_z);
        self.latency.merge(&other.latency);
        self.remaining.merge(&other.remaining);
    }
}

/// Length of each robot's feature vector.
pub fn observation_len(nodes: usize, robots: usize, gpe_dim: usize) -> usize {
    2 * gpe_dim + 1 + nodes + robots + 1 + robots + robots + 1
}

/// Per-robot features: GPE of the pose endpoints, normalized `log(1+z)`,
/// normalized weighted latencies, normalized remaining durations, `eta/T`,
/// readiness flags, and the robot's one-hot decision-order label.
pub fn observe<S: Scalar>(
    g: &MonitorGraph<S>,
    cfg: &MdpConfig<S>,
    s: &EventState<S>,
    gpe: &GpeTable,
    norm: &ObsNormalizer,
) -> Vec<Vec<f64>> {
    let k = s.robots();
    let labels = role_labels(s);
    let progress = match &cfg.horizon_t {
        None => 0.0,
        Some(t) if t.is_zero() => 1.0,
        Some(t) => (s.eta.clone() / t.clone()).as_f64(),
    };
    let shared: Vec<f64> = std::iter::once(norm.log_z.apply(s.z.as_f64().ln_1p()))
        .chain(g.weights().iter().zip(s.latencies()).map(|(w, l)| norm.latency.apply((w.clone() * l.clone()).as_f64())))
        .chain(s.poses().iter().map(|p| norm.remaining.apply(p.remaining.as_f64())))
        .chain(std::iter::once(progress))
        .chain(s.poses().iter().map(|p| if p.is_ready() { 1.0 } else { 0.0 }))
        .collect();
    s.poses()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut f = Vec::with_capacity(observation_len(g.node_count(), k, gpe.dim()));
            f.extend_from_slice(gpe.row(p.from));
            f.extend_from_slice(gpe.row(p.to));
            f.extend_from_slice(&shared);
            f.extend((0..=k).map(|l| if l == labels[i] { 1.0 } else { 0.0 }));
            f
        })
        .collect()
}
