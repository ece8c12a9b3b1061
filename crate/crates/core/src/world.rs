//! Exact event-driven simulation of robots, visits and node latencies.
//!
//! Between two consecutive events every robot either traverses an edge at
//! unit speed or waits at a node, so each latency is piecewise linear with
//! slope 1 and drops to 0 at visits. A node is visited when a robot arrives
//! at it, departs from it, or stays on it; a node occupied by a stationary
//! robot keeps latency 0 for the whole interval.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{MonitorGraph, NodeId};
use crate::scalar::{smax, smin, Scalar};

/// Robot location: traversing `from -> to` with `remaining` time left, or
/// stationary at `from == to` (waiting while `remaining > 0`).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RobotPose<S> {
    pub from: NodeId,
    pub to: NodeId,
    pub remaining: S,
}

impl<S: Scalar> RobotPose<S> {
    /// Ready at node `v`.
    pub fn at(v: NodeId) -> Self {
        Self { from: v, to: v, remaining: S::zero() }
    }

    pub fn is_ready(&self) -> bool {
        self.remaining.is_zero()
    }

    pub fn is_stationary(&self) -> bool {
        self.from == self.to
    }

    /// Node the robot is standing on, if any.
    pub fn node(&self) -> Option<NodeId> {
        (self.is_stationary() || self.is_ready()).then_some(self.to)
    }
}

/// Decision for a ready robot.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Command<S> {
    Move(NodeId),
    Wait(S),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct WorldState<S> {
    pub poses: Vec<RobotPose<S>>,
    pub latencies: Vec<S>,
    pub clock: S,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Visit<S> {
    pub node: NodeId,
    pub t: S,
}

/// Fresh world: clock 0, all latencies 0, robots ready at `p0`.
pub fn world_reset<S: Scalar>(g: &MonitorGraph<S>, p0: &[NodeId]) -> Result<WorldState<S>> {
    if let Some(&v) = p0.iter().find(|&&v| v >= g.node_count()) {
        return Err(Error::UnknownNode(format!("index {v}")));
    }
    Ok(WorldState {
        poses: p0.iter().map(|&v| RobotPose::at(v)).collect(),
        latencies: vec![S::zero(); g.node_count()],
        clock: S::zero(),
    })
}

impl<S: Scalar> WorldState<S> {
    /// Arbitrary starting configuration, e.g. robots inside edges or nonzero
    /// initial latencies. Arrived robots are normalized to ready poses.
    pub fn custom(g: &MonitorGraph<S>, poses: Vec<RobotPose<S>>, latencies: Vec<S>, clock: S) -> Result<Self> {
        if latencies.len() != g.node_count() {
            return Err(Error::Range("latency vector length differs from node count".into()));
        }
        if clock < S::zero() {
            return Err(Error::Range("negative clock".into()));
        }
        let mut out = Vec::with_capacity(poses.len());
        for p in poses {
            if p.from >= g.node_count() || p.to >= g.node_count() {
                return Err(Error::UnknownNode(format!("index {}", p.from.max(p.to))));
            }
            if p.remaining < S::zero() {
                return Err(Error::Range("negative remaining duration".into()));
            }
            if p.from != p.to {
                let len = g
                    .edge_length(p.from, p.to)
                    .ok_or_else(|| Error::Range(format!("no edge ({},{})", g.id(p.from), g.id(p.to))))?;
                if p.remaining > *len {
                    return Err(Error::Range("remaining exceeds edge length".into()));
                }
            }
            out.push(if p.is_ready() { RobotPose::at(p.to) } else { p });
        }
        for (v, l) in latencies.iter().enumerate() {
            if *l < S::zero() || *l > clock {
                return Err(Error::Range(format!("latency of `{}` outside [0, clock]", g.id(v))));
            }
        }
        let state = Self { poses: out, latencies, clock };
        if state.occupied(g.node_count()).iter().zip(&state.latencies).any(|(o, l)| *o && !l.is_zero()) {
            return Err(Error::Range("occupied node with nonzero latency".into()));
        }
        Ok(state)
    }

    pub fn ready(&self) -> Vec<bool> {
        self.poses.iter().map(RobotPose::is_ready).collect()
    }

    /// Nodes with a robot standing on them.
    pub fn occupied(&self, n: usize) -> Vec<bool> {
        let mut occ = vec![false; n];
        for p in &self.poses {
            if let Some(v) = p.node() {
                occ[v] = true;
            }
        }
        occ
    }

    /// `max_v w(v) L_v`.
    pub fn worst_weighted(&self, weights: &[S]) -> S {
        weighted_max(weights, &self.latencies)
    }
}

fn weighted_max<S: Scalar>(weights: &[S], latencies: &[S]) -> S {
    weights.iter().zip(latencies).fold(S::zero(), |m, (w, l)| smax(m, w.clone() * l.clone()))
}

/// Result of advancing the world by one event interval.
#[derive(Clone, Debug)]
pub struct StepOutcome<S> {
    pub state: WorldState<S>,
    pub dt: S,
    pub visits: Vec<Visit<S>>,
    /// Supremum of the worst weighted latency over `(t_n, t_{n+1}]`.
    pub interval_sup: S,
    /// Nodes held at latency 0 by a stationary robot during the interval.
    pub occupied: Vec<bool>,
    /// Poses right after the commands were applied.
    pub committed: Vec<RobotPose<S>>,
}

/// Applies commands to ready robots; busy robots must get `None`.
pub fn apply_commands<S: Scalar>(
    g: &MonitorGraph<S>,
    poses: &[RobotPose<S>],
    commands: &[Option<Command<S>>],
) -> Result<Vec<RobotPose<S>>> {
    if commands.len() != poses.len() {
        return Err(Error::Command { event: 0, reason: format!("{} commands for {} robots", commands.len(), poses.len()) });
    }
    poses
        .iter()
        .zip(commands)
        .enumerate()
        .map(|(r, (p, c))| match (p.is_ready(), c) {
            (false, None) => Ok(p.clone()),
            (false, Some(_)) => Err(Error::Command { event: 0, reason: format!("robot {r} is busy") }),
            (true, None) => Err(Error::Command { event: 0, reason: format!("robot {r} is ready but has no command") }),
            (true, Some(Command::Move(x))) => {
                let len = g.edge_length(p.to, *x).ok_or_else(|| Error::Command {
                    event: 0,
                    reason: format!("robot {r}: `{}` is not adjacent to `{}`", g.id(*x.min(&(g.node_count() - 1))), g.id(p.to)),
                })?;
                Ok(RobotPose { from: p.to, to: *x, remaining: len.clone() })
            }
            (true, Some(Command::Wait(d))) => {
                if *d > S::zero() {
                    Ok(RobotPose { from: p.to, to: p.to, remaining: d.clone() })
                } else {
                    Err(Error::Command { event: 0, reason: format!("robot {r}: wait duration {d} is not positive") })
                }
            }
        })
        .collect()
}

/// Latency bookkeeping over one interval of length `dt` with committed poses.
/// Robot `skip` (if any) still moves but is invisible to latency accounting.
pub(crate) struct Interval<S> {
    pub latencies: Vec<S>,
    pub interval_sup: S,
    pub visited: Vec<NodeId>,
    pub occupied: Vec<bool>,
    pub poses: Vec<RobotPose<S>>,
}

pub(crate) fn advance<S: Scalar>(
    weights: &[S],
    committed: &[RobotPose<S>],
    latencies: &[S],
    dt: &S,
    skip: Option<usize>,
) -> Interval<S> {
    let n = weights.len();
    let mut occupied = vec![false; n];
    let mut visited = vec![false; n];
    for (r, p) in committed.iter().enumerate() {
        if Some(r) == skip {
            continue;
        }
        if p.is_stationary() {
            occupied[p.from] = true;
            visited[p.from] = true;
        } else if p.remaining == *dt {
            visited[p.to] = true;
        }
    }
    let mut sup = S::zero();
    let mut next = Vec::with_capacity(n);
    for v in 0..n {
        if occupied[v] {
            next.push(S::zero());
        } else {
            let l = latencies[v].clone() + dt.clone();
            sup = smax(sup, weights[v].clone() * l.clone());
            next.push(if visited[v] { S::zero() } else { l });
        }
    }
    let poses = committed
        .iter()
        .map(|p| {
            let remaining = p.remaining.clone() - dt.clone();
            if remaining.is_zero() {
                RobotPose::at(p.to)
            } else {
                RobotPose { from: p.from, to: p.to, remaining }
            }
        })
        .collect();
    Interval {
        latencies: next,
        interval_sup: sup,
        visited: (0..n).filter(|&v| visited[v]).collect(),
        occupied,
        poses,
    }
}

/// Advances to the next event: the earliest segment completion, or `limit`
/// time units if that comes first.
pub fn world_step<S: Scalar>(
    g: &MonitorGraph<S>,
    state: &WorldState<S>,
    commands: &[Option<Command<S>>],
    limit: Option<&S>,
) -> Result<StepOutcome<S>> {
    let committed = apply_commands(g, &state.poses, commands)?;
    let mut dt: Option<S> = limit.cloned();
    for p in &committed {
        dt = Some(match dt {
            None => p.remaining.clone(),
            Some(d) => smin(d, p.remaining.clone()),
        });
    }
    let dt = dt.ok_or_else(|| Error::Command { event: 0, reason: "no robots and no time limit".into() })?;
    if !(dt > S::zero()) {
        return Err(Error::Command { event: 0, reason: format!("nonpositive interval {dt}") });
    }
    let iv = advance(g.weights(), &committed, &state.latencies, &dt, None);
    let clock = state.clock.clone() + dt.clone();
    Ok(StepOutcome {
        visits: iv.visited.iter().map(|&node| Visit { node, t: clock.clone() }).collect(),
        state: WorldState { poses: iv.poses, latencies: iv.latencies, clock },
        dt,
        interval_sup: iv.interval_sup,
        occupied: iv.occupied,
        committed,
    })
}

/// One logged event: the state at `t` (before decisions), the decisions,
/// and the interval that followed.
#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord<S> {
    pub t: S,
    pub poses: Vec<RobotPose<S>>,
    pub latencies: Vec<S>,
    pub commands: Vec<Option<Command<S>>>,
    pub dt: S,
    pub occupied: Vec<bool>,
}

/// Complete record of one rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct EventLog<S> {
    pub weights: Vec<S>,
    pub initial: WorldState<S>,
    pub records: Vec<EventRecord<S>>,
    pub final_state: WorldState<S>,
    pub visits: Vec<Visit<S>>,
}

impl<S: Scalar> EventLog<S> {
    pub fn start(g: &MonitorGraph<S>, initial: WorldState<S>) -> Self {
        let occ = initial.occupied(g.node_count());
        let visits = (0..g.node_count())
            .filter(|&v| occ[v])
            .map(|node| Visit { node, t: initial.clock.clone() })
            .collect();
        Self { weights: g.weights().to_vec(), final_state: initial.clone(), initial, records: Vec::new(), visits }
    }

    pub fn push(&mut self, commands: Vec<Option<Command<S>>>, outcome: &StepOutcome<S>) {
        let pre = &self.final_state;
        self.records.push(EventRecord {
            t: pre.clock.clone(),
            poses: pre.poses.clone(),
            latencies: pre.latencies.clone(),
            commands,
            dt: outcome.dt.clone(),
            occupied: outcome.occupied.clone(),
        });
        self.visits.extend(outcome.visits.iter().cloned());
        self.final_state = outcome.state.clone();
    }

    /// Steps the world from the log's final state and records the event.
    pub fn step(&mut self, g: &MonitorGraph<S>, commands: Vec<Option<Command<S>>>, limit: Option<&S>) -> Result<()> {
        let outcome = world_step(g, &self.final_state, &commands, limit).map_err(|e| e.at_event(self.records.len()))?;
        self.push(commands, &outcome);
        Ok(())
    }

    pub fn start_time(&self) -> &S {
        &self.initial.clock
    }

    pub fn horizon(&self) -> &S {
        &self.final_state.clock
    }

    /// Event times `t_0, ..., t_N` (the last one is the final clock).
    pub fn event_times(&self) -> Vec<S> {
        let mut ts: Vec<S> = self.records.iter().map(|r| r.t.clone()).collect();
        ts.push(self.final_state.clock.clone());
        ts
    }

    /// World state at event index `i` (`i == records.len()` is the final state).
    pub fn state_at_event(&self, i: usize) -> Option<WorldState<S>> {
        if i == self.records.len() {
            return Some(self.final_state.clone());
        }
        self.records.get(i).map(|r| WorldState { poses: r.poses.clone(), latencies: r.latencies.clone(), clock: r.t.clone() })
    }

    fn check_time(&self, t: &S) -> Result<()> {
        if *t < self.initial.clock || *t > self.final_state.clock {
            Err(Error::Range(format!("time {t} outside logged window [{}, {}]", self.initial.clock, self.final_state.clock)))
        } else {
            Ok(())
        }
    }

    /// Latencies of all nodes at time `t`.
    pub fn latencies_at(&self, t: &S) -> Result<Vec<S>> {
        self.check_time(t)?;
        if *t == self.final_state.clock {
            return Ok(self.final_state.latencies.clone());
        }
        let idx = self.records.partition_point(|r| r.t <= *t) - 1;
        let rec = &self.records[idx];
        if rec.t == *t {
            return Ok(rec.latencies.clone());
        }
        let h = t.clone() - rec.t.clone();
        Ok(rec
            .latencies
            .iter()
            .zip(&rec.occupied)
            .map(|(l, &occ)| if occ { S::zero() } else { l.clone() + h.clone() })
            .collect())
    }

    /// `L_v(t)`: time since node `v` was last visited.
    pub fn latency_at(&self, v: NodeId, t: &S) -> Result<S> {
        if v >= self.weights.len() {
            return Err(Error::Range(format!("node index {v}")));
        }
        Ok(self.latencies_at(t)?.swap_remove(v))
    }

    /// `M(t) = max_v w(v) L_v(t)`.
    pub fn worst_weighted_latency(&self, t: &S) -> Result<S> {
        Ok(weighted_max(&self.weights, &self.latencies_at(t)?))
    }

    /// Exact `sup_{t in [from, to]} M(t)`. Within an interval the latencies
    /// of unoccupied nodes increase, so the supremum over a piece is its
    /// left limit at the piece's right end.
    pub fn tail_sup(&self, from: &S, to: &S) -> Result<S> {
        self.check_time(from)?;
        self.check_time(to)?;
        if from > to {
            return Err(Error::Range(format!("empty window [{from}, {to}]")));
        }
        let mut best = self.worst_weighted_latency(from)?;
        for rec in &self.records {
            let end = rec.t.clone() + rec.dt.clone();
            if rec.t >= *to || end <= *from {
                continue;
            }
            let stop = smin(end, to.clone());
            let h = stop - rec.t.clone();
            for ((w, l), &occ) in self.weights.iter().zip(&rec.latencies).zip(&rec.occupied) {
                if !occ {
                    best = smax(best, w.clone() * (l.clone() + h.clone()));
                }
            }
        }
        Ok(best)
    }

    /// Re-simulates the recorded decisions from the initial state.
    pub fn replay(&self, g: &MonitorGraph<S>) -> Result<EventLog<S>> {
        let mut log = EventLog::start(g, self.initial.clone());
        for rec in &self.records {
            log.step(g, rec.commands.clone(), Some(&rec.dt))?;
        }
        Ok(log)
    }

    /// JSON-lines export: one line per event plus a closing line with the
    /// final state (no `action`/`dt`).
    pub fn to_jsonl(&self, g: &MonitorGraph<S>) -> String {
        let mut out = String::new();
        let line = |t: &S, poses: &[RobotPose<S>], lat: &[S], action: Option<Vec<Option<ActionRecord>>>, dt: Option<String>| {
            let rec = JsonRecord {
                t: t.to_string(),
                poses: poses
                    .iter()
                    .map(|p| PoseRecord { from: g.id(p.from).to_string(), to: g.id(p.to).to_string(), remaining: p.remaining.to_string() })
                    .collect(),
                latencies: lat.iter().map(ToString::to_string).collect(),
                action,
                dt,
            };
            serde_json::to_string(&rec).expect("serializable record")
        };
        for rec in &self.records {
            let action = rec
                .commands
                .iter()
                .map(|c| {
                    c.as_ref().map(|c| match c {
                        Command::Move(x) => ActionRecord::Move(g.id(*x).to_string()),
                        Command::Wait(d) => ActionRecord::Wait(d.to_string()),
                    })
                })
                .collect();
            out.push_str(&line(&rec.t, &rec.poses, &rec.latencies, Some(action), Some(rec.dt.to_string())));
            out.push('\n');
        }
        let f = &self.final_state;
        out.push_str(&line(&f.clock, &f.poses, &f.latencies, None, None));
        out.push('\n');
        out
    }

    /// Parses [`to_jsonl`](Self::to_jsonl) output, re-simulating every event
    /// and rejecting logs that are not consistent with the graph.
    pub fn from_jsonl(g: &MonitorGraph<S>, text: &str) -> Result<EventLog<S>> {
        let lines: Vec<JsonRecord> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::Parse(e.to_string())))
            .collect::<Result<_>>()?;
        let first = lines.first().ok_or_else(|| Error::Parse("empty event log".into()))?;
        let scalar = |s: &str| S::parse_literal(s).ok_or_else(|| Error::Parse(format!("bad number `{s}`")));
        let state_of = |rec: &JsonRecord| -> Result<WorldState<S>> {
            let poses = rec
                .poses
                .iter()
                .map(|p| Ok(RobotPose { from: g.node(&p.from)?, to: g.node(&p.to)?, remaining: scalar(&p.remaining)? }))
                .collect::<Result<Vec<_>>>()?;
            let latencies = rec.latencies.iter().map(|l| scalar(l)).collect::<Result<Vec<_>>>()?;
            WorldState::custom(g, poses, latencies, scalar(&rec.t)?)
        };
        let mut log = EventLog::start(g, state_of(first)?);
        for (i, rec) in lines.iter().enumerate() {
            let expected = state_of(rec)?;
            if expected != log.final_state {
                return Err(Error::Parse(format!("record {i} disagrees with re-simulation")));
            }
            match (&rec.action, &rec.dt) {
                (Some(action), Some(dt)) => {
                    let commands = action
                        .iter()
                        .map(|a| {
                            a.as_ref()
                                .map(|a| match a {
                                    ActionRecord::Move(x) => Ok(Command::Move(g.node(x)?)),
                                    ActionRecord::Wait(d) => Ok(Command::Wait(scalar(d)?)),
                                })
                                .transpose()
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let dt = scalar(dt)?;
                    log.step(g, commands, Some(&dt))?;
                    if log.records.last().map(|r| &r.dt) != Some(&dt) {
                        return Err(Error::Parse(format!("record {i}: interval differs from re-simulation")));
                    }
                }
                (None, None) if i + 1 == lines.len() => {}
                _ => return Err(Error::Parse(format!("record {i}: missing action or dt"))),
            }
        }
        if lines.last().map_or(false, |l| l.action.is_some()) {
            return Err(Error::Parse("log has no final state record".into()));
        }
        Ok(log)
    }
}

impl Error {
    /// Tags a command error with the index of the offending event.
    pub fn at_event(self, n: usize) -> Self {
        match self {
            Error::Command { reason, .. } => Error::Command { event: n, reason },
            other => other,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRecord {
    from: String,
    to: String,
    remaining: String,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ActionRecord {
    Move(String),
    Wait(String),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    t: String,
    poses: Vec<PoseRecord>,
    latencies: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    action: Option<Vec<Option<ActionRecord>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dt: Option<String>,
}

/// One step of a robot's timed plan.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment<S> {
    /// Traverse the edge to this adjacent node.
    Traverse(NodeId),
    Wait(S),
}

impl<S: Scalar> Segment<S> {
    pub fn command(&self) -> Command<S> {
        match self {
            Segment::Traverse(x) => Command::Move(*x),
            Segment::Wait(d) => Command::Wait(d.clone()),
        }
    }
}

/// Plan of one robot: `prefix` once, then `cycle` forever. With an empty
/// cycle the robot parks after the prefix.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RobotPlan<S> {
    pub prefix: Vec<Segment<S>>,
    pub cycle: Vec<Segment<S>>,
}

impl<S: Scalar> RobotPlan<S> {
    pub fn cyclic(cycle: Vec<Segment<S>>) -> Self {
        Self { prefix: Vec::new(), cycle }
    }

    fn segment(&self, i: usize) -> Option<&Segment<S>> {
        if i < self.prefix.len() {
            self.prefix.get(i)
        } else if self.cycle.is_empty() {
            None
        } else {
            self.cycle.get((i - self.prefix.len()) % self.cycle.len())
        }
    }
}

/// Executes per-robot plans from `initial` until the clock reaches `horizon`.
pub fn run_plan<S: Scalar>(
    g: &MonitorGraph<S>,
    initial: WorldState<S>,
    plans: &[RobotPlan<S>],
    horizon: &S,
) -> Result<EventLog<S>> {
    if plans.len() != initial.poses.len() {
        return Err(Error::Config(format!("{} plans for {} robots", plans.len(), initial.poses.len())));
    }
    let mut cursor = vec![0usize; plans.len()];
    let mut log = EventLog::start(g, initial);
    while log.final_state.clock < *horizon {
        let left = horizon.clone() - log.final_state.clock.clone();
        let commands = log
            .final_state
            .poses
            .iter()
            .enumerate()
            .map(|(r, p)| {
                p.is_ready().then(|| match plans[r].segment(cursor[r]) {
                    Some(seg) => {
                        cursor[r] += 1;
                        seg.command()
                    }
                    None => Command::Wait(left.clone()),
                })
            })
            .collect();
        log.step(g, commands, Some(&left))?;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::Rational;

    fn r(n: i64, d: i64) -> Rational {
        Rational::new(n, d)
    }

    #[test]
    fn single_move_on_triangle() {
        let g = instances::triangle::<Rational>();
        let s = world_reset(&g, &[0]).unwrap();
        let out = world_step(&g, &s, &[Some(Command::Move(2))], None).unwrap();
        assert_eq!(out.dt, r(1, 1));
        assert_eq!(out.state.clock, r(1, 1));
        assert_eq!(out.state.latencies, vec![r(1, 1), r(1, 1), r(0, 1)]);
        assert_eq!(out.visits, vec![Visit { node: 2, t: r(1, 1) }]);
        assert_eq!(out.interval_sup, r(1, 1));
    }

    #[test]
    fn waiting_keeps_node_fresh() {
        let g = instances::triangle::<Rational>();
        let s = world_reset(&g, &[1]).unwrap();
        let out = world_step(&g, &s, &[Some(Command::Wait(r(1, 4)))], None).unwrap();
        assert_eq!(out.state.latencies, vec![r(1, 4), r(0, 1), r(1, 4)]);
    }

    #[test]
    fn interval_is_earliest_completion() {
        let g = instances::two_node::<Rational>(r(5, 1));
        let s = WorldState::custom(
            &g,
            vec![RobotPose { from: 0, to: 1, remaining: r(2, 1) }, RobotPose { from: 1, to: 0, remaining: r(3, 1) }],
            vec![r(0, 1); 2],
            r(3, 1),
        )
        .unwrap();
        let out = world_step(&g, &s, &[None, None], None).unwrap();
        assert_eq!(out.dt, r(2, 1));
        assert_eq!(out.state.poses[1].remaining, r(1, 1));
        assert!(out.state.poses[0].is_ready());
    }

    #[test]
    fn command_errors() {
        let g = instances::long_edge::<Rational>();
        let s = world_reset(&g, &[1]).unwrap();
        assert!(world_step(&g, &s, &[None], None).is_err());
        assert!(world_step(&g, &s, &[Some(Command::Move(3))], None).is_err());
        assert!(world_step(&g, &s, &[Some(Command::Wait(r(0, 1)))], None).is_err());
        assert!(world_reset(&g, &[9]).is_err());
        let busy = world_step(&g, &s, &[Some(Command::Move(0))], Some(&r(1, 2))).unwrap().state;
        assert!(world_step(&g, &busy, &[Some(Command::Move(0))], None).is_err());
    }

    #[test]
    fn no_robots_needs_a_limit() {
        let g = instances::triangle::<Rational>();
        let s = world_reset(&g, &[]).unwrap();
        assert!(world_step(&g, &s, &[], None).is_err());
        let out = world_step(&g, &s, &[], Some(&r(2, 1))).unwrap();
        assert_eq!(out.state.latencies, vec![r(2, 1); 3]);
    }

    #[test]
    fn latency_queries_and_tail_sup() {
        let g = instances::triangle::<Rational>();
        let plan = vec![RobotPlan::cyclic(vec![Segment::Traverse(1), Segment::Traverse(2), Segment::Traverse(0)])];
        let log = run_plan(&g, world_reset(&g, &[0]).unwrap(), &plan, &r(10, 1)).unwrap();
        assert_eq!(log.latency_at(2, &r(3, 2)).unwrap(), r(3, 2));
        assert_eq!(log.latency_at(2, &r(2, 1)).unwrap(), r(0, 1));
        assert_eq!(log.latency_at(0, &r(3, 1)).unwrap(), r(0, 1));
        assert!(log.latency_at(0, &r(11, 1)).is_err());
        assert_eq!(log.tail_sup(&r(0, 1), &r(10, 1)).unwrap(), r(3, 1));
        assert_eq!(log.tail_sup(&r(0, 1), &r(3, 2)).unwrap(), r(3, 2));
        assert_eq!(log.tail_sup(&r(1, 1), &r(2, 1)).unwrap(), r(2, 1));
    }

    #[test]
    fn jsonl_round_trip() {
        let g = instances::long_edge::<Rational>();
        let plan = vec![
            RobotPlan::cyclic(vec![Segment::Traverse(1), Segment::Wait(r(1, 3)), Segment::Traverse(0)]),
            RobotPlan { prefix: vec![Segment::Traverse(3)], cycle: vec![] },
        ];
        let log = run_plan(&g, world_reset(&g, &[0, 0]).unwrap(), &plan, &r(9, 1)).unwrap();
        let text = log.to_jsonl(&g);
        assert!(text.lines().next().unwrap().starts_with(r#"{"t":"0","poses":"#));
        let back = EventLog::from_jsonl(&g, &text).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.to_jsonl(&g), text);
        let tampered = text.replacen(r#""dt":"1""#, r#""dt":"2""#, 1);
        assert!(EventLog::from_jsonl(&g, &tampered).is_err());
    }
}
