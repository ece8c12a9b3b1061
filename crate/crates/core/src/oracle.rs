//! Ground truth for tiny instances.
//!
//! [`exact_optimum`] searches the event MDP depth-first. A branch closes when
//! its joint state (poses, exact latencies, elapsed time) repeats on the
//! current path after the evaluation start; the repeated stretch is a cycle
//! and the branch's tail value is the tracker at the repeat. The best closed
//! branch is returned as a [`PeriodicStrategy`].

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{GraphPoint, MonitorGraph, NodeId};
use crate::mdp::{actions_for, action_index, mdp_reset, mdp_transition, AgentAction, EventState, MdpConfig};
use crate::scalar::{smax, ExactScalar, Scalar};
use crate::world::{run_plan, Command, EventLog, RobotPlan, RobotPose, Segment, WorldState};

/// Value that may be unbounded.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Extended<S> {
    Finite(S),
    Infinite,
}

impl<S> Extended<S> {
    pub fn finite(&self) -> Option<&S> {
        match self {
            Extended::Finite(x) => Some(x),
            Extended::Infinite => None,
        }
    }
}

/// Per-robot plans that repeat with period `period` from `t_star` on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeriodicStrategy<S> {
    pub initial: WorldState<S>,
    /// Segments started before `t_star` form the prefix, those started in
    /// `[t_star, t_star + period)` the cycle.
    pub plans: Vec<RobotPlan<S>>,
    pub t_star: S,
    pub period: S,
    /// Joint decisions of the search, when the strategy came from it.
    pub joint_prefix: Vec<Vec<AgentAction>>,
    pub joint_cycle: Vec<Vec<AgentAction>>,
}

impl<S: Scalar> PeriodicStrategy<S> {
    pub fn validate(&self, g: &MonitorGraph<S>) -> Result<()> {
        if !(self.period > S::zero()) {
            return Err(Error::Config("period must be positive".into()));
        }
        if self.t_star < self.initial.clock {
            return Err(Error::Config("cycle starts before the initial state".into()));
        }
        if self.plans.len() != self.initial.poses.len() {
            return Err(Error::Config(format!("{} plans for {} robots", self.plans.len(), self.initial.poses.len())));
        }
        for (r, plan) in self.plans.iter().enumerate() {
            if plan.cycle.is_empty() {
                return Err(Error::Config(format!("robot {r} has an empty cycle")));
            }
            for seg in plan.prefix.iter().chain(&plan.cycle) {
                match seg {
                    Segment::Traverse(v) if *v >= g.node_count() => {
                        return Err(Error::Config(format!("robot {r}: node index {v} out of range")))
                    }
                    Segment::Wait(d) if !(*d > S::zero()) => {
                        return Err(Error::Config(format!("robot {r}: wait {d} is not positive")))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Runs the prefix and `cycles` periods.
    pub fn simulate(&self, g: &MonitorGraph<S>, cycles: usize) -> Result<EventLog<S>> {
        self.validate(g)?;
        let horizon = self.t_star.clone() + self.period.clone() * S::from_count(cycles);
        run_plan(g, self.initial.clone(), &self.plans, &horizon)
    }
}

/// Exact tail value `sup_{t >= T} M(t)` of a periodic strategy. The prefix
/// and three periods are simulated; latencies repeat from the start of the
/// third period, so the supremum over `[min(T, t*+2W), t*+3W]` is the tail.
/// A node left unvisited during a period has unbounded latency.
pub fn evaluate_periodic<S: Scalar>(g: &MonitorGraph<S>, strategy: &PeriodicStrategy<S>, t: &S) -> Result<Extended<S>> {
    let log = strategy.simulate(g, 3)?;
    let w = &strategy.period;
    let end = log.horizon().clone();
    if log.final_state.latencies.iter().any(|l| l > w) {
        return Ok(Extended::Infinite);
    }
    let two_periods = strategy.t_star.clone() + w.clone() + w.clone();
    let from = if *t < two_periods { smax(t.clone(), log.start_time().clone()) } else { two_periods };
    Ok(Extended::Finite(log.tail_sup(&from, &end)?))
}

/// Limits of the exhaustive search.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchBounds<S> {
    /// Branches whose tracker exceeds this are cut. Defaults to
    /// `w_max · TSP length`, which every instance attains by touring.
    pub latency_cap: Option<S>,
    /// Maximum number of decisions on one branch.
    pub depth_cap: usize,
    /// Known achievable value; only strategies at or below it are sought.
    pub incumbent: Option<S>,
    /// Maximum number of expanded states.
    pub max_expansions: u64,
}

impl<S> Default for SearchBounds<S> {
    fn default() -> Self {
        Self { latency_cap: None, depth_cap: 400, incumbent: None, max_expansions: 5_000_000 }
    }
}

#[derive(Clone, Debug)]
pub struct OracleResult<S> {
    pub j_star: Option<S>,
    /// `true` when no branch was cut by the depth cap, the expansion budget
    /// or a latency cap below the returned value.
    pub certified: bool,
    pub nodes_expanded: u64,
    pub strategy: Option<PeriodicStrategy<S>>,
    pub hit_depth_cap: bool,
    pub hit_budget: bool,
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct Key<S> {
    poses: Vec<RobotPose<S>>,
    latencies: Vec<S>,
    eta: S,
}

impl<S: Scalar> Key<S> {
    fn of(s: &EventState<S>) -> Self {
        Self { poses: s.poses().to_vec(), latencies: s.latencies().to_vec(), eta: s.eta.clone() }
    }
}

struct Closure<S> {
    states: Vec<EventState<S>>,
    actions: Vec<Vec<AgentAction>>,
    start: usize,
}

struct Search<'a, S> {
    g: &'a MonitorGraph<S>,
    cfg: &'a MdpConfig<S>,
    bounds: &'a SearchBounds<S>,
    cap: S,
    best: Option<S>,
    closure: Option<Closure<S>>,
    seen: HashMap<Key<S>, S>,
    on_path: HashMap<Key<S>, usize>,
    states: Vec<EventState<S>>,
    actions: Vec<Vec<AgentAction>>,
    expanded: u64,
    hit_depth: bool,
    hit_budget: bool,
    hit_cap: bool,
}

/// Joint actions with co-located ready robots restricted to nondecreasing
/// action indices (their permutations lead to relabeled copies).
fn symmetric_joint_actions<S: Scalar>(g: &MonitorGraph<S>, cfg: &MdpConfig<S>, s: &EventState<S>) -> Vec<Vec<AgentAction>> {
    let poses = s.poses();
    let mut out: Vec<Vec<AgentAction>> = vec![Vec::new()];
    for r in 0..s.robots() {
        let options = actions_for(g, cfg, s, r);
        let twin = (0..r).rev().find(|&q| poses[q] == poses[r] && poses[r].is_ready());
        let mut next = Vec::with_capacity(out.len() * options.len());
        for prefix in &out {
            for a in &options {
                if let Some(q) = twin {
                    let node = poses[r].to;
                    if action_index(g, cfg, node, *a) < action_index(g, cfg, node, prefix[q]) {
                        continue;
                    }
                }
                let mut v = prefix.clone();
                v.push(*a);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

/// Lower bound on the tracker after `s`: node `v` keeps growing at least
/// until the earliest robot can reach it.
fn arrival_bound<S: Scalar>(g: &MonitorGraph<S>, s: &EventState<S>) -> S {
    let mut bound = S::zero();
    for v in 0..g.node_count() {
        let reach = s
            .poses()
            .iter()
            .map(|p| {
                if p.from == p.to && p.to == v {
                    S::zero()
                } else {
                    p.remaining.clone() + g.dist(p.to, v).clone()
                }
            })
            .fold(None, |m: Option<S>, d| match m {
                Some(m) if m <= d => Some(m),
                _ => Some(d),
            });
        if let Some(reach) = reach {
            bound = smax(bound, g.weight(v).clone() * (s.latencies()[v].clone() + reach));
        }
    }
    bound
}

impl<'a, S: ExactScalar> Search<'a, S> {
    fn visit(&mut self, s: EventState<S>) -> Result<()> {
        let key = Key::of(&s);
        let active = s.active(self.cfg);
        if let Some(&start) = self.on_path.get(&key) {
            if active && self.best.as_ref().map_or(true, |b| s.z < *b) {
                let mut states = self.states.clone();
                states.push(s.clone());
                self.best = Some(s.z.clone());
                self.closure = Some(Closure { states, actions: self.actions.clone(), start });
            }
            return Ok(());
        }
        if active {
            let bound = smax(s.z.clone(), arrival_bound(self.g, &s));
            if matches!(&self.best, Some(b) if bound >= *b) {
                return Ok(());
            }
            if bound > self.cap {
                self.hit_cap = true;
                return Ok(());
            }
        }
        if matches!(self.seen.get(&key), Some(z) if *z <= s.z) {
            return Ok(());
        }
        if self.states.len() >= self.bounds.depth_cap {
            self.hit_depth = true;
            return Ok(());
        }
        if self.expanded >= self.bounds.max_expansions {
            self.hit_budget = true;
            return Ok(());
        }
        self.expanded += 1;
        self.seen.insert(key.clone(), s.z.clone());
        self.on_path.insert(key.clone(), self.states.len());
        let joints = symmetric_joint_actions(self.g, self.cfg, &s);
        self.states.push(s);
        for joint in joints {
            let next = mdp_transition(self.g, self.cfg, self.states.last().expect("pushed"), &joint)?.next;
            self.actions.push(joint);
            self.visit(next)?;
            self.actions.pop();
        }
        self.states.pop();
        self.on_path.remove(&key);
        Ok(())
    }
}

fn segment_of<S: Scalar>(cfg: &MdpConfig<S>, a: AgentAction) -> Option<Segment<S>> {
    match a {
        AgentAction::Move(v) => Some(Segment::Traverse(v)),
        AgentAction::Wait(k) => Some(Segment::Wait(cfg.wait(k))),
        AgentAction::Noop => None,
    }
}

fn strategy_from<S: Scalar>(cfg: &MdpConfig<S>, c: &Closure<S>) -> PeriodicStrategy<S> {
    let k = c.states[0].robots();
    let mut plans = vec![RobotPlan { prefix: Vec::new(), cycle: Vec::new() }; k];
    for (n, joint) in c.actions.iter().enumerate() {
        for (r, a) in joint.iter().enumerate() {
            if let Some(seg) = segment_of(cfg, *a) {
                if n < c.start {
                    plans[r].prefix.push(seg);
                } else {
                    plans[r].cycle.push(seg);
                }
            }
        }
    }
    let t_star = c.states[c.start].clock().clone();
    let period = c.states.last().expect("closed path").clock().clone() - t_star.clone();
    PeriodicStrategy {
        initial: c.states[0].world.clone(),
        plans,
        t_star,
        period,
        joint_prefix: c.actions[..c.start].to_vec(),
        joint_cycle: c.actions[c.start..].to_vec(),
    }
}

/// Upper bound on the optimum: every robot touring the TSP walk from its
/// own node keeps each weighted latency below `w_max · tour length`.
pub fn touring_bound<S: Scalar>(g: &MonitorGraph<S>) -> S {
    g.w_max().clone() * g.tsp_tour().1
}

/// Optimal discretized periodic strategy from `p0` by exhaustive search.
pub fn exact_optimum<S: ExactScalar>(
    g: &MonitorGraph<S>,
    cfg: &MdpConfig<S>,
    p0: &[NodeId],
    bounds: &SearchBounds<S>,
) -> Result<OracleResult<S>> {
    cfg.validate()?;
    if cfg.horizon_t.is_none() {
        return Err(Error::Config("the oracle needs a finite evaluation start T".into()));
    }
    let s0 = mdp_reset(g, p0, cfg)?;
    let mut cap = bounds.latency_cap.clone().unwrap_or_else(|| touring_bound(g));
    if let Some(inc) = &bounds.incumbent {
        if *inc < cap {
            cap = inc.clone();
        }
    }
    let run = || -> Result<OracleResult<S>> {
        let mut search = Search {
            g,
            cfg,
            bounds,
            cap: cap.clone(),
            best: None,
            closure: None,
            seen: HashMap::new(),
            on_path: HashMap::new(),
            states: Vec::new(),
            actions: Vec::new(),
            expanded: 0,
            hit_depth: false,
            hit_budget: false,
            hit_cap: false,
        };
        search.visit(s0)?;
        let cap_ok = !search.hit_cap || matches!(&search.best, Some(b) if *b <= search.cap);
        let strategy = search.closure.as_ref().map(|c| strategy_from(cfg, c));
        Ok(OracleResult {
            certified: !search.hit_depth && !search.hit_budget && cap_ok && search.best.is_some(),
            j_star: search.best,
            nodes_expanded: search.expanded,
            strategy,
            hit_depth_cap: search.hit_depth,
            hit_budget: search.hit_budget,
        })
    };
    // deep branches recurse once per decision
    std::thread::scope(|scope| {
        std::thread::Builder::new()
            .stack_size(512 << 20)
            .spawn_scoped(scope, run)
            .map_err(Error::Io)?
            .join()
            .unwrap_or_else(|e| std::panic::resume_unwind(e))
    })
}

/// Location of a robot in the geometric realization of the graph.
pub fn pose_point<S: Scalar>(g: &MonitorGraph<S>, p: &RobotPose<S>) -> GraphPoint<S> {
    if p.from == p.to {
        return GraphPoint::Node(p.to);
    }
    let edge = g.edge_between(p.from, p.to).expect("pose on an edge");
    let e = &g.edges()[edge];
    let offset = if p.to == e.v { e.length.clone() - p.remaining.clone() } else { p.remaining.clone() };
    GraphPoint::Edge { edge, offset }
}

/// Periodic strategy obtained by closing a logged segment.
#[derive(Clone, Debug)]
pub struct ClosedLoop<S> {
    pub strategy: PeriodicStrategy<S>,
    /// Duration of the connection appended after `beta`.
    pub theta: S,
    /// Largest time any single robot needs to reach its start pose.
    pub max_displacement: S,
}

/// Turns the logged segment `[alpha, beta]` into a cycle. After `beta` each
/// robot finishes its current segment, follows the canonical shortest path
/// back to its pose at `alpha` and waits, so that all robots are back in
/// their `alpha` poses after a common connection time `theta`.
pub fn close_and_loop<S: Scalar>(g: &MonitorGraph<S>, log: &EventLog<S>, alpha: &S, beta: &S) -> Result<ClosedLoop<S>> {
    let times = log.event_times();
    let index = |t: &S| {
        times.iter().position(|x| x == t).ok_or_else(|| Error::Range(format!("time {t} is not an event time of the log")))
    };
    let (ia, ib) = (index(alpha)?, index(beta)?);
    if ia >= ib {
        return Err(Error::Range(format!("need alpha < beta, got {alpha} and {beta}")));
    }
    let start = log.state_at_event(ia).expect("event index");
    let end = log.state_at_event(ib).expect("event index");
    let k = start.poses.len();
    let mut plans: Vec<RobotPlan<S>> = vec![RobotPlan { prefix: Vec::new(), cycle: Vec::new() }; k];
    for rec in &log.records[ia..ib] {
        for (r, c) in rec.commands.iter().enumerate() {
            if let Some(c) = c {
                plans[r].cycle.push(match c {
                    Command::Move(v) => Segment::Traverse(*v),
                    Command::Wait(d) => Segment::Wait(d.clone()),
                });
            }
        }
    }
    // time from the robot's state at beta until it must stand at the start
    // node of its alpha segment, plus the lead-in of that segment
    let need: Vec<S> = (0..k)
        .map(|r| {
            let (a, b) = (&start.poses[r], &end.poses[r]);
            let lead = if a.from != a.to { g.edge_length(a.from, a.to).expect("edge").clone() - a.remaining.clone() } else { S::zero() };
            b.remaining.clone() + g.dist(b.to, a.from).clone() + lead
        })
        .collect();
    // a position-closed segment loops as is; otherwise every robot (even
    // one mid-edge in its alpha pose) goes through the connection
    let closed = start.poses == end.poses;
    let theta = if closed { S::zero() } else { need.iter().cloned().fold(S::zero(), smax) };
    for r in (0..k).filter(|_| !closed) {
        let (a, b) = (&start.poses[r], &end.poses[r]);
        let path = g.node_path(b.to, a.from);
        plans[r].cycle.extend(path[1..].iter().map(|&v| Segment::Traverse(v)));
        let slack = theta.clone() - need[r].clone();
        if a.from != a.to {
            if slack > S::zero() {
                plans[r].cycle.push(Segment::Wait(slack));
            }
            plans[r].cycle.push(Segment::Traverse(a.to));
        } else {
            let hold = slack + a.remaining.clone();
            if hold > S::zero() {
                plans[r].cycle.push(Segment::Wait(hold));
            }
        }
    }
    let mut max_displacement = S::zero();
    for (a, b) in start.poses.iter().zip(&end.poses) {
        let (d, _) = g.shortest_path(&pose_point(g, b), &pose_point(g, a))?;
        max_displacement = smax(max_displacement, d);
    }
    let period = beta.clone() - alpha.clone() + theta.clone();
    Ok(ClosedLoop {
        strategy: PeriodicStrategy {
            initial: start,
            plans,
            t_star: alpha.clone(),
            period,
            joint_prefix: Vec::new(),
            joint_cycle: Vec::new(),
        },
        max_displacement,
        theta,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscretizationReport<S> {
    pub delta: S,
    pub delta_ref: S,
    pub j_delta: S,
    pub j_ref: S,
    /// `j_ref + 2 w_max delta`.
    pub bound: S,
    /// `bound - j_delta`; nonnegative when the bound holds.
    pub slack: S,
    pub holds: bool,
}

/// Compares the optimum at wait resolution `Δ` with a finer reference
/// `Δ_ref <= Δ/4` (same longest wait `κΔ`).
pub fn verify_discretization<S: ExactScalar>(
    g: &MonitorGraph<S>,
    cfg: &MdpConfig<S>,
    p0: &[NodeId],
    delta_ref: &S,
    bounds: &SearchBounds<S>,
) -> Result<DiscretizationReport<S>> {
    let four = S::from_count(4);
    if !(*delta_ref > S::zero()) || delta_ref.clone() * four > cfg.delta {
        return Err(Error::Config(format!("reference resolution {delta_ref} must lie in (0, delta/4]")));
    }
    let ratio = cfg.delta.clone() / delta_ref.clone();
    let kappa_ref = ratio.to_u64().filter(|k| S::from_count(*k as usize) == ratio).ok_or_else(|| {
        Error::Config(format!("delta / delta_ref = {ratio} must be an integer"))
    })? as u32
        * cfg.kappa_max;
    let fine = MdpConfig { delta: delta_ref.clone(), kappa_max: kappa_ref, ..cfg.clone() };
    let solve = |c: &MdpConfig<S>| -> Result<S> {
        let res = exact_optimum(g, c, p0, bounds)?;
        match (res.certified, res.j_star) {
            (true, Some(j)) => Ok(j),
            _ => Err(Error::Limit(format!(
                "search at delta {} not certified ({} states expanded)",
                c.delta, res.nodes_expanded
            ))),
        }
    };
    let j_delta = solve(cfg)?;
    let j_ref = solve(&fine)?;
    let two = S::one() + S::one();
    let bound = j_ref.clone() + two * g.w_max().clone() * cfg.delta.clone();
    let slack = bound.clone() - j_delta.clone();
    Ok(DiscretizationReport {
        delta: cfg.delta.clone(),
        delta_ref: delta_ref.clone(),
        holds: slack >= S::zero(),
        j_delta,
        j_ref,
        bound,
        slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::Rational;

    fn r(n: i64, d: i64) -> Rational {
        Rational::new(n, d)
    }

    fn solve(g: &MonitorGraph<Rational>, p0: &[NodeId], t: Rational, delta: Rational, kappa: u32) -> OracleResult<Rational> {
        let cfg = MdpConfig::new(Some(t), delta, kappa).unwrap();
        exact_optimum(g, &cfg, p0, &SearchBounds::default()).unwrap()
    }

    #[test]
    fn two_node_is_ping_pong() {
        let g = instances::two_node::<Rational>(r(3, 1));
        let res = solve(&g, &[0], r(0, 1), r(1, 1), 2);
        assert!(res.certified);
        assert_eq!(res.j_star, Some(r(6, 1)));
        let st = res.strategy.unwrap();
        assert!(st.plans[0].cycle.iter().all(|s| matches!(s, Segment::Traverse(_))));
        assert_eq!(evaluate_periodic(&g, &st, &r(0, 1)).unwrap(), Extended::Finite(r(6, 1)));
    }

    #[test]
    fn triangle_single_robot() {
        let g = instances::triangle::<Rational>();
        let res = solve(&g, &[0], r(0, 1), r(1, 1), 2);
        assert!(res.certified);
        assert_eq!(res.j_star, Some(r(3, 1)));
    }

    #[test]
    fn small_cap_is_not_certified() {
        let g = instances::triangle::<Rational>();
        let cfg = MdpConfig::new(Some(r(0, 1)), r(1, 1), 2).unwrap();
        let bounds = SearchBounds { latency_cap: Some(r(2, 1)), ..SearchBounds::default() };
        let res = exact_optimum(&g, &cfg, &[0], &bounds).unwrap();
        assert!(!res.certified);
        assert_eq!(res.j_star, None);
    }

    #[test]
    fn parked_robot_and_unvisited_node() {
        let single = MonitorGraph::<Rational>::from_indexed(vec![r(1, 1)], vec![]).unwrap();
        let st = PeriodicStrategy {
            initial: crate::world::world_reset(&single, &[0]).unwrap(),
            plans: vec![RobotPlan::cyclic(vec![Segment::Wait(r(1, 1))])],
            t_star: r(0, 1),
            period: r(1, 1),
            joint_prefix: vec![],
            joint_cycle: vec![],
        };
        assert_eq!(evaluate_periodic(&single, &st, &r(0, 1)).unwrap(), Extended::Finite(r(0, 1)));
        let g = instances::triangle::<Rational>();
        let st = PeriodicStrategy {
            initial: crate::world::world_reset(&g, &[0]).unwrap(),
            plans: vec![RobotPlan::cyclic(vec![Segment::Traverse(1), Segment::Traverse(0)])],
            t_star: r(0, 1),
            period: r(2, 1),
            joint_prefix: vec![],
            joint_cycle: vec![],
        };
        assert_eq!(evaluate_periodic(&g, &st, &r(0, 1)).unwrap(), Extended::Infinite);
    }

    #[test]
    fn closed_segment_needs_no_connection() {
        let g = instances::triangle::<Rational>();
        let plan = RobotPlan::cyclic(vec![Segment::Traverse(1), Segment::Traverse(2), Segment::Traverse(0)]);
        let log = run_plan(&g, crate::world::world_reset(&g, &[0]).unwrap(), &[plan], &r(9, 1)).unwrap();
        let closed = close_and_loop(&g, &log, &r(3, 1), &r(6, 1)).unwrap();
        assert_eq!(closed.theta, r(0, 1));
        assert_eq!(closed.strategy.period, r(3, 1));
        assert_eq!(evaluate_periodic(&g, &closed.strategy, &r(3, 1)).unwrap(), Extended::Finite(r(3, 1)));
        assert!(close_and_loop(&g, &log, &r(5, 2), &r(6, 1)).is_err());
        assert!(close_and_loop(&g, &log, &r(6, 1), &r(3, 1)).is_err());
    }
}
