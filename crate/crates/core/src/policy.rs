//! Heuristic monitoring policies behind one decision interface.
//!
//! A policy is prepared once per rollout with [`Policy::reset`] (which also
//! seeds any randomness) and then queried at every decision epoch. Busy
//! robots always receive [`AgentAction::Noop`].

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{MonitorGraph, NodeId};
use crate::mdp::{actions_for, mdp_reset, rollout, AgentAction, EventState, MdpConfig, Trajectory};
use crate::scalar::Scalar;
use crate::world::{RobotPlan, Segment};

pub trait Policy<S: Scalar>: Send {
    fn name(&self) -> String;

    /// Prepares per-rollout memory from the initial state.
    fn reset(&mut self, g: &MonitorGraph<S>, cfg: &MdpConfig<S>, s0: &EventState<S>, seed: u64) -> Result<()>;

    /// Joint action at `s`, one entry per robot.
    fn decide(&mut self, g: &MonitorGraph<S>, cfg: &MdpConfig<S>, s: &EventState<S>) -> Result<Vec<AgentAction>>;
}

/// Resets `policy` and rolls it out from `p0` until `horizon`.
pub fn run_policy<S: Scalar>(
    g: &MonitorGraph<S>,
    cfg: &MdpConfig<S>,
    p0: &[NodeId],
    policy: &mut dyn Policy<S>,
    horizon: &S,
    seed: u64,
) -> Result<Trajectory<S>> {
    let s0 = mdp_reset(g, p0, cfg)?;
    policy.reset(g, cfg, &s0, seed)?;
    rollout(g, cfg, s0, horizon, |s| policy.decide(g, cfg, s))
}

/// Smallest `m >= 0` with `m·d >= x`.
fn ceil_steps<S: Scalar>(x: &S, d: &S) -> u64 {
    if *x <= S::zero() {
        return 0;
    }
    let mut m = (x.clone() / d.clone()).as_f64().floor().max(0.0) as u64;
    while d.clone() * S::from_count(m as usize) < *x {
        m += 1;
    }
    while m > 0 && d.clone() * S::from_count(m as usize - 1) >= *x {
        m -= 1;
    }
    m
}

/// Splits a wait of `steps·Δ` into legal wait actions.
fn wait_chunks<S: Scalar>(cfg: &MdpConfig<S>, mut steps: u64) -> Vec<AgentAction> {
    let mut out = Vec::new();
    while steps > 0 {
        let k = steps.min(cfg.kappa_max as u64);
        out.push(AgentAction::Wait(k as u32));
        steps -= k;
    }
    out
}

/// Wait actions covering exactly `d`, which must be a multiple of `Δ`.
pub fn wait_actions<S: Scalar>(cfg: &MdpConfig<S>, d: &S) -> Result<Vec<AgentAction>> {
    let m = ceil_steps(d, &cfg.delta);
    let covered = cfg.delta.clone() * S::from_count(m as usize);
    let exact = if S::is_exact() { covered == *d } else { (covered - d.clone()).abs().as_f64() <= 1e-9 * (1.0 + d.as_f64().abs()) };
    if !exact {
        return Err(Error::Config(format!("wait {d} is not a multiple of delta {}", cfg.delta)));
    }
    Ok(wait_chunks(cfg, m))
}

/// Per-robot action script: `prefix` once, then `cycle` forever, then a
/// parked robot keeps waiting `kappa_max·Δ`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Script {
    pub prefix: Vec<AgentAction>,
    pub cycle: Vec<AgentAction>,
}

impl Script {
    fn at(&self, i: usize) -> Option<AgentAction> {
        if i < self.prefix.len() {
            Some(self.prefix[i])
        } else if self.cycle.is_empty() {
            None
        } else {
            Some(self.cycle[(i - self.prefix.len()) % self.cycle.len()])
        }
    }
}

/// Replays scripts; ready robots consume their next action.
#[derive(Clone, Debug, Default)]
pub struct ScriptRunner {
    scripts: Vec<Script>,
    cursor: Vec<usize>,
}

impl ScriptRunner {
    pub fn new(scripts: Vec<Script>) -> Self {
        let cursor = vec![0; scripts.len()];
        Self { scripts, cursor }
    }

    fn next<S: Scalar>(&mut self, cfg: &MdpConfig<S>, s: &EventState<S>) -> Result<Vec<AgentAction>> {
        if self.scripts.len() != s.robots() {
            return Err(Error::Config(format!("{} scripts for {} robots", self.scripts.len(), s.robots())));
        }
        Ok(s.poses()
            .iter()
            .enumerate()
            .map(|(r, p)| {
                if !p.is_ready() {
                    return AgentAction::Noop;
                }
                let a = self.scripts[r].at(self.cursor[r]).unwrap_or(AgentAction::Wait(cfg.kappa_max));
                self.cursor[r] += 1;
                a
            })
            .collect())
    }
}

/// Moves along a node path (first element is the current node).
fn moves(path: &[NodeId]) -> Vec<AgentAction> {
    path.iter().skip(1).map(|&v| AgentAction::Move(v)).collect()
}

/// Scripts that gather the robots in `members` at `walk[0]`, release them
/// spaced by `tour/|members|` (rounded up to the wait grid) and then cycle
/// the closed `walk` at full speed. Single-node walks park.
fn cycle_scripts<S: Scalar>(
    g: &MonitorGraph<S>,
    cfg: &MdpConfig<S>,
    p0: &[NodeId],
    members: &[usize],
    walk: &[NodeId],
    tour: &S,
) -> Vec<(usize, Script)> {
    let start = walk[0];
    let arrival = |r: usize| g.dist(p0[r], start).clone();
    let rendezvous = members.iter().map(|&r| arrival(r)).fold(S::zero(), crate::scalar::smax);
    let k = S::from_count(members.len().max(1));
    let mut cycle = moves(walk);
    if walk.len() > 1 {
        cycle.push(AgentAction::Move(start));
    }
    members
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let mut prefix = moves(&g.node_path(p0[r], start));
            if walk.len() > 1 {
                let depart = rendezvous.clone() + tour.clone() * S::from_count(i) / k.clone();
                prefix.extend(wait_chunks(cfg, ceil_steps(&(depart - arrival(r)), &cfg.delta)));
            }
            (r, Script { prefix, cycle: cycle.clone() })
        })
        .collect()
}

/// Robots evenly spaced along one TSP walk over all nodes.
#[derive(Clone, Debug, Default)]
pub struct TspCyclePolicy {
    runner: ScriptRunner,
}

impl TspCyclePolicy {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<S: Scalar> Policy<S> for TspCyclePolicy {
    fn name(&self) -> String {
        "tsp_cycle".into()
    }

    fn reset(&mut self, g: &MonitorGraph<S>, cfg: &MdpConfig<S>, s0: &EventState<S>, _seed: u64) -> Result<()> {
        let p0 = ready_nodes(s0)?;
        let (tour, len) = g.tsp_tour();
        let walk = g.expand_tour(&tour);
        let members: Vec<usize> = (0..p0.len()).collect();
        let mut scripts = vec![Script::default(); p0.len()];
        for (r, script) in cycle_scripts(g, cfg, &p0, &members, &walk, &len) {
            scripts[r] = script;
        }
        self.runner = ScriptRunner::new(scripts);
        Ok(())
    }

    fn decide(&mut self, _g: &MonitorGraph<S>, cfg: &MdpConfig<S>, s: &EventState<S>) -> Result<Vec<AgentAction>> {
        self.runner.next(cfg, s)
    }
}

fn ready_nodes<S: Scalar>(s0: &EventState<S>) -> Result<Vec<NodeId>> {
    s0.poses()
        .iter()
        .map(|p| p.node().ok_or_else(|| Error::Config("policies start from robots parked at nodes".into())))
        .collect()
}

/// Splits the nodes into `k` clusters: farthest-point seeds (the first seed
/// is the heaviest node), then every other node joins its nearest seed,
/// ties broken by smaller weighted load and then by cluster index.
pub fn partition_nodes<S: Scalar>(g: &MonitorGraph<S>, k: usize) -> Vec<Vec<NodeId>> {
    let n = g.node_count();
    let k = k.min(n).max(1);
    let first = (0..n).fold(0, |b, v| if g.weight(v) > g.weight(b) { v } else { b });
    let mut seeds = vec![first];
    while seeds.len() < k {
        let gap = |v: NodeId| seeds.iter().map(|&s| g.dist(s, v).clone()).fold(None, |m: Option<S>, d| match m {
            Some(m) if m <= d => Some(m),
            _ => Some(d),
        });
        let next = (0..n)
            .filter(|v| !seeds.contains(v))
            .fold(None, |best: Option<(NodeId, S)>, v| {
                let d = gap(v).expect("at least one seed");
                match best {
                    Some((b, bd)) if bd >= d => Some((b, bd)),
                    _ => Some((v, d)),
                }
            })
            .expect("fewer seeds than nodes")
            .0;
        seeds.push(next);
    }
    let mut clusters: Vec<Vec<NodeId>> = seeds.iter().map(|&s| vec![s]).collect();
    let mut load: Vec<S> = seeds.iter().map(|&s| g.weight(s).clone()).collect();
    for v in (0..n).filter(|v| !seeds.contains(v)) {
        let mut best = 0;
        for c in 1..k {
            let (dc, db) = (g.dist(seeds[c], v), g.dist(seeds[best], v));
            if dc < db || (dc == db && load[c] < load[best]) {
                best = c;
            }
        }
        clusters[best].push(v);
        load[best] = load[best].clone() + g.weight(v).clone();
    }
    for c in &mut clusters {
        c.sort_unstable();
    }
    clusters
}

/// Node partition with one TSP cycle per cluster.
#[derive(Clone, Debug, Default)]
pub struct PartitionPolicy {
    runner: ScriptRunner,
    pub clusters: Vec<Vec<NodeId>>,
}

impl PartitionPolicy {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<S: Scalar> Policy<S> for PartitionPolicy {
    fn name(&self) -> String {
        "partition".into()
    }

    fn reset(&mut self, g: &MonitorGraph<S>, cfg: &MdpConfig<S>, s0: &EventState<S>, _seed: u64) -> Result<()> {
        let p0 = ready_nodes(s0)?;
        let clusters = partition_nodes(g, p0.len());
        let tours: Vec<(Vec<NodeId>, S)> = clusters.iter().map(|c| g.tsp_tour_over(c)).collect();
        // every cluster takes its nearest free robot, then extras go to the longest tours
        let mut owner: Vec<Option<usize>> = vec![None; p0.len()];
        for (c, cluster) in clusters.iter().enumerate() {
            let seed = cluster[0];
            let pick = (0..p0.len())
                .filter(|&r| owner[r].is_none())
                .min_by(|&a, &b| g.dist(p0[a], seed).partial_cmp(g.dist(p0[b], seed)).expect("ordered").then(a.cmp(&b)));
            if let Some(r) = pick {
                owner[r] = Some(c);
            }
        }
        let mut count = vec![1usize; clusters.len()];
        for r in 0..p0.len() {
            if owner[r].is_none() {
                let c = (0..clusters.len())
                    .max_by(|&a, &b| {
                        let la = tours[a].1.clone() / S::from_count(count[a]);
                        let lb = tours[b].1.clone() / S::from_count(count[b]);
                        la.partial_cmp(&lb).expect("ordered").then(b.cmp(&a))
                    })
                    .expect("at least one cluster");
                owner[r] = Some(c);
                count[c] += 1;
            }
        }
        let mut scripts = vec![Script::default(); p0.len()];
        for (c, (tour, len)) in tours.iter().enumerate() {
            let members: Vec<usize> = (0..p0.len()).filter(|&r| owner[r] == Some(c)).collect();
            let walk = g.expand_tour(tour);
            for (r, script) in cycle_scripts(g, cfg, &p0, &members, &walk, len) {
                scripts[r] = script;
            }
        }
        self.clusters = clusters;
        self.runner = ScriptRunner::new(scripts);
        Ok(())
    }

    fn decide(&mut self, _g: &MonitorGraph<S>, cfg: &MdpConfig<S>, s: &EventState<S>) -> Result<Vec<AgentAction>> {
        self.runner.next(cfg, s)
    }
}

/// Each ready robot heads for the node with the largest weighted latency
/// on arrival, `w(v)·(L_v + d(pos, v))`, skipping its own node and targets
/// already claimed by lower-index robots; it moves one edge per decision.
#[derive(Clone, Debug, Default)]
pub struct GreedyLatencyPolicy;

impl GreedyLatencyPolicy {
    pub fn new() -> Self {
        Self
    }
}

impl<S: Scalar> Policy<S> for GreedyLatencyPolicy {
    fn name(&self) -> String {
        "greedy".into()
    }

    fn reset(&mut self, _g: &MonitorGraph<S>, _cfg: &MdpConfig<S>, _s0: &EventState<S>, _seed: u64) -> Result<()> {
        Ok(())
    }

    fn decide(&mut self, g: &MonitorGraph<S>, cfg: &MdpConfig<S>, s: &EventState<S>) -> Result<Vec<AgentAction>> {
        let mut claimed = Vec::new();
        let mut out = Vec::with_capacity(s.robots());
        for p in s.poses() {
            if !p.is_ready() {
                out.push(AgentAction::Noop);
                continue;
            }
            let pos = p.to;
            if g.node_count() == 1 {
                out.push(AgentAction::Wait(cfg.kappa_max));
                continue;
            }
            let score = |v: NodeId| g.weight(v).clone() * (s.latencies()[v].clone() + g.dist(pos, v).clone());
            let best = |skip_claimed: bool| {
                (0..g.node_count())
                    .filter(|&v| v != pos && !(skip_claimed && claimed.contains(&v)))
                    .fold(None, |b: Option<NodeId>, v| match b {
                        Some(b) if score(b) >= score(v) => Some(b),
                        _ => Some(v),
                    })
            };
            let target = best(true).or_else(|| best(false)).expect("two or more nodes");
            claimed.push(target);
            out.push(AgentAction::Move(g.node_path(pos, target)[1]));
        }
        Ok(out)
    }
}

/// Uniform choice over each ready robot's legal actions.
#[derive(Clone, Debug)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl Default for RandomPolicy {
    fn default() -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(0) }
    }
}

impl RandomPolicy {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<S: Scalar> Policy<S> for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn reset(&mut self, _g: &MonitorGraph<S>, _cfg: &MdpConfig<S>, _s0: &EventState<S>, seed: u64) -> Result<()> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(())
    }

    fn decide(&mut self, g: &MonitorGraph<S>, cfg: &MdpConfig<S>, s: &EventState<S>) -> Result<Vec<AgentAction>> {
        Ok((0..s.robots())
            .map(|r| *actions_for(g, cfg, s, r).choose(&mut self.rng).expect("at least one legal action"))
            .collect())
    }
}

/// Fixed per-robot plans; waits must be multiples of `Δ`.
#[derive(Clone, Debug)]
pub struct PlanPolicy<S> {
    pub plans: Vec<RobotPlan<S>>,
    runner: ScriptRunner,
}

impl<S: Scalar> PlanPolicy<S> {
    pub fn new(plans: Vec<RobotPlan<S>>) -> Self {
        Self { plans, runner: ScriptRunner::default() }
    }
}

fn script_of<S: Scalar>(cfg: &MdpConfig<S>, segs: &[Segment<S>]) -> Result<Vec<AgentAction>> {
    let mut out = Vec::new();
    for seg in segs {
        match seg {
            Segment::Traverse(v) => out.push(AgentAction::Move(*v)),
            Segment::Wait(d) => out.extend(wait_actions(cfg, d)?),
        }
    }
    Ok(out)
}

impl<S: Scalar> Policy<S> for PlanPolicy<S> {
    fn name(&self) -> String {
        "plan".into()
    }

    fn reset(&mut self, _g: &MonitorGraph<S>, cfg: &MdpConfig<S>, _s0: &EventState<S>, _seed: u64) -> Result<()> {
        let scripts = self
            .plans
            .iter()
            .map(|p| Ok(Script { prefix: script_of(cfg, &p.prefix)?, cycle: script_of(cfg, &p.cycle)? }))
            .collect::<Result<Vec<_>>>()?;
        self.runner = ScriptRunner::new(scripts);
        Ok(())
    }

    fn decide(&mut self, _g: &MonitorGraph<S>, cfg: &MdpConfig<S>, s: &EventState<S>) -> Result<Vec<AgentAction>> {
        self.runner.next(cfg, s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::Rational;

    fn r(n: i64, d: i64) -> Rational {
        Rational::new(n, d)
    }

    fn tail(g: &MonitorGraph<Rational>, cfg: &MdpConfig<Rational>, p0: &[NodeId], policy: &mut dyn Policy<Rational>, h: i64, from: i64) -> Rational {
        let traj = run_policy(g, cfg, p0, policy, &r(h, 1), 7).unwrap();
        traj.log.tail_sup(&r(from, 1), &r(h, 1)).unwrap()
    }

    #[test]
    fn tsp_cycle_examples() {
        let cfg = MdpConfig::new(Some(r(0, 1)), r(1, 2), 4).unwrap();
        let tri = instances::triangle::<Rational>();
        assert_eq!(tail(&tri, &cfg, &[1], &mut TspCyclePolicy::new(), 60, 10), r(3, 1));
        assert_eq!(tail(&tri, &cfg, &[0, 1, 2], &mut TspCyclePolicy::new(), 60, 10), r(1, 1));
        let two = instances::two_node::<Rational>(r(7, 1));
        assert_eq!(tail(&two, &cfg, &[1], &mut TspCyclePolicy::new(), 100, 20), r(14, 1));
    }

    #[test]
    fn partition_examples() {
        let cfg = MdpConfig::new(Some(r(0, 1)), r(1, 2), 4).unwrap();
        let g = instances::long_edge::<Rational>();
        let mut clusters = partition_nodes(&g, 3);
        clusters.sort();
        assert_eq!(clusters, vec![vec![0, 2], vec![1], vec![3]]);
        assert_eq!(tail(&g, &cfg, &[0, 0, 0], &mut PartitionPolicy::new(), 80, 30), r(2, 1));
        assert_eq!(tail(&g, &cfg, &[0, 1, 2, 3], &mut PartitionPolicy::new(), 40, 20), r(0, 1));
        let single = tail(&g, &cfg, &[2], &mut PartitionPolicy::new(), 80, 40);
        assert_eq!(single, tail(&g, &cfg, &[2], &mut TspCyclePolicy::new(), 80, 40));
    }

    #[test]
    fn greedy_ping_pong_and_first_move() {
        let cfg = MdpConfig::new(Some(r(0, 1)), r(1, 1), 2).unwrap();
        let two = instances::two_node::<Rational>(r(3, 1));
        let traj = run_policy(&two, &cfg, &[0], &mut GreedyLatencyPolicy::new(), &r(30, 1), 0).unwrap();
        assert!(traj.steps.iter().all(|s| matches!(s.actions[0], AgentAction::Move(_))));
        assert_eq!(traj.log.tail_sup(&r(6, 1), &r(30, 1)).unwrap(), r(6, 1));
        let g = instances::weighted_path3::<Rational>();
        let s = mdp_reset(&g, &[0], &cfg).unwrap();
        assert_eq!(GreedyLatencyPolicy.decide(&g, &cfg, &s).unwrap(), vec![AgentAction::Move(1)]);
    }

    #[test]
    fn random_is_reproducible() {
        let cfg = MdpConfig::new(Some(r(1, 1)), r(1, 2), 3).unwrap();
        let g = instances::long_edge::<Rational>();
        let a = run_policy(&g, &cfg, &[0, 3], &mut RandomPolicy::new(), &r(40, 1), 11).unwrap();
        let b = run_policy(&g, &cfg, &[0, 3], &mut RandomPolicy::new(), &r(40, 1), 11).unwrap();
        assert_eq!(a.log.to_jsonl(&g), b.log.to_jsonl(&g));
    }

    #[test]
    fn plan_waits_must_fit_the_grid() {
        let cfg = MdpConfig::new(Some(r(0, 1)), r(1, 2), 2).unwrap();
        assert_eq!(
            wait_actions(&cfg, &r(5, 2)).unwrap(),
            vec![AgentAction::Wait(2), AgentAction::Wait(2), AgentAction::Wait(1)]
        );
        assert!(wait_actions(&cfg, &r(1, 3)).is_err());
        assert!(wait_actions(&cfg, &r(0, 1)).unwrap().is_empty());
    }
}
