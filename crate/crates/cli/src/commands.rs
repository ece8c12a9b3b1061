use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use patrolbench::learn::{episode_seed, smdp_q_learn, Bucketing, QPolicy, QTable, StateKey};
use patrolbench::mdp::AgentAction;
use patrolbench::metrics::{self, MetricsSummary, DEFAULT_DIGITS};
use patrolbench::oracle::{exact_optimum, touring_bound, verify_discretization, OracleResult};
use patrolbench::policy::{run_policy, GreedyLatencyPolicy, PartitionPolicy, Policy, RandomPolicy, TspCyclePolicy};
use patrolbench::world::run_plan;
use patrolbench::{ExactGraph, ExactLog, ExactMdpConfig, Rational, Scalar};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, Experiment, PolicyChoice};

/// A failed theorem check (exit code 3).
#[derive(Debug, thiserror::Error)]
#[error("verification failed: {0}")]
pub struct VerificationFailed(pub String);

fn dec(x: &Rational) -> String {
    x.to_decimal(DEFAULT_DIGITS)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Evaluation start used for tail metrics; without one the tail is the
/// instant at the horizon.
fn tail_start(exp: &Experiment) -> Rational {
    match &exp.mdp.horizon_t {
        Some(t) if *t < exp.horizon => *t,
        _ => exp.horizon,
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub seed: u64,
    pub tail_wi: String,
    pub wi: String,
    pub agi: String,
    pub events: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimulationSummary {
    pub schema: u32,
    pub policy: String,
    pub repetitions: usize,
    #[serde(rename = "T")]
    pub t: String,
    #[serde(rename = "H")]
    pub h: String,
    pub runs: Vec<RunRecord>,
    pub mean_tail_wi: Option<String>,
    pub max_tail_wi: Option<String>,
}

fn make_policy(exp: &Experiment, choice: &PolicyChoice) -> Result<Box<dyn Policy<Rational>>> {
    Ok(match choice {
        PolicyChoice::TspCycle => Box::new(TspCyclePolicy::new()),
        PolicyChoice::Partition => Box::new(PartitionPolicy::new()),
        PolicyChoice::Greedy => Box::new(GreedyLatencyPolicy::new()),
        PolicyChoice::Random => Box::new(RandomPolicy::new()),
        PolicyChoice::Qtable(path) => Box::new(QPolicy::new(load_qtable(&exp.graph, &exp.mdp, path)?)),
        PolicyChoice::Plan { .. } => unreachable!("plans run without the MDP"),
    })
}

fn policy_name(choice: &PolicyChoice) -> &'static str {
    match choice {
        PolicyChoice::TspCycle => "tsp_cycle",
        PolicyChoice::Partition => "partition",
        PolicyChoice::Greedy => "greedy",
        PolicyChoice::Random => "random",
        PolicyChoice::Plan { .. } => "plan",
        PolicyChoice::Qtable(_) => "qtable",
    }
}

fn one_run(exp: &Experiment, choice: &PolicyChoice, seed: u64) -> Result<ExactLog> {
    match choice {
        PolicyChoice::Plan { initial, plans } => Ok(run_plan(&exp.graph, initial.clone(), plans, &exp.horizon)?),
        _ => {
            let mut policy = make_policy(exp, choice)?;
            Ok(run_policy(&exp.graph, &exp.mdp, &exp.p0, policy.as_mut(), &exp.horizon, seed)?.log)
        }
    }
}

/// Runs the configured repetitions and writes one directory per run plus
/// `summary.json`.
pub fn simulate(exp: &Experiment, choice: &PolicyChoice, out: &Path) -> Result<SimulationSummary> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let t = tail_start(exp);
    let seeds: Vec<u64> = (0..exp.repetitions).map(|i| episode_seed(exp.seed, i)).collect();
    let logs: Vec<ExactLog> = seeds.par_iter().map(|&s| one_run(exp, choice, s)).collect::<Result<_>>()?;

    let mut runs = Vec::with_capacity(logs.len());
    let mut tails = Vec::with_capacity(logs.len());
    for (i, (log, &seed)) in logs.iter().zip(&seeds).enumerate() {
        let dir = out.join(format!("run_{i:03}"));
        fs::create_dir_all(&dir)?;
        let report = metrics::report(log, &t)?;
        fs::write(dir.join("events.jsonl"), log.to_jsonl(&exp.graph))?;
        fs::write(dir.join("metrics.csv"), report.to_csv(DEFAULT_DIGITS))?;
        write_json(&dir.join("metrics.json"), &report.summary(DEFAULT_DIGITS))?;
        runs.push(RunRecord { seed, tail_wi: dec(&report.tail_wi), wi: dec(&report.wi), agi: dec(&report.agi), events: log.records.len() });
        tails.push(report.tail_wi);
    }
    let mean = (!tails.is_empty()).then(|| tails.iter().copied().sum::<Rational>() / Rational::from_count(tails.len()));
    let summary = SimulationSummary {
        schema: crate::config::SCHEMA,
        policy: policy_name(choice).into(),
        repetitions: exp.repetitions,
        t: dec(&t),
        h: dec(&exp.horizon),
        runs,
        mean_tail_wi: mean.as_ref().map(dec),
        max_tail_wi: tails.iter().max().map(dec),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
pub enum ActionRecord {
    Move(String),
    /// Wait duration.
    Wait(String),
    Noop,
}

fn action_record(g: &ExactGraph, cfg: &ExactMdpConfig, a: &AgentAction) -> ActionRecord {
    match a {
        AgentAction::Move(x) => ActionRecord::Move(g.id(*x).to_string()),
        AgentAction::Wait(k) => ActionRecord::Wait(dec(&cfg.wait(*k))),
        AgentAction::Noop => ActionRecord::Noop,
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OracleReport {
    pub schema: u32,
    pub j_star: Option<String>,
    pub certified: bool,
    pub nodes_expanded: u64,
    pub hit_depth_cap: bool,
    pub hit_budget: bool,
    pub t_star: Option<String>,
    pub period: Option<String>,
    pub prefix: Vec<Vec<ActionRecord>>,
    pub cycle: Vec<Vec<ActionRecord>>,
}

fn oracle_report(exp: &Experiment, res: &OracleResult<Rational>) -> OracleReport {
    let joint = |xs: &[Vec<AgentAction>]| {
        xs.iter().map(|j| j.iter().map(|a| action_record(&exp.graph, &exp.mdp, a)).collect()).collect()
    };
    let s = res.strategy.as_ref();
    OracleReport {
        schema: crate::config::SCHEMA,
        j_star: res.j_star.as_ref().map(dec),
        certified: res.certified,
        nodes_expanded: res.nodes_expanded,
        hit_depth_cap: res.hit_depth_cap,
        hit_budget: res.hit_budget,
        t_star: s.map(|s| dec(&s.t_star)),
        period: s.map(|s| dec(&s.period)),
        prefix: s.map_or_else(Vec::new, |s| joint(&s.joint_prefix)),
        cycle: s.map_or_else(Vec::new, |s| joint(&s.joint_cycle)),
    }
}

fn require_t(exp: &Experiment, what: &str) -> Result<()> {
    if exp.mdp.horizon_t.is_none() {
        return Err(ConfigError(format!("{what} needs a finite T")).into());
    }
    Ok(())
}

pub fn oracle(exp: &Experiment, out: &Path) -> Result<OracleReport> {
    require_t(exp, "the oracle")?;
    fs::create_dir_all(out)?;
    let res = exact_optimum(&exp.graph, &exp.mdp, &exp.p0, &exp.bounds)?;
    let report = oracle_report(exp, &res);
    write_json(&out.join("oracle.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QEntry {
    key: StateKey,
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QTableFile {
    schema: u32,
    delta: String,
    updates: u64,
    episodes: u64,
    entries: Vec<QEntry>,
}

fn save_qtable(table: &QTable<Rational>, path: &Path) -> Result<()> {
    let mut entries: Vec<QEntry> = table.values.iter().map(|(k, v)| QEntry { key: k.clone(), values: v.clone() }).collect();
    entries.sort_by(|a, b| a.key.cmp(&b.key));
    let file = QTableFile {
        schema: crate::config::SCHEMA,
        delta: table.bucketing.width.to_string(),
        updates: table.updates,
        episodes: table.episodes,
        entries,
    };
    fs::write(path, serde_json::to_string(&file)? + "\n")?;
    Ok(())
}

/// Loads a table saved by `learn`; the bucketing is rebuilt from the graph
/// and must use the same `delta`.
pub fn load_qtable(g: &ExactGraph, cfg: &ExactMdpConfig, path: &Path) -> Result<QTable<Rational>> {
    let file: QTableFile = read_json(path).map_err(|e| ConfigError(format!("{e:#}")))?;
    if file.delta != cfg.delta.to_string() {
        return Err(ConfigError(format!("table was trained with delta {}, config has {}", file.delta, cfg.delta)).into());
    }
    let mut table = QTable::new(Bucketing::for_graph(g, &cfg.delta, None));
    table.updates = file.updates;
    table.episodes = file.episodes;
    table.values = file.entries.into_iter().map(|e| (e.key, e.values)).collect();
    Ok(table)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LearnReport {
    pub schema: u32,
    pub states: usize,
    pub updates: u64,
    pub episodes: u64,
    pub mean_tail_wi: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_j_star: Option<String>,
    /// `(mean tail - J*) / J*`, or the absolute difference when `J* = 0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
}

pub fn learn(exp: &Experiment, out: &Path) -> Result<LearnReport> {
    require_t(exp, "learning")?;
    fs::create_dir_all(out)?;
    let mut qc = exp.learn.clone();
    qc.seed = exp.seed;
    let table = smdp_q_learn(&exp.graph, &exp.mdp, &exp.p0, &qc, None)?;
    let table_path = out.join("qtable.json");
    save_qtable(&table, &table_path)?;
    let summary = simulate(exp, &PolicyChoice::Qtable(table_path), out)?;

    let report_path = exp.oracle_report.clone().unwrap_or_else(|| out.join("oracle.json"));
    let oracle: Option<OracleReport> = if report_path.exists() { Some(read_json(&report_path)?) } else { None };
    let j_star = oracle.and_then(|o| o.j_star);
    let gap = match (&j_star, &summary.mean_tail_wi) {
        (Some(j), Some(m)) => {
            let (j, m): (f64, f64) = (j.parse()?, m.parse()?);
            Some(if j > 0.0 { (m - j) / j } else { m - j })
        }
        _ => None,
    };
    let report = LearnReport {
        schema: crate::config::SCHEMA,
        states: table.states(),
        updates: table.updates,
        episodes: table.episodes,
        mean_tail_wi: summary.mean_tail_wi,
        oracle_j_star: j_star,
        gap,
    };
    write_json(&out.join("learn.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationCheck {
    pub delta: String,
    pub delta_ref: String,
    pub j_delta: Option<String>,
    pub j_ref: Option<String>,
    pub bound: Option<String>,
    pub slack: Option<String>,
    pub holds: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StartCheck {
    #[serde(rename = "T")]
    pub t: String,
    pub j_star: Option<String>,
    pub certified: bool,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct VerifyReport {
    pub schema: u32,
    pub discretization: DiscretizationCheck,
    pub t_invariance: Vec<StartCheck>,
    pub t_invariance_holds: bool,
    pub pass: bool,
}

/// Discretization bound and independence of the optimum from `T`. Writes
/// the report before failing.
pub fn verify(exp: &Experiment, out: &Path) -> Result<VerifyReport> {
    require_t(exp, "verification")?;
    fs::create_dir_all(out)?;
    let discretization = match verify_discretization(&exp.graph, &exp.mdp, &exp.p0, &exp.delta_ref, &exp.bounds) {
        Ok(r) => DiscretizationCheck {
            delta: dec(&r.delta),
            delta_ref: dec(&r.delta_ref),
            j_delta: Some(dec(&r.j_delta)),
            j_ref: Some(dec(&r.j_ref)),
            bound: Some(dec(&r.bound)),
            slack: Some(dec(&r.slack)),
            holds: r.holds,
            error: None,
        },
        Err(patrolbench::Error::Config(msg)) => return Err(ConfigError(msg).into()),
        Err(e) => DiscretizationCheck {
            delta: dec(&exp.mdp.delta),
            delta_ref: dec(&exp.delta_ref),
            j_delta: None,
            j_ref: None,
            bound: None,
            slack: None,
            holds: false,
            error: Some(e.to_string()),
        },
    };

    let t0 = exp.mdp.horizon_t.expect("checked above");
    let starts = if exp.t_values.is_empty() { vec![t0, t0 + touring_bound(&exp.graph)] } else { exp.t_values.clone() };
    let mut t_invariance = Vec::with_capacity(starts.len());
    for t in starts {
        let cfg = ExactMdpConfig { horizon_t: Some(t), ..exp.mdp.clone() };
        let res = exact_optimum(&exp.graph, &cfg, &exp.p0, &exp.bounds)?;
        t_invariance.push(StartCheck { t: dec(&t), j_star: res.j_star.as_ref().map(dec), certified: res.certified });
    }
    let t_invariance_holds =
        t_invariance.iter().all(|c| c.certified && c.j_star.is_some() && c.j_star == t_invariance[0].j_star);
    let report = VerifyReport {
        schema: crate::config::SCHEMA,
        pass: discretization.holds && t_invariance_holds,
        discretization,
        t_invariance,
        t_invariance_holds,
    };
    write_json(&out.join("verify.json"), &report)?;
    if !report.pass {
        return Err(VerificationFailed(format!("see {}", out.join("verify.json").display())).into());
    }
    Ok(report)
}

/// Recomputes metrics for a saved event log.
pub fn metrics(exp: &Experiment, log_path: &Path, out: &Path) -> Result<MetricsSummary> {
    let text = fs::read_to_string(log_path).with_context(|| format!("reading {}", log_path.display()))?;
    let log = ExactLog::from_jsonl(&exp.graph, &text)?;
    fs::create_dir_all(out)?;
    let t = match &exp.mdp.horizon_t {
        Some(t) if t < log.horizon() => *t,
        _ => *log.horizon(),
    };
    let report = metrics::report(&log, &t)?;
    fs::write(out.join("metrics.csv"), report.to_csv(DEFAULT_DIGITS))?;
    let summary = report.summary(DEFAULT_DIGITS);
    write_json(&out.join("metrics.json"), &summary)?;
    Ok(summary)
}

pub fn output_dir(cli_out: Option<PathBuf>, exp: &Experiment) -> Result<PathBuf> {
    cli_out
        .or_else(|| exp.out.clone())
        .ok_or_else(|| ConfigError("no output directory: pass --out or set \"out\"".into()).into())
}
