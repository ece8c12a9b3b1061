//! Experiment configuration: one JSON file with `"schema": 1`. Unknown keys
//! are rejected; relative paths resolve against the config's directory.

use std::path::{Path, PathBuf};

use patrolbench::graph::{Literal, NodeId};
use patrolbench::learn::QConfig;
use patrolbench::mdp::{Baseline, MdpConfig};
use patrolbench::oracle::SearchBounds;
use patrolbench::world::{RobotPlan, RobotPose, Segment, WorldState};
use patrolbench::{ExactGraph, ExactMdpConfig, Rational, Scalar};
use serde::Deserialize;

pub const SCHEMA: u32 = 1;

/// Invalid or unreadable configuration (exit code 2).
#[derive(Debug, thiserror::Error)]
#[error("config error: {0}")]
pub struct ConfigError(pub String);

fn bad(msg: impl std::fmt::Display) -> ConfigError {
    ConfigError(msg.to_string())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema: u32,
    pub graph: PathBuf,
    #[serde(default)]
    pub robots: Option<usize>,
    #[serde(default)]
    pub p0: Vec<Literal>,
    #[serde(default)]
    pub policy: PolicySpec,
    /// Evaluation start; `"inf"` disables evaluation.
    #[serde(rename = "T", default)]
    pub t: Option<Literal>,
    pub delta: Literal,
    #[serde(default = "default_kappa")]
    pub kappa_max: u32,
    #[serde(rename = "lambda_L", default)]
    pub lambda_l: Option<Literal>,
    #[serde(default)]
    pub lambda_z: Option<Literal>,
    #[serde(default)]
    pub baseline: Baseline,
    pub horizon: Literal,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub learn: QConfig,
    #[serde(default)]
    pub verify: VerifySection,
    /// Oracle report used by `learn` to compute the gap; defaults to
    /// `oracle.json` in the output directory.
    #[serde(default)]
    pub oracle_report: Option<PathBuf>,
}

fn default_kappa() -> u32 {
    8
}

fn default_repetitions() -> usize {
    1
}

#[derive(Debug, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    #[default]
    TspCycle,
    Partition,
    Greedy,
    Random,
    /// Fixed timed plans from an explicit start configuration.
    Plan { start: Vec<PoseSpec>, plans: Vec<PlanSpec> },
    /// Greedy policy of a saved Q-table.
    Qtable { table: PathBuf },
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum PoseSpec {
    Node(Literal),
    Edge { from: Literal, to: Literal, remaining: Literal },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    #[serde(default)]
    pub prefix: Vec<SegmentSpec>,
    #[serde(default)]
    pub cycle: Vec<SegmentSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum SegmentSpec {
    Traverse(Literal),
    Wait(Literal),
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub depth_cap: usize,
    pub max_expansions: u64,
    pub latency_cap: Option<Literal>,
}

impl Default for OracleSection {
    fn default() -> Self {
        let d = SearchBounds::<Rational>::default();
        Self { depth_cap: d.depth_cap, max_expansions: d.max_expansions, latency_cap: None }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    /// Reference resolution; defaults to `delta / 4`.
    pub delta_ref: Option<Literal>,
    /// Evaluation starts compared for T-invariance; defaults to `T` and
    /// `T` plus the touring bound.
    pub t_values: Vec<Literal>,
}

pub enum PolicyChoice {
    TspCycle,
    Partition,
    Greedy,
    Random,
    Plan { initial: WorldState<Rational>, plans: Vec<RobotPlan<Rational>> },
    Qtable(PathBuf),
}

pub struct Experiment {
    pub graph: ExactGraph,
    pub p0: Vec<NodeId>,
    pub mdp: ExactMdpConfig,
    pub horizon: Rational,
    pub repetitions: usize,
    pub seed: u64,
    pub policy: PolicyChoice,
    pub bounds: SearchBounds<Rational>,
    pub learn: QConfig,
    pub delta_ref: Rational,
    pub t_values: Vec<Rational>,
    pub oracle_report: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

fn num(l: &Literal, what: &str) -> Result<Rational, ConfigError> {
    l.parse::<Rational>().map_err(|e| bad(format!("{what}: {e}")))
}

fn evaluation_start(l: &Literal) -> Result<Option<Rational>, ConfigError> {
    match l.text().to_ascii_lowercase().as_str() {
        "inf" | "infinity" | "+inf" => Ok(None),
        _ => num(l, "T").map(Some),
    }
}

fn node(g: &ExactGraph, l: &Literal) -> Result<NodeId, ConfigError> {
    g.node(&l.text()).map_err(bad)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        let file: ConfigFile = serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_file(file, base)
    }

    pub fn from_file(file: ConfigFile, base: &Path) -> Result<Self, ConfigError> {
        if file.schema != SCHEMA {
            return Err(bad(format!("unsupported schema {} (expected {SCHEMA})", file.schema)));
        }
        let graph_path = resolve(base, &file.graph);
        let graph = patrolbench::graph::load_graph::<Rational>(&graph_path).map_err(|e| bad(format!("{}: {e}", graph_path.display())))?;
        let p0 = file.p0.iter().map(|l| node(&graph, l)).collect::<Result<Vec<_>, _>>()?;

        let t = file.t.as_ref().map_or(Ok(Some(Rational::from_count(0))), evaluation_start)?;
        let mut mdp = MdpConfig::new(t, num(&file.delta, "delta")?, file.kappa_max).map_err(bad)?;
        if let Some(l) = &file.lambda_l {
            mdp.lambda_l = num(l, "lambda_L")?;
        }
        if let Some(l) = &file.lambda_z {
            mdp.lambda_z = num(l, "lambda_z")?;
        }
        mdp.baseline = file.baseline;
        mdp.validate().map_err(bad)?;

        let horizon = num(&file.horizon, "horizon")?;
        if horizon < Rational::from_count(0) {
            return Err(bad("horizon must be nonnegative"));
        }

        let policy = match file.policy {
            PolicySpec::TspCycle => PolicyChoice::TspCycle,
            PolicySpec::Partition => PolicyChoice::Partition,
            PolicySpec::Greedy => PolicyChoice::Greedy,
            PolicySpec::Random => PolicyChoice::Random,
            PolicySpec::Qtable { table } => PolicyChoice::Qtable(resolve(base, &table)),
            PolicySpec::Plan { start, plans } => {
                let poses = start
                    .iter()
                    .map(|p| match p {
                        PoseSpec::Node(v) => Ok(RobotPose::at(node(&graph, v)?)),
                        PoseSpec::Edge { from, to, remaining } => Ok(RobotPose {
                            from: node(&graph, from)?,
                            to: node(&graph, to)?,
                            remaining: num(remaining, "remaining")?,
                        }),
                    })
                    .collect::<Result<Vec<_>, ConfigError>>()?;
                let latencies = vec![Rational::from_count(0); graph.node_count()];
                let initial = WorldState::custom(&graph, poses, latencies, Rational::from_count(0)).map_err(bad)?;
                let segments = |xs: &[SegmentSpec]| {
                    xs.iter()
                        .map(|s| match s {
                            SegmentSpec::Traverse(v) => Ok(Segment::Traverse(node(&graph, v)?)),
                            SegmentSpec::Wait(d) => Ok(Segment::Wait(num(d, "wait")?)),
                        })
                        .collect::<Result<Vec<_>, ConfigError>>()
                };
                let plans = plans
                    .iter()
                    .map(|p| Ok(RobotPlan { prefix: segments(&p.prefix)?, cycle: segments(&p.cycle)? }))
                    .collect::<Result<Vec<_>, ConfigError>>()?;
                if plans.len() != initial.poses.len() {
                    return Err(bad(format!("{} plans for {} robots", plans.len(), initial.poses.len())));
                }
                PolicyChoice::Plan { initial, plans }
            }
        };
        let robots = match &policy {
            PolicyChoice::Plan { plans, .. } => plans.len(),
            _ => p0.len(),
        };
        if robots == 0 {
            return Err(bad("no robots: give p0 (or start for plan policies)"));
        }
        if let Some(k) = file.robots {
            if k != robots {
                return Err(bad(format!("robots = {k} but {robots} start positions given")));
            }
        }

        let bounds = SearchBounds {
            latency_cap: file.oracle.latency_cap.as_ref().map(|l| num(l, "latency_cap")).transpose()?,
            depth_cap: file.oracle.depth_cap,
            incumbent: None,
            max_expansions: file.oracle.max_expansions,
        };
        let delta_ref = match &file.verify.delta_ref {
            Some(l) => num(l, "delta_ref")?,
            None => mdp.delta / Rational::from_count(4),
        };
        let t_values = file.verify.t_values.iter().map(|l| num(l, "t_values")).collect::<Result<Vec<_>, _>>()?;

        Ok(Self {
            graph,
            p0,
            mdp,
            horizon,
            repetitions: file.repetitions,
            seed: file.seed,
            policy,
            bounds,
            learn: file.learn,
            delta_ref,
            t_values,
            oracle_report: file.oracle_report.map(|p| resolve(base, &p)),
            out: file.out.map(|p| resolve(base, &p)),
        })
    }
}
