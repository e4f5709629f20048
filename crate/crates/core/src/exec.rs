//! Execution semantics for both models, including the failure detector.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::model::{AgentId, FdMode, Graph, Instance, Observation, Solution, Vertex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Correct,
    Crashed,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgentState {
    pub current_path: usize,
    /// 1-based position on the current path.
    pub progress: usize,
    pub vertex: Vertex,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Config {
    /// SYN timestep (1-based); number of applied actions in SEQ.
    pub time: usize,
    pub agents: Vec<AgentState>,
}

impl Config {
    pub fn initial(instance: &Instance, solution: &Solution) -> Self {
        let agents = solution
            .plans
            .iter()
            .enumerate()
            .map(|(a, plan)| {
                let path = plan.primary();
                let mut s = AgentState {
                    current_path: 0,
                    progress: 1,
                    vertex: path[0],
                    status: Status::Correct,
                };
                mark_done(&mut s, path.len(), instance.goals[a]);
                s
            })
            .collect();
        Config { time: 1, agents }
    }

    pub fn occupant(&self, v: Vertex) -> Option<AgentId> {
        self.agents.iter().position(|s| s.vertex == v)
    }

    /// Correct agents that have not reached their goal.
    pub fn unfinished(&self) -> Vec<AgentId> {
        (0..self.agents.len())
            .filter(|&a| self.agents[a].status == Status::Correct)
            .collect()
    }

    pub fn crash_count(&self) -> usize {
        self.agents.iter().filter(|s| s.status == Status::Crashed).count()
    }
}

fn mark_done(s: &mut AgentState, path_len: usize, goal: Vertex) {
    if s.status == Status::Correct && s.progress == path_len && s.vertex == goal {
        s.status = Status::Done;
    }
}

/// What the failure detector reports about `v`.
pub fn observe_vertex(config: &Config, v: Vertex, fd_mode: FdMode) -> Observation {
    match config.occupant(v) {
        None => Observation::Vacant,
        Some(b) if config.agents[b].status == Status::Crashed => match fd_mode {
            FdMode::Nfd => Observation::Crashed(b),
            FdMode::Afd => Observation::CrashedAnon,
        },
        Some(_) => Observation::Correct,
    }
}

/// Failure-detector reading of every neighbor of `agent`'s vertex.
pub fn observe(graph: &Graph, config: &Config, agent: AgentId, fd_mode: FdMode) -> BTreeMap<Vertex, Observation> {
    graph
        .neighbors(config.agents[agent].vertex)
        .iter()
        .map(|&v| (v, observe_vertex(config, v, fd_mode)))
        .collect()
}

fn trigger_matches(trigger: Observation, observed: Observation) -> bool {
    trigger == observed || (trigger == Observation::CrashedAnon && matches!(observed, Observation::Crashed(_)))
}

/// Applies `agent`'s transition rules until none fires. Returns the indices of
/// the rules that fired, in order.
fn apply_rules(solution: &Solution, config: &Config, agent: AgentId, state: &mut AgentState) -> Vec<usize> {
    let plan = &solution.plans[agent];
    let mut fired = Vec::new();
    // A well-formed plan's rule graph is acyclic; the bound guards malformed input.
    for _ in 0..=plan.rules.len() {
        let hit = plan.rules.iter().position(|r| {
            r.from_path == state.current_path
                && r.at_index == state.progress
                && trigger_matches(r.trigger, observe_vertex(config, r.watch_vertex, solution.fd_mode))
        });
        match hit {
            Some(i) => {
                state.current_path = plan.rules[i].to_path;
                state.progress = 1;
                fired.push(i);
            }
            None => break,
        }
    }
    fired
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionKind {
    Vertex(Vertex),
    Swap(Vertex, Vertex),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[error("agents {} and {} collide at step {time}: {kind:?}", agents.0, agents.1)]
pub struct Collision {
    pub agents: (AgentId, AgentId),
    /// Timestep whose move produced the collision.
    pub time: usize,
    pub kind: CollisionKind,
}

/// One SYN step: crashes, rule evaluation, moves, collision check.
pub fn step_syn(
    instance: &Instance,
    solution: &Solution,
    config: &Config,
    crashes_now: &[AgentId],
) -> Result<(Config, Vec<(AgentId, usize)>), Collision> {
    let mut crashed = config.clone();
    for &a in crashes_now {
        crashed.agents[a].status = Status::Crashed;
    }
    let mut next = crashed.clone();
    let mut fired = Vec::new();
    for a in 0..next.agents.len() {
        if next.agents[a].status != Status::Correct {
            continue;
        }
        let mut s = next.agents[a];
        for r in apply_rules(solution, &crashed, a, &mut s) {
            fired.push((a, r));
        }
        let path = &solution.plans[a].paths[s.current_path];
        if s.progress < path.len() {
            s.progress += 1;
            s.vertex = path[s.progress - 1];
        }
        mark_done(&mut s, path.len(), instance.goals[a]);
        next.agents[a] = s;
    }
    let n = next.agents.len();
    for a in 0..n {
        for b in a + 1..n {
            let (pa, pb) = (&next.agents[a], &next.agents[b]);
            if pa.vertex == pb.vertex {
                return Err(Collision {
                    agents: (a, b),
                    time: config.time,
                    kind: CollisionKind::Vertex(pa.vertex),
                });
            }
            let (oa, ob) = (crashed.agents[a].vertex, crashed.agents[b].vertex);
            if oa != pa.vertex && ob != pb.vertex && oa == pb.vertex && ob == pa.vertex {
                return Err(Collision {
                    agents: (a, b),
                    time: config.time,
                    kind: CollisionKind::Swap(oa, ob),
                });
            }
        }
    }
    next.time += 1;
    Ok((next, fired))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeqAction {
    Activate(AgentId),
    Crash(AgentId),
}

/// One SEQ action. Blocked moves and actions on inactive agents are no-ops.
pub fn step_seq(
    instance: &Instance,
    solution: &Solution,
    config: &Config,
    action: SeqAction,
) -> (Config, Vec<(AgentId, usize)>) {
    let mut next = config.clone();
    next.time += 1;
    let mut fired = Vec::new();
    match action {
        SeqAction::Crash(a) => next.agents[a].status = Status::Crashed,
        SeqAction::Activate(a) => {
            if next.agents[a].status != Status::Correct {
                return (next, fired);
            }
            let mut s = next.agents[a];
            for r in apply_rules(solution, config, a, &mut s) {
                fired.push((a, r));
            }
            let path = &solution.plans[a].paths[s.current_path];
            if s.progress < path.len() {
                let v = path[s.progress];
                if v == s.vertex || config.occupant(v).is_none() {
                    s.vertex = v;
                    s.progress += 1;
                }
            }
            mark_done(&mut s, path.len(), instance.goals[a]);
            next.agents[a] = s;
        }
    }
    (next, fired)
}

/// Per-agent crash timestep for SYN; `None` means the agent never crashes.
pub type SynCrashPattern = Vec<Option<usize>>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    AllArrived,
    Stuck(Vec<AgentId>),
    Collision(Collision),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub label: String,
    pub config: Config,
    /// `(agent, rule index)` of rules fired to reach this configuration.
    pub fired: Vec<(AgentId, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
}

impl Trace {
    fn push(&mut self, label: String, config: &Config, fired: Vec<(AgentId, usize)>) {
        self.entries.push(TraceEntry {
            label,
            config: config.clone(),
            fired,
        });
    }

    /// Vertex sequence visited by `agent`, with consecutive repeats removed.
    pub fn visited(&self, agent: AgentId) -> Vec<Vertex> {
        let mut out: Vec<Vertex> = Vec::new();
        for e in &self.entries {
            let v = e.config.agents[agent].vertex;
            if out.last() != Some(&v) {
                out.push(v);
            }
        }
        out
    }

    /// One line per configuration:
    /// `label | a<id>=v<vertex>/p<path>/k<progress>/<status> ... [| fired a<id>:r<rule> ...]`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.label);
            out.push_str(" |");
            for (a, s) in e.config.agents.iter().enumerate() {
                let st = match s.status {
                    Status::Correct => 'C',
                    Status::Crashed => 'X',
                    Status::Done => 'D',
                };
                let _ = write!(out, " a{a}=v{}/p{}/k{}/{st}", s.vertex, s.current_path, s.progress);
            }
            if !e.fired.is_empty() {
                out.push_str(" | fired");
                for (a, r) in &e.fired {
                    let _ = write!(out, " a{a}:r{r}");
                }
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

fn final_outcome(config: &Config) -> Outcome {
    let stuck = config.unfinished();
    if stuck.is_empty() {
        Outcome::AllArrived
    } else {
        Outcome::Stuck(stuck)
    }
}

/// Simulates SYN under `pattern` until every agent is done or crashed, a
/// collision occurs, or the configuration stops changing.
pub fn run_syn(instance: &Instance, solution: &Solution, pattern: &SynCrashPattern) -> (Trace, Outcome) {
    let mut trace = Trace::default();
    let mut config = Config::initial(instance, solution);
    trace.push("t=1".into(), &config, Vec::new());
    let last_crash = pattern.iter().flatten().copied().max().unwrap_or(0);
    let cap = last_crash
        + 2
        + solution
            .plans
            .iter()
            .map(|p| p.paths.iter().map(Vec::len).sum::<usize>())
            .sum::<usize>();
    loop {
        if config.unfinished().is_empty() {
            return (trace, Outcome::AllArrived);
        }
        let t = config.time;
        let crashes: Vec<AgentId> = (0..config.agents.len())
            .filter(|&a| pattern.get(a).copied().flatten() == Some(t) && config.agents[a].status != Status::Crashed)
            .collect();
        match step_syn(instance, solution, &config, &crashes) {
            Err(c) => return (trace, Outcome::Collision(c)),
            Ok((next, fired)) => {
                let unchanged = next.agents == config.agents;
                trace.push(format!("t={}", next.time), &next, fired);
                config = next;
                if (unchanged && t >= last_crash) || t > cap {
                    return (trace, final_outcome(&config));
                }
            }
        }
    }
}

/// Applies `schedule` in order and reports agents left unfinished.
pub fn run_seq(instance: &Instance, solution: &Solution, schedule: &[SeqAction]) -> (Trace, Outcome) {
    let mut trace = Trace::default();
    let mut config = Config::initial(instance, solution);
    trace.push("start".into(), &config, Vec::new());
    for &action in schedule {
        let (next, fired) = step_seq(instance, solution, &config, action);
        let label = match action {
            SeqAction::Activate(a) => format!("activate a{a}"),
            SeqAction::Crash(a) => format!("crash a{a}"),
        };
        trace.push(label, &next, fired);
        config = next;
    }
    (trace, final_outcome(&config))
}
