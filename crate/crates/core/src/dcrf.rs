//! Decoupled crash-fault resolution.
//!
//! Plans start from one path per agent. Every way a crash on one path can
//! block another path is an *event*; events are resolved in order of the time
//! (SYN) or index (SEQ) at which the blocked agent would run into the crashed
//! one, by planning a backup path that branches one step earlier and a
//! transition rule that switches to it.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{AgentId, FdMode, Instance, Model, Observation, Plan, Solution, TransitionRule, Vertex};
use crate::pathfind::{find_path_seq, find_path_syn, ReservationTable, SeqConstraints, SynConstraints};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrashTime {
    At(usize),
    Unconditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Crash {
    pub agent: AgentId,
    pub vertex: Vertex,
    pub when: CrashTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Effect {
    pub agent: AgentId,
    /// Index of the blocked path within the agent's plan.
    pub path: usize,
    pub vertex: Vertex,
    /// 1-based index of `vertex` on the blocked path.
    pub at_index: usize,
    /// Global time of the effect (SYN only).
    pub time: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Event {
    pub crash: Crash,
    pub effect: Effect,
}

/// A crash assumed by a path: who crashed where. `agent` is `None` for
/// crashes observed through an anonymous failure detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Assumption {
    pub agent: Option<AgentId>,
    pub vertex: Vertex,
}

/// Crash assumptions accumulated along a path's ancestry.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathContext {
    pub assumptions: BTreeSet<Assumption>,
}

impl PathContext {
    pub fn with(&self, a: Assumption) -> Self {
        let mut next = self.clone();
        next.assumptions.insert(a);
        next
    }

    pub fn named_crashed(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.assumptions.iter().filter_map(|a| a.agent)
    }
}

/// Whether all `assumptions` can hold in one execution with at most `f`
/// crashes while every agent in `alive` stays correct.
pub fn assumptions_compatible<'a>(
    assumptions: impl IntoIterator<Item = &'a Assumption>,
    alive: &[AgentId],
    f: usize,
) -> bool {
    let mut at: BTreeMap<AgentId, Vertex> = BTreeMap::new();
    let mut by_vertex: BTreeMap<Vertex, AgentId> = BTreeMap::new();
    let mut anonymous: BTreeSet<Vertex> = BTreeSet::new();
    for a in assumptions {
        match a.agent {
            Some(agent) => {
                if alive.contains(&agent) {
                    return false;
                }
                if *at.entry(agent).or_insert(a.vertex) != a.vertex {
                    return false;
                }
                if *by_vertex.entry(a.vertex).or_insert(agent) != agent {
                    return false;
                }
            }
            None => {
                anonymous.insert(a.vertex);
            }
        }
    }
    let extra = anonymous.iter().filter(|v| !by_vertex.contains_key(v)).count();
    at.len() + extra <= f
}

/// Whether paths with these contexts can both be executed in one run.
pub fn prune_inconsistent(a: &PathContext, b: &PathContext, f: usize) -> bool {
    assumptions_compatible(a.assumptions.iter().chain(&b.assumptions), &[], f)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolverConfig {
    pub model: Model,
    pub fd_mode: FdMode,
    pub refine: bool,
    pub restarts: usize,
    pub deadline: Duration,
    pub seed: u64,
    /// Planning order for initial paths; agent-id order when absent.
    pub priority: Option<Vec<AgentId>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            model: Model::Syn,
            fd_mode: FdMode::Nfd,
            refine: true,
            restarts: 10,
            deadline: Duration::from_secs(30),
            seed: 0,
            priority: None,
        }
    }
}

impl SolverConfig {
    pub fn new(model: Model, fd_mode: FdMode) -> Self {
        SolverConfig {
            model,
            fd_mode,
            refine: model == Model::Syn,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum Failure {
    #[error("failed to find initial paths")]
    InitPaths,
    #[error("failed to find a backup path")]
    NoBackup,
    #[error("deadline exceeded")]
    Timeout,
}

impl Failure {
    pub fn reason(&self) -> &'static str {
        match self {
            Failure::InitPaths => "init_paths",
            Failure::NoBackup => "no_backup",
            Failure::Timeout => "timeout",
        }
    }
}

/// Result of a solver run together with the events it resolved, in order.
#[derive(Debug, Clone)]
pub struct SolveRun {
    pub result: Result<Solution, Failure>,
    pub initial_paths: Option<Vec<Vec<Vertex>>>,
    pub resolved: Vec<Event>,
}

pub fn solve(instance: &Instance, config: &SolverConfig) -> Result<Solution, Failure> {
    solve_traced(instance, config).result
}

pub fn solve_traced(instance: &Instance, config: &SolverConfig) -> SolveRun {
    let started = Instant::now();
    let mut run = SolveRun {
        result: Err(Failure::InitPaths),
        initial_paths: None,
        resolved: Vec::new(),
    };
    let mut initial = match get_initial_plans(instance, config) {
        Ok(p) => p,
        Err(e) => {
            run.result = Err(e);
            return run;
        }
    };
    if config.refine && config.model == Model::Syn {
        initial = refine_initial_paths(instance, &initial, config);
    }
    run.initial_paths = Some(initial.clone());
    let mut state = Planner::new(instance, config, initial);
    let mut queue = EventQueue::default();
    for e in get_initial_unresolved_events(instance, &state) {
        queue.push(config.model, e);
    }
    while let Some(event) = queue.pop() {
        if started.elapsed() > config.deadline {
            run.result = Err(Failure::Timeout);
            return run;
        }
        let key = state.rule_key(&event);
        if state.resolved_keys.contains(&key) {
            continue;
        }
        let Some((path, rule)) = find_backup_path(instance, &state, &event) else {
            run.resolved.push(event);
            run.result = Err(Failure::NoBackup);
            return run;
        };
        run.resolved.push(event);
        state.resolved_keys.insert(key);
        let new = state.add_backup(&event, path, rule);
        for e in get_new_unresolved_events(instance, &state, new) {
            queue.push(config.model, e);
        }
    }
    run.result = Ok(state.into_solution());
    run
}

/// Planned path with the information needed to reason about it.
#[derive(Debug, Clone)]
pub struct PathRecord {
    pub agent: AgentId,
    /// Index within the agent's plan.
    pub plan_index: usize,
    pub vertices: Vec<Vertex>,
    /// Global time of the first vertex (SYN); 1 for every SEQ path.
    pub start_time: usize,
    pub context: PathContext,
}

impl PathRecord {
    fn time_at(&self, index: usize) -> usize {
        self.start_time + index - 1
    }

    /// First path index whose own crash is not already covered by the parent.
    fn first_crash_index(&self) -> usize {
        if self.plan_index == 0 {
            1
        } else {
            2
        }
    }
}

type RuleKey = (usize, usize, Vertex, Observation);

/// Solver state: every path planned so far and the rules between them.
#[derive(Debug, Clone)]
pub struct Planner<'a> {
    instance: &'a Instance,
    model: Model,
    fd_mode: FdMode,
    pub paths: Vec<PathRecord>,
    /// Per agent, indices into `paths` in plan order.
    by_agent: Vec<Vec<usize>>,
    rules: Vec<Vec<TransitionRule>>,
    resolved_keys: HashSet<RuleKey>,
}

impl<'a> Planner<'a> {
    pub fn new(instance: &'a Instance, config: &SolverConfig, initial: Vec<Vec<Vertex>>) -> Self {
        let n = instance.num_agents();
        let paths: Vec<PathRecord> = initial
            .into_iter()
            .enumerate()
            .map(|(agent, vertices)| PathRecord {
                agent,
                plan_index: 0,
                vertices,
                start_time: 1,
                context: PathContext::default(),
            })
            .collect();
        Planner {
            instance,
            model: config.model,
            fd_mode: config.fd_mode,
            paths,
            by_agent: (0..n).map(|a| vec![a]).collect(),
            rules: vec![Vec::new(); n],
            resolved_keys: HashSet::new(),
        }
    }

    fn record(&self, agent: AgentId, plan_index: usize) -> &PathRecord {
        &self.paths[self.by_agent[agent][plan_index]]
    }

    fn trigger(&self, crashed: AgentId) -> Observation {
        match self.fd_mode {
            FdMode::Nfd => Observation::Crashed(crashed),
            FdMode::Afd => Observation::CrashedAnon,
        }
    }

    fn assumption(&self, crash: &Crash) -> Assumption {
        Assumption {
            agent: match self.fd_mode {
                FdMode::Nfd => Some(crash.agent),
                FdMode::Afd => None,
            },
            vertex: crash.vertex,
        }
    }

    fn rule_key(&self, e: &Event) -> RuleKey {
        (
            self.by_agent[e.effect.agent][e.effect.path],
            e.effect.at_index - 1,
            e.effect.vertex,
            self.trigger(e.crash.agent),
        )
    }

    /// Events where a crash on path `x` blocks path `y`.
    fn events_between(&self, x: usize, y: usize) -> Vec<Event> {
        let (px, py) = (&self.paths[x], &self.paths[y]);
        if px.agent == py.agent {
            return Vec::new();
        }
        let f = self.instance.f;
        let mut out = Vec::new();
        for k in px.first_crash_index()..=px.vertices.len() {
            let v = px.vertices[k - 1];
            let crash_time = px.time_at(k);
            let named = Assumption {
                agent: Some(px.agent),
                vertex: v,
            };
            let world = px
                .context
                .assumptions
                .iter()
                .chain(&py.context.assumptions)
                .chain([&named]);
            if !assumptions_compatible(world, &[py.agent], f) {
                continue;
            }
            let hit = (1..=py.vertices.len())
                .find(|&k2| py.vertices[k2 - 1] == v && (self.model == Model::Seq || py.time_at(k2) > crash_time));
            let Some(k2) = hit else { continue };
            if k2 < 2 {
                continue;
            }
            out.push(Event {
                crash: Crash {
                    agent: px.agent,
                    vertex: v,
                    when: match self.model {
                        Model::Syn => CrashTime::At(crash_time),
                        Model::Seq => CrashTime::Unconditional,
                    },
                },
                effect: Effect {
                    agent: py.agent,
                    path: py.plan_index,
                    vertex: v,
                    at_index: k2,
                    time: (self.model == Model::Syn).then(|| py.time_at(k2)),
                },
            });
        }
        out
    }

    /// Whether path `p` may run alongside a path of another agent with
    /// `context` whose own agent is `agent`.
    fn co_executable(&self, p: &PathRecord, context: &PathContext, agent: AgentId) -> bool {
        let world = p.context.assumptions.iter().chain(&context.assumptions);
        assumptions_compatible(world, &[p.agent, agent], self.instance.f)
    }

    fn add_backup(&mut self, event: &Event, vertices: Vec<Vertex>, mut rule: TransitionRule) -> usize {
        let parent = self.by_agent[event.effect.agent][event.effect.path];
        let p = &self.paths[parent];
        let record = PathRecord {
            agent: p.agent,
            plan_index: self.by_agent[p.agent].len(),
            vertices,
            start_time: p.time_at(event.effect.at_index - 1),
            context: p.context.with(self.assumption(&event.crash)),
        };
        rule.to_path = record.plan_index;
        let id = self.paths.len();
        self.by_agent[record.agent].push(id);
        self.rules[record.agent].push(rule);
        self.paths.push(record);
        id
    }

    pub fn into_solution(self) -> Solution {
        let plans = (0..self.by_agent.len())
            .map(|a| Plan {
                paths: self.by_agent[a]
                    .iter()
                    .map(|&i| self.paths[i].vertices.clone())
                    .collect(),
                rules: self.rules[a].clone(),
            })
            .collect();
        Solution {
            model: self.model,
            fd_mode: self.fd_mode,
            plans,
        }
    }
}

/// Pending events ordered by effect time (SYN) or index (SEQ), then affected
/// agent, then crashing agent, then insertion order.
#[derive(Debug, Default)]
struct EventQueue {
    items: BTreeMap<(usize, AgentId, AgentId, usize), Event>,
    inserted: usize,
}

impl EventQueue {
    fn push(&mut self, model: Model, e: Event) {
        let when = match model {
            Model::Syn => e.effect.time.unwrap_or(e.effect.at_index),
            Model::Seq => e.effect.at_index,
        };
        self.items
            .insert((when, e.effect.agent, e.crash.agent, self.inserted), e);
        self.inserted += 1;
    }

    fn pop(&mut self) -> Option<Event> {
        self.items.pop_first().map(|(_, e)| e)
    }
}

/// Initial path per agent: prioritized planning, retried with shuffled orders.
pub fn get_initial_plans(instance: &Instance, config: &SolverConfig) -> Result<Vec<Vec<Vertex>>, Failure> {
    let n = instance.num_agents();
    let mut order: Vec<AgentId> = config.priority.clone().unwrap_or_else(|| (0..n).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for attempt in 0..=config.restarts {
        if attempt > 0 {
            order.shuffle(&mut rng);
        }
        let planned = match config.model {
            Model::Syn => prioritized_syn(instance, &order),
            Model::Seq => prioritized_seq(instance, &order),
        };
        if let Some(paths) = planned {
            return Ok(paths);
        }
    }
    Err(Failure::InitPaths)
}

fn other_goals(instance: &Instance, agent: AgentId) -> impl Iterator<Item = Vertex> + '_ {
    instance
        .goals
        .iter()
        .enumerate()
        .filter(move |&(b, _)| b != agent)
        .map(|(_, &g)| g)
}

fn prioritized_syn(instance: &Instance, order: &[AgentId]) -> Option<Vec<Vec<Vertex>>> {
    let mut paths = vec![Vec::new(); instance.num_agents()];
    let mut constraints = SynConstraints {
        crash_budget: 0,
        ..Default::default()
    };
    let mut penalty = HashSet::new();
    for &a in order {
        constraints.blocked_forever = other_goals(instance, a).collect();
        let p = find_path_syn(
            &instance.graph,
            instance.starts[a],
            1,
            instance.goals[a],
            &constraints,
            &penalty,
        )?;
        constraints.reserved.add_path(1, &p);
        penalty.extend(p.iter().copied());
        paths[a] = p;
    }
    Some(paths)
}

fn prioritized_seq(instance: &Instance, order: &[AgentId]) -> Option<Vec<Vec<Vertex>>> {
    let n = instance.num_agents();
    let mut paths = vec![Vec::new(); n];
    let mut used: BTreeSet<Vertex> = BTreeSet::new();
    for &a in order {
        let mut forbidden = used.clone();
        forbidden.extend(other_goals(instance, a));
        forbidden.extend((0..n).filter(|&b| b != a).map(|b| instance.starts[b]));
        let c = SeqConstraints {
            forbidden_vertices: forbidden,
        };
        let p = find_path_seq(
            &instance.graph,
            instance.starts[a],
            instance.goals[a],
            &c,
            &HashSet::new(),
        )?;
        used.extend(p.iter().copied());
        paths[a] = p;
    }
    Some(paths)
}

/// All events among the initial paths, in queue order.
pub fn get_initial_unresolved_events(instance: &Instance, planner: &Planner<'_>) -> Vec<Event> {
    let n = instance.num_agents();
    let mut queue = EventQueue::default();
    for y in 0..n {
        for x in 0..n {
            for e in planner.events_between(x, y) {
                queue.push(planner.model, e);
            }
        }
    }
    std::iter::from_fn(|| queue.pop()).collect()
}

/// Plans the backup path resolving `event`, with the rule that enters it.
/// The rule's `to_path` is filled in when the backup is added to the plan.
pub fn find_backup_path(
    instance: &Instance,
    planner: &Planner<'_>,
    event: &Event,
) -> Option<(Vec<Vertex>, TransitionRule)> {
    let agent = event.effect.agent;
    let parent = planner.record(agent, event.effect.path);
    let branch = event.effect.at_index - 1;
    let start = parent.vertices[branch - 1];
    let start_time = parent.time_at(branch);
    let context = parent.context.with(planner.assumption(&event.crash));

    let crashed: BTreeSet<AgentId> = context.named_crashed().collect();
    let mut blocked: BTreeSet<Vertex> = context.assumptions.iter().map(|a| a.vertex).collect();
    blocked.extend(
        (0..instance.num_agents())
            .filter(|&b| b != agent && !crashed.contains(&b))
            .map(|b| instance.goals[b]),
    );
    let others: Vec<&PathRecord> = planner
        .paths
        .iter()
        .filter(|p| p.agent != agent && planner.co_executable(p, &context, agent))
        .collect();
    let path = match planner.model {
        Model::Syn => {
            let mut constraints = SynConstraints {
                blocked_forever: blocked,
                reserved: ReservationTable::new(),
                crash_budget: instance.f,
            };
            let mut penalty = HashSet::new();
            for p in &others {
                constraints.reserved.add_path(p.start_time, &p.vertices);
                penalty.extend(p.vertices.iter().copied());
            }
            find_path_syn(
                &instance.graph,
                start,
                start_time,
                instance.goals[agent],
                &constraints,
                &penalty,
            )?
        }
        Model::Seq => {
            for p in &others {
                blocked.extend(p.vertices.iter().copied());
            }
            blocked.remove(&start);
            let c = SeqConstraints {
                forbidden_vertices: blocked,
            };
            find_path_seq(&instance.graph, start, instance.goals[agent], &c, &HashSet::new())?
        }
    };
    let rule = TransitionRule {
        from_path: event.effect.path,
        at_index: branch,
        watch_vertex: event.effect.vertex,
        trigger: planner.trigger(event.crash.agent),
        to_path: usize::MAX,
    };
    Some((path, rule))
}

/// Events in both directions between path `new` and every path of other agents.
pub fn get_new_unresolved_events(_instance: &Instance, planner: &Planner<'_>, new: usize) -> Vec<Event> {
    let mut out = Vec::new();
    for other in 0..planner.paths.len() {
        if other == new {
            continue;
        }
        out.extend(planner.events_between(new, other));
        out.extend(planner.events_between(other, new));
    }
    out
}

/// Number of (pair of agents, vertex) incidences shared between paths.
pub fn shared_vertex_count(paths: &[Vec<Vertex>]) -> usize {
    let sets: Vec<BTreeSet<Vertex>> = paths.iter().map(|p| p.iter().copied().collect()).collect();
    let mut total = 0;
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            total += sets[i].intersection(&sets[j]).count();
        }
    }
    total
}

/// Replans agents one at a time against the others, keeping a replacement
/// only when it lowers the total shared-vertex count without getting longer.
pub fn refine_initial_paths(instance: &Instance, initial: &[Vec<Vertex>], config: &SolverConfig) -> Vec<Vec<Vertex>> {
    let mut paths = initial.to_vec();
    let n = paths.len();
    if config.model != Model::Syn {
        return paths;
    }
    for _pass in 0..2 {
        let mut improved = false;
        for a in 0..n {
            let mut constraints = SynConstraints {
                blocked_forever: other_goals(instance, a).collect(),
                ..Default::default()
            };
            let mut penalty = HashSet::new();
            for (b, p) in paths.iter().enumerate() {
                if b != a {
                    constraints.reserved.add_path(1, p);
                    penalty.extend(p.iter().copied());
                }
            }
            let Some(candidate) = find_path_syn(
                &instance.graph,
                instance.starts[a],
                1,
                instance.goals[a],
                &constraints,
                &penalty,
            ) else {
                continue;
            };
            if candidate.len() > paths[a].len() {
                continue;
            }
            let before = shared_vertex_count(&paths);
            let old = std::mem::replace(&mut paths[a], candidate);
            if shared_vertex_count(&paths) < before {
                improved = true;
            } else {
                paths[a] = old;
            }
        }
        if !improved {
            break;
        }
    }
    paths
}
