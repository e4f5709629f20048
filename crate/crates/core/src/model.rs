//! Domain types shared by the solvers, the simulator and the verifier.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense vertex id, `0..num_vertices`.
pub type Vertex = usize;
/// Agent id, `0..n`.
pub type AgentId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("edge ({0}, {1}) references a vertex outside 0..{2}")]
    VertexOutOfRange(Vertex, Vertex, usize),
    #[error("self-loop at vertex {0}")]
    SelfLoop(Vertex),
}

/// Directed or undirected graph with sorted adjacency lists.
///
/// For directed graphs `neighbors(v)` are the out-neighbors of `v`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Graph {
    adjacency: Vec<Vec<Vertex>>,
    directed: bool,
}

impl Graph {
    pub fn from_edges(num_vertices: usize, edges: &[(Vertex, Vertex)], directed: bool) -> Result<Self, GraphError> {
        let mut adjacency = vec![Vec::new(); num_vertices];
        for &(u, v) in edges {
            if u >= num_vertices || v >= num_vertices {
                return Err(GraphError::VertexOutOfRange(u, v, num_vertices));
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            adjacency[u].push(v);
            if !directed {
                adjacency[v].push(u);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { adjacency, directed })
    }

    pub fn num_vertices(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn neighbors(&self, v: Vertex) -> &[Vertex] {
        &self.adjacency[v]
    }

    pub fn has_edge(&self, u: Vertex, v: Vertex) -> bool {
        self.adjacency.get(u).is_some_and(|list| list.binary_search(&v).is_ok())
    }

    /// Edge list; undirected edges are reported once as `(u, v)` with `u < v`.
    pub fn edges(&self) -> Vec<(Vertex, Vertex)> {
        let mut out = Vec::new();
        for (u, list) in self.adjacency.iter().enumerate() {
            for &v in list {
                if self.directed || u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        self.edges().len()
    }

    /// Breadth-first distances from `source` ignoring vertices flagged in `blocked`.
    /// Unreachable vertices get `usize::MAX`.
    pub fn distances_from(&self, source: Vertex, blocked: &[bool]) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.num_vertices()];
        if blocked.get(source).copied().unwrap_or(false) {
            return dist;
        }
        dist[source] = 0;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for &v in self.neighbors(u) {
                if dist[v] == usize::MAX && !blocked.get(v).copied().unwrap_or(false) {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Distances *to* `target` (reverse BFS; equals `distances_from` when undirected).
    pub fn distances_to(&self, target: Vertex, blocked: &[bool]) -> Vec<usize> {
        if !self.directed {
            return self.distances_from(target, blocked);
        }
        let mut reverse = vec![Vec::new(); self.num_vertices()];
        for (u, list) in self.adjacency.iter().enumerate() {
            for &v in list {
                reverse[v].push(u);
            }
        }
        let mut dist = vec![usize::MAX; self.num_vertices()];
        if blocked.get(target).copied().unwrap_or(false) {
            return dist;
        }
        dist[target] = 0;
        let mut queue = VecDeque::from([target]);
        while let Some(u) = queue.pop_front() {
            for &v in &reverse[u] {
                if dist[v] == usize::MAX && !blocked.get(v).copied().unwrap_or(false) {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn reachable_avoiding(&self, from: Vertex, to: Vertex, blocked: &[bool]) -> bool {
        self.distances_from(from, blocked)[to] != usize::MAX
    }

    /// Vertices of the largest weakly connected component, ascending.
    pub fn largest_component(&self) -> Vec<Vertex> {
        let n = self.num_vertices();
        let mut undirected = vec![Vec::new(); n];
        for (u, v) in self.edges() {
            undirected[u].push(v);
            undirected[v].push(u);
        }
        let mut comp = vec![usize::MAX; n];
        let mut best: Vec<Vertex> = Vec::new();
        for root in 0..n {
            if comp[root] != usize::MAX {
                continue;
            }
            let mut members = vec![root];
            comp[root] = root;
            let mut head = 0;
            while head < members.len() {
                let u = members[head];
                head += 1;
                for &v in &undirected[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = root;
                        members.push(v);
                    }
                }
            }
            if members.len() > best.len() {
                best = members;
            }
        }
        best.sort_unstable();
        best
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Instance {
    pub graph: Graph,
    pub starts: Vec<Vertex>,
    pub goals: Vec<Vertex>,
    /// Maximum number of crashes to tolerate.
    pub f: usize,
}

impl Instance {
    pub fn num_agents(&self) -> usize {
        self.starts.len()
    }

    /// Crash budget that can actually be spent: nobody observes the last correct agent.
    pub fn effective_budget(&self) -> usize {
        self.f.min(self.num_agents().saturating_sub(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Syn,
    Seq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FdMode {
    Nfd,
    Afd,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Syn => "syn",
            Model::Seq => "seq",
        })
    }
}

impl fmt::Display for FdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FdMode::Nfd => "nfd",
            FdMode::Afd => "afd",
        })
    }
}

/// Failure-detector reading for one neighboring vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observation {
    Vacant,
    Correct,
    CrashedAnon,
    Crashed(AgentId),
}

impl Observation {
    /// Drops the crashed agent's identity.
    pub fn anonymize(self) -> Self {
        match self {
            Observation::Crashed(_) => Observation::CrashedAnon,
            other => other,
        }
    }
}

impl fmt::Display for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observation::Vacant => f.write_str("vacant"),
            Observation::Correct => f.write_str("correct"),
            Observation::CrashedAnon => f.write_str("crashed"),
            Observation::Crashed(a) => write!(f, "crashed({a})"),
        }
    }
}

/// Switch from `from_path` to `to_path` when the agent sits at progress index
/// `at_index` (1-based) and the detector reports `trigger` at `watch_vertex`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransitionRule {
    pub from_path: usize,
    pub at_index: usize,
    pub watch_vertex: Vertex,
    pub trigger: Observation,
    pub to_path: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Plan {
    /// `paths[0]` is the primary path.
    pub paths: Vec<Vec<Vertex>>,
    pub rules: Vec<TransitionRule>,
}

impl Plan {
    pub fn single(path: Vec<Vertex>) -> Self {
        Self {
            paths: vec![path],
            rules: Vec::new(),
        }
    }

    pub fn primary(&self) -> &[Vertex] {
        &self.paths[0]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Solution {
    pub model: Model,
    pub fd_mode: FdMode,
    pub plans: Vec<Plan>,
}

impl Solution {
    /// Wraps one path per agent into rule-free plans.
    pub fn from_paths(paths: Vec<Vec<Vertex>>, model: Model, fd_mode: FdMode) -> Self {
        Self {
            model,
            fd_mode,
            plans: paths.into_iter().map(Plan::single).collect(),
        }
    }

    pub fn primary_paths(&self) -> Vec<Vec<Vertex>> {
        self.plans.iter().map(|p| p.paths[0].clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Violation {
    NoAgents,
    AgentCountMismatch { starts: usize, goals: usize },
    VertexOutOfRange { agent: AgentId, vertex: Vertex },
    DuplicateStart { agents: (AgentId, AgentId), vertex: Vertex },
    DuplicateGoal { agents: (AgentId, AgentId), vertex: Vertex },
}

/// Lists every violated instance invariant. Graph invariants hold by construction.
pub fn validate_instance(instance: &Instance) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = instance.starts.len();
    if n == 0 {
        out.push(Violation::NoAgents);
    }
    if instance.goals.len() != n {
        out.push(Violation::AgentCountMismatch {
            starts: n,
            goals: instance.goals.len(),
        });
    }
    let nv = instance.graph.num_vertices();
    for (agent, &v) in instance.starts.iter().chain(&instance.goals).enumerate() {
        if v >= nv {
            out.push(Violation::VertexOutOfRange {
                agent: agent % n.max(1),
                vertex: v,
            });
        }
    }
    for (list, dup) in [(&instance.starts, true), (&instance.goals, false)] {
        for i in 0..list.len() {
            for j in i + 1..list.len() {
                if list[i] == list[j] {
                    let agents = (i, j);
                    let vertex = list[i];
                    out.push(if dup {
                        Violation::DuplicateStart { agents, vertex }
                    } else {
                        Violation::DuplicateGoal { agents, vertex }
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NecessaryCondition {
    pub goal_condition: Vec<bool>,
    pub start_condition: Vec<bool>,
    pub holds: bool,
}

/// Two conditions any solvable instance satisfies: each agent can reach its goal
/// without touching another goal, and without touching the starts of any
/// `min(f, n-1)` other agents.
pub fn check_necessary(instance: &Instance) -> NecessaryCondition {
    let graph = &instance.graph;
    let n = instance.num_agents();
    let nv = graph.num_vertices();
    let budget = instance.f.min(n.saturating_sub(1));

    let mut goal_condition = Vec::with_capacity(n);
    let mut start_condition = Vec::with_capacity(n);
    for i in 0..n {
        let (s, g) = (instance.starts[i], instance.goals[i]);

        let mut blocked = vec![false; nv];
        for (j, &gj) in instance.goals.iter().enumerate() {
            if j != i {
                blocked[gj] = true;
            }
        }
        goal_condition.push(!blocked[s] && graph.reachable_avoiding(s, g, &blocked));

        let others: Vec<AgentId> = (0..n).filter(|&j| j != i).collect();
        let ok = for_each_subset(&others, budget, |subset| {
            let mut blocked = vec![false; nv];
            for &j in subset {
                blocked[instance.starts[j]] = true;
            }
            !blocked[g] && graph.reachable_avoiding(s, g, &blocked)
        });
        start_condition.push(ok);
    }
    let holds = goal_condition.iter().chain(&start_condition).all(|&b| b);
    NecessaryCondition {
        goal_condition,
        start_condition,
        holds,
    }
}

/// Calls `check` on every `k`-subset of `items` until it returns false.
fn for_each_subset<F: FnMut(&[AgentId]) -> bool>(items: &[AgentId], k: usize, mut check: F) -> bool {
    fn rec<F: FnMut(&[AgentId]) -> bool>(
        items: &[AgentId],
        k: usize,
        from: usize,
        chosen: &mut Vec<AgentId>,
        check: &mut F,
    ) -> bool {
        if chosen.len() == k {
            return check(chosen);
        }
        for idx in from..items.len() {
            if items.len() - idx < k - chosen.len() {
                break;
            }
            chosen.push(items[idx]);
            let ok = rec(items, k, idx + 1, chosen, check);
            chosen.pop();
            if !ok {
                return false;
            }
        }
        true
    }
    if k > items.len() {
        return true;
    }
    rec(items, k, 0, &mut Vec::with_capacity(k), &mut check)
}

/// True when consecutive vertices are equal (a wait) or joined by an edge.
pub fn is_valid_path(graph: &Graph, path: &[Vertex], allow_wait: bool) -> bool {
    !path.is_empty()
        && path.iter().all(|&v| v < graph.num_vertices())
        && path
            .windows(2)
            .all(|w| (allow_wait && w[0] == w[1]) || graph.has_edge(w[0], w[1]))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanViolation {
    PlanCountMismatch { plans: usize, agents: usize },
    EmptyPlan { agent: AgentId },
    PrimaryNotAtStart { agent: AgentId },
    InvalidPath { agent: AgentId, path: usize },
    RuleOutOfRange { agent: AgentId, rule: usize },
    WatchNotAdjacent { agent: AgentId, rule: usize },
    TargetDoesNotBranch { agent: AgentId, rule: usize },
    UnreachablePath { agent: AgentId, path: usize },
}

/// Structural checks on a solution; arrival is checked semantically by the verifier.
pub fn validate_solution(instance: &Instance, solution: &Solution) -> Vec<PlanViolation> {
    let mut out = Vec::new();
    let n = instance.num_agents();
    if solution.plans.len() != n {
        out.push(PlanViolation::PlanCountMismatch {
            plans: solution.plans.len(),
            agents: n,
        });
        return out;
    }
    let allow_wait = solution.model == Model::Syn;
    for (agent, plan) in solution.plans.iter().enumerate() {
        if plan.paths.is_empty() {
            out.push(PlanViolation::EmptyPlan { agent });
            continue;
        }
        if plan.paths[0].first() != Some(&instance.starts[agent]) {
            out.push(PlanViolation::PrimaryNotAtStart { agent });
        }
        for (idx, path) in plan.paths.iter().enumerate() {
            if !is_valid_path(&instance.graph, path, allow_wait) {
                out.push(PlanViolation::InvalidPath { agent, path: idx });
            }
        }
        let mut targeted = vec![false; plan.paths.len()];
        targeted[0] = true;
        for (ridx, rule) in plan.rules.iter().enumerate() {
            let (Some(from), Some(to)) = (plan.paths.get(rule.from_path), plan.paths.get(rule.to_path)) else {
                out.push(PlanViolation::RuleOutOfRange { agent, rule: ridx });
                continue;
            };
            targeted[rule.to_path] = true;
            let Some(&here) = rule.at_index.checked_sub(1).and_then(|k| from.get(k)) else {
                out.push(PlanViolation::RuleOutOfRange { agent, rule: ridx });
                continue;
            };
            if !instance.graph.has_edge(here, rule.watch_vertex) {
                out.push(PlanViolation::WatchNotAdjacent { agent, rule: ridx });
            }
            if to.first() != Some(&here) {
                out.push(PlanViolation::TargetDoesNotBranch { agent, rule: ridx });
            }
        }
        for (idx, t) in targeted.iter().enumerate() {
            if !t {
                out.push(PlanViolation::UnreachablePath { agent, path: idx });
            }
        }
    }
    out
}
