//! Pairwise vertex-disjoint paths by conflict-based search.
//!
//! Disjoint paths tolerate any crash pattern without transition rules, which
//! makes this solver a baseline for the crash-aware planner.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashSet};
use std::time::{Duration, Instant};

use crate::model::{AgentId, FdMode, Instance, Model, Solution, Vertex};
use crate::pathfind::{find_path_seq, SeqConstraints};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum DisjointError {
    #[error("no pairwise vertex-disjoint paths exist")]
    Infeasible,
    #[error("deadline exceeded")]
    Timeout,
}

/// Split of a conflict at `vertex` involving `agent`: in any disjoint
/// solution either `agent` avoids the vertex or every other agent does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Constraint {
    Avoid { agent: AgentId, vertex: Vertex },
    OthersAvoid { agent: AgentId, vertex: Vertex },
}

impl Constraint {
    fn forbids(&self, x: AgentId) -> Option<Vertex> {
        match *self {
            Constraint::Avoid { agent, vertex } if agent == x => Some(vertex),
            Constraint::OthersAvoid { agent, vertex } if agent != x => Some(vertex),
            _ => None,
        }
    }
}

/// Constraint-tree node, stored relative to its parent.
struct Node {
    parent: Option<usize>,
    constraint: Option<Constraint>,
    replanned: Vec<(AgentId, Vec<Vertex>)>,
}

/// Full state of a node: per-agent forbidden sets, paths, and constraints.
struct State {
    forbidden: Vec<BTreeSet<Vertex>>,
    paths: Vec<Vec<Vertex>>,
    constraints: Vec<Constraint>,
}

fn reconstruct(nodes: &[Node], base: &[BTreeSet<Vertex>], id: usize) -> State {
    let n = base.len();
    let mut forbidden = base.to_vec();
    let mut paths: Vec<Option<Vec<Vertex>>> = vec![None; n];
    let mut constraints = Vec::new();
    let mut cur = Some(id);
    while let Some(i) = cur {
        let node = &nodes[i];
        if let Some(c) = node.constraint {
            constraints.push(c);
            for (x, f) in forbidden.iter_mut().enumerate() {
                if let Some(v) = c.forbids(x) {
                    f.insert(v);
                }
            }
        }
        for (a, p) in &node.replanned {
            if paths[*a].is_none() {
                paths[*a] = Some(p.clone());
            }
        }
        cur = node.parent;
    }
    constraints.sort_unstable();
    State {
        forbidden,
        paths: paths.into_iter().map(|p| p.expect("root plans every agent")).collect(),
        constraints,
    }
}

/// Vertices lying on every shortest path of `agent` under its constraints.
fn narrow_vertices(instance: &Instance, forbidden: &BTreeSet<Vertex>, agent: AgentId) -> HashSet<Vertex> {
    let g = &instance.graph;
    let mut blocked = vec![false; g.num_vertices()];
    for &v in forbidden {
        blocked[v] = true;
    }
    let from = g.distances_from(instance.starts[agent], &blocked);
    let to = g.distances_to(instance.goals[agent], &blocked);
    let d = from[instance.goals[agent]];
    if d == usize::MAX {
        return HashSet::new();
    }
    let mut layers: Vec<Vec<Vertex>> = vec![Vec::new(); d + 1];
    for v in 0..g.num_vertices() {
        if from[v] != usize::MAX && to[v] != usize::MAX && from[v] + to[v] == d {
            layers[from[v]].push(v);
        }
    }
    layers.into_iter().filter(|l| l.len() == 1).map(|l| l[0]).collect()
}

/// Conflict to split on, as (agent kept on the vertex, vertex). Prefers a
/// shared vertex on every shortest path of both agents, then of one, then
/// the first found; the kept agent is one whose shortest paths all use it.
fn choose_conflict(instance: &Instance, state: &State) -> Option<(AgentId, Vertex)> {
    let sets: Vec<BTreeSet<Vertex>> = state.paths.iter().map(|p| p.iter().copied().collect()).collect();
    let mut narrow: Vec<Option<HashSet<Vertex>>> = vec![None; state.paths.len()];
    let mut best: Option<(usize, (AgentId, Vertex))> = None;
    for a in 0..sets.len() {
        for b in a + 1..sets.len() {
            for &v in sets[a].intersection(&sets[b]) {
                let mut hits = [false; 2];
                for (h, x) in hits.iter_mut().zip([a, b]) {
                    let nx = narrow[x].get_or_insert_with(|| narrow_vertices(instance, &state.forbidden[x], x));
                    *h = nx.contains(&v);
                }
                let rank = hits.iter().filter(|&&h| h).count();
                let keep = if hits[1] && !hits[0] { b } else { a };
                if rank == 2 {
                    return Some((keep, v));
                }
                if best.is_none_or(|(r, _)| rank > r) {
                    best = Some((rank, (keep, v)));
                }
            }
        }
    }
    best.map(|(_, c)| c)
}

fn conflict_count(paths: &[Vec<Vertex>]) -> usize {
    crate::dcrf::shared_vertex_count(paths)
}

fn cost(paths: &[Vec<Vertex>]) -> usize {
    paths.iter().map(|p| p.len() - 1).sum()
}

fn plan_agent(
    instance: &Instance,
    paths: &[Vec<Vertex>],
    forbidden: &BTreeSet<Vertex>,
    a: AgentId,
) -> Option<Vec<Vertex>> {
    if forbidden.contains(&instance.starts[a]) || forbidden.contains(&instance.goals[a]) {
        return None;
    }
    let penalty: HashSet<Vertex> = paths
        .iter()
        .enumerate()
        .filter(|&(b, _)| b != a)
        .flat_map(|(_, p)| p.iter().copied())
        .collect();
    let c = SeqConstraints {
        forbidden_vertices: forbidden.clone(),
    };
    find_path_seq(&instance.graph, instance.starts[a], instance.goals[a], &c, &penalty)
}

/// Paths of agents that were replanned for a node.
type Replanned = Vec<(AgentId, Vec<Vertex>)>;

/// Applies `constraint` to `state`, replanning agents whose paths it breaks.
fn child(instance: &Instance, state: &State, constraint: Constraint) -> Option<(Vec<Vec<Vertex>>, Replanned)> {
    let mut paths = state.paths.clone();
    let mut replanned = Vec::new();
    for x in 0..paths.len() {
        let Some(v) = constraint.forbids(x) else {
            continue;
        };
        if !paths[x].contains(&v) {
            continue;
        }
        let mut forbidden = state.forbidden[x].clone();
        forbidden.insert(v);
        let p = plan_agent(instance, &paths, &forbidden, x)?;
        paths[x] = p.clone();
        replanned.push((x, p));
    }
    Some((paths, replanned))
}

/// Minimum sum-of-lengths pairwise vertex-disjoint paths.
pub fn solve_disjoint(instance: &Instance, deadline: Duration) -> Result<Vec<Vec<Vertex>>, DisjointError> {
    let started = Instant::now();
    let n = instance.num_agents();
    // Every agent's path contains its own start and goal, so no other path may.
    let base: Vec<BTreeSet<Vertex>> = (0..n)
        .map(|a| {
            (0..n)
                .filter(|&b| b != a)
                .flat_map(|b| [instance.starts[b], instance.goals[b]])
                .collect()
        })
        .collect();
    let mut paths: Vec<Vec<Vertex>> = Vec::with_capacity(n);
    for (a, forbidden) in base.iter().enumerate() {
        let p = plan_agent(instance, &paths, forbidden, a).ok_or(DisjointError::Infeasible)?;
        paths.push(p);
    }
    let mut open = BinaryHeap::new();
    open.push(Reverse((cost(&paths), conflict_count(&paths), 0usize)));
    let mut nodes = vec![Node {
        parent: None,
        constraint: None,
        replanned: paths.into_iter().enumerate().collect(),
    }];
    let mut closed: HashSet<Vec<Constraint>> = HashSet::from([Vec::new()]);
    while let Some(Reverse((node_cost, node_conflicts, id))) = open.pop() {
        if started.elapsed() > deadline {
            return Err(DisjointError::Timeout);
        }
        let state = reconstruct(&nodes, &base, id);
        let Some((keep, v)) = choose_conflict(instance, &state) else {
            return Ok(state.paths);
        };
        let mut children = Vec::with_capacity(2);
        let mut bypass = None;
        for constraint in [
            Constraint::Avoid { agent: keep, vertex: v },
            Constraint::OthersAvoid { agent: keep, vertex: v },
        ] {
            let mut key = state.constraints.clone();
            key.push(constraint);
            key.sort_unstable();
            if closed.contains(&key) {
                continue;
            }
            let Some((paths, replanned)) = child(instance, &state, constraint) else {
                closed.insert(key);
                continue;
            };
            let (c, k) = (cost(&paths), conflict_count(&paths));
            // Equal cost with fewer conflicts: the new paths also satisfy this
            // node's constraints, so adopt them instead of splitting.
            if c == node_cost && k < node_conflicts {
                bypass = Some((replanned, k));
                break;
            }
            children.push((key, constraint, replanned, c, k));
        }
        if let Some((replanned, k)) = bypass {
            open.push(Reverse((node_cost, k, nodes.len())));
            nodes.push(Node {
                parent: Some(id),
                constraint: None,
                replanned,
            });
            continue;
        }
        for (key, constraint, replanned, c, k) in children {
            closed.insert(key);
            open.push(Reverse((c, k, nodes.len())));
            nodes.push(Node {
                parent: Some(id),
                constraint: Some(constraint),
                replanned,
            });
        }
    }
    Err(DisjointError::Infeasible)
}

/// Disjoint paths wrapped as a rule-free solution.
pub fn disjoint_solution(paths: Vec<Vec<Vertex>>, model: Model, fd_mode: FdMode) -> Solution {
    Solution::from_paths(paths, model, fd_mode)
}
