//! Constrained single-agent search.
//!
//! Both searches minimize `(length, shared-vertex count, vertex sequence)`
//! lexicographically. The shared-vertex count is the number of moves that
//! enter a penalty vertex. Ties on the first two keys resolve to the
//! lexicographically smallest vertex sequence, which makes the result a pure
//! function of the inputs.

use std::collections::{BTreeSet, HashMap, HashSet};

use crate::model::{Graph, Vertex};

/// Timed occupancy of already planned paths.
#[derive(Debug, Clone, Default)]
pub struct ReservationTable {
    vertices: HashSet<(Vertex, usize)>,
    moves: HashSet<(Vertex, Vertex, usize)>,
    /// Final vertex of each reserved path, occupied from the given time onwards.
    tails: HashMap<Vertex, usize>,
    max_time: usize,
}

impl ReservationTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reserves a path whose first vertex is occupied at `start_time`.
    pub fn add_path(&mut self, start_time: usize, path: &[Vertex]) {
        for (k, &v) in path.iter().enumerate() {
            let t = start_time + k;
            self.vertices.insert((v, t));
            if k + 1 < path.len() && path[k + 1] != v {
                self.moves.insert((v, path[k + 1], t));
            }
        }
        if let Some(&last) = path.last() {
            let end = start_time + path.len() - 1;
            let entry = self.tails.entry(last).or_insert(end);
            *entry = (*entry).min(end);
            self.max_time = self.max_time.max(end);
        }
    }

    pub fn max_time(&self) -> usize {
        self.max_time
    }

    pub fn vertex_free(&self, v: Vertex, t: usize) -> bool {
        !self.vertices.contains(&(v, t)) && self.tails.get(&v).is_none_or(|&from| t < from)
    }

    /// Moving `u -> v` between `t` and `t + 1` does not swap with a reserved agent.
    pub fn move_free(&self, u: Vertex, v: Vertex, t: usize) -> bool {
        !self.moves.contains(&(v, u, t))
    }

    /// Nothing is ever reserved at `v` from time `t` on.
    pub fn free_from(&self, v: Vertex, t: usize) -> bool {
        if self.tails.contains_key(&v) {
            return false;
        }
        (t..=self.max_time).all(|s| !self.vertices.contains(&(v, s)))
    }
}

#[derive(Debug, Clone, Default)]
pub struct SynConstraints {
    /// Vertices that may never be entered (crashed agents, other goals).
    pub blocked_forever: BTreeSet<Vertex>,
    pub reserved: ReservationTable,
    /// Number of crashes the plan must absorb; widens the search horizon.
    pub crash_budget: usize,
}

impl SynConstraints {
    /// Number of steps after the origin the search may use.
    pub fn horizon(&self, graph: &Graph, start_time: usize) -> usize {
        let nv = graph.num_vertices();
        let after_reservations = self.reserved.max_time().saturating_sub(start_time);
        nv + after_reservations + self.crash_budget * nv
    }
}

#[derive(Debug, Clone, Default)]
pub struct SeqConstraints {
    pub forbidden_vertices: BTreeSet<Vertex>,
}

fn to_mask(nv: usize, set: impl IntoIterator<Item = Vertex>) -> Vec<bool> {
    let mut mask = vec![false; nv];
    for v in set {
        if v < nv {
            mask[v] = true;
        }
    }
    mask
}

/// One time layer of the search: reachable vertices with their best
/// `(penalty, rank)` and predecessor, listed in rank order.
struct Layer {
    entries: Vec<(Vertex, usize, Vertex)>, // (vertex, penalty, parent)
}

fn reconstruct(layers: &[Layer], goal: Vertex) -> Vec<Vertex> {
    let mut path = Vec::with_capacity(layers.len());
    let mut v = goal;
    for layer in layers.iter().rev() {
        path.push(v);
        let (_, _, parent) = *layer
            .entries
            .iter()
            .find(|e| e.0 == v)
            .expect("vertex present in its layer");
        v = parent;
    }
    path.reverse();
    path
}

/// Expands `current` into the next layer. `step(u)` lists admissible successors
/// of `u`, in any order.
fn expand<F>(current: &Layer, penalty: &[bool], best: &mut [Option<(usize, usize, Vertex)>], mut step: F) -> Layer
where
    F: FnMut(Vertex, &mut Vec<Vertex>),
{
    let mut touched = Vec::new();
    let mut succ = Vec::new();
    for (rank, &(u, pen, _)) in current.entries.iter().enumerate() {
        succ.clear();
        step(u, &mut succ);
        for &v in &succ {
            let cand = (pen + usize::from(v != u && penalty[v]), rank, u);
            match &mut best[v] {
                Some(old) => {
                    if (cand.0, cand.1) < (old.0, old.1) {
                        *old = cand;
                    }
                }
                slot @ None => {
                    *slot = Some(cand);
                    touched.push(v);
                }
            }
        }
    }
    // Rank of a prefix = (rank of its parent prefix, last vertex).
    let mut entries: Vec<(usize, Vertex, usize, Vertex)> = touched
        .iter()
        .map(|&v| {
            let (pen, prank, parent) = best[v].take().expect("touched");
            (prank, v, pen, parent)
        })
        .collect();
    entries.sort_unstable_by_key(|e| (e.0, e.1));
    Layer {
        entries: entries
            .into_iter()
            .map(|(_, v, pen, parent)| (v, pen, parent))
            .collect(),
    }
}

/// Space-time search for SYN. The k-th vertex of the result is occupied at
/// `start_time + k - 1`; the goal must stay free forever after arrival.
pub fn find_path_syn(
    graph: &Graph,
    start: Vertex,
    start_time: usize,
    goal: Vertex,
    constraints: &SynConstraints,
    penalty_vertices: &HashSet<Vertex>,
) -> Option<Vec<Vertex>> {
    let nv = graph.num_vertices();
    let blocked = to_mask(nv, constraints.blocked_forever.iter().copied());
    let penalty = to_mask(nv, penalty_vertices.iter().copied());
    let reserved = &constraints.reserved;
    if blocked[goal] {
        return None;
    }
    let mut blocked_except_start = blocked.clone();
    blocked_except_start[start] = false;
    let to_goal = graph.distances_to(goal, &blocked_except_start);
    if to_goal[start] == usize::MAX {
        return None;
    }
    let horizon = constraints.horizon(graph, start_time);

    let mut best = vec![None; nv];
    let mut layers = vec![Layer {
        entries: vec![(start, 0, start)],
    }];
    for offset in 0..=horizon {
        let t = start_time + offset;
        let current = layers.last().expect("non-empty");
        if current.entries.iter().any(|e| e.0 == goal) && reserved.free_from(goal, t) {
            let mut path = vec![start];
            path.extend(reconstruct(&layers[1..], goal));
            return Some(path);
        }
        if offset == horizon {
            break;
        }
        let next = expand(current, &penalty, &mut best, |u, out| {
            let remaining = horizon - offset - 1;
            let mut push = |v: Vertex| {
                if to_goal[v] <= remaining && reserved.vertex_free(v, t + 1) && reserved.move_free(u, v, t) {
                    out.push(v);
                }
            };
            push(u);
            for &v in graph.neighbors(u) {
                if !blocked[v] {
                    push(v);
                }
            }
        });
        if next.entries.is_empty() {
            return None;
        }
        layers.push(next);
    }
    None
}

/// Shortest simple path for SEQ avoiding `forbidden_vertices`.
pub fn find_path_seq(
    graph: &Graph,
    start: Vertex,
    goal: Vertex,
    constraints: &SeqConstraints,
    penalty_vertices: &HashSet<Vertex>,
) -> Option<Vec<Vertex>> {
    let nv = graph.num_vertices();
    let mut blocked = to_mask(nv, constraints.forbidden_vertices.iter().copied());
    blocked[start] = false;
    if blocked[goal] {
        return None;
    }
    let penalty = to_mask(nv, penalty_vertices.iter().copied());
    let from_start = graph.distances_from(start, &blocked);
    let to_goal = graph.distances_to(goal, &blocked);
    let length = from_start[goal];
    if length == usize::MAX {
        return None;
    }
    let mut best = vec![None; nv];
    let mut layers = vec![Layer {
        entries: vec![(start, 0, start)],
    }];
    for depth in 0..length {
        let current = layers.last().expect("non-empty");
        let next = expand(current, &penalty, &mut best, |u, out| {
            for &v in graph.neighbors(u) {
                if !blocked[v] && from_start[v] == depth + 1 && to_goal[v] == length - depth - 1 {
                    out.push(v);
                }
            }
        });
        layers.push(next);
    }
    let mut path = vec![start];
    path.extend(reconstruct(&layers[1..], goal));
    Some(path)
}

/// Number of moves in `path` that enter a vertex of `penalty_vertices`.
pub fn penalty_count(path: &[Vertex], penalty_vertices: &HashSet<Vertex>) -> usize {
    path.windows(2)
        .filter(|w| w[0] != w[1] && penalty_vertices.contains(&w[1]))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Graph;
    use proptest::prelude::*;

    /// Cascade graph, v1..v7 -> 0..6.
    fn cascade_graph() -> Graph {
        let e = [
            (1, 2),
            (2, 3),
            (3, 4),
            (2, 5),
            (3, 6),
            (5, 6),
            (1, 5),
            (6, 4),
            (7, 3),
            (7, 4),
            (2, 7),
            (5, 3),
        ];
        let edges: Vec<_> = e.iter().map(|&(u, v)| (u - 1, v - 1)).collect();
        Graph::from_edges(7, &edges, false).unwrap()
    }

    fn line(n: usize) -> Graph {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        Graph::from_edges(n, &edges, false).unwrap()
    }

    #[test]
    fn cascade_backup_avoids_crashed_and_reserved() {
        let g = cascade_graph();
        let mut c = SynConstraints {
            crash_budget: 1,
            ..Default::default()
        };
        c.blocked_forever.insert(1); // j crashed at v2
        c.blocked_forever.insert(5); // k's goal v6
        c.reserved.add_path(1, &[6, 2, 5]); // k: v7, v3, v6
        let p = find_path_syn(&g, 0, 1, 3, &c, &HashSet::new()).unwrap();
        assert_eq!(p, vec![0, 4, 2, 3]);
    }

    #[test]
    fn identity_path() {
        let g = line(3);
        let c = SynConstraints::default();
        assert_eq!(find_path_syn(&g, 1, 1, 1, &c, &HashSet::new()), Some(vec![1]));
        assert_eq!(
            find_path_seq(&g, 1, 1, &SeqConstraints::default(), &HashSet::new()),
            Some(vec![1])
        );
    }

    #[test]
    fn trapped_backup_is_not_found() {
        // v3 only touches v2 and v4 in the failure example.
        let g = Graph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4)], false).unwrap();
        let mut c = SynConstraints {
            crash_budget: 2,
            ..Default::default()
        };
        c.blocked_forever.extend([1, 3]);
        assert_eq!(find_path_syn(&g, 2, 3, 4, &c, &HashSet::new()), None);
    }

    #[test]
    fn head_on_in_corridor_is_infeasible() {
        let g = line(3);
        let mut c = SynConstraints::default();
        c.reserved.add_path(1, &[2, 1, 0, 0]);
        assert_eq!(find_path_syn(&g, 0, 1, 2, &c, &HashSet::new()), None);
    }

    #[test]
    fn waits_for_reserved_vertex_to_clear() {
        // Star: 0-1, 1-2, 1-3. Reserved agent passes through 1 at time 2, ends at 3.
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (1, 3)], false).unwrap();
        let mut c = SynConstraints::default();
        c.reserved.add_path(1, &[2, 1, 3]);
        let p = find_path_syn(&g, 0, 1, 2, &c, &HashSet::new()).unwrap();
        assert_eq!(p, vec![0, 0, 1, 2]);
    }

    #[test]
    fn swap_conflicts_are_respected() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)], false).unwrap();
        let mut c = SynConstraints::default();
        c.reserved.add_path(1, &[1, 0, 0]);
        // moving 0 -> 1 at t=1 would swap with the reserved agent moving 1 -> 0.
        let p = find_path_syn(&g, 0, 1, 1, &c, &HashSet::new()).unwrap();
        assert_ne!(&p[..2], &[0, 1]);
        assert_eq!(p, vec![0, 2, 1]);
    }

    #[test]
    fn penalty_breaks_ties_then_vertex_ids() {
        let g = cascade_graph();
        let none = HashSet::new();
        let c = SynConstraints::default();
        assert_eq!(find_path_syn(&g, 0, 1, 3, &c, &none).unwrap(), vec![0, 1, 2, 3]);
        let pen: HashSet<_> = [2].into();
        assert_eq!(find_path_syn(&g, 0, 1, 3, &c, &pen).unwrap(), vec![0, 1, 6, 3]);
    }

    #[test]
    fn hub_crossing_seq_branch() {
        // Hub crossing: v1..v5 -> 0..4; j from v4 to v5 avoiding v2.
        let g = Graph::from_edges(5, &[(0, 1), (1, 2), (1, 3), (1, 4), (0, 3), (0, 4)], false).unwrap();
        let c = SeqConstraints {
            forbidden_vertices: [1].into(),
        };
        assert_eq!(find_path_seq(&g, 3, 4, &c, &HashSet::new()), Some(vec![3, 0, 4]));
    }

    #[test]
    fn seq_adjacent_and_cut_vertex() {
        let g = line(3);
        assert_eq!(
            find_path_seq(&g, 0, 1, &SeqConstraints::default(), &HashSet::new()),
            Some(vec![0, 1])
        );
        let c = SeqConstraints {
            forbidden_vertices: [1].into(),
        };
        assert_eq!(find_path_seq(&g, 0, 2, &c, &HashSet::new()), None);
    }

    // ---- brute-force oracle ----

    fn violates(c: &SynConstraints, path: &[Vertex], t0: usize) -> bool {
        for (k, &v) in path.iter().enumerate() {
            let t = t0 + k;
            if c.blocked_forever.contains(&v) && k > 0 {
                return true;
            }
            if k > 0 && !c.reserved.vertex_free(v, t) {
                return true;
            }
            if k + 1 < path.len() && !c.reserved.move_free(v, path[k + 1], t) {
                return true;
            }
        }
        let end = t0 + path.len() - 1;
        !c.reserved.free_from(*path.last().unwrap(), end)
    }

    /// All timed paths of exactly `len` vertices from `start`, by DFS.
    fn enumerate(g: &Graph, start: Vertex, len: usize, out: &mut Vec<Vec<Vertex>>, cur: &mut Vec<Vertex>) {
        if cur.len() == len {
            out.push(cur.clone());
            return;
        }
        let u = *cur.last().unwrap();
        let mut next = vec![u];
        next.extend_from_slice(g.neighbors(u));
        next.sort_unstable();
        for v in next {
            cur.push(v);
            enumerate(g, start, len, out, cur);
            cur.pop();
        }
        let _ = start;
    }

    fn brute_force(
        g: &Graph,
        start: Vertex,
        goal: Vertex,
        c: &SynConstraints,
        pen: &HashSet<Vertex>,
        max_len: usize,
    ) -> Option<Vec<Vertex>> {
        for len in 1..=max_len {
            let mut all = Vec::new();
            enumerate(g, start, len, &mut all, &mut vec![start]);
            let mut ok: Vec<_> = all
                .into_iter()
                .filter(|p| *p.last().unwrap() == goal && !violates(c, p, 1))
                .collect();
            if !ok.is_empty() {
                ok.sort_by_key(|p| (penalty_count(p, pen), p.clone()));
                return Some(ok.swap_remove(0));
            }
        }
        None
    }

    fn small_graph() -> impl Strategy<Value = Graph> {
        (3usize..=6).prop_flat_map(|n| {
            proptest::collection::vec((0..n, 0..n), n..=2 * n).prop_map(move |pairs| {
                let mut edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
                edges.extend(pairs.into_iter().filter(|(u, v)| u != v));
                Graph::from_edges(n, &edges, false).unwrap()
            })
        })
    }

    fn random_walk(g: &Graph, seed: &[usize], len: usize) -> Vec<Vertex> {
        let mut v = seed[0] % g.num_vertices();
        let mut path = vec![v];
        for k in 1..len {
            let opts = g.neighbors(v);
            let pick = seed[k % seed.len()] % (opts.len() + 1);
            if pick < opts.len() {
                v = opts[pick];
            }
            path.push(v);
        }
        path
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn syn_search_matches_brute_force(
            g in small_graph(),
            seed in proptest::collection::vec(0usize..100, 8),
            s in 0usize..6, goal in 0usize..6, walk_len in 2usize..5,
            pen in proptest::collection::btree_set(0usize..6, 0..3),
        ) {
            let n = g.num_vertices();
            let (s, goal) = (s % n, goal % n);
            let mut c = SynConstraints::default();
            let other = random_walk(&g, &seed, walk_len);
            if other[0] == s || other.contains(&goal) {
                return Ok(());
            }
            c.reserved.add_path(1, &other);
            let pen: HashSet<_> = pen.into_iter().filter(|&v| v < n).collect();
            let got = find_path_syn(&g, s, 1, goal, &c, &pen);
            let want = brute_force(&g, s, goal, &c, &pen, 7);
            if let Some(p) = &got {
                prop_assert!(!violates(&c, p, 1));
                prop_assert_eq!(p.first(), Some(&s));
                prop_assert_eq!(p.last(), Some(&goal));
            }
            match (&got, &want) {
                (Some(p), Some(q)) => prop_assert_eq!(p, q),
                (None, Some(q)) => prop_assert!(false, "missed {:?}", q),
                (Some(p), None) => prop_assert!(p.len() > 7),
                (None, None) => {}
            }
            // determinism
            prop_assert_eq!(find_path_syn(&g, s, 1, goal, &c, &pen), got);
        }

        #[test]
        fn seq_search_is_shortest_and_avoids_forbidden(
            g in small_graph(),
            s in 0usize..6, goal in 0usize..6,
            forb in proptest::collection::btree_set(0usize..6, 0..3),
        ) {
            let n = g.num_vertices();
            let (s, goal) = (s % n, goal % n);
            let forb: BTreeSet<_> = forb.into_iter().filter(|&v| v < n && v != s).collect();
            let c = SeqConstraints { forbidden_vertices: forb.clone() };
            let mut mask = vec![false; n];
            for &v in &forb { mask[v] = true; }
            let dist = g.distances_from(s, &mask)[goal];
            match find_path_seq(&g, s, goal, &c, &HashSet::new()) {
                Some(p) => {
                    prop_assert_eq!(p.len() - 1, dist);
                    prop_assert!(p.iter().skip(1).all(|v| !forb.contains(v)));
                    let uniq: BTreeSet<_> = p.iter().collect();
                    prop_assert_eq!(uniq.len(), p.len());
                }
                None => prop_assert_eq!(dist, usize::MAX),
            }
        }
    }
}
