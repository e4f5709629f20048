//! Instance generation: random well-formed instances, the SAT reduction, and
//! small hand-made fixtures with known behavior.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{
    check_necessary, AgentId, FdMode, Graph, Instance, Model, Observation, Plan, Solution, TransitionRule, Vertex,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GenError {
    #[error("no well-formed instance found after {0} attempts")]
    GiveUp(usize),
    #[error("malformed formula: {0}")]
    MalformedFormula(String),
    #[error("unknown fixture {0:?}")]
    UnknownFixture(String),
}

pub const DEFAULT_ATTEMPTS: usize = 10_000;

/// Samples distinct starts and goals in the largest component until the
/// instance satisfies the necessary solvability condition.
pub fn gen_well_formed(graph: &Graph, n: usize, f: usize, seed: u64) -> Result<Instance, GenError> {
    gen_well_formed_with(graph, n, f, seed, DEFAULT_ATTEMPTS)
}

pub fn gen_well_formed_with(
    graph: &Graph,
    n: usize,
    f: usize,
    seed: u64,
    attempts: usize,
) -> Result<Instance, GenError> {
    let cells = graph.largest_component();
    if 2 * n > cells.len() {
        return Err(GenError::GiveUp(0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..attempts {
        let picked: Vec<Vertex> = cells.choose_multiple(&mut rng, 2 * n).copied().collect();
        let inst = Instance {
            graph: graph.clone(),
            starts: picked[..n].to_vec(),
            goals: picked[n..].to_vec(),
            f,
        };
        if check_necessary(&inst).holds {
            return Ok(inst);
        }
    }
    Err(GenError::GiveUp(attempts))
}

/// MovingAI-format text of a `width`×`height` grid with each cell blocked
/// independently with probability `obstacle_ratio`.
pub fn random_grid_map(width: usize, height: usize, obstacle_ratio: f64, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = format!("type octile\nheight {height}\nwidth {width}\nmap\n");
    for _ in 0..height {
        for _ in 0..width {
            out.push(if rng.gen_bool(obstacle_ratio) { '@' } else { '.' });
        }
        out.push('\n');
    }
    out
}

/// Four-connected open grid; cell `(x, y)` has id `y * width + x`.
pub fn open_grid(width: usize, height: usize) -> Graph {
    let mut edges = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let v = y * width + x;
            if x + 1 < width {
                edges.push((v, v + 1));
            }
            if y + 1 < height {
                edges.push((v, v + width));
            }
        }
    }
    Graph::from_edges(width * height, &edges, false).expect("grid edges are in range")
}

/// CNF formula; literal `+k`/`-k` refers to variable `k` (1-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cnf {
    pub num_vars: usize,
    pub clauses: Vec<Vec<i32>>,
}

impl Cnf {
    pub fn is_satisfied_by(&self, assignment: &[bool]) -> bool {
        self.clauses
            .iter()
            .all(|c| c.iter().any(|&l| assignment[l.unsigned_abs() as usize - 1] == (l > 0)))
    }

    /// Exhaustive satisfiability check.
    pub fn brute_force_satisfiable(&self) -> bool {
        (0u64..1 << self.num_vars).any(|bits| {
            let a: Vec<bool> = (0..self.num_vars).map(|i| bits >> i & 1 == 1).collect();
            self.is_satisfied_by(&a)
        })
    }
}

/// Parses DIMACS CNF text (`c` comments, `p cnf V C` header, 0-terminated clauses).
pub fn parse_dimacs(text: &str) -> Result<Cnf, GenError> {
    let bad = |m: String| GenError::MalformedFormula(m);
    let mut header: Option<(usize, usize)> = None;
    let mut clauses = Vec::new();
    let mut current = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('c') || line.starts_with('%') {
            continue;
        }
        if line.starts_with('p') {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 || parts[1] != "cnf" {
                return Err(bad(format!("line {}: bad header", no + 1)));
            }
            let v = parts[2]
                .parse()
                .map_err(|_| bad(format!("line {}: bad variable count", no + 1)))?;
            let c = parts[3]
                .parse()
                .map_err(|_| bad(format!("line {}: bad clause count", no + 1)))?;
            header = Some((v, c));
            continue;
        }
        let (num_vars, _) = header.ok_or_else(|| bad(format!("line {}: clause before header", no + 1)))?;
        for tok in line.split_whitespace() {
            let lit: i32 = tok
                .parse()
                .map_err(|_| bad(format!("line {}: bad literal {tok:?}", no + 1)))?;
            if lit == 0 {
                clauses.push(std::mem::take(&mut current));
            } else if lit.unsigned_abs() as usize > num_vars {
                return Err(bad(format!("line {}: variable {} out of range", no + 1, lit.abs())));
            } else {
                current.push(lit);
            }
        }
    }
    let (num_vars, num_clauses) = header.ok_or_else(|| bad("missing header".into()))?;
    if !current.is_empty() {
        clauses.push(current);
    }
    if clauses.len() != num_clauses {
        return Err(bad(format!(
            "header declares {num_clauses} clauses, found {}",
            clauses.len()
        )));
    }
    Ok(Cnf { num_vars, clauses })
}

/// Directed instance whose vertex-disjoint solutions correspond to
/// satisfying assignments of `cnf`.
///
/// Agents `0..num_vars` are variable agents: each leaves its start through an
/// upper or lower chain to its goal. The upper chain carries one vertex per
/// negative occurrence, the lower chain one per positive occurrence, so taking
/// the upper chain (true) leaves the positive occurrences free. Clause agents
/// follow, each routing through one unique vertex and one occurrence vertex
/// per literal.
pub fn sat_to_mappcf(cnf: &Cnf) -> Result<Instance, GenError> {
    for (i, c) in cnf.clauses.iter().enumerate() {
        if c.is_empty() || c.len() > 3 {
            return Err(GenError::MalformedFormula(format!(
                "clause {} has {} literals",
                i + 1,
                c.len()
            )));
        }
        if let Some(&l) = c.iter().find(|&&l| l == 0 || l.unsigned_abs() as usize > cnf.num_vars) {
            return Err(GenError::MalformedFormula(format!(
                "clause {}: literal {l} out of range",
                i + 1
            )));
        }
    }
    let mut next = 0usize;
    let mut fresh = || {
        next += 1;
        next - 1
    };
    let mut edges = Vec::new();
    let mut starts = Vec::new();
    let mut goals = Vec::new();
    // occurrence vertex per (clause, literal position)
    let mut occurrence: Vec<Vec<Vertex>> = cnf.clauses.iter().map(|c| vec![0; c.len()]).collect();
    for var in 1..=cnf.num_vars as i32 {
        let (s, g, upper, lower) = (fresh(), fresh(), fresh(), fresh());
        starts.push(s);
        goals.push(g);
        edges.push((s, upper));
        edges.push((s, lower));
        let (mut up_tail, mut low_tail) = (upper, lower);
        for (ci, c) in cnf.clauses.iter().enumerate() {
            for (li, &l) in c.iter().enumerate() {
                if l.abs() != var {
                    continue;
                }
                let o = fresh();
                occurrence[ci][li] = o;
                let tail = if l < 0 { &mut up_tail } else { &mut low_tail };
                edges.push((*tail, o));
                *tail = o;
            }
        }
        edges.push((up_tail, g));
        edges.push((low_tail, g));
    }
    for (ci, c) in cnf.clauses.iter().enumerate() {
        let (s, g) = (fresh(), fresh());
        starts.push(s);
        goals.push(g);
        for &occ in &occurrence[ci][..c.len()] {
            let w = fresh();
            edges.push((s, w));
            edges.push((w, occ));
            edges.push((occ, g));
        }
    }
    let graph = Graph::from_edges(next, &edges, true).expect("reduction edges are in range");
    Ok(Instance {
        graph,
        starts,
        goals,
        f: 1,
    })
}

/// Replaces every named trigger by the anonymous one, keeping rule order.
pub fn anonymize_solution(solution: &Solution) -> Solution {
    let mut out = solution.clone();
    out.fd_mode = FdMode::Afd;
    for plan in &mut out.plans {
        for r in &mut plan.rules {
            r.trigger = r.trigger.anonymize();
        }
    }
    out
}

/// A small instance with known behavior, optionally with reference plans.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: &'static str,
    pub instance: Instance,
    /// Human-readable label per vertex id.
    pub labels: Vec<String>,
    pub solutions: Vec<Solution>,
    /// Planning order that reproduces the fixture's intended initial paths.
    pub priority: Option<Vec<AgentId>>,
}

impl Fixture {
    /// Vertex id of label `vN`.
    pub fn id(&self, label: &str) -> Vertex {
        self.labels
            .iter()
            .position(|l| l == label)
            .unwrap_or_else(|| panic!("fixture {} has no vertex {label}", self.name))
    }

    pub fn ids(&self, labels: &[&str]) -> Vec<Vertex> {
        labels.iter().map(|l| self.id(l)).collect()
    }

    pub fn solution(&self, model: Model) -> Option<&Solution> {
        self.solutions.iter().find(|s| s.model == model)
    }
}

pub const FIXTURE_NAMES: [&str; 5] = [
    "hub_crossing",
    "wait_or_detour",
    "cascade",
    "trapped_backup",
    "anonymous_star",
];

pub fn fixture(name: &str) -> Result<Fixture, GenError> {
    match name {
        "hub_crossing" => Ok(hub_crossing()),
        "wait_or_detour" => Ok(wait_or_detour()),
        "cascade" => Ok(cascade()),
        "trapped_backup" => Ok(trapped_backup()),
        "anonymous_star" => Ok(anonymous_star()),
        _ => Err(GenError::UnknownFixture(name.to_string())),
    }
}

/// Builds a fixture whose vertices are labeled `order[k]` for id `k`.
struct Builder {
    labels: Vec<String>,
}

impl Builder {
    fn sequential(n: usize) -> Self {
        Builder {
            labels: (1..=n).map(|k| format!("v{k}")).collect(),
        }
    }

    fn ordered(order: &[usize]) -> Self {
        Builder {
            labels: order.iter().map(|k| format!("v{k}")).collect(),
        }
    }

    fn id(&self, label: usize) -> Vertex {
        let want = format!("v{label}");
        self.labels.iter().position(|l| *l == want).expect("label exists")
    }

    fn path(&self, labels: &[usize]) -> Vec<Vertex> {
        labels.iter().map(|&l| self.id(l)).collect()
    }

    fn graph(&self, edges: &[(usize, usize)]) -> Graph {
        let e: Vec<_> = edges.iter().map(|&(u, v)| (self.id(u), self.id(v))).collect();
        Graph::from_edges(self.labels.len(), &e, false).expect("fixture edges are valid")
    }

    fn rule(
        &self,
        from_path: usize,
        at_index: usize,
        watch: usize,
        trigger: Observation,
        to_path: usize,
    ) -> TransitionRule {
        TransitionRule {
            from_path,
            at_index,
            watch_vertex: self.id(watch),
            trigger,
            to_path,
        }
    }

    fn finish(
        self,
        name: &'static str,
        instance: Instance,
        solutions: Vec<Solution>,
        priority: Option<Vec<AgentId>>,
    ) -> Fixture {
        Fixture {
            name,
            instance,
            labels: self.labels,
            solutions,
            priority,
        }
    }
}

/// Two agents crossing at hub v2; `j` must learn from the detector whether
/// `i` blocks the hub or its start.
fn hub_crossing() -> Fixture {
    let b = Builder::sequential(5);
    let graph = b.graph(&[(1, 2), (2, 3), (2, 4), (2, 5), (1, 4), (1, 5)]);
    let instance = Instance {
        graph,
        starts: b.path(&[1, 4]),
        goals: b.path(&[3, 5]),
        f: 1,
    };
    let syn = Solution {
        model: Model::Syn,
        fd_mode: FdMode::Afd,
        plans: vec![
            Plan::single(b.path(&[1, 2, 3])),
            Plan {
                paths: vec![b.path(&[4, 4, 2, 5]), b.path(&[4, 2, 5]), b.path(&[4, 1, 5])],
                rules: vec![
                    b.rule(0, 1, 1, Observation::CrashedAnon, 1),
                    b.rule(0, 2, 2, Observation::CrashedAnon, 2),
                ],
            },
        ],
    };
    let seq = Solution {
        model: Model::Seq,
        fd_mode: FdMode::Afd,
        plans: vec![
            Plan::single(b.path(&[1, 2, 3])),
            Plan {
                paths: vec![b.path(&[4]), b.path(&[4, 2, 5]), b.path(&[4, 1, 5])],
                rules: vec![
                    b.rule(0, 1, 1, Observation::CrashedAnon, 1),
                    b.rule(0, 1, 1, Observation::Vacant, 2),
                ],
            },
        ],
    };
    b.finish("hub_crossing", instance, vec![syn, seq], None)
}

/// `i` must cross the middle pair v2, v3; `j` must cross one of them. In SYN
/// `j` waits and picks a side by observing `i`; in SEQ it cannot tell whether
/// `i` is still coming.
fn wait_or_detour() -> Fixture {
    let b = Builder::sequential(6);
    let graph = b.graph(&[(1, 2), (2, 3), (3, 4), (2, 5), (3, 5), (2, 6), (3, 6)]);
    let instance = Instance {
        graph,
        starts: b.path(&[1, 5]),
        goals: b.path(&[4, 6]),
        f: 1,
    };
    let syn = Solution {
        model: Model::Syn,
        fd_mode: FdMode::Nfd,
        plans: vec![
            Plan::single(b.path(&[1, 2, 3, 4])),
            Plan {
                paths: vec![b.path(&[5, 5, 5, 2, 6]), b.path(&[5, 3, 6])],
                rules: vec![b.rule(0, 3, 2, Observation::Crashed(0), 1)],
            },
        ],
    };
    b.finish("wait_or_detour", instance, vec![syn], None)
}

/// Three agents whose crash-free paths share v2 and v3; resolving one crash
/// creates a backup that a second crash blocks again.
fn cascade() -> Fixture {
    let b = Builder::sequential(7);
    let graph = b.graph(&[
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
    ]);
    let instance = Instance {
        graph,
        starts: b.path(&[1, 2, 7]),
        goals: b.path(&[4, 5, 6]),
        f: 1,
    };
    b.finish("cascade", instance, Vec::new(), None)
}

/// Crash-aware planning fails here although disjoint paths exist: `i`'s
/// backup leads into v3, whose only exits v2 and v4 may both hold crashed
/// agents. The long corridor v1-v11-v12-v13-v14-v5 is the disjoint escape.
fn trapped_backup() -> Fixture {
    // Ids are assigned so that v2 precedes v1, making `j` prefer v2.
    let b = Builder::ordered(&[6, 7, 2, 8, 1, 3, 4, 5, 9, 10, 11, 12, 13, 14]);
    let graph = b.graph(&[
        (6, 7),
        (7, 2),
        (2, 8),
        (1, 2),
        (2, 3),
        (3, 4),
        (4, 5),
        (9, 4),
        (4, 10),
        (1, 7),
        (1, 8),
        (1, 11),
        (11, 12),
        (12, 13),
        (13, 14),
        (14, 5),
    ]);
    let instance = Instance {
        graph,
        starts: b.path(&[1, 6, 9]),
        goals: b.path(&[5, 8, 10]),
        f: 2,
    };
    b.finish("trapped_backup", instance, Vec::new(), Some(vec![0, 1, 2]))
}

/// Three agents around a center v7, solvable in SEQ only when the detector
/// names crashed agents: each agent's detour depends on who blocks the center.
fn anonymous_star() -> Fixture {
    let b = Builder::sequential(7);
    let graph = b.graph(&[
        (1, 2),
        (1, 3),
        (2, 3),
        (2, 4),
        (3, 5),
        (4, 6),
        (5, 6),
        (2, 6),
        (3, 6),
        (7, 1),
        (7, 2),
        (7, 3),
        (7, 4),
        (7, 5),
        (7, 6),
    ]);
    let instance = Instance {
        graph,
        starts: b.path(&[1, 5, 4]),
        goals: b.path(&[6, 2, 3]),
        f: 2,
    };
    let (i, j, k) = (0, 1, 2);
    let crashed = Observation::Crashed;
    // Per agent: primary through the center; for each other agent x, a detour
    // taken when x blocks the center; on each detour, a second detour taken
    // when the remaining agent blocks the first one's middle vertex.
    let plan = |start: usize, goal: usize, first: (AgentId, usize), second: (AgentId, usize)| {
        let (x, via_x) = first;
        let (y, via_y) = second;
        Plan {
            paths: vec![
                b.path(&[start, 7, goal]),
                b.path(&[start, via_x, goal]),
                b.path(&[start, via_y, goal]),
                b.path(&[start, via_y, goal]),
                b.path(&[start, via_x, goal]),
            ],
            rules: vec![
                b.rule(0, 1, 7, crashed(x), 1),
                b.rule(0, 1, 7, crashed(y), 2),
                b.rule(1, 1, via_x, crashed(y), 3),
                b.rule(2, 1, via_y, crashed(x), 4),
            ],
        }
    };
    let nfd = Solution {
        model: Model::Seq,
        fd_mode: FdMode::Nfd,
        plans: vec![
            plan(1, 6, (j, 2), (k, 3)),
            plan(5, 2, (k, 3), (i, 6)),
            plan(4, 3, (j, 2), (i, 6)),
        ],
    };
    b.finish("anonymous_star", instance, vec![nfd], None)
}
