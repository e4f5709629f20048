//! Exhaustive adversarial verification of solutions.
//!
//! SYN explores every crash decision per timestep; SEQ builds the full
//! reachable transition system over activations and crashes. Every reported
//! counterexample replays through [`crate::exec`] to the same outcome.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write as _;

use crate::exec::{
    run_seq, run_syn, step_seq, step_syn, AgentState, Config, Outcome, SeqAction, Status, SynCrashPattern, Trace,
};
use crate::model::{AgentId, Instance, Solution};

pub const DEFAULT_STATE_CAP: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Witness {
    Syn(SynCrashPattern),
    /// `cycle` is empty for goal-unreachability witnesses; otherwise repeating
    /// it forever is a fair schedule on which some agent never finishes.
    Seq {
        prefix: Vec<SeqAction>,
        cycle: Vec<SeqAction>,
    },
}

impl Witness {
    /// Replays the witness (SEQ: prefix followed by one pass of the cycle).
    pub fn replay(&self, instance: &Instance, solution: &Solution) -> (Trace, Outcome) {
        match self {
            Witness::Syn(pattern) => run_syn(instance, solution, pattern),
            Witness::Seq { prefix, cycle } => {
                let schedule: Vec<SeqAction> = prefix.iter().chain(cycle).copied().collect();
                run_seq(instance, solution, &schedule)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counterexample {
    pub witness: Witness,
    pub outcome: Outcome,
    pub trace: Trace,
}

impl Counterexample {
    fn new(instance: &Instance, solution: &Solution, witness: Witness) -> Self {
        let (trace, outcome) = witness.replay(instance, solution);
        Counterexample {
            witness,
            outcome,
            trace,
        }
    }

    /// Witness header followed by the trace log.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        match &self.witness {
            Witness::Syn(pattern) => {
                out.push_str("witness: crashes");
                for (a, t) in pattern.iter().enumerate() {
                    if let Some(t) = t {
                        let _ = write!(out, " a{a}@t{t}");
                    }
                }
            }
            Witness::Seq { prefix, cycle } => {
                out.push_str("witness: schedule");
                for act in prefix {
                    out.push(' ');
                    out.push_str(&action_text(*act));
                }
                if !cycle.is_empty() {
                    out.push_str(" ; cycle");
                    for act in cycle {
                        out.push(' ');
                        out.push_str(&action_text(*act));
                    }
                }
            }
        }
        let _ = writeln!(out, "\noutcome: {:?}", self.outcome);
        out.push_str(&self.trace.to_text());
        out
    }
}

fn action_text(a: SeqAction) -> String {
    match a {
        SeqAction::Activate(x) => format!("activate:a{x}"),
        SeqAction::Crash(x) => format!("crash:a{x}"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Verified,
    Counterexample(Box<Counterexample>),
    /// Exploration exceeded the state cap.
    TooLarge {
        explored: usize,
    },
}

impl Verdict {
    pub fn is_verified(&self) -> bool {
        matches!(self, Verdict::Verified)
    }
}

pub fn verify(instance: &Instance, solution: &Solution) -> Verdict {
    verify_with_cap(instance, solution, DEFAULT_STATE_CAP)
}

pub fn verify_with_cap(instance: &Instance, solution: &Solution, cap: usize) -> Verdict {
    match solution.model {
        crate::model::Model::Syn => verify_syn(instance, solution, cap),
        crate::model::Model::Seq => verify_seq(instance, solution, cap),
    }
}

// ---------------------------------------------------------------- SYN

enum Found {
    Violation,
    Cap,
}

struct SynSearch<'a> {
    instance: &'a Instance,
    solution: &'a Solution,
    safe: HashSet<(Vec<AgentState>, usize)>,
    on_path: HashSet<Vec<AgentState>>,
    pattern: SynCrashPattern,
    cap: usize,
    explored: usize,
}

/// Subsets of `items` with at most `k` elements, smallest first.
fn subsets_up_to(items: &[AgentId], k: usize) -> Vec<Vec<AgentId>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![(Vec::new(), 0usize)];
    for _ in 0..k.min(items.len()) {
        let mut next = Vec::new();
        for (set, from) in &frontier {
            for (i, &item) in items.iter().enumerate().skip(*from) {
                let mut s: Vec<AgentId> = set.clone();
                s.push(item);
                out.push(s.clone());
                next.push((s, i + 1));
            }
        }
        frontier = next;
    }
    out
}

impl SynSearch<'_> {
    fn explore(&mut self, config: &Config, budget: usize) -> Result<(), Found> {
        if config.unfinished().is_empty() {
            return Ok(());
        }
        let key = (config.agents.clone(), budget);
        if self.safe.contains(&key) {
            return Ok(());
        }
        if !self.on_path.insert(config.agents.clone()) {
            // Crash-free cycle: the configuration repeats forever.
            return Err(Found::Violation);
        }
        self.explored += 1;
        if self.explored > self.cap {
            return Err(Found::Cap);
        }
        let alive: Vec<AgentId> = (0..config.agents.len())
            .filter(|&a| config.agents[a].status != Status::Crashed)
            .collect();
        for crashes in subsets_up_to(&alive, budget) {
            for &a in &crashes {
                self.pattern[a] = Some(config.time);
            }
            let result = match step_syn(self.instance, self.solution, config, &crashes) {
                Err(_) => Err(Found::Violation),
                Ok((next, _)) => {
                    if crashes.is_empty() && next.agents == config.agents {
                        Err(Found::Violation)
                    } else {
                        self.explore(&next, budget - crashes.len())
                    }
                }
            };
            result?;
            for &a in &crashes {
                self.pattern[a] = None;
            }
        }
        self.on_path.remove(&config.agents);
        self.safe.insert(key);
        Ok(())
    }
}

pub fn verify_syn(instance: &Instance, solution: &Solution, cap: usize) -> Verdict {
    let mut search = SynSearch {
        instance,
        solution,
        safe: HashSet::new(),
        on_path: HashSet::new(),
        pattern: vec![None; instance.num_agents()],
        cap,
        explored: 0,
    };
    let start = Config::initial(instance, solution);
    match search.explore(&start, instance.f) {
        Ok(()) => Verdict::Verified,
        Err(Found::Cap) => Verdict::TooLarge {
            explored: search.explored,
        },
        Err(Found::Violation) => {
            let witness = Witness::Syn(search.pattern.clone());
            Verdict::Counterexample(Box::new(Counterexample::new(instance, solution, witness)))
        }
    }
}

// ---------------------------------------------------------------- SEQ

struct SeqGraph {
    states: Vec<Vec<AgentState>>,
    edges: Vec<Vec<(SeqAction, usize)>>,
    parent: Vec<Option<(usize, SeqAction)>>,
}

fn build_seq_graph(instance: &Instance, solution: &Solution, cap: usize) -> Result<SeqGraph, usize> {
    let start = Config::initial(instance, solution);
    let mut index: HashMap<Vec<AgentState>, usize> = HashMap::new();
    let mut g = SeqGraph {
        states: vec![start.agents.clone()],
        edges: vec![Vec::new()],
        parent: vec![None],
    };
    index.insert(start.agents.clone(), 0);
    let mut queue = VecDeque::from([0usize]);
    let n = instance.num_agents();
    while let Some(s) = queue.pop_front() {
        let config = Config {
            time: 0,
            agents: g.states[s].clone(),
        };
        let mut actions = Vec::new();
        for a in 0..n {
            if config.agents[a].status == Status::Correct {
                actions.push(SeqAction::Activate(a));
            }
        }
        if config.crash_count() < instance.f {
            for a in 0..n {
                if config.agents[a].status != Status::Crashed {
                    actions.push(SeqAction::Crash(a));
                }
            }
        }
        for act in actions {
            let (next, _) = step_seq(instance, solution, &config, act);
            let t = match index.get(&next.agents) {
                Some(&t) => t,
                None => {
                    let t = g.states.len();
                    if t >= cap {
                        return Err(t);
                    }
                    index.insert(next.agents.clone(), t);
                    g.states.push(next.agents);
                    g.edges.push(Vec::new());
                    g.parent.push(Some((s, act)));
                    queue.push_back(t);
                    t
                }
            };
            g.edges[s].push((act, t));
        }
    }
    Ok(g)
}

fn prefix_to(g: &SeqGraph, mut s: usize) -> Vec<SeqAction> {
    let mut out = Vec::new();
    while let Some((p, act)) = g.parent[s] {
        out.push(act);
        s = p;
    }
    out.reverse();
    out
}

/// Strongly connected components of the activation-only subgraph.
fn activation_sccs(g: &SeqGraph) -> Vec<usize> {
    let n = g.states.len();
    let succ = |s: usize| {
        g.edges[s]
            .iter()
            .filter(|(a, _)| matches!(a, SeqAction::Activate(_)))
            .map(|&(_, t)| t)
    };
    // Kosaraju, iterative.
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for root in 0..n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut stack: Vec<(usize, Vec<usize>)> = vec![(root, succ(root).collect())];
        while let Some((v, rest)) = stack.last_mut() {
            if let Some(w) = rest.pop() {
                if !seen[w] {
                    seen[w] = true;
                    let next: Vec<usize> = succ(w).collect();
                    stack.push((w, next));
                }
            } else {
                order.push(*v);
                stack.pop();
            }
        }
    }
    let mut pred = vec![Vec::new(); n];
    for s in 0..n {
        for t in succ(s) {
            pred[t].push(s);
        }
    }
    let mut comp = vec![usize::MAX; n];
    let mut c = 0;
    for &root in order.iter().rev() {
        if comp[root] != usize::MAX {
            continue;
        }
        comp[root] = c;
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            for &w in &pred[v] {
                if comp[w] == usize::MAX {
                    comp[w] = c;
                    stack.push(w);
                }
            }
        }
        c += 1;
    }
    comp
}

/// Shortest action sequence from `from` to `to` using edges inside `comp`.
fn path_within(g: &SeqGraph, comp: &[usize], from: usize, to: usize) -> Vec<SeqAction> {
    if from == to {
        return Vec::new();
    }
    let c = comp[from];
    let mut parent: HashMap<usize, (usize, SeqAction)> = HashMap::new();
    let mut queue = VecDeque::from([from]);
    while let Some(s) = queue.pop_front() {
        for &(act, t) in &g.edges[s] {
            if !matches!(act, SeqAction::Activate(_)) || comp[t] != c || t == from || parent.contains_key(&t) {
                continue;
            }
            parent.insert(t, (s, act));
            if t == to {
                let mut out = Vec::new();
                let mut v = to;
                while v != from {
                    let (p, a) = parent[&v];
                    out.push(a);
                    v = p;
                }
                out.reverse();
                return out;
            }
            queue.push_back(t);
        }
    }
    unreachable!("states share a strongly connected component")
}

pub fn verify_seq(instance: &Instance, solution: &Solution, cap: usize) -> Verdict {
    let g = match build_seq_graph(instance, solution, cap) {
        Ok(g) => g,
        Err(explored) => return Verdict::TooLarge { explored },
    };
    let n = instance.num_agents();
    let m = g.states.len();
    let mut pred = vec![Vec::new(); m];
    for s in 0..m {
        for &(act, t) in &g.edges[s] {
            if matches!(act, SeqAction::Activate(_)) {
                pred[t].push(s);
            }
        }
    }
    // (a) goal-unreachability without further crashes.
    for a in 0..n {
        let mut can_finish = vec![false; m];
        let mut stack: Vec<usize> = (0..m).filter(|&s| g.states[s][a].status == Status::Done).collect();
        for &s in &stack {
            can_finish[s] = true;
        }
        while let Some(s) = stack.pop() {
            for &p in &pred[s] {
                if !can_finish[p] {
                    can_finish[p] = true;
                    stack.push(p);
                }
            }
        }
        if let Some(s) = (0..m).find(|&s| g.states[s][a].status == Status::Correct && !can_finish[s]) {
            let witness = Witness::Seq {
                prefix: prefix_to(&g, s),
                cycle: Vec::new(),
            };
            return Verdict::Counterexample(Box::new(Counterexample::new(instance, solution, witness)));
        }
    }
    // (b) fair livelock: a component where every unfinished agent can be
    // activated without leaving it.
    let comp = activation_sccs(&g);
    let ncomp = comp.iter().copied().max().map_or(0, |c| c + 1);
    let mut internal: Vec<HashMap<AgentId, (usize, usize)>> = vec![HashMap::new(); ncomp];
    for s in 0..m {
        for &(act, t) in &g.edges[s] {
            if let SeqAction::Activate(a) = act {
                if comp[s] == comp[t] {
                    internal[comp[s]].entry(a).or_insert((s, t));
                }
            }
        }
    }
    for s in 0..m {
        let c = comp[s];
        let unfinished: Vec<AgentId> = (0..n).filter(|&a| g.states[s][a].status == Status::Correct).collect();
        if unfinished.is_empty() || !unfinished.iter().all(|a| internal[c].contains_key(a)) {
            continue;
        }
        // Only the first state of each component is considered.
        if (0..s).any(|p| comp[p] == c) {
            continue;
        }
        let mut cycle = Vec::new();
        let mut at = s;
        for a in &unfinished {
            let (u, v) = internal[c][a];
            cycle.extend(path_within(&g, &comp, at, u));
            cycle.push(SeqAction::Activate(*a));
            at = v;
        }
        cycle.extend(path_within(&g, &comp, at, s));
        for a in 0..n {
            if g.states[s][a].status != Status::Correct {
                cycle.push(SeqAction::Activate(a));
            }
        }
        let witness = Witness::Seq {
            prefix: prefix_to(&g, s),
            cycle,
        };
        return Verdict::Counterexample(Box::new(Counterexample::new(instance, solution, witness)));
    }
    Verdict::Verified
}
