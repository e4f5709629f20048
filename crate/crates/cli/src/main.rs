//! Command-line front end: solve, verify, simulate, generate and benchmark.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 solver failure,
//! 3 counterexample found, 4 verification exceeded its state cap.

mod bench;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use mappcf::dcrf::{solve, SolverConfig};
use mappcf::disjoint::{disjoint_solution, solve_disjoint};
use mappcf::exec::{run_seq, run_syn, SeqAction};
use mappcf::gen::{fixture, gen_well_formed, parse_dimacs, sat_to_mappcf, FIXTURE_NAMES};
use mappcf::io::{self, InstanceDoc};
use mappcf::verify::{verify, Verdict};
use mappcf::{validate_solution, AgentId, FdMode, Instance, Model, Solution};

const EXIT_FAILURE: u8 = 2;
const EXIT_COUNTEREXAMPLE: u8 = 3;
const EXIT_TOO_LARGE: u8 = 4;

#[derive(Parser)]
#[command(version, about = "Crash-tolerant multi-agent path planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Syn,
    Seq,
}

impl From<ModelArg> for Model {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Syn => Model::Syn,
            ModelArg::Seq => Model::Seq,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FdArg {
    Nfd,
    Afd,
}

impl From<FdArg> for FdMode {
    fn from(m: FdArg) -> Self {
        match m {
            FdArg::Nfd => FdMode::Nfd,
            FdArg::Afd => FdMode::Afd,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    Dcrf,
    Disjoint,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Plan paths and transition rules for an instance.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum, default_value = "syn")]
        model: ModelArg,
        #[arg(long, value_enum, default_value = "nfd")]
        fd: FdArg,
        #[arg(long, value_enum, default_value = "dcrf")]
        algo: Algo,
        /// Overrides the instance's crash bound.
        #[arg(long)]
        f: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Seconds.
        #[arg(long, default_value_t = 30.0)]
        timeout: f64,
        /// Refinement of initial paths; defaults to on for syn, off for seq.
        #[arg(long, value_enum)]
        refine: Option<Switch>,
        /// Whitespace-separated agent ids fixing the initial planning order.
        #[arg(long)]
        priority: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exhaustively check a solution against every adversary.
    Verify {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        solution: PathBuf,
        #[arg(long)]
        f: Option<usize>,
    },
    /// Execute a solution under given crashes or schedule and print the trace.
    Simulate {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        solution: PathBuf,
        /// SYN crash `AGENT@T`; repeatable.
        #[arg(long = "crash", conflicts_with = "schedule")]
        crashes: Vec<String>,
        /// SEQ schedule: tokens `activate:N` or `crash:N`; round robin if absent.
        #[arg(long)]
        schedule: Option<PathBuf>,
    },
    /// Write an instance document.
    Gen {
        #[command(subcommand)]
        source: GenSource,
    },
    /// Run a batch of solver jobs and write a results table.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum GenSource {
    /// A built-in instance.
    Fixture {
        name: String,
        #[arg(long)]
        out: PathBuf,
        /// Directory for reference solutions and the planning-order file.
        #[arg(long)]
        extras: Option<PathBuf>,
    },
    /// Agents on a MovingAI map, from a scenario or sampled well-formed.
    Random {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        scen: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        f: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// The disjoint-paths instance of a DIMACS CNF formula.
    Sat {
        #[arg(long)]
        dimacs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Solve {
            instance,
            model,
            fd,
            algo,
            f,
            seed,
            timeout,
            refine,
            priority,
            out,
        } => {
            let inst = load_instance(&instance, f)?;
            let priority = priority.map(|p| read_priority(&p, inst.num_agents())).transpose()?;
            let mut config = SolverConfig::new(model.into(), fd.into());
            config.seed = seed;
            config.deadline = Duration::from_secs_f64(timeout);
            config.priority = priority;
            if let Some(r) = refine {
                config.refine = matches!(r, Switch::On);
            }
            let (result, runtime) = run_solver(&inst, algo, &config);
            match result {
                Ok(sol) => {
                    write(&out, &io::write_solution(&sol))?;
                    println!("outcome=solved reason=- runtime_ms={}", runtime.as_millis());
                    Ok(0)
                }
                Err(reason) => {
                    println!("outcome=failure reason={reason} runtime_ms={}", runtime.as_millis());
                    Ok(EXIT_FAILURE)
                }
            }
        }
        Command::Verify { instance, solution, f } => {
            let inst = load_instance(&instance, f)?;
            let sol = load_solution(&solution, &inst)?;
            match verify(&inst, &sol) {
                Verdict::Verified => {
                    println!("verified");
                    Ok(0)
                }
                Verdict::Counterexample(cx) => {
                    let witness = witness_path(&solution);
                    write(&witness, &cx.to_text())?;
                    println!("counterexample: {:?} (witness in {})", cx.outcome, witness.display());
                    Ok(EXIT_COUNTEREXAMPLE)
                }
                Verdict::TooLarge { explored } => {
                    println!("undecided: state cap reached after {explored} states");
                    Ok(EXIT_TOO_LARGE)
                }
            }
        }
        Command::Simulate {
            instance,
            solution,
            crashes,
            schedule,
        } => {
            let inst = load_instance(&instance, None)?;
            let sol = load_solution(&solution, &inst)?;
            let (trace, outcome) = match sol.model {
                Model::Syn => {
                    if schedule.is_some() {
                        bail!("--schedule applies to seq solutions; use --crash for syn");
                    }
                    let mut pattern = vec![None; inst.num_agents()];
                    for c in &crashes {
                        let (a, t) = parse_crash(c, inst.num_agents())?;
                        pattern[a] = Some(t);
                    }
                    run_syn(&inst, &sol, &pattern)
                }
                Model::Seq => {
                    if !crashes.is_empty() {
                        bail!("--crash applies to syn solutions; use --schedule for seq");
                    }
                    let actions = match schedule {
                        Some(p) => parse_schedule(&read(&p)?, inst.num_agents())?,
                        None => round_robin(&inst, &sol),
                    };
                    run_seq(&inst, &sol, &actions)
                }
            };
            print!("{}", trace.to_text());
            println!("outcome: {outcome:?}");
            Ok(0)
        }
        Command::Gen { source } => {
            gen(source)?;
            Ok(0)
        }
        Command::Bench { config, jobs, out } => {
            let rows = bench::run_config(&config, jobs)?;
            let file = std::fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            io::write_results(&rows, file)?;
            let solved = rows.iter().filter(|r| r.outcome == "solved").count();
            println!("{} runs, {solved} solved; results in {}", rows.len(), out.display());
            Ok(0)
        }
    }
}

/// Runs one solver; the error is the failure reason.
pub fn run_solver(inst: &Instance, algo: Algo, config: &SolverConfig) -> (Result<Solution, &'static str>, Duration) {
    let started = Instant::now();
    let result = match algo {
        Algo::Dcrf => solve(inst, config).map_err(|e| e.reason()),
        Algo::Disjoint => solve_disjoint(inst, config.deadline)
            .map(|paths| disjoint_solution(paths, config.model, config.fd_mode))
            .map_err(|e| match e {
                mappcf::disjoint::DisjointError::Infeasible => "infeasible",
                mappcf::disjoint::DisjointError::Timeout => "timeout",
            }),
    };
    (result, started.elapsed())
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_instance(path: &Path, f: Option<usize>) -> Result<Instance> {
    let mut inst = io::load_instance(path).with_context(|| format!("loading instance {}", path.display()))?;
    if let Some(f) = f {
        inst.f = f;
    }
    let problems = mappcf::validate_instance(&inst);
    if !problems.is_empty() {
        bail!("invalid instance {}: {problems:?}", path.display());
    }
    Ok(inst)
}

fn load_solution(path: &Path, inst: &Instance) -> Result<Solution> {
    let sol = io::read_solution(&read(path)?).with_context(|| format!("loading solution {}", path.display()))?;
    let problems = validate_solution(inst, &sol);
    if !problems.is_empty() {
        bail!("solution {} does not fit the instance: {problems:?}", path.display());
    }
    Ok(sol)
}

fn witness_path(solution: &Path) -> PathBuf {
    let mut name = solution.file_name().unwrap_or_default().to_os_string();
    name.push(".witness.txt");
    solution.with_file_name(name)
}

fn read_priority(path: &Path, n: usize) -> Result<Vec<AgentId>> {
    let order = read(path)?
        .split_whitespace()
        .map(|t| {
            t.parse::<AgentId>()
                .with_context(|| format!("bad agent id {t:?} in {}", path.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sorted = order.clone();
    sorted.sort_unstable();
    if sorted != (0..n).collect::<Vec<_>>() {
        bail!("priority file {} must list each of the {n} agents once", path.display());
    }
    Ok(order)
}

fn parse_agent(text: &str, n: usize) -> Result<AgentId> {
    let a: AgentId = text
        .trim_start_matches('a')
        .parse()
        .with_context(|| format!("bad agent {text:?}"))?;
    if a >= n {
        bail!("agent {a} out of range (instance has {n})");
    }
    Ok(a)
}

fn parse_crash(text: &str, n: usize) -> Result<(AgentId, usize)> {
    let (a, t) = text
        .split_once('@')
        .with_context(|| format!("crash {text:?} is not AGENT@T"))?;
    let t: usize = t
        .trim_start_matches('t')
        .parse()
        .with_context(|| format!("bad time in crash {text:?}"))?;
    if t == 0 {
        bail!("crash times start at 1");
    }
    Ok((parse_agent(a, n)?, t))
}

fn parse_schedule(text: &str, n: usize) -> Result<Vec<SeqAction>> {
    text.split_whitespace()
        .filter(|t| !matches!(*t, "witness:" | "schedule" | ";" | "cycle"))
        .map(|tok| {
            let (kind, a) = tok
                .split_once(':')
                .with_context(|| format!("bad schedule token {tok:?}"))?;
            let a = parse_agent(a, n)?;
            match kind {
                "activate" => Ok(SeqAction::Activate(a)),
                "crash" => Ok(SeqAction::Crash(a)),
                _ => bail!("bad schedule token {tok:?}"),
            }
        })
        .collect()
}

/// Activates agents in turn, enough rounds for every path of the solution.
fn round_robin(inst: &Instance, sol: &Solution) -> Vec<SeqAction> {
    let rounds: usize = sol.plans.iter().flat_map(|p| &p.paths).map(|p| p.len()).sum();
    (0..rounds)
        .flat_map(|_| (0..inst.num_agents()).map(SeqAction::Activate))
        .collect()
}

fn gen(source: GenSource) -> Result<()> {
    match source {
        GenSource::Fixture { name, out, extras } => {
            let fx = fixture(&name).with_context(|| format!("known fixtures: {}", FIXTURE_NAMES.join(", ")))?;
            write(&out, &io::write_instance(&InstanceDoc::from_instance(&fx.instance)))?;
            if let Some(dir) = extras {
                std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                for sol in &fx.solutions {
                    let model = match sol.model {
                        Model::Syn => "syn",
                        Model::Seq => "seq",
                    };
                    write(
                        &dir.join(format!("{name}.{model}.solution.json")),
                        &io::write_solution(sol),
                    )?;
                }
                if let Some(order) = &fx.priority {
                    let text: Vec<String> = order.iter().map(|a| a.to_string()).collect();
                    write(&dir.join(format!("{name}.priority")), &(text.join(" ") + "\n"))?;
                }
            }
        }
        GenSource::Random {
            map,
            scen,
            n,
            f,
            seed,
            out,
        } => {
            let (graph, grid) = io::parse_map(&read(&map)?).with_context(|| format!("parsing {}", map.display()))?;
            let inst = match scen {
                Some(scen) => {
                    let (starts, goals) = io::parse_scen(&read(&scen)?, n, &grid)
                        .with_context(|| format!("parsing {}", scen.display()))?;
                    Instance {
                        graph,
                        starts,
                        goals,
                        f,
                    }
                }
                None => gen_well_formed(&graph, n, f, seed)?,
            };
            let map_ref = relative_to(&map, out.parent().unwrap_or(Path::new(".")))?;
            write(
                &out,
                &io::write_instance(&InstanceDoc::from_map(&map_ref, &grid, &inst)),
            )?;
        }
        GenSource::Sat { dimacs, out } => {
            let cnf = parse_dimacs(&read(&dimacs)?).with_context(|| format!("parsing {}", dimacs.display()))?;
            let inst = sat_to_mappcf(&cnf)?;
            write(&out, &io::write_instance(&InstanceDoc::from_instance(&inst)))?;
        }
    }
    Ok(())
}

/// `target` as seen from `base`; absolute when no relative form exists.
fn relative_to(target: &Path, base: &Path) -> Result<String> {
    let target = std::fs::canonicalize(target).with_context(|| format!("resolving {}", target.display()))?;
    let base = std::fs::canonicalize(if base.as_os_str().is_empty() {
        Path::new(".")
    } else {
        base
    })
    .with_context(|| format!("resolving {}", base.display()))?;
    let common = target
        .components()
        .zip(base.components())
        .take_while(|(a, b)| a == b)
        .count();
    let mut rel = PathBuf::new();
    for _ in base.components().skip(common) {
        rel.push("..");
    }
    for c in target.components().skip(common) {
        rel.push(c);
    }
    Ok(rel.to_string_lossy().into_owned())
}
