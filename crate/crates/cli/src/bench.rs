//! Batch experiments from a TOML configuration.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use mappcf::dcrf::SolverConfig;
use mappcf::gen::gen_well_formed;
use mappcf::io::{self, cost_normalized, ResultRow};
use mappcf::{FdMode, Graph, Instance, Model};
use rayon::prelude::*;
use serde::Deserialize;

use crate::{run_solver, Algo};

/// Experiment grid. Paths are relative to the configuration file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub map: PathBuf,
    /// Agents come from the first `n` scenario rows when given, otherwise
    /// they are sampled as well-formed instances per seed.
    pub scen: Option<PathBuf>,
    pub agents: Vec<usize>,
    pub f: Vec<usize>,
    #[serde(default = "default_models")]
    pub models: Vec<String>,
    #[serde(default = "default_fd")]
    pub fd: Vec<String>,
    #[serde(default = "default_algos")]
    pub algos: Vec<String>,
    /// Seeds `0..seeds`.
    pub seeds: u64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

fn default_models() -> Vec<String> {
    vec!["syn".into()]
}

fn default_fd() -> Vec<String> {
    vec!["nfd".into()]
}

fn default_algos() -> Vec<String> {
    vec!["dcrf".into(), "disjoint".into()]
}

fn default_timeout() -> f64 {
    30.0
}

struct Job {
    instance_id: String,
    n: usize,
    f: usize,
    instance: Result<Instance, String>,
    model: Model,
    fd: FdMode,
    algo: Algo,
    seed: u64,
}

fn parse_model(s: &str) -> Result<Model> {
    match s {
        "syn" => Ok(Model::Syn),
        "seq" => Ok(Model::Seq),
        _ => bail!("unknown model {s:?}"),
    }
}

fn parse_fd(s: &str) -> Result<FdMode> {
    match s {
        "nfd" => Ok(FdMode::Nfd),
        "afd" => Ok(FdMode::Afd),
        _ => bail!("unknown failure detector {s:?}"),
    }
}

fn parse_algo(s: &str) -> Result<Algo> {
    match s {
        "dcrf" => Ok(Algo::Dcrf),
        "disjoint" => Ok(Algo::Disjoint),
        _ => bail!("unknown algorithm {s:?}"),
    }
}

pub fn load_config(path: &Path) -> Result<BenchConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Runs every job of the configuration on `jobs` worker threads; rows come
/// back in job order regardless of scheduling.
pub fn run_config(path: &Path, jobs: usize) -> Result<Vec<ResultRow>> {
    let config = load_config(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let map_path = base.join(&config.map);
    let (graph, grid) =
        io::parse_map(&io::read_file(&map_path)?).with_context(|| format!("parsing {}", map_path.display()))?;
    let map_name = config
        .map
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let scen = config.scen.as_ref().map(|p| io::read_file(&base.join(p))).transpose()?;
    let models = config
        .models
        .iter()
        .map(|m| parse_model(m))
        .collect::<Result<Vec<_>>>()?;
    let fds = config.fd.iter().map(|m| parse_fd(m)).collect::<Result<Vec<_>>>()?;
    let algos = config.algos.iter().map(|m| parse_algo(m)).collect::<Result<Vec<_>>>()?;

    let instance_for = |n: usize, f: usize, seed: u64, graph: &Graph| -> Result<Instance, String> {
        match &scen {
            Some(text) => io::parse_scen(text, n, &grid)
                .map(|(starts, goals)| Instance {
                    graph: graph.clone(),
                    starts,
                    goals,
                    f,
                })
                .map_err(|e| e.to_string()),
            None => gen_well_formed(graph, n, f, seed).map_err(|e| e.to_string()),
        }
    };
    let mut work = Vec::new();
    for &n in &config.agents {
        for &f in &config.f {
            for seed in 0..config.seeds {
                let instance = instance_for(n, f, seed, &graph);
                for &model in &models {
                    for &fd in &fds {
                        for &algo in &algos {
                            work.push(Job {
                                instance_id: format!("{map_name}-n{n}-f{f}-s{seed}"),
                                n,
                                f,
                                instance: instance.clone(),
                                model,
                                fd,
                                algo,
                                seed,
                            });
                        }
                    }
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("starting worker pool")?;
    let timeout = Duration::from_secs_f64(config.timeout_secs);
    let rows = pool.install(|| work.par_iter().map(|job| run_job(job, &map_name, timeout)).collect());
    Ok(rows)
}

fn run_job(job: &Job, map_name: &str, timeout: Duration) -> ResultRow {
    let mut row = ResultRow {
        instance_id: job.instance_id.clone(),
        map: map_name.to_string(),
        model: name_of_model(job.model).into(),
        fd: name_of_fd(job.fd).into(),
        algo: match job.algo {
            Algo::Dcrf => "dcrf",
            Algo::Disjoint => "disjoint",
        }
        .into(),
        n_agents: job.n,
        f: job.f,
        outcome: String::new(),
        failure_reason: String::new(),
        runtime_ms: 0,
        cost_normalized: None,
    };
    let inst = match &job.instance {
        Ok(inst) => inst,
        Err(_) => {
            row.outcome = "skipped".into();
            row.failure_reason = "no_instance".into();
            return row;
        }
    };
    let mut solver = SolverConfig::new(job.model, job.fd);
    solver.deadline = timeout;
    solver.seed = job.seed;
    let (result, runtime) = run_solver(inst, job.algo, &solver);
    row.runtime_ms = runtime.as_millis() as u64;
    match result {
        Ok(sol) => {
            row.outcome = "solved".into();
            row.cost_normalized = Some(cost_normalized(inst, &sol));
        }
        Err(reason) => {
            row.outcome = "failure".into();
            row.failure_reason = reason.into();
        }
    }
    row
}

fn name_of_model(m: Model) -> &'static str {
    match m {
        Model::Syn => "syn",
        Model::Seq => "seq",
    }
}

fn name_of_fd(m: FdMode) -> &'static str {
    match m {
        FdMode::Nfd => "nfd",
        FdMode::Afd => "afd",
    }
}
