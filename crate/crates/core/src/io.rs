//! File formats: MovingAI maps and scenarios, JSON instance and solution
//! documents, and the results table.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{Graph, Instance, Model, Solution, Vertex};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("map line {line}: {msg}")]
    Map { line: usize, msg: String },
    #[error("scenario line {line}: {msg}")]
    Scen { line: usize, msg: String },
    #[error("document: {0}")]
    Document(#[from] serde_json::Error),
    #[error("document: {0}")]
    Schema(String),
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Passable cells of a grid map and their vertex ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMap {
    pub width: usize,
    pub height: usize,
    /// Row-major; `None` for obstacles.
    pub cells: Vec<Option<Vertex>>,
    /// `(x, y)` of each vertex.
    pub coords: Vec<(usize, usize)>,
}

impl GridMap {
    pub fn vertex_at(&self, x: usize, y: usize) -> Option<Vertex> {
        if x >= self.width || y >= self.height {
            return None;
        }
        self.cells[y * self.width + x]
    }
}

fn header_value(line: Option<(usize, &str)>, key: &str) -> Result<usize, IoError> {
    let (no, text) = line.ok_or(IoError::Map {
        line: 0,
        msg: format!("missing {key} header"),
    })?;
    let err = || IoError::Map {
        line: no + 1,
        msg: format!("expected `{key} <n>`"),
    };
    let mut parts = text.split_whitespace();
    if parts.next() != Some(key) {
        return Err(err());
    }
    parts.next().and_then(|v| v.parse().ok()).ok_or_else(err)
}

/// Parses a MovingAI `.map` into a four-connected graph.
pub fn parse_map(text: &str) -> Result<(Graph, GridMap), IoError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim_start().starts_with("type") => {}
        _ => {
            return Err(IoError::Map {
                line: 1,
                msg: "expected `type` header".into(),
            })
        }
    }
    let height = header_value(lines.next(), "height")?;
    let width = header_value(lines.next(), "width")?;
    match lines.next() {
        Some((_, l)) if l.trim() == "map" => {}
        other => {
            return Err(IoError::Map {
                line: other.map_or(4, |(n, _)| n + 1),
                msg: "expected `map`".into(),
            })
        }
    }
    let mut cells = Vec::with_capacity(width * height);
    let mut coords = Vec::new();
    for y in 0..height {
        let (no, row) = lines.next().ok_or(IoError::Map {
            line: 5 + y,
            msg: format!("expected {height} rows"),
        })?;
        let row = row.trim_end_matches('\r');
        if row.chars().count() != width {
            return Err(IoError::Map {
                line: no + 1,
                msg: format!("row has {} cells, expected {width}", row.chars().count()),
            });
        }
        for (x, c) in row.chars().enumerate() {
            match c {
                '.' | 'G' => {
                    cells.push(Some(coords.len()));
                    coords.push((x, y));
                }
                '@' | 'T' | 'O' => cells.push(None),
                other => {
                    return Err(IoError::Map {
                        line: no + 1,
                        msg: format!("unknown glyph {other:?}"),
                    })
                }
            }
        }
    }
    let grid = GridMap {
        width,
        height,
        cells,
        coords,
    };
    let mut edges = Vec::new();
    for (v, &(x, y)) in grid.coords.iter().enumerate() {
        if let Some(u) = grid.vertex_at(x + 1, y) {
            edges.push((v, u));
        }
        if let Some(u) = grid.vertex_at(x, y + 1) {
            edges.push((v, u));
        }
    }
    let graph = Graph::from_edges(grid.coords.len(), &edges, false).expect("grid edges are in range");
    Ok((graph, grid))
}

/// Starts and goals of the first `n` scenario rows.
pub fn parse_scen(text: &str, n: usize, grid: &GridMap) -> Result<(Vec<Vertex>, Vec<Vertex>), IoError> {
    let mut starts = Vec::with_capacity(n);
    let mut goals = Vec::with_capacity(n);
    for (no, line) in text.lines().enumerate() {
        if starts.len() == n {
            break;
        }
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with("version") {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let err = |msg: String| IoError::Scen { line: no + 1, msg };
        if fields.len() < 8 {
            return Err(err(format!(
                "expected at least 8 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let num = |i: usize| -> Result<usize, IoError> {
            fields[i]
                .trim()
                .parse()
                .map_err(|_| err(format!("field {} is not a coordinate", i + 1)))
        };
        let (sx, sy, gx, gy) = (num(4)?, num(5)?, num(6)?, num(7)?);
        let s = grid
            .vertex_at(sx, sy)
            .ok_or_else(|| err(format!("start ({sx}, {sy}) is not a passable cell")))?;
        let g = grid
            .vertex_at(gx, gy)
            .ok_or_else(|| err(format!("goal ({gx}, {gy}) is not a passable cell")))?;
        starts.push(s);
        goals.push(g);
    }
    if starts.len() < n {
        return Err(IoError::Scen {
            line: text.lines().count(),
            msg: format!("only {} rows, {n} requested", starts.len()),
        });
    }
    Ok((starts, goals))
}

/// Agent location in a document: a vertex id, or `[x, y]` on a map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Location {
    Vertex(Vertex),
    Cell([usize; 2]),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSource {
    Edges {
        num_vertices: usize,
        directed: bool,
        edges: Vec<(Vertex, Vertex)>,
    },
    /// Map file path, relative to the document's directory.
    Map { path: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDoc {
    pub graph: GraphSource,
    pub starts: Vec<Location>,
    pub goals: Vec<Location>,
    pub f: usize,
}

impl InstanceDoc {
    pub fn from_instance(instance: &Instance) -> Self {
        InstanceDoc {
            graph: GraphSource::Edges {
                num_vertices: instance.graph.num_vertices(),
                directed: instance.graph.is_directed(),
                edges: instance.graph.edges(),
            },
            starts: instance.starts.iter().map(|&v| Location::Vertex(v)).collect(),
            goals: instance.goals.iter().map(|&v| Location::Vertex(v)).collect(),
            f: instance.f,
        }
    }

    /// Document referring to a map file, with agents given as cells.
    pub fn from_map(map_path: &str, grid: &GridMap, instance: &Instance) -> Self {
        let cell = |v: Vertex| {
            let (x, y) = grid.coords[v];
            Location::Cell([x, y])
        };
        InstanceDoc {
            graph: GraphSource::Map {
                path: map_path.to_string(),
            },
            starts: instance.starts.iter().map(|&v| cell(v)).collect(),
            goals: instance.goals.iter().map(|&v| cell(v)).collect(),
            f: instance.f,
        }
    }

    /// Builds the instance, reading a referenced map relative to `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<Instance, IoError> {
        let (graph, grid) = match &self.graph {
            GraphSource::Edges {
                num_vertices,
                directed,
                edges,
            } => (
                Graph::from_edges(*num_vertices, edges, *directed)
                    .map_err(|e| IoError::Schema(format!("graph: {e}")))?,
                None,
            ),
            GraphSource::Map { path } => {
                let text = read_file(&base_dir.join(path))?;
                let (g, grid) = parse_map(&text)?;
                (g, Some(grid))
            }
        };
        let locate = |field: &str, k: usize, loc: &Location| -> Result<Vertex, IoError> {
            let bad = |msg: String| IoError::Schema(format!("{field}[{k}]: {msg}"));
            match (loc, &grid) {
                (Location::Vertex(v), None) if *v < graph.num_vertices() => Ok(*v),
                (Location::Vertex(v), None) => Err(bad(format!("vertex {v} out of range"))),
                (Location::Cell([x, y]), Some(grid)) => grid
                    .vertex_at(*x, *y)
                    .ok_or_else(|| bad(format!("cell ({x}, {y}) is not passable"))),
                (Location::Vertex(_), Some(_)) => Err(bad("map instances use [x, y] cells".into())),
                (Location::Cell(_), None) => Err(bad("edge-list instances use vertex ids".into())),
            }
        };
        let starts = self
            .starts
            .iter()
            .enumerate()
            .map(|(k, l)| locate("starts", k, l))
            .collect::<Result<Vec<_>, _>>()?;
        let goals = self
            .goals
            .iter()
            .enumerate()
            .map(|(k, l)| locate("goals", k, l))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Instance {
            graph,
            starts,
            goals,
            f: self.f,
        })
    }
}

pub fn read_file(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_file(path: &Path, text: &str) -> Result<(), IoError> {
    std::fs::write(path, text).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

fn to_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("documents serialize");
    s.push('\n');
    s
}

pub fn write_instance(doc: &InstanceDoc) -> String {
    to_pretty(doc)
}

pub fn read_instance(text: &str) -> Result<InstanceDoc, IoError> {
    Ok(serde_json::from_str(text)?)
}

/// Reads an instance document from disk and resolves any map reference.
pub fn load_instance(path: &Path) -> Result<Instance, IoError> {
    let doc = read_instance(&read_file(path)?)?;
    doc.resolve(path.parent().unwrap_or(Path::new(".")))
}

pub fn write_solution(solution: &Solution) -> String {
    to_pretty(solution)
}

pub fn read_solution(text: &str) -> Result<Solution, IoError> {
    Ok(serde_json::from_str(text)?)
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub instance_id: String,
    pub map: String,
    pub model: String,
    pub fd: String,
    pub algo: String,
    pub n_agents: usize,
    pub f: usize,
    pub outcome: String,
    pub failure_reason: String,
    pub runtime_ms: u64,
    pub cost_normalized: Option<f64>,
}

pub fn write_results<W: Write>(rows: &[ResultRow], out: W) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|source| IoError::File {
        path: "<results>".into(),
        source,
    })?;
    Ok(())
}

pub fn read_results(text: &str) -> Result<Vec<ResultRow>, IoError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<Result<Vec<ResultRow>, _>>()?)
}

/// Primary-path cost divided by the sum of start-goal distances.
///
/// SYN counts timesteps until each agent's primary path ends (waits
/// included); SEQ counts edges traversed. An all-zero denominator yields 1.
pub fn cost_normalized(instance: &Instance, solution: &Solution) -> f64 {
    let no_block = vec![false; instance.graph.num_vertices()];
    let denom: usize = (0..instance.num_agents())
        .map(|a| instance.graph.distances_from(instance.starts[a], &no_block)[instance.goals[a]])
        .sum();
    let numer: usize = solution
        .plans
        .iter()
        .map(|p| {
            let path = p.primary();
            match solution.model {
                Model::Syn => path.len() - 1,
                Model::Seq => path.windows(2).filter(|w| w[0] != w[1]).count(),
            }
        })
        .sum();
    if denom == 0 {
        1.0
    } else {
        numer as f64 / denom as f64
    }
}
