//! Random geometric graphs on the unit square.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::rng::{stream, Stream};

/// Default number of reseeding attempts when a connected graph is required.
pub const DEFAULT_MAX_RETRIES: u32 = 1000;

/// Sensor network: positions in `[0,1]^2`, an edge wherever two sensors are
/// within distance `r` (inclusive).
#[derive(Debug, Clone, PartialEq)]
pub struct GraphTopology {
    r: f64,
    seed: Option<u64>,
    positions: Vec<[f64; 2]>,
    /// Sorted neighbour lists including the node itself.
    neighborhoods: Vec<Vec<usize>>,
}

/// On-disk form of a topology.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyDoc {
    #[serde(rename = "S")]
    pub s: usize,
    pub r: f64,
    pub seed: Option<u64>,
    pub positions: Vec<[f64; 2]>,
    pub edges: Vec<[usize; 2]>,
}

fn check_radius(r: f64) -> Result<()> {
    if !(r > 0.0 && r <= std::f64::consts::SQRT_2) {
        return Err(param(format!(
            "connectivity radius must lie in (0, sqrt 2], got {r}"
        )));
    }
    Ok(())
}

impl GraphTopology {
    /// Builds the graph induced by `positions` and radius `r`.
    pub fn from_positions(positions: Vec<[f64; 2]>, r: f64, seed: Option<u64>) -> Result<Self> {
        if positions.is_empty() {
            return Err(param("sensor count must be at least 1"));
        }
        check_radius(r)?;
        for (k, p) in positions.iter().enumerate() {
            if !p.iter().all(|c| (0.0..=1.0).contains(c)) {
                return Err(param(format!(
                    "position {k} = {p:?} lies outside the unit square"
                )));
            }
        }
        let s = positions.len();
        let mut neighborhoods: Vec<Vec<usize>> = (0..s).map(|k| vec![k]).collect();
        for i in 0..s {
            for j in i + 1..s {
                let d =
                    (positions[i][0] - positions[j][0]).hypot(positions[i][1] - positions[j][1]);
                if d <= r {
                    neighborhoods[i].push(j);
                    neighborhoods[j].push(i);
                }
            }
        }
        for nb in &mut neighborhoods {
            nb.sort_unstable();
        }
        Ok(Self {
            r,
            seed,
            positions,
            neighborhoods,
        })
    }

    pub fn sensor_count(&self) -> usize {
        self.positions.len()
    }

    pub fn radius(&self) -> f64 {
        self.r
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    /// Neighbourhood of `k`, including `k`, ascending.
    pub fn neighborhood(&self, k: usize) -> &[usize] {
        &self.neighborhoods[k]
    }

    /// Neighbours of `k`, excluding `k`.
    pub fn neighbors(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.neighborhoods[k]
            .iter()
            .copied()
            .filter(move |&l| l != k)
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        i != j && self.neighborhoods[i].binary_search(&j).is_ok()
    }

    pub fn degree(&self, k: usize) -> usize {
        self.neighborhoods[k].len() - 1
    }

    pub fn max_degree(&self) -> usize {
        (0..self.sensor_count())
            .map(|k| self.degree(k))
            .max()
            .unwrap_or(0)
    }

    /// Undirected edges `[i, j]` with `i < j`, lexicographic.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut out = Vec::new();
        for i in 0..self.sensor_count() {
            for j in self.neighbors(i).filter(|&j| j > i) {
                out.push([i, j]);
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.neighborhoods
            .iter()
            .map(|nb| nb.len() - 1)
            .sum::<usize>()
            / 2
    }

    /// Whether one breadth-first search from node 0 reaches every node.
    pub fn is_connected(&self) -> bool {
        let s = self.sensor_count();
        let mut seen = vec![false; s];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(k) = queue.pop_front() {
            for l in self.neighbors(k) {
                if !seen[l] {
                    seen[l] = true;
                    reached += 1;
                    queue.push_back(l);
                }
            }
        }
        reached == s
    }

    pub fn to_doc(&self) -> TopologyDoc {
        TopologyDoc {
            s: self.sensor_count(),
            r: self.r,
            seed: self.seed,
            positions: self.positions.clone(),
            edges: self.edges(),
        }
    }

    /// Rebuilds from a document; the listed edges must agree with the
    /// positions and radius.
    pub fn from_doc(doc: TopologyDoc) -> Result<Self> {
        if doc.s != doc.positions.len() {
            return Err(Error::Validation(format!(
                "S = {} but {} positions listed",
                doc.s,
                doc.positions.len()
            )));
        }
        let g = Self::from_positions(doc.positions, doc.r, doc.seed)?;
        let mut listed: Vec<[usize; 2]> = doc
            .edges
            .iter()
            .map(|&[i, j]| if i < j { [i, j] } else { [j, i] })
            .collect();
        listed.sort_unstable();
        listed.dedup();
        if listed != g.edges() {
            return Err(Error::Validation(
                "edge list disagrees with the positions and radius".into(),
            ));
        }
        Ok(g)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_doc(serde_json::from_str(text)?)
    }
}

/// Samples `s` positions uniformly on the unit square.
pub fn sample_rgg(s: usize, r: f64, seed: u64) -> Result<GraphTopology> {
    if s == 0 {
        return Err(param("sensor count must be at least 1"));
    }
    check_radius(r)?;
    let mut rng = stream(seed, Stream::Topology);
    let positions = (0..s)
        .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
        .collect();
    GraphTopology::from_positions(positions, r, Some(seed))
}

/// Samples with `seed, seed+1, …` until the graph is connected.
pub fn sample_connected_rgg(
    s: usize,
    r: f64,
    seed: u64,
    max_retries: u32,
) -> Result<GraphTopology> {
    for attempt in 0..=max_retries as u64 {
        let g = sample_rgg(s, r, seed.wrapping_add(attempt))?;
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::Topology(format!(
        "no connected graph with S = {s}, r = {r} after {max_retries} reseeds from seed {seed}"
    )))
}
