use std::sync::Arc;

use crate::error::{Error, Result};

/// Region connectivity: a dense weighted adjacency and, for gridded
/// cities, the grid shape it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionGraph {
    n: usize,
    adjacency: Vec<f32>,
    grid: Option<(usize, usize)>,
}

impl RegionGraph {
    pub fn from_adjacency(n: usize, adjacency: Vec<f32>) -> Result<Self> {
        if adjacency.len() != n * n {
            return Err(Error::contract(format!(
                "adjacency has {} entries, expected {n}×{n}",
                adjacency.len()
            )));
        }
        for i in 0..n {
            if adjacency[i * n + i] != 0.0 {
                return Err(Error::contract(format!(
                    "adjacency diagonal at {i} is nonzero"
                )));
            }
            for j in 0..n {
                let (a, b) = (adjacency[i * n + j], adjacency[j * n + i]);
                if !(a.is_finite() && a >= 0.0) {
                    return Err(Error::contract(format!(
                        "adjacency[{i}][{j}] = {a} is not a weight"
                    )));
                }
                if (a - b).abs() > 1e-6 {
                    return Err(Error::contract(format!(
                        "adjacency is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(RegionGraph {
            n,
            adjacency,
            grid: None,
        })
    }

    /// Unit weights between 8-connected cells of a row-major grid.
    pub fn grid(rows: usize, cols: usize) -> Self {
        let n = rows * cols;
        let mut adjacency = vec![0.0f32; n * n];
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                for j in grid_neighbors(rows, cols, r, c) {
                    adjacency[i * n + j] = 1.0;
                }
            }
        }
        RegionGraph {
            n,
            adjacency,
            grid: Some((rows, cols)),
        }
    }

    pub fn regions(&self) -> usize {
        self.n
    }

    pub fn grid_shape(&self) -> Option<(usize, usize)> {
        self.grid
    }

    pub fn weight(&self, i: usize, j: usize) -> f32 {
        self.adjacency[i * self.n + j]
    }
}

/// Row-major ids of the up-to-8 cells around `(r, c)`.
pub(crate) fn grid_neighbors(rows: usize, cols: usize, r: usize, c: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(8);
    for dr in -1i64..=1 {
        for dc in -1i64..=1 {
            if dr == 0 && dc == 0 {
                continue;
            }
            let (rr, cc) = (r as i64 + dr, c as i64 + dc);
            if rr >= 0 && cc >= 0 && (rr as usize) < rows && (cc as usize) < cols {
                out.push(rr as usize * cols + cc as usize);
            }
        }
    }
    out
}

/// Most-square `rows × cols` factorization of `n` with `rows ≤ cols`.
pub fn square_grid(n: usize) -> (usize, usize) {
    let mut rows = (n as f64).sqrt() as usize;
    while rows > 1 && !n.is_multiple_of(rows) {
        rows -= 1;
    }
    let rows = rows.max(1);
    (rows, n / rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NeighborMode {
    /// Strongest adjacency weights first, ties to the smaller id.
    #[default]
    Adjacency,
    /// Regions `s+1, …, s+K_r` by raw index, clipped at `N`.
    LiteralIndex,
}

impl std::str::FromStr for NeighborMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adjacency" => Ok(NeighborMode::Adjacency),
            "literal-index" => Ok(NeighborMode::LiteralIndex),
            other => Err(Error::contract(format!(
                "unknown neighbor mode `{other}` (adjacency, literal-index)"
            ))),
        }
    }
}

/// Per-region ordered neighbor ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborLists {
    lists: Vec<Vec<usize>>,
}

impl NeighborLists {
    pub fn new(n: usize, lists: Vec<Vec<usize>>) -> Result<Self> {
        if lists.len() != n {
            return Err(Error::contract(format!(
                "{} neighbor lists for {n} regions",
                lists.len()
            )));
        }
        for (s, list) in lists.iter().enumerate() {
            for (i, &j) in list.iter().enumerate() {
                if j >= n || j == s || list[..i].contains(&j) {
                    return Err(Error::contract(format!("bad neighbor {j} for region {s}")));
                }
            }
        }
        Ok(NeighborLists { lists })
    }

    pub fn regions(&self) -> usize {
        self.lists.len()
    }

    pub fn of(&self, region: usize) -> &[usize] {
        &self.lists[region]
    }

    pub fn max_len(&self) -> usize {
        self.lists.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Flattened `(region, neighbor)` pairs in list order.
    pub fn pairs(&self) -> (Arc<Vec<usize>>, Arc<Vec<usize>>) {
        let mut src = Vec::new();
        let mut dst = Vec::new();
        for (s, list) in self.lists.iter().enumerate() {
            for &j in list {
                src.push(s);
                dst.push(j);
            }
        }
        (Arc::new(src), Arc::new(dst))
    }

    /// Restrict to a subset of regions, renumbered in the given order.
    /// Neighbors outside the subset are dropped.
    pub fn restrict(&self, regions: &[usize]) -> Self {
        let mut pos = vec![usize::MAX; self.lists.len()];
        for (i, &r) in regions.iter().enumerate() {
            pos[r] = i;
        }
        let lists = regions
            .iter()
            .map(|&r| {
                self.lists[r]
                    .iter()
                    .filter_map(|&j| (pos[j] != usize::MAX).then_some(pos[j]))
                    .collect()
            })
            .collect();
        NeighborLists { lists }
    }
}

pub fn build_neighbor_lists(graph: &RegionGraph, k_r: usize, mode: NeighborMode) -> NeighborLists {
    let n = graph.regions();
    let lists = (0..n)
        .map(|s| match mode {
            NeighborMode::Adjacency => {
                let mut cand: Vec<usize> = (0..n)
                    .filter(|&j| j != s && graph.weight(s, j) > 0.0)
                    .collect();
                cand.sort_by(|&a, &b| {
                    graph
                        .weight(s, b)
                        .total_cmp(&graph.weight(s, a))
                        .then(a.cmp(&b))
                });
                cand.truncate(k_r);
                cand
            }
            NeighborMode::LiteralIndex => (s + 1..n.min(s + 1 + k_r)).collect(),
        })
        .collect();
    NeighborLists { lists }
}
