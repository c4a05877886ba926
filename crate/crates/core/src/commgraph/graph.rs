use serde::{Deserialize, Serialize};

use super::GraphError;
use crate::diffcore::{Array, SparseMatrix};

/// Undirected communication graph over alive agents.
///
/// Agents are stored in ascending id order; "local index" below means the
/// position in that order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborGraph {
    ids: Vec<usize>,
    /// Sorted local indices, no self entries.
    adjacency: Vec<Vec<usize>>,
}

impl NeighborGraph {
    /// Builds a graph from an explicit edge list over `ids`.
    pub fn from_edges(ids: &[usize], edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        if ids.is_empty() {
            return Err(GraphError::Empty);
        }
        let mut sorted = ids.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(GraphError::DuplicateId);
        }
        let mut g = Self {
            adjacency: vec![Vec::new(); sorted.len()],
            ids: sorted,
        };
        for &(a, b) in edges {
            let i = g.local(a).ok_or(GraphError::UnknownAgent(a))?;
            let j = g.local(b).ok_or(GraphError::UnknownAgent(b))?;
            if i != j {
                g.adjacency[i].push(j);
                g.adjacency[j].push(i);
            }
        }
        for row in &mut g.adjacency {
            row.sort_unstable();
            row.dedup();
        }
        Ok(g)
    }

    pub fn n_alive(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Local index of agent `id`.
    pub fn local(&self, id: usize) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    /// Neighbor ids of `id` (excluding `id` itself).
    pub fn neighbors(&self, id: usize) -> Option<Vec<usize>> {
        self.local(id)
            .map(|i| self.adjacency[i].iter().map(|&j| self.ids[j]).collect())
    }

    pub fn neighbors_local(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        match (self.local(a), self.local(b)) {
            (Some(i), Some(j)) => self.adjacency[i].binary_search(&j).is_ok(),
            _ => false,
        }
    }

    /// Edges as id pairs with the smaller id first, lexicographically sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, row) in self.adjacency.iter().enumerate() {
            for &j in row.iter().filter(|&&j| j > i) {
                out.push((self.ids[i], self.ids[j]));
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn component_count(&self) -> usize {
        let n = self.n_alive();
        let mut seen = vec![false; n];
        let mut count = 0;
        for start in 0..n {
            if seen[start] {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                for &j in &self.adjacency[i] {
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        count
    }

    pub fn is_connected(&self) -> bool {
        self.component_count() == 1
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Direction {
    Up,
    Down,
    Left,
    Right,
}

fn direction(dx: i64, dy: i64) -> Direction {
    if dy.abs() >= dx.abs() {
        if dy < 0 {
            Direction::Up
        } else {
            Direction::Down
        }
    } else if dx < 0 {
        Direction::Left
    } else {
        Direction::Right
    }
}

/// Nearest-agent-per-direction graph.
///
/// Every agent looks up, down, left and right (by dominant axis, with
/// `|dx| == |dy|` counted as vertical) and links to the closest agent in
/// each nonempty direction, lowest id on distance ties. Links are then made
/// mutual.
pub fn build_graph(positions: &[(usize, usize)], ids: &[usize]) -> Result<NeighborGraph, GraphError> {
    if positions.len() != ids.len() {
        return Err(GraphError::LengthMismatch {
            positions: positions.len(),
            ids: ids.len(),
        });
    }
    if ids.is_empty() {
        return Err(GraphError::Empty);
    }
    let mut agents: Vec<(usize, (i64, i64))> = ids
        .iter()
        .zip(positions)
        .map(|(&id, &(x, y))| (id, (x as i64, y as i64)))
        .collect();
    agents.sort_unstable_by_key(|a| a.0);
    if agents.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(GraphError::DuplicateId);
    }
    let mut by_pos: Vec<(i64, i64)> = agents.iter().map(|a| a.1).collect();
    by_pos.sort_unstable();
    if by_pos.windows(2).any(|w| w[0] == w[1]) {
        return Err(GraphError::DuplicatePosition);
    }

    let n = agents.len();
    let mut edges = Vec::new();
    for i in 0..n {
        // best[d] = (squared distance, local index)
        let mut best: [Option<(i64, usize)>; 4] = [None; 4];
        let (xi, yi) = agents[i].1;
        for (j, &(_, (xj, yj))) in agents.iter().enumerate() {
            if j == i {
                continue;
            }
            let (dx, dy) = (xj - xi, yj - yi);
            let d = dx * dx + dy * dy;
            let slot = &mut best[direction(dx, dy) as usize];
            // Agents are visited in ascending id order, so `<` keeps the lowest id on ties.
            if slot.is_none_or(|(bd, _)| d < bd) {
                *slot = Some((d, j));
            }
        }
        for (_, j) in best.into_iter().flatten() {
            edges.push((agents[i].0, agents[j].0));
        }
    }
    let sorted_ids: Vec<usize> = agents.iter().map(|a| a.0).collect();
    NeighborGraph::from_edges(&sorted_ids, &edges)
}

/// Complete graph on agents `0..n`.
pub fn fully_connected(n: usize) -> Result<NeighborGraph, GraphError> {
    complete_on(&(0..n).collect::<Vec<_>>())
}

/// Complete graph on the given agent ids.
pub fn complete_on(ids: &[usize]) -> Result<NeighborGraph, GraphError> {
    let mut edges = Vec::new();
    for (k, &a) in ids.iter().enumerate() {
        for &b in &ids[k + 1..] {
            edges.push((a, b));
        }
    }
    NeighborGraph::from_edges(ids, &edges)
}

/// Graph with no edges; every agent only hears itself.
pub fn edgeless(ids: &[usize]) -> Result<NeighborGraph, GraphError> {
    NeighborGraph::from_edges(ids, &[])
}

/// `B̃^{-1/2} (G + I) B̃^{-1/2}` over a graph's local index order.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    matrix: Array,
}

impl NormalizedAdjacency {
    pub fn matrix(&self) -> &Array {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.data()[i * self.n() + j]
    }

    pub fn to_sparse(&self) -> SparseMatrix {
        SparseMatrix::from_dense(&self.matrix)
    }
}

pub fn normalize(graph: &NeighborGraph) -> NormalizedAdjacency {
    let n = graph.n_alive();
    let degree: Vec<f64> = (0..n)
        .map(|i| 1.0 + graph.neighbors_local(i).len() as f64)
        .collect();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        data[i * n + i] = 1.0 / degree[i];
        for &j in graph.neighbors_local(i) {
            data[i * n + j] = 1.0 / (degree[i] * degree[j]).sqrt();
        }
    }
    NormalizedAdjacency {
        matrix: Array::matrix(n, n, data),
    }
}

/// Block-diagonal sparse matrix over several graphs, in the given order.
/// Used to propagate many independent episodes in one pass.
pub fn block_diagonal(blocks: &[NormalizedAdjacency]) -> SparseMatrix {
    let total: usize = blocks.iter().map(NormalizedAdjacency::n).sum();
    let mut triplets = Vec::new();
    let mut offset = 0;
    for b in blocks {
        let n = b.n();
        for i in 0..n {
            for j in 0..n {
                let v = b.get(i, j);
                if v != 0.0 {
                    triplets.push((offset + i, offset + j, v));
                }
            }
        }
        offset += n;
    }
    SparseMatrix::from_triplets(total, total, triplets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_is_mutual() {
        let g = build_graph(&[(0, 0), (3, 0)], &[0, 1]).unwrap();
        assert_eq!(g.edges(), vec![(0, 1)]);
    }

    #[test]
    fn collinear_triple() {
        let g = build_graph(&[(0, 0), (2, 0), (5, 0)], &[0, 1, 2]).unwrap();
        assert_eq!(g.edges(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn diagonal_counts_as_vertical() {
        assert!(direction(1, 1) == Direction::Down);
        assert!(direction(-2, -2) == Direction::Up);
        let g = build_graph(&[(0, 0), (1, 1)], &[0, 1]).unwrap();
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn distance_ties_pick_lowest_id() {
        // Agents 5 and 2 are both to the right of 9 at squared distance 5.
        // Agent 7 keeps 5 from choosing 9 itself, so an edge 9-5 could only
        // come from 9 picking 5.
        let g = build_graph(&[(2, 2), (4, 3), (4, 1), (3, 3)], &[9, 5, 2, 7]).unwrap();
        assert!(g.has_edge(9, 2));
        assert!(!g.has_edge(9, 5));
    }

    #[test]
    fn errors() {
        assert_eq!(build_graph(&[], &[]), Err(GraphError::Empty));
        assert_eq!(build_graph(&[(1, 1), (1, 1)], &[0, 1]), Err(GraphError::DuplicatePosition));
        assert!(matches!(build_graph(&[(1, 1)], &[0, 1]), Err(GraphError::LengthMismatch { .. })));
    }

    #[test]
    fn normalize_examples() {
        let one = normalize(&fully_connected(1).unwrap());
        assert_eq!(one.matrix().data(), &[1.0]);
        let two = normalize(&fully_connected(2).unwrap());
        assert_eq!(two.matrix().data(), &[0.5; 4]);
        let chain = NeighborGraph::from_edges(&[0, 1, 2], &[(0, 1), (1, 2)]).unwrap();
        let a = normalize(&chain);
        assert!((a.get(0, 1) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!((a.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(a.get(0, 2), 0.0);
    }

    #[test]
    fn complete_graph_edges() {
        assert_eq!(fully_connected(1).unwrap().edge_count(), 0);
        assert_eq!(fully_connected(4).unwrap().edge_count(), 6);
    }

    #[test]
    fn block_diagonal_layout() {
        let a = normalize(&fully_connected(2).unwrap());
        let b = normalize(&fully_connected(1).unwrap());
        let s = block_diagonal(&[a, b]).to_dense();
        assert_eq!(s.data(), &[0.5, 0.5, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 1.0]);
    }
}
