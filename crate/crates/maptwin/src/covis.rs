//! Co-visibility graph model of the 3D map and the pose-estimation
//! uncertainty metric.
//!
//! The edge server stores a bounded set of frames; every pair of stored
//! frames that observe common map points is joined by an edge weighted by
//! the number of shared points. The uncertainty of the pose estimates that
//! can be recovered from such a map is `u(G) = -log det(L̂ ⊗ Π)` where `L̂`
//! is the reduced weighted Laplacian and `Π` a constant 6x6 information
//! block (one per pose degree of freedom). Lower is better; a disconnected
//! map has unbounded uncertainty and is reported as `+inf`.
//!
//! The exponential-time [`CovisibilityGraph::spanning_tree_weight`]
//! enumerator is kept alongside as an independent oracle: by the matrix-tree
//! theorem `det(L̂)` equals the weighted spanning-tree sum, which lets tests
//! validate the factorization path against brute force.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pose degrees of freedom; fixes the dimension of the information block Π.
pub const POSE_DOF: usize = 6;

/// Cholesky pivots at or below this are treated as numerically singular,
/// i.e. the graph is classified as disconnected.
pub const SPD_PIVOT_TOL: f64 = 1e-12;

/// Maximum node count accepted by the spanning-tree enumerator.
pub const TREE_ENUM_CAP: usize = 8;

const SYMMETRY_TOL: f64 = 1e-9;

/// Index into the scene's global map-point universe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MapPointId(pub u32);

/// Identity of a captured camera frame, unique within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameId(pub u64);

/// A captured camera frame together with the map points detected in it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub frame_id: FrameId,
    pub slot: usize,
    pub points: BTreeSet<MapPointId>,
    pub is_keyframe: bool,
}

impl Frame {
    pub fn new(frame_id: u64, slot: usize, points: impl IntoIterator<Item = u32>) -> Self {
        Frame {
            frame_id: FrameId(frame_id),
            slot,
            points: points.into_iter().map(MapPointId).collect(),
            is_keyframe: false,
        }
    }

    pub fn keyframe(mut self) -> Self {
        self.is_keyframe = true;
        self
    }
}

/// Number of map points observed by both frames.
pub fn edge_weight(a: &Frame, b: &Frame) -> usize {
    a.points.intersection(&b.points).count()
}

/// Parameters of the uncertainty metric: Π = κ·I with dimension [`POSE_DOF`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyParams {
    /// κ > 0 scaling the information block.
    pub pi_scale: f64,
}

impl UncertaintyParams {
    pub fn new(pi_scale: f64) -> Result<Self, CovisError> {
        if pi_scale.is_nan() || pi_scale <= 0.0 {
            return Err(CovisError::BadPiScale(pi_scale));
        }
        Ok(UncertaintyParams { pi_scale })
    }

    /// Dimension of Π; fixed by the pose parameterization.
    pub const fn pi_dim(&self) -> usize {
        POSE_DOF
    }
}

impl Default for UncertaintyParams {
    fn default() -> Self {
        UncertaintyParams { pi_scale: 1.0 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CovisError {
    #[error("frame {0:?} is already stored in the graph")]
    DuplicateFrame(FrameId),
    #[error("frame {0:?} is not stored in the graph")]
    UnknownFrame(FrameId),
    #[error("operation needs at least 2 nodes, graph has {0}")]
    TooFewNodes(usize),
    #[error("matrix is not symmetric within {SYMMETRY_TOL:e}")]
    NotSymmetric,
    #[error("node count {0} exceeds the enumeration cap {TREE_ENUM_CAP}")]
    EnumerationCap(usize),
    #[error("pi_scale must be positive, got {0}")]
    BadPiScale(f64),
}

/// Dense square matrix in row-major order. Small: map sizes stay at desk
/// scale, so no sparse or incremental machinery.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(dim: usize) -> Self {
        SquareMatrix { dim, data: vec![0.0; dim * dim] }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let dim = rows.len();
        let mut m = SquareMatrix::zeros(dim);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), dim, "rows must form a square matrix");
            m.data[i * dim..(i + 1) * dim].copy_from_slice(row);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.dim + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.dim + c] = v;
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kronecker(&self, other: &SquareMatrix) -> SquareMatrix {
        let (n, m) = (self.dim, other.dim);
        let mut out = SquareMatrix::zeros(n * m);
        for i in 0..n {
            for j in 0..n {
                let a = self.get(i, j);
                if a == 0.0 {
                    continue;
                }
                for p in 0..m {
                    for q in 0..m {
                        out.set(i * m + p, j * m + q, a * other.get(p, q));
                    }
                }
            }
        }
        out
    }

    /// κ·I of the given dimension.
    pub fn scaled_identity(dim: usize, scale: f64) -> SquareMatrix {
        let mut m = SquareMatrix::zeros(dim);
        for i in 0..dim {
            m.set(i, i, scale);
        }
        m
    }
}

/// Outcome of an SPD log-determinant: singular inputs are a regular result,
/// not an error, because a disconnected map legitimately produces them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogDet {
    Value(f64),
    NotPositiveDefinite,
}

/// Log-determinant via Cholesky factorization.
///
/// Rejects asymmetric input; reports [`LogDet::NotPositiveDefinite`] when a
/// pivot falls at or below [`SPD_PIVOT_TOL`].
pub fn log_det_spd(m: &SquareMatrix) -> Result<LogDet, CovisError> {
    let n = m.dim;
    for i in 0..n {
        for j in (i + 1)..n {
            if (m.get(i, j) - m.get(j, i)).abs() > SYMMETRY_TOL {
                return Err(CovisError::NotSymmetric);
            }
        }
    }
    // In-place lower Cholesky; only the log of the diagonal is kept.
    let mut l = vec![0.0f64; n * n];
    let mut log_det = 0.0;
    for j in 0..n {
        let mut d = m.get(j, j);
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d <= SPD_PIVOT_TOL {
            return Ok(LogDet::NotPositiveDefinite);
        }
        let ljj = d.sqrt();
        l[j * n + j] = ljj;
        log_det += 2.0 * ljj.ln();
        for i in (j + 1)..n {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / ljj;
        }
    }
    Ok(LogDet::Value(log_det))
}

/// The 3D map: stored frames as nodes, shared-point counts as weighted
/// edges. Zero-weight pairs are never materialized.
///
/// Values are immutable; updates return new graphs. Serialization stores
/// only the frames; the edges are a pure function of the point sets and
/// are rebuilt on load.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CovisibilityGraph {
    nodes: BTreeMap<FrameId, Frame>,
    edges: BTreeMap<(FrameId, FrameId), usize>,
}

impl Serialize for CovisibilityGraph {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.nodes.values())
    }
}

impl<'de> Deserialize<'de> for CovisibilityGraph {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let frames = Vec::<Frame>::deserialize(deserializer)?;
        let mut g = CovisibilityGraph::new();
        for f in frames {
            g = g.add_frame(f).map_err(serde::de::Error::custom)?;
        }
        Ok(g)
    }
}

fn edge_key(a: FrameId, b: FrameId) -> (FrameId, FrameId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl CovisibilityGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: FrameId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn frame(&self, id: FrameId) -> Option<&Frame> {
        self.nodes.get(&id)
    }

    /// Stored frames in ascending id order.
    pub fn frames(&self) -> impl Iterator<Item = &Frame> {
        self.nodes.values()
    }

    pub fn frame_ids(&self) -> impl Iterator<Item = FrameId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn edges(&self) -> impl Iterator<Item = (FrameId, FrameId, usize)> + '_ {
        self.edges.iter().map(|(&(a, b), &w)| (a, b, w))
    }

    pub fn edge(&self, a: FrameId, b: FrameId) -> usize {
        self.edges.get(&edge_key(a, b)).copied().unwrap_or(0)
    }

    /// Sum of incident edge weights.
    pub fn weighted_degree(&self, id: FrameId) -> usize {
        self.edges
            .iter()
            .filter(|(&(a, b), _)| a == id || b == id)
            .map(|(_, &w)| w)
            .sum()
    }

    /// Number of incident positive-weight edges.
    pub fn degree(&self, id: FrameId) -> usize {
        self.edges.keys().filter(|&&(a, b)| a == id || b == id).count()
    }

    /// Adds a frame, materializing a positive-weight edge to every stored
    /// frame that shares map points with it.
    pub fn add_frame(&self, f: Frame) -> Result<CovisibilityGraph, CovisError> {
        if self.nodes.contains_key(&f.frame_id) {
            return Err(CovisError::DuplicateFrame(f.frame_id));
        }
        let mut g = self.clone();
        for other in self.nodes.values() {
            let w = edge_weight(&f, other);
            if w > 0 {
                g.edges.insert(edge_key(f.frame_id, other.frame_id), w);
            }
        }
        g.nodes.insert(f.frame_id, f);
        Ok(g)
    }

    /// Removes the given frames and all incident edges.
    pub fn remove_frames(&self, ids: &BTreeSet<FrameId>) -> Result<CovisibilityGraph, CovisError> {
        for id in ids {
            if !self.nodes.contains_key(id) {
                return Err(CovisError::UnknownFrame(*id));
            }
        }
        let mut g = self.clone();
        g.nodes.retain(|id, _| !ids.contains(id));
        g.edges.retain(|(a, b), _| !ids.contains(a) && !ids.contains(b));
        Ok(g)
    }

    /// True iff all nodes are reachable via positive-weight edges. Empty and
    /// single-node graphs count as connected.
    pub fn is_connected(&self) -> bool {
        if self.nodes.len() <= 1 {
            return true;
        }
        let ids: Vec<FrameId> = self.nodes.keys().copied().collect();
        let index: BTreeMap<FrameId, usize> = ids.iter().copied().zip(0..).collect();
        let mut adj = vec![Vec::new(); ids.len()];
        for &(a, b) in self.edges.keys() {
            let (ia, ib) = (index[&a], index[&b]);
            adj[ia].push(ib);
            adj[ib].push(ia);
        }
        let mut seen = vec![false; ids.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count == ids.len()
    }

    /// True iff removing `id` would leave the remaining nodes disconnected.
    pub fn is_cut_vertex(&self, id: FrameId) -> bool {
        if !self.contains(id) || self.len() <= 2 {
            return false;
        }
        // BFS over the graph with `id` masked out; no materialized removal.
        let ids: Vec<FrameId> = self.nodes.keys().copied().filter(|&x| x != id).collect();
        let index: BTreeMap<FrameId, usize> = ids.iter().copied().zip(0..).collect();
        let mut adj = vec![Vec::new(); ids.len()];
        for &(a, b) in self.edges.keys() {
            if a == id || b == id {
                continue;
            }
            let (ia, ib) = (index[&a], index[&b]);
            adj[ia].push(ib);
            adj[ib].push(ia);
        }
        let mut seen = vec![false; ids.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count != ids.len()
    }

    /// Weighted graph Laplacian with the anchor's row and column deleted.
    pub fn reduced_laplacian(&self, anchor: FrameId) -> Result<SquareMatrix, CovisError> {
        if self.nodes.len() < 2 {
            return Err(CovisError::TooFewNodes(self.nodes.len()));
        }
        if !self.nodes.contains_key(&anchor) {
            return Err(CovisError::UnknownFrame(anchor));
        }
        let ids: Vec<FrameId> = self.nodes.keys().copied().filter(|&id| id != anchor).collect();
        let index: BTreeMap<FrameId, usize> = ids.iter().copied().zip(0..).collect();
        let n = ids.len();
        let mut m = SquareMatrix::zeros(n);
        for (&(a, b), &w) in &self.edges {
            let w = w as f64;
            match (index.get(&a), index.get(&b)) {
                (Some(&i), Some(&j)) => {
                    m.set(i, j, -w);
                    m.set(j, i, -w);
                    m.set(i, i, m.get(i, i) + w);
                    m.set(j, j, m.get(j, j) + w);
                }
                // Edges touching the anchor contribute only to the degree of
                // the surviving endpoint.
                (Some(&i), None) | (None, Some(&i)) => m.set(i, i, m.get(i, i) + w),
                (None, None) => {}
            }
        }
        Ok(m)
    }

    /// Pose-estimation uncertainty `u(G) = -log det(L̂ ⊗ Π)`, expanded as
    /// `-POSE_DOF·logdet(L̂) - POSE_DOF·(|D|-1)·ln κ`.
    ///
    /// Disconnected or sub-2-node maps return `+inf`: their uncertainty is
    /// unbounded and selection logic treats them as soft-infeasible.
    pub fn uncertainty(&self, p: &UncertaintyParams) -> f64 {
        if self.nodes.len() < 2 || !self.is_connected() {
            return f64::INFINITY;
        }
        let anchor = *self.nodes.keys().next().expect("non-empty");
        let lap = self.reduced_laplacian(anchor).expect("at least 2 nodes");
        match log_det_spd(&lap).expect("laplacian is symmetric") {
            LogDet::NotPositiveDefinite => f64::INFINITY,
            LogDet::Value(ld) => {
                let dof = POSE_DOF as f64;
                let n1 = (self.nodes.len() - 1) as f64;
                -(dof * ld + n1 * dof * p.pi_scale.ln())
            }
        }
    }

    /// Uncertainty evaluated without the determinant factorization: builds
    /// the full `L̂ ⊗ Π` product and takes one log-determinant of it.
    ///
    /// Exists so the factored exponents in [`Self::uncertainty`] can be
    /// checked against the direct product form.
    pub fn uncertainty_kronecker_direct(&self, p: &UncertaintyParams) -> f64 {
        if self.nodes.len() < 2 || !self.is_connected() {
            return f64::INFINITY;
        }
        let anchor = *self.nodes.keys().next().expect("non-empty");
        let lap = self.reduced_laplacian(anchor).expect("at least 2 nodes");
        let pi = SquareMatrix::scaled_identity(POSE_DOF, p.pi_scale);
        let product = lap.kronecker(&pi);
        match log_det_spd(&product).expect("kronecker of symmetric is symmetric") {
            LogDet::NotPositiveDefinite => f64::INFINITY,
            LogDet::Value(ld) => -ld,
        }
    }

    /// Sum over all spanning trees of the product of edge weights, by
    /// explicit enumeration of edge subsets. Zero if disconnected.
    ///
    /// Exponential in the edge count; rejected above [`TREE_ENUM_CAP`] nodes.
    pub fn spanning_tree_weight(&self) -> Result<f64, CovisError> {
        let n = self.nodes.len();
        if n > TREE_ENUM_CAP {
            return Err(CovisError::EnumerationCap(n));
        }
        if n <= 1 {
            // A single node (or the empty graph) has exactly one spanning
            // tree, the empty one, with empty product 1.
            return Ok(1.0);
        }
        let index: BTreeMap<FrameId, usize> = self.nodes.keys().copied().zip(0..).collect();
        let edges: Vec<(usize, usize, f64)> = self
            .edges
            .iter()
            .map(|(&(a, b), &w)| (index[&a], index[&b], w as f64))
            .collect();
        let need = n - 1;
        if edges.len() < need {
            return Ok(0.0);
        }
        let mut total = 0.0;
        let mut chosen = Vec::with_capacity(need);
        enumerate_trees(&edges, 0, need, n, &mut chosen, &mut total);
        Ok(total)
    }

    /// Line-oriented snapshot for golden-file tests: one `frame_id slot
    /// n_points is_keyframe` record per node, then one `fid1 fid2 weight`
    /// record per edge, both in ascending id order.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for f in self.nodes.values() {
            writeln!(
                out,
                "{} {} {} {}",
                f.frame_id.0,
                f.slot,
                f.points.len(),
                u8::from(f.is_keyframe)
            )
            .expect("write to string");
        }
        for (&(a, b), &w) in &self.edges {
            writeln!(out, "{} {} {}", a.0, b.0, w).expect("write to string");
        }
        out
    }

    /// Builds a graph realizing the given edge weights exactly: frames are
    /// numbered `0..n` and every listed pair shares that many fresh map
    /// points (plus one private point per frame so point sets are non-empty).
    pub fn from_edge_weights(n: usize, edges: &[(usize, usize, usize)]) -> CovisibilityGraph {
        let mut point_sets: Vec<BTreeSet<MapPointId>> = vec![BTreeSet::new(); n];
        let mut next_point = 0u32;
        for set in &mut point_sets {
            set.insert(MapPointId(next_point));
            next_point += 1;
        }
        for &(a, b, w) in edges {
            assert!(a < n && b < n && a != b, "edge endpoints must be distinct nodes");
            for _ in 0..w {
                point_sets[a].insert(MapPointId(next_point));
                point_sets[b].insert(MapPointId(next_point));
                next_point += 1;
            }
        }
        let mut g = CovisibilityGraph::new();
        for (i, points) in point_sets.into_iter().enumerate() {
            let f = Frame {
                frame_id: FrameId(i as u64),
                slot: 0,
                points,
                is_keyframe: false,
            };
            g = g.add_frame(f).expect("fresh ids cannot collide");
        }
        g
    }
}

fn enumerate_trees(
    edges: &[(usize, usize, f64)],
    start: usize,
    need: usize,
    n: usize,
    chosen: &mut Vec<usize>,
    total: &mut f64,
) {
    if need == 0 {
        if is_spanning_tree(edges, chosen, n) {
            *total += chosen.iter().map(|&e| edges[e].2).product::<f64>();
        }
        return;
    }
    if edges.len() - start < need {
        return;
    }
    for e in start..edges.len() {
        chosen.push(e);
        enumerate_trees(edges, e + 1, need - 1, n, chosen, total);
        chosen.pop();
    }
}

fn is_spanning_tree(edges: &[(usize, usize, f64)], chosen: &[usize], n: usize) -> bool {
    // n-1 edges connecting all n nodes form a tree iff union-find never
    // sees a cycle.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &e in chosen {
        let (a, b, _) = edges[e];
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra == rb {
            return false;
        }
        parent[ra] = rb;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(id: u64, pts: &[u32]) -> Frame {
        Frame::new(id, 0, pts.iter().copied())
    }

    fn unit_triangle() -> CovisibilityGraph {
        CovisibilityGraph::from_edge_weights(3, &[(0, 1, 1), (1, 2, 1), (0, 2, 1)])
    }

    #[test]
    fn edge_weight_counts_shared_points() {
        assert_eq!(edge_weight(&frame(0, &[1, 2, 3]), &frame(1, &[2, 3, 4])), 2);
        assert_eq!(edge_weight(&frame(0, &[1, 2]), &frame(1, &[3, 4])), 0);
        let same = frame(0, &[1, 2, 3, 4, 5, 6, 7]);
        let other = frame(1, &[1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(edge_weight(&same, &other), 7);
        assert_eq!(edge_weight(&same, &other), edge_weight(&other, &same));
    }

    #[test]
    fn add_frame_materializes_positive_edges_only() {
        let g = CovisibilityGraph::new().add_frame(frame(0, &[1, 2])).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.edges().count(), 0);

        let g = g.add_frame(frame(1, &[2, 3])).unwrap();
        let g = g.add_frame(frame(2, &[2, 9])).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.edges().count(), 3);
        assert_eq!(g.edge(FrameId(0), FrameId(2)), 1);

        // No shared points: node added, no edge, graph disconnected.
        let g = g.add_frame(frame(3, &[77])).unwrap();
        assert_eq!(g.degree(FrameId(3)), 0);
        assert!(!g.is_connected());
    }

    #[test]
    fn add_frame_rejects_duplicates() {
        let g = CovisibilityGraph::new().add_frame(frame(0, &[1])).unwrap();
        assert_eq!(
            g.add_frame(frame(0, &[2])).unwrap_err(),
            CovisError::DuplicateFrame(FrameId(0))
        );
    }

    #[test]
    fn remove_frames_cases() {
        let g = unit_triangle();
        assert_eq!(g.remove_frames(&BTreeSet::new()).unwrap(), g);

        let minus_one = g.remove_frames(&[FrameId(2)].into()).unwrap();
        assert_eq!(minus_one.len(), 2);
        assert_eq!(minus_one.edges().count(), 1);

        let path = CovisibilityGraph::from_edge_weights(3, &[(0, 1, 1), (1, 2, 1)]);
        let ends = path.remove_frames(&[FrameId(1)].into()).unwrap();
        assert_eq!(ends.len(), 2);
        assert_eq!(ends.edges().count(), 0);
        assert!(!ends.is_connected());

        assert_eq!(
            g.remove_frames(&[FrameId(9)].into()).unwrap_err(),
            CovisError::UnknownFrame(FrameId(9))
        );
    }

    #[test]
    fn connectivity_conventions() {
        assert!(CovisibilityGraph::new().is_connected());
        let single = CovisibilityGraph::new().add_frame(frame(0, &[1])).unwrap();
        assert!(single.is_connected());
        let two = single.add_frame(frame(1, &[9])).unwrap();
        assert!(!two.is_connected());
        assert!(unit_triangle().is_connected());
    }

    #[test]
    fn reduced_laplacian_values() {
        let two = CovisibilityGraph::from_edge_weights(2, &[(0, 1, 3)]);
        for anchor in [FrameId(0), FrameId(1)] {
            let m = two.reduced_laplacian(anchor).unwrap();
            assert_eq!(m.dim(), 1);
            assert_eq!(m.get(0, 0), 3.0);
        }

        let m = unit_triangle().reduced_laplacian(FrameId(0)).unwrap();
        assert_eq!(m.dim(), 2);
        let expect = SquareMatrix::from_rows(&[&[2.0, -1.0], &[-1.0, 2.0]]);
        assert_eq!(m, expect);

        let single = CovisibilityGraph::new().add_frame(frame(0, &[1])).unwrap();
        assert_eq!(
            single.reduced_laplacian(FrameId(0)).unwrap_err(),
            CovisError::TooFewNodes(1)
        );
    }

    #[test]
    fn reduced_laplacian_of_disconnected_graph_is_singular() {
        let g = CovisibilityGraph::from_edge_weights(3, &[(0, 1, 2)]);
        let m = g.reduced_laplacian(FrameId(0)).unwrap();
        assert_eq!(log_det_spd(&m).unwrap(), LogDet::NotPositiveDefinite);
    }

    #[test]
    fn log_det_spd_examples() {
        let one = SquareMatrix::from_rows(&[&[1.0]]);
        assert_eq!(log_det_spd(&one).unwrap(), LogDet::Value(0.0));

        let m = SquareMatrix::from_rows(&[&[2.0, -1.0], &[-1.0, 2.0]]);
        match log_det_spd(&m).unwrap() {
            LogDet::Value(v) => assert!((v - 3.0f64.ln()).abs() < 1e-12),
            other => panic!("expected value, got {other:?}"),
        }

        let singular = SquareMatrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]);
        assert_eq!(log_det_spd(&singular).unwrap(), LogDet::NotPositiveDefinite);

        let skew = SquareMatrix::from_rows(&[&[1.0, 0.5], &[0.1, 1.0]]);
        assert_eq!(log_det_spd(&skew).unwrap_err(), CovisError::NotSymmetric);
    }

    #[test]
    fn uncertainty_examples() {
        let p = UncertaintyParams::default();

        let two = CovisibilityGraph::from_edge_weights(2, &[(0, 1, 1)]);
        assert!(two.uncertainty(&p).abs() < 1e-12);

        // Kirchhoff: the unit triangle has 3 spanning trees.
        let tri = unit_triangle();
        assert!((tri.uncertainty(&p) - (-6.0 * 3.0f64.ln())).abs() < 1e-9);

        // The 3-node path has a single spanning tree.
        let path = CovisibilityGraph::from_edge_weights(3, &[(0, 1, 1), (1, 2, 1)]);
        assert!(path.uncertainty(&p).abs() < 1e-9);
        assert!(tri.uncertainty(&p) < path.uncertainty(&p));

        let split = CovisibilityGraph::new()
            .add_frame(frame(0, &[1]))
            .unwrap()
            .add_frame(frame(1, &[2]))
            .unwrap();
        assert_eq!(split.uncertainty(&p), f64::INFINITY);
    }

    #[test]
    fn uncertainty_pi_scale_shifts_by_constant_per_node() {
        let g = unit_triangle();
        let base = g.uncertainty(&UncertaintyParams::default());
        let kappa = 2.0;
        let scaled = g.uncertainty(&UncertaintyParams::new(kappa).unwrap());
        let expect = base - 6.0 * 2.0 * kappa.ln();
        assert!((scaled - expect).abs() < 1e-9);
    }

    #[test]
    fn spanning_tree_weight_examples() {
        assert_eq!(unit_triangle().spanning_tree_weight().unwrap(), 3.0);
        let two = CovisibilityGraph::from_edge_weights(2, &[(0, 1, 5)]);
        assert_eq!(two.spanning_tree_weight().unwrap(), 5.0);
        let split = CovisibilityGraph::from_edge_weights(3, &[(0, 1, 1)]);
        assert_eq!(split.spanning_tree_weight().unwrap(), 0.0);

        let big = CovisibilityGraph::from_edge_weights(
            9,
            &(0..8).map(|i| (i, i + 1, 1)).collect::<Vec<_>>(),
        );
        assert_eq!(big.spanning_tree_weight().unwrap_err(), CovisError::EnumerationCap(9));
    }

    #[test]
    fn kronecker_direct_matches_factored_form() {
        let p = UncertaintyParams::new(0.5).unwrap();
        let g = CovisibilityGraph::from_edge_weights(4, &[(0, 1, 2), (1, 2, 1), (2, 3, 4), (0, 3, 1)]);
        let direct = g.uncertainty_kronecker_direct(&p);
        let factored = g.uncertainty(&p);
        assert!((direct - factored).abs() < 1e-8, "direct {direct} vs factored {factored}");
    }

    #[test]
    fn snapshot_golden() {
        let mut g = CovisibilityGraph::new();
        g = g.add_frame(frame(3, &[1, 2]).keyframe()).unwrap();
        g = g.add_frame(Frame::new(5, 2, [2, 4])).unwrap();
        g = g.add_frame(Frame::new(8, 4, [2, 4, 6])).unwrap();
        let expect = "\
3 0 2 1
5 2 2 0
8 4 3 0
3 5 1
3 8 1
5 8 2
";
        assert_eq!(g.snapshot(), expect);
    }

    /// Boundary of the monotonicity lemma: a node attached by exactly one
    /// unit-weight edge multiplies the weighted spanning-tree sum by 1, so
    /// u is unchanged rather than strictly decreased.
    #[test]
    fn unit_leaf_keeps_uncertainty_unchanged() {
        let p = UncertaintyParams::default();
        let g = unit_triangle();
        let before = g.uncertainty(&p);
        let mut leaf = Frame::new(99, 0, [500]);
        let shared = *g.frame(FrameId(0)).unwrap().points.iter().next().unwrap();
        leaf.points.insert(shared);
        let grown = g.add_frame(leaf).unwrap();
        assert_eq!(grown.edge(FrameId(0), FrameId(99)), 1);
        assert!((grown.uncertainty(&p) - before).abs() < 1e-12);
    }

    #[test]
    fn from_edge_weights_realizes_exact_weights() {
        let g = CovisibilityGraph::from_edge_weights(4, &[(0, 1, 7), (2, 3, 2)]);
        assert_eq!(g.edge(FrameId(0), FrameId(1)), 7);
        assert_eq!(g.edge(FrameId(2), FrameId(3)), 2);
        assert_eq!(g.edge(FrameId(0), FrameId(2)), 0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        /// Strategy: a connected weighted graph on 2..=6 nodes built from a
        /// random spanning tree plus random extra edges, weights in 1..=9.
        fn connected_graph() -> impl Strategy<Value = CovisibilityGraph> {
            (2usize..=6).prop_flat_map(|n| {
                let tree = proptest::collection::vec((0usize..n.max(1), 1usize..=9), n - 1);
                let extras = proptest::collection::vec(
                    ((0usize..n, 0usize..n), 1usize..=9),
                    0..=n,
                );
                (tree, extras).prop_map(move |(tree, extras)| {
                    let mut edges: BTreeMap<(usize, usize), usize> = BTreeMap::new();
                    for (i, (parent, w)) in tree.into_iter().enumerate() {
                        let child = i + 1;
                        let parent = parent % child;
                        edges.insert((parent, child), w);
                    }
                    for ((a, b), w) in extras {
                        if a != b {
                            let key = (a.min(b), a.max(b));
                            edges.entry(key).or_insert(w);
                        }
                    }
                    let list: Vec<(usize, usize, usize)> =
                        edges.into_iter().map(|((a, b), w)| (a, b, w)).collect();
                    CovisibilityGraph::from_edge_weights(n, &list)
                })
            })
        }

        proptest! {
            /// Matrix-tree theorem: exp(logdet of the reduced Laplacian)
            /// equals the enumerated weighted spanning-tree sum, for every
            /// anchor choice.
            #[test]
            fn matrix_tree_equivalence(g in connected_graph()) {
                let trees = g.spanning_tree_weight().unwrap();
                prop_assert!(trees > 0.0);
                for anchor in g.frame_ids().collect::<Vec<_>>() {
                    let lap = g.reduced_laplacian(anchor).unwrap();
                    let det = match log_det_spd(&lap).unwrap() {
                        LogDet::Value(v) => v.exp(),
                        LogDet::NotPositiveDefinite => 0.0,
                    };
                    prop_assert!(
                        (det - trees).abs() <= 1e-9 * trees.max(1.0),
                        "anchor {anchor:?}: det {det} vs trees {trees}"
                    );
                }
            }

            /// u(G) does not depend on which node anchors the reduction.
            #[test]
            fn anchor_independence(g in connected_graph()) {
                let p = UncertaintyParams::default();
                let reference = g.uncertainty(&p);
                for anchor in g.frame_ids().collect::<Vec<_>>() {
                    let lap = g.reduced_laplacian(anchor).unwrap();
                    let u = match log_det_spd(&lap).unwrap() {
                        LogDet::Value(ld) => -(POSE_DOF as f64) * ld,
                        LogDet::NotPositiveDefinite => f64::INFINITY,
                    };
                    prop_assert!((u - reference).abs() < 1e-9_f64.max(1e-12 * reference.abs()));
                }
            }

            /// Adding a node of weighted degree >= 2 or a positive edge
            /// strictly lowers u. (A node attached by a single unit-weight
            /// edge multiplies the spanning-tree sum by exactly 1 and keeps
            /// u unchanged; see `unit_leaf_keeps_uncertainty_unchanged`.)
            #[test]
            fn monotonicity(g in connected_graph(), w in 1usize..=9) {
                let p = UncertaintyParams::default();
                let before = g.uncertainty(&p);

                // New node sharing w fresh points with node 0 and one more
                // with node 1, so its weighted degree is at least 2.
                let base = 1_000_000u32;
                let mut points: BTreeSet<MapPointId> = (0..=w as u32)
                    .map(|i| MapPointId(base + i))
                    .collect();
                let mut host0 = g.frame(FrameId(0)).unwrap().clone();
                let mut host1 = g.frame(FrameId(1)).unwrap().clone();
                for i in 0..w as u32 {
                    host0.points.insert(MapPointId(base + i));
                }
                host1.points.insert(MapPointId(base + w as u32));
                points.insert(MapPointId(base + w as u32 + 1));
                let grown = g
                    .remove_frames(&[FrameId(0), FrameId(1)].into()).unwrap()
                    .add_frame(host0).unwrap()
                    .add_frame(host1).unwrap()
                    .add_frame(Frame { frame_id: FrameId(999), slot: 0, points, is_keyframe: false })
                    .unwrap();
                prop_assert!(grown.uncertainty(&p) < before - 1e-12);

                // Extra shared points between two existing nodes.
                let ids: Vec<FrameId> = g.frame_ids().collect();
                let (a, b) = (ids[0], ids[1]);
                let mut fa = g.frame(a).unwrap().clone();
                let mut fb = g.frame(b).unwrap().clone();
                for i in 0..w as u32 {
                    fa.points.insert(MapPointId(2_000_000 + i));
                    fb.points.insert(MapPointId(2_000_000 + i));
                }
                let denser = g
                    .remove_frames(&[a, b].into()).unwrap()
                    .add_frame(fa).unwrap()
                    .add_frame(fb).unwrap();
                prop_assert!(denser.uncertainty(&p) < before - 1e-12);
            }

            /// add_frame then remove_frames of the same frame is identity.
            #[test]
            fn add_remove_round_trip(g in connected_graph(), pts in proptest::collection::btree_set(0u32..40, 1..6)) {
                let f = Frame {
                    frame_id: FrameId(777),
                    slot: 3,
                    points: pts.into_iter().map(MapPointId).collect(),
                    is_keyframe: true,
                };
                let restored = g
                    .add_frame(f).unwrap()
                    .remove_frames(&[FrameId(777)].into()).unwrap();
                prop_assert_eq!(restored, g);
            }
        }
    }
}
