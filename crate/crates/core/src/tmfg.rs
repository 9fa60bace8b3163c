//! Triangulated Maximally Filtered Graph.
//!
//! Greedy planar chordal filtering of a similarity matrix. The graph starts
//! from the heaviest 4-clique and repeatedly inserts the (vertex, triangular
//! face) pair with the largest weight gain. Each insertion contributes one
//! 4-clique and one 3-clique separator, which LoGo uses to assemble a sparse
//! precision matrix.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::ReturnsPanel;
use crate::error::{IccError, Result};
use crate::linalg::{column_means, sample_covariance};
use crate::par;

/// Above this size the seed clique is chosen from the four strongest
/// vertices instead of by exhaustive search over all 4-subsets.
pub const EXHAUSTIVE_SEED_LIMIT: usize = 300;

/// Symmetric non-negative weights with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(DMatrix<f64>);

impl SimilarityMatrix {
    pub fn new(mut weights: DMatrix<f64>) -> Result<Self> {
        let n = weights.nrows();
        if weights.ncols() != n {
            return Err(IccError::DimensionMismatch { expected: n, got: weights.ncols() });
        }
        for i in 0..n {
            weights[(i, i)] = 0.0;
            for j in 0..i {
                let (a, b) = (weights[(i, j)], weights[(j, i)]);
                if !(a >= 0.0) || !(b >= 0.0) || (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                    return Err(IccError::Data(format!("similarity ({i},{j}) not symmetric non-negative")));
                }
            }
        }
        Ok(Self(weights))
    }

    /// Squared Pearson correlations read off a covariance matrix.
    pub fn from_covariance(cov: &DMatrix<f64>, names: &[String]) -> Result<Self> {
        let n = cov.nrows();
        for i in 0..n {
            if !(cov[(i, i)] > 0.0) {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
                return Err(IccError::ZeroVariance(name));
            }
        }
        Ok(Self(DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                let r = cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt();
                (r * r).min(1.0)
            }
        })))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Squared Pearson correlation of every pair of columns.
pub fn prepare_similarity(panel: &ReturnsPanel) -> Result<SimilarityMatrix> {
    if panel.n_obs() < 2 {
        return Err(IccError::Data("need at least two observations".into()));
    }
    let mean = column_means(&panel.returns);
    SimilarityMatrix::from_covariance(&sample_covariance(&panel.returns, &mean), &panel.tickers)
}

/// One greedy step: `vertex` went into triangle `face` for `gain`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Insertion {
    pub vertex: usize,
    pub face: [usize; 3],
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmfgGraph {
    pub n: usize,
    /// Pairs `(i, j)` with `i < j`, sorted.
    pub edges: Vec<(usize, usize)>,
    /// Sorted vertex quadruples, seed clique first.
    pub cliques: Vec<[usize; 4]>,
    /// Sorted triangles, one per insertion.
    pub separators: Vec<[usize; 3]>,
    pub seed: [usize; 4],
    pub insertions: Vec<Insertion>,
    pub total_weight: f64,
}

fn sorted3(mut f: [usize; 3]) -> [usize; 3] {
    f.sort_unstable();
    f
}

fn face_gain(sim: &SimilarityMatrix, v: usize, f: &[usize; 3]) -> f64 {
    sim.weight(v, f[0]) + sim.weight(v, f[1]) + sim.weight(v, f[2])
}

/// `true` when `(g1, v1, f1)` beats `(g2, v2, f2)`: larger gain, then lower
/// vertex, then lexicographically smaller face.
fn beats(g1: f64, v1: usize, f1: &[usize; 3], g2: f64, v2: usize, f2: &[usize; 3]) -> bool {
    g1 > g2 || (g1 == g2 && (v1 < v2 || (v1 == v2 && f1 < f2)))
}

fn seed_clique(sim: &SimilarityMatrix) -> [usize; 4] {
    let n = sim.n();
    if n > EXHAUSTIVE_SEED_LIMIT {
        let strength: Vec<f64> = (0..n).map(|i| (0..n).map(|j| sim.weight(i, j)).sum()).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| strength[b].total_cmp(&strength[a]).then(a.cmp(&b)));
        let mut seed = [order[0], order[1], order[2], order[3]];
        seed.sort_unstable();
        return seed;
    }
    // best quadruple for each leading vertex, reduced in index order
    let per_first = par::map_range(n.saturating_sub(3), |a| {
        let mut best: Option<(f64, [usize; 4])> = None;
        for b in a + 1..n {
            let wab = sim.weight(a, b);
            for c in b + 1..n {
                let wabc = wab + sim.weight(a, c) + sim.weight(b, c);
                for d in c + 1..n {
                    let w = wabc + sim.weight(a, d) + sim.weight(b, d) + sim.weight(c, d);
                    if best.is_none_or(|(bw, _)| w > bw) {
                        best = Some((w, [a, b, c, d]));
                    }
                }
            }
        }
        best
    });
    let mut best: Option<(f64, [usize; 4])> = None;
    for cand in per_first.into_iter().flatten() {
        if best.is_none_or(|(bw, _)| cand.0 > bw) {
            best = Some(cand);
        }
    }
    best.expect("n >= 4").1
}

/// Greedy TMFG construction. Ties go to the lowest vertex index.
pub fn build_tmfg(sim: &SimilarityMatrix) -> Result<TmfgGraph> {
    let n = sim.n();
    if n < 4 {
        return Err(IccError::Config(format!("TMFG needs at least 4 vertices, got {n}")));
    }
    let seed = seed_clique(sim);
    let [a, b, c, d] = seed;
    let mut in_graph = vec![false; n];
    for &v in &seed {
        in_graph[v] = true;
    }
    let mut edges = vec![(a, b), (a, c), (a, d), (b, c), (b, d), (c, d)];
    let mut total_weight: f64 = edges.iter().map(|&(i, j)| sim.weight(i, j)).sum();
    let mut faces: Vec<[usize; 3]> = vec![[a, b, c], [a, b, d], [a, c, d], [b, c, d]];
    let mut cliques = vec![seed];
    let mut separators = Vec::with_capacity(n - 4);
    let mut insertions = Vec::with_capacity(n - 4);

    let best_for = |face: &[usize; 3], in_graph: &[bool]| -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for v in (0..n).filter(|&v| !in_graph[v]) {
            let g = face_gain(sim, v, face);
            if best.is_none_or(|(bg, _)| g > bg) {
                best = Some((g, v));
            }
        }
        best
    };
    let mut face_best: Vec<Option<(f64, usize)>> = faces.iter().map(|f| best_for(f, &in_graph)).collect();

    for _ in 4..n {
        let mut pick: Option<(usize, f64, usize)> = None;
        for (fi, fb) in face_best.iter().enumerate() {
            let Some((g, v)) = *fb else { continue };
            let better = match pick {
                None => true,
                Some((pf, pg, pv)) => beats(g, v, &faces[fi], pg, pv, &faces[pf]),
            };
            if better {
                pick = Some((fi, g, v));
            }
        }
        let (fi, gain, v) = pick.expect("a free vertex remains");
        let face = faces[fi];
        in_graph[v] = true;
        insertions.push(Insertion { vertex: v, face, gain });
        total_weight += gain;
        for &u in &face {
            edges.push((u.min(v), u.max(v)));
        }
        let mut clique = [v, face[0], face[1], face[2]];
        clique.sort_unstable();
        cliques.push(clique);
        separators.push(face);

        faces[fi] = sorted3([v, face[0], face[1]]);
        faces.push(sorted3([v, face[0], face[2]]));
        faces.push(sorted3([v, face[1], face[2]]));
        face_best[fi] = best_for(&faces[fi], &in_graph);
        face_best.push(best_for(&faces[faces.len() - 2], &in_graph));
        face_best.push(best_for(&faces[faces.len() - 1], &in_graph));
        for (k, fb) in face_best.iter_mut().enumerate() {
            if matches!(fb, Some((_, u)) if *u == v) {
                *fb = best_for(&faces[k], &in_graph);
            }
        }
    }
    edges.sort_unstable();
    Ok(TmfgGraph { n, edges, cliques, separators, seed, insertions, total_weight })
}

impl TmfgGraph {
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.binary_search(&(i.min(j), i.max(j))).is_ok()
    }

    /// Edge list `vertex_i,vertex_j,weight`.
    pub fn write_edge_csv<W: Write>(&self, sim: &SimilarityMatrix, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["vertex_i", "vertex_j", "weight"])?;
        for &(i, j) in &self.edges {
            wtr.write_record([i.to_string(), j.to_string(), sim.weight(i, j).to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// JSON document with cliques and separators.
    pub fn structure_json(&self) -> serde_json::Value {
        serde_json::json!({
            "n": self.n,
            "edges": self.edges.len(),
            "cliques": self.cliques,
            "separators": self.separators,
        })
    }
}

/// Maximum cardinality search followed by a perfect-elimination check.
pub fn is_chordal(adj: &[Vec<usize>]) -> bool {
    let n = adj.len();
    let mut weight = vec![0usize; n];
    let mut order_pos = vec![usize::MAX; n];
    let mut order = Vec::with_capacity(n);
    for step in 0..n {
        let v = (0..n)
            .filter(|&v| order_pos[v] == usize::MAX)
            .max_by(|&a, &b| weight[a].cmp(&weight[b]).then(b.cmp(&a)))
            .unwrap();
        order_pos[v] = step;
        order.push(v);
        for &u in &adj[v] {
            if order_pos[u] == usize::MAX {
                weight[u] += 1;
            }
        }
    }
    for &v in &order {
        let earlier: Vec<usize> = adj[v].iter().copied().filter(|&u| order_pos[u] < order_pos[v]).collect();
        let Some(&parent) = earlier.iter().max_by_key(|&&u| order_pos[u]) else { continue };
        if earlier.iter().any(|&u| u != parent && adj[parent].binary_search(&u).is_err()) {
            return false;
        }
    }
    true
}
