//! Marginal selection: every 1-way marginal plus the 2-way marginals on a
//! maximum spanning tree over pairwise mutual information.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::EncodedDatabase;
use crate::error::{Error, Result};
use crate::marginal::{count_marginal, Marginal};
use crate::privacy::gaussian_mechanism;
use crate::rng::StreamRng;

const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Which marginals to measure.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionPlan {
    pub attribute_count: usize,
    /// Edges `(u, v)` with `u < v`, in the order Kruskal accepted them.
    pub tree_edges: Vec<(usize, usize)>,
    /// Mutual information of each edge in nats.
    pub edge_weights: Vec<f64>,
    /// The edge inserted by [`PlanOptions::force_edge`], if any.
    pub forced_edge: Option<(usize, usize)>,
}

impl SelectionPlan {
    /// `[[0], [1], ..]`.
    pub fn one_way(&self) -> Vec<Vec<usize>> {
        (0..self.attribute_count).map(|a| vec![a]).collect()
    }

    pub fn total_weight(&self) -> f64 {
        self.edge_weights.iter().sum()
    }

    /// Checks the spanning-tree invariant.
    pub fn validate(&self) -> Result<()> {
        let d = self.attribute_count;
        if d == 0 {
            return Err(Error::EmptyDatabase);
        }
        if self.tree_edges.len() != d - 1 || self.edge_weights.len() != self.tree_edges.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} attributes need {} tree edges, plan has {}",
                d,
                d - 1,
                self.tree_edges.len()
            )));
        }
        let mut uf = DisjointSet::new(d);
        for &(u, v) in &self.tree_edges {
            if u >= v || v >= d {
                return Err(Error::BadClique(format!("malformed edge ({u}, {v})")));
            }
            if !uf.union(u, v) {
                return Err(Error::BadClique(format!("edge ({u}, {v}) closes a cycle")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self, names: &[&str]) -> PlanJson {
        PlanJson {
            edges: self
                .tree_edges
                .iter()
                .map(|&(u, v)| [names[u].to_string(), names[v].to_string()])
                .collect(),
            weights: self.edge_weights.clone(),
            forced_edge: self
                .forced_edge
                .map(|(u, v)| [names[u].to_string(), names[v].to_string()]),
        }
    }

    pub fn from_json(json: &PlanJson, names: &[&str]) -> Result<Self> {
        let index = |n: &str| {
            names
                .iter()
                .position(|x| *x == n)
                .ok_or_else(|| Error::BadClique(format!("unknown attribute {n:?} in plan")))
        };
        let pair = |[a, b]: &[String; 2]| -> Result<(usize, usize)> {
            let (u, v) = (index(a)?, index(b)?);
            Ok((u.min(v), u.max(v)))
        };
        let plan = SelectionPlan {
            attribute_count: names.len(),
            tree_edges: json.edges.iter().map(pair).collect::<Result<_>>()?,
            edge_weights: json.weights.clone(),
            forced_edge: json.forced_edge.as_ref().map(pair).transpose()?,
        };
        plan.validate()?;
        Ok(plan)
    }
}

/// Audit-log form of a plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanJson {
    pub edges: Vec<[String; 2]>,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced_edge: Option<[String; 2]>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlanOptions {
    /// Make `(u, v)` a tree edge, dropping the lightest edge on the cycle it
    /// would close.
    pub force_edge: Option<(usize, usize)>,
    /// Compute mutual information from Gaussian-noised pairwise marginals
    /// with this noise scale instead of exact counts. The noise is not charged
    /// to the privacy accountant.
    pub selection_noise: Option<(f64, u64)>,
}

/// `I(X;Y) = Σ P(x,y) ln(P(x,y) / (P(x)P(y)))` for a normalized 2-way table.
pub fn mutual_information(joint: &Marginal) -> Result<f64> {
    if joint.clique.len() != 2 {
        return Err(Error::Not2Way(joint.clique.len()));
    }
    let total = joint.total();
    if !joint.normalized
        || (total - 1.0).abs() > NORMALIZATION_TOLERANCE
        || joint.table.iter().any(|&p| p < 0.0)
    {
        return Err(Error::NotNormalized(total));
    }
    let (nx, ny) = (joint.shape[0], joint.shape[1]);
    let mut px = vec![0.0; nx];
    let mut py = vec![0.0; ny];
    for x in 0..nx {
        for y in 0..ny {
            let p = joint.table[x * ny + y];
            px[x] += p;
            py[y] += p;
        }
    }
    let mut mi = 0.0;
    for x in 0..nx {
        for y in 0..ny {
            let p = joint.table[x * ny + y];
            if p > 0.0 {
                mi += p * (p / (px[x] * py[y])).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

pub fn build_plan(db: &EncodedDatabase) -> Result<SelectionPlan> {
    build_plan_with(db, &PlanOptions::default())
}

pub fn build_plan_with(db: &EncodedDatabase, options: &PlanOptions) -> Result<SelectionPlan> {
    let d = db.attribute_count();
    if d == 0 || db.row_count() == 0 {
        return Err(Error::EmptyDatabase);
    }
    let pairs: Vec<(usize, usize)> = (0..d)
        .flat_map(|u| (u + 1..d).map(move |v| (u, v)))
        .collect();
    let weights: Vec<f64> = pairs
        .par_iter()
        .map(|&(u, v)| pair_weight(db, u, v, options.selection_noise))
        .collect::<Result<_>>()?;
    let candidates: Vec<(usize, usize, f64)> = pairs
        .iter()
        .zip(&weights)
        .map(|(&(u, v), &w)| (u, v, w))
        .collect();
    let mut plan = max_spanning_tree(d, &candidates);
    if let Some((a, b)) = options.force_edge {
        if a == b || a >= d || b >= d {
            return Err(Error::BadClique(format!("cannot force edge ({a}, {b})")));
        }
        let (u, v) = (a.min(b), a.max(b));
        let w = candidates
            .iter()
            .find(|c| c.0 == u && c.1 == v)
            .map(|c| c.2)
            .unwrap_or(0.0);
        force_edge(&mut plan, (u, v), w);
    }
    Ok(plan)
}

fn pair_weight(
    db: &EncodedDatabase,
    u: usize,
    v: usize,
    noise: Option<(f64, u64)>,
) -> Result<f64> {
    let counts = count_marginal(db, &[u, v])?;
    let joint = match noise {
        None => counts.normalize()?,
        Some((sigma, seed)) => {
            let mut rng = StreamRng::for_label(seed, &format!("select/{u}/{v}"));
            let noisy = gaussian_mechanism(&counts, sigma, &mut rng)?;
            let mut table: Vec<f64> = noisy.marginal.table.iter().map(|x| x.max(0.0)).collect();
            let total: f64 = table.iter().sum();
            if total > 0.0 {
                table.iter_mut().for_each(|x| *x /= total);
            } else {
                let n = table.len() as f64;
                table.iter_mut().for_each(|x| *x = 1.0 / n);
            }
            Marginal::new(counts.clique.clone(), counts.shape.clone(), table, true)?
        }
    };
    mutual_information(&joint)
}

/// Kruskal over `(u, v, weight)` candidates, visited by weight descending,
/// then `u` ascending, then `v` ascending.
pub fn max_spanning_tree(d: usize, candidates: &[(usize, usize, f64)]) -> SelectionPlan {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| {
        b.2.total_cmp(&a.2)
            .then_with(|| a.0.cmp(&b.0))
            .then_with(|| a.1.cmp(&b.1))
    });
    let mut uf = DisjointSet::new(d);
    let mut tree_edges = Vec::with_capacity(d.saturating_sub(1));
    let mut edge_weights = Vec::with_capacity(d.saturating_sub(1));
    for (u, v, w) in sorted {
        if uf.union(u, v) {
            tree_edges.push((u.min(v), u.max(v)));
            edge_weights.push(w);
            if tree_edges.len() + 1 == d {
                break;
            }
        }
    }
    SelectionPlan {
        attribute_count: d,
        tree_edges,
        edge_weights,
        forced_edge: None,
    }
}

fn force_edge(plan: &mut SelectionPlan, edge: (usize, usize), weight: f64) {
    plan.forced_edge = Some(edge);
    if plan.tree_edges.contains(&edge) {
        return;
    }
    let path = tree_path(plan.attribute_count, &plan.tree_edges, edge.0, edge.1);
    // lightest edge on the cycle, ties to the smaller pair
    let drop = path
        .windows(2)
        .map(|w| (w[0].min(w[1]), w[0].max(w[1])))
        .filter_map(|e| {
            plan.tree_edges
                .iter()
                .position(|&t| t == e)
                .map(|i| (i, plan.edge_weights[i], e))
        })
        .min_by(|a, b| match a.1.total_cmp(&b.1) {
            Ordering::Equal => a.2.cmp(&b.2),
            o => o,
        })
        .map(|(i, _, _)| i)
        .expect("tree path between distinct nodes has an edge");
    plan.tree_edges.remove(drop);
    plan.edge_weights.remove(drop);
    plan.tree_edges.push(edge);
    plan.edge_weights.push(weight);
}

/// Node sequence of the unique path from `from` to `to` in a spanning tree.
pub(crate) fn tree_path(d: usize, edges: &[(usize, usize)], from: usize, to: usize) -> Vec<usize> {
    let adj = adjacency(d, edges);
    let mut parent = vec![usize::MAX; d];
    let mut queue = std::collections::VecDeque::from([from]);
    parent[from] = from;
    while let Some(n) = queue.pop_front() {
        if n == to {
            break;
        }
        for &m in &adj[n] {
            if parent[m] == usize::MAX {
                parent[m] = n;
                queue.push_back(m);
            }
        }
    }
    let mut path = vec![to];
    let mut cur = to;
    while cur != from {
        cur = parent[cur];
        path.push(cur);
    }
    path.reverse();
    path
}

pub(crate) fn adjacency(d: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); d];
    for &(u, v) in edges {
        adj[u].push(v);
        adj[v].push(u);
    }
    for a in &mut adj {
        a.sort_unstable();
    }
    adj
}

/// Union-find with path halving and union by size.
#[derive(Debug)]
struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// False when `a` and `b` were already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}
