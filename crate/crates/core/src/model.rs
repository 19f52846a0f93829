//! Tree-structured Markov random field fitted to noisy marginals.
//!
//! Fitting is pure post-processing: [`fit`] sees only [`NoisyMeasurement`]s,
//! the selection plan and the public domains, never the database.
//!
//! The fit runs in three steps:
//!
//! 1. every noisy table is clamped at zero and normalized (an all-zero table
//!    becomes uniform);
//! 2. each attribute's distribution is the inverse-variance weighted average
//!    of its own 1-way estimate and the projections of its incident edges. A
//!    projection sums `k` noisy cells per entry, `k` being the other endpoint's
//!    cardinality, so its weight is `1 / (k σ_e²)`;
//! 3. each edge table is calibrated to its two pooled node distributions by
//!    iterative proportional fitting.
//!
//! The implied joint is `P(x) = Π_{(u,v)} P(x_u, x_v) / Π_v P(x_v)^{deg(v) - 1}`,
//! sampled ancestrally from root 0 in breadth-first order.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{AttributeDomain, EncodedDatabase};
use crate::error::{Error, Result};
use crate::marginal::{total_variation, Marginal};
use crate::privacy::NoisyMeasurement;
use crate::rng::StreamRng;
use crate::select::{adjacency, tree_path, SelectionPlan};

/// IPF stops once both edge projections are within this total variation.
pub const IPF_TOLERANCE: f64 = 1e-9;
pub const IPF_MAX_SWEEPS: usize = 1000;

const MODEL_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TreeModel {
    domains: Vec<AttributeDomain>,
    edges: Vec<(usize, usize)>,
    node_dist: Vec<Vec<f64>>,
    /// Row-major `card(u) × card(v)` joint for each edge `(u, v)`, `u < v`.
    edge_dist: Vec<Vec<f64>>,
    root: usize,
    sampling_order: Vec<usize>,
    /// For each non-root node, the index of the edge to its parent.
    parent_edge: Vec<Option<usize>>,
    /// Default number of rows to sample.
    pub rows: usize,
}

impl TreeModel {
    pub fn domains(&self) -> &[AttributeDomain] {
        &self.domains
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_dist(&self, attribute: usize) -> &[f64] {
        &self.node_dist[attribute]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn sampling_order(&self) -> &[usize] {
        &self.sampling_order
    }

    fn card(&self, a: usize) -> usize {
        self.domains[a].cardinality()
    }

    /// Joint table of the edge between `a` and `b`, rows indexed by `a`.
    pub fn edge_table(&self, a: usize, b: usize) -> Option<Vec<f64>> {
        let (u, v) = (a.min(b), a.max(b));
        let e = self.edges.iter().position(|&x| x == (u, v))?;
        let t = &self.edge_dist[e];
        if a == u {
            return Some(t.clone());
        }
        let (nu, nv) = (self.card(u), self.card(v));
        let mut out = vec![0.0; nu * nv];
        for x in 0..nu {
            for y in 0..nv {
                out[y * nu + x] = t[x * nv + y];
            }
        }
        Some(out)
    }

    /// Largest total variation between an edge projection and the node
    /// distribution it should match.
    pub fn calibration_error(&self) -> f64 {
        self.edges
            .iter()
            .zip(&self.edge_dist)
            .map(|(&(u, v), t)| {
                let (ru, rv) = margins(t, self.card(u), self.card(v));
                total_variation(&ru, &self.node_dist[u]).max(total_variation(&rv, &self.node_dist[v]))
            })
            .fold(0.0, f64::max)
    }

    /// Probability of a full row under the tree factorization.
    pub fn joint_probability(&self, row: &[u32]) -> f64 {
        let mut p = 1.0;
        let mut degree = vec![0usize; self.domains.len()];
        for (&(u, v), t) in self.edges.iter().zip(&self.edge_dist) {
            p *= t[row[u] as usize * self.card(v) + row[v] as usize];
            degree[u] += 1;
            degree[v] += 1;
        }
        for (a, &deg) in degree.iter().enumerate() {
            if deg > 1 {
                let q = self.node_dist[a][row[a] as usize];
                if q == 0.0 {
                    return 0.0;
                }
                p /= q.powi(deg as i32 - 1);
            }
        }
        p
    }

    /// Exact 1- or 2-way marginal of the fitted distribution.
    pub fn model_marginal(&self, clique: &[usize]) -> Result<Marginal> {
        let d = self.domains.len();
        match *clique {
            [a] if a < d => Marginal::new(vec![a], vec![self.card(a)], self.node_dist[a].clone(), true),
            [a, b] if a < d && b < d && a != b => {
                let path = tree_path(d, &self.edges, a, b);
                let mut joint = self.edge_table(path[0], path[1]).expect("path edge");
                for w in path[1..].windows(2) {
                    joint = self.extend(&joint, self.card(a), w[0], w[1]);
                }
                Marginal::new(vec![a, b], vec![self.card(a), self.card(b)], joint, true)
            }
            _ => Err(Error::BadClique(format!(
                "model marginals need 1 or 2 distinct attributes below {d}, got {clique:?}"
            ))),
        }
    }

    /// `P(a, next) = Σ_x P(a, x) P(next | x)` for tree neighbours `x`, `next`.
    fn extend(&self, joint: &[f64], na: usize, x: usize, next: usize) -> Vec<f64> {
        let (nx, nn) = (self.card(x), self.card(next));
        let pair = self.edge_table(x, next).expect("tree edge");
        let mut out = vec![0.0; na * nn];
        for i in 0..na {
            for xv in 0..nx {
                let px = self.node_dist[x][xv];
                let pj = joint[i * nx + xv];
                if px == 0.0 || pj == 0.0 {
                    continue;
                }
                for y in 0..nn {
                    out[i * nn + y] += pj * pair[xv * nn + y] / px;
                }
            }
        }
        out
    }

    /// Ancestral sampling of `n_rows` i.i.d. rows.
    pub fn sample(&self, n_rows: usize, rng: &mut StreamRng) -> Result<EncodedDatabase> {
        if n_rows == 0 {
            return Err(Error::Config("cannot sample zero rows".into()));
        }
        let d = self.domains.len();
        let root_cdf = cdf(&self.node_dist[self.root]);
        // conditional[v][x_parent] = cdf of P(v | parent = x_parent)
        let mut parent = vec![usize::MAX; d];
        let mut conditional: Vec<Vec<Vec<f64>>> = vec![Vec::new(); d];
        for &v in &self.sampling_order {
            let Some(e) = self.parent_edge[v] else { continue };
            let (a, b) = self.edges[e];
            let u = if a == v { b } else { a };
            parent[v] = u;
            let t = self.edge_table(u, v).expect("parent edge");
            let nv = self.card(v);
            conditional[v] = (0..self.card(u))
                .map(|x| {
                    let row = &t[x * nv..(x + 1) * nv];
                    let mass: f64 = row.iter().sum();
                    if mass > 0.0 {
                        cdf(&row.iter().map(|p| p / mass).collect::<Vec<_>>())
                    } else {
                        cdf(&self.node_dist[v])
                    }
                })
                .collect();
        }
        let mut codes = vec![0u32; n_rows * d];
        for r in 0..n_rows {
            let row = &mut codes[r * d..(r + 1) * d];
            for &v in &self.sampling_order {
                let table = if v == self.root {
                    &root_cdf
                } else {
                    &conditional[v][row[parent[v]] as usize]
                };
                row[v] = draw(table, rng.uniform());
            }
        }
        EncodedDatabase::new(self.domains.clone(), codes)
    }

    pub fn to_json(&self) -> ModelJson {
        let names: Vec<&str> = self.domains.iter().map(AttributeDomain::name).collect();
        ModelJson {
            format: MODEL_FORMAT,
            domains: self.domains.clone(),
            rows: self.rows,
            root: names[self.root].to_string(),
            node_dist: self.node_dist.clone(),
            edges: self
                .edges
                .iter()
                .zip(&self.edge_dist)
                .map(|(&(u, v), t)| EdgeJson {
                    edge: [names[u].to_string(), names[v].to_string()],
                    table: t.clone(),
                })
                .collect(),
        }
    }

    pub fn from_json(json: ModelJson) -> Result<Self> {
        if json.format != MODEL_FORMAT {
            return Err(Error::Parse(format!("unsupported model format {}", json.format)));
        }
        let names: Vec<&str> = json.domains.iter().map(AttributeDomain::name).collect();
        let index = |n: &str| {
            names
                .iter()
                .position(|x| *x == n)
                .ok_or_else(|| Error::Parse(format!("model references unknown attribute {n:?}")))
        };
        let mut edges = Vec::new();
        let mut edge_dist = Vec::new();
        for e in &json.edges {
            let (a, b) = (index(&e.edge[0])?, index(&e.edge[1])?);
            if a >= b {
                return Err(Error::Parse(format!("edge {:?} is not in attribute order", e.edge)));
            }
            edges.push((a, b));
            edge_dist.push(e.table.clone());
        }
        let plan = SelectionPlan {
            attribute_count: names.len(),
            tree_edges: edges.clone(),
            edge_weights: vec![0.0; edges.len()],
            forced_edge: None,
        };
        plan.validate().map_err(|e| Error::Parse(format!("model tree: {e}")))?;
        if index(&json.root)? != 0 {
            return Err(Error::Parse("model root must be the first attribute".into()));
        }
        let model = assemble(json.domains, edges, json.node_dist, edge_dist, json.rows)?;
        model.check_tables()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(serde_json::from_str(&text)?)
    }

    fn check_tables(&self) -> Result<()> {
        const TOL: f64 = 1e-9;
        let valid = |t: &[f64]| {
            t.iter().all(|&p| p >= 0.0 && p.is_finite()) && (t.iter().sum::<f64>() - 1.0).abs() <= TOL
        };
        for (a, t) in self.node_dist.iter().enumerate() {
            if t.len() != self.card(a) || !valid(t) {
                return Err(Error::Parse(format!("node table of {} is invalid", self.domains[a].name())));
            }
        }
        for (&(u, v), t) in self.edges.iter().zip(&self.edge_dist) {
            if t.len() != self.card(u) * self.card(v) || !valid(t) {
                return Err(Error::Parse(format!("edge table ({u}, {v}) is invalid")));
            }
        }
        if self.calibration_error() > 1e-6 {
            return Err(Error::Parse("edge tables disagree with node tables".into()));
        }
        Ok(())
    }
}

/// Serialized model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelJson {
    pub format: u32,
    pub domains: Vec<AttributeDomain>,
    pub rows: usize,
    pub root: String,
    pub node_dist: Vec<Vec<f64>>,
    pub edges: Vec<EdgeJson>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeJson {
    pub edge: [String; 2],
    pub table: Vec<f64>,
}

fn assemble(
    domains: Vec<AttributeDomain>,
    edges: Vec<(usize, usize)>,
    node_dist: Vec<Vec<f64>>,
    edge_dist: Vec<Vec<f64>>,
    rows: usize,
) -> Result<TreeModel> {
    let d = domains.len();
    if node_dist.len() != d || edge_dist.len() != edges.len() {
        return Err(Error::ShapeMismatch("model tables do not match the tree".into()));
    }
    let root = 0;
    let adj = adjacency(d, &edges);
    let mut parent_edge = vec![None; d];
    let mut seen = vec![false; d];
    let mut order = Vec::with_capacity(d);
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    while let Some(n) = queue.pop_front() {
        order.push(n);
        for &m in &adj[n] {
            if !seen[m] {
                seen[m] = true;
                let key = (n.min(m), n.max(m));
                parent_edge[m] = edges.iter().position(|&e| e == key);
                queue.push_back(m);
            }
        }
    }
    Ok(TreeModel {
        domains,
        edges,
        node_dist,
        edge_dist,
        root,
        sampling_order: order,
        parent_edge,
        rows,
    })
}

/// Negative cells to zero, then normalize; no mass left means uniform.
pub fn clamp_normalize(table: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = table.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    let total: f64 = clamped.iter().sum();
    if total > 0.0 {
        clamped.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / table.len() as f64; table.len()]
    }
}

fn margins(t: &[f64], nu: usize, nv: usize) -> (Vec<f64>, Vec<f64>) {
    let mut ru = vec![0.0; nu];
    let mut rv = vec![0.0; nv];
    for x in 0..nu {
        for y in 0..nv {
            let p = t[x * nv + y];
            ru[x] += p;
            rv[y] += p;
        }
    }
    (ru, rv)
}

/// Inverse-variance pooled estimate; exact (σ = 0) estimates take precedence.
fn pool(estimates: &[(Vec<f64>, f64)]) -> Vec<f64> {
    let exact: Vec<&Vec<f64>> = estimates
        .iter()
        .filter(|(_, var)| *var == 0.0)
        .map(|(d, _)| d)
        .collect();
    let n = estimates[0].0.len();
    let mut out = vec![0.0; n];
    if !exact.is_empty() {
        for d in &exact {
            for (o, v) in out.iter_mut().zip(d.iter()) {
                *o += v / exact.len() as f64;
            }
        }
        return out;
    }
    let total_weight: f64 = estimates.iter().map(|(_, var)| 1.0 / var).sum();
    for (d, var) in estimates {
        let w = 1.0 / var / total_weight;
        for (o, v) in out.iter_mut().zip(d) {
            *o += w * v;
        }
    }
    out
}

/// Scale `t` so its row sums equal `rows` and its column sums equal `cols`.
fn ipf(t: &mut [f64], rows: &[f64], cols: &[f64]) -> std::result::Result<usize, f64> {
    let (nu, nv) = (rows.len(), cols.len());
    // a row or column with no mass cannot be scaled; reseed it with the product
    // of the targets
    for x in 0..nu {
        if rows[x] > 0.0 && t[x * nv..(x + 1) * nv].iter().sum::<f64>() <= 0.0 {
            for y in 0..nv {
                t[x * nv + y] = rows[x] * cols[y];
            }
        }
    }
    for y in 0..nv {
        if cols[y] > 0.0 && (0..nu).map(|x| t[x * nv + y]).sum::<f64>() <= 0.0 {
            for x in 0..nu {
                t[x * nv + y] = rows[x] * cols[y];
            }
        }
    }
    let mut residual = f64::INFINITY;
    for sweep in 0..=IPF_MAX_SWEEPS {
        let (ru, rv) = margins(t, nu, nv);
        residual = total_variation(&ru, rows).max(total_variation(&rv, cols));
        if residual <= IPF_TOLERANCE {
            return Ok(sweep);
        }
        if sweep == IPF_MAX_SWEEPS {
            break;
        }
        for x in 0..nu {
            let scale = if ru[x] > 0.0 { rows[x] / ru[x] } else { 0.0 };
            t[x * nv..(x + 1) * nv].iter_mut().for_each(|p| *p *= scale);
        }
        let (_, rv) = margins(t, nu, nv);
        for y in 0..nv {
            let scale = if rv[y] > 0.0 { cols[y] / rv[y] } else { 0.0 };
            for x in 0..nu {
                t[x * nv + y] *= scale;
            }
        }
    }
    Err(residual)
}

/// Blend weights tried, in order, when plain IPF cannot reach the margins.
pub const SMOOTHING_STEPS: [f64; 4] = [1e-6, 1e-3, 1e-1, 1.0];

/// IPF on `table`; if its zero pattern makes the margins unreachable, retry
/// on `(1 − λ)·table + λ·(rows ⊗ cols)` for each λ in [`SMOOTHING_STEPS`].
fn calibrate(table: &[f64], rows: &[f64], cols: &[f64]) -> std::result::Result<Vec<f64>, f64> {
    let mut t = table.to_vec();
    let mut residual = match ipf(&mut t, rows, cols) {
        Ok(_) => return Ok(t),
        Err(r) => r,
    };
    let nv = cols.len();
    for lambda in SMOOTHING_STEPS {
        let mut t: Vec<f64> = table
            .iter()
            .enumerate()
            .map(|(i, &p)| (1.0 - lambda) * p + lambda * rows[i / nv] * cols[i % nv])
            .collect();
        match ipf(&mut t, rows, cols) {
            Ok(_) => return Ok(t),
            Err(r) => residual = r,
        }
    }
    Err(residual)
}

/// Fit a calibrated tree model to noisy measurements.
pub fn fit(
    measurements: &[NoisyMeasurement],
    plan: &SelectionPlan,
    domains: &[AttributeDomain],
) -> Result<TreeModel> {
    let d = domains.len();
    if plan.attribute_count != d {
        return Err(Error::ShapeMismatch(format!(
            "plan over {} attributes, schema has {d}",
            plan.attribute_count
        )));
    }
    plan.validate()?;
    let cards: Vec<usize> = domains.iter().map(AttributeDomain::cardinality).collect();
    let find = |clique: &[usize]| {
        measurements
            .iter()
            .find(|m| m.clique() == clique)
            .ok_or_else(|| Error::MissingMeasurement(format!("{clique:?}")))
    };
    for m in measurements {
        let expected: Vec<usize> = m.clique().iter().map(|&a| cards.get(a).copied().unwrap_or(0)).collect();
        if m.marginal.shape != expected {
            return Err(Error::ShapeMismatch(format!(
                "measurement {:?} has shape {:?}, schema implies {expected:?}",
                m.clique(),
                m.marginal.shape
            )));
        }
    }

    let one_way: Vec<&NoisyMeasurement> = (0..d).map(|a| find(&[a])).collect::<Result<_>>()?;
    let edge_meas: Vec<&NoisyMeasurement> = plan
        .tree_edges
        .iter()
        .map(|&(u, v)| find(&[u, v]))
        .collect::<Result<_>>()?;

    let edge_clean: Vec<Vec<f64>> = edge_meas.iter().map(|m| clamp_normalize(&m.marginal.table)).collect();

    let mut node_dist = Vec::with_capacity(d);
    for a in 0..d {
        let m = one_way[a];
        let mut estimates = vec![(clamp_normalize(&m.marginal.table), m.sigma * m.sigma)];
        for (e, &(u, v)) in plan.tree_edges.iter().enumerate() {
            if a != u && a != v {
                continue;
            }
            let (ru, rv) = margins(&edge_clean[e], cards[u], cards[v]);
            let other = if a == u { cards[v] } else { cards[u] };
            let sigma = edge_meas[e].sigma;
            estimates.push((if a == u { ru } else { rv }, other as f64 * sigma * sigma));
        }
        node_dist.push(pool(&estimates));
    }

    let mut edge_dist = Vec::with_capacity(edge_clean.len());
    for (table, &(u, v)) in edge_clean.iter().zip(&plan.tree_edges) {
        let t = calibrate(table, &node_dist[u], &node_dist[v]).map_err(|residual| {
            Error::CalibrationDivergence {
                edge: format!("({}, {})", domains[u].name(), domains[v].name()),
                residual,
                sweeps: IPF_MAX_SWEEPS,
            }
        })?;
        edge_dist.push(t);
    }

    let rows = estimate_rows(&one_way);
    assemble(domains.to_vec(), plan.tree_edges.clone(), node_dist, edge_dist, rows)
}

/// Row count implied by the noisy 1-way totals, pooled by inverse variance.
fn estimate_rows(one_way: &[&NoisyMeasurement]) -> usize {
    let exact: Vec<f64> = one_way
        .iter()
        .filter(|m| m.sigma == 0.0)
        .map(|m| m.marginal.total())
        .collect();
    let n = if let Some(&t) = exact.first() {
        t
    } else {
        let (num, den) = one_way.iter().fold((0.0, 0.0), |(num, den), m| {
            let var = m.sigma * m.sigma * m.marginal.table.len() as f64;
            (num + m.marginal.total() / var, den + 1.0 / var)
        });
        num / den
    };
    n.round().max(1.0) as usize
}

fn cdf(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = p
        .iter()
        .map(|&x| {
            acc += x;
            acc
        })
        .collect();
    // pin the last reachable level to 1 so rounding never selects a
    // zero-probability tail
    if let Some(last) = p.iter().rposition(|&x| x > 0.0) {
        out[last..].iter_mut().for_each(|c| *c = 1.0);
    }
    out
}

fn draw(cdf: &[f64], u: f64) -> u32 {
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1) as u32
}
