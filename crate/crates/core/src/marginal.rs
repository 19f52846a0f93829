//! Marginal count tables.
//!
//! A marginal over clique `C = (c_0, .., c_{k-1})` is a flat table of length
//! `Π |σ(c_i)|`, laid out row-major with the first clique attribute varying
//! slowest: the cell for `(t_0, .., t_{k-1})` sits at
//! `((t_0 * n_1 + t_1) * n_2 + t_2) ...`.

use serde::{Deserialize, Serialize};

use crate::dataset::EncodedDatabase;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Marginal {
    pub clique: Vec<usize>,
    pub shape: Vec<usize>,
    pub table: Vec<f64>,
    pub normalized: bool,
}

impl Marginal {
    pub fn new(clique: Vec<usize>, shape: Vec<usize>, table: Vec<f64>, normalized: bool) -> Result<Self> {
        if clique.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "clique of {} attributes with shape of {}",
                clique.len(),
                shape.len()
            )));
        }
        let cells: usize = shape.iter().product();
        if cells != table.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {cells} cells, table has {}",
                table.len()
            )));
        }
        Ok(Self {
            clique,
            shape,
            table,
            normalized,
        })
    }

    pub fn total(&self) -> f64 {
        self.table.iter().sum()
    }

    /// Scale to a probability table. Mass must be positive.
    pub fn normalize(&self) -> Result<Marginal> {
        let total = self.total();
        if !(total > 0.0) {
            return Err(Error::NotNormalized(total));
        }
        Ok(Marginal {
            table: self.table.iter().map(|v| v / total).collect(),
            normalized: true,
            ..self.clone()
        })
    }

    /// Flat offset of a cell given per-attribute codes in clique order.
    pub fn offset(&self, cell: &[u32]) -> usize {
        cell.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&t, &n)| acc * n + t as usize)
    }

    /// Inverse of [`Marginal::offset`].
    pub fn cell(&self, mut offset: usize) -> Vec<u32> {
        let mut out = vec![0u32; self.shape.len()];
        for (slot, &n) in out.iter_mut().zip(&self.shape).rev() {
            *slot = (offset % n) as u32;
            offset /= n;
        }
        out
    }

    pub fn to_json(&self, names: &[&str]) -> MarginalJson {
        MarginalJson {
            clique: self.clique.iter().map(|&a| names[a].to_string()).collect(),
            shape: self.shape.clone(),
            table: self.table.clone(),
        }
    }
}

/// Debug/golden-file form of a marginal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalJson {
    pub clique: Vec<String>,
    pub shape: Vec<usize>,
    pub table: Vec<f64>,
}

fn check_clique(clique: &[usize], width: usize) -> Result<()> {
    if clique.is_empty() {
        return Err(Error::BadClique("empty clique".into()));
    }
    for (i, &a) in clique.iter().enumerate() {
        if a >= width {
            return Err(Error::BadClique(format!("attribute index {a} out of range")));
        }
        if clique[..i].contains(&a) {
            return Err(Error::BadClique(format!("attribute index {a} repeated")));
        }
    }
    Ok(())
}

/// `μ_D(t) = Σ_x δ(t, x_C)`.
pub fn count_marginal(db: &EncodedDatabase, clique: &[usize]) -> Result<Marginal> {
    check_clique(clique, db.attribute_count())?;
    let cards = db.cardinalities();
    let shape: Vec<usize> = clique.iter().map(|&a| cards[a]).collect();
    let mut table = vec![0.0; shape.iter().product()];
    for row in db.rows() {
        let idx = clique
            .iter()
            .zip(&shape)
            .fold(0, |acc, (&a, &n)| acc * n + row[a] as usize);
        table[idx] += 1.0;
    }
    Marginal::new(clique.to_vec(), shape, table, false)
}

/// Sum out every attribute not in `sub_clique`. The result follows the order
/// of `sub_clique`.
pub fn project(m: &Marginal, sub_clique: &[usize]) -> Result<Marginal> {
    if sub_clique.is_empty() {
        return Err(Error::BadClique("empty sub-clique".into()));
    }
    let positions: Vec<usize> = sub_clique
        .iter()
        .map(|a| {
            m.clique
                .iter()
                .position(|c| c == a)
                .ok_or_else(|| Error::BadClique(format!("attribute {a} not in clique {:?}", m.clique)))
        })
        .collect::<Result<_>>()?;
    for (i, p) in positions.iter().enumerate() {
        if positions[..i].contains(p) {
            return Err(Error::BadClique("repeated attribute in sub-clique".into()));
        }
    }
    let shape: Vec<usize> = positions.iter().map(|&p| m.shape[p]).collect();
    let mut table = vec![0.0; shape.iter().product()];
    for (off, &v) in m.table.iter().enumerate() {
        let cell = m.cell(off);
        let idx = positions
            .iter()
            .zip(&shape)
            .fold(0, |acc, (&p, &n)| acc * n + cell[p] as usize);
        table[idx] += v;
    }
    Marginal::new(sub_clique.to_vec(), shape, table, m.normalized)
}

/// `Σ |a - b|` over matching cells.
pub fn l1_error(a: &Marginal, b: &Marginal) -> Result<f64> {
    if a.clique != b.clique || a.shape != b.shape {
        return Err(Error::ShapeMismatch(format!(
            "clique {:?}/{:?} vs {:?}/{:?}",
            a.clique, a.shape, b.clique, b.shape
        )));
    }
    Ok(a.table.iter().zip(&b.table).map(|(x, y)| (x - y).abs()).sum())
}

/// Total-variation distance between two tables of equal length.
pub(crate) fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
