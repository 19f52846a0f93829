//! Sources of `Ŷ`: a built-in one-hot logistic regression, or predictions
//! produced elsewhere and loaded from CSV.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::EncodedDatabase;
use crate::error::{Error, Result};
use crate::fairness::{PredicateSpec, PredictionVector};

/// Anything that can label the rows of a database.
pub trait Predictor: Send + Sync {
    fn predict(&self, db: &EncodedDatabase) -> Result<PredictionVector>;
}

/// Predicts the same label for every row.
#[derive(Clone, Copy, Debug)]
pub struct ConstantPredictor(pub bool);

impl Predictor for ConstantPredictor {
    fn predict(&self, db: &EncodedDatabase) -> Result<PredictionVector> {
        Ok(PredictionVector::new(vec![self.0; db.row_count()]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub step: f64,
    pub threshold: f64,
    /// Attributes left out of the features besides the target.
    pub exclude: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            step: 0.1,
            threshold: 0.5,
            exclude: Vec::new(),
        }
    }
}

/// One one-hot block of the feature vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureBlock {
    pub attribute: String,
    pub cardinality: usize,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub layout: Vec<FeatureBlock>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub threshold: f64,
}

impl LogisticModel {
    pub fn zeros(db: &EncodedDatabase, target: &PredicateSpec, config: &TrainConfig) -> Result<Self> {
        let mut layout = Vec::new();
        let mut offset = 0;
        for d in db.domains() {
            if d.name() == target.attribute || config.exclude.iter().any(|e| e == d.name()) {
                continue;
            }
            layout.push(FeatureBlock {
                attribute: d.name().to_string(),
                cardinality: d.cardinality(),
                offset,
            });
            offset += d.cardinality();
        }
        if !(config.threshold > 0.0 && config.threshold.is_finite()) {
            return Err(Error::Config(format!("threshold {} must be positive", config.threshold)));
        }
        Ok(Self {
            layout,
            weights: vec![0.0; offset],
            bias: 0.0,
            threshold: config.threshold,
        })
    }

    /// Database column feeding each feature block.
    fn columns(&self, db: &EncodedDatabase) -> Result<Vec<usize>> {
        self.layout
            .iter()
            .map(|b| {
                let a = db
                    .attribute_index(&b.attribute)
                    .ok_or_else(|| Error::SchemaMismatch(format!("attribute {:?} missing", b.attribute)))?;
                let card = db.domains()[a].cardinality();
                if card != b.cardinality {
                    return Err(Error::SchemaMismatch(format!(
                        "attribute {:?} has {card} levels, model expects {}",
                        b.attribute, b.cardinality
                    )));
                }
                Ok(a)
            })
            .collect()
    }

    fn logit(&self, row: &[u32], columns: &[usize]) -> f64 {
        self.bias
            + self
                .layout
                .iter()
                .zip(columns)
                .map(|(b, &a)| self.weights[b.offset + row[a] as usize])
                .sum::<f64>()
    }

    pub fn probabilities(&self, db: &EncodedDatabase) -> Result<Vec<f64>> {
        let columns = self.columns(db)?;
        Ok(db.rows().map(|r| sigmoid(self.logit(r, &columns))).collect())
    }

    /// Mean logistic loss and its gradient `(∂/∂w, ∂/∂b)`.
    pub fn loss_and_gradient(&self, db: &EncodedDatabase, labels: &[bool]) -> Result<(f64, Vec<f64>, f64)> {
        if labels.len() != db.row_count() {
            return Err(Error::LengthMismatch {
                expected: db.row_count(),
                actual: labels.len(),
            });
        }
        let columns = self.columns(db)?;
        let n = db.row_count().max(1) as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.weights.len()];
        let mut grad_b = 0.0;
        for (row, &y) in db.rows().zip(labels) {
            let z = self.logit(row, &columns);
            let yv = if y { 1.0 } else { 0.0 };
            loss += softplus(z) - yv * z;
            let r = sigmoid(z) - yv;
            grad_b += r;
            for (b, &a) in self.layout.iter().zip(&columns) {
                grad[b.offset + row[a] as usize] += r;
            }
        }
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((loss / n, grad, grad_b / n))
    }

    pub fn loss(&self, db: &EncodedDatabase, labels: &[bool]) -> Result<f64> {
        self.loss_and_gradient(db, labels).map(|(l, _, _)| l)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

impl Predictor for LogisticModel {
    fn predict(&self, db: &EncodedDatabase) -> Result<PredictionVector> {
        predict(self, db)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Full-batch gradient descent from zero weights with a fixed step.
pub fn train(db: &EncodedDatabase, target: &PredicateSpec, config: &TrainConfig) -> Result<LogisticModel> {
    let labels = target.compile(db.domains())?.apply(db);
    let positives = labels.iter().filter(|&&y| y).count();
    if db.row_count() == 0 || positives == 0 || positives == labels.len() {
        return Err(Error::DegenerateTarget);
    }
    let mut model = LogisticModel::zeros(db, target, config)?;
    for _ in 0..config.iterations {
        let (_, grad, grad_b) = model.loss_and_gradient(db, &labels)?;
        for (w, g) in model.weights.iter_mut().zip(&grad) {
            *w -= config.step * g;
        }
        model.bias -= config.step * grad_b;
    }
    Ok(model)
}

/// `sigmoid(w·x + b) ≥ threshold` per row.
pub fn predict(model: &LogisticModel, db: &EncodedDatabase) -> Result<PredictionVector> {
    Ok(PredictionVector::new(
        model
            .probabilities(db)?
            .into_iter()
            .map(|p| p >= model.threshold)
            .collect(),
    ))
}

/// Read a `prediction` column of `0`/`1`/`true`/`false` tokens.
pub fn parse_predictions<R: Read>(input: R, expected_rows: usize) -> Result<PredictionVector> {
    let mut reader = csv::Reader::from_reader(input);
    let col = reader
        .headers()?
        .iter()
        .position(|h| h.trim() == "prediction")
        .ok_or_else(|| Error::Parse("predictions file has no `prediction` column".into()))?;
    let mut values = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let tok = rec.get(col).unwrap_or("").trim();
        let v = match tok.to_ascii_lowercase().as_str() {
            "1" | "true" => true,
            "0" | "false" => false,
            _ => return Err(Error::Parse(format!("prediction row {}: bad token {tok:?}", i + 1))),
        };
        values.push(v);
    }
    if values.len() != expected_rows {
        return Err(Error::LengthMismatch {
            expected: expected_rows,
            actual: values.len(),
        });
    }
    Ok(PredictionVector::new(values))
}

pub fn load_predictions(path: impl AsRef<Path>, db: &EncodedDatabase) -> Result<PredictionVector> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(std::io::BufReader::new(file), db.row_count())
}

pub fn write_predictions<W: std::io::Write>(preds: &PredictionVector, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["prediction"])?;
    for &v in &preds.values {
        w.write_record([if v { "1" } else { "0" }])?;
    }
    w.flush().map_err(|e| Error::io("<predictions>", e))?;
    Ok(())
}
