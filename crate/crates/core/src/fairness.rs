//! Group-fairness measures over a binary protected group `S`, ground truth
//! `Y` and prediction `Ŷ`.
//!
//! Every measure is the absolute difference of one conditional probability
//! between the protected group (`S` true) and everyone else. A measure whose
//! conditioning event is empty in either group is undefined.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{AttributeDomain, EncodedDatabase};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Measure {
    DemographicParity,
    OverallAccuracyEquality,
    EqualizedOddsFalsePositive,
    EqualizedOddsTruePositive,
    ConditionalUseAccuracyEqualityTruePositive,
    ConditionalUseAccuracyEqualityTrueNegative,
}

impl Measure {
    /// Report order.
    pub const ALL: [Measure; 6] = [
        Measure::DemographicParity,
        Measure::OverallAccuracyEquality,
        Measure::EqualizedOddsFalsePositive,
        Measure::EqualizedOddsTruePositive,
        Measure::ConditionalUseAccuracyEqualityTruePositive,
        Measure::ConditionalUseAccuracyEqualityTrueNegative,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Measure::DemographicParity => "Demographic Parity",
            Measure::OverallAccuracyEquality => "Overall Accuracy Equality",
            Measure::EqualizedOddsFalsePositive => "Equalized Odds (False Positive)",
            Measure::EqualizedOddsTruePositive => "Equalized Odds (True Positive)",
            Measure::ConditionalUseAccuracyEqualityTruePositive => {
                "Conditional Use Accuracy Equality (True Positive)"
            }
            Measure::ConditionalUseAccuracyEqualityTrueNegative => {
                "Conditional Use Accuracy Equality (True Negative)"
            }
        }
    }

    pub fn from_name(name: &str) -> Option<Measure> {
        Measure::ALL.into_iter().find(|m| m.name() == name)
    }

    pub fn category(self) -> Category {
        category_of(self)
    }

    pub fn index(self) -> usize {
        Measure::ALL.iter().position(|&m| m == self).expect("listed")
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Conditional-independence family a measure relaxes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    /// `S ⊥ Ŷ`
    Independence,
    /// `S ⊥ Ŷ | Y`
    Separation,
    /// `S ⊥ Y | Ŷ`
    Sufficiency,
    #[serde(rename = "n/a")]
    NotApplicable,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Independence,
        Category::Separation,
        Category::Sufficiency,
        Category::NotApplicable,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Independence => "independence",
            Category::Separation => "separation",
            Category::Sufficiency => "sufficiency",
            Category::NotApplicable => "n/a",
        }
    }
}

pub fn category_of(measure: Measure) -> Category {
    match measure {
        Measure::DemographicParity => Category::Independence,
        Measure::EqualizedOddsFalsePositive | Measure::EqualizedOddsTruePositive => Category::Separation,
        Measure::ConditionalUseAccuracyEqualityTruePositive
        | Measure::ConditionalUseAccuracyEqualityTrueNegative => Category::Sufficiency,
        Measure::OverallAccuracyEquality => Category::NotApplicable,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredicateOp {
    Eq,
    Neq,
    InSet,
    Lt,
    Ge,
}

/// A level label, or a raw code (bin index) when given as an integer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PredicateValue {
    Index(u32),
    Label(String),
}

/// Boolean test on one attribute of an encoded row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredicateSpec {
    pub attribute: String,
    pub op: PredicateOp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<PredicateValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<PredicateValue>>,
}

impl PredicateSpec {
    pub fn eq(attribute: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            attribute: attribute.into(),
            op: PredicateOp::Eq,
            value: Some(PredicateValue::Label(value.into())),
            values: None,
        }
    }

    pub fn compile(&self, domains: &[AttributeDomain]) -> Result<CompiledPredicate> {
        let attribute = domains
            .iter()
            .position(|d| d.name() == self.attribute)
            .ok_or_else(|| Error::BadPredicate(format!("unknown attribute {:?}", self.attribute)))?;
        let domain = &domains[attribute];
        let card = domain.cardinality();
        let resolve = |v: &PredicateValue| -> Result<usize> {
            match v {
                PredicateValue::Index(i) if (*i as usize) < card => Ok(*i as usize),
                PredicateValue::Index(i) => Err(Error::BadPredicate(format!(
                    "code {i} outside {} (cardinality {card})",
                    domain.name()
                ))),
                PredicateValue::Label(l) => domain
                    .encode(l)
                    .map(|c| c as usize)
                    .map_err(|e| Error::BadPredicate(e.to_string())),
            }
        };
        let single = || -> Result<usize> {
            match (&self.value, &self.values) {
                (Some(v), None) => resolve(v),
                _ => Err(Error::BadPredicate(format!(
                    "{:?} on {} takes exactly one `value`",
                    self.op, self.attribute
                ))),
            }
        };
        let mut accepted = vec![false; card];
        match self.op {
            PredicateOp::Eq => accepted[single()?] = true,
            PredicateOp::Neq => {
                accepted.fill(true);
                accepted[single()?] = false;
            }
            PredicateOp::Lt => accepted[..single()?].fill(true),
            PredicateOp::Ge => accepted[single()?..].fill(true),
            PredicateOp::InSet => {
                let vs = match (&self.value, &self.values) {
                    (None, Some(vs)) if !vs.is_empty() => vs,
                    _ => {
                        return Err(Error::BadPredicate(format!(
                            "in_set on {} takes a non-empty `values` list",
                            self.attribute
                        )))
                    }
                };
                for v in vs {
                    accepted[resolve(v)?] = true;
                }
            }
        }
        Ok(CompiledPredicate { attribute, accepted })
    }
}

/// A predicate resolved against a schema: the set of accepted codes.
#[derive(Clone, Debug, PartialEq)]
pub struct CompiledPredicate {
    pub attribute: usize,
    accepted: Vec<bool>,
}

impl CompiledPredicate {
    pub fn test(&self, row: &[u32]) -> bool {
        self.accepted[row[self.attribute] as usize]
    }

    pub fn apply(&self, db: &EncodedDatabase) -> Vec<bool> {
        db.rows().map(|r| self.test(r)).collect()
    }
}

/// One prediction per database row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionVector {
    pub values: Vec<bool>,
}

impl PredictionVector {
    pub fn new(values: Vec<bool>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Counts over `(S, Y, Ŷ)`, indexed `s·4 + y·2 + ŷ` with true = 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contingency(pub [u64; 8]);

impl Contingency {
    pub fn from_flags(s: &[bool], y: &[bool], y_hat: &[bool]) -> Self {
        let mut c = [0u64; 8];
        for ((&s, &y), &p) in s.iter().zip(y).zip(y_hat) {
            c[usize::from(s) * 4 + usize::from(y) * 2 + usize::from(p)] += 1;
        }
        Contingency(c)
    }

    pub fn get(&self, s: bool, y: bool, y_hat: bool) -> u64 {
        self.0[usize::from(s) * 4 + usize::from(y) * 2 + usize::from(y_hat)]
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    /// `P[event | S = s, cond]`, or `None` if the conditioning set is empty.
    fn rate(&self, s: bool, cond: impl Fn(bool, bool) -> bool, event: impl Fn(bool, bool) -> bool) -> Option<f64> {
        let mut num = 0;
        let mut den = 0;
        for y in [false, true] {
            for p in [false, true] {
                if cond(y, p) {
                    let n = self.get(s, y, p);
                    den += n;
                    if event(y, p) {
                        num += n;
                    }
                }
            }
        }
        (den > 0).then(|| num as f64 / den as f64)
    }

    pub fn measure(&self, m: Measure) -> Option<f64> {
        let gap = |cond: &dyn Fn(bool, bool) -> bool, event: &dyn Fn(bool, bool) -> bool| {
            let a = self.rate(true, cond, event)?;
            let b = self.rate(false, cond, event)?;
            Some((a - b).abs())
        };
        match m {
            Measure::DemographicParity => gap(&|_, _| true, &|_, p| p),
            Measure::OverallAccuracyEquality => gap(&|_, _| true, &|y, p| y == p),
            Measure::EqualizedOddsFalsePositive => gap(&|y, _| !y, &|_, p| p),
            Measure::EqualizedOddsTruePositive => gap(&|y, _| y, &|_, p| p),
            Measure::ConditionalUseAccuracyEqualityTruePositive => gap(&|_, p| p, &|y, _| y),
            Measure::ConditionalUseAccuracyEqualityTrueNegative => gap(&|_, p| !p, &|y, _| !y),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FairnessReport {
    /// Indexed like [`Measure::ALL`]; `None` is undefined.
    pub values: [Option<f64>; 6],
    pub contingency: Contingency,
}

impl FairnessReport {
    pub fn from_contingency(contingency: Contingency) -> Self {
        Self {
            values: Measure::ALL.map(|m| contingency.measure(m)),
            contingency,
        }
    }

    pub fn get(&self, m: Measure) -> Option<f64> {
        self.values[m.index()]
    }

    pub fn to_json(&self) -> FairnessReportJson {
        FairnessReportJson {
            measures: Measure::ALL
                .iter()
                .map(|&m| {
                    (
                        m.name().to_string(),
                        MeasureEntry {
                            value: MeasureValue::from(self.get(m)),
                            category: m.category(),
                        },
                    )
                })
                .collect(),
            contingency: self.contingency.0,
        }
    }

    pub fn from_json(json: &FairnessReportJson) -> Result<Self> {
        let mut values = [None; 6];
        for (name, entry) in &json.measures {
            let m = Measure::from_name(name).ok_or_else(|| Error::Parse(format!("unknown measure {name:?}")))?;
            values[m.index()] = entry.value.into();
        }
        Ok(Self {
            values,
            contingency: Contingency(json.contingency),
        })
    }

    /// Two-column text table (Measure, Value).
    pub fn render(&self) -> String {
        let mut out = String::from("| Measure | Value |\n|---|---|\n");
        for m in Measure::ALL {
            out.push_str(&format!("| {} | {} |\n", m.name(), fmt_value(self.get(m))));
        }
        out
    }
}

pub(crate) fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"))
}

/// A measure value in JSON: a number or the string `"undefined"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeasureValue {
    Defined(f64),
    Undefined(UndefinedTag),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UndefinedTag {
    Undefined,
}

impl From<Option<f64>> for MeasureValue {
    fn from(v: Option<f64>) -> Self {
        v.map_or(MeasureValue::Undefined(UndefinedTag::Undefined), MeasureValue::Defined)
    }
}

impl From<MeasureValue> for Option<f64> {
    fn from(v: MeasureValue) -> Self {
        match v {
            MeasureValue::Defined(x) => Some(x),
            MeasureValue::Undefined(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureEntry {
    pub value: MeasureValue,
    pub category: Category,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessReportJson {
    pub measures: BTreeMap<String, MeasureEntry>,
    pub contingency: [u64; 8],
}

/// Evaluate all six measures on `db` with predictions `y_hat`.
pub fn evaluate(
    db: &EncodedDatabase,
    s: &PredicateSpec,
    y: &PredicateSpec,
    y_hat: &PredictionVector,
) -> Result<FairnessReport> {
    let s = s.compile(db.domains())?;
    let y = y.compile(db.domains())?;
    evaluate_compiled(db, &s, &y, y_hat)
}

pub fn evaluate_compiled(
    db: &EncodedDatabase,
    s: &CompiledPredicate,
    y: &CompiledPredicate,
    y_hat: &PredictionVector,
) -> Result<FairnessReport> {
    if y_hat.len() != db.row_count() {
        return Err(Error::LengthMismatch {
            expected: db.row_count(),
            actual: y_hat.len(),
        });
    }
    let mut c = [0u64; 8];
    for (row, &p) in db.rows().zip(&y_hat.values) {
        c[usize::from(s.test(row)) * 4 + usize::from(y.test(row)) * 2 + usize::from(p)] += 1;
    }
    Ok(FairnessReport::from_contingency(Contingency(c)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary_db(rows: &[(u32, u32)]) -> EncodedDatabase {
        let domains = vec![
            AttributeDomain::categorical("s", ["no", "yes"]).unwrap(),
            AttributeDomain::categorical("y", ["0", "1"]).unwrap(),
        ];
        let rows: Vec<Vec<u32>> = rows.iter().map(|&(s, y)| vec![s, y]).collect();
        EncodedDatabase::from_rows(domains, &rows).unwrap()
    }

    fn preds() -> (PredicateSpec, PredicateSpec) {
        (PredicateSpec::eq("s", "yes"), PredicateSpec::eq("y", "1"))
    }

    #[test]
    fn constant_true_predictor_has_zero_parity() {
        let db = binary_db(&[(0, 0), (0, 1), (1, 1), (1, 0), (1, 1)]);
        let (s, y) = preds();
        let r = evaluate(&db, &s, &y, &PredictionVector::new(vec![true; 5])).unwrap();
        assert_eq!(r.get(Measure::DemographicParity), Some(0.0));
        assert_eq!(r.get(Measure::ConditionalUseAccuracyEqualityTrueNegative), None);
    }

    #[test]
    fn perfect_predictor_is_balanced() {
        let rows = [(0, 0), (0, 1), (0, 1), (1, 1), (1, 0), (1, 0), (1, 0)];
        let db = binary_db(&rows);
        let (s, y) = preds();
        let y_hat = PredictionVector::new(rows.iter().map(|r| r.1 == 1).collect());
        let r = evaluate(&db, &s, &y, &y_hat).unwrap();
        assert_eq!(r.get(Measure::EqualizedOddsTruePositive), Some(0.0));
        assert_eq!(r.get(Measure::EqualizedOddsFalsePositive), Some(0.0));
        assert_eq!(r.get(Measure::OverallAccuracyEquality), Some(0.0));
    }

    #[test]
    fn hand_computed_values() {
        // protected: (y, ŷ) = (1,1), (0,1), (0,0); others: (1,0), (0,0)
        let db = binary_db(&[(1, 1), (1, 0), (1, 0), (0, 1), (0, 0)]);
        let (s, y) = preds();
        let y_hat = PredictionVector::new(vec![true, true, false, false, false]);
        let r = evaluate(&db, &s, &y, &y_hat).unwrap();
        assert!((r.get(Measure::DemographicParity).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        // accuracy 2/3 vs 1/2
        assert!((r.get(Measure::OverallAccuracyEquality).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(r.get(Measure::EqualizedOddsFalsePositive), Some(0.5));
        assert_eq!(r.get(Measure::EqualizedOddsTruePositive), Some(1.0));
        // no ŷ = 1 among the unprotected
        assert_eq!(r.get(Measure::ConditionalUseAccuracyEqualityTruePositive), None);
        assert_eq!(r.get(Measure::ConditionalUseAccuracyEqualityTrueNegative), Some(0.5));
        assert_eq!(r.contingency.total(), 5);
    }

    #[test]
    fn categories() {
        assert_eq!(category_of(Measure::DemographicParity), Category::Independence);
        assert_eq!(
            category_of(Measure::ConditionalUseAccuracyEqualityTrueNegative),
            Category::Sufficiency
        );
        assert_eq!(category_of(Measure::OverallAccuracyEquality), Category::NotApplicable);
        assert_eq!(category_of(Measure::EqualizedOddsFalsePositive), Category::Separation);
    }

    #[test]
    fn length_and_predicate_errors() {
        let db = binary_db(&[(0, 0)]);
        let (s, y) = preds();
        let err = evaluate(&db, &s, &y, &PredictionVector::new(vec![])).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { .. }));
        let bad = PredicateSpec::eq("nope", "1");
        assert!(matches!(evaluate(&db, &bad, &y, &PredictionVector::new(vec![true])), Err(Error::BadPredicate(_))));
        let bad = PredicateSpec::eq("s", "maybe");
        assert!(matches!(bad.compile(db.domains()), Err(Error::BadPredicate(_))));
    }

    #[test]
    fn predicate_ops() {
        let d = vec![AttributeDomain::numeric("age", vec![0.0, 25.0, 45.0, 120.0]).unwrap()];
        let parse = |j: &str| serde_json::from_str::<PredicateSpec>(j).unwrap().compile(&d).unwrap();
        let lt = parse(r#"{"attribute":"age","op":"lt","value":2}"#);
        assert_eq!((0..3).map(|c| lt.test(&[c])).collect::<Vec<_>>(), vec![true, true, false]);
        let ge = parse(r#"{"attribute":"age","op":"ge","value":"30"}"#);
        assert_eq!((0..3).map(|c| ge.test(&[c])).collect::<Vec<_>>(), vec![false, true, true]);
        let set = parse(r#"{"attribute":"age","op":"in_set","values":[0,"45..120"]}"#);
        assert_eq!((0..3).map(|c| set.test(&[c])).collect::<Vec<_>>(), vec![true, false, true]);
        let neq = parse(r#"{"attribute":"age","op":"neq","value":1}"#);
        assert!(!neq.test(&[1]) && neq.test(&[2]));
        let bad: PredicateSpec = serde_json::from_str(r#"{"attribute":"age","op":"eq","value":7}"#).unwrap();
        assert!(bad.compile(&d).is_err());
    }

    #[test]
    fn json_shape() {
        let db = binary_db(&[(0, 0), (1, 1)]);
        let (s, y) = preds();
        let r = evaluate(&db, &s, &y, &PredictionVector::new(vec![false, true])).unwrap();
        let v = serde_json::to_value(r.to_json()).unwrap();
        assert_eq!(v["measures"]["Demographic Parity"]["value"], 1.0);
        assert_eq!(v["measures"]["Demographic Parity"]["category"], "independence");
        assert_eq!(v["measures"]["Overall Accuracy Equality"]["category"], "n/a");
        assert_eq!(v["measures"]["Overall Accuracy Equality"]["value"], 0.0);
        let one_class = evaluate(&db, &s, &y, &PredictionVector::new(vec![true, true])).unwrap();
        let v = serde_json::to_value(one_class.to_json()).unwrap();
        assert_eq!(v["measures"]["Conditional Use Accuracy Equality (True Negative)"]["value"], "undefined");
        assert_eq!(v["contingency"].as_array().unwrap().len(), 8);
        let back: FairnessReportJson = serde_json::from_value(v).unwrap();
        assert_eq!(FairnessReport::from_json(&back).unwrap(), one_class);
    }
}
