//! The end-to-end audit: fairness on the original data versus the mean over
//! synthetic replicates.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::EncodedDatabase;
use crate::error::{Error, Result};
use crate::fairness::{
    evaluate_compiled, fmt_value, Category, FairnessReport, FairnessReportJson, Measure, MeasureValue,
    PredicateSpec, PredictionVector,
};
use crate::model::{fit, TreeModel};
use crate::predictor::{train, LogisticModel, Predictor, TrainConfig};
use crate::privacy::{measure, AccountantReport, NoiseMode};
use crate::rng::{replicate_label, stream_id, StreamRng};
use crate::select::{build_plan_with, PlanOptions, SelectionPlan};

/// Replicate count used when none is configured.
pub const DEFAULT_REPLICATES: usize = 100;

/// How `Ŷ` is obtained for the original and the synthetic databases.
#[derive(Clone)]
pub enum PredictorSource {
    /// One model applied to every database.
    Fixed(Arc<dyn Predictor>),
    /// Train the built-in logistic model on the original data with the
    /// ground-truth predicate as target. With `retrain_per_replicate`, each
    /// synthetic replicate gets its own model trained on that replicate.
    Train {
        config: TrainConfig,
        retrain_per_replicate: bool,
    },
}

#[derive(Clone, Debug)]
pub struct AuditOptions {
    pub noise: NoiseMode,
    pub replicates: usize,
    pub seed: u64,
    pub plan: PlanOptions,
    /// Rows per synthetic replicate; the original row count when `None`.
    pub synthetic_rows: Option<usize>,
    /// Recorded in the accountant report when the budget came from (ε, δ).
    pub epsilon_delta: Option<(f64, f64)>,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            noise: NoiseMode::Disabled,
            replicates: DEFAULT_REPLICATES,
            seed: 0,
            plan: PlanOptions::default(),
            synthetic_rows: None,
            epsilon_delta: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticMean {
    pub mean: Option<f64>,
    pub defined: usize,
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedInfo {
    pub master: u64,
    pub replicate_streams: Vec<u64>,
}

impl SeedInfo {
    pub fn new(master: u64, replicates: usize) -> Self {
        Self {
            master,
            replicate_streams: (0..replicates).map(|r| stream_id(&replicate_label(r))).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditComparison {
    pub original: FairnessReport,
    pub replicate_reports: Vec<FairnessReport>,
    pub synthetic_mean: [SyntheticMean; 6],
    /// `|original − synthetic mean|`, undefined if either side is.
    pub differences: [Option<f64>; 6],
    pub average_difference: Option<f64>,
    pub per_category_error: [(Category, Option<f64>); 4],
    pub replicates: usize,
    pub seeds: SeedInfo,
}

/// Order-independent mean: values are sorted before summation.
fn stable_mean(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean of the defined entries.
pub fn average_of(values: &[Option<f64>]) -> Option<f64> {
    let mut defined: Vec<f64> = values.iter().flatten().copied().collect();
    stable_mean(&mut defined)
}

/// Mean difference per fairness category, in [`Category::ALL`] order.
pub fn category_means(differences: &[Option<f64>; 6]) -> [(Category, Option<f64>); 4] {
    Category::ALL.map(|c| {
        let in_cat: Vec<Option<f64>> = Measure::ALL
            .iter()
            .filter(|m| m.category() == c)
            .map(|m| differences[m.index()])
            .collect();
        (c, average_of(&in_cat))
    })
}

pub fn category_error_summary(cmp: &AuditComparison) -> [(Category, Option<f64>); 4] {
    category_means(&cmp.differences)
}

/// Combine the original report with the replicate reports.
pub fn aggregate(original: FairnessReport, replicate_reports: Vec<FairnessReport>, seeds: SeedInfo) -> Result<AuditComparison> {
    if replicate_reports.is_empty() {
        return Err(Error::Config("at least one synthetic replicate is required".into()));
    }
    let r = replicate_reports.len();
    let mut synthetic_mean = [SyntheticMean {
        mean: None,
        defined: 0,
        excluded: 0,
    }; 6];
    let mut differences = [None; 6];
    for m in Measure::ALL {
        let mut vals: Vec<f64> = replicate_reports.iter().filter_map(|rep| rep.get(m)).collect();
        let defined = vals.len();
        let mean = stable_mean(&mut vals);
        if mean.is_none() && original.get(m).is_some() {
            return Err(Error::AllReplicatesUndefined(m.name().to_string()));
        }
        synthetic_mean[m.index()] = SyntheticMean {
            mean,
            defined,
            excluded: r - defined,
        };
        differences[m.index()] = original.get(m).zip(mean).map(|(o, s)| (o - s).abs());
    }
    Ok(AuditComparison {
        average_difference: average_of(&differences),
        per_category_error: category_means(&differences),
        original,
        replicate_reports,
        synthetic_mean,
        differences,
        replicates: r,
        seeds,
    })
}

/// Everything an audit run produces.
pub struct AuditOutcome {
    pub comparison: AuditComparison,
    pub plan: SelectionPlan,
    pub accountant: AccountantReport,
    pub model: TreeModel,
    pub trained: Option<LogisticModel>,
}

pub fn run_audit(
    db: EncodedDatabase,
    predictor: &PredictorSource,
    s: &PredicateSpec,
    y: &PredicateSpec,
    options: &AuditOptions,
) -> Result<AuditComparison> {
    run_audit_full(db, predictor, s, y, options).map(|o| o.comparison)
}

/// Select, measure and fit once; evaluate the original; then drop it and
/// evaluate `replicates` synthetic databases sampled on independent streams.
pub fn run_audit_full(
    db: EncodedDatabase,
    predictor: &PredictorSource,
    s: &PredicateSpec,
    y: &PredicateSpec,
    options: &AuditOptions,
) -> Result<AuditOutcome> {
    if options.replicates == 0 {
        return Err(Error::Config("replicates must be at least 1".into()));
    }
    let s_c = s.compile(db.domains())?;
    let y_c = y.compile(db.domains())?;
    let plan = build_plan_with(&db, &options.plan)?;
    let (measurements, alloc) = measure(&db, &plan, options.noise, options.seed)?;
    let names: Vec<&str> = db.domains().iter().map(|d| d.name()).collect();
    let accountant = AccountantReport::build(&names, &plan, alloc.as_ref(), options.epsilon_delta)?;
    let mut model = fit(&measurements, &plan, db.domains())?;
    model.rows = options.synthetic_rows.unwrap_or(db.row_count());

    let (fixed, trained): (Option<Arc<dyn Predictor>>, Option<LogisticModel>) = match predictor {
        PredictorSource::Fixed(p) => (Some(p.clone()), None),
        PredictorSource::Train {
            config,
            retrain_per_replicate,
        } => {
            let m = train(&db, y, config)?;
            let shared: Option<Arc<dyn Predictor>> = (!retrain_per_replicate).then(|| Arc::new(m.clone()) as _);
            (shared, Some(m))
        }
    };
    let original_pred = match (&fixed, &trained) {
        (Some(p), _) => p.predict(&db)?,
        (None, Some(m)) => m.predict(&db)?,
        (None, None) => unreachable!("a predictor is always available for the original data"),
    };
    let original = evaluate_compiled(&db, &s_c, &y_c, &original_pred)?;
    // the real data is not needed past this point
    drop(db);

    let replicate_reports = (0..options.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = StreamRng::for_label(options.seed, &replicate_label(r));
            let synth = model.sample(model.rows, &mut rng)?;
            let preds = match (&fixed, predictor) {
                (Some(p), _) => p.predict(&synth)?,
                (None, PredictorSource::Train { config, .. }) => train(&synth, y, config)?.predict(&synth)?,
                (None, PredictorSource::Fixed(_)) => unreachable!(),
            };
            evaluate_compiled(&synth, &s_c, &y_c, &preds)
        })
        .collect::<Result<Vec<_>>>()?;

    let comparison = aggregate(original, replicate_reports, SeedInfo::new(options.seed, options.replicates))?;
    Ok(AuditOutcome {
        comparison,
        plan,
        accountant,
        model,
        trained,
    })
}

/// Audit against synthetic databases produced elsewhere, each paired with
/// its own predictions.
pub fn compare(
    original_db: &EncodedDatabase,
    original_pred: &PredictionVector,
    synthetic: &[(EncodedDatabase, PredictionVector)],
    s: &PredicateSpec,
    y: &PredicateSpec,
) -> Result<AuditComparison> {
    let s_c = s.compile(original_db.domains())?;
    let y_c = y.compile(original_db.domains())?;
    let original = evaluate_compiled(original_db, &s_c, &y_c, original_pred)?;
    let reports = synthetic
        .iter()
        .map(|(db, p)| {
            if db.domains() != original_db.domains() {
                return Err(Error::SchemaMismatch("synthetic data uses a different schema".into()));
            }
            evaluate_compiled(db, &s_c, &y_c, p)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = reports.len();
    aggregate(original, reports, SeedInfo { master: 0, replicate_streams: vec![0; n] })
}

impl AuditComparison {
    /// Markdown table with Measure, Original, Synthetic and Difference
    /// columns, followed by the average difference and per-category errors.
    pub fn render(&self, threshold: Option<f64>) -> String {
        let mut out = String::new();
        out.push_str("| Measure | Original | Synthetic | Difference |");
        if threshold.is_some() {
            out.push_str(" Within threshold |");
        }
        out.push_str("\n|---|---|---|---|");
        if threshold.is_some() {
            out.push_str("---|");
        }
        out.push('\n');
        for m in Measure::ALL {
            let i = m.index();
            out.push_str(&format!(
                "| {} | {} | {} | {} |",
                m.name(),
                fmt_value(self.original.get(m)),
                fmt_value(self.synthetic_mean[i].mean),
                fmt_value(self.differences[i]),
            ));
            if let Some(t) = threshold {
                let tag = self.differences[i].map_or("n/a", |d| if d <= t { "yes" } else { "no" });
                out.push_str(&format!(" {tag} |"));
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "\nAverage difference is {} over {} replicate(s).\n",
            fmt_value(self.average_difference),
            self.replicates
        ));
        out.push_str("\nPer-category mean difference:\n");
        for (c, v) in &self.per_category_error {
            out.push_str(&format!("- {}: {}\n", c.name(), fmt_value(*v)));
        }
        let excluded: Vec<String> = Measure::ALL
            .iter()
            .filter(|m| self.synthetic_mean[m.index()].excluded > 0)
            .map(|m| format!("{} ({} undefined)", m.name(), self.synthetic_mean[m.index()].excluded))
            .collect();
        if !excluded.is_empty() {
            out.push_str(&format!("\nExcluded replicate values: {}\n", excluded.join(", ")));
        }
        out
    }

    pub fn to_json(&self, threshold: Option<f64>) -> AuditComparisonJson {
        AuditComparisonJson {
            measures: Measure::ALL
                .iter()
                .map(|&m| {
                    let i = m.index();
                    MeasureRow {
                        measure: m.name().to_string(),
                        category: m.category(),
                        original: self.original.get(m).into(),
                        synthetic: self.synthetic_mean[i].mean.into(),
                        difference: self.differences[i].into(),
                        defined_replicates: self.synthetic_mean[i].defined,
                        excluded_replicates: self.synthetic_mean[i].excluded,
                        within_threshold: threshold.and_then(|t| self.differences[i].map(|d| d <= t)),
                    }
                })
                .collect(),
            average_difference: self.average_difference.into(),
            per_category_error: self
                .per_category_error
                .iter()
                .map(|&(c, v)| CategoryRow { category: c, mean_difference: v.into() })
                .collect(),
            replicates: self.replicates,
            seeds: self.seeds.clone(),
            threshold,
            original: self.original.to_json(),
            replicate_reports: self.replicate_reports.iter().map(FairnessReport::to_json).collect(),
        }
    }

    /// Rebuild from JSON by re-aggregating the stored reports.
    pub fn from_json(json: &AuditComparisonJson) -> Result<Self> {
        let original = FairnessReport::from_json(&json.original)?;
        let reports = json
            .replicate_reports
            .iter()
            .map(FairnessReport::from_json)
            .collect::<Result<Vec<_>>>()?;
        aggregate(original, reports, json.seeds.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureRow {
    pub measure: String,
    pub category: Category,
    pub original: MeasureValue,
    pub synthetic: MeasureValue,
    pub difference: MeasureValue,
    pub defined_replicates: usize,
    pub excluded_replicates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub within_threshold: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: Category,
    pub mean_difference: MeasureValue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditComparisonJson {
    pub measures: Vec<MeasureRow>,
    pub average_difference: MeasureValue,
    pub per_category_error: Vec<CategoryRow>,
    pub replicates: usize,
    pub seeds: SeedInfo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub original: FairnessReportJson,
    pub replicate_reports: Vec<FairnessReportJson>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::AttributeDomain;
    use crate::fairness::Contingency;
    use crate::predictor::ConstantPredictor;
    use rand::{Rng, SeedableRng};

    fn report_with(values: [Option<f64>; 6]) -> FairnessReport {
        FairnessReport {
            values,
            contingency: Contingency::default(),
        }
    }

    fn fixture(seed: u64, n: usize) -> EncodedDatabase {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let domains = vec![
            AttributeDomain::categorical("sex", ["Male", "Female"]).unwrap(),
            AttributeDomain::categorical("age", ["young", "mid", "old"]).unwrap(),
            AttributeDomain::categorical("priors", ["0", "1", "2+"]).unwrap(),
            AttributeDomain::categorical("recid", ["0", "1"]).unwrap(),
        ];
        let rows: Vec<Vec<u32>> = (0..n)
            .map(|_| {
                let sex = u32::from(rng.random_bool(0.3));
                let age = rng.random_range(0..3);
                let priors = if rng.random_bool(0.4 + 0.1 * age as f64) { 2 } else { rng.random_range(0..2) };
                let recid = u32::from(rng.random_bool(0.2 + 0.25 * priors as f64 - 0.1 * sex as f64));
                vec![sex, age, priors, recid]
            })
            .collect();
        EncodedDatabase::from_rows(domains, &rows).unwrap()
    }

    fn sy() -> (PredicateSpec, PredicateSpec) {
        (PredicateSpec::eq("sex", "Female"), PredicateSpec::eq("recid", "1"))
    }

    #[test]
    fn table_column_average() {
        let d = [0.1818, 0.0080, 0.0115, 0.0189, 0.1626, 0.0803].map(Some);
        let avg = average_of(&d).unwrap();
        assert!((avg - 0.4631 / 6.0).abs() < 1e-12);
        let cats = category_means(&d);
        assert!((cats[2].1.unwrap() - 0.12145).abs() < 1e-12);
        assert!((cats[0].1.unwrap() - 0.1818).abs() < 1e-12);
        assert!((cats[1].1.unwrap() - (0.0115 + 0.0189) / 2.0).abs() < 1e-12);
        assert!((cats[3].1.unwrap() - 0.0080).abs() < 1e-12);
    }

    #[test]
    fn constant_categories() {
        let cats = category_means(&[Some(0.25); 6]);
        assert!(cats.iter().all(|(_, v)| *v == Some(0.25)));
    }

    #[test]
    fn undefined_replicates_are_excluded_and_counted() {
        let original = report_with([Some(0.5); 6]);
        let mut a = [Some(0.1); 6];
        a[5] = None;
        let reps = vec![report_with(a), report_with([Some(0.3); 6])];
        let cmp = aggregate(original, reps, SeedInfo::new(1, 2)).unwrap();
        assert_eq!(cmp.synthetic_mean[5].mean, Some(0.3));
        assert_eq!(cmp.synthetic_mean[5].excluded, 1);
        assert!((cmp.differences[0].unwrap() - 0.3).abs() < 1e-15);
        assert!((cmp.differences[5].unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn all_undefined_replicates_error() {
        let original = report_with([Some(0.5); 6]);
        let mut a = [Some(0.1); 6];
        a[2] = None;
        let err = aggregate(original, vec![report_with(a)], SeedInfo::new(0, 1)).unwrap_err();
        assert!(matches!(err, Error::AllReplicatesUndefined(m) if m == "Equalized Odds (False Positive)"));
        // undefined on both sides is reported, not an error
        let cmp = aggregate(report_with([None; 6]), vec![report_with([None; 6])], SeedInfo::new(0, 1)).unwrap();
        assert_eq!(cmp.average_difference, None);
    }

    #[test]
    fn replicate_order_is_irrelevant() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let reps: Vec<FairnessReport> = (0..7)
            .map(|_| report_with([(); 6].map(|_| Some(rng.random::<f64>()))))
            .collect();
        let original = report_with([Some(0.4); 6]);
        let a = aggregate(original.clone(), reps.clone(), SeedInfo::new(0, 7)).unwrap();
        let mut rev = reps;
        rev.reverse();
        let b = aggregate(original, rev, SeedInfo::new(0, 7)).unwrap();
        assert_eq!(a.synthetic_mean, b.synthetic_mean);
        assert_eq!(a.differences, b.differences);
        assert_eq!(a.average_difference, b.average_difference);
    }

    #[test]
    fn noiseless_constant_predictor_has_zero_gaps() {
        let db = fixture(1, 400);
        let (s, y) = sy();
        let opts = AuditOptions {
            replicates: 1,
            seed: 3,
            ..AuditOptions::default()
        };
        let cmp = run_audit(db, &PredictorSource::Fixed(Arc::new(ConstantPredictor(true))), &s, &y, &opts).unwrap();
        for m in [
            Measure::DemographicParity,
            Measure::EqualizedOddsFalsePositive,
            Measure::EqualizedOddsTruePositive,
        ] {
            assert_eq!(cmp.differences[m.index()], Some(0.0), "{m}");
        }
        assert_eq!(cmp.differences[Measure::ConditionalUseAccuracyEqualityTrueNegative.index()], None);
    }

    #[test]
    fn average_matches_recomputation_from_reports() {
        let db = fixture(2, 600);
        let (s, y) = sy();
        let opts = AuditOptions {
            noise: NoiseMode::Calibrated { rho: 1.0 },
            replicates: 5,
            seed: 11,
            ..AuditOptions::default()
        };
        let src = PredictorSource::Train {
            config: TrainConfig::default(),
            retrain_per_replicate: false,
        };
        let cmp = run_audit(db, &src, &s, &y, &opts).unwrap();
        let mut diffs = Vec::new();
        for m in Measure::ALL {
            let vals: Vec<f64> = cmp.replicate_reports.iter().filter_map(|r| r.get(m)).collect();
            if let (Some(o), false) = (cmp.original.get(m), vals.is_empty()) {
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let d = (o - mean).abs();
                assert!((cmp.differences[m.index()].unwrap() - d).abs() < 1e-12);
                diffs.push(d);
            }
        }
        let avg = diffs.iter().sum::<f64>() / diffs.len() as f64;
        assert!((cmp.average_difference.unwrap() - avg).abs() < 1e-12);
        let json = cmp.to_json(None);
        assert_eq!(AuditComparison::from_json(&json).unwrap(), cmp);
    }

    #[test]
    fn rendered_table_shape() {
        let d = [0.1818, 0.0080, 0.0115, 0.0189, 0.1626, 0.0803];
        let original = report_with(d.map(Some));
        let cmp = aggregate(original, vec![report_with([Some(0.0); 6])], SeedInfo::new(0, 1)).unwrap();
        let text = cmp.render(Some(0.1));
        assert!(text.contains("| Demographic Parity | 0.1818 | 0.0000 | 0.1818 | no |"));
        assert!(text.contains("Average difference is 0.0772"));
        assert_eq!(text.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| Measure")).count(), 6);
    }

    #[test]
    fn zero_replicates_rejected() {
        let (s, y) = sy();
        let opts = AuditOptions {
            replicates: 0,
            ..AuditOptions::default()
        };
        let src = PredictorSource::Fixed(Arc::new(ConstantPredictor(true)));
        assert!(run_audit(fixture(3, 50), &src, &s, &y, &opts).is_err());
    }
}
