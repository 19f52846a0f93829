//! Gaussian mechanism, budget allocation and Renyi accounting.
//!
//! Budgets are expressed as `ρ`: a procedure with budget `ρ` satisfies
//! `(α, α·ρ)`-RDP for every `α ≥ 1`. A single Gaussian measurement with noise
//! scale `σ` and L2 sensitivity `Δ` costs `α·Δ²/(2σ²)`; under add/remove-one
//! neighbors a count marginal has `Δ = 1`, so `ρ_i = 1/(2σ_i²)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::EncodedDatabase;
use crate::error::{Error, Result};
use crate::marginal::{count_marginal, Marginal};
use crate::rng::StreamRng;
use crate::select::SelectionPlan;

/// L2 sensitivity of one count marginal.
pub const MARGINAL_SENSITIVITY: f64 = 1.0;

/// Orders reported by the accountant.
pub const REPORT_ALPHAS: [f64; 7] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MeasurementId {
    OneWay(usize),
    Edge(usize, usize),
}

impl MeasurementId {
    pub fn clique(&self) -> Vec<usize> {
        match *self {
            MeasurementId::OneWay(a) => vec![a],
            MeasurementId::Edge(u, v) => vec![u, v],
        }
    }

    /// Stream label, stable across runs.
    pub fn stream_label(&self) -> String {
        match *self {
            MeasurementId::OneWay(a) => format!("measure/1way/{a}"),
            MeasurementId::Edge(u, v) => format!("measure/2way/{u}/{v}"),
        }
    }

    /// Every measurement a plan asks for: 1-way marginals first, then edges.
    pub fn all(plan: &SelectionPlan) -> Vec<MeasurementId> {
        (0..plan.attribute_count)
            .map(MeasurementId::OneWay)
            .chain(plan.tree_edges.iter().map(|&(u, v)| MeasurementId::Edge(u, v)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementShare {
    pub id: MeasurementId,
    pub rho: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BudgetAllocation {
    pub rho_total: f64,
    pub shares: Vec<MeasurementShare>,
}

impl BudgetAllocation {
    pub fn sigma(&self, id: MeasurementId) -> Option<f64> {
        self.shares.iter().find(|s| s.id == id).map(|s| s.sigma)
    }
}

/// How the measure step perturbs marginals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseMode {
    Calibrated { rho: f64 },
    /// σ = 0 everywhere. Offers no privacy; for tests and fidelity checks.
    Disabled,
}

fn sigma_for(rho: f64) -> f64 {
    (1.0 / (2.0 * rho)).sqrt()
}

/// Half of `ρ` split evenly over the 1-way marginals, half over the tree
/// edges. With a single attribute the whole budget goes to its marginal.
pub fn allocate(rho_total: f64, plan: &SelectionPlan) -> Result<BudgetAllocation> {
    if !(rho_total > 0.0) || !rho_total.is_finite() {
        return Err(Error::NonPositiveBudget(rho_total));
    }
    plan.validate()?;
    let d = plan.attribute_count;
    let edges = plan.tree_edges.len();
    let (one_way_rho, edge_rho) = if edges == 0 {
        (rho_total / d as f64, 0.0)
    } else {
        (rho_total / (2.0 * d as f64), rho_total / (2.0 * edges as f64))
    };
    let shares = MeasurementId::all(plan)
        .into_iter()
        .map(|id| {
            let rho = match id {
                MeasurementId::OneWay(_) => one_way_rho,
                MeasurementId::Edge(..) => edge_rho,
            };
            MeasurementShare {
                id,
                rho,
                sigma: sigma_for(rho),
            }
        })
        .collect();
    Ok(BudgetAllocation { rho_total, shares })
}

/// A marginal after Gaussian perturbation. Entries are left unclamped.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyMeasurement {
    pub marginal: Marginal,
    pub sigma: f64,
}

impl NoisyMeasurement {
    pub fn clique(&self) -> &[usize] {
        &self.marginal.clique
    }
}

/// `f(D) + N(0, σ²I)`. `σ = 0` returns the table unchanged.
pub fn gaussian_mechanism(m: &Marginal, sigma: f64, rng: &mut StreamRng) -> Result<NoisyMeasurement> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::NegativeSigma(sigma));
    }
    let mut marginal = m.clone();
    marginal.normalized = false;
    if sigma > 0.0 {
        for v in &mut marginal.table {
            *v += sigma * rng.standard_normal();
        }
    }
    Ok(NoisyMeasurement { marginal, sigma })
}

/// Run the measure step for every marginal in the plan, each on its own
/// random stream.
pub fn measure(
    db: &EncodedDatabase,
    plan: &SelectionPlan,
    mode: NoiseMode,
    seed: u64,
) -> Result<(Vec<NoisyMeasurement>, Option<BudgetAllocation>)> {
    let (ids, sigmas, alloc) = match mode {
        NoiseMode::Calibrated { rho } => {
            let alloc = allocate(rho, plan)?;
            let ids: Vec<_> = alloc.shares.iter().map(|s| s.id).collect();
            let sigmas: Vec<_> = alloc.shares.iter().map(|s| s.sigma).collect();
            (ids, sigmas, Some(alloc))
        }
        NoiseMode::Disabled => {
            plan.validate()?;
            let ids = MeasurementId::all(plan);
            let n = ids.len();
            (ids, vec![0.0; n], None)
        }
    };
    let measurements = ids
        .par_iter()
        .zip(&sigmas)
        .map(|(id, &sigma)| {
            let m = count_marginal(db, &id.clique())?;
            let mut rng = StreamRng::for_label(seed, &id.stream_label());
            gaussian_mechanism(&m, sigma, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((measurements, alloc))
}

/// Composed RDP cost `γ(α) = Σ_i α·Δ²/(2σ_i²)`.
pub fn rdp_curve(alloc: &BudgetAllocation, alpha: f64) -> Result<f64> {
    if !(alpha >= 1.0) {
        return Err(Error::BadAlpha(alpha));
    }
    Ok(alloc
        .shares
        .iter()
        .map(|s| gaussian_rdp(alpha, MARGINAL_SENSITIVITY, s.sigma))
        .sum())
}

/// RDP cost of one Gaussian measurement.
pub fn gaussian_rdp(alpha: f64, sensitivity: f64, sigma: f64) -> f64 {
    alpha * sensitivity * sensitivity / (2.0 * sigma * sigma)
}

/// `D_α(N(μ₁, σ²I) ‖ N(μ₂, σ²I)) = α‖μ₁ − μ₂‖² / (2σ²)`.
pub fn renyi_divergence_gaussian(mu1: &[f64], mu2: &[f64], sigma: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 1.0) {
        return Err(Error::BadAlpha(alpha));
    }
    if mu1.len() != mu2.len() {
        return Err(Error::ShapeMismatch(format!(
            "mean vectors of length {} and {}",
            mu1.len(),
            mu2.len()
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::NegativeSigma(sigma));
    }
    let sq: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(alpha * sq / (2.0 * sigma * sigma))
}

/// Largest `ρ` with `ρ + 2√(ρ ln(1/δ)) ≤ ε`.
pub fn epsilon_delta_to_rho(epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::NonPositiveBudget(epsilon));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::BadDelta(delta));
    }
    let l = (1.0 / delta).ln();
    let root = (l + epsilon).sqrt() - l.sqrt();
    Ok(root * root)
}

/// JSON form of the accountant's view of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccountantReport {
    /// `null` when noise is disabled.
    pub rho_total: Option<f64>,
    pub applicable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub per_measurement: Vec<MeasurementEntry>,
    pub gamma_at: Vec<GammaPoint>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementEntry {
    pub clique: Vec<String>,
    pub rho: Option<f64>,
    pub sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaPoint {
    pub alpha: f64,
    pub gamma: f64,
}

pub const SELECTION_GAP_NOTE: &str =
    "mutual-information selection reads the exact data and is not charged to the budget";
pub const ROW_COUNT_NOTE: &str =
    "the synthetic row count defaults to the exact original row count, which is not noised";

impl AccountantReport {
    pub fn build(
        names: &[&str],
        plan: &SelectionPlan,
        alloc: Option<&BudgetAllocation>,
        epsilon_delta: Option<(f64, f64)>,
    ) -> Result<Self> {
        let clique_names = |id: MeasurementId| id.clique().iter().map(|&a| names[a].to_string()).collect();
        let notes = vec![SELECTION_GAP_NOTE.to_string(), ROW_COUNT_NOTE.to_string()];
        let report = match alloc {
            Some(alloc) => AccountantReport {
                rho_total: Some(alloc.rho_total),
                applicable: true,
                epsilon: epsilon_delta.map(|p| p.0),
                delta: epsilon_delta.map(|p| p.1),
                per_measurement: alloc
                    .shares
                    .iter()
                    .map(|s| MeasurementEntry {
                        clique: clique_names(s.id),
                        rho: Some(s.rho),
                        sigma: s.sigma,
                    })
                    .collect(),
                gamma_at: REPORT_ALPHAS
                    .iter()
                    .map(|&alpha| Ok(GammaPoint { alpha, gamma: rdp_curve(alloc, alpha)? }))
                    .collect::<Result<_>>()?,
                notes,
            },
            None => AccountantReport {
                rho_total: None,
                applicable: false,
                epsilon: None,
                delta: None,
                per_measurement: MeasurementId::all(plan)
                    .into_iter()
                    .map(|id| MeasurementEntry {
                        clique: clique_names(id),
                        rho: None,
                        sigma: 0.0,
                    })
                    .collect(),
                gamma_at: Vec::new(),
                notes: std::iter::once("noise disabled (testing mode): no privacy guarantee".to_string())
                    .chain(notes)
                    .collect(),
            },
        };
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::select::max_spanning_tree;

    fn chain(d: usize) -> SelectionPlan {
        let c: Vec<_> = (1..d).map(|v| (v - 1, v, 1.0 / v as f64)).collect();
        max_spanning_tree(d, &c)
    }

    #[test]
    fn two_attribute_split() {
        let alloc = allocate(1.0, &chain(2)).unwrap();
        assert_eq!(alloc.shares.len(), 3);
        let one = alloc.sigma(MeasurementId::OneWay(0)).unwrap();
        let edge = alloc.sigma(MeasurementId::Edge(0, 1)).unwrap();
        assert!((alloc.shares[0].rho - 0.25).abs() < 1e-15);
        assert!((one - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert!((alloc.shares[2].rho - 0.5).abs() < 1e-15);
        assert!((edge - 1.0).abs() < 1e-12);
        let sum: f64 = alloc.shares.iter().map(|s| s.rho).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!((rdp_curve(&alloc, 3.0).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn doubling_budget_shrinks_sigma_by_sqrt2() {
        let plan = chain(5);
        let a = allocate(0.3, &plan).unwrap();
        let b = allocate(0.6, &plan).unwrap();
        for (x, y) in a.shares.iter().zip(&b.shares) {
            assert!((x.sigma / std::f64::consts::SQRT_2 - y.sigma).abs() < 1e-12);
        }
    }

    #[test]
    fn single_attribute_takes_everything() {
        let alloc = allocate(0.7, &chain(1)).unwrap();
        assert_eq!(alloc.shares.len(), 1);
        assert_eq!(alloc.shares[0].rho, 0.7);
    }

    #[test]
    fn budget_checks() {
        assert!(matches!(allocate(0.0, &chain(2)), Err(Error::NonPositiveBudget(_))));
        assert!(matches!(allocate(-1.0, &chain(2)), Err(Error::NonPositiveBudget(_))));
        let alloc = allocate(1.0, &chain(2)).unwrap();
        assert!(matches!(rdp_curve(&alloc, 0.5), Err(Error::BadAlpha(_))));
    }

    #[test]
    fn single_measurement_gamma() {
        let alloc = BudgetAllocation {
            rho_total: 0.5,
            shares: vec![MeasurementShare {
                id: MeasurementId::OneWay(0),
                rho: 0.5,
                sigma: 1.0,
            }],
        };
        assert_eq!(rdp_curve(&alloc, 2.0).unwrap(), 1.0);
    }

    #[test]
    fn two_unit_measurements_match_divergence() {
        let alloc = BudgetAllocation {
            rho_total: 1.0,
            shares: (0..2)
                .map(|a| MeasurementShare {
                    id: MeasurementId::OneWay(a),
                    rho: 0.5,
                    sigma: 1.0,
                })
                .collect(),
        };
        let gamma = rdp_curve(&alloc, 3.0).unwrap();
        let oracle = renyi_divergence_gaussian(&[0.0, 0.0], &[1.0, 1.0], 1.0, 3.0).unwrap();
        assert_eq!(gamma, 3.0);
        assert!((gamma - oracle).abs() < 1e-12);
    }

    #[test]
    fn divergence_cases() {
        assert_eq!(renyi_divergence_gaussian(&[1.0, 2.0], &[1.0, 2.0], 1.0, 2.0).unwrap(), 0.0);
        assert_eq!(renyi_divergence_gaussian(&[1.0], &[0.0], 1.0, 2.0).unwrap(), 1.0);
        let base = renyi_divergence_gaussian(&[0.3, -0.2], &[0.1, 0.4], 0.7, 5.0).unwrap();
        let scaled = renyi_divergence_gaussian(&[0.9, -0.6], &[0.3, 1.2], 0.7, 5.0).unwrap();
        assert!((scaled - 9.0 * base).abs() < 1e-12);
        assert!(matches!(renyi_divergence_gaussian(&[0.0], &[1.0], 1.0, 1.0), Err(Error::BadAlpha(_))));
        assert!(matches!(renyi_divergence_gaussian(&[0.0], &[1.0, 2.0], 1.0, 2.0), Err(Error::ShapeMismatch(_))));
    }

    /// `D_α` of two 1-d Gaussians by trapezoidal quadrature of the defining
    /// integral, in log space.
    fn quadrature_divergence(gap: f64, sigma: f64, alpha: f64) -> f64 {
        let logpdf = |x: f64, mu: f64| -((x - mu) * (x - mu)) / (2.0 * sigma * sigma);
        let (lo, hi, n) = (-12.0 * sigma - gap.abs(), 12.0 * sigma + gap.abs(), 200_000);
        let h = (hi - lo) / n as f64;
        let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let mut sum = 0.0;
        for i in 0..=n {
            let x = lo + h * i as f64;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            sum += w * norm * (alpha * logpdf(x, gap) + (1.0 - alpha) * logpdf(x, 0.0)).exp();
        }
        (sum * h).ln() / (alpha - 1.0)
    }

    #[test]
    fn closed_form_matches_quadrature() {
        for (gap, sigma, alpha) in [(1.0, 1.0, 2.0), (0.5, 2.0, 3.0), (1.0, 0.5, 1.5)] {
            let closed = renyi_divergence_gaussian(&[gap], &[0.0], sigma, alpha).unwrap();
            let quad = quadrature_divergence(gap, sigma, alpha);
            assert!((closed - quad).abs() < 1e-8, "{closed} vs {quad}");
        }
    }

    #[test]
    fn epsilon_delta_round_trip() {
        for (eps, delta) in [(1.0, 1e-6), (0.0001, 0.1), (3.0, 1e-9)] {
            let rho = epsilon_delta_to_rho(eps, delta).unwrap();
            let forward = rho + 2.0 * (rho * (1.0 / delta).ln()).sqrt();
            assert!((forward - eps).abs() < 1e-9, "{eps} {delta}: {forward}");
        }
        let rho = epsilon_delta_to_rho(1.0, 1e-6).unwrap();
        assert!((rho - 0.017_468_904_769_123_43).abs() < 1e-12);
        assert!(epsilon_delta_to_rho(2.0, 1e-6).unwrap() > rho);
        assert!(matches!(epsilon_delta_to_rho(1.0, 0.0), Err(Error::BadDelta(_))));
        assert!(matches!(epsilon_delta_to_rho(1.0, 1.0), Err(Error::BadDelta(_))));
    }

    #[test]
    fn zero_sigma_is_identity() {
        let m = Marginal::new(vec![0], vec![3], vec![8.0, 0.0, 2.0], false).unwrap();
        let mut rng = StreamRng::new(1, 2);
        assert_eq!(gaussian_mechanism(&m, 0.0, &mut rng).unwrap().marginal.table, m.table);
        assert!(matches!(gaussian_mechanism(&m, -1.0, &mut rng), Err(Error::NegativeSigma(_))));
    }

    #[test]
    fn noise_is_unrounded_and_seeded() {
        let m = Marginal::new(vec![0], vec![2], vec![8.0, 1537.0], false).unwrap();
        let run = |seed| {
            let mut rng = StreamRng::new(seed, 0);
            gaussian_mechanism(&m, 5.0, &mut rng).unwrap().marginal.table
        };
        let a = run(4);
        assert_eq!(a, run(4));
        assert_ne!(a, run(5));
        assert!(a.iter().all(|v| v.fract() != 0.0));
    }

    #[test]
    fn monte_carlo_moments() {
        let m = Marginal::new(vec![0], vec![1], vec![8.0], false).unwrap();
        let mut rng = StreamRng::for_label(99, "moments");
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = gaussian_mechanism(&m, 2.0, &mut rng).unwrap().marginal.table[0];
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        let sd = (s2 / n as f64 - mean * mean).sqrt();
        assert!((mean - 8.0).abs() < 0.01, "mean {mean}");
        assert!((sd - 2.0).abs() < 0.02, "sd {sd}");
    }
}
