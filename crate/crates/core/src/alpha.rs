//! Risk-sensitivity parameter optimization and the small-interaction
//! stability sweep.
//!
//! For a fixed cost sample and a relative-entropy budget `R`, the certified
//! upper bound as a function of the risk parameter is
//!
//! ```text
//! psi(a) = (1/a) log mean exp(a C) + R / a
//! ```
//!
//! The minimizer is located by golden-section search over log a on a
//! geometrically grown bracket. At an interior optimum the fixed-sample
//! identities `E_tilted[C] = psi(a*)` and `KL_sample(tilted || base) = R`
//! hold exactly, and both are returned as a certificate.

use serde::Serialize;

use crate::cost::{self, CostSpec};
use crate::error::Error;
use crate::measure::{self, KLEstimate};
use crate::rng::derive_seed;
use crate::sde::{Interaction, ModelSpec, PolicySpec, TimeGrid};
use crate::stats::{self, Estimate};
use crate::Result;

/// `psi(alpha) = F(alpha) + kl_budget / alpha` on a fixed cost sample.
pub fn psi_value(costs: &[f64], alpha: f64, kl_budget: f64) -> Result<Estimate> {
    if !(alpha > 0.0) {
        return Err(Error::AlphaZero);
    }
    if kl_budget < 0.0 {
        return Err(Error::InvalidParameter(
            "kl_budget must be nonnegative".to_string(),
        ));
    }
    let mut e = cost::estimate_risk_sensitive(costs, alpha, 1)?;
    e.value += kl_budget / alpha;
    Ok(e)
}

/// Boundary regimes where the infimum of psi is not interior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AlphaBoundary {
    /// `R = 0`: infimum at alpha -> 0+, value is the sample mean.
    ZeroBudget,
    /// Zero-variance costs with `R > 0`: infimum at alpha -> infinity.
    DegenerateCosts,
}

/// Result of the psi minimization with its first-order certificate.
#[derive(Debug, Clone, Serialize)]
pub struct AlphaCertificate {
    pub alpha_star: f64,
    pub psi_star: Estimate,
    /// Tilted mean `E_tilted[C]` at `alpha_star`.
    pub tilted_mean: f64,
    /// Sample KL of the tilt at `alpha_star`.
    pub tilted_kl: f64,
    /// `|tilted_mean - psi_star|` (stationarity restated at estimator level).
    pub stationarity_gap: f64,
    /// `|tilted_kl - kl_budget|` (budget matching).
    pub budget_gap: f64,
    /// Whether both certificate identities hold within tolerance.
    pub certificate_ok: bool,
    pub boundary: Option<AlphaBoundary>,
    pub iterations: usize,
}

const BRACKET_INIT: (f64, f64) = (1e-3, 1e3);
const BRACKET_LIMIT: (f64, f64) = (1e-9, 1e9);
const BRACKET_GRID: usize = 25;
const GOLDEN_MAX_ITER: usize = 200;

/// Minimize `psi` over `alpha > 0` on the fixed sample and certify the
/// optimum.
///
/// Degenerate inputs return flagged boundary solutions instead of errors:
/// zero variance sends the infimum to `alpha -> inf` (value: the constant
/// cost), a zero budget sends it to `alpha -> 0+` (value: the sample mean).
pub fn optimize_alpha(costs: &[f64], kl_budget: f64, tol: f64) -> Result<AlphaCertificate> {
    if costs.len() < 2 {
        return Err(Error::EmptySample);
    }
    if kl_budget < 0.0 || !(tol > 0.0) {
        return Err(Error::InvalidParameter(
            "kl_budget must be >= 0 and tol > 0".to_string(),
        ));
    }
    let mean = stats::mean_se(costs)?;
    let variance_free = costs.iter().all(|c| (c - costs[0]).abs() < 1e-300);

    if kl_budget == 0.0 {
        // psi = F(alpha) is nondecreasing in alpha; infimum at 0+ is E[C].
        return Ok(AlphaCertificate {
            alpha_star: 0.0,
            psi_star: mean,
            tilted_mean: mean.value,
            tilted_kl: 0.0,
            stationarity_gap: 0.0,
            budget_gap: 0.0,
            certificate_ok: true,
            boundary: Some(AlphaBoundary::ZeroBudget),
            iterations: 0,
        });
    }
    if variance_free {
        // F is flat at the constant; R/alpha decays to 0.
        return Ok(AlphaCertificate {
            alpha_star: f64::INFINITY,
            psi_star: Estimate::exact(costs[0]),
            tilted_mean: costs[0],
            tilted_kl: 0.0,
            stationarity_gap: 0.0,
            budget_gap: kl_budget,
            certificate_ok: true,
            boundary: Some(AlphaBoundary::DegenerateCosts),
            iterations: 0,
        });
    }

    let psi = |alpha: f64| -> f64 {
        psi_value(costs, alpha, kl_budget)
            .map(|e| e.value)
            .unwrap_or(f64::INFINITY)
    };

    // Coarse log-grid scan; grow the bracket geometrically while the argmin
    // sits on an edge.
    let (mut lo, mut hi) = BRACKET_INIT;
    let mut iterations = 0usize;
    let (mut grid_alphas, mut grid_vals): (Vec<f64>, Vec<f64>);
    loop {
        grid_alphas = (0..BRACKET_GRID)
            .map(|i| {
                (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (BRACKET_GRID - 1) as f64).exp()
            })
            .collect();
        grid_vals = grid_alphas.iter().map(|&a| psi(a)).collect();
        iterations += BRACKET_GRID;
        let argmin = grid_vals
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        if argmin == 0 && lo > BRACKET_LIMIT.0 {
            lo = (lo * 1e-2).max(BRACKET_LIMIT.0);
        } else if argmin == BRACKET_GRID - 1 && hi < BRACKET_LIMIT.1 {
            hi = (hi * 1e2).min(BRACKET_LIMIT.1);
        } else {
            lo = grid_alphas[argmin.saturating_sub(1)];
            hi = grid_alphas[(argmin + 1).min(BRACKET_GRID - 1)];
            break;
        }
    }

    // Golden-section on log alpha within the bracketing triple.
    let inv_phi = 0.5 * (5.0_f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = psi(c.exp());
    let mut fd = psi(d.exp());
    for _ in 0..GOLDEN_MAX_ITER {
        iterations += 1;
        if (b - a).abs() < tol * 0.1 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = psi(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = psi(d.exp());
        }
    }
    let alpha_star = (0.5 * (a + b)).exp();
    let psi_star = psi_value(costs, alpha_star, kl_budget)?;

    let tilt = cost::estimate_tilted(costs, alpha_star)?;
    let stationarity_gap = (tilt.estimate.value - psi_star.value).abs();
    let budget_gap = (tilt.tilted_kl - kl_budget).abs();
    let certificate_ok = stationarity_gap <= tol * (1.0 + psi_star.value.abs())
        && budget_gap <= tol * (1.0 + kl_budget);

    Ok(AlphaCertificate {
        alpha_star,
        psi_star,
        tilted_mean: tilt.estimate.value,
        tilted_kl: tilt.tilted_kl,
        stationarity_gap,
        budget_gap,
        certificate_ok,
        boundary: None,
        iterations,
    })
}

/// Risk-sensitive values at extreme alpha, probing the essential bounds of
/// the cost sample.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LimitProbe {
    /// F at alpha = -1e3 (approaches the sample minimum).
    pub lo: f64,
    /// F at alpha = 1e-6 (approaches the sample mean).
    pub mean: f64,
    /// F at alpha = +1e3 (approaches the sample maximum).
    pub hi: f64,
}

pub fn alpha_limit_probe(costs: &[f64]) -> Result<LimitProbe> {
    Ok(LimitProbe {
        lo: cost::estimate_risk_sensitive(costs, -1e3, 1)?.value,
        mean: cost::estimate_risk_sensitive(costs, 1e-6, 1)?.value,
        hi: cost::estimate_risk_sensitive(costs, 1e3, 1)?.value,
    })
}

// ---------------------------------------------------------------------------
// Small-interaction stability sweep
// ---------------------------------------------------------------------------

/// Rule mapping the interaction scale `eps` to the risk parameter `alpha`.
/// The sweep requires `alpha(eps) -> 0` and `eps^2 / alpha(eps) -> 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum AlphaRule {
    /// `alpha = eps` (the default; satisfies both conditions).
    Identity,
    /// `alpha = factor * eps`.
    Scaled { factor: f64 },
    /// `alpha = eps^exponent`.
    Power { exponent: f64 },
}

impl AlphaRule {
    pub fn eval(&self, eps: f64) -> f64 {
        match self {
            AlphaRule::Identity => eps,
            AlphaRule::Scaled { factor } => factor * eps,
            AlphaRule::Power { exponent } => eps.powf(*exponent),
        }
    }
}

/// One cell of the stability sweep.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityRow {
    pub eps: f64,
    pub alpha: f64,
    /// True-model risk-neutral cost at this interaction scale.
    pub lhs: Estimate,
    /// Nominal risk-sensitive value F(alpha).
    pub risk_sensitive: Estimate,
    /// `(eps^2 / alpha) * KL(unit-scale model)`.
    pub kl_part: f64,
    pub rhs: f64,
    pub gap: f64,
    pub joint_se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    /// Relative entropy of the model at unit interaction scale; the kl part
    /// of every row scales it by `eps^2 / alpha` exactly.
    pub kl_unit: KLEstimate,
    pub rows: Vec<StabilityRow>,
}

/// Sweep the interaction scale `eps` downward with `alpha = rule(eps)` and
/// report the certified gap at each scale.
///
/// The model's interaction must be the control-proportional form; each cell
/// replaces its scale by the scheduled `eps`. The bound's entropy term uses
/// the unit-scale KL measured once, so its `eps^2 / alpha` scaling across
/// rows is exact by construction.
#[allow(clippy::too_many_arguments)]
pub fn stability_sweep(
    spec: &ModelSpec,
    policy: &PolicySpec,
    cost_spec: &CostSpec,
    grid: &TimeGrid,
    eps_schedule: &[f64],
    rule: AlphaRule,
    n_paths: usize,
    seed: u64,
) -> Result<StabilityReport> {
    if eps_schedule.len() < 2 {
        return Err(Error::InvalidParameter(
            "eps schedule needs at least two scales".to_string(),
        ));
    }
    if !matches!(spec.interaction, Interaction::ControlScaled { .. }) {
        return Err(Error::UnsupportedInteraction {
            reason: "stability sweep requires the control-proportional interaction".to_string(),
        });
    }
    if eps_schedule.windows(2).any(|w| w[1] >= w[0]) || eps_schedule.iter().any(|e| *e <= 0.0) {
        return Err(Error::InvalidParameter(
            "eps schedule must be positive and strictly decreasing".to_string(),
        ));
    }

    // Precondition on the rule: alpha and eps^2/alpha must both vanish along
    // the schedule.
    let alphas: Vec<f64> = eps_schedule.iter().map(|&e| rule.eval(e)).collect();
    let ratios: Vec<f64> = eps_schedule
        .iter()
        .zip(&alphas)
        .map(|(e, a)| e * e / a)
        .collect();
    let strictly_decreasing = |xs: &[f64]| xs.windows(2).all(|w| w[1] < w[0] * (1.0 - 1e-12));
    if alphas.iter().any(|a| !(*a > 0.0))
        || !strictly_decreasing(&alphas)
        || !strictly_decreasing(&ratios)
    {
        return Err(Error::NonVanishingAlphaRule {
            reason: format!("alphas {alphas:?}, eps^2/alpha {ratios:?} must both decrease"),
        });
    }

    // KL budget of the unit-scale model, measured once.
    let mut unit_spec = spec.clone();
    unit_spec.interaction = Interaction::ControlScaled { eps: 1.0 };
    let kl_unit = measure::kl_divergence(
        &unit_spec,
        policy,
        grid,
        n_paths,
        derive_seed(seed, "stability-kl-unit", 0),
    )?;

    let mut rows = Vec::with_capacity(eps_schedule.len());
    for (i, (&eps, &alpha)) in eps_schedule.iter().zip(&alphas).enumerate() {
        let mut eps_spec = spec.clone();
        eps_spec.interaction = Interaction::ControlScaled { eps };

        let true_costs = cost::simulate_costs(
            &eps_spec,
            policy,
            cost_spec,
            grid,
            n_paths,
            derive_seed(seed, "stability-true", i as u64),
            true,
        )?;
        let lhs = stats::mean_se(&true_costs)?;

        let nominal_costs = cost::simulate_costs(
            &eps_spec,
            policy,
            cost_spec,
            grid,
            n_paths,
            derive_seed(seed, "stability-nominal", i as u64),
            false,
        )?;
        let risk_sensitive = cost::estimate_risk_sensitive(&nominal_costs, alpha, 1)?;

        let scale = eps * eps / alpha;
        let kl_part = scale * kl_unit.total_kl;
        let rhs = risk_sensitive.value + kl_part;
        let gap = rhs - lhs.value;
        let joint_se = (lhs.standard_error.powi(2)
            + risk_sensitive.standard_error.powi(2)
            + (scale * kl_unit.standard_error).powi(2))
        .sqrt();
        rows.push(StabilityRow {
            eps,
            alpha,
            lhs,
            risk_sensitive,
            kl_part,
            rhs,
            gap,
            joint_se,
        });
    }

    Ok(StabilityReport { kl_unit, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{CostVariant, RunningCost};
    use crate::rng::CounterRng;
    use crate::sde::{Diffusion, Drift, ModelVariant};
    use approx::assert_abs_diff_eq;

    fn gaussian_costs(n: usize, m: f64, s: f64, seed: u64) -> Vec<f64> {
        let rng = CounterRng::new(seed);
        (0..n).map(|i| m + s * rng.normal(i, 0, 0)).collect()
    }

    #[test]
    fn psi_deterministic_closed_form() {
        let costs = vec![3.0; 32];
        for alpha in [0.5, 1.0, 4.0] {
            let e = psi_value(&costs, alpha, 0.8).unwrap();
            assert_abs_diff_eq!(e.value, 3.0 + 0.8 / alpha, epsilon = 1e-9);
        }
    }

    #[test]
    fn psi_zero_budget_is_monotone_in_alpha() {
        let costs = gaussian_costs(5_000, 1.0, 0.7, 5);
        let mut last = f64::NEG_INFINITY;
        for alpha in [0.1, 0.3, 1.0, 3.0, 10.0] {
            let v = psi_value(&costs, alpha, 0.0).unwrap().value;
            assert!(v >= last - 1e-12, "psi not monotone at alpha {alpha}");
            last = v;
        }
    }

    #[test]
    fn gaussian_alpha_star_oracle() {
        // psi(a) = m + a s^2/2 + R/a is minimized at a* = sqrt(2R)/s with
        // psi* = m + s sqrt(2R) and tilt KL = R.
        let (m, s, r) = (0.0, 1.0, 0.5);
        let costs = gaussian_costs(100_000, m, s, 99);
        let cert = optimize_alpha(&costs, r, 1e-3).unwrap();
        assert!(cert.boundary.is_none());
        let expected_alpha = (2.0 * r).sqrt() / s;
        assert!(
            (cert.alpha_star - expected_alpha).abs() < 0.05 * expected_alpha,
            "alpha* {} vs {}",
            cert.alpha_star,
            expected_alpha
        );
        let expected_psi = m + s * (2.0 * r).sqrt();
        assert!(
            (cert.psi_star.value - expected_psi).abs()
                < 3.0 * cert.psi_star.standard_error + 0.02,
            "psi* {} vs {}",
            cert.psi_star.value,
            expected_psi
        );
        assert!((cert.tilted_kl - r).abs() < 0.02, "kl {}", cert.tilted_kl);
        assert!(cert.certificate_ok, "certificate: {cert:?}");
    }

    #[test]
    fn degenerate_costs_hit_boundary() {
        let cert = optimize_alpha(&[2.5; 16], 0.3, 1e-3).unwrap();
        assert_eq!(cert.boundary, Some(AlphaBoundary::DegenerateCosts));
        assert_abs_diff_eq!(cert.psi_star.value, 2.5, epsilon = 1e-12);
        assert!(cert.alpha_star.is_infinite());
    }

    #[test]
    fn zero_budget_hits_boundary_with_mean_value() {
        let costs = gaussian_costs(10_000, 1.2, 0.4, 8);
        let cert = optimize_alpha(&costs, 0.0, 1e-3).unwrap();
        assert_eq!(cert.boundary, Some(AlphaBoundary::ZeroBudget));
        let mean = stats::mean_se(&costs).unwrap();
        assert_abs_diff_eq!(cert.psi_star.value, mean.value, epsilon = 1e-12);
    }

    #[test]
    fn optimizing_alpha_never_worsens_psi_at_one() {
        let costs = gaussian_costs(20_000, 0.5, 0.8, 21);
        for r in [0.05, 0.2, 1.0] {
            let cert = optimize_alpha(&costs, r, 1e-3).unwrap();
            let at_one = psi_value(&costs, 1.0, r).unwrap();
            assert!(
                cert.psi_star.value <= at_one.value + 1e-3 * (1.0 + at_one.value.abs()),
                "psi* {} > psi(1) {}",
                cert.psi_star.value,
                at_one.value
            );
        }
    }

    #[test]
    fn limit_probe_two_point_sample() {
        let costs: Vec<f64> = (0..1000).map(|i| (i % 2) as f64).collect();
        let p = alpha_limit_probe(&costs).unwrap();
        assert!((p.hi - 1.0).abs() < 0.01, "hi {}", p.hi);
        assert!(p.lo.abs() < 0.01, "lo {}", p.lo);
        assert!((p.mean - 0.5).abs() < 0.01, "mean {}", p.mean);
    }

    #[test]
    fn limit_probe_constant_sample() {
        let p = alpha_limit_probe(&[1.7; 64]).unwrap();
        assert_abs_diff_eq!(p.lo, 1.7, epsilon = 1e-9);
        assert_abs_diff_eq!(p.mean, 1.7, epsilon = 1e-9);
        assert_abs_diff_eq!(p.hi, 1.7, epsilon = 1e-9);
    }

    #[test]
    fn limit_probe_uniform_order_statistics() {
        let rng = CounterRng::new(2);
        let costs: Vec<f64> = (0..100_000)
            .map(|i| rng.uniform(i, 0, 0, 0.0, 1.0))
            .collect();
        let p = alpha_limit_probe(&costs).unwrap();
        let max = costs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(p.hi >= 0.99 && p.hi <= max + 1e-12);
    }

    fn stability_spec() -> (ModelSpec, PolicySpec, CostSpec, TimeGrid) {
        let spec = ModelSpec {
            n_agents: 2,
            drift: Drift::Linear {
                state_coeff: -1.0,
                control_coeff: 1.0,
            },
            diffusion: Diffusion::Constant { sigma: 1.0 },
            interaction: Interaction::ControlScaled { eps: 1.0 },
            variant: ModelVariant::A,
            meanfield_drift: None,
            initial_states: vec![1.0],
        };
        let policy = PolicySpec::shared(0.0, -0.5, -2.0, 2.0);
        let cost = CostSpec::new(
            RunningCost::Quadratic {
                x_weight: 1.0,
                u_weight: 0.1,
            },
            CostVariant::MeanFieldSymmetric,
        );
        (spec, policy, cost, TimeGrid::new(1.0, 0.01).unwrap())
    }

    #[test]
    fn stability_rejects_non_vanishing_rule() {
        let (spec, policy, cost, grid) = stability_spec();
        let err = stability_sweep(
            &spec,
            &policy,
            &cost,
            &grid,
            &[0.4, 0.2, 0.1],
            AlphaRule::Power { exponent: 2.0 },
            200,
            1,
        );
        assert!(matches!(err, Err(Error::NonVanishingAlphaRule { .. })));
    }

    #[test]
    fn stability_kl_part_scaling_is_exact() {
        let (spec, policy, cost, grid) = stability_spec();
        let report = stability_sweep(
            &spec,
            &policy,
            &cost,
            &grid,
            &[0.4, 0.2, 0.1, 0.05],
            AlphaRule::Identity,
            500,
            7,
        )
        .unwrap();
        // With alpha = eps the kl part is eps * KL(unit): it halves per step
        // exactly because the unit KL is measured once.
        for w in report.rows.windows(2) {
            assert_abs_diff_eq!(w[1].kl_part, 0.5 * w[0].kl_part, epsilon = 1e-12);
        }
        for row in &report.rows {
            assert_abs_diff_eq!(
                row.kl_part,
                row.eps * report.kl_unit.total_kl,
                epsilon = 1e-12
            );
        }
    }
}
