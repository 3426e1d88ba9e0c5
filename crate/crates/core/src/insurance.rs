//! Proportional claim transfer with endogenous frequency effort.
//!
//! The agent keeps a fraction `theta` of every claim and cedes the rest
//! against an up-front premium; a fraction of that premium may be refunded
//! at the horizon. The retained-risk problem is a pure frequency-control
//! problem (the transfer already plays the severity-mitigation role), so
//! its value has the same exponential form as the joint problem but with
//! the claim law scaled by `theta` and no severity effort:
//!
//! ```text
//! psi1(t, u1)    = eta e^{r(T-t)} c1(u1)
//!                + gamma1(u1) lambda (E[e^{eta e^{r(T-t)} theta Z}] - 1),
//! phi_theta(0)   = exp( int_0^T min_{u1} psi1(s, u1) ds ),
//! inner value    = e^{-eta xi} phi_theta(0),
//! full objective = e^{eta e^{rT} (premium(theta) - x0)} * inner value,
//! ```
//!
//! minimized over `theta` in `[0, 1]`. The scalar minimization (golden
//! section) and the forward composite-Simpson quadrature here are written
//! independently of the joint solver's Newton/backward routines, so the
//! `theta = 1` equivalence between the two modules is a genuine
//! cross-check rather than a tautology.
//!
//! The severity-effort fields of the problem data (`gamma2`, `c2`) are
//! ignored by construction throughout this module.

use serde::Serialize;

use crate::error::Error;
use crate::prevention::PreventionSpec;
use crate::risk_models::ClaimDistribution;

// ---------------------------------------------------------------------------
// Premium rules
// ---------------------------------------------------------------------------

/// How the up-front premium for ceding `1 - theta` of every claim is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PremiumRule {
    /// Discounted expected ceded losses at a reference claim frequency,
    /// grossed up by a proportional loading:
    /// `(1 + loading) (1 - theta) E[Z] * reference_intensity * T * e^{-rT}`.
    ExpectedValue { loading: f64, reference_intensity: f64 },
    /// Free coverage (useful for isolating the inner problem).
    Zero,
}

impl PremiumRule {
    /// Premium due at time zero for retention `theta`.
    pub fn premium(&self, theta: f64, dist: &ClaimDistribution, horizon: f64, r: f64) -> f64 {
        match *self {
            PremiumRule::ExpectedValue { loading, reference_intensity } => {
                (1.0 + loading)
                    * (1.0 - theta)
                    * dist.mean()
                    * reference_intensity
                    * horizon
                    * (-r * horizon).exp()
            }
            PremiumRule::Zero => 0.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Problem and solutions
// ---------------------------------------------------------------------------

/// A proportional-transfer problem at constant claim frequency.
#[derive(Debug, Clone)]
pub struct InsuranceProblem {
    pub spec: PreventionSpec,
    /// Constant pre-effort claim intensity.
    pub lambda: f64,
    pub dist: ClaimDistribution,
    pub premium: PremiumRule,
    /// Fraction of the premium returned (capitalized) at the horizon,
    /// in `[0, 1]`.
    pub refund_fraction: f64,
    /// Time-grid node count for the inner quadrature (even).
    pub grid_m: usize,
}

/// Inner (retained-risk) solution at one retention level.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub theta: f64,
    /// Uniform time nodes `0 = t_0 < ... < t_M = T`.
    pub times: Vec<f64>,
    /// Optimal frequency effort at each node.
    pub u1_star: Vec<f64>,
    /// `exp(int_0^T min psi1 ds)`.
    pub phi0: f64,
    /// Horizon-time premium refund entering the terminal wealth.
    pub xi: f64,
    /// `e^{-eta xi} * phi0`.
    pub value: f64,
    /// Time average of the optimal effort.
    pub mean_effort: f64,
}

/// One evaluated retention level of the outer problem.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RetentionPoint {
    pub theta: f64,
    pub premium: f64,
    pub xi: f64,
    /// Inner value `e^{-eta xi} phi_theta(0)`.
    pub v_inner: f64,
    /// Full objective including premium and initial capital.
    pub objective: f64,
}

/// The scanned retention curve and its minimizer.
#[derive(Debug, Clone, Serialize)]
pub struct RetentionCurve {
    pub points: Vec<RetentionPoint>,
    pub theta_star: f64,
    pub objective_star: f64,
    /// Time-average optimal effort at the chosen retention.
    pub mean_effort_star: f64,
}

/// One row of a loading sweep.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StaticsRow {
    pub loading: f64,
    pub theta_star: f64,
    pub mean_effort: f64,
}

/// Golden-section minimization of a unimodal scalar function on `[lo, hi]`.
fn golden_minimize(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut a = lo;
    let mut b = hi;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if b - a <= 1e-13 * (hi - lo).max(1.0) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    // Snap to the boundary when the bracket closed onto it.
    if mid - lo <= 1e-12 {
        lo
    } else if hi - mid <= 1e-12 {
        hi
    } else {
        mid
    }
}

impl InsuranceProblem {
    pub fn new(
        spec: PreventionSpec,
        lambda: f64,
        dist: ClaimDistribution,
        premium: PremiumRule,
        refund_fraction: f64,
        grid_m: usize,
    ) -> Result<Self, Error> {
        if !(0.0..=1.0).contains(&refund_fraction) || !refund_fraction.is_finite() {
            return Err(Error::InvalidParameter {
                what: format!("refund fraction must lie in [0, 1], got {refund_fraction}"),
            });
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter {
                what: format!("claim intensity must be a positive rate, got {lambda}"),
            });
        }
        if grid_m < 2 || grid_m % 2 != 0 {
            return Err(Error::Precondition {
                what: format!("inner quadrature needs an even node count >= 2, got {grid_m}"),
            });
        }
        if let PremiumRule::ExpectedValue { loading, reference_intensity } = premium {
            if loading < 0.0 || !loading.is_finite() {
                return Err(Error::InvalidParameter {
                    what: format!("premium loading must be nonnegative, got {loading}"),
                });
            }
            if reference_intensity < 0.0 || !reference_intensity.is_finite() {
                return Err(Error::InvalidParameter {
                    what: format!(
                        "premium reference intensity must be nonnegative, got {reference_intensity}"
                    ),
                });
            }
        }
        Ok(Self { spec, lambda, dist, premium, refund_fraction, grid_m })
    }

    /// Premium due at time zero for retention `theta`.
    pub fn premium_of(&self, theta: f64) -> f64 {
        self.premium.premium(theta, &self.dist, self.spec.horizon, self.spec.r)
    }

    /// Horizon-time refund `xi = refund_fraction * premium * e^{rT}`.
    pub fn refund_of(&self, theta: f64) -> f64 {
        self.refund_fraction * self.premium_of(theta) * (self.spec.r * self.spec.horizon).exp()
    }

    /// Solve the retained-risk problem at retention `theta`: minimize the
    /// frequency rate node by node and integrate it forward by composite
    /// Simpson.
    pub fn value_inner(&self, theta: f64) -> Result<InnerSolution, Error> {
        if !(0.0..=1.0).contains(&theta) || !theta.is_finite() {
            return Err(Error::InvalidParameter {
                what: format!("retention must lie in [0, 1], got {theta}"),
            });
        }
        let spec = &self.spec;
        let m = self.grid_m;
        let horizon = spec.horizon;
        let h = horizon / m as f64;
        let times: Vec<f64> = (0..=m).map(|j| horizon * j as f64 / m as f64).collect();
        let retained = if theta > 0.0 { Some(self.dist.scaled(theta)?) } else { None };
        let cap1 = spec.effort_box().0;

        let mut psi_star = Vec::with_capacity(m + 1);
        let mut u1_star = Vec::with_capacity(m + 1);
        for &t in &times {
            let ec = spec.eta_capitalized(t);
            // Retained-claim exponential moment; exactly one for full cover.
            let excess = match &retained {
                Some(law) => law.mgf(ec)? - 1.0,
                None => 0.0,
            };
            let rate = |u1: f64| ec * spec.c1.eval(u1) + spec.gamma1.eval(u1) * self.lambda * excess;
            let u1 = golden_minimize(&rate, 0.0, cap1);
            psi_star.push(rate(u1));
            u1_star.push(u1);
        }

        // Forward composite Simpson over [0, T] for both integrals.
        let simpson = |vals: &[f64]| -> f64 {
            let mut acc = 0.0;
            let mut i = 0;
            while i + 2 <= m {
                acc += h / 3.0 * (vals[i] + 4.0 * vals[i + 1] + vals[i + 2]);
                i += 2;
            }
            acc
        };
        let integral = simpson(&psi_star);
        if !integral.is_finite() {
            return Err(Error::NonfiniteIntegral { context: "retained-risk rate integral" });
        }
        let phi0 = integral.exp();
        let mean_effort = simpson(&u1_star) / horizon;
        let xi = self.refund_of(theta);
        let value = (-spec.eta * xi).exp() * phi0;
        Ok(InnerSolution { theta, times, u1_star, phi0, xi, value, mean_effort })
    }

    /// Full objective at retention `theta`:
    /// `e^{eta e^{rT} (premium(theta) - x0)} * value_inner(theta)`.
    pub fn objective(&self, theta: f64) -> Result<f64, Error> {
        let inner = self.value_inner(theta)?;
        Ok(self.objective_from(&inner))
    }

    fn objective_from(&self, inner: &InnerSolution) -> f64 {
        let cap = (self.spec.r * self.spec.horizon).exp();
        (self.spec.eta * cap * (self.premium_of(inner.theta) - self.spec.x0)).exp() * inner.value
    }

    /// Scan retentions on a 101-point grid, refine with 21 points around
    /// the incumbent, and report the curve with its minimizer (ties break
    /// toward the smallest retention).
    pub fn optimal_retention(&self) -> Result<RetentionCurve, Error> {
        let coarse: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let mut points = Vec::with_capacity(coarse.len());
        let mut best: Option<RetentionPoint> = None;
        for &theta in &coarse {
            let inner = self.value_inner(theta)?;
            let pt = RetentionPoint {
                theta,
                premium: self.premium_of(theta),
                xi: inner.xi,
                v_inner: inner.value,
                objective: self.objective_from(&inner),
            };
            points.push(pt);
            if best.map_or(true, |b| pt.objective < b.objective) {
                best = Some(pt);
            }
        }
        let incumbent = best.expect("grid is nonempty");

        // Refine one coarse cell on each side of the incumbent.
        let lo = (incumbent.theta - 0.01).max(0.0);
        let hi = (incumbent.theta + 0.01).min(1.0);
        let mut best = incumbent;
        for i in 0..=20 {
            let theta = lo + (hi - lo) * i as f64 / 20.0;
            if coarse.iter().any(|&c| (c - theta).abs() <= 1e-12) {
                continue; // already evaluated on the coarse grid
            }
            let inner = self.value_inner(theta)?;
            let pt = RetentionPoint {
                theta,
                premium: self.premium_of(theta),
                xi: inner.xi,
                v_inner: inner.value,
                objective: self.objective_from(&inner),
            };
            if pt.objective < best.objective
                || (pt.objective == best.objective && pt.theta < best.theta)
            {
                best = pt;
            }
        }
        let mean_effort_star = self.value_inner(best.theta)?.mean_effort;
        Ok(RetentionCurve {
            points,
            theta_star: best.theta,
            objective_star: best.objective,
            mean_effort_star,
        })
    }

    /// Re-solve the outer problem across premium loadings (other data
    /// unchanged) and report the optimal retention and the time-average
    /// effort there.
    pub fn comparative_statics(&self, loadings: &[f64]) -> Result<Vec<StaticsRow>, Error> {
        let reference_intensity = match self.premium {
            PremiumRule::ExpectedValue { reference_intensity, .. } => reference_intensity,
            PremiumRule::Zero => {
                return Err(Error::NotApplicable {
                    reason: "a loading sweep needs an expected-value premium rule".into(),
                })
            }
        };
        let mut rows = Vec::with_capacity(loadings.len());
        for &loading in loadings {
            let problem = InsuranceProblem::new(
                self.spec.clone(),
                self.lambda,
                self.dist.clone(),
                PremiumRule::ExpectedValue { loading, reference_intensity },
                self.refund_fraction,
                self.grid_m,
            )?;
            let curve = problem.optimal_retention()?;
            rows.push(StaticsRow {
                loading,
                theta_star: curve.theta_star,
                mean_effort: curve.mean_effort_star,
            });
        }
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prevention::{CostFn, ImpactFn};
    use crate::solver::value_function_constant;

    /// Pure frequency-control data that passes the convexity conditions at
    /// the stated intensity, so the joint solver's Newton route is active
    /// in the cross-check.
    fn pure_frequency_spec() -> PreventionSpec {
        PreventionSpec {
            zeta1: 5.0,
            zeta2: 1.0,
            gamma1: ImpactFn::ExpDecay { alpha: 0.5 },
            gamma2: ImpactFn::One,
            c1: CostFn::Quadratic { scale: 1.0 },
            c2: CostFn::Zero,
            eta: 1.0,
            r: 0.03,
            horizon: 1.0,
            x0: 0.5,
        }
    }

    fn base_problem(loading: f64, refund: f64) -> InsuranceProblem {
        InsuranceProblem::new(
            pure_frequency_spec(),
            1.0,
            ClaimDistribution::exponential(10.0).unwrap(),
            PremiumRule::ExpectedValue { loading, reference_intensity: 1.0 },
            refund,
            256,
        )
        .unwrap()
    }

    #[test]
    fn full_retention_reproduces_the_joint_solver_value() {
        let problem = base_problem(0.2, 0.0);
        let inner = problem.value_inner(1.0).unwrap();
        let table =
            value_function_constant(&problem.spec, problem.lambda, &problem.dist, 256).unwrap();
        let joint = table.phi[0];
        assert_eq!(inner.xi, 0.0, "no refund configured");
        assert!(
            (inner.value - joint).abs() <= 1e-10 * joint.abs().max(1.0),
            "independent routes disagree: {} vs {joint}",
            inner.value
        );
        // The effort paths agree as well (same continuum minimizer).
        let mean_joint =
            table.u1.iter().sum::<f64>() / table.u1.len() as f64;
        assert!((inner.mean_effort - mean_joint).abs() <= 1e-4);
    }

    #[test]
    fn full_insurance_leaves_only_the_refund_factor() {
        let problem = base_problem(0.2, 0.6);
        let inner = problem.value_inner(0.0).unwrap();
        assert_eq!(inner.phi0, 1.0, "no retained risk and costless null effort");
        let want = (-problem.spec.eta * inner.xi).exp();
        assert!((inner.value - want).abs() <= 1e-12 * want);
        assert!(inner.u1_star.iter().all(|&u| u.abs() <= 1e-9));
        assert!(inner.xi > 0.0);
    }

    #[test]
    fn premium_formula_and_refund_capitalization() {
        let problem = base_problem(0.25, 0.5);
        let spec = &problem.spec;
        let mean_claim = problem.dist.mean();
        for &theta in &[0.0, 0.3, 1.0] {
            let want = 1.25
                * (1.0 - theta)
                * mean_claim
                * 1.0
                * spec.horizon
                * (-spec.r * spec.horizon).exp();
            let got = problem.premium_of(theta);
            assert!((got - want).abs() <= 1e-15 * want.max(1.0));
            let xi = problem.refund_of(theta);
            let cap = (spec.r * spec.horizon).exp();
            assert!((xi - 0.5 * got * cap).abs() <= 1e-15 * xi.max(1.0));
        }
        assert_eq!(problem.premium_of(1.0), 0.0, "full retention cedes nothing");
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let spec = pure_frequency_spec();
        let dist = ClaimDistribution::exponential(10.0).unwrap();
        let rule = PremiumRule::ExpectedValue { loading: 0.1, reference_intensity: 1.0 };
        for bad_refund in [-0.1, 1.5, f64::NAN] {
            assert!(matches!(
                InsuranceProblem::new(spec.clone(), 1.0, dist.clone(), rule, bad_refund, 64),
                Err(Error::InvalidParameter { .. })
            ));
        }
        assert!(matches!(
            InsuranceProblem::new(spec.clone(), 0.0, dist.clone(), rule, 0.0, 64),
            Err(Error::InvalidParameter { .. })
        ));
        assert!(matches!(
            InsuranceProblem::new(spec.clone(), 1.0, dist.clone(), rule, 0.0, 63),
            Err(Error::Precondition { .. })
        ));
        let bad_rule = PremiumRule::ExpectedValue { loading: -0.5, reference_intensity: 1.0 };
        assert!(matches!(
            InsuranceProblem::new(spec.clone(), 1.0, dist.clone(), bad_rule, 0.0, 64),
            Err(Error::InvalidParameter { .. })
        ));
        let problem = base_problem(0.1, 0.0);
        assert!(matches!(
            problem.value_inner(1.2),
            Err(Error::InvalidParameter { .. })
        ));
    }

    #[test]
    fn inner_value_grows_with_retention_when_refund_is_absent() {
        let problem = base_problem(0.2, 0.0);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=20 {
            let theta = i as f64 / 20.0;
            let v = problem.value_inner(theta).unwrap().value;
            assert!(
                v >= prev - 1e-12,
                "retaining more risk cannot improve the inner value: {v} < {prev} at {theta}"
            );
            prev = v;
        }
    }

    #[test]
    fn fair_premium_buys_full_cover_and_heavy_loading_kills_demand() {
        let fair = base_problem(0.0, 0.0);
        let curve = fair.optimal_retention().unwrap();
        assert_eq!(curve.theta_star, 0.0, "full insurance at actuarially fair price");

        let dear = base_problem(50.0, 0.0);
        let curve = dear.optimal_retention().unwrap();
        assert_eq!(curve.theta_star, 1.0, "overpriced cover is not bought");
    }

    #[test]
    fn retention_curve_is_self_consistent() {
        let problem = base_problem(0.8, 0.3);
        let curve = problem.optimal_retention().unwrap();
        assert_eq!(curve.points.len(), 101);
        for pt in &curve.points {
            assert!(curve.objective_star <= pt.objective + 1e-15);
            let re = problem.objective(pt.theta).unwrap();
            assert!((re - pt.objective).abs() <= 1e-12 * re.abs().max(1.0));
        }
        assert!((0.0..=1.0).contains(&curve.theta_star));
    }

    #[test]
    fn demand_for_cover_shrinks_as_the_loading_grows() {
        let problem = base_problem(0.0, 0.0);
        let rows = problem.comparative_statics(&[0.0, 2.0, 50.0]).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[0].theta_star <= rows[1].theta_star);
        assert!(rows[1].theta_star <= rows[2].theta_star);
        assert_eq!(rows[0].theta_star, 0.0);
        assert_eq!(rows[2].theta_star, 1.0);
        // More retained risk induces (weakly) more prevention effort.
        assert!(rows[0].mean_effort <= rows[2].mean_effort + 1e-9);

        let free = InsuranceProblem::new(
            problem.spec.clone(),
            problem.lambda,
            problem.dist.clone(),
            PremiumRule::Zero,
            0.0,
            64,
        )
        .unwrap();
        assert!(matches!(
            free.comparative_statics(&[0.1]),
            Err(Error::NotApplicable { .. })
        ));
    }
}
