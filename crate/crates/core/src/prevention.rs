//! Effort controls: frequency impact, severity impact, and their costs.
//!
//! A strategy chooses two effort levels at each instant: `u1` reduces the
//! claim *frequency* (the arrival intensity is multiplied by `gamma1(u1)`),
//! `u2` reduces the claim *severity* (each loss is multiplied by
//! `gamma2(u2)`). Both efforts accrue running costs `c1(u1)` and `c2(u2)`
//! per unit time. Impact functions are decreasing from `gamma(0) = 1`;
//! cost functions are increasing from `c(0) = 0`.
//!
//! `check_convexity_conditions` verifies the sufficient conditions under
//! which the pointwise effort optimization is jointly convex (so the
//! first-order approach is sound): convex costs, log-convexity of the
//! frequency impact (`gamma'' gamma >= (gamma')^2`), and the curvature
//! bound `gamma1'' <= (eta / L) c1''` tying the impact's second derivative
//! to the cost's, where `L` bounds the intensity. The conditions apply to
//! severity impacts of the form `1 - u` (or none at all); other shapes
//! fall outside the gate and are reported as not applicable.

use std::fmt;
use std::sync::Arc;

// ---------------------------------------------------------------------------
// Impact functions gamma(u): effect of effort on frequency or severity
// ---------------------------------------------------------------------------

/// Multiplicative effect of one effort coordinate, with two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImpactFn {
    /// `e^{-alpha u}` — exponentially diminishing returns.
    ExpDecay { alpha: f64 },
    /// `1 / (1 + u)`.
    Hyperbolic,
    /// `1 - u` on [0, 1) — proportional reduction, severity use chiefly.
    LinearDown,
    /// Constantly `1` — effort has no effect on this coordinate.
    One,
    /// `1 + slope * u` with `slope >= 0` — for adversarial test scenarios
    /// where "effort" worsens the outcome; never admissible as a control.
    AffineUp { slope: f64 },
}

impl ImpactFn {
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            ImpactFn::ExpDecay { alpha } => (-alpha * u).exp(),
            ImpactFn::Hyperbolic => 1.0 / (1.0 + u),
            ImpactFn::LinearDown => 1.0 - u,
            ImpactFn::One => 1.0,
            ImpactFn::AffineUp { slope } => 1.0 + slope * u,
        }
    }

    pub fn d1(&self, u: f64) -> f64 {
        match *self {
            ImpactFn::ExpDecay { alpha } => -alpha * (-alpha * u).exp(),
            ImpactFn::Hyperbolic => {
                let d = 1.0 + u;
                -1.0 / (d * d)
            }
            ImpactFn::LinearDown => -1.0,
            ImpactFn::One => 0.0,
            ImpactFn::AffineUp { slope } => slope,
        }
    }

    pub fn d2(&self, u: f64) -> f64 {
        match *self {
            ImpactFn::ExpDecay { alpha } => alpha * alpha * (-alpha * u).exp(),
            ImpactFn::Hyperbolic => {
                let d = 1.0 + u;
                2.0 / (d * d * d)
            }
            ImpactFn::LinearDown | ImpactFn::One => 0.0,
            ImpactFn::AffineUp { .. } => 0.0,
        }
    }

    /// Largest effort at which this impact is still nonnegative
    /// (`1 - u` reaches zero at 1 and would go negative beyond).
    pub fn effort_cap(&self) -> f64 {
        match *self {
            ImpactFn::LinearDown => 1.0,
            _ => f64::INFINITY,
        }
    }

    /// Largest effort usable when the impact must stay strictly positive —
    /// required of frequency impacts, which scale the arrival intensity and
    /// enter likelihood weights through their logarithm.
    pub fn positive_cap(&self) -> f64 {
        match *self {
            ImpactFn::LinearDown => 1.0 - 1e-9,
            _ => f64::INFINITY,
        }
    }
}

impl fmt::Display for ImpactFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ImpactFn::ExpDecay { alpha } => write!(f, "exp(-{alpha} u)"),
            ImpactFn::Hyperbolic => write!(f, "1/(1+u)"),
            ImpactFn::LinearDown => write!(f, "1-u"),
            ImpactFn::One => write!(f, "1"),
            ImpactFn::AffineUp { slope } => write!(f, "1+{slope} u"),
        }
    }
}

// ---------------------------------------------------------------------------
// Cost functions c(u)
// ---------------------------------------------------------------------------

/// Running cost of one effort coordinate, with two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostFn {
    /// `scale * u^2`
    Quadratic { scale: f64 },
    /// `scale * ((1 + u)^2 - 1)` — quadratic with positive slope at zero.
    ShiftedQuadratic { scale: f64 },
    /// `intercept + slope * u`, zero-effort cost forced to zero in specs.
    Affine { intercept: f64, slope: f64 },
    /// No cost.
    Zero,
}

impl CostFn {
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            CostFn::Quadratic { scale } => scale * u * u,
            CostFn::ShiftedQuadratic { scale } => scale * ((1.0 + u) * (1.0 + u) - 1.0),
            CostFn::Affine { intercept, slope } => intercept + slope * u,
            CostFn::Zero => 0.0,
        }
    }

    pub fn d1(&self, u: f64) -> f64 {
        match *self {
            CostFn::Quadratic { scale } => 2.0 * scale * u,
            CostFn::ShiftedQuadratic { scale } => 2.0 * scale * (1.0 + u),
            CostFn::Affine { slope, .. } => slope,
            CostFn::Zero => 0.0,
        }
    }

    pub fn d2(&self, _u: f64) -> f64 {
        match *self {
            CostFn::Quadratic { scale } | CostFn::ShiftedQuadratic { scale } => 2.0 * scale,
            CostFn::Affine { .. } | CostFn::Zero => 0.0,
        }
    }
}

impl fmt::Display for CostFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            CostFn::Quadratic { scale } => write!(f, "{scale} u^2"),
            CostFn::ShiftedQuadratic { scale } => write!(f, "{scale} ((1+u)^2 - 1)"),
            CostFn::Affine { intercept, slope } => write!(f, "{intercept} + {slope} u"),
            CostFn::Zero => write!(f, "0"),
        }
    }
}

// ---------------------------------------------------------------------------
// Effort, strategy, and the full problem specification
// ---------------------------------------------------------------------------

/// One joint effort choice.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Effort {
    pub u1: f64,
    pub u2: f64,
}

impl Effort {
    pub const NULL: Effort = Effort { u1: 0.0, u2: 0.0 };

    pub fn new(u1: f64, u2: f64) -> Self {
        Effort { u1, u2 }
    }
}

/// A strategy maps (time, current pre-effort intensity) to an effort pair.
#[derive(Clone)]
pub enum StrategyFunction {
    /// Same effort at all times.
    Constant(Effort),
    /// Piecewise-constant in time: effort `efforts[i]` applies on
    /// `[times[i], times[i+1])` with `times[0] = 0`.
    TimeTable { times: Vec<f64>, efforts: Vec<Effort> },
    /// General feedback rule on (time, intensity).
    Markovian(Arc<dyn Fn(f64, f64) -> Effort + Send + Sync>),
}

impl StrategyFunction {
    pub fn null() -> Self {
        StrategyFunction::Constant(Effort::NULL)
    }

    pub fn eval(&self, t: f64, intensity: f64) -> Effort {
        match self {
            StrategyFunction::Constant(e) => *e,
            StrategyFunction::TimeTable { times, efforts } => {
                // partition_point: index of first breakpoint > t, minus one
                let idx = times.partition_point(|&s| s <= t).saturating_sub(1);
                efforts[idx.min(efforts.len() - 1)]
            }
            StrategyFunction::Markovian(f) => f(t, intensity),
        }
    }

    /// True when the effort depends on the intensity, not just time —
    /// those strategies need quadrature rather than exact piecewise
    /// integration in likelihood and wealth computations.
    pub fn is_feedback(&self) -> bool {
        matches!(self, StrategyFunction::Markovian(_))
    }
}

impl fmt::Debug for StrategyFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyFunction::Constant(e) => write!(f, "Constant({e:?})"),
            StrategyFunction::TimeTable { times, .. } => {
                write!(f, "TimeTable({} pieces)", times.len())
            }
            StrategyFunction::Markovian(_) => write!(f, "Markovian(<closure>)"),
        }
    }
}

/// Everything that defines one protection problem besides the risk model:
/// impact and cost shapes, risk aversion, discounting, horizon, capital.
#[derive(Debug, Clone)]
pub struct PreventionSpec {
    /// Box constraint `u1 in [0, zeta1]`.
    pub zeta1: f64,
    /// Box constraint `u2 in [0, zeta2]`.
    pub zeta2: f64,
    pub gamma1: ImpactFn,
    pub gamma2: ImpactFn,
    pub c1: CostFn,
    pub c2: CostFn,
    /// Absolute risk aversion of the exponential utility, > 0.
    pub eta: f64,
    /// Riskless rate (may be zero).
    pub r: f64,
    /// Terminal time `T > 0`.
    pub horizon: f64,
    /// Initial capital.
    pub x0: f64,
}

impl PreventionSpec {
    /// Combined running cost at an effort pair.
    pub fn total_cost(&self, e: Effort) -> f64 {
        self.c1.eval(e.u1) + self.c2.eval(e.u2)
    }

    /// `eta * e^{r (T - t)}` — the capitalized risk-aversion factor that
    /// multiplies time-`t` cash flows in the exponential criterion.
    pub fn eta_capitalized(&self, t: f64) -> f64 {
        self.eta * (self.r * (self.horizon - t)).exp()
    }

    /// Clamp an effort pair into the admissible box. Frequency effort is
    /// additionally kept strictly below any zero of `gamma1`; severity
    /// effort may reach full mitigation (`gamma2 = 0`).
    pub fn clamp(&self, e: Effort) -> Effort {
        let cap1 = self.zeta1.min(self.gamma1.positive_cap());
        let cap2 = self.zeta2.min(self.gamma2.effort_cap());
        Effort { u1: e.u1.clamp(0.0, cap1.max(0.0)), u2: e.u2.clamp(0.0, cap2.max(0.0)) }
    }

    /// Upper corner of the admissible effort box after impact caps.
    pub fn effort_box(&self) -> (f64, f64) {
        let c = self.clamp(Effort::new(f64::INFINITY, f64::INFINITY));
        (c.u1, c.u2)
    }
}

/// Structural checks on a spec; returns human-readable violations
/// (empty means clean). Evaluated on a 1000-point grid plus endpoints.
pub fn validate_spec(spec: &PreventionSpec) -> Vec<String> {
    let mut problems = Vec::new();
    if !(spec.eta > 0.0) {
        problems.push(format!("risk aversion eta = {} must be > 0", spec.eta));
    }
    if !(spec.horizon > 0.0) {
        problems.push(format!("horizon T = {} must be > 0", spec.horizon));
    }
    if spec.zeta1 < 0.0 || spec.zeta2 < 0.0 {
        problems.push("effort bounds must be nonnegative".into());
    }
    if !spec.r.is_finite() || !spec.x0.is_finite() {
        problems.push("rate and initial capital must be finite".into());
    }
    if matches!(spec.gamma2, ImpactFn::LinearDown) && spec.zeta2 > 1.0 {
        problems.push(format!(
            "severity impact 1-u needs effort bound <= 1, got zeta2 = {}",
            spec.zeta2
        ));
    }
    if matches!(spec.gamma1, ImpactFn::LinearDown) && spec.zeta1 >= 1.0 {
        problems.push(format!(
            "frequency impact 1-u must stay positive, so its bound must be < 1, got zeta1 = {}",
            spec.zeta1
        ));
    }

    let grid = |cap: f64| -> Vec<f64> {
        let hi = cap.min(10.0);
        (0..=1000).map(|i| hi * i as f64 / 1000.0).collect()
    };
    // frequency impact must stay strictly positive; severity may reach 0
    for (name, g, cap, lower_open) in [
        ("gamma1", spec.gamma1, spec.zeta1.min(spec.gamma1.positive_cap()), true),
        ("gamma2", spec.gamma2, spec.zeta2.min(spec.gamma2.effort_cap()), false),
    ] {
        if (g.eval(0.0) - 1.0).abs() > 1e-12 {
            problems.push(format!("{name}(0) = {} but impacts must start at 1", g.eval(0.0)));
        }
        for &u in &grid(cap.max(0.0)) {
            let v = g.eval(u);
            let below = if lower_open { !(v > 0.0) } else { v < 0.0 };
            if below || v > 1.0 + 1e-12 {
                problems.push(format!("{name}({u}) = {v} out of range"));
                break;
            }
            if g.d1(u) > 1e-12 {
                problems.push(format!("{name} increasing at u = {u}"));
                break;
            }
        }
    }
    for (name, c, cap) in [("c1", spec.c1, spec.zeta1), ("c2", spec.c2, spec.zeta2)] {
        if c.eval(0.0).abs() > 1e-12 {
            problems.push(format!("{name}(0) = {} but costs must start at 0", c.eval(0.0)));
        }
        for &u in &grid(cap) {
            if c.eval(u) < -1e-12 {
                problems.push(format!("{name}({u}) < 0"));
                break;
            }
            if c.d1(u) < -1e-12 {
                problems.push(format!("{name} decreasing at u = {u}"));
                break;
            }
        }
    }
    problems
}

// ---------------------------------------------------------------------------
// Convexity conditions for the pointwise optimization
// ---------------------------------------------------------------------------

/// One inequality of the convexity gate, with its first violation if any.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConvexityCheck {
    pub passed: bool,
    /// Effort value at the first grid violation.
    pub first_violation: Option<f64>,
    pub detail: String,
}

impl ConvexityCheck {
    fn pass(detail: impl Into<String>) -> Self {
        ConvexityCheck { passed: true, first_violation: None, detail: detail.into() }
    }

    fn fail(at: f64, detail: impl Into<String>) -> Self {
        ConvexityCheck { passed: false, first_violation: Some(at), detail: detail.into() }
    }
}

/// Outcome of the sufficient-conditions check for joint convexity of the
/// pointwise effort optimization.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConvexityReport {
    /// The gate only covers severity impacts `1 - u` (with box inside
    /// [0, 1)) or `gamma2 = 1`; other shapes report `applicable = false`.
    pub applicable: bool,
    pub not_applicable_reason: Option<String>,
    /// Intensity bound `L` used by the curvature condition.
    pub intensity_bound: Option<f64>,
    /// Costs convex and frequency impact strictly convex.
    pub cost_convexity: ConvexityCheck,
    /// `gamma1'' gamma1 >= (gamma1')^2` — log-convexity of the frequency
    /// impact (equality allowed: `e^{-alpha u}` sits exactly on it).
    pub log_convexity: ConvexityCheck,
    /// `gamma1'' <= (eta / L) c1''` — impact curvature dominated by cost
    /// curvature relative to the intensity bound.
    pub curvature_bound: ConvexityCheck,
}

impl ConvexityReport {
    pub fn all_pass(&self) -> bool {
        self.applicable
            && self.cost_convexity.passed
            && self.log_convexity.passed
            && self.curvature_bound.passed
    }
}

/// Check the sufficient conditions for joint convexity of the pointwise
/// effort optimization on a 2001-point effort grid.
///
/// `intensity_bound` is the uniform bound `L` on the pre-effort intensity;
/// pass `None` for unbounded models (the curvature condition then cannot
/// be certified and the report comes back not applicable).
pub fn check_convexity_conditions(
    spec: &PreventionSpec,
    intensity_bound: Option<f64>,
) -> ConvexityReport {
    let not_applicable = |reason: String| ConvexityReport {
        applicable: false,
        not_applicable_reason: Some(reason),
        intensity_bound,
        cost_convexity: ConvexityCheck::pass("not evaluated"),
        log_convexity: ConvexityCheck::pass("not evaluated"),
        curvature_bound: ConvexityCheck::pass("not evaluated"),
    };

    // The joint-convexity argument is specific to severity impacts that are
    // affine in the effort (1 - u on [0, 1]) or absent entirely.
    match spec.gamma2 {
        ImpactFn::LinearDown => {
            if spec.zeta2 > 1.0 {
                return not_applicable(format!(
                    "severity box [0, {}] leaves the domain of 1-u",
                    spec.zeta2
                ));
            }
        }
        ImpactFn::One => {}
        other => {
            return not_applicable(format!(
                "conditions cover severity impact 1-u or 1, not {other}"
            ));
        }
    }
    let lam_bound = match intensity_bound {
        Some(l) if l > 0.0 => l,
        _ => {
            return not_applicable(
                "curvature condition needs a finite intensity bound".into(),
            );
        }
    };

    let n = 2000usize;
    let (cap1, cap2) = spec.effort_box();
    let grid1: Vec<f64> = (0..=n).map(|i| cap1 * i as f64 / n as f64).collect();
    let grid2: Vec<f64> = (0..=n).map(|i| cap2 * i as f64 / n as f64).collect();

    // (ii) convex costs, strictly convex frequency impact
    let mut cost_convexity = ConvexityCheck::pass(format!(
        "c1'' >= 0, c2'' >= 0, gamma1'' > 0 on [0, {cap1:.4}] x [0, {cap2:.4}]"
    ));
    for &u in &grid1 {
        if spec.c1.d2(u) < 0.0 {
            cost_convexity = ConvexityCheck::fail(u, format!("c1''({u}) = {} < 0", spec.c1.d2(u)));
            break;
        }
        if spec.gamma1.d2(u) <= 0.0 {
            cost_convexity =
                ConvexityCheck::fail(u, format!("gamma1''({u}) = {} not > 0", spec.gamma1.d2(u)));
            break;
        }
    }
    if cost_convexity.passed {
        for &u in &grid2 {
            if spec.c2.d2(u) < 0.0 {
                cost_convexity =
                    ConvexityCheck::fail(u, format!("c2''({u}) = {} < 0", spec.c2.d2(u)));
                break;
            }
        }
    }

    // (iii) gamma1'' gamma1 >= (gamma1')^2, up to relative rounding slack:
    // e^{-alpha u} satisfies it with exact equality and must pass.
    let mut log_convexity = ConvexityCheck::pass("gamma1'' gamma1 >= (gamma1')^2".to_string());
    for &u in &grid1 {
        let lhs = spec.gamma1.d2(u) * spec.gamma1.eval(u);
        let rhs = spec.gamma1.d1(u) * spec.gamma1.d1(u);
        if lhs < rhs - 1e-12 * rhs.abs().max(1.0) {
            log_convexity = ConvexityCheck::fail(u, format!("{lhs} < {rhs} at u = {u}"));
            break;
        }
    }

    // (iv) gamma1'' <= (eta / L) c1''
    let factor = spec.eta / lam_bound;
    let mut curvature_bound =
        ConvexityCheck::pass(format!("gamma1'' <= {factor:.6} c1''"));
    for &u in &grid1 {
        let lhs = spec.gamma1.d2(u);
        let rhs = factor * spec.c1.d2(u);
        if lhs > rhs + 1e-12 * rhs.abs().max(1.0) {
            curvature_bound = ConvexityCheck::fail(u, format!("{lhs} > {rhs} at u = {u}"));
            break;
        }
    }

    ConvexityReport {
        applicable: true,
        not_applicable_reason: None,
        intensity_bound,
        cost_convexity,
        log_convexity,
        curvature_bound,
    }
}
