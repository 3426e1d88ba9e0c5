//! Path simulation, likelihood weights, wealth functionals, and Monte
//! Carlo estimators of the exponential criterion.
//!
//! Claim arrivals are sampled by thinning: on each inter-event segment an
//! upper bound on the arrival intensity is exact or tight-by-monotonicity
//! (every implemented intensity moves monotonically toward its baseline
//! between events), candidate points come from a Poisson stream at the
//! bound, and a candidate at time `t` is accepted with probability
//! `gamma1(u1(t)) * lambda(t) / bound`. The same machinery simulates the
//! uncontrolled measure (null effort) and any controlled measure.
//!
//! Changing measure instead of changing the sampler is also supported: the
//! likelihood weight
//!
//! ```text
//! log L = -int_0^T (gamma1(u1_s) - 1) lambda_s ds + sum_i log gamma1(u1_{T_i})
//! ```
//!
//! turns uncontrolled paths into unbiased samples under the controlled
//! measure, giving two independent estimators of the same expectation —
//! a strong consistency check, exercised by the test suite.
//!
//! All randomness flows through per-path substreams, so path `i` is the
//! same regardless of thread count, and estimator reductions use a fixed
//! pairwise tree, so results are bit-identical for a given path count.

use crate::error::Error;
use crate::prevention::{Effort, ImpactFn, PreventionSpec, StrategyFunction};
use crate::risk_models::{
    intensity_at, ClaimDistribution, HistoryState, IntensityModel,
};
use crate::rng::{Channel, RandomStream};
use crate::stats;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::fmt;

// ---------------------------------------------------------------------------
// Intensity trace: exact piecewise representation of the pre-effort intensity
// ---------------------------------------------------------------------------

/// The realized pre-effort intensity as an exactly integrable function:
/// within each inter-node segment the value is either constant
/// (`alpha = 0`) or `baseline + (node value - baseline) e^{-alpha (t - node time)}`.
///
/// Nodes sit at time zero and at every event that moves the intensity
/// (claims under self-excitation, shocks, regime switches); the stored
/// value is the post-event one.
#[derive(Debug, Clone)]
pub struct IntensityTrace {
    nodes: Vec<(f64, f64)>,
    alpha: f64,
    baseline: f64,
}

impl IntensityTrace {
    pub(crate) fn new(initial: f64, alpha: f64, baseline: f64) -> Self {
        IntensityTrace { nodes: vec![(0.0, initial)], alpha, baseline }
    }

    pub(crate) fn push(&mut self, t: f64, v: f64) {
        debug_assert!(t >= self.nodes.last().unwrap().0);
        self.nodes.push((t, v));
    }

    pub fn nodes(&self) -> &[(f64, f64)] {
        &self.nodes
    }

    fn segment_index(&self, t: f64) -> usize {
        self.nodes.partition_point(|&(s, _)| s <= t).saturating_sub(1)
    }

    /// Intensity at `t >= 0`; at a node time this is the post-event value.
    pub fn value(&self, t: f64) -> f64 {
        let (t0, v0) = self.nodes[self.segment_index(t)];
        if self.alpha == 0.0 {
            v0
        } else {
            self.baseline + (v0 - self.baseline) * (-self.alpha * (t - t0)).exp()
        }
    }

    /// Exact `int_a^b lambda_s ds` (closed form per segment).
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        debug_assert!(a <= b, "integral bounds out of order: {a} > {b}");
        if b <= a {
            return 0.0;
        }
        let mut total = 0.0;
        let mut i = self.segment_index(a);
        let mut lo = a;
        while lo < b {
            let (t0, v0) = self.nodes[i];
            let hi = if i + 1 < self.nodes.len() { self.nodes[i + 1].0.min(b) } else { b };
            if hi > lo {
                if self.alpha == 0.0 {
                    total += v0 * (hi - lo);
                } else {
                    let w = v0 - self.baseline;
                    let d0 = (-self.alpha * (lo - t0)).exp();
                    let d1 = (-self.alpha * (hi - t0)).exp();
                    total += self.baseline * (hi - lo) + w * (d0 - d1) / self.alpha;
                }
            }
            lo = hi;
            i += 1;
        }
        total
    }

    /// Exact `int_a^b lambda_s^2 ds` (closed form per segment).
    pub fn integral_squared(&self, a: f64, b: f64) -> f64 {
        debug_assert!(a <= b);
        if b <= a {
            return 0.0;
        }
        let mut total = 0.0;
        let mut i = self.segment_index(a);
        let mut lo = a;
        while lo < b {
            let (t0, v0) = self.nodes[i];
            let hi = if i + 1 < self.nodes.len() { self.nodes[i + 1].0.min(b) } else { b };
            if hi > lo {
                if self.alpha == 0.0 {
                    total += v0 * v0 * (hi - lo);
                } else {
                    // (beta + w e^{-alpha d})^2 integrated in d over the piece
                    let bta = self.baseline;
                    let w = v0 - bta;
                    let d0 = (-self.alpha * (lo - t0)).exp();
                    let d1 = (-self.alpha * (hi - t0)).exp();
                    total += bta * bta * (hi - lo)
                        + 2.0 * bta * w * (d0 - d1) / self.alpha
                        + w * w * (d0 * d0 - d1 * d1) / (2.0 * self.alpha);
                }
            }
            lo = hi;
            i += 1;
        }
        total
    }
}

// ---------------------------------------------------------------------------
// Paths
// ---------------------------------------------------------------------------

/// One claim arrival with the pre-effort intensity just before it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub mark: f64,
    /// Left limit of the pre-effort intensity at the event time.
    pub intensity_before: f64,
}

/// Which probability measure the path was sampled under.
#[derive(Debug, Clone)]
pub enum MeasureTag {
    /// Uncontrolled arrivals (null effort).
    Physical,
    /// Arrivals thinned by the recorded strategy's frequency impact.
    Controlled(StrategyFunction),
}

/// A realized marked path of the loss process on `[0, horizon]`.
#[derive(Debug, Clone)]
pub struct MarkedPath {
    pub horizon: f64,
    /// Claim events, strictly increasing in time, marks > 0.
    pub claims: Vec<Event>,
    /// Exogenous shock events (time, size), where the model has them.
    pub shocks: Vec<(f64, f64)>,
    /// Regime switches (time, new state), where the model has them.
    pub transitions: Vec<(f64, usize)>,
    /// Exact record of the pre-effort intensity along the path.
    pub trace: IntensityTrace,
    pub measure: MeasureTag,
    /// `log L^u_T` when a weight has been attached to this path.
    pub log_weight: Option<f64>,
    /// Candidate points refused by the thinning step.
    pub rejected_candidates: u64,
}

/// Monte Carlo estimate with its sampling error and provenance.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MCResult {
    pub estimate: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub mode: EstimatorMode,
    pub seed: u64,
}

/// Sampling scheme of the utility estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EstimatorMode {
    /// Sample paths under the controlled measure directly.
    Direct,
    /// Sample uncontrolled paths and reweight by the likelihood ratio.
    Weighted,
}

impl fmt::Display for EstimatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorMode::Direct => write!(f, "direct"),
            EstimatorMode::Weighted => write!(f, "weighted"),
        }
    }
}

// ---------------------------------------------------------------------------
// Path sampling
// ---------------------------------------------------------------------------

/// Exp(rate) variate, strictly positive.
fn exp_draw(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    debug_assert!(rate > 0.0);
    loop {
        let v = 1.0 - rng.gen::<f64>(); // in (0, 1]
        if v < 1.0 {
            return -v.ln() / rate;
        }
    }
}

/// Tight per-segment dominating bound given no events until the next
/// refresh point: between events every implemented intensity is monotone
/// toward its baseline, so its current value (or the baseline, whichever
/// is larger) dominates. Exact for constant and regime-switch models.
fn segment_bound(model: &IntensityModel, hist: &HistoryState) -> f64 {
    match model {
        IntensityModel::Constant { lambda } => *lambda,
        IntensityModel::MarkovModulated { levels, .. } => levels[hist.chain_state],
        _ => {
            let current = intensity_at(model, hist, hist.time)
                .expect("history is maintained consistently");
            current.max(model.baseline())
        }
    }
}

enum Refresh {
    Shock { time: f64, size: f64 },
    Transition { time: f64, state: usize },
}

impl Refresh {
    fn time(&self) -> f64 {
        match self {
            Refresh::Shock { time, .. } | Refresh::Transition { time, .. } => *time,
        }
    }
}

/// Presample the exogenous layers whose law does not depend on claims:
/// the shock stream (Poisson with i.i.d. sizes) and the regime chain
/// (embedded-chain simulation). Their randomness lives on dedicated
/// channels so the claim stream is unaffected by their presence.
fn presample_refreshes(
    model: &IntensityModel,
    horizon: f64,
    streams: &RandomStream,
    path: u64,
) -> Vec<Refresh> {
    let mut out = Vec::new();
    match model {
        IntensityModel::ShotNoiseCox { shock_rate, shock_law, .. }
        | IntensityModel::Contagion { shock_rate, shock_law, .. } => {
            if *shock_rate > 0.0 {
                let mut rng = streams.channel(path, Channel::Shocks);
                let mut t = 0.0;
                loop {
                    t += exp_draw(&mut rng, *shock_rate);
                    if t >= horizon {
                        break;
                    }
                    let size = shock_law.sample(&mut rng);
                    out.push(Refresh::Shock { time: t, size });
                }
            }
        }
        IntensityModel::MarkovModulated { q, initial, .. } => {
            let mut rng = streams.channel(path, Channel::Chain);
            let mut t = 0.0;
            let mut state = *initial;
            loop {
                let rate = -q[state][state];
                if rate <= 0.0 {
                    break; // absorbing state
                }
                t += exp_draw(&mut rng, rate);
                if t >= horizon {
                    break;
                }
                // jump to j != state with probability q[state][j] / rate
                let u = rng.gen::<f64>() * rate;
                let mut acc = 0.0;
                let mut next = state;
                for (j, &v) in q[state].iter().enumerate() {
                    if j == state || v <= 0.0 {
                        continue;
                    }
                    acc += v;
                    next = j;
                    if u < acc {
                        break;
                    }
                }
                state = next;
                out.push(Refresh::Transition { time: t, state });
            }
        }
        IntensityModel::Constant { .. } => {}
    }
    out
}

/// Sample one path under the measure induced by `strategy`: claim arrivals
/// are thinned at rate `gamma1(u1(t, lambda_t)) * lambda_t`, marks are
/// i.i.d. from `dist` (severity reduction acts in the wealth functional,
/// not on the sampled marks).
pub fn simulate_path_controlled(
    model: &IntensityModel,
    dist: &ClaimDistribution,
    strategy: &StrategyFunction,
    spec: &PreventionSpec,
    horizon: f64,
    streams: &RandomStream,
    path: u64,
) -> MarkedPath {
    assert!(horizon > 0.0, "horizon must be positive");
    let mut arrivals = streams.channel(path, Channel::Arrivals);
    let mut marks = streams.channel(path, Channel::Marks);
    let refreshes = presample_refreshes(model, horizon, streams, path);

    let mut hist = HistoryState::empty();
    if let IntensityModel::MarkovModulated { initial, .. } = model {
        hist.chain_state = *initial;
    }
    let mut trace =
        IntensityTrace::new(model.initial_intensity(), model.decay_alpha(), model.baseline());
    let mut claims: Vec<Event> = Vec::new();
    let mut shocks: Vec<(f64, f64)> = Vec::new();
    let mut transitions: Vec<(f64, usize)> = Vec::new();
    let mut rejected = 0u64;

    let mut refresh_idx = 0usize;
    loop {
        let bound = segment_bound(model, &hist);
        let boundary = if refresh_idx < refreshes.len() {
            refreshes[refresh_idx].time().min(horizon)
        } else {
            horizon
        };
        let candidate = hist.time + exp_draw(&mut arrivals, bound);
        if candidate >= boundary {
            if boundary >= horizon {
                break;
            }
            match &refreshes[refresh_idx] {
                Refresh::Shock { time, size } => {
                    hist.shocks.push((*time, *size));
                    hist.time = *time;
                    shocks.push((*time, *size));
                    let v = intensity_at(model, &hist, *time).expect("consistent history");
                    trace.push(*time, v);
                }
                Refresh::Transition { time, state } => {
                    hist.chain_state = *state;
                    hist.time = *time;
                    transitions.push((*time, *state));
                    let v = intensity_at(model, &hist, *time).expect("consistent history");
                    trace.push(*time, v);
                }
            }
            refresh_idx += 1;
            continue;
        }

        // candidate strictly inside the segment: evaluate, then accept/reject
        hist.time = candidate;
        let lam = intensity_at(model, &hist, candidate).expect("consistent history");
        debug_assert!(
            lam <= bound * (1.0 + 1e-12),
            "dominating bound violated: lambda {lam} > bound {bound}"
        );
        let effort = spec.clamp(strategy.eval(candidate, lam));
        let accept_p = spec.gamma1.eval(effort.u1) * lam / bound;
        debug_assert!(accept_p <= 1.0 + 1e-12, "acceptance probability {accept_p} > 1");
        if arrivals.gen::<f64>() < accept_p {
            let z = dist.sample(&mut marks);
            claims.push(Event { time: candidate, mark: z, intensity_before: lam });
            hist.claims.push((candidate, z));
            if let IntensityModel::Contagion { excitation, .. } = model {
                trace.push(candidate, lam + excitation.eval(z));
            }
        } else {
            rejected += 1;
        }
    }

    MarkedPath {
        horizon,
        claims,
        shocks,
        transitions,
        trace,
        measure: MeasureTag::Controlled(strategy.clone()),
        log_weight: None,
        rejected_candidates: rejected,
    }
}

/// Sample one path of the uncontrolled loss process (null effort).
pub fn simulate_path_p0(
    model: &IntensityModel,
    dist: &ClaimDistribution,
    horizon: f64,
    streams: &RandomStream,
    path: u64,
) -> MarkedPath {
    // Null effort leaves every impact at 1, so any spec yields the same
    // path; this placeholder only feeds the (inactive) clamp.
    let null_spec = PreventionSpec {
        zeta1: 0.0,
        zeta2: 0.0,
        gamma1: ImpactFn::One,
        gamma2: ImpactFn::One,
        c1: crate::prevention::CostFn::Zero,
        c2: crate::prevention::CostFn::Zero,
        eta: 1.0,
        r: 0.0,
        horizon,
        x0: 0.0,
    };
    let mut path =
        simulate_path_controlled(model, dist, &StrategyFunction::null(), &null_spec, horizon, streams, path);
    path.measure = MeasureTag::Physical;
    path
}

// ---------------------------------------------------------------------------
// Functionals of a path
// ---------------------------------------------------------------------------

/// Integrate a function of time over `[0, horizon]`, splitting at trace
/// nodes (where the intensity is non-smooth) and handling any further
/// kinks or steps the integrand hides — opaque feedback strategies may be
/// discontinuous anywhere — by adaptive bisection within each segment.
fn integrate_over_segments<F: Fn(f64) -> f64>(
    trace: &IntensityTrace,
    horizon: f64,
    f: F,
) -> f64 {
    let mut breaks: Vec<f64> = trace
        .nodes()
        .iter()
        .map(|&(t, _)| t)
        .filter(|&t| t > 0.0 && t < horizon)
        .collect();
    breaks.push(0.0);
    breaks.push(horizon);
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup();
    let mut total = 0.0;
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            total += stats::integrate_adaptive(&f, w[0], w[1], 1e-11);
        }
    }
    total
}

/// Strategy pieces as (start, end, effort) covering `[0, horizon]`;
/// only for the time-indexed variants.
fn strategy_pieces(
    strategy: &StrategyFunction,
    spec: &PreventionSpec,
    horizon: f64,
) -> Option<Vec<(f64, f64, Effort)>> {
    match strategy {
        StrategyFunction::Constant(e) => Some(vec![(0.0, horizon, spec.clamp(*e))]),
        StrategyFunction::TimeTable { times, efforts } => {
            let mut pieces = Vec::with_capacity(efforts.len());
            for i in 0..efforts.len() {
                let a = if i == 0 { 0.0 } else { times[i].min(horizon) };
                let b = if i + 1 < times.len() { times[i + 1].min(horizon) } else { horizon };
                if b > a {
                    pieces.push((a, b, spec.clamp(efforts[i])));
                }
            }
            Some(pieces)
        }
        StrategyFunction::Markovian(_) => None,
    }
}

/// `int_0^T gamma1(u1(s, lambda_s)) lambda_s ds` — the controlled
/// compensator of the claim counter. Closed form over trace segments for
/// time-indexed strategies; per-segment Gauss quadrature for feedback ones.
pub fn controlled_compensator_integral(
    path: &MarkedPath,
    strategy: &StrategyFunction,
    spec: &PreventionSpec,
) -> f64 {
    match strategy_pieces(strategy, spec, path.horizon) {
        Some(pieces) => pieces
            .iter()
            .map(|&(a, b, e)| spec.gamma1.eval(e.u1) * path.trace.integral(a, b))
            .sum(),
        None => integrate_over_segments(&path.trace, path.horizon, |s| {
            let lam = path.trace.value(s);
            let e = spec.clamp(strategy.eval(s, lam));
            spec.gamma1.eval(e.u1) * lam
        }),
    }
}

/// Log of the measure-change weight turning an uncontrolled path into a
/// controlled-measure sample:
/// `log L = -int (gamma1(u1_s) - 1) lambda_s ds + sum_i log gamma1(u1_{T_i})`.
///
/// The path must have been sampled under the uncontrolled measure.
pub fn log_likelihood_weight(
    path: &MarkedPath,
    strategy: &StrategyFunction,
    spec: &PreventionSpec,
) -> f64 {
    debug_assert!(
        matches!(path.measure, MeasureTag::Physical),
        "likelihood weights apply to uncontrolled paths"
    );
    let base = path.trace.integral(0.0, path.horizon);
    let controlled = controlled_compensator_integral(path, strategy, spec);
    let mut log_l = base - controlled;
    for ev in &path.claims {
        let e = spec.clamp(strategy.eval(ev.time, ev.intensity_before));
        log_l += spec.gamma1.eval(e.u1).ln();
    }
    log_l
}

/// Terminal wealth and its capital-free part.
#[derive(Debug, Clone, Copy)]
pub struct WealthOutcome {
    /// `X_T = x0 e^{rT} - int_0^T e^{r(T-s)} (c1 + c2) ds
    ///        - sum_i gamma2(u2_{T_i}) e^{r(T - T_i)} Z_i`
    pub x_terminal: f64,
    /// `Y_T = X_T - x0 e^{rT}`, accumulated independently in discounted
    /// form so the identity `X_T = x0 e^{rT} + Y_T` is a genuine check.
    pub y_terminal: f64,
}

/// Evaluate the terminal wealth of a path under a strategy: running effort
/// costs accrue continuously with interest, and each claim is reduced by
/// the severity impact at its arrival time.
pub fn wealth_terminal(
    path: &MarkedPath,
    strategy: &StrategyFunction,
    spec: &PreventionSpec,
) -> WealthOutcome {
    let t_end = path.horizon;
    let r = spec.r;
    // int_a^b e^{r(T-s)} ds
    let ann = |a: f64, b: f64| -> f64 {
        if r == 0.0 {
            b - a
        } else {
            ((r * (t_end - a)).exp() - (r * (t_end - b)).exp()) / r
        }
    };
    // int_a^b e^{-r s} ds (discounted form for the independent Y route)
    let ann_disc = |a: f64, b: f64| -> f64 {
        if r == 0.0 {
            b - a
        } else {
            ((-r * a).exp() - (-r * b).exp()) / r
        }
    };

    let (cost_cap, cost_disc) = match strategy_pieces(strategy, spec, t_end) {
        Some(pieces) => {
            let mut cap = 0.0;
            let mut disc = 0.0;
            for &(a, b, e) in &pieces {
                let c = spec.total_cost(e);
                cap += c * ann(a, b);
                disc += c * ann_disc(a, b);
            }
            (cap, disc)
        }
        None => {
            let cap = integrate_over_segments(&path.trace, t_end, |s| {
                let e = spec.clamp(strategy.eval(s, path.trace.value(s)));
                spec.total_cost(e) * (r * (t_end - s)).exp()
            });
            let disc = integrate_over_segments(&path.trace, t_end, |s| {
                let e = spec.clamp(strategy.eval(s, path.trace.value(s)));
                spec.total_cost(e) * (-r * s).exp()
            });
            (cap, disc)
        }
    };

    let mut claims_cap = 0.0;
    let mut claims_disc = 0.0;
    for ev in &path.claims {
        let e = spec.clamp(strategy.eval(ev.time, ev.intensity_before));
        let retained = spec.gamma2.eval(e.u2) * ev.mark;
        claims_cap += retained * (r * (t_end - ev.time)).exp();
        claims_disc += retained * (-r * ev.time).exp();
    }

    let growth = (r * t_end).exp();
    WealthOutcome {
        x_terminal: spec.x0 * growth - cost_cap - claims_cap,
        y_terminal: growth * (-cost_disc - claims_disc),
    }
}

// ---------------------------------------------------------------------------
// Estimators
// ---------------------------------------------------------------------------

/// Estimate `E[e^{-eta X_T}]` under the controlled measure.
///
/// `Direct` samples controlled paths; `Weighted` samples uncontrolled
/// paths and reweights by the likelihood ratio. Identical seeds give
/// bit-identical results regardless of thread count.
pub fn estimate_expected_utility(
    model: &IntensityModel,
    dist: &ClaimDistribution,
    strategy: &StrategyFunction,
    spec: &PreventionSpec,
    n_paths: usize,
    mode: EstimatorMode,
    seed: u64,
) -> Result<MCResult, Error> {
    if n_paths < 100 {
        return Err(Error::Precondition {
            what: format!("estimator needs at least 100 paths, got {n_paths}"),
        });
    }
    model.validate()?;
    let streams = RandomStream::new(seed);
    let horizon = spec.horizon;
    let samples: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| -> Result<f64, Error> {
            let sample = match mode {
                EstimatorMode::Direct => {
                    let path =
                        simulate_path_controlled(model, dist, strategy, spec, horizon, &streams, p);
                    let w = wealth_terminal(&path, strategy, spec);
                    (-spec.eta * w.x_terminal).exp()
                }
                EstimatorMode::Weighted => {
                    let path = simulate_path_p0(model, dist, horizon, &streams, p);
                    let log_l = log_likelihood_weight(&path, strategy, spec);
                    let w = wealth_terminal(&path, strategy, spec);
                    (log_l - spec.eta * w.x_terminal).exp()
                }
            };
            if !sample.is_finite() {
                return Err(Error::NonfiniteSample { path: p, what: "utility sample" });
            }
            Ok(sample)
        })
        .collect::<Result<Vec<f64>, Error>>()?;

    let (estimate, stderr) = stats::mean_and_stderr(&samples);
    Ok(MCResult { estimate, stderr, n_paths, mode, seed })
}

/// Mean and error of a per-path residual.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ResidualSummary {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub seed: u64,
}

/// Counting-process consistency: under the controlled measure,
/// `E[N_T - int_0^T gamma1(u1_s) lambda_s ds] = 0`. Returns the sample
/// mean and standard error of the per-path residual.
pub fn compensator_residual(
    model: &IntensityModel,
    dist: &ClaimDistribution,
    strategy: &StrategyFunction,
    spec: &PreventionSpec,
    n_paths: usize,
    seed: u64,
) -> Result<ResidualSummary, Error> {
    if n_paths < 100 {
        return Err(Error::Precondition {
            what: format!("residual check needs at least 100 paths, got {n_paths}"),
        });
    }
    model.validate()?;
    let streams = RandomStream::new(seed);
    let horizon = spec.horizon;
    let residuals: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let path = simulate_path_controlled(model, dist, strategy, spec, horizon, &streams, p);
            path.claims.len() as f64 - controlled_compensator_integral(&path, strategy, spec)
        })
        .collect();
    let (mean, stderr) = stats::mean_and_stderr(&residuals);
    Ok(ResidualSummary { mean, stderr, n_paths, seed })
}

/// Compensator-transformed interarrival times under the uncontrolled
/// measure: `tau_i = int_{T_{i-1}}^{T_i} lambda_s ds`. When the simulator
/// matches the model these are i.i.d. unit exponentials, which a
/// Kolmogorov–Smirnov test can check.
///
/// Exactly the first `events_per_path` interarrivals of each path are
/// collected. Pooling all interarrivals that happen to complete inside a
/// fixed window would bias the sample toward short gaps (a gap enters
/// only if it closes before the window does), so instead the observation
/// window grows until each path has enough claims — the sampler consumes
/// randomness in event order, so a longer window extends a path rather
/// than resampling it, and a fixed per-path count involves no selection.
pub fn time_change_residuals(
    model: &IntensityModel,
    dist: &ClaimDistribution,
    events_per_path: usize,
    n_paths: usize,
    seed: u64,
) -> Vec<f64> {
    assert!(events_per_path >= 1, "need at least one event per path");
    let streams = RandomStream::new(seed);
    let per_path: Vec<Vec<f64>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut horizon = 2.0 * (1.0 + events_per_path as f64 / model.baseline());
            loop {
                let path = simulate_path_p0(model, dist, horizon, &streams, p);
                if path.claims.len() >= events_per_path {
                    let mut prev = 0.0;
                    return path.claims[..events_per_path]
                        .iter()
                        .map(|ev| {
                            let tau = path.trace.integral(prev, ev.time);
                            prev = ev.time;
                            tau
                        })
                        .collect::<Vec<f64>>();
                }
                horizon *= 2.0;
                assert!(
                    horizon < 1e9,
                    "claim stream too sparse to collect {events_per_path} events"
                );
            }
        })
        .collect();
    per_path.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prevention::CostFn;
    use proptest::prelude::*;

    fn spec_with(gamma1: ImpactFn, eta: f64, r: f64, horizon: f64, x0: f64) -> PreventionSpec {
        PreventionSpec {
            zeta1: 2.0,
            zeta2: 1.0,
            gamma1,
            gamma2: ImpactFn::LinearDown,
            c1: CostFn::Quadratic { scale: 1.0 },
            c2: CostFn::Quadratic { scale: 1.0 },
            eta,
            r,
            horizon,
            x0,
        }
    }

    fn count_stats(counts: &[f64]) -> (f64, f64) {
        stats::mean_and_stderr(counts)
    }

    fn contagion_model() -> IntensityModel {
        IntensityModel::Contagion {
            beta: 0.8,
            alpha: 1.0,
            lambda0: 1.2,
            shock_rate: 0.4,
            shock_law: ClaimDistribution::exponential(2.0).unwrap(),
            excitation: crate::risk_models::ExcitationMap::Linear { c: 0.5 },
        }
    }

    // -- sampler marginals ----------------------------------------------------

    #[test]
    fn constant_model_mean_count_matches_poisson() {
        let model = IntensityModel::Constant { lambda: 2.0 };
        let dist = ClaimDistribution::point_mass(1.0).unwrap();
        let streams = RandomStream::new(11);
        let counts: Vec<f64> = (0..100_000u64)
            .into_par_iter()
            .map(|p| simulate_path_p0(&model, &dist, 1.0, &streams, p).claims.len() as f64)
            .collect();
        let (m, se) = count_stats(&counts);
        assert!((m - 2.0).abs() < 3.0 * se, "mean {m}, se {se}");
    }

    #[test]
    fn constant_model_thinning_is_tight() {
        let model = IntensityModel::Constant { lambda: 3.0 };
        let dist = ClaimDistribution::point_mass(1.0).unwrap();
        let streams = RandomStream::new(5);
        for p in 0..200 {
            let path = simulate_path_p0(&model, &dist, 2.0, &streams, p);
            assert_eq!(path.rejected_candidates, 0, "constant envelope must be exact");
        }
    }

    #[test]
    fn degenerate_shot_noise_reduces_to_constant() {
        let model = IntensityModel::ShotNoiseCox {
            beta: 1.0,
            alpha: 1.0,
            lambda0: 1.0,
            shock_rate: 0.0,
            shock_law: ClaimDistribution::point_mass(1.0).unwrap(),
        };
        let dist = ClaimDistribution::point_mass(1.0).unwrap();
        let streams = RandomStream::new(21);
        let counts: Vec<f64> = (0..50_000u64)
            .into_par_iter()
            .map(|p| simulate_path_p0(&model, &dist, 1.0, &streams, p).claims.len() as f64)
            .collect();
        let (m, se) = count_stats(&counts);
        assert!((m - 1.0).abs() < 3.0 * se, "mean {m}, se {se}");
    }

    #[test]
    fn thinned_rate_halves_mean_count() {
        // gamma1 = e^{-u}, u1 = ln 2 cuts a unit Poisson rate to 1/2
        let model = IntensityModel::Constant { lambda: 1.0 };
        let dist = ClaimDistribution::point_mass(1.0).unwrap();
        let spec = spec_with(ImpactFn::ExpDecay { alpha: 1.0 }, 1.0, 0.0, 1.0, 0.0);
        let strategy = StrategyFunction::Constant(Effort::new(std::f64::consts::LN_2, 0.0));
        let streams = RandomStream::new(31);
        let counts: Vec<f64> = (0..100_000u64)
            .into_par_iter()
            .map(|p| {
                simulate_path_controlled(&model, &dist, &strategy, &spec, 1.0, &streams, p)
                    .claims
                    .len() as f64
            })
            .collect();
        let (m, se) = count_stats(&counts);
        assert!((m - 0.5).abs() < 3.0 * se, "mean {m}, se {se}");
    }

    #[test]
    fn max_effort_never_increases_claim_count_pathwise() {
        // constant model: the same candidate stream is shared, so the
        // accepted set under max effort is a subset of the null one
        let model = IntensityModel::Constant { lambda: 2.0 };
        let dist = ClaimDistribution::point_mass(1.0).unwrap();
        let spec = spec_with(ImpactFn::ExpDecay { alpha: 1.0 }, 1.0, 0.0, 1.0, 0.0);
        let max = StrategyFunction::Constant(Effort::new(spec.zeta1, 0.0));
        let streams = RandomStream::new(41);
        for p in 0..500 {
            let n_null = simulate_path_p0(&model, &dist, 1.0, &streams, p).claims.len();
            let n_max =
                simulate_path_controlled(&model, &dist, &max, &spec, 1.0, &streams, p).claims.len();
            assert!(n_max <= n_null, "path {p}: {n_max} > {n_null}");
        }
    }

    #[test]
    fn null_strategy_reproduces_uncontrolled_path() {
        let model = contagion_model();
        let dist = ClaimDistribution::exponential(1.0).unwrap();
        let spec = spec_with(ImpactFn::ExpDecay { alpha: 1.0 }, 1.0, 0.0, 3.0, 0.0);
        let streams = RandomStream::new(51);
        for p in 0..50 {
            let a = simulate_path_p0(&model, &dist, 3.0, &streams, p);
            let b = simulate_path_controlled(
                &model,
                &dist,
                &StrategyFunction::null(),
                &spec,
                3.0,
                &streams,
                p,
            );
            assert_eq!(a.claims, b.claims, "path {p}");
            assert_eq!(a.shocks, b.shocks, "path {p}");
        }
    }

    #[test]
    fn same_seed_same_path_bitwise() {
        let model = contagion_model();
        let dist = ClaimDistribution::exponential(1.0).unwrap();
        let streams = RandomStream::new(61);
        let a = simulate_path_p0(&model, &dist, 5.0, &streams, 7);
        let b = simulate_path_p0(&model, &dist, 5.0, &streams, 7);
        assert_eq!(a.claims, b.claims);
        assert_eq!(a.shocks, b.shocks);
    }

    // -- trace exactness -------------------------------------------------------

    #[test]
    fn trace_integral_matches_quadrature_of_trace_value() {
        let model = contagion_model();
        let dist = ClaimDistribution::exponential(1.0).unwrap();
        let streams = RandomStream::new(71);
        for p in 0..20 {
            let path = simulate_path_p0(&model, &dist, 4.0, &streams, p);
            let closed = path.trace.integral(0.0, 4.0);
            let quad = integrate_over_segments(&path.trace, 4.0, |s| path.trace.value(s));
            assert!(
                (closed - quad).abs() <= 1e-9 * closed.abs().max(1.0),
                "path {p}: {closed} vs {quad}"
            );
            let closed_sq = path.trace.integral_squared(0.0, 4.0);
            let quad_sq = integrate_over_segments(&path.trace, 4.0, |s| {
                path.trace.value(s).powi(2)
            });
            assert!(
                (closed_sq - quad_sq).abs() <= 1e-9 * closed_sq.abs().max(1.0),
                "path {p}: {closed_sq} vs {quad_sq}"
            );
        }
    }

    #[test]
    fn trace_integral_is_additive() {
        let model = contagion_model();
        let dist = ClaimDistribution::exponential(1.0).unwrap();
        let streams = RandomStream::new(81);
        let path = simulate_path_p0(&model, &dist, 4.0, &streams, 0);
        let whole = path.trace.integral(0.0, 4.0);
        let split = path.trace.integral(0.0, 1.3) + path.trace.integral(1.3, 4.0);
        assert!((whole - split).abs() < 1e-10);
    }

    // -- likelihood weight ------------------------------------------------------

    #[test]
    fn null_strategy_weight_is_exactly_zero() {
        let model = contagion_model();
        let dist = ClaimDistribution::exponential(1.0).unwrap();
        let spec = spec_with(ImpactFn::ExpDecay { alpha: 1.0 }, 1.0, 0.0, 3.0, 0.0);
        let streams = RandomStream::new(91);
        for p in 0..20 {
            let path = simulate_path_p0(&model, &dist, 3.0, &streams, p);
            assert_eq!(log_likelihood_weight(&path, &StrategyFunction::null(), &spec), 0.0);
        }
    }

    #[test]
    fn constant_strategy_weight_closed_form() {
        // log L = -(gamma1(u) - 1) lambda T + N_T log gamma1(u)
        let model = IntensityModel::Constant { lambda: 1.5 };
        let dist = ClaimDistribution::point_mass(1.0).unwrap();
        let spec = spec_with(ImpactFn::ExpDecay { alpha: 1.0 }, 1.0, 0.0, 2.0, 0.0);
        let u = 0.7;
        let strategy = StrategyFunction::Constant(Effort::new(u, 0.0));
        let g = (-u).exp(); // gamma1(u) for the exponential impact
        let streams = RandomStream::new(101);
        for p in 0..50 {
            let path = simulate_path_p0(&model, &dist, 2.0, &streams, p);
            let lw = log_likelihood_weight(&path, &strategy, &spec);
            let expected = -(g - 1.0) * 1.5 * 2.0 + path.claims.len() as f64 * g.ln();
            assert!((lw - expected).abs() < 1e-12, "path {p}: {lw} vs {expected}");
        }
    }

    #[test]
    fn feedback_weight_matches_piecewise_weight_on_equivalent_strategy() {
        // a feedback rule that only looks at time must reproduce the
        // closed-form piecewise computation through the quadrature route
        let model = contagion_model();
        let dist = ClaimDistribution::exponential(1.0).unwrap();
        let spec = spec_with(ImpactFn::ExpDecay { alpha: 1.0 }, 1.0, 0.0, 3.0, 0.0);
        let table = StrategyFunction::TimeTable {
            times: vec![0.0, 1.0, 2.0],
            efforts: vec![Effort::new(0.2, 0.0), Effort::new(0.8, 0.0), Effort::new(0.5, 0.0)],
        };
        let table_clone = table.clone();
        let feedback = StrategyFunction::Markovian(std::sync::Arc::new(move |t, _| {
            table_clone.eval(t, 0.0)
        }));
        let streams = RandomStream::new(111);
        for p in 0..20 {
            let path = simulate_path_p0(&model, &dist, 3.0, &streams, p);
            let exact = log_likelihood_weight(&path, &table, &spec);
            let quad = log_likelihood_weight(&path, &feedback, &spec);
            assert!((exact - quad).abs() < 1e-8, "path {p}: {exact} vs {quad}");
        }
    }

    // -- wealth -------------------------------------------------------------------

    fn empty_path(horizon: f64, lambda: f64) -> MarkedPath {
        MarkedPath {
            horizon,
            claims: vec![],
            shocks: vec![],
            transitions: vec![],
            trace: IntensityTrace::new(lambda, 0.0, lambda),
            measure: MeasureTag::Physical,
            log_weight: None,
            rejected_candidates: 0,
        }
    }

    #[test]
    fn wealth_no_jumps_null_strategy() {
        let spec = spec_with(ImpactFn::ExpDecay { alpha: 1.0 }, 1.0, 0.05, 2.0, 3.0);
        let path = empty_path(2.0, 1.0);
        let w = wealth_terminal(&path, &StrategyFunction::null(), &spec);
        assert!((w.x_terminal - 3.0 * (0.05f64 * 2.0).exp()).abs() < 1e-12);
        assert_eq!(w.y_terminal, 0.0);
    }

    #[test]
    fn wealth_single_jump_no_discounting() {
        let spec = spec_with(ImpactFn::ExpDecay { alpha: 1.0 }, 1.0, 0.0, 1.0, 2.0);
        let mut path = empty_path(1.0, 1.0);
        path.claims.push(Event { time: 0.5, mark: 1.0, intensity_before: 1.0 });
        let w = wealth_terminal(&path, &StrategyFunction::null(), &spec);
        assert!((w.x_terminal - 1.0).abs() < 1e-12, "x0 - Z = 2 - 1");
    }

    #[test]
    fn wealth_full_mitigation_leaves_only_costs() {
        // gamma2(1) = 0 removes the claims; constant cost k accrues interest
        let mut spec = spec_with(ImpactFn::ExpDecay { alpha: 1.0 }, 1.0, 0.1, 2.0, 1.0);
        spec.c2 = CostFn::Affine { intercept: 0.4, slope: 0.0 };
        spec.c1 = CostFn::Zero;
        let strategy = StrategyFunction::Constant(Effort::new(0.0, 1.0));
        let mut path = empty_path(2.0, 1.0);
        path.claims.push(Event { time: 0.3, mark: 5.0, intensity_before: 1.0 });
        path.claims.push(Event { time: 1.1, mark: 2.0, intensity_before: 1.0 });
        let w = wealth_terminal(&path, &strategy, &spec);
        let r = 0.1;
        let expected = 1.0 * (r * 2.0f64).exp() - 0.4 * ((r * 2.0f64).exp() - 1.0) / r;
        assert!((w.x_terminal - expected).abs() < 1e-12, "{} vs {expected}", w.x_terminal);
    }

    #[test]
    fn wealth_identity_holds_on_simulated_paths() {
        let model = contagion_model();
        let dist = ClaimDistribution::exponential(1.0).unwrap();
        let spec = spec_with(ImpactFn::ExpDecay { alpha: 1.0 }, 1.0, 0.07, 3.0, 1.5);
        let strategy = StrategyFunction::Constant(Effort::new(0.4, 0.3));
        let streams = RandomStream::new(121);
        let growth = (0.07f64 * 3.0).exp();
        for p in 0..50 {
            let path = simulate_path_controlled(&model, &dist, &strategy, &spec, 3.0, &streams, p);
            let w = wealth_terminal(&path, &strategy, &spec);
            let lhs = w.x_terminal;
            let rhs = spec.x0 * growth + w.y_terminal;
            assert!(
                (lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0),
                "path {p}: {lhs} vs {rhs}"
            );
        }
    }

    // -- estimators ------------------------------------------------------------

    #[test]
    fn zero_claim_regime_recovers_deterministic_utility() {
        let model = IntensityModel::Constant { lambda: 1e-6 };
        let dist = ClaimDistribution::point_mass(1.0).unwrap();
        let spec = spec_with(ImpactFn::ExpDecay { alpha: 1.0 }, 0.8, 0.03, 1.0, 2.0);
        let strategy = StrategyFunction::null();
        let res = estimate_expected_utility(
            &model,
            &dist,
            &strategy,
            &spec,
            2000,
            EstimatorMode::Direct,
            131,
        )
        .unwrap();
        let exact = (-0.8 * 2.0 * (0.03f64).exp()).exp();
        assert!(
            (res.estimate - exact).abs() <= 3.0 * res.stderr + 1e-9,
            "{} vs {exact} (se {})",
            res.estimate,
            res.stderr
        );
    }

    #[test]
    fn compound_poisson_closed_form_within_three_se() {
        // null strategy, point-mass claims: E[e^{-eta X_T}]
        //   = e^{-eta x0} exp(lambda T (e^{eta z0} - 1))
        let model = IntensityModel::Constant { lambda: 1.0 };
        let dist = ClaimDistribution::point_mass(0.5).unwrap();
        let spec = spec_with(ImpactFn::ExpDecay { alpha: 1.0 }, 1.0, 0.0, 1.0, 0.3);
        let res = estimate_expected_utility(
            &model,
            &dist,
            &StrategyFunction::null(),
            &spec,
            100_000,
            EstimatorMode::Direct,
            141,
        )
        .unwrap();
        let exact = (-0.3f64).exp() * (1.0 * ((0.5f64).exp() - 1.0)).exp();
        assert!(
            (res.estimate - exact).abs() <= 3.0 * res.stderr,
            "{} vs {exact} (se {})",
            res.estimate,
            res.stderr
        );
    }

    #[test]
    fn direct_and_weighted_estimators_agree() {
        let model = IntensityModel::Constant { lambda: 1.0 };
        let dist = ClaimDistribution::exponential(10.0).unwrap();
        let spec = spec_with(ImpactFn::ExpDecay { alpha: 1.0 }, 0.5, 0.0, 1.0, 0.0);
        let strategy = StrategyFunction::Constant(Effort::new(0.5, 0.3));
        let direct = estimate_expected_utility(
            &model,
            &dist,
            &strategy,
            &spec,
            200_000,
            EstimatorMode::Direct,
            151,
        )
        .unwrap();
        let weighted = estimate_expected_utility(
            &model,
            &dist,
            &strategy,
            &spec,
            200_000,
            EstimatorMode::Weighted,
            152,
        )
        .unwrap();
        let tol = 3.0 * (direct.stderr.powi(2) + weighted.stderr.powi(2)).sqrt();
        assert!(
            (direct.estimate - weighted.estimate).abs() <= tol,
            "direct {} vs weighted {} (tol {tol})",
            direct.estimate,
            weighted.estimate
        );
    }

    #[test]
    fn estimator_is_reproducible_bitwise() {
        let model = contagion_model();
        let dist = ClaimDistribution::exponential(1.0).unwrap();
        let spec = spec_with(ImpactFn::ExpDecay { alpha: 1.0 }, 1.0, 0.0, 2.0, 0.0);
        let strategy = StrategyFunction::Constant(Effort::new(0.4, 0.2));
        let a = estimate_expected_utility(
            &model, &dist, &strategy, &spec, 5000, EstimatorMode::Direct, 161,
        )
        .unwrap();
        let b = estimate_expected_utility(
            &model, &dist, &strategy, &spec, 5000, EstimatorMode::Direct, 161,
        )
        .unwrap();
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }

    #[test]
    fn estimator_rejects_tiny_path_counts() {
        let model = IntensityModel::Constant { lambda: 1.0 };
        let dist = ClaimDistribution::point_mass(1.0).unwrap();
        let spec = spec_with(ImpactFn::ExpDecay { alpha: 1.0 }, 1.0, 0.0, 1.0, 0.0);
        let r = estimate_expected_utility(
            &model,
            &dist,
            &StrategyFunction::null(),
            &spec,
            50,
            EstimatorMode::Direct,
            1,
        );
        assert!(matches!(r, Err(Error::Precondition { .. })));
    }

    // -- dynamics checks ----------------------------------------------------------

    #[test]
    fn compensator_residual_centers_at_zero() {
        let spec = spec_with(ImpactFn::ExpDecay { alpha: 1.0 }, 1.0, 0.0, 2.0, 0.0);
        let strategy = StrategyFunction::Constant(Effort::new(0.3, 0.0));
        let dist = ClaimDistribution::exponential(1.0).unwrap();
        for (name, model) in [
            ("constant", IntensityModel::Constant { lambda: 2.0 }),
            ("contagion", contagion_model()),
        ] {
            let r =
                compensator_residual(&model, &dist, &strategy, &spec, 20_000, 171).unwrap();
            assert!(
                r.mean.abs() <= 3.0 * r.stderr,
                "{name}: residual {} (se {})",
                r.mean,
                r.stderr
            );
        }
    }

    #[test]
    fn time_change_residuals_pass_ks_for_constant_model() {
        let model = IntensityModel::Constant { lambda: 2.0 };
        let dist = ClaimDistribution::point_mass(1.0).unwrap();
        let taus = time_change_residuals(&model, &dist, 5, 2000, 181);
        assert_eq!(taus.len(), 10_000);
        let (mean, se) = stats::mean_and_stderr(&taus);
        assert!((mean - 1.0).abs() < 4.0 * se, "unit exponential mean, got {mean} ({se})");
        let ks = stats::ks_test_unit_exponential(&taus);
        assert!(
            !ks.rejects_at_1pct(),
            "KS statistic {} (scaled {})",
            ks.statistic,
            ks.scaled_statistic
        );
    }

    // -- property tests ------------------------------------------------------------

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn simulated_paths_satisfy_structural_invariants(
            seed in 0u64..1000,
            beta in 0.3f64..2.0,
            lambda0 in 0.3f64..3.0,
            alpha in 0.2f64..3.0,
            shock_rate in 0.0f64..1.5,
            u1 in 0.0f64..1.5,
        ) {
            let model = IntensityModel::Contagion {
                beta,
                alpha,
                lambda0,
                shock_rate,
                shock_law: ClaimDistribution::exponential(2.0).unwrap(),
                excitation: crate::risk_models::ExcitationMap::Linear { c: 0.5 },
            };
            let dist = ClaimDistribution::exponential(1.0).unwrap();
            let spec = spec_with(ImpactFn::ExpDecay { alpha: 1.0 }, 1.0, 0.0, 2.0, 0.0);
            let strategy = StrategyFunction::Constant(Effort::new(u1, 0.0));
            let streams = RandomStream::new(seed);
            let path = simulate_path_controlled(&model, &dist, &strategy, &spec, 2.0, &streams, 0);

            // strictly increasing claim times, positive marks
            for w in path.claims.windows(2) {
                prop_assert!(w[0].time < w[1].time);
            }
            for ev in &path.claims {
                prop_assert!(ev.mark > 0.0);
                prop_assert!(ev.time > 0.0 && ev.time <= 2.0);
                // intensity floor: decay never undershoots min(beta, lambda0)
                prop_assert!(ev.intensity_before >= beta.min(lambda0) - 1e-12);
            }
            // trace value stays at or above the floor everywhere
            for i in 0..=200 {
                let t = 2.0 * i as f64 / 200.0;
                prop_assert!(path.trace.value(t) >= beta.min(lambda0) - 1e-12);
            }
            // integral additivity
            let whole = path.trace.integral(0.0, 2.0);
            let split = path.trace.integral(0.0, 0.77) + path.trace.integral(0.77, 2.0);
            prop_assert!((whole - split).abs() < 1e-10 * whole.max(1.0));
        }
    }
}
