//! Sampled-data control loop.
//!
//! At every sampling instant the controller reads the plant state, predicts
//! the desired closed-loop stage states over the next interval with the
//! collocation scheme, and reconstructs the input either as a degree-(s-1)
//! Lagrange polynomial through the stage input values (shaped mode), as the
//! piecewise-constant value minimizing the weighted end-of-interval defect
//! (ZOH-converted mode), or as plain emulation of the continuous law
//! (Euler mode). The plant "truth" is the same ODE integrated with the
//! five-stage scheme on a much finer grid.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::nodes::NodeSet;
use crate::scalar::{real, Real};
use crate::solver::{solve_step, SolverConfig, StageSolution, VectorField};
use crate::tableau::{build_tableau, CollocationTableau};

/// State feedback law u = r(t, x).
pub trait ControlLaw<T: Real> {
    fn input_dim(&self) -> usize;

    fn eval(&self, t: T, x: &DVector<T>) -> Result<DVector<T>>;
}

/// Controlled plant dx/dt = f(t, x, u).
pub trait ControlledField<T: Real> {
    fn dim(&self) -> usize;

    fn input_dim(&self) -> usize;

    fn eval(&self, t: T, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>>;

    /// Plant-specific divergence guard; returns a reason when the state has
    /// left the physically meaningful region.
    fn guard(&self, _x: &DVector<T>) -> Option<String> {
        None
    }
}

/// Reference value for the tracked output.
pub trait SetpointProfile<T: Real> {
    fn setpoint(&self, t: T) -> T;
}

/// Constant reference.
#[derive(Debug, Clone, Copy)]
pub struct ConstantSetpoint<T>(pub T);

impl<T: Real> SetpointProfile<T> for ConstantSetpoint<T> {
    fn setpoint(&self, _t: T) -> T {
        self.0
    }
}

/// Desired closed-loop field f_d(t, x) = f(t, x, r(t, x)); always evaluated
/// as the live composition of plant and law.
pub struct TargetField<'a, T, P, R> {
    plant: &'a P,
    law: &'a R,
    _scalar: std::marker::PhantomData<T>,
}

impl<'a, T: Real, P: ControlledField<T>, R: ControlLaw<T>> TargetField<'a, T, P, R> {
    pub fn new(plant: &'a P, law: &'a R) -> Self {
        TargetField {
            plant,
            law,
            _scalar: std::marker::PhantomData,
        }
    }
}

impl<T: Real, P: ControlledField<T>, R: ControlLaw<T>> VectorField<T>
    for TargetField<'_, T, P, R>
{
    fn dim(&self) -> usize {
        self.plant.dim()
    }

    fn eval(&self, t: T, x: &DVector<T>) -> Result<DVector<T>> {
        let u = self.law.eval(t, x)?;
        self.plant.eval(t, x, &u)
    }
}

/// Plant under a fixed input vector.
struct ConstantInputField<'a, T, P> {
    plant: &'a P,
    input: &'a DVector<T>,
}

impl<T: Real, P: ControlledField<T>> VectorField<T> for ConstantInputField<'_, T, P> {
    fn dim(&self) -> usize {
        self.plant.dim()
    }

    fn eval(&self, t: T, x: &DVector<T>) -> Result<DVector<T>> {
        self.plant.eval(t, x, self.input)
    }
}

/// Plant under a hold signal over one sampling interval.
struct HeldInputField<'a, T, P> {
    plant: &'a P,
    hold: &'a HoldSignal<T>,
    t_start: T,
    interval: T,
}

impl<T: Real, P: ControlledField<T>> VectorField<T> for HeldInputField<'_, T, P> {
    fn dim(&self) -> usize {
        self.plant.dim()
    }

    fn eval(&self, t: T, x: &DVector<T>) -> Result<DVector<T>> {
        let tau = ((t - self.t_start) / self.interval)
            .max(T::zero())
            .min(T::one());
        let u = self.hold.eval(tau);
        self.plant.eval(t, x, &u)
    }
}

/// All Lagrange basis polynomials of degree s-1 over the nodes, at tau.
pub fn lagrange_basis<T: Real>(nodes: &NodeSet<T>, tau: T) -> DVector<T> {
    let c = nodes.nodes();
    let s = c.len();
    let mut out = DVector::zeros(s);
    for i in 0..s {
        let mut v = T::one();
        for j in 0..s {
            if j != i {
                v *= (tau - c[j]) / (c[i] - c[j]);
            }
        }
        out[i] = v;
    }
    out
}

/// Per-interval input signal.
#[derive(Debug, Clone)]
pub enum HoldSignal<T> {
    /// Degree-(s-1) Lagrange polynomial through the stage input values.
    Shaped {
        nodes: NodeSet<T>,
        stages: Vec<DVector<T>>,
    },
    /// Piecewise constant value.
    Constant { value: DVector<T> },
}

impl<T: Real> HoldSignal<T> {
    /// Input at normalized time tau in [0, 1].
    pub fn eval(&self, tau: T) -> DVector<T> {
        match self {
            HoldSignal::Shaped { nodes, stages } => {
                let w = lagrange_basis(nodes, tau);
                let mut u = DVector::zeros(stages[0].len());
                for (i, stage) in stages.iter().enumerate() {
                    for d in 0..u.len() {
                        u[d] += w[i] * stage[d];
                    }
                }
                u
            }
            HoldSignal::Constant { value } => value.clone(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            HoldSignal::Shaped { stages, .. } => stages[0].len(),
            HoldSignal::Constant { value } => value.len(),
        }
    }
}

/// One-step prediction of the target dynamics: the stage states of the
/// desired closed loop over the coming interval.
pub fn predict_target<T: Real, F: VectorField<T> + ?Sized>(
    f_d: &F,
    t_k: T,
    x_k: &DVector<T>,
    h: T,
    tableau: &CollocationTableau<T>,
    cfg: &SolverConfig<T>,
) -> Result<StageSolution<T>> {
    solve_step(f_d, t_k, x_k, h, tableau, cfg)
}

/// Shape the input as the control law evaluated at the predicted stage
/// states, held as a degree-(s-1) Lagrange polynomial.
pub fn shape_input<T: Real, R: ControlLaw<T>>(
    law: &R,
    t_k: T,
    h: T,
    prediction: &StageSolution<T>,
    nodes: &NodeSet<T>,
) -> Result<HoldSignal<T>> {
    let s = nodes.stages();
    let mut stages = Vec::with_capacity(s);
    for i in 0..s {
        let t_i = t_k + nodes.node(i) * h;
        let u = law.eval(t_i, &prediction.stage_state(i))?;
        stages.push(u);
    }
    Ok(HoldSignal::Shaped {
        nodes: nodes.clone(),
        stages,
    })
}

/// Gauss-Newton settings for the ZOH conversion.
#[derive(Debug, Clone, Copy)]
pub struct GaussNewtonConfig<T> {
    /// Gradient infinity-norm at convergence.
    pub gradient_tol: T,
    pub max_iterations: usize,
    /// Relative finite-difference step for the input sensitivity.
    pub fd_step: T,
    pub max_backtracks: usize,
}

impl<T: Real> Default for GaussNewtonConfig<T> {
    fn default() -> Self {
        GaussNewtonConfig {
            gradient_tol: real(1e-10),
            max_iterations: 30,
            fd_step: real(1e-6),
            max_backtracks: 25,
        }
    }
}

/// Result of converting one interval to piecewise-constant input.
#[derive(Debug, Clone)]
pub struct ZohConversion<T> {
    pub hold: HoldSignal<T>,
    pub input: DVector<T>,
    /// Norm of the weighted stage-derivative defect at the optimum.
    pub objective: T,
    pub iterations: usize,
}

/// Weighted defect between the plant under constant input and the predicted
/// target: sum_i b_i (f(t_i, x_i, u) - f_d(t_i, (x_d)_i)). Equals
/// (x_{k+1} - (x_d)_{k+1}) / h for converged collocation systems.
fn weighted_defect<T: Real, P: ControlledField<T>>(
    plant: &P,
    u: &DVector<T>,
    t_k: T,
    x_k: &DVector<T>,
    h: T,
    tableau: &CollocationTableau<T>,
    weights: &DVector<T>,
    target_weighted: &DVector<T>,
    cfg: &SolverConfig<T>,
) -> Result<DVector<T>> {
    let field = ConstantInputField { plant, input: u };
    let sol = solve_step(&field, t_k, x_k, h, tableau, cfg)?;
    let n = x_k.len();
    let mut defect = -target_weighted.clone();
    for i in 0..tableau.stages() {
        for d in 0..n {
            defect[d] += weights[i] * sol.f_stages[(i, d)];
        }
    }
    Ok(defect)
}

/// Convert the interval to a constant input by minimizing the weighted
/// end-of-interval defect, subject to the plant and target collocation
/// systems. Gauss-Newton with finite-difference input sensitivity and a
/// backtracking line search, started at the emulation value r(t_k, x_k).
#[allow(clippy::too_many_arguments)]
pub fn zoh_convert<T: Real, P: ControlledField<T>, R: ControlLaw<T>>(
    plant: &P,
    law: &R,
    t_k: T,
    x_k: &DVector<T>,
    h: T,
    tableau: &CollocationTableau<T>,
    weights: &DVector<T>,
    prediction: &StageSolution<T>,
    cfg: &SolverConfig<T>,
    gn: &GaussNewtonConfig<T>,
) -> Result<ZohConversion<T>> {
    let s = tableau.stages();
    let n = x_k.len();
    let mut target_weighted = DVector::zeros(n);
    for i in 0..s {
        for d in 0..n {
            target_weighted[d] += weights[i] * prediction.f_stages[(i, d)];
        }
    }

    let defect = |u: &DVector<T>| -> Result<DVector<T>> {
        weighted_defect(
            plant,
            u,
            t_k,
            x_k,
            h,
            tableau,
            weights,
            &target_weighted,
            cfg,
        )
    };

    let mut u = law.eval(t_k, x_k)?;
    let p = u.len();
    let mut res = defect(&u)?;
    let mut objective = res.norm();
    let mut iterations = 0;

    loop {
        // Input sensitivity by finite differences; an infeasible forward
        // trial falls back to the backward side.
        let mut jac = DMatrix::zeros(n, p);
        for j in 0..p {
            let delta = gn.fd_step * u[j].abs().max(T::one());
            let mut up = u.clone();
            up[j] = u[j] + delta;
            let col = match defect(&up) {
                Ok(rp) => (rp - &res) / delta,
                Err(_) => {
                    up[j] = u[j] - delta;
                    let rm = defect(&up)?;
                    (&res - rm) / delta
                }
            };
            jac.set_column(j, &col);
        }
        let gradient = jac.transpose() * &res;
        if gradient.amax() <= gn.gradient_tol {
            break;
        }
        if iterations >= gn.max_iterations {
            return Err(Error::ConversionDidNotConverge {
                iterations,
                gradient: gradient.amax().to_f64().unwrap_or(f64::NAN),
            });
        }

        let jtj = jac.transpose() * &jac;
        let step = jtj
            .lu()
            .solve(&(-&gradient))
            .ok_or_else(|| Error::DegenerateSystem("rank-deficient input sensitivity".into()))?;

        let mut alpha = T::one();
        let mut accepted = false;
        for _ in 0..gn.max_backtracks {
            let trial = &u + &step * alpha;
            match defect(&trial) {
                Ok(rt) => {
                    let trial_obj = rt.norm();
                    if trial_obj < objective {
                        u = trial;
                        res = rt;
                        objective = trial_obj;
                        accepted = true;
                        break;
                    }
                }
                Err(_) => {} // infeasible trial: backtrack
            }
            alpha *= real::<T>(0.5);
        }
        iterations += 1;
        if !accepted {
            // No descent left at line-search resolution: accept the
            // current point as the minimizer.
            break;
        }
    }

    Ok(ZohConversion {
        hold: HoldSignal::Constant { value: u.clone() },
        input: u,
        objective,
        iterations,
    })
}

/// Input reconstruction used by the sampled loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    /// Polynomial input through the predicted stage values.
    Shaped,
    /// Optimization-based piecewise-constant conversion.
    ZohConverted,
    /// Plain emulation: r(t_k, x_k) held constant, no prediction.
    EulerEmulation,
}

impl InputMode {
    pub fn label(&self) -> &'static str {
        match self {
            InputMode::Shaped => "shaped",
            InputMode::ZohConverted => "zoh",
            InputMode::EulerEmulation => "euler",
        }
    }
}

/// Closed-loop simulation settings.
#[derive(Debug, Clone, Copy)]
pub struct LoopConfig<T> {
    /// Sampling time (s).
    pub h: T,
    pub stages: usize,
    pub mode: InputMode,
    /// Truth-model substeps per sampling interval.
    pub substeps: usize,
    /// Total duration (s).
    pub duration: T,
    pub solver: SolverConfig<T>,
    pub gauss_newton: GaussNewtonConfig<T>,
    /// Index of the state component compared against the reference.
    pub tracked_state: usize,
    /// Settled verdict: tracking error stays below this band over the
    /// final fraction of the run.
    pub settle_band: T,
    pub settle_fraction: T,
    /// Divergence when |x_i| exceeds this factor times the per-component
    /// reference scale max(|x0_i|, 1).
    pub blowup_factor: T,
}

impl<T: Real> LoopConfig<T> {
    pub fn new(h: T, stages: usize, mode: InputMode) -> Self {
        LoopConfig {
            h,
            stages,
            mode,
            substeps: 100,
            duration: real(4.0),
            solver: SolverConfig::default(),
            gauss_newton: GaussNewtonConfig::default(),
            tracked_state: 0,
            settle_band: real(5e-4),
            settle_fraction: real(0.2),
            blowup_factor: real(1e3),
        }
    }
}

/// One sampling instant of the loop.
#[derive(Debug, Clone)]
pub struct SampleRecord<T> {
    pub t: T,
    pub state: DVector<T>,
    /// Predicted target stage states (absent in emulation mode).
    pub predicted_stages: Option<DMatrix<T>>,
    pub prediction_newton_iterations: usize,
    pub conversion_iterations: Option<usize>,
    pub conversion_objective: Option<T>,
}

/// Truth-resolution trace point.
#[derive(Debug, Clone)]
pub struct TruthPoint<T> {
    pub t: T,
    pub state: DVector<T>,
    pub input: DVector<T>,
    pub reference: T,
}

/// Outcome of a closed-loop run. Divergence is a labeled outcome, not an
/// error.
#[derive(Debug, Clone)]
pub enum Verdict<T> {
    Settled { max_tracking_error: T },
    NotSettled { max_tracking_error: T },
    Diverged { t: T, reason: String },
}

impl<T: Real> Verdict<T> {
    pub fn is_settled(&self) -> bool {
        matches!(self, Verdict::Settled { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Settled { .. } => "settled",
            Verdict::NotSettled { .. } => "not-settled",
            Verdict::Diverged { .. } => "diverged",
        }
    }
}

/// Full record of one closed-loop run.
#[derive(Debug, Clone)]
pub struct SimulationTrace<T> {
    pub samples: Vec<SampleRecord<T>>,
    pub truth: Vec<TruthPoint<T>>,
    pub verdict: Verdict<T>,
    pub mode: InputMode,
    pub h: T,
    pub stages: usize,
}

impl<T: Real> SimulationTrace<T> {
    pub fn mean_prediction_iterations(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let total: usize = self
            .samples
            .iter()
            .map(|s| s.prediction_newton_iterations)
            .sum();
        total as f64 / self.samples.len() as f64
    }

    /// Final truth state, if any truth points were recorded.
    pub fn end_state(&self) -> Option<&DVector<T>> {
        self.truth.last().map(|p| &p.state)
    }
}

/// Run the sampled loop against the fine-grained truth model.
pub fn simulate_closed_loop<T, P, R, S>(
    plant: &P,
    law: &R,
    profile: &S,
    x0: &DVector<T>,
    cfg: &LoopConfig<T>,
) -> Result<SimulationTrace<T>>
where
    T: Real,
    P: ControlledField<T>,
    R: ControlLaw<T>,
    S: SetpointProfile<T>,
{
    if cfg.substeps < 10 {
        return Err(Error::Config("substeps must be at least 10".into()));
    }
    if cfg.h <= T::zero() {
        return Err(Error::Config("sampling time must be positive".into()));
    }
    if cfg.tracked_state >= plant.dim() {
        return Err(Error::Config("tracked state index out of range".into()));
    }

    let tableau = build_tableau::<T>(cfg.stages)?;
    let basis = crate::spline::build_spline_basis::<T>(cfg.stages)?;
    let weights = basis.endpoint_weights();
    let truth_tableau = build_tableau::<T>(5)?;
    let truth_cfg = cfg.solver;

    let scales: Vec<T> = x0.iter().map(|v| v.abs().max(T::one())).collect();
    let target = TargetField::new(plant, law);

    let ratio = (cfg.duration / cfg.h).to_f64().unwrap_or(0.0);
    let mut whole = ratio.floor() as usize;
    if (ratio - ratio.round()).abs() < 1e-9 {
        whole = ratio.round() as usize;
    }
    let remainder = cfg.duration - real::<T>(whole as f64) * cfg.h;
    let has_partial = remainder > cfg.h * real::<T>(1e-9);

    let mut trace = SimulationTrace {
        samples: Vec::new(),
        truth: Vec::new(),
        verdict: Verdict::Settled {
            max_tracking_error: T::zero(),
        },
        mode: cfg.mode,
        h: cfg.h,
        stages: cfg.stages,
    };

    let mut x = x0.clone();
    let mut diverged: Option<(T, String)> = None;

    let total_intervals = whole + usize::from(has_partial);
    'outer: for k in 0..total_intervals {
        let t_k = real::<T>(k as f64) * cfg.h;
        let h_k = if k < whole { cfg.h } else { remainder };

        if let Some(reason) = plant.guard(&x) {
            diverged = Some((t_k, reason));
            break;
        }
        if let Some(d) = blowup(&x, &scales, cfg.blowup_factor) {
            diverged = Some((t_k, d));
            break;
        }

        // Controller action for this interval.
        let (hold, record) = match cfg.mode {
            InputMode::EulerEmulation => match law.eval(t_k, &x) {
                Ok(u) => (
                    HoldSignal::Constant { value: u },
                    SampleRecord {
                        t: t_k,
                        state: x.clone(),
                        predicted_stages: None,
                        prediction_newton_iterations: 0,
                        conversion_iterations: None,
                        conversion_objective: None,
                    },
                ),
                Err(e) => {
                    diverged = Some((t_k, format!("control law failed: {e}")));
                    break;
                }
            },
            InputMode::Shaped | InputMode::ZohConverted => {
                let prediction =
                    match predict_target(&target, t_k, &x, h_k, &tableau, &cfg.solver) {
                        Ok(p) => p,
                        Err(e) => {
                            diverged = Some((t_k, format!("target prediction failed: {e}")));
                            break;
                        }
                    };
                let (hold, conv_iters, conv_obj) = if cfg.mode == InputMode::Shaped {
                    match shape_input(law, t_k, h_k, &prediction, tableau.nodes()) {
                        Ok(hold) => (hold, None, None),
                        Err(e) => {
                            diverged = Some((t_k, format!("input shaping failed: {e}")));
                            break;
                        }
                    }
                } else {
                    match zoh_convert(
                        plant,
                        law,
                        t_k,
                        &x,
                        h_k,
                        &tableau,
                        &weights,
                        &prediction,
                        &cfg.solver,
                        &cfg.gauss_newton,
                    ) {
                        Ok(conv) => (conv.hold, Some(conv.iterations), Some(conv.objective)),
                        Err(e) => {
                            diverged = Some((t_k, format!("input conversion failed: {e}")));
                            break;
                        }
                    }
                };
                (
                    hold,
                    SampleRecord {
                        t: t_k,
                        state: x.clone(),
                        predicted_stages: Some(prediction.x_stages.clone()),
                        prediction_newton_iterations: prediction.newton_iterations,
                        conversion_iterations: conv_iters,
                        conversion_objective: conv_obj,
                    },
                )
            }
        };
        trace.samples.push(record);

        if k == 0 {
            trace.truth.push(TruthPoint {
                t: T::zero(),
                state: x.clone(),
                input: hold.eval(T::zero()),
                reference: profile.setpoint(T::zero()),
            });
        }

        // Truth model over the interval.
        let field = HeldInputField {
            plant,
            hold: &hold,
            t_start: t_k,
            interval: h_k,
        };
        let dt = h_k / real::<T>(cfg.substeps as f64);
        for j in 0..cfg.substeps {
            let t_j = t_k + dt * real::<T>(j as f64);
            match solve_step(&field, t_j, &x, dt, &truth_tableau, &truth_cfg) {
                Ok(sol) => x = sol.end_state(),
                Err(e) => {
                    diverged = Some((t_j, format!("truth integration failed: {e}")));
                    break 'outer;
                }
            }
            let t_next = t_k + dt * real::<T>((j + 1) as f64);
            let tau = ((t_next - t_k) / h_k).min(T::one());
            trace.truth.push(TruthPoint {
                t: t_next,
                state: x.clone(),
                input: hold.eval(tau),
                reference: profile.setpoint(t_next),
            });
            if let Some(reason) = plant.guard(&x) {
                diverged = Some((t_next, reason));
                break 'outer;
            }
            if let Some(d) = blowup(&x, &scales, cfg.blowup_factor) {
                diverged = Some((t_next, d));
                break 'outer;
            }
        }
    }

    trace.verdict = match diverged {
        Some((t, reason)) => Verdict::Diverged { t, reason },
        None => settle_verdict(&trace.truth, cfg),
    };
    Ok(trace)
}

fn blowup<T: Real>(x: &DVector<T>, scales: &[T], factor: T) -> Option<String> {
    for (i, v) in x.iter().enumerate() {
        if !v.is_finite() || v.abs() > factor * scales[i] {
            return Some(format!("state component {i} exceeded its divergence bound"));
        }
    }
    None
}

fn settle_verdict<T: Real>(truth: &[TruthPoint<T>], cfg: &LoopConfig<T>) -> Verdict<T> {
    if truth.is_empty() {
        // Vacuously settled: nothing was simulated.
        return Verdict::Settled {
            max_tracking_error: T::zero(),
        };
    }
    let window_start = cfg.duration * (T::one() - cfg.settle_fraction);
    let mut max_err = T::zero();
    for p in truth.iter().filter(|p| p.t >= window_start) {
        let err = (p.state[cfg.tracked_state] - p.reference).abs();
        max_err = max_err.max(err);
    }
    if max_err <= cfg.settle_band {
        Verdict::Settled {
            max_tracking_error: max_err,
        }
    } else {
        Verdict::NotSettled {
            max_tracking_error: max_err,
        }
    }
}

/// Result of a sampling-limit bisection.
#[derive(Debug, Clone, Copy)]
pub struct SamplingLimit<T> {
    /// Largest sampling time verified stable.
    pub stable_h: T,
    /// Smallest sampling time verified unstable.
    pub unstable_h: T,
    pub runs: usize,
}

/// Bisect the stability boundary in h. The bracket must be verified:
/// settled at `h_lo`, not settled (or diverged) at `h_hi`.
pub fn find_sampling_limit<T, P, R, S>(
    plant: &P,
    law: &R,
    profile: &S,
    x0: &DVector<T>,
    base: &LoopConfig<T>,
    h_lo: T,
    h_hi: T,
    resolution: T,
) -> Result<SamplingLimit<T>>
where
    T: Real,
    P: ControlledField<T>,
    R: ControlLaw<T>,
    S: SetpointProfile<T>,
{
    if !(h_lo < h_hi) || resolution <= T::zero() {
        return Err(Error::InvalidBracket(
            "need h_lo < h_hi and a positive resolution".into(),
        ));
    }
    let mut runs = 0;
    let mut settled_at = |h: T| -> Result<bool> {
        let mut cfg = *base;
        cfg.h = h;
        runs += 1;
        Ok(simulate_closed_loop(plant, law, profile, x0, &cfg)?
            .verdict
            .is_settled())
    };

    if !settled_at(h_lo)? {
        return Err(Error::InvalidBracket(format!(
            "loop is not stable at the lower bracket h = {:?}",
            h_lo.to_f64()
        )));
    }
    if settled_at(h_hi)? {
        return Err(Error::InvalidBracket(format!(
            "loop is still stable at the upper bracket h = {:?}",
            h_hi.to_f64()
        )));
    }

    let mut lo = h_lo;
    let mut hi = h_hi;
    let half = real::<T>(0.5);
    while hi - lo > resolution {
        let mid = (lo + hi) * half;
        if settled_at(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(SamplingLimit {
        stable_h: lo,
        unstable_h: hi,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nodes::lobatto_nodes;
    use crate::plants::{ScalarGain, ScalarIntegrator};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lagrange_basis_is_cardinal_at_nodes() {
        let nodes = lobatto_nodes::<f64>(4).unwrap();
        for (i, &ci) in nodes.nodes().iter().enumerate() {
            let w = lagrange_basis(&nodes, ci);
            for j in 0..4 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert_eq!(w[j], expected);
            }
        }
    }

    #[test]
    fn lagrange_partition_of_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for s in 2..=6 {
            let nodes = lobatto_nodes::<f64>(s).unwrap();
            for _ in 0..100 {
                let tau: f64 = rng.random_range(0.0..1.0);
                let w = lagrange_basis(&nodes, tau);
                assert_abs_diff_eq!(w.sum(), 1.0, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn two_stage_lagrange_midpoint() {
        let nodes = lobatto_nodes::<f64>(2).unwrap();
        let w = lagrange_basis(&nodes, 0.5);
        assert_eq!(w[0], 0.5);
        assert_eq!(w[1], 0.5);
    }

    #[test]
    fn shaped_hold_reproduces_stage_inputs_bitwise() {
        let nodes = lobatto_nodes::<f64>(3).unwrap();
        let stages = vec![
            DVector::from_vec(vec![1.2345678901234567]),
            DVector::from_vec(vec![-0.9876543210987654]),
            DVector::from_vec(vec![0.5555555555555555]),
        ];
        let hold = HoldSignal::Shaped {
            nodes: nodes.clone(),
            stages: stages.clone(),
        };
        for (i, &ci) in nodes.nodes().iter().enumerate() {
            assert_eq!(hold.eval(ci)[0], stages[i][0]);
        }
    }

    #[test]
    fn shaped_hold_with_constant_law_is_constant() {
        let nodes = lobatto_nodes::<f64>(3).unwrap();
        let u0 = 2.5;
        let hold = HoldSignal::Shaped {
            nodes,
            stages: vec![DVector::from_element(1, u0); 3],
        };
        for k in 0..=10 {
            let tau = k as f64 / 10.0;
            assert_abs_diff_eq!(hold.eval(tau)[0], u0, epsilon = 1e-14);
        }
    }

    #[test]
    fn time_polynomial_law_is_reproduced_exactly() {
        // r(t, x) = t restricted to one interval is degree 1, below the
        // reconstruction degree, so the shaped signal must equal u(t) = t.
        struct TimeLaw;
        impl ControlLaw<f64> for TimeLaw {
            fn input_dim(&self) -> usize {
                1
            }
            fn eval(&self, t: f64, _x: &DVector<f64>) -> Result<DVector<f64>> {
                Ok(DVector::from_vec(vec![t]))
            }
        }
        let tableau = build_tableau::<f64>(3).unwrap();
        let h = 0.4;
        let plant = ScalarIntegrator;
        let law = TimeLaw;
        let target = TargetField::new(&plant, &law);
        let x0 = DVector::from_vec(vec![0.0]);
        let pred =
            predict_target(&target, 0.0, &x0, h, &tableau, &SolverConfig::default()).unwrap();
        let hold = shape_input(&law, 0.0, h, &pred, tableau.nodes()).unwrap();
        for k in 0..=8 {
            let tau = k as f64 / 8.0;
            assert_abs_diff_eq!(hold.eval(tau)[0], tau * h, epsilon = 1e-13);
        }
    }

    #[test]
    fn prediction_of_zero_target_stays_put() {
        struct NullLaw;
        impl ControlLaw<f64> for NullLaw {
            fn input_dim(&self) -> usize {
                1
            }
            fn eval(&self, _t: f64, _x: &DVector<f64>) -> Result<DVector<f64>> {
                Ok(DVector::zeros(1))
            }
        }
        let tableau = build_tableau::<f64>(3).unwrap();
        let plant = ScalarIntegrator;
        let law = NullLaw;
        let target = TargetField::new(&plant, &law);
        let x0 = DVector::from_vec(vec![0.7]);
        let pred =
            predict_target(&target, 0.0, &x0, 0.2, &tableau, &SolverConfig::default()).unwrap();
        for i in 0..3 {
            assert_eq!(pred.stage_state(i)[0], 0.7);
        }
    }

    fn convert_integrator(
        h: f64,
        x0: f64,
    ) -> (ZohConversion<f64>, StageSolution<f64>, CollocationTableau<f64>) {
        let tableau = build_tableau::<f64>(3).unwrap();
        let basis = crate::spline::build_spline_basis::<f64>(3).unwrap();
        let weights = basis.endpoint_weights();
        let plant = ScalarIntegrator;
        let law = ScalarGain { gain: 1.0 };
        let target = TargetField::new(&plant, &law);
        let x = DVector::from_vec(vec![x0]);
        let cfg = SolverConfig::default();
        let pred = predict_target(&target, 0.0, &x, h, &tableau, &cfg).unwrap();
        let conv = zoh_convert(
            &plant,
            &law,
            0.0,
            &x,
            h,
            &tableau,
            &weights,
            &pred,
            &cfg,
            &GaussNewtonConfig::default(),
        )
        .unwrap();
        (conv, pred, tableau)
    }

    #[test]
    fn integrator_conversion_matches_weighted_target_mean() {
        // For dx/dt = u the weighted defect is u - sum_i b_i f_d,i, so the
        // optimizer must return that mean with zero objective.
        let (conv, pred, tableau) = convert_integrator(0.25, 1.0);
        let basis = crate::spline::build_spline_basis::<f64>(3).unwrap();
        let weights = basis.endpoint_weights();
        let mut expected = 0.0;
        for i in 0..tableau.stages() {
            expected += weights[i] * pred.f_stages[(i, 0)];
        }
        assert_abs_diff_eq!(conv.input[0], expected, epsilon = 1e-9);
        assert!(conv.objective <= 1e-10, "objective {:.3e}", conv.objective);
    }

    #[test]
    fn conversion_beats_grid_scan() {
        let (conv, pred, tableau) = convert_integrator(0.25, 1.0);
        let basis = crate::spline::build_spline_basis::<f64>(3).unwrap();
        let weights = basis.endpoint_weights();
        let plant = ScalarIntegrator;
        let cfg = SolverConfig::default();
        let mut target_weighted = DVector::zeros(1);
        for i in 0..3 {
            target_weighted[0] += weights[i] * pred.f_stages[(i, 0)];
        }
        let x = DVector::from_vec(vec![1.0]);
        let mut best = f64::INFINITY;
        for k in 0..=2000 {
            let u = DVector::from_vec(vec![-2.0 + 2.0 * k as f64 / 2000.0]);
            let d = weighted_defect(
                &plant,
                &u,
                0.0,
                &x,
                0.25,
                &tableau,
                &weights,
                &target_weighted,
                &cfg,
            )
            .unwrap();
            best = best.min(d.norm());
        }
        assert!(
            conv.objective <= best + 1e-9,
            "optimizer {:.3e} vs grid {:.3e}",
            conv.objective,
            best
        );
    }

    #[test]
    fn conversion_objective_dominates_naive_and_stage_inputs() {
        let tableau = build_tableau::<f64>(3).unwrap();
        let basis = crate::spline::build_spline_basis::<f64>(3).unwrap();
        let weights = basis.endpoint_weights();
        let plant = ScalarIntegrator;
        let law = ScalarGain { gain: 1.0 };
        let target = TargetField::new(&plant, &law);
        let x = DVector::from_vec(vec![1.3]);
        let cfg = SolverConfig::default();
        let h = 0.3;
        let pred = predict_target(&target, 0.0, &x, h, &tableau, &cfg).unwrap();
        let conv = zoh_convert(
            &plant,
            &law,
            0.0,
            &x,
            h,
            &tableau,
            &weights,
            &pred,
            &cfg,
            &GaussNewtonConfig::default(),
        )
        .unwrap();
        let mut target_weighted = DVector::zeros(1);
        for i in 0..3 {
            target_weighted[0] += weights[i] * pred.f_stages[(i, 0)];
        }
        let objective_at = |u: &DVector<f64>| {
            weighted_defect(
                &plant,
                u,
                0.0,
                &x,
                h,
                &tableau,
                &weights,
                &target_weighted,
                &cfg,
            )
            .unwrap()
            .norm()
        };
        let naive = law.eval(0.0, &x).unwrap();
        assert!(conv.objective <= objective_at(&naive) + 1e-12);
        for i in 0..3 {
            let stage_u = law.eval(0.0, &pred.stage_state(i)).unwrap();
            assert!(conv.objective <= objective_at(&stage_u) + 1e-12);
        }
    }

    #[test]
    fn zero_objective_implies_matching_end_states() {
        // dx/dt = u reaches the target end state exactly when the weighted
        // defect vanishes: the defect times h is the terminal gap.
        let h = 0.25;
        let (conv, pred, tableau) = convert_integrator(h, 1.0);
        let plant = ScalarIntegrator;
        let field = ConstantInputField {
            plant: &plant,
            input: &conv.input,
        };
        let x = DVector::from_vec(vec![1.0]);
        let sol = solve_step(&field, 0.0, &x, h, &tableau, &SolverConfig::default()).unwrap();
        let gap = (sol.end_state()[0] - pred.end_state()[0]).abs();
        assert!(gap <= h * conv.objective + 1e-12, "gap {gap:.3e}");
    }

    #[test]
    fn equilibrium_loop_stays_at_rest() {
        // Plant dx/dt = u with law u = -x settled at the origin.
        let plant = ScalarIntegrator;
        let law = ScalarGain { gain: 1.0 };
        let profile = ConstantSetpoint(0.0);
        let x0 = DVector::from_vec(vec![0.0]);
        for mode in [
            InputMode::Shaped,
            InputMode::ZohConverted,
            InputMode::EulerEmulation,
        ] {
            let mut cfg = LoopConfig::<f64>::new(0.05, 3, mode);
            cfg.duration = 0.5;
            cfg.substeps = 10;
            let trace = simulate_closed_loop(&plant, &law, &profile, &x0, &cfg).unwrap();
            assert!(trace.verdict.is_settled());
            for p in &trace.truth {
                assert!(p.state[0].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn all_modes_converge_to_the_continuous_loop_as_h_shrinks() {
        // Closed loop dx/dt = -x from 1: compare the truth end state
        // against the exact exponential for shrinking sampling times.
        let plant = ScalarIntegrator;
        let law = ScalarGain { gain: 1.0 };
        let profile = ConstantSetpoint(0.0);
        let x0 = DVector::from_vec(vec![1.0]);
        let t_end = 0.5;
        for mode in [
            InputMode::Shaped,
            InputMode::ZohConverted,
            InputMode::EulerEmulation,
        ] {
            let mut errs = Vec::new();
            for &h in &[0.1, 0.05] {
                let mut cfg = LoopConfig::<f64>::new(h, 3, mode);
                cfg.duration = t_end;
                cfg.substeps = 20;
                cfg.settle_band = 1.0;
                let trace = simulate_closed_loop(&plant, &law, &profile, &x0, &cfg).unwrap();
                let end = trace.end_state().unwrap()[0];
                errs.push((end - (-t_end_f64()).exp()).abs());
            }
            assert!(
                errs[1] < errs[0] || errs[0] < 1e-12,
                "{mode:?}: errors {errs:?} do not shrink"
            );
        }

        fn t_end_f64() -> f64 {
            0.5
        }
    }

    #[test]
    fn sampling_limit_brackets_are_validated() {
        let plant = ScalarIntegrator;
        let law = ScalarGain { gain: 1.0 };
        let profile = ConstantSetpoint(0.0);
        let x0 = DVector::from_vec(vec![0.2]);
        let mut base = LoopConfig::new(0.05, 2, InputMode::EulerEmulation);
        base.duration = 2.0;
        base.substeps = 10;
        base.settle_band = 1e-3;
        // Upper end chosen stable as well: the bracket must be rejected.
        match find_sampling_limit(&plant, &law, &profile, &x0, &base, 0.05, 0.06, 0.01) {
            Err(Error::InvalidBracket(_)) => {}
            other => panic!("expected invalid bracket, got {other:?}"),
        }
    }

    #[test]
    fn sampling_limit_bisection_finds_the_euler_boundary() {
        // For dx/dt = u, u = -x under emulation the discrete map is
        // x_{k+1} = (1 - h) x_k; tracking to the origin within the band
        // fails around h = 2 where the map stops contracting.
        let plant = ScalarIntegrator;
        let law = ScalarGain { gain: 1.0 };
        let profile = ConstantSetpoint(0.0);
        let x0 = DVector::from_vec(vec![0.5]);
        let mut base = LoopConfig::new(0.1, 2, InputMode::EulerEmulation);
        base.duration = 300.0;
        base.substeps = 10;
        base.settle_band = 1e-3;
        let limit =
            find_sampling_limit(&plant, &law, &profile, &x0, &base, 0.5, 3.0, 0.01).unwrap();
        assert!(
            limit.stable_h > 1.8 && limit.unstable_h < 2.2,
            "boundary near 2 expected, got [{}, {}]",
            limit.stable_h,
            limit.unstable_h
        );
    }
}
