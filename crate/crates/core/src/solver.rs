//! Implicit one-step solver, dense output and fixed-step integration.
//!
//! One step solves the stage equations X = X_k + h A F by full Newton on
//! the stacked stage derivatives. Stage 1 is explicit (the first tableau
//! row is zero), so only stages 2..=s enter the iteration; the end-of-step
//! state is the last stage (the method is stiffly accurate).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{real, Real};
use crate::spline::SplineBasis;
use crate::tableau::{build_tableau, CollocationTableau};

/// Right-hand side of an IVP dx/dt = f(t, x).
pub trait VectorField<T: Real> {
    fn dim(&self) -> usize;

    fn eval(&self, t: T, x: &DVector<T>) -> Result<DVector<T>>;

    /// Analytic Jacobian df/dx, if available.
    fn jacobian(&self, _t: T, _x: &DVector<T>) -> Option<DMatrix<T>> {
        None
    }
}

/// Adapter turning a closure into a [`VectorField`].
pub struct FnField<T, F> {
    dim: usize,
    f: F,
    #[allow(clippy::type_complexity)]
    jac: Option<Box<dyn Fn(T, &DVector<T>) -> DMatrix<T>>>,
}

impl<T: Real, F: Fn(T, &DVector<T>) -> DVector<T>> FnField<T, F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnField { dim, f, jac: None }
    }

    pub fn with_jacobian(
        mut self,
        jac: impl Fn(T, &DVector<T>) -> DMatrix<T> + 'static,
    ) -> Self {
        self.jac = Some(Box::new(jac));
        self
    }
}

impl<T: Real, F: Fn(T, &DVector<T>) -> DVector<T>> VectorField<T> for FnField<T, F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: T, x: &DVector<T>) -> Result<DVector<T>> {
        Ok((self.f)(t, x))
    }

    fn jacobian(&self, t: T, x: &DVector<T>) -> Option<DMatrix<T>> {
        self.jac.as_ref().map(|j| j(t, x))
    }
}

/// How the solver obtains the field Jacobian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacobianMode {
    /// Use the field's analytic Jacobian when it provides one, finite
    /// differences otherwise.
    #[default]
    Analytic,
    /// Always use finite differences.
    FiniteDifference,
}

/// Newton-iteration settings for the stage equations.
#[derive(Debug, Clone, Copy)]
pub struct SolverConfig<T> {
    /// Euclidean norm of the stacked stage residual at convergence.
    pub newton_tol: T,
    pub max_newton_iters: usize,
    pub jacobian_mode: JacobianMode,
    /// Relative finite-difference perturbation.
    pub fd_epsilon: T,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        SolverConfig {
            newton_tol: real(1e-12),
            max_newton_iters: 50,
            jacobian_mode: JacobianMode::default(),
            fd_epsilon: real(1e-7),
        }
    }
}

impl<T: Real> SolverConfig<T> {
    pub fn with_tol(mut self, tol: T) -> Self {
        self.newton_tol = tol;
        self
    }
}

/// Converged stage values of one step.
#[derive(Debug, Clone)]
pub struct StageSolution<T> {
    /// s x n stage states; row 1 is x_k exactly, row s the end state.
    pub x_stages: DMatrix<T>,
    /// s x n stage derivative values f(t_k + c_i h, x_i).
    pub f_stages: DMatrix<T>,
    pub newton_iterations: usize,
    /// Stacked residual norm at acceptance.
    pub residual: T,
}

impl<T: Real> StageSolution<T> {
    pub fn stages(&self) -> usize {
        self.x_stages.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x_stages.ncols()
    }

    /// State at the end of the step (last stage, c_s = 1).
    pub fn end_state(&self) -> DVector<T> {
        self.x_stages.row(self.stages() - 1).transpose()
    }

    pub fn stage_state(&self, i: usize) -> DVector<T> {
        self.x_stages.row(i).transpose()
    }

    pub fn stage_derivative(&self, i: usize) -> DVector<T> {
        self.f_stages.row(i).transpose()
    }
}

fn check_finite<T: Real>(v: &DVector<T>, t: T) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Evaluation {
            t: t.to_f64().unwrap_or(f64::NAN),
        })
    }
}

/// Field Jacobian according to the configured mode.
fn field_jacobian<T: Real, F: VectorField<T> + ?Sized>(
    f: &F,
    t: T,
    x: &DVector<T>,
    fx: &DVector<T>,
    cfg: &SolverConfig<T>,
) -> Result<DMatrix<T>> {
    if cfg.jacobian_mode == JacobianMode::Analytic {
        if let Some(j) = f.jacobian(t, x) {
            return Ok(j);
        }
    }
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut xp = x.clone();
    for j in 0..n {
        let delta = cfg.fd_epsilon * x[j].abs().max(T::one());
        xp[j] = x[j] + delta;
        let fp = f.eval(t, &xp)?;
        check_finite(&fp, t)?;
        xp[j] = x[j];
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fx[i]) / delta;
        }
    }
    Ok(jac)
}

/// Solve the stage equations over [t_k, t_k + h].
pub fn solve_step<T: Real, F: VectorField<T> + ?Sized>(
    f: &F,
    t_k: T,
    x_k: &DVector<T>,
    h: T,
    tableau: &CollocationTableau<T>,
    cfg: &SolverConfig<T>,
) -> Result<StageSolution<T>> {
    let s = tableau.stages();
    let n = x_k.len();
    let a = tableau.a();
    let c = tableau.nodes().nodes();

    let f1 = f.eval(t_k, x_k)?;
    check_finite(&f1, t_k)?;

    // Stage derivative matrix; constant extrapolation as initial guess.
    let mut f_stages = DMatrix::zeros(s, n);
    for i in 0..s {
        f_stages.set_row(i, &f1.transpose());
    }

    let unknowns = (s - 1) * n;
    let mut x_stages = DMatrix::zeros(s, n);
    x_stages.set_row(0, &x_k.transpose());

    let stage_states = |f_st: &DMatrix<T>, x_st: &mut DMatrix<T>| {
        for i in 1..s {
            let mut xi = x_k.clone();
            for j in 0..s {
                let aij = a[(i, j)];
                if aij != T::zero() {
                    for d in 0..n {
                        xi[d] += h * aij * f_st[(j, d)];
                    }
                }
            }
            x_st.set_row(i, &xi.transpose());
        }
    };

    let mut residual_norm = T::zero();
    let mut iterations = 0;
    let mut converged = false;
    let mut residual = DVector::<T>::zeros(unknowns);
    let mut f_at = vec![f1.clone(); s];

    for iter in 0..=cfg.max_newton_iters {
        stage_states(&f_stages, &mut x_stages);
        for i in 1..s {
            let t_i = t_k + c[i] * h;
            let xi = x_stages.row(i).transpose();
            let fi = f.eval(t_i, &xi)?;
            check_finite(&fi, t_i)?;
            for d in 0..n {
                residual[(i - 1) * n + d] = f_stages[(i, d)] - fi[d];
            }
            f_at[i] = fi;
        }
        residual_norm = residual.norm();
        iterations = iter;
        if residual_norm <= cfg.newton_tol {
            converged = true;
            break;
        }
        if iter == cfg.max_newton_iters {
            break;
        }

        // Block Newton matrix: d res_i / d F_j = delta_ij I - h a_ij J_f(t_i, x_i)
        let mut newton = DMatrix::zeros(unknowns, unknowns);
        for i in 1..s {
            let t_i = t_k + c[i] * h;
            let xi = x_stages.row(i).transpose();
            let jf = field_jacobian(f, t_i, &xi, &f_at[i], cfg)?;
            for j in 1..s {
                let aij = a[(i, j)];
                for r in 0..n {
                    for col in 0..n {
                        let mut v = -h * aij * jf[(r, col)];
                        if i == j && r == col {
                            v += T::one();
                        }
                        newton[((i - 1) * n + r, (j - 1) * n + col)] = v;
                    }
                }
            }
        }
        let delta = newton.lu().solve(&residual).ok_or_else(|| {
            Error::DegenerateSystem("singular Newton matrix in stage solve".into())
        })?;
        for i in 1..s {
            for d in 0..n {
                f_stages[(i, d)] -= delta[(i - 1) * n + d];
            }
        }
    }

    if !converged {
        return Err(Error::NewtonDidNotConverge {
            iterations,
            residual: residual_norm.to_f64().unwrap_or(f64::NAN),
        });
    }

    stage_states(&f_stages, &mut x_stages);
    // Refresh stage derivatives to the collocation values at the accepted
    // states so the collocation condition holds to the reported residual.
    for i in 1..s {
        let t_i = t_k + c[i] * h;
        let xi = x_stages.row(i).transpose();
        let fi = f.eval(t_i, &xi)?;
        f_stages.set_row(i, &fi.transpose());
    }
    stage_states(&f_stages, &mut x_stages);
    x_stages.set_row(0, &x_k.transpose());

    Ok(StageSolution {
        x_stages,
        f_stages,
        newton_iterations: iterations,
        residual: residual_norm,
    })
}

/// Continuous extension x(t_k + tau h) = x_k + h F^T H(tau).
pub fn dense_output<T: Real>(
    x_k: &DVector<T>,
    h: T,
    f_stages: &DMatrix<T>,
    basis: &SplineBasis<T>,
    tau: T,
) -> Result<DVector<T>> {
    let weights = basis.eval(tau, 0)?;
    let mut out = x_k.clone();
    for i in 0..f_stages.nrows() {
        for d in 0..f_stages.ncols() {
            out[d] += h * weights[i] * f_stages[(i, d)];
        }
    }
    Ok(out)
}

/// Per-step diagnostics of a fixed-step integration.
#[derive(Debug, Clone, Copy)]
pub struct StepDiagnostics<T> {
    pub newton_iterations: usize,
    pub residual: T,
}

/// States at the grid points of a fixed-step integration.
#[derive(Debug, Clone)]
pub struct OdeTrace<T> {
    pub t: Vec<T>,
    pub x: Vec<DVector<T>>,
    pub steps: Vec<StepDiagnostics<T>>,
}

impl<T: Real> OdeTrace<T> {
    pub fn end_state(&self) -> &DVector<T> {
        self.x.last().expect("trace holds at least the initial state")
    }
}

/// Integrate from t0 to t_end with fixed step h (short final step if the
/// span is not an integer multiple).
pub fn integrate<T: Real, F: VectorField<T> + ?Sized>(
    f: &F,
    x0: &DVector<T>,
    t0: T,
    t_end: T,
    h: T,
    tableau: &CollocationTableau<T>,
    cfg: &SolverConfig<T>,
) -> Result<OdeTrace<T>> {
    if t_end <= t0 {
        return Err(Error::Domain("t_end must exceed t0".into()));
    }
    if h <= T::zero() {
        return Err(Error::Domain("step size must be positive".into()));
    }
    let span = t_end - t0;
    let ratio = (span / h).to_f64().unwrap_or(0.0);
    let mut whole = ratio.floor() as usize;
    if (ratio - ratio.round()).abs() < 1e-9 {
        whole = ratio.round() as usize;
    }
    let remainder = span - real::<T>(whole as f64) * h;

    let mut trace = OdeTrace {
        t: vec![t0],
        x: vec![x0.clone()],
        steps: Vec::new(),
    };
    let mut t = t0;
    let mut x = x0.clone();
    for k in 0..whole {
        let sol = solve_step(f, t, &x, h, tableau, cfg).map_err(|e| e.at_step(k))?;
        x = sol.end_state();
        t = t0 + real::<T>((k + 1) as f64) * h;
        trace.t.push(t);
        trace.x.push(x.clone());
        trace.steps.push(StepDiagnostics {
            newton_iterations: sol.newton_iterations,
            residual: sol.residual,
        });
    }
    if remainder > h * real::<T>(1e-9) {
        let sol = solve_step(f, t, &x, remainder, tableau, cfg).map_err(|e| e.at_step(whole))?;
        x = sol.end_state();
        trace.t.push(t_end);
        trace.x.push(x);
        trace.steps.push(StepDiagnostics {
            newton_iterations: sol.newton_iterations,
            residual: sol.residual,
        });
    }
    Ok(trace)
}

/// Ground-truth end state: five-stage integration with step halving until
/// two consecutive refinements agree to 1e-12 relative.
pub fn reference_solve<T: Real, F: VectorField<T> + ?Sized>(
    f: &F,
    x0: &DVector<T>,
    t0: T,
    t_end: T,
) -> Result<DVector<T>> {
    let tableau = build_tableau::<T>(5)?;
    let cfg = SolverConfig {
        newton_tol: real(1e-14),
        ..SolverConfig::default()
    };
    let span = (t_end - t0).to_f64().unwrap_or(1.0);
    let mut steps = 16usize;
    let mut h = (t_end - t0) / real::<T>(steps as f64);
    let mut prev = integrate(f, x0, t0, t_end, h, &tableau, &cfg)?
        .end_state()
        .clone();
    let tol = real::<T>(1e-12);
    let mut last_change = T::zero();
    for _ in 0..14 {
        steps *= 2;
        h = (t_end - t0) / real::<T>(steps as f64);
        let next = integrate(f, x0, t0, t_end, h, &tableau, &cfg)?
            .end_state()
            .clone();
        last_change = (&next - &prev).norm() / (T::one() + next.norm());
        if last_change < tol {
            return Ok(next);
        }
        prev = next;
    }
    let _ = span;
    Err(Error::OraclePrecision {
        last_change: last_change.to_f64().unwrap_or(f64::NAN),
    })
}

/// Least-squares slope of log(err) against log(h).
#[derive(Debug, Clone, Copy)]
pub struct OrderFit {
    pub slope: f64,
    pub points_used: usize,
}

/// Fit the observed convergence order, excluding error values below
/// `floor` (accuracy-floor rows would bias the slope). At least the two
/// coarsest points are always kept.
pub fn fit_convergence_order(h: &[f64], err: &[f64], floor: f64) -> OrderFit {
    assert_eq!(h.len(), err.len());
    let mut pts: Vec<(f64, f64)> = h
        .iter()
        .zip(err)
        .filter(|(_, &e)| e > floor)
        .map(|(&hi, &ei)| (hi.ln(), ei.ln()))
        .collect();
    if pts.len() < 2 {
        let mut all: Vec<(f64, f64)> = h.iter().zip(err).map(|(&hi, &ei)| (hi, ei)).collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0));
        pts = all
            .into_iter()
            .take(2)
            .map(|(hi, ei)| (hi.ln(), ei.max(f64::MIN_POSITIVE).ln()))
            .collect();
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    OrderFit {
        slope: (n * sxy - sx * sy) / (n * sxx - sx * sx),
        points_used: pts.len(),
    }
}
