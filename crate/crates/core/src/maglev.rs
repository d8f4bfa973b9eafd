//! Magnetic levitation scenario.
//!
//! Plant states: ball-magnet distance s (m), momentum p (kg m/s), coil
//! current i (A, always positive); input is the coil voltage u (V). The
//! distance-dependent inductance makes the magnetic force nonlinear in s,
//! and the passivity-based design below assigns a target port-Hamiltonian
//! structure with a state-dependent interconnection matrix.
//!
//! The system is in strict-feedback form: a fictitious control i^2 =
//! phi(s, p) stabilizes the mechanical subsystem, and the transformed
//! coordinate z = i^2 - phi(s, p) measures the deviation from it. In
//! (s, p, z) the matching conditions are satisfied exactly, so the final
//! voltage law reduces to a division by the single nonzero input-gain
//! entry.

use nalgebra::DVector;

use crate::control::{ControlLaw, ControlledField, SetpointProfile};
use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// Physical parameters of the levitation rig.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagLevParams<T> {
    /// Ball mass (kg).
    pub m: T,
    /// Gravitational acceleration (m/s^2).
    pub g: T,
    /// Coil resistance (Ohm).
    pub r: T,
    /// Inductance floor (H).
    pub l_inf: T,
    /// Inductance amplitude (H).
    pub a: T,
    /// Inductance length scale (1/m).
    pub b: T,
}

impl<T: Real> Default for MagLevParams<T> {
    /// Identified parameters of the laboratory test bench.
    fn default() -> Self {
        MagLevParams {
            m: real(85.9e-3),
            g: real(9.81),
            r: real(2.1512),
            l_inf: real(54.9e-3),
            a: real(15e-3),
            b: real(50.4131),
        }
    }
}

/// Plant state in original coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagLevState<T> {
    pub s: T,
    pub p: T,
    pub i: T,
}

impl<T: Real> MagLevState<T> {
    pub fn to_vector(self) -> DVector<T> {
        DVector::from_vec(vec![self.s, self.p, self.i])
    }

    pub fn from_vector(x: &DVector<T>) -> Self {
        MagLevState {
            s: x[0],
            p: x[1],
            i: x[2],
        }
    }
}

/// State in transformed coordinates, z = i^2 - phi(s, p).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HatState<T> {
    pub s: T,
    pub p: T,
    pub z: T,
}

/// Controller gains; C and k1 place the mechanical eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdaPbcGains<T> {
    /// Stiffness C = m lambda_s lambda_p.
    pub c: T,
    /// Mechanical damping k1 = -m (lambda_s + lambda_p).
    pub k1: T,
    /// Damping on the z coordinate.
    pub k2: T,
    pub lambda_s: T,
    pub lambda_p: T,
    /// Position setpoint (m).
    pub s_star: T,
}

impl<T: Real> IdaPbcGains<T> {
    /// Gains from the desired mechanical eigenvalues (both negative).
    pub fn from_eigenvalues(m: T, lambda_s: T, lambda_p: T, k2: T, s_star: T) -> Self {
        IdaPbcGains {
            c: m * lambda_s * lambda_p,
            k1: -m * (lambda_s + lambda_p),
            k2,
            lambda_s,
            lambda_p,
            s_star,
        }
    }

    /// The gain set used by the benchmark scenario: lambda = -50 twice,
    /// k2 = 80, at the given setpoint.
    pub fn benchmark(params: &MagLevParams<T>, s_star: T) -> Self {
        let lambda = real::<T>(-50.0);
        Self::from_eigenvalues(params.m, lambda, lambda, real(80.0), s_star)
    }
}

/// Inductance L(s) = L_inf + a/(b s + 1)^3 and its first derivative.
pub fn inductance<T: Real>(s: T, params: &MagLevParams<T>) -> Result<(T, T)> {
    let coil = coil_profile(s, params)?;
    Ok((coil.0, coil.1))
}

/// (L, L', L''); the curvature enters the chain rule for phi-dot.
fn coil_profile<T: Real>(s: T, params: &MagLevParams<T>) -> Result<(T, T, T)> {
    let w = params.b * s + T::one();
    if w <= T::zero() {
        return Err(Error::Domain(format!(
            "inductance undefined: b s + 1 = {:?} <= 0",
            w.to_f64()
        )));
    }
    let w3 = w * w * w;
    let l = params.l_inf + params.a / w3;
    let three = real::<T>(3.0);
    let l1 = -three * params.a * params.b / (w3 * w);
    let twelve = real::<T>(12.0);
    let l2 = twelve * params.a * params.b * params.b / (w3 * w * w);
    Ok((l, l1, l2))
}

/// Plant rates (ds/dt, dp/dt, di/dt) at state x under voltage u.
pub fn plant_dynamics<T: Real>(
    x: &MagLevState<T>,
    u: T,
    params: &MagLevParams<T>,
) -> Result<DVector<T>> {
    let (l, l1) = inductance(x.s, params)?;
    let half = real::<T>(0.5);
    let s_dot = x.p / params.m;
    let p_dot = half * l1 * x.i * x.i + params.m * params.g;
    let i_dot = -(params.r + l1 * x.p / params.m) * x.i / l + u / l;
    Ok(DVector::from_vec(vec![s_dot, p_dot, i_dot]))
}

/// Fictitious control value (A^2) for the mechanical subsystem.
pub fn phi<T: Real>(s: T, p: T, gains: &IdaPbcGains<T>, params: &MagLevParams<T>) -> Result<T> {
    let (_, l1) = inductance(s, params)?;
    let two = real::<T>(2.0);
    Ok(two / l1 * (-gains.c * (s - gains.s_star) - gains.k1 * p / params.m - params.m * params.g))
}

/// Analytic partial derivatives (d phi/d s, d phi/d p).
pub fn phi_partials<T: Real>(
    s: T,
    p: T,
    gains: &IdaPbcGains<T>,
    params: &MagLevParams<T>,
) -> Result<(T, T)> {
    let (_, l1, l2) = coil_profile(s, params)?;
    let two = real::<T>(2.0);
    let value = phi(s, p, gains, params)?;
    let d_s = -(l2 / l1) * value - two * gains.c / l1;
    let d_p = -two * gains.k1 / (params.m * l1);
    Ok((d_s, d_p))
}

/// Time derivative of phi along the flow, by the chain rule. Rows 1-2 of
/// the plant and target dynamics coincide, so either flow gives the same
/// value.
pub fn phi_time_derivative<T: Real>(
    hat: &HatState<T>,
    gains: &IdaPbcGains<T>,
    params: &MagLevParams<T>,
) -> Result<T> {
    let (phi_s, phi_p) = phi_partials(hat.s, hat.p, gains, params)?;
    let (_, l1) = inductance(hat.s, params)?;
    let half = real::<T>(0.5);
    let value = phi(hat.s, hat.p, gains, params)?;
    let s_dot = hat.p / params.m;
    let p_dot = params.m * params.g + half * l1 * (hat.z + value);
    Ok(phi_s * s_dot + phi_p * p_dot)
}

/// Transform to (s, p, z) coordinates.
pub fn to_hat<T: Real>(
    x: &MagLevState<T>,
    gains: &IdaPbcGains<T>,
    params: &MagLevParams<T>,
) -> Result<HatState<T>> {
    let value = phi(x.s, x.p, gains, params)?;
    Ok(HatState {
        s: x.s,
        p: x.p,
        z: x.i * x.i - value,
    })
}

/// Transform back, taking the nonnegative current branch.
pub fn from_hat<T: Real>(
    hat: &HatState<T>,
    gains: &IdaPbcGains<T>,
    params: &MagLevParams<T>,
) -> Result<MagLevState<T>> {
    let value = phi(hat.s, hat.p, gains, params)?;
    let radicand = hat.z + value;
    if radicand < T::zero() {
        return Err(Error::ControlDomain(format!(
            "negative radicand z + phi = {:?}",
            radicand.to_f64()
        )));
    }
    Ok(MagLevState {
        s: hat.s,
        p: hat.p,
        i: radicand.sqrt(),
    })
}

/// Drift f-hat and the single nonzero input-gain entry g of the
/// transformed system.
pub fn hat_field<T: Real>(
    hat: &HatState<T>,
    gains: &IdaPbcGains<T>,
    params: &MagLevParams<T>,
) -> Result<(DVector<T>, T)> {
    let (l, l1) = inductance(hat.s, params)?;
    let value = phi(hat.s, hat.p, gains, params)?;
    let radicand = hat.z + value;
    if radicand < T::zero() {
        return Err(Error::ControlDomain(format!(
            "negative radicand z + phi = {:?}",
            radicand.to_f64()
        )));
    }
    let two = real::<T>(2.0);
    let half = real::<T>(0.5);
    let s_dot = hat.p / params.m;
    let p_dot = params.m * params.g + half * l1 * radicand;
    let phi_dot = phi_time_derivative(hat, gains, params)?;
    let f_z = -two / l * (params.r + l1 * hat.p / params.m) * radicand - phi_dot;
    let g_z = two * radicand.sqrt() / l;
    Ok((DVector::from_vec(vec![s_dot, p_dot, f_z]), g_z))
}

/// Closed-loop energy H_d = p^2/2m + C/2 (s - s*)^2 + z^2/2.
pub fn hd_energy<T: Real>(hat: &HatState<T>, gains: &IdaPbcGains<T>) -> T {
    let half = real::<T>(0.5);
    let ds = hat.s - gains.s_star;
    half * hat.p * hat.p / gains_mass(gains)
        + half * gains.c * ds * ds
        + half * hat.z * hat.z
}

// H_d's momentum term needs the mass; it is recoverable from the gain
// definitions: k1 = -m (l_s + l_p) and C = m l_s l_p.
fn gains_mass<T: Real>(gains: &IdaPbcGains<T>) -> T {
    gains.c / (gains.lambda_s * gains.lambda_p)
}

/// Gradient of H_d in hat coordinates.
pub fn hd_gradient<T: Real>(hat: &HatState<T>, gains: &IdaPbcGains<T>) -> DVector<T> {
    DVector::from_vec(vec![
        gains.c * (hat.s - gains.s_star),
        hat.p / gains_mass(gains),
        hat.z,
    ])
}

/// Target rates (J_d - R_d) grad H_d in hat coordinates.
pub fn hat_target_rates<T: Real>(
    hat: &HatState<T>,
    gains: &IdaPbcGains<T>,
    params: &MagLevParams<T>,
) -> Result<DVector<T>> {
    let (_, l1) = inductance(hat.s, params)?;
    let grad = hd_gradient(hat, gains);
    let half = real::<T>(0.5);
    Ok(DVector::from_vec(vec![
        grad[1],
        -grad[0] - gains.k1 * grad[1] + half * l1 * grad[2],
        -half * l1 * grad[1] - gains.k2 * grad[2],
    ]))
}

/// IDA-PBC voltage law in original coordinates. The input matrix has a
/// single nonzero entry, so the pseudo-inverse is a scalar division; it
/// requires z + phi > 0 strictly.
pub fn ida_pbc_control<T: Real>(
    x: &MagLevState<T>,
    gains: &IdaPbcGains<T>,
    params: &MagLevParams<T>,
) -> Result<T> {
    let hat = to_hat(x, gains, params)?;
    let (f_hat, g_z) = hat_field(&hat, gains, params)?;
    if g_z == T::zero() {
        return Err(Error::ControlDomain(
            "input gain vanished: z + phi must be strictly positive".into(),
        ));
    }
    let target = hat_target_rates(&hat, gains, params)?;
    Ok((target[2] - f_hat[2]) / g_z)
}

/// Desired closed-loop field in original coordinates, f(x, r(x)).
pub fn target_field<T: Real>(
    x: &MagLevState<T>,
    gains: &IdaPbcGains<T>,
    params: &MagLevParams<T>,
) -> Result<DVector<T>> {
    let u = ida_pbc_control(x, gains, params)?;
    plant_dynamics(x, u, params)
}

/// Steady current holding the ball at s_star: solves p-dot = 0.
pub fn equilibrium_current<T: Real>(s_star: T, params: &MagLevParams<T>) -> Result<T> {
    let (_, l1) = inductance(s_star, params)?;
    let two = real::<T>(2.0);
    Ok((-two * params.m * params.g / l1).sqrt())
}

/// Steady voltage at the equilibrium: u* = r i*.
pub fn equilibrium_voltage<T: Real>(s_star: T, params: &MagLevParams<T>) -> Result<T> {
    Ok(params.r * equilibrium_current(s_star, params)?)
}

/// The full equilibrium state (s*, 0, i*).
pub fn equilibrium_state<T: Real>(s_star: T, params: &MagLevParams<T>) -> Result<MagLevState<T>> {
    Ok(MagLevState {
        s: s_star,
        p: T::zero(),
        i: equilibrium_current(s_star, params)?,
    })
}

/// The plant as a controlled field, with the simulation guards: ball
/// position within the rig travel, current nonnegative.
#[derive(Debug, Clone, Copy)]
pub struct MagLevPlant<T> {
    pub params: MagLevParams<T>,
    /// Valid ball travel (m).
    pub s_range: (T, T),
}

impl<T: Real> MagLevPlant<T> {
    pub fn new(params: MagLevParams<T>) -> Self {
        MagLevPlant {
            params,
            s_range: (T::zero(), real(0.05)),
        }
    }
}

impl<T: Real> Default for MagLevPlant<T> {
    fn default() -> Self {
        MagLevPlant::new(MagLevParams::default())
    }
}

impl<T: Real> ControlledField<T> for MagLevPlant<T> {
    fn dim(&self) -> usize {
        3
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn eval(&self, _t: T, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        plant_dynamics(&MagLevState::from_vector(x), u[0], &self.params)
    }

    fn guard(&self, x: &DVector<T>) -> Option<String> {
        let state = MagLevState::from_vector(x);
        if state.s < self.s_range.0 || state.s > self.s_range.1 {
            return Some(format!(
                "ball position {:?} m outside the rig travel",
                state.s.to_f64()
            ));
        }
        if state.i < T::zero() {
            return Some("coil current went negative".into());
        }
        None
    }
}

/// The voltage law as a [`ControlLaw`], with the setpoint taken from a
/// profile at evaluation time.
#[derive(Debug, Clone)]
pub struct IdaPbcLaw<T, S> {
    pub gains: IdaPbcGains<T>,
    pub params: MagLevParams<T>,
    pub profile: S,
}

impl<T: Real, S: SetpointProfile<T>> ControlLaw<T> for IdaPbcLaw<T, S> {
    fn input_dim(&self) -> usize {
        1
    }

    fn eval(&self, t: T, x: &DVector<T>) -> Result<DVector<T>> {
        let mut gains = self.gains;
        gains.s_star = self.profile.setpoint(t);
        let u = ida_pbc_control(&MagLevState::from_vector(x), &gains, &self.params)?;
        Ok(DVector::from_vec(vec![u]))
    }
}

/// Square-wave setpoint smoothed by a first-order low-pass, evaluated
/// analytically segment by segment (continuous at the switch instants).
#[derive(Debug, Clone, Copy)]
pub struct FilteredSquareWave<T> {
    pub low: T,
    pub high: T,
    /// Switch period (s).
    pub period: T,
    /// Filter time constant (s).
    pub time_constant: T,
}

impl<T: Real> FilteredSquareWave<T> {
    /// The benchmark profile: 10 mm / 16 mm, switching every second,
    /// 50 ms time constant.
    pub fn benchmark() -> Self {
        FilteredSquareWave {
            low: real(0.010),
            high: real(0.016),
            period: real(1.0),
            time_constant: real(0.05),
        }
    }

    fn raw_target(&self, segment: usize) -> T {
        if segment % 2 == 0 {
            self.low
        } else {
            self.high
        }
    }
}

impl<T: Real> SetpointProfile<T> for FilteredSquareWave<T> {
    fn setpoint(&self, t: T) -> T {
        if t <= T::zero() {
            return self.low;
        }
        let segment = (t / self.period).to_f64().unwrap_or(0.0).floor() as usize;
        // Filter state at the start of each segment, propagated exactly.
        let mut y = self.low;
        for j in 0..segment {
            let target = self.raw_target(j);
            let decay = (-self.period / self.time_constant).exp();
            y = target + (y - target) * decay;
        }
        let target = self.raw_target(segment);
        let local = t - real::<T>(segment as f64) * self.period;
        let decay = (-local / self.time_constant).exp();
        target + (y - target) * decay
    }
}

/// Momentum estimator from position and current measurements, advanced by
/// one forward-Euler update per base sampling step.
#[derive(Debug, Clone, Copy)]
pub struct LuenbergerObserver<T> {
    pub l1: T,
    pub l2: T,
    /// Base sampling step (s).
    pub h: T,
    pub s_hat: T,
    pub p_hat: T,
}

impl<T: Real> LuenbergerObserver<T> {
    /// Place both observer eigenvalues at `pole` (negative).
    pub fn from_pole(pole: T, h: T, params: &MagLevParams<T>, s0: T, p0: T) -> Self {
        LuenbergerObserver {
            l1: -(pole + pole),
            l2: params.m * pole * pole,
            h,
            s_hat: s0,
            p_hat: p0,
        }
    }

    /// One observer update; returns the momentum estimate.
    pub fn step(&mut self, s_meas: T, i_meas: T, params: &MagLevParams<T>) -> Result<T> {
        let (_, l1) = inductance(s_meas, params)?;
        let half = real::<T>(0.5);
        let innovation = s_meas - self.s_hat;
        let s_rate = self.p_hat / params.m + self.l1 * innovation;
        let p_rate = half * l1 * i_meas * i_meas + params.m * params.g + self.l2 * innovation;
        self.s_hat += self.h * s_rate;
        self.p_hat += self.h * p_rate;
        Ok(self.p_hat)
    }
}
