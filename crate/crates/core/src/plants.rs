//! Built-in test systems for convergence studies and solver tests.

use nalgebra::{DMatrix, DVector};

use crate::control::{ControlLaw, ControlledField};
use crate::error::Result;
use crate::scalar::Real;
use crate::solver::VectorField;

/// Scalar decay/growth: dx/dt = rate * x.
#[derive(Debug, Clone, Copy)]
pub struct Decay<T> {
    pub rate: T,
}

impl<T: Real> Decay<T> {
    pub fn new(rate: T) -> Self {
        Decay { rate }
    }
}

impl<T: Real> VectorField<T> for Decay<T> {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, _t: T, x: &DVector<T>) -> Result<DVector<T>> {
        Ok(DVector::from_vec(vec![self.rate * x[0]]))
    }

    fn jacobian(&self, _t: T, _x: &DVector<T>) -> Option<DMatrix<T>> {
        Some(DMatrix::from_element(1, 1, self.rate))
    }
}

/// Harmonic oscillator: dx1/dt = x2, dx2/dt = -x1.
#[derive(Debug, Clone, Copy)]
pub struct Harmonic;

impl Harmonic {
    /// Conserved energy (x1^2 + x2^2)/2.
    pub fn energy<T: Real>(x: &DVector<T>) -> T {
        (x[0] * x[0] + x[1] * x[1]) / (T::one() + T::one())
    }
}

impl<T: Real> VectorField<T> for Harmonic {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, _t: T, x: &DVector<T>) -> Result<DVector<T>> {
        Ok(DVector::from_vec(vec![x[1], -x[0]]))
    }

    fn jacobian(&self, _t: T, _x: &DVector<T>) -> Option<DMatrix<T>> {
        let mut j = DMatrix::zeros(2, 2);
        j[(0, 1)] = T::one();
        j[(1, 0)] = -T::one();
        Some(j)
    }
}

/// Single integrator driven directly by the input: dx/dt = u.
#[derive(Debug, Clone, Copy)]
pub struct ScalarIntegrator;

impl<T: Real> ControlledField<T> for ScalarIntegrator {
    fn dim(&self) -> usize {
        1
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn eval(&self, _t: T, _x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        Ok(DVector::from_vec(vec![u[0]]))
    }
}

/// Linear plant dx/dt = A x + B u.
#[derive(Debug, Clone)]
pub struct LinearPlant<T> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
}

impl<T: Real> ControlledField<T> for LinearPlant<T> {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn eval(&self, _t: T, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        Ok(&self.a * x + &self.b * u)
    }
}

/// Static linear state feedback u = -K x.
#[derive(Debug, Clone)]
pub struct LinearFeedback<T> {
    pub k: DMatrix<T>,
}

impl<T: Real> ControlLaw<T> for LinearFeedback<T> {
    fn input_dim(&self) -> usize {
        self.k.nrows()
    }

    fn eval(&self, _t: T, x: &DVector<T>) -> Result<DVector<T>> {
        Ok(-(&self.k * x))
    }
}

/// Proportional law u = -gain * x for scalar plants.
#[derive(Debug, Clone, Copy)]
pub struct ScalarGain<T> {
    pub gain: T,
}

impl<T: Real> ControlLaw<T> for ScalarGain<T> {
    fn input_dim(&self) -> usize {
        1
    }

    fn eval(&self, _t: T, x: &DVector<T>) -> Result<DVector<T>> {
        Ok(DVector::from_vec(vec![-self.gain * x[0]]))
    }
}
