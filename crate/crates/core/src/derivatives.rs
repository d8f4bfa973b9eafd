//! Derivative matrices D^(i).
//!
//! Once the stage states and the start-point derivatives are fixed, the
//! remaining Taylor identities (index pairs (s-m, m) for m = 2..=s,
//! evaluated at the interior and terminal nodes) each isolate one new block
//! of unknowns: the (m-1)-th time derivatives of f at those nodes. Solving
//! them in ascending m expresses every derivative as a constant matrix
//! acting on the stage derivative values:
//!
//!   d^i/dt^i f at the nodes = h^{-i} D^(i) F,   i = 0..=s-1,
//!
//! with D^(0) the identity. All rows of D^(s-1) coincide: the top
//! derivative is approximated by one constant value across the interval.

use nalgebra::{DMatrix, RowDVector};

use crate::error::Result;
use crate::nodes::lobatto_nodes;
use crate::scalar::{binomial, factorial, Real};
use crate::tableau::{assemble_master_system, build_tableau_from_nodes};

/// The family D^(0) .. D^(s-1); entry i applies with prefactor h^{-i}.
#[derive(Debug, Clone)]
pub struct DerivativeMatrices<T> {
    mats: Vec<DMatrix<T>>,
}

impl<T: Real> DerivativeMatrices<T> {
    pub fn stages(&self) -> usize {
        self.mats.len()
    }

    /// D^(i), the coefficient matrix for the i-th time derivative of f.
    pub fn d(&self, i: usize) -> &DMatrix<T> {
        &self.mats[i]
    }

    pub fn all(&self) -> &[DMatrix<T>] {
        &self.mats
    }
}

/// Build D^(0) .. D^(s-1) for the s-stage scheme.
pub fn build_derivative_matrices<T: Real>(s: usize) -> Result<DerivativeMatrices<T>> {
    let nodes = lobatto_nodes::<T>(s)?;
    let sys = assemble_master_system(&nodes)?;
    let tableau = build_tableau_from_nodes(&nodes)?;
    let a = tableau.a();
    let c = nodes.nodes();

    // Row j-1 expresses the j-th derivative of f at the interval start.
    let start_rows = sys.start_derivative_rows()?;

    let mut mats: Vec<DMatrix<T>> = vec![DMatrix::identity(s, s)];
    for m in 2..=s {
        let mut d = DMatrix::zeros(s, s);
        // Direct solve only for nodes c_i >= 1/2: the i-th row carries a
        // factor m!/c_i^m, so small nodes amplify roundoff. Rows for the
        // lower half follow from the node symmetry
        //   D^(m-1)[i][q] = (-1)^(m-1) D^(m-1)[s-1-i][s-1-q].
        for i in 1..s {
            if c[i] + c[i] < T::one() {
                continue;
            }
            // All known quantities of the (s-m, m) identity at node c_i,
            // moved to the right-hand side and expressed as coefficient
            // rows over the stage derivative values (h factored out).
            let mut row = RowDVector::zeros(s);
            // -A^m_{s-m} (x_i - x_k)/h
            row += a.row(i) * -binomial::<T>(s, m);
            // +A^{m-1}_{s-m} c_i f_i
            row[i] += binomial::<T>(s - 1, m - 1) * c[i];
            // known interior-node derivatives of orders 1..m-2
            for j in 2..m {
                let sign = if j % 2 == 0 { -T::one() } else { T::one() };
                let coeff = sign * binomial::<T>(s - j, m - j) * c[i].powi(j as i32)
                    / factorial::<T>(j);
                row += mats[j - 1].row(i) * coeff;
            }
            // start-point derivatives of orders 0..s-m-1, known from the
            // compact system (order 0 is the first stage value itself)
            for j in 1..=(s - m) {
                let coeff = binomial::<T>(s - j, m) * c[i].powi(j as i32) / factorial::<T>(j);
                if j == 1 {
                    row[0] += coeff;
                } else {
                    row += start_rows.row(j - 2) * coeff;
                }
            }
            let sign = if m % 2 == 0 { T::one() } else { -T::one() };
            let scale = sign * factorial::<T>(m) / c[i].powi(m as i32);
            d.set_row(i, &(row * scale));
        }
        let mirror_sign = if (m - 1) % 2 == 0 {
            T::one()
        } else {
            -T::one()
        };
        for i in 0..s {
            if c[i] + c[i] < T::one() {
                for q in 0..s {
                    d[(i, q)] = mirror_sign * d[(s - 1 - i, s - 1 - q)];
                }
            }
        }
        mats.push(d);
    }
    Ok(DerivativeMatrices { mats })
}
