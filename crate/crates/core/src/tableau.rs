//! Assembly of the s-stage Lobatto IIIA tableau from the compact
//! coefficient system.
//!
//! Two families of two-sided Taylor identities evaluated at the nodes give
//! 2s-1 independent linear equations for the stage states and the higher
//! time derivatives at the interval start. Eliminating the derivative block
//! yields the Runge-Kutta coefficient matrix A = M - P Q^{-1} N.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::nodes::{lobatto_nodes, NodeSet};
use crate::scalar::{factorial, real, Real};

/// Convention for the powers of the step size h inside `P` and `Q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HConvention {
    /// Entries are stored h-free: column j of both `P` and `Q` has been
    /// divided by h^(j+1). The powers cancel inside P Q^{-1}, so the
    /// resulting tableau is identical to the literal h-carrying assembly.
    FactoredOut,
}

/// The compact coefficient system [I P; 0 Q] [X; D] = [I M; 0 N] [X_k; hF].
#[derive(Debug, Clone)]
pub struct MasterSystem<T> {
    /// s x (s-1), couples stage states to start-point derivatives.
    pub p: DMatrix<T>,
    /// (s-1) x (s-1), start-point derivative block.
    pub q: DMatrix<T>,
    /// s x s, first column holds the nodes, remaining columns zero.
    pub m: DMatrix<T>,
    /// (s-1) x s, two nonzeros per row: c_{i+1}/s and -c_{i+1}/s.
    pub n: DMatrix<T>,
    pub h_convention: HConvention,
}

impl<T: Real> MasterSystem<T> {
    pub fn stages(&self) -> usize {
        self.m.nrows()
    }

    /// Q^{-1} N: row j gives the h-free coefficient row expressing the j-th
    /// time derivative of f at the interval start in terms of the stage
    /// derivative values.
    pub fn start_derivative_rows(&self) -> Result<DMatrix<T>> {
        let qinv = self
            .q
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::DegenerateSystem("Q is singular".into()))?;
        let identity_gap = (&self.q * &qinv - DMatrix::identity(self.q.nrows(), self.q.nrows()))
            .amax();
        if !identity_gap.is_finite() || identity_gap > real::<T>(1e-6) {
            return Err(Error::DegenerateSystem(format!(
                "Q inversion failed (residual {:?}); nodes are not distinct",
                identity_gap.to_f64()
            )));
        }
        Ok(qinv * &self.n)
    }
}

/// Lobatto IIIA tableau: nodes c, coefficient matrix A, weights b.
#[derive(Debug, Clone)]
pub struct CollocationTableau<T> {
    nodes: NodeSet<T>,
    a: DMatrix<T>,
    b: DVector<T>,
}

impl<T: Real> CollocationTableau<T> {
    pub fn stages(&self) -> usize {
        self.nodes.stages()
    }

    /// Classical order of the s-stage method, 2s - 2.
    pub fn classical_order(&self) -> usize {
        2 * self.stages() - 2
    }

    pub fn nodes(&self) -> &NodeSet<T> {
        &self.nodes
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DVector<T> {
        &self.b
    }
}

/// Populate P, Q, M, N for a node set, h factored out.
pub fn assemble_master_system<T: Real>(nodes: &NodeSet<T>) -> Result<MasterSystem<T>> {
    let s = nodes.stages();
    if s < 2 {
        return Err(Error::InvalidStageCount(s));
    }
    let c = nodes.nodes();
    let s_inv = T::one() / real::<T>(s as f64);

    // P_{i,j} = -c_i^{j+1} / (j+1)!  (h^{j+1} factored out)
    let p = DMatrix::from_fn(s, s - 1, |i, j| {
        -c[i].powi(j as i32 + 2) / factorial::<T>(j + 2)
    });
    // Q_{i,j} = -(1/s) c_{i+1}^{j+1} / j!  (h^{j+1} factored out)
    let q = DMatrix::from_fn(s - 1, s - 1, |i, j| {
        -s_inv * c[i + 1].powi(j as i32 + 2) / factorial::<T>(j + 1)
    });
    let m = DMatrix::from_fn(s, s, |i, j| if j == 0 { c[i] } else { T::zero() });
    let n = DMatrix::from_fn(s - 1, s, |i, j| {
        if j == 0 {
            s_inv * c[i + 1]
        } else if j == i + 1 {
            -s_inv * c[i + 1]
        } else {
            T::zero()
        }
    });

    let sys = MasterSystem {
        p,
        q,
        m,
        n,
        h_convention: HConvention::FactoredOut,
    };
    // Fails for coincident nodes, which a valid NodeSet rules out.
    sys.start_derivative_rows()?;
    Ok(sys)
}

/// Build the s-stage tableau, A = M - P Q^{-1} N.
pub fn build_tableau<T: Real>(s: usize) -> Result<CollocationTableau<T>> {
    build_tableau_from_nodes(&lobatto_nodes(s)?)
}

/// Build the tableau from an existing node set.
pub fn build_tableau_from_nodes<T: Real>(nodes: &NodeSet<T>) -> Result<CollocationTableau<T>> {
    let sys = assemble_master_system(nodes)?;
    let a = &sys.m - &sys.p * sys.start_derivative_rows()?;
    let s = nodes.stages();
    let b = a.row(s - 1).transpose();

    let tableau = CollocationTableau {
        nodes: nodes.clone(),
        a,
        b,
    };
    validate_tableau(&tableau)?;
    Ok(tableau)
}

fn validate_tableau<T: Real>(t: &CollocationTableau<T>) -> Result<()> {
    let s = t.stages();
    // 1e-12 at f64; widened at lower precision.
    let tol = real::<T>(1e-12).max(T::default_epsilon() * real::<T>(100.0));
    for j in 0..s {
        if t.a[(0, j)].abs() > tol {
            return Err(Error::DegenerateSystem(format!(
                "first tableau row not zero (entry {j})"
            )));
        }
    }
    for i in 0..s {
        let row_sum = t.a.row(i).sum();
        if (row_sum - t.nodes.node(i)).abs() > tol {
            return Err(Error::DegenerateSystem(format!(
                "row sum {i} does not match node"
            )));
        }
    }
    if (t.b.sum() - T::one()).abs() > tol {
        return Err(Error::DegenerateSystem("weights do not sum to one".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn assert_matrix_eq(actual: &DMatrix<f64>, expected: &[&[f64]], tol: f64) {
        for (i, row) in expected.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_abs_diff_eq!(actual[(i, j)], v, epsilon = tol);
            }
        }
    }

    #[test]
    fn two_stage_master_structure() {
        let nodes = lobatto_nodes::<f64>(2).unwrap();
        let sys = assemble_master_system(&nodes).unwrap();
        assert_matrix_eq(&sys.m, &[&[0.0, 0.0], &[1.0, 0.0]], 0.0);
        // N = (1/2) [c_2, -c_2]
        assert_matrix_eq(&sys.n, &[&[0.5, -0.5]], 0.0);
    }

    #[test]
    fn three_stage_q_entry_matches_closed_form() {
        let nodes = lobatto_nodes::<f64>(3).unwrap();
        let sys = assemble_master_system(&nodes).unwrap();
        // Q_{1,1} = -(1/3) c_2^2 / 1! = -1/12 at c_2 = 1/2
        assert_abs_diff_eq!(sys.q[(0, 0)], -1.0 / 12.0, epsilon = 1e-16);
        assert_abs_diff_eq!(sys.q[(0, 1)], -1.0 / 48.0, epsilon = 1e-16);
        assert_abs_diff_eq!(sys.q[(1, 0)], -1.0 / 3.0, epsilon = 1e-16);
        assert_abs_diff_eq!(sys.q[(1, 1)], -1.0 / 6.0, epsilon = 1e-16);
    }

    #[test]
    fn n_rows_have_two_balanced_nonzeros() {
        for s in 2..=6 {
            let nodes = lobatto_nodes::<f64>(s).unwrap();
            let sys = assemble_master_system(&nodes).unwrap();
            for i in 0..s - 1 {
                let row = sys.n.row(i);
                let nonzeros: Vec<f64> = row.iter().copied().filter(|v| *v != 0.0).collect();
                assert_eq!(nonzeros.len(), 2);
                assert_abs_diff_eq!(nonzeros[0] + nonzeros[1], 0.0, epsilon = 0.0);
                assert_abs_diff_eq!(
                    nonzeros[0],
                    nodes.node(i + 1) / s as f64,
                    epsilon = 1e-16
                );
            }
        }
    }

    #[test]
    fn coincident_nodes_are_degenerate() {
        let nodes = NodeSet::from_raw(vec![0.0, 0.5, 0.5, 1.0]);
        match assemble_master_system(&nodes) {
            Err(Error::DegenerateSystem(_)) => {}
            other => panic!("expected degenerate system, got {other:?}"),
        }
    }

    #[test]
    fn two_stage_tableau_is_trapezoidal() {
        let t = build_tableau::<f64>(2).unwrap();
        assert_matrix_eq(t.a(), &[&[0.0, 0.0], &[0.5, 0.5]], 1e-15);
        assert_eq!(t.classical_order(), 2);
    }

    #[test]
    fn three_stage_tableau_matches_exact_rationals() {
        let t = build_tableau::<f64>(3).unwrap();
        assert_matrix_eq(
            t.a(),
            &[
                &[0.0, 0.0, 0.0],
                &[5.0 / 24.0, 1.0 / 3.0, -1.0 / 24.0],
                &[1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
            ],
            1e-15,
        );
        assert_abs_diff_eq!(t.b()[0], 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t.b()[1], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t.b()[2], 1.0 / 6.0, epsilon = 1e-15);
        assert_eq!(t.classical_order(), 4);
    }

    #[test]
    fn structural_invariants_for_all_supported_stages() {
        for s in 2..=6 {
            let t = build_tableau::<f64>(s).unwrap();
            for j in 0..s {
                assert_abs_diff_eq!(t.a()[(0, j)], 0.0, epsilon = 1e-12);
                assert_abs_diff_eq!(t.a()[(s - 1, j)], t.b()[j], epsilon = 0.0);
            }
            for i in 0..s {
                assert_abs_diff_eq!(t.a().row(i).sum(), t.nodes().node(i), epsilon = 1e-12);
            }
            assert_abs_diff_eq!(t.b().sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn h_powers_cancel_against_literal_assembly() {
        // Rebuild P and Q with the h powers carried explicitly and check
        // that M - P(h) Q(h)^{-1} N reproduces the h-free tableau.
        let h: f64 = 0.37;
        for s in 2..=6 {
            let nodes = lobatto_nodes::<f64>(s).unwrap();
            let sys = assemble_master_system(&nodes).unwrap();
            let t = build_tableau_from_nodes(&nodes).unwrap();
            let scale = |j: usize| h.powi(j as i32 + 2);
            let p_h = DMatrix::from_fn(s, s - 1, |i, j| sys.p[(i, j)] * scale(j));
            let q_h = DMatrix::from_fn(s - 1, s - 1, |i, j| sys.q[(i, j)] * scale(j));
            let a_h = &sys.m - p_h * q_h.try_inverse().unwrap() * &sys.n;
            for i in 0..s {
                for j in 0..s {
                    assert_abs_diff_eq!(a_h[(i, j)], t.a()[(i, j)], epsilon = 1e-11);
                }
            }
        }
    }

    #[test]
    fn f32_three_stage_tableau() {
        let t = build_tableau::<f32>(3).unwrap();
        assert_abs_diff_eq!(t.a()[(1, 0)], 5.0 / 24.0, epsilon = 1e-6);
        assert_abs_diff_eq!(t.b()[1], 2.0 / 3.0, epsilon = 1e-6);
    }
}
