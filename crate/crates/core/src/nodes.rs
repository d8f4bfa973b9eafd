//! Lobatto collocation nodes.
//!
//! The s nodes are the zeros of the (s-2)-th derivative of
//! x^(s-1) (x-1)^(s-1), a polynomial of degree s whose roots always include
//! both interval endpoints. The polynomial is expanded and differentiated in
//! integer arithmetic, the two endpoint roots are deflated exactly, and the
//! interior roots are found by sign-change bracketing, bisection and a Newton
//! polish.

use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// Largest supported stage count. Above s = 6 the double-precision
/// Vandermonde-type fits behind the spline basis lose accuracy; results up
/// to s = 8 stay usable but should be treated with care.
pub const MAX_STAGES: usize = 8;

/// Ordered collocation nodes on [0, 1], endpoints included.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSet<T> {
    c: Vec<T>,
}

impl<T: Real> NodeSet<T> {
    /// Number of stages s (= number of nodes).
    pub fn stages(&self) -> usize {
        self.c.len()
    }

    /// All nodes, ascending.
    pub fn nodes(&self) -> &[T] {
        &self.c
    }

    /// Node c_i with zero-based index.
    pub fn node(&self, i: usize) -> T {
        self.c[i]
    }

    /// Wrap raw node values without root-finding. The caller is responsible
    /// for ordering and distinctness; downstream constructions report
    /// degeneracy if the values are unusable.
    pub fn from_raw(c: Vec<T>) -> Self {
        NodeSet { c }
    }
}

/// Compute the s Lobatto nodes, endpoints pinned exactly to 0 and 1.
pub fn lobatto_nodes<T: Real>(s: usize) -> Result<NodeSet<T>> {
    if !(2..=MAX_STAGES).contains(&s) {
        return Err(Error::InvalidStageCount(s));
    }

    let mut c = Vec::with_capacity(s);
    c.push(T::zero());
    for root in interior_roots(s) {
        c.push(real(root));
    }
    c.push(T::one());
    Ok(NodeSet { c })
}

/// Residual of the defining polynomial at each node, with the coefficients
/// normalized to unit max magnitude. Near-zero for a valid node set.
pub fn node_residuals<T: Real>(nodes: &NodeSet<T>) -> Vec<T> {
    let s = nodes.stages();
    let poly = node_polynomial(s);
    let scale = poly
        .iter()
        .map(|a| a.abs())
        .fold(0.0_f64, f64::max)
        .max(1.0);
    nodes
        .nodes()
        .iter()
        .map(|&x| {
            let v = eval_poly(&poly, x.to_f64().unwrap()) / scale;
            real(v)
        })
        .collect()
}

/// Coefficients (ascending powers, f64 but integer-valued) of the degree-s
/// node polynomial: the (s-2)-th derivative of x^(s-1) (x-1)^(s-1).
fn node_polynomial(s: usize) -> Vec<f64> {
    // x^(s-1) (x-1)^(s-1): coefficient of x^(s-1+j) is C(s-1, j) (-1)^(s-1-j)
    let n = s - 1;
    let mut coeffs = vec![0.0_f64; 2 * n + 1];
    let mut binom = 1.0_f64;
    for j in 0..=n {
        let sign = if (n - j) % 2 == 0 { 1.0 } else { -1.0 };
        coeffs[n + j] = sign * binom;
        binom = binom * (n - j) as f64 / (j + 1) as f64;
    }
    for _ in 0..s.saturating_sub(2) {
        coeffs = differentiate(&coeffs);
    }
    coeffs
}

fn differentiate(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, &a)| a * k as f64)
        .collect()
}

fn eval_poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

/// Interior roots of the node polynomial, ascending. Deflates the known
/// endpoint roots exactly before bracketing, so every remaining root is
/// simple and strictly inside (0, 1).
fn interior_roots(s: usize) -> Vec<f64> {
    if s == 2 {
        return Vec::new();
    }
    let full = node_polynomial(s);

    // Divide by x: constant term is exactly zero.
    let mut p: Vec<f64> = full[1..].to_vec();
    // Synthetic division by (x - 1); exact in integer arithmetic.
    let mut q = vec![0.0_f64; p.len() - 1];
    let mut carry = 0.0;
    for k in (0..q.len()).rev() {
        carry = p[k + 1] + carry;
        q[k] = carry;
    }
    p = q;

    let dp = differentiate(&p);
    let cells = 4096;
    let mut roots = Vec::with_capacity(s - 2);
    let mut prev_x = 0.0;
    let mut prev_v = eval_poly(&p, prev_x);
    for k in 1..=cells {
        let x = k as f64 / cells as f64;
        let v = eval_poly(&p, x);
        if prev_v == 0.0 {
            roots.push(prev_x);
        } else if prev_v * v < 0.0 {
            roots.push(refine_root(&p, &dp, prev_x, x));
        }
        prev_x = x;
        prev_v = v;
    }
    debug_assert_eq!(roots.len(), s - 2);

    // Lobatto nodes are symmetric about 1/2; averaging mirror pairs removes
    // the last rounding asymmetry and pins the middle node of odd s to 0.5.
    let m = roots.len();
    let mut sym = roots.clone();
    for i in 0..m {
        sym[i] = 0.5 * (roots[i] + (1.0 - roots[m - 1 - i]));
    }
    sym
}

fn refine_root(p: &[f64], dp: &[f64], mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = eval_poly(p, lo);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let fmid = eval_poly(p, mid);
        if fmid == 0.0 {
            return mid;
        }
        if flo * fmid < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fmid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..4 {
        let d = eval_poly(dp, x);
        if d == 0.0 {
            break;
        }
        let step = eval_poly(p, x) / d;
        let next = x - step;
        if !(lo..=hi).contains(&next) || step.abs() <= f64::EPSILON * x.abs() {
            x = next.clamp(lo, hi);
            break;
        }
        x = next;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rejects_invalid_stage_counts() {
        assert!(matches!(
            lobatto_nodes::<f64>(1),
            Err(Error::InvalidStageCount(1))
        ));
        assert!(matches!(
            lobatto_nodes::<f64>(0),
            Err(Error::InvalidStageCount(0))
        ));
        assert!(matches!(
            lobatto_nodes::<f64>(9),
            Err(Error::InvalidStageCount(9))
        ));
    }

    #[test]
    fn two_and_three_stage_nodes_are_exact() {
        let n2 = lobatto_nodes::<f64>(2).unwrap();
        assert_eq!(n2.nodes(), &[0.0, 1.0]);
        let n3 = lobatto_nodes::<f64>(3).unwrap();
        assert_eq!(n3.nodes(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn four_stage_nodes_match_closed_form() {
        // Interior roots of 5x^2 - 5x + 1: (5 ∓ √5)/10.
        let n = lobatto_nodes::<f64>(4).unwrap();
        let sqrt5 = 5.0_f64.sqrt();
        assert_abs_diff_eq!(n.node(1), (5.0 - sqrt5) / 10.0, epsilon = 1e-15);
        assert_abs_diff_eq!(n.node(2), (5.0 + sqrt5) / 10.0, epsilon = 1e-15);
    }

    #[test]
    fn five_and_six_stage_nodes_match_quadrature_tables() {
        // Classical Gauss-Lobatto abscissas mapped from [-1, 1] to [0, 1].
        let n5 = lobatto_nodes::<f64>(5).unwrap();
        let sqrt21 = 21.0_f64.sqrt();
        assert_abs_diff_eq!(n5.node(1), (7.0 - sqrt21) / 14.0, epsilon = 1e-15);
        assert_abs_diff_eq!(n5.node(2), 0.5, epsilon = 0.0);
        assert_abs_diff_eq!(n5.node(3), (7.0 + sqrt21) / 14.0, epsilon = 1e-15);

        let n6 = lobatto_nodes::<f64>(6).unwrap();
        let sqrt7 = 7.0_f64.sqrt();
        let outer = ((7.0 + 2.0 * sqrt7) / 21.0).sqrt();
        let inner = ((7.0 - 2.0 * sqrt7) / 21.0).sqrt();
        assert_abs_diff_eq!(n6.node(1), (1.0 - outer) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(n6.node(2), (1.0 - inner) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(n6.node(3), (1.0 + inner) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(n6.node(4), (1.0 + outer) / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn nodes_are_strictly_increasing_with_pinned_endpoints() {
        for s in 2..=MAX_STAGES {
            let n = lobatto_nodes::<f64>(s).unwrap();
            assert_eq!(n.stages(), s);
            assert_eq!(n.node(0), 0.0);
            assert_eq!(n.node(s - 1), 1.0);
            for i in 1..s {
                assert!(n.node(i) > n.node(i - 1));
            }
        }
    }

    #[test]
    fn normalized_polynomial_residual_below_1e14() {
        for s in 2..=MAX_STAGES {
            let n = lobatto_nodes::<f64>(s).unwrap();
            for r in node_residuals(&n) {
                assert!(r.abs() <= 1e-14, "s={s}: residual {r:.3e}");
            }
        }
    }

    #[test]
    fn node_symmetry_about_one_half() {
        for s in 2..=MAX_STAGES {
            let n = lobatto_nodes::<f64>(s).unwrap();
            for i in 0..s {
                assert_abs_diff_eq!(n.node(i), 1.0 - n.node(s - 1 - i), epsilon = 5e-16);
            }
        }
    }

    #[test]
    fn f32_instantiation_agrees_with_f64() {
        let n64 = lobatto_nodes::<f64>(4).unwrap();
        let n32 = lobatto_nodes::<f32>(4).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(n32.node(i) as f64, n64.node(i), epsilon = 1e-7);
        }
    }
}
