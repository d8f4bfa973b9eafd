//! CSV serialization of traces.
//!
//! All floats are printed with 17 significant digits so that files are
//! byte-reproducible and round-trip exactly.

use crate::control::SimulationTrace;
use crate::scalar::Real;
use crate::solver::OdeTrace;

/// Format with 17 significant digits: positional notation for moderate
/// exponents, scientific otherwise.
pub fn fmt_g17(x: f64) -> String {
    let sci = format!("{x:.16e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if (-4..=16).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        sci
    }
}

fn push_float<T: Real>(out: &mut String, v: T) {
    out.push_str(&fmt_g17(v.to_f64().unwrap_or(f64::NAN)));
}

impl<T: Real> OdeTrace<T> {
    /// Grid-point states as CSV; optional per-step diagnostics columns.
    pub fn to_csv(&self, diagnostics: bool) -> String {
        let n = self.x.first().map(|x| x.len()).unwrap_or(0);
        let mut out = String::new();
        out.push('t');
        for d in 0..n {
            out.push_str(&format!(",x_{}", d + 1));
        }
        if diagnostics {
            out.push_str(",newton_iters,residual");
        }
        out.push('\n');
        for (k, (t, x)) in self.t.iter().zip(&self.x).enumerate() {
            push_float(&mut out, *t);
            for d in 0..n {
                out.push(',');
                push_float(&mut out, x[d]);
            }
            if diagnostics {
                // step k leads from grid point k-1 to k
                if k == 0 {
                    out.push_str(",0,0");
                } else {
                    let d = &self.steps[k - 1];
                    out.push_str(&format!(",{}", d.newton_iterations));
                    out.push(',');
                    push_float(&mut out, d.residual);
                }
            }
            out.push('\n');
        }
        out
    }
}

impl<T: Real> SimulationTrace<T> {
    /// Truth-resolution closed-loop trace as CSV:
    /// t, states, inputs, reference.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let (n, p) = match self.truth.first() {
            Some(pt) => (pt.state.len(), pt.input.len()),
            None => (0, 0),
        };
        out.push('t');
        for d in 0..n {
            out.push_str(&format!(",x_{}", d + 1));
        }
        for d in 0..p {
            out.push_str(&format!(",u_{}", d + 1));
        }
        out.push_str(",reference\n");
        for pt in &self.truth {
            push_float(&mut out, pt.t);
            for d in 0..n {
                out.push(',');
                push_float(&mut out, pt.state[d]);
            }
            for d in 0..p {
                out.push(',');
                push_float(&mut out, pt.input[d]);
            }
            out.push(',');
            push_float(&mut out, pt.reference);
            out.push('\n');
        }
        out
    }

    /// Per-sample controller diagnostics as CSV.
    pub fn diagnostics_csv(&self) -> String {
        let mut out = String::from("t,prediction_newton_iters,conversion_iters,objective\n");
        for s in &self.samples {
            push_float(&mut out, s.t);
            out.push_str(&format!(",{}", s.prediction_newton_iterations));
            match s.conversion_iterations {
                Some(it) => out.push_str(&format!(",{it}")),
                None => out.push(','),
            }
            out.push(',');
            match s.conversion_objective {
                Some(obj) => push_float(&mut out, obj),
                None => {}
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_g17(1.0 / 6.0), "0.16666666666666666");
        assert_eq!(fmt_g17(2.0 / 3.0), "0.66666666666666663");
        assert_eq!(fmt_g17(0.5), "0.50000000000000000");
        assert_eq!(fmt_g17(1.0), "1.0000000000000000");
        assert_eq!(fmt_g17(0.0), "0.0000000000000000");
        assert_eq!(fmt_g17(214.75), "214.75000000000000");
        assert_eq!(fmt_g17(-3.5e-7), "-3.4999999999999998e-7");
        assert_eq!(fmt_g17(1.23e19), "1.2300000000000000e19");
    }

    #[test]
    fn formatting_round_trips() {
        for &x in &[1.0 / 3.0, 0.1, 9.81, 85.9e-3, -2.1512, 1e-12] {
            let printed = fmt_g17(x);
            let back: f64 = printed.parse().unwrap();
            assert_eq!(back, x, "{printed}");
        }
    }
}
