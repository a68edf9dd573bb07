//! Finite-difference gradient checker.
//!
//! Runs the function once on a recording tape to collect analytic gradients,
//! then perturbs every element of every listed leaf by ±step and compares
//! against the central difference. The function must be deterministic given
//! the current leaf values (freeze any noise before checking).

use super::tape::Tape;
use super::tensor::Tensor;

#[derive(Debug)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub tol: f64,
    /// (leaf name, flat index, analytic, numeric) for the worst element.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

impl std::fmt::Display for GradReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "gradcheck: {} elements, max_rel_err={:.3e} (tol {:.1e})",
            self.checked, self.max_rel_err, self.tol
        )?;
        if let Some((name, i, a, n)) = &self.worst {
            write!(f, ", worst {name}[{i}] analytic={a:.6e} numeric={n:.6e}")?;
        }
        Ok(())
    }
}

pub fn gradcheck<F>(f: F, leaves: &[(&str, &Tensor)], step: f64, tol: f64) -> GradReport
where
    F: Fn(&Tape) -> Tensor,
{
    for (_, t) in leaves {
        t.zero_grad();
    }
    let tape = Tape::new();
    let loss = f(&tape);
    assert_eq!(loss.len(), 1, "gradcheck target must be scalar");
    tape.backward(&loss);
    let analytic: Vec<Vec<f64>> = leaves.iter().map(|(_, t)| t.grad().clone()).collect();

    let mut report = GradReport {
        max_rel_err: 0.0,
        checked: 0,
        tol,
        worst: None,
    };
    for ((name, t), an) in leaves.iter().zip(&analytic) {
        for (i, &a) in an.iter().enumerate().take(t.len()) {
            let orig = t.data()[i];
            t.data_mut()[i] = orig + step;
            let lp = f(&Tape::inference()).item();
            t.data_mut()[i] = orig - step;
            let lm = f(&Tape::inference()).item();
            t.data_mut()[i] = orig;
            let num = (lp - lm) / (2.0 * step);
            let rel = (a - num).abs() / 1.0_f64.max(a.abs()).max(num.abs());
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((name.to_string(), i, a, num));
            }
        }
    }
    report
}
