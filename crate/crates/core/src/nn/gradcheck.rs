//! Central finite-difference verification of analytic gradients.

use std::fmt;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Gradients with magnitude below this are compared in absolute terms.
const MAGNITUDE_FLOOR: f64 = 1e-5;

/// Step reductions tried before a coordinate is skipped.
pub const REFINEMENTS: u32 = 3;

/// At most this fraction of coordinates may be excluded for straddling a
/// kink before a piecewise check counts as failed.
pub const MAX_SKIPPED_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    /// Coordinates probed with a reduced step to stay on one smooth piece.
    pub refined: usize,
    /// Coordinates that could not be probed within one piece at any step.
    pub skipped: usize,
    pub max_rel_error: f64,
    /// Coordinate where the largest error occurred.
    pub worst_index: usize,
    pub tolerance: f64,
    pub passed: bool,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: max rel err {:.3e} over {} coords (tol {:.0e}, worst #{}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.max_rel_error,
            self.checked,
            self.tolerance,
            self.worst_index
        )?;
        if self.refined > 0 {
            write!(f, ", {} probed with a smaller step near kinks", self.refined)?;
        }
        if self.skipped > 0 {
            write!(f, ", {} skipped at kinks", self.skipped)?;
        }
        f.write_str(")")
    }
}

/// Compares `analytic` against central differences of `loss` around `x`.
///
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, 1e-5)`.
pub fn grad_check(
    name: &str,
    x: &[f64],
    analytic: &[f64],
    mut loss: impl FnMut(&[f64]) -> f64,
    tolerance: f64,
) -> GradCheckReport {
    grad_check_piecewise(name, x, analytic, |v| (loss(v), ()), tolerance)
}

/// Like [`grad_check`] for functions that are smooth only piecewise.
/// `loss` also returns an identifier of the piece containing its argument
/// (for example the ReLU signs and max-pool winners). When a probe leaves the
/// piece of `x` the step is divided by ten, up to [`REFINEMENTS`] times; a
/// coordinate that still straddles a kink is skipped. The check fails if more
/// than [`MAX_SKIPPED_FRACTION`] of the coordinates are skipped.
pub fn grad_check_piecewise<P: PartialEq>(
    name: &str,
    x: &[f64],
    analytic: &[f64],
    mut loss: impl FnMut(&[f64]) -> (f64, P),
    tolerance: f64,
) -> GradCheckReport {
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch for {name}");
    let (_, piece) = loss(x);
    let mut probe = x.to_vec();
    let mut max_rel_error = 0.0f64;
    let mut worst_index = 0;
    let mut skipped = 0;
    let mut refined = 0;
    for i in 0..x.len() {
        let mut numeric = None;
        for level in 0..=REFINEMENTS {
            let h = FD_STEP / 10f64.powi(level as i32);
            probe[i] = x[i] + h;
            let (up, up_piece) = loss(&probe);
            probe[i] = x[i] - h;
            let (down, down_piece) = loss(&probe);
            probe[i] = x[i];
            if up_piece == piece && down_piece == piece {
                refined += usize::from(level > 0);
                numeric = Some((up - down) / (2.0 * h));
                break;
            }
        }
        let Some(numeric) = numeric else {
            skipped += 1;
            continue;
        };
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
        let rel = (a - numeric).abs() / denom;
        // NaN must fail
        if !(rel <= max_rel_error) {
            max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
            worst_index = i;
        }
    }
    GradCheckReport {
        name: name.to_string(),
        checked: x.len(),
        refined,
        skipped,
        max_rel_error,
        worst_index,
        tolerance,
        passed: max_rel_error < tolerance && skipped as f64 <= MAX_SKIPPED_FRACTION * x.len() as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_gradient_passes() {
        let x = [0.3, -1.2, 2.0];
        let g: Vec<f64> = x.iter().map(|v| 3.0 * v * v).collect();
        let rep = grad_check("cube", &x, &g, |v| v.iter().map(|a| a * a * a).sum(), 1e-4);
        assert!(rep.passed, "{rep}");
    }

    #[test]
    fn corrupted_gradient_fails() {
        let x = [0.3, -1.2, 2.0];
        let mut g: Vec<f64> = x.iter().map(|v| 3.0 * v * v).collect();
        g[1] *= 1.01;
        let rep = grad_check("cube", &x, &g, |v| v.iter().map(|a| a * a * a).sum(), 1e-4);
        assert!(!rep.passed);
        assert_eq!(rep.worst_index, 1);
    }

    #[test]
    fn nan_gradient_fails() {
        let rep = grad_check("nan", &[1.0], &[f64::NAN], |v| v[0], 1e-4);
        assert!(!rep.passed);
    }

    #[test]
    fn kink_crossings_are_skipped() {
        // |x| has a kink at 0; the second coordinate sits within the step of it
        let x = [0.5, 3e-6, -0.7];
        let g = [1.0, 1.0, -1.0];
        let abs = |v: &[f64]| -> (f64, Vec<bool>) { (v.iter().map(|a| a.abs()).sum(), v.iter().map(|a| *a > 0.0).collect()) };
        assert!(!grad_check("abs", &x, &g, |v| abs(v).0, 1e-4).passed);
        let rep = grad_check_piecewise("abs", &x, &g, abs, 1e-4);
        assert!(rep.passed, "{rep}");
        assert_eq!((rep.refined, rep.skipped), (1, 0));
        assert!(rep.to_string().contains("1 probed with a smaller step"));

        // closer to the kink than the smallest step: skipped, and with too
        // many skipped the check fails rather than passing vacuously
        let x = [0.5, 1e-10, -0.7];
        let rep = grad_check_piecewise("abs", &x, &g, abs, 1e-4);
        assert_eq!(rep.skipped, 1);
        assert!(!rep.passed);
        let x: Vec<f64> = (0..40).map(|i| if i == 0 { 1e-10 } else { 1.0 + i as f64 }).collect();
        let rep = grad_check_piecewise("abs", &x, &vec![1.0; 40], abs, 1e-4);
        assert!(rep.passed, "{rep}");
        assert!(rep.to_string().contains("1 skipped"));
    }

    #[test]
    fn wrong_gradient_in_a_piece_still_fails() {
        let x: Vec<f64> = (1..=30).map(|i| i as f64 * 0.1).collect();
        let mut g = vec![1.0; 30];
        g[4] = 1.1;
        let rep = grad_check_piecewise("abs", &x, &g, |v| (v.iter().map(|a| a.abs()).sum::<f64>(), 0), 1e-4);
        assert!(!rep.passed);
        assert_eq!(rep.worst_index, 4);
    }
}
