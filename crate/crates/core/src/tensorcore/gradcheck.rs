//! Central finite-difference verification of analytic gradients (double precision).

use std::fmt;

/// Perturbation used for the central differences.
pub const FD_EPS: f64 = 1e-6;

/// Magnitude below which errors are measured absolutely rather than relatively.
/// Components this small sit at the noise floor of an `FD_EPS` central difference.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Coordinate of the worst error (or of the first non-finite analytic entry).
    pub worst_index: usize,
    pub tolerance: f64,
    pub non_finite: bool,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        !self.non_finite && self.max_rel_err <= self.tolerance
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "ok" } else { "FAIL" };
        if self.non_finite {
            write!(
                f,
                "{:<28} FAIL non-finite analytic gradient at index {}",
                self.name, self.worst_index
            )
        } else {
            write!(
                f,
                "{:<28} {verdict:<4} max_rel_err={:.3e} (tol {:.0e}, {} coords, worst #{})",
                self.name, self.max_rel_err, self.tolerance, self.checked, self.worst_index
            )
        }
    }
}

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` to central differences of `eval` around `point` at the
/// coordinates in `indices` (all coordinates when `None`).
pub fn check_gradients(
    name: impl Into<String>,
    point: &[f64],
    analytic: &[f64],
    indices: Option<&[usize]>,
    tolerance: f64,
    mut eval: impl FnMut(&[f64]) -> f64,
) -> GradReport {
    assert_eq!(
        point.len(),
        analytic.len(),
        "gradient length must match the point"
    );
    let name = name.into();
    let all: Vec<usize>;
    let indices = match indices {
        Some(ix) => ix,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    if let Some(bad) = indices.iter().copied().find(|&i| !analytic[i].is_finite()) {
        return GradReport {
            name,
            checked: 0,
            max_rel_err: f64::INFINITY,
            worst_index: bad,
            tolerance,
            non_finite: true,
        };
    }

    let mut x = point.to_vec();
    let (mut worst, mut worst_index) = (0.0f64, 0usize);
    for &i in indices {
        let orig = x[i];
        x[i] = orig + FD_EPS;
        let up = eval(&x);
        x[i] = orig - FD_EPS;
        let down = eval(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * FD_EPS);
        let err = relative_error(analytic[i], numeric);
        if !(err <= worst) {
            worst = err;
            worst_index = i;
        }
    }
    GradReport {
        name,
        checked: indices.len(),
        max_rel_err: worst,
        worst_index,
        tolerance,
        non_finite: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes() {
        let p = [0.5, -1.25, 2.0];
        let g: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
        let r = check_gradients("sq", &p, &g, None, 1e-8, |x| x.iter().map(|v| v * v).sum());
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn wrong_gradient_fails() {
        let p = [0.5, -1.25];
        let r = check_gradients("sq", &p, &[1.0, -2.5 * 1.01], None, 1e-4, |x| {
            x.iter().map(|v| v * v).sum()
        });
        assert!(!r.passed());
        assert_eq!(r.worst_index, 1);
    }

    #[test]
    fn non_finite_is_reported_with_location() {
        let r = check_gradients("nan", &[1.0, 2.0], &[0.0, f64::NAN], None, 1.0, |x| x[0]);
        assert!(!r.passed());
        assert!(r.non_finite);
        assert_eq!(r.worst_index, 1);
    }
}
