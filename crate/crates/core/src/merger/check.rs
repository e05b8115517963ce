use crate::descriptor::DescriptorTriple;
use crate::merger::{merger_backward, merger_loss, MergerError, MergerParams};
use crate::vector::UnitVector;

/// Denominator floor of the relative gradient error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRAD_CHECK_FLOOR)
}

/// Compares every coordinate of the reverse-mode gradient with a central
/// difference of step `h`.
pub fn gradient_check(
    p: &MergerParams,
    t: &DescriptorTriple,
    target: &UnitVector,
    h: f64,
) -> Result<GradCheck, MergerError> {
    let (_, g) = merger_backward(p, t, target)?;
    let mut q = p.clone();
    let mut worst = GradCheck { max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0 };
    for i in 0..p.len() {
        let x0 = q.as_slice()[i];
        q.as_mut_slice()[i] = x0 + h;
        let lp = merger_loss(&q, t, target)?;
        q.as_mut_slice()[i] = x0 - h;
        let lm = merger_loss(&q, t, target)?;
        q.as_mut_slice()[i] = x0;
        let n = (lp - lm) / (2.0 * h);
        let a = g.as_slice()[i];
        let e = relative_error(a, n);
        if e > worst.max_rel_error {
            worst = GradCheck { max_rel_error: e, worst_index: i, analytic: a, numeric: n };
        }
    }
    Ok(worst)
}
