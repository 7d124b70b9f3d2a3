use super::{NumericsError, Tape, Tensor, Var};

/// Compares tape gradients with central finite differences.
///
/// `f` builds a scalar on the given tape from one variable per entry of
/// `params`. Returns the largest per-coordinate
/// `|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)`.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64, NumericsError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NumericsError>,
{
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(NumericsError::Contract(format!(
            "grad_check eps must lie in (0, 1e-3], got {eps}"
        )));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.tracked(p)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad(v)).collect();

    let eval = |values: &[Tensor]| -> Result<f64, NumericsError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|p| tape.constant(p)).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.scalar(out);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(NumericsError::NonFinite { op: "grad_check" })
        }
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst = 0.0f64;
    for (pi, param) in params.iter().enumerate() {
        for ci in 0..param.len() {
            let original = param.data()[ci];
            let mut bumped = param.data().to_vec();
            bumped[ci] = original + eps;
            work[pi].set_data(bumped.clone())?;
            let up = eval(&work)?;
            bumped[ci] = original - eps;
            work[pi].set_data(bumped.clone())?;
            let down = eval(&work)?;
            bumped[ci] = original;
            work[pi].set_data(bumped)?;

            let fd = (up - down) / (2.0 * eps);
            let ad = analytic[pi][ci];
            let rel = (ad - fd).abs() / (ad.abs() + fd.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
