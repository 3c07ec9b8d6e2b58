use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare reverse-mode gradients of `graph` against central finite
/// differences with step `epsilon`, over every element of every input.
/// Returns the largest relative error.
///
/// `graph` receives the inputs as differentiable leaves and must return a
/// scalar. It is re-run once per perturbed element, so it must be a pure
/// function of its inputs.
pub fn gradcheck<G>(inputs: &[Tensor<f64>], epsilon: f64, graph: G) -> Result<f64>
where
    G: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = values.iter().map(|t| tape.variable(t.clone())).collect::<Result<Vec<_>>>()?;
        let out = graph(&mut tape, &vars)?;
        tape.value(out)?.item()
    };

    let mut tape = Tape::new();
    let vars = inputs.iter().map(|t| tape.variable(t.clone())).collect::<Result<Vec<_>>>()?;
    let out = graph(&mut tape, &vars)?;
    if !tape.value(out)?.is_scalar() {
        return Err(Error::invalid(
            "gradcheck",
            format!("output must be a scalar, got shape {:?}", tape.value(out)?.shape()),
        ));
    }
    let analytic = tape.gradients(out, &vars)?;

    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for (k, grad) in analytic.iter().enumerate() {
        for j in 0..work[k].len() {
            let orig = work[k].data()[j];
            work[k].data_mut()[j] = orig + epsilon;
            let plus = eval(&work)?;
            work[k].data_mut()[j] = orig - epsilon;
            let minus = eval(&work)?;
            work[k].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            worst = worst.max(relative_error(grad.data()[j], numeric));
        }
    }
    Ok(worst)
}
