use super::{Tape, Tensor, Var};
use crate::error::{GeomemError, Result};

/// Compares tape gradients of a scalar function against central differences.
///
/// Returns the maximum over checked coordinates of
/// `|analytic - numeric| / max(1, |numeric|)`. When a parameter has more than
/// `max_coords` entries, an evenly strided subset is checked.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64, max_coords: usize) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(GeomemError::param(
            "eps",
            format!("{eps} outside [1e-7, 1e-3]"),
        ));
    }
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).item();
        if !v.is_finite() {
            return Err(GeomemError::Numeric {
                step: 0,
                what: "grad_check objective".into(),
            });
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).item().is_finite() {
        return Err(GeomemError::Numeric {
            step: 0,
            what: "grad_check objective".into(),
        });
    }
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        let n = params[pi].len();
        let stride = (n / max_coords.max(1)).max(1);
        for idx in (0..n).step_by(stride) {
            let orig = work[pi].data()[idx];
            work[pi].data_mut()[idx] = orig + eps;
            let plus = eval(&work)?;
            work[pi].data_mut()[idx] = orig - eps;
            let minus = eval(&work)?;
            work[pi].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (analytic.data()[idx] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::randn(6, 1, 1.0, &mut rng);
        let err = grad_check(
            |tape, p| {
                let xx = tape.hadamard(p[0], p[0])?;
                Ok(tape.sum(xx))
            },
            &[x],
            1e-5,
            64,
        )
        .unwrap();
        assert!(err < 1e-8, "err {err}");
    }

    #[test]
    fn eps_out_of_range() {
        let r = grad_check(
            |tape, p| Ok(tape.sum(p[0])),
            &[Tensor::zeros(1, 1)],
            1e-2,
            4,
        );
        assert!(matches!(
            r,
            Err(GeomemError::Parameter { field: "eps", .. })
        ));
    }
}
