use crate::error::{Error, Result};
use crate::ndmath::{Array, Tape, Var};

/// A differentiable scalar function: builds its graph on the tape from the
/// input node and returns the scalar output node.
pub trait ScalarFn: Fn(&mut Tape<f64>, Var) -> Result<Var> {}
impl<F: Fn(&mut Tape<f64>, Var) -> Result<Var>> ScalarFn for F {}

fn evaluate(f: &impl ScalarFn, x: &Array<f64>) -> Result<f64> {
    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let out = f(&mut tape, v)?;
    Ok(tape.scalar_value(out))
}

/// Analytic gradient of `f` at `x` and the function value.
pub fn analytic_gradient(f: &impl ScalarFn, x: &Array<f64>) -> Result<(f64, Array<f64>)> {
    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let out = f(&mut tape, v)?;
    let value = tape.scalar_value(out);
    let mut g = tape.backward(out)?;
    Ok((value, g.take(v)))
}

/// Max relative error between the reverse-mode gradient and central
/// differences with step `h`, over every coordinate of `x`.
pub fn gradient_check(f: impl ScalarFn, x: &Array<f64>, h: f64) -> Result<f64> {
    let coords: Vec<usize> = (0..x.len()).collect();
    gradient_check_at(f, x, h, &coords)
}

/// As [`gradient_check`], restricted to the listed flat coordinates.
///
/// Per coordinate the error is `|a − n| / max(1e-8, |a| + |n|)`.
pub fn gradient_check_at(f: impl ScalarFn, x: &Array<f64>, h: f64, coords: &[usize]) -> Result<f64> {
    let (value, analytic) = analytic_gradient(&f, x)?;
    if !value.is_finite() {
        return Err(Error::GradCheck(format!("f is non-finite at x ({value})")));
    }
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for &i in coords {
        if i >= x.len() {
            return Err(Error::GradCheck(format!("coordinate {i} out of range")));
        }
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = evaluate(&f, &probe)?;
        probe.data_mut()[i] = orig - h;
        let down = evaluate(&f, &probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::GradCheck(format!("f is non-finite when perturbing coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_matches_analytic_gradient() {
        let x = Array::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let f = |t: &mut Tape<f64>, v: Var| {
            let s = t.square(v);
            Ok(t.sum(s))
        };
        let (_, g) = analytic_gradient(&f, &x).unwrap();
        assert_eq!(g.data(), &[2.0, 4.0]);
        assert!(gradient_check(f, &x, 1e-4).unwrap() <= 1e-6);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Array::from_f64(&[3], &[0.1, -0.4, 2.0]).unwrap();
        let f = |t: &mut Tape<f64>, _v: Var| Ok(t.constant(Array::scalar(4.2)));
        assert!(gradient_check(f, &x, 1e-4).unwrap() <= 1e-8);
    }

    #[test]
    fn non_finite_probe_names_coordinate() {
        // 1/x blows up when coordinate 1 is nudged onto zero.
        let x = Array::from_f64(&[2], &[1.0, 1e-4]).unwrap();
        let f = |t: &mut Tape<f64>, v: Var| {
            let one = t.constant(Array::full(&[2], 1.0));
            let r = t.div(one, v)?;
            Ok(t.sum(r))
        };
        let err = gradient_check(f, &x, 1e-4).unwrap_err();
        assert!(err.to_string().contains("coordinate 1"), "{err}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // relu at exactly its kink: analytic 0, numeric 0.5.
        let x = Array::from_f64(&[1], &[0.0]).unwrap();
        let f = |t: &mut Tape<f64>, v: Var| {
            let r = t.relu(v);
            Ok(t.sum(r))
        };
        assert!(gradient_check(f, &x, 1e-4).unwrap() > 0.5);
    }
}
