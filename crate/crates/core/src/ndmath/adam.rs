use crate::error::{Error, Result};
use crate::ndmath::{Array, Scalar};

/// Bias-corrected Adam with per-parameter moment accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<Array<T>>,
    second: Vec<Array<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Fresh state with the usual moment decays (0.9, 0.999) and ε = 1e-8.
    pub fn new(lr: f64) -> Self {
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Applies one update to `params` in place. `names` label parameters in
    /// errors and must line up with `params` and `grads`.
    pub fn update(&mut self, params: &mut [Array<T>], grads: &[Array<T>], names: &[&str]) -> Result<()> {
        if params.len() != grads.len() || params.len() != names.len() {
            return Err(Error::shape("adam_update", "params, grads and names differ in length"));
        }
        for ((p, g), name) in params.iter().zip(grads).zip(names) {
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "adam_update",
                    format!("{name}: param {:?}, grad {:?}", p.shape(), g.shape()),
                ));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter `{name}`")));
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Array::zeros(p.shape())).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len()
            || self.first.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape())
        {
            return Err(Error::shape("adam_update", "parameter set changed between steps"));
        }

        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(t));
        let c2 = T::of(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));
        let one = T::one();
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = v̂ = 1 after one step with g = 1, so θ' = 1 - lr / (1 + ε).
        let mut s = AdamState::<f64>::new(0.0005);
        let mut p = vec![Array::scalar(1.0)];
        s.update(&mut p, &[Array::scalar(1.0)], &["theta"]).unwrap();
        assert!((p[0].item() - (1.0 - 0.0005 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((p[0].item() - 0.9995).abs() < 1e-9);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::<f32>::new(0.01);
        let mut p = vec![Array::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap()];
        let before = p.clone();
        for _ in 0..3 {
            s.update(&mut p, &[Array::zeros(&[3])], &["w"]).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(s.step, 3);
    }

    #[test]
    fn identical_states_give_identical_results() {
        let g = [Array::from_f64(&[2], &[0.3, -0.7]).unwrap()];
        let run = || {
            let mut s = AdamState::<f32>::new(0.0005);
            let mut p = vec![Array::from_f64(&[2], &[1.0, 2.0]).unwrap()];
            s.update(&mut p, &g, &["w"]).unwrap();
            (p, s)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = AdamState::<f32>::new(0.01);
        let mut p = vec![Array::zeros(&[2])];
        let g = [Array::from_f64(&[2], &[0.0, f64::NAN]).unwrap()];
        let err = s.update(&mut p, &g, &["decoder.w"]).unwrap_err();
        assert!(err.to_string().contains("decoder.w"));
        assert_eq!(s.step, 0);
    }
}
