use super::model::DenseParams;
use super::spec::{OptimizerKind, OptimizerSpec};

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    spec: OptimizerSpec,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

fn flat_len(p: &DenseParams) -> usize {
    p.weights.data().len() + p.bias.len()
}

impl OptimizerState {
    pub fn new(spec: OptimizerSpec, params: &[DenseParams]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; flat_len(p)]).collect();
        Self {
            spec,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn spec(&self) -> &OptimizerSpec {
        &self.spec
    }

    /// Applies one update; `t` counts steps from 1.
    pub fn step(&mut self, params: &mut [DenseParams], grads: &[DenseParams], t: u64) {
        debug_assert!(t >= 1);
        let s = self.spec;
        let lr = s.learning_rate;
        match s.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, d) in p.weights.data_mut().iter_mut().zip(g.weights.data()) {
                        *w -= lr * d;
                    }
                    for (b, d) in p.bias.iter_mut().zip(&g.bias) {
                        *b -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - s.beta1.powi(t as i32);
                let c2 = 1.0 - s.beta2.powi(t as i32);
                for (layer, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = &mut self.m[layer];
                    let v = &mut self.v[layer];
                    let values = p.weights.data_mut().iter_mut().chain(p.bias.iter_mut());
                    let grads = g.weights.data().iter().chain(g.bias.iter());
                    for (i, (w, d)) in values.zip(grads).enumerate() {
                        m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * d;
                        v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * d * d;
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        *w -= lr * m_hat / (v_hat.sqrt() + s.epsilon);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlengine::matrix::Matrix;

    fn scalar(w: f64) -> Vec<DenseParams> {
        vec![DenseParams {
            weights: Matrix::from_vec(1, 1, vec![w]),
            bias: vec![],
        }]
    }

    #[test]
    fn sgd_step() {
        let mut p = scalar(1.0);
        let mut st = OptimizerState::new(OptimizerSpec::sgd(0.1), &p);
        st.step(&mut p, &scalar(2.0), 1);
        assert!((p[0].weights.get(0, 0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // scalar recurrence: m = 0.1, v = 0.001, m̂ = 1, v̂ = 1
        let lr = 0.0001;
        let expected = -lr * 1.0 / (1.0f64.sqrt() + 1e-7);
        let mut p = scalar(0.0);
        let mut st = OptimizerState::new(OptimizerSpec::adam(lr), &p);
        st.step(&mut p, &scalar(1.0), 1);
        let dw = p[0].weights.get(0, 0);
        assert!((dw - expected).abs() < 1e-18);
        assert!((dw + lr).abs() < 1e-10);
    }

    #[test]
    fn adam_matches_scalar_recurrence_over_steps() {
        let grads = [0.5, -1.5, 2.0, 0.25];
        let s = OptimizerSpec::adam(0.01);
        let (mut m, mut v, mut w) = (0.0f64, 0.0f64, 0.3f64);
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            w -= 0.01 * (m / (1.0 - 0.9f64.powi(t)))
                / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-7);
        }
        let mut p = scalar(0.3);
        let mut st = OptimizerState::new(s, &p);
        for (t, g) in grads.iter().enumerate() {
            st.step(&mut p, &scalar(*g), t as u64 + 1);
        }
        assert!((p[0].weights.get(0, 0) - w).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_from_zero_state_is_a_no_op() {
        for spec in [OptimizerSpec::adam(0.1), OptimizerSpec::sgd(0.1)] {
            let mut p = scalar(0.7);
            let mut st = OptimizerState::new(spec, &p);
            st.step(&mut p, &scalar(0.0), 1);
            assert_eq!(p[0].weights.get(0, 0), 0.7);
        }
    }
}
