use super::network::{Gradients, Network};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Adam moments and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    /// Fresh state with β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(net: &Network<T>, lr: T) -> Self {
        let zeros: Vec<Vec<T>> = net
            .param_slots()
            .iter()
            .map(|(_, p)| vec![T::zero(); p.len()])
            .collect();
        Self {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, in place.
///
/// Rejects non-finite gradients before touching any parameter.
pub fn adam_step<T: Real>(net: &mut Network<T>, grads: &Gradients<T>, state: &mut AdamState<T>) -> Result<()> {
    let names: Vec<String> = net.param_slots().into_iter().map(|(n, _)| n).collect();
    if grads.slots.len() != names.len() || state.m.len() != names.len() {
        return Err(Error::Shape(format!(
            "optimizer expects {} parameter arrays, got {} gradients and {} moments",
            names.len(),
            grads.slots.len(),
            state.m.len()
        )));
    }
    for (name, g) in names.iter().zip(&grads.slots) {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training(format!("non-finite gradient in {name}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for (((p, g), m), v) in net
        .params_mut()
        .into_iter()
        .zip(&grads.slots)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        if p.len() != g.len() {
            return Err(Error::Shape("gradient and parameter lengths differ".into()));
        }
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= state.lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{BranchSpec, LayerSpec, NetworkSpec};

    fn scalar_net() -> Network<f64> {
        let spec = NetworkSpec {
            branches: vec![BranchSpec {
                input_shape: vec![1],
                layers: vec![],
            }],
            head: vec![LayerSpec::Dense { inputs: 1, units: 1 }],
        };
        Network::new(spec, 5).unwrap()
    }

    #[test]
    fn zero_gradient_step_is_identity() {
        let mut net = scalar_net();
        let before = net.clone();
        let mut st = AdamState::new(&net, 4e-5);
        let g = Gradients {
            slots: vec![vec![0.0], vec![0.0]],
        };
        adam_step(&mut net, &g, &mut st).unwrap();
        assert_eq!(net, before);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn single_step_closed_form() {
        let mut net = scalar_net();
        let w0 = net.param_slots()[0].1[0];
        let mut st = AdamState::new(&net, 4e-5);
        let g = Gradients {
            slots: vec![vec![1.0], vec![0.0]],
        };
        adam_step(&mut net, &g, &mut st).unwrap();
        let lr = 4e-5f64;
        let want = -lr * (0.1f64 / (1.0 - 0.9)) / ((0.001f64 / (1.0 - 0.999)).sqrt() + 1e-8);
        let got = net.param_slots()[0].1[0] - w0;
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    }

    #[test]
    fn non_finite_gradient_names_the_layer() {
        let mut net = scalar_net();
        let mut st = AdamState::new(&net, 1e-3);
        let g = Gradients {
            slots: vec![vec![f64::NAN], vec![0.0]],
        };
        match adam_step(&mut net, &g, &mut st) {
            Err(Error::Training(msg)) => assert!(msg.contains("head.0.dense.weight"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(st.step(), 0);
    }
}
