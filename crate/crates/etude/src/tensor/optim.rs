//! Named trainable parameters and the Adam optimizer with the
//! rsqrt-warmup learning-rate schedule.

use ndarray::ArrayD;

use super::{Gradients, NodeId, Tape};

/// A named tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
}

/// Ordered collection of parameters; the order is the checkpoint order and
/// the gradient-reduction order, so it must stay stable.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> usize {
        let grad = ArrayD::zeros(value.raw_dim());
        self.params.push(Parameter { name: name.into(), value, grad });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Parameter {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Parameter {
        &mut self.params[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn count_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Registers every parameter as a gradient-tracked leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound { ids: self.params.iter().map(|p| tape.leaf(p.value.clone())).collect() }
    }
}

/// Node ids of one tape's parameter leaves, parallel to the [`ParamSet`].
pub struct Bound {
    ids: Vec<NodeId>,
}

impl Bound {
    pub fn id(&self, param: usize) -> NodeId {
        self.ids[param]
    }

    /// Extracts per-parameter gradients; parameters the loss never touched
    /// come back as zeros.
    pub fn pull(&self, params: &ParamSet, grads: &Gradients) -> Vec<ArrayD<f64>> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, &id)| match grads.get(id) {
                Some(g) => g.clone(),
                None => ArrayD::zeros(params.get(i).value.raw_dim()),
            })
            .collect()
    }
}

/// `base * min(step * warmup^-1.5, step^-0.5)`: linear warmup into inverse
/// square-root decay, maximal exactly at `step == warmup`.
pub fn rsqrt_warmup_lr(base: f64, warmup: usize, step: usize) -> f64 {
    let s = step.max(1) as f64;
    let w = warmup.max(1) as f64;
    base * (s * w.powf(-1.5)).min(s.powf(-0.5))
}

/// Adam with the rsqrt-warmup schedule. Updates are deterministic given the
/// optimizer state and gradients.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub base_lr: f64,
    pub warmup: usize,
    pub step: usize,
    pub m: Vec<ArrayD<f64>>,
    pub v: Vec<ArrayD<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, base_lr: f64, warmup: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            base_lr,
            warmup,
            step: 0,
            m: params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect(),
            v: params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect(),
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        rsqrt_warmup_lr(self.base_lr, self.warmup, step)
    }

    /// One update from the gradients accumulated in `params`.
    pub fn step(&mut self, params: &mut ParamSet) {
        self.step += 1;
        let lr = self.lr_at(self.step);
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let p = params.get_mut(i);
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            azip_update(m, v, &mut p.value, &p.grad, self.beta1, self.beta2, self.eps, lr, bc1, bc2);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn azip_update(
    m: &mut ArrayD<f64>,
    v: &mut ArrayD<f64>,
    value: &mut ArrayD<f64>,
    grad: &ArrayD<f64>,
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    ndarray::Zip::from(value)
        .and(m)
        .and(v)
        .and(grad)
        .for_each(|val, m, v, &g| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *val -= lr * mhat / (vhat.sqrt() + eps);
        });
}
