use crate::mstie::{OptimizerSnapshot, ParamStore};

/// Adam with bias correction: `p -= lr · m̂ / (√v̂ + eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    state: OptimizerSnapshot,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64, eps: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            eps,
            beta1,
            beta2,
            state: OptimizerSnapshot {
                t: 0,
                m: params.zeros_like(),
                v: params.zeros_like(),
            },
        }
    }

    pub fn with_state(mut self, state: OptimizerSnapshot) -> Self {
        self.state = state;
        self
    }

    pub fn state(&self) -> &OptimizerSnapshot {
        &self.state
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore) {
        let s = &mut self.state;
        s.t += 1;
        let c1 = 1.0 - self.beta1.powi(s.t as i32);
        let c2 = 1.0 - self.beta2.powi(s.t as i32);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = s.m.get_mut(name).expect("moment for every parameter");
            m.zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            let v = s.v.get_mut(name).expect("moment for every parameter");
            v.zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let m = s.m.get(name).unwrap();
            let v = s.v.get(name).unwrap();
            ndarray::Zip::from(p).and(m).and(v).for_each(|p, &m, &v| {
                *p -= self.lr * (m / c1) / ((v / c2).sqrt() + self.eps);
            });
        }
    }
}
