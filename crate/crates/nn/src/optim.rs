use crate::tensor::{NnError, Params, Result, Scalar};

pub const DEFAULT_LR: f64 = 0.001;

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Params<T>,
    pub v: Params<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &Params<T>, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: params.zeros_like(), v: params.zeros_like() }
    }

    /// One bias-corrected update.
    pub fn update(&mut self, params: &mut Params<T>, grads: &Params<T>) -> Result<()> {
        let same = |a: &Params<T>, b: &Params<T>| {
            a.tensors.len() == b.tensors.len() && a.tensors.iter().zip(&b.tensors).all(|(x, y)| x.shape == y.shape)
        };
        if !same(params, grads) || !same(params, &self.m) {
            return Err(NnError::Shape("adam: parameter and gradient shapes differ".into()));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one, lr, eps) = (T::one(), T::of(self.lr), T::of(self.eps));
        let (c1, c2) = (T::of(c1), T::of(c2));
        for (k, p) in params.tensors.iter_mut().enumerate() {
            let g = &grads.tensors[k].data;
            let m = &mut self.m.tensors[k].data;
            let v = &mut self.v.tensors[k].data;
            for i in 0..p.data.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p.data[i] = p.data[i] - lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
