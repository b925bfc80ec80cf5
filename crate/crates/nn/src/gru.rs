//! Gated recurrent unit with update and reset gates.

use rand::Rng;

use crate::layers::{add_acc, matvec, matvec_t, outer_acc};
use crate::tensor::{NnError, ParamId, Params, Result, Scalar};

/// Parameter handles: input weights `w_*` are `[hidden, input]`, recurrent
/// weights `u_*` are `[hidden, hidden]`, biases `[hidden]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruCell {
    pub input: usize,
    pub hidden: usize,
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
}

#[derive(Debug, Clone)]
pub struct GruCache<T> {
    x: Vec<T>,
    h: Vec<T>,
    z: Vec<T>,
    r: Vec<T>,
    cand: Vec<T>,
    rh: Vec<T>,
}

fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

impl GruCell {
    pub fn new<T: Scalar>(params: &mut Params<T>, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        // Backbone features are not normalized and reach magnitudes near
        // ten, so input weights start small enough to keep the gates off
        // saturation. Recurrent weights use the usual 1/sqrt(hidden).
        let w_bound = 0.1 / (input.max(1) as f64).sqrt();
        let u_bound = 1.0 / (hidden.max(1) as f64).sqrt();
        let mut w = |g: &str| params.add_uniform(format!("{name}.w_{g}"), &[hidden, input], w_bound, rng);
        let (w_z, w_r, w_h) = (w("z"), w("r"), w("h"));
        let mut u = |g: &str| params.add_uniform(format!("{name}.u_{g}"), &[hidden, hidden], u_bound, rng);
        let (u_z, u_r, u_h) = (u("z"), u("r"), u("h"));
        let mut b = |g: &str| params.add_zeros(format!("{name}.b_{g}"), &[hidden]);
        let (b_z, b_r, b_h) = (b("z"), b("r"), b("h"));
        Self { input, hidden, w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h }
    }

    fn gate<T: Scalar>(&self, p: &Params<T>, w: ParamId, u: ParamId, b: ParamId, x: &[T], h: &[T]) -> Vec<T> {
        let wx = matvec(&p.get(w).data, x, self.hidden, &p.get(b).data);
        let zero = vec![T::zero(); self.hidden];
        let uh = matvec(&p.get(u).data, h, self.hidden, &zero);
        wx.iter().zip(&uh).map(|(a, b)| *a + *b).collect()
    }

    pub fn step<T: Scalar>(&self, p: &Params<T>, x: &[T], h: &[T]) -> Result<(Vec<T>, GruCache<T>)> {
        if x.len() != self.input || h.len() != self.hidden {
            return Err(NnError::Shape(format!(
                "gru: input {} / hidden {} for cell {}x{}",
                x.len(),
                h.len(),
                self.input,
                self.hidden
            )));
        }
        let z: Vec<T> = self.gate(p, self.w_z, self.u_z, self.b_z, x, h).into_iter().map(sigmoid).collect();
        let r: Vec<T> = self.gate(p, self.w_r, self.u_r, self.b_r, x, h).into_iter().map(sigmoid).collect();
        let rh: Vec<T> = r.iter().zip(h).map(|(a, b)| *a * *b).collect();
        let cand: Vec<T> = self.gate(p, self.w_h, self.u_h, self.b_h, x, &rh).into_iter().map(|v| v.tanh()).collect();
        let out = (0..self.hidden).map(|i| (T::one() - z[i]) * h[i] + z[i] * cand[i]).collect();
        Ok((out, GruCache { x: x.to_vec(), h: h.to_vec(), z, r, cand, rh }))
    }

    /// Returns `(dx, dh_prev)`.
    pub fn step_backward<T: Scalar>(
        &self,
        p: &Params<T>,
        c: &GruCache<T>,
        dh: &[T],
        grads: &mut Params<T>,
    ) -> (Vec<T>, Vec<T>) {
        let n = self.hidden;
        let one = T::one();
        let mut dh_prev: Vec<T> = (0..n).map(|i| dh[i] * (one - c.z[i])).collect();
        let da_h: Vec<T> = (0..n).map(|i| dh[i] * c.z[i] * (one - c.cand[i] * c.cand[i])).collect();
        let da_z: Vec<T> = (0..n).map(|i| dh[i] * (c.cand[i] - c.h[i]) * c.z[i] * (one - c.z[i])).collect();

        outer_acc(&mut grads.get_mut(self.w_h).data, &da_h, &c.x);
        outer_acc(&mut grads.get_mut(self.u_h).data, &da_h, &c.rh);
        add_acc(&mut grads.get_mut(self.b_h).data, &da_h);
        let d_rh = matvec_t(&p.get(self.u_h).data, &da_h, n);
        let da_r: Vec<T> = (0..n).map(|i| d_rh[i] * c.h[i] * c.r[i] * (one - c.r[i])).collect();
        for i in 0..n {
            dh_prev[i] = dh_prev[i] + d_rh[i] * c.r[i];
        }

        let mut dx = matvec_t(&p.get(self.w_h).data, &da_h, self.input);
        for (da, w, u, b) in [(&da_z, self.w_z, self.u_z, self.b_z), (&da_r, self.w_r, self.u_r, self.b_r)] {
            outer_acc(&mut grads.get_mut(w).data, da, &c.x);
            outer_acc(&mut grads.get_mut(u).data, da, &c.h);
            add_acc(&mut grads.get_mut(b).data, da);
            add_acc(&mut dx, &matvec_t(&p.get(w).data, da, self.input));
            add_acc(&mut dh_prev, &matvec_t(&p.get(u).data, da, n));
        }
        (dx, dh_prev)
    }

    /// Runs from a zero state; returns every hidden state.
    pub fn forward_seq<T: Scalar>(&self, p: &Params<T>, xs: &[Vec<T>]) -> Result<(Vec<Vec<T>>, Vec<GruCache<T>>)> {
        if xs.is_empty() {
            return Err(NnError::Empty("gru sequence".into()));
        }
        let mut h = vec![T::zero(); self.hidden];
        let (mut hs, mut caches) = (Vec::with_capacity(xs.len()), Vec::with_capacity(xs.len()));
        for x in xs {
            let (next, cache) = self.step(p, x, &h)?;
            hs.push(next.clone());
            caches.push(cache);
            h = next;
        }
        Ok((hs, caches))
    }

    /// Backpropagation through time given the loss gradient at every
    /// hidden state; returns input gradients.
    pub fn backward_seq<T: Scalar>(
        &self,
        p: &Params<T>,
        caches: &[GruCache<T>],
        dhs: &[Vec<T>],
        grads: &mut Params<T>,
    ) -> Vec<Vec<T>> {
        let mut carry = vec![T::zero(); self.hidden];
        let mut dxs = vec![Vec::new(); caches.len()];
        for t in (0..caches.len()).rev() {
            let dh: Vec<T> = dhs[t].iter().zip(&carry).map(|(a, b)| *a + *b).collect();
            let (dx, dh_prev) = self.step_backward(p, &caches[t], &dh, grads);
            dxs[t] = dx;
            carry = dh_prev;
        }
        dxs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cell(input: usize, hidden: usize, seed: u64) -> (GruCell, Params<f64>) {
        let mut p = Params::new();
        let c = GruCell::new(&mut p, "gru", input, hidden, &mut ChaCha8Rng::seed_from_u64(seed));
        (c, p)
    }

    #[test]
    fn zero_params_give_zero_state() {
        let (c, mut p) = cell(3, 4, 0);
        p = p.zeros_like();
        let (h, cache) = c.step(&p, &[1.0, -2.0, 0.5], &[0.0; 4]).unwrap();
        assert!(cache.z.iter().all(|z| *z == 0.5));
        assert!(cache.cand.iter().all(|v| *v == 0.0));
        assert_eq!(h, vec![0.0; 4]);
    }

    #[test]
    fn closed_update_gate_keeps_state() {
        let (c, mut p) = cell(3, 4, 1);
        p.get_mut(c.b_z).data.fill(-50.0);
        let prev = [0.3, -0.7, 0.1, 0.9];
        let (h, _) = c.step(&p, &[1.0, 2.0, 3.0], &prev).unwrap();
        for (a, b) in h.iter().zip(&prev) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_errors() {
        let (c, p) = cell(3, 4, 0);
        assert!(c.step(&p, &[1.0; 2], &[0.0; 4]).is_err());
        assert!(c.step(&p, &[1.0; 3], &[0.0; 5]).is_err());
        assert!(c.forward_seq(&p, &[]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn bounded_state(input in 1usize..8, hidden in 1usize..8, steps in 1usize..12, seed in any::<u64>(), scale in 0.1f64..20.0) {
            let (c, mut p) = cell(input, hidden, seed);
            p.scale(scale);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let xs: Vec<Vec<f64>> = (0..steps).map(|_| (0..input).map(|_| rng.random_range(-10.0..10.0)).collect()).collect();
            let (hs, _) = c.forward_seq(&p, &xs).unwrap();
            prop_assert!(hs.iter().flatten().all(|v| v.abs() <= 1.0));
        }

        #[test]
        fn bptt_gradients(input in 1usize..8, hidden in 1usize..8, steps in 1usize..5, seed in any::<u64>()) {
            let (c, mut p) = cell(input, hidden, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
            for t in &mut p.tensors {
                for v in &mut t.data {
                    *v = rng.random_range(-1.0..1.0);
                }
            }
            let xs: Vec<Vec<f64>> = (0..steps).map(|_| (0..input).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let probe: Vec<Vec<f64>> = (0..steps).map(|_| (0..hidden).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let loss = |p: &Params<f64>, xs: &[Vec<f64>]| {
                let (hs, _) = c.forward_seq(p, xs).unwrap();
                hs.iter().zip(&probe).map(|(h, w)| h.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()).sum::<f64>()
            };
            let (_, caches) = c.forward_seq(&p, &xs).unwrap();
            let mut grads = p.zeros_like();
            let dxs = c.backward_seq(&p, &caches, &probe, &mut grads);

            let np = p.count();
            let mut point = p.flatten();
            point.extend(xs.iter().flatten());
            let mut analytic = grads.flatten();
            analytic.extend(dxs.iter().flatten());
            let mut blocks = p.blocks();
            blocks.push(("inputs".into(), np..point.len()));
            let report = grad_check(
                |v| {
                    let mut q = p.clone();
                    q.unflatten(&v[..np]).unwrap();
                    let xi: Vec<Vec<f64>> = v[np..].chunks(input).map(<[f64]>::to_vec).collect();
                    loss(&q, &xi)
                },
                &point,
                &analytic,
                &blocks,
                1e-4,
            ).unwrap();
            prop_assert!(report.passed, "{report:?}");
        }
    }
}
