//! Single-sample layers over `[channels, height, width]` tensors, each with a
//! paired backward pass that accumulates parameter gradients.

use rand::Rng;

use crate::tensor::{NnError, ParamId, Params, Result, Scalar, Tensor};

fn chw(x: &Tensor<impl Scalar>, what: &str) -> Result<(usize, usize, usize)> {
    match x.shape[..] {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(NnError::Shape(format!("{what}: expected [c, h, w], got {:?}", x.shape))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    cols: Vec<T>,
    in_hw: (usize, usize),
    out_hw: (usize, usize),
}

impl Conv2d {
    /// Registers `{name}.weight` `[out, in, kh, kw]` and `{name}.bias`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        params: &mut Params<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        rng: &mut impl Rng,
    ) -> Self {
        assert!(stride.0 > 0 && stride.1 > 0, "stride must be positive");
        let fan_in = in_ch * kernel.0 * kernel.1;
        let weight = params.add_he_uniform(format!("{name}.weight"), &[out_ch, in_ch, kernel.0, kernel.1], fan_in, rng);
        let bias = params.add_zeros(format!("{name}.bias"), &[out_ch]);
        Self { in_ch, out_ch, kernel, stride, pad, weight, bias }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (hp, wp) = (h + 2 * self.pad.0, w + 2 * self.pad.1);
        if self.kernel.0 > hp || self.kernel.1 > wp {
            return Err(NnError::Shape(format!(
                "kernel {:?} larger than padded input {hp}x{wp}",
                self.kernel
            )));
        }
        Ok(((hp - self.kernel.0) / self.stride.0 + 1, (wp - self.kernel.1) / self.stride.1 + 1))
    }

    fn im2col<T: Scalar>(&self, x: &[T], h: usize, w: usize, ho: usize, wo: usize) -> Vec<T> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = (self.pad.0 as isize, self.pad.1 as isize);
        let p = ho * wo;
        let mut cols = vec![T::zero(); self.in_ch * kh * kw * p];
        for c in 0..self.in_ch {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for i in 0..kh {
                for j in 0..kw {
                    let row = &mut cols[((c * kh + i) * kw + j) * p..][..p];
                    for oy in 0..ho {
                        let iy = (oy * sh) as isize + i as isize - ph;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut row[oy * wo..(oy + 1) * wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * sw) as isize + j as isize - pw;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Scalar>(&self, cols: &[T], h: usize, w: usize, ho: usize, wo: usize) -> Vec<T> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = (self.pad.0 as isize, self.pad.1 as isize);
        let p = ho * wo;
        let mut x = vec![T::zero(); self.in_ch * h * w];
        for c in 0..self.in_ch {
            let plane = &mut x[c * h * w..(c + 1) * h * w];
            for i in 0..kh {
                for j in 0..kw {
                    let row = &cols[((c * kh + i) * kw + j) * p..][..p];
                    for oy in 0..ho {
                        let iy = (oy * sh) as isize + i as isize - ph;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &v) in row[oy * wo..(oy + 1) * wo].iter().enumerate() {
                            let ix = (ox * sw) as isize + j as isize - pw;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] = dst[ix as usize] + v;
                            }
                        }
                    }
                }
            }
        }
        x
    }

    pub fn forward<T: Scalar>(&self, params: &Params<T>, x: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
        let (c, h, w) = chw(x, "conv2d")?;
        if c != self.in_ch {
            return Err(NnError::Shape(format!("conv2d: {c} input channels, layer expects {}", self.in_ch)));
        }
        let (ho, wo) = self.output_hw(h, w)?;
        let cols = self.im2col(&x.data, h, w, ho, wo);
        let (k, p) = (self.in_ch * self.kernel.0 * self.kernel.1, ho * wo);
        let wt = &params.get(self.weight).data;
        let mut out = vec![T::zero(); self.out_ch * p];
        T::gemm(self.out_ch, k, p, T::one(), wt, (k as isize, 1), &cols, (p as isize, 1), T::zero(), &mut out);
        for (o, b) in params.get(self.bias).data.iter().enumerate() {
            out[o * p..(o + 1) * p].iter_mut().for_each(|v| *v = *v + *b);
        }
        let y = Tensor { shape: vec![self.out_ch, ho, wo], data: out };
        Ok((y, ConvCache { cols, in_hw: (h, w), out_hw: (ho, wo) }))
    }

    /// Accumulates weight and bias gradients; returns the input gradient
    /// when `need_dx`.
    pub fn backward<T: Scalar>(
        &self,
        params: &Params<T>,
        cache: &ConvCache<T>,
        dy: &Tensor<T>,
        grads: &mut Params<T>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let (ho, wo) = cache.out_hw;
        let (h, w) = cache.in_hw;
        let (k, p) = (self.in_ch * self.kernel.0 * self.kernel.1, ho * wo);
        debug_assert_eq!(dy.shape, vec![self.out_ch, ho, wo]);
        T::gemm(
            self.out_ch,
            p,
            k,
            T::one(),
            &dy.data,
            (p as isize, 1),
            &cache.cols,
            (1, p as isize),
            T::one(),
            &mut grads.get_mut(self.weight).data,
        );
        let db = &mut grads.get_mut(self.bias).data;
        for (o, g) in db.iter_mut().enumerate() {
            *g = *g + dy.data[o * p..(o + 1) * p].iter().copied().sum();
        }
        if !need_dx {
            return None;
        }
        let mut dcols = vec![T::zero(); k * p];
        let wt = &params.get(self.weight).data;
        T::gemm(k, self.out_ch, p, T::one(), wt, (1, k as isize), &dy.data, (p as isize, 1), T::zero(), &mut dcols);
        Some(Tensor { shape: vec![self.in_ch, h, w], data: self.col2im(&dcols, h, w, ho, wo) })
    }
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor { shape: x.shape.clone(), data: x.data.iter().map(|v| v.max(T::zero())).collect() }
}

/// Gradient through ReLU given its output.
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = y.data.iter().zip(&dy.data).map(|(o, g)| if *o > T::zero() { *g } else { T::zero() }).collect();
    Tensor { shape: dy.shape.clone(), data }
}

/// Average pooling without padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AvgPool2d {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
}

impl AvgPool2d {
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.kernel.0 > h || self.kernel.1 > w || self.kernel.0 == 0 || self.kernel.1 == 0 {
            return Err(NnError::Shape(format!("pool kernel {:?} on {h}x{w}", self.kernel)));
        }
        Ok(((h - self.kernel.0) / self.stride.0 + 1, (w - self.kernel.1) / self.stride.1 + 1))
    }

    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = chw(x, "avgpool")?;
        let (ho, wo) = self.output_hw(h, w)?;
        let norm = T::of(1.0 / (self.kernel.0 * self.kernel.1) as f64);
        let mut out = vec![T::zero(); c * ho * wo];
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = T::zero();
                    for i in 0..self.kernel.0 {
                        for j in 0..self.kernel.1 {
                            s = s + x.data[(ch * h + oy * self.stride.0 + i) * w + ox * self.stride.1 + j];
                        }
                    }
                    out[(ch * ho + oy) * wo + ox] = s * norm;
                }
            }
        }
        Ok(Tensor { shape: vec![c, ho, wo], data: out })
    }

    pub fn backward<T: Scalar>(&self, in_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
        let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
        let (ho, wo) = (dy.shape[1], dy.shape[2]);
        let norm = T::of(1.0 / (self.kernel.0 * self.kernel.1) as f64);
        let mut dx = vec![T::zero(); c * h * w];
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let g = dy.data[(ch * ho + oy) * wo + ox] * norm;
                    for i in 0..self.kernel.0 {
                        for j in 0..self.kernel.1 {
                            let idx = (ch * h + oy * self.stride.0 + i) * w + ox * self.stride.1 + j;
                            dx[idx] = dx[idx] + g;
                        }
                    }
                }
            }
        }
        Tensor { shape: in_shape.to_vec(), data: dx }
    }
}

/// Mean over the spatial axes: `[c, h, w]` to `[c]`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = chw(x, "global pool")?;
    let norm = T::of(1.0 / (h * w) as f64);
    let data = x.data.chunks_exact(h * w).map(|p| p.iter().copied().sum::<T>() * norm).collect();
    Ok(Tensor { shape: vec![c], data })
}

pub fn global_avg_pool_backward<T: Scalar>(in_shape: &[usize], dy: &[T]) -> Tensor<T> {
    let hw = in_shape[1] * in_shape[2];
    let norm = T::of(1.0 / hw as f64);
    let data = dy.iter().flat_map(|g| std::iter::repeat_n(*g * norm, hw)).collect();
    Tensor { shape: in_shape.to_vec(), data }
}

/// Fully connected layer on vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<T: Scalar>(params: &mut Params<T>, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let weight = params.add_he_uniform(format!("{name}.weight"), &[output, input], input, rng);
        let bias = params.add_zeros(format!("{name}.bias"), &[output]);
        Self { input, output, weight, bias }
    }

    pub fn forward<T: Scalar>(&self, params: &Params<T>, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input {
            return Err(NnError::Shape(format!("dense: input {} expected {}", x.len(), self.input)));
        }
        Ok(matvec(&params.get(self.weight).data, x, self.output, &params.get(self.bias).data))
    }

    pub fn backward<T: Scalar>(&self, params: &Params<T>, x: &[T], dy: &[T], grads: &mut Params<T>) -> Vec<T> {
        outer_acc(&mut grads.get_mut(self.weight).data, dy, x);
        add_acc(&mut grads.get_mut(self.bias).data, dy);
        matvec_t(&params.get(self.weight).data, dy, self.input)
    }
}

/// `w x + b` for row-major `w` of `rows` rows.
pub(crate) fn matvec<T: Scalar>(w: &[T], x: &[T], rows: usize, b: &[T]) -> Vec<T> {
    let cols = x.len();
    (0..rows)
        .map(|r| w[r * cols..(r + 1) * cols].iter().zip(x).fold(b[r], |s, (a, v)| s + *a * *v))
        .collect()
}

/// `wᵀ y` for row-major `w` with `cols` columns.
pub(crate) fn matvec_t<T: Scalar>(w: &[T], y: &[T], cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); cols];
    for (r, g) in y.iter().enumerate() {
        for (o, a) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o = *o + *a * *g;
        }
    }
    out
}

/// `g += dy ⊗ x`.
pub(crate) fn outer_acc<T: Scalar>(g: &mut [T], dy: &[T], x: &[T]) {
    for (r, d) in dy.iter().enumerate() {
        for (o, v) in g[r * x.len()..(r + 1) * x.len()].iter_mut().zip(x) {
            *o = *o + *d * *v;
        }
    }
}

pub(crate) fn add_acc<T: Scalar>(g: &mut [T], d: &[T]) {
    for (o, v) in g.iter_mut().zip(d) {
        *o = *o + *v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() }
    }

    #[test]
    fn identity_kernel() {
        let mut p = Params::<f64>::new();
        let conv = Conv2d::new(&mut p, "c", 1, 1, (1, 1), (1, 1), (0, 0), &mut ChaCha8Rng::seed_from_u64(0));
        p.get_mut(conv.weight).data = vec![1.0];
        let x = rand_tensor(&[1, 4, 5], &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(conv.forward(&p, &x).unwrap().0, x);
    }

    #[test]
    fn ones_kernel_sums() {
        let mut p = Params::<f64>::new();
        let conv = Conv2d::new(&mut p, "c", 1, 1, (3, 3), (1, 1), (0, 0), &mut ChaCha8Rng::seed_from_u64(0));
        p.get_mut(conv.weight).data = vec![1.0; 9];
        let (y, _) = conv.forward(&p, &Tensor::filled(&[1, 5, 5], 1.0)).unwrap();
        assert_eq!(y.shape, vec![1, 3, 3]);
        assert!(y.data.iter().all(|v| *v == 9.0));

        let padded = Conv2d { pad: (1, 1), ..conv };
        let (y, _) = padded.forward(&p, &Tensor::filled(&[1, 5, 5], 1.0)).unwrap();
        assert_eq!(y.shape, vec![1, 5, 5]);
        assert_eq!((y.data[0], y.data[1], y.data[6]), (4.0, 6.0, 9.0));
    }

    #[test]
    fn conv_output_size_and_errors() {
        let mut p = Params::<f32>::new();
        let conv = Conv2d::new(&mut p, "c", 2, 3, (3, 3), (2, 2), (1, 1), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(conv.output_hw(8, 5).unwrap(), (4, 3));
        let big = Conv2d { kernel: (7, 7), pad: (0, 0), ..conv };
        assert!(big.forward(&p, &Tensor::zeros(&[2, 5, 5])).is_err());
        assert!(conv.forward(&p, &Tensor::zeros(&[3, 5, 5])).is_err());
        assert!(conv.forward(&p, &Tensor::zeros(&[5, 5])).is_err());
    }

    #[test]
    fn pooling_examples() {
        let x = Tensor::new(vec![1, 2, 4], vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let pool = AvgPool2d { kernel: (2, 2), stride: (2, 2) };
        assert_eq!(pool.forward(&x).unwrap().data, vec![3.5, 5.5]);
        assert_eq!(global_avg_pool(&x).unwrap().data, vec![4.5]);
        assert!(AvgPool2d { kernel: (3, 3), stride: (1, 1) }.forward(&x).is_err());
    }

    /// Scalar probe `sum(y * probe)` for checking a layer's gradients.
    fn probe_loss(y: &[f64], probe: &[f64]) -> f64 {
        y.iter().zip(probe).map(|(a, b)| a * b).sum()
    }

    fn dims() -> impl Strategy<Value = (usize, usize, usize, usize, usize, usize, usize, u64)> {
        (1usize..4, 1usize..4, 3usize..9, 3usize..9, 1usize..4, 1usize..3, 0usize..2, any::<u64>())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn conv_gradients((cin, cout, h, w, k, s, pad, seed) in dims()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params = Params::<f64>::new();
            let conv = Conv2d::new(&mut params, "c", cin, cout, (k, k.min(w)), (s, s), (pad, pad), &mut rng);
            for b in &mut params.get_mut(conv.bias).data {
                *b = rng.random_range(-1.0..1.0);
            }
            let x = rand_tensor(&[cin, h, w], &mut rng);
            let (y, cache) = conv.forward(&params, &x).unwrap();
            let probe: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut grads = params.zeros_like();
            let dx = conv.backward(&params, &cache, &Tensor { shape: y.shape.clone(), data: probe.clone() }, &mut grads, true).unwrap();

            // parameters and input together
            let mut point = params.flatten();
            let np = point.len();
            point.extend_from_slice(&x.data);
            let mut analytic = grads.flatten();
            analytic.extend_from_slice(&dx.data);
            let mut blocks = params.blocks();
            blocks.push(("input".into(), np..np + x.len()));
            let report = grad_check(
                |v| {
                    let mut p = params.clone();
                    p.unflatten(&v[..np]).unwrap();
                    let xi = Tensor { shape: x.shape.clone(), data: v[np..].to_vec() };
                    probe_loss(&conv.forward(&p, &xi).unwrap().0.data, &probe)
                },
                &point,
                &analytic,
                &blocks,
                1e-4,
            ).unwrap();
            prop_assert!(report.passed, "{report:?}");
        }

        #[test]
        fn relu_pool_gradients(c in 1usize..4, h in 2usize..9, w in 2usize..9, k in 1usize..3, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&[c, h, w], &mut rng);
            let pool = AvgPool2d { kernel: (k, k), stride: (k, 1) };
            let f = |xi: &Tensor<f64>| {
                let r = relu(xi);
                let p = pool.forward(&r).unwrap();
                (r, p.clone(), global_avg_pool(&p).unwrap())
            };
            let (r, p, g) = f(&x);
            let probe: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dp = global_avg_pool_backward(&p.shape, &probe);
            let dr = pool.backward(&r.shape, &dp);
            let dx = relu_backward(&r, &dr);
            let report = grad_check(
                |v| probe_loss(&f(&Tensor { shape: x.shape.clone(), data: v.to_vec() }).2.data, &probe),
                &x.data,
                &dx.data,
                &[("input".into(), 0..x.len())],
                1e-4,
            ).unwrap();
            prop_assert!(report.passed, "{report:?}");
        }

        #[test]
        fn dense_gradients(i in 1usize..9, o in 1usize..9, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params = Params::<f64>::new();
            let dense = Dense::new(&mut params, "fc", i, o, &mut rng);
            let x: Vec<f64> = (0..i).map(|_| rng.random_range(-1.0..1.0)).collect();
            let probe: Vec<f64> = (0..o).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut grads = params.zeros_like();
            let dx = dense.backward(&params, &x, &probe, &mut grads);
            let np = params.count();
            let mut point = params.flatten();
            point.extend_from_slice(&x);
            let mut analytic = grads.flatten();
            analytic.extend_from_slice(&dx);
            let mut blocks = params.blocks();
            blocks.push(("input".into(), np..np + i));
            let report = grad_check(
                |v| {
                    let mut p = params.clone();
                    p.unflatten(&v[..np]).unwrap();
                    probe_loss(&dense.forward(&p, &v[np..]).unwrap(), &probe)
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
