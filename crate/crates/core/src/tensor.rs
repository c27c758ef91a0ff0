//! Dense row-major tensors with the handful of differentiable primitives the
//! encoder needs, SGD with Nesterov momentum, and a finite-difference checker.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of the temporal convolution kernel.
pub const TEMPORAL_KERNEL: usize = 9;
/// Temporal convolution stride.
pub const TEMPORAL_STRIDE: usize = 2;
/// Zero padding before the first frame. Together with [`PAD_AFTER`] this
/// makes a width-9 stride-2 convolution map `T` frames to `floor(T / 2)`.
pub const PAD_BEFORE: usize = 3;
pub const PAD_AFTER: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data viewed under a new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    fn dims2(&self, what: &str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            s => Err(Error::Shape(format!("{what}: expected a matrix, got shape {s:?}"))),
        }
    }

    fn dims3(&self, what: &str) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[a, b, c] => Ok((a, b, c)),
            s => Err(Error::Shape(format!("{what}: expected rank 3, got shape {s:?}"))),
        }
    }
}

/// Dot product with four interleaved accumulators so the reduction
/// vectorises. The summation order is fixed, so results are deterministic.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `a[m×k] · b[k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul lhs")?;
    let (k2, n) = b.dims2("matmul rhs")?;
    if k != k2 {
        return Err(Error::Shape(format!("matmul inner extents {k} and {k2} differ")));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::from_vec(vec![m, n], out)
}

/// `aᵀ · b` without materialising the transpose.
pub fn matmul_at_b(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = a.dims2("matmul_at_b lhs")?;
    let (k2, n) = b.dims2("matmul_at_b rhs")?;
    if k != k2 {
        return Err(Error::Shape(format!("matmul_at_b leading extents {k} and {k2} differ")));
    }
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &b.data[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a.data[p * m + i];
            if api == 0.0 {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += api * bv;
            }
        }
    }
    Tensor::from_vec(vec![m, n], out)
}

/// `a · bᵀ` without materialising the transpose.
pub fn matmul_a_bt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul_a_bt lhs")?;
    let (n, k2) = b.dims2("matmul_a_bt rhs")?;
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul_a_bt trailing extents {k} and {k2} differ"
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b.data[j * k..(j + 1) * k];
            out[i * n + j] = dot(arow, brow);
        }
    }
    Tensor::from_vec(vec![m, n], out)
}

/// Gradients of `matmul(a, b)` given the upstream gradient: `(d a, d b)`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, dout: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((matmul_a_bt(dout, b)?, matmul_at_b(a, dout)?))
}

/// Output length of the strided temporal convolution.
pub fn conv_output_len(frames: usize) -> usize {
    (frames + PAD_BEFORE + PAD_AFTER).saturating_sub(TEMPORAL_KERNEL) / TEMPORAL_STRIDE
        + usize::from(frames + PAD_BEFORE + PAD_AFTER >= TEMPORAL_KERNEL)
}

/// Output frames `t` whose source frame `2t + tap − 3` lies inside the input.
fn tap_range(tap: usize, t_in: usize, t_out: usize) -> std::ops::Range<usize> {
    let lo = PAD_BEFORE.saturating_sub(tap).div_ceil(TEMPORAL_STRIDE);
    let hi = (t_in + PAD_BEFORE)
        .saturating_sub(tap)
        .div_ceil(TEMPORAL_STRIDE)
        .min(t_out);
    lo..hi.max(lo)
}

fn check_conv(x: &Tensor, kernel: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (c_in, t_in, joints) = x.dims3("conv_temporal input")?;
    let (c_out, kc, width) = kernel.dims3("conv_temporal kernel")?;
    if t_in == 0 {
        return Err(Error::Shape("conv_temporal on an empty time axis".into()));
    }
    if kc != c_in || width != TEMPORAL_KERNEL {
        return Err(Error::Shape(format!(
            "kernel {:?} incompatible with {c_in} input channels",
            kernel.shape
        )));
    }
    Ok((c_in, t_in, joints, c_out))
}

/// Width-9, stride-2 convolution along time, applied independently at every
/// node and mixing channels: `x[C×T×J]`, `kernel[C'×C×9]` → `[C'×floor(T/2)×J]`.
/// Frames are zero-padded with 3 before and 4 after.
pub fn conv_temporal(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let (c_in, t_in, joints, c_out) = check_conv(x, kernel)?;
    let t_out = conv_output_len(t_in);
    let mut out = vec![0.0; c_out * t_out * joints];
    for o in 0..c_out {
        let plane = &mut out[o * t_out * joints..(o + 1) * t_out * joints];
        for c in 0..c_in {
            let src_plane = &x.data[c * t_in * joints..(c + 1) * t_in * joints];
            for tap in 0..TEMPORAL_KERNEL {
                let w = kernel.data[(o * c_in + c) * TEMPORAL_KERNEL + tap];
                if w == 0.0 {
                    continue;
                }
                for t in tap_range(tap, t_in, t_out) {
                    let src = TEMPORAL_STRIDE * t + tap - PAD_BEFORE;
                    let orow = &mut plane[t * joints..(t + 1) * joints];
                    let xrow = &src_plane[src * joints..(src + 1) * joints];
                    for (ov, xv) in orow.iter_mut().zip(xrow) {
                        *ov += w * xv;
                    }
                }
            }
        }
    }
    Tensor::from_vec(vec![c_out, t_out, joints], out)
}

/// Gradients of [`conv_temporal`]: `(d x, d kernel)`.
pub fn conv_temporal_backward(x: &Tensor, kernel: &Tensor, dout: &Tensor) -> Result<(Tensor, Tensor)> {
    let (c_in, t_in, joints, c_out) = check_conv(x, kernel)?;
    let t_out = conv_output_len(t_in);
    if dout.shape != [c_out, t_out, joints] {
        return Err(Error::Shape(format!(
            "conv_temporal upstream gradient {:?}, expected {:?}",
            dout.shape,
            [c_out, t_out, joints]
        )));
    }
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; kernel.len()];
    for o in 0..c_out {
        let dplane = &dout.data[o * t_out * joints..(o + 1) * t_out * joints];
        for c in 0..c_in {
            let xplane = &x.data[c * t_in * joints..(c + 1) * t_in * joints];
            let dxplane = &mut dx[c * t_in * joints..(c + 1) * t_in * joints];
            for tap in 0..TEMPORAL_KERNEL {
                let kidx = (o * c_in + c) * TEMPORAL_KERNEL + tap;
                let w = kernel.data[kidx];
                let mut acc = 0.0;
                for t in tap_range(tap, t_in, t_out) {
                    let src = TEMPORAL_STRIDE * t + tap - PAD_BEFORE;
                    let drow = &dplane[t * joints..(t + 1) * joints];
                    acc += dot(&xplane[src * joints..(src + 1) * joints], drow);
                    if w != 0.0 {
                        for (dxv, dv) in dxplane[src * joints..(src + 1) * joints].iter_mut().zip(drow) {
                            *dxv += w * dv;
                        }
                    }
                }
                dk[kidx] = acc;
            }
        }
    }
    Ok((
        Tensor::from_vec(x.shape.clone(), dx)?,
        Tensor::from_vec(kernel.shape.clone(), dk)?,
    ))
}

/// Per-row L3 norm: `x[C×P]` → `[C]`, `(Σ_p |x[c,p]|³)^(1/3)`.
pub fn l3_pool(x: &Tensor) -> Result<Tensor> {
    let (rows, cols) = x.dims2("l3_pool")?;
    let out = (0..rows)
        .map(|r| {
            x.data[r * cols..(r + 1) * cols]
                .iter()
                .map(|v| v.abs().powi(3))
                .sum::<f64>()
                .cbrt()
        })
        .collect();
    Tensor::from_vec(vec![rows], out)
}

/// Gradient of [`l3_pool`]: `sign(x)·x²·(Σ|x|³)^(-2/3)`, zero on all-zero rows.
pub fn l3_pool_backward(x: &Tensor, dout: &Tensor) -> Result<Tensor> {
    let (rows, cols) = x.dims2("l3_pool")?;
    if dout.shape != [rows] {
        return Err(Error::Shape(format!("l3_pool upstream gradient {:?}", dout.shape)));
    }
    let mut dx = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &x.data[r * cols..(r + 1) * cols];
        let sum: f64 = row.iter().map(|v| v.abs().powi(3)).sum();
        if sum == 0.0 {
            continue;
        }
        let scale = dout.data[r] * sum.powf(-2.0 / 3.0);
        for (d, v) in dx[r * cols..(r + 1) * cols].iter_mut().zip(row) {
            *d = scale * v * v.abs();
        }
    }
    Tensor::from_vec(x.shape.clone(), dx)
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|v| v.max(0.0)).collect(),
    }
}

/// Masks `dout` by the sign of the ReLU's output.
pub fn relu_backward(y: &Tensor, dout: &Tensor) -> Tensor {
    Tensor {
        shape: y.shape.clone(),
        data: y
            .data
            .iter()
            .zip(&dout.data)
            .map(|(y, d)| if *y > 0.0 { *d } else { 0.0 })
            .collect(),
    }
}

/// A learnable tensor with its gradient accumulator and momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub value: Tensor,
    pub grad: Tensor,
    pub velocity: Tensor,
}

impl ParamTensor {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        let velocity = Tensor::zeros(value.shape());
        Self { value, grad, velocity }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub nesterov: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            momentum: 0.9,
            decay_factor: 0.1,
            decay_every: 10,
            nesterov: true,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument("momentum must lie in [0, 1)".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::InvalidArgument("decay_factor must lie in (0, 1]".into()));
        }
        if self.decay_every == 0 {
            return Err(Error::InvalidArgument("decay_every must be positive".into()));
        }
        Ok(())
    }

    /// Step schedule: `lr · decay^floor(epoch / decay_every)`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }
}

/// One SGD update at learning rate `lr`.
///
/// `v ← μ·v − lr·g`, then `θ ← θ + μ·v − lr·g` with Nesterov or `θ ← θ + v`
/// without.
pub fn sgd_nesterov_step<'a, I>(params: I, lr: f64, cfg: &OptimConfig)
where
    I: IntoIterator<Item = &'a mut ParamTensor>,
{
    let mu = cfg.momentum;
    for p in params {
        let grad = p.grad.data();
        let vel = &mut p.velocity.data;
        let val = &mut p.value.data;
        for i in 0..val.len() {
            let g = grad[i];
            vel[i] = mu * vel[i] - lr * g;
            if cfg.nesterov {
                val[i] += mu * vel[i] - lr * g;
            } else {
                val[i] += vel[i];
            }
        }
    }
}

/// Largest coordinate-wise relative error between `analytic` and central
/// differences of `f` around `theta`.
///
/// Relative error per coordinate is `|a − n| / max(1e-12, |a| + |n|)`.
pub fn grad_check<F>(theta: &[f64], analytic: &[f64], eps: f64, mut f: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(theta.len(), analytic.len(), "gradient length mismatch");
    let mut probe = theta.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        probe[i] = theta[i] + eps;
        let plus = f(&probe);
        probe[i] = theta[i] - eps;
        let minus = f(&probe);
        probe[i] = theta[i];
        let numeric = (plus - minus) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-12);
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        t(shape, &(0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>())
    }

    #[test]
    fn matmul_examples() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(matmul(&eye, &x).unwrap(), x);
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let ones = t(&[2, 1], &[1.0, 1.0]);
        assert_eq!(matmul(&a, &ones).unwrap().data(), &[3.0, 7.0]);
        assert!(matmul(&Tensor::zeros(&[2, 2]), &x)
            .unwrap()
            .data()
            .iter()
            .all(|v| *v == 0.0));
        assert!(matmul(&x, &x).is_err());
    }

    #[test]
    fn transposed_products_agree_with_plain_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&[3, 4], &mut rng);
        let b = random(&[3, 5], &mut rng);
        let c = random(&[6, 4], &mut rng);
        let at = transpose(&a);
        let ct = transpose(&c);
        assert_close(&matmul_at_b(&a, &b).unwrap(), &matmul(&at, &b).unwrap());
        assert_close(&matmul_a_bt(&a, &c).unwrap(), &matmul(&a, &ct).unwrap());
    }

    fn transpose(a: &Tensor) -> Tensor {
        let (r, c) = (a.shape()[0], a.shape()[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = a.data()[i * c + j];
            }
        }
        t(&[c, r], &out)
    }

    fn assert_close(a: &Tensor, b: &Tensor) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn conv_lengths_follow_halving_chain() {
        let chain: Vec<usize> = [50, 25, 12, 6, 3].iter().map(|&n| conv_output_len(n)).collect();
        assert_eq!(chain, vec![25, 12, 6, 3, 1]);
    }

    #[test]
    fn delta_kernel_picks_even_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (c, frames, joints) = (2, 10, 3);
        let x = random(&[c, frames, joints], &mut rng);
        let mut k = Tensor::zeros(&[c, c, TEMPORAL_KERNEL]);
        for ch in 0..c {
            k.data_mut()[(ch * c + ch) * TEMPORAL_KERNEL + PAD_BEFORE] = 1.0;
        }
        let y = conv_temporal(&x, &k).unwrap();
        assert_eq!(y.shape(), &[c, 5, joints]);
        for ch in 0..c {
            for tt in 0..5 {
                for j in 0..joints {
                    assert_eq!(
                        y.data()[(ch * 5 + tt) * joints + j],
                        x.data()[(ch * frames + 2 * tt) * joints + j]
                    );
                }
            }
        }
        let zero = conv_temporal(&x, &Tensor::zeros(&[4, c, TEMPORAL_KERNEL])).unwrap();
        assert!(zero.data().iter().all(|v| *v == 0.0));
        assert!(conv_temporal(&Tensor::zeros(&[c, 0, joints]), &k).is_err());
    }

    proptest! {
        #[test]
        fn conv_output_is_half_length(frames in 1usize..=128) {
            let x = Tensor::zeros(&[1, frames, 2]);
            let k = Tensor::zeros(&[1, 1, TEMPORAL_KERNEL]);
            prop_assert_eq!(conv_temporal(&x, &k).unwrap().shape()[1], frames / 2);
        }

        #[test]
        fn momentum_free_step_is_plain_descent(
            theta in proptest::collection::vec(-10.0f64..10.0, 1..20),
            lr in 1e-4f64..1.0,
        ) {
            let grad: Vec<f64> = theta.iter().map(|v| v.sin()).collect();
            let mut p = ParamTensor::new(t(&[theta.len()], &theta));
            p.grad = t(&[theta.len()], &grad);
            let cfg = OptimConfig { momentum: 0.0, ..OptimConfig::default() };
            sgd_nesterov_step([&mut p], lr, &cfg);
            for i in 0..theta.len() {
                prop_assert_eq!(p.value.data()[i], theta[i] - lr * grad[i]);
            }
        }
    }

    #[test]
    fn l3_pool_examples() {
        let y = l3_pool(&t(&[3, 3], &[1.0, 1.0, 1.0, -2.5, 0.0, 0.0, 0.0, 0.0, 0.0])).unwrap();
        assert!((y.data()[0] - 1.442_249_570_307_408_3).abs() < 1e-12);
        assert_eq!(y.data()[1], 2.5);
        assert_eq!(y.data()[2], 0.0);
        let g = l3_pool_backward(&t(&[1, 2], &[0.0, 0.0]), &t(&[1], &[1.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0]);
    }

    #[test]
    fn sgd_examples() {
        let cfg = OptimConfig::default();
        let mut p = ParamTensor::new(t(&[1], &[1.0]));
        sgd_nesterov_step([&mut p], 0.1, &cfg);
        assert_eq!(p.value.data(), &[1.0]);

        p.grad = t(&[1], &[1.0]);
        sgd_nesterov_step([&mut p], 0.1, &cfg);
        assert!((p.velocity.data()[0] + 0.1).abs() < 1e-15);
        assert!((p.value.data()[0] - 0.81).abs() < 1e-15);

        let plain = OptimConfig { nesterov: false, ..cfg };
        let mut q = ParamTensor::new(t(&[1], &[1.0]));
        q.grad = t(&[1], &[1.0]);
        sgd_nesterov_step([&mut q], 0.1, &plain);
        assert!((q.value.data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn schedule_decays_every_ten_epochs() {
        let cfg = OptimConfig::default();
        for epoch in 0..50 {
            let expected = 1e-2 * 0.1f64.powi((epoch / 10) as i32);
            assert_eq!(cfg.learning_rate_at(epoch), expected);
        }
        assert!((cfg.learning_rate_at(10) - 1e-3).abs() < 1e-18);
        assert!((cfg.learning_rate_at(20) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn optim_config_validation() {
        assert!(OptimConfig::default().validate().is_ok());
        assert!(OptimConfig {
            momentum: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(OptimConfig {
            learning_rate: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(OptimConfig {
            decay_factor: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn grad_check_examples() {
        let err = grad_check(&[3.0], &[6.0], 1e-5, |th| th[0] * th[0]);
        assert!(err < 1e-8, "{err}");
        assert_eq!(grad_check(&[1.0, 2.0], &[0.0, 0.0], 1e-5, |_| 4.0), 0.0);
    }

    #[test]
    fn l3_of_matmul_passes_grad_check() {
        // f(A) = Σ_c w_c · l3(A·B)_c for a random 4×5 input and fixed B, w.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&[4, 5], &mut rng);
        let b = random(&[5, 6], &mut rng);
        let w = random(&[4], &mut rng);
        let f = |theta: &[f64]| {
            let a = t(&[4, 5], theta);
            let y = l3_pool(&matmul(&a, &b).unwrap()).unwrap();
            y.data().iter().zip(w.data()).map(|(y, w)| y * w).sum::<f64>()
        };
        let prod = matmul(&a, &b).unwrap();
        let dprod = l3_pool_backward(&prod, &w).unwrap();
        let (da, _) = matmul_backward(&a, &b, &dprod).unwrap();
        let err = grad_check(a.data(), da.data(), 1e-5, f);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn conv_passes_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[3, 11, 2], &mut rng);
        let k = random(&[2, 3, TEMPORAL_KERNEL], &mut rng);
        let y = conv_temporal(&x, &k).unwrap();
        let w = random(y.shape(), &mut rng);
        let (dx, dk) = conv_temporal_backward(&x, &k, &w).unwrap();
        let dot = |t: &Tensor| t.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>();
        let err_x = grad_check(x.data(), dx.data(), 1e-5, |th| {
            dot(&conv_temporal(&t(x.shape(), th), &k).unwrap())
        });
        let err_k = grad_check(k.data(), dk.data(), 1e-5, |th| {
            dot(&conv_temporal(&x, &t(k.shape(), th)).unwrap())
        });
        assert!(err_x < 1e-6 && err_k < 1e-6, "{err_x} {err_k}");
    }
}
