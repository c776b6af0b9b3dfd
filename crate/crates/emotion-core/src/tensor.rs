//! Dense f32 tensor and the numerical kernels everything else builds on.
//!
//! Data is stored flat in row-major order. Shapes are fixed at construction;
//! no broadcasting, no strides. Convolution is cross-correlation (no kernel
//! flip) with "valid" padding only.

use crate::error::{Error, Result};

/// Dense n-dimensional array of f32 values, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, checking that the data length matches the shape.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!(
                "all dimensions must be >= 1, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} implies {expected} elements, data has {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    /// Rank-1 tensor from a plain vector.
    pub fn from_vec(data: Vec<f32>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Same data, new shape; the element count must not change.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} ({} elements) to {shape:?} ({expected} elements)",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f32> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Elementwise activation functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActivationKind {
    Relu,
    Sigmoid,
    Tanh,
}

impl ActivationKind {
    pub fn apply(self, x: f32) -> f32 {
        match self {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            ActivationKind::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed in terms of the activation output y = f(x).
    pub fn derivative_from_output(self, y: f32) -> f32 {
        match self {
            ActivationKind::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Sigmoid => y * (1.0 - y),
            ActivationKind::Tanh => 1.0 - y * y,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Tanh => "tanh",
        }
    }
}

/// Standard matrix product of `a` [m,k] and `b` [k,n].
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 {
        return Err(Error::Dimension(format!(
            "matmul needs rank-2 tensors, got {:?} and {:?}",
            a.shape, b.shape
        )));
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dimensions disagree: {:?} x {:?}",
            a.shape, b.shape
        )));
    }
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_val) in a_row.iter().enumerate() {
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &b_val) in out_row.iter_mut().zip(b_row) {
                *o += a_val * b_val;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Valid cross-correlation of `input` [c,h,w] with `filters` [f,c,fh,fw]
/// plus per-filter `bias` [f]. Output is [f, h-fh+1, w-fw+1].
pub fn conv2d_valid(input: &Tensor, filters: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if input.shape.len() != 3 || filters.shape.len() != 4 || bias.shape.len() != 1 {
        return Err(Error::Dimension(format!(
            "conv2d_valid expects input [c,h,w], filters [f,c,fh,fw], bias [f]; got {:?}, {:?}, {:?}",
            input.shape, filters.shape, bias.shape
        )));
    }
    let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let (f, fc, fh, fw) = (
        filters.shape[0],
        filters.shape[1],
        filters.shape[2],
        filters.shape[3],
    );
    if fc != c {
        return Err(Error::Dimension(format!(
            "filter channels ({fc}) do not match input channels ({c})"
        )));
    }
    if fh > h || fw > w {
        return Err(Error::Dimension(format!(
            "kernel {fh}x{fw} larger than input {h}x{w}"
        )));
    }
    if bias.shape[0] != f {
        return Err(Error::Dimension(format!(
            "bias length {} does not match filter count {f}",
            bias.shape[0]
        )));
    }
    let (oh, ow) = (h - fh + 1, w - fw + 1);
    let mut out = vec![0.0f32; f * oh * ow];
    for fi in 0..f {
        let plane = &mut out[fi * oh * ow..(fi + 1) * oh * ow];
        plane.fill(bias.data[fi]);
        for ci in 0..c {
            let in_plane = &input.data[ci * h * w..(ci + 1) * h * w];
            for ky in 0..fh {
                for kx in 0..fw {
                    let weight = filters.data[((fi * c + ci) * fh + ky) * fw + kx];
                    for oy in 0..oh {
                        let in_row = &in_plane[(oy + ky) * w + kx..(oy + ky) * w + kx + ow];
                        let out_row = &mut plane[oy * ow..(oy + 1) * ow];
                        for (o, &iv) in out_row.iter_mut().zip(in_row) {
                            *o += weight * iv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![f, oh, ow], out)
}

/// Max pooling over [c,h,w]. Returns the pooled tensor and, per output
/// element, the flat index of its source element (needed by backprop).
pub fn maxpool2(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    if input.shape.len() != 3 {
        return Err(Error::Dimension(format!(
            "maxpool2 expects input [c,h,w], got {:?}",
            input.shape
        )));
    }
    if window == 0 || stride == 0 {
        return Err(Error::Dimension(
            "pool window and stride must be >= 1".into(),
        ));
    }
    let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    if window > h || window > w {
        return Err(Error::Dimension(format!(
            "pool window {window} larger than input {h}x{w}"
        )));
    }
    if (h - window) % stride != 0 || (w - window) % stride != 0 {
        return Err(Error::Dimension(format!(
            "input {h}x{w} not divisible for window {window} stride {stride}"
        )));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = vec![0.0f32; c * oh * ow];
    let mut argmax = vec![0usize; c * oh * ow];
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = 0usize;
                for ky in 0..window {
                    for kx in 0..window {
                        let idx = ci * h * w + (oy * stride + ky) * w + (ox * stride + kx);
                        let v = input.data[idx];
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                let oidx = ci * oh * ow + oy * ow + ox;
                out[oidx] = best;
                argmax[oidx] = best_idx;
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], out)?, argmax))
}

/// Elementwise activation; same shape out.
pub fn activate(input: &Tensor, kind: ActivationKind) -> Tensor {
    let data = input.data.iter().map(|&x| kind.apply(x)).collect();
    Tensor {
        shape: input.shape.clone(),
        data,
    }
}

/// Numerically stable softmax over a rank-1 tensor.
pub fn softmax(input: &Tensor) -> Result<Tensor> {
    if input.shape.len() != 1 {
        return Err(Error::Dimension(format!(
            "softmax expects a rank-1 tensor, got {:?}",
            input.shape
        )));
    }
    if !input.all_finite() {
        return Err(Error::Numeric(
            "softmax input contains non-finite values".into(),
        ));
    }
    let max = input.data.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut data: Vec<f32> = input.data.iter().map(|&x| (x - max).exp()).collect();
    let sum: f32 = data.iter().sum();
    for v in &mut data {
        *v /= sum;
    }
    Ok(Tensor {
        shape: input.shape.clone(),
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        Tensor::new(shape, data).unwrap()
    }

    // Naive triple-loop reference product.
    fn matmul_oracle(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a.data()[i * k + p] * b.data()[p * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        Tensor::new(vec![m, n], out).unwrap()
    }

    // Naive nested-loop reference cross-correlation.
    fn conv2d_oracle(input: &Tensor, filters: &Tensor, bias: &Tensor) -> Tensor {
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (f, fh, fw) = (filters.shape()[0], filters.shape()[2], filters.shape()[3]);
        let (oh, ow) = (h - fh + 1, w - fw + 1);
        let mut out = vec![0.0f32; f * oh * ow];
        for fi in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.data()[fi];
                    for ci in 0..c {
                        for ky in 0..fh {
                            for kx in 0..fw {
                                acc += filters.data()[((fi * c + ci) * fh + ky) * fw + kx]
                                    * input.data()[ci * h * w + (oy + ky) * w + (ox + kx)];
                            }
                        }
                    }
                    out[(fi * oh + oy) * ow + ox] = acc;
                }
            }
        }
        Tensor::new(vec![f, oh, ow], out).unwrap()
    }

    // Brute-force window max.
    fn maxpool_oracle(input: &Tensor, window: usize, stride: usize) -> Tensor {
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let oh = (h - window) / stride + 1;
        let ow = (w - window) / stride + 1;
        let mut out = vec![f32::NEG_INFINITY; c * oh * ow];
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ky in 0..window {
                        for kx in 0..window {
                            let v = input.data()
                                [ci * h * w + (oy * stride + ky) * w + (ox * stride + kx)];
                            let o = &mut out[(ci * oh + oy) * ow + ox];
                            if v > *o {
                                *o = v;
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![c, oh, ow], out).unwrap()
    }

    fn assert_close(a: &Tensor, b: &Tensor, tol: f32) {
        assert_eq!(a.shape(), b.shape());
        for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
            assert!(
                (x - y).abs() <= tol,
                "element {i}: {x} vs {y} (tol {tol})"
            );
        }
    }

    #[test]
    fn tensor_new_rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
    }

    #[test]
    fn matmul_identity() {
        let id = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(matmul(&id, &x).unwrap(), x);
    }

    #[test]
    fn matmul_zero() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![0.0, 0.0]).unwrap();
        let out = matmul(&a, &b).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn matmul_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_tensor(vec![5, 4], &mut rng);
        let b = random_tensor(vec![4, 3], &mut rng);
        assert_close(&matmul(&a, &b).unwrap(), &matmul_oracle(&a, &b), 1e-6);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![4, 2]);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = random_tensor(vec![1, 3, 3], &mut rng);
        let filt = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let bias = Tensor::zeros(vec![1]);
        let out = conv2d_valid(&input, &filt, &bias).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn conv2d_zero_input_gives_bias_planes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = Tensor::zeros(vec![2, 5, 5]);
        let filt = random_tensor(vec![3, 2, 2, 2], &mut rng);
        let bias = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let out = conv2d_valid(&input, &filt, &bias).unwrap();
        for fi in 0..3 {
            for &v in &out.data()[fi * 16..(fi + 1) * 16] {
                assert_eq!(v, bias.data()[fi]);
            }
        }
    }

    #[test]
    fn conv2d_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let input = random_tensor(vec![1, 6, 6], &mut rng);
        let filt = random_tensor(vec![2, 1, 3, 3], &mut rng);
        let bias = random_tensor(vec![2], &mut rng);
        assert_close(
            &conv2d_valid(&input, &filt, &bias).unwrap(),
            &conv2d_oracle(&input, &filt, &bias),
            1e-5,
        );
    }

    #[test]
    fn conv2d_channel_mismatch() {
        let input = Tensor::zeros(vec![2, 4, 4]);
        let filt = Tensor::zeros(vec![1, 3, 2, 2]);
        let bias = Tensor::zeros(vec![1]);
        assert!(conv2d_valid(&input, &filt, &bias).is_err());
    }

    #[test]
    fn conv2d_oversized_kernel() {
        let input = Tensor::zeros(vec![1, 4, 4]);
        let filt = Tensor::zeros(vec![1, 1, 5, 5]);
        let bias = Tensor::zeros(vec![1]);
        assert!(conv2d_valid(&input, &filt, &bias).is_err());
    }

    #[test]
    fn maxpool_constant_input() {
        let input = Tensor::filled(vec![2, 4, 4], 3.5);
        let (out, _) = maxpool2(&input, 2, 2).unwrap();
        assert_eq!(out.shape(), &[2, 2, 2]);
        assert!(out.data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn maxpool_hand_enumerated() {
        let input = Tensor::new(vec![1, 4, 4], (1..=16).map(|v| v as f32).collect()).unwrap();
        let (out, _) = maxpool2(&input, 2, 2).unwrap();
        assert_eq!(out.data(), &[6.0, 8.0, 14.0, 16.0]);
    }

    #[test]
    fn maxpool_matches_oracle_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input = random_tensor(vec![3, 8, 8], &mut rng);
        let (out, _) = maxpool2(&input, 2, 2).unwrap();
        assert_eq!(out, maxpool_oracle(&input, 2, 2));
    }

    #[test]
    fn maxpool_non_divisible_errors() {
        let input = Tensor::zeros(vec![1, 5, 5]);
        assert!(maxpool2(&input, 2, 2).is_err());
    }

    // Scattering pooled values back through the argmax indices must place
    // each max at its source position.
    #[test]
    fn maxpool_scatter_reconstructs_maxima() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let input = random_tensor(vec![2, 6, 6], &mut rng);
        let (out, argmax) = maxpool2(&input, 2, 2).unwrap();
        let mut scattered = vec![f32::NEG_INFINITY; input.len()];
        for (o, &idx) in out.data().iter().zip(&argmax) {
            scattered[idx] = *o;
        }
        let rebuilt = Tensor::new(input.shape().to_vec(), scattered).unwrap();
        let (out2, _) = maxpool2(&rebuilt, 2, 2).unwrap();
        assert_eq!(out.data(), out2.data());
    }

    #[test]
    fn activate_relu_sign_cases() {
        let x = Tensor::from_vec(vec![-1.0, 0.0, 2.0]);
        assert_eq!(activate(&x, ActivationKind::Relu).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn activate_sigmoid_symmetry_point() {
        let x = Tensor::from_vec(vec![0.0]);
        assert_eq!(activate(&x, ActivationKind::Sigmoid).data(), &[0.5]);
    }

    // Library-independent reference: tanh(x) = (e^{2x}-1)/(e^{2x}+1) with
    // exp evaluated by its Taylor series in f64.
    #[test]
    fn activate_tanh_matches_series_reference() {
        fn exp_series(x: f64) -> f64 {
            let mut term = 1.0f64;
            let mut sum = 1.0f64;
            for k in 1..60 {
                term *= x / k as f64;
                sum += term;
            }
            sum
        }
        fn tanh_ref(x: f64) -> f64 {
            let e2x = exp_series(2.0 * x);
            (e2x - 1.0) / (e2x + 1.0)
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x: f32 = rng.gen_range(-3.0..3.0);
            let got = activate(&Tensor::from_vec(vec![x]), ActivationKind::Tanh).data()[0];
            let want = tanh_ref(x as f64) as f32;
            assert!((got - want).abs() < 1e-6, "tanh({x}): {got} vs {want}");
        }
    }

    #[test]
    fn softmax_uniform_case() {
        let out = softmax(&Tensor::zeros(vec![7])).unwrap();
        for &v in out.data() {
            assert!((v - 1.0 / 7.0).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_stability_case() {
        let out = softmax(&Tensor::from_vec(vec![1000.0, 0.0])).unwrap();
        assert!(out.all_finite());
        assert!((out.data()[0] - 1.0).abs() < 1e-6);
        assert!(out.data()[1].abs() < 1e-6);
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_tensor(vec![5], &mut rng);
        let out = softmax(&x).unwrap();
        let sum: f32 = x.data().iter().map(|&v| v.exp()).sum();
        for (o, &v) in out.data().iter().zip(x.data()) {
            assert!((o - v.exp() / sum).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(softmax(&Tensor::from_vec(vec![f32::NAN, 0.0])).is_err());
    }

    #[test]
    fn kernels_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_tensor(vec![7, 5], &mut rng);
        let b = random_tensor(vec![5, 6], &mut rng);
        assert_eq!(matmul(&a, &b).unwrap(), matmul(&a, &b).unwrap());
        let input = random_tensor(vec![2, 7, 7], &mut rng);
        let filt = random_tensor(vec![3, 2, 3, 3], &mut rng);
        let bias = random_tensor(vec![3], &mut rng);
        assert_eq!(
            conv2d_valid(&input, &filt, &bias).unwrap(),
            conv2d_valid(&input, &filt, &bias).unwrap()
        );
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_shift_invariant(
            xs in proptest::collection::vec(-20.0f32..20.0, 1..12),
            shift in -10.0f32..10.0,
        ) {
            let t = Tensor::from_vec(xs.clone());
            let out = softmax(&t).unwrap();
            let sum: f32 = out.data().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            prop_assert!(out.data().iter().all(|&v| v > 0.0));

            let shifted = Tensor::from_vec(xs.iter().map(|&v| v + shift).collect());
            let out2 = softmax(&shifted).unwrap();
            for (a, b) in out.data().iter().zip(out2.data()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn matmul_agrees_with_oracle_on_random_instances(
            m in 1usize..6, k in 1usize..6, n in 1usize..6, seed in 0u64..1000
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_tensor(vec![m, k], &mut rng);
            let b = random_tensor(vec![k, n], &mut rng);
            let got = matmul(&a, &b).unwrap();
            let want = matmul_oracle(&a, &b);
            for (x, y) in got.data().iter().zip(want.data()) {
                prop_assert!((x - y).abs() <= 1e-5);
            }
        }
    }
}
