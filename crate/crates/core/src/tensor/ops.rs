use super::{LayerParams, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of k-1 frames split (k-1)/2 left, remainder right.
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn new(stride: usize, padding: Padding) -> Self {
        ConvSpec { stride, padding }
    }

    fn left_pad(&self, kernel: usize) -> usize {
        match self.padding {
            Padding::Same => (kernel - 1) / 2,
            Padding::Valid => 0,
        }
    }
}

/// Number of output frames for `len` input frames: floor((len_padded - k) / stride) + 1.
pub fn conv_output_len(len: usize, kernel: usize, spec: ConvSpec) -> Result<usize> {
    if spec.stride == 0 {
        return Err(Error::Config("convolution stride must be positive".into()));
    }
    let padded = match spec.padding {
        Padding::Same => len + kernel - 1,
        Padding::Valid => len,
    };
    if len == 0 {
        return Ok(0);
    }
    if kernel > padded {
        return Err(Error::dim(format!(
            "kernel width {kernel} exceeds padded input length {padded}"
        )));
    }
    Ok((padded - kernel) / spec.stride + 1)
}

/// y = x·W + b for x: [B×Din], W: [Din×Dout], b: [Dout].
pub fn dense_forward<F: Scalar>(x: &Tensor<F>, p: &LayerParams<F>) -> Result<Tensor<F>> {
    let (b, din) = x.dims2()?;
    let (win, dout) = p.weight.dims2()?;
    if din != win || p.bias.len() != dout {
        return Err(Error::dim(format!(
            "dense input {:?} against weight {:?} / bias {:?}",
            x.shape(),
            p.weight.shape(),
            p.bias.shape()
        )));
    }
    let w = p.weight.data();
    let mut y = Tensor::zeros(&[b, dout]);
    for r in 0..b {
        let yrow = y.row_mut(r);
        yrow.copy_from_slice(p.bias.data());
        for (i, &xv) in x.row(r).iter().enumerate() {
            let wrow = &w[i * dout..(i + 1) * dout];
            for (o, &wv) in yrow.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
    }
    Ok(y)
}

/// Accumulates parameter gradients into `p` and returns dL/dx.
pub fn dense_backward<F: Scalar>(
    x: &Tensor<F>,
    p: &mut LayerParams<F>,
    dy: &Tensor<F>,
) -> Result<Tensor<F>> {
    let (b, din) = x.dims2()?;
    let (_, dout) = p.weight.dims2()?;
    if dy.shape() != [b, dout] {
        return Err(Error::dim(format!(
            "dense upstream gradient {:?}, expected [{b}, {dout}]",
            dy.shape()
        )));
    }
    let mut dx = Tensor::zeros(&[b, din]);
    let w = p.weight.data();
    let gw = p.grad_weight.data_mut();
    let gb = p.grad_bias.data_mut();
    for r in 0..b {
        let dyrow = dy.row(r);
        for (g, &d) in gb.iter_mut().zip(dyrow) {
            *g += d;
        }
        let xrow = x.row(r);
        let dxrow = &mut dx.data_mut()[r * din..(r + 1) * din];
        for i in 0..din {
            let wrow = &w[i * dout..(i + 1) * dout];
            let gwrow = &mut gw[i * dout..(i + 1) * dout];
            let xv = xrow[i];
            let mut acc = F::zero();
            for o in 0..dout {
                gwrow[o] += xv * dyrow[o];
                acc += wrow[o] * dyrow[o];
            }
            dxrow[i] = acc;
        }
    }
    Ok(dx)
}

fn check_conv_shapes<F: Scalar>(
    x: &Tensor<F>,
    p: &LayerParams<F>,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (b, t, din) = x.dims3()?;
    let (k, win, dout) = p.weight.dims3().map_err(|_| {
        Error::dim(format!(
            "conv weight must be [kernel, in, out], got {:?}",
            p.weight.shape()
        ))
    })?;
    if win != din || p.bias.len() != dout {
        return Err(Error::dim(format!(
            "conv input {:?} against weight {:?} / bias {:?}",
            x.shape(),
            p.weight.shape(),
            p.bias.shape()
        )));
    }
    Ok((b, t, din, k, dout))
}

/// 1-D convolution over every frame of x: [B×T×Din] with W: [k×Din×Dout].
pub fn conv1d_forward<F: Scalar>(
    x: &Tensor<F>,
    p: &LayerParams<F>,
    spec: ConvSpec,
) -> Result<Tensor<F>> {
    let (b, t, _) = x.dims3()?;
    let (y, _) = conv1d_forward_masked(x, &vec![t; b], p, spec)?;
    Ok(y)
}

/// Convolution that treats example `b` as having only `lengths[b]` frames.
///
/// Frames at or past `lengths[b]` are never read, and output frames past the
/// returned output length are zero. Output time extent is computed from the
/// full tensor length T.
pub fn conv1d_forward_masked<F: Scalar>(
    x: &Tensor<F>,
    lengths: &[usize],
    p: &LayerParams<F>,
    spec: ConvSpec,
) -> Result<(Tensor<F>, Vec<usize>)> {
    let (b, t, din, k, dout) = check_conv_shapes(x, p)?;
    if lengths.len() != b {
        return Err(Error::dim(format!("{} lengths for batch of {b}", lengths.len())));
    }
    let t_out = conv_output_len(t, k, spec)?;
    let out_lens = lengths
        .iter()
        .map(|&l| conv_output_len(l.min(t), k, spec))
        .collect::<Result<Vec<_>>>()?;
    let left = spec.left_pad(k) as isize;
    let w = p.weight.data();
    let xd = x.data();
    let mut y = Tensor::zeros(&[b, t_out, dout]);
    let yd = y.data_mut();
    for bi in 0..b {
        let len = lengths[bi].min(t) as isize;
        for to in 0..out_lens[bi] {
            let yrow = &mut yd[(bi * t_out + to) * dout..(bi * t_out + to + 1) * dout];
            yrow.copy_from_slice(p.bias.data());
            let start = (to * spec.stride) as isize - left;
            for j in 0..k {
                let pos = start + j as isize;
                if pos < 0 || pos >= len {
                    continue;
                }
                let xrow = &xd[(bi * t + pos as usize) * din..(bi * t + pos as usize + 1) * din];
                for (i, &xv) in xrow.iter().enumerate() {
                    let wrow = &w[(j * din + i) * dout..(j * din + i + 1) * dout];
                    for (o, &wv) in yrow.iter_mut().zip(wrow) {
                        *o += xv * wv;
                    }
                }
            }
        }
    }
    Ok((y, out_lens))
}

/// Backward of [`conv1d_forward_masked`]. Accumulates parameter gradients;
/// returns dL/dx when `need_input_grad` is set.
pub fn conv1d_backward<F: Scalar>(
    x: &Tensor<F>,
    lengths: &[usize],
    p: &mut LayerParams<F>,
    spec: ConvSpec,
    dy: &Tensor<F>,
    need_input_grad: bool,
) -> Result<Option<Tensor<F>>> {
    let (b, t, din, k, dout) = check_conv_shapes(x, p)?;
    let t_out = conv_output_len(t, k, spec)?;
    if dy.shape() != [b, t_out, dout] {
        return Err(Error::dim(format!(
            "conv upstream gradient {:?}, expected [{b}, {t_out}, {dout}]",
            dy.shape()
        )));
    }
    let left = spec.left_pad(k) as isize;
    let mut dx = need_input_grad.then(|| Tensor::zeros(&[b, t, din]));
    let xd = x.data();
    let dyd = dy.data();
    let w = p.weight.data();
    let gw = p.grad_weight.data_mut();
    let gb = p.grad_bias.data_mut();
    for bi in 0..b {
        let len = lengths[bi].min(t);
        let n_out = conv_output_len(len, k, spec)?;
        for to in 0..n_out {
            let dyrow = &dyd[(bi * t_out + to) * dout..(bi * t_out + to + 1) * dout];
            for (g, &d) in gb.iter_mut().zip(dyrow) {
                *g += d;
            }
            let start = (to * spec.stride) as isize - left;
            for j in 0..k {
                let pos = start + j as isize;
                if pos < 0 || pos >= len as isize {
                    continue;
                }
                let base = (bi * t + pos as usize) * din;
                let xrow = &xd[base..base + din];
                for i in 0..din {
                    let off = (j * din + i) * dout;
                    let gwrow = &mut gw[off..off + dout];
                    let xv = xrow[i];
                    for (g, &d) in gwrow.iter_mut().zip(dyrow) {
                        *g += xv * d;
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    let dxrow = &mut dx.data_mut()[base..base + din];
                    for (i, dxv) in dxrow.iter_mut().enumerate() {
                        let off = (j * din + i) * dout;
                        *dxv += super::dot(&w[off..off + dout], dyrow);
                    }
                }
            }
        }
    }
    Ok(dx)
}

pub fn relu_forward<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let mut y = x.clone();
    for v in y.data_mut() {
        if !(*v > F::zero()) {
            *v = F::zero();
        }
    }
    y
}

/// Gradient through ReLU given the forward output `y`.
pub fn relu_backward<F: Scalar>(y: &Tensor<F>, dy: &Tensor<F>) -> Result<Tensor<F>> {
    if y.shape() != dy.shape() {
        return Err(Error::dim(format!(
            "relu gradient {:?} against activation {:?}",
            dy.shape(),
            y.shape()
        )));
    }
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
        if !(v > F::zero()) {
            *d = F::zero();
        }
    }
    Ok(dx)
}

/// Mean over the first `lengths[b]` frames of each example: [B×T×C] -> [B×C].
pub fn mean_pool_time<F: Scalar>(x: &Tensor<F>, lengths: &[usize]) -> Result<Tensor<F>> {
    let (b, t, c) = x.dims3()?;
    if lengths.len() != b {
        return Err(Error::dim(format!("{} lengths for batch of {b}", lengths.len())));
    }
    let mut out = Tensor::zeros(&[b, c]);
    for bi in 0..b {
        let len = lengths[bi].min(t);
        if len == 0 {
            return Err(Error::Degenerate(format!(
                "example {bi} has no valid frames to pool"
            )));
        }
        let orow = out.row_mut(bi);
        for ti in 0..len {
            let xrow = &x.data()[(bi * t + ti) * c..(bi * t + ti + 1) * c];
            for (o, &v) in orow.iter_mut().zip(xrow) {
                *o += v;
            }
        }
        let n = F::of(len as f64);
        orow.iter_mut().for_each(|o| *o /= n);
    }
    Ok(out)
}

pub fn mean_pool_backward<F: Scalar>(
    lengths: &[usize],
    frames: usize,
    dy: &Tensor<F>,
) -> Result<Tensor<F>> {
    let (b, c) = dy.dims2()?;
    if lengths.len() != b {
        return Err(Error::dim(format!("{} lengths for batch of {b}", lengths.len())));
    }
    let mut dx = Tensor::zeros(&[b, frames, c]);
    for bi in 0..b {
        let len = lengths[bi].min(frames);
        if len == 0 {
            return Err(Error::Degenerate(format!(
                "example {bi} has no valid frames to pool"
            )));
        }
        let n = F::of(len as f64);
        let g: Vec<F> = dy.row(bi).iter().map(|&d| d / n).collect();
        for ti in 0..len {
            dx.data_mut()[(bi * frames + ti) * c..(bi * frames + ti + 1) * c].copy_from_slice(&g);
        }
    }
    Ok(dx)
}

/// Elementwise sum of two equally shaped tensors. The backward pass of a
/// residual join hands the upstream gradient to both branches unchanged.
pub fn residual_add<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let mut out = a.clone();
    out.add_assign(b)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn params(wshape: &[usize], rng: &mut ChaCha8Rng) -> LayerParams<f64> {
        let out = *wshape.last().unwrap();
        LayerParams::new(random(wshape, rng), random(&[out], rng))
    }

    // Direct-summation oracles, written independently of the kernels above.
    fn naive_dense(x: &Tensor<f64>, p: &LayerParams<f64>) -> Vec<f64> {
        let (b, din) = (x.shape()[0], x.shape()[1]);
        let dout = p.weight.shape()[1];
        let mut y = vec![0.0; b * dout];
        for r in 0..b {
            for o in 0..dout {
                let mut s = p.bias.data()[o];
                for i in 0..din {
                    s += x.data()[r * din + i] * p.weight.data()[i * dout + o];
                }
                y[r * dout + o] = s;
            }
        }
        y
    }

    fn naive_conv(x: &Tensor<f64>, p: &LayerParams<f64>, stride: usize, same: bool) -> Vec<f64> {
        let (b, t, din) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (k, dout) = (p.weight.shape()[0], p.weight.shape()[2]);
        let (left, right) = if same { ((k - 1) / 2, k - 1 - (k - 1) / 2) } else { (0, 0) };
        let tp = t + left + right;
        let mut padded = vec![0.0; b * tp * din];
        for bi in 0..b {
            for ti in 0..t {
                for i in 0..din {
                    padded[(bi * tp + ti + left) * din + i] = x.data()[(bi * t + ti) * din + i];
                }
            }
        }
        let t_out = (tp - k) / stride + 1;
        let mut y = Vec::new();
        for bi in 0..b {
            for to in 0..t_out {
                for o in 0..dout {
                    let mut s = p.bias.data()[o];
                    for j in 0..k {
                        for i in 0..din {
                            s += padded[(bi * tp + to * stride + j) * din + i]
                                * p.weight.data()[(j * din + i) * dout + o];
                        }
                    }
                    y.push(s);
                }
            }
        }
        y
    }

    #[test]
    fn dense_identity_and_bias() {
        let x = Tensor::from_rows(&[[1.0, 2.0]]).unwrap();
        let p = LayerParams::new(
            Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(),
            Tensor::zeros(&[2]),
        );
        assert_eq!(dense_forward(&x, &p).unwrap().data(), &[1.0, 2.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::zeros(&[1, 2]);
        let p = LayerParams::new(
            random(&[2, 2], &mut rng),
            Tensor::from_vec(&[2], vec![3.0, -1.0]).unwrap(),
        );
        assert_eq!(dense_forward(&x, &p).unwrap().data(), &[3.0, -1.0]);
    }

    #[test]
    fn dense_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[3, 4], &mut rng);
        let p = params(&[4, 2], &mut rng);
        let y = dense_forward(&x, &p).unwrap();
        for (a, b) in y.data().iter().zip(naive_dense(&x, &p)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_shape_mismatch_names_shapes() {
        let x = Tensor::<f64>::zeros(&[2, 3]);
        let p = LayerParams::new(Tensor::zeros(&[4, 2]), Tensor::zeros(&[2]));
        let msg = dense_forward(&x, &p).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn conv_identity_kernel_is_passthrough() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[2, 5, 3], &mut rng);
        let mut w = Tensor::zeros(&[1, 3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let p = LayerParams::new(w, Tensor::zeros(&[3]));
        let y = conv1d_forward(&x, &p, ConvSpec::new(1, Padding::Same)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_constant_case() {
        let x = Tensor::from_vec(&[1, 6, 1], vec![1.0; 6]).unwrap();
        let p = LayerParams::new(
            Tensor::from_vec(&[3, 1, 1], vec![1.0; 3]).unwrap(),
            Tensor::zeros(&[1]),
        );
        let y = conv1d_forward(&x, &p, ConvSpec::new(1, Padding::Valid)).unwrap();
        assert_eq!(y.shape(), &[1, 4, 1]);
        assert!(y.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn conv_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (stride, same) in [(1, true), (2, true), (1, false), (3, false)] {
            let x = random(&[1, 8, 2], &mut rng);
            let p = params(&[3, 2, 4], &mut rng);
            let pad = if same { Padding::Same } else { Padding::Valid };
            let y = conv1d_forward(&x, &p, ConvSpec::new(stride, pad)).unwrap();
            let oracle = naive_conv(&x, &p, stride, same);
            assert_eq!(y.len(), oracle.len());
            for (a, b) in y.data().iter().zip(oracle) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_kernel_wider_than_input() {
        let x = Tensor::<f64>::zeros(&[1, 2, 1]);
        let p = LayerParams::new(Tensor::zeros(&[3, 1, 1]), Tensor::zeros(&[1]));
        let err = conv1d_forward(&x, &p, ConvSpec::new(1, Padding::Valid)).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn masked_conv_ignores_padded_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = params(&[5, 2, 3], &mut rng);
        let a = random(&[1, 10, 2], &mut rng);
        let mut b = a.clone();
        for v in &mut b.data_mut()[12..] {
            *v = 99.0;
        }
        let spec = ConvSpec::new(2, Padding::Same);
        let (ya, la) = conv1d_forward_masked(&a, &[6], &p, spec).unwrap();
        let (yb, lb) = conv1d_forward_masked(&b, &[6], &p, spec).unwrap();
        assert_eq!(la, vec![3]);
        assert_eq!(la, lb);
        assert!(ya.bit_eq(&yb));
        assert!(ya.data()[3 * 3..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_basic() {
        let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn mean_pool_identical_frames() {
        let frame = [0.5, -1.25, 3.0];
        let mut data = Vec::new();
        for _ in 0..4 {
            data.extend_from_slice(&frame);
        }
        let x = Tensor::from_vec(&[1, 4, 3], data).unwrap();
        assert_eq!(mean_pool_time(&x, &[4]).unwrap().data(), &frame);
    }

    #[test]
    fn mean_pool_half_padded() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random(&[2, 8, 3], &mut rng);
        let pooled = mean_pool_time(&x, &[4, 4]).unwrap();
        for b in 0..2 {
            for c in 0..3 {
                let mut s = 0.0;
                for t in 0..4 {
                    s += x.data()[(b * 8 + t) * 3 + c];
                }
                assert!((pooled.data()[b * 3 + c] - s / 4.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mean_pool_empty_is_degenerate() {
        let x = Tensor::<f64>::zeros(&[1, 3, 2]);
        assert!(matches!(mean_pool_time(&x, &[0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn zero_upstream_leaves_grads_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[2, 6, 3], &mut rng);
        let mut p = params(&[3, 3, 4], &mut rng);
        p.zero_grad();
        let spec = ConvSpec::new(1, Padding::Same);
        let y = conv1d_forward(&x, &p, spec).unwrap();
        let dy = Tensor::zeros(y.shape());
        conv1d_backward(&x, &[6, 6], &mut p, spec, &dy, true).unwrap();
        assert!(p.grad_weight.data().iter().all(|&g| g == 0.0));
        assert!(p.grad_bias.data().iter().all(|&g| g == 0.0));

        let x2 = random(&[2, 3], &mut rng);
        let mut d = params(&[3, 2], &mut rng);
        d.zero_grad();
        dense_backward(&x2, &mut d, &Tensor::zeros(&[2, 2])).unwrap();
        assert!(d.grad_weight.data().iter().all(|&g| g == 0.0));
    }
}
