//! Forward passes for the feature-fusion block: style-modulated convolution
//! with weight demodulation, SimAM attention, and their residual
//! composition
//!
//! ```text
//! y = simam(lrelu(modconv(lrelu(modconv(x, s)), s))) + x
//! ```

use crate::error::{Error, Result};

pub const LEAKY_RELU_SLOPE: f64 = 0.2;
pub const DEFAULT_DEMOD_EPS: f64 = 1e-8;
pub const DEFAULT_SIMAM_LAMBDA: f64 = 1e-4;

/// Dense NCHW tensor (or OIHW for kernels).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(Error::DimensionMismatch(format!("dims {dims:?} need {n} elements, got {}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("data", "non-finite element"));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut([usize; 4]) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for a in 0..dims[0] {
            for b in 0..dims[1] {
                for c in 0..dims[2] {
                    for d in 0..dims[3] {
                        data.push(f([a, b, c, d]));
                    }
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    fn offset(&self, idx: [usize; 4]) -> usize {
        ((idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]) * self.dims[3] + idx[3]
    }

    pub fn get(&self, idx: [usize; 4]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor4) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        Ok(Self {
            dims: self.dims,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    /// Contiguous `height x width` planes, one per (batch, channel).
    pub fn planes(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dims[2] * self.dims[3])
    }
}

/// Convolution weights, their optional bias, and the style vector that
/// modulates each input channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ModConvParams {
    pub weight: Tensor4,
    pub bias: Option<Vec<f64>>,
    pub style: Vec<f64>,
    pub eps: f64,
}

impl ModConvParams {
    pub fn new(weight: Tensor4, bias: Option<Vec<f64>>, style: Vec<f64>, eps: f64) -> Result<Self> {
        let p = Self {
            weight,
            bias,
            style,
            eps,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let [out_ch, in_ch, kh, kw] = self.weight.dims;
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::invalid("weight", format!("kernel {kh}x{kw} must have odd sides")));
        }
        if self.style.len() != in_ch {
            return Err(Error::DimensionMismatch(format!(
                "style has {} entries for {in_ch} input channels",
                self.style.len()
            )));
        }
        if let Some(b) = &self.bias {
            if b.len() != out_ch {
                return Err(Error::DimensionMismatch(format!("bias has {} entries for {out_ch} output channels", b.len())));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("eps", "must be positive"));
        }
        if self.style.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("style", "non-finite entry"));
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims[0]
    }
}

/// Scales each input channel by `style + 1`, then divides each output
/// channel's kernel by `sqrt(sum of squares over (in, kh, kw) + eps)`.
pub fn demodulate_weights(params: &ModConvParams) -> Result<Tensor4> {
    params.validate()?;
    let [out_ch, in_ch, kh, kw] = params.weight.dims;
    let per_in = kh * kw;
    let per_out = in_ch * per_in;
    let mut data = Vec::with_capacity(params.weight.data.len());
    for o in 0..out_ch {
        let kernel = &params.weight.data[o * per_out..(o + 1) * per_out];
        let start = data.len();
        for (i, taps) in kernel.chunks_exact(per_in).enumerate() {
            let scale = params.style[i] + 1.0;
            data.extend(taps.iter().map(|w| w * scale));
        }
        let norm = (data[start..].iter().map(|v| v * v).sum::<f64>() + params.eps).sqrt();
        for v in &mut data[start..] {
            *v /= norm;
        }
    }
    Ok(Tensor4 {
        dims: params.weight.dims,
        data,
    })
}

/// Stride-1 cross-correlation with zero "same" padding, plus per-channel bias.
pub fn conv2d_same(x: &Tensor4, weight: &Tensor4, bias: Option<&[f64]>) -> Result<Tensor4> {
    let [n, c, h, w] = x.dims;
    let [out_ch, in_ch, kh, kw] = weight.dims;
    if c != in_ch {
        return Err(Error::DimensionMismatch(format!("input has {c} channels, kernel expects {in_ch}")));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::invalid("weight", "kernel sides must be odd"));
    }
    if h < kh || w < kw {
        return Err(Error::invalid("x", format!("{h}x{w} plane is smaller than the {kh}x{kw} kernel")));
    }
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = Tensor4::zeros([n, out_ch, h, w]);
    let plane = h * w;
    for b in 0..n {
        for o in 0..out_ch {
            let base = (b * out_ch + o) * plane;
            let dst = &mut out.data[base..base + plane];
            if let Some(bias) = bias {
                dst.fill(bias[o]);
            }
            for i in 0..in_ch {
                let src = &x.data[(b * c + i) * plane..(b * c + i + 1) * plane];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = weight.get([o, i, ky, kx]);
                        if wv == 0.0 {
                            continue;
                        }
                        // output rows/cols whose tap lands inside the input
                        let y0 = ph.saturating_sub(ky);
                        let y1 = (h + ph).saturating_sub(ky).min(h);
                        let x0 = pw.saturating_sub(kx);
                        let x1 = (w + pw).saturating_sub(kx).min(w);
                        for y in y0..y1 {
                            let sy = y + ky - ph;
                            let drow = &mut dst[y * w..(y + 1) * w];
                            let srow = &src[sy * w..(sy + 1) * w];
                            for xo in x0..x1 {
                                drow[xo] += wv * srow[xo + kx - pw];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn mod_conv2d(x: &Tensor4, params: &ModConvParams) -> Result<Tensor4> {
    let demod = demodulate_weights(params)?;
    conv2d_same(x, &demod, params.bias.as_deref())
}

pub fn leaky_relu(x: &Tensor4) -> Tensor4 {
    x.map(|v| if v >= 0.0 { v } else { LEAKY_RELU_SLOPE * v })
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// SimAM gates `sigmoid((x - mu)^2 / (4 (var + lambda)) + 0.5)`, with `mu`
/// and `var = sum((x - mu)^2) / (n - 1)` taken per channel plane.
pub fn simam_gates(x: &Tensor4, lambda: f64) -> Result<Tensor4> {
    let [_, _, h, w] = x.dims;
    let n = h * w;
    if n < 2 {
        return Err(Error::invalid("x", "SimAM needs at least 2 pixels per plane"));
    }
    if !(lambda > 0.0) {
        return Err(Error::invalid("lambda", "must be positive"));
    }
    let mut data = Vec::with_capacity(x.data.len());
    for plane in x.planes() {
        let mu = plane.iter().sum::<f64>() / n as f64;
        let var = plane.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (n - 1) as f64;
        let denom = 4.0 * (var + lambda);
        data.extend(plane.iter().map(|v| sigmoid((v - mu) * (v - mu) / denom + 0.5)));
    }
    Ok(Tensor4 { dims: x.dims, data })
}

pub fn simam(x: &Tensor4, lambda: f64) -> Result<Tensor4> {
    let gates = simam_gates(x, lambda)?;
    Ok(Tensor4 {
        dims: x.dims,
        data: x.data.iter().zip(&gates.data).map(|(v, g)| v * g).collect(),
    })
}

/// Unmodulated convolution weights and bias for one layer of a block.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub weight: Tensor4,
    pub bias: Option<Vec<f64>>,
}

impl ConvWeights {
    pub fn modulated(&self, style: &[f64], eps: f64) -> Result<ModConvParams> {
        ModConvParams::new(self.weight.clone(), self.bias.clone(), style.to_vec(), eps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionBlock {
    pub conv1: ConvWeights,
    pub conv2: ConvWeights,
    pub eps: f64,
    pub lambda: f64,
}

impl FusionBlock {
    pub fn forward(&self, x: &Tensor4, style: &[f64]) -> Result<Tensor4> {
        fusion_block_forward(x, style, self)
    }
}

pub fn fusion_block_forward(x: &Tensor4, style: &[f64], block: &FusionBlock) -> Result<Tensor4> {
    let p1 = block.conv1.modulated(style, block.eps)?;
    let p2 = block.conv2.modulated(style, block.eps)?;
    let h = leaky_relu(&mod_conv2d(x, &p1)?);
    let h = leaky_relu(&mod_conv2d(&h, &p2)?);
    let attended = simam(&h, block.lambda)?;
    if attended.dims != x.dims {
        return Err(Error::DimensionMismatch(format!(
            "residual branch {:?} vs input {:?}",
            attended.dims, x.dims
        )));
    }
    attended.add(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> Tensor4 {
        Tensor4::from_fn(dims, |_| rng.gen_range(-1.0..1.0))
    }

    /// Zero-padded copy then plain nested loops.
    fn reference_conv(x: &Tensor4, k: &Tensor4, bias: Option<&[f64]>) -> Tensor4 {
        let [n, c, h, w] = x.dims();
        let [o, _, kh, kw] = k.dims();
        let (ph, pw) = (kh / 2, kw / 2);
        let (hp, wp) = (h + 2 * ph, w + 2 * pw);
        let mut padded = vec![0.0; n * c * hp * wp];
        for b in 0..n {
            for i in 0..c {
                for y in 0..h {
                    for xx in 0..w {
                        padded[((b * c + i) * hp + y + ph) * wp + xx + pw] = x.get([b, i, y, xx]);
                    }
                }
            }
        }
        Tensor4::from_fn([n, o, h, w], |[b, oc, y, xx]| {
            let mut s = bias.map_or(0.0, |b| b[oc]);
            for i in 0..c {
                for ky in 0..kh {
                    for kx in 0..kw {
                        s += k.get([oc, i, ky, kx]) * padded[((b * c + i) * hp + y + ky) * wp + xx + kx];
                    }
                }
            }
            s
        })
    }

    #[test]
    fn demod_scalar_kernel() {
        let p = ModConvParams::new(Tensor4::new([1, 1, 1, 1], vec![3.0]).unwrap(), None, vec![0.0], 1e-8).unwrap();
        let d = demodulate_weights(&p).unwrap();
        assert!((d.data()[0] - 3.0 / (9.0f64 + 1e-8).sqrt()).abs() < 1e-15);
        assert!((d.data()[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn demod_annihilating_style() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = random_tensor(&mut rng, [2, 3, 3, 3]);
        let p = ModConvParams::new(w, None, vec![-1.0; 3], DEFAULT_DEMOD_EPS).unwrap();
        assert!(demodulate_weights(&p).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn demod_unit_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w = random_tensor(&mut rng, [2, 3, 3, 3]);
        let style: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let p = ModConvParams::new(w, None, style, DEFAULT_DEMOD_EPS).unwrap();
        let d = demodulate_weights(&p).unwrap();
        for o in 0..2 {
            let mut ss = 0.0;
            for i in 0..3 {
                for y in 0..3 {
                    for x in 0..3 {
                        ss += d.get([o, i, y, x]).powi(2);
                    }
                }
            }
            assert!((ss.sqrt() - 1.0).abs() < 1e-6);
            assert!(ss.sqrt() <= 1.0);
        }
    }

    #[test]
    fn param_validation() {
        let w = Tensor4::zeros([2, 3, 3, 3]);
        assert!(ModConvParams::new(w.clone(), None, vec![0.0; 2], 1e-8).is_err());
        assert!(ModConvParams::new(w.clone(), Some(vec![0.0; 3]), vec![0.0; 3], 1e-8).is_err());
        assert!(ModConvParams::new(w.clone(), None, vec![0.0; 3], 0.0).is_err());
        assert!(ModConvParams::new(Tensor4::zeros([2, 3, 2, 2]), None, vec![0.0; 3], 1e-8).is_err());
        assert!(Tensor4::new([1, 1, 2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn scalar_modconv_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random_tensor(&mut rng, [1, 1, 5, 6]);
        let p = ModConvParams::new(Tensor4::new([1, 1, 1, 1], vec![3.0]).unwrap(), Some(vec![0.0]), vec![0.0], 1e-8).unwrap();
        let y = mod_conv2d(&x, &p).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_input_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let w = random_tensor(&mut rng, [2, 2, 3, 3]);
        let p = ModConvParams::new(w, Some(vec![0.7, -1.25]), vec![0.1, 0.2], 1e-8).unwrap();
        let y = mod_conv2d(&Tensor4::zeros([1, 2, 4, 4]), &p).unwrap();
        for (k, plane) in y.planes().enumerate() {
            assert!(plane.iter().all(|&v| v == [0.7, -1.25][k]));
        }
    }

    #[test]
    fn conv_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = random_tensor(&mut rng, [1, 1, 4, 4]);
        let w = random_tensor(&mut rng, [1, 1, 3, 3]);
        let p = ModConvParams::new(w, None, vec![0.3], 1e-8).unwrap();
        let got = mod_conv2d(&x, &p).unwrap();
        let expected = reference_conv(&x, &demodulate_weights(&p).unwrap(), None);
        for (a, b) in got.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(mod_conv2d(&random_tensor(&mut rng, [1, 2, 4, 4]), &p).is_err());
    }

    #[test]
    fn simam_constant_plane() {
        let x = Tensor4::from_fn([1, 2, 3, 3], |[_, c, _, _]| if c == 0 { 2.0 } else { -0.5 });
        let y = simam(&x, DEFAULT_SIMAM_LAMBDA).unwrap();
        let g = 1.0 / (1.0 + (-0.5f64).exp());
        assert!((g - 0.622459).abs() < 1e-6);
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((b - a * g).abs() < 1e-15);
        }
    }

    #[test]
    fn simam_hand_case() {
        // plane [1, 1, 1, 3]: mu = 1.5, var = (3·0.25 + 2.25) / 3 = 1
        let x = Tensor4::new([1, 1, 2, 2], vec![1.0, 1.0, 1.0, 3.0]).unwrap();
        let lambda = 1e-4;
        let y = simam(&x, lambda).unwrap();
        let denom = 4.0 * (1.0 + lambda);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let expect = [
            sig(0.25 / denom + 0.5),
            sig(0.25 / denom + 0.5),
            sig(0.25 / denom + 0.5),
            3.0 * sig(2.25 / denom + 0.5),
        ];
        for (a, b) in y.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn simam_is_odd_and_gated() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = random_tensor(&mut rng, [2, 3, 5, 5]);
        let y = simam(&x, DEFAULT_SIMAM_LAMBDA).unwrap();
        let yn = simam(&x.map(|v| -v), DEFAULT_SIMAM_LAMBDA).unwrap();
        for (a, b) in y.data().iter().zip(yn.data()) {
            assert_eq!(*a, -*b);
        }
        for g in simam_gates(&x, DEFAULT_SIMAM_LAMBDA).unwrap().data() {
            assert!(*g > 0.62245 && *g <= 1.0);
        }
        assert!(simam(&Tensor4::zeros([1, 1, 1, 1]), 1e-4).is_err());
    }

    fn random_block(rng: &mut ChaCha8Rng, ch: usize, k: usize) -> FusionBlock {
        FusionBlock {
            conv1: ConvWeights {
                weight: random_tensor(rng, [ch, ch, k, k]),
                bias: Some((0..ch).map(|_| rng.gen_range(-0.1..0.1)).collect()),
            },
            conv2: ConvWeights {
                weight: random_tensor(rng, [ch, ch, k, k]),
                bias: None,
            },
            eps: DEFAULT_DEMOD_EPS,
            lambda: DEFAULT_SIMAM_LAMBDA,
        }
    }

    #[test]
    fn zero_block_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = random_tensor(&mut rng, [2, 3, 4, 4]);
        let block = FusionBlock {
            conv1: ConvWeights {
                weight: Tensor4::zeros([3, 3, 3, 3]),
                bias: Some(vec![0.0; 3]),
            },
            conv2: ConvWeights {
                weight: Tensor4::zeros([3, 3, 3, 3]),
                bias: None,
            },
            eps: DEFAULT_DEMOD_EPS,
            lambda: DEFAULT_SIMAM_LAMBDA,
        };
        assert_eq!(block.forward(&x, &[0.2, -0.3, 0.5]).unwrap(), x);
    }

    #[test]
    fn block_is_the_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let block = random_block(&mut rng, 3, 3);
        let x = random_tensor(&mut rng, [1, 3, 6, 6]);
        let style = [0.1, -0.4, 0.9];
        let p1 = block.conv1.modulated(&style, block.eps).unwrap();
        let p2 = block.conv2.modulated(&style, block.eps).unwrap();
        let manual = simam(&leaky_relu(&mod_conv2d(&leaky_relu(&mod_conv2d(&x, &p1).unwrap()), &p2).unwrap()), block.lambda)
            .unwrap()
            .add(&x)
            .unwrap();
        let got = block.forward(&x, &style).unwrap();
        for (a, b) in got.data().iter().zip(manual.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn identity_like_block_gives_simam_plus_input() {
        // diagonal 1x1 kernels demodulate to the identity, positive input
        // passes both LeakyReLUs untouched
        let eye = Tensor4::from_fn([2, 2, 1, 1], |[o, i, _, _]| if o == i { 5.0 } else { 0.0 });
        let block = FusionBlock {
            conv1: ConvWeights {
                weight: eye.clone(),
                bias: None,
            },
            conv2: ConvWeights { weight: eye, bias: None },
            eps: DEFAULT_DEMOD_EPS,
            lambda: DEFAULT_SIMAM_LAMBDA,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let x = Tensor4::from_fn([1, 2, 4, 4], |_| rng.gen_range(0.1..1.0));
        let expected = simam(&x, DEFAULT_SIMAM_LAMBDA).unwrap().add(&x).unwrap();
        let got = block.forward(&x, &[0.0, 0.0]).unwrap();
        for (a, b) in got.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn residual_shape_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let block = FusionBlock {
            conv1: ConvWeights {
                weight: random_tensor(&mut rng, [2, 3, 3, 3]),
                bias: None,
            },
            conv2: ConvWeights {
                weight: random_tensor(&mut rng, [2, 2, 3, 3]),
                bias: None,
            },
            eps: DEFAULT_DEMOD_EPS,
            lambda: DEFAULT_SIMAM_LAMBDA,
        };
        let x = random_tensor(&mut rng, [1, 3, 4, 4]);
        // conv2 expects 2 input channels, style has 3
        assert!(block.forward(&x, &[0.0; 3]).is_err());
    }
}
