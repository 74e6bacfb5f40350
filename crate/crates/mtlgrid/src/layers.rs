//! The closed layer set used by the model: conv2d 3x3/pad1/stride1, relu,
//! 2x2 max pooling, and linear. Forward passes cache what backward needs;
//! backward is an explicit reverse traversal, no general tape.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d { weight: Tensor, bias: Tensor },
    Linear { weight: Tensor, bias: Tensor },
    Relu,
    MaxPool2,
}

/// Activation context captured by a forward pass; backward consumes it.
#[derive(Debug, Clone)]
pub struct Context {
    input: Tensor,
}

impl Context {
    pub fn input(&self) -> &Tensor {
        &self.input
    }
}

#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
    pub input: Tensor,
}

/// Uniform init in +-sqrt(6/(fan_in+fan_out)), biases zero.
pub fn conv2d_init(in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Layer {
    let fan_in = in_channels * 9;
    let fan_out = out_channels * 9;
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = out_channels * in_channels * 9;
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Layer::Conv2d {
        weight: Tensor::from_vec(&[out_channels, in_channels, 3, 3], data).unwrap(),
        bias: Tensor::zeros(&[out_channels]),
    }
}

pub fn linear_init(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Layer {
    let bound = (6.0 / (in_features + out_features) as f64).sqrt();
    let n = out_features * in_features;
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Layer::Linear {
        weight: Tensor::from_vec(&[out_features, in_features], data).unwrap(),
        bias: Tensor::zeros(&[out_features]),
    }
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d { .. } => "conv2d",
            Layer::Linear { .. } => "linear",
            Layer::Relu => "relu",
            Layer::MaxPool2 => "maxpool2",
        }
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv2d { weight, bias } | Layer::Linear { weight, bias } => {
                vec![weight, bias]
            }
            _ => vec![],
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv2d { weight, bias } | Layer::Linear { weight, bias } => {
                vec![weight, bias]
            }
            _ => vec![],
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Context)> {
        let output = match self {
            Layer::Conv2d { weight, bias } => conv2d_forward(weight, bias, input)?,
            Layer::Linear { weight, bias } => linear_forward(weight, bias, input)?,
            Layer::Relu => Tensor::from_vec(
                input.shape(),
                input.data().iter().map(|v| v.max(0.0)).collect(),
            )?,
            Layer::MaxPool2 => maxpool2_forward(input)?,
        };
        Ok((
            output,
            Context {
                input: input.clone(),
            },
        ))
    }

    pub fn backward(&self, ctx: &Context, grad_output: &Tensor) -> Result<LayerGrad> {
        match self {
            Layer::Conv2d { weight, bias } => {
                conv2d_backward(weight, bias, &ctx.input, grad_output)
            }
            Layer::Linear { weight, .. } => linear_backward(weight, &ctx.input, grad_output),
            Layer::Relu => {
                if !ctx.input.same_shape(grad_output) {
                    return Err(shape_err("relu backward", ctx.input.shape(), grad_output));
                }
                let data = ctx
                    .input
                    .data()
                    .iter()
                    .zip(grad_output.data())
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                Ok(LayerGrad {
                    weight: None,
                    bias: None,
                    input: Tensor::from_vec(ctx.input.shape(), data)?,
                })
            }
            Layer::MaxPool2 => maxpool2_backward(&ctx.input, grad_output),
        }
    }
}

fn shape_err(op: &'static str, expected: &[usize], actual: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        expected: format!("{:?}", expected),
        actual: format!("{:?}", actual.shape()),
    }
}

fn conv2d_forward(weight: &Tensor, bias: &Tensor, input: &Tensor) -> Result<Tensor> {
    let [oc, ic, _, _] = conv_dims(weight);
    if input.rank() != 4 || input.shape()[1] != ic {
        return Err(Error::ShapeMismatch {
            op: "conv2d forward",
            expected: format!("[B, {}, H, W]", ic),
            actual: format!("{:?}", input.shape()),
        });
    }
    let (b, h, w) = (input.shape()[0], input.shape()[2], input.shape()[3]);
    let mut out = Tensor::zeros(&[b, oc, h, w]);
    let inp = input.data();
    let wts = weight.data();
    let bs = bias.data();
    let od = out.data_mut();
    let plane = h * w;
    for bi in 0..b {
        for o in 0..oc {
            let out_base = (bi * oc + o) * plane;
            od[out_base..out_base + plane].fill(bs[o]);
            for i in 0..ic {
                let in_base = (bi * ic + i) * plane;
                for ky in 0..3usize {
                    for kx in 0..3usize {
                        let wv = wts[((o * ic + i) * 3 + ky) * 3 + kx];
                        let dy = ky as isize - 1;
                        let dx = kx as isize - 1;
                        let y0 = (-dy).max(0) as usize;
                        let y1 = (h as isize).min(h as isize - dy) as usize;
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize).min(w as isize - dx) as usize;
                        for y in y0..y1 {
                            let orow = out_base + y * w;
                            let irow = in_base as isize + (y as isize + dy) * w as isize + dx;
                            let s0 = (irow + x0 as isize) as usize;
                            let s1 = (irow + x1 as isize) as usize;
                            let (dst, src) = (&mut od[orow + x0..orow + x1], &inp[s0..s1]);
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn conv2d_backward(
    weight: &Tensor,
    bias: &Tensor,
    input: &Tensor,
    grad_output: &Tensor,
) -> Result<LayerGrad> {
    let [oc, ic, _, _] = conv_dims(weight);
    let (b, h, w) = (input.shape()[0], input.shape()[2], input.shape()[3]);
    grad_output.check_shape("conv2d backward", &[b, oc, h, w])?;
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(bias.shape());
    let mut dx = Tensor::zeros(input.shape());
    let inp = input.data();
    let wts = weight.data();
    let go = grad_output.data();
    let plane = h * w;
    {
        let dbd = db.data_mut();
        for bi in 0..b {
            for o in 0..oc {
                let base = (bi * oc + o) * plane;
                dbd[o] += go[base..base + plane].iter().sum::<f64>();
            }
        }
    }
    let dwd = dw.data_mut();
    let dxd = dx.data_mut();
    for bi in 0..b {
        for o in 0..oc {
            let out_base = (bi * oc + o) * plane;
            for i in 0..ic {
                let in_base = (bi * ic + i) * plane;
                for ky in 0..3usize {
                    for kx in 0..3usize {
                        let widx = ((o * ic + i) * 3 + ky) * 3 + kx;
                        let wv = wts[widx];
                        let dy = ky as isize - 1;
                        let dx_ = kx as isize - 1;
                        let y0 = (-dy).max(0) as usize;
                        let y1 = (h as isize).min(h as isize - dy) as usize;
                        let x0 = (-dx_).max(0) as usize;
                        let x1 = (w as isize).min(w as isize - dx_) as usize;
                        let mut wacc = 0.0;
                        for y in y0..y1 {
                            let orow = out_base + y * w;
                            let irow = in_base as isize + (y as isize + dy) * w as isize + dx_;
                            let s0 = (irow + x0 as isize) as usize;
                            let s1 = (irow + x1 as isize) as usize;
                            let g = &go[orow + x0..orow + x1];
                            let s = &inp[s0..s1];
                            let d = &mut dxd[s0..s1];
                            for ((gv, sv), dv) in g.iter().zip(s).zip(d) {
                                wacc += gv * sv;
                                *dv += wv * gv;
                            }
                        }
                        dwd[widx] += wacc;
                    }
                }
            }
        }
    }
    Ok(LayerGrad {
        weight: Some(dw),
        bias: Some(db),
        input: dx,
    })
}

fn conv_dims(weight: &Tensor) -> [usize; 4] {
    let s = weight.shape();
    [s[0], s[1], s[2], s[3]]
}

fn linear_forward(weight: &Tensor, bias: &Tensor, input: &Tensor) -> Result<Tensor> {
    let (out_f, in_f) = (weight.shape()[0], weight.shape()[1]);
    if input.rank() != 2 || input.shape()[1] != in_f {
        return Err(Error::ShapeMismatch {
            op: "linear forward",
            expected: format!("[B, {}]", in_f),
            actual: format!("{:?}", input.shape()),
        });
    }
    let b = input.shape()[0];
    let mut out = Tensor::zeros(&[b, out_f]);
    let od = out.data_mut();
    let x = input.data();
    let wts = weight.data();
    let bs = bias.data();
    for bi in 0..b {
        let xrow = &x[bi * in_f..(bi + 1) * in_f];
        let orow = &mut od[bi * out_f..(bi + 1) * out_f];
        for (o, ov) in orow.iter_mut().enumerate() {
            let wrow = &wts[o * in_f..(o + 1) * in_f];
            let mut acc = bs[o];
            for (wv, xv) in wrow.iter().zip(xrow) {
                acc += wv * xv;
            }
            *ov = acc;
        }
    }
    Ok(out)
}

fn linear_backward(weight: &Tensor, input: &Tensor, grad_output: &Tensor) -> Result<LayerGrad> {
    let (out_f, in_f) = (weight.shape()[0], weight.shape()[1]);
    let b = input.shape()[0];
    grad_output.check_shape("linear backward", &[b, out_f])?;
    let mut dw = Tensor::zeros(&[out_f, in_f]);
    let mut db = Tensor::zeros(&[out_f]);
    let mut dx = Tensor::zeros(&[b, in_f]);
    let x = input.data();
    let wts = weight.data();
    let go = grad_output.data();
    let dwd = dw.data_mut();
    let dxd = dx.data_mut();
    let dbd = db.data_mut();
    for bi in 0..b {
        let xrow = &x[bi * in_f..(bi + 1) * in_f];
        let grow = &go[bi * out_f..(bi + 1) * out_f];
        let dxrow = &mut dxd[bi * in_f..(bi + 1) * in_f];
        for (o, &g) in grow.iter().enumerate() {
            dbd[o] += g;
            let wrow = &wts[o * in_f..(o + 1) * in_f];
            let dwrow = &mut dwd[o * in_f..(o + 1) * in_f];
            for i in 0..in_f {
                dwrow[i] += g * xrow[i];
                dxrow[i] += g * wrow[i];
            }
        }
    }
    Ok(LayerGrad {
        weight: Some(dw),
        bias: Some(db),
        input: dx,
    })
}

fn maxpool2_forward(input: &Tensor) -> Result<Tensor> {
    if input.rank() != 4 || input.shape()[2] % 2 != 0 || input.shape()[3] % 2 != 0 {
        return Err(Error::ShapeMismatch {
            op: "maxpool2 forward",
            expected: "[B, C, even H, even W]".to_string(),
            actual: format!("{:?}", input.shape()),
        });
    }
    let [b, c, h, w] = [
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    ];
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[b, c, oh, ow]);
    let od = out.data_mut();
    let inp = input.data();
    for p in 0..b * c {
        let in_base = p * h * w;
        let out_base = p * oh * ow;
        for y in 0..oh {
            let r0 = in_base + 2 * y * w;
            let r1 = r0 + w;
            for x in 0..ow {
                let m = inp[r0 + 2 * x]
                    .max(inp[r0 + 2 * x + 1])
                    .max(inp[r1 + 2 * x])
                    .max(inp[r1 + 2 * x + 1]);
                od[out_base + y * ow + x] = m;
            }
        }
    }
    Ok(out)
}

fn maxpool2_backward(input: &Tensor, grad_output: &Tensor) -> Result<LayerGrad> {
    let [b, c, h, w] = [
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    ];
    let (oh, ow) = (h / 2, w / 2);
    grad_output.check_shape("maxpool2 backward", &[b, c, oh, ow])?;
    let mut dx = Tensor::zeros(input.shape());
    let dxd = dx.data_mut();
    let inp = input.data();
    let go = grad_output.data();
    for p in 0..b * c {
        let in_base = p * h * w;
        let out_base = p * oh * ow;
        for y in 0..oh {
            let r0 = in_base + 2 * y * w;
            let r1 = r0 + w;
            for x in 0..ow {
                // grad routes to the first max in scan order
                let idxs = [r0 + 2 * x, r0 + 2 * x + 1, r1 + 2 * x, r1 + 2 * x + 1];
                let mut best = idxs[0];
                for &i in &idxs[1..] {
                    if inp[i] > inp[best] {
                        best = i;
                    }
                }
                dxd[best] += go[out_base + y * ow + x];
            }
        }
    }
    Ok(LayerGrad {
        weight: None,
        bias: None,
        input: dx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_forward_clamps_negatives() {
        let input = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.5]).unwrap();
        let (out, _) = Layer::Relu.forward(&input).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 2.5]);
    }

    #[test]
    fn relu_backward_gates_on_input_sign() {
        let input = Tensor::from_vec(&[2], vec![-1.0, 2.0]).unwrap();
        let (_, ctx) = Layer::Relu.forward(&input).unwrap();
        let grad = Tensor::from_vec(&[2], vec![5.0, 7.0]).unwrap();
        let g = Layer::Relu.backward(&ctx, &grad).unwrap();
        assert_eq!(g.input.data(), &[0.0, 7.0]);
    }

    #[test]
    fn maxpool_takes_window_max() {
        let input = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 3.0, 2.0, 0.0]).unwrap();
        let (out, _) = Layer::MaxPool2.forward(&input).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data(), &[3.0]);
    }

    #[test]
    fn conv_all_ones_center_is_nine() {
        let layer = Layer::Conv2d {
            weight: Tensor::from_vec(&[1, 1, 3, 3], vec![1.0; 9]).unwrap(),
            bias: Tensor::zeros(&[1]),
        };
        let input = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let (out, _) = layer.forward(&input).unwrap();
        // padded 3x3 all-ones: corners see 4, edges 6, center 9
        assert_eq!(out.data()[4], 9.0);
        assert_eq!(out.data()[0], 4.0);
        assert_eq!(out.data()[1], 6.0);
    }

    #[test]
    fn linear_scalar_gradients() {
        let layer = Layer::Linear {
            weight: Tensor::from_vec(&[1, 1], vec![2.0]).unwrap(),
            bias: Tensor::zeros(&[1]),
        };
        let input = Tensor::from_vec(&[1, 1], vec![3.0]).unwrap();
        let (out, ctx) = layer.forward(&input).unwrap();
        assert_eq!(out.data(), &[6.0]);
        let grad = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
        let g = layer.backward(&ctx, &grad).unwrap();
        assert_eq!(g.weight.unwrap().data(), &[3.0]);
        assert_eq!(g.input.data(), &[2.0]);
    }

    #[test]
    fn conv_rejects_wrong_channel_count() {
        let layer = Layer::Conv2d {
            weight: Tensor::zeros(&[4, 2, 3, 3]),
            bias: Tensor::zeros(&[4]),
        };
        let input = Tensor::zeros(&[1, 3, 8, 8]);
        let err = layer.forward(&input).unwrap_err();
        assert!(err.to_string().contains("expected"));
    }

    #[test]
    fn backward_is_deterministic() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let layer = conv2d_init(2, 3, &mut rng);
        let input = Tensor::from_vec(
            &[1, 2, 4, 4],
            (0..32).map(|i| (i as f64 * 0.37).sin()).collect(),
        )
        .unwrap();
        let (out, ctx) = layer.forward(&input).unwrap();
        let grad = Tensor::from_vec(out.shape(), vec![0.5; out.len()]).unwrap();
        let a = layer.backward(&ctx, &grad).unwrap();
        let b = layer.backward(&ctx, &grad).unwrap();
        assert_eq!(a.input.data(), b.input.data());
        assert_eq!(a.weight.unwrap().data(), b.weight.unwrap().data());
    }
}
