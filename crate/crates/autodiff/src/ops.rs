//! Differentiable primitives.
//!
//! Each primitive is a `Tape` method that computes its value eagerly and
//! records whatever the backward rule needs. Operands with a leading batch
//! axis are supported wherever the per-sample contract is a vector or a
//! `channels × length` array: rows of the batch never interact.

use crate::gemm::gemm;
use crate::tape::{slot, GradMode, Node, Tape, Var};
use crate::tensor::Tensor;

pub(crate) enum Op {
    Leaf,
    Conv1d {
        input: usize,
        kernels: usize,
        bias: usize,
        batch: usize,
        in_channels: usize,
        out_channels: usize,
        width: usize,
        length: usize,
        /// im2col matrix, `(in_channels·width) × (batch·length)`.
        columns: Vec<f64>,
    },
    AvgPool1d {
        input: usize,
        rows: usize,
        length: usize,
    },
    Affine {
        input: usize,
        weights: usize,
        bias: usize,
        rows: usize,
        fan_in: usize,
        fan_out: usize,
    },
    Relu {
        input: usize,
    },
    Sigmoid {
        input: usize,
    },
    Tanh {
        input: usize,
    },
    Add {
        lhs: usize,
        rhs: usize,
    },
    Mul {
        lhs: usize,
        rhs: usize,
    },
    Scale {
        input: usize,
        factor: f64,
    },
    Sum {
        input: usize,
    },
    Concat {
        parts: Vec<(usize, usize)>,
        rows: usize,
    },
    Reshape {
        input: usize,
    },
    SliceRows {
        input: usize,
        offset: usize,
    },
    MseLoss {
        prediction: usize,
        target: Vec<f64>,
    },
    BatchNorm {
        input: usize,
        gamma: usize,
        beta: usize,
        rows: usize,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
        /// Inference mode uses fixed statistics, so the batch does not couple rows.
        fixed_stats: bool,
    },
}

/// Statistics of one training-mode batch normalization.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Population variance over the batch.
    pub variance: Vec<f64>,
}

impl Tape {
    /// One-dimensional cross-correlation with zero padding of `(k−1)/2` on
    /// both ends, so the output length equals the input length.
    ///
    /// `input` is `C_in × L` or `B × C_in × L`, `kernels` is
    /// `C_out × C_in × k` with odd `k`, and `bias` has `C_out` entries.
    pub fn conv1d(&mut self, input: Var, kernels: Var, bias: Var) -> Var {
        let x = self.value(input);
        let kern = self.value(kernels);
        let b = self.value(bias);
        let (batch, in_channels, length, batched) = match *x.shape() {
            [c, l] => (1, c, l, false),
            [n, c, l] => (n, c, l, true),
            ref s => panic!("conv1d input must be C×L or B×C×L, got {s:?}"),
        };
        let [out_channels, kin, width] = *kern.shape() else {
            panic!("conv1d kernels must be C_out×C_in×k, got {:?}", kern.shape());
        };
        assert_eq!(
            kin, in_channels,
            "conv1d kernels expect {kin} input channels, input has {in_channels}"
        );
        assert!(width % 2 == 1, "conv1d kernel width must be odd, got {width}");
        assert_eq!(b.len(), out_channels, "conv1d bias must have C_out entries");

        let pad = (width - 1) / 2;
        let positions = batch * length;
        let mut columns = vec![0.0; in_channels * width * positions];
        let xd = x.data();
        for c in 0..in_channels {
            for j in 0..width {
                let row = &mut columns[(c * width + j) * positions..][..positions];
                for n in 0..batch {
                    let src = &xd[(n * in_channels + c) * length..][..length];
                    let dst = &mut row[n * length..][..length];
                    // out position i reads input i + j − pad
                    let lo = pad.saturating_sub(j);
                    let hi = (length + pad).saturating_sub(j).min(length);
                    for i in lo..hi {
                        dst[i] = src[i + j - pad];
                    }
                }
            }
        }

        let mut out_mat = vec![0.0; out_channels * positions];
        gemm(
            out_channels,
            in_channels * width,
            positions,
            kern.data(),
            false,
            &columns,
            false,
            &mut out_mat,
            false,
        );
        let bd = b.data();
        let mut out = vec![0.0; batch * out_channels * length];
        for n in 0..batch {
            for co in 0..out_channels {
                let src = &out_mat[co * positions + n * length..][..length];
                let dst = &mut out[(n * out_channels + co) * length..][..length];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + bd[co];
                }
            }
        }
        let shape: Vec<usize> = if batched {
            vec![batch, out_channels, length]
        } else {
            vec![out_channels, length]
        };
        let requires = self.requires_grad(input) || self.requires_grad(kernels) || self.requires_grad(bias);
        self.push(
            Tensor::new(&shape, out),
            requires,
            Op::Conv1d {
                input: input.index(),
                kernels: kernels.index(),
                bias: bias.index(),
                batch,
                in_channels,
                out_channels,
                width,
                length,
                columns,
            },
        )
    }

    /// Average pooling with window 2 and stride 2 over the last axis. A
    /// trailing element of an odd-length axis is dropped.
    pub fn avgpool1d(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let length = x.last_dim();
        assert!(length >= 2, "avgpool1d needs length ≥ 2, got {length}");
        assert!(x.rank() >= 2, "avgpool1d input must be C×L or B×C×L");
        let rows = x.rows();
        let half = length / 2;
        let xd = x.data();
        let mut out = Vec::with_capacity(rows * half);
        for r in 0..rows {
            let row = &xd[r * length..][..length];
            for i in 0..half {
                out.push((row[2 * i] + row[2 * i + 1]) / 2.0);
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = half;
        let requires = self.requires_grad(input);
        self.push(
            Tensor::new(&shape, out),
            requires,
            Op::AvgPool1d {
                input: input.index(),
                rows,
                length,
            },
        )
    }

    /// `weights · input + bias` for an `n` vector, or row-wise for `B × n`.
    pub fn affine(&mut self, input: Var, weights: Var, bias: Var) -> Var {
        let x = self.value(input);
        let w = self.value(weights);
        let b = self.value(bias);
        let [fan_out, fan_in] = *w.shape() else {
            panic!("affine weights must be m×n, got {:?}", w.shape());
        };
        assert!(x.rank() <= 2, "affine input must be n or B×n, got {:?}", x.shape());
        assert_eq!(
            x.last_dim(),
            fan_in,
            "affine weights expect {fan_in} inputs, got {}",
            x.last_dim()
        );
        assert_eq!(b.len(), fan_out, "affine bias must have {fan_out} entries");
        let rows = x.rows();
        let mut out = vec![0.0; rows * fan_out];
        gemm(rows, fan_in, fan_out, x.data(), false, w.data(), true, &mut out, false);
        for row in out.chunks_mut(fan_out) {
            for (o, bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let shape: Vec<usize> = if x.rank() == 1 {
            vec![fan_out]
        } else {
            vec![rows, fan_out]
        };
        let requires = self.requires_grad(input) || self.requires_grad(weights) || self.requires_grad(bias);
        self.push(
            Tensor::new(&shape, out),
            requires,
            Op::Affine {
                input: input.index(),
                weights: weights.index(),
                bias: bias.index(),
                rows,
                fan_in,
                fan_out,
            },
        )
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|v| v.max(0.0));
        let requires = self.requires_grad(input);
        self.push(value, requires, Op::Relu { input: input.index() })
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let value = self.value(input).map(sigmoid);
        let requires = self.requires_grad(input);
        self.push(value, requires, Op::Sigmoid { input: input.index() })
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        let value = self.value(input).map(f64::tanh);
        let requires = self.requires_grad(input);
        self.push(value, requires, Op::Tanh { input: input.index() })
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Var {
        let value = self.zip_same_shape(lhs, rhs, "add", |a, b| a + b);
        let requires = self.requires_grad(lhs) || self.requires_grad(rhs);
        self.push(
            value,
            requires,
            Op::Add {
                lhs: lhs.index(),
                rhs: rhs.index(),
            },
        )
    }

    /// Elementwise product.
    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Var {
        let value = self.zip_same_shape(lhs, rhs, "mul", |a, b| a * b);
        let requires = self.requires_grad(lhs) || self.requires_grad(rhs);
        self.push(
            value,
            requires,
            Op::Mul {
                lhs: lhs.index(),
                rhs: rhs.index(),
            },
        )
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let value = self.value(input).map(|v| v * factor);
        let requires = self.requires_grad(input);
        self.push(
            value,
            requires,
            Op::Scale {
                input: input.index(),
                factor,
            },
        )
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).data().iter().sum();
        let requires = self.requires_grad(input);
        self.push(Tensor::scalar(total), requires, Op::Sum { input: input.index() })
    }

    /// Concatenates along the last axis. All parts share their leading axes.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat needs at least one part");
        let first = self.value(parts[0]);
        let lead = first.shape()[..first.rank() - 1].to_vec();
        let rows = first.rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            assert_eq!(
                &v.shape()[..v.rank() - 1],
                lead.as_slice(),
                "concat parts must share leading axes"
            );
            widths.push(v.last_dim());
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                out[r * total + offset..][..w].copy_from_slice(&src[r * w..][..w]);
            }
            offset += w;
        }
        let mut shape = lead;
        shape.push(total);
        let requires = parts.iter().any(|&p| self.requires_grad(p));
        let parts = parts.iter().zip(widths).map(|(p, w)| (p.index(), w)).collect();
        self.push(Tensor::new(&shape, out), requires, Op::Concat { parts, rows })
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Var {
        let value = self.value(input).clone().reshaped(shape);
        let requires = self.requires_grad(input);
        self.push(value, requires, Op::Reshape { input: input.index() })
    }

    /// Rows `offset..offset + count` of the leading axis.
    pub fn slice_rows(&mut self, input: Var, offset: usize, count: usize) -> Var {
        let x = self.value(input);
        let lead = x.shape()[0];
        assert!(
            count > 0 && offset + count <= lead,
            "slice_rows {offset}..{} out of range for {lead} rows",
            offset + count
        );
        let inner = x.len() / lead;
        let data = x.data()[offset * inner..(offset + count) * inner].to_vec();
        let mut shape = x.shape().to_vec();
        shape[0] = count;
        let requires = self.requires_grad(input);
        self.push(
            Tensor::new(&shape, data),
            requires,
            Op::SliceRows {
                input: input.index(),
                offset: offset * inner,
            },
        )
    }

    /// Mean of squared differences between `prediction` and `target`.
    pub fn mse_loss(&mut self, prediction: Var, target: &[f64]) -> Var {
        let p = self.value(prediction);
        assert!(!target.is_empty(), "mse_loss needs at least one target");
        assert_eq!(p.len(), target.len(), "mse_loss length mismatch");
        let n = target.len() as f64;
        let loss = p
            .data()
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        let requires = self.requires_grad(prediction);
        self.push(
            Tensor::scalar(loss),
            requires,
            Op::MseLoss {
                prediction: prediction.index(),
                target: target.to_vec(),
            },
        )
    }

    /// Training-mode batch normalization over the rows of a `B × n` input.
    ///
    /// Returns the normalized, scaled and shifted output together with the
    /// batch statistics so the caller can maintain running averages. A batch
    /// of one row normalizes to zero, kept finite by `eps`.
    pub fn batch_norm(&mut self, input: Var, gamma: Var, beta: Var, eps: f64) -> (Var, BatchStats) {
        let x = self.value(input);
        let [rows, width] = *x.shape() else {
            panic!("batch_norm input must be B×n, got {:?}", x.shape());
        };
        let xd = x.data();
        let mut mean = vec![0.0; width];
        for r in 0..rows {
            for (m, v) in mean.iter_mut().zip(&xd[r * width..][..width]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut variance = vec![0.0; width];
        for r in 0..rows {
            for j in 0..width {
                let d = xd[r * width + j] - mean[j];
                variance[j] += d * d;
            }
        }
        variance.iter_mut().for_each(|v| *v /= rows as f64);
        let var = self.normalize(input, gamma, beta, &mean, &variance, eps, false);
        (var, BatchStats { mean, variance })
    }

    /// Inference-mode batch normalization with fixed statistics.
    pub fn batch_norm_fixed(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        variance: &[f64],
        eps: f64,
    ) -> Var {
        self.normalize(input, gamma, beta, mean, variance, eps, true)
    }

    #[allow(clippy::too_many_arguments)]
    fn normalize(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        variance: &[f64],
        eps: f64,
        fixed_stats: bool,
    ) -> Var {
        let x = self.value(input);
        let width = x.last_dim();
        let rows = x.rows();
        assert_eq!(mean.len(), width, "batch norm statistics width mismatch");
        assert_eq!(variance.len(), width, "batch norm statistics width mismatch");
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        assert_eq!(g.len(), width, "batch norm scale width mismatch");
        assert_eq!(b.len(), width, "batch norm shift width mismatch");
        let inv_std: Vec<f64> = variance.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xd = x.data();
        let mut normalized = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            for j in 0..width {
                let k = r * width + j;
                normalized[k] = (xd[k] - mean[j]) * inv_std[j];
                out[k] = g[j] * normalized[k] + b[j];
            }
        }
        let shape = x.shape().to_vec();
        let requires = self.requires_grad(input) || self.requires_grad(gamma) || self.requires_grad(beta);
        self.push(
            Tensor::new(&shape, out),
            requires,
            Op::BatchNorm {
                input: input.index(),
                gamma: gamma.index(),
                beta: beta.index(),
                rows,
                normalized,
                inv_std,
                fixed_stats,
            },
        )
    }

    fn zip_same_shape(&self, lhs: Var, rhs: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let a = self.value(lhs);
        let b = self.value(rhs);
        assert_eq!(
            a.shape(),
            b.shape(),
            "{name} operands must have the same shape"
        );
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape(), data)
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Accumulates the contributions of one node into the gradients of its inputs.
pub(crate) fn backward(
    tape: &Tape,
    node: &Node,
    upstream: &[f64],
    grads: &mut [Option<Vec<f64>>],
    mode: GradMode,
) {
    let nodes = &tape.nodes;
    let needs = |i: usize| nodes[i].requires_grad;
    let len = |i: usize| nodes[i].value.len();
    match &node.op {
        Op::Leaf => {}
        Op::Conv1d {
            input,
            kernels,
            bias,
            batch,
            in_channels,
            out_channels,
            width,
            length,
            columns,
        } => {
            let (batch, cin, cout, width, length) = (*batch, *in_channels, *out_channels, *width, *length);
            let positions = batch * length;
            let mut g_mat = vec![0.0; cout * positions];
            for n in 0..batch {
                for co in 0..cout {
                    let src = &upstream[(n * cout + co) * length..][..length];
                    g_mat[co * positions + n * length..][..length].copy_from_slice(src);
                }
            }
            if needs(*kernels) {
                let gk = slot(grads, *kernels, len(*kernels));
                gemm(cout, positions, cin * width, &g_mat, false, columns, true, gk, true);
            }
            if needs(*bias) {
                let gb = slot(grads, *bias, cout);
                for co in 0..cout {
                    gb[co] += g_mat[co * positions..][..positions].iter().sum::<f64>();
                }
            }
            if needs(*input) {
                let kern = nodes[*kernels].value.data();
                let mut g_cols = vec![0.0; cin * width * positions];
                gemm(cin * width, cout, positions, kern, true, &g_mat, false, &mut g_cols, false);
                let pad = (width - 1) / 2;
                let gx = slot(grads, *input, len(*input));
                for c in 0..cin {
                    for j in 0..width {
                        let row = &g_cols[(c * width + j) * positions..][..positions];
                        for n in 0..batch {
                            let src = &row[n * length..][..length];
                            let dst = &mut gx[(n * cin + c) * length..][..length];
                            let lo = pad.saturating_sub(j);
                            let hi = (length + pad).saturating_sub(j).min(length);
                            for i in lo..hi {
                                dst[i + j - pad] += src[i];
                            }
                        }
                    }
                }
            }
        }
        Op::AvgPool1d { input, rows, length } => {
            let half = length / 2;
            let gx = slot(grads, *input, len(*input));
            for r in 0..*rows {
                for i in 0..half {
                    let g = upstream[r * half + i] / 2.0;
                    gx[r * length + 2 * i] += g;
                    gx[r * length + 2 * i + 1] += g;
                }
            }
        }
        Op::Affine {
            input,
            weights,
            bias,
            rows,
            fan_in,
            fan_out,
        } => {
            let (rows, fan_in, fan_out) = (*rows, *fan_in, *fan_out);
            if needs(*weights) {
                let x = nodes[*input].value.data();
                let gw = slot(grads, *weights, fan_out * fan_in);
                gemm(fan_out, rows, fan_in, upstream, true, x, false, gw, true);
            }
            if needs(*bias) {
                let gb = slot(grads, *bias, fan_out);
                for row in upstream.chunks(fan_out) {
                    for (g, u) in gb.iter_mut().zip(row) {
                        *g += u;
                    }
                }
            }
            if needs(*input) {
                let w = nodes[*weights].value.data();
                let gx = slot(grads, *input, rows * fan_in);
                gemm(rows, fan_out, fan_in, upstream, false, w, false, gx, true);
            }
        }
        Op::Relu { input } => {
            let x = nodes[*input].value.data();
            let gx = slot(grads, *input, x.len());
            match mode {
                GradMode::Standard => {
                    for ((g, &u), &v) in gx.iter_mut().zip(upstream).zip(x) {
                        if v > 0.0 {
                            *g += u;
                        }
                    }
                }
                GradMode::Guided => {
                    for ((g, &u), &v) in gx.iter_mut().zip(upstream).zip(x) {
                        if v > 0.0 && u > 0.0 {
                            *g += u;
                        }
                    }
                }
            }
        }
        Op::Sigmoid { input } => {
            let y = node.value.data();
            let gx = slot(grads, *input, y.len());
            for ((g, &u), &s) in gx.iter_mut().zip(upstream).zip(y) {
                *g += u * s * (1.0 - s);
            }
        }
        Op::Tanh { input } => {
            let y = node.value.data();
            let gx = slot(grads, *input, y.len());
            for ((g, &u), &t) in gx.iter_mut().zip(upstream).zip(y) {
                *g += u * (1.0 - t * t);
            }
        }
        Op::Add { lhs, rhs } => {
            for &side in [lhs, rhs] {
                if needs(side) {
                    let g = slot(grads, side, upstream.len());
                    for (a, u) in g.iter_mut().zip(upstream) {
                        *a += u;
                    }
                }
            }
        }
        Op::Mul { lhs, rhs } => {
            for (side, other) in [(*lhs, *rhs), (*rhs, *lhs)] {
                if needs(side) {
                    let o = nodes[other].value.data();
                    let g = slot(grads, side, upstream.len());
                    for ((a, u), b) in g.iter_mut().zip(upstream).zip(o) {
                        *a += u * b;
                    }
                }
            }
        }
        Op::Scale { input, factor } => {
            let g = slot(grads, *input, upstream.len());
            for (a, u) in g.iter_mut().zip(upstream) {
                *a += u * factor;
            }
        }
        Op::Sum { input } => {
            let u = upstream[0];
            let g = slot(grads, *input, len(*input));
            g.iter_mut().for_each(|a| *a += u);
        }
        Op::Concat { parts, rows } => {
            let total: usize = parts.iter().map(|p| p.1).sum();
            let mut offset = 0;
            for &(part, w) in parts {
                if needs(part) {
                    let g = slot(grads, part, rows * w);
                    for r in 0..*rows {
                        let src = &upstream[r * total + offset..][..w];
                        for (a, u) in g[r * w..][..w].iter_mut().zip(src) {
                            *a += u;
                        }
                    }
                }
                offset += w;
            }
        }
        Op::Reshape { input } => {
            let g = slot(grads, *input, upstream.len());
            for (a, u) in g.iter_mut().zip(upstream) {
                *a += u;
            }
        }
        Op::SliceRows { input, offset } => {
            let g = slot(grads, *input, len(*input));
            for (a, u) in g[*offset..][..upstream.len()].iter_mut().zip(upstream) {
                *a += u;
            }
        }
        Op::MseLoss { prediction, target } => {
            let p = nodes[*prediction].value.data();
            let scale = 2.0 * upstream[0] / target.len() as f64;
            let g = slot(grads, *prediction, p.len());
            for ((a, pv), t) in g.iter_mut().zip(p).zip(target) {
                *a += scale * (pv - t);
            }
        }
        Op::BatchNorm {
            input,
            gamma,
            beta,
            rows,
            normalized,
            inv_std,
            fixed_stats,
        } => {
            let rows = *rows;
            let width = inv_std.len();
            let gamma_v = nodes[*gamma].value.data();
            let mut sum_g = vec![0.0; width];
            let mut sum_g_xhat = vec![0.0; width];
            for r in 0..rows {
                for j in 0..width {
                    let k = r * width + j;
                    sum_g[j] += upstream[k];
                    sum_g_xhat[j] += upstream[k] * normalized[k];
                }
            }
            if needs(*gamma) {
                let g = slot(grads, *gamma, width);
                for (a, s) in g.iter_mut().zip(&sum_g_xhat) {
                    *a += s;
                }
            }
            if needs(*beta) {
                let g = slot(grads, *beta, width);
                for (a, s) in g.iter_mut().zip(&sum_g) {
                    *a += s;
                }
            }
            if needs(*input) {
                let g = slot(grads, *input, rows * width);
                let n = rows as f64;
                for r in 0..rows {
                    for j in 0..width {
                        let k = r * width + j;
                        let scale = gamma_v[j] * inv_std[j];
                        g[k] += if *fixed_stats {
                            scale * upstream[k]
                        } else {
                            scale * (upstream[k] - sum_g[j] / n - normalized[k] * sum_g_xhat[j] / n)
                        };
                    }
                }
            }
        }
    }
}
