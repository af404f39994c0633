//! Small reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation in creation order, so the node list is
//! already topologically sorted and [`Graph::backward`] walks it in reverse.
//! The op set is exactly what the toy backbones need: dense and convolutional
//! layers, a recurrent cell, self-attention, causal temporal convolution, and
//! the classification and segmentation losses.

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor shape {shape:?} does not match {} values",
            data.len()
        );
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(vec![1], vec![v])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows and columns of a matrix-shaped tensor.
    pub fn dims2(&self) -> (usize, usize) {
        assert_eq!(self.shape.len(), 2, "expected a matrix, got {:?}", self.shape);
        (self.shape[0], self.shape[1])
    }

    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        assert_eq!(self.shape.len(), 4, "expected [N,H,W,C], got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    Upsample2x(Var),
    ConcatLast(Var, Var),
    MeanSpatial(Var),
    MeanRows(Var),
    Row(Var, usize),
    StackRows(Vec<Var>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SoftmaxRows(Var),
    CrossEntropyRows {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
    },
    PixelCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        ignore: usize,
    },
    SoftDice {
        logits: Var,
        targets: Vec<usize>,
        ignore: usize,
    },
    L2NormalizeRows(Var),
    Norm(Var),
    Sum(Var),
    CausalConv1d {
        x: Var,
        w: Var,
        b: Var,
        dilation: usize,
    },
    Reshape(Var),
}

/// Smoothing constant of the soft Dice loss.
const DICE_SMOOTH: f64 = 1.0;
const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Graph {
    values: Vec<Tensor>,
    ops: Vec<Op>,
}

pub struct Grads(Vec<Option<Vec<f64>>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.0[v.0].as_deref()
    }

    /// Gradient of `v`, zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }
}

fn accumulate<'a>(grads: &'a mut [Option<Vec<f64>>], v: Var, len: usize) -> &'a mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - k) / stride + 1
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(value.data.iter().all(|v| !v.is_nan()), "NaN produced by {op:?}");
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "not a scalar: {:?}", t.shape);
        t.data[0]
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        assert_eq!(ta.shape, tb.shape, "elementwise shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape.clone(), data)
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = &self.values[a.0];
        Tensor::new(t.shape.clone(), t.data.iter().map(|&x| f(x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.binary(a, b, |x, y| x + y);
        self.push(t, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = self.binary(a, b, |x, y| x - y);
        self.push(t, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.binary(a, b, |x, y| x * y);
        self.push(t, Op::Mul(a, b))
    }

    /// Adds a vector along the last dimension.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (ta, tb) = (&self.values[a.0], &self.values[bias.0]);
        let m = tb.len();
        assert_eq!(*ta.shape.last().unwrap(), m, "bias length mismatch");
        let mut data = ta.data.clone();
        for row in data.chunks_mut(m) {
            for (v, b) in row.iter_mut().zip(&tb.data) {
                *v += b;
            }
        }
        let t = Tensor::new(ta.shape.clone(), data);
        self.push(t, Op::AddBias(a, bias))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.unary(a, |x| x * s);
        self.push(t, Op::Scale(a, s))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.values[a.0].dims2();
        let (k2, m) = self.values[b.0].dims2();
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let (da, db) = (&self.values[a.0].data, &self.values[b.0].data);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let av = da[i * k + p];
                if av == 0.0 {
                    continue;
                }
                for (o, bv) in orow.iter_mut().zip(&db[p * m..(p + 1) * m]) {
                    *o += av * bv;
                }
            }
        }
        self.push(Tensor::new(vec![n, m], out), Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (n, m) = self.values[a.0].dims2();
        let d = &self.values[a.0].data;
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = d[i * m + j];
            }
        }
        self.push(Tensor::new(vec![m, n], out), Op::Transpose(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| x.max(0.0));
        self.push(t, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.unary(a, f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| 1.0 / (1.0 + (-x).exp()));
        self.push(t, Op::Sigmoid(a))
    }

    /// 2-D convolution. `x` is `[N,H,W,Cin]`, `w` is `[K,K,Cin,Cout]`, `b` is `[Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let (n, h, wd, cin) = self.values[x.0].dims4();
        let ws = &self.values[w.0].shape;
        assert_eq!(ws.len(), 4, "conv weight must be [K,K,Cin,Cout]");
        let (kh, kw, wcin, cout) = (ws[0], ws[1], ws[2], ws[3]);
        assert_eq!(cin, wcin, "conv input channel mismatch");
        let (ho, wo) = (conv_out(h, kh, stride, pad), conv_out(wd, kw, stride, pad));
        let (xd, wdata, bd) = (
            &self.values[x.0].data,
            &self.values[w.0].data,
            &self.values[b.0].data,
        );
        let mut out = vec![0.0; n * ho * wo * cout];
        for img in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let base = ((img * ho + oy) * wo + ox) * cout;
                    let orow = &mut out[base..base + cout];
                    orow.copy_from_slice(bd);
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            let xbase = ((img * h + iy as usize) * wd + ix as usize) * cin;
                            let wbase = (ky * kw + kx) * cin * cout;
                            for ci in 0..cin {
                                let xv = xd[xbase + ci];
                                let wrow = &wdata[wbase + ci * cout..wbase + (ci + 1) * cout];
                                for (o, wv) in orow.iter_mut().zip(wrow) {
                                    *o += xv * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
        self.push(
            Tensor::new(vec![n, ho, wo, cout], out),
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
        )
    }

    /// Nearest-neighbour 2x upsampling of `[N,H,W,C]`.
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let (n, h, w, c) = self.values[x.0].dims4();
        let xd = &self.values[x.0].data;
        let mut out = vec![0.0; n * 4 * h * w * c];
        for img in 0..n {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    let src = ((img * h + y / 2) * w + xx / 2) * c;
                    let dst = ((img * 2 * h + y) * 2 * w + xx) * c;
                    out[dst..dst + c].copy_from_slice(&xd[src..src + c]);
                }
            }
        }
        self.push(Tensor::new(vec![n, 2 * h, 2 * w, c], out), Op::Upsample2x(x))
    }

    /// Concatenation along the last dimension; leading dimensions must agree.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        let (ca, cb) = (*ta.shape.last().unwrap(), *tb.shape.last().unwrap());
        assert_eq!(
            ta.shape[..ta.shape.len() - 1],
            tb.shape[..tb.shape.len() - 1],
            "concat leading dims mismatch"
        );
        let rows = ta.len() / ca;
        let mut out = Vec::with_capacity(ta.len() + tb.len());
        for r in 0..rows {
            out.extend_from_slice(&ta.data[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&tb.data[r * cb..(r + 1) * cb]);
        }
        let mut shape = ta.shape.clone();
        *shape.last_mut().unwrap() = ca + cb;
        self.push(Tensor::new(shape, out), Op::ConcatLast(a, b))
    }

    /// Global average pool `[N,H,W,C] -> [N,C]`.
    pub fn mean_spatial(&mut self, x: Var) -> Var {
        let (n, h, w, c) = self.values[x.0].dims4();
        let xd = &self.values[x.0].data;
        let mut out = vec![0.0; n * c];
        let inv = 1.0 / (h * w) as f64;
        for img in 0..n {
            for px in 0..h * w {
                let base = (img * h * w + px) * c;
                for ch in 0..c {
                    out[img * c + ch] += xd[base + ch] * inv;
                }
            }
        }
        self.push(Tensor::new(vec![n, c], out), Op::MeanSpatial(x))
    }

    /// Column means of a matrix, `[n,m] -> [1,m]`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (n, m) = self.values[x.0].dims2();
        let xd = &self.values[x.0].data;
        let mut out = vec![0.0; m];
        for row in xd.chunks(m) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v / n as f64;
            }
        }
        self.push(Tensor::new(vec![1, m], out), Op::MeanRows(x))
    }

    pub fn row(&mut self, x: Var, i: usize) -> Var {
        let (n, m) = self.values[x.0].dims2();
        assert!(i < n, "row {i} out of range for {n} rows");
        let data = self.values[x.0].data[i * m..(i + 1) * m].to_vec();
        self.push(Tensor::new(vec![1, m], data), Op::Row(x, i))
    }

    /// Stacks `[1,m]` rows into `[n,m]`.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty());
        let m = self.values[rows[0].0].len();
        let mut data = Vec::with_capacity(m * rows.len());
        for r in rows {
            assert_eq!(self.values[r.0].len(), m, "stack_rows width mismatch");
            data.extend_from_slice(&self.values[r.0].data);
        }
        self.push(
            Tensor::new(vec![rows.len(), m], data),
            Op::StackRows(rows.to_vec()),
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let (n, m) = self.values[x.0].dims2();
        assert!(start < end && end <= m);
        let xd = &self.values[x.0].data;
        let mut data = Vec::with_capacity(n * (end - start));
        for r in 0..n {
            data.extend_from_slice(&xd[r * m + start..r * m + end]);
        }
        self.push(Tensor::new(vec![n, end - start], data), Op::SliceCols(x, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let n = self.values[parts[0].0].dims2().0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                let (r, c) = self.values[p.0].dims2();
                assert_eq!(r, n, "concat_cols row mismatch");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.values[p.0].data[r * w..(r + 1) * w]);
            }
        }
        self.push(
            Tensor::new(vec![n, total], data),
            Op::ConcatCols(parts.to_vec()),
        )
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let t = &self.values[x.0];
        let m = *t.shape.last().unwrap();
        let mut data = t.data.clone();
        for row in data.chunks_mut(m) {
            softmax_in_place(row);
        }
        let t = Tensor::new(t.shape.clone(), data);
        self.push(t, Op::SoftmaxRows(x))
    }

    /// `sum_i weights[i] * -log softmax(logits_i)[targets[i]]` over the rows of `logits`.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Var {
        let (n, m) = self.values[logits.0].dims2();
        assert_eq!(targets.len(), n);
        assert_eq!(weights.len(), n);
        let mut loss = 0.0;
        for (i, row) in self.values[logits.0].data.chunks(m).enumerate() {
            assert!(targets[i] < m, "target out of range");
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += weights[i] * (lse - row[targets[i]]);
        }
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropyRows {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
        )
    }

    /// Mean per-pixel cross-entropy of `[N,H,W,C]` logits, skipping `ignore` targets.
    /// Zero when every pixel is ignored.
    pub fn pixel_cross_entropy(&mut self, logits: Var, targets: &[usize], ignore: usize) -> Var {
        let t = &self.values[logits.0];
        let c = *t.shape.last().unwrap();
        assert_eq!(t.len() / c, targets.len(), "pixel target count mismatch");
        let mut loss = 0.0;
        let mut count = 0usize;
        for (row, &y) in t.data.chunks(c).zip(targets) {
            if y == ignore {
                continue;
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
            count += 1;
        }
        let loss = if count > 0 { loss / count as f64 } else { 0.0 };
        self.push(
            Tensor::scalar(loss),
            Op::PixelCrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore,
            },
        )
    }

    /// Soft Dice loss `1 - mean_c dice_c` over foreground classes `1..C`,
    /// with probabilities from a per-pixel softmax of `logits`.
    pub fn soft_dice(&mut self, logits: Var, targets: &[usize], ignore: usize) -> Var {
        let (probs, c) = self.pixel_probs(logits);
        assert!(c >= 2, "soft dice needs a foreground class");
        let (inter, psum, gsum) = dice_sums(&probs, c, targets, ignore);
        let mut dice = 0.0;
        for k in 1..c {
            dice += (2.0 * inter[k] + DICE_SMOOTH) / (psum[k] + gsum[k] + DICE_SMOOTH);
        }
        let loss = 1.0 - dice / (c - 1) as f64;
        self.push(
            Tensor::scalar(loss),
            Op::SoftDice {
                logits,
                targets: targets.to_vec(),
                ignore,
            },
        )
    }

    fn pixel_probs(&self, logits: Var) -> (Vec<f64>, usize) {
        let t = &self.values[logits.0];
        let c = *t.shape.last().unwrap();
        let mut probs = t.data.clone();
        for row in probs.chunks_mut(c) {
            softmax_in_place(row);
        }
        (probs, c)
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let t = &self.values[x.0];
        let m = *t.shape.last().unwrap();
        let mut data = t.data.clone();
        for row in data.chunks_mut(m) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        let t = Tensor::new(t.shape.clone(), data);
        self.push(t, Op::L2NormalizeRows(x))
    }

    /// Euclidean norm of all entries; subgradient 0 at the origin.
    pub fn norm(&mut self, x: Var) -> Var {
        let n = self.values[x.0].data.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.push(Tensor::scalar(n), Op::Norm(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.values[x.0].data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Causal dilated convolution over time. `x` is `[T,Din]`, `w` is `[K,Din,Dout]`;
    /// output row `t` reads inputs `t, t-d, ..., t-(K-1)d` only.
    pub fn causal_conv1d(&mut self, x: Var, w: Var, b: Var, dilation: usize) -> Var {
        let (t_len, din) = self.values[x.0].dims2();
        let ws = &self.values[w.0].shape;
        assert_eq!(ws.len(), 3);
        let (k, wdin, dout) = (ws[0], ws[1], ws[2]);
        assert_eq!(din, wdin, "causal conv input width mismatch");
        let (xd, wdata, bd) = (
            &self.values[x.0].data,
            &self.values[w.0].data,
            &self.values[b.0].data,
        );
        let mut out = vec![0.0; t_len * dout];
        for t in 0..t_len {
            let orow = &mut out[t * dout..(t + 1) * dout];
            orow.copy_from_slice(bd);
            for j in 0..k {
                let Some(src) = t.checked_sub(j * dilation) else {
                    break;
                };
                for ci in 0..din {
                    let xv = xd[src * din + ci];
                    let wrow = &wdata[(j * din + ci) * dout..(j * din + ci + 1) * dout];
                    for (o, wv) in orow.iter_mut().zip(wrow) {
                        *o += xv * wv;
                    }
                }
            }
        }
        self.push(
            Tensor::new(vec![t_len, dout], out),
            Op::CausalConv1d { x, w, b, dilation },
        )
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Var {
        let t = Tensor::new(shape, self.values[x.0].data.clone());
        self.push(t, Op::Reshape(x))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.values[loss.0].len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.values.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads(grads)
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &self.values[i];
        let val = |v: Var| &self.values[v.0];
        match &self.ops[i] {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for (d, gv) in accumulate(grads, *a, g.len()).iter_mut().zip(g) {
                    *d += gv;
                }
                for (d, gv) in accumulate(grads, *b, g.len()).iter_mut().zip(g) {
                    *d += gv;
                }
            }
            Op::Sub(a, b) => {
                for (d, gv) in accumulate(grads, *a, g.len()).iter_mut().zip(g) {
                    *d += gv;
                }
                for (d, gv) in accumulate(grads, *b, g.len()).iter_mut().zip(g) {
                    *d -= gv;
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&val(*a).data, &val(*b).data);
                let ga = accumulate(grads, *a, g.len());
                for ((d, gv), y) in ga.iter_mut().zip(g).zip(vb) {
                    *d += gv * y;
                }
                let gb = accumulate(grads, *b, g.len());
                for ((d, gv), x) in gb.iter_mut().zip(g).zip(va) {
                    *d += gv * x;
                }
            }
            Op::AddBias(a, bias) => {
                for (d, gv) in accumulate(grads, *a, g.len()).iter_mut().zip(g) {
                    *d += gv;
                }
                let m = val(*bias).len();
                let gb = accumulate(grads, *bias, m);
                for row in g.chunks(m) {
                    for (d, gv) in gb.iter_mut().zip(row) {
                        *d += gv;
                    }
                }
            }
            Op::Scale(a, s) => {
                for (d, gv) in accumulate(grads, *a, g.len()).iter_mut().zip(g) {
                    *d += gv * s;
                }
            }
            Op::MatMul(a, b) => {
                let (n, k) = val(*a).dims2();
                let m = val(*b).dims2().1;
                let (da, db) = (&val(*a).data, &val(*b).data);
                // dA = G B^T
                let ga = accumulate(grads, *a, n * k);
                for r in 0..n {
                    let grow = &g[r * m..(r + 1) * m];
                    for p in 0..k {
                        let brow = &db[p * m..(p + 1) * m];
                        ga[r * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
                // dB = A^T G
                let gb = accumulate(grads, *b, k * m);
                for r in 0..n {
                    let grow = &g[r * m..(r + 1) * m];
                    for p in 0..k {
                        let av = da[r * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        for (d, gv) in gb[p * m..(p + 1) * m].iter_mut().zip(grow) {
                            *d += av * gv;
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let (n, m) = val(*a).dims2();
                let ga = accumulate(grads, *a, n * m);
                for i in 0..n {
                    for j in 0..m {
                        ga[i * m + j] += g[j * n + i];
                    }
                }
            }
            Op::Relu(a) => {
                let ga = accumulate(grads, *a, g.len());
                for ((d, gv), y) in ga.iter_mut().zip(g).zip(&out.data) {
                    if *y > 0.0 {
                        *d += gv;
                    }
                }
            }
            Op::Tanh(a) => {
                let ga = accumulate(grads, *a, g.len());
                for ((d, gv), y) in ga.iter_mut().zip(g).zip(&out.data) {
                    *d += gv * (1.0 - y * y);
                }
            }
            Op::Sigmoid(a) => {
                let ga = accumulate(grads, *a, g.len());
                for ((d, gv), y) in ga.iter_mut().zip(g).zip(&out.data) {
                    *d += gv * y * (1.0 - y);
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let (n, h, wd, cin) = val(*x).dims4();
                let ws = &val(*w).shape;
                let (kh, kw, cout) = (ws[0], ws[1], ws[3]);
                let (_, ho, wo, _) = out.dims4();
                let (xd, wdata) = (&val(*x).data, &val(*w).data);
                let mut gx = vec![0.0; xd.len()];
                let mut gw = vec![0.0; wdata.len()];
                let mut gb = vec![0.0; cout];
                for img in 0..n {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let base = ((img * ho + oy) * wo + ox) * cout;
                            let grow = &g[base..base + cout];
                            for (d, gv) in gb.iter_mut().zip(grow) {
                                *d += gv;
                            }
                            for ky in 0..kh {
                                let iy = (oy * stride + ky) as isize - *pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * stride + kx) as isize - *pad as isize;
                                    if ix < 0 || ix >= wd as isize {
                                        continue;
                                    }
                                    let xbase = ((img * h + iy as usize) * wd + ix as usize) * cin;
                                    let wbase = (ky * kw + kx) * cin * cout;
                                    for ci in 0..cin {
                                        let xv = xd[xbase + ci];
                                        let woff = wbase + ci * cout;
                                        let wrow = &wdata[woff..woff + cout];
                                        let mut acc = 0.0;
                                        for (wv, gv) in wrow.iter().zip(grow) {
                                            acc += wv * gv;
                                        }
                                        gx[xbase + ci] += acc;
                                        for (d, gv) in gw[woff..woff + cout].iter_mut().zip(grow) {
                                            *d += xv * gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                add_into(accumulate(grads, *x, gx.len()), &gx);
                add_into(accumulate(grads, *w, gw.len()), &gw);
                add_into(accumulate(grads, *b, cout), &gb);
            }
            Op::Upsample2x(x) => {
                let (n, h, w, c) = val(*x).dims4();
                let gx = accumulate(grads, *x, n * h * w * c);
                for img in 0..n {
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            let src = ((img * h + y / 2) * w + xx / 2) * c;
                            let dst = ((img * 2 * h + y) * 2 * w + xx) * c;
                            for ch in 0..c {
                                gx[src + ch] += g[dst + ch];
                            }
                        }
                    }
                }
            }
            Op::ConcatLast(a, b) => {
                let ca = *val(*a).shape.last().unwrap();
                let cb = *val(*b).shape.last().unwrap();
                let rows = val(*a).len() / ca;
                {
                    let ga = accumulate(grads, *a, rows * ca);
                    for r in 0..rows {
                        add_into(&mut ga[r * ca..(r + 1) * ca], &g[r * (ca + cb)..r * (ca + cb) + ca]);
                    }
                }
                let gb = accumulate(grads, *b, rows * cb);
                for r in 0..rows {
                    add_into(
                        &mut gb[r * cb..(r + 1) * cb],
                        &g[r * (ca + cb) + ca..(r + 1) * (ca + cb)],
                    );
                }
            }
            Op::MeanSpatial(x) => {
                let (n, h, w, c) = val(*x).dims4();
                let inv = 1.0 / (h * w) as f64;
                let gx = accumulate(grads, *x, n * h * w * c);
                for img in 0..n {
                    for px in 0..h * w {
                        let base = (img * h * w + px) * c;
                        for ch in 0..c {
                            gx[base + ch] += g[img * c + ch] * inv;
                        }
                    }
                }
            }
            Op::MeanRows(x) => {
                let (n, m) = val(*x).dims2();
                let gx = accumulate(grads, *x, n * m);
                for row in gx.chunks_mut(m) {
                    for (d, gv) in row.iter_mut().zip(g) {
                        *d += gv / n as f64;
                    }
                }
            }
            Op::Row(x, r) => {
                let (n, m) = val(*x).dims2();
                let gx = accumulate(grads, *x, n * m);
                add_into(&mut gx[r * m..(r + 1) * m], g);
            }
            Op::StackRows(rows) => {
                let m = g.len() / rows.len();
                for (k, r) in rows.iter().enumerate() {
                    add_into(accumulate(grads, *r, m), &g[k * m..(k + 1) * m]);
                }
            }
            Op::SliceCols(x, start) => {
                let (n, m) = val(*x).dims2();
                let w = out.dims2().1;
                let gx = accumulate(grads, *x, n * m);
                for r in 0..n {
                    add_into(&mut gx[r * m + start..r * m + start + w], &g[r * w..(r + 1) * w]);
                }
            }
            Op::ConcatCols(parts) => {
                let (n, total) = out.dims2();
                let mut offset = 0;
                for p in parts {
                    let w = val(*p).dims2().1;
                    let gp = accumulate(grads, *p, n * w);
                    for r in 0..n {
                        add_into(
                            &mut gp[r * w..(r + 1) * w],
                            &g[r * total + offset..r * total + offset + w],
                        );
                    }
                    offset += w;
                }
            }
            Op::SoftmaxRows(x) => {
                let m = *out.shape.last().unwrap();
                let gx = accumulate(grads, *x, g.len());
                for ((drow, grow), yrow) in gx.chunks_mut(m).zip(g.chunks(m)).zip(out.data.chunks(m)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for ((d, gv), y) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d += y * (gv - dot);
                    }
                }
            }
            Op::CrossEntropyRows {
                logits,
                targets,
                weights,
            } => {
                let m = val(*logits).dims2().1;
                let mut probs = val(*logits).data.clone();
                let gl = accumulate(grads, *logits, probs.len());
                for (r, prow) in probs.chunks_mut(m).enumerate() {
                    softmax_in_place(prow);
                    let scale = g[0] * weights[r];
                    if scale == 0.0 {
                        continue;
                    }
                    prow[targets[r]] -= 1.0;
                    for (d, p) in gl[r * m..(r + 1) * m].iter_mut().zip(prow.iter()) {
                        *d += scale * p;
                    }
                }
            }
            Op::PixelCrossEntropy {
                logits,
                targets,
                ignore,
            } => {
                let count = targets.iter().filter(|&&t| t != *ignore).count();
                if count == 0 {
                    return;
                }
                let (mut probs, c) = self.pixel_probs(*logits);
                let scale = g[0] / count as f64;
                let gl = accumulate(grads, *logits, probs.len());
                for (px, prow) in probs.chunks_mut(c).enumerate() {
                    let y = targets[px];
                    if y == *ignore {
                        continue;
                    }
                    prow[y] -= 1.0;
                    for (d, p) in gl[px * c..(px + 1) * c].iter_mut().zip(prow.iter()) {
                        *d += scale * p;
                    }
                }
            }
            Op::SoftDice {
                logits,
                targets,
                ignore,
            } => {
                let (probs, c) = self.pixel_probs(*logits);
                let (inter, psum, gsum) = dice_sums(&probs, c, targets, *ignore);
                // d loss / d p[px, k] for foreground k.
                let mut dp_coef = vec![(0.0, 0.0); c];
                for k in 1..c {
                    let den = psum[k] + gsum[k] + DICE_SMOOTH;
                    let num = 2.0 * inter[k] + DICE_SMOOTH;
                    // d(num/den)/dp = (2 g den - num) / den^2 ; loss = 1 - mean
                    let s = -g[0] / (c - 1) as f64;
                    dp_coef[k] = (s * 2.0 / den, -s * num / (den * den));
                }
                let gl = accumulate(grads, *logits, probs.len());
                let mut dp = vec![0.0; c];
                for (px, prow) in probs.chunks(c).enumerate() {
                    let y = targets[px];
                    if y == *ignore {
                        continue;
                    }
                    for k in 0..c {
                        dp[k] = if k == 0 {
                            0.0
                        } else {
                            let gt = if y == k { 1.0 } else { 0.0 };
                            dp_coef[k].0 * gt + dp_coef[k].1
                        };
                    }
                    let dot: f64 = dp.iter().zip(prow).map(|(a, b)| a * b).sum();
                    for k in 0..c {
                        gl[px * c + k] += prow[k] * (dp[k] - dot);
                    }
                }
            }
            Op::L2NormalizeRows(x) => {
                let m = *out.shape.last().unwrap();
                let xd = &val(*x).data;
                let gx = accumulate(grads, *x, g.len());
                for ((drow, grow), (xrow, yrow)) in gx
                    .chunks_mut(m)
                    .zip(g.chunks(m))
                    .zip(xd.chunks(m).zip(out.data.chunks(m)))
                {
                    let norm = xrow.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for ((d, gv), y) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d += (gv - y * dot) / norm;
                    }
                }
            }
            Op::Norm(x) => {
                let n = out.data[0];
                if n == 0.0 {
                    return;
                }
                let xd = &val(*x).data;
                let gx = accumulate(grads, *x, xd.len());
                for (d, v) in gx.iter_mut().zip(xd) {
                    *d += g[0] * v / n;
                }
            }
            Op::Sum(x) => {
                let len = val(*x).len();
                for d in accumulate(grads, *x, len).iter_mut() {
                    *d += g[0];
                }
            }
            Op::CausalConv1d { x, w, b, dilation } => {
                let (t_len, din) = val(*x).dims2();
                let ws = &val(*w).shape;
                let (k, dout) = (ws[0], ws[2]);
                let (xd, wdata) = (&val(*x).data, &val(*w).data);
                let mut gx = vec![0.0; xd.len()];
                let mut gw = vec![0.0; wdata.len()];
                let mut gb = vec![0.0; dout];
                for t in 0..t_len {
                    let grow = &g[t * dout..(t + 1) * dout];
                    add_into(&mut gb, grow);
                    for j in 0..k {
                        let Some(src) = t.checked_sub(j * dilation) else {
                            break;
                        };
                        for ci in 0..din {
                            let woff = (j * din + ci) * dout;
                            let wrow = &wdata[woff..woff + dout];
                            gx[src * din + ci] += wrow.iter().zip(grow).map(|(a, b)| a * b).sum::<f64>();
                            let xv = xd[src * din + ci];
                            for (d, gv) in gw[woff..woff + dout].iter_mut().zip(grow) {
                                *d += xv * gv;
                            }
                        }
                    }
                }
                add_into(accumulate(grads, *x, gx.len()), &gx);
                add_into(accumulate(grads, *w, gw.len()), &gw);
                add_into(accumulate(grads, *b, dout), &gb);
            }
            Op::Reshape(x) => {
                add_into(accumulate(grads, *x, g.len()), g);
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Per-class sums for soft Dice: intersection, predicted mass, ground-truth count.
fn dice_sums(probs: &[f64], c: usize, targets: &[usize], ignore: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut inter = vec![0.0; c];
    let mut psum = vec![0.0; c];
    let mut gsum = vec![0.0; c];
    for (prow, &y) in probs.chunks(c).zip(targets) {
        if y == ignore {
            continue;
        }
        for k in 0..c {
            psum[k] += prow[k];
        }
        inter[y] += prow[y];
        gsum[y] += 1.0;
    }
    (inter, psum, gsum)
}
