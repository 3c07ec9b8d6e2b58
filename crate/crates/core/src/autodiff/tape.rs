//! Operation tape and the reverse pass.

use std::fmt;

use super::kernels::{self, BnGeom, ConvGeom};
use super::params::{ParamId, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    index: usize,
    generation: u64,
}

/// Backward rule for operations defined outside the built-in set.
///
/// `backward` returns one optional gradient per input, in input order.
pub trait BackwardRule<F: Real> {
    fn name(&self) -> &'static str;

    fn backward(&self, inputs: &[&Tensor<F>], output: &Tensor<F>, grad_output: &[F]) -> Vec<Option<Vec<F>>>;
}

/// Batch normalization mode. Inference mode uses the supplied running
/// statistics; train mode uses the statistics of the batch itself.
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a, F> {
    Train,
    Infer { mean: &'a [F], var: &'a [F] },
}

/// Statistics of a train-mode batch normalization call, returned so the
/// caller can update running estimates.
#[derive(Clone, Debug)]
pub struct BnStats<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
    /// Number of values averaged per channel.
    pub count: usize,
}

enum Op<F: Real> {
    Leaf,
    Param(ParamId),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, F),
    Sum(usize),
    Reshape(usize),
    Select0 { src: usize, index: usize },
    Narrow0 { src: usize, start: usize },
    Stack(Vec<usize>),
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Linear { x: usize, w: usize, b: Option<usize>, n: usize, fin: usize, fout: usize },
    Conv2d { x: usize, w: usize, b: Option<usize>, geom: ConvGeom },
    AvgPool2 { x: usize, planes: usize, h: usize, w: usize },
    GlobalAvgPool { x: usize, spatial: usize },
    BatchNorm { x: usize, gamma: usize, beta: usize, geom: BnGeom, xhat: Vec<F>, inv_std: Vec<F>, train: bool },
    SoftmaxCe { logits: usize, labels: Vec<usize>, probs: Vec<F> },
    Custom { inputs: Vec<usize>, rule: Box<dyn BackwardRule<F>> },
}

struct Node<F: Real> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Records executed operations so gradients can be replayed in reverse.
///
/// A tape is single-use: [`Tape::backward`] consumes the record. Call
/// [`Tape::reset`] to start a new record; handles from earlier generations
/// are then rejected.
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
    generation: u64,
    consumed: bool,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> fmt::Debug for Tape<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.len())
            .field("generation", &self.generation)
            .field("consumed", &self.consumed)
            .finish()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            generation: 0,
            consumed: false,
        }
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Discard the record and start a new generation.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.generation += 1;
        self.consumed = false;
    }

    fn check(&self, v: Var) -> Result<usize> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if v.generation != self.generation || v.index >= self.nodes.len() {
            return Err(Error::NotOnTape);
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Result<Var> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var {
            index: self.nodes.len() - 1,
            generation: self.generation,
        })
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<F>> {
        let i = self.check(v)?;
        Ok(&self.nodes[i].value)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(self.value(v)?.shape())
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool> {
        let i = self.check(v)?;
        Ok(self.nodes[i].needs_grad)
    }

    /// A value that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor<F>) -> Result<Var> {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient can be read back with [`Tape::gradients`].
    pub fn variable(&mut self, value: Tensor<F>) -> Result<Var> {
        self.push(value, Op::Leaf, true)
    }

    /// Bind a trainable parameter; its gradient is written back to the
    /// [`ParamSet`] by [`Tape::backward`].
    pub fn param(&mut self, params: &ParamSet<F>, id: ParamId) -> Result<Var> {
        self.push(params.tensor(id).clone(), Op::Param(id), true)
    }

    /// Copy of `v` that stops gradient flow.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let value = self.value(v)?.clone();
        self.constant(value)
    }

    fn binary_shapes(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (self.nodes[ia].value.shape(), self.nodes[ib].value.shape());
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok((ia, ib))
    }

    fn grad_flag(&self, inputs: &[usize]) -> bool {
        inputs.iter().any(|&i| self.nodes[i].needs_grad)
    }

    fn elementwise(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Result<(Tensor<F>, usize, usize)> {
        let (ia, ib) = self.binary_shapes(op, a, b)?;
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok((Tensor::from_parts(va.shape().to_vec(), data), ia, ib))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ia, ib) = self.elementwise("add", a, b, |x, y| x + y)?;
        let ng = self.grad_flag(&[ia, ib]);
        self.push(t, Op::Add(ia, ib), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ia, ib) = self.elementwise("sub", a, b, |x, y| x - y)?;
        let ng = self.grad_flag(&[ia, ib]);
        self.push(t, Op::Sub(ia, ib), ng)
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ia, ib) = self.elementwise("mul", a, b, |x, y| x * y)?;
        let ng = self.grad_flag(&[ia, ib]);
        self.push(t, Op::Mul(ia, ib), ng)
    }

    pub fn scale(&mut self, a: Var, factor: F) -> Result<Var> {
        let ia = self.check(a)?;
        let va = &self.nodes[ia].value;
        let t = Tensor::from_parts(va.shape().to_vec(), va.data().iter().map(|&x| x * factor).collect());
        let ng = self.grad_flag(&[ia]);
        self.push(t, Op::Scale(ia, factor), ng)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let s = self.nodes[ia].value.data().iter().copied().sum::<F>();
        let ng = self.grad_flag(&[ia]);
        self.push(Tensor::scalar(s), Op::Sum(ia), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.check(a)?;
        let t = self.nodes[ia].value.clone().reshape(shape)?;
        let ng = self.grad_flag(&[ia]);
        self.push(t, Op::Reshape(ia), ng)
    }

    /// Slice `index` of the leading axis, dropping that axis.
    pub fn select0(&mut self, a: Var, index: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let t = self.nodes[ia].value.select0(index)?;
        let ng = self.grad_flag(&[ia]);
        self.push(t, Op::Select0 { src: ia, index }, ng)
    }

    /// Rows `start..start + len` of the leading axis.
    pub fn narrow0(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let t = self.nodes[ia].value.narrow0(start, len)?;
        let ng = self.grad_flag(&[ia]);
        self.push(t, Op::Narrow0 { src: ia, start }, ng)
    }

    /// Stack equally shaped values along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&v| self.check(v)).collect::<Result<Vec<_>>>()?;
        let values: Vec<Tensor<F>> = idx.iter().map(|&i| self.nodes[i].value.clone()).collect();
        let t = Tensor::stack(&values)?;
        let ng = self.grad_flag(&idx);
        self.push(t, Op::Stack(idx), ng)
    }

    /// `a[m,k] @ b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (self.nodes[ia].value.shape(), self.nodes[ib].value.shape());
        let (m, k, n) = match (sa, sb) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            ([m, k], [k2]) if k == k2 => (*m, *k, 1),
            _ => return Err(Error::shape("matmul", sa, sb)),
        };
        let out_shape = if sb.len() == 1 { vec![m] } else { vec![m, n] };
        let c = kernels::matmul(self.nodes[ia].value.data(), self.nodes[ib].value.data(), m, k, n);
        let ng = self.grad_flag(&[ia, ib]);
        self.push(Tensor::from_parts(out_shape, c), Op::MatMul { a: ia, b: ib, m, k, n }, ng)
    }

    /// Fully connected layer: `x[n,in] @ w[out,in]^T + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (ix, iw) = (self.check(x)?, self.check(w)?);
        let ib = b.map(|b| self.check(b)).transpose()?;
        let (sx, sw) = (self.nodes[ix].value.shape(), self.nodes[iw].value.shape());
        let (n, fin, fout) = match (sx, sw) {
            ([n, fin], [fout, fin2]) if fin == fin2 => (*n, *fin, *fout),
            _ => return Err(Error::shape("linear", sx, sw)),
        };
        if let Some(ib) = ib {
            let sb = self.nodes[ib].value.shape();
            if sb != [fout] {
                return Err(Error::shape("linear", sw, sb));
            }
        }
        let y = kernels::linear_forward(
            self.nodes[ix].value.data(),
            self.nodes[iw].value.data(),
            ib.map(|i| self.nodes[i].value.data()),
            n,
            fin,
            fout,
        );
        let mut deps = vec![ix, iw];
        deps.extend(ib);
        let ng = self.grad_flag(&deps);
        self.push(Tensor::from_parts(vec![n, fout], y), Op::Linear { x: ix, w: iw, b: ib, n, fin, fout }, ng)
    }

    /// Stride-1 convolution with "same" padding: `x[n,ci,h,w]`,
    /// `w[co,ci,k,k]` with odd `k`. Spatial dims are preserved.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (ix, iw) = (self.check(x)?, self.check(w)?);
        let ib = b.map(|b| self.check(b)).transpose()?;
        let (sx, sw) = (self.nodes[ix].value.shape(), self.nodes[iw].value.shape());
        let geom = match (sx, sw) {
            ([n, ci, h, wd], [co, ci2, k, k2]) if ci == ci2 && k == k2 && k % 2 == 1 => ConvGeom {
                batch: *n,
                in_ch: *ci,
                out_ch: *co,
                height: *h,
                width: *wd,
                kernel: *k,
            },
            _ => return Err(Error::shape("conv2d", sx, sw)),
        };
        if let Some(ib) = ib {
            let sb = self.nodes[ib].value.shape();
            if sb != [geom.out_ch] {
                return Err(Error::shape("conv2d", sw, sb));
            }
        }
        let y = kernels::conv2d_forward(
            &geom,
            self.nodes[ix].value.data(),
            self.nodes[iw].value.data(),
            ib.map(|i| self.nodes[i].value.data()),
        );
        let shape = vec![geom.batch, geom.out_ch, geom.height, geom.width];
        let mut deps = vec![ix, iw];
        deps.extend(ib);
        let ng = self.grad_flag(&deps);
        self.push(Tensor::from_parts(shape, y), Op::Conv2d { x: ix, w: iw, b: ib, geom }, ng)
    }

    /// 2x2 average pooling with stride 2 over the last two axes of
    /// `[n,c,h,w]`; output is `[n,c,h/2,w/2]` (floor).
    pub fn avgpool2d(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let s = self.nodes[ix].value.shape().to_vec();
        let [n, c, h, w] = s[..] else {
            return Err(Error::shape("avgpool2d", &s, &[0, 0, 2, 2]));
        };
        if h < 2 || w < 2 {
            return Err(Error::invalid("avgpool2d", format!("spatial size {h}x{w} is smaller than the 2x2 window")));
        }
        let y = kernels::avgpool2_forward(self.nodes[ix].value.data(), n * c, h, w);
        let ng = self.grad_flag(&[ix]);
        self.push(
            Tensor::from_parts(vec![n, c, h / 2, w / 2], y),
            Op::AvgPool2 { x: ix, planes: n * c, h, w },
            ng,
        )
    }

    /// Mean over the spatial axes: `[n,c,h,w] -> [n,c]`.
    pub fn global_avgpool(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let s = self.nodes[ix].value.shape().to_vec();
        let [n, c, h, w] = s[..] else {
            return Err(Error::shape("global_avgpool", &s, &[0, 0, 0, 0]));
        };
        let spatial = h * w;
        let inv = F::one() / F::of(spatial as f64);
        let data = self.nodes[ix]
            .value
            .data()
            .chunks(spatial)
            .map(|p| p.iter().copied().sum::<F>() * inv)
            .collect();
        let ng = self.grad_flag(&[ix]);
        self.push(Tensor::from_parts(vec![n, c], data), Op::GlobalAvgPool { x: ix, spatial }, ng)
    }

    /// Per-channel batch normalization of `[n,c]` or `[n,c,h,w]`.
    pub fn batchnorm(&mut self, x: Var, gamma: Var, beta: Var, mode: BnMode<'_, F>, eps: F) -> Result<(Var, Option<BnStats<F>>)> {
        let (ix, ig, ibt) = (self.check(x)?, self.check(gamma)?, self.check(beta)?);
        let s = self.nodes[ix].value.shape().to_vec();
        let geom = match s[..] {
            [n, c] => BnGeom { n, channels: c, spatial: 1 },
            [n, c, h, w] => BnGeom { n, channels: c, spatial: h * w },
            _ => return Err(Error::shape("batchnorm", &s, &[0, 0])),
        };
        for idx in [ig, ibt] {
            let sp = self.nodes[idx].value.shape();
            if sp != [geom.channels] {
                return Err(Error::shape("batchnorm", &s, sp));
            }
        }
        let xv = self.nodes[ix].value.data();
        let gv = self.nodes[ig].value.data();
        let bv = self.nodes[ibt].value.data();
        let (fwd, train) = match mode {
            BnMode::Train => {
                if geom.n < 2 {
                    return Err(Error::invalid("batchnorm", format!("train mode needs batch size >= 2, got {}", geom.n)));
                }
                (kernels::batchnorm_train(&geom, xv, gv, bv, eps), true)
            }
            BnMode::Infer { mean, var } => {
                if mean.len() != geom.channels || var.len() != geom.channels {
                    return Err(Error::shape("batchnorm", &s, &[mean.len()]));
                }
                (kernels::batchnorm_infer(&geom, xv, gv, bv, mean, var, eps), false)
            }
        };
        let stats = train.then(|| BnStats {
            mean: fwd.mean.clone(),
            var: fwd.var.clone(),
            count: geom.n * geom.spatial,
        });
        let ng = self.grad_flag(&[ix, ig, ibt]);
        let v = self.push(
            Tensor::from_parts(s, fwd.out),
            Op::BatchNorm {
                x: ix,
                gamma: ig,
                beta: ibt,
                geom,
                xhat: fwd.xhat,
                inv_std: fwd.inv_std,
                train,
            },
            ng,
        )?;
        Ok((v, stats))
    }

    /// Mean softmax cross-entropy of `logits[n,classes]` against labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let il = self.check(logits)?;
        let s = self.nodes[il].value.shape().to_vec();
        let [n, classes] = s[..] else {
            return Err(Error::shape("softmax_cross_entropy", &s, &[labels.len(), 0]));
        };
        if labels.len() != n {
            return Err(Error::shape("softmax_cross_entropy", &s, &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::invalid(
                "softmax_cross_entropy",
                format!("label {bad} out of range for {classes} classes"),
            ));
        }
        let x = self.nodes[il].value.data();
        let probs = kernels::softmax_rows(x, n, classes);
        let mut total = F::zero();
        for (i, &y) in labels.iter().enumerate() {
            let row = &x[i * classes..(i + 1) * classes];
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<F>().ln();
            total += lse - row[y];
        }
        let loss = total / F::of(n as f64);
        let ng = self.grad_flag(&[il]);
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits: il,
                labels: labels.to_vec(),
                probs,
            },
            ng,
        )
    }

    /// Record an externally computed value together with its backward rule.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<F>, rule: Box<dyn BackwardRule<F>>) -> Result<Var> {
        let idx = inputs.iter().map(|&v| self.check(v)).collect::<Result<Vec<_>>>()?;
        let ng = self.grad_flag(&idx);
        self.push(output, Op::Custom { inputs: idx, rule }, ng)
    }

    fn run_backward(&mut self, loss: Var) -> Result<Vec<Option<Vec<F>>>> {
        let il = self.check(loss)?;
        if !self.nodes[il].value.is_scalar() {
            return Err(Error::invalid(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.nodes[il].value.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[il] = Some(vec![F::one()]);
        for i in (0..=il).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    fn propagate(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let nodes = &self.nodes;
        let needs = |j: usize| nodes[j].needs_grad;
        let mut acc = |j: usize, delta: Vec<F>| {
            if !nodes[j].needs_grad {
                return;
            }
            match grads[j].as_mut() {
                Some(existing) => {
                    for (e, d) in existing.iter_mut().zip(delta) {
                        *e += d;
                    }
                }
                None => grads[j] = Some(delta),
            }
        };
        match &nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                if needs(*b) {
                    acc(*b, g.iter().map(|&x| -x).collect());
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (nodes[*a].value.data(), nodes[*b].value.data());
                if needs(*a) {
                    acc(*a, g.iter().zip(vb).map(|(&gi, &y)| gi * y).collect());
                }
                if needs(*b) {
                    acc(*b, g.iter().zip(va).map(|(&gi, &x)| gi * x).collect());
                }
            }
            Op::Scale(a, f) => acc(*a, g.iter().map(|&x| x * *f).collect()),
            Op::Sum(a) => acc(*a, vec![g[0]; nodes[*a].value.len()]),
            Op::Reshape(a) => acc(*a, g.to_vec()),
            Op::Select0 { src, index } => {
                let total = nodes[*src].value.len();
                let mut d = vec![F::zero(); total];
                d[index * g.len()..(index + 1) * g.len()].copy_from_slice(g);
                acc(*src, d);
            }
            Op::Narrow0 { src, start } => {
                let src_t = &nodes[*src].value;
                let block = src_t.len() / src_t.shape()[0];
                let mut d = vec![F::zero(); src_t.len()];
                d[start * block..start * block + g.len()].copy_from_slice(g);
                acc(*src, d);
            }
            Op::Stack(parts) => {
                let block = g.len() / parts.len();
                for (k, &p) in parts.iter().enumerate() {
                    acc(p, g[k * block..(k + 1) * block].to_vec());
                }
            }
            Op::MatMul { a, b, m, k, n } => {
                let (da, db) = kernels::matmul_backward(nodes[*a].value.data(), nodes[*b].value.data(), g, *m, *k, *n);
                acc(*a, da);
                acc(*b, db);
            }
            Op::Linear { x, w, b, n, fin, fout } => {
                let lg = kernels::linear_backward(nodes[*x].value.data(), nodes[*w].value.data(), g, *n, *fin, *fout);
                acc(*x, lg.input);
                acc(*w, lg.weight);
                if let Some(b) = b {
                    acc(*b, lg.bias);
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let cg = kernels::conv2d_backward(
                    geom,
                    nodes[*x].value.data(),
                    nodes[*w].value.data(),
                    g,
                    needs(*x),
                    b.is_some(),
                );
                if let Some(dx) = cg.input {
                    acc(*x, dx);
                }
                acc(*w, cg.weight);
                if let (Some(b), Some(db)) = (b, cg.bias) {
                    acc(*b, db);
                }
            }
            Op::AvgPool2 { x, planes, h, w } => acc(*x, kernels::avgpool2_backward(g, *planes, *h, *w)),
            Op::GlobalAvgPool { x, spatial } => {
                let inv = F::one() / F::of(*spatial as f64);
                let d = g.iter().flat_map(|&gi| std::iter::repeat_n(gi * inv, *spatial)).collect();
                acc(*x, d);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                geom,
                xhat,
                inv_std,
                train,
            } => {
                let bg = kernels::batchnorm_backward(geom, xhat, inv_std, nodes[*gamma].value.data(), g, *train);
                acc(*x, bg.input);
                acc(*gamma, bg.gamma);
                acc(*beta, bg.beta);
            }
            Op::SoftmaxCe { logits, labels, probs } => {
                let n = labels.len();
                let classes = probs.len() / n;
                let scale = g[0] / F::of(n as f64);
                let mut d: Vec<F> = probs.iter().map(|&p| p * scale).collect();
                for (row, &y) in labels.iter().enumerate() {
                    d[row * classes + y] -= scale;
                }
                acc(*logits, d);
            }
            Op::Custom { inputs, rule } => {
                let values: Vec<&Tensor<F>> = inputs.iter().map(|&j| &nodes[j].value).collect();
                let out = rule.backward(&values, &nodes[i].value, g);
                for (&j, d) in inputs.iter().zip(out) {
                    if let Some(d) = d {
                        debug_assert_eq!(d.len(), nodes[j].value.len(), "{} gradient length", rule.name());
                        acc(j, d);
                    }
                }
            }
        }
    }

    /// Reverse pass from a scalar `loss`. Writes the gradient of every
    /// parameter in `params` (zero for parameters not on the tape) and
    /// consumes the tape.
    pub fn backward(&mut self, loss: Var, params: &mut ParamSet<F>) -> Result<()> {
        let grads = self.run_backward(loss)?;
        params.zero_grads();
        for (node, g) in self.nodes.iter().zip(grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                if id.index() >= params.len() {
                    return Err(Error::invalid("backward", "parameter bound from a different set"));
                }
                let entry = params.get_mut(*id);
                let mut acc = entry.tensor.grad().map(<[F]>::to_vec).unwrap_or_default();
                if acc.len() != g.len() {
                    return Err(Error::shape("backward", entry.tensor.shape(), &[g.len()]));
                }
                for (a, d) in acc.iter_mut().zip(g) {
                    *a += d;
                }
                entry.tensor.set_grad(acc)?;
            }
        }
        self.consume();
        Ok(())
    }

    /// Reverse pass returning `d loss / d v` for each requested value
    /// (zeros where no path exists). Consumes the tape.
    pub fn gradients(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor<F>>> {
        for &v in wrt {
            self.check(v)?;
        }
        let mut grads = self.run_backward(loss)?;
        let out = wrt
            .iter()
            .map(|v| {
                let t = &self.nodes[v.index].value;
                let g = grads[v.index].take().unwrap_or_else(|| vec![F::zero(); t.len()]);
                if let Some(slot) = grads.get_mut(v.index) {
                    *slot = Some(g.clone());
                }
                Tensor::from_parts(t.shape().to_vec(), g)
            })
            .collect();
        self.consume();
        Ok(out)
    }

    fn consume(&mut self) {
        self.nodes.clear();
        self.consumed = true;
    }
}

