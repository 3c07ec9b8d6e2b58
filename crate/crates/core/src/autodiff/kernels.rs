//! Forward and backward kernels on flat row-major buffers.
//!
//! Every kernel loops per sample in a fixed order, so a sample's result never
//! depends on how many other samples share the batch.

use crate::tensor::Real;

#[inline]
fn axpy<F: Real>(y: &mut [F], a: F, x: &[F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let mut acc = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Geometry of a "same"-padded, stride-1 square convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
}

impl ConvGeom {
    fn plane(&self) -> usize {
        self.height * self.width
    }

    fn rows(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }
}

fn im2col<F: Real>(g: &ConvGeom, x: &[F], cols: &mut [F]) {
    let (h, w, k) = (g.height as isize, g.width as isize, g.kernel);
    let pad = (k / 2) as isize;
    let plane = g.plane();
    for c in 0..g.in_ch {
        let src = &x[c * plane..(c + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y + dy;
                    let out_row = &mut dst[(y * w) as usize..((y + 1) * w) as usize];
                    if sy < 0 || sy >= h {
                        out_row.fill(F::zero());
                        continue;
                    }
                    let src_row = &src[(sy * w) as usize..((sy + 1) * w) as usize];
                    let x0 = (-dx).max(0);
                    let x1 = (w - dx).min(w);
                    out_row[..x0 as usize].fill(F::zero());
                    if x1 > x0 {
                        out_row[x0 as usize..x1 as usize]
                            .copy_from_slice(&src_row[(x0 + dx) as usize..(x1 + dx) as usize]);
                    }
                    out_row[x1.max(x0) as usize..].fill(F::zero());
                }
            }
        }
    }
}

fn col2im<F: Real>(g: &ConvGeom, cols: &[F], dx: &mut [F]) {
    let (h, w, k) = (g.height as isize, g.width as isize, g.kernel);
    let pad = (k / 2) as isize;
    let plane = g.plane();
    for c in 0..g.in_ch {
        let dst = &mut dx[c * plane..(c + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                let oy = ky as isize - pad;
                let ox = kx as isize - pad;
                for y in 0..h {
                    let sy = y + oy;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    let x0 = (-ox).max(0);
                    let x1 = (w - ox).min(w);
                    for x in x0..x1 {
                        dst[(sy * w + x + ox) as usize] += src[(y * w + x) as usize];
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<F: Real>(g: &ConvGeom, x: &[F], weight: &[F], bias: Option<&[F]>) -> Vec<F> {
    let plane = g.plane();
    let rows = g.rows();
    let mut out = vec![F::zero(); g.batch * g.out_ch * plane];
    let mut cols = vec![F::zero(); rows * plane];
    for n in 0..g.batch {
        let xs = &x[n * g.in_ch * plane..(n + 1) * g.in_ch * plane];
        im2col(g, xs, &mut cols);
        let os = &mut out[n * g.out_ch * plane..(n + 1) * g.out_ch * plane];
        for co in 0..g.out_ch {
            let orow = &mut os[co * plane..(co + 1) * plane];
            if let Some(b) = bias {
                orow.fill(b[co]);
            }
            let wrow = &weight[co * rows..(co + 1) * rows];
            for (r, &wv) in wrow.iter().enumerate() {
                if wv != F::zero() {
                    axpy(orow, wv, &cols[r * plane..(r + 1) * plane]);
                }
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<F> {
    pub input: Option<Vec<F>>,
    pub weight: Vec<F>,
    pub bias: Option<Vec<F>>,
}

pub(crate) fn conv2d_backward<F: Real>(
    g: &ConvGeom,
    x: &[F],
    weight: &[F],
    dout: &[F],
    need_input: bool,
    need_bias: bool,
) -> ConvGrads<F> {
    let plane = g.plane();
    let rows = g.rows();
    let mut dw = vec![F::zero(); g.out_ch * rows];
    let mut db = need_bias.then(|| vec![F::zero(); g.out_ch]);
    let mut dx = need_input.then(|| vec![F::zero(); x.len()]);
    let mut cols = vec![F::zero(); rows * plane];
    let mut dcols = vec![F::zero(); if need_input { rows * plane } else { 0 }];
    for n in 0..g.batch {
        let xs = &x[n * g.in_ch * plane..(n + 1) * g.in_ch * plane];
        im2col(g, xs, &mut cols);
        let ds = &dout[n * g.out_ch * plane..(n + 1) * g.out_ch * plane];
        if need_input {
            dcols.fill(F::zero());
        }
        for co in 0..g.out_ch {
            let drow = &ds[co * plane..(co + 1) * plane];
            if let Some(db) = db.as_mut() {
                db[co] += drow.iter().copied().sum::<F>();
            }
            let dwrow = &mut dw[co * rows..(co + 1) * rows];
            for r in 0..rows {
                dwrow[r] += dot(drow, &cols[r * plane..(r + 1) * plane]);
            }
            if need_input {
                let wrow = &weight[co * rows..(co + 1) * rows];
                for (r, &wv) in wrow.iter().enumerate() {
                    if wv != F::zero() {
                        axpy(&mut dcols[r * plane..(r + 1) * plane], wv, drow);
                    }
                }
            }
        }
        if let Some(dx) = dx.as_mut() {
            col2im(g, &dcols, &mut dx[n * g.in_ch * plane..(n + 1) * g.in_ch * plane]);
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

/// 2x2 average pool with stride 2; trailing odd rows/columns are dropped.
pub(crate) fn avgpool2_forward<F: Real>(x: &[F], planes: usize, h: usize, w: usize) -> Vec<F> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = F::of(0.25);
    let mut out = vec![F::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            for xo in 0..ow {
                let a = src[2 * y * w + 2 * xo];
                let b = src[2 * y * w + 2 * xo + 1];
                let c = src[(2 * y + 1) * w + 2 * xo];
                let d = src[(2 * y + 1) * w + 2 * xo + 1];
                dst[y * ow + xo] = (a + b + c + d) * quarter;
            }
        }
    }
    out
}

pub(crate) fn avgpool2_backward<F: Real>(dout: &[F], planes: usize, h: usize, w: usize) -> Vec<F> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = F::of(0.25);
    let mut dx = vec![F::zero(); planes * h * w];
    for p in 0..planes {
        let src = &dout[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for xo in 0..ow {
                let g = src[y * ow + xo] * quarter;
                dst[2 * y * w + 2 * xo] = g;
                dst[2 * y * w + 2 * xo + 1] = g;
                dst[(2 * y + 1) * w + 2 * xo] = g;
                dst[(2 * y + 1) * w + 2 * xo + 1] = g;
            }
        }
    }
    dx
}

/// `a[m,k] @ b[k,n]`.
pub(crate) fn matmul<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(crow, a[i * k + p], &b[p * n..(p + 1) * n]);
        }
    }
    c
}

/// Gradients of `a[m,k] @ b[k,n]` given `dc[m,n]`.
pub(crate) fn matmul_backward<F: Real>(
    a: &[F],
    b: &[F],
    dc: &[F],
    m: usize,
    k: usize,
    n: usize,
) -> (Vec<F>, Vec<F>) {
    let mut da = vec![F::zero(); m * k];
    let mut db = vec![F::zero(); k * n];
    for i in 0..m {
        let dcrow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            da[i * k + p] = dot(dcrow, &b[p * n..(p + 1) * n]);
            axpy(&mut db[p * n..(p + 1) * n], a[i * k + p], dcrow);
        }
    }
    (da, db)
}

/// `x[n,in] @ w[out,in]^T + b`.
pub(crate) fn linear_forward<F: Real>(x: &[F], w: &[F], b: Option<&[F]>, n: usize, fin: usize, fout: usize) -> Vec<F> {
    let mut y = vec![F::zero(); n * fout];
    for i in 0..n {
        let xrow = &x[i * fin..(i + 1) * fin];
        for o in 0..fout {
            let bias = b.map_or(F::zero(), |b| b[o]);
            y[i * fout + o] = dot(xrow, &w[o * fin..(o + 1) * fin]) + bias;
        }
    }
    y
}

pub(crate) struct LinearGrads<F> {
    pub input: Vec<F>,
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

pub(crate) fn linear_backward<F: Real>(x: &[F], w: &[F], dy: &[F], n: usize, fin: usize, fout: usize) -> LinearGrads<F> {
    let mut dx = vec![F::zero(); n * fin];
    let mut dw = vec![F::zero(); fout * fin];
    let mut db = vec![F::zero(); fout];
    for i in 0..n {
        let xrow = &x[i * fin..(i + 1) * fin];
        for o in 0..fout {
            let g = dy[i * fout + o];
            if g == F::zero() {
                continue;
            }
            db[o] += g;
            axpy(&mut dx[i * fin..(i + 1) * fin], g, &w[o * fin..(o + 1) * fin]);
            axpy(&mut dw[o * fin..(o + 1) * fin], g, xrow);
        }
    }
    LinearGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

/// Per-channel statistics layout: `x` is `[n, channels, spatial]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct BnGeom {
    pub n: usize,
    pub channels: usize,
    pub spatial: usize,
}

impl BnGeom {
    fn count(&self) -> usize {
        self.n * self.spatial
    }
}

pub(crate) struct BnForward<F> {
    pub out: Vec<F>,
    pub xhat: Vec<F>,
    pub inv_std: Vec<F>,
    pub mean: Vec<F>,
    /// Biased batch variance.
    pub var: Vec<F>,
}

pub(crate) fn batchnorm_train<F: Real>(g: &BnGeom, x: &[F], gamma: &[F], beta: &[F], eps: F) -> BnForward<F> {
    let count = F::of(g.count() as f64);
    let mut mean = vec![F::zero(); g.channels];
    let mut var = vec![F::zero(); g.channels];
    for i in 0..g.n {
        for c in 0..g.channels {
            let off = (i * g.channels + c) * g.spatial;
            mean[c] += x[off..off + g.spatial].iter().copied().sum::<F>();
        }
    }
    for m in mean.iter_mut() {
        *m = *m / count;
    }
    for i in 0..g.n {
        for c in 0..g.channels {
            let off = (i * g.channels + c) * g.spatial;
            let mu = mean[c];
            var[c] += x[off..off + g.spatial].iter().map(|&v| (v - mu) * (v - mu)).sum::<F>();
        }
    }
    for v in var.iter_mut() {
        *v = *v / count;
    }
    let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![F::zero(); x.len()];
    let mut out = vec![F::zero(); x.len()];
    for i in 0..g.n {
        for c in 0..g.channels {
            let off = (i * g.channels + c) * g.spatial;
            for s in off..off + g.spatial {
                let h = (x[s] - mean[c]) * inv_std[c];
                xhat[s] = h;
                out[s] = gamma[c] * h + beta[c];
            }
        }
    }
    BnForward {
        out,
        xhat,
        inv_std,
        mean,
        var,
    }
}

pub(crate) fn batchnorm_infer<F: Real>(
    g: &BnGeom,
    x: &[F],
    gamma: &[F],
    beta: &[F],
    mean: &[F],
    var: &[F],
    eps: F,
) -> BnForward<F> {
    let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![F::zero(); x.len()];
    let mut out = vec![F::zero(); x.len()];
    for i in 0..g.n {
        for c in 0..g.channels {
            let off = (i * g.channels + c) * g.spatial;
            for s in off..off + g.spatial {
                let h = (x[s] - mean[c]) * inv_std[c];
                xhat[s] = h;
                out[s] = gamma[c] * h + beta[c];
            }
        }
    }
    BnForward {
        out,
        xhat,
        inv_std,
        mean: mean.to_vec(),
        var: var.to_vec(),
    }
}

pub(crate) struct BnGrads<F> {
    pub input: Vec<F>,
    pub gamma: Vec<F>,
    pub beta: Vec<F>,
}

pub(crate) fn batchnorm_backward<F: Real>(
    g: &BnGeom,
    xhat: &[F],
    inv_std: &[F],
    gamma: &[F],
    dy: &[F],
    train: bool,
) -> BnGrads<F> {
    let mut dgamma = vec![F::zero(); g.channels];
    let mut dbeta = vec![F::zero(); g.channels];
    for i in 0..g.n {
        for c in 0..g.channels {
            let off = (i * g.channels + c) * g.spatial;
            for s in off..off + g.spatial {
                dgamma[c] += dy[s] * xhat[s];
                dbeta[c] += dy[s];
            }
        }
    }
    let mut dx = vec![F::zero(); dy.len()];
    if train {
        // dxhat = dy * gamma; sum(dxhat) = gamma * dbeta; sum(dxhat * xhat) = gamma * dgamma
        let count = F::of(g.count() as f64);
        for i in 0..g.n {
            for c in 0..g.channels {
                let off = (i * g.channels + c) * g.spatial;
                let scale = gamma[c] * inv_std[c] / count;
                for s in off..off + g.spatial {
                    dx[s] = scale * (count * dy[s] - dbeta[c] - xhat[s] * dgamma[c]);
                }
            }
        }
    } else {
        for i in 0..g.n {
            for c in 0..g.channels {
                let off = (i * g.channels + c) * g.spatial;
                let scale = gamma[c] * inv_std[c];
                for s in off..off + g.spatial {
                    dx[s] = scale * dy[s];
                }
            }
        }
    }
    BnGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    }
}

/// Row-wise softmax of `[n, classes]`, max-shifted.
pub(crate) fn softmax_rows<F: Real>(logits: &[F], n: usize, classes: usize) -> Vec<F> {
    let mut out = vec![F::zero(); n * classes];
    for i in 0..n {
        let row = &logits[i * classes..(i + 1) * classes];
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let dst = &mut out[i * classes..(i + 1) * classes];
        let mut z = F::zero();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            z += *d;
        }
        for d in dst.iter_mut() {
            *d = *d / z;
        }
    }
    out
}
