//! Batched NHWC layers with hand-written backward passes.

use ndarray::{Array2, Array4, ArrayView2, Axis, Ix1, Ix2, Ix4};
use rand::Rng;

use super::params::{init_glorot, init_he, Params};

/// Output spatial size of a stride-1 convolution.
pub fn conv_out(size: usize, k: usize, pad: usize) -> usize {
    size + 2 * pad + 1 - k
}

/// Unfolds every k×k patch of `x` into one row. Column order is (ky, kx, c).
pub fn im2col(x: &Array4<f64>, k: usize, pad: usize) -> Array2<f64> {
    let (n, h, w, c) = x.dim();
    let ho = conv_out(h, k, pad);
    let wo = conv_out(w, k, pad);
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().expect("standard layout");
    let row_len = k * k * c;
    let mut out = vec![0.0; n * ho * wo * row_len];
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((b * ho + oy) * wo + ox) * row_len;
                for ky in 0..k {
                    let iy = oy + ky;
                    if iy < pad || iy - pad >= h {
                        continue;
                    }
                    let iy = iy - pad;
                    for kx in 0..k {
                        let ix = ox + kx;
                        if ix < pad || ix - pad >= w {
                            continue;
                        }
                        let ix = ix - pad;
                        let src = ((b * h + iy) * w + ix) * c;
                        let dst = row + (ky * k + kx) * c;
                        out[dst..dst + c].copy_from_slice(&xs[src..src + c]);
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((n * ho * wo, row_len), out).expect("im2col shape")
}

/// Adjoint of [`im2col`]: scatters patch rows back onto an (n, h, w, c) grid.
pub fn col2im(
    cols: ArrayView2<f64>,
    dims: (usize, usize, usize, usize),
    k: usize,
    pad: usize,
) -> Array4<f64> {
    let (n, h, w, c) = dims;
    let ho = conv_out(h, k, pad);
    let wo = conv_out(w, k, pad);
    let row_len = k * k * c;
    assert_eq!(cols.dim(), (n * ho * wo, row_len), "col2im: column shape");
    let cols = cols.as_standard_layout();
    let cs = cols.as_slice().expect("standard layout");
    let mut out = vec![0.0; n * h * w * c];
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((b * ho + oy) * wo + ox) * row_len;
                for ky in 0..k {
                    let iy = oy + ky;
                    if iy < pad || iy - pad >= h {
                        continue;
                    }
                    let iy = iy - pad;
                    for kx in 0..k {
                        let ix = ox + kx;
                        if ix < pad || ix - pad >= w {
                            continue;
                        }
                        let ix = ix - pad;
                        let dst = ((b * h + iy) * w + ix) * c;
                        let src = row + (ky * k + kx) * c;
                        for ch in 0..c {
                            out[dst + ch] += cs[src + ch];
                        }
                    }
                }
            }
        }
    }
    Array4::from_shape_vec((n, h, w, c), out).expect("col2im shape")
}

fn to_rows(x: &Array4<f64>) -> Array2<f64> {
    let (n, h, w, c) = x.dim();
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((n * h * w, c))
        .expect("rows reshape")
}

fn from_rows(x: Array2<f64>, dims: (usize, usize, usize, usize)) -> Array4<f64> {
    x.into_shape_with_order(dims).expect("rows reshape")
}

fn weight2(p: &Params, name: &str, rows: usize, cols: usize) -> Array2<f64> {
    p.get(name)
        .view()
        .into_shape_with_order((rows, cols))
        .expect("weight reshape")
        .to_owned()
}

fn bias1(p: &Params, name: &str) -> ndarray::Array1<f64> {
    p.get(name)
        .view()
        .into_dimensionality::<Ix1>()
        .expect("bias rank")
        .to_owned()
}

fn accumulate(g: &mut Params, name: &str, delta: ndarray::ArrayViewD<f64>) {
    let slot = g.get_mut(name);
    let delta = delta
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order(slot.raw_dim())
        .expect("gradient shape");
    *slot += &delta;
}

/// Stride-1 k×k convolution. Weight layout `[k, k, cin, cout]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    pub k: usize,
    pub cin: usize,
    pub cout: usize,
    pub pad: usize,
}

pub struct ConvCache {
    cols: Array2<f64>,
    in_dims: (usize, usize, usize, usize),
}

impl Conv2d {
    pub fn new(name: impl Into<String>, k: usize, cin: usize, cout: usize, pad: usize) -> Self {
        Self { name: name.into(), k, cin, cout, pad }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut Params, rng: &mut R, relu_follows: bool) {
        let shape = [self.k, self.k, self.cin, self.cout];
        let fan_in = self.k * self.k * self.cin;
        let w = if relu_follows {
            init_he(rng, &shape, fan_in)
        } else {
            init_glorot(rng, &shape, fan_in, self.k * self.k * self.cout)
        };
        p.insert(self.weight_name(), w);
        p.insert(self.bias_name(), ndarray::ArrayD::zeros(ndarray::IxDyn(&[self.cout])));
    }

    pub fn forward(&self, p: &Params, x: &Array4<f64>) -> (Array4<f64>, ConvCache) {
        let (n, h, w, c) = x.dim();
        assert_eq!(c, self.cin, "{}: input channels", self.name);
        let ho = conv_out(h, self.k, self.pad);
        let wo = conv_out(w, self.k, self.pad);
        let cols = im2col(x, self.k, self.pad);
        let wt = weight2(p, &self.weight_name(), self.k * self.k * self.cin, self.cout);
        let mut y = cols.dot(&wt);
        y += &bias1(p, &self.bias_name());
        let y = from_rows(y, (n, ho, wo, self.cout));
        (y, ConvCache { cols, in_dims: (n, h, w, c) })
    }

    /// Accumulates parameter gradients into `g`; returns the input gradient
    /// when `need_input` is set.
    pub fn backward(
        &self,
        p: &Params,
        cache: &ConvCache,
        dy: &Array4<f64>,
        g: &mut Params,
        need_input: bool,
    ) -> Option<Array4<f64>> {
        let dy2 = to_rows(dy);
        let gw = cache.cols.t().dot(&dy2);
        accumulate(g, &self.weight_name(), gw.view().into_dyn());
        accumulate(g, &self.bias_name(), dy2.sum_axis(Axis(0)).view().into_dyn());
        if !need_input {
            return None;
        }
        let wt = weight2(p, &self.weight_name(), self.k * self.k * self.cin, self.cout);
        let dcols = dy2.dot(&wt.t());
        Some(col2im(dcols.view(), cache.in_dims, self.k, self.pad))
    }
}

/// Stride-1 transposed convolution: the adjoint of a [`Conv2d`] mapping
/// `cout -> cin` with padding `pad`. Weight layout `[k, k, cout, cin]`.
///
/// Output size is `in + k - 1 - 2*pad`, so `pad = (k-1)/2` keeps the size and
/// `pad = 0` undoes a valid convolution.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub name: String,
    pub k: usize,
    pub cin: usize,
    pub cout: usize,
    pub pad: usize,
}

pub struct DeconvCache {
    rows: Array2<f64>,
    out_dims: (usize, usize, usize, usize),
}

impl ConvTranspose2d {
    pub fn new(name: impl Into<String>, k: usize, cin: usize, cout: usize, pad: usize) -> Self {
        Self { name: name.into(), k, cin, cout, pad }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn out_size(&self, size: usize) -> usize {
        size + self.k - 1 - 2 * self.pad
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut Params, rng: &mut R, relu_follows: bool) {
        let shape = [self.k, self.k, self.cout, self.cin];
        let w = if relu_follows {
            init_he(rng, &shape, self.cin * self.k * self.k)
        } else {
            init_glorot(rng, &shape, self.cin * self.k * self.k, self.cout * self.k * self.k)
        };
        p.insert(self.weight_name(), w);
        p.insert(self.bias_name(), ndarray::ArrayD::zeros(ndarray::IxDyn(&[self.cout])));
    }

    pub fn forward(&self, p: &Params, x: &Array4<f64>) -> (Array4<f64>, DeconvCache) {
        let (n, h, w, c) = x.dim();
        assert_eq!(c, self.cin, "{}: input channels", self.name);
        let out_dims = (n, self.out_size(h), self.out_size(w), self.cout);
        let rows = to_rows(x);
        let wt = weight2(p, &self.weight_name(), self.k * self.k * self.cout, self.cin);
        let cols = rows.dot(&wt.t());
        let mut y = col2im(cols.view(), out_dims, self.k, self.pad);
        y += &bias1(p, &self.bias_name());
        (y, DeconvCache { rows, out_dims })
    }

    pub fn backward(
        &self,
        p: &Params,
        cache: &DeconvCache,
        dy: &Array4<f64>,
        g: &mut Params,
        need_input: bool,
    ) -> Option<Array4<f64>> {
        assert_eq!(dy.dim(), cache.out_dims, "{}: upstream gradient shape", self.name);
        let cols = im2col(dy, self.k, self.pad);
        let gw = cols.t().dot(&cache.rows);
        accumulate(g, &self.weight_name(), gw.view().into_dyn());
        let db = dy.sum_axis(Axis(0)).sum_axis(Axis(0)).sum_axis(Axis(0));
        accumulate(g, &self.bias_name(), db.view().into_dyn());
        if !need_input {
            return None;
        }
        let wt = weight2(p, &self.weight_name(), self.k * self.k * self.cout, self.cin);
        let dx = cols.dot(&wt);
        let (n, _, _, _) = cache.out_dims;
        let h = conv_out(cache.out_dims.1, self.k, self.pad);
        let w = conv_out(cache.out_dims.2, self.k, self.pad);
        Some(from_rows(dx, (n, h, w, self.cin)))
    }
}

/// Fully connected layer applied to every row. Weight layout `[in, out]`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub name: String,
    pub inp: usize,
    pub out: usize,
}

impl Dense {
    pub fn new(name: impl Into<String>, inp: usize, out: usize) -> Self {
        Self { name: name.into(), inp, out }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut Params, rng: &mut R, relu_follows: bool) {
        let shape = [self.inp, self.out];
        let w = if relu_follows {
            init_he(rng, &shape, self.inp)
        } else {
            init_glorot(rng, &shape, self.inp, self.out)
        };
        p.insert(self.weight_name(), w);
        p.insert(self.bias_name(), ndarray::ArrayD::zeros(ndarray::IxDyn(&[self.out])));
    }

    pub fn forward(&self, p: &Params, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.inp, "{}: input width", self.name);
        let w = p
            .get(&self.weight_name())
            .view()
            .into_dimensionality::<Ix2>()
            .expect("dense weight rank");
        let mut y = x.dot(&w);
        y += &bias1(p, &self.bias_name());
        y
    }

    pub fn backward(
        &self,
        p: &Params,
        x: &Array2<f64>,
        dy: &Array2<f64>,
        g: &mut Params,
        need_input: bool,
    ) -> Option<Array2<f64>> {
        accumulate(g, &self.weight_name(), x.t().dot(dy).view().into_dyn());
        accumulate(g, &self.bias_name(), dy.sum_axis(Axis(0)).view().into_dyn());
        if !need_input {
            return None;
        }
        let w = p
            .get(&self.weight_name())
            .view()
            .into_dimensionality::<Ix2>()
            .expect("dense weight rank");
        Some(dy.dot(&w.t()))
    }
}

/// Non-overlapping max pooling; trailing rows/columns that do not fill a
/// window are dropped.
#[derive(Clone, Debug)]
pub struct MaxPool {
    pub factor: usize,
}

pub struct PoolCache {
    argmax: Vec<usize>,
    in_dims: (usize, usize, usize, usize),
}

impl MaxPool {
    pub fn forward(&self, x: &Array4<f64>) -> (Array4<f64>, PoolCache) {
        let f = self.factor;
        let (n, h, w, c) = x.dim();
        let (ho, wo) = (h / f, w / f);
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().expect("standard layout");
        let mut out = vec![f64::NEG_INFINITY; n * ho * wo * c];
        let mut argmax = vec![0usize; out.len()];
        for b in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let o = ((b * ho + oy) * wo + ox) * c;
                    for dy in 0..f {
                        for dx in 0..f {
                            let i = ((b * h + oy * f + dy) * w + ox * f + dx) * c;
                            for ch in 0..c {
                                if xs[i + ch] > out[o + ch] {
                                    out[o + ch] = xs[i + ch];
                                    argmax[o + ch] = i + ch;
                                }
                            }
                        }
                    }
                }
            }
        }
        let y = Array4::from_shape_vec((n, ho, wo, c), out).expect("pool shape");
        (y, PoolCache { argmax, in_dims: (n, h, w, c) })
    }

    pub fn backward(&self, cache: &PoolCache, dy: &Array4<f64>) -> Array4<f64> {
        let (n, h, w, c) = cache.in_dims;
        let mut dx = vec![0.0; n * h * w * c];
        let dys = dy.as_standard_layout();
        for (g, &i) in dys.iter().zip(&cache.argmax) {
            dx[i] += g;
        }
        Array4::from_shape_vec(cache.in_dims, dx).expect("pool grad shape")
    }
}

/// Nearest-neighbour resize to an exact target size.
pub fn upsample_nearest(x: &Array4<f64>, th: usize, tw: usize) -> Array4<f64> {
    let (n, h, w, c) = x.dim();
    Array4::from_shape_fn((n, th, tw, c), |(b, y, xx, ch)| {
        x[[b, y * h / th, xx * w / tw, ch]]
    })
}

/// Adjoint of [`upsample_nearest`].
pub fn upsample_nearest_backward(dy: &Array4<f64>, h: usize, w: usize) -> Array4<f64> {
    let (n, th, tw, c) = dy.dim();
    let mut dx = Array4::zeros((n, h, w, c));
    for ((b, y, xx, ch), g) in dy.indexed_iter() {
        dx[[b, y * h / th, xx * w / tw, ch]] += g;
    }
    let _ = tw;
    dx
}

pub fn relu<D: ndarray::Dimension>(x: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through a ReLU given its output.
pub fn relu_backward<D: ndarray::Dimension>(
    out: &ndarray::Array<f64, D>,
    dy: &ndarray::Array<f64, D>,
) -> ndarray::Array<f64, D> {
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(out).for_each(|d, &o| {
        if o <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Reshapes an NHWC batch into 4-D from a dynamic array (used by callers
/// that keep tensors in `ArrayD`).
pub fn as4(x: ndarray::ArrayD<f64>) -> Array4<f64> {
    x.into_dimensionality::<Ix4>().expect("rank-4 tensor")
}
