//! A small NHWC autograd-free layer stack with explicit caches.
//!
//! `forward_train` returns the activations' caches so several forward
//! passes can run before a single `backward`; gradients accumulate into
//! each [`Param`]'s `grad`.

use ndarray::{s, Array1, Array2, Array4, ArrayD, ArrayView1, ArrayView2, ArrayView4, Axis, Ix1, Ix2, Ix4, IxDyn, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
}

impl Param {
    pub fn new(value: ArrayD<f64>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `(out, k, k, in)`.
    pub weight: Param,
    pub bias: Option<Param>,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Option<Param>,
    pub beta: Option<Param>,
    pub running_mean: ArrayD<f64>,
    pub running_var: ArrayD<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `(out, in)`.
    pub weight: Param,
    pub bias: Option<Param>,
}

/// Two 3x3 conv-BN pairs with a (possibly projected) identity shortcut.
#[derive(Debug, Clone, PartialEq)]
pub struct BasicBlock {
    pub main: Sequential,
    pub shortcut: Option<Sequential>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    BatchNorm(BatchNorm),
    Relu,
    GlobalAvgPool,
    Linear(Linear),
    Block(Box<BasicBlock>),
    L2Normalize,
}

#[derive(Debug)]
pub enum Cache {
    Conv { cols: Array2<f64>, in_shape: (usize, usize, usize, usize) },
    BatchNorm { xhat: ArrayD<f64>, inv_std: Array1<f64> },
    Relu { out: ArrayD<f64> },
    Pool { in_shape: (usize, usize, usize, usize) },
    Linear { x: Array2<f64> },
    Block { main: Vec<Cache>, shortcut: Option<Vec<Cache>>, out: ArrayD<f64> },
    L2Normalize { y: Array2<f64>, norm: Array1<f64> },
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Train,
    TrainNoGrad,
}

fn as4(x: &ArrayD<f64>) -> ArrayView4<'_, f64> {
    x.view().into_dimensionality::<Ix4>().expect("expected an NHWC tensor")
}

fn as2(x: &ArrayD<f64>) -> ArrayView2<'_, f64> {
    x.view().into_dimensionality::<Ix2>().expect("expected a 2D tensor")
}

/// Flattens all but the last axis.
fn rows(x: &ArrayD<f64>) -> ArrayView2<'_, f64> {
    let c = *x.shape().last().expect("non-scalar");
    x.view().into_shape_with_order((x.len() / c.max(1), c)).expect("contiguous")
}

fn v1(x: &ArrayD<f64>) -> ArrayView1<'_, f64> {
    x.view().into_dimensionality::<Ix1>().expect("expected a 1D tensor")
}

fn out_size(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

fn im2col(x: ArrayView4<f64>, k: usize, stride: usize, pad: usize) -> Array2<f64> {
    let (n, h, w, c) = x.dim();
    let (ho, wo) = (out_size(h, k, stride, pad), out_size(w, k, stride, pad));
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let kc = k * k * c;
    let mut cols = vec![0.0; n * ho * wo * kc];
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((b * ho + oy) * wo + ox) * kc;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let from = ((b * h + iy as usize) * w + ix as usize) * c;
                        let to = row + (ky * k + kx) * c;
                        cols[to..to + c].copy_from_slice(&src[from..from + c]);
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((n * ho * wo, kc), cols).expect("sized")
}

fn col2im(cols: &Array2<f64>, shape: (usize, usize, usize, usize), k: usize, stride: usize, pad: usize) -> Array4<f64> {
    let (n, h, w, c) = shape;
    let (ho, wo) = (out_size(h, k, stride, pad), out_size(w, k, stride, pad));
    let cols = cols.as_standard_layout();
    let src = cols.as_slice().expect("standard layout");
    let kc = k * k * c;
    let mut out = vec![0.0; n * h * w * c];
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((b * ho + oy) * wo + ox) * kc;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let to = ((b * h + iy as usize) * w + ix as usize) * c;
                        let from = row + (ky * k + kx) * c;
                        for (d, s) in out[to..to + c].iter_mut().zip(&src[from..from + c]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    Array4::from_shape_vec(shape, out).expect("sized")
}

impl Conv2d {
    /// He-normal (fan-out) initialization, no bias.
    pub fn new<R: Rng + ?Sized>(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize, rng: &mut R) -> Self {
        let std = (2.0 / (out_c * k * k) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let w = ArrayD::from_shape_fn(IxDyn(&[out_c, k, k, in_c]), |_| normal.sample(rng));
        Self { weight: Param::new(w), bias: None, stride, pad }
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[3]
    }

    fn w2(&self) -> ArrayView2<'_, f64> {
        let o = self.weight.value.shape()[0];
        self.weight.value.view().into_shape_with_order((o, self.weight.value.len() / o)).expect("contiguous")
    }

    fn apply(&self, x: &ArrayD<f64>) -> (ArrayD<f64>, Array2<f64>, (usize, usize, usize, usize)) {
        let x4 = as4(x);
        let (n, h, w, _) = x4.dim();
        let k = self.kernel();
        let (ho, wo) = (out_size(h, k, self.stride, self.pad), out_size(w, k, self.stride, self.pad));
        let cols = im2col(x4, k, self.stride, self.pad);
        let mut y = cols.dot(&self.w2().t());
        if let Some(b) = &self.bias {
            y += &v1(&b.value);
        }
        let o = y.ncols();
        let y = y.into_shape_with_order((n, ho, wo, o)).expect("sized").into_dyn();
        (y, cols, x4.dim())
    }

    fn backward(&mut self, cols: Array2<f64>, in_shape: (usize, usize, usize, usize), dy: ArrayD<f64>, need_dx: bool) -> Option<ArrayD<f64>> {
        let dy2 = rows(&dy);
        let dw = dy2.t().dot(&cols);
        let shape = self.weight.grad.raw_dim();
        self.weight.grad += &dw.into_shape_with_order(shape).expect("sized");
        if let Some(b) = &mut self.bias {
            b.grad += &dy2.sum_axis(Axis(0)).into_dyn();
        }
        need_dx.then(|| {
            let dcols = dy2.dot(&self.w2());
            col2im(&dcols, in_shape, self.kernel(), self.stride, self.pad).into_dyn()
        })
    }
}

impl BatchNorm {
    pub fn new(c: usize, affine: bool) -> Self {
        Self {
            gamma: affine.then(|| Param::new(ArrayD::ones(IxDyn(&[c])))),
            beta: affine.then(|| Param::new(ArrayD::zeros(IxDyn(&[c])))),
            running_mean: ArrayD::zeros(IxDyn(&[c])),
            running_var: ArrayD::ones(IxDyn(&[c])),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    fn affine(&self, xhat: ArrayView2<f64>) -> Array2<f64> {
        match (&self.gamma, &self.beta) {
            (Some(g), Some(b)) => &xhat * &v1(&g.value) + v1(&b.value),
            _ => xhat.to_owned(),
        }
    }

    fn train(&mut self, x: &ArrayD<f64>) -> (ArrayD<f64>, ArrayD<f64>, Array1<f64>) {
        let x2 = rows(x);
        let m = x2.nrows() as f64;
        let mean = x2.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = &x2 - &mean;
        let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let xhat = centered * &inv_std;
        let unbiased = if m > 1.0 { &var * (m / (m - 1.0)) } else { var.clone() };
        let mo = self.momentum;
        self.running_mean = &self.running_mean * (1.0 - mo) + (mean * mo).into_dyn();
        self.running_var = &self.running_var * (1.0 - mo) + (unbiased * mo).into_dyn();
        let y = self.affine(xhat.view()).into_shape_with_order(x.raw_dim()).expect("sized");
        (y, xhat.into_dyn(), inv_std)
    }

    fn eval(&self, x: &ArrayD<f64>) -> ArrayD<f64> {
        let x2 = rows(x);
        let inv_std = v1(&self.running_var).mapv(|v| 1.0 / (v + self.eps).sqrt());
        let xhat = (&x2 - &v1(&self.running_mean)) * &inv_std;
        self.affine(xhat.view()).into_shape_with_order(x.raw_dim()).expect("sized")
    }

    fn backward(&mut self, xhat: ArrayD<f64>, inv_std: Array1<f64>, dy: ArrayD<f64>) -> ArrayD<f64> {
        let shape = dy.raw_dim();
        let dy2 = rows(&dy);
        let xhat = rows(&xhat);
        let m = dy2.nrows() as f64;
        let mut dxhat = dy2.to_owned();
        if let (Some(g), Some(b)) = (&mut self.gamma, &mut self.beta) {
            g.grad += &(&dy2 * &xhat).sum_axis(Axis(0)).into_dyn();
            b.grad += &dy2.sum_axis(Axis(0)).into_dyn();
            dxhat *= &v1(&g.value);
        }
        let sum = dxhat.sum_axis(Axis(0));
        let dot = (&dxhat * &xhat).sum_axis(Axis(0));
        let dx = ((dxhat * m - &sum) - &(&xhat * &dot)) * &(inv_std / m);
        dx.into_shape_with_order(shape).expect("sized")
    }
}

impl Linear {
    /// Uniform initialization in `±1/sqrt(in)` for weight and bias.
    pub fn new<R: Rng + ?Sized>(in_f: usize, out_f: usize, bias: bool, rng: &mut R) -> Self {
        let bound = 1.0 / (in_f as f64).sqrt();
        let w = ArrayD::from_shape_fn(IxDyn(&[out_f, in_f]), |_| rng.random_range(-bound..bound));
        let b = bias.then(|| Param::new(ArrayD::from_shape_fn(IxDyn(&[out_f]), |_| rng.random_range(-bound..bound))));
        Self { weight: Param::new(w), bias: b }
    }

    fn apply(&self, x: &ArrayD<f64>) -> ArrayD<f64> {
        let mut y = as2(x).dot(&as2(&self.weight.value).t());
        if let Some(b) = &self.bias {
            y += &v1(&b.value);
        }
        y.into_dyn()
    }

    fn backward(&mut self, x: Array2<f64>, dy: ArrayD<f64>, need_dx: bool) -> Option<ArrayD<f64>> {
        let dy2 = as2(&dy);
        self.weight.grad += &dy2.t().dot(&x).into_dyn();
        if let Some(b) = &mut self.bias {
            b.grad += &dy2.sum_axis(Axis(0)).into_dyn();
        }
        need_dx.then(|| dy2.dot(&as2(&self.weight.value)).into_dyn())
    }
}

fn pool(x: &ArrayD<f64>) -> ArrayD<f64> {
    let x4 = as4(x);
    let (n, h, w, c) = x4.dim();
    x4.into_shape_with_order((n, h * w, c)).expect("contiguous").mean_axis(Axis(1)).expect("non-empty").into_dyn()
}

fn l2_normalize(x: &ArrayD<f64>) -> (Array2<f64>, Array1<f64>) {
    let x2 = as2(x);
    let norm = x2.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(1e-12));
    let y = &x2 / &norm.view().insert_axis(Axis(1));
    (y, norm)
}

impl BasicBlock {
    pub fn new<R: Rng + ?Sized>(in_c: usize, out_c: usize, stride: usize, rng: &mut R) -> Self {
        let main = Sequential::new(vec![
            Layer::Conv(Conv2d::new(in_c, out_c, 3, stride, 1, rng)),
            Layer::BatchNorm(BatchNorm::new(out_c, true)),
            Layer::Relu,
            Layer::Conv(Conv2d::new(out_c, out_c, 3, 1, 1, rng)),
            Layer::BatchNorm(BatchNorm::new(out_c, true)),
        ]);
        let shortcut = (stride != 1 || in_c != out_c).then(|| {
            Sequential::new(vec![
                Layer::Conv(Conv2d::new(in_c, out_c, 1, stride, 0, rng)),
                Layer::BatchNorm(BatchNorm::new(out_c, true)),
            ])
        });
        Self { main, shortcut }
    }
}

impl Layer {
    fn forward(&mut self, x: ArrayD<f64>, mode: Mode) -> (ArrayD<f64>, Cache) {
        let keep = mode == Mode::Train;
        match self {
            Layer::Conv(c) => {
                let (y, cols, in_shape) = c.apply(&x);
                (y, if keep { Cache::Conv { cols, in_shape } } else { Cache::None })
            }
            Layer::BatchNorm(bn) => {
                let (y, xhat, inv_std) = bn.train(&x);
                (y, if keep { Cache::BatchNorm { xhat, inv_std } } else { Cache::None })
            }
            Layer::Relu => {
                let y = x.mapv_into(|v| v.max(0.0));
                let cache = if keep { Cache::Relu { out: y.clone() } } else { Cache::None };
                (y, cache)
            }
            Layer::GlobalAvgPool => {
                let in_shape = as4(&x).dim();
                (pool(&x), Cache::Pool { in_shape })
            }
            Layer::Linear(l) => {
                let y = l.apply(&x);
                (y, if keep { Cache::Linear { x: x.into_dimensionality().expect("2D") } } else { Cache::None })
            }
            Layer::Block(b) => {
                let (main_y, main_c) = b.main.run(x.clone(), mode);
                let (short_y, short_c) = match &mut b.shortcut {
                    Some(s) => {
                        let (y, c) = s.run(x, mode);
                        (y, Some(c))
                    }
                    None => (x, None),
                };
                let y = (main_y + short_y).mapv_into(|v| v.max(0.0));
                let cache = if keep { Cache::Block { main: main_c, shortcut: short_c, out: y.clone() } } else { Cache::None };
                (y, cache)
            }
            Layer::L2Normalize => {
                let (y, norm) = l2_normalize(&x);
                let out = y.clone().into_dyn();
                (out, if keep { Cache::L2Normalize { y, norm } } else { Cache::None })
            }
        }
    }

    fn eval(&self, x: ArrayD<f64>) -> ArrayD<f64> {
        match self {
            Layer::Conv(c) => c.apply(&x).0,
            Layer::BatchNorm(bn) => bn.eval(&x),
            Layer::Relu => x.mapv_into(|v| v.max(0.0)),
            Layer::GlobalAvgPool => pool(&x),
            Layer::Linear(l) => l.apply(&x),
            Layer::Block(b) => {
                let main = b.main.forward_eval(x.clone());
                let short = match &b.shortcut {
                    Some(s) => s.forward_eval(x),
                    None => x,
                };
                (main + short).mapv_into(|v| v.max(0.0))
            }
            Layer::L2Normalize => l2_normalize(&x).0.into_dyn(),
        }
    }

    fn backward(&mut self, cache: Cache, dy: ArrayD<f64>, need_dx: bool) -> Option<ArrayD<f64>> {
        match (self, cache) {
            (Layer::Conv(c), Cache::Conv { cols, in_shape }) => c.backward(cols, in_shape, dy, need_dx),
            (Layer::BatchNorm(bn), Cache::BatchNorm { xhat, inv_std }) => Some(bn.backward(xhat, inv_std, dy)),
            (Layer::Relu, Cache::Relu { out }) => Some(relu_grad(dy, &out)),
            (Layer::GlobalAvgPool, Cache::Pool { in_shape }) => {
                let (n, h, w, c) = in_shape;
                let g = as2(&dy).to_owned() / (h * w) as f64;
                let dx = Array4::from_shape_fn((n, h, w, c), |(b, _, _, k)| g[[b, k]]);
                Some(dx.into_dyn())
            }
            (Layer::Linear(l), Cache::Linear { x }) => l.backward(x, dy, need_dx),
            (Layer::Block(b), Cache::Block { main, shortcut, out }) => {
                let d = relu_grad(dy, &out);
                let dmain = b.main.backward(main, d.clone(), need_dx);
                let dshort = match (&mut b.shortcut, shortcut) {
                    (Some(s), Some(c)) => s.backward(c, d, need_dx),
                    _ => Some(d),
                };
                match (dmain, dshort) {
                    (Some(a), Some(b)) if need_dx => Some(a + b),
                    _ => None,
                }
            }
            (Layer::L2Normalize, Cache::L2Normalize { y, norm }) => {
                let dy2 = as2(&dy);
                let dot = (&dy2 * &y).sum_axis(Axis(1)).insert_axis(Axis(1));
                let dx = (&dy2 - &(&y * &dot)) / &norm.insert_axis(Axis(1));
                Some(dx.into_dyn())
            }
            _ => panic!("cache does not match layer; was the forward run with gradients?"),
        }
    }

    fn visit_params<'a>(&'a self, out: &mut Vec<&'a Param>) {
        match self {
            Layer::Conv(c) => out.extend(std::iter::once(&c.weight).chain(c.bias.as_ref())),
            Layer::BatchNorm(bn) => out.extend(bn.gamma.iter().chain(bn.beta.iter())),
            Layer::Linear(l) => out.extend(std::iter::once(&l.weight).chain(l.bias.as_ref())),
            Layer::Block(b) => {
                b.main.layers.iter().for_each(|l| l.visit_params(out));
                if let Some(s) = &b.shortcut {
                    s.layers.iter().for_each(|l| l.visit_params(out));
                }
            }
            _ => {}
        }
    }

    fn visit_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        match self {
            Layer::Conv(c) => out.extend(std::iter::once(&mut c.weight).chain(c.bias.as_mut())),
            Layer::BatchNorm(bn) => out.extend(bn.gamma.iter_mut().chain(bn.beta.iter_mut())),
            Layer::Linear(l) => out.extend(std::iter::once(&mut l.weight).chain(l.bias.as_mut())),
            Layer::Block(b) => {
                b.main.layers.iter_mut().for_each(|l| l.visit_params_mut(out));
                if let Some(s) = &mut b.shortcut {
                    s.layers.iter_mut().for_each(|l| l.visit_params_mut(out));
                }
            }
            _ => {}
        }
    }

    fn visit_all_mut<'a>(&'a mut self, params: &mut Vec<&'a mut Param>, bufs: &mut Vec<&'a mut ArrayD<f64>>) {
        match self {
            Layer::BatchNorm(BatchNorm { gamma, beta, running_mean, running_var, .. }) => {
                params.extend(gamma.iter_mut().chain(beta.iter_mut()));
                bufs.extend([running_mean, running_var]);
            }
            Layer::Block(b) => {
                let BasicBlock { main, shortcut } = &mut **b;
                main.layers.iter_mut().for_each(|l| l.visit_all_mut(params, bufs));
                if let Some(s) = shortcut {
                    s.layers.iter_mut().for_each(|l| l.visit_all_mut(params, bufs));
                }
            }
            other => other.visit_params_mut(params),
        }
    }

    fn visit_buffers<'a>(&'a self, out: &mut Vec<&'a ArrayD<f64>>) {
        match self {
            Layer::BatchNorm(bn) => out.extend([&bn.running_mean, &bn.running_var]),
            Layer::Block(b) => {
                b.main.layers.iter().for_each(|l| l.visit_buffers(out));
                if let Some(s) = &b.shortcut {
                    s.layers.iter().for_each(|l| l.visit_buffers(out));
                }
            }
            _ => {}
        }
    }

    fn visit_buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut ArrayD<f64>>) {
        match self {
            Layer::BatchNorm(bn) => out.extend([&mut bn.running_mean, &mut bn.running_var]),
            Layer::Block(b) => {
                b.main.layers.iter_mut().for_each(|l| l.visit_buffers_mut(out));
                if let Some(s) = &mut b.shortcut {
                    s.layers.iter_mut().for_each(|l| l.visit_buffers_mut(out));
                }
            }
            _ => {}
        }
    }
}

fn relu_grad(dy: ArrayD<f64>, out: &ArrayD<f64>) -> ArrayD<f64> {
    let mut dy = dy;
    Zip::from(&mut dy).and(out).for_each(|d, &o| {
        if o <= 0.0 {
            *d = 0.0;
        }
    });
    dy
}

/// A feed-forward stack of layers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    fn run(&mut self, x: ArrayD<f64>, mode: Mode) -> (ArrayD<f64>, Vec<Cache>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for l in &mut self.layers {
            let (y, c) = l.forward(h, mode);
            caches.push(c);
            h = y;
        }
        (h, caches)
    }

    /// Training-mode forward (batch statistics, running stats updated),
    /// keeping the caches needed by [`Sequential::backward`].
    pub fn forward_train(&mut self, x: ArrayD<f64>) -> (ArrayD<f64>, Vec<Cache>) {
        self.run(x, Mode::Train)
    }

    /// Training-mode forward without caches, for stop-gradient branches.
    pub fn forward_nograd(&mut self, x: ArrayD<f64>) -> ArrayD<f64> {
        self.run(x, Mode::TrainNoGrad).0
    }

    /// Inference forward using running statistics.
    pub fn forward_eval(&self, x: ArrayD<f64>) -> ArrayD<f64> {
        self.layers.iter().fold(x, |h, l| l.eval(h))
    }

    /// Accumulates parameter gradients; returns the input gradient when
    /// `need_dx`.
    pub fn backward(&mut self, caches: Vec<Cache>, dy: ArrayD<f64>, need_dx: bool) -> Option<ArrayD<f64>> {
        assert_eq!(caches.len(), self.layers.len(), "cache count mismatch");
        let mut d = dy;
        let n = self.layers.len();
        for (i, (l, c)) in self.layers.iter_mut().zip(caches).enumerate().rev() {
            let need = i > 0 || need_dx;
            match l.backward(c, d, need) {
                Some(next) => d = next,
                None => {
                    debug_assert!(i == 0 && n > 0);
                    return None;
                }
            }
        }
        Some(d)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        self.layers.iter().for_each(|l| l.visit_params(&mut out));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        self.layers.iter_mut().for_each(|l| l.visit_params_mut(&mut out));
        out
    }

    pub fn buffers(&self) -> Vec<&ArrayD<f64>> {
        let mut out = Vec::new();
        self.layers.iter().for_each(|l| l.visit_buffers(&mut out));
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut ArrayD<f64>> {
        let mut out = Vec::new();
        self.layers.iter_mut().for_each(|l| l.visit_buffers_mut(&mut out));
        out
    }

    /// Parameters and buffers at once, in the same orders as
    /// [`Sequential::params`] and [`Sequential::buffers`].
    pub fn tensors_mut(&mut self) -> (Vec<&mut Param>, Vec<&mut ArrayD<f64>>) {
        let (mut params, mut bufs) = (Vec::new(), Vec::new());
        self.layers.iter_mut().for_each(|l| l.visit_all_mut(&mut params, &mut bufs));
        (params, bufs)
    }


    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

/// `(C,H,W)` images to an `(N,H,W,C)` batch.
pub fn to_nhwc(images: &[&ndarray::Array3<f64>]) -> ArrayD<f64> {
    let (c, h, w) = images[0].dim();
    let mut out = Array4::<f64>::zeros((images.len(), h, w, c));
    for (i, img) in images.iter().enumerate() {
        out.slice_mut(s![i, .., .., ..]).assign(&img.view().permuted_axes([1, 2, 0]));
    }
    out.into_dyn()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn loss_and_grad(y: &ArrayD<f64>, probe: &ArrayD<f64>) -> (f64, ArrayD<f64>) {
        ((y * probe).sum(), probe.clone())
    }

    fn check_input_grad(net: &mut Sequential, x: ArrayD<f64>, seed: u64) {
        let mut rng = stream(seed, &[]);
        let (y, caches) = net.forward_train(x.clone());
        let probe = ArrayD::from_shape_fn(y.raw_dim(), |_| rng.random_range(-1.0..1.0));
        net.zero_grad();
        let dx = net.backward(caches, loss_and_grad(&y, &probe).1, true).unwrap();
        let h = 1e-5;
        for idx in [0usize, 3, 7, x.len() - 1] {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            xm.as_slice_mut().unwrap()[idx] -= h;
            let fp = (net.clone().forward_nograd(xp) * &probe).sum();
            let fm = (net.clone().forward_nograd(xm) * &probe).sum();
            let fd = (fp - fm) / (2.0 * h);
            let an = dx.as_slice().unwrap()[idx];
            assert!((fd - an).abs() <= 1e-5 * (1.0 + fd.abs()), "idx {idx}: fd {fd} vs {an}");
        }
        let grads: Vec<ArrayD<f64>> = net.params().iter().map(|p| p.grad.clone()).collect();
        for (pi, g) in grads.iter().enumerate() {
            for idx in [0usize, g.len() / 2, g.len() - 1] {
                let f = |delta: f64| {
                    let mut n2 = net.clone();
                    n2.params_mut()[pi].value.as_slice_mut().unwrap()[idx] += delta;
                    (n2.forward_nograd(x.clone()) * &probe).sum()
                };
                let fd = (f(h) - f(-h)) / (2.0 * h);
                let an = g.as_slice().unwrap()[idx];
                assert!((fd - an).abs() <= 1e-5 * (1.0 + fd.abs()), "param {pi}[{idx}]: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn conv_stack_gradients() {
        let mut rng = stream(1, &[]);
        let mut net = Sequential::new(vec![
            Layer::Conv(Conv2d::new(3, 4, 3, 2, 1, &mut rng)),
            Layer::BatchNorm(BatchNorm::new(4, true)),
            Layer::Relu,
            Layer::Block(Box::new(BasicBlock::new(4, 6, 2, &mut rng))),
            Layer::GlobalAvgPool,
            Layer::Linear(Linear::new(6, 5, true, &mut rng)),
            Layer::BatchNorm(BatchNorm::new(5, false)),
            Layer::L2Normalize,
        ]);
        let x = ArrayD::from_shape_fn(IxDyn(&[3, 7, 6, 3]), |_| rng.random_range(-1.0..1.0));
        check_input_grad(&mut net, x, 2);
    }

    #[test]
    fn identity_block_gradients() {
        let mut rng = stream(3, &[]);
        let mut net = Sequential::new(vec![Layer::Block(Box::new(BasicBlock::new(3, 3, 1, &mut rng)))]);
        let x = ArrayD::from_shape_fn(IxDyn(&[2, 5, 5, 3]), |_| rng.random_range(-1.0..1.0));
        check_input_grad(&mut net, x, 4);
    }

    #[test]
    fn eval_uses_running_stats() {
        let mut bn = Sequential::new(vec![Layer::BatchNorm(BatchNorm::new(2, true))]);
        let x = ArrayD::from_shape_vec(IxDyn(&[2, 2]), vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let y = bn.forward_eval(x.clone());
        assert!((&y - &(&x / (1.0f64 + 1e-5).sqrt())).iter().all(|v| v.abs() < 1e-12));
        bn.forward_nograd(x);
        if let Layer::BatchNorm(b) = &bn.layers[0] {
            assert!((b.running_mean[[0]] - 0.2).abs() < 1e-12);
            assert!((b.running_var[[1]] - (0.9 + 0.1 * 8.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn nhwc_layout() {
        let img = ndarray::Array3::from_shape_fn((3, 2, 2), |(c, y, x)| (c * 100 + y * 10 + x) as f64);
        let b = to_nhwc(&[&img]);
        assert_eq!(b.shape(), &[1, 2, 2, 3]);
        assert_eq!(b[[0, 1, 0, 2]], 210.0);
    }
}
