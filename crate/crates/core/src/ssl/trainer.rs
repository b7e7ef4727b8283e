use ndarray::{concatenate, s, Array2, ArrayD, Axis, Ix2, IxDyn};
use rand::Rng;

use super::encoder::{adapt_encoder, AdaptMode, EncoderSpec};
use super::heads::{mlp2, simsiam_predictor, simsiam_projector, swav_projector};
use super::losses::{byol_loss, simsiam_loss, swav_loss};
use super::method::MethodConfig;
use super::nn::{to_nhwc, Param, Sequential};
use super::optim::{ema_update, grad_norm, Optimizer, OptimizerConfig};
use super::{Result, SslError};
use crate::augment::{AugmentedPair, AugmentedView};
use crate::rng::{stream, tags};

/// A training batch in NHWC layout.
#[derive(Debug, Clone)]
pub enum Batch {
    Pair { a: ArrayD<f64>, b: ArrayD<f64> },
    /// One tensor per crop slot, global crops first.
    Crops(Vec<ArrayD<f64>>),
}

impl Batch {
    pub fn from_pairs(pairs: &[AugmentedPair]) -> Self {
        let a: Vec<_> = pairs.iter().map(|p| p.a.stacked()).collect();
        let b: Vec<_> = pairs.iter().map(|p| p.b.stacked()).collect();
        Batch::Pair { a: to_nhwc(&a.iter().collect::<Vec<_>>()), b: to_nhwc(&b.iter().collect::<Vec<_>>()) }
    }

    /// `crops[i][v]` is crop `v` of sample `i`.
    pub fn from_crops(crops: &[Vec<AugmentedView>]) -> Self {
        let n = crops[0].len();
        Batch::Crops(
            (0..n)
                .map(|v| {
                    let imgs: Vec<_> = crops.iter().map(|c| c[v].stacked()).collect();
                    to_nhwc(&imgs.iter().collect::<Vec<_>>())
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        match self {
            Batch::Pair { a, .. } => a.shape()[0],
            Batch::Crops(c) => c.first().map_or(0, |t| t.shape()[0]),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

/// Networks, optimizer state and counters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub method: MethodConfig,
    pub encoder_spec: EncoderSpec,
    pub encoder: Sequential,
    pub projector: Sequential,
    pub predictor: Option<Sequential>,
    pub target_encoder: Option<Sequential>,
    pub target_projector: Option<Sequential>,
    /// `P x D`, rows kept at unit norm.
    pub prototypes: Option<Param>,
    pub optimizer: Optimizer,
    pub epoch: u64,
    pub step: u64,
    pub seed: u64,
}

fn to2(x: ArrayD<f64>) -> Array2<f64> {
    x.into_dimensionality::<Ix2>().expect("head outputs are 2D")
}

fn normalize_rows(p: &mut ArrayD<f64>) {
    let mut m = p.view_mut().into_dimensionality::<Ix2>().expect("2D prototypes");
    for mut r in m.rows_mut() {
        let n = r.dot(&r).sqrt().max(1e-12);
        r /= n;
    }
}

impl TrainState {
    pub fn new(method: MethodConfig, encoder_spec: EncoderSpec, optimizer: OptimizerConfig, seed: u64) -> Result<Self> {
        method.validate()?;
        optimizer.validate()?;
        let mut rng = stream(seed, &[tags::INIT]);
        let encoder = encoder_spec.build(&mut rng)?;
        let f = encoder_spec.feature_dim;
        let (projector, predictor, prototypes) = match &method {
            MethodConfig::Byol(c) => (mlp2(f, c.proj_hidden, c.proj_out, &mut rng), Some(mlp2(c.proj_out, c.pred_hidden, c.proj_out, &mut rng)), None),
            MethodConfig::SimSiam(c) => (simsiam_projector(f, c.proj_dim, &mut rng), Some(simsiam_predictor(c.proj_dim, c.pred_hidden, &mut rng)), None),
            MethodConfig::Swav(c) => {
                let mut protos = ArrayD::from_shape_fn(IxDyn(&[c.prototypes, c.proj_out]), |_| rng.random_range(-1.0..1.0));
                normalize_rows(&mut protos);
                (swav_projector(f, c.proj_hidden, c.proj_out, &mut rng), None, Some(Param::new(protos)))
            }
        };
        let (target_encoder, target_projector) = match method {
            MethodConfig::Byol(_) => (Some(encoder.clone()), Some(projector.clone())),
            _ => (None, None),
        };
        Ok(Self {
            method,
            encoder_spec,
            encoder,
            projector,
            predictor,
            target_encoder,
            target_projector,
            prototypes,
            optimizer: Optimizer::new(optimizer),
            epoch: 0,
            step: 0,
            seed,
        })
    }

    /// Switches a freshly built RGB state to RGB-D input.
    pub fn adapt_to_depth(&mut self, mode: AdaptMode) -> Result<()> {
        adapt_encoder(&mut self.encoder, mode)?;
        if let Some(t) = &mut self.target_encoder {
            adapt_encoder(t, mode)?;
        }
        self.encoder_spec.in_channels = 4;
        self.optimizer.state.clear();
        Ok(())
    }

    fn trainable_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.encoder.params_mut();
        out.extend(self.projector.params_mut());
        if let Some(p) = &mut self.predictor {
            out.extend(p.params_mut());
        }
        if let Some(p) = &mut self.prototypes {
            out.push(p);
        }
        out
    }

    /// One optimization step at learning rate `lr`; `total_steps` drives
    /// the τ schedule.
    pub fn train_step(&mut self, batch: &Batch, lr: f64, total_steps: u64) -> Result<StepMetrics> {
        if batch.len() < 2 {
            return Err(SslError::Shape("batch-norm training needs at least two samples".into()));
        }
        for p in self.trainable_mut() {
            p.zero_grad();
        }
        let loss = match (&self.method, batch) {
            (MethodConfig::Byol(_), Batch::Pair { a, b }) => self.byol_step(a, b)?,
            (MethodConfig::SimSiam(_), Batch::Pair { a, b }) => self.simsiam_step(a, b)?,
            (MethodConfig::Swav(_), Batch::Crops(c)) => self.swav_step(c)?,
            (m, _) => return Err(SslError::Config(format!("batch kind does not match method {}", m.name()))),
        };
        if !loss.is_finite() {
            return Err(SslError::NonFiniteLoss { step: self.step, detail: format!("{} loss = {loss}", self.method.name()) });
        }
        let step = self.step;
        let mut opt = std::mem::replace(&mut self.optimizer, Optimizer::new(OptimizerConfig::default()));
        let mut params = self.trainable_mut();
        let gn = grad_norm(&params);
        let res = if gn.is_finite() { opt.step(&mut params, lr) } else { Ok(()) };
        self.optimizer = opt;
        res?;
        if !gn.is_finite() {
            return Err(SslError::NonFiniteLoss { step, detail: format!("gradient norm = {gn}") });
        }
        if let MethodConfig::Byol(c) = &self.method {
            let tau = c.tau.at(step, total_steps);
            ema_update(self.target_encoder.as_mut().expect("byol target"), &self.encoder, tau)?;
            ema_update(self.target_projector.as_mut().expect("byol target"), &self.projector, tau)?;
        }
        if let Some(p) = &mut self.prototypes {
            normalize_rows(&mut p.value);
        }
        self.step += 1;
        Ok(StepMetrics { loss, grad_norm: gn, lr })
    }

    fn byol_step(&mut self, a: &ArrayD<f64>, b: &ArrayD<f64>) -> Result<f64> {
        let predictor = self.predictor.as_mut().expect("byol predictor");
        let mut online = |x: &ArrayD<f64>| {
            let (h, ce) = self.encoder.forward_train(x.clone());
            let (z, cp) = self.projector.forward_train(h);
            let (p, cq) = predictor.forward_train(z);
            (to2(p), (ce, cp, cq))
        };
        let (pa, ca) = online(a);
        let (pb, cb) = online(b);
        let tenc = self.target_encoder.as_mut().expect("byol target");
        let tproj = self.target_projector.as_mut().expect("byol target");
        let ta = to2(tproj.forward_nograd(tenc.forward_nograd(a.clone())));
        let tb = to2(tproj.forward_nograd(tenc.forward_nograd(b.clone())));
        let out = byol_loss(&pa, &tb, &pb, &ta)?;
        for ((ce, cp, cq), g) in [(ca, out.grad_pred_a), (cb, out.grad_pred_b)] {
            let dz = predictor.backward(cq, g.into_dyn(), true).expect("dx");
            let dh = self.projector.backward(cp, dz, true).expect("dx");
            self.encoder.backward(ce, dh, false);
        }
        Ok(out.loss)
    }

    fn simsiam_step(&mut self, a: &ArrayD<f64>, b: &ArrayD<f64>) -> Result<f64> {
        let predictor = self.predictor.as_mut().expect("simsiam predictor");
        let mut online = |x: &ArrayD<f64>| {
            let (h, ce) = self.encoder.forward_train(x.clone());
            let (z, cp) = self.projector.forward_train(h);
            let (p, cq) = predictor.forward_train(z.clone());
            (to2(z), to2(p), (ce, cp, cq))
        };
        let (z1, p1, c1) = online(a);
        let (z2, p2, c2) = online(b);
        let out = simsiam_loss(&p1, &z2, &p2, &z1)?;
        for ((ce, cp, cq), gp, gz) in [(c1, out.grad_p1, out.grad_z1), (c2, out.grad_p2, out.grad_z2)] {
            let dz = predictor.backward(cq, gp.into_dyn(), true).expect("dx") + gz.into_dyn();
            let dh = self.projector.backward(cp, dz, true).expect("dx");
            self.encoder.backward(ce, dh, false);
        }
        Ok(out.loss)
    }

    fn swav_step(&mut self, crops: &[ArrayD<f64>]) -> Result<f64> {
        let MethodConfig::Swav(cfg) = &self.method else { unreachable!() };
        let n_global = cfg.multi_crop.n_global;
        if crops.len() < 2 || crops.len() < n_global {
            return Err(SslError::Config(format!("swav needs ≥ 2 global crops, got {} crops", crops.len())));
        }
        let b = crops[0].shape()[0];
        let mut groups: Vec<(usize, usize)> = Vec::new();
        for (i, c) in crops.iter().enumerate() {
            match groups.last_mut() {
                Some((start, end)) if crops[*start].shape() == c.shape() => *end = i + 1,
                _ => groups.push((i, i + 1)),
            }
        }
        let mut enc_caches = Vec::new();
        let mut feats = Vec::new();
        for &(start, end) in &groups {
            let views: Vec<_> = crops[start..end].iter().map(|c| c.view()).collect();
            let x = concatenate(Axis(0), &views).map_err(|e| SslError::Shape(e.to_string()))?;
            let (h, c) = self.encoder.forward_train(x);
            enc_caches.push(c);
            feats.push(h);
        }
        let hviews: Vec<_> = feats.iter().map(|h| h.view()).collect();
        let h = concatenate(Axis(0), &hviews).map_err(|e| SslError::Shape(e.to_string()))?;
        let (z, cp) = self.projector.forward_train(h);
        let z = to2(z);
        let per_crop: Vec<Array2<f64>> = (0..crops.len()).map(|v| z.slice(s![v * b..(v + 1) * b, ..]).to_owned()).collect();
        let protos = self.prototypes.as_mut().expect("swav prototypes");
        let pv = protos.value.view().into_dimensionality::<Ix2>().expect("2D").to_owned();
        let out = swav_loss(&per_crop, &pv, cfg.temperature, &cfg.sinkhorn, n_global)?;
        protos.grad += &out.grad_prototypes.into_dyn();
        let gviews: Vec<_> = out.grad_features.iter().map(|g| g.view()).collect();
        let dz = concatenate(Axis(0), &gviews).expect("same widths");
        let dh = self.projector.backward(cp, dz.into_dyn(), true).expect("dx");
        for (&(start, end), c) in groups.iter().zip(enc_caches) {
            let part = dh.slice(s![start * b..end * b, ..]).to_owned();
            self.encoder.backward(c, part.into_dyn(), false);
        }
        Ok(out.loss)
    }

    /// Eval-mode encoder features, computed in chunks.
    pub fn features(&self, x: &ArrayD<f64>) -> Array2<f64> {
        encode(&self.encoder, x)
    }
}

/// Eval-mode features of an NHWC batch, 256 samples at a time.
pub fn encode(encoder: &Sequential, x: &ArrayD<f64>) -> Array2<f64> {
    let n = x.shape()[0];
    let chunks: Vec<Array2<f64>> = (0..n)
        .step_by(256)
        .map(|i| to2(encoder.forward_eval(x.slice_axis(Axis(0), ndarray::Slice::from(i..(i + 256).min(n))).to_owned())))
        .collect();
    let views: Vec<_> = chunks.iter().map(|c| c.view()).collect();
    concatenate(Axis(0), &views).expect("same widths")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::MultiCrop;
    use crate::ssl::method::{ByolConfig, SimSiamConfig, SwavConfig};

    fn spec() -> EncoderSpec {
        EncoderSpec { feature_dim: 16, ..Default::default() }
    }

    fn byol() -> MethodConfig {
        MethodConfig::Byol(ByolConfig { proj_hidden: 32, proj_out: 16, pred_hidden: 32, ..Default::default() })
    }

    fn images(n: usize, size: usize, seed: u64) -> ArrayD<f64> {
        let mut rng = stream(seed, &[]);
        ArrayD::from_shape_fn(IxDyn(&[n, size, size, 3]), |_| rng.random::<f64>())
    }

    fn pair(seed: u64) -> Batch {
        Batch::Pair { a: images(4, 8, seed), b: images(4, 8, seed + 1) }
    }

    #[test]
    fn zero_lr_keeps_params_and_moves_target() {
        let mut s = TrainState::new(byol(), spec(), OptimizerConfig::default(), 1).unwrap();
        let mut other = TrainState::new(byol(), spec(), OptimizerConfig::default(), 2).unwrap();
        s.target_encoder = Some(other.encoder.clone());
        let before = s.encoder.clone();
        s.train_step(&pair(3), 0.0, 10).unwrap();
        let values = |n: &Sequential| n.params().iter().map(|p| p.value.clone()).collect::<Vec<_>>();
        assert_eq!(values(&before), values(&s.encoder));
        let t = s.target_encoder.as_mut().unwrap().params()[0].value.clone();
        assert_ne!(t, other.encoder.params_mut()[0].value);
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut s = TrainState::new(byol(), spec(), OptimizerConfig::default(), 7).unwrap();
            (0..3).map(|i| s.train_step(&pair(i), 0.05, 3).unwrap().loss).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn byol_overfits_one_batch() {
        let mut s = TrainState::new(byol(), spec(), OptimizerConfig::Sgd { lr: 0.1, momentum: 0.9, weight_decay: 0.0 }, 3).unwrap();
        let batch = Batch::Pair { a: images(2, 8, 4), b: images(2, 8, 5) };
        let first = s.train_step(&batch, 0.1, 50).unwrap().loss;
        let last = (0..49).map(|_| s.train_step(&batch, 0.1, 50).unwrap().loss).last().unwrap();
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn simsiam_and_swav_steps_run() {
        let simsiam = MethodConfig::SimSiam(SimSiamConfig { proj_dim: 16, pred_hidden: 8 });
        let mut s = TrainState::new(simsiam, spec(), OptimizerConfig::default(), 1).unwrap();
        let m = s.train_step(&pair(1), 0.05, 10).unwrap();
        assert!(m.loss.is_finite() && m.loss >= -1.0 && m.grad_norm > 0.0);
        let swav = MethodConfig::Swav(SwavConfig {
            proj_hidden: 16,
            proj_out: 8,
            prototypes: 5,
            multi_crop: MultiCrop { n_local: 2, local_size: 4, ..Default::default() },
            ..Default::default()
        });
        let mut s = TrainState::new(swav, spec(), OptimizerConfig::adam(1e-3, 1e-6), 1).unwrap();
        let crops = Batch::Crops(vec![images(4, 8, 1), images(4, 8, 2), images(4, 4, 3), images(4, 4, 4)]);
        let m = s.train_step(&crops, 1e-3, 10).unwrap();
        assert!(m.loss.is_finite());
        let p = s.prototypes.as_ref().unwrap().value.view().into_dimensionality::<Ix2>().unwrap().to_owned();
        for r in p.rows() {
            assert!((r.dot(&r) - 1.0).abs() < 1e-12);
        }
        assert!(s.train_step(&pair(1), 1e-3, 10).is_err());
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut s = TrainState::new(byol(), spec(), OptimizerConfig::default(), 1).unwrap();
        let mut a = images(4, 8, 1);
        a[[0, 0, 0, 0]] = f64::NAN;
        let r = s.train_step(&Batch::Pair { a: a.clone(), b: a }, 0.05, 10);
        assert!(matches!(r, Err(SslError::NonFiniteLoss { .. }) | Err(SslError::NumericGuard(_))), "{r:?}");
    }
}
