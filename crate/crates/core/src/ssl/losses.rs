use ndarray::{Array1, Array2, Axis};

use super::sinkhorn::{sinkhorn, SinkhornConfig};
use super::{Result, SslError};

const MIN_NORM: f64 = 1e-12;

fn check_pair(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() || a.nrows() == 0 {
        return Err(SslError::Shape(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

fn norms(x: &Array2<f64>) -> Result<Array1<f64>> {
    let n = x.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if n.iter().any(|&v| !(v > MIN_NORM) || !v.is_finite()) {
        return Err(SslError::NumericGuard("zero-norm or non-finite vector in a cosine loss".into()));
    }
    Ok(n)
}

/// Row-wise cosine similarity and its gradient with respect to `p`.
pub fn cosine_rows(p: &Array2<f64>, z: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    check_pair(p, z)?;
    let (np, nz) = (norms(p)?, norms(z)?);
    let ph = p / &np.view().insert_axis(Axis(1));
    let zh = z / &nz.view().insert_axis(Axis(1));
    let cos = (&ph * &zh).sum_axis(Axis(1));
    let grad = (&zh - &(&ph * &cos.view().insert_axis(Axis(1)))) / &np.insert_axis(Axis(1));
    Ok((cos, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ByolLoss {
    pub loss: f64,
    /// Batch means of `2 - 2 cos` for each direction.
    pub terms: [f64; 2],
    pub grad_pred_a: Array2<f64>,
    pub grad_pred_b: Array2<f64>,
}

/// Symmetric BYOL regression loss; the targets receive no gradient.
pub fn byol_loss(pred_a: &Array2<f64>, targ_b: &Array2<f64>, pred_b: &Array2<f64>, targ_a: &Array2<f64>) -> Result<ByolLoss> {
    let (cab, gab) = cosine_rows(pred_a, targ_b)?;
    let (cba, gba) = cosine_rows(pred_b, targ_a)?;
    let n = pred_a.nrows() as f64;
    let t1 = cab.mapv(|c| 2.0 - 2.0 * c).sum() / n;
    let t2 = cba.mapv(|c| 2.0 - 2.0 * c).sum() / n;
    Ok(ByolLoss { loss: t1 + t2, terms: [t1, t2], grad_pred_a: gab * (-2.0 / n), grad_pred_b: gba * (-2.0 / n) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSiamLoss {
    pub loss: f64,
    pub grad_p1: Array2<f64>,
    pub grad_p2: Array2<f64>,
    /// Always zero: the `z` arguments are stop-gradient.
    pub grad_z1: Array2<f64>,
    pub grad_z2: Array2<f64>,
}

/// `½ D(p1, z2) + ½ D(p2, z1)` with `D` the negative mean cosine.
pub fn simsiam_loss(p1: &Array2<f64>, z2: &Array2<f64>, p2: &Array2<f64>, z1: &Array2<f64>) -> Result<SimSiamLoss> {
    let (c12, g12) = cosine_rows(p1, z2)?;
    let (c21, g21) = cosine_rows(p2, z1)?;
    let n = p1.nrows() as f64;
    let loss = -0.5 * c12.mean().unwrap_or(0.0) - 0.5 * c21.mean().unwrap_or(0.0);
    Ok(SimSiamLoss {
        loss,
        grad_p1: g12 * (-0.5 / n),
        grad_p2: g21 * (-0.5 / n),
        grad_z1: Array2::zeros(z1.raw_dim()),
        grad_z2: Array2::zeros(z2.raw_dim()),
    })
}

fn log_softmax_rows(s: &Array2<f64>) -> Array2<f64> {
    let mut out = s.clone();
    for mut r in out.rows_mut() {
        let m = r.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + r.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        r -= lse;
    }
    out
}

/// Swapped-prediction loss for fixed codes. `scores[v]` are crop `v`'s
/// prototype scores and `codes[g]` the assignments of global crop `g`.
/// Returns the loss and its gradient with respect to every score matrix.
pub fn swav_loss_with_codes(scores: &[Array2<f64>], codes: &[Array2<f64>], temperature: f64) -> Result<(f64, Vec<Array2<f64>>)> {
    let n_crops = scores.len();
    if codes.len() < 2 || n_crops < codes.len() {
        return Err(SslError::Config(format!("need ≥ 2 global crops among the crops, got {} of {n_crops}", codes.len())));
    }
    if !(temperature > 0.0) {
        return Err(SslError::Config(format!("temperature must be positive, got {temperature}")));
    }
    let b = scores[0].nrows() as f64;
    let scale = 1.0 / (codes.len() * (n_crops - 1)) as f64;
    let mut loss = 0.0;
    let mut grads: Vec<Array2<f64>> = scores.iter().map(|s| Array2::zeros(s.raw_dim())).collect();
    for (v, s) in scores.iter().enumerate() {
        let logp = log_softmax_rows(&(s / temperature));
        let p = logp.mapv(f64::exp);
        for (g, q) in codes.iter().enumerate() {
            if g == v {
                continue;
            }
            check_pair(s, q)?;
            loss -= (q * &logp).sum() / b * scale;
            let mass = q.sum_axis(Axis(1)).insert_axis(Axis(1));
            grads[v] += &((&p * &mass - q) * (scale / (b * temperature)));
        }
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwavLoss {
    pub loss: f64,
    pub grad_features: Vec<Array2<f64>>,
    pub grad_prototypes: Array2<f64>,
    pub codes: Vec<Array2<f64>>,
}

/// SwAV loss over `features` (global crops first, each `B x D`, unit
/// norm) against `prototypes` (`P x D`, unit rows). Codes come from the
/// first `n_global` crops and carry no gradient.
pub fn swav_loss(
    features: &[Array2<f64>],
    prototypes: &Array2<f64>,
    temperature: f64,
    sinkhorn_cfg: &SinkhornConfig,
    n_global: usize,
) -> Result<SwavLoss> {
    if n_global < 2 || features.len() < n_global {
        return Err(SslError::Config(format!("need ≥ 2 global crops, got {n_global} of {}", features.len())));
    }
    for f in features {
        if f.ncols() != prototypes.ncols() || f.nrows() != features[0].nrows() {
            return Err(SslError::Shape(format!("feature {:?} vs prototypes {:?}", f.dim(), prototypes.dim())));
        }
    }
    let scores: Vec<Array2<f64>> = features.iter().map(|f| f.dot(&prototypes.t())).collect();
    let codes = scores[..n_global].iter().map(|s| sinkhorn(s, sinkhorn_cfg)).collect::<Result<Vec<_>>>()?;
    let (loss, dscores) = swav_loss_with_codes(&scores, &codes, temperature)?;
    let mut grad_prototypes = Array2::zeros(prototypes.raw_dim());
    let grad_features = dscores
        .iter()
        .zip(features)
        .map(|(ds, f)| {
            grad_prototypes += &ds.t().dot(f);
            ds.dot(prototypes)
        })
        .collect();
    Ok(SwavLoss { loss, grad_features, grad_prototypes, codes })
}
