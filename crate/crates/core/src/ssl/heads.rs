use rand::Rng;

use super::nn::{BatchNorm, Layer, Linear, Sequential};

/// Linear, BN, ReLU, Linear.
pub fn mlp2<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Sequential {
    Sequential::new(vec![
        Layer::Linear(Linear::new(input, hidden, true, rng)),
        Layer::BatchNorm(BatchNorm::new(hidden, true)),
        Layer::Relu,
        Layer::Linear(Linear::new(hidden, output, true, rng)),
    ])
}

/// Three bias-free linear layers, each followed by BN; the last BN has no
/// affine parameters.
pub fn simsiam_projector<R: Rng + ?Sized>(input: usize, dim: usize, rng: &mut R) -> Sequential {
    Sequential::new(vec![
        Layer::Linear(Linear::new(input, dim, false, rng)),
        Layer::BatchNorm(BatchNorm::new(dim, true)),
        Layer::Relu,
        Layer::Linear(Linear::new(dim, dim, false, rng)),
        Layer::BatchNorm(BatchNorm::new(dim, true)),
        Layer::Relu,
        Layer::Linear(Linear::new(dim, dim, false, rng)),
        Layer::BatchNorm(BatchNorm::new(dim, false)),
    ])
}

/// Bottleneck predictor: `dim -> hidden -> dim`.
pub fn simsiam_predictor<R: Rng + ?Sized>(dim: usize, hidden: usize, rng: &mut R) -> Sequential {
    Sequential::new(vec![
        Layer::Linear(Linear::new(dim, hidden, false, rng)),
        Layer::BatchNorm(BatchNorm::new(hidden, true)),
        Layer::Relu,
        Layer::Linear(Linear::new(hidden, dim, true, rng)),
    ])
}

/// Two-layer projector with unit-norm output.
pub fn swav_projector<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Sequential {
    let mut s = mlp2(input, hidden, output, rng);
    s.layers.push(Layer::L2Normalize);
    s
}
