//! Central finite-difference check of analytic gradients, plus a generator
//! of small random networks to run it on.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::matrix::Matrix;
use super::model::{batch_loss, compute_gradients, forward, init_params, Targets, TrainedModel};
use super::spec::{Activation, LayerSpec, Loss, ModelSpec, OptimizerSpec};
use super::MlError;

/// Step of the central difference.
pub const FD_STEP: f64 = 1e-5;

/// Denominators below this are clamped so that two near-zero gradients
/// compare by absolute rather than relative difference.
const DENOM_FLOOR: f64 = 1e-6;

/// ReLU pre-activations closer to zero than this are treated as sitting on
/// the kink, where no finite difference is meaningful.
const KINK_MARGIN: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Compares every weight and bias gradient against `(L(w+h) - L(w-h)) / 2h`.
/// The dropout mask, when `dropout_seed` is given, is the same for all passes.
pub fn check_gradients(
    model: &TrainedModel,
    features: &Matrix,
    targets: &Targets,
    dropout_seed: Option<u64>,
) -> Result<GradCheck, MlError> {
    let analytic = compute_gradients(model, features, targets, dropout_seed)?;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let numeric = |probe: &mut TrainedModel, at: Slot| {
        let orig = *at.get(probe);
        *at.get(probe) = orig + FD_STEP;
        let up = batch_loss(probe, features, targets, dropout_seed);
        *at.get(probe) = orig - FD_STEP;
        let down = batch_loss(probe, features, targets, dropout_seed);
        *at.get(probe) = orig;
        Ok::<f64, MlError>((up? - down?) / (2.0 * FD_STEP))
    };
    for (l, g) in analytic.params.iter().enumerate() {
        for (i, &a) in g.weights.data().iter().enumerate() {
            let n = numeric(&mut probe, Slot::Weight(l, i))?;
            worst = worst.max(relative_error(a, n));
            checked += 1;
        }
        for (i, &a) in g.bias.iter().enumerate() {
            let n = numeric(&mut probe, Slot::Bias(l, i))?;
            worst = worst.max(relative_error(a, n));
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        checked,
    })
}

#[derive(Clone, Copy)]
enum Slot {
    Weight(usize, usize),
    Bias(usize, usize),
}

impl Slot {
    fn get(self, m: &mut TrainedModel) -> &mut f64 {
        match self {
            Slot::Weight(l, i) => &mut m.params[l].weights.data_mut()[i],
            Slot::Bias(l, i) => &mut m.params[l].bias[i],
        }
    }
}

/// One randomly drawn network with a batch and targets for it.
#[derive(Debug, Clone)]
pub struct GradCase {
    pub model: TrainedModel,
    pub features: Matrix,
    pub targets: Targets,
    pub dropout_seed: Option<u64>,
}

/// At most 3 dense layers of at most 8 units, optional dropout, a random
/// loss with a matching head, and at most 8 samples.
pub fn random_case<R: Rng>(rng: &mut R) -> GradCase {
    let input_dim = rng.gen_range(1..=8);
    let dense = rng.gen_range(1..=3);
    let loss = *[
        Loss::SparseCategoricalCrossentropy,
        Loss::BinaryCrossentropy,
        Loss::Mse,
    ]
    .choose(rng)
    .unwrap();
    let mut layers = Vec::new();
    for i in 0..dense {
        if rng.gen_bool(0.25) {
            layers.push(LayerSpec::dropout(rng.gen_range(0.1..0.5)));
        }
        let last = i + 1 == dense;
        layers.push(if !last {
            let act = *[Activation::Relu, Activation::Sigmoid, Activation::Linear]
                .choose(rng)
                .unwrap();
            LayerSpec::dense(rng.gen_range(1..=8), act)
        } else {
            match loss {
                Loss::SparseCategoricalCrossentropy => {
                    LayerSpec::dense(rng.gen_range(2..=8), Activation::Softmax)
                }
                Loss::BinaryCrossentropy => LayerSpec::dense(1, Activation::Sigmoid),
                Loss::Mse => {
                    let act = *[Activation::Linear, Activation::Sigmoid]
                        .choose(rng)
                        .unwrap();
                    LayerSpec::dense(rng.gen_range(1..=8), act)
                }
            }
        });
    }
    let spec = ModelSpec {
        input_dim,
        layers,
        loss,
        optimizer: OptimizerSpec::default(),
        metrics: Vec::new(),
    };
    let mut model = init_params(&spec, rng.gen());
    for p in &mut model.params {
        p.bias
            .iter_mut()
            .for_each(|b| *b = rng.gen_range(-0.5..0.5));
    }
    let out = spec.output_dim();
    let rows = rng.gen_range(1..=8);
    let seed: u64 = rng.gen();
    loop {
        let data = (0..rows * input_dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let features = Matrix::from_vec(rows, input_dim, data);
        if near_relu_kink(&model, &features, seed) {
            continue;
        }
        let targets = match loss {
            Loss::SparseCategoricalCrossentropy => {
                Targets::Classes((0..rows).map(|_| rng.gen_range(0..out)).collect())
            }
            Loss::BinaryCrossentropy => {
                Targets::Classes((0..rows).map(|_| rng.gen_range(0..2)).collect())
            }
            Loss::Mse => {
                let t = (0..rows * out).map(|_| rng.gen_range(-1.0..1.0)).collect();
                Targets::Values(Matrix::from_vec(rows, out, t))
            }
        };
        return GradCase {
            model,
            features,
            targets,
            dropout_seed: Some(seed),
        };
    }
}

fn near_relu_kink(model: &TrainedModel, features: &Matrix, seed: u64) -> bool {
    let Ok(pass) = forward(model, features, true, seed) else {
        return true;
    };
    let mut dense = model.params.iter();
    model.spec.layers.iter().enumerate().any(|(i, l)| match l {
        LayerSpec::Dense { activation, .. } => {
            let p = dense.next().expect("params match spec");
            *activation == Activation::Relu
                && pass.outputs[i]
                    .affine(&p.weights, &p.bias)
                    .data()
                    .iter()
                    .any(|z| z.abs() < KINK_MARGIN)
        }
        LayerSpec::Dropout { .. } => false,
    })
}
