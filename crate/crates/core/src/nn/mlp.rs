use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FlopsCounter, Tensor};
use crate::error::{Error, Result};

/// One dense layer: `weight` is `[d_in x d_out]`, `bias` is `[d_out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn d_in(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.dims()[1]
    }

    fn zeros_like(&self) -> DenseLayer {
        DenseLayer {
            weight: Tensor::zeros(self.weight.dims().to_vec()),
            bias: Tensor::zeros(self.bias.dims().to_vec()),
        }
    }
}

/// Classifier parameters: rectifier on hidden layers, identity on the output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layers: Vec<DenseLayer>,
}

/// Parameter gradients, laid out exactly like the [`MlpParams`] they belong to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    layers: Vec<DenseLayer>,
}

/// Activations kept by [`forward`] for the matching [`backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input of every layer (`inputs[0]` is the batch itself).
    inputs: Vec<Tensor>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].rows()
    }
}

macro_rules! flat_views {
    ($ty:ty) => {
        impl $ty {
            pub fn layers(&self) -> &[DenseLayer] {
                &self.layers
            }

            pub fn num_scalars(&self) -> usize {
                self.layers
                    .iter()
                    .map(|l| l.weight.len() + l.bias.len())
                    .sum()
            }

            /// All scalars in layer order (weights then bias per layer).
            pub fn iter(&self) -> impl Iterator<Item = &f64> {
                self.layers
                    .iter()
                    .flat_map(|l| l.weight.data().iter().chain(l.bias.data().iter()))
            }

            pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
                self.layers.iter_mut().flat_map(|l| {
                    l.weight
                        .data_mut()
                        .iter_mut()
                        .chain(l.bias.data_mut().iter_mut())
                })
            }

            pub fn to_flat(&self) -> Vec<f64> {
                self.iter().copied().collect()
            }
        }
    };
}

flat_views!(MlpParams);
flat_views!(Gradients);

impl MlpParams {
    /// Builds parameters from explicit layers, validating the chain of dims.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.dims().len() != 2 || l.bias.dims() != [l.d_out()] {
                return Err(Error::Shape(format!("layer {i} has malformed weight/bias")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].d_out() != pair[1].d_in() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].d_out(),
                    i + 1,
                    pair[1].d_in()
                )));
            }
        }
        Ok(MlpParams { layers })
    }

    /// Seeded initialization: weights uniform in `±sqrt(6 / (d_in + d_out))`,
    /// biases zero. `dims` lists input, hidden widths and class count.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Shape(format!("invalid architecture {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (d_in, d_out) = (w[0], w[1]);
                let limit = (6.0 / (d_in + d_out) as f64).sqrt();
                let data = (0..d_in * d_out)
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect();
                DenseLayer {
                    weight: Tensor::new(vec![d_in, d_out], data).expect("dims match"),
                    bias: Tensor::zeros(vec![d_out]),
                }
            })
            .collect();
        MlpParams::from_layers(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn class_count(&self) -> usize {
        self.layers.last().expect("non-empty").d_out()
    }

    /// `[d_in, hidden..., C]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(DenseLayer::d_out))
            .collect()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self.layers.iter().map(DenseLayer::zeros_like).collect(),
        }
    }

    pub fn same_shape(&self, grads: &Gradients) -> bool {
        self.layers.len() == grads.layers.len()
            && self
                .layers
                .iter()
                .zip(&grads.layers)
                .all(|(p, g)| p.weight.dims() == g.weight.dims() && p.bias.dims() == g.bias.dims())
    }

    /// Overwrites every scalar from a flat vector in [`MlpParams::iter`] order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::Shape(format!(
                "flat vector has {} values, params have {}",
                flat.len(),
                self.num_scalars()
            )));
        }
        for (dst, src) in self.iter_mut().zip(flat) {
            *dst = *src;
        }
        Ok(())
    }
}

impl Gradients {
    pub fn from_flat_like(params: &MlpParams, flat: &[f64]) -> Result<Self> {
        let mut g = params.zero_gradients();
        if flat.len() != g.num_scalars() {
            return Err(Error::Shape("flat gradient length mismatch".into()));
        }
        for (dst, src) in g.iter_mut().zip(flat) {
            *dst = *src;
        }
        Ok(g)
    }
}

fn check_input(params: &MlpParams, features: &Tensor) -> Result<()> {
    if features.dims().len() != 2 || features.cols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "features {:?} do not match input dim {}",
            features.dims(),
            params.input_dim()
        )));
    }
    Ok(())
}

/// `out[n x d_out] = input[n x d_in] * weight + bias`.
fn affine(input: &Tensor, layer: &DenseLayer) -> Tensor {
    let (n, d_out) = (input.rows(), layer.d_out());
    let w = layer.weight.data();
    let mut out = Vec::with_capacity(n * d_out);
    for i in 0..n {
        let mut row = layer.bias.data().to_vec();
        for (k, &x) in input.row(i).iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let w_row = &w[k * d_out..(k + 1) * d_out];
            for (o, &wv) in row.iter_mut().zip(w_row) {
                *o += x * wv;
            }
        }
        out.extend_from_slice(&row);
    }
    Tensor::new(vec![n, d_out], out).expect("affine dims")
}

fn relu_in_place(t: &mut Tensor) {
    for v in t.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn run_layers(params: &MlpParams, features: &Tensor, keep: bool) -> (Tensor, Vec<Tensor>) {
    let last = params.layers.len() - 1;
    let mut inputs = Vec::new();
    let mut act = features.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let mut z = affine(&act, layer);
        if l < last {
            relu_in_place(&mut z);
        }
        if keep {
            inputs.push(act);
        }
        act = z;
    }
    (act, inputs)
}

/// Forward pass over a batch `[n x d]`, charging `n` forward sample-units.
pub fn forward(
    params: &MlpParams,
    features: &Tensor,
    meter: &mut FlopsCounter,
) -> Result<(Tensor, ForwardCache)> {
    check_input(params, features)?;
    let (logits, inputs) = run_layers(params, features, true);
    logits.ensure_finite("forward logits")?;
    meter.charge_forward(features.rows());
    Ok((logits, ForwardCache { inputs }))
}

/// Unmetered forward pass used for evaluation (prediction is not training cost).
pub fn infer(params: &MlpParams, features: &Tensor) -> Result<Tensor> {
    check_input(params, features)?;
    let (logits, _) = run_layers(params, features, false);
    logits.ensure_finite("inference logits")?;
    Ok(logits)
}

/// Arg-max class per row.
pub fn predict(params: &MlpParams, features: &Tensor) -> Result<Vec<usize>> {
    let logits = infer(params, features)?;
    Ok(argmax_rows(&logits))
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Exact gradients of a scalar loss given its gradient w.r.t. the logits.
/// Charges `n` backward sample-units.
pub fn backward(
    params: &MlpParams,
    cache: &ForwardCache,
    dlogits: &Tensor,
    meter: &mut FlopsCounter,
) -> Result<Gradients> {
    let n = cache.batch_size();
    if cache.inputs.len() != params.layers.len() {
        return Err(Error::Shape(
            "cache was produced by a different network".into(),
        ));
    }
    if dlogits.dims() != [n, params.class_count()] {
        return Err(Error::Shape(format!(
            "dlogits {:?} do not match batch {n} x {} classes",
            dlogits.dims(),
            params.class_count()
        )));
    }
    for (input, layer) in cache.inputs.iter().zip(&params.layers) {
        if input.cols() != layer.d_in() || input.rows() != n {
            return Err(Error::Shape("cache activations do not match params".into()));
        }
    }

    let mut grads = params.zero_gradients();
    let mut delta = dlogits.clone();
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let input = &cache.inputs[l];
        let (d_in, d_out) = (layer.d_in(), layer.d_out());
        let g = &mut grads.layers[l];
        {
            let gw = g.weight.data_mut();
            for i in 0..n {
                let a = input.row(i);
                let dz = delta.row(i);
                for (k, &av) in a.iter().enumerate() {
                    if av == 0.0 {
                        continue;
                    }
                    let gw_row = &mut gw[k * d_out..(k + 1) * d_out];
                    for (gv, &dv) in gw_row.iter_mut().zip(dz) {
                        *gv += av * dv;
                    }
                }
            }
        }
        {
            let gb = g.bias.data_mut();
            for i in 0..n {
                for (gv, &dv) in gb.iter_mut().zip(delta.row(i)) {
                    *gv += dv;
                }
            }
        }
        if l > 0 {
            // Propagate through the weight, then gate by the rectifier: a hidden
            // activation of zero means its pre-activation was non-positive.
            let w = layer.weight.data();
            let mut prev = Vec::with_capacity(n * d_in);
            for i in 0..n {
                let dz = delta.row(i);
                let a = input.row(i);
                for k in 0..d_in {
                    if a[k] > 0.0 {
                        let w_row = &w[k * d_out..(k + 1) * d_out];
                        prev.push(w_row.iter().zip(dz).map(|(wv, dv)| wv * dv).sum());
                    } else {
                        prev.push(0.0);
                    }
                }
            }
            delta = Tensor::new(vec![n, d_in], prev).expect("delta dims");
        }
    }
    meter.charge_backward(n);
    Ok(grads)
}

/// Plain SGD: returns `params - lr * grads`.
pub fn sgd_step(params: &MlpParams, grads: &Gradients, lr: f64) -> Result<MlpParams> {
    if !params.same_shape(grads) {
        return Err(Error::Shape("gradient shapes differ from params".into()));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate {lr}")));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("gradient".into()));
    }
    let mut next = params.clone();
    for (p, g) in next.iter_mut().zip(grads.iter()) {
        *p -= lr * g;
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_net() -> MlpParams {
        MlpParams::from_layers(vec![DenseLayer {
            weight: Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            bias: Tensor::zeros(vec![2]),
        }])
        .unwrap()
    }

    #[test]
    fn zero_net_gives_zero_logits() {
        let mut p = MlpParams::init(&[3, 5, 4], 1).unwrap();
        p.iter_mut().for_each(|v| *v = 0.0);
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.1, 9.0]).unwrap();
        let (logits, _) = forward(&p, &x, &mut FlopsCounter::default()).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_net_passes_input_through() {
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let (logits, _) = forward(&identity_net(), &x, &mut FlopsCounter::default()).unwrap();
        assert_eq!(logits.data(), &[1.0, 2.0]);
    }

    #[test]
    fn forward_meters_batch_rows() {
        let p = MlpParams::init(&[4, 6, 3], 9).unwrap();
        let mut meter = FlopsCounter::for_layer_dims(&p.layer_dims());
        let x = Tensor::zeros(vec![3, 4]);
        forward(&p, &x, &mut meter).unwrap();
        assert_eq!(meter.forward_sample_units(), 3);
        assert_eq!(meter.backward_sample_units(), 0);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = MlpParams::init(&[4, 3], 0).unwrap();
        let x = Tensor::zeros(vec![2, 5]);
        assert!(matches!(
            forward(&p, &x, &mut FlopsCounter::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn layer_chain_is_validated() {
        let a = MlpParams::init(&[3, 4], 0).unwrap().layers[0].clone();
        let b = MlpParams::init(&[5, 2], 0).unwrap().layers[0].clone();
        assert!(MlpParams::from_layers(vec![a, b]).is_err());
    }

    #[test]
    fn init_respects_bounds_and_seed() {
        let p = MlpParams::init(&[10, 20, 5], 42).unwrap();
        let q = MlpParams::init(&[10, 20, 5], 42).unwrap();
        assert_eq!(p, q);
        let limit = (6.0f64 / 30.0).sqrt();
        assert!(p.layers[0].weight.data().iter().all(|w| w.abs() <= limit));
        assert!(p.layers[0].bias.data().iter().all(|&b| b == 0.0));
        assert_ne!(p, MlpParams::init(&[10, 20, 5], 43).unwrap());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = MlpParams::init(&[3, 4, 2], 5).unwrap();
        let x = Tensor::new(vec![2, 3], vec![0.3, -1.0, 2.0, 1.0, 1.0, 1.0]).unwrap();
        let mut m = FlopsCounter::default();
        let (_, cache) = forward(&p, &x, &mut m).unwrap();
        let g = backward(&p, &cache, &Tensor::zeros(vec![2, 2]), &mut m).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert_eq!(m.backward_sample_units(), 2);
    }

    #[test]
    fn backward_rejects_mismatched_upstream() {
        let p = MlpParams::init(&[3, 2], 5).unwrap();
        let mut m = FlopsCounter::default();
        let (_, cache) = forward(&p, &Tensor::zeros(vec![2, 3]), &mut m).unwrap();
        assert!(backward(&p, &cache, &Tensor::zeros(vec![3, 2]), &mut m).is_err());
    }

    #[test]
    fn sgd_arithmetic() {
        let mut p = MlpParams::init(&[1, 1], 0).unwrap();
        p.iter_mut().for_each(|v| *v = 1.0);
        let mut g = p.zero_gradients();
        g.iter_mut().for_each(|v| *v = 2.0);
        let next = sgd_step(&p, &g, 0.5).unwrap();
        assert!(next.iter().all(|&v| v == 0.0));
        assert_eq!(sgd_step(&p, &g, 0.0).unwrap(), p);
    }

    #[test]
    fn sgd_two_steps_match_one_double_step() {
        let p = MlpParams::init(&[3, 4, 2], 3).unwrap();
        let mut g = p.zero_gradients();
        g.iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = (i as f64 * 0.37).sin());
        let twice = sgd_step(&sgd_step(&p, &g, 0.25).unwrap(), &g, 0.25).unwrap();
        let once = sgd_step(&p, &g, 0.5).unwrap();
        for (a, b) in twice.iter().zip(once.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sgd_rejects_non_finite_gradient() {
        let p = MlpParams::init(&[2, 2], 0).unwrap();
        let mut g = p.zero_gradients();
        *g.iter_mut().next().unwrap() = f64::NAN;
        assert!(matches!(sgd_step(&p, &g, 0.1), Err(Error::Numeric(_))));
    }

    fn ce(params: &MlpParams, x: &Tensor, y: &[usize]) -> f64 {
        crate::nn::loss_ce(&infer(params, x).unwrap(), y, None)
            .unwrap()
            .0
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(50))]
        #[test]
        fn backward_matches_finite_differences(
            seed in 0u64..1000,
            hidden in 1usize..6,
            xs in proptest::collection::vec(-2.0f64..2.0, 9),
            labels in proptest::collection::vec(0usize..3, 3)
        ) {
            let p = MlpParams::init(&[3, hidden, 3], seed).unwrap();
            let x = Tensor::new(vec![3, 3], xs).unwrap();
            let mut meter = FlopsCounter::default();
            let (logits, cache) = forward(&p, &x, &mut meter).unwrap();
            let (_, d) = crate::nn::loss_ce(&logits, &labels, None).unwrap();
            let analytic = backward(&p, &cache, &d, &mut meter).unwrap().to_flat();
            let flat = p.to_flat();
            let h = 1e-6;
            let mut probe = p.clone();
            let mut err = 0.0f64;
            let mut scale = 0.0f64;
            for (j, a) in analytic.iter().enumerate() {
                let mut v = flat.clone();
                v[j] += h;
                probe.assign_flat(&v).unwrap();
                let up = ce(&probe, &x, &labels);
                v[j] -= 2.0 * h;
                probe.assign_flat(&v).unwrap();
                let down = ce(&probe, &x, &labels);
                let n = (up - down) / (2.0 * h);
                err += (a - n).powi(2);
                scale += a.powi(2) + n.powi(2);
            }
            proptest::prop_assert!(err.sqrt() <= 1e-4 * scale.sqrt().max(1e-8));
        }
    }
}
