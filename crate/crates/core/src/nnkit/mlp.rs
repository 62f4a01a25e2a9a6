use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu(f64),
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative evaluated at the pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Layer widths (input first) and one activation per dense layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    layer_dims: Vec<usize>,
    activations: Vec<Activation>,
}

impl MlpSpec {
    pub fn new(layer_dims: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs an input width and at least one layer, got dims {layer_dims:?}"
            )));
        }
        if layer_dims.contains(&0) {
            return Err(Error::Config(format!(
                "layer widths must be positive: {layer_dims:?}"
            )));
        }
        if activations.len() != layer_dims.len() - 1 {
            return Err(Error::Config(format!(
                "{} activations for {} layers",
                activations.len(),
                layer_dims.len() - 1
            )));
        }
        Ok(Self {
            layer_dims,
            activations,
        })
    }

    /// Hidden layers use `hidden`, the final layer uses `output`.
    pub fn uniform(layer_dims: Vec<usize>, hidden: Activation, output: Activation) -> Result<Self> {
        let n = layer_dims.len().saturating_sub(1);
        let mut activations = vec![hidden; n.saturating_sub(1)];
        activations.push(output);
        Self::new(layer_dims, activations)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn num_layers(&self) -> usize {
        self.activations.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated non-empty")
    }
}

/// Weight is `out × in`; `y = W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.weight.data().len() + self.bias.len()
    }
}

/// Uniform access to every trainable scalar through one flat index.
pub trait FlatParams {
    fn num_scalars(&self) -> usize;
    fn scalar(&self, index: usize) -> f64;
    fn set_scalar(&mut self, index: usize, value: f64);

    fn to_flat(&self) -> Vec<f64> {
        (0..self.num_scalars()).map(|i| self.scalar(i)).collect()
    }
}

impl FlatParams for Vec<f64> {
    fn num_scalars(&self) -> usize {
        self.len()
    }

    fn scalar(&self, index: usize) -> f64 {
        self[index]
    }

    fn set_scalar(&mut self, index: usize, value: f64) {
        self[index] = value;
    }

    fn to_flat(&self) -> Vec<f64> {
        self.clone()
    }
}

/// Per-layer weights and biases. Flat order is layer by layer, weight
/// (row-major) before bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    layers: Vec<DenseLayer>,
}

impl ParamStore {
    pub fn zeros(spec: &MlpSpec) -> Self {
        let layers = spec
            .layer_dims
            .windows(2)
            .map(|w| DenseLayer::zeros(w[0], w[1]))
            .collect();
        Self { layers }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Self {
        let mut store = Self::zeros(spec);
        for layer in &mut store.layers {
            let fan_out = layer.weight.rows();
            let fan_in = layer.weight.cols();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in layer.weight.data_mut() {
                *w = rng.random_range(-limit..=limit);
            }
        }
        store
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.weight.cols(), l.weight.rows()))
                .collect(),
        }
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.rows() {
                return Err(Error::shape(
                    format!("layer {i} bias"),
                    l.weight.rows(),
                    l.bias.len(),
                ));
            }
            if i > 0 && layers[i - 1].weight.rows() != l.weight.cols() {
                return Err(Error::shape(
                    format!("layer {i} input"),
                    layers[i - 1].weight.rows(),
                    l.weight.cols(),
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    /// True if the stored shapes are exactly those `spec` describes.
    pub fn matches(&self, spec: &MlpSpec) -> bool {
        self.layers.len() == spec.num_layers()
            && self
                .layers
                .iter()
                .zip(spec.layer_dims.windows(2))
                .all(|(l, w)| {
                    l.weight.cols() == w[0] && l.weight.rows() == w[1] && l.bias.len() == w[1]
                })
    }

    pub fn same_shape(&self, other: &ParamStore) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weight.rows() == b.weight.rows() && a.weight.cols() == b.weight.cols()
            })
    }

    /// Parameter blocks (weights, then bias, per layer) in flat order.
    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| {
            let DenseLayer { weight, bias } = l;
            [weight.data_mut(), bias.as_mut_slice()]
        })
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn locate(&self, mut index: usize) -> (usize, usize) {
        for (li, layer) in self.layers.iter().enumerate() {
            let n = layer.num_scalars();
            if index < n {
                return (li, index);
            }
            index -= n;
        }
        panic!("flat parameter index out of range");
    }
}

impl FlatParams for ParamStore {
    fn num_scalars(&self) -> usize {
        self.layers.iter().map(DenseLayer::num_scalars).sum()
    }

    fn scalar(&self, index: usize) -> f64 {
        let (li, off) = self.locate(index);
        let layer = &self.layers[li];
        let nw = layer.weight.data().len();
        if off < nw {
            layer.weight.data()[off]
        } else {
            layer.bias[off - nw]
        }
    }

    fn set_scalar(&mut self, index: usize, value: f64) {
        let (li, off) = self.locate(index);
        let layer = &mut self.layers[li];
        let nw = layer.weight.data().len();
        if off < nw {
            layer.weight.data_mut()[off] = value;
        } else {
            layer.bias[off - nw] = value;
        }
    }

    fn to_flat(&self) -> Vec<f64> {
        self.blocks().flatten().copied().collect()
    }
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn depth(&self) -> usize {
        self.pre.len()
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre
    }

    pub fn post_activations(&self) -> &[Matrix] {
        &self.post
    }
}

fn check_params(params: &ParamStore, spec: &MlpSpec) -> Result<()> {
    if params.layers.len() != spec.num_layers() {
        return Err(Error::shape(
            "parameter store",
            format!("{} layers", spec.num_layers()),
            params.layers.len(),
        ));
    }
    for (i, (layer, w)) in params
        .layers
        .iter()
        .zip(spec.layer_dims.windows(2))
        .enumerate()
    {
        if layer.weight.cols() != w[0] || layer.weight.rows() != w[1] {
            return Err(Error::shape(
                format!("layer {i} weight"),
                format!("{}x{}", w[1], w[0]),
                format!("{}x{}", layer.weight.rows(), layer.weight.cols()),
            ));
        }
    }
    Ok(())
}

/// `x · Wᵀ + b` for a batch `x` of shape `batch × in`.
fn affine(x: &Matrix, layer: &DenseLayer) -> Matrix {
    let out_dim = layer.weight.rows();
    let mut out = Matrix::zeros(x.rows(), out_dim);
    for r in 0..x.rows() {
        let xr = x.row(r);
        let dst = out.row_mut(r);
        for (o, d) in dst.iter_mut().enumerate() {
            *d = super::matrix::dot(layer.weight.row(o), xr) + layer.bias[o];
        }
    }
    out
}

pub fn mlp_forward(
    params: &ParamStore,
    spec: &MlpSpec,
    input: &Matrix,
) -> Result<(Matrix, ForwardTrace)> {
    check_params(params, spec)?;
    if input.cols() != spec.input_dim() {
        return Err(Error::shape(
            "layer 0 input",
            spec.input_dim(),
            input.cols(),
        ));
    }
    let mut pre = Vec::with_capacity(spec.num_layers());
    let mut post: Vec<Matrix> = Vec::with_capacity(spec.num_layers());
    for (layer, &act) in params.layers.iter().zip(&spec.activations) {
        let x = post.last().unwrap_or(input);
        let z = affine(x, layer);
        let mut a = z.clone();
        a.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        pre.push(z);
        post.push(a);
    }
    let output = post.last().expect("at least one layer").clone();
    Ok((
        output,
        ForwardTrace {
            input: input.clone(),
            pre,
            post,
        },
    ))
}

/// Gradients of a scalar objective with respect to the parameters and the
/// input, given `upstream_grad` = d objective / d output.
pub fn mlp_backward(
    params: &ParamStore,
    spec: &MlpSpec,
    trace: &ForwardTrace,
    upstream_grad: &Matrix,
) -> Result<(ParamStore, Matrix)> {
    check_params(params, spec)?;
    if trace.depth() != spec.num_layers() {
        return Err(Error::shape(
            "forward trace depth",
            spec.num_layers(),
            trace.depth(),
        ));
    }
    let batch = trace.batch_size();
    if upstream_grad.rows() != batch || upstream_grad.cols() != spec.output_dim() {
        return Err(Error::shape(
            "upstream gradient",
            format!("{batch}x{}", spec.output_dim()),
            format!("{}x{}", upstream_grad.rows(), upstream_grad.cols()),
        ));
    }

    let mut grads = params.zeros_like();
    let mut delta = upstream_grad.clone();
    for l in (0..spec.num_layers()).rev() {
        let act = spec.activations[l];
        for (d, &z) in delta.data_mut().iter_mut().zip(trace.pre[l].data()) {
            *d *= act.derivative(z);
        }
        let x = if l == 0 {
            &trace.input
        } else {
            &trace.post[l - 1]
        };
        let layer = &params.layers[l];
        let g = &mut grads.layers[l];
        for r in 0..batch {
            let dr = delta.row(r);
            let xr = x.row(r);
            for (o, &dv) in dr.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                g.bias[o] += dv;
                for (w, &xv) in g.weight.row_mut(o).iter_mut().zip(xr) {
                    *w += dv * xv;
                }
            }
        }
        let mut prev = Matrix::zeros(batch, layer.weight.cols());
        for r in 0..batch {
            let dr = delta.row(r);
            let dst = prev.row_mut(r);
            for (o, &dv) in dr.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                for (p, &w) in dst.iter_mut().zip(layer.weight.row(o)) {
                    *p += dv * w;
                }
            }
        }
        delta = prev;
    }
    Ok((grads, delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::finite_diff::{finite_diff_grad, relative_error};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(weight: Vec<Vec<f64>>, bias: Vec<f64>) -> ParamStore {
        ParamStore::from_layers(vec![DenseLayer {
            weight: Matrix::from_rows(&weight).unwrap(),
            bias,
        }])
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let spec = MlpSpec::new(vec![3, 3], vec![Activation::Identity]).unwrap();
        let params = ParamStore::from_layers(vec![DenseLayer {
            weight: Matrix::identity(3),
            bias: vec![0.0; 3],
        }])
        .unwrap();
        let x = Matrix::from_rows(&[vec![1.5, -2.0, 0.25]]).unwrap();
        let (y, trace) = mlp_forward(&params, &spec, &x).unwrap();
        assert_eq!(y, x);
        assert_eq!(trace.depth(), 1);
    }

    #[test]
    fn two_to_one_by_hand() {
        let spec = MlpSpec::new(vec![2, 1], vec![Activation::Identity]).unwrap();
        let params = single(vec![vec![1.0, 1.0]], vec![0.5]);
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let (y, _) = mlp_forward(&params, &spec, &x).unwrap();
        assert_eq!(y.data(), &[3.5]);
    }

    /// Straight-line evaluator written independently of `affine`.
    fn reference_forward(params: &ParamStore, spec: &MlpSpec, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for (layer, act) in params.layers().iter().zip(spec.activations()) {
            let mut next = Vec::new();
            for o in 0..layer.weight.rows() {
                let mut s = layer.bias[o];
                for (i, c) in cur.iter().enumerate() {
                    s += layer.weight[(o, i)] * c;
                }
                next.push(act.apply(s));
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn zero_input_follows_bias_path() {
        let spec = MlpSpec::uniform(
            vec![4, 6, 5, 3],
            Activation::LeakyRelu(0.2),
            Activation::Identity,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = ParamStore::init(&spec, &mut rng);
        for layer in params.layers_mut() {
            for b in &mut layer.bias {
                *b = rng.random_range(-1.0..1.0);
            }
        }
        let x = Matrix::zeros(1, 4);
        let (y, _) = mlp_forward(&params, &spec, &x).unwrap();
        let expect = reference_forward(&params, &spec, &[0.0; 4]);
        for (a, b) in y.data().iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-15 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn identity_backward_is_transpose_product() {
        let spec = MlpSpec::new(vec![2, 2], vec![Activation::Identity]).unwrap();
        let params = ParamStore::from_layers(vec![DenseLayer {
            weight: Matrix::identity(2),
            bias: vec![0.0; 2],
        }])
        .unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let g = Matrix::from_rows(&[vec![0.5, -3.0]]).unwrap();
        let (_, trace) = mlp_forward(&params, &spec, &x).unwrap();
        let (pg, ig) = mlp_backward(&params, &spec, &trace, &g).unwrap();
        assert_eq!(ig, g);
        // inputᵀ g laid out as out × in: W_grad[o][i] = g[o] * x[i]
        assert_eq!(pg.layers()[0].weight.data(), &[0.5, 1.0, -3.0, -6.0]);
        assert_eq!(pg.layers()[0].bias, vec![0.5, -3.0]);
    }

    #[test]
    fn leaky_negative_branch_scales_gradient() {
        let spec = MlpSpec::new(vec![1, 1], vec![Activation::LeakyRelu(0.1)]).unwrap();
        let params = single(vec![vec![1.0]], vec![0.0]);
        let x = Matrix::from_rows(&[vec![-2.0]]).unwrap();
        let (y, trace) = mlp_forward(&params, &spec, &x).unwrap();
        assert!((y.data()[0] + 0.2).abs() < 1e-15);
        let (_, ig) = mlp_backward(
            &params,
            &spec,
            &trace,
            &Matrix::from_rows(&[vec![1.0]]).unwrap(),
        )
        .unwrap();
        assert!((ig.data()[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let spec = MlpSpec::uniform(vec![3, 4, 2], Activation::Relu, Activation::Identity).unwrap();
        let params = ParamStore::zeros(&spec);
        let err = mlp_forward(&params, &spec, &Matrix::zeros(1, 5)).unwrap_err();
        assert!(err.to_string().contains("layer 0"));
        let other =
            MlpSpec::uniform(vec![3, 5, 2], Activation::Relu, Activation::Identity).unwrap();
        let err = mlp_forward(&params, &other, &Matrix::zeros(1, 3)).unwrap_err();
        assert!(err.to_string().contains("layer 0 weight"));

        let (_, trace) = mlp_forward(&params, &spec, &Matrix::zeros(2, 3)).unwrap();
        assert!(mlp_backward(&params, &spec, &trace, &Matrix::zeros(1, 2)).is_err());
        let shallow = MlpSpec::new(vec![3, 2], vec![Activation::Identity]).unwrap();
        let p1 = ParamStore::zeros(&shallow);
        assert!(mlp_backward(&p1, &shallow, &trace, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(vec![3], vec![]).is_err());
        assert!(MlpSpec::new(vec![3, 2], vec![]).is_err());
        assert!(MlpSpec::new(vec![3, 0], vec![Activation::Relu]).is_err());
    }

    fn weighted_sum_loss(params: &ParamStore, spec: &MlpSpec, x: &Matrix, weights: &Matrix) -> f64 {
        let (y, _) = mlp_forward(params, spec, x).unwrap();
        y.data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum()
    }

    #[test]
    fn two_layer_gradients_match_finite_differences() {
        let spec = MlpSpec::uniform(
            vec![5, 7, 3],
            Activation::LeakyRelu(0.2),
            Activation::Identity,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = ParamStore::init(&spec, &mut rng);
        let x = Matrix::new(4, 5, (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let w = Matrix::new(4, 3, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let (_, trace) = mlp_forward(&params, &spec, &x).unwrap();
        let (grads, _) = mlp_backward(&params, &spec, &trace, &w).unwrap();
        let numeric = finite_diff_grad(
            |p: &ParamStore| weighted_sum_loss(p, &spec, &x, &w),
            &params,
            1e-5,
        )
        .unwrap();
        for i in 0..grads.num_scalars() {
            let e = relative_error(grads.scalar(i), numeric.scalar(i));
            assert!(
                e <= 1e-5,
                "index {i}: {} vs {} ({e})",
                grads.scalar(i),
                numeric.scalar(i)
            );
        }
    }

    #[test]
    fn forward_is_bitwise_pure() {
        let spec = MlpSpec::uniform(
            vec![6, 8, 8, 2],
            Activation::LeakyRelu(0.2),
            Activation::Identity,
        )
        .unwrap();
        let params = ParamStore::init(&spec, &mut ChaCha8Rng::seed_from_u64(3));
        let x = Matrix::new(3, 6, (0..18).map(|i| (i as f64).sin()).collect()).unwrap();
        let a = mlp_forward(&params, &spec, &x).unwrap().0;
        let b = mlp_forward(&params, &spec, &x).unwrap().0;
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    proptest! {
        #[test]
        fn flat_index_round_trips(dims in proptest::collection::vec(1usize..6, 2..5), seed in 0u64..1000, pick in 0usize..10_000, value in -1e3f64..1e3) {
            let spec = MlpSpec::uniform(dims, Activation::Relu, Activation::Identity).unwrap();
            let mut params = ParamStore::init(&spec, &mut ChaCha8Rng::seed_from_u64(seed));
            let i = pick % params.num_scalars();
            params.set_scalar(i, value);
            prop_assert_eq!(params.scalar(i).to_bits(), value.to_bits());
            let flat = params.to_flat();
            prop_assert_eq!(flat.len(), params.num_scalars());
            prop_assert_eq!(flat[i].to_bits(), value.to_bits());
        }

        #[test]
        fn backward_matches_finite_differences(
            dims in proptest::collection::vec(1usize..9, 2..5),
            seed in 0u64..10_000,
            batch in 1usize..4,
        ) {
            let spec = MlpSpec::uniform(dims.clone(), Activation::LeakyRelu(0.2), Activation::Identity).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params = ParamStore::init(&spec, &mut rng);
            for layer in params.layers_mut() {
                for b in &mut layer.bias {
                    *b = rng.random_range(-0.5..0.5);
                }
            }
            let n_in = dims[0];
            let n_out = *dims.last().unwrap();
            let x = Matrix::new(batch, n_in, (0..batch * n_in).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let w = Matrix::new(batch, n_out, (0..batch * n_out).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let (_, trace) = mlp_forward(&params, &spec, &x).unwrap();
            // Skip draws where a pre-activation sits on the kink, where the
            // derivative is one-sided.
            let near_kink = trace.pre_activations().iter().any(|m| m.data().iter().any(|v| v.abs() < 1e-4));
            prop_assume!(!near_kink);
            let (grads, _) = mlp_backward(&params, &spec, &trace, &w).unwrap();
            let numeric = finite_diff_grad(|p: &ParamStore| weighted_sum_loss(p, &spec, &x, &w), &params, 1e-5).unwrap();
            for i in 0..grads.num_scalars() {
                prop_assert!(relative_error(grads.scalar(i), numeric.scalar(i)) <= 1e-4);
            }
        }
    }
}
