use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use yieldnet_autodiff::{BatchStats, Tape, Tensor, Var};

use super::init::xavier_uniform;
use crate::features::{InputTransform, TargetScale};

pub const DFNN_LAYERS: usize = 9;
pub const DFNN_WIDTH: usize = 50;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Fully connected residual network with batch normalization.
///
/// `h1 = relu(bn(W1 x))`, `h2 = relu(bn(W2 h1))`, then for the odd layers
/// `h(2j+1) = relu(bn(W h(2j)) + h(2j−1))`. The head is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct DfnnModel {
    pub input_dim: usize,
    pub transform: InputTransform,
    pub target_scale: TargetScale,
    /// Per layer: weights, bias, gamma, beta. Then head weights and bias.
    params: Vec<Tensor>,
    pub running_mean: Vec<Vec<f64>>,
    pub running_var: Vec<Vec<f64>>,
}

/// Tape handles of one forward pass.
pub struct DfnnTrace {
    pub output: Var,
    pub batch_stats: Vec<BatchStats>,
}

impl DfnnModel {
    pub fn param_shapes(input_dim: usize) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        for l in 0..DFNN_LAYERS {
            let fan_in = if l == 0 { input_dim } else { DFNN_WIDTH };
            shapes.push(vec![DFNN_WIDTH, fan_in]);
            shapes.push(vec![DFNN_WIDTH]);
            shapes.push(vec![DFNN_WIDTH]);
            shapes.push(vec![DFNN_WIDTH]);
        }
        shapes.push(vec![1, DFNN_WIDTH]);
        shapes.push(vec![1]);
        shapes
    }

    pub fn build(input_dim: usize, seed: u64) -> Self {
        assert!(input_dim > 0, "input dimension must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Self::param_shapes(input_dim)
            .into_iter()
            .enumerate()
            .map(|(i, shape)| {
                let count = shape.iter().product();
                match (shape.len(), i % 4) {
                    (2, _) => Tensor::new(&shape, xavier_uniform(shape[1], shape[0], count, &mut rng)),
                    (_, 2) if i < 4 * DFNN_LAYERS => Tensor::full(&shape, 1.0),
                    _ => Tensor::zeros(&shape),
                }
            })
            .collect();
        Self::with_params(input_dim, params)
    }

    pub fn with_params(input_dim: usize, params: Vec<Tensor>) -> Self {
        let shapes = Self::param_shapes(input_dim);
        assert_eq!(params.len(), shapes.len(), "wrong number of parameter tensors");
        for (p, s) in params.iter().zip(&shapes) {
            assert_eq!(p.shape(), s.as_slice(), "parameter shape mismatch");
        }
        Self {
            input_dim,
            transform: InputTransform::identity(input_dim),
            target_scale: TargetScale::default(),
            params,
            running_mean: vec![vec![0.0; DFNN_WIDTH]; DFNN_LAYERS],
            running_var: vec![vec![1.0; DFNN_WIDTH]; DFNN_LAYERS],
        }
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.clone())).collect()
    }

    /// Forward over a `B × input_dim` batch of already standardized rows.
    ///
    /// Training mode normalizes with batch statistics and returns them;
    /// inference mode uses the running statistics.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var, training: bool) -> DfnnTrace {
        assert_eq!(
            tape.shape(x).last().copied(),
            Some(self.input_dim),
            "DFNN input dimension mismatch"
        );
        let mut stats = Vec::new();
        let mut skip: Option<Var> = None;
        let mut h = x;
        for l in 0..DFNN_LAYERS {
            let [w, b, gamma, beta] = [params[4 * l], params[4 * l + 1], params[4 * l + 2], params[4 * l + 3]];
            let z = tape.affine(h, w, b);
            let mut z = if training {
                let (z, s) = tape.batch_norm(z, gamma, beta, BN_EPS);
                stats.push(s);
                z
            } else {
                tape.batch_norm_fixed(z, gamma, beta, &self.running_mean[l], &self.running_var[l], BN_EPS)
            };
            // Layers 3, 5, 7, 9 (1-based) add the output of two layers back.
            if l % 2 == 0 && l > 0 {
                z = tape.add(z, skip.expect("skip source"));
            }
            let out = tape.relu(z);
            if l % 2 == 0 {
                skip = Some(out);
            }
            h = out;
        }
        let head = tape.affine(h, params[4 * DFNN_LAYERS], params[4 * DFNN_LAYERS + 1]);
        let scaled = tape.scale(head, self.target_scale.sd);
        let rows = tape.value(scaled).rows();
        let offset = tape.constant(Tensor::full(&[rows, 1], self.target_scale.mean));
        let output = tape.add(scaled, offset);
        DfnnTrace {
            output,
            batch_stats: stats,
        }
    }

    /// Folds one batch's statistics into the running averages.
    pub fn update_running(&mut self, stats: &[BatchStats]) {
        for (l, s) in stats.iter().enumerate() {
            for j in 0..DFNN_WIDTH {
                self.running_mean[l][j] = BN_MOMENTUM * self.running_mean[l][j] + (1.0 - BN_MOMENTUM) * s.mean[j];
                self.running_var[l][j] = BN_MOMENTUM * self.running_var[l][j] + (1.0 - BN_MOMENTUM) * s.variance[j];
            }
        }
    }

    /// Inference-mode predictions for raw flattened feature rows.
    pub fn predict(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(256) {
            let mut data = Vec::with_capacity(chunk.len() * self.input_dim);
            for r in chunk {
                data.extend(self.transform.apply(r));
            }
            let mut tape = Tape::default();
            let params: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
            let x = tape.constant(Tensor::new(&[chunk.len(), self.input_dim], data));
            let trace = self.forward(&mut tape, &params, x, false);
            out.extend_from_slice(tape.value(trace.output).data());
        }
        out
    }
}
