use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use yieldnet_autodiff::{GateVars, GradMode, LstmVars, Tape, Tensor, Var};

use super::config::{CnnRnnConfig, ConvSpec};
use super::init::xavier_uniform;
use super::ModelError;
use crate::data::SequenceSample;
use crate::features::{
    FeatureLayout, InputTransform, TargetScale, SOIL_DEPTHS, SOIL_VARS, SURFACE_VARS, WEATHER_VARS, WEEKS,
};

/// The hybrid network: weather CNN, soil CNN, LSTM over the years, linear head.
///
/// Inputs pass through `transform` before the network and the head output is
/// mapped to bu/acre by `target_scale`. Both default to the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct CnnRnnModel {
    pub config: CnnRnnConfig,
    pub transform: InputTransform,
    pub target_scale: TargetScale,
    params: Vec<Tensor>,
}

/// Step-major batch of standardized inputs: row `s·B + b` holds step `s` of
/// sample `b`.
pub struct BatchInputs {
    pub batch: usize,
    pub steps: usize,
    pub weather: Tensor,
    pub soil: Tensor,
    pub surface: Tensor,
    pub avg_yield: Tensor,
    pub management: Tensor,
}

impl BatchInputs {
    /// Builds a batch from prepared samples (see [`CnnRnnModel::prepare`]).
    pub fn new(layout: FeatureLayout, steps: usize, samples: &[&[f64]]) -> Self {
        let batch = samples.len();
        assert!(batch > 0, "empty batch");
        let f = layout.len();
        let rows = steps * batch;
        let mut weather = Vec::with_capacity(rows * WEATHER_VARS * WEEKS);
        let mut soil = Vec::with_capacity(rows * SOIL_VARS * SOIL_DEPTHS);
        let mut surface = Vec::with_capacity(rows * SURFACE_VARS);
        let mut avg_yield = Vec::with_capacity(rows);
        let mut management = Vec::with_capacity(rows * layout.management_weeks);
        for s in 0..steps {
            for sample in samples {
                assert_eq!(sample.len(), steps * f, "prepared sample has wrong length");
                let step = &sample[s * f..(s + 1) * f];
                weather.extend_from_slice(&step[layout.weather()]);
                soil.extend_from_slice(&step[layout.soil()]);
                surface.extend_from_slice(&step[layout.surface()]);
                management.extend_from_slice(&step[layout.management()]);
                avg_yield.push(step[layout.avg_yield()]);
            }
        }
        Self {
            batch,
            steps,
            weather: Tensor::new(&[rows, WEATHER_VARS, WEEKS], weather),
            soil: Tensor::new(&[rows, SOIL_VARS, SOIL_DEPTHS], soil),
            surface: Tensor::new(&[rows, SURFACE_VARS], surface),
            avg_yield: Tensor::new(&[rows, 1], avg_yield),
            management: Tensor::new(&[rows, layout.management_weeks], management),
        }
    }
}

/// Tape handles produced by one batched forward pass.
pub struct ForwardTrace {
    pub weather: Var,
    pub soil: Var,
    pub surface: Var,
    pub avg_yield: Var,
    pub management: Var,
    /// LSTM output per step, each `B × hidden`.
    pub hidden: Vec<Var>,
    /// Prediction in bu/acre per step, each `B × 1`.
    pub predictions: Vec<Var>,
}

impl CnnRnnModel {
    /// Xavier-initialized weights and zero biases, drawn in storage order
    /// from a generator seeded with `seed`.
    pub fn build(config: CnnRnnConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = config
            .param_shapes()
            .into_iter()
            .map(|(shape, fans)| {
                let count = shape.iter().product();
                match fans {
                    Some((fi, fo)) => Tensor::new(&shape, xavier_uniform(fi, fo, count, &mut rng)),
                    None => Tensor::zeros(&shape),
                }
            })
            .collect();
        Ok(Self::with_params(config, params))
    }

    /// A model holding the given parameters with identity scaling.
    ///
    /// # Panics
    ///
    /// Panics if the parameter shapes do not match the config.
    pub fn with_params(config: CnnRnnConfig, params: Vec<Tensor>) -> Self {
        let shapes = config.param_shapes();
        assert_eq!(params.len(), shapes.len(), "wrong number of parameter tensors");
        for (p, (s, _)) in params.iter().zip(&shapes) {
            assert_eq!(p.shape(), s.as_slice(), "parameter shape mismatch");
        }
        let layout = FeatureLayout::new(config.management_dim);
        Self {
            transform: InputTransform::identity(layout.len()),
            target_scale: TargetScale::default(),
            config,
            params,
        }
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout::new(self.config.management_dim)
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Standardized inputs of every step, concatenated.
    pub fn prepare(&self, sample: &SequenceSample) -> Vec<f64> {
        let steps = self.config.steps();
        assert_eq!(
            sample.steps(),
            steps,
            "sample window has {} years, model expects {steps}",
            sample.steps()
        );
        let f = self.layout().len();
        let mut out = vec![0.0; steps * f];
        for s in 0..steps {
            let raw = sample.step_features(s);
            self.transform.apply_into(&raw, &mut out[s * f..(s + 1) * f]);
        }
        out
    }

    /// Records all parameters as differentiable leaves.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.clone())).collect()
    }

    /// Records all parameters as constants.
    pub fn bind_constant(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.constant(p.clone())).collect()
    }

    /// Batched forward pass on `tape`. Inputs are leaves when `input_grads`
    /// is set, constants otherwise.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], inputs: &BatchInputs, input_grads: bool) -> ForwardTrace {
        let cfg = &self.config;
        let b = inputs.batch;
        let rows = b * inputs.steps;
        let mut record = |t: &Tensor| {
            if input_grads {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let weather = record(&inputs.weather);
        let soil = record(&inputs.soil);
        let surface = record(&inputs.surface);
        let avg_yield = record(&inputs.avg_yield);
        let management = record(&inputs.management);

        let mut p = params.iter().copied();
        let w_feat = branch(tape, &mut p, weather, &cfg.weather_conv, rows, cfg.weather_flat());
        let s_feat = branch(tape, &mut p, soil, &cfg.soil_conv, rows, cfg.soil_flat());
        let mut gate = || GateVars {
            weights: p.next().unwrap(),
            bias: p.next().unwrap(),
        };
        let lstm = LstmVars {
            input: gate(),
            forget: gate(),
            cell: gate(),
            output: gate(),
        };
        let head_w = p.next().unwrap();
        let head_b = p.next().unwrap();
        debug_assert!(p.next().is_none());

        let zeros = Tensor::zeros(&[b, cfg.lstm_hidden]);
        let mut h = tape.constant(zeros.clone());
        let mut c = tape.constant(zeros);
        let offset = tape.constant(Tensor::full(&[b, 1], self.target_scale.mean));
        let mut hidden = Vec::with_capacity(inputs.steps);
        let mut predictions = Vec::with_capacity(inputs.steps);
        for s in 0..inputs.steps {
            let parts: Vec<Var> = [w_feat, s_feat, surface, avg_yield, management]
                .iter()
                .map(|&v| tape.slice_rows(v, s * b, b))
                .collect();
            let x = tape.concat(&parts);
            (h, c) = tape.lstm_cell_step(x, h, c, &lstm);
            let out = tape.affine(h, head_w, head_b);
            let scaled = tape.scale(out, self.target_scale.sd);
            let pred = tape.add(scaled, offset);
            hidden.push(h);
            predictions.push(pred);
        }
        ForwardTrace {
            weather,
            soil,
            surface,
            avg_yield,
            management,
            hidden,
            predictions,
        }
    }

    /// Weather branch on one raw `6 × 52` input.
    pub fn wcnn_forward(&self, weather: &Tensor) -> Vec<f64> {
        let mut tape = Tape::default();
        let params = self.bind_constant(&mut tape);
        let x = tape.constant(weather.clone().reshaped(&[1, WEATHER_VARS, WEEKS]));
        let mut p = params.into_iter();
        let out = branch(&mut tape, &mut p, x, &self.config.weather_conv, 1, self.config.weather_flat());
        tape.value(out).data().to_vec()
    }

    /// Soil branch on one raw `10 × 9` profile.
    pub fn scnn_forward(&self, soil: &Tensor) -> Vec<f64> {
        let mut tape = Tape::default();
        let params = self.bind_constant(&mut tape);
        let x = tape.constant(soil.clone().reshaped(&[1, SOIL_VARS, SOIL_DEPTHS]));
        let skip = 2 * self.config.weather_conv.len() + 2;
        let mut p = params.into_iter().skip(skip);
        let out = branch(&mut tape, &mut p, x, &self.config.soil_conv, 1, self.config.soil_flat());
        tape.value(out).data().to_vec()
    }

    /// Per-step predictions in bu/acre for each sample.
    pub fn predict_steps(&self, samples: &[SequenceSample]) -> Vec<Vec<f64>> {
        let prepared: Vec<Vec<f64>> = samples.iter().map(|s| self.prepare(s)).collect();
        let refs: Vec<&[f64]> = prepared.iter().map(Vec::as_slice).collect();
        self.predict_prepared(&refs)
    }

    /// Final-step prediction for each sample.
    pub fn predict(&self, samples: &[SequenceSample]) -> Vec<f64> {
        self.predict_steps(samples)
            .into_iter()
            .map(|steps| *steps.last().unwrap())
            .collect()
    }

    pub fn predict_prepared(&self, prepared: &[&[f64]]) -> Vec<Vec<f64>> {
        const CHUNK: usize = 64;
        let mut out = Vec::with_capacity(prepared.len());
        for chunk in prepared.chunks(CHUNK) {
            let inputs = BatchInputs::new(self.layout(), self.config.steps(), chunk);
            let mut tape = Tape::new(GradMode::Standard);
            let params = self.bind_constant(&mut tape);
            let trace = self.forward(&mut tape, &params, &inputs, false);
            for i in 0..chunk.len() {
                out.push(
                    trace
                        .predictions
                        .iter()
                        .map(|&p| tape.value(p).data()[i])
                        .collect(),
                );
            }
        }
        out
    }

    /// Final-step LSTM output for each sample.
    pub fn final_hidden(&self, samples: &[SequenceSample]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(samples.len());
        let h = self.config.lstm_hidden;
        for chunk in samples.chunks(64) {
            let prepared: Vec<Vec<f64>> = chunk.iter().map(|s| self.prepare(s)).collect();
            let refs: Vec<&[f64]> = prepared.iter().map(Vec::as_slice).collect();
            let inputs = BatchInputs::new(self.layout(), self.config.steps(), &refs);
            let mut tape = Tape::new(GradMode::Standard);
            let params = self.bind_constant(&mut tape);
            let trace = self.forward(&mut tape, &params, &inputs, false);
            let last = tape.value(*trace.hidden.last().unwrap()).data();
            out.extend(last.chunks(h).map(<[f64]>::to_vec));
        }
        out
    }
}

/// Conv stack, flatten, FC and ReLU over `rows` inputs.
fn branch(
    tape: &mut Tape,
    params: &mut impl Iterator<Item = Var>,
    input: Var,
    stack: &[ConvSpec],
    rows: usize,
    flat: usize,
) -> Var {
    let mut x = input;
    for layer in stack {
        let kernels = params.next().unwrap();
        let bias = params.next().unwrap();
        x = tape.conv1d(x, kernels, bias);
        x = tape.relu(x);
        if layer.pool {
            x = tape.avgpool1d(x);
        }
    }
    let x = tape.reshape(x, &[rows, flat]);
    let w = params.next().unwrap();
    let b = params.next().unwrap();
    let x = tape.affine(x, w, b);
    tape.relu(x)
}
