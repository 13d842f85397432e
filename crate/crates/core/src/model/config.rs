use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::data::Crop;
use crate::features::{SOIL_DEPTHS, SOIL_VARS, SURFACE_VARS, WEATHER_VARS, WEEKS};

/// One convolution layer: `channels` outputs, odd `kernel`, then ReLU and an
/// optional average pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub pool: bool,
}

impl ConvSpec {
    pub const fn pooled(channels: usize) -> Self {
        Self { channels, kernel: 3, pool: true }
    }

    pub const fn plain(channels: usize) -> Self {
        Self { channels, kernel: 3, pool: false }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnRnnConfig {
    /// Years of history before the target year.
    pub k: usize,
    pub lstm_hidden: usize,
    pub fc_w_out: usize,
    pub fc_s_out: usize,
    pub management_dim: usize,
    pub weather_conv: Vec<ConvSpec>,
    pub soil_conv: Vec<ConvSpec>,
}

impl Default for CnnRnnConfig {
    fn default() -> Self {
        Self::for_crop(Crop::Corn)
    }
}

impl CnnRnnConfig {
    pub fn for_crop(crop: Crop) -> Self {
        Self {
            k: 5,
            lstm_hidden: 64,
            fc_w_out: match crop {
                Crop::Corn => 60,
                Crop::Soybean => 40,
            },
            fc_s_out: 40,
            management_dim: 15,
            weather_conv: vec![
                ConvSpec::pooled(8),
                ConvSpec::pooled(12),
                ConvSpec::pooled(16),
                ConvSpec::pooled(20),
            ],
            soil_conv: vec![
                ConvSpec::pooled(12),
                ConvSpec::pooled(16),
                ConvSpec::plain(20),
                ConvSpec::plain(24),
            ],
        }
    }

    pub fn steps(&self) -> usize {
        self.k + 1
    }

    pub fn lstm_input_dim(&self) -> usize {
        self.fc_w_out + self.fc_s_out + SURFACE_VARS + 1 + self.management_dim
    }

    /// Flattened length after a conv stack applied to `channels × length`.
    fn stack_output(stack: &[ConvSpec], channels: usize, length: usize) -> Result<usize, ModelError> {
        let mut c = channels;
        let mut l = length;
        for (i, layer) in stack.iter().enumerate() {
            if layer.channels == 0 || layer.kernel % 2 == 0 {
                return Err(ModelError::Config(format!(
                    "conv layer {} needs positive channels and an odd kernel",
                    i + 1
                )));
            }
            c = layer.channels;
            if layer.pool {
                if l < 2 {
                    return Err(ModelError::Config(format!(
                        "conv layer {} pools a length-{l} signal",
                        i + 1
                    )));
                }
                l /= 2;
            }
        }
        Ok(c * l)
    }

    pub fn weather_flat(&self) -> usize {
        Self::stack_output(&self.weather_conv, WEATHER_VARS, WEEKS).expect("validated config")
    }

    pub fn soil_flat(&self) -> usize {
        Self::stack_output(&self.soil_conv, SOIL_VARS, SOIL_DEPTHS).expect("validated config")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.lstm_hidden == 0 || self.fc_w_out == 0 || self.fc_s_out == 0 || self.management_dim == 0 {
            return Err(ModelError::Config("all layer widths must be positive".into()));
        }
        if self.k == 0 {
            return Err(ModelError::Config("k must be at least 1".into()));
        }
        Self::stack_output(&self.weather_conv, WEATHER_VARS, WEEKS)?;
        Self::stack_output(&self.soil_conv, SOIL_VARS, SOIL_DEPTHS)?;
        Ok(())
    }

    /// Shapes of every parameter tensor in storage order, with Xavier fans
    /// (`None` for biases).
    ///
    /// Order: weather convs (kernels, bias), weather FC (weights, bias), soil
    /// convs, soil FC, LSTM gates input/forget/cell/output (weights, bias),
    /// head (weights, bias).
    pub fn param_shapes(&self) -> Vec<(Vec<usize>, Option<(usize, usize)>)> {
        let mut out = Vec::new();
        let conv = |stack: &[ConvSpec], mut c: usize, out: &mut Vec<_>| {
            for layer in stack {
                let fans = (c * layer.kernel, layer.channels * layer.kernel);
                out.push((vec![layer.channels, c, layer.kernel], Some(fans)));
                out.push((vec![layer.channels], None));
                c = layer.channels;
            }
        };
        let dense = |rows: usize, cols: usize, out: &mut Vec<_>| {
            out.push((vec![rows, cols], Some((cols, rows))));
            out.push((vec![rows], None));
        };
        conv(&self.weather_conv, WEATHER_VARS, &mut out);
        dense(self.fc_w_out, self.weather_flat(), &mut out);
        conv(&self.soil_conv, SOIL_VARS, &mut out);
        dense(self.fc_s_out, self.soil_flat(), &mut out);
        let joined = self.lstm_input_dim() + self.lstm_hidden;
        for _ in 0..4 {
            dense(self.lstm_hidden, joined, &mut out);
        }
        dense(1, self.lstm_hidden, &mut out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(s, _)| s.iter().product::<usize>())
            .sum()
    }
}
