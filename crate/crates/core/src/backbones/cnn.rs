use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{conv_out_dims, fan_in_uniform, Bindings, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnnStage {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl CnnStage {
    pub const fn new(channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            channels,
            kernel,
            stride,
        }
    }

    /// "Same"-style padding for odd kernels.
    pub fn padding(&self) -> usize {
        self.kernel / 2
    }
}

/// Conv + ReLU stages applied to an `S×S×C_in` image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnnConfig {
    pub input_size: usize,
    pub in_channels: usize,
    pub stages: Vec<CnnStage>,
    /// Spatial extent `G` the stride schedule must reach.
    pub output_grid: usize,
    /// Channel width `C_cnn` of the final stage.
    pub output_channels: usize,
}

impl CnnConfig {
    /// 64×64×3 → 4×4×32 in four stride-2 stages.
    pub fn desk() -> Self {
        Self {
            input_size: 64,
            in_channels: 3,
            stages: vec![
                CnnStage::new(8, 3, 2),
                CnnStage::new(16, 3, 2),
                CnnStage::new(32, 3, 2),
                CnnStage::new(32, 3, 2),
            ],
            output_grid: 4,
            output_channels: 32,
        }
    }

    /// 224×224×3 → 7×7×2560 in five stride-2 stages.
    pub fn paper() -> Self {
        Self {
            input_size: 224,
            in_channels: 3,
            stages: [64, 128, 256, 512, 2560]
                .into_iter()
                .map(|c| CnnStage::new(c, 3, 2))
                .collect(),
            output_grid: 7,
            output_channels: 2560,
        }
    }

    /// Symbolic output shape `[G, G, C]`, checked against the declared grid and width.
    pub fn output_shape(&self) -> Result<[usize; 3]> {
        if self.stages.is_empty() || self.input_size == 0 || self.in_channels == 0 {
            return Err(Error::config("CNN needs an input size, input channels and at least one stage"));
        }
        let mut s = self.input_size;
        for (i, st) in self.stages.iter().enumerate() {
            if st.channels == 0 || st.kernel == 0 || st.stride == 0 {
                return Err(Error::config(format!("CNN stage {i} has a zero extent")));
            }
            s = conv_out_dims(s, s, st.kernel, st.stride, st.padding())
                .ok_or_else(|| Error::config(format!("CNN stage {i} kernel exceeds its input")))?
                .0;
        }
        let c = self.stages.last().map(|s| s.channels).unwrap_or(0);
        if s != self.output_grid {
            return Err(Error::config(format!(
                "stride schedule reaches {s}×{s}, expected {g}×{g}",
                g = self.output_grid
            )));
        }
        if c != self.output_channels {
            return Err(Error::config(format!(
                "final stage has {c} channels, expected {}",
                self.output_channels
            )));
        }
        Ok([s, s, c])
    }

    pub fn param_count(&self) -> usize {
        let mut cin = self.in_channels;
        let mut n = 0;
        for st in &self.stages {
            n += st.kernel * st.kernel * cin * st.channels + st.channels;
            cin = st.channels;
        }
        n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cnn {
    pub config: CnnConfig,
    /// `(kernel, bias)` per stage.
    pub layers: Vec<(ParamId, ParamId)>,
}

impl Cnn {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, config: &CnnConfig, rng: &mut R) -> Result<Self> {
        config.output_shape()?;
        let mut cin = config.in_channels;
        let mut layers = Vec::with_capacity(config.stages.len());
        for (i, st) in config.stages.iter().enumerate() {
            let fan_in = st.kernel * st.kernel * cin;
            let w = store.add(
                format!("{name}.conv{i}.weight"),
                fan_in_uniform(&[st.kernel, st.kernel, cin, st.channels], fan_in, 6.0, rng),
            );
            let b = store.add(format!("{name}.conv{i}.bias"), Tensor::zeros(&[st.channels]));
            layers.push((w, b));
            cin = st.channels;
        }
        Ok(Self {
            config: config.clone(),
            layers,
        })
    }

    /// `[S×S×C_in]` image to `[G×G×C_cnn]` features.
    pub fn forward(&self, tape: &mut Tape, params: &Bindings, image: Var) -> Result<Var> {
        let s = self.config.input_size;
        let expect = [s, s, self.config.in_channels];
        if tape.value(image).shape() != expect {
            return Err(Error::dim(format!(
                "CNN expects a {expect:?} image, got {:?}",
                tape.value(image).shape()
            )));
        }
        let mut x = image;
        for (st, &(w, b)) in self.config.stages.iter().zip(&self.layers) {
            let y = tape.conv2d(x, params.var(w), params.var(b), st.stride, st.padding())?;
            x = tape.relu(y);
        }
        Ok(x)
    }
}
