//! Architecture hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    Gelu,
    Silu,
}

/// Input geometry: `N` sensors, `M` variables per sensor, `L` samples per
/// window, `C` classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Dims {
    pub sensors: usize,
    pub variables: usize,
    pub length: usize,
    pub classes: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            sensors: 6,
            variables: 9,
            length: 100,
            classes: 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfeConfig {
    /// Kernel size `P`.
    pub kernel: usize,
    /// Stride `S`.
    pub stride: usize,
    /// Embedding channels `D`.
    pub channels: usize,
    /// One kernel set shared by every (sensor, variable) series.
    pub shared_weights: bool,
}

impl Default for MfeConfig {
    fn default() -> Self {
        MfeConfig {
            kernel: 4,
            stride: 4,
            channels: 32,
            shared_weights: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomAxis {
    /// Per-channel statistics over time.
    Time,
    /// Per-timestep statistics over channels.
    Channel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomConfig {
    /// Activation probability per batch.
    pub p: f64,
    /// Beta(alpha, alpha) concentration.
    pub alpha: f64,
    pub axis: MomAxis,
    pub enabled_pre_ltfe: bool,
    pub enabled_pre_gta: bool,
}

impl Default for MomConfig {
    fn default() -> Self {
        MomConfig {
            p: 0.5,
            alpha: 0.1,
            axis: MomAxis::Time,
            enabled_pre_ltfe: true,
            enabled_pre_gta: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LtfeConfig {
    /// Odd depthwise kernel size; "same" padding keeps `T`.
    pub kernel: usize,
    pub activation: Activation,
}

impl Default for LtfeConfig {
    fn default() -> Self {
        LtfeConfig {
            kernel: 5,
            activation: Activation::Gelu,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CcfGrouping {
    /// One group per (sensor, variable): sensors never mix.
    SensorVariable,
    /// One group per variable spanning all sensors.
    Variable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CcfConfig {
    pub activation: Activation,
    pub grouping: CcfGrouping,
}

impl Default for CcfConfig {
    fn default() -> Self {
        CcfConfig {
            activation: Activation::Gelu,
            grouping: CcfGrouping::SensorVariable,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CfbKernel {
    /// 3x3 over the (interaction, time) plane.
    #[serde(rename = "3x3")]
    Square3,
    /// 1x3, temporal only.
    #[serde(rename = "1x3")]
    Temporal3,
}

impl CfbKernel {
    pub fn extents(self) -> (usize, usize) {
        match self {
            CfbKernel::Square3 => (3, 3),
            CfbKernel::Temporal3 => (1, 3),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CfbConfig {
    /// Channel reduction ratio.
    pub r: usize,
    /// Recursion depth.
    pub k: usize,
    pub kernel: CfbKernel,
}

impl Default for CfbConfig {
    fn default() -> Self {
        CfbConfig {
            r: 4,
            k: 2,
            kernel: CfbKernel::Square3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableFusion {
    Cfb,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorFusion {
    Cfb,
    Attention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub variable: VariableFusion,
    pub sensor: SensorFusion,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            variable: VariableFusion::Cfb,
            sensor: SensorFusion::Cfb,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GtaConfig {
    pub state_size: usize,
    pub conv_width: usize,
}

impl Default for GtaConfig {
    fn default() -> Self {
        GtaConfig {
            state_size: 16,
            conv_width: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsiConfig {
    pub d_k: usize,
    /// Divide logits by sqrt(d_k).
    pub scaled: bool,
}

impl Default for CsiConfig {
    fn default() -> Self {
        CsiConfig { d_k: 64, scaled: false }
    }
}

/// Full architecture description.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub model: Dims,
    pub mfe: MfeConfig,
    pub mom: MomConfig,
    pub ltfe: LtfeConfig,
    pub ccf: CcfConfig,
    pub cfb: CfbConfig,
    pub fusion: FusionConfig,
    pub gta: GtaConfig,
    pub csi: CsiConfig,
}

impl ModelConfig {
    /// Embedded sequence length `T = floor((L - P) / S) + 1`.
    pub fn seq_len(&self) -> usize {
        (self.model.length - self.mfe.kernel) / self.mfe.stride + 1
    }

    /// Width of the global-aggregation tokens, `N * D`.
    pub fn ssm_width(&self) -> usize {
        self.model.sensors * self.mfe.channels
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let d = &self.model;
        if d.sensors == 0 || d.variables == 0 || d.length == 0 {
            return bad(format!("sensors, variables and length must be positive, got {d:?}"));
        }
        if d.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", d.classes));
        }
        if self.mfe.kernel == 0 || self.mfe.stride == 0 || self.mfe.channels == 0 {
            return bad("mfe.kernel, mfe.stride and mfe.channels must be positive".into());
        }
        if d.length < self.mfe.kernel {
            return bad(format!("window length {} is shorter than mfe.kernel {}", d.length, self.mfe.kernel));
        }
        if self.ltfe.kernel.is_multiple_of(2) {
            return bad(format!("ltfe.kernel must be odd, got {}", self.ltfe.kernel));
        }
        if !(0.0..=1.0).contains(&self.mom.p) {
            return bad(format!("mom.p must be in [0, 1], got {}", self.mom.p));
        }
        if self.mom.alpha <= 0.0 || !self.mom.alpha.is_finite() {
            return bad(format!("mom.alpha must be positive, got {}", self.mom.alpha));
        }
        let uses_cfb = self.fusion.variable == VariableFusion::Cfb || self.fusion.sensor == SensorFusion::Cfb;
        if uses_cfb && (self.cfb.r == 0 || self.mfe.channels < self.cfb.r) {
            return bad(format!(
                "cfb.r = {} leaves no squeezed channels for C = {}",
                self.cfb.r, self.mfe.channels
            ));
        }
        if self.gta.state_size == 0 || self.gta.conv_width == 0 {
            return bad("gta.state_size and gta.conv_width must be positive".into());
        }
        if self.fusion.sensor == SensorFusion::Attention && self.csi.d_k == 0 {
            return bad("csi.d_k must be positive".into());
        }
        Ok(())
    }
}
