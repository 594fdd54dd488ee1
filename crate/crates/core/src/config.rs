//! Run configuration files.
//!
//! A file is TOML with the sections `[model]`, `[mfe]`, `[mom]`, `[ltfe]`,
//! `[ccf]`, `[cfb]`, `[fusion]`, `[gta]`, `[csi]`, `[train]` and `[data]`.
//! Every key is optional; unknown sections or keys are rejected with the
//! line they appear on.
//!
//! ```toml
//! [mfe]
//! channels = 16
//!
//! [fusion]
//! sensor = "attention"   # or "cfb"
//!
//! [train]
//! lr = 1e-4
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::GenConfig;
use crate::error::{Error, Result};
use crate::model::config::{
    CcfConfig, CfbConfig, CsiConfig, Dims, FusionConfig, GtaConfig, LtfeConfig, MfeConfig, ModelConfig, MomConfig,
};
use crate::train::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: Dims,
    pub mfe: MfeConfig,
    pub mom: MomConfig,
    pub ltfe: LtfeConfig,
    pub ccf: CcfConfig,
    pub cfb: CfbConfig,
    pub fusion: FusionConfig,
    pub gta: GtaConfig,
    pub csi: CsiConfig,
    pub train: TrainConfig,
    pub data: GenConfig,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses TOML into `T`, reporting failures with a 1-based line number.
pub fn parse_toml<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::ConfigParse {
        line: e.span().map_or(1, |s| line_of(text, s.start)),
        msg: e.message().to_string(),
    })
}

pub fn to_toml<T: Serialize>(value: &T) -> String {
    toml::to_string(value).expect("configuration types always serialize")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        parse_toml(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        to_toml(self)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            model: self.model.clone(),
            mfe: self.mfe.clone(),
            mom: self.mom.clone(),
            ltfe: self.ltfe.clone(),
            ccf: self.ccf.clone(),
            cfb: self.cfb.clone(),
            fusion: self.fusion.clone(),
            gta: self.gta.clone(),
            csi: self.csi.clone(),
        }
    }

    pub fn set_model_config(&mut self, m: &ModelConfig) {
        self.model = m.model.clone();
        self.mfe = m.mfe.clone();
        self.mom = m.mom.clone();
        self.ltfe = m.ltfe.clone();
        self.ccf = m.ccf.clone();
        self.cfb = m.cfb.clone();
        self.fusion = m.fusion.clone();
        self.gta = m.gta.clone();
        self.csi = m.csi.clone();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::SensorFusion;

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn overrides_apply() {
        let c = RunConfig::parse("[fusion]\nsensor = \"attention\"\n\n[train]\nlr = 0.01\n").unwrap();
        assert_eq!(c.fusion.sensor, SensorFusion::Attention);
        assert_eq!(c.train.lr, 0.01);
        assert_eq!(c.cfb, CfbConfig::default());
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = RunConfig::parse("[mfe]\nkernel = 4\n\n[cfb]\nr = 4\ndepth = 2\n").unwrap_err();
        match err {
            Error::ConfigParse { line, msg } => {
                assert_eq!(line, 6, "{msg}");
                assert!(msg.contains("depth"), "{msg}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_section_reports_line() {
        let err = RunConfig::parse("[mfe]\nkernel = 4\n[extras]\nx = 1\n").unwrap_err();
        assert!(matches!(err, Error::ConfigParse { line: 3, .. }), "{err}");
    }

    #[test]
    fn round_trips_through_text() {
        let mut c = RunConfig::default();
        c.cfb.k = 3;
        c.mom.p = 0.25;
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }
}
