//! TOML experiment file with `[inputs]`, `[optics]` and `[protocol]` tables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::behavior::InputDist;
use crate::certifier::DiMode;
use crate::photonic_sim::{DoubleClickRule, OpticalModel};
use crate::protocol::{ProtocolError, Seeds, SessionParams};
use crate::transport::{DEFAULT_ACK_EVERY, DEFAULT_PORT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputsSection {
    pub p_switch: f64,
    pub px: InputDist<f64>,
    pub py: InputDist<f64>,
    pub pz: InputDist<f64>,
}

impl Default for InputsSection {
    fn default() -> Self {
        let m = OpticalModel::<f64>::default();
        Self { p_switch: m.p_switch, px: m.px, py: m.py, pz: m.pz }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpticsSection {
    pub eta_a: f64,
    pub eta_b: f64,
    pub eta_c: f64,
    pub angles_a: [f64; 2],
    pub angles_b: [f64; 2],
    pub angles_c: [f64; 2],
    pub double_click_rule: DoubleClickRule,
    pub visibility: f64,
}

impl Default for OpticsSection {
    fn default() -> Self {
        let m = OpticalModel::<f64>::default();
        Self {
            eta_a: m.eta_a,
            eta_b: m.eta_b,
            eta_c: m.eta_c,
            angles_a: m.angles_a,
            angles_b: m.angles_b,
            angles_c: m.angles_c,
            double_click_rule: m.double_click_rule,
            visibility: m.visibility,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    pub rounds: u64,
    pub gamma: f64,
    /// Test probability in s=1 rounds; `gamma` when absent.
    pub gamma_client: Option<f64>,
    pub mode: DiMode,
    pub seed_server: u64,
    pub seed_client: u64,
    pub seed_switch: u64,
    pub accept_sigmas: f64,
    /// Entropy threshold per counted round; the accepted set's minimum of
    /// the min-tradeoff function when absent.
    pub threshold: Option<f64>,
    pub level: Option<String>,
    pub security_exponent: u32,
    pub ack_every: u32,
    pub host: String,
    pub port: u16,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            rounds: 100_000,
            gamma: 0.1,
            gamma_client: None,
            mode: DiMode::SemiDi,
            seed_server: 1,
            seed_client: 2,
            seed_switch: 3,
            accept_sigmas: 3.0,
            threshold: None,
            level: None,
            security_exponent: 32,
            ack_every: DEFAULT_ACK_EVERY,
            host: "127.0.0.1".into(),
            port: DEFAULT_PORT,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub inputs: InputsSection,
    pub optics: OpticsSection,
    pub protocol: ProtocolSection,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing config: {0}")]
    Toml(#[from] toml::de::Error),
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let s = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&s)
    }

    pub fn optical_model(&self) -> OpticalModel<f64> {
        let (i, o) = (&self.inputs, &self.optics);
        OpticalModel {
            eta_a: o.eta_a,
            eta_b: o.eta_b,
            eta_c: o.eta_c,
            angles_a: o.angles_a,
            angles_b: o.angles_b,
            angles_c: o.angles_c,
            p_switch: i.p_switch,
            px: i.px,
            py: i.py,
            pz: i.pz,
            double_click_rule: o.double_click_rule,
            visibility: o.visibility,
        }
    }

    pub fn seeds(&self) -> Seeds {
        let p = &self.protocol;
        Seeds { server: p.seed_server, client: p.seed_client, switch: p.seed_switch }
    }

    pub fn session_params(&self) -> Result<SessionParams, ProtocolError> {
        let p = &self.protocol;
        let mut params = SessionParams::new(p.rounds, p.gamma, &self.optical_model(), self.seeds(), p.mode);
        params.gamma[1] = p.gamma_client.unwrap_or(p.gamma);
        params.validate()?;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.optical_model(), OpticalModel::default());
    }

    #[test]
    fn sections_parse() {
        let c = ExperimentConfig::from_toml(
            r#"
            [inputs]
            p_switch = 0.3
            pz = [0.25, 0.75]
            [optics]
            eta_c = 0.8
            double_click_rule = "inconclusive"
            [protocol]
            rounds = 1000
            gamma = 0.2
            gamma_client = 0.05
            mode = "fully_di"
            seed_client = 9
            "#,
        )
        .unwrap();
        let m = c.optical_model();
        assert_eq!((m.p_switch, m.pz, m.eta_c), (0.3, [0.25, 0.75], 0.8));
        assert_eq!(m.double_click_rule, DoubleClickRule::Inconclusive);
        let p = c.session_params().unwrap();
        assert_eq!((p.n, p.gamma, p.mode, p.seeds.client), (1000, [0.2, 0.05], DiMode::FullyDi, 9));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("[optics]\netac = 0.5\n").is_err());
        assert!(ExperimentConfig::from_toml("[extra]\n").is_err());
    }
}
