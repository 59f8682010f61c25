//! TOML scenario files: parsing, full validation with field paths, and
//! conversion into model types.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::beamforming::{beamforming_duration_us, BeamformingMode, BfTiming};
use crate::channel::LinkBudgetConfig;
use crate::controller::{ControllerConfig, DemandSpec};
use crate::domain::{Codebook, McsEntry, McsTable, NodeId, NodeModel, Position, PowerLimits, Role};
use crate::engine::{FlowSpec, MaintenanceConfig, TrafficModel};
use crate::frame::FrameSizes;
use crate::maintenance::ClockModel;
use crate::schedule::{BeaconLayout, Direction, TddSlotStructure};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    /// Simulated time after beamforming, in milliseconds.
    pub duration_ms: f64,
    #[serde(default)]
    pub link_budget: LinkBudgetConfig,
    /// Replaces the default MCS table when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mcs: Option<Vec<McsEntry>>,
    #[serde(default)]
    pub slots: SlotsConfig,
    #[serde(default)]
    pub beacon: BeaconLayout,
    #[serde(default)]
    pub frame_sizes: FrameSizes,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub beamforming: BeamformingSection,
    #[serde(default)]
    pub maintenance: MaintenanceConfig,
    #[serde(default)]
    pub output: OutputConfig,
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub demands: Vec<DemandConfig>,
}

/// Uniform slot grid shared by all APs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlotsConfig {
    pub interval_us: u64,
    pub slot_us: u64,
    pub count: usize,
    pub basic: Vec<usize>,
}

impl Default for SlotsConfig {
    fn default() -> Self {
        let t = TddSlotStructure::default_layout(0);
        SlotsConfig {
            interval_us: t.interval_duration_us,
            slot_us: t.slots[0].duration_us,
            count: t.slots.len(),
            basic: t.basic_slots().collect(),
        }
    }
}

impl SlotsConfig {
    pub fn template(&self) -> TddSlotStructure {
        TddSlotStructure::uniform(0, self.interval_us, self.slot_us, self.count, &self.basic)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    #[default]
    Greedy,
    MaxRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub dl_share: u32,
    pub ul_share: u32,
    pub strategy: StrategyName,
}

impl Default for ControllerSection {
    fn default() -> Self {
        let c = ControllerConfig::default();
        ControllerSection { dl_share: c.dl_share, ul_share: c.ul_share, strategy: StrategyName::Greedy }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamformingSection {
    pub timing: BfTiming,
    /// Train every demanded pair not covered by `runs` with an individual
    /// exchange initiated by the AP.
    pub auto_train: bool,
    pub runs: Vec<BfRunConfig>,
}

impl Default for BeamformingSection {
    fn default() -> Self {
        BeamformingSection { timing: BfTiming::default(), auto_train: true, runs: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BfRunConfig {
    pub mode: BeamformingMode,
    pub initiator: NodeId,
    pub responders: Vec<NodeId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<PathBuf>,
}

fn default_sectors() -> usize {
    16
}
fn default_main() -> f64 {
    24.0
}
fn default_side() -> f64 {
    -20.0
}
fn default_tx_power() -> f64 {
    10.0
}
fn default_min_power() -> f64 {
    -10.0
}
fn default_max_power() -> f64 {
    30.0
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub id: NodeId,
    pub role: Role,
    pub x: f64,
    pub y: f64,
    #[serde(default = "default_sectors")]
    pub sectors: usize,
    #[serde(default)]
    pub first_boresight_deg: f64,
    #[serde(default = "default_main")]
    pub mainlobe_gain_dbi: f64,
    #[serde(default = "default_side")]
    pub sidelobe_gain_dbi: f64,
    #[serde(default = "default_tx_power")]
    pub tx_power_dbm: f64,
    #[serde(default = "default_min_power")]
    pub min_power_dbm: f64,
    #[serde(default = "default_max_power")]
    pub max_power_dbm: f64,
    #[serde(default = "yes")]
    pub tdd_capable: bool,
    #[serde(default)]
    pub clock: ClockModel,
}

impl NodeConfig {
    pub fn to_model(&self) -> crate::Result<NodeModel> {
        let cb =
            Codebook::uniform(self.sectors, self.first_boresight_deg, self.mainlobe_gain_dbi, self.sidelobe_gain_dbi)?;
        let limits = PowerLimits { min_dbm: self.min_power_dbm, max_dbm: self.max_power_dbm };
        Ok(NodeModel::new(self.id.clone(), self.role, Position::new(self.x, self.y), cb, self.tx_power_dbm, limits)?
            .with_tdd_capable(self.tdd_capable)
            .with_clock(self.clock))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandConfig {
    pub ap: NodeId,
    pub sta: NodeId,
    #[serde(default)]
    pub direction: Direction,
    pub rate_bps: f64,
    /// Offered traffic; constant bit rate at `rate_bps` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traffic: Option<TrafficModel>,
}

impl DemandConfig {
    pub fn traffic(&self) -> TrafficModel {
        self.traffic.unwrap_or(TrafficModel::Cbr { rate_bps: self.rate_bps })
    }
}

/// One semantic problem, located by a dotted field path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{} validation error(s): {}", .0.len(), .0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<ConfigIssue>),
}

impl ConfigError {
    pub fn issues(&self) -> Vec<ConfigIssue> {
        match self {
            ConfigError::Invalid(v) => v.clone(),
            ConfigError::Parse(m) => vec![ConfigIssue { path: String::new(), message: m.clone() }],
            ConfigError::Io { path, source } => {
                vec![ConfigIssue { path: path.display().to_string(), message: source.to_string() }]
            }
        }
    }
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_config(&text)
}

/// Parse and validate; every semantic issue is reported, not just the first.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let issues = cfg.validate();
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(issues))
    }
}

impl ScenarioConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config always serializes")
    }

    /// Make every implicit default explicit.
    pub fn normalized(&self) -> ScenarioConfig {
        let mut c = self.clone();
        if c.mcs.is_none() {
            c.mcs = Some(McsTable::default().entries().to_vec());
        }
        for d in &mut c.demands {
            d.traffic = Some(d.traffic());
        }
        c
    }

    pub fn mcs_table(&self) -> crate::Result<McsTable> {
        match &self.mcs {
            Some(entries) => McsTable::new(entries.clone()),
            None => Ok(McsTable::default()),
        }
    }

    pub fn controller_config(&self) -> ControllerConfig {
        ControllerConfig { dl_share: self.controller.dl_share, ul_share: self.controller.ul_share, layout: self.beacon }
    }

    pub fn node_models(&self) -> crate::Result<Vec<NodeModel>> {
        self.nodes.iter().map(NodeConfig::to_model).collect()
    }

    pub fn demand_specs(&self) -> Vec<DemandSpec> {
        self.demands
            .iter()
            .map(|d| DemandSpec { ap: d.ap.clone(), sta: d.sta.clone(), direction: d.direction, rate_bps: d.rate_bps })
            .collect()
    }

    pub fn flow_specs(&self) -> Vec<FlowSpec> {
        self.demands
            .iter()
            .map(|d| FlowSpec { ap: d.ap.clone(), sta: d.sta.clone(), direction: d.direction, traffic: d.traffic() })
            .collect()
    }

    pub fn duration_us(&self) -> u64 {
        (self.duration_ms * 1000.0).round() as u64
    }

    pub fn validate(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        let mut issue = |path: String, message: String| out.push(ConfigIssue { path, message });

        if !(self.duration_ms > 0.0) || !self.duration_ms.is_finite() {
            issue("duration_ms".into(), format!("must be positive, got {}", self.duration_ms));
        }
        if let Err(e) = self.link_budget.validate() {
            issue("link_budget".into(), e.to_string());
        }
        if let Err(e) = self.mcs_table() {
            issue("mcs".into(), e.to_string());
        }
        let template = self.slots.template();
        for v in template.violations() {
            issue("slots".into(), v.to_string());
        }
        for (i, b) in self.slots.basic.iter().enumerate() {
            if *b >= self.slots.count {
                issue(format!("slots.basic[{i}]"), format!("slot {b} does not exist"));
            }
        }
        if let Err(e) = self.beacon.validate(self.slots.interval_us) {
            issue("beacon".into(), e.to_string());
        }
        if self.controller.dl_share + self.controller.ul_share == 0 {
            issue("controller".into(), "dl_share and ul_share must not both be zero".into());
        }
        if let Err(e) = self.beamforming.timing.validate() {
            issue("beamforming.timing".into(), e.to_string());
        }
        if let Err(e) = self.maintenance.validate() {
            issue("maintenance".into(), e.to_string());
        }

        let mut ids = BTreeSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if !ids.insert(&n.id) {
                issue(format!("nodes[{i}].id"), format!("duplicate node id {}", n.id));
            }
            if n.sectors == 0 {
                issue(format!("nodes[{i}].sectors"), "needs at least one sector".into());
            } else if let Err(e) = n.to_model() {
                issue(format!("nodes[{i}]"), e.to_string());
            }
        }
        if self.nodes.is_empty() {
            issue("nodes".into(), "at least one node is required".into());
        }
        let role = |id: &NodeId| self.nodes.iter().find(|n| &n.id == id).map(|n| n.role);

        for (i, d) in self.demands.iter().enumerate() {
            match role(&d.ap) {
                None => issue(format!("demands[{i}].ap"), format!("unknown node {}", d.ap)),
                Some(r) if !r.is_ap() => issue(format!("demands[{i}].ap"), format!("{} is not an AP", d.ap)),
                _ => {}
            }
            match role(&d.sta) {
                None => issue(format!("demands[{i}].sta"), format!("unknown node {}", d.sta)),
                Some(r) if !r.is_sta() => issue(format!("demands[{i}].sta"), format!("{} is not a STA", d.sta)),
                _ => {}
            }
            if !(d.rate_bps >= 0.0) || !d.rate_bps.is_finite() {
                issue(format!("demands[{i}].rate_bps"), format!("must be non-negative, got {}", d.rate_bps));
            }
            if let Some(TrafficModel::Cbr { rate_bps } | TrafficModel::Poisson { rate_bps }) = d.traffic {
                if !(rate_bps > 0.0) || !rate_bps.is_finite() {
                    issue(format!("demands[{i}].traffic.rate_bps"), format!("must be positive, got {rate_bps}"));
                }
            }
            let dup = self.demands[..i].iter().any(|o| o.ap == d.ap && o.sta == d.sta && o.direction == d.direction);
            if dup {
                issue(format!("demands[{i}]"), format!("duplicate demand {} {} {}", d.ap, d.direction, d.sta));
            }
        }

        for (i, r) in self.beamforming.runs.iter().enumerate() {
            let initiator = self.nodes.iter().find(|n| n.id == r.initiator);
            if initiator.is_none() {
                issue(format!("beamforming.runs[{i}].initiator"), format!("unknown node {}", r.initiator));
            }
            let mut seen = BTreeSet::new();
            for (j, id) in r.responders.iter().enumerate() {
                if role(id).is_none() {
                    issue(format!("beamforming.runs[{i}].responders[{j}]"), format!("unknown node {id}"));
                } else if *id == r.initiator || !seen.insert(id) {
                    issue(
                        format!("beamforming.runs[{i}].responders[{j}]"),
                        format!("duplicate or self responder {id}"),
                    );
                }
            }
            if r.responders.is_empty() {
                issue(format!("beamforming.runs[{i}].responders"), "needs at least one responder".into());
            }
            if r.mode == BeamformingMode::Individual && r.responders.len() > 1 {
                issue(
                    format!("beamforming.runs[{i}].responders"),
                    "individual mode takes exactly one responder".into(),
                );
            }
            if let Some(init) = initiator {
                let max_rx = r
                    .responders
                    .iter()
                    .filter_map(|id| self.nodes.iter().find(|n| &n.id == id))
                    .map(|n| n.sectors)
                    .max()
                    .unwrap_or(1);
                let reps = self.beamforming.timing.repetitions.unwrap_or(max_rx);
                let need =
                    beamforming_duration_us(r.mode, init.sectors, r.responders.len(), reps, &self.beamforming.timing);
                if need > self.beacon.sp_duration_us {
                    issue(
                        format!("beamforming.runs[{i}]"),
                        format!("needs {need}us but an SP lasts {}us", self.beacon.sp_duration_us),
                    );
                }
            }
        }

        for (i, p) in self.maintenance.periodic_reports.iter().enumerate() {
            if role(&p.requester).is_none() {
                issue(format!("maintenance.periodic_reports[{i}].requester"), format!("unknown node {}", p.requester));
            }
            if role(&p.responder).is_none() {
                issue(format!("maintenance.periodic_reports[{i}].responder"), format!("unknown node {}", p.responder));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_NODE: &str = r#"
seed = 1
duration_ms = 50.0

[[nodes]]
id = "ap"
role = "dn_ap"
x = 0.0
y = 0.0

[[nodes]]
id = "sta"
role = "cn_sta"
x = 100.0
y = 0.0

[[demands]]
ap = "ap"
sta = "sta"
rate_bps = 1e9
"#;

    #[test]
    fn parses_with_defaults() {
        let c = parse_config(TWO_NODE).unwrap();
        assert_eq!(c.nodes[1].sectors, 16);
        assert_eq!(c.demands[0].direction, Direction::Downlink);
        assert_eq!(c.demands[0].traffic(), TrafficModel::Cbr { rate_bps: 1e9 });
        assert_eq!(c.slots.template(), TddSlotStructure::default_layout(0));
        assert_eq!(c.duration_us(), 50_000);
    }

    #[test]
    fn round_trip_is_stable() {
        let c = parse_config(TWO_NODE).unwrap().normalized();
        let again = parse_config(&c.to_toml()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.normalized(), c);
    }

    #[test]
    fn reports_every_issue_with_a_path() {
        let bad =
            TWO_NODE.replace("duration_ms = 50.0", "duration_ms = -5.0").replace("sta = \"sta\"", "sta = \"ghost\"");
        let ConfigError::Invalid(issues) = parse_config(&bad).unwrap_err() else { panic!("expected semantic errors") };
        let paths: Vec<&str> = issues.iter().map(|i| i.path.as_str()).collect();
        assert!(paths.contains(&"duration_ms"));
        assert!(paths.contains(&"demands[0].sta"));
    }

    #[test]
    fn syntax_errors_carry_a_position() {
        let err = parse_config("seed = \nduration_ms = 1").unwrap_err();
        let ConfigError::Parse(msg) = err else { panic!("expected parse error") };
        assert!(msg.contains("line 1"), "{msg}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(matches!(parse_config(&format!("{TWO_NODE}\nbogus = 1\n")), Err(ConfigError::Parse(_))));
    }
}
