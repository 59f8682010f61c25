//! Identifiers, nodes, sector codebooks, the MCS table and the
//! distribution-network requirement constants shared by every other module.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maintenance::ClockModel;

#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

/// A DN sector acts as an AP. A DN taking the STA side of a DN-DN hop, or a
/// CN, acts as a STA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    DnAp,
    DnSta,
    CnSta,
}

impl Role {
    pub fn is_ap(self) -> bool {
        matches!(self, Role::DnAp)
    }

    pub fn is_sta(self) -> bool {
        !self.is_ap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance_to(&self, other: &Position) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }

    /// Bearing from `self` towards `other` in degrees, in (-180, 180].
    pub fn bearing_to(&self, other: &Position) -> f64 {
        normalize_deg((other.y - self.y).atan2(other.x - self.x).to_degrees())
    }
}

/// Wraps an angle into (-180, 180].
pub fn normalize_deg(angle: f64) -> f64 {
    let mut a = angle % 360.0;
    if a <= -180.0 {
        a += 360.0;
    } else if a > 180.0 {
        a -= 360.0;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    pub index: usize,
    pub boresight_deg: f64,
    pub beamwidth_deg: f64,
    pub mainlobe_gain_dbi: f64,
    pub sidelobe_gain_dbi: f64,
}

impl Sector {
    /// Flat-top pattern: mainlobe gain inside the beamwidth (edges
    /// inclusive), sidelobe floor everywhere else.
    pub fn gain_dbi(&self, angle_deg: f64) -> f64 {
        let off = normalize_deg(angle_deg - self.boresight_deg).abs();
        if off <= self.beamwidth_deg / 2.0 {
            self.mainlobe_gain_dbi
        } else {
            self.sidelobe_gain_dbi
        }
    }
}

/// Sector codebook shared by transmit and receive (antenna reciprocity).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Sector>", into = "Vec<Sector>")]
pub struct Codebook {
    sectors: Vec<Sector>,
}

impl Codebook {
    pub fn new(sectors: Vec<Sector>) -> Result<Self> {
        if sectors.is_empty() {
            return Err(Error::invalid("codebook has no sectors"));
        }
        for (i, s) in sectors.iter().enumerate() {
            if s.index != i {
                return Err(Error::invalid(format!(
                    "sector indices must be 0..n-1 in order; position {i} holds index {}",
                    s.index
                )));
            }
            if !(s.mainlobe_gain_dbi > s.sidelobe_gain_dbi) {
                return Err(Error::invalid(format!(
                    "sector {i}: mainlobe gain {} dBi must exceed sidelobe gain {} dBi",
                    s.mainlobe_gain_dbi, s.sidelobe_gain_dbi
                )));
            }
            if !(s.beamwidth_deg > 0.0 && s.beamwidth_deg <= 360.0) {
                return Err(Error::invalid(format!("sector {i}: beamwidth {} deg out of (0, 360]", s.beamwidth_deg)));
            }
        }
        Ok(Codebook { sectors })
    }

    /// `n` equal sectors tiling the circle, sector 0 centred on
    /// `first_boresight_deg`.
    pub fn uniform(n: usize, first_boresight_deg: f64, main_dbi: f64, side_dbi: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("codebook needs at least one sector"));
        }
        let width = 360.0 / n as f64;
        Codebook::new(
            (0..n)
                .map(|i| Sector {
                    index: i,
                    boresight_deg: normalize_deg(first_boresight_deg + i as f64 * width),
                    beamwidth_deg: width,
                    mainlobe_gain_dbi: main_dbi,
                    sidelobe_gain_dbi: side_dbi,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.sectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sectors.is_empty()
    }

    pub fn sectors(&self) -> &[Sector] {
        &self.sectors
    }

    pub fn sector(&self, index: usize) -> Result<&Sector> {
        self.sectors
            .get(index)
            .ok_or_else(|| Error::invalid(format!("unknown sector index {index} (codebook has {})", self.len())))
    }
}

impl TryFrom<Vec<Sector>> for Codebook {
    type Error = Error;

    fn try_from(sectors: Vec<Sector>) -> Result<Self> {
        Codebook::new(sectors)
    }
}

impl From<Codebook> for Vec<Sector> {
    fn from(cb: Codebook) -> Self {
        cb.sectors
    }
}

pub fn sector_gain_dbi(codebook: &Codebook, sector_index: usize, angle_deg: f64) -> Result<f64> {
    Ok(codebook.sector(sector_index)?.gain_dbi(angle_deg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLimits {
    pub min_dbm: f64,
    pub max_dbm: f64,
}

impl PowerLimits {
    pub fn clamp(&self, dbm: f64) -> f64 {
        dbm.clamp(self.min_dbm, self.max_dbm)
    }

    pub fn contains(&self, dbm: f64) -> bool {
        dbm >= self.min_dbm && dbm <= self.max_dbm
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeModel {
    pub id: NodeId,
    pub role: Role,
    pub position: Position,
    pub codebook: Codebook,
    tx_power_dbm: f64,
    pub power_limits: PowerLimits,
    pub tdd_capable: bool,
    pub clock: ClockModel,
}

impl NodeModel {
    pub fn new(
        id: impl Into<NodeId>,
        role: Role,
        position: Position,
        codebook: Codebook,
        tx_power_dbm: f64,
        power_limits: PowerLimits,
    ) -> Result<Self> {
        if power_limits.min_dbm > power_limits.max_dbm {
            return Err(Error::invalid("power limits: min above max"));
        }
        if !power_limits.contains(tx_power_dbm) {
            return Err(Error::invalid(format!(
                "tx power {tx_power_dbm} dBm outside [{}, {}]",
                power_limits.min_dbm, power_limits.max_dbm
            )));
        }
        Ok(NodeModel {
            id: id.into(),
            role,
            position,
            codebook,
            tx_power_dbm,
            power_limits,
            tdd_capable: true,
            clock: ClockModel::default(),
        })
    }

    pub fn with_tdd_capable(mut self, capable: bool) -> Self {
        self.tdd_capable = capable;
        self
    }

    pub fn with_clock(mut self, clock: ClockModel) -> Self {
        self.clock = clock;
        self
    }

    pub fn tx_power_dbm(&self) -> f64 {
        self.tx_power_dbm
    }

    /// Sets the transmit power, clamped to the node's limits. Returns the
    /// value actually applied.
    pub fn set_tx_power_dbm(&mut self, dbm: f64) -> f64 {
        self.tx_power_dbm = self.power_limits.clamp(dbm);
        self.tx_power_dbm
    }

    /// Only AP-role nodes own schedules.
    pub fn may_own_schedule(&self) -> bool {
        self.role.is_ap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McsEntry {
    pub mcs_index: u8,
    pub min_snr_db: f64,
    pub phy_rate_bps: f64,
}

/// MCS table sorted by threshold, strictly increasing in both SNR
/// threshold and PHY rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<McsEntry>", into = "Vec<McsEntry>")]
pub struct McsTable {
    entries: Vec<McsEntry>,
}

impl McsTable {
    pub fn new(entries: Vec<McsEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("MCS table is empty"));
        }
        for w in entries.windows(2) {
            if !(w[1].min_snr_db > w[0].min_snr_db && w[1].phy_rate_bps > w[0].phy_rate_bps) {
                return Err(Error::invalid(format!(
                    "MCS table not strictly increasing between MCS {} and MCS {}",
                    w[0].mcs_index, w[1].mcs_index
                )));
            }
        }
        Ok(McsTable { entries })
    }

    pub fn entries(&self) -> &[McsEntry] {
        &self.entries
    }

    /// Lowest entry (MCS 0): threshold for control frames and decoding.
    pub fn lowest(&self) -> &McsEntry {
        &self.entries[0]
    }

    pub fn decode_threshold_db(&self) -> f64 {
        self.lowest().min_snr_db
    }

    pub fn select(&self, snr_db: f64) -> Option<&McsEntry> {
        self.entries.iter().rev().find(|e| e.min_snr_db <= snr_db)
    }
}

impl Default for McsTable {
    fn default() -> Self {
        let rows: [(u8, f64, f64); 9] = [
            (0, 1.0, 385e6),
            (1, 3.0, 770e6),
            (2, 5.0, 1155e6),
            (3, 7.0, 1540e6),
            (4, 9.0, 1925e6),
            (6, 12.0, 2693e6),
            (8, 15.0, 3080e6),
            (10, 17.0, 3850e6),
            (12, 18.0, 4620e6),
        ];
        McsTable {
            entries: rows
                .iter()
                .map(|&(mcs_index, min_snr_db, phy_rate_bps)| McsEntry { mcs_index, min_snr_db, phy_rate_bps })
                .collect(),
        }
    }
}

impl TryFrom<Vec<McsEntry>> for McsTable {
    type Error = Error;

    fn try_from(entries: Vec<McsEntry>) -> Result<Self> {
        McsTable::new(entries)
    }
}

impl From<McsTable> for Vec<McsEntry> {
    fn from(t: McsTable) -> Self {
        t.entries
    }
}

/// Highest-rate entry whose threshold is met, or `None` below MCS 0.
pub fn mcs_from_snr(table: &[McsEntry], snr_db: f64) -> Result<Option<McsEntry>> {
    if table.is_empty() {
        return Err(Error::invalid("MCS table is empty"));
    }
    Ok(table
        .iter()
        .filter(|e| e.min_snr_db <= snr_db)
        .max_by(|a, b| a.phy_rate_bps.total_cmp(&b.phy_rate_bps))
        .copied())
}

/// Distribution-network service requirements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Requirements {
    pub max_hop_m: f64,
    pub min_dl_rate_bps: f64,
    pub max_latency_s: f64,
}

pub const REQUIREMENTS: Requirements = Requirements { max_hop_m: 300.0, min_dl_rate_bps: 4e9, max_latency_s: 15e-3 };

impl Requirements {
    pub fn hop_ok(&self, distance_m: f64) -> bool {
        distance_m <= self.max_hop_m
    }

    pub fn dl_rate_ok(&self, rate_bps: f64) -> bool {
        rate_bps > self.min_dl_rate_bps
    }

    pub fn latency_ok(&self, latency_s: f64) -> bool {
        latency_s < self.max_latency_s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_sector() -> Codebook {
        Codebook::new(vec![Sector {
            index: 0,
            boresight_deg: 0.0,
            beamwidth_deg: 30.0,
            mainlobe_gain_dbi: 25.0,
            sidelobe_gain_dbi: -10.0,
        }])
        .unwrap()
    }

    #[test]
    fn flat_top_gain() {
        let cb = one_sector();
        assert_eq!(sector_gain_dbi(&cb, 0, 0.0).unwrap(), 25.0);
        assert_eq!(sector_gain_dbi(&cb, 0, 15.0).unwrap(), 25.0);
        assert_eq!(sector_gain_dbi(&cb, 0, -15.0).unwrap(), 25.0);
        assert_eq!(sector_gain_dbi(&cb, 0, 90.0).unwrap(), -10.0);
        assert!(matches!(sector_gain_dbi(&cb, 1, 0.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn gain_wraps_around_180() {
        let cb = Codebook::uniform(4, 180.0, 20.0, -5.0).unwrap();
        assert_eq!(sector_gain_dbi(&cb, 0, -170.0).unwrap(), 20.0);
        assert_eq!(sector_gain_dbi(&cb, 0, 170.0).unwrap(), 20.0);
    }

    #[test]
    fn codebook_rejects_bad_sectors() {
        let mut s = one_sector().sectors()[0];
        s.index = 1;
        assert!(Codebook::new(vec![s]).is_err());
        let mut s = one_sector().sectors()[0];
        s.sidelobe_gain_dbi = 25.0;
        assert!(Codebook::new(vec![s]).is_err());
        assert!(Codebook::new(vec![]).is_err());
    }

    #[test]
    fn mcs_lookup_default_table() {
        let t = McsTable::default();
        assert_eq!(mcs_from_snr(t.entries(), -5.0).unwrap(), None);
        let m0 = mcs_from_snr(t.entries(), 1.0).unwrap().unwrap();
        assert_eq!((m0.mcs_index, m0.phy_rate_bps), (0, 385e6));
        let top = mcs_from_snr(t.entries(), 30.0).unwrap().unwrap();
        assert_eq!((top.mcs_index, top.phy_rate_bps), (12, 4620e6));
        assert!(mcs_from_snr(&[], 10.0).is_err());
    }

    #[test]
    fn mcs_table_must_be_monotone() {
        let mut rows: Vec<McsEntry> = McsTable::default().into();
        rows.swap(2, 3);
        assert!(McsTable::new(rows).is_err());
    }

    #[test]
    fn power_limits_enforced() {
        let lim = PowerLimits { min_dbm: 0.0, max_dbm: 20.0 };
        assert!(NodeModel::new("a", Role::DnAp, Position::default(), one_sector(), 25.0, lim).is_err());
        let mut n = NodeModel::new("a", Role::DnAp, Position::default(), one_sector(), 10.0, lim).unwrap();
        assert_eq!(n.set_tx_power_dbm(30.0), 20.0);
        assert_eq!(n.set_tx_power_dbm(-3.0), 0.0);
        assert!(n.may_own_schedule());
    }

    proptest! {
        #[test]
        fn gain_symmetric_about_boresight(b in -180i32..180, d in 0i32..180) {
            let sector = Sector { index: 0, boresight_deg: b as f64, beamwidth_deg: 40.0,
                mainlobe_gain_dbi: 20.0, sidelobe_gain_dbi: -8.0 };
            let cb = Codebook::new(vec![sector]).unwrap();
            let plus = sector_gain_dbi(&cb, 0, normalize_deg((b + d) as f64)).unwrap();
            let minus = sector_gain_dbi(&cb, 0, normalize_deg((b - d) as f64)).unwrap();
            prop_assert_eq!(plus, minus);
        }

        #[test]
        fn mcs_monotone(a in -10.0f64..40.0, b in -10.0f64..40.0) {
            let t = McsTable::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let rate = |s| mcs_from_snr(t.entries(), s).unwrap().map_or(0.0, |e| e.phy_rate_bps);
            prop_assert!(rate(lo) <= rate(hi));
        }
    }
}
