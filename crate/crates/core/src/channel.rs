//! Deterministic line-of-sight link budget between (node, sector)
//! endpoints.

use serde::{Deserialize, Serialize};

use crate::domain::{NodeId, NodeModel};
use crate::error::{Error, Result};

/// Thermal noise density at 290 K in dBm/Hz.
const THERMAL_NOISE_DBM_HZ: f64 = -174.0;
/// 20·log10(4π/c) in dB.
const FSPL_CONSTANT_DB: f64 = -147.55;
pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossOffset {
    pub a: NodeId,
    pub b: NodeId,
    pub db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkBudgetConfig {
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    /// Interference above `noise_floor + interference_threshold_db` at a
    /// victim receiver makes two transmissions conflict.
    pub interference_threshold_db: f64,
    /// Extra constant loss per node pair, applied in both directions.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub loss_offsets: Vec<LossOffset>,
}

impl Default for LinkBudgetConfig {
    fn default() -> Self {
        LinkBudgetConfig {
            carrier_hz: 60e9,
            bandwidth_hz: 2.16e9,
            noise_figure_db: 10.0,
            interference_threshold_db: 0.0,
            loss_offsets: Vec::new(),
        }
    }
}

impl LinkBudgetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_hz > 0.0) {
            return Err(Error::invalid("carrier_hz must be positive"));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::invalid("bandwidth_hz must be positive"));
        }
        Ok(())
    }

    pub fn noise_floor_dbm(&self) -> f64 {
        THERMAL_NOISE_DBM_HZ + 10.0 * self.bandwidth_hz.log10() + self.noise_figure_db
    }

    /// Received power above which an unintended transmitter conflicts.
    pub fn interference_limit_dbm(&self) -> f64 {
        self.noise_floor_dbm() + self.interference_threshold_db
    }

    fn offset_db(&self, a: &NodeId, b: &NodeId) -> f64 {
        self.loss_offsets.iter().filter(|o| (&o.a == a && &o.b == b) || (&o.a == b && &o.b == a)).map(|o| o.db).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSample {
    pub tx_node: NodeId,
    pub rx_node: NodeId,
    pub tx_sector: usize,
    pub rx_sector: usize,
    pub snr_db: f64,
    pub rcpi_dbm: f64,
    pub rsni_db: f64,
}

/// Friis free-space loss in dB.
pub fn path_loss_db(distance_m: f64, carrier_hz: f64) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::invalid(format!("distance must be positive, got {distance_m} m")));
    }
    if !(carrier_hz > 0.0) {
        return Err(Error::invalid("carrier frequency must be positive"));
    }
    Ok(20.0 * distance_m.log10() + 20.0 * carrier_hz.log10() + FSPL_CONSTANT_DB)
}

/// Propagation delay rounded up to whole microseconds.
pub fn propagation_delay_us(distance_m: f64) -> u64 {
    (distance_m / SPEED_OF_LIGHT_M_S * 1e6).ceil() as u64
}

fn pair_gain_db(tx: &NodeModel, tx_sector: usize, rx: &NodeModel, rx_sector: usize) -> Result<f64> {
    let tx_gain = tx.codebook.sector(tx_sector)?.gain_dbi(tx.position.bearing_to(&rx.position));
    let rx_gain = rx.codebook.sector(rx_sector)?.gain_dbi(rx.position.bearing_to(&tx.position));
    // summed as a pair so swapping roles gives a bit-identical result
    Ok(tx_gain + rx_gain)
}

/// Power received at `rx` (listening on `rx_sector`) from `tx`
/// transmitting on `tx_sector`, in dBm.
pub fn received_power_dbm(
    tx: &NodeModel,
    tx_sector: usize,
    rx: &NodeModel,
    rx_sector: usize,
    cfg: &LinkBudgetConfig,
) -> Result<f64> {
    let d = tx.position.distance_to(&rx.position);
    if !(d > 0.0) {
        return Err(Error::invalid(format!("nodes {} and {} are coincident", tx.id, rx.id)));
    }
    let gains = pair_gain_db(tx, tx_sector, rx, rx_sector)?;
    let loss = path_loss_db(d, cfg.carrier_hz)? + cfg.offset_db(&tx.id, &rx.id);
    Ok(tx.tx_power_dbm() + gains - loss)
}

pub fn link_snr_db(
    tx: &NodeModel,
    tx_sector: usize,
    rx: &NodeModel,
    rx_sector: usize,
    cfg: &LinkBudgetConfig,
) -> Result<LinkSample> {
    let noise = cfg.noise_floor_dbm();
    let rcpi = received_power_dbm(tx, tx_sector, rx, rx_sector, cfg)?;
    let snr = rcpi - noise;
    Ok(LinkSample {
        tx_node: tx.id.clone(),
        rx_node: rx.id.clone(),
        tx_sector,
        rx_sector,
        snr_db: snr,
        rcpi_dbm: rcpi,
        rsni_db: snr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Codebook, Position, PowerLimits, Role, Sector};
    use proptest::prelude::*;

    const LIM: PowerLimits = PowerLimits { min_dbm: -10.0, max_dbm: 40.0 };

    fn node(id: &str, x: f64, y: f64, boresight: f64, power: f64) -> NodeModel {
        let s = |index, b| Sector {
            index,
            boresight_deg: b,
            beamwidth_deg: 30.0,
            mainlobe_gain_dbi: 25.0,
            sidelobe_gain_dbi: -10.0,
        };
        let cb = Codebook::new(vec![s(0, boresight), s(1, boresight + 180.0)]).unwrap();
        NodeModel::new(id, Role::DnAp, Position::new(x, y), cb, power, LIM).unwrap()
    }

    // independent Friis evaluation: (4·π·d·f/c)^2 in dB
    fn friis_oracle(d: f64, f: f64) -> f64 {
        let ratio = 4.0 * std::f64::consts::PI * d * f / SPEED_OF_LIGHT_M_S;
        10.0 * (ratio * ratio).log10()
    }

    #[test]
    fn friis_examples() {
        for (d, want) in [(1.0, 68.0), (100.0, 108.0), (300.0, 117.6)] {
            let got = path_loss_db(d, 60e9).unwrap();
            assert!((got - want).abs() < 0.1, "{d} m: {got}");
            assert!((got - friis_oracle(d, 60e9)).abs() < 0.01);
        }
        assert!(path_loss_db(0.0, 60e9).is_err());
        assert!(path_loss_db(-1.0, 60e9).is_err());
    }

    #[test]
    fn link_budget_example() {
        let cfg = LinkBudgetConfig::default();
        assert!((cfg.noise_floor_dbm() - -70.66).abs() < 0.05);
        let a = node("a", 0.0, 0.0, 0.0, 10.0);
        let b = node("b", 100.0, 0.0, 180.0, 10.0);
        let s = link_snr_db(&a, 0, &b, 0, &cfg).unwrap();
        // 10 + 25 + 25 - 108.0 - (-70.66)
        assert!((s.snr_db - 22.7).abs() < 0.2, "{}", s.snr_db);
        assert_eq!(s.rsni_db, s.snr_db);
        assert!((s.rcpi_dbm - (s.snr_db + cfg.noise_floor_dbm())).abs() < 1e-9);

        let away = link_snr_db(&a, 0, &b, 1, &cfg).unwrap();
        assert!((s.snr_db - away.snr_db - 35.0).abs() < 1e-9);

        let back = link_snr_db(&b, 0, &a, 0, &cfg).unwrap();
        assert_eq!(back.snr_db, s.snr_db);
    }

    #[test]
    fn coincident_nodes_rejected() {
        let a = node("a", 5.0, 5.0, 0.0, 10.0);
        let b = node("b", 5.0, 5.0, 0.0, 10.0);
        assert!(link_snr_db(&a, 0, &b, 0, &LinkBudgetConfig::default()).is_err());
    }

    #[test]
    fn loss_offset_is_symmetric() {
        let mut cfg = LinkBudgetConfig::default();
        cfg.loss_offsets.push(LossOffset { a: "a".into(), b: "b".into(), db: 6.0 });
        let a = node("a", 0.0, 0.0, 0.0, 10.0);
        let b = node("b", 100.0, 0.0, 180.0, 10.0);
        let base = link_snr_db(&a, 0, &b, 0, &LinkBudgetConfig::default()).unwrap().snr_db;
        assert!((link_snr_db(&a, 0, &b, 0, &cfg).unwrap().snr_db - (base - 6.0)).abs() < 1e-9);
        assert_eq!(link_snr_db(&a, 0, &b, 0, &cfg).unwrap().snr_db, link_snr_db(&b, 0, &a, 0, &cfg).unwrap().snr_db);
    }

    fn best_pair(a: &NodeModel, b: &NodeModel, cfg: &LinkBudgetConfig) -> (usize, usize) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for i in 0..a.codebook.len() {
            for j in 0..b.codebook.len() {
                let s = link_snr_db(a, i, b, j, cfg).unwrap().snr_db;
                if s > best.2 {
                    best = (i, j, s);
                }
            }
        }
        (best.0, best.1)
    }

    fn uniform_node(id: &str, x: f64, y: f64, n: usize, rot: f64, power: f64) -> NodeModel {
        let cb = Codebook::uniform(n, rot, 24.0, -6.0).unwrap();
        NodeModel::new(id, Role::CnSta, Position::new(x, y), cb, power, LIM).unwrap()
    }

    proptest! {
        #[test]
        fn reciprocity_exact(x in -300.0f64..300.0, y in 1.0f64..300.0, n in 2usize..12, m in 2usize..12,
                             rot in -180.0f64..180.0, p in 0.0f64..20.0, i in 0usize..12, j in 0usize..12) {
            let cfg = LinkBudgetConfig::default();
            let a = uniform_node("a", 0.0, 0.0, n, 0.0, p);
            let b = uniform_node("b", x, y, m, rot, p);
            let (i, j) = (i % n, j % m);
            prop_assert_eq!(
                link_snr_db(&a, i, &b, j, &cfg).unwrap().snr_db,
                link_snr_db(&b, j, &a, i, &cfg).unwrap().snr_db
            );
        }

        #[test]
        fn monotone_in_distance_and_power(d in 1.0f64..1000.0, extra in 0.1f64..500.0, dp in 0.0f64..10.0) {
            let cfg = LinkBudgetConfig::default();
            let a = uniform_node("a", 0.0, 0.0, 4, 0.0, 5.0);
            let near = uniform_node("b", d, 0.0, 4, 180.0, 5.0);
            let far = uniform_node("b", d + extra, 0.0, 4, 180.0, 5.0);
            let s_near = link_snr_db(&a, 0, &near, 0, &cfg).unwrap().snr_db;
            let s_far = link_snr_db(&a, 0, &far, 0, &cfg).unwrap().snr_db;
            prop_assert!(s_far < s_near);

            let mut louder = a.clone();
            louder.set_tx_power_dbm(5.0 + dp);
            let s_loud = link_snr_db(&louder, 0, &near, 0, &cfg).unwrap().snr_db;
            prop_assert!((s_loud - s_near - dp).abs() < 1e-9);
        }

        #[test]
        fn argmax_invariant_under_power(x in -300.0f64..300.0, y in 1.0f64..300.0, rot in -180.0f64..180.0,
                                        p in 0.0f64..10.0, dp in 0.0f64..10.0) {
            let cfg = LinkBudgetConfig::default();
            let a = uniform_node("a", 0.0, 0.0, 6, 0.0, p);
            let b = uniform_node("b", x, y, 8, rot, p);
            let mut a2 = a.clone();
            a2.set_tx_power_dbm(p + dp);
            prop_assert_eq!(best_pair(&a, &b, &cfg), best_pair(&a2, &b, &cfg));
        }
    }
}
