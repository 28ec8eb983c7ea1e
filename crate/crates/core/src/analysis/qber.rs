//! Time-gated QBER for the three-state (HVDD) protocol.
//!
//! Each label is sent in one basis and has one expected detector; each
//! detector belongs to one basis. An event is sifted in only when its
//! detector's basis matches its label's basis, so a D pulse landing on an
//! H/V detector is dropped rather than counted as an error, and vice versa.
//! Among sifted, gated events an error is a detection on any channel other
//! than the expected one.
//!
//! The default map is H→0, V→1 in Z and D→2, A→3 in X, with detectors 0 and
//! 1 measuring Z and 2 and 3 measuring X.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::sources::Symbol;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisMap {
    /// Label → (basis, expected detector).
    pub labels: BTreeMap<Symbol, (Basis, u8)>,
    /// Detector → basis it measures in.
    pub detectors: BTreeMap<u8, Basis>,
}

impl Default for BasisMap {
    fn default() -> Self {
        let labels = [
            (Symbol::H, (Basis::Z, 0)),
            (Symbol::V, (Basis::Z, 1)),
            (Symbol::D, (Basis::X, 2)),
            (Symbol::A, (Basis::X, 3)),
        ];
        let detectors = [(0, Basis::Z), (1, Basis::Z), (2, Basis::X), (3, Basis::X)];
        Self {
            labels: labels.into_iter().collect(),
            detectors: detectors.into_iter().collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggedEvent {
    pub time_ps: f64,
    pub detected: u8,
    pub label: Symbol,
}

/// Acceptance window of `width` ps centred on phase `center` within each
/// period.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub center: f64,
    pub width: f64,
}

impl Gate {
    pub fn contains(&self, t: f64, period: f64) -> bool {
        if self.width >= period {
            return true;
        }
        let d = (t - self.center).rem_euclid(period);
        d.min(period - d) <= 0.5 * self.width
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QberReport {
    pub qber: f64,
    pub errors: u64,
    /// Sifted events inside the gate.
    pub gated: u64,
    /// Events inside the gate dropped for basis mismatch.
    pub basis_mismatch: u64,
    pub outside_gate: u64,
    /// Binomial standard error of `qber`.
    pub std_error: f64,
    pub per_basis: BTreeMap<Basis, (u64, u64)>,
}

pub fn qber(events: &[TaggedEvent], gate: Gate, period: f64, map: &BasisMap) -> Result<QberReport, AnalysisError> {
    if !(period.is_finite() && period > 0.0) {
        return Err(AnalysisError::InvalidParameter(format!(
            "period must be positive, got {period}"
        )));
    }
    if !(gate.width > 0.0 && gate.width <= period) {
        return Err(AnalysisError::InvalidParameter(format!(
            "gate width {} must lie in (0, {period}]",
            gate.width
        )));
    }
    let (mut errors, mut gated, mut mismatch, mut outside) = (0u64, 0u64, 0u64, 0u64);
    let mut per_basis: BTreeMap<Basis, (u64, u64)> = BTreeMap::new();
    for e in events {
        if !gate.contains(e.time_ps, period) {
            outside += 1;
            continue;
        }
        let (Some(&(basis, expected)), Some(&det_basis)) = (map.labels.get(&e.label), map.detectors.get(&e.detected))
        else {
            mismatch += 1;
            continue;
        };
        if basis != det_basis {
            mismatch += 1;
            continue;
        }
        gated += 1;
        let slot = per_basis.entry(basis).or_default();
        slot.1 += 1;
        if e.detected != expected {
            errors += 1;
            slot.0 += 1;
        }
    }
    if gated == 0 {
        return Err(AnalysisError::EmptyGate);
    }
    let q = errors as f64 / gated as f64;
    Ok(QberReport {
        qber: q,
        errors,
        gated,
        basis_mismatch: mismatch,
        outside_gate: outside,
        std_error: (q * (1.0 - q) / gated as f64).sqrt(),
        per_basis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: f64, detected: u8, label: Symbol) -> TaggedEvent {
        TaggedEvent {
            time_ps: t,
            detected,
            label,
        }
    }

    #[test]
    fn perfect_routing_is_error_free() {
        let events: Vec<_> = (0..100)
            .map(|k| {
                let s = Symbol::ALL[k % 4];
                ev(k as f64 * 20_000.0 + 500.0, s.index(), s)
            })
            .collect();
        let r = qber(
            &events,
            Gate {
                center: 500.0,
                width: 1000.0,
            },
            20_000.0,
            &BasisMap::default(),
        )
        .unwrap();
        assert_eq!(r.qber, 0.0);
        assert_eq!(r.gated, 100);
    }

    #[test]
    fn cross_basis_clicks_are_sifted_out() {
        let events = [
            ev(0.0, 0, Symbol::H),
            ev(0.0, 1, Symbol::H),
            ev(0.0, 2, Symbol::H),
            ev(0.0, 0, Symbol::D),
        ];
        let r = qber(
            &events,
            Gate {
                center: 0.0,
                width: 10.0,
            },
            100.0,
            &BasisMap::default(),
        )
        .unwrap();
        assert_eq!((r.errors, r.gated, r.basis_mismatch), (1, 2, 2));
        assert_eq!(r.qber, 0.5);
    }

    #[test]
    fn gate_wraps_around_period() {
        let g = Gate {
            center: 2.0,
            width: 10.0,
        };
        assert!(g.contains(98.0, 100.0));
        assert!(g.contains(107.0, 100.0));
        assert!(!g.contains(50.0, 100.0));
    }

    #[test]
    fn empty_gate_and_bad_width() {
        let events = [ev(50.0, 0, Symbol::H)];
        let map = BasisMap::default();
        assert!(matches!(
            qber(
                &events,
                Gate {
                    center: 0.0,
                    width: 10.0
                },
                100.0,
                &map
            ),
            Err(AnalysisError::EmptyGate)
        ));
        assert!(qber(
            &events,
            Gate {
                center: 0.0,
                width: 200.0
            },
            100.0,
            &map
        )
        .is_err());
    }
}
