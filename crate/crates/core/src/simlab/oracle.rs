//! Ground-truth counterfactual error rates by counting over a simulated
//! sample whose untreated outcomes are known.

use std::collections::BTreeMap;

use serde::Serialize;

use super::dgp::{position_key, PotentialRecord, N_GROUPS};
use super::forest::RiskModel;
use crate::dataset::GroupKey;
use crate::estimators::Metric;

/// `#(S, Y⁰)` cells of one group: `cells[y0][s]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OracleCounts {
    pub cells: [[u64; 2]; 2],
}

impl OracleCounts {
    fn add(&mut self, other: &OracleCounts) {
        for y in 0..2 {
            for s in 0..2 {
                self.cells[y][s] += other.cells[y][s];
            }
        }
    }

    /// `(numerator, denominator)` counts of the rate.
    fn parts(&self, metric: Metric) -> (u64, u64) {
        match metric {
            Metric::Cfpr => (self.cells[0][1], self.cells[0][0] + self.cells[0][1]),
            Metric::Cfnr => (self.cells[1][0], self.cells[1][0] + self.cells[1][1]),
        }
    }

    /// `P(S = 1 | Y⁰ = 0)` or `P(S = 0 | Y⁰ = 1)`; `None` on an empty
    /// conditioning event.
    pub fn rate(&self, metric: Metric) -> Option<f64> {
        let (num, den) = self.parts(metric);
        (den > 0).then(|| num as f64 / den as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleTruth {
    pub groups: BTreeMap<GroupKey, OracleCounts>,
    pub overall: OracleCounts,
}

impl OracleTruth {
    pub fn from_records(records: &[PotentialRecord]) -> Self {
        Self::from_predictions(records, |r| r.s)
    }

    fn from_predictions(records: &[PotentialRecord], s: impl Fn(&PotentialRecord) -> bool) -> Self {
        let mut groups: BTreeMap<GroupKey, OracleCounts> = (0..N_GROUPS)
            .map(|k| (position_key(k), OracleCounts::default()))
            .collect();
        for r in records {
            let c = groups.get_mut(&r.group).expect("simulated group");
            c.cells[usize::from(r.y0)][usize::from(s(r))] += 1;
        }
        let mut overall = OracleCounts::default();
        groups.values().for_each(|c| overall.add(c));
        OracleTruth { groups, overall }
    }

    pub fn group_rate(&self, group: &GroupKey, metric: Metric) -> Option<f64> {
        self.groups.get(group)?.rate(metric)
    }

    pub fn overall_rate(&self, metric: Metric) -> Option<f64> {
        self.overall.rate(metric)
    }

    /// `P(A = a | Y⁰ = y, S = s) / P(A = a | Y⁰ = y)` by counting, with
    /// `(y, s) = (1, 0)` for cFNR and `(0, 1)` for cFPR.
    pub fn membership_ratio(&self, group: &GroupKey, metric: Metric) -> Option<f64> {
        let (y, s) = match metric {
            Metric::Cfnr => (1, 0),
            Metric::Cfpr => (0, 1),
        };
        let g = self.groups.get(group)?;
        let ys_group = g.cells[y][s] as f64;
        let ys_all = self.overall.cells[y][s] as f64;
        let y_group = (g.cells[y][0] + g.cells[y][1]) as f64;
        let y_all = (self.overall.cells[y][0] + self.overall.cells[y][1]) as f64;
        if ys_all == 0.0 || y_all == 0.0 || y_group == 0.0 {
            return None;
        }
        Some((ys_group / ys_all) / (y_group / y_all))
    }

    /// `P(A = a | Y⁰ = y)` by counting (`y = 0` for cFPR, `1` for cFNR).
    pub fn group_share(&self, group: &GroupKey, metric: Metric) -> Option<f64> {
        let (_, den) = self.groups.get(group)?.parts(metric);
        let (_, all) = self.overall.parts(metric);
        (all > 0).then(|| den as f64 / all as f64)
    }
}

/// Truth for `model` on a validation sample: predictions come from the
/// model, not from any stored `S`.
pub fn oracle_error_rates(validation: &[PotentialRecord], model: &RiskModel) -> OracleTruth {
    OracleTruth::from_predictions(validation, |r| model.predict(&r.x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(position: usize, y0: bool, s: bool) -> PotentialRecord {
        PotentialRecord {
            group: position_key(position),
            x: vec![],
            y0,
            y1: false,
            d: false,
            y: y0,
            s,
        }
    }

    #[test]
    fn constant_predictions() {
        let recs: Vec<_> = (0..16).map(|i| rec(i % 4, i % 3 == 0, true)).collect();
        let t = OracleTruth::from_records(&recs);
        for g in t.groups.keys() {
            assert_eq!(t.group_rate(g, Metric::Cfnr), Some(0.0));
            assert_eq!(t.group_rate(g, Metric::Cfpr), Some(1.0));
        }
        let recs: Vec<_> = recs.iter().map(|r| PotentialRecord { s: false, ..r.clone() }).collect();
        let t = OracleTruth::from_records(&recs);
        for g in t.groups.keys() {
            assert_eq!(t.group_rate(g, Metric::Cfnr), Some(1.0));
            assert_eq!(t.group_rate(g, Metric::Cfpr), Some(0.0));
        }
    }

    #[test]
    fn twelve_record_hand_count() {
        // (position, y0, s)
        let rows = [
            (0, true, false),
            (0, true, true),
            (0, true, false),
            (0, false, true),
            (0, false, false),
            (1, true, false),
            (1, false, false),
            (1, false, true),
            (2, true, true),
            (2, false, false),
            (3, false, true),
            (3, false, true),
        ];
        let recs: Vec<_> = rows.iter().map(|&(p, y, s)| rec(p, y, s)).collect();
        let t = OracleTruth::from_records(&recs);
        let g = |p| position_key(p);
        // group 0: Y⁰=1 rows s = 0,1,0 → cFNR 2/3; Y⁰=0 rows s = 1,0 → cFPR 1/2
        assert_eq!(t.group_rate(&g(0), Metric::Cfnr), Some(2.0 / 3.0));
        assert_eq!(t.group_rate(&g(0), Metric::Cfpr), Some(0.5));
        assert_eq!(t.group_rate(&g(1), Metric::Cfnr), Some(1.0));
        assert_eq!(t.group_rate(&g(1), Metric::Cfpr), Some(0.5));
        assert_eq!(t.group_rate(&g(2), Metric::Cfnr), Some(0.0));
        assert_eq!(t.group_rate(&g(2), Metric::Cfpr), Some(0.0));
        assert_eq!(t.group_rate(&g(3), Metric::Cfnr), None);
        assert_eq!(t.group_rate(&g(3), Metric::Cfpr), Some(1.0));
        // overall: Y⁰=1 rows: 5, with S=0: 3 → 3/5; Y⁰=0 rows: 7, with S=1: 4 → 4/7
        assert_eq!(t.overall_rate(Metric::Cfnr), Some(0.6));
        assert_eq!(t.overall_rate(Metric::Cfpr), Some(4.0 / 7.0));
    }
}
