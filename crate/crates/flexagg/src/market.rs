//! Energy-market coupling: power-to-energy maps, lead-time masks on the
//! trading policies, aggregate balance equalities, and the expected-profit
//! objective.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::PolicyStructure;
use crate::resource::HOUR_S;
use crate::robust::{LinExpr, Owner, Rel, RobustRows, Row, VarRef};
use crate::timegrid::{TimeGrid, Timescale};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum MarketError {
    #[error("column {name} has length {got}, expected {expected}")]
    Length {
        name: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("expected_w[{idx}] = {value} outside [-1, 1]")]
    WOutOfRange { idx: usize, value: f64 },
    #[error("activation fractions at interval {idx} invalid: up {up}, dn {dn}")]
    BadFractions { idx: usize, up: f64, dn: f64 },
    #[error("CSV parse error at line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

/// Expected prices and activation statistics entering the linear
/// objective.  Only first moments matter because everything is affine.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PriceForecast {
    /// currency/kWh, one per day-ahead interval.
    pub c_da: Vec<f64>,
    /// currency/kWh, one per intra-day interval.
    pub c_id: Vec<f64>,
    /// currency/kW applied to the capacity, one per system interval.
    pub c_sfr: Vec<f64>,
    /// currency/kWh paid for delivered up-regulation, per intra-day interval.
    pub c_up: Vec<f64>,
    /// currency/kWh charged for down-regulation, per intra-day interval.
    pub c_dn: Vec<f64>,
    /// expected interval-average activation, per system interval, in [-1, 1].
    pub expected_w: Vec<f64>,
    /// expected fraction of time spent in up-regulation, per intra-day interval.
    pub expected_up_frac: Vec<f64>,
    /// expected fraction of time spent in down-regulation, per intra-day interval.
    pub expected_dn_frac: Vec<f64>,
}

impl PriceForecast {
    /// Uniform prices, zero expected activation.
    pub fn flat(grid: &TimeGrid, c_da: f64, c_id: f64, c_sfr: f64, c_up: f64, c_dn: f64) -> Self {
        let n_da = grid.count(Timescale::DayAhead);
        let n_id = grid.count(Timescale::IntraDay);
        PriceForecast {
            c_da: vec![c_da; n_da],
            c_id: vec![c_id; n_id],
            c_sfr: vec![c_sfr; grid.n_s()],
            c_up: vec![c_up; n_id],
            c_dn: vec![c_dn; n_id],
            expected_w: vec![0.0; grid.n_s()],
            expected_up_frac: vec![0.25; n_id],
            expected_dn_frac: vec![0.25; n_id],
        }
    }

    pub fn validate(&self, grid: &TimeGrid) -> Result<(), MarketError> {
        let n_da = grid.count(Timescale::DayAhead);
        let n_id = grid.count(Timescale::IntraDay);
        let checks: [(&'static str, usize, usize); 8] = [
            ("c_DA", self.c_da.len(), n_da),
            ("c_ID", self.c_id.len(), n_id),
            ("c_SFR", self.c_sfr.len(), grid.n_s()),
            ("c_up", self.c_up.len(), n_id),
            ("c_dn", self.c_dn.len(), n_id),
            ("w_exp", self.expected_w.len(), grid.n_s()),
            ("up_frac", self.expected_up_frac.len(), n_id),
            ("dn_frac", self.expected_dn_frac.len(), n_id),
        ];
        for (name, got, expected) in checks {
            if got != expected {
                return Err(MarketError::Length {
                    name,
                    got,
                    expected,
                });
            }
        }
        for (idx, &w) in self.expected_w.iter().enumerate() {
            if !(-1.0..=1.0).contains(&w) {
                return Err(MarketError::WOutOfRange { idx, value: w });
            }
        }
        for idx in 0..n_id {
            let (up, dn) = (self.expected_up_frac[idx], self.expected_dn_frac[idx]);
            if !(0.0..=1.0).contains(&up) || !(0.0..=1.0).contains(&dn) || up + dn > 1.0 {
                return Err(MarketError::BadFractions { idx, up, dn });
            }
        }
        Ok(())
    }

    /// Parses the column CSV format (header `c_DA,c_ID,c_SFR,c_up,c_dn,
    /// w_exp,up_frac,dn_frac`); columns may be ragged, shorter ones are
    /// padded with empty cells.
    pub fn from_csv(text: &str, grid: &TimeGrid) -> Result<Self, MarketError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(MarketError::Csv {
            line: 1,
            reason: "empty input".into(),
        })?;
        let names: Vec<&str> = header.split(',').map(str::trim).collect();
        let expected = ["c_DA", "c_ID", "c_SFR", "c_up", "c_dn", "w_exp", "up_frac", "dn_frac"];
        if names != expected {
            return Err(MarketError::Csv {
                line: 1,
                reason: format!("header must be {}", expected.join(",")),
            });
        }
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); expected.len()];
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            for (c, cell) in line.split(',').enumerate().take(cols.len()) {
                let cell = cell.trim();
                if cell.is_empty() {
                    continue;
                }
                let v: f64 = cell.parse().map_err(|e| MarketError::Csv {
                    line: i + 1,
                    reason: format!("column {}: {e}", expected[c]),
                })?;
                cols[c].push(v);
            }
        }
        let mut it = cols.into_iter();
        let fc = PriceForecast {
            c_da: it.next().unwrap(),
            c_id: it.next().unwrap(),
            c_sfr: it.next().unwrap(),
            c_up: it.next().unwrap(),
            c_dn: it.next().unwrap(),
            expected_w: it.next().unwrap(),
            expected_up_frac: it.next().unwrap(),
            expected_dn_frac: it.next().unwrap(),
        };
        fc.validate(grid)?;
        Ok(fc)
    }

    pub fn to_csv(&self) -> String {
        let cols: [&Vec<f64>; 8] = [
            &self.c_da,
            &self.c_id,
            &self.c_sfr,
            &self.c_up,
            &self.c_dn,
            &self.expected_w,
            &self.expected_up_frac,
            &self.expected_dn_frac,
        ];
        let rows = cols.iter().map(|c| c.len()).max().unwrap_or(0);
        let mut out = String::from("c_DA,c_ID,c_SFR,c_up,c_dn,w_exp,up_frac,dn_frac\n");
        for r in 0..rows {
            let cells: Vec<String> = cols
                .iter()
                .map(|c| c.get(r).map(|v| v.to_string()).unwrap_or_default())
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// The energy-trading policies of the two markets (`gamma` unused).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarketPolicies {
    pub da: crate::policy::AffinePolicy,
    pub id: crate::policy::AffinePolicy,
}

/// Structural mask on a market adjustment matrix.
#[derive(Clone, Debug)]
pub struct Mask {
    n_s: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn allows(&self, k: usize, n: usize) -> bool {
        self.allowed[k * self.n_s + n]
    }
}

/// Lead-time masks for the day-ahead and intra-day adjustment matrices,
/// intersected with the causality structure.  A trade for breakpoint `k`
/// may depend on `w~_n` (known at `(n+1) T_S`) only if that is at or
/// before the market's gate closure.
pub fn lead_time_masks(grid: &TimeGrid, structure: &PolicyStructure) -> (Mask, Mask) {
    let n_s = grid.n_s();
    let t_s = grid.t_s();
    let day = 86_400u64.min(grid.horizon_s());
    let mut da = vec![false; (n_s + 1) * n_s];
    let mut id = vec![false; (n_s + 1) * n_s];
    for k in 0..=n_s {
        let t_k = k as u64 * t_s;
        // gate of the day-ahead market for the day containing breakpoint k
        let day_start = (t_k.min(grid.horizon_s().saturating_sub(1)) / day) * day;
        for n in 0..n_s {
            if !structure.allows(k, n) {
                continue;
            }
            let known = (n as u64 + 1) * t_s;
            if known + grid.lead_da_s() <= day_start {
                da[k * n_s + n] = true;
            }
            if known + grid.lead_id_s() <= t_k {
                id[k * n_s + n] = true;
            }
        }
    }
    (Mask { n_s, allowed: da }, Mask { n_s, allowed: id })
}

/// Exact trapezoid power-to-energy maps: `E[m][k]` is the kWh weight of
/// breakpoint `k` in market interval `m`.  Boundary breakpoints weigh
/// `T_S/2`, interior ones `T_S`.
pub fn energy_maps(grid: &TimeGrid) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let one = |ts: Timescale| -> Vec<Vec<f64>> {
        let per = grid.system_per(ts);
        let n_m = grid.count(ts);
        let half = grid.t_s() as f64 / 2.0 / HOUR_S;
        (0..n_m)
            .map(|m| {
                let mut row = vec![0.0; grid.n_s() + 1];
                for k in m * per..=(m + 1) * per {
                    let w = if k == m * per || k == (m + 1) * per {
                        half
                    } else {
                        2.0 * half
                    };
                    row[k] += w;
                }
                row
            })
            .collect()
    };
    (one(Timescale::DayAhead), one(Timescale::IntraDay))
}

fn q_var(owner: Owner, k: usize, n: usize) -> VarRef {
    VarRef::Q {
        owner,
        k: k as u32,
        n: n as u32,
    }
}

fn bp_var(owner: Owner, k: usize) -> VarRef {
    VarRef::Breakpoint { owner, k: k as u32 }
}

/// Aggregate balance equalities: entrywise `sum_j Q^(j) = Q_DA + Q_ID`
/// and `sum_j q^(j) = q_DA + q_ID`.  Masked entries are omitted (they are
/// structurally zero); rows where every participant is masked are skipped.
pub fn balance_rows(
    resources: &[(Owner, &PolicyStructure)],
    da_mask: &Mask,
    id_mask: &Mask,
    n_s: usize,
) -> RobustRows {
    let mut set = RobustRows {
        tag: "balance".into(),
        rows: Vec::new(),
        aux: Vec::new(),
    };
    for k in 0..=n_s {
        for n in 0..n_s {
            let mut coeffs = Vec::new();
            for &(owner, st) in resources {
                if st.allows(k, n) {
                    coeffs.push((q_var(owner, k, n), 1.0));
                }
            }
            if da_mask.allows(k, n) {
                coeffs.push((q_var(Owner::DayAhead, k, n), -1.0));
            }
            if id_mask.allows(k, n) {
                coeffs.push((q_var(Owner::IntraDay, k, n), -1.0));
            }
            if !coeffs.is_empty() {
                set.rows.push(Row {
                    coeffs,
                    rel: Rel::Eq,
                    rhs: 0.0,
                });
            }
        }
        let mut coeffs: Vec<(VarRef, f64)> = resources
            .iter()
            .map(|&(owner, _)| (bp_var(owner, k), 1.0))
            .collect();
        coeffs.push((bp_var(Owner::DayAhead, k), -1.0));
        coeffs.push((bp_var(Owner::IntraDay, k), -1.0));
        set.rows.push(Row {
            coeffs,
            rel: Rel::Eq,
            rhs: 0.0,
        });
    }
    set
}

/// Linear expected-profit objective (to maximize): reserve revenue on the
/// aggregate capacity, expected regulation-energy settlement, minus the
/// expected cost of the day-ahead and intra-day energy trades evaluated at
/// the expected activation.
pub fn expected_profit(
    prices: &PriceForecast,
    grid: &TimeGrid,
    resources: &[(Owner, &PolicyStructure)],
    da_mask: &Mask,
    id_mask: &Mask,
) -> LinExpr {
    let n_s = grid.n_s();
    let per_id = grid.system_per(Timescale::IntraDay);
    let t_id_h = grid.duration_s(Timescale::IntraDay) as f64 / HOUR_S;
    let mut obj = LinExpr::default();

    // reserve revenue c_SFR . gamma_agg plus expected regulation settlement:
    // each system interval k inside intra-day interval m contributes its
    // share of gamma-bar_m = mean gamma over m
    for &(owner, st) in resources {
        for k in 0..n_s {
            let m = k / per_id;
            let reg = (prices.c_up[m] * prices.expected_up_frac[m]
                - prices.c_dn[m] * prices.expected_dn_frac[m])
                * t_id_h
                / per_id as f64;
            let coeff = prices.c_sfr[k] + reg;
            if coeff != 0.0 {
                obj.push(
                    VarRef::Gamma {
                        owner,
                        k: st.gamma_var_index(k) as u32,
                    },
                    coeff,
                );
            }
        }
    }

    // expected energy cost of the trades
    let (e_da, e_id) = energy_maps(grid);
    let markets: [(&Owner, &Vec<Vec<f64>>, &Vec<f64>, &Mask); 2] = [
        (&Owner::DayAhead, &e_da, &prices.c_da, da_mask),
        (&Owner::IntraDay, &e_id, &prices.c_id, id_mask),
    ];
    for (owner, map, price, mask) in markets {
        for k in 0..=n_s {
            let weight: f64 = map
                .iter()
                .zip(price)
                .map(|(row, c)| c * row[k])
                .sum();
            if weight == 0.0 {
                continue;
            }
            obj.push(bp_var(*owner, k), -weight);
            for n in 0..n_s {
                if mask.allows(k, n) && prices.expected_w[n] != 0.0 {
                    obj.push(q_var(*owner, k, n), -weight * prices.expected_w[n]);
                }
            }
        }
    }
    obj
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robust::check_rows;
    use crate::timegrid::GridDurations;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn grid() -> TimeGrid {
        TimeGrid::new(GridDurations::one_day_default()).unwrap()
    }

    #[test]
    fn energy_map_row_sums_partition_the_interval() {
        let g = grid();
        let (e_da, e_id) = energy_maps(&g);
        assert_eq!(e_da.len(), 24);
        assert_eq!(e_id.len(), 96);
        for row in &e_da {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12); // T_DA = 1 h
        }
        for row in &e_id {
            let s: f64 = row.iter().sum();
            assert!((s - 0.25).abs() < 1e-12); // T_ID = 15 min
        }
        // constant power P over one hour -> P kWh
        let bp = vec![42.0; g.n_s() + 1];
        let energy: f64 = e_da[5].iter().zip(&bp).map(|(w, p)| w * p).sum();
        assert!((energy - 42.0).abs() < 1e-12);
    }

    #[test]
    fn energy_map_handles_a_single_ramp() {
        let g = grid();
        let (e_da, _) = energy_maps(&g);
        // ramp 0 -> P over the first system interval, flat P afterwards:
        // first hour energy = P*T_S/2 + P*(T_DA - T_S)
        let p = 60.0;
        let mut bp = vec![p; g.n_s() + 1];
        bp[0] = 0.0;
        let energy: f64 = e_da[0].iter().zip(&bp).map(|(w, v)| w * v).sum();
        let expect = p * (300.0 / 2.0 + 3300.0) / 3600.0;
        assert!((energy - expect).abs() < 1e-12);
    }

    #[test]
    fn energy_maps_match_numeric_integration() {
        let g = grid();
        let (e_da, e_id) = energy_maps(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bp: Vec<f64> = (0..=g.n_s()).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let t_s = g.t_s() as f64;
        // numeric integral of the piecewise-linear power over [t0, t1]
        let integral = |t0: f64, t1: f64| -> f64 {
            // step divides T_S so trapezoid is exact on each linear piece
            let steps = ((t1 - t0) / t_s) as usize * 100;
            let h = (t1 - t0) / steps as f64;
            let p_at = |t: f64| {
                let k = ((t / t_s).floor() as usize).min(g.n_s() - 1);
                let frac = (t - k as f64 * t_s) / t_s;
                bp[k] * (1.0 - frac) + bp[k + 1] * frac
            };
            (0..steps)
                .map(|i| {
                    let a = t0 + i as f64 * h;
                    (p_at(a) + p_at(a + h)) / 2.0 * h
                })
                .sum::<f64>()
                / HOUR_S
        };
        for (map, dur) in [(&e_da, 3600.0), (&e_id, 900.0)] {
            for m in [0usize, 7] {
                let lin: f64 = map[m].iter().zip(&bp).map(|(w, p)| w * p).sum();
                let num = integral(m as f64 * dur, (m + 1) as f64 * dur);
                assert!(
                    (lin - num).abs() <= 1e-9 * num.abs().max(1.0),
                    "m={m}: {lin} vs {num}"
                );
            }
        }
    }

    #[test]
    fn lead_masks_on_the_one_day_grid() {
        let g = grid();
        let st = PolicyStructure::new(&g, 40, 0, true);
        let (da, id) = lead_time_masks(&g, &st);
        // day-ahead gate is 13 h before the day: nothing from this day is
        // known in time, so Q_DA is fully masked
        for k in 0..=g.n_s() {
            for n in 0..g.n_s() {
                assert!(!da.allows(k, n));
            }
        }
        // intra-day lead of 1 h: n <= k - 13, intersected with the band
        for k in 0..=g.n_s() {
            for n in 0..g.n_s() {
                let expected = st.allows(k, n) && n + 13 <= k;
                assert_eq!(id.allows(k, n), expected, "k={k} n={n}");
            }
        }
    }

    #[test]
    fn zero_intra_day_lead_reduces_to_causality() {
        let mut d = GridDurations::one_day_default();
        d.lead_id_s = 0;
        let g = TimeGrid::new(d).unwrap();
        let st = PolicyStructure::new(&g, 4, 0, true);
        let (_, id) = lead_time_masks(&g, &st);
        for k in 0..=g.n_s() {
            for n in 0..g.n_s() {
                assert_eq!(id.allows(k, n), st.allows(k, n));
            }
        }
    }

    #[test]
    fn balance_rows_detect_mismatch_and_accept_opposites() {
        let g = grid();
        let st0 = PolicyStructure::new(&g, 4, 0, true);
        let st1 = PolicyStructure::new(&g, 4, 300, true);
        let (da, id) = lead_time_masks(&g, &st0);
        let set = balance_rows(
            &[(Owner::Resource(0), &st0), (Owner::Resource(1), &st1)],
            &da,
            &id,
            g.n_s(),
        );
        // opposite adjustments with zero market policies balance exactly
        let mut values: HashMap<VarRef, f64> = HashMap::new();
        values.insert(q_var(Owner::Resource(0), 10, 7), 7.59);
        values.insert(q_var(Owner::Resource(1), 10, 7), -7.59);
        assert!(check_rows(&[&set], &values, 1e-12).is_empty());
        // an epsilon mismatch shows up as exactly that violation
        values.insert(q_var(Owner::Resource(1), 10, 7), -7.59 + 1e-4);
        let viols = check_rows(&[&set], &values, 1e-9);
        assert_eq!(viols.len(), 1);
        assert!((viols[0].amount - 1e-4).abs() < 1e-12);
    }

    #[test]
    fn single_resource_with_frozen_markets_is_pinned_to_zero() {
        let g = grid();
        let st = PolicyStructure::new(&g, 4, 0, true);
        let (da, id) = lead_time_masks(&g, &st);
        let set = balance_rows(&[(Owner::Resource(0), &st)], &da, &id, g.n_s());
        // with Q_DA masked entirely, any Q entry the intra-day market
        // cannot mirror must be zero
        let mut values: HashMap<VarRef, f64> = HashMap::new();
        values.insert(q_var(Owner::Resource(0), 4, 2), 1.0); // n=2, k=4: 2+13 > 4
        assert!(!id.allows(4, 2));
        assert_eq!(check_rows(&[&set], &values, 1e-9).len(), 1);
    }

    #[test]
    fn profit_collapses_when_prices_vanish() {
        let g = grid();
        let st = PolicyStructure::new(&g, 4, 0, true);
        let (da, id) = lead_time_masks(&g, &st);
        let zero = PriceForecast::flat(&g, 0.0, 0.0, 0.0, 0.0, 0.0);
        let obj = expected_profit(&zero, &g, &[(Owner::Resource(0), &st)], &da, &id);
        assert!(obj.terms.is_empty());

        // c_SFR = 1, all else 0, time-invariant gamma: coefficient N_S on
        // the single shared gamma variable
        let sfr = PriceForecast::flat(&g, 0.0, 0.0, 1.0, 0.0, 0.0);
        let obj = expected_profit(&sfr, &g, &[(Owner::Resource(0), &st)], &da, &id);
        let total: f64 = obj
            .terms
            .iter()
            .filter(|(v, _)| matches!(v, VarRef::Gamma { .. }))
            .map(|(_, c)| c)
            .sum();
        assert!((total - g.n_s() as f64).abs() < 1e-12);
    }

    #[test]
    fn profit_prices_static_trades_by_energy() {
        let g = grid();
        let st = PolicyStructure::new(&g, 4, 0, true);
        let (da, id) = lead_time_masks(&g, &st);
        let fc = PriceForecast::flat(&g, 0.1, 0.2, 0.0, 0.0, 0.0);
        let obj = expected_profit(&fc, &g, &[(Owner::Resource(0), &st)], &da, &id);
        // constant q_DA = q_ID = P: cost 0.1 * 24 h * P + 0.2 * 24 h * P
        let mut values: HashMap<VarRef, f64> = HashMap::new();
        for k in 0..=g.n_s() {
            values.insert(bp_var(Owner::DayAhead, k), 10.0);
            values.insert(bp_var(Owner::IntraDay, k), 10.0);
        }
        let got = obj.eval(&values);
        let expect = -(0.1 * 24.0 * 10.0 + 0.2 * 24.0 * 10.0);
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
    }

    #[test]
    fn regulation_term_uses_fractions_and_interval_means() {
        let g = grid();
        let st = PolicyStructure::new(&g, 4, 0, true);
        let (da, id) = lead_time_masks(&g, &st);
        let mut fc = PriceForecast::flat(&g, 0.0, 0.0, 0.0, 0.4, 0.1);
        fc.expected_up_frac = vec![0.5; 96];
        fc.expected_dn_frac = vec![0.2; 96];
        let obj = expected_profit(&fc, &g, &[(Owner::Resource(0), &st)], &da, &id);
        let mut values: HashMap<VarRef, f64> = HashMap::new();
        values.insert(
            VarRef::Gamma {
                owner: Owner::Resource(0),
                k: 0,
            },
            2.0,
        );
        // per intra-day interval: (0.4*0.5 - 0.1*0.2) * gamma * 0.25 h
        let expect = 96.0 * (0.4 * 0.5 - 0.1 * 0.2) * 2.0 * 0.25;
        assert!((obj.eval(&values) - expect).abs() < 1e-9);
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let g = grid();
        let mut fc = PriceForecast::flat(&g, 0.08, 0.09, 0.15, 0.2, 0.05);
        fc.expected_w[7] = 0.3;
        let text = fc.to_csv();
        let back = PriceForecast::from_csv(&text, &g).unwrap();
        assert_eq!(back.c_da, fc.c_da);
        assert_eq!(back.expected_w, fc.expected_w);
        assert_eq!(back.expected_up_frac, fc.expected_up_frac);

        // wrong header
        assert!(PriceForecast::from_csv("a,b\n1,2\n", &g).is_err());
        // invalid fractions rejected
        let mut bad = fc.clone();
        bad.expected_up_frac[0] = 0.9;
        bad.expected_dn_frac[0] = 0.9;
        assert!(matches!(
            bad.validate(&g),
            Err(MarketError::BadFractions { .. })
        ));
        // wrong length rejected
        let mut short = fc.clone();
        short.c_da.pop();
        assert!(matches!(short.validate(&g), Err(MarketError::Length { .. })));
    }
}
