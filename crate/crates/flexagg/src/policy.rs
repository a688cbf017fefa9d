//! Affine power-reference policies and their structural masks.
//!
//! Breakpoints are 0-based: a policy over a grid with `N_S` system
//! intervals has `N_S + 1` breakpoints `p_0..p_{N_S}` (breakpoint `k`
//! applies at time `k * T_S`) and `N_S` activation averages
//! `w~_0..w~_{N_S-1}` (average `n` becomes known at time `(n+1) * T_S`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timegrid::TimeGrid;

/// Structural zero pattern of a policy's adjustment matrix.
///
/// Entry `(k, n)` may be nonzero iff the average `w~_n` is known strictly
/// before breakpoint `k` takes effect, shifted by the resource's control
/// delay, and lies within the recency band of width `bandwidth`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PolicyStructure {
    pub n_s: usize,
    pub bandwidth: usize,
    pub delay_steps: usize,
    pub time_invariant_gamma: bool,
}

impl PolicyStructure {
    /// `delay_steps = ceil(delay / T_S)`.
    pub fn new(grid: &TimeGrid, bandwidth: usize, delay_s: u64, time_invariant_gamma: bool) -> Self {
        PolicyStructure {
            n_s: grid.n_s(),
            bandwidth,
            delay_steps: (delay_s as usize).div_ceil(grid.t_s() as usize),
            time_invariant_gamma,
        }
    }

    /// Whether entry `(k, n)` of the adjustment matrix may be nonzero,
    /// with breakpoint index `k` in `0..=N_S` and column `n` in `0..N_S`.
    pub fn allows(&self, k: usize, n: usize) -> bool {
        debug_assert!(k <= self.n_s && n < self.n_s);
        // causality + delay: n <= k - 2 - delay_steps (0-based)
        // band:              k <= n + bandwidth + 2
        n + 2 + self.delay_steps <= k && k <= n + self.bandwidth + 2
    }

    /// Columns allowed for breakpoint row `k`, in increasing order.
    pub fn row_columns(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_s).filter(move |&n| self.allows(k, n))
    }

    /// Breakpoint rows allowed for column `n`: `n+2+delay ..= n+bandwidth+2`.
    pub fn col_rows(&self, n: usize) -> impl Iterator<Item = usize> + '_ {
        (0..=self.n_s).filter(move |&k| self.allows(k, n))
    }

    /// Index of the gamma decision variable backing interval `k` (0-based).
    /// With a time-invariant bid all intervals share variable 0.
    pub fn gamma_var_index(&self, k: usize) -> usize {
        if self.time_invariant_gamma {
            0
        } else {
            k
        }
    }
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum PolicyError {
    #[error("dimension mismatch: expected {expected} {what}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("cannot aggregate an empty list of policies")]
    Empty,
}

/// One policy triple: adjustment matrix `Q`, static breakpoints `q`, and
/// reserve capacities `gamma`.
///
/// Market trading policies reuse this type with `gamma` empty.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AffinePolicy {
    /// `(N_S + 1) x N_S`, kW per unit of average activation.
    pub q_mat: Vec<Vec<f64>>,
    /// Static breakpoints, length `N_S + 1`, kW.
    pub q: Vec<f64>,
    /// Symmetric reserve capacities, length `N_S` (or empty), kW.
    pub gamma: Vec<f64>,
}

impl AffinePolicy {
    pub fn zeros(n_s: usize, with_gamma: bool) -> Self {
        AffinePolicy {
            q_mat: vec![vec![0.0; n_s]; n_s + 1],
            q: vec![0.0; n_s + 1],
            gamma: if with_gamma { vec![0.0; n_s] } else { Vec::new() },
        }
    }

    pub fn n_s(&self) -> usize {
        self.q.len().saturating_sub(1)
    }

    /// Breakpoints realized under a given activation average: `Q w~ + q`.
    pub fn breakpoints(&self, w_avg: &[f64]) -> Vec<f64> {
        self.q_mat
            .iter()
            .zip(&self.q)
            .map(|(row, q)| q + row.iter().zip(w_avg).map(|(a, w)| a * w).sum::<f64>())
            .collect()
    }

    pub fn gamma_at(&self, k: usize) -> f64 {
        if self.gamma.is_empty() {
            0.0
        } else {
            self.gamma[k]
        }
    }
}

/// Elementwise sum of policies. Gammas are summed where present; an
/// empty gamma counts as zero.
pub fn aggregate(policies: &[AffinePolicy]) -> Result<AffinePolicy, PolicyError> {
    let first = policies.first().ok_or(PolicyError::Empty)?;
    let n_s = first.n_s();
    let mut out = AffinePolicy::zeros(n_s, true);
    for p in policies {
        if p.n_s() != n_s {
            return Err(PolicyError::Dimension {
                what: "breakpoints",
                expected: n_s + 1,
                got: p.q.len(),
            });
        }
        if !p.gamma.is_empty() && p.gamma.len() != n_s {
            return Err(PolicyError::Dimension {
                what: "gamma entries",
                expected: n_s,
                got: p.gamma.len(),
            });
        }
        for k in 0..=n_s {
            out.q[k] += p.q[k];
            for n in 0..n_s {
                out.q_mat[k][n] += p.q_mat[k][n];
            }
        }
        for k in 0..n_s {
            out.gamma[k] += p.gamma_at(k);
        }
    }
    Ok(out)
}

/// A structural violation of a policy against its mask.
#[derive(Clone, Debug, PartialEq)]
pub enum PolicyViolation {
    MaskedEntryNonzero { k: usize, n: usize, value: f64 },
    NegativeGamma { k: usize, value: f64 },
    GammaNotTimeInvariant { k: usize, value: f64, first: f64 },
}

/// Checks a policy against its structure; empty report means compliant.
pub fn validate(policy: &AffinePolicy, structure: &PolicyStructure) -> Vec<PolicyViolation> {
    let mut report = Vec::new();
    for k in 0..=structure.n_s {
        for n in 0..structure.n_s {
            let v = policy.q_mat[k][n];
            if v != 0.0 && !structure.allows(k, n) {
                report.push(PolicyViolation::MaskedEntryNonzero { k, n, value: v });
            }
        }
    }
    for (k, &g) in policy.gamma.iter().enumerate() {
        if g < 0.0 {
            report.push(PolicyViolation::NegativeGamma { k, value: g });
        }
        if structure.time_invariant_gamma && g != policy.gamma[0] {
            report.push(PolicyViolation::GammaNotTimeInvariant {
                k,
                value: g,
                first: policy.gamma[0],
            });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timegrid::{GridDurations, TimeGrid};

    fn grid() -> TimeGrid {
        TimeGrid::new(GridDurations::one_day_default()).unwrap()
    }

    #[test]
    fn mask_without_delay_allows_up_to_newest_lag() {
        let g = grid();
        let st = PolicyStructure::new(&g, 1, 0, true);
        // enumerate the two mask inequalities: n + 2 <= k <= n + 3
        for k in 0..=st.n_s {
            for n in 0..st.n_s {
                let expected = n + 2 <= k && k <= n + 3;
                assert_eq!(st.allows(k, n), expected, "k={k} n={n}");
            }
        }
        // the newest allowed lag for breakpoint k is n = k - 2
        assert!(st.allows(5, 3));
        assert!(!st.allows(5, 4));
    }

    #[test]
    fn one_step_delay_shifts_band_to_m_eq_n_plus_3() {
        let g = grid();
        let st = PolicyStructure::new(&g, 1, 300, true);
        assert_eq!(st.delay_steps, 1);
        // nonzero entries land exactly at rows k = n + 2 + 1 = n + 3
        // when the one-step delay leaves a single slot in the band
        for k in 0..=st.n_s {
            for n in 0..st.n_s {
                assert_eq!(st.allows(k, n), k == n + 3, "k={k} n={n}");
            }
        }
    }

    #[test]
    fn huge_delay_masks_everything() {
        let g = grid();
        let st = PolicyStructure::new(&g, 0, 10 * 86_400, true);
        for k in 0..=st.n_s {
            assert_eq!(st.row_columns(k).count(), 0);
        }
    }

    #[test]
    fn mask_monotone_in_bandwidth_and_delay() {
        let g = grid();
        let narrow = PolicyStructure::new(&g, 2, 0, true);
        let wide = PolicyStructure::new(&g, 5, 0, true);
        let delayed = PolicyStructure::new(&g, 2, 600, true);
        for k in 0..=narrow.n_s {
            for n in 0..narrow.n_s {
                if narrow.allows(k, n) {
                    assert!(wide.allows(k, n));
                }
                if delayed.allows(k, n) {
                    assert!(narrow.allows(k, n));
                }
            }
        }
    }

    #[test]
    fn aggregate_cancels_opposite_adjustments() {
        let n_s = 6;
        let mut a = AffinePolicy::zeros(n_s, true);
        let mut b = AffinePolicy::zeros(n_s, true);
        a.q_mat[4][1] = 7.59;
        b.q_mat[4][1] = -7.59;
        a.gamma = vec![2.0; n_s];
        let agg = aggregate(&[a.clone(), b]).unwrap();
        assert_eq!(agg.q_mat[4][1], 0.0);
        assert_eq!(agg.gamma[3], 2.0);
        // singleton aggregation is the identity
        let single = aggregate(&[a.clone()]).unwrap();
        assert_eq!(single.q_mat, a.q_mat);
        assert_eq!(single.gamma, a.gamma);
    }

    #[test]
    fn aggregate_is_commutative_and_zero_neutral() {
        let n_s = 4;
        let mut a = AffinePolicy::zeros(n_s, true);
        a.q[2] = 3.0;
        a.q_mat[3][1] = -1.5;
        let mut b = AffinePolicy::zeros(n_s, true);
        b.q[0] = 1.0;
        b.gamma[2] = 0.5;
        let ab = aggregate(&[a.clone(), b.clone()]).unwrap();
        let ba = aggregate(&[b.clone(), a.clone()]).unwrap();
        assert_eq!(ab.q, ba.q);
        assert_eq!(ab.q_mat, ba.q_mat);
        assert_eq!(ab.gamma, ba.gamma);
        let with_zero = aggregate(&[a.clone(), AffinePolicy::zeros(n_s, true)]).unwrap();
        assert_eq!(with_zero.q, a.q);
    }

    #[test]
    fn aggregate_rejects_dimension_mismatch() {
        let a = AffinePolicy::zeros(4, true);
        let b = AffinePolicy::zeros(5, true);
        assert!(aggregate(&[a, b]).is_err());
    }

    #[test]
    fn validate_reports_masked_entries_and_negative_gamma() {
        let g = grid();
        let st = PolicyStructure::new(&g, 1, 0, false);
        let mut p = AffinePolicy::zeros(st.n_s, true);
        p.q_mat[1][5] = 1e-3; // masked: column 5 not known before breakpoint 1
        p.gamma[7] = -0.1;
        let report = validate(&p, &st);
        assert!(report.contains(&PolicyViolation::MaskedEntryNonzero {
            k: 1,
            n: 5,
            value: 1e-3
        }));
        assert!(report.contains(&PolicyViolation::NegativeGamma { k: 7, value: -0.1 }));

        let clean = AffinePolicy::zeros(st.n_s, true);
        assert!(validate(&clean, &st).is_empty());
    }
}
