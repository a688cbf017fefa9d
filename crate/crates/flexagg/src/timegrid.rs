//! Market, system, and control timescales with exact index arithmetic.
//!
//! All durations are integer seconds so divisibility checks are exact and
//! index arithmetic never drifts.  Intervals are 1-based and half-open:
//! interval `k` of a timescale with duration `T` covers `[(k-1)T, kT)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The timescales of the bidding problem, longest to shortest.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Timescale {
    /// Reserve tendering period.
    Sfr,
    /// Day-ahead market interval.
    DayAhead,
    /// Intra-day market interval.
    IntraDay,
    /// System discretization interval (breakpoint spacing).
    System,
    /// Control interval of the activation signal.
    Control,
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum GridError {
    #[error("duration {name} must be positive, got {value} s")]
    NonPositive { name: &'static str, value: i64 },
    #[error("ordering violated: {longer} ({longer_s} s) must be >= {shorter} ({shorter_s} s)")]
    Ordering {
        longer: &'static str,
        longer_s: u64,
        shorter: &'static str,
        shorter_s: u64,
    },
    #[error("system interval ({system_s} s) must be strictly longer than control interval ({control_s} s)")]
    SystemNotCoarser { system_s: u64, control_s: u64 },
    #[error("{coarse} ({coarse_s} s) is not an integer multiple of {fine} ({fine_s} s)")]
    Divisibility {
        coarse: &'static str,
        coarse_s: u64,
        fine: &'static str,
        fine_s: u64,
    },
    #[error("index {k} out of range for timescale with {n} intervals")]
    IndexOutOfRange { k: usize, n: usize },
    #[error("index_map requires the fine timescale to be at most as long as the coarse one")]
    NotFiner,
}

/// Durations, in seconds, of every timescale plus the market lead times.
#[derive(Copy, Clone, Debug, Serialize, Deserialize)]
pub struct GridDurations {
    pub horizon_s: u64,
    pub sfr_s: u64,
    pub day_ahead_s: u64,
    pub intra_day_s: u64,
    pub system_s: u64,
    pub control_s: u64,
    pub lead_da_s: u64,
    pub lead_id_s: u64,
}

impl GridDurations {
    /// One-day horizon with the market setting used throughout the result
    /// tables: T_DA = 1 h, T_ID = 15 min, T_S = 5 min, T_C = 10 s,
    /// lead times 13 h (day-ahead) and 1 h (intra-day).
    pub fn one_day_default() -> Self {
        GridDurations {
            horizon_s: 86_400,
            sfr_s: 86_400,
            day_ahead_s: 3_600,
            intra_day_s: 900,
            system_s: 300,
            control_s: 10,
            lead_da_s: 13 * 3_600,
            lead_id_s: 3_600,
        }
    }
}

/// Validated set of timescales with pre-computed interval counts.
///
/// Immutable after construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimeGrid {
    durations: GridDurations,
    n_sfr: usize,
    n_da: usize,
    n_id: usize,
    n_s: usize,
    n_c: usize,
}

impl TimeGrid {
    /// Validates ordering and divisibility and computes the interval counts.
    pub fn new(d: GridDurations) -> Result<Self, GridError> {
        let named = [
            ("horizon", d.horizon_s),
            ("sfr", d.sfr_s),
            ("day_ahead", d.day_ahead_s),
            ("intra_day", d.intra_day_s),
            ("system", d.system_s),
            ("control", d.control_s),
        ];
        for (name, v) in named {
            if v == 0 {
                return Err(GridError::NonPositive { name, value: v as i64 });
            }
        }
        // T_H >= T_SFR >= T_DA >= T_ID >= T_S > T_C.
        for w in named.windows(2) {
            let (ln, lv) = w[0];
            let (sn, sv) = w[1];
            if lv < sv {
                return Err(GridError::Ordering {
                    longer: ln,
                    longer_s: lv,
                    shorter: sn,
                    shorter_s: sv,
                });
            }
        }
        if d.system_s <= d.control_s {
            return Err(GridError::SystemNotCoarser {
                system_s: d.system_s,
                control_s: d.control_s,
            });
        }
        for w in named.windows(2) {
            let (cn, cv) = w[0];
            let (fn_, fv) = w[1];
            if cv % fv != 0 {
                return Err(GridError::Divisibility {
                    coarse: cn,
                    coarse_s: cv,
                    fine: fn_,
                    fine_s: fv,
                });
            }
        }
        Ok(TimeGrid {
            durations: d,
            n_sfr: (d.horizon_s / d.sfr_s) as usize,
            n_da: (d.horizon_s / d.day_ahead_s) as usize,
            n_id: (d.horizon_s / d.intra_day_s) as usize,
            n_s: (d.horizon_s / d.system_s) as usize,
            n_c: (d.horizon_s / d.control_s) as usize,
        })
    }

    pub fn horizon_s(&self) -> u64 {
        self.durations.horizon_s
    }
    pub fn lead_da_s(&self) -> u64 {
        self.durations.lead_da_s
    }
    pub fn lead_id_s(&self) -> u64 {
        self.durations.lead_id_s
    }

    pub fn duration_s(&self, ts: Timescale) -> u64 {
        match ts {
            Timescale::Sfr => self.durations.sfr_s,
            Timescale::DayAhead => self.durations.day_ahead_s,
            Timescale::IntraDay => self.durations.intra_day_s,
            Timescale::System => self.durations.system_s,
            Timescale::Control => self.durations.control_s,
        }
    }

    /// Number of intervals of timescale `ts` in the horizon.
    pub fn count(&self, ts: Timescale) -> usize {
        match ts {
            Timescale::Sfr => self.n_sfr,
            Timescale::DayAhead => self.n_da,
            Timescale::IntraDay => self.n_id,
            Timescale::System => self.n_s,
            Timescale::Control => self.n_c,
        }
    }

    pub fn n_s(&self) -> usize {
        self.n_s
    }
    pub fn n_c(&self) -> usize {
        self.n_c
    }
    pub fn t_s(&self) -> u64 {
        self.durations.system_s
    }
    pub fn t_c(&self) -> u64 {
        self.durations.control_s
    }

    /// System intervals per coarse interval of `ts`.
    pub fn system_per(&self, ts: Timescale) -> usize {
        (self.duration_s(ts) / self.durations.system_s) as usize
    }

    /// Maps a 1-based fine-timescale interval index to the unique 1-based
    /// coarse interval containing it: `ceil(k * T_fine / T_coarse)`.
    pub fn index_map(&self, fine: Timescale, coarse: Timescale, k: usize) -> Result<usize, GridError> {
        let tf = self.duration_s(fine);
        let tc = self.duration_s(coarse);
        if tf > tc {
            return Err(GridError::NotFiner);
        }
        let n_fine = self.count(fine);
        if k == 0 || k > n_fine {
            return Err(GridError::IndexOutOfRange { k, n: n_fine });
        }
        Ok(((k as u64 * tf).div_ceil(tc)) as usize)
    }
}
