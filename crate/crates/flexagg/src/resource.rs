//! Flexibility parameter sets of individual resources.
//!
//! A resource is described by power, ramp-rate, and state bounds together
//! with first-order buffer dynamics `dx/dt = a x + b u + c p`.  Disabled
//! constraint families are represented as infinite bounds and generate no
//! rows downstream, so one type covers batteries, freezers, and turbines.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timegrid::{TimeGrid, Timescale};

pub const HOUR_S: f64 = 3600.0;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ResourceError {
    #[error("{what} must be nonnegative, got {value}")]
    Negative { what: &'static str, value: f64 },
    #[error("bound ordering violated: {what}")]
    BoundOrdering { what: String },
    #[error("temperature ordering violated: need theta_in_min < theta_in_max < theta_out")]
    ThetaOrdering,
    #[error("fill fraction must lie in [0, 1], got {0}")]
    FillFraction(f64),
    #[error("dissipation rate a must be nonpositive, got {0}")]
    PositiveDissipation(f64),
    #[error("sequence {what} has length {got}, expected {expected}")]
    Length {
        what: &'static str,
        got: usize,
        expected: usize,
    },
}

/// The flexibility parameter set of one resource.
///
/// All sequences have length `N_S`.  Ramp limits are kW/s and state limits
/// kWh; entries may be infinite to disable the corresponding constraints.
/// The dissipation rate `a` is per second.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResourceParams {
    pub label: String,
    pub p_min: Vec<f64>,
    pub p_max: Vec<f64>,
    pub r_min: Vec<f64>,
    pub r_max: Vec<f64>,
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    pub x0_min: f64,
    pub x0_max: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub u: Vec<f64>,
    pub delay_s: u64,
}

impl ResourceParams {
    pub fn validate(&self, grid: &TimeGrid) -> Result<(), ResourceError> {
        let n_s = grid.n_s();
        for (what, seq) in [
            ("p_min", &self.p_min),
            ("p_max", &self.p_max),
            ("r_min", &self.r_min),
            ("r_max", &self.r_max),
            ("x_min", &self.x_min),
            ("x_max", &self.x_max),
            ("u", &self.u),
        ] {
            if seq.len() != n_s {
                return Err(ResourceError::Length {
                    what,
                    got: seq.len(),
                    expected: n_s,
                });
            }
        }
        for k in 0..n_s {
            if self.p_min[k] > self.p_max[k] {
                return Err(ResourceError::BoundOrdering {
                    what: format!("p_min[{k}] > p_max[{k}]"),
                });
            }
            if self.r_min[k] > self.r_max[k] {
                return Err(ResourceError::BoundOrdering {
                    what: format!("r_min[{k}] > r_max[{k}]"),
                });
            }
            if self.x_min[k] > self.x_max[k] {
                return Err(ResourceError::BoundOrdering {
                    what: format!("x_min[{k}] > x_max[{k}]"),
                });
            }
        }
        if self.has_state_constraints() {
            if !(self.x_min[0] <= self.x0_min
                && self.x0_min <= self.x0_max
                && self.x0_max <= self.x_max[0])
            {
                return Err(ResourceError::BoundOrdering {
                    what: "x_min[0] <= x0_min <= x0_max <= x_max[0]".to_string(),
                });
            }
        }
        if self.a > 0.0 {
            return Err(ResourceError::PositiveDissipation(self.a));
        }
        Ok(())
    }

    pub fn has_state_constraints(&self) -> bool {
        self.x_min.iter().any(|v| v.is_finite()) || self.x_max.iter().any(|v| v.is_finite())
    }

    pub fn has_ramp_constraints(&self) -> bool {
        self.r_min.iter().any(|v| v.is_finite()) || self.r_max.iter().any(|v| v.is_finite())
    }

    pub fn has_power_constraints(&self) -> bool {
        self.p_min.iter().any(|v| v.is_finite()) || self.p_max.iter().any(|v| v.is_finite())
    }
}

/// Time-invariant parameters of an industrial freezer warehouse.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FreezerSpec {
    pub p_min_kw: f64,
    pub p_max_kw: f64,
    /// Ramp limits in kW/s.
    pub r_min_kw_s: f64,
    pub r_max_kw_s: f64,
    /// Buffer capacity in kWh.
    pub x_bar_kwh: f64,
    pub theta_in_min_c: f64,
    pub theta_in_max_c: f64,
    pub theta_out_c: f64,
    /// Passive discharge time (min to max indoor temperature) in seconds.
    pub t_dis_s: f64,
    /// Initial buffer fill as a fraction of capacity.
    pub fill: f64,
}

impl FreezerSpec {
    /// The warehouse of the result tables: 0-300 kW, +/-100 kW/min,
    /// 1.8 MWh, -29/-27 degC indoor range, 5 degC outdoor, 10 h discharge,
    /// half full.
    pub fn table_default() -> Self {
        FreezerSpec {
            p_min_kw: 0.0,
            p_max_kw: 300.0,
            r_min_kw_s: -100.0 / 60.0,
            r_max_kw_s: 100.0 / 60.0,
            x_bar_kwh: 1800.0,
            theta_in_min_c: -29.0,
            theta_in_max_c: -27.0,
            theta_out_c: 5.0,
            t_dis_s: 10.0 * 3600.0,
            fill: 0.5,
        }
    }
}

/// Ideal battery: `a = b = 0`, `c = 1`, symmetric power limits, no ramp
/// limits, no delay, pinned initial state.
pub fn make_battery(
    label: &str,
    p_max_kw: f64,
    x_bar_kwh: f64,
    x0_kwh: f64,
    grid: &TimeGrid,
) -> Result<ResourceParams, ResourceError> {
    if p_max_kw <= 0.0 {
        return Err(ResourceError::Negative {
            what: "p_max_kw",
            value: p_max_kw,
        });
    }
    if x_bar_kwh < 0.0 {
        return Err(ResourceError::Negative {
            what: "x_bar_kwh",
            value: x_bar_kwh,
        });
    }
    if x0_kwh < 0.0 || x0_kwh > x_bar_kwh {
        return Err(ResourceError::BoundOrdering {
            what: format!("x0_kwh = {x0_kwh} outside [0, {x_bar_kwh}]"),
        });
    }
    let n_s = grid.n_s();
    let phi = ResourceParams {
        label: label.to_string(),
        p_min: vec![-p_max_kw; n_s],
        p_max: vec![p_max_kw; n_s],
        r_min: vec![f64::NEG_INFINITY; n_s],
        r_max: vec![f64::INFINITY; n_s],
        x_min: vec![0.0; n_s],
        x_max: vec![x_bar_kwh; n_s],
        x0_min: x0_kwh,
        x0_max: x0_kwh,
        a: 0.0,
        b: 0.0,
        c: 1.0,
        u: vec![0.0; n_s],
        delay_s: 0,
    };
    phi.validate(grid)?;
    Ok(phi)
}

/// Freezer as a single energy buffer.
///
/// The dissipation rate is `a = ln((th_in_max - th_out)/(th_in_min - th_out)) / T_dis`
/// and the exogenous input is fixed to `u = th_in_max - th_out`; together
/// they reproduce both the passive discharge time and the reported
/// steady-state power draw.
pub fn make_freezer(
    label: &str,
    spec: &FreezerSpec,
    delay_s: u64,
    grid: &TimeGrid,
) -> Result<ResourceParams, ResourceError> {
    if !(spec.theta_in_min_c < spec.theta_in_max_c && spec.theta_in_max_c < spec.theta_out_c) {
        return Err(ResourceError::ThetaOrdering);
    }
    if spec.t_dis_s <= 0.0 {
        return Err(ResourceError::Negative {
            what: "t_dis_s",
            value: spec.t_dis_s,
        });
    }
    if !(0.0..=1.0).contains(&spec.fill) {
        return Err(ResourceError::FillFraction(spec.fill));
    }
    let ratio = (spec.theta_in_max_c - spec.theta_out_c) / (spec.theta_in_min_c - spec.theta_out_c);
    let a = ratio.ln() / spec.t_dis_s; // 1/s, negative since ratio < 1
    let b = a * spec.x_bar_kwh * HOUR_S / (spec.theta_in_min_c - spec.theta_in_max_c);
    let u = spec.theta_in_max_c - spec.theta_out_c;
    let n_s = grid.n_s();
    let x0 = spec.fill * spec.x_bar_kwh;
    let phi = ResourceParams {
        label: label.to_string(),
        p_min: vec![spec.p_min_kw; n_s],
        p_max: vec![spec.p_max_kw; n_s],
        r_min: vec![spec.r_min_kw_s; n_s],
        r_max: vec![spec.r_max_kw_s; n_s],
        x_min: vec![0.0; n_s],
        x_max: vec![spec.x_bar_kwh; n_s],
        x0_min: x0,
        x0_max: x0,
        a,
        b,
        c: 1.0,
        u: vec![u; n_s],
        delay_s,
    };
    phi.validate(grid)?;
    Ok(phi)
}

/// Steam turbine: no state buffer, no delay, symmetric ramp limits.
pub fn make_turbine(
    label: &str,
    p_min_kw: f64,
    p_max_kw: f64,
    ramp_kw_per_min: f64,
    grid: &TimeGrid,
) -> Result<ResourceParams, ResourceError> {
    if p_min_kw > p_max_kw {
        return Err(ResourceError::BoundOrdering {
            what: format!("p_min_kw = {p_min_kw} > p_max_kw = {p_max_kw}"),
        });
    }
    if ramp_kw_per_min <= 0.0 {
        return Err(ResourceError::Negative {
            what: "ramp_kw_per_min",
            value: ramp_kw_per_min,
        });
    }
    let ramp = ramp_kw_per_min / 60.0;
    let n_s = grid.n_s();
    let phi = ResourceParams {
        label: label.to_string(),
        p_min: vec![p_min_kw; n_s],
        p_max: vec![p_max_kw; n_s],
        r_min: vec![-ramp; n_s],
        r_max: vec![ramp; n_s],
        x_min: vec![f64::NEG_INFINITY; n_s],
        x_max: vec![f64::INFINITY; n_s],
        x0_min: 0.0,
        x0_max: 0.0,
        a: 0.0,
        b: 0.0,
        c: 1.0,
        u: vec![0.0; n_s],
        delay_s: 0,
    };
    phi.validate(grid)?;
    Ok(phi)
}

/// Maximum symmetric time-invariant SFR capacity the resource can offer on
/// its own, in kW.
///
/// Takes the minimum over the power half-band, the two energy-budget terms
/// over the tendering period, and the ramp terms; a control delay longer
/// than one control interval forbids any capacity.  Disabled constraint
/// families contribute nothing.
pub fn standalone_capacity(phi: &ResourceParams, grid: &TimeGrid) -> f64 {
    if phi.delay_s > grid.t_c() {
        return 0.0;
    }
    let t_sfr_h = grid.duration_s(Timescale::Sfr) as f64 / HOUR_S;
    let t_c = grid.t_c() as f64;
    let mut cap = f64::INFINITY;
    let n_s = grid.n_s();
    for k in 0..n_s {
        if phi.p_min[k].is_finite() && phi.p_max[k].is_finite() {
            cap = cap.min((phi.p_max[k] - phi.p_min[k]) / 2.0);
        }
        if phi.x_max[k].is_finite() {
            cap = cap.min((phi.x_max[k] - phi.x0_max) / t_sfr_h);
        }
        if phi.x_min[k].is_finite() {
            cap = cap.min((phi.x0_min - phi.x_min[k]) / t_sfr_h);
        }
        if phi.r_max[k].is_finite() {
            cap = cap.min(phi.r_max[k] * t_c / 2.0);
        }
        if phi.r_min[k].is_finite() {
            cap = cap.min(-phi.r_min[k] * t_c / 2.0);
        }
    }
    cap.max(0.0)
}
