//! The two top-level problems: expected-profit bidding and aggregate
//! capacity maximization, plus synergy metrics and parameter sweeps.

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lpcore::{Backend, LinearProgram, LpError, LpSolution, Sense, SolveStatus};
use crate::market::{
    balance_rows, expected_profit, lead_time_masks, Mask, MarketPolicies, PriceForecast,
};
use crate::policy::{AffinePolicy, PolicyStructure};
use crate::resource::{standalone_capacity, ResourceParams};
use crate::robust::{
    power_rows, ramp_rows, state_rows, AuxFamily, LinExpr, Owner, Rel, RobustRows, Row, VarRef,
};
use crate::timegrid::TimeGrid;

#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum MarketMode {
    FullMarkets,
    MarketsFrozen,
}

#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum ObjectiveMode {
    Profit,
    MaxCapacity,
}

/// Constraint families probed during infeasibility diagnosis, in order.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum ConstraintFamily {
    Power,
    Ramp,
    State,
    Delay,
}

#[derive(Error, Debug, Clone)]
pub enum BidError {
    #[error("scenario invalid: {0}")]
    Validation(String),
    #[error("profit mode requires full markets and a price forecast")]
    ModeConflict,
    #[error("problem infeasible{}", diagnosis_text(.relaxed))]
    Infeasible { relaxed: Option<ConstraintFamily> },
    #[error("problem unbounded (a free variable is missing a price or bound)")]
    Unbounded,
    #[error(transparent)]
    Lp(#[from] LpError),
}

fn diagnosis_text(relaxed: &Option<ConstraintFamily>) -> String {
    match relaxed {
        Some(f) => format!("; relaxing the {f:?} family restores feasibility"),
        None => "; no single constraint-family relaxation restores feasibility".into(),
    }
}

/// A complete problem instance.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub grid: TimeGrid,
    pub resources: Vec<ResourceParams>,
    pub structures: Vec<PolicyStructure>,
    pub market_mode: MarketMode,
    pub objective_mode: ObjectiveMode,
    pub prices: Option<PriceForecast>,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), BidError> {
        if self.resources.is_empty() {
            return Err(BidError::Validation("no resources".into()));
        }
        if self.resources.len() != self.structures.len() {
            return Err(BidError::Validation(format!(
                "{} resources but {} policy structures",
                self.resources.len(),
                self.structures.len()
            )));
        }
        for phi in &self.resources {
            phi.validate(&self.grid)
                .map_err(|e| BidError::Validation(e.to_string()))?;
        }
        match self.objective_mode {
            ObjectiveMode::Profit => {
                if self.market_mode != MarketMode::FullMarkets || self.prices.is_none() {
                    return Err(BidError::ModeConflict);
                }
                self.prices
                    .as_ref()
                    .unwrap()
                    .validate(&self.grid)
                    .map_err(|e| BidError::Validation(e.to_string()))?;
            }
            ObjectiveMode::MaxCapacity => {
                if self.market_mode != MarketMode::MarketsFrozen {
                    return Err(BidError::Validation(
                        "capacity maximization requires frozen markets".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveStats {
    pub n_vars: usize,
    pub n_rows: usize,
    pub backend: String,
    pub solve_ms: u128,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BidResult {
    pub policies: Vec<AffinePolicy>,
    pub markets: MarketPolicies,
    /// Aggregate capacity per system interval, kW.
    pub gamma_agg: Vec<f64>,
    pub objective: f64,
    pub stats: SolveStats,
}

impl BidResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn owner_of(j: usize) -> Owner {
    Owner::Resource(j as u16)
}

/// Causality-only structure used for the market lead-time masks.
fn market_structure(grid: &TimeGrid) -> PolicyStructure {
    PolicyStructure::new(grid, grid.n_s(), 0, true)
}

/// Everything needed to assemble one LP, with optional family omissions
/// for diagnosis.
struct ProblemParts {
    sets: Vec<RobustRows>,
    bounds: Vec<(VarRef, f64, f64)>,
    da_mask: Mask,
    id_mask: Mask,
}

fn build_parts(scn: &Scenario, skip: Option<ConstraintFamily>, relax_delay: bool) -> ProblemParts {
    let grid = &scn.grid;
    let n_s = grid.n_s();
    let mut sets = Vec::new();
    let mut bounds = Vec::new();
    let structures: Vec<PolicyStructure> = scn
        .structures
        .iter()
        .map(|st| {
            let mut st = *st;
            if relax_delay {
                st.delay_steps = 0;
            }
            st
        })
        .collect();
    for (j, phi) in scn.resources.iter().enumerate() {
        let owner = owner_of(j);
        let st = &structures[j];
        if skip != Some(ConstraintFamily::Power) {
            sets.push(power_rows(owner, phi, st));
        }
        if skip != Some(ConstraintFamily::Ramp) {
            sets.push(ramp_rows(owner, phi, st, grid));
        }
        if skip != Some(ConstraintFamily::State) {
            sets.push(state_rows(owner, phi, st, grid));
        }
        // capacity variables are nonnegative; a control delay longer than
        // the control interval disqualifies the resource from regulation
        let pinned = phi.delay_s > grid.t_c() && !relax_delay;
        let hi = if pinned { 0.0 } else { f64::INFINITY };
        let gamma_count = if st.time_invariant_gamma { 1 } else { n_s };
        for k in 0..gamma_count {
            bounds.push((
                VarRef::Gamma {
                    owner,
                    k: k as u32,
                },
                0.0,
                hi,
            ));
        }
    }
    let (da_mask, id_mask) = match scn.market_mode {
        MarketMode::FullMarkets => lead_time_masks(grid, &market_structure(grid)),
        MarketMode::MarketsFrozen => {
            // frozen: Q_DA = Q_ID = 0 by omission, q_ID pinned to 0 below
            let frozen = PolicyStructure::new(grid, 0, grid.horizon_s() + 1, true);
            lead_time_masks(grid, &frozen)
        }
    };
    let owners: Vec<(Owner, &PolicyStructure)> = structures
        .iter()
        .enumerate()
        .map(|(j, st)| (owner_of(j), st))
        .collect();
    sets.push(balance_rows(&owners, &da_mask, &id_mask, n_s));
    if scn.market_mode == MarketMode::MarketsFrozen {
        for k in 0..=n_s {
            bounds.push((
                VarRef::Breakpoint {
                    owner: Owner::IntraDay,
                    k: k as u32,
                },
                0.0,
                0.0,
            ));
        }
    }
    ProblemParts {
        sets,
        bounds,
        da_mask,
        id_mask,
    }
}

fn capacity_objective_and_rows(scn: &Scenario) -> (LinExpr, Vec<Row>) {
    let n_s = scn.grid.n_s();
    let epi = VarRef::Aux {
        owner: Owner::Shared,
        family: AuxFamily::Epigraph,
        i: 0,
        j: 0,
    };
    let mut rows = Vec::with_capacity(n_s);
    for k in 0..n_s {
        let mut coeffs = vec![(epi, 1.0)];
        for (j, st) in scn.structures.iter().enumerate() {
            coeffs.push((
                VarRef::Gamma {
                    owner: owner_of(j),
                    k: st.gamma_var_index(k) as u32,
                },
                -1.0,
            ));
        }
        rows.push(Row {
            coeffs,
            rel: Rel::Le,
            rhs: 0.0,
        });
    }
    (LinExpr::term(epi, 1.0), rows)
}

fn solve_lp(
    parts: &ProblemParts,
    extra_rows: &[Row],
    objective: &LinExpr,
) -> Result<(LpSolution, SolveStats), BidError> {
    let set_refs: Vec<&RobustRows> = parts.sets.iter().collect();
    let lp = LinearProgram::assemble(&set_refs, extra_rows, objective, Sense::Maximize, &parts.bounds)?;
    let started = Instant::now();
    let sol = lp.solve(Backend::InteriorPoint)?;
    let stats = SolveStats {
        n_vars: lp.n_vars(),
        n_rows: lp.n_rows(),
        backend: "interior-point".into(),
        solve_ms: started.elapsed().as_millis(),
    };
    Ok((sol, stats))
}

fn extract_policy(
    values: &HashMap<VarRef, f64>,
    owner: Owner,
    st: &PolicyStructure,
    with_gamma: bool,
) -> AffinePolicy {
    let n_s = st.n_s;
    let mut p = AffinePolicy::zeros(n_s, false);
    let get = |v: VarRef| values.get(&v).copied().unwrap_or(0.0);
    for k in 0..=n_s {
        p.q[k] = get(VarRef::Breakpoint { owner, k: k as u32 });
        for n in 0..n_s {
            if st.allows(k, n) {
                p.q_mat[k][n] = get(VarRef::Q {
                    owner,
                    k: k as u32,
                    n: n as u32,
                });
            }
        }
    }
    if with_gamma {
        p.gamma = (0..n_s)
            .map(|k| {
                get(VarRef::Gamma {
                    owner,
                    k: st.gamma_var_index(k) as u32,
                })
                .max(0.0)
            })
            .collect();
    }
    p
}

fn extract_market_policy(values: &HashMap<VarRef, f64>, owner: Owner, mask: &Mask, n_s: usize) -> AffinePolicy {
    let mut p = AffinePolicy::zeros(n_s, false);
    let get = |v: VarRef| values.get(&v).copied().unwrap_or(0.0);
    for k in 0..=n_s {
        p.q[k] = get(VarRef::Breakpoint { owner, k: k as u32 });
        for n in 0..n_s {
            if mask.allows(k, n) {
                p.q_mat[k][n] = get(VarRef::Q {
                    owner,
                    k: k as u32,
                    n: n as u32,
                });
            }
        }
    }
    p
}

/// Makes the aggregate balance hold exactly: solver residuals are routed
/// into `q_DA` (static part) and, for adjustment entries, into the first
/// participant whose mask allows the entry.
fn repair_balance(
    policies: &mut [AffinePolicy],
    markets: &mut MarketPolicies,
    structures: &[PolicyStructure],
    da_mask: &Mask,
    id_mask: &Mask,
    n_s: usize,
) {
    for k in 0..=n_s {
        let sum: f64 = policies.iter().map(|p| p.q[k]).sum();
        markets.da.q[k] = sum - markets.id.q[k];
        for n in 0..n_s {
            let sum: f64 = policies.iter().map(|p| p.q_mat[k][n]).sum();
            let market = markets.da.q_mat[k][n] + markets.id.q_mat[k][n];
            let residual = sum - market;
            if residual == 0.0 {
                continue;
            }
            if id_mask.allows(k, n) {
                markets.id.q_mat[k][n] += residual;
            } else if da_mask.allows(k, n) {
                markets.da.q_mat[k][n] += residual;
            } else if let Some(j) = structures.iter().position(|st| st.allows(k, n)) {
                policies[j].q_mat[k][n] -= residual;
            }
        }
    }
}

fn diagnose(scn: &Scenario, extra_rows_builder: impl Fn(&Scenario) -> (LinExpr, Vec<Row>)) -> BidError {
    for family in [
        ConstraintFamily::Power,
        ConstraintFamily::Ramp,
        ConstraintFamily::State,
        ConstraintFamily::Delay,
    ] {
        let relax_delay = family == ConstraintFamily::Delay;
        let skip = if relax_delay { None } else { Some(family) };
        let parts = build_parts(scn, skip, relax_delay);
        let (obj, rows) = extra_rows_builder(scn);
        match solve_lp(&parts, &rows, &obj) {
            Ok((sol, _)) if sol.status != SolveStatus::Infeasible => {
                return BidError::Infeasible {
                    relaxed: Some(family),
                }
            }
            _ => continue,
        }
    }
    BidError::Infeasible { relaxed: None }
}

fn finish(
    scn: &Scenario,
    parts: &ProblemParts,
    sol: LpSolution,
    stats: SolveStats,
) -> BidResult {
    let n_s = scn.grid.n_s();
    let mut policies: Vec<AffinePolicy> = scn
        .structures
        .iter()
        .enumerate()
        .map(|(j, st)| {
            let mut p = extract_policy(&sol.values, owner_of(j), st, true);
            // a delay longer than one control interval pins gamma to zero;
            // snap away the interior-point residual on the fixed variable
            if scn.resources[j].delay_s > scn.grid.t_c() {
                p.gamma.iter_mut().for_each(|g| *g = 0.0);
            }
            p
        })
        .collect();
    let mut markets = MarketPolicies {
        da: extract_market_policy(&sol.values, Owner::DayAhead, &parts.da_mask, n_s),
        id: extract_market_policy(&sol.values, Owner::IntraDay, &parts.id_mask, n_s),
    };
    repair_balance(
        &mut policies,
        &mut markets,
        &scn.structures,
        &parts.da_mask,
        &parts.id_mask,
        n_s,
    );
    let mut gamma_agg = vec![0.0; n_s];
    for p in &policies {
        for k in 0..n_s {
            gamma_agg[k] += p.gamma_at(k);
        }
    }
    BidResult {
        policies,
        markets,
        gamma_agg,
        objective: sol.objective,
        stats,
    }
}

/// Expected-profit bidding: maximizes the linear profit surrogate over
/// all policies satisfying the physical, structural, market-balance, and
/// lead-time constraints.
pub fn solve_bidding(scn: &Scenario) -> Result<BidResult, BidError> {
    scn.validate()?;
    if scn.objective_mode != ObjectiveMode::Profit {
        return Err(BidError::ModeConflict);
    }
    let parts = build_parts(scn, None, false);
    let owners_held: Vec<(Owner, PolicyStructure)> = scn
        .structures
        .iter()
        .enumerate()
        .map(|(j, st)| (owner_of(j), *st))
        .collect();
    let owners: Vec<(Owner, &PolicyStructure)> =
        owners_held.iter().map(|(o, st)| (*o, st)).collect();
    let obj = expected_profit(
        scn.prices.as_ref().unwrap(),
        &scn.grid,
        &owners,
        &parts.da_mask,
        &parts.id_mask,
    );
    let (sol, stats) = solve_lp(&parts, &[], &obj)?;
    match sol.status {
        SolveStatus::Optimal => Ok(finish(scn, &parts, sol, stats)),
        SolveStatus::Infeasible => Err(diagnose(scn, |_| (obj.clone(), Vec::new()))),
        SolveStatus::Unbounded => Err(BidError::Unbounded),
    }
}

/// Aggregate capacity maximization with frozen markets: maximizes the
/// epigraph lower bound on `min_k sum_j gamma_k^(j)`.
pub fn max_capacity(scn: &Scenario) -> Result<BidResult, BidError> {
    scn.validate()?;
    if scn.objective_mode != ObjectiveMode::MaxCapacity {
        return Err(BidError::Validation(
            "scenario is not in capacity-maximization mode".into(),
        ));
    }
    let parts = build_parts(scn, None, false);
    let (obj, rows) = capacity_objective_and_rows(scn);
    let (sol, stats) = solve_lp(&parts, &rows, &obj)?;
    match sol.status {
        SolveStatus::Optimal => {
            let mut res = finish(scn, &parts, sol, stats);
            // report the capacity realized by the returned (clamped)
            // policies rather than the raw epigraph value
            res.objective = res
                .gamma_agg
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            Ok(res)
        }
        SolveStatus::Infeasible => Err(diagnose(scn, capacity_objective_and_rows)),
        SolveStatus::Unbounded => Err(BidError::Unbounded),
    }
}

/// Relative capacity gain from aggregation; `None` when every standalone
/// capacity is zero (infinite synergy, reported as undefined).
pub fn synergy_factor(gamma_agg_max: f64, standalone: &[f64]) -> Option<f64> {
    let sum: f64 = standalone.iter().sum();
    if sum <= 0.0 {
        None
    } else {
        Some(gamma_agg_max / sum - 1.0)
    }
}

/// One row of a battery-parameter sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub p_bar_kw: f64,
    pub x_bar_kwh: f64,
    pub gamma_b_kw: f64,
    pub gamma_agg_kw: Option<f64>,
    pub sigma: Option<f64>,
    pub error: Option<String>,
}

/// Re-solves the capacity problem for each battery size `(p_bar, x_bar)`,
/// replacing resource `battery_index` (initial fill fraction preserved).
/// Points solve concurrently; failures are recorded and the sweep
/// continues.
pub fn sweep(scn: &Scenario, battery_index: usize, points: &[(f64, f64)]) -> Vec<SweepRow> {
    let base_fill = {
        let b = &scn.resources[battery_index];
        if b.x_max[0] > 0.0 {
            (b.x0_min / b.x_max[0]).clamp(0.0, 1.0)
        } else {
            0.5
        }
    };
    let run_point = |&(p_bar, x_bar): &(f64, f64)| -> SweepRow {
        let battery = match crate::resource::make_battery(
            &scn.resources[battery_index].label,
            p_bar,
            x_bar,
            x_bar * base_fill,
            &scn.grid,
        ) {
            Ok(b) => b,
            Err(e) => {
                return SweepRow {
                    p_bar_kw: p_bar,
                    x_bar_kwh: x_bar,
                    gamma_b_kw: 0.0,
                    gamma_agg_kw: None,
                    sigma: None,
                    error: Some(e.to_string()),
                }
            }
        };
        let gamma_b = standalone_capacity(&battery, &scn.grid);
        let mut point = scn.clone();
        point.resources[battery_index] = battery;
        let standalone: Vec<f64> = point
            .resources
            .iter()
            .map(|phi| standalone_capacity(phi, &scn.grid))
            .collect();
        match max_capacity(&point) {
            Ok(res) => SweepRow {
                p_bar_kw: p_bar,
                x_bar_kwh: x_bar,
                gamma_b_kw: gamma_b,
                gamma_agg_kw: Some(res.objective),
                sigma: synergy_factor(res.objective, &standalone),
                error: None,
            },
            Err(e) => SweepRow {
                p_bar_kw: p_bar,
                x_bar_kwh: x_bar,
                gamma_b_kw: gamma_b,
                gamma_agg_kw: None,
                sigma: None,
                error: Some(e.to_string()),
            },
        }
    };
    std::thread::scope(|scope| {
        let handles: Vec<_> = points
            .iter()
            .map(|pt| scope.spawn(move || run_point(pt)))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

/// CSV with the canonical sweep header.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("p_bar_kW,x_bar_kWh,gamma_B_kW,gamma_agg_kW,sigma\n");
    for r in rows {
        let agg = r
            .gamma_agg_kw
            .map(|v| v.to_string())
            .unwrap_or_else(|| "error".into());
        let sigma = r
            .sigma
            .map(|v| v.to_string())
            .unwrap_or_else(|| "undefined".into());
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.p_bar_kw, r.x_bar_kwh, r.gamma_b_kw, agg, sigma
        ));
    }
    out
}

/// Max-norm residual of the aggregate balance of a result.
pub fn balance_residual(result: &BidResult) -> f64 {
    let n_s = result.gamma_agg.len();
    let mut worst: f64 = 0.0;
    for k in 0..=n_s {
        let sum: f64 = result.policies.iter().map(|p| p.q[k]).sum();
        worst = worst.max((sum - result.markets.da.q[k] - result.markets.id.q[k]).abs());
        for n in 0..n_s {
            let sum: f64 = result.policies.iter().map(|p| p.q_mat[k][n]).sum();
            let market = result.markets.da.q_mat[k][n] + result.markets.id.q_mat[k][n];
            worst = worst.max((sum - market).abs());
        }
    }
    worst
}
