//! Dense two-phase simplex on standard-form problems, with Bland's rule
//! for cycling-free pivoting and dual values from the final basis.
//!
//! Intended for small instances (unit tests, duality cross-checks); large
//! problems go through the interior-point backend.

/// `min c'x  s.t.  A x = b, x >= 0` (rows are pre-flipped so `b >= 0`).
#[derive(Clone, Debug)]
pub struct StandardLp {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum SimplexStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug)]
pub struct SimplexResult {
    pub status: SimplexStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// One dual multiplier per equality row (`y = c_B B^{-1}`).
    pub duals: Vec<f64>,
}

const TOL: f64 = 1e-9;

struct Tableau {
    /// `m x (n_total + 1)` dictionary: `B^{-1} A | B^{-1} b`.
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    n_total: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.n_total]
    }

    fn pivot(&mut self, r: usize, col: usize) {
        let p = self.rows[r][col];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[col];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        self.basis[r] = col;
    }

    /// Bland's rule iteration with costs `cost` over columns `0..limit`.
    /// Returns `true` when optimal, `false` when unbounded.
    fn run(&mut self, cost: &[f64], limit: usize) -> bool {
        loop {
            // reduced costs rc_j = c_j - c_B . column_j
            let cb: Vec<f64> = self.basis.iter().map(|&j| cost[j]).collect();
            let mut entering = None;
            for j in 0..limit {
                if self.basis.contains(&j) {
                    continue;
                }
                let dot: f64 = self.rows.iter().zip(&cb).map(|(row, c)| c * row[j]).sum();
                if cost[j] - dot < -TOL {
                    entering = Some(j);
                    break; // smallest index: Bland's rule
                }
            }
            let Some(j) = entering else { return true };
            // ratio test; ties broken by smallest basis index (Bland)
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][j];
                if a > TOL {
                    let ratio = self.rhs(i) / a;
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - TOL
                                || (ratio < lr + TOL && self.basis[i] < self.basis[li])
                            {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            let Some((r, _)) = leave else { return false };
            self.pivot(r, j);
        }
    }
}

/// Solves the standard-form problem by the two-phase method.
pub fn solve_standard(lp: &StandardLp) -> SimplexResult {
    let m = lp.b.len();
    let n = lp.c.len();
    let n_total = n + m; // artificial j lives at column n + j
    let mut rows = Vec::with_capacity(m);
    for i in 0..m {
        let mut row = vec![0.0; n_total + 1];
        let flip = if lp.b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            row[j] = flip * lp.a[i][j];
        }
        row[n + i] = 1.0;
        row[n_total] = flip * lp.b[i];
        rows.push(row);
    }
    let mut t = Tableau {
        rows,
        basis: (n..n_total).collect(),
        n_total,
    };

    // phase 1: minimize the sum of artificials
    let mut phase1 = vec![0.0; n_total];
    for c in phase1.iter_mut().skip(n) {
        *c = 1.0;
    }
    t.run(&phase1, n_total);
    let p1: f64 = t
        .basis
        .iter()
        .enumerate()
        .filter(|(_, &j)| j >= n)
        .map(|(i, _)| t.rhs(i))
        .sum();
    if p1 > 1e-7 {
        return SimplexResult {
            status: SimplexStatus::Infeasible,
            x: vec![0.0; n],
            objective: f64::INFINITY,
            duals: vec![0.0; m],
        };
    }
    // drive remaining zero-level artificials out of the basis if possible
    for i in 0..m {
        if t.basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| t.rows[i][j].abs() > TOL) {
                t.pivot(i, j);
            }
        }
    }

    // phase 2 over the original columns only
    let mut phase2 = vec![0.0; n_total];
    phase2[..n].copy_from_slice(&lp.c);
    if !t.run(&phase2, n) {
        return SimplexResult {
            status: SimplexStatus::Unbounded,
            x: vec![0.0; n],
            objective: f64::NEG_INFINITY,
            duals: vec![0.0; m],
        };
    }

    let mut x = vec![0.0; n];
    for (i, &j) in t.basis.iter().enumerate() {
        if j < n {
            x[j] = t.rhs(i);
        }
    }
    let objective: f64 = lp.c.iter().zip(&x).map(|(c, v)| c * v).sum();
    // duals from the artificial columns: column n+i holds B^{-1} e_i,
    // so y_i = c_B . (B^{-1} e_i); undo the rhs sign flip
    let cb: Vec<f64> = t.basis.iter().map(|&j| phase2[j]).collect();
    let duals: Vec<f64> = (0..m)
        .map(|i| {
            let y: f64 = t.rows.iter().zip(&cb).map(|(row, c)| c * row[n + i]).sum();
            if lp.b[i] < 0.0 {
                -y
            } else {
                y
            }
        })
        .collect();
    SimplexResult {
        status: SimplexStatus::Optimal,
        x,
        objective,
        duals,
    }
}
