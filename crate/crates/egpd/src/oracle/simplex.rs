//! Dense two-phase primal simplex with Bland's anti-cycling rule.
//!
//! Problem form: maximize `c . x` subject to `a_i . x {<=,=,>=} b_i` and
//! `x >= 0`. Instance sizes here are tiny (tens of rows and columns), so the
//! solver keeps a dense tableau and favors robustness over speed: Bland's
//! rule everywhere, a fixed pivot tolerance, and artificial columns kept
//! through phase two so row duals can be read off the final tableau.

use thiserror::Error;

/// Pivot tolerance: entries smaller than this are treated as zero.
pub const PIVOT_TOL: f64 = 1e-10;

const MAX_ITERS: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Debug)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub rel: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(coeffs: Vec<f64>, rel: Relation, rhs: f64) -> Self {
        Self { coeffs, rel, rhs }
    }
}

/// `maximize . x` over `x >= 0` subject to `constraints`.
#[derive(Clone, Debug)]
pub struct LinearProgram {
    pub maximize: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
    /// One multiplier per constraint, oriented for the original row: at the
    /// optimum of a maximization, `<=` rows have nonnegative duals, `>=` rows
    /// nonpositive, `=` rows free, and `value = sum_i duals[i] * rhs[i]`.
    pub duals: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimplexError {
    #[error("infeasible: phase-1 residual {residual:.3e}")]
    Infeasible { residual: f64 },
    #[error("objective unbounded above")]
    Unbounded,
    #[error("iteration limit reached")]
    IterationLimit,
}

struct Tableau {
    rows: usize,
    cols: usize, // structural + slack/surplus + artificial
    a: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    /// Objective row as reduced costs `c_j - z_j`; optimal when all <= tol.
    obj: Vec<f64>,
    /// Identity column associated with each row (slack or artificial), used
    /// to read duals; rows that were negated during normalization carry -1.
    id_col: Vec<usize>,
    row_sign: Vec<f64>,
}

pub fn solve(lp: &LinearProgram) -> Result<LpSolution, SimplexError> {
    let n = lp.maximize.len();
    let m = lp.constraints.len();
    debug_assert!(lp.constraints.iter().all(|c| c.coeffs.len() == n));

    // Normalize to nonnegative rhs, then lay out columns:
    // [structural | slack/surplus | artificial].
    let mut rel = Vec::with_capacity(m);
    let mut rows_a = Vec::with_capacity(m);
    let mut rhs = Vec::with_capacity(m);
    let mut row_sign = vec![1.0; m];
    for (i, c) in lp.constraints.iter().enumerate() {
        let mut coeffs = c.coeffs.clone();
        let mut b = c.rhs;
        let mut r = c.rel;
        if b < 0.0 {
            for v in coeffs.iter_mut() {
                *v = -*v;
            }
            b = -b;
            r = match r {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
            row_sign[i] = -1.0;
        }
        rel.push(r);
        rows_a.push(coeffs);
        rhs.push(b);
    }

    let n_slack = rel.iter().filter(|r| !matches!(r, Relation::Eq)).count();
    let n_art = rel.iter().filter(|r| !matches!(r, Relation::Le)).count();
    let cols = n + n_slack + n_art;
    let first_artificial = n + n_slack;

    let mut a = vec![vec![0.0; cols]; m];
    let mut basis = vec![0usize; m];
    let mut id_col = vec![0usize; m];
    let mut slack_at = n;
    let mut art_at = first_artificial;
    for i in 0..m {
        a[i][..n].copy_from_slice(&rows_a[i]);
        match rel[i] {
            Relation::Le => {
                a[i][slack_at] = 1.0;
                basis[i] = slack_at;
                id_col[i] = slack_at;
                slack_at += 1;
            }
            Relation::Ge => {
                a[i][slack_at] = -1.0;
                slack_at += 1;
                a[i][art_at] = 1.0;
                basis[i] = art_at;
                id_col[i] = art_at;
                art_at += 1;
            }
            Relation::Eq => {
                a[i][art_at] = 1.0;
                basis[i] = art_at;
                id_col[i] = art_at;
                art_at += 1;
            }
        }
    }

    let mut t = Tableau {
        rows: m,
        cols,
        a,
        rhs,
        basis,
        obj: vec![0.0; cols],
        id_col,
        row_sign,
    };

    let mut iterations = 0usize;

    // Phase 1: maximize -sum(artificials). Reduced costs of that objective
    // under the starting basis are the column sums over artificial-basic rows.
    if n_art > 0 {
        for j in 0..t.cols {
            let mut z = 0.0;
            for i in 0..t.rows {
                if t.basis[i] >= first_artificial {
                    z -= t.a[i][j];
                }
            }
            let c_j = if j >= first_artificial { -1.0 } else { 0.0 };
            t.obj[j] = c_j - z;
        }
        let all_cols = t.cols;
        pivot_loop(&mut t, &mut iterations, all_cols)?;
        let residual: f64 = (0..t.rows)
            .filter(|&i| t.basis[i] >= first_artificial)
            .map(|i| t.rhs[i])
            .sum();
        if residual > 1e-7 {
            return Err(SimplexError::Infeasible { residual });
        }
        // Drive remaining basic artificials out where possible; a row with no
        // nonzero structural entry is redundant and stays put at level zero.
        for i in 0..t.rows {
            if t.basis[i] >= first_artificial && t.rhs[i].abs() <= 1e-9 {
                if let Some(j) = (0..first_artificial).find(|&j| t.a[i][j].abs() > 1e-7) {
                    t.pivot(i, j);
                    iterations += 1;
                }
            }
        }
    }

    // Phase 2: the real objective, artificials barred from entering.
    for j in 0..t.cols {
        let c_j = if j < n { lp.maximize[j] } else { 0.0 };
        let mut z = 0.0;
        for i in 0..t.rows {
            let cb = if t.basis[i] < n { lp.maximize[t.basis[i]] } else { 0.0 };
            if cb != 0.0 {
                z += cb * t.a[i][j];
            }
        }
        t.obj[j] = c_j - z;
    }
    pivot_loop(&mut t, &mut iterations, first_artificial)?;

    let mut x = vec![0.0; n];
    for i in 0..t.rows {
        if t.basis[i] < n {
            x[t.basis[i]] = t.rhs[i];
        }
    }
    let value: f64 = x
        .iter()
        .zip(&lp.maximize)
        .map(|(xi, ci)| xi * ci)
        .sum();

    // Row duals: y_i = -obj[id_col_i] since every identity column has
    // coefficient +1 and zero cost, mapped back through row negation.
    let duals: Vec<f64> = (0..m).map(|i| -t.obj[t.id_col[i]] * t.row_sign[i]).collect();

    Ok(LpSolution {
        x,
        value,
        duals,
        iterations,
    })
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.a[row][col];
        debug_assert!(p.abs() > PIVOT_TOL);
        let inv = 1.0 / p;
        for v in self.a[row].iter_mut() {
            *v *= inv;
        }
        self.rhs[row] *= inv;
        for i in 0..self.rows {
            if i == row {
                continue;
            }
            let f = self.a[i][col];
            if f.abs() > 0.0 {
                for j in 0..self.cols {
                    self.a[i][j] -= f * self.a[row][j];
                }
                self.a[i][col] = 0.0;
                self.rhs[i] -= f * self.rhs[row];
            }
        }
        let f = self.obj[col];
        if f.abs() > 0.0 {
            for j in 0..self.cols {
                self.obj[j] -= f * self.a[row][j];
            }
            self.obj[col] = 0.0;
        }
        self.basis[row] = col;
        // Rounding noise can leave a tiny negative rhs; clamp to keep ratio
        // tests sound.
        if self.rhs[row] < 0.0 && self.rhs[row] > -1e-9 {
            self.rhs[row] = 0.0;
        }
    }
}

/// Bland's rule: entering column is the lowest index with positive reduced
/// cost, leaving row is the minimum ratio with ties broken by the lowest
/// basic variable index.
fn pivot_loop(t: &mut Tableau, iterations: &mut usize, enter_limit: usize) -> Result<(), SimplexError> {
    loop {
        let entering = (0..enter_limit).find(|&j| t.obj[j] > PIVOT_TOL);
        let Some(col) = entering else {
            return Ok(());
        };
        let mut leaving: Option<(usize, f64)> = None;
        for i in 0..t.rows {
            let aij = t.a[i][col];
            if aij > PIVOT_TOL {
                let ratio = t.rhs[i] / aij;
                match leaving {
                    None => leaving = Some((i, ratio)),
                    Some((best_i, best_r)) => {
                        if ratio < best_r - PIVOT_TOL
                            || (ratio <= best_r + PIVOT_TOL && t.basis[i] < t.basis[best_i])
                        {
                            leaving = Some((i, ratio));
                        }
                    }
                }
            }
        }
        let Some((row, _)) = leaving else {
            return Err(SimplexError::Unbounded);
        };
        t.pivot(row, col);
        *iterations += 1;
        if *iterations > MAX_ITERS {
            return Err(SimplexError::IterationLimit);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn basic_le_program() {
        // max x + y, x + 2y <= 4, 3x + y <= 6
        let lp = LinearProgram {
            maximize: vec![1.0, 1.0],
            constraints: vec![
                Constraint::new(vec![1.0, 2.0], Relation::Le, 4.0),
                Constraint::new(vec![3.0, 1.0], Relation::Le, 6.0),
            ],
        };
        let sol = solve(&lp).unwrap();
        assert_abs_diff_eq!(sol.x[0], 1.6, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.x[1], 1.2, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.value, 2.8, epsilon = 1e-9);
        // Strong duality against the rhs.
        let dual_value = sol.duals[0] * 4.0 + sol.duals[1] * 6.0;
        assert_abs_diff_eq!(dual_value, sol.value, epsilon = 1e-9);
        assert!(sol.duals.iter().all(|&y| y >= -1e-9));
    }

    #[test]
    fn equality_and_ge_rows() {
        // max 2x + 3y, x + y = 2, x >= 0.5
        let lp = LinearProgram {
            maximize: vec![2.0, 3.0],
            constraints: vec![
                Constraint::new(vec![1.0, 1.0], Relation::Eq, 2.0),
                Constraint::new(vec![1.0, 0.0], Relation::Ge, 0.5),
            ],
        };
        let sol = solve(&lp).unwrap();
        assert_abs_diff_eq!(sol.x[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.x[1], 1.5, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.value, 5.5, epsilon = 1e-9);
        let dual_value = sol.duals[0] * 2.0 + sol.duals[1] * 0.5;
        assert_abs_diff_eq!(dual_value, sol.value, epsilon = 1e-9);
        // The >= row binds from below, so its multiplier is nonpositive.
        assert!(sol.duals[1] <= 1e-9);
    }

    #[test]
    fn infeasible_detected() {
        let lp = LinearProgram {
            maximize: vec![1.0],
            constraints: vec![
                Constraint::new(vec![1.0], Relation::Le, 1.0),
                Constraint::new(vec![1.0], Relation::Ge, 2.0),
            ],
        };
        assert!(matches!(solve(&lp), Err(SimplexError::Infeasible { .. })));
    }

    #[test]
    fn unbounded_detected() {
        let lp = LinearProgram {
            maximize: vec![1.0, 0.0],
            constraints: vec![Constraint::new(vec![0.0, 1.0], Relation::Le, 1.0)],
        };
        assert!(matches!(solve(&lp), Err(SimplexError::Unbounded)));
    }

    #[test]
    fn negative_rhs_row_is_normalized() {
        // x - y <= -1 with x,y >= 0: equivalent to y >= x + 1.
        let lp = LinearProgram {
            maximize: vec![1.0, -1.0],
            constraints: vec![
                Constraint::new(vec![1.0, -1.0], Relation::Le, -1.0),
                Constraint::new(vec![1.0, 1.0], Relation::Le, 5.0),
            ],
        };
        let sol = solve(&lp).unwrap();
        assert_abs_diff_eq!(sol.value, -1.0, epsilon = 1e-9);
        let dual_value = sol.duals[0] * -1.0 + sol.duals[1] * 5.0;
        assert_abs_diff_eq!(dual_value, sol.value, epsilon = 1e-9);
    }

    #[test]
    fn degenerate_program_terminates() {
        // Classic cycling-prone instance; Bland's rule must terminate.
        let lp = LinearProgram {
            maximize: vec![0.75, -150.0, 0.02, -6.0],
            constraints: vec![
                Constraint::new(vec![0.25, -60.0, -0.04, 9.0], Relation::Le, 0.0),
                Constraint::new(vec![0.5, -90.0, -0.02, 3.0], Relation::Le, 0.0),
                Constraint::new(vec![0.0, 0.0, 1.0, 0.0], Relation::Le, 1.0),
            ],
        };
        let sol = solve(&lp).unwrap();
        assert_abs_diff_eq!(sol.value, 0.05, epsilon = 1e-9);
    }

    #[test]
    fn redundant_equality_rows_are_tolerated() {
        // Second equality is the double of the first.
        let lp = LinearProgram {
            maximize: vec![1.0, 2.0],
            constraints: vec![
                Constraint::new(vec![1.0, 1.0], Relation::Eq, 3.0),
                Constraint::new(vec![2.0, 2.0], Relation::Eq, 6.0),
                Constraint::new(vec![1.0, 0.0], Relation::Le, 2.0),
            ],
        };
        let sol = solve(&lp).unwrap();
        assert_abs_diff_eq!(sol.value, 6.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.x[1], 3.0, epsilon = 1e-9);
    }
}
