//! Bounded-variable revised primal simplex.
//!
//! Every row `i` receives a logical variable `r_i` so that the constraints
//! read `A x + r = b`, with `r_i ∈ [0, 0]` for equality rows and
//! `r_i ∈ [0, ∞)` for `≤` rows. The starting basis is either the all-logical
//! basis or a caller-supplied warm start; any primal infeasibility of that
//! basis is removed by a composite phase 1 that minimizes the sum of bound
//! violations of the basic variables, so no artificial columns are needed.

use crate::factor::{BasisFactor, Slot};
use crate::problem::{LpProblem, RowKind};
use crate::LpError;

const NONE: usize = usize::MAX;
/// Entries of a transformed column smaller than this never pivot.
const PIVOT_TOL: f64 = 1e-9;

/// Entering-variable selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PivotRule {
    /// Devex reference-framework pricing. Falls back to Bland's rule after
    /// a run of degenerate pivots.
    Devex,
    /// Most negative reduced cost, lowest index on ties. Falls back to
    /// Bland's rule after a run of degenerate pivots.
    Dantzig,
    /// Lowest eligible index for both entering and leaving choices.
    Bland,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Primal feasibility and reduced-cost tolerance.
    pub tol: f64,
    pub max_iter: usize,
    pub pivot_rule: PivotRule,
    /// Number of basis updates between fresh factorizations.
    pub refactor_interval: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub degenerate_limit: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 200_000,
            pivot_rule: PivotRule::Devex,
            refactor_interval: 64,
            degenerate_limit: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

/// Position of a variable relative to the basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarStatus {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable held at zero.
    Free,
}

/// A simplex basis: one status per structural variable followed by one per
/// row logical. Usable as a warm start for a problem with the same shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Basis {
    structural: Vec<VarStatus>,
    logical: Vec<VarStatus>,
}

impl Basis {
    pub fn new(structural: Vec<VarStatus>, logical: Vec<VarStatus>) -> Self {
        Self { structural, logical }
    }

    /// The all-logical basis for a problem of the given shape.
    pub fn logical_start(num_vars: usize, num_rows: usize) -> Self {
        Self {
            structural: vec![VarStatus::AtLower; num_vars],
            logical: vec![VarStatus::Basic; num_rows],
        }
    }

    pub fn structural(&self) -> &[VarStatus] {
        &self.structural
    }

    pub fn logical(&self) -> &[VarStatus] {
        &self.logical
    }

    pub fn num_basic(&self) -> usize {
        self.structural
            .iter()
            .chain(&self.logical)
            .filter(|s| **s == VarStatus::Basic)
            .count()
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: LpStatus,
    pub iterations: usize,
    pub basis: Basis,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Solves `problem` from the all-logical basis.
pub fn solve(problem: &LpProblem, options: &SolverOptions) -> Result<LpSolution, LpError> {
    solve_from(problem, options, None)
}

/// Solves `problem`, starting from `warm` when its shape matches.
pub fn solve_from(
    problem: &LpProblem,
    options: &SolverOptions,
    warm: Option<&Basis>,
) -> Result<LpSolution, LpError> {
    problem.validate()?;
    if !(options.tol > 0.0) {
        return Err(LpError::InvalidOptions("tolerance must be positive".into()));
    }
    let warm = warm.filter(|b| {
        b.structural.len() == problem.num_vars() && b.logical.len() == problem.num_rows()
    });
    let mut s = Simplex::new(problem, options, warm);
    s.run()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    One,
    Two,
}

struct Simplex<'a> {
    problem: &'a LpProblem,
    opts: &'a SolverOptions,
    n: usize,
    m: usize,
    col_start: Vec<usize>,
    col_row: Vec<usize>,
    col_val: Vec<f64>,
    col_key: Vec<usize>,
    b: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    status: Vec<VarStatus>,
    pos_of: Vec<usize>,
    basis: Vec<usize>,
    x: Vec<f64>,
    factor: BasisFactor,
    iterations: usize,
    bland: bool,
    degenerate_run: usize,
    /// Devex reference weights, one per variable.
    weights: Vec<f64>,
    // scratch
    rho: Vec<f64>,
    unit: Vec<f64>,
    alpha: Vec<f64>,
    y: Vec<f64>,
    cb: Vec<f64>,
}

impl<'a> Simplex<'a> {
    fn new(problem: &'a LpProblem, opts: &'a SolverOptions, warm: Option<&Basis>) -> Self {
        let n = problem.num_vars();
        let m = problem.num_rows();
        let total = n + m;

        // column-major copy of [A | I]
        let mut counts = vec![0usize; total];
        for row in problem.rows() {
            for &(j, _) in &row.coeffs {
                counts[j] += 1;
            }
        }
        for c in counts.iter_mut().skip(n) {
            *c = 1;
        }
        let mut col_start = vec![0usize; total + 1];
        for j in 0..total {
            col_start[j + 1] = col_start[j] + counts[j];
        }
        let nnz = col_start[total];
        let mut col_row = vec![0usize; nnz];
        let mut col_val = vec![0.0; nnz];
        let mut fill = col_start.clone();
        for (i, row) in problem.rows().iter().enumerate() {
            for &(j, v) in &row.coeffs {
                col_row[fill[j]] = i;
                col_val[fill[j]] = v;
                fill[j] += 1;
            }
            col_row[fill[n + i]] = i;
            col_val[fill[n + i]] = 1.0;
            fill[n + i] += 1;
        }
        let col_key: Vec<usize> = (0..total)
            .map(|j| {
                col_row[col_start[j]..col_start[j + 1]]
                    .iter()
                    .copied()
                    .min()
                    .unwrap_or(NONE)
            })
            .collect();

        let mut lower = problem.lower().to_vec();
        let mut upper = problem.upper().to_vec();
        for row in problem.rows() {
            lower.push(0.0);
            upper.push(match row.kind {
                RowKind::Eq => 0.0,
                RowKind::Le => f64::INFINITY,
            });
        }
        let b: Vec<f64> = problem.rows().iter().map(|r| r.rhs).collect();

        let cmax = problem.cost().iter().fold(0.0f64, |a, c| a.max(c.abs()));
        let scale = if cmax > 0.0 { 1.0 / cmax } else { 1.0 };
        let mut cost: Vec<f64> = problem.cost().iter().map(|c| c * scale).collect();
        cost.resize(total, 0.0);

        let mut status: Vec<VarStatus> = match warm {
            Some(w) => w.structural.iter().chain(&w.logical).copied().collect(),
            None => {
                let mut s = vec![VarStatus::AtLower; n];
                s.extend(std::iter::repeat_n(VarStatus::Basic, m));
                s
            }
        };
        let mut x = vec![0.0; total];
        for j in 0..total {
            if status[j] != VarStatus::Basic {
                status[j] = snap_status(status[j], lower[j], upper[j]);
                x[j] = nonbasic_value(status[j], lower[j], upper[j]);
            }
        }

        Self {
            problem,
            opts,
            n,
            m,
            col_start,
            col_row,
            col_val,
            col_key,
            b,
            lower,
            upper,
            cost,
            status,
            pos_of: vec![NONE; total],
            basis: Vec::new(),
            x,
            factor: BasisFactor::factorize(0, std::iter::empty()).factor,
            iterations: 0,
            bland: opts.pivot_rule == PivotRule::Bland,
            degenerate_run: 0,
            weights: vec![1.0; total],
            rho: Vec::new(),
            unit: Vec::new(),
            alpha: Vec::new(),
            y: Vec::new(),
            cb: Vec::new(),
        }
    }

    fn column(&self, j: usize) -> (&[usize], &[f64]) {
        let r = self.col_start[j]..self.col_start[j + 1];
        (&self.col_row[r.clone()], &self.col_val[r])
    }

    fn column_pairs(&self, j: usize) -> Vec<(usize, f64)> {
        let (rows, vals) = self.column(j);
        rows.iter().copied().zip(vals.iter().copied()).collect()
    }

    /// Fresh factorization of the current basic set, repairing singular
    /// bases with row logicals, then recomputation of basic values.
    fn refactor(&mut self) {
        let mut candidates: Vec<usize> = (0..self.n + self.m)
            .filter(|&j| self.status[j] == VarStatus::Basic)
            .collect();
        candidates.sort_by_key(|&j| (self.col_key[j], j));
        let cols: Vec<Vec<(usize, f64)>> = candidates.iter().map(|&j| self.column_pairs(j)).collect();
        let fz = BasisFactor::factorize(
            self.m,
            candidates.iter().zip(&cols).map(|(&j, c)| (j, c.as_slice())),
        );
        for &j in &fz.rejected {
            self.status[j] = nearest_bound_status(self.x[j], self.lower[j], self.upper[j]);
            self.x[j] = nonbasic_value(self.status[j], self.lower[j], self.upper[j]);
        }
        self.pos_of.iter_mut().for_each(|p| *p = NONE);
        self.basis.clear();
        for (pos, slot) in fz.slots.iter().enumerate() {
            let j = match *slot {
                Slot::Candidate(j) => j,
                Slot::Logical(r) => self.n + r,
            };
            self.status[j] = VarStatus::Basic;
            self.pos_of[j] = pos;
            self.basis.push(j);
        }
        self.factor = fz.factor;
        self.recompute_basic_values();
    }

    fn recompute_basic_values(&mut self) {
        let mut rhs = self.b.clone();
        for j in 0..self.n + self.m {
            if self.status[j] != VarStatus::Basic && self.x[j] != 0.0 {
                let xj = self.x[j];
                let (rows, vals) = self.column(j);
                for (&i, &v) in rows.iter().zip(vals) {
                    rhs[i] -= v * xj;
                }
            }
        }
        let mut xb = Vec::new();
        self.factor.ftran_dense(&rhs, &mut xb);
        for (pos, &j) in self.basis.iter().enumerate() {
            self.x[j] = xb[pos];
        }
    }

    fn infeasibility(&self, j: usize) -> f64 {
        let tol = self.opts.tol;
        if self.x[j] < self.lower[j] - tol {
            -1.0
        } else if self.x[j] > self.upper[j] + tol {
            1.0
        } else {
            0.0
        }
    }

    fn run(&mut self) -> Result<LpSolution, LpError> {
        self.refactor();
        let mut confirmations = 0;
        loop {
            if self.iterations >= self.opts.max_iter {
                return Ok(self.finish(LpStatus::IterationLimit));
            }
            if self.factor.num_updates() >= self.opts.refactor_interval {
                self.refactor();
            }
            let phase = if self.basis.iter().any(|&j| self.infeasibility(j) != 0.0) {
                Phase::One
            } else {
                Phase::Two
            };
            self.price(phase);
            let Some((q, dir)) = self.choose_entering(phase) else {
                // confirm against a fresh factorization before stopping
                if self.factor.num_updates() > 0 && confirmations < 3 {
                    confirmations += 1;
                    self.refactor();
                    continue;
                }
                return Ok(match phase {
                    Phase::One => self.finish(LpStatus::Infeasible),
                    Phase::Two => self.finish(LpStatus::Optimal),
                });
            };
            let (rows, vals) = self.column(q);
            let col: Vec<(usize, f64)> = rows.iter().copied().zip(vals.iter().copied()).collect();
            let mut alpha = std::mem::take(&mut self.alpha);
            self.factor.ftran_sparse(&col, &mut alpha);
            let step = self.ratio_test(q, dir, &alpha);
            match step {
                Step::Unbounded => {
                    self.alpha = alpha;
                    if phase == Phase::One {
                        return Err(LpError::Numerical(
                            "phase-1 direction without a blocking variable".into(),
                        ));
                    }
                    return Ok(self.finish(LpStatus::Unbounded));
                }
                Step::Flip { theta } => {
                    self.apply_move(q, dir, theta, &alpha);
                    self.status[q] = match self.status[q] {
                        VarStatus::AtLower => VarStatus::AtUpper,
                        _ => VarStatus::AtLower,
                    };
                    self.x[q] = nonbasic_value(self.status[q], self.lower[q], self.upper[q]);
                    self.note_progress(theta);
                }
                Step::Pivot { pos, theta, leave_at } => {
                    if self.opts.pivot_rule == PivotRule::Devex {
                        self.update_weights(q, pos, &alpha);
                    }
                    self.apply_move(q, dir, theta, &alpha);
                    let leaving = self.basis[pos];
                    self.status[leaving] = leave_at;
                    self.x[leaving] = nonbasic_value(leave_at, self.lower[leaving], self.upper[leaving]);
                    self.pos_of[leaving] = NONE;
                    self.status[q] = VarStatus::Basic;
                    self.pos_of[q] = pos;
                    self.basis[pos] = q;
                    self.factor.push_update(pos, &alpha);
                    self.note_progress(theta);
                }
            }
            self.alpha = alpha;
            self.iterations += 1;
            confirmations = 0;
        }
    }

    fn note_progress(&mut self, theta: f64) {
        if theta <= 1e-12 {
            self.degenerate_run += 1;
            if self.degenerate_run >= self.opts.degenerate_limit {
                self.bland = true;
            }
        } else {
            self.degenerate_run = 0;
            self.bland = self.opts.pivot_rule == PivotRule::Bland;
        }
    }

    /// Devex update from the pivot row `e_posᵀ B⁻¹ A`.
    fn update_weights(&mut self, q: usize, pos: usize, alpha: &[f64]) {
        let mut unit = std::mem::take(&mut self.unit);
        unit.clear();
        unit.resize(self.m, 0.0);
        unit[pos] = 1.0;
        let mut rho = std::mem::take(&mut self.rho);
        self.factor.btran(&unit, &mut rho);
        let apq = alpha[pos];
        let wq = self.weights[q];
        for j in 0..self.n + self.m {
            if self.status[j] == VarStatus::Basic || j == q {
                continue;
            }
            let (rows, vals) = self.column(j);
            let arj: f64 = rows.iter().zip(vals).map(|(&i, &v)| rho[i] * v).sum();
            if arj != 0.0 {
                let ratio = arj / apq;
                let w = ratio * ratio * wq;
                if w > self.weights[j] {
                    self.weights[j] = w;
                }
            }
        }
        let leaving = self.basis[pos];
        self.weights[leaving] = (wq / (apq * apq)).max(1.0);
        // restart the reference framework once weights drift too far
        if self.weights[leaving] > 1e6 {
            self.weights.iter_mut().for_each(|w| *w = 1.0);
        }
        self.unit = unit;
        self.rho = rho;
    }

    fn apply_move(&mut self, q: usize, dir: f64, theta: f64, alpha: &[f64]) {
        if theta == 0.0 {
            return;
        }
        self.x[q] += dir * theta;
        for (pos, &j) in self.basis.iter().enumerate() {
            let a = alpha[pos];
            if a != 0.0 {
                self.x[j] -= dir * theta * a;
            }
        }
    }

    /// Simplex multipliers for the phase objective, stored in `self.y`.
    fn price(&mut self, phase: Phase) {
        let mut cb = std::mem::take(&mut self.cb);
        cb.clear();
        for &j in &self.basis {
            cb.push(match phase {
                Phase::One => self.infeasibility(j),
                Phase::Two => self.cost[j],
            });
        }
        let mut y = std::mem::take(&mut self.y);
        self.factor.btran(&cb, &mut y);
        self.y = y;
        self.cb = cb;
    }

    fn reduced_cost(&self, j: usize, phase: Phase) -> f64 {
        let (rows, vals) = self.column(j);
        let dot: f64 = rows.iter().zip(vals).map(|(&i, &v)| self.y[i] * v).sum();
        match phase {
            Phase::One => -dot,
            Phase::Two => self.cost[j] - dot,
        }
    }

    fn choose_entering(&self, phase: Phase) -> Option<(usize, f64)> {
        let tol = self.opts.tol;
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.n + self.m {
            let dir = match self.status[j] {
                VarStatus::Basic => continue,
                _ if self.lower[j] == self.upper[j] => continue,
                VarStatus::AtLower => {
                    let d = self.reduced_cost(j, phase);
                    if d < -tol {
                        Some((1.0, -d))
                    } else {
                        None
                    }
                }
                VarStatus::AtUpper => {
                    let d = self.reduced_cost(j, phase);
                    if d > tol {
                        Some((-1.0, d))
                    } else {
                        None
                    }
                }
                VarStatus::Free => {
                    let d = self.reduced_cost(j, phase);
                    if d < -tol {
                        Some((1.0, -d))
                    } else if d > tol {
                        Some((-1.0, d))
                    } else {
                        None
                    }
                }
            };
            if let Some((dir, score)) = dir {
                if self.bland {
                    return Some((j, dir));
                }
                let score = match self.opts.pivot_rule {
                    PivotRule::Devex => score * score / self.weights[j],
                    _ => score,
                };
                if best.is_none_or(|(_, _, s)| score > s) {
                    best = Some((j, dir, score));
                }
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    /// Two-pass (Harris) ratio test over the basic variables.
    fn ratio_test(&self, q: usize, dir: f64, alpha: &[f64]) -> Step {
        let tol = self.opts.tol;
        let range = self.upper[q] - self.lower[q];

        // (position, exact step, relaxed step, leaving status)
        let mut blocks: Vec<(usize, f64, f64, VarStatus)> = Vec::new();
        for (pos, &j) in self.basis.iter().enumerate() {
            let a = alpha[pos];
            if a.abs() < PIVOT_TOL {
                continue;
            }
            let rate = -dir * a;
            let xj = self.x[j];
            let (l, u) = (self.lower[j], self.upper[j]);
            let target = if rate < 0.0 {
                if xj > u + tol {
                    Some((u, VarStatus::AtUpper))
                } else if xj >= l - tol && l.is_finite() {
                    Some((l, VarStatus::AtLower))
                } else {
                    None
                }
            } else if xj < l - tol {
                Some((l, VarStatus::AtLower))
            } else if xj <= u + tol && u.is_finite() {
                Some((u, VarStatus::AtUpper))
            } else {
                None
            };
            if let Some((bound, leave_at)) = target {
                // signed distance still to travel; a variable already past
                // the bound gets no extra slack beyond the tolerance band
                let gap = if rate < 0.0 { xj - bound } else { bound - xj };
                let exact = gap.max(0.0) / rate.abs();
                let relaxed = (gap + tol).max(0.0) / rate.abs();
                blocks.push((pos, exact, relaxed, leave_at));
            }
        }

        let theta_max = blocks.iter().map(|b| b.2).fold(f64::INFINITY, f64::min);
        if range.is_finite() && range <= theta_max {
            return Step::Flip { theta: range };
        }
        if theta_max == f64::INFINITY {
            return Step::Unbounded;
        }
        let mut chosen: Option<(usize, f64, VarStatus)> = None;
        let mut chosen_key = (f64::NEG_INFINITY, NONE);
        for &(pos, exact, _, leave_at) in &blocks {
            if exact > theta_max {
                continue;
            }
            let var = self.basis[pos];
            let key = if self.bland {
                (0.0, var)
            } else {
                (alpha[pos].abs(), var)
            };
            let better = if self.bland {
                key.1 < chosen_key.1
            } else {
                key.0 > chosen_key.0 || (key.0 == chosen_key.0 && key.1 < chosen_key.1)
            };
            if chosen.is_none() || better {
                chosen = Some((pos, exact, leave_at));
                chosen_key = key;
            }
        }
        let (pos, theta, leave_at) = chosen.expect("a block at or below theta_max exists");
        Step::Pivot { pos, theta, leave_at }
    }

    fn finish(&mut self, status: LpStatus) -> LpSolution {
        let x: Vec<f64> = self.x[..self.n].to_vec();
        let objective = self.problem.objective_value(&x);
        LpSolution {
            x,
            objective,
            status,
            iterations: self.iterations,
            basis: Basis {
                structural: self.status[..self.n].to_vec(),
                logical: self.status[self.n..].to_vec(),
            },
        }
    }
}

enum Step {
    Unbounded,
    Flip { theta: f64 },
    Pivot { pos: usize, theta: f64, leave_at: VarStatus },
}

fn snap_status(s: VarStatus, l: f64, u: f64) -> VarStatus {
    match s {
        VarStatus::AtLower if l.is_finite() => VarStatus::AtLower,
        VarStatus::AtUpper if u.is_finite() => VarStatus::AtUpper,
        _ if l.is_finite() => VarStatus::AtLower,
        _ if u.is_finite() => VarStatus::AtUpper,
        _ => VarStatus::Free,
    }
}

fn nearest_bound_status(x: f64, l: f64, u: f64) -> VarStatus {
    match (l.is_finite(), u.is_finite()) {
        (true, true) => {
            if (x - l).abs() <= (u - x).abs() {
                VarStatus::AtLower
            } else {
                VarStatus::AtUpper
            }
        }
        (true, false) => VarStatus::AtLower,
        (false, true) => VarStatus::AtUpper,
        (false, false) => VarStatus::Free,
    }
}

fn nonbasic_value(s: VarStatus, l: f64, u: f64) -> f64 {
    match s {
        VarStatus::AtLower => l,
        VarStatus::AtUpper => u,
        _ => 0.0,
    }
}
