//! Sparse LU factorization of a simplex basis with product-form updates.
//!
//! The factorization is left-looking: candidate columns are eliminated one at
//! a time against the `L` built so far, and each accepted column receives a
//! pivot row chosen by threshold partial pivoting. Columns that turn out to be
//! linearly dependent are rejected instead of failing the factorization, and
//! the caller fills the uncovered rows with their logical (slack) columns.

const NONE: usize = usize::MAX;

/// Relative threshold for accepting a pivot against the largest candidate.
const PIVOT_THRESHOLD: f64 = 0.1;
/// Columns whose largest remaining entry falls below this are dependent.
const SINGULAR_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
struct Eta {
    pos: usize,
    pivot: f64,
    others: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub(crate) struct BasisFactor {
    m: usize,
    /// step -> pivot row
    perm_row: Vec<usize>,
    /// row -> step
    pinv: Vec<usize>,
    // L multipliers per step, indexed by original row
    l_start: Vec<usize>,
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    // strictly-upper part of U per step, indexed by earlier step
    u_start: Vec<usize>,
    u_idx: Vec<usize>,
    u_val: Vec<f64>,
    diag: Vec<f64>,
    etas: Vec<Eta>,
    work: Vec<f64>,
}

/// Result of factorizing a candidate column set.
pub(crate) struct Factorization {
    pub factor: BasisFactor,
    /// Candidate tags in basis-position order. Rows no candidate could cover
    /// show up as `Slot::Logical(row)`.
    pub slots: Vec<Slot>,
    /// Candidates that were dependent (or surplus) and did not enter.
    pub rejected: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Slot {
    Candidate(usize),
    Logical(usize),
}

impl BasisFactor {
    fn empty(m: usize) -> Self {
        Self {
            m,
            perm_row: Vec::with_capacity(m),
            pinv: vec![NONE; m],
            l_start: vec![0],
            l_idx: Vec::new(),
            l_val: Vec::new(),
            u_start: vec![0],
            u_idx: Vec::new(),
            u_val: Vec::new(),
            diag: Vec::with_capacity(m),
            etas: Vec::new(),
            work: vec![0.0; m],
        }
    }

    /// Factorizes up to `m` of the given columns. `columns` yields
    /// `(tag, sparse column)` pairs in the preferred elimination order.
    pub fn factorize<'a, I>(m: usize, columns: I) -> Factorization
    where
        I: IntoIterator<Item = (usize, &'a [(usize, f64)])>,
    {
        let mut f = Self::empty(m);
        let mut slots = Vec::with_capacity(m);
        let mut rejected = Vec::new();
        let mut w = vec![0.0; m];
        let mut touched: Vec<usize> = Vec::new();
        let mut mark = vec![false; m];

        for (tag, col) in columns {
            if f.perm_row.len() == m {
                rejected.push(tag);
                continue;
            }
            let mut col_norm = 0.0f64;
            for &(r, v) in col {
                if !mark[r] {
                    mark[r] = true;
                    touched.push(r);
                }
                w[r] += v;
                col_norm = col_norm.max(v.abs());
            }
            // eliminate with the existing L columns in step order
            for k in 0..f.perm_row.len() {
                let r = f.perm_row[k];
                let xr = w[r];
                if xr == 0.0 {
                    continue;
                }
                for p in f.l_start[k]..f.l_start[k + 1] {
                    let i = f.l_idx[p];
                    if !mark[i] {
                        mark[i] = true;
                        touched.push(i);
                    }
                    w[i] -= f.l_val[p] * xr;
                }
            }
            let mut best = 0.0f64;
            for &r in &touched {
                if f.pinv[r] == NONE {
                    best = best.max(w[r].abs());
                }
            }
            if best <= SINGULAR_TOL * col_norm.max(1.0) {
                rejected.push(tag);
            } else {
                let threshold = PIVOT_THRESHOLD * best;
                let mut piv_row = NONE;
                for &r in &touched {
                    if f.pinv[r] == NONE && w[r].abs() >= threshold && r < piv_row {
                        piv_row = r;
                    }
                }
                let step = f.perm_row.len();
                let pivot = w[piv_row];
                touched.sort_unstable();
                for &r in &touched {
                    let v = w[r];
                    if v == 0.0 || r == piv_row {
                        continue;
                    }
                    if f.pinv[r] != NONE {
                        f.u_idx.push(f.pinv[r]);
                        f.u_val.push(v);
                    } else {
                        f.l_idx.push(r);
                        f.l_val.push(v / pivot);
                    }
                }
                f.u_start.push(f.u_idx.len());
                f.l_start.push(f.l_idx.len());
                f.diag.push(pivot);
                f.pinv[piv_row] = step;
                f.perm_row.push(piv_row);
                slots.push(Slot::Candidate(tag));
            }
            for &r in &touched {
                w[r] = 0.0;
                mark[r] = false;
            }
            touched.clear();
        }

        // cover the remaining rows with unit columns
        for r in 0..m {
            if f.pinv[r] == NONE {
                let step = f.perm_row.len();
                f.u_start.push(f.u_idx.len());
                f.l_start.push(f.l_idx.len());
                f.diag.push(1.0);
                f.pinv[r] = step;
                f.perm_row.push(r);
                slots.push(Slot::Logical(r));
            }
        }
        Factorization { factor: f, slots, rejected }
    }

    pub fn num_updates(&self) -> usize {
        self.etas.len()
    }

    /// Solves `B z = a` for a sparse `a` (row-indexed); `out` is
    /// position-indexed.
    pub fn ftran_sparse(&mut self, a: &[(usize, f64)], out: &mut Vec<f64>) {
        let mut w = std::mem::take(&mut self.work);
        w.iter_mut().for_each(|v| *v = 0.0);
        for &(r, v) in a {
            w[r] += v;
        }
        self.ftran_rows(&mut w, out);
        self.work = w;
    }

    /// Solves `B z = a` for a dense row-indexed `a`.
    pub fn ftran_dense(&mut self, a: &[f64], out: &mut Vec<f64>) {
        let mut w = std::mem::take(&mut self.work);
        w.copy_from_slice(a);
        self.ftran_rows(&mut w, out);
        self.work = w;
    }

    fn ftran_rows(&self, w: &mut [f64], out: &mut Vec<f64>) {
        let m = self.m;
        for k in 0..m {
            let r = self.perm_row[k];
            let xr = w[r];
            if xr == 0.0 {
                continue;
            }
            for p in self.l_start[k]..self.l_start[k + 1] {
                w[self.l_idx[p]] -= self.l_val[p] * xr;
            }
        }
        out.clear();
        out.extend(self.perm_row.iter().map(|&r| w[r]));
        for k in (0..m).rev() {
            let yk = out[k] / self.diag[k];
            out[k] = yk;
            if yk == 0.0 {
                continue;
            }
            for p in self.u_start[k]..self.u_start[k + 1] {
                out[self.u_idx[p]] -= self.u_val[p] * yk;
            }
        }
        for eta in &self.etas {
            let zr = out[eta.pos] / eta.pivot;
            out[eta.pos] = zr;
            if zr == 0.0 {
                continue;
            }
            for &(i, a) in &eta.others {
                out[i] -= a * zr;
            }
        }
    }

    /// Solves `Bᵀ y = c` for a position-indexed `c`; `out` is row-indexed.
    pub fn btran(&self, c: &[f64], out: &mut Vec<f64>) {
        let m = self.m;
        let mut g: Vec<f64> = c.to_vec();
        for eta in self.etas.iter().rev() {
            let mut s = g[eta.pos];
            for &(i, a) in &eta.others {
                s -= a * g[i];
            }
            g[eta.pos] = s / eta.pivot;
        }
        // Uᵀ h = g, forward over steps
        for k in 0..m {
            let mut s = g[k];
            for p in self.u_start[k]..self.u_start[k + 1] {
                s -= self.u_val[p] * g[self.u_idx[p]];
            }
            g[k] = s / self.diag[k];
        }
        out.clear();
        out.resize(m, 0.0);
        for k in 0..m {
            out[self.perm_row[k]] = g[k];
        }
        for k in (0..m).rev() {
            let r = self.perm_row[k];
            let mut s = out[r];
            for p in self.l_start[k]..self.l_start[k + 1] {
                s -= self.l_val[p] * out[self.l_idx[p]];
            }
            out[r] = s;
        }
    }

    /// Records the replacement of basis position `pos` by a column whose
    /// transformed representation is `alpha` (position-indexed).
    pub fn push_update(&mut self, pos: usize, alpha: &[f64]) {
        let others = alpha
            .iter()
            .enumerate()
            .filter(|&(i, a)| i != pos && *a != 0.0)
            .map(|(i, a)| (i, *a))
            .collect();
        self.etas.push(Eta { pos, pivot: alpha[pos], others });
    }
}
