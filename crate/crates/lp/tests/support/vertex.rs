//! Brute-force LP oracle: enumerates every basic solution of a small bounded
//! problem and returns the best feasible objective.

use rand::Rng;

pub struct DenseLp {
    pub c: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub a_ub: Vec<Vec<f64>>,
    pub b_ub: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Random bounded problem with a known interior-ish feasible point.
pub fn random_lp<R: Rng>(rng: &mut R, max_vars: usize, max_rows: usize) -> DenseLp {
    let n = rng.gen_range(1..=max_vars);
    let rows = rng.gen_range(0..=max_rows);
    let lower: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..0.0)).collect();
    let upper: Vec<f64> = lower.iter().map(|l| l + rng.gen_range(0.5..4.0)).collect();
    let x0: Vec<f64> = lower.iter().zip(&upper).map(|(l, u)| rng.gen_range(*l..*u)).collect();
    let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut lp = DenseLp {
        c,
        a_eq: vec![],
        b_eq: vec![],
        a_ub: vec![],
        b_ub: vec![],
        lower,
        upper,
    };
    for _ in 0..rows {
        let row: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(-2.0..2.0) })
            .collect();
        let ax: f64 = row.iter().zip(&x0).map(|(a, x)| a * x).sum();
        // keep equality rows rarer than the number of variables
        if lp.a_eq.len() + 1 < n && rng.gen_bool(0.25) {
            lp.a_eq.push(row);
            lp.b_eq.push(ax);
        } else {
            lp.a_ub.push(row);
            lp.b_ub.push(ax + rng.gen_range(0.0..1.0));
        }
    }
    lp
}

#[allow(clippy::needless_range_loop)]
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().partial_cmp(&a[j][k].abs()).unwrap())?;
        if a[p][k].abs() < 1e-10 {
            return None;
        }
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    Some(x)
}

fn feasible(lp: &DenseLp, x: &[f64], tol: f64) -> bool {
    let dot = |r: &[f64]| r.iter().zip(x).map(|(a, x)| a * x).sum::<f64>();
    lp.a_eq.iter().zip(&lp.b_eq).all(|(r, b)| (dot(r) - b).abs() <= tol)
        && lp.a_ub.iter().zip(&lp.b_ub).all(|(r, b)| dot(r) <= b + tol)
        && x.iter().zip(lp.lower.iter().zip(&lp.upper)).all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
}

/// Minimum objective over all vertices, or `None` when no vertex is feasible.
pub fn vertex_minimum(lp: &DenseLp) -> Option<f64> {
    let n = lp.c.len();
    // candidate hyperplanes beyond the mandatory equalities
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for (r, b) in lp.a_ub.iter().zip(&lp.b_ub) {
        planes.push((r.clone(), *b));
    }
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        planes.push((e.clone(), lp.lower[j]));
        planes.push((e, lp.upper[j]));
    }
    let k = n - lp.a_eq.len();
    let mut best: Option<f64> = None;
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let mut a: Vec<Vec<f64>> = lp.a_eq.clone();
        let mut b: Vec<f64> = lp.b_eq.clone();
        for &i in &idx {
            a.push(planes[i].0.clone());
            b.push(planes[i].1);
        }
        if let Some(x) = solve_square(a, b) {
            if feasible(lp, &x, 1e-9) {
                let obj: f64 = lp.c.iter().zip(&x).map(|(c, x)| c * x).sum();
                best = Some(best.map_or(obj, |b: f64| b.min(obj)));
            }
        }
        // next k-combination of planes
        let p = planes.len();
        let mut i = k;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < p - k + i {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
        if k == 0 {
            return best;
        }
    }
}
