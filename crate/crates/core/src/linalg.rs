//! Banded solvers, symmetric tridiagonal eigenvalues and restarted GMRES.

use crate::error::{Error, Result};

/// Solve a general tridiagonal system with partial pivoting.
///
/// `sub[i]` couples row `i + 1` to column `i`, `sup[i]` couples row `i` to `i + 1`.
pub fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    assert!(sub.len() + 1 == n.max(1) && sup.len() + 1 == n.max(1) && rhs.len() == n);
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut d = diag.to_vec();
    let mut du = sup.to_vec();
    let mut dl = sub.to_vec();
    let mut du2 = vec![0.0; n.saturating_sub(2)];
    let mut b = rhs.to_vec();
    for i in 0..n - 1 {
        if d[i].abs() >= dl[i].abs() {
            if d[i] == 0.0 {
                return Err(Error::SingularJacobian("zero pivot in tridiagonal solve".into()));
            }
            let f = dl[i] / d[i];
            d[i + 1] -= f * du[i];
            b[i + 1] -= f * b[i];
            dl[i] = 0.0;
        } else {
            // swap rows i and i+1
            let f = d[i] / dl[i];
            d[i] = dl[i];
            let tmp = d[i + 1];
            d[i + 1] = du[i] - f * tmp;
            if i + 1 < n - 1 {
                du2[i] = du[i + 1];
                du[i + 1] = -f * du2[i];
            }
            du[i] = tmp;
            let tb = b[i];
            b[i] = b[i + 1];
            b[i + 1] = tb - f * b[i + 1];
        }
    }
    if d[n - 1] == 0.0 {
        return Err(Error::SingularJacobian("zero pivot in tridiagonal solve".into()));
    }
    let mut x = vec![0.0; n];
    x[n - 1] = b[n - 1] / d[n - 1];
    if n > 1 {
        x[n - 2] = (b[n - 2] - du[n - 2] * x[n - 1]) / d[n - 2];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        x[i] = (b[i] - du[i] * x[i + 1] - du2[i] * x[i + 2]) / d[i];
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularJacobian("non-finite tridiagonal solution".into()));
    }
    Ok(x)
}

/// Periodic tridiagonal system: row 0 couples to `n-1` via `low`, row `n-1` to `0` via `high`.
pub fn solve_cyclic_tridiagonal(
    sub: &[f64],
    diag: &[f64],
    sup: &[f64],
    low: f64,
    high: f64,
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let n = diag.len();
    if n < 3 {
        let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = diag[i];
        }
        if n == 2 {
            m[(0, 1)] = sup[0] + low;
            m[(1, 0)] = sub[0] + high;
        }
        let x = m
            .lu()
            .solve(&nalgebra::DVector::from_column_slice(rhs))
            .ok_or_else(|| Error::SingularJacobian("singular cyclic system".into()))?;
        return Ok(x.iter().copied().collect());
    }
    // Sherman-Morrison with u = (gamma, 0, ..., high), v = (1, 0, ..., low / gamma)
    let gamma = if diag[0] != 0.0 { -diag[0] } else { -1.0 };
    let mut d = diag.to_vec();
    d[0] -= gamma;
    d[n - 1] -= high * low / gamma;
    let y = solve_tridiagonal(sub, &d, sup, rhs)?;
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = high;
    let z = solve_tridiagonal(sub, &d, sup, &u)?;
    let vy = y[0] + low / gamma * y[n - 1];
    let vz = z[0] + low / gamma * z[n - 1];
    let denom = 1.0 + vz;
    if denom.abs() < 1e-300 {
        return Err(Error::SingularJacobian("singular cyclic system".into()));
    }
    let f = vy / denom;
    Ok(y.iter().zip(&z).map(|(a, b)| a - f * b).collect())
}

/// Symmetric tridiagonal matrix.
#[derive(Debug, Clone)]
pub struct SymTridiag {
    pub diag: Vec<f64>,
    /// `off[i]` couples `i` and `i + 1`
    pub off: Vec<f64>,
}

impl SymTridiag {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Self {
        assert_eq!(off.len() + 1, diag.len().max(1));
        Self { diag, off }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.off[i] * x[i + 1];
            }
            y[i] = s;
        }
    }

    /// Number of eigenvalues strictly below `x`.
    pub fn count_below(&self, x: f64) -> usize {
        let mut count = 0;
        let mut q = 1.0;
        for i in 0..self.len() {
            let e2 = if i > 0 { self.off[i - 1].powi(2) } else { 0.0 };
            q = self.diag[i] - x - if i > 0 { e2 / q } else { 0.0 };
            if q == 0.0 {
                q = -f64::EPSILON * (self.diag[i].abs() + x.abs()).max(f64::MIN_POSITIVE);
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn gershgorin(&self) -> (f64, f64) {
        let n = self.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = if i > 0 { self.off[i - 1].abs() } else { 0.0 }
                + if i + 1 < n { self.off[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    /// The `j`-th smallest eigenvalue (0-based) by Sturm bisection.
    pub fn eigenvalue(&self, j: usize) -> f64 {
        let (mut lo, mut hi) = self.gershgorin();
        let scale = lo.abs().max(hi.abs());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi || hi - lo <= 2.0 * f64::EPSILON * scale * 1e-3 {
                break;
            }
            if self.count_below(mid) > j {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn smallest_eigenvalues(&self, k: usize) -> Vec<f64> {
        (0..k.min(self.len())).map(|j| self.eigenvalue(j)).collect()
    }

    /// Eigenvector for an accurately known eigenvalue, by inverse iteration.
    pub fn eigenvector(&self, lambda: f64) -> Result<Vec<f64>> {
        let n = self.len();
        let (lo, hi) = self.gershgorin();
        let shift = lambda - 1e-13 * (lo.abs().max(hi.abs())).max(1.0);
        let d: Vec<f64> = self.diag.iter().map(|v| v - shift).collect();
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * ((i * 7919) % 13) as f64).collect();
        for _ in 0..4 {
            let y = solve_tridiagonal(&self.off, &d, &self.off, &x)?;
            let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            x = y.iter().map(|v| v / norm).collect();
        }
        Ok(x)
    }
}

/// Positive operator `A + zeta Q` with `A` a weighted path Laplacian.
///
/// `edge[i]` (length `m + 1`) is the weight between unknowns `i - 1` and `i`;
/// `edge[0]` and `edge[m]` tie the end unknowns to zero Dirichlet data.
/// Elimination tracks only positive quantities, so solves against positive
/// right-hand sides keep full relative accuracy however small the lowest
/// eigenvalue is.
#[derive(Debug, Clone)]
pub struct PathLaplacian {
    pub edge: Vec<f64>,
    pub mass: Vec<f64>,
    pub shift: f64,
}

impl PathLaplacian {
    fn factor(&self) -> (Vec<f64>, Vec<f64>) {
        let m = self.mass.len();
        // pivot_i = edge[i+1] + excess_i
        let mut excess = vec![0.0; m];
        let mut pivot = vec![0.0; m];
        let mut prev_excess = 0.0;
        for i in 0..m {
            let incoming = if i == 0 {
                self.edge[0]
            } else {
                let p = self.edge[i];
                p * prev_excess / (p + prev_excess)
            };
            excess[i] = incoming + self.shift * self.mass[i];
            pivot[i] = self.edge[i + 1] + excess[i];
            prev_excess = excess[i];
        }
        (pivot, excess)
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let m = self.mass.len();
        let (pivot, _) = self.factor();
        let mut y = rhs.to_vec();
        for i in 1..m {
            y[i] += self.edge[i] / pivot[i - 1] * y[i - 1];
        }
        let mut x = vec![0.0; m];
        x[m - 1] = y[m - 1] / pivot[m - 1];
        for i in (0..m - 1).rev() {
            x[i] = (y[i] + self.edge[i + 1] * x[i + 1]) / pivot[i];
        }
        x
    }

    /// Lowest eigenvalue of `A x = mu Q x` with its positive eigenvector.
    pub fn ground_state(&self, tol: f64) -> (f64, Vec<f64>) {
        let m = self.mass.len();
        let mut x = vec![1.0; m];
        let mut mu_inv = 0.0;
        for _ in 0..2000 {
            let qx: Vec<f64> = x.iter().zip(&self.mass).map(|(a, b)| a * b).collect();
            let y = self.solve(&qx);
            // Rayleigh quotient of the Q-symmetric inverse
            let num: f64 = y.iter().zip(&qx).map(|(a, b)| a * b).sum();
            let den: f64 = x.iter().zip(&qx).map(|(a, b)| a * b).sum();
            let next = num / den;
            let norm = y
                .iter()
                .zip(&self.mass)
                .map(|(a, b)| a * a * b)
                .sum::<f64>()
                .sqrt();
            x = y.iter().map(|v| v / norm).collect();
            let done = ((next - mu_inv) / next).abs() < tol;
            mu_inv = next;
            if done {
                break;
            }
        }
        (1.0 / mu_inv, x)
    }
}

/// Outcome of a GMRES solve.
#[derive(Debug, Clone, Copy)]
pub struct GmresInfo {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Right-preconditioned restarted GMRES for `A x = b`.
pub fn gmres<A, M>(
    mut apply_a: A,
    mut apply_m: M,
    b: &[f64],
    x0: Option<&[f64]>,
    rtol: f64,
    restart: usize,
    max_iter: usize,
) -> (Vec<f64>, GmresInfo)
where
    A: FnMut(&[f64], &mut [f64]),
    M: FnMut(&[f64], &mut [f64]),
{
    let n = b.len();
    let dot = |a: &[f64], c: &[f64]| a.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();
    let bnorm = dot(b, b).sqrt();
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    if bnorm == 0.0 {
        return (
            vec![0.0; n],
            GmresInfo {
                iterations: 0,
                residual: 0.0,
                converged: true,
            },
        );
    }
    let target = rtol * bnorm;
    let mut total = 0;
    let mut tmp = vec![0.0; n];
    let mut resid_norm;
    loop {
        apply_a(&x, &mut tmp);
        let r: Vec<f64> = b.iter().zip(&tmp).map(|(a, c)| a - c).collect();
        let beta = dot(&r, &r).sqrt();
        resid_norm = beta;
        if beta <= target || total >= max_iter {
            break;
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|a| a / beta).collect()];
        let mut z: Vec<Vec<f64>> = Vec::new();
        let mut hess = vec![vec![0.0; restart]; restart + 1];
        let (mut cs, mut sn) = (vec![0.0; restart], vec![0.0; restart]);
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut k = 0;
        while k < restart && total < max_iter {
            let mut zk = vec![0.0; n];
            apply_m(&v[k], &mut zk);
            let mut w = vec![0.0; n];
            apply_a(&zk, &mut w);
            z.push(zk);
            // modified Gram-Schmidt, twice
            for _ in 0..2 {
                for j in 0..=k {
                    let hj = dot(&w, &v[j]);
                    hess[j][k] += hj;
                    for (wi, vi) in w.iter_mut().zip(&v[j]) {
                        *wi -= hj * vi;
                    }
                }
            }
            let hn = dot(&w, &w).sqrt();
            hess[k + 1][k] = hn;
            for j in 0..k {
                let t = cs[j] * hess[j][k] + sn[j] * hess[j + 1][k];
                hess[j + 1][k] = -sn[j] * hess[j][k] + cs[j] * hess[j + 1][k];
                hess[j][k] = t;
            }
            let denom = (hess[k][k].powi(2) + hess[k + 1][k].powi(2)).sqrt();
            if denom == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = hess[k][k] / denom;
                sn[k] = hess[k + 1][k] / denom;
            }
            hess[k][k] = denom;
            hess[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            total += 1;
            k += 1;
            resid_norm = g[k].abs();
            if resid_norm <= target || hn == 0.0 {
                break;
            }
            v.push(w.iter().map(|a| a / hn).collect());
        }
        // back substitution
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= hess[i][j] * y[j];
            }
            y[i] = if hess[i][i] != 0.0 { s / hess[i][i] } else { 0.0 };
        }
        for (j, yj) in y.iter().enumerate() {
            for (xi, zi) in x.iter_mut().zip(&z[j]) {
                *xi += yj * zi;
            }
        }
        if resid_norm <= target {
            apply_a(&x, &mut tmp);
            resid_norm = b
                .iter()
                .zip(&tmp)
                .map(|(a, c)| (a - c).powi(2))
                .sum::<f64>()
                .sqrt();
            if resid_norm <= target * 10.0 {
                break;
            }
        }
        if total >= max_iter {
            break;
        }
    }
    (
        x,
        GmresInfo {
            iterations: total,
            residual: resid_norm / bnorm,
            converged: resid_norm <= 10.0 * target,
        },
    )
}
