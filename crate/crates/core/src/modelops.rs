//! Model linear operators around the profile.
//!
//! `L_zeta = -eps^2 d_t^2 + zeta + W''(u*(t/eps))/2` is discretized with the
//! three-point Laplacian. The potential is taken in the discrete-consistent form
//! `V_i = eps^2 (D^2 w*)_i / w*_i`, so the sampled `w*` is an exact discrete zero
//! mode away from the boundary and the discrete operator keeps the sign
//! structure of the continuum one (positive Dirichlet spectrum for `zeta >= 0`).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{solve_tridiagonal, PathLaplacian, SymTridiag};
use crate::norms::{scaled_norm_1d, scaled_norm_2d, WeightSpec};
use crate::profile::Profile;
use crate::quadrature::{cumulative_from, trapezoid};

/// Uniform grid `t_i = t0 + i h`, `i < n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid1D {
    pub t0: f64,
    pub h: f64,
    pub n: usize,
}

impl Grid1D {
    /// `n` nodes spanning `[a, b]`.
    pub fn span(a: f64, b: f64, n: usize) -> Self {
        Self {
            t0: a,
            h: (b - a) / (n - 1) as f64,
            n,
        }
    }

    /// Symmetric grid on `[-l, l]` with spacing at most `h_max` and a node at 0.
    pub fn symmetric(l: f64, h_max: f64) -> Self {
        let half = (l / h_max).ceil() as usize;
        Self::span(-l, l, 2 * half + 1)
    }

    pub fn node(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.h
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Boundary {
    /// zero values at both end nodes; unknowns are the interior nodes
    Dirichlet,
    /// one-sided decay `w_{ghost} = e^{-gamma h} w_end` at both ends; unknowns are all nodes
    Decay,
}

/// Discretized `-eps^2 d^2 + zeta + W''(u*(t/eps))/2`.
#[derive(Debug, Clone)]
pub struct Operator1D {
    pub grid: Grid1D,
    pub eps: f64,
    pub zeta: f64,
    pub boundary: Boundary,
    matrix: SymTridiag,
    /// `w*(t_i / eps)` on all nodes plus one ghost on each side
    ground: Vec<f64>,
    consistent: bool,
}

impl Operator1D {
    pub fn new(p: &Profile, grid: Grid1D, eps: f64, zeta: f64, boundary: Boundary) -> Result<Self> {
        if grid.n < 4 {
            return Err(Error::ResolutionError("need at least four nodes".into()));
        }
        let h = grid.h;
        let c = eps * eps / (h * h);
        // ground[k] = w*(t_{k-1}/eps), k = 0..n+2
        let ground: Vec<f64> = (0..grid.n + 2)
            .map(|k| p.eval((grid.t0 + (k as f64 - 1.0) * h) / eps).1)
            .collect();
        let consistent = ground.iter().all(|&w| w > 1e-150);
        let potential = |i: usize| -> f64 {
            if consistent {
                let (wm, w0, wp) = (ground[i], ground[i + 1], ground[i + 2]);
                c * ((wp - w0) + (wm - w0)) / w0
            } else {
                p.half_ddw(grid.node(i) / eps)
            }
        };
        let (lo, hi) = match boundary {
            Boundary::Dirichlet => (1, grid.n - 1),
            Boundary::Decay => (0, grid.n),
        };
        let mut diag: Vec<f64> = (lo..hi).map(|i| 2.0 * c + potential(i) + zeta).collect();
        if boundary == Boundary::Decay {
            let g = p.indicial().shifted(zeta);
            let rho_m = (-g.gamma_minus * h / eps).exp();
            let rho_p = (-g.gamma_plus * h / eps).exp();
            diag[0] -= c * rho_m;
            let last = diag.len() - 1;
            diag[last] -= c * rho_p;
        }
        let m = diag.len();
        let matrix = SymTridiag::new(diag, vec![-c; m - 1]);
        Ok(Self {
            grid,
            eps,
            zeta,
            boundary,
            matrix,
            ground,
            consistent,
        })
    }

    pub fn matrix(&self) -> &SymTridiag {
        &self.matrix
    }

    /// `w*(t_i / eps)` at the grid nodes.
    pub fn ground_samples(&self) -> &[f64] {
        &self.ground[1..self.grid.n + 1]
    }

    /// Index range of grid nodes carried as unknowns.
    pub fn unknown_range(&self) -> std::ops::Range<usize> {
        match self.boundary {
            Boundary::Dirichlet => 1..self.grid.n - 1,
            Boundary::Decay => 0..self.grid.n,
        }
    }

    /// Ground-state form `-(p g')' + zeta q g` with `p = w_i w_{i+1}`, `q = w_i^2`.
    fn path_form(&self) -> Option<PathLaplacian> {
        if !self.consistent || self.boundary != Boundary::Dirichlet {
            return None;
        }
        let n = self.grid.n;
        let c = self.eps * self.eps / (self.grid.h * self.grid.h);
        let w = self.ground_samples();
        let edge: Vec<f64> = (0..n - 1).map(|i| c * w[i] * w[i + 1]).collect();
        let mass: Vec<f64> = (1..n - 1).map(|i| w[i] * w[i]).collect();
        if edge.iter().chain(&mass).any(|&v| !(v > 0.0)) {
            return None;
        }
        Some(PathLaplacian {
            edge,
            mass,
            shift: self.zeta,
        })
    }

    /// Apply to node values (ignoring the entries at Dirichlet end nodes).
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let r = self.unknown_range();
        let xi = &x[r.clone()];
        let mut y = vec![0.0; xi.len()];
        self.matrix.apply(xi, &mut y);
        let mut out = vec![0.0; self.grid.n];
        out[r].copy_from_slice(&y);
        out
    }

    /// Solve on the unknown nodes; Dirichlet end values are zero.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let r = self.unknown_range();
        let off = &self.matrix.off;
        let x = solve_tridiagonal(off, &self.matrix.diag, off, &rhs[r.clone()])?;
        let mut out = vec![0.0; self.grid.n];
        out[r].copy_from_slice(&x);
        Ok(out)
    }
}

/// Smallest Dirichlet eigenvalue of `L_zeta` with its eigenvector on the nodes.
pub fn dirichlet_ground_state(op: &Operator1D) -> Result<(f64, Vec<f64>)> {
    if op.boundary != Boundary::Dirichlet {
        return Err(Error::InvalidArgument("Dirichlet boundary required".into()));
    }
    let n = op.grid.n;
    let (mu, interior) = match (op.zeta >= 0.0, op.path_form()) {
        (true, Some(path)) => {
            let (mu, g) = path.ground_state(1e-15);
            let w = op.ground_samples();
            let v: Vec<f64> = g.iter().enumerate().map(|(k, gk)| gk * w[k + 1]).collect();
            (mu, v)
        }
        _ => {
            let mu = op.matrix.eigenvalue(0);
            (mu, op.matrix.eigenvector(mu)?)
        }
    };
    let mut full = vec![0.0; n];
    full[1..n - 1].copy_from_slice(&interior);
    let norm = full.iter().map(|v| v * v).sum::<f64>().sqrt() * op.grid.h.sqrt();
    let sign = if full[n / 2] < 0.0 { -1.0 } else { 1.0 };
    full.iter_mut().for_each(|v| *v *= sign / norm);
    Ok((mu, full))
}

/// Smallest Dirichlet eigenvalue of `L_zeta`, `zeta >= 0`.
pub fn dirichlet_ground_eigenvalue(op: &Operator1D) -> Result<f64> {
    if op.zeta < 0.0 {
        return Err(Error::InvalidArgument("zeta must be nonnegative".into()));
    }
    Ok(dirichlet_ground_state(op)?.0)
}

/// First `k` Dirichlet eigenvalues by Sturm bisection.
pub fn dirichlet_eigenvalues(op: &Operator1D, k: usize) -> Vec<f64> {
    op.matrix.smallest_eigenvalues(k)
}

/// Which decaying solution of `L_zeta w = 0` to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    /// decays at `-inf`, normalized by `e^{-gamma_-(zeta) t} w -> 1`
    Minus,
    /// decays at `+inf`, normalized by `e^{gamma_+(zeta) t} w -> 1`
    Plus,
}

/// Samples of a homogeneous solution.
#[derive(Debug, Clone, Serialize)]
pub struct Shot {
    pub t: Vec<f64>,
    pub w: Vec<f64>,
    pub dw: Vec<f64>,
}

impl Shot {
    pub fn sign_changes(&self) -> usize {
        self.w
            .windows(2)
            .filter(|p| (p[0] > 0.0) != (p[1] > 0.0) || p[0] == 0.0)
            .count()
    }

    /// Cubic Hermite value and slope at `t`.
    pub fn at(&self, t: f64) -> (f64, f64) {
        let h = self.t[1] - self.t[0];
        let x = ((t - self.t[0]) / h).clamp(0.0, (self.t.len() - 1) as f64);
        let i = (x.floor() as usize).min(self.t.len() - 2);
        let s = x - i as f64;
        let s2 = s * s;
        let s3 = s2 * s;
        let (h00, h10, h01, h11) = (2.0 * s3 - 3.0 * s2 + 1.0, s3 - 2.0 * s2 + s, -2.0 * s3 + 3.0 * s2, s3 - s2);
        let w = h00 * self.w[i] + h10 * h * self.dw[i] + h01 * self.w[i + 1] + h11 * h * self.dw[i + 1];
        let (d00, d10, d01, d11) = (6.0 * s2 - 6.0 * s, 3.0 * s2 - 4.0 * s + 1.0, -6.0 * s2 + 6.0 * s, 3.0 * s2 - 2.0 * s);
        let dw = (d00 * self.w[i] + d10 * h * self.dw[i] + d01 * self.w[i + 1] + d11 * h * self.dw[i + 1]) / h;
        (w, dw)
    }
}

/// Integrate `w'' = (zeta + W''(u*)/2) w` across `[-T, T]` from the decaying end.
pub fn shoot_homogeneous(p: &Profile, zeta: f64, side: Side, t_span: f64, h: f64) -> Result<Shot> {
    if !(zeta > 0.0) {
        return Err(Error::InvalidArgument("zeta must be positive".into()));
    }
    let g = p.indicial().shifted(zeta);
    let exponent = (g.gamma_minus + g.gamma_plus) * t_span;
    if exponent > 700.0 {
        return Err(Error::OverflowGuard { exponent });
    }
    let steps = (2.0 * t_span / h).round() as usize;
    let h = 2.0 * t_span / steps as f64;
    let rhs = |t: f64, y: [f64; 2]| [y[1], (zeta + p.half_ddw(t)) * y[0]];
    let (t_start, mut y, dir) = match side {
        Side::Minus => {
            let w0 = (-g.gamma_minus * t_span).exp();
            (-t_span, [w0, g.gamma_minus * w0], 1.0)
        }
        Side::Plus => {
            let w0 = (-g.gamma_plus * t_span).exp();
            (t_span, [w0, -g.gamma_plus * w0], -1.0)
        }
    };
    let mut ts = vec![t_start];
    let mut ws = vec![y[0]];
    let mut dws = vec![y[1]];
    let mut t = t_start;
    let dt = dir * h;
    for _ in 0..steps {
        let k1 = rhs(t, y);
        let k2 = rhs(t + 0.5 * dt, [y[0] + 0.5 * dt * k1[0], y[1] + 0.5 * dt * k1[1]]);
        let k3 = rhs(t + 0.5 * dt, [y[0] + 0.5 * dt * k2[0], y[1] + 0.5 * dt * k2[1]]);
        let k4 = rhs(t + dt, [y[0] + dt * k3[0], y[1] + dt * k3[1]]);
        for c in 0..2 {
            y[c] += dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        }
        t = t_start + dir * h * (ts.len() as f64);
        ts.push(t);
        ws.push(y[0]);
        dws.push(y[1]);
    }
    if dir < 0.0 {
        ts.reverse();
        ws.reverse();
        dws.reverse();
    }
    Ok(Shot { t: ts, w: ws, dw: dws })
}

/// Wronskian `w^- (w^+)' - (w^-)' w^+` at several points.
#[derive(Debug, Clone, Serialize)]
pub struct WronskianReport {
    pub mean: f64,
    pub samples: Vec<(f64, f64)>,
    /// `(max - min) / |mean|`
    pub spread: f64,
}

pub fn wronskian(p: &Profile, zeta: f64, t_span: f64, h: f64) -> Result<WronskianReport> {
    let minus = shoot_homogeneous(p, zeta, Side::Minus, t_span, h)?;
    let plus = shoot_homogeneous(p, zeta, Side::Plus, t_span, h)?;
    let samples: Vec<(f64, f64)> = [-2.0, -1.0, 0.0, 1.0, 2.0]
        .iter()
        .map(|&t| {
            let (a, da) = minus.at(t);
            let (b, db) = plus.at(t);
            (t, a * db - da * b)
        })
        .collect();
    let mean = samples.iter().map(|s| s.1).sum::<f64>() / samples.len() as f64;
    let max = samples.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let min = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    Ok(WronskianReport {
        mean,
        samples,
        spread: (max - min) / mean.abs(),
    })
}

/// Solution of `L_0 w = f` orthogonal to `w*`.
#[derive(Debug, Clone, Serialize)]
pub struct Mode0Solution {
    pub w: Vec<f64>,
    pub alpha0: f64,
    /// `|phi_{-delta} w|_inf / |phi_{-delta} f|_inf`
    pub bound_ratio: f64,
}

/// `int f w*` on a uniform grid (trapezoid, spectrally accurate for decaying data).
pub fn pair_with_ground(f: &[f64], ground: &[f64], h: f64) -> f64 {
    let prod: Vec<f64> = f.iter().zip(ground).map(|(a, b)| a * b).collect();
    trapezoid(&prod, h)
}

/// Variation-of-constants solve of `L_0 w = f` on a uniform stretched grid.
pub fn mode0_solve(p: &Profile, grid: Grid1D, f0: &[f64], delta: WeightSpec) -> Result<Mode0Solution> {
    let g = p.indicial();
    if !(delta.delta_minus.abs() < g.gamma_minus && delta.delta_plus.abs() < g.gamma_plus) {
        return Err(Error::InvalidArgument(format!(
            "weight rates {delta:?} outside (-gamma, gamma)"
        )));
    }
    let n = grid.n;
    if f0.len() != n {
        return Err(Error::InvalidArgument("f0 length does not match the grid".into()));
    }
    let h = grid.h;
    let ts = grid.nodes();
    let ground: Vec<f64> = ts.iter().map(|&t| p.eval(t).1).collect();
    if ground.iter().any(|&w| !(w > 1e-150)) {
        return Err(Error::ResolutionError("grid extends past the w* underflow range".into()));
    }
    let fnorm = f0.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let compat = pair_with_ground(f0, &ground, h);
    let wnorm = ground.iter().fold(0.0_f64, |m, v| m.max(*v));
    if compat.abs() > 1e-10 * fnorm.max(f64::MIN_POSITIVE) * wnorm.max(1.0) {
        return Err(Error::CompatibilityViolation {
            residual: compat.abs(),
            tolerance: 1e-10 * fnorm,
        });
    }
    if fnorm == 0.0 {
        return Ok(Mode0Solution {
            w: vec![0.0; n],
            alpha0: 0.0,
            bound_ratio: 0.0,
        });
    }
    let wf: Vec<f64> = f0.iter().zip(&ground).map(|(a, b)| a * b).collect();
    // (w*^2 v')' = -w* f with w = w* v.
    // left-anchored and right-anchored running integrals, each exact in relative terms on its side
    let from_left = cumulative_from(&wf, h, 0);
    let from_right = cumulative_from(&wf, h, n - 1);
    let centre = (0..n)
        .max_by(|&a, &b| ground[a].partial_cmp(&ground[b]).unwrap())
        .unwrap();
    let inner: Vec<f64> = (0..n)
        .map(|i| if i <= centre { from_left[i] } else { from_right[i] })
        .collect();
    let integrand: Vec<f64> = inner
        .iter()
        .zip(&ground)
        .map(|(a, w)| -a / (w * w))
        .collect();
    let j = cumulative_from(&integrand, h, centre);
    let base: Vec<f64> = j.iter().zip(&ground).map(|(a, w)| a * w).collect();
    let alpha0 = -pair_with_ground(&base, &ground, h)
        / pair_with_ground(&ground, &ground, h);
    let w: Vec<f64> = base
        .iter()
        .zip(&ground)
        .map(|(b, g)| b + alpha0 * g)
        .collect();
    let neg = delta.negated();
    let wt: Vec<f64> = ts.iter().map(|&t| neg.weight(t)).collect();
    let num = w.iter().zip(&wt).map(|(a, b)| (a * b).abs()).fold(0.0, f64::max);
    let den = f0.iter().zip(&wt).map(|(a, b)| (a * b).abs()).fold(0.0, f64::max);
    Ok(Mode0Solution {
        w,
        alpha0,
        bound_ratio: num / den,
    })
}

/// Spectrum of `-eps^2 d^2 + W''(u*(t/eps))/2` on `[-1, 1]` with Dirichlet ends.
#[derive(Debug, Clone, Serialize)]
pub struct EpsSpectrum {
    pub eps: f64,
    pub eigenvalues: Vec<f64>,
    pub grid: Grid1D,
    /// ground eigenfunction normalized to 1 at `t = 0`
    pub ground: Vec<f64>,
}

pub fn eps_spectrum(p: &Profile, eps: f64, k: usize, points_per_eps: usize) -> Result<EpsSpectrum> {
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(Error::InvalidArgument(format!("eps = {eps} outside (0, 0.5]")));
    }
    if points_per_eps < 40 {
        return Err(Error::ResolutionError(format!(
            "{points_per_eps} points per eps-width, need at least 40"
        )));
    }
    let gmax = p.indicial().gamma_minus.max(p.indicial().gamma_plus);
    if 2.0 * gmax / eps > 700.0 {
        return Err(Error::ResolutionError(format!(
            "eps = {eps} is too small: w*(1/eps)^2 underflows"
        )));
    }
    let grid = Grid1D::symmetric(1.0, eps / points_per_eps as f64);
    let op = Operator1D::new(p, grid, eps, 0.0, Boundary::Dirichlet)?;
    let (mu0, mut ground) = dirichlet_ground_state(&op)?;
    let mid = ground[grid.n / 2];
    ground.iter_mut().for_each(|v| *v /= mid);
    let mut eigenvalues = vec![mu0];
    for j in 1..k {
        eigenvalues.push(op.matrix().eigenvalue(j));
    }
    Ok(EpsSpectrum {
        eps,
        eigenvalues,
        grid,
        ground,
    })
}

/// Cross-section of a product `R x N` with closed-form discrete eigendata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum CrossSectionKind {
    /// periodic, `n` uniform nodes
    Circle { length: f64 },
    /// cell-centred nodes with zero-flux ends
    NeumannInterval { length: f64 },
}

#[derive(Debug, Clone)]
pub struct CrossSection {
    pub kind: CrossSectionKind,
    pub n: usize,
    pub h: f64,
    /// `(lambda_j, phi_j)` in nondecreasing order, orthonormal under `h sum`
    pub eigenpairs: Vec<(f64, Vec<f64>)>,
}

impl CrossSection {
    pub fn new(kind: CrossSectionKind, n: usize) -> Self {
        use std::f64::consts::PI;
        let mut pairs = Vec::new();
        let (h, length) = match kind {
            CrossSectionKind::Circle { length } => (length / n as f64, length),
            CrossSectionKind::NeumannInterval { length } => (length / n as f64, length),
        };
        let norm = |v: Vec<f64>| {
            let s = (v.iter().map(|x| x * x).sum::<f64>() * h).sqrt();
            v.into_iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        match kind {
            CrossSectionKind::Circle { .. } => {
                pairs.push((0.0, vec![1.0 / length.sqrt(); n]));
                for k in 1..=n / 2 {
                    let lam = 4.0 / (h * h) * (PI * k as f64 / n as f64).sin().powi(2);
                    let c: Vec<f64> = (0..n).map(|j| (2.0 * PI * (k * j) as f64 / n as f64).cos()).collect();
                    pairs.push((lam, norm(c)));
                    if 2 * k != n {
                        let s: Vec<f64> = (0..n).map(|j| (2.0 * PI * (k * j) as f64 / n as f64).sin()).collect();
                        pairs.push((lam, norm(s)));
                    }
                }
            }
            CrossSectionKind::NeumannInterval { .. } => {
                for k in 0..n {
                    let lam = 4.0 / (h * h) * (PI * k as f64 / (2 * n) as f64).sin().powi(2);
                    let c: Vec<f64> = (0..n)
                        .map(|j| (PI * k as f64 * (j as f64 + 0.5) / n as f64).cos())
                        .collect();
                    pairs.push((lam, norm(c)));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        Self {
            kind,
            n,
            h,
            eigenpairs: pairs,
        }
    }

    /// `-Delta_h` applied to node values.
    pub fn neg_laplacian(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n;
        let h2 = self.h * self.h;
        (0..n)
            .map(|j| match self.kind {
                CrossSectionKind::Circle { .. } => {
                    (2.0 * v[j] - v[(j + 1) % n] - v[(j + n - 1) % n]) / h2
                }
                CrossSectionKind::NeumannInterval { .. } => {
                    let left = if j > 0 { v[j] - v[j - 1] } else { 0.0 };
                    let right = if j + 1 < n { v[j] - v[j + 1] } else { 0.0 };
                    (left + right) / h2
                }
            })
            .collect()
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self.kind, CrossSectionKind::Circle { .. })
    }
}

/// Result of a product-domain solve, values laid out as `w[i * n_y + j]`.
#[derive(Debug, Clone, Serialize)]
pub struct ProductSolution {
    pub w: Vec<f64>,
    /// largest `|int w(., y) w*(./eps) dt|` over cross-section nodes, relative to `|w|_2 |w*|_2`
    pub orthogonality: f64,
    /// `|w|_{C^{2,a}_eps, -delta} / |f|_{C^{0,a}_eps, -delta}`
    pub norm_ratio: f64,
}

/// The discrete product operator `L_eps + eps^2 (-Delta_y)` applied to `g`.
pub fn product_apply(p: &Profile, cross: &CrossSection, grid: Grid1D, eps: f64, g: &[f64]) -> Result<Vec<f64>> {
    let op = Operator1D::new(p, grid, eps, 0.0, Boundary::Dirichlet)?;
    let (nt, ny) = (grid.n, cross.n);
    let mut out = vec![0.0; nt * ny];
    for j in 0..ny {
        let col: Vec<f64> = (0..nt).map(|i| g[i * ny + j]).collect();
        let y = op.apply(&col);
        for i in 0..nt {
            out[i * ny + j] = y[i];
        }
    }
    for i in 1..nt - 1 {
        let row = &g[i * ny..(i + 1) * ny];
        let lap = cross.neg_laplacian(row);
        for j in 0..ny {
            out[i * ny + j] += eps * eps * lap[j];
        }
    }
    Ok(out)
}

fn to_modes(cross: &CrossSection, nt: usize, f: &[f64]) -> Vec<Vec<f64>> {
    let ny = cross.n;
    cross
        .eigenpairs
        .iter()
        .map(|(_, phi)| {
            (0..nt)
                .map(|i| (0..ny).map(|j| f[i * ny + j] * phi[j]).sum::<f64>() * cross.h)
                .collect()
        })
        .collect()
}

fn from_modes(cross: &CrossSection, nt: usize, modes: &[Vec<f64>]) -> Vec<f64> {
    let ny = cross.n;
    let mut out = vec![0.0; nt * ny];
    for ((_, phi), wk) in cross.eigenpairs.iter().zip(modes) {
        for i in 0..nt {
            if wk[i] == 0.0 {
                continue;
            }
            for j in 0..ny {
                out[i * ny + j] += wk[i] * phi[j];
            }
        }
    }
    out
}

fn solve_modes(
    p: &Profile,
    cross: &CrossSection,
    grid: Grid1D,
    eps: f64,
    modes: Vec<Vec<f64>>,
    delta: WeightSpec,
) -> Result<Vec<Vec<f64>>> {
    use rayon::prelude::*;
    // modes at roundoff level relative to the data carry no information
    let scale = modes
        .iter()
        .flatten()
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    cross
        .eigenpairs
        .par_iter()
        .zip(modes.into_par_iter())
        .map(|((lam, _), fk)| {
            if fk.iter().all(|v| v.abs() <= 1e-13 * scale) {
                Ok(vec![0.0; fk.len()])
            } else if *lam > 1e-12 {
                let op = Operator1D::new(p, grid, eps, eps * eps * lam, Boundary::Dirichlet)?;
                op.solve(&fk)
            } else {
                let stretched = Grid1D {
                    t0: grid.t0 / eps,
                    h: grid.h / eps,
                    n: grid.n,
                };
                Ok(mode0_solve(p, stretched, &fk, delta)?.w)
            }
        })
        .collect()
}

fn fiber_orthogonality(w: &[f64], ground: &[f64], nt: usize, ny: usize, h: f64) -> f64 {
    (0..ny)
        .map(|j| {
            let col: Vec<f64> = (0..nt).map(|i| w[i * ny + j]).collect();
            pair_with_ground(&col, ground, h).abs()
        })
        .fold(0.0, f64::max)
}

/// Solve `L_eps w = Pi^0 f` on `[-L, L] x N` mode by mode.
pub fn product_solve(
    p: &Profile,
    cross: &CrossSection,
    grid: Grid1D,
    f: &[f64],
    delta: WeightSpec,
    eps: f64,
) -> Result<ProductSolution> {
    let g = p.indicial();
    if !(delta.delta_minus > -g.gamma_minus && delta.delta_minus <= 0.0 && delta.delta_plus > -g.gamma_plus && delta.delta_plus <= 0.0) {
        return Err(Error::InvalidArgument(format!("weight rates {delta:?} outside (-gamma, 0]")));
    }
    if grid.h > eps / 4.0 {
        return Err(Error::ResolutionError(format!(
            "spacing {} does not resolve eps = {eps}",
            grid.h
        )));
    }
    let (nt, ny) = (grid.n, cross.n);
    let ground: Vec<f64> = grid.nodes().iter().map(|&t| p.eval(t / eps).1).collect();
    let gg = pair_with_ground(&ground, &ground, grid.h);
    let mut modes = to_modes(cross, nt, f);
    for fk in modes.iter_mut() {
        let c = pair_with_ground(fk, &ground, grid.h) / gg;
        for (v, e) in fk.iter_mut().zip(&ground) {
            *v -= c * e;
        }
    }
    let projected = from_modes(cross, nt, &modes);
    let solved = solve_modes(p, cross, grid, eps, modes, delta)?;
    let w = from_modes(cross, nt, &solved);
    let wl2 = (w.iter().map(|v| v * v).sum::<f64>() * grid.h * cross.h).sqrt();
    let orthogonality = if wl2 > 0.0 {
        fiber_orthogonality(&w, &ground, nt, ny, grid.h) / (wl2 * gg.sqrt())
    } else {
        0.0
    };
    let neg = delta.negated();
    let wt: Vec<f64> = grid.nodes().iter().map(|&t| neg.weight(t / eps)).collect();
    let wn = scaled_norm_2d(&w, nt, ny, grid.h, cross.h, eps, 2, &wt, cross.is_periodic());
    let fn_ = scaled_norm_2d(&projected, nt, ny, grid.h, cross.h, eps, 0, &wt, cross.is_periodic());
    Ok(ProductSolution {
        w,
        orthogonality,
        norm_ratio: if fn_ > 0.0 { wn / fn_ } else { 0.0 },
    })
}

/// Outcome of the orthogonality propagation check.
#[derive(Debug, Clone, Serialize)]
pub struct OrthogonalityReport {
    /// largest `|int f(., y) w*|` over cross-section nodes
    pub precondition_violation: f64,
    pub precondition_holds: bool,
    /// largest `|int w(., y) w*|`, relative to `|w| |w*|`
    pub solution_orthogonality: f64,
    pub orthogonal: bool,
}

/// Solve `L w = f` (eps = 1) without projecting and test fiberwise orthogonality of `w`.
pub fn orthogonality_propagation_check(
    p: &Profile,
    cross: &CrossSection,
    grid: Grid1D,
    f: &[f64],
) -> Result<OrthogonalityReport> {
    let (nt, ny) = (grid.n, cross.n);
    let ground: Vec<f64> = grid.nodes().iter().map(|&t| p.eval(t).1).collect();
    let fscale = f.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let violation = fiber_orthogonality(f, &ground, nt, ny, grid.h);
    if violation > 1e-10 * fscale {
        return Ok(OrthogonalityReport {
            precondition_violation: violation,
            precondition_holds: false,
            solution_orthogonality: f64::NAN,
            orthogonal: false,
        });
    }
    let modes = to_modes(cross, nt, f);
    let solved = solve_modes(p, cross, grid, 1.0, modes, WeightSpec::ZERO)?;
    let w = from_modes(cross, nt, &solved);
    let wnorm = (w.iter().map(|v| v * v).sum::<f64>() * grid.h * cross.h).sqrt();
    let gnorm = pair_with_ground(&ground, &ground, grid.h).sqrt();
    let raw = fiber_orthogonality(&w, &ground, nt, ny, grid.h);
    let rel = if wnorm > 0.0 { raw / (wnorm * gnorm) } else { 0.0 };
    Ok(OrthogonalityReport {
        precondition_violation: violation,
        precondition_holds: true,
        solution_orthogonality: rel,
        orthogonal: rel <= 1e-8,
    })
}

/// `eps`-scaled weighted norm of a 1D profile-scale function.
pub fn weighted_norm_1d(v: &[f64], grid: Grid1D, eps: f64, order: usize, delta: WeightSpec) -> f64 {
    let neg = delta.negated();
    let wt: Vec<f64> = grid.nodes().iter().map(|&t| neg.weight(t / eps)).collect();
    scaled_norm_1d(v, grid.h, eps, order, &wt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::make_standard_well;
    use crate::profile::compute_profile;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn prof() -> &'static Profile {
        static P: OnceLock<Profile> = OnceLock::new();
        P.get_or_init(|| compute_profile(&make_standard_well(), 12.0, 16384).unwrap())
    }

    #[test]
    fn off_diagonal_is_exact() {
        let g = Grid1D::span(-1.0, 1.0, 2001);
        let op = Operator1D::new(prof(), g, 1.0, 0.0, Boundary::Dirichlet).unwrap();
        assert!(op.matrix().off.iter().all(|&e| e == -1.0 / (g.h * g.h)));
    }

    #[test]
    fn ground_eigenvalue_positive_on_unit_interval() {
        let g = Grid1D::span(-1.0, 1.0, 2001);
        let op0 = Operator1D::new(prof(), g, 1.0, 0.0, Boundary::Dirichlet).unwrap();
        let op1 = Operator1D::new(prof(), g, 1.0, 1.0, Boundary::Dirichlet).unwrap();
        let m0 = dirichlet_ground_eigenvalue(&op0).unwrap();
        let m1 = dirichlet_ground_eigenvalue(&op1).unwrap();
        assert!(m0 > 0.0);
        assert!((m1 - m0 - 1.0).abs() < 1e-9);
        // bisection agrees with the ground-state form
        assert!((dirichlet_eigenvalues(&op0, 1)[0] - m0).abs() < 1e-8 * m0.max(1.0));
    }

    #[test]
    fn ground_eigenvalue_vanishes_on_long_interval() {
        let mut vals = Vec::new();
        for n in [20001, 40001] {
            let op = Operator1D::new(prof(), Grid1D::span(-20.0, 20.0, n), 1.0, 0.0, Boundary::Dirichlet).unwrap();
            let (mu, v) = dirichlet_ground_state(&op).unwrap();
            assert!(mu > 0.0 && mu <= 1e-6, "{mu:e}");
            // eigenfunction matches normalized w*
            let ws: Vec<f64> = op.grid.nodes().iter().map(|&t| prof().eval(t).1).collect();
            let norm = (ws.iter().map(|x| x * x).sum::<f64>() * op.grid.h).sqrt();
            let err = v.iter().zip(&ws).map(|(a, b)| (a - b / norm).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-4, "{err:e}");
            vals.push(mu);
        }
        // Richardson extrapolation of the two resolutions stays below the bound
        let extrapolated = (4.0 * vals[1] - vals[0]) / 3.0;
        assert!(extrapolated.abs() <= 1e-6);
    }

    #[test]
    fn shift_identity_first_five() {
        let g = Grid1D::span(-3.0, 3.0, 1201);
        let base = Operator1D::new(prof(), g, 1.0, 0.0, Boundary::Dirichlet).unwrap();
        let e0 = dirichlet_eigenvalues(&base, 5);
        for zeta in [0.5, 1.0, 2.0] {
            let op = Operator1D::new(prof(), g, 1.0, zeta, Boundary::Dirichlet).unwrap();
            let e = dirichlet_eigenvalues(&op, 5);
            for k in 0..5 {
                assert!((e[k] - e0[k] - zeta).abs() < 1e-9, "{k} {zeta}");
            }
        }
    }

    #[test]
    fn ground_eigenfunction_has_no_interior_zero() {
        let g = Grid1D::span(-4.0, 4.0, 1601);
        for zeta in [0.0, 0.5, 3.0] {
            let op = Operator1D::new(prof(), g, 1.0, zeta, Boundary::Dirichlet).unwrap();
            let (_, v) = dirichlet_ground_state(&op).unwrap();
            assert!(v[1..g.n - 1].iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn shooting_examples() {
        let p = prof();
        let s = shoot_homogeneous(p, 1.0, Side::Minus, 8.0, 1e-3).unwrap();
        assert_eq!(s.sign_changes(), 0);
        let s2 = shoot_homogeneous(p, 1.0, Side::Plus, 8.0, 1e-3).unwrap();
        assert_eq!(s2.sign_changes(), 0);
        // growth rate of w^- at +inf
        let (ts, logs): (Vec<f64>, Vec<f64>) = s
            .t
            .iter()
            .zip(&s.w)
            .filter(|(t, _)| **t >= 4.0)
            .map(|(t, w)| (*t, w.ln()))
            .unzip();
        let fit = crate::diagnostics::linear_fit(&ts, &logs).unwrap();
        assert!((fit.slope - 5f64.sqrt()).abs() <= 0.01 * 5f64.sqrt(), "{}", fit.slope);
    }

    #[test]
    fn shooting_small_zeta_tracks_ground_state() {
        let p = prof();
        let s = shoot_homogeneous(p, 1e-6, Side::Minus, 8.0, 1e-3).unwrap();
        let (w0, _) = s.at(0.0);
        let w_star0 = p.eval(0.0).1;
        let mut num = 0.0;
        let mut den = 0.0;
        for (t, w) in s.t.iter().zip(&s.w) {
            if t.abs() <= 5.0 {
                let a = w / w0;
                let b = p.eval(*t).1 / w_star0;
                num += (a - b) * (a - b);
                den += b * b;
            }
        }
        let rel = (num / den).sqrt();
        assert!(rel <= 1e-3, "L2 relative deviation {rel:e}");
    }

    #[test]
    fn shooting_overflow_guard() {
        assert!(matches!(
            shoot_homogeneous(prof(), 1.0, Side::Minus, 400.0, 1e-2),
            Err(Error::OverflowGuard { .. })
        ));
    }

    #[test]
    fn wronskian_constant_and_nonzero() {
        let r = wronskian(prof(), 1.0, 8.0, 1e-3).unwrap();
        assert!(r.spread <= 1e-6, "{r:?}");
        let r4 = wronskian(prof(), 4.0, 8.0, 1e-3).unwrap();
        assert!(r4.mean.abs() > 1e-3);
        let coarse = wronskian(prof(), 1.0, 8.0, 2e-3).unwrap();
        assert!((coarse.mean - r.mean).abs() <= 1e-6 * r.mean.abs());
    }

    #[test]
    fn mode0_zero_rhs() {
        let g = Grid1D::symmetric(12.0, 0.01);
        let s = mode0_solve(prof(), g, &vec![0.0; g.n], WeightSpec::ZERO).unwrap();
        assert!(s.w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mode0_manufactured() {
        let p = prof();
        let g = Grid1D::symmetric(11.0, 0.005);
        let ts = g.nodes();
        // L_0 (t w*) = -2 w*' = -W'(u*)
        let f: Vec<f64> = ts.iter().map(|&t| -p.well().eval_dw(p.eval(t).0)).collect();
        let s = mode0_solve(p, g, &f, WeightSpec::new(-1.0, -1.0)).unwrap();
        let err = ts
            .iter()
            .zip(&s.w)
            .map(|(&t, w)| (w - t * p.eval(t).1).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-6, "{err:e}");
        let gr: Vec<f64> = ts.iter().map(|&t| p.eval(t).1).collect();
        assert!(pair_with_ground(&s.w, &gr, g.h).abs() <= 1e-10);
    }

    #[test]
    fn mode0_residual_second_order() {
        let p = prof();
        let resid = |h: f64| {
            let g = Grid1D::symmetric(10.0, h);
            let ts = g.nodes();
            let gr: Vec<f64> = ts.iter().map(|&t| p.eval(t).1).collect();
            let raw: Vec<f64> = ts.iter().zip(&gr).map(|(t, w)| w * t * t).collect();
            let m = pair_with_ground(&raw, &gr, g.h) / pair_with_ground(&gr, &gr, g.h);
            let f: Vec<f64> = ts.iter().zip(&gr).map(|(t, w)| w * (t * t - m)).collect();
            let s = mode0_solve(p, g, &f, WeightSpec::ZERO).unwrap();
            // pointwise potential: an independent discretization of L_0
            (1..g.n - 1)
                .map(|i| {
                    let d2 = (s.w[i + 1] - 2.0 * s.w[i] + s.w[i - 1]) / (g.h * g.h);
                    (-d2 + p.half_ddw(ts[i]) * s.w[i] - f[i]).abs()
                })
                .fold(0.0, f64::max)
        };
        let (a, b) = (resid(0.02), resid(0.01));
        assert!(a / b > 3.5 && a / b < 4.5, "{a:e} {b:e}");
    }

    #[test]
    fn mode0_compatibility_violation() {
        let g = Grid1D::symmetric(10.0, 0.01);
        let f: Vec<f64> = g.nodes().iter().map(|&t| prof().eval(t).1).collect();
        assert!(matches!(
            mode0_solve(prof(), g, &f, WeightSpec::ZERO),
            Err(Error::CompatibilityViolation { .. })
        ));
    }

    #[test]
    fn spectrum_sweep() {
        let p = prof();
        let mut logs = Vec::new();
        let mut inv = Vec::new();
        let mut mu1 = Vec::new();
        let mut dev = Vec::new();
        for eps in [0.1, 0.05, 0.025] {
            let s = eps_spectrum(p, eps, 3, 40).unwrap();
            assert!(s.eigenvalues[0] > 0.0);
            assert!(s.eigenvalues.windows(2).all(|w| w[1] > w[0]));
            logs.push(s.eigenvalues[0].ln());
            inv.push(1.0 / eps);
            mu1.push(s.eigenvalues[1]);
            let d = s
                .grid
                .nodes()
                .iter()
                .zip(&s.ground)
                .filter(|(t, _)| (**t / eps).abs() <= 5.0)
                .map(|(t, v)| (v - p.eval(t / eps).1 / p.eval(0.0).1).abs())
                .fold(0.0, f64::max);
            dev.push(d);
        }
        let fit = crate::diagnostics::linear_fit(&inv, &logs).unwrap();
        assert!(fit.slope < 0.0 && fit.r_squared >= 0.99, "{fit:?}");
        let m = mu1.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(m >= 0.5 * mu1[0]);
        for k in 1..dev.len() {
            assert!(dev[k] <= dev[k - 1] || dev[k] <= 1e-12, "{dev:?}");
        }
    }

    #[test]
    fn spectrum_resolution_guard() {
        assert!(matches!(eps_spectrum(prof(), 0.1, 2, 10), Err(Error::ResolutionError(_))));
        assert!(matches!(eps_spectrum(prof(), 0.002, 2, 40), Err(Error::ResolutionError(_))));
    }

    #[test]
    fn cross_section_eigendata() {
        for kind in [CrossSectionKind::Circle { length: 2.0 }, CrossSectionKind::NeumannInterval { length: 1.5 }] {
            let c = CrossSection::new(kind, 16);
            assert_eq!(c.eigenpairs[0].0, 0.0);
            assert!(c.eigenpairs.windows(2).all(|w| w[1].0 >= w[0].0));
            for (lam, phi) in &c.eigenpairs {
                let lp = c.neg_laplacian(phi);
                assert!(lp.iter().zip(phi).all(|(a, b)| (a - lam * b).abs() < 1e-9 * lam.max(1.0)));
            }
            for (a, pa) in c.eigenpairs.iter().enumerate() {
                for (b, pb) in c.eigenpairs.iter().enumerate() {
                    let ip: f64 = pa.1.iter().zip(&pb.1).map(|(x, y)| x * y).sum::<f64>() * c.h;
                    let expect = if a == b { 1.0 } else { 0.0 };
                    assert!((ip - expect).abs() < 1e-12);
                }
            }
        }
    }

    fn product_setup(eps: f64) -> (CrossSection, Grid1D) {
        (
            CrossSection::new(CrossSectionKind::Circle { length: 1.0 }, 16),
            Grid1D::symmetric(1.0, eps / 20.0),
        )
    }

    #[test]
    fn product_projected_out_direction() {
        let eps = 0.1;
        let (c, g) = product_setup(eps);
        let phi1 = &c.eigenpairs[1].1;
        let f: Vec<f64> = g
            .nodes()
            .iter()
            .flat_map(|&t| phi1.iter().map(move |p| prof().eval(t / eps).1 * p))
            .collect();
        let s = product_solve(prof(), &c, g, &f, WeightSpec::ZERO, eps).unwrap();
        assert!(s.w.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn product_manufactured_second_order() {
        let p = prof();
        let err = |h_frac: f64| {
            let eps = 0.1;
            let c = CrossSection::new(CrossSectionKind::Circle { length: 1.0 }, 16);
            let g = Grid1D::symmetric(1.0, eps / h_frac);
            let ts = g.nodes();
            // g(t, y) = (s w*(s)) (1 + cos 2 pi y), s = t / eps, odd in s so fiberwise orthogonal
            let gfield: Vec<f64> = ts
                .iter()
                .flat_map(|&t| {
                    let s = t / eps;
                    let v = s * p.eval(s).1;
                    (0..c.n).map(move |j| v * (1.0 + (2.0 * std::f64::consts::PI * j as f64 / 16.0).cos()))
                })
                .collect();
            let f = product_apply(p, &c, g, eps, &gfield).unwrap();
            let s = product_solve(p, &c, g, &f, WeightSpec::ZERO, eps).unwrap();
            assert!(s.orthogonality <= 1e-8);
            s.w.iter().zip(&gfield).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(20.0), err(40.0));
        assert!(e2 < 1e-3 && e1 / e2 > 3.0, "{e1:e} {e2:e}");
    }

    #[test]
    fn product_norm_ratio_uniform() {
        let p = prof();
        let mut ratios = Vec::new();
        for eps in [0.1, 0.05, 0.025] {
            let (c, g) = product_setup(eps);
            let f: Vec<f64> = g
                .nodes()
                .iter()
                .flat_map(|&t| (0..c.n).map(move |j| (1.0 - t * t) * (1.0 + 0.5 * (2.0 * std::f64::consts::PI * j as f64 / 16.0).sin())))
                .collect();
            let s = product_solve(p, &c, g, &f, WeightSpec::new(-0.5, -0.5), eps).unwrap();
            assert!(s.orthogonality <= 1e-8, "{eps} {:e}", s.orthogonality);
            ratios.push(s.norm_ratio);
        }
        let max = ratios.iter().copied().fold(0.0, f64::max);
        let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(max / min < 3.0, "{ratios:?}");
    }

    #[test]
    fn orthogonality_propagates() {
        let p = prof();
        let c = CrossSection::new(CrossSectionKind::NeumannInterval { length: 2.0 }, 12);
        let g = Grid1D::symmetric(12.0, 0.02);
        let ts = g.nodes();
        let phi1 = c.eigenpairs[1].1.clone();
        // g(t) = t w*(t) is odd, hence orthogonal to w*
        let f: Vec<f64> = ts
            .iter()
            .flat_map(|&t| phi1.iter().map(move |ph| t * p.eval(t).1 * ph))
            .collect();
        let r = orthogonality_propagation_check(p, &c, g, &f).unwrap();
        assert!(r.precondition_holds && r.orthogonal, "{r:?}");
        let zero = orthogonality_propagation_check(p, &c, g, &vec![0.0; f.len()]).unwrap();
        assert!(zero.orthogonal);
        let bad: Vec<f64> = ts
            .iter()
            .flat_map(|&t| phi1.iter().map(move |ph| p.eval(t).1 * ph))
            .collect();
        let r = orthogonality_propagation_check(p, &c, g, &bad).unwrap();
        assert!(!r.precondition_holds && r.precondition_violation > 0.1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn positivity_for_nonnegative_zeta(zeta in 0.0f64..5.0, half in 0.5f64..6.0) {
            let g = Grid1D::span(-half, half, 801);
            let op = Operator1D::new(prof(), g, 1.0, zeta, Boundary::Dirichlet).unwrap();
            prop_assert!(dirichlet_ground_eigenvalue(&op).unwrap() > 0.0);
        }

        #[test]
        fn matrix_is_symmetric_and_shift_exact(zeta in 0.0f64..3.0) {
            let g = Grid1D::span(-2.0, 2.0, 201);
            let a = Operator1D::new(prof(), g, 0.7, 0.0, Boundary::Decay).unwrap();
            let b = Operator1D::new(prof(), g, 0.7, zeta, Boundary::Dirichlet).unwrap();
            prop_assert!(a.matrix().off.iter().all(|&e| e == a.matrix().off[0]));
            let base = Operator1D::new(prof(), g, 0.7, 0.0, Boundary::Dirichlet).unwrap();
            for (x, y) in b.matrix().diag.iter().zip(&base.matrix().diag) {
                prop_assert!((x - y - zeta).abs() < 1e-9);
            }
        }

        #[test]
        fn shots_never_vanish(zeta in 0.05f64..6.0) {
            let s = shoot_homogeneous(prof(), zeta, Side::Plus, 6.0, 2e-3).unwrap();
            prop_assert_eq!(s.sign_changes(), 0);
            prop_assert!(s.w.iter().all(|&w| w > 0.0));
        }
    }
}
