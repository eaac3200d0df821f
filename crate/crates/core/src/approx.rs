//! Approximate solutions concentrated near an interface, their residual, and
//! the fibre integral and projection that split off the layer direction.
//!
//! Fibres are the grid columns `phi = phi_j` restricted to the tube around the
//! component owning them, parametrized by the chart distance `t`. Columns are
//! the normal geodesics of coordinate curves, so for the reference interface
//! and its constant offsets they are exactly the Fermi rays.

use serde::Serialize;

use crate::elliptic::Discretization;
use crate::error::{Error, Result};
use crate::geometry::{FermiChart, ManifoldGrid};
use crate::norms::scaled_norm_2d;
use crate::potential::{DoubleWell, IndicialData};
use crate::profile::Profile;

/// `C^3` step from 0 at `x <= 0` to 1 at `x >= 1`.
pub fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    let x4 = x * x * x * x;
    x4 * (35.0 - 84.0 * x + 70.0 * x * x - 20.0 * x * x * x)
}

/// Tube cutoff `chi` and the transition step `xi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CutoffPair {
    pub tau0: f64,
}

impl CutoffPair {
    /// 1 on `|t| <= tau0 / 2`, 0 on `|t| >= tau0`.
    pub fn chi(&self, t: f64) -> f64 {
        let h = 0.5 * self.tau0;
        1.0 - smoothstep((t.abs() - h) / h)
    }

    /// 0 below `-1`, 1 above `1`, monotone.
    pub fn xi(x: f64) -> f64 {
        smoothstep(0.5 * (x + 1.0))
    }
}

/// Grid field with the `eps` it was built for.
#[derive(Debug, Clone, Serialize)]
pub struct Field {
    pub values: Vec<f64>,
    pub eps: f64,
    pub n_s: usize,
    pub n_phi: usize,
    /// spacing along `s`
    pub hs: f64,
    /// arc-length spacing along `phi` on the widest row
    pub hphi: f64,
    pub periodic_s: bool,
}

impl Field {
    pub fn new(grid: &ManifoldGrid, eps: f64, values: Vec<f64>) -> Self {
        let fmax = grid.f_node.iter().fold(0.0_f64, |m, v| m.max(*v));
        Self {
            values,
            eps,
            n_s: grid.n_s(),
            n_phi: grid.n_phi(),
            hs: grid.s.spacing,
            hphi: grid.phi.spacing * fmax,
            periodic_s: grid.periodic_s(),
        }
    }

    pub fn sup(&self) -> f64 {
        sup_norm(&self.values)
    }

    /// `eps`-scaled `C^{order, alpha}` surrogate, unweighted.
    pub fn norm(&self, order: usize) -> f64 {
        let w = vec![1.0; self.n_s];
        scaled_norm_2d(&self.values, self.n_s, self.n_phi, self.hs, self.hphi, self.eps, order, &w, true)
    }
}

pub(crate) fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    Ok(())
}

/// `u = chi(d) u*(d / eps) + (1 - chi(d)) sign(d)`.
pub fn build_approximate(grid: &ManifoldGrid, chart: &FermiChart, p: &Profile, eps: f64) -> Result<Field> {
    check_eps(eps)?;
    if chart.dist.len() != grid.len() {
        return Err(Error::TubeViolation("chart does not match the grid".into()));
    }
    let cut = CutoffPair { tau0: chart.tau0 };
    let values = chart
        .dist
        .iter()
        .map(|&d| {
            let c = cut.chi(d);
            if c == 0.0 {
                sign(d)
            } else {
                c * p.eval(d / eps).0 + (1.0 - c) * sign(d)
            }
        })
        .collect();
    Ok(Field::new(grid, eps, values))
}

fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `-eps^2 Lap_h u + W'(u) / 2`.
pub fn pde_residual(grid: &ManifoldGrid, w: &DoubleWell, eps: f64, u: &[f64]) -> Vec<f64> {
    let lap = grid.laplacian(u);
    let e2 = eps * eps;
    lap.iter().zip(u).map(|(l, v)| -e2 * l + 0.5 * w.eval_dw(*v)).collect()
}

/// Residual of the approximate solution.
pub fn residual(grid: &ManifoldGrid, chart: &FermiChart, p: &Profile, eps: f64) -> Result<Field> {
    let u = build_approximate(grid, chart, p, eps)?;
    Ok(Field::new(grid, eps, pde_residual(grid, p.well(), eps, &u.values)))
}

/// Fibres of the tube and the layer direction `e = chi(t) w*(t / eps)` on them.
#[derive(Debug, Clone)]
pub struct Fibers {
    pub n_components: usize,
    pub n_phi: usize,
    /// fibre of each node, `component * n_phi + j`, if the node is in the tube
    pub member: Vec<Option<usize>>,
    pub t: Vec<f64>,
    pub e: Vec<f64>,
    /// `S_f(e_f)`
    pub e_norm: Vec<f64>,
    pub ds: f64,
}

impl Fibers {
    pub fn new(grid: &ManifoldGrid, chart: &FermiChart, p: &Profile, eps: f64) -> Result<Self> {
        check_eps(eps)?;
        let np = grid.n_phi();
        let nc = chart.curvature0.len();
        let cut = CutoffPair { tau0: chart.tau0 };
        let n = grid.len();
        let mut member = vec![None; n];
        let mut e = vec![0.0; n];
        for k in 0..n {
            let t = chart.dist[k];
            if t.abs() < chart.tau0 {
                member[k] = Some(chart.foot_component[k] * np + k % np);
                e[k] = cut.chi(t) * p.eval(t / eps).1;
            }
        }
        let mut fib = Self {
            n_components: nc,
            n_phi: np,
            member,
            t: chart.dist.clone(),
            e,
            e_norm: Vec::new(),
            ds: grid.s.spacing,
        };
        fib.e_norm = fib.integral(&fib.e);
        if fib.e_norm.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::TubeViolation("a fibre carries no layer; the grid does not resolve eps".into()));
        }
        Ok(fib)
    }

    pub fn len(&self) -> usize {
        self.n_components * self.n_phi
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `S_f(u) = int chi(t) u w*(t / eps) dt` on every fibre.
    pub fn integral(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (k, m) in self.member.iter().enumerate() {
            if let Some(f) = m {
                out[*f] += self.e[k] * u[k] * self.ds;
            }
        }
        out
    }

    /// `sum_f beta_f e_f`.
    pub fn lift(&self, beta: &[f64]) -> Vec<f64> {
        self.member
            .iter()
            .zip(&self.e)
            .map(|(m, e)| m.map_or(0.0, |f| beta[f] * e))
            .collect()
    }

    /// Layer coefficients `S_f(u) / S_f(e_f)`.
    pub fn coefficients(&self, u: &[f64]) -> Vec<f64> {
        self.integral(u).iter().zip(&self.e_norm).map(|(s, n)| s / n).collect()
    }

    /// `Pi u = u - sum_f (S_f u / S_f e_f) e_f`.
    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        let b = self.coefficients(u);
        let l = self.lift(&b);
        u.iter().zip(&l).map(|(a, c)| a - c).collect()
    }
}

/// `S` of a field on the tube of the chart.
pub fn fiber_integral(grid: &ManifoldGrid, u: &[f64], chart: &FermiChart, p: &Profile, eps: f64) -> Result<Vec<f64>> {
    Ok(Fibers::new(grid, chart, p, eps)?.integral(u))
}

/// `Pi` of a field on the tube of the chart.
pub fn fiber_project(grid: &ManifoldGrid, u: &[f64], chart: &FermiChart, p: &Profile, eps: f64) -> Result<Vec<f64>> {
    Ok(Fibers::new(grid, chart, p, eps)?.project(u))
}

/// `(W'(u + v) - W'(u) - W''(u) v) / 2`.
pub fn quadratic_remainder(w: &DoubleWell, u_base: &[f64], v: &[f64]) -> Vec<f64> {
    u_base
        .iter()
        .zip(v)
        .map(|(&u, &d)| 0.5 * (w.eval_dw(u + d) - w.eval_dw(u) - w.eval_ddw(u) * d))
        .collect()
}

/// `Gamma = 2 ((1 - xi(t / eps)) gamma_-^2 + xi(t / eps) gamma_+^2)` on the grid.
pub fn interpolated_potential(chart: &FermiChart, eps: f64, ind: &IndicialData) -> Vec<f64> {
    let (gm2, gp2) = (ind.gamma_minus.powi(2), ind.gamma_plus.powi(2));
    chart
        .dist
        .iter()
        .map(|&t| {
            let x = CutoffPair::xi(t / eps);
            2.0 * ((1.0 - x) * gm2 + x * gp2)
        })
        .collect()
}

/// Solve `(-eps^2 Lap + Gamma / 2) w = f`.
pub fn solve_l0(disc: &Discretization, eps: f64, gamma: &[f64], f: &[f64]) -> Result<Vec<f64>> {
    let c: Vec<f64> = gamma.iter().map(|g| 0.5 * g).collect();
    Ok(disc.solve(eps, &c, f, 1e-12)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::linear_fit;
    use crate::geometry::{signed_distance, Interface};
    use crate::potential::{asymmetric_test_well, make_standard_well};
    use crate::profile::{compute_profile, default_t_max};
    use std::f64::consts::PI;

    fn quartic() -> Profile {
        let w = make_standard_well();
        compute_profile(&w, default_t_max(&w).unwrap(), 4001).unwrap()
    }

    fn torus_case(n: usize) -> (ManifoldGrid, FermiChart) {
        let g = ManifoldGrid::torus(1.0, 1.0, n, n).unwrap();
        let c = signed_distance(&g, &Interface::parallel_pair(&g, 0.25).unwrap()).unwrap();
        (g, c)
    }

    #[test]
    fn cutoffs() {
        let c = CutoffPair { tau0: 0.2 };
        assert_eq!(c.chi(0.05), 1.0);
        assert_eq!(c.chi(-0.1), 1.0);
        assert_eq!(c.chi(0.2), 0.0);
        assert!(c.chi(0.15) > 0.0 && c.chi(0.15) < 1.0);
        assert_eq!(CutoffPair::xi(-1.5), 0.0);
        assert_eq!(CutoffPair::xi(1.0), 1.0);
        let xs: Vec<f64> = (0..=100).map(|i| CutoffPair::xi(-1.0 + i as f64 / 50.0)).collect();
        assert!(xs.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn approximate_solution_on_torus() {
        let p = quartic();
        let (g, chart) = torus_case(256);
        let u = build_approximate(&g, &chart, &p, 0.05).unwrap();
        let i = g.s.index_of(0.25).unwrap();
        assert_eq!(u.values[g.idx(i, 5)], 0.0);
        assert_eq!(u.values[g.idx(g.s.index_of(-0.5).unwrap(), 0)], -1.0);
        assert_eq!(u.values[g.idx(g.s.index_of(0.0).unwrap(), 0)], 1.0);
        for k in 0..g.len() {
            let d = chart.dist[k];
            if d.abs() <= 0.5 * chart.tau0 {
                assert!((u.values[k] - (d / 0.05).tanh()).abs() < 2e-4);
            }
            assert!(u.values[k].abs() <= 1.0);
        }
    }

    #[test]
    fn flat_residual_is_small() {
        let p = quartic();
        let (g, chart) = torus_case(256);
        let eps = 0.05;
        let q = residual(&g, &chart, &p, eps).unwrap();
        let h = g.s.spacing;
        let bound = (-2.0 * chart.tau0 / (2.0 * eps)).exp() + h * h / (eps * eps);
        assert!(q.sup() <= 10.0 * bound, "{} {}", q.sup(), bound);
        // exact zeros outside the tube
        for k in 0..g.len() {
            if chart.dist[k].abs() >= chart.tau0 + 2.0 * h {
                assert_eq!(q.values[k], 0.0);
            }
        }
    }

    #[test]
    fn disc_residual_scale() {
        let p = quartic();
        let g = ManifoldGrid::disc(512, 1).unwrap();
        let chart = signed_distance(&g, &Interface::circle(&g, 0.5).unwrap()).unwrap();
        let eps = [0.1, 0.05, 0.025];
        let ratio: Vec<f64> = eps.iter().map(|&e| residual(&g, &chart, &p, e).unwrap().sup() / e).collect();
        let fit = linear_fit(&eps, &ratio).unwrap();
        // w*(0) max|H| = 2
        assert!((fit.intercept - 2.0).abs() < 0.1, "{ratio:?} {fit:?}");
    }

    #[test]
    fn equator_residual_matches_fermi_formula() {
        let p = quartic();
        let eps = 0.05;
        let g = ManifoldGrid::sphere(2048, 1).unwrap();
        let chart = signed_distance(&g, &Interface::latitude(&g, 0.5 * PI).unwrap()).unwrap();
        let q = residual(&g, &chart, &p, eps).unwrap();
        let mut worst: f64 = 0.0;
        for k in 0..g.len() {
            let t = chart.dist[k];
            if t.abs() <= 0.5 * chart.tau0 {
                let model = eps * t.tan() * p.eval(t / eps).1;
                worst = worst.max((q.values[k] - model).abs());
            }
        }
        let h = g.s.spacing;
        assert!(worst <= 5.0 * (eps * eps + h * h / (eps * eps)), "{worst:e}");
    }

    #[test]
    fn projector_algebra() {
        let p = quartic();
        let g = ManifoldGrid::disc(128, 16).unwrap();
        let chart = signed_distance(&g, &Interface::circle(&g, 0.5).unwrap()).unwrap();
        let eps = 0.05;
        let fib = Fibers::new(&g, &chart, &p, eps).unwrap();
        let pe = fib.project(&fib.e);
        assert!(sup_norm(&pe) < 1e-12);
        let u: Vec<f64> = (0..g.len())
            .map(|k| (3.0 * g.s.node(k / 16)).sin() + (g.phi.node(k % 16)).cos())
            .collect();
        let pu = fib.project(&u);
        let ppu = fib.project(&pu);
        assert!(pu.iter().zip(&ppu).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(sup_norm(&fib.integral(&pu)) < 1e-12);
        // identity outside the tube
        for k in 0..g.len() {
            if fib.member[k].is_none() {
                assert_eq!(pu[k], u[k]);
            }
        }
        // odd field has no layer component
        let d: Vec<f64> = chart.dist.clone();
        assert!(sup_norm(&fib.integral(&d)) < 1e-8 + 4.0 * g.s.spacing.powi(2));
        // S(e) = int chi^2 w*^2 is the same on every fibre
        let s0 = fib.e_norm[0];
        assert!(fib.e_norm.iter().all(|v| (v - s0).abs() < 1e-12 * s0));
        assert!((s0 / (eps * p.c_star()) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn layer_component_of_the_disc_residual() {
        // S(Q) = eps^2 c* H + O(eps^3)
        let p = quartic();
        let g = ManifoldGrid::disc(1024, 1).unwrap();
        let chart = signed_distance(&g, &Interface::circle(&g, 0.5).unwrap()).unwrap();
        let eps = [0.08, 0.04, 0.02];
        let vals: Vec<f64> = eps
            .iter()
            .map(|&e| {
                let q = residual(&g, &chart, &p, e).unwrap();
                fiber_integral(&g, &q.values, &chart, &p, e).unwrap()[0] / (e * e)
            })
            .collect();
        let fit = linear_fit(&eps, &vals).unwrap();
        let target = p.c_star() * (-2.0);
        assert!((fit.intercept - target).abs() < 0.03 * target.abs(), "{vals:?}");
    }

    #[test]
    fn quadratic_remainder_examples() {
        let w = make_standard_well();
        let zero = vec![0.0; 4];
        assert!(quadratic_remainder(&w, &[0.3; 4], &zero).iter().all(|v| *v == 0.0));
        for c in [0.01, 0.1, -0.2] {
            let q = quadratic_remainder(&w, &[0.0], &[c])[0];
            assert!((q - 2.0 * c * c * c).abs() < 1e-15);
        }
        let base = [0.4, -0.7, 0.95];
        let v = [1e-3, -2e-3, 1.5e-3];
        let v2: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        let a = sup_norm(&quadratic_remainder(&w, &base, &v));
        let b = sup_norm(&quadratic_remainder(&w, &base, &v2));
        assert!((b / a - 4.0).abs() < 0.4);
        let c = w.sup_dddw(-2.0, 2.0) / 4.0;
        assert!(a <= c * sup_norm(&v).powi(2));
    }

    #[test]
    fn interpolated_potential_examples() {
        let p = quartic();
        let (g, chart) = torus_case(32);
        let gamma = interpolated_potential(&chart, 0.1, &p.indicial());
        assert!(gamma.iter().all(|v| (v - 8.0).abs() < 1e-12));
        let disc = Discretization::unrestricted(g);
        let w = solve_l0(&disc, 0.1, &gamma, &vec![1.0; disc.len()]).unwrap();
        assert!(w.iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn asymmetric_potential_interpolates_the_rates() {
        let w = asymmetric_test_well();
        let p = compute_profile(&w, default_t_max(&w).unwrap(), 4001).unwrap();
        let g = ManifoldGrid::disc(64, 1).unwrap();
        let chart = signed_distance(&g, &Interface::circle(&g, 0.5).unwrap()).unwrap();
        let ind = p.indicial();
        let gamma = interpolated_potential(&chart, 0.05, &ind);
        assert!((gamma[0] - 2.0 * ind.gamma_minus.powi(2)).abs() < 1e-12);
        assert!((gamma[63] - 2.0 * ind.gamma_plus.powi(2)).abs() < 1e-12);
        assert!(gamma.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn l0_bound_is_uniform_in_eps() {
        let p = quartic();
        let g = ManifoldGrid::disc(256, 1).unwrap();
        let chart = signed_distance(&g, &Interface::circle(&g, 0.5).unwrap()).unwrap();
        let disc = Discretization::unrestricted(g.clone());
        let f: Vec<f64> = (0..g.len()).map(|i| (2.0 * g.s.node(i)).cos()).collect();
        let ratios: Vec<f64> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&e| {
                let gamma = interpolated_potential(&chart, e, &p.indicial());
                assert!(gamma.iter().all(|v| *v >= 2.0 * p.indicial().min().powi(2) - 1e-12));
                sup_norm(&solve_l0(&disc, e, &gamma, &f).unwrap()) / sup_norm(&f)
            })
            .collect();
        let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0_f64), |(a, b), r| (a.min(*r), b.max(*r)));
        assert!(hi / lo <= 1.2, "{ratios:?}");
    }
}
