//! Nonlinear solvers for `-eps^2 Lap u + W'(u) / 2 = eps lambda`.
//!
//! [`newton_full`] runs Newton on the whole discrete system, bordered with the
//! volume row in constrained mode. [`lyapunov_schmidt_iterate`] alternates a
//! solve for the correction `v` in the complement of the layer direction with
//! an interface move driven by the Jacobi operator of the reference curve.
//! Both work on the symmetric subspace of the declared reflections, which is
//! how Jacobi fields coming from isometries are quotiented out.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::{build_approximate, pde_residual, sup_norm, Fibers};
use crate::elliptic::{Discretization, ModePreconditioner};
use crate::error::{Error, Result};
use crate::geometry::{
    graph_curvature, jacobi_assemble, nondegeneracy_check, periodic, signed_distance, smooth_interface,
    volume_nondegeneracy_check, Interface, ManifoldGrid, NodeSymmetry, Symmetry, SymmetryGroup,
};
use crate::potential::DoubleWell;
use crate::profile::Profile;

/// Which problem is solved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    /// `lambda = 0`
    Unconstrained,
    /// `int u = c0 |M|` with `lambda` as multiplier
    VolumeConstrained { c0: f64 },
}

/// A-priori box on the interface graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterfaceBounds {
    pub sup: f64,
    pub slope: f64,
    pub curvature: f64,
}

impl Default for InterfaceBounds {
    fn default() -> Self {
        Self { sup: 0.1, slope: 1.0, curvature: 25.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveConfig {
    pub mode: Mode,
    pub symmetry: Vec<Symmetry>,
    /// on `sup |F| / eps^2`
    pub tol_r: f64,
    pub tol_c: f64,
    pub max_newton: usize,
    pub max_outer: usize,
    pub continuation_eps: Vec<f64>,
    pub bounds: InterfaceBounds,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Unconstrained,
            symmetry: Vec::new(),
            tol_r: 1e-9,
            tol_c: 1e-10,
            max_newton: 30,
            max_outer: 60,
            continuation_eps: Vec::new(),
            bounds: InterfaceBounds::default(),
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_r > 0.0 && self.tol_c > 0.0) {
            return Err(Error::config("solver.tol", "tolerances must be positive"));
        }
        if self.max_newton == 0 || self.max_outer == 0 {
            return Err(Error::config("solver.max_newton", "iteration limits must be positive"));
        }
        if self.continuation_eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::config("solver.continuation_eps", "schedule must be strictly decreasing"));
        }
        if self.continuation_eps.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::config("solver.continuation_eps", "eps must be positive"));
        }
        Ok(())
    }
}

/// Outcome of a solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverState {
    pub u: Vec<f64>,
    pub lambda: f64,
    pub eps: f64,
    /// normal offsets of the nodal set from the reference curves, when it crosses every fibre
    pub interface_psi: Option<Vec<Vec<f64>>>,
    pub residual_norm: f64,
    /// `V(u) - c0 |M|`, zero in unconstrained mode
    pub constraint_gap: f64,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
}

/// One outer step of the Lyapunov-Schmidt iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LsIterate {
    pub iteration: usize,
    pub inner_iterations: usize,
    pub residual: f64,
    pub v_sup: f64,
    pub psi_sup: f64,
    pub lambda: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LsReport {
    pub trace: Vec<LsIterate>,
    /// `max |v| / eps^2` over the iteration
    pub c1: f64,
    /// `max |psi| / eps^2` over the iteration
    pub c2: f64,
}

/// Grid, symmetry class, profile and reference interface of one case.
#[derive(Debug, Clone)]
pub struct Problem {
    pub disc: Discretization,
    pub profile: Profile,
    pub reference: Interface,
}

impl Problem {
    pub fn new(grid: ManifoldGrid, symmetry: &[Symmetry], profile: Profile, reference: Interface) -> Result<Self> {
        if symmetry.contains(&Symmetry::HalfShiftOdd) && !is_even(profile.well()) {
            return Err(Error::config("symmetry", "half_shift_odd needs a well with W(-u) = W(u)"));
        }
        if reference.psi.first().map_or(0, |p| p.len()) != grid.n_phi() {
            return Err(Error::config("interface", "interface does not match the grid"));
        }
        let group = SymmetryGroup::new(&grid, symmetry)?;
        // every symmetry must preserve the reference interface
        reference.node_symmetry(&grid, &group)?;
        Ok(Self { disc: Discretization::new(grid, group), profile, reference })
    }

    pub fn grid(&self) -> &ManifoldGrid {
        &self.disc.grid
    }

    pub fn well(&self) -> &DoubleWell {
        self.profile.well()
    }

    pub fn node_symmetry(&self) -> Result<NodeSymmetry> {
        self.reference.node_symmetry(self.grid(), &self.disc.group)
    }

    /// Mean curvature of the reference interface, averaged over its nodes.
    pub fn reference_curvature(&self) -> f64 {
        let g = self.grid();
        let hs: Vec<f64> = self
            .reference
            .components
            .iter()
            .zip(&self.reference.psi)
            .flat_map(|(c, p)| graph_curvature(g, c, p))
            .collect();
        hs.iter().sum::<f64>() / hs.len() as f64
    }

    /// `c* H / 2`, the leading term of the multiplier.
    pub fn lambda_star(&self) -> f64 {
        0.5 * self.profile.c_star() * self.reference_curvature()
    }

    /// Interface spacing must resolve the layer: `eps >= 4 ds`.
    pub fn check_resolution(&self, eps: f64) -> Result<()> {
        let h = self.grid().s.spacing;
        if !(eps > 0.0) || eps < 4.0 * h {
            return Err(Error::ResolutionError(format!("eps = {eps} is below 4 h = {}", 4.0 * h)));
        }
        Ok(())
    }

    /// Approximate solution over the reference interface offset by `psi`.
    pub fn approximate(&self, eps: f64, psi: Option<&[Vec<f64>]>) -> Result<Vec<f64>> {
        let iface = match psi {
            Some(p) => self.reference.clone().with_psi(p.to_vec())?,
            None => self.reference.clone(),
        };
        let chart = signed_distance(self.grid(), &iface)?;
        Ok(self.disc.project(&build_approximate(self.grid(), &chart, &self.profile, eps)?.values))
    }

    pub fn residual(&self, eps: f64, lambda: f64, u: &[f64]) -> Vec<f64> {
        pde_residual(self.grid(), self.well(), eps, u).into_iter().map(|f| f - eps * lambda).collect()
    }

    fn gap(&self, mode: Mode, u: &[f64]) -> f64 {
        match mode {
            Mode::Unconstrained => 0.0,
            Mode::VolumeConstrained { c0 } => self.grid().integrate(u) - c0 * self.grid().exact_area(),
        }
    }

    fn check_mode(&self, mode: Mode) -> Result<()> {
        if matches!(mode, Mode::VolumeConstrained { .. }) && self.disc.group.has_sign_flip() {
            return Err(Error::config(
                "symmetry",
                "a sign-changing symmetry forces int u = 0 and is incompatible with the volume constraint",
            ));
        }
        Ok(())
    }

    /// Refuse degenerate reference interfaces in the symmetry class.
    pub fn check_nondegenerate(&self, mode: Mode) -> Result<()> {
        let j = jacobi_assemble(self.grid(), &self.reference)?;
        let sym = self.node_symmetry()?;
        let rep = match mode {
            Mode::Unconstrained => nondegeneracy_check(&j, Some(&sym)),
            Mode::VolumeConstrained { .. } => volume_nondegeneracy_check(&j, Some(&sym)),
        };
        if !rep.nondegenerate {
            return Err(Error::JacobiSingular(format!(
                "smallest value {:.3e} in a class of dimension {}",
                rep.min_value, rep.dimension
            )));
        }
        Ok(())
    }

    /// Offsets of the nodal set from each reference curve along the grid columns.
    pub fn interface_estimate(&self, u: &[f64]) -> Option<Vec<Vec<f64>>> {
        let g = self.grid();
        let (ns, np) = (g.n_s(), g.n_phi());
        let reach = crate::geometry::cut_distance(g, &self.reference);
        let mut out = Vec::with_capacity(self.reference.components.len());
        for comp in &self.reference.components {
            let mut row = Vec::with_capacity(np);
            for j in 0..np {
                let mut best: Option<f64> = None;
                let pairs = if g.periodic_s() { ns } else { ns - 1 };
                for i in 0..pairs {
                    let i2 = (i + 1) % ns;
                    let t1 = comp.orientation * g.s.wrap_diff(g.s.node(i), comp.s0);
                    let t2 = comp.orientation * g.s.wrap_diff(g.s.node(i2), comp.s0);
                    if t1.abs() >= reach || t2.abs() >= reach || (t1 - t2).abs() > 1.5 * g.s.spacing {
                        continue;
                    }
                    let (a, b) = (u[i * np + j], u[i2 * np + j]);
                    if a == b || a * b > 0.0 {
                        continue;
                    }
                    let t = t1 + (t2 - t1) * a / (a - b);
                    if best.map_or(true, |x| t.abs() < x.abs()) {
                        best = Some(t);
                    }
                }
                row.push(best?);
            }
            out.push(row);
        }
        Some(out)
    }

    fn check_box(&self, psi: &[Vec<f64>], bounds: &InterfaceBounds) -> Result<()> {
        let lengths = self.reference.component_lengths(self.grid());
        for (p, &len) in psi.iter().zip(&lengths) {
            let sup = sup_norm(p);
            let (slope, curv) = if p.len() >= 3 {
                (sup_norm(&periodic::derivative(p, len, 1)), sup_norm(&periodic::derivative(p, len, 2)))
            } else {
                (0.0, 0.0)
            };
            if sup > bounds.sup || slope > bounds.slope || curv > bounds.curvature {
                return Err(Error::BoxViolation(format!(
                    "|psi| = {sup:.3e}, |psi'| = {slope:.3e}, |psi''| = {curv:.3e} against ({}, {}, {})",
                    bounds.sup, bounds.slope, bounds.curvature
                )));
            }
        }
        Ok(())
    }

    fn jacobian_coefficient(&self, u: &[f64]) -> Vec<f64> {
        u.iter().map(|v| 0.5 * self.well().eval_ddw(*v)).collect()
    }
}

fn is_even(w: &DoubleWell) -> bool {
    let c = w.polynomial().coeffs();
    let scale = c.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    c.iter().skip(1).step_by(2).all(|v| v.abs() <= 1e-14 * scale)
}

const LINEAR_RTOL: f64 = 1e-12;

fn linear_solve(pb: &Problem, pre: &ModePreconditioner, eps: f64, coeff: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    Ok(pb.disc.solve_with(pre, eps, coeff, rhs, LINEAR_RTOL)?.0)
}

/// One bordered Newton correction `(du, dlambda)` for the residual `f`.
fn bordered_step(pb: &Problem, mode: Mode, eps: f64, u: &[f64], f: &[f64], gap: f64) -> Result<(Vec<f64>, f64)> {
    let coeff = pb.jacobian_coefficient(u);
    let pre = pb.disc.preconditioner(eps, &coeff)?;
    let neg_f: Vec<f64> = f.iter().map(|v| -v).collect();
    let x1 = linear_solve(pb, &pre, eps, &coeff, &neg_f)?;
    match mode {
        Mode::Unconstrained => Ok((x1, 0.0)),
        Mode::VolumeConstrained { .. } => {
            let weights = pb.grid().weights();
            let x2 = linear_solve(pb, &pre, eps, &coeff, &vec![eps; u.len()])?;
            let a1: f64 = x1.iter().zip(&weights).map(|(x, w)| x * w).sum();
            let a2: f64 = x2.iter().zip(&weights).map(|(x, w)| x * w).sum();
            if a2.abs() < 1e-300 {
                return Err(Error::SingularJacobian("volume row is orthogonal to the multiplier column".into()));
            }
            let dl = (-gap - a1) / a2;
            Ok((x1.iter().zip(&x2).map(|(a, b)| a + dl * b).collect(), dl))
        }
    }
}

/// Bordered Newton on the full discrete problem.
pub fn newton_full(pb: &Problem, cfg: &SolveConfig, eps: f64, u0: &[f64], lambda0: f64) -> Result<SolverState> {
    cfg.validate()?;
    pb.check_mode(cfg.mode)?;
    pb.check_resolution(eps)?;
    if u0.len() != pb.disc.len() {
        return Err(Error::InvalidArgument("initial field does not match the grid".into()));
    }
    let mut u = pb.disc.project(u0);
    let mut lambda = match cfg.mode {
        Mode::Unconstrained => 0.0,
        Mode::VolumeConstrained { .. } => lambda0,
    };
    let mut history = Vec::new();
    let mut increases = 0;
    for it in 0..=cfg.max_newton {
        let f = pb.residual(eps, lambda, &u);
        let res = sup_norm(&f) / (eps * eps);
        let gap = pb.gap(cfg.mode, &u);
        history.push(res);
        if res <= cfg.tol_r && gap.abs() <= cfg.tol_c {
            return Ok(SolverState {
                interface_psi: pb.interface_estimate(&u),
                u,
                lambda,
                eps,
                residual_norm: res,
                constraint_gap: gap,
                iterations: it,
                residual_history: history,
            });
        }
        if !res.is_finite() {
            return Err(Error::NewtonDivergence { iteration: it, residual: res, context: " (non-finite residual)".into() });
        }
        if history.len() >= 2 && res > history[history.len() - 2] {
            increases += 1;
            if increases >= 3 {
                return Err(Error::NewtonDivergence { iteration: it, residual: res, context: String::new() });
            }
        } else {
            increases = 0;
        }
        if it == cfg.max_newton {
            return Err(Error::NewtonDivergence {
                iteration: it,
                residual: res,
                context: " (iteration limit)".into(),
            });
        }
        if let Some(psi) = pb.interface_estimate(&u) {
            pb.check_box(&psi, &cfg.bounds)?;
        }
        let (du, dl) = bordered_step(pb, cfg.mode, eps, &u, &f, gap)?;
        for (v, d) in u.iter_mut().zip(&du) {
            *v += d;
        }
        u = pb.disc.project(&u);
        lambda += dl;
    }
    unreachable!("loop returns on its last iteration")
}

/// Lyapunov-Schmidt iteration starting from the interface `n0`.
pub fn lyapunov_schmidt_iterate(
    pb: &Problem,
    cfg: &SolveConfig,
    eps: f64,
    n0: &Interface,
    lambda0: Option<f64>,
) -> Result<(SolverState, LsReport)> {
    cfg.validate()?;
    pb.check_mode(cfg.mode)?;
    pb.check_resolution(eps)?;
    pb.check_nondegenerate(cfg.mode)?;
    let grid = pb.grid();
    let sym = pb.node_symmetry()?;
    let n_nodes = pb.reference.n_nodes();
    let basis = sym.basis(n_nodes);
    let k = basis.ncols();
    let jac = jacobi_assemble(grid, &pb.reference)?;
    let node_w = pb.reference.node_weights(grid);
    let lengths = pb.reference.component_lengths(grid);
    let c_star = pb.profile.c_star();
    let constrained = matches!(cfg.mode, Mode::VolumeConstrained { .. });

    // reduced interface operator, bordered in constrained mode
    let red_l = basis.transpose() * &jac.operator * &basis;
    let outer = if constrained {
        let mut m = DMatrix::zeros(k + 1, k + 1);
        m.view_mut((0, 0), (k, k)).copy_from(&red_l);
        let ones = basis.transpose() * DVector::from_element(n_nodes, 1.0);
        let wrow = DVector::from_column_slice(&node_w).transpose() * &basis;
        for i in 0..k {
            m[(i, k)] = -2.0 / c_star * ones[i];
            m[(k, i)] = wrow[i];
        }
        m
    } else {
        red_l
    };
    let outer_lu = outer.clone().lu();
    if outer.nrows() > 0 && !outer_lu.is_invertible() {
        return Err(Error::JacobiSingular("reduced interface system is singular".into()));
    }

    let mut psi: Vec<f64> = sym.project(&n0.flat_psi());
    let mut lambda = if constrained { lambda0.unwrap_or_else(|| pb.lambda_star()) } else { 0.0 };
    let mut v = vec![0.0; pb.disc.len()];
    let mut trace = Vec::new();
    let mut history = Vec::new();
    let (mut c1, mut c2): (f64, f64) = (0.0, 0.0);
    let e2 = eps * eps;
    let mut total_inner = 0;

    for outer_it in 0..cfg.max_outer {
        let mut iface = pb.reference.clone();
        iface.set_flat_psi(&psi);
        pb.check_box(&iface.psi, &cfg.bounds)?;
        let chart = signed_distance(grid, &iface)?;
        let fibers = Fibers::new(grid, &chart, &pb.profile, eps)?;
        let u_app = pb.disc.project(&build_approximate(grid, &chart, &pb.profile, eps)?.values);
        v = fibers.project(&v);

        // (a) projected solve: Pi F(u_app + v) = 0 with S v = 0
        let lifted: Vec<Vec<f64>> = (0..k)
            .map(|l| pb.disc.project(&fibers.lift(basis.column(l).as_slice())))
            .collect();
        let mut inner = 0;
        let mut last = f64::INFINITY;
        loop {
            let u: Vec<f64> = u_app.iter().zip(&v).map(|(a, b)| a + b).collect();
            let f = pb.residual(eps, lambda, &u);
            let pf = fibers.project(&f);
            let pres = sup_norm(&pf) / e2;
            // a stalled Newton step means the round-off floor is reached
            if pres <= 0.1 * cfg.tol_r || pres > 0.5 * last || inner >= cfg.max_newton {
                break;
            }
            last = pres;
            if !pres.is_finite() {
                return Err(Error::NewtonDivergence {
                    iteration: inner,
                    residual: pres,
                    context: " (projected solve)".into(),
                });
            }
            let coeff = pb.jacobian_coefficient(&u);
            let pre = pb.disc.preconditioner(eps, &coeff)?;
            let neg_f: Vec<f64> = f.iter().map(|x| -x).collect();
            let x0 = linear_solve(pb, &pre, eps, &coeff, &neg_f)?;
            let dv = if k == 0 {
                x0
            } else {
                let xs = lifted
                    .par_iter()
                    .map(|rhs| linear_solve(pb, &pre, eps, &coeff, rhs))
                    .collect::<Result<Vec<_>>>()?;
                // B^T S X gamma = B^T S x0
                let s0 = DVector::from_vec(fibers.integral(&x0));
                let rhs = basis.transpose() * s0;
                let mut m = DMatrix::zeros(k, k);
                for (l, x) in xs.iter().enumerate() {
                    let col = basis.transpose() * DVector::from_vec(fibers.integral(x));
                    m.set_column(l, &col);
                }
                let gamma = m
                    .lu()
                    .solve(&rhs)
                    .ok_or_else(|| Error::SingularJacobian("layer border is singular".into()))?;
                let mut dv = x0;
                for (l, x) in xs.iter().enumerate() {
                    for (d, xi) in dv.iter_mut().zip(x) {
                        *d -= gamma[l] * xi;
                    }
                }
                dv
            };
            for (a, b) in v.iter_mut().zip(&dv) {
                *a += b;
            }
            v = pb.disc.project(&fibers.project(&v));
            inner += 1;
        }
        total_inner += inner;

        let u: Vec<f64> = u_app.iter().zip(&v).map(|(a, b)| a + b).collect();
        let f = pb.residual(eps, lambda, &u);
        let res = sup_norm(&f) / e2;
        let gap = pb.gap(cfg.mode, &u);
        let b = fibers.coefficients(&f);
        history.push(res);
        c1 = c1.max(sup_norm(&v) / e2);
        c2 = c2.max(sup_norm(&psi) / e2);
        trace.push(LsIterate {
            iteration: outer_it,
            inner_iterations: inner,
            residual: res,
            v_sup: sup_norm(&v),
            psi_sup: sup_norm(&psi),
            lambda,
            gap,
        });
        if res <= cfg.tol_r && gap.abs() <= cfg.tol_c {
            let state = SolverState {
                interface_psi: pb.interface_estimate(&u),
                u,
                lambda,
                eps,
                residual_norm: res,
                constraint_gap: gap,
                iterations: total_inner,
                residual_history: history,
            };
            return Ok((state, LsReport { trace, c1, c2 }));
        }
        // Near the round-off floor one full correction settles the last ulps
        // that the fiber-orthogonal steps cannot reach.
        if res <= 10.0 * cfg.tol_r && gap.abs() <= 10.0 * cfg.tol_c.max(cfg.tol_r) {
            let (du, dl) = bordered_step(pb, cfg.mode, eps, &u, &f, gap)?;
            let up = pb.disc.project(&u.iter().zip(&du).map(|(a, b)| a + b).collect::<Vec<_>>());
            let lp = lambda + dl;
            let rp = sup_norm(&pb.residual(eps, lp, &up)) / e2;
            let gp = pb.gap(cfg.mode, &up);
            if rp <= cfg.tol_r && gp.abs() <= cfg.tol_c {
                history.push(rp);
                let state = SolverState {
                    interface_psi: pb.interface_estimate(&up),
                    u: up,
                    lambda: lp,
                    eps,
                    residual_norm: rp,
                    constraint_gap: gp,
                    iterations: total_inner + 1,
                    residual_history: history,
                };
                return Ok((state, LsReport { trace, c1, c2 }));
            }
        }
        let n = history.len();
        if !res.is_finite() || (n > 5 && history[n - 1] > 0.5 * history[n - 6]) {
            return Err(Error::ContractionFailure { iteration: outer_it, residual: res });
        }

        // (b) interface move: L dpsi - (2 / c*) dlambda = -b / eps, int dpsi = gap / 2
        let rb = basis.transpose() * DVector::from_vec(b.iter().map(|x| -x / eps).collect());
        let mut rhs = DVector::zeros(outer.nrows());
        rhs.rows_mut(0, k).copy_from(&rb);
        if constrained {
            rhs[k] = 0.5 * gap;
        }
        let sol = if outer.nrows() == 0 {
            DVector::zeros(0)
        } else {
            outer_lu
                .solve(&rhs)
                .ok_or_else(|| Error::JacobiSingular("reduced interface system is singular".into()))?
        };
        let dpsi = &basis * sol.rows(0, k);
        if constrained {
            lambda += sol[k];
        }
        let np = grid.n_phi();
        let theta = 1.0 / eps;
        let mut next = Vec::with_capacity(n_nodes);
        for (c, len) in lengths.iter().enumerate() {
            let raw: Vec<f64> = (0..np).map(|j| psi[c * np + j] + dpsi[c * np + j]).collect();
            next.extend(smooth_interface(&raw, *len, theta));
        }
        psi = sym.project(&next);
    }
    Err(Error::ContractionFailure {
        iteration: cfg.max_outer,
        residual: history.last().copied().unwrap_or(f64::NAN),
    })
}

/// Which solver a sweep uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Newton,
    LyapunovSchmidt,
}

/// Warm-started sweep over `cfg.continuation_eps`: each state's interface
/// estimate and multiplier seed the next approximate solution.
pub fn continuation(pb: &Problem, cfg: &SolveConfig, method: Method) -> Result<Vec<SolverState>> {
    cfg.validate()?;
    let mut out: Vec<SolverState> = Vec::with_capacity(cfg.continuation_eps.len());
    for &eps in &cfg.continuation_eps {
        let prev = out.last();
        let psi = prev.and_then(|s| s.interface_psi.clone());
        let lambda0 = prev.map(|s| s.lambda).unwrap_or_else(|| pb.lambda_star());
        let run = || -> Result<SolverState> {
            match method {
                Method::Newton => {
                    let u0 = pb.approximate(eps, psi.as_deref())?;
                    newton_full(pb, cfg, eps, &u0, lambda0)
                }
                Method::LyapunovSchmidt => {
                    let n0 = match &psi {
                        Some(p) => pb.reference.clone().with_psi(p.clone())?,
                        None => pb.reference.clone(),
                    };
                    Ok(lyapunov_schmidt_iterate(pb, cfg, eps, &n0, Some(lambda0))?.0)
                }
            }
        };
        let state = run().map_err(|e| Error::AtEps { eps, source: Box::new(e) })?;
        out.push(state);
    }
    Ok(out)
}
