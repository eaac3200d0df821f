//! Linear solves for `(-eps^2 Lap + c) u = f` on the symmetric subspace of a grid.
//!
//! GMRES runs on full grid vectors, projecting onto the invariant subspace
//! after every operator application. The preconditioner freezes `c` at its
//! `phi` average, which makes the operator diagonal in the invariant Fourier
//! modes along `phi`; each mode leaves a banded system in `s`, reduced to
//! signed orbit coordinates when the group also acts along `s`.

use nalgebra::{DMatrix, DVector, LU};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{ManifoldGrid, OrbitBasis, PhiModes, SymmetryGroup};
use crate::linalg::{gmres, solve_cyclic_tridiagonal, solve_tridiagonal, GmresInfo};

/// A grid together with the symmetry class its fields live in.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub grid: ManifoldGrid,
    pub group: SymmetryGroup,
    pub modes: PhiModes,
    s_orbits: Option<OrbitBasis>,
}

impl Discretization {
    pub fn new(grid: ManifoldGrid, group: SymmetryGroup) -> Self {
        let modes = group.phi_modes(grid.n_phi());
        let s_orbits = (!group.s.is_trivial()).then(|| group.s.orbit_basis(grid.n_s()));
        Self { grid, group, modes, s_orbits }
    }

    pub fn unrestricted(grid: ManifoldGrid) -> Self {
        let group = SymmetryGroup::trivial(&grid);
        Self::new(grid, group)
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        self.group.project(u, self.grid.n_phi())
    }

    /// `out = -eps^2 Lap u + c u`.
    pub fn apply(&self, eps: f64, coeff: &[f64], u: &[f64], out: &mut [f64]) {
        self.grid.stiffness_apply(u, out);
        let np = self.grid.n_phi();
        let e2 = eps * eps;
        for (k, o) in out.iter_mut().enumerate() {
            *o = e2 * *o / self.grid.area[k / np] + coeff[k] * u[k];
        }
    }

    pub fn preconditioner(&self, eps: f64, coeff: &[f64]) -> Result<ModePreconditioner> {
        ModePreconditioner::new(self, eps, coeff)
    }

    /// Solve `(-eps^2 Lap + c) u = f` for symmetric `f`; the answer is symmetric.
    pub fn solve(&self, eps: f64, coeff: &[f64], rhs: &[f64], rtol: f64) -> Result<(Vec<f64>, GmresInfo)> {
        let pre = self.preconditioner(eps, coeff)?;
        self.solve_with(&pre, eps, coeff, rhs, rtol)
    }

    pub fn solve_with(
        &self,
        pre: &ModePreconditioner,
        eps: f64,
        coeff: &[f64],
        rhs: &[f64],
        rtol: f64,
    ) -> Result<(Vec<f64>, GmresInfo)> {
        let b = self.project(rhs);
        let mut tmp = vec![0.0; b.len()];
        let (x, info) = gmres(
            |x, y| {
                self.apply(eps, coeff, x, &mut tmp);
                y.copy_from_slice(&self.project(&tmp));
            },
            |x, y| y.copy_from_slice(&pre.apply(x)),
            &b,
            None,
            rtol,
            60,
            600,
        );
        if !info.converged && info.residual > 1e-6 {
            return Err(Error::SingularJacobian(format!(
                "linear solve stalled at relative residual {:.3e} after {} iterations",
                info.residual, info.iterations
            )));
        }
        Ok((self.project(&x), info))
    }
}

#[derive(Debug, Clone)]
enum ModeFactor {
    /// symmetric tridiagonal in `s`: `(off, diag)`, with the periodic corner when cyclic
    Banded { off: Vec<f64>, diag: Vec<f64>, corner: Option<f64> },
    /// LU of the matrix in orbit coordinates
    Dense(LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

/// Exact inverse of the operator with `c` replaced by its `phi` average.
#[derive(Debug, Clone)]
pub struct ModePreconditioner {
    factors: Vec<ModeFactor>,
    area: Vec<f64>,
    n_s: usize,
    n_phi: usize,
    modes: PhiModes,
    s_orbits: Option<OrbitBasis>,
}

impl ModePreconditioner {
    fn new(disc: &Discretization, eps: f64, coeff: &[f64]) -> Result<Self> {
        let g = &disc.grid;
        let (ns, np) = (g.n_s(), g.n_phi());
        let e2 = eps * eps;
        let cbar: Vec<f64> = (0..ns)
            .map(|i| coeff[i * np..(i + 1) * np].iter().sum::<f64>() / np as f64)
            .collect();
        let periodic = g.periodic_s();
        let factors = disc
            .modes
            .eig
            .par_iter()
            .map(|&lam| {
                let diag: Vec<f64> = (0..ns)
                    .map(|i| {
                        let down = if i > 0 {
                            g.flux_s[i - 1]
                        } else if periodic {
                            g.flux_s[ns - 1]
                        } else {
                            0.0
                        };
                        e2 * (g.flux_s[i] + down + g.flux_phi[i] * lam) + g.area[i] * cbar[i]
                    })
                    .collect();
                let off: Vec<f64> = (0..ns - 1).map(|i| -e2 * g.flux_s[i]).collect();
                let corner = periodic.then(|| -e2 * g.flux_s[ns - 1]);
                match &disc.s_orbits {
                    None => Ok(ModeFactor::Banded { off, diag, corner }),
                    Some(orb) => {
                        let k = orb.dim();
                        let mut m = DMatrix::zeros(k, k);
                        // B^T T B through the owner table
                        for (col, members) in orb.members.iter().enumerate() {
                            for &(i, c) in members {
                                let mut push = |row_node: usize, v: f64| {
                                    if let Some((r, rc)) = orb.owner[row_node] {
                                        m[(r, col)] += rc * v * c;
                                    }
                                };
                                push(i, diag[i]);
                                if i + 1 < ns {
                                    push(i + 1, off[i]);
                                } else if let Some(cc) = corner {
                                    push(0, cc);
                                }
                                if i > 0 {
                                    push(i - 1, off[i - 1]);
                                } else if let Some(cc) = corner {
                                    push(ns - 1, cc);
                                }
                            }
                        }
                        let lu = m.lu();
                        if k > 0 && !lu.is_invertible() {
                            return Err(Error::SingularJacobian("mode system is singular in the symmetry class".into()));
                        }
                        Ok(ModeFactor::Dense(lu))
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            factors,
            area: g.area.clone(),
            n_s: ns,
            n_phi: np,
            modes: disc.modes.clone(),
            s_orbits: disc.s_orbits.clone(),
        })
    }

    /// Approximate solution of `(-eps^2 Lap + c) x = r`.
    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        let (ns, np) = (self.n_s, self.n_phi);
        let weighted: Vec<f64> = r.iter().enumerate().map(|(k, v)| v * self.area[k / np]).collect();
        let coeffs = self.modes.forward(&weighted, ns);
        let solved: Vec<Vec<f64>> = coeffs
            .par_iter()
            .zip(&self.factors)
            .map(|(rhs, f)| self.solve_mode(f, rhs))
            .collect();
        self.modes.inverse(&solved, ns, np)
    }

    fn solve_mode(&self, f: &ModeFactor, rhs: &[f64]) -> Vec<f64> {
        match f {
            ModeFactor::Banded { off, diag, corner } => {
                let r = match corner {
                    Some(c) => solve_cyclic_tridiagonal(off, diag, off, *c, *c, rhs),
                    None => solve_tridiagonal(off, diag, off, rhs),
                };
                r.unwrap_or_else(|_| vec![0.0; rhs.len()])
            }
            ModeFactor::Dense(lu) => {
                let orb = self.s_orbits.as_ref().expect("dense factors come with orbits");
                if orb.dim() == 0 {
                    return vec![0.0; rhs.len()];
                }
                let y = DVector::from_vec(orb.restrict(rhs));
                match lu.solve(&y) {
                    Some(x) => orb.extend(x.as_slice(), rhs.len()),
                    None => vec![0.0; rhs.len()],
                }
            }
        }
    }
}
