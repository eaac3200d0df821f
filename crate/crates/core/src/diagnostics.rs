//! Energy and volume functionals, nodal sets, fits and expansion tables.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{nearest_point, Interface, ManifoldGrid};
use crate::potential::DoubleWell;

/// Least-squares line `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// root-mean-square residual
    pub rms: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::FitFailure(format!(
            "need at least two paired samples, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::FitFailure("non-finite sample".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::FitFailure("abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
        rms: (ss_res / n).sqrt(),
    })
}

/// `E(u) = eps^2 int |grad u|^2 + int W(u)`.
pub fn energy(grid: &ManifoldGrid, w: &DoubleWell, eps: f64, u: &[f64]) -> f64 {
    let pot: Vec<f64> = u.iter().map(|v| w.eval_w(*v)).collect();
    eps * eps * grid.dirichlet_energy(u) + grid.integrate(&pot)
}

/// Partial derivatives `dE / du_k` of the discrete energy.
pub fn energy_gradient(grid: &ManifoldGrid, w: &DoubleWell, eps: f64, u: &[f64]) -> Vec<f64> {
    let mut k = vec![0.0; u.len()];
    grid.stiffness_apply(u, &mut k);
    let np = grid.n_phi();
    k.iter()
        .zip(u)
        .enumerate()
        .map(|(i, (ku, v))| 2.0 * eps * eps * ku + grid.area[i / np] * w.eval_dw(*v))
        .collect()
}

/// `V(u) = int u`.
pub fn volume_functional(grid: &ManifoldGrid, u: &[f64]) -> f64 {
    grid.integrate(u)
}

/// Worst relative gap between `2 <A F, w>` and a five-point difference of the
/// energy along `n_dirs` random directions `w` with entries in `[-1, 1]`.
pub fn gradient_consistency(grid: &ManifoldGrid, w: &DoubleWell, eps: f64, u: &[f64], n_dirs: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let f = crate::approx::pde_residual(grid, w, eps, u);
    let np = grid.n_phi();
    let h = 1e-2;
    let mut worst: f64 = 0.0;
    for _ in 0..n_dirs {
        let dir: Vec<f64> = (0..u.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let exact: f64 = 2.0 * (0..u.len()).map(|k| grid.area[k / np] * f[k] * dir[k]).sum::<f64>();
        let shifted = |t: f64| -> Vec<f64> { u.iter().zip(&dir).map(|(a, b)| a + t * b).collect() };
        // five-point stencil: exact on quartic energies, so only round-off remains
        let e = |t: f64| energy(grid, w, eps, &shifted(t));
        let fd = (8.0 * (e(h) - e(-h)) - (e(2.0 * h) - e(-2.0 * h))) / (12.0 * h);
        worst = worst.max((fd - exact).abs() / exact.abs().max(f64::MIN_POSITIVE));
    }
    worst
}

/// Zero contour as polylines of chart points `(s, phi)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodalSet {
    pub polylines: Vec<Vec<(f64, f64)>>,
}

impl NodalSet {
    pub fn points(&self) -> impl Iterator<Item = &(f64, f64)> {
        self.polylines.iter().flatten()
    }

    pub fn segments(&self) -> impl Iterator<Item = ((f64, f64), (f64, f64))> + '_ {
        self.polylines.iter().flat_map(|p| p.windows(2).map(|w| (w[0], w[1])))
    }
}

const CIRCLE_POINTS: usize = 64;

/// Linear-interpolation zero contour with marching-squares connectivity.
///
/// Saddle cells are resolved by the sign of the cell average. Axisymmetric
/// grids (one `phi` node) give full coordinate circles.
pub fn nodal_set(grid: &ManifoldGrid, u: &[f64]) -> Result<NodalSet> {
    let (ns, np) = (grid.n_s(), grid.n_phi());
    let pos = |v: f64| v >= 0.0;
    let periodic = grid.periodic_s();
    let s_pairs = if periodic { ns } else { ns - 1 };
    let s_cross = |i: usize, j: usize| -> Option<(f64, f64)> {
        let i2 = (i + 1) % ns;
        let (a, b) = (u[i * np + j], u[i2 * np + j]);
        if pos(a) == pos(b) {
            return None;
        }
        let t = a / (a - b);
        Some((wrap_s(grid, grid.s.node(i) + t * grid.s.spacing), grid.phi.node(j)))
    };
    if np == 1 {
        let mut polylines = Vec::new();
        for i in 0..s_pairs {
            if let Some((s, _)) = s_cross(i, 0) {
                let period = grid.phi.period.unwrap_or(2.0 * std::f64::consts::PI);
                polylines.push(
                    (0..=CIRCLE_POINTS)
                        .map(|k| (s, grid.phi.origin + period * k as f64 / CIRCLE_POINTS as f64))
                        .collect(),
                );
            }
        }
        if polylines.is_empty() {
            return Err(Error::EmptyNodalSet);
        }
        return Ok(NodalSet { polylines });
    }
    let phi_cross = |i: usize, j: usize| -> Option<(f64, f64)> {
        let j2 = (j + 1) % np;
        let (a, b) = (u[i * np + j], u[i * np + j2]);
        if pos(a) == pos(b) {
            return None;
        }
        let t = a / (a - b);
        Some((grid.s.node(i), grid.phi.node(j) + t * grid.phi.spacing))
    };
    // edge keys: 2 * (i * np + j) for s-edges, +1 for phi-edges
    let mut point_of: HashMap<usize, (f64, f64)> = HashMap::new();
    let mut links: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..s_pairs {
        let i2 = (i + 1) % ns;
        for j in 0..np {
            let j2 = (j + 1) % np;
            let edges = [
                (2 * (i * np + j), s_cross(i, j)),
                (2 * (i2 * np + j) + 1, phi_cross(i2, j)),
                (2 * (i * np + j2), s_cross(i, j2)),
                (2 * (i * np + j) + 1, phi_cross(i, j)),
            ];
            let hits: Vec<usize> = (0..4).filter(|e| edges[*e].1.is_some()).collect();
            for &e in &hits {
                point_of.insert(edges[e].0, edges[e].1.unwrap());
            }
            let mut connect = |a: usize, b: usize| {
                links.entry(edges[a].0).or_default().push(edges[b].0);
                links.entry(edges[b].0).or_default().push(edges[a].0);
            };
            match hits.len() {
                2 => connect(hits[0], hits[1]),
                4 => {
                    let c = [u[i * np + j], u[i2 * np + j], u[i2 * np + j2], u[i * np + j2]];
                    let centre = 0.25 * c.iter().sum::<f64>();
                    if pos(centre) == pos(c[0]) {
                        connect(0, 1);
                        connect(2, 3);
                    } else {
                        connect(0, 3);
                        connect(1, 2);
                    }
                }
                _ => {}
            }
        }
    }
    if point_of.is_empty() {
        return Err(Error::EmptyNodalSet);
    }
    // walk the chains, open ones first
    let mut keys: Vec<usize> = links.keys().copied().collect();
    keys.sort_unstable();
    let mut used: HashMap<usize, bool> = HashMap::new();
    let mut polylines = Vec::new();
    let mut starts: Vec<usize> = keys.iter().copied().filter(|k| links[k].len() == 1).collect();
    starts.extend(keys.iter().copied().filter(|k| links[k].len() != 1));
    for start in starts {
        if used.get(&start).copied().unwrap_or(false) {
            continue;
        }
        let mut line = vec![point_of[&start]];
        used.insert(start, true);
        let mut cur = start;
        while let Some(&next) = links[&cur].iter().find(|n| !used.get(n).copied().unwrap_or(false)) {
            used.insert(next, true);
            line.push(point_of[&next]);
            cur = next;
        }
        if links[&cur].contains(&start) && line.len() > 2 {
            line.push(point_of[&start]);
        }
        polylines.push(line);
    }
    Ok(NodalSet { polylines })
}

fn wrap_s(grid: &ManifoldGrid, s: f64) -> f64 {
    match grid.s.period {
        Some(p) => {
            let lo = grid.s.origin;
            (s - lo).rem_euclid(p) + lo
        }
        None => s,
    }
}

/// Distance from a point to a segment in the local chart metric at its midpoint.
fn point_segment_distance(grid: &ManifoldGrid, p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let f = grid.warp(0.5 * (a.0 + b.0)).max(1e-12);
    let to_local = |q: (f64, f64)| (grid.s.wrap_diff(q.0, a.0), f * grid.phi.wrap_diff(q.1, a.1));
    let (bx, by) = to_local(b);
    let (px, py) = to_local(p);
    let len2 = bx * bx + by * by;
    let t = if len2 > 0.0 { ((px * bx + py * by) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (dx, dy) = (px - t * bx, py - t * by);
    let local = (dx * dx + dy * dy).sqrt();
    // exact geodesic distance at the endpoints guards against chart distortion
    local.min(grid.distance(p, a)).min(grid.distance(p, b))
}

/// Symmetric Hausdorff distance between the nodal set and an interface.
pub fn hausdorff_distance(grid: &ManifoldGrid, set: &NodalSet, target: &Interface) -> f64 {
    use rayon::prelude::*;
    let mut nodal_pts: Vec<(f64, f64)> = set.points().copied().collect();
    nodal_pts.extend(set.segments().map(|(a, b)| {
        (wrap_s(grid, a.0 + 0.5 * grid.s.wrap_diff(b.0, a.0)), a.1 + 0.5 * grid.phi.wrap_diff(b.1, a.1))
    }));
    let one_way = nodal_pts.par_iter().map(|p| nearest_point(grid, target, *p).0).reduce(|| 0.0, f64::max);
    let period = grid.phi.period.unwrap_or(2.0 * std::f64::consts::PI);
    let m = (4 * grid.n_phi()).max(256);
    let segs: Vec<((f64, f64), (f64, f64))> = set.segments().collect();
    let targets: Vec<(f64, f64)> = (0..target.components.len())
        .flat_map(|c| {
            (0..m).map(move |k| {
                let phi = grid.phi.origin + period * k as f64 / m as f64;
                (c, phi)
            })
        })
        .map(|(c, phi)| (target.curve(grid, c, phi), phi))
        .collect();
    let other = targets
        .par_iter()
        .map(|p| {
            segs.iter()
                .map(|(a, b)| point_segment_distance(grid, *p, *a, *b))
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| 0.0, f64::max);
    one_way.max(other)
}

/// One row of an expansion table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRow {
    pub eps: f64,
    pub energy: f64,
    pub lambda: f64,
    pub nodal_hausdorff: f64,
    pub volume_gap: f64,
}

pub const EXPANSION_HEADER: [&str; 5] = ["eps", "energy", "lambda", "nodal_hausdorff", "volume_gap"];

/// 17 significant digits.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write a numeric table with a header row.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| format_value(*v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_expansion(path: &Path, rows: &[ExpansionRow]) -> Result<()> {
    let data: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| vec![r.eps, r.energy, r.lambda, r.nodal_hausdorff, r.volume_gap])
        .collect();
    write_table(path, &EXPANSION_HEADER, &data)
}

/// Read back a table written by [`write_table`].
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|v| v.trim().parse::<f64>().map_err(|e| Error::InvalidArgument(format!("bad number `{v}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}
