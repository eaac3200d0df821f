//! The heteroclinic profile `u*` connecting `-1` to `+1`.
//!
//! `u*` is obtained by inverting `t(u) = int_0^u dx / sqrt(W(x))`. With
//! `W = (1 - x^2)^2 q(x)` the integrand splits into two logarithmic pieces,
//! integrated in closed form, and a smooth remainder handled by adaptive
//! quadrature. In each half line the unknown is the distance to the well
//! (`1 - u` or `1 + u`), so tail values keep full relative precision.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::potential::{indicial_roots, DoubleWell, IndicialData, Polynomial};
use crate::quadrature::{integrate_adaptive, trapezoid};

/// Tabulated profile with cubic Hermite interpolation and exponential tails.
#[derive(Debug, Clone)]
pub struct Profile {
    well: DoubleWell,
    indicial: IndicialData,
    t_max: f64,
    h: f64,
    grid_t: Vec<f64>,
    u: Vec<f64>,
    w: Vec<f64>,
    /// distance to the nearest well, `1 - |u|`, kept separately for tails
    gap: Vec<f64>,
    c_star: f64,
    c_star_w2: f64,
    amp_minus: f64,
    amp_plus: f64,
}

/// Values of the profile at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileSample {
    pub u: f64,
    /// `w* = du*/dt`
    pub w: f64,
    /// `dw*/dt = W'(u*)/2`
    pub dw: f64,
}

/// Output of [`decay_check`].
#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub amp_minus: f64,
    pub amp_plus: f64,
    /// fitted exponential rates of `1 + u` at `-inf` and `1 - u` at `+inf`
    pub rate_minus: f64,
    pub rate_plus: f64,
    /// fitted rates of `w*` at the two ends
    pub w_rate_minus: f64,
    pub w_rate_plus: f64,
}

/// Checked type invariants.
#[derive(Debug, Clone, Serialize)]
pub struct ProfileInvariants {
    pub u_at_zero: f64,
    pub strictly_increasing: bool,
    pub inside_wells: bool,
    pub hamiltonian_residual: f64,
    pub w_positive: bool,
    pub c_star_gap: f64,
    pub ode_residual: f64,
}

impl ProfileInvariants {
    pub fn holds(&self) -> bool {
        self.u_at_zero.abs() <= 1e-10
            && self.strictly_increasing
            && self.inside_wells
            && self.hamiltonian_residual <= 1e-8
            && self.w_positive
            && self.c_star_gap <= 1e-8
    }
}

struct Inversion<'a> {
    q: &'a Polynomial,
    sq_plus: f64,
    sq_minus: f64,
    p_plus: Polynomial,
    p_minus: Polynomial,
    indicial: IndicialData,
}

impl<'a> Inversion<'a> {
    fn new(q: &'a Polynomial, indicial: IndicialData) -> Self {
        let q1 = q.eval(1.0);
        let qm1 = q.eval(-1.0);
        // (q(x) - q(1)) / (x - 1) and (q(x) - q(-1)) / (x + 1) as polynomials
        let mut c = q.coeffs().to_vec();
        c[0] -= q1;
        let (p_plus, _) = Polynomial::new(c).div_rem(&Polynomial::new(vec![-1.0, 1.0]));
        let mut c = q.coeffs().to_vec();
        c[0] -= qm1;
        let (p_minus, _) = Polynomial::new(c).div_rem(&Polynomial::new(vec![1.0, 1.0]));
        Self {
            q,
            sq_plus: q1.sqrt(),
            sq_minus: qm1.sqrt(),
            p_plus,
            p_minus,
            indicial,
        }
    }

    /// Smooth remainder of `1 / sqrt(W)` after removing the two pole terms.
    fn remainder(&self, x: f64) -> f64 {
        let sq = self.q.eval(x).sqrt();
        // (1/sqrt q(x) - 1/sqrt q(1)) / (2 (1 - x))
        let a = self.p_plus.eval(x) / (2.0 * sq * self.sq_plus * (sq + self.sq_plus));
        // (1/sqrt q(x) - 1/sqrt q(-1)) / (2 (1 + x))
        let b = -self.p_minus.eval(x) / (2.0 * sq * self.sq_minus * (sq + self.sq_minus));
        a + b
    }

    fn smooth_integral(&self, a: f64, b: f64) -> Result<f64> {
        integrate_adaptive(|x| self.remainder(x), a, b, 1e-15)
    }

    /// `t(u)` for `u = 1 - eta`, given `G(u_ref)` and `u_ref`.
    fn t_right(&self, eta: f64, g_ref: f64, u_ref: f64) -> Result<(f64, f64)> {
        let u = 1.0 - eta;
        let g = g_ref + self.smooth_integral(u_ref, u)?;
        let t = -eta.ln() / self.indicial.gamma_plus + (2.0 - eta).ln() / self.indicial.gamma_minus + g;
        Ok((t, g))
    }

    fn t_left(&self, zeta: f64, g_ref: f64, u_ref: f64) -> Result<(f64, f64)> {
        let u = zeta - 1.0;
        let g = g_ref + self.smooth_integral(u_ref, u)?;
        let t = zeta.ln() / self.indicial.gamma_minus - (2.0 - zeta).ln() / self.indicial.gamma_plus + g;
        Ok((t, g))
    }

    /// `sqrt(W)` written in terms of the gap `eta = 1 - |u|`.
    fn sqrt_w_gap(&self, u: f64, eta: f64) -> f64 {
        eta * (2.0 - eta) * self.q.eval(u).max(0.0).sqrt()
    }
}

/// Default stretched half-width `12 / min(gamma)`.
pub fn default_t_max(w: &DoubleWell) -> Result<f64> {
    Ok(12.0 / indicial_roots(w)?.min())
}

/// Tabulate `u*` on `n_points` uniform nodes of `[-t_max, t_max]`.
pub fn compute_profile(w: &DoubleWell, t_max: f64, n_points: usize) -> Result<Profile> {
    let indicial = indicial_roots(w)?;
    if !w.is_canonical() {
        return Err(Error::InvalidArgument(
            "profile needs canonical wells, call normalize_wells first".into(),
        ));
    }
    if n_points < 2048 {
        return Err(Error::InvalidArgument(format!(
            "n_points = {n_points} is below 2048"
        )));
    }
    if !(t_max >= 10.0 / indicial.min() - 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "t_max = {t_max} is below 10 / min(gamma) = {}",
            10.0 / indicial.min()
        )));
    }
    let q = w.reduced().ok_or_else(|| {
        Error::QuadratureFailure("W does not factor as (1 - u^2)^2 q(u)".into())
    })?;
    for k in 0..=400 {
        let x = -1.0 + 2.0 * k as f64 / 400.0;
        if q.eval(x) <= 0.0 {
            return Err(Error::QuadratureFailure(format!(
                "1/sqrt(W) is not integrable near u = {x}"
            )));
        }
    }
    let inv = Inversion::new(q, indicial);
    let h = 2.0 * t_max / (n_points - 1) as f64;
    let grid_t: Vec<f64> = (0..n_points).map(|i| -t_max + i as f64 * h).collect();
    let mut u = vec![0.0; n_points];
    let mut gap = vec![1.0; n_points];
    let mut w_vals = vec![0.0; n_points];

    // right half: nodes with t >= 0, unknown eta = 1 - u
    let first_right = grid_t.iter().position(|&t| t >= 0.0).unwrap_or(n_points);
    let (mut eta, mut g_ref, mut u_ref) = (1.0, 0.0, 0.0);
    for i in first_right..n_points {
        let t = grid_t[i];
        let (e, g) = invert(
            |e| inv.t_right(e, g_ref, u_ref),
            |e| inv.sqrt_w_gap(1.0 - e, e),
            t,
            eta,
            false,
        )?;
        eta = e;
        g_ref = g;
        u_ref = 1.0 - e;
        u[i] = 1.0 - e;
        gap[i] = e;
        w_vals[i] = inv.sqrt_w_gap(u[i], e);
    }
    // left half, unknown zeta = 1 + u
    let (mut zeta, mut g_ref, mut u_ref) = (1.0, 0.0, 0.0);
    for i in (0..first_right).rev() {
        let t = grid_t[i];
        let (z, g) = invert(
            |z| inv.t_left(z, g_ref, u_ref),
            |z| inv.sqrt_w_gap(z - 1.0, z),
            t,
            zeta,
            true,
        )?;
        zeta = z;
        g_ref = g;
        u_ref = z - 1.0;
        u[i] = z - 1.0;
        gap[i] = z;
        w_vals[i] = inv.sqrt_w_gap(u[i], z);
    }

    let c_star = integrate_adaptive(|x| w.sqrt_w(x), -1.0, 1.0, 1e-15)?;
    let w2: Vec<f64> = w_vals.iter().map(|v| v * v).collect();
    let (gm, gp) = (indicial.gamma_minus, indicial.gamma_plus);
    let amp_plus = gap[n_points - 1] * (gp * t_max).exp();
    let amp_minus = gap[0] * (gm * t_max).exp();
    // analytic tails of w^2 = gamma^2 A^2 e^{-2 gamma |t|}
    let tails = 0.5 * gp * amp_plus.powi(2) * (-2.0 * gp * t_max).exp()
        + 0.5 * gm * amp_minus.powi(2) * (-2.0 * gm * t_max).exp();
    let c_star_w2 = trapezoid(&w2, h) + tails;

    Ok(Profile {
        well: w.clone(),
        indicial,
        t_max,
        h,
        grid_t,
        u,
        w: w_vals,
        gap,
        c_star,
        c_star_w2,
        amp_minus,
        amp_plus,
    })
}

/// Safeguarded Newton for `T(x) = t` where `x` is a gap variable in `(0, 1]`.
/// `T` is decreasing in the gap on the right branch and increasing on the left.
fn invert<T, S>(tf: T, sqrt_w: S, t: f64, start: f64, increasing: bool) -> Result<(f64, f64)>
where
    T: Fn(f64) -> Result<(f64, f64)>,
    S: Fn(f64) -> f64,
{
    // Bracket in the gap variable: the solution lies in (0, start].
    let (mut lo, mut hi) = (0.0_f64, start);
    let mut x = start;
    let mut last = tf(x)?;
    if (last.0 - t).abs() <= 1e-15 * t.abs().max(1.0) {
        return Ok((x, last.1));
    }
    for _ in 0..200 {
        let (tv, _) = last;
        let resid = tv - t;
        // update the bracket: on the right branch T decreases with the gap
        let too_far = if increasing { resid < 0.0 } else { resid > 0.0 };
        if too_far {
            lo = x;
        } else {
            hi = x;
        }
        // dT/dgap = -+1/sqrt(W)
        let slope = if increasing { 1.0 } else { -1.0 } / sqrt_w(x);
        let mut next = x - resid / slope;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        let step = (next - x).abs();
        x = next;
        last = tf(x)?;
        if step <= 4.0 * f64::EPSILON * x || (last.0 - t).abs() <= 1e-15 * t.abs().max(1.0) {
            return Ok((x, last.1));
        }
    }
    Err(Error::QuadratureFailure(format!(
        "profile inversion did not converge at t = {t}"
    )))
}

impl Profile {
    pub fn indicial(&self) -> IndicialData {
        self.indicial
    }

    pub fn well(&self) -> &DoubleWell {
        &self.well
    }

    pub fn c_star(&self) -> f64 {
        self.c_star
    }

    /// `int w*^2 dt` by the trapezoid rule on the tabulation plus analytic tails.
    pub fn c_star_from_w2(&self) -> f64 {
        self.c_star_w2
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn grid_t(&self) -> &[f64] {
        &self.grid_t
    }

    pub fn u_values(&self) -> &[f64] {
        &self.u
    }

    pub fn w_values(&self) -> &[f64] {
        &self.w
    }

    pub fn tail_amplitudes(&self) -> (f64, f64) {
        (self.amp_minus, self.amp_plus)
    }

    /// Interpolated `(u*, w*)`.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let s = self.sample(t);
        (s.u, s.w)
    }

    /// `u*`, `w*` and `w*'`.
    pub fn sample(&self, t: f64) -> ProfileSample {
        let (gm, gp) = (self.indicial.gamma_minus, self.indicial.gamma_plus);
        if t >= self.t_max {
            let e = self.amp_plus * (-gp * t).exp();
            return ProfileSample {
                u: 1.0 - e,
                w: gp * e,
                dw: -gp * gp * e,
            };
        }
        if t <= -self.t_max {
            let e = self.amp_minus * (gm * t).exp();
            return ProfileSample {
                u: e - 1.0,
                w: gm * e,
                dw: gm * gm * e,
            };
        }
        let x = (t + self.t_max) / self.h;
        let i = (x.floor() as usize).min(self.grid_t.len() - 2);
        let s = x - i as f64;
        let h = self.h;
        let (h00, h10, h01, h11) = hermite(s);
        let (dh00, dh10, dh01, dh11) = hermite_d(s);
        let dw0 = 0.5 * self.well.eval_dw(self.u[i]);
        let dw1 = 0.5 * self.well.eval_dw(self.u[i + 1]);
        // interpolate the gap near the wells so u keeps full relative precision
        let (ua, ub) = (self.u[i], self.u[i + 1]);
        let u = if ua >= 0.5 {
            let g = h00 * self.gap[i] + h10 * h * (-self.w[i]) + h01 * self.gap[i + 1]
                + h11 * h * (-self.w[i + 1]);
            1.0 - g
        } else if ub <= -0.5 {
            let g = h00 * self.gap[i] + h10 * h * self.w[i] + h01 * self.gap[i + 1]
                + h11 * h * self.w[i + 1];
            g - 1.0
        } else {
            h00 * ua + h10 * h * self.w[i] + h01 * ub + h11 * h * self.w[i + 1]
        };
        let w = h00 * self.w[i] + h10 * h * dw0 + h01 * self.w[i + 1] + h11 * h * dw1;
        let dw = (dh00 * self.w[i] + dh10 * h * dw0 + dh01 * self.w[i + 1] + dh11 * h * dw1) / h;
        ProfileSample { u, w, dw }
    }

    /// `W''(u*(t)) / 2`.
    pub fn half_ddw(&self, t: f64) -> f64 {
        0.5 * self.well.eval_ddw(self.sample(t).u)
    }

    /// Check every type invariant on the tabulation.
    pub fn check_invariants(&self) -> ProfileInvariants {
        let n = self.u.len();
        let u0 = self.eval(0.0).0;
        let strictly_increasing = self.u.windows(2).all(|p| p[1] > p[0]);
        let inside_wells = self.u.iter().all(|v| v.abs() < 1.0) && self.gap.iter().all(|&g| g > 0.0);
        let hamiltonian_residual = (1..n - 1)
            .map(|i| (self.w[i] * self.w[i] - self.well.eval_w(self.u[i])).abs())
            .fold(0.0, f64::max);
        let w_positive = self.w.iter().all(|&v| v > 0.0);
        let h2 = self.h * self.h;
        let ode_residual = (1..n - 1)
            .map(|i| {
                // second difference of the gap avoids cancellation in u
                let d2 = if self.u[i] >= 0.0 {
                    -(self.gap[i + 1] - 2.0 * self.gap[i] + self.gap[i - 1]) / h2
                } else {
                    (self.gap[i + 1] - 2.0 * self.gap[i] + self.gap[i - 1]) / h2
                };
                let d2 = if self.u[i - 1].signum() != self.u[i + 1].signum() || self.u[i] == 0.0 {
                    (self.u[i + 1] - 2.0 * self.u[i] + self.u[i - 1]) / h2
                } else {
                    d2
                };
                (d2 - 0.5 * self.well.eval_dw(self.u[i])).abs()
            })
            .fold(0.0, f64::max);
        ProfileInvariants {
            u_at_zero: u0,
            strictly_increasing,
            inside_wells,
            hamiltonian_residual,
            w_positive,
            c_star_gap: (self.c_star - self.c_star_w2).abs(),
            ode_residual,
        }
    }
}

fn hermite(s: f64) -> (f64, f64, f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    (
        2.0 * s3 - 3.0 * s2 + 1.0,
        s3 - 2.0 * s2 + s,
        -2.0 * s3 + 3.0 * s2,
        s3 - s2,
    )
}

fn hermite_d(s: f64) -> (f64, f64, f64, f64) {
    let s2 = s * s;
    (
        6.0 * s2 - 6.0 * s,
        3.0 * s2 - 4.0 * s + 1.0,
        -6.0 * s2 + 6.0 * s,
        3.0 * s2 - 2.0 * s,
    )
}

/// Least-squares tail fits of `log(1 -+ u*)` and `log w*` on `[T/2, T]`.
pub fn decay_check(p: &Profile) -> Result<DecayReport> {
    let n = p.grid_t.len();
    let mut right = (Vec::new(), Vec::new(), Vec::new());
    let mut left = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        let t = p.grid_t[i];
        if t >= 0.5 * p.t_max {
            right.0.push(t);
            right.1.push(p.gap[i]);
            right.2.push(p.w[i]);
        } else if t <= -0.5 * p.t_max {
            left.0.push(-t);
            left.1.push(p.gap[i]);
            left.2.push(p.w[i]);
        }
    }
    let fit = |ts: &[f64], vs: &[f64]| -> Result<(f64, f64)> {
        if vs.iter().any(|&v| !(v > f64::MIN_POSITIVE) || !v.is_finite()) {
            return Err(Error::FitFailure(
                "tail values underflow, reduce T_max".into(),
            ));
        }
        let logs: Vec<f64> = vs.iter().map(|v| v.ln()).collect();
        let f = crate::diagnostics::linear_fit(ts, &logs)?;
        Ok((f.slope, f.intercept))
    };
    let (sp, ip) = fit(&right.0, &right.1)?;
    let (sm, im) = fit(&left.0, &left.1)?;
    let (wsp, _) = fit(&right.0, &right.2)?;
    let (wsm, _) = fit(&left.0, &left.2)?;
    Ok(DecayReport {
        amp_minus: im.exp(),
        amp_plus: ip.exp(),
        rate_minus: -sm,
        rate_plus: -sp,
        w_rate_minus: -wsm,
        w_rate_plus: -wsp,
    })
}
