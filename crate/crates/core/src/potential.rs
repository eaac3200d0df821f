//! Double-well potentials.
//!
//! Wells are polynomials in the order parameter. The polynomial form keeps
//! every derivative exact and lets the profile code factor out the double
//! roots at the wells, which removes the cancellation in `W` near `±1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Real polynomial with coefficients in ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.len() > 1 && *coeffs.last().unwrap() == 0.0 {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Self {
        if self.coeffs.len() == 1 {
            return Self::new(vec![0.0]);
        }
        Self::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| c * k as f64)
                .collect(),
        )
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * factor).collect())
    }

    /// `x -> p(a x + b)`.
    pub fn compose_affine(&self, a: f64, b: f64) -> Self {
        // Horner in polynomial arithmetic.
        let mut out = vec![0.0; self.coeffs.len()];
        for &c in self.coeffs.iter().rev() {
            let mut next = vec![0.0; out.len()];
            for (k, &o) in out.iter().enumerate() {
                if o == 0.0 {
                    continue;
                }
                next[k] += o * b;
                if k + 1 < next.len() {
                    next[k + 1] += o * a;
                }
            }
            next[0] += c;
            out = next;
        }
        Self::new(out)
    }

    /// Long division, returns `(quotient, remainder)`.
    pub fn div_rem(&self, divisor: &Polynomial) -> (Polynomial, Polynomial) {
        let d = divisor.degree();
        let lead = divisor.coeffs[d];
        let mut rem = self.coeffs.clone();
        if self.degree() < d {
            return (Polynomial::new(vec![0.0]), self.clone());
        }
        let mut quot = vec![0.0; self.degree() - d + 1];
        for k in (0..quot.len()).rev() {
            let c = rem[k + d] / lead;
            quot[k] = c;
            for (j, &dc) in divisor.coeffs.iter().enumerate() {
                rem[k + j] -= c * dc;
            }
        }
        rem.truncate(d.max(1));
        (Polynomial::new(quot), Polynomial::new(rem))
    }
}

/// Affine change of variables `u_raw = a u + b` used to move wells to `±1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WellMap {
    pub a: f64,
    pub b: f64,
}

/// A validated double-well potential.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DoubleWell {
    w: Polynomial,
    dw: Polynomial,
    ddw: Polynomial,
    dddw: Polynomial,
    wells: (f64, f64),
    map: WellMap,
    /// `q` in `W = (1 - u^2)^2 q(u)`, present for canonical wells.
    reduced: Option<Polynomial>,
}

/// Decay rates of the profile at `-inf` and `+inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicialData {
    pub gamma_minus: f64,
    pub gamma_plus: f64,
}

impl IndicialData {
    pub fn min(&self) -> f64 {
        self.gamma_minus.min(self.gamma_plus)
    }

    /// Rates of `-d^2 + zeta + W''/2` at the two ends.
    pub fn shifted(&self, zeta: f64) -> Self {
        Self {
            gamma_minus: (zeta + self.gamma_minus * self.gamma_minus).sqrt(),
            gamma_plus: (zeta + self.gamma_plus * self.gamma_plus).sqrt(),
        }
    }
}

const WELL_ZERO_TOL: f64 = 1e-12;

/// The model quartic `(1 - u^2)^2`.
pub fn make_standard_well() -> DoubleWell {
    DoubleWell::from_polynomial(Polynomial::new(vec![1.0, 0.0, -2.0, 0.0, 1.0]), (-1.0, 1.0))
        .expect("quartic well is valid")
}

impl DoubleWell {
    /// Build and validate a polynomial well with user-declared well locations.
    pub fn from_polynomial(w: Polynomial, wells: (f64, f64)) -> Result<Self> {
        let (lo, hi) = wells;
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidPotential("well locations must be finite".into()));
        }
        if lo == hi {
            return Err(Error::DegenerateWells(lo));
        }
        if lo > hi {
            return Err(Error::InvalidPotential(format!(
                "wells must be ordered, got ({lo}, {hi})"
            )));
        }
        let dw = w.derivative();
        let ddw = dw.derivative();
        let dddw = ddw.derivative();
        let map = WellMap {
            a: 0.5 * (hi - lo),
            b: 0.5 * (hi + lo),
        };
        let canonical = lo == -1.0 && hi == 1.0;
        let reduced = if canonical {
            let (q, r) = w.div_rem(&Polynomial::new(vec![1.0, 0.0, -2.0, 0.0, 1.0]));
            let scale = w.coeffs().iter().fold(0.0_f64, |m, c| m.max(c.abs()));
            let rmax = r.coeffs().iter().fold(0.0_f64, |m, c| m.max(c.abs()));
            (rmax <= 1e-10 * scale.max(1.0)).then_some(q)
        } else {
            None
        };
        let well = Self {
            w,
            dw,
            ddw,
            dddw,
            wells,
            map,
            reduced,
        };
        well.validate()?;
        Ok(well)
    }

    /// Polynomial well from ascending coefficients.
    pub fn from_coefficients(coeffs: &[f64], wells: (f64, f64)) -> Result<Self> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidPotential("non-finite coefficient".into()));
        }
        Self::from_polynomial(Polynomial::new(coeffs.to_vec()), wells)
    }

    fn validate(&self) -> Result<()> {
        for &u in [self.wells.0, self.wells.1].iter() {
            let v = self.eval_w(u);
            if v.abs() > WELL_ZERO_TOL {
                return Err(Error::InvalidPotential(format!(
                    "W({u}) = {v:e} is not zero"
                )));
            }
            let d2 = self.eval_ddw(u);
            if d2 <= 0.0 {
                return Err(Error::NondegenerateWellViolation {
                    well: u,
                    second_derivative: d2,
                });
            }
        }
        // Dense positivity sweep over the image of [-2, 2].
        let n = 1000;
        for k in 0..n {
            let x = -2.0 + 4.0 * (k as f64 + 0.5) / n as f64;
            let u = self.map.a * x + self.map.b;
            let v = self.eval_w(u);
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::InvalidPotential(format!(
                    "W({u}) = {v:e} is not positive away from the wells"
                )));
            }
        }
        Ok(())
    }

    pub fn eval_w(&self, u: f64) -> f64 {
        self.w.eval(u)
    }

    pub fn eval_dw(&self, u: f64) -> f64 {
        self.dw.eval(u)
    }

    pub fn eval_ddw(&self, u: f64) -> f64 {
        self.ddw.eval(u)
    }

    pub fn eval_dddw(&self, u: f64) -> f64 {
        self.dddw.eval(u)
    }

    pub fn wells(&self) -> (f64, f64) {
        self.wells
    }

    pub fn map(&self) -> WellMap {
        self.map
    }

    pub fn polynomial(&self) -> &Polynomial {
        &self.w
    }

    pub fn is_canonical(&self) -> bool {
        self.wells == (-1.0, 1.0)
    }

    /// `q` with `W = (1 - u^2)^2 q`, available for canonical wells.
    pub fn reduced(&self) -> Option<&Polynomial> {
        self.reduced.as_ref()
    }

    /// `sqrt(W(u))` without cancellation near canonical wells.
    pub fn sqrt_w(&self, u: f64) -> f64 {
        match &self.reduced {
            Some(q) => (1.0 - u * u).abs() * q.eval(u).max(0.0).sqrt(),
            None => self.eval_w(u).max(0.0).sqrt(),
        }
    }

    /// `c W`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::from_polynomial(self.w.scale(factor), self.wells)
    }

    /// `sup |W'''|` over `[lo, hi]` by dense sampling.
    pub fn sup_dddw(&self, lo: f64, hi: f64) -> f64 {
        let n = 2000;
        (0..=n)
            .map(|k| self.eval_dddw(lo + (hi - lo) * k as f64 / n as f64).abs())
            .fold(0.0, f64::max)
    }
}

/// Move the wells to `±1` via `u -> W(a u + b)`.
pub fn normalize_wells(raw: &DoubleWell) -> Result<(DoubleWell, WellMap)> {
    let (lo, hi) = raw.wells;
    if lo == hi {
        return Err(Error::DegenerateWells(lo));
    }
    let map = WellMap {
        a: 0.5 * (hi - lo),
        b: 0.5 * (hi + lo),
    };
    if map.a == 1.0 && map.b == 0.0 {
        return Ok((raw.clone(), map));
    }
    let w = raw.w.compose_affine(map.a, map.b);
    // Rounding in the composition leaves a small remainder modulo (1 - u^2)^2;
    // drop it so the wells are exact.
    let base = Polynomial::new(vec![1.0, 0.0, -2.0, 0.0, 1.0]);
    let (q, r) = w.div_rem(&base);
    let scale = w.coeffs().iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    let rmax = r.coeffs().iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    let w = if rmax <= 1e-9 * scale.max(1.0) {
        multiply(&base, &q)
    } else {
        w
    };
    let well = DoubleWell::from_polynomial(w, (-1.0, 1.0))?;
    Ok((well, map))
}

fn multiply(a: &Polynomial, b: &Polynomial) -> Polynomial {
    let mut c = vec![0.0; a.coeffs().len() + b.coeffs().len() - 1];
    for (i, x) in a.coeffs().iter().enumerate() {
        for (j, y) in b.coeffs().iter().enumerate() {
            c[i + j] += x * y;
        }
    }
    Polynomial::new(c)
}

/// `gamma_pm = sqrt(W''(well_pm) / 2)`.
pub fn indicial_roots(w: &DoubleWell) -> Result<IndicialData> {
    let (lo, hi) = w.wells;
    let dm = w.eval_ddw(lo);
    let dp = w.eval_ddw(hi);
    for (well, d) in [(lo, dm), (hi, dp)] {
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::NondegenerateWellViolation {
                well,
                second_derivative: d,
            });
        }
    }
    Ok(IndicialData {
        gamma_minus: (0.5 * dm).sqrt(),
        gamma_plus: (0.5 * dp).sqrt(),
    })
}

/// Sixth-order well `(1-u^2)^2 (1/4 + 3u/8 + 3u^2/8)` with `W''(-1) = 2`, `W''(1) = 8`.
pub fn asymmetric_test_well() -> DoubleWell {
    let base = Polynomial::new(vec![1.0, 0.0, -2.0, 0.0, 1.0]);
    let w = multiply(&base, &Polynomial::new(vec![0.25, 0.375, 0.375]));
    DoubleWell::from_polynomial(w, (-1.0, 1.0)).expect("asymmetric well is valid")
}
