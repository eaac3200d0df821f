//! Discrete surrogates for weighted, eps-scaled Hoelder norms.
//!
//! A `C^{k,alpha}_eps` norm is replaced by the sum of weighted sup norms of
//! divided differences up to order `k`, each scaled by `eps^j`, plus the largest
//! scaled difference quotient of the top-order differences over grid pairs
//! within ten cells.

use serde::{Deserialize, Serialize};

/// Exponential weight rates in the stretched variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub delta_minus: f64,
    pub delta_plus: f64,
}

impl WeightSpec {
    pub const ZERO: WeightSpec = WeightSpec {
        delta_minus: 0.0,
        delta_plus: 0.0,
    };

    pub fn new(delta_minus: f64, delta_plus: f64) -> Self {
        Self {
            delta_minus,
            delta_plus,
        }
    }

    /// `log phi_delta(t) = delta_+ log(1 + e^t) + delta_- log(1 + e^{-t})`.
    pub fn log_weight(&self, t: f64) -> f64 {
        self.delta_plus * softplus(t) + self.delta_minus * softplus(-t)
    }

    pub fn weight(&self, t: f64) -> f64 {
        self.log_weight(t).exp()
    }

    pub fn negated(&self) -> Self {
        Self::new(-self.delta_minus, -self.delta_plus)
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

pub const HOELDER_ALPHA: f64 = 0.5;
const PAIR_RANGE: usize = 10;

/// `eps`-scaled `C^{order, alpha}` surrogate of uniformly sampled `v`.
///
/// `weight[i]` multiplies every quantity at node `i`.
pub fn scaled_norm_1d(v: &[f64], h: f64, eps: f64, order: usize, weight: &[f64]) -> f64 {
    let n = v.len();
    let mut total = sup_weighted(v, weight);
    let mut diffs: Vec<f64> = v.to_vec();
    for j in 1..=order {
        if diffs.len() < 3 {
            break;
        }
        // centred differences on interior nodes, shrinking the window by one each side
        let next: Vec<f64> = (1..diffs.len() - 1)
            .map(|i| (diffs[i + 1] - diffs[i - 1]) / (2.0 * h))
            .collect();
        let offset = (n - next.len()) / 2;
        let w = &weight[offset..offset + next.len()];
        total += eps.powi(j as i32) * sup_weighted(&next, w);
        diffs = next;
    }
    let offset = (n - diffs.len()) / 2;
    let w = &weight[offset..offset + diffs.len()];
    total + eps.powf(order as f64 + HOELDER_ALPHA) * holder_seminorm_1d(&diffs, h, w)
}

fn sup_weighted(v: &[f64], w: &[f64]) -> f64 {
    v.iter().zip(w).map(|(a, b)| (a * b).abs()).fold(0.0, f64::max)
}

/// Largest `|v_i - v_j| / |t_i - t_j|^alpha` over pairs within ten cells.
pub fn holder_seminorm_1d(v: &[f64], h: f64, w: &[f64]) -> f64 {
    let mut best: f64 = 0.0;
    for i in 0..v.len() {
        for k in 1..=PAIR_RANGE {
            if i + k >= v.len() {
                break;
            }
            let wt = w[i].min(w[i + k]);
            let q = (v[i + k] - v[i]).abs() / (k as f64 * h).powf(HOELDER_ALPHA);
            best = best.max(wt * q);
        }
    }
    best
}

/// Same surrogate on a tensor grid, `values[i * ny + j]`, with the second
/// direction optionally periodic.
pub fn scaled_norm_2d(
    values: &[f64],
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
    eps: f64,
    order: usize,
    weight_x: &[f64],
    periodic_y: bool,
) -> f64 {
    let mut total = 0.0;
    let mut best_rows: f64 = 0.0;
    for j in 0..ny {
        let col: Vec<f64> = (0..nx).map(|i| values[i * ny + j]).collect();
        best_rows = best_rows.max(scaled_norm_1d(&col, hx, eps, order, weight_x));
    }
    total += best_rows;
    let mut best_cols: f64 = 0.0;
    if ny >= 3 {
        for i in 0..nx {
            let mut row: Vec<f64> = values[i * ny..(i + 1) * ny].to_vec();
            if periodic_y {
                // wrap so every node gets centred differences
                let (first, last) = (row[0], row[ny - 1]);
                row.insert(0, last);
                row.push(first);
            }
            let w = vec![weight_x[i]; row.len()];
            best_cols = best_cols.max(scaled_norm_1d(&row, hy, eps, order, &w));
        }
    }
    total + best_cols
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_matches_definition() {
        let d = WeightSpec::new(0.5, -1.0);
        for &t in &[-30.0, -1.0, 0.0, 2.0, 40.0] {
            let direct = (1.0 + f64::exp(t)).powf(-1.0) * (1.0 + f64::exp(-t)).powf(0.5);
            assert!((d.weight(t) - direct).abs() <= 1e-12 * direct);
        }
    }

    #[test]
    fn norm_of_constant_is_sup() {
        let v = vec![2.0; 50];
        let w = vec![1.0; 50];
        assert_eq!(scaled_norm_1d(&v, 0.1, 0.5, 2, &w), 2.0);
    }

    #[test]
    fn derivative_terms_scale_with_eps() {
        let n = 401;
        let h = 0.01;
        let v: Vec<f64> = (0..n).map(|i| (i as f64 * h).sin()).collect();
        let w = vec![1.0; n];
        let small = scaled_norm_1d(&v, h, 1e-3, 2, &w);
        let large = scaled_norm_1d(&v, h, 1.0, 2, &w);
        assert!((small - 1.0).abs() < 1e-2);
        assert!(large > 2.5);
    }
}
