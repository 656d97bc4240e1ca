//! Solvers for `R = W R + Z`, i.e. `R = (I − W)⁻¹ Z`.
//!
//! [`solve_utilities`] is the plain fixed-point iteration `R_t = W R_{t−1} + Z`
//! from `R_0 = 0`; it converges because every row of `W` sums to less than
//! one. [`solve_utilities_direct`] is dense Gaussian elimination for small
//! systems and [`solve_utilities_banded`] eliminates in a caller-supplied
//! state order in which `I − W` is banded (the reduced homogeneous chain).

use serde::{Deserialize, Serialize};

use crate::dynamics::{PayoffVector, TransitionMatrix};
use crate::error::{GameError, Result};
use crate::state_space::{Mode, StateSpace};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;
/// Largest system accepted by the dense solver.
pub const DIRECT_SIZE_LIMIT: usize = 4096;
/// Largest half-bandwidth accepted by the banded solver.
pub const BAND_LIMIT: usize = 64;

/// Expected utility of one player in every state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityVector {
    pub values: Vec<f64>,
    /// ∞-norm of `W R + Z − R` (an upper bound for the iterative solver).
    pub residual: f64,
    /// Fixed-point iterations; 0 for direct solves.
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

fn check_dims(w: &TransitionMatrix, z: &PayoffVector) -> Result<()> {
    if w.size() != z.len() {
        return Err(GameError::Domain(format!(
            "matrix has {} rows but payoff vector has {} entries",
            w.size(),
            z.len()
        )));
    }
    Ok(())
}

fn inf_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `‖W R + Z − R‖_∞`.
pub fn residual(w: &TransitionMatrix, z: &PayoffVector, r: &[f64]) -> f64 {
    let mut next = vec![0.0; r.len()];
    w.apply_affine(r, z.values(), &mut next);
    inf_norm_diff(&next, r)
}

/// Fixed-point iteration until successive iterates differ by at most `tol`.
pub fn solve_utilities(
    w: &TransitionMatrix,
    z: &PayoffVector,
    tol: f64,
    max_iter: usize,
) -> Result<UtilityVector> {
    check_dims(w, z)?;
    if tol.is_nan() || tol <= 0.0 {
        return Err(GameError::Domain(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let n = w.size();
    let mut current = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut delta = f64::INFINITY;
    for iteration in 1..=max_iter {
        w.apply_affine(&current, z.values(), &mut next);
        // delta is the residual of `current`; `next` has residual ≤ ρ·delta.
        delta = inf_norm_diff(&next, &current);
        std::mem::swap(&mut current, &mut next);
        if delta <= tol {
            return Ok(UtilityVector {
                values: current,
                residual: delta,
                iterations: iteration,
            });
        }
        if !delta.is_finite() {
            break;
        }
    }
    Err(GameError::NonConvergence {
        iterations: max_iter,
        residual: delta,
    })
}

/// Dense Gaussian elimination with partial pivoting on `(I − W) R = Z`.
pub fn solve_utilities_direct(w: &TransitionMatrix, z: &PayoffVector) -> Result<UtilityVector> {
    check_dims(w, z)?;
    let n = w.size();
    if n > DIRECT_SIZE_LIMIT {
        return Err(GameError::DirectSolveTooLarge {
            size: n,
            limit: DIRECT_SIZE_LIMIT,
        });
    }
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        a[i * n + i] = 1.0;
        for (c, v) in w.row(i) {
            a[i * n + c] -= v;
        }
    }
    let mut b = z.values().to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&p, &q| a[p * n + col].abs().total_cmp(&a[q * n + col].abs()))
            .expect("non-empty pivot range");
        if a[pivot * n + col] == 0.0 {
            return Err(GameError::Domain("I − W is singular".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    let res = residual(w, z, &x);
    Ok(UtilityVector {
        values: x,
        residual: res,
        iterations: 0,
    })
}

/// Gaussian elimination of `I − W` after permuting states into `order`
/// (`order[p]` is the state placed at position `p`).
///
/// No pivoting is needed: `I − W` is strictly row diagonally dominant and
/// elimination preserves that.
pub fn solve_utilities_banded(
    w: &TransitionMatrix,
    z: &PayoffVector,
    order: &[usize],
) -> Result<UtilityVector> {
    check_dims(w, z)?;
    let n = w.size();
    if order.len() != n {
        return Err(GameError::Domain(format!(
            "ordering has {} entries for {n} states",
            order.len()
        )));
    }
    let mut position = vec![usize::MAX; n];
    for (p, &s) in order.iter().enumerate() {
        if s >= n || position[s] != usize::MAX {
            return Err(GameError::Domain("ordering is not a permutation".into()));
        }
        position[s] = p;
    }
    let mut band = 0;
    for (i, j, _) in w.triples() {
        band = band.max(position[i].abs_diff(position[j]));
    }
    if band > BAND_LIMIT {
        return Err(GameError::BandTooWide {
            bandwidth: band,
            limit: BAND_LIMIT,
        });
    }

    // Row p holds columns p−band ..= p+band at offsets 0 ..= 2·band.
    let width = 2 * band + 1;
    let mut a = vec![0.0; n * width];
    let at = |p: usize, q: usize| p * width + (q + band - p);
    let mut b = vec![0.0; n];
    for i in 0..n {
        let p = position[i];
        a[at(p, p)] += 1.0;
        for (c, v) in w.row(i) {
            a[at(p, position[c])] -= v;
        }
        b[p] = z.values()[i];
    }
    for col in 0..n {
        let diag = a[at(col, col)];
        for row in col + 1..(col + band + 1).min(n) {
            let factor = a[at(row, col)] / diag;
            if factor == 0.0 {
                continue;
            }
            for k in col..(col + band + 1).min(n) {
                a[at(row, k)] -= factor * a[at(col, k)];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut y = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..(row + band + 1).min(n) {
            acc -= a[at(row, k)] * y[k];
        }
        y[row] = acc / a[at(row, row)];
    }
    let values: Vec<f64> = (0..n).map(|i| y[position[i]]).collect();
    let res = residual(w, z, &values);
    Ok(UtilityVector {
        values,
        residual: res,
        iterations: 0,
    })
}

/// Solver choice for a state space: banded elimination on the reduced
/// chain, fixed-point iteration on the subset lattice.
pub fn solve_for_space(
    w: &TransitionMatrix,
    z: &PayoffVector,
    space: &StateSpace,
    options: SolverOptions,
) -> Result<UtilityVector> {
    match (space.mode(), space.banded_order()) {
        (Mode::Reduced, Some(order)) => solve_utilities_banded(w, z, &order),
        _ => solve_utilities(w, z, options.tol, options.max_iter),
    }
}
