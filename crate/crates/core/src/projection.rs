//! Euclidean projection onto the scaled simplex `{w >= 0, sum(w) = size}`.
//!
//! Two solvers are provided. [`project_simplex_sort`] sorts the scores and
//! scans prefix sums for the support size; it is simple and serves as the
//! reference. [`project_simplex_linear`] finds the same threshold by
//! randomized pivoting, discarding one side of each partition like
//! quickselect, so its expected cost is linear in the input length.
//!
//! Both return the threshold `theta` such that `w_i = max(v_i - theta, 0)`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Seed used for pivot selection when the caller does not supply one.
pub const DEFAULT_PIVOT_SEED: u64 = 42;

/// Default tolerance for [`verify_kkt`].
pub const KKT_TOL: f64 = 1e-7;

/// Relative feasibility tolerance: `|sum(w) - size| <= FEASIBILITY_TOL * max(1, size)`.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub projected: Vec<f64>,
    pub theta: f64,
    /// Number of strictly positive coordinates in the support.
    pub support_size: usize,
}

/// Which solver to use when projecting maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Algorithm {
    Sort,
    #[default]
    Linear,
}

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    #[inline]
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

pub(crate) fn compensated_sum(values: &[f64]) -> f64 {
    let mut acc = CompensatedSum::default();
    for &v in values {
        acc.add(v);
    }
    acc.value()
}

fn validate(values: &[f64], size: f64) -> Result<()> {
    if values.is_empty() {
        return Err(Error::EmptyVector);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    if !size.is_finite() {
        return Err(Error::NonFinite);
    }
    if size < 0.0 {
        return Err(Error::NegativeConstraint);
    }
    Ok(())
}

/// The `size == 0` case: the only feasible point is zero. Theta is placed
/// just above the maximum so that the thresholding form still holds.
fn zero_projection(values: &[f64]) -> ProjectionResult {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ProjectionResult {
        projected: vec![0.0; values.len()],
        theta: max.next_up(),
        support_size: 0,
    }
}

fn threshold(values: &[f64], theta: f64) -> ProjectionResult {
    let mut support_size = 0;
    let projected = values
        .iter()
        .map(|&v| {
            let w = (v - theta).max(0.0);
            if w > 0.0 {
                support_size += 1;
            }
            w
        })
        .collect();
    ProjectionResult {
        projected,
        theta,
        support_size,
    }
}

/// Sort-based projection onto `{w >= 0, sum(w) = size}`.
pub fn project_simplex_sort(values: &[f64], size: f64) -> Result<ProjectionResult> {
    validate(values, size)?;
    if size == 0.0 {
        return Ok(zero_projection(values));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));

    let mut prefix = CompensatedSum::default();
    let mut best = (0.0, 0usize);
    for (j, &u) in sorted.iter().enumerate() {
        prefix.add(u);
        let rho = j + 1;
        let theta = (prefix.value() - size) / rho as f64;
        if u - theta > 0.0 {
            best = (prefix.value(), rho);
        }
    }
    // rho >= 1 whenever size > 0: the largest score always passes.
    let (sum, rho) = best;
    Ok(threshold(values, (sum - size) / rho as f64))
}

/// Randomized expected-linear projection onto `{w >= 0, sum(w) = size}`,
/// with pivots drawn from the default seed.
pub fn project_simplex_linear(values: &[f64], size: f64) -> Result<ProjectionResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_PIVOT_SEED);
    project_simplex_linear_with(values, size, &mut rng)
}

/// Randomized expected-linear projection with a caller-supplied pivot source.
///
/// Each round picks a random pivot from the unresolved set `U`, splits `U`
/// into `G = {u >= pivot}` and `L = {u < pivot}`, and tests whether the
/// pivot lies inside the support: `(s + ds) - (rho + drho) * pivot < size`.
/// If so, `G` joins the support and the search continues in `L`; otherwise
/// the search continues in `G` without the pivot and its copies.
pub fn project_simplex_linear_with<R: Rng + ?Sized>(
    values: &[f64],
    size: f64,
    rng: &mut R,
) -> Result<ProjectionResult> {
    validate(values, size)?;
    if size == 0.0 {
        return Ok(zero_projection(values));
    }

    let mut buf = values.to_vec();
    let mut lo = 0usize;
    let mut hi = buf.len();
    let mut s = CompensatedSum::default();
    let mut rho = 0usize;

    while lo < hi {
        let pick = rng.random_range(lo..hi);
        buf.swap(lo, pick);
        let pivot = buf[lo];

        // buf[lo..eq] == pivot, buf[eq..mid] > pivot, buf[mid..hi] < pivot
        let mut delta_s = CompensatedSum::default();
        delta_s.add(pivot);
        let mut eq = lo + 1;
        let mut mid = lo + 1;
        for i in lo + 1..hi {
            let x = buf[i];
            if x >= pivot {
                delta_s.add(x);
                buf.swap(i, mid);
                if x == pivot {
                    buf.swap(mid, eq);
                    eq += 1;
                }
                mid += 1;
            }
        }
        let delta_rho = mid - lo;

        let mut trial = s;
        trial.add(delta_s.value());
        let trial_rho = rho + delta_rho;
        if trial.value() - trial_rho as f64 * pivot < size {
            s = trial;
            rho = trial_rho;
            lo = mid;
        } else {
            // theta >= pivot, so copies of the pivot are outside the support
            // too; dropping them together keeps ties from costing O(n^2)
            lo = eq;
            hi = mid;
        }
    }

    Ok(threshold(values, (s.value() - size) / rho as f64))
}

/// Dispatch to the chosen solver. `seed` only matters for [`Algorithm::Linear`].
pub fn project_simplex(values: &[f64], size: f64, algorithm: Algorithm, seed: u64) -> Result<ProjectionResult> {
    match algorithm {
        Algorithm::Sort => project_simplex_sort(values, size),
        Algorithm::Linear => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            project_simplex_linear_with(values, size, &mut rng)
        }
    }
}

/// Check the optimality conditions of a projection result against `values`.
///
/// Passes iff the result sums to `size`, is nonnegative, matches
/// `values - theta` on its support, and has `values - theta <= 0` off it
/// (all within `tol`).
pub fn verify_kkt(values: &[f64], result: &ProjectionResult, size: f64, tol: f64) -> Result<bool> {
    if values.len() != result.projected.len() {
        return Err(Error::LengthMismatch {
            expected: values.len(),
            actual: result.projected.len(),
        });
    }
    let total = compensated_sum(&result.projected);
    if (total - size).abs() > tol {
        return Ok(false);
    }
    let theta = result.theta;
    let ok = values.iter().zip(&result.projected).all(|(&v, &w)| {
        if w < -tol {
            false
        } else if w > tol {
            (w - (v - theta)).abs() <= tol
        } else {
            v - theta <= tol
        }
    });
    Ok(ok)
}
