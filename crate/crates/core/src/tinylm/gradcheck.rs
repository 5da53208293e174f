//! Finite-difference gradient verification.
//!
//! Central differences over a seeded random subset of parameter coordinates.
//! This is the independent oracle behind every gradient acceptance check in
//! the crate; it never calls the analytic backward path it verifies.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tinylm::model::LmParams;
use crate::tinylm::train::Gradients;

/// Outcome of a finite-difference check.
#[derive(Debug, Clone, Copy)]
pub struct FiniteDiffReport {
    /// Largest relative error over the checked coordinates.
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_coord: usize,
    /// Number of coordinates actually checked.
    pub coords_checked: usize,
}

/// Compares `grads` against central finite differences of `loss_fn` at
/// `params`, over `coords` distinct seeded random coordinates (all of them if
/// the model has fewer). The relative error denominator is floored at 1e-6 so
/// coordinates with (near-)zero true gradient do not divide by noise.
pub fn finite_diff_check<T, F>(
    params: &LmParams<T>,
    grads: &Gradients<T>,
    loss_fn: F,
    eps: f64,
    coords: usize,
    seed: u64,
) -> FiniteDiffReport
where
    T: Scalar,
    F: Fn(&LmParams<T>) -> T,
{
    let total = params.coord_count();
    let n = coords.min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = HashSet::with_capacity(n);
    while chosen.len() < n {
        chosen.insert(rng.gen_range(0..total));
    }

    let mut probe = params.clone();
    let mut report = FiniteDiffReport {
        max_rel_error: 0.0,
        worst_coord: 0,
        coords_checked: n,
    };
    let step = T::from_f64_lossy(eps);
    for flat in chosen {
        let original = params.get_coord(flat);
        probe.set_coord(flat, original + step);
        let up = loss_fn(&probe).to_f64_lossy();
        probe.set_coord(flat, original - step);
        let down = loss_fn(&probe).to_f64_lossy();
        probe.set_coord(flat, original);

        let fd = (up - down) / (2.0 * eps);
        let analytic = grads.get_coord(flat).to_f64_lossy();
        let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_coord = flat;
        }
    }
    report
}
