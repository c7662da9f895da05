//! L∞ gaps between solver output and the uniform-grid HSMM.
//!
//! HSMM marginals live on bin centers and are interpolated linearly to the
//! solver nodes. Filtered marginals jump at observations, so nodes within
//! 1.5 bins of an observation are compared only through the observation
//! itself (post-update value against the HSMM bin holding it).

use ctsmc::baseline::{HsmmMarginal, HsmmResult};
use ctsmc::volterra::NodeKind;
use ctsmc::GridFunction;

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Smoothed marginals are continuous across observations; every node counts.
pub fn smoothed_gap(p_hat: &GridFunction<f64>, hsmm: &HsmmResult<f64>) -> f64 {
    let r = hsmm.marginals_at(HsmmMarginal::Smoothed, &p_hat.times);
    (0..p_hat.len()).fold(0.0, |m, i| m.max(linf(p_hat.row(i), r.row(i))))
}

/// Filtered gap over `alpha` sampled at nodes of the given kinds.
pub fn filtered_gap(alpha: &GridFunction<f64>, kinds: &[NodeKind], obs_times: &[f64], hsmm: &HsmmResult<f64>) -> f64 {
    let h = hsmm.discretization.h;
    let r = hsmm.marginals_at(HsmmMarginal::Filtered, &alpha.times);
    let mut gap: f64 = 0.0;
    for (i, &t) in alpha.times.iter().enumerate() {
        match kinds[i] {
            NodeKind::ObsRight(k) => {
                if let Some(&b) = hsmm.obs_bins.get(k) {
                    gap = gap.max(linf(alpha.row(i), hsmm.filtered.row(b)));
                }
            }
            NodeKind::ObsLeft(_) => {}
            _ => {
                let j = obs_times.partition_point(|&s| s < t);
                let near = [j.checked_sub(1), Some(j)]
                    .into_iter()
                    .flatten()
                    .filter_map(|j| obs_times.get(j))
                    .any(|&s| (s - t).abs() < 1.5 * h);
                if !near {
                    gap = gap.max(linf(alpha.row(i), r.row(i)));
                }
            }
        }
    }
    gap
}

/// Largest deviation of a row sum from one.
pub fn row_sum_error(g: &GridFunction<f64>) -> f64 {
    g.rows().fold(0.0, |m, r| m.max((r.iter().sum::<f64>() - 1.0).abs()))
}
