//! Per-region cubic macroscopic fundamental diagrams.
//!
//! `G(N) = β₃N³ + β₂N² + β₁N`, fitted by least squares through the origin.
//! The critical accumulation is the argmax of the cubic on the fitted range.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::netmodel::RegionId;

/// Samples required per region before a fit is attempted.
pub const MIN_SAMPLES: usize = 10;
/// The argmax search extends this far beyond the largest observed accumulation.
pub const RANGE_EXTENSION: f64 = 1.2;
const SCAN_POINTS: usize = 20_000;

#[derive(Debug, Error, PartialEq)]
pub enum MfdError {
    #[error("unknown region {0}")]
    UnknownRegion(usize),
    #[error("region {region}: {got} samples, need at least {MIN_SAMPLES}")]
    TooFewSamples { region: usize, got: usize },
    #[error("region {region}: samples do not span an accumulation range (rank-deficient)")]
    RankDeficient { region: usize },
    #[error("region {region}: fitted cubic has no positive maximum on [0, {upper}]")]
    NoCriticalPoint { region: usize, upper: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionMfd {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub n_crit: f64,
    /// Upper end of the range the critical point was searched on.
    pub n_max: f64,
}

impl RegionMfd {
    /// Builds a region curve from given coefficients. With `upper = None` the
    /// critical accumulation is the first positive local maximum of the cubic.
    pub fn from_coefficients(
        beta1: f64,
        beta2: f64,
        beta3: f64,
        upper: Option<f64>,
    ) -> Result<RegionMfd, MfdError> {
        let (n_crit, _) = critical_point(beta1, beta2, beta3, upper)
            .ok_or(MfdError::NoCriticalPoint {
                region: 0,
                upper: upper.unwrap_or(f64::INFINITY),
            })?;
        Ok(RegionMfd {
            beta1,
            beta2,
            beta3,
            n_crit,
            n_max: upper.unwrap_or(n_crit * RANGE_EXTENSION),
        })
    }

    /// Raw cubic value, possibly negative.
    pub fn raw(&self, n: f64) -> f64 {
        ((self.beta3 * n + self.beta2) * n + self.beta1) * n
    }

    /// Completion flow, veh/s, clamped at zero.
    pub fn flow(&self, n: f64) -> f64 {
        self.raw(n).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfdModel {
    regions: Vec<RegionMfd>,
}

impl MfdModel {
    pub fn new(regions: Vec<RegionMfd>) -> Self {
        MfdModel { regions }
    }

    pub fn regions(&self) -> &[RegionMfd] {
        &self.regions
    }

    pub fn region(&self, r: RegionId) -> Result<&RegionMfd, MfdError> {
        self.regions
            .get(r.idx())
            .ok_or(MfdError::UnknownRegion(r.idx()))
    }

    pub fn evaluate(&self, r: RegionId, n: f64) -> Result<f64, MfdError> {
        Ok(self.region(r)?.flow(n))
    }

    pub fn n_crit(&self, r: RegionId) -> f64 {
        self.regions[r.idx()].n_crit
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfdSample {
    pub region: RegionId,
    /// Mean accumulation over the window, veh.
    pub accumulation: f64,
    /// Completion flow over the window, veh/s.
    pub flow: f64,
    pub window: usize,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: MfdModel,
    pub warnings: Vec<String>,
}

/// Fits one cubic per region. Regions are `0..region_count`.
pub fn fit(samples: &[MfdSample], region_count: usize) -> Result<FitReport, MfdError> {
    let mut warnings = Vec::new();
    let mut regions = Vec::with_capacity(region_count);
    for r in 0..region_count {
        let mut pts: Vec<(f64, f64)> = samples
            .iter()
            .filter(|s| s.region.idx() == r)
            .map(|s| (s.accumulation, s.flow))
            .collect();
        if pts.len() < MIN_SAMPLES {
            return Err(MfdError::TooFewSamples {
                region: r,
                got: pts.len(),
            });
        }
        // Fixed summation order makes the fit independent of sample order.
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let (b1, b2, b3) = fit_cubic(&pts).ok_or(MfdError::RankDeficient { region: r })?;
        let n_obs = pts.last().map(|p| p.0).unwrap_or(0.0);
        let upper = n_obs * RANGE_EXTENSION;
        let (n_crit, unimodal) =
            critical_point(b1, b2, b3, Some(upper)).ok_or(MfdError::NoCriticalPoint {
                region: r,
                upper,
            })?;
        if !unimodal {
            let msg = format!("region {r}: fitted cubic is not unimodal on [0, {upper:.1}]; using scan argmax");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        regions.push(RegionMfd {
            beta1: b1,
            beta2: b2,
            beta3: b3,
            n_crit,
            n_max: upper,
        });
    }
    Ok(FitReport {
        model: MfdModel::new(regions),
        warnings,
    })
}

/// Least-squares cubic through the origin. Returns `None` when the samples
/// cannot determine three coefficients.
fn fit_cubic(pts: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    let scale = pts.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return None;
    }
    let distinct_nonzero = {
        let mut xs: Vec<f64> = pts.iter().map(|p| p.0).filter(|x| *x != 0.0).collect();
        xs.dedup();
        xs.len()
    };
    if distinct_nonzero < 3 {
        return None;
    }
    let x = DMatrix::from_fn(pts.len(), 3, |i, k| (pts[i].0 / scale).powi(k as i32 + 1));
    let y = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1));
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > smax * 1e-12) {
        return None;
    }
    let a = svd.solve(&y, 0.0).ok()?;
    Some((a[0] / scale, a[1] / scale.powi(2), a[2] / scale.powi(3)))
}

/// Argmax of the cubic on `[0, upper]` (or the first positive local maximum
/// when `upper` is `None`), plus whether the cubic is unimodal there.
fn critical_point(b1: f64, b2: f64, b3: f64, upper: Option<f64>) -> Option<(f64, bool)> {
    let g = |n: f64| ((b3 * n + b2) * n + b1) * n;
    // G'(N) = 3β₃N² + 2β₂N + β₁; G''(N) = 6β₃N + 2β₂.
    let roots = quadratic_roots(3.0 * b3, 2.0 * b2, b1);
    let local_max: Vec<f64> = roots
        .iter()
        .copied()
        .filter(|&n| n > 0.0 && 6.0 * b3 * n + 2.0 * b2 < 0.0)
        .collect();
    let local_min_inside = |hi: f64| {
        roots
            .iter()
            .any(|&n| n > 0.0 && n < hi && 6.0 * b3 * n + 2.0 * b2 > 0.0)
    };
    match upper {
        None => {
            let n = local_max.into_iter().fold(f64::INFINITY, f64::min);
            (n.is_finite() && g(n) > 0.0).then_some((n, !local_min_inside(n)))
        }
        Some(hi) => {
            if !(hi > 0.0) {
                return None;
            }
            let mut best = (hi, g(hi));
            for n in local_max.iter().copied().filter(|&n| n <= hi) {
                if g(n) > best.1 {
                    best = (n, g(n));
                }
            }
            let unimodal = b1 >= 0.0 && !local_min_inside(hi);
            let closed_form = best;
            // Dense scan as a cross-check of the closed form.
            let step = hi / SCAN_POINTS as f64;
            let scan = (0..=SCAN_POINTS)
                .map(|k| k as f64 * step)
                .map(|n| (n, g(n)))
                .fold((0.0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
            let chosen = if scan.1 > closed_form.1 + 1e-12 * closed_form.1.abs().max(1.0) {
                scan
            } else {
                closed_form
            };
            (chosen.1 > 0.0).then_some((chosen.0, unimodal))
        }
    }
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        return if b != 0.0 { vec![-c / b] } else { vec![] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    // Numerically stable form.
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let mut r = vec![q / a];
    if q != 0.0 {
        r.push(c / q);
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Region coefficients as printed in the source table (region 4's leading
    /// exponent read as 1e-9), with the printed critical accumulations.
    pub(crate) const TABLE: [(f64, f64, f64, f64); 6] = [
        (4.46e-3, -1.57e-6, 1.44e-10, 1946.0),
        (5.04e-3, -1.65e-6, 1.39e-10, 2077.0),
        (6.59e-3, -3.40e-6, 4.50e-10, 1310.0),
        (5.46e-3, -2.21e-6, -1.46e-9, 721.0),
        (4.31e-3, -9.18e-7, -2.59e-10, 1454.0),
        (4.95e-3, -1.49e-6, -7.38e-10, 967.0),
    ];

    fn synthetic(b1: f64, b2: f64, b3: f64, n: usize, max: f64) -> Vec<MfdSample> {
        (0..n)
            .map(|k| {
                let acc = max * (k as f64 + 1.0) / n as f64;
                MfdSample {
                    region: RegionId(0),
                    accumulation: acc,
                    flow: ((b3 * acc + b2) * acc + b1) * acc,
                    window: k,
                }
            })
            .collect()
    }

    #[test]
    fn evaluate_at_zero_is_zero() {
        let m = MfdModel::new(vec![RegionMfd::from_coefficients(4.46e-3, -1.57e-6, 1.44e-10, None).unwrap()]);
        assert_eq!(m.evaluate(RegionId(0), 0.0).unwrap(), 0.0);
    }

    #[test]
    fn evaluate_region_one_at_1000() {
        let r = RegionMfd::from_coefficients(4.46e-3, -1.57e-6, 1.44e-10, None).unwrap();
        assert!((r.flow(1000.0) - 3.034).abs() < 1e-9);
    }

    #[test]
    fn evaluate_clamps_negative_cubic() {
        let r = RegionMfd::from_coefficients(4.95e-3, -1.49e-6, -7.38e-10, None).unwrap();
        assert!(r.raw(5000.0) < 0.0);
        assert_eq!(r.flow(5000.0), 0.0);
    }

    #[test]
    fn unknown_region_is_an_error() {
        let m = MfdModel::new(vec![]);
        assert_eq!(m.evaluate(RegionId(3), 1.0), Err(MfdError::UnknownRegion(3)));
    }

    #[test]
    fn table_critical_accumulations_within_one_percent() {
        for (k, &(b1, b2, b3, crit)) in TABLE.iter().enumerate() {
            let r = RegionMfd::from_coefficients(b1, b2, b3, None).unwrap();
            let rel = (r.n_crit - crit).abs() / crit;
            assert!(rel < 0.01, "region {}: {} vs {crit}", k + 1, r.n_crit);
        }
    }

    #[test]
    fn noiseless_fit_recovers_coefficients() {
        let (b1, b2, b3) = (5e-3, -1e-6, -1e-10);
        let report = fit(&synthetic(b1, b2, b3, 60, 4000.0), 1).unwrap();
        let r = report.model.regions()[0];
        for (got, want) in [(r.beta1, b1), (r.beta2, b2), (r.beta3, b3)] {
            assert!(((got - want) / want).abs() <= 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn degenerate_samples_are_rank_deficient() {
        let mut s: Vec<MfdSample> = (0..12)
            .map(|w| MfdSample { region: RegionId(0), accumulation: 0.0, flow: 0.0, window: w })
            .collect();
        s.push(MfdSample { region: RegionId(0), accumulation: 100.0, flow: 0.3, window: 12 });
        assert_eq!(fit(&s, 1).unwrap_err(), MfdError::RankDeficient { region: 0 });
    }

    #[test]
    fn too_few_samples() {
        let s = synthetic(5e-3, -1e-6, -1e-10, 5, 1000.0);
        assert_eq!(fit(&s, 1).unwrap_err(), MfdError::TooFewSamples { region: 0, got: 5 });
    }

    #[test]
    fn fit_is_order_invariant() {
        let mut s = synthetic(5e-3, -1.2e-6, -1e-10, 40, 3000.0);
        for (k, x) in s.iter_mut().enumerate() {
            x.flow *= 1.0 + 0.03 * ((k * 7919 % 13) as f64 / 13.0 - 0.5);
        }
        let a = fit(&s, 1).unwrap().model;
        s.reverse();
        s.swap(3, 17);
        let b = fit(&s, 1).unwrap().model;
        assert_eq!(a, b);
    }

    #[test]
    fn argmax_dominates_sampled_range() {
        let s = synthetic(5e-3, -1.2e-6, -1e-10, 50, 3000.0);
        let r = fit(&s, 1).unwrap().model.regions()[0];
        let top = r.flow(r.n_crit);
        for x in &s {
            assert!(top >= r.flow(x.accumulation) - 1e-12);
        }
        assert!(top > 0.0);
    }

    #[test]
    fn quadratic_roots_stable() {
        let mut r = quadratic_roots(1.0, -3.0, 2.0);
        r.sort_by(f64::total_cmp);
        assert!((r[0] - 1.0).abs() < 1e-12 && (r[1] - 2.0).abs() < 1e-12);
    }
}
