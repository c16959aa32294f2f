//! Positioning error series, summary statistics and empirical CDFs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{FrameError, LocalEnu, LocalFrame};
use crate::mechanization::NavState;

/// Thresholds reported as "fraction of epochs below", in meters.
pub const THRESHOLDS: [f64; 3] = [2.0, 1.0, 0.3];
pub const TWO_SIGMA_QUANTILE: f64 = 0.95;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no samples to evaluate")]
    Empty,
    #[error("estimate at t = {t} s lies outside the truth span [{start}, {end}] s")]
    Extrapolation { t: f64, start: f64, end: f64 },
    #[error("truth timestamps must increase strictly (index {0})")]
    TruthOrder(usize),
    #[error("{times} timestamps for {errors} errors")]
    LengthMismatch { times: usize, errors: usize },
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// Error of one estimate epoch against interpolated truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochError {
    pub t: f64,
    pub error_3d: f64,
    pub horizontal: f64,
}

/// Truth positions in the local frame, linearly interpolable in time.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrack {
    times: Vec<f64>,
    pos: Vec<LocalEnu>,
}

impl TruthTrack {
    pub fn new(truth: &[NavState], frame: &LocalFrame) -> Result<Self, EvalError> {
        if truth.is_empty() {
            return Err(EvalError::Empty);
        }
        for (i, w) in truth.windows(2).enumerate() {
            if !(w[1].t > w[0].t) {
                return Err(EvalError::TruthOrder(i + 1));
            }
        }
        let pos = truth
            .iter()
            .map(|s| frame.to_local(&s.pos))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            times: truth.iter().map(|s| s.t).collect(),
            pos,
        })
    }

    pub fn span(&self) -> (f64, f64) {
        (self.times[0], self.times[self.times.len() - 1])
    }

    pub fn at(&self, t: f64) -> Result<LocalEnu, EvalError> {
        let (start, end) = self.span();
        if !(t >= start && t <= end) {
            return Err(EvalError::Extrapolation { t, start, end });
        }
        let hi = self.times.partition_point(|&x| x < t);
        if self.times[hi] == t {
            return Ok(self.pos[hi]);
        }
        let lo = hi - 1;
        let w = (t - self.times[lo]) / (self.times[hi] - self.times[lo]);
        let (a, b) = (self.pos[lo].to_vector(), self.pos[hi].to_vector());
        Ok(LocalEnu::from_vector(&(a + (b - a) * w)))
    }
}

/// Per-epoch 3D and horizontal errors of `est` against linearly interpolated truth.
pub fn error_series(
    est: &[NavState],
    truth: &[NavState],
    frame: &LocalFrame,
) -> Result<Vec<EpochError>, EvalError> {
    let track = TruthTrack::new(truth, frame)?;
    est.iter()
        .map(|s| {
            let reference = track.at(s.t)?;
            let diff = match frame.to_local(&s.pos) {
                Ok(p) => p.to_vector() - reference.to_vector(),
                Err(FrameError::OutOfRange { .. }) => {
                    // far outside the tangent plane: difference in ECEF, resolved at the truth point
                    let earth = &frame.earth;
                    let truth_pos = frame.to_geodetic(&reference)?;
                    earth.ecef_to_enu_rotation(&truth_pos)
                        * (earth.to_ecef(&s.pos) - earth.to_ecef(&truth_pos))
                }
                Err(e) => return Err(e.into()),
            };
            Ok(EpochError {
                t: s.t,
                error_3d: diff.norm(),
                horizontal: diff.xy().norm(),
            })
        })
        .collect()
}

/// RMS and maximum error over one outage window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub start: f64,
    pub end: f64,
    pub n: usize,
    pub rms: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub n: usize,
    pub rms: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    /// Percent of epochs strictly below 2 m, 1 m and 0.3 m.
    pub pct_below: [f64; 3],
    /// Empirical 95th percentile.
    pub two_sigma: f64,
    pub windows: Vec<WindowStats>,
}

/// Nearest-rank percentile of sorted data, `q` in (0, 1].
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

fn rms_of(values: &[f64]) -> f64 {
    (values.iter().map(|e| e * e).sum::<f64>() / values.len() as f64).sqrt()
}

/// Summary statistics of an error series.
///
/// Window statistics cover `[start, end + tail]` of each `(start, end)` pair;
/// windows containing no epochs report NaN.
pub fn summarize(
    times: &[f64],
    errors: &[f64],
    windows: &[(f64, f64)],
    tail: f64,
) -> Result<ErrorStats, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::Empty);
    }
    if times.len() != errors.len() {
        return Err(EvalError::LengthMismatch {
            times: times.len(),
            errors: errors.len(),
        });
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let pct_below =
        THRESHOLDS.map(|th| 100.0 * sorted.partition_point(|&e| e < th) as f64 / n as f64);
    let windows = windows
        .iter()
        .map(|&(start, end)| {
            let inside: Vec<f64> = times
                .iter()
                .zip(errors)
                .filter(|(t, _)| **t >= start && **t <= end + tail)
                .map(|(_, e)| *e)
                .collect();
            let (rms, max) = if inside.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                (
                    rms_of(&inside),
                    inside.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                )
            };
            WindowStats {
                start,
                end,
                n: inside.len(),
                rms,
                max,
            }
        })
        .collect();
    Ok(ErrorStats {
        n,
        rms: rms_of(&sorted),
        mean: sorted.iter().sum::<f64>() / n as f64,
        median: percentile_sorted(&sorted, 0.5),
        max: sorted[n - 1],
        pct_below,
        two_sigma: percentile_sorted(&sorted, TWO_SIGMA_QUANTILE),
        windows,
    })
}

/// 3D and horizontal statistics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub error_3d: ErrorStats,
    pub horizontal: ErrorStats,
}

pub fn summarize_run(
    series: &[EpochError],
    windows: &[(f64, f64)],
    tail: f64,
) -> Result<RunStats, EvalError> {
    let times: Vec<f64> = series.iter().map(|e| e.t).collect();
    let e3: Vec<f64> = series.iter().map(|e| e.error_3d).collect();
    let eh: Vec<f64> = series.iter().map(|e| e.horizontal).collect();
    Ok(RunStats {
        error_3d: summarize(&times, &e3, windows, tail)?,
        horizontal: summarize(&times, &eh, windows, tail)?,
    })
}

/// Empirical CDF as (error, cumulative fraction) pairs, one per sample.
pub fn cdf_points(errors: &[f64]) -> Result<Vec<(f64, f64)>, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, e)| (e, (i + 1) as f64 / n))
        .collect())
}

/// Row labels of the summary table, in display order.
pub const ROW_LABELS: [&str; 6] = [
    "RMS (m)",
    "Max (m)",
    "<2 m (%)",
    "<1 m (%)",
    "<30 cm (%)",
    "2σ (m)",
];

impl ErrorStats {
    pub fn rows(&self) -> [f64; 6] {
        [
            self.rms,
            self.max,
            self.pct_below[0],
            self.pct_below[1],
            self.pct_below[2],
            self.two_sigma,
        ]
    }

    /// True if `self` is at least as good as `other` on every row and strictly better on one.
    pub fn dominates(&self, other: &ErrorStats) -> bool {
        let (a, b) = (self.rows(), other.rows());
        let lower_better = [true, true, false, false, false, true];
        let better_or_equal = (0..6).all(|i| {
            if lower_better[i] {
                a[i] <= b[i]
            } else {
                a[i] >= b[i]
            }
        });
        let strictly = (0..6).any(|i| {
            if lower_better[i] {
                a[i] < b[i]
            } else {
                a[i] > b[i]
            }
        });
        better_or_equal && strictly
    }
}

/// Side-by-side aligned text table of named statistics.
pub fn format_table(columns: &[(&str, &ErrorStats)]) -> String {
    let label_w = ROW_LABELS
        .iter()
        .map(|l| l.chars().count())
        .max()
        .unwrap_or(0);
    let col_w = columns
        .iter()
        .map(|(name, _)| name.chars().count())
        .max()
        .unwrap_or(0)
        .max(10);
    let mut out = format!("{:<label_w$}", "");
    for (name, _) in columns {
        out.push_str(&format!("  {name:>col_w$}"));
    }
    out.push('\n');
    for (r, label) in ROW_LABELS.iter().enumerate() {
        out.push_str(label);
        out.push_str(&" ".repeat(label_w - label.chars().count()));
        for (_, stats) in columns {
            out.push_str(&format!("  {:>col_w$.3}", stats.rows()[r]));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{Attitude, EarthModel, Geodetic};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame() -> LocalFrame {
        LocalFrame::new(
            Geodetic::from_degrees(43.65, -79.38, 90.0).unwrap(),
            EarthModel::wgs84(),
        )
    }

    fn state(t: f64, e: f64, n: f64) -> NavState {
        let pos = frame().to_geodetic(&LocalEnu::new(e, n, 0.0)).unwrap();
        NavState::new(t, pos, Vector3::zeros(), Attitude::default())
    }

    #[test]
    fn identical_tracks_have_zero_error() {
        let truth: Vec<_> = (0..50)
            .map(|k| state(k as f64 * 0.2, k as f64, 2.0 * k as f64))
            .collect();
        let errs = error_series(&truth, &truth, &frame()).unwrap();
        assert!(errs.iter().all(|e| e.error_3d == 0.0));
    }

    #[test]
    fn constant_offset() {
        let truth: Vec<_> = (0..50)
            .map(|k| state(k as f64 * 0.2, k as f64, 0.0))
            .collect();
        let est: Vec<_> = (0..50)
            .map(|k| state(k as f64 * 0.2, k as f64 + 3.0, 0.0))
            .collect();
        for e in error_series(&est, &truth, &frame()).unwrap() {
            assert_relative_eq!(e.error_3d, 3.0, epsilon = 1e-6);
            assert_relative_eq!(e.horizontal, 3.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn interpolation_on_straight_segment() {
        let truth: Vec<_> = (0..50)
            .map(|k| state(k as f64 * 0.2, 3.0 * k as f64 * 0.2, 4.0 * k as f64 * 0.2))
            .collect();
        let est: Vec<_> = (0..190)
            .map(|k| {
                let t = k as f64 * 0.05;
                state(t, 3.0 * t, 4.0 * t)
            })
            .collect();
        let track = TruthTrack::new(&truth, &frame()).unwrap();
        let reference = |t: f64| {
            let k = (t / 0.2).floor().min(48.0);
            let (a, b) = (
                frame().to_local(&truth[k as usize].pos).unwrap(),
                frame().to_local(&truth[k as usize + 1].pos).unwrap(),
            );
            let w = t / 0.2 - k;
            a.to_vector() + (b.to_vector() - a.to_vector()) * w
        };
        for s in &est {
            let p = track.at(s.t).unwrap().to_vector();
            assert!((p - reference(s.t)).norm() < 1e-9);
        }
        // geodetic storage limits the end-to-end comparison to float resolution
        for e in error_series(&est, &truth, &frame()).unwrap() {
            assert!(e.error_3d < 1e-8, "{e:?}");
        }
    }

    #[test]
    fn errors_beyond_tangent_plane() {
        let truth: Vec<_> = (0..5).map(|k| state(k as f64, 0.0, 0.0)).collect();
        let anchor = frame().to_geodetic(&LocalEnu::new(0.0, 0.0, 0.0)).unwrap();
        let far = Geodetic::new(anchor.lat + 80_000.0 / 6_367_000.0, anchor.lon, anchor.h).unwrap();
        let est = [NavState::new(
            2.0,
            far,
            Vector3::zeros(),
            Attitude::default(),
        )];
        let e = error_series(&est, &truth, &frame()).unwrap()[0];
        assert!((e.horizontal / 80_000.0 - 1.0).abs() < 0.01, "{e:?}");
        assert!(e.error_3d >= e.horizontal);
    }

    #[test]
    fn extrapolation_rejected() {
        let truth: Vec<_> = (0..5).map(|k| state(k as f64, 0.0, 0.0)).collect();
        let est = [state(4.5, 0.0, 0.0)];
        assert!(matches!(
            error_series(&est, &truth, &frame()),
            Err(EvalError::Extrapolation { .. })
        ));
    }

    #[test]
    fn summarize_small() {
        let s = summarize(&[0.0, 1.0], &[3.0, 4.0], &[], 0.0).unwrap();
        assert_relative_eq!(s.rms, 12.5f64.sqrt(), epsilon = 1e-15);
        assert_eq!(s.max, 4.0);
        let s = summarize(&[0.0; 10], &[0.1; 10], &[], 0.0).unwrap();
        assert_eq!(s.pct_below, [100.0; 3]);
        assert_eq!(s.two_sigma, 0.1);
    }

    #[test]
    fn cdf_small() {
        assert_eq!(cdf_points(&[5.0]).unwrap(), vec![(5.0, 1.0)]);
        let c = cdf_points(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(
            c.iter().map(|p| p.0).collect::<Vec<_>>(),
            vec![1.0, 2.0, 3.0]
        );
        assert_relative_eq!(c[0].1, 1.0 / 3.0);
        assert_relative_eq!(c[1].1, 2.0 / 3.0);
        assert_eq!(c[2].1, 1.0);
    }

    #[test]
    fn windows_and_tail() {
        let times: Vec<f64> = (0..100).map(|k| k as f64).collect();
        let errors: Vec<f64> = times
            .iter()
            .map(|t| if (10.0..20.0).contains(t) { 5.0 } else { 1.0 })
            .collect();
        let s = summarize(&times, &errors, &[(10.0, 19.0)], 0.0).unwrap();
        assert_eq!(s.windows[0].n, 10);
        assert_eq!(s.windows[0].rms, 5.0);
        let s = summarize(&times, &errors, &[(10.0, 19.0)], 5.0).unwrap();
        assert_eq!(s.windows[0].n, 15);
        assert_eq!(s.windows[0].max, 5.0);
        let empty = summarize(&times, &errors, &[(500.0, 510.0)], 0.0).unwrap();
        assert!(empty.windows[0].rms.is_nan());
    }

    #[test]
    fn matches_sort_oracle_on_large_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let errors: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>() * 3.0).collect();
        let times = vec![0.0; errors.len()];
        let s = summarize(&times, &errors, &[], 0.0).unwrap();
        let mut sorted = errors.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(s.two_sigma, sorted[94_999]);
        assert_eq!(s.max, sorted[99_999]);
        assert_eq!(s.median, sorted[49_999]);
        for (i, th) in THRESHOLDS.iter().enumerate() {
            let count = errors.iter().filter(|e| *e < th).count();
            assert_eq!(s.pct_below[i], 100.0 * count as f64 / 1e5);
        }
        let brute = (sorted.iter().map(|e| e * e).sum::<f64>() / 1e5).sqrt();
        assert_eq!(s.rms, brute);
        let cdf = cdf_points(&errors).unwrap();
        for (i, (e, f)) in cdf.iter().enumerate() {
            assert_eq!(*e, sorted[i]);
            assert_eq!(*f, (i + 1) as f64 / 1e5);
        }
    }

    #[test]
    fn table_layout() {
        let a = summarize(&[0.0, 1.0], &[0.1, 0.2], &[], 0.0).unwrap();
        let b = summarize(&[0.0, 1.0], &[1.5, 2.5], &[], 0.0).unwrap();
        let table = format_table(&[("5g-obms", &a), ("5g-only-cv", &b)]);
        assert_eq!(table.lines().count(), 7);
        assert!(table.lines().nth(1).unwrap().starts_with("RMS (m)"));
        assert!(a.dominates(&b));
        assert!(!b.dominates(&a));
        assert!(!a.dominates(&a));
    }

    proptest! {
        #[test]
        fn stats_invariants(mut errors in prop::collection::vec(0.0f64..10.0, 1..300), seed in any::<u64>()) {
            let times = vec![0.0; errors.len()];
            let s = summarize(&times, &errors, &[], 0.0).unwrap();
            prop_assert!(s.pct_below[0] >= s.pct_below[1] && s.pct_below[1] >= s.pct_below[2]);
            prop_assert!(s.max >= s.two_sigma && s.two_sigma >= s.median);
            prop_assert!(s.rms >= s.mean * (1.0 - 1e-12));

            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..errors.len()).rev() {
                errors.swap(i, rng.random_range(0..=i));
            }
            let shuffled = summarize(&times, &errors, &[], 0.0).unwrap();
            prop_assert_eq!(shuffled.max, s.max);
            prop_assert_eq!(shuffled.two_sigma, s.two_sigma);
            prop_assert_eq!(shuffled.pct_below, s.pct_below);
            prop_assert!((shuffled.rms - s.rms).abs() <= 1e-12 * s.rms.max(1e-300));

            let cdf = cdf_points(&errors).unwrap();
            prop_assert!(cdf.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 < w[1].1));
            prop_assert_eq!(cdf.last().unwrap().1, 1.0);
            let below = cdf.iter().filter(|(e, _)| *e <= s.two_sigma).count() as f64 / errors.len() as f64;
            prop_assert!(below >= 0.95);
        }
    }
}
