//! Performance similarity metrics: 8 windowed features fit as Gaussians,
//! Overlapping Area between them, relative interpolation distance, and the
//! symmetric-KL and IMQ-kernel/MMD alternates.

use statrs::function::erf::erf;
use thiserror::Error;

use crate::notes::NoteSequence;

/// Lower bound on fitted standard deviations, keeping OA and KL defined for
/// degenerate single-value features.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("cannot compute features of an empty sequence")]
    EmptySequence,
}

/// The 8 windowed performance features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    NoteDensity,
    PitchRange,
    MeanPitch,
    VarPitch,
    MeanVelocity,
    VarVelocity,
    MeanDuration,
    VarDuration,
}

pub const FEATURES: [Feature; 8] = [
    Feature::NoteDensity,
    Feature::PitchRange,
    Feature::MeanPitch,
    Feature::VarPitch,
    Feature::MeanVelocity,
    Feature::VarVelocity,
    Feature::MeanDuration,
    Feature::VarDuration,
];

impl Feature {
    pub fn code(self) -> &'static str {
        match self {
            Feature::NoteDensity => "ND",
            Feature::PitchRange => "PR",
            Feature::MeanPitch => "MP",
            Feature::VarPitch => "VP",
            Feature::MeanVelocity => "MV",
            Feature::VarVelocity => "VV",
            Feature::MeanDuration => "MD",
            Feature::VarDuration => "VD",
        }
    }
}

/// Gaussian fit of one feature's per-window values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureGaussian {
    pub feature: Feature,
    pub mean: f64,
    /// Standard deviation, floored at [`SIGMA_FLOOR`].
    pub std: f64,
    pub n_windows: usize,
}

/// Windowing and kernel constants.
#[derive(Debug, Clone, Copy)]
pub struct MetricConfig {
    pub window_seconds: f64,
    pub hop_seconds: f64,
    pub imq_c: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig { window_seconds: 2.0, hop_seconds: 1.0, imq_c: 10.0 }
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance (the per-window "variation of" features).
fn pop_var(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n-1); zero for a single value.
fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// Slides a window over the sequence (notes keyed by onset) and fits one
/// Gaussian per feature across the window values. Windows without any onset
/// are skipped.
pub fn compute_features(
    seq: &NoteSequence,
    cfg: &MetricConfig,
) -> Result<[FeatureGaussian; 8], MetricsError> {
    if seq.is_empty() {
        return Err(MetricsError::EmptySequence);
    }
    let mut per_feature: [Vec<f64>; 8] = Default::default();
    let mut start = 0.0;
    while start < seq.total_seconds() {
        let end = start + cfg.window_seconds;
        let window: Vec<_> = seq
            .notes()
            .iter()
            .filter(|n| n.onset >= start && n.onset < end)
            .collect();
        if !window.is_empty() {
            let pitches: Vec<f64> = window.iter().map(|n| n.pitch as f64).collect();
            let velocities: Vec<f64> = window.iter().map(|n| n.velocity as f64).collect();
            let durations: Vec<f64> = window.iter().map(|n| n.duration()).collect();
            let pr = pitches.iter().cloned().fold(f64::MIN, f64::max)
                - pitches.iter().cloned().fold(f64::MAX, f64::min);
            per_feature[0].push(window.len() as f64 / cfg.window_seconds);
            per_feature[1].push(pr);
            per_feature[2].push(mean(&pitches));
            per_feature[3].push(pop_var(&pitches));
            per_feature[4].push(mean(&velocities));
            per_feature[5].push(pop_var(&velocities));
            per_feature[6].push(mean(&durations));
            per_feature[7].push(pop_var(&durations));
        }
        start += cfg.hop_seconds;
    }
    debug_assert!(!per_feature[0].is_empty(), "non-empty sequence has at least one onset");
    Ok(std::array::from_fn(|i| FeatureGaussian {
        feature: FEATURES[i],
        mean: mean(&per_feature[i]),
        std: sample_std(&per_feature[i]).max(SIGMA_FLOOR),
        n_windows: per_feature[i].len(),
    }))
}

fn normal_cdf(x: f64, mu: f64, sigma: f64) -> f64 {
    0.5 * (1.0 + erf((x - mu) / (sigma * std::f64::consts::SQRT_2)))
}

/// Overlapping Area between two Gaussian densities: the integral of their
/// pointwise minimum, in [0, 1]. Closed form: equal sigmas cross once at
/// the midpoint, unequal sigmas cross at the two roots of a quadratic with
/// the narrow density outside and the wide one inside.
pub fn overlap_area(g1: &FeatureGaussian, g2: &FeatureGaussian) -> f64 {
    gaussian_overlap(g1.mean, g1.std.max(SIGMA_FLOOR), g2.mean, g2.std.max(SIGMA_FLOOR))
}

pub fn gaussian_overlap(mu1: f64, sigma1: f64, mu2: f64, sigma2: f64) -> f64 {
    if mu1 == mu2 && sigma1 == sigma2 {
        return 1.0;
    }
    if sigma1 == sigma2 {
        return 2.0 * normal_cdf(-(mu1 - mu2).abs() / 2.0, 0.0, sigma1);
    }
    // Narrow density n, wide density w.
    let (mu_n, s_n, mu_w, s_w) =
        if sigma1 < sigma2 { (mu1, sigma1, mu2, sigma2) } else { (mu2, sigma2, mu1, sigma1) };
    let a = 0.5 / (s_n * s_n) - 0.5 / (s_w * s_w);
    let b = mu_w / (s_w * s_w) - mu_n / (s_n * s_n);
    let c = 0.5 * (mu_n * mu_n) / (s_n * s_n) - 0.5 * (mu_w * mu_w) / (s_w * s_w)
        - (s_w / s_n).ln();
    let disc = (b * b - 4.0 * a * c).max(0.0);
    let sq = disc.sqrt();
    let x1 = (-b - sq) / (2.0 * a);
    let x2 = (-b + sq) / (2.0 * a);
    let (x1, x2) = if x1 <= x2 { (x1, x2) } else { (x2, x1) };
    let inside = normal_cdf(x2, mu_w, s_w) - normal_cdf(x1, mu_w, s_w);
    let outside = normal_cdf(x1, mu_n, s_n) + 1.0 - normal_cdf(x2, mu_n, s_n);
    (inside + outside).clamp(0.0, 1.0)
}

/// Per-pair similarity: one OA per feature plus their mean, and the
/// symmetric-KL / IMQ-kernel alternates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityReport {
    pub oa: [f64; 8],
    pub oa_avg: f64,
    /// Mean of the symmetric KLs of the pitch and density Gaussians.
    pub sym_kl_avg: f64,
    /// IMQ kernel between whole-performance summary vectors (the
    /// one-to-one MMD case).
    pub imq_kernel: f64,
}

pub fn oa_similarity(
    a: &NoteSequence,
    b: &NoteSequence,
    cfg: &MetricConfig,
) -> Result<SimilarityReport, MetricsError> {
    let fa = compute_features(a, cfg)?;
    let fb = compute_features(b, cfg)?;
    let oa: [f64; 8] = std::array::from_fn(|i| overlap_area(&fa[i], &fb[i]));
    let oa_avg = oa.iter().sum::<f64>() / 8.0;
    // Pitch = MP (index 2), density = ND (index 0), per the draft metric.
    let sym_kl_avg = 0.5 * (symmetric_kl(&fa[2], &fb[2]) + symmetric_kl(&fa[0], &fb[0]));
    let imq = imq_kernel(&summary_features(a), &summary_features(b), cfg.imq_c);
    Ok(SimilarityReport { oa, oa_avg, sym_kl_avg, imq_kernel: imq })
}

/// Normalized closeness of an interpolated sample to endpoint A versus B:
/// `1 - OA_A / (OA_A + OA_B)`. Low means close to A. The indeterminate
/// 0/0 case returns the midpoint 0.5.
pub fn rel_distance(oa_to_a: f64, oa_to_b: f64) -> f64 {
    if oa_to_a + oa_to_b == 0.0 {
        return 0.5;
    }
    1.0 - oa_to_a / (oa_to_a + oa_to_b)
}

/// KL divergence between univariate Gaussians:
/// `ln(s2/s1) + (s1^2 + (m1-m2)^2) / (2 s2^2) - 1/2`.
pub fn kl_divergence(g1: &FeatureGaussian, g2: &FeatureGaussian) -> f64 {
    let (m1, s1) = (g1.mean, g1.std.max(SIGMA_FLOOR));
    let (m2, s2) = (g2.mean, g2.std.max(SIGMA_FLOOR));
    (s2 / s1).ln() + (s1 * s1 + (m1 - m2) * (m1 - m2)) / (2.0 * s2 * s2) - 0.5
}

/// `1/2 D(p||q) + 1/2 D(q||p)`.
pub fn symmetric_kl(g1: &FeatureGaussian, g2: &FeatureGaussian) -> f64 {
    0.5 * kl_divergence(g1, g2) + 0.5 * kl_divergence(g2, g1)
}

/// Whole-performance summary vector for the kernel metric: density, mean
/// pitch/velocity/duration, population variance of pitch/velocity/duration.
pub fn summary_features(seq: &NoteSequence) -> [f64; 7] {
    if seq.is_empty() {
        return [0.0; 7];
    }
    let pitches: Vec<f64> = seq.notes().iter().map(|n| n.pitch as f64).collect();
    let velocities: Vec<f64> = seq.notes().iter().map(|n| n.velocity as f64).collect();
    let durations: Vec<f64> = seq.notes().iter().map(|n| n.duration()).collect();
    let density = seq.len() as f64 / seq.total_seconds().max(f64::MIN_POSITIVE);
    [
        density,
        mean(&pitches),
        mean(&velocities),
        mean(&durations),
        pop_var(&pitches),
        pop_var(&velocities),
        pop_var(&durations),
    ]
}

/// Inverse multiquadric kernel `1 / sqrt(||x-y||^2 + C^2)`.
pub fn imq_kernel(x: &[f64], y: &[f64], c: f64) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    1.0 / (d2 + c * c).sqrt()
}

/// MMD-like score of one input `x` against a sample set `ys`:
/// `-(1/n) sum_y k(x,y) + (1/n^2) sum_{y,y'} k(y,y')`. Lower is more
/// similar. Empty `ys` is an error.
pub fn imq_mmd(x: &[f64], ys: &[Vec<f64>], c: f64) -> Result<f64, MetricsError> {
    if ys.is_empty() {
        return Err(MetricsError::EmptySequence);
    }
    let n = ys.len() as f64;
    let cross: f64 = ys.iter().map(|y| imq_kernel(x, y, c)).sum();
    let within: f64 = ys
        .iter()
        .flat_map(|y| ys.iter().map(move |y2| imq_kernel(y, y2, c)))
        .sum();
    Ok(-cross / n + within / (n * n))
}

/// Spearman rank correlation; ties get average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = ranks(xs);
    let ry = ranks(ys);
    let mx = mean(&rx);
    let my = mean(&ry);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx.sqrt() * vy.sqrt())
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::notes::Note;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn g(feature: Feature, mean: f64, std: f64) -> FeatureGaussian {
        FeatureGaussian { feature, mean, std, n_windows: 1 }
    }

    /// Trapezoid integration of min(pdf1, pdf2); the independent oracle for
    /// the closed form.
    pub(crate) fn overlap_by_integration(mu1: f64, s1: f64, mu2: f64, s2: f64, step: f64) -> f64 {
        let pdf = |x: f64, mu: f64, s: f64| {
            (-((x - mu) * (x - mu)) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
        };
        let lo = (mu1 - 10.0 * s1).min(mu2 - 10.0 * s2);
        let hi = (mu1 + 10.0 * s1).max(mu2 + 10.0 * s2);
        let n = ((hi - lo) / step).ceil() as usize;
        let f = |x: f64| pdf(x, mu1, s1).min(pdf(x, mu2, s2));
        let mut acc = 0.5 * (f(lo) + f(hi));
        for i in 1..n {
            acc += f(lo + i as f64 * step);
        }
        acc * step
    }

    #[test]
    fn identical_gaussians_overlap_fully() {
        let a = g(Feature::MeanPitch, 3.0, 1.5);
        assert_eq!(overlap_area(&a, &a), 1.0);
    }

    #[test]
    fn equal_sigma_overlap_matches_closed_form() {
        let a = g(Feature::MeanPitch, 0.0, 1.0);
        let b = g(Feature::MeanPitch, 4.0, 1.0);
        // 2 * Phi(-2) = 0.04550026389635839.
        assert!((overlap_area(&a, &b) - 0.04550026389635839).abs() < 1e-9);
    }

    #[test]
    fn unequal_sigma_overlap_matches_integration() {
        let a = g(Feature::MeanPitch, 0.0, 1.0);
        let b = g(Feature::MeanPitch, 0.0, 2.0);
        let numeric = overlap_by_integration(0.0, 1.0, 0.0, 2.0, 1e-3);
        assert!((overlap_area(&a, &b) - numeric).abs() < 1e-6);
    }

    #[test]
    fn overlap_against_integration_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let mu1 = rng.gen_range(-5.0..5.0);
            let mu2 = rng.gen_range(-5.0..5.0);
            let s1 = rng.gen_range(0.5..3.0);
            let s2 = rng.gen_range(0.5..3.0);
            let closed = gaussian_overlap(mu1, s1, mu2, s2);
            let numeric = overlap_by_integration(mu1, s1, mu2, s2, 1e-3);
            assert!(
                (closed - numeric).abs() < 1e-6,
                "mu1={mu1} s1={s1} mu2={mu2} s2={s2}: {closed} vs {numeric}"
            );
        }
    }

    #[test]
    fn overlap_decreases_with_mean_separation() {
        let mut last = 1.0;
        for k in 1..20 {
            let a = g(Feature::MeanPitch, 0.0, 1.0);
            let b = g(Feature::MeanPitch, k as f64 * 0.5, 1.0);
            let oa = overlap_area(&a, &b);
            assert!(oa < last);
            assert!((0.0..=1.0).contains(&oa));
            last = oa;
        }
    }

    #[test]
    fn single_note_window_features() {
        let seq = NoteSequence::from_notes(vec![Note::new(60, 80, 0.0, 0.5).unwrap()]).unwrap();
        let f = compute_features(&seq, &MetricConfig::default()).unwrap();
        assert_eq!(f[0].mean, 0.5); // ND: 1 note / 2 s
        assert_eq!(f[1].mean, 0.0); // PR
        assert_eq!(f[2].mean, 60.0); // MP
        assert_eq!(f[3].mean, 0.0); // VP
        assert_eq!(f[4].mean, 80.0); // MV
        assert_eq!(f[6].mean, 0.5); // MD
        for fg in &f {
            assert_eq!(fg.std, SIGMA_FLOOR);
            assert_eq!(fg.n_windows, 1);
        }
    }

    #[test]
    fn velocity_scaling_is_linear() {
        let mk = |vel: u8| {
            NoteSequence::from_notes(vec![
                Note::new(60, vel, 0.0, 0.5).unwrap(),
                Note::new(62, vel, 0.5, 1.0).unwrap(),
            ])
            .unwrap()
        };
        let f1 = compute_features(&mk(40), &MetricConfig::default()).unwrap();
        let f2 = compute_features(&mk(80), &MetricConfig::default()).unwrap();
        assert_eq!(f2[4].mean, 2.0 * f1[4].mean);
    }

    #[test]
    fn constant_pitch_stream_has_zero_vp() {
        let notes: Vec<Note> =
            (0..10).map(|k| Note::new(64, 70, k as f64 * 0.3, k as f64 * 0.3 + 0.2).unwrap()).collect();
        let seq = NoteSequence::from_notes(notes).unwrap();
        let f = compute_features(&seq, &MetricConfig::default()).unwrap();
        assert_eq!(f[3].mean, 0.0);
    }

    #[test]
    fn empty_sequence_is_an_error() {
        assert_eq!(
            compute_features(&NoteSequence::empty(), &MetricConfig::default()),
            Err(MetricsError::EmptySequence)
        );
    }

    #[test]
    fn self_similarity_is_one_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let notes: Vec<Note> = (0..30)
            .map(|k| {
                let on = k as f64 * 0.21;
                Note::new(rng.gen_range(40..90), rng.gen_range(30..110), on, on + 0.18).unwrap()
            })
            .collect();
        let a = NoteSequence::from_notes(notes).unwrap();
        let cfg = MetricConfig::default();
        let self_report = oa_similarity(&a, &a, &cfg).unwrap();
        assert_eq!(self_report.oa, [1.0; 8]);
        assert_eq!(self_report.oa_avg, 1.0);
        assert_eq!(self_report.sym_kl_avg, 0.0);

        let (b, _) = crate::augment::pitch_shift(&a, 7);
        let ab = oa_similarity(&a, &b, &cfg).unwrap();
        let ba = oa_similarity(&b, &a, &cfg).unwrap();
        for i in 0..8 {
            assert!((ab.oa[i] - ba.oa[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn pitch_shift_hits_mp_but_not_nd() {
        let notes: Vec<Note> =
            (0..40).map(|k| Note::new(60, 70, k as f64 * 0.2, k as f64 * 0.2 + 0.15).unwrap()).collect();
        let a = NoteSequence::from_notes(notes).unwrap();
        let (b, _) = crate::augment::pitch_shift(&a, 24);
        let report = oa_similarity(&a, &b, &MetricConfig::default()).unwrap();
        assert!(report.oa[2] < 1.0, "MP overlap must fall");
        assert_eq!(report.oa[0], 1.0, "ND untouched by pitch shift");
    }

    #[test]
    fn rel_distance_arithmetic() {
        assert_eq!(rel_distance(0.3, 0.3), 0.5);
        assert!((rel_distance(0.8, 0.2) - 0.2).abs() < 1e-15);
        assert_eq!(rel_distance(0.8, 0.0), 0.0);
        assert_eq!(rel_distance(0.0, 0.0), 0.5);
    }

    #[test]
    fn kl_closed_form_values() {
        let p = g(Feature::MeanPitch, 0.0, 1.0);
        let q = g(Feature::MeanPitch, 1.0, 1.0);
        assert!((kl_divergence(&p, &q) - 0.5).abs() < 1e-12);
        assert!((symmetric_kl(&p, &q) - 0.5).abs() < 1e-12);
        assert_eq!(symmetric_kl(&p, &p), 0.0);

        let wide = g(Feature::MeanPitch, 0.0, 2.0);
        let d_pq = kl_divergence(&p, &wide);
        let d_qp = kl_divergence(&wide, &p);
        assert!((d_pq - 0.3181471805599453).abs() < 1e-12);
        assert!((d_qp - 0.8068528194400546).abs() < 1e-12);
        assert!(d_pq != d_qp);
    }

    /// KL between Gaussians by quadrature: integral of p ln(p/q).
    fn kl_by_integration(g1: &FeatureGaussian, g2: &FeatureGaussian) -> f64 {
        let (m1, s1, m2, s2) = (g1.mean, g1.std, g2.mean, g2.std);
        let lo = m1 - 12.0 * s1;
        let hi = m1 + 12.0 * s1;
        let step = s1.min(s2) / 2000.0;
        let n = ((hi - lo) / step).ceil() as usize;
        let logpdf = |x: f64, mu: f64, s: f64| {
            -((x - mu) * (x - mu)) / (2.0 * s * s) - (s * (2.0 * std::f64::consts::PI).sqrt()).ln()
        };
        let f = |x: f64| {
            let lp = logpdf(x, m1, s1);
            lp.exp() * (lp - logpdf(x, m2, s2))
        };
        let mut acc = 0.5 * (f(lo) + f(hi));
        for i in 1..n {
            acc += f(lo + i as f64 * step);
        }
        acc * step
    }

    #[test]
    fn kl_closed_form_matches_integration() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..25 {
            let p = g(Feature::MeanPitch, rng.gen_range(-3.0..3.0), rng.gen_range(0.5..2.5));
            let q = g(Feature::MeanPitch, rng.gen_range(-3.0..3.0), rng.gen_range(0.5..2.5));
            let closed = kl_divergence(&p, &q);
            let numeric = kl_by_integration(&p, &q);
            assert!((closed - numeric).abs() < 1e-6, "{closed} vs {numeric}");
            assert!(symmetric_kl(&p, &q) >= 0.0);
        }
    }

    #[test]
    fn imq_kernel_spot_values() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(imq_kernel(&x, &x, 10.0), 0.1);
        // Squared distance 44 with C = 10: k = 1/sqrt(144) = 1/12.
        let y = [1.0 + 2.0, 2.0 + 2.0, 3.0 + 6.0];
        assert!((imq_kernel(&x, &y, 10.0) - 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn imq_kernel_bounds_and_monotonicity() {
        let c = 10.0;
        let x = [0.0; 7];
        let mut last = imq_kernel(&x, &x, c);
        assert_eq!(last, 1.0 / c);
        for k in 1..30 {
            let mut y = [0.0; 7];
            y[0] = k as f64;
            let v = imq_kernel(&x, &y, c);
            assert!(v > 0.0 && v < last);
            last = v;
        }
    }

    #[test]
    fn mmd_single_element_cancels() {
        let x = vec![1.0, 2.0];
        assert_eq!(imq_mmd(&x, &[x.clone()], 10.0).unwrap(), 0.0);
        assert!(imq_mmd(&x, &[], 10.0).is_err());
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]) + 1.0).abs() < 1e-12);
        let rho = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]);
        assert!(rho > 0.5 && rho < 1.0);
    }
}
