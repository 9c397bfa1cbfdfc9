//! Channel interpolators operating on one group of subcarriers at a time.
//!
//! Every estimator maps the `M` pilot LS estimates of a group to the `S`
//! data subcarriers of the same group, and the same mapping is reused for
//! all groups of a symbol.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{calibrate_clipping, freq_correlation, ClipDistortion, PowerDelayProfile, ScenarioImpairmentStats};
use crate::error::{Error, Result};
use crate::numerics::{herm_solve, pinv, sample_cgauss, CMatrix};
use crate::phy::{GroupLayout, OfdmConfig};
use crate::training::TrainingSet;

/// Anything that maps a group's pilot estimates to its data estimates.
pub trait GroupEstimator {
    fn estimate_group(&self, pilots: &[Complex64]) -> Result<Vec<Complex64>>;
}

/// Estimates every data subcarrier of a symbol from the comb pilot LS
/// estimates (one per pilot, in pilot order). The output follows
/// [`GroupLayout::data_indices`].
pub fn estimate_symbol<E: GroupEstimator + ?Sized>(
    est: &E,
    pilot_ls: &[Complex64],
    layout: &GroupLayout,
) -> Result<Vec<Complex64>> {
    let stride = layout.taps - 1;
    let expected = layout.groups() * stride + 1;
    if pilot_ls.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: pilot_ls.len(),
        });
    }
    let mut out = Vec::with_capacity(layout.groups() * layout.data_len);
    for g in 0..layout.groups() {
        out.extend(est.estimate_group(&pilot_ls[g * stride..g * stride + layout.taps])?);
    }
    Ok(out)
}

/// Element-wise `y / x` at known symbols.
pub fn ls_pilot_estimate(y: &[Complex64], x: &[Complex64]) -> Result<Vec<Complex64>> {
    if y.len() != x.len() {
        return Err(Error::SizeMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    y.iter()
        .zip(x)
        .enumerate()
        .map(|(i, (&yv, &xv))| {
            if xv.norm_sqr() == 0.0 {
                Err(Error::ZeroSymbol(i))
            } else {
                Ok(yv / xv)
            }
        })
        .collect()
}

/// Linear interpolation in subcarrier index between the two pilots
/// bracketing each data subcarrier.
pub fn interpolate_linear(pilot_ls: &[Complex64], cfg: &OfdmConfig) -> Result<Vec<Complex64>> {
    if pilot_ls.len() < 2 || pilot_ls.len() != cfg.pilot_count() {
        return Err(Error::SizeMismatch {
            expected: cfg.pilot_count().max(2),
            actual: pilot_ls.len(),
        });
    }
    let d = cfg.pilot_interval;
    Ok((0..cfg.k_used)
        .filter(|i| i % d != 0)
        .map(|i| {
            let j = i / d;
            let t = (i % d) as f64 / d as f64;
            pilot_ls[j] * (1.0 - t) + pilot_ls[j + 1] * t
        })
        .collect())
}

/// An `S x M` interpolation matrix shared by all groups.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEstimator {
    pub w: CMatrix,
}

impl LinearEstimator {
    pub fn new(w: CMatrix) -> Result<Self> {
        if w.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Singular("non-finite interpolation weights".into()));
        }
        Ok(Self { w })
    }

    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.w.ncols()
    }

    /// Linear interpolation written as a matrix for the group layout.
    pub fn linear_interpolation(layout: &GroupLayout) -> Self {
        let (pilots, data) = layout.relative_positions();
        let d = pilots[1] - pilots[0];
        let mut w = CMatrix::zeros(data.len(), pilots.len());
        for (s, &pos) in data.iter().enumerate() {
            let j = pos / d;
            let t = (pos % d) as f64 / d as f64;
            w[(s, j)] = Complex64::new(1.0 - t, 0.0);
            w[(s, j + 1)] = Complex64::new(t, 0.0);
        }
        Self { w }
    }

    /// One line per row of `W`, each entry written as `re im`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in 0..self.w.nrows() {
            let row: Vec<String> = (0..self.w.ncols())
                .map(|c| format!("{} {}", self.w[(r, c)].re, self.w[(r, c)].im))
                .collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let rows = parse_complex_rows(text)?;
        let ncols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::Parse("weight file rows must be non-empty and equal length".into()));
        }
        let w = CMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]);
        Self::new(w)
    }
}

impl GroupEstimator for LinearEstimator {
    fn estimate_group(&self, pilots: &[Complex64]) -> Result<Vec<Complex64>> {
        if pilots.len() != self.inputs() {
            return Err(Error::DimensionMismatch(format!(
                "estimator takes {} pilots, got {}",
                self.inputs(),
                pilots.len()
            )));
        }
        Ok((0..self.outputs())
            .map(|s| (0..self.inputs()).map(|j| self.w[(s, j)] * pilots[j]).sum())
            .collect())
    }
}

/// Applies `W` to each group's pilot estimates.
pub fn apply_linear(est: &LinearEstimator, groups: &[Vec<Complex64>]) -> Result<Vec<Vec<Complex64>>> {
    groups.iter().map(|g| est.estimate_group(g)).collect()
}

pub(crate) fn parse_complex_rows(text: &str) -> Result<Vec<Vec<Complex64>>> {
    let mut rows = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let nums = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("line {}: bad number `{t}`", lineno + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if nums.len() % 2 != 0 {
            return Err(Error::Parse(format!(
                "line {}: expected `re im` pairs",
                lineno + 1
            )));
        }
        rows.push(nums.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect());
    }
    Ok(rows)
}

/// Second-order statistics for MMSE interpolation of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct MmseContext {
    /// `E[h_d h_p^H]`, `S x M`.
    pub r_dp: CMatrix,
    /// `E[h_p h_p^H]`, `M x M`.
    pub r_pp: CMatrix,
    pub noise_var: f64,
}

impl MmseContext {
    /// Builds the correlation matrices from `corr(dk) = E[h_{k+dk} conj(h_k)]`.
    pub fn from_correlation<F: Fn(i64) -> Complex64>(corr: F, layout: &GroupLayout, noise_var: f64) -> Self {
        let (pilots, data) = layout.relative_positions();
        let r_dp = CMatrix::from_fn(data.len(), pilots.len(), |s, j| {
            corr(data[s] as i64 - pilots[j] as i64)
        });
        let r_pp = CMatrix::from_fn(pilots.len(), pilots.len(), |i, j| {
            corr(pilots[i] as i64 - pilots[j] as i64)
        });
        Self { r_dp, r_pp, noise_var }
    }

    pub fn from_profile(profile: &PowerDelayProfile, cfg: &OfdmConfig, layout: &GroupLayout, noise_var: f64) -> Self {
        Self::from_correlation(|dk| freq_correlation(profile, dk, cfg), layout, noise_var)
    }

    /// Correlations averaged over a uniform timing offset on
    /// `theta_min..=0`.
    pub fn sto_averaged(
        profile: &PowerDelayProfile,
        cfg: &OfdmConfig,
        layout: &GroupLayout,
        noise_var: f64,
        stats: &ScenarioImpairmentStats,
    ) -> Self {
        if stats.theta_min >= 0 {
            return Self::from_profile(profile, cfg, layout, noise_var);
        }
        Self::from_correlation(
            |dk| freq_correlation(profile, dk, cfg) * sto_average_factor(dk, stats.theta_min, cfg.n_dft),
            layout,
            noise_var,
        )
    }

    fn validate(&self) -> Result<()> {
        if self.noise_var < 0.0 || self.noise_var.is_nan() {
            return Err(Error::NegativeVariance(self.noise_var));
        }
        if self.r_dp.ncols() != self.r_pp.nrows() || !self.r_pp.is_square() {
            return Err(Error::DimensionMismatch("inconsistent correlation matrices".into()));
        }
        Ok(())
    }
}

/// `E_theta[exp(j 2 pi dk theta / N)]` for `theta` uniform on the integers
/// `theta_min..=0`, by the closed-form geometric sum.
pub fn sto_average_factor(dk: i64, theta_min: i64, n_dft: usize) -> Complex64 {
    if theta_min >= 0 {
        return Complex64::new(1.0, 0.0);
    }
    let count = (1 - theta_min) as f64;
    // sum_{u=0}^{U} x^u with x = exp(-j 2 pi dk / N), U = -theta_min
    let phase = -2.0 * PI * dk as f64 / n_dft as f64;
    let x = Complex64::from_polar(1.0, phase);
    if (x - 1.0).norm() < 1e-15 {
        return Complex64::new(1.0, 0.0);
    }
    let xn = Complex64::from_polar(1.0, phase * count);
    (Complex64::new(1.0, 0.0) - xn) / (Complex64::new(1.0, 0.0) - x) / count
}

/// `W = R_dp (R_pp + noise_var I)^-1`.
pub fn mmse_weights(ctx: &MmseContext) -> Result<LinearEstimator> {
    ctx.validate()?;
    let m = ctx.r_pp.nrows();
    let a = &ctx.r_pp + CMatrix::identity(m, m) * Complex64::new(ctx.noise_var, 0.0);
    // A is Hermitian, so W^H = A^-1 R_dp^H.
    let w_h = herm_solve(&a, &ctx.r_dp.adjoint())?;
    LinearEstimator::new(w_h.adjoint())
}

/// MMSE on timing-offset-averaged correlations.
pub fn ammse_weights(
    profile: &PowerDelayProfile,
    cfg: &OfdmConfig,
    layout: &GroupLayout,
    noise_var: f64,
    stats: &ScenarioImpairmentStats,
) -> Result<LinearEstimator> {
    mmse_weights(&MmseContext::sto_averaged(profile, cfg, layout, noise_var, stats))
}

/// Distortion-aware MMSE: the clipping distortion is treated as extra noise
/// and both are scaled by the attenuation of the useful signal.
pub fn da_lmmse_weights_with(ctx: &MmseContext, distortion: &ClipDistortion) -> Result<LinearEstimator> {
    let inflated = MmseContext {
        noise_var: distortion.effective_noise_var(ctx.noise_var),
        ..ctx.clone()
    };
    mmse_weights(&inflated)
}

/// Calibrates the clipping distortion over `calibration_runs` frames and
/// returns the distortion-aware weights.
pub fn da_lmmse_weights<R: Rng + ?Sized>(
    ctx: &MmseContext,
    cfg: &OfdmConfig,
    clip_ratio: f64,
    calibration_runs: usize,
    rng: &mut R,
) -> Result<LinearEstimator> {
    let distortion = calibrate_clipping(cfg, clip_ratio, calibration_runs, rng)?;
    da_lmmse_weights_with(ctx, &distortion)
}

/// Element-wise nonlinearity of the C-ELM hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    /// `asinh` applied separately to the real and imaginary parts.
    SplitAsinh,
}

impl Activation {
    fn apply(self, z: Complex64) -> Complex64 {
        match self {
            Activation::Identity => z,
            Activation::SplitAsinh => Complex64::new(z.re.asinh(), z.im.asinh()),
        }
    }
}

/// Complex extreme learning machine: a frozen random hidden layer and a
/// least-squares output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ElmEstimator {
    pub input_weights: CMatrix,
    pub biases: Vec<Complex64>,
    pub output_weights: CMatrix,
    pub activation: Activation,
}

impl ElmEstimator {
    fn hidden(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.input_weights.nrows())
            .map(|l| {
                let z: Complex64 = (0..x.len()).map(|j| self.input_weights[(l, j)] * x[j]).sum();
                self.activation.apply(z + self.biases[l])
            })
            .collect()
    }

    pub fn hidden_units(&self) -> usize {
        self.biases.len()
    }
}

impl GroupEstimator for ElmEstimator {
    fn estimate_group(&self, pilots: &[Complex64]) -> Result<Vec<Complex64>> {
        celm_apply(self, pilots)
    }
}

pub fn celm_train<R: Rng + ?Sized>(
    data: &TrainingSet,
    hidden: usize,
    activation: Activation,
    rng: &mut R,
) -> Result<ElmEstimator> {
    let t = data.len();
    if hidden == 0 || t <= hidden {
        return Err(Error::InsufficientData(format!(
            "C-ELM with {hidden} hidden units needs more than {hidden} samples, got {t}"
        )));
    }
    let m = data.x_i.nrows();
    let input_weights = CMatrix::from_fn(hidden, m, |_, _| Complex64::new(0.0, 0.0));
    let mut elm = ElmEstimator {
        input_weights,
        biases: Vec::with_capacity(hidden),
        output_weights: CMatrix::zeros(data.y_o.nrows(), hidden),
        activation,
    };
    for v in elm.input_weights.iter_mut() {
        *v = sample_cgauss(rng, 1.0)?;
    }
    for _ in 0..hidden {
        elm.biases.push(sample_cgauss(rng, 1.0)?);
    }
    let mut h = CMatrix::zeros(hidden, t);
    let mut col = vec![Complex64::new(0.0, 0.0); m];
    for c in 0..t {
        for (j, v) in col.iter_mut().enumerate() {
            *v = data.x_i[(j, c)];
        }
        for (l, v) in elm.hidden(&col).into_iter().enumerate() {
            h[(l, c)] = v;
        }
    }
    elm.output_weights = &data.y_o * pinv(&h)?;
    Ok(elm)
}

pub fn celm_apply(est: &ElmEstimator, inputs: &[Complex64]) -> Result<Vec<Complex64>> {
    if inputs.len() != est.input_weights.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "C-ELM takes {} inputs, got {}",
            est.input_weights.ncols(),
            inputs.len()
        )));
    }
    let h = est.hidden(inputs);
    Ok((0..est.output_weights.nrows())
        .map(|s| (0..h.len()).map(|l| est.output_weights[(s, l)] * h[l]).sum())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{cfr, sample_realization};
    use crate::numerics::SimRng;
    use crate::phy::pilot_indices;
    use crate::training::LabelKind;
    use rand::SeedableRng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn default_layout() -> (OfdmConfig, GroupLayout) {
        let cfg = OfdmConfig::default();
        let layout = GroupLayout::new(&cfg).unwrap();
        (cfg, layout)
    }

    #[test]
    fn ls_examples() {
        let y = vec![c(1.0, 2.0), c(-3.0, 0.5)];
        assert_eq!(ls_pilot_estimate(&y, &[c(1.0, 0.0); 2]).unwrap(), y);
        let x = vec![c(0.0, 1.0), c(2.0, 0.0)];
        let h = vec![c(0.3, -0.1), c(1.0, 1.0)];
        let y: Vec<Complex64> = x.iter().zip(&h).map(|(a, b)| a * b).collect();
        let est = ls_pilot_estimate(&y, &x).unwrap();
        for (a, b) in est.iter().zip(&h) {
            assert!((a - b).norm() < 1e-15);
        }
        assert!(matches!(
            ls_pilot_estimate(&y, &[c(1.0, 0.0), c(0.0, 0.0)]),
            Err(Error::ZeroSymbol(1))
        ));
    }

    #[test]
    fn ls_mse_and_bias() {
        let mut rng = SimRng::seed_from_u64(41);
        let sigma2 = 0.3;
        let n = 1_000_000;
        let x = crate::phy::qpsk_map(&crate::phy::random_bits(&mut rng, 2 * n)).unwrap();
        let mut mse = 0.0;
        let mut bias = c(0.0, 0.0);
        let h = c(0.7, -0.4);
        for xv in &x {
            let y = xv * h + sample_cgauss(&mut rng, sigma2).unwrap();
            let e = ls_pilot_estimate(&[y], &[*xv]).unwrap()[0] - h;
            mse += e.norm_sqr();
            bias += e;
        }
        let mse = mse / n as f64;
        assert!((mse / sigma2 - 1.0).abs() < 0.02);
        let stderr = (sigma2 / n as f64).sqrt();
        assert!((bias / n as f64).norm() < 3.0 * stderr);
    }

    #[test]
    fn linear_interpolation_examples() {
        let cfg = OfdmConfig {
            n_dft: 64,
            cp_len: 16,
            k_used: 10,
            pilot_interval: 3,
            taps: 2,
            n_block_pilot: 1,
            n_data: 1,
            sample_rate: 10e6,
        };
        // 1-based pilots {1: 1, 4: 4, ...} give data bins 2, 3 -> 2, 3
        let pilots: Vec<Complex64> = pilot_indices(&cfg).unwrap().iter().map(|&i| c(i as f64 + 1.0, 0.0)).collect();
        let out = interpolate_linear(&pilots, &cfg).unwrap();
        assert!((out[0] - c(2.0, 0.0)).norm() < 1e-12);
        assert!((out[1] - c(3.0, 0.0)).norm() < 1e-12);

        // affine CFR recovered exactly, flat stays flat
        let (cfg, layout) = default_layout();
        let affine = |i: usize| c(0.5 + 0.01 * i as f64, -0.2 + 0.003 * i as f64);
        let p: Vec<Complex64> = pilot_indices(&cfg).unwrap().iter().map(|&i| affine(i)).collect();
        let out = interpolate_linear(&p, &cfg).unwrap();
        for (v, &i) in out.iter().zip(&layout.data_indices()) {
            assert!((v - affine(i)).norm() < 1e-12);
        }
        let matrix = estimate_symbol(&LinearEstimator::linear_interpolation(&layout), &p, &layout).unwrap();
        for (a, b) in matrix.iter().zip(&out) {
            assert!((a - b).norm() < 1e-12);
        }
        let flat = vec![c(0.3, 0.4); cfg.pilot_count()];
        assert!(interpolate_linear(&flat, &cfg).unwrap().iter().all(|v| (v - c(0.3, 0.4)).norm() < 1e-15));
    }

    #[test]
    fn mmse_flat_channel_closed_form() {
        // R = ones: W = 1^T (1 1^T + s I)^-1 = 1^T / (2 + s)
        let (_, layout) = default_layout();
        let s2 = 0.25;
        let ctx = MmseContext::from_correlation(|_| c(1.0, 0.0), &layout, s2);
        let w = mmse_weights(&ctx).unwrap();
        for v in w.w.iter() {
            assert!((v - c(1.0 / (2.0 + s2), 0.0)).norm() < 1e-12);
        }
        // flat noiseless channel h: output = h * 2 / (2 + s2)
        let h = c(0.8, -0.6);
        let out = w.estimate_group(&[h, h]).unwrap();
        for v in out {
            assert!((v - h * 2.0 / (2.0 + s2)).norm() < 1e-12);
        }
    }

    #[test]
    fn mmse_vanishes_with_huge_noise() {
        let (cfg, layout) = default_layout();
        let ctx = MmseContext::from_profile(&PowerDelayProfile::pedestrian_b(), &cfg, &layout, 1e6);
        assert!(mmse_weights(&ctx).unwrap().w.norm() < 1e-5);
        let bad = MmseContext { noise_var: -1.0, ..ctx };
        assert!(mmse_weights(&bad).is_err());
    }

    #[test]
    fn mmse_beats_random_perturbations() {
        let (cfg, layout) = default_layout();
        let pb = PowerDelayProfile::pedestrian_b();
        let s2 = 0.1;
        let w = mmse_weights(&MmseContext::from_profile(&pb, &cfg, &layout, s2)).unwrap();
        let mut rng = SimRng::seed_from_u64(42);
        // groups below DC only, where the subcarrier grid is uniform
        let groups: Vec<usize> = (0..60).collect();
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        while inputs.len() < 100_000 {
            let h = cfr(&sample_realization(&pb, &cfg, &mut rng).unwrap(), &cfg);
            for &g in &groups {
                let p: Vec<Complex64> = layout.pilots[g]
                    .iter()
                    .map(|&i| h[i] + sample_cgauss(&mut rng, s2).unwrap())
                    .collect();
                inputs.push(p);
                targets.push(layout.data[g].iter().map(|&i| h[i]).collect::<Vec<_>>());
            }
        }
        let mse = |est: &LinearEstimator| -> f64 {
            inputs
                .iter()
                .zip(&targets)
                .map(|(x, y)| {
                    let o = est.estimate_group(x).unwrap();
                    o.iter().zip(y).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>()
                })
                .sum::<f64>()
        };
        let best = mse(&w);
        for _ in 0..1000 {
            let mut wp = w.clone();
            for v in wp.w.iter_mut() {
                *v += sample_cgauss(&mut rng, 1e-4).unwrap();
            }
            assert!(mse(&wp) >= best * (1.0 - 1e-3));
        }
        assert!(mse(&LinearEstimator::linear_interpolation(&layout)) > best);
    }

    #[test]
    fn sto_average_factor_matches_direct_sum() {
        for (dk, theta_min) in [(3i64, -20i64), (-7, -40), (1, -1), (0, -5)] {
            let direct: Complex64 = (theta_min..=0)
                .map(|t| Complex64::from_polar(1.0, 2.0 * PI * (dk * t) as f64 / 512.0))
                .sum::<Complex64>()
                / (1 - theta_min) as f64;
            assert!((sto_average_factor(dk, theta_min, 512) - direct).norm() < 1e-12);
        }
        assert_eq!(sto_average_factor(5, 0, 512), c(1.0, 0.0));
    }

    #[test]
    fn sto_average_shrinks_correlation() {
        let (cfg, _) = default_layout();
        let pb = PowerDelayProfile::pedestrian_b();
        for dk in 1..10 {
            let f = sto_average_factor(dk, -(cfg.n_dft as i64) / 2, cfg.n_dft);
            let r = freq_correlation(&pb, dk, &cfg);
            assert!((r * f).norm() <= r.norm() + 1e-15);
        }
    }

    #[test]
    fn ammse_degenerates_to_mmse() {
        let (cfg, layout) = default_layout();
        let pb = PowerDelayProfile::pedestrian_b();
        let a = ammse_weights(&pb, &cfg, &layout, 0.05, &ScenarioImpairmentStats::default()).unwrap();
        let m = mmse_weights(&MmseContext::from_profile(&pb, &cfg, &layout, 0.05)).unwrap();
        assert_eq!(a, m);
        let s = ScenarioImpairmentStats { theta_min: -40, epsilon_max: 0.0 };
        assert_ne!(ammse_weights(&pb, &cfg, &layout, 0.05, &s).unwrap(), m);
    }

    #[test]
    fn da_lmmse_without_distortion_is_mmse() {
        let (cfg, layout) = default_layout();
        let ctx = MmseContext::from_profile(&PowerDelayProfile::pedestrian_b(), &cfg, &layout, 0.01);
        let mut rng = SimRng::seed_from_u64(43);
        let da = da_lmmse_weights(&ctx, &cfg, 1e9, 3, &mut rng).unwrap();
        let du = mmse_weights(&ctx).unwrap();
        assert!((da.w - du.w).norm() < 1e-12);
        assert!(da_lmmse_weights(&ctx, &cfg, 1.0, 0, &mut rng).is_err());
        let clipped = da_lmmse_weights(&ctx, &cfg, 1.0, 3, &mut rng).unwrap();
        assert!((clipped.w - mmse_weights(&ctx).unwrap().w).norm() > 1e-3);
    }

    #[test]
    fn apply_linear_is_homogeneous_and_stateless() {
        let (cfg, layout) = default_layout();
        let w = mmse_weights(&MmseContext::from_profile(&PowerDelayProfile::pedestrian_b(), &cfg, &layout, 0.1)).unwrap();
        let groups = vec![vec![c(1.0, 0.5), c(-0.2, 0.3)], vec![c(0.1, 0.0), c(0.9, -0.9)]];
        let out = apply_linear(&w, &groups).unwrap();
        let reversed: Vec<_> = groups.iter().rev().cloned().collect();
        let out_rev = apply_linear(&w, &reversed).unwrap();
        assert_eq!(out[0], out_rev[1]);
        assert_eq!(out[1], out_rev[0]);
        let k = c(2.0, 0.0);
        let scaled: Vec<Vec<Complex64>> = groups.iter().map(|g| g.iter().map(|v| v * k).collect()).collect();
        let out_scaled = apply_linear(&w, &scaled).unwrap();
        for (a, b) in out.iter().flatten().zip(out_scaled.iter().flatten()) {
            assert_eq!(a * k, *b);
        }
        assert!(apply_linear(&w, &[vec![c(1.0, 0.0)]]).is_err());
    }

    #[test]
    fn identity_weights_copy_pilots() {
        let est = LinearEstimator::new(CMatrix::identity(2, 2)).unwrap();
        let p = vec![c(1.0, 2.0), c(3.0, 4.0)];
        assert_eq!(est.estimate_group(&p).unwrap(), p);
    }

    #[test]
    fn weights_text_round_trip() {
        let (cfg, layout) = default_layout();
        let w = mmse_weights(&MmseContext::from_profile(&PowerDelayProfile::pedestrian_b(), &cfg, &layout, 0.1)).unwrap();
        let text = w.to_text();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(LinearEstimator::from_text(&text).unwrap(), w);
        assert!(LinearEstimator::from_text("1 2 3\n").is_err());
        assert!(LinearEstimator::from_text("1 2\n1 2 3 4\n").is_err());
    }

    fn linear_dataset(rng: &mut SimRng, w0: &CMatrix, t: usize) -> TrainingSet {
        let m = w0.ncols();
        let x = CMatrix::from_fn(m, t, |_, _| sample_cgauss(rng, 1.0).unwrap());
        let y = w0 * &x;
        TrainingSet::new(x, y, LabelKind::True).unwrap()
    }

    #[test]
    fn celm_identity_reduces_to_linear_fit() {
        let mut rng = SimRng::seed_from_u64(44);
        let w0 = CMatrix::from_fn(2, 2, |_, _| sample_cgauss(&mut rng, 1.0).unwrap());
        let data = linear_dataset(&mut rng, &w0, 406);
        let elm = celm_train(&data, 8, Activation::Identity, &mut rng).unwrap();
        assert_eq!(elm.output_weights.shape(), (2, 8));
        for _ in 0..20 {
            let x = vec![sample_cgauss(&mut rng, 1.0).unwrap(), sample_cgauss(&mut rng, 1.0).unwrap()];
            let y = celm_apply(&elm, &x).unwrap();
            for s in 0..2 {
                let expected = w0[(s, 0)] * x[0] + w0[(s, 1)] * x[1];
                assert!((y[s] - expected).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn celm_fit_beats_zero_output() {
        let mut rng = SimRng::seed_from_u64(45);
        let w0 = CMatrix::from_fn(2, 2, |_, _| sample_cgauss(&mut rng, 1.0).unwrap());
        let mut data = linear_dataset(&mut rng, &w0, 406);
        for v in data.y_o.iter_mut() {
            *v += sample_cgauss(&mut rng, 0.1).unwrap();
        }
        let elm = celm_train(&data, 8, Activation::SplitAsinh, &mut rng).unwrap();
        let mut loss = 0.0;
        for t in 0..data.len() {
            let x = [data.x_i[(0, t)], data.x_i[(1, t)]];
            let y = celm_apply(&elm, &x).unwrap();
            loss += (y[0] - data.y_o[(0, t)]).norm_sqr() + (y[1] - data.y_o[(1, t)]).norm_sqr();
        }
        assert!(loss <= data.y_o.norm_squared());
        assert!(celm_train(&linear_dataset(&mut rng, &w0, 8), 8, Activation::SplitAsinh, &mut rng).is_err());
        assert!(celm_apply(&elm, &[c(1.0, 0.0)]).is_err());
    }
}
