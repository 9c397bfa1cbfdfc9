//! Scenario definitions and the Monte Carlo sweep engine.
//!
//! Every frame of a sweep is generated from a seed derived from the master
//! seed, the scenario label, the operating SNR and the run index. All
//! estimators of a sweep see the same frames, so their curves differ only
//! by the estimator. Per-frame statistics are accumulated in fixed point so
//! merging is exact and independent of scheduling.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::channel::{
    apply_sto_cfo, calibrate_clipping, cfo_symbol_gain, clip, effective_cfr, propagate, sample_realization,
    ClipDistortion, ImpairmentConfig, PowerDelayProfile, ScenarioImpairmentStats,
};
use crate::error::{Error, Result};
use crate::estimators::{
    ammse_weights, celm_train, da_lmmse_weights_with, estimate_symbol, interpolate_linear,
    ls_pilot_estimate, mmse_weights, Activation, ElmEstimator, GroupEstimator, LinearEstimator,
    MmseContext,
};
use crate::numerics::SimRng;
use crate::phy::{
    count_bit_errors, demodulate, modulate, pilot_indices, zf_equalize_detect, FrameGrid,
    GroupLayout, OfdmConfig,
};
use crate::training::{
    block_pilot_ls, ddtdg_generate_and_fit, fit_weights_with_rank, ideal_label_dataset,
    patdg_extract, TrainingSet,
};

/// Clipping threshold relative to the frame RMS used by scenario 3.
pub const DEFAULT_CLIP_RATIO: f64 = 1.0;
/// Hidden units of the C-ELM baseline.
pub const DEFAULT_ELM_HIDDEN: usize = 8;
/// Frames used to calibrate the clipping distortion.
pub const DEFAULT_CALIBRATION_FRAMES: usize = 200;
/// Operating point and scenario of the offline baselines.
pub const DEFAULT_OFFLINE_EBN0_DB: f64 = 22.0;
pub const DEFAULT_OFFLINE_DATASET: usize = 40_600;

const FIXED_POINT_SHIFT: i32 = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ScenarioId {
    S1,
    S2,
    S3,
    Changing,
}

impl ScenarioId {
    pub fn label(self) -> &'static str {
        match self {
            ScenarioId::S1 => "s1",
            ScenarioId::S2 => "s2",
            ScenarioId::S3 => "s3",
            ScenarioId::Changing => "changing",
        }
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" | "1" => Ok(ScenarioId::S1),
            "s2" | "2" => Ok(ScenarioId::S2),
            "s3" | "3" => Ok(ScenarioId::S3),
            "changing" | "mixed" => Ok(ScenarioId::Changing),
            _ => Err(Error::InvalidConfig {
                field: "scenario",
                reason: format!("unknown scenario `{s}` (expected s1, s2, s3 or changing)"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub id: ScenarioId,
    pub stats: ScenarioImpairmentStats,
    pub clip_ratio: Option<f64>,
    pub profile: PowerDelayProfile,
    /// Scenarios drawn with equal probability per frame; only used by
    /// [`ScenarioId::Changing`].
    pub mixture: Vec<ScenarioConfig>,
}

impl ScenarioConfig {
    /// Ideal synchronisation, no distortion.
    pub fn s1(profile: PowerDelayProfile) -> Self {
        Self {
            id: ScenarioId::S1,
            stats: ScenarioImpairmentStats::default(),
            clip_ratio: None,
            profile,
            mixture: Vec::new(),
        }
    }

    /// Random timing and frequency offsets.
    pub fn s2(profile: PowerDelayProfile, theta_min: i64, epsilon_max: f64) -> Self {
        Self {
            id: ScenarioId::S2,
            stats: ScenarioImpairmentStats { theta_min, epsilon_max },
            ..Self::s1(profile)
        }
    }

    /// Transmitter clipping only.
    pub fn s3(profile: PowerDelayProfile, clip_ratio: f64) -> Self {
        Self {
            id: ScenarioId::S3,
            clip_ratio: Some(clip_ratio),
            ..Self::s1(profile)
        }
    }

    /// Per-frame choice among `s1`, `s2(-20, 0.01)` and `s3`.
    pub fn changing(profile: PowerDelayProfile) -> Self {
        let mixture = vec![
            Self::s1(profile.clone()),
            Self::s2(profile.clone(), -20, 0.01),
            Self::s3(profile.clone(), DEFAULT_CLIP_RATIO),
        ];
        Self::mixture_of(profile, mixture)
    }

    pub fn mixture_of(profile: PowerDelayProfile, mixture: Vec<ScenarioConfig>) -> Self {
        Self {
            id: ScenarioId::Changing,
            mixture,
            ..Self::s1(profile)
        }
    }

    pub fn label(&self) -> &'static str {
        self.id.label()
    }

    pub fn validate(&self, cfg: &OfdmConfig) -> Result<()> {
        if self.id == ScenarioId::Changing {
            if self.mixture.is_empty() {
                return Err(Error::InvalidConfig {
                    field: "scenario",
                    reason: "changing scenario needs at least one component".into(),
                });
            }
            return self.mixture.iter().try_for_each(|s| {
                if s.id == ScenarioId::Changing {
                    Err(Error::InvalidConfig {
                        field: "scenario",
                        reason: "nested changing scenarios".into(),
                    })
                } else {
                    s.validate(cfg)
                }
            });
        }
        let span = self.profile.max_delay_samples(cfg.sample_rate);
        let worst = ImpairmentConfig {
            theta: self.stats.theta_min.min(0),
            epsilon: self.stats.epsilon_max,
            clip_ratio: self.clip_ratio,
        };
        worst.validate(cfg, span + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EstimatorId {
    Genie,
    Ls,
    Linear,
    Mmse,
    DuMmse,
    Ammse,
    DaLmmse,
    LmlPatdg,
    LmlTrueLabels,
    LmlDdtdg,
    CelmOnline,
    LmlOffline,
    CelmOffline,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 13] = [
        EstimatorId::Genie,
        EstimatorId::Ls,
        EstimatorId::Linear,
        EstimatorId::Mmse,
        EstimatorId::DuMmse,
        EstimatorId::Ammse,
        EstimatorId::DaLmmse,
        EstimatorId::LmlPatdg,
        EstimatorId::LmlTrueLabels,
        EstimatorId::LmlDdtdg,
        EstimatorId::CelmOnline,
        EstimatorId::LmlOffline,
        EstimatorId::CelmOffline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorId::Genie => "genie",
            EstimatorId::Ls => "ls",
            EstimatorId::Linear => "linear",
            EstimatorId::Mmse => "mmse",
            EstimatorId::DuMmse => "du-mmse",
            EstimatorId::Ammse => "ammse",
            EstimatorId::DaLmmse => "da-lmmse",
            EstimatorId::LmlPatdg => "lml-patdg",
            EstimatorId::LmlTrueLabels => "lml-true-labels",
            EstimatorId::LmlDdtdg => "lml-ddtdg",
            EstimatorId::CelmOnline => "celm-online",
            EstimatorId::LmlOffline => "lml-offline",
            EstimatorId::CelmOffline => "celm-offline",
        }
    }

    /// Display name used in plot legends.
    pub fn legend(self) -> &'static str {
        match self {
            EstimatorId::Genie => "Known CSI",
            EstimatorId::Ls => "LS",
            EstimatorId::Linear => "Linear interp.",
            EstimatorId::Mmse => "MMSE",
            EstimatorId::DuMmse => "DU-MMSE",
            EstimatorId::Ammse => "AMMSE",
            EstimatorId::DaLmmse => "DA-LMMSE",
            EstimatorId::LmlPatdg => "LML (PATDG)",
            EstimatorId::LmlTrueLabels => "LML (true labels)",
            EstimatorId::LmlDdtdg => "LML (DDTDG)",
            EstimatorId::CelmOnline => "C-ELM (online)",
            EstimatorId::LmlOffline => "LML (offline)",
            EstimatorId::CelmOffline => "C-ELM (offline)",
        }
    }

    fn needs_offline(self) -> bool {
        matches!(self, EstimatorId::LmlOffline | EstimatorId::CelmOffline)
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let alias = match lower.as_str() {
            "lml" => "lml-patdg",
            "celm" => "celm-online",
            "known-csi" => "genie",
            other => other,
        };
        EstimatorId::ALL
            .iter()
            .copied()
            .find(|e| e.name() == alias)
            .ok_or_else(|| Error::InvalidConfig {
                field: "estimators",
                reason: format!("unknown estimator `{s}`"),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Nmse,
    Ber,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Nmse => "nmse",
            Metric::Ber => "ber",
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nmse" => Ok(Metric::Nmse),
            "ber" => Ok(Metric::Ber),
            _ => Err(Error::InvalidConfig {
                field: "metric",
                reason: format!("unknown metric `{s}` (expected nmse or ber)"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XAxis {
    SnrDb,
    EbN0Db,
    /// Training-set size of the online estimators at a fixed SNR.
    DatasetSize,
}

impl XAxis {
    pub fn name(self) -> &'static str {
        match self {
            XAxis::SnrDb => "snr_db",
            XAxis::EbN0Db => "ebn0_db",
            XAxis::DatasetSize => "dataset_size",
        }
    }
}

impl FromStr for XAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "snr" | "snr_db" => Ok(XAxis::SnrDb),
            "ebn0" | "ebn0_db" => Ok(XAxis::EbN0Db),
            "dataset" | "dataset_size" => Ok(XAxis::DatasetSize),
            _ => Err(Error::InvalidConfig {
                field: "x_axis",
                reason: format!("unknown x axis `{s}`"),
            }),
        }
    }
}

/// Bits carried by one QPSK symbol.
pub const QPSK_BITS: u32 = 2;

pub fn ebn0_to_snr(ebn0_db: f64, bits_per_symbol: u32) -> f64 {
    ebn0_db + 10.0 * f64::from(bits_per_symbol).log10()
}

pub fn snr_to_ebn0(snr_db: f64, bits_per_symbol: u32) -> f64 {
    snr_db - 10.0 * f64::from(bits_per_symbol).log10()
}

/// Per-subcarrier noise variance for unit-power symbols.
pub fn noise_var_from_snr(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub scenario: ScenarioConfig,
    pub estimators: Vec<EstimatorId>,
    pub metric: Metric,
    pub x_axis: XAxis,
    pub points: Vec<f64>,
    pub runs: usize,
    pub seed: u64,
    pub ofdm: OfdmConfig,
    /// Operating SNR when the x axis is not an SNR.
    pub snr_db: f64,
    /// Caps the online training set; `None` uses every window.
    pub dataset_size: Option<usize>,
    pub calibration_frames: usize,
    pub elm_hidden: usize,
}

impl SweepSpec {
    pub fn new(scenario: ScenarioConfig, estimators: Vec<EstimatorId>, metric: Metric, x_axis: XAxis, points: Vec<f64>) -> Self {
        Self {
            scenario,
            estimators,
            metric,
            x_axis,
            points,
            runs: 2000,
            seed: 0,
            ofdm: OfdmConfig::default(),
            snr_db: 10.0,
            dataset_size: None,
            calibration_frames: DEFAULT_CALIBRATION_FRAMES,
            elm_hidden: DEFAULT_ELM_HIDDEN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ofdm.validate()?;
        self.scenario.validate(&self.ofdm)?;
        if self.runs == 0 {
            return Err(Error::InvalidConfig { field: "runs", reason: "must be at least 1".into() });
        }
        if self.points.is_empty() {
            return Err(Error::InvalidConfig { field: "grid", reason: "no points".into() });
        }
        if self.points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidConfig { field: "grid", reason: "non-finite point".into() });
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidConfig { field: "estimators", reason: "empty list".into() });
        }
        if self.x_axis == XAxis::DatasetSize
            && self.points.iter().any(|&p| p.fract() != 0.0 || p <= self.ofdm.taps as f64)
        {
            return Err(Error::InvalidConfig {
                field: "grid",
                reason: format!("dataset sizes must be integers above {}", self.ofdm.taps),
            });
        }
        if self.scenario.clip_ratio.is_some() || self.scenario.mixture.iter().any(|s| s.clip_ratio.is_some()) {
            if self.estimators.contains(&EstimatorId::DaLmmse) && self.calibration_frames == 0 {
                return Err(Error::InvalidConfig {
                    field: "calibration_frames",
                    reason: "must be at least 1".into(),
                });
            }
        }
        Ok(())
    }

    /// The SNR at which point `x` is simulated.
    pub fn snr_at(&self, x: f64) -> f64 {
        match self.x_axis {
            XAxis::SnrDb => x,
            XAxis::EbN0Db => ebn0_to_snr(x, QPSK_BITS),
            XAxis::DatasetSize => self.snr_db,
        }
    }

    fn dataset_at(&self, x: f64) -> Option<usize> {
        match self.x_axis {
            XAxis::DatasetSize => Some(x as usize),
            _ => self.dataset_size,
        }
    }
}

/// Seed for one stream, from a SHA-256 over the identifying fields.
pub fn derive_seed(master: u64, label: &str, snr_db: f64, run: u64, stream: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(snr_db.to_bits().to_le_bytes());
    h.update(run.to_le_bytes());
    h.update((stream.len() as u64).to_le_bytes());
    h.update(stream.as_bytes());
    h.finalize().into()
}

pub fn stream_rng(master: u64, label: &str, snr_db: f64, run: u64, stream: &str) -> SimRng {
    SimRng::from_seed(derive_seed(master, label, snr_db, run, stream))
}

/// Index into a changing scenario's mixture for a given frame.
pub fn draw_component(master: u64, snr_db: f64, run: u64, components: usize) -> usize {
    stream_rng(master, ScenarioId::Changing.label(), snr_db, run, "draw").random_range(0..components)
}

fn quantize(x: f64) -> i128 {
    (x * 2f64.powi(FIXED_POINT_SHIFT)).round() as i128
}

fn dequantize(x: i128) -> f64 {
    x as f64 / 2f64.powi(FIXED_POINT_SHIFT)
}

/// Exact, mergeable per-cell statistics. Real-valued sums are kept in fixed
/// point so that addition is associative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Accumulator {
    pub err: i128,
    pub pow: i128,
    pub err_sq: i128,
    pub pow_sq: i128,
    pub err_pow: i128,
    pub bit_errors: u64,
    pub bits: u64,
    pub bit_errors_sq: u128,
    pub frames: u64,
    pub flags: u64,
}

impl Accumulator {
    pub fn merge(&mut self, o: &Accumulator) {
        self.err = self.err.saturating_add(o.err);
        self.pow = self.pow.saturating_add(o.pow);
        self.err_sq = self.err_sq.saturating_add(o.err_sq);
        self.pow_sq = self.pow_sq.saturating_add(o.pow_sq);
        self.err_pow = self.err_pow.saturating_add(o.err_pow);
        self.bit_errors += o.bit_errors;
        self.bits += o.bits;
        self.bit_errors_sq += o.bit_errors_sq;
        self.frames += o.frames;
        self.flags += o.flags;
    }

    /// Records one frame.
    pub fn add_frame(&mut self, err: f64, pow: f64, bit_errors: u64, bits: u64, flags: u64) {
        self.err = self.err.saturating_add(quantize(err));
        self.pow = self.pow.saturating_add(quantize(pow));
        self.err_sq = self.err_sq.saturating_add(quantize(err * err));
        self.pow_sq = self.pow_sq.saturating_add(quantize(pow * pow));
        self.err_pow = self.err_pow.saturating_add(quantize(err * pow));
        self.bit_errors += bit_errors;
        self.bits += bits;
        self.bit_errors_sq += u128::from(bit_errors) * u128::from(bit_errors);
        self.frames += 1;
        self.flags += flags;
    }

    pub fn nmse(&self) -> f64 {
        let p = dequantize(self.pow);
        if p > 0.0 {
            dequantize(self.err) / p
        } else {
            f64::NAN
        }
    }

    /// Standard error of the ratio estimate over frames (delta method).
    pub fn nmse_stderr(&self) -> f64 {
        ratio_stderr(
            self.frames as f64,
            dequantize(self.err),
            dequantize(self.pow),
            dequantize(self.err_sq),
            dequantize(self.pow_sq),
            dequantize(self.err_pow),
        )
    }

    pub fn ber(&self) -> f64 {
        if self.bits > 0 {
            self.bit_errors as f64 / self.bits as f64
        } else {
            f64::NAN
        }
    }

    /// Standard error of the BER with frames as independent clusters.
    pub fn ber_stderr(&self) -> f64 {
        if self.frames < 2 || self.bits == 0 {
            return f64::NAN;
        }
        let n = self.frames as f64;
        let b = self.bits as f64 / n;
        let mean = self.bit_errors as f64 / n;
        let var = ((self.bit_errors_sq as f64) - n * mean * mean).max(0.0) / (n - 1.0);
        (var / n).sqrt() / b
    }

    pub fn value(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Nmse => self.nmse(),
            Metric::Ber => self.ber(),
        }
    }

    pub fn stderr(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Nmse => self.nmse_stderr(),
            Metric::Ber => self.ber_stderr(),
        }
    }
}

fn ratio_stderr(n: f64, se: f64, sp: f64, see: f64, spp: f64, sep: f64) -> f64 {
    if n < 2.0 || sp <= 0.0 {
        return f64::NAN;
    }
    let (me, mp) = (se / n, sp / n);
    let r = me / mp;
    let var_e = (see - n * me * me) / (n - 1.0);
    let var_p = (spp - n * mp * mp) / (n - 1.0);
    let cov = (sep - n * me * mp) / (n - 1.0);
    ((var_e - 2.0 * r * cov + r * r * var_p).max(0.0) / n).sqrt() / mp
}

/// Adds `sum |h_hat - h|^2` and `sum |h|^2` to a running pair.
pub fn nmse_accumulate(h_hat: &[Complex64], h: &[Complex64], acc: &mut (f64, f64)) -> Result<()> {
    if h_hat.len() != h.len() {
        return Err(Error::SizeMismatch { expected: h.len(), actual: h_hat.len() });
    }
    for (a, b) in h_hat.iter().zip(h) {
        acc.0 += (a - b).norm_sqr();
        acc.1 += b.norm_sqr();
    }
    Ok(())
}

/// One estimator's statistics for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FrameErrors {
    pub err: f64,
    pub pow: f64,
    pub bit_errors: u64,
    pub bits: u64,
    pub flags: u64,
}

impl FrameErrors {
    pub fn nmse(&self) -> f64 {
        self.err / self.pow
    }
}

/// Frozen estimators trained once, ahead of a sweep.
#[derive(Debug, Clone, Default)]
pub struct OfflineBaselines {
    pub lml: Option<LinearEstimator>,
    pub celm: Option<ElmEstimator>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OfflineKind {
    Lml,
    Celm,
}

#[derive(Debug, Clone)]
pub enum OfflineEstimator {
    Lml(LinearEstimator),
    Celm(ElmEstimator),
}

impl GroupEstimator for OfflineEstimator {
    fn estimate_group(&self, pilots: &[Complex64]) -> Result<Vec<Complex64>> {
        match self {
            OfflineEstimator::Lml(w) => w.estimate_group(pilots),
            OfflineEstimator::Celm(e) => e.estimate_group(pilots),
        }
    }
}

/// Everything shared by the frames of one sweep point and one scenario.
pub struct PointContext<'a> {
    pub cfg: &'a OfdmConfig,
    pub layout: &'a GroupLayout,
    pub scenario: &'a ScenarioConfig,
    pub snr_db: f64,
    pub noise_var: f64,
    pub dataset_size: Option<usize>,
    pub elm_hidden: usize,
    mmse: Option<LinearEstimator>,
    ammse: Option<LinearEstimator>,
    da_lmmse: Option<LinearEstimator>,
    offline: Option<&'a OfflineBaselines>,
}

impl<'a> PointContext<'a> {
    pub fn new(
        cfg: &'a OfdmConfig,
        layout: &'a GroupLayout,
        scenario: &'a ScenarioConfig,
        snr_db: f64,
        estimators: &[EstimatorId],
        distortion: Option<&ClipDistortion>,
        offline: Option<&'a OfflineBaselines>,
    ) -> Result<Self> {
        let noise_var = noise_var_from_snr(snr_db);
        let wants = |e: &[EstimatorId]| estimators.iter().any(|x| e.contains(x));
        let base = MmseContext::from_profile(&scenario.profile, cfg, layout, noise_var);
        let mmse = if wants(&[EstimatorId::Mmse, EstimatorId::DuMmse]) {
            Some(mmse_weights(&base)?)
        } else {
            None
        };
        let ammse = if wants(&[EstimatorId::Ammse]) {
            Some(ammse_weights(&scenario.profile, cfg, layout, noise_var, &scenario.stats)?)
        } else {
            None
        };
        let da_lmmse = if wants(&[EstimatorId::DaLmmse]) {
            let d = distortion.copied().unwrap_or_else(ClipDistortion::none);
            Some(da_lmmse_weights_with(&base, &d)?)
        } else {
            None
        };
        Ok(Self {
            cfg,
            layout,
            scenario,
            snr_db,
            noise_var,
            dataset_size: None,
            elm_hidden: DEFAULT_ELM_HIDDEN,
            mmse,
            ammse,
            da_lmmse,
            offline,
        })
    }
}

/// A simulated frame after the receiver DFT.
pub struct ReceivedFrame {
    pub grid: FrameGrid,
    /// Used bins of every received symbol.
    pub bins: Vec<Vec<Complex64>>,
    /// Effective channel of every symbol: the timing-offset phase ramp and
    /// the diagonal part of the frequency offset are included.
    pub h_true: Vec<Vec<Complex64>>,
    pub theta: i64,
    pub epsilon: f64,
}

/// Draws channel, offsets, payload and noise for one frame.
pub fn simulate_frame<R: Rng + ?Sized>(
    cfg: &OfdmConfig,
    scenario: &ScenarioConfig,
    noise_var: f64,
    rng: &mut R,
) -> Result<ReceivedFrame> {
    let (theta, epsilon) = scenario.stats.draw(rng);
    let real = sample_realization(&scenario.profile, cfg, rng)?;
    let grid = FrameGrid::random(cfg, rng)?;
    let mut tx = modulate(&grid, cfg)?;
    if let Some(ratio) = scenario.clip_ratio {
        tx = clip(&tx, ratio)?;
    }
    let rx = propagate(&tx, &real, noise_var, rng)?;
    let imp = ImpairmentConfig { theta, epsilon, clip_ratio: None };
    let rx = apply_sto_cfo(&rx, &imp, cfg)?;
    let h = effective_cfr(&real, theta, cfg);
    let h_true = (0..cfg.symbols_per_frame())
        .map(|s| {
            let g = cfo_symbol_gain(s, epsilon, cfg);
            h.iter().map(|v| v * g).collect()
        })
        .collect();
    Ok(ReceivedFrame {
        bins: demodulate(&rx, cfg)?,
        h_true,
        grid,
        theta,
        epsilon,
    })
}

fn fit_online(ts: &TrainingSet, size: Option<usize>) -> Result<(LinearEstimator, u64)> {
    let ts = match size {
        Some(n) => ts.truncated(n),
        None => ts.clone(),
    };
    let fit = fit_weights_with_rank(&ts)?;
    let flag = u64::from(fit.rank_deficient());
    Ok((fit.estimator, flag))
}

/// Simulates one frame and evaluates every requested estimator on it.
/// `est_rng` seeds estimator-internal randomness; it receives the estimator
/// name so different estimators get independent streams.
pub fn run_frame<R, F>(
    ctx: &PointContext<'_>,
    estimators: &[EstimatorId],
    frame_rng: &mut R,
    mut est_rng: F,
) -> Result<Vec<FrameErrors>>
where
    R: Rng + ?Sized,
    F: FnMut(EstimatorId) -> SimRng,
{
    let cfg = ctx.cfg;
    let frame = simulate_frame(cfg, ctx.scenario, ctx.noise_var, frame_rng)?;
    evaluate_frame(ctx, estimators, &frame, &mut est_rng)
}

/// Evaluates estimators on an already simulated frame.
pub fn evaluate_frame<F>(
    ctx: &PointContext<'_>,
    estimators: &[EstimatorId],
    frame: &ReceivedFrame,
    est_rng: &mut F,
) -> Result<Vec<FrameErrors>>
where
    F: FnMut(EstimatorId) -> SimRng,
{
    let cfg = ctx.cfg;
    let layout = ctx.layout;
    let data_idx = layout.data_indices();
    let pilot_idx = pilot_indices(cfg)?;
    let nb = cfg.n_block_pilot;
    let h_d: Vec<Vec<Complex64>> = frame.h_true[nb..]
        .iter()
        .map(|h| data_idx.iter().map(|&i| h[i]).collect())
        .collect();

    let block_ls: Vec<Vec<Complex64>> = (0..nb)
        .map(|b| block_pilot_ls(&frame.bins[b], &frame.grid.symbols[b]))
        .collect::<Result<_>>()?;
    let comb_ls: Vec<Vec<Complex64>> = frame.bins[nb..]
        .iter()
        .map(|sym| {
            let y: Vec<Complex64> = pilot_idx.iter().map(|&i| sym[i]).collect();
            ls_pilot_estimate(&y, &frame.grid.pilot_values)
        })
        .collect::<Result<_>>()?;

    let online_set = |true_labels: bool| -> Result<TrainingSet> {
        let parts: Vec<TrainingSet> = block_ls
            .iter()
            .zip(&frame.h_true)
            .map(|(h, truth)| {
                if true_labels {
                    ideal_label_dataset(h, truth, cfg)
                } else {
                    patdg_extract(h, cfg)
                }
            })
            .collect::<Result<_>>()?;
        TrainingSet::concat(&parts)
    };

    let per_symbol = |est: &dyn GroupEstimator| -> Result<Vec<Vec<Complex64>>> {
        comb_ls.iter().map(|p| estimate_symbol(est, p, layout)).collect()
    };

    let mut out = Vec::with_capacity(estimators.len());
    for &id in estimators {
        let mut flags = 0u64;
        let estimates: Vec<Vec<Complex64>> = match id {
            EstimatorId::Genie => h_d.clone(),
            EstimatorId::Ls => {
                let avg: Vec<Complex64> = data_idx
                    .iter()
                    .map(|&i| block_ls.iter().map(|h| h[i]).sum::<Complex64>() / nb as f64)
                    .collect();
                vec![avg; cfg.n_data]
            }
            EstimatorId::Linear => comb_ls
                .iter()
                .map(|p| interpolate_linear(p, cfg))
                .collect::<Result<_>>()?,
            EstimatorId::Mmse | EstimatorId::DuMmse => per_symbol(ctx.mmse.as_ref().expect("mmse weights"))?,
            EstimatorId::Ammse => per_symbol(ctx.ammse.as_ref().expect("ammse weights"))?,
            EstimatorId::DaLmmse => per_symbol(ctx.da_lmmse.as_ref().expect("da-lmmse weights"))?,
            EstimatorId::LmlPatdg | EstimatorId::LmlTrueLabels => {
                let ts = online_set(id == EstimatorId::LmlTrueLabels)?;
                let (w, f) = fit_online(&ts, ctx.dataset_size)?;
                flags += f;
                per_symbol(&w)?
            }
            EstimatorId::LmlDdtdg => frame.bins[nb..]
                .iter()
                .map(|sym| {
                    let o = ddtdg_generate_and_fit(sym, &frame.grid.pilot_values, cfg, layout)?;
                    flags += u64::from(o.rank < cfg.taps);
                    Ok(o.refined)
                })
                .collect::<Result<_>>()?,
            EstimatorId::CelmOnline => {
                let ts = online_set(false)?;
                let ts = match ctx.dataset_size {
                    Some(n) => ts.truncated(n),
                    None => ts,
                };
                let mut rng = est_rng(id);
                let elm = celm_train(&ts, ctx.elm_hidden, Activation::SplitAsinh, &mut rng)?;
                per_symbol(&elm)?
            }
            EstimatorId::LmlOffline => {
                let w = ctx
                    .offline
                    .and_then(|o| o.lml.as_ref())
                    .ok_or_else(|| Error::MissingBaseline(id.name().into()))?;
                per_symbol(w)?
            }
            EstimatorId::CelmOffline => {
                let e = ctx
                    .offline
                    .and_then(|o| o.celm.as_ref())
                    .ok_or_else(|| Error::MissingBaseline(id.name().into()))?;
                per_symbol(e)?
            }
        };

        let mut acc = (0.0, 0.0);
        let mut bit_errors = 0;
        let mut bits = 0;
        for (s, est) in estimates.iter().enumerate() {
            nmse_accumulate(est, &h_d[s], &mut acc)?;
            let rx_d: Vec<Complex64> = data_idx.iter().map(|&i| frame.bins[nb + s][i]).collect();
            let det = zf_equalize_detect(&rx_d, est)?;
            flags += det.flagged as u64;
            bit_errors += count_bit_errors(&det.bits, &frame.grid.data_bits[s]);
            bits += det.bits.len() as u64;
        }
        out.push(FrameErrors { err: acc.0, pow: acc.1, bit_errors, bits, flags });
    }
    Ok(out)
}

/// Accumulated statistics of a sweep, keyed by estimator and point index.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub scenario: String,
    pub metric: Metric,
    pub x_axis: XAxis,
    pub points: Vec<f64>,
    pub seed: u64,
    pub cells: BTreeMap<(EstimatorId, usize), Accumulator>,
}

/// One row of the emitted result table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario: String,
    pub estimator: String,
    pub x_axis: String,
    pub x: f64,
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
    pub runs: u64,
    pub seed: u64,
}

impl RunResult {
    pub fn empty(spec: &SweepSpec) -> Self {
        Self {
            scenario: spec.scenario.label().to_string(),
            metric: spec.metric,
            x_axis: spec.x_axis,
            points: spec.points.clone(),
            seed: spec.seed,
            cells: BTreeMap::new(),
        }
    }

    /// Adds another result over the same grid.
    pub fn merge(&mut self, other: &RunResult) -> Result<()> {
        if self.points != other.points || self.scenario != other.scenario {
            return Err(Error::DimensionMismatch("merging results of different sweeps".into()));
        }
        for (k, v) in &other.cells {
            self.cells.entry(*k).or_default().merge(v);
        }
        Ok(())
    }

    pub fn get(&self, est: EstimatorId, point: usize) -> Option<&Accumulator> {
        self.cells.get(&(est, point))
    }

    /// Metric value of every point for one estimator.
    pub fn series(&self, est: EstimatorId) -> Vec<f64> {
        (0..self.points.len())
            .map(|p| self.get(est, p).map_or(f64::NAN, |a| a.value(self.metric)))
            .collect()
    }

    pub fn stderr_series(&self, est: EstimatorId) -> Vec<f64> {
        (0..self.points.len())
            .map(|p| self.get(est, p).map_or(f64::NAN, |a| a.stderr(self.metric)))
            .collect()
    }

    /// Rows ordered by estimator, then by ascending x.
    pub fn rows(&self) -> Vec<ResultRow> {
        let mut order: Vec<usize> = (0..self.points.len()).collect();
        order.sort_by(|&a, &b| self.points[a].total_cmp(&self.points[b]));
        let estimators: Vec<EstimatorId> = {
            let mut e: Vec<EstimatorId> = self.cells.keys().map(|k| k.0).collect();
            e.dedup();
            e
        };
        let mut rows = Vec::new();
        for est in estimators {
            for &p in &order {
                if let Some(acc) = self.get(est, p) {
                    rows.push(ResultRow {
                        scenario: self.scenario.clone(),
                        estimator: est.name().to_string(),
                        x_axis: self.x_axis.name().to_string(),
                        x: self.points[p],
                        metric: self.metric.name().to_string(),
                        value: acc.value(self.metric),
                        stderr: acc.stderr(self.metric),
                        runs: acc.frames,
                        seed: self.seed,
                    });
                }
            }
        }
        rows
    }
}

/// Calibrates clipping once per scenario component, from its own stream.
fn calibrations(spec: &SweepSpec) -> Result<Vec<Option<ClipDistortion>>> {
    let comps = components(&spec.scenario);
    comps
        .iter()
        .map(|s| match s.clip_ratio {
            Some(r) if spec.estimators.contains(&EstimatorId::DaLmmse) => {
                let mut rng = stream_rng(spec.seed, s.label(), 0.0, 0, "clip-calibration");
                calibrate_clipping(&spec.ofdm, r, spec.calibration_frames, &mut rng).map(Some)
            }
            _ => Ok(None),
        })
        .collect()
}

fn components(s: &ScenarioConfig) -> Vec<&ScenarioConfig> {
    if s.id == ScenarioId::Changing {
        s.mixture.iter().collect()
    } else {
        vec![s]
    }
}

/// Runs every point of a sweep. Frames are distributed over the rayon pool;
/// results do not depend on the number of workers.
pub fn run_sweep(spec: &SweepSpec) -> Result<RunResult> {
    run_sweep_with(spec, None)
}

pub fn run_sweep_with(spec: &SweepSpec, offline: Option<&OfflineBaselines>) -> Result<RunResult> {
    spec.validate()?;
    if let Some(e) = spec.estimators.iter().find(|e| e.needs_offline()) {
        let present = match e {
            EstimatorId::LmlOffline => offline.is_some_and(|o| o.lml.is_some()),
            _ => offline.is_some_and(|o| o.celm.is_some()),
        };
        if !present {
            return Err(Error::MissingBaseline(e.name().into()));
        }
    }
    let cfg = &spec.ofdm;
    let layout = GroupLayout::new(cfg)?;
    let comps = components(&spec.scenario);
    let dists = calibrations(spec)?;
    let mut estimators = spec.estimators.clone();
    estimators.sort();
    estimators.dedup();

    let mut result = RunResult::empty(spec);
    for (p, &x) in spec.points.iter().enumerate() {
        let snr = spec.snr_at(x);
        let contexts: Vec<PointContext<'_>> = comps
            .iter()
            .zip(&dists)
            .map(|(s, d)| {
                let mut ctx = PointContext::new(cfg, &layout, s, snr, &estimators, d.as_ref(), offline)?;
                ctx.dataset_size = spec.dataset_at(x);
                ctx.elm_hidden = spec.elm_hidden;
                Ok(ctx)
            })
            .collect::<Result<_>>()?;
        let changing = spec.scenario.id == ScenarioId::Changing;

        let totals = (0..spec.runs as u64)
            .into_par_iter()
            .map(|run| -> Result<Vec<Accumulator>> {
                let c = if changing {
                    draw_component(spec.seed, snr, run, contexts.len())
                } else {
                    0
                };
                let ctx = &contexts[c];
                let label = ctx.scenario.label();
                let mut frame_rng = stream_rng(spec.seed, label, snr, run, "frame");
                let errs = run_frame(ctx, &estimators, &mut frame_rng, |id| {
                    stream_rng(spec.seed, label, snr, run, id.name())
                })?;
                Ok(errs
                    .iter()
                    .map(|e| {
                        let mut a = Accumulator::default();
                        a.add_frame(e.err, e.pow, e.bit_errors, e.bits, e.flags);
                        a
                    })
                    .collect())
            })
            .try_reduce(
                || vec![Accumulator::default(); estimators.len()],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(&b) {
                        x.merge(y);
                    }
                    Ok(a)
                },
            )?;
        for (e, acc) in estimators.iter().zip(totals) {
            result.cells.insert((*e, p), acc);
        }
    }
    Ok(result)
}

/// Sweep over per-frame random choices among the mixture components, with
/// frozen offline baselines available to the offline estimators.
pub fn run_changing_scenario(spec: &SweepSpec, offline: &OfflineBaselines) -> Result<RunResult> {
    if spec.scenario.id != ScenarioId::Changing {
        return Err(Error::InvalidConfig {
            field: "scenario",
            reason: "changing-scenario run needs the changing scenario".into(),
        });
    }
    run_sweep_with(spec, Some(offline))
}

/// Trains a frozen estimator on `dataset_size` ideal-label pairs collected
/// from block pilot symbols of `scenario` frames at `snr_db`.
pub fn offline_train<R: Rng + ?Sized>(
    kind: OfflineKind,
    scenario: &ScenarioConfig,
    cfg: &OfdmConfig,
    snr_db: f64,
    dataset_size: usize,
    elm_hidden: usize,
    rng: &mut R,
) -> Result<OfflineEstimator> {
    let min = match kind {
        OfflineKind::Lml => cfg.taps,
        OfflineKind::Celm => elm_hidden,
    };
    if dataset_size <= min {
        return Err(Error::InsufficientData(format!(
            "offline dataset of {dataset_size} pairs, need more than {min}"
        )));
    }
    let data = ideal_dataset(scenario, cfg, snr_db, dataset_size, rng)?;
    match kind {
        OfflineKind::Lml => Ok(OfflineEstimator::Lml(fit_weights_with_rank(&data)?.estimator)),
        OfflineKind::Celm => Ok(OfflineEstimator::Celm(celm_train(
            &data,
            elm_hidden,
            Activation::SplitAsinh,
            rng,
        )?)),
    }
}

/// Block-pilot windows labelled with the true channel, drawn from frames of
/// `scenario` until `size` pairs are collected.
pub fn ideal_dataset<R: Rng + ?Sized>(
    scenario: &ScenarioConfig,
    cfg: &OfdmConfig,
    snr_db: f64,
    size: usize,
    rng: &mut R,
) -> Result<TrainingSet> {
    let noise_var = noise_var_from_snr(snr_db);
    let comps = components(scenario);
    let mut parts = Vec::new();
    let mut have = 0;
    while have < size {
        let s = comps[if comps.len() > 1 { rng.random_range(0..comps.len()) } else { 0 }];
        let frame = simulate_frame(cfg, s, noise_var, rng)?;
        for b in 0..cfg.n_block_pilot {
            let h = block_pilot_ls(&frame.bins[b], &frame.grid.symbols[b])?;
            let ts = ideal_label_dataset(&h, &frame.h_true[b], cfg)?;
            have += ts.len();
            parts.push(ts);
        }
    }
    Ok(TrainingSet::concat(&parts)?.truncated(size))
}

/// Offline baselines for the changing-scenario comparison.
pub fn train_offline_baselines(
    scenario: &ScenarioConfig,
    cfg: &OfdmConfig,
    ebn0_db: f64,
    dataset_size: usize,
    elm_hidden: usize,
    seed: u64,
) -> Result<OfflineBaselines> {
    let snr = ebn0_to_snr(ebn0_db, QPSK_BITS);
    let mut rng = stream_rng(seed, scenario.label(), snr, 0, "offline-lml");
    let lml = match offline_train(OfflineKind::Lml, scenario, cfg, snr, dataset_size, elm_hidden, &mut rng)? {
        OfflineEstimator::Lml(w) => w,
        OfflineEstimator::Celm(_) => unreachable!(),
    };
    let mut rng = stream_rng(seed, scenario.label(), snr, 0, "offline-celm");
    let celm = match offline_train(OfflineKind::Celm, scenario, cfg, snr, dataset_size, elm_hidden, &mut rng)? {
        OfflineEstimator::Celm(e) => e,
        OfflineEstimator::Lml(_) => unreachable!(),
    };
    Ok(OfflineBaselines { lml: Some(lml), celm: Some(celm) })
}
