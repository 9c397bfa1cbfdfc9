//! WSSUS tapped-delay-line channel, its frequency correlation, and the
//! receiver/transmitter impairments (AWGN, timing offset, frequency offset,
//! clipping).
//!
//! Tap delays are quantized to the nearest sample; taps that land on the same
//! sample merge their powers. The analytic correlation uses the quantized
//! delays so that MMSE interpolation is matched to what is simulated.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::sample_cgauss;
use crate::phy::{demodulate, modulate, FrameGrid, OfdmConfig};

const PEDESTRIAN_B: &str = include_str!("../data/pedestrian_b.pdp");
const OFFICE_A: &str = include_str!("../data/office_a.pdp");

/// Statistical tap description with delays in seconds and linear powers
/// normalised to unit sum.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerDelayProfile {
    pub name: String,
    pub taps: Vec<(f64, f64)>,
}

impl PowerDelayProfile {
    pub fn new(name: impl Into<String>, taps: Vec<(f64, f64)>) -> Result<Self> {
        let name = name.into();
        if taps.is_empty() {
            return Err(Error::Parse(format!("profile `{name}` has no taps")));
        }
        for w in taps.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Parse(format!(
                    "profile `{name}`: delays must be strictly increasing"
                )));
            }
        }
        if taps.iter().any(|&(d, p)| d < 0.0 || !(p >= 0.0) || !d.is_finite()) {
            return Err(Error::Parse(format!(
                "profile `{name}`: delays and powers must be non-negative"
            )));
        }
        let total: f64 = taps.iter().map(|t| t.1).sum();
        if !(total > 0.0) {
            return Err(Error::Parse(format!("profile `{name}` has zero power")));
        }
        Ok(Self {
            name,
            taps: taps.into_iter().map(|(d, p)| (d, p / total)).collect(),
        })
    }

    /// Parses lines of `delay_ns power_db`; `#` starts a comment.
    pub fn from_text(name: impl Into<String>, text: &str) -> Result<Self> {
        let name = name.into();
        let mut taps = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|_| {
                    Error::Parse(format!("{name}:{}: bad number `{s}`", lineno + 1))
                })
            };
            if fields.len() != 2 {
                return Err(Error::Parse(format!(
                    "{name}:{}: expected `delay_ns power_db`",
                    lineno + 1
                )));
            }
            let delay_ns = parse(fields[0])?;
            let power_db = parse(fields[1])?;
            taps.push((delay_ns * 1e-9, 10f64.powf(power_db / 10.0)));
        }
        Self::new(name, taps)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "profile".into());
        Self::from_text(name, &text)
    }

    pub fn pedestrian_b() -> Self {
        Self::from_text("pedestrian-b", PEDESTRIAN_B).expect("bundled profile")
    }

    pub fn office_a() -> Self {
        Self::from_text("office-a", OFFICE_A).expect("bundled profile")
    }

    pub fn single_tap() -> Self {
        Self::new("flat", vec![(0.0, 1.0)]).expect("valid")
    }

    /// Looks up a bundled profile by name, falling back to a file path.
    pub fn resolve(name: &str) -> Result<Self> {
        match name {
            "pb" | "pedestrian-b" => Ok(Self::pedestrian_b()),
            "oa" | "office-a" => Ok(Self::office_a()),
            "flat" => Ok(Self::single_tap()),
            other => Self::from_file(Path::new(other)),
        }
    }

    /// Sample-spaced taps `(delay_samples, power)`, ascending, with
    /// colliding taps merged.
    pub fn quantized(&self, sample_rate: f64) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.taps.len());
        for &(delay, power) in &self.taps {
            let n = (delay * sample_rate).round() as usize;
            match out.last_mut() {
                Some(last) if last.0 == n => last.1 += power,
                _ => out.push((n, power)),
            }
        }
        out
    }

    pub fn max_delay_samples(&self, sample_rate: f64) -> usize {
        self.quantized(sample_rate).last().map(|t| t.0).unwrap_or(0)
    }
}

/// One sampled channel impulse response, constant over a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub cir: Vec<Complex64>,
}

impl ChannelRealization {
    pub fn flat(gain: Complex64) -> Self {
        Self { cir: vec![gain] }
    }
}

pub fn sample_realization<R: Rng + ?Sized>(
    profile: &PowerDelayProfile,
    cfg: &OfdmConfig,
    rng: &mut R,
) -> Result<ChannelRealization> {
    let taps = profile.quantized(cfg.sample_rate);
    let span = taps.last().map(|t| t.0).unwrap_or(0);
    if span >= cfg.cp_len {
        return Err(Error::ProfileExceedsCp {
            name: profile.name.clone(),
            span,
            cp_len: cfg.cp_len,
        });
    }
    let mut cir = vec![Complex64::new(0.0, 0.0); span + 1];
    for (delay, power) in taps {
        cir[delay] = sample_cgauss(rng, power)?;
    }
    Ok(ChannelRealization { cir })
}

/// Channel frequency response at the used subcarriers.
pub fn cfr(real: &ChannelRealization, cfg: &OfdmConfig) -> Vec<Complex64> {
    (0..cfg.k_used)
        .map(|i| {
            let bin = cfg.signed_bin(i) as f64;
            real.cir
                .iter()
                .enumerate()
                .map(|(n, &h)| h * Complex64::from_polar(1.0, -2.0 * PI * n as f64 * bin / cfg.n_dft as f64))
                .sum()
        })
        .collect()
}

/// Channel seen after a timing offset of `theta` samples: the CFR with the
/// linear phase ramp `exp(j 2 pi bin theta / N)`.
pub fn effective_cfr(real: &ChannelRealization, theta: i64, cfg: &OfdmConfig) -> Vec<Complex64> {
    let h = cfr(real, cfg);
    if theta == 0 {
        return h;
    }
    h.into_iter()
        .enumerate()
        .map(|(i, v)| v * sto_phase(cfg.signed_bin(i), theta, cfg.n_dft))
        .collect()
}

pub fn sto_phase(bin: i64, theta: i64, n_dft: usize) -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * PI * (bin * theta) as f64 / n_dft as f64)
}

/// Diagonal gain that a frequency offset applies to every bin of symbol
/// `symbol` of a frame: the phase accumulated up to the start of its DFT
/// window times the in-window attenuation
/// `(1/N) sum_m exp(-j 2 pi epsilon m / N)`.
pub fn cfo_symbol_gain(symbol: usize, epsilon: f64, cfg: &OfdmConfig) -> Complex64 {
    if epsilon == 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    let n = cfg.n_dft as f64;
    let start = (symbol * cfg.symbol_len() + cfg.cp_len) as f64;
    let step = Complex64::from_polar(1.0, -2.0 * PI * epsilon / n);
    let total = Complex64::from_polar(1.0, -2.0 * PI * epsilon);
    let mean = (Complex64::new(1.0, 0.0) - total) / (Complex64::new(1.0, 0.0) - step) / n;
    Complex64::from_polar(1.0, -2.0 * PI * epsilon * start / n) * mean
}

/// `r(dk) = E[h_{k+dk} conj(h_k)] = sum_l p_l exp(-j 2 pi dk tau_l / N)`.
pub fn freq_correlation(profile: &PowerDelayProfile, dk: i64, cfg: &OfdmConfig) -> Complex64 {
    profile
        .quantized(cfg.sample_rate)
        .iter()
        .map(|&(tau, p)| Complex64::from_polar(p, -2.0 * PI * (dk * tau as i64) as f64 / cfg.n_dft as f64))
        .sum()
}

/// Linear convolution with the CIR, truncated to the input length, plus
/// AWGN of per-sample variance `noise_var`.
pub fn propagate<R: Rng + ?Sized>(
    tx: &[Complex64],
    real: &ChannelRealization,
    noise_var: f64,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    let mut out = vec![Complex64::new(0.0, 0.0); tx.len()];
    for (n, y) in out.iter_mut().enumerate() {
        for (l, &h) in real.cir.iter().enumerate().take(n + 1) {
            *y += h * tx[n - l];
        }
    }
    if noise_var > 0.0 {
        for y in out.iter_mut() {
            *y += sample_cgauss(rng, noise_var)?;
        }
    } else if noise_var < 0.0 {
        return Err(Error::NegativeVariance(noise_var));
    }
    Ok(out)
}

/// Per-frame impairments. `theta <= 0` is the timing offset in samples (the
/// receiver's window opens `|theta|` samples early, inside the cyclic
/// prefix); `epsilon` is the CFO normalised to the subcarrier spacing;
/// `clip_ratio` enables clipping at that multiple of the signal RMS.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImpairmentConfig {
    pub theta: i64,
    pub epsilon: f64,
    pub clip_ratio: Option<f64>,
}

impl ImpairmentConfig {
    pub fn none() -> Self {
        Self::default()
    }

    /// Checks the no-ISI regime for a channel of `channel_len` taps.
    pub fn validate(&self, cfg: &OfdmConfig, channel_len: usize) -> Result<()> {
        if self.theta > 0 {
            return Err(Error::InvalidImpairment(format!(
                "timing offset must be <= 0, got {}",
                self.theta
            )));
        }
        let margin = self.theta.unsigned_abs() as usize + channel_len.saturating_sub(1);
        if margin > cfg.cp_len {
            return Err(Error::InvalidImpairment(format!(
                "|theta| + channel span = {margin} exceeds the cyclic prefix {}",
                cfg.cp_len
            )));
        }
        if !(self.epsilon.abs() < 0.5) {
            return Err(Error::InvalidImpairment(format!(
                "|epsilon| must be < 0.5, got {}",
                self.epsilon
            )));
        }
        if let Some(r) = self.clip_ratio {
            if !(r > 0.0) {
                return Err(Error::InvalidImpairment(format!("clip ratio must be > 0, got {r}")));
            }
        }
        Ok(())
    }
}

/// Applies timing and frequency offsets to a received frame:
/// `out_n = rx_{n + theta} * exp(-j 2 pi n epsilon / N)`, with `n` the
/// sample index across the whole frame so the CFO phase is continuous from
/// symbol to symbol. Samples shifted in from before the frame start are 0.
pub fn apply_sto_cfo(
    rx: &[Complex64],
    imp: &ImpairmentConfig,
    cfg: &OfdmConfig,
) -> Result<Vec<Complex64>> {
    if imp.theta > 0 || imp.theta.unsigned_abs() as usize > cfg.cp_len {
        return Err(Error::InvalidImpairment(format!(
            "timing offset {} outside [-{}, 0]",
            imp.theta, cfg.cp_len
        )));
    }
    if imp.theta == 0 && imp.epsilon == 0.0 {
        return Ok(rx.to_vec());
    }
    let shift = imp.theta.unsigned_abs() as usize;
    let n_dft = cfg.n_dft as f64;
    Ok((0..rx.len())
        .map(|n| {
            let v = if n >= shift { rx[n - shift] } else { Complex64::new(0.0, 0.0) };
            if imp.epsilon == 0.0 {
                v
            } else {
                v * Complex64::from_polar(1.0, -2.0 * PI * n as f64 * imp.epsilon / n_dft)
            }
        })
        .collect())
}

pub fn rms(x: &[Complex64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v.norm_sqr()).sum::<f64>() / x.len() as f64).sqrt()
}

/// Amplitude clipping at `A = clip_ratio * rms(tx)`, phase preserved.
pub fn clip(tx: &[Complex64], clip_ratio: f64) -> Result<Vec<Complex64>> {
    if !(clip_ratio > 0.0) {
        return Err(Error::InvalidImpairment(format!(
            "clip ratio must be > 0, got {clip_ratio}"
        )));
    }
    let a = clip_ratio * rms(tx);
    Ok(tx
        .iter()
        .map(|&v| {
            let mag = v.norm();
            if mag <= a {
                v
            } else {
                v * (a / mag)
            }
        })
        .collect())
}

/// STO/CFO ranges of a scenario: `theta` uniform on the integers
/// `theta_min..=0`, `epsilon` uniform on `[-epsilon_max, epsilon_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScenarioImpairmentStats {
    pub theta_min: i64,
    pub epsilon_max: f64,
}

impl ScenarioImpairmentStats {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (i64, f64) {
        let theta = if self.theta_min < 0 {
            rng.random_range(self.theta_min..=0)
        } else {
            0
        };
        let epsilon = if self.epsilon_max > 0.0 {
            rng.random_range(-self.epsilon_max..=self.epsilon_max)
        } else {
            0.0
        };
        (theta, epsilon)
    }
}

/// Bussgang decomposition of clipping seen at the used subcarriers:
/// `clipped_k = gain * x_k + d_k`, with `distortion_power = E|d_k|^2` and
/// `difference_power = E|clipped_k - x_k|^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipDistortion {
    pub gain: f64,
    pub distortion_power: f64,
    pub difference_power: f64,
}

impl ClipDistortion {
    pub fn none() -> Self {
        Self {
            gain: 1.0,
            distortion_power: 0.0,
            difference_power: 0.0,
        }
    }

    /// Noise variance seen by an estimator of the channel when the received
    /// bins are `gain * h x + h d + n`, expressed relative to `h`.
    pub fn effective_noise_var(&self, noise_var: f64) -> f64 {
        (noise_var + self.distortion_power) / (self.gain * self.gain)
    }
}

/// Measures the clipping distortion by Monte Carlo over `frames` random
/// frames.
pub fn calibrate_clipping<R: Rng + ?Sized>(
    cfg: &OfdmConfig,
    clip_ratio: f64,
    frames: usize,
    rng: &mut R,
) -> Result<ClipDistortion> {
    if frames == 0 {
        return Err(Error::InsufficientData(
            "clipping calibration needs at least one frame".into(),
        ));
    }
    let mut cross = Complex64::new(0.0, 0.0);
    let mut x_power = 0.0;
    let mut c_power = 0.0;
    let mut diff_power = 0.0;
    let mut bins = 0usize;
    for _ in 0..frames {
        let frame = FrameGrid::random(cfg, rng)?;
        let tx = modulate(&frame, cfg)?;
        let clipped = demodulate(&clip(&tx, clip_ratio)?, cfg)?;
        for (x_sym, c_sym) in frame.symbols.iter().zip(&clipped) {
            for (&x, &c) in x_sym.iter().zip(c_sym) {
                cross += c * x.conj();
                x_power += x.norm_sqr();
                c_power += c.norm_sqr();
                diff_power += (c - x).norm_sqr();
                bins += 1;
            }
        }
    }
    let gain = cross.re / x_power;
    let n = bins as f64;
    // E|c - g x|^2 = E|c|^2 - 2 g Re E[c x*] + g^2 E|x|^2
    let distortion_power = ((c_power - 2.0 * gain * cross.re + gain * gain * x_power) / n).max(0.0);
    Ok(ClipDistortion {
        gain,
        distortion_power,
        difference_power: diff_power / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{dft, SimRng};
    use rand::SeedableRng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn parses_profile_text() {
        let p = PowerDelayProfile::from_text("t", "# header\n0 0\n100 -3.0103 # trailing\n\n").unwrap();
        assert_eq!(p.taps.len(), 2);
        assert!((p.taps[0].1 - 2.0 / 3.0).abs() < 1e-5);
        assert!((p.taps[1].0 - 100e-9).abs() < 1e-18);
        assert!(PowerDelayProfile::from_text("t", "0 0\n0 -1\n").is_err());
        assert!(PowerDelayProfile::from_text("t", "0\n").is_err());
        assert!(PowerDelayProfile::from_text("t", "# nothing\n").is_err());
    }

    #[test]
    fn bundled_profiles_match_reference_tables() {
        let pb = PowerDelayProfile::pedestrian_b();
        let delays: Vec<f64> = pb.taps.iter().map(|t| (t.0 * 1e9).round()).collect();
        assert_eq!(delays, vec![0.0, 200.0, 800.0, 1200.0, 2300.0, 3700.0]);
        let db = [0.0, -0.9, -4.9, -8.0, -7.8, -23.9];
        for (t, d) in pb.taps.iter().zip(db) {
            assert!((10.0 * (t.1 / pb.taps[0].1).log10() - d).abs() < 1e-9);
        }
        let total: f64 = pb.taps.iter().map(|t| t.1).sum();
        assert!((total - 1.0).abs() < 1e-12);

        let oa = PowerDelayProfile::office_a();
        // 50 ns and 110 ns both round to one sample at 10 MHz; 290/310 ns to three.
        let q: Vec<usize> = oa.quantized(10e6).iter().map(|t| t.0).collect();
        assert_eq!(q, vec![0, 1, 2, 3]);
    }

    #[test]
    fn pedestrian_b_tap_positions() {
        let cfg = OfdmConfig::default();
        let pb = PowerDelayProfile::pedestrian_b();
        let mut rng = SimRng::seed_from_u64(21);
        let real = sample_realization(&pb, &cfg, &mut rng).unwrap();
        let nonzero: Vec<usize> = real
            .cir
            .iter()
            .enumerate()
            .filter(|(_, v)| v.norm() > 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(nonzero, vec![0, 2, 8, 12, 23, 37]);
    }

    #[test]
    fn tap_powers_match_profile() {
        let cfg = OfdmConfig::default();
        let pb = PowerDelayProfile::pedestrian_b();
        let q = pb.quantized(cfg.sample_rate);
        let mut rng = SimRng::seed_from_u64(22);
        let runs = 100_000;
        let mut acc = vec![0.0; q.len()];
        for _ in 0..runs {
            let real = sample_realization(&pb, &cfg, &mut rng).unwrap();
            for (a, (d, _)) in acc.iter_mut().zip(&q) {
                *a += real.cir[*d].norm_sqr();
            }
        }
        for (a, (_, p)) in acc.iter().zip(&q) {
            let est = a / runs as f64;
            assert!((est / p - 1.0).abs() < 0.02, "{est} vs {p}");
        }
    }

    #[test]
    fn rejects_profile_longer_than_cp() {
        let cfg = OfdmConfig {
            cp_len: 16,
            ..OfdmConfig::default()
        };
        let mut rng = SimRng::seed_from_u64(23);
        assert!(matches!(
            sample_realization(&PowerDelayProfile::pedestrian_b(), &cfg, &mut rng),
            Err(Error::ProfileExceedsCp { span: 37, .. })
        ));
    }

    #[test]
    fn single_tap_flat_response() {
        let cfg = OfdmConfig::default();
        let h = cfr(&ChannelRealization::flat(c(1.0, 0.0)), &cfg);
        assert!(h.iter().all(|v| (v - c(1.0, 0.0)).norm() < 1e-15));
        let p = PowerDelayProfile::single_tap();
        for dk in [-5, 0, 3, 100] {
            assert!((freq_correlation(&p, dk, &cfg) - c(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn cfr_matches_scaled_dft_of_cir() {
        let cfg = OfdmConfig::default();
        let mut rng = SimRng::seed_from_u64(24);
        let real = sample_realization(&PowerDelayProfile::pedestrian_b(), &cfg, &mut rng).unwrap();
        let mut padded = real.cir.clone();
        padded.resize(cfg.n_dft, c(0.0, 0.0));
        let spec = dft(&padded, cfg.n_dft).unwrap();
        let h = cfr(&real, &cfg);
        let scale = (cfg.n_dft as f64).sqrt();
        for (i, v) in h.iter().enumerate() {
            assert!((spec[cfg.fft_index(i)] * scale - v).norm() < 1e-10);
        }
    }

    #[test]
    fn two_tap_magnitude_is_periodic() {
        // |1 + exp(-j 2 pi b d / N)| = 2 |cos(pi b d / N)|, period N / d bins.
        let cfg = OfdmConfig::default();
        let d = 8;
        let mut cir = vec![c(0.0, 0.0); d + 1];
        cir[0] = c(1.0, 0.0);
        cir[d] = c(1.0, 0.0);
        let h = cfr(&ChannelRealization { cir }, &cfg);
        for (i, v) in h.iter().enumerate() {
            let b = cfg.signed_bin(i) as f64;
            let expected = 2.0 * (PI * b * d as f64 / cfg.n_dft as f64).cos().abs();
            assert!((v.norm() - expected).abs() < 1e-12);
        }
        let period = cfg.n_dft / d;
        for i in 0..cfg.k_used - period - 1 {
            // away from the DC gap, bins i and i + period are one period apart
            if cfg.signed_bin(i) < 0 && cfg.signed_bin(i + period) < 0 {
                assert!((h[i].norm() - h[i + period].norm()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cfr_unit_average_power() {
        let cfg = OfdmConfig::default();
        let pb = PowerDelayProfile::pedestrian_b();
        let mut rng = SimRng::seed_from_u64(25);
        let runs = 100_000;
        let mut acc = vec![0.0; cfg.k_used];
        for _ in 0..runs {
            let h = cfr(&sample_realization(&pb, &cfg, &mut rng).unwrap(), &cfg);
            for (a, v) in acc.iter_mut().zip(&h) {
                *a += v.norm_sqr();
            }
        }
        for a in acc.iter().step_by(17) {
            let p = a / runs as f64;
            assert!((p - 1.0).abs() < 0.02, "{p}");
        }
    }

    #[test]
    fn correlation_matches_monte_carlo() {
        let cfg = OfdmConfig::default();
        let pb = PowerDelayProfile::pedestrian_b();
        assert!((freq_correlation(&pb, 0, &cfg) - c(1.0, 0.0)).norm() < 1e-12);
        let analytic = freq_correlation(&pb, 3, &cfg);
        let mut rng = SimRng::seed_from_u64(26);
        let mut acc = c(0.0, 0.0);
        let mut count = 0usize;
        // subcarriers below DC are on a uniform bin grid
        let pairs: Vec<usize> = (0..150).step_by(10).collect();
        for _ in 0..1_000_000 / pairs.len() {
            let h = cfr(&sample_realization(&pb, &cfg, &mut rng).unwrap(), &cfg);
            for &k in &pairs {
                acc += h[k + 3] * h[k].conj();
                count += 1;
            }
        }
        let est = acc / count as f64;
        assert!((est - analytic).norm() / analytic.norm() < 0.01, "{est} vs {analytic}");
    }

    #[test]
    fn identity_channel_no_noise() {
        let mut rng = SimRng::seed_from_u64(27);
        let tx: Vec<Complex64> = (0..64).map(|_| sample_cgauss(&mut rng, 1.0).unwrap()).collect();
        let rx = propagate(&tx, &ChannelRealization::flat(c(1.0, 0.0)), 0.0, &mut rng).unwrap();
        assert_eq!(rx, tx);
    }

    #[test]
    fn noiseless_channel_is_diagonal_in_frequency() {
        let cfg = OfdmConfig::default();
        let mut rng = SimRng::seed_from_u64(28);
        let real = sample_realization(&PowerDelayProfile::pedestrian_b(), &cfg, &mut rng).unwrap();
        let frame = FrameGrid::random(&cfg, &mut rng).unwrap();
        let tx = modulate(&frame, &cfg).unwrap();
        let rx = demodulate(&propagate(&tx, &real, 0.0, &mut rng).unwrap(), &cfg).unwrap();
        let h = cfr(&real, &cfg);
        for (x_sym, y_sym) in frame.symbols.iter().zip(&rx) {
            for ((x, y), hk) in x_sym.iter().zip(y_sym).zip(&h) {
                assert!((x * hk - y).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn noise_power() {
        let mut rng = SimRng::seed_from_u64(29);
        let tx = vec![c(0.0, 0.0); 1_000_000];
        let rx = propagate(&tx, &ChannelRealization::flat(c(1.0, 0.0)), 0.25, &mut rng).unwrap();
        let p = rx.iter().map(|v| v.norm_sqr()).sum::<f64>() / rx.len() as f64;
        assert!((p / 0.25 - 1.0).abs() < 0.02);
    }

    #[test]
    fn no_offset_is_identity() {
        let cfg = OfdmConfig::default();
        let mut rng = SimRng::seed_from_u64(30);
        let x: Vec<Complex64> = (0..1280).map(|_| sample_cgauss(&mut rng, 1.0).unwrap()).collect();
        assert_eq!(apply_sto_cfo(&x, &ImpairmentConfig::none(), &cfg).unwrap(), x);
    }

    #[test]
    fn timing_offset_is_phase_ramp() {
        let cfg = OfdmConfig::default();
        let mut rng = SimRng::seed_from_u64(31);
        let frame = FrameGrid::random(&cfg, &mut rng).unwrap();
        let tx = modulate(&frame, &cfg).unwrap();
        let imp = ImpairmentConfig {
            theta: -4,
            ..Default::default()
        };
        let rx = demodulate(&apply_sto_cfo(&tx, &imp, &cfg).unwrap(), &cfg).unwrap();
        for (x_sym, y_sym) in frame.symbols.iter().zip(&rx) {
            for (i, (x, y)) in x_sym.iter().zip(y_sym).enumerate() {
                let b = cfg.signed_bin(i) as f64;
                let ramp = Complex64::from_polar(1.0, -2.0 * PI * 4.0 * b / cfg.n_dft as f64);
                assert!((x * ramp - y).norm() < 1e-9);
            }
        }
        assert!(apply_sto_cfo(&tx, &ImpairmentConfig { theta: 1, ..Default::default() }, &cfg).is_err());
    }

    #[test]
    fn frequency_offset_matches_direct_computation() {
        let cfg = OfdmConfig::default();
        let mut rng = SimRng::seed_from_u64(32);
        let frame = FrameGrid::random(&cfg, &mut rng).unwrap();
        let tx = modulate(&frame, &cfg).unwrap();
        let eps = 0.05;
        let imp = ImpairmentConfig {
            epsilon: eps,
            ..Default::default()
        };
        let rx = demodulate(&apply_sto_cfo(&tx, &imp, &cfg).unwrap(), &cfg).unwrap();
        // direct DFT of the phase-rotated first symbol body
        let n = cfg.n_dft;
        let start = cfg.cp_len;
        for i in (0..cfg.k_used).step_by(37) {
            let bin = cfg.fft_index(i);
            let direct: Complex64 = (0..n)
                .map(|t| {
                    let g = start + t;
                    tx[g]
                        * Complex64::from_polar(1.0, -2.0 * PI * g as f64 * eps / n as f64)
                        * Complex64::from_polar(1.0, -2.0 * PI * (bin * t) as f64 / n as f64)
                })
                .sum::<Complex64>()
                / (n as f64).sqrt();
            assert!((direct - rx[0][i]).norm() < 1e-9);
            let ici = (rx[0][i] - frame.symbols[0][i]).norm_sqr();
            assert!(((direct - frame.symbols[0][i]).norm_sqr() - ici).abs() < 1e-9);
        }
    }

    #[test]
    fn clipping_examples() {
        let x = vec![c(0.1, 0.0), c(0.0, -0.2)];
        assert_eq!(clip(&x, 10.0).unwrap(), x);
        // rms of {3, 1, 1, 1} is sqrt(3); A = 2 with ratio 2/sqrt(3)
        let x = vec![c(3.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0), c(0.0, 1.0)];
        let y = clip(&x, 2.0 / 3f64.sqrt()).unwrap();
        assert!((y[0] - c(2.0, 0.0)).norm() < 1e-12);
        assert_eq!(&y[1..], &x[1..]);
        assert!(clip(&x, 0.0).is_err());
    }

    #[test]
    fn clipping_reduces_papr() {
        let cfg = OfdmConfig::default();
        let mut rng = SimRng::seed_from_u64(33);
        let papr = |x: &[Complex64]| {
            let peak = x.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
            peak / rms(x).powi(2)
        };
        for _ in 0..20 {
            let frame = FrameGrid::random(&cfg, &mut rng).unwrap();
            let tx = modulate(&frame, &cfg).unwrap();
            let y = clip(&tx, 1.0).unwrap();
            assert!(papr(&y) <= papr(&tx) + 1e-12);
        }
    }

    #[test]
    fn stats_draw_ranges() {
        let mut rng = SimRng::seed_from_u64(34);
        let s = ScenarioImpairmentStats {
            theta_min: -3,
            epsilon_max: 0.01,
        };
        let mut seen = [false; 4];
        for _ in 0..1000 {
            let (t, e) = s.draw(&mut rng);
            assert!((-3..=0).contains(&t));
            assert!(e.abs() <= 0.01);
            seen[(-t) as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
        assert_eq!(ScenarioImpairmentStats::default().draw(&mut rng), (0, 0.0));
    }

    #[test]
    fn impairment_validation() {
        let cfg = OfdmConfig::default();
        let ok = ImpairmentConfig { theta: -40, epsilon: 0.05, clip_ratio: Some(1.0) };
        assert!(ok.validate(&cfg, 38).is_ok());
        assert!(ImpairmentConfig { theta: -100, ..ok }.validate(&cfg, 38).is_err());
        assert!(ImpairmentConfig { epsilon: 0.5, ..ok }.validate(&cfg, 38).is_err());
        assert!(ImpairmentConfig { clip_ratio: Some(-1.0), ..ok }.validate(&cfg, 38).is_err());
    }

    #[test]
    fn calibration_without_clipping_is_clean() {
        let cfg = OfdmConfig::default();
        let mut rng = SimRng::seed_from_u64(35);
        let d = calibrate_clipping(&cfg, 1e6, 5, &mut rng).unwrap();
        assert!((d.gain - 1.0).abs() < 1e-12);
        assert!(d.distortion_power < 1e-12);
        assert!(d.difference_power < 1e-12);
        assert!(calibrate_clipping(&cfg, 1.0, 0, &mut rng).is_err());
    }

    #[test]
    fn cfo_gain_matches_simulated_diagonal() {
        let cfg = OfdmConfig::default();
        let mut rng = SimRng::seed_from_u64(36);
        let frame = FrameGrid::random(&cfg, &mut rng).unwrap();
        let tx = modulate(&frame, &cfg).unwrap();
        let eps = 0.05;
        let imp = ImpairmentConfig { theta: 0, epsilon: eps, clip_ratio: None };
        let rx = demodulate(&apply_sto_cfo(&tx, &imp, &cfg).unwrap(), &cfg).unwrap();
        for s in [0, 3, 9] {
            // project out the ICI by correlating with the sent symbols
            let num: Complex64 = rx[s].iter().zip(&frame.symbols[s]).map(|(y, x)| y * x.conj()).sum();
            let den: f64 = frame.symbols[s].iter().map(|x| x.norm_sqr()).sum();
            let g = cfo_symbol_gain(s, eps, &cfg);
            assert!((num / den - g).norm() < 0.02, "symbol {s}");
        }
        assert_eq!(cfo_symbol_gain(4, 0.0, &cfg), c(1.0, 0.0));
        let direct: Complex64 = (0..cfg.n_dft)
            .map(|m| Complex64::from_polar(1.0, -2.0 * PI * 0.01 * (m + cfg.cp_len) as f64 / cfg.n_dft as f64))
            .sum::<Complex64>()
            / cfg.n_dft as f64;
        assert!((cfo_symbol_gain(0, 0.01, &cfg) - direct).norm() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn correlation_is_hermitian(dk in -200i64..200) {
            let cfg = OfdmConfig::default();
            let pb = PowerDelayProfile::pedestrian_b();
            let a = freq_correlation(&pb, dk, &cfg);
            let b = freq_correlation(&pb, -dk, &cfg).conj();
            proptest::prop_assert!((a - b).norm() < 1e-14);
        }

        #[test]
        fn clip_never_grows_and_keeps_phase(
            vals in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..50),
            ratio in 0.1f64..3.0,
        ) {
            let x: Vec<Complex64> = vals.iter().map(|&(r, i)| c(r, i)).collect();
            let y = clip(&x, ratio).unwrap();
            for (a, b) in x.iter().zip(&y) {
                proptest::prop_assert!(b.norm() <= a.norm() + 1e-12);
                if b != a && a.norm() > 0.0 {
                    proptest::prop_assert!((b.arg() - a.arg()).abs() < 1e-12);
                }
            }
        }
    }
}
