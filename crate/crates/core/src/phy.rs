//! Frame layout and the transmit/receive chain: QPSK mapping, comb pilots,
//! IDFT/CP modulation, demodulation, grouping and ZF detection.
//!
//! Subcarriers are indexed `0..k_used` in increasing frequency; pilots sit
//! at every `pilot_interval`-th subcarrier starting at 0 and ending on the
//! last used subcarrier, so both band edges carry pilots.

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dft, idft, SimRng};

/// Seed of the comb pilot sequence shared by transmitter and receiver.
pub const PILOT_SEED: u64 = 0x5eed_0f_d1_7015;

/// ZF bins whose estimate magnitude falls below this are flagged.
pub const ZF_MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfdmConfig {
    pub n_dft: usize,
    pub cp_len: usize,
    pub k_used: usize,
    pub pilot_interval: usize,
    pub taps: usize,
    pub n_block_pilot: usize,
    pub n_data: usize,
    pub sample_rate: f64,
}

impl Default for OfdmConfig {
    /// 512-point DFT, 128-sample CP, 10 MHz sampling, one block pilot and
    /// nine data symbols per frame. 409 used subcarriers so that pilots land
    /// on both band edges with interval 3.
    fn default() -> Self {
        Self {
            n_dft: 512,
            cp_len: 128,
            k_used: 409,
            pilot_interval: 3,
            taps: 2,
            n_block_pilot: 1,
            n_data: 9,
            sample_rate: 10e6,
        }
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field,
        reason: reason.into(),
    }
}

impl OfdmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_dft < 4 {
            return Err(invalid("n_dft", "must be at least 4"));
        }
        if self.cp_len >= self.n_dft {
            return Err(invalid("cp_len", "cyclic prefix must be shorter than the DFT"));
        }
        if self.k_used < 2 || self.k_used >= self.n_dft {
            return Err(invalid(
                "k_used",
                format!("must lie in [2, {}) with the DC bin unused", self.n_dft),
            ));
        }
        if self.pilot_interval < 2 {
            return Err(invalid(
                "pilot_interval",
                "must be at least 2, otherwise no data subcarriers remain in a group",
            ));
        }
        if (self.k_used - 1) % self.pilot_interval != 0 {
            return Err(invalid(
                "pilot_interval",
                format!(
                    "(k_used - 1) = {} is not divisible by the pilot interval {}; pilots must occupy both band edges",
                    self.k_used - 1,
                    self.pilot_interval
                ),
            ));
        }
        if self.taps < 2 {
            return Err(invalid("taps", "an estimator needs at least 2 pilots per group"));
        }
        let p = self.pilot_count();
        if (p - 1) % (self.taps - 1) != 0 {
            return Err(invalid(
                "taps",
                format!(
                    "(pilot count - 1) = {} is not divisible by (taps - 1) = {}",
                    p - 1,
                    self.taps - 1
                ),
            ));
        }
        if self.n_data == 0 {
            return Err(invalid("n_data", "a frame needs at least one data symbol"));
        }
        if !(self.sample_rate > 0.0) {
            return Err(invalid("sample_rate", "must be positive"));
        }
        Ok(())
    }

    pub fn pilot_count(&self) -> usize {
        (self.k_used - 1) / self.pilot_interval + 1
    }

    pub fn group_count(&self) -> usize {
        (self.pilot_count() - 1) / (self.taps - 1)
    }

    /// Data subcarriers per group.
    pub fn group_data_len(&self) -> usize {
        (self.taps - 1) * (self.pilot_interval - 1)
    }

    /// Subcarriers covered by one group, boundary pilots included.
    pub fn group_span(&self) -> usize {
        (self.taps - 1) * self.pilot_interval + 1
    }

    pub fn data_per_symbol(&self) -> usize {
        self.k_used - self.pilot_count()
    }

    pub fn symbols_per_frame(&self) -> usize {
        self.n_block_pilot + self.n_data
    }

    pub fn symbol_len(&self) -> usize {
        self.n_dft + self.cp_len
    }

    /// Signed DFT bin of used subcarrier `i`. The used block is centred
    /// with the DC bin skipped: `k_used / 2` bins below DC, the rest above.
    pub fn signed_bin(&self, i: usize) -> i64 {
        let lower = (self.k_used / 2) as i64;
        let i = i as i64;
        if i < lower {
            i - lower
        } else {
            i - lower + 1
        }
    }

    /// Position of used subcarrier `i` in the DFT output buffer.
    pub fn fft_index(&self, i: usize) -> usize {
        self.signed_bin(i).rem_euclid(self.n_dft as i64) as usize
    }
}

/// Comb pilot positions `{0, d, 2d, ..., k_used - 1}`.
pub fn pilot_indices(cfg: &OfdmConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    Ok((0..cfg.k_used).step_by(cfg.pilot_interval).collect())
}

/// Pilot and data positions of every group. Adjacent groups share their
/// boundary pilot.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupLayout {
    pub taps: usize,
    pub data_len: usize,
    pub pilots: Vec<Vec<usize>>,
    pub data: Vec<Vec<usize>>,
}

impl GroupLayout {
    pub fn new(cfg: &OfdmConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.pilot_interval;
        let stride = (cfg.taps - 1) * d;
        let mut pilots = Vec::with_capacity(cfg.group_count());
        let mut data = Vec::with_capacity(cfg.group_count());
        for g in 0..cfg.group_count() {
            let start = g * stride;
            pilots.push((0..cfg.taps).map(|j| start + j * d).collect());
            data.push((start..=start + stride).filter(|i| (i - start) % d != 0).collect());
        }
        Ok(Self {
            taps: cfg.taps,
            data_len: cfg.group_data_len(),
            pilots,
            data,
        })
    }

    pub fn groups(&self) -> usize {
        self.pilots.len()
    }

    /// Pilot and data offsets relative to the group's first subcarrier.
    pub fn relative_positions(&self) -> (Vec<usize>, Vec<usize>) {
        let base = self.pilots[0][0];
        (
            self.pilots[0].iter().map(|i| i - base).collect(),
            self.data[0].iter().map(|i| i - base).collect(),
        )
    }

    /// All data subcarriers in group order (which is ascending order).
    pub fn data_indices(&self) -> Vec<usize> {
        self.data.iter().flatten().copied().collect()
    }
}

/// Returns the `m` pilot-aligned and `s` data-aligned entries of group `k`.
pub fn extract_group(
    values: &[Complex64],
    k: usize,
    layout: &GroupLayout,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    if k >= layout.groups() {
        return Err(Error::GroupOutOfRange {
            index: k,
            groups: layout.groups(),
        });
    }
    let pick = |idx: &[usize]| -> Result<Vec<Complex64>> {
        idx.iter()
            .map(|&i| {
                values.get(i).copied().ok_or(Error::SizeMismatch {
                    expected: i + 1,
                    actual: values.len(),
                })
            })
            .collect()
    };
    Ok((pick(&layout.pilots[k])?, pick(&layout.data[k])?))
}

/// Gray-mapped unit-power QPSK: `(b0, b1) -> ((1 - 2 b0) + j (1 - 2 b1)) / sqrt(2)`.
pub fn qpsk_map(bits: &[u8]) -> Result<Vec<Complex64>> {
    if bits.len() % 2 != 0 {
        return Err(Error::OddBitCount(bits.len()));
    }
    Ok(bits
        .chunks_exact(2)
        .map(|b| {
            Complex64::new(
                (1.0 - 2.0 * f64::from(b[0] & 1)) * FRAC_1_SQRT_2,
                (1.0 - 2.0 * f64::from(b[1] & 1)) * FRAC_1_SQRT_2,
            )
        })
        .collect())
}

pub fn qpsk_demap(symbols: &[Complex64]) -> Vec<u8> {
    symbols
        .iter()
        .flat_map(|s| [u8::from(s.re < 0.0), u8::from(s.im < 0.0)])
        .collect()
}

/// Nearest QPSK constellation point.
pub fn qpsk_decide(s: Complex64) -> Complex64 {
    let r = FRAC_1_SQRT_2;
    Complex64::new(if s.re < 0.0 { -r } else { r }, if s.im < 0.0 { -r } else { r })
}

pub fn random_bits<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<u8> {
    (0..n).map(|_| u8::from(rng.random::<bool>())).collect()
}

/// The fixed comb pilot values at the positions returned by [`pilot_indices`].
pub fn pilot_values(cfg: &OfdmConfig) -> Vec<Complex64> {
    let mut rng = SimRng::seed_from_u64(PILOT_SEED);
    let bits = random_bits(&mut rng, 2 * cfg.pilot_count());
    qpsk_map(&bits).expect("even bit count")
}

/// One frame in the frequency domain: `n_block_pilot` fully known symbols
/// followed by `n_data` symbols with comb pilots.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGrid {
    pub symbols: Vec<Vec<Complex64>>,
    pub pilot_values: Vec<Complex64>,
    /// Payload bits of each data symbol, two per data subcarrier.
    pub data_bits: Vec<Vec<u8>>,
}

impl FrameGrid {
    pub fn random<R: Rng + ?Sized>(cfg: &OfdmConfig, rng: &mut R) -> Result<Self> {
        let layout = GroupLayout::new(cfg)?;
        let pilots = pilot_values(cfg);
        let pilot_pos = pilot_indices(cfg)?;
        let data_pos = layout.data_indices();
        let mut symbols = Vec::with_capacity(cfg.symbols_per_frame());
        for _ in 0..cfg.n_block_pilot {
            symbols.push(qpsk_map(&random_bits(rng, 2 * cfg.k_used))?);
        }
        let mut data_bits = Vec::with_capacity(cfg.n_data);
        for _ in 0..cfg.n_data {
            let bits = random_bits(rng, 2 * data_pos.len());
            let mut sym = vec![Complex64::new(0.0, 0.0); cfg.k_used];
            for (&i, &v) in pilot_pos.iter().zip(&pilots) {
                sym[i] = v;
            }
            for (&i, v) in data_pos.iter().zip(qpsk_map(&bits)?) {
                sym[i] = v;
            }
            symbols.push(sym);
            data_bits.push(bits);
        }
        Ok(Self {
            symbols,
            pilot_values: pilots,
            data_bits,
        })
    }

    pub fn block_symbols(&self, cfg: &OfdmConfig) -> &[Vec<Complex64>] {
        &self.symbols[..cfg.n_block_pilot]
    }

    pub fn data_symbols(&self, cfg: &OfdmConfig) -> &[Vec<Complex64>] {
        &self.symbols[cfg.n_block_pilot..]
    }
}

/// Maps each symbol onto the DFT grid, applies the unitary IDFT and
/// prepends the cyclic prefix.
pub fn modulate(frame: &FrameGrid, cfg: &OfdmConfig) -> Result<Vec<Complex64>> {
    let mut out = Vec::with_capacity(frame.symbols.len() * cfg.symbol_len());
    for sym in &frame.symbols {
        if sym.len() != cfg.k_used {
            return Err(Error::SizeMismatch {
                expected: cfg.k_used,
                actual: sym.len(),
            });
        }
        let mut grid = vec![Complex64::new(0.0, 0.0); cfg.n_dft];
        for (i, &v) in sym.iter().enumerate() {
            grid[cfg.fft_index(i)] = v;
        }
        let body = idft(&grid, cfg.n_dft)?;
        out.extend_from_slice(&body[cfg.n_dft - cfg.cp_len..]);
        out.extend_from_slice(&body);
    }
    Ok(out)
}

/// Drops each cyclic prefix, applies the DFT and returns the used bins of
/// every symbol.
pub fn demodulate(rx: &[Complex64], cfg: &OfdmConfig) -> Result<Vec<Vec<Complex64>>> {
    let sl = cfg.symbol_len();
    if rx.len() % sl != 0 {
        return Err(Error::SizeMismatch {
            expected: (rx.len() / sl + 1) * sl,
            actual: rx.len(),
        });
    }
    rx.chunks_exact(sl)
        .map(|chunk| {
            let spec = dft(&chunk[cfg.cp_len..], cfg.n_dft)?;
            Ok((0..cfg.k_used).map(|i| spec[cfg.fft_index(i)]).collect())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bits: Vec<u8>,
    pub symbols: Vec<Complex64>,
    /// Bins where the estimate was too small to invert.
    pub flagged: usize,
}

/// Zero-forcing equalisation followed by hard QPSK decisions. A bin whose
/// estimate is below [`ZF_MIN_GAIN`] decides bits `00` and is counted in
/// `flagged`.
pub fn zf_equalize_detect(rx: &[Complex64], h_hat: &[Complex64]) -> Result<Detection> {
    if rx.len() != h_hat.len() {
        return Err(Error::SizeMismatch {
            expected: rx.len(),
            actual: h_hat.len(),
        });
    }
    let mut flagged = 0;
    let symbols: Vec<Complex64> = rx
        .iter()
        .zip(h_hat)
        .map(|(&y, &h)| {
            if h.norm() < ZF_MIN_GAIN {
                flagged += 1;
                Complex64::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2)
            } else {
                y / h
            }
        })
        .collect();
    Ok(Detection {
        bits: qpsk_demap(&symbols),
        symbols,
        flagged,
    })
}

pub fn count_bit_errors(a: &[u8], b: &[u8]) -> u64 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u64
}
