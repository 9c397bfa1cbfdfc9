//! Online training-data generation and least-squares weight fitting.

use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::estimators::{
    estimate_symbol, interpolate_linear, ls_pilot_estimate, parse_complex_rows, LinearEstimator,
};
use crate::numerics::{pinv_with_rank, CMatrix};
use crate::phy::{qpsk_decide, GroupLayout, OfdmConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    /// Labels are LS estimates and carry noise.
    Estimated,
    /// Labels are the true channel.
    True,
}

impl LabelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelKind::Estimated => "estimated",
            LabelKind::True => "true",
        }
    }
}

/// Aligned input/label columns: `x_i` is `M x T`, `y_o` is `S x T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub x_i: CMatrix,
    pub y_o: CMatrix,
    pub label_kind: LabelKind,
}

impl TrainingSet {
    pub fn new(x_i: CMatrix, y_o: CMatrix, label_kind: LabelKind) -> Result<Self> {
        if x_i.ncols() != y_o.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} inputs but {} labels",
                x_i.ncols(),
                y_o.ncols()
            )));
        }
        Ok(Self { x_i, y_o, label_kind })
    }

    pub fn len(&self) -> usize {
        self.x_i.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The first `n` samples.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            x_i: self.x_i.columns(0, n).into_owned(),
            y_o: self.y_o.columns(0, n).into_owned(),
            label_kind: self.label_kind,
        }
    }

    /// Concatenates datasets column-wise. All parts must share shapes and
    /// label kind.
    pub fn concat(parts: &[TrainingSet]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InsufficientData("nothing to concatenate".into()))?;
        let (m, s) = (first.x_i.nrows(), first.y_o.nrows());
        if parts
            .iter()
            .any(|p| p.x_i.nrows() != m || p.y_o.nrows() != s || p.label_kind != first.label_kind)
        {
            return Err(Error::DimensionMismatch("incompatible training sets".into()));
        }
        let t: usize = parts.iter().map(TrainingSet::len).sum();
        let mut x_i = CMatrix::zeros(m, t);
        let mut y_o = CMatrix::zeros(s, t);
        let mut at = 0;
        for p in parts {
            x_i.columns_mut(at, p.len()).copy_from(&p.x_i);
            y_o.columns_mut(at, p.len()).copy_from(&p.y_o);
            at += p.len();
        }
        Ok(Self { x_i, y_o, label_kind: first.label_kind })
    }

    /// One line per sample: the `M` inputs then the `S` labels, each as
    /// `re im`.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# labels={} m={} s={}\n",
            self.label_kind.as_str(),
            self.x_i.nrows(),
            self.y_o.nrows()
        );
        for t in 0..self.len() {
            let row: Vec<String> = self
                .x_i
                .column(t)
                .iter()
                .chain(self.y_o.column(t).iter())
                .map(|v| format!("{} {}", v.re, v.im))
                .collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let header = text
            .lines()
            .next()
            .ok_or_else(|| Error::Parse("empty training set".into()))?;
        let mut kind = None;
        let mut m = None;
        let mut s = None;
        for field in header.trim_start_matches('#').split_whitespace() {
            match field.split_once('=') {
                Some(("labels", "estimated")) => kind = Some(LabelKind::Estimated),
                Some(("labels", "true")) => kind = Some(LabelKind::True),
                Some(("m", v)) => m = v.parse::<usize>().ok(),
                Some(("s", v)) => s = v.parse::<usize>().ok(),
                _ => {}
            }
        }
        let (Some(kind), Some(m), Some(s)) = (kind, m, s) else {
            return Err(Error::Parse(format!("bad training set header `{header}`")));
        };
        let rows = parse_complex_rows(text)?;
        if rows.iter().any(|r| r.len() != m + s) {
            return Err(Error::Parse(format!("each sample needs {} complex values", m + s)));
        }
        let x_i = CMatrix::from_fn(m, rows.len(), |r, c| rows[c][r]);
        let y_o = CMatrix::from_fn(s, rows.len(), |r, c| rows[c][m + r]);
        Self::new(x_i, y_o, kind)
    }
}

/// Full-band LS estimate from a symbol whose every used subcarrier is known.
pub fn block_pilot_ls(rx: &[Complex64], known: &[Complex64]) -> Result<Vec<Complex64>> {
    ls_pilot_estimate(rx, known)
}

/// Number of unit-stride windows over `k` subcarriers.
pub fn patdg_window_count(k: usize, taps: usize, pilot_interval: usize) -> usize {
    let reach = (taps - 1) * pilot_interval;
    k.saturating_sub(reach)
}

/// Slides a window of `(M-1) d + 1` subcarriers over the band. Inputs are
/// taken from `inputs` at the pilot offsets of the window and labels from
/// `labels` at the remaining offsets.
pub fn patdg_windows(
    inputs: &[Complex64],
    labels: &[Complex64],
    cfg: &OfdmConfig,
    label_kind: LabelKind,
) -> Result<TrainingSet> {
    let k = inputs.len();
    if labels.len() != k {
        return Err(Error::SizeMismatch { expected: k, actual: labels.len() });
    }
    let d = cfg.pilot_interval;
    let m = cfg.taps;
    let span = (m - 1) * d + 1;
    if k < span {
        return Err(Error::InsufficientData(format!(
            "{k} subcarriers cannot hold a window of {span}"
        )));
    }
    let t = patdg_window_count(k, m, d);
    let data_offsets: Vec<usize> = (0..span).filter(|o| o % d != 0).collect();
    let x_i = CMatrix::from_fn(m, t, |j, w| inputs[w + j * d]);
    let y_o = CMatrix::from_fn(data_offsets.len(), t, |s, w| labels[w + data_offsets[s]]);
    TrainingSet::new(x_i, y_o, label_kind)
}

/// Training pairs from a block pilot symbol's full-band LS estimate.
pub fn patdg_extract(h_full: &[Complex64], cfg: &OfdmConfig) -> Result<TrainingSet> {
    patdg_windows(h_full, h_full, cfg, LabelKind::Estimated)
}

/// The same windows as [`patdg_extract`], labelled with the true channel.
pub fn ideal_label_dataset(
    h_hat_full: &[Complex64],
    h_true_full: &[Complex64],
    cfg: &OfdmConfig,
) -> Result<TrainingSet> {
    patdg_windows(h_hat_full, h_true_full, cfg, LabelKind::True)
}

#[derive(Debug, Clone)]
pub struct FittedWeights {
    pub estimator: LinearEstimator,
    /// Numerical rank of `X_I`.
    pub rank: usize,
}

impl FittedWeights {
    pub fn rank_deficient(&self) -> bool {
        self.rank < self.estimator.inputs()
    }
}

/// `W = Y_O pinv(X_I)`, keeping the rank of `X_I`.
pub fn fit_weights_with_rank(ts: &TrainingSet) -> Result<FittedWeights> {
    if ts.len() <= ts.x_i.nrows() {
        return Err(Error::InsufficientData(format!(
            "fitting {} inputs needs more than {} samples, got {}",
            ts.x_i.nrows(),
            ts.x_i.nrows(),
            ts.len()
        )));
    }
    let p = pinv_with_rank(&ts.x_i)?;
    Ok(FittedWeights {
        estimator: LinearEstimator::new(&ts.y_o * p.matrix)?,
        rank: p.rank,
    })
}

pub fn fit_weights(ts: &TrainingSet) -> Result<LinearEstimator> {
    fit_weights_with_rank(ts).map(|f| f.estimator)
}

/// Intermediate and final results of one decision-directed pass.
#[derive(Debug, Clone)]
pub struct DdtdgOutput {
    pub estimator: LinearEstimator,
    /// Linear-interpolation estimate at the data subcarriers.
    pub initial: Vec<Complex64>,
    /// Estimate from the fitted weights at the data subcarriers.
    pub refined: Vec<Complex64>,
    /// Hard decisions at the data subcarriers.
    pub decisions: Vec<Complex64>,
    pub rank: usize,
}

/// Decision-directed training on one data symbol: LS at the comb pilots,
/// linear interpolation, ZF with hard decisions, the decided symbol reused
/// as a block pilot, window extraction, fit, and re-estimation.
pub fn ddtdg_generate_and_fit(
    rx: &[Complex64],
    pilot_values: &[Complex64],
    cfg: &OfdmConfig,
    layout: &GroupLayout,
) -> Result<DdtdgOutput> {
    if rx.len() != cfg.k_used {
        return Err(Error::SizeMismatch { expected: cfg.k_used, actual: rx.len() });
    }
    let d = cfg.pilot_interval;
    let rx_pilots: Vec<Complex64> = rx.iter().step_by(d).copied().collect();
    let pilot_ls = ls_pilot_estimate(&rx_pilots, pilot_values)?;
    let initial = interpolate_linear(&pilot_ls, cfg)?;

    let mut known = vec![Complex64::new(0.0, 0.0); cfg.k_used];
    for (j, &p) in pilot_values.iter().enumerate() {
        known[j * d] = p;
    }
    let data_idx = layout.data_indices();
    let mut decisions = Vec::with_capacity(data_idx.len());
    for (&i, &h) in data_idx.iter().zip(&initial) {
        let x = if h.norm() < crate::phy::ZF_MIN_GAIN {
            qpsk_decide(rx[i])
        } else {
            qpsk_decide(rx[i] / h)
        };
        known[i] = x;
        decisions.push(x);
    }

    let h_full = block_pilot_ls(rx, &known)?;
    let fitted = fit_weights_with_rank(&patdg_extract(&h_full, cfg)?)?;
    let refined = estimate_symbol(&fitted.estimator, &pilot_ls, layout)?;
    Ok(DdtdgOutput {
        estimator: fitted.estimator,
        initial,
        refined,
        decisions,
        rank: fitted.rank,
    })
}
