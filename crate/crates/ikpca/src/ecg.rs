//! ECG preprocessing: baseline-wander removal, R-peak detection, and
//! fixed-length beat extraction with the R-peak pinned at sample 150 of 512.
//! Includes a Gaussian-bump synthesizer with known peak positions so the
//! whole chain can be tested against ground truth.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-lead recording in millivolts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EcgRecord {
    pub samples: Array1<f64>,
    pub fs: f64,
    pub lead_name: String,
}

impl EcgRecord {
    /// Requires fs > 0 and at least two seconds of signal.
    pub fn new(samples: Array1<f64>, fs: f64, lead_name: impl Into<String>) -> Result<EcgRecord> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::InvalidParameter {
                name: "fs",
                reason: format!("sampling frequency must be finite and positive, got {fs}"),
            });
        }
        let min = (2.0 * fs).ceil() as usize;
        if samples.len() < min {
            return Err(Error::ShortRecord {
                len: samples.len(),
                min,
                context: "record must cover at least 2 seconds".into(),
            });
        }
        Ok(EcgRecord {
            samples,
            fs,
            lead_name: lead_name.into(),
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }
}

/// Second-order Butterworth high-pass, bilinear transform. Returns
/// (b, a-tail), transfer b0 + b1 z^-1 + b2 z^-2 over 1 + a1 z^-1 + a2 z^-2.
pub(crate) fn butter_highpass_coeffs(fc: f64, fs: f64) -> ([f64; 3], [f64; 2]) {
    let k = (std::f64::consts::PI * fc / fs).tan();
    let q = std::f64::consts::FRAC_1_SQRT_2;
    let norm = 1.0 + k / q + k * k;
    let b0 = 1.0 / norm;
    let b1 = -2.0 / norm;
    let b2 = 1.0 / norm;
    let a1 = 2.0 * (k * k - 1.0) / norm;
    let a2 = (1.0 - k / q + k * k) / norm;
    ([b0, b1, b2], [a1, a2])
}

/// Direct-form II transposed single pass with explicit initial state.
fn biquad_pass(b: &[f64; 3], a: &[f64; 2], x: &[f64], zi: (f64, f64)) -> Vec<f64> {
    let (mut z1, mut z2) = zi;
    let mut y = Vec::with_capacity(x.len());
    for &xi in x {
        let yi = b[0] * xi + z1;
        z1 = b[1] * xi - a[0] * yi + z2;
        z2 = b[2] * xi - a[1] * yi;
        y.push(yi);
    }
    y
}

/// Steady-state filter state for a unit-amplitude constant input; scaled by
/// the first sample so a pure-DC signal produces (numerically) zero startup
/// transient in the high-pass case.
fn steady_state_zi(b: &[f64; 3], a: &[f64; 2]) -> (f64, f64) {
    let g = (b[0] + b[1] + b[2]) / (1.0 + a[0] + a[1]);
    (g - b[0], b[2] - a[1] * g)
}

const HIGHPASS_CUTOFF_HZ: f64 = 0.5;
const FILTER_PAD: usize = 12; // 6x the filter order

/// Zero-phase (forward-backward) 0.5 Hz second-order high-pass. Removes
/// baseline wander and DC while leaving QRS-band content untouched.
pub fn highpass_baseline(rec: &EcgRecord) -> Result<EcgRecord> {
    let n = rec.samples.len();
    if n <= FILTER_PAD {
        return Err(Error::ShortRecord {
            len: n,
            min: FILTER_PAD + 1,
            context: "high-pass warm-up needs more samples".into(),
        });
    }
    let (b, a) = butter_highpass_coeffs(HIGHPASS_CUTOFF_HZ, rec.fs);
    let x = rec.samples.as_slice().expect("owned contiguous");

    // odd reflection at both ends suppresses edge transients
    let mut ext = Vec::with_capacity(n + 2 * FILTER_PAD);
    for i in (1..=FILTER_PAD).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in 1..=FILTER_PAD {
        ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }

    let zi = steady_state_zi(&b, &a);
    let scale = |s: f64, zi: (f64, f64)| (zi.0 * s, zi.1 * s);
    let fwd = biquad_pass(&b, &a, &ext, scale(ext[0], zi));
    let mut rev: Vec<f64> = fwd.into_iter().rev().collect();
    rev = biquad_pass(&b, &a, &rev, scale(rev[0], zi));
    rev.reverse();

    let out = Array1::from_iter(rev[FILTER_PAD..FILTER_PAD + n].iter().cloned());
    Ok(EcgRecord {
        samples: out,
        fs: rec.fs,
        lead_name: rec.lead_name.clone(),
    })
}

/// R-peak detection: derivative emphasis, squaring, 150 ms centered window
/// integration, adaptive signal/noise thresholds with a 200 ms refractory
/// period, then refinement to the local extremum of the input within 50 ms.
/// All stages are zero-delay so no group-delay compensation is needed.
/// Returns strictly increasing sample indices; empty when nothing crosses
/// the threshold.
pub fn detect_rpeaks(rec: &EcgRecord) -> Vec<usize> {
    let x = rec.samples.as_slice().expect("owned contiguous");
    let n = x.len();
    if n < 3 {
        return Vec::new();
    }

    // centered derivative, squared
    let mut s = vec![0.0; n];
    for i in 1..n - 1 {
        let d = (x[i + 1] - x[i - 1]) / 2.0;
        s[i] = d * d;
    }

    // centered moving-window integration over 150 ms via prefix sums
    let half = ((0.150 * rec.fs / 2.0).round() as usize).max(1);
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + s[i];
    }
    let mut m = vec![0.0; n];
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(n - 1);
        m[i] = (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64;
    }

    // threshold bootstrap from the first two seconds
    let init = ((2.0 * rec.fs) as usize).min(n);
    let init_max = m[..init].iter().cloned().fold(0.0, f64::max);
    let init_mean = m[..init].iter().sum::<f64>() / init as f64;
    let mut spki = 0.6 * init_max;
    let mut npki = 0.5 * init_mean;

    let refractory = (0.200 * rec.fs).round() as usize;
    let refine = (0.050 * rec.fs).round() as usize;
    // (center, integrator value) of accepted detections; within a refractory
    // window the strongest candidate wins, so the rising edge of the
    // integrator cannot shadow the true maximum that follows it
    let mut raw: Vec<(usize, f64)> = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if !(m[i] > m[i - 1] && m[i] >= m[i + 1]) {
            i += 1;
            continue;
        }
        // plateaus report their center so the refinement window stays honest
        let mut r = i;
        while r + 1 < n && m[r + 1] == m[i] {
            r += 1;
        }
        let cand = (i + r) / 2;
        let v = m[i];
        let threshold = npki + 0.25 * (spki - npki);
        if v > threshold && v > 0.0 {
            match raw.last_mut() {
                Some(last) if cand < last.0 + refractory => {
                    if v > last.1 {
                        *last = (cand, v);
                        spki = 0.125 * v + 0.875 * spki;
                    }
                }
                _ => {
                    raw.push((cand, v));
                    spki = 0.125 * v + 0.875 * spki;
                }
            }
        } else {
            npki = 0.125 * v + 0.875 * npki;
        }
        i = r + 1;
    }

    // snap each detection to the signal extremum nearby
    let mut peaks: Vec<usize> = Vec::with_capacity(raw.len());
    for &(c, _) in &raw {
        let lo = c.saturating_sub(refine);
        let hi = (c + refine).min(n - 1);
        let mut best = lo;
        for j in lo..=hi {
            if x[j].abs() > x[best].abs() {
                best = j;
            }
        }
        match peaks.last() {
            Some(&last) if best <= last + refractory => {}
            _ => peaks.push(best),
        }
    }
    peaks
}

pub const BEAT_LEN: usize = 512;
pub const R_INDEX: usize = 150;

/// Fixed-length beats, one per row, R-peak at column 150.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeatMatrix {
    pub beats: Array2<f64>,
    pub r_index: usize,
    /// The interior peaks that produced rows, in order.
    pub source_peaks: Vec<usize>,
}

/// Linear interpolation of `x` at fractional sample position `u`; caller
/// guarantees 0 <= u <= len-1.
fn interp(x: &[f64], u: f64) -> f64 {
    let lo = u.floor() as usize;
    if lo + 1 >= x.len() {
        return x[x.len() - 1];
    }
    let frac = u - lo as f64;
    x[lo] * (1.0 - frac) + x[lo + 1] * frac
}

/// Cuts one beat per interior peak p_i: the window
/// [p_i - 150*RR_i/512, p_i + 362*RR_i/512) with RR_i the FOLLOWING
/// interval, resampled to 512 points by linear interpolation. The R-peak
/// lands at index 150 by construction (sample 150 sits exactly on p_i).
/// Beats whose windows leave the record are dropped.
pub fn extract_beats(rec: &EcgRecord, peaks: &[usize]) -> Result<BeatMatrix> {
    if peaks.len() < 3 {
        return Err(Error::InsufficientPeaks { found: peaks.len() });
    }
    for w in peaks.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidParameter {
                name: "peaks",
                reason: format!("indices must be strictly increasing, got {} then {}", w[0], w[1]),
            });
        }
    }
    let x = rec.samples.as_slice().expect("owned contiguous");
    let n = x.len();
    if *peaks.last().unwrap() >= n {
        return Err(Error::InvalidParameter {
            name: "peaks",
            reason: format!("peak {} outside record of length {n}", peaks.last().unwrap()),
        });
    }

    let mut rows: Vec<[f64; BEAT_LEN]> = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    for i in 1..peaks.len() - 1 {
        let p = peaks[i] as f64;
        let rr = (peaks[i + 1] - peaks[i]) as f64;
        let step = rr / BEAT_LEN as f64;
        let start = p - R_INDEX as f64 * step;
        let end = start + (BEAT_LEN - 1) as f64 * step;
        if start < 0.0 || end > (n - 1) as f64 {
            continue;
        }
        let mut row = [0.0; BEAT_LEN];
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = interp(x, start + j as f64 * step);
        }
        rows.push(row);
        kept.push(peaks[i]);
    }

    let mut beats = Array2::zeros((rows.len(), BEAT_LEN));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            beats[[i, j]] = v;
        }
    }
    Ok(BeatMatrix {
        beats,
        r_index: R_INDEX,
        source_peaks: kept,
    })
}

/// Column-wise mean over the selected rows.
pub fn mean_beat(bm: &BeatMatrix, rows: &[usize]) -> Result<Array1<f64>> {
    if rows.is_empty() {
        return Err(Error::InvalidParameter {
            name: "rows",
            reason: "mean over an empty row set".into(),
        });
    }
    let n = bm.beats.nrows();
    let mut out = Array1::zeros(BEAT_LEN);
    for &r in rows {
        if r >= n {
            return Err(Error::InvalidParameter {
                name: "rows",
                reason: format!("row {r} outside beat matrix with {n} rows"),
            });
        }
        out += &bm.beats.row(r);
    }
    out.mapv_inplace(|v| v / rows.len() as f64);
    Ok(out)
}

/// Reads the text format: header line `fs=<Hz>,lead=<name>`, then one sample
/// per line.
pub fn read_ecg_text(path: &Path) -> Result<EcgRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::Format {
        path: path.display().to_string(),
        reason: format!("unreadable: {e}"),
    })?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format {
        path: path.display().to_string(),
        reason: "empty file".into(),
    })?;
    let mut fs_val: Option<f64> = None;
    let mut lead: Option<String> = None;
    for part in header.split(',') {
        if let Some(v) = part.strip_prefix("fs=") {
            fs_val = v.trim().parse().ok();
        } else if let Some(v) = part.strip_prefix("lead=") {
            lead = Some(v.trim().to_string());
        }
    }
    let (fs_val, lead) = match (fs_val, lead) {
        (Some(f), Some(l)) => (f, l),
        _ => {
            return Err(Error::Format {
                path: path.display().to_string(),
                reason: format!("header must be `fs=<Hz>,lead=<name>`, got {header:?}"),
            })
        }
    };
    let mut samples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| Error::Format {
            path: path.display().to_string(),
            reason: format!("line {}: not a number: {line:?}", lineno + 2),
        })?;
        samples.push(v);
    }
    EcgRecord::new(Array1::from_vec(samples), fs_val, lead)
}

/// Writes the same text format back; values print in shortest-roundtrip form
/// so read(write(rec)) is bit-exact.
pub fn write_ecg_text(rec: &EcgRecord, path: &Path) -> Result<()> {
    let mut out = fs::File::create(path).map_err(|e| Error::Format {
        path: path.display().to_string(),
        reason: format!("unwritable: {e}"),
    })?;
    writeln!(out, "fs={},lead={}", rec.fs, rec.lead_name)?;
    for v in rec.samples.iter() {
        writeln!(out, "{v}")?;
    }
    Ok(())
}

/// Writes beats as delimiter-separated 512-column rows.
pub fn write_beats(bm: &BeatMatrix, path: &Path) -> Result<()> {
    let mut out = fs::File::create(path).map_err(|e| Error::Format {
        path: path.display().to_string(),
        reason: format!("unwritable: {e}"),
    })?;
    for i in 0..bm.beats.nrows() {
        let row: Vec<String> = bm.beats.row(i).iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

/// Knobs for the Gaussian-bump ECG synthesizer. Every beat is P-Q-R-S-T as
/// five bumps; variability enters through RR jitter, a per-beat T-wave
/// center shift (a nonlinear morphology change), white noise, and a slow
/// baseline-wander sinusoid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EcgSynthesisConfig {
    pub n_beats: usize,
    pub fs: f64,
    /// Mean RR interval, seconds.
    pub rr_mean: f64,
    /// Fractional RR standard deviation.
    pub rr_jitter: f64,
    /// Additive white-noise level, millivolts.
    pub noise_sigma: f64,
    /// Standard deviation of the per-beat T-wave center offset, seconds.
    pub t_wave_shift: f64,
    /// Baseline-wander amplitude, millivolts (0.2 Hz sinusoid).
    pub wander_amp: f64,
    pub seed: u64,
}

impl Default for EcgSynthesisConfig {
    fn default() -> Self {
        EcgSynthesisConfig {
            n_beats: 72,
            fs: 500.0,
            rr_mean: 0.8,
            rr_jitter: 0.04,
            noise_sigma: 0.02,
            t_wave_shift: 0.01,
            wander_amp: 0.1,
            seed: 0,
        }
    }
}

/// (amplitude mV, center offset from R in seconds, width sigma in seconds)
const BEAT_BUMPS: [(f64, f64, f64); 5] = [
    (0.15, -0.200, 0.025), // P
    (-0.10, -0.025, 0.010), // Q
    (1.00, 0.000, 0.010),  // R
    (-0.15, 0.030, 0.010), // S
    (0.30, 0.250, 0.060),  // T
];

/// Builds a record plus the true R-peak sample indices. R bump centers are
/// snapped to the sample grid so each true peak is the exact argmax of its
/// QRS. Draw order: all RR intervals, then all T-shifts, then the wander
/// phase, then per-sample noise; the order is part of the determinism
/// contract.
pub fn gen_synthetic_ecg(cfg: &EcgSynthesisConfig) -> Result<(EcgRecord, Vec<usize>)> {
    if cfg.n_beats == 0 {
        return Err(Error::InvalidParameter {
            name: "n_beats",
            reason: "need at least one beat".into(),
        });
    }
    if !(cfg.fs.is_finite() && cfg.fs > 0.0) || !(cfg.rr_mean.is_finite() && cfg.rr_mean > 0.0) {
        return Err(Error::InvalidParameter {
            name: "fs/rr_mean",
            reason: "sampling frequency and mean RR must be positive".into(),
        });
    }
    for (name, v) in [
        ("rr_jitter", cfg.rr_jitter),
        ("noise_sigma", cfg.noise_sigma),
        ("t_wave_shift", cfg.t_wave_shift),
        ("wander_amp", cfg.wander_amp),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "synthesis",
                reason: format!("{name} must be finite and non-negative, got {v}"),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let mut rr = Vec::with_capacity(cfg.n_beats);
    for _ in 0..cfg.n_beats {
        let v: f64 = cfg.rr_mean * (1.0 + cfg.rr_jitter * unit.sample(&mut rng));
        rr.push(v.max(0.3 * cfg.rr_mean));
    }
    let mut t_shift = Vec::with_capacity(cfg.n_beats);
    for _ in 0..cfg.n_beats {
        let v: f64 = cfg.t_wave_shift * unit.sample(&mut rng);
        t_shift.push(v);
    }
    let wander_phase: f64 = rng.random_range(0.0..(2.0 * std::f64::consts::PI));

    let margin = 0.5;
    let mut peak_times = Vec::with_capacity(cfg.n_beats);
    let mut t = margin;
    for interval in rr.iter() {
        peak_times.push(t);
        t += interval;
    }
    let total = t - rr[cfg.n_beats - 1] + margin + 0.6;
    let n = (total * cfg.fs).ceil() as usize;

    // snap R centers to the grid; true peaks are exact sample indices
    let peaks: Vec<usize> = peak_times
        .iter()
        .map(|&pt| (pt * cfg.fs).round() as usize)
        .collect();

    let mut x = vec![0.0; n];
    for (beat, &p) in peaks.iter().enumerate() {
        let center_s = p as f64 / cfg.fs;
        for (bump_idx, &(amp, offset, width)) in BEAT_BUMPS.iter().enumerate() {
            let is_t_wave = bump_idx == 4;
            let c = center_s + offset + if is_t_wave { t_shift[beat] } else { 0.0 };
            let lo = (((c - 4.0 * width) * cfg.fs).floor().max(0.0)) as usize;
            let hi = ((((c + 4.0 * width) * cfg.fs).ceil()) as usize).min(n - 1);
            for (j, slot) in x.iter_mut().enumerate().take(hi + 1).skip(lo) {
                let dt = j as f64 / cfg.fs - c;
                *slot += amp * (-0.5 * (dt / width) * (dt / width)).exp();
            }
        }
    }
    if cfg.wander_amp > 0.0 {
        for (j, slot) in x.iter_mut().enumerate() {
            let phase = 2.0 * std::f64::consts::PI * 0.2 * j as f64 / cfg.fs + wander_phase;
            *slot += cfg.wander_amp * phase.sin();
        }
    }
    if cfg.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_sigma).expect("checked above");
        for slot in x.iter_mut() {
            *slot += noise.sample(&mut rng);
        }
    }

    let rec = EcgRecord::new(Array1::from_vec(x), cfg.fs, "synthetic")?;
    Ok((rec, peaks))
}
