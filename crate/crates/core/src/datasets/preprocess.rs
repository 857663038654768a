use std::f64::consts::PI;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const TARGET_FS: f64 = 500.0;
pub const ECG_WINDOW: usize = 5000;
pub const EEG_WINDOW: usize = 170;
pub const EEG_BANDS: usize = 5;
/// Half-width of the interpolation kernel, in samples of the lower rate.
pub const SINC_HALF_WIDTH: usize = 16;

fn channels_and_len(op: &'static str, signal: &Tensor<f64>) -> Result<(usize, usize)> {
    match *signal.shape() {
        [c, l] => Ok((c, l)),
        ref s => Err(Error::shape(op, format!("expected [C, L], got {s:?}"))),
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-limited resampling of `[C, L]` from `fs_in` to `fs_out` with a
/// Hann-windowed sinc kernel. Output length is `round(L · fs_out / fs_in)`.
pub fn resample(signal: &Tensor<f64>, fs_in: f64, fs_out: f64) -> Result<Tensor<f64>> {
    if !(fs_in > 0.0 && fs_in.is_finite() && fs_out > 0.0 && fs_out.is_finite()) {
        return Err(Error::invalid(
            "resample",
            format!("sampling rates must be positive, got {fs_in} -> {fs_out}"),
        ));
    }
    let (channels, len) = channels_and_len("resample", signal)?;
    if fs_in == fs_out {
        return Ok(signal.clone());
    }
    let out_len = (len as f64 * fs_out / fs_in).round() as usize;
    let ratio = fs_in / fs_out;
    // Cutoff relative to the input Nyquist; below 1 when downsampling.
    let cutoff = (fs_out / fs_in).min(1.0);
    let half = SINC_HALF_WIDTH as f64 / cutoff;
    let x = signal.data();
    let mut out = vec![0.0; channels * out_len];
    let mut taps: Vec<(usize, f64)> = Vec::new();
    for j in 0..out_len {
        let u = j as f64 * ratio;
        let lo = (u - half).ceil().max(0.0) as usize;
        let hi = ((u + half).floor() as usize).min(len.saturating_sub(1));
        taps.clear();
        let mut total = 0.0;
        for k in lo..=hi {
            let d = u - k as f64;
            if d.abs() >= half {
                continue;
            }
            let w = cutoff * sinc(cutoff * d) * 0.5 * (1.0 + (PI * d / half).cos());
            taps.push((k, w));
            total += w;
        }
        if total == 0.0 {
            continue;
        }
        for c in 0..channels {
            let row = &x[c * len..(c + 1) * len];
            let acc: f64 = taps.iter().map(|&(k, w)| row[k] * w).sum();
            out[c * out_len + j] = acc / total;
        }
    }
    Tensor::new(vec![channels, out_len], out)
}

pub fn resample_to_500hz(signal: &Tensor<f64>, fs_in: f64) -> Result<Tensor<f64>> {
    resample(signal, fs_in, TARGET_FS)
}

/// Per-channel affine map of the recording's min to −1 and max to +1.
/// Constant channels map to zero.
pub fn normalize_minmax(signal: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (channels, len) = channels_and_len("normalize_minmax", signal)?;
    if !signal.is_finite() {
        return Err(Error::invalid("normalize_minmax", "signal contains non-finite values"));
    }
    let mut out = signal.data().to_vec();
    for row in out.chunks_mut(len.max(1)).take(channels) {
        let (lo, hi) = row.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        if hi > lo {
            let span = hi - lo;
            for v in row.iter_mut() {
                *v = (2.0 * (*v - lo) / span - 1.0).clamp(-1.0, 1.0);
            }
        } else {
            row.fill(0.0);
        }
    }
    Tensor::new(signal.shape().to_vec(), out)
}

/// Cuts `[C, L]` into consecutive windows of `window` samples. Signals
/// shorter than one window are right-padded with zeros; a trailing
/// remainder is discarded otherwise.
pub fn window_signal(signal: &Tensor<f64>, window: usize) -> Result<Vec<Tensor<f64>>> {
    let (channels, len) = channels_and_len("window_signal", signal)?;
    if len == 0 || window == 0 {
        return Err(Error::invalid("window_signal", "signal and window must be non-empty"));
    }
    let x = signal.data();
    let count = if len < window { 1 } else { len / window };
    let mut windows = Vec::with_capacity(count);
    for w in 0..count {
        let mut data = vec![0.0; channels * window];
        let start = w * window;
        let take = window.min(len - start);
        for c in 0..channels {
            data[c * window..c * window + take].copy_from_slice(&x[c * len + start..c * len + start + take]);
        }
        windows.push(Tensor::new(vec![channels, window], data)?);
    }
    Ok(windows)
}

pub fn window_ecg(signal: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
    window_signal(signal, ECG_WINDOW)
}

/// Turns `[N, 5]` DE features into `⌊N/170⌋` channel-major `[5, 170]` windows.
pub fn window_eeg_de(features: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
    let (n, bands) = match *features.shape() {
        [n, b] => (n, b),
        ref s => return Err(Error::shape("window_eeg_de", format!("expected [N, 5], got {s:?}"))),
    };
    if bands != EEG_BANDS {
        return Err(Error::shape("window_eeg_de", format!("expected 5 bands, got {bands}")));
    }
    let x = features.data();
    (0..n / EEG_WINDOW)
        .map(|w| {
            let mut data = vec![0.0; bands * EEG_WINDOW];
            for t in 0..EEG_WINDOW {
                for b in 0..bands {
                    data[b * EEG_WINDOW + t] = x[(w * EEG_WINDOW + t) * bands + b];
                }
            }
            Tensor::new(vec![bands, EEG_WINDOW], data)
        })
        .collect()
}

/// Full ECG chain for one recording: resample, normalize, window.
pub fn preprocess_ecg(signal: &Tensor<f64>, fs_in: f64) -> Result<Vec<Tensor<f64>>> {
    let (channels, _) = channels_and_len("preprocess_ecg", signal)?;
    if channels != 12 {
        return Err(Error::Data(format!("ECG recordings need 12 leads, got {channels}")));
    }
    let resampled = resample_to_500hz(signal, fs_in)?;
    window_ecg(&normalize_minmax(&resampled)?)
}
