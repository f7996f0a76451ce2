use super::filter::{kaiser, sinc, KAISER_BETA};
use super::{check_supported_rate, Waveform};
use crate::error::Result;

/// Sinc zero crossings on each side of the interpolation kernel.
pub const ZERO_CROSSINGS: usize = 64;

/// Lowpass cutoff as a fraction of the lower of the two sampling rates.
const CUTOFF_FRACTION: f64 = 0.45;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// One polyphase branch: taps applied to source samples `base + first..`.
struct Phase {
    first: i64,
    taps: Vec<f64>,
}

fn design_phases(up: u64, down: u64, cutoff_hz: f64, source_rate: u32) -> Vec<Phase> {
    // Kernel in units of source samples.
    let fc = cutoff_hz / source_rate as f64;
    let half_width = ZERO_CROSSINGS as f64 / (2.0 * fc);
    (0..up)
        .map(|p| {
            let frac = ((p * down) % up) as f64 / up as f64;
            let first = (frac - half_width).ceil() as i64;
            let last = (frac + half_width).floor() as i64;
            let mut taps: Vec<f64> = (first..=last)
                .map(|k| {
                    let tau = frac - k as f64;
                    2.0 * fc * sinc(2.0 * fc * tau) * kaiser(tau / half_width, KAISER_BETA)
                })
                .collect();
            let sum: f64 = taps.iter().sum();
            taps.iter_mut().for_each(|t| *t /= sum);
            Phase { first, taps }
        })
        .collect()
}

/// Converts between 8 kHz and 16 kHz with a Kaiser-windowed sinc polyphase
/// filter. The kernel's cutoff sits at 0.45 of the lower rate, so the same
/// filter serves as anti-imaging (upsampling) and anti-aliasing
/// (downsampling) lowpass. Samples outside the signal are taken as zero.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    check_supported_rate(w.rate)?;
    check_supported_rate(target_rate)?;
    if w.rate == target_rate {
        return Ok(w.clone());
    }
    let g = gcd(w.rate as u64, target_rate as u64);
    let up = target_rate as u64 / g;
    let down = w.rate as u64 / g;
    let cutoff = CUTOFF_FRACTION * w.rate.min(target_rate) as f64;
    let phases = design_phases(up, down, cutoff, w.rate);

    let x = &w.samples;
    let n_in = x.len() as i64;
    let n_out = (x.len() as f64 * up as f64 / down as f64).round() as usize;
    let samples = (0..n_out as u64)
        .map(|n| {
            let base = ((n * down) / up) as i64;
            let phase = &phases[((n * down) % up) as usize];
            let start = base + phase.first;
            let mut acc = 0.0;
            for (j, &t) in phase.taps.iter().enumerate() {
                let k = start + j as i64;
                if (0..n_in).contains(&k) {
                    acc += t * x[k as usize];
                }
            }
            acc
        })
        .collect();
    Ok(Waveform {
        samples,
        rate: target_rate,
    })
}
