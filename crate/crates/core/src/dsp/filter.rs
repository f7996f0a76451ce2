use super::Waveform;
use crate::error::{Error, Result};

/// Kaiser shape parameter shared by every filter in the crate (about 86 dB of
/// stopband rejection).
pub const KAISER_BETA: f64 = 8.6;

/// Width of the band-limiting filter's transition region in Hz.
const BAND_LIMIT_TRANSITION_HZ: f64 = 200.0;

/// Zeroth-order modified Bessel function of the first kind (power series).
pub fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > sum * 1e-17 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

/// Kaiser window evaluated at `u` in [-1, 1]; zero outside.
pub fn kaiser(u: f64, beta: f64) -> f64 {
    if u.abs() > 1.0 {
        return 0.0;
    }
    bessel_i0(beta * (1.0 - u * u).sqrt()) / bessel_i0(beta)
}

pub(crate) fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Symmetric linear-phase FIR filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterKernel {
    pub taps: Vec<f64>,
    pub cutoff_hz: f64,
    pub design_rate: u32,
}

impl FilterKernel {
    /// Kaiser-windowed sinc lowpass with its -6 dB point at `cutoff_hz`,
    /// normalized to unit DC gain. `n_taps` is rounded up to the next odd
    /// number.
    pub fn lowpass(cutoff_hz: f64, design_rate: u32, n_taps: usize) -> Result<Self> {
        let nyquist = design_rate as f64 / 2.0;
        if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
            return Err(Error::Config(format!(
                "lowpass cutoff {cutoff_hz} Hz outside (0, {nyquist}) Hz"
            )));
        }
        let n_taps = n_taps.max(1) | 1;
        let half = (n_taps / 2) as f64;
        let fc = cutoff_hz / design_rate as f64;
        let mut taps: Vec<f64> = (0..n_taps)
            .map(|i| {
                let t = i as f64 - half;
                let u = if half == 0.0 { 0.0 } else { t / half };
                2.0 * fc * sinc(2.0 * fc * t) * kaiser(u, KAISER_BETA)
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= sum);
        Ok(FilterKernel {
            taps,
            cutoff_hz,
            design_rate,
        })
    }

    /// Centered ("same") convolution with zero padding outside the signal.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let half = self.taps.len() / 2;
        let n = x.len();
        (0..n)
            .map(|i| {
                // output i = sum_j taps[j] * x[i + half - j]
                let j_lo = (i + half + 1).saturating_sub(n);
                let j_hi = (i + half).min(self.taps.len() - 1);
                let mut acc = 0.0;
                for j in j_lo..=j_hi {
                    acc += self.taps[j] * x[i + half - j];
                }
                acc
            })
            .collect()
    }
}

/// Removes content above `cutoff_hz`. The filter's stopband begins at the
/// cutoff, so everything above it is attenuated by at least 40 dB.
pub fn band_limit(w: &Waveform, cutoff_hz: f64) -> Result<Waveform> {
    let nyquist = w.rate as f64 / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(Error::Config(format!(
            "band-limit cutoff {cutoff_hz} Hz must lie in (0, {nyquist}) Hz"
        )));
    }
    let transition = BAND_LIMIT_TRANSITION_HZ.min(cutoff_hz);
    // Kaiser design rule: taps - 1 = (A - 7.95) / (2.285 * dw), A ~ 86.7 dB.
    let n_taps = (5.48 * w.rate as f64 / transition).ceil() as usize + 1;
    let kernel = FilterKernel::lowpass(cutoff_hz - transition / 2.0, w.rate, n_taps)?;
    Ok(Waveform {
        samples: kernel.apply(&w.samples),
        rate: w.rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{central_range, rms};

    fn sine(freq: f64, rate: u32, n: usize) -> Waveform {
        let samples = (0..n)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
            .collect();
        Waveform::new(samples, rate).unwrap()
    }

    fn central_rms(x: &[f64]) -> f64 {
        rms(&x[central_range(x.len(), 0.8)])
    }

    #[test]
    fn bessel_reference_values() {
        assert_eq!(bessel_i0(0.0), 1.0);
        // I0(1) and I0(8.6) from tabulated values.
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
        assert!((bessel_i0(8.6) / 750.461_159_563_165_9 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lowpass_kernel_invariants() {
        let k = FilterKernel::lowpass(3400.0, 16000, 100).unwrap();
        assert_eq!(k.taps.len() % 2, 1);
        assert!((k.taps.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let n = k.taps.len();
        for i in 0..n {
            assert!((k.taps[i] - k.taps[n - 1 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn passband_tone_is_preserved() {
        let x = sine(1000.0, 16000, 16000);
        let y = band_limit(&x, 3400.0).unwrap();
        assert_eq!(y.len(), x.len());
        assert_eq!(y.rate, x.rate);
        let db = 20.0 * (central_rms(&y.samples) / central_rms(&x.samples)).log10();
        assert!(db.abs() <= 0.5, "gain {db} dB");
    }

    #[test]
    fn stopband_tone_is_removed() {
        for freq in [3500.0, 4000.0, 6000.0, 7500.0] {
            let x = sine(freq, 16000, 16000);
            let y = band_limit(&x, 3400.0).unwrap();
            let db = 20.0 * (central_rms(&y.samples) / central_rms(&x.samples)).log10();
            assert!(db <= -40.0, "{freq} Hz attenuated only {db} dB");
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let y = band_limit(&Waveform::new(vec![0.0; 500], 8000).unwrap(), 3400.0).unwrap();
        assert!(y.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cutoff_at_nyquist_is_rejected() {
        let w = Waveform::new(vec![0.0; 10], 8000).unwrap();
        assert!(matches!(band_limit(&w, 4000.0), Err(Error::Config(_))));
        assert!(matches!(band_limit(&w, 0.0), Err(Error::Config(_))));
    }
}
