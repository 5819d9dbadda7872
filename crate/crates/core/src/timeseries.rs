//! Patch-mean THb traces and pulse-rate estimation.

use std::io::{Read, Write};

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::tissue::ConcentrationMap;

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub fps: f64,
    pub values: Vec<f64>,
}

impl Trace {
    pub fn new(fps: f64, values: Vec<f64>) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Argument(format!("fps must be positive, got {fps}")));
        }
        Ok(Self { fps, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.fps
    }
}

/// Axis-aligned region `x, y, width, height` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    fn check(&self, map: &ConcentrationMap) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Argument(
                "patch rectangle must have positive area".into(),
            ));
        }
        if self.x + self.width > map.width() || self.y + self.height > map.height() {
            return Err(Error::Argument(format!(
                "patch {}x{} at ({}, {}) exceeds {}x{} map",
                self.width,
                self.height,
                self.x,
                self.y,
                map.width(),
                map.height()
            )));
        }
        Ok(())
    }
}

impl std::str::FromStr for Rect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Argument(format!("rectangle must be `x,y,w,h`, got `{s}`")))?;
        match parts[..] {
            [x, y, w, h] => Ok(Rect::new(x, y, w, h)),
            _ => Err(Error::Argument(format!(
                "rectangle must be `x,y,w,h`, got `{s}`"
            ))),
        }
    }
}

/// Mean THb inside `rect` for every map.
///
/// Pixels with non-finite concentrations are excluded; frames with no valid pixel
/// are filled by linear interpolation between their neighbours.
pub fn patch_mean<I, M>(maps: I, rect: Rect, fps: f64) -> Result<Trace>
where
    I: IntoIterator<Item = M>,
    M: std::borrow::Borrow<ConcentrationMap>,
{
    let mut values: Vec<Option<f64>> = Vec::new();
    for map in maps {
        let map = map.borrow();
        rect.check(map)?;
        let (mut sum, mut n) = (0.0, 0usize);
        for y in rect.y..rect.y + rect.height {
            for x in rect.x..rect.x + rect.width {
                let i = y * map.width() + x;
                if map.hbo[i].is_finite() && map.hb[i].is_finite() {
                    sum += map.thb_at(i);
                    n += 1;
                }
            }
        }
        values.push((n > 0).then(|| sum / n as f64));
    }
    Trace::new(fps, fill_missing(&values)?)
}

fn fill_missing(values: &[Option<f64>]) -> Result<Vec<f64>> {
    let known: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    if known.is_empty() {
        return if values.is_empty() {
            Ok(Vec::new())
        } else {
            Err(Error::Argument(
                "no frame has a valid pixel inside the patch".into(),
            ))
        };
    }
    let mut out = Vec::with_capacity(values.len());
    let mut k = 0;
    for i in 0..values.len() {
        while k + 1 < known.len() && known[k + 1].0 <= i {
            k += 1;
        }
        let (i0, v0) = known[k];
        let v = if i <= i0 || k + 1 == known.len() {
            v0
        } else {
            let (i1, v1) = known[k + 1];
            v0 + (v1 - v0) * (i - i0) as f64 / (i1 - i0) as f64
        };
        out.push(v);
    }
    Ok(out)
}

/// Centred moving average over `round(window_s · fps)` samples followed by a central
/// difference scaled to units per second (one-sided at the ends).
pub fn smooth_derivative(trace: &Trace, window_s: f64) -> Result<Trace> {
    let width = (window_s * trace.fps).round();
    if width.is_nan() || width < 1.0 {
        return Err(Error::Argument(format!(
            "smoothing window {window_s} s is shorter than one frame"
        )));
    }
    let width = width as usize;
    let n = trace.len();
    if n < width.max(2) {
        return Err(Error::Argument(format!(
            "trace of {n} samples is shorter than the {width}-sample window"
        )));
    }
    // zero-phase: even widths get half-weight end taps so the window stays centred
    let half = width / 2;
    let end_weight = if width.is_multiple_of(2) { 0.5 } else { 1.0 };
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let (mut acc, mut norm) = (0.0, 0.0);
            for j in i.saturating_sub(half)..(i + half + 1).min(n) {
                let w = if j + half == i || j == i + half {
                    end_weight
                } else {
                    1.0
                };
                acc += w * trace.values[j];
                norm += w;
            }
            acc / norm
        })
        .collect();
    let fps = trace.fps;
    let deriv = (0..n)
        .map(|i| match i {
            0 => (smooth[1] - smooth[0]) * fps,
            i if i == n - 1 => (smooth[i] - smooth[i - 1]) * fps,
            i => 0.5 * (smooth[i + 1] - smooth[i - 1]) * fps,
        })
        .collect();
    Trace::new(fps, deriv)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralPeak {
    pub peak_hz: f64,
    /// Power of the peak bin over the total power inside the band.
    pub power_fraction: f64,
}

impl SpectralPeak {
    pub fn bpm(&self) -> f64 {
        hz_to_bpm(self.peak_hz)
    }
}

pub fn hz_to_bpm(hz: f64) -> f64 {
    hz * 60.0
}

/// Default analysis band, 0.6–3.0 Hz (36–180 beats per minute).
pub const DEFAULT_BAND_HZ: (f64, f64) = (0.6, 3.0);

/// Locates the strongest spectral component inside `band_hz`.
///
/// The trace is detrended (least-squares line), Hann-windowed and transformed;
/// the maximum bin inside the band is refined by a parabola through the
/// log-power of the bin and its two neighbours.
pub fn dominant_frequency(trace: &Trace, band_hz: (f64, f64)) -> Result<SpectralPeak> {
    let (lo, hi) = band_hz;
    let nyquist = trace.fps / 2.0;
    if !(lo >= 0.0 && hi > lo && hi < nyquist) {
        return Err(Error::Argument(format!(
            "band {lo}–{hi} Hz must satisfy 0 ≤ lo < hi < fps/2 = {nyquist}"
        )));
    }
    let n = trace.len();
    if n < 4 {
        return Err(Error::Resolution(format!(
            "trace of {n} samples is too short for spectral analysis"
        )));
    }
    if trace.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("trace contains non-finite values".into()));
    }

    let detrended = detrend(&trace.values);
    let mut buf: Vec<Complex<f64>> = detrended
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos();
            Complex::new(v * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let power: Vec<f64> = buf[..n / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
    let bin_hz = trace.fps / n as f64;

    let first = (lo / bin_hz).ceil() as usize;
    let last = ((hi / bin_hz).floor() as usize).min(power.len() - 1);
    if first > last {
        return Err(Error::Resolution(format!(
            "bin width {bin_hz:.3} Hz leaves no bin in {lo}–{hi} Hz; record a longer trace"
        )));
    }
    let band = &power[first..=last];
    let total: f64 = band.iter().sum();
    let (offset, &peak) = band
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty band");
    let k = first + offset;
    if total <= 0.0 {
        return Ok(SpectralPeak {
            peak_hz: k as f64 * bin_hz,
            power_fraction: 0.0,
        });
    }

    let mut delta = 0.0;
    if k > 0 && k + 1 < power.len() {
        let floor = f64::MIN_POSITIVE;
        let (a, b, c) = (
            power[k - 1].max(floor).ln(),
            peak.max(floor).ln(),
            power[k + 1].max(floor).ln(),
        );
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            delta = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
        }
    }
    Ok(SpectralPeak {
        peak_hz: (k as f64 + delta) * bin_hz,
        power_fraction: peak / total,
    })
}

fn detrend(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let t_mean = (n - 1.0) / 2.0;
    let v_mean = values.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, v) in values.iter().enumerate() {
        let dt = i as f64 - t_mean;
        num += dt * (v - v_mean);
        den += dt * dt;
    }
    let slope = if den > 0.0 { num / den } else { 0.0 };
    values
        .iter()
        .enumerate()
        .map(|(i, v)| v - v_mean - slope * (i as f64 - t_mean))
        .collect()
}

pub fn write_trace<W: Write>(writer: W, trace: &Trace) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["frame", "time_s", "thb_g_per_l"])?;
    for (i, v) in trace.values.iter().enumerate() {
        w.write_record([i.to_string(), trace.time(i).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trace CSV; the frame rate is recovered from the time column.
pub fn read_trace<R: Read>(reader: R, fps: f64) -> Result<Trace> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["frame", "time_s", "thb_g_per_l"] {
        return Err(Error::Table(format!("unexpected trace header {headers:?}")));
    }
    let mut values = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let v = record
            .get(2)
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| Error::Table(format!("bad trace row {record:?}")))?;
        values.push(v);
    }
    Trace::new(fps, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(fps: f64, secs: f64, hz: f64, amp: f64, bias: f64) -> Trace {
        let n = (fps * secs).round() as usize;
        Trace::new(
            fps,
            (0..n)
                .map(|i| bias + amp * (2.0 * PI * hz * i as f64 / fps).sin())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_maps_constant_trace() {
        let maps: Vec<_> = (0..5)
            .map(|_| ConcentrationMap::constant(4, 4, [30.0, 10.0, 0.0]))
            .collect();
        let t = patch_mean(&maps, Rect::new(1, 1, 2, 2), 25.0).unwrap();
        assert_eq!(t.values, vec![40.0; 5]);
    }

    #[test]
    fn single_pixel_patch() {
        let maps: Vec<_> = (0..3)
            .map(|k| {
                let mut m = ConcentrationMap::zeros(3, 3);
                m.set(4, [k as f64, 1.0, 0.0]);
                m
            })
            .collect();
        let t = patch_mean(maps, Rect::new(1, 1, 1, 1), 10.0).unwrap();
        assert_eq!(t.values, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn missing_frames_are_interpolated() {
        let mut maps: Vec<_> = (0..4)
            .map(|k| ConcentrationMap::constant(2, 2, [k as f64 * 2.0, 0.0, 0.0]))
            .collect();
        maps[1].hbo.iter_mut().for_each(|v| *v = f64::NAN);
        let t = patch_mean(&maps, Rect::new(0, 0, 2, 2), 10.0).unwrap();
        assert_eq!(t.values, vec![0.0, 2.0, 4.0, 6.0]);
        assert!(patch_mean(&maps, Rect::new(1, 1, 2, 2), 10.0).is_err());
        assert!(patch_mean(&maps, Rect::new(0, 0, 0, 1), 10.0).is_err());
    }

    #[test]
    fn derivative_of_constant_and_ramp() {
        let t = Trace::new(25.0, vec![3.0; 50]).unwrap();
        assert!(smooth_derivative(&t, 0.4)
            .unwrap()
            .values
            .iter()
            .all(|v| v.abs() < 1e-12));
        let a = 2.5;
        let ramp = Trace::new(25.0, (0..100).map(|i| a * i as f64 / 25.0).collect()).unwrap();
        let d = smooth_derivative(&ramp, 0.4).unwrap();
        for v in &d.values[12..88] {
            assert!((v - a).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn derivative_argument_errors() {
        let t = Trace::new(25.0, vec![1.0; 5]).unwrap();
        assert!(smooth_derivative(&t, 0.01).is_err());
        assert!(smooth_derivative(&t, 1.0).is_err());
    }

    #[test]
    fn derivative_leads_by_quarter_cycle() {
        let (fps, hz) = (25.0, 1.25);
        let t = sine(fps, 10.0, hz, 1.0, 0.0);
        let d = smooth_derivative(&t, 0.4).unwrap();
        // correlate against sin and cos over interior samples to recover the phase
        let (mut s, mut c) = (0.0, 0.0);
        for i in 20..230 {
            let ph = 2.0 * PI * hz * i as f64 / fps;
            s += d.values[i] * ph.sin();
            c += d.values[i] * ph.cos();
        }
        let phase = c.atan2(s);
        assert!((phase - PI / 2.0).abs() < 0.05, "phase {phase} s {s} c {c}");
    }

    #[test]
    fn pure_tone_peak() {
        let p = dominant_frequency(&sine(25.0, 10.0, 1.25, 1.0, 5.0), DEFAULT_BAND_HZ).unwrap();
        assert!((p.peak_hz - 1.25).abs() <= 0.01, "{}", p.peak_hz);
        assert!(p.power_fraction > 0.3);
    }

    #[test]
    fn rate_conversion() {
        assert!((hz_to_bpm(1.2) - 72.0).abs() < 1e-12);
        assert!((hz_to_bpm(1.3) - 78.0).abs() < 1e-12);
    }

    #[test]
    fn band_and_resolution_errors() {
        let t = sine(25.0, 10.0, 1.25, 1.0, 0.0);
        assert!(matches!(
            dominant_frequency(&t, (0.6, 13.0)),
            Err(Error::Argument(_))
        ));
        let short = sine(25.0, 0.4, 1.25, 1.0, 0.0);
        assert!(matches!(
            dominant_frequency(&short, (0.6, 1.2)),
            Err(Error::Resolution(_))
        ));
    }

    #[test]
    fn affine_invariance() {
        let t = sine(25.0, 10.0, 1.7, 1.0, 0.0);
        let base = dominant_frequency(&t, DEFAULT_BAND_HZ).unwrap();
        let mut u = t.clone();
        for (i, v) in u.values.iter_mut().enumerate() {
            *v = -3.0 * *v + 100.0 + 0.05 * i as f64;
        }
        let other = dominant_frequency(&u, DEFAULT_BAND_HZ).unwrap();
        assert!((base.peak_hz - other.peak_hz).abs() < 0.02);
    }

    #[test]
    fn trace_csv_round_trip() {
        let t = Trace::new(25.0, vec![1.0, 2.5, -0.125]).unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &t).unwrap();
        assert!(buf.starts_with(b"frame,time_s,thb_g_per_l\n0,0,1\n1,0.04,2.5\n"));
        assert_eq!(read_trace(buf.as_slice(), 25.0).unwrap(), t);
    }
}
