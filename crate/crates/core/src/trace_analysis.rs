//! Events, loss fits, dynamic range and resolution from an OTDR trace.

use std::fmt;
use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{OtdrError, Result};
use crate::trace_processing::OtdrTrace;

const E2: f64 = std::f64::consts::E * std::f64::consts::E;
/// Scale from the median absolute deviation of first differences to the
/// per-sample standard deviation of white noise.
const MAD_TO_SIGMA: f64 = 1.482_602_218_505_602 / std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReflectiveEvent {
    /// Midpoint of the two 1/e² crossings, m.
    pub position: f64,
    pub peak_value: f64,
    /// Full width at 1/e² of the height above the event's base, m. The base
    /// is the local background: the higher of the side minima just outside
    /// the half-prominence core, floored at zero, so on a dark background this is the width at `peak/e²`.
    pub width_1e2: f64,
    pub prominence: f64,
    /// Sample index of the maximum.
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventOptions {
    /// Absolute prominence threshold, counts.
    pub min_prominence: f64,
    /// Prominence threshold as a fraction of the largest diff count.
    pub relative_prominence: f64,
    /// Prominence threshold in units of the local noise standard deviation.
    pub min_snr: Option<f64>,
    /// Half-width of the local noise window, samples.
    pub noise_window: usize,
}

impl Default for EventOptions {
    fn default() -> Self {
        Self {
            min_prominence: 0.0,
            relative_prominence: 1e-4,
            min_snr: Some(8.0),
            noise_window: 64,
        }
    }
}

/// Local maxima of the diff counts with prominence at least
/// `min_prominence`, sorted by position.
pub fn detect_events(trace: &OtdrTrace, min_prominence: f64) -> Vec<ReflectiveEvent> {
    detect_events_with(
        trace,
        &EventOptions {
            min_prominence,
            relative_prominence: 0.0,
            min_snr: None,
            ..EventOptions::default()
        },
    )
}

pub fn detect_events_with(trace: &OtdrTrace, opts: &EventOptions) -> Vec<ReflectiveEvent> {
    let d = &trace.diff_counts;
    let n = d.len();
    if n < 3 {
        return Vec::new();
    }
    let top = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = opts
        .min_prominence
        .max(opts.relative_prominence * top.max(0.0));
    let noise = opts.min_snr.map(|_| local_noise(d, opts.noise_window));
    let mut candidates = Vec::new();
    let mut i = 1;
    while i < n - 1 {
        if d[i] > d[i - 1] {
            // flat tops count once, at their first sample
            let mut j = i;
            while j + 1 < n && d[j + 1] == d[i] {
                j += 1;
            }
            if j + 1 < n && d[j + 1] < d[i] {
                let p = prominence(d, i, j);
                let snr_ok = match (opts.min_snr, &noise) {
                    (Some(k), Some(s)) => p >= k * s[i],
                    _ => true,
                };
                if p > 0.0 && p >= threshold && snr_ok && d[i] > 0.0 {
                    candidates.push((i, p));
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    // strongest first; maxima inside a stronger event's 1/e² span belong to it
    candidates.sort_by(|a, b| d[b.0].total_cmp(&d[a.0]).then(a.0.cmp(&b.0)));
    let mut kept: Vec<(ReflectiveEvent, f64, f64)> = Vec::new();
    for (idx, p) in candidates {
        let base = side_base(d, idx, p);
        let (left, right) = crossings(trace, idx, base);
        let pos = trace.positions[idx];
        if kept.iter().any(|(_, l, r)| pos >= *l && pos <= *r) {
            continue;
        }
        kept.push((
            ReflectiveEvent {
                position: 0.5 * (left + right),
                peak_value: d[idx],
                width_1e2: right - left,
                prominence: p,
                index: idx,
            },
            left,
            right,
        ));
    }
    let mut events: Vec<ReflectiveEvent> = kept.into_iter().map(|k| k.0).collect();
    events.sort_by(|a, b| a.position.total_cmp(&b.position));
    events
}

/// Topographic prominence of the plateau `d[i..=j]`.
fn prominence(d: &[f64], i: usize, j: usize) -> f64 {
    let h = d[i];
    let mut left_min = h;
    for &v in d[..i].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &d[j + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

/// Background under the peak at `idx`. The half-prominence crossings bound
/// the event core; the base is the higher of the minima taken over two core
/// widths beyond each crossing, clamped to `[0, peak]`.
fn side_base(d: &[f64], idx: usize, prominence: f64) -> f64 {
    let half = d[idx] - prominence / 2.0;
    let il = (0..idx).rev().find(|&i| d[i] < half);
    let ir = (idx + 1..d.len()).find(|&i| d[i] < half);
    let span = match (il, ir) {
        (Some(a), Some(b)) => b - a,
        (Some(a), None) => 2 * (idx - a),
        (None, Some(b)) => 2 * (b - idx),
        (None, None) => return 0.0,
    }
    .max(1)
        * 2;
    let min_of = |s: &[f64]| s.iter().copied().fold(f64::INFINITY, f64::min);
    let left = il.map(|a| min_of(&d[a.saturating_sub(span)..=a]));
    let right = ir.map(|b| min_of(&d[b..=(b + span).min(d.len() - 1)]));
    let base = left
        .into_iter()
        .chain(right)
        .fold(f64::NEG_INFINITY, f64::max);
    base.clamp(0.0, d[idx])
}

/// Positions where the trace crosses `base + (peak − base)/e²` on either
/// side of `idx`, linearly interpolated; the trace end if it never does.
fn crossings(trace: &OtdrTrace, idx: usize, base: f64) -> (f64, f64) {
    let d = &trace.diff_counts;
    let x = &trace.positions;
    let level = base + (d[idx] - base) / E2;
    let interp = |a: usize, b: usize| {
        let t = (level - d[a]) / (d[b] - d[a]);
        x[a] + t * (x[b] - x[a])
    };
    let left = (0..idx)
        .rev()
        .find(|&k| d[k] < level)
        .map_or(x[0], |k| interp(k, k + 1));
    let right = (idx + 1..d.len())
        .find(|&k| d[k] < level)
        .map_or(x[d.len() - 1], |k| interp(k - 1, k));
    (left, right)
}

/// Per-sample noise standard deviation from the MAD of first differences in
/// a sliding window.
fn local_noise(d: &[f64], half: usize) -> Vec<f64> {
    let n = d.len();
    let diffs: Vec<f64> = d.windows(2).map(|w| w[1] - w[0]).collect();
    let half = half.max(2);
    let mut out = Vec::with_capacity(n);
    let mut buf = Vec::with_capacity(2 * half + 1);
    let mut dev = Vec::with_capacity(2 * half + 1);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(diffs.len());
        buf.clear();
        buf.extend_from_slice(&diffs[lo..hi]);
        if buf.is_empty() {
            out.push(0.0);
            continue;
        }
        let med = median(&mut buf);
        dev.clear();
        dev.extend(buf.iter().map(|v| (v - med).abs()));
        out.push(MAD_TO_SIGMA * median(&mut dev));
    }
    out
}

fn median(v: &mut [f64]) -> f64 {
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    /// Exponential least squares on linear diff counts, reported in dB.
    #[default]
    Exponential,
    /// Straight-line least squares on the dB values.
    Db,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub method: FitMethod,
    /// Samples within this many event widths of an event are left out.
    pub exclusion_widths: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            method: FitMethod::Exponential,
            exclusion_widths: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Breakpoints {
    /// Segment edges at the detected events.
    Auto,
    /// Segment edges at these positions, m, ascending.
    At(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SegmentFit {
    pub start: f64,
    pub end: f64,
    pub slope_db_per_km: f64,
    /// Fitted level extrapolated to position 0, dB.
    pub intercept_db: f64,
    pub residual_rms_db: f64,
    pub samples: usize,
}

impl SegmentFit {
    pub fn level_at(&self, position: f64) -> f64 {
        self.intercept_db + self.slope_db_per_km * position / 1000.0
    }
}

/// Piecewise loss fits between breakpoints, skipping event neighborhoods.
pub fn piecewise_fit(
    trace: &OtdrTrace,
    breakpoints: &Breakpoints,
    events: &[ReflectiveEvent],
    opts: &FitOptions,
) -> Result<Vec<SegmentFit>> {
    if trace.is_empty() {
        return Err(OtdrError::Analysis("no samples".into()));
    }
    let last_fiber = trace
        .dark
        .as_ref()
        .map_or(trace.len(), |d| d.start)
        .min(trace.len());
    let strict = matches!(breakpoints, Breakpoints::At(_));
    let edges: Vec<f64> = match breakpoints {
        Breakpoints::At(v) => {
            if v.len() < 2 || v.windows(2).any(|w| w[1] <= w[0]) {
                return Err(OtdrError::InvalidArgument(
                    "breakpoints must be at least two ascending positions".into(),
                ));
            }
            v.clone()
        }
        Breakpoints::Auto => {
            let first = 0.0f64.max(trace.positions[0]);
            let mut v = vec![first];
            v.extend(events.iter().map(|e| e.position).filter(|&p| p > first));
            let end = trace.positions[last_fiber.saturating_sub(1)];
            let reach = events
                .last()
                .map_or(first, |e| e.position + opts.exclusion_widths * e.width_1e2);
            if end > reach && end > v[v.len() - 1] {
                v.push(end);
            }
            v
        }
    };
    let excluded = |x: f64| {
        events
            .iter()
            .any(|e| (x - e.position).abs() <= opts.exclusion_widths * e.width_1e2)
    };
    let mut fits = Vec::new();
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let idx: Vec<usize> = (0..last_fiber)
            .filter(|&i| {
                let x = trace.positions[i];
                x >= a && x <= b && !excluded(x)
            })
            .collect();
        if idx.len() < 3 {
            if strict {
                return Err(OtdrError::Analysis(format!(
                    "segment [{a}, {b}] m has {} usable samples, need ≥ 3",
                    idx.len()
                )));
            }
            continue;
        }
        match fit_segment(trace, &idx, opts.method) {
            Ok(mut f) => {
                f.start = a;
                f.end = b;
                fits.push(f);
            }
            Err(e) if strict => return Err(e),
            Err(_) => continue,
        }
    }
    if fits.is_empty() {
        return Err(OtdrError::Analysis("no segment could be fitted".into()));
    }
    Ok(fits)
}

fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - slope * mx, slope)
}

fn fit_segment(trace: &OtdrTrace, idx: &[usize], method: FitMethod) -> Result<SegmentFit> {
    let x: Vec<f64> = idx.iter().map(|&i| trace.positions[i]).collect();
    let db: Vec<f64> = idx.iter().map(|&i| trace.db[i]).collect();
    let (intercept_db, slope_per_m) = match method {
        FitMethod::Db => line_fit(&x, &db),
        FitMethod::Exponential => {
            let y: Vec<f64> = idx.iter().map(|&i| trace.diff_counts[i]).collect();
            let (ln_a, kappa) = exponential_fit(&x, &y)?;
            let f = trace.scale.convention.factor();
            let log_e = std::f64::consts::LOG10_E;
            (
                f * (ln_a * log_e - trace.scale.reference.log10()),
                -f * kappa * log_e,
            )
        }
    };
    let rms = (x
        .iter()
        .zip(&db)
        .map(|(xi, yi)| (yi - (intercept_db + slope_per_m * xi)).powi(2))
        .sum::<f64>()
        / x.len() as f64)
        .sqrt();
    Ok(SegmentFit {
        start: x[0],
        end: x[x.len() - 1],
        slope_db_per_km: slope_per_m * 1000.0,
        intercept_db,
        residual_rms_db: rms,
        samples: x.len(),
    })
}

/// Least-squares `y ≈ A·exp(−κx)` by damped Gauss-Newton; returns
/// `(ln A, κ)`.
fn exponential_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let x0 = x[0];
    let u: Vec<f64> = x.iter().map(|v| v - x0).collect();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    if !(mean > 0.0) {
        return Err(OtdrError::Analysis("segment has no positive signal".into()));
    }
    let pos: Vec<(f64, f64)> = u
        .iter()
        .zip(y)
        .filter(|(_, v)| **v > 0.0)
        .map(|(a, b)| (*a, b.ln()))
        .collect();
    let (mut la, mut k) = if pos.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pos.into_iter().unzip();
        let (b, m) = line_fit(&xs, &ys);
        (b, -m)
    } else {
        (mean.ln(), 0.0)
    };
    let cost = |la: f64, k: f64| -> f64 {
        u.iter()
            .zip(y)
            .map(|(ui, yi)| (yi - (la - k * ui).exp()).powi(2))
            .sum()
    };
    let mut c = cost(la, k);
    let mut lambda = 1e-3;
    for _ in 0..200 {
        // normal equations in (ln A, κ)
        let (mut h00, mut h01, mut h11, mut g0, mut g1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (ui, yi) in u.iter().zip(y) {
            let m = (la - k * ui).exp();
            let r = yi - m;
            let j0 = m;
            let j1 = -ui * m;
            h00 += j0 * j0;
            h01 += j0 * j1;
            h11 += j1 * j1;
            g0 += j0 * r;
            g1 += j1 * r;
        }
        let mut improved = false;
        for _ in 0..30 {
            let a00 = h00 * (1.0 + lambda);
            let a11 = h11 * (1.0 + lambda);
            let det = a00 * a11 - h01 * h01;
            if !(det.abs() > 0.0) {
                lambda *= 10.0;
                continue;
            }
            let d0 = (a11 * g0 - h01 * g1) / det;
            let d1 = (a00 * g1 - h01 * g0) / det;
            let (nla, nk) = (la + d0, k + d1);
            let nc = cost(nla, nk);
            if nc.is_finite() && nc <= c {
                let small = d0.abs() < 1e-15 && (d1 * u[u.len() - 1]).abs() < 1e-15;
                la = nla;
                k = nk;
                let rel = (c - nc) / c.max(f64::MIN_POSITIVE);
                c = nc;
                lambda = (lambda * 0.1).max(1e-12);
                improved = !(small || rel < 1e-15);
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    if !(la.is_finite() && k.is_finite()) {
        return Err(OtdrError::Analysis("exponential fit diverged".into()));
    }
    Ok((la + k * x0, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DynamicRange {
    pub initial_db: f64,
    pub noise_db: f64,
    pub dynamic_range_db: f64,
}

/// RMS of the dark-region diff counts.
pub fn noise_rms(trace: &OtdrTrace) -> Result<f64> {
    let d = trace
        .dark_counts()
        .filter(|d| !d.is_empty())
        .ok_or_else(|| OtdrError::Analysis("empty dark region".into()))?;
    Ok((d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt())
}

/// Gap between the first fit's level at position 0 and the dark-region
/// noise level, never below 0 dB.
pub fn dynamic_range(trace: &OtdrTrace, fits: &[SegmentFit]) -> Result<DynamicRange> {
    let first = fits
        .first()
        .ok_or_else(|| OtdrError::Analysis("no fitted segment".into()))?;
    let rms = noise_rms(trace)?;
    if rms <= 0.0 {
        return Err(OtdrError::Analysis(
            "noise floor is zero (noiseless trace)".into(),
        ));
    }
    let s = trace.scale;
    let noise_db = s.convention.factor() * (rms / s.reference).log10();
    Ok(DynamicRange {
        initial_db: first.intercept_db,
        noise_db,
        dynamic_range_db: (first.intercept_db - noise_db).max(0.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolutionReport {
    /// `(position, width_1e2)` per event, m.
    pub widths: Vec<(f64, f64)>,
    pub spread: f64,
    pub sample_spacing: f64,
    pub pass: bool,
}

impl ResolutionReport {
    pub fn verdict(&self) -> &'static str {
        if self.pass {
            "PASS"
        } else {
            "FAIL"
        }
    }
}

/// Width table and a PASS verdict when all widths agree within one sample.
pub fn resolution_report(
    trace: &OtdrTrace,
    events: &[ReflectiveEvent],
) -> Result<ResolutionReport> {
    if events.len() < 2 {
        return Err(OtdrError::Analysis(format!(
            "resolution comparison needs at least 2 events, found {}",
            events.len()
        )));
    }
    let widths: Vec<(f64, f64)> = events.iter().map(|e| (e.position, e.width_1e2)).collect();
    let max = widths.iter().map(|w| w.1).fold(f64::NEG_INFINITY, f64::max);
    let min = widths.iter().map(|w| w.1).fold(f64::INFINITY, f64::min);
    let spacing = trace.sample_spacing();
    let spread = max - min;
    Ok(ResolutionReport {
        widths,
        spread,
        sample_spacing: spacing,
        pass: spread <= spacing * (1.0 + 1e-9),
    })
}

/// `10·log10(mean signal / std noise)` over two disjoint sample ranges.
pub fn snr_estimate(trace: &OtdrTrace, signal: Range<usize>, noise: Range<usize>) -> Result<f64> {
    let n = trace.len();
    if signal.is_empty() || noise.is_empty() || signal.end > n || noise.end > n {
        return Err(OtdrError::Analysis(
            "empty or out-of-range SNR region".into(),
        ));
    }
    if signal.start < noise.end && noise.start < signal.end {
        return Err(OtdrError::Analysis(
            "signal and noise regions overlap".into(),
        ));
    }
    let s = &trace.diff_counts[signal];
    let z = &trace.diff_counts[noise];
    let mean_s = s.iter().sum::<f64>() / s.len() as f64;
    let mean_z = z.iter().sum::<f64>() / z.len() as f64;
    let std = (z.iter().map(|v| (v - mean_z).powi(2)).sum::<f64>() / z.len() as f64).sqrt();
    if std == 0.0 {
        return Err(OtdrError::Analysis(
            "noise standard deviation is zero".into(),
        ));
    }
    if mean_s <= 0.0 {
        return Err(OtdrError::Analysis("signal mean is not positive".into()));
    }
    Ok(10.0 * (mean_s / std).log10())
}

/// SNR gain from accumulating `ratio` times as many periods.
pub fn predicted_snr_gain(ratio: f64) -> f64 {
    5.0 * ratio.log10()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisOptions {
    pub events: EventOptions,
    pub fit: FitOptions,
    /// Explicit fit breakpoints, m; detected events when absent.
    pub breakpoints: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceReport {
    pub events: Vec<ReflectiveEvent>,
    pub fits: Vec<SegmentFit>,
    pub dynamic_range: Option<DynamicRange>,
    pub snr_db: Option<f64>,
    pub resolution: Option<ResolutionReport>,
    pub lag: usize,
    pub samples: usize,
    pub sample_spacing: f64,
    pub nominal_resolution: f64,
    pub physical_resolution: f64,
}

/// Full analysis of one trace.
pub fn analyze(trace: &OtdrTrace, opts: &AnalysisOptions) -> Result<TraceReport> {
    if trace.is_empty() {
        return Err(OtdrError::Analysis("no samples".into()));
    }
    let events = detect_events_with(trace, &opts.events);
    let bp = match &opts.breakpoints {
        Some(v) => Breakpoints::At(v.clone()),
        None => Breakpoints::Auto,
    };
    let fits = piecewise_fit(trace, &bp, &events, &opts.fit)?;
    let dynamic_range = dynamic_range(trace, &fits).ok();
    let snr_db = trace.dark.as_ref().and_then(|dark| {
        let f = &fits[0];
        let lo = trace.positions.partition_point(|&x| x < f.start);
        let hi = trace.positions.partition_point(|&x| x <= f.end);
        snr_estimate(trace, lo..hi.min(dark.start), dark.clone()).ok()
    });
    let resolution = resolution_report(trace, &events).ok();
    Ok(TraceReport {
        events,
        fits,
        dynamic_range,
        snr_db,
        resolution,
        lag: trace.lag,
        samples: trace.len(),
        sample_spacing: trace.sample_spacing(),
        nominal_resolution: trace.nominal_resolution(),
        physical_resolution: trace.physical_resolution(),
    })
}

struct Opt(Option<f64>);

impl fmt::Display for Opt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v:.4}"),
            None => f.write_str("n/a"),
        }
    }
}

impl TraceReport {
    pub fn write_events_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,position_m,peak_counts,width_1e2_m,prominence")?;
        for e in &self.events {
            writeln!(
                w,
                "{},{},{},{},{}",
                e.index, e.position, e.peak_value, e.width_1e2, e.prominence
            )?;
        }
        Ok(())
    }

    pub fn write_fits_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "start_m,end_m,slope_db_per_km,intercept_db,residual_rms_db,samples"
        )?;
        for f in &self.fits {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                f.start, f.end, f.slope_db_per_km, f.intercept_db, f.residual_rms_db, f.samples
            )?;
        }
        Ok(())
    }

    /// Plain `key=value` summary with a fixed set of keys.
    pub fn summary(&self) -> String {
        let dr = self.dynamic_range;
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        line("samples", self.samples.to_string());
        line("lag", self.lag.to_string());
        line("sample_spacing_m", format!("{:.6}", self.sample_spacing));
        line(
            "resolution_nominal_m",
            format!("{:.6}", self.nominal_resolution),
        );
        line(
            "resolution_physical_m",
            format!("{:.6}", self.physical_resolution),
        );
        line("events", self.events.len().to_string());
        line(
            "event_positions_m",
            self.events
                .iter()
                .map(|e| format!("{:.4}", e.position))
                .collect::<Vec<_>>()
                .join(";"),
        );
        line(
            "event_widths_m",
            self.events
                .iter()
                .map(|e| format!("{:.4}", e.width_1e2))
                .collect::<Vec<_>>()
                .join(";"),
        );
        line("segments", self.fits.len().to_string());
        line(
            "slopes_db_per_km",
            self.fits
                .iter()
                .map(|f| format!("{:.5}", f.slope_db_per_km))
                .collect::<Vec<_>>()
                .join(";"),
        );
        line(
            "initial_level_db",
            Opt(dr.map(|d| d.initial_db)).to_string(),
        );
        line("noise_floor_db", Opt(dr.map(|d| d.noise_db)).to_string());
        line(
            "dynamic_range_db",
            Opt(dr.map(|d| d.dynamic_range_db)).to_string(),
        );
        line("snr_db", Opt(self.snr_db).to_string());
        line(
            "resolution_spread_m",
            Opt(self.resolution.as_ref().map(|r| r.spread)).to_string(),
        );
        line(
            "resolution_verdict",
            self.resolution
                .as_ref()
                .map_or("n/a", |r| r.verdict())
                .to_string(),
        );
        s
    }
}
