//! From a cumulative histogram to an OTDR trace: part selection, lag-N
//! differential, position mapping and dB conversion.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{OtdrError, Result};
use crate::fiber_link::SMF_GROUP_VELOCITY;
use crate::tdc_histogram::{Histogram, PulseTiming};

const FORMAT_TAG: &str = "ibotdr-trace-v1";
/// Bins kept clear between the signal and the dark region.
const DARK_GUARD_BINS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Rising,
    #[default]
    Falling,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Rising => "rising",
            Direction::Falling => "falling",
        })
    }
}

impl FromStr for Direction {
    type Err = OtdrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rising" => Ok(Direction::Rising),
            "falling" => Ok(Direction::Falling),
            other => Err(OtdrError::Config(format!(
                "unknown direction {other:?} (expected rising or falling)"
            ))),
        }
    }
}

/// Scale of dB values: `10·log10` of counts, or `5·log10` for one-way loss
/// reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum DbConvention {
    #[default]
    #[serde(rename = "10log")]
    TenLog,
    #[serde(rename = "5log")]
    FiveLog,
}

impl DbConvention {
    pub fn factor(self) -> f64 {
        match self {
            DbConvention::TenLog => 10.0,
            DbConvention::FiveLog => 5.0,
        }
    }
}

impl fmt::Display for DbConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DbConvention::TenLog => "10log",
            DbConvention::FiveLog => "5log",
        })
    }
}

impl FromStr for DbConvention {
    type Err = OtdrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "10log" => Ok(DbConvention::TenLog),
            "5log" => Ok(DbConvention::FiveLog),
            other => Err(OtdrError::Config(format!(
                "unknown dB convention {other:?} (expected 10log or 5log)"
            ))),
        }
    }
}

/// Histogram bins to difference, with the timing needed to map them.
#[derive(Debug, Clone, PartialEq)]
pub struct PartSelection {
    pub direction: Direction,
    /// Bins fed to the differential, signal plus any dark tail.
    pub bins: Range<usize>,
    /// First bin after the signal.
    pub signal_end: usize,
    /// Signal-free bins for noise estimates.
    pub dark: Option<Range<usize>>,
    /// Trigger-referenced time mapped to position zero.
    pub time_reference: f64,
    pub group_velocity: f64,
}

fn timing_of(hist: &Histogram) -> Result<PulseTiming> {
    hist.meta.timing.ok_or_else(|| {
        OtdrError::Coverage("histogram carries no pulse timing; use auto-detection".into())
    })
}

fn bin_floor(hist: &Histogram, t: f64) -> i64 {
    ((t - hist.config.trigger_delay) / hist.config.bin_width).floor() as i64
}

fn bin_ceil(hist: &Histogram, t: f64) -> i64 {
    ((t - hist.config.trigger_delay) / hist.config.bin_width).ceil() as i64
}

fn covered(hist: &Histogram, lo: i64, hi: i64, what: &str) -> Result<()> {
    let n = hist.config.bin_count as i64;
    if lo < 0 || hi > n {
        let dt = hist.config.bin_width;
        return Err(OtdrError::Coverage(format!(
            "{what} needs bins [{lo}, {hi}) but the histogram holds [0, {n}); missing {} s before and {} s after",
            (-lo).max(0) as f64 * dt,
            (hi - n).max(0) as f64 * dt,
        )));
    }
    Ok(())
}

fn dark_after(hist: &Histogram, timing: &PulseTiming, signal_end: usize) -> Option<Range<usize>> {
    let next_pulse = bin_floor(hist, timing.period + timing.pulse_delay) - DARK_GUARD_BINS as i64;
    let end = next_pulse.clamp(0, hist.config.bin_count as i64) as usize;
    let start = signal_end + DARK_GUARD_BINS;
    (end > start).then_some(start..end)
}

/// Bins of the falling part: from just before the pulse starts to fall until
/// the far end has gone dark, followed by the dark tail of the period.
pub fn extract_falling_part(hist: &Histogram) -> Result<PartSelection> {
    let t = timing_of(hist)?;
    let off = t.pulse_delay + t.width;
    let start = bin_floor(hist, off - t.fall_edge) - 2;
    let signal_end = bin_ceil(hist, off + t.round_trip) + 1;
    covered(hist, start, signal_end, "the falling part")?;
    let signal_end = signal_end as usize;
    let dark = dark_after(hist, &t, signal_end);
    let end = dark.as_ref().map_or(signal_end, |d| d.end);
    Ok(PartSelection {
        direction: Direction::Falling,
        bins: start as usize..end,
        signal_end,
        dark,
        time_reference: off - 0.5 * t.fall_edge,
        group_velocity: t.group_velocity,
    })
}

/// Bins of the rising part, from just before the pulse starts until the
/// far-end echo has fully risen. Dark bins before the pulse, if any, serve
/// as the noise region.
pub fn extract_rising_part(hist: &Histogram) -> Result<PartSelection> {
    let t = timing_of(hist)?;
    let on = t.pulse_delay;
    // the two-bin lead is dropped when the pulse starts with the histogram
    let first = bin_floor(hist, on);
    let start = if first >= 0 { (first - 2).max(0) } else { first };
    let signal_end = bin_ceil(hist, on + t.rise_edge + t.round_trip) + 1;
    covered(hist, start, signal_end, "the rising part")?;
    let first_dark = start - DARK_GUARD_BINS as i64;
    let dark = (first_dark > 0).then_some(0..first_dark as usize);
    Ok(PartSelection {
        direction: Direction::Rising,
        bins: start as usize..signal_end as usize,
        signal_end: signal_end as usize,
        dark,
        time_reference: on + 0.5 * t.rise_edge,
        group_velocity: t.group_velocity,
    })
}

pub fn extract_part(hist: &Histogram, direction: Direction) -> Result<PartSelection> {
    match direction {
        Direction::Falling => extract_falling_part(hist),
        Direction::Rising => extract_rising_part(hist),
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let i = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[i]
}

/// Falling part located from the counts alone.
///
/// The plateau is the longest run of bins within a tolerance of the upper
/// (95th percentile) level; the tolerance is the larger of three dark-floor
/// standard deviations, three Poisson standard deviations of the level and
/// 1e-3 of the level. The part runs from the end of the plateau until the
/// counts return to the dark floor. Positions assume standard fiber group
/// velocity unless given.
pub fn auto_detect_falling_part(
    hist: &Histogram,
    group_velocity: Option<f64>,
) -> Result<PartSelection> {
    let c = &hist.counts;
    if c.len() < 8 {
        return Err(OtdrError::Analysis("no plateau: too few bins".into()));
    }
    let mut sorted = c.clone();
    sorted.sort_by(f64::total_cmp);
    let level = percentile(&sorted, 0.95);
    let floor = percentile(&sorted, 0.05);
    let low: Vec<f64> = c
        .iter()
        .copied()
        .filter(|&v| v <= percentile(&sorted, 0.10))
        .collect();
    let mean_low = low.iter().sum::<f64>() / low.len() as f64;
    let sigma_dark = (low.iter().map(|v| (v - mean_low).powi(2)).sum::<f64>() / low.len() as f64)
        .sqrt()
        .max(floor.max(0.0).sqrt());
    let dark_tol = 3.0 * sigma_dark.max(1.0);
    if level - floor <= dark_tol {
        return Err(OtdrError::Analysis(
            "no plateau: histogram is flat at the dark floor".into(),
        ));
    }
    let tol = (3.0 * sigma_dark).max(3.0 * level.sqrt()).max(1e-3 * level);
    let (mut best, mut run_start) = (0..0, None);
    for (m, &v) in c.iter().enumerate() {
        if (v - level).abs() <= tol {
            let s = *run_start.get_or_insert(m);
            if m + 1 - s > best.len() {
                best = s..m + 1;
            }
        } else {
            run_start = None;
        }
    }
    if best.len() < 3 {
        return Err(OtdrError::Analysis("no plateau found".into()));
    }
    let start = best.end.saturating_sub(2);
    let mut signal_end = c.len();
    for (m, &v) in c.iter().enumerate().skip(best.end) {
        if v <= floor + dark_tol {
            signal_end = (m + 1).min(c.len());
            break;
        }
    }
    let mut dark_end = signal_end;
    while dark_end < c.len() && c[dark_end] <= floor + dark_tol {
        dark_end += 1;
    }
    let dark_start = signal_end + DARK_GUARD_BINS;
    let dark =
        (dark_end > dark_start + DARK_GUARD_BINS).then(|| dark_start..dark_end - DARK_GUARD_BINS);
    let end = dark.as_ref().map_or(signal_end, |d| d.end);
    Ok(PartSelection {
        direction: Direction::Falling,
        bins: start..end,
        signal_end,
        dark,
        time_reference: hist.config.bin_start(best.end),
        group_velocity: group_velocity.unwrap_or(SMF_GROUP_VELOCITY),
    })
}

/// How dB values were derived from the differential counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbScale {
    /// Count level mapped to 0 dB.
    pub reference: f64,
    /// Counts below this are shown at the floor.
    pub floor: f64,
    pub convention: DbConvention,
}

impl Default for DbScale {
    fn default() -> Self {
        Self {
            reference: 1.0,
            floor: 1.0,
            convention: DbConvention::TenLog,
        }
    }
}

impl DbScale {
    pub fn apply(&self, counts: f64) -> f64 {
        self.convention.factor() * (counts.max(self.floor) / self.reference).log10()
    }
}

/// Differential OTDR trace.
#[derive(Debug, Clone, PartialEq)]
pub struct OtdrTrace {
    pub positions: Vec<f64>,
    /// Lag-N differential counts, unfloored.
    pub diff_counts: Vec<f64>,
    pub db: Vec<f64>,
    pub lag: usize,
    pub direction: Direction,
    pub bin_width: f64,
    pub group_velocity: f64,
    /// Histogram bin of sample 0's earlier bin.
    pub first_bin: usize,
    /// Samples whose bins are both dark.
    pub dark: Option<Range<usize>>,
    pub periods: u64,
    pub scale: DbScale,
    pub notes: BTreeMap<String, String>,
}

impl OtdrTrace {
    pub fn len(&self) -> usize {
        self.diff_counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diff_counts.is_empty()
    }

    /// Distance between consecutive samples, `0.5·Δt·v_g`.
    pub fn sample_spacing(&self) -> f64 {
        0.5 * self.bin_width * self.group_velocity
    }

    /// Resolution by the `N·Δt·v_g` formula.
    pub fn nominal_resolution(&self) -> f64 {
        self.lag as f64 * self.bin_width * self.group_velocity
    }

    /// Resolution with the round-trip factor, `0.5·N·Δt·v_g`.
    pub fn physical_resolution(&self) -> f64 {
        0.5 * self.nominal_resolution()
    }

    /// Diff counts of the dark samples.
    pub fn dark_counts(&self) -> Option<&[f64]> {
        self.dark.as_ref().map(|r| &self.diff_counts[r.clone()])
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "#format={FORMAT_TAG}")?;
        writeln!(w, "#lag={}", self.lag)?;
        writeln!(w, "#direction={}", self.direction)?;
        writeln!(w, "#bin_width={}", self.bin_width)?;
        writeln!(w, "#group_velocity={}", self.group_velocity)?;
        writeln!(w, "#first_bin={}", self.first_bin)?;
        writeln!(w, "#periods={}", self.periods)?;
        if let Some(d) = &self.dark {
            writeln!(w, "#dark_start={}", d.start)?;
            writeln!(w, "#dark_end={}", d.end)?;
        }
        writeln!(w, "#db_convention={}", self.scale.convention)?;
        writeln!(w, "#db_reference={}", self.scale.reference)?;
        writeln!(w, "#db_floor={}", self.scale.floor)?;
        writeln!(w, "#resolution_nominal_m={}", self.nominal_resolution())?;
        writeln!(w, "#resolution_physical_m={}", self.physical_resolution())?;
        for (k, v) in &self.notes {
            writeln!(
                w,
                "#note.{}={}",
                k.replace(['\n', '\r'], " "),
                v.replace(['\n', '\r'], " ")
            )?;
        }
        writeln!(w, "index,position_m,diff_counts,db")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{i},{},{},{}",
                self.positions[i], self.diff_counts[i], self.db[i]
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<OtdrTrace> {
        let mut meta: BTreeMap<String, (usize, String)> = BTreeMap::new();
        let mut notes = BTreeMap::new();
        let (mut positions, mut diff, mut db) = (Vec::new(), Vec::new(), Vec::new());
        let mut header = false;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let n = i + 1;
            if let Some(kv) = line.strip_prefix('#') {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| parse_err(n, "metadata line without '='"))?;
                match k.strip_prefix("note.") {
                    Some(key) => {
                        notes.insert(key.to_string(), v.to_string());
                    }
                    None => {
                        meta.insert(k.to_string(), (n, v.to_string()));
                    }
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if !header {
                if line.trim() != "index,position_m,diff_counts,db" {
                    return Err(parse_err(
                        n,
                        "expected header index,position_m,diff_counts,db",
                    ));
                }
                header = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(parse_err(n, "expected four fields"));
            }
            let idx: usize = f[0].trim().parse().map_err(|_| parse_err(n, "bad index"))?;
            if idx != positions.len() {
                return Err(parse_err(n, "indices must run 0, 1, 2, ..."));
            }
            let num = |s: &str, what: &str| s.trim().parse::<f64>().map_err(|_| parse_err(n, what));
            positions.push(num(f[1], "bad position")?);
            diff.push(num(f[2], "bad diff count")?);
            db.push(num(f[3], "bad dB value")?);
        }
        if !header {
            return Err(parse_err(0, "no header line"));
        }
        let text = |k: &str| meta.get(k).map(|(n, v)| (*n, v.as_str()));
        let parse = |k: &str| -> Result<Option<f64>> {
            text(k)
                .map(|(n, v)| {
                    v.parse::<f64>()
                        .map_err(|_| parse_err(n, &format!("bad {k}")))
                })
                .transpose()
        };
        let uint = |k: &str| -> Result<Option<u64>> {
            text(k)
                .map(|(n, v)| {
                    v.parse::<u64>()
                        .map_err(|_| parse_err(n, &format!("bad {k}")))
                })
                .transpose()
        };
        if let Some((n, f)) = text("format") {
            if f != FORMAT_TAG {
                return Err(parse_err(n, &format!("unsupported format {f}")));
            }
        }
        let need =
            |k: &str, v: Option<f64>| v.ok_or_else(|| parse_err(0, &format!("missing #{k}")));
        let dark = match (uint("dark_start")?, uint("dark_end")?) {
            (Some(a), Some(b)) if a <= b && b as usize <= positions.len() => {
                Some(a as usize..b as usize)
            }
            (None, None) => None,
            _ => return Err(parse_err(0, "inconsistent dark region")),
        };
        let direction = match text("direction") {
            Some((n, v)) => v.parse().map_err(|_| parse_err(n, "bad direction"))?,
            None => Direction::Falling,
        };
        let convention = match text("db_convention") {
            Some((n, v)) => v.parse().map_err(|_| parse_err(n, "bad dB convention"))?,
            None => DbConvention::TenLog,
        };
        let lag = uint("lag")?.unwrap_or(1) as usize;
        if lag == 0 {
            return Err(parse_err(0, "lag must be ≥ 1"));
        }
        Ok(OtdrTrace {
            positions,
            diff_counts: diff,
            db,
            lag,
            direction,
            bin_width: need("bin_width", parse("bin_width")?)?,
            group_velocity: need("group_velocity", parse("group_velocity")?)?,
            first_bin: uint("first_bin")?.unwrap_or(0) as usize,
            dark,
            periods: uint("periods")?.unwrap_or(0),
            scale: DbScale {
                reference: parse("db_reference")?.unwrap_or(1.0),
                floor: parse("db_floor")?.unwrap_or(1.0),
                convention,
            },
            notes,
        })
    }
}

fn parse_err(line: usize, message: &str) -> OtdrError {
    OtdrError::Parse {
        line,
        message: message.to_string(),
    }
}

/// Lag-`N` differential over the selected bins.
///
/// Sample `j` differences bins `s + j` and `s + j + N`, where `s` is the
/// first selected bin moved back by up to `N − 1` bins so that a part which
/// starts before the signal yields a signal-free first sample at every lag:
/// falling `C[s+j] − C[s+j+N]`, rising `C[s+j+N] − C[s+j]`,
/// both nonnegative in expectation. It sits at the midpoint of the two bin
/// centers, mapped to position `0.5·(t − t_ref)·v_g`. Sample spacing is
/// `0.5·Δt·v_g` for every lag.
pub fn differential_trace(hist: &Histogram, part: &PartSelection, lag: usize) -> Result<OtdrTrace> {
    let bins = part.bins.clone();
    if bins.end > hist.counts.len() || bins.start > bins.end {
        return Err(OtdrError::Coverage(format!(
            "part {bins:?} lies outside the {} histogram bins",
            hist.counts.len()
        )));
    }
    if lag == 0 || lag >= bins.len() {
        return Err(OtdrError::InvalidArgument(format!(
            "lag {lag} out of range for a part of {} bins",
            bins.len()
        )));
    }
    // reach back so the first sample of every lag is still signal free
    let s = bins.start - (lag - 1).min(bins.start);
    let c = &hist.counts[s..bins.end];
    let n = c.len() - lag;
    let dt = hist.config.bin_width;
    let v = part.group_velocity;
    let diff: Vec<f64> = match part.direction {
        Direction::Falling => (0..n).map(|j| c[j] - c[j + lag]).collect(),
        Direction::Rising => (0..n).map(|j| c[j + lag] - c[j]).collect(),
    };
    let positions = (0..n)
        .map(|j| {
            let t = hist.config.trigger_delay + (s as f64 + j as f64 + 0.5 + 0.5 * lag as f64) * dt;
            0.5 * (t - part.time_reference) * v
        })
        .collect();
    let dark = part.dark.as_ref().and_then(|d| {
        let lo = d.start.max(s) - s;
        let hi = d.end.min(bins.end).saturating_sub(s + lag);
        (hi > lo).then_some(lo..hi)
    });
    let scale = DbScale::default();
    let db = diff.iter().map(|&x| scale.apply(x)).collect();
    let mut notes = BTreeMap::new();
    notes.insert(
        "time_reference_s".into(),
        format!("{}", part.time_reference),
    );
    Ok(OtdrTrace {
        positions,
        diff_counts: diff,
        db,
        lag,
        direction: part.direction,
        bin_width: dt,
        group_velocity: v,
        first_bin: s,
        dark,
        periods: hist.periods,
        scale,
        notes,
    })
}

/// Recomputes dB values against `reference` counts, flooring at `floor`.
/// Diff counts are left untouched.
pub fn to_db(
    trace: &OtdrTrace,
    reference: f64,
    floor: f64,
    convention: DbConvention,
) -> Result<OtdrTrace> {
    if !(reference > 0.0 && reference.is_finite()) {
        return Err(OtdrError::InvalidArgument(format!(
            "dB reference must be > 0, got {reference}"
        )));
    }
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(OtdrError::InvalidArgument(format!(
            "dB floor must be > 0, got {floor}"
        )));
    }
    let scale = DbScale {
        reference,
        floor,
        convention,
    };
    let mut out = trace.clone();
    out.db = trace.diff_counts.iter().map(|&x| scale.apply(x)).collect();
    out.scale = scale;
    Ok(out)
}
