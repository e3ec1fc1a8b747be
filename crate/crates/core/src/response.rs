//! Back-propagation response of a link to a periodic probe.
//!
//! Every scatterer (a Rayleigh grid cell or a reflector) returns a delayed,
//! scaled copy of the launch waveform. The detector power is therefore
//! `P(t) = Σ p_j · s(t − d_j)` and the optical energy landing in a time bin
//! is `Σ p_j · [S(b − d_j) − S(a − d_j)]`, where `S` is the continuous
//! antiderivative of the periodic shape `s`.
//!
//! Within a uniform fiber run the cell powers form a geometric sequence and
//! the delays an arithmetic one, so the sums over all cells whose argument
//! falls on a constant or linear stretch of `s` (or `S`) reduce to two prefix
//! sums, `Σ q^i` and `Σ i·q^i`. Only cells on a curved stretch, i.e. inside a
//! pulse edge, are summed one by one. This keeps a 50 km link at sub-millimeter
//! grid spacing tractable without materializing the grid.

use std::fmt::Debug;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{OtdrError, Result};
use crate::fiber_link::{FiberLink, Run};
use crate::probe_pulse::{trapezoid_value, ProbePulse};

#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PieceKind {
    Const(f64),
    Linear { at_start: f64, slope: f64 },
    Curved,
}

#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub start: f64,
    pub end: f64,
    pub kind: PieceKind,
}

#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Value,
    Integral,
}

/// One period of a launch waveform, normalized to unit peak.
pub trait EchoKernel: Debug + Send + Sync {
    fn period(&self) -> f64;
    /// Integral over one period.
    fn area(&self) -> f64;
    /// Waveform at `y ∈ [0, period)`.
    fn value_in_period(&self, y: f64) -> f64;
    /// `∫_0^y` of the waveform for `y ∈ [0, period)`.
    fn integral_in_period(&self, y: f64) -> f64;
    #[doc(hidden)]
    fn pieces(&self, quantity: Quantity) -> &[Piece];

    /// Periodic waveform at any time.
    fn value(&self, y: f64) -> f64 {
        let t = self.period();
        let k = (y / t).floor();
        self.value_in_period(y - k * t)
    }

    /// Continuous antiderivative of the periodic waveform.
    fn integral(&self, y: f64) -> f64 {
        let t = self.period();
        let k = (y / t).floor();
        k * self.area() + self.integral_in_period(y - k * t)
    }

    /// `∫_y^{y+w}` of the waveform. Intervals inside a single constant or
    /// linear piece are integrated in closed form, so equal-width intervals
    /// on a flat stretch give bit-identical results.
    fn energy(&self, y: f64, w: f64) -> f64 {
        let t = self.period();
        let k = (y / t).floor();
        let local = y - k * t;
        if local + w <= t {
            if let Some(p) = self
                .pieces(Quantity::Value)
                .iter()
                .find(|p| local >= p.start && local + w <= p.end)
            {
                return piece_energy(self, p, local, w);
            }
        }
        self.integral(y + w) - self.integral(y)
    }
}

fn piece_energy<K: EchoKernel + ?Sized>(kernel: &K, piece: &Piece, local: f64, w: f64) -> f64 {
    match piece.kind {
        PieceKind::Const(c) => c * w,
        PieceKind::Linear { at_start, slope } => {
            w * (at_start + slope * (local - piece.start) + 0.5 * slope * w)
        }
        PieceKind::Curved => {
            kernel.integral_in_period(local + w) - kernel.integral_in_period(local)
        }
    }
}

impl dyn EchoKernel {
    fn eval(&self, q: Quantity, y: f64) -> f64 {
        match q {
            Quantity::Value => self.value(y),
            Quantity::Integral => self.integral(y),
        }
    }
}

/// Trapezoid starting at 0: linear rise, flat top, linear fall.
#[derive(Debug, Clone)]
pub struct TrapezoidKernel {
    rise: f64,
    width: f64,
    fall: f64,
    period: f64,
    value_pieces: Vec<Piece>,
    integral_pieces: Vec<Piece>,
}

impl TrapezoidKernel {
    pub fn new(rise: f64, width: f64, fall: f64, period: f64) -> Result<Self> {
        if !(rise >= 0.0 && fall >= 0.0 && width > rise + fall && period >= width) {
            return Err(OtdrError::InvalidPulse(format!(
                "trapezoid needs 0 ≤ edges, rise + fall < width ≤ period (rise {rise}, width {width}, fall {fall}, period {period})"
            )));
        }
        let top_end = width - fall;
        let area = width - 0.5 * (rise + fall);
        let mut value_pieces = Vec::new();
        let mut integral_pieces = Vec::new();
        if rise > 0.0 {
            value_pieces.push(Piece {
                start: 0.0,
                end: rise,
                kind: PieceKind::Linear {
                    at_start: 0.0,
                    slope: 1.0 / rise,
                },
            });
            integral_pieces.push(Piece {
                start: 0.0,
                end: rise,
                kind: PieceKind::Curved,
            });
        }
        value_pieces.push(Piece {
            start: rise,
            end: top_end,
            kind: PieceKind::Const(1.0),
        });
        integral_pieces.push(Piece {
            start: rise,
            end: top_end,
            kind: PieceKind::Linear {
                at_start: 0.5 * rise,
                slope: 1.0,
            },
        });
        if fall > 0.0 {
            value_pieces.push(Piece {
                start: top_end,
                end: width,
                kind: PieceKind::Linear {
                    at_start: 1.0,
                    slope: -1.0 / fall,
                },
            });
            integral_pieces.push(Piece {
                start: top_end,
                end: width,
                kind: PieceKind::Curved,
            });
        }
        if period > width {
            value_pieces.push(Piece {
                start: width,
                end: period,
                kind: PieceKind::Const(0.0),
            });
            integral_pieces.push(Piece {
                start: width,
                end: period,
                kind: PieceKind::Const(area),
            });
        }
        Ok(Self {
            rise,
            width,
            fall,
            period,
            value_pieces,
            integral_pieces,
        })
    }

    pub fn from_pulse(pulse: &ProbePulse) -> Result<Self> {
        Self::new(pulse.rise_edge, pulse.width, pulse.fall_edge, pulse.period)
    }
}

impl EchoKernel for TrapezoidKernel {
    fn period(&self) -> f64 {
        self.period
    }

    fn area(&self) -> f64 {
        self.width - 0.5 * (self.rise + self.fall)
    }

    fn value_in_period(&self, y: f64) -> f64 {
        trapezoid_value(y, self.rise, self.width, self.fall)
    }

    fn integral_in_period(&self, y: f64) -> f64 {
        let (r, w, f) = (self.rise, self.width, self.fall);
        if y <= 0.0 {
            0.0
        } else if y < r {
            0.5 * y * y / r
        } else if y <= w - f {
            0.5 * r + (y - r)
        } else if y < w {
            let left = w - y;
            self.area() - 0.5 * left * left / f
        } else {
            self.area()
        }
    }

    fn pieces(&self, quantity: Quantity) -> &[Piece] {
        match quantity {
            Quantity::Value => &self.value_pieces,
            Quantity::Integral => &self.integral_pieces,
        }
    }
}

const GAUSSIAN_SUPPORT_SIGMAS: f64 = 8.0;

/// Unit-peak Gaussian centered `8σ` after the period start, used for the
/// short-pulse (conventional OTDR) comparison.
#[derive(Debug, Clone)]
pub struct GaussianKernel {
    sigma: f64,
    period: f64,
    offset: f64,
    area: f64,
    value_pieces: Vec<Piece>,
    integral_pieces: Vec<Piece>,
}

impl GaussianKernel {
    pub fn from_fwhm(fwhm: f64, period: f64) -> Result<Self> {
        let sigma = fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
        let support = 2.0 * GAUSSIAN_SUPPORT_SIGMAS * sigma;
        if !(sigma > 0.0 && period > support) {
            return Err(OtdrError::InvalidPulse(format!(
                "Gaussian pulse FWHM {fwhm} s does not fit in period {period} s"
            )));
        }
        let mut k = Self {
            sigma,
            period,
            offset: 0.0,
            area: 0.0,
            value_pieces: Vec::new(),
            integral_pieces: Vec::new(),
        };
        k.offset = k.raw_integral(0.0);
        k.area = k.raw_integral(support) - k.offset;
        k.value_pieces = vec![
            Piece {
                start: 0.0,
                end: support,
                kind: PieceKind::Curved,
            },
            Piece {
                start: support,
                end: period,
                kind: PieceKind::Const(0.0),
            },
        ];
        k.integral_pieces = vec![
            Piece {
                start: 0.0,
                end: support,
                kind: PieceKind::Curved,
            },
            Piece {
                start: support,
                end: period,
                kind: PieceKind::Const(k.area),
            },
        ];
        Ok(k)
    }

    /// Delay from the period start to the peak.
    pub fn center(&self) -> f64 {
        GAUSSIAN_SUPPORT_SIGMAS * self.sigma
    }

    pub fn fwhm(&self) -> f64 {
        self.sigma * 2.0 * (2.0 * std::f64::consts::LN_2).sqrt()
    }

    fn raw_integral(&self, y: f64) -> f64 {
        let s2 = self.sigma * std::f64::consts::SQRT_2;
        0.5 * self.sigma
            * (2.0 * std::f64::consts::PI).sqrt()
            * (1.0 + libm::erf((y - self.center()) / s2))
    }
}

impl EchoKernel for GaussianKernel {
    fn period(&self) -> f64 {
        self.period
    }

    fn area(&self) -> f64 {
        self.area
    }

    fn value_in_period(&self, y: f64) -> f64 {
        if y < 0.0 || y > 2.0 * self.center() {
            return 0.0;
        }
        let u = (y - self.center()) / self.sigma;
        (-0.5 * u * u).exp()
    }

    fn integral_in_period(&self, y: f64) -> f64 {
        if y <= 0.0 {
            0.0
        } else if y >= 2.0 * self.center() {
            self.area
        } else {
            self.raw_integral(y) - self.offset
        }
    }

    fn pieces(&self, quantity: Quantity) -> &[Piece] {
        match quantity {
            Quantity::Value => &self.value_pieces,
            Quantity::Integral => &self.integral_pieces,
        }
    }
}

/// Prefix sums over a run's geometric cell powers, in blocks.
#[derive(Debug, Clone)]
struct RunSums {
    run: Run,
    scale: f64,
    block: usize,
    /// `Σ_{v<u} q^v` and `Σ_{v<u} v·q^v` for `u ∈ [0, block]`.
    s0: Vec<f64>,
    s1: Vec<f64>,
    /// Same sums over whole blocks, indexed by block count.
    p0: Vec<f64>,
    p1: Vec<f64>,
}

impl RunSums {
    fn new(run: Run, launch_power: f64) -> Self {
        let n = run.cells;
        let block = ((n as f64).sqrt().ceil() as usize)
            .clamp(16, 1 << 14)
            .min(n.max(1));
        let mut s0 = Vec::with_capacity(block + 1);
        let mut s1 = Vec::with_capacity(block + 1);
        let (mut a0, mut a1) = (0.0, 0.0);
        s0.push(0.0);
        s1.push(0.0);
        for u in 0..block {
            let qu = (run.ln_ratio * u as f64).exp();
            a0 += qu;
            a1 += u as f64 * qu;
            s0.push(a0);
            s1.push(a1);
        }
        let blocks = n / block;
        let mut p0 = Vec::with_capacity(blocks + 1);
        let mut p1 = Vec::with_capacity(blocks + 1);
        let (mut b0, mut b1) = (0.0, 0.0);
        p0.push(0.0);
        p1.push(0.0);
        for b in 0..blocks {
            let base = (b * block) as f64;
            let qb = (run.ln_ratio * base).exp();
            b0 += qb * s0[block];
            b1 += qb * (base * s0[block] + s1[block]);
            p0.push(b0);
            p1.push(b1);
        }
        Self {
            run,
            scale: launch_power * run.first_cell_power,
            block,
            s0,
            s1,
            p0,
            p1,
        }
    }

    /// `(Σ_{i<m} q^i, Σ_{i<m} i·q^i)`.
    fn prefix(&self, m: usize) -> (f64, f64) {
        let b = m / self.block;
        let u = m % self.block;
        let base = (b * self.block) as f64;
        let qb = (self.run.ln_ratio * base).exp();
        (
            self.p0[b] + qb * self.s0[u],
            self.p1[b] + qb * (base * self.s0[u] + self.s1[u]),
        )
    }

    fn range(&self, lo: usize, hi: usize) -> (f64, f64) {
        let (a0, a1) = self.prefix(lo);
        let (b0, b1) = self.prefix(hi);
        (self.scale * (b0 - a0), self.scale * (b1 - a1))
    }

    fn total(&self) -> f64 {
        self.range(0, self.run.cells).0
    }

    /// `Σ_i p_i · K(x − d_i)` over the run's cells, `K` the periodic kernel
    /// (or its antiderivative).
    fn sum(&self, kernel: &dyn EchoKernel, q: Quantity, x: f64) -> f64 {
        let run = &self.run;
        let n = run.cells;
        let delta = run.cell_delay;
        let period = kernel.period();
        let y0 = x - run.start_delay - 0.5 * delta;
        let y_last = y0 - (n as f64 - 1.0) * delta;
        // cells with y_i ≥ b, i.e. i ≤ (y0 − b)/δ
        let count = |b: f64| -> usize {
            let v = ((y0 - b) / delta).floor() + 1.0;
            if v <= 0.0 {
                0
            } else if v >= n as f64 {
                n
            } else {
                v as usize
            }
        };
        let k_min = (y_last / period).floor() as i64;
        let k_max = (y0 / period).floor() as i64;
        let area = kernel.area();
        let mut acc = 0.0;
        for k in k_min..=k_max {
            let shift = k as f64 * period;
            let base = if q == Quantity::Integral {
                k as f64 * area
            } else {
                0.0
            };
            for piece in kernel.pieces(q) {
                let lo_b = shift + piece.start;
                let hi_b = shift + piece.end;
                let first = count(hi_b);
                let last = count(lo_b);
                if last <= first {
                    continue;
                }
                match piece.kind {
                    PieceKind::Const(c) => {
                        let (h, _) = self.range(first, last);
                        acc += (base + c) * h;
                    }
                    PieceKind::Linear { at_start, slope } => {
                        let (h, hi) = self.range(first, last);
                        let c0 = base + at_start + slope * (y0 - lo_b);
                        acc += c0 * h - slope * delta * hi;
                    }
                    PieceKind::Curved => {
                        for i in first..last {
                            let y = y0 - i as f64 * delta - shift;
                            let f = match q {
                                Quantity::Value => kernel.value_in_period(y),
                                Quantity::Integral => kernel.integral_in_period(y),
                            };
                            acc += self.scale * (run.ln_ratio * i as f64).exp() * (base + f);
                        }
                    }
                }
            }
        }
        acc
    }
}

impl RunSums {
    /// `Σ_i p_i · ∫_a^{a+w} K(t − d_i) dt` over the run's cells.
    ///
    /// Cells whose interval sits inside one piece of the waveform are summed
    /// in closed form; the few straddling a piece boundary are integrated one
    /// by one. Neighboring bins therefore share bit-identical terms for cells
    /// that are dark or fully lit in both.
    fn bin_energy(&self, kernel: &dyn EchoKernel, a: f64, w: f64) -> f64 {
        let run = &self.run;
        let n = run.cells;
        let delta = run.cell_delay;
        let period = kernel.period();
        let y0 = a - run.start_delay - 0.5 * delta;
        let y_last = y0 - (n as f64 - 1.0) * delta;
        let clamp = |v: f64| -> usize {
            if v <= 0.0 {
                0
            } else if v >= n as f64 {
                n
            } else {
                v as usize
            }
        };
        // cells with y_i ≥ b, and with y_i > b
        let at_least = |b: f64| clamp(((y0 - b) / delta).floor() + 1.0);
        let above = |b: f64| clamp(((y0 - b) / delta).ceil());

        let k_min = (y_last / period).floor() as i64;
        let k_max = ((y0 + w) / period).floor() as i64;
        let mut ranges: Vec<(usize, usize, f64, &Piece)> = Vec::new();
        for k in k_min..=k_max {
            let shift = k as f64 * period;
            for piece in kernel.pieces(Quantity::Value) {
                let lo_b = shift + piece.start;
                let hi_b = shift + piece.end;
                if hi_b - w < lo_b {
                    continue;
                }
                let first = above(hi_b - w);
                let last = at_least(lo_b);
                if last > first {
                    ranges.push((first, last, shift, piece));
                }
            }
        }
        ranges.sort_by_key(|r| r.0);
        let mut straddlers = 0usize;
        let mut cursor = 0usize;
        for r in &mut ranges {
            r.0 = r.0.max(cursor);
            r.1 = r.1.max(r.0);
            straddlers += r.0 - cursor;
            cursor = r.1;
        }
        straddlers += n - cursor;
        if straddlers > STRADDLE_LIMIT {
            return self.sum(kernel, Quantity::Integral, a + w)
                - self.sum(kernel, Quantity::Integral, a);
        }

        let cell = |i: usize| self.scale * (run.ln_ratio * i as f64).exp();
        let mut acc = 0.0;
        let mut cursor = 0usize;
        let loose = |from: usize, to: usize, acc: &mut f64| {
            for i in from..to {
                let y = y0 - i as f64 * delta;
                *acc += cell(i) * (kernel.integral(y + w) - kernel.integral(y));
            }
        };
        for &(first, last, shift, piece) in &ranges {
            loose(cursor, first, &mut acc);
            cursor = last;
            if last == first {
                continue;
            }
            match piece.kind {
                PieceKind::Const(c) => {
                    if c != 0.0 {
                        acc += c * w * self.range(first, last).0;
                    }
                }
                PieceKind::Linear { at_start, slope } => {
                    let (h, hi) = self.range(first, last);
                    let lo_b = shift + piece.start;
                    let c0 = w * (at_start + slope * (y0 - lo_b) + 0.5 * slope * w);
                    acc += c0 * h - w * slope * delta * hi;
                }
                PieceKind::Curved => {
                    for i in first..last {
                        let local = y0 - i as f64 * delta - shift;
                        acc += cell(i)
                            * (kernel.integral_in_period(local + w)
                                - kernel.integral_in_period(local));
                    }
                }
            }
        }
        loose(cursor, n, &mut acc);
        acc
    }
}

/// Above this many boundary-straddling cells per bin, a run falls back to
/// differencing its antiderivative.
const STRADDLE_LIMIT: usize = 1 << 14;

/// A discrete echo (Fresnel reflection) with its own waveform.
#[derive(Debug, Clone)]
pub struct Echo {
    pub position: f64,
    /// Round-trip delay of the kernel's time origin.
    pub delay: f64,
    /// Returned power at unit waveform, W.
    pub power: f64,
    kernel: Arc<dyn EchoKernel>,
}

impl Echo {
    pub fn kernel(&self) -> &dyn EchoKernel {
        self.kernel.as_ref()
    }
}

/// Which scatterers to include in a sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    All,
    Rayleigh,
    Fresnel,
}

/// Exact noiseless forward model of a link under a periodic probe.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    runs: Vec<RunSums>,
    rayleigh_kernel: Arc<dyn EchoKernel>,
    echoes: Vec<Echo>,
    /// Absolute time of the kernel origin for a scatterer at zero delay.
    origin: f64,
    grid_step: f64,
}

impl ForwardModel {
    /// Trapezoidal long-pulse probe, no dispersion.
    pub fn new(link: &FiberLink, pulse: &ProbePulse, dz: f64) -> Result<Self> {
        pulse.validate()?;
        let kernel: Arc<dyn EchoKernel> = Arc::new(TrapezoidKernel::from_pulse(pulse)?);
        let echoes = Self::echoes(link, pulse.peak_power, |_| Ok((kernel.clone(), 0.0)))?;
        Self::assemble(
            link,
            pulse.peak_power,
            kernel,
            echoes,
            pulse.trigger_delay,
            dz,
        )
    }

    /// Trapezoidal probe whose edges broaden by the round-trip dispersion of
    /// each reflector's distance, for a source of the given spectral width.
    /// Edges broaden symmetrically about their midpoints so the pulse area is
    /// unchanged. Rayleigh cells keep the launch waveform.
    pub fn with_dispersion(
        link: &FiberLink,
        pulse: &ProbePulse,
        dz: f64,
        spectral_width_nm: f64,
    ) -> Result<Self> {
        pulse.validate()?;
        let kernel: Arc<dyn EchoKernel> = Arc::new(TrapezoidKernel::from_pulse(pulse)?);
        let echoes = Self::echoes(link, pulse.peak_power, |z| {
            let rise = link.round_trip_broadened_edge(pulse.rise_edge, spectral_width_nm, z)?;
            let fall = link.round_trip_broadened_edge(pulse.fall_edge, spectral_width_nm, z)?;
            let lead = 0.5 * (rise - pulse.rise_edge);
            let width = pulse.width + lead + 0.5 * (fall - pulse.fall_edge);
            let k: Arc<dyn EchoKernel> =
                Arc::new(TrapezoidKernel::new(rise, width, fall, pulse.period)?);
            Ok((k, -lead))
        })?;
        Self::assemble(
            link,
            pulse.peak_power,
            kernel,
            echoes,
            pulse.trigger_delay,
            dz,
        )
    }

    /// Short Gaussian probe of the given FWHM, broadened per reflector as in
    /// [`with_dispersion`](Self::with_dispersion). The kernel peak of a
    /// scatterer at zero delay sits at `trigger_delay + center` where
    /// `center` is returned alongside the model.
    pub fn gaussian(
        link: &FiberLink,
        fwhm: f64,
        period: f64,
        peak_power: f64,
        spectral_width_nm: f64,
        trigger_delay: f64,
        dz: f64,
    ) -> Result<(Self, f64)> {
        let base = GaussianKernel::from_fwhm(fwhm, period)?;
        let center = base.center();
        let kernel: Arc<dyn EchoKernel> = Arc::new(base);
        let echoes = Self::echoes(link, peak_power, |z| {
            let broad = link.round_trip_broadened_edge(fwhm, spectral_width_nm, z)?;
            let k = GaussianKernel::from_fwhm(broad, period)?;
            let shift = center - k.center();
            let k: Arc<dyn EchoKernel> = Arc::new(k);
            Ok((k, shift))
        })?;
        Ok((
            Self::assemble(link, peak_power, kernel, echoes, trigger_delay, dz)?,
            center,
        ))
    }

    fn echoes(
        link: &FiberLink,
        launch_power: f64,
        mut kernel_for: impl FnMut(f64) -> Result<(Arc<dyn EchoKernel>, f64)>,
    ) -> Result<Vec<Echo>> {
        let profile = link.impulse_profile(launch_power, link.shortest_segment())?;
        profile
            .fresnel_power
            .iter()
            .map(|&(z, power)| {
                let (kernel, shift) = kernel_for(z)?;
                Ok(Echo {
                    position: z,
                    delay: link.round_trip_delay(z) + shift,
                    power,
                    kernel,
                })
            })
            .collect()
    }

    fn assemble(
        link: &FiberLink,
        launch_power: f64,
        rayleigh_kernel: Arc<dyn EchoKernel>,
        echoes: Vec<Echo>,
        origin: f64,
        dz: f64,
    ) -> Result<Self> {
        let runs = link
            .runs(dz)?
            .into_iter()
            .map(|r| RunSums::new(r, launch_power))
            .collect();
        Ok(Self {
            runs,
            rayleigh_kernel,
            echoes,
            origin,
            grid_step: dz,
        })
    }

    pub fn echoes_list(&self) -> &[Echo] {
        &self.echoes
    }

    pub fn grid_step(&self) -> f64 {
        self.grid_step
    }

    pub fn cell_count(&self) -> usize {
        self.runs.iter().map(|r| r.run.cells).sum()
    }

    /// Longest round-trip delay step between adjacent grid cells.
    pub fn max_cell_delay(&self) -> f64 {
        self.runs
            .iter()
            .map(|r| r.run.cell_delay)
            .fold(0.0, f64::max)
    }

    fn sum(&self, q: Quantity, x: f64, which: Component) -> f64 {
        let y = x - self.origin;
        let mut acc = 0.0;
        if which != Component::Fresnel {
            for r in &self.runs {
                acc += r.sum(self.rayleigh_kernel.as_ref(), q, y);
            }
        }
        if which != Component::Rayleigh {
            for e in &self.echoes {
                acc += e.power * e.kernel.eval(q, y - e.delay);
            }
        }
        acc
    }

    /// Instantaneous back-propagated power at the detector, W.
    pub fn power(&self, t: f64) -> f64 {
        self.sum(Quantity::Value, t, Component::All)
    }

    pub fn power_of(&self, t: f64, which: Component) -> f64 {
        self.sum(Quantity::Value, t, which)
    }

    /// Continuous antiderivative of [`power`](Self::power), J.
    pub fn energy_antiderivative(&self, t: f64, which: Component) -> f64 {
        self.sum(Quantity::Integral, t, which)
    }

    /// Optical energy arriving in `[a, a + w)`, J.
    pub fn bin_energy(&self, a: f64, w: f64, which: Component) -> f64 {
        let y = a - self.origin;
        let mut acc = 0.0;
        if which != Component::Fresnel {
            for r in &self.runs {
                acc += r.bin_energy(self.rayleigh_kernel.as_ref(), y, w);
            }
        }
        if which != Component::Rayleigh {
            for e in &self.echoes {
                acc += e.power * e.kernel.energy(y - e.delay, w);
            }
        }
        acc.max(0.0)
    }

    /// Optical energy arriving in `[a, b)`, J.
    pub fn energy_between(&self, a: f64, b: f64) -> f64 {
        self.bin_energy(a, b - a, Component::All)
    }

    /// Energy per bin for consecutive bins `[t0 + mΔt, t0 + (m+1)Δt)`.
    pub fn bin_energies(&self, t0: f64, bin_width: f64, bins: usize, which: Component) -> Vec<f64> {
        (0..bins)
            .into_par_iter()
            .map(|m| self.bin_energy(t0 + m as f64 * bin_width, bin_width, which))
            .collect()
    }

    /// Upper bound on [`power`](Self::power): every scatterer fully lit.
    pub fn power_bound(&self) -> f64 {
        self.runs.iter().map(RunSums::total).sum::<f64>()
            + self.echoes.iter().map(|e| e.power).sum::<f64>()
    }

    pub fn total_rayleigh(&self) -> f64 {
        self.runs.iter().map(RunSums::total).sum()
    }
}

/// Back-propagated power at each time of `t_grid` for the link probed by
/// `pulse`, with Rayleigh cells on a grid of step `dz`.
pub fn cumulative_response(
    link: &FiberLink,
    pulse: &ProbePulse,
    t_grid: &[f64],
    dz: f64,
) -> Result<Vec<f64>> {
    let model = ForwardModel::new(link, pulse, dz)?;
    Ok(t_grid.par_iter().map(|&t| model.power(t)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiber_link::{FiberSegment, Reflector};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pulse(width: f64, period: f64, edge: f64) -> ProbePulse {
        ProbePulse {
            width,
            period,
            rise_edge: edge,
            fall_edge: edge,
            peak_power: 1e-3,
            wavelength_nm: 1550.0,
            linewidth_nm: 0.0,
            trigger_delay: 0.0,
        }
    }

    fn short_link() -> FiberLink {
        FiberLink::new(
            vec![
                FiberSegment::smf(54.0),
                FiberSegment::smf(20.0),
                FiberSegment::smf(20.0),
                FiberSegment::smf(2.0),
            ],
            vec![
                Reflector::connector(0.0),
                Reflector::connector(54.0),
                Reflector::connector(74.0),
                Reflector::connector(94.0),
                Reflector::open_end(96.0),
            ],
        )
        .unwrap()
    }

    /// Cell-by-cell sum of the same quantity, from the materialized profile.
    fn brute(link: &FiberLink, p: &ProbePulse, dz: f64, x: f64, integral: bool) -> f64 {
        let prof = link.impulse_profile(p.peak_power, dz).unwrap();
        let k = TrapezoidKernel::from_pulse(p).unwrap();
        let f = |y: f64| if integral { k.integral(y) } else { k.value(y) };
        let y = x - p.trigger_delay;
        let ray: f64 = prof
            .positions
            .iter()
            .zip(&prof.rayleigh_power)
            .map(|(&z, &pw)| pw * f(y - link.round_trip_delay(z)))
            .sum();
        let fr: f64 = prof
            .fresnel_power
            .iter()
            .map(|&(z, pw)| pw * f(y - link.round_trip_delay(z)))
            .sum();
        ray + fr
    }

    #[test]
    fn matches_brute_force_sum() {
        let link = short_link();
        let p = ProbePulse {
            trigger_delay: 37e-9,
            ..pulse(1.5e-6, 3e-6, 2.5e-9)
        };
        let dz = 0.05;
        let model = ForwardModel::new(&link, &p, dz).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let x = rng.random_range(-1e-6..7e-6);
            let fast = model.power(x);
            let slow = brute(&link, &p, dz, x, false);
            assert!(
                (fast - slow).abs() <= 1e-9 * slow.abs().max(1e-15),
                "{x}: {fast} vs {slow}"
            );
            let fast = model.energy_antiderivative(x, Component::All);
            let slow = brute(&link, &p, dz, x, true);
            assert!(
                (fast - slow).abs() <= 1e-10 * slow.abs().max(1e-24),
                "{x}: {fast} vs {slow}"
            );
        }
    }

    #[test]
    fn bin_energy_matches_cellwise_integral() {
        let link = short_link();
        let p = ProbePulse {
            trigger_delay: 13e-9,
            ..pulse(1.5e-6, 3e-6, 2.5e-9)
        };
        let k = TrapezoidKernel::from_pulse(&p).unwrap();
        for (dz, w) in [
            (0.05, 200e-12),
            (0.005, 200e-12),
            (0.002, 5e-9),
            (0.5, 1e-9),
        ] {
            let model = ForwardModel::new(&link, &p, dz).unwrap();
            let prof = link.impulse_profile(p.peak_power, dz).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for _ in 0..60 {
                let a = rng.random_range(-0.5e-6..6.5e-6);
                let y = a - p.trigger_delay;
                let slow: f64 = prof
                    .positions
                    .iter()
                    .zip(&prof.rayleigh_power)
                    .map(|(&z, &pw)| (z, pw))
                    .chain(prof.fresnel_power.iter().copied())
                    .map(|(z, pw)| {
                        let d = link.round_trip_delay(z);
                        pw * (k.integral(y + w - d) - k.integral(y - d))
                    })
                    .sum();
                let fast = model.bin_energy(a, w, Component::All);
                assert!(
                    (fast - slow).abs() <= 1e-9 * slow.abs().max(1e-3 * 1e-6 * w),
                    "dz {dz} w {w} a {a}: {fast} vs {slow}"
                );
            }
        }
    }

    #[test]
    fn flat_stretches_cancel_exactly() {
        // a lone echo fully lit over two neighboring bins contributes the
        // same bits to both
        let link = FiberLink::new(
            vec![FiberSegment::smf(96.0)],
            vec![Reflector::open_end(96.0)],
        )
        .unwrap();
        let p = pulse(1.5e-6, 3e-6, 0.0);
        let model = ForwardModel::new(&link, &p, 0.005).unwrap();
        let e = model.bin_energies(1.0e-6, 200e-12, 2, Component::Fresnel);
        assert_eq!(e[0], e[1]);
    }

    #[test]
    fn causality_before_launch() {
        let link = short_link();
        let p = ProbePulse {
            trigger_delay: 100e-9,
            ..pulse(1.5e-6, 3e-6, 2.5e-9)
        };
        let r = cumulative_response(&link, &p, &[0.0, 50e-9, 99e-9], 0.05).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_echo_step() {
        let link = FiberLink::new(
            vec![FiberSegment::smf(100.0)],
            vec![Reflector::connector(40.0).with_reflectance(0.01)],
        )
        .unwrap();
        let p = pulse(2e-6, 4e-6, 0.0);
        // Rayleigh-free by taking only the Fresnel component
        let model = ForwardModel::new(&link, &p, 0.5).unwrap();
        let d = link.round_trip_delay(40.0);
        let height = 0.01 * 1e-3 * 10f64.powf(-2.0 * 0.2 * 0.04 / 10.0);
        assert_eq!(model.power_of(d - 1e-9, Component::Fresnel), 0.0);
        assert_relative_eq!(
            model.power_of(d + 1e-9, Component::Fresnel),
            height,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            model.power_of(d + 1.9e-6, Component::Fresnel),
            height,
            max_relative = 1e-12
        );
        assert_eq!(model.power_of(d + 2.01e-6, Component::Fresnel), 0.0);
    }

    #[test]
    fn plateau_equals_profile_integral() {
        let link = short_link();
        let p = pulse(1.5e-6, 3e-6, 2.5e-9);
        let dz = 0.01;
        let model = ForwardModel::new(&link, &p, dz).unwrap();
        let prof = link.impulse_profile(p.peak_power, dz).unwrap();
        // the fiber is fully lit between the last echo's rise and the first
        // echo's fall
        let plateau = model.power(1.2e-6);
        assert_relative_eq!(plateau, prof.total(), max_relative = 1e-12);
        // trapezoidal integration of the continuous Rayleigh density on the
        // same grid agrees with the cell sum to discretization error
        let dens: Vec<f64> = prof
            .rayleigh_power
            .iter()
            .zip(&prof.cell_lengths)
            .map(|(p, l)| p / l)
            .collect();
        let trap: f64 = prof
            .positions
            .windows(2)
            .zip(dens.windows(2))
            .map(|(z, d)| 0.5 * (d[0] + d[1]) * (z[1] - z[0]))
            .sum::<f64>()
            + 0.5 * dz * (dens[0] + dens[dens.len() - 1]);
        assert_relative_eq!(model.total_rayleigh(), trap, max_relative = 1e-3);
    }

    #[test]
    fn rise_and_fall_are_monotone() {
        let link = short_link();
        let p = pulse(1.5e-6, 3e-6, 0.0);
        let model = ForwardModel::new(&link, &p, 0.02).unwrap();
        let rt = link.round_trip_time();
        let n = 400;
        let rise: Vec<f64> = (0..=n)
            .map(|i| model.power(rt * i as f64 / n as f64))
            .collect();
        assert!(rise.windows(2).all(|w| w[1] >= w[0] - 1e-18));
        let fall: Vec<f64> = (0..=n)
            .map(|i| model.power(p.width + rt * i as f64 / n as f64))
            .collect();
        assert!(fall.windows(2).all(|w| w[1] <= w[0] + 1e-18));
    }

    #[test]
    fn doubling_power_doubles_response() {
        let link = short_link();
        let p = pulse(1.5e-6, 3e-6, 2.5e-9);
        let p2 = ProbePulse {
            peak_power: 2e-3,
            ..p
        };
        let ts: Vec<f64> = (0..50).map(|i| i as f64 * 61e-9).collect();
        let a = cumulative_response(&link, &p, &ts, 0.05).unwrap();
        let b = cumulative_response(&link, &p2, &ts, 0.05).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(2.0 * x, *y, max_relative = 1e-14);
        }
    }

    #[test]
    fn gaussian_kernel_integral_is_consistent() {
        let k = GaussianKernel::from_fwhm(20e-12, 1e-6).unwrap();
        let sigma = 20e-12 / 2.354_820_045;
        assert_relative_eq!(
            k.area(),
            sigma * (2.0 * std::f64::consts::PI).sqrt(),
            max_relative = 1e-9
        );
        let n = 20_000;
        let h = 2.0 * k.center() / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let a = i as f64 * h;
            acc += 0.5 * h * (k.value(a) + k.value(a + h));
            if i % 1000 == 999 {
                assert_relative_eq!(acc, k.integral(a + h), max_relative = 1e-6, epsilon = 1e-20);
            }
        }
        assert_relative_eq!(k.value(k.center()), 1.0);
    }

    #[test]
    fn long_link_fine_grid_is_tractable() {
        let link = FiberLink::new(
            vec![FiberSegment::smf(50_000.0)],
            vec![
                Reflector::connector(1_000.0),
                Reflector::connector(49_000.0),
            ],
        )
        .unwrap();
        let p = pulse(550e-6, 1.2e-3, 2.5e-9);
        let model = ForwardModel::new(&link, &p, 0.00025).unwrap();
        assert_eq!(model.cell_count(), 200_000_000);
        let e = model.bin_energies(p.width + 490e-6 - 5e-9, 10e-12, 1000, Component::All);
        assert!(e.iter().all(|&x| x > 0.0));
        // fully-lit value matches the closed-form Rayleigh integral
        let seg = FiberSegment::smf(1.0);
        let alpha = 2.0 * 0.2e-3 * std::f64::consts::LN_10 / 10.0;
        let connector_factor = |z: f64| {
            if z > 49_000.0 {
                10f64.powf(-0.08)
            } else if z > 1_000.0 {
                10f64.powf(-0.04)
            } else {
                1.0
            }
        };
        let integral = |a: f64, b: f64| ((-alpha * a).exp() - (-alpha * b).exp()) / alpha;
        let closed = 1e-3
            * seg.scatter_coefficient()
            * seg.capture_fraction
            * (integral(0.0, 1_000.0)
                + connector_factor(2_000.0) * integral(1_000.0, 49_000.0)
                + connector_factor(49_500.0) * integral(49_000.0, 50_000.0));
        assert_relative_eq!(model.total_rayleigh(), closed, max_relative = 1e-8);
    }
}
