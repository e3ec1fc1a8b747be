//! Fiber under test: segments, discrete reflectors and the exact
//! back-propagation response they produce.
//!
//! All lengths are meters and all times seconds. Segment coefficients keep
//! their customary units (dB/km, ps/(nm·km)) so configs read naturally.

use serde::{Deserialize, Serialize};

use crate::error::{OtdrError, Result};

/// Vacuum speed of light, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Default single-mode fiber attenuation, dB/km.
pub const SMF_ATTENUATION_DB_PER_KM: f64 = 0.2;
/// Default Rayleigh share of the attenuation, dB/km.
pub const SMF_SCATTER_LOSS_DB_PER_KM: f64 = 0.18;
/// Default backscatter capture fraction.
pub const SMF_CAPTURE_FRACTION: f64 = 1.5e-3;
/// Default group velocity. 73.3 ns of time-of-flight maps to 14.66 m.
pub const SMF_GROUP_VELOCITY: f64 = 2.0e8;
/// Default chromatic dispersion, ps/(nm·km).
pub const SMF_DISPERSION: f64 = 17.0;

/// Refractive index used for the glass–air open-end reflectance.
pub const SILICA_INDEX: f64 = 1.468;
/// Default connector reflectance (−45 dB).
pub const CONNECTOR_REFLECTANCE: f64 = 3.162_277_660_168_379_5e-5;
/// Default connector one-way insertion loss, dB.
pub const CONNECTOR_INSERTION_LOSS_DB: f64 = 0.2;
/// Default splice reflectance (−80 dB) and insertion loss.
pub const SPLICE_REFLECTANCE: f64 = 1e-8;
pub const SPLICE_INSERTION_LOSS_DB: f64 = 0.05;

const DB_TO_NEPER_POWER: f64 = std::f64::consts::LN_10 / 10.0;
const POSITION_TOLERANCE: f64 = 1e-9;

/// Normal-incidence Fresnel power reflectance of a glass–air interface.
pub fn fresnel_reflectance(index: f64) -> f64 {
    ((index - 1.0) / (index + 1.0)).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberSegment {
    pub length_m: f64,
    pub attenuation_db_per_km: f64,
    pub scatter_loss_db_per_km: f64,
    pub capture_fraction: f64,
    pub group_velocity: f64,
    pub dispersion_ps_per_nm_km: f64,
}

impl FiberSegment {
    /// Standard single-mode fiber of the given length.
    pub fn smf(length_m: f64) -> Self {
        Self {
            length_m,
            attenuation_db_per_km: SMF_ATTENUATION_DB_PER_KM,
            scatter_loss_db_per_km: SMF_SCATTER_LOSS_DB_PER_KM,
            capture_fraction: SMF_CAPTURE_FRACTION,
            group_velocity: SMF_GROUP_VELOCITY,
            dispersion_ps_per_nm_km: SMF_DISPERSION,
        }
    }

    /// Idealized fiber with no propagation loss but SMF scattering.
    pub fn lossless(length_m: f64) -> Self {
        Self {
            attenuation_db_per_km: 0.0,
            ..Self::smf(length_m)
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        let bad = |what: &str| Err(OtdrError::InvalidLink(format!("segment {index}: {what}")));
        if !(self.length_m > 0.0 && self.length_m.is_finite()) {
            return bad("length must be > 0");
        }
        if !(self.attenuation_db_per_km >= 0.0) {
            return bad("attenuation must be ≥ 0");
        }
        // zero attenuation marks an idealized lossless fiber that still scatters
        if !(self.scatter_loss_db_per_km >= 0.0)
            || (self.attenuation_db_per_km > 0.0
                && self.scatter_loss_db_per_km > self.attenuation_db_per_km)
        {
            return bad("scatter loss must lie in [0, attenuation]");
        }
        if !(self.capture_fraction > 0.0 && self.capture_fraction < 1.0) {
            return bad("capture fraction must lie in (0, 1)");
        }
        if !(self.group_velocity > 0.0 && self.group_velocity < SPEED_OF_LIGHT) {
            return bad("group velocity must lie in (0, c)");
        }
        if !self.dispersion_ps_per_nm_km.is_finite() {
            return bad("dispersion must be finite");
        }
        Ok(())
    }

    /// Rayleigh scattering coefficient in natural units, 1/m.
    pub fn scatter_coefficient(&self) -> f64 {
        self.scatter_loss_db_per_km * DB_TO_NEPER_POWER / 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectorKind {
    Connector,
    OpenEnd,
    Splice,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reflector {
    pub position_m: f64,
    pub reflectance: f64,
    pub kind: ReflectorKind,
    /// Lumped one-way loss applied to everything beyond the reflector.
    pub insertion_loss_db: f64,
}

impl Reflector {
    pub fn connector(position_m: f64) -> Self {
        Self {
            position_m,
            reflectance: CONNECTOR_REFLECTANCE,
            kind: ReflectorKind::Connector,
            insertion_loss_db: CONNECTOR_INSERTION_LOSS_DB,
        }
    }

    pub fn open_end(position_m: f64) -> Self {
        Self {
            position_m,
            reflectance: fresnel_reflectance(SILICA_INDEX),
            kind: ReflectorKind::OpenEnd,
            insertion_loss_db: 0.0,
        }
    }

    pub fn splice(position_m: f64) -> Self {
        Self {
            position_m,
            reflectance: SPLICE_REFLECTANCE,
            kind: ReflectorKind::Splice,
            insertion_loss_db: SPLICE_INSERTION_LOSS_DB,
        }
    }

    pub fn with_reflectance(mut self, reflectance: f64) -> Self {
        self.reflectance = reflectance;
        self
    }

    pub fn with_insertion_loss(mut self, loss_db: f64) -> Self {
        self.insertion_loss_db = loss_db;
        self
    }
}

/// Ordered fiber segments plus discrete reflectors sorted by position.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberLink {
    segments: Vec<FiberSegment>,
    reflectors: Vec<Reflector>,
}

/// A stretch of fiber with uniform coefficients and no reflector inside it.
/// Its cells tile the stretch exactly.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Run {
    pub start: f64,
    pub cells: usize,
    pub cell_length: f64,
    /// Rayleigh power of the first cell per watt launched.
    pub first_cell_power: f64,
    /// Natural log of the cell-to-cell round-trip power ratio.
    pub ln_ratio: f64,
    /// Round-trip delay at the run start.
    pub start_delay: f64,
    /// Round-trip delay across one cell.
    pub cell_delay: f64,
}

impl Run {
    pub fn cell_power(&self, i: usize) -> f64 {
        self.first_cell_power * (self.ln_ratio * i as f64).exp()
    }

    pub fn cell_center(&self, i: usize) -> f64 {
        self.start + (i as f64 + 0.5) * self.cell_length
    }
}

impl FiberLink {
    pub fn new(segments: Vec<FiberSegment>, mut reflectors: Vec<Reflector>) -> Result<Self> {
        if segments.is_empty() {
            return Err(OtdrError::InvalidLink("link has no segments".into()));
        }
        for (i, s) in segments.iter().enumerate() {
            s.validate(i)?;
        }
        let total: f64 = segments.iter().map(|s| s.length_m).sum();
        reflectors.sort_by(|a, b| a.position_m.total_cmp(&b.position_m));
        let mut open_ends = 0;
        for (i, r) in reflectors.iter().enumerate() {
            if !(r.position_m >= 0.0 && r.position_m <= total + POSITION_TOLERANCE) {
                return Err(OtdrError::InvalidLink(format!(
                    "reflector at {} m lies outside [0, {total}] m",
                    r.position_m
                )));
            }
            if !(r.reflectance > 0.0 && r.reflectance <= 1.0) {
                return Err(OtdrError::InvalidLink(format!(
                    "reflector at {} m: reflectance must lie in (0, 1]",
                    r.position_m
                )));
            }
            if !(r.insertion_loss_db >= 0.0) {
                return Err(OtdrError::InvalidLink(format!(
                    "reflector at {} m: insertion loss must be ≥ 0",
                    r.position_m
                )));
            }
            if i > 0 && r.position_m <= reflectors[i - 1].position_m {
                return Err(OtdrError::InvalidLink(format!(
                    "reflector positions must be strictly increasing (duplicate at {} m)",
                    r.position_m
                )));
            }
            if r.kind == ReflectorKind::OpenEnd {
                open_ends += 1;
                if (r.position_m - total).abs() > POSITION_TOLERANCE * total.max(1.0) {
                    return Err(OtdrError::InvalidLink(format!(
                        "open end at {} m must sit at the link end {total} m",
                        r.position_m
                    )));
                }
            }
        }
        if open_ends > 1 {
            return Err(OtdrError::InvalidLink("more than one open end".into()));
        }
        Ok(Self {
            segments,
            reflectors,
        })
    }

    pub fn segments(&self) -> &[FiberSegment] {
        &self.segments
    }

    pub fn reflectors(&self) -> &[Reflector] {
        &self.reflectors
    }

    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(|s| s.length_m).sum()
    }

    pub fn shortest_segment(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| s.length_m)
            .fold(f64::INFINITY, f64::min)
    }

    /// Round-trip group delay from the input to `z` and back.
    pub fn round_trip_delay(&self, z: f64) -> f64 {
        self.integrate(z, |s| 2.0 / s.group_velocity)
    }

    /// `2L/v_g` for the whole link.
    pub fn round_trip_time(&self) -> f64 {
        self.round_trip_delay(self.total_length())
    }

    /// Length-weighted group velocity, the single value used to map trace
    /// times back to positions.
    pub fn mean_group_velocity(&self) -> f64 {
        2.0 * self.total_length() / self.round_trip_time()
    }

    /// One-way loss in dB from the input to `z`: fiber attenuation plus the
    /// insertion losses of every reflector strictly before `z`.
    pub fn one_way_loss_db(&self, z: f64) -> f64 {
        let fiber = self.integrate(z, |s| s.attenuation_db_per_km / 1000.0);
        let lumped: f64 = self
            .reflectors
            .iter()
            .filter(|r| r.position_m < z)
            .map(|r| r.insertion_loss_db)
            .sum();
        fiber + lumped
    }

    /// Path-integrated chromatic dispersion up to `z`, ps/nm.
    pub fn accumulated_dispersion(&self, z: f64) -> f64 {
        self.integrate(z, |s| s.dispersion_ps_per_nm_km / 1000.0)
    }

    fn integrate(&self, z: f64, per_meter: impl Fn(&FiberSegment) -> f64) -> f64 {
        let mut acc = 0.0;
        let mut start = 0.0;
        for s in &self.segments {
            if z <= start {
                break;
            }
            let span = (z - start).min(s.length_m);
            acc += span * per_meter(s);
            start += s.length_m;
        }
        acc
    }

    fn segment_at(&self, z: f64) -> &FiberSegment {
        let mut start = 0.0;
        for s in &self.segments {
            if z < start + s.length_m {
                return s;
            }
            start += s.length_m;
        }
        self.segments.last().expect("non-empty")
    }

    /// Uniform runs between segment boundaries and reflector positions.
    pub(crate) fn runs(&self, dz: f64) -> Result<Vec<Run>> {
        self.check_grid_step(dz)?;
        let total = self.total_length();
        let mut cuts: Vec<f64> = vec![0.0];
        let mut acc = 0.0;
        for s in &self.segments {
            acc += s.length_m;
            cuts.push(acc.min(total));
        }
        for r in &self.reflectors {
            cuts.push(r.position_m.min(total));
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() <= POSITION_TOLERANCE);

        let mut runs = Vec::with_capacity(cuts.len());
        for w in cuts.windows(2) {
            let (start, end) = (w[0], w[1]);
            let length = end - start;
            if length <= POSITION_TOLERANCE {
                continue;
            }
            let seg = *self.segment_at(0.5 * (start + end));
            let cells = ((length / dz) - 1e-9).ceil().max(1.0) as usize;
            let cell_length = length / cells as f64;
            let first_center = start + 0.5 * cell_length;
            let loss_db = self.one_way_loss_db(first_center);
            let first_cell_power = seg.scatter_coefficient()
                * seg.capture_fraction
                * 10f64.powf(-2.0 * loss_db / 10.0)
                * cell_length;
            let ln_ratio =
                -2.0 * seg.attenuation_db_per_km / 1000.0 * cell_length * DB_TO_NEPER_POWER;
            runs.push(Run {
                start,
                cells,
                cell_length,
                first_cell_power,
                ln_ratio,
                start_delay: self.round_trip_delay(start),
                cell_delay: 2.0 * cell_length / seg.group_velocity,
            });
        }
        Ok(runs)
    }

    fn check_grid_step(&self, dz: f64) -> Result<()> {
        if !(dz > 0.0 && dz.is_finite()) {
            return Err(OtdrError::InvalidArgument(format!(
                "grid step dz must be > 0, got {dz}"
            )));
        }
        if dz > self.shortest_segment() {
            return Err(OtdrError::InvalidArgument(format!(
                "grid step dz = {dz} m exceeds the shortest segment ({} m)",
                self.shortest_segment()
            )));
        }
        Ok(())
    }

    /// Round-trip backscatter per grid cell and per reflector for a launch
    /// power, before any time-domain spreading by the pulse.
    pub fn impulse_profile(&self, launch_power: f64, dz: f64) -> Result<ImpulseProfile> {
        if !(launch_power >= 0.0) {
            return Err(OtdrError::InvalidArgument(
                "launch power must be ≥ 0".into(),
            ));
        }
        let runs = self.runs(dz)?;
        let cells: usize = runs.iter().map(|r| r.cells).sum();
        let mut positions = Vec::with_capacity(cells);
        let mut cell_lengths = Vec::with_capacity(cells);
        let mut rayleigh_power = Vec::with_capacity(cells);
        for run in &runs {
            for i in 0..run.cells {
                positions.push(run.cell_center(i));
                cell_lengths.push(run.cell_length);
                rayleigh_power.push(launch_power * run.cell_power(i));
            }
        }
        let fresnel_power = self
            .reflectors
            .iter()
            .map(|r| {
                let loss = self.one_way_loss_db(r.position_m);
                (
                    r.position_m,
                    launch_power * r.reflectance * 10f64.powf(-2.0 * loss / 10.0),
                )
            })
            .collect();
        Ok(ImpulseProfile {
            positions,
            cell_lengths,
            rayleigh_power,
            fresnel_power,
        })
    }

    /// Edge duration after propagating to `z` with the given source spectral
    /// width: `sqrt(edge² + (D_cum(z)·Δλ)²)`.
    pub fn broadened_edge(
        &self,
        edge_duration: f64,
        spectral_width_nm: f64,
        z: f64,
    ) -> Result<f64> {
        self.check_broadening_args(edge_duration, spectral_width_nm)?;
        if z > self.total_length() * (1.0 + 1e-12) || z < 0.0 {
            return Err(OtdrError::InvalidArgument(format!(
                "position {z} m outside the link"
            )));
        }
        let spread = self.accumulated_dispersion(z).abs() * 1e-12 * spectral_width_nm;
        Ok(edge_duration.hypot(spread))
    }

    /// Same as [`broadened_edge`](Self::broadened_edge) for light that travels
    /// to `z` and back, accumulating the dispersion twice.
    pub fn round_trip_broadened_edge(
        &self,
        edge_duration: f64,
        spectral_width_nm: f64,
        z: f64,
    ) -> Result<f64> {
        let one_way = self.broadened_edge(0.0, spectral_width_nm, z)?;
        Ok(edge_duration.hypot(2.0 * one_way))
    }

    fn check_broadening_args(&self, edge: f64, width: f64) -> Result<()> {
        if !(edge >= 0.0) {
            return Err(OtdrError::InvalidArgument(
                "edge duration must be ≥ 0".into(),
            ));
        }
        if !(width >= 0.0) {
            return Err(OtdrError::InvalidArgument(
                "spectral width must be ≥ 0".into(),
            ));
        }
        Ok(())
    }
}

/// Backscatter on the position grid. Rayleigh power is per cell (already
/// multiplied by the cell length); Fresnel power is per reflector.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseProfile {
    pub positions: Vec<f64>,
    pub cell_lengths: Vec<f64>,
    pub rayleigh_power: Vec<f64>,
    pub fresnel_power: Vec<(f64, f64)>,
}

impl ImpulseProfile {
    pub fn total_rayleigh(&self) -> f64 {
        self.rayleigh_power.iter().sum()
    }

    pub fn total_fresnel(&self) -> f64 {
        self.fresnel_power.iter().map(|(_, p)| p).sum()
    }

    pub fn total(&self) -> f64 {
        self.total_rayleigh() + self.total_fresnel()
    }
}
