//! Turning raw radar sweeps and gauge accumulations into model inputs.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::lattice::GridSpec;
use crate::model::{transform_obs, ObsValue, ObservationSet};

/// Reflectivity (dBZ) to rain rate (mm/h) by the Marshall–Palmer relation
/// `R = (10^{z/10} / 200)^{0.625}`, with `z ≤ 0` read as no rain.
pub fn z_to_rate(z: f64) -> f64 {
    if z > 0.0 {
        (10f64.powf(z / 10.0) / 200.0).powf(0.625)
    } else {
        0.0
    }
}

/// One raw radar return.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarRadarRecord {
    /// Observation time, from 1.
    pub time_index: usize,
    /// Degrees clockwise from north.
    pub azimuth_deg: f64,
    /// Bin number along the beam, from 1.
    pub range_bin: u32,
    pub z_dbz: f64,
}

/// Beam geometry relative to the model grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarGeometry {
    pub range_bin_m: f64,
    /// Radar position relative to the grid centre (east, north), metres.
    pub offset_m: (f64, f64),
}

impl Default for RadarGeometry {
    fn default() -> Self {
        Self {
            range_bin_m: 150.0,
            offset_m: (0.0, 0.0),
        }
    }
}

/// Rain rates on the lattice; `None` marks a cell with no return.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedRates {
    /// `rates[t][cell]`.
    pub rates: Vec<Vec<Option<f64>>>,
}

impl GriddedRates {
    pub fn times(&self) -> usize {
        self.rates.len()
    }
}

impl PolarRadarRecord {
    /// Cell containing the record, if it falls inside the domain.
    pub fn cell(&self, grid: &GridSpec, geometry: &RadarGeometry) -> Option<usize> {
        let r = f64::from(self.range_bin) * geometry.range_bin_m;
        let az = self.azimuth_deg.to_radians();
        let half = 0.5 * grid.extent();
        let x = r * az.sin() + geometry.offset_m.0 + half;
        let y = r * az.cos() + geometry.offset_m.1 + half;
        let extent = grid.extent();
        if !(0.0..extent).contains(&x) || !(0.0..extent).contains(&y) {
            return None;
        }
        let n = grid.n();
        let i = ((x / grid.cell_size()) as usize).min(n - 1);
        let j = ((y / grid.cell_size()) as usize).min(n - 1);
        Some(j * n + i)
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.time_index == 0 {
            return Err("time_index starts at 1".into());
        }
        if !(self.azimuth_deg >= 0.0 && self.azimuth_deg <= 360.0) {
            return Err(format!("azimuth {} outside [0, 360]", self.azimuth_deg));
        }
        if self.range_bin == 0 {
            return Err("range_bin starts at 1".into());
        }
        if !self.z_dbz.is_finite() {
            return Err(format!("reflectivity {} is not finite", self.z_dbz));
        }
        Ok(())
    }
}

/// Averages the rain rates of all returns falling in each cell at each
/// time. Cells with no return are missing; returns outside the domain are
/// dropped. `times` fixes the series length (otherwise the largest time
/// index seen). The result does not depend on record order.
pub fn ingest_radar_polar(
    records: &[PolarRadarRecord],
    grid: &GridSpec,
    geometry: &RadarGeometry,
    times: Option<usize>,
) -> Result<GriddedRates> {
    for (k, r) in records.iter().enumerate() {
        r.check()
            .map_err(|m| Error::DataGeneral(format!("radar record {}: {m}", k + 1)))?;
    }
    let times = resolve_times(times, records.iter().map(|r| r.time_index))?;
    let cells = grid.cells();

    let mut sorted: Vec<&PolarRadarRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        a.time_index
            .cmp(&b.time_index)
            .then(a.azimuth_deg.total_cmp(&b.azimuth_deg))
            .then(a.range_bin.cmp(&b.range_bin))
            .then(a.z_dbz.total_cmp(&b.z_dbz))
    });
    let mut sum = vec![vec![0.0; cells]; times];
    let mut count = vec![vec![0u32; cells]; times];
    for r in sorted {
        let Some(cell) = r.cell(grid, geometry) else { continue };
        let t = r.time_index - 1;
        sum[t][cell] += z_to_rate(r.z_dbz);
        count[t][cell] += 1;
    }
    let rates = sum
        .into_iter()
        .zip(count)
        .map(|(s, c)| {
            s.into_iter()
                .zip(c)
                .map(|(s, c)| (c > 0).then(|| s / f64::from(c)))
                .collect()
        })
        .collect();
    Ok(GriddedRates { rates })
}

fn resolve_times(times: Option<usize>, indices: impl Iterator<Item = usize>) -> Result<usize> {
    let seen = indices.max().unwrap_or(0);
    match times {
        Some(t) if seen > t => Err(Error::DataGeneral(format!(
            "time index {seen} beyond the configured {t} observation times"
        ))),
        Some(t) => Ok(t),
        None if seen == 0 => Err(Error::DataGeneral("no records to infer the time span from".into())),
        None => Ok(seen),
    }
}

/// One gauge accumulation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeRecord {
    /// Accumulation period, from 1, in units of the record interval.
    pub time_index: usize,
    pub gauge_id: String,
    pub accum_mm: f64,
}

/// Gauge location; `row` counts north and `col` east, both from 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GaugeMeta {
    pub gauge_id: String,
    pub row: usize,
    pub col: usize,
}

/// Gauge rain rates per observation time.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeSeries {
    pub ids: Vec<String>,
    pub cells: Vec<usize>,
    /// `rates[t][g]` in mm/h; `None` where no record covers the window.
    pub rates: Vec<Vec<Option<f64>>>,
}

impl GaugeSeries {
    /// No gauges over `times` observation times.
    pub fn empty(times: usize) -> Self {
        Self {
            ids: Vec::new(),
            cells: Vec::new(),
            rates: vec![Vec::new(); times],
        }
    }
}

/// Sums accumulations over each observation window and converts to mm/h
/// (`× 60 / obs_interval_min`). Each observation window must hold a whole
/// number of record periods.
pub fn ingest_gauges(
    records: &[GaugeRecord],
    meta: &[GaugeMeta],
    grid: &GridSpec,
    record_interval_min: f64,
    obs_interval_min: f64,
    times: Option<usize>,
) -> Result<GaugeSeries> {
    let ratio = obs_interval_min / record_interval_min;
    if !(ratio >= 1.0 && (ratio - ratio.round()).abs() < 1e-9) {
        return Err(Error::DataGeneral(format!(
            "observation interval {obs_interval_min} min is not a whole number of {record_interval_min} min gauge periods"
        )));
    }
    let per_window = ratio.round() as usize;

    let mut index = HashMap::new();
    let mut ids = Vec::with_capacity(meta.len());
    let mut cells = Vec::with_capacity(meta.len());
    for m in meta {
        let cell = grid
            .linear_index(m.col, m.row)
            .map_err(|e| Error::DataGeneral(format!("gauge {}: {e}", m.gauge_id)))?;
        if index.insert(m.gauge_id.clone(), ids.len()).is_some() {
            return Err(Error::DataGeneral(format!("gauge {} listed twice", m.gauge_id)));
        }
        ids.push(m.gauge_id.clone());
        cells.push(cell);
    }

    for (k, r) in records.iter().enumerate() {
        if r.time_index == 0 {
            return Err(Error::DataGeneral(format!("gauge record {}: time_index starts at 1", k + 1)));
        }
        if !(r.accum_mm >= 0.0 && r.accum_mm.is_finite()) {
            return Err(Error::DataGeneral(format!(
                "gauge record {}: accumulation {} must be finite and >= 0",
                k + 1,
                r.accum_mm
            )));
        }
        if !index.contains_key(&r.gauge_id) {
            return Err(Error::DataGeneral(format!(
                "gauge record {}: unknown gauge id {:?}",
                k + 1,
                r.gauge_id
            )));
        }
    }
    let times = resolve_times(
        times,
        records.iter().map(|r| r.time_index.div_ceil(per_window)),
    )?;

    let mut sorted: Vec<&GaugeRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        a.time_index
            .cmp(&b.time_index)
            .then(a.gauge_id.cmp(&b.gauge_id))
            .then(a.accum_mm.total_cmp(&b.accum_mm))
    });
    let mut sums: Vec<Vec<Option<f64>>> = vec![vec![None; ids.len()]; times];
    for r in sorted {
        let t = r.time_index.div_ceil(per_window) - 1;
        let g = index[&r.gauge_id];
        *sums[t][g].get_or_insert(0.0) += r.accum_mm;
    }
    let factor = 60.0 / obs_interval_min;
    let rates = sums
        .into_iter()
        .map(|row| row.into_iter().map(|s| s.map(|v| v * factor)).collect())
        .collect();
    Ok(GaugeSeries { ids, cells, rates })
}

fn to_obs(rate: Option<f64>) -> Result<ObsValue> {
    match rate {
        None => Ok(ObsValue::Missing),
        Some(r) => Ok(ObsValue::from_transformed(
            transform_obs(r).map_err(|e| Error::DataGeneral(e.to_string()))?,
        )),
    }
}

/// Applies `log(1 + rate)` and zero-censoring to gridded radar and gauge
/// rates.
pub fn observation_set(grid: &GridSpec, radar: &GriddedRates, gauges: &GaugeSeries) -> Result<ObservationSet> {
    if radar.times() != gauges.rates.len() {
        return Err(Error::DataGeneral(format!(
            "radar covers {} observation times, gauges {}",
            radar.times(),
            gauges.rates.len()
        )));
    }
    let radar_obs = radar
        .rates
        .iter()
        .map(|row| row.iter().map(|&r| to_obs(r)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let gauge_obs = gauges
        .rates
        .iter()
        .map(|row| row.iter().map(|&r| to_obs(r)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    ObservationSet::new(grid.cells(), radar_obs, gauges.ids.clone(), gauges.cells.clone(), gauge_obs)
        .map_err(|e| Error::DataGeneral(e.to_string()))
}
