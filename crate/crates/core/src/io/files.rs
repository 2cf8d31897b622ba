//! CSV readers and writers for the command-line file formats.
//!
//! Every file has one header row. Floats are written with 17 significant
//! digits so values survive a write/read round trip exactly. Rows and
//! columns are 1-based, rows counting north and columns east.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use csv::StringRecord;

use crate::analysis::{CellSummary, DicResult, ForecastSet, StateSummary};
use crate::error::{Error, Result};
use crate::gibbs::{DrawStore, TerminalDraw};
use crate::lattice::{GridSpec, Velocity};
use crate::model::{StateVector, StaticParams};

use super::ingest::{GaugeMeta, GaugeRecord, GaugeSeries, GriddedRates, PolarRadarRecord};

/// Round-trip float formatting.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

struct Reader {
    name: String,
    inner: csv::Reader<File>,
}

impl Reader {
    fn open(path: &Path, expected: &[&str]) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut inner = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let name = path.display().to_string();
        let headers = inner.headers().map_err(|e| Error::Data {
            file: name.clone(),
            line: 1,
            message: e.to_string(),
        })?;
        let got: Vec<&str> = headers.iter().collect();
        if got.len() < expected.len() || got[..expected.len()] != *expected {
            return Err(Error::Data {
                file: name,
                line: 1,
                message: format!("expected header {}, got {}", expected.join(","), got.join(",")),
            });
        }
        Ok(Self { name, inner })
    }

    fn header_len(&mut self) -> usize {
        self.inner.headers().map_or(0, |h| h.len())
    }

    /// Calls `f` on each record with its line number.
    fn for_each(&mut self, mut f: impl FnMut(&StringRecord, usize) -> std::result::Result<(), String>) -> Result<()> {
        let mut record = StringRecord::new();
        loop {
            let line = self.inner.position().line() as usize;
            match self.inner.read_record(&mut record) {
                Ok(false) => return Ok(()),
                Ok(true) => {
                    let line = record.position().map_or(line, |p| p.line() as usize);
                    f(&record, line).map_err(|message| Error::Data {
                        file: self.name.clone(),
                        line,
                        message,
                    })?;
                }
                Err(e) => {
                    return Err(Error::Data {
                        file: self.name.clone(),
                        line,
                        message: e.to_string(),
                    })
                }
            }
        }
    }
}

fn field<T: std::str::FromStr>(r: &StringRecord, i: usize, name: &str) -> std::result::Result<T, String> {
    let raw = r.get(i).ok_or_else(|| format!("missing column {name}"))?;
    raw.parse().map_err(|_| format!("cannot parse {name} from {raw:?}"))
}

fn cell_of(grid: &GridSpec, row: usize, col: usize) -> std::result::Result<usize, String> {
    grid.linear_index(col, row).map_err(|e| e.to_string())
}

struct Writer {
    path: String,
    out: csv::Writer<BufWriter<File>>,
}

impl Writer {
    fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Self {
            path: path.display().to_string(),
            out: csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(BufWriter::new(file)),
        };
        w.row(header)?;
        Ok(w)
    }

    fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.out.write_record(fields).map_err(|e| self.error(e.to_string()))
    }

    fn error(&self, message: String) -> Error {
        Error::io(&self.path, std::io::Error::other(message))
    }

    fn finish(self) -> Result<()> {
        let path = self.path.clone();
        let mut inner = self
            .out
            .into_inner()
            .map_err(|e| Error::io(&path, std::io::Error::other(e.to_string())))?;
        inner.flush().map_err(|e| Error::io(&path, e))
    }
}

pub fn read_radar_polar(path: &Path) -> Result<Vec<PolarRadarRecord>> {
    let mut r = Reader::open(path, &["time_index", "azimuth_deg", "range_bin", "z_dbz"])?;
    let mut out = Vec::new();
    r.for_each(|rec, _| {
        out.push(PolarRadarRecord {
            time_index: field(rec, 0, "time_index")?,
            azimuth_deg: field(rec, 1, "azimuth_deg")?,
            range_bin: field(rec, 2, "range_bin")?,
            z_dbz: field(rec, 3, "z_dbz")?,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn write_radar_polar(path: &Path, records: &[PolarRadarRecord]) -> Result<()> {
    let mut w = Writer::create(path, &["time_index", "azimuth_deg", "range_bin", "z_dbz"])?;
    for r in records {
        w.row([
            r.time_index.to_string(),
            fmt_f64(r.azimuth_deg),
            r.range_bin.to_string(),
            fmt_f64(r.z_dbz),
        ])?;
    }
    w.finish()
}

/// Reads `time_index,row,col,rate_mm_h[,missing]`. Cells not listed, or
/// flagged missing, are missing.
pub fn read_radar_grid(path: &Path, grid: &GridSpec, times: Option<usize>) -> Result<GriddedRates> {
    let mut r = Reader::open(path, &["time_index", "row", "col", "rate_mm_h"])?;
    let with_flag = r.header_len() > 4;
    let mut entries = Vec::new();
    r.for_each(|rec, line| {
        let t: usize = field(rec, 0, "time_index")?;
        if t == 0 {
            return Err("time_index starts at 1".into());
        }
        if let Some(limit) = times {
            if t > limit {
                return Err(format!("time_index {t} beyond the configured {limit} observation times"));
            }
        }
        let cell = cell_of(grid, field(rec, 1, "row")?, field(rec, 2, "col")?)?;
        let missing = with_flag && field::<u8>(rec, 4, "missing")? != 0;
        let rate = if missing {
            None
        } else {
            let v: f64 = field(rec, 3, "rate_mm_h")?;
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("rate {v} must be finite and >= 0"));
            }
            Some(v)
        };
        entries.push((t - 1, cell, rate, line));
        Ok(())
    })?;
    let span = entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
    let times = times.unwrap_or(span);
    let mut rates = vec![vec![None; grid.cells()]; times];
    let mut seen = vec![vec![false; grid.cells()]; times];
    for (t, cell, rate, line) in entries {
        if std::mem::replace(&mut seen[t][cell], true) {
            return Err(Error::Data {
                file: path.display().to_string(),
                line,
                message: "cell listed twice for the same time".into(),
            });
        }
        rates[t][cell] = rate;
    }
    Ok(GriddedRates { rates })
}

/// Writes every cell at every time, with an explicit missing flag.
pub fn write_radar_grid(path: &Path, grid: &GridSpec, radar: &GriddedRates) -> Result<()> {
    let mut w = Writer::create(path, &["time_index", "row", "col", "rate_mm_h", "missing"])?;
    let n = grid.n();
    for (t, row) in radar.rates.iter().enumerate() {
        for (cell, rate) in row.iter().enumerate() {
            let (rate, flag) = match rate {
                Some(v) => (fmt_f64(*v), "0"),
                None => (String::new(), "1"),
            };
            w.row([
                (t + 1).to_string(),
                (cell / n + 1).to_string(),
                (cell % n + 1).to_string(),
                rate,
                flag.to_string(),
            ])?;
        }
    }
    w.finish()
}

pub fn read_gauges(path: &Path) -> Result<Vec<GaugeRecord>> {
    let mut r = Reader::open(path, &["time_index", "gauge_id", "accum_mm"])?;
    let mut out = Vec::new();
    r.for_each(|rec, _| {
        out.push(GaugeRecord {
            time_index: field(rec, 0, "time_index")?,
            gauge_id: field(rec, 1, "gauge_id")?,
            accum_mm: field(rec, 2, "accum_mm")?,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn write_gauges(path: &Path, records: &[GaugeRecord]) -> Result<()> {
    let mut w = Writer::create(path, &["time_index", "gauge_id", "accum_mm"])?;
    for r in records {
        w.row([r.time_index.to_string(), r.gauge_id.clone(), fmt_f64(r.accum_mm)])?;
    }
    w.finish()
}

pub fn read_gauge_meta(path: &Path) -> Result<Vec<GaugeMeta>> {
    let mut r = Reader::open(path, &["gauge_id", "row", "col"])?;
    let mut out = Vec::new();
    r.for_each(|rec, _| {
        out.push(GaugeMeta {
            gauge_id: field(rec, 0, "gauge_id")?,
            row: field(rec, 1, "row")?,
            col: field(rec, 2, "col")?,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn write_gauge_meta(path: &Path, meta: &[GaugeMeta]) -> Result<()> {
    let mut w = Writer::create(path, &["gauge_id", "row", "col"])?;
    for m in meta {
        w.row([m.gauge_id.clone(), m.row.to_string(), m.col.to_string()])?;
    }
    w.finish()
}

/// Gauge metadata for a gauge series on `grid`.
pub fn gauge_meta_of(grid: &GridSpec, series: &GaugeSeries) -> Vec<GaugeMeta> {
    let n = grid.n();
    series
        .ids
        .iter()
        .zip(&series.cells)
        .map(|(id, &cell)| GaugeMeta {
            gauge_id: id.clone(),
            row: cell / n + 1,
            col: cell % n + 1,
        })
        .collect()
}

/// Reads `time_index,gauge_id,rate_mm_h[,missing]` against known gauges.
pub fn read_gauge_rates(path: &Path, grid: &GridSpec, meta: &[GaugeMeta], times: usize) -> Result<GaugeSeries> {
    let ids: Vec<String> = meta.iter().map(|m| m.gauge_id.clone()).collect();
    let cells = meta
        .iter()
        .map(|m| grid.linear_index(m.col, m.row))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::DataGeneral(format!("gauge metadata: {e}")))?;
    let mut r = Reader::open(path, &["time_index", "gauge_id", "rate_mm_h"])?;
    let with_flag = r.header_len() > 3;
    let mut rates = vec![vec![None; ids.len()]; times];
    let mut seen = vec![vec![false; ids.len()]; times];
    r.for_each(|rec, _| {
        let t: usize = field(rec, 0, "time_index")?;
        if t == 0 || t > times {
            return Err(format!("time_index {t} outside 1..={times}"));
        }
        let id: String = field(rec, 1, "gauge_id")?;
        let g = ids
            .iter()
            .position(|x| *x == id)
            .ok_or_else(|| format!("unknown gauge id {id:?}"))?;
        if std::mem::replace(&mut seen[t - 1][g], true) {
            return Err(format!("gauge {id} listed twice for time {t}"));
        }
        let missing = with_flag && field::<u8>(rec, 3, "missing")? != 0;
        if !missing {
            let v: f64 = field(rec, 2, "rate_mm_h")?;
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("rate {v} must be finite and >= 0"));
            }
            rates[t - 1][g] = Some(v);
        }
        Ok(())
    })?;
    Ok(GaugeSeries { ids, cells, rates })
}

pub fn write_gauge_rates(path: &Path, series: &GaugeSeries) -> Result<()> {
    let mut w = Writer::create(path, &["time_index", "gauge_id", "rate_mm_h", "missing"])?;
    for (t, row) in series.rates.iter().enumerate() {
        for (g, rate) in row.iter().enumerate() {
            let (rate, flag) = match rate {
                Some(v) => (fmt_f64(*v), "0"),
                None => (String::new(), "1"),
            };
            w.row([(t + 1).to_string(), series.ids[g].clone(), rate, flag.to_string()])?;
        }
    }
    w.finish()
}

/// `name,value` for the static parameters used to simulate.
pub fn write_truth_params(path: &Path, p: &StaticParams) -> Result<()> {
    let mut w = Writer::create(path, &["name", "value"])?;
    for (name, v) in [("mu", p.mu), ("mu_r", p.mu_r), ("alpha", p.alpha), ("beta", p.beta)] {
        w.row([name.to_string(), fmt_f64(v)])?;
    }
    w.finish()
}

/// `time_index,row,col,theta,source` for a state path at observation
/// times; `slices[k]` is the state at observation time `k + 1`.
pub fn write_truth_states(path: &Path, grid: &GridSpec, slices: &[&StateVector]) -> Result<()> {
    let mut w = Writer::create(path, &["time_index", "row", "col", "theta", "source"])?;
    let n = grid.n();
    for (k, x) in slices.iter().enumerate() {
        for (cell, (th, s)) in x.theta().iter().zip(x.source()).enumerate() {
            w.row([
                (k + 1).to_string(),
                (cell / n + 1).to_string(),
                (cell % n + 1).to_string(),
                fmt_f64(*th),
                fmt_f64(*s),
            ])?;
        }
    }
    w.finish()
}

/// `step,nu_x,nu_y` over augmented steps from 0.
pub fn write_velocity_path(path: &Path, velocities: &[Velocity]) -> Result<()> {
    let mut w = Writer::create(path, &["step", "nu_x", "nu_y"])?;
    for (t, v) in velocities.iter().enumerate() {
        w.row([t.to_string(), fmt_f64(v.x), fmt_f64(v.y)])?;
    }
    w.finish()
}

/// Long-format traces: `iteration,name,value` for ρ, both log-likelihoods
/// and the velocity path.
pub fn write_traces(path: &Path, store: &DrawStore) -> Result<()> {
    let mut w = Writer::create(path, &["iteration", "name", "value"])?;
    for d in 0..store.len() {
        let it = (store.iterations[d] + 1).to_string();
        let p = store.params[d];
        for (name, v) in [
            ("mu", p.mu),
            ("mu_r", p.mu_r),
            ("alpha", p.alpha),
            ("beta", p.beta),
            ("loglik_obs", store.loglik_obs[d]),
            ("loglik_complete", store.loglik_complete[d]),
        ] {
            w.row([it.as_str(), name, &fmt_f64(v)])?;
        }
        for (t, nu) in store.velocities[d].iter().enumerate() {
            w.row([it.clone(), format!("nu_x[{t}]"), fmt_f64(nu.x)])?;
            w.row([it.clone(), format!("nu_y[{t}]"), fmt_f64(nu.y)])?;
        }
    }
    w.finish()
}

/// Reads one named series back out of a traces file, in file order.
pub fn read_trace(path: &Path, name: &str) -> Result<Vec<f64>> {
    let mut r = Reader::open(path, &["iteration", "name", "value"])?;
    let mut out = Vec::new();
    r.for_each(|rec, _| {
        if rec.get(1) == Some(name) {
            out.push(field(rec, 2, "value")?);
        }
        Ok(())
    })?;
    Ok(out)
}

pub fn write_state_summary(path: &Path, grid: &GridSpec, summary: &StateSummary) -> Result<()> {
    write_cell_summaries(path, grid, summary.obs_times, &summary.theta)
}

fn write_cell_summaries(path: &Path, grid: &GridSpec, times: usize, cells: &[CellSummary]) -> Result<()> {
    let mut w = Writer::create(path, &["time_index", "row", "col", "mean", "sd", "pr_positive"])?;
    let n = grid.n();
    let per = grid.cells();
    for t in 0..times {
        for cell in 0..per {
            let s = cells[t * per + cell];
            w.row([
                (t + 1).to_string(),
                (cell / n + 1).to_string(),
                (cell % n + 1).to_string(),
                fmt_f64(s.mean),
                fmt_f64(s.sd),
                fmt_f64(s.pr_positive),
            ])?;
        }
    }
    w.finish()
}

pub fn write_velocity_summary(path: &Path, summary: &StateSummary) -> Result<()> {
    let mut w = Writer::create(
        path,
        &["step", "mean_x", "mean_y", "lower_x", "lower_y", "upper_x", "upper_y"],
    )?;
    for (t, v) in summary.velocity.iter().enumerate() {
        w.row([
            t.to_string(),
            fmt_f64(v.mean[0]),
            fmt_f64(v.mean[1]),
            fmt_f64(v.lower[0]),
            fmt_f64(v.lower[1]),
            fmt_f64(v.upper[0]),
            fmt_f64(v.upper[1]),
        ])?;
    }
    w.finish()
}

const TERMINAL_PARAMS: [&str; 7] = ["draw_id", "mu", "mu_r", "alpha", "beta", "nu_x", "nu_y"];

/// One row per draw: ρ, `ν_{T̃}`, then `θ_{T̃}` and `S_{T̃}` by linear cell
/// index.
pub fn write_terminal_draws(path: &Path, draws: &[TerminalDraw]) -> Result<()> {
    let cells = draws.first().map_or(0, |d| d.state.cells());
    let mut header: Vec<String> = TERMINAL_PARAMS.iter().map(|s| s.to_string()).collect();
    header.extend((1..=cells).map(|i| format!("theta_{i}")));
    header.extend((1..=cells).map(|i| format!("source_{i}")));
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = Writer::create(path, &refs)?;
    for (k, d) in draws.iter().enumerate() {
        let p = d.params;
        let mut row = vec![(k + 1).to_string()];
        row.extend([p.mu, p.mu_r, p.alpha, p.beta, d.velocity.x, d.velocity.y].map(fmt_f64));
        row.extend(d.state.0.iter().map(|&v| fmt_f64(v)));
        w.row(row)?;
    }
    w.finish()
}

pub fn read_terminal_draws(path: &Path, cells: usize) -> Result<Vec<TerminalDraw>> {
    let mut r = Reader::open(path, &TERMINAL_PARAMS)?;
    let width = TERMINAL_PARAMS.len() + 2 * cells;
    if r.header_len() != width {
        return Err(Error::Data {
            file: path.display().to_string(),
            line: 1,
            message: format!("expected {width} columns for {cells} cells, found {}", r.header_len()),
        });
    }
    let mut out = Vec::new();
    r.for_each(|rec, _| {
        let v = |i: usize| field::<f64>(rec, i, TERMINAL_PARAMS.get(i).copied().unwrap_or("state"));
        let params = StaticParams {
            mu: v(1)?,
            mu_r: v(2)?,
            alpha: v(3)?,
            beta: v(4)?,
        };
        params.validate().map_err(|e| e.to_string())?;
        let state = (0..2 * cells).map(|i| v(7 + i)).collect::<std::result::Result<Vec<_>, _>>()?;
        out.push(TerminalDraw {
            params,
            state: StateVector(state),
            velocity: Velocity::new(v(5)?, v(6)?),
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn write_dic(path: &Path, result: &DicResult, draws: usize) -> Result<()> {
    let mut w = Writer::create(path, &["draws", "mean_deviance", "p_d", "dic"])?;
    w.row([
        draws.to_string(),
        fmt_f64(result.mean_deviance),
        fmt_f64(result.p_d),
        fmt_f64(result.dic),
    ])?;
    w.finish()
}

/// `draw_id,horizon_step,row,col,stat,value`: summaries under draw id
/// `summary`, then each kept path with stat `theta`.
pub fn write_forecast(path: &Path, grid: &GridSpec, set: &ForecastSet) -> Result<()> {
    let mut w = Writer::create(path, &["draw_id", "horizon_step", "row", "col", "stat", "value"])?;
    let n = grid.n();
    for s in &set.summaries {
        for (stat, values) in [
            ("mean", &s.mean),
            ("sd", &s.sd),
            ("pr_positive", &s.pr_positive),
            ("rate_mean", &s.rate_mean),
        ] {
            for (cell, &v) in values.iter().enumerate() {
                w.row([
                    "summary".to_string(),
                    s.step.to_string(),
                    (cell / n + 1).to_string(),
                    (cell % n + 1).to_string(),
                    stat.to_string(),
                    fmt_f64(v),
                ])?;
            }
        }
    }
    if let Some(paths) = &set.paths {
        for (d, path) in paths.iter().enumerate() {
            for (s, theta) in path.iter().enumerate() {
                for (cell, &v) in theta.iter().enumerate() {
                    w.row([
                        (d + 1).to_string(),
                        (s + 1).to_string(),
                        (cell / n + 1).to_string(),
                        (cell % n + 1).to_string(),
                        "theta".to_string(),
                        fmt_f64(v),
                    ])?;
                }
            }
        }
    }
    w.finish()
}
