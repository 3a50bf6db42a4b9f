use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, SecondsFormat, Utc};

use super::kv;
use crate::error::{Error, Result};
use crate::gradcore::Tensor;

/// Region × time × channel flow counts on a regular calendar grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSeries {
    values: Tensor<f32>,
    start_time: DateTime<Utc>,
    interval_minutes: u32,
    channels: Vec<String>,
}

impl FlowSeries {
    pub fn new(
        values: Tensor<f32>,
        start_time: DateTime<Utc>,
        interval_minutes: u32,
        channels: Vec<String>,
    ) -> Result<Self> {
        if values.ndim() != 3 {
            return Err(Error::contract(format!(
                "flow tensor must be N×T×C, got {:?}",
                values.shape()
            )));
        }
        if interval_minutes == 0 || 1440 % interval_minutes != 0 {
            return Err(Error::contract(format!(
                "interval of {interval_minutes} minutes does not divide a day"
            )));
        }
        if channels.len() != values.shape()[2] {
            return Err(Error::contract(format!(
                "{} channel names for {} channels",
                channels.len(),
                values.shape()[2]
            )));
        }
        if let Some(bad) = values
            .data()
            .iter()
            .find(|v| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::contract(format!(
                "flow values must be finite and ≥ 0, found {bad}"
            )));
        }
        Ok(FlowSeries {
            values,
            start_time,
            interval_minutes,
            channels,
        })
    }

    pub fn values(&self) -> &Tensor<f32> {
        &self.values
    }

    pub fn regions(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn timesteps(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn channel_count(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn start_time(&self) -> DateTime<Utc> {
        self.start_time
    }

    pub fn interval_minutes(&self) -> u32 {
        self.interval_minutes
    }

    #[inline]
    pub fn at(&self, region: usize, t: usize, channel: usize) -> f32 {
        let (tl, c) = (self.timesteps(), self.channel_count());
        self.values.data()[(region * tl + t) * c + channel]
    }

    pub fn timestamp(&self, t: usize) -> DateTime<Utc> {
        self.start_time + Duration::minutes(i64::from(self.interval_minutes) * t as i64)
    }
}

/// Contents of a dataset meta file.
#[derive(Debug, Clone, PartialEq)]
pub struct Meta {
    pub regions: usize,
    pub interval_minutes: u32,
    pub start_time: DateTime<Utc>,
    pub channels: Vec<String>,
    /// Series length; inferred from the latest row when absent.
    pub timesteps: Option<usize>,
    pub grid: Option<(usize, usize)>,
    pub adjacency_path: Option<PathBuf>,
    /// City name used in exported instruction prompts.
    pub city: Option<String>,
}

impl Meta {
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = kv::parse(text)?;
        let mut map: HashMap<String, String> = pairs.into_iter().collect();
        let mut take = |k: &str| map.remove(k);
        let need = |v: Option<String>, k: &str| {
            v.ok_or_else(|| Error::contract(format!("meta is missing `{k}`")))
        };
        let num = |v: String, k: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| Error::contract(format!("meta `{k}` is not a count: {v}")))
        };

        let regions = num(need(take("regions"), "regions")?, "regions")?;
        let interval_minutes = num(
            need(take("interval_minutes"), "interval_minutes")?,
            "interval_minutes",
        )? as u32;
        let start_raw = need(take("start_time"), "start_time")?;
        let start_time = parse_time(&start_raw)?;
        let channels = take("channels")
            .map(|c| {
                c.split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            })
            .unwrap_or_else(|| vec!["inflow".to_string()]);
        let timesteps = take("timesteps").map(|v| num(v, "timesteps")).transpose()?;
        let grid = match (take("grid_rows"), take("grid_cols")) {
            (Some(r), Some(c)) => Some((num(r, "grid_rows")?, num(c, "grid_cols")?)),
            (None, None) => None,
            _ => return Err(Error::contract("meta needs both grid_rows and grid_cols")),
        };
        let adjacency_path = take("adjacency_path").map(PathBuf::from);
        let city = take("city");
        if let Some(unknown) = map.keys().next() {
            return Err(Error::contract(format!("unknown meta key `{unknown}`")));
        }
        if let Some((r, c)) = grid {
            if r * c != regions {
                return Err(Error::contract(format!(
                    "grid {r}×{c} does not cover {regions} regions"
                )));
            }
        }
        Ok(Meta {
            regions,
            interval_minutes,
            start_time,
            channels,
            timesteps,
            grid,
            adjacency_path,
            city,
        })
    }

    pub fn render(&self) -> String {
        let mut pairs = vec![
            ("regions", self.regions.to_string()),
            ("interval_minutes", self.interval_minutes.to_string()),
            (
                "start_time",
                self.start_time.to_rfc3339_opts(SecondsFormat::Secs, true),
            ),
            ("channels", self.channels.join(",")),
        ];
        if let Some(t) = self.timesteps {
            pairs.push(("timesteps", t.to_string()));
        }
        if let Some((r, c)) = self.grid {
            pairs.push(("grid_rows", r.to_string()));
            pairs.push(("grid_cols", c.to_string()));
        }
        if let Some(p) = &self.adjacency_path {
            pairs.push(("adjacency_path", p.display().to_string()));
        }
        if let Some(city) = &self.city {
            pairs.push(("city", city.clone()));
        }
        kv::render(pairs)
    }
}

pub fn parse_time(s: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::Ingest(format!("bad RFC 3339 timestamp `{s}`: {e}")))
}

/// A dense series plus what ingestion had to repair or discard.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub series: FlowSeries,
    pub missing_cells: usize,
    pub rejected_rows: usize,
}

/// Read `region_id,timestamp,<channel>...` rows into a dense series.
///
/// Missing (region, interval) cells become 0 and are counted; rows outside
/// `[start, start + T·interval)` are dropped and counted. Unknown regions,
/// timestamps off the interval grid and conflicting duplicates are errors.
pub fn ingest_csv(path: &Path, meta: &Meta) -> Result<Ingested> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    if header.len() < 3 || &header[0] != "region_id" || &header[1] != "timestamp" {
        return Err(Error::Ingest(format!(
            "{}: header must start with region_id,timestamp",
            path.display()
        )));
    }
    let channels: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    if channels.len() != meta.channels.len() {
        return Err(Error::Ingest(format!(
            "{}: {} flow columns but meta declares {}",
            path.display(),
            channels.len(),
            meta.channels.len()
        )));
    }

    let step_secs = i64::from(meta.interval_minutes) * 60;
    if step_secs == 0 {
        return Err(Error::contract("interval_minutes must be positive"));
    }
    let n = meta.regions;
    let c = channels.len();

    let mut rows: Vec<(usize, i64, Vec<f32>)> = Vec::new();
    let mut rejected = 0usize;
    for (lineno, record) in reader.records().enumerate() {
        let record = record?;
        let line = lineno + 2;
        let region: usize = record[0]
            .parse()
            .map_err(|_| Error::Ingest(format!("line {line}: bad region id `{}`", &record[0])))?;
        if region >= n {
            return Err(Error::Ingest(format!(
                "line {line}: unknown region id {region} (regions are 0..{})",
                n.saturating_sub(1)
            )));
        }
        let ts = parse_time(&record[1])?;
        let offset = (ts - meta.start_time).num_seconds();
        if offset.rem_euclid(step_secs) != 0 {
            return Err(Error::Ingest(format!(
                "line {line}: timestamp {} is not on the {}-minute grid",
                &record[1], meta.interval_minutes
            )));
        }
        if offset < 0 {
            rejected += 1;
            continue;
        }
        let mut flows = Vec::with_capacity(c);
        for field in record.iter().skip(2) {
            let v: f32 = field
                .parse()
                .map_err(|_| Error::Ingest(format!("line {line}: bad flow value `{field}`")))?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Ingest(format!("line {line}: flow {v} must be ≥ 0")));
            }
            flows.push(v);
        }
        if flows.len() != c {
            return Err(Error::Ingest(format!(
                "line {line}: expected {c} flow values"
            )));
        }
        rows.push((region, offset / step_secs, flows));
    }

    let t_len = match meta.timesteps {
        Some(t) => t,
        None => rows.iter().map(|r| r.1 as usize + 1).max().unwrap_or(0),
    };
    if t_len == 0 {
        return Err(Error::Ingest(format!(
            "{}: no rows in range",
            path.display()
        )));
    }

    let mut data = vec![0.0f32; n * t_len * c];
    let mut seen = vec![false; n * t_len];
    for (region, t, flows) in rows {
        let t = t as usize;
        if t >= t_len {
            rejected += 1;
            continue;
        }
        let cell = region * t_len + t;
        let slot = &mut data[cell * c..(cell + 1) * c];
        if seen[cell] {
            if slot != flows.as_slice() {
                return Err(Error::Ingest(format!(
                    "conflicting duplicate rows for region {region} at step {t}"
                )));
            }
            continue;
        }
        seen[cell] = true;
        slot.copy_from_slice(&flows);
    }
    let missing_cells = seen.iter().filter(|s| !**s).count();
    let series = FlowSeries::new(
        Tensor::new(vec![n, t_len, c], data)?,
        meta.start_time,
        meta.interval_minutes,
        channels,
    )?;
    Ok(Ingested {
        series,
        missing_cells,
        rejected_rows: rejected,
    })
}

/// Write the series as `region_id,timestamp,<channels>` rows.
pub fn write_csv(series: &FlowSeries, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["region_id".to_string(), "timestamp".to_string()];
    header.extend(series.channels().iter().cloned());
    w.write_record(&header)?;
    for r in 0..series.regions() {
        for t in 0..series.timesteps() {
            let mut rec = vec![
                r.to_string(),
                series
                    .timestamp(t)
                    .to_rfc3339_opts(SecondsFormat::Secs, true),
            ];
            for ch in 0..series.channel_count() {
                rec.push(series.at(r, t, ch).to_string());
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a dense N×N adjacency matrix from CSV (no header).
pub fn read_adjacency(path: &Path, n: usize) -> Result<Vec<f32>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::with_capacity(n * n);
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let row: Vec<f32> = line
            .split(',')
            .map(|f| f.trim().parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path, format!("row {i}: {e}")))?;
        if row.len() != n {
            return Err(Error::format(
                path,
                format!("row {i} has {} columns, expected {n}", row.len()),
            ));
        }
        out.extend(row);
    }
    if out.len() != n * n {
        return Err(Error::format(path, format!("expected {n} rows")));
    }
    Ok(out)
}
