use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};

use crate::data::{FlowSeries, Windows};
use crate::error::{Error, Result};

/// Point-of-interest categories per region, read from
/// `region_id,poi_categories` rows with `;`-separated categories.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegionInfo {
    pub poi: HashMap<usize, Vec<String>>,
}

impl RegionInfo {
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut poi = HashMap::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let id: usize = rec
                .get(0)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::format(path, format!("row {}: bad region id", i + 2)))?;
            let cats = rec
                .get(1)
                .unwrap_or("")
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
            poi.insert(id, cats);
        }
        Ok(RegionInfo { poi })
    }
}

const ADDITIONAL: &str = "To improve prediction accuracy, a spatio-temporal model is utilized to encode the historical taxi data as tokens <ST_HIS>, where the first and the second tokens correspond to the representations of taxi inflow and outflow. Please conduct an analysis of the traffic patterns in this region, taking into account the provided time and regional information, and then generate the predictive tokens for regression, in the form \"<ST_PRE>\".";

fn stamp(t: DateTime<Utc>) -> String {
    t.format("%B %-d, %Y, %H:%M, %A").to_string()
}

fn flow_list(
    series: &FlowSeries,
    region: usize,
    channel: usize,
    from: usize,
    len: usize,
) -> String {
    let vals: Vec<String> = (from..from + len)
        .map(|t| format!("{}", series.at(region, t, channel).round() as i64))
        .collect();
    format!("[{}]", vals.join(" "))
}

/// The instruction text for one region of one window.
pub fn render_prompt(
    series: &FlowSeries,
    windows: &Windows,
    start: usize,
    region: usize,
    city: &str,
    info: &RegionInfo,
) -> String {
    let (h_in, h_out) = (windows.spec.h_in, windows.spec.h_out);
    let every = format!(
        "with data points recorded at {}-minute intervals",
        series.interval_minutes()
    );
    let region_sentence = match info.poi.get(&region).filter(|c| !c.is_empty()) {
        Some(cats) => format!(
            "This region is located within the city of {city} and encompasses various POIs within a four-kilometer radius, covering {} categories.",
            cats.join(", ")
        ),
        None => format!("This region is located within the city of {city}; no POI information available."),
    };
    let mut s = String::new();
    let _ = write!(
        s,
        "Given the historical data for taxi flow over {h_in} time steps in a specific region of {city}, \
         the recorded taxi inflows are {}, and the recorded taxi outflows are {}. \
         The recording time of the historical data is '{} to {}, {every}'. \
         Here is the region information: {region_sentence} \
         Now we want to predict the taxi inflow and outflow for the next {h_out} time steps during the time period of '{} to {}, {every}'.",
        flow_list(series, region, 0, start, h_in),
        flow_list(series, region, 1, start, h_in),
        stamp(series.timestamp(start)),
        stamp(series.timestamp(start + h_in - 1)),
        stamp(series.timestamp(start + h_in)),
        stamp(series.timestamp(start + h_in + h_out - 1)),
    );
    s
}

/// Write `prompt_<window_start>.txt` for each window, one section per region.
pub fn export_instruction_prompts(
    series: &FlowSeries,
    windows: &Windows,
    info: &RegionInfo,
    city: &str,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if series.channel_count() != 2 {
        return Err(Error::Unsupported(format!(
            "instruction prompts need inflow and outflow channels, series has {}",
            series.channel_count()
        )));
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(windows.len());
    for &start in &windows.starts {
        let mut text = String::new();
        for region in 0..series.regions() {
            let _ = writeln!(text, "### Region {region}");
            let _ = writeln!(text, "Instructions:");
            let _ = writeln!(
                text,
                "{}",
                render_prompt(series, windows, start, region, city, info)
            );
            let _ = writeln!(text);
            let _ = writeln!(text, "Additional Information:");
            let _ = writeln!(text, "{ADDITIONAL}");
            let _ = writeln!(text);
        }
        let path = out_dir.join(format!("prompt_{start}.txt"));
        fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}
