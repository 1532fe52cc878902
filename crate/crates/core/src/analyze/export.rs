use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Analysis, AnalyzeError, Result};
use crate::collector::write_atomic;
use crate::fingerprint::Partition;

/// Genre color for stations without a genre label.
pub const UNKNOWN_COLOR: &str = "#9e9e9e";
const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#bcbd22", "#17becf", "#393b79"];

#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub station_id: String,
    pub x: f64,
    pub y: f64,
    pub genres: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotArchetype {
    pub partition: Partition,
    pub index: usize,
    pub x: f64,
    pub y: f64,
}

/// Everything the CSV and SVG outputs are made from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotData {
    pub points: Vec<PlotPoint>,
    pub archetypes: Vec<PlotArchetype>,
    pub scree: Vec<(usize, f64)>,
    pub trajectories: Vec<(String, Partition, f64, f64)>,
    /// `(archetype index, station_id, distance)` for the whole-day model.
    pub neighborhoods: Vec<(usize, String, f64)>,
}

impl From<&Analysis> for PlotData {
    fn from(a: &Analysis) -> Self {
        let points = a
            .station_ids
            .iter()
            .zip(&a.genres)
            .zip(a.projection.coords.rows())
            .map(|((id, genres), c)| PlotPoint { station_id: id.clone(), x: c[0], y: c[1], genres: genres.clone() })
            .collect();
        let mut archetypes = Vec::new();
        for i in 0..a.model.k() {
            let [x, y] = a.projection.project(a.model.archetypes.row(i));
            archetypes.push(PlotArchetype { partition: Partition::WholeDay, index: i, x, y });
        }
        for d in &a.daytime {
            for (i, row) in d.positions.rows().into_iter().enumerate() {
                archetypes.push(PlotArchetype { partition: d.partition, index: i, x: row[0], y: row[1] });
            }
        }
        let trajectories = a
            .trajectories
            .iter()
            .flat_map(|t| t.points.iter().map(move |(p, [x, y])| (t.station_id.clone(), *p, *x, *y)))
            .collect();
        let neighborhoods = a
            .neighborhoods
            .iter()
            .enumerate()
            .flat_map(|(i, hood)| hood.iter().map(move |(s, d)| (i, s.clone(), *d)))
            .collect();
        PlotData { points, archetypes, scree: a.scree.clone(), trajectories, neighborhoods }
    }
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| AnalyzeError::Csv(e.to_string()))?;
    for row in rows {
        w.write_record(&row).map_err(|e| AnalyzeError::Csv(e.to_string()))?;
    }
    w.into_inner().map_err(|e| AnalyzeError::Csv(e.to_string()))
}

/// Writes `pca_points.csv`, `archetypes.csv`, `scree.csv`,
/// `trajectories.csv`, `neighborhoods.csv` and `plot.svg` into `dir`.
/// Reals are written in shortest round-trip form.
pub fn export_plot_data(data: &PlotData, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let files = [
        (
            "pca_points.csv",
            csv_bytes(
                &["station_id", "x", "y", "genres"],
                data.points.iter().map(|p| vec![p.station_id.clone(), p.x.to_string(), p.y.to_string(), p.genres.join(";")]),
            )?,
        ),
        (
            "archetypes.csv",
            csv_bytes(
                &["partition", "index", "x", "y"],
                data.archetypes
                    .iter()
                    .map(|a| vec![a.partition.to_string(), a.index.to_string(), a.x.to_string(), a.y.to_string()]),
            )?,
        ),
        ("scree.csv", csv_bytes(&["k", "rss"], data.scree.iter().map(|(k, r)| vec![k.to_string(), r.to_string()]))?),
        (
            "trajectories.csv",
            csv_bytes(
                &["station_id", "partition", "x", "y"],
                data.trajectories.iter().map(|(s, p, x, y)| vec![s.clone(), p.to_string(), x.to_string(), y.to_string()]),
            )?,
        ),
        (
            "neighborhoods.csv",
            csv_bytes(
                &["archetype", "station_id", "distance"],
                data.neighborhoods.iter().map(|(i, s, d)| vec![i.to_string(), s.clone(), d.to_string()]),
            )?,
        ),
    ];
    for (name, bytes) in files {
        write_atomic(&dir.join(name), &bytes)?;
    }
    write_atomic(&dir.join("plot.svg"), render_svg(data).as_bytes())?;
    Ok(())
}

/// Reads `pca_points.csv` back.
pub fn read_pca_points(path: impl AsRef<Path>) -> Result<Vec<PlotPoint>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| AnalyzeError::Csv(e.to_string()))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| AnalyzeError::Csv(e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i).unwrap_or_default().parse().map_err(|e| AnalyzeError::Csv(format!("bad number: {e}")))
        };
        let genres = rec.get(3).unwrap_or_default();
        out.push(PlotPoint {
            station_id: rec.get(0).unwrap_or_default().to_string(),
            x: num(1)?,
            y: num(2)?,
            genres: if genres.is_empty() { Vec::new() } else { genres.split(';').map(str::to_string).collect() },
        });
    }
    Ok(out)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Scatter of the stations colored by first genre, with whole-day
/// archetypes as triangles.
pub fn render_svg(data: &PlotData) -> String {
    const W: f64 = 800.0;
    const H: f64 = 600.0;
    const PAD: f64 = 40.0;
    let genres: BTreeSet<&str> = data.points.iter().filter_map(|p| p.genres.first().map(String::as_str)).collect();
    let genres: Vec<&str> = genres.into_iter().collect();
    let color = |p: &PlotPoint| match p.genres.first() {
        Some(g) => PALETTE[genres.iter().position(|x| x == g).unwrap_or(0) % PALETTE.len()],
        None => UNKNOWN_COLOR,
    };
    let whole: Vec<&PlotArchetype> = data.archetypes.iter().filter(|a| a.partition == Partition::WholeDay).collect();
    let xs = data.points.iter().map(|p| p.x).chain(whole.iter().map(|a| a.x));
    let ys = data.points.iter().map(|p| p.y).chain(whole.iter().map(|a| a.y));
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let sx = |x: f64| PAD + (x - x0) / span(x0, x1) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / span(y0, y1) * (H - 2.0 * PAD);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for p in &data.points {
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{}"><title>{}</title></circle>"#,
            sx(p.x),
            sy(p.y),
            color(p),
            escape(&p.station_id)
        );
    }
    for a in whole {
        let (cx, cy) = (sx(a.x), sy(a.y));
        let _ = writeln!(
            svg,
            r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="black"><title>archetype {}</title></polygon>"#,
            cx,
            cy - 8.0,
            cx - 7.0,
            cy + 5.0,
            cx + 7.0,
            cy + 5.0,
            a.index
        );
    }
    let mut legend: Vec<(&str, &str)> = genres.iter().enumerate().map(|(i, g)| (*g, PALETTE[i % PALETTE.len()])).collect();
    if data.points.iter().any(|p| p.genres.is_empty()) {
        legend.push(("unknown", UNKNOWN_COLOR));
    }
    for (i, (g, c)) in legend.iter().enumerate() {
        let y = 16.0 + 14.0 * i as f64;
        let _ = writeln!(svg, r#"<rect x="8" y="{:.0}" width="10" height="10" fill="{c}"/>"#, y - 9.0);
        let _ = writeln!(svg, r#"<text x="22" y="{y:.0}" font-size="11" font-family="sans-serif">{}</text>"#, escape(g));
    }
    svg.push_str("</svg>\n");
    svg
}
