//! SVG plots of CSV columns: traces as polylines, or points with error bars.

use std::path::PathBuf;

use clap::Args;
use moco_core::geometry::Rot3;

use super::{require_file, write_text};
use crate::error::{invalid, CliResult};
use crate::svg::{render, Plot, Series};

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// any CSV with a header row and numeric columns
    #[arg(long)]
    pub input: PathBuf,
    /// x column
    #[arg(long)]
    pub x: String,
    /// comma-separated y columns
    #[arg(long, value_delimiter = ',', required = true)]
    pub y: Vec<String>,
    /// comma-separated error-bar columns, one per y column; draws error bars instead of lines
    #[arg(long, value_delimiter = ',')]
    pub err: Vec<String>,
    #[arg(long, default_value = "")]
    pub title: String,
    #[arg(long)]
    pub y_label: Option<String>,
    /// SVG output
    #[arg(long, default_value = "plot.svg")]
    pub out: PathBuf,
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    fn read(path: &PathBuf) -> CliResult<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let row = rec?
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| invalid(format!("{} row {}: {e}", path.display(), i + 2))))
                .collect::<CliResult<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    fn column(&self, name: &str) -> CliResult<Vec<f64>> {
        let j = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| invalid(format!("no column '{name}' (have {})", self.header.join(","))))?;
        Ok(self.rows.iter().map(|r| r[j]).collect())
    }
}

pub fn run(args: &PlotArgs) -> CliResult<()> {
    require_file(&args.input)?;
    if !args.err.is_empty() && args.err.len() != args.y.len() {
        return Err(invalid("--err needs one column per --y column"));
    }
    let table = Table::read(&args.input)?;
    let x = table.column(&args.x)?;
    let series = args
        .y
        .iter()
        .enumerate()
        .map(|(i, name)| {
            Ok(Series {
                label: name.clone(),
                x: x.clone(),
                y: table.column(name)?,
                err: args.err.get(i).map(|e| table.column(e)).transpose()?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let plot = Plot {
        title: args.title.clone(),
        x_label: args.x.clone(),
        y_label: args.y_label.clone().unwrap_or_else(|| args.y.join(", ")),
        series,
    };
    write_text(&args.out, &render(&plot))
}

/// Axis-angle components of an orientation trace, degrees against seconds.
pub fn orientation_plot(trace: &[(f64, Rot3)]) -> String {
    let t: Vec<f64> = trace.iter().map(|(t, _)| *t).collect();
    let comp = |c: usize| trace.iter().map(|(_, r)| r.to_axis_angle()[c].to_degrees()).collect::<Vec<f64>>();
    render(&Plot {
        title: "head orientation".into(),
        x_label: "time (s)".into(),
        y_label: "axis-angle (deg)".into(),
        series: ["rx", "ry", "rz"]
            .iter()
            .enumerate()
            .map(|(c, l)| Series { label: (*l).into(), x: t.clone(), y: comp(c), err: None })
            .collect(),
    })
}
