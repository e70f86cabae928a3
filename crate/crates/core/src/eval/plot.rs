use std::path::Path;

use plotters::prelude::*;

use super::Comparison;
use crate::error::{Error, Result};
use crate::question::SemanticType;

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Plot(e.to_string())
}

/// Grouped bar chart: one group per semantic type plus overall, one bar per
/// regime.
pub fn plot_comparison(comparison: &Comparison, path: &Path) -> Result<()> {
    let groups: Vec<&str> = SemanticType::ALL
        .iter()
        .map(|t| t.as_str())
        .chain(["overall"])
        .collect();
    let n = comparison.rows.len().max(1);
    let root = SVGBackend::new(path, (900, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Accuracy by semantic type", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(0f64..groups.len() as f64, 0f64..1f64)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(groups.len() * 2 + 1)
        .x_label_formatter(&|x| {
            let g = x.floor() as usize;
            if (x - g as f64 - 0.5).abs() < 1e-6 {
                groups.get(g).map(|s| s.to_string()).unwrap_or_default()
            } else {
                String::new()
            }
        })
        .y_desc("accuracy")
        .draw()
        .map_err(plot_err)?;
    let width = 0.8 / n as f64;
    for (k, row) in comparison.rows.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let values: Vec<f64> = row.per_type.iter().copied().chain([row.overall]).collect();
        chart
            .draw_series(values.iter().enumerate().map(|(g, &v)| {
                let x0 = g as f64 + 0.1 + k as f64 * width;
                Rectangle::new([(x0, 0.0), (x0 + width, v)], color.filled())
            }))
            .map_err(plot_err)?
            .label(row.regime.clone())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}
