//! Static SVG plots of traces.

use plotters::prelude::*;

use crate::error::{OtdrError, Result};
use crate::trace_analysis::TraceReport;
use crate::trace_processing::OtdrTrace;

const SIZE: (u32, u32) = (1200, 600);

fn plot_err<E: std::fmt::Display>(e: E) -> OtdrError {
    OtdrError::Io(std::io::Error::other(format!("plot: {e}")))
}

/// dB trace against position, with detected events and fitted segments
/// when a report is given. Returns the SVG document.
pub fn trace_svg(trace: &OtdrTrace, report: Option<&TraceReport>, title: &str) -> Result<String> {
    if trace.is_empty() {
        return Err(OtdrError::Analysis("no samples".into()));
    }
    let x0 = trace.positions[0];
    let x1 = trace.positions[trace.len() - 1].max(x0 + f64::EPSILON);
    let (lo, hi) = trace
        .db
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    let pad = ((hi - lo) * 0.05).max(0.5);
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(10)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(x0..x1, (lo - pad)..(hi + pad))
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("position (m)")
            .y_desc("level (dB)")
            .draw()
            .map_err(plot_err)?;
        chart
            .draw_series(LineSeries::new(
                trace.positions.iter().copied().zip(trace.db.iter().copied()),
                &BLUE,
            ))
            .map_err(plot_err)?
            .label("trace")
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLUE));
        if let Some(r) = report {
            for f in &r.fits {
                chart
                    .draw_series(LineSeries::new(
                        [(f.start, f.level_at(f.start)), (f.end, f.level_at(f.end))],
                        GREEN.stroke_width(2),
                    ))
                    .map_err(plot_err)?;
            }
            chart
                .draw_series(
                    r.events
                        .iter()
                        .map(|e| Circle::new((e.position, trace.db[e.index]), 4, RED.filled())),
                )
                .map_err(plot_err)?
                .label("events")
                .legend(|(x, y)| Circle::new((x + 10, y), 4, RED.filled()));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}
