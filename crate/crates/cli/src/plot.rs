//! SVG line plots of a scenario log. Plots are derived from the same series as
//! the CSV log and never feed back into it.

use std::path::Path;

use plotters::prelude::*;

use ftspe::sim::{EstimatorKind, ScenarioLog, TraceSample};

type Series = (EstimatorKind, Vec<(f64, f64)>);

fn color(kind: EstimatorKind) -> RGBColor {
    match kind {
        EstimatorKind::Fts => RGBColor(0, 90, 181),
        EstimatorKind::Vpe => RGBColor(220, 50, 32),
        EstimatorKind::DqMekf => RGBColor(0, 140, 60),
    }
}

fn series(log: &ScenarioLog, f: impl Fn(&TraceSample) -> f64) -> Vec<Series> {
    log.traces
        .iter()
        .map(|tr| (tr.kind, tr.samples.iter().map(|s| (s.t, f(s))).collect()))
        .collect()
}

fn panel<DB: DrawingBackend>(area: &DrawingArea<DB, plotters::coord::Shift>, title: &str, data: &[Series]) -> Result<(), String>
where
    DB::ErrorType: 'static,
{
    let t_max = data.iter().flat_map(|(_, s)| s.iter().map(|p| p.0)).fold(0.0, f64::max).max(1e-9);
    let y_max = data
        .iter()
        .flat_map(|(_, s)| s.iter().map(|p| p.1))
        .filter(|y| y.is_finite())
        .fold(0.0, f64::max)
        .max(1e-9)
        * 1.05;
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 16))
        .margin(8)
        .x_label_area_size(28)
        .y_label_area_size(48)
        .build_cartesian_2d(0.0..t_max, 0.0..y_max)
        .map_err(|e| e.to_string())?;
    chart
        .configure_mesh()
        .x_desc("t [s]")
        .draw()
        .map_err(|e| e.to_string())?;
    for (kind, pts) in data {
        let c = color(*kind);
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), c.stroke_width(2)))
            .map_err(|e| e.to_string())?
            .label(kind.label())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], c.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| e.to_string())?;
    Ok(())
}

/// Writes `<stem>-errors.svg` (φ, ‖χ‖) and `<stem>-velocity.svg` (‖ω‖, ‖υ‖ errors).
pub fn plot_log(log: &ScenarioLog, dir: &Path, stem: &str) -> Result<(), String> {
    let errors = dir.join(format!("{stem}-errors.svg"));
    let root = SVGBackend::new(&errors, (900, 640)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| e.to_string())?;
    let areas = root.split_evenly((2, 1));
    panel(&areas[0], "principal angle error φ [rad]", &series(log, |s| s.phi))?;
    panel(&areas[1], "position error ‖χ‖ [m]", &series(log, |s| s.chi_norm))?;
    root.present().map_err(|e| e.to_string())?;

    let velocity = dir.join(format!("{stem}-velocity.svg"));
    let root = SVGBackend::new(&velocity, (900, 640)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| e.to_string())?;
    let areas = root.split_evenly((2, 1));
    panel(&areas[0], "angular velocity error ‖ω‖ [rad/s]", &series(log, |s| s.omega_err.norm()))?;
    panel(&areas[1], "translational velocity error ‖υ‖ [m/s]", &series(log, |s| s.upsilon_err.norm()))?;
    root.present().map_err(|e| e.to_string())?;
    Ok(())
}
