use std::path::Path;

use anyhow::{anyhow, Result};
use plotters::prelude::*;

use scenerep_core::eval::EvaluationReport;
use scenerep_core::pipeline::{Phase, Trace};
use scenerep_core::synth::class_name;

const SIZE: (u32, u32) = (900, 540);

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Init => "init",
        Phase::Registration => "registration",
        Phase::Segmentation => "segmentation",
        Phase::Voting => "voting",
    }
}

/// One row per trace step: scene, step index, loop counters, the six
/// unweighted terms and the weighted total.
pub fn trace_csv(series: &[(String, Trace)]) -> String {
    let mut s = String::from("scene,step,outer,inner,phase,lambda6,active,e1,e2,e3,e4,e5,e6,total\n");
    for (name, trace) in series {
        for (k, st) in trace.steps.iter().enumerate() {
            s.push_str(&format!(
                "{name},{k},{},{},{},{:e},{}",
                st.outer,
                st.inner,
                phase_name(st.phase),
                st.lambda6,
                st.active
            ));
            for t in st.energy.terms {
                s.push_str(&format!(",{t:e}"));
            }
            s.push_str(&format!(",{:e}\n", st.energy.total));
        }
    }
    s
}

fn plot_err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow!("plotting failed: {e:?}")
}

/// Total energy per step, one line per scene, log scale.
pub fn energy_chart(series: &[(String, Trace)], path: &Path) -> Result<()> {
    let floor = 1e-12;
    let steps = series.iter().map(|(_, t)| t.steps.len()).max().unwrap_or(1).max(2);
    let values = series.iter().flat_map(|(_, t)| t.steps.iter().map(|s| s.energy.total.max(floor)));
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo / 2.0, hi * 2.0) } else { (0.1, 10.0) };

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Total energy per optimization step", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(0..steps - 1, (lo..hi).log_scale())
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("step").y_desc("energy").draw().map_err(plot_err)?;
    for (i, (name, trace)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(
                trace.steps.iter().enumerate().map(|(k, s)| (k, s.energy.total.max(floor))),
                color.stroke_width(2),
            ))
            .map_err(plot_err)?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Grouped precision, recall and F1 bars per class plus the two totals.
pub fn metrics_chart(report: &EvaluationReport, path: &Path) -> Result<()> {
    let mut groups: Vec<(String, [f64; 3])> = report
        .per_class
        .iter()
        .map(|(&c, m)| {
            let name = match class_name(c) {
                "unknown" => format!("class {c}"),
                n => n.to_string(),
            };
            (name, [m.precision, m.recall, m.f1])
        })
        .collect();
    for (name, m) in [("semantic", &report.semantic), ("geometric", &report.geometric)] {
        groups.push((name.to_string(), [m.precision, m.recall, m.f1]));
    }
    let labels: Vec<String> = groups.iter().map(|(n, _)| n.clone()).collect();

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Detection metrics", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..groups.len() as f64, 0.0..1.05)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(groups.len().max(1))
        .x_label_formatter(&|x| {
            let i = x.floor() as usize;
            labels.get(i).cloned().unwrap_or_default()
        })
        .y_desc("score")
        .draw()
        .map_err(plot_err)?;
    let colors = [BLUE, GREEN, RED];
    for (j, metric) in ["precision", "recall", "f1"].iter().enumerate() {
        let color = colors[j];
        chart
            .draw_series(groups.iter().enumerate().map(|(i, (_, vals))| {
                let x0 = i as f64 + 0.15 + 0.23 * j as f64;
                Rectangle::new([(x0, 0.0), (x0 + 0.2, vals[j])], color.filled())
            }))
            .map_err(plot_err)?
            .label(*metric)
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}
