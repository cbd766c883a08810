use plotters::prelude::*;

use crate::table::Table;

const SIZE: (u32, u32) = (800, 500);
const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    let pad = if hi > lo {
        0.05 * (hi - lo)
    } else {
        0.5 * lo.abs().max(1.0)
    };
    (lo - pad, hi + pad)
}

fn bounds<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    padded(lo, hi)
}

/// One polyline per column in `ys` against column `x`.
pub fn lines(title: &str, data: &Table, x: &str, ys: &[String]) -> Result<String, String> {
    let xs = data
        .column(x)
        .ok_or_else(|| format!("no numeric column '{x}'"))?;
    let series = ys
        .iter()
        .map(|name| {
            data.column(name)
                .map(|v| (name.clone(), v))
                .ok_or_else(|| format!("no numeric column '{name}'"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if series.is_empty() {
        return Err("nothing to plot".into());
    }
    let x_range = bounds(xs.iter());
    let y_range = bounds(series.iter().flat_map(|(_, v)| v.iter()));

    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(|e| e.to_string())?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(10)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(x_range.0..x_range.1, y_range.0..y_range.1)
            .map_err(|e| e.to_string())?;
        chart
            .configure_mesh()
            .x_desc(x)
            .draw()
            .map_err(|e| e.to_string())?;
        for (i, (name, values)) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let points = xs
                .iter()
                .zip(values)
                .filter(|(a, b)| a.is_finite() && b.is_finite())
                .map(|(&a, &b)| (a, b));
            chart
                .draw_series(LineSeries::new(points, &color))
                .map_err(|e| e.to_string())?
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| e.to_string())?;
        root.present().map_err(|e| e.to_string())?;
    }
    Ok(svg)
}

/// Density histogram of `samples` with the `N(0, target_variance)` density.
pub fn histogram(title: &str, samples: &[f64], target_variance: f64) -> Result<String, String> {
    let finite: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
    if finite.len() < 2 {
        return Err("need at least two finite samples".into());
    }
    let sd = target_variance.sqrt();
    let (lo, hi) = bounds(finite.iter().chain([-4.0 * sd, 4.0 * sd].iter()));
    let n_bins = ((finite.len() as f64).sqrt().ceil() as usize).clamp(5, 60);
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for x in &finite {
        let b = (((x - lo) / width) as usize).min(n_bins - 1);
        counts[b] += 1;
    }
    let scale = 1.0 / (finite.len() as f64 * width);
    let density = |x: f64| {
        (-0.5 * x * x / target_variance).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
    };
    let top = counts
        .iter()
        .map(|&c| c as f64 * scale)
        .fold(density(0.0), f64::max)
        * 1.1;

    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(|e| e.to_string())?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(10)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(lo..hi, 0.0..top)
            .map_err(|e| e.to_string())?;
        chart
            .configure_mesh()
            .x_desc("sqrtT_error")
            .y_desc("density")
            .draw()
            .map_err(|e| e.to_string())?;
        chart
            .draw_series(counts.iter().enumerate().map(|(i, &c)| {
                let x0 = lo + i as f64 * width;
                Rectangle::new(
                    [(x0, 0.0), (x0 + width, c as f64 * scale)],
                    PALETTE[0].mix(0.5).filled(),
                )
            }))
            .map_err(|e| e.to_string())?;
        let curve = (0..=200).map(|i| {
            let x = lo + (hi - lo) * i as f64 / 200.0;
            (x, density(x))
        });
        chart
            .draw_series(LineSeries::new(curve, &PALETTE[3]))
            .map_err(|e| e.to_string())?;
        root.present().map_err(|e| e.to_string())?;
    }
    Ok(svg)
}
