use std::path::Path;

use intrinsic_core::losses::GeneratorTerms;
use intrinsic_core::trainer::StepRecord;
use plotters::prelude::*;

use crate::{CliError, Result};

const SMOOTHING: usize = 20;

/// Trailing moving average over at most `window` points.
pub(crate) fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// One panel per series in row-major order: the seven generator terms,
/// then the generator total and the discriminator loss. Raw values are
/// drawn in grey, the 20-step moving average in colour.
pub(crate) fn plot_losses(history: &[StepRecord], path: &Path) -> Result<()> {
    let mut series: Vec<Vec<f64>> = (0..GeneratorTerms::<f64>::NAMES.len())
        .map(|k| {
            history
                .iter()
                .map(|r| r.terms.generator.to_array()[k])
                .collect()
        })
        .collect();
    series.push(history.iter().map(|r| r.terms.generator_total).collect());
    series.push(history.iter().map(|r| r.terms.discriminator).collect());

    let err = |e: &dyn std::fmt::Display| CliError::Plot(format!("{}: {e}", path.display()));
    let root = BitMapBackend::new(path, (1200, 900)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let first = history.first().map_or(0, |r| r.step);
    let last = history.last().map_or(1, |r| r.step).max(first + 1);
    for (k, (area, values)) in root.split_evenly((3, 3)).iter().zip(&series).enumerate() {
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let (lo, hi) = if lo.is_finite() && hi > lo {
            (lo, hi)
        } else {
            (lo.min(0.0) - 1.0, hi.max(0.0) + 1.0)
        };
        let mut chart = ChartBuilder::on(area)
            .margin(12)
            .build_cartesian_2d(first as f64..last as f64, lo..hi)
            .map_err(|e| err(&e))?;
        chart
            .plotting_area()
            .draw(&Rectangle::new(
                [(first as f64, lo), (last as f64, hi)],
                ShapeStyle::from(&BLACK.mix(0.4)),
            ))
            .map_err(|e| err(&e))?;
        let steps = history.iter().map(|r| r.step as f64);
        chart
            .draw_series(LineSeries::new(
                steps.clone().zip(values.iter().copied()),
                &BLACK.mix(0.25),
            ))
            .map_err(|e| err(&e))?;
        chart
            .draw_series(LineSeries::new(
                steps.zip(moving_average(values, SMOOTHING)),
                &Palette99::pick(k),
            ))
            .map_err(|e| err(&e))?;
    }
    root.present().map_err(|e| err(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_uses_available_prefix() {
        let got = moving_average(&[1.0, 3.0, 5.0, 7.0], 2);
        assert_eq!(got, vec![1.0, 2.0, 4.0, 6.0]);
        assert_eq!(moving_average(&[2.0; 5], 20), vec![2.0; 5]);
    }
}
