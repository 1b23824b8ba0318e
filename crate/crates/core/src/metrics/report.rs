use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::whdr::DEFAULT_DELTA;
use super::{dssim, lmse, si_mse, synth_judgments, whdr};
use crate::imaging::{Image, SceneTriple};
use crate::networks::ModelBundle;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub lmse_window: usize,
    pub lmse_stride: usize,
    pub whdr_delta: f64,
    pub judgments_per_image: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            lmse_window: 20,
            lmse_stride: 10,
            whdr_delta: DEFAULT_DELTA,
            judgments_per_image: 500,
            seed: 0,
        }
    }
}

/// Metrics averaged over an evaluation set. `avg` columns are the arithmetic
/// mean of the reflectance and shading columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub mse_r: f64,
    pub mse_s: f64,
    pub mse_avg: f64,
    pub lmse_r: f64,
    pub lmse_s: f64,
    pub lmse_avg: f64,
    pub dssim_r: f64,
    pub dssim_s: f64,
    pub dssim_avg: f64,
    pub whdr: f64,
}

impl ReportRow {
    pub const COLUMNS: [&'static str; 10] = [
        "mse_r",
        "mse_s",
        "mse_avg",
        "lmse_r",
        "lmse_s",
        "lmse_avg",
        "dssim_r",
        "dssim_s",
        "dssim_avg",
        "whdr",
    ];

    pub fn values(&self) -> [f64; 10] {
        [
            self.mse_r,
            self.mse_s,
            self.mse_avg,
            self.lmse_r,
            self.lmse_s,
            self.lmse_avg,
            self.dssim_r,
            self.dssim_s,
            self.dssim_avg,
            self.whdr,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub num_images: usize,
    pub config: EvalConfig,
    pub rows: Vec<ReportRow>,
}

pub const MODEL_ROW: &str = "model";
pub const CONST_REFLECTANCE_ROW: &str = "baseline_const_reflectance";
pub const CONST_SHADING_ROW: &str = "baseline_const_shading";

impl Report {
    pub fn row(&self, method: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Fixed-width table, one row per method.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "evaluated images: {}", self.num_images);
        let _ = write!(out, "{:<28}", "method");
        for c in ReportRow::COLUMNS {
            let _ = write!(out, " {c:>12}");
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{:<28}", row.method);
            for v in row.values() {
                let _ = write!(out, " {v:>12.8}");
            }
            out.push('\n');
        }
        out
    }
}

/// Score predictions `(R, S)` against the ground truth of each triple.
pub fn evaluate_predictions(
    method: &str,
    triples: &[SceneTriple],
    predictions: &[(Image, Image)],
    cfg: &EvalConfig,
) -> Result<ReportRow> {
    if triples.is_empty() || triples.len() != predictions.len() {
        return Err(Error::Dimension(format!(
            "{} triples vs {} predictions",
            triples.len(),
            predictions.len()
        )));
    }
    let mut sums = [0.0f64; 7];
    for (i, (t, (r, s))) in triples.iter().zip(predictions).enumerate() {
        let judgments = synth_judgments(
            &t.reflectance,
            cfg.judgments_per_image,
            cfg.whdr_delta,
            cfg.seed.wrapping_add(i as u64),
        )?;
        let vals = [
            si_mse(r, &t.reflectance)?,
            si_mse(s, &t.shading)?,
            lmse(r, &t.reflectance, cfg.lmse_window, cfg.lmse_stride)?,
            lmse(s, &t.shading, cfg.lmse_window, cfg.lmse_stride)?,
            dssim(r, &t.reflectance)?,
            dssim(s, &t.shading)?,
            whdr(r, &judgments)?,
        ];
        for (acc, v) in sums.iter_mut().zip(vals) {
            *acc += v;
        }
    }
    let n = triples.len() as f64;
    let [mse_r, mse_s, lmse_r, lmse_s, dssim_r, dssim_s, whdr] = sums.map(|v| v / n);
    Ok(ReportRow {
        method: method.to_string(),
        mse_r,
        mse_s,
        mse_avg: (mse_r + mse_s) / 2.0,
        lmse_r,
        lmse_s,
        lmse_avg: (lmse_r + lmse_s) / 2.0,
        dssim_r,
        dssim_s,
        dssim_avg: (dssim_r + dssim_s) / 2.0,
        whdr,
    })
}

/// Constant reflectance 0.5 with the input luminance as shading.
pub fn const_reflectance_prediction(input: &Image) -> (Image, Image) {
    let r = Image::filled(input.height(), input.width(), 3, 0.5);
    (r, input.luminance())
}

/// Constant shading 0.5 with the input itself as reflectance.
pub fn const_shading_prediction(input: &Image) -> (Image, Image) {
    (
        input.clone(),
        Image::filled(input.height(), input.width(), 1, 0.5),
    )
}

/// Model row followed by the two constant baselines.
pub fn evaluate(bundle: &ModelBundle, triples: &[SceneTriple], cfg: &EvalConfig) -> Result<Report> {
    let inputs: Vec<Image> = triples.iter().map(|t| t.input.clone()).collect();
    let model = bundle.decompose_all(&inputs)?;
    let const_r: Vec<_> = inputs.iter().map(const_reflectance_prediction).collect();
    let const_s: Vec<_> = inputs.iter().map(const_shading_prediction).collect();
    Ok(Report {
        num_images: triples.len(),
        config: cfg.clone(),
        rows: vec![
            evaluate_predictions(MODEL_ROW, triples, &model, cfg)?,
            evaluate_predictions(CONST_REFLECTANCE_ROW, triples, &const_r, cfg)?,
            evaluate_predictions(CONST_SHADING_ROW, triples, &const_s, cfg)?,
        ],
    })
}
