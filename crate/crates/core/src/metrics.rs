//! The seven-number depth evaluation: delta accuracies a1/a2/a3 and the
//! abs_rel, sq_rel, rms and log_rms errors, with clamping, optional median
//! scaling, aggregation and report formatting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Accuracy ratios and error statistics of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rms: f64,
    pub log_rms: f64,
}

/// Logarithm base for the log_rms metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    Natural,
    Ten,
}

/// Evaluation protocol knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub min_depth: f64,
    pub max_depth: f64,
    /// Rescale predictions by median(gt)/median(pred) before clamping.
    pub median_scaling: bool,
    pub log_base: LogBase,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            min_depth: 1e-3,
            max_depth: 80.0,
            median_scaling: false,
            log_base: LogBase::Natural,
        }
    }
}

/// Lower-middle median (deterministic for even counts).
fn lower_median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    sorted[(sorted.len() - 1) / 2]
}

/// Compute the seven metrics over pixels that are marked valid and have
/// positive ground truth. Prediction is optionally median-scaled, then
/// clamped to `[min_depth, max_depth]`.
pub fn compute_metrics(
    gt: &Grid,
    pred: &Grid,
    valid_mask: &Grid,
    cfg: &EvalConfig,
) -> Result<DepthMetrics> {
    if !(cfg.min_depth > 0.0 && cfg.min_depth < cfg.max_depth) {
        return Err(Error::precondition("need 0 < min_depth < max_depth"));
    }
    if gt.channels() != 1 || pred.channels() != 1 || valid_mask.channels() != 1 {
        return Err(Error::precondition("depth maps and mask must be single-channel"));
    }
    if !gt.same_shape(pred) || !gt.same_spatial(valid_mask) {
        return Err(Error::dims("gt, pred and mask must share dimensions"));
    }
    let n = gt.data().len();
    let mut gts = Vec::new();
    let mut preds = Vec::new();
    for i in 0..n {
        if valid_mask.data()[i] > 0.5 && gt.data()[i] > 0.0 {
            gts.push(gt.data()[i]);
            preds.push(pred.data()[i]);
        }
    }
    if gts.is_empty() {
        return Err(Error::precondition(
            "no valid pixels with positive ground truth",
        ));
    }
    if cfg.median_scaling {
        let scale = lower_median(&gts) / lower_median(&preds);
        for p in &mut preds {
            *p *= scale;
        }
    }
    for p in &mut preds {
        *p = p.clamp(cfg.min_depth, cfg.max_depth);
    }

    let count = gts.len() as f64;
    let (mut a1, mut a2, mut a3) = (0.0, 0.0, 0.0);
    let (mut abs_rel, mut sq_rel, mut sq, mut log_sq) = (0.0, 0.0, 0.0, 0.0);
    let log = |v: f64| match cfg.log_base {
        LogBase::Natural => v.ln(),
        LogBase::Ten => v.log10(),
    };
    for (&g, &p) in gts.iter().zip(&preds) {
        let delta = (g / p).max(p / g);
        if delta < 1.25 {
            a1 += 1.0;
        }
        if delta < 1.25f64.powi(2) {
            a2 += 1.0;
        }
        if delta < 1.25f64.powi(3) {
            a3 += 1.0;
        }
        let diff = g - p;
        abs_rel += diff.abs() / g;
        sq_rel += diff * diff / g;
        sq += diff * diff;
        let dl = log(g) - log(p);
        log_sq += dl * dl;
    }
    Ok(DepthMetrics {
        a1: a1 / count,
        a2: a2 / count,
        a3: a3 / count,
        abs_rel: abs_rel / count,
        sq_rel: sq_rel / count,
        rms: (sq / count).sqrt(),
        log_rms: (log_sq / count).sqrt(),
    })
}

/// Unweighted arithmetic mean of each field.
pub fn aggregate(per_image: &[DepthMetrics]) -> Result<DepthMetrics> {
    if per_image.is_empty() {
        return Err(Error::precondition("cannot aggregate an empty list"));
    }
    let n = per_image.len() as f64;
    let sum = |f: fn(&DepthMetrics) -> f64| per_image.iter().map(f).sum::<f64>() / n;
    Ok(DepthMetrics {
        a1: sum(|m| m.a1),
        a2: sum(|m| m.a2),
        a3: sum(|m| m.a3),
        abs_rel: sum(|m| m.abs_rel),
        sq_rel: sum(|m| m.sq_rel),
        rms: sum(|m| m.rms),
        log_rms: sum(|m| m.log_rms),
    })
}

/// Number formatting for the text table: four decimals with trailing zeros
/// trimmed (at least one decimal kept), so `0.877` and `0.9008` both render
/// as written.
fn fmt_cell(v: f64) -> String {
    let mut s = format!("{v:.4}");
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.push('0');
    }
    s
}

/// Render named metric rows as a text table plus a JSON document carrying
/// the same numbers at full precision. Columns: a1, a2, a3, abs_rel, rms,
/// log_rms, sq_rel.
pub fn format_report(rows: &[(String, DepthMetrics)]) -> Result<(String, serde_json::Value)> {
    if rows.is_empty() {
        return Err(Error::precondition("report needs at least one row"));
    }
    const COLS: [&str; 7] = ["a1", "a2", "a3", "abs_rel", "rms", "log_rms", "sq_rel"];
    let mut cells: Vec<Vec<String>> = Vec::with_capacity(rows.len());
    let mut json_rows = Vec::with_capacity(rows.len());
    for (name, m) in rows {
        let display = if name.is_empty() {
            "(unnamed)".to_string()
        } else {
            name.clone()
        };
        cells.push(vec![
            display.clone(),
            fmt_cell(m.a1),
            fmt_cell(m.a2),
            fmt_cell(m.a3),
            fmt_cell(m.abs_rel),
            fmt_cell(m.rms),
            fmt_cell(m.log_rms),
            fmt_cell(m.sq_rel),
        ]);
        json_rows.push(serde_json::json!({
            "name": display,
            "a1": m.a1, "a2": m.a2, "a3": m.a3,
            "abs_rel": m.abs_rel, "rms": m.rms,
            "log_rms": m.log_rms, "sq_rel": m.sq_rel,
        }));
    }
    let mut widths: Vec<usize> = std::iter::once("implementation".len())
        .chain(COLS.iter().map(|c| c.len()))
        .collect();
    for row in &cells {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut text = String::new();
    let header: Vec<String> = std::iter::once("implementation".to_string())
        .chain(COLS.iter().map(|c| c.to_string()))
        .collect();
    for (i, cell) in header.iter().enumerate() {
        text.push_str(&format!("{:<w$}  ", cell, w = widths[i]));
    }
    text.push('\n');
    for row in &cells {
        for (i, cell) in row.iter().enumerate() {
            text.push_str(&format!("{:<w$}  ", cell, w = widths[i]));
        }
        text.push('\n');
    }
    Ok((text, serde_json::Value::Array(json_rows)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ones_mask(w: usize, h: usize) -> Grid {
        Grid::filled(w, h, 1, 1.0).unwrap()
    }

    fn wide_cfg() -> EvalConfig {
        EvalConfig {
            min_depth: 1e-3,
            max_depth: 1e6,
            ..EvalConfig::default()
        }
    }

    #[test]
    fn identity_prediction_is_perfect() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = Grid::from_fn(6, 4, 1, |_, _, _| rng.random_range(1.0..50.0)).unwrap();
        let m = compute_metrics(&gt, &gt, &ones_mask(6, 4), &EvalConfig::default()).unwrap();
        assert_eq!((m.a1, m.a2, m.a3), (1.0, 1.0, 1.0));
        assert_eq!(
            (m.abs_rel, m.sq_rel, m.rms, m.log_rms),
            (0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn single_pixel_gt1_pred2_hand_values() {
        let gt = Grid::filled(1, 1, 1, 1.0).unwrap();
        let pred = Grid::filled(1, 1, 1, 2.0).unwrap();
        let m = compute_metrics(&gt, &pred, &ones_mask(1, 1), &wide_cfg()).unwrap();
        // delta = 2 exceeds 1.25^3 = 1.953125.
        assert_eq!((m.a1, m.a2, m.a3), (0.0, 0.0, 0.0));
        assert_abs_diff_eq!(m.abs_rel, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.sq_rel, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.rms, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.log_rms, std::f64::consts::LN_2, epsilon = 1e-12);
        let cfg10 = EvalConfig {
            log_base: LogBase::Ten,
            ..wide_cfg()
        };
        let m10 = compute_metrics(&gt, &pred, &ones_mask(1, 1), &cfg10).unwrap();
        assert_abs_diff_eq!(m10.log_rms, 2f64.log10(), epsilon = 1e-12);
        assert!((m10.log_rms - 0.301030).abs() < 1e-6);
    }

    #[test]
    fn median_scaling_aligns_scaled_prediction() {
        let gt = Grid::from_data(3, 1, 1, vec![2.0, 4.0, 6.0]).unwrap();
        let pred = Grid::from_data(3, 1, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let cfg = EvalConfig {
            median_scaling: true,
            ..wide_cfg()
        };
        let m = compute_metrics(&gt, &pred, &ones_mask(3, 1), &cfg).unwrap();
        assert_eq!(m.a1, 1.0);
        assert_abs_diff_eq!(m.abs_rel, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.rms, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn mask_and_zero_gt_pixels_excluded() {
        let gt = Grid::from_data(2, 2, 1, vec![1.0, 0.0, 3.0, 4.0]).unwrap();
        let pred = Grid::from_data(2, 2, 1, vec![1.0, 9.0, 3.0, 8.0]).unwrap();
        let mask = Grid::from_data(2, 2, 1, vec![1.0, 1.0, 1.0, 0.0]).unwrap();
        // Only pixels 0 and 2 count; both exact.
        let m = compute_metrics(&gt, &pred, &mask, &wide_cfg()).unwrap();
        assert_eq!(m.a1, 1.0);
        assert_eq!(m.rms, 0.0);
        let none = Grid::filled(2, 2, 1, 0.0).unwrap();
        assert!(compute_metrics(&gt, &pred, &none, &wide_cfg()).is_err());
    }

    #[test]
    fn clamping_applies_to_prediction() {
        let gt = Grid::filled(1, 1, 1, 50.0).unwrap();
        let pred = Grid::filled(1, 1, 1, 500.0).unwrap();
        let m = compute_metrics(&gt, &pred, &ones_mask(1, 1), &EvalConfig::default()).unwrap();
        // pred clamps to 80, so rms = 30.
        assert_abs_diff_eq!(m.rms, 30.0, epsilon = 1e-12);
    }

    #[test]
    fn aggregate_means_and_errors() {
        let a = DepthMetrics {
            a1: 0.5,
            a2: 0.6,
            a3: 0.7,
            abs_rel: 0.1,
            sq_rel: 0.2,
            rms: 2.0,
            log_rms: 0.3,
        };
        let b = DepthMetrics { rms: 4.0, ..a };
        let agg = aggregate(&[a, b]).unwrap();
        assert_abs_diff_eq!(agg.rms, 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(agg.a1, 0.5, epsilon = 1e-15);
        assert_eq!(aggregate(&[a]).unwrap(), a);
        assert!(aggregate(&[]).is_err());
        assert!(agg.a1 <= agg.a2 && agg.a2 <= agg.a3);
    }

    #[test]
    fn report_renders_reference_row_literals() {
        let row = DepthMetrics {
            a1: 0.877,
            a2: 0.959,
            a3: 0.981,
            abs_rel: 0.115,
            sq_rel: 0.903,
            rms: 4.863,
            log_rms: 0.193,
        };
        let (text, json) = format_report(&[("MonoDepth2".to_string(), row)]).unwrap();
        for lit in ["0.877", "0.959", "0.981", "0.115", "4.863", "0.193", "0.903"] {
            assert!(text.contains(lit), "missing {lit} in:\n{text}");
        }
        assert_eq!(json[0]["rms"], serde_json::json!(4.863));
        assert_eq!(json[0]["a1"], serde_json::json!(0.877));
        let (text, json) = format_report(&[(String::new(), row)]).unwrap();
        assert!(text.contains("(unnamed)"));
        assert_eq!(json[0]["name"], "(unnamed)");
    }

    /// Naive per-pixel loop oracle, written independently of compute_metrics.
    fn naive_oracle(gt: &[f64], pred: &[f64], base: LogBase) -> DepthMetrics {
        let n = gt.len() as f64;
        let mut m = DepthMetrics {
            a1: 0.0,
            a2: 0.0,
            a3: 0.0,
            abs_rel: 0.0,
            sq_rel: 0.0,
            rms: 0.0,
            log_rms: 0.0,
        };
        for i in 0..gt.len() {
            let (g, p) = (gt[i], pred[i]);
            let thresh = (g / p).max(p / g);
            m.a1 += f64::from(thresh < 1.25) / n;
            m.a2 += f64::from(thresh < 1.5625) / n;
            m.a3 += f64::from(thresh < 1.953125) / n;
            m.abs_rel += (g - p).abs() / g / n;
            m.sq_rel += (g - p) * (g - p) / g / n;
            m.rms += (g - p) * (g - p) / n;
            let l = match base {
                LogBase::Natural => g.ln() - p.ln(),
                LogBase::Ten => g.log10() - p.log10(),
            };
            m.log_rms += l * l / n;
        }
        m.rms = m.rms.sqrt();
        m.log_rms = m.log_rms.sqrt();
        m
    }

    #[test]
    fn matches_naive_oracle_on_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let gt = Grid::from_fn(16, 16, 1, |_, _, _| rng.random_range(0.5..60.0)).unwrap();
            let pred = Grid::from_fn(16, 16, 1, |_, _, _| rng.random_range(0.5..60.0)).unwrap();
            let m = compute_metrics(&gt, &pred, &ones_mask(16, 16), &wide_cfg()).unwrap();
            let o = naive_oracle(gt.data(), pred.data(), LogBase::Natural);
            for (got, want) in [
                (m.a1, o.a1),
                (m.a2, o.a2),
                (m.a3, o.a3),
                (m.abs_rel, o.abs_rel),
                (m.sq_rel, o.sq_rel),
                (m.rms, o.rms),
                (m.log_rms, o.log_rms),
            ] {
                assert_abs_diff_eq!(got, want, epsilon = 1e-12);
            }
            assert!(m.a1 <= m.a2 && m.a2 <= m.a3);
        }
    }

    proptest! {
        #[test]
        fn joint_scaling_invariances(factor in 0.5f64..8.0, seed in 0u64..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt = Grid::from_fn(8, 8, 1, |_, _, _| rng.random_range(1.0..40.0)).unwrap();
            let pred = Grid::from_fn(8, 8, 1, |_, _, _| rng.random_range(1.0..40.0)).unwrap();
            let mask = ones_mask(8, 8);
            let base = compute_metrics(&gt, &pred, &mask, &wide_cfg()).unwrap();
            let scaled = compute_metrics(
                &gt.map(|v| v * factor),
                &pred.map(|v| v * factor),
                &mask,
                &wide_cfg(),
            )
            .unwrap();
            prop_assert!((base.a1 - scaled.a1).abs() < 1e-12);
            prop_assert!((base.abs_rel - scaled.abs_rel).abs() < 1e-12);
            prop_assert!((base.log_rms - scaled.log_rms).abs() < 1e-12);
            prop_assert!((base.rms * factor - scaled.rms).abs() < 1e-9 * scaled.rms.max(1.0));
            prop_assert!((base.sq_rel * factor - scaled.sq_rel).abs() < 1e-9 * scaled.sq_rel.max(1.0));
        }
    }
}
