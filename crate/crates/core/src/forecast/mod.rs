//! Next-step cosine-shift forecasting: a pooled LSTM regressor against a
//! moving-average baseline.

mod lstm;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use lstm::{
    loss_and_gradient, lstm_forward, lstm_train, lstm_train_from, mse_on, param_count, read_regressor,
    write_regressor, Gate, LstmRegressor,
};

use crate::shift::ShiftSeries;
use crate::{par, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastConfig {
    /// Window length `l`.
    pub sequence_length: usize,
    /// Number of target slices before the test slice used for training.
    pub training_length: usize,
    /// Steps between the last window value and the target.
    pub horizon: usize,
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
    /// Snapshot index of the held-out target; the last one when unset.
    pub test_index: Option<usize>,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            sequence_length: 5,
            training_length: 7,
            horizon: 1,
            hidden_units: 16,
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 64,
            rng_seed: 0,
            test_index: None,
        }
    }
}

impl ForecastConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sequence_length == 0 || self.training_length == 0 || self.horizon == 0 {
            return Err(Error::Config(
                "sequence_length, training_length and horizon must be >= 1".into(),
            ));
        }
        if self.hidden_units == 0 || self.batch_size == 0 {
            return Err(Error::Config("hidden_units and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// One `(window, target)` pair; `target_index` is the target's snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub node_id: String,
    pub target_index: usize,
    pub window: Vec<f64>,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleSet {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub test_index: usize,
}

/// The window of `l` values ending `horizon` steps before `target`, if the
/// window and target are all defined.
pub fn window_for(series: &ShiftSeries, target: usize, l: usize, horizon: usize) -> Option<Example> {
    let last = target.checked_sub(horizon)?;
    let first = (last + 1).checked_sub(l)?;
    let window: Option<Vec<f64>> = (first..=last).map(|t| series.at(t)).collect();
    Some(Example {
        node_id: series.node_id.clone(),
        target_index: target,
        window: window?,
        target: series.at(target)?,
    })
}

/// Every node's examples whose targets fall in `targets`, nodes in key order.
pub fn sliding_examples(
    series: &BTreeMap<String, ShiftSeries>,
    targets: std::ops::RangeInclusive<usize>,
    l: usize,
    horizon: usize,
) -> Vec<Example> {
    series
        .values()
        .flat_map(|s| targets.clone().filter_map(move |t| window_for(s, t, l, horizon)))
        .collect()
}

/// Train/test split around the held-out slice.
///
/// Test examples target `test_index`; training examples target the
/// `training_length` slices ending `horizon` steps earlier, so no training
/// target postdates the information available for the test window.
pub fn make_examples(series: &BTreeMap<String, ShiftSeries>, cfg: &ForecastConfig) -> Result<ExampleSet> {
    cfg.validate()?;
    let last = series
        .values()
        .map(|s| s.delta_t + s.values.len())
        .max()
        .unwrap_or(0);
    if last == 0 {
        return Err(Error::Data("no shift series to forecast".into()));
    }
    let test_index = cfg.test_index.unwrap_or(last - 1);
    let (l, h, tr) = (cfg.sequence_length, cfg.horizon, cfg.training_length);
    let test = sliding_examples(series, test_index..=test_index, l, h);
    if test.is_empty() {
        return Err(Error::Data(format!(
            "no test examples at t={test_index} with sequence_length={l}, horizon={h}"
        )));
    }
    let train_last = test_index.checked_sub(h).ok_or_else(|| {
        Error::Data(format!("horizon={h} leaves no training slices before t={test_index}"))
    })?;
    let train_first = (train_last + 1).saturating_sub(tr);
    let train = sliding_examples(series, train_first..=train_last, l, h);
    if train.is_empty() {
        return Err(Error::Data(format!(
            "no training examples with sequence_length={l}, training_length={tr} before t={test_index}"
        )));
    }
    Ok(ExampleSet {
        train,
        test,
        test_index,
    })
}

/// Arithmetic mean of the window.
pub fn baseline_moving_average(window: &[f64]) -> f64 {
    window.iter().sum::<f64>() / window.len() as f64
}

/// Mean squared error.
pub fn evaluate(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    Ok(predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / targets.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lstm,
    MovingAverage,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Lstm => "lstm",
            ModelKind::MovingAverage => "moving_average",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub sequence_length: usize,
    /// Unset for the baseline, which does not train.
    pub training_length: Option<usize>,
    pub model: ModelKind,
    pub mse: f64,
    pub train_examples: usize,
    pub test_examples: usize,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    /// Trained regressor per `(l, t_tr)`.
    pub models: BTreeMap<(usize, usize), LstmRegressor>,
}

/// LSTM test MSE for every `(l, t_tr)` pair plus one baseline row per `l`.
/// Rows are ordered by `l`, then baseline before LSTM rows by `t_tr`.
pub fn forecast_grid(
    series: &BTreeMap<String, ShiftSeries>,
    sequence_lengths: &[usize],
    training_lengths: &[usize],
    base: &ForecastConfig,
) -> Result<GridResult> {
    let mut cells = Vec::new();
    for &l in sequence_lengths {
        for &tr in training_lengths {
            cells.push((l, tr));
        }
    }
    let lstm_rows: Vec<Result<(GridRow, LstmRegressor)>> = par::map(&cells, |&(l, tr)| {
        let cfg = ForecastConfig {
            sequence_length: l,
            training_length: tr,
            ..base.clone()
        };
        let ex = make_examples(series, &cfg).map_err(|e| e.context(format!("l={l}, t_tr={tr}")))?;
        let model = lstm_train(&ex.train, &cfg).map_err(|e| e.context(format!("l={l}, t_tr={tr}")))?;
        let row = GridRow {
            sequence_length: l,
            training_length: Some(tr),
            model: ModelKind::Lstm,
            mse: mse_on(&model, &ex.test),
            train_examples: ex.train.len(),
            test_examples: ex.test.len(),
        };
        Ok((row, model))
    });
    let mut rows = Vec::new();
    let mut models = BTreeMap::new();
    let mut lstm_rows = lstm_rows.into_iter();
    for &l in sequence_lengths {
        let cfg = ForecastConfig {
            sequence_length: l,
            ..base.clone()
        };
        let ex = make_examples(series, &cfg)?;
        let preds: Vec<f64> = ex.test.iter().map(|e| baseline_moving_average(&e.window)).collect();
        let targets: Vec<f64> = ex.test.iter().map(|e| e.target).collect();
        rows.push(GridRow {
            sequence_length: l,
            training_length: None,
            model: ModelKind::MovingAverage,
            mse: evaluate(&preds, &targets)?,
            train_examples: 0,
            test_examples: ex.test.len(),
        });
        for &tr in training_lengths {
            let (row, model) = lstm_rows.next().expect("one row per grid cell")?;
            rows.push(row);
            models.insert((l, tr), model);
        }
    }
    Ok(GridResult { rows, models })
}

/// CSV `sequence_length,training_length,model,mse`; the baseline leaves
/// `training_length` empty.
pub fn write_grid_csv(path: &Path, rows: &[GridRow]) -> Result<()> {
    let mut out = String::from("sequence_length,training_length,model,mse\n");
    for r in rows {
        let tr = r.training_length.map(|t| t.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{tr},{},{}", r.sequence_length, r.model, r.mse);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shift::Metric;

    fn series(id: &str, vals: &[Option<f64>]) -> (String, ShiftSeries) {
        (
            id.to_string(),
            ShiftSeries {
                node_id: id.to_string(),
                metric: Metric::Cosine,
                delta_t: 1,
                values: vals.to_vec(),
            },
        )
    }

    fn cfg(l: usize, tr: usize) -> ForecastConfig {
        ForecastConfig {
            sequence_length: l,
            training_length: tr,
            ..Default::default()
        }
    }

    #[test]
    fn one_train_and_one_test_per_node() {
        // l + 2 values: one window for the held-out slice, one before it.
        let l = 3;
        let vals: Vec<Option<f64>> = (0..l + 2).map(|i| Some(i as f64)).collect();
        let s: BTreeMap<_, _> = [series("a", &vals), series("b", &vals)].into_iter().collect();
        let ex = make_examples(&s, &cfg(l, 1)).unwrap();
        assert_eq!(ex.train.len(), 2);
        assert_eq!(ex.test.len(), 2);
        assert_eq!(ex.test_index, l + 2);
        assert_eq!(ex.train[0].window, vec![0.0, 1.0, 2.0]);
        assert_eq!(ex.train[0].target, 3.0);
        assert_eq!(ex.test[0].window, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn window_of_l_plus_one_values_gives_one_example() {
        let l = 4;
        let vals: Vec<Option<f64>> = (0..=l).map(|i| Some(i as f64)).collect();
        let s: BTreeMap<_, _> = [series("a", &vals)].into_iter().collect();
        let all = sliding_examples(&s, 0..=100, l, 1);
        assert_eq!(all.len(), 1);
    }

    #[test]
    fn training_layout_for_long_windows() {
        let vals: Vec<Option<f64>> = (0..28).map(|i| Some(i as f64 * 0.01)).collect();
        let s: BTreeMap<_, _> = [series("a", &vals)].into_iter().collect();
        let ex = make_examples(&s, &cfg(5, 7)).unwrap();
        assert_eq!(ex.test_index, 28);
        let targets: Vec<usize> = ex.train.iter().map(|e| e.target_index).collect();
        assert_eq!(targets, (21..=27).collect::<Vec<_>>());
        assert!(ex.train.iter().all(|e| e.window.len() == 5));
    }

    #[test]
    fn gaps_skip_windows_and_frozen_nodes_stay() {
        let s: BTreeMap<_, _> = [
            series("gap", &[None, Some(0.1), Some(0.2), Some(0.3), Some(0.4)]),
            series("frozen", &[Some(0.0); 5]),
        ]
        .into_iter()
        .collect();
        let ex = make_examples(&s, &cfg(2, 3)).unwrap();
        assert!(ex.train.iter().all(|e| e.window.len() == 2));
        assert_eq!(ex.train.iter().filter(|e| e.node_id == "gap").count(), 1);
        assert_eq!(ex.train.iter().filter(|e| e.node_id == "frozen").count(), 2);
        assert!(ex.train.iter().filter(|e| e.node_id == "frozen").all(|e| e.target == 0.0));
    }

    #[test]
    fn too_long_window_names_parameter() {
        let s: BTreeMap<_, _> = [series("a", &[Some(0.1); 4])].into_iter().collect();
        let err = make_examples(&s, &cfg(7, 1)).unwrap_err();
        assert!(err.to_string().contains("sequence_length=7"), "{err}");
    }

    #[test]
    fn baseline_and_mse() {
        assert!((baseline_moving_average(&[0.2, 0.4]) - 0.3).abs() < 1e-15);
        assert_eq!(baseline_moving_average(&[0.7; 5]), 0.7);
        assert_eq!(baseline_moving_average(&[0.9]), 0.9);
        assert_eq!(evaluate(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((evaluate(&[1.5, 2.5], &[1.0, 2.0]).unwrap() - 0.25).abs() < 1e-15);
        assert!(evaluate(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn grid_shape_and_csv() {
        let vals: Vec<Option<f64>> = (0..12).map(|i| Some(0.01 * (i % 3) as f64)).collect();
        let s: BTreeMap<_, _> = (0..4).map(|k| series(&format!("n{k}"), &vals)).collect();
        let base = ForecastConfig {
            epochs: 2,
            hidden_units: 4,
            ..Default::default()
        };
        let grid = forecast_grid(&s, &[1, 3], &[1, 3], &base).unwrap();
        let rows = grid.rows;
        assert_eq!(rows.len(), 6);
        assert_eq!(grid.models.len(), 4);
        assert_eq!(rows[0].model, ModelKind::MovingAverage);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.csv");
        write_grid_csv(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("sequence_length,training_length,model,mse\n1,,moving_average,"));
        assert_eq!(text.lines().count(), 7);
    }
}
