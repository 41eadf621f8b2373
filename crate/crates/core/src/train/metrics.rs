use crate::error::{GeomemError, Result};
use serde::{Deserialize, Serialize};

/// One evaluation snapshot. Path metrics are on the held-out leaves unless
/// prefixed with `train_`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub epoch: f64,
    /// Mean training loss since the previous snapshot (NaN at step 0).
    pub loss: f64,
    pub lr: f64,
    pub edge_acc: f64,
    pub full_path_acc: f64,
    pub first_token_acc: f64,
    pub decision_token_acc: f64,
    pub per_token_acc: Vec<f64>,
    pub train_full_path_acc: f64,
    pub train_decision_token_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

const FIXED: [&str; 9] = [
    "step",
    "epoch",
    "loss",
    "lr",
    "edge_acc",
    "full_path_acc",
    "first_token_acc",
    "decision_token_acc",
    "train_full_path_acc",
];

impl MetricsLog {
    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    /// Best value of `f` over all snapshots.
    pub fn best(&self, f: impl Fn(&MetricsRow) -> f64) -> f64 {
        self.rows.iter().map(f).fold(f64::NEG_INFINITY, f64::max)
    }

    fn width(&self) -> usize {
        self.rows
            .iter()
            .map(|r| r.per_token_acc.len())
            .max()
            .unwrap_or(0)
    }

    pub fn to_csv(&self) -> String {
        let k = self.width();
        let mut header: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
        header.push("train_decision_token_acc".into());
        header.extend((0..k).map(|i| format!("per_token_acc_{i}")));
        let mut out = header.join(",");
        out.push('\n');
        for r in &self.rows {
            let mut cells = vec![
                r.step.to_string(),
                format!("{}", r.epoch),
                format!("{}", r.loss),
                format!("{}", r.lr),
                format!("{}", r.edge_acc),
                format!("{}", r.full_path_acc),
                format!("{}", r.first_token_acc),
                format!("{}", r.decision_token_acc),
                format!("{}", r.train_full_path_acc),
                format!("{}", r.train_decision_token_acc),
            ];
            cells.extend((0..k).map(|i| {
                r.per_token_acc
                    .get(i)
                    .map_or(String::new(), |v| format!("{v}"))
            }));
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| GeomemError::Parse("empty metrics file".into()))?
            .split(',')
            .collect();
        if header.len() < 10 || header[..9] != FIXED {
            return Err(GeomemError::Parse("unexpected metrics header".into()));
        }
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| GeomemError::Parse(format!("bad number `{s}` in metrics")))
        };
        let mut rows = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let c: Vec<&str> = line.split(',').collect();
            if c.len() != header.len() {
                return Err(GeomemError::Parse(format!(
                    "metrics row has {} cells",
                    c.len()
                )));
            }
            rows.push(MetricsRow {
                step: c[0]
                    .parse()
                    .map_err(|_| GeomemError::Parse(format!("bad step `{}`", c[0])))?,
                epoch: num(c[1])?,
                loss: num(c[2])?,
                lr: num(c[3])?,
                edge_acc: num(c[4])?,
                full_path_acc: num(c[5])?,
                first_token_acc: num(c[6])?,
                decision_token_acc: num(c[7])?,
                train_full_path_acc: num(c[8])?,
                train_decision_token_acc: num(c[9])?,
                per_token_acc: c[10..]
                    .iter()
                    .filter(|s| !s.is_empty())
                    .map(|s| num(s))
                    .collect::<Result<_>>()?,
            });
        }
        Ok(MetricsLog { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let row = MetricsRow {
            step: 10,
            epoch: 1.5,
            loss: f64::NAN,
            lr: 1e-3,
            edge_acc: 0.25,
            full_path_acc: 0.0,
            first_token_acc: 1.0,
            decision_token_acc: 0.5,
            per_token_acc: vec![1.0, 0.5, 0.125],
            train_full_path_acc: 1.0,
            train_decision_token_acc: 1.0,
        };
        let log = MetricsLog {
            rows: vec![
                row.clone(),
                MetricsRow {
                    step: 20,
                    loss: 2.0,
                    ..row
                },
            ],
        };
        let back = MetricsLog::from_csv(&log.to_csv()).unwrap();
        assert!(back.rows[0].loss.is_nan());
        assert_eq!(back.rows[1], log.rows[1]);
        assert_eq!(back.best(|r| r.loss), 2.0);
    }
}
