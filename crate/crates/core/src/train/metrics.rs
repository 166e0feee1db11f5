use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("{what}: {} predictions vs {} targets", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::UndefinedMetric(format!("{what} needs at least 2 samples, got {}", a.len())));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn rmse(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(y_hat, y, "rmse")?;
    let mse = y_hat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64;
    Ok(mse.sqrt())
}

/// `1 - SS_res / SS_tot`, with `SS_tot` about the mean of `y`.
pub fn r2(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(y_hat, y, "r2")?;
    let m = mean(y);
    let ss_tot: f64 = y.iter().map(|v| (v - m) * (v - m)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric("r2 of a constant target".into()));
    }
    let ss_res: f64 = y_hat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn pcc(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(y_hat, y, "pcc")?;
    let (ma, mb) = (mean(y_hat), mean(y));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (a, b) in y_hat.iter().zip(y) {
        sab += (a - ma) * (b - mb);
        saa += (a - ma) * (a - ma);
        sbb += (b - mb) * (b - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedMetric("pcc of a constant vector".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

fn check_labels(p: &[f64], t: &[u8], what: &str) -> Result<()> {
    if p.len() != t.len() {
        return Err(Error::dim(format!("{what}: {} scores vs {} labels", p.len(), t.len())));
    }
    if p.is_empty() {
        return Err(Error::UndefinedMetric(format!("{what} of an empty set")));
    }
    if let Some(bad) = t.iter().find(|v| **v > 1) {
        return Err(Error::data(format!("{what}: label {bad} is not 0 or 1")));
    }
    Ok(())
}

/// Accuracy, sensitivity (recall of label 1) and specificity (recall of
/// label 0) at `p >= threshold`.
pub fn classification_metrics(p_hat: &[f64], t: &[u8], threshold: f64) -> Result<(f64, f64, f64)> {
    check_labels(p_hat, t, "classification metrics")?;
    let (mut tp, mut tn, mut fp, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (p, l) in p_hat.iter().zip(t) {
        match (*p >= threshold, *l == 1) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    if tp + fn_ == 0 {
        return Err(Error::UndefinedMetric("sensitivity with no sensitive samples".into()));
    }
    if tn + fp == 0 {
        return Err(Error::UndefinedMetric("specificity with no resistant samples".into()));
    }
    let acc = (tp + tn) as f64 / t.len() as f64;
    Ok((acc, tp as f64 / (tp + fn_) as f64, tn as f64 / (tn + fp) as f64))
}

/// Accuracy alone, defined for single-class label sets.
pub fn accuracy(p_hat: &[f64], t: &[u8], threshold: f64) -> Result<f64> {
    check_labels(p_hat, t, "accuracy")?;
    let hits = p_hat.iter().zip(t).filter(|(p, l)| (**p >= threshold) == (**l == 1)).count();
    Ok(hits as f64 / t.len() as f64)
}

/// Mann-Whitney U over (positive, negative) pairs, ties counted half.
pub fn auc(p_hat: &[f64], t: &[u8]) -> Result<f64> {
    check_labels(p_hat, t, "auc")?;
    let n_pos = t.iter().filter(|v| **v == 1).count();
    let n_neg = t.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("auc needs both classes".into()));
    }
    if p_hat.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("auc of NaN scores".into()));
    }
    // rank-sum form with midranks for ties
    let mut order: Vec<usize> = (0..p_hat.len()).collect();
    order.sort_by(|&a, &b| p_hat[a].total_cmp(&p_hat[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && p_hat[order[j + 1]] == p_hat[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if t[k] == 1 {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Metric suite for one evaluation. A metric is `None` when it is undefined
/// on the given samples; the reason is kept in `undefined`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: Option<f64>,
    pub r2: Option<f64>,
    pub pcc: Option<f64>,
    pub acc: Option<f64>,
    pub sen: Option<f64>,
    pub spec: Option<f64>,
    pub auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

pub const METRIC_NAMES: [&str; 7] = ["rmse", "r2", "pcc", "acc", "sen", "spec", "auc"];

impl MetricReport {
    pub fn evaluate(y_hat: &[f64], y: &[f64], p_hat: &[f64], t: &[u8], threshold: f64) -> Result<Self> {
        let mut undefined = Vec::new();
        let mut keep = |r: Result<f64>| match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::UndefinedMetric(m)) => {
                undefined.push(m);
                Ok(None)
            }
            Err(e) => Err(e),
        };
        let rmse = keep(rmse(y_hat, y))?;
        let r2 = keep(r2(y_hat, y))?;
        let pcc = keep(pcc(y_hat, y))?;
        let acc = keep(accuracy(p_hat, t, threshold))?;
        let (sen, spec) = match classification_metrics(p_hat, t, threshold) {
            Ok((_, s, sp)) => (Some(s), Some(sp)),
            Err(Error::UndefinedMetric(m)) => {
                undefined.push(m);
                (None, None)
            }
            Err(e) => return Err(e),
        };
        let auc = match auc(p_hat, t) {
            Ok(v) => Some(v),
            Err(Error::UndefinedMetric(m)) => {
                undefined.push(m);
                None
            }
            Err(e) => return Err(e),
        };
        Ok(MetricReport {
            rmse,
            r2,
            pcc,
            acc,
            sen,
            spec,
            auc,
            undefined,
        })
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "rmse" => self.rmse,
            "r2" => self.r2,
            "pcc" => self.pcc,
            "acc" => self.acc,
            "sen" => self.sen,
            "spec" => self.spec,
            "auc" => self.auc,
            _ => None,
        }
    }

    fn set(&mut self, name: &str, v: Option<f64>) {
        let slot = match name {
            "rmse" => &mut self.rmse,
            "r2" => &mut self.r2,
            "pcc" => &mut self.pcc,
            "acc" => &mut self.acc,
            "sen" => &mut self.sen,
            "spec" => &mut self.spec,
            "auc" => &mut self.auc,
            _ => return,
        };
        *slot = v;
    }
}

/// Mean and sample standard deviation of each metric over the reports
/// where it is defined.
pub fn aggregate(reports: &[MetricReport]) -> (MetricReport, MetricReport) {
    let mut mean_r = MetricReport::default();
    let mut sd_r = MetricReport::default();
    for name in METRIC_NAMES {
        let vals: Vec<f64> = reports.iter().filter_map(|r| r.get(name)).collect();
        if vals.is_empty() {
            continue;
        }
        let m = mean(&vals);
        let sd = if vals.len() > 1 {
            (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        mean_r.set(name, Some(m));
        sd_r.set(name, Some(sd));
    }
    (mean_r, sd_r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        assert!((rmse(&[0.0, 1.0, 4.0], &[0.0, 1.0, 2.0]).unwrap() - (4.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(auc(&[0.3; 4], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert!(matches!(r2(&[1.0, 2.0], &[3.0, 3.0]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn undefined_metrics_are_recorded() {
        let r = MetricReport::evaluate(&[1.0, 2.0], &[1.0, 2.5], &[0.9, 0.8], &[1, 1], 0.5).unwrap();
        assert_eq!(r.acc, Some(1.0));
        assert!(r.auc.is_none() && r.sen.is_none());
        assert_eq!(r.undefined.len(), 2);
    }
}
