//! Accuracy and IoU metrics.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classification,
    Segmentation,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Classification => "cls",
            Task::Segmentation => "seg",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub task: Task,
    /// Shapes evaluated.
    pub samples: usize,
    /// Per shape for classification, per point for segmentation.
    pub overall_accuracy: f64,
    pub mean_class_accuracy: f64,
    /// Instance-averaged; segmentation only.
    pub mean_iou: Option<f64>,
    /// Recall per class (or per part); `None` where the class never occurs.
    pub class_accuracy: Vec<Option<f64>>,
    /// Mean shape IoU per category; segmentation only.
    pub category_iou: Vec<Option<f64>>,
}

fn recall_table(hits: &[usize], totals: &[usize]) -> (Vec<Option<f64>>, f64) {
    let per: Vec<Option<f64>> = hits
        .iter()
        .zip(totals)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect();
    let present: Vec<f64> = per.iter().flatten().copied().collect();
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    (per, mean)
}

pub fn classification_metrics(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<MetricsReport> {
    if pred.len() != truth.len() {
        return Err(Error::SizeMismatch(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    if let Some(&bad) = pred.iter().chain(truth).find(|&&c| c >= num_classes) {
        return Err(Error::InvalidArgument(format!("class {bad} out of range for {num_classes}")));
    }
    let mut hits = vec![0; num_classes];
    let mut totals = vec![0; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        totals[t] += 1;
        hits[t] += usize::from(p == t);
    }
    let (class_accuracy, mean_class_accuracy) = recall_table(&hits, &totals);
    Ok(MetricsReport {
        task: Task::Classification,
        samples: truth.len(),
        overall_accuracy: hits.iter().sum::<usize>() as f64 / truth.len() as f64,
        mean_class_accuracy,
        mean_iou: None,
        class_accuracy,
        category_iou: Vec::new(),
    })
}

/// Mean IoU over `parts`; a part absent from both prediction and truth scores 1.
pub fn shape_iou(pred: &[u32], truth: &[u32], parts: &[u32]) -> f64 {
    let mut sum = 0.0;
    for &part in parts {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&p, &t) in pred.iter().zip(truth) {
            let (ip, it) = (p == part, t == part);
            inter += usize::from(ip && it);
            union += usize::from(ip || it);
        }
        sum += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    }
    sum / parts.len() as f64
}

pub fn segmentation_metrics(
    pred: &[Vec<u32>],
    truth: &[Vec<u32>],
    categories: &[usize],
    part_table: &[Vec<u32>],
) -> Result<MetricsReport> {
    if pred.len() != truth.len() || categories.len() != truth.len() {
        return Err(Error::SizeMismatch(format!(
            "{} predictions, {} label sets, {} categories",
            pred.len(),
            truth.len(),
            categories.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    let num_parts = part_table.iter().flatten().max().map_or(0, |&m| m as usize + 1);
    let mut hits = vec![0; num_parts];
    let mut totals = vec![0; num_parts];
    let mut correct = 0usize;
    let mut points = 0usize;
    let mut iou_sum = 0.0;
    let mut cat_sum = vec![0.0; part_table.len()];
    let mut cat_count = vec![0usize; part_table.len()];
    for ((p, t), &c) in pred.iter().zip(truth).zip(categories) {
        if p.len() != t.len() {
            return Err(Error::SizeMismatch(format!("{} predicted points for {} labels", p.len(), t.len())));
        }
        let parts = part_table
            .get(c)
            .filter(|parts| !parts.is_empty())
            .ok_or_else(|| Error::InvalidArgument(format!("category {c} has no part list")))?;
        for (&pi, &ti) in p.iter().zip(t) {
            let ti = ti as usize;
            if ti >= num_parts || pi as usize >= num_parts {
                return Err(Error::InvalidArgument(format!("part label out of range for {num_parts} parts")));
            }
            totals[ti] += 1;
            hits[ti] += usize::from(pi as usize == ti);
        }
        correct += p.iter().zip(t).filter(|(a, b)| a == b).count();
        points += t.len();
        let iou = shape_iou(p, t, parts);
        iou_sum += iou;
        cat_sum[c] += iou;
        cat_count[c] += 1;
    }
    if points == 0 {
        return Err(Error::InvalidArgument("no points to evaluate".into()));
    }
    let (class_accuracy, mean_class_accuracy) = recall_table(&hits, &totals);
    Ok(MetricsReport {
        task: Task::Segmentation,
        samples: truth.len(),
        overall_accuracy: correct as f64 / points as f64,
        mean_class_accuracy,
        mean_iou: Some(iou_sum / truth.len() as f64),
        class_accuracy,
        category_iou: cat_sum
            .iter()
            .zip(&cat_count)
            .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
            .collect(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| x.to_string())
}

impl MetricsReport {
    /// Flat `(key, value)` list; floats print in shortest round-trip form.
    pub fn key_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("task".to_string(), self.task.as_str().to_string()),
            ("samples".to_string(), self.samples.to_string()),
            ("overall_accuracy".to_string(), self.overall_accuracy.to_string()),
            ("mean_class_accuracy".to_string(), self.mean_class_accuracy.to_string()),
        ];
        if let Some(m) = self.mean_iou {
            kv.push(("mean_iou".to_string(), m.to_string()));
        }
        let label = match self.task {
            Task::Classification => "class_accuracy",
            Task::Segmentation => "part_accuracy",
        };
        for (i, a) in self.class_accuracy.iter().enumerate() {
            kv.push((format!("{label}.{i}"), opt(*a)));
        }
        for (i, a) in self.category_iou.iter().enumerate() {
            kv.push((format!("category_iou.{i}"), opt(*a)));
        }
        kv
    }

    /// `key=value` lines.
    pub fn render(&self) -> String {
        self.key_values().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (k, v) in self.key_values() {
            out.push_str(&format!("{k},{v}\n"));
        }
        out
    }
}
