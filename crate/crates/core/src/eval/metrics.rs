use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{pred} predictions for {gt} ground-truth vertices")]
    Length { pred: usize, gt: usize },
    #[error("label {0} outside the class range")]
    Label(i32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub name: Option<String>,
    pub gt_count: u64,
    pub pred_count: u64,
    pub tp: u64,
    /// `None` when the class has no ground-truth vertices.
    pub iou: Option<f64>,
    pub acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub classes: Vec<usize>,
    pub miou: Option<f64>,
    pub macc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: Vec<ClassMetrics>,
    pub miou: f64,
    pub macc: f64,
    pub f_miou: f64,
    pub f_macc: f64,
    pub head: GroupMetrics,
    pub common: GroupMetrics,
    pub tail: GroupMetrics,
    /// `confusion[gt][pred]`; the last column counts unlabeled predictions.
    pub confusion: Vec<Vec<u64>>,
    /// Vertices whose ground truth is unannotated (negative) and were ignored.
    pub ignored: u64,
}

/// Splits `classes` (already sorted by descending frequency) into three
/// groups whose sizes differ by at most one, larger groups first.
pub fn tertiles(classes: &[usize]) -> [Vec<usize>; 3] {
    let n = classes.len();
    let (base, rem) = (n / 3, n % 3);
    let mut out: [Vec<usize>; 3] = Default::default();
    let mut start = 0;
    for (g, group) in out.iter_mut().enumerate() {
        let len = base + usize::from(g < rem);
        group.extend_from_slice(&classes[start..start + len]);
        start += len;
    }
    out
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Per-vertex semantic metrics. Ground-truth labels below zero are ignored;
/// predicted labels below zero count as unlabeled (a miss for the true class).
pub fn compute_metrics(pred: &[i32], gt: &[i32], num_classes: usize, names: Option<&[String]>) -> Result<EvalReport, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::Length { pred: pred.len(), gt: gt.len() });
    }
    let c = num_classes;
    let mut confusion = vec![vec![0u64; c + 1]; c];
    let mut ignored = 0;
    for (&p, &g) in pred.iter().zip(gt) {
        if g < 0 {
            ignored += 1;
            continue;
        }
        if g as usize >= c {
            return Err(MetricsError::Label(g));
        }
        if p >= c as i32 {
            return Err(MetricsError::Label(p));
        }
        let col = if p < 0 { c } else { p as usize };
        confusion[g as usize][col] += 1;
    }
    let per_class: Vec<ClassMetrics> = (0..c)
        .map(|k| {
            let tp = confusion[k][k];
            let gt_count: u64 = confusion[k].iter().sum();
            let pred_count: u64 = confusion.iter().map(|row| row[k]).sum();
            let (fn_, fp) = (gt_count - tp, pred_count - tp);
            let present = gt_count > 0;
            ClassMetrics {
                class: k,
                name: names.and_then(|n| n.get(k).cloned()),
                gt_count,
                pred_count,
                tp,
                iou: present.then(|| tp as f64 / (tp + fp + fn_) as f64),
                acc: present.then(|| tp as f64 / gt_count as f64),
            }
        })
        .collect();
    let present: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.gt_count > 0).collect();
    let total: u64 = present.iter().map(|m| m.gt_count).sum();
    let miou = mean(present.iter().filter_map(|m| m.iou)).unwrap_or(0.0);
    let macc = mean(present.iter().filter_map(|m| m.acc)).unwrap_or(0.0);
    let weighted = |f: fn(&ClassMetrics) -> Option<f64>| {
        if total == 0 {
            return 0.0;
        }
        present.iter().map(|m| f(m).unwrap_or(0.0) * m.gt_count as f64 / total as f64).sum()
    };
    let f_miou = weighted(|m| m.iou);
    let f_macc = weighted(|m| m.acc);

    let mut ranked: Vec<&ClassMetrics> = present.clone();
    ranked.sort_by(|a, b| b.gt_count.cmp(&a.gt_count).then(a.class.cmp(&b.class)));
    let ranked: Vec<usize> = ranked.iter().map(|m| m.class).collect();
    let [h, m, t] = tertiles(&ranked);
    let group = |classes: Vec<usize>| GroupMetrics {
        miou: mean(classes.iter().filter_map(|&k| per_class[k].iou)),
        macc: mean(classes.iter().filter_map(|&k| per_class[k].acc)),
        classes,
    };
    Ok(EvalReport {
        miou,
        macc,
        f_miou,
        f_macc,
        head: group(h),
        common: group(m),
        tail: group(t),
        per_class,
        confusion,
        ignored,
    })
}
