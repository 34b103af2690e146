use super::Tensor;
use crate::error::{Error, Result};

fn log_softmax_row(row: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let allowed = |j: usize| mask.is_none_or(|m| m[j]);
    let max = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| allowed(j))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| allowed(j))
        .map(|(_, &v)| (v - max).exp())
        .sum();
    let log_z = max + sum.ln();
    row.iter()
        .enumerate()
        .map(|(j, &v)| {
            if allowed(j) {
                v - log_z
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

/// Row-wise softmax, stabilized by subtracting the row maximum.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (o, e) in out.row_mut(i).iter_mut().zip(exps) {
            *o = e / sum;
        }
    }
    out
}

/// Mean softmax cross-entropy and its exact gradient w.r.t. the logits.
///
/// `class_mask` (row-major `[n x C]`) restricts each row's softmax to the
/// allowed classes; masked positions get zero gradient. A row's true label
/// must be allowed.
pub fn loss_ce(
    logits: &Tensor,
    labels: &[usize],
    class_mask: Option<&[bool]>,
) -> Result<(f64, Tensor)> {
    let (n, c) = (logits.rows(), logits.cols());
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    if let Some(mask) = class_mask {
        if mask.len() != n * c {
            return Err(Error::Shape("class mask must be n x C".into()));
        }
    }
    let mut total = 0.0;
    let mut grad = Tensor::zeros(vec![n, c]);
    let scale = 1.0 / n as f64;
    for (i, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {c} classes"
            )));
        }
        let row_mask = class_mask.map(|m| &m[i * c..(i + 1) * c]);
        if row_mask.is_some_and(|m| !m[label]) {
            return Err(Error::InvalidArgument(format!(
                "true label {label} of row {i} is masked out"
            )));
        }
        let logp = log_softmax_row(logits.row(i), row_mask);
        total -= logp[label];
        for (j, g) in grad.row_mut(i).iter_mut().enumerate() {
            let p = logp[j].exp();
            *g = (p - if j == label { 1.0 } else { 0.0 }) * scale;
        }
    }
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(Error::Numeric("cross-entropy loss".into()));
    }
    Ok((loss, grad))
}

/// Cross-entropy of each row separately (no reduction).
pub fn per_sample_ce(logits: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    if labels.len() != logits.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            logits.rows()
        )));
    }
    labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            if label >= logits.cols() {
                return Err(Error::InvalidArgument(format!(
                    "label {label} out of range"
                )));
            }
            Ok(-log_softmax_row(logits.row(i), None)[label])
        })
        .collect()
}

/// Distillation loss `T^2 * mean_rows KL(softmax(teacher/T) || softmax(student/T))`
/// and its gradient w.r.t. the student logits.
pub fn kl_distill(
    teacher_logits: &Tensor,
    student_logits: &Tensor,
    temperature: f64,
) -> Result<(f64, Tensor)> {
    if teacher_logits.dims() != student_logits.dims() {
        return Err(Error::Shape(
            "teacher and student logits differ in shape".into(),
        ));
    }
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::InvalidArgument(format!("temperature {temperature}")));
    }
    let (n, c) = (student_logits.rows(), student_logits.cols());
    let scaled = |row: &[f64]| row.iter().map(|v| v / temperature).collect::<Vec<_>>();
    let mut total = 0.0;
    let mut grad = Tensor::zeros(vec![n, c]);
    for i in 0..n {
        let log_p = log_softmax_row(&scaled(teacher_logits.row(i)), None);
        let log_q = log_softmax_row(&scaled(student_logits.row(i)), None);
        let mut kl = 0.0;
        for (g, (lp, lq)) in grad.row_mut(i).iter_mut().zip(log_p.iter().zip(&log_q)) {
            let p = lp.exp();
            kl += p * (lp - lq);
            *g = temperature * (lq.exp() - p) / n as f64;
        }
        total += kl;
    }
    Ok((temperature * temperature * total / n as f64, grad))
}
