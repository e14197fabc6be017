//! Frame-level mean average precision, pooled over all (track, frame) pairs,
//! with AVA-style step interpolation and ties collapsed to one PR point.

use std::path::Path;

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AsdPrediction {
    pub clip_id: String,
    pub face_id: String,
    pub frame_idx: usize,
    pub score: f64,
    pub label: bool,
}

/// Average precision over pooled (score, label) pairs.
///
/// Predictions are ranked by descending score; equal scores form one group
/// and contribute a single precision/recall point, so the result is invariant
/// to the ordering within ties.
pub fn average_precision(pairs: &[(f64, bool)]) -> Result<f64> {
    let total_pos = pairs.iter().filter(|(_, l)| *l).count();
    if total_pos == 0 {
        return Err(CoreError::NoPositives);
    }
    let mut sorted: Vec<(f64, bool)> = pairs.to_vec();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("scores must be comparable"));

    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let mut group_tp = 0usize;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            if sorted[j].1 {
                group_tp += 1;
            }
            j += 1;
        }
        tp += group_tp;
        let precision = tp as f64 / j as f64;
        ap += (group_tp as f64 / total_pos as f64) * precision;
        i = j;
    }
    Ok(ap)
}

/// Pooled frame-level mAP over a prediction set, in [0, 1].
pub fn evaluate_map(predictions: &[AsdPrediction]) -> Result<f64> {
    let pairs: Vec<(f64, bool)> = predictions.iter().map(|p| (p.score, p.label)).collect();
    average_precision(&pairs)
}

/// CSV rows (clip_id, face_id, frame_idx, score, label) with a header.
pub fn write_predictions_csv(path: &Path, predictions: &[AsdPrediction]) -> Result<()> {
    let mut out = String::from("clip_id,face_id,frame_idx,score,label\n");
    for p in predictions {
        if p.clip_id.contains(',') || p.face_id.contains(',') {
            return Err(CoreError::Manifest(format!(
                "id contains a comma: {}/{}",
                p.clip_id, p.face_id
            )));
        }
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.clip_id,
            p.face_id,
            p.frame_idx,
            p.score,
            u8::from(p.label)
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<AsdPrediction>> {
    let text = std::fs::read_to_string(path)?;
    let mut predictions = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(CoreError::Manifest(format!(
                "{}:{}: expected 5 fields, got {}",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let parse_err = |what: &str| {
            CoreError::Manifest(format!("{}:{}: bad {what}", path.display(), lineno + 1))
        };
        predictions.push(AsdPrediction {
            clip_id: fields[0].to_string(),
            face_id: fields[1].to_string(),
            frame_idx: fields[2].parse().map_err(|_| parse_err("frame_idx"))?,
            score: fields[3].parse().map_err(|_| parse_err("score"))?,
            label: match fields[4] {
                "0" => false,
                "1" => true,
                _ => return Err(parse_err("label")),
            },
        });
    }
    Ok(predictions)
}
