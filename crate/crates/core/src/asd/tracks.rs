//! Face-track synthesis from rendered scene labels: crop each speaker's
//! sprite bounding box out of the frames and resize it to the crop size,
//! yielding one labeled `FaceTrack` per speaker.

use ndarray::Array4;

use crate::clip::RawClip;
use crate::error::{CoreError, Result};
use crate::scenes::ClipLabels;

use super::{FaceTrack, CROP_SIZE};

/// Nearest-neighbor crop-and-resize of a normalized bbox from one frame.
fn crop_frame(
    clip: &RawClip,
    frame: usize,
    bbox: [f32; 4],
    out: &mut Array4<f32>,
) {
    let (h, w) = (clip.height() as f32, clip.width() as f32);
    // clamp the box to the visible frame; off-screen parts read as edge pixels
    let x0 = bbox[0] * w;
    let y0 = bbox[1] * h;
    let bw = (bbox[2] * w).max(1.0);
    let bh = (bbox[3] * h).max(1.0);
    for oy in 0..CROP_SIZE {
        let sy = (y0 + (oy as f32 + 0.5) / CROP_SIZE as f32 * bh)
            .clamp(0.0, h - 1.0) as usize;
        for ox in 0..CROP_SIZE {
            let sx = (x0 + (ox as f32 + 0.5) / CROP_SIZE as f32 * bw)
                .clamp(0.0, w - 1.0) as usize;
            for c in 0..3 {
                out[(frame, oy, ox, c)] = clip.frames[(frame, sy, sx, c)];
            }
        }
    }
}

/// Build one `FaceTrack` per speaker present in the labels.
///
/// Speakers are identified by their numeric id; every frame of the clip must
/// carry a label for each speaker (scenes guarantee this).
pub fn tracks_from_labels(clip: &RawClip, labels: &ClipLabels) -> Result<Vec<FaceTrack>> {
    let t = clip.num_frames();
    if labels.frames.len() != t {
        return Err(CoreError::ShapeMismatch(format!(
            "{} label frames for a {t}-frame clip",
            labels.frames.len()
        )));
    }
    let mut ids: Vec<usize> = labels
        .frames
        .iter()
        .flat_map(|f| f.speakers.iter().map(|s| s.id))
        .collect();
    ids.sort_unstable();
    ids.dedup();

    let mut tracks = Vec::with_capacity(ids.len());
    for id in ids {
        let mut crops = Array4::zeros((t, CROP_SIZE, CROP_SIZE, 3));
        let mut active = Vec::with_capacity(t);
        let mut bboxes = Vec::with_capacity(t);
        for (frame, fl) in labels.frames.iter().enumerate() {
            let sp = fl
                .speakers
                .iter()
                .find(|s| s.id == id)
                .ok_or_else(|| {
                    CoreError::ShapeMismatch(format!(
                        "speaker {id} missing from frame {frame}"
                    ))
                })?;
            crop_frame(clip, frame, sp.bbox, &mut crops);
            active.push(sp.active);
            bboxes.push(sp.bbox);
        }
        tracks.push(FaceTrack::new(
            clip.clip_id.clone(),
            format!("spk{id}"),
            crops,
            active,
            bboxes,
        )?);
    }
    Ok(tracks)
}
