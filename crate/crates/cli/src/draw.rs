//! Overlay drawing: rotated box edges, track ids and transcriptions on RGB
//! frames, one fixed color per track id.

use vts_core::data::font;
use vts_core::{RotatedBox, Tensor};

const PALETTE: [[f64; 3]; 8] = [
    [1.00, 0.25, 0.25],
    [0.25, 1.00, 0.25],
    [0.30, 0.55, 1.00],
    [1.00, 0.85, 0.20],
    [1.00, 0.35, 1.00],
    [0.25, 1.00, 1.00],
    [1.00, 0.60, 0.25],
    [0.70, 0.45, 1.00],
];

pub fn track_color(track_id: u64) -> [f64; 3] {
    PALETTE[(track_id % PALETTE.len() as u64) as usize]
}

fn put_pixel(buf: &mut [f64], h: usize, w: usize, x: i64, y: i64, rgb: [f64; 3]) {
    if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
        return;
    }
    let (x, y) = (x as usize, y as usize);
    for c in 0..3 {
        buf[c * h * w + y * w + x] = rgb[c];
    }
}

fn draw_line(buf: &mut [f64], h: usize, w: usize, a: (f64, f64), b: (f64, f64), rgb: [f64; 3]) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize * 2).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = a.0 + (b.0 - a.0) * t;
        let y = a.1 + (b.1 - a.1) * t;
        put_pixel(buf, h, w, x.round() as i64, y.round() as i64, rgb);
    }
}

fn draw_label(buf: &mut [f64], h: usize, w: usize, x0: i64, y0: i64, text: &str, rgb: [f64; 3]) {
    let (mh, mw, mask) = font::word_mask(text);
    if mw == 0 {
        return;
    }
    for my in 0..mh {
        for mx in 0..mw {
            if mask[my * mw + mx] > 0.5 {
                put_pixel(buf, h, w, x0 + mx as i64, y0 + my as i64, rgb);
            }
        }
    }
}

/// Draws one observation: the rotated box outline plus an `id:text` label
/// clamped inside the image.
pub fn draw_observation(frame: &mut Tensor, bbox: &RotatedBox, track_id: u64, text: &str) {
    let shape = frame.shape().to_vec();
    let (h, w) = (shape[1], shape[2]);
    let rgb = track_color(track_id);
    let corners_norm = bbox.corners();
    let corners: Vec<(f64, f64)> = corners_norm
        .iter()
        .map(|(x, y)| (x * w as f64 - 0.5, y * h as f64 - 0.5))
        .collect();
    frame.apply(|buf| {
        for i in 0..4 {
            draw_line(buf, h, w, corners[i], corners[(i + 1) % 4], rgb);
        }
        let label = format!("{track_id}:{text}");
        let min_x = corners.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
        let min_y = corners.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        let x0 = (min_x.round() as i64).clamp(0, w.saturating_sub(1) as i64);
        let y0 = (min_y.round() as i64 - font::GLYPH_H as i64 - 1).clamp(0, h.saturating_sub(1) as i64);
        draw_label(buf, h, w, x0, y0, &label, rgb);
    });
}
