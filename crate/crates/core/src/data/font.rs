//! Built-in 5x7 bitmap font. Lowercase letters reuse the uppercase shapes;
//! that keeps one consistent, learnable appearance per character without an
//! external font dependency.

/// Rows top to bottom, bit 4 is the leftmost column.
pub const GLYPH_W: usize = 5;
pub const GLYPH_H: usize = 7;
/// Horizontal advance per character (glyph plus one column of spacing).
pub const ADVANCE: usize = 6;

#[rustfmt::skip]
fn bitmap(c: char) -> Option<[u8; 7]> {
    let c = c.to_ascii_uppercase();
    Some(match c {
        'A' => [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
        'B' => [0b11110, 0b10001, 0b11110, 0b10001, 0b10001, 0b10001, 0b11110],
        'C' => [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110],
        'D' => [0b11110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11110],
        'E' => [0b11111, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000, 0b11111],
        'F' => [0b11111, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000, 0b10000],
        'G' => [0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111],
        'H' => [0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001, 0b10001],
        'I' => [0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        'J' => [0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100],
        'K' => [0b10001, 0b10010, 0b11100, 0b10010, 0b10001, 0b10001, 0b10001],
        'L' => [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111],
        'M' => [0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001],
        'N' => [0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001, 0b10001],
        'O' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'P' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000],
        'Q' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101],
        'R' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10010, 0b10001, 0b10001],
        'S' => [0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110],
        'T' => [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100],
        'U' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'V' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100],
        'W' => [0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b11011, 0b10001],
        'X' => [0b10001, 0b01010, 0b00100, 0b00100, 0b00100, 0b01010, 0b10001],
        'Y' => [0b10001, 0b01010, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100],
        'Z' => [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111],
        '0' => [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
        '1' => [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        '2' => [0b01110, 0b10001, 0b00001, 0b00110, 0b01000, 0b10000, 0b11111],
        '3' => [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110],
        '4' => [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
        '5' => [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
        '6' => [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
        '7' => [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
        '8' => [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
        '9' => [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
        _ => return None,
    })
}

pub fn has_glyph(c: char) -> bool {
    bitmap(c).is_some()
}

/// Unit-grid extents of a rendered word: 7 rows tall, `6n-1` columns wide.
pub fn word_extent(text: &str) -> (usize, usize) {
    let n = text.chars().count();
    (GLYPH_H, if n == 0 { 0 } else { ADVANCE * n - 1 })
}

/// Binary mask of a word on its unit grid (row-major, 0.0/1.0). Unknown
/// characters render as blanks.
pub fn word_mask(text: &str) -> (usize, usize, Vec<f64>) {
    let (h, w) = word_extent(text);
    let mut mask = vec![0.0; h * w];
    for (k, c) in text.chars().enumerate() {
        if let Some(rows) = bitmap(c) {
            let x0 = k * ADVANCE;
            for (y, row) in rows.iter().enumerate() {
                for x in 0..GLYPH_W {
                    if row & (1 << (GLYPH_W - 1 - x)) != 0 {
                        mask[y * w + x0 + x] = 1.0;
                    }
                }
            }
        }
    }
    (h, w, mask)
}

/// Bilinear sample of the word mask at continuous mask coordinates, where
/// cell (i, j) covers the unit square with center (j + 0.5, i + 0.5);
/// outside the grid the mask reads zero.
pub fn sample_word_mask(h: usize, w: usize, mask: &[f64], x: f64, y: f64) -> f64 {
    let mx = x - 0.5;
    let my = y - 0.5;
    let x0 = mx.floor();
    let y0 = my.floor();
    let fx = mx - x0;
    let fy = my - y0;
    let mut acc = 0.0;
    for (dx, dy, wgt) in [
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (1, 0, fx * (1.0 - fy)),
        (0, 1, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ] {
        let cx = x0 as isize + dx;
        let cy = y0 as isize + dy;
        if cx >= 0 && cy >= 0 && (cx as usize) < w && (cy as usize) < h {
            acc += mask[cy as usize * w + cx as usize] * wgt;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_default_alphabet_char_has_a_glyph() {
        for c in "abcdefghijklmnopqrstuvwxyz0123456789".chars() {
            assert!(has_glyph(c), "missing glyph for {c:?}");
        }
        assert!(!has_glyph('!'));
    }

    #[test]
    fn word_extent_grows_with_length() {
        assert_eq!(word_extent("abc"), (7, 17));
        assert_eq!(word_extent("abcde"), (7, 29));
    }

    #[test]
    fn mask_sampling_hits_centers() {
        let (h, w, mask) = word_mask("i");
        // center column of 'I' is set in the middle row
        let v = sample_word_mask(h, w, &mask, 2.5, 3.5);
        assert_eq!(v, 1.0);
        assert_eq!(sample_word_mask(h, w, &mask, -3.0, -3.0), 0.0);
    }
}
