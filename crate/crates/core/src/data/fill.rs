//! Nearest-valid hole filling for depth maps.

use crate::error::{Error, Result};

/// Replaces every invalid pixel of the row-major `h x w` map with the value
/// of its nearest valid pixel in Euclidean distance. Ties go to the smaller
/// row, then the smaller column. Valid pixels are untouched.
pub fn fill_invalid(depth: &[f32], valid: &[bool], h: usize, w: usize) -> Result<Vec<f32>> {
    if depth.len() != h * w || valid.len() != h * w {
        return Err(Error::shape(
            "fill_invalid",
            format!(
                "{} depths and {} flags for a {h}x{w} map",
                depth.len(),
                valid.len()
            ),
        ));
    }
    if !valid.iter().any(|&v| v) {
        return Err(Error::invalid("fill_invalid needs at least one valid pixel"));
    }
    let mut out = depth.to_vec();
    for y in 0..h {
        for x in 0..w {
            if !valid[y * w + x] {
                out[y * w + x] = depth[nearest_valid(valid, h, w, y, x)];
            }
        }
    }
    Ok(out)
}

/// Searches square rings of growing Chebyshev radius. Once a valid pixel
/// turns up at radius `r`, the Euclidean nearest lies within radius
/// `ceil(r * sqrt 2)`, so that box is scanned exhaustively.
fn nearest_valid(valid: &[bool], h: usize, w: usize, y: usize, x: usize) -> usize {
    let max_r = h.max(w);
    let mut first = None;
    for r in 1..=max_r {
        if ring_has_valid(valid, h, w, y, x, r) {
            first = Some(r);
            break;
        }
    }
    let r0 = first.expect("caller guarantees a valid pixel");
    let reach = ((r0 as f64) * std::f64::consts::SQRT_2).ceil() as usize;
    let (y0, y1) = (y.saturating_sub(reach), (y + reach).min(h - 1));
    let (x0, x1) = (x.saturating_sub(reach), (x + reach).min(w - 1));
    let mut best = (usize::MAX, 0usize);
    // row-major scan keeps the first minimum, which is the tie-break order
    for yy in y0..=y1 {
        for xx in x0..=x1 {
            let i = yy * w + xx;
            if !valid[i] {
                continue;
            }
            let dy = yy.abs_diff(y);
            let dx = xx.abs_diff(x);
            let d2 = dy * dy + dx * dx;
            if d2 < best.0 {
                best = (d2, i);
            }
        }
    }
    best.1
}

fn ring_has_valid(valid: &[bool], h: usize, w: usize, y: usize, x: usize, r: usize) -> bool {
    let (y, x, r) = (y as isize, x as isize, r as isize);
    let inside = |yy: isize, xx: isize| {
        yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w && valid[yy as usize * w + xx as usize]
    };
    for d in -r..=r {
        if inside(y - r, x + d) || inside(y + r, x + d) || inside(y + d, x - r) || inside(y + d, x + r)
        {
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(depth: &[f32], valid: &[bool], h: usize, w: usize) -> Vec<f32> {
        let mut out = depth.to_vec();
        for y in 0..h {
            for x in 0..w {
                if valid[y * w + x] {
                    continue;
                }
                let mut best = (usize::MAX, 0);
                for yy in 0..h {
                    for xx in 0..w {
                        if valid[yy * w + xx] {
                            let d2 = yy.abs_diff(y).pow(2) + xx.abs_diff(x).pow(2);
                            if d2 < best.0 {
                                best = (d2, yy * w + xx);
                            }
                        }
                    }
                }
                out[y * w + x] = depth[best.1];
            }
        }
        out
    }

    #[test]
    fn all_valid_is_identity() {
        let d: Vec<f32> = (0..12).map(|i| i as f32).collect();
        assert_eq!(fill_invalid(&d, &[true; 12], 3, 4).unwrap(), d);
    }

    #[test]
    fn single_valid_pixel_floods() {
        let mut valid = vec![false; 20];
        valid[13] = true;
        let mut d = vec![0.0; 20];
        d[13] = 4.5;
        assert!(fill_invalid(&d, &valid, 4, 5).unwrap().iter().all(|&v| v == 4.5));
    }

    #[test]
    fn left_half_valid() {
        let (h, w) = (6, 8);
        let valid: Vec<bool> = (0..h * w).map(|i| i % w < w / 2).collect();
        let d: Vec<f32> = valid.iter().map(|&v| if v { 2.0 } else { 0.0 }).collect();
        assert!(fill_invalid(&d, &valid, h, w).unwrap().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn ties_prefer_smaller_row_then_column() {
        // centre pixel of a 3x3 map; the four edge neighbours are equidistant
        let valid = [false, true, false, true, false, true, false, true, false];
        let d = [0.0, 1.0, 0.0, 2.0, 0.0, 3.0, 0.0, 4.0, 0.0];
        let out = fill_invalid(&d, &valid, 3, 3).unwrap();
        assert_eq!(out[4], 1.0);
        // corner (0,0): neighbours (0,1) and (1,0) tie; row 0 wins
        assert_eq!(out[0], 1.0);
        // corner (2,0): (1,0) and (2,1) tie; row 1 wins
        assert_eq!(out[6], 2.0);
    }

    #[test]
    fn all_invalid_is_an_error() {
        assert!(fill_invalid(&[0.0; 4], &[false; 4], 2, 2).is_err());
    }

    proptest! {
        #[test]
        fn matches_brute_force_and_is_idempotent(
            h in 1usize..9,
            w in 1usize..9,
            bits in prop::collection::vec(0u8..4, 64),
        ) {
            let valid: Vec<bool> = (0..h * w).map(|i| bits[i] == 0).collect();
            prop_assume!(valid.iter().any(|&v| v));
            let d: Vec<f32> = (0..h * w)
                .map(|i| if valid[i] { 1.0 + i as f32 } else { 0.0 })
                .collect();
            let out = fill_invalid(&d, &valid, h, w).unwrap();
            prop_assert_eq!(&out, &brute(&d, &valid, h, w));
            prop_assert_eq!(fill_invalid(&out, &valid, h, w).unwrap(), out);
        }
    }
}
