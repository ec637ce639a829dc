use super::{BinaryImage, GrayImage, ImageError, RgbImage};

/// BT.601 luma, rounded to nearest.
pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| {
            let y = 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]);
            y.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage::new(img.width(), img.height(), data).expect("same dimensions")
}

/// Mean over a `(2r+1) x (2r+1)` window with edge replication, rounded half up.
pub fn box_blur(img: &GrayImage, radius: usize) -> GrayImage {
    if radius == 0 {
        return img.clone();
    }
    let (w, h) = img.dims();
    let r = radius as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    // horizontal window sums
    let mut rows = vec![0u32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0u32;
            for dx in -r..=r {
                s += u32::from(img.get(clamp(x as isize + dx, w), y));
            }
            rows[y * w + x] = s;
        }
    }
    let n = ((2 * radius + 1) * (2 * radius + 1)) as u32;
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0u32;
            for dy in -r..=r {
                s += rows[clamp(y as isize + dy, h) * w + x];
            }
            out[y * w + x] = ((s + n / 2) / n) as u8;
        }
    }
    GrayImage::new(w, h, out).expect("same dimensions")
}

fn check_same(a: &GrayImage, b: &GrayImage) -> Result<(), ImageError> {
    if a.dims() != b.dims() {
        return Err(ImageError::DimensionMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    Ok(())
}

/// Per-pixel `|a - b|`.
pub fn abs_diff(a: &GrayImage, b: &GrayImage) -> Result<GrayImage, ImageError> {
    check_same(a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| p.abs_diff(q))
        .collect();
    GrayImage::new(a.width(), a.height(), data)
}

/// Pixels strictly above `t` become 255, the rest 0.
pub fn binarize(img: &GrayImage, t: u8) -> BinaryImage {
    let data = img
        .data()
        .iter()
        .map(|&v| if v > t { 255 } else { 0 })
        .collect();
    BinaryImage::from_raw(img.width(), img.height(), data)
}

/// Per-pixel AND of two masks.
pub fn mask_and(a: &BinaryImage, b: &BinaryImage) -> Result<BinaryImage, ImageError> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(ImageError::DimensionMismatch {
            left: (a.width(), a.height()),
            right: (b.width(), b.height()),
        });
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| p & q)
        .collect();
    Ok(BinaryImage::from_raw(a.width(), a.height(), data))
}

/// Double differencing over three consecutive frames: the thresholded
/// `|next - cur|` and `|cur - prev|` masks are AND-ed, keeping only change
/// present on both sides of `cur`.
pub fn triple_diff(
    prev: &GrayImage,
    cur: &GrayImage,
    next: &GrayImage,
    t: u8,
) -> Result<BinaryImage, ImageError> {
    check_same(prev, cur)?;
    check_same(cur, next)?;
    let forward = binarize(&abs_diff(next, cur)?, t);
    let backward = binarize(&abs_diff(cur, prev)?, t);
    mask_and(&forward, &backward)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray(w: usize, h: usize, data: &[u8]) -> GrayImage {
        GrayImage::new(w, h, data.to_vec()).unwrap()
    }

    #[test]
    fn grayscale_values() {
        let img = RgbImage::new(3, 1, vec![255, 255, 255, 0, 0, 0, 255, 0, 0]).unwrap();
        assert_eq!(to_grayscale(&img).data(), &[255, 0, 76]);
    }

    #[test]
    fn grayscale_matches_formula_on_all_primaries() {
        // round(0.587 * 255) = round(149.685), round(0.114 * 255) = round(29.07)
        let img = RgbImage::new(2, 1, vec![0, 255, 0, 0, 0, 255]).unwrap();
        assert_eq!(to_grayscale(&img).data(), &[150, 29]);
    }

    #[test]
    fn blur_radius_zero_is_identity() {
        let img = gray(3, 2, &[1, 2, 3, 4, 5, 6]);
        assert_eq!(box_blur(&img, 0), img);
    }

    #[test]
    fn blur_center_impulse() {
        let img = gray(3, 3, &[0, 0, 0, 0, 90, 0, 0, 0, 0]);
        assert_eq!(box_blur(&img, 1).get(1, 1), 10);
    }

    #[test]
    fn blur_replicates_edges() {
        // 1x3 row [0, 0, 90]; at x=2 the window is {0, 90, 90} per row -> 180*3/9 = 60
        let img = gray(3, 1, &[0, 0, 90]);
        assert_eq!(box_blur(&img, 1).data(), &[0, 30, 60]);
    }

    #[test]
    fn abs_diff_pairs() {
        let a = gray(2, 1, &[10, 3]);
        let b = gray(2, 1, &[3, 10]);
        assert_eq!(abs_diff(&a, &b).unwrap().data(), &[7, 7]);
        assert!(abs_diff(&a, &a).unwrap().data().iter().all(|&v| v == 0));
        assert!(abs_diff(&a, &gray(1, 2, &[0, 0])).is_err());
    }

    #[test]
    fn binarize_is_strict() {
        assert_eq!(
            binarize(&gray(3, 1, &[10, 25, 26]), 25).data(),
            &[0, 0, 255]
        );
        assert_eq!(binarize(&gray(2, 1, &[255, 255]), 255).count_set(), 0);
        assert_eq!(binarize(&gray(2, 1, &[1, 1]), 0).count_set(), 2);
    }

    #[test]
    fn change_on_one_side_only_is_rejected() {
        let prev = gray(2, 1, &[0, 0]);
        let cur = gray(2, 1, &[200, 0]);
        let next = gray(2, 1, &[200, 0]);
        assert_eq!(triple_diff(&prev, &cur, &next, 25).unwrap().count_set(), 0);
        // flicker at t: both sides change
        let next = gray(2, 1, &[0, 0]);
        assert_eq!(
            triple_diff(&prev, &cur, &next, 25).unwrap().data(),
            &[255, 0]
        );
    }

    #[test]
    fn triple_diff_dimension_mismatch() {
        let a = gray(2, 1, &[0, 0]);
        let b = gray(1, 2, &[0, 0]);
        assert!(triple_diff(&a, &a, &b, 25).is_err());
    }

    /// Brute-force reading of the pixel-wise definition.
    fn naive_triple(prev: &GrayImage, cur: &GrayImage, next: &GrayImage, t: u8) -> Vec<u8> {
        (0..cur.data().len())
            .map(|i| {
                let d1 = (i32::from(next.data()[i]) - i32::from(cur.data()[i])).abs();
                let d2 = (i32::from(cur.data()[i]) - i32::from(prev.data()[i])).abs();
                if d1 > i32::from(t) && d2 > i32::from(t) {
                    255
                } else {
                    0
                }
            })
            .collect()
    }

    fn square_frame(w: usize, h: usize, sx: usize, sy: usize, size: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            if x >= sx && x < sx + size && y >= sy && y < sy + size {
                120 + ((7 * (x - sx) + 13 * (y - sy)) % 5) as u8 * 30
            } else {
                0
            }
        })
        .unwrap()
    }

    #[test]
    fn moving_square_lights_up_near_current_position() {
        let frames: Vec<_> = (0..3)
            .map(|i| square_frame(24, 16, 4 + 2 * i, 5, 6))
            .collect();
        let mask = triple_diff(&frames[0], &frames[1], &frames[2], 25).unwrap();
        let naive = naive_triple(&frames[0], &frames[1], &frames[2], 25);
        assert_eq!(mask.data(), naive.as_slice());
        assert!(mask.count_set() > 0);
        let cur = BBox::rect(6, 5, 6, 6);
        for y in 0..16 {
            for x in 0..24 {
                if mask.is_set(x, y) {
                    assert!(
                        cur.intersection(&BBox::rect(x, y, 1, 1)) == 1,
                        "({x},{y}) outside"
                    );
                }
            }
        }
    }

    use super::super::BBox;

    fn arb_triplet() -> impl Strategy<Value = (GrayImage, GrayImage, GrayImage)> {
        (1usize..10, 1usize..10).prop_flat_map(|(w, h)| {
            let img = move || {
                proptest::collection::vec(any::<u8>(), w * h)
                    .prop_map(move |d| GrayImage::new(w, h, d).unwrap())
            };
            (img(), img(), img())
        })
    }

    proptest! {
        #[test]
        fn blur_preserves_constants(w in 1usize..9, h in 1usize..9, v: u8, r in 0usize..5) {
            let img = GrayImage::filled(w, h, v).unwrap();
            prop_assert_eq!(box_blur(&img, r), img);
        }

        #[test]
        fn abs_diff_commutes((a, b, _c) in arb_triplet()) {
            prop_assert_eq!(abs_diff(&a, &b).unwrap(), abs_diff(&b, &a).unwrap());
            prop_assert!(abs_diff(&a, &a).unwrap().data().iter().all(|&v| v == 0));
        }

        #[test]
        fn static_scene_is_black((a, _b, _c) in arb_triplet(), t: u8) {
            prop_assert_eq!(triple_diff(&a, &a, &a, t).unwrap().count_set(), 0);
        }

        #[test]
        fn triple_diff_is_and_of_sides((p, c, n) in arb_triplet(), t: u8) {
            let mask = triple_diff(&p, &c, &n, t).unwrap();
            let naive = naive_triple(&p, &c, &n, t);
            prop_assert_eq!(mask.data(), naive.as_slice());
            let d1 = binarize(&abs_diff(&n, &c).unwrap(), t);
            let d2 = binarize(&abs_diff(&c, &p).unwrap(), t);
            for i in 0..mask.data().len() {
                if mask.data()[i] == 255 {
                    prop_assert!(d1.data()[i] == 255 && d2.data()[i] == 255);
                }
            }
        }
    }
}
