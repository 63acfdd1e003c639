//! Flat / edge / background separation inside a letter's bounding box.
//!
//! The bbox histogram is smoothed with a size-5 mean filter, its two dominant
//! modes are located and their mean `mu` sets two multiplicative thresholds:
//! pixels `<= alpha·mu` are flat (solid toner), pixels in `(alpha·mu, beta·mu]`
//! are edge, brighter pixels are background. Flat pixels touching an edge pixel
//! are then excluded so that flat-region texture does not see the letter shape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::GrayImage;
use crate::letters::{BBox, LetterBox};

pub const DEFAULT_ALPHA: f64 = 0.71;
pub const DEFAULT_BETA: f64 = 1.52;
/// Letters with fewer bbox pixels are not segmented.
pub const MIN_LETTER_PIXELS: usize = 25;
/// Minimum distance in intensity levels between the two selected peaks.
pub const MIN_PEAK_SEPARATION: usize = 32;
const SMOOTH_RADIUS: isize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityHistogram {
    pub bins: [f64; 256],
}

impl IntensityHistogram {
    pub fn total(&self) -> f64 {
        self.bins.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Flat,
    Edge,
    Background,
    /// Flat pixel removed because it borders the edge region.
    Excluded,
}

/// Intensities of the dark (ink) and light (paper) histogram modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Peaks {
    pub dark: u8,
    pub light: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LetterRegion {
    pub bbox: BBox,
    /// Row-major over the bbox.
    pub labels: Vec<Label>,
    pub mu: f64,
}

impl LetterRegion {
    #[inline]
    pub fn label(&self, x: usize, y: usize) -> Label {
        self.labels[y * self.bbox.w + x]
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

fn check_box(img: &GrayImage, bbox: &BBox) -> Result<()> {
    if bbox.w == 0 || bbox.h == 0 || bbox.x + bbox.w > img.width() || bbox.y + bbox.h > img.height()
    {
        return Err(Error::param(
            "box",
            format!(
                "{bbox:?} is outside the {}x{} image",
                img.width(),
                img.height()
            ),
        ));
    }
    Ok(())
}

/// Raw intensity counts over the letter's bbox.
pub fn letter_histogram(img: &GrayImage, letter: &LetterBox) -> Result<IntensityHistogram> {
    let b = letter.bbox;
    check_box(img, &b)?;
    if b.area() < MIN_LETTER_PIXELS {
        return Err(Error::LetterSkipped(format!(
            "bbox area {} below {MIN_LETTER_PIXELS}",
            b.area()
        )));
    }
    let mut bins = [0.0; 256];
    for y in b.y..b.y + b.h {
        for x in b.x..b.x + b.w {
            bins[img.get(x, y) as usize] += 1.0;
        }
    }
    Ok(IntensityHistogram { bins })
}

/// Size-5 moving average with replicate padding at both ends.
///
/// Replicate padding counts `bins[0]` and `bins[255]` one extra time each and
/// `bins[1]`, `bins[254]` one time fewer, so the total changes by
/// `(bins[0] - bins[1] + bins[255] - bins[254]) / 5`.
pub fn smooth_histogram(h: &IntensityHistogram) -> IntensityHistogram {
    let mut bins = [0.0; 256];
    for (i, out) in bins.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in -SMOOTH_RADIUS..=SMOOTH_RADIUS {
            let j = (i as isize + k).clamp(0, 255) as usize;
            acc += h.bins[j];
        }
        *out = acc / (2 * SMOOTH_RADIUS + 1) as f64;
    }
    IntensityHistogram { bins }
}

/// Local maxima of a histogram as `(position, height)`.
///
/// A run of equal bins is one maximum when both flanking bins (where they
/// exist) are strictly lower; its position is the run's lower-middle bin.
pub fn local_maxima(h: &IntensityHistogram) -> Vec<(usize, f64)> {
    let b = &h.bins;
    let mut out = Vec::new();
    let mut i = 0;
    while i < 256 {
        let mut j = i;
        while j + 1 < 256 && b[j + 1] == b[i] {
            j += 1;
        }
        let left_lower = i == 0 || b[i - 1] < b[i];
        let right_lower = j == 255 || b[j + 1] < b[i];
        if b[i] > 0.0 && left_lower && right_lower {
            out.push(((i + j) / 2, b[i]));
        }
        i = j + 1;
    }
    out
}

/// Picks the two highest local maxima at least [`MIN_PEAK_SEPARATION`] apart.
///
/// Pairs are ranked by their taller peak, then their shorter peak, then by
/// wider separation, then by the lower dark position.
pub fn find_two_peaks(h: &IntensityHistogram) -> Result<Peaks> {
    let maxima = local_maxima(h);
    let mut best: Option<((f64, f64, usize, isize), Peaks)> = None;
    for (a, &(i, hi)) in maxima.iter().enumerate() {
        for &(j, hj) in &maxima[a + 1..] {
            if j - i < MIN_PEAK_SEPARATION {
                continue;
            }
            let key = (hi.max(hj), hi.min(hj), j - i, -(i as isize));
            let better = match &best {
                None => true,
                Some((k, _)) => key.partial_cmp(k) == Some(std::cmp::Ordering::Greater),
            };
            if better {
                best = Some((
                    key,
                    Peaks {
                        dark: i as u8,
                        light: j as u8,
                    },
                ));
            }
        }
    }
    best.map(|(_, p)| p).ok_or(Error::Unimodal)
}

/// Thresholds raw bbox intensities at `alpha·mu` and `beta·mu`.
pub fn segment_regions(
    img: &GrayImage,
    letter: &LetterBox,
    peaks: Peaks,
    alpha: f64,
    beta: f64,
) -> Result<LetterRegion> {
    let b = letter.bbox;
    check_box(img, &b)?;
    let mu = (peaks.dark as f64 + peaks.light as f64) / 2.0;
    let (flat_max, edge_max) = (alpha * mu, beta * mu);
    let mut labels = Vec::with_capacity(b.area());
    for y in b.y..b.y + b.h {
        for x in b.x..b.x + b.w {
            let v = img.get(x, y) as f64;
            labels.push(if v <= flat_max {
                Label::Flat
            } else if v <= edge_max {
                Label::Edge
            } else {
                Label::Background
            });
        }
    }
    Ok(LetterRegion { bbox: b, labels, mu })
}

/// Relabels every flat pixel with an edge pixel in its 3×3 neighbourhood as
/// [`Label::Excluded`]. Decisions read the input labels only, so the result
/// does not depend on visiting order. Edge pixels are left as they are.
pub fn remove_flat_border(region: &LetterRegion) -> LetterRegion {
    let (w, h) = (region.bbox.w, region.bbox.h);
    let src = &region.labels;
    let mut labels = src.clone();
    for y in 0..h {
        for x in 0..w {
            if src[y * w + x] != Label::Flat {
                continue;
            }
            let touches_edge = (y.saturating_sub(1)..=(y + 1).min(h - 1)).any(|ny| {
                (x.saturating_sub(1)..=(x + 1).min(w - 1)).any(|nx| src[ny * w + nx] == Label::Edge)
            });
            if touches_edge {
                labels[y * w + x] = Label::Excluded;
            }
        }
    }
    LetterRegion {
        bbox: region.bbox,
        labels,
        mu: region.mu,
    }
}

/// Full per-letter region separation: histogram, smoothing, peaks,
/// thresholding and flat-border removal.
pub fn separate_letter(
    img: &GrayImage,
    letter: &LetterBox,
    alpha: f64,
    beta: f64,
) -> Result<LetterRegion> {
    let hist = smooth_histogram(&letter_histogram(img, letter)?);
    let peaks = find_two_peaks(&hist)?;
    let region = segment_regions(img, letter, peaks, alpha, beta)?;
    Ok(remove_flat_border(&region))
}

/// False-colour view of one letter's bbox: flat black, edge red, background
/// white, border pixels removed from the flat region gray. Returns packed RGB8.
pub fn false_colour(region: &LetterRegion) -> Vec<u8> {
    region
        .labels
        .iter()
        .flat_map(|l| match l {
            Label::Flat => [0, 0, 0],
            Label::Edge => [255, 0, 0],
            Label::Background => [255, 255, 255],
            Label::Excluded => [128, 128, 128],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn letter(x: usize, y: usize, w: usize, h: usize) -> LetterBox {
        LetterBox {
            bbox: BBox { x, y, w, h },
            area: w * h,
            index: 0,
        }
    }

    fn hist_from(f: impl Fn(usize) -> f64) -> IntensityHistogram {
        let mut bins = [0.0; 256];
        for (i, b) in bins.iter_mut().enumerate() {
            *b = f(i);
        }
        IntensityHistogram { bins }
    }

    fn bump(center: f64, height: f64, width: f64) -> impl Fn(usize) -> f64 {
        move |i| height * (-((i as f64 - center).powi(2)) / (2.0 * width * width)).exp()
    }

    fn region_from(rows: &[&str]) -> LetterRegion {
        let h = rows.len();
        let w = rows[0].len();
        let labels = rows
            .iter()
            .flat_map(|r| {
                r.bytes().map(|c| match c {
                    b'F' => Label::Flat,
                    b'E' => Label::Edge,
                    b'B' => Label::Background,
                    _ => Label::Excluded,
                })
            })
            .collect();
        LetterRegion {
            bbox: BBox { x: 0, y: 0, w, h },
            labels,
            mu: 100.0,
        }
    }

    /// Every strict local maximum by direct neighbour comparison, then an
    /// exhaustive search for the tallest separated pair.
    fn brute_force_peaks(h: &IntensityHistogram) -> Option<(usize, usize)> {
        let b = &h.bins;
        let maxima: Vec<usize> = (0..256)
            .filter(|&i| {
                b[i] > 0.0 && (i == 0 || b[i - 1] < b[i]) && (i == 255 || b[i + 1] < b[i])
            })
            .collect();
        let mut best: Option<(f64, f64, usize, usize)> = None;
        for &i in &maxima {
            for &j in &maxima {
                if j < i + MIN_PEAK_SEPARATION {
                    continue;
                }
                let (hi, lo) = (b[i].max(b[j]), b[i].min(b[j]));
                if best.is_none_or(|(bh, bl, _, _)| (hi, lo) > (bh, bl)) {
                    best = Some((hi, lo, i, j));
                }
            }
        }
        best.map(|(_, _, i, j)| (i, j))
    }

    #[test]
    fn histogram_counts() {
        let img = GrayImage::filled(5, 5, 0).unwrap();
        let h = letter_histogram(&img, &letter(0, 0, 5, 5)).unwrap();
        assert_eq!(h.bins[0], 25.0);
        assert_eq!(h.total(), 25.0);

        let img = GrayImage::from_fn(8, 6, |x, _| if x < 4 { 0 } else { 255 }).unwrap();
        let h = letter_histogram(&img, &letter(1, 1, 6, 5)).unwrap();
        assert_eq!((h.bins[0], h.bins[255], h.total()), (15.0, 15.0, 30.0));
    }

    #[test]
    fn histogram_errors() {
        let img = GrayImage::filled(10, 10, 0).unwrap();
        assert!(matches!(
            letter_histogram(&img, &letter(8, 8, 5, 5)),
            Err(Error::Parameter { .. })
        ));
        assert!(matches!(
            letter_histogram(&img, &letter(0, 0, 4, 6)),
            Err(Error::LetterSkipped(_))
        ));
    }

    #[test]
    fn smoothing_examples() {
        let s = smooth_histogram(&hist_from(|i| if i == 100 { 10.0 } else { 0.0 }));
        for i in 98..=102 {
            assert_eq!(s.bins[i], 2.0);
        }
        assert_eq!(s.bins[97], 0.0);
        assert_eq!(s.bins[103], 0.0);

        let s = smooth_histogram(&hist_from(|_| 3.5));
        assert!(s.bins.iter().all(|&b| (b - 3.5).abs() < 1e-12));

        let s = smooth_histogram(&hist_from(|i| if i == 0 { 5.0 } else { 0.0 }));
        assert_eq!((s.bins[0], s.bins[1], s.bins[2], s.bins[3]), (3.0, 2.0, 1.0, 0.0));
    }

    #[test]
    fn smoothing_mass_change_matches_padding_formula() {
        let h = hist_from(|i| ((i * 37) % 11) as f64);
        let s = smooth_histogram(&h);
        let expected =
            h.total() + (h.bins[0] - h.bins[1] + h.bins[255] - h.bins[254]) / 5.0;
        assert!((s.total() - expected).abs() < 1e-9);
        // interior-only mass is preserved exactly
        let h = hist_from(|i| if (10..200).contains(&i) { (i % 7) as f64 } else { 0.0 });
        assert!((smooth_histogram(&h).total() - h.total()).abs() < 1e-9);
    }

    #[test]
    fn two_bumps() {
        let b1 = bump(20.0, 50.0, 6.0);
        let b2 = bump(200.0, 80.0, 8.0);
        let h = hist_from(|i| b1(i) + b2(i));
        assert_eq!(brute_force_peaks(&h), Some((20, 200)));
        assert_eq!(find_two_peaks(&h).unwrap(), Peaks { dark: 20, light: 200 });
    }

    #[test]
    fn tiny_middle_bump_is_ignored() {
        let (b1, b2, b3) = (bump(20.0, 50.0, 6.0), bump(200.0, 80.0, 8.0), bump(100.0, 3.0, 4.0));
        let h = hist_from(|i| b1(i) + b2(i) + b3(i));
        assert_eq!(local_maxima(&h).len(), 3);
        assert_eq!(brute_force_peaks(&h), Some((20, 200)));
        assert_eq!(find_two_peaks(&h).unwrap(), Peaks { dark: 20, light: 200 });
    }

    #[test]
    fn single_bump_is_unimodal() {
        let h = hist_from(bump(120.0, 10.0, 5.0));
        assert!(matches!(find_two_peaks(&h), Err(Error::Unimodal)));
        let h = hist_from(|_| 0.0);
        assert!(matches!(find_two_peaks(&h), Err(Error::Unimodal)));
        // close modes are not enough
        let (b1, b2) = (bump(100.0, 10.0, 3.0), bump(120.0, 10.0, 3.0));
        assert!(matches!(find_two_peaks(&hist_from(|i| b1(i) + b2(i))), Err(Error::Unimodal)));
    }

    #[test]
    fn plateau_is_one_maximum() {
        let h = hist_from(|i| if (10..=14).contains(&i) { 4.0 } else { 0.0 });
        assert_eq!(local_maxima(&h), vec![(12, 4.0)]);
        // a flat valley floor is not a maximum
        let h = hist_from(|i| match i {
            0..=9 => 9.0 - i as f64,
            10..=100 => 1.0,
            _ => ((i - 100) as f64).min(20.0),
        });
        let m = local_maxima(&h);
        assert!(m.iter().all(|&(p, _)| !(10..=100).contains(&p)));
    }

    #[test]
    fn peaks_match_brute_force_on_random_mixtures() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let c1 = rng.random_range(5.0..100.0);
            let c2 = rng.random_range(150.0..250.0);
            let (b1, b2) = (
                bump(c1, rng.random_range(5.0..50.0), rng.random_range(2.0..10.0)),
                bump(c2, rng.random_range(5.0..50.0), rng.random_range(2.0..10.0)),
            );
            let h = hist_from(|i| b1(i) + b2(i));
            let p = find_two_peaks(&h).unwrap();
            assert_eq!(Some((p.dark as usize, p.light as usize)), brute_force_peaks(&h));
        }
    }

    #[test]
    fn segmentation_thresholds() {
        let img = GrayImage::new(3, 1, vec![50, 120, 220]).unwrap();
        let l = LetterBox {
            bbox: BBox { x: 0, y: 0, w: 3, h: 1 },
            area: 3,
            index: 0,
        };
        let r = segment_regions(&img, &l, Peaks { dark: 20, light: 200 }, DEFAULT_ALPHA, DEFAULT_BETA)
            .unwrap();
        assert_eq!(r.mu, 110.0);
        assert_eq!(r.labels, vec![Label::Flat, Label::Edge, Label::Background]);

        let img = GrayImage::new(4, 1, vec![90, 91, 193, 194]).unwrap();
        let l = LetterBox {
            bbox: BBox { x: 0, y: 0, w: 4, h: 1 },
            area: 4,
            index: 0,
        };
        let r = segment_regions(&img, &l, Peaks { dark: 0, light: 255 }, DEFAULT_ALPHA, DEFAULT_BETA)
            .unwrap();
        assert_eq!(r.mu, 127.5);
        // 0.71·127.5 = 90.525, 1.52·127.5 = 193.8
        assert_eq!(r.labels, vec![Label::Flat, Label::Edge, Label::Edge, Label::Background]);
    }

    #[test]
    fn all_background_gives_empty_flat_and_edge() {
        let img = GrayImage::filled(6, 6, 250).unwrap();
        let r = segment_regions(&img, &letter(0, 0, 6, 6), Peaks { dark: 20, light: 100 }, DEFAULT_ALPHA, DEFAULT_BETA)
            .unwrap();
        assert_eq!(r.count(Label::Flat) + r.count(Label::Edge), 0);
    }

    #[test]
    fn border_removal_examples() {
        let r = region_from(&["EEEEE", "EFFFE", "EFFFE", "EFFFE", "EEEEE"]);
        let out = remove_flat_border(&r);
        assert_eq!(out.count(Label::Flat), 1);
        assert_eq!(out.label(2, 2), Label::Flat);
        assert_eq!(out.count(Label::Excluded), 8);

        let r = region_from(&[
            "EEEEEEE", "EFFFFFE", "EFFFFFE", "EFFFFFE", "EFFFFFE", "EFFFFFE", "EEEEEEE",
        ]);
        assert_eq!(remove_flat_border(&r).count(Label::Flat), 9);

        let r = region_from(&["BBBBB", "BFFFB", "BFFFB", "BBBBB"]);
        assert_eq!(remove_flat_border(&r), r);

        let r = region_from(&["EEEEE", "FFFFF", "EEEEE"]);
        let out = remove_flat_border(&r);
        assert_eq!(out.count(Label::Flat), 0);
        assert_eq!(out.count(Label::Edge), 10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_region() -> impl Strategy<Value = LetterRegion> {
            (3usize..12, 3usize..12).prop_flat_map(|(w, h)| {
                proptest::collection::vec(0u8..3, w * h).prop_map(move |v| LetterRegion {
                    bbox: BBox { x: 0, y: 0, w, h },
                    labels: v
                        .into_iter()
                        .map(|c| [Label::Flat, Label::Edge, Label::Background][c as usize])
                        .collect(),
                    mu: 100.0,
                })
            })
        }

        /// In-place sweep in a caller-chosen order that reads a frozen copy.
        fn two_buffer_oracle(r: &LetterRegion, reverse: bool) -> Vec<Label> {
            let (w, h) = (r.bbox.w as isize, r.bbox.h as isize);
            let frozen = r.labels.clone();
            let mut out = r.labels.clone();
            let mut order: Vec<isize> = (0..w * h).collect();
            if reverse {
                order.reverse();
            }
            for idx in order {
                let (x, y) = (idx % w, idx / w);
                if frozen[idx as usize] != Label::Flat {
                    continue;
                }
                let mut hit = false;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx >= 0 && ny >= 0 && nx < w && ny < h
                            && frozen[(ny * w + nx) as usize] == Label::Edge
                        {
                            hit = true;
                        }
                    }
                }
                if hit {
                    out[idx as usize] = Label::Excluded;
                }
            }
            out
        }

        proptest! {
            #[test]
            fn border_removal_properties(r in arb_region()) {
                let out = remove_flat_border(&r);
                prop_assert_eq!(&out.labels, &two_buffer_oracle(&r, false));
                prop_assert_eq!(&out.labels, &two_buffer_oracle(&r, true));
                let total = out.count(Label::Flat) + out.count(Label::Edge)
                    + out.count(Label::Background) + out.count(Label::Excluded);
                prop_assert_eq!(total, r.bbox.area());
                prop_assert_eq!(out.count(Label::Edge), r.count(Label::Edge));
                let (w, h) = (r.bbox.w, r.bbox.h);
                for y in 0..h {
                    for x in 0..w {
                        if out.label(x, y) != Label::Flat { continue; }
                        for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                            for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                                prop_assert_ne!(out.label(nx, ny), Label::Edge);
                            }
                        }
                    }
                }
            }

            #[test]
            fn raising_alpha_never_shrinks_flat(
                pixels in proptest::collection::vec(any::<u8>(), 36),
                a1 in 0.3f64..0.9, da in 0.0f64..0.3,
            ) {
                let img = GrayImage::new(6, 6, pixels).unwrap();
                let l = letter(0, 0, 6, 6);
                let peaks = Peaks { dark: 30, light: 230 };
                let low = segment_regions(&img, &l, peaks, a1, 1.52).unwrap();
                let high = segment_regions(&img, &l, peaks, a1 + da, 1.52).unwrap();
                for (a, b) in low.labels.iter().zip(&high.labels) {
                    if *a == Label::Flat { prop_assert_eq!(*b, Label::Flat); }
                }
            }

            #[test]
            fn shifting_intensity_and_peaks_moves_mu(c in 1i32..40) {
                let img = GrayImage::from_fn(6, 6, |x, y| (30 + 30 * x + 5 * y) as u8).unwrap();
                let l = letter(0, 0, 6, 6);
                let base = segment_regions(&img, &l, Peaks { dark: 30, light: 200 }, 0.71, 1.52).unwrap();
                let moved = segment_regions(&img.shifted(c), &l,
                    Peaks { dark: 30 + c as u8, light: 200 + c as u8 }, 0.71, 1.52).unwrap();
                prop_assert!((moved.mu - base.mu - c as f64).abs() < 1e-12);
            }
        }

        #[test]
        fn shift_does_not_preserve_labels_in_general() {
            // thresholds scale with mu, so an additive shift moves pixels across them
            let img = GrayImage::new(5, 5, vec![75; 25]).unwrap();
            let l = letter(0, 0, 5, 5);
            let base = segment_regions(&img, &l, Peaks { dark: 20, light: 200 }, 0.71, 1.52).unwrap();
            let moved = segment_regions(&img.shifted(20), &l, Peaks { dark: 40, light: 220 }, 0.71, 1.52).unwrap();
            // 75 <= 0.71·110 = 78.1, but 95 > 0.71·130 = 92.3
            assert_eq!(base.labels[0], Label::Flat);
            assert_eq!(moved.labels[0], Label::Edge);
        }

        #[test]
        fn false_colour_palette() {
            let region = LetterRegion {
                bbox: BBox { x: 3, y: 4, w: 2, h: 2 },
                labels: vec![Label::Flat, Label::Edge, Label::Background, Label::Excluded],
                mu: 100.0,
            };
            assert_eq!(false_colour(&region), vec![0, 0, 0, 255, 0, 0, 255, 255, 255, 128, 128, 128]);
        }
    }
}
