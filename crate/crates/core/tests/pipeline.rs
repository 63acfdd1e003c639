use printid::features::{poep, Region};
use printid::letters::find_letters;
use printid::regions::{find_two_peaks, letter_histogram, segment_regions, separate_letter, smooth_histogram, Label};
use printid::synth::{default_suite, gen_printer_page, PageLayout, SyntheticPage};
use printid::{Error, Extractor, FeatureLayout, FeatureVector, GaborMode, PipelineConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_layout() -> PageLayout {
    PageLayout {
        width: 1200,
        height: 1200,
        ..PageLayout::default()
    }
}

fn page(profile: usize, index: usize, letters: usize) -> SyntheticPage {
    let p = &default_suite()[profile];
    gen_printer_page(p, index, letters, &small_layout(), 7).unwrap()
}

fn assert_blocks(v: &[f64], layout: FeatureLayout) {
    assert_eq!(v.len(), layout.dim());
    for region in [Region::Flat, Region::Edge] {
        for s in 0..layout.scales() {
            for c in 0..13 {
                let off = layout.block_offset(region, s, c);
                let block = &v[off..off + 59];
                assert!(block.iter().all(|&b| b >= 0.0 && b.is_finite()));
                let sum: f64 = block.iter().sum();
                assert!(sum == 0.0 || (sum - 1.0).abs() < 1e-9, "block sum {sum}");
            }
        }
    }
}

#[test]
fn letter_features_follow_the_layout_contract() {
    let img = page(0, 0, 40).image;
    for (mode, dim) in [(GaborMode::On, 4602), (GaborMode::Off, 1534)] {
        let cfg = PipelineConfig {
            gabor_mode: mode,
            ..PipelineConfig::default()
        };
        let ex = Extractor::new(&cfg).unwrap();
        assert_eq!(ex.layout().dim(), dim);
        let (feats, diag) = ex.letters(&img).unwrap();
        assert!(feats.len() >= 35, "{diag:?}");
        for f in &feats {
            assert_blocks(f.as_slice(), ex.layout());
            let layout = ex.layout();
            let filled = |r, s, c| {
                let o = layout.block_offset(r, s, c);
                f.as_slice()[o..o + 59].iter().sum::<f64>() > 0.0
            };
            let mut any = false;
            for r in [Region::Flat, Region::Edge] {
                for s in 0..layout.scales() {
                    // each pixel feeds all three blocks of its centre direction
                    // and the magnitude block
                    let centres: Vec<bool> = (0..4).map(|d| filled(r, s, 3 * d)).collect();
                    for d in 0..4 {
                        assert_eq!(filled(r, s, 3 * d + 1), centres[d]);
                        assert_eq!(filled(r, s, 3 * d + 2), centres[d]);
                    }
                    assert_eq!(filled(r, s, 12), centres.iter().any(|&c| c));
                    any |= filled(r, s, 12);
                }
            }
            assert!(any);
        }
    }
}

#[test]
fn pooled_samples_keep_the_contract() {
    let img = page(1, 0, 60).image;
    let cfg = PipelineConfig {
        group_size: 10,
        ..PipelineConfig::default()
    };
    let ex = Extractor::new(&cfg).unwrap();
    let (samples, _) = ex.page(&img, "p").unwrap();
    assert_eq!(samples.len(), 6);
    for (i, s) in samples.iter().enumerate() {
        assert_eq!(s.group_index, i);
        assert_eq!(s.letter_count, 10);
        // a pooled block sums to the share of its letters whose block was filled
        let layout = ex.layout();
        for b in s.vector.as_slice().chunks(59) {
            let filled = b.iter().sum::<f64>() * 10.0;
            assert!((filled - filled.round()).abs() < 1e-9 && filled.round() <= 10.0);
        }
        assert_eq!(s.vector.dim(), layout.dim());
    }
}

fn random_letters(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<FeatureVector> {
    (0..n)
        .map(|_| FeatureVector::new((0..dim).map(|_| rng.random::<f64>()).collect()))
        .collect()
}

#[test]
fn poep_counts_and_means_exhaustively() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in 0..=50 {
        for g in 1..=10 {
            let letters = random_letters(&mut rng, n, 4);
            let out = poep(&letters, g, "p");
            if n < g {
                assert!(matches!(out, Err(Error::PageSkipped(_))), "n={n} g={g}");
                continue;
            }
            let out = out.unwrap();
            assert_eq!(out.len(), n / g);
            for (j, s) in out.iter().enumerate() {
                assert_eq!(s.group_index, j);
                let members = &letters[j * g..(j + 1) * g];
                for d in 0..4 {
                    let direct = members.iter().map(|m| m.as_slice()[d]).sum::<f64>() / g as f64;
                    assert!((s.vector.as_slice()[d] - direct).abs() < 1e-12);
                    let lo = members.iter().map(|m| m.as_slice()[d]).fold(f64::INFINITY, f64::min);
                    let hi = members.iter().map(|m| m.as_slice()[d]).fold(f64::NEG_INFINITY, f64::max);
                    assert!(s.vector.as_slice()[d] >= lo && s.vector.as_slice()[d] <= hi);
                }
            }
        }
    }
}

#[test]
fn poep_rejects_zero_group_size() {
    let letters = random_letters(&mut ChaCha8Rng::seed_from_u64(0), 5, 2);
    assert!(matches!(poep(&letters, 0, "p"), Err(Error::Parameter { .. })));
}

proptest! {
    #[test]
    fn poep_of_identical_letters_is_exact(values in prop::collection::vec(0.0f64..1.0, 1..8), n in 1usize..30, g in 1usize..10) {
        let letters = vec![FeatureVector::new(values.clone()); n];
        match poep(&letters, g, "p") {
            Ok(out) => {
                prop_assert_eq!(out.len(), n / g);
                for s in out {
                    prop_assert_eq!(s.vector.as_slice(), &values[..]);
                }
            }
            Err(Error::PageSkipped(_)) => prop_assert!(n < g),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn poep_is_order_independent_within_groups(seed in 0u64..1000, g in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let letters = random_letters(&mut rng, 3 * g, 5);
        let mut shuffled = letters.clone();
        for chunk in shuffled.chunks_mut(g) {
            chunk.reverse();
        }
        let a = poep(&letters, g, "p").unwrap();
        let b = poep(&shuffled, g, "p").unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (u, v) in x.vector.as_slice().iter().zip(y.vector.as_slice()) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn border_removal_postcondition_on_synthetic_letters() {
    let cfg = PipelineConfig::default();
    let mut checked = 0;
    for profile in 0..4 {
        let img = page(profile, 1, 25).image;
        for letter in find_letters(&img).unwrap() {
            let peaks = find_two_peaks(&smooth_histogram(&letter_histogram(&img, &letter).unwrap())).unwrap();
            let raw = segment_regions(&img, &letter, peaks, cfg.alpha, cfg.beta).unwrap();
            let done = separate_letter(&img, &letter, cfg.alpha, cfg.beta).unwrap();
            let (w, h) = (raw.bbox.w, raw.bbox.h);
            let edge_near = |x: usize, y: usize| {
                (y.saturating_sub(1)..=(y + 1).min(h - 1))
                    .any(|ny| (x.saturating_sub(1)..=(x + 1).min(w - 1)).any(|nx| raw.label(nx, ny) == Label::Edge))
            };
            for y in 0..h {
                for x in 0..w {
                    match (raw.label(x, y), done.label(x, y)) {
                        (Label::Flat, Label::Flat) => assert!(!edge_near(x, y)),
                        (Label::Flat, Label::Excluded) => assert!(edge_near(x, y)),
                        (a, b) => assert_eq!(a, b),
                    }
                }
            }
            checked += 1;
        }
    }
    assert!(checked >= 100, "only {checked} letters");
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Standard deviation of `samples` projected on the unit vector `u`.
fn projected_std(samples: &[Vec<f64>], mean: &[f64], u: &[f64]) -> f64 {
    let proj = |v: &[f64]| v.iter().zip(mean).zip(u).map(|((x, m), d)| (x - m) * d).sum::<f64>();
    (samples.iter().map(|s| proj(s).powi(2)).sum::<f64>() / samples.len() as f64).sqrt()
}

#[test]
fn default_printers_are_separable_in_feature_space() {
    let ex = Extractor::new(&PipelineConfig::default()).unwrap();
    let mut groups = Vec::new();
    let mut means = Vec::new();
    for profile in 0..4 {
        let samples: Vec<Vec<f64>> = (0..4)
            .flat_map(|i| ex.page(&page(profile, i, 144).image, "p").unwrap().0)
            .map(|s| s.vector.into_inner())
            .collect();
        assert!(samples.len() >= 10);
        let mut mean = vec![0.0; ex.layout().dim()];
        for s in &samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v / samples.len() as f64;
            }
        }
        groups.push(samples);
        means.push(mean);
    }
    for a in 0..4 {
        for b in a + 1..4 {
            let d = distance(&means[a], &means[b]);
            let u: Vec<f64> = means[a].iter().zip(&means[b]).map(|(x, y)| (x - y) / d).collect();
            let sa = projected_std(&groups[a], &means[a], &u);
            let sb = projected_std(&groups[b], &means[b], &u);
            assert!(d > sa.max(sb), "printers {a},{b}: distance {d}, spreads {sa} {sb}");
        }
    }
}

#[test]
fn extraction_is_independent_of_thread_count() {
    let img = page(2, 3, 30).image;
    let cfg = PipelineConfig {
        group_size: 5,
        ..PipelineConfig::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| Extractor::new(&cfg).unwrap().page(&img, "p").unwrap().0)
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(1));
}
