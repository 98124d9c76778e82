use super::*;
use crate::scoring::Grid;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

fn pair_count_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn random_case(rng: &mut Xoshiro256PlusPlus, n: usize, levels: u32) -> (Vec<f64>, Vec<bool>) {
    let scores = (0..n)
        .map(|_| rng.random_range(0..levels) as f64 * 0.1)
        .collect();
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    labels[0] = true;
    labels[1] = false;
    (scores, labels)
}

#[test]
fn auroc_spec_examples() {
    assert_eq!(auroc(&[0.1, 0.9], &[false, true]).unwrap(), 1.0);
    assert_eq!(
        auroc(&[0.3; 5], &[true, false, true, false, false]).unwrap(),
        0.5
    );
    assert!(matches!(
        auroc(&[0.1, 0.2], &[true, true]),
        Err(Error::Validation(_))
    ));
}

#[test]
fn auroc_matches_pair_count_oracle() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
    for case in 0..100 {
        let n = rng.random_range(2..=200);
        let levels = if case % 2 == 0 { 5 } else { 1_000_000 };
        let (s, l) = random_case(&mut rng, n, levels);
        let got = auroc(&s, &l).unwrap();
        assert!((got - pair_count_auroc(&s, &l)).abs() < 1e-12);
    }
}

#[test]
fn roc_trapezoid_equals_auroc() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(12);
    for _ in 0..50 {
        let (s, l) = random_case(&mut rng, 60, 7);
        let roc = roc_curve(&s, &l).unwrap();
        assert_eq!((roc.fpr[0], roc.tpr[0]), (0.0, 0.0));
        assert_eq!(
            (*roc.fpr.last().unwrap(), *roc.tpr.last().unwrap()),
            (1.0, 1.0)
        );
        let trap: f64 = (1..roc.fpr.len())
            .map(|i| (roc.fpr[i] - roc.fpr[i - 1]) * (roc.tpr[i] + roc.tpr[i - 1]) / 2.0)
            .sum();
        assert!((trap - roc.auroc).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn auroc_invariant_under_monotone_maps(seed in 0u64..1000) {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let (s, l) = random_case(&mut rng, 40, 9);
        let base = auroc(&s, &l).unwrap();
        let e: Vec<f64> = s.iter().map(|v| v.exp()).collect();
        let a: Vec<f64> = s.iter().map(|v| 3.0 * v - 7.0).collect();
        prop_assert!((auroc(&e, &l).unwrap() - base).abs() < 1e-12);
        prop_assert!((auroc(&a, &l).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn auroc_of_negated_scores_complements(seed in 0u64..1000) {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let (s, l) = random_case(&mut rng, 30, 1_000_000_000);
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((auroc(&s, &l).unwrap() + auroc(&neg, &l).unwrap() - 1.0).abs() < 1e-12);
    }
}

fn flood_fill_count(mask: &[bool], h: usize, w: usize) -> (usize, Vec<usize>) {
    let mut seen = vec![false; mask.len()];
    let mut sizes = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut size = 0;
        while let Some(p) = stack.pop() {
            size += 1;
            let (y, x) = ((p / w) as i64, (p % w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if mask[q] && !seen[q] {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (sizes.len(), sizes)
}

#[test]
fn components_spec_examples() {
    assert_eq!(connected_components(&[false; 9], 3, 3).count(), 0);
    let diag = [true, false, false, true];
    let c = connected_components(&diag, 2, 2);
    assert_eq!(c.count(), 1);
    assert_eq!(c.sizes, vec![2]);
}

#[test]
fn components_label_order_follows_raster() {
    // a U shape whose arms meet only on the bottom row
    #[rustfmt::skip]
    let m = [
        true, false, true, false, true,
        true, false, true, false, false,
        true, true, true, false, false,
    ];
    let c = connected_components(&m, 3, 5);
    assert_eq!(c.count(), 2);
    assert_eq!(c.labels[0], Some(0));
    assert_eq!(c.labels[2], Some(0));
    assert_eq!(c.labels[4], Some(1));
}

#[test]
fn components_match_flood_fill_oracle() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(13);
    for _ in 0..200 {
        let density = rng.random_range(0.1..0.6);
        let m: Vec<bool> = (0..256).map(|_| rng.random_bool(density)).collect();
        let c = connected_components(&m, 16, 16);
        let (n, mut sizes) = flood_fill_count(&m, 16, 16);
        assert_eq!(c.count(), n);
        let mut got = c.sizes.clone();
        got.sort();
        sizes.sort();
        assert_eq!(got, sizes);
    }
}

/// Recomputes the curve from scratch at every unique threshold.
fn exhaustive_aupro(maps: &[Vec<f64>], masks: &[Vec<bool>], w: usize, limit: f64) -> f64 {
    let mut regions: Vec<(usize, Vec<usize>)> = Vec::new();
    for (img, m) in masks.iter().enumerate() {
        let h = m.len() / w;
        let mut seen = vec![false; m.len()];
        for s in 0..m.len() {
            if m[s] && !seen[s] {
                let mut members = Vec::new();
                let mut stack = vec![s];
                seen[s] = true;
                while let Some(p) = stack.pop() {
                    members.push(p);
                    for q in 0..m.len() {
                        let close = (q / w).abs_diff(p / w) <= 1 && (q % w).abs_diff(p % w) <= 1;
                        if close && m[q] && !seen[q] {
                            seen[q] = true;
                            stack.push(q);
                        }
                    }
                }
                regions.push((img, members));
            }
        }
        let _ = h;
    }
    let mut ts: Vec<f64> = maps.iter().flatten().copied().collect();
    ts.sort_by(|a, b| b.total_cmp(a));
    ts.dedup();
    let normal = masks.iter().flatten().filter(|&&b| !b).count() as f64;
    let mut pts = vec![(0.0, 0.0)];
    for &t in &ts {
        let fp = maps
            .iter()
            .zip(masks)
            .flat_map(|(s, m)| s.iter().zip(m))
            .filter(|(&s, &m)| s >= t && !m)
            .count() as f64;
        let pro = regions
            .iter()
            .map(|(img, mem)| {
                mem.iter().filter(|&&p| maps[*img][p] >= t).count() as f64 / mem.len() as f64
            })
            .sum::<f64>()
            / regions.len() as f64;
        pts.push((fp / normal, pro));
    }
    let mut area = 0.0;
    for win in pts.windows(2) {
        let ((x0, y0), (x1, _)) = (win[0], win[1]);
        if x0 >= limit {
            break;
        }
        area += y0 * (x1.min(limit) - x0);
    }
    area / limit
}

fn eight_by_eight_case(rng: &mut Xoshiro256PlusPlus, levels: u32) -> (Vec<f64>, Vec<bool>) {
    let mut mask = vec![false; 64];
    for _ in 0..2 {
        let (y, x) = (rng.random_range(0..6), rng.random_range(0..6));
        let (hh, ww) = (rng.random_range(1..=3), rng.random_range(1..=3));
        for yy in y..(y + hh).min(8) {
            for xx in x..(x + ww).min(8) {
                mask[yy * 8 + xx] = true;
            }
        }
    }
    let scores = mask
        .iter()
        .map(|&m| {
            let base = if m { 0.4 } else { 0.0 };
            ((base + rng.random_range(0.0..0.6)) * levels as f64).floor() / levels as f64
        })
        .collect();
    (scores, mask)
}

#[test]
fn aupro_matches_exhaustive_oracle() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(14);
    for case in 0..200 {
        let levels = if case % 2 == 0 { 6 } else { 1_000_000 };
        let n_img = rng.random_range(1..=3);
        let (mut maps, mut masks) = (Vec::new(), Vec::new());
        for _ in 0..n_img {
            let (s, m) = eight_by_eight_case(&mut rng, levels);
            maps.push(s);
            masks.push(m);
        }
        let refs: Vec<&[f64]> = maps.iter().map(Vec::as_slice).collect();
        let mrefs: Vec<&[bool]> = masks.iter().map(Vec::as_slice).collect();
        for limit in [0.3, 0.1, 1.0] {
            let got = aupro(&refs, &mrefs, &vec![8; n_img], limit).unwrap();
            let want = exhaustive_aupro(&maps, &masks, 8, limit);
            assert!(
                (got - want).abs() < 1e-9,
                "case {case} limit {limit}: {got} vs {want}"
            );
            assert!((0.0..=1.0).contains(&got));
        }
    }
}

#[test]
fn aupro_perfect_and_constant() {
    let mut mask = vec![false; 64];
    for i in [9, 10, 17, 18, 45] {
        mask[i] = true;
    }
    let perfect: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    assert_eq!(aupro(&[&perfect], &[&mask], &[8], 0.3).unwrap(), 1.0);
    let constant = vec![0.7; 64];
    assert_eq!(aupro(&[&constant], &[&mask], &[8], 0.3).unwrap(), 0.0);
    assert!(matches!(
        aupro(&[&constant], &[&[false; 64]], &[8], 0.3),
        Err(Error::Validation(_))
    ));
}

#[test]
fn shrinking_fpr_limit_never_raises_aupro_for_monotone_scores() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(15);
    for _ in 0..100 {
        let (s, m) = eight_by_eight_case(&mut rng, 1_000_000);
        let curve = pro_curve(&[&s], &[&m], &[8], MAX_PRO_THRESHOLDS).unwrap();
        let oracle_full =
            exhaustive_aupro(std::slice::from_ref(&s), std::slice::from_ref(&m), 8, 0.3);
        assert!((curve.area(0.3).unwrap() - oracle_full).abs() < 1e-9);
        assert!(curve.pro.windows(2).all(|w| w[1] >= w[0]));
        assert!(curve.fpr.windows(2).all(|w| w[1] >= w[0]));
        let areas: Vec<f64> = [0.05, 0.1, 0.2, 0.3, 0.6, 1.0]
            .iter()
            .map(|&l| curve.area(l).unwrap())
            .collect();
        assert!(areas.windows(2).all(|w| w[0] <= w[1] + 1e-15), "{areas:?}");
    }
}

#[test]
fn coarse_grid_caps_threshold_count() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(16);
    let (mut maps, mut masks) = (Vec::new(), Vec::new());
    for _ in 0..40 {
        let (s, m) = eight_by_eight_case(&mut rng, 1_000_000_000);
        maps.push(s);
        masks.push(m);
    }
    let refs: Vec<&[f64]> = maps.iter().map(Vec::as_slice).collect();
    let mrefs: Vec<&[bool]> = masks.iter().map(Vec::as_slice).collect();
    let coarse = pro_curve(&refs, &mrefs, &[8; 40], MAX_PRO_THRESHOLDS).unwrap();
    assert!(coarse.coarse);
    assert!(coarse.thresholds.len() <= MAX_PRO_THRESHOLDS + 1);
    assert_eq!(*coarse.fpr.last().unwrap(), 1.0);
    let exact = exhaustive_aupro(&maps, &masks, 8, 0.3);
    assert!((coarse.area(0.3).unwrap() - exact).abs() < 5e-3);
}

fn map(h: usize, w: usize, v: Vec<f64>) -> AnomalyMap {
    AnomalyMap {
        scores: Grid::new(h, w, v).unwrap(),
        probabilities: Vec::new(),
        threshold: None,
    }
}

fn toy_set() -> (Vec<Vec<bool>>, Vec<bool>) {
    let mut a = vec![false; 16];
    a[5] = true;
    a[6] = true;
    let mut b = vec![false; 16];
    b[15] = true;
    (vec![vec![false; 16], a, b], vec![false, true, true])
}

#[test]
fn evaluate_masks_as_maps_scores_one() {
    let (masks, labels) = toy_set();
    let maps: Vec<AnomalyMap> = masks
        .iter()
        .map(|m| map(4, 4, m.iter().map(|&b| b as u8 as f64).collect()))
        .collect();
    let r = evaluate(&EvalInput {
        class: "toy",
        maps: &maps,
        labels: &labels,
        masks: Some(&masks),
        reduction: ImageReduction::Max,
        pooling: PixelPooling::Pooled,
        fpr_limit: DEFAULT_FPR_LIMIT,
    })
    .unwrap();
    assert_eq!(r.detection_auroc, Some(1.0));
    assert_eq!(r.localization_auroc, Some(1.0));
    assert_eq!(r.aupro, Some(1.0));
    assert_eq!(r.csv_row(), "toy,1.000000,1.000000,1.000000");
}

#[test]
fn evaluate_inverted_maps_and_missing_masks() {
    let (masks, labels) = toy_set();
    let maps: Vec<AnomalyMap> = masks
        .iter()
        .map(|m| map(4, 4, m.iter().map(|&b| 1.0 - b as u8 as f64).collect()))
        .collect();
    let mut input = EvalInput {
        class: "toy",
        maps: &maps,
        labels: &labels,
        masks: Some(&masks),
        reduction: ImageReduction::Max,
        pooling: PixelPooling::Pooled,
        fpr_limit: DEFAULT_FPR_LIMIT,
    };
    assert_eq!(evaluate(&input).unwrap().localization_auroc, Some(0.0));
    input.masks = None;
    let r = evaluate(&input).unwrap();
    assert_eq!((r.localization_auroc, r.aupro), (None, None));
    assert!(r.detection_auroc.is_some());
    assert_eq!(r.csv_row().matches("n/a").count(), 2);
    assert!(report_csv(&[r]).starts_with(REPORT_HEADER));
}

#[test]
fn per_image_pooling_skips_single_class_images() {
    let (masks, labels) = toy_set();
    let maps: Vec<AnomalyMap> = masks
        .iter()
        .enumerate()
        .map(|(i, m)| map(4, 4, m.iter().map(|&b| b as u8 as f64 + i as f64).collect()))
        .collect();
    let base = EvalInput {
        class: "toy",
        maps: &maps,
        labels: &labels,
        masks: Some(&masks),
        reduction: ImageReduction::Max,
        pooling: PixelPooling::PerImage,
        fpr_limit: DEFAULT_FPR_LIMIT,
    };
    assert_eq!(evaluate(&base).unwrap().localization_auroc, Some(1.0));
    let pooled = evaluate(&EvalInput {
        pooling: PixelPooling::Pooled,
        ..base
    })
    .unwrap();
    assert!(pooled.localization_auroc.unwrap() < 1.0);
}
