use cropforge_core::crop::{anchor_region, compute_moments, soft_binarize_value, AnchorParams};
use cropforge_core::imaging::{resize_shorter_side, Image};
use cropforge_core::metrics::{bde, iou};
use cropforge_core::offsets::{decode_unclamped, encode_offsets, OffsetCoefficients};
use cropforge_core::tape::Tape;
use cropforge_core::{Rect, SaliencyMap, Tensor};
use proptest::prelude::*;

fn map_strategy(max_side: usize) -> impl Strategy<Value = SaliencyMap> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(w, h)| {
        prop::collection::vec(0.0..=1.0f64, w * h).prop_map(move |v| SaliencyMap::new(w, h, v).unwrap())
    })
}

fn rect_strategy() -> impl Strategy<Value = Rect> {
    (-50.0..50.0f64, -50.0..50.0f64, 0.5..80.0f64, 0.5..80.0f64)
        .prop_map(|(x, y, w, h)| Rect::new(x, y, x + w, y + h))
}

/// Raw moments by direct summation, rows outermost.
fn brute_moments(map: &SaliencyMap) -> [f64; 5] {
    let mut m = [0.0; 5];
    for j in 0..map.height() {
        for i in 0..map.width() {
            let s = map.get(i, j);
            let (x, y) = (i as f64, j as f64);
            m[0] += s;
            m[1] += x * s;
            m[2] += y * s;
            m[3] += x * x * s;
            m[4] += y * y * s;
        }
    }
    m
}

/// Map holding a filled `w x h` block at `(x0, y0)` with a smooth interior profile.
fn block(width: usize, height: usize, x0: usize, y0: usize, w: usize, h: usize) -> SaliencyMap {
    let mut map = SaliencyMap::zeros(width, height);
    for j in 0..h {
        for i in 0..w {
            let v = 0.3 + 0.7 * ((i * 7 + j * 3) % 11) as f64 / 10.0;
            map.set(x0 + i, y0 + j, v);
        }
    }
    map
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn moments_match_brute_force_bitwise(map in map_strategy(24)) {
        let m = compute_moments(&map);
        let b = brute_moments(&map);
        prop_assert_eq!([m.m00, m.m10, m.m01, m.m20, m.m02].map(f64::to_bits), b.map(f64::to_bits));
    }

    #[test]
    fn anchor_translates_with_content(
        w in 3usize..8, h in 3usize..8, x0 in 20usize..30, y0 in 20usize..30, dx in 0usize..10, dy in 0usize..10,
    ) {
        let params = AnchorParams::with_gamma(1.0);
        let a = anchor_region(&block(64, 64, x0, y0, w, h), &params);
        let b = anchor_region(&block(64, 64, x0 + dx, y0 + dy, w, h), &params);
        let shifted = a.rect.translate(dx as f64, dy as f64);
        for (p, q) in shifted.corners().iter().zip(b.rect.corners()) {
            prop_assert!((p - q).abs() < 1e-9, "{:?} vs {:?}", shifted, b.rect);
        }
    }

    #[test]
    fn anchor_stays_in_frame(map in map_strategy(20), gamma in 0.5..5.0f64) {
        let a = anchor_region(&map, &AnchorParams::with_gamma(gamma));
        prop_assert!(map.bounds().contains_rect(&a.rect));
    }

    #[test]
    fn offsets_round_trip(anchor in rect_strategy(), crop in rect_strategy()) {
        let c = encode_offsets(&anchor, &crop).unwrap();
        prop_assume!(c.is_decodable() && 1.0 - c.alpha_t - c.alpha_b >= 0.05 && 1.0 - c.beta_t - c.beta_b >= 0.05);
        let back = decode_unclamped(&anchor, &c).unwrap();
        for (p, q) in back.corners().iter().zip(crop.corners()) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_offsets_decode_to_anchor(anchor in rect_strategy()) {
        prop_assert_eq!(decode_unclamped(&anchor, &OffsetCoefficients::ZERO).unwrap(), anchor);
    }

    #[test]
    fn offsets_are_scale_and_translation_invariant(
        anchor in rect_strategy(), crop in rect_strategy(), k in 0.25..4.0f64, t in -30.0..30.0f64,
    ) {
        let c = encode_offsets(&anchor, &crop).unwrap().to_array();
        let scaled = encode_offsets(&anchor.scale(k, k), &crop.scale(k, k)).unwrap().to_array();
        let moved = encode_offsets(&anchor.translate(t, -t), &crop.translate(t, -t)).unwrap().to_array();
        for i in 0..4 {
            prop_assert!((c[i] - scaled[i]).abs() < 1e-9);
            prop_assert!((c[i] - moved[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn iou_properties(a in rect_strategy(), b in rect_strategy(), k in 0.5..3.0f64, t in -20.0..20.0f64) {
        let v = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert_eq!(iou(&a, &a), 1.0);
        prop_assert!((iou(&a.scale(k, k), &b.scale(k, k)) - v).abs() < 1e-12);
        prop_assert!((iou(&a.translate(t, t), &b.translate(t, t)) - v).abs() < 1e-12);
    }

    #[test]
    fn bde_properties(a in rect_strategy(), b in rect_strategy(), w in 1usize..500, h in 1usize..500) {
        let d = bde(&a, &b, w, h).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d, bde(&b, &a, w, h).unwrap());
        prop_assert_eq!(bde(&a, &a, w, h).unwrap(), 0.0);
        // doubling image and rectangles leaves the normalized error unchanged
        let d2 = bde(&a.scale(2.0, 2.0), &b.scale(2.0, 2.0), 2 * w, 2 * h).unwrap();
        prop_assert!((d - d2).abs() < 1e-12);
    }

    #[test]
    fn bce_gradient_is_p_minus_s(z in prop::collection::vec(-8.0..8.0f64, 1..40), seed in 0u64..1000) {
        let s: Vec<f64> = (0..z.len()).map(|i| ((i as u64 * 31 + seed) % 5) as f64 / 4.0).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(z.clone()), true);
        let loss = tape.bce_with_logits(x, &s).unwrap();
        let g = tape.backward(loss).unwrap();
        for ((gi, zi), si) in g.get(x).unwrap().iter().zip(&z).zip(&s) {
            let p = 1.0 / (1.0 + (-zi).exp());
            prop_assert!((gi - (p - si)).abs() < 1e-6);
        }
    }

    #[test]
    fn soft_binarize_is_monotone_and_bounded(a in 0.0..=1.0f64, b in 0.0..=1.0f64, sigma in 1e-3..1.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (rl, rh) = (soft_binarize_value(lo, sigma), soft_binarize_value(hi, sigma));
        prop_assert!((0.0..1.0).contains(&rl) && (0.0..1.0).contains(&rh));
        prop_assert!(rl <= rh);
    }

    #[test]
    fn resize_hits_target_side(h in 16usize..300, w in 16usize..300, target in 8usize..100) {
        let img = Image::filled(1, h, w, 0.5);
        let (out, _) = resize_shorter_side(&img, target, 8).unwrap();
        let short = out.height().min(out.width());
        prop_assert_eq!(short, (target / 8) * 8);
        prop_assert!(out.height() % 8 == 0 && out.width() % 8 == 0);
    }
}
