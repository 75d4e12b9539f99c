mod oracle;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenecomp_core::geometry::{BBox, TokenGrid};
use scenecomp_core::rope::*;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn rotation_matches_pairwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for dim in [8, 16, 32] {
        let cfg = RopeConfig::new(dim).unwrap();
        for _ in 0..50 {
            let v = vector(&mut rng, dim);
            let p = [
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
            ];
            let got = rope_rotate(&v, p, &cfg).unwrap();
            for (a, b) in got.iter().zip(oracle::rotate(&v, p, &cfg)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn unit_scale_boxes_reproduce_canonical_positions() {
    let cfg = RopeConfig::new(16).unwrap();
    for c in 1..=12 {
        let grid = TokenGrid::from_pixels(16, 16, 1).unwrap();
        for x1 in [0, 16 - c] {
            let b = BBox::<f64>::from_corners(3, x1, 16 - c, x1 + c, 16, &grid).unwrap();
            let keys = canonical_key_positions(1, c, c);
            let mut i = 0;
            for y in b.y1..b.y2 {
                for x in b.x1..b.x2 {
                    let p = grounded_position(0, x, y, Some(&b), c, c, &cfg);
                    assert_eq!(p, keys[i]);
                    i += 1;
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn relative_position_identity_on_each_axis(seed in any::<u64>(), axis in 0usize..3, shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = RopeConfig::new(16).unwrap();
        let (q, k) = (vector(&mut rng, 16), vector(&mut rng, 16));
        let p1 = [rng.random_range(0.0..20.0), rng.random_range(0.0..20.0), rng.random_range(0.0..20.0)];
        let p2 = [rng.random_range(0.0..20.0), rng.random_range(0.0..20.0), rng.random_range(0.0..20.0)];
        let (mut s1, mut s2) = (p1, p2);
        s1[axis] += shift;
        s2[axis] += shift;
        let a = dot(&rope_rotate(&q, p1, &cfg).unwrap(), &rope_rotate(&k, p2, &cfg).unwrap());
        let b = dot(&rope_rotate(&q, s1, &cfg).unwrap(), &rope_rotate(&k, s2, &cfg).unwrap());
        prop_assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn rotation_preserves_norm(seed in any::<u64>(), scale in 1.0f64..1e4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = RopeConfig::new(32).unwrap();
        let v = vector(&mut rng, 32);
        let p = [rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-scale..scale)];
        let r = rope_rotate(&v, p, &cfg).unwrap();
        prop_assert!((dot(&r, &r).sqrt() - dot(&v, &v).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn corners_map_to_canonical_corners(x1 in 0usize..20, y1 in 0usize..20, w in 1usize..13, h in 1usize..13, hc in 1usize..25, wc in 1usize..25) {
        let grid = TokenGrid::from_pixels(32, 32, 1).unwrap();
        let b = BBox::<f64>::from_corners(0, x1, y1, x1 + w, y1 + h, &grid).unwrap();
        prop_assert_eq!(grounded_coordinates(x1 as f64, y1 as f64, &b, hc, wc).unwrap(), (0.0, 0.0));
        prop_assert_eq!(grounded_coordinates((x1 + w) as f64, (y1 + h) as f64, &b, hc, wc).unwrap(), (wc as f64, hc as f64));
    }

    #[test]
    fn background_queries_share_one_rotation(x1 in 0usize..6, y1 in 0usize..6, w in 1usize..3, h in 1usize..3, t in 0usize..4) {
        let cfg = RopeConfig::new(16).unwrap();
        let grid = TokenGrid::from_pixels(8, 8, 1).unwrap();
        let b = BBox::<f64>::from_corners(t, x1, y1, x1 + w, y1 + h, &grid).unwrap();
        let outside: Vec<[f64; 3]> = (0..8)
            .flat_map(|y| (0..8).map(move |x| (x, y)))
            .filter(|&(x, y)| !b.contains(x, y))
            .map(|(x, y)| grounded_position(t, x, y, Some(&b), 4, 4, &cfg))
            .collect();
        let first = Rotation::<f64>::at(outside[0], &cfg);
        for p in &outside {
            prop_assert_eq!(&Rotation::<f64>::at(*p, &cfg), &first);
        }
    }

    #[test]
    fn grounded_logits_ignore_box_size(seed in any::<u64>(), side in 1usize..5, m in 2usize..4, i in 0usize..5, j in 0usize..5) {
        let (i, j) = (i % side, j % side);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = RopeConfig::new(16).unwrap();
        let c = 8;
        let grid = TokenGrid::from_pixels(16, 16, 1).unwrap();
        let small = BBox::<f64>::from_corners(0, 0, 0, side, side, &grid).unwrap();
        let large = BBox::<f64>::from_corners(0, 1, 1, 1 + m * side, 1 + m * side, &grid).unwrap();
        let q = vector(&mut rng, 16);
        let k = vector(&mut rng, 16);
        let pa = grounded_position(0, i, j, Some(&small), c, c, &cfg);
        let pb = grounded_position(0, 1 + m * i, 1 + m * j, Some(&large), c, c, &cfg);
        let (qa, qb) = (rope_rotate(&q, pa, &cfg).unwrap(), rope_rotate(&q, pb, &cfg).unwrap());
        // every key carries the same vector, so logits depend only on offsets
        for key in canonical_key_positions(1, c, c) {
            let rk = rope_rotate(&k, key, &cfg).unwrap();
            prop_assert!((dot(&qa, &rk) - dot(&qb, &rk)).abs() < 1e-9);
        }
    }
}
