use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sketchdial_core::raster::{build_mask, render, Bitmap};
use sketchdial_core::stroke::{Pen, Polyline, SketchDrawing};

/// Per-pixel definition: set when ink lies on both sides of the pixel along its row,
/// or on both sides along its column.
fn mask_oracle(b: &Bitmap) -> Bitmap {
    let (w, h) = (b.width(), b.height());
    let mut out = Bitmap::new(w, h).unwrap();
    for y in 0..h {
        for x in 0..w {
            let left = (0..=x).any(|i| b.get(i, y));
            let right = (x..w).any(|i| b.get(i, y));
            let up = (0..=y).any(|j| b.get(x, j));
            let down = (y..h).any(|j| b.get(x, j));
            out.set(x, y, (left && right) || (up && down));
        }
    }
    out
}

fn random_polylines(rng: &mut ChaCha8Rng, integer: bool) -> Vec<Polyline> {
    let n = rng.random_range(1..5);
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..12);
            (0..len)
                .map(|_| {
                    if integer {
                        [
                            rng.random_range(0..256) as f64,
                            rng.random_range(0..256) as f64,
                        ]
                    } else {
                        [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)]
                    }
                })
                .collect()
        })
        .collect()
}

#[test]
fn mask_matches_per_pixel_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let d = SketchDrawing::from_raw(&random_polylines(&mut rng, true), "x").unwrap();
        let b = render(&d, 64, 64).unwrap();
        assert_eq!(build_mask(&b), mask_oracle(&b));
    }
}

#[test]
fn codec_round_trip_on_integer_grids_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..1000 {
        let lines = random_polylines(&mut rng, true);
        let d = SketchDrawing::from_raw(&lines, "x").unwrap();
        assert_eq!(d.to_absolute(), lines);
        d.validate().unwrap();
        assert_eq!(d.strokes.last().unwrap().pen, Pen::End);
        let ups = d.strokes.iter().filter(|s| s.pen == Pen::Up).count();
        assert_eq!(ups, lines.len() - 1);
        assert_eq!(
            d.strokes.len(),
            1 + lines.iter().map(Vec::len).sum::<usize>()
        );
    }
}

#[test]
fn codec_round_trip_on_real_coordinates_is_close() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let lines = random_polylines(&mut rng, false);
        let back = SketchDrawing::from_raw(&lines, "x").unwrap().to_absolute();
        for (p, q) in lines.iter().flatten().zip(back.iter().flatten()) {
            assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
        }
    }
}

#[test]
fn reapplying_the_mask_can_grow_it() {
    let b = Bitmap::from_bits(
        3,
        3,
        vec![true, false, false, false, false, true, true, false, false],
    )
    .unwrap();
    let m = build_mask(&b);
    assert_eq!(
        m.bits(),
        &[true, false, false, true, false, true, true, false, false]
    );
    assert_eq!(build_mask(&m).count(), m.count() + 1);
    let rect = Bitmap::from_bits(3, 2, vec![true, true, true, true, false, true]).unwrap();
    assert_eq!(build_mask(&build_mask(&rect)), build_mask(&rect));
}

fn bitmap_strategy() -> impl Strategy<Value = Bitmap> {
    (1usize..20, 1usize..20).prop_flat_map(|(w, h)| {
        proptest::collection::vec(proptest::bool::weighted(0.15), w * h)
            .prop_map(move |bits| Bitmap::from_bits(w, h, bits).unwrap())
    })
}

proptest! {
    #[test]
    fn mask_is_superset_extensive_and_mirror_symmetric(b in bitmap_strategy()) {
        let m = build_mask(&b);
        prop_assert!(b.is_subset_of(&m));
        prop_assert!(m.is_subset_of(&build_mask(&m)));
        prop_assert_eq!(build_mask(&b.flipped_horizontal()), m.flipped_horizontal());
        prop_assert_eq!(m, mask_oracle(&b));
    }
}
