use latscope_core::image::{compose_grid, GridLayout, ImageBuffer};
use latscope_core::traverse::{extrapolate_two_sided, lerp, slerp};
use latscope_core::{
    dcgan64_architecture, evaluate_arithmetic, tensor_to_image, traverse, AnchorSet,
    ArithmeticExpression, GeneratorModel, LatentSpace, LatentVector, Sign, Tensor, TraversalKind,
};
use proptest::prelude::*;
use std::sync::OnceLock;

fn latent(dim: usize) -> impl Strategy<Value = LatentVector> {
    prop::collection::vec(-5.0f64..5.0, dim)
        .prop_map(|v| LatentVector::new(v, LatentSpace::UniformCube).unwrap())
}

fn pair() -> impl Strategy<Value = (LatentVector, LatentVector)> {
    (2usize..24).prop_flat_map(|d| (latent(d), latent(d)))
}

fn dist(a: &LatentVector, b: &LatentVector) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn tiny_model() -> &'static GeneratorModel {
    static M: OnceLock<GeneratorModel> = OnceLock::new();
    M.get_or_init(|| dcgan64_architecture(3, 1.0 / 64.0).unwrap())
}

/// Values on a 1/8 grid; sums and power-of-two means stay exact.
fn eighths(dim: usize, count: usize) -> impl Strategy<Value = Vec<LatentVector>> {
    prop::collection::vec(
        prop::collection::vec((-32i32..=32).prop_map(|k| k as f64 / 8.0), dim)
            .prop_map(|v| LatentVector::new(v, LatentSpace::UniformCube).unwrap()),
        count,
    )
}

fn naive_mean(zs: &[LatentVector]) -> Vec<f64> {
    let dim = zs[0].dim();
    let mut acc = vec![0.0; dim];
    for z in zs {
        for (a, v) in acc.iter_mut().zip(z.values()) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / zs.len() as f64).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lerp_endpoints_bitwise((a, b) in pair(), n in 2usize..40) {
        let s = lerp(&a, &b, n).unwrap();
        prop_assert_eq!(s.points.len(), n);
        prop_assert_eq!(&s.points[0], &a);
        prop_assert_eq!(&s.points[n - 1], &b);
    }

    #[test]
    fn extrapolation_jump_sits_at_the_middle((a, b) in pair()) {
        prop_assume!(a != b);
        let s = extrapolate_two_sided(&a, &b, 16).unwrap();
        let ab = dist(&a, &b);
        for i in 0..15 {
            let gap = dist(&s.points[i], &s.points[i + 1]);
            let want = if i == 7 { 2.0 * ab } else { ab / 15.0 };
            prop_assert!((gap - want).abs() <= 1e-12 * want, "gap {} = {}, want {}", i, gap, want);
        }
    }

    #[test]
    fn slerp_preserves_equal_norms((a, b) in pair(), n in 2usize..20) {
        prop_assume!(a.norm() > 1e-3 && b.norm() > 1e-3);
        let scale = a.norm() / b.norm();
        let b = LatentVector::new(b.values().iter().map(|v| v * scale).collect(), b.space()).unwrap();
        // antiparallel endpoints have no unique great circle
        if let Ok(s) = slerp(&a, &b, n) {
            for p in &s.points {
                prop_assert!((p.norm() - a.norm()).abs() <= 1e-6 * a.norm());
            }
        }
    }

    #[test]
    fn traversals_are_pure((a, b) in pair(), k in 0usize..4) {
        let kind = [
            TraversalKind::Linear,
            TraversalKind::ExtrapolateTwoSided,
            TraversalKind::CircularPaper,
            TraversalKind::Slerp,
        ][k];
        if let Ok(first) = traverse(kind, &a, &b, 16, 1.0) {
            let again = traverse(kind, &a, &b, 16, 1.0).unwrap();
            for (x, y) in first.points.iter().zip(&again.points) {
                let xb: Vec<u64> = x.values().iter().map(|v| v.to_bits()).collect();
                let yb: Vec<u64> = y.values().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(xb, yb);
            }
        }
    }

    #[test]
    fn arithmetic_is_linear_and_exact_on_binary_values(
        (dim, sets) in (1usize..12, 0usize..3, 0usize..3, 0usize..3).prop_flat_map(|(d, x, y, z)| {
            (Just(d), (eighths(d, 1 << x), eighths(d, 1 << y), eighths(d, 1 << z)))
        }),
    ) {
        let sets = [sets.0, sets.1, sets.2];
        let named = |i: usize| AnchorSet::new(["a", "b", "c"][i], ["x"], sets[i].clone()).unwrap();
        let expr = ArithmeticExpression::new(vec![
            (Sign::Plus, named(0)),
            (Sign::Minus, named(1)),
            (Sign::Plus, named(2)),
        ])
        .unwrap();
        let got = evaluate_arithmetic(&expr).unwrap();
        let (ma, mb, mc) = (naive_mean(&sets[0]), naive_mean(&sets[1]), naive_mean(&sets[2]));
        let want: Vec<f64> = (0..dim).map(|i| ma[i] - mb[i] + mc[i]).collect();
        prop_assert_eq!(got.values(), &want[..]);
    }

    #[test]
    fn arithmetic_is_linear_within_tolerance(
        a in prop::collection::vec(latent(6), 1..5),
        b in prop::collection::vec(latent(6), 1..5),
        c in prop::collection::vec(latent(6), 1..5),
    ) {
        let expr = ArithmeticExpression::new(vec![
            (Sign::Plus, AnchorSet::new("a", ["x"], a.clone()).unwrap()),
            (Sign::Minus, AnchorSet::new("b", ["x"], b.clone()).unwrap()),
            (Sign::Plus, AnchorSet::new("c", ["x"], c.clone()).unwrap()),
        ])
        .unwrap();
        let got = evaluate_arithmetic(&expr).unwrap();
        let (ma, mb, mc) = (naive_mean(&a), naive_mean(&b), naive_mean(&c));
        for i in 0..6 {
            let want = ma[i] - mb[i] + mc[i];
            let scale = ma[i].abs() + mb[i].abs() + mc[i].abs();
            prop_assert!((got.values()[i] - want).abs() <= 1e-12 * scale.max(1.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn tanh_output_stays_in_range(z in prop::collection::vec(-50.0f64..50.0, 100)) {
        let m = tiny_model();
        let out = m.forward(&LatentVector::new(z, LatentSpace::UniformCube).unwrap()).unwrap();
        prop_assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn forward_is_deterministic(z in latent(100)) {
        let m = tiny_model();
        let x = m.forward(&z).unwrap();
        let y = m.forward(&z).unwrap();
        let xb: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
        let yb: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(xb, yb);
    }

    #[test]
    fn grid_preserves_hot_pixels(
        count in 1usize..10,
        cols in 1usize..5,
        w in 1usize..6,
        h in 1usize..6,
        pick in any::<prop::sample::Index>(),
        pad in 0usize..3,
    ) {
        let which = pick.index(count);
        let (hx, hy) = (w - 1, h / 2);
        let tiles: Vec<ImageBuffer> = (0..count)
            .map(|i| {
                let mut px = vec![0u8; w * h * 3];
                if i == which {
                    let o = (hy * w + hx) * 3;
                    px[o..o + 3].copy_from_slice(&[255, 17, 3]);
                }
                ImageBuffer::new(w, h, px).unwrap()
            })
            .collect();
        let layout = GridLayout { cols, pad_px: pad, pad_value: 0 };
        let g = compose_grid(&tiles, layout).unwrap();
        let (r, c) = (which / cols, which % cols);
        let x0 = pad + c * (w + pad);
        let y0 = pad + r * (h + pad);
        prop_assert_eq!(g.pixel(x0 + hx, y0 + hy), [255, 17, 3]);
        let lit = g.pixels().chunks(3).filter(|p| p != &[0, 0, 0]).count();
        prop_assert_eq!(lit, 1);
    }

    #[test]
    fn image_mapping_is_monotone(a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let img = tensor_to_image(&Tensor::new(vec![3, 1, 2], vec![lo, hi, lo, hi, lo, hi]).unwrap()).unwrap();
        let [l, _, _] = img.pixel(0, 0);
        let [u, _, _] = img.pixel(1, 0);
        prop_assert!(l <= u);
    }
}
