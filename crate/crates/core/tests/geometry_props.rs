use proptest::prelude::*;
use taskgrasp::geometry::{
    cross_section, polygon_bool, signed_distance, BoolOp, Point2, Polygon, PolygonSet,
};
use taskgrasp::partgen::{build_gear, GearLayer};

/// Star-shaped polygon around `c` with strictly increasing angles.
fn star(c: Point2, radii: &[f64], jitter: &[f64]) -> Polygon {
    let n = radii.len();
    let pts = (0..n)
        .map(|i| {
            let a = (i as f64 + 0.8 * jitter[i]) * std::f64::consts::TAU / n as f64;
            c + Point2::new(radii[i] * a.cos(), radii[i] * a.sin())
        })
        .collect();
    Polygon::new(pts).unwrap()
}

fn arb_star() -> impl Strategy<Value = Polygon> {
    (3usize..12)
        .prop_flat_map(|n| {
            (
                (-6.0..6.0f64, -6.0..6.0f64),
                prop::collection::vec(1.0..10.0f64, n),
                prop::collection::vec(0.0..1.0f64, n),
            )
        })
        .prop_map(|((x, y), r, j)| star(Point2::new(x, y), &r, &j))
}

fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn boolean_results_are_valid(a in arb_star(), b in arb_star()) {
        let (a, b) = (PolygonSet::single(a), PolygonSet::single(b));
        for op in [BoolOp::Union, BoolOp::Intersect, BoolOp::Subtract] {
            let r = polygon_bool(&a, &b, op);
            prop_assert!(r.is_valid(), "{:?} produced invalid output", op);
        }
    }

    #[test]
    fn inclusion_exclusion(a in arb_star(), b in arb_star()) {
        let (a, b) = (PolygonSet::single(a), PolygonSet::single(b));
        let u = polygon_bool(&a, &b, BoolOp::Union).area();
        let i = polygon_bool(&a, &b, BoolOp::Intersect).area();
        prop_assert!(rel_close(u + i, a.area() + b.area()), "{} vs {}", u + i, a.area() + b.area());
        let d = polygon_bool(&a, &b, BoolOp::Subtract).area();
        prop_assert!(rel_close(d + i, a.area()));
    }

    #[test]
    fn signed_distance_is_lipschitz(
        a in arb_star(),
        p in (-20.0..20.0f64, -20.0..20.0f64),
        q in (-20.0..20.0f64, -20.0..20.0f64),
    ) {
        let set = PolygonSet::single(a);
        let (p, q) = (Point2::new(p.0, p.1), Point2::new(q.0, q.1));
        let gap = (signed_distance(p, &set) - signed_distance(q, &set)).abs();
        prop_assert!(gap <= (p - q).norm() + 1e-9);
    }

    #[test]
    fn gear_sections_shrink_with_height(
        layers in prop::collection::vec((4usize..50, 0.0..6.28f64, 3.0..12.0f64), 1..5),
    ) {
        let mut radius = 38.0;
        let mut built = Vec::new();
        for (sides, phase, height) in layers {
            if radius < 8.0 {
                break;
            }
            built.push(GearLayer { radius, sides, phase, height });
            radius = radius * (std::f64::consts::PI / sides as f64).cos() - 1.0;
        }
        let gear = build_gear(1, &built).unwrap();
        let mut prev = f64::INFINITY;
        let top = gear.max_height();
        let mut z = 0.0;
        while z < top + 1.0 {
            let a = cross_section(&gear, z).area();
            prop_assert!(a <= prev + 1e-9);
            prev = a;
            z += 0.5;
        }
    }
}

#[test]
fn two_layer_gear_section_between_layers() {
    let g = build_gear(
        1,
        &[
            GearLayer { radius: 30.0, sides: 6, phase: 0.0, height: 5.0 },
            GearLayer { radius: 15.0, sides: 6, phase: 0.0, height: 5.0 },
        ],
    )
    .unwrap();
    let hole = std::f64::consts::PI * 3.15f64.powi(2);
    let hex = |r: f64| 1.5 * 3f64.sqrt() * r * r;
    // 32-gon hole area, not the circle
    let hole32 = 0.5 * 32.0 * 3.15f64.powi(2) * (std::f64::consts::TAU / 32.0).sin();
    assert!((hole - hole32) < 0.3);
    assert!((cross_section(&g, 2.0).area() - (hex(30.0) - hole32)).abs() < 1e-6);
    assert!((cross_section(&g, 7.0).area() - (hex(15.0) - hole32)).abs() < 1e-6);
    assert!(cross_section(&g, 10.5).is_empty());
}

fn arb_grid_rects() -> impl Strategy<Value = PolygonSet> {
    prop::collection::vec((0i32..8, 0i32..8, 1i32..5, 1i32..5), 1..5).prop_map(|rs| {
        let mut acc = PolygonSet::empty();
        for (x, y, w, h) in rs {
            let r = Polygon::rectangle(
                Point2::new(x as f64, y as f64),
                Point2::new((x + w) as f64, (y + h) as f64),
            )
            .unwrap();
            acc = polygon_bool(&acc, &PolygonSet::single(r), BoolOp::Union);
        }
        acc
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn degenerate_grid_booleans(a in arb_grid_rects(), b in arb_grid_rects()) {
        prop_assert!(a.is_valid() && b.is_valid());
        let u = polygon_bool(&a, &b, BoolOp::Union);
        let i = polygon_bool(&a, &b, BoolOp::Intersect);
        let d = polygon_bool(&a, &b, BoolOp::Subtract);
        prop_assert!(u.is_valid() && i.is_valid() && d.is_valid());
        prop_assert!(rel_close(u.area() + i.area(), a.area() + b.area()));
        prop_assert!(rel_close(d.area() + i.area(), a.area()));
    }
}
