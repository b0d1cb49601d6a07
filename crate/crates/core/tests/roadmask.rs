use proptest::prelude::*;
use vehiclescan::raster::GeoTransform;
use vehiclescan::roadmask::{build_road_mask_with, Road, RoadBuffers, RoadClass, RoadNetwork};

const TAGS: [&str; 6] = ["primary", "secondary", "residential", "footway", "motorway_link", "living_street"];

fn geo() -> GeoTransform {
    GeoTransform::new(1000.0, 2000.0, 0.5).unwrap()
}

fn brute_force(net: &RoadNetwork, w: usize, h: usize, g: &GeoTransform) -> Vec<RoadClass> {
    let bufs = RoadBuffers::default();
    let mut out = vec![RoadClass::NonRoad; w * h];
    for r in 0..h {
        for c in 0..w {
            let px = g.origin_x + (c as f64 + 0.5) * g.pixel_size;
            let py = g.origin_y - (r as f64 + 0.5) * g.pixel_size;
            for road in &net.roads {
                let (class, _) = vehiclescan::roadmask::classify_highway_tag(&road.highway);
                let buf = bufs.for_class(class);
                for s in road.points.windows(2) {
                    let (ax, ay, bx, by) = (s[0][0], s[0][1], s[1][0], s[1][1]);
                    let (vx, vy) = (bx - ax, by - ay);
                    let l2 = vx * vx + vy * vy;
                    let t = if l2 == 0.0 { 0.0 } else { ((px - ax) * vx + (py - ay) * vy) / l2 };
                    let t = t.clamp(0.0, 1.0);
                    let (dx, dy) = (ax + t * vx - px, ay + t * vy - py);
                    if class.is_road() && dx * dx + dy * dy <= buf * buf && class > out[r * w + c] {
                        out[r * w + c] = class;
                    }
                }
            }
        }
    }
    out
}

fn road_strategy() -> impl Strategy<Value = Road> {
    (
        prop::collection::vec((990.0f64..1070.0, 1930.0f64..2010.0), 2..5),
        0usize..TAGS.len(),
    )
        .prop_map(|(pts, t)| Road {
            points: pts.into_iter().map(|(x, y)| [x, y]).collect(),
            highway: TAGS[t].to_string(),
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matches_brute_force(roads in prop::collection::vec(road_strategy(), 0..4)) {
        let net = RoadNetwork::new(roads).unwrap();
        let m = build_road_mask_with(&net, 120, 110, &geo(), &RoadBuffers::default());
        let oracle = brute_force(&net, 120, 110, &geo());
        prop_assert_eq!(m.classes().as_slice(), oracle.as_slice());
    }

    #[test]
    fn adding_a_road_never_lowers_classes(
        roads in prop::collection::vec(road_strategy(), 0..3),
        extra in road_strategy(),
    ) {
        let base = RoadNetwork::new(roads.clone()).unwrap();
        let mut more = roads;
        more.push(extra);
        let more = RoadNetwork::new(more).unwrap();
        let a = build_road_mask_with(&base, 100, 100, &geo(), &RoadBuffers::default());
        let b = build_road_mask_with(&more, 100, 100, &geo(), &RoadBuffers::default());
        for (x, y) in a.classes().as_slice().iter().zip(b.classes().as_slice()) {
            prop_assert!(y >= x);
        }
    }

    #[test]
    fn reversing_vertices_changes_nothing(roads in prop::collection::vec(road_strategy(), 1..4)) {
        let net = RoadNetwork::new(roads.clone()).unwrap();
        let rev = RoadNetwork::new(
            roads
                .into_iter()
                .map(|mut r| {
                    r.points.reverse();
                    r
                })
                .collect(),
        )
        .unwrap();
        let a = build_road_mask_with(&net, 100, 100, &geo(), &RoadBuffers::default());
        let b = build_road_mask_with(&rev, 100, 100, &geo(), &RoadBuffers::default());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn buffer_width_at_midpoint(angle in 0.0f64..std::f64::consts::PI, tag in 0usize..3) {
        // long segment through the middle of a 240 px square; count road pixels
        // along the normal through the midpoint
        let g = geo();
        let (cx, cy) = (g.origin_x + 60.0, g.origin_y - 60.0);
        let (dx, dy) = (angle.cos() * 200.0, angle.sin() * 200.0);
        let road = Road {
            points: vec![[cx - dx, cy - dy], [cx + dx, cy + dy]],
            highway: TAGS[tag].to_string(),
        };
        let net = RoadNetwork::new(vec![road]).unwrap();
        let m = build_road_mask_with(&net, 240, 240, &g, &RoadBuffers::default());
        let (class, buf) = vehiclescan::roadmask::classify_highway_tag(TAGS[tag]);
        let (nx, ny) = (-angle.sin(), angle.cos());
        let expected = (buf / g.pixel_size).round();
        for side in [-1.0, 1.0] {
            // farthest covered point along the normal, in pixels
            let steps = 2000;
            let mut reach = 0.0;
            for i in 0..=steps {
                let s = (buf + 5.0) * i as f64 / steps as f64;
                let (x, y) = g.world_to_pixel(cx + side * s * nx, cy + side * s * ny);
                if m.class_at(x, y) == class {
                    reach = s / g.pixel_size;
                }
            }
            prop_assert!((reach - expected).abs() <= 1.0, "{reach} vs {expected}");
        }
    }
}
