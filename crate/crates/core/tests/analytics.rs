use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, ToPrimitive, Zero};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vehiclescan::analytics::{
    change_ratio, class_of, density_grid_points, equal_interval, jenks_breaks, quad_regression,
};
use vehiclescan::raster::GeoTransform;

type Q = BigRational;

fn q(v: f64) -> Q {
    Q::from_f64(v).expect("finite")
}

fn ssd_exact(class: &[i64]) -> Q {
    if class.is_empty() {
        return Q::zero();
    }
    let n = Q::from_integer(BigInt::from(class.len()));
    let s: i64 = class.iter().sum();
    let s2: i64 = class.iter().map(|x| x * x).sum();
    Q::from_integer(BigInt::from(s2)) - Q::from_integer(BigInt::from(s * s)) / n
}

/// Minimum SSD over every split of the sorted values into `k` non-empty runs.
fn exhaustive_min(sorted: &[i64], k: usize) -> Q {
    fn go(v: &[i64], k: usize) -> Option<Q> {
        if k == 1 {
            return Some(ssd_exact(v));
        }
        (1..v.len())
            .filter_map(|i| go(&v[i..], k - 1).map(|rest| ssd_exact(&v[..i]) + rest))
            .min()
    }
    go(sorted, k).expect("enough values")
}

fn ssd_of_breaks(values: &[i64], breaks: &[f64]) -> Q {
    let mut classes = vec![Vec::new(); breaks.len() + 1];
    for &v in values {
        classes[class_of(v as f64, breaks)].push(v);
    }
    classes.iter().map(|c| ssd_exact(c)).sum()
}

#[test]
fn jenks_reaches_exhaustive_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut checked = 0;
    while checked < 200 {
        let n = rng.random_range(2..=12);
        let values: Vec<i64> = (0..n).map(|_| rng.random_range(-12..=12)).collect();
        let mut sorted = values.clone();
        sorted.sort_unstable();
        let mut distinct = sorted.clone();
        distinct.dedup();
        let k = rng.random_range(2..=4);
        if k > distinct.len() {
            continue;
        }
        let f: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        let breaks = jenks_breaks(&f, k).unwrap();
        assert_eq!(breaks.len(), k - 1);
        assert!(breaks.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(ssd_of_breaks(&values, &breaks), exhaustive_min(&sorted, k), "{values:?} k={k}");
        checked += 1;
    }
}

#[test]
fn jenks_rejects_bad_input() {
    assert!(jenks_breaks(&[1.0, 2.0, 3.0], 1).is_err());
    assert!(jenks_breaks(&[1.0, 1.0, 2.0], 3).is_err());
    assert!(jenks_breaks(&[1.0, f64::NAN, 2.0], 2).is_err());
}

/// Normal equations solved exactly over the rationals.
fn exact_fit(x: &[f64], y: &[f64]) -> ([Q; 3], Q) {
    let xs: Vec<Q> = x.iter().map(|&v| q(v)).collect();
    let ys: Vec<Q> = y.iter().map(|&v| q(v)).collect();
    let row = |xi: &Q| [xi * xi, xi.clone(), Q::from_integer(1.into())];
    let mut m: Vec<Vec<Q>> = vec![vec![Q::zero(); 4]; 3];
    for (xi, yi) in xs.iter().zip(&ys) {
        let r = row(xi);
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += &r[i] * &r[j];
            }
            m[i][3] += &r[i] * yi;
        }
    }
    for c in 0..3 {
        let p = (c..3).find(|&r| !m[r][c].is_zero()).expect("full rank");
        m.swap(c, p);
        for r in 0..3 {
            if r != c {
                let f = &m[r][c] / &m[c][c];
                for j in c..4 {
                    let t = &f * &m[c][j];
                    m[r][j] -= t;
                }
            }
        }
    }
    let coef = [&m[0][3] / &m[0][0], &m[1][3] / &m[1][1], &m[2][3] / &m[2][2]];
    let n = Q::from_integer(BigInt::from(ys.len()));
    let mean = ys.iter().cloned().sum::<Q>() / n;
    let (mut ss_res, mut ss_tot) = (Q::zero(), Q::zero());
    for (xi, yi) in xs.iter().zip(&ys) {
        let pred = &coef[0] * xi * xi + &coef[1] * xi + &coef[2];
        ss_res += (yi - &pred) * (yi - &pred);
        ss_tot += (yi - &mean) * (yi - &mean);
    }
    let r2 = Q::from_integer(1.into()) - ss_res / ss_tot;
    (coef, r2)
}

fn rel_err(got: f64, want: &Q, scale: f64) -> f64 {
    let w = want.to_f64().unwrap();
    (got - w).abs() / w.abs().max(scale)
}

#[test]
fn regression_matches_exact_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for _ in 0..100 {
        let n = rng.random_range(4..=20);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(10.0..95.0)).collect();
        let (a, b, c) = (rng.random_range(-0.05..0.05), rng.random_range(-3.0..3.0), rng.random_range(-80.0..40.0));
        let y: Vec<f64> = x.iter().map(|&v| a * v * v + b * v + c + rng.random_range(-15.0..15.0)).collect();
        let fit = quad_regression(&x, &y).unwrap();
        let (coef, r2) = exact_fit(&x, &y);
        // coefficients of very different magnitude are compared on the scale
        // of their contribution over the data range
        let xmax = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scales = [1e-9 / (xmax * xmax), 1e-9 / xmax, 1e-9];
        for (got, (want, s)) in [fit.a, fit.b, fit.c].iter().zip(coef.iter().zip(scales)) {
            assert!(rel_err(*got, want, s) < 1e-9, "{got} vs {want}");
        }
        assert!(rel_err(fit.r2, &r2, 1e-12) < 1e-9);
    }
}

#[test]
fn noiseless_quadratics_are_recovered_exactly() {
    let x: Vec<f64> = (0..12).map(f64::from).collect();
    let y: Vec<f64> = x.iter().map(|v| v * v).collect();
    let f = quad_regression(&x, &y).unwrap();
    assert_eq!((f.a, f.b, f.c, f.r2), (1.0, 0.0, 0.0, 1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let (a, b, c) = (rng.random_range(-2..=2) as f64, rng.random_range(-9..=9) as f64, rng.random_range(-50..=50) as f64);
        if a == 0.0 && b == 0.0 {
            continue;
        }
        let y: Vec<f64> = x.iter().map(|v| a * v * v + b * v + c).collect();
        let f = quad_regression(&x, &y).unwrap();
        assert_eq!((f.a, f.b, f.c), (a, b, c));
        assert_eq!(f.r2, 1.0);
    }
}

#[test]
fn regression_guards() {
    assert!(quad_regression(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).is_err());
    assert!(quad_regression(&[1.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).is_err());
    assert!(quad_regression(&[1.0, 2.0, 3.0, 4.0], &[5.0; 4]).is_err());
    assert!(quad_regression(&[1.0, 2.0, 3.0, f64::INFINITY], &[1.0; 4]).is_err());
}

proptest! {
    #[test]
    fn grid_conserves_points(
        pts in prop::collection::vec((-20.0f64..420.0, -420.0f64..20.0), 0..300),
        block in prop::sample::select(vec![25.0f64, 50.0, 100.0, 300.0]),
    ) {
        let geo = GeoTransform::new(0.0, 0.0, 0.5).unwrap();
        let g = density_grid_points(&pts, &geo, 800, 800, block).unwrap();
        prop_assert_eq!(g.total() + g.outside, pts.len() as u64);
        let inside = pts.iter().filter(|&&(x, y)| (0.0..=400.0).contains(&x) && (-400.0..=0.0).contains(&y)).count();
        prop_assert_eq!(g.total(), inside as u64);
    }

    #[test]
    fn equal_interval_is_evenly_spaced(v in prop::collection::vec(-1e3f64..1e3, 2..50), k in 2usize..9) {
        let b = equal_interval(&v, k).unwrap();
        prop_assert_eq!(b.len(), k - 1);
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (i, x) in b.iter().enumerate() {
            let want = lo + (hi - lo) * (i + 1) as f64 / k as f64;
            prop_assert!((x - want).abs() <= 1e-9 * (1.0 + want.abs()));
        }
        for x in &v {
            prop_assert!(class_of(*x, &b) < k);
        }
    }

    #[test]
    fn change_ratio_matches_rational(before in 1u64..100_000, after in 0u64..100_000) {
        let got = change_ratio(before, after).unwrap();
        let exact = Q::new(BigInt::from(after) - BigInt::from(before), BigInt::from(before)) * Q::from_integer(100.into());
        // `round` on rationals goes half away from zero
        let r = (exact * Q::from_integer(100.into())).round();
        let want = r.to_integer().to_f64().unwrap() / 100.0;
        prop_assert_eq!(got, want);
    }

    #[test]
    fn r2_ignores_affine_rescaling_of_x(
        pts in prop::collection::vec((0.0f64..100.0, -50.0f64..50.0), 5..30),
        scale in 0.01f64..100.0,
        shift in -1e3f64..1e3,
    ) {
        let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let moved: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
        match (quad_regression(&x, &y), quad_regression(&moved, &y)) {
            (Ok(a), Ok(b)) => prop_assert!((a.r2 - b.r2).abs() <= 1e-9 * a.r2.abs().max(1e-3), "{} vs {}", a.r2, b.r2),
            (a, b) => prop_assert_eq!(a.is_ok(), b.is_ok()),
        }
    }
}
