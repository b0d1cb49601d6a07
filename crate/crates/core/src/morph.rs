//! Flat square structuring elements over grey and binary planes.
//!
//! Pixels outside the plane are ignored: erosion pads with the identity of
//! `min` and dilation with the identity of `max`. With a symmetric element
//! this keeps `open(I) <= I <= close(I)` and exact duality under inversion.

use crate::grid::Grid;

fn pass<T: Copy + PartialOrd>(g: &Grid<T>, k: usize, horizontal: bool, take_max: bool) -> Grid<T> {
    let (w, h) = g.dims();
    let r = k / 2;
    let better = |a: T, b: T| if take_max { b > a } else { b < a };
    Grid::from_fn(w, h, |row, col| {
        let (lo, hi, fixed) = if horizontal {
            (col.saturating_sub(r), (col + r).min(w - 1), row)
        } else {
            (row.saturating_sub(r), (row + r).min(h - 1), col)
        };
        let at = |i: usize| if horizontal { *g.get(fixed, i) } else { *g.get(i, fixed) };
        let mut best = at(lo);
        for i in lo + 1..=hi {
            let v = at(i);
            if better(best, v) {
                best = v;
            }
        }
        best
    })
}

/// Minimum over the `k x k` neighbourhood (`k` odd).
pub fn erode<T: Copy + PartialOrd>(g: &Grid<T>, k: usize) -> Grid<T> {
    debug_assert!(k % 2 == 1, "structuring element must have odd size");
    if g.width() == 0 || g.height() == 0 {
        return g.clone();
    }
    pass(&pass(g, k, true, false), k, false, false)
}

/// Maximum over the `k x k` neighbourhood (`k` odd).
pub fn dilate<T: Copy + PartialOrd>(g: &Grid<T>, k: usize) -> Grid<T> {
    debug_assert!(k % 2 == 1, "structuring element must have odd size");
    if g.width() == 0 || g.height() == 0 {
        return g.clone();
    }
    pass(&pass(g, k, true, true), k, false, true)
}

pub fn open<T: Copy + PartialOrd>(g: &Grid<T>, k: usize) -> Grid<T> {
    dilate(&erode(g, k), k)
}

pub fn close<T: Copy + PartialOrd>(g: &Grid<T>, k: usize) -> Grid<T> {
    erode(&dilate(g, k), k)
}

/// `I - open(I)`.
pub fn top_hat(g: &Grid<f32>, k: usize) -> Grid<f32> {
    g.zip_map(&open(g, k), |a, b| a - b).expect("same dims")
}

/// `close(I) - I`.
pub fn bottom_hat(g: &Grid<f32>, k: usize) -> Grid<f32> {
    close(g, k).zip_map(g, |a, b| a - b).expect("same dims")
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn naive<T: Copy + PartialOrd>(g: &Grid<T>, k: usize, take_max: bool) -> Grid<T> {
        let r = (k / 2) as isize;
        Grid::from_fn(g.width(), g.height(), |row, col| {
            let mut best = *g.get(row, col);
            for dr in -r..=r {
                for dc in -r..=r {
                    if let Some(&v) = g.try_get(row as isize + dr, col as isize + dc) {
                        if (take_max && v > best) || (!take_max && v < best) {
                            best = v;
                        }
                    }
                }
            }
            best
        })
    }

    #[test]
    fn separable_passes_match_full_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Grid::from_fn(23, 17, |_, _| rng.random_range(0.0f32..1.0));
        for k in [1, 3, 5, 7] {
            assert_eq!(erode(&g, k), naive(&g, k, false));
            assert_eq!(dilate(&g, k), naive(&g, k, true));
        }
        let b = Grid::from_fn(19, 11, |_, _| rng.random_bool(0.6));
        assert_eq!(erode(&b, 3), naive(&b, 3, false));
        assert_eq!(dilate(&b, 9), naive(&b, 9, true));
    }

    #[test]
    fn opening_is_below_closing_is_above() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = Grid::from_fn(20, 20, |_, _| rng.random_range(0.0f32..1.0));
        let o = open(&g, 7);
        let c = close(&g, 7);
        for i in 0..g.as_slice().len() {
            assert!(o.as_slice()[i] <= g.as_slice()[i]);
            assert!(c.as_slice()[i] >= g.as_slice()[i]);
        }
        assert_eq!(open(&o, 7), o);
        assert_eq!(close(&c, 7), c);
    }

    #[test]
    fn singleton_vanishes_under_binary_opening() {
        let mut g = Grid::new(9, 9, false);
        g.set(4, 4, true);
        assert_eq!(open(&g, 3).count_true(), 0);
        let block = Grid::from_fn(9, 9, |r, c| (2..5).contains(&r) && (2..5).contains(&c));
        assert_eq!(open(&block, 3), block);
    }
}
