//! Shift- and pooling-tolerant Jaccard similarity between coverage matrices.

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shift {
    Left,
    Right,
    Up,
    Down,
}

impl Shift {
    pub const ALL: [Shift; 4] = [Shift::Left, Shift::Right, Shift::Up, Shift::Down];
}

/// Moves the whole pattern one cell in `dir`; vacated cells are zero.
pub fn shift(m: &Array2<bool>, dir: Shift) -> Array2<bool> {
    let (rows, cols) = m.dim();
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        let src = match dir {
            Shift::Left => (j + 1 < cols).then(|| (i, j + 1)),
            Shift::Right => (j > 0).then(|| (i, j - 1)),
            Shift::Up => (i + 1 < rows).then(|| (i + 1, j)),
            Shift::Down => (i > 0).then(|| (i - 1, j)),
        };
        src.is_some_and(|s| m[s])
    })
}

/// 2×2 max-pooling with stride 2; odd trailing rows/columns pool over
/// whatever cells exist (zero padding).
pub fn max_pool2(m: &Array2<bool>) -> Array2<bool> {
    let (rows, cols) = m.dim();
    let (pr, pc) = (rows.div_ceil(2), cols.div_ceil(2));
    let mut out = Array2::from_elem((pr, pc), false);
    for ((i, j), &v) in m.indexed_iter() {
        if v {
            out[(i / 2, j / 2)] = true;
        }
    }
    out
}

/// `|A ∧ B| / |A ∨ B|`, with two empty matrices defined as identical (1.0).
pub fn jaccard(a: &Array2<bool>, b: &Array2<bool>) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b.iter()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Mean Jaccard of `c1` and its four one-cell shifts against `c2`.
fn shifted_mean(c1: &Array2<bool>, c2: &Array2<bool>) -> f64 {
    let mut total = jaccard(c1, c2);
    for dir in Shift::ALL {
        total += jaccard(&shift(c1, dir), c2);
    }
    total / 5.0
}

/// Robust coverage similarity: the mean of the shifted-Jaccard score on the
/// raw matrices and on their 2×2 max-pooled versions. Shifts apply to `c1`
/// only, so the measure is not symmetric in its arguments.
pub fn robust_similarity(c1: &Array2<bool>, c2: &Array2<bool>) -> Result<f64> {
    if c1.dim() != c2.dim() {
        return Err(Error::Shape(format!(
            "coverage matrices differ: {:?} vs {:?}",
            c1.dim(),
            c2.dim()
        )));
    }
    let raw = shifted_mean(c1, c2);
    let pooled = shifted_mean(&max_pool2(c1), &max_pool2(c2));
    Ok((raw + pooled) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn singleton(n: usize, r: usize, c: usize) -> Array2<bool> {
        let mut m = Array2::from_elem((n, n), false);
        m[(r, c)] = true;
        m
    }

    #[test]
    fn shifts_move_one_cell_with_zero_fill() {
        let m = singleton(3, 1, 1);
        assert!(shift(&m, Shift::Left)[(1, 0)]);
        assert!(shift(&m, Shift::Right)[(1, 2)]);
        assert!(shift(&m, Shift::Up)[(0, 1)]);
        assert!(shift(&m, Shift::Down)[(2, 1)]);
        let edge = singleton(3, 0, 0);
        assert!(!shift(&edge, Shift::Left).iter().any(|&v| v));
        assert!(!shift(&edge, Shift::Up).iter().any(|&v| v));
    }

    #[test]
    fn pooling_uses_ceil_division() {
        let p = max_pool2(&singleton(3, 2, 2));
        assert_eq!(p.dim(), (2, 2));
        assert!(p[(1, 1)]);
        assert_eq!(max_pool2(&Array2::from_elem((24, 24), false)).dim(), (12, 12));
    }

    #[test]
    fn nearby_beats_faraway_on_three_by_three() {
        let a = singleton(3, 0, 0);
        let near = robust_similarity(&a, &singleton(3, 0, 1)).unwrap();
        let far = robust_similarity(&a, &singleton(3, 2, 2)).unwrap();
        assert_eq!(near, 0.2);
        assert_eq!(far, 0.0);
    }

    #[test]
    fn isolated_self_similarity_is_one_fifth() {
        // Ones at (0,0) and (4,4) on 8x8: no shift of either raw or pooled
        // pattern lands back on a one.
        let mut m = singleton(8, 0, 0);
        m[(4, 4)] = true;
        assert_eq!(robust_similarity(&m, &m).unwrap(), 0.2);

        let full = Array2::from_elem((6, 6), true);
        assert!(robust_similarity(&full, &full).unwrap() > 0.2);
    }

    #[test]
    fn empty_matrices() {
        let z = Array2::from_elem((4, 4), false);
        assert_eq!(robust_similarity(&z, &z).unwrap(), 1.0);
        assert_eq!(robust_similarity(&z, &singleton(4, 1, 1)).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch() {
        let a = Array2::from_elem((4, 4), false);
        let b = Array2::from_elem((4, 5), false);
        assert!(matches!(robust_similarity(&a, &b), Err(Error::Shape(_))));
    }

    fn sparse(n: usize) -> impl Strategy<Value = Array2<bool>> {
        proptest::collection::vec(proptest::bool::weighted(0.15), n * n)
            .prop_map(move |v| Array2::from_shape_vec((n, n), v).unwrap())
    }

    proptest! {
        #[test]
        fn bounded(a in sparse(8), b in sparse(8)) {
            let s = robust_similarity(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
        }

        #[test]
        fn self_similarity_survives_aligned_translation(inner in sparse(6)) {
            // Embed in a 14x14 frame, then move by two cells in both axes.
            let mut a = Array2::from_elem((14, 14), false);
            let mut b = a.clone();
            for ((r, c), &v) in inner.indexed_iter() {
                a[(r + 2, c + 2)] = v;
                b[(r + 4, c + 4)] = v;
            }
            prop_assert_eq!(robust_similarity(&a, &a).unwrap(), robust_similarity(&b, &b).unwrap());
        }
    }
}
