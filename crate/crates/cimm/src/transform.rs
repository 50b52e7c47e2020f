//! The eight symmetries of the square applied to the spatial axes of a
//! tensor: four rotations and their horizontally flipped versions.
//!
//! Index convention (used by training augmentation and the self-ensemble):
//!
//! | index | transform                  |
//! |-------|----------------------------|
//! | 0     | identity                   |
//! | 1..3  | rotate 90/180/270 ccw      |
//! | 4     | horizontal flip            |
//! | 5..7  | rotate 90/180/270, then flip |
//!
//! Rotations by 90/270 degrees swap height and width, so rectangular inputs
//! are supported; callers that require shape stability (batched training
//! patches) must pass square tensors.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Number of distinct transforms.
pub const TRANSFORM_COUNT: usize = 8;

/// Rotate 90 degrees counter-clockwise. `[[1,2],[3,4]]` becomes `[[2,4],[1,3]]`.
pub fn rotate90<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, s.w, s.h));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = t.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..s.h {
                for x in 0..s.w {
                    dst[(s.w - 1 - x) * s.h + y] = src[y * s.w + x];
                }
            }
        }
    }
    out
}

/// Rotate 180 degrees.
pub fn rotate180<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = t.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (i, &v) in src.iter().enumerate() {
                dst[src.len() - 1 - i] = v;
            }
        }
    }
    out
}

/// Rotate 270 degrees counter-clockwise (90 clockwise).
pub fn rotate270<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, s.w, s.h));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = t.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..s.h {
                for x in 0..s.w {
                    dst[x * s.h + (s.h - 1 - y)] = src[y * s.w + x];
                }
            }
        }
    }
    out
}

/// Mirror left-right (reverse each row).
pub fn flip_horizontal<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = t.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..s.h {
                for x in 0..s.w {
                    dst[y * s.w + (s.w - 1 - x)] = src[y * s.w + x];
                }
            }
        }
    }
    out
}

fn rotate<T: Scalar>(t: &Tensor<T>, quarter_turns: usize) -> Tensor<T> {
    match quarter_turns % 4 {
        0 => t.clone(),
        1 => rotate90(t),
        2 => rotate180(t),
        _ => rotate270(t),
    }
}

/// Applies transform `index` (0..=7).
pub fn apply<T: Scalar>(t: &Tensor<T>, index: usize) -> Result<Tensor<T>> {
    if index >= TRANSFORM_COUNT {
        return Err(Error::InvalidConfig(format!(
            "transform index must be 0..{TRANSFORM_COUNT}, got {index}"
        )));
    }
    let rotated = rotate(t, index % 4);
    if index < 4 {
        Ok(rotated)
    } else {
        Ok(flip_horizontal(&rotated))
    }
}

/// Applies the inverse of transform `index`, so that
/// `apply_inverse(&apply(t, i)?, i)? == t` exactly.
pub fn apply_inverse<T: Scalar>(t: &Tensor<T>, index: usize) -> Result<Tensor<T>> {
    if index >= TRANSFORM_COUNT {
        return Err(Error::InvalidConfig(format!(
            "transform index must be 0..{TRANSFORM_COUNT}, got {index}"
        )));
    }
    let unflipped = if index < 4 { t.clone() } else { flip_horizontal(t) };
    Ok(rotate(&unflipped, (4 - index % 4) % 4))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor2x2() -> Tensor<f64> {
        Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    fn tensor2x3() -> Tensor<f64> {
        Tensor::from_vec(Shape::new(1, 1, 2, 3), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap()
    }

    #[test]
    fn index_zero_is_identity() {
        let t = tensor2x3();
        assert_eq!(apply(&t, 0).unwrap(), t);
    }

    #[test]
    fn rotate90_matches_hand_rotation() {
        // [[1,2],[3,4]] rotated 90 ccw -> [[2,4],[1,3]]
        let out = rotate90(&tensor2x2());
        assert_eq!(out.data(), &[2.0, 4.0, 1.0, 3.0]);
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let t = tensor2x3();
        let mut r = t.clone();
        for _ in 0..4 {
            r = rotate90(&r);
        }
        assert_eq!(r, t);
    }

    #[test]
    fn rotations_swap_dims_on_rectangles() {
        let t = tensor2x3();
        let r = rotate90(&t);
        assert_eq!((r.shape().h, r.shape().w), (3, 2));
        assert_eq!(rotate270(&rotate90(&t)), t);
    }

    #[test]
    fn flip_reverses_rows() {
        let out = flip_horizontal(&tensor2x3());
        assert_eq!(out.data(), &[3.0, 2.0, 1.0, 6.0, 5.0, 4.0]);
    }

    #[test]
    fn all_eight_are_distinct_on_generic_patch() {
        let t = tensor2x2();
        let outs: Vec<_> = (0..TRANSFORM_COUNT)
            .map(|i| apply(&t, i).unwrap())
            .collect();
        for i in 0..outs.len() {
            for j in i + 1..outs.len() {
                assert_ne!(outs[i].data(), outs[j].data(), "transforms {i} and {j}");
            }
        }
    }

    #[test]
    fn inverse_undoes_every_transform() {
        let t = tensor2x3();
        for i in 0..TRANSFORM_COUNT {
            let back = apply_inverse(&apply(&t, i).unwrap(), i).unwrap();
            assert_eq!(back, t, "transform {i}");
        }
    }

    #[test]
    fn rejects_out_of_range_index() {
        assert!(apply(&tensor2x2(), 8).is_err());
        assert!(apply_inverse(&tensor2x2(), 8).is_err());
    }
}
