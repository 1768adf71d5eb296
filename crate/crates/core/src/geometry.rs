//! Euclidean primitives, lune membership, the angular threshold functions used
//! by conflict search, and seeded synthetic data.
//!
//! All comparisons are strict: balls are open, so a point on the boundary of a
//! lune is never inside it.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{MrngError, Result};
use crate::scalar::Scalar;

pub const THIRD_PI: f64 = PI / 3.0;
pub const TWO_THIRDS_PI: f64 = 2.0 * PI / 3.0;
pub const FIVE_SIXTHS_PI: f64 = 5.0 * PI / 6.0;

/// Stream used for dataset points; queries draw from [`QUERY_STREAM`].
pub const DATA_STREAM: u64 = 0;
pub const QUERY_STREAM: u64 = 1;

/// n points of a common dimension, stored row-major. Ids are `0..n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    dim: usize,
    coords: Vec<T>,
}

impl<T: Scalar> Dataset<T> {
    /// Validates finiteness, shape and pairwise distinctness.
    pub fn new(dim: usize, coords: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(MrngError::InvalidDataset(
                "dimension must be positive".into(),
            ));
        }
        if coords.is_empty() {
            return Err(MrngError::InvalidDataset("dataset is empty".into()));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(MrngError::InvalidDataset(format!(
                "{} coordinates do not divide into rows of {dim}",
                coords.len()
            )));
        }
        if let Some(pos) = coords.iter().position(|c| !c.is_finite()) {
            return Err(MrngError::InvalidDataset(format!(
                "non-finite coordinate in point {}",
                pos / dim
            )));
        }
        let ds = Self { dim, coords };
        ds.reject_duplicates()?;
        Ok(ds)
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(MrngError::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            coords.extend_from_slice(row);
        }
        Self::new(dim, coords)
    }

    fn reject_duplicates(&self) -> Result<()> {
        let mut seen: HashMap<Vec<u64>, usize> = HashMap::with_capacity(self.len());
        for i in 0..self.len() {
            // +0.0 and -0.0 are the same location
            let key: Vec<u64> = self
                .point(i)
                .iter()
                .map(|c| (c.as_f64() + 0.0).to_bits())
                .collect();
            if let Some(&first) = seen.get(&key) {
                return Err(MrngError::DuplicatePoint { first, second: i });
            }
            seen.insert(key, i);
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[T] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[T]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    /// Distance between two stored points.
    #[inline]
    pub fn dist(&self, a: usize, b: usize) -> f64 {
        l2(self.point(a), self.point(b))
    }

    /// Distance from a stored point to an external point of the same dimension.
    #[inline]
    pub fn dist_to(&self, a: usize, q: &[T]) -> f64 {
        debug_assert_eq!(q.len(), self.dim);
        l2(self.point(a), q)
    }

    pub fn check_query(&self, q: &[T]) -> Result<()> {
        if q.len() != self.dim {
            return Err(MrngError::DimensionMismatch {
                expected: self.dim,
                got: q.len(),
            });
        }
        if q.iter().any(|c| !c.is_finite()) {
            return Err(MrngError::InvalidParameter(
                "query has non-finite coordinates".into(),
            ));
        }
        Ok(())
    }

    /// Stable 64-bit fingerprint: SHA-256 over n, d and every coordinate
    /// widened to f64 little-endian, truncated to the first eight bytes.
    pub fn checksum(&self) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update((self.len() as u64).to_le_bytes());
        hasher.update((self.dim as u64).to_le_bytes());
        for c in &self.coords {
            hasher.update((c.as_f64() + 0.0).to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(head)
    }

    /// Coordinate-wise mean, in f64.
    pub fn centroid(&self) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.dim];
        for p in self.points() {
            for (a, c) in acc.iter_mut().zip(p) {
                *a += c.as_f64();
            }
        }
        let n = self.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// Copy with rows reordered so that new row `i` is old row `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.len() {
            return Err(MrngError::InvalidParameter(
                "permutation length differs from n".into(),
            ));
        }
        let mut coords = Vec::with_capacity(self.coords.len());
        for &i in order {
            coords.extend_from_slice(self.point(i));
        }
        Self::new(self.dim, coords)
    }
}

#[inline(always)]
pub(crate) fn sq_l2<A: Scalar, B: Scalar>(a: &[A], b: &[B]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let t = x.as_f64() - y.as_f64();
            t * t
        })
        .sum()
}

#[inline(always)]
pub(crate) fn l2<A: Scalar, B: Scalar>(a: &[A], b: &[B]) -> f64 {
    sq_l2(a, b).sqrt()
}

fn same_dim(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(MrngError::DimensionMismatch {
            expected: a,
            got: b,
        })
    }
}

/// Euclidean distance.
pub fn distance<T: Scalar>(a: &[T], b: &[T]) -> Result<f64> {
    same_dim(a.len(), b.len())?;
    Ok(l2(a, b))
}

/// Whether `z` lies in the open lune of `x` and `y`: both `δ(x,z)` and
/// `δ(y,z)` strictly below `δ(x,y)`.
pub fn in_lune<T: Scalar>(x: &[T], y: &[T], z: &[T]) -> Result<bool> {
    same_dim(x.len(), y.len())?;
    same_dim(x.len(), z.len())?;
    let xy = l2(x, y);
    if xy == 0.0 {
        return Err(MrngError::Degenerate("lune of a point with itself"));
    }
    Ok(l2(x, z) < xy && l2(y, z) < xy)
}

/// Unsigned angle at `v` between rays `v→q` and `v→u`, in `[0, π]`.
pub fn angle_at<T: Scalar>(v: &[T], q: &[T], u: &[T]) -> Result<f64> {
    same_dim(v.len(), q.len())?;
    same_dim(v.len(), u.len())?;
    let (mut dot, mut nq, mut nu) = (0.0f64, 0.0f64, 0.0f64);
    for ((a, b), c) in v.iter().zip(q).zip(u) {
        let (a, b, c) = (a.as_f64(), b.as_f64(), c.as_f64());
        let (dq, du) = (b - a, c - a);
        dot += dq * du;
        nq += dq * dq;
        nu += du * du;
    }
    if nq == 0.0 || nu == 0.0 {
        return Err(MrngError::Degenerate("angle with a zero-length ray"));
    }
    let cos = (dot / (nq.sqrt() * nu.sqrt())).clamp(-1.0, 1.0);
    Ok(cos.acos())
}

fn check_theta(theta: f64) -> Result<()> {
    if (0.0..=PI).contains(&theta) {
        Ok(())
    } else {
        Err(MrngError::AngleOutOfRange(theta))
    }
}

/// Reach of the conflict region around a local minimum, as a multiple of
/// `δ(v, q)`, for a neighbor at angle `theta` from the query direction.
///
/// A neighbor `u` of a local minimum `v` can have a conflicting node strictly
/// closer to `q` than `v` only if `δ(v,u) < δ(v,q) · f(θ)`.
pub fn f_theta(theta: f64) -> Result<f64> {
    check_theta(theta)?;
    Ok(if theta <= THIRD_PI {
        2.0
    } else if theta <= TWO_THIRDS_PI {
        2.0 * (theta - THIRD_PI).cos()
    } else {
        2.0 * (theta.cos() + 1.0)
    })
}

/// Threshold contributed by boundary points within ±π/3 of the neighbor
/// direction. `None` on `(5π/6, π]`, where no such point exists.
pub fn g_theta(theta: f64) -> Result<Option<f64>> {
    check_theta(theta)?;
    Ok(if theta <= THIRD_PI {
        Some(2.0)
    } else if theta <= FIVE_SIXTHS_PI {
        Some(2.0 * (theta - THIRD_PI).cos())
    } else {
        None
    })
}

/// Threshold contributed by boundary points at least π/3 away from the
/// neighbor direction.
pub fn h_theta(theta: f64) -> Result<f64> {
    check_theta(theta)?;
    Ok(if theta <= TWO_THIRDS_PI {
        2.0 * (theta - THIRD_PI).cos()
    } else {
        2.0 * (theta.cos() + 1.0)
    })
}

/// Closed form of `sup cos(θ + 2α)` over `α ∈ ([-π,-π/3] ∪ [π/3,π])` with
/// `cos(θ + α) ≥ 0`. Satisfies `h(θ) = 2(cos θ + s(θ))`.
pub fn s_theta(theta: f64) -> Result<f64> {
    check_theta(theta)?;
    Ok(if theta <= TWO_THIRDS_PI {
        (theta - TWO_THIRDS_PI).cos()
    } else {
        1.0
    })
}

/// ChaCha8 keystream generator; `stream` separates independent sequences
/// derived from one seed.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `n` i.i.d. points uniform on `[0,1)^d`, drawn from the ChaCha8 data stream
/// of `seed` in row-major order.
pub fn generate_uniform_dataset<T: Scalar>(n: usize, d: usize, seed: u64) -> Result<Dataset<T>> {
    if n == 0 || d == 0 {
        return Err(MrngError::InvalidParameter(
            "n and d must be positive".into(),
        ));
    }
    let mut rng = seeded_rng(seed, DATA_STREAM);
    let coords = (0..n * d).map(|_| T::sample_unit(&mut rng)).collect();
    Dataset::new(d, coords)
}

/// `count` query points uniform on `[0,1)^d`, from the query stream of `seed`.
pub fn generate_uniform_queries<T: Scalar>(count: usize, d: usize, seed: u64) -> Vec<Vec<T>> {
    let mut rng = seeded_rng(seed, QUERY_STREAM);
    (0..count)
        .map(|_| (0..d).map(|_| T::sample_unit(&mut rng)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = 1e-12;

    #[test]
    fn distance_examples() {
        assert_eq!(distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(distance(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 0.0);
        let ones = vec![1.0f64; 100];
        let zeros = vec![0.0f64; 100];
        assert_eq!(distance(&zeros, &ones).unwrap(), 10.0);
        assert!(matches!(
            distance(&[0.0], &[0.0, 1.0]),
            Err(MrngError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn lune_examples() {
        let (x, y) = ([0.0, 0.0], [2.0, 0.0]);
        assert!(in_lune(&x, &y, &[1.0, 0.0]).unwrap());
        assert!(!in_lune(&x, &y, &[2.0, 0.0]).unwrap());
        assert!(!in_lune(&x, &y, &[1.0, 1.8]).unwrap());
        assert!(matches!(in_lune(&x, &x, &y), Err(MrngError::Degenerate(_))));
    }

    #[test]
    fn angle_examples() {
        let v = [0.0, 0.0];
        assert!((angle_at(&v, &[1.0, 0.0], &[0.0, 1.0]).unwrap() - PI / 2.0).abs() < EPS);
        assert_eq!(angle_at(&v, &[1.0, 0.0], &[2.0, 0.0]).unwrap(), 0.0);
        let a = angle_at(&v, &[0.5, 1.8], &[2.2, 0.0]).unwrap();
        assert!((a - (1.8f64 / 0.5).atan()).abs() < EPS);
        assert!((a - 1.30006).abs() < 1e-3);
        assert!(angle_at(&v, &v, &[1.0, 0.0]).is_err());
        assert!(angle_at(&v, &[1.0, 0.0], &v).is_err());
    }

    #[test]
    fn threshold_function_examples() {
        assert_eq!(f_theta(0.0).unwrap(), 2.0);
        assert!((f_theta(PI / 2.0).unwrap() - 3f64.sqrt()).abs() < EPS);
        assert!(f_theta(PI).unwrap().abs() < EPS);
        assert_eq!(g_theta(0.0).unwrap(), Some(2.0));
        assert!(h_theta(PI).unwrap().abs() < EPS);
        assert!((s_theta(TWO_THIRDS_PI).unwrap() - 1.0).abs() < EPS);
        assert_eq!(g_theta(0.9 * PI).unwrap(), None);
        for bad in [-1e-9, PI + 1e-9, f64::NAN] {
            assert!(f_theta(bad).is_err());
            assert!(g_theta(bad).is_err());
            assert!(h_theta(bad).is_err());
            assert!(s_theta(bad).is_err());
        }
    }

    #[test]
    fn f_is_continuous_and_nonincreasing() {
        let below = |x: f64| f_theta(x - 1e-15).unwrap();
        let above = |x: f64| f_theta(x + 1e-15).unwrap();
        assert!((below(THIRD_PI) - 2.0).abs() < 1e-12);
        assert!((above(THIRD_PI) - 2.0).abs() < 1e-12);
        assert!((below(TWO_THIRDS_PI) - 1.0).abs() < 1e-12);
        assert!((above(TWO_THIRDS_PI) - 1.0).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for i in 0..=10_000 {
            let t = THIRD_PI + (PI - THIRD_PI) * i as f64 / 10_000.0;
            let v = f_theta(t.min(PI)).unwrap();
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let a: Dataset<f32> = generate_uniform_dataset(5, 3, 42).unwrap();
        let b: Dataset<f32> = generate_uniform_dataset(5, 3, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert!(a.coords().iter().all(|&c| (0.0..1.0).contains(&c)));
        let c: Dataset<f32> = generate_uniform_dataset(5, 3, 43).unwrap();
        assert_ne!(a, c);
        let one: Dataset<f64> = generate_uniform_dataset(1, 1, 0).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.dim(), 1);
        assert!(generate_uniform_dataset::<f32>(0, 3, 1).is_err());
    }

    #[test]
    fn dataset_rejects_bad_input() {
        assert!(matches!(
            Dataset::from_rows(&[vec![0.0f64, 1.0], vec![0.0, 1.0]]),
            Err(MrngError::DuplicatePoint {
                first: 0,
                second: 1
            })
        ));
        assert!(Dataset::from_rows(&[vec![0.0f64, -0.0], vec![0.0, 0.0]]).is_err());
        assert!(Dataset::new(2, vec![0.0f64, f64::NAN]).is_err());
        assert!(Dataset::new(2, vec![0.0f64, 1.0, 2.0]).is_err());
        assert!(Dataset::<f64>::new(2, vec![]).is_err());
    }

    #[test]
    fn checksum_tracks_content() {
        let a: Dataset<f32> = generate_uniform_dataset(20, 4, 1).unwrap();
        let b: Dataset<f32> = generate_uniform_dataset(20, 4, 2).unwrap();
        assert_eq!(a.checksum(), a.clone().checksum());
        assert_ne!(a.checksum(), b.checksum());
    }

    fn pt(d: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, d)
    }

    proptest! {
        #[test]
        fn lune_matches_max_rule(x in pt(3), y in pt(3), z in pt(3)) {
            prop_assume!(x != y);
            let xy = l2(&x, &y);
            let expected = l2(&x, &z).max(l2(&y, &z)) < xy;
            prop_assert_eq!(in_lune(&x, &y, &z).unwrap(), expected);
        }

        #[test]
        fn angle_symmetric_and_scale_invariant(v in pt(4), q in pt(4), u in pt(4), s in 0.1f64..20.0) {
            prop_assume!(l2(&v, &q) > 1e-3 && l2(&v, &u) > 1e-3);
            let a = angle_at(&v, &q, &u).unwrap();
            prop_assert!((0.0..=PI).contains(&a));
            prop_assert!((a - angle_at(&v, &u, &q).unwrap()).abs() < 1e-12);
            let scale = |p: &[f64]| p.iter().zip(&v).map(|(c, o)| o + s * (c - o)).collect::<Vec<_>>();
            let a2 = angle_at(&v, &scale(&q), &scale(&u)).unwrap();
            prop_assert!((a - a2).abs() < 1e-6);
        }

        #[test]
        fn h_identity(theta in 0.0f64..=PI) {
            let h = h_theta(theta).unwrap();
            let s = s_theta(theta).unwrap();
            prop_assert!((h - 2.0 * (theta.cos() + s)).abs() < 1e-12);
        }
    }
}
