use super::Metric;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Rows per vector block fed to the blocked kernels during partition scans.
pub(crate) const BLOCK_ROWS: usize = 256;

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            actual: b,
        });
    }
    Ok(())
}

pub fn norm_squared<S: Scalar>(a: &[S]) -> S {
    let mut acc = S::zero();
    for &x in a {
        acc += x * x;
    }
    acc
}

fn sq_l2<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
fn cosine_from_parts<S: Scalar>(dot: S, na2: S, nb2: S) -> S {
    let d = S::one() - dot / (na2.sqrt() * nb2.sqrt());
    d.max(S::zero())
}

/// Distance between two vectors under `metric`.
pub fn distance<S: Scalar>(a: &[S], b: &[S], metric: Metric) -> Result<S> {
    check_dims(a.len(), b.len())?;
    match metric {
        Metric::SquaredL2 => Ok(sq_l2(a, b)),
        Metric::Cosine => {
            let na2 = norm_squared(a);
            let nb2 = norm_squared(b);
            if na2 == S::zero() || nb2 == S::zero() {
                return Err(Error::ZeroVector);
            }
            Ok(cosine_from_parts(dot(a, b), na2, nb2))
        }
    }
}

/// Scales `v` to unit length in place.
pub fn normalize<S: Scalar>(v: &mut [S]) -> Result<()> {
    let n2 = norm_squared(v);
    if n2 == S::zero() {
        return Err(Error::ZeroVector);
    }
    let inv = S::one() / n2.sqrt();
    for x in v.iter_mut() {
        *x *= inv;
    }
    Ok(())
}

/// Row-major `rows x cols` block of distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceBlock<S> {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<S>,
}

impl<S: Scalar> DistanceBlock<S> {
    pub fn get(&self, row: usize, col: usize) -> S {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[S] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }
}

/// Distances between every row of `queries` and every row of `vectors`, both
/// row-major with `dim` columns. Entry `(i, j)` equals
/// `distance(queries[i], vectors[j], metric)` bit for bit.
pub fn batched_distances<S: Scalar>(
    queries: &[S],
    vectors: &[S],
    dim: usize,
    metric: Metric,
) -> Result<DistanceBlock<S>> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    if queries.len() % dim != 0 {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: queries.len() % dim,
        });
    }
    if vectors.len() % dim != 0 {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: vectors.len() % dim,
        });
    }
    let m = queries.len() / dim;
    let b = vectors.len() / dim;
    let mut out = vec![S::zero(); m * b];
    let kernel = BlockKernel::for_metric(metric);
    let mut scratch = BlockScratch::default();
    for start in (0..b).step_by(BLOCK_ROWS) {
        let end = (start + BLOCK_ROWS).min(b);
        let block = &vectors[start * dim..end * dim];
        let w = end - start;
        let mut tmp = vec![S::zero(); m * w];
        kernel.compute(queries, block, dim, &mut scratch, &mut tmp)?;
        for i in 0..m {
            out[i * b + start..i * b + end].copy_from_slice(&tmp[i * w..(i + 1) * w]);
        }
    }
    Ok(DistanceBlock {
        rows: m,
        cols: b,
        values: out,
    })
}

/// Arithmetic used by the blocked scan paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BlockKernel {
    SquaredL2,
    Cosine,
}

#[derive(Default)]
pub(crate) struct BlockScratch<S> {
    transposed: Vec<S>,
    norms: Vec<S>,
}

impl BlockKernel {
    pub(crate) fn for_metric(metric: Metric) -> Self {
        match metric {
            Metric::SquaredL2 => BlockKernel::SquaredL2,
            Metric::Cosine => BlockKernel::Cosine,
        }
    }

    /// `out[i * w + j]` = distance of query `i` to vector `j`, `w` = vector count.
    pub(crate) fn compute<S: Scalar>(
        self,
        queries: &[S],
        vectors: &[S],
        dim: usize,
        scratch: &mut BlockScratch<S>,
        out: &mut [S],
    ) -> Result<()> {
        let m = queries.len() / dim;
        let w = vectors.len() / dim;
        debug_assert_eq!(out.len(), m * w);
        if w == 0 || m == 0 {
            return Ok(());
        }
        // Transpose to dim x w so the inner loop runs over contiguous lanes.
        let vt = &mut scratch.transposed;
        vt.clear();
        vt.resize(dim * w, S::zero());
        for (j, row) in vectors.chunks_exact(dim).enumerate() {
            for (d, &x) in row.iter().enumerate() {
                vt[d * w + j] = x;
            }
        }
        if self == BlockKernel::Cosine {
            let norms = &mut scratch.norms;
            norms.clear();
            norms.resize(w, S::zero());
            for d in 0..dim {
                let col = &vt[d * w..(d + 1) * w];
                for (acc, &x) in norms.iter_mut().zip(col) {
                    *acc += x * x;
                }
            }
            if norms.iter().any(|&n| n == S::zero()) {
                return Err(Error::ZeroVector);
            }
        }
        for (i, q) in queries.chunks_exact(dim).enumerate() {
            let acc = &mut out[i * w..(i + 1) * w];
            acc.fill(S::zero());
            match self {
                BlockKernel::SquaredL2 => {
                    for (d, &qd) in q.iter().enumerate() {
                        let col = &vt[d * w..(d + 1) * w];
                        for (a, &x) in acc.iter_mut().zip(col) {
                            let diff = qd - x;
                            *a += diff * diff;
                        }
                    }
                }
                BlockKernel::Cosine => {
                    for (d, &qd) in q.iter().enumerate() {
                        let col = &vt[d * w..(d + 1) * w];
                        for (a, &x) in acc.iter_mut().zip(col) {
                            *a += qd * x;
                        }
                    }
                    let nq = norm_squared(q);
                    if nq == S::zero() {
                        return Err(Error::ZeroVector);
                    }
                    for (a, &nv) in acc.iter_mut().zip(&scratch.norms) {
                        *a = cosine_from_parts(*a, nq, nv);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Independent reference: accumulate in f64, compare with relative tolerance.
    fn reference(a: &[f32], b: &[f32], metric: Metric) -> f64 {
        match metric {
            Metric::SquaredL2 => a
                .iter()
                .zip(b)
                .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                .sum(),
            Metric::Cosine => {
                let d: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
                let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
                let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
                1.0 - d / (na * nb)
            }
        }
    }

    fn random_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<f32> {
        (0..n * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn identity_and_orthogonality() {
        let v = [0.3f32, -1.5, 2.0, 7.0];
        assert_eq!(distance(&v, &v, Metric::SquaredL2).unwrap(), 0.0);
        let d = distance(&[1.0f32, 0.0], &[0.0, 1.0], Metric::Cosine).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            distance(&[1.0f32, 2.0], &[1.0], Metric::SquaredL2),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            distance(&[0.0f32, 0.0], &[1.0, 0.0], Metric::Cosine),
            Err(Error::ZeroVector)
        ));
        assert!(matches!(
            batched_distances(&[1.0f32, 0.0], &[0.0, 0.0], 2, Metric::Cosine),
            Err(Error::ZeroVector)
        ));
        assert!(batched_distances(&[1.0f32, 0.0, 1.0], &[0.0, 0.0], 2, Metric::SquaredL2).is_err());
    }

    #[test]
    fn scalar_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for metric in [Metric::SquaredL2, Metric::Cosine] {
            for _ in 0..200 {
                let dim = rng.gen_range(1..100);
                let a = random_rows(&mut rng, 1, dim);
                let b = random_rows(&mut rng, 1, dim);
                let got = distance(&a, &b, metric).unwrap() as f64;
                let want = reference(&a, &b, metric);
                assert!(rel_close(got, want, 1e-5) || (got - want).abs() < 1e-6, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn single_pair_block_equals_scalar() {
        let a = [1.0f32, 2.0, 3.0];
        let b = [-1.0f32, 0.5, 4.0];
        for metric in [Metric::SquaredL2, Metric::Cosine] {
            let block = batched_distances(&a, &b, 3, metric).unwrap();
            assert_eq!(block.values, vec![distance(&a, &b, metric).unwrap()]);
        }
    }

    #[test]
    fn self_block_is_symmetric_with_zero_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dim = 16;
        let v = random_rows(&mut rng, 5, dim);
        let block = batched_distances(&v, &v, dim, Metric::SquaredL2).unwrap();
        for i in 0..5 {
            assert_eq!(block.get(i, i), 0.0);
            for j in 0..5 {
                assert_eq!(block.get(i, j), block.get(j, i));
            }
        }
    }

    #[test]
    fn block_32x128_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dim = 64;
        let q = random_rows(&mut rng, 32, dim);
        let v = random_rows(&mut rng, 128, dim);
        for metric in [Metric::SquaredL2, Metric::Cosine] {
            let block = batched_distances(&q, &v, dim, metric).unwrap();
            for i in 0..32 {
                for j in 0..128 {
                    let want = reference(&q[i * dim..(i + 1) * dim], &v[j * dim..(j + 1) * dim], metric);
                    let got = block.get(i, j) as f64;
                    assert!(rel_close(got, want, 1e-4), "({i},{j}) {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn generic_over_f64() {
        let a = [1.0f64, 2.0];
        let b = [4.0f64, 6.0];
        assert_eq!(distance(&a, &b, Metric::SquaredL2).unwrap(), 25.0);
        let block = batched_distances(&a, &b, 2, Metric::SquaredL2).unwrap();
        assert_eq!(block.values, vec![25.0]);
    }

    proptest::proptest! {
        #[test]
        fn blocked_is_bitwise_scalar(
            seed in 0u64..1000,
            dim in 1usize..40,
            m in 1usize..6,
            b in 1usize..600,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_rows(&mut rng, m, dim);
            let v = random_rows(&mut rng, b, dim);
            for metric in [Metric::SquaredL2, Metric::Cosine] {
                let block = batched_distances(&q, &v, dim, metric).unwrap();
                for i in 0..m {
                    for j in 0..b {
                        let s = distance(&q[i * dim..(i + 1) * dim], &v[j * dim..(j + 1) * dim], metric).unwrap();
                        proptest::prop_assert_eq!(block.get(i, j).to_bits(), s.to_bits());
                    }
                }
            }
        }
    }
}
