//! Count-based user embeddings: Sum, PPMI, Softmax and truncated SVD.

use std::collections::HashSet;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::factor::CompressionFactor;
use crate::linalg::{svd, Matrix};
use crate::scalar::{format_lossless, Scalar};
use crate::schema::{UserCorpus, USER_COLUMN};

/// One embedding row per user, plus the provenance of the rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<T> {
    user_index: Vec<String>,
    values: Matrix<T>,
    method_tag: String,
    compression_factor: CompressionFactor,
}

impl<T: Scalar> EmbeddingMatrix<T> {
    pub fn new(
        user_index: Vec<String>,
        values: Matrix<T>,
        method_tag: impl Into<String>,
        compression_factor: CompressionFactor,
    ) -> Result<Self> {
        if user_index.len() != values.rows() {
            return Err(Error::DimensionMismatch {
                expected: user_index.len(),
                actual: values.rows(),
            });
        }
        let mut seen = HashSet::with_capacity(user_index.len());
        for u in &user_index {
            if !seen.insert(u.as_str()) {
                return Err(Error::DuplicateUser(u.clone()));
            }
        }
        if !values.is_finite() {
            return Err(Error::DegenerateMatrix("non-finite embedding entry".into()));
        }
        Ok(EmbeddingMatrix {
            user_index,
            values,
            method_tag: method_tag.into(),
            compression_factor,
        })
    }

    pub fn user_index(&self) -> &[String] {
        &self.user_index
    }

    pub fn values(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn method_tag(&self) -> &str {
        &self.method_tag
    }

    pub fn compression_factor(&self) -> CompressionFactor {
        self.compression_factor
    }

    pub fn n_users(&self) -> usize {
        self.user_index.len()
    }

    /// Embedding length `k`.
    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.values.row(i)
    }

    pub fn position(&self, user_id: &str) -> Option<usize> {
        self.user_index.iter().position(|u| u == user_id)
    }

    pub fn embedding(&self, user_id: &str) -> Option<&[T]> {
        self.position(user_id).map(|i| self.row(i))
    }

    /// Writes `user_id,e_0,...,e_{k-1}` with lossless decimal floats.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec![USER_COLUMN.to_string()];
        header.extend((0..self.dim()).map(|j| format!("e_{j}")));
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(self.dim() + 1);
        for (i, user) in self.user_index.iter().enumerate() {
            record.clear();
            record.push(user.clone());
            record.extend(self.row(i).iter().map(|&x| format_lossless(x)));
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<embeddings>", e))?;
        Ok(())
    }

    /// Reads the CSV layout written by [`write_csv`](Self::write_csv). The
    /// method tag and factor are not part of the file and must be supplied.
    pub fn read_csv<R: Read>(
        source: R,
        method_tag: impl Into<String>,
        compression_factor: CompressionFactor,
    ) -> Result<Self> {
        let mut r = csv::Reader::from_reader(source);
        let header = r.headers()?.clone();
        if header.get(0) != Some(USER_COLUMN) {
            return Err(Error::Parse {
                line: 1,
                message: format!("first column must be {USER_COLUMN:?}"),
            });
        }
        let k = header.len() - 1;
        let mut users = Vec::new();
        let mut data = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            users.push(rec[0].to_string());
            for field in rec.iter().skip(1) {
                data.push(field.parse::<T>().map_err(|_| Error::Parse {
                    line,
                    message: format!("not a number: {field:?}"),
                })?);
            }
        }
        let values = Matrix::from_vec(users.len(), k, data)?;
        Self::new(users, values, method_tag, compression_factor)
    }
}

/// Row `i` is the sum of user `i`'s descriptors.
pub fn build_sum<T: Scalar>(corpus: &UserCorpus) -> EmbeddingMatrix<T> {
    let mut values = Matrix::zeros(corpus.n_users(), corpus.dim());
    for (i, (_, descriptors)) in corpus.iter().enumerate() {
        let row = values.row_mut(i);
        for d in descriptors {
            for &bit in d.active() {
                row[bit] = row[bit] + T::one();
            }
        }
    }
    EmbeddingMatrix::new(
        corpus.users().to_vec(),
        values,
        "sum",
        CompressionFactor::ONE,
    )
    .expect("corpus user ids are unique")
}

/// Positive pointwise mutual information between users and descriptor
/// components, with maximum-likelihood probabilities from the counts.
/// Zero cells map to zero.
pub fn build_ppmi<T: Scalar>(counts: &EmbeddingMatrix<T>) -> Result<EmbeddingMatrix<T>> {
    let m = counts.values();
    if m.as_slice().iter().any(|&x| x < T::zero()) {
        return Err(Error::DegenerateMatrix("negative count".into()));
    }
    let row_sums: Vec<T> = (0..m.rows())
        .map(|i| m.row(i).iter().copied().sum())
        .collect();
    let mut col_sums = vec![T::zero(); m.cols()];
    for i in 0..m.rows() {
        for (c, &x) in col_sums.iter_mut().zip(m.row(i)) {
            *c = *c + x;
        }
    }
    let total: T = row_sums.iter().copied().sum();
    if total <= T::zero() {
        return Err(Error::DegenerateMatrix("grand total is zero".into()));
    }
    let values = Matrix::from_fn(m.rows(), m.cols(), |i, j| {
        let x = m.get(i, j);
        if x == T::zero() {
            return T::zero();
        }
        let pmi = ((x * total) / (row_sums[i] * col_sums[j])).log2();
        pmi.max(T::zero())
    });
    EmbeddingMatrix::new(
        counts.user_index().to_vec(),
        values,
        "ppmi",
        counts.compression_factor(),
    )
}

/// Row-wise softmax, shifted by the row maximum.
pub fn build_softmax<T: Scalar>(counts: &EmbeddingMatrix<T>) -> EmbeddingMatrix<T> {
    let m = counts.values();
    let mut values = Matrix::zeros(m.rows(), m.cols());
    for i in 0..m.rows() {
        let src = m.row(i);
        let max = src.iter().copied().fold(T::neg_infinity(), T::max);
        let out = values.row_mut(i);
        let mut z = T::zero();
        for (o, &x) in out.iter_mut().zip(src) {
            *o = (x - max).exp();
            z = z + *o;
        }
        for o in out.iter_mut() {
            *o = *o / z;
        }
    }
    EmbeddingMatrix::new(
        counts.user_index().to_vec(),
        values,
        "sm",
        counts.compression_factor(),
    )
    .expect("softmax of a finite matrix is finite")
}

/// Truncated SVD embedding `U_k S_k` with `k = floor(|d| / factor)`.
pub fn truncated_svd<T: Scalar>(
    matrix: &EmbeddingMatrix<T>,
    factor: CompressionFactor,
) -> Result<EmbeddingMatrix<T>> {
    let m = matrix.values();
    let max = m.rows().min(m.cols());
    if factor < CompressionFactor::ONE {
        return Err(Error::InvalidCombination(format!(
            "truncated SVD cannot expand: factor {factor} < 1"
        )));
    }
    let k = factor.floor_len(m.cols());
    if k < 1 || k > max {
        return Err(Error::RankTooLarge { requested: k, max });
    }
    let decomposition = svd(m)?;
    EmbeddingMatrix::new(
        matrix.user_index().to_vec(),
        decomposition.scaled_left(k),
        format!("svd-{}", matrix.method_tag()),
        factor,
    )
}

pub fn cosine_similarity<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    let mut dot = T::zero();
    let mut xx = T::zero();
    let mut yy = T::zero();
    for (&a, &b) in x.iter().zip(y) {
        dot = dot + a * b;
        xx = xx + a * a;
        yy = yy + b * b;
    }
    if xx == T::zero() || yy == T::zero() {
        return Err(Error::ZeroVector);
    }
    Ok(dot / (xx.sqrt() * yy.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::MovementDescriptor;
    use proptest::prelude::*;

    fn matrix(rows: &[Vec<f64>]) -> EmbeddingMatrix<f64> {
        let users = (0..rows.len()).map(|i| format!("u{i}")).collect();
        EmbeddingMatrix::new(
            users,
            Matrix::from_rows(rows).unwrap(),
            "sum",
            CompressionFactor::ONE,
        )
        .unwrap()
    }

    fn descriptor(bits: &[u8]) -> MovementDescriptor {
        let active = bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == 1)
            .map(|(i, _)| i)
            .collect();
        MovementDescriptor::from_active(active, bits.len()).unwrap()
    }

    fn corpus(users: Vec<Vec<&[u8]>>) -> UserCorpus {
        let dim = users[0][0].len();
        let entries = users
            .into_iter()
            .enumerate()
            .map(|(i, ds)| (format!("u{i}"), ds.into_iter().map(descriptor).collect()))
            .collect();
        UserCorpus::new(entries, dim).unwrap()
    }

    #[test]
    fn sum_of_two_descriptors() {
        let c = corpus(vec![vec![&[1, 0, 1, 0], &[1, 0, 0, 1]]]);
        let m = build_sum::<f64>(&c);
        assert_eq!(m.row(0), &[2.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn sum_of_single_descriptor_is_identity() {
        let c = corpus(vec![vec![&[0, 1, 1, 0]]]);
        assert_eq!(build_sum::<f64>(&c).row(0), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn ppmi_single_cell() {
        assert_eq!(build_ppmi(&matrix(&[vec![5.0]])).unwrap().row(0), &[0.0]);
    }

    #[test]
    fn ppmi_identity() {
        let p = build_ppmi(&matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap();
        assert_eq!(p.row(0), &[1.0, 0.0]);
        assert_eq!(p.row(1), &[0.0, 1.0]);
        assert_eq!(p.method_tag(), "ppmi");
    }

    #[test]
    fn ppmi_uniform_is_zero() {
        let p = build_ppmi(&matrix(&[vec![2.0, 2.0], vec![2.0, 2.0]])).unwrap();
        assert!(p.values().as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn ppmi_rejects_zero_total() {
        assert!(matches!(
            build_ppmi(&matrix(&[vec![0.0, 0.0]])),
            Err(Error::DegenerateMatrix(_))
        ));
    }

    #[test]
    fn softmax_examples() {
        let s = build_softmax(&matrix(&[
            vec![0.0, 0.0, 0.0, 0.0],
            vec![1.0, 1.0, 1.0, 1.0],
            vec![0.0, 3f64.ln(), 0.0, 0.0],
        ]));
        assert_eq!(s.row(0), &[0.25; 4]);
        assert_eq!(s.row(1), &[0.25; 4]);
        let two = build_softmax(&matrix(&[vec![0.0, 3f64.ln()]]));
        assert!((two.row(0)[0] - 0.25).abs() < 1e-15);
        assert!((two.row(0)[1] - 0.75).abs() < 1e-15);
        assert_eq!(s.method_tag(), "sm");
    }

    #[test]
    fn softmax_survives_large_counts() {
        let s = build_softmax(&matrix(&[vec![727.0, 700.0, 0.0]]));
        assert!(s.values().is_finite());
        assert!((s.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn svd_lengths() {
        let m = matrix(
            &(0..100)
                .map(|i| (0..88).map(|j| ((i * j) % 7) as f64).collect())
                .collect::<Vec<_>>(),
        );
        let e = truncated_svd(&m, "8".parse().unwrap()).unwrap();
        assert_eq!(e.dim(), 11);
        assert_eq!(e.method_tag(), "svd-sum");
        assert_eq!(e.compression_factor().to_string(), "8");
    }

    #[test]
    fn svd_rank_limits() {
        let m = matrix(&[vec![1.0, 2.0, 3.0, 4.0], vec![0.0, 1.0, 0.0, 1.0]]);
        // k = 4 exceeds min(2, 4)
        assert!(matches!(
            truncated_svd(&m, CompressionFactor::ONE),
            Err(Error::RankTooLarge {
                requested: 4,
                max: 2
            })
        ));
        assert!(matches!(
            truncated_svd(&m, "5".parse().unwrap()),
            Err(Error::RankTooLarge { requested: 0, .. })
        ));
        assert!(truncated_svd(&m, "0.5".parse().unwrap()).is_err());
        assert_eq!(truncated_svd(&m, "2".parse().unwrap()).unwrap().dim(), 2);
    }

    #[test]
    fn cosine_examples() {
        assert!(
            (cosine_similarity(&[1.0f64, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15
        );
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroVector)
        ));
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn csv_round_trip_is_bitwise() {
        let m = matrix(&[
            vec![0.1, -1.0 / 3.0, 1e-300],
            vec![f64::MAX, 2.0, f64::MIN_POSITIVE],
        ]);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("user_id,e_0,e_1,e_2\n"));
        let back = EmbeddingMatrix::<f64>::read_csv(buf.as_slice(), "sum", CompressionFactor::ONE)
            .unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn generic_over_f32() {
        let c = corpus(vec![
            vec![&[1, 0, 1, 0]],
            vec![&[0, 1, 1, 0], &[0, 1, 0, 1]],
        ]);
        let sum = build_sum::<f32>(&c);
        let p = build_ppmi(&sum).unwrap();
        assert!(p.values().as_slice().iter().all(|&x| x >= 0.0));
        let s = build_softmax(&sum);
        assert!((s.row(1).iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    fn arb_rows(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
            proptest::collection::vec(proptest::collection::vec(0u8..6, c), r).prop_map(|rows| {
                rows.into_iter()
                    .map(|r| r.into_iter().map(f64::from).collect())
                    .collect()
            })
        })
    }

    proptest! {
        #[test]
        fn sum_is_linear_in_descriptor_lists(
            a in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 6), 1..5),
            b in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 6), 1..5),
        ) {
            let to_d = |bits: &Vec<bool>| descriptor(&bits.iter().map(|&x| x as u8).collect::<Vec<_>>());
            let da: Vec<_> = a.iter().map(to_d).collect();
            let db: Vec<_> = b.iter().map(to_d).collect();
            let joined: Vec<_> = da.iter().chain(&db).cloned().collect();
            let c = UserCorpus::new(vec![("a".into(), da), ("b".into(), db), ("ab".into(), joined)], 6).unwrap();
            let m = build_sum::<f64>(&c);
            for j in 0..6 {
                prop_assert_eq!(m.row(2)[j], m.row(0)[j] + m.row(1)[j]);
            }
        }

        #[test]
        fn ppmi_is_non_negative(rows in arb_rows(6, 6)) {
            let m = matrix(&rows);
            prop_assume!(m.values().as_slice().iter().any(|&x| x > 0.0));
            let p = build_ppmi(&m).unwrap();
            prop_assert!(p.values().as_slice().iter().all(|&x| x >= 0.0 && x.is_finite()));
        }

        #[test]
        fn ppmi_of_independent_counts_is_zero(
            r in proptest::collection::vec(1u32..5, 1..5),
            c in proptest::collection::vec(1u32..5, 1..5),
        ) {
            let rows: Vec<Vec<f64>> = r.iter().map(|&a| c.iter().map(|&b| f64::from(a * b)).collect()).collect();
            let p = build_ppmi(&matrix(&rows)).unwrap();
            prop_assert!(p.values().as_slice().iter().all(|&x| x.abs() < 1e-12));
        }

        #[test]
        fn ppmi_is_permutation_equivariant(rows in arb_rows(4, 4), seed in any::<u64>()) {
            let m = matrix(&rows);
            prop_assume!(m.values().as_slice().iter().any(|&x| x > 0.0));
            let n = rows.len();
            let k = rows[0].len();
            let rp: Vec<usize> = (0..n).map(|i| (i + seed as usize) % n).collect();
            let cp: Vec<usize> = (0..k).map(|j| (j + (seed >> 8) as usize) % k).collect();
            let permuted: Vec<Vec<f64>> = rp.iter().map(|&i| cp.iter().map(|&j| rows[i][j]).collect()).collect();
            let a = build_ppmi(&m).unwrap();
            let b = build_ppmi(&matrix(&permuted)).unwrap();
            for (pi, &i) in rp.iter().enumerate() {
                for (pj, &j) in cp.iter().enumerate() {
                    prop_assert_eq!(a.values().get(i, j), b.values().get(pi, pj));
                }
            }
        }

        #[test]
        fn softmax_rows_are_distributions(
            rows in proptest::collection::vec(proptest::collection::vec(-30.0f64..30.0, 1..10), 1..5),
            shift in -100.0f64..100.0,
        ) {
            let k = rows[0].len();
            let rows: Vec<Vec<f64>> = rows.into_iter().map(|mut r| { r.resize(k, 0.0); r }).collect();
            let s = build_softmax(&matrix(&rows));
            let shifted: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x + shift).collect()).collect();
            let t = build_softmax(&matrix(&shifted));
            for i in 0..rows.len() {
                prop_assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(s.row(i).iter().all(|&x| x > 0.0 && x <= 1.0));
                for j in 0..k {
                    prop_assert!((s.row(i)[j] - t.row(i)[j]).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn cosine_is_scale_invariant(
            x in proptest::collection::vec(-10.0f64..10.0, 1..12),
            y in proptest::collection::vec(-10.0f64..10.0, 1..12),
            alpha in 1e-3f64..1e3,
            beta in 1e-3f64..1e3,
        ) {
            let n = x.len().min(y.len());
            let (x, y) = (&x[..n], &y[..n]);
            prop_assume!(x.iter().any(|&v| v != 0.0) && y.iter().any(|&v| v != 0.0));
            let c = cosine_similarity(x, y).unwrap();
            let xs: Vec<f64> = x.iter().map(|v| v * alpha).collect();
            let ys: Vec<f64> = y.iter().map(|v| v * beta).collect();
            prop_assert!((cosine_similarity(&xs, &ys).unwrap() - c).abs() < 1e-12);
            prop_assert!(c.abs() <= 1.0 + 1e-12);
        }
    }
}
