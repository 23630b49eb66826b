//! Similarity-search evaluation.
//!
//! A test pair is made by splitting one user's descriptors at random between
//! two virtual users. Embeddings are rebuilt on the population where the
//! source user is replaced by the pair, and the rank of one half among all
//! users ordered by cosine similarity to the other half is recorded. The
//! mean reciprocal rank over many pairs scores the method.

use std::io::Write;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::baselines::{cosine_similarity, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::factor::CompressionFactor;
use crate::linalg::Matrix;
use crate::method::EmbeddingMethod;
use crate::scalar::{format_lossless, Scalar};
use crate::schema::{MovementDescriptor, UserCorpus, USER_COLUMN};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VirtualPair {
    pub source_user: String,
    pub left: (String, Vec<MovementDescriptor>),
    pub right: (String, Vec<MovementDescriptor>),
    pub seed: u64,
}

pub fn left_name(user: &str) -> String {
    format!("{user}'")
}

pub fn right_name(user: &str) -> String {
    format!("{user}''")
}

/// Splits a user's descriptors between two non-empty virtual users, each
/// descriptor going left or right with probability 1/2.
pub fn make_virtual_pair(corpus: &UserCorpus, user: &str, seed: u64) -> Result<VirtualPair> {
    let idx = corpus
        .position(user)
        .ok_or_else(|| Error::UserNotFound(user.to_string()))?;
    let descriptors = corpus.descriptors(idx);
    if descriptors.len() < 2 {
        return Err(Error::TooFewDescriptors {
            user: user.to_string(),
            count: descriptors.len(),
            needed: 2,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sides = vec![false; descriptors.len()];
    loop {
        sides.iter_mut().for_each(|s| *s = rng.random_bool(0.5));
        let n_left = sides.iter().filter(|&&s| s).count();
        if n_left > 0 && n_left < sides.len() {
            break;
        }
    }
    let mut left = Vec::new();
    let mut right = Vec::new();
    for (d, &to_left) in descriptors.iter().zip(&sides) {
        if to_left {
            left.push(d.clone());
        } else {
            right.push(d.clone());
        }
    }
    Ok(VirtualPair {
        source_user: user.to_string(),
        left: (left_name(user), left),
        right: (right_name(user), right),
        seed,
    })
}

/// The corpus with the pair's source user replaced by its two halves,
/// appended at the end.
pub fn pair_population(corpus: &UserCorpus, pair: &VirtualPair) -> Result<UserCorpus> {
    if corpus.position(&pair.source_user).is_none() {
        return Err(Error::UserNotFound(pair.source_user.clone()));
    }
    let mut entries: Vec<(String, Vec<MovementDescriptor>)> = corpus
        .iter()
        .filter(|(u, _)| *u != pair.source_user)
        .map(|(u, ds)| (u.to_string(), ds.to_vec()))
        .collect();
    entries.push(pair.left.clone());
    entries.push(pair.right.clone());
    UserCorpus::new(entries, corpus.dim())
}

/// Cosine similarity to the query for every user; zero-norm rows get `-inf`.
fn similarities_to<T: Scalar>(embeddings: &EmbeddingMatrix<T>, query: usize) -> Vec<T> {
    let q = embeddings.row(query);
    (0..embeddings.n_users())
        .map(|i| cosine_similarity(q, embeddings.row(i)).unwrap_or(T::neg_infinity()))
        .collect()
}

/// 1-based rank of `target` among all users except `query`, ordered by
/// descending cosine similarity to `query`. Ties go to the lower index;
/// zero-norm embeddings rank after every nonzero one.
pub fn rank_of_target<T: Scalar>(
    embeddings: &EmbeddingMatrix<T>,
    query: &str,
    target: &str,
) -> Result<usize> {
    let q = embeddings
        .position(query)
        .ok_or_else(|| Error::UserNotFound(query.to_string()))?;
    let t = embeddings
        .position(target)
        .ok_or_else(|| Error::UserNotFound(target.to_string()))?;
    if q == t {
        return Err(Error::InvalidConfig(
            "query and target are the same user".into(),
        ));
    }
    let sims = similarities_to(embeddings, q);
    let st = sims[t];
    let ahead = sims
        .iter()
        .enumerate()
        .filter(|&(i, &s)| i != q && i != t && (s > st || (s == st && i < t)))
        .count();
    Ok(ahead + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairResult {
    pub pair_id: usize,
    pub source_user: String,
    pub rank: usize,
    pub reciprocal_rank: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrrReport {
    pub per_pair: Vec<PairResult>,
    pub mrr: f64,
    pub n_pairs: usize,
    pub method_tag: String,
    pub compression_factor: CompressionFactor,
}

impl MrrReport {
    pub fn new(
        per_pair: Vec<PairResult>,
        method_tag: impl Into<String>,
        compression_factor: CompressionFactor,
    ) -> Self {
        let n_pairs = per_pair.len();
        let mrr = per_pair.iter().map(|p| p.reciprocal_rank).sum::<f64>() / n_pairs as f64;
        MrrReport {
            per_pair,
            mrr,
            n_pairs,
            method_tag: method_tag.into(),
            compression_factor,
        }
    }

    pub fn reciprocal_ranks(&self) -> Vec<f64> {
        self.per_pair.iter().map(|p| p.reciprocal_rank).collect()
    }

    /// Per-pair rows, then a `#`-prefixed summary line.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["pair_id", "source_user", "rank", "reciprocal_rank"])?;
        for p in &self.per_pair {
            w.write_record([
                p.pair_id.to_string(),
                p.source_user.clone(),
                p.rank.to_string(),
                format_lossless(p.reciprocal_rank),
            ])?;
        }
        let mut sink = w
            .into_inner()
            .map_err(|e| Error::io("<report>", e.into_error()))?;
        writeln!(
            sink,
            "# mrr={},n_pairs={},method={},factor={}",
            format_lossless(self.mrr),
            self.n_pairs,
            self.method_tag,
            self.compression_factor
        )
        .map_err(|e| Error::io("<report>", e))?;
        Ok(())
    }
}

/// One evaluation job: which user to split and the seeds it runs with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairPlan {
    pub pair_id: usize,
    pub user: usize,
    pub split_seed: u64,
    pub embed_seed: u64,
}

/// Draws `n_pairs` source users with replacement among users that can be
/// split, with a split seed and an embedding seed per pair.
pub fn plan_pairs(corpus: &UserCorpus, n_pairs: usize, seed: u64) -> Result<Vec<PairPlan>> {
    if n_pairs == 0 {
        return Err(Error::InvalidConfig(
            "number of pairs must be positive".into(),
        ));
    }
    let eligible: Vec<usize> = (0..corpus.n_users())
        .filter(|&i| corpus.descriptors(i).len() >= 2)
        .collect();
    if eligible.is_empty() {
        return Err(Error::InsufficientUsers {
            needed: 1,
            available: 0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_pairs)
        .map(|pair_id| PairPlan {
            pair_id,
            user: eligible[rng.random_range(0..eligible.len())],
            split_seed: rng.random(),
            embed_seed: rng.random(),
        })
        .collect())
}

pub fn evaluate_pair<T: Scalar, M: EmbeddingMethod<T> + ?Sized>(
    corpus: &UserCorpus,
    method: &M,
    plan: &PairPlan,
) -> Result<PairResult> {
    let source = &corpus.users()[plan.user];
    let pair = make_virtual_pair(corpus, source, plan.split_seed)?;
    let population = pair_population(corpus, &pair)?;
    let embeddings = method.embed(&population, plan.embed_seed)?;
    let rank = rank_of_target(&embeddings, &pair.left.0, &pair.right.0)?;
    Ok(PairResult {
        pair_id: plan.pair_id,
        source_user: source.clone(),
        rank,
        reciprocal_rank: 1.0 / rank as f64,
    })
}

/// Runs the pair protocol. With `jobs > 1` pairs are evaluated on a thread
/// pool; results are always reported in pair order.
pub fn run_mrr_experiment<T: Scalar, M: EmbeddingMethod<T> + ?Sized>(
    corpus: &UserCorpus,
    method: &M,
    n_pairs: usize,
    seed: u64,
    jobs: usize,
) -> Result<MrrReport> {
    let plans = plan_pairs(corpus, n_pairs, seed)?;
    let results: Vec<PairResult> = if jobs <= 1 {
        plans
            .iter()
            .map(|p| evaluate_pair(corpus, method, p))
            .collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        pool.install(|| {
            plans
                .par_iter()
                .map(|p| evaluate_pair(corpus, method, p))
                .collect::<Result<Vec<_>>>()
        })?
    };
    Ok(MrrReport::new(results, method.tag(), method.factor()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
}

/// Two-sided paired t-test on `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::DegenerateSample(format!(
            "need at least 2 pairs, got {n}"
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if diffs.iter().all(|&d| d == diffs[0]) {
        return Err(Error::DegenerateSample(
            "all differences are identical".into(),
        ));
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::DegenerateSample(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Ok(TTest { t, p, df: n - 1 })
}

/// User-by-user cosine similarities, with group membership when the
/// population was planted in groups.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub user_index: Vec<String>,
    pub values: Matrix<f64>,
    pub groups: Vec<usize>,
}

impl SimilarityMatrix {
    /// Zero-norm embeddings get similarity 0 with everything, themselves included.
    pub fn from_embeddings<T: Scalar>(
        embeddings: &EmbeddingMatrix<T>,
        groups: Vec<usize>,
    ) -> Result<Self> {
        let n = embeddings.n_users();
        if groups.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: groups.len(),
            });
        }
        let mut values = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let s = cosine_similarity(embeddings.row(i), embeddings.row(j))
                    .map(Scalar::as_f64)
                    .unwrap_or(0.0);
                values.set(i, j, s);
                values.set(j, i, s);
            }
        }
        Ok(SimilarityMatrix {
            user_index: embeddings.user_index().to_vec(),
            values,
            groups,
        })
    }

    pub fn n_users(&self) -> usize {
        self.user_index.len()
    }

    /// Mean off-diagonal similarity within groups and between groups.
    /// Either is NaN when no such pair exists.
    pub fn within_between_means(&self) -> (f64, f64) {
        let (mut within, mut nw, mut between, mut nb) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..self.n_users() {
            for j in 0..self.n_users() {
                if i == j {
                    continue;
                }
                let s = self.values.get(i, j);
                if self.groups[i] == self.groups[j] {
                    within += s;
                    nw += 1;
                } else {
                    between += s;
                    nb += 1;
                }
            }
        }
        (within / nw as f64, between / nb as f64)
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec![USER_COLUMN.to_string()];
        header.extend(self.user_index.iter().cloned());
        w.write_record(&header)?;
        for (i, u) in self.user_index.iter().enumerate() {
            let mut rec = vec![u.clone()];
            rec.extend(self.values.row(i).iter().map(|&x| format_lossless(x)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<similarity>", e))?;
        Ok(())
    }

    /// Gray level `round(255 (s + 1) / 2)`: identical directions are white.
    pub fn pixel(sim: f64) -> u8 {
        (255.0 * (sim + 1.0) / 2.0).round().clamp(0.0, 255.0) as u8
    }

    /// Binary 8-bit PGM (P5).
    pub fn write_pgm<W: Write>(&self, mut sink: W) -> Result<()> {
        let n = self.n_users();
        let io = |e| Error::io("<pgm>", e);
        write!(sink, "P5\n{n} {n}\n255\n").map_err(io)?;
        let pixels: Vec<u8> = self
            .values
            .as_slice()
            .iter()
            .map(|&s| Self::pixel(s))
            .collect();
        sink.write_all(&pixels).map_err(io)?;
        Ok(())
    }
}

const MAX_SPLIT_ATTEMPTS: usize = 1_000_000;

/// Multinomial split of `descriptors` into `parts` non-empty lists with equal
/// probabilities, resampled until no part is empty.
fn split_into_parts(
    user: &str,
    descriptors: &[MovementDescriptor],
    parts: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<MovementDescriptor>>> {
    if descriptors.len() < parts {
        return Err(Error::TooFewDescriptors {
            user: user.to_string(),
            count: descriptors.len(),
            needed: parts,
        });
    }
    let mut assignment = vec![0usize; descriptors.len()];
    let mut sizes = vec![0usize; parts];
    for _ in 0..MAX_SPLIT_ATTEMPTS {
        sizes.iter_mut().for_each(|s| *s = 0);
        for a in assignment.iter_mut() {
            *a = rng.random_range(0..parts);
            sizes[*a] += 1;
        }
        if sizes.iter().all(|&s| s > 0) {
            let mut out = vec![Vec::new(); parts];
            for (d, &a) in descriptors.iter().zip(&assignment) {
                out[a].push(d.clone());
            }
            return Ok(out);
        }
    }
    Err(Error::DegenerateSample(format!(
        "could not split {} descriptors of {user:?} into {parts} non-empty groups",
        descriptors.len()
    )))
}

/// Builds the planted-group population: `n_groups` distinct source users,
/// each split into `group_size` virtual users named `<source>/<member>`.
/// Members of a group are adjacent.
pub fn group_population(
    corpus: &UserCorpus,
    n_groups: usize,
    group_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(UserCorpus, Vec<usize>)> {
    if n_groups == 0 || group_size == 0 {
        return Err(Error::InvalidConfig(
            "groups and group size must be positive".into(),
        ));
    }
    let eligible: Vec<usize> = (0..corpus.n_users())
        .filter(|&i| corpus.descriptors(i).len() >= group_size)
        .collect();
    if eligible.len() < n_groups {
        return Err(Error::InsufficientUsers {
            needed: n_groups,
            available: eligible.len(),
        });
    }
    let chosen = sample(rng, eligible.len(), n_groups);
    let mut entries = Vec::with_capacity(n_groups * group_size);
    let mut groups = Vec::with_capacity(n_groups * group_size);
    for (g, pick) in chosen.iter().enumerate() {
        let user = eligible[pick];
        let name = &corpus.users()[user];
        let parts = split_into_parts(name, corpus.descriptors(user), group_size, rng)?;
        for (m, part) in parts.into_iter().enumerate() {
            entries.push((format!("{name}/{m}"), part));
            groups.push(g);
        }
    }
    Ok((UserCorpus::new(entries, corpus.dim())?, groups))
}

pub fn run_group_experiment<T: Scalar, M: EmbeddingMethod<T> + ?Sized>(
    corpus: &UserCorpus,
    n_groups: usize,
    group_size: usize,
    method: &M,
    seed: u64,
) -> Result<SimilarityMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (population, groups) = group_population(corpus, n_groups, group_size, &mut rng)?;
    let embed_seed = rng.random();
    let embeddings = method.embed(&population, embed_seed)?;
    SimilarityMatrix::from_embeddings(&embeddings, groups)
}
