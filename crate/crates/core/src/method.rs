//! The six embedding methods behind one interface.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::baselines::{build_ppmi, build_softmax, build_sum, truncated_svd, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::factor::CompressionFactor;
use crate::neural::{train, TrainConfig};
use crate::scalar::Scalar;
use crate::schema::UserCorpus;

/// Anything that turns a corpus into one embedding per user.
///
/// `seed` drives whatever randomness the method has; deterministic methods
/// ignore it.
pub trait EmbeddingMethod<T: Scalar>: Sync {
    fn embed(&self, corpus: &UserCorpus, seed: u64) -> Result<EmbeddingMatrix<T>>;

    fn tag(&self) -> String;

    fn factor(&self) -> CompressionFactor {
        CompressionFactor::ONE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    Sum,
    Ppmi,
    Sm,
    SvdPpmi,
    SvdSm,
    Traj2user,
}

impl MethodKind {
    pub const ALL: [MethodKind; 6] = [
        MethodKind::Sum,
        MethodKind::Ppmi,
        MethodKind::Sm,
        MethodKind::SvdPpmi,
        MethodKind::SvdSm,
        MethodKind::Traj2user,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MethodKind::Sum => "sum",
            MethodKind::Ppmi => "ppmi",
            MethodKind::Sm => "sm",
            MethodKind::SvdPpmi => "svd-ppmi",
            MethodKind::SvdSm => "svd-sm",
            MethodKind::Traj2user => "traj2user",
        }
    }

    pub fn accepts_factor(&self) -> bool {
        matches!(
            self,
            MethodKind::SvdPpmi | MethodKind::SvdSm | MethodKind::Traj2user
        )
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Sum,
    Ppmi,
    Softmax,
    SvdPpmi(CompressionFactor),
    SvdSoftmax(CompressionFactor),
    Traj2User(TrainConfig),
}

impl Method {
    /// Builds a method, rejecting factor settings with no meaning for it:
    /// Sum, PPMI and Softmax only exist at `f = 1`, and SVD cannot expand.
    pub fn new(kind: MethodKind, factor: CompressionFactor, train: TrainConfig) -> Result<Self> {
        if !kind.accepts_factor() && !factor.is_one() {
            return Err(Error::InvalidCombination(format!(
                "method {kind} has no compression factor (got {factor})"
            )));
        }
        let svd_factor = || {
            if factor < CompressionFactor::ONE {
                Err(Error::InvalidCombination(format!(
                    "method {kind} needs factor >= 1 (got {factor})"
                )))
            } else {
                Ok(factor)
            }
        };
        Ok(match kind {
            MethodKind::Sum => Method::Sum,
            MethodKind::Ppmi => Method::Ppmi,
            MethodKind::Sm => Method::Softmax,
            MethodKind::SvdPpmi => Method::SvdPpmi(svd_factor()?),
            MethodKind::SvdSm => Method::SvdSoftmax(svd_factor()?),
            MethodKind::Traj2user => Method::Traj2User(TrainConfig { factor, ..train }),
        })
    }

    pub fn kind(&self) -> MethodKind {
        match self {
            Method::Sum => MethodKind::Sum,
            Method::Ppmi => MethodKind::Ppmi,
            Method::Softmax => MethodKind::Sm,
            Method::SvdPpmi(_) => MethodKind::SvdPpmi,
            Method::SvdSoftmax(_) => MethodKind::SvdSm,
            Method::Traj2User(_) => MethodKind::Traj2user,
        }
    }
}

impl<T: Scalar> EmbeddingMethod<T> for Method {
    fn embed(&self, corpus: &UserCorpus, seed: u64) -> Result<EmbeddingMatrix<T>> {
        let sum = || build_sum::<T>(corpus);
        match self {
            Method::Sum => Ok(sum()),
            Method::Ppmi => build_ppmi(&sum()),
            Method::Softmax => Ok(build_softmax(&sum())),
            Method::SvdPpmi(f) => truncated_svd(&build_ppmi(&sum())?, *f),
            Method::SvdSoftmax(f) => truncated_svd(&build_softmax(&sum()), *f),
            Method::Traj2User(cfg) => {
                let cfg = TrainConfig {
                    seed,
                    ..cfg.clone()
                };
                Ok(train::<T>(corpus, &cfg)?.embeddings())
            }
        }
    }

    fn tag(&self) -> String {
        self.kind().to_string()
    }

    fn factor(&self) -> CompressionFactor {
        match self {
            Method::SvdPpmi(f) | Method::SvdSoftmax(f) => *f,
            Method::Traj2User(cfg) => cfg.factor,
            _ => CompressionFactor::ONE,
        }
    }
}
