//! Corner retrieval: team embeddings read off a receiver model's
//! frame-averaged latents, an exhaustive Euclidean index over them, and
//! the raw-feature cosine baseline.

use std::collections::HashSet;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cornergraph::{CornerGraph, GlobalFeatures, Team};
use crate::heads::{HeadError, Model, Task};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("the index is empty")]
    EmptyIndex,
    #[error("the corpus is empty")]
    EmptyCorpus,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("duplicate embedding for corner `{id}` ({side})")]
    Duplicate { id: String, side: Side },
    #[error("embedding `{id}` has dimension {found}, expected {expected}")]
    Dimension { id: String, expected: usize, found: usize },
    #[error("embedding `{id}` has non-finite entries")]
    NonFinite { id: String },
    #[error("the query has zero norm")]
    ZeroQuery,
    #[error("bad embedding record on line {line}: {reason}")]
    Record { line: usize, reason: String },
    #[error(transparent)]
    Head(#[from] HeadError),
}

/// Which players an embedding summarises.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Attacking,
    Defending,
    /// Attacking then defending embedding, concatenated.
    #[default]
    Both,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Attacking => "attacking",
            Side::Defending => "defending",
            Side::Both => "both",
        }
    }
}

impl From<Team> for Side {
    fn from(t: Team) -> Self {
        match t {
            Team::Attacking => Side::Attacking,
            Team::Defending => Side::Defending,
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "attacking" => Ok(Side::Attacking),
            "defending" => Ok(Side::Defending),
            "both" => Ok(Side::Both),
            other => Err(format!("unknown side `{other}` (attacking, defending or both)")),
        }
    }
}

/// One exported line: `{id, side, vector}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeamEmbedding {
    pub id: String,
    pub side: Side,
    pub vector: Vec<f64>,
}

/// Embeds `c` for `side`: the mean of that team's rows of the
/// frame-averaged node matrix, or both team means concatenated.
pub fn embed(c: &CornerGraph, model: &Model, side: Side) -> Result<TeamEmbedding, RetrievalError> {
    model.expect_task(Task::Receiver)?;
    let nodes = model
        .encoder()
        .encode(model.params(), c, &GlobalFeatures::none())
        .map_err(HeadError::from)?
        .node_matrix();
    let d = nodes.shape()[1];
    let team_mean = |team: Team| {
        let rows = team.indices();
        let n = rows.len() as f64;
        let mut out = vec![0.0; d];
        for u in rows {
            for (o, v) in out.iter_mut().zip(nodes.row(u)) {
                *o += v;
            }
        }
        out.into_iter().map(|v| v / n).collect::<Vec<_>>()
    };
    let vector = match side {
        Side::Attacking => team_mean(Team::Attacking),
        Side::Defending => team_mean(Team::Defending),
        Side::Both => {
            let mut v = team_mean(Team::Attacking);
            v.extend(team_mean(Team::Defending));
            v
        }
    };
    Ok(TeamEmbedding {
        id: c.id().to_string(),
        side,
        vector,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbors {
    pub neighbors: Vec<Neighbor>,
    /// Fewer candidates than `k` were available.
    pub truncated: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
}

/// Flat index searched by exhaustive scan.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingIndex {
    entries: Vec<TeamEmbedding>,
    metric: Metric,
}

impl EmbeddingIndex {
    /// Validates that `(id, side)` pairs are unique and that all vectors
    /// share one finite dimension.
    pub fn new(entries: Vec<TeamEmbedding>) -> Result<Self, RetrievalError> {
        let mut seen = HashSet::new();
        let dim = entries.first().map(|e| e.vector.len());
        for e in &entries {
            if !seen.insert((e.id.as_str(), e.side)) {
                return Err(RetrievalError::Duplicate {
                    id: e.id.clone(),
                    side: e.side,
                });
            }
            if Some(e.vector.len()) != dim {
                return Err(RetrievalError::Dimension {
                    id: e.id.clone(),
                    expected: dim.unwrap_or(0),
                    found: e.vector.len(),
                });
            }
            if !e.vector.iter().all(|v| v.is_finite()) {
                return Err(RetrievalError::NonFinite { id: e.id.clone() });
            }
        }
        Ok(Self {
            entries,
            metric: Metric::Euclidean,
        })
    }

    /// Embeds every corner of `corpus` for `side`.
    pub fn build(corpus: &[CornerGraph], model: &Model, side: Side) -> Result<Self, RetrievalError> {
        let entries = corpus.iter().map(|c| embed(c, model, side)).collect::<Result<Vec<_>, _>>()?;
        Self::new(entries)
    }

    pub fn entries(&self) -> &[TeamEmbedding] {
        &self.entries
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dimension(&self) -> Option<usize> {
        self.entries.first().map(|e| e.vector.len())
    }

    /// The `k` closest entries of the query's side by ascending Euclidean
    /// distance, ties by ascending id. With `exclude_self` the entry
    /// sharing the query's id is skipped.
    pub fn nearest(&self, query: &TeamEmbedding, k: usize, exclude_self: bool) -> Result<Neighbors, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        if self.entries.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        let dim = self.dimension().expect("non-empty");
        if query.vector.len() != dim {
            return Err(RetrievalError::Dimension {
                id: query.id.clone(),
                expected: dim,
                found: query.vector.len(),
            });
        }
        let mut hits: Vec<Neighbor> = self
            .entries
            .iter()
            .filter(|e| e.side == query.side && !(exclude_self && e.id == query.id))
            .map(|e| Neighbor {
                id: e.id.clone(),
                distance: euclidean(&query.vector, &e.vector),
            })
            .collect();
        hits.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.id.cmp(&b.id)));
        let truncated = hits.len() < k;
        hits.truncate(k);
        Ok(Neighbors { neighbors: hits, truncated })
    }

    /// Line-delimited `{id, side, vector}` records.
    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("embeddings serialize") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, RetrievalError> {
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| RetrievalError::Record {
                    line: i + 1,
                    reason: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(entries)
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Similar {
    pub id: String,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineMatches {
    pub matches: Vec<Similar>,
    /// Corpus corners skipped because their feature vector is zero.
    pub excluded: Vec<String>,
    pub truncated: bool,
}

/// Cosine similarity of two vectors; `None` when either has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| dot / (na * nb))
}

/// Ranks `corpus` by descending cosine similarity of flattened raw node
/// features to `query`, ties by ascending id.
pub fn cosine_baseline(query: &CornerGraph, corpus: &[CornerGraph], k: usize) -> Result<CosineMatches, RetrievalError> {
    cosine_rank(&query.node_features(), corpus.iter().map(|c| (c.id(), c.node_features())), k)
}

/// [`cosine_baseline`] over precomputed feature vectors.
pub fn cosine_rank<'a>(query: &[f64], corpus: impl IntoIterator<Item = (&'a str, Vec<f64>)>, k: usize) -> Result<CosineMatches, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if cosine(query, query).is_none() {
        return Err(RetrievalError::ZeroQuery);
    }
    let mut matches = Vec::new();
    let mut excluded = Vec::new();
    let mut any = false;
    for (id, features) in corpus {
        any = true;
        match cosine(query, &features) {
            Some(similarity) => matches.push(Similar { id: id.to_string(), similarity }),
            None => excluded.push(id.to_string()),
        }
    }
    if !any {
        return Err(RetrievalError::EmptyCorpus);
    }
    matches.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then_with(|| a.id.cmp(&b.id)));
    let truncated = matches.len() < k;
    matches.truncate(k);
    Ok(CosineMatches { matches, excluded, truncated })
}
