use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CornerError, CornerGraph};

/// Parses line-delimited corner records. Blank lines are skipped.
pub fn parse_dataset(text: &str) -> Result<Vec<CornerGraph>, CornerError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| CornerError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<CornerGraph>, CornerError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CornerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text)
}

/// One JSON object per line, newline-terminated.
pub fn to_jsonl(graphs: &[CornerGraph]) -> String {
    let mut out = String::new();
    for g in graphs {
        out.push_str(&serde_json::to_string(g).expect("corner records always serialize"));
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: impl AsRef<Path>, graphs: &[CornerGraph]) -> Result<(), CornerError> {
    let path = path.as_ref();
    fs::write(path, to_jsonl(graphs)).map_err(|source| CornerError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Seeded partition of `0..n` into `(train, test)` index lists, each in
/// ascending order. The training side gets `round(n * ratio)` items.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), CornerError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(CornerError::InvalidArgument {
            field: "ratio",
            reason: format!("{ratio} is outside [0, 1]"),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (n as f64 * ratio).round() as usize;
    let mut train = order[..cut].to_vec();
    let mut test = order[cut..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split(dataset: &[CornerGraph], ratio: f64, seed: u64) -> Result<(Vec<CornerGraph>, Vec<CornerGraph>), CornerError> {
    let (train, test) = split_indices(dataset.len(), ratio, seed)?;
    Ok((
        train.into_iter().map(|i| dataset[i].clone()).collect(),
        test.into_iter().map(|i| dataset[i].clone()).collect(),
    ))
}
