use super::LearnError;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiningStrategy {
    Random,
    SemiHard,
    Hard,
}

impl std::str::FromStr for MiningStrategy {
    type Err = LearnError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Self::Random),
            "semi-hard" | "semihard" => Ok(Self::SemiHard),
            "hard" => Ok(Self::Hard),
            other => Err(LearnError::Config { field: "mining", reason: format!("unknown strategy {other:?}") }),
        }
    }
}

/// `(anchor, positive, negative)` row indices into the batch.
pub type Triplet = (usize, usize, usize);

fn distances(emb: &[Vec<f64>]) -> Vec<Vec<f64>> {
    emb.iter()
        .map(|a| emb.iter().map(|b| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()).collect())
        .collect()
}

/// Pick triplets from a labelled batch.
///
/// * `Random`: every ordered anchor-positive pair with a uniformly drawn
///   negative.
/// * `SemiHard`: every ordered anchor-positive pair with the closest
///   negative satisfying `D_ap < D_an < D_ap + alpha`, or the closest
///   negative overall when none does.
/// * `Hard`: per anchor, the farthest positive and the closest negative.
///
/// Ties go to the lowest index.
pub fn mine_triplets<R: Rng>(
    emb: &[Vec<f64>],
    labels: &[usize],
    strategy: MiningStrategy,
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<Triplet>, LearnError> {
    let n = emb.len();
    let has_positive = (0..n).any(|a| (0..n).any(|p| p != a && labels[p] == labels[a]));
    if !has_positive {
        return Err(LearnError::Mining("no anchor-positive pair in batch".into()));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(LearnError::Mining("batch holds a single identity".into()));
    }
    let d = distances(emb);
    let negatives = |a: usize| (0..n).filter(move |&j| labels[j] != labels[a]);
    let argmin = |a: usize, it: &mut dyn Iterator<Item = usize>| {
        it.fold(None, |best: Option<usize>, j| match best {
            Some(b) if d[a][b] <= d[a][j] => Some(b),
            _ => Some(j),
        })
    };
    let mut out = Vec::new();
    for a in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&p| p != a && labels[p] == labels[a]).collect();
        if positives.is_empty() {
            continue;
        }
        match strategy {
            MiningStrategy::Random => {
                let negs: Vec<usize> = negatives(a).collect();
                for &p in &positives {
                    out.push((a, p, negs[rng.random_range(0..negs.len())]));
                }
            }
            MiningStrategy::SemiHard => {
                for &p in &positives {
                    let dap = d[a][p];
                    let semi = argmin(a, &mut negatives(a).filter(|&j| d[a][j] > dap && d[a][j] < dap + alpha));
                    let neg = semi.or_else(|| argmin(a, &mut negatives(a))).expect("negatives exist");
                    out.push((a, p, neg));
                }
            }
            MiningStrategy::Hard => {
                let p = positives.iter().copied().fold(positives[0], |b, j| if d[a][j] > d[a][b] { j } else { b });
                let neg = argmin(a, &mut negatives(a)).expect("negatives exist");
                out.push((a, p, neg));
            }
        }
    }
    Ok(out)
}
