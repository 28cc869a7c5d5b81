use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Triplet;
use crate::rouge::rouge_n;
use crate::textcore::tokenize;
use crate::{Error, Result};

pub const DULL_QUERY: &str = "what is it ?";

/// A dissimilar query must score strictly below this ROUGE-1 F1 against the
/// query it replaces.
pub const DISSIMILAR_MAX_F1: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryVariant {
    Original,
    Distractor,
    Dull,
    Dissimilar,
}

impl FromStr for QueryVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(QueryVariant::Original),
            "distractor" => Ok(QueryVariant::Distractor),
            "dull" => Ok(QueryVariant::Dull),
            "dissimilar" => Ok(QueryVariant::Dissimilar),
            _ => Err(Error::invalid(format!(
                "unknown query variant {s:?} (expected original, distractor, dull or dissimilar)"
            ))),
        }
    }
}

impl fmt::Display for QueryVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            QueryVariant::Original => "original",
            QueryVariant::Distractor => "distractor",
            QueryVariant::Dull => "dull",
            QueryVariant::Dissimilar => "dissimilar",
        };
        f.write_str(s)
    }
}

/// Replaces every query according to `variant`. Distractor and dissimilar
/// queries are taken from the other triplets' queries: the distractor is the
/// one with the highest ROUGE-1 F1 (lowest index on ties), the dissimilar one
/// the first by index scoring below [`DISSIMILAR_MAX_F1`].
///
/// Selection is deterministic, so `_seed` only keeps the signature uniform
/// with the other builders.
pub fn make_query_variant(triplets: &[Triplet], variant: QueryVariant, _seed: u64) -> Result<Vec<Triplet>> {
    match variant {
        QueryVariant::Original => return Ok(triplets.to_vec()),
        QueryVariant::Dull => {
            return Ok(triplets
                .iter()
                .map(|t| Triplet {
                    query: DULL_QUERY.to_string(),
                    ..t.clone()
                })
                .collect())
        }
        QueryVariant::Distractor | QueryVariant::Dissimilar => {}
    }
    if triplets.len() < 2 {
        return Err(Error::invalid(format!("{variant} queries need at least 2 triplets")));
    }
    let titles: Vec<Vec<String>> = triplets.iter().map(|t| tokenize(&t.query)).collect();
    let mut out = Vec::with_capacity(triplets.len());
    for (i, t) in triplets.iter().enumerate() {
        let others = (0..titles.len()).filter(|&j| j != i);
        let chosen = match variant {
            QueryVariant::Distractor => {
                let mut best: Option<(usize, f64)> = None;
                for j in others {
                    let f = rouge_n(&titles[j], &titles[i], 1).f1;
                    if best.map_or(true, |(_, b)| f > b) {
                        best = Some((j, f));
                    }
                }
                best.map(|(j, _)| j)
            }
            _ => others
                .into_iter()
                .find(|&j| rouge_n(&titles[j], &titles[i], 1).f1 < DISSIMILAR_MAX_F1),
        };
        let j = chosen.ok_or_else(|| {
            Error::invalid(format!("no query dissimilar enough to triplet {i} ({:?})", t.query))
        })?;
        out.push(Triplet {
            query: triplets[j].query.clone(),
            ..t.clone()
        });
    }
    Ok(out)
}
