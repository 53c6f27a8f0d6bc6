//! Iterative lexicon refinement: induce translations among frequent words
//! with the current map, add them to the seed lexicon, refit by Procrustes.

use std::collections::BTreeSet;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{procrustes_fit, MappingMatrix};
use crate::embedding::{normalize_rows, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::lexicon::BilingualLexicon;
use crate::retrieval::{mean_knn_excluding, top_k_scored, zero_rows_of, RetrievalOptions, Scoring};

/// Which induced pairs are kept.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingRule {
    /// Every pool source with its best CSLS translation.
    BestInferred,
    /// Only pairs that are each other's best CSLS match in both directions.
    #[default]
    MutualCsls,
}

impl FromStr for PairingRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "best" | "best_inferred" => Ok(PairingRule::BestInferred),
            "mutual" | "mutual_csls" => Ok(PairingRule::MutualCsls),
            other => Err(Error::InvalidArgument(format!("unknown pairing rule {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementConfig {
    pub rounds: usize,
    /// Inference runs over the first this-many rows of each vocabulary.
    pub candidate_pool_size: usize,
    pub pairing_rule: PairingRule,
    pub criterion_k: usize,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            rounds: 5,
            candidate_pool_size: 10_000,
            pairing_rule: PairingRule::MutualCsls,
            criterion_k: 10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RefinementOutcome {
    pub map: MappingMatrix,
    /// Size of the augmented lexicon used for each round's refit.
    pub lexicon_sizes: Vec<usize>,
    pub lexicon: BilingualLexicon,
}

/// Mutual or one-way CSLS matches between the first `pool` rows of each side.
fn induce(
    map: &MappingMatrix,
    source: &EmbeddingMatrix,
    target: &EmbeddingMatrix,
    pool: usize,
    rule: PairingRule,
    k: usize,
    opts: &RetrievalOptions,
) -> Result<Vec<(usize, usize)>> {
    let src_rows: Vec<usize> = (0..pool).collect();
    let mapped = normalize_rows(map.apply(source.gather(&src_rows).view())).0;
    let tgt = target.gather(&src_rows);
    let src_zero = zero_rows_of(mapped.view());
    let tgt_zero = zero_rows_of(tgt.view());

    // r values: mean similarity of each mapped source to its k nearest pool
    // targets, and of each target to its k nearest mapped pool sources.
    let r_src = mean_knn_excluding(mapped.view(), tgt.view(), k, &tgt_zero, opts)?.r_values;
    let r_tgt = mean_knn_excluding(tgt.view(), mapped.view(), k, &src_zero, opts)?.r_values;

    let forward = top_k_scored(
        mapped.view(),
        tgt.view(),
        1,
        &tgt_zero,
        Scoring { scale: 2.0, bias: Some(&r_tgt) },
        opts,
    )?;
    let backward = match rule {
        PairingRule::BestInferred => None,
        PairingRule::MutualCsls => Some(top_k_scored(
            tgt.view(),
            mapped.view(),
            1,
            &src_zero,
            Scoring { scale: 2.0, bias: Some(&r_src) },
            opts,
        )?),
    };

    let mut pairs = Vec::new();
    for (i, nb) in forward.iter().enumerate() {
        if src_zero.contains(&i) {
            continue;
        }
        let j = nb[0].index;
        let keep = match &backward {
            None => true,
            Some(b) => b[j][0].index == i,
        };
        if keep {
            pairs.push((i, j));
        }
    }
    Ok(pairs)
}

/// Runs `config.rounds` rounds of induce-then-refit starting from `w0`.
///
/// Induced pairs accumulate across rounds: a pair is added only when neither
/// its source nor its target already appears in the lexicon, so the seeds
/// are always kept, the lexicon never shrinks, and with mutual pairing the
/// induced pairs form a partial bijection.
pub fn refine(
    w0: &MappingMatrix,
    source: &EmbeddingMatrix,
    target: &EmbeddingMatrix,
    seeds: &BilingualLexicon,
    config: &RefinementConfig,
    opts: &RetrievalOptions,
) -> Result<RefinementOutcome> {
    if config.rounds == 0 {
        return Err(Error::InvalidConfig("rounds must be at least 1".into()));
    }
    let pool = config.candidate_pool_size;
    if pool > source.len().min(target.len()) {
        return Err(Error::InvalidConfig(format!(
            "candidate pool {pool} exceeds the smaller vocabulary ({})",
            source.len().min(target.len())
        )));
    }
    if pool > 0 && config.criterion_k == 0 {
        return Err(Error::InvalidConfig("criterion_k must be at least 1".into()));
    }
    if w0.dim() != source.dim() || source.dim() != target.dim() {
        return Err(Error::Shape("map and embedding dimensions differ".into()));
    }

    let mut pairs: Vec<(usize, usize)> = seeds.pairs().to_vec();
    let mut used_src: BTreeSet<usize> = pairs.iter().map(|p| p.0).collect();
    let mut used_tgt: BTreeSet<usize> = pairs.iter().map(|p| p.1).collect();
    let mut map = w0.clone();
    let mut sizes = Vec::with_capacity(config.rounds);

    for round in 0..config.rounds {
        if pool > 0 {
            let induced = induce(
                &map,
                source,
                target,
                pool,
                config.pairing_rule,
                config.criterion_k,
                opts,
            )?;
            let mut added = 0;
            for (i, j) in induced {
                if !used_src.contains(&i) && !used_tgt.contains(&j) {
                    used_src.insert(i);
                    used_tgt.insert(j);
                    pairs.push((i, j));
                    added += 1;
                }
            }
            log::info!("refinement round {}: {added} new pairs, {} total", round + 1, pairs.len());
        }
        let lexicon = BilingualLexicon::from_pairs(pairs.clone())?;
        let x = source.gather(&lexicon.sources());
        let y = target.gather(&lexicon.targets());
        map = procrustes_fit(x.view(), y.view())?;
        sizes.push(pairs.len());
    }

    Ok(RefinementOutcome {
        map,
        lexicon_sizes: sizes,
        lexicon: BilingualLexicon::from_pairs(pairs)?,
    })
}
