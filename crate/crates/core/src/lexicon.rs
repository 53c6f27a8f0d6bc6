//! Bilingual dictionaries resolved against a pair of vocabularies.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::Vocabulary;
use crate::error::{Error, Result};

/// Index-resolved (source, target) pairs plus the multi-valued evaluation map.
#[derive(Clone, Debug, PartialEq)]
pub struct BilingualLexicon {
    pairs: Vec<(usize, usize)>,
    eval_map: BTreeMap<usize, BTreeSet<usize>>,
    coverage: f64,
    skipped_oov: usize,
}

impl BilingualLexicon {
    /// Builds a lexicon from already-resolved pairs. Coverage is set to 1.
    pub fn from_pairs(pairs: Vec<(usize, usize)>) -> Result<Self> {
        Self::with_stats(pairs, 1.0, 0)
    }

    fn with_stats(pairs: Vec<(usize, usize)>, coverage: f64, skipped_oov: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyLexicon("no resolved pairs".into()));
        }
        let mut eval_map: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for &(s, t) in &pairs {
            eval_map.entry(s).or_default().insert(t);
        }
        Ok(BilingualLexicon {
            pairs,
            eval_map,
            coverage,
            skipped_oov,
        })
    }

    /// Reads a `src tgt` per line dictionary. Lines with an out-of-vocabulary
    /// word are skipped; lines without exactly two tokens are skipped with a
    /// warning.
    pub fn load(path: impl AsRef<Path>, src: &Vocabulary, tgt: &Vocabulary) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file), path, src, tgt)
    }

    pub fn read<R: BufRead>(
        reader: R,
        origin: &Path,
        src: &Vocabulary,
        tgt: &Vocabulary,
    ) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut lines_seen = 0usize;
        let mut oov = 0usize;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(origin, e))?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            lines_seen += 1;
            if tokens.len() != 2 {
                warn!(
                    "{}:{}: expected 2 tokens, found {}; line skipped",
                    origin.display(),
                    lineno + 1,
                    tokens.len()
                );
                continue;
            }
            match (src.index_of(tokens[0]), tgt.index_of(tokens[1])) {
                (Some(s), Some(t)) => pairs.push((s, t)),
                _ => oov += 1,
            }
        }
        if pairs.is_empty() {
            return Err(Error::EmptyLexicon(format!(
                "{}: none of {} lines resolved against the vocabularies",
                origin.display(),
                lines_seen
            )));
        }
        let coverage = pairs.len() as f64 / lines_seen as f64;
        Self::with_stats(pairs, coverage, oov)
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Number of pairs, duplicates included.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn eval_map(&self) -> &BTreeMap<usize, BTreeSet<usize>> {
        &self.eval_map
    }

    /// Fraction of non-empty dictionary lines that resolved.
    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    /// Lines dropped because a word was out of vocabulary.
    pub fn skipped_oov(&self) -> usize {
        self.skipped_oov
    }

    pub fn sources(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.1).collect()
    }

    /// Distinct source indices in order of first appearance.
    pub fn distinct_sources(&self) -> Vec<usize> {
        let mut seen = HashSet::new();
        self.pairs
            .iter()
            .filter_map(|&(s, _)| seen.insert(s).then_some(s))
            .collect()
    }

    /// Keeps the first `n` pairs.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n > self.len() {
            return Err(Error::InvalidArgument(format!(
                "prefix of {} pairs requested from a lexicon of {}",
                n,
                self.len()
            )));
        }
        Self::with_stats(self.pairs[..n].to_vec(), self.coverage, self.skipped_oov)
    }

    /// Keeps pairs satisfying `keep`, preserving order.
    pub fn filter(&self, mut keep: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let pairs = self.pairs.iter().copied().filter(|&(s, t)| keep(s, t)).collect();
        Self::with_stats(pairs, self.coverage, self.skipped_oov)
    }

    /// Splits by distinct source word: `round(fraction · S)` sources go to the
    /// validation side, chosen by a seeded shuffle. All pairs of a source
    /// word land on the same side, and pair order is preserved on each side.
    pub fn split_validation(&self, fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "validation fraction {fraction} not in (0, 1)"
            )));
        }
        let mut sources = self.distinct_sources();
        let n_valid = (fraction * sources.len() as f64).round() as usize;
        if n_valid == 0 || n_valid >= sources.len() {
            return Err(Error::InvalidArgument(format!(
                "fraction {} of {} source words leaves one side empty",
                fraction,
                sources.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sources.shuffle(&mut rng);
        let valid: HashSet<usize> = sources[..n_valid].iter().copied().collect();
        let train = self.filter(|s, _| !valid.contains(&s))?;
        let valid = self.filter(|s, _| valid.contains(&s))?;
        Ok((train, valid))
    }

    /// Removes pairs whose source and target words are byte-identical.
    pub fn filter_exact_matches(&self, src: &Vocabulary, tgt: &Vocabulary) -> Result<Self> {
        self.filter(|s, t| src.word(s) != tgt.word(t))
            .map_err(|_| Error::EmptyLexicon("every pair is an exact string match".into()))
    }
}
