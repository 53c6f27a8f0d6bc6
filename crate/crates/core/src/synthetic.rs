//! Synthetic bilingual embedding pairs with a planted correspondence.
//!
//! Source vectors are Gaussian, targets are a hidden rotation of the sources
//! plus optional noise, and target rows are shuffled within small blocks so
//! that index `i` on one side is generally not index `i` on the other while
//! the "frequency" order is roughly preserved.

use std::ops::Range;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::embedding::{normalize_rows, EmbeddingMatrix, Vocabulary};
use crate::error::Result;
use crate::lexicon::BilingualLexicon;
use crate::linalg::qr_q;

/// `n` rows drawn from an isotropic Gaussian and scaled to unit length.
pub fn random_unit_rows<R: Rng>(rng: &mut R, n: usize, d: usize) -> Array2<f64> {
    let g = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
    normalize_rows(g).0
}

/// Haar-distributed random orthogonal matrix (QR of a Gaussian matrix with
/// the sign of `R`'s diagonal folded into `Q`).
pub fn random_orthogonal<R: Rng>(rng: &mut R, d: usize) -> Array2<f64> {
    let g = Array2::from_shape_fn((d, d), |_| rng.sample::<f64, _>(StandardNormal));
    qr_q(g.view())
}

#[derive(Clone, Debug)]
pub struct SyntheticConfig {
    pub vocab: usize,
    pub dim: usize,
    /// Standard deviation of the per-coordinate Gaussian noise added to
    /// `Q x` before renormalizing.
    pub noise: f64,
    /// Weight of a direction shared by every source vector; 0 gives an
    /// isotropic cloud.
    pub common_weight: f64,
    /// Number of extra target rows placed on the shared direction. They have
    /// no source counterpart.
    pub hubs: usize,
    /// Target rows are permuted within consecutive blocks of this size.
    pub permute_block: usize,
    pub seed: u64,
}

impl SyntheticConfig {
    /// Noise-free planted rotation.
    pub fn planted(vocab: usize, dim: usize, seed: u64) -> Self {
        SyntheticConfig {
            vocab,
            dim,
            noise: 0.0,
            common_weight: 0.0,
            hubs: 0,
            permute_block: 50,
            seed,
        }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }
}

/// A generated source/target pair and its hidden ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticPair {
    pub source: EmbeddingMatrix,
    pub target: EmbeddingMatrix,
    /// Hidden rotation `Q` with `y ≈ Q x`.
    pub rotation: Array2<f64>,
    /// `correspondence[i]` is the target row of source word `i`.
    pub correspondence: Vec<usize>,
}

impl SyntheticPair {
    pub fn generate(cfg: &SyntheticConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (n, d) = (cfg.vocab, cfg.dim);
        let rotation = random_orthogonal(&mut rng, d);

        let common: Array1<f64> = {
            let c = random_unit_rows(&mut rng, 1, d);
            c.row(0).to_owned()
        };
        let mut x = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
        if cfg.common_weight != 0.0 {
            let shift = &common * (cfg.common_weight * (d as f64).sqrt());
            x += &shift;
        }
        let (x, _) = normalize_rows(x);

        let mut y = x.dot(&rotation.t());
        if cfg.noise > 0.0 {
            y.mapv_inplace(|v| v + cfg.noise * rng.sample::<f64, _>(StandardNormal));
        }
        let (y, _) = normalize_rows(y);

        let block = cfg.permute_block.max(1);
        let mut correspondence: Vec<usize> = (0..n).collect();
        for chunk in correspondence.chunks_mut(block) {
            chunk.shuffle(&mut rng);
        }

        let total = n + cfg.hubs;
        let mut target = Array2::zeros((total, d));
        for (i, &t) in correspondence.iter().enumerate() {
            target.row_mut(t).assign(&y.row(i));
        }
        let hub_dir = rotation.dot(&common);
        for h in 0..cfg.hubs {
            let jitter = Array1::from_shape_fn(d, |_| 0.05 * rng.sample::<f64, _>(StandardNormal));
            let v = &hub_dir + &jitter;
            let norm = v.dot(&v).sqrt();
            target.row_mut(n + h).assign(&(v / norm));
        }

        let src_vocab = Vocabulary::from_words((0..n).map(|i| format!("s{i}"))).unwrap();
        let tgt_vocab = Vocabulary::from_words((0..total).map(|i| format!("t{i}"))).unwrap();
        SyntheticPair {
            source: EmbeddingMatrix::new(src_vocab, x).unwrap().l2_normalize(),
            target: EmbeddingMatrix::new(tgt_vocab, target).unwrap().l2_normalize(),
            rotation,
            correspondence,
        }
    }

    /// Ground-truth lexicon for a range of source words.
    pub fn lexicon(&self, sources: Range<usize>) -> Result<BilingualLexicon> {
        BilingualLexicon::from_pairs(sources.map(|i| (i, self.correspondence[i])).collect())
    }

    /// Writes both sides in text format.
    pub fn save(&self, src: &std::path::Path, tgt: &std::path::Path, precision: usize) -> Result<()> {
        self.source.save_text(src, precision)?;
        self.target.save_text(tgt, precision)
    }

    /// Writes the ground-truth dictionary for `sources` as `s<i> t<j>` lines.
    pub fn save_lexicon(&self, path: &std::path::Path, sources: Range<usize>) -> Result<()> {
        use std::io::Write;
        let mut out = String::new();
        for i in sources {
            out.push_str(&format!(
                "{} {}\n",
                self.source.vocab().words()[i],
                self.target.vocab().words()[self.correspondence[i]]
            ));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| crate::Error::Io {
                path: path.to_path_buf(),
                source: e,
            })
    }
}

/// A target space with one hub: sources share a common direction and the hub
/// sits on its image, so plain nearest-neighbour retrieval is drawn to it.
pub fn hub_fixture(seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        vocab: 2000,
        dim: 32,
        noise: 0.15,
        common_weight: 1.0,
        hubs: 1,
        permute_block: 50,
        seed,
    }
}

/// Anisotropic noisy benchmark: 5000 words in 32 dimensions sharing a common
/// direction, so retrieval suffers from hubness and accuracy is well below
/// 100%.
pub fn anisotropic_benchmark(seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        vocab: 5000,
        dim: 32,
        noise: 0.15,
        common_weight: 1.0,
        hubs: 0,
        permute_block: 50,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;

    #[test]
    fn orthogonal_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = random_orthogonal(&mut rng, 12);
        let e = q.t().dot(&q) - Array2::<f64>::eye(12);
        assert!(max_abs(e.view()) < 1e-12);
    }

    #[test]
    fn planted_pair_is_exact() {
        let p = SyntheticPair::generate(&SyntheticConfig::planted(120, 6, 3));
        for i in 0..120 {
            let y = p.target.row(p.correspondence[i]);
            let qx = p.rotation.dot(&p.source.row(i));
            assert!(max_abs((&qx - &y).insert_axis(ndarray::Axis(0)).view()) < 1e-12);
        }
        let mut sorted = p.correspondence.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..120).collect::<Vec<_>>());
        assert!(p.correspondence[..50].iter().all(|&t| t < 50));
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = hub_fixture(9);
        let a = SyntheticPair::generate(&cfg);
        let b = SyntheticPair::generate(&cfg);
        assert_eq!(a.target, b.target);
        assert_eq!(a.target.len(), cfg.vocab + cfg.hubs);
    }
}
