//! Supervised alignment of two monolingual word-embedding spaces.
//!
//! A linear map `W` is learned from a seed lexicon so that mapped source
//! vectors `W x` land near their translations `y`. Three solvers are
//! provided:
//!
//! * unconstrained least squares and orthogonal Procrustes ([`baselines`]),
//! * the relaxed CSLS objective minimised by projected subgradient descent
//!   ([`rcsls`]), optionally over the unit ball of the spectral norm.
//!
//! Translations are retrieved by nearest neighbour or by CSLS
//! ([`retrieval`]) and scored with precision@1 ([`evaluation`]).

pub mod baselines;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod lexicon;
pub mod linalg;
pub mod rcsls;
pub mod refinement;
pub mod retrieval;
pub mod synthetic;

pub use baselines::{least_squares_fit, procrustes_fit, ConstraintDomain, MappingMatrix};
pub use embedding::{EmbeddingMatrix, NormState, Vocabulary};
pub use error::{Error, Result};
pub use evaluation::{precision_at_1, EvalReport};
pub use lexicon::BilingualLexicon;
pub use rcsls::{train_rcsls, LossVariant, NeighborPools, TrainConfig, TrainTrace};
pub use refinement::{refine, PairingRule, RefinementConfig};
pub use retrieval::{Criterion, RetrievalOptions, ScorePrecision, TranslationResult};
