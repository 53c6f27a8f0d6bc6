//! Relaxed CSLS (RCSLS) training.
//!
//! For seed pairs `(xᵢ, yᵢ)`, `i = 1..n`, the objective is
//!
//! ```text
//! f(W) = 1/n Σᵢ [ −2 xᵢᵀWᵀyᵢ
//!                + 1/k Σ_{yⱼ ∈ N_Y(Wxᵢ)} xᵢᵀWᵀyⱼ
//!                + 1/k Σ_{Wxⱼ ∈ N_X(yᵢ)} xⱼᵀWᵀyᵢ ]
//! ```
//!
//! where `N_Y(Wxᵢ)` are the `k` rows of the target pool with the largest dot
//! product against `Wxᵢ` and `N_X(yᵢ)` the `k` mapped source-pool rows with
//! the largest dot product against `yᵢ`. Each neighbourhood sum is the
//! maximum over all `k`-subsets of a linear function of `W`, so `f` is convex
//! and piecewise linear. It is minimised by projected subgradient descent,
//! either unconstrained or over the unit ball of the spectral norm.
//!
//! With [`LossVariant::LogSumExp`] each `1/k Σ` neighbourhood term becomes
//! `log Σ exp` over the same `k` dot products; the attraction term stays
//! linear.

use std::collections::BTreeSet;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis, CowArray, Ix2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{procrustes_fit, ConstraintDomain, MappingMatrix};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::evaluation::evaluate_mapping;
use crate::lexicon::BilingualLexicon;
use crate::linalg;
use crate::retrieval::{self, top_k_dots, Criterion, RetrievalOptions};

/// Shape of the neighbourhood penalty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    #[default]
    Linear,
    LogSumExp,
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(LossVariant::Linear),
            "logsumexp" | "log_sum_exp" | "lse" => Ok(LossVariant::LogSumExp),
            other => Err(Error::InvalidArgument(format!("unknown loss {other:?}"))),
        }
    }
}

/// Hyperparameters for RCSLS training and grid search.
///
/// [`train_rcsls`] uses the first entry of each grid; [`grid_search`] tries
/// every combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rates: Vec<f64>,
    pub epochs_grid: Vec<usize>,
    pub k: usize,
    pub constraint: ConstraintDomain,
    pub extended_normalization: bool,
    /// `None` for full-batch steps.
    pub batch_size: Option<usize>,
    pub l2_reg: f64,
    pub loss_variant: LossVariant,
    pub seed: u64,
    pub lr_halving: bool,
    /// Gradient steps between neighbour-set recomputations. 1 gives the
    /// exact subgradient at every step.
    pub neighbor_refresh: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rates: vec![1.0, 10.0, 25.0, 50.0],
            epochs_grid: vec![10, 20],
            k: 10,
            constraint: ConstraintDomain::Unconstrained,
            extended_normalization: false,
            batch_size: None,
            l2_reg: 0.0,
            loss_variant: LossVariant::Linear,
            seed: 0,
            lr_halving: true,
            neighbor_refresh: 1,
        }
    }
}

impl TrainConfig {
    /// Copy of this configuration restricted to one grid point.
    pub fn at(&self, lr: f64, epochs: usize) -> Self {
        TrainConfig {
            learning_rates: vec![lr],
            epochs_grid: vec![epochs],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.learning_rates.is_empty() || self.epochs_grid.is_empty() {
            return bad("learning-rate and epoch grids must be non-empty".into());
        }
        if let Some(lr) = self.learning_rates.iter().find(|lr| !(lr.is_finite() && **lr >= 0.0)) {
            return bad(format!("learning rate {lr} must be finite and non-negative"));
        }
        if self.epochs_grid.contains(&0) {
            return bad("epoch counts must be positive".into());
        }
        if self.constraint == ConstraintDomain::Orthogonal {
            return bad("RCSLS supports the spectral_ball and unconstrained domains".into());
        }
        if self.batch_size == Some(0) {
            return bad("batch size must be positive".into());
        }
        if !(self.l2_reg.is_finite() && self.l2_reg >= 0.0) {
            return bad(format!("l2_reg {} must be finite and non-negative", self.l2_reg));
        }
        if self.neighbor_refresh == 0 {
            return bad("neighbor_refresh must be at least 1".into());
        }
        Ok(())
    }
}

/// Pools searched for the neighbourhoods `N_Y` (targets) and `N_X` (sources).
#[derive(Clone, Debug)]
pub struct NeighborPools<'a> {
    target: CowArray<'a, f64, Ix2>,
    source: CowArray<'a, f64, Ix2>,
    extended: bool,
}

impl<'a> NeighborPools<'a> {
    /// Pools restricted to the annotated seed rows.
    pub fn seeds(source_seeds: Array2<f64>, target_seeds: Array2<f64>) -> Self {
        NeighborPools {
            target: target_seeds.into(),
            source: source_seeds.into(),
            extended: false,
        }
    }

    /// Pools over the full vocabularies, minus zero rows.
    pub fn extended(source: &'a EmbeddingMatrix, target: &'a EmbeddingMatrix) -> Self {
        NeighborPools {
            target: without_zero_rows(target),
            source: without_zero_rows(source),
            extended: true,
        }
    }

    /// Arbitrary pools; `extended` only labels them.
    pub fn from_matrices(source: Array2<f64>, target: Array2<f64>, extended: bool) -> Self {
        NeighborPools {
            target: target.into(),
            source: source.into(),
            extended,
        }
    }

    /// Pools for training on `lexicon`: seed rows, or full vocabularies
    /// when `extended` is set.
    pub fn for_training(
        source: &'a EmbeddingMatrix,
        target: &'a EmbeddingMatrix,
        lexicon: &BilingualLexicon,
        extended: bool,
    ) -> Self {
        if extended {
            Self::extended(source, target)
        } else {
            Self::seeds(source.gather(&lexicon.sources()), target.gather(&lexicon.targets()))
        }
    }

    pub fn target(&self) -> ArrayView2<'_, f64> {
        self.target.view()
    }

    pub fn source(&self) -> ArrayView2<'_, f64> {
        self.source.view()
    }

    pub fn is_extended(&self) -> bool {
        self.extended
    }

    pub fn target_size(&self) -> usize {
        self.target.nrows()
    }

    pub fn source_size(&self) -> usize {
        self.source.nrows()
    }
}

fn without_zero_rows(e: &EmbeddingMatrix) -> CowArray<'_, f64, Ix2> {
    if e.zero_rows().is_empty() {
        e.vectors().into()
    } else {
        let keep: Vec<usize> = (0..e.len()).filter(|i| !e.zero_rows().contains(i)).collect();
        e.gather(&keep).into()
    }
}

/// Neighbourhood of one seed pair: pool indices in ascending order with
/// their scores at the `W` they were selected for.
#[derive(Clone, Debug, Default, PartialEq)]
struct Neighborhood {
    target: Vec<(usize, f64)>,
    source: Vec<(usize, f64)>,
}

/// `W`-dependent products shared by value and subgradient computations.
struct Mapped {
    /// `X_n Wᵀ`
    seeds: Array2<f64>,
    /// `X_pool Wᵀ`
    pool: Array2<f64>,
}

/// The RCSLS objective on a fixed seed set and pools.
pub struct RcslsObjective<'a, 'p> {
    x: ArrayView2<'a, f64>,
    y: ArrayView2<'a, f64>,
    pools: &'a NeighborPools<'p>,
    k: usize,
    variant: LossVariant,
    l2_reg: f64,
    opts: RetrievalOptions,
}

impl<'a, 'p> RcslsObjective<'a, 'p> {
    pub fn new(
        x_seeds: ArrayView2<'a, f64>,
        y_seeds: ArrayView2<'a, f64>,
        pools: &'a NeighborPools<'p>,
        k: usize,
        variant: LossVariant,
    ) -> Result<Self> {
        if x_seeds.dim() != y_seeds.dim() {
            return Err(Error::Shape(format!(
                "source seeds {:?} vs target seeds {:?}",
                x_seeds.dim(),
                y_seeds.dim()
            )));
        }
        if x_seeds.nrows() == 0 {
            return Err(Error::EmptyLexicon("no seed pairs".into()));
        }
        let d = x_seeds.ncols();
        if pools.target.ncols() != d || pools.source.ncols() != d {
            return Err(Error::Shape("pool dimension differs from seeds".into()));
        }
        let available = pools.target_size().min(pools.source_size());
        if k == 0 || k > available {
            return Err(Error::KOutOfRange { k, available });
        }
        Ok(RcslsObjective {
            x: x_seeds,
            y: y_seeds,
            pools,
            k,
            variant,
            l2_reg: 0.0,
            opts: RetrievalOptions::default(),
        })
    }

    pub fn with_l2(mut self, l2_reg: f64) -> Self {
        self.l2_reg = l2_reg;
        self
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    fn check_w(&self, w: ArrayView2<'_, f64>) -> Result<()> {
        let d = self.x.ncols();
        if w.dim() != (d, d) {
            return Err(Error::Shape(format!("W is {:?}, expected ({d}, {d})", w.dim())));
        }
        Ok(())
    }

    fn map(&self, w: ArrayView2<'_, f64>) -> Mapped {
        Mapped {
            seeds: self.x.dot(&w.t()),
            pool: self.pools.source.dot(&w.t()),
        }
    }

    fn neighborhoods(&self, m: &Mapped, rows: &[usize]) -> Vec<Neighborhood> {
        let none = BTreeSet::new();
        let q = m.seeds.select(Axis(0), rows);
        let tgt = top_k_dots(q.view(), self.pools.target.view(), self.k, &none, &self.opts)
            .expect("k checked against pool sizes");
        let yq = self.y.select(Axis(0), rows);
        let src = top_k_dots(yq.view(), m.pool.view(), self.k, &none, &self.opts)
            .expect("k checked against pool sizes");
        tgt.into_iter()
            .zip(src)
            .map(|(t, s)| {
                let mut target: Vec<_> = t.into_iter().map(|n| (n.index, n.score)).collect();
                let mut source: Vec<_> = s.into_iter().map(|n| (n.index, n.score)).collect();
                target.sort_unstable_by_key(|p| p.0);
                source.sort_unstable_by_key(|p| p.0);
                Neighborhood { target, source }
            })
            .collect()
    }

    /// Scores of previously selected neighbours at a new `W`.
    fn rescore(&self, m: &Mapped, rows: &[usize], sets: &[Neighborhood]) -> Vec<Neighborhood> {
        rows.iter()
            .zip(sets)
            .map(|(&i, nb)| {
                let q = m.seeds.row(i);
                let yi = self.y.row(i);
                Neighborhood {
                    target: nb
                        .target
                        .iter()
                        .map(|&(j, _)| (j, dot(q, self.pools.target.row(j))))
                        .collect(),
                    source: nb
                        .source
                        .iter()
                        .map(|&(j, _)| (j, dot(yi, m.pool.row(j))))
                        .collect(),
                }
            })
            .collect()
    }

    /// Penalty value and per-neighbour weights (its gradient w.r.t. scores).
    fn penalty(&self, nb: &[(usize, f64)]) -> (f64, Vec<f64>) {
        match self.variant {
            LossVariant::Linear => {
                let k = nb.len() as f64;
                (raw_sum(nb) / k, vec![1.0 / k; nb.len()])
            }
            LossVariant::LogSumExp => {
                let scores: Vec<f64> = nb.iter().map(|p| p.1).collect();
                let lse = log_sum_exp(&scores);
                let w = scores.iter().map(|s| (s - lse).exp()).collect();
                (lse, w)
            }
        }
    }

    fn value_and_grad(
        &self,
        w: ArrayView2<'_, f64>,
        m: &Mapped,
        rows: &[usize],
        sets: &[Neighborhood],
    ) -> (f64, Array2<f64>) {
        let d = self.x.ncols();
        let mut attract = Array2::<f64>::zeros((rows.len(), d));
        let mut repel = Array2::<f64>::zeros((rows.len(), d));
        let mut total = 0.0;
        for (r, (&i, nb)) in rows.iter().zip(sets).enumerate() {
            let s_ii = dot(m.seeds.row(i), self.y.row(i));
            let (pen_t, wt) = self.penalty(&nb.target);
            let (pen_s, ws) = self.penalty(&nb.source);
            total += -2.0 * s_ii + (pen_t + pen_s);

            let mut a = attract.row_mut(r);
            a.scaled_add(-2.0, &self.y.row(i));
            for (&(j, _), &wj) in nb.target.iter().zip(&wt) {
                a.scaled_add(wj, &self.pools.target.row(j));
            }
            let mut b = repel.row_mut(r);
            for (&(j, _), &wj) in nb.source.iter().zip(&ws) {
                b.scaled_add(wj, &self.pools.source.row(j));
            }
        }
        let n = rows.len() as f64;
        let xr = self.x.select(Axis(0), rows);
        let yr = self.y.select(Axis(0), rows);
        // Σ aᵢ xᵢᵀ + Σ yᵢ bᵢᵀ
        let mut g = attract.t().dot(&xr) + yr.t().dot(&repel);
        g /= n;
        let mut value = total / n;
        if self.l2_reg > 0.0 {
            g.scaled_add(2.0 * self.l2_reg, &w);
            value += self.l2_reg * w.iter().map(|v| v * v).sum::<f64>();
        }
        (value, g)
    }

    fn all_rows(&self) -> Vec<usize> {
        (0..self.n()).collect()
    }

    /// Objective value at `w`.
    pub fn value(&self, w: ArrayView2<'_, f64>) -> Result<f64> {
        Ok(self.value_and_subgradient(w)?.0)
    }

    /// A subgradient at `w`, with neighbourhoods recomputed at `w`.
    pub fn subgradient(&self, w: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.value_and_subgradient(w)?.1)
    }

    pub fn value_and_subgradient(&self, w: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)> {
        self.check_w(w)?;
        let m = self.map(w);
        let rows = self.all_rows();
        let sets = self.neighborhoods(&m, &rows);
        Ok(self.value_and_grad(w, &m, &rows, &sets))
    }

    /// Un-averaged neighbourhood sums `(Σ_{N_Y} xᵢᵀWᵀyⱼ, Σ_{N_X} xⱼᵀWᵀyᵢ)`
    /// per seed pair, summed in ascending pool-index order.
    pub fn neighbor_sums(&self, w: ArrayView2<'_, f64>) -> Result<Vec<(f64, f64)>> {
        self.check_w(w)?;
        let m = self.map(w);
        let sets = self.neighborhoods(&m, &self.all_rows());
        Ok(sets
            .iter()
            .map(|nb| (raw_sum(&nb.target), raw_sum(&nb.source)))
            .collect())
    }

    /// Every score the neighbourhood terms choose from, computed the same way
    /// as inside the objective: for seed `i`, the dots of `Wxᵢ` with every
    /// target-pool row and of `yᵢ` with every mapped source-pool row.
    pub fn pair_scores(&self, w: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_w(w)?;
        let m = self.map(w);
        let t = Array2::from_shape_fn((self.n(), self.pools.target_size()), |(i, j)| {
            dot(m.seeds.row(i), self.pools.target.row(j))
        });
        let s = Array2::from_shape_fn((self.n(), self.pools.source_size()), |(i, j)| {
            dot(self.y.row(i), m.pool.row(j))
        });
        Ok((t, s))
    }
}

fn dot(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    retrieval::dot_f64(a, b)
}

fn raw_sum(nb: &[(usize, f64)]) -> f64 {
    nb.iter().map(|p| p.1).sum()
}

/// `log Σ exp(vᵢ)`, shifted by the maximum for stability.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// RCSLS objective value (no regularization).
pub fn rcsls_objective(
    w: ArrayView2<'_, f64>,
    x_seeds: ArrayView2<'_, f64>,
    y_seeds: ArrayView2<'_, f64>,
    pools: &NeighborPools<'_>,
    k: usize,
    variant: LossVariant,
) -> Result<f64> {
    RcslsObjective::new(x_seeds, y_seeds, pools, k, variant)?.value(w)
}

/// Subgradient of the RCSLS objective plus `2 · l2_reg · W`.
pub fn rcsls_subgradient(
    w: ArrayView2<'_, f64>,
    x_seeds: ArrayView2<'_, f64>,
    y_seeds: ArrayView2<'_, f64>,
    pools: &NeighborPools<'_>,
    k: usize,
    variant: LossVariant,
    l2_reg: f64,
) -> Result<Array2<f64>> {
    RcslsObjective::new(x_seeds, y_seeds, pools, k, variant)?
        .with_l2(l2_reg)
        .subgradient(w)
}

/// Euclidean projection onto the spectral-norm unit ball: singular values
/// above one are clipped to one.
pub fn project_spectral(m: ArrayView2<'_, f64>) -> Array2<f64> {
    project_spectral_counted(m).0
}

/// Singular values this close above one are treated as on the boundary, so
/// an orthogonal matrix with rounding noise in its spectrum is left as is.
const BALL_TOL: f64 = 1e-12;

fn project_spectral_counted(m: ArrayView2<'_, f64>) -> (Array2<f64>, bool) {
    let svd = linalg::svd(m);
    if svd.singular_values.iter().all(|&s| s <= 1.0 + BALL_TOL) {
        return (m.to_owned(), false);
    }
    let clipped = svd.singular_values.mapv(|s| s.min(1.0));
    let mut u = svd.u;
    for (mut col, s) in u.columns_mut().into_iter().zip(clipped.iter()) {
        col *= *s;
    }
    (u.dot(&svd.v_t), true)
}

/// Per-epoch record of a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Full objective at the Procrustes initialization.
    pub initial_objective: f64,
    /// Full objective at the end of each completed epoch (before any revert).
    pub objectives: Vec<f64>,
    /// Best objective seen up to and including each epoch.
    pub best_objectives: Vec<f64>,
    /// Learning rate used during each epoch.
    pub learning_rates: Vec<f64>,
    /// Largest singular value of the iterate at each epoch end.
    pub spectral_norms: Vec<f64>,
    /// Projections that actually clipped a singular value.
    pub active_projections: usize,
    pub steps: usize,
    pub batch_size: Option<usize>,
    pub wall_time_secs: f64,
}

impl TrainTrace {
    pub fn best_objective(&self) -> f64 {
        self.best_objectives
            .last()
            .copied()
            .unwrap_or(self.initial_objective)
    }
}

const UNIT_NORM_TOL: f64 = 1e-6;

fn check_unit_rows(name: &str, m: ArrayView2<'_, f64>) -> Result<()> {
    for (i, row) in m.rows().into_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        if n != 0.0 && (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::InvalidArgument(format!(
                "{name} row {i} has norm {n}; inputs must be l2-normalized"
            )));
        }
    }
    Ok(())
}

/// Trains an RCSLS map with projected subgradient descent.
///
/// Starts from the Procrustes solution on the seed pairs, steps
/// `W ← W − lr · G` (projecting onto the spectral ball when constrained) and,
/// with `lr_halving`, halves the learning rate and returns to the best
/// iterate after any epoch whose objective did not improve. The iterate with
/// the lowest end-of-epoch objective (initialization included) is returned.
pub fn train_rcsls(
    source: &EmbeddingMatrix,
    target: &EmbeddingMatrix,
    lexicon: &BilingualLexicon,
    pools: &NeighborPools<'_>,
    config: &TrainConfig,
) -> Result<(MappingMatrix, TrainTrace)> {
    let start = Instant::now();
    config.validate()?;
    if pools.is_extended() != config.extended_normalization {
        return Err(Error::InvalidConfig(format!(
            "pools are {} but extended_normalization = {}",
            if pools.is_extended() { "extended" } else { "seed-only" },
            config.extended_normalization
        )));
    }
    if source.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "source dimension {} vs target dimension {}",
            source.dim(),
            target.dim()
        )));
    }
    let x = source.gather(&lexicon.sources());
    let y = target.gather(&lexicon.targets());
    check_unit_rows("source seed", x.view())?;
    check_unit_rows("target seed", y.view())?;
    check_unit_rows("source pool", pools.source())?;
    check_unit_rows("target pool", pools.target())?;
    let n = x.nrows();
    if let Some(b) = config.batch_size {
        if b > n {
            return Err(Error::InvalidConfig(format!(
                "batch size {b} exceeds the {n} seed pairs"
            )));
        }
    }

    let objective = RcslsObjective::new(x.view(), y.view(), pools, config.k, config.loss_variant)?
        .with_l2(config.l2_reg);
    let mut lr = config.learning_rates[0];
    let epochs = config.epochs_grid[0];
    let constraint = config.constraint;
    let all_rows = objective.all_rows();

    let mut w = procrustes_fit(x.view(), y.view())?.into_matrix();
    let mut mapped = objective.map(w.view());
    let mut sets = objective.neighborhoods(&mapped, &all_rows);
    let (mut value, mut grad) = objective.value_and_grad(w.view(), &mapped, &all_rows, &sets);

    let mut trace = TrainTrace {
        initial_objective: value,
        batch_size: config.batch_size,
        ..Default::default()
    };
    let mut best = (value, w.clone(), grad.clone(), sets.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut since_refresh = 0usize;

    for _ in 0..epochs {
        match config.batch_size {
            None => {
                w = step(&w, &grad, lr, constraint, &mut trace);
            }
            Some(b) => {
                let mut order = all_rows.clone();
                order.shuffle(&mut rng);
                for batch in order.chunks(b) {
                    let m = objective.map(w.view());
                    let batch_sets = if since_refresh == 0 {
                        objective.neighborhoods(&m, batch)
                    } else {
                        let stale: Vec<_> = batch.iter().map(|&i| sets[i].clone()).collect();
                        objective.rescore(&m, batch, &stale)
                    };
                    let (_, g) = objective.value_and_grad(w.view(), &m, batch, &batch_sets);
                    w = step(&w, &g, lr, constraint, &mut trace);
                    since_refresh = (since_refresh + 1) % config.neighbor_refresh;
                }
            }
        }

        mapped = objective.map(w.view());
        let refresh_full = config.batch_size.is_some() || {
            since_refresh = (since_refresh + 1) % config.neighbor_refresh;
            since_refresh == 0
        };
        // The end-of-epoch objective is always exact; stale neighbourhoods
        // only feed the next step's direction.
        let exact_sets = objective.neighborhoods(&mapped, &all_rows);
        let (v, g_exact) = objective.value_and_grad(w.view(), &mapped, &all_rows, &exact_sets);
        value = v;
        if refresh_full {
            sets = exact_sets;
            grad = g_exact;
        } else {
            let stale = objective.rescore(&mapped, &all_rows, &sets);
            grad = objective.value_and_grad(w.view(), &mapped, &all_rows, &stale).1;
            sets = stale;
        }

        trace.objectives.push(value);
        trace.learning_rates.push(lr);
        trace.spectral_norms.push(linalg::spectral_norm(w.view()));
        if value < best.0 {
            best = (value, w.clone(), grad.clone(), sets.clone());
        } else if config.lr_halving {
            lr /= 2.0;
            w = best.1.clone();
            grad = best.2.clone();
            sets = best.3.clone();
        }
        trace.best_objectives.push(best.0);
    }

    trace.wall_time_secs = start.elapsed().as_secs_f64();
    let map = MappingMatrix::new_unchecked(
        best.1,
        match constraint {
            ConstraintDomain::SpectralBall => ConstraintDomain::SpectralBall,
            _ => ConstraintDomain::Unconstrained,
        },
    );
    Ok((map, trace))
}

fn step(
    w: &Array2<f64>,
    g: &Array2<f64>,
    lr: f64,
    constraint: ConstraintDomain,
    trace: &mut TrainTrace,
) -> Array2<f64> {
    trace.steps += 1;
    let mut next = w.clone();
    next.scaled_add(-lr, g);
    if constraint == ConstraintDomain::SpectralBall {
        let (p, active) = project_spectral_counted(next.view());
        if active {
            trace.active_projections += 1;
        }
        next = p;
    }
    next
}

/// One evaluated grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub epochs: usize,
    pub validation_accuracy: f64,
    pub best_objective: f64,
}

#[derive(Clone, Debug)]
pub struct GridSearchResult {
    /// Single-point configuration that won.
    pub config: TrainConfig,
    pub map: MappingMatrix,
    pub trace: TrainTrace,
    pub points: Vec<GridPoint>,
}

/// Trains one model per (learning rate, epochs) pair and keeps the one with
/// the best CSLS precision@1 on `valid`. Ties go to the lower learning rate,
/// then to fewer epochs.
pub fn grid_search(
    source: &EmbeddingMatrix,
    target: &EmbeddingMatrix,
    train: &BilingualLexicon,
    valid: &BilingualLexicon,
    config: &TrainConfig,
) -> Result<GridSearchResult> {
    config.validate()?;
    let pools = NeighborPools::for_training(source, target, train, config.extended_normalization);
    let mut lrs = config.learning_rates.clone();
    lrs.sort_by(f64::total_cmp);
    lrs.dedup();
    let mut epochs = config.epochs_grid.clone();
    epochs.sort_unstable();
    epochs.dedup();

    let opts = RetrievalOptions::default();
    let mut best: Option<(f64, GridSearchResult)> = None;
    let mut points = Vec::new();
    for &lr in &lrs {
        for &ep in &epochs {
            let point_cfg = config.at(lr, ep);
            let (map, trace) = train_rcsls(source, target, train, &pools, &point_cfg)?;
            let report =
                evaluate_mapping(&map, source, target, valid, Criterion::Csls, config.k, &opts)?;
            points.push(GridPoint {
                learning_rate: lr,
                epochs: ep,
                validation_accuracy: report.accuracy,
                best_objective: trace.best_objective(),
            });
            log::info!(
                "grid lr={lr} epochs={ep}: valid P@1 {:.4}, objective {:.6}",
                report.accuracy,
                trace.best_objective()
            );
            if best.as_ref().is_none_or(|(acc, _)| report.accuracy > *acc) {
                best = Some((
                    report.accuracy,
                    GridSearchResult {
                        config: point_cfg,
                        map,
                        trace,
                        points: Vec::new(),
                    },
                ));
            }
        }
    }
    let (_, mut result) = best.expect("grids are non-empty");
    result.points = points;
    Ok(result)
}
