//! Precision@1 scoring, ablation sweeps and report formatting.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{least_squares_fit, procrustes_fit, MappingMatrix};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::lexicon::BilingualLexicon;
use crate::rcsls::{train_rcsls, NeighborPools, TrainConfig};
use crate::retrieval::{csls_translate, nn_translate, Criterion, RetrievalOptions, TranslationResult};

/// Alignment method, as named in reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lsq,
    Procrustes,
    Rcsls,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Lsq => "lsq",
            Method::Procrustes => "procrustes",
            Method::Rcsls => "rcsls",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lsq" | "least_squares" => Ok(Method::Lsq),
            "procrustes" => Ok(Method::Procrustes),
            "rcsls" => Ok(Method::Rcsls),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

/// One point of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub method: String,
    pub x: usize,
    pub criterion: Criterion,
    pub k: Option<usize>,
    pub accuracy: f64,
    pub n_evaluated: usize,
}

/// Result of one evaluation run, optionally carrying a sweep series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub method: String,
    pub criterion: Criterion,
    pub k: Option<usize>,
    pub accuracy: f64,
    pub n_evaluated: usize,
    pub n_correct: usize,
    pub skipped_oov: usize,
    #[serde(default)]
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series: Option<Vec<SeriesPoint>>,
}

impl EvalReport {
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_method(mut self, method: impl Into<String>) -> Self {
        self.method = method.into();
        self
    }

    pub fn with_config(mut self, config: serde_json::Value) -> Self {
        self.config = config;
        self
    }
}

/// Precision@1 over the distinct source words of `eval`. A word counts as
/// correct when its prediction is any of its reference translations.
pub fn precision_at_1(predictions: &TranslationResult, eval: &BilingualLexicon) -> Result<EvalReport> {
    let by_query: HashMap<usize, usize> = predictions
        .queries
        .iter()
        .zip(&predictions.predictions)
        .map(|(&q, p)| (q, p.target))
        .collect();
    let mut correct = 0;
    for (src, refs) in eval.eval_map() {
        let predicted = by_query
            .get(src)
            .ok_or(Error::MissingPrediction(*src))?;
        if refs.contains(predicted) {
            correct += 1;
        }
    }
    let n = eval.eval_map().len();
    if n == 0 {
        return Err(Error::EmptyEvaluation("no source words to evaluate".into()));
    }
    Ok(EvalReport {
        label: String::new(),
        method: String::new(),
        criterion: predictions.criterion,
        k: predictions.k,
        accuracy: correct as f64 / n as f64,
        n_evaluated: n,
        n_correct: correct,
        skipped_oov: eval.skipped_oov(),
        config: serde_json::Value::Null,
        series: None,
    })
}

/// Translates the distinct sources of `eval` with `map` and scores them.
/// CSLS uses the whole source vocabulary as the mapped pool.
pub fn evaluate_mapping(
    map: &MappingMatrix,
    source: &EmbeddingMatrix,
    target: &EmbeddingMatrix,
    eval: &BilingualLexicon,
    criterion: Criterion,
    k: usize,
    opts: &RetrievalOptions,
) -> Result<EvalReport> {
    let queries = eval.distinct_sources();
    let x_q = source.gather(&queries);
    let result = match criterion {
        Criterion::Nn => nn_translate(map, x_q.view(), target, opts)?,
        Criterion::Csls => csls_translate(map, x_q.view(), target, source, k, opts)?,
    };
    precision_at_1(&result.with_queries(queries)?, eval)
}

/// Embeddings plus train/test lexicons for the sweep harnesses.
#[derive(Clone, Copy)]
pub struct Benchmark<'a> {
    pub label: &'a str,
    pub source: &'a EmbeddingMatrix,
    pub target: &'a EmbeddingMatrix,
    pub train: &'a BilingualLexicon,
    pub test: &'a BilingualLexicon,
}

/// Fits `method` on `train`. RCSLS uses the first grid point of `config`.
pub fn fit(
    method: Method,
    source: &EmbeddingMatrix,
    target: &EmbeddingMatrix,
    train: &BilingualLexicon,
    config: &TrainConfig,
) -> Result<MappingMatrix> {
    let x = source.gather(&train.sources());
    let y = target.gather(&train.targets());
    match method {
        Method::Lsq => least_squares_fit(x.view(), y.view()),
        Method::Procrustes => procrustes_fit(x.view(), y.view()),
        Method::Rcsls => {
            let pools =
                NeighborPools::for_training(source, target, train, config.extended_normalization);
            Ok(train_rcsls(source, target, train, &pools, config)?.0)
        }
    }
}

fn series_report(
    bench: &Benchmark<'_>,
    method: &str,
    config: &TrainConfig,
    points: Vec<(EvalReport, usize)>,
) -> EvalReport {
    let (last, _) = points.last().expect("sweeps have at least one point").clone();
    let series = points
        .into_iter()
        .map(|(r, x)| SeriesPoint {
            method: r.method,
            x,
            criterion: r.criterion,
            k: r.k,
            accuracy: r.accuracy,
            n_evaluated: r.n_evaluated,
        })
        .collect();
    EvalReport {
        label: bench.label.to_string(),
        method: method.to_string(),
        series: Some(series),
        config: serde_json::to_value(config).unwrap_or_default(),
        ..last
    }
}

/// Accuracy as a function of training-lexicon size: one model per prefix of
/// `bench.train`, each evaluated with CSLS at `config.k`.
pub fn lexicon_size_sweep(
    sizes: &[usize],
    method: Method,
    bench: &Benchmark<'_>,
    config: &TrainConfig,
    opts: &RetrievalOptions,
) -> Result<EvalReport> {
    if sizes.is_empty() {
        return Err(Error::InvalidArgument("no lexicon sizes given".into()));
    }
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("lexicon sizes must be sorted ascending".into()));
    }
    if let Some(&s) = sizes.iter().find(|&&s| s == 0 || s > bench.train.len()) {
        return Err(Error::InvalidArgument(format!(
            "lexicon size {s} outside 1..={}",
            bench.train.len()
        )));
    }
    let mut points = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let train = bench.train.prefix(size)?;
        let map = fit(method, bench.source, bench.target, &train, config)?;
        let r = evaluate_mapping(&map, bench.source, bench.target, bench.test, Criterion::Csls, config.k, opts)?
            .with_method(method.name());
        points.push((r, size));
    }
    Ok(series_report(bench, method.name(), config, points))
}

/// Accuracy as a function of the neighbourhood size `k`. For each `k`,
/// Procrustes is evaluated with CSLS(k) and RCSLS is trained and evaluated
/// with that `k`.
pub fn knn_sweep(
    ks: &[usize],
    bench: &Benchmark<'_>,
    config: &TrainConfig,
    opts: &RetrievalOptions,
) -> Result<EvalReport> {
    if ks.is_empty() {
        return Err(Error::InvalidArgument("no k values given".into()));
    }
    let procrustes = fit(Method::Procrustes, bench.source, bench.target, bench.train, config)?;
    let mut points = Vec::with_capacity(2 * ks.len());
    for &k in ks {
        let r = evaluate_mapping(&procrustes, bench.source, bench.target, bench.test, Criterion::Csls, k, opts)?
            .with_method(Method::Procrustes.name());
        points.push((r, k));
        let cfg = TrainConfig { k, ..config.clone() };
        let map = fit(Method::Rcsls, bench.source, bench.target, bench.train, &cfg)?;
        let r = evaluate_mapping(&map, bench.source, bench.target, bench.test, Criterion::Csls, k, opts)?
            .with_method(Method::Rcsls.name());
        points.push((r, k));
    }
    Ok(series_report(bench, "knn_sweep", config, points))
}

/// NN and CSLS reports for every supplied map, plus per-method NN − CSLS gaps.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriterionComparison {
    pub reports: Vec<EvalReport>,
    /// (method, NN accuracy − CSLS accuracy)
    pub gaps: Vec<(String, f64)>,
}

pub fn criterion_comparison(
    bench: &Benchmark<'_>,
    maps: &[(String, MappingMatrix)],
    k: usize,
    opts: &RetrievalOptions,
) -> Result<CriterionComparison> {
    let mut reports = Vec::with_capacity(2 * maps.len());
    let mut gaps = Vec::with_capacity(maps.len());
    for (name, map) in maps {
        let nn = evaluate_mapping(map, bench.source, bench.target, bench.test, Criterion::Nn, k, opts)?
            .with_label(bench.label)
            .with_method(name.as_str());
        let csls = evaluate_mapping(map, bench.source, bench.target, bench.test, Criterion::Csls, k, opts)?
            .with_label(bench.label)
            .with_method(name.as_str());
        gaps.push((name.clone(), nn.accuracy - csls.accuracy));
        reports.push(nn);
        reports.push(csls);
    }
    Ok(CriterionComparison { reports, gaps })
}

const SUBSET_ORACLE_MAX: usize = 20;

/// Maximum over all `k`-subsets of the sum of the chosen entries, found by
/// enumerating every subset. Each subset is summed in ascending index order.
pub fn subset_max_oracle(dots: &[f64], k: usize) -> Result<f64> {
    let n = dots.len();
    if n > SUBSET_ORACLE_MAX {
        return Err(Error::InvalidArgument(format!(
            "subset oracle limited to {SUBSET_ORACLE_MAX} values, got {n}"
        )));
    }
    if k > n {
        return Err(Error::KOutOfRange { k, available: n });
    }
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let s: f64 = (0..n).filter(|j| mask & (1 << j) != 0).map(|j| dots[j]).sum();
        if s > best {
            best = s;
        }
    }
    Ok(best)
}

/// Averages over several reports: `macro_avg` weights each report equally,
/// `micro_avg` weights by number of evaluated words.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub macro_avg: f64,
    pub micro_avg: f64,
}

pub fn aggregate(reports: &[EvalReport]) -> Result<Aggregate> {
    if reports.is_empty() {
        return Err(Error::EmptyEvaluation("no reports to aggregate".into()));
    }
    let macro_avg = reports.iter().map(|r| r.accuracy).sum::<f64>() / reports.len() as f64;
    let correct: usize = reports.iter().map(|r| r.n_correct).sum();
    let total: usize = reports.iter().map(|r| r.n_evaluated).sum();
    Ok(Aggregate {
        macro_avg,
        micro_avg: correct as f64 / total as f64,
    })
}

/// Plain-text table: one row per method, one column per label/criterion,
/// accuracies in percent.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut columns: Vec<String> = Vec::new();
    let mut rows: Vec<String> = Vec::new();
    let mut cells: HashMap<(String, String), f64> = HashMap::new();
    for r in reports {
        let col = if r.label.is_empty() {
            r.criterion.to_string()
        } else {
            format!("{} {}", r.label, r.criterion)
        };
        if !columns.contains(&col) {
            columns.push(col.clone());
        }
        if !rows.contains(&r.method) {
            rows.push(r.method.clone());
        }
        cells.insert((r.method.clone(), col), r.accuracy * 100.0);
    }
    let width = columns.iter().map(|c| c.len()).max().unwrap_or(0).max(6);
    let name_width = rows.iter().map(|r| r.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = write!(out, "{:name_width$}", "method");
    for c in &columns {
        let _ = write!(out, "  {c:>width$}");
    }
    out.push('\n');
    for row in &rows {
        let _ = write!(out, "{row:name_width$}");
        for c in &columns {
            match cells.get(&(row.clone(), c.clone())) {
                Some(v) => {
                    let _ = write!(out, "  {v:>width$.1}");
                }
                None => {
                    let _ = write!(out, "  {:>width$}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::Prediction;
    use crate::synthetic::{SyntheticConfig, SyntheticPair};
    use proptest::prelude::*;

    fn result(queries: Vec<usize>, targets: Vec<usize>) -> TranslationResult {
        TranslationResult {
            criterion: Criterion::Nn,
            k: None,
            queries,
            predictions: targets
                .into_iter()
                .map(|target| Prediction { target, score: 0.0 })
                .collect(),
        }
    }

    #[test]
    fn all_correct() {
        let lex = BilingualLexicon::from_pairs(vec![(0, 3), (1, 4)]).unwrap();
        let r = precision_at_1(&result(vec![0, 1], vec![3, 4]), &lex).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.n_evaluated, 2);
    }

    #[test]
    fn any_reference_translation_counts() {
        let lex = BilingualLexicon::from_pairs(vec![(0, 1), (0, 2)]).unwrap();
        let r = precision_at_1(&result(vec![0], vec![2]), &lex).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.n_evaluated, 1);
    }

    #[test]
    fn hand_counted_fixture() {
        let lex = BilingualLexicon::from_pairs(vec![
            (0, 10),
            (1, 11),
            (1, 12),
            (2, 13),
            (3, 14),
            (4, 15),
        ])
        .unwrap();
        // 0 right, 1 right via second reference, 2 wrong, 3 right, 4 wrong
        let r = precision_at_1(&result(vec![0, 1, 2, 3, 4], vec![10, 12, 14, 14, 10]), &lex).unwrap();
        assert_eq!(r.n_correct, 3);
        assert_eq!(r.accuracy, 3.0 / 5.0);
    }

    #[test]
    fn missing_prediction_is_an_error() {
        let lex = BilingualLexicon::from_pairs(vec![(0, 1), (5, 2)]).unwrap();
        assert!(matches!(
            precision_at_1(&result(vec![0], vec![1]), &lex),
            Err(Error::MissingPrediction(5))
        ));
    }

    proptest! {
        #[test]
        fn precision_ignores_prediction_order(
            targets in prop::collection::vec(0usize..6, 1..30),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let n = targets.len();
            let lex = BilingualLexicon::from_pairs((0..n).map(|i| (i, i % 6)).collect()).unwrap();
            let base = precision_at_1(&result((0..n).collect(), targets.clone()), &lex).unwrap();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let shuffled = result(order.clone(), order.iter().map(|&i| targets[i]).collect());
            let r = precision_at_1(&shuffled, &lex).unwrap();
            prop_assert_eq!(r.accuracy, base.accuracy);
        }

        #[test]
        fn subset_oracle_equals_top_k_sum(
            dots in prop::collection::vec(-5.0f64..5.0, 1..9),
            k in 1usize..4,
        ) {
            prop_assume!(k <= dots.len());
            let mut idx: Vec<usize> = (0..dots.len()).collect();
            idx.sort_by(|&a, &b| dots[b].total_cmp(&dots[a]).then(a.cmp(&b)));
            let mut top = idx[..k].to_vec();
            top.sort_unstable();
            let expected: f64 = top.iter().map(|&j| dots[j]).sum();
            prop_assert_eq!(subset_max_oracle(&dots, k).unwrap(), expected);
        }
    }

    #[test]
    fn subset_oracle_examples() {
        assert_eq!(subset_max_oracle(&[3.0, 1.0, 2.0], 2).unwrap(), 5.0);
        assert_eq!(subset_max_oracle(&[3.0, 1.0, 2.0], 3).unwrap(), 6.0);
        assert!(subset_max_oracle(&[0.0; 21], 2).is_err());
        assert!(subset_max_oracle(&[1.0, 2.0], 3).is_err());
    }

    #[test]
    fn aggregate_macro_and_micro() {
        let mk = |acc: f64, n: usize| EvalReport {
            label: String::new(),
            method: "m".into(),
            criterion: Criterion::Csls,
            k: Some(10),
            accuracy: acc,
            n_evaluated: n,
            n_correct: (acc * n as f64).round() as usize,
            skipped_oov: 0,
            config: serde_json::Value::Null,
            series: None,
        };
        let a = aggregate(&[mk(1.0, 10), mk(0.5, 30)]).unwrap();
        assert_eq!(a.macro_avg, 0.75);
        assert_eq!(a.micro_avg, 25.0 / 40.0);
        let table = render_table(&[mk(1.0, 10).with_label("en-es")]);
        assert!(table.contains("100.0"));
        assert!(table.contains("en-es csls"));
    }

    fn bench_data() -> (SyntheticPair, BilingualLexicon, BilingualLexicon) {
        let pair = SyntheticPair::generate(&SyntheticConfig::planted(500, 8, 13));
        let train = pair.lexicon(0..200).unwrap();
        let test = pair.lexicon(300..400).unwrap();
        (pair, train, test)
    }

    #[test]
    fn sweeps_have_expected_shape() {
        let (pair, train, test) = bench_data();
        let bench = Benchmark {
            label: "syn",
            source: &pair.source,
            target: &pair.target,
            train: &train,
            test: &test,
        };
        let cfg = TrainConfig {
            k: 5,
            ..TrainConfig::default().at(1.0, 2)
        };
        let opts = RetrievalOptions::default();
        let lex = lexicon_size_sweep(&[10, 50, 200], Method::Procrustes, &bench, &cfg, &opts).unwrap();
        let series = lex.series.unwrap();
        assert_eq!(series.len(), 3);
        assert!(series.iter().all(|p| p.accuracy == 1.0));
        let full = evaluate_mapping(
            &fit(Method::Procrustes, &pair.source, &pair.target, &train, &cfg).unwrap(),
            &pair.source,
            &pair.target,
            &test,
            Criterion::Csls,
            5,
            &opts,
        )
        .unwrap();
        assert_eq!(series[2].accuracy, full.accuracy);

        let knn = knn_sweep(&[1, 5], &bench, &cfg, &opts).unwrap();
        assert_eq!(knn.series.unwrap().len(), 4);

        assert!(lexicon_size_sweep(&[50, 10], Method::Procrustes, &bench, &cfg, &opts).is_err());
        assert!(lexicon_size_sweep(&[201], Method::Procrustes, &bench, &cfg, &opts).is_err());
    }

    #[test]
    fn comparison_has_two_reports_per_method() {
        let (pair, train, test) = bench_data();
        let bench = Benchmark {
            label: "syn",
            source: &pair.source,
            target: &pair.target,
            train: &train,
            test: &test,
        };
        let cfg = TrainConfig::default();
        let p = fit(Method::Procrustes, &pair.source, &pair.target, &train, &cfg).unwrap();
        let l = fit(Method::Lsq, &pair.source, &pair.target, &train, &cfg).unwrap();
        let cmp = criterion_comparison(
            &bench,
            &[("procrustes".into(), p.clone()), ("lsq".into(), l), ("again".into(), p)],
            10,
            &RetrievalOptions::default(),
        )
        .unwrap();
        assert_eq!(cmp.reports.len(), 6);
        assert_eq!(cmp.gaps.len(), 3);
        assert_eq!(cmp.reports[0].accuracy, cmp.reports[4].accuracy);
        assert_eq!(cmp.reports[1].accuracy, cmp.reports[5].accuracy);
    }
}
