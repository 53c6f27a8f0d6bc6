//! Word-embedding matrices in the word2vec/fastText text format.
//!
//! The format is a header line `N d` followed by one line per word:
//!
//! ```text
//! 2 3
//! cat 1 0 0
//! dog 0 1 0
//! ```
//!
//! Words are compared as raw byte strings. Rows are kept in file order, which
//! for the usual distributed vector files is descending frequency.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows with a Euclidean norm below this are treated as zero vectors.
pub const ZERO_NORM_TOL: f64 = 1e-12;

/// Ordered word list with a reverse index.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vocabulary from distinct words; returns `None` on a duplicate.
    pub fn from_words<I, S>(words: I) -> Option<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary::new();
        for w in words {
            if !vocab.push(w.into()) {
                return None;
            }
        }
        Some(vocab)
    }

    /// Appends `word`, returning `false` (and leaving the vocabulary intact)
    /// if it is already present.
    pub fn push(&mut self, word: String) -> bool {
        if self.index.contains_key(&word) {
            return false;
        }
        self.index.insert(word.clone(), self.words.len());
        self.words.push(word);
        true
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, idx: usize) -> Option<&str> {
        self.words.get(idx).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// Normalization applied to an [`EmbeddingMatrix`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormState {
    Raw,
    L2Normalized,
    CenteredL2Normalized,
}

/// A vocabulary together with one row vector per word.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    vocab: Vocabulary,
    vectors: Array2<f64>,
    norm_state: NormState,
    zero_rows: BTreeSet<usize>,
}

impl EmbeddingMatrix {
    /// Wraps raw vectors. Fails if the row count does not match the vocabulary.
    pub fn new(vocab: Vocabulary, vectors: Array2<f64>) -> Result<Self> {
        if vocab.len() != vectors.nrows() {
            return Err(Error::Shape(format!(
                "{} words but {} vectors",
                vocab.len(),
                vectors.nrows()
            )));
        }
        Ok(EmbeddingMatrix {
            vocab,
            vectors,
            norm_state: NormState::Raw,
            zero_rows: BTreeSet::new(),
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vectors(&self) -> ArrayView2<'_, f64> {
        self.vectors.view()
    }

    pub fn row(&self, idx: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(idx)
    }

    pub fn norm_state(&self) -> NormState {
        self.norm_state
    }

    /// Rows whose norm was numerically zero when the matrix was normalized.
    pub fn zero_rows(&self) -> &BTreeSet<usize> {
        &self.zero_rows
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// Copies the given rows into a new matrix, in order.
    pub fn gather(&self, rows: &[usize]) -> Array2<f64> {
        self.vectors.select(Axis(0), rows)
    }

    /// Divides every row by its Euclidean norm. Rows with norm below
    /// [`ZERO_NORM_TOL`] are zeroed and recorded in [`zero_rows`](Self::zero_rows).
    pub fn l2_normalize(self) -> Self {
        let (vectors, zero_rows) = normalize_rows(self.vectors);
        EmbeddingMatrix {
            vocab: self.vocab,
            vectors,
            norm_state: NormState::L2Normalized,
            zero_rows,
        }
    }

    /// Subtracts the per-dimension mean, then normalizes rows to unit length.
    pub fn center_then_normalize(self) -> Self {
        let centered = center_columns(self.vectors);
        let (vectors, zero_rows) = normalize_rows(centered);
        EmbeddingMatrix {
            vocab: self.vocab,
            vectors,
            norm_state: NormState::CenteredL2Normalized,
            zero_rows,
        }
    }

    /// Applies `w` to every row (`w x`) and renormalizes the result.
    pub fn map_and_normalize(&self, w: ArrayView2<'_, f64>) -> Result<Self> {
        if w.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "map is {}x{}, vectors have dimension {}",
                w.nrows(),
                w.ncols(),
                self.dim()
            )));
        }
        let mapped = self.vectors.dot(&w.t());
        let (vectors, zero_rows) = normalize_rows(mapped);
        Ok(EmbeddingMatrix {
            vocab: self.vocab.clone(),
            vectors,
            norm_state: NormState::L2Normalized,
            zero_rows,
        })
    }

    /// Keeps only the first `n` rows.
    pub fn truncate(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let vocab = Vocabulary::from_words(self.vocab.words()[..n].iter().cloned())
            .expect("prefix of a vocabulary is duplicate free");
        EmbeddingMatrix {
            vocab,
            vectors: self.vectors.slice(ndarray::s![..n, ..]).to_owned(),
            norm_state: self.norm_state,
            zero_rows: self.zero_rows.range(..n).copied().collect(),
        }
    }

    /// Reads a text vector file, keeping at most `max_vocab` distinct words.
    pub fn load_text(path: impl AsRef<Path>, max_vocab: Option<usize>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        read_text(BufReader::new(file), path, max_vocab)
    }

    /// Writes the matrix in text format with `precision` digits after the
    /// decimal point.
    pub fn save_text(&self, path: impl AsRef<Path>, precision: usize) -> Result<()> {
        let path = path.as_ref();
        if self.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        write_text(&mut out, self, precision).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Parses the text format from any buffered reader. `origin` is only used in
/// error messages.
pub fn read_text<R: BufRead>(
    reader: R,
    origin: &Path,
    max_vocab: Option<usize>,
) -> Result<EmbeddingMatrix> {
    if max_vocab == Some(0) {
        return Err(Error::InvalidArgument("max_vocab must be positive".into()));
    }
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(origin, e))?,
        None => return Err(Error::parse(origin, 1, "missing header")),
    };
    let (n_header, dim) = parse_header(&header).ok_or_else(|| {
        Error::parse(origin, 1, format!("malformed header {:?}, expected \"N d\"", header))
    })?;

    let cap = max_vocab.unwrap_or(usize::MAX).min(n_header);
    let mut vocab = Vocabulary::new();
    let mut data = Vec::with_capacity(cap.min(1 << 20) * dim);

    for (lineno, line) in lines.enumerate() {
        if vocab.len() >= cap {
            break;
        }
        let lineno = lineno + 2;
        let line = line.map_err(|e| Error::io(origin, e))?;
        let line = line.trim_end_matches(['\n', '\r', ' ']);
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(' ').filter(|s| !s.is_empty());
        let word = parts.next().expect("non-empty line has a token");
        let start = data.len();
        for tok in parts {
            let v: f64 = tok.parse().map_err(|_| {
                Error::parse(origin, lineno, format!("invalid number {:?}", tok))
            })?;
            data.push(v);
        }
        let found = data.len() - start;
        if found != dim {
            return Err(Error::parse(
                origin,
                lineno,
                format!("expected {} values for {:?}, found {}", dim, word, found),
            ));
        }
        if !vocab.push(word.to_string()) {
            warn!(
                "{}:{}: duplicate word {:?} skipped",
                origin.display(),
                lineno,
                word
            );
            data.truncate(start);
        }
    }

    if vocab.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    if vocab.len() < cap {
        warn!(
            "{}: header announces {} words, found {}",
            origin.display(),
            n_header,
            vocab.len()
        );
    }
    let vectors = Array2::from_shape_vec((vocab.len(), dim), data)
        .expect("row widths were checked while parsing");
    EmbeddingMatrix::new(vocab, vectors)
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut parts = line.split_whitespace();
    let n = parts.next()?.parse().ok()?;
    let d: usize = parts.next()?.parse().ok()?;
    if parts.next().is_some() || d == 0 {
        return None;
    }
    Some((n, d))
}

/// Writes the text format to any writer.
pub fn write_text<W: Write>(out: &mut W, emb: &EmbeddingMatrix, precision: usize) -> std::io::Result<()> {
    writeln!(out, "{} {}", emb.len(), emb.dim())?;
    for (word, row) in emb.vocab.words().iter().zip(emb.vectors.rows()) {
        out.write_all(word.as_bytes())?;
        for v in row {
            write!(out, " {:.*}", precision, v)?;
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Normalizes rows in place and returns the indices of rows that were zero.
pub(crate) fn normalize_rows(mut m: Array2<f64>) -> (Array2<f64>, BTreeSet<usize>) {
    let mut zero = BTreeSet::new();
    for (i, mut row) in m.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm < ZERO_NORM_TOL {
            row.fill(0.0);
            zero.insert(i);
        } else {
            row /= norm;
        }
    }
    (m, zero)
}

pub(crate) fn center_columns(mut m: Array2<f64>) -> Array2<f64> {
    if m.nrows() == 0 {
        return m;
    }
    let mean: Array1<f64> = m.mean_axis(Axis(0)).expect("non-empty");
    m -= &mean;
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn parse(text: &str, max_vocab: Option<usize>) -> Result<EmbeddingMatrix> {
        read_text(text.as_bytes(), Path::new("<mem>"), max_vocab)
    }

    fn raw(rows: Array2<f64>) -> EmbeddingMatrix {
        let words = (0..rows.nrows()).map(|i| format!("w{i}"));
        EmbeddingMatrix::new(Vocabulary::from_words(words).unwrap(), rows).unwrap()
    }

    #[test]
    fn parses_small_file() {
        let e = parse("2 3\ncat 1 0 0\ndog 0 1 0\n", None).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e.dim(), 3);
        assert_eq!(e.vocab().words(), &["cat", "dog"]);
        assert_eq!(e.norm_state(), NormState::Raw);
        assert_eq!(e.row(1).to_vec(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn max_vocab_truncates() {
        let e = parse("2 3\ncat 1 0 0\ndog 0 1 0\n", Some(1)).unwrap();
        assert_eq!(e.vocab().words(), &["cat"]);
    }

    #[test]
    fn duplicates_skipped_and_not_counted() {
        let text = "4 2\ncat 1 0\ncat 5 5\ndog 0 1\nemu 1 1\n";
        let e = parse(text, Some(2)).unwrap();
        assert_eq!(e.vocab().words(), &["cat", "dog"]);
        assert_eq!(e.row(0).to_vec(), vec![1.0, 0.0]);
        let all = parse(text, None).unwrap();
        assert_eq!(all.len(), 3);
        for (i, w) in all.vocab().words().iter().enumerate() {
            assert_eq!(all.vocab().index_of(w), Some(i));
        }
    }

    #[test]
    fn trailing_space_tolerated() {
        let e = parse("1 2\ncat 1 2 \r\n", None).unwrap();
        assert_eq!(e.row(0).to_vec(), vec![1.0, 2.0]);
    }

    #[test]
    fn malformed_inputs_rejected() {
        assert!(matches!(parse("two 3\n", None), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("2\n", None), Err(Error::Parse { .. })));
        assert!(matches!(parse("1 3\ncat 1 0\n", None), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("1 2\ncat 1 x\n", None), Err(Error::Parse { .. })));
        assert!(matches!(parse("0 2\n", None), Err(Error::EmptyVocabulary)));
        assert!(matches!(parse("3 2\n\n", None), Err(Error::EmptyVocabulary)));
        assert!(parse("", None).is_err());
    }

    #[test]
    fn normalize_three_four_five() {
        let e = raw(array![[3.0, 4.0], [0.0, 0.0], [0.6, 0.8]]).l2_normalize();
        assert!((e.row(0)[0] - 0.6).abs() < 1e-15);
        assert!((e.row(0)[1] - 0.8).abs() < 1e-15);
        assert!((e.row(2)[0] - 0.6).abs() < 1e-12);
        assert_eq!(e.row(1).to_vec(), vec![0.0, 0.0]);
        assert_eq!(e.zero_rows().iter().copied().collect::<Vec<_>>(), vec![1]);
        assert_eq!(e.norm_state(), NormState::L2Normalized);
    }

    #[test]
    fn normalize_random_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Array2::from_shape_fn((100, 16), |_| rng.random_range(-5.0..5.0));
        let e = raw(m).l2_normalize();
        for row in e.vectors().rows() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn center_examples() {
        let e = raw(array![[1.0, 0.0], [-1.0, 0.0]]).center_then_normalize();
        assert_eq!(e.vectors(), array![[1.0, 0.0], [-1.0, 0.0]]);
        let e = raw(array![[2.0, 0.0], [0.0, 0.0]]).center_then_normalize();
        assert_eq!(e.vectors(), array![[1.0, 0.0], [-1.0, 0.0]]);
        assert_eq!(e.norm_state(), NormState::CenteredL2Normalized);
    }

    #[test]
    fn centered_intermediate_has_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = Array2::from_shape_fn((57, 9), |_| rng.random_range(-3.0..7.0));
        let scale: Vec<f64> = m
            .columns()
            .into_iter()
            .map(|c| c.iter().fold(0.0f64, |a, v: &f64| a.max(v.abs())))
            .collect();
        let c = center_columns(m);
        for (j, col) in c.columns().into_iter().enumerate() {
            let mut sum = 0.0;
            for v in col {
                sum += v;
            }
            let mean = sum / col.len() as f64;
            assert!(mean.abs() <= 1e-10 * scale[j], "column {j} mean {mean}");
        }
    }

    #[test]
    fn save_refuses_empty() {
        let e = EmbeddingMatrix::new(Vocabulary::new(), Array2::zeros((0, 3))).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.vec");
        assert!(matches!(e.save_text(&path, 6), Err(Error::EmptyVocabulary)));
        assert!(!path.exists());
    }

    #[test]
    fn save_load_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Array2::from_shape_fn((3, 4), |_| rng.random_range(-2.0..2.0));
        let e = raw(m);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.vec");
        e.save_text(&path, 6).unwrap();
        let back = EmbeddingMatrix::load_text(&path, None).unwrap();
        assert_eq!(back.vocab(), e.vocab());
        let diff = (&back.vectors() - &e.vectors()).mapv(f64::abs);
        assert!(diff.iter().all(|&d| d < 1e-5));
    }

    #[test]
    fn mapped_vectors_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let e = raw(Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0))).l2_normalize();
        let w = Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0));
        let mapped = e.map_and_normalize(w.view()).unwrap();
        // Independent product, one row at a time.
        for i in 0..5 {
            let wx = w.dot(&e.row(i));
            let n = wx.dot(&wx).sqrt();
            for j in 0..3 {
                assert!((mapped.row(i)[j] - wx[j] / n).abs() < 1e-12);
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vec");
        mapped.save_text(&path, 8).unwrap();
        let back = EmbeddingMatrix::load_text(&path, None).unwrap();
        let diff = (&back.vectors() - &mapped.vectors()).mapv(f64::abs);
        assert!(diff.iter().all(|&d| d < 1e-5));
    }

    #[test]
    fn loading_is_deterministic() {
        let text = "3 2\na 0.1 0.2\nb 1e-3 -4.5\nc 3.25 7\n";
        let a = parse(text, None).unwrap();
        let b = parse(text, None).unwrap();
        let bits = |e: &EmbeddingMatrix| e.vectors().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn truncate_keeps_prefix() {
        let e = raw(array![[1.0, 0.0], [0.0, 0.0], [0.0, 2.0]]).l2_normalize();
        let t = e.truncate(2);
        assert_eq!(t.len(), 2);
        assert_eq!(t.zero_rows().len(), 1);
        assert_eq!(t.vocab().words(), &["w0", "w1"]);
    }
}
