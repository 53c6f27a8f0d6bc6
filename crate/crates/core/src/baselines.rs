//! Closed-form alignment solvers and the mapping-matrix type they return.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Feasible set a mapping was constrained to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintDomain {
    Orthogonal,
    SpectralBall,
    Unconstrained,
}

impl fmt::Display for ConstraintDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstraintDomain::Orthogonal => "orthogonal",
            ConstraintDomain::SpectralBall => "spectral_ball",
            ConstraintDomain::Unconstrained => "unconstrained",
        })
    }
}

impl FromStr for ConstraintDomain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orthogonal" => Ok(ConstraintDomain::Orthogonal),
            "spectral" | "spectral_ball" => Ok(ConstraintDomain::SpectralBall),
            "none" | "unconstrained" => Ok(ConstraintDomain::Unconstrained),
            other => Err(Error::InvalidArgument(format!("unknown constraint {other:?}"))),
        }
    }
}

/// A square map `W` sending source vectors `x` to `W x` in the target space.
#[derive(Clone, Debug, PartialEq)]
pub struct MappingMatrix {
    w: Array2<f64>,
    constraint: ConstraintDomain,
}

/// Tolerance for the orthogonality and spectral-ball invariants.
pub const CONSTRAINT_TOL: f64 = 1e-6;

impl MappingMatrix {
    /// Wraps `w`, checking it is square and satisfies `constraint`.
    pub fn new(w: Array2<f64>, constraint: ConstraintDomain) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::Shape(format!("map must be square, got {:?}", w.dim())));
        }
        let m = MappingMatrix { w, constraint };
        m.check_constraint()?;
        Ok(m)
    }

    pub fn identity(d: usize) -> Self {
        MappingMatrix {
            w: Array2::eye(d),
            constraint: ConstraintDomain::Orthogonal,
        }
    }

    pub(crate) fn new_unchecked(w: Array2<f64>, constraint: ConstraintDomain) -> Self {
        MappingMatrix { w, constraint }
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.w.view()
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.w
    }

    pub fn constraint(&self) -> ConstraintDomain {
        self.constraint
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    /// `max |WᵀW − I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let gram = self.w.t().dot(&self.w) - Array2::<f64>::eye(self.dim());
        linalg::max_abs(gram.view())
    }

    pub fn spectral_norm(&self) -> f64 {
        linalg::spectral_norm(self.w.view())
    }

    fn check_constraint(&self) -> Result<()> {
        match self.constraint {
            ConstraintDomain::Orthogonal => {
                let err = self.orthogonality_error();
                if err > CONSTRAINT_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "map tagged orthogonal but |WᵀW − I|max = {err:e}"
                    )));
                }
            }
            ConstraintDomain::SpectralBall => {
                let s = self.spectral_norm();
                if s > 1.0 + CONSTRAINT_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "map tagged spectral_ball but σmax = {s}"
                    )));
                }
            }
            ConstraintDomain::Unconstrained => {}
        }
        Ok(())
    }

    /// Maps every row of `x` (returns `X Wᵀ`).
    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.w.t())
    }

    /// Writes `d` on the first line, then `d` rows of `d` values with 17
    /// significant digits, which round-trips every `f64` exactly.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{}", self.dim())?;
        for row in self.w.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    /// Reads a map written by [`save`](Self::save). The constraint tag is
    /// inferred from the matrix: orthogonal if `WᵀW ≈ I`, spectral-ball if
    /// `σmax ≤ 1`, unconstrained otherwise.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file), path)
    }

    pub fn read<R: BufRead>(reader: R, origin: &Path) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 1, "missing dimension header"))?
            .map_err(|e| Error::io(origin, e))?;
        let d: usize = header
            .trim()
            .parse()
            .map_err(|_| Error::parse(origin, 1, format!("bad dimension {header:?}")))?;
        if d == 0 {
            return Err(Error::parse(origin, 1, "dimension must be positive"));
        }
        let mut data = Vec::with_capacity(d * d);
        for i in 0..d {
            let line = lines
                .next()
                .ok_or_else(|| Error::parse(origin, i + 2, "missing row"))?
                .map_err(|e| Error::io(origin, e))?;
            let before = data.len();
            for tok in line.split_whitespace() {
                data.push(tok.parse::<f64>().map_err(|_| {
                    Error::parse(origin, i + 2, format!("invalid number {tok:?}"))
                })?);
            }
            if data.len() - before != d {
                return Err(Error::parse(
                    origin,
                    i + 2,
                    format!("expected {} values, found {}", d, data.len() - before),
                ));
            }
        }
        let w = Array2::from_shape_vec((d, d), data).expect("shape checked");
        let probe = MappingMatrix::new_unchecked(w, ConstraintDomain::Unconstrained);
        let constraint = if probe.orthogonality_error() <= CONSTRAINT_TOL {
            ConstraintDomain::Orthogonal
        } else if probe.spectral_norm() <= 1.0 + CONSTRAINT_TOL {
            ConstraintDomain::SpectralBall
        } else {
            ConstraintDomain::Unconstrained
        };
        Ok(MappingMatrix::new_unchecked(probe.w, constraint))
    }
}

fn check_pair(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::Shape(format!(
            "source seeds {:?} vs target seeds {:?}",
            x.dim(),
            y.dim()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::EmptyLexicon("no seed pairs".into()));
    }
    Ok(())
}

/// Unconstrained least squares: `W = argmin Σ ‖W xᵢ − yᵢ‖²`.
///
/// Solves the normal equations `(XᵀX) Wᵀ = XᵀY` by Cholesky, falling back to
/// the pseudo-inverse when `XᵀX` is singular (minimum-norm solution).
pub fn least_squares_fit(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<MappingMatrix> {
    check_pair(x, y)?;
    let xtx = x.t().dot(&x);
    let xty = x.t().dot(&y);
    let w_t = match linalg::cholesky_solve(xtx.view(), xty.view()) {
        Some(sol) => sol,
        None => linalg::pseudo_inverse(x).dot(&y),
    };
    Ok(MappingMatrix::new_unchecked(
        w_t.reversed_axes(),
        ConstraintDomain::Unconstrained,
    ))
}

/// Orthogonal Procrustes: `W = U Vᵀ` where `U D Vᵀ` is the SVD of `YᵀX`.
pub fn procrustes_fit(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<MappingMatrix> {
    check_pair(x, y)?;
    let m = y.t().dot(&x);
    let svd = linalg::svd(m.view());
    let w = svd.u.dot(&svd.v_t);
    Ok(MappingMatrix::new_unchecked(w, ConstraintDomain::Orthogonal))
}

/// `(1/n) Σ ‖W xᵢ − yᵢ‖²`.
pub fn square_loss(w: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> f64 {
    let r = x.dot(&w.t()) - y;
    r.iter().map(|v| v * v).sum::<f64>() / x.nrows() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{random_orthogonal, random_unit_rows};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rot(theta: f64) -> Array2<f64> {
        array![[theta.cos(), -theta.sin()], [theta.sin(), theta.cos()]]
    }

    #[test]
    fn lsq_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_unit_rows(&mut rng, 40, 6);
        let w = least_squares_fit(x.view(), x.view()).unwrap();
        assert!(linalg::max_abs((&w.matrix() - &Array2::<f64>::eye(6)).view()) <= 1e-8);
        assert_eq!(w.constraint(), ConstraintDomain::Unconstrained);
    }

    #[test]
    fn lsq_scalar() {
        let w = least_squares_fit(array![[2.0]].view(), array![[6.0]].view()).unwrap();
        assert!((w.matrix()[[0, 0]] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn lsq_plant_and_recover() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((50, 7), |_| rng.random_range(-1.0..1.0));
        let w0 = Array2::from_shape_fn((7, 7), |_| rng.random_range(-1.0..1.0));
        let y = x.dot(&w0.t());
        let w = least_squares_fit(x.view(), y.view()).unwrap();
        assert!(linalg::max_abs((&w.matrix() - &w0).view()) <= 1e-6);
    }

    #[test]
    fn lsq_rank_deficient_uses_pseudo_inverse() {
        // Only the first coordinate is ever observed.
        let x = array![[1.0, 0.0], [2.0, 0.0], [-1.0, 0.0]];
        let y = array![[3.0, 1.0], [6.0, 2.0], [-3.0, -1.0]];
        let w = least_squares_fit(x.view(), y.view()).unwrap();
        assert!(w.matrix().iter().all(|v| v.is_finite()));
        // Minimum-norm solution leaves the unobserved column at zero.
        assert!(linalg::max_abs((&w.matrix() - &array![[3.0, 0.0], [1.0, 0.0]]).view()) < 1e-12);
    }

    #[test]
    fn lsq_residual_orthogonal_to_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((80, 5), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((80, 5), |_| rng.random_range(-1.0..1.0));
        let w = least_squares_fit(x.view(), y.view()).unwrap();
        let resid = x.dot(&w.matrix().t()) - &y;
        let g = x.t().dot(&resid);
        let scale = linalg::max_abs(x.view()) * linalg::max_abs(y.view()) * 80.0;
        assert!(linalg::max_abs(g.view()) <= 1e-6 * scale);
    }

    #[test]
    fn procrustes_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_unit_rows(&mut rng, 30, 5);
        let w = procrustes_fit(x.view(), x.view()).unwrap();
        assert!(linalg::max_abs((&w.matrix() - &Array2::<f64>::eye(5)).view()) <= 1e-6);
    }

    #[test]
    fn procrustes_recovers_planar_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_unit_rows(&mut rng, 25, 2);
        let theta = 1.234;
        let y = x.dot(&rot(theta).t());
        let w = procrustes_fit(x.view(), y.view()).unwrap();
        assert!(linalg::max_abs((&w.matrix() - &rot(theta)).view()) <= 1e-6);

        // Grid search over rotations confirms the minimizer.
        let mut best = (f64::INFINITY, 0.0);
        let steps = (std::f64::consts::TAU / 1e-4) as usize;
        for s in 0..steps {
            let t = s as f64 * 1e-4;
            let loss = square_loss(rot(t).view(), x.view(), y.view());
            if loss < best.0 {
                best = (loss, t);
            }
        }
        assert!((best.1 - theta).abs() <= 1e-4);
        assert!(square_loss(w.matrix(), x.view(), y.view()) <= best.0 + 1e-12);
    }

    #[test]
    fn procrustes_plant_and_recover_d32() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_unit_rows(&mut rng, 1000, 32);
        let q = random_orthogonal(&mut rng, 32);
        let y = x.dot(&q.t());
        let w = procrustes_fit(x.view(), y.view()).unwrap();
        assert!(linalg::frobenius((&w.matrix() - &q).view()) <= 1e-4);
    }

    #[test]
    fn procrustes_is_orthogonal_and_locally_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..5 {
            let d = 3 + trial;
            let x = random_unit_rows(&mut rng, 20, d);
            let y = random_unit_rows(&mut rng, 20, d);
            let w = procrustes_fit(x.view(), y.view()).unwrap();
            assert!(w.orthogonality_error() <= 1e-6);
            let base = square_loss(w.matrix(), x.view(), y.view());
            for _ in 0..20 {
                // Small rotation exp(εA) with A skew, via Cayley transform.
                let a = Array2::from_shape_fn((d, d), |_| rng.random_range(-1e-3..1e-3));
                let skew = &a - &a.t();
                let i = Array2::<f64>::eye(d);
                let num = &i + &(&skew * 0.5);
                let den = &i - &(&skew * 0.5);
                let r = linalg::pseudo_inverse(den.view()).dot(&num);
                let w2 = w.matrix().dot(&r);
                assert!(square_loss(w2.view(), x.view(), y.view()) >= base - 1e-9);
            }
        }
    }

    #[test]
    fn rank_deficient_procrustes_still_orthogonal() {
        let x = array![[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let y = array![[0.0, 1.0, 0.0], [0.0, 1.0, 0.0]];
        let w = procrustes_fit(x.view(), y.view()).unwrap();
        assert!(w.orthogonality_error() <= 1e-6);
        let wx = w.matrix().dot(&array![1.0, 0.0, 0.0]);
        assert!((wx[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unit_norm_distance_and_dot_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let x = random_unit_rows(&mut rng, 1, 6);
            let ys = random_unit_rows(&mut rng, 30, 6);
            let w = MappingMatrix::new(random_orthogonal(&mut rng, 6), ConstraintDomain::Orthogonal)
                .unwrap();
            let wx = w.matrix().dot(&x.row(0));
            let mut best_dist = (f64::INFINITY, 0);
            let mut best_dot = (f64::NEG_INFINITY, 0);
            for (j, y) in ys.rows().into_iter().enumerate() {
                let d = (&wx - &y).mapv(|v| v * v).sum();
                let s = wx.dot(&y);
                if d < best_dist.0 {
                    best_dist = (d, j);
                }
                if s > best_dot.0 {
                    best_dot = (s, j);
                }
            }
            assert_eq!(best_dist.1, best_dot.1);
        }
    }

    #[test]
    fn map_file_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = MappingMatrix::new(
            Array2::from_shape_fn((4, 4), |_| rng.random_range(-3.0..3.0)),
            ConstraintDomain::Unconstrained,
        )
        .unwrap();
        let mut buf = Vec::new();
        w.write(&mut buf).unwrap();
        let back = MappingMatrix::read(buf.as_slice(), Path::new("<mem>")).unwrap();
        assert_eq!(back.matrix(), w.matrix());

        let q = MappingMatrix::new(random_orthogonal(&mut rng, 5), ConstraintDomain::Orthogonal).unwrap();
        let mut buf = Vec::new();
        q.write(&mut buf).unwrap();
        let back = MappingMatrix::read(buf.as_slice(), Path::new("<mem>")).unwrap();
        assert_eq!(back.constraint(), ConstraintDomain::Orthogonal);
    }

    #[test]
    fn constraint_tags_are_checked() {
        assert!(MappingMatrix::new(array![[2.0, 0.0], [0.0, 1.0]], ConstraintDomain::Orthogonal).is_err());
        assert!(MappingMatrix::new(array![[2.0, 0.0], [0.0, 1.0]], ConstraintDomain::SpectralBall).is_err());
        assert!(MappingMatrix::new(array![[0.5, 0.0], [0.0, 1.0]], ConstraintDomain::SpectralBall).is_ok());
        assert!(MappingMatrix::new(array![[1.0, 0.0, 0.0]], ConstraintDomain::Unconstrained).is_err());
    }
}
