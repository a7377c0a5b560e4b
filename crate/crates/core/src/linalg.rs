//! Dense symmetric linear algebra: covariance, eigendecomposition,
//! ridge-regularised matrix square roots, projections and PCA.
//!
//! The symmetric eigensolver is Householder tridiagonalisation followed by
//! implicit-shift QL (the EISPACK `tred2`/`tql2` pair). All reductions run in
//! a fixed order so results are reproducible bit for bit.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::feature_io::FeatureMatrix;

/// Smallest admissible eigenvalue of `C + ridge I` for an inverse square root.
pub const MIN_INVERTIBLE_EIGENVALUE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    data: Array2<f64>,
}

impl SymmetricMatrix {
    /// Checks near-symmetry and stores the symmetrised matrix.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (r, c) = data.dim();
        if r != c || r == 0 {
            return Err(Error::Shape(format!("expected a square matrix, got {r}x{c}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("matrix has non-finite entries".into()));
        }
        for i in 0..r {
            for j in (i + 1)..r {
                let (a, b) = (data[[i, j]], data[[j, i]]);
                if (a - b).abs() > 1e-9 * (1.0 + a.abs()) {
                    return Err(Error::Validation(format!(
                        "entries ({i},{j})={a} and ({j},{i})={b} differ"
                    )));
                }
            }
        }
        let sym = (&data + &data.t()) * 0.5;
        Ok(Self { data: sym })
    }

    pub fn identity(d: usize) -> Self {
        Self { data: Array2::eye(d) }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(Array2::from_diag(&Array1::from(diag.to_vec())))
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    pub fn trace(&self) -> f64 {
        self.data.diag().sum()
    }
}

/// Eigenvalues in ascending order with matching orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Array1<f64>,
    pub eigenvectors: Array2<f64>,
}

impl EigenDecomposition {
    /// `V diag(f(w)) V^T`.
    pub fn reconstruct_with<F: Fn(f64) -> f64>(&self, f: F) -> Array2<f64> {
        let scaled = &self.eigenvectors * &self.eigenvalues.mapv(f).view().insert_axis(Axis(0));
        scaled.dot(&self.eigenvectors.t())
    }
}

/// Column means of `x`.
pub fn column_mean(x: &FeatureMatrix) -> Array1<f64> {
    x.as_array().mean_axis(Axis(0)).expect("feature matrices are non-empty")
}

/// Population covariance `(X - mean)^T (X - mean) / n`.
pub fn covariance(x: &FeatureMatrix) -> Result<SymmetricMatrix> {
    let n = x.n();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "covariance needs at least 2 rows, got {n}"
        )));
    }
    let centered = x.as_array() - &column_mean(x).insert_axis(Axis(0));
    let cov = centered.t().dot(&centered) / n as f64;
    SymmetricMatrix::new(cov)
}

/// Symmetric eigendecomposition.
///
/// Fails with [`Error::NoConvergence`] if the QL sweep needs more than
/// `30 * d` implicit shifts in total.
pub fn sym_eig(c: &SymmetricMatrix) -> Result<EigenDecomposition> {
    let n = c.dim();
    let mut v: Vec<f64> = c.as_array().iter().copied().collect();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(n, &mut v, &mut d, &mut e);
    tql2(n, &mut v, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let eigenvalues = Array1::from_iter(order.iter().map(|&i| d[i]));
    let mut eigenvectors = Array2::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            eigenvectors[[row, col]] = v[row * n + src];
        }
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

// Householder reduction to tridiagonal form. On exit `d` holds the diagonal,
// `e[1..]` the subdiagonal and `v` the accumulated orthogonal transform.
fn tred2(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) {
    let idx = |r: usize, c: usize| r * n + c;
    for j in 0..n {
        d[j] = v[idx(n - 1, j)];
    }
    for i in (1..n).rev() {
        let scale: f64 = d[..i].iter().map(|x| x.abs()).sum();
        let mut h = 0.0;
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[idx(i - 1, j)];
                v[idx(i, j)] = 0.0;
                v[idx(j, i)] = 0.0;
            }
        } else {
            for dk in d[..i].iter_mut() {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e[..i].iter_mut() {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[idx(j, i)] = f;
                g = e[j] + v[idx(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[idx(k, j)] * d[k];
                    e[k] += v[idx(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[idx(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[idx(i - 1, j)];
                v[idx(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n.saturating_sub(1) {
        v[idx(n - 1, i)] = v[idx(i, i)];
        v[idx(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[idx(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[idx(k, i + 1)] * v[idx(k, j)];
                }
                for k in 0..=i {
                    v[idx(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[idx(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[idx(n - 1, j)];
        v[idx(n - 1, j)] = 0.0;
    }
    v[idx(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

// Implicit-shift QL on the tridiagonal matrix from `tred2`.
fn tql2(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let idx = |r: usize, c: usize| r * n + c;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let cap = 30 * n;
    let mut total_iters = 0usize;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            loop {
                total_iters += 1;
                if total_iters > cap {
                    return Err(Error::NoConvergence(cap));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d[(l + 2)..n].iter_mut() {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        h = v[idx(k, i + 1)];
                        v[idx(k, i + 1)] = s * v[idx(k, i)] + c * h;
                        v[idx(k, i)] = c * v[idx(k, i)] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// Exponent for [`matrix_power_half`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HalfPower {
    /// `C^{1/2}`
    Sqrt,
    /// `C^{-1/2}`
    InvSqrt,
}

/// `(C + ridge I)^{±1/2}` via eigendecomposition, with eigenvalues of `C`
/// clamped at zero before the ridge is added.
pub fn matrix_power_half(c: &SymmetricMatrix, power: HalfPower, ridge: f64) -> Result<SymmetricMatrix> {
    if !(ridge >= 0.0) {
        return Err(Error::Parameter(format!("ridge must be >= 0, got {ridge}")));
    }
    let eig = sym_eig(c)?;
    let shifted = eig.eigenvalues.mapv(|w| w.max(0.0) + ridge);
    let out = match power {
        HalfPower::Sqrt => EigenDecomposition {
            eigenvalues: shifted,
            eigenvectors: eig.eigenvectors,
        }
        .reconstruct_with(f64::sqrt),
        HalfPower::InvSqrt => {
            let smallest = shifted.iter().copied().fold(f64::INFINITY, f64::min);
            if smallest < MIN_INVERTIBLE_EIGENVALUE {
                return Err(Error::Singular(smallest));
            }
            EigenDecomposition {
                eigenvalues: shifted,
                eigenvectors: eig.eigenvectors,
            }
            .reconstruct_with(|w| 1.0 / w.sqrt())
        }
    };
    Ok(SymmetricMatrix {
        data: (&out + &out.t()) * 0.5,
    })
}

/// Removes from every row its component along `w`: `X - (X w^) w^T`.
pub fn project_out(x: &FeatureMatrix, w: ArrayView1<'_, f64>) -> Result<FeatureMatrix> {
    if w.len() != x.d() {
        return Err(Error::Shape(format!(
            "direction has length {}, features have d={}",
            w.len(),
            x.d()
        )));
    }
    let norm = w.dot(&w).sqrt();
    if !(norm > crate::feature_io::DEGENERATE_NORM) {
        return Err(Error::DegenerateDirection(norm));
    }
    let unit = w.mapv(|v| v / norm);
    let coeffs = x.as_array().dot(&unit);
    let mut out = x.as_array().clone();
    for (mut row, &c) in out.rows_mut().into_iter().zip(coeffs.iter()) {
        row.scaled_add(-c, &unit);
    }
    Ok(FeatureMatrix::from_array_unchecked(out))
}

/// Principal components fitted on a feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// `k x d`, orthonormal rows in order of decreasing explained variance.
    pub components: Array2<f64>,
    pub explained_variance: Array1<f64>,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.nrows()
    }

    /// Maps `k`-dimensional scores back into feature space.
    pub fn inverse_transform(&self, scores: &FeatureMatrix) -> Result<FeatureMatrix> {
        if scores.d() != self.k() {
            return Err(Error::Shape(format!(
                "scores have {} columns, model keeps {}",
                scores.d(),
                self.k()
            )));
        }
        let back = scores.as_array().dot(&self.components) + self.mean.view().insert_axis(Axis(0));
        FeatureMatrix::new(back)
    }
}

/// Fits the top-`k` principal components; requires `1 <= k <= min(n-1, d)`.
///
/// Each component's sign is fixed so that its largest-magnitude entry is positive.
pub fn pca_fit(x: &FeatureMatrix, k: usize) -> Result<PcaModel> {
    let limit = (x.n().saturating_sub(1)).min(x.d());
    if k == 0 || k > limit {
        return Err(Error::Parameter(format!(
            "PCA dimension k={k} must lie in [1, {limit}]"
        )));
    }
    let cov = covariance(x)?;
    let eig = sym_eig(&cov)?;
    let d = x.d();
    let mut components = Array2::zeros((k, d));
    let mut explained = Array1::zeros(k);
    for r in 0..k {
        let col = d - 1 - r;
        let v = eig.eigenvectors.column(col);
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        components.row_mut(r).assign(&v.mapv(|x| x * sign));
        explained[r] = eig.eigenvalues[col].max(0.0);
    }
    Ok(PcaModel {
        mean: column_mean(x),
        components,
        explained_variance: explained,
    })
}

pub fn pca_transform(model: &PcaModel, x: &FeatureMatrix) -> Result<FeatureMatrix> {
    if x.d() != model.mean.len() {
        return Err(Error::Shape(format!(
            "features have d={}, model expects {}",
            x.d(),
            model.mean.len()
        )));
    }
    let centered = x.as_array() - &model.mean.view().insert_axis(Axis(0));
    Ok(FeatureMatrix::from_array_unchecked(centered.dot(&model.components.t())))
}

pub fn frobenius_norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}
