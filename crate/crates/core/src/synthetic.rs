//! Seeded Gaussian domain-shift problems with known ground truth.
//!
//! Source rows are drawn from isotropic Gaussian clusters around random
//! unit-norm class means scaled by `separation`. Target rows come from the
//! same class conditionals pushed through `x -> A x + b`, with classes drawn
//! in proportion to a shifted prior.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_io::{make_split, DataBundle, FeatureMatrix, LabelVector, LabeledSet, SplitSpec};
use crate::rng::{self, PaceRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub d: usize,
    pub n_source: usize,
    pub n_target: usize,
    /// Norm of every class mean.
    pub separation: f64,
    /// Per-coordinate standard deviation inside a class.
    pub class_std: f64,
    /// Scale of the skew matrix whose Cayley transform gives the rotation.
    pub rotation: f64,
    /// Largest allowed ratio between singular values of `A`.
    pub condition_cap: f64,
    /// Norm of the shift `b`.
    pub shift: f64,
    /// Target class prior; `None` uses a geometric ramp whose largest class
    /// is `prior_ratio` times as likely as the smallest.
    pub target_prior: Option<Vec<f64>>,
    pub prior_ratio: f64,
    /// Noise scale used by [`perturb_member`] when simulating members.
    pub member_sigma: f64,
    pub shots: usize,
    pub val_per_class: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            d: 32,
            n_source: 2000,
            n_target: 2000,
            separation: 3.5,
            class_std: 1.0,
            rotation: 0.1,
            condition_cap: 5.0,
            shift: 5.0,
            target_prior: None,
            prior_ratio: 4.0,
            member_sigma: 0.5,
            shots: 0,
            val_per_class: 3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_classes < 2 || self.d == 0 {
            return bad(format!(
                "need K >= 2 and d >= 1, got K={} d={}",
                self.num_classes, self.d
            ));
        }
        let positive = [
            ("separation", self.separation),
            ("class_std", self.class_std),
            ("condition_cap", self.condition_cap),
            ("prior_ratio", self.prior_ratio),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.condition_cap < 1.0 {
            return bad(format!("condition_cap must be >= 1, got {}", self.condition_cap));
        }
        for (name, v) in [
            ("rotation", self.rotation),
            ("shift", self.shift),
            ("member_sigma", self.member_sigma),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        let per_class = self.shots + self.val_per_class + 1;
        if self.n_source < self.num_classes * per_class {
            return bad(format!(
                "n_source={} is below K*(shots+val+1)={}",
                self.n_source,
                self.num_classes * per_class
            ));
        }
        let counts = self.target_counts()?;
        if let Some((class, &c)) = counts.iter().enumerate().find(|(_, &c)| c < per_class) {
            return Err(Error::InsufficientSamples {
                class,
                available: c,
                required: per_class,
            });
        }
        Ok(())
    }

    pub fn prior(&self) -> Result<Vec<f64>> {
        match &self.target_prior {
            Some(p) => {
                let sum: f64 = p.iter().sum();
                if p.len() != self.num_classes || p.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "target prior must hold {} nonnegative values summing to 1",
                        self.num_classes
                    )));
                }
                Ok(p.clone())
            }
            None => {
                let k = self.num_classes;
                let raw: Vec<f64> = (0..k)
                    .map(|c| self.prior_ratio.powf(c as f64 / (k - 1) as f64))
                    .collect();
                let sum: f64 = raw.iter().sum();
                Ok(raw.into_iter().map(|v| v / sum).collect())
            }
        }
    }

    /// Per-class target counts by largest-remainder rounding of `n_t * prior`.
    pub fn target_counts(&self) -> Result<Vec<usize>> {
        let prior = self.prior()?;
        let exact: Vec<f64> = prior.iter().map(|p| p * self.n_target as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|v| v.floor() as usize).collect();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let missing = self.n_target - counts.iter().sum::<usize>();
        for &c in order.iter().take(missing) {
            counts[c] += 1;
        }
        Ok(counts)
    }
}

/// A generated problem together with its hidden parameters.
#[derive(Debug, Clone)]
pub struct SynthProblem {
    pub bundle: DataBundle,
    pub class_means: Array2<f64>,
    pub transform: Array2<f64>,
    pub shift: Array1<f64>,
}

fn gaussian_matrix(rng: &mut PaceRng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// Random orthogonal matrix by Gram-Schmidt on Gaussian columns.
fn random_orthogonal(rng: &mut PaceRng, d: usize) -> Array2<f64> {
    let mut q = gaussian_matrix(rng, d, d);
    for j in 0..d {
        for _ in 0..2 {
            for i in 0..j {
                let c = q.column(j).dot(&q.column(i));
                let qi = q.column(i).to_owned();
                q.column_mut(j).scaled_add(-c, &qi);
            }
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        q.column_mut(j).mapv_inplace(|v| v / norm);
    }
    q
}

/// Solves `M X = B` by Gaussian elimination with partial pivoting.
fn solve(mut m: Array2<f64>, mut b: Array2<f64>) -> Array2<f64> {
    let d = m.nrows();
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&a, &c| m[[a, col]].abs().total_cmp(&m[[c, col]].abs()))
            .unwrap_or(col);
        if pivot != col {
            for j in 0..d {
                m.swap([col, j], [pivot, j]);
            }
            for j in 0..b.ncols() {
                b.swap([col, j], [pivot, j]);
            }
        }
        for r in col + 1..d {
            let f = m[[r, col]] / m[[col, col]];
            if f == 0.0 {
                continue;
            }
            for j in col..d {
                m[[r, j]] -= f * m[[col, j]];
            }
            for j in 0..b.ncols() {
                b[[r, j]] -= f * b[[col, j]];
            }
        }
    }
    for col in (0..d).rev() {
        for j in 0..b.ncols() {
            let mut v = b[[col, j]];
            for k in col + 1..d {
                v -= m[[col, k]] * b[[k, j]];
            }
            b[[col, j]] = v / m[[col, col]];
        }
    }
    b
}

/// `A = R S`: `R` is the Cayley transform of a random skew matrix and `S` a
/// symmetric positive definite scaling with condition number at most `cap`.
fn domain_transform(rng: &mut PaceRng, d: usize, rotation: f64, cap: f64) -> Array2<f64> {
    let g = gaussian_matrix(rng, d, d);
    let skew = (&g - &g.t()) * (rotation / (2.0 * (d as f64).sqrt()));
    let eye = Array2::<f64>::eye(d);
    // (I - K)^{-1} (I + K) is orthogonal for skew K
    let r = solve(&eye - &skew, &eye + &skew);
    if cap == 1.0 {
        return r;
    }
    let q = random_orthogonal(rng, d);
    let half = cap.ln() / 2.0;
    let scales: Vec<f64> = (0..d)
        .map(|i| {
            // pin both ends so the cap is attained exactly
            let t = match i {
                0 => -half,
                1 => half,
                _ => rng.random_range(-half..=half),
            };
            t.exp()
        })
        .collect();
    let mut qs = q.clone();
    for (j, s) in scales.iter().enumerate() {
        qs.column_mut(j).mapv_inplace(|v| v * s);
    }
    let s = qs.dot(&q.t());
    r.dot(&s)
}

fn sample_rows(rng: &mut PaceRng, labels: &[u32], means: &Array2<f64>, std: f64) -> Array2<f64> {
    let d = means.ncols();
    let mut x = gaussian_matrix(rng, labels.len(), d) * std;
    for (mut row, &l) in x.rows_mut().into_iter().zip(labels) {
        row += &means.row(l as usize);
    }
    x
}

pub fn generate_problem(cfg: &SynthConfig) -> Result<SynthProblem> {
    cfg.validate()?;
    let (k, d) = (cfg.num_classes, cfg.d);
    let mut gen = rng::seeded(cfg.seed);

    let mut means = gaussian_matrix(&mut gen, k, d);
    for mut row in means.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row.mapv_inplace(|v| v / norm * cfg.separation);
    }
    let a = domain_transform(&mut gen, d, cfg.rotation, cfg.condition_cap);
    let b: Array1<f64> = {
        let g: Array1<f64> = (0..d).map(|_| StandardNormal.sample(&mut gen)).collect();
        let norm = g.dot(&g).sqrt();
        g * (cfg.shift / norm)
    };

    let source_labels: Vec<u32> = (0..cfg.n_source).map(|i| (i % k) as u32).collect();
    let xs = sample_rows(&mut gen, &source_labels, &means, cfg.class_std);

    let mut target_labels: Vec<u32> = cfg
        .target_counts()?
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c as u32, n))
        .collect();
    rng::shuffle(&mut gen, &mut target_labels);
    let raw = sample_rows(&mut gen, &target_labels, &means, cfg.class_std);
    let xt = raw.dot(&a.t()) + b.view().insert_axis(Axis(0));

    let source = LabeledSet::new(FeatureMatrix::new(xs)?, LabelVector::new(source_labels, k)?)?;
    let target = LabeledSet::new(FeatureMatrix::new(xt)?, LabelVector::new(target_labels, k)?)?;
    let spec = SplitSpec {
        shots: cfg.shots,
        val_per_class: cfg.val_per_class,
        seed: cfg.seed,
    };
    let split = make_split(&target.features, &target.labels, &spec)?;
    let unlabeled = target.select(&split.unlabeled)?;
    let labeled = (cfg.shots > 0).then(|| target.select(&split.labeled)).transpose()?;
    let validation = (cfg.val_per_class > 0)
        .then(|| target.select(&split.validation))
        .transpose()?;
    let bundle = DataBundle::new(source, labeled, unlabeled.features, validation, Some(unlabeled.labels))?;
    Ok(SynthProblem {
        bundle,
        class_means: means,
        transform: a,
        shift: b,
    })
}

/// Generates the bundle of a seeded problem; deterministic in `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<DataBundle> {
    Ok(generate_problem(cfg)?.bundle)
}

/// Adds independent `N(0, sigma^2)` noise to every feature matrix of the
/// bundle (source, labeled target, validation, unlabeled target, in that
/// order). Labels are left untouched.
pub fn perturb_member(bundle: &DataBundle, sigma: f64, member_seed: u64) -> Result<DataBundle> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Parameter(format!("member sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(bundle.clone());
    }
    let mut gen = rng::seeded(member_seed);
    bundle.map_features(|x| {
        let noise = gaussian_matrix(&mut gen, x.n(), x.d()) * sigma;
        FeatureMatrix::new(x.as_array() + &noise)
    })
}
