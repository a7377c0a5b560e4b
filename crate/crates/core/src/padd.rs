//! Projecting away the domain direction.
//!
//! Each round trains a zero-bias logistic discriminator (labeled rows -> 0,
//! unlabeled target rows -> 1, the two halves weighted 1/2 each, plus an L1
//! penalty) and removes its direction from both sides.

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_io::FeatureMatrix;
use crate::linalg::project_out;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaddConfig {
    pub rounds: usize,
    pub gd_iters: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub l1_lambda: f64,
}

impl Default for PaddConfig {
    fn default() -> Self {
        Self {
            rounds: 30,
            gd_iters: 200,
            learning_rate: 4.0,
            momentum: 0.9,
            l1_lambda: 2e-4,
        }
    }
}

impl PaddConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gd_iters == 0 {
            return Err(Error::Parameter("PADD gd_iters must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Parameter(format!(
                "PADD learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Parameter(format!(
                "PADD momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.l1_lambda >= 0.0) || !self.l1_lambda.is_finite() {
            return Err(Error::Parameter(format!(
                "PADD l1_lambda must be >= 0, got {}",
                self.l1_lambda
            )));
        }
        Ok(())
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Smooth part of the discriminator objective and its gradient.
fn smooth_loss_and_grad(
    w: &Array1<f64>,
    labeled: ArrayView2<'_, f64>,
    unlabeled: ArrayView2<'_, f64>,
) -> (f64, Array1<f64>) {
    let zl = labeled.dot(w);
    let zu = unlabeled.dot(w);
    let half_l = 0.5 / labeled.nrows() as f64;
    let half_u = 0.5 / unlabeled.nrows() as f64;
    // BCE(sigma(z), 0) = softplus(z), BCE(sigma(z), 1) = softplus(-z)
    let loss =
        half_l * zl.iter().map(|&z| softplus(z)).sum::<f64>() + half_u * zu.iter().map(|&z| softplus(-z)).sum::<f64>();
    let coef_l = zl.mapv(|z| half_l * sigmoid(z));
    let coef_u = zu.mapv(|z| half_u * (sigmoid(z) - 1.0));
    let grad = labeled.t().dot(&coef_l) + unlabeled.t().dot(&coef_u);
    (loss, grad)
}

/// Discriminator objective including the L1 term; the gradient uses
/// `sign(w) * l1` with `sign(0) = 0`.
pub fn discriminator_loss_and_grad(
    w: &Array1<f64>,
    labeled: &FeatureMatrix,
    unlabeled: &FeatureMatrix,
    l1_lambda: f64,
) -> Result<(f64, Array1<f64>)> {
    check_dims(w.len(), labeled, unlabeled)?;
    let (loss, mut grad) = smooth_loss_and_grad(w, labeled.view(), unlabeled.view());
    let l1 = l1_lambda * w.iter().map(|v| v.abs()).sum::<f64>();
    grad.zip_mut_with(w, |g, &wi| {
        if wi > 0.0 {
            *g += l1_lambda
        } else if wi < 0.0 {
            *g -= l1_lambda
        }
    });
    Ok((loss + l1, grad))
}

fn check_dims(d: usize, labeled: &FeatureMatrix, unlabeled: &FeatureMatrix) -> Result<()> {
    if labeled.d() != d || unlabeled.d() != d {
        return Err(Error::Shape(format!(
            "discriminator d={d}, labeled d={}, unlabeled d={}",
            labeled.d(),
            unlabeled.d()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub w: Array1<f64>,
    pub losses: Vec<f64>,
    pub final_loss: f64,
}

impl Discriminator {
    /// Mean predicted probability of "unlabeled target" over the rows of `x`.
    pub fn mean_probability(&self, x: &FeatureMatrix) -> f64 {
        x.as_array().dot(&self.w).mapv(sigmoid).mean().unwrap_or(0.5)
    }

    /// Mean of per-domain accuracies when thresholding at probability 1/2.
    pub fn balanced_accuracy(&self, labeled: &FeatureMatrix, unlabeled: &FeatureMatrix) -> f64 {
        let zl = labeled.as_array().dot(&self.w);
        let zu = unlabeled.as_array().dot(&self.w);
        let acc_l = zl.iter().filter(|&&z| z < 0.0).count() as f64 / zl.len() as f64;
        let acc_u = zu.iter().filter(|&&z| z > 0.0).count() as f64 / zu.len() as f64;
        0.5 * (acc_l + acc_u)
    }
}

/// Full-batch Nesterov descent from `w = 0`.
pub fn train_domain_discriminator(
    labeled: &FeatureMatrix,
    unlabeled: &FeatureMatrix,
    cfg: &PaddConfig,
) -> Result<Discriminator> {
    cfg.validate()?;
    let d = labeled.d();
    check_dims(d, labeled, unlabeled)?;
    let mu = cfg.momentum;
    let mut w = Array1::<f64>::zeros(d);
    let mut velocity = Array1::<f64>::zeros(d);
    let mut losses = Vec::with_capacity(cfg.gd_iters);
    for iteration in 0..cfg.gd_iters {
        let look_ahead = &w + &(&velocity * mu);
        let (loss, grad) = discriminator_loss_and_grad(&look_ahead, labeled, unlabeled, cfg.l1_lambda)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { iteration, loss });
        }
        losses.push(loss);
        velocity *= mu;
        velocity.scaled_add(-cfg.learning_rate, &grad);
        w += &velocity;
    }
    let (final_loss, _) = discriminator_loss_and_grad(&w, labeled, unlabeled, cfg.l1_lambda)?;
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            iteration: cfg.gd_iters,
            loss: final_loss,
        });
    }
    Ok(Discriminator { w, losses, final_loss })
}

/// Output of [`padd_align`].
#[derive(Debug, Clone)]
pub struct PaddResult {
    pub source: FeatureMatrix,
    pub target_labeled: Option<FeatureMatrix>,
    pub target_unlabeled: FeatureMatrix,
    /// Discriminator weights in round order, unnormalised.
    pub directions: Vec<Array1<f64>>,
    /// Orthonormal directions actually projected out, in round order.
    pub removed: Vec<Array1<f64>>,
    /// The discriminator of the last round, if any round ran.
    pub last_discriminator: Option<Discriminator>,
}

impl PaddResult {
    /// Replays the recorded projections on other rows.
    pub fn apply(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        replay(x, &self.removed)
    }
}

pub fn replay(x: &FeatureMatrix, removed: &[Array1<f64>]) -> Result<FeatureMatrix> {
    let mut out = x.clone();
    for u in removed {
        out = project_out(&out, u.view())?;
    }
    Ok(out)
}

/// Part of `w` orthogonal to the (orthonormal) `removed` set, normalised;
/// `None` when nothing of `w` is left.
fn fresh_direction(w: &Array1<f64>, removed: &[Array1<f64>]) -> Option<Array1<f64>> {
    let w_norm = w.dot(w).sqrt();
    if !(w_norm > crate::feature_io::DEGENERATE_NORM) {
        return None;
    }
    let mut u = w.clone();
    // two Gram-Schmidt passes keep the removed set orthonormal to rounding
    for _ in 0..2 {
        for r in removed {
            let c = u.dot(r);
            u.scaled_add(-c, r);
        }
    }
    let u_norm = u.dot(&u).sqrt();
    if u_norm <= 1e-12 * w_norm {
        return None;
    }
    Some(u / u_norm)
}

pub fn padd_align(
    source: &FeatureMatrix,
    target_labeled: Option<&FeatureMatrix>,
    target_unlabeled: &FeatureMatrix,
    cfg: &PaddConfig,
) -> Result<PaddResult> {
    cfg.validate()?;
    let mut labeled = match target_labeled {
        Some(tl) => FeatureMatrix::vstack(&[source, tl])?,
        None => source.clone(),
    };
    check_dims(labeled.d(), &labeled, target_unlabeled)?;
    let mut unlabeled = target_unlabeled.clone();
    let mut directions = Vec::with_capacity(cfg.rounds);
    let mut removed: Vec<Array1<f64>> = Vec::with_capacity(cfg.rounds);
    let mut last = None;
    for _ in 0..cfg.rounds {
        let disc = train_domain_discriminator(&labeled, &unlabeled, cfg)?;
        // The rows already lie in the complement of `removed`, so projecting
        // out the fresh part of w makes them orthogonal to w itself while
        // keeping them orthogonal to every earlier direction.
        if let Some(u) = fresh_direction(&disc.w, &removed) {
            labeled = project_out(&labeled, u.view())?;
            unlabeled = project_out(&unlabeled, u.view())?;
            removed.push(u);
        }
        directions.push(disc.w.clone());
        last = Some(disc);
    }
    let n_s = source.n();
    let (source_out, tl_out) = match target_labeled {
        Some(_) => (
            FeatureMatrix::new(labeled.as_array().slice(ndarray::s![..n_s, ..]).to_owned())?,
            Some(FeatureMatrix::new(
                labeled.as_array().slice(ndarray::s![n_s.., ..]).to_owned(),
            )?),
        ),
        None => (labeled, None),
    };
    Ok(PaddResult {
        source: source_out,
        target_labeled: tl_out,
        target_unlabeled: unlabeled,
        directions,
        removed,
        last_discriminator: last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frobenius_norm;
    use ndarray::{array, Array2};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = crate::rng::seeded(seed);
        Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut rng))
    }

    #[test]
    fn identical_sets_are_indistinguishable() {
        let x = FeatureMatrix::new(gaussian(200, 4, 1)).unwrap();
        let disc = train_domain_discriminator(&x, &x, &PaddConfig::default()).unwrap();
        assert!(disc.final_loss >= 2f64.ln() - 1e-6);
    }

    #[test]
    fn separable_sign() {
        let l = FeatureMatrix::new(array![[-1.0], [-1.0]]).unwrap();
        let u = FeatureMatrix::new(array![[1.0], [1.0], [1.0]]).unwrap();
        let disc = train_domain_discriminator(&l, &u, &PaddConfig::default()).unwrap();
        assert!(disc.w[0] > 0.0);
        assert!(disc.mean_probability(&l) < 0.5 && 0.5 < disc.mean_probability(&u));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = crate::rng::seeded(2);
        for trial in 0..20 {
            let l = FeatureMatrix::new(gaussian(20, 5, 10 + trial)).unwrap();
            let u = FeatureMatrix::new(gaussian(20, 5, 50 + trial) + 0.5).unwrap();
            let w: Array1<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, g) = smooth_loss_and_grad(&w, l.view(), u.view());
            let h = 1e-6;
            for j in 0..5 {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[j] += h;
                wm[j] -= h;
                let fd = (smooth_loss_and_grad(&wp, l.view(), u.view()).0
                    - smooth_loss_and_grad(&wm, l.view(), u.view()).0)
                    / (2.0 * h);
                let rel = (fd - g[j]).abs() / g[j].abs().max(1e-8);
                assert!(
                    rel <= 1e-6 || (fd - g[j]).abs() <= 1e-10,
                    "trial {trial} j {j}: {rel:e}"
                );
            }
        }
    }

    #[test]
    fn zero_rounds_is_identity() {
        let s = FeatureMatrix::new(gaussian(10, 3, 3)).unwrap();
        let t = FeatureMatrix::new(gaussian(12, 3, 4)).unwrap();
        let cfg = PaddConfig {
            rounds: 0,
            ..PaddConfig::default()
        };
        let out = padd_align(&s, None, &t, &cfg).unwrap();
        assert_eq!(out.source, s);
        assert_eq!(out.target_unlabeled, t);
        assert!(out.directions.is_empty());
    }

    #[test]
    fn single_axis_shift_is_removed() {
        let mut s = gaussian(300, 2, 5);
        let mut t = gaussian(300, 2, 6);
        s.column_mut(0).mapv_inplace(|v| 0.3 * v - 2.0);
        t.column_mut(0).mapv_inplace(|v| 0.3 * v + 2.0);
        let s = FeatureMatrix::new(s).unwrap();
        let t = FeatureMatrix::new(t).unwrap();
        let cfg = PaddConfig {
            rounds: 1,
            ..PaddConfig::default()
        };
        let out = padd_align(&s, None, &t, &cfg).unwrap();
        let w = &out.directions[0];
        assert!(w[0].abs() > 10.0 * w[1].abs());
        for x in [&out.source, &out.target_unlabeled] {
            assert!(x.as_array().dot(w).iter().all(|v| v.abs() <= 1e-8));
        }
        let again = train_domain_discriminator(&out.source, &out.target_unlabeled, &cfg).unwrap();
        assert!(again.final_loss >= 2f64.ln() - 0.01);
    }

    #[test]
    fn projections_shrink_and_stay_orthogonal() {
        let s = FeatureMatrix::new(gaussian(80, 6, 7) + 0.5).unwrap();
        let tl = FeatureMatrix::new(gaussian(6, 6, 8)).unwrap();
        let t = FeatureMatrix::new(gaussian(90, 6, 9) * 1.5).unwrap();
        let cfg = PaddConfig {
            rounds: 4,
            gd_iters: 50,
            ..PaddConfig::default()
        };
        let out = padd_align(&s, Some(&tl), &t, &cfg).unwrap();
        assert_eq!(out.directions.len(), 4);
        assert_eq!(out.target_labeled.as_ref().unwrap().n(), 6);
        for w in &out.directions {
            let wn = w.dot(w).sqrt();
            for x in [&out.source, out.target_labeled.as_ref().unwrap(), &out.target_unlabeled] {
                for row in x.as_array().rows() {
                    assert!(row.dot(w).abs() <= 1e-8 * wn.max(1.0));
                }
            }
        }
        // rounds are norm non-increasing
        let mut prev = frobenius_norm(t.as_array());
        for r in 1..=4 {
            let cur = replay(&t, &out.removed[..r]).unwrap();
            let norm = frobenius_norm(cur.as_array());
            assert!(norm <= prev + 1e-12);
            prev = norm;
        }
        assert_eq!(out.apply(&t).unwrap(), out.target_unlabeled);

        let again = padd_align(&s, Some(&tl), &t, &cfg).unwrap();
        assert_eq!(again.source, out.source);
    }
}
