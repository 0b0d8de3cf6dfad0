//! Perturbation-based local surrogate explanations.
//!
//! Around a sample `x`, each position is independently either kept or
//! changed (resampled for tabular features, dropped for tokens). A
//! weighted ridge regression of the model's target-label probability on
//! the keep indicators gives one coefficient per position; the explanation
//! orders positions by coefficient magnitude.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::encoded_dim;
use crate::error::{Error, Result};
use crate::model::{argmax, Predictor};
use crate::types::{Explanation, FeatureKind, FeatureSchema, Sample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainerConfig {
    pub n_perturb: usize,
    /// Defaults to `0.75 * sqrt(d)` with `d` the encoded dimension
    /// (token count for text).
    pub kernel_width: Option<f64>,
    pub ridge_lambda: f64,
    pub rng_seed: u64,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        ExplainerConfig { n_perturb: 1000, kernel_width: None, ridge_lambda: 1.0, rng_seed: 0 }
    }
}

impl ExplainerConfig {
    pub fn kernel_width_for(&self, schema: &FeatureSchema, x: &Sample) -> f64 {
        self.kernel_width.unwrap_or_else(|| {
            let d = if schema.is_text() { x.len() } else { encoded_dim(schema) };
            0.75 * (d.max(1) as f64).sqrt()
        })
    }

    fn check(&self) -> Result<()> {
        if self.n_perturb == 0 {
            return Err(Error::InvalidConfig("n_perturb must be > 0".into()));
        }
        if matches!(self.kernel_width, Some(w) if !(w > 0.0)) {
            return Err(Error::InvalidConfig("kernel_width must be > 0".into()));
        }
        if !(self.ridge_lambda >= 0.0) {
            return Err(Error::InvalidConfig("ridge_lambda must be >= 0".into()));
        }
        Ok(())
    }
}

/// One perturbed neighbour of the explained sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighbor {
    pub sample: Sample,
    /// `kept[i]` is true when position `i` still holds the original value.
    pub kept: Vec<bool>,
    pub weight: f64,
}

/// Similarity kernel over the fraction of changed positions.
pub fn kernel_weight(changed_fraction: f64, kernel_width: f64) -> f64 {
    (-(changed_fraction * changed_fraction) / (kernel_width * kernel_width)).exp()
}

/// Deterministic RNG for explanation stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `n_perturb` neighbours; the first is `x` itself.
pub fn perturb_neighborhood<R: Rng>(
    x: &Sample,
    schema: &FeatureSchema,
    kernel_width: f64,
    n_perturb: usize,
    rng: &mut R,
) -> Vec<Neighbor> {
    let d = x.len();
    let mut out = Vec::with_capacity(n_perturb);
    if n_perturb == 0 {
        return out;
    }
    out.push(Neighbor { sample: x.clone(), kept: vec![true; d], weight: 1.0 });
    for _ in 1..n_perturb {
        let mut kept = vec![true; d];
        let sample = if schema.is_text() {
            let mut values = Vec::with_capacity(d);
            for (i, v) in x.values.iter().enumerate() {
                if rng.gen_bool(0.5) {
                    kept[i] = false;
                } else {
                    values.push(v.clone());
                }
            }
            Sample { values, origin: x.origin, seed_id: x.seed_id }
        } else {
            let mut s = x.clone();
            for (i, f) in schema.features().iter().enumerate() {
                if !rng.gen_bool(0.5) {
                    continue;
                }
                let n = match &f.kind {
                    FeatureKind::Token => continue,
                    kind => kind.cardinality().unwrap_or(1),
                };
                let v = f.kind.nth_value(rng.gen_range(0..n)).expect("index within cardinality");
                kept[i] = v == x.values[i];
                s.values[i] = v;
            }
            s
        };
        let changed = kept.iter().filter(|k| !**k).count() as f64 / d.max(1) as f64;
        out.push(Neighbor { sample, kept, weight: kernel_weight(changed, kernel_width) });
    }
    out
}

/// Weighted ridge fit with an unpenalised intercept on standardized
/// columns. Returns one coefficient per column of `design`, in the
/// original 0/1 units.
pub fn weighted_ridge(design: &[Vec<bool>], y: &[f64], w: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let n = design.len();
    let d = design.first().map_or(0, Vec::len);
    if n == 0 || d == 0 {
        return Ok(vec![0.0; d]);
    }
    let wsum: f64 = w.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::SingularFit);
    }
    if y.iter().all(|&v| v == y[0]) && lambda > 0.0 {
        return Ok(vec![0.0; d]);
    }
    let mut zbar = vec![0.0; d];
    let mut ybar = 0.0;
    for ((row, &yi), &wi) in design.iter().zip(y).zip(w) {
        for (m, &k) in zbar.iter_mut().zip(row) {
            if k {
                *m += wi;
            }
        }
        ybar += wi * yi;
    }
    zbar.iter_mut().for_each(|m| *m /= wsum);
    ybar /= wsum;

    let mut gram = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    let mut centered = vec![0.0; d];
    for ((row, &yi), &wi) in design.iter().zip(y).zip(w) {
        for j in 0..d {
            centered[j] = f64::from(u8::from(row[j])) - zbar[j];
        }
        let yc = yi - ybar;
        for j in 0..d {
            let cj = wi * centered[j];
            rhs[j] += cj * yc;
            for k in j..d {
                gram[(j, k)] += cj * centered[k];
            }
        }
    }
    for j in 0..d {
        for k in 0..j {
            gram[(j, k)] = gram[(k, j)];
        }
    }
    // Penalise standardized columns so shrinkage does not depend on how
    // often a position happens to stay unchanged.
    let scale: Vec<f64> = (0..d).map(|j| (gram[(j, j)] / wsum).sqrt()).collect();
    for j in 0..d {
        if scale[j] > 0.0 {
            rhs[j] /= scale[j];
            for k in 0..d {
                if scale[k] > 0.0 {
                    gram[(j, k)] /= scale[j] * scale[k];
                }
            }
        } else if lambda > 0.0 {
            // constant column: no information, coefficient stays zero
            gram[(j, j)] = 1.0;
            rhs[j] = 0.0;
        }
        gram[(j, j)] += lambda;
    }
    let chol = gram.cholesky().ok_or(Error::SingularFit)?;
    let gamma = chol.solve(&rhs);
    let beta: Vec<f64> = gamma.iter().zip(&scale).map(|(g, s)| if *s > 0.0 { g / s } else { 0.0 }).collect();
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::SingularFit);
    }
    Ok(beta)
}

/// Explains `f`'s probability of `target_label` at `x`.
pub fn fit_surrogate<P: Predictor + ?Sized>(
    x: &Sample,
    f: &P,
    target_label: usize,
    schema: &FeatureSchema,
    config: &ExplainerConfig,
    stream: u64,
) -> Result<Explanation> {
    config.check()?;
    if target_label >= f.labels().len() {
        return Err(Error::InvalidConfig(format!("label index {target_label} out of range")));
    }
    let mut rng = stream_rng(config.rng_seed, stream);
    let width = config.kernel_width_for(schema, x);
    let neighbors = perturb_neighborhood(x, schema, width, config.n_perturb, &mut rng);
    let mut y = Vec::with_capacity(neighbors.len());
    for nb in &neighbors {
        y.push(f.predict_proba(&nb.sample)?[target_label]);
    }
    let design: Vec<Vec<bool>> = neighbors.iter().map(|n| n.kept.clone()).collect();
    let w: Vec<f64> = neighbors.iter().map(|n| n.weight).collect();
    let beta = weighted_ridge(&design, &y, &w, config.ridge_lambda)?;
    Ok(Explanation::from_scores(beta.into_iter().enumerate()))
}

/// Explains the model's own predicted label for `x`; returns that label too.
pub fn explain_prediction<P: Predictor + ?Sized>(
    x: &Sample,
    f: &P,
    schema: &FeatureSchema,
    config: &ExplainerConfig,
    stream: u64,
) -> Result<(usize, Explanation)> {
    let label = argmax(&f.predict_proba(x)?);
    Ok((label, fit_surrogate(x, f, label, schema, config, stream)?))
}

/// 1-based rank of `position` in `e`.
pub fn rank_num(position: usize, e: &Explanation) -> Result<usize> {
    e.rank_of(position).ok_or(Error::NotInExplanation { position })
}
