//! Bivariate Gaussian mixture heads: parameter decoding, log-likelihood and
//! temperature-controlled sampling.
//!
//! A raw head row holds `6M` values laid out as
//! `[weight logits | mean_x | mean_y | log std_x | log std_y | atanh-space rho]`,
//! each block `M` wide. Standard deviations are `exp` of their raw values and the
//! correlation is `tanh` of its raw value.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{NnError, Result};
use crate::graph::{logsumexp, Graph, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GmmParams {
    pub weights: Vec<f64>,
    pub mean_x: Vec<f64>,
    pub mean_y: Vec<f64>,
    pub std_x: Vec<f64>,
    pub std_y: Vec<f64>,
    pub rho: Vec<f64>,
}

impl GmmParams {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.weights.len();
        if m == 0 {
            return Err(NnError::Parameter("mixture has no components".into()));
        }
        for v in [
            &self.mean_x,
            &self.mean_y,
            &self.std_x,
            &self.std_y,
            &self.rho,
        ] {
            if v.len() != m {
                return Err(NnError::Parameter(
                    "component vectors differ in length".into(),
                ));
            }
        }
        if self.weights.iter().any(|&w| !(0.0..=1.0).contains(&w)) {
            return Err(NnError::Parameter("weight outside [0, 1]".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(NnError::Parameter(format!("weights sum to {total}, not 1")));
        }
        if self.std_x.iter().chain(&self.std_y).any(|&s| !(s > 0.0)) {
            return Err(NnError::Parameter("non-positive standard deviation".into()));
        }
        if self.rho.iter().any(|&r| !(r > -1.0 && r < 1.0)) {
            return Err(NnError::Parameter("correlation outside (-1, 1)".into()));
        }
        Ok(())
    }

    /// Decodes one raw head row (`6M` values).
    pub fn from_raw(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() || raw.len() % 6 != 0 {
            return Err(NnError::Shape(format!(
                "raw GMM row of length {}",
                raw.len()
            )));
        }
        let m = raw.len() / 6;
        let block = |k: usize| &raw[k * m..(k + 1) * m];
        let lse = logsumexp(block(0));
        Ok(Self {
            weights: block(0).iter().map(|v| (v - lse).exp()).collect(),
            mean_x: block(1).to_vec(),
            mean_y: block(2).to_vec(),
            std_x: block(3).iter().map(|v| v.exp()).collect(),
            std_y: block(4).iter().map(|v| v.exp()).collect(),
            rho: block(5).iter().map(|v| v.tanh()).collect(),
        })
    }

    /// Log density of one bivariate normal component.
    pub fn component_log_density(&self, k: usize, x: f64, y: f64) -> f64 {
        let (sx, sy, r) = (self.std_x[k], self.std_y[k], self.rho[k]);
        let zx = (x - self.mean_x[k]) / sx;
        let zy = (y - self.mean_y[k]) / sy;
        let one_m_r2 = 1.0 - r * r;
        let z = zx * zx + zy * zy - 2.0 * r * zx * zy;
        -(2.0 * PI).ln() - sx.ln() - sy.ln() - 0.5 * one_m_r2.ln() - z / (2.0 * one_m_r2)
    }

    /// `log Σ_k w_k N(x, y | μ_k, Σ_k)`
    pub fn log_likelihood(&self, x: f64, y: f64) -> Result<f64> {
        self.validate()?;
        let terms: Vec<f64> = (0..self.components())
            .map(|k| self.weights[k].ln() + self.component_log_density(k, x, y))
            .collect();
        Ok(logsumexp(&terms))
    }

    pub fn mean(&self) -> (f64, f64) {
        let mx = self
            .weights
            .iter()
            .zip(&self.mean_x)
            .map(|(w, m)| w * m)
            .sum();
        let my = self
            .weights
            .iter()
            .zip(&self.mean_y)
            .map(|(w, m)| w * m)
            .sum();
        (mx, my)
    }

    /// Applies sampling temperature: weights sharpened as `w^(1/τ)` (renormalised),
    /// standard deviations scaled by `√τ`. `τ = 0` is handled by [`GmmParams::sample`].
    pub fn tempered(&self, temperature: f64) -> Self {
        if temperature <= 0.0 || temperature == 1.0 {
            return self.clone();
        }
        let logits: Vec<f64> = self.weights.iter().map(|w| w.ln() / temperature).collect();
        let lse = logsumexp(&logits);
        let s = temperature.sqrt();
        Self {
            weights: logits.iter().map(|l| (l - lse).exp()).collect(),
            std_x: self.std_x.iter().map(|v| v * s).collect(),
            std_y: self.std_y.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }

    /// Draws a component, then a correlated Gaussian offset. At temperature 0 this is the
    /// mean of the heaviest component (lowest index on ties).
    pub fn sample(&self, temperature: f64, rng: &mut impl Rng) -> Result<(f64, f64)> {
        self.validate()?;
        if temperature <= 0.0 {
            let k = crate::tensor::argmax(&self.weights);
            return Ok((self.mean_x[k], self.mean_y[k]));
        }
        let p = self.tempered(temperature);
        let k = sample_categorical(&p.weights, rng);
        let e1: f64 = StandardNormal.sample(rng);
        let e2: f64 = StandardNormal.sample(rng);
        let r = p.rho[k];
        let x = p.mean_x[k] + p.std_x[k] * e1;
        let y = p.mean_y[k] + p.std_y[k] * (r * e1 + (1.0 - r * r).sqrt() * e2);
        Ok((x, y))
    }
}

/// Index drawn from a probability vector (assumed normalised).
pub fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Softmax of `logits / τ`; at `τ = 0` a one-hot on the argmax.
pub fn tempered_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    if temperature <= 0.0 {
        let k = crate::tensor::argmax(logits);
        return (0..logits.len())
            .map(|i| if i == k { 1.0 } else { 0.0 })
            .collect();
    }
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    let lse = logsumexp(&scaled);
    scaled.iter().map(|l| (l - lse).exp()).collect()
}

/// Differentiable negative log-likelihood of targets under raw mixture heads.
///
/// `raw` is `[N, 6M]`, `x` and `y` are `[N, 1]`; returns `[N, 1]`.
pub fn gmm_nll(g: &mut Graph, raw: Var, x: Var, y: Var, components: usize) -> Var {
    let m = components;
    let logits = g.slice_cols(raw, 0, m);
    let mx = g.slice_cols(raw, m, m);
    let my = g.slice_cols(raw, 2 * m, m);
    let log_sx = g.slice_cols(raw, 3 * m, m);
    let log_sy = g.slice_cols(raw, 4 * m, m);
    let rho_raw = g.slice_cols(raw, 5 * m, m);

    let log_w = g.log_softmax_rows(logits);
    let sx = g.exp(log_sx);
    let sy = g.exp(log_sy);
    let rho = g.tanh(rho_raw);

    let xb = g.broadcast_cols(x, m);
    let yb = g.broadcast_cols(y, m);
    let dx = g.sub(xb, mx);
    let dy = g.sub(yb, my);
    let zx = g.div(dx, sx);
    let zy = g.div(dy, sy);
    let zx2 = g.square(zx);
    let zy2 = g.square(zy);
    let cross = g.mul(zx, zy);
    let cross = g.mul(cross, rho);
    let cross = g.scale(cross, -2.0);
    let z = g.add(zx2, zy2);
    let z = g.add(z, cross);

    let r2 = g.square(rho);
    let one_m_r2 = g.neg(r2);
    let one_m_r2 = g.add_scalar(one_m_r2, 1.0);
    let log_one_m_r2 = g.log(one_m_r2);

    // log N = -ln 2π - log sx - log sy - ½ log(1-ρ²) - z / (2(1-ρ²))
    let quad = g.div(z, one_m_r2);
    let quad = g.scale(quad, -0.5);
    let norm = g.add(log_sx, log_sy);
    let half = g.scale(log_one_m_r2, 0.5);
    let norm = g.add(norm, half);
    let log_n = g.sub(quad, norm);
    let log_n = g.add_scalar(log_n, -(2.0 * PI).ln());

    let joint = g.add(log_w, log_n);
    let ll = g.logsumexp_rows(joint);
    g.neg(ll)
}
