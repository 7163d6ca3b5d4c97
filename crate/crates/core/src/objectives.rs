//! Training objectives over paired observations: the paired ELBO, the
//! GroupVAE KL regularizer, and the MLVAE, GVAE and β-VAE baselines.
//!
//! Every loss is a batch mean of per-pair terms, in nats, and is returned
//! as a [`LossBreakdown`]. [`loss_and_grad`] additionally backpropagates
//! through the decoder, the reparameterized samples, the posterior
//! combination used by MLVAE/GVAE and the encoder.
//!
//! Single-sample Monte Carlo is used for all expectations; the caller owns
//! the noise through [`Noise`], which makes every loss a deterministic
//! function of `(model, batch, noise)`.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::PairedBatch;
use crate::distributions::{
    average_elem, average_elem_grad, clamp_grad, clamp_log_var, kl_categorical, kl_gaussian,
    kl_gaussian_elem, kl_gaussian_elem_grad, kl_std_elem, kl_std_elem_grad, product_elem,
    product_elem_grad,
};
use crate::error::{Error, Result};
use crate::model::{
    neg_log_likelihood_grad, GroupPosterior, GroupedPosterior, Gradients, LatentKind, ModelParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    /// Two independent ELBOs, no coupling between `x` and `x'`.
    PairedElbo,
    /// Paired ELBO plus `gamma · KL(q(z_g|x) || q(z'_g|x'))` on the shared group.
    GroupVae {
        gamma: f64,
        /// Use `0.5 (KL(q||q') + KL(q'||q))` instead of the one-directional KL.
        #[serde(default)]
        symmetric: bool,
    },
    /// Shared-group posterior is the normalized product of the pair's posteriors.
    MlVae { beta: f64 },
    /// Shared-group posterior is the parameter average of the pair's posteriors.
    GVae { beta: f64 },
    /// Single-observation ELBO with a `beta`-scaled prior KL.
    BetaVae { beta: f64 },
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::PairedElbo => "paired_elbo",
            Objective::GroupVae { .. } => "groupvae",
            Objective::MlVae { .. } => "mlvae",
            Objective::GVae { .. } => "gvae",
            Objective::BetaVae { .. } => "betavae",
        }
    }

    /// The regularization hyperparameter (γ or β); 0 for the paired ELBO.
    pub fn strength(&self) -> f64 {
        match *self {
            Objective::PairedElbo => 0.0,
            Objective::GroupVae { gamma, .. } => gamma,
            Objective::MlVae { beta } | Objective::GVae { beta } | Objective::BetaVae { beta } => beta,
        }
    }

    /// Same objective family with a different strength.
    pub fn with_strength(&self, s: f64) -> Objective {
        match *self {
            Objective::PairedElbo => Objective::PairedElbo,
            Objective::GroupVae { symmetric, .. } => Objective::GroupVae { gamma: s, symmetric },
            Objective::MlVae { .. } => Objective::MlVae { beta: s },
            Objective::GVae { .. } => Objective::GVae { beta: s },
            Objective::BetaVae { .. } => Objective::BetaVae { beta: s },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.strength();
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::param(format!(
                "{} strength must be a finite non-negative number, got {s}",
                self.name()
            )));
        }
        Ok(())
    }

    fn prior_weight(&self) -> f64 {
        match *self {
            Objective::PairedElbo | Objective::GroupVae { .. } => 1.0,
            Objective::MlVae { beta } | Objective::GVae { beta } | Objective::BetaVae { beta } => beta,
        }
    }

    fn reg_weight(&self) -> f64 {
        match *self {
            Objective::GroupVae { gamma, .. } => gamma,
            _ => 0.0,
        }
    }

    fn combine(&self) -> Combine {
        match self {
            Objective::MlVae { .. } => Combine::Product,
            Objective::GVae { .. } => Combine::Average,
            _ => Combine::None,
        }
    }

    fn paired(&self) -> bool {
        !matches!(self, Objective::BetaVae { .. })
    }

    fn needs_groups(&self) -> bool {
        matches!(
            self,
            Objective::GroupVae { .. } | Objective::MlVae { .. } | Objective::GVae { .. }
        )
    }

    /// Recomputes the total from the individual terms.
    pub fn compose(&self, b: &LossBreakdown) -> f64 {
        b.recon_x
            + b.recon_x_prime
            + self.prior_weight() * (b.kl_prior_x + b.kl_prior_x_prime)
            + self.reg_weight() * b.kl_reg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Combine {
    None,
    Product,
    Average,
}

/// Batch-mean loss terms, in nats. `recon_*` are negative log-likelihoods.
/// For MLVAE/GVAE the `kl_prior_*` terms use the combined posteriors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon_x: f64,
    pub recon_x_prime: f64,
    pub kl_prior_x: f64,
    pub kl_prior_x_prime: f64,
    pub kl_reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.recon_x,
            self.recon_x_prime,
            self.kl_prior_x,
            self.kl_prior_x_prime,
            self.kl_reg,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    /// The paired-ELBO part: reconstructions plus unweighted prior KLs.
    pub fn paired_part(&self) -> f64 {
        self.recon_x + self.recon_x_prime + self.kl_prior_x + self.kl_prior_x_prime
    }
}

/// Reparameterization noise for one batch: standard normals for Gaussian
/// dimensions and uniforms in (0, 1) for Gumbel-Softmax dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise {
    pub eps_x: Array2<f64>,
    pub eps_x_prime: Array2<f64>,
    pub u_x: Array2<f64>,
    pub u_x_prime: Array2<f64>,
}

impl Noise {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, batch: usize, latent_dim: usize) -> Self {
        let mut normal = |_| rng.sample::<f64, _>(StandardNormal);
        let eps_x = Array2::from_shape_fn((batch, latent_dim), &mut normal);
        let eps_x_prime = Array2::from_shape_fn((batch, latent_dim), &mut normal);
        let mut uniform = |_| rng.random_range(f64::EPSILON..1.0);
        let u_x = Array2::from_shape_fn((batch, latent_dim), &mut uniform);
        let u_x_prime = Array2::from_shape_fn((batch, latent_dim), &mut uniform);
        Noise {
            eps_x,
            eps_x_prime,
            u_x,
            u_x_prime,
        }
    }

    /// Zero Gaussian noise (samples equal means) and uniforms at 0.5.
    pub fn zeros(batch: usize, latent_dim: usize) -> Self {
        Noise {
            eps_x: Array2::zeros((batch, latent_dim)),
            eps_x_prime: Array2::zeros((batch, latent_dim)),
            u_x: Array2::from_elem((batch, latent_dim), 0.5),
            u_x_prime: Array2::from_elem((batch, latent_dim), 0.5),
        }
    }

    fn check(&self, batch: usize, latent_dim: usize) -> Result<()> {
        for m in [&self.eps_x, &self.eps_x_prime, &self.u_x, &self.u_x_prime] {
            if m.dim() != (batch, latent_dim) {
                return Err(Error::Dimension {
                    context: "noise shape",
                    expected: batch * latent_dim,
                    actual: m.len(),
                });
            }
        }
        Ok(())
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

fn gumbel_softmax_from_logits(logits: &[f64], u: &[f64], temperature: f64) -> Vec<f64> {
    let scores: Vec<f64> = logits
        .iter()
        .zip(u)
        .map(|(&l, &u)| (l + crate::distributions::gumbel(u)) / temperature)
        .collect();
    crate::distributions::softmax(&scores)
}

/// `KL(p || p')` from log-probabilities, with gradients w.r.t. the logits
/// of both sides.
fn categorical_kl_with_grad(lp: &[f64], lq: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let p: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
    let q: Vec<f64> = lq.iter().map(|v| v.exp()).collect();
    let kl: f64 = p.iter().zip(lp).zip(lq).map(|((p, a), b)| p * (a - b)).sum();
    let gp = (0..p.len()).map(|j| p[j] * (lp[j] - lq[j] - kl)).collect();
    let gq = (0..p.len()).map(|j| q[j] - p[j]).collect();
    (kl, gp, gq)
}

/// Encoder side of one evaluation.
struct Side {
    head: Array2<f64>,
    cache: crate::model::MlpCache,
}

struct Eval<'a> {
    model: &'a ModelParams,
    objective: Objective,
    x: &'a Array2<f64>,
    x_prime: Option<&'a Array2<f64>>,
    shared: &'a [usize],
    noise: &'a Noise,
}

impl<'a> Eval<'a> {
    fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        let m = self.model;
        let b = self.x.nrows();
        m.check_obs(self.x)?;
        if let Some(xp) = self.x_prime {
            m.check_obs(xp)?;
            if xp.nrows() != b {
                return Err(Error::Dimension {
                    context: "x_prime batch",
                    expected: b,
                    actual: xp.nrows(),
                });
            }
        } else if self.objective.paired() {
            return Err(Error::param("paired objective requires x_prime"));
        }
        if self.objective.needs_groups() {
            if self.shared.len() != b {
                return Err(Error::Dimension {
                    context: "shared_group length",
                    expected: b,
                    actual: self.shared.len(),
                });
            }
            let ng = m.partition.num_groups();
            if let Some(g) = self.shared.iter().find(|&&g| g >= ng) {
                return Err(Error::param(format!("shared group {g} out of range (< {ng})")));
            }
        }
        if self.objective.combine() != Combine::None && m.partition.has_categorical() {
            return Err(Error::param(format!(
                "{} does not support categorical latent groups",
                self.objective.name()
            )));
        }
        self.noise.check(b, m.latent_dim())
    }

    fn run(&self, want_grad: bool) -> Result<(LossBreakdown, Option<Gradients>)> {
        self.validate()?;
        let m = self.model;
        let obj = self.objective;
        let part = &m.partition;
        let b = self.x.nrows();
        let bf = b as f64;
        let ld = m.latent_dim();
        let tau = m.temperature;
        let combine = obj.combine();
        let (pw, rw) = (obj.prior_weight(), obj.reg_weight());
        let symmetric = matches!(obj, Objective::GroupVae { symmetric: true, .. });

        let encode = |x: &Array2<f64>| {
            let (head, cache) = m.encoder.forward(x);
            Side { head, cache }
        };
        let sx = encode(self.x);
        let sxp = self.x_prime.map(encode);

        // Effective posterior parameters (Gaussian dims) and samples.
        let mut mx = Array2::zeros((b, ld));
        let mut lx = Array2::zeros((b, ld));
        let mut mxp = Array2::zeros((b, ld));
        let mut lxp = Array2::zeros((b, ld));
        let mut zx = Array2::zeros((b, ld));
        let mut zxp = Array2::zeros((b, ld));
        let (mut kl_x, mut kl_xp, mut kl_reg) = (0.0, 0.0, 0.0);

        for i in 0..b {
            for (g, slot) in part.slots().iter().enumerate() {
                let o = part.head_offset(g);
                let shared_here = obj.needs_groups() && self.shared[i] == g;
                match slot.kind {
                    LatentKind::Gaussian => {
                        for k in 0..slot.len {
                            let c = slot.start + k;
                            let (ma, la) = (sx.head[[i, o + k]], sx.head[[i, o + slot.len + k]]);
                            let (qa, qb) = match &sxp {
                                Some(sp) => {
                                    let (mb, lb) =
                                        (sp.head[[i, o + k]], sp.head[[i, o + slot.len + k]]);
                                    if shared_here && rw > 0.0 {
                                        kl_reg += if symmetric {
                                            0.5 * (kl_gaussian_elem(ma, la, mb, lb)
                                                + kl_gaussian_elem(mb, lb, ma, la))
                                        } else {
                                            kl_gaussian_elem(ma, la, mb, lb)
                                        };
                                    }
                                    if shared_here && combine != Combine::None {
                                        let q = match combine {
                                            Combine::Product => product_elem(ma, la, mb, lb),
                                            _ => average_elem(ma, la, mb, lb),
                                        };
                                        (q, q)
                                    } else {
                                        ((ma, la), (mb, lb))
                                    }
                                }
                                None => ((ma, la), (0.0, 0.0)),
                            };
                            mx[[i, c]] = qa.0;
                            lx[[i, c]] = qa.1;
                            zx[[i, c]] =
                                qa.0 + (0.5 * clamp_log_var(qa.1)).exp() * self.noise.eps_x[[i, c]];
                            kl_x += kl_std_elem(qa.0, qa.1);
                            if sxp.is_some() {
                                // MLVAE/GVAE draw the shared slice once for both reconstructions.
                                let eps = if shared_here && combine != Combine::None {
                                    self.noise.eps_x[[i, c]]
                                } else {
                                    self.noise.eps_x_prime[[i, c]]
                                };
                                mxp[[i, c]] = qb.0;
                                lxp[[i, c]] = qb.1;
                                zxp[[i, c]] = qb.0 + (0.5 * clamp_log_var(qb.1)).exp() * eps;
                                kl_xp += kl_std_elem(qb.0, qb.1);
                            }
                        }
                    }
                    LatentKind::Categorical => {
                        let r = o..o + slot.len;
                        let lg_x: Vec<f64> = sx.head.row(i).slice(ndarray::s![r.clone()]).to_vec();
                        let lp_x = log_softmax(&lg_x);
                        let ln_k = (slot.len as f64).ln();
                        kl_x += lp_x.iter().map(|&l| l.exp() * (l + ln_k)).sum::<f64>();
                        let ux = self.noise.u_x.row(i).slice(ndarray::s![slot.range()]).to_vec();
                        let y = gumbel_softmax_from_logits(&lg_x, &ux, tau);
                        for k in 0..slot.len {
                            zx[[i, slot.start + k]] = y[k];
                        }
                        if let Some(sp) = &sxp {
                            let lg_p: Vec<f64> = sp.head.row(i).slice(ndarray::s![r]).to_vec();
                            let lp_p = log_softmax(&lg_p);
                            kl_xp += lp_p.iter().map(|&l| l.exp() * (l + ln_k)).sum::<f64>();
                            let up = self.noise.u_x_prime.row(i).slice(ndarray::s![slot.range()]).to_vec();
                            let y = gumbel_softmax_from_logits(&lg_p, &up, tau);
                            for k in 0..slot.len {
                                zxp[[i, slot.start + k]] = y[k];
                            }
                            if shared_here && rw > 0.0 {
                                let fwd = categorical_kl_with_grad(&lp_x, &lp_p).0;
                                kl_reg += if symmetric {
                                    0.5 * (fwd + categorical_kl_with_grad(&lp_p, &lp_x).0)
                                } else {
                                    fwd
                                };
                            }
                        }
                    }
                }
            }
        }

        let (out_x, dec_cache_x) = m.decoder.forward(&zx);
        let recon_x = -crate::model::log_likelihood(m.likelihood, &out_x, self.x)
            .iter()
            .sum::<f64>()
            / bf;
        let dec_xp = self.x_prime.map(|xp| {
            let (out, cache) = m.decoder.forward(&zxp);
            let r = -crate::model::log_likelihood(m.likelihood, &out, xp).iter().sum::<f64>() / bf;
            (out, cache, r)
        });

        let mut lb = LossBreakdown {
            recon_x,
            recon_x_prime: dec_xp.as_ref().map_or(0.0, |d| d.2),
            kl_prior_x: kl_x / bf,
            kl_prior_x_prime: kl_xp / bf,
            kl_reg: kl_reg / bf,
            total: 0.0,
        };
        lb.total = obj.compose(&lb);
        if !want_grad {
            return Ok((lb, None));
        }

        // Backward.
        let mut grads = Gradients::zeros_like(m);
        let mut add_decoder = |g: Vec<crate::model::Dense>| {
            for (a, d) in grads.decoder.iter_mut().zip(g) {
                a.w += &d.w;
                a.b += &d.b;
            }
        };
        let go = neg_log_likelihood_grad(m.likelihood, &out_x, self.x) / bf;
        let (gd, dzx) = m.decoder.backward(&dec_cache_x, &go);
        add_decoder(gd);
        let dzxp = match (&dec_xp, self.x_prime) {
            (Some((out, cache, _)), Some(xp)) => {
                let go = neg_log_likelihood_grad(m.likelihood, out, xp) / bf;
                let (gd, dz) = m.decoder.backward(cache, &go);
                add_decoder(gd);
                Some(dz)
            }
            _ => None,
        };

        let mut dhx = Array2::zeros(sx.head.dim());
        let mut dhxp = sxp.as_ref().map(|s| Array2::<f64>::zeros(s.head.dim()));
        let (wp, wr) = (pw / bf, rw / bf);

        for i in 0..b {
            for (g, slot) in part.slots().iter().enumerate() {
                let o = part.head_offset(g);
                let shared_here = obj.needs_groups() && self.shared[i] == g;
                match slot.kind {
                    LatentKind::Gaussian => {
                        for k in 0..slot.len {
                            let c = slot.start + k;
                            let (ci_m, ci_l) = (o + k, o + slot.len + k);
                            // Gradient w.r.t. effective (mean, log_var) of the x side.
                            let eff = |mean: f64, lv: f64, dz: f64, eps: f64| {
                                let kg = kl_std_elem_grad(mean, lv);
                                let std = (0.5 * clamp_log_var(lv)).exp();
                                (
                                    dz + wp * kg[0],
                                    dz * 0.5 * std * eps * clamp_grad(lv) + wp * kg[1],
                                )
                            };
                            let ga = eff(mx[[i, c]], lx[[i, c]], dzx[[i, c]], self.noise.eps_x[[i, c]]);
                            let (Some(sp), Some(dzp), Some(dhp)) = (&sxp, &dzxp, dhxp.as_mut()) else {
                                dhx[[i, ci_m]] += ga.0;
                                dhx[[i, ci_l]] += ga.1;
                                continue;
                            };
                            let combined = shared_here && combine != Combine::None;
                            let eps_b = if combined {
                                self.noise.eps_x[[i, c]]
                            } else {
                                self.noise.eps_x_prime[[i, c]]
                            };
                            let gb = eff(mxp[[i, c]], lxp[[i, c]], dzp[[i, c]], eps_b);
                            let (ma, la) = (sx.head[[i, ci_m]], sx.head[[i, ci_l]]);
                            let (mb, lb_) = (sp.head[[i, ci_m]], sp.head[[i, ci_l]]);
                            if combined {
                                let (gm, gl) = (ga.0 + gb.0, ga.1 + gb.1);
                                let j = match combine {
                                    Combine::Product => product_elem_grad(ma, la, mb, lb_),
                                    _ => average_elem_grad(ma, la, mb, lb_),
                                };
                                dhx[[i, ci_m]] += gm * j[0][0] + gl * j[1][0];
                                dhx[[i, ci_l]] += gm * j[0][1] + gl * j[1][1];
                                dhp[[i, ci_m]] += gm * j[0][2] + gl * j[1][2];
                                dhp[[i, ci_l]] += gm * j[0][3] + gl * j[1][3];
                            } else {
                                dhx[[i, ci_m]] += ga.0;
                                dhx[[i, ci_l]] += ga.1;
                                dhp[[i, ci_m]] += gb.0;
                                dhp[[i, ci_l]] += gb.1;
                            }
                            if shared_here && rw > 0.0 {
                                let kg = if symmetric {
                                    let f = kl_gaussian_elem_grad(ma, la, mb, lb_);
                                    let r = kl_gaussian_elem_grad(mb, lb_, ma, la);
                                    [
                                        0.5 * (f[0] + r[2]),
                                        0.5 * (f[1] + r[3]),
                                        0.5 * (f[2] + r[0]),
                                        0.5 * (f[3] + r[1]),
                                    ]
                                } else {
                                    kl_gaussian_elem_grad(ma, la, mb, lb_)
                                };
                                dhx[[i, ci_m]] += wr * kg[0];
                                dhx[[i, ci_l]] += wr * kg[1];
                                dhp[[i, ci_m]] += wr * kg[2];
                                dhp[[i, ci_l]] += wr * kg[3];
                            }
                        }
                    }
                    LatentKind::Categorical => {
                        let ln_k = (slot.len as f64).ln();
                        let side_grad = |head: &Array2<f64>, dz: &Array2<f64>, zs: &Array2<f64>| {
                            let lg: Vec<f64> = head.row(i).slice(ndarray::s![o..o + slot.len]).to_vec();
                            let lp = log_softmax(&lg);
                            let p: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
                            let kl: f64 = p.iter().zip(&lp).map(|(p, l)| p * (l + ln_k)).sum();
                            let y: Vec<f64> = (0..slot.len).map(|k| zs[[i, slot.start + k]]).collect();
                            let gy: Vec<f64> = (0..slot.len).map(|k| dz[[i, slot.start + k]]).collect();
                            let dot: f64 = y.iter().zip(&gy).map(|(a, b)| a * b).sum();
                            let g: Vec<f64> = (0..slot.len)
                                .map(|k| y[k] * (gy[k] - dot) / tau + wp * p[k] * (lp[k] + ln_k - kl))
                                .collect();
                            (g, lp)
                        };
                        let (ga, lpa) = side_grad(&sx.head, &dzx, &zx);
                        for k in 0..slot.len {
                            dhx[[i, o + k]] += ga[k];
                        }
                        if let (Some(sp), Some(dzp), Some(dhp)) = (&sxp, &dzxp, dhxp.as_mut()) {
                            let (gb, lpb) = side_grad(&sp.head, dzp, &zxp);
                            for k in 0..slot.len {
                                dhp[[i, o + k]] += gb[k];
                            }
                            if shared_here && rw > 0.0 {
                                let (_, fa, fb) = categorical_kl_with_grad(&lpa, &lpb);
                                let (ra, rb) = if symmetric {
                                    let (_, rb, ra) = categorical_kl_with_grad(&lpb, &lpa);
                                    (ra, rb)
                                } else {
                                    (vec![0.0; slot.len], vec![0.0; slot.len])
                                };
                                let s = if symmetric { 0.5 } else { 1.0 };
                                for k in 0..slot.len {
                                    dhx[[i, o + k]] += wr * s * (fa[k] + ra[k]);
                                    dhp[[i, o + k]] += wr * s * (fb[k] + rb[k]);
                                }
                            }
                        }
                    }
                }
            }
        }

        let (ge, _) = m.encoder.backward(&sx.cache, &dhx);
        grads.add_encoder(ge);
        if let (Some(sp), Some(dhp)) = (&sxp, &dhxp) {
            let (ge, _) = m.encoder.backward(&sp.cache, dhp);
            grads.add_encoder(ge);
        }
        Ok((lb, Some(grads)))
    }
}

fn evaluate(
    model: &ModelParams,
    batch: &PairedBatch,
    objective: Objective,
    noise: &Noise,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Gradients>)> {
    Eval {
        model,
        objective,
        x: &batch.x,
        x_prime: objective.paired().then_some(&batch.x_prime),
        shared: &batch.shared_group,
        noise,
    }
    .run(want_grad)
}

/// Evaluates `objective` on a paired batch. β-VAE uses only `batch.x`.
pub fn loss(
    model: &ModelParams,
    batch: &PairedBatch,
    objective: Objective,
    noise: &Noise,
) -> Result<LossBreakdown> {
    Ok(evaluate(model, batch, objective, noise, false)?.0)
}

/// Loss plus gradients w.r.t. every encoder and decoder weight.
pub fn loss_and_grad(
    model: &ModelParams,
    batch: &PairedBatch,
    objective: Objective,
    noise: &Noise,
) -> Result<(LossBreakdown, Gradients)> {
    let (l, g) = evaluate(model, batch, objective, noise, true)?;
    Ok((l, g.expect("gradient requested")))
}

/// `-E_q[log p(x|z) + log p(x'|z')] + KL(q(z|x)||p) + KL(q(z'|x')||p)`.
pub fn paired_elbo_loss(
    model: &ModelParams,
    x: &Array2<f64>,
    x_prime: &Array2<f64>,
    noise: &Noise,
) -> Result<LossBreakdown> {
    Ok(Eval {
        model,
        objective: Objective::PairedElbo,
        x,
        x_prime: Some(x_prime),
        shared: &[],
        noise,
    }
    .run(false)?
    .0)
}

/// `KL(q(z_g|x) || q(z'_g|x'))` on the shared group's slice only.
pub fn kl_reg_loss(
    posterior_x: &GroupedPosterior,
    posterior_x_prime: &GroupedPosterior,
    shared_group: usize,
) -> Result<f64> {
    if posterior_x.groups.len() != posterior_x_prime.groups.len() {
        return Err(Error::Dimension {
            context: "kl_reg_loss group count",
            expected: posterior_x.groups.len(),
            actual: posterior_x_prime.groups.len(),
        });
    }
    if shared_group >= posterior_x.groups.len() {
        return Err(Error::param(format!(
            "shared group {shared_group} out of range (< {})",
            posterior_x.groups.len()
        )));
    }
    match (posterior_x.group(shared_group), posterior_x_prime.group(shared_group)) {
        (GroupPosterior::Gaussian(a), GroupPosterior::Gaussian(b)) => kl_gaussian(a, b),
        (GroupPosterior::Categorical(a), GroupPosterior::Categorical(b)) => kl_categorical(a, b),
        _ => Err(Error::param("posterior kinds differ on the shared group")),
    }
}

/// `L_pairedVAE + gamma · L_KLreg`, each pair regularized on its own shared group.
pub fn groupvae_loss(
    model: &ModelParams,
    batch: &PairedBatch,
    gamma: f64,
    noise: &Noise,
) -> Result<LossBreakdown> {
    loss(model, batch, Objective::GroupVae { gamma, symmetric: false }, noise)
}

pub fn mlvae_loss(
    model: &ModelParams,
    batch: &PairedBatch,
    beta: f64,
    noise: &Noise,
) -> Result<LossBreakdown> {
    loss(model, batch, Objective::MlVae { beta }, noise)
}

pub fn gvae_loss(
    model: &ModelParams,
    batch: &PairedBatch,
    beta: f64,
    noise: &Noise,
) -> Result<LossBreakdown> {
    loss(model, batch, Objective::GVae { beta }, noise)
}

/// `-E_q[log p(x|z)] + beta · KL(q(z|x) || p(z))` on unpaired observations.
pub fn betavae_loss(
    model: &ModelParams,
    x: &Array2<f64>,
    beta: f64,
    noise: &Noise,
) -> Result<LossBreakdown> {
    Ok(Eval {
        model,
        objective: Objective::BetaVae { beta },
        x,
        x_prime: None,
        shared: &[],
        noise,
    }
    .run(false)?
    .0)
}
