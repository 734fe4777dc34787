//! End-to-end training: autoencoder pretraining, then alternating filtering,
//! fusion, pseudo-label refresh and joint optimization of
//! `γ_rec·L_Rec + γ_kl·L_KL`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::clustering::{evaluate, kmeans, kmeans_restarts, Metrics};
use crate::encoders::{encode_and_loss, pretrain, Adam, AutoEncoderParams, EncoderConfig, ReconLoss, ViewAutoEncoders};
use crate::error::{Error, Result};
use crate::filterbank::{apply_filter, apply_filter_on_tape, joint_kernel_on_tape, view_kernel, FilterConfig, MatrixSource};
use crate::fusion::{cluster_means, fuse_views, target_distribution, update_hr, FusionState, LossWeights};
use crate::graph::{random_walk_normalize, MultiViewGraph, OneHotLabels};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Graphs larger than this stop gradients at `S` unless told otherwise.
pub const DETACH_THRESHOLD: usize = 2000;

/// hr used for every view before any pseudo-labels exist.
pub const BOOTSTRAP_HR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Pseudo-labels and hr are refreshed every this many epochs.
    pub hr_refresh_interval: usize,
    pub rho: f64,
    pub gamma_rec: f64,
    pub gamma_kl: f64,
    pub filter: FilterConfig,
    pub encoder: EncoderConfig,
    pub seed: u64,
    /// `None` picks `n > DETACH_THRESHOLD`.
    pub detach_s: Option<bool>,
    /// k-means restarts for the final assignment.
    pub final_restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            hr_refresh_interval: 5,
            rho: 1.0,
            gamma_rec: 1.0,
            gamma_kl: 0.1,
            filter: FilterConfig::default(),
            encoder: EncoderConfig::default(),
            seed: 0,
            detach_s: None,
            final_restarts: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rho", self.rho), ("gamma_rec", self.gamma_rec), ("gamma_kl", self.gamma_kl)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        if self.hr_refresh_interval == 0 {
            return Err(Error::Config("hr_refresh_interval must be at least 1".into()));
        }
        self.filter.validate()?;
        self.encoder.validate()
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            gamma_rec: self.gamma_rec,
            gamma_kl: self.gamma_kl,
        }
    }

    pub fn detach_for(&self, n: usize) -> bool {
        self.detach_s.unwrap_or(n > DETACH_THRESHOLD)
    }

    fn encoder_for_view(&self, view: usize) -> EncoderConfig {
        EncoderConfig {
            seed: self.seed.wrapping_mul(1_000_003).wrapping_add(view as u64),
            ..self.encoder.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_rec: f64,
    pub l_kl: f64,
    pub l_total: f64,
    pub hr: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Summed `L_Rec` over views for every pretraining epoch.
    pub pretrain: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    /// hr after the first pseudo-label pass, before any joint epoch.
    pub initial_hr: Vec<f64>,
    pub final_hr: Vec<f64>,
    pub final_weights: Vec<f64>,
    /// `None` when the graph carries no ground truth.
    #[serde(rename = "final")]
    pub final_metrics: Option<Metrics>,
}

/// Report plus the artifacts a caller may want to persist.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub report: TrainReport,
    pub state: FusionState,
    pub labels: Vec<usize>,
    pub params: Vec<ViewAutoEncoders>,
}

/// Quantities held constant while differentiating one epoch's objective.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenTerms {
    pub hr: Vec<f64>,
    pub weights: Vec<f64>,
    pub centers_per_view: Vec<Array2<f64>>,
    pub centers_bar: Array2<f64>,
    pub p_per_view: Vec<Array2<f64>>,
    pub p_bar: Array2<f64>,
    /// Kernels used when gradients stop at `S` (or for the raw adjacency).
    pub kernels: Vec<Option<Array2<f64>>>,
}

/// Value of one epoch's objective and its pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub l_rec: f64,
    pub l_kl: f64,
    pub l_total: f64,
    pub per_view_embeddings: Vec<Array2<f64>>,
    pub consensus: Array2<f64>,
}

/// Gradients for one view's two autoencoders.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewGradients {
    pub x: AutoEncoderParams,
    pub a: AutoEncoderParams,
}

/// Evaluates `γ_rec·L_Rec + γ_kl·L_KL` on a tape.
///
/// Without `frozen`, view weights, cluster centers and target distributions
/// are derived from this pass's forward values and returned so the same
/// objective can be re-evaluated at perturbed parameters. Gradients never
/// flow through those frozen terms.
pub fn objective(
    g: &MultiViewGraph,
    params: &[ViewAutoEncoders],
    hr: &[f64],
    pseudo: &OneHotLabels,
    cfg: &TrainConfig,
    frozen: Option<&FrozenTerms>,
    with_gradients: bool,
) -> Result<(ObjectiveValue, FrozenTerms, Option<Vec<ViewGradients>>)> {
    let n_views = g.n_views();
    if params.len() != n_views || hr.len() != n_views {
        return Err(Error::Dimension(format!(
            "{} parameter sets and {} hr values for {n_views} views",
            params.len(),
            hr.len()
        )));
    }
    let weights_cfg = cfg.loss_weights();
    let detach = cfg.detach_for(g.n_nodes());
    let a_loss = cfg.encoder.adjacency_loss;

    let mut tape = Tape::new();
    let x_const = tape.constant(g.features().clone());
    let mut vars = Vec::with_capacity(n_views);
    let mut rec_terms = Vec::with_capacity(n_views);
    let mut h_vars = Vec::with_capacity(n_views);
    let mut kernels_used = Vec::with_capacity(n_views);

    for (v, p) in params.iter().enumerate() {
        let px = p.x.register(&mut tape);
        let pa = p.a.register(&mut tape);
        let a_const = tape.constant(g.adjacency(v).clone());
        let (z_x, lx) = encode_and_loss(&mut tape, &px, x_const, g.features(), ReconLoss::Mse)?;
        let (z_a, la) = encode_and_loss(&mut tape, &pa, a_const, g.adjacency(v), a_loss)?;
        rec_terms.push(tape.add(lx, la));

        let kernel = match (cfg.filter.matrix_source, frozen.and_then(|f| f.kernels[v].clone())) {
            (_, Some(k)) => {
                kernels_used.push(Some(k.clone()));
                tape.constant(k)
            }
            (MatrixSource::RawAdjacency, None) => {
                let k = random_walk_normalize(g.adjacency(v).view(), false)?.a_rw;
                kernels_used.push(Some(k.clone()));
                tape.constant(k)
            }
            (MatrixSource::JointAggregation, None) => {
                let s_rw = joint_kernel_on_tape(&mut tape, z_a, z_x);
                if detach {
                    let k = tape.value(s_rw).clone();
                    kernels_used.push(Some(k.clone()));
                    tape.constant(k)
                } else {
                    kernels_used.push(None);
                    s_rw
                }
            }
        };
        let view_cfg = cfg.filter.with_hr(hr[v]);
        h_vars.push(apply_filter_on_tape(&mut tape, kernel, x_const, &view_cfg));
        vars.push((px, pa));
    }

    let per_view: Vec<Array2<f64>> = h_vars.iter().map(|&h| tape.value(h).clone()).collect();
    let fusion_weights = match frozen {
        Some(f) => f.weights.clone(),
        None => fuse_views(&per_view, cfg.rho)?.weights,
    };
    let mut h_bar = tape.scale(h_vars[0], fusion_weights[0]);
    for v in 1..n_views {
        let term = tape.scale(h_vars[v], fusion_weights[v]);
        h_bar = tape.add(h_bar, term);
    }
    let consensus = tape.value(h_bar).clone();

    let frozen_terms = match frozen {
        Some(f) => FrozenTerms {
            kernels: kernels_used,
            ..f.clone()
        },
        None => {
            let centers_per_view: Vec<Array2<f64>> = per_view.iter().map(|h| cluster_means(h, pseudo)).collect();
            let centers_bar = cluster_means(&consensus, pseudo);
            let p_per_view = per_view
                .iter()
                .zip(&centers_per_view)
                .map(|(h, c)| target_distribution(&crate::autodiff::student_t(h, c)))
                .collect();
            let p_bar = target_distribution(&crate::autodiff::student_t(&consensus, &centers_bar));
            FrozenTerms {
                hr: hr.to_vec(),
                weights: fusion_weights,
                centers_per_view,
                centers_bar,
                p_per_view,
                p_bar,
                kernels: kernels_used,
            }
        }
    };

    let mut l_rec = rec_terms[0];
    for &t in &rec_terms[1..] {
        l_rec = tape.add(l_rec, t);
    }

    let l_kl: Option<Var> = if weights_cfg.gamma_kl > 0.0 {
        let cbar = tape.constant(frozen_terms.centers_bar.clone());
        let q_bar = tape.student_t(h_bar, cbar);
        let mut kl = tape.kl(frozen_terms.p_bar.clone(), q_bar);
        for v in 0..n_views {
            let c = tape.constant(frozen_terms.centers_per_view[v].clone());
            let q = tape.student_t(h_vars[v], c);
            let a = tape.kl(frozen_terms.p_bar.clone(), q);
            let b = tape.kl(frozen_terms.p_per_view[v].clone(), q);
            kl = tape.add(kl, a);
            kl = tape.add(kl, b);
        }
        Some(kl)
    } else {
        None
    };

    let rec_scaled = tape.scale(l_rec, weights_cfg.gamma_rec);
    let total = match l_kl {
        Some(kl) => {
            let kl_scaled = tape.scale(kl, weights_cfg.gamma_kl);
            tape.add(rec_scaled, kl_scaled)
        }
        None => rec_scaled,
    };

    let value = ObjectiveValue {
        l_rec: tape.scalar(l_rec),
        l_kl: l_kl.map_or(0.0, |kl| tape.scalar(kl)),
        l_total: tape.scalar(total),
        per_view_embeddings: per_view,
        consensus,
    };

    let grads = with_gradients.then(|| {
        let grads = tape.backward(total);
        vars.iter()
            .map(|(px, pa)| ViewGradients {
                x: px.gradients(&grads),
                a: pa.gradients(&grads),
            })
            .collect()
    });
    Ok((value, frozen_terms, grads))
}

/// Filters every view with the current parameters and fuses the result.
fn forward_views(
    g: &MultiViewGraph,
    params: &[ViewAutoEncoders],
    hr: &[f64],
    cfg: &TrainConfig,
) -> Result<(Vec<Array2<f64>>, crate::fusion::Fusion)> {
    let per_view = params
        .iter()
        .enumerate()
        .map(|(v, p)| {
            let pair = p.embed(g.features(), g.adjacency(v))?;
            let kernel = view_kernel(g, v, &pair, cfg.filter.matrix_source)?;
            apply_filter(&kernel, g.features(), &cfg.filter.with_hr(hr[v]))
        })
        .collect::<Result<Vec<_>>>()?;
    let fusion = fuse_views(&per_view, cfg.rho)?;
    Ok((per_view, fusion))
}

fn check_finite(value: f64, epoch: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            last_finite_epoch: epoch.checked_sub(1),
        })
    }
}

/// Pretrains one view's autoencoders on its own features and adjacency.
pub fn pretrain_views(g: &MultiViewGraph, cfg: &TrainConfig) -> Result<(Vec<ViewAutoEncoders>, Vec<f64>)> {
    let mut params = Vec::with_capacity(g.n_views());
    let mut totals: Vec<f64> = Vec::new();
    for v in 0..g.n_views() {
        let mut enc_cfg = cfg.encoder_for_view(v);
        let mut rng = ChaCha8Rng::seed_from_u64(enc_cfg.seed);
        let mut p = ViewAutoEncoders::init(g.n_features(), g.n_nodes(), &enc_cfg, &mut rng)?;
        if cfg.gamma_rec == 0.0 {
            // Without a reconstruction objective there is nothing to pretrain on.
            enc_cfg.epochs = 0;
        }
        let losses = pretrain(&mut p, g.features(), g.adjacency(v), &enc_cfg, 0)?;
        if totals.is_empty() {
            totals = losses;
        } else {
            totals.iter_mut().zip(losses).for_each(|(t, l)| *t += l);
        }
        params.push(p);
    }
    Ok((params, totals))
}

/// Runs the whole pipeline on `g`.
pub fn train(g: &MultiViewGraph, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let c = g.n_clusters();
    if g.n_nodes() < c {
        return Err(Error::Domain(format!("{} nodes cannot form {c} clusters", g.n_nodes())));
    }
    let (params, pretrain_losses) = pretrain_views(g, cfg)?;
    train_pretrained(g, cfg, params, pretrain_losses)
}

/// Runs the joint stage from already pretrained autoencoders. Lets several
/// filter variants share one pretraining pass.
pub fn train_pretrained(
    g: &MultiViewGraph,
    cfg: &TrainConfig,
    mut params: Vec<ViewAutoEncoders>,
    pretrain_losses: Vec<f64>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let c = g.n_clusters();
    if params.len() != g.n_views() {
        return Err(Error::Dimension(format!(
            "{} parameter sets for {} views",
            params.len(),
            g.n_views()
        )));
    }

    // Bootstrap pseudo-labels from the equal-weight hybrid.
    let mut hr = vec![BOOTSTRAP_HR; g.n_views()];
    let (_, fusion) = forward_views(g, &params, &hr, cfg)?;
    let first = kmeans_restarts(&fusion.consensus, c, cfg.seed, cfg.final_restarts)?;
    let mut pseudo = OneHotLabels::new(first.labels.clone(), c)?;
    let mut centers = first.centers;
    hr = update_hr(g, &pseudo)?;
    let initial_hr = hr.clone();

    let mut optimizers: Vec<(Adam, Adam)> = params
        .iter()
        .map(|p| {
            (
                Adam::new(p.x.num_params(), cfg.encoder.learning_rate),
                Adam::new(p.a.num_params(), cfg.encoder.learning_rate),
            )
        })
        .collect();
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let (value, frozen, grads) = objective(g, &params, &hr, &pseudo, cfg, None, true)?;
        check_finite(value.l_total, epoch)?;
        let grads = grads.expect("gradients requested");
        for ((p, gr), (ox, oa)) in params.iter_mut().zip(&grads).zip(optimizers.iter_mut()) {
            if gr.x.to_flat().iter().chain(gr.a.to_flat().iter()).any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    last_finite_epoch: epoch.checked_sub(1),
                });
            }
            ox.step_params(&mut p.x, &gr.x);
            oa.step_params(&mut p.a, &gr.a);
        }
        records.push(EpochRecord {
            epoch,
            l_rec: value.l_rec,
            l_kl: value.l_kl,
            l_total: value.l_total,
            hr: hr.clone(),
            weights: frozen.weights.clone(),
        });
        if (epoch + 1) % cfg.hr_refresh_interval == 0 {
            let refreshed = kmeans(&value.consensus, c, cfg.seed, Some(&centers))?;
            if !refreshed.has_empty_cluster() {
                pseudo = OneHotLabels::new(refreshed.labels.clone(), c)?;
                centers = refreshed.centers;
                hr = update_hr(g, &pseudo)?;
            } else {
                log::warn!("pseudo-label refresh at epoch {epoch} left a cluster empty; keeping previous labels");
            }
        }
    }

    let (per_view, fusion) = forward_views(g, &params, &hr, cfg)?;
    if fusion.consensus.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            last_finite_epoch: cfg.epochs.checked_sub(1),
        });
    }
    let final_assign = kmeans_restarts(&fusion.consensus, c, cfg.seed.wrapping_add(1), cfg.final_restarts)?;
    let final_metrics = match g.labels() {
        Some(truth) => Some(evaluate(&final_assign.labels, truth)?),
        None => None,
    };
    let report = TrainReport {
        pretrain: pretrain_losses,
        epochs: records,
        initial_hr,
        final_hr: hr.clone(),
        final_weights: fusion.weights.clone(),
        final_metrics,
    };
    let state = FusionState {
        per_view_embeddings: per_view,
        weights: fusion.weights,
        consensus: fusion.consensus,
        pseudo_labels: OneHotLabels::new(final_assign.labels.clone(), c)?,
        hr_per_view: hr,
    };
    Ok(TrainOutput {
        report,
        state,
        labels: final_assign.labels,
        params,
    })
}
