use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::GraphSnapshot;

use super::dataset::{Adjacency, EntityIndex, TrainingSet, Triple};
use super::matrix::{axpy, dot, Matrix};
use super::model::{Params, RankerModel};
use super::propagate::{backward, forward};
use super::{Hyperparams, Optimizer, RankerError};

/// ln(1 + eˣ) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// (participant, positive nudge, negative nudge)
pub type CfSample = (usize, usize, usize);
/// (head, relation, tail, corrupted tail)
pub type KgSample = (usize, usize, usize, usize);

/// Pairwise ranking loss on propagated representations, averaged over the
/// batch, plus λ‖Θ‖². Gradients are added to `grad`.
pub fn cf_loss(params: &Params, adj: &Adjacency, hp: &Hyperparams, batch: &[CfSample], grad: &mut Params) -> f64 {
    let fwd = forward(params, adj, hp.leaky_slope);
    let out = &fwd.output;
    let mut d_out = Matrix::zeros(out.rows, out.cols);
    let scale = 1.0 / batch.len().max(1) as f64;
    let mut loss = 0.0;
    let mut diff = vec![0.0; out.cols];
    for &(u, pos, neg) in batch {
        let (fu, fp, fnn) = (out.row(u), out.row(pos), out.row(neg));
        let delta = dot(fu, fp) - dot(fu, fnn);
        loss += softplus(-delta);
        let g = -sigmoid(-delta) * scale;
        for i in 0..diff.len() {
            diff[i] = fp[i] - fnn[i];
        }
        axpy(g, &diff, d_out.row_mut(u));
        let fu = fu.to_vec();
        axpy(g, &fu, d_out.row_mut(pos));
        axpy(-g, &fu, d_out.row_mut(neg));
    }
    backward(params, adj, hp.leaky_slope, &fwd, &d_out, grad);
    params.add_l2_grad(hp.l2, grad);
    loss * scale + hp.l2 * params.sq_norm()
}

/// Translation distance g = ‖W_r e_h + e_r − W_r e_t‖² and its residual.
fn kg_residual(params: &Params, h: usize, r: usize, t: usize, v: &mut [f64], tmp: &mut [f64]) -> f64 {
    let w = &params.projection[r];
    w.mul_vec(params.entity.row(h), v);
    axpy(1.0, params.relation.row(r), v);
    w.mul_vec(params.entity.row(t), tmp);
    axpy(-1.0, tmp, v);
    dot(v, v)
}

fn kg_distance_grad(params: &Params, h: usize, r: usize, t: usize, coeff: f64, v: &[f64], grad: &mut Params) {
    // dg/dv = 2v
    let gv: Vec<f64> = v.iter().map(|x| 2.0 * coeff * x).collect();
    let w = &params.projection[r];
    grad.projection[r].add_outer(1.0, &gv, params.entity.row(h));
    grad.projection[r].add_outer(-1.0, &gv, params.entity.row(t));
    axpy(1.0, &gv, grad.relation.row_mut(r));
    w.mul_t_vec_add(&gv, grad.entity.row_mut(h));
    let neg: Vec<f64> = gv.iter().map(|x| -x).collect();
    w.mul_t_vec_add(&neg, grad.entity.row_mut(t));
}

/// Translation-based knowledge loss averaged over the batch, plus λ‖Θ‖².
pub fn kg_loss(params: &Params, hp: &Hyperparams, batch: &[KgSample], grad: &mut Params) -> f64 {
    let k = params.relation.cols;
    let scale = 1.0 / batch.len().max(1) as f64;
    let (mut vp, mut vn, mut tmp) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    let mut loss = 0.0;
    for &(h, r, t, tn) in batch {
        let gp = kg_residual(params, h, r, t, &mut vp, &mut tmp);
        let gn = kg_residual(params, h, r, tn, &mut vn, &mut tmp);
        loss += softplus(gp - gn);
        let c = sigmoid(gp - gn) * scale;
        kg_distance_grad(params, h, r, t, c, &vp, grad);
        kg_distance_grad(params, h, r, tn, -c, &vn, grad);
    }
    params.add_l2_grad(hp.l2, grad);
    loss * scale + hp.l2 * params.sq_norm()
}

enum OptState {
    Sgd,
    Adam { m: Params, v: Params, t: i32 },
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl OptState {
    fn new(hp: &Hyperparams, params: &Params) -> Self {
        match hp.optimizer {
            Optimizer::Sgd => OptState::Sgd,
            Optimizer::Adam => OptState::Adam { m: params.zeros_like(), v: params.zeros_like(), t: 0 },
        }
    }

    fn step(&mut self, lr: f64, params: &mut Params, grad: &Params) {
        match self {
            OptState::Sgd => {
                for (p, (_, g)) in params.blocks_mut().into_iter().zip(grad.blocks()) {
                    axpy(-lr, &g.data, &mut p.data);
                }
            }
            OptState::Adam { m, v, t } => {
                *t += 1;
                let c1 = 1.0 - BETA1.powi(*t);
                let c2 = 1.0 - BETA2.powi(*t);
                let blocks = params.blocks_mut().into_iter().zip(grad.blocks()).zip(m.blocks_mut()).zip(v.blocks_mut());
                for (((p, (_, g)), m), v) in blocks {
                    for i in 0..p.data.len() {
                        let gi = g.data[i];
                        m.data[i] = BETA1 * m.data[i] + (1.0 - BETA1) * gi;
                        v.data[i] = BETA2 * v.data[i] + (1.0 - BETA2) * gi * gi;
                        p.data[i] -= lr * (m.data[i] / c1) / ((v.data[i] / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

/// Mean losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    /// None when there were no positive interactions to train on.
    pub cf: Option<f64>,
    pub kg: f64,
}

impl EpochLoss {
    pub fn total(&self) -> f64 {
        self.cf.unwrap_or(0.0) + self.kg
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossTrace {
    pub epochs: Vec<EpochLoss>,
}

impl LossTrace {
    /// Two columns: epoch and total loss.
    pub fn to_text(&self) -> String {
        let mut s = String::from("epoch\tloss\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{}\t{:?}", e.epoch, e.total());
        }
        s
    }

    pub fn write_to(&self, path: &Path) -> Result<(), RankerError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

fn sample_cf(set: &TrainingSet, hp: &Hyperparams, rng: &mut ChaCha8Rng) -> Vec<CfSample> {
    let mut out = Vec::with_capacity(set.positives.len() * hp.negatives);
    if set.nudges.is_empty() {
        return out;
    }
    let mut order = set.positives.clone();
    order.shuffle(rng);
    for (u, pos) in order {
        for _ in 0..hp.negatives {
            for _ in 0..100 {
                let neg = set.nudges[rng.gen_range(0..set.nudges.len())];
                if !set.interacted.contains(&(u, neg)) {
                    out.push((u, pos, neg));
                    break;
                }
            }
        }
    }
    out
}

fn sample_kg(set: &TrainingSet, rng: &mut ChaCha8Rng) -> Vec<KgSample> {
    let mut order = set.triples.clone();
    order.shuffle(rng);
    let mut out = Vec::with_capacity(order.len());
    for Triple { h, r, t } in order {
        let pool = set.entities_of_kind(set.entities.id(t).kind);
        for _ in 0..100 {
            let tn = pool[rng.gen_range(0..pool.len())];
            if tn != t && !set.triple_set.contains(&Triple { h, r, t: tn }) {
                out.push((h, r, t, tn));
                break;
            }
        }
    }
    out
}

fn fit(model: &mut RankerModel, set: &TrainingSet, epochs: usize) -> Result<LossTrace, RankerError> {
    let hp = model.hyper.clone();
    let adj = Adjacency::new(set.entities.len(), &set.triples);
    let mut opt = OptState::new(&hp, &model.params);
    let mut trace = LossTrace::default();
    let diverged = |epoch, phase| RankerError::Diverged { epoch, phase };
    for e in 0..epochs {
        let epoch = model.epochs_trained + 1;
        let mut rng = epoch_rng(hp.seed, epoch);

        let cf_samples = sample_cf(set, &hp, &mut rng);
        let cf = if cf_samples.is_empty() {
            None
        } else {
            let mut sum = 0.0;
            let batches = cf_samples.chunks(hp.cf_batch_size);
            let count = batches.len();
            for batch in batches {
                let mut grad = model.params.zeros_like();
                let l = cf_loss(&model.params, &adj, &hp, batch, &mut grad);
                if !l.is_finite() {
                    return Err(diverged(epoch, "interaction"));
                }
                opt.step(hp.learning_rate, &mut model.params, &grad);
                sum += l;
            }
            Some(sum / count as f64)
        };

        let kg_samples = sample_kg(set, &mut rng);
        let mut kg = 0.0;
        if !kg_samples.is_empty() {
            let batches = kg_samples.chunks(hp.kg_batch_size);
            let count = batches.len();
            for batch in batches {
                let mut grad = model.params.zeros_like();
                let l = kg_loss(&model.params, &hp, batch, &mut grad);
                if !l.is_finite() {
                    return Err(diverged(epoch, "knowledge"));
                }
                opt.step(hp.learning_rate, &mut model.params, &grad);
                kg += l;
            }
            kg /= count as f64;
        }
        if !model.params.is_finite() {
            return Err(diverged(epoch, "update"));
        }
        model.epochs_trained = epoch;
        trace.epochs.push(EpochLoss { epoch, cf, kg });
        log::debug!("epoch {} ({}/{epochs}): cf {cf:?} kg {kg}", epoch, e + 1);
    }
    Ok(trace)
}

/// Trains a fresh model for `hp.epochs` epochs.
pub fn train_set(set: &TrainingSet, hp: &Hyperparams, graph_version: u64) -> Result<(RankerModel, LossTrace), RankerError> {
    hp.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut model = RankerModel {
        hyper: hp.clone(),
        entities: set.entities.clone(),
        params: Params::init(set.entities.len(), hp, &mut rng),
        graph_version,
        epochs_trained: 0,
    };
    if set.is_cold_start() {
        log::info!("no positive interactions yet; training on knowledge triples only");
    }
    let trace = fit(&mut model, set, hp.epochs)?;
    Ok((model, trace))
}

pub fn train(snapshot: &GraphSnapshot, hp: &Hyperparams) -> Result<(RankerModel, LossTrace), RankerError> {
    train_set(&TrainingSet::from_snapshot(snapshot, hp.positive_signal), hp, snapshot.version)
}

/// Continues training on a newer graph state. Embeddings of entities already
/// known are kept; new entities start from fresh random rows.
pub fn retrain_set(
    prev: &RankerModel,
    set: &TrainingSet,
    graph_version: u64,
    epochs: usize,
) -> Result<(RankerModel, LossTrace), RankerError> {
    prev.check_shapes()?;
    let mut model = prev.clone();
    if set.entities != prev.entities {
        model.params.entity = carry_rows(prev, &set.entities, graph_version);
        model.entities = set.entities.clone();
    }
    model.graph_version = graph_version;
    let trace = fit(&mut model, set, epochs)?;
    Ok((model, trace))
}

pub fn retrain_on_update(
    prev: &RankerModel,
    snapshot: &GraphSnapshot,
    epochs: usize,
) -> Result<(RankerModel, LossTrace), RankerError> {
    let set = TrainingSet::from_snapshot(snapshot, prev.hyper.positive_signal);
    retrain_set(prev, &set, snapshot.version, epochs)
}

fn carry_rows(prev: &RankerModel, index: &EntityIndex, graph_version: u64) -> Matrix {
    let d = prev.hyper.embedding_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(prev.hyper.seed ^ graph_version.rotate_left(17));
    let fresh = Params::init(index.len(), &prev.hyper, &mut rng).entity;
    let mut m = Matrix::zeros(index.len(), d);
    for (i, id) in index.ids().iter().enumerate() {
        match prev.entities.get(id) {
            Some(j) => m.row_mut(i).copy_from_slice(prev.params.entity.row(j)),
            None => m.row_mut(i).copy_from_slice(fresh.row(i)),
        }
    }
    m
}
