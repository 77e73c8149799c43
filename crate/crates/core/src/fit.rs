//! Closed-form toy fitting of the estimator on synthetic clips.
//!
//! The recurrent layers keep their random weights; only the output layer of
//! each network and the last layer of each initializer are solved for by
//! ridge regression on the features the fixed layers produce. This gives
//! usable small networks without a training framework.
//!
//! Networks with an initializer enter every clip from a settled state: the
//! network is first fed the clip's opening input for `settle_frames` steps
//! from zero. The initializers are fitted to reproduce such settled states
//! from the seed quantities, so learned initialization puts inference on the
//! same footing as fitting. The other networks start clips from zero, as they
//! do at inference.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clips::{self, WalkParams};
use crate::error::{Error, Result};
use crate::estimator::{root_relative_positions, InitFcn, LstmStack, LstmState, NetId, Networks};
use crate::imu::{oracle_sequence, synthesize_imu, DEFAULT_SMOOTHING_SPAN};
use crate::skeleton::Model;
use crate::weights::random_networks;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub hidden: usize,
    pub seed: u64,
    /// Ridge penalty on the output weights.
    pub ridge: f64,
    /// Steps of constant input used to settle a state.
    pub settle_frames: usize,
    /// Every `seed_stride`-th frame becomes an initializer sample.
    pub seed_stride: usize,
    pub fps: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            seed: 7,
            ridge: 1e-7,
            settle_frames: 60,
            seed_stride: 20,
            fps: 60.0,
        }
    }
}

/// Network inputs and teacher targets for one clip.
#[derive(Debug, Clone)]
pub struct ClipData {
    pub x: Vec<DVector<f64>>,
    pub p_leaf: Vec<DVector<f64>>,
    pub p: Vec<DVector<f64>>,
    pub r: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    pub c: Vec<DVector<f64>>,
}

fn concat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut v = DVector::zeros(a.len() + b.len());
    v.rows_mut(0, a.len()).copy_from(a);
    v.rows_mut(a.len(), b.len()).copy_from(b);
    v
}

/// Keeps labels off the sigmoid's asymptotes.
const LABEL_CLAMP: f64 = 0.02;

fn logit(p: f64) -> f64 {
    let p = p.clamp(LABEL_CLAMP, 1.0 - LABEL_CLAMP);
    (p / (1.0 - p)).ln()
}

impl ClipData {
    pub fn from_motion(model: &Model<f64>, motion: &[DVector<f64>], acc_scale: f64, fps: f64) -> Result<Self> {
        let tree = &model.tree;
        let imu = synthesize_imu(tree, &model.sensors, motion, DEFAULT_SMOOTHING_SPAN, fps)?;
        let status = oracle_sequence(tree, motion, fps)?;
        let all: Vec<usize> = (0..tree.num_joints()).collect();
        Ok(Self {
            x: imu.iter().map(|f| f.to_input(acc_scale)).collect(),
            p_leaf: motion.iter().map(|q| root_relative_positions(tree, q, &tree.leaf_ids)).collect(),
            p: motion.iter().map(|q| root_relative_positions(tree, q, &all)).collect(),
            r: status.iter().map(|s| s.phi.rows(6, s.phi.len() - 6).into_owned()).collect(),
            v: status.iter().map(|s| s.v.clone()).collect(),
            c: status.iter().map(|s| DVector::from_vec(vec![s.c[0], s.c[1]])).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Teacher-forced input of `id` at frame `t`.
    pub fn input(&self, id: NetId, t: usize) -> DVector<f64> {
        match id {
            NetId::PL => self.x[t].clone(),
            NetId::PA => concat(&self.p_leaf[t], &self.x[t]),
            _ => concat(&self.p[t], &self.x[t]),
        }
    }

    /// Regression target of `id` at frame `t`, before any output squashing.
    pub fn target(&self, id: NetId, t: usize) -> DVector<f64> {
        match id {
            NetId::PL => self.p_leaf[t].clone(),
            NetId::PA => self.p[t].clone(),
            NetId::RA => self.r[t].clone(),
            NetId::VA => self.v[t].clone(),
            NetId::CF => self.c[t].map(logit),
        }
    }
}

/// Procedural walks at varied gaits, sit/stand cycles and quiet holds.
pub fn toy_corpus(model: &Model<f64>, seed: u64) -> Result<Vec<Vec<DVector<f64>>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clips = Vec::new();
    for _ in 0..3 {
        let params = WalkParams {
            stride: rng.random_range(0.6..0.9),
            period: rng.random_range(1.0..1.3),
            arm_swing: rng.random_range(0.1..0.35),
            ..WalkParams::default()
        };
        clips.push(clips::walking(model, 5.0, &params)?);
    }
    for _ in 0..2 {
        let hold = rng.random_range(90..180);
        let transition = rng.random_range(40..80);
        clips.push(clips::sit_stand(model, hold, transition));
    }
    clips.push(clips::long_sit(model, 240));
    clips.push(vec![clips::relaxed_standing_pose(model); 240]);
    Ok(clips)
}

/// Mean squared error of each network's output layer over the corpus,
/// before and after fitting, in network order.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub before: [f64; 5],
    pub after: [f64; 5],
    /// Initializer residual for `p_l` and `v_a`.
    pub init_residual: [f64; 2],
}

fn settle(net: &LstmStack<f64>, x: &DVector<f64>, frames: usize) -> Result<LstmState<f64>> {
    let mut s = net.zero_state();
    for _ in 0..frames {
        net.step(x, &mut s)?;
    }
    Ok(s)
}

/// Solves `min ‖F W − Y‖² + λ‖W‖²` for rows of features `F` with a trailing
/// unpenalized bias; returns `(weight out×d, bias)`.
fn ridge(features: &DMatrix<f64>, targets: &DMatrix<f64>, lambda: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (n, d) = features.shape();
    let mut f = DMatrix::from_element(n, d + 1, 1.0);
    f.columns_mut(0, d).copy_from(features);
    let mut gram = f.transpose() * &f;
    for k in 0..d {
        gram[(k, k)] += lambda * n as f64;
    }
    gram[(d, d)] += 1e-12 * n as f64;
    let rhs = f.transpose() * targets;
    let chol = gram.cholesky().ok_or_else(|| Error::InvalidConfig("ridge system is not positive definite".into()))?;
    let w = chol.solve(&rhs);
    let weight = w.rows(0, d).transpose();
    let bias = w.row(d).transpose();
    Ok((weight, bias))
}

fn mse(pred: &DMatrix<f64>, target: &DMatrix<f64>) -> f64 {
    (pred - target).norm_squared() / target.len().max(1) as f64
}

fn has_initializer(id: NetId) -> bool {
    matches!(id, NetId::PL | NetId::VA)
}

fn fit_output(net: &mut LstmStack<f64>, id: NetId, corpus: &[ClipData], cfg: &FitConfig) -> Result<(f64, f64)> {
    let rows: usize = corpus.iter().map(ClipData::len).sum();
    let mut feats = DMatrix::zeros(rows, net.hidden());
    let mut ys = DMatrix::zeros(rows, net.out_dim());
    let mut row = 0;
    for clip in corpus {
        if clip.is_empty() {
            continue;
        }
        let mut s = if has_initializer(id) {
            settle(net, &clip.input(id, 0), cfg.settle_frames)?
        } else {
            net.zero_state()
        };
        for t in 0..clip.len() {
            net.step(&clip.input(id, t), &mut s)?;
            feats.row_mut(row).copy_from(&net.top_hidden(&s).transpose());
            ys.row_mut(row).copy_from(&clip.target(id, t).transpose());
            row += 1;
        }
    }
    let predict = |w: &DMatrix<f64>, b: &DVector<f64>| {
        let mut p = &feats * w.transpose();
        for mut r in p.row_iter_mut() {
            r += b.transpose();
        }
        p
    };
    let before = mse(&predict(&net.output.weight, &net.output.bias), &ys);
    let (w, b) = ridge(&feats, &ys, cfg.ridge)?;
    let after = mse(&predict(&w, &b), &ys);
    net.output.weight = w;
    net.output.bias = b;
    Ok((before, after))
}

fn fit_initializer(
    fcn: &mut InitFcn<f64>,
    net: &LstmStack<f64>,
    id: NetId,
    corpus: &[ClipData],
    seed_of: impl Fn(&ClipData, usize) -> DVector<f64>,
    cfg: &FitConfig,
) -> Result<f64> {
    let mut feats = Vec::new();
    let mut ys = Vec::new();
    for clip in corpus {
        for t in (0..clip.len()).step_by(cfg.seed_stride.max(1)) {
            feats.push(fcn.features(&seed_of(clip, t))?);
            ys.push(settle(net, &clip.input(id, t), cfg.settle_frames)?.to_flat());
        }
    }
    if feats.is_empty() {
        return Err(Error::TooShort { needed: 1, actual: 0 });
    }
    let f = DMatrix::from_fn(feats.len(), feats[0].len(), |r, c| feats[r][c]);
    let y = DMatrix::from_fn(ys.len(), ys[0].len(), |r, c| ys[r][c]);
    let (w, b) = ridge(&f, &y, cfg.ridge)?;
    let mut pred = &f * w.transpose();
    for mut r in pred.row_iter_mut() {
        r += b.transpose();
    }
    let last = &mut fcn.layers[2];
    last.weight = w;
    last.bias = b;
    Ok(mse(&pred, &y))
}

/// Random networks of width `cfg.hidden` with fitted output layers and
/// initializers.
pub fn fit_networks(model: &Model<f64>, corpus: &[ClipData], cfg: &FitConfig) -> Result<(Networks<f64>, FitReport)> {
    if cfg.hidden == 0 || !(cfg.ridge > 0.0) {
        return Err(Error::InvalidConfig("fit needs a positive width and ridge penalty".into()));
    }
    let mut nets = random_networks::<f64>(model.tree.num_joints(), cfg.hidden, cfg.seed);
    let mut before = [0.0; 5];
    let mut after = [0.0; 5];
    for id in NetId::ALL {
        let (b, a) = fit_output(nets.net_mut(id), id, corpus, cfg)?;
        before[id.index()] = b;
        after[id.index()] = a;
    }
    let pl = nets.net(NetId::PL).clone();
    let va = nets.net(NetId::VA).clone();
    let r_pl = fit_initializer(&mut nets.init_pl, &pl, NetId::PL, corpus, |c, t| c.p_leaf[t].clone(), cfg)?;
    let r_va = fit_initializer(&mut nets.init_va, &va, NetId::VA, corpus, |c, t| c.v[t].clone(), cfg)?;
    nets.validate()?;
    Ok((
        nets,
        FitReport {
            before,
            after,
            init_residual: [r_pl, r_va],
        },
    ))
}

/// Fits on [`toy_corpus`] with the networks' default input scaling.
pub fn fit_toy(model: &Model<f64>, cfg: &FitConfig) -> Result<(Networks<f64>, FitReport)> {
    let acc_scale = crate::estimator::DEFAULT_ACC_SCALE;
    let corpus = toy_corpus(model, cfg.seed)?
        .iter()
        .map(|m| ClipData::from_motion(model, m, acc_scale, cfg.fps))
        .collect::<Result<Vec<_>>>()?;
    fit_networks(model, &corpus, cfg)
}
