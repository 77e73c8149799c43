//! Recurrent cascade estimating the motion status from one IMU frame.
//!
//! Five LSTM networks run in sequence on each frame:
//!
//! ```text
//! P_L(x)            -> p_leaf   (5 leaf joints, root-relative, 15)
//! P_A([p_leaf, x])  -> p        (all joints, root-relative, 3J)
//! R_A([p, x])       -> φ        (6D rotations of the non-root joints, root-relative)
//! V_A([p, x])       -> v        (joint velocities in the root frame, 3J)
//! C_F([p, x])       -> c        (foot contact probabilities, 2)
//! ```
//!
//! P_L and V_A start from hidden states produced by two small fully connected
//! networks fed with the initial leaf positions and joint velocities.

use nalgebra::{DMatrix, DVector, Matrix3};

use crate::error::{Error, Result};
use crate::rotation::{matrix_to_rot6d, rot6d_to_matrix};
use crate::scalar::{lit, Scalar};
use crate::skeleton::{forward_kinematics, KinematicTree};

pub const NUM_LEAVES: usize = 5;
/// Length of the network IMU input: 6 accelerations then 6 row-major rotations.
pub const IMU_DIM: usize = 72;
pub const DEFAULT_HIDDEN: usize = 256;
/// Widths of the two hidden layers of the initializer networks.
pub const INIT_WIDTHS: [usize; 2] = [256, 512];
pub const LSTM_LAYERS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NetId {
    PL,
    PA,
    RA,
    VA,
    CF,
}

impl NetId {
    pub const ALL: [NetId; 5] = [NetId::PL, NetId::PA, NetId::RA, NetId::VA, NetId::CF];

    pub fn name(self) -> &'static str {
        match self {
            NetId::PL => "p_l",
            NetId::PA => "p_a",
            NetId::RA => "r_a",
            NetId::VA => "v_a",
            NetId::CF => "c_f",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn in_dim(self, num_joints: usize) -> usize {
        match self {
            NetId::PL => IMU_DIM,
            NetId::PA => 3 * NUM_LEAVES + IMU_DIM,
            NetId::RA | NetId::VA | NetId::CF => 3 * num_joints + IMU_DIM,
        }
    }

    pub fn out_dim(self, num_joints: usize) -> usize {
        match self {
            NetId::PL => 3 * NUM_LEAVES,
            NetId::PA | NetId::VA => 3 * num_joints,
            NetId::RA => 6 * (num_joints - 1),
            NetId::CF => 2,
        }
    }

    pub fn squashed(self) -> bool {
        self == NetId::CF
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn relu_in_place<T: Scalar>(v: &mut DVector<T>) {
    v.apply(|x| {
        if *x < T::zero() {
            *x = T::zero()
        }
    });
}

/// Affine layer `y = W x + b`, `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T: Scalar> {
    pub weight: DMatrix<T>,
    pub bias: DVector<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(weight: DMatrix<T>, bias: DVector<T>) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::Shape {
                what: "dense bias",
                expected: weight.nrows(),
                actual: bias.len(),
            });
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: DMatrix::zeros(out_dim, in_dim),
            bias: DVector::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &DVector<T>) -> DVector<T> {
        let mut y = self.bias.clone();
        y.gemv(T::one(), &self.weight, x, T::one());
        y
    }
}

/// One LSTM layer with gates stacked in the order input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer<T: Scalar> {
    pub w_ih: DMatrix<T>,
    pub w_hh: DMatrix<T>,
    pub b_ih: DVector<T>,
    pub b_hh: DVector<T>,
}

impl<T: Scalar> LstmLayer<T> {
    pub fn zeros(in_dim: usize, hidden: usize) -> Self {
        Self {
            w_ih: DMatrix::zeros(4 * hidden, in_dim),
            w_hh: DMatrix::zeros(4 * hidden, hidden),
            b_ih: DVector::zeros(4 * hidden),
            b_hh: DVector::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.ncols()
    }

    fn validate(&self, in_dim: usize) -> Result<()> {
        let h = self.hidden();
        let checks = [
            ("lstm w_ih rows", 4 * h, self.w_ih.nrows()),
            ("lstm w_ih cols", in_dim, self.w_ih.ncols()),
            ("lstm w_hh rows", 4 * h, self.w_hh.nrows()),
            ("lstm b_ih", 4 * h, self.b_ih.len()),
            ("lstm b_hh", 4 * h, self.b_hh.len()),
        ];
        for (what, expected, actual) in checks {
            if expected != actual {
                return Err(Error::Shape { what, expected, actual });
            }
        }
        Ok(())
    }

    /// Advances `(h, c)` by one input.
    pub fn step(&self, x: &DVector<T>, h: &mut DVector<T>, c: &mut DVector<T>) {
        let n = self.hidden();
        let mut g = self.b_ih.clone();
        g.gemv(T::one(), &self.w_ih, x, T::one());
        g += &self.b_hh;
        g.gemv(T::one(), &self.w_hh, h, T::one());
        for k in 0..n {
            let i = sigmoid(g[k]);
            let f = sigmoid(g[n + k]);
            let cell = g[2 * n + k].tanh();
            let o = sigmoid(g[3 * n + k]);
            c[k] = f * c[k] + i * cell;
            h[k] = o * c[k].tanh();
        }
    }
}

/// Hidden and cell vectors of every layer of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T: Scalar> {
    pub h: Vec<DVector<T>>,
    pub c: Vec<DVector<T>>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(layers: usize, hidden: usize) -> Self {
        Self {
            h: vec![DVector::zeros(hidden); layers],
            c: vec![DVector::zeros(hidden); layers],
        }
    }

    /// `[h_0, h_1, …, c_0, c_1, …]`.
    pub fn to_flat(&self) -> DVector<T> {
        let parts: Vec<T> = self.h.iter().chain(&self.c).flat_map(|v| v.iter().copied()).collect();
        DVector::from_vec(parts)
    }

    pub fn from_flat(flat: &DVector<T>, layers: usize, hidden: usize) -> Result<Self> {
        if flat.len() != 2 * layers * hidden {
            return Err(Error::Shape {
                what: "flattened LSTM state",
                expected: 2 * layers * hidden,
                actual: flat.len(),
            });
        }
        let block = |k: usize| flat.rows(k * hidden, hidden).into_owned();
        Ok(Self {
            h: (0..layers).map(block).collect(),
            c: (layers..2 * layers).map(block).collect(),
        })
    }
}

/// Linear input layer with ReLU, stacked LSTM layers, linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStack<T: Scalar> {
    pub input: Dense<T>,
    pub layers: Vec<LstmLayer<T>>,
    pub output: Dense<T>,
    /// Apply a sigmoid to the output.
    pub squash: bool,
}

impl<T: Scalar> LstmStack<T> {
    pub fn zeros(in_dim: usize, out_dim: usize, hidden: usize, squash: bool) -> Self {
        Self {
            input: Dense::zeros(hidden, in_dim),
            layers: (0..LSTM_LAYERS).map(|_| LstmLayer::zeros(hidden, hidden)).collect(),
            output: Dense::zeros(out_dim, hidden),
            squash,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.input.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.output.out_dim()
    }

    pub fn hidden(&self) -> usize {
        self.input.out_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden();
        if self.layers.is_empty() {
            return Err(Error::Weights("LSTM stack without recurrent layers".into()));
        }
        for l in &self.layers {
            if l.hidden() != h {
                return Err(Error::Shape {
                    what: "lstm hidden width",
                    expected: h,
                    actual: l.hidden(),
                });
            }
            l.validate(h)?;
        }
        if self.output.in_dim() != h {
            return Err(Error::Shape {
                what: "output layer input",
                expected: h,
                actual: self.output.in_dim(),
            });
        }
        let finite = |m: &DMatrix<T>| m.iter().all(|x| x.is_finite());
        let fin_v = |v: &DVector<T>| v.iter().all(|x| x.is_finite());
        let all_finite = finite(&self.input.weight)
            && fin_v(&self.input.bias)
            && finite(&self.output.weight)
            && fin_v(&self.output.bias)
            && self
                .layers
                .iter()
                .all(|l| finite(&l.w_ih) && finite(&l.w_hh) && fin_v(&l.b_ih) && fin_v(&l.b_hh));
        if !all_finite {
            return Err(Error::NonFinite("network weights"));
        }
        Ok(())
    }

    pub fn zero_state(&self) -> LstmState<T> {
        LstmState::zeros(self.layers.len(), self.hidden())
    }

    /// One recurrent step; `state` is advanced in place.
    pub fn step(&self, x: &DVector<T>, state: &mut LstmState<T>) -> Result<DVector<T>> {
        if x.len() != self.in_dim() {
            return Err(Error::Shape {
                what: "network input",
                expected: self.in_dim(),
                actual: x.len(),
            });
        }
        let mut a = self.input.forward(x);
        relu_in_place(&mut a);
        for (l, layer) in self.layers.iter().enumerate() {
            layer.step(&a, &mut state.h[l], &mut state.c[l]);
            a.copy_from(&state.h[l]);
        }
        let mut y = self.output.forward(&a);
        if self.squash {
            y.apply(|v| *v = sigmoid(*v));
        }
        Ok(y)
    }

    /// Runs a whole sequence from `state`, leaving it at the final step.
    pub fn run(&self, xs: &[DVector<T>], state: &mut LstmState<T>) -> Result<Vec<DVector<T>>> {
        xs.iter().map(|x| self.step(x, state)).collect()
    }

    /// Hidden state of the top layer after `step`, used as regression features.
    pub fn top_hidden<'a>(&self, state: &'a LstmState<T>) -> &'a DVector<T> {
        state.h.last().expect("at least one layer")
    }
}

/// Fully connected initializer: two ReLU layers and a linear layer whose
/// output is a flattened [`LstmState`].
#[derive(Debug, Clone, PartialEq)]
pub struct InitFcn<T: Scalar> {
    pub layers: [Dense<T>; 3],
}

impl<T: Scalar> InitFcn<T> {
    pub fn zeros(seed_dim: usize, hidden: usize) -> Self {
        Self {
            layers: [
                Dense::zeros(INIT_WIDTHS[0], seed_dim),
                Dense::zeros(INIT_WIDTHS[1], INIT_WIDTHS[0]),
                Dense::zeros(2 * LSTM_LAYERS * hidden, INIT_WIDTHS[1]),
            ],
        }
    }

    pub fn seed_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn validate(&self, hidden: usize) -> Result<()> {
        for k in 1..3 {
            if self.layers[k].in_dim() != self.layers[k - 1].out_dim() {
                return Err(Error::Shape {
                    what: "initializer layer chain",
                    expected: self.layers[k - 1].out_dim(),
                    actual: self.layers[k].in_dim(),
                });
            }
        }
        if self.layers[2].out_dim() != 2 * LSTM_LAYERS * hidden {
            return Err(Error::Shape {
                what: "initializer output",
                expected: 2 * LSTM_LAYERS * hidden,
                actual: self.layers[2].out_dim(),
            });
        }
        Ok(())
    }

    /// Penultimate activations, the features the last layer maps from.
    pub fn features(&self, seed: &DVector<T>) -> Result<DVector<T>> {
        if seed.len() != self.seed_dim() {
            return Err(Error::Shape {
                what: "initializer seed",
                expected: self.seed_dim(),
                actual: seed.len(),
            });
        }
        let mut a = self.layers[0].forward(seed);
        relu_in_place(&mut a);
        let mut b = self.layers[1].forward(&a);
        relu_in_place(&mut b);
        Ok(b)
    }

    pub fn forward(&self, seed: &DVector<T>) -> Result<DVector<T>> {
        Ok(self.layers[2].forward(&self.features(seed)?))
    }
}

/// Metadata stored with the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMeta {
    pub format_version: u32,
    pub num_joints: usize,
    pub hidden: usize,
    /// Accelerations are divided by this before entering the networks.
    pub acc_scale: f64,
    pub x_layout: String,
    pub dropout: String,
}

pub const WEIGHT_FORMAT_VERSION: u32 = 1;
pub const X_LAYOUT: &str = "acc[6x3] then rot[6x3x3] row-major, world frame; sensors: \
left_forearm,right_forearm,left_lower_leg,right_lower_leg,head,pelvis";
pub const DROPOUT_CONVENTION: &str = "inverted; inference applies none";
pub const DEFAULT_ACC_SCALE: f64 = 30.0;

impl WeightMeta {
    pub fn new(num_joints: usize, hidden: usize) -> Self {
        Self {
            format_version: WEIGHT_FORMAT_VERSION,
            num_joints,
            hidden,
            acc_scale: DEFAULT_ACC_SCALE,
            x_layout: X_LAYOUT.into(),
            dropout: DROPOUT_CONVENTION.into(),
        }
    }
}

/// All seven networks of the estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct Networks<T: Scalar> {
    pub meta: WeightMeta,
    pub rnns: [LstmStack<T>; 5],
    pub init_pl: InitFcn<T>,
    pub init_va: InitFcn<T>,
}

impl<T: Scalar> Networks<T> {
    pub fn zeros(num_joints: usize, hidden: usize) -> Self {
        let make = |id: NetId| LstmStack::zeros(id.in_dim(num_joints), id.out_dim(num_joints), hidden, id.squashed());
        Self {
            meta: WeightMeta::new(num_joints, hidden),
            rnns: NetId::ALL.map(make),
            init_pl: InitFcn::zeros(3 * NUM_LEAVES, hidden),
            init_va: InitFcn::zeros(3 * num_joints, hidden),
        }
    }

    pub fn net(&self, id: NetId) -> &LstmStack<T> {
        &self.rnns[id.index()]
    }

    pub fn net_mut(&mut self, id: NetId) -> &mut LstmStack<T> {
        &mut self.rnns[id.index()]
    }

    pub fn num_joints(&self) -> usize {
        self.meta.num_joints
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.meta.num_joints;
        for id in NetId::ALL {
            let net = self.net(id);
            net.validate()?;
            if net.in_dim() != id.in_dim(j) || net.out_dim() != id.out_dim(j) {
                return Err(Error::Weights(format!(
                    "{} maps {} -> {}, expected {} -> {}",
                    id.name(),
                    net.in_dim(),
                    net.out_dim(),
                    id.in_dim(j),
                    id.out_dim(j)
                )));
            }
            if net.squash != id.squashed() {
                return Err(Error::Weights(format!("{} has the wrong output squashing", id.name())));
            }
        }
        self.init_pl.validate(self.net(NetId::PL).hidden())?;
        self.init_va.validate(self.net(NetId::VA).hidden())?;
        if self.init_pl.seed_dim() != 3 * NUM_LEAVES || self.init_va.seed_dim() != 3 * j {
            return Err(Error::Weights("initializer seed dimensions".into()));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Networks<U> {
        let m = |x: &DMatrix<T>| x.map(|v| lit::<U>(crate::scalar::to_f64(v)));
        let v = |x: &DVector<T>| x.map(|v| lit::<U>(crate::scalar::to_f64(v)));
        let d = |x: &Dense<T>| Dense {
            weight: m(&x.weight),
            bias: v(&x.bias),
        };
        let s = |x: &LstmStack<T>| LstmStack {
            input: d(&x.input),
            layers: x
                .layers
                .iter()
                .map(|l| LstmLayer {
                    w_ih: m(&l.w_ih),
                    w_hh: m(&l.w_hh),
                    b_ih: v(&l.b_ih),
                    b_hh: v(&l.b_hh),
                })
                .collect(),
            output: d(&x.output),
            squash: x.squash,
        };
        let f = |x: &InitFcn<T>| InitFcn {
            layers: [d(&x.layers[0]), d(&x.layers[1]), d(&x.layers[2])],
        };
        Networks {
            meta: self.meta.clone(),
            rnns: [s(&self.rnns[0]), s(&self.rnns[1]), s(&self.rnns[2]), s(&self.rnns[3]), s(&self.rnns[4])],
            init_pl: f(&self.init_pl),
            init_va: f(&self.init_va),
        }
    }
}

/// Per-frame output of the estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionStatus<T: Scalar> {
    /// `6J`: root global orientation, then the other joints relative to the root.
    pub phi: DVector<T>,
    /// `3J` joint velocities in the root frame, m/s.
    pub v: DVector<T>,
    /// Left and right foot contact probabilities.
    pub c: [T; 2],
}

impl<T: Scalar> MotionStatus<T> {
    pub fn num_joints(&self) -> usize {
        self.phi.len() / 6
    }

    /// Global joint orientations `G_0 = Φ_0`, `G_j = Φ_0 Φ_j`.
    pub fn global_rotations(&self) -> Result<Vec<Matrix3<T>>> {
        let n = self.num_joints();
        let root = rot6d_to_matrix(self.phi.rows(0, 6).as_slice())?;
        let mut out = Vec::with_capacity(n);
        out.push(root);
        for j in 1..n {
            out.push(root * rot6d_to_matrix(self.phi.rows(6 * j, 6).as_slice())?);
        }
        Ok(out)
    }

    /// Parent-relative orientations `L_j = G_parentᵀ G_j`.
    pub fn local_rotations(&self, tree: &KinematicTree<T>) -> Result<Vec<Matrix3<T>>> {
        let g = self.global_rotations()?;
        Ok((0..g.len())
            .map(|j| match tree.parent(j) {
                None => g[j],
                Some(p) => g[p].transpose() * g[j],
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorOutput<T: Scalar> {
    pub status: MotionStatus<T>,
    pub p_leaf: DVector<T>,
    pub p: DVector<T>,
}

/// Recurrent state of all five networks for one sequence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EstimatorState<T: Scalar> {
    nets: Option<Vec<LstmState<T>>>,
}

impl<T: Scalar> EstimatorState<T> {
    pub fn uninitialized() -> Self {
        Self { nets: None }
    }

    pub fn is_initialized(&self) -> bool {
        self.nets.is_some()
    }

    pub fn net(&self, id: NetId) -> Option<&LstmState<T>> {
        self.nets.as_ref().map(|n| &n[id.index()])
    }
}

/// Pelvis orientation carried in the last rotation block of `x`.
pub fn root_rotation_from_input<T: Scalar>(x: &DVector<T>) -> Matrix3<T> {
    let base = 18 + 5 * 9;
    Matrix3::from_fn(|r, c| x[base + 3 * r + c])
}

/// Root-relative positions of `joints` at configuration `q`.
pub fn root_relative_positions<T: Scalar>(tree: &KinematicTree<T>, q: &DVector<T>, joints: &[usize]) -> DVector<T> {
    let fk = forward_kinematics(tree, q);
    let rt = fk.rotations[0].transpose();
    let mut out = DVector::zeros(3 * joints.len());
    for (k, &j) in joints.iter().enumerate() {
        out.fixed_rows_mut::<3>(3 * k)
            .copy_from(&(rt * (fk.positions[j] - fk.positions[0])));
    }
    out
}

/// The estimator: immutable networks plus inference routines.
#[derive(Debug, Clone)]
pub struct Estimator<T: Scalar> {
    nets: Networks<T>,
}

impl<T: Scalar> Estimator<T> {
    pub fn new(nets: Networks<T>) -> Result<Self> {
        nets.validate()?;
        Ok(Self { nets })
    }

    pub fn networks(&self) -> &Networks<T> {
        &self.nets
    }

    pub fn num_joints(&self) -> usize {
        self.nets.num_joints()
    }

    /// Hidden state for one network from its initializer.
    pub fn init_hidden_from_pose(fcn: &InitFcn<T>, net: &LstmStack<T>, seed: &DVector<T>) -> Result<LstmState<T>> {
        let flat = fcn.forward(seed)?;
        LstmState::from_flat(&flat, net.layers.len(), net.hidden())
    }

    /// Learned initialization from the initial leaf positions (root-relative)
    /// and joint velocities (root frame).
    pub fn init_state(&self, p_leaf0: &DVector<T>, v0: &DVector<T>) -> Result<EstimatorState<T>> {
        let mut states: Vec<LstmState<T>> = NetId::ALL.iter().map(|&id| self.nets.net(id).zero_state()).collect();
        states[NetId::PL.index()] = Self::init_hidden_from_pose(&self.nets.init_pl, self.nets.net(NetId::PL), p_leaf0)?;
        states[NetId::VA.index()] = Self::init_hidden_from_pose(&self.nets.init_va, self.nets.net(NetId::VA), v0)?;
        Ok(EstimatorState { nets: Some(states) })
    }

    /// Conventional zero initialization of every network.
    pub fn zero_state(&self) -> EstimatorState<T> {
        EstimatorState {
            nets: Some(NetId::ALL.iter().map(|&id| self.nets.net(id).zero_state()).collect()),
        }
    }

    /// Learned initialization seeded by a configuration at rest (e.g. the calibration pose).
    pub fn init_state_from_pose(&self, tree: &KinematicTree<T>, q0: &DVector<T>) -> Result<EstimatorState<T>> {
        let p_leaf0 = root_relative_positions(tree, q0, &tree.leaf_ids);
        self.init_state(&p_leaf0, &DVector::zeros(3 * tree.num_joints()))
    }

    /// Processes one frame. On failure the state is left untouched.
    pub fn step(&self, state: &mut EstimatorState<T>, x: &DVector<T>) -> Result<EstimatorOutput<T>> {
        let nets = state.nets.as_ref().ok_or(Error::UninitializedState)?;
        if x.len() != IMU_DIM {
            return Err(Error::Shape {
                what: "IMU input",
                expected: IMU_DIM,
                actual: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("IMU input"));
        }
        let mut next = nets.clone();
        let concat = |a: &DVector<T>| {
            let mut v = DVector::zeros(a.len() + IMU_DIM);
            v.rows_mut(0, a.len()).copy_from(a);
            v.rows_mut(a.len(), IMU_DIM).copy_from(x);
            v
        };
        let j = self.num_joints();
        let p_leaf = self.nets.net(NetId::PL).step(x, &mut next[NetId::PL.index()])?;
        let p = self.nets.net(NetId::PA).step(&concat(&p_leaf), &mut next[NetId::PA.index()])?;
        let px = concat(&p);
        let r = self.nets.net(NetId::RA).step(&px, &mut next[NetId::RA.index()])?;
        let v = self.nets.net(NetId::VA).step(&px, &mut next[NetId::VA.index()])?;
        let c = self.nets.net(NetId::CF).step(&px, &mut next[NetId::CF.index()])?;
        let finite = [&p_leaf, &p, &r, &v, &c].iter().all(|o| o.iter().all(|e| e.is_finite()));
        if !finite {
            return Err(Error::NonFinite("estimator output"));
        }
        let mut phi = DVector::zeros(6 * j);
        let root = matrix_to_rot6d(&root_rotation_from_input(x));
        phi.rows_mut(0, 6).copy_from_slice(&root);
        phi.rows_mut(6, 6 * (j - 1)).copy_from(&r);
        state.nets = Some(next);
        Ok(EstimatorOutput {
            status: MotionStatus {
                phi,
                v,
                c: [c[0], c[1]],
            },
            p_leaf,
            p,
        })
    }

    pub fn run_sequence(&self, state: &mut EstimatorState<T>, xs: &[DVector<T>]) -> Result<Vec<EstimatorOutput<T>>> {
        xs.iter().map(|x| self.step(state, x)).collect()
    }
}
