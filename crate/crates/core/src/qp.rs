//! Dense convex quadratic programming.
//!
//! ```text
//!     minimize    ½ zᵀ H z + gᵀ z
//!     subject to  A_eq z  = b_eq
//!                 A_in z <= b_in
//! ```
//!
//! Equalities are eliminated once per solve through a pivoted Householder QR
//! of `A_eqᵀ` (null-space method). The reduced inequality-constrained problem
//! is solved by a primal-dual interior point method with Mehrotra correction,
//! where the step length is cut back whenever the mean complementarity would
//! increase. A final active-set polish re-solves the KKT system on the
//! identified active set and is kept only if it is at least as accurate.
//!
//! Reported KKT residuals are scaled by `1 + (size of the quantities involved)`
//! so a single tolerance serves problems in newtons and in radians alike.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct QpProblem<T: Scalar> {
    pub h: DMatrix<T>,
    pub g: DVector<T>,
    pub a_eq: DMatrix<T>,
    pub b_eq: DVector<T>,
    pub a_in: DMatrix<T>,
    pub b_in: DVector<T>,
    /// Inequality rows that may be softened when the constraint set is infeasible.
    #[serde(default)]
    pub relaxable: Vec<usize>,
}

impl<T: Scalar> QpProblem<T> {
    pub fn unconstrained(h: DMatrix<T>, g: DVector<T>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            relaxable: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, z: &DVector<T>) -> T {
        (z.transpose() * &self.h * z)[(0, 0)] * lit(0.5) + self.g.dot(z)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.g.len();
        let shape = |what, expected, actual| Error::Shape { what, expected, actual };
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(shape("QP Hessian", n, self.h.nrows()));
        }
        if self.a_eq.ncols() != n {
            return Err(shape("QP equality columns", n, self.a_eq.ncols()));
        }
        if self.a_eq.nrows() != self.b_eq.len() {
            return Err(shape("QP equality rows", self.a_eq.nrows(), self.b_eq.len()));
        }
        if self.a_in.ncols() != n {
            return Err(shape("QP inequality columns", n, self.a_in.ncols()));
        }
        if self.a_in.nrows() != self.b_in.len() {
            return Err(shape("QP inequality rows", self.a_in.nrows(), self.b_in.len()));
        }
        if let Some(&r) = self.relaxable.iter().find(|&&r| r >= self.b_in.len()) {
            return Err(Error::Qp(format!("relaxable row {r} out of range")));
        }
        let finite = self
            .h
            .iter()
            .chain(self.g.iter())
            .chain(self.a_eq.iter())
            .chain(self.b_eq.iter())
            .chain(self.a_in.iter())
            .chain(self.b_in.iter())
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::NonFinite("QP data"));
        }
        let asym = (&self.h - self.h.transpose()).amax();
        if asym > lit::<T>(1e-10) * (T::one() + self.h.amax()) {
            return Err(Error::Qp("Hessian is not symmetric".into()));
        }
        Ok(())
    }

    /// Writes the problem as JSON for offline inspection.
    pub fn dump(&self, path: impl AsRef<Path>) -> Result<()>
    where
        T: Serialize,
    {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Qp(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_dump(path: impl AsRef<Path>) -> Result<Self>
    where
        T: for<'a> Deserialize<'a>,
    {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Qp(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    MaxIter,
    InfeasibleRelaxed,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals<T> {
    pub primal_eq: T,
    pub primal_in: T,
    pub stationarity: T,
    pub complementarity: T,
}

/// One interior-point iteration, for convergence audits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterLog<T> {
    pub mu: T,
    pub primal_residual: T,
    pub dual_residual: T,
    pub objective: T,
    pub step: T,
}

#[derive(Debug, Clone)]
pub struct QpSolution<T: Scalar> {
    pub z: DVector<T>,
    pub status: QpStatus,
    pub kkt: KktResiduals<T>,
    pub iterations: usize,
    /// Multipliers of the equality rows.
    pub eq_multipliers: DVector<T>,
    /// Multipliers of the inequality rows (nonnegative).
    pub in_multipliers: DVector<T>,
    /// Amount each relaxable row was softened by; empty unless relaxed.
    pub relaxation: Vec<(usize, T)>,
    pub polished: bool,
    pub trace: Vec<IterLog<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpSettings {
    pub tol_eq: f64,
    pub tol_in: f64,
    pub tol_stat: f64,
    pub tol_comp: f64,
    pub max_iter: usize,
    /// Quadratic penalty weight on relaxation slacks.
    pub relax_weight: f64,
    /// Diagonal regularization used when factorizing.
    pub regularization: f64,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol_eq: 1e-8,
            tol_in: 1e-8,
            tol_stat: 1e-8,
            tol_comp: 1e-8,
            max_iter: 200,
            relax_weight: 1e6,
            regularization: 1e-10,
            polish: true,
        }
    }
}

// ---------------------------------------------------------------------------
// Householder QR with column pivoting

struct PivotedQr<T: Scalar> {
    /// Upper-trapezoidal factor (`rows × cols`).
    r: DMatrix<T>,
    /// Householder vectors; reflector `k` acts on rows `k..`.
    reflectors: Vec<(DVector<T>, T)>,
    /// `perm[k]` = original column placed at position `k`.
    perm: Vec<usize>,
    rank: usize,
}

impl<T: Scalar> PivotedQr<T> {
    fn new(mut a: DMatrix<T>) -> Self {
        let (rows, cols) = a.shape();
        let steps = rows.min(cols);
        let mut perm: Vec<usize> = (0..cols).collect();
        let mut reflectors = Vec::with_capacity(steps);
        for k in 0..steps {
            let mut best = k;
            let mut best_norm = T::zero();
            for j in k..cols {
                let nrm = a.view((k, j), (rows - k, 1)).norm_squared();
                if nrm > best_norm {
                    best_norm = nrm;
                    best = j;
                }
            }
            if best != k {
                a.swap_columns(k, best);
                perm.swap(k, best);
            }
            let x = a.view((k, k), (rows - k, 1)).column(0).into_owned();
            let norm = x.norm();
            let mut v = x;
            let alpha = if v[0] > T::zero() { -norm } else { norm };
            v[0] -= alpha;
            let vv = v.norm_squared();
            let beta = if vv > T::zero() { lit::<T>(2.0) / vv } else { T::zero() };
            for j in (k + 1)..cols {
                let mut col = a.view_mut((k, j), (rows - k, 1));
                let s = v.dot(&col.column(0)) * beta;
                col.column_mut(0).axpy(-s, &v, T::one());
            }
            a[(k, k)] = alpha;
            for i in (k + 1)..rows {
                a[(i, k)] = T::zero();
            }
            reflectors.push((v, beta));
        }
        let scale = if steps > 0 { a[(0, 0)].abs() } else { T::zero() };
        let tol = scale * T::default_epsilon() * lit((rows.max(cols) * 16) as f64);
        let rank = (0..steps).take_while(|&k| a[(k, k)].abs() > tol).count();
        Self {
            r: a,
            reflectors,
            perm,
            rank,
        }
    }

    /// `x ← Q x`.
    fn apply_q(&self, x: &mut DMatrix<T>) {
        for (k, (v, beta)) in self.reflectors.iter().enumerate().rev() {
            let rows = x.nrows() - k;
            for j in 0..x.ncols() {
                let mut col = x.view_mut((k, j), (rows, 1));
                let s = v.dot(&col.column(0)) * *beta;
                if s != T::zero() {
                    col.column_mut(0).axpy(-s, v, T::one());
                }
            }
        }
    }

    /// `x ← Qᵀ x`.
    fn apply_qt(&self, x: &mut DVector<T>) {
        for (k, (v, beta)) in self.reflectors.iter().enumerate() {
            let mut seg = x.rows_mut(k, x.len() - k);
            let s = v.dot(&seg) * *beta;
            seg.axpy(-s, v, T::one());
        }
    }
}

// ---------------------------------------------------------------------------
// Solver

struct Reduced<T: Scalar> {
    z0: DVector<T>,
    basis: DMatrix<T>,
    qr: Option<PivotedQr<T>>,
}

fn eliminate_equalities<T: Scalar>(p: &QpProblem<T>) -> Result<Reduced<T>> {
    let n = p.num_vars();
    let m = p.a_eq.nrows();
    if m == 0 {
        return Ok(Reduced {
            z0: DVector::zeros(n),
            basis: DMatrix::identity(n, n),
            qr: None,
        });
    }
    let qr = PivotedQr::new(p.a_eq.transpose());
    let r = qr.rank;
    // Pᵀ A_eq = Rᵀ Qᵀ, so with y = Qᵀ z: R11ᵀ y1 = (Pᵀ b)[..r].
    let pb = DVector::from_fn(m, |k, _| p.b_eq[qr.perm[k]]);
    let mut y1 = DVector::zeros(n);
    for i in 0..r {
        let mut s = pb[i];
        for k in 0..i {
            s -= qr.r[(k, i)] * y1[k];
        }
        y1[i] = s / qr.r[(i, i)];
    }
    let mut z0m = DMatrix::from_column_slice(n, 1, y1.as_slice());
    qr.apply_q(&mut z0m);
    let z0 = z0m.column(0).into_owned();
    let resid = (&p.a_eq * &z0 - &p.b_eq).amax();
    if resid > lit::<T>(1e-8) * (T::one() + p.b_eq.amax()) {
        return Err(Error::Qp(format!(
            "equality constraints are inconsistent (residual {resid})"
        )));
    }
    let mut basis = DMatrix::zeros(n, n - r);
    for j in 0..(n - r) {
        basis[(r + j, j)] = T::one();
    }
    qr.apply_q(&mut basis);
    Ok(Reduced {
        z0,
        basis,
        qr: Some(qr),
    })
}

fn fraction_to_boundary<T: Scalar>(x: &DVector<T>, dx: &DVector<T>) -> T {
    let mut alpha = T::one();
    for (xi, di) in x.iter().zip(dx.iter()) {
        if *di < T::zero() {
            alpha = alpha.min(-*xi / *di);
        }
    }
    alpha
}

struct IpOutcome<T: Scalar> {
    w: DVector<T>,
    y: DVector<T>,
    iterations: usize,
    converged: bool,
    infeasible: bool,
    trace: Vec<IterLog<T>>,
}

/// Interior point on `min ½wᵀHw + gᵀw  s.t.  G w ≤ c` (rows of `G` unit-norm).
fn interior_point<T: Scalar>(
    h: &DMatrix<T>,
    g: &DVector<T>,
    gm: &DMatrix<T>,
    c: &DVector<T>,
    warm: Option<&DVector<T>>,
    settings: &QpSettings,
) -> Result<IpOutcome<T>> {
    let nr = g.len();
    let mi = c.len();
    let reg = lit::<T>(settings.regularization);
    let gt = gm.transpose();
    let factor = |d: &DVector<T>| -> Result<nalgebra::Cholesky<T, nalgebra::Dyn>> {
        let mut k = h.clone();
        let scaled = DMatrix::from_fn(mi, nr, |i, j| gm[(i, j)] * d[i]);
        k.gemm(T::one(), &gt, &scaled, T::one());
        for i in 0..nr {
            k[(i, i)] += reg * (T::one() + h[(i, i)].abs());
        }
        k.cholesky()
            .ok_or_else(|| Error::Qp("reduced Hessian is not positive semidefinite".into()))
    };

    // Starting point: minimize with unit slack weights, then shift into the interior.
    let ones = DVector::from_element(mi, T::one());
    let w = match warm {
        Some(w) => w.clone(),
        None => {
            let chol = factor(&ones)?;
            chol.solve(&(-g + &gt * c))
        }
    };
    let mut w = w;
    let mut s = c - gm * &w;
    // Multipliers: least-squares fit of stationarity at w, clipped below.
    let mut y = {
        let mut ggt = gm * &gt;
        for i in 0..mi {
            ggt[(i, i)] += lit::<T>(1e-8);
        }
        let rhs = -(gm * (h * &w + g));
        ggt.cholesky().map_or_else(|| -s.clone(), |c| c.solve(&rhs))
    };
    let data_norm = h.amax().max(g.amax()).max(c.amax()).max(T::one());
    let floor = data_norm.sqrt();
    s.apply(|v| *v = v.max(floor));
    y.apply(|v| *v = v.max(floor));

    let scale_d = T::one() + g.amax();
    let scale_p = T::one() + c.amax();
    let m_t = lit::<T>(mi as f64);
    let mu0 = s.dot(&y) / m_t;
    let r0 = ((h * &w + g + &gt * &y).amax() / scale_d).max((gm * &w + &s - c).amax() / scale_p);
    let ratio0 = r0 / mu0;
    let beta = lit::<T>(10.0);
    let gamma = (s.component_mul(&y).min() / mu0 * lit(0.5)).min(lit(1e-3));
    let mut trace = Vec::new();
    let mut tiny_steps = 0;
    let mut converged = false;
    let mut infeasible = false;
    let mut iterations = 0;
    let tol_d = lit::<T>(settings.tol_stat * 0.1);
    let tol_p = lit::<T>(settings.tol_in * 0.1);
    let tol_mu = lit::<T>(settings.tol_comp * 0.01);

    for it in 0..settings.max_iter {
        iterations = it;
        let r_d = h * &w + g + &gt * &y;
        let r_p = gm * &w + &s - c;
        let mu = s.dot(&y) / m_t;
        let rd_n = r_d.amax() / scale_d;
        let rp_n = r_p.amax() / scale_p;
        if rd_n <= tol_d && rp_n <= tol_p && mu <= tol_mu * scale_p {
            converged = true;
            break;
        }
        if y.amax() > lit::<T>(1e14) * scale_d {
            infeasible = true;
            break;
        }

        let d = y.component_div(&s);
        let chol = match factor(&d) {
            Ok(c) => c,
            Err(_) => break,
        };
        let solve_dir = |r_c: &DVector<T>| -> (DVector<T>, DVector<T>, DVector<T>) {
            // dy = S⁻¹(r_c + Y r_p + Y G dw), ds = -r_p - G dw
            let t = (r_c + y.component_mul(&r_p)).component_div(&s);
            let rhs = -&r_d - &gt * &t;
            let dw = chol.solve(&rhs);
            let gdw = gm * &dw;
            let ds = -&r_p - &gdw;
            let dy = t + d.component_mul(&gdw);
            (dw, ds, dy)
        };

        let sy = s.component_mul(&y);
        let rc_aff = -&sy;
        let (_, ds_a, dy_a) = solve_dir(&rc_aff);
        let a_aff = fraction_to_boundary(&s, &ds_a).min(fraction_to_boundary(&y, &dy_a));
        let mu_aff = (&s + &ds_a * a_aff).dot(&(&y + &dy_a * a_aff)) / m_t;
        let sigma = {
            let r = (mu_aff / mu).max(T::zero()).min(T::one());
            (r * r * r).min(lit(0.9))
        };
        let mut rc = -&sy;
        rc.add_scalar_mut(sigma * mu);
        let corrected = &rc - ds_a.component_mul(&dy_a);
        // Keep the corrector only while it still decreases sᵀy to first order.
        let use_corrector = corrected.sum() < -lit::<T>(0.05) * sy.sum();

        // Step length: fraction to the boundary, then backtrack until the
        // iterate stays in the neighborhood of the central path.
        let r_now = rd_n.max(rp_n);
        let step_len = |ds: &DVector<T>, dy: &DVector<T>| -> T {
            let a_max = fraction_to_boundary(&s, ds).min(fraction_to_boundary(&y, dy));
            let mut alpha = (a_max * lit(0.995)).min(T::one());
            for _ in 0..60 {
                let prod = (&s + ds * alpha).component_mul(&(&y + dy * alpha));
                let mu_new = prod.sum() / m_t;
                let r_new = r_now * (T::one() - alpha);
                if mu_new <= mu && prod.min() >= gamma * mu_new && r_new <= beta * ratio0 * mu_new {
                    return alpha;
                }
                alpha *= lit(0.7);
            }
            T::zero()
        };
        let (mut dw, mut ds, mut dy) = solve_dir(if use_corrector { &corrected } else { &rc });
        let mut alpha = step_len(&ds, &dy);
        if alpha < lit(0.1) {
            let mut rc_c = -&sy;
            rc_c.add_scalar_mut(lit::<T>(0.5) * mu);
            let (dw2, ds2, dy2) = solve_dir(&rc_c);
            let alpha2 = step_len(&ds2, &dy2);
            if alpha2 > alpha {
                (dw, ds, dy, alpha) = (dw2, ds2, dy2, alpha2);
            }
        }
        w += &dw * alpha;
        s += &ds * alpha;
        y += &dy * alpha;
        let objective = (w.transpose() * h * &w)[(0, 0)] * lit(0.5) + g.dot(&w);
        trace.push(IterLog {
            mu: s.dot(&y) / m_t,
            primal_residual: r_p.amax() * (T::one() - alpha),
            dual_residual: r_d.amax() * (T::one() - alpha),
            objective,
            step: alpha,
        });
        if alpha < lit(1e-10) {
            tiny_steps += 1;
            if tiny_steps >= 3 {
                infeasible = rp_n > tol_p;
                break;
            }
        } else {
            tiny_steps = 0;
        }
        iterations = it + 1;
    }
    if !converged && !infeasible {
        let r_p = gm * &w + &s - c;
        infeasible = r_p.amax() / scale_p > lit(settings.tol_in);
    }
    Ok(IpOutcome {
        w,
        y,
        iterations,
        converged,
        infeasible,
        trace,
    })
}

/// Re-solves the KKT system with the constraints flagged active by the
/// interior point treated as equalities.
fn polish<T: Scalar>(
    h: &DMatrix<T>,
    g: &DVector<T>,
    gm: &DMatrix<T>,
    c: &DVector<T>,
    w_ip: &DVector<T>,
    y_ip: &DVector<T>,
    settings: &QpSettings,
) -> Option<(DVector<T>, DVector<T>)> {
    let nr = g.len();
    let slack = c - gm * w_ip;
    let active: Vec<usize> = (0..c.len()).filter(|&i| y_ip[i] > slack[i]).collect();
    let na = active.len();
    let dim = nr + na;
    let mut k = DMatrix::zeros(dim, dim);
    k.view_mut((0, 0), (nr, nr)).copy_from(h);
    for (r, &i) in active.iter().enumerate() {
        for j in 0..nr {
            k[(nr + r, j)] = gm[(i, j)];
            k[(j, nr + r)] = gm[(i, j)];
        }
    }
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, nr).copy_from(&(-g));
    for (r, &i) in active.iter().enumerate() {
        rhs[nr + r] = c[i];
    }
    let delta = lit::<T>(settings.regularization.max(1e-12));
    let mut kreg = k.clone();
    for i in 0..nr {
        kreg[(i, i)] += delta;
    }
    for i in nr..dim {
        kreg[(i, i)] -= delta;
    }
    let lu = kreg.lu();
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..5 {
        let res = &rhs - &k * &sol;
        let corr = lu.solve(&res)?;
        sol += corr;
    }
    if !sol.iter().all(|x| x.is_finite()) {
        return None;
    }
    let w = sol.rows(0, nr).into_owned();
    let mut y = DVector::zeros(c.len());
    for (r, &i) in active.iter().enumerate() {
        y[i] = sol[nr + r];
    }
    let scale = T::one() + c.amax();
    let feas_tol = lit::<T>(settings.tol_in * 0.1) * scale;
    if (gm * &w - c).max() > feas_tol {
        return None;
    }
    let ytol = lit::<T>(settings.tol_stat * 0.1) * (T::one() + g.amax());
    if y.min() < -ytol {
        return None;
    }
    Some((w, y.map(|v| v.max(T::zero()))))
}

/// Solves the QP. `warm` is an optional starting iterate (e.g. the previous
/// frame's solution).
pub fn solve_qp<T: Scalar>(p: &QpProblem<T>, settings: &QpSettings, warm: Option<&DVector<T>>) -> Result<QpSolution<T>> {
    p.validate()?;
    let first = solve_once(p, settings, warm)?;
    if first.solution.status == QpStatus::Optimal || p.relaxable.is_empty() || !first.infeasible {
        return Ok(first.solution);
    }
    log::debug!("QP infeasible; retrying with {} relaxed rows", p.relaxable.len());
    let relaxed = relax(p, settings.relax_weight);
    // Start with each relaxed row satisfied by its slack.
    let z_prev = &first.solution.z;
    let viol = &p.a_in * z_prev - &p.b_in;
    let mut start = DVector::zeros(relaxed.num_vars());
    start.rows_mut(0, p.num_vars()).copy_from(z_prev);
    for (k, &row) in p.relaxable.iter().enumerate() {
        start[p.num_vars() + k] = viol[row].max(T::zero());
    }
    let mut out = solve_once(&relaxed, settings, Some(&start))?.solution;
    let n = p.num_vars();
    let slacks: Vec<(usize, T)> = p
        .relaxable
        .iter()
        .enumerate()
        .map(|(k, &row)| (row, out.z[n + k]))
        .collect();
    out.z = out.z.rows(0, n).into_owned();
    out.in_multipliers = out.in_multipliers.rows(0, p.b_in.len()).into_owned();
    out.kkt = kkt_residuals(p, &out.z, &out.eq_multipliers, &out.in_multipliers, &slacks);
    out.status = QpStatus::InfeasibleRelaxed;
    out.relaxation = slacks;
    Ok(out)
}

fn relax<T: Scalar>(p: &QpProblem<T>, weight: f64) -> QpProblem<T> {
    let n = p.num_vars();
    let k = p.relaxable.len();
    let mut h = DMatrix::zeros(n + k, n + k);
    h.view_mut((0, 0), (n, n)).copy_from(&p.h);
    for i in 0..k {
        h[(n + i, n + i)] = lit::<T>(2.0 * weight);
    }
    let mut g = DVector::zeros(n + k);
    g.rows_mut(0, n).copy_from(&p.g);
    let mut a_eq = DMatrix::zeros(p.a_eq.nrows(), n + k);
    a_eq.view_mut((0, 0), (p.a_eq.nrows(), n)).copy_from(&p.a_eq);
    let mut a_in = DMatrix::zeros(p.a_in.nrows(), n + k);
    a_in.view_mut((0, 0), (p.a_in.nrows(), n)).copy_from(&p.a_in);
    for (i, &row) in p.relaxable.iter().enumerate() {
        a_in[(row, n + i)] = -T::one();
    }
    QpProblem {
        h,
        g,
        a_eq,
        b_eq: p.b_eq.clone(),
        a_in,
        b_in: p.b_in.clone(),
        relaxable: Vec::new(),
    }
}

struct Attempt<T: Scalar> {
    solution: QpSolution<T>,
    infeasible: bool,
}

fn solve_once<T: Scalar>(p: &QpProblem<T>, settings: &QpSettings, warm: Option<&DVector<T>>) -> Result<Attempt<T>> {
    let red = eliminate_equalities(p)?;
    let zt = red.basis.transpose();
    let hz = &p.h * &red.basis;
    let h_r = {
        let mut m = &zt * &hz;
        // symmetrize against rounding
        let t = m.transpose();
        m += t;
        m *= lit::<T>(0.5);
        m
    };
    let g_r = &zt * (&p.h * &red.z0 + &p.g);
    let mi = p.b_in.len();
    let nr = g_r.len();

    let (w, y_in, iterations, converged, infeasible, trace, polished) = if mi == 0 {
        let mut k = h_r.clone();
        let reg = lit::<T>(settings.regularization);
        for i in 0..nr {
            let kii = k[(i, i)];
            k[(i, i)] += reg * (T::one() + kii.abs());
        }
        let chol = k
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Qp("reduced Hessian is not positive semidefinite".into()))?;
        let mut w = chol.solve(&(-&g_r));
        for _ in 0..3 {
            let res = -&g_r - &h_r * &w;
            w += chol.solve(&res);
        }
        (w, DVector::zeros(0), 1, true, false, Vec::new(), false)
    } else {
        let gm_raw = &p.a_in * &red.basis;
        let c_raw = &p.b_in - &p.a_in * &red.z0;
        // Row-normalize: scaled multipliers map back as y = ỹ / ‖row‖.
        let norms = DVector::from_fn(mi, |i, _| {
            let nrm = gm_raw.row(i).norm();
            if nrm > T::tiny() {
                nrm
            } else {
                T::one()
            }
        });
        let gm = DMatrix::from_fn(mi, nr, |i, j| gm_raw[(i, j)] / norms[i]);
        let c = c_raw.component_div(&norms);
        let warm_w = warm.map(|z| &zt * (z - &red.z0));
        let ip = interior_point(&h_r, &g_r, &gm, &c, warm_w.as_ref(), settings)?;
        let mut w = ip.w.clone();
        let mut y = ip.y.clone();
        let mut polished = false;
        if settings.polish && !ip.infeasible {
            if let Some((wp, yp)) = polish(&h_r, &g_r, &gm, &c, &ip.w, &ip.y, settings) {
                let score = |w: &DVector<T>, y: &DVector<T>| {
                    let rd = (&h_r * w + &g_r + gm.transpose() * y).amax();
                    let rp = (&gm * w - &c).max().max(T::zero());
                    let slack = &c - &gm * w;
                    let comp = slack.component_mul(y).amax();
                    rd.max(rp).max(comp)
                };
                if score(&wp, &yp) <= score(&ip.w, &ip.y.map(|v| v.max(T::zero()))) {
                    w = wp;
                    y = yp;
                    polished = true;
                }
            }
        }
        let y_orig = y.component_div(&norms).map(|v| v.max(T::zero()));
        (w, y_orig, ip.iterations, ip.converged || polished, ip.infeasible, ip.trace, polished)
    };

    let z = &red.z0 + &red.basis * &w;
    let nu = eq_multipliers(p, &red, &z, &y_in);
    let kkt = kkt_residuals(p, &z, &nu, &y_in, &[]);
    let ok = converged
        && kkt.primal_eq <= lit(settings.tol_eq)
        && kkt.primal_in <= lit(settings.tol_in)
        && kkt.stationarity <= lit(settings.tol_stat)
        && kkt.complementarity <= lit(settings.tol_comp);
    Ok(Attempt {
        solution: QpSolution {
            z,
            status: if ok { QpStatus::Optimal } else { QpStatus::MaxIter },
            kkt,
            iterations,
            eq_multipliers: nu,
            in_multipliers: y_in,
            relaxation: Vec::new(),
            polished,
            trace,
        },
        infeasible,
    })
}

/// Least-squares equality multipliers from stationarity.
fn eq_multipliers<T: Scalar>(p: &QpProblem<T>, red: &Reduced<T>, z: &DVector<T>, y: &DVector<T>) -> DVector<T> {
    let m = p.a_eq.nrows();
    let Some(qr) = red.qr.as_ref() else {
        return DVector::zeros(m);
    };
    let mut r = &p.h * z + &p.g;
    if !y.is_empty() {
        r += p.a_in.transpose() * y;
    }
    // A_eqᵀ ν = -r with A_eqᵀ P = Q R.
    let mut rhs = -r;
    qr.apply_qt(&mut rhs);
    let k = qr.rank;
    let mut t = DVector::zeros(m);
    for i in (0..k).rev() {
        let mut s = rhs[i];
        for j in (i + 1)..k {
            s -= qr.r[(i, j)] * t[j];
        }
        t[i] = s / qr.r[(i, i)];
    }
    let mut nu = DVector::zeros(m);
    for (pos, &orig) in qr.perm.iter().enumerate() {
        nu[orig] = t[pos];
    }
    nu
}

/// Scaled KKT residuals at `z`. `softened` lists relaxed rows and their slack.
pub fn kkt_residuals<T: Scalar>(
    p: &QpProblem<T>,
    z: &DVector<T>,
    nu: &DVector<T>,
    y: &DVector<T>,
    softened: &[(usize, T)],
) -> KktResiduals<T> {
    let one = T::one();
    let primal_eq = if p.b_eq.is_empty() {
        T::zero()
    } else {
        (&p.a_eq * z - &p.b_eq).amax() / (one + p.b_eq.amax())
    };
    let (primal_in, complementarity) = if p.b_in.is_empty() {
        (T::zero(), T::zero())
    } else {
        let mut slack = &p.b_in - &p.a_in * z;
        for &(row, e) in softened {
            slack[row] += e;
        }
        let viol = (-slack.min()).max(T::zero()) / (one + p.b_in.amax());
        let comp = slack.component_mul(y).amax() / ((one + y.amax()) * (one + p.b_in.amax()));
        (viol, comp)
    };
    let hz = &p.h * z;
    let aeq_nu = if nu.is_empty() {
        DVector::zeros(z.len())
    } else {
        p.a_eq.transpose() * nu
    };
    let ain_y = if y.is_empty() {
        DVector::zeros(z.len())
    } else {
        p.a_in.transpose() * y
    };
    let stat = (&hz + &p.g + &aeq_nu + &ain_y).amax();
    let scale = one + hz.amax().max(p.g.amax()).max(aeq_nu.amax()).max(ain_y.amax());
    KktResiduals {
        primal_eq,
        primal_in,
        stationarity: stat / scale,
        complementarity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unconstrained_minimum_at_origin() {
        let p = QpProblem::unconstrained(DMatrix::<f64>::identity(3, 3), DVector::zeros(3));
        let s = solve_qp(&p, &QpSettings::default(), None).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!(s.z.amax() < 1e-14);
    }

    #[test]
    fn symmetric_equality() {
        let mut p = QpProblem::unconstrained(DMatrix::<f64>::identity(2, 2), DVector::zeros(2));
        p.a_eq = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        p.b_eq = DVector::from_vec(vec![2.0]);
        let s = solve_qp(&p, &QpSettings::default(), None).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_relative_eq!(s.z, DVector::from_vec(vec![1.0, 1.0]), epsilon = 1e-12);
        assert_relative_eq!(s.eq_multipliers[0], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn single_active_inequality() {
        // min ½(x² + y²) - x - y  s.t. x + y ≤ 1  → (½, ½), multiplier ½
        let mut p = QpProblem::unconstrained(DMatrix::<f64>::identity(2, 2), DVector::from_vec(vec![-1.0, -1.0]));
        p.a_in = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        p.b_in = DVector::from_vec(vec![1.0]);
        let s = solve_qp(&p, &QpSettings::default(), None).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_relative_eq!(s.z, DVector::from_vec(vec![0.5, 0.5]), epsilon = 1e-10);
        assert_relative_eq!(s.in_multipliers[0], 0.5, epsilon = 1e-10);
    }

    #[test]
    fn rejects_non_finite_and_bad_shapes() {
        let mut p = QpProblem::unconstrained(DMatrix::<f64>::identity(2, 2), DVector::zeros(2));
        p.g[0] = f64::NAN;
        assert!(matches!(solve_qp(&p, &QpSettings::default(), None), Err(Error::NonFinite(_))));
        let p = QpProblem::unconstrained(DMatrix::<f64>::identity(3, 3), DVector::zeros(2));
        assert!(matches!(solve_qp(&p, &QpSettings::default(), None), Err(Error::Shape { .. })));
    }

    #[test]
    fn rejects_nonconvex() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let p = QpProblem::unconstrained(h, DVector::zeros(2));
        assert!(solve_qp(&p, &QpSettings::default(), None).is_err());
    }

    #[test]
    fn inconsistent_equalities_error() {
        let mut p = QpProblem::unconstrained(DMatrix::<f64>::identity(2, 2), DVector::zeros(2));
        p.a_eq = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        p.b_eq = DVector::from_vec(vec![1.0, 3.0]);
        assert!(solve_qp(&p, &QpSettings::default(), None).is_err());
        // consistent but rank deficient is fine
        p.b_eq = DVector::from_vec(vec![1.0, 2.0]);
        let s = solve_qp(&p, &QpSettings::default(), None).unwrap();
        assert_relative_eq!(s.z, DVector::from_vec(vec![0.5, 0.5]), epsilon = 1e-12);
    }

    #[test]
    fn infeasible_relaxed() {
        // x ≤ -1 and -x ≤ -1 (x ≥ 1) cannot both hold; second row is relaxable.
        let mut p = QpProblem::unconstrained(DMatrix::<f64>::identity(1, 1), DVector::zeros(1));
        p.a_in = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        p.b_in = DVector::from_vec(vec![-1.0, -1.0]);
        p.relaxable = vec![1];
        let s = solve_qp(&p, &QpSettings::default(), None).unwrap();
        assert_eq!(s.status, QpStatus::InfeasibleRelaxed);
        assert!(s.z[0] <= -1.0 + 1e-6);
        assert_eq!(s.relaxation.len(), 1);
        assert!((s.relaxation[0].1 - 2.0).abs() < 1e-3);
    }

    #[test]
    fn warm_start_reaches_same_point() {
        let mut p = QpProblem::unconstrained(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            DVector::from_vec(vec![-1.0, 3.0]),
        );
        p.a_in = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]);
        p.b_in = DVector::zeros(2);
        let cold = solve_qp(&p, &QpSettings::default(), None).unwrap();
        let warm = solve_qp(&p, &QpSettings::default(), Some(&cold.z)).unwrap();
        assert_relative_eq!(cold.z, warm.z, epsilon = 1e-9);
    }

    #[test]
    fn dump_roundtrip() {
        let mut p = QpProblem::unconstrained(DMatrix::<f64>::identity(2, 2), DVector::from_vec(vec![1.0, 2.0]));
        p.a_in = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        p.b_in = DVector::from_vec(vec![1.0]);
        p.relaxable = vec![0];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qp.json");
        p.dump(&path).unwrap();
        assert_eq!(QpProblem::<f64>::load_dump(&path).unwrap(), p);
    }
}
