//! Small dense semidefinite programs and the per-iteration power problem.
//!
//! Problems are in LMI form: minimize `cᵀx` subject to
//! `F_k(x) = F_k0 + Σ_i x_i F_ki ⪰ 0` for every block and a list of linear
//! constraints. The solver follows the central path of the log barrier with
//! damped Newton steps. Variables that appear in a single block and in no
//! linear constraint are eliminated from each Newton system by a Schur
//! complement, which keeps per-user epigraph variables cheap.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix4, SymmetricEigen, Vector4};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub coeffs: Vec<(usize, f64)>,
    pub bound: f64,
    pub sense: Sense,
}

impl LinearConstraint {
    pub fn new(coeffs: Vec<(usize, f64)>, sense: Sense, bound: f64) -> Self {
        Self { coeffs, bound, sense }
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(i, a)| a * x[i]).sum()
    }

    /// Strictly positive inside the feasible half-space (inequalities only).
    fn slack(&self, x: &[f64]) -> f64 {
        match self.sense {
            Sense::Le => self.bound - self.value(x),
            Sense::Ge => self.value(x) - self.bound,
            Sense::Eq => 0.0,
        }
    }

    /// Amount by which `x` violates the constraint, zero when satisfied.
    fn violation(&self, x: &[f64]) -> f64 {
        let v = self.value(x) - self.bound;
        match self.sense {
            Sense::Le => v.max(0.0),
            Sense::Ge => (-v).max(0.0),
            Sense::Eq => v.abs(),
        }
    }
}

/// One symmetric affine matrix map `F0 + Σ x_i F_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiBlock {
    pub dim: usize,
    pub constant: DMatrix<f64>,
    pub terms: Vec<(usize, DMatrix<f64>)>,
}

impl LmiBlock {
    pub fn new(constant: DMatrix<f64>) -> Self {
        Self {
            dim: constant.nrows(),
            constant,
            terms: Vec::new(),
        }
    }

    /// Adds `coeff` to the term of `var`, merging repeated variables.
    pub fn add_term(&mut self, var: usize, coeff: DMatrix<f64>) {
        match self.terms.iter_mut().find(|(v, _)| *v == var) {
            Some((_, m)) => *m += coeff,
            None => self.terms.push((var, coeff)),
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> DMatrix<f64> {
        let mut f = self.constant.clone();
        for (var, m) in &self.terms {
            f += m * x[*var];
        }
        f
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SdpProblem {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub blocks: Vec<LmiBlock>,
    pub linear: Vec<LinearConstraint>,
}

impl SdpProblem {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: vec![0.0; num_vars],
            blocks: Vec::new(),
            linear: Vec::new(),
        }
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Barrier parameter count `m`: total block dimension plus inequality count.
    fn barrier_degree(&self) -> usize {
        self.blocks.iter().map(|b| b.dim).sum::<usize>()
            + self.linear.iter().filter(|l| l.sense != Sense::Eq).count()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Assembly(msg));
        if self.objective.len() != self.num_vars {
            return bad(format!("objective has {} entries for {} variables", self.objective.len(), self.num_vars));
        }
        let mut used = vec![false; self.num_vars];
        for (k, b) in self.blocks.iter().enumerate() {
            if b.constant.nrows() != b.dim || b.constant.ncols() != b.dim {
                return bad(format!("block {k}: constant is not {0}x{0}", b.dim));
            }
            if !is_symmetric(&b.constant) {
                return bad(format!("block {k}: constant is not symmetric"));
            }
            let mut seen = Vec::with_capacity(b.terms.len());
            for (var, m) in &b.terms {
                if *var >= self.num_vars {
                    return bad(format!("block {k}: variable {var} out of range"));
                }
                if seen.contains(var) {
                    return bad(format!("block {k}: variable {var} listed twice"));
                }
                seen.push(*var);
                if m.nrows() != b.dim || m.ncols() != b.dim {
                    return bad(format!("block {k}: coefficient of variable {var} has wrong shape"));
                }
                if !is_symmetric(m) {
                    return bad(format!("block {k}: coefficient of variable {var} is not symmetric"));
                }
                used[*var] = true;
            }
        }
        for (l, c) in self.linear.iter().enumerate() {
            for &(var, _) in &c.coeffs {
                if var >= self.num_vars {
                    return bad(format!("linear constraint {l}: variable {var} out of range"));
                }
                used[var] = true;
            }
        }
        if let Some(v) = used.iter().position(|u| !u) {
            return bad(format!("variable {v} appears in no constraint"));
        }
        Ok(())
    }

    /// Plain-text listing for cross-checking with an external solver.
    ///
    /// Matrices are written row-major, one line each.
    pub fn write_text<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "vars {}", self.num_vars)?;
        writeln!(out, "objective {}", join(&self.objective))?;
        for (k, b) in self.blocks.iter().enumerate() {
            writeln!(out, "block {k} dim {} terms {}", b.dim, b.terms.len())?;
            writeln!(out, "const {}", join(b.constant.transpose().as_slice()))?;
            for (var, m) in &b.terms {
                writeln!(out, "term {var} {}", join(m.transpose().as_slice()))?;
            }
        }
        for c in &self.linear {
            let sense = match c.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "==",
            };
            let mut line = String::new();
            for (i, a) in &c.coeffs {
                let _ = write!(line, " {i}:{a:e}");
            }
            writeln!(out, "linear {sense} {:e}{line}", c.bound)?;
        }
        Ok(())
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ")
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= 1e-12 * scale
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: SdpStatus,
    /// Largest constraint violation at `x`.
    pub primal_residual: f64,
    /// Norm of the scaled barrier gradient at the last centering, `‖∇φ‖/t`.
    pub dual_residual: f64,
    /// Duality-gap bound `m/t` at exit.
    pub gap: f64,
    pub newton_steps: usize,
    /// Objective after each completed centering.
    pub outer_objectives: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Relative duality-gap target.
    pub tol: f64,
    /// Newton step budget, phase I included.
    pub max_iter: usize,
    /// Barrier parameter growth per outer iteration.
    pub mu: f64,
    /// Strictly feasible starting point, if known.
    pub initial: Option<Vec<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 200,
            mu: 20.0,
            initial: None,
        }
    }
}

pub fn solve(p: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution> {
    p.validate()?;
    if !(opts.tol > 0.0) || !(opts.mu > 1.0) || opts.max_iter == 0 {
        return Err(Error::param("solver options", "need tol > 0, mu > 1, max_iter >= 1"));
    }
    let mut steps = 0;
    let start = match opts.initial.as_ref().filter(|x0| x0.len() == p.num_vars && strictly_feasible(p, x0)) {
        Some(x0) => x0.clone(),
        None => match phase_one(p, opts, &mut steps)? {
            Some(x0) => x0,
            None => {
                let x = vec![0.0; p.num_vars];
                return Ok(SdpSolution {
                    objective: p.objective_value(&x),
                    primal_residual: max_violation(p, &x),
                    x,
                    status: SdpStatus::Infeasible,
                    dual_residual: f64::NAN,
                    gap: f64::INFINITY,
                    newton_steps: steps,
                    outer_objectives: Vec::new(),
                })
            }
        },
    };
    let run = barrier(p, start, opts.tol, opts.mu, opts.max_iter, &mut steps, None)?;
    Ok(SdpSolution {
        objective: p.objective_value(&run.x),
        primal_residual: max_violation(p, &run.x),
        status: if run.converged { SdpStatus::Optimal } else { SdpStatus::MaxIter },
        x: run.x,
        dual_residual: run.dual_residual,
        gap: run.gap,
        newton_steps: steps,
        outer_objectives: run.outer_objectives,
    })
}

/// Finds a strictly feasible point by minimizing a uniform margin `s`.
///
/// Returns `None` when the optimal margin is not negative (infeasible or
/// without interior).
fn phase_one(p: &SdpProblem, opts: &SolverOptions, steps: &mut usize) -> Result<Option<Vec<f64>>> {
    let n = p.num_vars;
    let s = n;
    let mut aux = SdpProblem::new(n + 1);
    aux.objective[s] = 1.0;
    for b in &p.blocks {
        let mut blk = b.clone();
        blk.add_term(s, DMatrix::identity(b.dim, b.dim));
        aux.blocks.push(blk);
    }
    for c in &p.linear {
        let mut c2 = c.clone();
        match c.sense {
            Sense::Le => c2.coeffs.push((s, -1.0)),
            Sense::Ge => c2.coeffs.push((s, 1.0)),
            Sense::Eq => {}
        }
        aux.linear.push(c2);
    }
    aux.linear.push(LinearConstraint::new(vec![(s, 1.0)], Sense::Ge, -1.0));

    let mut x0 = equality_projection(p)?;
    // a wide box keeps the centering problems bounded when the feasible set is not
    let radius = 1e4 * x0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for v in 0..n {
        aux.linear.push(LinearConstraint::new(vec![(v, 1.0)], Sense::Le, radius));
        aux.linear.push(LinearConstraint::new(vec![(v, 1.0)], Sense::Ge, -radius));
    }
    let margin = p
        .blocks
        .iter()
        .map(|b| -min_eigenvalue(&b.evaluate(&x0)))
        .chain(p.linear.iter().filter(|c| c.sense != Sense::Eq).map(|c| -c.slack(&x0)))
        .fold(0.0f64, f64::max);
    x0.push(margin + 1.0);

    // stop once the margin is comfortably negative, or negative on the central path
    let stop = |x: &[f64], centered: bool| x[s] < -0.5 || (centered && x[s] < -1e-9);
    let budget = opts.max_iter.saturating_sub(*steps).max(1);
    let run = barrier(&aux, x0, 1e-6, opts.mu, budget, steps, Some(&stop))?;
    if run.x[s] < -1e-9 {
        let mut x = run.x;
        x.truncate(n);
        if strictly_feasible(p, &x) {
            return Ok(Some(x));
        }
    }
    Ok(None)
}

/// Minimum-norm solution of the equality constraints (zeros when there are none).
fn equality_projection(p: &SdpProblem) -> Result<Vec<f64>> {
    let eqs: Vec<&LinearConstraint> = p.linear.iter().filter(|c| c.sense == Sense::Eq).collect();
    if eqs.is_empty() {
        return Ok(vec![0.0; p.num_vars]);
    }
    let mut e = DMatrix::zeros(eqs.len(), p.num_vars);
    let mut f = DVector::zeros(eqs.len());
    for (r, c) in eqs.iter().enumerate() {
        for &(i, a) in &c.coeffs {
            e[(r, i)] += a;
        }
        f[r] = c.bound;
    }
    let x = e
        .clone()
        .svd(true, true)
        .solve(&f, 1e-12)
        .map_err(|msg| Error::Solver(format!("equality constraints: {msg}")))?;
    if (&e * &x - &f).amax() > 1e-9 * f.amax().max(1.0) {
        return Err(Error::Solver("equality constraints are inconsistent".into()));
    }
    Ok(x.iter().copied().collect())
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

fn max_violation(p: &SdpProblem, x: &[f64]) -> f64 {
    p.blocks
        .iter()
        .map(|b| (-min_eigenvalue(&b.evaluate(x))).max(0.0))
        .chain(p.linear.iter().map(|c| c.violation(x)))
        .fold(0.0, f64::max)
}

fn strictly_feasible(p: &SdpProblem, x: &[f64]) -> bool {
    p.linear
        .iter()
        .all(|c| if c.sense == Sense::Eq { c.violation(x) <= 1e-9 * c.bound.abs().max(1.0) } else { c.slack(x) > 0.0 })
        && p.blocks.iter().all(|b| b.evaluate(x).cholesky().is_some())
}

/// Which variables a Newton system keeps and which it eliminates per block.
struct Partition {
    /// Dense index among kept variables, or `None` for eliminated ones.
    global: Vec<Option<usize>>,
    num_global: usize,
    /// Eliminated variables grouped by their block.
    locals: Vec<Vec<usize>>,
}

impl Partition {
    fn of(p: &SdpProblem) -> Self {
        let mut count = vec![0usize; p.num_vars];
        let mut owner = vec![usize::MAX; p.num_vars];
        for (k, b) in p.blocks.iter().enumerate() {
            for (var, _) in &b.terms {
                count[*var] += 1;
                owner[*var] = k;
            }
        }
        for c in &p.linear {
            for &(var, _) in &c.coeffs {
                count[var] += 2;
            }
        }
        let mut global = vec![None; p.num_vars];
        let mut locals = vec![Vec::new(); p.blocks.len()];
        let mut num_global = 0;
        for v in 0..p.num_vars {
            if count[v] == 1 {
                locals[owner[v]].push(v);
            } else {
                global[v] = Some(num_global);
                num_global += 1;
            }
        }
        Self {
            global,
            num_global,
            locals,
        }
    }
}

struct BarrierRun {
    x: Vec<f64>,
    converged: bool,
    gap: f64,
    dual_residual: f64,
    outer_objectives: Vec<f64>,
}

/// Log-barrier value `t·cᵀx − Σ log det F_k − Σ log slack`, or `None` outside the domain.
fn barrier_value(p: &SdpProblem, x: &[f64], t: f64) -> Option<f64> {
    let mut phi = t * p.objective_value(x);
    for c in &p.linear {
        if c.sense != Sense::Eq {
            let s = c.slack(x);
            if !(s > 0.0) {
                return None;
            }
            phi -= s.ln();
        }
    }
    for b in &p.blocks {
        let chol = b.evaluate(x).cholesky()?;
        phi -= 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    }
    Some(phi)
}

fn barrier(
    p: &SdpProblem,
    mut x: Vec<f64>,
    tol: f64,
    mu: f64,
    max_steps: usize,
    steps: &mut usize,
    stop: Option<&dyn Fn(&[f64], bool) -> bool>,
) -> Result<BarrierRun> {
    let part = Partition::of(p);
    let m = p.barrier_degree().max(1) as f64;
    let mut t = 1.0;
    let mut outer_objectives = Vec::new();
    let limit = *steps + max_steps;
    let mut dual_residual = f64::NAN;
    loop {
        // centering
        loop {
            if let Some(f) = stop {
                if f(&x, false) {
                    return Ok(BarrierRun {
                        x,
                        converged: true,
                        gap: m / t,
                        dual_residual,
                        outer_objectives,
                    });
                }
            }
            let step = newton_step(p, &part, &x, t)?;
            dual_residual = step.grad_norm / t;
            if step.decrement_sq / 2.0 <= 1e-10 {
                break;
            }
            if *steps >= limit {
                return Ok(BarrierRun {
                    x,
                    converged: false,
                    gap: m / t,
                    dual_residual,
                    outer_objectives,
                });
            }
            let phi0 = barrier_value(p, &x, t).ok_or_else(|| Error::Solver("iterate left the barrier domain".into()))?;
            let mut alpha = 1.0;
            let mut accepted = None;
            while alpha > 1e-14 {
                let trial: Vec<f64> = x.iter().zip(&step.dx).map(|(a, d)| a + alpha * d).collect();
                if let Some(phi) = barrier_value(p, &trial, t) {
                    let slack = 1e-13 * phi0.abs().max(1.0);
                    if phi <= phi0 - 0.01 * alpha * step.decrement_sq + slack {
                        accepted = Some(trial);
                        break;
                    }
                }
                alpha *= 0.5;
            }
            *steps += 1;
            match accepted {
                Some(trial) => x = trial,
                // no progress possible at machine precision
                None => break,
            }
        }
        outer_objectives.push(p.objective_value(&x));
        let obj = p.objective_value(&x);
        if m / t <= tol * obj.abs().max(1.0) || stop.is_some_and(|f| f(&x, true)) {
            return Ok(BarrierRun {
                x,
                converged: true,
                gap: m / t,
                dual_residual,
                outer_objectives,
            });
        }
        if *steps >= limit {
            return Ok(BarrierRun {
                x,
                converged: false,
                gap: m / t,
                dual_residual,
                outer_objectives,
            });
        }
        t *= mu;
    }
}

struct NewtonStep {
    dx: Vec<f64>,
    decrement_sq: f64,
    grad_norm: f64,
}

/// Eliminated part of one block's Newton system.
struct LocalPart {
    vars: Vec<usize>,
    globals: Vec<usize>,
    chol: Cholesky<f64, Dyn>,
    h_lg: DMatrix<f64>,
    g_l: DVector<f64>,
}

fn newton_step(p: &SdpProblem, part: &Partition, x: &[f64], t: f64) -> Result<NewtonStep> {
    let n = p.num_vars;
    let ng = part.num_global;
    let mut grad: Vec<f64> = p.objective.iter().map(|c| t * c).collect();
    let mut s = DMatrix::<f64>::zeros(ng, ng);
    let mut local_parts = Vec::new();

    for (k, b) in p.blocks.iter().enumerate() {
        let f = b.evaluate(x);
        let chol = f
            .cholesky()
            .ok_or_else(|| Error::Solver(format!("block {k} lost positive definiteness")))?;
        let l = chol.l();
        let scaled: Vec<DMatrix<f64>> = b
            .terms
            .iter()
            .map(|(_, fi)| {
                let y = l.solve_lower_triangular(fi).expect("triangular factor");
                l.solve_lower_triangular(&y.transpose()).expect("triangular factor")
            })
            .collect();
        for ((var, _), a) in b.terms.iter().zip(&scaled) {
            grad[*var] -= a.trace();
        }
        let locals = &part.locals[k];
        let local_pos: Vec<Option<usize>> = b.terms.iter().map(|(v, _)| locals.iter().position(|l| l == v)).collect();
        let globals: Vec<(usize, usize)> = b
            .terms
            .iter()
            .enumerate()
            .filter_map(|(ti, (v, _))| part.global[*v].map(|g| (ti, g)))
            .collect();

        for (i, &(ti, gi)) in globals.iter().enumerate() {
            for &(tj, gj) in &globals[i..] {
                let h = scaled[ti].dot(&scaled[tj]);
                s[(gi, gj)] += h;
                if gi != gj {
                    s[(gj, gi)] += h;
                }
            }
        }
        if locals.is_empty() {
            continue;
        }
        let nl = locals.len();
        let mut h_ll = DMatrix::zeros(nl, nl);
        let mut h_lg = DMatrix::zeros(nl, globals.len());
        for (ti, pos) in local_pos.iter().enumerate() {
            let Some(li) = *pos else { continue };
            for (tj, pos_j) in local_pos.iter().enumerate() {
                if let Some(lj) = *pos_j {
                    h_ll[(li, lj)] = scaled[ti].dot(&scaled[tj]);
                }
            }
            for (c, &(tj, _)) in globals.iter().enumerate() {
                h_lg[(li, c)] = scaled[ti].dot(&scaled[tj]);
            }
        }
        let g_l = DVector::from_iterator(nl, locals.iter().map(|&v| grad[v]));
        let chol = h_ll
            .cholesky()
            .ok_or_else(|| Error::Solver(format!("block {k}: local Hessian is singular")))?;
        local_parts.push(LocalPart {
            vars: locals.clone(),
            globals: globals.iter().map(|&(_, g)| g).collect(),
            chol,
            h_lg,
            g_l,
        });
    }

    let mut eqs = Vec::new();
    for c in &p.linear {
        match c.sense {
            Sense::Eq => eqs.push(c),
            _ => {
                let slack = c.slack(x);
                let sign = if c.sense == Sense::Le { 1.0 } else { -1.0 };
                for &(i, a) in &c.coeffs {
                    grad[i] += sign * a / slack;
                }
                for &(i, a) in &c.coeffs {
                    for &(j, b) in &c.coeffs {
                        let (gi, gj) = (part.global[i].expect("linear vars kept"), part.global[j].expect("linear vars kept"));
                        s[(gi, gj)] += a * b / (slack * slack);
                    }
                }
            }
        }
    }

    // reduced gradient over kept variables
    let mut g_g = DVector::zeros(ng);
    for v in 0..n {
        if let Some(g) = part.global[v] {
            g_g[g] = grad[v];
        }
    }
    for lp in &local_parts {
        let k_inv_hlg = lp.chol.solve(&lp.h_lg);
        let k_inv_gl = lp.chol.solve(&lp.g_l);
        let schur = lp.h_lg.transpose() * &k_inv_hlg;
        let rhs = lp.h_lg.transpose() * &k_inv_gl;
        for (a, &ga) in lp.globals.iter().enumerate() {
            g_g[ga] -= rhs[a];
            for (b, &gb) in lp.globals.iter().enumerate() {
                s[(ga, gb)] -= schur[(a, b)];
            }
        }
    }

    let dg = solve_kkt(&s, &g_g, &eqs, part)?;

    let mut dx = vec![0.0; n];
    for v in 0..n {
        if let Some(g) = part.global[v] {
            dx[v] = dg[g];
        }
    }
    for lp in &local_parts {
        let dglob = DVector::from_iterator(lp.globals.len(), lp.globals.iter().map(|&g| dg[g]));
        let dl = lp.chol.solve(&(-&lp.g_l - &lp.h_lg * dglob));
        for (i, &v) in lp.vars.iter().enumerate() {
            dx[v] = dl[i];
        }
    }
    let decrement_sq = -grad.iter().zip(&dx).map(|(g, d)| g * d).sum::<f64>();
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    Ok(NewtonStep {
        dx,
        decrement_sq: decrement_sq.max(0.0),
        grad_norm,
    })
}

/// Solves `S d = −g` subject to `E d = 0`.
fn solve_kkt(s: &DMatrix<f64>, g: &DVector<f64>, eqs: &[&LinearConstraint], part: &Partition) -> Result<DVector<f64>> {
    let ng = s.nrows();
    if ng == 0 {
        return Ok(DVector::zeros(0));
    }
    let chol = match s.clone().cholesky() {
        Some(c) => c,
        None => {
            let ridge = 1e-12 * s.diagonal().amax().max(1e-300);
            let shifted = s + DMatrix::identity(ng, ng) * ridge;
            shifted.cholesky().ok_or_else(|| {
                let eig = SymmetricEigen::new(s.clone()).eigenvalues;
                Error::Solver(format!(
                    "ill-conditioned Newton system: dimension {ng}, eigenvalues in [{:.3e}, {:.3e}]",
                    eig.min(),
                    eig.max()
                ))
            })?
        }
    };
    let d0 = -chol.solve(g);
    if eqs.is_empty() {
        return Ok(d0);
    }
    let mut e = DMatrix::zeros(eqs.len(), ng);
    for (r, c) in eqs.iter().enumerate() {
        for &(i, a) in &c.coeffs {
            e[(r, part.global[i].expect("linear vars kept"))] += a;
        }
    }
    let s_inv_et = chol.solve(&e.transpose());
    let schur = &e * &s_inv_et;
    let nu = schur
        .cholesky()
        .ok_or_else(|| Error::Solver("equality constraints are linearly dependent".into()))?
        .solve(&(&e * &d0));
    Ok(d0 - s_inv_et * nu)
}

/// Residual report of a candidate solution.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub block_min_eigenvalues: Vec<f64>,
    pub max_linear_violation: f64,
    pub objective_recomputed: f64,
    /// `recomputed − reported`; large values mean the reported objective is stale.
    pub objective_gap: f64,
    pub feasible: bool,
}

impl VerificationReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.feasible && self.objective_gap.abs() <= tol * self.objective_recomputed.abs().max(1.0)
    }
}

pub fn verify_solution(p: &SdpProblem, s: &SdpSolution, tol: f64) -> VerificationReport {
    let block_min_eigenvalues: Vec<f64> = p.blocks.iter().map(|b| min_eigenvalue(&b.evaluate(&s.x))).collect();
    let max_linear_violation = p.linear.iter().map(|c| c.violation(&s.x)).fold(0.0, f64::max);
    let objective_recomputed = p.objective_value(&s.x);
    let feasible = block_min_eigenvalues.iter().all(|&e| e >= -tol) && max_linear_violation <= tol;
    VerificationReport {
        block_min_eigenvalues,
        max_linear_violation,
        objective_recomputed,
        objective_gap: objective_recomputed - s.objective,
        feasible,
    }
}

/// One anchor of one user in the power problem.
///
/// Its information weight is `weight_per_unit · x_var`, where `x_var` is the
/// serving beam power as a fraction of the per-beam budget.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorTerm {
    /// `[unit(s − s_i); 1]`.
    pub direction: Vector4<f64>,
    pub var: Option<usize>,
    pub weight_per_unit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerSdpInput {
    /// Satellite of each power variable.
    pub beam_sat: Vec<usize>,
    pub per_beam_w: f64,
    pub per_sat_w: f64,
    pub users: Vec<Vec<AnchorTerm>>,
    /// Feasible powers in watts, one per variable; shrunk into the interior.
    pub start_w: Vec<f64>,
    /// Objective weight of each user's trace; empty means `1/J` for all.
    pub user_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerSdp {
    pub problem: SdpProblem,
    pub num_power_vars: usize,
    pub start: Vec<f64>,
}

impl PowerSdp {
    /// Beam powers in watts from a solution vector.
    pub fn powers_w(&self, x: &[f64], per_beam_w: f64) -> Vec<f64> {
        x[..self.num_power_vars].iter().map(|v| v.clamp(0.0, 1.0) * per_beam_w).collect()
    }
}

/// Builds the power problem with offset-augmented epigraph blocks.
///
/// User `j` gets the block `[[M_j(x), E], [Eᵀ, W_j]] ⪰ 0` with
/// `M_j = Σ_i w_i t_i t_iᵀ` and `E = [I₃; 0]`, which is equivalent to
/// `W_j ⪰ [M_j⁻¹]_pos`. The objective is `(1/J) Σ_j tr W_j`.
pub fn assemble_power_sdp(input: &PowerSdpInput) -> Result<PowerSdp> {
    if !(input.per_beam_w > 0.0) || !(input.per_sat_w > 0.0) {
        return Err(Error::Assembly("power budgets must be positive".into()));
    }
    let nb = input.beam_sat.len();
    if input.start_w.len() != nb {
        return Err(Error::Assembly("start point has the wrong length".into()));
    }
    let j = input.users.len();
    let n = nb + 6 * j;
    let mut p = SdpProblem::new(n);
    let sat_cap = input.per_sat_w / input.per_beam_w;
    let weights = if input.user_weights.is_empty() {
        vec![1.0 / j as f64; j]
    } else if input.user_weights.len() == j && input.user_weights.iter().all(|w| *w > 0.0 && w.is_finite()) {
        input.user_weights.clone()
    } else {
        return Err(Error::Assembly("user weights must be positive, one per user".into()));
    };

    let mut used = vec![false; nb];
    for (u, anchors) in input.users.iter().enumerate() {
        let mut constant = DMatrix::zeros(7, 7);
        for k in 0..3 {
            constant[(k, 4 + k)] = 1.0;
            constant[(4 + k, k)] = 1.0;
        }
        let mut blk = LmiBlock::new(constant);
        for (i, a) in anchors.iter().enumerate() {
            let var = a
                .var
                .ok_or_else(|| Error::Assembly(format!("user {u}: anchor {i} has no active serving beam")))?;
            if var >= nb {
                return Err(Error::Assembly(format!("user {u}: power variable {var} out of range")));
            }
            if !(a.weight_per_unit > 0.0) || !a.weight_per_unit.is_finite() {
                return Err(Error::Assembly(format!("user {u}: anchor {i} has weight {}", a.weight_per_unit)));
            }
            used[var] = true;
            let mut coeff = DMatrix::zeros(7, 7);
            coeff
                .view_mut((0, 0), (4, 4))
                .copy_from(&(a.direction * a.direction.transpose() * a.weight_per_unit));
            blk.add_term(var, coeff);
        }
        for (w, (r, c)) in w_entries().into_iter().enumerate() {
            let mut coeff = DMatrix::zeros(7, 7);
            coeff[(4 + r, 4 + c)] = 1.0;
            coeff[(4 + c, 4 + r)] = 1.0;
            let var = nb + 6 * u + w;
            blk.terms.push((var, coeff));
            if r == c {
                p.objective[var] = weights[u];
            }
        }
        p.blocks.push(blk);
    }

    let mut by_sat: Vec<(usize, Vec<usize>)> = Vec::new();
    for (v, &sat) in input.beam_sat.iter().enumerate() {
        if !used[v] {
            return Err(Error::Assembly(format!("power variable {v} serves no user")));
        }
        match by_sat.iter_mut().find(|(s, _)| *s == sat) {
            Some((_, vars)) => vars.push(v),
            None => by_sat.push((sat, vec![v])),
        }
        p.linear.push(LinearConstraint::new(vec![(v, 1.0)], Sense::Ge, 0.0));
        p.linear.push(LinearConstraint::new(vec![(v, 1.0)], Sense::Le, 1.0));
    }
    let mut start = vec![0.0; n];
    for (_, vars) in &by_sat {
        if vars.len() as f64 > sat_cap {
            p.linear
                .push(LinearConstraint::new(vars.iter().map(|&v| (v, 1.0)).collect(), Sense::Le, sat_cap));
        }
        // pull the start strictly inside the box and the satellite budget
        let sum: f64 = vars.iter().map(|&v| input.start_w[v] / input.per_beam_w).sum();
        let shrink = if sum > 0.95 * sat_cap { 0.95 * sat_cap / sum } else { 1.0 };
        for &v in vars {
            start[v] = (input.start_w[v] / input.per_beam_w * shrink).clamp(1e-3, 0.95);
        }
        if vars.iter().map(|&v| start[v]).sum::<f64>() >= sat_cap {
            let uniform = 0.9 * (sat_cap / vars.len() as f64).min(1.0);
            for &v in vars {
                start[v] = uniform;
            }
        }
    }

    for (u, anchors) in input.users.iter().enumerate() {
        let mut m = Matrix4::zeros();
        for a in anchors {
            let x = start[a.var.expect("checked above")];
            m += a.direction * a.direction.transpose() * (a.weight_per_unit * x);
        }
        let inv = m
            .try_inverse()
            .ok_or_else(|| Error::Assembly(format!("user {u}: anchor geometry is rank deficient")))?;
        let pos = inv.fixed_view::<3, 3>(0, 0).into_owned();
        let pad = pos.trace().abs().max(1e-12);
        for (w, (r, c)) in w_entries().into_iter().enumerate() {
            let diag = if r == c { pad } else { 0.0 };
            start[nb + 6 * u + w] = pos[(r, c)] + diag;
        }
    }
    Ok(PowerSdp {
        problem: p,
        num_power_vars: nb,
        start,
    })
}

/// Upper-triangle entries of a symmetric 3×3 matrix, in variable order.
fn w_entries() -> [(usize, usize); 6] {
    [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_block(var: usize, coeff: f64, constant: f64) -> LmiBlock {
        let mut b = LmiBlock::new(DMatrix::from_element(1, 1, constant));
        b.add_term(var, DMatrix::from_element(1, 1, coeff));
        b
    }

    #[test]
    fn one_by_one_block_goes_to_zero() {
        let mut p = SdpProblem::new(1);
        p.objective[0] = 1.0;
        p.blocks.push(scalar_block(0, 1.0, 0.0));
        let s = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, SdpStatus::Optimal);
        assert!(s.x[0] >= 0.0 && s.x[0] < 1e-6, "{}", s.x[0]);
        assert!(verify_solution(&p, &s, 1e-7).passes(1e-7));
    }

    fn trace_problem() -> SdpProblem {
        // X = [[a, b], [b, c]], minimize a + 2c with a + c = 1
        let mut p = SdpProblem::new(3);
        p.objective = vec![1.0, 0.0, 2.0];
        let mut blk = LmiBlock::new(DMatrix::zeros(2, 2));
        blk.add_term(0, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        blk.add_term(1, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        blk.add_term(2, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
        p.blocks.push(blk);
        p.linear.push(LinearConstraint::new(vec![(0, 1.0), (2, 1.0)], Sense::Eq, 1.0));
        p
    }

    #[test]
    fn trace_normalized_eigenvalue_problem() {
        let p = trace_problem();
        let s = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, SdpStatus::Optimal);
        assert!((s.objective - 1.0).abs() <= 1e-6);
        assert!((s.x[0] - 1.0).abs() < 1e-6 && s.x[1].abs() < 1e-3 && s.x[2].abs() < 1e-6);
        assert!(verify_solution(&p, &s, 1e-7).passes(1e-7));

        // oracle: sweep the feasible 2×2 family X = [[cos²φ, r], [r, sin²φ]]
        let mut best = f64::INFINITY;
        for k in 0..=2000 {
            let phi = k as f64 / 2000.0 * std::f64::consts::FRAC_PI_2;
            best = best.min(phi.cos().powi(2) + 2.0 * phi.sin().powi(2));
        }
        assert!((best - s.objective).abs() < 1e-6);
    }

    #[test]
    fn min_eigenvalue_over_unit_trace_3x3() {
        // minimize tr(MX) over tr X = 1, X ⪰ 0; the optimum is λ_min(M)
        let m = DMatrix::from_row_slice(3, 3, &[0.2, -0.4, 0.1, -0.4, 0.5, 0.3, 0.1, 0.3, -0.6]);
        let basis = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
        let mut p = SdpProblem::new(basis.len());
        let mut blk = LmiBlock::new(DMatrix::zeros(3, 3));
        let mut trace = Vec::new();
        for (v, &(i, j)) in basis.iter().enumerate() {
            let mut e = DMatrix::zeros(3, 3);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            if i == j {
                trace.push((v, 1.0));
            }
            p.objective[v] = if i == j { m[(i, i)] } else { 2.0 * m[(i, j)] };
            blk.add_term(v, e);
        }
        p.blocks.push(blk);
        p.linear.push(LinearConstraint::new(trace, Sense::Eq, 1.0));
        let s = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, SdpStatus::Optimal);
        let lmin = SymmetricEigen::new(m).eigenvalues.min();
        assert!((s.objective - lmin).abs() < 1e-6, "{} vs {lmin}", s.objective);
        assert!(verify_solution(&p, &s, 1e-6).passes(1e-6));
    }

    #[test]
    fn objective_nonincreasing_across_outer_iterations() {
        let p = trace_problem();
        let s = solve(&p, &SolverOptions::default()).unwrap();
        for w in s.outer_objectives.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", s.outer_objectives);
        }
    }

    #[test]
    fn infeasible_problem_flagged() {
        // x ⪰ 0 and x ≤ −1
        let mut p = SdpProblem::new(1);
        p.objective[0] = 1.0;
        p.blocks.push(scalar_block(0, 1.0, 0.0));
        p.linear.push(LinearConstraint::new(vec![(0, 1.0)], Sense::Le, -1.0));
        assert_eq!(solve(&p, &SolverOptions::default()).unwrap().status, SdpStatus::Infeasible);
    }

    #[test]
    fn verification_flags_perturbation_and_reports_gap() {
        let mut p = SdpProblem::new(1);
        p.objective[0] = 1.0;
        p.blocks.push(scalar_block(0, 1.0, 0.0));
        let tol = 1e-7;
        let s = solve(&p, &SolverOptions::default()).unwrap();
        let mut bumped = s.clone();
        bumped.x[0] -= 10.0 * tol + s.x[0];
        bumped.objective = bumped.x[0];
        let r = verify_solution(&p, &bumped, tol);
        assert!(!r.feasible && !r.passes(tol));

        let mut worse = s.clone();
        worse.x[0] = 0.5;
        let r = verify_solution(&p, &worse, tol);
        assert!(r.feasible);
        assert!((r.objective_gap - (0.5 - s.objective)).abs() < 1e-12);
    }

    #[test]
    fn malformed_problems_rejected() {
        let mut p = SdpProblem::new(2);
        p.blocks.push(scalar_block(0, 1.0, 0.0));
        assert!(matches!(p.validate(), Err(Error::Assembly(_))));
        let mut q = SdpProblem::new(1);
        let mut b = LmiBlock::new(DMatrix::zeros(2, 2));
        b.terms.push((0, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0])));
        q.blocks.push(b);
        assert!(matches!(q.validate(), Err(Error::Assembly(_))));
    }

    #[test]
    fn text_dump_lists_everything() {
        let p = trace_problem();
        let mut out = Vec::new();
        p.write_text(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("vars 3\nobjective "));
        assert_eq!(text.lines().filter(|l| l.starts_with("term ")).count(), 3);
        assert!(text.contains("linear == 1e0 0:1e0 2:1e0"));
    }

    #[test]
    fn eliminated_epigraph_matches_known_inverse() {
        // minimize tr W subject to [[A, I], [I, W]] ⪰ 0: optimum tr A⁻¹
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let mut constant = DMatrix::zeros(6, 6);
        constant.view_mut((0, 0), (3, 3)).copy_from(&a);
        for k in 0..3 {
            constant[(k, 3 + k)] = 1.0;
            constant[(3 + k, k)] = 1.0;
        }
        let mut p = SdpProblem::new(6);
        let mut blk = LmiBlock::new(constant);
        for (v, (r, c)) in w_entries().into_iter().enumerate() {
            let mut m = DMatrix::zeros(6, 6);
            m[(3 + r, 3 + c)] = 1.0;
            m[(3 + c, 3 + r)] = 1.0;
            blk.add_term(v, m);
            if r == c {
                p.objective[v] = 1.0;
            }
        }
        p.blocks.push(blk);
        let s = solve(&p, &SolverOptions::default()).unwrap();
        let expected = a.try_inverse().unwrap().trace();
        assert_eq!(s.status, SdpStatus::Optimal);
        assert!((s.objective - expected).abs() < 1e-6);
    }

    /// Vertices of `{x ∈ ℝ³ : G x ≤ h}` by enumerating triples of active rows.
    fn lp_vertex_oracle(c: &[f64; 3], g: &[[f64; 3]], h: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        let m = g.len();
        for i in 0..m {
            for j in i + 1..m {
                for k in j + 1..m {
                    let a = nalgebra::Matrix3::from_rows(&[g[i].into(), g[j].into(), g[k].into()]);
                    let Some(inv) = a.try_inverse() else { continue };
                    let x = inv * nalgebra::Vector3::new(h[i], h[j], h[k]);
                    if g.iter().zip(h).all(|(row, &hb)| row[0] * x[0] + row[1] * x[1] + row[2] * x[2] <= hb + 1e-9) {
                        best = best.min(c[0] * x[0] + c[1] * x[1] + c[2] * x[2]);
                    }
                }
            }
        }
        best
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn diagonal_lp_matches_vertex_enumeration(
            c in proptest::array::uniform3(-1.0f64..1.0),
            rows in proptest::collection::vec((proptest::array::uniform3(-1.0f64..1.0), 0.2f64..1.0), 3),
        ) {
            // box −1 ≤ x ≤ 2 keeps the LP bounded; extra rows are strictly feasible at 0
            let mut g: Vec<[f64; 3]> = Vec::new();
            let mut h = Vec::new();
            for k in 0..3 {
                let mut e = [0.0; 3];
                e[k] = 1.0;
                g.push(e);
                h.push(2.0);
                e[k] = -1.0;
                g.push(e);
                h.push(1.0);
            }
            for (row, b) in &rows {
                g.push(*row);
                h.push(*b);
            }
            // embed h − Gx ⪰ 0 as one diagonal block
            let m = g.len();
            let mut blk = LmiBlock::new(DMatrix::from_diagonal(&DVector::from_vec(h.clone())));
            for v in 0..3 {
                blk.add_term(v, DMatrix::from_diagonal(&DVector::from_iterator(m, g.iter().map(|r| -r[v]))));
            }
            let mut p = SdpProblem::new(3);
            p.objective = c.to_vec();
            p.blocks.push(blk);
            let s = solve(&p, &SolverOptions::default()).unwrap();
            prop_assert_eq!(s.status, SdpStatus::Optimal);
            prop_assert!(verify_solution(&p, &s, 1e-7).passes(1e-7));
            let oracle = lp_vertex_oracle(&c, &g, &h);
            prop_assert!((s.objective - oracle).abs() <= 1e-6, "{} vs {}", s.objective, oracle);
        }
    }

    fn anchor(dir: [f64; 3], var: usize, w: f64) -> AnchorTerm {
        let u = nalgebra::Vector3::from(dir).normalize();
        AnchorTerm {
            direction: Vector4::new(u.x, u.y, u.z, 1.0),
            var: Some(var),
            weight_per_unit: w,
        }
    }

    fn four_anchor_user(vars: [usize; 4], w: [f64; 4]) -> Vec<AnchorTerm> {
        let dirs = [[0.0, 0.0, -1.0], [0.5, 0.1, -0.8], [-0.4, 0.5, -0.7], [-0.2, -0.6, -0.75]];
        dirs.iter().zip(vars).zip(w).map(|((d, v), w)| anchor(*d, v, w)).collect()
    }

    fn trace_for(x: &[f64], users: &[Vec<AnchorTerm>]) -> f64 {
        users
            .iter()
            .map(|anchors| {
                let mut m = Matrix4::zeros();
                for a in anchors {
                    m += a.direction * a.direction.transpose() * a.weight_per_unit * x[a.var.unwrap()];
                }
                crate::crlb::position_trace_from_augmented(&m).unwrap()
            })
            .sum::<f64>()
            / users.len() as f64
    }

    #[test]
    fn noise_limited_user_takes_full_power() {
        let input = PowerSdpInput {
            beam_sat: vec![0, 1, 2, 3],
            per_beam_w: 110.0,
            per_sat_w: 6100.0,
            users: vec![four_anchor_user([0, 1, 2, 3], [50.0, 20.0, 10.0, 30.0])],
            start_w: vec![50.0; 4],
            user_weights: Vec::new(),
        };
        let sdp = assemble_power_sdp(&input).unwrap();
        let s = solve(&sdp.problem, &SolverOptions { initial: Some(sdp.start.clone()), ..Default::default() }).unwrap();
        assert_eq!(s.status, SdpStatus::Optimal);
        for p in sdp.powers_w(&s.x, 110.0) {
            assert!((p - 110.0).abs() < 1e-3, "{p}");
        }
        let expected = trace_for(&[1.0; 4], &input.users);
        assert!((s.objective - expected).abs() <= 1e-6 * expected);
    }

    #[test]
    fn satellite_budget_binds_and_matches_sweep() {
        // two users on one satellite through different beams; P_sat < 2 P_beam
        let users = vec![
            four_anchor_user([0, 2, 3, 4], [40.0, 20.0, 10.0, 30.0]),
            four_anchor_user([1, 2, 3, 4], [10.0, 20.0, 10.0, 30.0]),
        ];
        let input = PowerSdpInput {
            beam_sat: vec![0, 0, 1, 2, 3],
            per_beam_w: 110.0,
            per_sat_w: 150.0,
            users: users.clone(),
            start_w: vec![50.0; 5],
            user_weights: Vec::new(),
        };
        let sdp = assemble_power_sdp(&input).unwrap();
        let s = solve(&sdp.problem, &SolverOptions { initial: Some(sdp.start.clone()), ..Default::default() }).unwrap();
        assert_eq!(s.status, SdpStatus::Optimal);
        let p = sdp.powers_w(&s.x, 110.0);
        assert!((p[0] + p[1] - 150.0).abs() < 1e-3, "{p:?}");

        // 1-D sweep along the budget line with the other beams at full power
        let cap = 150.0 / 110.0;
        let mut best = f64::INFINITY;
        for k in 0..=20000 {
            let a = (cap - 1.0) + (1.0 - (cap - 1.0)) * k as f64 / 20000.0;
            let x = [a, cap - a, 1.0, 1.0, 1.0];
            best = best.min(trace_for(&x, &users));
        }
        assert!(s.objective <= best + 1e-6 * best);
        assert!(best - s.objective <= 1e-5 * best);
    }

    #[test]
    fn optimum_not_worse_than_equal_power() {
        let users = vec![
            four_anchor_user([0, 2, 3, 4], [40.0, 2.0, 10.0, 30.0]),
            four_anchor_user([1, 2, 3, 5], [10.0, 20.0, 1.0, 30.0]),
        ];
        let input = PowerSdpInput {
            beam_sat: vec![0, 0, 1, 2, 3, 3],
            per_beam_w: 110.0,
            per_sat_w: 120.0,
            users: users.clone(),
            start_w: vec![60.0; 6],
            user_weights: Vec::new(),
        };
        let sdp = assemble_power_sdp(&input).unwrap();
        let s = solve(&sdp.problem, &SolverOptions { initial: Some(sdp.start.clone()), ..Default::default() }).unwrap();
        let x_eq = [60.0 / 110.0; 6];
        assert!(s.objective <= trace_for(&x_eq, &users) * (1.0 + 1e-6));
        assert!(verify_solution(&sdp.problem, &s, 1e-7).passes(1e-7));
    }

    #[test]
    fn missing_beam_is_an_assembly_error() {
        let mut user = four_anchor_user([0, 1, 2, 3], [1.0; 4]);
        user[2].var = None;
        let input = PowerSdpInput {
            beam_sat: vec![0, 1, 2, 3],
            per_beam_w: 110.0,
            per_sat_w: 6100.0,
            users: vec![user],
            start_w: vec![1.0; 4],
            user_weights: Vec::new(),
        };
        assert!(matches!(assemble_power_sdp(&input), Err(Error::Assembly(_))));
    }
}
