//! A small reverse-mode tape over scalars, vectors and matrices.
//!
//! Training differentiates the velocity prediction exactly as it is computed:
//! through every Euler step, chart re-centering, per-step Jacobian factor and
//! linear solve. Rather than hand-deriving those compositions, the forward
//! pass is recorded on this tape and the gradients fall out mechanically.
//! The op set is the minimum the pipeline needs; each rule is standard.

use nalgebra::{DMatrix, DVector};

use crate::manifold::sphere::sinc_family;
use crate::real::Real;

#[derive(Debug, Clone)]
pub enum Val<T: Real> {
    S(T),
    V(DVector<T>),
    M(DMatrix<T>),
}

impl<T: Real> Val<T> {
    fn add_assign(&mut self, other: &Val<T>) {
        match (self, other) {
            (Val::S(a), Val::S(b)) => *a += *b,
            (Val::V(a), Val::V(b)) => *a += b,
            (Val::M(a), Val::M(b)) => *a += b,
            _ => panic!("gradient shape mismatch"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Id(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    // scalars
    SAdd(Id, Id),
    SSub(Id, Id),
    SMul(Id, Id),
    SDiv(Id, Id),
    SNeg(Id),
    SSqrt(Id),
    SExp(Id),
    Atan2(Id, Id),
    SincSqrt(Id),
    SincSqrtD1(Id),
    SincSqrtD2(Id),
    CosSqrt(Id),
    // vectors
    VAdd(Id, Id),
    VSub(Id, Id),
    VScaleS(Id, Id),
    VScaleC(Id, f64),
    Dot(Id, Id),
    MatVec(Id, Id),
    SolveVec(Id, Id),
    Tanh(Id),
    VOneMinusSq(Id),
    VConcat(Vec<Id>),
    VSlice(Id, usize, usize),
    // matrices
    MAdd(Id, Id),
    MSub(Id, Id),
    MScaleS(Id, Id),
    MScaleC(Id, f64),
    MatMul(Id, Id),
    SolveMat(Id, Id),
    Outer(Id, Id),
    ScaleRows(Id, Id),
    AddEyeC(Id),
    SetBlock(Id, Id, usize),
    AddBlock(Id, Id, usize),
    SliceCols(Id, usize, usize),
}

struct Node<T: Real> {
    val: Val<T>,
    op: Op,
}

pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

pub struct Gradients<T: Real> {
    grads: Vec<Option<Val<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn scalar(&self, id: Id) -> T {
        match self.grads[id.0].as_ref() {
            Some(Val::S(s)) => *s,
            None => T::zero(),
            _ => panic!("not a scalar gradient"),
        }
    }

    pub fn vector(&self, id: Id, len: usize) -> DVector<T> {
        match self.grads[id.0].as_ref() {
            Some(Val::V(v)) => v.clone(),
            None => DVector::zeros(len),
            _ => panic!("not a vector gradient"),
        }
    }

    pub fn matrix(&self, id: Id, rows: usize, cols: usize) -> DMatrix<T> {
        match self.grads[id.0].as_ref() {
            Some(Val::M(m)) => m.clone(),
            None => DMatrix::zeros(rows, cols),
            _ => panic!("not a matrix gradient"),
        }
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, val: Val<T>, op: Op) -> Id {
        self.nodes.push(Node { val, op });
        Id(self.nodes.len() - 1)
    }

    pub fn leaf_s(&mut self, v: T) -> Id {
        self.push(Val::S(v), Op::Leaf)
    }

    pub fn leaf_v(&mut self, v: DVector<T>) -> Id {
        self.push(Val::V(v), Op::Leaf)
    }

    pub fn leaf_m(&mut self, m: DMatrix<T>) -> Id {
        self.push(Val::M(m), Op::Leaf)
    }

    pub fn s(&self, id: Id) -> T {
        match &self.nodes[id.0].val {
            Val::S(s) => *s,
            _ => panic!("node is not a scalar"),
        }
    }

    pub fn v(&self, id: Id) -> &DVector<T> {
        match &self.nodes[id.0].val {
            Val::V(v) => v,
            _ => panic!("node is not a vector"),
        }
    }

    pub fn m(&self, id: Id) -> &DMatrix<T> {
        match &self.nodes[id.0].val {
            Val::M(m) => m,
            _ => panic!("node is not a matrix"),
        }
    }

    // ---- scalar ops -----------------------------------------------------

    pub fn s_add(&mut self, a: Id, b: Id) -> Id {
        let v = self.s(a) + self.s(b);
        self.push(Val::S(v), Op::SAdd(a, b))
    }

    pub fn s_sub(&mut self, a: Id, b: Id) -> Id {
        let v = self.s(a) - self.s(b);
        self.push(Val::S(v), Op::SSub(a, b))
    }

    pub fn s_mul(&mut self, a: Id, b: Id) -> Id {
        let v = self.s(a) * self.s(b);
        self.push(Val::S(v), Op::SMul(a, b))
    }

    pub fn s_div(&mut self, a: Id, b: Id) -> Id {
        let v = self.s(a) / self.s(b);
        self.push(Val::S(v), Op::SDiv(a, b))
    }

    pub fn s_neg(&mut self, a: Id) -> Id {
        let v = -self.s(a);
        self.push(Val::S(v), Op::SNeg(a))
    }

    pub fn s_sqrt(&mut self, a: Id) -> Id {
        let v = self.s(a).sqrt();
        self.push(Val::S(v), Op::SSqrt(a))
    }

    pub fn s_exp(&mut self, a: Id) -> Id {
        let v = self.s(a).exp();
        self.push(Val::S(v), Op::SExp(a))
    }

    pub fn atan2(&mut self, y: Id, x: Id) -> Id {
        let v = self.s(y).atan2(self.s(x));
        self.push(Val::S(v), Op::Atan2(y, x))
    }

    pub fn sinc_sqrt(&mut self, rho: Id) -> Id {
        let (s0, _, _, _) = sinc_family(self.s(rho));
        self.push(Val::S(s0), Op::SincSqrt(rho))
    }

    pub fn sinc_sqrt_d1(&mut self, rho: Id) -> Id {
        let (_, s1, _, _) = sinc_family(self.s(rho));
        self.push(Val::S(s1), Op::SincSqrtD1(rho))
    }

    pub fn sinc_sqrt_d2(&mut self, rho: Id) -> Id {
        let (_, _, s2, _) = sinc_family(self.s(rho));
        self.push(Val::S(s2), Op::SincSqrtD2(rho))
    }

    pub fn cos_sqrt(&mut self, rho: Id) -> Id {
        let v = crate::manifold::sphere::cos_sqrt(self.s(rho));
        self.push(Val::S(v), Op::CosSqrt(rho))
    }

    // ---- vector ops -----------------------------------------------------

    pub fn v_add(&mut self, a: Id, b: Id) -> Id {
        let v = self.v(a) + self.v(b);
        self.push(Val::V(v), Op::VAdd(a, b))
    }

    pub fn v_sub(&mut self, a: Id, b: Id) -> Id {
        let v = self.v(a) - self.v(b);
        self.push(Val::V(v), Op::VSub(a, b))
    }

    pub fn v_scale_s(&mut self, v: Id, s: Id) -> Id {
        let out = self.v(v) * self.s(s);
        self.push(Val::V(out), Op::VScaleS(v, s))
    }

    pub fn v_scale_c(&mut self, v: Id, c: f64) -> Id {
        let out = self.v(v) * T::of(c);
        self.push(Val::V(out), Op::VScaleC(v, c))
    }

    pub fn dot(&mut self, a: Id, b: Id) -> Id {
        let v = self.v(a).dot(self.v(b));
        self.push(Val::S(v), Op::Dot(a, b))
    }

    pub fn mat_vec(&mut self, m: Id, v: Id) -> Id {
        let out = self.m(m) * self.v(v);
        self.push(Val::V(out), Op::MatVec(m, v))
    }

    /// `m^{-1} b`
    pub fn solve_vec(&mut self, m: Id, b: Id) -> Id {
        let out = self
            .m(m)
            .clone()
            .lu()
            .solve(self.v(b))
            .expect("singular matrix in solve_vec");
        self.push(Val::V(out), Op::SolveVec(m, b))
    }

    pub fn tanh(&mut self, v: Id) -> Id {
        let mut out = self.v(v).clone();
        out.apply(|x| *x = x.tanh());
        self.push(Val::V(out), Op::Tanh(v))
    }

    /// elementwise `1 - v_i^2`
    pub fn v_one_minus_sq(&mut self, v: Id) -> Id {
        let out = self.v(v).map(|x| T::one() - x * x);
        self.push(Val::V(out), Op::VOneMinusSq(v))
    }

    pub fn v_concat(&mut self, parts: &[Id]) -> Id {
        let total: usize = parts.iter().map(|p| self.v(*p).len()).sum();
        let mut out = DVector::zeros(total);
        let mut off = 0;
        for p in parts {
            let pv = self.v(*p);
            out.rows_mut(off, pv.len()).copy_from(pv);
            off += pv.len();
        }
        self.push(Val::V(out), Op::VConcat(parts.to_vec()))
    }

    pub fn v_slice(&mut self, v: Id, off: usize, len: usize) -> Id {
        let out = self.v(v).rows(off, len).into_owned();
        self.push(Val::V(out), Op::VSlice(v, off, len))
    }

    // ---- matrix ops -----------------------------------------------------

    pub fn m_add(&mut self, a: Id, b: Id) -> Id {
        let v = self.m(a) + self.m(b);
        self.push(Val::M(v), Op::MAdd(a, b))
    }

    pub fn m_sub(&mut self, a: Id, b: Id) -> Id {
        let v = self.m(a) - self.m(b);
        self.push(Val::M(v), Op::MSub(a, b))
    }

    pub fn m_scale_s(&mut self, m: Id, s: Id) -> Id {
        let v = self.m(m) * self.s(s);
        self.push(Val::M(v), Op::MScaleS(m, s))
    }

    pub fn m_scale_c(&mut self, m: Id, c: f64) -> Id {
        let v = self.m(m) * T::of(c);
        self.push(Val::M(v), Op::MScaleC(m, c))
    }

    pub fn mat_mul(&mut self, a: Id, b: Id) -> Id {
        let v = self.m(a) * self.m(b);
        self.push(Val::M(v), Op::MatMul(a, b))
    }

    /// `a^{-1} b`
    pub fn solve_mat(&mut self, a: Id, b: Id) -> Id {
        let out = self
            .m(a)
            .clone()
            .lu()
            .solve(self.m(b))
            .expect("singular matrix in solve_mat");
        self.push(Val::M(out), Op::SolveMat(a, b))
    }

    pub fn outer(&mut self, a: Id, b: Id) -> Id {
        let v = self.v(a) * self.v(b).transpose();
        self.push(Val::M(v), Op::Outer(a, b))
    }

    /// `diag(d) m`
    pub fn scale_rows(&mut self, d: Id, m: Id) -> Id {
        let mut out = self.m(m).clone();
        for (r, di) in self.v(d).iter().enumerate() {
            out.row_mut(r).scale_mut(*di);
        }
        self.push(Val::M(out), Op::ScaleRows(d, m))
    }

    /// `m + c I`
    pub fn add_eye_c(&mut self, m: Id, c: f64) -> Id {
        let mut out = self.m(m).clone();
        for i in 0..out.nrows().min(out.ncols()) {
            out[(i, i)] += T::of(c);
        }
        self.push(Val::M(out), Op::AddEyeC(m))
    }

    /// Replace the square diagonal block of `base` at `off` with `blk`.
    pub fn set_block(&mut self, base: Id, blk: Id, off: usize) -> Id {
        let mut out = self.m(base).clone();
        let b = self.m(blk).clone();
        out.view_mut((off, off), (b.nrows(), b.ncols())).copy_from(&b);
        self.push(Val::M(out), Op::SetBlock(base, blk, off))
    }

    /// Add `blk` into the square diagonal block of `base` at `off`.
    pub fn add_block(&mut self, base: Id, blk: Id, off: usize) -> Id {
        let mut out = self.m(base).clone();
        let b = self.m(blk).clone();
        let mut view = out.view_mut((off, off), (b.nrows(), b.ncols()));
        view += &b;
        self.push(Val::M(out), Op::AddBlock(base, blk, off))
    }

    pub fn slice_cols(&mut self, m: Id, off: usize, len: usize) -> Id {
        let out = self.m(m).columns(off, len).into_owned();
        self.push(Val::M(out), Op::SliceCols(m, off, len))
    }

    // ---- reverse pass ----------------------------------------------------

    /// Backward from a scalar node with cotangent 1.
    pub fn backward(&self, seed: Id) -> Gradients<T> {
        self.backward_seeded(&[(seed, Val::S(T::one()))])
    }

    /// Backward from arbitrary nodes with explicit cotangents.
    pub fn backward_seeded(&self, seeds: &[(Id, Val<T>)]) -> Gradients<T> {
        let mut grads: Vec<Option<Val<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut top = 0;
        for (id, cot) in seeds {
            acc(&mut grads, *id, cot.clone());
            top = top.max(id.0);
        }

        for i in (0..=top).rev() {
            let g = match grads[i].clone() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::SAdd(a, b) => {
                    let gs = as_s(&g);
                    acc(&mut grads, *a, Val::S(gs));
                    acc(&mut grads, *b, Val::S(gs));
                }
                Op::SSub(a, b) => {
                    let gs = as_s(&g);
                    acc(&mut grads, *a, Val::S(gs));
                    acc(&mut grads, *b, Val::S(-gs));
                }
                Op::SMul(a, b) => {
                    let gs = as_s(&g);
                    let (va, vb) = (self.s(*a), self.s(*b));
                    acc(&mut grads, *a, Val::S(gs * vb));
                    acc(&mut grads, *b, Val::S(gs * va));
                }
                Op::SDiv(a, b) => {
                    let gs = as_s(&g);
                    let (va, vb) = (self.s(*a), self.s(*b));
                    acc(&mut grads, *a, Val::S(gs / vb));
                    acc(&mut grads, *b, Val::S(-gs * va / (vb * vb)));
                }
                Op::SNeg(a) => acc(&mut grads, *a, Val::S(-as_s(&g))),
                Op::SSqrt(a) => {
                    let y = self.s(Id(i));
                    acc(&mut grads, *a, Val::S(as_s(&g) / (T::of(2.0) * y)));
                }
                Op::SExp(a) => {
                    let y = self.s(Id(i));
                    acc(&mut grads, *a, Val::S(as_s(&g) * y));
                }
                Op::Atan2(yn, xn) => {
                    let gs = as_s(&g);
                    let (yv, xv) = (self.s(*yn), self.s(*xn));
                    let denom = yv * yv + xv * xv;
                    acc(&mut grads, *yn, Val::S(gs * xv / denom));
                    acc(&mut grads, *xn, Val::S(-gs * yv / denom));
                }
                Op::SincSqrt(a) => {
                    let (_, s1, _, _) = sinc_family(self.s(*a));
                    acc(&mut grads, *a, Val::S(as_s(&g) * s1));
                }
                Op::SincSqrtD1(a) => {
                    let (_, _, s2, _) = sinc_family(self.s(*a));
                    acc(&mut grads, *a, Val::S(as_s(&g) * s2));
                }
                Op::SincSqrtD2(a) => {
                    let (_, _, _, s3) = sinc_family(self.s(*a));
                    acc(&mut grads, *a, Val::S(as_s(&g) * s3));
                }
                Op::CosSqrt(a) => {
                    let (s0, _, _, _) = sinc_family(self.s(*a));
                    acc(&mut grads, *a, Val::S(-as_s(&g) * s0 / T::of(2.0)));
                }
                Op::VAdd(a, b) => {
                    let gv = as_v(&g);
                    acc(&mut grads, *a, Val::V(gv.clone()));
                    acc(&mut grads, *b, Val::V(gv.clone()));
                }
                Op::VSub(a, b) => {
                    let gv = as_v(&g);
                    acc(&mut grads, *a, Val::V(gv.clone()));
                    acc(&mut grads, *b, Val::V(-gv.clone()));
                }
                Op::VScaleS(v, s) => {
                    let gv = as_v(&g);
                    acc(&mut grads, *v, Val::V(gv * self.s(*s)));
                    acc(&mut grads, *s, Val::S(gv.dot(self.v(*v))));
                }
                Op::VScaleC(v, c) => {
                    acc(&mut grads, *v, Val::V(as_v(&g) * T::of(*c)));
                }
                Op::Dot(a, b) => {
                    let gs = as_s(&g);
                    acc(&mut grads, *a, Val::V(self.v(*b) * gs));
                    acc(&mut grads, *b, Val::V(self.v(*a) * gs));
                }
                Op::MatVec(m, v) => {
                    let gv = as_v(&g);
                    acc(&mut grads, *m, Val::M(gv * self.v(*v).transpose()));
                    acc(&mut grads, *v, Val::V(self.m(*m).transpose() * gv));
                }
                Op::SolveVec(m, b) => {
                    let gv = as_v(&g);
                    let bbar = self
                        .m(*m)
                        .transpose()
                        .lu()
                        .solve(gv)
                        .expect("singular in solve_vec vjp");
                    let y = self.v(Id(i)).clone();
                    acc(&mut grads, *m, Val::M(-(&bbar) * y.transpose()));
                    acc(&mut grads, *b, Val::V(bbar));
                }
                Op::Tanh(v) => {
                    let y = self.v(Id(i));
                    let gv = as_v(&g);
                    let delta =
                        DVector::from_fn(y.len(), |r, _| gv[r] * (T::one() - y[r] * y[r]));
                    acc(&mut grads, *v, Val::V(delta));
                }
                Op::VOneMinusSq(v) => {
                    let gv = as_v(&g);
                    let vv = self.v(*v);
                    let delta = DVector::from_fn(vv.len(), |r, _| -T::of(2.0) * gv[r] * vv[r]);
                    acc(&mut grads, *v, Val::V(delta));
                }
                Op::VConcat(parts) => {
                    let gv = as_v(&g);
                    let mut off = 0;
                    for p in parts {
                        let len = self.v(*p).len();
                        acc(&mut grads, *p, Val::V(gv.rows(off, len).into_owned()));
                        off += len;
                    }
                }
                Op::VSlice(v, off, len) => {
                    let gv = as_v(&g);
                    let mut full = DVector::zeros(self.v(*v).len());
                    full.rows_mut(*off, *len).copy_from(gv);
                    acc(&mut grads, *v, Val::V(full));
                }
                Op::MAdd(a, b) => {
                    let gm = as_m(&g);
                    acc(&mut grads, *a, Val::M(gm.clone()));
                    acc(&mut grads, *b, Val::M(gm.clone()));
                }
                Op::MSub(a, b) => {
                    let gm = as_m(&g);
                    acc(&mut grads, *a, Val::M(gm.clone()));
                    acc(&mut grads, *b, Val::M(-gm.clone()));
                }
                Op::MScaleS(m, s) => {
                    let gm = as_m(&g);
                    acc(&mut grads, *m, Val::M(gm * self.s(*s)));
                    let fro = gm.zip_fold(self.m(*m), T::zero(), |a, x, y| a + x * y);
                    acc(&mut grads, *s, Val::S(fro));
                }
                Op::MScaleC(m, c) => {
                    acc(&mut grads, *m, Val::M(as_m(&g) * T::of(*c)));
                }
                Op::MatMul(a, b) => {
                    let gm = as_m(&g);
                    acc(&mut grads, *a, Val::M(gm * self.m(*b).transpose()));
                    acc(&mut grads, *b, Val::M(self.m(*a).transpose() * gm));
                }
                Op::SolveMat(a, b) => {
                    let gm = as_m(&g);
                    let bbar = self
                        .m(*a)
                        .transpose()
                        .lu()
                        .solve(gm)
                        .expect("singular in solve_mat vjp");
                    let y = self.m(Id(i)).clone();
                    acc(&mut grads, *a, Val::M(-(&bbar) * y.transpose()));
                    acc(&mut grads, *b, Val::M(bbar));
                }
                Op::Outer(a, b) => {
                    let gm = as_m(&g);
                    acc(&mut grads, *a, Val::V(gm * self.v(*b)));
                    acc(&mut grads, *b, Val::V(gm.transpose() * self.v(*a)));
                }
                Op::ScaleRows(d, m) => {
                    let gm = as_m(&g);
                    let mv = self.m(*m);
                    let dv = self.v(*d);
                    let dbar = DVector::from_fn(dv.len(), |r, _| {
                        let mut s = T::zero();
                        for c in 0..mv.ncols() {
                            s += gm[(r, c)] * mv[(r, c)];
                        }
                        s
                    });
                    let mut mbar = gm.clone();
                    for (r, di) in dv.iter().enumerate() {
                        mbar.row_mut(r).scale_mut(*di);
                    }
                    acc(&mut grads, *d, Val::V(dbar));
                    acc(&mut grads, *m, Val::M(mbar));
                }
                Op::AddEyeC(m) => {
                    acc(&mut grads, *m, Val::M(as_m(&g).clone()));
                }
                Op::SetBlock(base, blk, off) => {
                    let gm = as_m(&g);
                    let bsz = self.m(*blk).nrows();
                    let mut gbase = gm.clone();
                    gbase.view_mut((*off, *off), (bsz, bsz)).fill(T::zero());
                    acc(&mut grads, *base, Val::M(gbase));
                    acc(
                        &mut grads,
                        *blk,
                        Val::M(gm.view((*off, *off), (bsz, bsz)).into_owned()),
                    );
                }
                Op::AddBlock(base, blk, off) => {
                    let gm = as_m(&g);
                    let bsz = self.m(*blk).nrows();
                    acc(&mut grads, *base, Val::M(gm.clone()));
                    acc(
                        &mut grads,
                        *blk,
                        Val::M(gm.view((*off, *off), (bsz, bsz)).into_owned()),
                    );
                }
                Op::SliceCols(m, off, len) => {
                    let gm = as_m(&g);
                    let src = self.m(*m);
                    let mut full = DMatrix::zeros(src.nrows(), src.ncols());
                    full.view_mut((0, *off), (src.nrows(), *len)).copy_from(gm);
                    acc(&mut grads, *m, Val::M(full));
                }
            }
        }
        Gradients { grads }
    }
}

fn acc<T: Real>(grads: &mut [Option<Val<T>>], id: Id, delta: Val<T>) {
    match &mut grads[id.0] {
        Some(slot) => slot.add_assign(&delta),
        none => *none = Some(delta),
    }
}

fn as_s<T: Real>(v: &Val<T>) -> T {
    match v {
        Val::S(s) => *s,
        _ => panic!("expected scalar gradient"),
    }
}

fn as_v<T: Real>(v: &Val<T>) -> &DVector<T> {
    match v {
        Val::V(x) => x,
        _ => panic!("expected vector gradient"),
    }
}

fn as_m<T: Real>(v: &Val<T>) -> &DMatrix<T> {
    match v {
        Val::M(x) => x,
        _ => panic!("expected matrix gradient"),
    }
}
