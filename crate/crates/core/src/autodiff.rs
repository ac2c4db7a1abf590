//! Scalar expression graph with nested differentiation.
//!
//! Every [`DiffScalar`] is a handle to a node inside a [`DiffContext`]. The
//! context records the expression as an append-only arena, so node ids are a
//! topological order. Differentiation is a graph-to-graph transformation:
//! [`derive`] walks the graph backwards and records the adjoint expressions as
//! new nodes of the same context. Those nodes can be differentiated again,
//! which is how second derivatives with respect to inputs and first
//! derivatives of the resulting loss with respect to parameters are obtained
//! from one engine.
//!
//! Arithmetic is infallible at the call site. A domain violation (division by
//! zero, `ln` of a non-positive number, ...) or a non-finite result records a
//! fault in the context; [`DiffContext::status`], [`derive`] and [`gradient`]
//! report it as an [`AutodiffError`].

use std::cell::{Cell, RefCell};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("domain error in `{op}` at node {node}: argument {argument}")]
    Domain {
        op: &'static str,
        node: usize,
        argument: f64,
    },
    #[error("non-finite value produced by `{op}` at node {node}")]
    NonFinite { op: &'static str, node: usize },
    #[error("operands belong to different differentiation contexts")]
    ContextMismatch,
    #[error("node {0} is not a leaf variable")]
    NotALeaf(usize),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const,
    Var,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    Sin(u32),
    Cos(u32),
    Tanh(u32),
    Exp(u32),
    Ln(u32),
    Sqrt(u32),
    Powi(u32, i32),
    Powf(u32, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Const => "const",
            Op::Var => "var",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::Sin(..) => "sin",
            Op::Cos(..) => "cos",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Sqrt(..) => "sqrt",
            Op::Powi(..) => "powi",
            Op::Powf(..) => "powf",
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    value: f64,
}

/// Marker returned by [`DiffContext::checkpoint`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Checkpoint {
    len: usize,
    generation: u64,
}

/// Arena holding the expression graph. Confined to one thread.
#[derive(Default)]
pub struct DiffContext {
    nodes: RefCell<Vec<Node>>,
    generation: Cell<u64>,
    fault: RefCell<Option<AutodiffError>>,
}

impl fmt::Debug for DiffContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffContext")
            .field("nodes", &self.len())
            .field("generation", &self.generation.get())
            .field("fault", &*self.fault.borrow())
            .finish()
    }
}

/// Differentiable scalar: a node handle tied to its context.
#[derive(Clone, Copy)]
pub struct DiffScalar<'c> {
    ctx: &'c DiffContext,
    id: u32,
}

impl fmt::Debug for DiffScalar<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DiffScalar(#{} = {})", self.id, self.value())
    }
}

impl DiffContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(n)),
            ..Self::default()
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Constant node. Its derivative with respect to anything is zero.
    pub fn lift(&self, c: f64) -> DiffScalar<'_> {
        let id = self.record(Op::Const, c);
        DiffScalar { ctx: self, id }
    }

    /// Leaf variable that derivatives can be taken against.
    pub fn variable(&self, x0: f64) -> DiffScalar<'_> {
        let id = self.record(Op::Var, x0);
        DiffScalar { ctx: self, id }
    }

    pub fn variables(&self, xs: &[f64]) -> Vec<DiffScalar<'_>> {
        xs.iter().map(|&x| self.variable(x)).collect()
    }

    /// Sum of a sequence; an empty sequence yields the constant zero.
    pub fn sum<'c, I>(&'c self, items: I) -> DiffScalar<'c>
    where
        I: IntoIterator<Item = DiffScalar<'c>>,
    {
        items
            .into_iter()
            .fold(self.lift(0.0), |acc, item| acc + item)
    }

    /// First fault recorded since construction or the last [`clear_fault`](Self::clear_fault).
    pub fn status(&self) -> Result<()> {
        match &*self.fault.borrow() {
            Some(err) => Err(err.clone()),
            None => Ok(()),
        }
    }

    pub fn clear_fault(&self) {
        *self.fault.borrow_mut() = None;
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            len: self.len(),
            generation: self.generation.get(),
        }
    }

    /// Drop every node recorded after `cp`. Handles created after the
    /// checkpoint must not be used afterwards.
    pub fn rollback(&self, cp: Checkpoint) {
        let mut nodes = self.nodes.borrow_mut();
        debug_assert!(cp.len <= nodes.len(), "checkpoint from a later state");
        nodes.truncate(cp.len);
        self.generation.set(self.generation.get() + 1);
    }

    /// Number of rollbacks performed so far.
    pub fn generation(&self) -> u64 {
        self.generation.get()
    }

    /// Run `f`, then roll back everything it recorded.
    pub fn scoped<R>(&self, f: impl FnOnce(&Self) -> R) -> R {
        let cp = self.checkpoint();
        let out = f(self);
        self.rollback(cp);
        out
    }

    fn record(&self, op: Op, value: f64) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        assert!(id < u32::MAX as usize, "expression graph overflow");
        if !value.is_finite() && !matches!(op, Op::Const | Op::Var) {
            self.set_fault(AutodiffError::NonFinite {
                op: op.name(),
                node: id,
            });
        }
        nodes.push(Node { op, value });
        id as u32
    }

    fn set_fault(&self, err: AutodiffError) {
        let mut fault = self.fault.borrow_mut();
        if fault.is_none() {
            *fault = Some(err);
        }
    }

    fn node(&self, id: u32) -> Node {
        self.nodes.borrow()[id as usize]
    }

    fn value_of(&self, id: u32) -> f64 {
        self.nodes.borrow()[id as usize].value
    }

    fn const_value(&self, id: u32) -> Option<f64> {
        let n = self.node(id);
        matches!(n.op, Op::Const).then_some(n.value)
    }

    fn wrap(&self, id: u32) -> DiffScalar<'_> {
        DiffScalar { ctx: self, id }
    }

    // Node constructors with constant folding. Folding only ever replaces a
    // node by an operand or a constant carrying the identical value.

    fn add_ids(&self, a: u32, b: u32) -> u32 {
        match (self.const_value(a), self.const_value(b)) {
            (Some(x), Some(y)) => self.record(Op::Const, x + y),
            (Some(x), _) if x == 0.0 => b,
            (_, Some(y)) if y == 0.0 => a,
            _ => self.record(Op::Add(a, b), self.value_of(a) + self.value_of(b)),
        }
    }

    fn sub_ids(&self, a: u32, b: u32) -> u32 {
        match (self.const_value(a), self.const_value(b)) {
            (Some(x), Some(y)) => self.record(Op::Const, x - y),
            (_, Some(y)) if y == 0.0 => a,
            (Some(x), _) if x == 0.0 => self.neg_id(b),
            _ => self.record(Op::Sub(a, b), self.value_of(a) - self.value_of(b)),
        }
    }

    fn mul_ids(&self, a: u32, b: u32) -> u32 {
        match (self.const_value(a), self.const_value(b)) {
            (Some(x), Some(y)) => self.record(Op::Const, x * y),
            (Some(x), _) | (_, Some(x)) if x == 0.0 => self.record(Op::Const, 0.0),
            (Some(x), _) if x == 1.0 => b,
            (_, Some(y)) if y == 1.0 => a,
            (Some(x), _) if x == -1.0 => self.neg_id(b),
            (_, Some(y)) if y == -1.0 => self.neg_id(a),
            _ => self.record(Op::Mul(a, b), self.value_of(a) * self.value_of(b)),
        }
    }

    fn div_ids(&self, a: u32, b: u32) -> u32 {
        let denom = self.value_of(b);
        if denom == 0.0 {
            let id = self.len();
            self.set_fault(AutodiffError::Domain {
                op: "div",
                node: id,
                argument: denom,
            });
        }
        match (self.const_value(a), self.const_value(b)) {
            (Some(x), Some(y)) => self.record(Op::Const, x / y),
            (Some(x), _) if x == 0.0 && denom != 0.0 => self.record(Op::Const, 0.0),
            (_, Some(y)) if y == 1.0 => a,
            _ => self.record(Op::Div(a, b), self.value_of(a) / denom),
        }
    }

    fn neg_id(&self, a: u32) -> u32 {
        match self.const_value(a) {
            Some(x) => self.record(Op::Const, -x),
            None => self.record(Op::Neg(a), -self.value_of(a)),
        }
    }

    fn unary_id(&self, op: Op, a: u32) -> u32 {
        let x = self.value_of(a);
        let domain_ok = match op {
            Op::Ln(_) | Op::Sqrt(_) => x > 0.0,
            Op::Powf(_, p) => x > 0.0 || (x == 0.0 && p >= 1.0),
            Op::Powi(_, n) => x != 0.0 || n >= 0,
            _ => true,
        };
        if !domain_ok {
            let id = self.len();
            self.set_fault(AutodiffError::Domain {
                op: op.name(),
                node: id,
                argument: x,
            });
        }
        let value = match op {
            Op::Sin(_) => x.sin(),
            Op::Cos(_) => x.cos(),
            Op::Tanh(_) => x.tanh(),
            Op::Exp(_) => x.exp(),
            Op::Ln(_) => x.ln(),
            Op::Sqrt(_) => x.sqrt(),
            Op::Powi(_, n) => x.powi(n),
            Op::Powf(_, p) => x.powf(p),
            _ => unreachable!("not a unary op"),
        };
        if let Op::Powi(_, 0) = op {
            return self.record(Op::Const, 1.0);
        }
        if let Op::Powi(_, 1) = op {
            return a;
        }
        if self.const_value(a).is_some() {
            return self.record(Op::Const, value);
        }
        self.record(op, value)
    }

    fn check_leaf(&self, id: u32) -> Result<()> {
        match self.node(id).op {
            Op::Var => Ok(()),
            _ => Err(AutodiffError::NotALeaf(id as usize)),
        }
    }

    /// Forward mask of nodes (up to `out`) that depend on any of `wrt`.
    fn dependency_mask(&self, out: u32, wrt: &[u32]) -> Vec<bool> {
        let nodes = self.nodes.borrow();
        let n = out as usize + 1;
        let mut dep = vec![false; n];
        for &w in wrt {
            if (w as usize) < n {
                dep[w as usize] = true;
            }
        }
        for i in 0..n {
            if dep[i] {
                continue;
            }
            dep[i] = match nodes[i].op {
                Op::Const | Op::Var => false,
                Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                    dep[a as usize] || dep[b as usize]
                }
                Op::Neg(a)
                | Op::Sin(a)
                | Op::Cos(a)
                | Op::Tanh(a)
                | Op::Exp(a)
                | Op::Ln(a)
                | Op::Sqrt(a)
                | Op::Powi(a, _)
                | Op::Powf(a, _) => dep[a as usize],
            };
        }
        dep
    }

    /// Symbolic reverse sweep: records ∂out/∂w for every `w` in `wrt` as new
    /// nodes and returns their ids.
    fn adjoint_graph(&self, out: u32, wrt: &[u32]) -> Vec<u32> {
        let n = out as usize + 1;
        let dep = self.dependency_mask(out, wrt);
        let mut adj: Vec<Option<u32>> = vec![None; n];
        if dep[out as usize] {
            adj[out as usize] = Some(self.record(Op::Const, 1.0));
        }

        let accumulate = |adj: &mut Vec<Option<u32>>, target: u32, contrib: u32| {
            if !dep[target as usize] {
                return;
            }
            let slot = &mut adj[target as usize];
            *slot = Some(match *slot {
                None => contrib,
                Some(prev) => self.add_ids(prev, contrib),
            });
        };

        for i in (0..n).rev() {
            let Some(g) = adj[i] else { continue };
            let node = self.node(i as u32);
            let me = i as u32;
            match node.op {
                Op::Const | Op::Var => {}
                Op::Add(a, b) => {
                    accumulate(&mut adj, a, g);
                    accumulate(&mut adj, b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, a, g);
                    if dep[b as usize] {
                        let c = self.neg_id(g);
                        accumulate(&mut adj, b, c);
                    }
                }
                Op::Mul(a, b) => {
                    if dep[a as usize] {
                        let c = self.mul_ids(g, b);
                        accumulate(&mut adj, a, c);
                    }
                    if dep[b as usize] {
                        let c = self.mul_ids(g, a);
                        accumulate(&mut adj, b, c);
                    }
                }
                Op::Div(a, b) => {
                    if dep[a as usize] {
                        let c = self.div_ids(g, b);
                        accumulate(&mut adj, a, c);
                    }
                    if dep[b as usize] {
                        // d(a/b)/db = -(a/b)/b
                        let t = self.mul_ids(g, me);
                        let t = self.div_ids(t, b);
                        let c = self.neg_id(t);
                        accumulate(&mut adj, b, c);
                    }
                }
                Op::Neg(a) => {
                    let c = self.neg_id(g);
                    accumulate(&mut adj, a, c);
                }
                Op::Sin(a) => {
                    let d = self.unary_id(Op::Cos(a), a);
                    let c = self.mul_ids(g, d);
                    accumulate(&mut adj, a, c);
                }
                Op::Cos(a) => {
                    let d = self.unary_id(Op::Sin(a), a);
                    let t = self.mul_ids(g, d);
                    let c = self.neg_id(t);
                    accumulate(&mut adj, a, c);
                }
                Op::Tanh(a) => {
                    // 1 - tanh²
                    let sq = self.mul_ids(me, me);
                    let one = self.record(Op::Const, 1.0);
                    let d = self.sub_ids(one, sq);
                    let c = self.mul_ids(g, d);
                    accumulate(&mut adj, a, c);
                }
                Op::Exp(a) => {
                    let c = self.mul_ids(g, me);
                    accumulate(&mut adj, a, c);
                }
                Op::Ln(a) => {
                    let c = self.div_ids(g, a);
                    accumulate(&mut adj, a, c);
                }
                Op::Sqrt(a) => {
                    let two = self.record(Op::Const, 2.0);
                    let d = self.mul_ids(two, me);
                    let c = self.div_ids(g, d);
                    accumulate(&mut adj, a, c);
                }
                Op::Powi(a, k) => {
                    let p = self.unary_id(Op::Powi(a, k - 1), a);
                    let kc = self.record(Op::Const, k as f64);
                    let d = self.mul_ids(kc, p);
                    let c = self.mul_ids(g, d);
                    accumulate(&mut adj, a, c);
                }
                Op::Powf(a, p) => {
                    let q = self.unary_id(Op::Powf(a, p - 1.0), a);
                    let pc = self.record(Op::Const, p);
                    let d = self.mul_ids(pc, q);
                    let c = self.mul_ids(g, d);
                    accumulate(&mut adj, a, c);
                }
            }
        }

        wrt.iter()
            .map(|&w| match adj.get(w as usize).copied().flatten() {
                Some(id) => id,
                None => self.record(Op::Const, 0.0),
            })
            .collect()
    }

    /// Numeric reverse sweep over the graph below `out`.
    fn adjoint_values(&self, out: u32) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let n = out as usize + 1;
        let mut adj = vec![0.0; n];
        adj[out as usize] = 1.0;
        for i in (0..n).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            let node = nodes[i];
            match node.op {
                Op::Const | Op::Var => {}
                Op::Add(a, b) => {
                    adj[a as usize] += g;
                    adj[b as usize] += g;
                }
                Op::Sub(a, b) => {
                    adj[a as usize] += g;
                    adj[b as usize] -= g;
                }
                Op::Mul(a, b) => {
                    adj[a as usize] += g * nodes[b as usize].value;
                    adj[b as usize] += g * nodes[a as usize].value;
                }
                Op::Div(a, b) => {
                    let bv = nodes[b as usize].value;
                    adj[a as usize] += g / bv;
                    adj[b as usize] -= g * node.value / bv;
                }
                Op::Neg(a) => adj[a as usize] -= g,
                Op::Sin(a) => adj[a as usize] += g * nodes[a as usize].value.cos(),
                Op::Cos(a) => adj[a as usize] -= g * nodes[a as usize].value.sin(),
                Op::Tanh(a) => adj[a as usize] += g * (1.0 - node.value * node.value),
                Op::Exp(a) => adj[a as usize] += g * node.value,
                Op::Ln(a) => adj[a as usize] += g / nodes[a as usize].value,
                Op::Sqrt(a) => adj[a as usize] += g / (2.0 * node.value),
                Op::Powi(a, k) => {
                    adj[a as usize] += g * k as f64 * nodes[a as usize].value.powi(k - 1)
                }
                Op::Powf(a, p) => {
                    adj[a as usize] += g * p * nodes[a as usize].value.powf(p - 1.0)
                }
            }
        }
        adj
    }
}

fn same_ctx(a: &DiffContext, b: &DiffContext) -> bool {
    std::ptr::eq(a, b)
}

/// ∂output/∂wrt as a new differentiable node.
pub fn derive<'c>(output: DiffScalar<'c>, wrt: DiffScalar<'c>) -> Result<DiffScalar<'c>> {
    Ok(derive_many(output, &[wrt])?[0])
}

/// ∂output/∂wᵢ for every `wᵢ` from a single symbolic sweep.
pub fn derive_many<'c>(output: DiffScalar<'c>, wrt: &[DiffScalar<'c>]) -> Result<Vec<DiffScalar<'c>>> {
    let ctx = output.ctx;
    ctx.status()?;
    let mut ids = Vec::with_capacity(wrt.len());
    for w in wrt {
        if !same_ctx(ctx, w.ctx) {
            return Err(AutodiffError::ContextMismatch);
        }
        ctx.check_leaf(w.id)?;
        ids.push(w.id);
    }
    let adj = ctx.adjoint_graph(output.id, &ids);
    ctx.status()?;
    Ok(adj.into_iter().map(|id| ctx.wrap(id)).collect())
}

/// Numeric partials of `output` with respect to the leaves `wrt`, from one
/// reverse sweep.
pub fn gradient<'c>(output: DiffScalar<'c>, wrt: &[DiffScalar<'c>]) -> Result<Vec<f64>> {
    let ctx = output.ctx;
    ctx.status()?;
    for w in wrt {
        if !same_ctx(ctx, w.ctx) {
            return Err(AutodiffError::ContextMismatch);
        }
        ctx.check_leaf(w.id)?;
    }
    let adj = ctx.adjoint_values(output.id);
    Ok(wrt
        .iter()
        .map(|w| adj.get(w.id as usize).copied().unwrap_or(0.0))
        .collect())
}

impl<'c> DiffScalar<'c> {
    pub fn value(&self) -> f64 {
        self.ctx.value_of(self.id)
    }

    pub fn ctx(&self) -> &'c DiffContext {
        self.ctx
    }

    /// Node index inside the context.
    pub fn id(&self) -> usize {
        self.id as usize
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.ctx.node(self.id).op, Op::Var)
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.ctx.node(self.id).op, Op::Const)
    }

    fn binary(self, rhs: DiffScalar<'c>, f: impl FnOnce(&DiffContext, u32, u32) -> u32) -> Self {
        if !same_ctx(self.ctx, rhs.ctx) {
            self.ctx.set_fault(AutodiffError::ContextMismatch);
            return self.ctx.lift(f64::NAN);
        }
        let id = f(self.ctx, self.id, rhs.id);
        self.ctx.wrap(id)
    }

    fn unary(self, op: fn(u32) -> Op) -> Self {
        let id = self.ctx.unary_id(op(self.id), self.id);
        self.ctx.wrap(id)
    }

    pub fn sin(self) -> Self {
        self.unary(Op::Sin)
    }

    pub fn cos(self) -> Self {
        self.unary(Op::Cos)
    }

    pub fn tanh(self) -> Self {
        self.unary(Op::Tanh)
    }

    pub fn exp(self) -> Self {
        self.unary(Op::Exp)
    }

    pub fn ln(self) -> Self {
        self.unary(Op::Ln)
    }

    pub fn sqrt(self) -> Self {
        self.unary(Op::Sqrt)
    }

    pub fn powi(self, n: i32) -> Self {
        let id = self.ctx.unary_id(Op::Powi(self.id, n), self.id);
        self.ctx.wrap(id)
    }

    pub fn powf(self, p: f64) -> Self {
        let id = self.ctx.unary_id(Op::Powf(self.id, p), self.id);
        self.ctx.wrap(id)
    }

    /// General power `self^e = exp(e ln self)`; requires `self > 0`.
    pub fn pow(self, e: DiffScalar<'c>) -> Self {
        (e * self.ln()).exp()
    }

    pub fn square(self) -> Self {
        self * self
    }

    /// Fallible division: reports a zero denominator instead of recording a fault.
    pub fn checked_div(self, rhs: DiffScalar<'c>) -> Result<Self> {
        if rhs.value() == 0.0 {
            return Err(AutodiffError::Domain {
                op: "div",
                node: self.ctx.len(),
                argument: 0.0,
            });
        }
        Ok(self / rhs)
    }

    pub fn checked_ln(self) -> Result<Self> {
        let x = self.value();
        if x <= 0.0 {
            return Err(AutodiffError::Domain {
                op: "ln",
                node: self.ctx.len(),
                argument: x,
            });
        }
        Ok(self.ln())
    }

    pub fn checked_sqrt(self) -> Result<Self> {
        let x = self.value();
        if x <= 0.0 {
            return Err(AutodiffError::Domain {
                op: "sqrt",
                node: self.ctx.len(),
                argument: x,
            });
        }
        Ok(self.sqrt())
    }

    pub fn derive(self, wrt: DiffScalar<'c>) -> Result<Self> {
        derive(self, wrt)
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $ctor:ident) => {
        impl<'c> $trait for DiffScalar<'c> {
            type Output = DiffScalar<'c>;
            fn $method(self, rhs: DiffScalar<'c>) -> DiffScalar<'c> {
                self.binary(rhs, |ctx, a, b| ctx.$ctor(a, b))
            }
        }
        impl<'c> $trait<f64> for DiffScalar<'c> {
            type Output = DiffScalar<'c>;
            fn $method(self, rhs: f64) -> DiffScalar<'c> {
                let r = self.ctx.lift(rhs);
                self.binary(r, |ctx, a, b| ctx.$ctor(a, b))
            }
        }
        impl<'c> $trait<DiffScalar<'c>> for f64 {
            type Output = DiffScalar<'c>;
            fn $method(self, rhs: DiffScalar<'c>) -> DiffScalar<'c> {
                let l = rhs.ctx.lift(self);
                l.binary(rhs, |ctx, a, b| ctx.$ctor(a, b))
            }
        }
    };
}

binop!(Add, add, add_ids);
binop!(Sub, sub, sub_ids);
binop!(Mul, mul, mul_ids);
binop!(Div, div, div_ids);

impl<'c> Neg for DiffScalar<'c> {
    type Output = DiffScalar<'c>;
    fn neg(self) -> DiffScalar<'c> {
        let id = self.ctx.neg_id(self.id);
        self.ctx.wrap(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn lift_is_constant() {
        let ctx = DiffContext::new();
        let x = ctx.variable(0.4);
        let zero = ctx.lift(0.0);
        assert_eq!(derive(zero, x).unwrap().value(), 0.0);
        let one = ctx.lift(1.0);
        assert_eq!(derive(one * x, x).unwrap().value(), 1.0);
        assert_eq!(ctx.lift(PI).value(), PI);
    }

    #[test]
    fn power_rules() {
        let ctx = DiffContext::new();
        let x = ctx.variable(-0.7);
        assert_eq!(derive(x, x).unwrap().value(), 1.0);

        let x = ctx.variable(3.0);
        assert_eq!(derive(x * x, x).unwrap().value(), 6.0);

        let x = ctx.variable(2.0);
        let d1 = derive(x * x * x, x).unwrap();
        assert_eq!(derive(d1, x).unwrap().value(), 12.0);

        let x = ctx.variable(1.0);
        let d1 = derive(x.powi(4), x).unwrap();
        assert_eq!(derive(d1, x).unwrap().value(), 12.0);
    }

    #[test]
    fn elementary_rules() {
        let ctx = DiffContext::new();
        let x = ctx.variable(0.0);
        assert_eq!(derive(x.tanh(), x).unwrap().value(), 1.0);
        let d = derive(x.sin(), x).unwrap();
        assert_eq!(derive(d, x).unwrap().value(), 0.0);

        let x0 = 0.7;
        let x = ctx.variable(x0);
        let d = derive(x.sin() * x.cos(), x).unwrap().value();
        let fd = central(|t| t.sin() * t.cos(), x0, 1e-6);
        assert!((d - fd).abs() < 1e-8, "{d} vs {fd}");
        assert!((d - (2.0 * x0).cos()).abs() < 1e-14);
    }

    #[test]
    fn unary_values_match_f64() {
        let ctx = DiffContext::new();
        let x = ctx.variable(1.3);
        let y = ctx.variable(0.4);
        assert_eq!((x + y).value(), 1.3 + 0.4);
        assert_eq!((x - y).value(), 1.3 - 0.4);
        assert_eq!((x * y).value(), 1.3 * 0.4);
        assert_eq!((x / y).value(), 1.3 / 0.4);
        assert_eq!(x.exp().value(), 1.3f64.exp());
        assert_eq!(x.ln().value(), 1.3f64.ln());
        assert_eq!(x.sqrt().value(), 1.3f64.sqrt());
        assert_eq!(x.powf(2.5).value(), 1.3f64.powf(2.5));
        assert!((x.pow(y).value() - 1.3f64.powf(0.4)).abs() < 1e-15);
    }

    #[test]
    fn derivative_of_each_unary() {
        let ctx = DiffContext::new();
        let x0 = 0.83;
        let x = ctx.variable(x0);
        let cases: Vec<(DiffScalar, f64)> = vec![
            (x.cos(), -x0.sin()),
            (x.exp(), x0.exp()),
            (x.ln(), 1.0 / x0),
            (x.sqrt(), 0.5 / x0.sqrt()),
            (x.powf(1.7), 1.7 * x0.powf(0.7)),
            (1.0 / x, -1.0 / (x0 * x0)),
            (-x, -1.0),
            (x - 2.0 * x, -1.0),
        ];
        for (f, expected) in cases {
            let d = derive(f, x).unwrap().value();
            assert!((d - expected).abs() < 1e-14, "{d} vs {expected}");
        }
    }

    #[test]
    fn domain_errors_are_reported() {
        let ctx = DiffContext::new();
        let x = ctx.variable(-1.0);
        let _ = x.ln();
        assert!(matches!(
            ctx.status(),
            Err(AutodiffError::Domain { op: "ln", .. })
        ));
        assert!(derive(x * x, x).is_err());

        let ctx = DiffContext::new();
        let x = ctx.variable(1.0);
        let z = ctx.lift(0.0);
        assert!(x.checked_div(z).is_err());
        assert!(ctx.status().is_ok());
        let _ = x / z;
        assert!(ctx.status().is_err());
        ctx.clear_fault();
        assert!(ctx.status().is_ok());

        let ctx = DiffContext::new();
        let x = ctx.variable(0.0);
        assert!(x.checked_sqrt().is_err());
        let x = ctx.variable(800.0);
        let _ = x.exp();
        assert!(matches!(ctx.status(), Err(AutodiffError::NonFinite { .. })));
    }

    #[test]
    fn cross_context_is_usage_error() {
        let a = DiffContext::new();
        let b = DiffContext::new();
        let x = a.variable(1.0);
        let y = b.variable(1.0);
        assert_eq!(derive(x, y).unwrap_err(), AutodiffError::ContextMismatch);
        assert_eq!(
            gradient(x, &[y]).unwrap_err(),
            AutodiffError::ContextMismatch
        );
        let _ = x + y;
        assert_eq!(a.status().unwrap_err(), AutodiffError::ContextMismatch);
    }

    #[test]
    fn wrt_must_be_leaf() {
        let ctx = DiffContext::new();
        let x = ctx.variable(1.0);
        let y = x * x;
        assert!(matches!(derive(y, y), Err(AutodiffError::NotALeaf(_))));
    }

    #[test]
    fn gradient_basic() {
        let ctx = DiffContext::new();
        let x = ctx.variable(0.3);
        let y = ctx.variable(-1.1);
        assert_eq!(gradient(x + 2.0 * y, &[x, y]).unwrap(), vec![1.0, 2.0]);
        let c = ctx.lift(5.0);
        assert_eq!(gradient(c, &[x, y]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn rollback_removes_recorded_nodes() {
        let ctx = DiffContext::new();
        let x = ctx.variable(2.0);
        let cp = ctx.checkpoint();
        let before = ctx.len();
        let y = x.sin() * x.exp();
        let _ = derive(y, x).unwrap();
        assert!(ctx.len() > before);
        ctx.rollback(cp);
        assert_eq!(ctx.len(), before);
        assert_eq!(ctx.generation(), 1);
        let n = ctx.scoped(|c| {
            let z = x * x;
            derive(z, x).unwrap().value() + c.len() as f64 * 0.0
        });
        assert_eq!(n, 4.0);
        assert_eq!(ctx.len(), before);
    }

    #[test]
    fn third_order_nesting() {
        // d³/dx³ of x² y at fixed y, then ∂/∂y of that.
        let ctx = DiffContext::new();
        let x = ctx.variable(0.5);
        let y = ctx.variable(1.5);
        let f = (x * y).sin();
        let d1 = derive(f, x).unwrap();
        let d2 = derive(d1, x).unwrap();
        // d2 = -y² sin(xy); ∂/∂y = -2y sin(xy) - x y² cos(xy)
        let g = gradient(d2, &[y]).unwrap()[0];
        let (xv, yv) = (0.5f64, 1.5f64);
        let expected = -2.0 * yv * (xv * yv).sin() - xv * yv * yv * (xv * yv).cos();
        assert!((g - expected).abs() < 1e-13);
        let d3 = derive(d2, y).unwrap().value();
        assert!((d3 - expected).abs() < 1e-13);
    }
}
