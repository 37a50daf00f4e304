use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::par::Exec;

use super::tensor::{column_sums, matmul, matmul_at, matmul_bt, Tensor};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: usize, w: usize, b: usize },
    LinearShared { x: usize, shared: usize, w: usize, b: usize },
    Relu(usize),
    MaxPool { x: usize, argmax: Vec<usize> },
    Concat(Vec<usize>),
    Add(usize, usize),
    Scale(usize, f64),
    Sum(usize),
    Square(usize),
    Reshape(usize),
    External(Vec<(usize, Tensor)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation so [`Tape::backward`] can replay the
/// adjoints in reverse.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    exec: Exec,
    consumed: bool,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when `var` does not influence the loss or needs no gradient.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get_mut(var.index).and_then(Option::take)
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::with_exec(Exec::default())
    }

    pub fn with_exec(exec: Exec) -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            exec,
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if self.consumed {
            return Err(Error::Tape("tape already differentiated; record a new forward pass".into()));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite {
                step: self.nodes.len(),
                detail: format!("non-finite value produced by {}", op_name(&op)),
            });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Tape("variable does not belong to this tape".into()));
        }
        Ok(v.index)
    }

    fn grad_flag(&self, idx: &[usize]) -> bool {
        idx.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is returned by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable does not belong to this tape");
        &self.nodes[v.index].value
    }

    /// Row indices selected by a [`Tape::max_pool`] node.
    pub fn argmax(&self, v: Var) -> Option<&[usize]> {
        match &self.nodes.get(self.idx(v).ok()?)?.op {
            Op::MaxPool { argmax, .. } => Some(argmax),
            _ => None,
        }
    }

    /// `x·w + b` row by row, with `x: N×K`, `w: K×M`, `b: M`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let (xv, wv, bv) = (&self.nodes[xi].value, &self.nodes[wi].value, &self.nodes[bi].value);
        check_2d("linear input", xv)?;
        check_2d("linear weight", wv)?;
        if xv.cols() != wv.rows() {
            return Err(Error::shape("linear input width", wv.rows(), xv.cols()));
        }
        if bv.len() != wv.cols() {
            return Err(Error::shape("linear bias", wv.cols(), bv.len()));
        }
        let (n, m) = (xv.rows(), wv.cols());
        let mut y = matmul(self.exec, xv.data(), xv.cols(), wv.data(), m);
        add_bias(&mut y, bv.data());
        let value = Tensor::matrix(n, m, y)?;
        let rg = self.grad_flag(&[xi, wi, bi]);
        self.push(value, Op::Linear { x: xi, w: wi, b: bi }, rg)
    }

    /// `[x, shared]·w + b` where the vector `shared` is appended to every row
    /// of `x`; the shared part of the product is computed once.
    pub fn linear_shared(&mut self, x: Var, shared: Var, w: Var, b: Var) -> Result<Var> {
        let (xi, si, wi, bi) = (self.idx(x)?, self.idx(shared)?, self.idx(w)?, self.idx(b)?);
        let (xv, sv, wv, bv) = (
            &self.nodes[xi].value,
            &self.nodes[si].value,
            &self.nodes[wi].value,
            &self.nodes[bi].value,
        );
        check_2d("linear input", xv)?;
        check_2d("linear weight", wv)?;
        let k = xv.cols();
        if k + sv.len() != wv.rows() {
            return Err(Error::shape("linear input width", wv.rows(), k + sv.len()));
        }
        if bv.len() != wv.cols() {
            return Err(Error::shape("linear bias", wv.cols(), bv.len()));
        }
        let (n, m) = (xv.rows(), wv.cols());
        let (wa, wb) = wv.data().split_at(k * m);
        let mut offset = matmul(Exec::Sequential, sv.data(), sv.len(), wb, m);
        for (o, b) in offset.iter_mut().zip(bv.data()) {
            *o += b;
        }
        let mut y = matmul(self.exec, xv.data(), k, wa, m);
        add_bias(&mut y, &offset);
        let value = Tensor::matrix(n, m, y)?;
        let rg = self.grad_flag(&[xi, si, wi, bi]);
        self.push(
            value,
            Op::LinearShared {
                x: xi,
                shared: si,
                w: wi,
                b: bi,
            },
            rg,
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let xv = &self.nodes[xi].value;
        let data = xv.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.grad_flag(&[xi]);
        self.push(value, Op::Relu(xi), rg)
    }

    /// Column-wise maximum of an `N×D` tensor; ties go to the lowest row.
    pub fn max_pool(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let xv = &self.nodes[xi].value;
        check_2d("max_pool input", xv)?;
        if xv.rows() == 0 {
            return Err(Error::EmptyInput("max_pool over zero rows"));
        }
        let d = xv.cols();
        let mut best = xv.row(0).to_vec();
        let mut argmax = vec![0; d];
        for i in 1..xv.rows() {
            for (j, &v) in xv.row(i).iter().enumerate() {
                if v > best[j] {
                    best[j] = v;
                    argmax[j] = i;
                }
            }
        }
        let rg = self.grad_flag(&[xi]);
        self.push(Tensor::vector(best), Op::MaxPool { x: xi, argmax }, rg)
    }

    /// Concatenation of the flattened inputs into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&p| self.idx(p)).collect::<Result<Vec<_>>>()?;
        let data: Vec<f64> = idx.iter().flat_map(|&i| self.nodes[i].value.data().iter().copied()).collect();
        let rg = self.grad_flag(&idx);
        self.push(Tensor::vector(data), Op::Concat(idx), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        if av.shape() != bv.shape() {
            return Err(Error::shape("add", format!("{:?}", av.shape()), format!("{:?}", bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.grad_flag(&[ai, bi]);
        self.push(value, Op::Add(ai, bi), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let ai = self.idx(a)?;
        let av = &self.nodes[ai].value;
        let value = Tensor::new(av.shape().to_vec(), av.data().iter().map(|x| s * x).collect())?;
        let rg = self.grad_flag(&[ai]);
        self.push(value, Op::Scale(ai, s), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let total = self.nodes[ai].value.data().iter().sum();
        let rg = self.grad_flag(&[ai]);
        self.push(Tensor::scalar(total), Op::Sum(ai), rg)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let av = &self.nodes[ai].value;
        let value = Tensor::new(av.shape().to_vec(), av.data().iter().map(|x| x * x).collect())?;
        let rg = self.grad_flag(&[ai]);
        self.push(value, Op::Square(ai), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let ai = self.idx(a)?;
        let value = self.nodes[ai].value.clone().reshaped(shape)?;
        let rg = self.grad_flag(&[ai]);
        self.push(value, Op::Reshape(ai), rg)
    }

    /// A scalar computed outside the tape whose gradient with respect to
    /// each listed variable is already known.
    pub fn external(&mut self, value: f64, parts: Vec<(Var, Tensor)>) -> Result<Var> {
        let mut idx = Vec::with_capacity(parts.len());
        for (v, g) in parts {
            let i = self.idx(v)?;
            if g.len() != self.nodes[i].value.len() {
                return Err(Error::shape("external gradient", self.nodes[i].value.len(), g.len()));
            }
            idx.push((i, g));
        }
        let rg = idx.iter().any(|(i, _)| self.nodes[*i].requires_grad);
        self.push(Tensor::scalar(value), Op::External(idx), rg)
    }

    /// Reverse-mode gradients of the scalar `loss`. A tape can be
    /// differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Tape("backward already ran on this tape".into()));
        }
        let li = self.idx(loss)?;
        if self.nodes[li].value.len() != 1 {
            return Err(Error::Tape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[li].value.shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[li] = Some(Tensor::new(self.nodes[li].value.shape().to_vec(), vec![1.0])?);
        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                self.adjoint(i, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { tape: self.id, grads })
    }

    fn adjoint(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let nodes = &self.nodes;
        let wants = |j: usize| nodes[j].requires_grad;
        let shape_of = |j: usize| nodes[j].value.shape().to_vec();
        match &nodes[i].op {
            Op::Leaf => {}
            &Op::Linear { x, w, b } => {
                let (xv, wv) = (&nodes[x].value, &nodes[w].value);
                let (k, m) = (wv.rows(), wv.cols());
                if wants(x) {
                    let dx = matmul_bt(self.exec, g.data(), m, wv.data(), k);
                    accumulate(grads, x, Tensor::new(shape_of(x), dx)?);
                }
                if wants(w) {
                    let dw = matmul_at(self.exec, xv.data(), k, g.data(), m);
                    accumulate(grads, w, Tensor::new(shape_of(w), dw)?);
                }
                if wants(b) {
                    accumulate(grads, b, Tensor::new(shape_of(b), column_sums(g.data(), m))?);
                }
            }
            &Op::LinearShared { x, shared, w, b } => {
                let (xv, sv, wv) = (&nodes[x].value, &nodes[shared].value, &nodes[w].value);
                let (k, m) = (xv.cols(), wv.cols());
                let (wa, wb) = wv.data().split_at(k * m);
                let colsum = column_sums(g.data(), m);
                if wants(x) {
                    let dx = matmul_bt(self.exec, g.data(), m, wa, k);
                    accumulate(grads, x, Tensor::new(shape_of(x), dx)?);
                }
                if wants(shared) {
                    let ds = matmul_bt(Exec::Sequential, &colsum, m, wb, sv.len());
                    accumulate(grads, shared, Tensor::new(shape_of(shared), ds)?);
                }
                if wants(w) {
                    let mut dw = matmul_at(self.exec, xv.data(), k, g.data(), m);
                    for &s in sv.data() {
                        dw.extend(colsum.iter().map(|c| s * c));
                    }
                    accumulate(grads, w, Tensor::new(shape_of(w), dw)?);
                }
                if wants(b) {
                    accumulate(grads, b, Tensor::new(shape_of(b), colsum)?);
                }
            }
            &Op::Relu(x) => {
                let d = nodes[x]
                    .value
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                accumulate(grads, x, Tensor::new(shape_of(x), d)?);
            }
            Op::MaxPool { x, argmax } => {
                let xv = &nodes[*x].value;
                let d = xv.cols();
                let mut dx = Tensor::zeros(shape_of(*x));
                for (j, (&r, &gv)) in argmax.iter().zip(g.data()).enumerate() {
                    dx.data_mut()[r * d + j] += gv;
                }
                accumulate(grads, *x, dx);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = nodes[p].value.len();
                    if wants(p) {
                        let slice = g.data()[off..off + n].to_vec();
                        accumulate(grads, p, Tensor::new(shape_of(p), slice)?);
                    }
                    off += n;
                }
            }
            &Op::Add(a, b) => {
                if wants(a) {
                    accumulate(grads, a, g.clone().reshaped(shape_of(a))?);
                }
                if wants(b) {
                    accumulate(grads, b, g.clone().reshaped(shape_of(b))?);
                }
            }
            &Op::Scale(a, s) => {
                let d = g.data().iter().map(|v| s * v).collect();
                accumulate(grads, a, Tensor::new(shape_of(a), d)?);
            }
            &Op::Sum(a) => {
                accumulate(grads, a, Tensor::filled(shape_of(a), g.data()[0]));
            }
            &Op::Square(a) => {
                let d = nodes[a]
                    .value
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(x, gv)| 2.0 * x * gv)
                    .collect();
                accumulate(grads, a, Tensor::new(shape_of(a), d)?);
            }
            &Op::Reshape(a) => {
                accumulate(grads, a, g.clone().reshaped(shape_of(a))?);
            }
            Op::External(parts) => {
                let s = g.data()[0];
                for (p, pg) in parts {
                    if wants(*p) {
                        let d = pg.data().iter().map(|v| s * v).collect();
                        accumulate(grads, *p, Tensor::new(shape_of(*p), d)?);
                    }
                }
            }
        }
        Ok(())
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Linear { .. } => "linear",
        Op::LinearShared { .. } => "linear",
        Op::Relu(_) => "relu",
        Op::MaxPool { .. } => "max_pool",
        Op::Concat(_) => "concat",
        Op::Add(..) => "add",
        Op::Scale(..) => "scale",
        Op::Sum(_) => "sum",
        Op::Square(_) => "square",
        Op::Reshape(_) => "reshape",
        Op::External(_) => "external",
    }
}

fn check_2d(context: &'static str, t: &Tensor) -> Result<()> {
    if t.shape().len() != 2 {
        return Err(Error::shape(context, "2-D", format!("{:?}", t.shape())));
    }
    Ok(())
}

fn add_bias(y: &mut [f64], bias: &[f64]) {
    for row in y.chunks_exact_mut(bias.len().max(1)) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], i: usize, g: Tensor) {
    match &mut grads[i] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}
