//! Primitive tensor operations.
//!
//! `eval_primitive` evaluates the public op vocabulary with standard
//! broadcasting and reduction rules. Evaluation is deterministic: identical
//! inputs produce bit-identical outputs. Reductions over empty axes are
//! total (sum -> 0, mean -> NaN, max -> -inf, argmax -> 0) so shape
//! inference can push empty probe tensors through any kernel.

use crate::error::{CoreError, Result};
use crate::tensor::{broadcast_offsets, broadcast_shapes, num_elements, Buffer, DType, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpCode {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    MatMul,
    Relu,
    Tanh,
    Exp,
    Log,
    Square,
    Sum,
    Mean,
    Max,
    ArgMax,
    Gather,
    OneHot,
    Concat,
    Reshape,
    Broadcast,
    Less,
    Where,
    StopGradient,
    Clip,
}

/// Structural attributes of an operation, fixed when the op is created.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Attrs {
    pub axis: Option<isize>,
    pub keep_dims: bool,
    /// one_hot depth.
    pub depth: Option<usize>,
    /// reshape / broadcast target; -1 infers a single extent (reshape only).
    pub shape: Option<Vec<isize>>,
    pub low: Option<f64>,
    pub high: Option<f64>,
}

impl Attrs {
    pub fn axis(axis: isize) -> Attrs {
        Attrs { axis: Some(axis), ..Attrs::default() }
    }

    pub fn axis_keep(axis: isize, keep_dims: bool) -> Attrs {
        Attrs { axis: Some(axis), keep_dims, ..Attrs::default() }
    }
}

fn resolve_axis(axis: isize, rank: usize) -> Result<usize> {
    let a = if axis < 0 { axis + rank as isize } else { axis };
    if a < 0 || a as usize >= rank.max(1) {
        return Err(CoreError::AxisOutOfRange { axis, rank });
    }
    Ok(a as usize)
}

fn binary_f64(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let (xa, xb) = (a.as_f64()?, b.as_f64()?);
    if a.shape() == b.shape() {
        let out: Vec<f64> = xa.iter().zip(xb).map(|(x, y)| f(*x, *y)).collect();
        return Tensor::from_f64(a.shape().to_vec(), out);
    }
    let shape = broadcast_shapes(a.shape(), b.shape())?;
    let oa = broadcast_offsets(a.shape(), &shape);
    let ob = broadcast_offsets(b.shape(), &shape);
    let out: Vec<f64> = (0..num_elements(&shape)).map(|i| f(xa[oa[i]], xb[ob[i]])).collect();
    Tensor::from_f64(shape, out)
}

fn binary_i64(a: &Tensor, b: &Tensor, f: impl Fn(i64, i64) -> i64) -> Result<Tensor> {
    let (xa, xb) = (a.as_i64()?, b.as_i64()?);
    if a.shape() == b.shape() {
        let out: Vec<i64> = xa.iter().zip(xb).map(|(x, y)| f(*x, *y)).collect();
        return Tensor::from_i64(a.shape().to_vec(), out);
    }
    let shape = broadcast_shapes(a.shape(), b.shape())?;
    let oa = broadcast_offsets(a.shape(), &shape);
    let ob = broadcast_offsets(b.shape(), &shape);
    let out: Vec<i64> = (0..num_elements(&shape)).map(|i| f(xa[oa[i]], xb[ob[i]])).collect();
    Tensor::from_i64(shape, out)
}

fn arith(a: &Tensor, b: &Tensor, op: OpCode) -> Result<Tensor> {
    if a.dtype() != b.dtype() {
        return Err(CoreError::DTypeMismatch(format!(
            "{:?} combines {} with {}",
            op,
            a.dtype(),
            b.dtype()
        )));
    }
    match a.dtype() {
        DType::F64 => match op {
            OpCode::Add => binary_f64(a, b, |x, y| x + y),
            OpCode::Sub => binary_f64(a, b, |x, y| x - y),
            OpCode::Mul => binary_f64(a, b, |x, y| x * y),
            OpCode::Div => binary_f64(a, b, |x, y| x / y),
            _ => unreachable!(),
        },
        DType::I64 => match op {
            OpCode::Add => binary_i64(a, b, |x, y| x.wrapping_add(y)),
            OpCode::Sub => binary_i64(a, b, |x, y| x.wrapping_sub(y)),
            OpCode::Mul => binary_i64(a, b, |x, y| x.wrapping_mul(y)),
            // Truncating division, used for ring-index arithmetic.
            OpCode::Div => binary_i64(a, b, |x, y| if y == 0 { 0 } else { x / y }),
            _ => unreachable!(),
        },
        DType::Bool => Err(CoreError::DTypeMismatch(format!(
            "{:?} not defined on bool tensors",
            op
        ))),
    }
}

fn unary_f64(a: &Tensor, f: impl Fn(f64) -> f64) -> Result<Tensor> {
    let out: Vec<f64> = a.as_f64()?.iter().map(|x| f(*x)).collect();
    Tensor::from_f64(a.shape().to_vec(), out)
}

fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(CoreError::ShapeMismatch(format!(
            "matmul requires rank-2 operands, found {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(CoreError::ShapeMismatch(format!(
            "matmul inner extents differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let xa = a.as_f64()?;
    let xb = b.as_f64()?;
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &xa[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &xb[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Tensor::from_f64(vec![m, n], out)
}

struct ReduceGeom {
    outer: usize,
    extent: usize,
    inner: usize,
    out_shape: Vec<usize>,
}

fn reduce_geom(shape: &[usize], axis: Option<isize>, keep: bool) -> Result<ReduceGeom> {
    match axis {
        None => Ok(ReduceGeom {
            outer: 1,
            extent: num_elements(shape),
            inner: 1,
            out_shape: if keep { vec![1; shape.len()] } else { vec![] },
        }),
        Some(ax) => {
            let a = resolve_axis(ax, shape.len())?;
            let outer: usize = shape[..a].iter().product();
            let inner: usize = shape[a + 1..].iter().product();
            let mut out_shape = shape.to_vec();
            if keep {
                out_shape[a] = 1;
            } else {
                out_shape.remove(a);
            }
            Ok(ReduceGeom { outer, extent: shape[a], inner, out_shape })
        }
    }
}

fn reduce_f64(
    a: &Tensor,
    attrs: &Attrs,
    init: f64,
    f: impl Fn(f64, f64) -> f64,
    finish: impl Fn(f64, usize) -> f64,
) -> Result<Tensor> {
    let g = reduce_geom(a.shape(), attrs.axis, attrs.keep_dims)?;
    let x = a.as_f64()?;
    let mut out = vec![init; g.outer * g.inner];
    for o in 0..g.outer {
        for e in 0..g.extent {
            let base = (o * g.extent + e) * g.inner;
            for i in 0..g.inner {
                let slot = o * g.inner + i;
                out[slot] = f(out[slot], x[base + i]);
            }
        }
    }
    for v in out.iter_mut() {
        *v = finish(*v, g.extent);
    }
    Tensor::from_f64(g.out_shape, out)
}

fn argmax(a: &Tensor, attrs: &Attrs) -> Result<Tensor> {
    let axis = attrs.axis.ok_or_else(|| CoreError::Invalid("argmax requires an axis".into()))?;
    let g = reduce_geom(a.shape(), Some(axis), attrs.keep_dims)?;
    let x = a.as_f64()?;
    let mut out = vec![0i64; g.outer * g.inner];
    for o in 0..g.outer {
        for i in 0..g.inner {
            let mut best = f64::NEG_INFINITY;
            let mut best_idx = 0i64;
            for e in 0..g.extent {
                let v = x[(o * g.extent + e) * g.inner + i];
                // Ties break toward the lowest index.
                if v > best {
                    best = v;
                    best_idx = e as i64;
                }
            }
            out[o * g.inner + i] = best_idx;
        }
    }
    Tensor::from_i64(g.out_shape, out)
}

fn gather(x: &Tensor, idx: &Tensor, attrs: &Attrs) -> Result<Tensor> {
    let axis = resolve_axis(attrs.axis.unwrap_or(0), x.rank())?;
    let ids = idx.as_i64()?;
    let extent = x.shape()[axis];
    let outer: usize = x.shape()[..axis].iter().product();
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let mut out_shape: Vec<usize> = x.shape()[..axis].to_vec();
    out_shape.extend_from_slice(idx.shape());
    out_shape.extend_from_slice(&x.shape()[axis + 1..]);
    for &i in ids {
        if i < 0 || i as usize >= extent {
            return Err(CoreError::IndexOutOfBounds(format!(
                "gather index {} outside axis extent {}",
                i, extent
            )));
        }
    }
    macro_rules! run {
        ($src:expr, $zero:expr) => {{
            let src = $src;
            let mut out = vec![$zero; outer * ids.len() * inner];
            for o in 0..outer {
                for (j, &i) in ids.iter().enumerate() {
                    let from = (o * extent + i as usize) * inner;
                    let to = (o * ids.len() + j) * inner;
                    out[to..to + inner].copy_from_slice(&src[from..from + inner]);
                }
            }
            out
        }};
    }
    let data = match x.buffer() {
        Buffer::F64(v) => Buffer::F64(run!(v, 0.0)),
        Buffer::I64(v) => Buffer::I64(run!(v, 0)),
        Buffer::Bool(v) => Buffer::Bool(run!(v, false)),
    };
    Tensor::new(out_shape, data)
}

fn one_hot(idx: &Tensor, attrs: &Attrs) -> Result<Tensor> {
    let depth = attrs
        .depth
        .ok_or_else(|| CoreError::Invalid("one_hot requires a depth".into()))?;
    let ids = idx.as_i64()?;
    let mut shape = idx.shape().to_vec();
    shape.push(depth);
    let mut out = vec![0.0; ids.len() * depth];
    for (r, &i) in ids.iter().enumerate() {
        if i >= 0 && (i as usize) < depth {
            out[r * depth + i as usize] = 1.0;
        }
    }
    Tensor::from_f64(shape, out)
}

fn concat(inputs: &[&Tensor], attrs: &Attrs) -> Result<Tensor> {
    if inputs.is_empty() {
        return Err(CoreError::Invalid("concat of zero tensors".into()));
    }
    let axis = resolve_axis(attrs.axis.unwrap_or(0), inputs[0].rank())?;
    let dtype = inputs[0].dtype();
    let rank = inputs[0].rank();
    let mut total = 0usize;
    for t in inputs {
        if t.dtype() != dtype {
            return Err(CoreError::DTypeMismatch("concat dtypes differ".into()));
        }
        if t.rank() != rank {
            return Err(CoreError::ShapeMismatch("concat ranks differ".into()));
        }
        for d in 0..rank {
            if d != axis && t.shape()[d] != inputs[0].shape()[d] {
                return Err(CoreError::ShapeMismatch(format!(
                    "concat extents differ off-axis: {:?} vs {:?}",
                    t.shape(),
                    inputs[0].shape()
                )));
            }
        }
        total += t.shape()[axis];
    }
    let mut out_shape = inputs[0].shape().to_vec();
    out_shape[axis] = total;
    let outer: usize = out_shape[..axis].iter().product();
    macro_rules! run {
        ($get:ident, $zero:expr) => {{
            let mut out = vec![$zero; num_elements(&out_shape)];
            let out_row: usize = out_shape[axis..].iter().product();
            let mut written = 0usize;
            for t in inputs {
                let src = t.$get()?;
                let row: usize = t.shape()[axis..].iter().product();
                for o in 0..outer {
                    let to = o * out_row + written;
                    out[to..to + row].copy_from_slice(&src[o * row..(o + 1) * row]);
                }
                written += row;
            }
            out
        }};
    }
    let data = match dtype {
        DType::F64 => Buffer::F64(run!(as_f64, 0.0)),
        DType::I64 => Buffer::I64(run!(as_i64, 0)),
        DType::Bool => Buffer::Bool(run!(as_bool, false)),
    };
    Tensor::new(out_shape, data)
}

fn reshape(x: &Tensor, attrs: &Attrs) -> Result<Tensor> {
    let spec = attrs
        .shape
        .as_ref()
        .ok_or_else(|| CoreError::Invalid("reshape requires a target shape".into()))?;
    let mut infer = None;
    let mut known = 1usize;
    for (i, &e) in spec.iter().enumerate() {
        if e == -1 {
            if infer.is_some() {
                return Err(CoreError::Invalid("reshape allows one inferred extent".into()));
            }
            infer = Some(i);
        } else if e < 0 {
            return Err(CoreError::Invalid(format!("bad reshape extent {}", e)));
        } else {
            known *= e as usize;
        }
    }
    let mut shape: Vec<usize> = spec.iter().map(|&e| e.max(0) as usize).collect();
    if let Some(i) = infer {
        if known == 0 {
            if x.len() != 0 {
                return Err(CoreError::ShapeMismatch("cannot infer extent".into()));
            }
            shape[i] = 0;
        } else {
            if x.len() % known != 0 {
                return Err(CoreError::ShapeMismatch(format!(
                    "cannot reshape {} elements into {:?}",
                    x.len(),
                    spec
                )));
            }
            shape[i] = x.len() / known;
        }
    }
    x.reshaped(shape)
}

fn broadcast_to(x: &Tensor, attrs: &Attrs) -> Result<Tensor> {
    let spec = attrs
        .shape
        .as_ref()
        .ok_or_else(|| CoreError::Invalid("broadcast requires a target shape".into()))?;
    let target: Vec<usize> = spec
        .iter()
        .map(|&e| {
            if e < 0 {
                Err(CoreError::Invalid("broadcast target must be concrete".into()))
            } else {
                Ok(e as usize)
            }
        })
        .collect::<Result<_>>()?;
    let shape = broadcast_shapes(x.shape(), &target)?;
    if shape != target {
        return Err(CoreError::ShapeMismatch(format!(
            "{:?} does not broadcast to {:?}",
            x.shape(),
            target
        )));
    }
    let off = broadcast_offsets(x.shape(), &target);
    let data = match x.buffer() {
        Buffer::F64(v) => Buffer::F64(off.iter().map(|&o| v[o]).collect()),
        Buffer::I64(v) => Buffer::I64(off.iter().map(|&o| v[o]).collect()),
        Buffer::Bool(v) => Buffer::Bool(off.iter().map(|&o| v[o]).collect()),
    };
    Tensor::new(target, data)
}

fn less(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dtype() != b.dtype() {
        return Err(CoreError::DTypeMismatch("less compares equal dtypes".into()));
    }
    let shape = broadcast_shapes(a.shape(), b.shape())?;
    let oa = broadcast_offsets(a.shape(), &shape);
    let ob = broadcast_offsets(b.shape(), &shape);
    let out: Vec<bool> = match a.dtype() {
        DType::F64 => {
            let (xa, xb) = (a.as_f64()?, b.as_f64()?);
            (0..num_elements(&shape)).map(|i| xa[oa[i]] < xb[ob[i]]).collect()
        }
        DType::I64 => {
            let (xa, xb) = (a.as_i64()?, b.as_i64()?);
            (0..num_elements(&shape)).map(|i| xa[oa[i]] < xb[ob[i]]).collect()
        }
        DType::Bool => return Err(CoreError::DTypeMismatch("less not defined on bool".into())),
    };
    Tensor::from_bool(shape, out)
}

fn where_select(c: &Tensor, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dtype() != b.dtype() {
        return Err(CoreError::DTypeMismatch("where branches must share a dtype".into()));
    }
    let cond = c.as_bool()?;
    let shape = broadcast_shapes(&broadcast_shapes(c.shape(), a.shape())?, b.shape())?;
    let oc = broadcast_offsets(c.shape(), &shape);
    let oa = broadcast_offsets(a.shape(), &shape);
    let ob = broadcast_offsets(b.shape(), &shape);
    let n = num_elements(&shape);
    let data = match a.dtype() {
        DType::F64 => {
            let (xa, xb) = (a.as_f64()?, b.as_f64()?);
            Buffer::F64((0..n).map(|i| if cond[oc[i]] { xa[oa[i]] } else { xb[ob[i]] }).collect())
        }
        DType::I64 => {
            let (xa, xb) = (a.as_i64()?, b.as_i64()?);
            Buffer::I64((0..n).map(|i| if cond[oc[i]] { xa[oa[i]] } else { xb[ob[i]] }).collect())
        }
        DType::Bool => {
            let (xa, xb) = (a.as_bool()?, b.as_bool()?);
            Buffer::Bool((0..n).map(|i| if cond[oc[i]] { xa[oa[i]] } else { xb[ob[i]] }).collect())
        }
    };
    Tensor::new(shape, data)
}

fn arity(op: OpCode) -> std::ops::RangeInclusive<usize> {
    match op {
        OpCode::Add | OpCode::Sub | OpCode::Mul | OpCode::Div | OpCode::MatMul
        | OpCode::Gather | OpCode::Less => 2..=2,
        OpCode::Where => 3..=3,
        OpCode::Concat => 1..=usize::MAX,
        _ => 1..=1,
    }
}

/// Evaluate one primitive from the fixed public vocabulary.
pub fn eval_primitive(op: OpCode, inputs: &[&Tensor], attrs: &Attrs) -> Result<Tensor> {
    if !arity(op).contains(&inputs.len()) {
        return Err(CoreError::Invalid(format!(
            "{:?} applied to {} inputs",
            op,
            inputs.len()
        )));
    }
    match op {
        OpCode::Add | OpCode::Sub | OpCode::Mul | OpCode::Div => arith(inputs[0], inputs[1], op),
        OpCode::Neg => match inputs[0].dtype() {
            DType::I64 => {
                let out: Vec<i64> = inputs[0].as_i64()?.iter().map(|x| -x).collect();
                Tensor::from_i64(inputs[0].shape().to_vec(), out)
            }
            _ => unary_f64(inputs[0], |x| -x),
        },
        OpCode::MatMul => matmul(inputs[0], inputs[1]),
        OpCode::Relu => unary_f64(inputs[0], |x| x.max(0.0)),
        OpCode::Tanh => unary_f64(inputs[0], f64::tanh),
        OpCode::Exp => unary_f64(inputs[0], f64::exp),
        OpCode::Log => unary_f64(inputs[0], f64::ln),
        OpCode::Square => unary_f64(inputs[0], |x| x * x),
        OpCode::Sum => reduce_f64(inputs[0], attrs, 0.0, |a, b| a + b, |v, _| v),
        OpCode::Mean => reduce_f64(inputs[0], attrs, 0.0, |a, b| a + b, |v, n| v / n as f64),
        OpCode::Max => reduce_f64(inputs[0], attrs, f64::NEG_INFINITY, f64::max, |v, _| v),
        OpCode::ArgMax => argmax(inputs[0], attrs),
        OpCode::Gather => gather(inputs[0], inputs[1], attrs),
        OpCode::OneHot => one_hot(inputs[0], attrs),
        OpCode::Concat => concat(inputs, attrs),
        OpCode::Reshape => reshape(inputs[0], attrs),
        OpCode::Broadcast => broadcast_to(inputs[0], attrs),
        OpCode::Less => less(inputs[0], inputs[1]),
        OpCode::Where => where_select(inputs[0], inputs[1], inputs[2]),
        OpCode::StopGradient => Ok(inputs[0].clone()),
        OpCode::Clip => {
            let lo = attrs.low.unwrap_or(f64::NEG_INFINITY);
            let hi = attrs.high.unwrap_or(f64::INFINITY);
            unary_f64(inputs[0], |x| x.clamp(lo, hi))
        }
    }
}

/// The internal kernel vocabulary: the public primitives plus a few
/// infrastructure operations used by graph functions (ring writes, index
/// generation, casts, runtime extents, and uniform draws).
#[derive(Clone, Debug, PartialEq)]
pub enum KernelOp {
    Prim(OpCode),
    /// scatter(x, idx, rows): copy of `x` with `rows` written at `idx` along
    /// the leading axis. Later duplicate indices win.
    Scatter,
    /// arange(n): `[0, n)` from a scalar i64 count.
    Arange(DType),
    Cast(DType),
    /// Runtime extent of the input along a fixed axis, as a scalar i64.
    DimSize(usize),
    /// Uniform [0,1) draws shaped like the input; the caller supplies values.
    RandUniform,
}

pub fn scatter_rows(x: &Tensor, idx: &Tensor, rows: &Tensor) -> Result<Tensor> {
    if x.rank() == 0 {
        return Err(CoreError::ShapeMismatch("scatter target must have rank >= 1".into()));
    }
    let ids = idx.as_i64()?;
    if idx.rank() != 1 {
        return Err(CoreError::ShapeMismatch("scatter indices must be rank 1".into()));
    }
    let expected: Vec<usize> =
        std::iter::once(ids.len()).chain(x.shape()[1..].iter().copied()).collect();
    if rows.shape() != expected.as_slice() || rows.dtype() != x.dtype() {
        return Err(CoreError::ShapeMismatch(format!(
            "scatter rows {:?}/{} do not match target {:?}/{}",
            rows.shape(),
            rows.dtype(),
            x.shape(),
            x.dtype()
        )));
    }
    let extent = x.shape()[0];
    let inner: usize = x.shape()[1..].iter().product();
    for &i in ids {
        if i < 0 || i as usize >= extent {
            return Err(CoreError::IndexOutOfBounds(format!(
                "scatter index {} outside leading extent {}",
                i, extent
            )));
        }
    }
    macro_rules! run {
        ($get:ident) => {{
            let mut out = x.$get()?.to_vec();
            let src = rows.$get()?;
            for (j, &i) in ids.iter().enumerate() {
                out[(i as usize) * inner..(i as usize + 1) * inner]
                    .copy_from_slice(&src[j * inner..(j + 1) * inner]);
            }
            out
        }};
    }
    let data = match x.dtype() {
        DType::F64 => Buffer::F64(run!(as_f64)),
        DType::I64 => Buffer::I64(run!(as_i64)),
        DType::Bool => Buffer::Bool(run!(as_bool)),
    };
    Tensor::new(x.shape().to_vec(), data)
}

pub fn arange(n: &Tensor, dtype: DType) -> Result<Tensor> {
    let count = n.scalar_as_i64()?;
    if count < 0 {
        return Err(CoreError::Invalid(format!("arange of negative count {}", count)));
    }
    let count = count as usize;
    match dtype {
        DType::I64 => Tensor::from_i64(vec![count], (0..count as i64).collect()),
        DType::F64 => Tensor::from_f64(vec![count], (0..count).map(|i| i as f64).collect()),
        DType::Bool => Err(CoreError::DTypeMismatch("arange yields numeric dtypes".into())),
    }
}

pub fn cast(x: &Tensor, to: DType) -> Result<Tensor> {
    if x.dtype() == to {
        return Ok(x.clone());
    }
    let data = match (x.buffer(), to) {
        (Buffer::I64(v), DType::F64) => Buffer::F64(v.iter().map(|&i| i as f64).collect()),
        (Buffer::F64(v), DType::I64) => Buffer::I64(v.iter().map(|&f| f.floor() as i64).collect()),
        (Buffer::Bool(v), DType::F64) => {
            Buffer::F64(v.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
        }
        (Buffer::Bool(v), DType::I64) => Buffer::I64(v.iter().map(|&b| b as i64).collect()),
        _ => {
            return Err(CoreError::DTypeMismatch(format!(
                "unsupported cast {} -> {}",
                x.dtype(),
                to
            )))
        }
    };
    Tensor::new(x.shape().to_vec(), data)
}

/// Evaluate a kernel op. `RandUniform` is excluded: draws are owned by the
/// executor, which materializes them before evaluation.
pub fn eval_kernel_op(op: &KernelOp, inputs: &[&Tensor], attrs: &Attrs) -> Result<Tensor> {
    match op {
        KernelOp::Prim(p) => eval_primitive(*p, inputs, attrs),
        KernelOp::Scatter => scatter_rows(inputs[0], inputs[1], inputs[2]),
        KernelOp::Arange(dt) => arange(inputs[0], *dt),
        KernelOp::Cast(dt) => cast(inputs[0], *dt),
        KernelOp::DimSize(axis) => {
            let t = inputs[0];
            if *axis >= t.rank() {
                return Err(CoreError::AxisOutOfRange { axis: *axis as isize, rank: t.rank() });
            }
            Ok(Tensor::scalar_i64(t.shape()[*axis] as i64))
        }
        KernelOp::RandUniform => Err(CoreError::Invalid(
            "uniform draws are materialized by the executor".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: usize, cols: usize, v: Vec<f64>) -> Tensor {
        Tensor::from_f64(vec![rows, cols], v).unwrap()
    }

    #[test]
    fn matmul_identity_preserves_operand() {
        let eye = t2(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let a = t2(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let out = eval_primitive(OpCode::MatMul, &[&eye, &a], &Attrs::default()).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn mean_over_axis_matches_direct_arithmetic() {
        let a = t2(2, 2, vec![1.0, 3.0, 3.0, 5.0]);
        let out = eval_primitive(OpCode::Mean, &[&a], &Attrs::axis(0)).unwrap();
        assert_eq!(out, Tensor::from_f64(vec![2], vec![2.0, 4.0]).unwrap());
    }

    #[test]
    fn one_hot_definition() {
        let idx = Tensor::from_i64(vec![1], vec![2]).unwrap();
        let out = eval_primitive(
            OpCode::OneHot,
            &[&idx],
            &Attrs { depth: Some(4), ..Attrs::default() },
        )
        .unwrap();
        assert_eq!(out, t2(1, 4, vec![0.0, 0.0, 1.0, 0.0]));
    }

    #[test]
    fn argmax_ties_break_low() {
        let a = t2(1, 3, vec![5.0, 5.0, 1.0]);
        let out = eval_primitive(OpCode::ArgMax, &[&a], &Attrs::axis(1)).unwrap();
        assert_eq!(out.as_i64().unwrap(), &[0]);
    }

    #[test]
    fn gather_axis_one() {
        let a = t2(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let idx = Tensor::from_i64(vec![2], vec![2, 0]).unwrap();
        let out = eval_primitive(OpCode::Gather, &[&a, &idx], &Attrs::axis(1)).unwrap();
        assert_eq!(out, t2(2, 2, vec![3.0, 1.0, 6.0, 4.0]));
    }

    #[test]
    fn gather_rejects_out_of_range() {
        let a = t2(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let idx = Tensor::from_i64(vec![1], vec![5]).unwrap();
        assert!(eval_primitive(OpCode::Gather, &[&a, &idx], &Attrs::axis(0)).is_err());
    }

    #[test]
    fn dtype_mismatch_is_an_error() {
        let a = Tensor::from_f64(vec![1], vec![1.0]).unwrap();
        let b = Tensor::from_i64(vec![1], vec![1]).unwrap();
        assert!(eval_primitive(OpCode::Add, &[&a, &b], &Attrs::default()).is_err());
    }

    #[test]
    fn axis_out_of_range_is_an_error() {
        let a = Tensor::from_f64(vec![2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            eval_primitive(OpCode::Sum, &[&a], &Attrs::axis(3)),
            Err(CoreError::AxisOutOfRange { .. })
        ));
    }

    #[test]
    fn empty_reductions_are_total() {
        let a = Tensor::zeros(DType::F64, vec![0, 3]);
        let s = eval_primitive(OpCode::Sum, &[&a], &Attrs::axis(0)).unwrap();
        assert_eq!(s.as_f64().unwrap(), &[0.0, 0.0, 0.0]);
        let m = eval_primitive(OpCode::Max, &[&a], &Attrs::axis(0)).unwrap();
        assert!(m.as_f64().unwrap().iter().all(|v| *v == f64::NEG_INFINITY));
    }

    #[test]
    fn scatter_writes_rows() {
        let x = t2(4, 2, vec![0.0; 8]);
        let idx = Tensor::from_i64(vec![2], vec![3, 1]).unwrap();
        let rows = t2(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let out = scatter_rows(&x, &idx, &rows).unwrap();
        assert_eq!(out, t2(4, 2, vec![0.0, 0.0, 3.0, 4.0, 0.0, 0.0, 1.0, 2.0]));
    }

    #[test]
    fn truncating_i64_division() {
        let a = Tensor::from_i64(vec![2], vec![7, 3]).unwrap();
        let b = Tensor::from_i64(vec![], vec![4]).unwrap();
        let out = eval_primitive(OpCode::Div, &[&a, &b], &Attrs::default()).unwrap();
        assert_eq!(out.as_i64().unwrap(), &[1, 0]);
    }
}
