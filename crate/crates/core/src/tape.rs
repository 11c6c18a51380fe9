//! Execution tape and reverse-mode gradients.
//!
//! Both execution modes produce the same artifact while running: a list of
//! values plus `TapeEntry` records in execution order. `backward` walks the
//! entries in reverse, pushing vector-Jacobian products toward the requested
//! leaves. Entries appear in topological order by construction (an entry's
//! inputs always precede its output), so no sorting is needed.

use crate::error::{CoreError, Result};
use crate::ops::{eval_primitive, Attrs, KernelOp, OpCode};
use crate::tensor::{broadcast_offsets, num_elements, DType, Tensor};

/// One executed kernel operation: which op ran, on which value slots, and
/// where the result landed.
#[derive(Clone, Debug)]
pub struct TapeEntry {
    pub op: KernelOp,
    pub attrs: Attrs,
    pub inputs: Vec<usize>,
    pub out: usize,
}

fn transpose2(a: &Tensor) -> Result<Tensor> {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let x = a.as_f64()?;
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = x[i * n + j];
        }
    }
    Tensor::from_f64(vec![n, m], out)
}

/// Sum `g` down to `shape` (inverse of broadcasting).
fn reduce_to_shape(g: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if g.shape() == shape {
        return Ok(g.clone());
    }
    let src = g.as_f64()?;
    let mut out = vec![0.0; num_elements(shape)];
    let off = broadcast_offsets(shape, g.shape());
    for (i, &o) in off.iter().enumerate() {
        out[o] += src[i];
    }
    Tensor::from_f64(shape.to_vec(), out)
}

/// Expand a reduction gradient back to the input shape, optionally scaling.
fn unreduce(g: &Tensor, input_shape: &[usize], attrs: &Attrs, scale_by_count: bool) -> Result<Tensor> {
    let expanded = match attrs.axis {
        None => {
            if attrs.keep_dims {
                g.reshaped(vec![1; input_shape.len()])?
            } else {
                g.clone()
            }
        }
        Some(ax) => {
            let a = if ax < 0 { (ax + input_shape.len() as isize) as usize } else { ax as usize };
            if attrs.keep_dims {
                g.clone()
            } else {
                let mut s = g.shape().to_vec();
                s.insert(a, 1);
                g.reshaped(s)?
            }
        }
    };
    let spec: Vec<isize> = input_shape.iter().map(|&e| e as isize).collect();
    let mut bcast = eval_primitive(
        OpCode::Broadcast,
        &[&expanded],
        &Attrs { shape: Some(spec), ..Attrs::default() },
    )?;
    if scale_by_count {
        let count = match attrs.axis {
            None => num_elements(input_shape),
            Some(ax) => {
                let a =
                    if ax < 0 { (ax + input_shape.len() as isize) as usize } else { ax as usize };
                input_shape[a]
            }
        };
        let scale = Tensor::scalar_f64(1.0 / count as f64);
        bcast = eval_primitive(OpCode::Mul, &[&bcast, &scale], &Attrs::default())?;
    }
    Ok(bcast)
}

fn add_into(acc: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    *acc = Some(match acc.take() {
        None => g,
        Some(prev) => eval_primitive(OpCode::Add, &[&prev, &g], &Attrs::default())?,
    });
    Ok(())
}

/// Reverse-mode gradient of a scalar `loss` value with respect to `wrt`
/// value slots. Slots that the loss does not reach get zero gradients;
/// `stop_gradient` blocks flow. Only f64 slots participate.
pub fn backward(
    values: &[Tensor],
    entries: &[TapeEntry],
    loss: usize,
    wrt: &[usize],
) -> Result<Vec<Tensor>> {
    let loss_t = values
        .get(loss)
        .ok_or_else(|| CoreError::Gradient(format!("loss slot {} missing", loss)))?;
    if !loss_t.shape().is_empty() {
        return Err(CoreError::Gradient(format!(
            "loss must be scalar, found shape {:?}",
            loss_t.shape()
        )));
    }
    loss_t.as_f64()?;

    let mut adj: Vec<Option<Tensor>> = vec![None; values.len()];
    adj[loss] = Some(Tensor::scalar_f64(1.0));

    for e in entries.iter().rev() {
        let g = match adj[e.out].clone() {
            Some(g) => g,
            None => continue,
        };
        let ins: Vec<&Tensor> = e.inputs.iter().map(|&i| &values[i]).collect();
        match &e.op {
            KernelOp::Prim(p) => match p {
                OpCode::Add => {
                    add_into(&mut adj[e.inputs[0]], reduce_to_shape(&g, ins[0].shape())?)?;
                    add_into(&mut adj[e.inputs[1]], reduce_to_shape(&g, ins[1].shape())?)?;
                }
                OpCode::Sub => {
                    add_into(&mut adj[e.inputs[0]], reduce_to_shape(&g, ins[0].shape())?)?;
                    let neg = eval_primitive(OpCode::Neg, &[&g], &Attrs::default())?;
                    add_into(&mut adj[e.inputs[1]], reduce_to_shape(&neg, ins[1].shape())?)?;
                }
                OpCode::Mul => {
                    let da = eval_primitive(OpCode::Mul, &[&g, ins[1]], &Attrs::default())?;
                    add_into(&mut adj[e.inputs[0]], reduce_to_shape(&da, ins[0].shape())?)?;
                    let db = eval_primitive(OpCode::Mul, &[&g, ins[0]], &Attrs::default())?;
                    add_into(&mut adj[e.inputs[1]], reduce_to_shape(&db, ins[1].shape())?)?;
                }
                OpCode::Div => {
                    let da = eval_primitive(OpCode::Div, &[&g, ins[1]], &Attrs::default())?;
                    add_into(&mut adj[e.inputs[0]], reduce_to_shape(&da, ins[0].shape())?)?;
                    let b2 = eval_primitive(OpCode::Square, &[ins[1]], &Attrs::default())?;
                    let ga = eval_primitive(OpCode::Mul, &[&g, ins[0]], &Attrs::default())?;
                    let q = eval_primitive(OpCode::Div, &[&ga, &b2], &Attrs::default())?;
                    let db = eval_primitive(OpCode::Neg, &[&q], &Attrs::default())?;
                    add_into(&mut adj[e.inputs[1]], reduce_to_shape(&db, ins[1].shape())?)?;
                }
                OpCode::Neg => {
                    let da = eval_primitive(OpCode::Neg, &[&g], &Attrs::default())?;
                    add_into(&mut adj[e.inputs[0]], da)?;
                }
                OpCode::MatMul => {
                    let bt = transpose2(ins[1])?;
                    let da = eval_primitive(OpCode::MatMul, &[&g, &bt], &Attrs::default())?;
                    add_into(&mut adj[e.inputs[0]], da)?;
                    let at = transpose2(ins[0])?;
                    let db = eval_primitive(OpCode::MatMul, &[&at, &g], &Attrs::default())?;
                    add_into(&mut adj[e.inputs[1]], db)?;
                }
                OpCode::Relu => {
                    let x = ins[0].as_f64()?;
                    let gv = g.as_f64()?;
                    let out: Vec<f64> =
                        x.iter().zip(gv).map(|(&x, &g)| if x > 0.0 { g } else { 0.0 }).collect();
                    add_into(&mut adj[e.inputs[0]], Tensor::from_f64(ins[0].shape().to_vec(), out)?)?;
                }
                OpCode::Tanh => {
                    let y = values[e.out].as_f64()?;
                    let gv = g.as_f64()?;
                    let out: Vec<f64> =
                        y.iter().zip(gv).map(|(&y, &g)| g * (1.0 - y * y)).collect();
                    add_into(&mut adj[e.inputs[0]], Tensor::from_f64(ins[0].shape().to_vec(), out)?)?;
                }
                OpCode::Exp => {
                    let da = eval_primitive(OpCode::Mul, &[&g, &values[e.out]], &Attrs::default())?;
                    add_into(&mut adj[e.inputs[0]], da)?;
                }
                OpCode::Log => {
                    let da = eval_primitive(OpCode::Div, &[&g, ins[0]], &Attrs::default())?;
                    add_into(&mut adj[e.inputs[0]], da)?;
                }
                OpCode::Square => {
                    let two = Tensor::scalar_f64(2.0);
                    let gx = eval_primitive(OpCode::Mul, &[&g, ins[0]], &Attrs::default())?;
                    let da = eval_primitive(OpCode::Mul, &[&gx, &two], &Attrs::default())?;
                    add_into(&mut adj[e.inputs[0]], da)?;
                }
                OpCode::Sum => {
                    add_into(&mut adj[e.inputs[0]], unreduce(&g, ins[0].shape(), &e.attrs, false)?)?;
                }
                OpCode::Mean => {
                    add_into(&mut adj[e.inputs[0]], unreduce(&g, ins[0].shape(), &e.attrs, true)?)?;
                }
                OpCode::Max => {
                    // Route to the first maximum along the axis, matching the
                    // argmax tie rule.
                    let arg = eval_primitive(
                        OpCode::ArgMax,
                        &[ins[0]],
                        &Attrs {
                            axis: e.attrs.axis.or(Some(0)),
                            keep_dims: e.attrs.keep_dims,
                            ..Attrs::default()
                        },
                    );
                    let da = match (e.attrs.axis, arg) {
                        (Some(_), Ok(arg)) => {
                            max_backward(ins[0], &g, &arg, &e.attrs)?
                        }
                        _ => {
                            // Global max: flatten, route to first argmax.
                            let flat = ins[0].reshaped(vec![ins[0].len()])?;
                            let arg = eval_primitive(OpCode::ArgMax, &[&flat], &Attrs::axis(0))?;
                            let gg = g.reshaped(vec![])?;
                            let da = max_backward(
                                &flat,
                                &gg,
                                &arg,
                                &Attrs::axis(0),
                            )?;
                            da.reshaped(ins[0].shape().to_vec())?
                        }
                    };
                    add_into(&mut adj[e.inputs[0]], da)?;
                }
                OpCode::Gather => {
                    let da = gather_backward(ins[0], ins[1], &g, &e.attrs)?;
                    add_into(&mut adj[e.inputs[0]], da)?;
                }
                OpCode::Concat => {
                    let axis = {
                        let ax = e.attrs.axis.unwrap_or(0);
                        if ax < 0 { (ax + ins[0].rank() as isize) as usize } else { ax as usize }
                    };
                    let mut start = 0usize;
                    for (slot, t) in e.inputs.iter().zip(&ins) {
                        let extent = t.shape()[axis];
                        let piece = slice_axis(&g, axis, start, extent)?;
                        if values[*slot].dtype() == DType::F64 {
                            add_into(&mut adj[*slot], piece)?;
                        }
                        start += extent;
                    }
                }
                OpCode::Reshape => {
                    add_into(&mut adj[e.inputs[0]], g.reshaped(ins[0].shape().to_vec())?)?;
                }
                OpCode::Broadcast => {
                    add_into(&mut adj[e.inputs[0]], reduce_to_shape(&g, ins[0].shape())?)?;
                }
                OpCode::Where => {
                    if ins[1].dtype() == DType::F64 {
                        let zero = Tensor::scalar_f64(0.0);
                        let da = eval_primitive(OpCode::Where, &[ins[0], &g, &zero], &Attrs::default())?;
                        add_into(&mut adj[e.inputs[1]], reduce_to_shape(&da, ins[1].shape())?)?;
                        let db = eval_primitive(OpCode::Where, &[ins[0], &zero, &g], &Attrs::default())?;
                        add_into(&mut adj[e.inputs[2]], reduce_to_shape(&db, ins[2].shape())?)?;
                    }
                }
                OpCode::Clip => {
                    let lo = e.attrs.low.unwrap_or(f64::NEG_INFINITY);
                    let hi = e.attrs.high.unwrap_or(f64::INFINITY);
                    let x = ins[0].as_f64()?;
                    let gv = g.as_f64()?;
                    let out: Vec<f64> = x
                        .iter()
                        .zip(gv)
                        .map(|(&x, &g)| if x >= lo && x <= hi { g } else { 0.0 })
                        .collect();
                    add_into(&mut adj[e.inputs[0]], Tensor::from_f64(ins[0].shape().to_vec(), out)?)?;
                }
                // Non-differentiable outputs or explicit barriers.
                OpCode::ArgMax | OpCode::Less | OpCode::OneHot | OpCode::StopGradient => {}
            },
            KernelOp::Scatter => {
                // out = x with rows at idx replaced; the last duplicate wins.
                let ids = ins[1].as_i64()?;
                let inner: usize = ins[0].shape()[1..].iter().product();
                let mut gx = g.as_f64()?.to_vec();
                let mut last = std::collections::HashMap::new();
                for (j, &i) in ids.iter().enumerate() {
                    last.insert(i, j);
                }
                let mut grows = vec![0.0; ids.len() * inner];
                for (j, &i) in ids.iter().enumerate() {
                    if last[&i] == j {
                        let from = (i as usize) * inner;
                        grows[j * inner..(j + 1) * inner].copy_from_slice(&gx[from..from + inner]);
                    }
                }
                for &i in ids {
                    let from = (i as usize) * inner;
                    for v in &mut gx[from..from + inner] {
                        *v = 0.0;
                    }
                }
                add_into(&mut adj[e.inputs[0]], Tensor::from_f64(ins[0].shape().to_vec(), gx)?)?;
                if ins[2].dtype() == DType::F64 {
                    add_into(
                        &mut adj[e.inputs[2]],
                        Tensor::from_f64(ins[2].shape().to_vec(), grows)?,
                    )?;
                }
            }
            // Index generation, casts, extents, and draws carry no gradient.
            KernelOp::Arange(_) | KernelOp::Cast(_) | KernelOp::DimSize(_) | KernelOp::RandUniform => {}
        }
    }

    wrt.iter()
        .map(|&w| {
            Ok(match adj.get(w).and_then(|a| a.clone()) {
                Some(g) => g,
                None => Tensor::zeros(DType::F64, values[w].shape().to_vec()),
            })
        })
        .collect()
}

fn max_backward(x: &Tensor, g: &Tensor, arg: &Tensor, attrs: &Attrs) -> Result<Tensor> {
    let axis = {
        let ax = attrs.axis.unwrap_or(0);
        if ax < 0 { (ax + x.rank() as isize) as usize } else { ax as usize }
    };
    let outer: usize = x.shape()[..axis].iter().product();
    let extent = x.shape()[axis];
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let ids = arg.as_i64()?;
    let gv = g.as_f64()?;
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let slot = o * inner + i;
            let e = ids[slot] as usize;
            out[(o * extent + e) * inner + i] = gv[slot];
        }
    }
    Tensor::from_f64(x.shape().to_vec(), out)
}

fn gather_backward(x: &Tensor, idx: &Tensor, g: &Tensor, attrs: &Attrs) -> Result<Tensor> {
    if x.dtype() != DType::F64 {
        return Ok(Tensor::zeros(DType::F64, x.shape().to_vec()));
    }
    let axis = {
        let ax = attrs.axis.unwrap_or(0);
        if ax < 0 { (ax + x.rank() as isize) as usize } else { ax as usize }
    };
    let ids = idx.as_i64()?;
    let extent = x.shape()[axis];
    let outer: usize = x.shape()[..axis].iter().product();
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let gv = g.as_f64()?;
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for (j, &i) in ids.iter().enumerate() {
            let to = (o * extent + i as usize) * inner;
            let from = (o * ids.len() + j) * inner;
            for k in 0..inner {
                out[to + k] += gv[from + k];
            }
        }
    }
    Tensor::from_f64(x.shape().to_vec(), out)
}

fn slice_axis(t: &Tensor, axis: usize, start: usize, extent: usize) -> Result<Tensor> {
    let n = t.shape()[axis];
    let idx = Tensor::from_i64(
        vec![extent],
        (start..start + extent).map(|i| i as i64).collect(),
    )?;
    debug_assert!(start + extent <= n);
    eval_primitive(OpCode::Gather, &[t, &idx], &Attrs::axis(axis as isize))
}

/// Central finite differences of a scalar-valued function, elementwise.
pub fn finite_diff(
    f: &dyn Fn(&Tensor) -> Result<f64>,
    at: &Tensor,
    step: f64,
) -> Result<Tensor> {
    let base = at.as_f64()?.to_vec();
    let mut grad = vec![0.0; base.len()];
    for i in 0..base.len() {
        let mut hi = base.clone();
        hi[i] += step;
        let mut lo = base.clone();
        lo[i] -= step;
        let fh = f(&Tensor::from_f64(at.shape().to_vec(), hi)?)?;
        let fl = f(&Tensor::from_f64(at.shape().to_vec(), lo)?)?;
        grad[i] = (fh - fl) / (2.0 * step);
    }
    Tensor::from_f64(at.shape().to_vec(), grad)
}
