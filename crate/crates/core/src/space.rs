//! Typed, shaped descriptions of data.
//!
//! A space is either a box (float, int, or bool elements of a fixed shape)
//! or a container (dict or tuple of child spaces). Boxes may additionally
//! carry batch and time ranks: leading dimensions of unknown extent that
//! values acquire at run time, ordered `(batch, time, *shape)`. Container
//! flags always equal the flags of every child; constructors propagate them.
//!
//! A time rank without a batch rank is accepted, though most components
//! only ever see batch-ranked or unranked data.
//!
//! Flat keys join nested dict keys and tuple indices with `/` and a leading
//! `/`; a bare box flattens to the empty key. Dict keys are sorted, so
//! flattening is a pure function of structure. Dict keys must not be purely
//! numeric (numeric path segments denote tuple positions when a flat map is
//! re-nested).

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::tensor::{DType, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub enum Space {
    FloatBox {
        shape: Vec<usize>,
        low: Option<f64>,
        high: Option<f64>,
        batch: bool,
        time: bool,
    },
    IntBox {
        shape: Vec<usize>,
        num_categories: Option<usize>,
        batch: bool,
        time: bool,
    },
    BoolBox {
        shape: Vec<usize>,
        batch: bool,
        time: bool,
    },
    Dict {
        children: BTreeMap<String, Space>,
        batch: bool,
        time: bool,
    },
    Tuple {
        items: Vec<Space>,
        batch: bool,
        time: bool,
    },
}

impl Space {
    pub fn float_box(shape: &[usize]) -> Space {
        Space::FloatBox { shape: shape.to_vec(), low: None, high: None, batch: false, time: false }
    }

    pub fn float_box_bounded(shape: &[usize], low: f64, high: f64) -> Space {
        Space::FloatBox {
            shape: shape.to_vec(),
            low: Some(low),
            high: Some(high),
            batch: false,
            time: false,
        }
    }

    /// Scalar categorical integers in `{0, .., num_categories-1}`.
    pub fn int_box(num_categories: usize) -> Space {
        Space::IntBox { shape: vec![], num_categories: Some(num_categories), batch: false, time: false }
    }

    /// Unbounded integer box (index tensors).
    pub fn int_box_unbounded(shape: &[usize]) -> Space {
        Space::IntBox { shape: shape.to_vec(), num_categories: None, batch: false, time: false }
    }

    pub fn bool_box(shape: &[usize]) -> Space {
        Space::BoolBox { shape: shape.to_vec(), batch: false, time: false }
    }

    pub fn dict(children: Vec<(&str, Space)>) -> Result<Space> {
        if children.is_empty() {
            return Err(CoreError::InvalidSpace("dict space requires at least one child".into()));
        }
        let mut map = BTreeMap::new();
        for (k, v) in children {
            validate_dict_key(k)?;
            if map.insert(k.to_string(), v).is_some() {
                return Err(CoreError::InvalidSpace(format!("duplicate dict key '{}'", k)));
            }
        }
        Ok(Space::Dict { children: map, batch: false, time: false }.resync_flags())
    }

    pub fn tuple(items: Vec<Space>) -> Result<Space> {
        if items.is_empty() {
            return Err(CoreError::InvalidSpace("tuple space requires at least one item".into()));
        }
        Ok(Space::Tuple { items, batch: false, time: false }.resync_flags())
    }

    /// Set the batch rank on this space and every descendant.
    pub fn with_batch_rank(mut self, flag: bool) -> Space {
        self.set_batch(flag);
        self
    }

    /// Set the time rank on this space and every descendant.
    pub fn with_time_rank(mut self, flag: bool) -> Space {
        self.set_time(flag);
        self
    }

    fn set_batch(&mut self, flag: bool) {
        match self {
            Space::FloatBox { batch, .. }
            | Space::IntBox { batch, .. }
            | Space::BoolBox { batch, .. } => *batch = flag,
            Space::Dict { children, batch, .. } => {
                *batch = flag;
                for c in children.values_mut() {
                    c.set_batch(flag);
                }
            }
            Space::Tuple { items, batch, .. } => {
                *batch = flag;
                for c in items.iter_mut() {
                    c.set_batch(flag);
                }
            }
        }
    }

    fn set_time(&mut self, flag: bool) {
        match self {
            Space::FloatBox { time, .. }
            | Space::IntBox { time, .. }
            | Space::BoolBox { time, .. } => *time = flag,
            Space::Dict { children, time, .. } => {
                *time = flag;
                for c in children.values_mut() {
                    c.set_time(flag);
                }
            }
            Space::Tuple { items, time, .. } => {
                *time = flag;
                for c in items.iter_mut() {
                    c.set_time(flag);
                }
            }
        }
    }

    /// Containers adopt the flags of their children after construction.
    fn resync_flags(mut self) -> Space {
        let (b, t) = match &self {
            Space::Dict { children, .. } => {
                let b = children.values().all(|c| c.has_batch_rank())
                    && children.values().next().is_some();
                let t = children.values().all(|c| c.has_time_rank());
                (b, t)
            }
            Space::Tuple { items, .. } => (
                items.iter().all(|c| c.has_batch_rank()),
                items.iter().all(|c| c.has_time_rank()),
            ),
            _ => return self,
        };
        match &mut self {
            Space::Dict { batch, time, .. } | Space::Tuple { batch, time, .. } => {
                *batch = b;
                *time = t;
            }
            _ => {}
        }
        self
    }

    pub fn has_batch_rank(&self) -> bool {
        match self {
            Space::FloatBox { batch, .. }
            | Space::IntBox { batch, .. }
            | Space::BoolBox { batch, .. }
            | Space::Dict { batch, .. }
            | Space::Tuple { batch, .. } => *batch,
        }
    }

    pub fn has_time_rank(&self) -> bool {
        match self {
            Space::FloatBox { time, .. }
            | Space::IntBox { time, .. }
            | Space::BoolBox { time, .. }
            | Space::Dict { time, .. }
            | Space::Tuple { time, .. } => *time,
        }
    }

    pub fn is_container(&self) -> bool {
        matches!(self, Space::Dict { .. } | Space::Tuple { .. })
    }

    /// Element dtype of a box space.
    pub fn dtype(&self) -> Result<DType> {
        match self {
            Space::FloatBox { .. } => Ok(DType::F64),
            Space::IntBox { .. } => Ok(DType::I64),
            Space::BoolBox { .. } => Ok(DType::Bool),
            _ => Err(CoreError::InvalidSpace("container spaces have no dtype".into())),
        }
    }

    /// Static (unranked) shape of a box space.
    pub fn box_shape(&self) -> Result<&[usize]> {
        match self {
            Space::FloatBox { shape, .. }
            | Space::IntBox { shape, .. }
            | Space::BoolBox { shape, .. } => Ok(shape),
            _ => Err(CoreError::InvalidSpace("container spaces have no box shape".into())),
        }
    }

    pub fn child(&self, key: &str) -> Option<&Space> {
        match self {
            Space::Dict { children, .. } => children.get(key),
            _ => None,
        }
    }

    pub fn item(&self, i: usize) -> Option<&Space> {
        match self {
            Space::Tuple { items, .. } => items.get(i),
            _ => None,
        }
    }

    /// Ordered `(flat key, leaf space)` pairs. The ordering is lexicographic
    /// on the full path, stable across runs.
    pub fn flatten(&self) -> Vec<(String, &Space)> {
        let mut out = Vec::new();
        self.flatten_into("", &mut out);
        out
    }

    fn flatten_into<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Space)>) {
        match self {
            Space::Dict { children, .. } => {
                for (k, v) in children {
                    v.flatten_into(&format!("{}/{}", prefix, k), out);
                }
            }
            Space::Tuple { items, .. } => {
                for (i, v) in items.iter().enumerate() {
                    v.flatten_into(&format!("{}/{}", prefix, i), out);
                }
            }
            _ => out.push((prefix.to_string(), self)),
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.flatten().len()
    }

    /// Concrete extents of a leaf value: `(batch?, time?, *shape)`.
    pub fn leaf_extents(&self, batch: Option<usize>, time: Option<usize>) -> Result<Vec<usize>> {
        let mut extents = Vec::new();
        match (self.has_batch_rank(), batch) {
            (true, Some(b)) => extents.push(b),
            (true, None) => {}
            (false, Some(_)) => {
                return Err(CoreError::RankMismatch(
                    "batch count given for a space without a batch rank".into(),
                ))
            }
            (false, None) => {}
        }
        match (self.has_time_rank(), time) {
            (true, Some(t)) => extents.push(t),
            (true, None) => {}
            (false, Some(_)) => {
                return Err(CoreError::RankMismatch(
                    "time count given for a space without a time rank".into(),
                ))
            }
            (false, None) => {}
        }
        extents.extend_from_slice(self.box_shape()?);
        Ok(extents)
    }

    /// Draw a value from the space. Bounded float boxes sample uniformly,
    /// unbounded ones from a standard normal. Categorical int boxes sample
    /// uniform categories.
    pub fn sample(
        &self,
        rng: &mut impl Rng,
        batch: Option<usize>,
        time: Option<usize>,
    ) -> Result<Value> {
        match self {
            Space::Dict { children, .. } => {
                let mut map = BTreeMap::new();
                for (k, c) in children {
                    map.insert(k.clone(), c.sample(rng, batch, time)?);
                }
                Ok(Value::Dict(map))
            }
            Space::Tuple { items, .. } => Ok(Value::Tuple(
                items
                    .iter()
                    .map(|c| c.sample(rng, batch, time))
                    .collect::<Result<_>>()?,
            )),
            Space::FloatBox { low, high, .. } => {
                let extents = self.leaf_extents(batch, time)?;
                let n: usize = extents.iter().product();
                let data: Vec<f64> = (0..n)
                    .map(|_| match (low, high) {
                        (Some(lo), Some(hi)) => rng.gen_range(*lo..*hi),
                        _ => {
                            let v: f64 = rng.sample(StandardNormal);
                            v.clamp(low.unwrap_or(f64::NEG_INFINITY), high.unwrap_or(f64::INFINITY))
                        }
                    })
                    .collect();
                Ok(Value::Leaf(Tensor::from_f64(extents, data)?))
            }
            Space::IntBox { num_categories, .. } => {
                let extents = self.leaf_extents(batch, time)?;
                let n: usize = extents.iter().product();
                let data: Vec<i64> = (0..n)
                    .map(|_| match num_categories {
                        Some(c) => rng.gen_range(0..*c as i64),
                        None => rng.gen_range(0..10),
                    })
                    .collect();
                Ok(Value::Leaf(Tensor::from_i64(extents, data)?))
            }
            Space::BoolBox { .. } => {
                let extents = self.leaf_extents(batch, time)?;
                let n: usize = extents.iter().product();
                let data: Vec<bool> = (0..n).map(|_| rng.gen::<bool>()).collect();
                Ok(Value::Leaf(Tensor::from_bool(extents, data)?))
            }
        }
    }

    /// Zero-filled value of the batched/timed shape; int boxes yield
    /// category 0, bool boxes false.
    pub fn zeros(&self, batch: Option<usize>, time: Option<usize>) -> Result<Value> {
        match self {
            Space::Dict { children, .. } => {
                let mut map = BTreeMap::new();
                for (k, c) in children {
                    map.insert(k.clone(), c.zeros(batch, time)?);
                }
                Ok(Value::Dict(map))
            }
            Space::Tuple { items, .. } => Ok(Value::Tuple(
                items.iter().map(|c| c.zeros(batch, time)).collect::<Result<_>>()?,
            )),
            _ => {
                let extents = self.leaf_extents(batch, time)?;
                Ok(Value::Leaf(Tensor::zeros(self.dtype()?, extents)))
            }
        }
    }

    /// Rebuild a container space from `(flat key, leaf space)` pairs.
    /// Purely numeric path segments re-nest as tuple positions.
    pub fn unflatten(pairs: Vec<(String, Space)>) -> Result<Space> {
        if pairs.is_empty() {
            return Err(CoreError::InvalidSpace("cannot unflatten zero leaf spaces".into()));
        }
        if pairs.len() == 1 && pairs[0].0.is_empty() {
            return Ok(pairs.into_iter().next().unwrap().1);
        }
        let split: Vec<(Vec<String>, Space)> = pairs
            .into_iter()
            .map(|(k, s)| {
                let segs: Vec<String> =
                    k.trim_start_matches('/').split('/').map(str::to_string).collect();
                (segs, s)
            })
            .collect();
        build_nested_space(split)
    }

    /// Structural membership: shape (with up to batch+time extra leading
    /// dims), dtype, bounds, and categories.
    pub fn contains(&self, value: &Value) -> bool {
        match (self, value) {
            (Space::Dict { children, .. }, Value::Dict(map)) => {
                children.len() == map.len()
                    && children
                        .iter()
                        .all(|(k, c)| map.get(k).map(|v| c.contains(v)).unwrap_or(false))
            }
            (Space::Tuple { items, .. }, Value::Tuple(vals)) => {
                items.len() == vals.len()
                    && items.iter().zip(vals).all(|(c, v)| c.contains(v))
            }
            (space, Value::Leaf(t)) => {
                let shape = match space.box_shape() {
                    Ok(s) => s,
                    Err(_) => return false,
                };
                if space.dtype().map(|d| d != t.dtype()).unwrap_or(true) {
                    return false;
                }
                let max_extra =
                    space.has_batch_rank() as usize + space.has_time_rank() as usize;
                if t.rank() < shape.len() || t.rank() > shape.len() + max_extra {
                    return false;
                }
                if &t.shape()[t.rank() - shape.len()..] != shape {
                    return false;
                }
                match space {
                    Space::FloatBox { low, high, .. } => {
                        let lo = low.unwrap_or(f64::NEG_INFINITY);
                        let hi = high.unwrap_or(f64::INFINITY);
                        t.as_f64().map(|v| v.iter().all(|x| *x >= lo && *x <= hi)).unwrap_or(false)
                    }
                    Space::IntBox { num_categories: Some(c), .. } => t
                        .as_i64()
                        .map(|v| v.iter().all(|x| *x >= 0 && (*x as usize) < *c))
                        .unwrap_or(false),
                    _ => true,
                }
            }
            _ => false,
        }
    }
}

fn validate_dict_key(k: &str) -> Result<()> {
    if k.is_empty() || k.contains('/') || k.contains(':') {
        return Err(CoreError::InvalidSpace(format!("invalid dict key '{}'", k)));
    }
    if k.bytes().all(|b| b.is_ascii_digit()) {
        return Err(CoreError::InvalidSpace(format!(
            "dict key '{}' is purely numeric; numeric segments denote tuple positions",
            k
        )));
    }
    Ok(())
}

/// A value drawn from (or conforming to) a space: a tensor leaf or a nested
/// container of values.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Leaf(Tensor),
    Dict(BTreeMap<String, Value>),
    Tuple(Vec<Value>),
}

impl Value {
    pub fn leaf(t: Tensor) -> Value {
        Value::Leaf(t)
    }

    pub fn dict(pairs: Vec<(&str, Value)>) -> Value {
        Value::Dict(pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
    }

    pub fn as_leaf(&self) -> Result<&Tensor> {
        match self {
            Value::Leaf(t) => Ok(t),
            _ => Err(CoreError::SpaceViolation("expected a leaf value".into())),
        }
    }

    pub fn into_leaf(self) -> Result<Tensor> {
        match self {
            Value::Leaf(t) => Ok(t),
            _ => Err(CoreError::SpaceViolation("expected a leaf value".into())),
        }
    }

    pub fn get(&self, key: &str) -> Result<&Value> {
        match self {
            Value::Dict(map) => map
                .get(key)
                .ok_or_else(|| CoreError::SpaceViolation(format!("missing dict key '{}'", key))),
            _ => Err(CoreError::SpaceViolation(format!(
                "cannot fetch key '{}' from a non-dict value",
                key
            ))),
        }
    }

    pub fn index(&self, i: usize) -> Result<&Value> {
        match self {
            Value::Tuple(items) => items
                .get(i)
                .ok_or_else(|| CoreError::SpaceViolation(format!("missing tuple item {}", i))),
            _ => Err(CoreError::SpaceViolation("cannot index a non-tuple value".into())),
        }
    }

    /// Ordered `(flat key, leaf)` pairs, lexicographic on the full path.
    pub fn flatten(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.flatten_into("", &mut out);
        out
    }

    fn flatten_into<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        match self {
            Value::Leaf(t) => out.push((prefix.to_string(), t)),
            Value::Dict(map) => {
                for (k, v) in map {
                    v.flatten_into(&format!("{}/{}", prefix, k), out);
                }
            }
            Value::Tuple(items) => {
                for (i, v) in items.iter().enumerate() {
                    v.flatten_into(&format!("{}/{}", prefix, i), out);
                }
            }
        }
    }

    /// Rebuild a value from `(flat key, leaf)` pairs. Purely numeric path
    /// segments re-nest as tuple positions, everything else as dict keys.
    pub fn unflatten(pairs: Vec<(String, Tensor)>) -> Result<Value> {
        if pairs.is_empty() {
            return Err(CoreError::SpaceViolation("cannot unflatten zero leaves".into()));
        }
        if pairs.len() == 1 && pairs[0].0.is_empty() {
            return Ok(Value::Leaf(pairs.into_iter().next().unwrap().1));
        }
        let split: Vec<(Vec<String>, Tensor)> = pairs
            .into_iter()
            .map(|(k, t)| {
                let segs: Vec<String> =
                    k.trim_start_matches('/').split('/').map(str::to_string).collect();
                (segs, t)
            })
            .collect();
        build_nested(split)
    }

    /// Batch extent of the leading axis of the first leaf.
    pub fn batch_len(&self) -> Result<usize> {
        let leaves = self.flatten();
        let t = leaves
            .first()
            .ok_or_else(|| CoreError::SpaceViolation("empty value".into()))?
            .1;
        if t.rank() == 0 {
            return Err(CoreError::ShapeMismatch("value has no leading batch axis".into()));
        }
        Ok(t.shape()[0])
    }

    /// Stack values of identical structure along a fresh leading axis.
    pub fn stack(rows: &[&Value]) -> Result<Value> {
        match rows.first() {
            None => Err(CoreError::SpaceViolation("cannot stack zero values".into())),
            Some(Value::Leaf(_)) => {
                let leaves: Vec<&Tensor> =
                    rows.iter().map(|v| v.as_leaf()).collect::<Result<_>>()?;
                Ok(Value::Leaf(Tensor::stack(&leaves)?))
            }
            Some(Value::Dict(map)) => {
                let mut out = BTreeMap::new();
                for k in map.keys() {
                    let parts: Vec<&Value> =
                        rows.iter().map(|v| v.get(k)).collect::<Result<_>>()?;
                    out.insert(k.clone(), Value::stack(&parts)?);
                }
                Ok(Value::Dict(out))
            }
            Some(Value::Tuple(items)) => {
                let mut out = Vec::new();
                for i in 0..items.len() {
                    let parts: Vec<&Value> =
                        rows.iter().map(|v| v.index(i)).collect::<Result<_>>()?;
                    out.push(Value::stack(&parts)?);
                }
                Ok(Value::Tuple(out))
            }
        }
    }

    /// Slice row `i` off the leading axis of every leaf.
    pub fn row(&self, i: usize) -> Result<Value> {
        match self {
            Value::Leaf(t) => Ok(Value::Leaf(t.row(i)?)),
            Value::Dict(map) => {
                let mut out = BTreeMap::new();
                for (k, v) in map {
                    out.insert(k.clone(), v.row(i)?);
                }
                Ok(Value::Dict(out))
            }
            Value::Tuple(items) => {
                Ok(Value::Tuple(items.iter().map(|v| v.row(i)).collect::<Result<_>>()?))
            }
        }
    }
}

fn build_nested_space(pairs: Vec<(Vec<String>, Space)>) -> Result<Space> {
    if pairs.len() == 1 && pairs[0].0.is_empty() {
        return Ok(pairs.into_iter().next().unwrap().1);
    }
    let mut groups: BTreeMap<String, Vec<(Vec<String>, Space)>> = BTreeMap::new();
    for (mut segs, s) in pairs {
        if segs.is_empty() {
            return Err(CoreError::InvalidSpace("conflicting flat keys".into()));
        }
        let head = segs.remove(0);
        groups.entry(head).or_default().push((segs, s));
    }
    let numeric = groups.keys().all(|k| k.bytes().all(|b| b.is_ascii_digit()));
    if numeric {
        let mut items: Vec<(usize, Space)> = groups
            .into_iter()
            .map(|(k, v)| {
                let i: usize = k
                    .parse()
                    .map_err(|_| CoreError::InvalidSpace(format!("bad tuple index '{}'", k)))?;
                Ok((i, build_nested_space(v)?))
            })
            .collect::<Result<_>>()?;
        items.sort_by_key(|(i, _)| *i);
        Ok(Space::Tuple {
            items: items.into_iter().map(|(_, s)| s).collect(),
            batch: false,
            time: false,
        }
        .resync_flags())
    } else {
        let mut map = BTreeMap::new();
        for (k, v) in groups {
            map.insert(k, build_nested_space(v)?);
        }
        Ok(Space::Dict { children: map, batch: false, time: false }.resync_flags())
    }
}

fn build_nested(pairs: Vec<(Vec<String>, Tensor)>) -> Result<Value> {
    if pairs.len() == 1 && pairs[0].0.is_empty() {
        return Ok(Value::Leaf(pairs.into_iter().next().unwrap().1));
    }
    let mut groups: BTreeMap<String, Vec<(Vec<String>, Tensor)>> = BTreeMap::new();
    for (mut segs, t) in pairs {
        if segs.is_empty() {
            return Err(CoreError::SpaceViolation("conflicting flat keys".into()));
        }
        let head = segs.remove(0);
        groups.entry(head).or_default().push((segs, t));
    }
    let numeric = groups.keys().all(|k| k.bytes().all(|b| b.is_ascii_digit()));
    if numeric {
        let mut items: Vec<(usize, Value)> = groups
            .into_iter()
            .map(|(k, v)| {
                let i: usize = k
                    .parse()
                    .map_err(|_| CoreError::SpaceViolation(format!("bad tuple index '{}'", k)))?;
                Ok((i, build_nested(v)?))
            })
            .collect::<Result<_>>()?;
        items.sort_by_key(|(i, _)| *i);
        for (expect, (i, _)) in items.iter().enumerate() {
            if *i != expect {
                return Err(CoreError::SpaceViolation("tuple positions are not contiguous".into()));
            }
        }
        Ok(Value::Tuple(items.into_iter().map(|(_, v)| v).collect()))
    } else {
        let mut map = BTreeMap::new();
        for (k, v) in groups {
            map.insert(k, build_nested(v)?);
        }
        Ok(Value::Dict(map))
    }
}

/// Reshape every leaf from `(B, T, *shape)` to `(B*T, *shape)`.
pub fn fold_time_into_batch(value: &Value, space: &Space) -> Result<Value> {
    if !space.has_batch_rank() || !space.has_time_rank() {
        return Err(CoreError::RankMismatch(
            "fold requires a space with both batch and time ranks".into(),
        ));
    }
    map_leaves(value, space, &|t, _| {
        if t.rank() < 2 {
            return Err(CoreError::ShapeMismatch(format!(
                "cannot fold leading (batch, time) of shape {:?}",
                t.shape()
            )));
        }
        let mut shape = vec![t.shape()[0] * t.shape()[1]];
        shape.extend_from_slice(&t.shape()[2..]);
        t.reshaped(shape)
    })
}

/// Inverse of [`fold_time_into_batch`] for known original extents.
pub fn unfold_time_from_batch(
    value: &Value,
    space: &Space,
    orig_batch: usize,
    orig_time: usize,
) -> Result<Value> {
    if !space.has_batch_rank() || !space.has_time_rank() {
        return Err(CoreError::RankMismatch(
            "unfold requires a space with both batch and time ranks".into(),
        ));
    }
    map_leaves(value, space, &|t, _| {
        if t.rank() < 1 || t.shape()[0] != orig_batch * orig_time {
            return Err(CoreError::ShapeMismatch(format!(
                "folded extent {:?} does not equal {}*{}",
                t.shape().first(),
                orig_batch,
                orig_time
            )));
        }
        let mut shape = vec![orig_batch, orig_time];
        shape.extend_from_slice(&t.shape()[1..]);
        t.reshaped(shape)
    })
}

fn map_leaves(
    value: &Value,
    space: &Space,
    f: &dyn Fn(&Tensor, &Space) -> Result<Tensor>,
) -> Result<Value> {
    match (value, space) {
        (Value::Leaf(t), s) => Ok(Value::Leaf(f(t, s)?)),
        (Value::Dict(map), Space::Dict { children, .. }) => {
            let mut out = BTreeMap::new();
            for (k, v) in map {
                let c = children.get(k).ok_or_else(|| {
                    CoreError::SpaceViolation(format!("value key '{}' missing from space", k))
                })?;
                out.insert(k.clone(), map_leaves(v, c, f)?);
            }
            Ok(Value::Dict(out))
        }
        (Value::Tuple(vals), Space::Tuple { items, .. }) => {
            if vals.len() != items.len() {
                return Err(CoreError::SpaceViolation("tuple arity mismatch".into()));
            }
            Ok(Value::Tuple(
                vals.iter().zip(items).map(|(v, s)| map_leaves(v, s, f)).collect::<Result<_>>()?,
            ))
        }
        _ => Err(CoreError::SpaceViolation("value structure does not match space".into())),
    }
}

// ---------------------------------------------------------------------------
// Declarative space literals (config files).
// ---------------------------------------------------------------------------

/// Serialized form of a space, e.g. `{"type": "float_box", "shape": [4]}`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpaceSpec {
    FloatBox {
        #[serde(default)]
        shape: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        low: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        high: Option<f64>,
        #[serde(default)]
        batch_rank: bool,
        #[serde(default)]
        time_rank: bool,
    },
    IntBox {
        #[serde(default)]
        shape: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        num_categories: Option<usize>,
        #[serde(default)]
        batch_rank: bool,
        #[serde(default)]
        time_rank: bool,
    },
    BoolBox {
        #[serde(default)]
        shape: Vec<usize>,
        #[serde(default)]
        batch_rank: bool,
        #[serde(default)]
        time_rank: bool,
    },
    Dict {
        children: BTreeMap<String, SpaceSpec>,
        #[serde(default)]
        batch_rank: bool,
        #[serde(default)]
        time_rank: bool,
    },
    Tuple {
        items: Vec<SpaceSpec>,
        #[serde(default)]
        batch_rank: bool,
        #[serde(default)]
        time_rank: bool,
    },
}

impl SpaceSpec {
    pub fn build(&self) -> Result<Space> {
        let space = match self {
            SpaceSpec::FloatBox { shape, low, high, batch_rank, time_rank } => {
                Space::FloatBox { shape: shape.clone(), low: *low, high: *high, batch: false, time: false }
                    .with_batch_rank(*batch_rank)
                    .with_time_rank(*time_rank)
            }
            SpaceSpec::IntBox { shape, num_categories, batch_rank, time_rank } => {
                if let Some(0) = num_categories {
                    return Err(CoreError::InvalidSpace("num_categories must be positive".into()));
                }
                Space::IntBox {
                    shape: shape.clone(),
                    num_categories: *num_categories,
                    batch: false,
                    time: false,
                }
                .with_batch_rank(*batch_rank)
                .with_time_rank(*time_rank)
            }
            SpaceSpec::BoolBox { shape, batch_rank, time_rank } => {
                Space::BoolBox { shape: shape.clone(), batch: false, time: false }
                    .with_batch_rank(*batch_rank)
                    .with_time_rank(*time_rank)
            }
            SpaceSpec::Dict { children, batch_rank, time_rank } => {
                let built: Vec<(String, Space)> = children
                    .iter()
                    .map(|(k, v)| Ok((k.clone(), v.build()?)))
                    .collect::<Result<_>>()?;
                let mut map = BTreeMap::new();
                for (k, v) in built {
                    validate_dict_key(&k)?;
                    map.insert(k, v);
                }
                if map.is_empty() {
                    return Err(CoreError::InvalidSpace("dict space requires children".into()));
                }
                Space::Dict { children: map, batch: false, time: false }
                    .with_batch_rank(*batch_rank)
                    .with_time_rank(*time_rank)
            }
            SpaceSpec::Tuple { items, batch_rank, time_rank } => {
                if items.is_empty() {
                    return Err(CoreError::InvalidSpace("tuple space requires items".into()));
                }
                Space::Tuple {
                    items: items.iter().map(|s| s.build()).collect::<Result<_>>()?,
                    batch: false,
                    time: false,
                }
                .with_batch_rank(*batch_rank)
                .with_time_rank(*time_rank)
            }
        };
        Ok(space)
    }
}
