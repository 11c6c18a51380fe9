//! Textual checkpoints.
//!
//! Line format:
//! ```text
//! rlstage-checkpoint v1 <variable count>
//! <full_name> <dtype> <extent,extent,...|-> <value value ...>
//! ```
//! f64 values serialize as 16-digit hex of their bit pattern, so round
//! trips are bit-exact; i64 as decimal; bool as 0/1.

use std::fmt::Write as _;

use rlstage_core::{Buffer, DType, Tensor};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("variable set mismatch: {0}")]
    VariableSetMismatch(String),
}

pub const HEADER: &str = "rlstage-checkpoint v1";

pub fn encode(vars: &[(String, Tensor)]) -> String {
    let mut out = format!("{} {}\n", HEADER, vars.len());
    for (name, t) in vars {
        let shape = if t.shape().is_empty() {
            "-".to_string()
        } else {
            t.shape().iter().map(|e| e.to_string()).collect::<Vec<_>>().join(",")
        };
        let _ = write!(out, "{} {} {}", name, t.dtype(), shape);
        match t.buffer() {
            Buffer::F64(v) => {
                for x in v {
                    let _ = write!(out, " {:016x}", x.to_bits());
                }
            }
            Buffer::I64(v) => {
                for x in v {
                    let _ = write!(out, " {}", x);
                }
            }
            Buffer::Bool(v) => {
                for x in v {
                    let _ = write!(out, " {}", *x as u8);
                }
            }
        }
        out.push('\n');
    }
    out
}

pub fn decode(text: &str) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| CheckpointError::Malformed("empty file".into()))?;
    let rest = header
        .strip_prefix(HEADER)
        .ok_or_else(|| CheckpointError::Malformed(format!("bad header '{}'", header)))?;
    let count: usize = rest
        .trim()
        .parse()
        .map_err(|_| CheckpointError::Malformed("bad variable count".into()))?;
    let mut vars = Vec::with_capacity(count);
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let name = fields
            .next()
            .ok_or_else(|| CheckpointError::Malformed("missing name".into()))?
            .to_string();
        let dtype = match fields.next() {
            Some("f64") => DType::F64,
            Some("i64") => DType::I64,
            Some("bool") => DType::Bool,
            other => {
                return Err(CheckpointError::Malformed(format!("bad dtype {:?}", other)))
            }
        };
        let shape_field =
            fields.next().ok_or_else(|| CheckpointError::Malformed("missing shape".into()))?;
        let shape: Vec<usize> = if shape_field == "-" {
            Vec::new()
        } else {
            shape_field
                .split(',')
                .map(|e| {
                    e.parse().map_err(|_| {
                        CheckpointError::Malformed(format!("bad extent '{}'", e))
                    })
                })
                .collect::<Result<_, _>>()?
        };
        let tensor = match dtype {
            DType::F64 => {
                let data: Vec<f64> = fields
                    .map(|f| {
                        u64::from_str_radix(f, 16)
                            .map(f64::from_bits)
                            .map_err(|_| CheckpointError::Malformed(format!("bad f64 '{}'", f)))
                    })
                    .collect::<Result<_, _>>()?;
                Tensor::from_f64(shape, data)
                    .map_err(|e| CheckpointError::Malformed(e.to_string()))?
            }
            DType::I64 => {
                let data: Vec<i64> = fields
                    .map(|f| {
                        f.parse().map_err(|_| {
                            CheckpointError::Malformed(format!("bad i64 '{}'", f))
                        })
                    })
                    .collect::<Result<_, _>>()?;
                Tensor::from_i64(shape, data)
                    .map_err(|e| CheckpointError::Malformed(e.to_string()))?
            }
            DType::Bool => {
                let data: Vec<bool> = fields
                    .map(|f| match f {
                        "0" => Ok(false),
                        "1" => Ok(true),
                        other => {
                            Err(CheckpointError::Malformed(format!("bad bool '{}'", other)))
                        }
                    })
                    .collect::<Result<_, _>>()?;
                Tensor::from_bool(shape, data)
                    .map_err(|e| CheckpointError::Malformed(e.to_string()))?
            }
        };
        vars.push((name, tensor));
    }
    if vars.len() != count {
        return Err(CheckpointError::Malformed(format!(
            "header promises {} variables, found {}",
            count,
            vars.len()
        )));
    }
    Ok(vars)
}
