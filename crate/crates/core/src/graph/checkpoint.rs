//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! "RBDN" u32:version  u32:len config-text
//! u64:count  { u32:len name  u8:rank  rank × u32:dim  u8:dtype  values }*
//! u64:iteration
//! ```
//!
//! Tensors appear in node order: `weight` and, if learnable, `bias` for conv/deconv, and `gamma`, `beta`,
//! `running_mean`, `running_var`, `tracked` for batch norm.

use std::fs;
use std::path::Path;

use crate::layers::BatchNormParams;
use crate::tensor::{DType, Real, Tensor};

use super::{build_rbdn, GraphError, NetworkGraph, Op, RbdnConfig};

const MAGIC: &[u8; 4] = b"RBDN";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub graph: NetworkGraph<T>,
    pub iteration: u64,
}

fn push_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn push_tensor<T: Real>(out: &mut Vec<u8>, name: &str, dims: &[usize], values: &[T]) {
    push_str(out, name);
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.push(T::DTYPE.code());
    for &v in values {
        v.write_le(out);
    }
}

pub fn encode_checkpoint<T: Real>(graph: &NetworkGraph<T>, iteration: u64) -> Vec<u8> {
    let mut body = Vec::new();
    let mut count = 0u64;
    for node in graph.nodes() {
        let name = &node.name;
        match &node.op {
            Op::Conv { params, bias, .. } | Op::Deconv { params, bias, .. } => {
                push_tensor(&mut body, &format!("{name}.weight"), &params.weight.shape(), params.weight.data());
                count += 1;
                if *bias {
                    push_tensor(&mut body, &format!("{name}.bias"), &[params.bias.len()], &params.bias);
                    count += 1;
                }
            }
            Op::BatchNorm(p) => {
                let c = [p.channels()];
                push_tensor(&mut body, &format!("{name}.gamma"), &c, &p.gamma);
                push_tensor(&mut body, &format!("{name}.beta"), &c, &p.beta);
                push_tensor(&mut body, &format!("{name}.running_mean"), &c, &p.running_mean);
                push_tensor(&mut body, &format!("{name}.running_var"), &c, &p.running_var);
                let flag = if p.tracked { T::one() } else { T::zero() };
                push_tensor(&mut body, &format!("{name}.tracked"), &[1], &[flag]);
                count += 5;
            }
            _ => {}
        }
    }
    let mut out = Vec::with_capacity(body.len() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    push_str(&mut out, &graph.config().to_text());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&iteration.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], GraphError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| GraphError::Checkpoint(format!("truncated: need {n} bytes at offset {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, GraphError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, GraphError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, GraphError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, GraphError> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| GraphError::Checkpoint("string is not UTF-8".into()))
    }

    /// Reads one tensor record and converts its values to `T`.
    fn tensor<T: Real>(&mut self) -> Result<(String, Vec<usize>, Vec<T>), GraphError> {
        let name = self.string()?;
        let rank = self.u8()? as usize;
        let dims = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let code = self.u8()?;
        let dtype = DType::from_code(code)
            .ok_or_else(|| GraphError::Checkpoint(format!("tensor '{name}': unknown dtype code {code}")))?;
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| GraphError::Checkpoint(format!("tensor '{name}': dims {dims:?} overflow")))?;
        let raw = self.take(count.saturating_mul(dtype.size()))?;
        let values = match dtype {
            DType::F32 => raw.chunks_exact(4).map(|b| T::from_f64_lossy(f32::read_le(b) as f64)).collect(),
            DType::F64 => raw.chunks_exact(8).map(|b| T::from_f64_lossy(f64::read_le(b))).collect(),
        };
        Ok((name, dims, values))
    }
}

/// Rebuilds the graph from the embedded config and fills every tensor, checking names and
/// shapes against the rebuilt graph. Values stored in another precision are converted.
pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>, GraphError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(GraphError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(GraphError::Checkpoint(format!("unsupported version {version}")));
    }
    let cfg = RbdnConfig::from_text(&r.string()?)?;
    let mut graph = build_rbdn::<T>(&cfg)?;
    let count = r.u64()?;
    let mut expected = 0u64;
    for node in graph.nodes_mut() {
        let name = node.name.clone();
        let mut next = |suffix: &str, dims: &[usize]| -> Result<Vec<T>, GraphError> {
            let (got, got_dims, values) = r.tensor::<T>()?;
            let want = format!("{name}.{suffix}");
            if got != want {
                return Err(GraphError::Checkpoint(format!("expected tensor '{want}', found '{got}'")));
            }
            if got_dims != dims {
                return Err(GraphError::Checkpoint(format!(
                    "tensor '{want}' has shape {got_dims:?}, graph needs {dims:?}"
                )));
            }
            Ok(values)
        };
        match &mut node.op {
            Op::Conv { params, bias, .. } | Op::Deconv { params, bias, .. } => {
                let shape = params.weight.shape();
                params.weight = Tensor::from_vec(shape, next("weight", &shape)?).expect("checked shape");
                expected += 1;
                if *bias {
                    params.bias = next("bias", &[params.bias.len()])?;
                    expected += 1;
                }
            }
            Op::BatchNorm(p) => {
                let c = [p.channels()];
                let mut q = BatchNormParams::new(c[0]);
                q.gamma = next("gamma", &c)?;
                q.beta = next("beta", &c)?;
                let mean = next("running_mean", &c)?;
                let var = next("running_var", &c)?;
                if var.iter().any(|&v| !(v > T::zero())) {
                    return Err(GraphError::Checkpoint(format!("'{name}' has non-positive running variance")));
                }
                q.running_mean = mean;
                q.running_var = var;
                q.tracked = next("tracked", &[1])?[0] != T::zero();
                *p = q;
                expected += 5;
            }
            _ => {}
        }
    }
    if count != expected {
        return Err(GraphError::Checkpoint(format!("header lists {count} tensors, graph has {expected}")));
    }
    let iteration = r.u64()?;
    if r.pos != bytes.len() {
        return Err(GraphError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { graph, iteration })
}

/// Writes to a sibling temp file and renames it into place, so a partial file never appears.
pub fn save_checkpoint<T: Real>(graph: &NetworkGraph<T>, iteration: u64, path: &Path) -> Result<(), GraphError> {
    crate::fsutil::write_atomic(path, &encode_checkpoint(graph, iteration))?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>, GraphError> {
    decode_checkpoint(&fs::read(path)?)
}
