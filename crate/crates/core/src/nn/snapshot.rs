//! Parameter snapshot stream.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! u32            layer count L
//! u32 x (L+1)    widths
//! u8  x L        activation tags (0 relu, 1 leaky-relu, 2 tanh, 3 identity)
//! u8  x L        layer-norm flags (0/1)
//! f32 x ...      per layer: weight (row-major out x in), bias, [gain, offset]
//! ```

use alloc::vec::Vec;

use num_traits::Float;

use super::{Activation, Mlp, MlpSpec};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SnapshotError {
    #[error("snapshot truncated")]
    Truncated,
    #[error("unknown activation tag {0}")]
    BadActivation(u8),
    #[error("snapshot header is inconsistent")]
    BadHeader,
    #[error("{0} trailing bytes after parameters")]
    Trailing(usize),
}

impl<T: Float> Mlp<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.layers.len();
        let mut out = Vec::with_capacity(4 + 4 * (n + 1) + 2 * n + 4 * self.param_count());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        for &w in &self.spec.widths {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        for layer in &self.layers {
            out.push(layer.activation.tag());
        }
        for layer in &self.layers {
            out.push(layer.norm.is_some() as u8);
        }
        for v in self.params() {
            out.extend_from_slice(&v.to_f32().unwrap().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SnapshotError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let n = cur.u32()? as usize;
        if n == 0 || n > 1024 {
            return Err(SnapshotError::BadHeader);
        }
        let widths = (0..=n).map(|_| cur.u32().map(|w| w as usize)).collect::<Result<Vec<_>, _>>()?;
        let acts = (0..n)
            .map(|_| {
                let t = cur.u8()?;
                Activation::from_tag(t).ok_or(SnapshotError::BadActivation(t))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let norms = (0..n).map(|_| cur.u8().map(|f| f != 0)).collect::<Result<Vec<_>, _>>()?;
        let hidden_norm = n > 1 && norms[0];
        if norms[n - 1] || norms[..n - 1].iter().any(|&f| f != hidden_norm) {
            return Err(SnapshotError::BadHeader);
        }
        let hidden = acts[0];
        if acts[..n - 1].iter().any(|&a| a != hidden) {
            return Err(SnapshotError::BadHeader);
        }
        let spec = MlpSpec {
            widths,
            hidden,
            output: acts[n - 1],
            hidden_layer_norm: hidden_norm,
        };
        let mut net = Mlp::<T>::zeros(&spec).map_err(|_| SnapshotError::BadHeader)?;
        let count = net.param_count();
        let flat = (0..count)
            .map(|_| cur.f32().map(|v| T::from(v).unwrap()))
            .collect::<Result<Vec<T>, _>>()?;
        if cur.pos != bytes.len() {
            return Err(SnapshotError::Trailing(bytes.len() - cur.pos));
        }
        net.set_params(&flat).map_err(|_| SnapshotError::BadHeader)?;
        Ok(net)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], SnapshotError> {
        let end = self.pos + N;
        let s = self.bytes.get(self.pos..end).ok_or(SnapshotError::Truncated)?;
        self.pos = end;
        Ok(s.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8, SnapshotError> {
        Ok(self.take::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn f32(&mut self) -> Result<f32, SnapshotError> {
        Ok(f32::from_le_bytes(self.take()?))
    }
}
