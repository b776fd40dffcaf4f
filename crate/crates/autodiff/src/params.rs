//! Named parameter storage, the Adam optimizer and the checkpoint container.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{Grads, Graph};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Vec<f64>,
    trainable: bool,
}

/// Ordered named tensors: trainable parameters plus non-trainable buffers
/// such as batch-norm running statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter '{name}'")));
        }
        let slot = self.entries.len();
        self.entries.push(Entry {
            name: name.to_string(),
            grad: vec![0.0; value.len()],
            value,
            trainable,
        });
        self.index.insert(name.to_string(), slot);
        Ok(slot)
    }

    pub fn add_param(&mut self, name: &str, value: Tensor) -> Result<usize> {
        self.insert(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor) -> Result<usize> {
        self.insert(name, value, false)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.entries[slot].name
    }

    pub fn value(&self, slot: usize) -> &Tensor {
        &self.entries[slot].value
    }

    pub fn value_mut(&mut self, slot: usize) -> &mut Tensor {
        &mut self.entries[slot].value
    }

    pub fn grad(&self, slot: usize) -> &[f64] {
        &self.entries[slot].grad
    }

    pub fn is_trainable(&self, slot: usize) -> bool {
        self.entries[slot].trainable
    }

    /// Scalar count over trainable entries only.
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds the gradients of every parameter leaf of `graph` into the store.
    pub fn accumulate(&mut self, graph: &Graph, grads: &Grads) {
        for (slot, var) in graph.param_leaves() {
            if let Some(g) = grads.wrt(var) {
                let dst = &mut self.entries[slot].grad;
                dst.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
    }

    /// Order-sensitive FNV-1a digest of every value's bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for e in &self.entries {
            for b in e.name.bytes().chain(e.value.data().iter().flat_map(|v| v.to_bits().to_le_bytes())) {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CKPT_MAGIC)?;
        w.write_all(&CKPT_VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&(e.name.len() as u32).to_le_bytes())?;
            w.write_all(e.name.as_bytes())?;
            w.write_all(&[e.trainable as u8])?;
            w.write_all(&(e.value.shape().len() as u32).to_le_bytes())?;
            for &d in e.value.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in e.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != CKPT_MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CKPT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = read_u32(&mut r)?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            if len > 4096 {
                return Err(Error::Format("implausible parameter name length".into()));
            }
            let mut name = vec![0u8; len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
            let mut flag = [0u8; 1];
            read_exact(&mut r, &mut flag)?;
            let ndim = read_u32(&mut r)? as usize;
            if ndim > 8 {
                return Err(Error::Format("implausible tensor rank".into()));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                read_exact(&mut r, &mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            if n > 1 << 28 {
                return Err(Error::Format("implausible tensor size".into()));
            }
            let mut bytes = vec![0u8; 8 * n];
            read_exact(&mut r, &mut bytes)?;
            let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            store.insert(&name, Tensor::new(&shape, data)?, flag[0] != 0)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::fs::read(path)?.as_slice())
    }

    /// Copies values from `other` by name; every entry must exist with the
    /// same shape.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        for e in &mut self.entries {
            let src = other
                .slot(&e.name)
                .map(|s| &other.entries[s].value)
                .ok_or_else(|| Error::UnknownParameter(e.name.clone()))?;
            if src.shape() != e.value.shape() {
                return Err(Error::Shape {
                    op: "load",
                    detail: format!("'{}' is {:?}, checkpoint has {:?}", e.name, e.value.shape(), src.shape()),
                });
            }
            e.value = src.clone();
        }
        if other.len() != self.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} entries, model expects {}",
                other.len(),
                self.len()
            )));
        }
        Ok(())
    }
}

const CKPT_MAGIC: &[u8; 8] = b"POLYCKPT";
const CKPT_VERSION: u32 = 1;

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Format("truncated checkpoint".into()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Adam with bias correction. Buffers and other non-trainable entries are
/// never touched.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        if self.m.len() != store.entries.len() {
            self.m = store.entries.iter().map(|e| vec![0.0; e.value.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, e) in store.entries.iter_mut().enumerate() {
            if !e.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for ((p, &g), (mi, vi)) in e.value.data_mut().iter_mut().zip(&e.grad).zip(m.iter_mut().zip(v.iter_mut())) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                *p -= self.lr * (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = ParamStore::new();
        s.add_param("w", Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap()).unwrap();
        let before = s.clone();
        let mut adam = Adam::new(1e-2);
        for _ in 0..10 {
            adam.step(&mut s);
        }
        assert_eq!(s, before);
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut s = ParamStore::new();
        let slot = s.add_param("x", Tensor::scalar(5.0)).unwrap();
        let mut adam = Adam::new(0.05);
        for _ in 0..500 {
            s.zero_grads();
            let mut g = Graph::new();
            let x = g.param(s.value(slot).clone(), slot).unwrap();
            let l = g.mse_loss(x, &[1.5]).unwrap();
            let gr = g.backward(l).unwrap();
            s.accumulate(&g, &gr);
            adam.step(&mut s);
        }
        assert!((s.value(slot).data()[0] - 1.5).abs() < 1e-3);
    }

    #[test]
    fn buffers_are_not_trained_or_counted() {
        let mut s = ParamStore::new();
        s.add_param("w", Tensor::zeros(&[4])).unwrap();
        let b = s.add_buffer("running", Tensor::full(&[2], 3.0)).unwrap();
        assert_eq!(s.trainable_count(), 4);
        s.entries[b].grad = vec![1.0, 1.0];
        Adam::new(1.0).step(&mut s);
        assert_eq!(s.value(b).data(), &[3.0, 3.0]);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let mut s = ParamStore::new();
        s.add_param("w", Tensor::full(&[2, 2], 0.5)).unwrap();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        assert_eq!(ParamStore::read_from(buf.as_slice()).unwrap(), s);
        assert!(ParamStore::read_from(&buf[..buf.len() - 3]).is_err());
        buf[0] = b'X';
        assert!(matches!(ParamStore::read_from(buf.as_slice()), Err(Error::Format(_))));
    }
}
