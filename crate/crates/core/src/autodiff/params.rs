use std::io::{Read, Write};
use std::sync::Arc;

use super::{AutodiffError, Result, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    value: Arc<Tensor>,
    grad: Option<Tensor>,
    pub requires_grad: bool,
}

impl Parameter {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> Option<&Tensor> {
        self.grad.as_ref()
    }
}

/// Named learnable tensors shared by a model and its frontend.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name `{name}`");
        self.params.push(Parameter {
            name,
            value: Arc::new(value),
            grad: None,
            requires_grad: true,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn param(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub(crate) fn value_rc(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.params[id.0].value)
    }

    /// Mutable access; copies the buffer only if a live tape still shares it.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor> {
        self.params[id.0].grad.as_ref()
    }

    pub fn set_requires_grad(&mut self, id: ParamId, on: bool) {
        self.params[id.0].requires_grad = on;
    }

    pub fn requires_grad(&self, id: ParamId) -> bool {
        self.params[id.0].requires_grad
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &[f64]) {
        let p = &mut self.params[id.0];
        match &mut p.grad {
            Some(t) => t.data_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => {
                p.grad = Some(Tensor::new(p.value.shape().to_vec(), g.to_vec()).expect("grad shape"))
            }
        }
    }

    pub fn clear_grad(&mut self, id: ParamId) {
        self.params[id.0].grad = None;
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Serializes every parameter in registration order.
    ///
    /// Layout: `MFCK`, version `u32`, then per parameter: name length `u32`,
    /// UTF-8 name, rank `u32`, dims `u64` each, values `f64`; all little-endian.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for p in &self.params {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(p.value.rank() as u32).to_le_bytes())?;
            for &d in p.value.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in p.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.save(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Reads a checkpoint into `(name, tensor)` records, in file order.
    pub fn read_records<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != CHECKPOINT_MAGIC {
            return Err(AutodiffError::Checkpoint("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(AutodiffError::Checkpoint(format!("unsupported version {version}")));
        }
        let mut records = Vec::new();
        while cur.pos < bytes.len() {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| AutodiffError::Checkpoint(format!("non-UTF-8 name at byte {}", cur.pos)))?;
            let rank = cur.u32()? as usize;
            let shape = (0..rank)
                .map(|_| cur.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let values = (0..n).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
            records.push((name, Tensor::new(shape, values)?));
        }
        Ok(records)
    }

    /// Overwrites every parameter from a checkpoint; names and shapes must match exactly.
    pub fn load<R: Read>(&mut self, r: R) -> Result<()> {
        let records = Self::read_records(r)?;
        if records.len() != self.params.len() {
            return Err(AutodiffError::Checkpoint(format!(
                "checkpoint holds {} parameters, model has {}",
                records.len(),
                self.params.len()
            )));
        }
        for (name, tensor) in records {
            let id = self
                .find(&name)
                .ok_or_else(|| AutodiffError::Checkpoint(format!("unknown parameter `{name}`")))?;
            if self.value(id).shape() != tensor.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "checkpoint load",
                    left: self.value(id).shape().to_vec(),
                    right: tensor.shape().to_vec(),
                });
            }
            *self.value_mut(id) = tensor;
            self.clear_grad(id);
        }
        Ok(())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(AutodiffError::Checkpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a.weight", Tensor::new(vec![2, 3], (0..6).map(|i| i as f64 * 0.5).collect()).unwrap());
        s.add("b", Tensor::from_vec(vec![-1.25]));
        s
    }

    #[test]
    fn checkpoint_layout() {
        let bytes = sample_store().to_bytes();
        assert_eq!(&bytes[..4], b"MFCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 8);
        assert_eq!(&bytes[12..20], b"a.weight");
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[32..40].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(bytes[48..56].try_into().unwrap()), 0.5);
    }

    #[test]
    fn load_restores_values() {
        let src = sample_store();
        let mut dst = sample_store();
        *dst.value_mut(ParamId(1)) = Tensor::from_vec(vec![9.0]);
        dst.load(&src.to_bytes()[..]).unwrap();
        assert_eq!(dst.value(ParamId(1)).data(), &[-1.25]);
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let bytes = sample_store().to_bytes();
        let err = sample_store().load(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("truncated"));
        assert!(sample_store().load(&b"XXXX\x01\0\0\0"[..]).is_err());
    }
}
