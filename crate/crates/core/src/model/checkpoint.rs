//! Binary checkpoint: `PCNPROBE1`, a u64 entry count, then per entry a u64
//! name length, UTF-8 name, u8 dtype code, u8 rank, u64 extents and raw
//! little-endian element data. All integers are little-endian.

use std::io::Write;

use super::Module;
use crate::error::{PcnError, Result};
use crate::numerics::{Float, OptimizerConfig, OptimizerKind, OptimizerState, Tensor};

pub const MAGIC: &[u8; 9] = b"PCNPROBE1";
pub const BUFFER_PREFIX: &str = "buffer.";
pub const OPTIM_PREFIX: &str = "optim.";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint<T = f32> {
    pub entries: Vec<(String, Tensor<T>)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(PcnError::Format { offset: self.pos, msg: format!("truncated {what}") });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        let v = self.u64(what)?;
        usize::try_from(v)
            .ok()
            .filter(|&v| v <= self.bytes.len())
            .ok_or(PcnError::Format { offset: at, msg: format!("implausible {what} {v}") })
    }
}

impl<T: Float> Checkpoint<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.entries.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name).ok_or_else(|| PcnError::Data(format!("checkpoint has no entry {name:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(T::DTYPE_CODE);
            out.push(t.rank() as u8);
            for &e in t.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for v in t.data() {
                if T::DTYPE_CODE == 0 {
                    out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
                } else {
                    out.extend_from_slice(&v.as_f64().to_le_bytes());
                }
            }
        }
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(PcnError::Format { offset: 0, msg: "bad magic".into() });
        }
        let count = r.len("entry count")?;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.len("name length")?;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(n, "name")?)
                .map_err(|_| PcnError::Format { offset: at, msg: "name is not UTF-8".into() })?
                .to_string();
            let at = r.pos;
            let code = r.u8("dtype")?;
            if code != T::DTYPE_CODE {
                return Err(PcnError::Format {
                    offset: at,
                    msg: format!("dtype code {code} for {name:?}, expected {}", T::DTYPE_CODE),
                });
            }
            let rank = r.u8("rank")? as usize;
            let shape = (0..rank).map(|_| r.len("extent")).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let width = if code == 0 { 4 } else { 8 };
            let raw = r.take(numel * width, "tensor data")?;
            let data = raw
                .chunks_exact(width)
                .map(|c| {
                    if width == 4 {
                        T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    } else {
                        T::lit(f64::from_le_bytes(c.try_into().unwrap()))
                    }
                })
                .collect();
            entries.push((name, Tensor::new(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(PcnError::Format { offset: r.pos, msg: "trailing bytes".into() });
        }
        Ok(Self { entries })
    }

    /// Appends a module's parameters as `prefix.name` and its buffers as
    /// `buffer.prefix.name`.
    pub fn add_module<M: Module<T> + ?Sized>(&mut self, prefix: &str, module: &M) {
        for (n, t) in module.named_params() {
            self.push(join(prefix, &n), t.clone());
        }
        for (n, t) in module.named_buffers() {
            self.push(format!("{BUFFER_PREFIX}{}", join(prefix, &n)), t.clone());
        }
    }

    /// Restores a module saved with [`Self::add_module`]; shapes must match.
    pub fn load_module<M: Module<T> + ?Sized>(&self, prefix: &str, module: &mut M) -> Result<()> {
        let names: Vec<String> = module.named_params().into_iter().map(|(n, _)| join(prefix, &n)).collect();
        let bufs: Vec<String> =
            module.named_buffers().into_iter().map(|(n, _)| format!("{BUFFER_PREFIX}{}", join(prefix, &n))).collect();
        for (dst, name) in module.params_mut().into_iter().zip(&names) {
            let src = self.require(name)?;
            src.same_shape(dst, name)?;
            *dst = src.clone();
        }
        for (dst, name) in module.buffers_mut().into_iter().zip(&bufs) {
            let src = self.require(name)?;
            src.same_shape(dst, name)?;
            *dst = src.clone();
        }
        Ok(())
    }

    /// Optimiser state: hyperparameters, step and per-parameter moments.
    pub fn add_optimizer(&mut self, key: &str, names: &[String], state: &OptimizerState<T>) {
        let c = state.config;
        let kind = match c.kind {
            OptimizerKind::Adamw => 0.0,
            OptimizerKind::SgdMomentum => 1.0,
        };
        let hp = [kind, c.lr, c.weight_decay, c.momentum, c.beta1, c.beta2, c.eps].map(T::lit);
        self.push(format!("{OPTIM_PREFIX}{key}.hparams"), Tensor::new(&[7], hp.to_vec()).unwrap());
        self.push(format!("{OPTIM_PREFIX}{key}.step"), Tensor::new(&[1], vec![T::lit(state.step_count() as f64)]).unwrap());
        for (n, m) in names.iter().zip(state.first_moments()) {
            self.push(format!("{OPTIM_PREFIX}{key}.m.{n}"), m.clone());
        }
        for (n, v) in names.iter().zip(state.second_moments()) {
            self.push(format!("{OPTIM_PREFIX}{key}.v.{n}"), v.clone());
        }
    }

    pub fn load_optimizer(&self, key: &str, names: &[String]) -> Result<OptimizerState<T>> {
        let hp: Vec<f64> = self.require(&format!("{OPTIM_PREFIX}{key}.hparams"))?.data().iter().map(|v| v.as_f64()).collect();
        if hp.len() != 7 {
            return Err(PcnError::Data("optimizer hparams must have 7 entries".into()));
        }
        let kind = if hp[0] == 0.0 { OptimizerKind::Adamw } else { OptimizerKind::SgdMomentum };
        let config = OptimizerConfig { kind, lr: hp[1], weight_decay: hp[2], momentum: hp[3], beta1: hp[4], beta2: hp[5], eps: hp[6] };
        let step = self.require(&format!("{OPTIM_PREFIX}{key}.step"))?.data()[0].as_f64() as u64;
        let mut st = OptimizerState::new(config);
        if step > 0 {
            let first = names.iter().map(|n| self.require(&format!("{OPTIM_PREFIX}{key}.m.{n}")).cloned()).collect::<Result<_>>()?;
            let second = if kind == OptimizerKind::Adamw {
                names.iter().map(|n| self.require(&format!("{OPTIM_PREFIX}{key}.v.{n}")).cloned()).collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            st.restore(step, first, second);
        }
        Ok(st)
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PcnModel;

    #[test]
    fn round_trip_is_byte_identical() {
        let m = PcnModel::<f32>::init(3);
        let mut ck = Checkpoint::new();
        ck.add_module("model", &m);
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..9], b"PCNPROBE1");
        let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        let mut m2 = PcnModel::<f32>::init(4);
        back.load_module("model", &mut m2).unwrap();
        assert_eq!(m, m2);
        assert!(back.get("buffer.model.encoder.bn1.running_var").is_some());
    }

    #[test]
    fn layout_of_a_single_entry() {
        let mut ck = Checkpoint::<f32>::new();
        ck.push("w", Tensor::new(&[2], vec![1.0, -2.0]).unwrap());
        let b = ck.to_bytes();
        let mut want = b"PCNPROBE1".to_vec();
        want.extend_from_slice(&1u64.to_le_bytes());
        want.extend_from_slice(&1u64.to_le_bytes());
        want.push(b'w');
        want.extend_from_slice(&[0, 1]);
        want.extend_from_slice(&2u64.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(b, want);
    }

    #[test]
    fn truncation_reports_offset() {
        let mut ck = Checkpoint::<f32>::new();
        ck.push("w", Tensor::zeros(&[4]));
        let b = ck.to_bytes();
        match Checkpoint::<f32>::from_bytes(&b[..b.len() - 3]) {
            Err(PcnError::Format { offset, .. }) => assert!(offset > 9),
            other => panic!("unexpected {other:?}"),
        }
        assert!(Checkpoint::<f64>::from_bytes(&b).is_err());
    }

    #[test]
    fn optimizer_state_round_trips() {
        let mut p = Tensor::<f32>::new(&[2], vec![1.0, 2.0]).unwrap();
        let g = Tensor::new(&[2], vec![0.5, -0.5]).unwrap();
        let mut st = OptimizerState::new(OptimizerConfig::adamw(1e-3, 1e-4));
        st.step(&mut [&mut p], &[&g]).unwrap();
        let names = vec!["p".to_string()];
        let mut ck = Checkpoint::new();
        ck.add_optimizer("w", &names, &st);
        let back = Checkpoint::<f32>::from_bytes(&ck.to_bytes()).unwrap().load_optimizer("w", &names).unwrap();
        assert_eq!(back.step_count(), 1);
        assert_eq!(back.first_moments(), st.first_moments());
        assert_eq!(back.second_moments(), st.second_moments());
        assert_eq!(back.config.kind, OptimizerKind::Adamw);
    }
}
