use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::RngCore;
use thiserror::Error;

use super::forward::SkipPolicy;
use super::qnet::Mlp;
use super::{StrategyKind, StrategySpec};
use crate::stream::FrameRecord;

const MAGIC: &[u8; 8] = b"DMVFQP01";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("not a policy checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint truncated")]
    Truncated,
    #[error("inconsistent checkpoint: {0}")]
    Inconsistent(String),
}

/// Learned skip policy: a Q-value network over actions `1..=A`, acting
/// greedily.
#[derive(Debug, Clone, PartialEq)]
pub struct QPolicy {
    strategy: StrategySpec,
    net: Mlp,
}

impl QPolicy {
    pub(crate) fn new(strategy: StrategySpec, net: Mlp) -> Self {
        assert_eq!(net.outputs(), strategy.action_space);
        Self { strategy, net }
    }

    pub fn strategy(&self) -> StrategySpec {
        self.strategy
    }

    pub fn dim(&self) -> usize {
        self.net.inputs()
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    /// Q-values for actions `1..=A` (index 0 is action 1).
    pub fn q_values(&self, feature: &[f32]) -> Vec<f64> {
        let x: Vec<f64> = feature.iter().map(|&v| f64::from(v)).collect();
        self.net.forward(&x)
    }

    /// Greedy action; ties go to the shorter jump.
    pub fn greedy_action(&self, feature: &[f32]) -> usize {
        argmax(&self.q_values(feature)) + 1
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let sizes = self.net.sizes();
        let params = self.net.params();
        let mut out = Vec::with_capacity(32 + sizes.len() * 4 + params.len() * 8);
        out.extend_from_slice(MAGIC);
        out.push(self.strategy.kind.code());
        out.extend_from_slice(&(self.strategy.action_space as u32).to_le_bytes());
        out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
        for &s in sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let kind = StrategyKind::from_code(r.take(1)?[0])
            .ok_or_else(|| CheckpointError::Inconsistent("unknown strategy code".into()))?;
        let action_space = r.u32()? as usize;
        let n_sizes = r.u32()? as usize;
        let sizes = (0..n_sizes)
            .map(|_| r.u32().map(|s| s as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n_params = r.u64()? as usize;
        if n_params != Mlp::param_count(&sizes) {
            return Err(CheckpointError::Inconsistent(format!(
                "{n_params} parameters for layer sizes {sizes:?}"
            )));
        }
        let params = (0..n_params).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::Inconsistent("trailing bytes".into()));
        }
        let net =
            Mlp::from_parts(sizes, params).ok_or_else(|| CheckpointError::Inconsistent("bad layer sizes".into()))?;
        let strategy =
            StrategySpec::new(kind, action_space).map_err(|e| CheckpointError::Inconsistent(e.to_string()))?;
        if net.outputs() != action_space {
            return Err(CheckpointError::Inconsistent(format!(
                "network has {} outputs, action space is {action_space}",
                net.outputs()
            )));
        }
        Ok(Self { strategy, net })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

impl SkipPolicy for QPolicy {
    fn action_space(&self) -> usize {
        self.strategy.action_space
    }

    fn choose(&self, frame: &FrameRecord, _rng: &mut dyn RngCore) -> usize {
        self.greedy_action(&frame.feature)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = k;
        }
    }
    best
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let out = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
