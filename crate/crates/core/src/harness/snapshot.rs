//! Self-describing binary parameter snapshots.
//!
//! Layout (all integers little-endian):
//! ```text
//! magic      8 bytes  "SCHEDNET"
//! version    u32
//! header_len u64
//! header     header_len bytes of UTF-8 JSON (SnapshotHeader)
//! payload    every array of header.arrays in order, each value an f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::actor::AgentActor;
use crate::baselines::{DqnAgentParams, Idqn};
use crate::critic::CriticParams;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, NetSpec, ParameterSet};
use crate::trainer::{ModelConfig, SchedNet};

pub const MAGIC: &[u8; 8] = b"SCHEDNET";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Shape of one stored network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayHeader {
    pub name: String,
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub output_activation: String,
    pub len: usize,
}

impl ArrayHeader {
    fn of(name: String, net: &Mlp<f64>) -> Self {
        Self {
            name,
            input_dim: net.spec.input_dim,
            hidden_dims: net.spec.hidden_dims.clone(),
            output_dim: net.spec.output_dim,
            output_activation: net.spec.output_activation.as_str().into(),
            len: net.params.len(),
        }
    }

    fn spec(&self) -> Result<NetSpec> {
        let act = Activation::from_name(&self.output_activation)
            .ok_or_else(|| Error::Snapshot(format!("unknown activation `{}`", self.output_activation)))?;
        NetSpec::new(self.input_dim, self.hidden_dims.clone(), self.output_dim, act)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub algo: String,
    pub env: EnvConfig,
    /// Present for the scheduled model; fixes the scheduler used at evaluation.
    pub model: Option<ModelConfig>,
    pub seed: u64,
    pub step: u64,
    pub arrays: Vec<ArrayHeader>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Policy {
    Schednet(SchedNet),
    Idqn(Idqn),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub env: EnvConfig,
    pub seed: u64,
    pub step: u64,
    pub policy: Policy,
}

impl Snapshot {
    pub fn algo(&self) -> &'static str {
        match self.policy {
            Policy::Schednet(_) => "schednet",
            Policy::Idqn(_) => "idqn",
        }
    }

    fn named_nets(&self) -> Vec<(String, &Mlp<f64>)> {
        let mut out = Vec::new();
        match &self.policy {
            Policy::Schednet(m) => {
                for (i, a) in m.actors.iter().enumerate() {
                    out.push((format!("agent{i}.encoder"), &a.encoder));
                    out.push((format!("agent{i}.weight_gen"), &a.weight_gen));
                    out.push((format!("agent{i}.selector"), &a.selector));
                }
                out.push(("critic.trunk".into(), &m.critic.trunk));
                out.push(("critic.v_head".into(), &m.critic.v_head));
                out.push(("critic.q_head".into(), &m.critic.q_head));
            }
            Policy::Idqn(m) => {
                for (i, a) in m.agents.iter().enumerate() {
                    out.push((format!("agent{i}.q"), &a.q));
                }
            }
        }
        out
    }

    pub fn header(&self) -> SnapshotHeader {
        SnapshotHeader {
            algo: self.algo().into(),
            env: self.env.clone(),
            model: match &self.policy {
                Policy::Schednet(m) => Some(m.config.clone()),
                Policy::Idqn(_) => None,
            },
            seed: self.seed,
            step: self.step,
            arrays: self.named_nets().into_iter().map(|(n, net)| ArrayHeader::of(n, net)).collect(),
        }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let header = serde_json::to_vec(&self.header())?;
        out.write_all(MAGIC)?;
        out.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        out.write_all(&(header.len() as u64).to_le_bytes())?;
        out.write_all(&header)?;
        for (_, net) in self.named_nets() {
            let mut buf = Vec::with_capacity(net.params.len() * 8);
            for v in net.params.as_slice() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Snapshot("bad magic bytes".into()));
        }
        let mut u32b = [0u8; 4];
        input.read_exact(&mut u32b)?;
        let version = u32::from_le_bytes(u32b);
        if version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!("unsupported version {version}")));
        }
        let mut u64b = [0u8; 8];
        input.read_exact(&mut u64b)?;
        let header_len = u64::from_le_bytes(u64b);
        if header_len > 1 << 24 {
            return Err(Error::Snapshot("header too large".into()));
        }
        let mut header = vec![0u8; header_len as usize];
        input.read_exact(&mut header)?;
        let header: SnapshotHeader = serde_json::from_slice(&header)?;

        let mut nets = Vec::with_capacity(header.arrays.len());
        for a in &header.arrays {
            let spec = a.spec()?;
            if spec.param_count() != a.len {
                return Err(Error::Snapshot(format!("array `{}` length disagrees with its shape", a.name)));
            }
            let mut raw = vec![0u8; a.len * 8];
            input.read_exact(&mut raw)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let params = ParameterSet::from_vec(&spec, values)?;
            nets.push((a.name.clone(), Mlp { spec, params }));
        }
        let mut extra = [0u8; 1];
        if input.read(&mut extra)? != 0 {
            return Err(Error::Snapshot("trailing bytes after payload".into()));
        }
        let policy = assemble(&header, nets)?;
        Ok(Self {
            env: header.env,
            seed: header.seed,
            step: header.step,
            policy,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn take(nets: &mut Vec<(String, Mlp<f64>)>, name: &str) -> Result<Mlp<f64>> {
    let idx = nets
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| Error::Snapshot(format!("missing array `{name}`")))?;
    Ok(nets.swap_remove(idx).1)
}

fn assemble(header: &SnapshotHeader, mut nets: Vec<(String, Mlp<f64>)>) -> Result<Policy> {
    let policy = match header.algo.as_str() {
        "schednet" => {
            let config = header
                .model
                .clone()
                .ok_or_else(|| Error::Snapshot("scheduled model without model config".into()))?;
            let dims = config.actor_dims();
            let mut actors = Vec::with_capacity(config.n_agents);
            for i in 0..config.n_agents {
                actors.push(AgentActor {
                    dims,
                    encoder: take(&mut nets, &format!("agent{i}.encoder"))?,
                    weight_gen: take(&mut nets, &format!("agent{i}.weight_gen"))?,
                    selector: take(&mut nets, &format!("agent{i}.selector"))?,
                });
            }
            for a in &actors {
                if a.encoder.spec != dims.encoder_spec()?
                    || a.weight_gen.spec != dims.weight_spec()?
                    || a.selector.spec != dims.selector_spec()?
                {
                    return Err(Error::Snapshot("actor shapes disagree with the model config".into()));
                }
            }
            let critic = CriticParams {
                trunk: take(&mut nets, "critic.trunk")?,
                v_head: take(&mut nets, "critic.v_head")?,
                q_head: take(&mut nets, "critic.q_head")?,
                n_agents: config.n_agents,
            };
            Policy::Schednet(SchedNet::from_parts(config, actors, critic).map_err(|e| Error::Snapshot(e.to_string()))?)
        }
        "idqn" => {
            let n = header.env.n_agents();
            let mut agents = Vec::with_capacity(n);
            for i in 0..n {
                agents.push(DqnAgentParams::from_net(take(&mut nets, &format!("agent{i}.q"))?));
            }
            Policy::Idqn(Idqn { agents })
        }
        other => return Err(Error::Snapshot(format!("unknown algorithm `{other}`"))),
    };
    if let Some((name, _)) = nets.first() {
        return Err(Error::Snapshot(format!("unexpected array `{name}`")));
    }
    Ok(policy)
}
