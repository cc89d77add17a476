//! Checkpoint file format.
//!
//! ```text
//! magic     8 bytes  "EGCKPT\0\0"
//! version   u32      1
//! config    u32 byte length + UTF-8 JSON model configuration
//! params    u32 count, then records
//! optimizer u8 flag; when 1:
//!           base lr, current lr, momentum, weight decay, clip low,
//!           clip high, decay factor (f64 each), decay interval, step
//!           (u64 each), u32 count + momentum records
//! running   u32 count, then batch-norm running statistic records
//! ```
//!
//! A record is `u16` name length, name, `u8` order, `u32` extents and the
//! data as little-endian `f64`. All integers are little-endian.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::codec::{read_file, write_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::network::Network;
use crate::ops::RunningStats;
use crate::optim::{Sgd, SgdConfig};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EGCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_RECORDS: u32 = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Vec<(String, Tensor)>,
    pub optimizer: Option<Sgd>,
    pub running: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_network(net: &Network, optimizer: Option<&Sgd>) -> Self {
        let params = net
            .params()
            .into_iter()
            .map(|(n, t)| {
                let shape = t.shape().to_vec();
                (n, Tensor::from_vec(&shape, t.data().to_vec()).expect("same shape"))
            })
            .collect();
        let mut running = Vec::new();
        for (i, b) in net.blocks.iter().enumerate() {
            let c = b.stats.mean.len();
            running.push((
                format!("bn{}.running_mean", i + 1),
                Tensor::from_vec(&[c], b.stats.mean.clone()).expect("channel vector"),
            ));
            running.push((
                format!("bn{}.running_var", i + 1),
                Tensor::from_vec(&[c], b.stats.var.clone()).expect("channel vector"),
            ));
        }
        Checkpoint {
            config: net.config.clone(),
            params,
            optimizer: optimizer.cloned(),
            running,
        }
    }

    /// Rebuilds the network, checking every record against the embedded
    /// configuration.
    pub fn to_network(&self) -> Result<Network> {
        self.config.validate()?;
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut net = Network::new(self.config.clone(), &mut rng)?;
        let expected: Vec<(String, Vec<usize>)> = net
            .params()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if expected.len() != self.params.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} parameters, configuration needs {}",
                self.params.len(),
                expected.len()
            )));
        }
        for ((name, shape), (got_name, got)) in expected.iter().zip(&self.params) {
            if name != got_name {
                return Err(Error::Data(format!("expected parameter '{name}', found '{got_name}'")));
            }
            if shape.as_slice() != got.shape() {
                return Err(Error::Data(format!(
                    "parameter '{name}' has shape {:?}, configuration needs {shape:?}",
                    got.shape()
                )));
            }
        }
        for (dst, (_, src)) in net.params_mut().into_iter().zip(&self.params) {
            *dst = src.clone();
        }
        if self.running.len() != 2 * net.blocks.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} running statistics, configuration needs {}",
                self.running.len(),
                2 * net.blocks.len()
            )));
        }
        for (i, b) in net.blocks.iter_mut().enumerate() {
            let c = b.stats.mean.len();
            let (mn, mean) = &self.running[2 * i];
            let (vn, var) = &self.running[2 * i + 1];
            if mean.len() != c || var.len() != c {
                return Err(Error::Data(format!("running statistics '{mn}'/'{vn}' need {c} channels")));
            }
            b.stats = RunningStats {
                mean: mean.data().to_vec(),
                var: var.data().to_vec(),
            };
        }
        if let Some(opt) = &self.optimizer {
            if !opt.velocity.is_empty() && opt.velocity.len() != expected.len() {
                return Err(Error::Data("optimizer state does not match the parameter list".into()));
            }
            for (v, (name, shape)) in opt.velocity.iter().zip(&expected) {
                if v.len() != shape.iter().product::<usize>() {
                    return Err(Error::Data(format!("momentum buffer for '{name}' has the wrong size")));
                }
            }
        }
        Ok(net)
    }

    /// Inflates a single-channel checkpoint to `target_channels` inputs.
    /// Optimizer state is dropped since the first-layer shape changes.
    pub fn inflate(&self, target_channels: usize) -> Result<Checkpoint> {
        if self.config.in_channels != 1 {
            return Err(Error::Invalid(format!(
                "inflation needs a single-channel source, checkpoint has {} input channels",
                self.config.in_channels
            )));
        }
        let net = self.to_network()?.inflate(target_channels)?;
        Ok(Checkpoint::from_network(&net, None))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        let cfg = serde_json::to_vec(&self.config).expect("config serializes");
        w.u32(cfg.len() as u32);
        w.bytes(&cfg);
        w.u32(self.params.len() as u32);
        for (name, t) in &self.params {
            w.record(name, t.shape(), t.data());
        }
        match &self.optimizer {
            None => w.u8(0),
            Some(opt) => {
                w.u8(1);
                let c = &opt.config;
                for v in [
                    c.learning_rate,
                    opt.learning_rate,
                    c.momentum,
                    c.weight_decay,
                    c.clip_low,
                    c.clip_high,
                    c.decay_factor,
                ] {
                    w.f64(v);
                }
                w.u64(c.decay_interval);
                w.u64(opt.step);
                w.u32(opt.velocity.len() as u32);
                for (i, v) in opt.velocity.iter().enumerate() {
                    let name = self.params.get(i).map(|(n, _)| n.as_str()).unwrap_or("");
                    let shape = self
                        .params
                        .get(i)
                        .map(|(_, t)| t.shape().to_vec())
                        .unwrap_or_else(|| vec![v.len()]);
                    w.record(name, &shape, v);
                }
            }
        }
        w.u32(self.running.len() as u32);
        for (name, t) in &self.running {
            w.record(name, t.shape(), t.data());
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = ByteReader::new(bytes);
        if bytes.len() < 8 || r.take(8, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::NotACheckpoint);
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let len = r.u32("config length")? as usize;
        let cfg = r.take(len, "config block")?;
        let config: ModelConfig = serde_json::from_slice(cfg)
            .map_err(|e| Error::Data(format!("config block: {e}")))?;
        let params = read_records(&mut r, "parameter")?;
        let optimizer = match r.u8("optimizer flag")? {
            0 => None,
            1 => {
                let mut f = [0.0; 7];
                for v in &mut f {
                    *v = r.f64("optimizer state")?;
                }
                let decay_interval = r.u64("optimizer state")?;
                let step = r.u64("optimizer state")?;
                let velocity = read_records(&mut r, "momentum")?
                    .into_iter()
                    .map(|(_, t)| t.into_data())
                    .collect();
                Some(Sgd {
                    config: SgdConfig {
                        learning_rate: f[0],
                        momentum: f[2],
                        weight_decay: f[3],
                        clip_low: f[4],
                        clip_high: f[5],
                        decay_factor: f[6],
                        decay_interval,
                    },
                    learning_rate: f[1],
                    step,
                    velocity,
                })
            }
            other => return Err(Error::Data(format!("bad optimizer flag {other}"))),
        };
        let running = read_records(&mut r, "running statistic")?;
        if r.remaining() != 0 {
            return Err(Error::Data(format!("{} trailing bytes after checkpoint", r.remaining())));
        }
        Ok(Checkpoint {
            config,
            params,
            optimizer,
            running,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Self::decode(&read_file(path)?)
    }

    /// Loads and checks against the configuration the caller expects.
    pub fn load_for(path: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
        let ck = Self::load(path)?;
        ck.check_config(expected)?;
        Ok(ck)
    }

    pub fn check_config(&self, expected: &ModelConfig) -> Result<()> {
        if self.config.num_classes != expected.num_classes {
            return Err(Error::Data(format!(
                "checkpoint has {} gesture classes, configuration expects {}",
                self.config.num_classes, expected.num_classes
            )));
        }
        if self.config.in_channels != expected.in_channels {
            return Err(Error::Data(format!(
                "checkpoint takes {} input channels, configuration expects {}",
                self.config.in_channels, expected.in_channels
            )));
        }
        if self.config.variant != expected.variant {
            return Err(Error::Data(format!(
                "checkpoint variant {} differs from configured {}",
                self.config.variant.name(),
                expected.variant.name()
            )));
        }
        Ok(())
    }

    pub fn sha256(&self) -> String {
        hex_digest(&self.encode())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn read_records(r: &mut ByteReader<'_>, what: &str) -> Result<Vec<(String, Tensor)>> {
    let count = r.u32(&format!("{what} count"))?;
    if count > MAX_RECORDS {
        return Err(Error::Data(format!("{count} {what} records is implausible")));
    }
    (0..count).map(|_| r.record(what)).collect()
}
