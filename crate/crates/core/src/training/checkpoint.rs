//! QSCK checkpoint files.
//!
//! ```text
//! "QSCK"  u32 LE format version
//! then sections, each: 4-byte tag, u64 LE payload length, payload
//!   CONF  training configuration, JSON
//!   GENP  generator entries      } u32 count, then per entry:
//!   DISP  critic entries         }   u32 name length, name, u64 length, QSFM v2 matrix
//!   OPTG  generator optimizer      u64 step, u32 count, then u64 length + QSFM v2 per accumulator
//!   OPTD  critic optimizer
//!   RNGS  stream states, JSON
//!   STEP  u64 generator steps taken
//!   METR  metrics CSV written so far
//!   BEST  optional: u64 step, f64 F1, then a GENP-style entry list
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::dataset::{decode_f64, encode_f64};
use crate::discriminator::Critic;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::numerics::{OptimizerState, ParamStore};
use crate::rng::{stream, Stream, StreamRng};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"QSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Random streams consumed while training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainRngs {
    pub sampling: StreamRng,
    pub dropout: StreamRng,
    pub random_summary: StreamRng,
}

impl TrainRngs {
    pub fn new(seed: u64) -> Self {
        TrainRngs {
            sampling: stream(seed, Stream::Sampling),
            dropout: stream(seed, Stream::Dropout),
            random_summary: stream(seed, Stream::RandomSummary),
        }
    }
}

/// Generator weights with the best validation F1 seen so far.
#[derive(Clone, Debug, PartialEq)]
pub struct BestSnapshot {
    pub step: u64,
    pub f1: f64,
    pub params: ParamStore,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub generator: Generator,
    pub critic: Critic,
    pub opt_generator: OptimizerState,
    pub opt_critic: OptimizerState,
    pub rngs: TrainRngs,
    pub step: u64,
    /// Metrics CSV including its header.
    pub metrics: String,
    pub best: Option<BestSnapshot>,
}

impl Checkpoint {
    /// Fresh training state: networks drawn from the init stream of `config.seed`.
    pub fn initial(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut init = stream(config.seed, Stream::Init);
        let generator = Generator::new(&config.model, &mut init)?;
        let critic = Critic::new(&config.model, &mut init)?;
        Ok(Checkpoint {
            opt_generator: OptimizerState::for_store(&generator.store),
            opt_critic: OptimizerState::for_store(&critic.store),
            rngs: TrainRngs::new(config.seed),
            step: 0,
            metrics: super::METRICS_HEADER.to_string(),
            best: None,
            config,
            generator,
            critic,
        })
    }

    /// The best-validation generator if one was recorded, else the latest.
    pub fn best_generator(&self) -> Result<Generator> {
        let mut g = self.generator.clone();
        if let Some(best) = &self.best {
            g.store.copy_values_from(&best.params)?;
        }
        Ok(g)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let config = serde_json::to_vec(&self.config).expect("config serializes");
        section(&mut out, b"CONF", &config);
        section(&mut out, b"GENP", &encode_store(&self.generator.store));
        section(&mut out, b"DISP", &encode_store(&self.critic.store));
        section(&mut out, b"OPTG", &encode_optimizer(&self.opt_generator));
        section(&mut out, b"OPTD", &encode_optimizer(&self.opt_critic));
        section(&mut out, b"RNGS", &serde_json::to_vec(&self.rngs).expect("rng state serializes"));
        section(&mut out, b"STEP", &self.step.to_le_bytes());
        section(&mut out, b"METR", self.metrics.as_bytes());
        if let Some(best) = &self.best {
            let mut p = Vec::new();
            p.extend_from_slice(&best.step.to_le_bytes());
            p.extend_from_slice(&best.f1.to_le_bytes());
            p.extend_from_slice(&encode_store(&best.params));
            section(&mut out, b"BEST", &p);
        }
        out
    }

    /// Parses a whole file; nothing is returned unless every section checks out.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
        }
        let mut sections: Vec<([u8; 4], &[u8])> = Vec::new();
        while !r.done() {
            let tag: [u8; 4] = r.take(4)?.try_into().expect("four bytes");
            let len = r.len()?;
            let payload = r.take(len)?;
            if sections.iter().any(|(t, _)| *t == tag) {
                return Err(Error::Format(format!("duplicate section {}", String::from_utf8_lossy(&tag))));
            }
            sections.push((tag, payload));
        }
        let get = |tag: &[u8; 4]| -> Result<&[u8]> {
            sections
                .iter()
                .find(|(t, _)| t == tag)
                .map(|(_, p)| *p)
                .ok_or_else(|| Error::Format(format!("missing section {}", String::from_utf8_lossy(tag))))
        };
        let json = |e: serde_json::Error| Error::Format(format!("bad JSON section: {e}"));

        let config: TrainConfig = serde_json::from_slice(get(b"CONF")?).map_err(json)?;
        let mut state = Checkpoint::initial(config)?;
        decode_store(get(b"GENP")?, &mut state.generator.store)?;
        decode_store(get(b"DISP")?, &mut state.critic.store)?;
        state.opt_generator = decode_optimizer(get(b"OPTG")?, &state.generator.store)?;
        state.opt_critic = decode_optimizer(get(b"OPTD")?, &state.critic.store)?;
        state.rngs = serde_json::from_slice(get(b"RNGS")?).map_err(json)?;
        let mut step = Reader { bytes: get(b"STEP")?, pos: 0 };
        state.step = step.u64()?;
        step.finish()?;
        state.metrics = String::from_utf8(get(b"METR")?.to_vec())
            .map_err(|_| Error::Format("metrics section is not UTF-8".into()))?;
        if let Ok(best) = get(b"BEST") {
            let mut b = Reader { bytes: best, pos: 0 };
            let step = b.u64()?;
            let f1 = f64::from_le_bytes(b.take(8)?.try_into().expect("eight bytes"));
            let mut params = state.generator.store.clone();
            decode_store(&best[b.pos..], &mut params)?;
            state.best = Some(BestSnapshot { step, f1, params });
        }
        Ok(state)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, &ckpt.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

fn encode_store(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        let t = store.get(id);
        let m = encode_f64(t.rows(), t.cols(), t.data());
        out.extend_from_slice(&(m.len() as u64).to_le_bytes());
        out.extend_from_slice(&m);
    }
    out
}

fn decode_store(bytes: &[u8], store: &mut ParamStore) -> Result<()> {
    let mut r = Reader { bytes, pos: 0 };
    let n = r.u32()? as usize;
    if n != store.len() {
        return Err(Error::Format(format!("{n} stored entries, the model has {}", store.len())));
    }
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let len = r.u32()? as usize;
        let name = r.take(len)?;
        if name != store.name(id).as_bytes() {
            return Err(Error::Format(format!(
                "entry {} is named {:?}, expected {:?}",
                id.index(),
                String::from_utf8_lossy(name),
                store.name(id)
            )));
        }
        let len = r.len()?;
        let (rows, cols, data) = decode_f64(r.take(len)?)?;
        let t = store.get(id);
        if (rows, cols) != (t.rows(), t.cols()) {
            return Err(Error::Format(format!(
                "entry {} is {rows}x{cols}, expected {}x{}",
                store.name(id),
                t.rows(),
                t.cols()
            )));
        }
        store.set_values(id, &data)?;
    }
    r.finish()
}

fn encode_optimizer(state: &OptimizerState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&state.step.to_le_bytes());
    out.extend_from_slice(&(state.accumulators.len() as u32).to_le_bytes());
    for acc in &state.accumulators {
        // QSFM requires at least one row, so empty buffers are stored as 1x0.
        let m = encode_f64(1, acc.len(), acc);
        out.extend_from_slice(&(m.len() as u64).to_le_bytes());
        out.extend_from_slice(&m);
    }
    out
}

fn decode_optimizer(bytes: &[u8], store: &ParamStore) -> Result<OptimizerState> {
    let mut r = Reader { bytes, pos: 0 };
    let step = r.u64()?;
    let n = r.u32()? as usize;
    let expected = OptimizerState::for_store(store);
    if n != expected.accumulators.len() {
        return Err(Error::Format(format!("optimizer has {n} buffers, the model has {}", expected.accumulators.len())));
    }
    let mut accumulators = Vec::with_capacity(n);
    for want in &expected.accumulators {
        let len = r.len()?;
        let (_, _, data) = decode_f64(r.take(len)?)?;
        if data.len() != want.len() {
            return Err(Error::Format(format!("optimizer buffer holds {} values, expected {}", data.len(), want.len())));
        }
        accumulators.push(data);
    }
    r.finish()?;
    Ok(OptimizerState { accumulators, step })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated: need {n} bytes at offset {}, have {}", self.pos, self.bytes.len() - self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length does not fit in memory".into()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }

    fn finish(&self) -> Result<()> {
        if self.done() {
            Ok(())
        } else {
            Err(Error::Format(format!("{} trailing bytes", self.bytes.len() - self.pos)))
        }
    }
}
