//! Checkpoint container.
//!
//! The file starts with the model block (see [`crate::model::encode_params`])
//! and continues with tagged sections:
//!
//! ```text
//! tag_len u32 | tag bytes | payload_len u64 | payload
//! ```
//!
//! | tag      | payload                                                         |
//! |----------|-----------------------------------------------------------------|
//! | `CONFIG` | UTF-8 `key=value` lines describing the run                      |
//! | `ADAM`   | step u64, first moments, second moments (model block layout)    |
//! | `CBMEM`  | strategy u8, dim u32, per class × {current, previous, history}: |
//! |          | count u32 then `count` center pairs as 2·dim f64                |
//! | `STATE`  | completed epochs u32                                            |
//!
//! Readers skip unknown sections.

use std::fs;
use std::path::Path;

use super::{AdamState, TrainState};
use crate::codec::{put_f64s, put_u32, put_u64, DecodeError, Reader};
use crate::crossbatch::{CenterMemory, CenterPair, ClassMemory, Strategy, VideoClass};
use crate::error::{Error, Result};
use crate::model::{decode_params, encode_params, ModelParams};

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: Option<AdamState>,
    pub memory: Option<CenterMemory>,
    pub epoch: Option<usize>,
    pub config_text: Option<String>,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState, config_text: Option<String>) -> Self {
        Self {
            params: state.params.clone(),
            adam: Some(state.adam.clone()),
            memory: Some(state.memory.clone()),
            epoch: Some(state.epoch),
            config_text,
        }
    }

    /// Training state, if every training section is present.
    pub fn into_state(self) -> Option<TrainState> {
        Some(TrainState {
            params: self.params,
            adam: self.adam?,
            memory: self.memory?,
            epoch: self.epoch?,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        encode_params(&self.params, &mut buf);
        if let Some(text) = &self.config_text {
            section(&mut buf, "CONFIG", text.as_bytes());
        }
        if let Some(adam) = &self.adam {
            let mut p = Vec::new();
            put_u64(&mut p, adam.step);
            for block in adam.m.blocks().into_iter().chain(adam.v.blocks()) {
                put_f64s(&mut p, block);
            }
            section(&mut buf, "ADAM", &p);
        }
        if let Some(mem) = &self.memory {
            section(&mut buf, "CBMEM", &encode_memory(mem));
        }
        if let Some(epoch) = self.epoch {
            section(&mut buf, "STATE", &(epoch as u32).to_le_bytes());
        }
        buf
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let params = decode_params(&mut r)?;
        let mut ck = Checkpoint {
            params,
            adam: None,
            memory: None,
            epoch: None,
            config_text: None,
        };
        while r.remaining() > 0 {
            let tag_len = r.u32()? as usize;
            let tag = std::str::from_utf8(r.take(tag_len)?)
                .map_err(|_| DecodeError("section tag is not UTF-8".into()))?
                .to_string();
            let len = r.u64()? as usize;
            let payload = r.take(len)?;
            let mut p = Reader::new(payload);
            match tag.as_str() {
                "CONFIG" => {
                    ck.config_text = Some(
                        String::from_utf8(payload.to_vec())
                            .map_err(|_| DecodeError("CONFIG section is not UTF-8".into()))?,
                    )
                }
                "ADAM" => {
                    let step = p.u64()?;
                    let mut m = ck.params.zeros_like();
                    let mut v = ck.params.zeros_like();
                    for block in m.blocks_mut().into_iter().chain(v.blocks_mut()) {
                        block.copy_from_slice(&p.f64s(block.len())?);
                    }
                    ck.adam = Some(AdamState { m, v, step });
                }
                "CBMEM" => ck.memory = Some(decode_memory(&mut p)?),
                "STATE" => ck.epoch = Some(p.u32()? as usize),
                _ => {}
            }
        }
        Ok(ck)
    }
}

fn section(buf: &mut Vec<u8>, tag: &str, payload: &[u8]) {
    put_u32(buf, tag.len() as u32);
    buf.extend_from_slice(tag.as_bytes());
    put_u64(buf, payload.len() as u64);
    buf.extend_from_slice(payload);
}

fn encode_memory(mem: &CenterMemory) -> Vec<u8> {
    let mut p = vec![mem.strategy().code()];
    let lists = |c: VideoClass| {
        let m = mem.class(c);
        [m.current.clone(), m.previous.clone(), m.history.clone()]
    };
    let dim = [VideoClass::Normal, VideoClass::Abnormal]
        .into_iter()
        .flat_map(lists)
        .flatten()
        .map(|(a, _)| a.len())
        .next()
        .unwrap_or(0);
    put_u32(&mut p, dim as u32);
    for class in [VideoClass::Normal, VideoClass::Abnormal] {
        for list in lists(class) {
            put_u32(&mut p, list.len() as u32);
            for (a, b) in &list {
                put_f64s(&mut p, a);
                put_f64s(&mut p, b);
            }
        }
    }
    p
}

fn decode_memory(p: &mut Reader<'_>) -> std::result::Result<CenterMemory, DecodeError> {
    let code = p.take(1)?[0];
    let strategy =
        Strategy::from_code(code).ok_or_else(|| DecodeError(format!("unknown strategy code {code}")))?;
    let dim = p.u32()? as usize;
    let read_list = |p: &mut Reader<'_>| -> std::result::Result<Vec<CenterPair>, DecodeError> {
        let count = p.u32()? as usize;
        (0..count).map(|_| Ok((p.f64s(dim)?, p.f64s(dim)?))).collect()
    };
    let mut classes = Vec::with_capacity(2);
    for _ in 0..2 {
        classes.push(ClassMemory {
            current: read_list(p)?,
            previous: read_list(p)?,
            history: read_list(p)?,
        });
    }
    let abnormal = classes.pop().unwrap();
    let normal = classes.pop().unwrap();
    CenterMemory::from_parts(strategy, normal, abnormal).map_err(|e| DecodeError(e.to_string()))
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    fs::write(path, checkpoint.encode()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes).map_err(|e| Error::format(path, e.0))
}
