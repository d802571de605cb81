//! Checkpoint files.
//!
//! One line of JSON (shapes, step, config hash, evaluation history, loss
//! trace) terminated by `\n`, then little-endian f64 blobs in this order:
//! `w1 b1 w2 b2`, first moments (same order), second moments, and the EMA
//! parameters when the run keeps them.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::TrainState;
use crate::error::{Error, Result};
use crate::eval::EvalRecord;
use crate::refine::EmaState;
use crate::student::{Architecture, OptimConfig, OptimState, StudentParams};

const FORMAT: &str = "bbseg-checkpoint/1";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    config_hash: String,
    step: u64,
    arch: Architecture,
    optim_step: u64,
    optim: OptimConfig,
    ema: Option<EmaHeader>,
    history: Vec<EvalRecord>,
    losses: Vec<f64>,
    window_retained: f64,
    window_count: u64,
}

#[derive(Serialize, Deserialize)]
struct EmaHeader {
    alpha: f64,
    step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub state: TrainState,
}

fn write_params<W: Write>(out: &mut W, p: &StudentParams) -> Result<()> {
    for (_, t) in p.tensors() {
        for v in t {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_params<R: Read>(input: &mut R, arch: Architecture) -> Result<StudentParams> {
    let mut p = StudentParams::zeros(arch);
    for t in p.tensors_mut() {
        let mut raw = vec![0u8; t.len() * 8];
        input.read_exact(&mut raw)?;
        for (v, c) in t.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(c.try_into().expect("chunk of 8"));
        }
    }
    Ok(p)
}

pub fn write_checkpoint<W: Write>(out: &mut W, ckpt: &Checkpoint) -> Result<()> {
    let s = &ckpt.state;
    let header = Header {
        format: FORMAT.into(),
        config_hash: ckpt.config_hash.clone(),
        step: s.step,
        arch: s.params.arch,
        optim_step: s.optim.step,
        optim: s.optim.config.clone(),
        ema: s.ema.as_ref().map(|e| EmaHeader {
            alpha: e.alpha,
            step: e.step,
        }),
        history: s.history.clone(),
        losses: s.losses.clone(),
        window_retained: s.window_retained,
        window_count: s.window_count,
    };
    serde_json::to_writer(&mut *out, &header)?;
    out.write_all(b"\n")?;
    write_params(out, &s.params)?;
    write_params(out, &s.optim.m)?;
    write_params(out, &s.optim.v)?;
    if let Some(e) = &s.ema {
        write_params(out, &e.params)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(input: &mut R) -> Result<Checkpoint> {
    let mut line = Vec::new();
    input.read_until(b'\n', &mut line)?;
    let h: Header = serde_json::from_slice(&line)?;
    if h.format != FORMAT {
        return Err(Error::Format(format!("unknown checkpoint format {:?}", h.format)));
    }
    h.arch.validate()?;
    let params = read_params(input, h.arch)?;
    let m = read_params(input, h.arch)?;
    let v = read_params(input, h.arch)?;
    let ema = match h.ema {
        Some(e) => Some(EmaState {
            params: read_params(input, h.arch)?,
            alpha: e.alpha,
            step: e.step,
        }),
        None => None,
    };
    if input.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint blobs".into()));
    }
    Ok(Checkpoint {
        config_hash: h.config_hash,
        state: TrainState {
            step: h.step,
            params,
            optim: OptimState {
                m,
                v,
                step: h.optim_step,
                config: h.optim,
            },
            ema,
            history: h.history,
            losses: h.losses,
            window_retained: h.window_retained,
            window_count: h.window_count,
        },
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut out, ckpt)?;
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
