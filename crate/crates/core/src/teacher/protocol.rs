//! Wire protocol between trainer and remote teacher.
//!
//! Every frame is a 4-byte big-endian length followed by that many bytes of
//! UTF-8 JSON. Requests carry row-major features; results carry class-major
//! probabilities. Frames longer than [`MAX_FRAME`] are discarded unread and
//! answered with a `"shape"` error.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

pub const MAX_FRAME: usize = 64 * 1024 * 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Request {
    Predict {
        request_id: u64,
        h: usize,
        w: usize,
        d: usize,
        features: Vec<f64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorCode {
    Decode,
    Shape,
    Internal,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Decode => "decode",
            ErrorCode::Shape => "shape",
            ErrorCode::Internal => "internal",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Response {
    Result {
        request_id: u64,
        c: usize,
        probs: Vec<f64>,
    },
    Error {
        request_id: u64,
        code: ErrorCode,
        message: String,
    },
}

#[derive(Debug)]
pub enum Frame {
    Body(Vec<u8>),
    /// A frame over the size limit; its body has been read and dropped.
    Oversize(usize),
    /// Clean end of stream before a new frame.
    Eof,
}

pub fn write_frame<W: Write>(out: &mut W, body: &[u8]) -> io::Result<()> {
    let len = u32::try_from(body.len())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame exceeds u32 length"))?;
    out.write_all(&len.to_be_bytes())?;
    out.write_all(body)?;
    out.flush()
}

pub fn read_frame<R: Read>(input: &mut R, max: usize) -> io::Result<Frame> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match input.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(Frame::Eof),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > max {
        let skipped = io::copy(&mut input.take(len as u64), &mut io::sink())?;
        if skipped < len as u64 {
            return Err(io::ErrorKind::UnexpectedEof.into());
        }
        return Ok(Frame::Oversize(len));
    }
    let mut body = vec![0u8; len];
    input.read_exact(&mut body)?;
    Ok(Frame::Body(body))
}

pub fn send<W: Write, T: Serialize>(out: &mut W, message: &T) -> io::Result<()> {
    let body = serde_json::to_vec(message).map_err(io::Error::other)?;
    write_frame(out, &body)
}
