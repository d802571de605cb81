//! Dataset files.
//!
//! Layout: one line of JSON (`{"format", "role", "num_samples", "spec"}`)
//! terminated by `\n`, then one binary block per sample:
//!
//! | field      | encoding                                  |
//! |------------|-------------------------------------------|
//! | sample_id  | u64 little-endian                         |
//! | H, W, d    | u32 little-endian each                    |
//! | features   | `H·W·d` f64 little-endian, row-major      |
//! | labels     | `H·W` u8, row-major                       |

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Dataset, DomainSpec, Role};
use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, LabelGrid};
use crate::domain::SceneSample;

const FORMAT: &str = "bbseg-dataset/1";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    role: Role,
    num_samples: u64,
    spec: DomainSpec,
}

pub fn write_dataset<W: Write>(out: &mut W, dataset: &Dataset) -> Result<()> {
    let header = Header {
        format: FORMAT.to_string(),
        role: dataset.role,
        num_samples: dataset.samples.len() as u64,
        spec: dataset.spec.clone(),
    };
    serde_json::to_writer(&mut *out, &header)?;
    out.write_all(b"\n")?;
    for s in &dataset.samples {
        let f = &s.features;
        out.write_all(&s.sample_id.to_le_bytes())?;
        for dim in [f.height(), f.width(), f.channels()] {
            let dim = u32::try_from(dim).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
            out.write_all(&dim.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(f.as_slice().len() * 8);
        for v in f.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
        out.write_all(s.labels.as_slice())?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(input: &mut R) -> Result<Dataset> {
    let mut line = Vec::new();
    input.read_until(b'\n', &mut line)?;
    let header: Header = serde_json::from_slice(&line)?;
    if header.format != FORMAT {
        return Err(Error::Format(format!("unknown dataset format {:?}", header.format)));
    }
    header.spec.validate()?;

    let mut samples = Vec::new();
    loop {
        if input.fill_buf()?.is_empty() {
            break;
        }
        let mut id = [0u8; 8];
        input.read_exact(&mut id)?;
        let mut dims = [0usize; 3];
        for d in &mut dims {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let [h, w, d] = dims;
        let mut raw = vec![0u8; h * w * d * 8];
        input.read_exact(&mut raw)?;
        let features = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let mut labels = vec![0u8; h * w];
        input.read_exact(&mut labels)?;
        samples.push(SceneSample {
            sample_id: u64::from_le_bytes(id),
            features: FeatureMap::new(h, w, d, features)?,
            labels: LabelGrid::new(h, w, labels)?,
        });
    }
    if samples.len() as u64 != header.num_samples {
        return Err(Error::Format(format!(
            "header announces {} samples, file holds {}",
            header.num_samples,
            samples.len()
        )));
    }
    let dataset = Dataset {
        spec: header.spec,
        role: header.role,
        samples,
    };
    dataset.validate()?;
    Ok(dataset)
}
