//! Checkpoints: one line of JSON header, then every parameter tensor as a `DMAP` container
//! in declaration order (stem, blocks, head; weight before bias).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::NetConfig;
use super::network::{build_network, Network};
use crate::error::{Error, Result};
use crate::nn::Parameters;
use crate::scalar::{DType, Scalar};
use crate::tensor::{read_dmap, write_dmap, Tensor};

const FORMAT: &str = "e3d-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub config: NetConfig,
    pub seed: u64,
    pub step: u64,
    pub dtype: String,
}

fn dtype_name(d: DType) -> &'static str {
    match d {
        DType::F32 => "f32",
        DType::F64 => "f64",
    }
}

pub fn write_checkpoint<T: Scalar, W: Write>(
    out: &mut W,
    net: &Network<T>,
    seed: u64,
    step: u64,
) -> Result<()> {
    let header = CheckpointHeader {
        format: FORMAT.to_string(),
        config: net.config.clone(),
        seed,
        step,
        dtype: dtype_name(T::DTYPE).to_string(),
    };
    let io = |e| Error::io("<checkpoint>", e);
    serde_json::to_writer(&mut *out, &header)?;
    out.write_all(b"\n").map_err(io)?;
    for (shape, data) in net.slices() {
        let t = Tensor::from_vec(shape, data.to_vec())?;
        write_dmap(out, &t).map_err(io)?;
    }
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: BufRead>(input: &mut R) -> Result<(CheckpointHeader, Network<T>)> {
    let mut line = String::new();
    input
        .read_line(&mut line)
        .map_err(|e| Error::io("<checkpoint>", e))?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())?;
    if header.format != FORMAT {
        return Err(Error::Format {
            what: "checkpoint",
            reason: format!("unknown format tag {:?}", header.format),
        });
    }
    let mut net: Network<T> = build_network(&header.config, 0)?;
    let shapes: Vec<_> = net.slices().into_iter().map(|(s, _)| s).collect();
    for (i, (slot, shape)) in net.slices_mut().into_iter().zip(shapes).enumerate() {
        let t: Tensor<T> = read_dmap(input)?;
        if t.shape() != shape {
            return Err(Error::Format {
                what: "checkpoint",
                reason: format!("tensor {i} has shape {}, expected {shape}", t.shape()),
            });
        }
        slot.copy_from_slice(t.data());
    }
    Ok((header, net))
}

pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    net: &Network<T>,
    seed: u64,
    step: u64,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, net, seed, step)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<(CheckpointHeader, Network<T>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(file))
}
