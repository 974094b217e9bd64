//! Model files and training logs.
//!
//! A model file is little-endian binary: the 8-byte magic `METEVNN\0`, a
//! `u32` format version, the network configuration, the scaling parameters,
//! the flat parameter vector and the running batch-norm statistics.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::network::{layout, BatchStats, NetworkState};
use super::train::EpochLog;
use super::NetworkConfig;
use crate::error::{Error, Result};
use crate::scaling::ScalingParams;

const MAGIC: &[u8; 8] = b"METEVNN\0";
const VERSION: u32 = 1;

fn write_vec<W: Write>(w: &mut W, v: &[f64]) -> std::io::Result<()> {
    w.write_u64::<LittleEndian>(v.len() as u64)?;
    for &x in v {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

fn read_vec<R: Read>(r: &mut R, limit: usize) -> std::io::Result<Vec<f64>> {
    let n = r.read_u64::<LittleEndian>()? as usize;
    if n > limit {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("vector length {n} exceeds {limit}"),
        ));
    }
    (0..n).map(|_| r.read_f64::<LittleEndian>()).collect()
}

fn encode<W: Write>(w: &mut W, net: &NetworkState) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    let c = &net.config;
    w.write_u64::<LittleEndian>(c.input_dim as u64)?;
    w.write_u64::<LittleEndian>(c.hidden_layers as u64)?;
    w.write_u64::<LittleEndian>(c.hidden_width as u64)?;
    w.write_u8(u8::from(c.batchnorm_on_output))?;
    w.write_f64::<LittleEndian>(c.output_scale)?;
    w.write_u64::<LittleEndian>(c.seed)?;
    write_vec(w, &net.scaling.mins)?;
    write_vec(w, &net.scaling.maxs)?;
    write_vec(w, &net.params)?;
    w.write_u64::<LittleEndian>(net.running.len() as u64)?;
    for s in &net.running {
        write_vec(w, &s.mean)?;
        write_vec(w, &s.var)?;
    }
    Ok(())
}

pub fn write_model(path: &Path, net: &NetworkState) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode(&mut w, net).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn decode<R: Read>(r: &mut R) -> std::io::Result<std::result::Result<NetworkState, String>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Ok(Err("not a model file (bad magic)".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Ok(Err(format!("unsupported model version {version}")));
    }
    let config = NetworkConfig {
        input_dim: r.read_u64::<LittleEndian>()? as usize,
        hidden_layers: r.read_u64::<LittleEndian>()? as usize,
        hidden_width: r.read_u64::<LittleEndian>()? as usize,
        batchnorm_on_output: r.read_u8()? != 0,
        output_scale: r.read_f64::<LittleEndian>()?,
        seed: r.read_u64::<LittleEndian>()?,
    };
    if config.input_dim > 1 << 16 || config.hidden_width > 1 << 16 || config.hidden_layers > 1 << 10 {
        return Ok(Err("implausible network dimensions".into()));
    }
    let (layers, n_params) = layout(&config);
    let mins = read_vec(r, 1 << 16)?;
    let maxs = read_vec(r, 1 << 16)?;
    let params = read_vec(r, n_params)?;
    if params.len() != n_params || mins.len() != config.input_dim || maxs.len() != config.input_dim {
        return Ok(Err("parameter count does not match the stored configuration".into()));
    }
    let n_bn = r.read_u64::<LittleEndian>()? as usize;
    let widths: Vec<usize> = layers.iter().filter(|l| l.bn.is_some()).map(|l| l.n_out).collect();
    if n_bn != widths.len() {
        return Ok(Err("batch-norm layer count does not match".into()));
    }
    let mut running = Vec::with_capacity(n_bn);
    for width in widths {
        let mean = read_vec(r, width)?;
        let var = read_vec(r, width)?;
        if mean.len() != width || var.len() != width || var.iter().any(|v| !(*v > 0.0)) {
            return Ok(Err("invalid batch-norm statistics".into()));
        }
        running.push(BatchStats { mean, var });
    }
    Ok(Ok(NetworkState {
        config,
        params,
        running,
        scaling: ScalingParams { mins, maxs },
    }))
}

pub fn read_model(path: &Path) -> Result<NetworkState> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    match decode(&mut r) {
        Ok(Ok(net)) => Ok(net),
        Ok(Err(msg)) => Err(Error::Model(format!("{}: {msg}", path.display()))),
        Err(e) => Err(Error::Model(format!("{}: {e}", path.display()))),
    }
}

/// Writes `epoch,train_loss,val_loss`.
pub fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for e in log {
        w.write_record([e.epoch.to_string(), e.train_loss.to_string(), e.val_loss.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_training_log(path: &Path) -> Result<Vec<EpochLog>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .enumerate()
        .map(|(i, rec)| rec.map_err(|e| Error::row(path, i + 2, e.to_string())))
        .collect()
}
