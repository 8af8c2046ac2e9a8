//! Versioned binary checkpoints of chain state.
//!
//! ```text
//! magic "NNSPCKPT", version u32
//! activation u8, n_widths u64, widths u64…
//! weights: per layer, column-major f64
//! epoch u64, seed u64
//! per layer RNG: key [u8; 32], stream u64, word position u128
//! probe sums (u64 length + f64…), n_samples u64
//! series (u64 length + f64…), series epochs (u64 length + u64…)
//! loss trace (u64 length + (u64, f64)…)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::chain::ChainState;
use super::mlp::Mlp;
use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter, MAX_ELEMENTS};
use crate::kernels::Activation;

const MAGIC: &[u8; 8] = b"NNSPCKPT";
const VERSION: u32 = 1;

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Linear => 0,
        Activation::Quadratic => 1,
        Activation::Relu => 2,
    }
}

fn activation_from(code: u8) -> Result<Activation> {
    match code {
        0 => Ok(Activation::Linear),
        1 => Ok(Activation::Quadratic),
        2 => Ok(Activation::Relu),
        c => Err(Error::Format(format!("unknown activation code {c}"))),
    }
}

pub fn write_checkpoint<W: Write>(out: W, state: &ChainState) -> Result<()> {
    let mut w = ByteWriter::new(out);
    w.bytes(MAGIC)?;
    w.u32(VERSION)?;
    let mlp = &state.mlp;
    w.u8(activation_code(mlp.activation()))?;
    w.u64(mlp.widths().len() as u64)?;
    for &n in mlp.widths() {
        w.u64(n as u64)?;
    }
    for layer in mlp.weights() {
        w.f64s(layer.as_slice())?;
    }
    w.u64(state.epoch)?;
    w.u64(state.seed)?;
    for rng in &state.rngs {
        w.bytes(&rng.get_seed())?;
        w.u64(rng.get_stream())?;
        w.u128(rng.get_word_pos())?;
    }
    w.len_f64s(&state.probe_sums)?;
    w.u64(state.n_samples)?;
    w.len_f64s(&state.series)?;
    w.u64(state.series_epochs.len() as u64)?;
    for &e in &state.series_epochs {
        w.u64(e)?;
    }
    w.u64(state.loss_trace.len() as u64)?;
    for &(e, l) in &state.loss_trace {
        w.u64(e)?;
        w.f64s(&[l])?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<ChainState> {
    let mut r = ByteReader::new(input);
    if &r.array::<8>()? != MAGIC {
        return Err(Error::Format("not a chain checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let activation = activation_from(r.u8()?)?;
    let n_widths = r.len(64)?;
    let widths = (0..n_widths).map(|_| r.len(MAX_ELEMENTS)).collect::<Result<Vec<_>>>()?;
    if widths.len() < 3 {
        return Err(Error::Format("checkpoint network has fewer than three widths".into()));
    }
    let mut weights = Vec::with_capacity(widths.len() - 1);
    for p in widths.windows(2) {
        let count = p[0].checked_mul(p[1]).filter(|c| *c <= MAX_ELEMENTS);
        let count = count.ok_or_else(|| Error::Format("layer too large".into()))?;
        weights.push(DMatrix::from_vec(p[1], p[0], r.f64s(count)?));
    }
    let mlp = Mlp::from_weights(activation, weights)?;
    let epoch = r.u64()?;
    let seed = r.u64()?;
    let mut rngs = Vec::with_capacity(mlp.n_layers());
    for _ in 0..mlp.n_layers() {
        let mut rng = ChaCha8Rng::from_seed(r.array::<32>()?);
        rng.set_stream(r.u64()?);
        rng.set_word_pos(r.u128()?);
        rngs.push(rng);
    }
    let probe_sums = r.len_f64s(MAX_ELEMENTS)?;
    let n_samples = r.u64()?;
    let series = r.len_f64s(MAX_ELEMENTS)?;
    let n_epochs = r.len(MAX_ELEMENTS)?;
    let series_epochs = (0..n_epochs).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let n_trace = r.len(MAX_ELEMENTS)?;
    let loss_trace = (0..n_trace).map(|_| Ok((r.u64()?, r.f64()?))).collect::<Result<Vec<_>>>()?;
    if !probe_sums.is_empty() && series.len() != series_epochs.len() * probe_sums.len() {
        return Err(Error::Format("series length does not match its epochs".into()));
    }
    Ok(ChainState::from_parts(mlp, epoch, seed, rngs, probe_sums, n_samples, series, series_epochs, loss_trace))
}

pub fn save_checkpoint(path: &Path, state: &ChainState) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, state)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ChainState> {
    read_checkpoint(std::fs::read(path)?.as_slice())
}
