//! Flat binary checkpoint container for trained networks.
//!
//! Layout (all integers little-endian u32, all tensor data little-endian
//! f32):
//!
//! ```text
//! magic           8 bytes  "CIMMCKPT"
//! version         u32      currently 1
//! in_channels     u32
//! num_modules     u32      M
//! pairs_per_module u32     L
//! channels        u32      C
//! kernel          u32
//! schedule_len    u32      = L
//! dilations       u32 * schedule_len
//! layers                   M*L+1 layers in declaration order (module by
//!                          module, pair by pair, final convolution last);
//!                          each layer is two tensors:
//!   weights:  ndim u32 = 4, dims u32 * 4 (out, in, kh, kw), data f32 * count
//!   bias:     ndim u32 = 1, dims u32 * 1 (out),             data f32 * count
//! ```
//!
//! Writing the same network twice produces identical bytes, so checkpoint
//! files can be compared directly to verify reproducibility.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::conv::ConvParams;
use crate::error::{Error, Result};
use crate::net::{CimmNetwork, NetworkConfig};
use crate::tensor::{Shape, Tensor};

const MAGIC: &[u8; 8] = b"CIMMCKPT";
const VERSION: u32 = 1;

pub fn save_network(path: &Path, net: &CimmNetwork<f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    let config = net.config();
    for v in [
        VERSION,
        config.in_channels as u32,
        config.num_modules as u32,
        config.pairs_per_module as u32,
        config.channels as u32,
        config.kernel as u32,
        config.dilation_schedule.len() as u32,
    ] {
        write_u32(&mut w, v)?;
    }
    for &d in &config.dilation_schedule {
        write_u32(&mut w, d as u32)?;
    }
    for layer in net.layers() {
        let s = layer.weights().shape();
        write_u32(&mut w, 4)?;
        for dim in [s.n, s.c, s.h, s.w] {
            write_u32(&mut w, dim as u32)?;
        }
        for &v in layer.weights().data() {
            w.write_all(&v.to_le_bytes())?;
        }
        write_u32(&mut w, 1)?;
        write_u32(&mut w, layer.bias().len() as u32)?;
        for &v in layer.bias() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

#[allow(clippy::needless_range_loop)]
pub fn load_network(path: &Path) -> Result<CimmNetwork<f32>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic string".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}, expected {VERSION}"
        )));
    }
    let in_channels = read_u32(&mut r)? as usize;
    let num_modules = read_u32(&mut r)? as usize;
    let pairs_per_module = read_u32(&mut r)? as usize;
    let channels = read_u32(&mut r)? as usize;
    let kernel = read_u32(&mut r)? as usize;
    let schedule_len = read_u32(&mut r)? as usize;
    if schedule_len != pairs_per_module {
        return Err(Error::Checkpoint(format!(
            "schedule length {schedule_len} does not match pairs_per_module {pairs_per_module}"
        )));
    }
    let mut dilation_schedule = Vec::with_capacity(schedule_len);
    for _ in 0..schedule_len {
        dilation_schedule.push(read_u32(&mut r)? as usize);
    }
    let config = NetworkConfig {
        in_channels,
        num_modules,
        pairs_per_module,
        channels,
        kernel,
        dilation_schedule,
    };
    config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("invalid stored configuration: {e}")))?;

    let padding = config.padding_schedule();
    let mut net = CimmNetwork::zeros(&config)?;
    for m in 0..num_modules {
        for l in 0..pairs_per_module {
            let in_ch = if m == 0 && l == 0 { in_channels } else { channels };
            let layer = read_layer(
                &mut r,
                channels,
                in_ch,
                kernel,
                config.dilation_schedule[l],
                padding[l],
            )?;
            *net.pair_mut(m, l) = layer;
        }
    }
    *net.final_conv_mut() = read_layer(&mut r, in_channels, channels, kernel, 1, (kernel - 1) / 2)?;

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(net)
}

fn read_layer<R: Read>(
    r: &mut R,
    out_channels: usize,
    in_channels: usize,
    kernel: usize,
    dilation: usize,
    padding: usize,
) -> Result<ConvParams<f32>> {
    let shape = Shape::new(out_channels, in_channels, kernel, kernel);
    let ndim = read_u32(r)?;
    if ndim != 4 {
        return Err(Error::Checkpoint(format!("weight tensor ndim {ndim}, expected 4")));
    }
    let dims = [read_u32(r)?, read_u32(r)?, read_u32(r)?, read_u32(r)?];
    let expected = [shape.n as u32, shape.c as u32, shape.h as u32, shape.w as u32];
    if dims != expected {
        return Err(Error::Checkpoint(format!(
            "weight shape {dims:?} does not match configuration {expected:?}"
        )));
    }
    let weights = Tensor::from_vec(shape, read_f32_vec(r, shape.count())?)?;
    let ndim = read_u32(r)?;
    if ndim != 1 {
        return Err(Error::Checkpoint(format!("bias tensor ndim {ndim}, expected 1")));
    }
    let blen = read_u32(r)? as usize;
    if blen != out_channels {
        return Err(Error::Checkpoint(format!(
            "bias length {blen} does not match {out_channels} output channels"
        )));
    }
    let bias = read_f32_vec(r, blen)?;
    ConvParams::new(weights, bias, dilation, padding)
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("truncated file".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f32_vec<R: Read>(r: &mut R, count: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Checkpoint("truncated tensor data".into()))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}
