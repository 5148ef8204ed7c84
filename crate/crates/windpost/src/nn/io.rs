//! Versioned binary network format: node specs in graph order followed by
//! parameter blobs (little-endian 64-bit reals), plus the epoch-log CSV.

use super::layers::{ActivationKind, Layer, LayerSpec};
use super::net::{Network, NodeInput, NodeSpec};
use super::train::EpochRecord;
use crate::dist::math::seed_stream;
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

const NET_MAGIC: &[u8; 4] = b"WPNN";
const NET_VERSION: u32 = 1;

pub fn write_network(w: &mut impl Write, net: &Network) -> Result<()> {
    w.write_all(NET_MAGIC)?;
    w.write_all(&NET_VERSION.to_le_bytes())?;
    w.write_all(&(net.n_external_inputs as u32).to_le_bytes())?;
    w.write_all(&(net.nodes.len() as u32).to_le_bytes())?;
    for node in &net.nodes {
        w.write_all(&[node.inputs.len() as u8])?;
        for input in &node.inputs {
            match input {
                NodeInput::External(k) => {
                    w.write_all(&[0u8])?;
                    w.write_all(&(*k as u32).to_le_bytes())?;
                }
                NodeInput::Node(j) => {
                    w.write_all(&[1u8])?;
                    w.write_all(&(*j as u32).to_le_bytes())?;
                }
            }
        }
        write_layer(w, &node.layer)?;
    }
    Ok(())
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_layer(w: &mut impl Write, layer: &Layer) -> Result<()> {
    match layer {
        Layer::Dense(d) => {
            w.write_all(&[0u8])?;
            w.write_all(&(d.inputs as u32).to_le_bytes())?;
            w.write_all(&(d.units as u32).to_le_bytes())?;
            write_f64s(w, &d.weights)?;
            write_f64s(w, &d.bias)?;
        }
        Layer::Conv2D(c) => {
            w.write_all(&[1u8])?;
            w.write_all(&(c.in_channels as u32).to_le_bytes())?;
            w.write_all(&(c.filters as u32).to_le_bytes())?;
            write_f64s(w, &c.weights)?;
            write_f64s(w, &c.bias)?;
        }
        Layer::MaxPool(_) => w.write_all(&[2u8])?,
        Layer::BatchNorm(b) => {
            w.write_all(&[3u8])?;
            w.write_all(&(b.size as u32).to_le_bytes())?;
            w.write_all(&b.momentum.to_le_bytes())?;
            w.write_all(&b.eps.to_le_bytes())?;
            write_f64s(w, &b.gamma)?;
            write_f64s(w, &b.beta)?;
            write_f64s(w, &b.running_mean)?;
            write_f64s(w, &b.running_var)?;
        }
        Layer::Dropout(d) => {
            w.write_all(&[4u8])?;
            w.write_all(&d.rate.to_le_bytes())?;
        }
        Layer::Activation(a) => {
            w.write_all(&[5u8])?;
            w.write_all(&[match a.kind {
                ActivationKind::Relu => 0u8,
                ActivationKind::Softplus => 1,
                ActivationKind::Softmax => 2,
                ActivationKind::Linear => 3,
            }])?;
        }
        Layer::Flatten(_) => w.write_all(&[6u8])?,
        Layer::Concat => w.write_all(&[7u8])?,
    }
    Ok(())
}

pub fn read_network(r: &mut impl Read, origin: &Path) -> Result<Network> {
    let err = |m: &str| Error::FormatError { file: origin.display().to_string(), message: m.into() };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| err("missing magic"))?;
    if &magic != NET_MAGIC {
        return Err(err("not a network blob"));
    }
    let version = read_u32(r).map_err(|_| err("missing version"))?;
    if version != NET_VERSION {
        return Err(err(&format!("unsupported network version {version}")));
    }
    let n_inputs = read_u32(r).map_err(|_| err("truncated header"))? as usize;
    let n_nodes = read_u32(r).map_err(|_| err("truncated header"))? as usize;
    let mut specs: Vec<NodeSpec> = Vec::with_capacity(n_nodes);
    let mut payloads: Vec<LayerPayload> = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let mut cnt = [0u8; 1];
        r.read_exact(&mut cnt).map_err(|_| err("truncated node"))?;
        let mut inputs = Vec::with_capacity(cnt[0] as usize);
        for _ in 0..cnt[0] {
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag).map_err(|_| err("truncated node input"))?;
            let idx = read_u32(r).map_err(|_| err("truncated node input"))? as usize;
            inputs.push(match tag[0] {
                0 => NodeInput::External(idx),
                1 => NodeInput::Node(idx),
                _ => return Err(err("bad input tag")),
            });
        }
        let (spec, payload) = read_layer(r, origin)?;
        specs.push(NodeSpec { spec, inputs });
        payloads.push(payload);
    }
    // Build with a throwaway init stream, then overwrite the parameters.
    let mut init_rng = seed_stream(0, "deserialize", 0);
    let mut net = Network::build(&specs, n_inputs, &mut init_rng)?;
    for (node, payload) in net.nodes.iter_mut().zip(payloads) {
        payload.apply(&mut node.layer);
    }
    Ok(net)
}

struct LayerPayload {
    arrays: Vec<Vec<f64>>,
}

impl LayerPayload {
    fn apply(self, layer: &mut Layer) {
        let mut arrays = self.arrays.into_iter();
        match layer {
            Layer::Dense(d) => {
                d.weights = arrays.next().unwrap();
                d.bias = arrays.next().unwrap();
            }
            Layer::Conv2D(c) => {
                c.weights = arrays.next().unwrap();
                c.bias = arrays.next().unwrap();
            }
            Layer::BatchNorm(b) => {
                b.gamma = arrays.next().unwrap();
                b.beta = arrays.next().unwrap();
                b.running_mean = arrays.next().unwrap();
                b.running_var = arrays.next().unwrap();
            }
            _ => {}
        }
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

fn read_layer(r: &mut impl Read, origin: &Path) -> Result<(LayerSpec, LayerPayload)> {
    let err = |m: &str| Error::FormatError { file: origin.display().to_string(), message: m.into() };
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag).map_err(|_| err("truncated layer"))?;
    let mut b8 = [0u8; 8];
    Ok(match tag[0] {
        0 => {
            let inputs = read_u32(r).map_err(|_| err("truncated dense"))? as usize;
            let units = read_u32(r).map_err(|_| err("truncated dense"))? as usize;
            let weights = read_f64s(r, units * inputs).map_err(|_| err("truncated dense weights"))?;
            let bias = read_f64s(r, units).map_err(|_| err("truncated dense bias"))?;
            (LayerSpec::Dense { inputs, units }, LayerPayload { arrays: vec![weights, bias] })
        }
        1 => {
            let in_channels = read_u32(r).map_err(|_| err("truncated conv"))? as usize;
            let filters = read_u32(r).map_err(|_| err("truncated conv"))? as usize;
            let weights =
                read_f64s(r, filters * in_channels * 9).map_err(|_| err("truncated conv weights"))?;
            let bias = read_f64s(r, filters).map_err(|_| err("truncated conv bias"))?;
            (LayerSpec::Conv2D { in_channels, filters }, LayerPayload { arrays: vec![weights, bias] })
        }
        2 => (LayerSpec::MaxPool, LayerPayload { arrays: vec![] }),
        3 => {
            let size = read_u32(r).map_err(|_| err("truncated batchnorm"))? as usize;
            r.read_exact(&mut b8).map_err(|_| err("truncated batchnorm"))?;
            let momentum = f64::from_le_bytes(b8);
            r.read_exact(&mut b8).map_err(|_| err("truncated batchnorm"))?;
            let eps = f64::from_le_bytes(b8);
            let gamma = read_f64s(r, size).map_err(|_| err("truncated batchnorm"))?;
            let beta = read_f64s(r, size).map_err(|_| err("truncated batchnorm"))?;
            let rm = read_f64s(r, size).map_err(|_| err("truncated batchnorm"))?;
            let rv = read_f64s(r, size).map_err(|_| err("truncated batchnorm"))?;
            (
                LayerSpec::BatchNorm { size, momentum, eps },
                LayerPayload { arrays: vec![gamma, beta, rm, rv] },
            )
        }
        4 => {
            r.read_exact(&mut b8).map_err(|_| err("truncated dropout"))?;
            (LayerSpec::Dropout { rate: f64::from_le_bytes(b8) }, LayerPayload { arrays: vec![] })
        }
        5 => {
            let mut k = [0u8; 1];
            r.read_exact(&mut k).map_err(|_| err("truncated activation"))?;
            let kind = match k[0] {
                0 => ActivationKind::Relu,
                1 => ActivationKind::Softplus,
                2 => ActivationKind::Softmax,
                3 => ActivationKind::Linear,
                _ => return Err(err("bad activation kind")),
            };
            (LayerSpec::Activation(kind), LayerPayload { arrays: vec![] })
        }
        6 => (LayerSpec::Flatten, LayerPayload { arrays: vec![] }),
        7 => (LayerSpec::Concat, LayerPayload { arrays: vec![] }),
        _ => return Err(err("bad layer tag")),
    })
}

pub fn save_epoch_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "epoch,train_loss,val_loss")?;
    for rec in log {
        writeln!(w, "{},{},{}", rec.epoch, rec.train_loss, rec.val_loss)?;
    }
    w.flush()?;
    Ok(())
}
