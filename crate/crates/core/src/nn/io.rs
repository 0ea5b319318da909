//! Versioned binary weights format.
//!
//! ```text
//! header   : magic "GFNW" | version u32 | layer count u32
//! branches : branch count u32 | per branch: rank u32, dims u32 * rank
//! layers   : kind tag u8 | group u32 (branch index, u32::MAX = head)
//!            | rank u32, dims u32 * rank
//!            | array count u32 | per array: length u64, f64 LE * length
//! ```
//! All integers are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::layer::{Layer, LayerSpec};
use super::network::{BranchSpec, Network, NetworkSpec};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"GFNW";
pub const WEIGHTS_VERSION: u32 = 1;
const HEAD_GROUP: u32 = u32::MAX;

fn fmt_err(e: std::io::Error) -> Error {
    Error::Format(format!("weights stream: {e}"))
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("value {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes()).map_err(fmt_err)
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(fmt_err)?;
    Ok(u32::from_le_bytes(b))
}

fn get_dims<R: Read>(r: &mut R) -> Result<Vec<usize>> {
    let rank = get_u32(r)? as usize;
    if rank > 16 {
        return Err(Error::Format(format!("implausible rank {rank}")));
    }
    (0..rank).map(|_| get_u32(r).map(|v| v as usize)).collect()
}

pub fn write_weights<T: Real, W: Write>(net: &Network<T>, w: &mut W) -> Result<()> {
    let spec = net.spec();
    let total = spec.branches.iter().map(|b| b.layers.len()).sum::<usize>() + spec.head.len();
    w.write_all(WEIGHTS_MAGIC).map_err(fmt_err)?;
    put_u32(w, WEIGHTS_VERSION as usize)?;
    put_u32(w, total)?;
    put_u32(w, spec.branches.len())?;
    for b in &spec.branches {
        put_u32(w, b.input_shape.len())?;
        for &d in &b.input_shape {
            put_u32(w, d)?;
        }
    }
    let groups = (0..spec.branches.len())
        .flat_map(|bi| net.branch_layers(bi).iter().map(move |l| (bi as u32, l)))
        .chain(net.head_layers().iter().map(|l| (HEAD_GROUP, l)));
    for (group, layer) in groups {
        w.write_all(&[layer.spec().tag()]).map_err(fmt_err)?;
        w.write_all(&group.to_le_bytes()).map_err(fmt_err)?;
        let dims = layer.spec().dims();
        put_u32(w, dims.len())?;
        for d in dims {
            put_u32(w, d)?;
        }
        put_u32(w, layer.params().len())?;
        for p in layer.params() {
            w.write_all(&(p.len() as u64).to_le_bytes()).map_err(fmt_err)?;
            for v in p {
                w.write_all(&v.as_f64().to_le_bytes()).map_err(fmt_err)?;
            }
        }
    }
    Ok(())
}

pub fn read_weights<T: Real, R: Read>(r: &mut R) -> Result<Network<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(fmt_err)?;
    if &magic != WEIGHTS_MAGIC {
        return Err(Error::Format("not a weights file (bad magic)".into()));
    }
    let version = get_u32(r)?;
    if version != WEIGHTS_VERSION {
        return Err(Error::Format(format!("unsupported weights version {version}")));
    }
    let total = get_u32(r)? as usize;
    let nb = get_u32(r)? as usize;
    let mut branches: Vec<BranchSpec> = (0..nb)
        .map(|_| {
            get_dims(r).map(|input_shape| BranchSpec {
                input_shape,
                layers: vec![],
            })
        })
        .collect::<Result<_>>()?;
    let mut head = Vec::new();
    let mut params = Vec::with_capacity(total);
    for _ in 0..total {
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag).map_err(fmt_err)?;
        let group = get_u32(r)?;
        let dims = get_dims(r)?;
        let spec = LayerSpec::from_tag(tag[0], &dims)?;
        let count = get_u32(r)? as usize;
        let shapes = spec.param_shapes();
        if count != shapes.len() {
            return Err(Error::Format(format!(
                "{} layer stores {count} arrays, expected {}",
                spec.name(),
                shapes.len()
            )));
        }
        let mut arrays = Vec::with_capacity(count);
        for shape in &shapes {
            let mut len = [0u8; 8];
            r.read_exact(&mut len).map_err(fmt_err)?;
            let len = u64::from_le_bytes(len) as usize;
            if len != shape.iter().product::<usize>() {
                return Err(Error::Format(format!(
                    "{} parameter block of {len} values does not match shape {shape:?}",
                    spec.name()
                )));
            }
            let mut raw = vec![0u8; len * 8];
            r.read_exact(&mut raw).map_err(fmt_err)?;
            arrays.push(
                raw.chunks_exact(8)
                    .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
                    .collect::<Vec<T>>(),
            );
        }
        if group == HEAD_GROUP {
            head.push(spec);
        } else {
            branches
                .get_mut(group as usize)
                .ok_or_else(|| Error::Format(format!("layer references missing branch {group}")))?
                .layers
                .push(spec);
        }
        params.push(arrays);
    }
    let mut net = Network::zeros(NetworkSpec { branches, head })?;
    // Layers were read branch-major then head, which is the canonical order.
    for (layer, arrays) in net.layers_mut().zip(params) {
        set_params(layer, arrays);
    }
    Ok(net)
}

fn set_params<T: Real>(layer: &mut Layer<T>, arrays: Vec<Vec<T>>) {
    layer.params = arrays;
}

pub fn save_weights<T: Real>(net: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_weights(net, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_weights<T: Real>(path: impl AsRef<Path>) -> Result<Network<T>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_weights(&mut BufReader::new(f))
}
