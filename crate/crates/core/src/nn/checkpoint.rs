//! Self-describing binary checkpoint container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "GLCGANCK"
//! version    u32      currently 1
//! variant    u16 length + UTF-8 name
//! epoch      u32
//! networks   u32 count, then per network:
//!   role     u8 (0 generator, 1 discriminator)
//!   layers   u32 count, then per layer a descriptor:
//!            kind u8, kernel u32, stride u32, padding u32, output_padding u32,
//!            in u32, out u32, batch_norm u8, has_bias u8,
//!            activation u8 + slope f64, dropout f64, skip i32 (-1 = none)
//!   params   per layer: weight tensor, [bias tensor], [gamma, beta,
//!            running mean, running var]; a tensor is rank u8, dims u32…,
//!            then f64 data
//! ```

use std::fs;
use std::path::Path;

use crate::autodiff::{Activation, RunningStats};
use crate::error::{Error, Result};
use crate::kernels::ConvGeometry;
use crate::nn::architecture::{
    LayerKind, LayerParams, LayerSpec, NetworkRole, NetworkSpec, NetworkState, NormParams,
};
use crate::nn::variant::Variant;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"GLCGANCK";
pub const FORMAT_VERSION: u32 = 1;

/// A saved generator (and optionally discriminator) at a given epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub variant: Variant,
    pub epoch: u32,
    pub generator: NetworkState,
    pub discriminator: Option<NetworkState>,
}

/// File name of the checkpoint written after `epoch`.
pub fn checkpoint_file_name(epoch: u32) -> String {
    format!("ckpt_epoch{epoch}.bin")
}

/// Parses the epoch out of a `ckpt_epoch{N}.bin` file name.
pub fn parse_checkpoint_file_name(name: &str) -> Option<u32> {
    name.strip_prefix("ckpt_epoch")?
        .strip_suffix(".bin")?
        .parse()
        .ok()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let name = self.variant.name().as_bytes();
        w.extend_from_slice(&(name.len() as u16).to_le_bytes());
        w.extend_from_slice(name);
        w.extend_from_slice(&self.epoch.to_le_bytes());
        let nets: Vec<&NetworkState> = std::iter::once(&self.generator)
            .chain(self.discriminator.as_ref())
            .collect();
        w.extend_from_slice(&(nets.len() as u32).to_le_bytes());
        for net in nets {
            write_network(&mut w, net);
        }
        w
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            path,
        };
        let magic = r.take(8, "magic")?;
        if magic != MAGIC {
            return Err(r.malformed(0, format!("bad magic {magic:?}")));
        }
        let at = r.pos;
        let version = r.u32("format version")?;
        if version != FORMAT_VERSION {
            return Err(r.malformed(at, format!("unsupported format version {version}")));
        }
        let len = r.u16("variant name length")? as usize;
        let at = r.pos;
        let raw = r.take(len, "variant name")?;
        let name =
            std::str::from_utf8(raw).map_err(|_| r.malformed(at, "variant name is not UTF-8"))?;
        let variant: Variant = name
            .parse()
            .map_err(|_| r.malformed(at, format!("unknown variant {name:?}")))?;
        let epoch = r.u32("epoch")?;
        let at = r.pos;
        let count = r.u32("network count")?;
        if !(1..=2).contains(&count) {
            return Err(r.malformed(at, format!("network count {count} not in 1..=2")));
        }
        let generator = read_network(&mut r)?;
        if generator.spec.role != NetworkRole::Generator {
            return Err(r.malformed(at, "first network is not a generator"));
        }
        let discriminator = if count == 2 {
            let d = read_network(&mut r)?;
            if d.spec.role != NetworkRole::Discriminator {
                return Err(r.malformed(at, "second network is not a discriminator"));
            }
            Some(d)
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(r.malformed(
                r.pos as u64,
                format!("{} trailing bytes", bytes.len() - r.pos),
            ));
        }
        Ok(Self {
            variant,
            epoch,
            generator,
            discriminator,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn write_tensor(w: &mut Vec<u8>, t: &Tensor) {
    w.push(t.shape().len() as u8);
    for &d in t.shape() {
        w.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        w.extend_from_slice(&v.to_le_bytes());
    }
}

fn write_f64s(w: &mut Vec<u8>, v: &[f64]) {
    w.extend_from_slice(&(v.len() as u32).to_le_bytes());
    for x in v {
        w.extend_from_slice(&x.to_le_bytes());
    }
}

fn activation_code(a: Activation) -> (u8, f64) {
    match a {
        Activation::LeakyRelu(s) => (0, s),
        Activation::Relu => (1, 0.0),
        Activation::Tanh => (2, 0.0),
        Activation::Sigmoid => (3, 0.0),
    }
}

fn write_network(w: &mut Vec<u8>, net: &NetworkState) {
    w.push(match net.spec.role {
        NetworkRole::Generator => 0,
        NetworkRole::Discriminator => 1,
    });
    w.extend_from_slice(&(net.spec.layers.len() as u32).to_le_bytes());
    for l in &net.spec.layers {
        w.push(match l.kind {
            LayerKind::Conv => 0,
            LayerKind::ConvTranspose => 1,
        });
        let g = l.geometry;
        for v in [
            g.kernel,
            g.stride,
            g.padding,
            g.output_padding,
            l.in_channels,
            l.out_channels,
        ] {
            w.extend_from_slice(&(v as u32).to_le_bytes());
        }
        w.push(l.batch_norm as u8);
        w.push(l.has_bias as u8);
        let (code, slope) = activation_code(l.activation);
        w.push(code);
        w.extend_from_slice(&slope.to_le_bytes());
        w.extend_from_slice(&l.dropout.to_le_bytes());
        let skip = l.skip_source.map_or(-1, |s| s as i32);
        w.extend_from_slice(&skip.to_le_bytes());
    }
    for p in &net.layers {
        write_tensor(w, &p.weight);
        if let Some(b) = &p.bias {
            write_tensor(w, b);
        }
        if let Some(n) = &p.norm {
            write_tensor(w, &n.gamma);
            write_tensor(w, &n.beta);
            write_f64s(w, &n.running.mean);
            write_f64s(w, &n.running.var);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn malformed(&self, offset: impl TryInto<u64>, detail: impl Into<String>) -> Error {
        Error::Malformed {
            path: self.path.to_path_buf(),
            offset: offset.try_into().unwrap_or(u64::MAX),
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                self.malformed(
                    self.pos,
                    format!(
                        "{what}: need {n} bytes, {} remain",
                        self.bytes.len() - self.pos
                    ),
                )
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn i32(&mut self, what: &str) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn flag(&mut self, what: &str) -> Result<bool> {
        let at = self.pos;
        match self.u8(what)? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(self.malformed(at, format!("{what}: flag byte {v}"))),
        }
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        Ok(self.u32(what)? as usize)
    }

    fn f64s(&mut self, expected: usize, what: &str) -> Result<Vec<f64>> {
        let at = self.pos;
        let n = self.usize(what)?;
        if n != expected {
            return Err(self.malformed(at, format!("{what}: length {n}, expected {expected}")));
        }
        (0..n).map(|_| self.f64(what)).collect()
    }

    fn tensor(&mut self, expected: &[usize], what: &str) -> Result<Tensor> {
        let at = self.pos;
        let rank = self.u8(what)? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| self.usize(what)).collect::<Result<_>>()?;
        if shape != expected {
            return Err(self.malformed(
                at,
                format!("{what}: shape {shape:?}, expected {expected:?}"),
            ));
        }
        let n: usize = shape.iter().product();
        let raw = self.take(n * 8, what)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(&shape, data)
    }
}

fn read_network(r: &mut Reader<'_>) -> Result<NetworkState> {
    let at = r.pos;
    let role = match r.u8("network role")? {
        0 => NetworkRole::Generator,
        1 => NetworkRole::Discriminator,
        v => return Err(r.malformed(at, format!("unknown network role {v}"))),
    };
    let n_layers = r.usize("layer count")?;
    if n_layers == 0 || n_layers > 64 {
        return Err(r.malformed(at + 1, format!("implausible layer count {n_layers}")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let at = r.pos;
        let kind = match r.u8("layer kind")? {
            0 => LayerKind::Conv,
            1 => LayerKind::ConvTranspose,
            v => return Err(r.malformed(at, format!("layer {i}: unknown kind {v}"))),
        };
        let kernel = r.usize("kernel")?;
        let stride = r.usize("stride")?;
        let padding = r.usize("padding")?;
        let output_padding = r.usize("output_padding")?;
        let in_channels = r.usize("in_channels")?;
        let out_channels = r.usize("out_channels")?;
        let batch_norm = r.flag("batch_norm")?;
        let has_bias = r.flag("has_bias")?;
        let at_act = r.pos;
        let code = r.u8("activation")?;
        let slope = r.f64("activation slope")?;
        let activation = match code {
            0 => Activation::LeakyRelu(slope),
            1 => Activation::Relu,
            2 => Activation::Tanh,
            3 => Activation::Sigmoid,
            v => return Err(r.malformed(at_act, format!("layer {i}: unknown activation {v}"))),
        };
        let dropout = r.f64("dropout")?;
        let at_skip = r.pos;
        let skip = r.i32("skip source")?;
        let skip_source = match skip {
            -1 => None,
            s if s >= 0 && (s as usize) < i => Some(s as usize),
            s => return Err(r.malformed(at_skip, format!("layer {i}: invalid skip source {s}"))),
        };
        if kernel == 0 || stride == 0 || kernel > 16 || in_channels == 0 || out_channels == 0 {
            return Err(r.malformed(at, format!("layer {i}: degenerate descriptor")));
        }
        layers.push(LayerSpec {
            kind,
            geometry: ConvGeometry::new(kernel, stride, padding)
                .with_output_padding(output_padding),
            in_channels,
            out_channels,
            batch_norm,
            has_bias,
            activation,
            dropout,
            skip_source,
        });
    }
    let spec = NetworkSpec { role, layers };
    let mut params = Vec::with_capacity(n_layers);
    for l in &spec.layers {
        let c = l.out_channels;
        let weight = r.tensor(&l.weight_shape(), "weight")?;
        let bias = if l.has_bias {
            Some(r.tensor(&[c], "bias")?)
        } else {
            None
        };
        let norm = if l.batch_norm {
            let gamma = r.tensor(&[c], "gamma")?;
            let beta = r.tensor(&[c], "beta")?;
            let mean = r.f64s(c, "running mean")?;
            let var = r.f64s(c, "running var")?;
            Some(NormParams {
                gamma,
                beta,
                running: RunningStats { mean, var },
            })
        } else {
            None
        };
        params.push(LayerParams { weight, bias, norm });
    }
    Ok(NetworkState {
        spec,
        layers: params,
    })
}
