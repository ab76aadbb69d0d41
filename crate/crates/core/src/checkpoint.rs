//! Self-describing little-endian checkpoint format.
//!
//! ```text
//! "DPCK" | u32 version | u32 entry count
//! per entry: u16 name length | name (UTF-8) | u8 role | u8 rank | rank x u32 dims | payload (LE 32-bit words)
//! u64 FNV-1a of every preceding byte
//! ```
//!
//! Metadata travels as an entry named `meta` whose payload words are
//! unsigned integers: `[num_classes, epoch, seed_lo, seed_hi]`.

use std::path::Path;

use crate::data::MeanImage;
use crate::error::{Error, Result};
use crate::nn::{Network, Params};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DPCK";
pub const VERSION: u32 = 1;
const META_NAME: &str = "meta";
const MEAN_NAME: &str = "mean";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Weights,
    Biases,
    VelocityWeights,
    VelocityBiases,
    MeanImage,
    Metadata,
}

impl Role {
    fn tag(self) -> u8 {
        match self {
            Role::Weights => 0,
            Role::Biases => 1,
            Role::VelocityWeights => 2,
            Role::VelocityBiases => 3,
            Role::MeanImage => 4,
            Role::Metadata => 255,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => Role::Weights,
            1 => Role::Biases,
            2 => Role::VelocityWeights,
            3 => Role::VelocityBiases,
            4 => Role::MeanImage,
            255 => Role::Metadata,
            t => return Err(Error::Checkpoint(format!("unknown role tag {t}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub role: Role,
    pub dims: Vec<usize>,
    /// Raw 32-bit words; reals for every role except metadata.
    pub words: Vec<u32>,
}

impl Entry {
    fn tensor(name: &str, role: Role, t: &Tensor<f32>) -> Self {
        Self {
            name: name.to_string(),
            role,
            dims: t.dims().to_vec(),
            words: t.data().iter().map(|v| v.to_bits()).collect(),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor<f32>> {
        Tensor::from_vec(
            &self.dims,
            self.words.iter().map(|&w| f32::from_bits(w)).collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Metadata {
    pub num_classes: u32,
    pub epoch: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: Metadata,
    entries: Vec<Entry>,
}

impl Checkpoint {
    /// Weights and biases of every parameterized layer, in network order.
    pub fn from_network(net: &Network<f32>, metadata: Metadata) -> Self {
        let mut entries = Vec::new();
        for layer in net.layers() {
            if let Some(p) = &layer.params {
                entries.push(Entry::tensor(&layer.spec.name, Role::Weights, &p.weights));
                entries.push(Entry::tensor(&layer.spec.name, Role::Biases, &p.biases));
            }
        }
        Self { metadata, entries }
    }

    /// Attach momentum buffers, indexed like the network's layers.
    pub fn with_velocities(
        mut self,
        net: &Network<f32>,
        velocities: &[Option<Params<f32>>],
    ) -> Result<Self> {
        if velocities.len() != net.layers().len() {
            return Err(Error::Checkpoint(
                "velocity count does not match layer count".into(),
            ));
        }
        for (layer, v) in net.layers().iter().zip(velocities) {
            if let Some(v) = v {
                self.entries.push(Entry::tensor(
                    &layer.spec.name,
                    Role::VelocityWeights,
                    &v.weights,
                ));
                self.entries.push(Entry::tensor(
                    &layer.spec.name,
                    Role::VelocityBiases,
                    &v.biases,
                ));
            }
        }
        Ok(self)
    }

    pub fn with_mean(mut self, mean: &MeanImage) -> Self {
        self.entries.retain(|e| e.role != Role::MeanImage);
        self.entries
            .push(Entry::tensor(MEAN_NAME, Role::MeanImage, mean.image()));
        self
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn entry(&self, name: &str, role: Role) -> Option<&Entry> {
        self.entries
            .iter()
            .find(|e| e.name == name && e.role == role)
    }

    pub fn mean(&self) -> Result<Option<MeanImage>> {
        self.entries
            .iter()
            .find(|e| e.role == Role::MeanImage)
            .map(|e| e.to_tensor().map(MeanImage))
            .transpose()
    }

    /// Parameters stored for `name`, if both weights and biases are present.
    pub fn params(&self, name: &str) -> Result<Option<Params<f32>>> {
        self.pair(name, Role::Weights, Role::Biases)
    }

    fn pair(&self, name: &str, w: Role, b: Role) -> Result<Option<Params<f32>>> {
        match (self.entry(name, w), self.entry(name, b)) {
            (Some(w), Some(b)) => Ok(Some(Params {
                weights: w.to_tensor()?,
                biases: b.to_tensor()?,
            })),
            (None, None) => Ok(None),
            _ => Err(Error::Checkpoint(format!(
                "layer `{name}` has weights or biases but not both"
            ))),
        }
    }

    /// Copy stored parameters into the named layers, checking shapes.
    pub fn load_layers(&self, net: &mut Network<f32>, names: &[String]) -> Result<()> {
        for name in names {
            let stored = self
                .params(name)?
                .ok_or_else(|| Error::layer(name, "missing from checkpoint"))?;
            let layer = net
                .layer_mut(name)
                .and_then(|l| l.params.as_mut())
                .ok_or_else(|| {
                    Error::layer(name, "no such parameterized layer in target network")
                })?;
            for (dst, src, what) in [
                (&layer.weights, &stored.weights, "weights"),
                (&layer.biases, &stored.biases, "biases"),
            ] {
                if dst.dims() != src.dims() {
                    return Err(Error::layer(
                        name,
                        format!(
                            "checkpoint {what} are {}, network expects {}",
                            src.shape(),
                            dst.shape()
                        ),
                    ));
                }
            }
            *layer = stored;
        }
        Ok(())
    }

    /// Load every parameterized layer of `net`.
    pub fn apply_to(&self, net: &mut Network<f32>) -> Result<()> {
        let names = net.param_layer_names();
        self.load_layers(net, &names)
    }

    /// Momentum buffers indexed like `net.layers()`; zeros where none were saved.
    pub fn velocities(&self, net: &Network<f32>) -> Result<Vec<Option<Params<f32>>>> {
        net.layers()
            .iter()
            .map(|l| {
                let Some(p) = &l.params else { return Ok(None) };
                match self.pair(&l.spec.name, Role::VelocityWeights, Role::VelocityBiases)? {
                    Some(v)
                        if v.weights.dims() == p.weights.dims()
                            && v.biases.dims() == p.biases.dims() =>
                    {
                        Ok(Some(v))
                    }
                    Some(_) => Err(Error::layer(&l.spec.name, "saved velocity shape mismatch")),
                    None => Ok(Some(Params {
                        weights: Tensor::zeros(p.weights.dims())?,
                        biases: Tensor::zeros(p.biases.dims())?,
                    })),
                }
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count = u32::try_from(self.entries.len() + 1)
            .map_err(|_| Error::Checkpoint("too many entries".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        let m = self.metadata;
        let meta = Entry {
            name: META_NAME.into(),
            role: Role::Metadata,
            dims: vec![4],
            words: vec![m.num_classes, m.epoch, m.seed as u32, (m.seed >> 32) as u32],
        };
        for e in std::iter::once(&meta).chain(&self.entries) {
            let name = e.name.as_bytes();
            let len = u16::try_from(name.len())
                .map_err(|_| Error::Checkpoint(format!("name `{}` too long", e.name)))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(e.role.tag());
            let rank = u8::try_from(e.dims.len())
                .map_err(|_| Error::Checkpoint("rank exceeds 255".into()))?;
            out.push(rank);
            for &d in &e.dims {
                let d = u32::try_from(d)
                    .map_err(|_| Error::Checkpoint(format!("dimension {d} exceeds u32")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for w in &e.words {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
        let sum = fnv1a(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        if bytes.len() < 20 {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8-byte tail"));
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        if fnv1a(body) != stored {
            return Err(Error::Checkpoint(
                "checksum mismatch (corrupt or truncated file)".into(),
            ));
        }
        let count = r.u32()? as usize;
        let mut metadata = None;
        let mut entries: Vec<Entry> = Vec::new();
        for _ in 0..count {
            let len = usize::from(r.u16()?);
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?
                .to_string();
            let role = Role::from_tag(r.u8()?)?;
            let rank = usize::from(r.u8()?);
            let dims = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let words = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            if role == Role::Metadata {
                if words.len() != 4 {
                    return Err(Error::Checkpoint("metadata entry must hold 4 words".into()));
                }
                metadata = Some(Metadata {
                    num_classes: words[0],
                    epoch: words[1],
                    seed: u64::from(words[2]) | (u64::from(words[3]) << 32),
                });
                continue;
            }
            if entries.iter().any(|e| e.name == name && e.role == role) {
                return Err(Error::Checkpoint(format!(
                    "duplicate entry `{name}` ({role:?})"
                )));
            }
            entries.push(Entry {
                name,
                role,
                dims,
                words,
            });
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after entries",
                body.len() - r.pos
            )));
        }
        let metadata =
            metadata.ok_or_else(|| Error::Checkpoint("missing metadata entry".into()))?;
        Ok(Self { metadata, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}
