//! Flat binary model container.
//!
//! ```text
//! "YNET1" | tag: u8 | config length: u32 | config (UTF-8 JSON)
//!         | parameter count: u64 | parameters: f64 LE...
//!         | auxiliary count: u64 | auxiliary values: f64 LE...
//! ```
//!
//! Parameters are stored in each model's documented tensor order. Auxiliary
//! values hold non-trained state such as input standardization.

use std::io::{Read, Write};

use yieldnet_autodiff::Tensor;

use super::{CnnRnnConfig, CnnRnnModel, DfnnModel, ModelError};
use crate::features::{InputTransform, TargetScale};

pub const MAGIC: &[u8; 5] = b"YNET1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum ModelTag {
    CnnRnn = 1,
    Dfnn = 2,
    Lasso = 3,
    Forest = 4,
    Average = 5,
}

impl ModelTag {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => ModelTag::CnnRnn,
            2 => ModelTag::Dfnn,
            3 => ModelTag::Lasso,
            4 => ModelTag::Forest,
            5 => ModelTag::Average,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub tag: ModelTag,
    pub config: String,
    pub params: Vec<f64>,
    pub aux: Vec<f64>,
}

impl Container {
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[self.tag as u8])?;
        w.write_all(&(self.config.len() as u32).to_le_bytes())?;
        w.write_all(self.config.as_bytes())?;
        for block in [&self.params, &self.aux] {
            w.write_all(&(block.len() as u64).to_le_bytes())?;
            for v in block.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, ModelError> {
        let mut magic = [0u8; 5];
        read(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(ModelError::Format("not a model file (bad magic)".into()));
        }
        let mut tag = [0u8; 1];
        read(r, &mut tag)?;
        let tag = ModelTag::from_u8(tag[0])
            .ok_or_else(|| ModelError::Format(format!("unknown model tag {}", tag[0])))?;
        let mut len = [0u8; 4];
        read(r, &mut len)?;
        let mut config = vec![0u8; u32::from_le_bytes(len) as usize];
        read(r, &mut config)?;
        let config = String::from_utf8(config)
            .map_err(|_| ModelError::Format("config block is not UTF-8".into()))?;
        let params = read_block(r)?;
        let aux = read_block(r)?;
        Ok(Self {
            tag,
            config,
            params,
            aux,
        })
    }
}

fn read(r: &mut impl Read, buf: &mut [u8]) -> Result<(), ModelError> {
    r.read_exact(buf)
        .map_err(|e| ModelError::Format(format!("truncated model file: {e}")))
}

fn read_block(r: &mut impl Read) -> Result<Vec<f64>, ModelError> {
    let mut len = [0u8; 8];
    read(r, &mut len)?;
    let n = u64::from_le_bytes(len) as usize;
    if n > 1 << 32 {
        return Err(ModelError::Format(format!("implausible block length {n}")));
    }
    let mut bytes = vec![0u8; n * 8];
    read(r, &mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Sequential reader over an auxiliary block.
pub struct Cursor<'a> {
    values: &'a [f64],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(values: &'a [f64]) -> Self {
        Self { values, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [f64], ModelError> {
        let end = self.pos + n;
        let out = self
            .values
            .get(self.pos..end)
            .ok_or_else(|| ModelError::Format("block shorter than its layout".into()))?;
        self.pos = end;
        Ok(out)
    }

    pub fn finish(self) -> Result<(), ModelError> {
        if self.pos != self.values.len() {
            return Err(ModelError::Format("block longer than its layout".into()));
        }
        Ok(())
    }
}

pub fn push_transform(aux: &mut Vec<f64>, t: &InputTransform, scale: &TargetScale) {
    aux.extend_from_slice(&t.mean);
    aux.extend_from_slice(&t.scale);
    aux.extend(t.keep.iter().map(|&k| if k { 1.0 } else { 0.0 }));
    aux.push(scale.mean);
    aux.push(scale.sd);
}

pub fn take_transform(c: &mut Cursor<'_>, len: usize) -> Result<(InputTransform, TargetScale), ModelError> {
    let mean = c.take(len)?.to_vec();
    let scale = c.take(len)?.to_vec();
    let keep = c.take(len)?.iter().map(|&v| v != 0.0).collect();
    let target = c.take(2)?;
    Ok((
        InputTransform { mean, scale, keep },
        TargetScale {
            mean: target[0],
            sd: target[1],
        },
    ))
}

fn split_params(values: &[f64], shapes: &[Vec<usize>]) -> Result<Vec<Tensor>, ModelError> {
    let mut c = Cursor::new(values);
    let params = shapes
        .iter()
        .map(|s| Ok(Tensor::new(s, c.take(s.iter().product())?.to_vec())))
        .collect::<Result<Vec<_>, ModelError>>()?;
    c.finish()?;
    Ok(params)
}

fn expect_tag(c: &Container, tag: ModelTag) -> Result<(), ModelError> {
    if c.tag != tag {
        return Err(ModelError::Format(format!("expected a {tag:?} model, found {:?}", c.tag)));
    }
    Ok(())
}

impl CnnRnnModel {
    pub fn to_container(&self) -> Container {
        let mut aux = Vec::new();
        push_transform(&mut aux, &self.transform, &self.target_scale);
        Container {
            tag: ModelTag::CnnRnn,
            config: serde_json::to_string(&self.config).expect("config serializes"),
            params: self.params().iter().flat_map(|p| p.data().iter().copied()).collect(),
            aux,
        }
    }

    pub fn from_container(c: &Container) -> Result<Self, ModelError> {
        expect_tag(c, ModelTag::CnnRnn)?;
        let config: CnnRnnConfig =
            serde_json::from_str(&c.config).map_err(|e| ModelError::Format(format!("config block: {e}")))?;
        config.validate()?;
        let shapes: Vec<Vec<usize>> = config.param_shapes().into_iter().map(|(s, _)| s).collect();
        let params = split_params(&c.params, &shapes)?;
        let mut model = CnnRnnModel::with_params(config, params);
        let mut cur = Cursor::new(&c.aux);
        (model.transform, model.target_scale) = take_transform(&mut cur, model.layout().len())?;
        cur.finish()?;
        Ok(model)
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct DfnnHeader {
    input_dim: usize,
}

impl DfnnModel {
    pub fn to_container(&self) -> Container {
        let mut aux = Vec::new();
        push_transform(&mut aux, &self.transform, &self.target_scale);
        for layer in self.running_mean.iter().chain(&self.running_var) {
            aux.extend_from_slice(layer);
        }
        Container {
            tag: ModelTag::Dfnn,
            config: serde_json::to_string(&DfnnHeader {
                input_dim: self.input_dim,
            })
            .unwrap(),
            params: self.params().iter().flat_map(|p| p.data().iter().copied()).collect(),
            aux,
        }
    }

    pub fn from_container(c: &Container) -> Result<Self, ModelError> {
        expect_tag(c, ModelTag::Dfnn)?;
        let header: DfnnHeader =
            serde_json::from_str(&c.config).map_err(|e| ModelError::Format(format!("config block: {e}")))?;
        let params = split_params(&c.params, &DfnnModel::param_shapes(header.input_dim))?;
        let mut model = DfnnModel::with_params(header.input_dim, params);
        let mut cur = Cursor::new(&c.aux);
        (model.transform, model.target_scale) = take_transform(&mut cur, header.input_dim)?;
        let layers = model.running_mean.len();
        for l in 0..layers {
            model.running_mean[l] = cur.take(super::dfnn::DFNN_WIDTH)?.to_vec();
        }
        for l in 0..layers {
            model.running_var[l] = cur.take(super::dfnn::DFNN_WIDTH)?.to_vec();
        }
        cur.finish()?;
        Ok(model)
    }
}
