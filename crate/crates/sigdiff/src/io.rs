//! Flat-file interchange: binary PGM/PPM images, loss-curve CSV, and the
//! dataset container (JSON header + raw little-endian f64 payload).

use crate::diffusion::TrainingTuple;
use crate::forward_models::{CameraPose, PatchCoords};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serde(String),
    #[error("dataset: {0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

pub type Result<T> = std::result::Result<T, IoError>;

fn clamp_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PGM (P5, maxval 255) of grayscale values in [0, 1].
pub fn write_pgm(path: &Path, h: usize, w: usize, values: &[f64]) -> Result<()> {
    if values.len() != h * w {
        return Err(IoError::Format(format!(
            "pgm {h}x{w} wants {} values, got {}",
            h * w,
            values.len()
        )));
    }
    let mut f = std::fs::File::create(path)?;
    write!(f, "P5\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = values.iter().map(|&v| clamp_byte(v)).collect();
    f.write_all(&bytes)?;
    Ok(())
}

/// Binary PPM (P6, maxval 255) of interleaved RGB values in [0, 1].
pub fn write_ppm(path: &Path, h: usize, w: usize, rgb: &[f64]) -> Result<()> {
    if rgb.len() != h * w * 3 {
        return Err(IoError::Format(format!(
            "ppm {h}x{w} wants {} values, got {}",
            h * w * 3,
            rgb.len()
        )));
    }
    let mut f = std::fs::File::create(path)?;
    write!(f, "P6\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = rgb.iter().map(|&v| clamp_byte(v)).collect();
    f.write_all(&bytes)?;
    Ok(())
}

/// `step,loss` CSV of a training curve.
pub fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let mut out = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Generic CSV writer with a fixed header; floats use shortest round-trip
/// formatting, so identical values always produce identical bytes.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<f64>]) -> Result<()> {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_csv_column(path: &Path, column: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let cell = line
            .split(',')
            .nth(column)
            .ok_or_else(|| IoError::Format(format!("missing column {column}")))?;
        out.push(
            cell.parse::<f64>()
                .map_err(|e| IoError::Format(e.to_string()))?,
        );
    }
    Ok(out)
}

/// Fixed-width real encoding of forward-model parameters, so datasets can be
/// stored as flat f64 payloads.
pub trait ParamCodec: Sized {
    const CODE_LEN: usize;
    fn encode(&self) -> Vec<f64>;
    fn decode(code: &[f64]) -> Self;
}

impl ParamCodec for usize {
    const CODE_LEN: usize = 1;
    fn encode(&self) -> Vec<f64> {
        vec![*self as f64]
    }
    fn decode(code: &[f64]) -> Self {
        code[0] as usize
    }
}

impl ParamCodec for f64 {
    const CODE_LEN: usize = 1;
    fn encode(&self) -> Vec<f64> {
        vec![*self]
    }
    fn decode(code: &[f64]) -> Self {
        code[0]
    }
}

impl ParamCodec for CameraPose {
    const CODE_LEN: usize = 2;
    fn encode(&self) -> Vec<f64> {
        vec![self.angle, self.offset]
    }
    fn decode(code: &[f64]) -> Self {
        CameraPose::new(code[0], code[1])
    }
}

impl ParamCodec for PatchCoords {
    const CODE_LEN: usize = 2;
    fn encode(&self) -> Vec<f64> {
        vec![self.row as f64, self.col as f64]
    }
    fn decode(code: &[f64]) -> Self {
        PatchCoords {
            row: code[0] as usize,
            col: code[1] as usize,
        }
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct DatasetHeader {
    pub count: usize,
    pub obs_shape: Vec<usize>,
    pub param_code_len: usize,
    pub has_novel: bool,
    pub seed: u64,
}

/// Dataset container: u64 little-endian header length, JSON header, then the
/// tuple payload as raw little-endian f64s.
pub fn write_dataset<P: ParamCodec + Clone>(
    path: &Path,
    tuples: &[TrainingTuple<P>],
    seed: u64,
) -> Result<()> {
    if tuples.is_empty() {
        return Err(IoError::Format("refusing to write an empty dataset".into()));
    }
    let obs_shape = tuples[0].o_ctxt.shape().to_vec();
    let has_novel = tuples[0].novel.is_some();
    for t in tuples {
        if t.o_ctxt.shape() != obs_shape || t.o_trgt.shape() != obs_shape {
            return Err(IoError::Format("inconsistent observation shapes".into()));
        }
        if t.novel.is_some() != has_novel {
            return Err(IoError::Format("mixed novel-observation presence".into()));
        }
    }
    let header = DatasetHeader {
        count: tuples.len(),
        obs_shape: obs_shape.clone(),
        param_code_len: P::CODE_LEN,
        has_novel,
        seed,
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| IoError::Serde(e.to_string()))?;
    let mut payload: Vec<f64> = Vec::new();
    for t in tuples {
        payload.extend_from_slice(t.o_ctxt.data());
        payload.extend(t.phi_ctxt.encode());
        payload.extend_from_slice(t.o_trgt.data());
        payload.extend(t.phi_trgt.encode());
        if let Some((o, p)) = &t.novel {
            payload.extend_from_slice(o.data());
            payload.extend(p.encode());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&(header_json.len() as u64).to_le_bytes())?;
    f.write_all(&header_json)?;
    for v in payload {
        f.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_dataset<P: ParamCodec>(path: &Path) -> Result<(DatasetHeader, Vec<TrainingTuple<P>>)> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 8 {
        return Err(IoError::Format("truncated dataset file".into()));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let header: DatasetHeader = serde_json::from_slice(&bytes[8..8 + header_len])
        .map_err(|e| IoError::Serde(e.to_string()))?;
    if header.param_code_len != P::CODE_LEN {
        return Err(IoError::Format(format!(
            "parameter code length {} does not match expected {}",
            header.param_code_len,
            P::CODE_LEN
        )));
    }
    let mut values = bytes[8 + header_len..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let obs_len: usize = header.obs_shape.iter().product();
    let mut take = |n: usize| -> Result<Vec<f64>> {
        let v: Vec<f64> = values.by_ref().take(n).collect();
        if v.len() != n {
            return Err(IoError::Format("payload too short".into()));
        }
        Ok(v)
    };
    let mut tuples = Vec::with_capacity(header.count);
    for _ in 0..header.count {
        let o_ctxt = Tensor::from_vec(header.obs_shape.clone(), take(obs_len)?)?;
        let phi_ctxt = P::decode(&take(P::CODE_LEN)?);
        let o_trgt = Tensor::from_vec(header.obs_shape.clone(), take(obs_len)?)?;
        let phi_trgt = P::decode(&take(P::CODE_LEN)?);
        let novel = if header.has_novel {
            let o = Tensor::from_vec(header.obs_shape.clone(), take(obs_len)?)?;
            let p = P::decode(&take(P::CODE_LEN)?);
            Some((o, p))
        } else {
            None
        };
        tuples.push(TrainingTuple {
            o_ctxt,
            phi_ctxt,
            o_trgt,
            phi_trgt,
            novel,
        });
    }
    Ok((header, tuples))
}
