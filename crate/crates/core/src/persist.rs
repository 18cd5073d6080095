//! Binary checkpoint, embedding-store and dataset files.
//!
//! All formats are little-endian and start with the magic `HBCT`, a `u32`
//! format version and a `u32` kind tag (1 = checkpoint, 2 = embedding store,
//! 3 = dataset).
//! The byte layouts are listed in the repository README.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::{Dataset, Samples};
use crate::encoder::{EncoderModel, LayerShape};
use crate::error::{HbctError, Result};
use crate::evaluation::{EmbeddingSet, Geometry};
use crate::losses::MlrHead;

pub const MAGIC: [u8; 4] = *b"HBCT";
pub const FORMAT_VERSION: u32 = 1;
const KIND_CHECKPOINT: u32 = 1;
const KIND_EMBEDDINGS: u32 = 2;
const KIND_DATASET: u32 = 3;

// guards against allocating from a corrupt header
const MAX_ELEMENTS: u64 = 1 << 32;

/// An encoder with its classifier and the geometry it was trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: EncoderModel,
    pub head: Option<MlrHead>,
    pub curvature: f64,
    pub zeta: f64,
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f64(w: &mut impl Write, v: f64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_len(w: &mut impl Write, n: usize) -> Result<()> {
    let v =
        u32::try_from(n).map_err(|_| HbctError::Format(format!("{n} does not fit in 32 bits")))?;
    put_u32(w, v)
}

fn get<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => HbctError::Format("file is truncated".into()),
        _ => HbctError::Io(e),
    })?;
    Ok(buf)
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(get(r)?))
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(get(r)?))
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(get(r)?))
}

fn get_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| get_f64(r)).collect()
}

fn check_size(n: u64) -> Result<usize> {
    if n > MAX_ELEMENTS {
        return Err(HbctError::Format(format!("implausible element count {n}")));
    }
    Ok(n as usize)
}

fn read_header(r: &mut impl Read, kind: u32) -> Result<()> {
    if get::<4>(r)? != MAGIC {
        return Err(HbctError::Format("missing HBCT magic".into()));
    }
    let version = get_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(HbctError::Format(format!(
            "unsupported format version {version}"
        )));
    }
    let found = get_u32(r)?;
    if found != kind {
        return Err(HbctError::Format(format!(
            "expected file kind {kind}, found {found}"
        )));
    }
    Ok(())
}

fn write_header(w: &mut impl Write, kind: u32) -> Result<()> {
    w.write_all(&MAGIC)?;
    put_u32(w, FORMAT_VERSION)?;
    put_u32(w, kind)
}

fn expect_eof(r: &mut impl Read) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(HbctError::Format("trailing bytes after payload".into())),
    }
}

pub fn write_checkpoint(w: &mut impl Write, ckpt: &Checkpoint) -> Result<()> {
    let model = &ckpt.model;
    write_header(w, KIND_CHECKPOINT)?;
    put_u32(w, model.generation())?;
    put_len(w, model.input_dim())?;
    put_len(w, model.layers().len())?;
    for layer in model.layers() {
        put_len(w, layer.output)?;
    }
    put_len(w, ckpt.head.as_ref().map_or(0, MlrHead::num_classes))?;
    put_f64(w, ckpt.curvature)?;
    put_f64(w, ckpt.zeta)?;
    for &p in model.params() {
        put_f64(w, p)?;
    }
    if let Some(head) = &ckpt.head {
        if head.dim() != model.output_dim() {
            return Err(HbctError::invalid(
                "head dimension differs from the encoder output",
            ));
        }
        for &v in &head.flat() {
            put_f64(w, v)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint> {
    read_header(r, KIND_CHECKPOINT)?;
    let generation = get_u32(r)?;
    let input_dim = get_u32(r)? as usize;
    let num_layers = check_size(get_u32(r)? as u64)?;
    let mut layers = Vec::with_capacity(num_layers);
    let mut prev = input_dim;
    for _ in 0..num_layers {
        let out = get_u32(r)? as usize;
        layers.push(LayerShape {
            input: prev,
            output: out,
        });
        prev = out;
    }
    let num_classes = get_u32(r)? as usize;
    let curvature = get_f64(r)?;
    let zeta = get_f64(r)?;
    let n_params = check_size(layers.iter().map(|l| l.num_params() as u64).sum())?;
    let params = get_f64s(r, n_params)?;
    let model = EncoderModel::from_parts(layers, params, generation)
        .map_err(|e| HbctError::Format(e.to_string()))?;
    let head = if num_classes == 0 {
        None
    } else {
        let flat = get_f64s(
            r,
            check_size(num_classes as u64 * model.output_dim() as u64)?,
        )?;
        Some(MlrHead::from_flat(&flat, num_classes).map_err(|e| HbctError::Format(e.to_string()))?)
    };
    expect_eof(r)?;
    Ok(Checkpoint {
        model,
        head,
        curvature,
        zeta,
    })
}

pub fn write_embeddings(w: &mut impl Write, set: &EmbeddingSet) -> Result<()> {
    write_header(w, KIND_EMBEDDINGS)?;
    put_u32(w, set.geometry().tag())?;
    put_u64(w, set.len() as u64)?;
    put_len(w, set.dim())?;
    put_f64(w, set.curvature())?;
    put_u32(w, set.generation())?;
    for (row, &label) in set.rows().iter().zip(set.labels()) {
        for &v in row {
            put_f64(w, v)?;
        }
        put_u32(w, label)?;
    }
    Ok(())
}

pub fn read_embeddings(r: &mut impl Read) -> Result<EmbeddingSet> {
    read_header(r, KIND_EMBEDDINGS)?;
    let geometry = Geometry::from_tag(get_u32(r)?)?;
    let count = check_size(get_u64(r)?)?;
    let dim = get_u32(r)? as usize;
    check_size(count as u64 * dim as u64)?;
    let curvature = get_f64(r)?;
    let generation = get_u32(r)?;
    let mut rows = Vec::with_capacity(count.min(1 << 20));
    let mut labels = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        rows.push(get_f64s(r, dim)?);
        labels.push(get_u32(r)?);
    }
    expect_eof(r)?;
    EmbeddingSet::new(geometry, curvature, generation, rows, labels)
        .map_err(|e| HbctError::Format(e.to_string()))
}

pub fn write_dataset(w: &mut impl Write, ds: &Dataset) -> Result<()> {
    write_header(w, KIND_DATASET)?;
    put_len(w, ds.input_dim)?;
    put_len(w, ds.num_classes)?;
    for split in [&ds.train, &ds.query, &ds.gallery] {
        put_u64(w, split.len() as u64)?;
        for i in 0..split.len() {
            if split.features[i].len() != ds.input_dim {
                return Err(HbctError::invalid(
                    "sample length differs from the input dimension",
                ));
            }
            put_u64(w, split.ids[i] as u64)?;
            put_len(w, split.labels[i])?;
            for &v in &split.features[i] {
                put_f64(w, v)?;
            }
        }
    }
    Ok(())
}

pub fn read_dataset(r: &mut impl Read) -> Result<Dataset> {
    read_header(r, KIND_DATASET)?;
    let input_dim = get_u32(r)? as usize;
    let num_classes = get_u32(r)? as usize;
    let read_split = |r: &mut _| -> Result<Samples> {
        let count = check_size(get_u64(r)?)?;
        check_size(count as u64 * input_dim as u64)?;
        let mut s = Samples::default();
        for _ in 0..count {
            s.ids.push(check_size(get_u64(r)?)?);
            let label = get_u32(r)? as usize;
            if label >= num_classes {
                return Err(HbctError::Format(format!(
                    "label {label} out of range for {num_classes} classes"
                )));
            }
            s.labels.push(label);
            s.features.push(get_f64s(r, input_dim)?);
        }
        Ok(s)
    };
    let train = read_split(r)?;
    let query = read_split(r)?;
    let gallery = read_split(r)?;
    expect_eof(r)?;
    Ok(Dataset {
        num_classes,
        input_dim,
        train,
        query,
        gallery,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, ckpt)?;
    Ok(w.flush()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

pub fn save_embeddings(path: &Path, set: &EmbeddingSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_embeddings(&mut w, set)?;
    Ok(w.flush()?)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingSet> {
    read_embeddings(&mut BufReader::new(File::open(path)?))
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(&mut w, ds)?;
    Ok(w.flush()?)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(&mut BufReader::new(File::open(path)?))
}
