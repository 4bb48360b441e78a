//! Step semantics.
//!
//! Decode and MapCompute stand in for codecs and feature extractors: they emit
//! `size_ratio` times the input bytes, built from repeated passes over the
//! input through a fixed mixing function. Zero input bytes stay zero, so
//! compressible inputs give compressible outputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::exec::cpu;
use crate::model::{DType, ModelError, StepKind, StepSpec, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("step `{step}`: {reason}")]
    ShapeMismatch { step: String, reason: String },
    #[error("step `{step}` expects {expected} input, got {found}")]
    DTypeMismatch {
        step: String,
        expected: DType,
        found: DType,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// RNG for one (sample, step) pair, independent of worker assignment.
pub fn step_rng(seed: u64, epoch: u32, sample: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((epoch as u64) << 48) ^ ((step as u64) << 40));
    rng.set_stream(sample);
    rng
}

/// CPU nanoseconds charged for running `step` on `input_bytes`.
pub fn step_cost_ns(step: &StepSpec, input_bytes: usize) -> f64 {
    step.compute_cost * input_bytes as f64
}

/// Runs `step` on the host, burning its compute cost on the calling thread.
pub fn execute_step(step: &StepSpec, input: Tensor, rng: &mut impl Rng) -> Result<Tensor, StepError> {
    let ns = step_cost_ns(step, input.byte_len());
    let out = transform(step, input, rng)?;
    cpu::burn(ns);
    Ok(out)
}

/// The data transformation of `step` without any compute charge.
pub fn transform(step: &StepSpec, input: Tensor, rng: &mut impl Rng) -> Result<Tensor, StepError> {
    match step.kind {
        StepKind::Ingest => Ok(input),
        StepKind::Decode | StepKind::MapCompute => Ok(synthesize(step, &input)?),
        StepKind::Resize => resize(step, input),
        StepKind::Widen => widen(step, input),
        StepKind::Greyscale => greyscale(step, input),
        StepKind::RandomCrop => random_crop(step, input, rng),
        StepKind::Aggregate => aggregate(step, input),
    }
}

fn shape_err(step: &StepSpec, reason: impl Into<String>) -> StepError {
    StepError::ShapeMismatch {
        step: step.name.clone(),
        reason: reason.into(),
    }
}

#[inline]
fn mix(b: u8, pass: u8) -> u8 {
    let m = (b.wrapping_mul(0x9D) ^ pass.wrapping_mul(0x3B)) | 1;
    m & 0u8.wrapping_sub((b != 0) as u8)
}

/// Maps `out_len` output positions evenly onto `in_len` input positions.
struct Stretch {
    src: usize,
    acc: usize,
    q: usize,
    r: usize,
    n: usize,
}

impl Stretch {
    fn new(in_len: usize, out_len: usize) -> Stretch {
        let n = out_len.max(1);
        Stretch {
            src: 0,
            acc: 0,
            q: in_len / n,
            r: in_len % n,
            n,
        }
    }

    #[inline]
    fn next(&mut self) -> usize {
        let at = self.src;
        self.src += self.q;
        self.acc += self.r;
        if self.acc >= self.n {
            self.acc -= self.n;
            self.src += 1;
        }
        at
    }
}

fn synthesize(step: &StepSpec, input: &Tensor) -> Result<Tensor, ModelError> {
    let dtype = step.params.out_dtype.unwrap_or(input.dtype());
    let w = dtype.width();
    let target = (input.byte_len() as f64 * step.size_ratio).round() as usize;
    let mut elems = target / w;
    let shape = match step.params.channels {
        Some(c) if c > 0 => {
            let c = c as usize;
            elems = elems / c * c;
            vec![(elems / c) as u64, c as u64]
        }
        _ => vec![elems as u64],
    };
    let src = input.data();
    let mut mixed = vec![0u8; elems];
    if !src.is_empty() {
        for (pass, chunk) in mixed.chunks_mut(src.len()).enumerate() {
            for (o, &b) in chunk.iter_mut().zip(src) {
                *o = mix(b, pass as u8);
            }
        }
    }
    let data = match dtype {
        DType::U8 => mixed,
        DType::I16 => widen_each(&mixed, |m| ((m as i16 - 128) * 200).to_le_bytes()),
        DType::I32 => widen_each(&mixed, |m| ((m as i32 - 128) << 20).to_le_bytes()),
        DType::F32 => widen_each(&mixed, |m| ((m as f32 - 127.5) / 127.5).to_le_bytes()),
        DType::F64 => widen_each(&mixed, |m| ((m as f64 - 127.5) / 127.5).to_le_bytes()),
    };
    Tensor::new(dtype, shape, data)
}

fn widen_each<const N: usize>(bytes: &[u8], f: impl Fn(u8) -> [u8; N]) -> Vec<u8> {
    let mut out = vec![0u8; bytes.len() * N];
    for (o, &b) in out.chunks_exact_mut(N).zip(bytes) {
        o.copy_from_slice(&f(b));
    }
    out
}

fn rows_of(step: &StepSpec, t: &Tensor) -> Result<(usize, usize), StepError> {
    let rows = *t
        .shape()
        .first()
        .ok_or_else(|| shape_err(step, "scalar input has no rows"))? as usize;
    let row_bytes = t.byte_len().checked_div(rows).unwrap_or(0);
    Ok((rows, row_bytes))
}

fn gather<const N: usize>(src: &[u8], out: &mut [u8], rows: impl Iterator<Item = usize>) {
    for (o, r) in out.chunks_exact_mut(N).zip(rows) {
        let row: &[u8; N] = src[r * N..r * N + N].try_into().unwrap();
        o.copy_from_slice(row);
    }
}

fn take_rows(t: &Tensor, rows: impl Iterator<Item = usize>, count: usize, row_bytes: usize) -> Result<Tensor, ModelError> {
    let mut data = vec![0u8; count * row_bytes];
    let src = t.data();
    match row_bytes {
        0 => {}
        3 => gather::<3>(src, &mut data, rows),
        4 => gather::<4>(src, &mut data, rows),
        12 => gather::<12>(src, &mut data, rows),
        n => {
            for (o, r) in data.chunks_exact_mut(n).zip(rows) {
                o.copy_from_slice(&src[r * n..(r + 1) * n]);
            }
        }
    }
    let mut shape = t.shape().to_vec();
    shape[0] = count as u64;
    Tensor::new(t.dtype(), shape, data)
}

/// Nearest-row resampling of the leading dimension by `size_ratio`.
fn resize(step: &StepSpec, t: Tensor) -> Result<Tensor, StepError> {
    let (rows, row_bytes) = rows_of(step, &t)?;
    if rows == 0 {
        return Ok(t);
    }
    let out_rows = ((rows as f64 * step.size_ratio).round() as usize).max(1);
    let mut at = Stretch::new(rows, out_rows);
    Ok(take_rows(&t, (0..out_rows).map(|_| at.next()), out_rows, row_bytes)?)
}

fn widen(step: &StepSpec, t: Tensor) -> Result<Tensor, StepError> {
    if t.dtype() != DType::U8 {
        return Err(StepError::DTypeMismatch {
            step: step.name.clone(),
            expected: DType::U8,
            found: t.dtype(),
        });
    }
    let data = widen_each(t.data(), |v| (v as f32).to_le_bytes());
    Ok(Tensor::new(DType::F32, t.shape().to_vec(), data)?)
}

fn read_f64(dtype: DType, b: &[u8]) -> f64 {
    match dtype {
        DType::U8 => b[0] as f64,
        DType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
        DType::I32 => i32::from_le_bytes(b.try_into().unwrap()) as f64,
        DType::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
        DType::F64 => f64::from_le_bytes(b.try_into().unwrap()),
    }
}

fn write_f64(dtype: DType, v: f64, out: &mut Vec<u8>) {
    match dtype {
        DType::U8 => out.push(v.round().clamp(0.0, 255.0) as u8),
        DType::I16 => out.extend_from_slice(&(v.round() as i16).to_le_bytes()),
        DType::I32 => out.extend_from_slice(&(v.round() as i32).to_le_bytes()),
        DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
        DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
    }
}

/// Mean over a trailing channel dimension of extent 3, which is dropped.
fn greyscale(step: &StepSpec, t: Tensor) -> Result<Tensor, StepError> {
    if t.shape().last() != Some(&3) {
        return Err(shape_err(
            step,
            format!("needs a trailing dimension of 3, got shape {:?}", t.shape()),
        ));
    }
    let w = t.dtype().width();
    let mut data = Vec::with_capacity(t.byte_len() / 3);
    if t.dtype() == DType::U8 {
        for px in t.data().chunks_exact(3) {
            data.push(((px[0] as u16 + px[1] as u16 + px[2] as u16 + 1) / 3) as u8);
        }
    } else {
        for px in t.data().chunks_exact(3 * w) {
            let sum: f64 = px.chunks_exact(w).map(|e| read_f64(t.dtype(), e)).sum();
            write_f64(t.dtype(), sum / 3.0, &mut data);
        }
    }
    let mut shape = t.shape()[..t.rank() - 1].to_vec();
    if shape.is_empty() {
        shape.push(1);
    }
    Ok(Tensor::new(t.dtype(), shape, data)?)
}

/// Contiguous run of leading-dimension rows at a random offset.
fn random_crop(step: &StepSpec, t: Tensor, rng: &mut impl Rng) -> Result<Tensor, StepError> {
    let (rows, row_bytes) = rows_of(step, &t)?;
    if rows == 0 {
        return Ok(t);
    }
    let fraction = step.params.crop_fraction.unwrap_or(step.size_ratio).clamp(0.0, 1.0);
    let keep = ((rows as f64 * fraction).round() as usize).clamp(1, rows);
    let start = rng.gen_range(0..=rows - keep);
    let (dtype, mut shape) = (t.dtype(), t.shape().to_vec());
    shape[0] = keep as u64;
    let mut data = t.into_data();
    data.copy_within(start * row_bytes..(start + keep) * row_bytes, 0);
    data.truncate(keep * row_bytes);
    Ok(Tensor::new(dtype, shape, data)?)
}

/// Root mean square over non-overlapping windows of `period` elements; the
/// last window may be short.
fn aggregate(step: &StepSpec, t: Tensor) -> Result<Tensor, StepError> {
    let period = step.params.period.unwrap_or(1).max(1) as usize;
    let w = t.dtype().width();
    let mut data = Vec::new();
    for window in t.data().chunks(period * w) {
        let n = window.len() / w;
        let sq: f64 = window
            .chunks_exact(w)
            .map(|e| {
                let v = read_f64(t.dtype(), e);
                v * v
            })
            .sum();
        data.extend_from_slice(&(sq / n as f64).sqrt().to_le_bytes());
    }
    let n = (data.len() / 8) as u64;
    Ok(Tensor::new(DType::F64, vec![n], data)?)
}
