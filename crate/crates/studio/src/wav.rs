//! Mono WAV input and output.
//!
//! Reads 16- and 24-bit integer PCM and 32-bit float, averaging channels.
//! Integer samples are scaled by `2^(bits-1)`, so full scale maps to
//! `[-1, 32767/32768]` for 16-bit files. Writes 32-bit float without
//! clipping.

use std::io::{Cursor, Read, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{IoContext, Result, StudioError};

fn wav_error(path: &Path, e: hound::Error) -> StudioError {
    match e {
        hound::Error::IoError(io) => StudioError::io(path, io),
        other => StudioError::format(format!("{}: {other}", path.display())),
    }
}

pub fn load_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let file = std::fs::File::open(path).at(path)?;
    read_wav(std::io::BufReader::new(file)).map_err(|e| wav_error(path, e))
}

pub fn decode_wav(bytes: &[u8]) -> Result<(Vec<f64>, u32)> {
    read_wav(Cursor::new(bytes)).map_err(|e| wav_error(Path::new("<memory>"), e))
}

fn read_wav<R: Read>(reader: R) -> hound::Result<(Vec<f64>, u32)> {
    let mut reader = WavReader::new(reader)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, bits @ (16 | 24)) => {
            let scale = (1u32 << (bits - 1)) as f64;
            reader.samples::<i32>().map(|s| s.map(|v| v as f64 / scale)).collect::<hound::Result<_>>()?
        }
        (SampleFormat::Float, 32) => reader.samples::<f32>().map(|s| s.map(f64::from)).collect::<hound::Result<_>>()?,
        _ => return Err(hound::Error::Unsupported),
    };
    if channels == 0 {
        return Err(hound::Error::FormatError("no channels"));
    }
    let mono = if channels == 1 {
        interleaved
    } else {
        interleaved.chunks_exact(channels).map(|frame| frame.iter().sum::<f64>() / channels as f64).collect()
    };
    Ok((mono, spec.sample_rate))
}

pub fn save_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let file = std::fs::File::create(path).at(path)?;
    write_wav(std::io::BufWriter::new(file), samples, sample_rate).map_err(|e| wav_error(path, e))
}

/// In-memory float WAV file.
pub fn encode_wav(samples: &[f64], sample_rate: u32) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    write_wav(&mut buf, samples, sample_rate).expect("writing to memory");
    buf.into_inner()
}

fn write_wav<W: Write + Seek>(writer: W, samples: &[f64], sample_rate: u32) -> hound::Result<()> {
    let spec = WavSpec { channels: 1, sample_rate, bits_per_sample: 32, sample_format: SampleFormat::Float };
    let mut w = WavWriter::new(writer, spec)?;
    for &s in samples {
        w.write_sample(s as f32)?;
    }
    w.finalize()
}
