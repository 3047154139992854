use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PCM16_SCALE: f64 = 32768.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleFormat {
    #[default]
    Pcm16,
    Float32,
}

/// Mono audio with samples held as `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    pub sample_rate: u32,
    pub format: SampleFormat,
    pub samples: Vec<f64>,
}

impl Signal {
    pub fn new(sample_rate: u32, format: SampleFormat, samples: Vec<f64>) -> Self {
        Self {
            sample_rate,
            format,
            samples,
        }
    }
}

/// The file is already open when decoding starts, so read failures mean
/// short or corrupt content.
fn read_error(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::Unsupported => Error::UnsupportedWav(format!("{}: unsupported encoding", path.display())),
        other => Error::MalformedWav(format!("{}: {other}", path.display())),
    }
}

fn write_error(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::io(path, e),
        other => Error::invalid("signal", other.to_string()),
    }
}

/// Reads a mono PCM16 or IEEE float32 file. The declared rate is kept as-is.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Signal> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = hound::WavReader::new(BufReader::new(file)).map_err(|e| read_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedWav(format!(
            "{}: {} channels, only mono is supported",
            path.display(),
            spec.channels
        )));
    }
    let (format, samples) = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => {
            let samples = reader
                .into_samples::<i16>()
                .map(|s| s.map(|v| f64::from(v) / PCM16_SCALE))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| read_error(path, e))?;
            (SampleFormat::Pcm16, samples)
        }
        (hound::SampleFormat::Float, 32) => {
            let samples = reader
                .into_samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| read_error(path, e))?;
            (SampleFormat::Float32, samples)
        }
        (fmt, bits) => {
            return Err(Error::UnsupportedWav(format!(
                "{}: {bits}-bit {fmt:?} samples",
                path.display()
            )))
        }
    };
    Ok(Signal {
        sample_rate: spec.sample_rate,
        format,
        samples,
    })
}

/// Converts one sample to PCM16 with rounding and saturation.
pub fn to_pcm16(x: f64) -> i16 {
    (x * PCM16_SCALE).round().clamp(-PCM16_SCALE, PCM16_SCALE - 1.0) as i16
}

pub fn write_wav(path: impl AsRef<Path>, signal: &Signal) -> Result<()> {
    let path = path.as_ref();
    if signal.samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("samples", "signal contains non-finite values"));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: match signal.format {
            SampleFormat::Pcm16 => 16,
            SampleFormat::Float32 => 32,
        },
        sample_format: match signal.format {
            SampleFormat::Pcm16 => hound::SampleFormat::Int,
            SampleFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = hound::WavWriter::new(BufWriter::new(file), spec).map_err(|e| write_error(path, e))?;
    for &x in &signal.samples {
        match signal.format {
            SampleFormat::Pcm16 => writer.write_sample(to_pcm16(x)),
            SampleFormat::Float32 => writer.write_sample(x as f32),
        }
        .map_err(|e| write_error(path, e))?;
    }
    writer.finalize().map_err(|e| write_error(path, e))
}
