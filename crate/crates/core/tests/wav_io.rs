use std::fs;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssnaps::wav::{read_wav, to_pcm16, write_wav, SampleFormat, Signal};
use ssnaps::Error;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn pcm16_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.wav");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let codes: Vec<i16> = (0..4000).map(|_| rng.gen()).collect();
    let samples: Vec<f64> = codes.iter().map(|&c| f64::from(c) / 32768.0).collect();
    write_wav(&path, &Signal::new(16_000, SampleFormat::Pcm16, samples.clone())).unwrap();
    let back = read_wav(&path).unwrap();
    assert_eq!(back.sample_rate, 16_000);
    assert_eq!(back.format, SampleFormat::Pcm16);
    assert_eq!(back.samples, samples);
    assert!(back.samples.iter().zip(&codes).all(|(s, &c)| to_pcm16(*s) == c));
}

#[test]
fn float32_round_trip_keeps_single_precision() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.wav");
    let samples: Vec<f64> = (0..500).map(|n| (n as f64 * 0.37).sin() * 1.7).collect();
    write_wav(&path, &Signal::new(8_000, SampleFormat::Float32, samples.clone())).unwrap();
    let back = read_wav(&path).unwrap();
    assert_eq!(back.sample_rate, 8_000);
    for (a, b) in back.samples.iter().zip(&samples) {
        assert_eq!(*a, f64::from(*b as f32));
    }
}

#[test]
fn external_pcm16_fixture() {
    let s = read_wav(fixture("pcm16_ref.wav")).unwrap();
    let head: Vec<i16> = s.samples[..8].iter().map(|&v| to_pcm16(v)).collect();
    assert_eq!(head, [0, 1, -1, 32767, -32768, 1000, -1000, 12345]);
    assert_eq!(s.samples.len(), 168);
    assert_eq!(s.sample_rate, 16_000);
}

#[test]
fn external_float32_fixture() {
    let s = read_wav(fixture("float32_ref.wav")).unwrap();
    assert_eq!(s.format, SampleFormat::Float32);
    assert_eq!(&s.samples[..8], &[0.0, 0.5, -0.5, 1.0, -1.0, 0.25, -0.125, 0.0625]);
    assert_eq!(s.samples.len(), 64);
}

#[test]
fn rewriting_the_fixture_reproduces_its_bytes() {
    let original = fs::read(fixture("pcm16_ref.wav")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("copy.wav");
    write_wav(&path, &read_wav(fixture("pcm16_ref.wav")).unwrap()).unwrap();
    assert_eq!(fs::read(&path).unwrap(), original);
}

#[test]
fn multichannel_is_unsupported() {
    assert!(matches!(read_wav(fixture("stereo.wav")), Err(Error::UnsupportedWav(_))));
}

#[test]
fn truncated_and_garbage_files_are_malformed() {
    let dir = tempfile::tempdir().unwrap();
    let bytes = fs::read(fixture("pcm16_ref.wav")).unwrap();
    for (name, data) in [
        ("header.wav", bytes[..20].to_vec()),
        ("empty.wav", Vec::new()),
        ("text.wav", b"definitely not a riff file".to_vec()),
    ] {
        let path = dir.path().join(name);
        fs::write(&path, data).unwrap();
        let err = read_wav(&path).unwrap_err();
        assert!(matches!(err, Error::MalformedWav(_)), "{name}: {err}");
    }
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(read_wav(fixture("absent.wav")), Err(Error::Io { .. })));
}

#[test]
fn non_finite_samples_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let signal = Signal::new(16_000, SampleFormat::Float32, vec![0.0, f64::NAN]);
    assert!(write_wav(dir.path().join("nan.wav"), &signal).is_err());
}
