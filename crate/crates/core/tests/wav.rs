use dynswitch::data::{decode_wav, encode_wav, load_wav, write_wav, Difficulty};
use dynswitch::Error;

fn pcm16(samples: &[i16]) -> Vec<u8> {
    let data: Vec<u8> = samples.iter().flat_map(|s| s.to_le_bytes()).collect();
    let mut b = Vec::new();
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
    b.extend_from_slice(b"WAVEfmt ");
    b.extend_from_slice(&[16, 0, 0, 0, 1, 0, 1, 0]);
    b.extend_from_slice(&8000u32.to_le_bytes());
    b.extend_from_slice(&16000u32.to_le_bytes());
    b.extend_from_slice(&[2, 0, 16, 0]);
    b.extend_from_slice(b"data");
    b.extend_from_slice(&(data.len() as u32).to_le_bytes());
    b.extend_from_slice(&data);
    b
}

#[test]
fn zero_file_gives_two_silent_frames() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("zeros.wav");
    std::fs::write(&path, pcm16(&[0; 128])).unwrap();
    let frames = load_wav(&path, 64).unwrap();
    assert_eq!(frames.len(), 2);
    assert!(frames.iter().all(|f| f.samples == vec![0.0; 64]));
    assert!(frames.iter().all(|f| f.difficulty == Some(Difficulty::Hard)));
    assert!(frames[1].source_id.ends_with("zeros.wav#1"));
}

#[test]
fn trailing_partial_frame_is_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.wav");
    let samples: Vec<i16> = (0..100).map(|i| i * 100).collect();
    std::fs::write(&path, pcm16(&samples)).unwrap();
    let frames = load_wav(&path, 64).unwrap();
    assert_eq!(frames.len(), 1);
    assert_eq!(frames[0].samples[63], 6300.0 / 32768.0);
}

#[test]
fn extreme_codes_scale_exactly() {
    let s = decode_wav(&pcm16(&[i16::MIN, i16::MAX, 0])).unwrap();
    assert_eq!(s, vec![-1.0, 32767.0 / 32768.0, 0.0]);
}

#[test]
fn unknown_chunks_are_skipped() {
    let plain = pcm16(&[5, -5, 7]);
    let mut with_list = plain[..36].to_vec();
    with_list.extend_from_slice(b"LIST");
    with_list.extend_from_slice(&3u32.to_le_bytes());
    with_list.extend_from_slice(&[1, 2, 3, 0]); // odd size plus pad byte
    with_list.extend_from_slice(&plain[36..]);
    assert_eq!(decode_wav(&with_list).unwrap(), decode_wav(&plain).unwrap());
}

#[test]
fn round_trip_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rt.wav");
    let samples: Vec<f64> = (0..64).map(|i| ((i as f64) * 0.3).sin() * 0.8).collect();
    write_wav(&path, &samples, 16_000).unwrap();
    let back = load_wav(&path, 64).unwrap();
    for (a, b) in samples.iter().zip(&back[0].samples) {
        assert!((a - b).abs() <= 0.5 / 32768.0 + 1e-12);
    }
    assert_eq!(encode_wav(&back[0].samples, 16_000), std::fs::read(&path).unwrap());
}

fn field_of(bytes: &[u8]) -> String {
    match decode_wav(bytes) {
        Err(Error::Format { field, .. }) => field,
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn malformed_headers_name_the_field() {
    let good = pcm16(&[1, 2, 3]);
    let mut b = good.clone();
    b[0] = b'X';
    assert_eq!(field_of(&b), "riff.magic");
    let mut b = good.clone();
    b[8..12].copy_from_slice(b"WAVX");
    assert_eq!(field_of(&b), "riff.form");
    let mut b = good.clone();
    b[20] = 3;
    assert_eq!(field_of(&b), "fmt.audio_format");
    let mut b = good.clone();
    b[22] = 2;
    assert_eq!(field_of(&b), "fmt.channels");
    let mut b = good.clone();
    b[34] = 24;
    assert_eq!(field_of(&b), "fmt.bits_per_sample");
    let mut b = good.clone();
    b[16] = 12;
    assert_eq!(field_of(&b[..]), "fmt.size");
    assert_eq!(field_of(&good[..good.len() - 1]), "chunk 'data'.size");
    assert_eq!(field_of(&good[..36]), "data");
    assert_eq!(field_of(&good[..4]), "riff.magic");
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_wav("/definitely/not/here.wav", 64).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err:?}");
}
