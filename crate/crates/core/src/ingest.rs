//! Framed byte-stream transport for samples.
//!
//! ```text
//! +------+-----+----------------+-------------+----------+
//! | 0xAA | seq | t_ms (u32, BE) | value (u16) | checksum |
//! +------+-----+----------------+-------------+----------+
//!    1      1          4              2            1
//! ```
//!
//! The checksum is the XOR of bytes 1..8. Payload bytes may equal the sync
//! byte; there is no stuffing, the checksum decides.

use std::io::Write;
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{Sample, SignalError, StreamGuard, ADC_MAX};
use crate::synth::{read_waveform_file, WaveformIoError};

pub const SYNC: u8 = 0xAA;
pub const FRAME_LEN: usize = 9;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("value {0} exceeds {ADC_MAX}")]
    ValueOutOfRange(u16),
    #[error("timestamp {0} ms does not fit in 32 bits")]
    TimestampOverflow(u64),
    #[error(transparent)]
    Waveform(#[from] WaveformIoError),
    #[error(transparent)]
    Stream(#[from] SignalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn checksum(payload: &[u8]) -> u8 {
    payload.iter().fold(0, |acc, b| acc ^ b)
}

pub fn encode_frame(seq: u8, sample: &Sample) -> Result<[u8; FRAME_LEN], ProtocolError> {
    if sample.value > ADC_MAX {
        return Err(ProtocolError::ValueOutOfRange(sample.value));
    }
    let t =
        u32::try_from(sample.t_ms).map_err(|_| ProtocolError::TimestampOverflow(sample.t_ms))?;
    let mut frame = [0u8; FRAME_LEN];
    frame[0] = SYNC;
    frame[1] = seq;
    frame[2..6].copy_from_slice(&t.to_be_bytes());
    frame[6..8].copy_from_slice(&sample.value.to_be_bytes());
    frame[8] = checksum(&frame[1..8]);
    Ok(frame)
}

/// Parses one candidate frame. `None` when the sync byte, checksum or value
/// range is wrong.
fn decode_frame(bytes: &[u8]) -> Option<(u8, Sample)> {
    if bytes.len() < FRAME_LEN || bytes[0] != SYNC || checksum(&bytes[1..8]) != bytes[8] {
        return None;
    }
    let t_ms = u32::from_be_bytes([bytes[2], bytes[3], bytes[4], bytes[5]]) as u64;
    let value = u16::from_be_bytes([bytes[6], bytes[7]]);
    (value <= ADC_MAX).then_some((bytes[1], Sample { t_ms, value }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseOutcome {
    Sample {
        seq: u8,
        sample: Sample,
    },
    Gap {
        expected_seq: u8,
        got_seq: u8,
    },
    /// A frame that should have started at `offset` failed validation.
    CorruptFrame {
        offset: u64,
    },
    /// Bytes dropped while hunting for the next valid frame.
    Resync {
        skipped: usize,
    },
}

/// Incremental decoder, one per byte stream.
///
/// While in sync, the decoder expects a frame at the current position; if
/// the bytes there are a sync byte but not a valid frame it reports
/// `CorruptFrame`. Either way it then drops bytes until a valid frame turns
/// up and reports how many it dropped. Candidates that fail while hunting are
/// not reported individually. Partial frames stay buffered between calls.
#[derive(Debug, Clone)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    /// Absolute stream offset of `buf[0]`.
    offset: u64,
    synced: bool,
    skipped: usize,
    next_seq: Option<u8>,
}

impl Default for FrameDecoder {
    fn default() -> Self {
        Self::new()
    }
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self {
            buf: Vec::new(),
            offset: 0,
            synced: true,
            skipped: 0,
            next_seq: None,
        }
    }

    /// Bytes held back waiting for the rest of a frame.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }

    pub fn feed(&mut self, bytes: &[u8]) -> Vec<ParseOutcome> {
        self.buf.extend_from_slice(bytes);
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < self.buf.len() {
            if self.buf[pos] != SYNC {
                self.synced = false;
                self.skipped += 1;
                pos += 1;
                continue;
            }
            if self.buf.len() - pos < FRAME_LEN {
                break;
            }
            match decode_frame(&self.buf[pos..pos + FRAME_LEN]) {
                Some((seq, sample)) => {
                    if self.skipped > 0 {
                        out.push(ParseOutcome::Resync {
                            skipped: self.skipped,
                        });
                        self.skipped = 0;
                    }
                    out.push(ParseOutcome::Sample { seq, sample });
                    if let Some(expected_seq) = self.next_seq {
                        if seq != expected_seq {
                            out.push(ParseOutcome::Gap {
                                expected_seq,
                                got_seq: seq,
                            });
                        }
                    }
                    self.next_seq = Some(seq.wrapping_add(1));
                    self.synced = true;
                    pos += FRAME_LEN;
                }
                None => {
                    if self.synced {
                        out.push(ParseOutcome::CorruptFrame {
                            offset: self.offset + pos as u64,
                        });
                        self.synced = false;
                    }
                    self.skipped += 1;
                    pos += 1;
                }
            }
        }
        if self.skipped > 0 && pos == self.buf.len() {
            out.push(ParseOutcome::Resync {
                skipped: self.skipped,
            });
            self.skipped = 0;
        }
        self.buf.drain(..pos);
        self.offset += pos as u64;
        out
    }

    /// Flushes whatever is still buffered as skipped bytes.
    pub fn finish(&mut self) -> Vec<ParseOutcome> {
        let skipped = self.skipped + self.buf.len();
        self.offset += self.buf.len() as u64;
        self.buf.clear();
        self.skipped = 0;
        if skipped > 0 {
            vec![ParseOutcome::Resync { skipped }]
        } else {
            Vec::new()
        }
    }
}

/// Running totals over decoder outcomes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub samples: u64,
    pub gaps: u64,
    pub missing_frames: u64,
    pub corrupt_frames: u64,
    pub resync_events: u64,
    pub skipped_bytes: u64,
}

impl IngestStats {
    pub fn record(&mut self, outcome: &ParseOutcome) {
        match *outcome {
            ParseOutcome::Sample { .. } => self.samples += 1,
            ParseOutcome::Gap {
                expected_seq,
                got_seq,
            } => {
                self.gaps += 1;
                self.missing_frames += got_seq.wrapping_sub(expected_seq) as u64;
            }
            ParseOutcome::CorruptFrame { .. } => self.corrupt_frames += 1,
            ParseOutcome::Resync { skipped } => {
                self.resync_events += 1;
                self.skipped_bytes += skipped as u64;
            }
        }
    }
}

/// Encodes a validated stream with sequence numbers counting up from 0.
pub fn encode_stream(samples: &[Sample]) -> Result<Vec<u8>, ProtocolError> {
    let mut guard = StreamGuard::new();
    let mut out = Vec::with_capacity(samples.len() * FRAME_LEN);
    for (i, sample) in samples.iter().enumerate() {
        guard.check(sample)?;
        out.extend_from_slice(&encode_frame(i as u8, sample)?);
    }
    Ok(out)
}

/// Streams a waveform file as frames into `sink`.
///
/// With `speed > 0` frames are paced against sample time divided by `speed`;
/// `speed == 0` sends everything immediately. The whole file is validated
/// before the first byte is written.
pub fn replay_file<W: Write>(path: &Path, sink: &mut W, speed: f64) -> Result<u64, ProtocolError> {
    let samples = read_waveform_file(path)?;
    let bytes = encode_stream(&samples)?;
    write_paced(&samples, &bytes, sink, speed)?;
    Ok(samples.len() as u64)
}

/// Flips the checksum byte of `count` frames so each one fails validation.
/// Frames are chosen with a fixed seed from every other frame after the
/// first, so no two corrupted frames are adjacent. Returns the corrupted
/// frame indices in ascending order.
pub fn inject_checksum_corruption(bytes: &mut [u8], count: usize, seed: u64) -> Vec<usize> {
    use rand::SeedableRng;

    let frames = bytes.len() / FRAME_LEN;
    let candidates: Vec<usize> = (1..frames).step_by(2).collect();
    let count = count.min(candidates.len());
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = rand::seq::index::sample(&mut rng, candidates.len(), count)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    chosen.sort_unstable();
    for &frame in &chosen {
        bytes[frame * FRAME_LEN + FRAME_LEN - 1] ^= 0xFF;
    }
    chosen
}

/// Writes pre-encoded frames, pacing them against the samples' timestamps
/// when `speed > 0`.
pub fn write_paced<W: Write>(
    samples: &[Sample],
    bytes: &[u8],
    sink: &mut W,
    speed: f64,
) -> Result<(), ProtocolError> {
    let start = Instant::now();
    let t0 = samples.first().map_or(0, |s| s.t_ms);
    for (sample, frame) in samples.iter().zip(bytes.chunks(FRAME_LEN)) {
        if speed > 0.0 {
            let due = Duration::from_secs_f64((sample.t_ms - t0) as f64 / 1000.0 / speed);
            if let Some(wait) = due.checked_sub(start.elapsed()) {
                thread::sleep(wait);
            }
        }
        sink.write_all(frame)?;
    }
    sink.flush()?;
    Ok(())
}
