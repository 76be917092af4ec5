//! Socket transport for the frame protocol: `send` replays a waveform file,
//! `serve` decodes one connection and runs the pipeline on it.

use std::io::{ErrorKind, Read};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::mpsc;
use std::thread;

use crate::app::AppError;
use crate::config::AppConfig;
use crate::ingest::{
    encode_stream, inject_checksum_corruption, write_paced, FrameDecoder, IngestStats, ParseOutcome,
};
use crate::pipeline::{Pipeline, RunReport};
use crate::synth::read_waveform_file;

const READ_CHUNK: usize = 4096;
const QUEUE_DEPTH: usize = 64;

/// Decodes `stream` on a reader thread and feeds samples, in arrival order,
/// through the pipeline. Ends cleanly when the peer closes or resets the
/// connection. Samples whose timestamp does not advance are dropped and
/// counted.
pub fn serve_stream<R>(stream: R, config: &AppConfig) -> Result<RunReport, AppError>
where
    R: Read + Send + 'static,
{
    let pipeline_config = config.pipeline_config()?;
    let alarm_time_ms = config
        .alarm_time_ms
        .unwrap_or(config.scenario.alarm_time_ms);
    let mut pipeline = Pipeline::new(&pipeline_config, alarm_time_ms)
        .map_err(|e| AppError::Config(e.to_string()))?;

    let (tx, rx) = mpsc::sync_channel::<Vec<ParseOutcome>>(QUEUE_DEPTH);
    let reader = thread::spawn(move || {
        let mut stream = stream;
        let mut decoder = FrameDecoder::new();
        let mut buf = [0u8; READ_CHUNK];
        loop {
            match stream.read(&mut buf) {
                Ok(0) => break,
                Ok(n) => {
                    if tx.send(decoder.feed(&buf[..n])).is_err() {
                        return;
                    }
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) => {
                    log::warn!("connection ended: {e}");
                    break;
                }
            }
        }
        let _ = tx.send(decoder.finish());
    });

    let mut stats = IngestStats::default();
    let mut dropped = 0u64;
    let mut last_t: Option<u64> = None;
    for batch in rx {
        for outcome in batch {
            stats.record(&outcome);
            match outcome {
                ParseOutcome::Sample { sample, .. } => {
                    if last_t.is_some_and(|t| sample.t_ms <= t) {
                        dropped += 1;
                        continue;
                    }
                    last_t = Some(sample.t_ms);
                    pipeline
                        .push(sample)
                        .map_err(|e| AppError::Run(e.to_string()))?;
                }
                ParseOutcome::Gap {
                    expected_seq,
                    got_seq,
                } => {
                    log::debug!("sequence gap: expected {expected_seq}, got {got_seq}");
                }
                ParseOutcome::CorruptFrame { offset } => {
                    log::debug!("corrupt frame at byte {offset}")
                }
                ParseOutcome::Resync { skipped } => {
                    log::debug!("resynchronised after {skipped} bytes")
                }
            }
        }
    }
    reader
        .join()
        .map_err(|_| AppError::Protocol("reader thread panicked".into()))?;

    let mut report = pipeline.finish(config.expected_final_phase);
    report.summary.ingest = Some(stats);
    report.summary.dropped_samples = Some(dropped);
    Ok(report)
}

/// Accepts a single connection on `listener` and serves it.
pub fn serve_listener(listener: TcpListener, config: &AppConfig) -> Result<RunReport, AppError> {
    let (stream, peer) = listener.accept()?;
    log::info!("accepted connection from {peer}");
    serve_stream(stream, config)
}

pub fn cmd_serve(
    config: &AppConfig,
    port: u16,
    on_ready: impl FnOnce(SocketAddr),
) -> Result<RunReport, AppError> {
    let listener = TcpListener::bind((config.net.host.as_str(), port))?;
    on_ready(listener.local_addr()?);
    serve_listener(listener, config)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SendSummary {
    pub frames: usize,
    pub bytes: usize,
    /// Indices (and so sequence numbers modulo 256) of frames sent with a
    /// broken checksum.
    pub corrupted: Vec<usize>,
}

pub fn cmd_send(
    addr: &str,
    file: &Path,
    speed: f64,
    corrupt: usize,
    seed: u64,
) -> Result<SendSummary, AppError> {
    if !(speed >= 0.0 && speed.is_finite()) {
        return Err(AppError::Config(format!(
            "speed must be a non-negative number, got {speed}"
        )));
    }
    let samples =
        read_waveform_file(file).map_err(|e| AppError::Io(format!("{}: {e}", file.display())))?;
    let mut bytes = encode_stream(&samples).map_err(|e| AppError::Protocol(e.to_string()))?;
    let corrupted = inject_checksum_corruption(&mut bytes, corrupt, seed);
    let mut stream = TcpStream::connect(addr)?;
    write_paced(&samples, &bytes, &mut stream, speed).map_err(|e| AppError::Io(e.to_string()))?;
    Ok(SendSummary {
        frames: samples.len(),
        bytes: bytes.len(),
        corrupted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Sample;
    use crate::synth::write_waveform_file;

    fn waveform(n: u64) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                t_ms: i * 10,
                value: ((i * 37) % 1024) as u16,
            })
            .collect()
    }

    #[test]
    fn loopback_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        write_waveform_file(&waveform(1000), &path).unwrap();

        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let server = thread::spawn(move || serve_listener(listener, &AppConfig::default()));
        let sent = cmd_send(&addr, &path, 0.0, 0, 0).unwrap();
        assert_eq!(sent.bytes, 9000);
        let report = server.join().unwrap().unwrap();
        let ingest = report.summary.ingest.unwrap();
        assert_eq!(ingest.samples, 1000);
        assert_eq!(ingest.gaps, 0);
        assert_eq!(report.summary.samples, 1000);
    }

    #[test]
    fn injected_corruption_is_counted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        write_waveform_file(&waveform(2000), &path).unwrap();

        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let server = thread::spawn(move || serve_listener(listener, &AppConfig::default()));
        let sent = cmd_send(&addr, &path, 0.0, 25, 7).unwrap();
        assert_eq!(sent.corrupted.len(), 25);
        let report = server.join().unwrap().unwrap();
        let ingest = report.summary.ingest.unwrap();
        assert_eq!(ingest.corrupt_frames, 25);
        assert_eq!(ingest.gaps, 25);
        assert_eq!(ingest.missing_frames, 25);
        assert_eq!(ingest.samples, 2000 - 25);
    }

    #[test]
    fn truncated_stream_ends_cleanly() {
        let bytes = encode_stream(&waveform(100)).unwrap();
        let cut = bytes[..9 * 40 + 4].to_vec();
        let report = serve_stream(std::io::Cursor::new(cut), &AppConfig::default()).unwrap();
        let ingest = report.summary.ingest.unwrap();
        assert_eq!(ingest.samples, 40);
        assert_eq!(ingest.skipped_bytes, 4);
    }

    #[test]
    fn bad_speed_is_config_error() {
        let err = cmd_send("127.0.0.1:1", Path::new("x.csv"), -1.0, 0, 0).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
