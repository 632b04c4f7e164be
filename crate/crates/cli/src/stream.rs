//! `livemask stream`: chunked filtering of WAV files or raw f32 streams.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use voiceshield::audio::{load_wav, save_wav, WavEncoding, Waveform};
use voiceshield::livemask::{load_profile, StreamState};
use voiceshield::Error;

use crate::{CliError, StreamArgs};

fn io_err(what: &str, e: io::Error) -> Error {
    Error::io(what, e)
}

/// Fills `buf` as far as the reader allows; returns the bytes read.
fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

pub fn run(a: StreamArgs) -> Result<(), CliError> {
    if a.chunk == 0 {
        return Err(CliError::Usage("--chunk must be at least 1".into()));
    }
    let profile = load_profile(&a.profile)?;
    let raw_in = a.input == "-";
    let wave_in = if raw_in { None } else { Some(load_wav(Path::new(&a.input))?) };
    let rate = match &wave_in {
        Some(w) => w.sample_rate(),
        None => a.rate.unwrap_or(profile.sample_rate),
    };
    let mut state = StreamState::with_rate(&profile, rate)?;
    let mut chunk = vec![0.0f64; a.chunk];

    let mut out_raw = (a.out == "-").then(|| BufWriter::new(io::stdout().lock()));
    let mut out_wave: Vec<f64> = Vec::new();
    let mut emit = |samples: &[f64]| -> Result<(), Error> {
        match out_raw.as_mut() {
            Some(w) => {
                for v in samples {
                    w.write_all(&(*v as f32).to_le_bytes()).map_err(|e| io_err("<stdout>", e))?;
                }
                Ok(())
            }
            None => {
                out_wave.extend_from_slice(samples);
                Ok(())
            }
        }
    };

    match wave_in {
        Some(w) => {
            for block in w.samples().chunks(a.chunk) {
                let out = &mut chunk[..block.len()];
                out.copy_from_slice(block);
                state.process_in_place(out);
                emit(out)?;
            }
        }
        None => {
            let mut reader = BufReader::new(io::stdin().lock());
            let mut bytes = vec![0u8; 4 * a.chunk];
            loop {
                let n = read_full(&mut reader, &mut bytes).map_err(|e| io_err("<stdin>", e))?;
                let m = n / 4;
                for (v, b) in chunk.iter_mut().zip(bytes[..4 * m].chunks_exact(4)) {
                    *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
                }
                if chunk[..m].iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("input stream".into()).into());
                }
                state.process_in_place(&mut chunk[..m]);
                emit(&chunk[..m])?;
                if n < bytes.len() {
                    if n % 4 != 0 {
                        log::warn!("dropping {} trailing bytes of a partial sample", n % 4);
                    }
                    break;
                }
            }
        }
    }
    drop(emit);
    match out_raw {
        Some(mut w) => w.flush().map_err(|e| io_err("<stdout>", e))?,
        None => save_wav(&a.out, &Waveform::new(out_wave, rate)?, WavEncoding::Float32)?,
    }
    log::info!("processed {} samples", state.processed());
    Ok(())
}
