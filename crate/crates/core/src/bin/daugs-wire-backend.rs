//! Minimal segmenter backend speaking the wire protocol on stdin/stdout.
//!
//! ```text
//! daugs-wire-backend uniform [options]
//! daugs-wire-backend curve <prototypes.csv> <temperature> [reference_level] [options]
//!
//! options:
//!   --reply-version <v>     answer the handshake with protocol version v
//!   --abort-after <n>       abort the process on request n (0-based)
//!   --exit-after <n> <code> exit with <code> on request n
//!   --delay-ms <ms>         sleep before every response
//! ```

use std::io;
use std::path::Path;
use std::process::ExitCode;
use std::time::Duration;

use daugs_core::segmenters::wire::{serve, PROTOCOL_VERSION};
use daugs_core::segmenters::{curve_match_window, CurveMatchParams};

enum Mode {
    Uniform,
    Curve(CurveMatchParams),
}

struct Opts {
    mode: Mode,
    version: u32,
    abort_after: Option<usize>,
    exit_after: Option<(usize, u8)>,
    delay: Duration,
}

fn parse() -> Result<Opts, String> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let num = |s: Option<&String>| -> Result<f64, String> {
        s.ok_or("missing value")?.parse::<f64>().map_err(|e| e.to_string())
    };
    let mut it = args.iter().peekable();
    let mode = match it.next().map(String::as_str) {
        Some("uniform") => Mode::Uniform,
        Some("curve") => {
            let path = it.next().ok_or("curve mode needs a prototype file")?;
            let prototypes = CurveMatchParams::read_prototypes(Path::new(path)).map_err(|e| e.to_string())?;
            let temperature = num(it.next())?;
            let reference_level = match it.peek() {
                Some(s) if !s.starts_with("--") => Some(num(it.next())?),
                _ => None,
            };
            let p = CurveMatchParams { prototypes, temperature, reference_level };
            p.validate().map_err(|e| e.to_string())?;
            Mode::Curve(p)
        }
        other => return Err(format!("unknown mode {other:?}")),
    };
    let mut o = Opts { mode, version: PROTOCOL_VERSION, abort_after: None, exit_after: None, delay: Duration::ZERO };
    while let Some(flag) = it.next() {
        match flag.as_str() {
            "--reply-version" => o.version = num(it.next())? as u32,
            "--abort-after" => o.abort_after = Some(num(it.next())? as usize),
            "--exit-after" => o.exit_after = Some((num(it.next())? as usize, num(it.next())? as u8)),
            "--delay-ms" => o.delay = Duration::from_millis(num(it.next())? as u64),
            f => return Err(format!("unknown option {f}")),
        }
    }
    Ok(o)
}

fn main() -> ExitCode {
    let opts = match parse() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("daugs-wire-backend: {e}");
            return ExitCode::from(1);
        }
    };
    let mut served = 0usize;
    let r = serve(io::stdin().lock(), io::stdout().lock(), opts.version, |volume, patch, n_frames| {
        if opts.abort_after == Some(served) {
            std::process::abort();
        }
        if let Some((n, code)) = opts.exit_after {
            if n == served {
                std::process::exit(code as i32);
            }
        }
        served += 1;
        if !opts.delay.is_zero() {
            std::thread::sleep(opts.delay);
        }
        Ok(match &opts.mode {
            Mode::Uniform => vec![[1.0 / 3.0; 3]; patch * patch],
            Mode::Curve(p) => curve_match_window(volume, patch, n_frames, p),
        })
    });
    match r {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("daugs-wire-backend: {e}");
            ExitCode::from(3)
        }
    }
}
