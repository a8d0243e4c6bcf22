//! Log to stderr and a per-command file.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use log::LevelFilter;

struct Tee {
    file: File,
}

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        io::stderr().write_all(buf)?;
        self.file.write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        io::stderr().flush()?;
        self.file.flush()
    }
}

/// `RUST_LOG` wins over the verbosity count when set.
pub fn init(path: &Path, verbose: u8) -> anyhow::Result<()> {
    let file =
        File::create(path).map_err(|e| anyhow::anyhow!("creating log file {}: {e}", path.display()))?;
    let level = match verbose {
        0 => LevelFilter::Info,
        1 => LevelFilter::Debug,
        _ => LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp_secs()
        .target(env_logger::Target::Pipe(Box::new(Tee { file })))
        .try_init()?;
    Ok(())
}
