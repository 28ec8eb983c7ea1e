//! Capture files: a 16-byte header (`b"TTAG"`, `u32` LE version, `f64` LE
//! sampling frequency in Hz) followed by raw records, each most significant
//! byte first.

use std::io::{BufReader, BufWriter, Read, Write};

use super::StreamError;

pub const CAPTURE_MAGIC: [u8; 4] = *b"TTAG";
pub const CAPTURE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CaptureHeader {
    pub version: u32,
    pub sampling_hz: f64,
}

pub struct CaptureWriter<W: Write> {
    inner: BufWriter<W>,
    records: u64,
}

impl<W: Write> CaptureWriter<W> {
    pub fn new(w: W, sampling_hz: f64) -> Result<Self, StreamError> {
        let mut inner = BufWriter::with_capacity(1 << 16, w);
        inner.write_all(&CAPTURE_MAGIC)?;
        inner.write_all(&CAPTURE_VERSION.to_le_bytes())?;
        inner.write_all(&sampling_hz.to_le_bytes())?;
        Ok(Self { inner, records: 0 })
    }

    pub fn write(&mut self, records: &[u64]) -> Result<(), StreamError> {
        for r in records {
            self.inner.write_all(&r.to_be_bytes())?;
        }
        self.records += records.len() as u64;
        Ok(())
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn finish(mut self) -> Result<W, StreamError> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| StreamError::Io(e.into_error()))
    }
}

pub struct CaptureReader<R: Read> {
    inner: BufReader<R>,
    header: CaptureHeader,
}

impl<R: Read> CaptureReader<R> {
    pub fn new(r: R) -> Result<Self, StreamError> {
        let mut inner = BufReader::with_capacity(1 << 16, r);
        let mut head = [0u8; 16];
        inner
            .read_exact(&mut head)
            .map_err(|_| StreamError::BadCapture("shorter than its header".into()))?;
        if head[..4] != CAPTURE_MAGIC {
            return Err(StreamError::BadCapture("wrong magic".into()));
        }
        let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
        if version != CAPTURE_VERSION {
            return Err(StreamError::BadCapture(format!("unsupported version {version}")));
        }
        let sampling_hz = f64::from_le_bytes(head[8..].try_into().unwrap());
        Ok(Self {
            inner,
            header: CaptureHeader { version, sampling_hz },
        })
    }

    pub fn header(&self) -> CaptureHeader {
        self.header
    }
}

impl<R: Read> Iterator for CaptureReader<R> {
    type Item = Result<u64, StreamError>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut word = [0u8; 8];
        let mut got = 0;
        while got < 8 {
            match self.inner.read(&mut word[got..]) {
                Ok(0) if got == 0 => return None,
                Ok(0) => return Some(Err(StreamError::BadCapture("trailing partial record".into()))),
                Ok(n) => got += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Some(Err(e.into())),
            }
        }
        Some(Ok(u64::from_be_bytes(word)))
    }
}

pub fn write_capture<W: Write>(w: W, sampling_hz: f64, records: &[u64]) -> Result<(), StreamError> {
    let mut cw = CaptureWriter::new(w, sampling_hz)?;
    cw.write(records)?;
    cw.finish()?;
    Ok(())
}

pub fn read_capture<R: Read>(r: R) -> Result<(CaptureHeader, Vec<u64>), StreamError> {
    let reader = CaptureReader::new(r)?;
    let header = reader.header();
    let records = reader.collect::<Result<Vec<_>, _>>()?;
    Ok((header, records))
}
