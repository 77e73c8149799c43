//! Binary sequence files.
//!
//! Every file starts with a 20-byte little-endian header
//!
//! ```text
//!   0  magic           4 bytes ("PMOT", "PIMU", "PVEL", "PCON", "PRAW")
//!   4  format_version  u32
//!   8  fps             u32
//!  12  num_joints      u32
//!  16  width           u32   values per frame
//! ```
//!
//! followed by frames of `width` values, `f64` for motion files and `f32`
//! for everything else. A trailing partial frame is reported, not fatal.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::estimator::IMU_DIM;

pub const SEQUENCE_FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;
pub const DEFAULT_FPS: u32 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqKind {
    /// Configurations `q`, `3 + 3J` values.
    Motion,
    /// Network inputs `x`, 72 values.
    Imu,
    /// Root-frame joint velocities, `3J` values.
    Velocity,
    /// Foot contact labels, 2 values.
    Contact,
    /// Uncalibrated samples, 72 values.
    Raw,
}

impl SeqKind {
    pub const ALL: [SeqKind; 5] = [SeqKind::Motion, SeqKind::Imu, SeqKind::Velocity, SeqKind::Contact, SeqKind::Raw];

    pub fn magic(self) -> [u8; 4] {
        *match self {
            SeqKind::Motion => b"PMOT",
            SeqKind::Imu => b"PIMU",
            SeqKind::Velocity => b"PVEL",
            SeqKind::Contact => b"PCON",
            SeqKind::Raw => b"PRAW",
        }
    }

    pub fn from_magic(m: &[u8]) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.magic() == m)
    }

    pub fn value_size(self) -> usize {
        match self {
            SeqKind::Motion => 8,
            _ => 4,
        }
    }

    pub fn width(self, num_joints: usize) -> usize {
        match self {
            SeqKind::Motion => 3 + 3 * num_joints,
            SeqKind::Imu | SeqKind::Raw => IMU_DIM,
            SeqKind::Velocity => 3 * num_joints,
            SeqKind::Contact => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SeqKind::Motion => "motion",
            SeqKind::Imu => "imu",
            SeqKind::Velocity => "velocity",
            SeqKind::Contact => "contact",
            SeqKind::Raw => "raw imu",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqHeader {
    pub kind: SeqKind,
    pub format_version: u32,
    pub fps: u32,
    pub num_joints: u32,
    pub width: u32,
}

impl SeqHeader {
    pub fn new(kind: SeqKind, num_joints: usize) -> Self {
        Self {
            kind,
            format_version: SEQUENCE_FORMAT_VERSION,
            fps: DEFAULT_FPS,
            num_joints: num_joints as u32,
            width: kind.width(num_joints) as u32,
        }
    }

    pub fn frame_bytes(&self) -> usize {
        self.width as usize * self.kind.value_size()
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&self.kind.magic());
        b[4..8].copy_from_slice(&self.format_version.to_le_bytes());
        b[8..12].copy_from_slice(&self.fps.to_le_bytes());
        b[12..16].copy_from_slice(&self.num_joints.to_le_bytes());
        b[16..20].copy_from_slice(&self.width.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_LEN {
            return Err(Error::Format(format!("header needs {HEADER_LEN} bytes, got {}", b.len())));
        }
        let kind = SeqKind::from_magic(&b[0..4]).ok_or_else(|| Error::Format(format!("unknown magic {:?}", &b[0..4])))?;
        let u = |i: usize| u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]);
        let h = Self {
            kind,
            format_version: u(4),
            fps: u(8),
            num_joints: u(12),
            width: u(16),
        };
        if h.format_version != SEQUENCE_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format_version {} (expected {SEQUENCE_FORMAT_VERSION})",
                h.format_version
            )));
        }
        if h.fps != DEFAULT_FPS {
            return Err(Error::Format(format!("unsupported frame rate {} (only 60 fps)", h.fps)));
        }
        if h.width as usize != kind.width(h.num_joints as usize) {
            return Err(Error::Format(format!(
                "{} file width {} does not match {} joints",
                kind.name(),
                h.width,
                h.num_joints
            )));
        }
        Ok(h)
    }
}

/// Streaming reader; never reads past the frame it returns.
pub struct SequenceReader<R: Read> {
    inner: R,
    header: SeqHeader,
    buf: Vec<u8>,
    partial: usize,
    done: bool,
}

impl<R: Read> SequenceReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut b = [0u8; HEADER_LEN];
        let got = read_full(&mut inner, &mut b)?;
        if got < HEADER_LEN {
            return Err(Error::Format(format!("truncated header ({got} of {HEADER_LEN} bytes)")));
        }
        let header = SeqHeader::from_bytes(&b)?;
        Ok(Self {
            inner,
            buf: vec![0; header.frame_bytes()],
            header,
            partial: 0,
            done: false,
        })
    }

    pub fn header(&self) -> &SeqHeader {
        &self.header
    }

    /// Bytes of the trailing incomplete frame, once the end is reached.
    pub fn partial_bytes(&self) -> usize {
        self.partial
    }

    pub fn next_frame(&mut self) -> Result<Option<DVector<f64>>> {
        if self.done {
            return Ok(None);
        }
        let got = read_full(&mut self.inner, &mut self.buf)?;
        if got < self.buf.len() {
            self.done = true;
            self.partial = got;
            return Ok(None);
        }
        let w = self.header.width as usize;
        let b = &self.buf;
        Ok(Some(match self.header.kind.value_size() {
            8 => DVector::from_fn(w, |i, _| f64::from_le_bytes(b[8 * i..8 * i + 8].try_into().unwrap())),
            _ => DVector::from_fn(w, |i, _| f32::from_le_bytes(b[4 * i..4 * i + 4].try_into().unwrap()) as f64),
        }))
    }
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(got)
}

pub struct SequenceWriter<W: Write> {
    inner: W,
    header: SeqHeader,
    frames: usize,
}

impl<W: Write> SequenceWriter<W> {
    pub fn new(mut inner: W, header: SeqHeader) -> Result<Self> {
        inner.write_all(&header.to_bytes())?;
        Ok(Self {
            inner,
            header,
            frames: 0,
        })
    }

    pub fn write_frame(&mut self, frame: &DVector<f64>) -> Result<()> {
        let w = self.header.width as usize;
        if frame.len() != w {
            return Err(Error::Shape {
                what: "sequence frame",
                expected: w,
                actual: frame.len(),
            });
        }
        let mut bytes = Vec::with_capacity(self.header.frame_bytes());
        for &v in frame.iter() {
            match self.header.kind.value_size() {
                8 => bytes.extend_from_slice(&v.to_le_bytes()),
                _ => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
        self.inner.write_all(&bytes)?;
        self.frames += 1;
        Ok(())
    }

    pub fn frames_written(&self) -> usize {
        self.frames
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// A fully loaded sequence file.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub header: SeqHeader,
    pub frames: Vec<DVector<f64>>,
    /// Bytes of an incomplete trailing frame that was skipped.
    pub partial_bytes: usize,
}

pub fn read_sequence_from<R: Read>(r: R) -> Result<Sequence> {
    let mut reader = SequenceReader::new(r)?;
    let mut frames = Vec::new();
    while let Some(f) = reader.next_frame()? {
        frames.push(f);
    }
    Ok(Sequence {
        header: reader.header,
        frames,
        partial_bytes: reader.partial,
    })
}

pub fn read_sequence(path: impl AsRef<Path>, kind: SeqKind) -> Result<Sequence> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let seq = read_sequence_from(BufReader::new(f)).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })?;
    if seq.header.kind != kind {
        return Err(Error::Format(format!(
            "{}: expected a {} file, found {}",
            path.display(),
            kind.name(),
            seq.header.kind.name()
        )));
    }
    Ok(seq)
}

pub fn write_sequence_to<W: Write>(w: W, kind: SeqKind, num_joints: usize, frames: &[DVector<f64>]) -> Result<W> {
    let mut writer = SequenceWriter::new(w, SeqHeader::new(kind, num_joints))?;
    for f in frames {
        writer.write_frame(f)?;
    }
    writer.finish()
}

pub fn write_sequence(path: impl AsRef<Path>, kind: SeqKind, num_joints: usize, frames: &[DVector<f64>]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_sequence_to(BufWriter::new(f), kind, num_joints, frames).map_err(|e| match e {
        Error::IoBare(e) => Error::io(path, e),
        other => other,
    })?;
    Ok(())
}
