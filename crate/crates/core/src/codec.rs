//! Little-endian binary encoding shared by checkpoints and video files.
//!
//! Video file layout:
//!
//! ```text
//! magic    8 bytes  "EGVIDEO\0"
//! version  u32      1
//! channels u32
//! height   u32
//! width    u32
//! frames   u32      u32::MAX when the frame count is not known up front
//! frames   channels*height*width f64 per frame, frame-major
//! ```
//!
//! Frame-major order lets a reader consume a pipe one frame at a time.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const VIDEO_MAGIC: &[u8; 8] = b"EGVIDEO\0";
pub const VIDEO_VERSION: u32 = 1;
pub const UNKNOWN_FRAMES: u32 = u32::MAX;

/// Upper bound on any single declared extent; guards allocation on
/// untrusted headers.
const MAX_EXTENT: u32 = 1 << 16;
const MAX_ELEMENTS: usize = 1 << 28;

#[derive(Debug, Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.buf.reserve(v.len() * 8);
        for x in v {
            self.f64(*x);
        }
    }

    /// `u16` name length, name, `u8` order, `u32` extents, data.
    pub fn record(&mut self, name: &str, shape: &[usize], data: &[f64]) {
        self.u16(name.len() as u16);
        self.bytes(name.as_bytes());
        self.u8(shape.len() as u8);
        for d in shape {
            self.u32(*d as u32);
        }
        self.f64s(data);
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated(what.to_string()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Truncated(what.into()))?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn record(&mut self, what: &str) -> Result<(String, Tensor)> {
        let len = self.u16(what)? as usize;
        let name = std::str::from_utf8(self.take(len, what)?)
            .map_err(|_| Error::Data(format!("{what}: record name is not UTF-8")))?
            .to_string();
        let ctx = format!("{what} '{name}'");
        let order = self.u8(&ctx)? as usize;
        if order > 5 {
            return Err(Error::Data(format!("{ctx}: tensor order {order} exceeds 5")));
        }
        let mut shape = Vec::with_capacity(order);
        for _ in 0..order {
            let d = self.u32(&ctx)?;
            if d > MAX_EXTENT {
                return Err(Error::Data(format!("{ctx}: extent {d} too large")));
            }
            shape.push(d as usize);
        }
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let count = match count {
            Some(c) if c <= MAX_ELEMENTS => c,
            _ => return Err(Error::Data(format!("{ctx}: tensor too large"))),
        };
        let data = self.f64s(count, &ctx)?;
        Ok((name, Tensor::from_vec(&shape, data)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VideoHeader {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// `None` when streaming an unknown number of frames.
    pub frames: Option<usize>,
}

impl VideoHeader {
    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Encodes a `C x T x H x W` tensor as a video file.
pub fn encode_video(video: &Tensor) -> Result<Vec<u8>> {
    let (c, t, h, w) = match video.shape()[..] {
        [c, t, h, w] => (c, t, h, w),
        _ => return Err(Error::Invalid(format!("video must be C x T x H x W, got {:?}", video.shape()))),
    };
    let mut out = ByteWriter::new();
    write_video_header(
        &mut out,
        &VideoHeader {
            channels: c,
            height: h,
            width: w,
            frames: Some(t),
        },
    );
    let plane = h * w;
    for f in 0..t {
        for ch in 0..c {
            let base = (ch * t + f) * plane;
            out.f64s(&video.data()[base..base + plane]);
        }
    }
    Ok(out.finish())
}

pub fn write_video_header(out: &mut ByteWriter, header: &VideoHeader) {
    out.bytes(VIDEO_MAGIC);
    out.u32(VIDEO_VERSION);
    out.u32(header.channels as u32);
    out.u32(header.height as u32);
    out.u32(header.width as u32);
    out.u32(header.frames.map(|f| f as u32).unwrap_or(UNKNOWN_FRAMES));
}

/// Encodes one `C x H x W` frame record.
pub fn encode_frame(frame: &Tensor) -> Vec<u8> {
    let mut out = ByteWriter::new();
    out.f64s(frame.data());
    out.finish()
}

/// Decodes a complete video file into `C x T x H x W`.
pub fn decode_video(bytes: &[u8]) -> Result<Tensor> {
    let mut reader = VideoReader::new(bytes)?;
    let header = reader.header();
    let mut frames = Vec::new();
    while let Some(f) = reader.next_frame()? {
        frames.push(f);
    }
    if let Some(n) = header.frames {
        if frames.len() != n {
            return Err(Error::Frame {
                index: frames.len(),
                reason: format!("header declares {n} frames, file holds {}", frames.len()),
            });
        }
    }
    stack_frames(&frames, header.channels, header.height, header.width)
}

/// `T` frames of `C x H x W` -> `C x T x H x W`.
pub fn stack_frames(frames: &[Tensor], c: usize, h: usize, w: usize) -> Result<Tensor> {
    let t = frames.len();
    let plane = h * w;
    let mut data = vec![0.0; c * t * plane];
    for (f, frame) in frames.iter().enumerate() {
        if frame.shape() != [c, h, w] {
            return Err(Error::shape("stack frames", frame.shape(), &[c, h, w]));
        }
        for ch in 0..c {
            let dst = (ch * t + f) * plane;
            data[dst..dst + plane].copy_from_slice(&frame.data()[ch * plane..(ch + 1) * plane]);
        }
    }
    Tensor::from_vec(&[c, t, h, w], data)
}

/// Frame `f` of a `C x T x H x W` video as `C x H x W`.
pub fn frame_of(video: &Tensor, f: usize) -> Result<Tensor> {
    let (c, t, h, w) = match video.shape()[..] {
        [c, t, h, w] if f < t => (c, t, h, w),
        _ => return Err(Error::Invalid(format!("frame {f} out of range for {:?}", video.shape()))),
    };
    let plane = h * w;
    let mut data = Vec::with_capacity(c * plane);
    for ch in 0..c {
        let base = (ch * t + f) * plane;
        data.extend_from_slice(&video.data()[base..base + plane]);
    }
    Tensor::from_vec(&[c, h, w], data)
}

/// Incremental frame reader over any byte source (file or pipe).
pub struct VideoReader<R: Read> {
    source: R,
    header: VideoHeader,
    index: usize,
    buf: Vec<u8>,
}

impl<R: Read> VideoReader<R> {
    pub fn new(mut source: R) -> Result<Self> {
        let mut head = [0u8; 28];
        read_full(&mut source, &mut head).and_then(|n| {
            if n < head.len() {
                Err(Error::Truncated("video header".into()))
            } else {
                Ok(())
            }
        })?;
        let mut r = ByteReader::new(&head);
        if r.take(8, "video magic")? != VIDEO_MAGIC {
            return Err(Error::Data("not a video file (bad magic bytes)".into()));
        }
        let version = r.u32("video version")?;
        if version != VIDEO_VERSION {
            return Err(Error::Version {
                found: version,
                expected: VIDEO_VERSION,
            });
        }
        let c = r.u32("channels")?;
        let h = r.u32("height")?;
        let w = r.u32("width")?;
        let frames = r.u32("frames")?;
        if c == 0 || h == 0 || w == 0 || c > 16 || h > MAX_EXTENT || w > MAX_EXTENT {
            return Err(Error::Data(format!("implausible video geometry {c} x {h} x {w}")));
        }
        let header = VideoHeader {
            channels: c as usize,
            height: h as usize,
            width: w as usize,
            frames: (frames != UNKNOWN_FRAMES).then_some(frames as usize),
        };
        if header.frame_len() > MAX_ELEMENTS {
            return Err(Error::Data("video frame too large".into()));
        }
        Ok(VideoReader {
            source,
            header,
            index: 0,
            buf: vec![0; header.frame_len() * 8],
        })
    }

    pub fn header(&self) -> VideoHeader {
        self.header
    }

    /// Next `C x H x W` frame, `None` at a clean end of input.
    pub fn next_frame(&mut self) -> Result<Option<Tensor>> {
        if let Some(n) = self.header.frames {
            if self.index >= n {
                return Ok(None);
            }
        }
        let got = read_full(&mut self.source, &mut self.buf).map_err(|e| Error::Frame {
            index: self.index,
            reason: e.to_string(),
        })?;
        if got == 0 {
            return match self.header.frames {
                Some(n) => Err(Error::Frame {
                    index: self.index,
                    reason: format!("input ended before the declared {n} frames"),
                }),
                None => Ok(None),
            };
        }
        if got < self.buf.len() {
            return Err(Error::Frame {
                index: self.index,
                reason: format!("partial record of {got} bytes (expected {})", self.buf.len()),
            });
        }
        let data: Vec<f64> = self
            .buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Frame {
                index: self.index,
                reason: "non-finite sample".into(),
            });
        }
        self.index += 1;
        let h = self.header;
        Ok(Some(Tensor::from_vec(&[h.channels, h.height, h.width], data)?))
    }
}

fn read_full<R: Read>(source: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(Error::io("<stream>", e)),
        }
    }
    Ok(filled)
}

pub fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
