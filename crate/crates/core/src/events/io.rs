//! Binary event (EVT1) and flow ground-truth (FLO1) file formats.
//!
//! EVT1: 16-byte header { magic "EVT1", u16 W, u16 H, u32 count-interval µs,
//! u32 reserved }, then 12-byte records { u32 t_µs, u16 x, u16 y, i16 p,
//! u16 pad }. FLO1: header { magic "FLO1", u16 W, u16 H, u32 count }, then
//! per ground-truth instant a u32 t_µs followed by H×W (f32 u, f32 v) pairs,
//! row-major, NaN marking invalid pixels. All little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{EventRecord, EventStream};
use crate::error::{Error, Result};
use crate::flow::FlowField;

pub const EVT1_MAGIC: &[u8; 4] = b"EVT1";
pub const FLO1_MAGIC: &[u8; 4] = b"FLO1";

/// A ground-truth flow field at one stream instant.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedFlow {
    pub t_us: u32,
    pub flow: FlowField,
}

pub fn write_evt1<W: Write>(mut w: W, stream: &EventStream, count_interval_us: u32) -> Result<()> {
    w.write_all(EVT1_MAGIC)?;
    w.write_u16::<LittleEndian>(stream.width)?;
    w.write_u16::<LittleEndian>(stream.height)?;
    w.write_u32::<LittleEndian>(count_interval_us)?;
    w.write_u32::<LittleEndian>(0)?;
    for e in &stream.events {
        w.write_u32::<LittleEndian>(e.t)?;
        w.write_u16::<LittleEndian>(e.x)?;
        w.write_u16::<LittleEndian>(e.y)?;
        w.write_i16::<LittleEndian>(e.p as i16)?;
        w.write_u16::<LittleEndian>(0)?;
    }
    Ok(())
}

pub fn read_evt1<R: Read>(mut r: R) -> Result<(EventStream, u32)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != EVT1_MAGIC {
        return Err(Error::Format(format!("bad EVT1 magic {:?}", magic)));
    }
    let width = r.read_u16::<LittleEndian>()?;
    let height = r.read_u16::<LittleEndian>()?;
    let interval = r.read_u32::<LittleEndian>()?;
    let _reserved = r.read_u32::<LittleEndian>()?;

    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() % 12 != 0 {
        return Err(Error::Format(format!("EVT1 body length {} is not a record multiple", body.len())));
    }
    let mut events = Vec::with_capacity(body.len() / 12);
    for rec in body.chunks_exact(12) {
        let t = u32::from_le_bytes(rec[0..4].try_into().unwrap());
        let x = u16::from_le_bytes(rec[4..6].try_into().unwrap());
        let y = u16::from_le_bytes(rec[6..8].try_into().unwrap());
        let p = i16::from_le_bytes(rec[8..10].try_into().unwrap());
        if p != 1 && p != -1 {
            return Err(Error::Format(format!("EVT1 polarity {} is not ±1", p)));
        }
        if x >= width || y >= height {
            return Err(Error::Format(format!(
                "EVT1 event at ({}, {}) outside {}x{}",
                x, y, width, height
            )));
        }
        events.push(EventRecord { t, x, y, p: p as i8 });
    }
    Ok((EventStream { width, height, events }, interval))
}

pub fn write_evt1_file(path: &Path, stream: &EventStream, count_interval_us: u32) -> Result<()> {
    write_evt1(BufWriter::new(File::create(path)?), stream, count_interval_us)
}

pub fn read_evt1_file(path: &Path) -> Result<(EventStream, u32)> {
    read_evt1(BufReader::new(File::open(path)?))
}

pub fn write_flo1<W: Write>(mut w: W, width: u16, height: u16, flows: &[TimedFlow]) -> Result<()> {
    for tf in flows {
        if tf.flow.width() != width as usize || tf.flow.height() != height as usize {
            return Err(Error::Shape {
                op: "write_flo1",
                details: format!(
                    "field {}x{} vs header {}x{}",
                    tf.flow.width(),
                    tf.flow.height(),
                    width,
                    height
                ),
            });
        }
    }
    w.write_all(FLO1_MAGIC)?;
    w.write_u16::<LittleEndian>(width)?;
    w.write_u16::<LittleEndian>(height)?;
    w.write_u32::<LittleEndian>(flows.len() as u32)?;
    for tf in flows {
        w.write_u32::<LittleEndian>(tf.t_us)?;
        for i in 0..(width as usize * height as usize) {
            let (u, v) = if tf.flow.valid()[i] {
                (tf.flow.u()[i], tf.flow.v()[i])
            } else {
                (f32::NAN, f32::NAN)
            };
            w.write_f32::<LittleEndian>(u)?;
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn read_flo1<R: Read>(mut r: R) -> Result<(u16, u16, Vec<TimedFlow>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FLO1_MAGIC {
        return Err(Error::Format(format!("bad FLO1 magic {:?}", magic)));
    }
    let width = r.read_u16::<LittleEndian>()?;
    let height = r.read_u16::<LittleEndian>()?;
    let count = r.read_u32::<LittleEndian>()?;
    let n = width as usize * height as usize;
    let mut flows = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let t_us = r.read_u32::<LittleEndian>()?;
        let mut field = FlowField::zero(width as usize, height as usize);
        for i in 0..n {
            let u = r.read_f32::<LittleEndian>()?;
            let v = r.read_f32::<LittleEndian>()?;
            if u.is_finite() && v.is_finite() {
                field.u_mut()[i] = u;
                field.v_mut()[i] = v;
            } else {
                field.valid_mut()[i] = false;
            }
        }
        flows.push(TimedFlow { t_us, flow: field });
    }
    Ok((width, height, flows))
}

pub fn write_flo1_file(path: &Path, width: u16, height: u16, flows: &[TimedFlow]) -> Result<()> {
    write_flo1(BufWriter::new(File::create(path)?), width, height, flows)
}

pub fn read_flo1_file(path: &Path) -> Result<(u16, u16, Vec<TimedFlow>)> {
    read_flo1(BufReader::new(File::open(path)?))
}
