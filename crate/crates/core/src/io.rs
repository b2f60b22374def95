//! Scene, box, detection and weight-bundle file formats.
//!
//! Text scenes are a header line `N C` followed by `N` lines of
//! `x y z f1 .. fC`. Ground-truth boxes live in a sidecar next to the scene
//! (same stem, `.boxes` extension), one `cx cy cz sx sy sz class_id` per line.
//!
//! The binary variant starts with the magic `SBMC` and a four byte kind tag.
//! Arrays are little-endian `f32`, each prefixed by its element count as a
//! little-endian `u64`.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geom::{AABox, FeatureMatrix, Point3, PointCloud};
use crate::nn::{Activation, Dense, MlpWeights};

pub const MAGIC: &[u8; 4] = b"SBMC";
const KIND_SCENE: &[u8; 4] = b"SCN\0";
const KIND_WEIGHTS: &[u8; 4] = b"WTS\0";

/// Sidecar path holding the ground-truth boxes of a scene file.
pub fn boxes_path(scene: &Path) -> PathBuf {
    scene.with_extension("boxes")
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_reals(path: &Path, line_no: usize, line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(path, line_no, format!("not a number: `{tok}`")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(path, line_no, format!("non-finite value `{tok}`")))
            }
        })
        .collect()
}

/// Content lines with 1-based numbers; blank lines and `#` comments skipped.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Parses the text point-cloud format.
pub fn parse_cloud_text(path: &Path, text: &str) -> Result<PointCloud> {
    let mut lines = content_lines(text);
    let (hline, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "missing `N C` header"))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(parse_err(path, hline, "header must be `N C`"));
    }
    let parse_count = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| parse_err(path, hline, format!("bad count `{s}`")))
    };
    let n = parse_count(dims[0])?;
    let c = parse_count(dims[1])?;

    let mut positions = Vec::with_capacity(n);
    let mut feats = Vec::with_capacity(n * c);
    let mut last_line = hline;
    for (line_no, line) in lines {
        last_line = line_no;
        if positions.len() == n {
            return Err(parse_err(path, line_no, format!("more than the declared {n} points")));
        }
        let vals = parse_reals(path, line_no, line)?;
        if vals.len() != 3 + c {
            return Err(parse_err(
                path,
                line_no,
                format!("expected {} values (3 + {c} features), found {}", 3 + c, vals.len()),
            ));
        }
        positions.push(Point3::new(vals[0], vals[1], vals[2]));
        feats.extend_from_slice(&vals[3..]);
    }
    if positions.len() != n {
        return Err(parse_err(
            path,
            last_line,
            format!("declared {n} points, found {}", positions.len()),
        ));
    }
    PointCloud::new(positions, FeatureMatrix::from_vec(n, c, feats)?)
}

pub fn parse_boxes_text(path: &Path, text: &str) -> Result<Vec<AABox>> {
    content_lines(text)
        .map(|(line_no, line)| {
            let vals = parse_reals(path, line_no, line)?;
            if vals.len() != 7 {
                return Err(parse_err(path, line_no, format!("box needs 7 values, found {}", vals.len())));
            }
            let class = vals[6];
            if class < 0.0 || class.fract() != 0.0 {
                return Err(parse_err(path, line_no, format!("class id `{class}` is not a non-negative integer")));
            }
            AABox::new(
                Point3::new(vals[0], vals[1], vals[2]),
                [vals[3], vals[4], vals[5]],
                class as usize,
            )
            .map_err(|e| parse_err(path, line_no, e.to_string()))
        })
        .collect()
}

pub fn format_cloud_text(cloud: &PointCloud) -> String {
    let mut s = format!("{} {}\n", cloud.len(), cloud.channels());
    for (p, f) in cloud.positions().iter().zip(cloud.features().iter_rows()) {
        s.push_str(&format!("{} {} {}", p.x, p.y, p.z));
        for v in f {
            s.push_str(&format!(" {v}"));
        }
        s.push('\n');
    }
    s
}

pub fn format_boxes_text(boxes: &[AABox]) -> String {
    boxes
        .iter()
        .map(|b| {
            format!(
                "{} {} {} {} {} {} {}\n",
                b.center.x, b.center.y, b.center.z, b.size[0], b.size[1], b.size[2], b.class_id
            )
        })
        .collect()
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads a scene and its ground-truth boxes. The format (text or binary) is
/// chosen by the leading magic bytes. A text scene with no sidecar has no boxes.
pub fn load_scene(path: &Path) -> Result<(PointCloud, Vec<AABox>)> {
    let bytes = read_file(path)?;
    if bytes.starts_with(MAGIC) {
        return decode_scene_binary(path, &bytes);
    }
    let text = String::from_utf8(bytes).map_err(|_| parse_err(path, 1, "scene is neither SBMC binary nor UTF-8 text"))?;
    let cloud = parse_cloud_text(path, &text)?;
    let bpath = boxes_path(path);
    let boxes = if bpath.exists() {
        let t = fs::read_to_string(&bpath).map_err(|e| Error::io(&bpath, e))?;
        parse_boxes_text(&bpath, &t)?
    } else {
        Vec::new()
    };
    Ok((cloud, boxes))
}

/// Writes a text scene plus its box sidecar.
pub fn save_scene(path: &Path, cloud: &PointCloud, boxes: &[AABox]) -> Result<()> {
    write_file(path, format_cloud_text(cloud).as_bytes())?;
    write_file(&boxes_path(path), format_boxes_text(boxes).as_bytes())
}

/// Writes the binary columnar variant. Values are narrowed to `f32`.
pub fn save_scene_binary(path: &Path, cloud: &PointCloud, boxes: &[AABox]) -> Result<()> {
    write_file(path, &encode_scene_binary(cloud, boxes))
}

pub fn encode_scene_binary(cloud: &PointCloud, boxes: &[AABox]) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.bytes(KIND_SCENE);
    w.u64(cloud.len() as u64);
    w.u64(cloud.channels() as u64);
    let pos: Vec<f64> = cloud.positions().iter().flat_map(|p| p.to_array()).collect();
    w.f32_array(&pos);
    w.f32_array(cloud.features().as_slice());
    let bx: Vec<f64> = boxes
        .iter()
        .flat_map(|b| {
            let mut v = b.center.to_array().to_vec();
            v.extend_from_slice(&b.size);
            v.push(b.class_id as f64);
            v
        })
        .collect();
    w.f32_array(&bx);
    w.buf
}

pub fn decode_scene_binary(path: &Path, bytes: &[u8]) -> Result<(PointCloud, Vec<AABox>)> {
    let mut r = ByteReader::new(path, bytes);
    r.expect(MAGIC)?;
    r.expect(KIND_SCENE)?;
    let n = r.u64()? as usize;
    let c = r.u64()? as usize;
    let pos = r.f32_array()?;
    if pos.len() != 3 * n {
        return Err(Error::dim("binary position array", 3 * n, pos.len()));
    }
    let feats = r.f32_array()?;
    if feats.len() != n * c {
        return Err(Error::dim("binary feature array", n * c, feats.len()));
    }
    let bx = r.f32_array()?;
    if bx.len() % 7 != 0 {
        return Err(r.err("box array length is not a multiple of 7"));
    }
    let positions = pos.chunks_exact(3).map(|p| Point3::new(p[0], p[1], p[2])).collect();
    let cloud = PointCloud::new(positions, FeatureMatrix::from_vec(n, c, feats)?)?;
    let boxes = bx
        .chunks_exact(7)
        .map(|b| AABox::new(Point3::new(b[0], b[1], b[2]), [b[3], b[4], b[5]], b[6] as usize))
        .collect::<Result<Vec<_>>>()?;
    Ok((cloud, boxes))
}

/// Named weight blocks, in a fixed order.
pub type WeightEntries = Vec<(String, MlpWeights)>;

/// Weight bundle layout after the `SBMC` + `WTS\0` prefix: entry count, then
/// per entry a length-prefixed UTF-8 name and a layer manifest
/// (`out`, `in`, activation code) followed by weight and bias arrays.
pub fn encode_weights(entries: &[(String, MlpWeights)]) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.bytes(KIND_WEIGHTS);
    w.u64(entries.len() as u64);
    for (name, mlp) in entries {
        w.u64(name.len() as u64);
        w.bytes(name.as_bytes());
        w.u64(mlp.layers().len() as u64);
        for layer in mlp.layers() {
            w.u64(layer.out_width() as u64);
            w.u64(layer.in_width() as u64);
            w.u64(layer.activation.code());
            w.f32_array(layer.weight.as_slice());
            w.f32_array(&layer.bias);
        }
    }
    w.buf
}

pub fn decode_weights(path: &Path, bytes: &[u8]) -> Result<WeightEntries> {
    let mut r = ByteReader::new(path, bytes);
    r.expect(MAGIC)?;
    r.expect(KIND_WEIGHTS)?;
    let count = r.u64()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u64()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| r.err("weight name is not UTF-8"))?;
        let n_layers = r.u64()? as usize;
        let mut layers = Vec::with_capacity(n_layers.min(64));
        for _ in 0..n_layers {
            let o = r.u64()? as usize;
            let i = r.u64()? as usize;
            let act = Activation::from_code(r.u64()?).ok_or_else(|| r.err("unknown activation code"))?;
            let w = r.f32_array()?;
            let b = r.f32_array()?;
            layers.push(Dense::new(FeatureMatrix::from_vec(o, i, w)?, b, act)?);
        }
        out.push((name, MlpWeights::new(layers)?));
    }
    Ok(out)
}

pub fn save_weights(path: &Path, entries: &[(String, MlpWeights)]) -> Result<()> {
    write_file(path, &encode_weights(entries))
}

pub fn load_weights(path: &Path) -> Result<WeightEntries> {
    let bytes = read_file(path)?;
    decode_weights(path, &bytes)
}

#[derive(Default)]
struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f32_array(&mut self, vals: &[f64]) {
        self.u64(vals.len() as u64);
        for &v in vals {
            self.buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
}

struct ByteReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        ByteReader { path, bytes, pos: 0 }
    }

    // Binary errors report the byte offset in place of a line number.
    fn err(&self, msg: &str) -> Error {
        parse_err(self.path, self.pos, format!("byte offset {}: {msg}", self.pos))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err("unexpected end of data")),
        }
    }

    fn expect(&mut self, tag: &[u8]) -> Result<()> {
        if self.take(tag.len())? == tag {
            Ok(())
        } else {
            Err(self.err("bad magic or kind tag"))
        }
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f32_array(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| self.err("array length overflow"))?)?;
        let mut data = Vec::new();
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .for_each(|v| data.push(v));
        Ok(data)
    }
}

/// Reads a whole file into memory, mapping failures to [`Error::Io`].
pub fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| Error::io(path, e))?;
    Ok(s)
}

pub fn write_string(path: &Path, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}
