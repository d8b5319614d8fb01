//! 8-bit RGB rasters and their on-disk encodings (PNG, binary PPM/PGM).

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::geometry::InstanceMask;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed {kind}: {detail}")]
    Malformed { kind: &'static str, detail: String },
    #[error("unsupported image format for {0}")]
    Unsupported(String),
}

fn malformed(kind: &'static str, detail: impl Into<String>) -> RasterError {
    RasterError::Malformed {
        kind,
        detail: detail.into(),
    }
}

pub type Rgb = [u8; 3];

#[derive(Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for Raster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Raster({}x{})", self.width, self.height)
    }
}

impl Raster {
    pub fn new(width: u32, height: u32, fill: Rgb) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&fill);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Option<Self> {
        (data.len() == width as usize * height as usize * 3).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn as_raw_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: u32, y: u32, c: Rgb) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    /// Writes `c` when `(x, y)` is inside the raster; ignores it otherwise.
    pub fn put_clipped(&mut self, x: i64, y: i64, c: Rgb) {
        if x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64 {
            self.put(x as u32, y as u32, c);
        }
    }

    pub fn count_color(&self, c: Rgb) -> usize {
        self.data.chunks_exact(3).filter(|p| *p == c).count()
    }
}

/// Binary PPM (P6).
pub fn encode_ppm(r: &Raster) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", r.width, r.height).into_bytes();
    out.extend_from_slice(&r.data);
    out
}

fn parse_pnm_header<'a>(bytes: &'a [u8], magic: &[u8]) -> Result<(u32, u32, &'a [u8]), RasterError> {
    let kind = "pnm";
    if !bytes.starts_with(magic) {
        return Err(malformed(kind, "bad magic"));
    }
    let mut fields = Vec::with_capacity(3);
    let mut i = magic.len();
    while fields.len() < 3 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if start == i {
            return Err(malformed(kind, "truncated header"));
        }
        let v: u32 = std::str::from_utf8(&bytes[start..i])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed(kind, "bad header number"))?;
        fields.push(v);
    }
    if fields[2] != 255 {
        return Err(malformed(kind, format!("maxval {} != 255", fields[2])));
    }
    // exactly one whitespace byte separates header and payload
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return Err(malformed(kind, "missing header terminator"));
    }
    Ok((fields[0], fields[1], &bytes[i + 1..]))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Raster, RasterError> {
    let (w, h, payload) = parse_pnm_header(bytes, b"P6")?;
    let n = w as usize * h as usize * 3;
    if payload.len() != n {
        return Err(malformed("ppm", format!("payload {} != {n}", payload.len())));
    }
    Ok(Raster::from_raw(w, h, payload.to_vec()).expect("length checked"))
}

/// Mask as binary PGM (P5), 255 = set.
pub fn encode_mask_pgm(m: &InstanceMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", m.width, m.height).into_bytes();
    out.extend(m.bits.iter().map(|b| if *b { 255u8 } else { 0 }));
    out
}

pub fn decode_mask_pgm(
    bytes: &[u8],
    object_id: u32,
    label: &str,
) -> Result<InstanceMask, RasterError> {
    let (w, h, payload) = parse_pnm_header(bytes, b"P5")?;
    let n = w as usize * h as usize;
    if payload.len() != n {
        return Err(malformed("pgm", format!("payload {} != {n}", payload.len())));
    }
    let bits = payload.iter().map(|v| *v >= 128).collect();
    Ok(InstanceMask::from_bits(w, h, bits, object_id, label).expect("length checked"))
}

#[cfg(feature = "png")]
pub fn encode_png(r: &Raster) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, r.width, r.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("in-memory png header");
        writer
            .write_image_data(&r.data)
            .expect("in-memory png payload");
    }
    out
}

#[cfg(feature = "png")]
pub fn decode_png(bytes: &[u8]) -> Result<Raster, RasterError> {
    let mut dec = png::Decoder::new(std::io::Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| malformed("png", e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| malformed("png", "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| malformed("png", e.to_string()))?;
    buf.truncate(info.buffer_size());
    let data = match info.color_type {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|v| [*v, *v, *v]).collect(),
        png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        other => return Err(malformed("png", format!("unsupported color type {other:?}"))),
    };
    Raster::from_raw(info.width, info.height, data).ok_or_else(|| malformed("png", "size mismatch"))
}

/// Preferred artifact extension for this build.
pub fn image_extension() -> &'static str {
    if cfg!(feature = "png") {
        "png"
    } else {
        "ppm"
    }
}

/// Encodes by the path's extension (`png` or `ppm`).
pub fn encode_for_path(r: &Raster, path: &Path) -> Result<Vec<u8>, RasterError> {
    match path.extension().and_then(|e| e.to_str()) {
        #[cfg(feature = "png")]
        Some("png") => Ok(encode_png(r)),
        Some("ppm") => Ok(encode_ppm(r)),
        _ => Err(RasterError::Unsupported(path.display().to_string())),
    }
}

pub fn write_image(r: &Raster, path: &Path) -> Result<(), RasterError> {
    let bytes = encode_for_path(r, path)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_image(path: &Path) -> Result<Raster, RasterError> {
    let bytes = std::fs::read(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        #[cfg(feature = "png")]
        Some("png") => decode_png(&bytes),
        Some("ppm") => decode_ppm(&bytes),
        _ => Err(RasterError::Unsupported(path.display().to_string())),
    }
}

/// MIME type and bytes for embedding in a data URL.
pub fn encode_for_transport(r: &Raster) -> (&'static str, Vec<u8>) {
    #[cfg(feature = "png")]
    {
        ("image/png", encode_png(r))
    }
    #[cfg(not(feature = "png"))]
    {
        ("image/x-portable-pixmap", encode_ppm(r))
    }
}
