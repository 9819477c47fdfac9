//! Generator output to 8-bit RGB, grid composition, PNG encoding.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::tensor::Tensor;

/// Row-major interleaved RGB, 8 bits per channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::invalid(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height * 3])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Encoded 8-bit RGB PNG.
    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().expect("in-memory PNG header");
            writer
                .write_image_data(&self.pixels)
                .expect("in-memory PNG data");
        }
        out
    }

    /// Decode an 8-bit RGB PNG.
    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let decoder = png::Decoder::new(Cursor::new(bytes));
        let mut reader = decoder
            .read_info()
            .map_err(|e| Error::Format(format!("PNG: {e}")))?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Format(format!("PNG: {e}")))?;
        if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
            return Err(Error::Format(format!(
                "expected 8-bit RGB PNG, got {:?}/{:?}",
                info.color_type, info.bit_depth
            )));
        }
        buf.truncate(info.buffer_size());
        Self::new(info.width as usize, info.height as usize, buf)
    }
}

/// Map tanh-range values to bytes: `clamp(floor((v + 1)/2·255 + 0.5), 0, 255)`,
/// so 0 lands on the 127.5 tie and rounds up to 128.
pub fn to_byte(v: f64) -> u8 {
    let scaled = (v + 1.0) / 2.0 * 255.0;
    (scaled + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// `[3, H, W]` channel-major tensor to interleaved RGB.
pub fn tensor_to_image(t: &Tensor) -> Result<ImageBuffer> {
    let (c, h, w) = t
        .chw()
        .ok_or_else(|| Error::shape(None, format!("expected [3,H,W], got {:?}", t.shape())))?;
    if c != 3 {
        return Err(Error::shape(None, format!("expected 3 channels, got {c}")));
    }
    if let Some(i) = t.first_non_finite() {
        return Err(Error::Numeric {
            layer: None,
            message: format!("tensor element {i} is not finite"),
        });
    }
    let plane = h * w;
    let data = t.data();
    let mut pixels = Vec::with_capacity(plane * 3);
    for p in 0..plane {
        for ch in 0..3 {
            pixels.push(to_byte(data[ch * plane + p]));
        }
    }
    ImageBuffer::new(w, h, pixels)
}

/// Grid layout parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridLayout {
    pub cols: usize,
    /// Gap between tiles and around the border.
    pub pad_px: usize,
    pub pad_value: u8,
}

impl GridLayout {
    pub fn flush(cols: usize) -> Self {
        Self {
            cols,
            pad_px: 0,
            pad_value: 0,
        }
    }
}

/// Tile `images` row-major from the top-left. Empty trailing cells and
/// padding are filled with `pad_value`.
pub fn compose_grid(images: &[ImageBuffer], layout: GridLayout) -> Result<ImageBuffer> {
    let GridLayout {
        cols,
        pad_px,
        pad_value,
    } = layout;
    if cols == 0 {
        return Err(Error::invalid("grid needs at least one column"));
    }
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("grid needs at least one image"))?;
    let (tw, th) = (first.width, first.height);
    if let Some(i) = images
        .iter()
        .position(|im| im.width != tw || im.height != th)
    {
        return Err(Error::invalid(format!(
            "image {i} is {}x{}, expected {tw}x{th}",
            images[i].width, images[i].height
        )));
    }
    let rows = images.len().div_ceil(cols);
    let width = cols * tw + (cols + 1) * pad_px;
    let height = rows * th + (rows + 1) * pad_px;
    let mut out = ImageBuffer::filled(width, height, pad_value)?;
    for (i, img) in images.iter().enumerate() {
        let x0 = pad_px + (i % cols) * (tw + pad_px);
        let y0 = pad_px + (i / cols) * (th + pad_px);
        for y in 0..th {
            let src = &img.pixels[y * tw * 3..(y + 1) * tw * 3];
            let dst = ((y0 + y) * width + x0) * 3;
            out.pixels[dst..dst + tw * 3].copy_from_slice(src);
        }
    }
    Ok(out)
}

/// Write `img` as PNG via temp file + rename.
pub fn encode_png(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &img.to_png())
}

pub fn decode_png(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ImageBuffer::from_png(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn byte_mapping() {
        assert_eq!(to_byte(-1.0), 0);
        assert_eq!(to_byte(1.0), 255);
        assert_eq!(to_byte(0.0), 128);
        assert_eq!(to_byte(2.0), 255);
        assert_eq!(to_byte(-1.5), 0);
    }

    #[test]
    fn black_tensor() {
        let t = Tensor::new(vec![3, 2, 5], vec![-1.0; 30]).unwrap();
        let img = tensor_to_image(&t).unwrap();
        assert_eq!((img.width(), img.height()), (5, 2));
        assert!(img.pixels().iter().all(|p| *p == 0));
    }

    #[test]
    fn channel_interleave() {
        // R plane = -1, G plane = 0, B plane = 1
        let mut data = vec![-1.0; 4];
        data.extend([0.0; 4]);
        data.extend([1.0; 4]);
        let img = tensor_to_image(&Tensor::new(vec![3, 2, 2], data).unwrap()).unwrap();
        assert_eq!(img.pixel(1, 1), [0, 128, 255]);
    }

    #[test]
    fn wrong_channels() {
        let t = Tensor::new(vec![1, 2, 2], vec![0.0; 4]).unwrap();
        assert!(matches!(tensor_to_image(&t), Err(Error::Shape { .. })));
        let t = Tensor::from_vec(vec![0.0; 12]);
        assert!(tensor_to_image(&t).is_err());
    }

    fn hot(w: usize, h: usize, x: usize, y: usize, v: u8) -> ImageBuffer {
        let mut img = ImageBuffer::filled(w, h, 0).unwrap();
        let i = (y * w + x) * 3;
        img.pixels[i..i + 3].copy_from_slice(&[v, v, v]);
        img
    }

    #[test]
    fn sixteen_tile_grid() {
        let tiles: Vec<_> = (0..16).map(|i| hot(64, 64, 3, 7, i as u8 + 1)).collect();
        let g = compose_grid(&tiles, GridLayout::flush(4)).unwrap();
        assert_eq!((g.width(), g.height()), (256, 256));
        // tile 5 sits at row 1, col 1
        assert_eq!(g.pixel(64 + 3, 64 + 7), [6, 6, 6]);
        for i in 0..16 {
            let (cx, cy) = ((i % 4) * 64, (i / 4) * 64);
            assert_eq!(g.pixel(cx + 3, cy + 7)[0], i as u8 + 1);
        }
    }

    #[test]
    fn single_tile_grid_is_identity() {
        let img = hot(5, 3, 2, 1, 200);
        assert_eq!(
            compose_grid(std::slice::from_ref(&img), GridLayout::flush(1)).unwrap(),
            img
        );
    }

    #[test]
    fn trailing_cells_filled() {
        let tiles = vec![ImageBuffer::filled(2, 2, 10).unwrap(); 3];
        let g = compose_grid(
            &tiles,
            GridLayout {
                cols: 2,
                pad_px: 0,
                pad_value: 255,
            },
        )
        .unwrap();
        assert_eq!((g.width(), g.height()), (4, 4));
        assert_eq!(g.pixel(3, 3), [255, 255, 255]);
        assert_eq!(g.pixel(1, 3), [10, 10, 10]);
    }

    #[test]
    fn padding_geometry() {
        let tiles = vec![ImageBuffer::filled(2, 2, 9).unwrap(); 2];
        let g = compose_grid(
            &tiles,
            GridLayout {
                cols: 2,
                pad_px: 1,
                pad_value: 0,
            },
        )
        .unwrap();
        assert_eq!((g.width(), g.height()), (7, 4));
        assert_eq!(g.pixel(0, 0), [0, 0, 0]);
        assert_eq!(g.pixel(1, 1), [9, 9, 9]);
        assert_eq!(g.pixel(3, 1), [0, 0, 0]);
        assert_eq!(g.pixel(4, 2), [9, 9, 9]);
    }

    #[test]
    fn mixed_sizes_rejected() {
        let tiles = vec![
            ImageBuffer::filled(2, 2, 0).unwrap(),
            ImageBuffer::filled(3, 2, 0).unwrap(),
        ];
        assert!(matches!(
            compose_grid(&tiles, GridLayout::flush(2)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn png_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("black.png");
        let img = ImageBuffer::filled(1, 1, 0).unwrap();
        encode_png(&img, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");
        assert_eq!(decode_png(&p).unwrap(), img);
    }

    #[test]
    fn unwritable_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("missing").join("x.png");
        let err = encode_png(&ImageBuffer::filled(1, 1, 0).unwrap(), &p).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("x.png"));
        assert!(!p.exists());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn png_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
            let mut state = seed;
            let pixels = (0..w * h * 3)
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    (state >> 56) as u8
                })
                .collect();
            let img = ImageBuffer::new(w, h, pixels).unwrap();
            prop_assert_eq!(ImageBuffer::from_png(&img.to_png()).unwrap(), img);
        }

        #[test]
        fn byte_mapping_is_monotone(a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(to_byte(lo) <= to_byte(hi));
        }
    }
}
