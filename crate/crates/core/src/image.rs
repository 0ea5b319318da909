//! Image containers, raster file IO and bilinear resampling.
//!
//! Pixels are reals in `[0, 1]`, stored row-major and channel-interleaved
//! with a top-left origin (x rightward, y downward). Files are 8-bit PNG;
//! a byte `v` loads as `v / 255` and a real `r` saves as `floor(255 r + 0.5)`.

use std::path::Path;

use ::image::{ColorType, DynamicImage, ImageReader};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> Image<T> {
    /// Validated constructor: checks the buffer length, the channel count
    /// and that every value is a finite real in `[0, 1]`.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "image channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "image buffer has {} values, expected {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(Error::InvalidArgument(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Self {
        let value = value.max(T::zero()).min(T::one());
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    /// Builds an image from arbitrary reals, clamping each into `[0, 1]`.
    pub fn from_clamped(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        let data = data
            .into_iter()
            .map(|v| if v.is_nan() { T::zero() } else { v.max(T::zero()).min(T::one()) })
            .collect();
        Self::new(width, height, channels, data)
    }

    pub fn from_bytes(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        let scale = T::lit(255.0);
        let data = bytes.iter().map(|&b| T::from_u8(b).unwrap() / scale).collect();
        Self::new(width, height, channels, data)
    }

    /// Round-half-up 8-bit quantization.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[T] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn same_dims<U>(&self, other: &Image<U>) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn min_max(&self) -> (T, T) {
        self.data
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Largest value over all pixels and channels (zero for an empty image).
    pub fn max_value(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v))
    }
}

/// Round-half-up quantization of a `[0, 1]` real to a byte.
#[inline]
pub fn quantize<T: Real>(v: T) -> u8 {
    let scaled = (v.as_f64() * 255.0 + 0.5).floor();
    scaled.clamp(0.0, 255.0) as u8
}

/// Binary contact region with the dimensions of the image it masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContactMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl ContactMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "mask has {} cells, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Intersection over union; two empty masks have IoU 1.
    pub fn iou(&self, other: &ContactMask) -> f64 {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// 3×3 erosion followed by 3×3 dilation. Pixels beyond the border count
    /// as set during erosion so contacts touching the frame edge survive.
    pub fn open3(&self) -> ContactMask {
        let eroded = self.morph(true);
        eroded.morph(false)
    }

    fn morph(&self, erode: bool) -> ContactMask {
        let (w, h) = (self.width as isize, self.height as isize);
        let mut out = vec![false; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = erode;
                'win: for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        let v = if nx < 0 || ny < 0 || nx >= w || ny >= h {
                            erode
                        } else {
                            self.data[(ny * w + nx) as usize]
                        };
                        if erode && !v {
                            acc = false;
                            break 'win;
                        }
                        if !erode && v {
                            acc = true;
                            break 'win;
                        }
                    }
                }
                out[(y * w + x) as usize] = acc;
            }
        }
        ContactMask {
            width: self.width,
            height: self.height,
            data: out,
        }
    }
}

/// Loads an 8-bit grayscale or RGB PNG.
pub fn load_image<T: Real>(path: impl AsRef<Path>) -> Result<Image<T>> {
    let path = path.as_ref();
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    match decoded {
        DynamicImage::ImageLuma8(buf) => Image::from_bytes(w, h, 1, buf.as_raw()),
        DynamicImage::ImageRgb8(buf) => Image::from_bytes(w, h, 3, buf.as_raw()),
        other => Err(Error::Decode {
            path: path.to_path_buf(),
            reason: format!(
                "unsupported pixel format {:?}; expected 8-bit grayscale or RGB",
                other.color()
            ),
        }),
    }
}

/// Saves as an 8-bit PNG with round-half-up quantization.
pub fn save_image<T: Real>(img: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let color = if img.channels == 1 {
        ColorType::L8
    } else {
        ColorType::Rgb8
    };
    ::image::save_buffer(
        path,
        &img.to_bytes(),
        img.width as u32,
        img.height as u32,
        color,
    )
    .map_err(|e| match e {
        ::image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Encode {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })
}

/// Bilinear resampling with pixel-center alignment and edge clamping.
pub fn resize_bilinear<T: Real>(img: &Image<T>, new_w: usize, new_h: usize) -> Result<Image<T>> {
    if new_w == 0 || new_h == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be at least 1x1, got {new_w}x{new_h}"
        )));
    }
    if new_w == img.width && new_h == img.height {
        return Ok(img.clone());
    }
    let xs = axis_weights(img.width, new_w);
    let ys = axis_weights(img.height, new_h);
    let ch = img.channels;
    let mut out = Vec::with_capacity(new_w * new_h * ch);
    for &(y0, y1, fy) in &ys {
        let fy = T::lit(fy);
        for &(x0, x1, fx) in &xs {
            let fx = T::lit(fx);
            for c in 0..ch {
                let top = img.get(x0, y0, c) * (T::one() - fx) + img.get(x1, y0, c) * fx;
                let bot = img.get(x0, y1, c) * (T::one() - fx) + img.get(x1, y1, c) * fx;
                let v = top * (T::one() - fy) + bot * fy;
                out.push(v.max(T::zero()).min(T::one()));
            }
        }
    }
    Ok(Image {
        width: new_w,
        height: new_h,
        channels: ch,
        data: out,
    })
}

fn axis_weights(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}
