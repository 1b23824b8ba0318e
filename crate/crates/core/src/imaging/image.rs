use intrinsic_tensor::{Real, Tensor};

use crate::{Error, Result};

/// `H x W x C` image with interleaved channels and values in `[0, 1]`.
///
/// Natural images and reflectances have three channels; shading has one.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Dimension(format!(
                "image dims must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Dimension(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image from `f(y, x, c)`; values are clamped into `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c).clamp(0.0, 1.0));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self::from_fn(height, width, channels, |_, _, _| value)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Channel mean per pixel as a one-channel image.
    pub fn luminance(&self) -> Image {
        Image::from_fn(self.height, self.width, 1, |y, x, _| {
            (0..self.channels).map(|c| self.get(y, x, c)).sum::<f32>() / self.channels as f32
        })
    }

    pub fn max_abs_diff(&self, other: &Image) -> Result<f32> {
        if !self.same_dims(other) {
            return Err(Error::Dimension(format!(
                "cannot compare {} with {}",
                self.describe(),
                other.describe()
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    pub fn describe(&self) -> String {
        format!("{}x{}x{}", self.height, self.width, self.channels)
    }

    /// `[1, C, H, W]` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut out = vec![T::zero(); c * h * w];
        for (i, px) in self.data.chunks(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                out[ch * h * w + i] = T::of(v as f64);
            }
        }
        Tensor::new(vec![1, c, h, w], out).expect("image dims are consistent")
    }

    /// Sample `index` of an NCHW tensor. Values must already lie in `[0, 1]`.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, index: usize) -> Result<Self> {
        let (n, c, h, w) = t.dims4()?;
        if index >= n {
            return Err(Error::Dimension(format!(
                "sample {index} of a batch of {n}"
            )));
        }
        let plane = h * w;
        let src = &t.data()[index * c * plane..(index + 1) * c * plane];
        let mut data = Vec::with_capacity(c * plane);
        for i in 0..plane {
            for ch in 0..c {
                data.push(src[ch * plane + i].as_f64() as f32);
            }
        }
        Image::new(h, w, c, data)
    }
}

/// Stack images of identical dims into one `[N, C, H, W]` batch.
pub fn to_batch<T: Real>(images: &[Image]) -> Result<Tensor<T>> {
    let Some(first) = images.first() else {
        return Err(Error::Dimension("empty batch".into()));
    };
    if let Some(bad) = images.iter().find(|im| !im.same_dims(first)) {
        return Err(Error::Dimension(format!(
            "batch mixes {} and {}",
            first.describe(),
            bad.describe()
        )));
    }
    let parts: Vec<Tensor<T>> = images.iter().map(Image::to_tensor).collect();
    Ok(Tensor::stack(&parts)?)
}

/// Split an `[N, C, H, W]` tensor into images.
pub fn from_batch<T: Real>(t: &Tensor<T>) -> Result<Vec<Image>> {
    let n = t.dims4()?.0;
    (0..n).map(|i| Image::from_tensor(t, i)).collect()
}

/// `clip(R * S, 0, 1)` with the one-channel shading broadcast over colour.
pub fn compose_image(reflectance: &Image, shading: &Image) -> Result<Image> {
    if reflectance.height != shading.height || reflectance.width != shading.width {
        return Err(Error::Dimension(format!(
            "reflectance {} and shading {} differ in size",
            reflectance.describe(),
            shading.describe()
        )));
    }
    if shading.channels != 1 {
        return Err(Error::Dimension(format!(
            "shading must have one channel, got {}",
            shading.channels
        )));
    }
    let c = reflectance.channels;
    let data = reflectance
        .data
        .chunks(c)
        .zip(&shading.data)
        .flat_map(|(px, &s)| px.iter().map(move |&r| (r * s).clamp(0.0, 1.0)))
        .collect();
    Image::new(reflectance.height, reflectance.width, c, data)
}
