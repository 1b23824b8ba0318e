//! Lossless PNG reading and writing plus the on-disk dataset layout.
//!
//! ```text
//! root/input/*.png         natural images (RGB)
//! root/reflectance/*.png   reflectances (RGB)
//! root/shading/*.png       shadings (grayscale)
//! root/gt/scene_%05d_{i,r,s}.png   paired triples, evaluation only
//! ```

use std::cell::RefCell;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use super::{Image, SceneTriple, UnpairedCollections};
use crate::{Error, Result};

pub const INPUT_DIR: &str = "input";
pub const REFLECTANCE_DIR: &str = "reflectance";
pub const SHADING_DIR: &str = "shading";
pub const GT_DIR: &str = "gt";

const LOSSY_EXTENSIONS: &[&str] = &["jpg", "jpeg", "webp", "heic", "avif", "jxr"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

impl BitDepth {
    fn max_value(self) -> f32 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

thread_local! {
    static READ_LOG: RefCell<Option<Vec<PathBuf>>> = const { RefCell::new(None) };
}

fn log_read(path: &Path) {
    READ_LOG.with(|log| {
        if let Some(v) = log.borrow_mut().as_mut() {
            v.push(path.to_path_buf());
        }
    });
}

/// Run `f` and return every file or directory this module read on the
/// current thread while it ran.
pub fn record_reads<R>(f: impl FnOnce() -> R) -> (R, Vec<PathBuf>) {
    let previous = READ_LOG.with(|log| log.borrow_mut().replace(Vec::new()));
    let out = f();
    let reads = READ_LOG.with(|log| std::mem::replace(&mut *log.borrow_mut(), previous));
    (out, reads.unwrap_or_default())
}

pub fn load_image(path: &Path) -> Result<Image> {
    log_read(path);
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| Error::io(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::io(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::io(
                path,
                format!("unsupported colour type {other:?}, expected grayscale or RGB"),
            ))
        }
    };
    let (h, w) = (info.height as usize, info.width as usize);
    let n = h * w * channels;
    let data: Vec<f32> = match info.bit_depth {
        png::BitDepth::Eight => buf[..n].iter().map(|&b| b as f32 / 255.0).collect(),
        png::BitDepth::Sixteen => buf[..2 * n]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 / 65535.0)
            .collect(),
        other => return Err(Error::io(path, format!("unsupported bit depth {other:?}"))),
    };
    Image::new(h, w, channels, data).map_err(|e| Error::io(path, e))
}

/// Write `image` as an 8-bit PNG.
pub fn save_image(image: &Image, path: &Path) -> Result<()> {
    save_image_with_depth(image, path, BitDepth::Eight)
}

pub fn save_image_with_depth(image: &Image, path: &Path, depth: BitDepth) -> Result<()> {
    let color = match image.channels() {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::Dimension(format!("cannot save a {c}-channel image"))),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        image.width() as u32,
        image.height() as u32,
    );
    encoder.set_color(color);
    let max = depth.max_value();
    let quantize = |v: f32| (v * max).round().clamp(0.0, max);
    let bytes: Vec<u8> = match depth {
        BitDepth::Eight => {
            encoder.set_depth(png::BitDepth::Eight);
            image.data().iter().map(|&v| quantize(v) as u8).collect()
        }
        BitDepth::Sixteen => {
            encoder.set_depth(png::BitDepth::Sixteen);
            image
                .data()
                .iter()
                .flat_map(|&v| (quantize(v) as u16).to_be_bytes())
                .collect()
        }
    };
    let mut writer = encoder.write_header().map_err(|e| Error::io(path, e))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::io(path, e))?;
    writer.finish().map_err(|e| Error::io(path, e))
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
}

/// PNG files of `dir` in name order. Lossy formats are an error, anything
/// else is skipped.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    log_read(dir);
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() {
            continue;
        }
        match extension(&path).as_deref() {
            Some("png") => files.push(path),
            Some(ext) if LOSSY_EXTENSIONS.contains(&ext) => {
                return Err(Error::io(&path, "lossy image formats are not supported"))
            }
            _ => {}
        }
    }
    files.sort();
    Ok(files)
}

/// Load every image of a directory. All files must share a channel count.
pub fn load_collection(dir: &Path) -> Result<Vec<Image>> {
    let mut images: Vec<Image> = Vec::new();
    for path in list_images(dir)? {
        let im = load_image(&path)?;
        if let Some(first) = images.first() {
            if first.channels() != im.channels() {
                return Err(Error::io(
                    &path,
                    format!(
                        "has {} channels while earlier files have {}",
                        im.channels(),
                        first.channels()
                    ),
                ));
            }
        }
        images.push(im);
    }
    Ok(images)
}

/// Read the three training lists. Never touches `gt/`.
pub fn load_unpaired(root: &Path) -> Result<UnpairedCollections> {
    Ok(UnpairedCollections::new(
        load_collection(&root.join(INPUT_DIR))?,
        load_collection(&root.join(REFLECTANCE_DIR))?,
        load_collection(&root.join(SHADING_DIR))?,
    ))
}

pub fn gt_paths(root: &Path, index: usize) -> [PathBuf; 3] {
    let dir = root.join(GT_DIR);
    ["i", "r", "s"].map(|k| dir.join(format!("scene_{index:05}_{k}.png")))
}

/// Write a synthetic dataset: inputs from the first half of `triples`,
/// reflectances and shadings from the second half, and all triples under
/// `gt/`. Files are 16-bit.
pub fn write_dataset(root: &Path, triples: &[SceneTriple]) -> Result<Vec<PathBuf>> {
    let (train_inputs, train_layers) = super::synth::split_indices(triples.len());
    let mut written = Vec::new();
    let mut save = |im: &Image, path: PathBuf| -> Result<()> {
        save_image_with_depth(im, &path, BitDepth::Sixteen)?;
        written.push(path);
        Ok(())
    };
    for i in train_inputs {
        save(
            &triples[i].input,
            root.join(INPUT_DIR).join(format!("scene_{i:05}.png")),
        )?;
    }
    for i in train_layers {
        let name = format!("scene_{i:05}.png");
        save(
            &triples[i].reflectance,
            root.join(REFLECTANCE_DIR).join(&name),
        )?;
        save(&triples[i].shading, root.join(SHADING_DIR).join(&name))?;
    }
    for (i, t) in triples.iter().enumerate() {
        let [pi, pr, ps] = gt_paths(root, i);
        save(&t.input, pi)?;
        save(&t.reflectance, pr)?;
        save(&t.shading, ps)?;
    }
    for dir in [INPUT_DIR, REFLECTANCE_DIR, SHADING_DIR, GT_DIR] {
        fs::create_dir_all(root.join(dir)).map_err(|e| Error::io(root.join(dir), e))?;
    }
    Ok(written)
}

/// Paired evaluation triples from `gt/`, in scene order.
pub fn load_eval_triples(root: &Path) -> Result<Vec<SceneTriple>> {
    let dir = root.join(GT_DIR);
    let mut indices: Vec<usize> = list_images(&dir)?
        .iter()
        .filter_map(|p| {
            let stem = p.file_stem()?.to_str()?;
            stem.strip_prefix("scene_")?
                .strip_suffix("_i")?
                .parse()
                .ok()
        })
        .collect();
    indices.sort_unstable();
    indices
        .into_iter()
        .map(|i| {
            let [pi, pr, ps] = gt_paths(root, i);
            let triple = SceneTriple {
                input: load_image(&pi)?,
                reflectance: load_image(&pr)?,
                shading: load_image(&ps)?,
            };
            if triple.input.channels() != 3
                || triple.reflectance.channels() != 3
                || triple.shading.channels() != 1
            {
                return Err(Error::io(&pi, "triple has wrong channel counts"));
            }
            Ok(triple)
        })
        .collect()
}
