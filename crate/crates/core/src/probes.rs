//! Invariance-probe datasets and context-scale classification crops.
//!
//! Objects are the rectangular annotation boxes. A box covers the pixel
//! columns `floor(x)..ceil(x + w)` and rows `floor(y)..ceil(y + h)`.
//! Generated annotations use the default size thresholds.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    save_dataset, size_bucket, AnnotationId, AreaThresholds, Category, CategoryId, Dataset,
    GroundTruth, ImageId, ImageInfo,
};
use crate::error::{Error, Result};
use crate::geom::{scale_box, BBox};

/// Per-image probe transforms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "variant")]
pub enum ProbeSpec {
    /// One image per object, object pixels on a white canvas.
    WhiteBackground,
    /// One image per object, object pixels on uniform noise.
    NoiseBackground {
        seed: u64,
    },
    /// Every object kept in place, everything else white.
    ObjectsOnly,
    /// One image per object holding just the object.
    Crop,
    /// Like `Crop`, resized so the shorter side is `min_dim`.
    CropResize {
        min_dim: u32,
    },
    GaussianBlur {
        ksize: usize,
        sigma: f64,
    },
    VerticalFlip,
}

impl ProbeSpec {
    pub const DEFAULT_MIN_DIM: u32 = 300;
    pub const DEFAULT_KSIZE: usize = 11;
    pub const DEFAULT_SIGMA: f64 = 2.0;

    pub fn validate(&self) -> Result<()> {
        match *self {
            ProbeSpec::CropResize { min_dim: 0 } => {
                Err(Error::Precondition("min_dim must be positive".into()))
            }
            ProbeSpec::GaussianBlur { ksize, sigma } => gaussian_kernel(ksize, sigma).map(|_| ()),
            _ => Ok(()),
        }
    }

    fn per_object(&self) -> bool {
        matches!(
            self,
            ProbeSpec::WhiteBackground
                | ProbeSpec::NoiseBackground { .. }
                | ProbeSpec::Crop
                | ProbeSpec::CropResize { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeImage {
    pub image_id: ImageId,
    pub file_name: String,
    pub pixels: RgbImage,
}

/// Provenance of one generated image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: ImageId,
    pub file_name: String,
    pub source_image_id: ImageId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_annotation_id: Option<AnnotationId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_id: Option<ImageId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutput {
    pub images: Vec<ProbeImage>,
    pub annotations: Dataset,
    pub manifest: Vec<ManifestEntry>,
}

impl ProbeOutput {
    /// Writes the PNGs, `annotations.json` and `manifest.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.images.par_iter().try_for_each(|img| {
            img.pixels
                .save(dir.join(&img.file_name))
                .map_err(Error::from)
        })?;
        save_dataset(&self.annotations, dir.join("annotations.json"))?;
        write_json(&dir.join("manifest.json"), &self.manifest)
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("manifests serialize");
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Normalized 1-D Gaussian taps; the 2-D kernel is their outer product.
pub fn gaussian_kernel(ksize: usize, sigma: f64) -> Result<Vec<f64>> {
    if ksize.is_multiple_of(2) {
        return Err(Error::Precondition(format!(
            "kernel size must be odd, got {ksize}"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Precondition(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let c = ksize / 2;
    let mut k = vec![0.0; ksize];
    for d in 0..=c {
        let v = (-((d * d) as f64) / (2.0 * sigma * sigma)).exp();
        k[c + d] = v;
        k[c - d] = v;
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    Ok(k)
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(img: &RgbImage, ksize: usize, sigma: f64) -> Result<RgbImage> {
    let k = gaussian_kernel(ksize, sigma)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let c = (ksize / 2) as isize;
    let src: Vec<f64> = img.as_raw().iter().map(|&v| v as f64).collect();
    let at = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut rows = vec![0.0; src.len()];
    rows.par_chunks_mut(w * 3).enumerate().for_each(|(y, out)| {
        for x in 0..w {
            for ch in 0..3 {
                out[x * 3 + ch] = k
                    .iter()
                    .enumerate()
                    .map(|(i, kv)| kv * src[(y * w + at(x as isize + i as isize - c, w)) * 3 + ch])
                    .sum();
            }
        }
    });
    let mut dst = vec![0u8; src.len()];
    dst.par_chunks_mut(w * 3).enumerate().for_each(|(y, out)| {
        for x in 0..w {
            for ch in 0..3 {
                let v: f64 = k
                    .iter()
                    .enumerate()
                    .map(|(i, kv)| kv * rows[(at(y as isize + i as isize - c, h) * w + x) * 3 + ch])
                    .sum();
                out[x * 3 + ch] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    });
    Ok(RgbImage::from_raw(w as u32, h as u32, dst).expect("buffer matches dimensions"))
}

/// Pixel rectangle `(x0, y0, x1, y1)` covered by `b`, clipped to the image.
pub fn pixel_rect(b: &BBox, width: u32, height: u32) -> (u32, u32, u32, u32) {
    let clamp = |v: f64, hi: u32| v.clamp(0.0, hi as f64) as u32;
    (
        clamp(b.x.floor(), width),
        clamp(b.y.floor(), height),
        clamp(b.right().ceil(), width),
        clamp(b.bottom().ceil(), height),
    )
}

fn crop_pixels(img: &RgbImage, b: &BBox) -> Result<RgbImage> {
    let (x0, y0, x1, y1) = pixel_rect(b, img.width(), img.height());
    if x1 <= x0 || y1 <= y0 {
        return Err(Error::DegenerateCrop(format!(
            "box {:?} covers no pixels",
            b.to_array()
        )));
    }
    Ok(imageops::crop_imm(img, x0, y0, x1 - x0, y1 - y0).to_image())
}

fn copy_box(dst: &mut RgbImage, src: &RgbImage, b: &BBox) {
    let (x0, y0, x1, y1) = pixel_rect(b, src.width(), src.height());
    for y in y0..y1 {
        for x in x0..x1 {
            dst.put_pixel(x, y, *src.get_pixel(x, y));
        }
    }
}

fn fill_box(dst: &mut RgbImage, b: &BBox, color: Rgb<u8>) {
    let (x0, y0, x1, y1) = pixel_rect(b, dst.width(), dst.height());
    for y in y0..y1 {
        for x in x0..x1 {
            dst.put_pixel(x, y, color);
        }
    }
}

fn white(width: u32, height: u32) -> RgbImage {
    RgbImage::from_pixel(width, height, Rgb([255, 255, 255]))
}

fn noise(width: u32, height: u32, seed: u64, stream: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut raw = vec![0u8; (width * height * 3) as usize];
    rng.fill(raw.as_mut_slice());
    RgbImage::from_raw(width, height, raw).expect("buffer matches dimensions")
}

/// Output size whose shorter side is `min_dim`, keeping the aspect of `w x h`.
pub fn resized_dims(w: f64, h: f64, min_dim: u32) -> (u32, u32) {
    let m = min_dim as f64;
    if h <= w {
        ((w * m / h).round() as u32, min_dim)
    } else {
        (min_dim, (h * m / w).round() as u32)
    }
}

fn stem(info: &ImageInfo) -> String {
    Path::new(&info.file_name)
        .file_stem()
        .and_then(|s| s.to_str())
        .filter(|s| !s.is_empty())
        .map_or_else(|| format!("image_{}", info.id), str::to_string)
}

fn annotation(
    id: AnnotationId,
    image_id: ImageId,
    category_id: CategoryId,
    bbox: BBox,
) -> GroundTruth {
    GroundTruth {
        id,
        image_id,
        category_id,
        bbox,
        area: bbox.area(),
        size_class: size_bucket(bbox.area(), &AreaThresholds::default()),
    }
}

#[derive(Default)]
struct Part {
    images: Vec<ProbeImage>,
    annotations: Vec<GroundTruth>,
    manifest: Vec<ManifestEntry>,
}

impl Part {
    fn merge(
        parts: impl IntoIterator<Item = Part>,
        categories: &[Category],
    ) -> Result<ProbeOutput> {
        let mut all = Part::default();
        for p in parts {
            all.images.extend(p.images);
            all.annotations.extend(p.annotations);
            all.manifest.extend(p.manifest);
        }
        let infos = all
            .images
            .iter()
            .map(|img| ImageInfo {
                id: img.image_id,
                width: img.pixels.width(),
                height: img.pixels.height(),
                file_name: img.file_name.clone(),
            })
            .collect();
        Ok(ProbeOutput {
            annotations: Dataset::new(infos, categories.to_vec(), all.annotations)?,
            images: all.images,
            manifest: all.manifest,
        })
    }
}

fn probe_part(
    info: &ImageInfo,
    pixels: &RgbImage,
    annots: &[&GroundTruth],
    spec: &ProbeSpec,
) -> Result<Part> {
    if (pixels.width(), pixels.height()) != (info.width, info.height) {
        return Err(Error::validation(
            format!("image {}", info.id),
            format!(
                "pixels are {}x{} but the annotation file says {}x{}",
                pixels.width(),
                pixels.height(),
                info.width,
                info.height
            ),
        ));
    }
    let (wf, hf) = (info.width as f64, info.height as f64);
    if let Some(gt) = annots.iter().find(|gt| !gt.bbox.is_within(wf, hf)) {
        return Err(Error::validation(
            format!("annotation {}", gt.id),
            format!(
                "box {:?} is outside the {}x{} image",
                gt.bbox.to_array(),
                info.width,
                info.height
            ),
        ));
    }
    let stem = stem(info);
    let mut part = Part::default();
    if spec.per_object() {
        for gt in annots {
            let (pixels, bbox) = match *spec {
                ProbeSpec::WhiteBackground => {
                    let mut canvas = white(info.width, info.height);
                    copy_box(&mut canvas, pixels, &gt.bbox);
                    (canvas, gt.bbox)
                }
                ProbeSpec::NoiseBackground { seed } => {
                    let mut canvas = noise(info.width, info.height, seed, gt.id);
                    copy_box(&mut canvas, pixels, &gt.bbox);
                    (canvas, gt.bbox)
                }
                ProbeSpec::Crop => {
                    let crop = crop_pixels(pixels, &gt.bbox)?;
                    let full = BBox::new(0.0, 0.0, crop.width() as f64, crop.height() as f64)?;
                    (crop, full)
                }
                ProbeSpec::CropResize { min_dim } => {
                    let crop = crop_pixels(pixels, &gt.bbox)?;
                    let (w, h) = resized_dims(gt.bbox.w, gt.bbox.h, min_dim);
                    if w == 0 || h == 0 {
                        return Err(Error::DegenerateCrop(format!(
                            "annotation {} cannot be resized to {w}x{h}",
                            gt.id
                        )));
                    }
                    let full = BBox::new(0.0, 0.0, w as f64, h as f64)?;
                    (imageops::resize(&crop, w, h, FilterType::Triangle), full)
                }
                _ => unreachable!("per-object variants only"),
            };
            let file_name = format!("{stem}_{}.png", gt.id);
            part.annotations
                .push(annotation(gt.id, gt.id, gt.category_id, bbox));
            part.manifest.push(ManifestEntry {
                image_id: gt.id,
                file_name: file_name.clone(),
                source_image_id: info.id,
                source_annotation_id: Some(gt.id),
                background_id: None,
            });
            part.images.push(ProbeImage {
                image_id: gt.id,
                file_name,
                pixels,
            });
        }
    } else {
        let out = match *spec {
            ProbeSpec::ObjectsOnly => {
                let mut canvas = white(info.width, info.height);
                for gt in annots {
                    copy_box(&mut canvas, pixels, &gt.bbox);
                }
                canvas
            }
            ProbeSpec::GaussianBlur { ksize, sigma } => gaussian_blur(pixels, ksize, sigma)?,
            ProbeSpec::VerticalFlip => imageops::flip_vertical(pixels),
            _ => unreachable!("whole-image variants only"),
        };
        for gt in annots {
            let bbox = match spec {
                ProbeSpec::VerticalFlip => flip_box(&gt.bbox, hf),
                _ => gt.bbox,
            };
            part.annotations
                .push(annotation(gt.id, info.id, gt.category_id, bbox));
        }
        let file_name = format!("{stem}.png");
        part.manifest.push(ManifestEntry {
            image_id: info.id,
            file_name: file_name.clone(),
            source_image_id: info.id,
            source_annotation_id: None,
            background_id: None,
        });
        part.images.push(ProbeImage {
            image_id: info.id,
            file_name,
            pixels: out,
        });
    }
    Ok(part)
}

/// Mirror image of `b` under a vertical flip of an image `height` rows tall.
pub fn flip_box(b: &BBox, height: f64) -> BBox {
    BBox {
        y: height - b.y - b.h,
        ..*b
    }
}

fn annotations_by_image(ds: &Dataset) -> BTreeMap<ImageId, Vec<&GroundTruth>> {
    let mut by_image: BTreeMap<ImageId, Vec<&GroundTruth>> = BTreeMap::new();
    for gt in ds.annotations() {
        by_image.entry(gt.image_id).or_default().push(gt);
    }
    by_image
        .values_mut()
        .for_each(|v| v.sort_by_key(|gt| gt.id));
    by_image
}

/// Applies `spec` to one image of `ds`.
///
/// Per-object variants name each output image after the source annotation
/// id; whole-image variants keep the source image id.
pub fn generate_probe(
    ds: &Dataset,
    image_id: ImageId,
    pixels: &RgbImage,
    spec: &ProbeSpec,
) -> Result<ProbeOutput> {
    spec.validate()?;
    let info = ds
        .image(image_id)
        .ok_or_else(|| Error::validation(format!("image {image_id}"), "not in the dataset"))?;
    let mut annots: Vec<&GroundTruth> = ds
        .annotations()
        .iter()
        .filter(|gt| gt.image_id == image_id)
        .collect();
    annots.sort_by_key(|gt| gt.id);
    Part::merge([probe_part(info, pixels, &annots, spec)?], ds.categories())
}

/// Applies `spec` to every image of `ds`, loading pixels through `load`.
/// Output order follows image id, then annotation id.
pub fn generate_probe_set<F>(ds: &Dataset, load: F, spec: &ProbeSpec) -> Result<ProbeOutput>
where
    F: Fn(&ImageInfo) -> Result<RgbImage> + Sync,
{
    spec.validate()?;
    let by_image = annotations_by_image(ds);
    let mut infos: Vec<&ImageInfo> = ds.images().iter().collect();
    infos.sort_by_key(|i| i.id);
    let parts = infos
        .par_iter()
        .map(|info| {
            let pixels = load(info)?;
            probe_part(
                info,
                &pixels,
                by_image.get(&info.id).map_or(&[][..], Vec::as_slice),
                spec,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Part::merge(parts, ds.categories())
}

/// Loads `dir/<file_name>` as RGB.
pub fn load_image(dir: &Path, info: &ImageInfo) -> Result<RgbImage> {
    Ok(image::open(dir.join(&info.file_name))?.to_rgb8())
}

/// An object cut out of its source image, ready to be pasted elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct PasteObject {
    pub pixels: RgbImage,
    pub source: GroundTruth,
    pub source_width: u32,
    pub source_height: u32,
}

impl PasteObject {
    pub fn extract(ds: &Dataset, pixels: &RgbImage, annotation_id: AnnotationId) -> Result<Self> {
        let gt = ds.annotation(annotation_id).ok_or_else(|| {
            Error::validation(format!("annotation {annotation_id}"), "not in the dataset")
        })?;
        Ok(PasteObject {
            pixels: crop_pixels(pixels, &gt.bbox)?,
            source: gt.clone(),
            source_width: pixels.width(),
            source_height: pixels.height(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Top-left corner at the given pixel.
    At { x: u32, y: u32 },
    /// Center at the object's relative center in its source image, shifted
    /// inward when the crop would cross the border.
    SameRelativeCenter,
    /// Uniformly random position fully inside the background.
    Random { seed: u64 },
}

fn place(
    obj: &PasteObject,
    bg: &RgbImage,
    placement: Placement,
    stream: u64,
) -> Result<(u32, u32)> {
    let (cw, ch) = obj.pixels.dimensions();
    let (bw, bh) = bg.dimensions();
    if cw > bw || ch > bh {
        return Err(Error::Precondition(format!(
            "object crop {cw}x{ch} does not fit the {bw}x{bh} background"
        )));
    }
    Ok(match placement {
        Placement::At { x, y } => {
            if x + cw > bw || y + ch > bh {
                return Err(Error::Precondition(format!(
                    "object crop {cw}x{ch} at ({x}, {y}) leaves the {bw}x{bh} background"
                )));
            }
            (x, y)
        }
        Placement::SameRelativeCenter => {
            let (cx, cy) = obj.source.bbox.center();
            let tx = cx / obj.source_width as f64 * bw as f64 - cw as f64 / 2.0;
            let ty = cy / obj.source_height as f64 * bh as f64 - ch as f64 / 2.0;
            (
                tx.round().clamp(0.0, (bw - cw) as f64) as u32,
                ty.round().clamp(0.0, (bh - ch) as f64) as u32,
            )
        }
        Placement::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            (rng.gen_range(0..=bw - cw), rng.gen_range(0..=bh - ch))
        }
    })
}

/// Composites `obj` into `bg`; the new annotation keeps the source category.
pub fn paste_incongruent(
    obj: &PasteObject,
    bg: &RgbImage,
    placement: Placement,
) -> Result<(RgbImage, GroundTruth)> {
    paste_with_stream(obj, bg, placement, 0)
}

fn paste_with_stream(
    obj: &PasteObject,
    bg: &RgbImage,
    placement: Placement,
    stream: u64,
) -> Result<(RgbImage, GroundTruth)> {
    let (x, y) = place(obj, bg, placement, stream)?;
    let mut out = bg.clone();
    imageops::replace(&mut out, &obj.pixels, x as i64, y as i64);
    let bbox = BBox::new(
        x as f64,
        y as f64,
        obj.pixels.width() as f64,
        obj.pixels.height() as f64,
    )?;
    Ok((
        out,
        annotation(obj.source.id, 0, obj.source.category_id, bbox),
    ))
}

/// Pastes every object into every background. Output `i * backgrounds + j`
/// holds object `i` on background `j` and gets image and annotation id
/// `i * backgrounds + j + 1`. Random placement draws an independent
/// position per pair.
pub fn incongruent_set(
    objects: &[PasteObject],
    backgrounds: &[RgbImage],
    placement: Placement,
    categories: &[Category],
) -> Result<ProbeOutput> {
    let nb = backgrounds.len();
    let parts = (0..objects.len() * nb)
        .into_par_iter()
        .map(|k| {
            let (obj, bg_index) = (&objects[k / nb], k % nb);
            let id = k as u64 + 1;
            let (pixels, mut gt) =
                paste_with_stream(obj, &backgrounds[bg_index], placement, k as u64)?;
            gt.id = id;
            gt.image_id = id;
            let file_name = format!("paste_{id:06}.png");
            Ok(Part {
                manifest: vec![ManifestEntry {
                    image_id: id,
                    file_name: file_name.clone(),
                    source_image_id: obj.source.image_id,
                    source_annotation_id: Some(obj.source.id),
                    background_id: Some(bg_index as u64 + 1),
                }],
                images: vec![ProbeImage {
                    image_id: id,
                    file_name,
                    pixels,
                }],
                annotations: vec![gt],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Part::merge(parts, categories)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    /// The box shrunk by `s <= 1`.
    ObjectOnly,
    /// The box grown by `s >= 1`.
    ObjectPlusContext,
    /// The box grown by `s > 1` with the object region filled.
    ContextOnly,
    /// The full frame with the object region filled.
    WholeImage,
}

/// Fill for the hidden object region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fill {
    DatasetMean,
    Gray,
    White,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextScale {
    pub scale: f64,
    pub mode: ContextMode,
    pub fill: Fill,
}

impl ContextScale {
    pub const MIN_SCALE: f64 = 0.2;
    pub const MAX_SCALE: f64 = 2.0;

    pub fn validate(&self) -> Result<()> {
        let s = self.scale;
        if self.mode == ContextMode::WholeImage {
            return Ok(());
        }
        if !(Self::MIN_SCALE..=Self::MAX_SCALE).contains(&s) {
            return Err(Error::Precondition(format!(
                "scale must lie in [{}, {}], got {s}",
                Self::MIN_SCALE,
                Self::MAX_SCALE
            )));
        }
        let ok = match self.mode {
            ContextMode::ObjectOnly => s <= 1.0,
            ContextMode::ObjectPlusContext => s >= 1.0,
            ContextMode::ContextOnly => s > 1.0,
            ContextMode::WholeImage => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition(format!(
                "scale {s} is not valid for {:?}",
                self.mode
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropEntry {
    pub annotation_id: AnnotationId,
    pub image_id: ImageId,
    pub label: CategoryId,
    /// `None` when the crop was skipped.
    pub file_name: Option<String>,
    pub crop: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropExport {
    pub crops: Vec<ProbeImage>,
    pub manifest: Vec<CropEntry>,
}

impl CropExport {
    /// Writes the PNGs and `manifest.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.crops.par_iter().try_for_each(|img| {
            img.pixels
                .save(dir.join(&img.file_name))
                .map_err(Error::from)
        })?;
        write_json(&dir.join("manifest.json"), &self.manifest)
    }
}

/// Per-channel mean over every pixel of every image, rounded.
pub fn mean_pixel<F>(ds: &Dataset, load: F) -> Result<Rgb<u8>>
where
    F: Fn(&ImageInfo) -> Result<RgbImage> + Sync,
{
    let (sums, n) = ds
        .images()
        .par_iter()
        .map(|info| {
            let img = load(info)?;
            let mut s = [0u64; 3];
            for p in img.pixels() {
                for c in 0..3 {
                    s[c] += p[c] as u64;
                }
            }
            Ok((s, img.width() as u64 * img.height() as u64))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(([0u64; 3], 0u64), |(a, n), (s, m)| {
            ([a[0] + s[0], a[1] + s[1], a[2] + s[2]], n + m)
        });
    if n == 0 {
        return Ok(Rgb([128, 128, 128]));
    }
    Ok(Rgb(sums.map(|s| ((s as f64) / (n as f64)).round() as u8)))
}

/// One crop per annotation at the requested scale and mode. Crops that clip
/// to nothing are skipped with a warning and recorded in the manifest.
pub fn export_context_crops<F>(ds: &Dataset, load: F, cfg: &ContextScale) -> Result<CropExport>
where
    F: Fn(&ImageInfo) -> Result<RgbImage> + Sync,
{
    cfg.validate()?;
    let color = match cfg.fill {
        Fill::DatasetMean
            if matches!(cfg.mode, ContextMode::ContextOnly | ContextMode::WholeImage) =>
        {
            mean_pixel(ds, &load)?
        }
        Fill::DatasetMean | Fill::Gray => Rgb([128, 128, 128]),
        Fill::White => Rgb([255, 255, 255]),
    };
    let by_image = annotations_by_image(ds);
    let mut infos: Vec<&ImageInfo> = ds.images().iter().collect();
    infos.sort_by_key(|i| i.id);
    let per_image = infos
        .par_iter()
        .filter_map(|info| by_image.get(&info.id).map(|annots| (info, annots)))
        .map(|(info, annots)| {
            let pixels = load(info)?;
            let mut crops = Vec::new();
            let mut entries = Vec::new();
            for gt in annots {
                let mut entry = CropEntry {
                    annotation_id: gt.id,
                    image_id: info.id,
                    label: gt.category_id,
                    file_name: None,
                    crop: None,
                    skipped: None,
                };
                match context_crop(&pixels, gt, cfg, color) {
                    Ok((crop_box, img)) => {
                        let file_name = format!("{}.png", gt.id);
                        entry.file_name = Some(file_name.clone());
                        entry.crop = Some(crop_box);
                        crops.push(ProbeImage {
                            image_id: info.id,
                            file_name,
                            pixels: img,
                        });
                    }
                    Err(Error::DegenerateCrop(reason)) => {
                        log::warn!("skipping annotation {}: {reason}", gt.id);
                        entry.skipped = Some(reason);
                    }
                    Err(e) => return Err(e),
                }
                entries.push(entry);
            }
            Ok((crops, entries))
        })
        .collect::<Result<Vec<_>>>()?;
    let (crops, manifest): (Vec<_>, Vec<_>) = per_image.into_iter().unzip();
    Ok(CropExport {
        crops: crops.into_iter().flatten().collect(),
        manifest: manifest.into_iter().flatten().collect(),
    })
}

fn context_crop(
    pixels: &RgbImage,
    gt: &GroundTruth,
    cfg: &ContextScale,
    color: Rgb<u8>,
) -> Result<(BBox, RgbImage)> {
    let (w, h) = (pixels.width() as f64, pixels.height() as f64);
    let region = match cfg.mode {
        ContextMode::WholeImage => BBox::new(0.0, 0.0, w, h)?,
        _ => scale_box(&gt.bbox, cfg.scale, w, h)?,
    };
    let mut img = pixels.clone();
    if matches!(cfg.mode, ContextMode::ContextOnly | ContextMode::WholeImage) {
        fill_box(&mut img, &gt.bbox, color);
    }
    Ok((region, crop_pixels(&img, &region)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            Rgb([
                (x % 256) as u8,
                (y % 256) as u8,
                ((x * 7 + y * 3) % 256) as u8,
            ])
        })
    }

    fn scene() -> (Dataset, RgbImage) {
        let boxes = [
            (10.0, 20.0, 60.0, 40.0, 1),
            (100.0, 50.0, 30.0, 30.0, 2),
            (5.0, 100.0, 20.0, 15.0, 1),
        ];
        let annotations = boxes
            .iter()
            .enumerate()
            .map(|(i, &(x, y, w, h, c))| {
                annotation(i as u64 + 1, 7, c, BBox::new(x, y, w, h).unwrap())
            })
            .collect();
        let ds = Dataset::new(
            vec![ImageInfo {
                id: 7,
                width: 160,
                height: 120,
                file_name: "scene.png".into(),
            }],
            vec![
                Category {
                    id: 1,
                    name: "a".into(),
                },
                Category {
                    id: 2,
                    name: "b".into(),
                },
            ],
            annotations,
        )
        .unwrap();
        (ds, gradient(160, 120))
    }

    #[test]
    fn kernel_properties() {
        let k = gaussian_kernel(11, 2.0).unwrap();
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for i in 0..11 {
            assert_eq!(k[i], k[10 - i]);
        }
        let sum2d: f64 = k.iter().flat_map(|a| k.iter().map(move |b| a * b)).sum();
        assert!((sum2d - 1.0).abs() <= 1e-12);
        assert!(gaussian_kernel(10, 2.0).is_err());
        assert!(gaussian_kernel(11, 0.0).is_err());
    }

    #[test]
    fn blur_keeps_flat_images() {
        let flat = RgbImage::from_pixel(20, 15, Rgb([40, 90, 200]));
        assert_eq!(gaussian_blur(&flat, 11, 2.0).unwrap(), flat);
    }

    #[test]
    fn white_background_one_object_per_image() {
        let (ds, img) = scene();
        let out = generate_probe(&ds, 7, &img, &ProbeSpec::WhiteBackground).unwrap();
        assert_eq!(out.images.len(), 3);
        assert_eq!(out.annotations.annotations().len(), 3);
        for (probe, gt) in out.images.iter().zip(ds.annotations()) {
            let annots: Vec<_> = out
                .annotations
                .annotations()
                .iter()
                .filter(|a| a.image_id == probe.image_id)
                .collect();
            assert_eq!(annots.len(), 1);
            assert_eq!(annots[0].category_id, gt.category_id);
            let (x0, y0, x1, y1) = pixel_rect(&gt.bbox, 160, 120);
            for (x, y, p) in probe.pixels.enumerate_pixels() {
                if (x0..x1).contains(&x) && (y0..y1).contains(&y) {
                    assert_eq!(p, img.get_pixel(x, y));
                } else {
                    assert_eq!(p, &Rgb([255, 255, 255]));
                }
            }
        }
    }

    #[test]
    fn noise_is_seeded() {
        let (ds, img) = scene();
        let spec = ProbeSpec::NoiseBackground { seed: 3 };
        let a = generate_probe(&ds, 7, &img, &spec).unwrap();
        assert_eq!(a, generate_probe(&ds, 7, &img, &spec).unwrap());
        let b = generate_probe(&ds, 7, &img, &ProbeSpec::NoiseBackground { seed: 4 }).unwrap();
        assert_ne!(a.images[0].pixels, b.images[0].pixels);
    }

    #[test]
    fn objects_only_keeps_annotations() {
        let (ds, img) = scene();
        let out = generate_probe(&ds, 7, &img, &ProbeSpec::ObjectsOnly).unwrap();
        assert_eq!(out.images.len(), 1);
        assert_eq!(out.annotations.annotations(), ds.annotations());
        assert_eq!(out.images[0].pixels.get_pixel(0, 0), &Rgb([255, 255, 255]));
        assert_eq!(
            out.images[0].pixels.get_pixel(10, 20),
            img.get_pixel(10, 20)
        );
    }

    #[test]
    fn crop_resize_dims() {
        assert_eq!(resized_dims(60.0, 40.0, 300), (450, 300));
        assert_eq!(resized_dims(40.0, 60.0, 300), (300, 450));
        let (ds, img) = scene();
        let out = generate_probe(&ds, 7, &img, &ProbeSpec::CropResize { min_dim: 300 }).unwrap();
        assert_eq!(out.images[0].pixels.dimensions(), (450, 300));
        assert_eq!(
            out.annotations.annotations()[0].bbox,
            BBox::new(0.0, 0.0, 450.0, 300.0).unwrap()
        );
        let crop = generate_probe(&ds, 7, &img, &ProbeSpec::Crop).unwrap();
        assert_eq!(
            crop.images[0].pixels,
            imageops::crop_imm(&img, 10, 20, 60, 40).to_image()
        );
    }

    #[test]
    fn flip_remaps_boxes() {
        let (ds, img) = scene();
        let out = generate_probe(&ds, 7, &img, &ProbeSpec::VerticalFlip).unwrap();
        let flipped = &out.annotations.annotations()[0];
        assert_eq!(
            flipped.bbox,
            BBox::new(10.0, 120.0 - 20.0 - 40.0, 60.0, 40.0).unwrap()
        );
        // Top-left object pixel lands on the bottom-left of the remapped box.
        assert_eq!(
            out.images[0].pixels.get_pixel(10, 99),
            img.get_pixel(10, 20)
        );
    }

    #[test]
    fn rejects_out_of_bounds_annotations() {
        let (ds, img) = scene();
        let small = gradient(50, 50);
        assert!(generate_probe(&ds, 7, &small, &ProbeSpec::Crop).is_err());
        let ds2 = ds
            .with_annotations(vec![annotation(
                1,
                7,
                1,
                BBox::new(150.0, 0.0, 20.0, 10.0).unwrap(),
            )])
            .unwrap();
        assert!(generate_probe(&ds2, 7, &img, &ProbeSpec::Crop).is_err());
    }

    #[test]
    fn paste_examples() {
        let (ds, img) = scene();
        let obj = PasteObject::extract(&ds, &img, 1).unwrap();
        let bg = RgbImage::from_pixel(320, 240, Rgb([0, 0, 0]));
        let (out, gt) = paste_incongruent(&obj, &bg, Placement::At { x: 0, y: 0 }).unwrap();
        assert_eq!(gt.bbox, BBox::new(0.0, 0.0, 60.0, 40.0).unwrap());
        assert_eq!(gt.category_id, 1);
        assert_eq!(out.get_pixel(0, 0), img.get_pixel(10, 20));

        let (_, gt) = paste_incongruent(&obj, &bg, Placement::SameRelativeCenter).unwrap();
        let (cx, cy) = gt.bbox.center();
        assert!((cx - 40.0 / 160.0 * 320.0).abs() <= 1.0);
        assert!((cy - 40.0 / 120.0 * 240.0).abs() <= 1.0);

        let tiny = RgbImage::new(30, 30);
        assert!(paste_incongruent(&obj, &tiny, Placement::SameRelativeCenter).is_err());
        assert!(paste_incongruent(&obj, &bg, Placement::At { x: 300, y: 0 }).is_err());
    }

    #[test]
    fn context_crops() {
        let (ds, img) = scene();
        let load = |_: &ImageInfo| Ok(img.clone());
        let cfg = |scale, mode| ContextScale {
            scale,
            mode,
            fill: Fill::Gray,
        };
        let same = export_context_crops(&ds, load, &cfg(1.0, ContextMode::ObjectOnly)).unwrap();
        assert_eq!(
            same.crops[0].pixels,
            imageops::crop_imm(&img, 10, 20, 60, 40).to_image()
        );
        assert_eq!(same.manifest.len(), 3);

        let ctx = export_context_crops(&ds, load, &cfg(1.2, ContextMode::ContextOnly)).unwrap();
        let entry = &ctx.manifest[0];
        let crop_box = entry.crop.unwrap();
        assert_eq!(
            crop_box,
            scale_box(&ds.annotations()[0].bbox, 1.2, 160.0, 120.0).unwrap()
        );
        let crop = &ctx.crops[0].pixels;
        let (ox, oy) = (crop_box.x.floor() as u32, crop_box.y.floor() as u32);
        for y in 20..60 {
            for x in 10..70 {
                assert_eq!(crop.get_pixel(x - ox, y - oy), &Rgb([128, 128, 128]));
            }
        }
        assert!(
            export_context_crops(&ds, load, &cfg(2.5, ContextMode::ObjectPlusContext)).is_err()
        );
        assert!(export_context_crops(&ds, load, &cfg(1.5, ContextMode::ObjectOnly)).is_err());
    }

    #[test]
    fn mean_pixel_of_flat_images() {
        let (ds, _) = scene();
        let m = mean_pixel(&ds, |_| Ok(RgbImage::from_pixel(4, 4, Rgb([1, 2, 3])))).unwrap();
        assert_eq!(m, Rgb([1, 2, 3]));
    }
}
