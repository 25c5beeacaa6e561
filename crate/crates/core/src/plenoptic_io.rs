//! Multi-view sub-aperture observation bundles: types, manifest I/O and
//! grid cropping.
//!
//! A manifest is a single JSON document:
//!
//! ```json
//! {
//!   "format": "dlvgrasp-observations",
//!   "version": 1,
//!   "intrinsics": { "focal_length_px": 320.0, "principal_point": [160.0, 160.0],
//!                   "image_size": [320, 320], "aperture_baseline": 2.0 },
//!   "views": [
//!     { "id": "view0", "pose": [16 numbers, row-major camera→world],
//!       "grid_extent": [7, 7], "images": ["view0/a00_00.png", ...] }
//!   ]
//! }
//! ```
//!
//! Image paths are relative to the manifest and listed in row-major aperture
//! order. Images are 8-bit RGB PNG.

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{camera_pose_from_row_major, camera_pose_to_row_major, CameraPose};

pub const MANIFEST_FORMAT: &str = "dlvgrasp-observations";
pub const MANIFEST_VERSION: u32 = 1;

/// Pinhole intrinsics of the center view plus the linear disparity scale of
/// the sub-aperture array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal_length_px: f64,
    pub principal_point: [f64; 2],
    /// `[width, height]` in pixels.
    pub image_size: [u32; 2],
    /// Disparity in pixels per unit aperture offset per unit inverse depth
    /// (pixel·meters).
    pub aperture_baseline: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal_length_px > 0.0) || !self.focal_length_px.is_finite() {
            return Err(Error::invalid(
                "intrinsics",
                "focal length must be positive",
            ));
        }
        if !(self.aperture_baseline > 0.0) || !self.aperture_baseline.is_finite() {
            return Err(Error::invalid(
                "intrinsics",
                "aperture baseline must be positive",
            ));
        }
        let [w, h] = self.image_size;
        if w == 0 || h == 0 {
            return Err(Error::invalid("intrinsics", "image size must be non-zero"));
        }
        let [cx, cy] = self.principal_point;
        if !(0.0..=(w - 1) as f64).contains(&cx) || !(0.0..=(h - 1) as f64).contains(&cy) {
            return Err(Error::invalid(
                "intrinsics",
                format!("principal point ({cx}, {cy}) outside image {w}x{h}"),
            ));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.image_size[0] as usize
    }

    pub fn height(&self) -> usize {
        self.image_size[1] as usize
    }

    /// Intrinsics after removing `margin` pixels from every image border.
    pub fn cropped(&self, margin: u32) -> CameraIntrinsics {
        CameraIntrinsics {
            principal_point: [
                self.principal_point[0] - margin as f64,
                self.principal_point[1] - margin as f64,
            ],
            image_size: [
                self.image_size[0] - 2 * margin,
                self.image_size[1] - 2 * margin,
            ],
            ..*self
        }
    }
}

/// Grid of sub-aperture images in row-major aperture order.
#[derive(Debug, Clone, PartialEq)]
pub struct SubApertureGrid {
    images: Vec<RgbImage>,
    /// `[rows, cols]`
    extent: [usize; 2],
}

impl SubApertureGrid {
    pub fn new(images: Vec<RgbImage>, extent: [usize; 2]) -> Result<Self> {
        let [rows, cols] = extent;
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("aperture grid", "empty grid"));
        }
        if rows % 2 == 0 || cols % 2 == 0 {
            return Err(Error::invalid(
                "aperture grid",
                format!("even aperture grid has no center view ({rows}x{cols})"),
            ));
        }
        if images.len() != rows * cols {
            return Err(Error::invalid(
                "aperture grid",
                format!("expected {} images, got {}", rows * cols, images.len()),
            ));
        }
        let dims = images[0].dimensions();
        if let Some(i) = images.iter().position(|im| im.dimensions() != dims) {
            return Err(Error::invalid(
                "aperture grid",
                format!(
                    "grid dimension mismatch: image {i} is {:?}, image 0 is {dims:?}",
                    images[i].dimensions()
                ),
            ));
        }
        Ok(Self { images, extent })
    }

    pub fn extent(&self) -> [usize; 2] {
        self.extent
    }

    pub fn center_index(&self) -> [usize; 2] {
        [self.extent[0] / 2, self.extent[1] / 2]
    }

    /// `(width, height)` shared by all images.
    pub fn image_dimensions(&self) -> (u32, u32) {
        self.images[0].dimensions()
    }

    pub fn image(&self, row: usize, col: usize) -> &RgbImage {
        &self.images[row * self.extent[1] + col]
    }

    pub fn images(&self) -> &[RgbImage] {
        &self.images
    }

    pub fn center_view(&self) -> &RgbImage {
        let [r, c] = self.center_index();
        self.image(r, c)
    }

    /// Aperture offset `(u, v)` of grid cell `(row, col)`: `u` along image
    /// x (columns), `v` along image y (rows), zero at the center view.
    pub fn offset(&self, row: usize, col: usize) -> [i32; 2] {
        let [cr, cc] = self.center_index();
        [col as i32 - cc as i32, row as i32 - cr as i32]
    }

    /// All apertures except the center view, with their offsets.
    pub fn side_apertures(&self) -> impl Iterator<Item = ([i32; 2], &RgbImage)> {
        let [rows, cols] = self.extent;
        let center = self.center_index();
        (0..rows)
            .flat_map(move |r| (0..cols).map(move |c| (r, c)))
            .filter(move |&(r, c)| [r, c] != center)
            .map(move |(r, c)| (self.offset(r, c), self.image(r, c)))
    }
}

/// Keeps the central `keep = [rows, cols]` apertures and strips `margin`
/// pixels from every side of every image.
pub fn crop_grid(grid: &SubApertureGrid, keep: [usize; 2], margin: u32) -> Result<SubApertureGrid> {
    let [rows, cols] = grid.extent();
    if keep[0] > rows || keep[1] > cols {
        return Err(Error::invalid(
            "crop",
            format!("keep {keep:?} larger than grid extent {:?}", grid.extent()),
        ));
    }
    if keep[0] % 2 == 0 || keep[1] % 2 == 0 {
        return Err(Error::invalid(
            "crop",
            format!("keep {keep:?} must be odd in both axes"),
        ));
    }
    let (w, h) = grid.image_dimensions();
    if 2 * margin >= w || 2 * margin >= h {
        return Err(Error::invalid(
            "crop",
            format!("margin {margin} too large for {w}x{h} images"),
        ));
    }
    let r0 = (rows - keep[0]) / 2;
    let c0 = (cols - keep[1]) / 2;
    let mut images = Vec::with_capacity(keep[0] * keep[1]);
    for r in r0..r0 + keep[0] {
        for c in c0..c0 + keep[1] {
            let src = grid.image(r, c);
            let img = if margin == 0 {
                src.clone()
            } else {
                image::imageops::crop_imm(src, margin, margin, w - 2 * margin, h - 2 * margin)
                    .to_image()
            };
            images.push(img);
        }
    }
    SubApertureGrid::new(images, keep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub id: String,
    pub pose: CameraPose,
    pub grid: SubApertureGrid,
}

/// Immutable bundle of observations sharing one set of intrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    observations: Vec<Observation>,
    intrinsics: CameraIntrinsics,
}

impl ObservationSet {
    pub fn new(observations: Vec<Observation>, intrinsics: CameraIntrinsics) -> Result<Self> {
        intrinsics.validate()?;
        if observations.is_empty() {
            return Err(Error::invalid("observation set", "no observations"));
        }
        for obs in &observations {
            let (w, h) = obs.grid.image_dimensions();
            if [w, h] != intrinsics.image_size {
                return Err(Error::Observation {
                    id: obs.id.clone(),
                    reason: format!(
                        "grid dimension mismatch: images are {w}x{h}, intrinsics say {}x{}",
                        intrinsics.image_size[0], intrinsics.image_size[1]
                    ),
                });
            }
            crate::pose::check_rotation(
                obs.pose.rotation.matrix(),
                crate::pose::ORTHONORMAL_TOLERANCE,
            )
            .map_err(|e| Error::Observation {
                id: obs.id.clone(),
                reason: e.to_string(),
            })?;
        }
        Ok(Self {
            observations,
            intrinsics,
        })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Crops every grid and shifts the principal point accordingly.
    pub fn cropped(&self, keep: [usize; 2], margin: u32) -> Result<ObservationSet> {
        let observations = self
            .observations
            .iter()
            .map(|o| {
                Ok(Observation {
                    id: o.id.clone(),
                    pose: o.pose,
                    grid: crop_grid(&o.grid, keep, margin).map_err(|e| Error::Observation {
                        id: o.id.clone(),
                        reason: e.to_string(),
                    })?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ObservationSet::new(observations, self.intrinsics.cropped(margin))
    }

    /// Keeps only the observations at `indices`.
    pub fn subset(&self, indices: &[usize]) -> Result<ObservationSet> {
        let observations = indices
            .iter()
            .map(|&i| {
                self.observations.get(i).cloned().ok_or_else(|| {
                    Error::invalid("observation subset", format!("index {i} out of range"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ObservationSet::new(observations, self.intrinsics)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestView {
    id: String,
    pose: Vec<f64>,
    grid_extent: [usize; 2],
    images: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    intrinsics: CameraIntrinsics,
    views: Vec<ManifestView>,
}

pub fn load_observation_set(manifest_path: impl AsRef<Path>) -> Result<ObservationSet> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Document {
        path: manifest_path.to_path_buf(),
        message: e.to_string(),
    })?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::Document {
            path: manifest_path.to_path_buf(),
            message: format!("unexpected format tag '{}'", manifest.format),
        });
    }
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::UnsupportedVersion {
            found: manifest.version,
            supported: MANIFEST_VERSION,
        });
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut observations = Vec::with_capacity(manifest.views.len());
    for view in manifest.views {
        let obs_err = |reason: String| Error::Observation {
            id: view.id.clone(),
            reason,
        };
        let pose: [f64; 16] =
            view.pose.as_slice().try_into().map_err(|_| {
                obs_err(format!("pose has {} entries, expected 16", view.pose.len()))
            })?;
        let pose = camera_pose_from_row_major(&pose).map_err(|e| obs_err(e.to_string()))?;
        let mut images = Vec::with_capacity(view.images.len());
        for rel in &view.images {
            let path = base.join(rel);
            if !path.is_file() {
                return Err(obs_err(format!("missing image file {}", path.display())));
            }
            let img = image::open(&path)
                .map_err(|e| Error::Image {
                    path: path.clone(),
                    message: e.to_string(),
                })?
                .to_rgb8();
            images.push(img);
        }
        let grid =
            SubApertureGrid::new(images, view.grid_extent).map_err(|e| obs_err(e.to_string()))?;
        observations.push(Observation {
            id: view.id,
            pose,
            grid,
        });
    }
    ObservationSet::new(observations, manifest.intrinsics)
}

/// Writes the images under `dir/<view id>/` and the manifest to
/// `dir/manifest_name`. Returns the manifest path.
pub fn save_observation_set(
    set: &ObservationSet,
    dir: impl AsRef<Path>,
    manifest_name: &str,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut views = Vec::new();
    for obs in set.observations() {
        let view_dir = dir.join(&obs.id);
        fs::create_dir_all(&view_dir).map_err(|e| Error::io(&view_dir, e))?;
        let [rows, cols] = obs.grid.extent();
        let mut names = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let rel = format!("{}/a{r:02}_{c:02}.png", obs.id);
                let path = dir.join(&rel);
                obs.grid.image(r, c).save(&path).map_err(|e| Error::Image {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                names.push(rel);
            }
        }
        views.push(ManifestView {
            id: obs.id.clone(),
            pose: camera_pose_to_row_major(&obs.pose).to_vec(),
            grid_extent: obs.grid.extent(),
            images: names,
        });
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        version: MANIFEST_VERSION,
        intrinsics: *set.intrinsics(),
        views,
    };
    let path = dir.join(manifest_name);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
