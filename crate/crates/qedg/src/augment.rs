//! Query-free sample augmentation.
//!
//! Image-layout samples support horizontal flip, vertical flip, and
//! rotation by a bounded random angle (nearest-neighbor resampling, zero
//! fill). Vector-layout samples support Gaussian jitter as the non-spatial
//! analog. Augmented variants reuse their source's stored label and never
//! touch the oracle.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::data::DataLayout;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("augmentation {kind} requires {needs} layout, data is {layout:?}")]
    IncompatibleLayout {
        kind: &'static str,
        needs: &'static str,
        layout: DataLayout,
    },
    #[error("sample length {got} does not match layout ({expect})")]
    LengthMismatch { expect: usize, got: usize },
    #[error("invalid augmentation parameter {name} = {value}")]
    BadParam { name: &'static str, value: f32 },
}

pub type Result<T> = std::result::Result<T, AugmentError>;

/// One augmentation operation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum AugmentKind {
    /// Mirror image columns.
    Hflip,
    /// Mirror image rows.
    Vflip,
    /// Rotate about the image center by a uniform angle in
    /// [-max_degrees, +max_degrees].
    Rotate { max_degrees: f32 },
    /// Add per-dimension Gaussian noise to a feature vector.
    Jitter { sigma: f32 },
}

impl AugmentKind {
    pub fn name(&self) -> &'static str {
        match self {
            AugmentKind::Hflip => "hflip",
            AugmentKind::Vflip => "vflip",
            AugmentKind::Rotate { .. } => "rotate",
            AugmentKind::Jitter { .. } => "jitter",
        }
    }

    pub fn validate(&self, layout: DataLayout) -> Result<()> {
        match (self, layout) {
            (AugmentKind::Jitter { sigma }, DataLayout::Vector { .. }) => {
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(AugmentError::BadParam {
                        name: "sigma",
                        value: *sigma,
                    });
                }
                Ok(())
            }
            (AugmentKind::Jitter { .. }, layout @ DataLayout::Image { .. }) => {
                Err(AugmentError::IncompatibleLayout {
                    kind: "jitter",
                    needs: "vector",
                    layout,
                })
            }
            (AugmentKind::Rotate { max_degrees }, DataLayout::Image { .. }) => {
                if !(*max_degrees >= 0.0 && max_degrees.is_finite() && *max_degrees <= 180.0) {
                    return Err(AugmentError::BadParam {
                        name: "max_degrees",
                        value: *max_degrees,
                    });
                }
                Ok(())
            }
            (op, layout @ DataLayout::Vector { .. }) => Err(AugmentError::IncompatibleLayout {
                kind: op.name(),
                needs: "image",
                layout,
            }),
            (_, DataLayout::Image { .. }) => Ok(()),
        }
    }
}

fn image_dims(layout: DataLayout, kind: &'static str) -> Result<(usize, usize)> {
    match layout {
        DataLayout::Image { height, width } => Ok((height, width)),
        other => Err(AugmentError::IncompatibleLayout {
            kind,
            needs: "image",
            layout: other,
        }),
    }
}

fn check_len(x: &[f32], layout: DataLayout) -> Result<()> {
    if x.len() != layout.dim() {
        return Err(AugmentError::LengthMismatch {
            expect: layout.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Applies one augmentation to a single sample. Deterministic given the
/// rng state; output shape equals input shape.
pub fn augment(
    x: &[f32],
    layout: DataLayout,
    op: AugmentKind,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f32>> {
    check_len(x, layout)?;
    op.validate(layout)?;
    match op {
        AugmentKind::Hflip => {
            let (h, w) = image_dims(layout, "hflip")?;
            let mut out = vec![0.0f32; h * w];
            for y in 0..h {
                for xx in 0..w {
                    out[y * w + xx] = x[y * w + (w - 1 - xx)];
                }
            }
            Ok(out)
        }
        AugmentKind::Vflip => {
            let (h, w) = image_dims(layout, "vflip")?;
            let mut out = vec![0.0f32; h * w];
            for y in 0..h {
                out[y * w..(y + 1) * w].copy_from_slice(&x[(h - 1 - y) * w..(h - y) * w]);
            }
            Ok(out)
        }
        AugmentKind::Rotate { max_degrees } => {
            let (h, w) = image_dims(layout, "rotate")?;
            let degrees: f32 = rng.gen_range(-max_degrees..=max_degrees);
            let theta = (degrees as f64).to_radians();
            let (sin, cos) = theta.sin_cos();
            let cy = (h as f64 - 1.0) / 2.0;
            let cx = (w as f64 - 1.0) / 2.0;
            let mut out = vec![0.0f32; h * w];
            for y in 0..h {
                for xx in 0..w {
                    // inverse-map each output pixel to its source location
                    let dy = y as f64 - cy;
                    let dx = xx as f64 - cx;
                    let sx = cx + cos * dx + sin * dy;
                    let sy = cy - sin * dx + cos * dy;
                    let (si, sj) = (sy.round() as i64, sx.round() as i64);
                    if (0..h as i64).contains(&si) && (0..w as i64).contains(&sj) {
                        out[y * w + xx] = x[si as usize * w + sj as usize];
                    }
                }
            }
            Ok(out)
        }
        AugmentKind::Jitter { sigma } => {
            let gauss = Normal::new(0.0f64, sigma as f64).map_err(|_| AugmentError::BadParam {
                name: "sigma",
                value: sigma,
            })?;
            Ok(x.iter()
                .map(|&v| v + gauss.sample(rng) as f32)
                .collect())
        }
    }
}
