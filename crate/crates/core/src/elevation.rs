//! Proxy elevation: erode a per-view instance mask, pick well-spread interior
//! pixels with farthest point sampling and lift them into 3D with depth.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{backproject, InstanceMask, ProxyCloud, ProxyPoint, ViewFrame, ViewId};
use crate::providers::{ProviderError, Segmenter};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ElevationError {
    #[error("mask has no set pixels")]
    EmptyMask,
    #[error("no pixel of object {object_id} in view {view} has valid depth")]
    EmptyProxy { view: ViewId, object_id: u32 },
    #[error("object {object_id} not found in view {view}")]
    ObjectNotFound { view: ViewId, object_id: u32 },
    #[error("pixel ({0}, {1}) is not inside the mask")]
    PixelOutsideMask(u32, u32),
    #[error("segmenter failed: {0}")]
    Segmenter(String),
}

/// A chat-model supplied object hint: category plus a pixel on the object.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectHint {
    pub label: String,
    pub center_px: [u32; 2],
    pub object_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElevationParams {
    /// FPS samples per object per view.
    pub n_pts: usize,
    /// Passes of 3x3 square erosion.
    pub erosion_iterations: usize,
}

impl Default for ElevationParams {
    fn default() -> Self {
        Self {
            n_pts: 30,
            erosion_iterations: 2,
        }
    }
}

fn erode_once(bits: &[bool], w: usize, h: usize) -> Vec<bool> {
    // separable: 3-wide horizontal AND, then 3-tall vertical AND; outside = unset
    let mut rows = vec![false; bits.len()];
    for y in 0..h {
        let r = &bits[y * w..(y + 1) * w];
        for x in 0..w {
            rows[y * w + x] = r[x] && x > 0 && r[x - 1] && x + 1 < w && r[x + 1];
        }
    }
    let mut out = vec![false; bits.len()];
    for y in 1..h.saturating_sub(1) {
        for x in 0..w {
            let i = y * w + x;
            out[i] = rows[i] && rows[i - w] && rows[i + w];
        }
    }
    out
}

/// Binary erosion with a 3x3 square, `iterations` times.
///
/// When erosion would remove every pixel the original mask is returned
/// unchanged; the second value reports whether that fallback fired.
pub fn erode_mask_reporting(mask: &InstanceMask, iterations: usize) -> (InstanceMask, bool) {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let mut bits = mask.bits.clone();
    for _ in 0..iterations {
        bits = erode_once(&bits, w, h);
    }
    if iterations > 0 && !bits.iter().any(|b| *b) {
        return (mask.clone(), true);
    }
    let out = InstanceMask {
        bits,
        ..mask.clone()
    };
    (out, false)
}

pub fn erode_mask(mask: &InstanceMask, iterations: usize) -> InstanceMask {
    erode_mask_reporting(mask, iterations).0
}

/// Greedy farthest point sampling over the set pixels of `mask`.
///
/// Seeded at the set pixel nearest the mask centroid; each later pick
/// maximizes the distance to the already chosen set. Ties go to the smallest
/// row-major index. Returns every set pixel when there are at most `n`.
pub fn fps_sample(mask: &InstanceMask, n: usize) -> Result<Vec<[u32; 2]>, ElevationError> {
    let pixels: Vec<[u32; 2]> = mask.pixels().map(|(x, y)| [x, y]).collect();
    if pixels.is_empty() {
        return Err(ElevationError::EmptyMask);
    }
    if pixels.len() <= n {
        return Ok(pixels);
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // centroid distances scaled by the pixel count stay exact in integers,
    // so equidistant candidates really tie
    let n_px = pixels.len() as i128;
    let (sx, sy) = pixels
        .iter()
        .fold((0i128, 0i128), |(a, b), p| (a + p[0] as i128, b + p[1] as i128));
    let mut seed = 0;
    let mut best = i128::MAX;
    for (i, p) in pixels.iter().enumerate() {
        let d = (p[0] as i128 * n_px - sx).pow(2) + (p[1] as i128 * n_px - sy).pow(2);
        if d < best {
            best = d;
            seed = i;
        }
    }

    let d2 = |a: [u32; 2], b: [u32; 2]| {
        let dx = a[0] as i64 - b[0] as i64;
        let dy = a[1] as i64 - b[1] as i64;
        dx * dx + dy * dy
    };
    let mut out = Vec::with_capacity(n);
    let mut min_d: Vec<i64> = pixels.iter().map(|p| d2(*p, pixels[seed])).collect();
    out.push(pixels[seed]);
    while out.len() < n {
        let (mut arg, mut far) = (0, -1);
        for (i, d) in min_d.iter().enumerate() {
            if *d > far {
                far = *d;
                arg = i;
            }
        }
        let pick = pixels[arg];
        out.push(pick);
        for (d, p) in min_d.iter_mut().zip(&pixels) {
            *d = (*d).min(d2(*p, pick));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftResult {
    pub cloud: ProxyCloud,
    /// Pixels dropped for invalid depth.
    pub skipped: usize,
}

/// Back-projects `pixels` (all inside `mask`) through the view's depth.
pub fn lift_proxies(
    view: &ViewFrame,
    mask: &InstanceMask,
    pixels: &[[u32; 2]],
    object_id: u32,
) -> Result<LiftResult, ElevationError> {
    let mut cloud = ProxyCloud::new();
    let mut skipped = 0;
    for &[x, y] in pixels {
        if !mask.get(x, y) {
            return Err(ElevationError::PixelOutsideMask(x, y));
        }
        let lifted = view.depth.get(x, y).and_then(|d| {
            backproject([x as f64, y as f64], d, &view.intrinsics, &view.pose).ok()
        });
        match lifted {
            Some(xyz) if xyz.iter().all(|v| v.is_finite()) => cloud.points.push(ProxyPoint {
                xyz,
                object_id,
                label: mask.label.clone(),
                view_id: view.view_id,
            }),
            _ => skipped += 1,
        }
    }
    if cloud.is_empty() && !pixels.is_empty() {
        return Err(ElevationError::EmptyProxy {
            view: view.view_id,
            object_id,
        });
    }
    Ok(LiftResult { cloud, skipped })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Elevated {
    pub cloud: ProxyCloud,
    pub skipped: usize,
    pub erosion_fallback: bool,
    pub mask_pixels: usize,
}

/// segment → erode → FPS → lift for one (view, hint).
pub fn elevate_object(
    view: &ViewFrame,
    hint: &ObjectHint,
    segmenter: &dyn Segmenter,
    params: &ElevationParams,
) -> Result<Elevated, ElevationError> {
    let not_found = || ElevationError::ObjectNotFound {
        view: view.view_id,
        object_id: hint.object_id,
    };
    let mut mask = match segmenter.segment(view, hint) {
        Ok(m) => m,
        Err(ProviderError::ObjectNotFound { .. }) => return Err(not_found()),
        Err(e) => return Err(ElevationError::Segmenter(e.to_string())),
    };
    if mask.is_empty() {
        return Err(not_found());
    }
    mask.object_id = hint.object_id;
    mask.label = hint.label.clone();
    let (eroded, fallback) = erode_mask_reporting(&mask, params.erosion_iterations);
    let pixels = fps_sample(&eroded, params.n_pts)?;
    let lifted = lift_proxies(view, &eroded, &pixels, hint.object_id)?;
    Ok(Elevated {
        cloud: lifted.cloud,
        skipped: lifted.skipped,
        erosion_fallback: fallback,
        mask_pixels: mask.count(),
    })
}
