//! Object-centered two-channel height maps.
//!
//! The window is a 0.5 m square centered on the target, sampled at 5 mm.
//! Pixel `(r, c)` covers `x in [cx - 0.25 + 0.005 c, +0.005]` and
//! `y in [cy - 0.25 + 0.005 r, +0.005]`; a body covers a pixel when the
//! pixel center lies strictly inside its footprint.

use crate::world::{BoxBody, Scene, Vec3, WorldError, CONTACT_EPS};

pub const IMAGE_SIZE: usize = 100;
pub const CHANNEL_LEN: usize = IMAGE_SIZE * IMAGE_SIZE;
pub const WINDOW: f64 = 0.5;
pub const PIXEL: f64 = WINDOW / IMAGE_SIZE as f64;
/// Height mapped to full scale in PGM output.
pub const PGM_FULL_SCALE: f64 = 0.5;

/// Height map (meters above the target's supporting surface) plus the
/// window center relative to the robot base.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthObservation {
    /// Channel 0 then channel 1, each row-major `IMAGE_SIZE x IMAGE_SIZE`.
    pub channels: Vec<f32>,
    pub feature: [f32; 3],
}

impl DepthObservation {
    pub fn zeros() -> Self {
        DepthObservation {
            channels: vec![0.0; 2 * CHANNEL_LEN],
            feature: [0.0; 3],
        }
    }

    pub fn channel(&self, ch: usize) -> &[f32] {
        &self.channels[ch * CHANNEL_LEN..(ch + 1) * CHANNEL_LEN]
    }

    pub fn pixel(&self, ch: usize, row: usize, col: usize) -> f32 {
        self.channels[ch * CHANNEL_LEN + row * IMAGE_SIZE + col]
    }
}

/// What to render around.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Body(&'a str),
    /// `body` placed at `center`; any scene body with the same id is ignored.
    Placement { body: &'a BoxBody, center: Vec3 },
}

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("unknown body `{0}`")]
    UnknownBody(String),
    #[error("target `{0}` does not rest on any region")]
    TargetNotOnRegion(String),
}

impl From<RenderError> for WorldError {
    fn from(e: RenderError) -> Self {
        match e {
            RenderError::UnknownBody(id) => WorldError::UnknownBody(id),
            RenderError::TargetNotOnRegion(id) => WorldError::Invariant(format!("target `{id}` not on a region")),
        }
    }
}

fn pixel_center(origin: f64, i: usize) -> f64 {
    origin + PIXEL * (i as f64 + 0.5)
}

/// Indices of pixels whose centers lie strictly inside `(lo, hi)`.
fn covered(origin: f64, lo: f64, hi: f64) -> std::ops::Range<usize> {
    // Coarse guess, then walk to the exact boundary; centers are monotone.
    let guess = ((lo - origin) / PIXEL - 1.5).floor().clamp(0.0, IMAGE_SIZE as f64) as usize;
    let mut a = guess;
    while a < IMAGE_SIZE && pixel_center(origin, a) <= lo {
        a += 1;
    }
    let mut b = a;
    while b < IMAGE_SIZE && pixel_center(origin, b) < hi {
        b += 1;
    }
    a..b
}

fn splat(channel: &mut [f32], origin: (f64, f64), body_center: Vec3, half: Vec3, height: f32) {
    let cols = covered(origin.0, body_center.x - half.x, body_center.x + half.x);
    let rows = covered(origin.1, body_center.y - half.y, body_center.y + half.y);
    for r in rows {
        let row = &mut channel[r * IMAGE_SIZE..(r + 1) * IMAGE_SIZE];
        for px in &mut row[cols.clone()] {
            if height > *px {
                *px = height;
            }
        }
    }
}

/// Renders the observation for a real body or a hypothetical placement.
pub fn render_observation(scene: &Scene, target: Target<'_>) -> Result<DepthObservation, RenderError> {
    let (id, center, half) = match target {
        Target::Body(id) => {
            let b = scene.body(id).ok_or_else(|| RenderError::UnknownBody(id.to_string()))?;
            (b.id.as_str(), b.center, b.half_extents)
        }
        Target::Placement { body, center } => (body.id.as_str(), center, body.half_extents),
    };
    let region = scene
        .supporting_region(center, half)
        .ok_or_else(|| RenderError::TargetNotOnRegion(id.to_string()))?;
    let base = region.top_z();
    let origin = (center.x - WINDOW / 2.0, center.y - WINDOW / 2.0);

    let mut obs = DepthObservation::zeros();
    let (ch0, ch1) = obs.channels.split_at_mut(CHANNEL_LEN);
    let target_height = (center.z + half.z - base).max(0.0) as f32;
    splat(ch0, origin, center, half, target_height);
    for b in scene.bodies.iter().filter(|b| b.id != id) {
        let h = (b.top() - base).max(0.0) as f32;
        if h > 0.0 {
            splat(ch1, origin, b.center, b.half_extents, h);
        }
    }
    // Robot base sits at the world origin.
    obs.feature = [center.x as f32, center.y as f32, base as f32];
    debug_assert!((center.z - half.z - base).abs() <= CONTACT_EPS);
    Ok(obs)
}

/// 16-bit binary PGM of one channel.
pub fn write_pgm(obs: &DepthObservation, channel: usize) -> Vec<u8> {
    assert!(channel < 2, "channel must be 0 or 1");
    let mut out = format!("P5\n{IMAGE_SIZE} {IMAGE_SIZE}\n65535\n").into_bytes();
    out.reserve(2 * CHANNEL_LEN);
    for &h in obs.channel(channel) {
        let v = (h as f64 / PGM_FULL_SCALE * 65535.0).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

/// A run of equal, nonzero pixels within one channel row-major order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Run {
    pub start: u16,
    pub len: u16,
    pub value: f32,
}

/// Lossless run-length form of an observation. Height maps of a few boxes
/// are mostly zero, so this is ~100x smaller than the dense form.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactObservation {
    pub runs: [Vec<Run>; 2],
    pub feature: [f32; 3],
}

impl CompactObservation {
    pub fn encode(obs: &DepthObservation) -> Self {
        let mut runs: [Vec<Run>; 2] = [Vec::new(), Vec::new()];
        for (ch, out) in runs.iter_mut().enumerate() {
            let data = obs.channel(ch);
            let mut i = 0;
            while i < CHANNEL_LEN {
                let v = data[i];
                // Only +0.0 is background; anything else, -0.0 included, is kept.
                if v.to_bits() == 0 {
                    i += 1;
                    continue;
                }
                let start = i;
                while i < CHANNEL_LEN && data[i].to_bits() == v.to_bits() {
                    i += 1;
                }
                out.push(Run {
                    start: start as u16,
                    len: (i - start) as u16,
                    value: v,
                });
            }
            out.shrink_to_fit();
        }
        CompactObservation {
            runs,
            feature: obs.feature,
        }
    }

    pub fn decode_into(&self, channels: &mut [f32]) {
        channels.fill(0.0);
        for (ch, runs) in self.runs.iter().enumerate() {
            let base = ch * CHANNEL_LEN;
            for r in runs {
                let s = base + r.start as usize;
                channels[s..s + r.len as usize].fill(r.value);
            }
        }
    }

    pub fn decode(&self) -> DepthObservation {
        let mut obs = DepthObservation::zeros();
        self.decode_into(&mut obs.channels);
        obs.feature = self.feature;
        obs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{GripperModel, ReachModel, Region};

    fn scene(bodies: Vec<BoxBody>) -> Scene {
        Scene {
            regions: vec![Region {
                id: "t".into(),
                center: Vec3::new(0.5, 0.0, 0.2),
                half_x: 0.5,
                half_y: 0.5,
            }],
            bodies,
            reach: ReachModel::default(),
            gripper: GripperModel::default(),
        }
    }

    fn body(id: &str, x: f64, y: f64, h: Vec3) -> BoxBody {
        BoxBody {
            id: id.into(),
            half_extents: h,
            center: Vec3::new(x, y, 0.2 + h.z),
            region_id: "t".into(),
        }
    }

    #[test]
    fn lone_target() {
        let s = scene(vec![body("a", 0.5, 0.0, Vec3::new(0.02, 0.02, 0.05))]);
        let obs = render_observation(&s, Target::Body("a")).unwrap();
        for (r, c) in [(49, 49), (49, 50), (50, 49), (50, 50)] {
            assert!((obs.pixel(0, r, c) - 0.10).abs() < 1e-6);
        }
        assert!(obs.channel(1).iter().all(|&v| v == 0.0));
        // 0.04 m square at 5 mm pixels.
        assert_eq!(obs.channel(0).iter().filter(|&&v| v > 0.0).count(), 64);
        assert_eq!(obs.feature, [0.5, 0.0, 0.2]);
    }

    #[test]
    fn neighbor_columns() {
        let t = Vec3::new(0.02, 0.02, 0.05);
        let far = scene(vec![body("a", 0.5, 0.0, t), body("n", 0.85, 0.0, Vec3::new(0.03, 0.03, 0.04))]);
        let obs = render_observation(&far, Target::Body("a")).unwrap();
        assert!(obs.channel(1).iter().all(|&v| v == 0.0));

        let near = scene(vec![body("a", 0.5, 0.0, t), body("n", 0.6, 0.0, Vec3::new(0.03, 0.03, 0.04))]);
        let obs = render_observation(&near, Target::Body("a")).unwrap();
        let cols: Vec<usize> = (0..IMAGE_SIZE).filter(|&c| obs.pixel(1, 50, c) > 0.0).collect();
        assert_eq!(cols, (64..=75).collect::<Vec<_>>());
        assert!((obs.pixel(1, 50, 70) - 0.08).abs() < 1e-6);
    }

    #[test]
    fn pgm_encoding() {
        let mut obs = DepthObservation::zeros();
        let pgm = write_pgm(&obs, 1);
        let header = b"P5\n100 100\n65535\n";
        assert_eq!(&pgm[..header.len()], header);
        assert!(pgm[header.len()..].iter().all(|&b| b == 0));
        obs.channels[0] = 0.5;
        obs.channels[1] = 0.9;
        let pgm = write_pgm(&obs, 0);
        assert_eq!(&pgm[header.len()..header.len() + 4], &[0xff, 0xff, 0xff, 0xff]);
    }

    #[test]
    fn placement_matches_real_body() {
        let h = Vec3::new(0.03, 0.02, 0.04);
        let other = body("n", 0.62, 0.05, Vec3::new(0.03, 0.03, 0.06));
        let real = scene(vec![body("a", 0.55, 0.01, h), other.clone()]);
        let ghost = body("a", 0.0, 0.0, h);
        let hypo = scene(vec![other]);
        let a = render_observation(&real, Target::Body("a")).unwrap();
        let b = render_observation(
            &hypo,
            Target::Placement {
                body: &ghost,
                center: Vec3::new(0.55, 0.01, 0.24),
            },
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(CompactObservation::encode(&a).decode(), a);
    }
}
