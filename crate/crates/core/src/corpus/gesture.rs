//! Gesture vocabulary and the frame renderer.
//!
//! A video is a static background with a Gaussian "hand" blob that is only
//! present while a gesture (or a distractor movement) is being performed.

use std::f64::consts::PI;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trajectory {
    SwipeRight,
    SwipeLeft,
    SwipeUp,
    SwipeDown,
    CircleCw,
    CircleCcw,
    Tap,
    Shake,
}

impl Trajectory {
    pub const ALL: [Trajectory; 8] = [
        Trajectory::SwipeRight,
        Trajectory::SwipeLeft,
        Trajectory::SwipeUp,
        Trajectory::SwipeDown,
        Trajectory::CircleCw,
        Trajectory::CircleCcw,
        Trajectory::Tap,
        Trajectory::Shake,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Trajectory::SwipeRight => "swipe-right",
            Trajectory::SwipeLeft => "swipe-left",
            Trajectory::SwipeUp => "swipe-up",
            Trajectory::SwipeDown => "swipe-down",
            Trajectory::CircleCw => "circle-cw",
            Trajectory::CircleCcw => "circle-ccw",
            Trajectory::Tap => "tap",
            Trajectory::Shake => "shake",
        }
    }

    /// Hand pose at normalized time `u` in `[0, 1]` relative to the gesture
    /// center, for amplitude `a` (pixels). Image y grows downwards.
    pub fn pose(self, u: f64, a: f64) -> Pose {
        let sweep = a * (2.0 * u - 1.0);
        let (dx, dy) = match self {
            Trajectory::SwipeRight => (sweep, 0.0),
            Trajectory::SwipeLeft => (-sweep, 0.0),
            Trajectory::SwipeUp => (0.0, -sweep),
            Trajectory::SwipeDown => (0.0, sweep),
            Trajectory::CircleCw => {
                let th = PI + 2.0 * PI * u;
                (0.7 * a * th.cos(), 0.7 * a * th.sin())
            }
            Trajectory::CircleCcw => {
                let th = PI - 2.0 * PI * u;
                (0.7 * a * th.cos(), 0.7 * a * th.sin())
            }
            Trajectory::Tap | Trajectory::Shake => (0.0, 0.0),
        };
        match self {
            Trajectory::Tap => {
                let bump = (PI * u).sin();
                Pose {
                    dx,
                    dy,
                    gain: 1.0 + 0.8 * bump,
                    spread: 1.0 + 0.5 * bump,
                }
            }
            Trajectory::Shake => Pose {
                dx: 0.6 * a * (4.0 * PI * u).sin(),
                dy,
                gain: 1.0,
                spread: 1.0,
            },
            _ => Pose {
                dx,
                dy,
                gain: 1.0,
                spread: 1.0,
            },
        }
    }
}

impl FromStr for Trajectory {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Trajectory::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown trajectory '{s}'")))
    }
}

/// Offset from the gesture center plus multiplicative intensity and size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub dx: f64,
    pub dy: f64,
    pub gain: f64,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureSpec {
    pub class_id: usize,
    pub trajectory: Trajectory,
    /// Inclusive range of raw frame counts.
    pub duration: (usize, usize),
    pub radius: f64,
    pub intensity: f64,
}

/// The first `n` gestures of the built-in vocabulary, class ids from 1.
pub fn default_gestures(n: usize, duration: (usize, usize)) -> Result<Vec<GestureSpec>> {
    if n == 0 || n > Trajectory::ALL.len() {
        return Err(Error::Config(format!(
            "class count must be in 1..={}, got {n}",
            Trajectory::ALL.len()
        )));
    }
    Ok(Trajectory::ALL[..n]
        .iter()
        .enumerate()
        .map(|(i, &trajectory)| GestureSpec {
            class_id: i + 1,
            trajectory,
            duration,
            radius: 3.0,
            intensity: 1.0,
        })
        .collect())
}

/// Hand blob drawn into one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub intensity: f64,
}

/// Static per-video scene: constant level plus a vertical ramp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scene {
    pub level: f64,
    pub ramp: f64,
}

pub fn render_frame(scene: Scene, blob: Option<Blob>, height: usize, width: usize, out: &mut [f64]) {
    for y in 0..height {
        let base = scene.level + scene.ramp * y as f64 / height as f64;
        for x in 0..width {
            let mut v = base;
            if let Some(b) = blob {
                let d2 = (x as f64 - b.x).powi(2) + (y as f64 - b.y).powi(2);
                v += b.intensity * (-d2 / (2.0 * b.radius * b.radius)).exp();
            }
            out[y * width + x] = v;
        }
    }
}
