//! Agent-facing encodings of the simulator state: rasterized grayscale frames
//! stacked four deep, and the queue-count features of the shallow baseline.
//!
//! Palette: background 1.0, road 0.8, vehicles 0.0, stop line of a green
//! approach 0.5.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{Approach, IntersectionState, LaneKind, Phase};

pub const BACKGROUND: f64 = 1.0;
pub const ROAD: f64 = 0.8;
pub const VEHICLE: f64 = 0.0;
pub const GREEN_STOP_LINE: f64 = 0.5;

/// Number of frames in an observation stack.
pub const STACK_DEPTH: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Frame {
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Frame {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::shape("frame pixels", &[height, width], &[pixels.len()]));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidGeometry("pixel outside [0, 1]".into()));
        }
        Ok(Frame {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Row-major intensities.
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    fn fill_rect(&mut self, rect: Rect, value: f64) {
        for y in rect.y..rect.y + rect.h {
            let row = y * self.width;
            self.pixels[row + rect.x..row + rect.x + rect.w].fill(value);
        }
    }

    /// Binary portable graymap (P5), 0..=255 linear in intensity.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(
            self.pixels
                .iter()
                .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub frame_width: usize,
    pub frame_height: usize,
    /// Draw the stop line of green approaches.
    pub show_signal: bool,
    /// Side of a cell in pixels. Derived from the frame size when absent.
    pub cell_px: Option<usize>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            frame_width: 64,
            frame_height: 64,
            show_signal: true,
            cell_px: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    fn overlaps(&self, other: &Rect) -> bool {
        self.x < other.x + other.w
            && other.x < self.x + self.w
            && self.y < other.y + other.h
            && other.y < self.y + self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }
}

/// Pixel placement of every lane cell and stop line.
///
/// North/south traffic uses two adjacent columns through the frame centre,
/// east/west traffic two adjacent rows; incoming lanes start at the frame
/// edge and outgoing lanes end at the opposite edge.
#[derive(Debug, Clone)]
pub struct Renderer {
    config: RenderConfig,
    lane_length: usize,
    cell_px: usize,
    /// Indexed by [approach][kind][cell].
    cells: [[Vec<Rect>; 2]; 4],
    stop_lines: [Rect; 4],
    base: Frame,
}

impl Renderer {
    pub fn new(config: RenderConfig, lane_length: usize) -> Result<Self> {
        let (w, h) = (config.frame_width, config.frame_height);
        if w == 0 || h == 0 {
            return Err(Error::InvalidGeometry("frame dimensions must be positive".into()));
        }
        if lane_length == 0 {
            return Err(Error::InvalidGeometry("lane length must be positive".into()));
        }
        let s = match config.cell_px {
            Some(s) => s,
            None => w.min(h) / (2 * lane_length + 4),
        };
        if s == 0 {
            return Err(Error::InvalidGeometry(format!(
                "a {w}x{h} frame cannot hold lanes of {lane_length} cells"
            )));
        }
        let l = lane_length;
        let (cx, cy) = (w / 2, h / 2);
        if cx < s || cy < s || l * s > w.max(h) {
            return Err(Error::InvalidGeometry(format!(
                "cell size {s} too large for a {w}x{h} frame"
            )));
        }
        let sq = |x: usize, y: usize| Rect { x, y, w: s, h: s };

        let mut cells: [[Vec<Rect>; 2]; 4] = Default::default();
        let mut stop_lines = [sq(0, 0); 4];
        let sub = |a: usize, b: usize| {
            a.checked_sub(b)
                .ok_or_else(|| Error::InvalidGeometry(format!("cell size {s} overflows the frame")))
        };
        for approach in Approach::ALL {
            let a = approach.index();
            let mut incoming = Vec::with_capacity(l);
            let mut outgoing = Vec::with_capacity(l);
            for i in 0..l {
                let (inc, out) = match approach {
                    // southbound column, top to bottom
                    Approach::N => (sq(cx - s, i * s), sq(cx - s, sub(h, (l - i) * s)?)),
                    // northbound column, bottom to top
                    Approach::S => (
                        sq(cx, sub(h, (i + 1) * s)?),
                        sq(cx, sub(l * s, (i + 1) * s)?),
                    ),
                    // westbound row, right to left
                    Approach::E => (
                        sq(sub(w, (i + 1) * s)?, cy - s),
                        sq(sub(l * s, (i + 1) * s)?, cy - s),
                    ),
                    // eastbound row, left to right
                    Approach::W => (sq(i * s, cy), sq(sub(w, (l - i) * s)?, cy)),
                };
                incoming.push(inc);
                outgoing.push(out);
            }
            stop_lines[a] = match approach {
                Approach::N => sq(cx - s, l * s),
                Approach::S => sq(cx, sub(h, (l + 1) * s)?),
                Approach::E => sq(sub(w, (l + 1) * s)?, cy - s),
                Approach::W => sq(l * s, cy),
            };
            cells[a] = [incoming, outgoing];
        }

        let all: Vec<Rect> = cells
            .iter()
            .flat_map(|k| k.iter().flatten().copied())
            .chain(stop_lines.iter().copied())
            .collect();
        for r in &all {
            if r.x + r.w > w || r.y + r.h > h {
                return Err(Error::InvalidGeometry(format!("{r:?} lies outside the frame")));
            }
        }
        for (i, a) in all.iter().enumerate() {
            if let Some(b) = all[i + 1..].iter().find(|b| a.overlaps(b)) {
                return Err(Error::InvalidGeometry(format!("{a:?} overlaps {b:?}")));
            }
        }

        let mut base = Frame::filled(w, h, BACKGROUND);
        base.fill_rect(Rect { x: cx - s, y: 0, w: 2 * s, h }, ROAD);
        base.fill_rect(Rect { x: 0, y: cy - s, w, h: 2 * s }, ROAD);

        Ok(Renderer {
            config,
            lane_length,
            cell_px: s,
            cells,
            stop_lines,
            base,
        })
    }

    pub fn config(&self) -> &RenderConfig {
        &self.config
    }

    pub fn cell_px(&self) -> usize {
        self.cell_px
    }

    pub fn cell_rect(&self, approach: Approach, kind: LaneKind, cell: usize) -> Rect {
        let k = match kind {
            LaneKind::Incoming => 0,
            LaneKind::Outgoing => 1,
        };
        self.cells[approach.index()][k][cell]
    }

    pub fn stop_line_rect(&self, approach: Approach) -> Rect {
        self.stop_lines[approach.index()]
    }

    pub fn render(&self, state: &IntersectionState) -> Result<Frame> {
        if state.lane_length() != self.lane_length {
            return Err(Error::InvalidGeometry(format!(
                "renderer built for {}-cell lanes, state has {}",
                self.lane_length,
                state.lane_length()
            )));
        }
        let mut frame = self.base.clone();
        if self.config.show_signal {
            for approach in Approach::ALL {
                if approach.is_green(state.phase) {
                    frame.fill_rect(self.stop_line_rect(approach), GREEN_STOP_LINE);
                }
            }
        }
        for lane in state.lanes() {
            for (cell, _) in lane.occupancy() {
                frame.fill_rect(self.cell_rect(lane.approach, lane.kind, cell), VEHICLE);
            }
        }
        Ok(frame)
    }
}

/// One-shot rasterization; prefer a long-lived [`Renderer`] in loops.
pub fn rasterize(state: &IntersectionState, geometry: &RenderConfig) -> Result<Frame> {
    Renderer::new(*geometry, state.lane_length())?.render(state)
}

/// The last four frames, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    frames: [Arc<Frame>; STACK_DEPTH],
}

impl Observation {
    /// Start-of-episode stack: the first frame replicated.
    pub fn new(first: Frame) -> Self {
        let f = Arc::new(first);
        Observation {
            frames: std::array::from_fn(|_| Arc::clone(&f)),
        }
    }

    pub fn frames(&self) -> &[Arc<Frame>; STACK_DEPTH] {
        &self.frames
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    /// Returns the stack with the oldest frame dropped and `frame` appended.
    pub fn push_frame(&self, frame: Frame) -> Result<Observation> {
        if frame.dims() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: frame.dims(),
            });
        }
        let mut frames = self.frames.clone();
        frames.rotate_left(1);
        frames[STACK_DEPTH - 1] = Arc::new(frame);
        Ok(Observation { frames })
    }

    /// Network input of shape `[4, H, W]`, encoded as darkness `1 - intensity`
    /// so that empty background is zero.
    pub fn write_input(&self, out: &mut Vec<f64>) {
        for f in &self.frames {
            out.extend(f.pixels().iter().map(|p| 1.0 - p));
        }
    }
}

/// Inputs of the shallow baseline: stationary vehicles per approach and the
/// one-hot current phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnnFeatures {
    pub queue_counts: [u32; 4],
    pub phase_onehot: [u8; 2],
}

impl SnnFeatures {
    pub const WIDTH: usize = 6;

    /// Layout `[qN, qS, qE, qW, nsg, ewg]`.
    pub fn write_input(&self, out: &mut Vec<f64>) {
        out.extend(self.queue_counts.iter().map(|&q| q as f64));
        out.extend(self.phase_onehot.iter().map(|&b| b as f64));
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::WIDTH);
        self.write_input(&mut v);
        v
    }
}

pub fn snn_features(state: &IntersectionState) -> SnnFeatures {
    let mut phase_onehot = [0; 2];
    phase_onehot[state.phase.index()] = 1;
    SnnFeatures {
        queue_counts: state.queue_counts(),
        phase_onehot,
    }
}

/// Phase one-hot as used by [`SnnFeatures`].
pub fn phase_onehot(phase: Phase) -> [u8; 2] {
    let mut v = [0; 2];
    v[phase.index()] = 1;
    v
}
