//! Occupancy-grid world model, per-state freeness and edge collision checks.
//!
//! The robot is modeled as a point; obstacle inflation is available for maps
//! that need a footprint margin. Cells are addressed by flooring the world
//! position, with the map's upper/right boundary resolving into the last cell
//! so that cell corners on the map border are still inside the map.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::steering::Trajectory;

/// Binary raster occupancy map. `cells` is row-major with row 0 at the
/// bottom (min-y); the ASCII file format stores rows top-down.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: [f64; 2],
    cells: Vec<bool>,
}

#[derive(Debug, Error)]
pub enum MapError {
    #[error("malformed map header: {0}")]
    MalformedHeader(String),
    #[error("map dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("map io error: {0}")]
    Io(#[from] std::io::Error),
}

impl OccupancyGrid {
    pub fn new(width: usize, height: usize, resolution: f64, origin: [f64; 2]) -> Self {
        OccupancyGrid {
            width,
            height,
            resolution,
            origin,
            cells: vec![false; width * height],
        }
    }

    pub fn set_occupied(&mut self, x: usize, y: usize, occupied: bool) {
        self.cells[y * self.width + x] = occupied;
    }

    pub fn is_occupied(&self, x: usize, y: usize) -> bool {
        self.cells[y * self.width + x]
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Cell indices of a world position, or None if outside the map. The
    /// upper/right map boundary maps into the last row/column.
    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let mut idx = [0usize; 2];
        for (i, extent) in [(0, self.width), (1, self.height)] {
            let rel = (p[i] - self.origin[i]) / self.resolution;
            if rel < 0.0 || rel > extent as f64 {
                return None;
            }
            idx[i] = (rel.floor() as usize).min(extent - 1);
        }
        Some((idx[0], idx[1]))
    }

    /// True iff the position falls in a free cell inside the map.
    pub fn position_free(&self, p: [f64; 2]) -> bool {
        match self.cell_of(p) {
            Some((x, y)) => !self.is_occupied(x, y),
            None => false,
        }
    }

    /// Disc inflation: every cell within `radius` cells of an occupied cell
    /// becomes occupied.
    pub fn inflate(&self, radius: usize) -> OccupancyGrid {
        if radius == 0 {
            return self.clone();
        }
        let mut out = self.clone();
        let r = radius as i64;
        for y in 0..self.height as i64 {
            for x in 0..self.width as i64 {
                if !self.is_occupied(x as usize, y as usize) {
                    continue;
                }
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx * dx + dy * dy > r * r {
                            continue;
                        }
                        let (nx, ny) = (x + dx, y + dy);
                        if nx >= 0 && ny >= 0 && nx < self.width as i64 && ny < self.height as i64 {
                            out.set_occupied(nx as usize, ny as usize, true);
                        }
                    }
                }
            }
        }
        out
    }

    /// Serialize in the ASCII map format; round-trips exactly through
    /// [`load_map`].
    pub fn to_ascii(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} {} {} {} {}",
            self.width, self.height, self.resolution, self.origin[0], self.origin[1]
        );
        for row in (0..self.height).rev() {
            for col in 0..self.width {
                s.push(if self.is_occupied(col, row) { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), MapError> {
        std::fs::write(path, self.to_ascii())?;
        Ok(())
    }
}

/// True iff the state's position falls in a free cell inside the map.
pub fn state_free(q: &crate::geometry::State, map: &OccupancyGrid) -> bool {
    map.position_free(q.position())
}

/// Edge collision check: every stored sample plus linearly interpolated
/// positions at spacing <= resolution/2 between consecutive samples must be
/// free.
pub fn collision_free(edge: &Trajectory, map: &OccupancyGrid) -> bool {
    let max_gap = map.resolution / 2.0;
    for pair in edge.states.windows(2) {
        let a = pair[0].position();
        let b = pair[1].position();
        if !map.position_free(a) {
            return false;
        }
        let dist = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let subdivisions = (dist / max_gap).ceil() as usize;
        for k in 1..subdivisions {
            let t = k as f64 / subdivisions as f64;
            let p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            if !map.position_free(p) {
                return false;
            }
        }
    }
    match edge.states.last() {
        Some(q) => map.position_free(q.position()),
        None => true,
    }
}

fn parse_ascii(text: &str) -> Result<OccupancyGrid, MapError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| MapError::MalformedHeader("empty file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(MapError::MalformedHeader(format!(
            "expected 'W H resolution origin_x origin_y', got '{header}'"
        )));
    }
    let width: usize = fields[0]
        .parse()
        .map_err(|_| MapError::MalformedHeader("bad width".into()))?;
    let height: usize = fields[1]
        .parse()
        .map_err(|_| MapError::MalformedHeader("bad height".into()))?;
    let resolution: f64 = fields[2]
        .parse()
        .map_err(|_| MapError::MalformedHeader("bad resolution".into()))?;
    let origin = [
        fields[3]
            .parse()
            .map_err(|_| MapError::MalformedHeader("bad origin_x".into()))?,
        fields[4]
            .parse()
            .map_err(|_| MapError::MalformedHeader("bad origin_y".into()))?,
    ];
    if resolution <= 0.0 {
        return Err(MapError::MalformedHeader("resolution must be positive".into()));
    }
    let mut map = OccupancyGrid::new(width, height, resolution, origin);
    let mut rows = 0usize;
    for (line_no, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        if rows >= height {
            return Err(MapError::DimensionMismatch(format!(
                "more than {height} data rows"
            )));
        }
        if line.chars().count() != width {
            return Err(MapError::DimensionMismatch(format!(
                "row {line_no} has {} cells, expected {width}",
                line.chars().count()
            )));
        }
        // row 0 of the file is the top (max-y) row
        let y = height - 1 - rows;
        for (x, c) in line.chars().enumerate() {
            match c {
                '0' => {}
                '1' => map.set_occupied(x, y, true),
                // unknown cells are treated as occupied
                _ => map.set_occupied(x, y, true),
            }
        }
        rows += 1;
    }
    if rows != height {
        return Err(MapError::DimensionMismatch(format!(
            "found {rows} data rows, expected {height}"
        )));
    }
    Ok(map)
}

fn parse_meta(path: &Path) -> Result<(f64, [f64; 2], u16), MapError> {
    let meta_path = path.with_extension(format!(
        "{}.meta",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let text = std::fs::read_to_string(&meta_path).map_err(|_| {
        MapError::MalformedHeader(format!("missing sidecar {}", meta_path.display()))
    })?;
    let mut resolution = None;
    let mut origin = [0.0, 0.0];
    let mut threshold = 127u16;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| MapError::MalformedHeader(format!("bad meta line '{line}'")))?;
        let value = value.trim();
        match key {
            "resolution" => {
                resolution = Some(value.parse().map_err(|_| {
                    MapError::MalformedHeader("bad meta resolution".into())
                })?)
            }
            "origin_x" => {
                origin[0] = value
                    .parse()
                    .map_err(|_| MapError::MalformedHeader("bad meta origin_x".into()))?
            }
            "origin_y" => {
                origin[1] = value
                    .parse()
                    .map_err(|_| MapError::MalformedHeader("bad meta origin_y".into()))?
            }
            "occupied_threshold" => {
                threshold = value
                    .parse()
                    .map_err(|_| MapError::MalformedHeader("bad meta threshold".into()))?
            }
            _ => {}
        }
    }
    let resolution =
        resolution.ok_or_else(|| MapError::MalformedHeader("meta missing resolution".into()))?;
    Ok((resolution, origin, threshold))
}

fn parse_pgm(bytes: &[u8], path: &Path) -> Result<OccupancyGrid, MapError> {
    let (resolution, origin, threshold) = parse_meta(path)?;
    let mut tokens: Vec<String> = Vec::new();
    let mut pos = 0usize;
    let binary = bytes.starts_with(b"P5");
    // header tokens: magic, width, height, maxval (comments skipped)
    while tokens.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if tokens.len() < 4 {
        return Err(MapError::MalformedHeader("truncated raster header".into()));
    }
    let width: usize = tokens[1]
        .parse()
        .map_err(|_| MapError::MalformedHeader("bad raster width".into()))?;
    let height: usize = tokens[2]
        .parse()
        .map_err(|_| MapError::MalformedHeader("bad raster height".into()))?;
    let pixels: Vec<u16> = if binary {
        pos += 1; // single whitespace after maxval
        bytes[pos..].iter().map(|&b| b as u16).collect()
    } else {
        String::from_utf8_lossy(&bytes[pos..])
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| MapError::MalformedHeader("bad raster pixel".into()))
            })
            .collect::<Result<_, _>>()?
    };
    if pixels.len() != width * height {
        return Err(MapError::DimensionMismatch(format!(
            "raster has {} pixels, expected {}",
            pixels.len(),
            width * height
        )));
    }
    let mut map = OccupancyGrid::new(width, height, resolution, origin);
    for row in 0..height {
        let y = height - 1 - row; // raster row 0 is the top
        for x in 0..width {
            // dark pixels (and anything at or below the threshold) are occupied
            if pixels[row * width + x] <= threshold {
                map.set_occupied(x, y, true);
            }
        }
    }
    Ok(map)
}

/// Load an occupancy map from the ASCII format or a P2/P5 raster with a
/// `.meta` sidecar.
pub fn load_map(path: &Path) -> Result<OccupancyGrid, MapError> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P2") {
        parse_pgm(&bytes, path)
    } else {
        parse_ascii(&String::from_utf8_lossy(&bytes))
    }
}
