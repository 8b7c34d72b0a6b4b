//! Grid environment: the 4-connected passable-cell graph, MovingAI `.map` /
//! `.scen` ingestion, and distance primitives.
//!
//! Coordinates are `(x = column, y = row)` with the origin in the top-left
//! corner, matching the field order of `.scen` files.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A grid cell, addressed by column `x` and row `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Vertex {
    pub x: u32,
    pub y: u32,
}

impl Vertex {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    /// Row-major ordering key, used wherever ties must be broken by `(y, x)`.
    pub fn row_major(self) -> (u32, u32) {
        (self.y, self.x)
    }

    pub fn is_adjacent(self, other: Vertex) -> bool {
        manhattan(self, other) == 1
    }
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// `|a.x - b.x| + |a.y - b.y|`.
pub fn manhattan(a: Vertex, b: Vertex) -> u32 {
    a.x.abs_diff(b.x) + a.y.abs_diff(b.y)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MapError {
    #[error("line {line}: malformed header, expected `{expected}`")]
    Header { line: usize, expected: &'static str },
    #[error("line {line}: invalid dimension `{value}`")]
    Dimension { line: usize, value: String },
    #[error("line {line}: expected {expected} cells, found {found}")]
    LineLength { line: usize, expected: usize, found: usize },
    #[error("line {line}: unknown cell character `{ch}`")]
    UnknownCell { line: usize, ch: char },
    #[error("line {line}: expected {expected} map rows, found {found}")]
    RowCount { line: usize, expected: usize, found: usize },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("line 1: missing `version` header")]
    MissingVersion,
    #[error("line {line}: expected 9 fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: field `{field}` is not numeric: `{value}`")]
    NotNumeric { line: usize, field: &'static str, value: String },
    #[error("line {line}: scenario dimensions {width}x{height} do not match map {map_width}x{map_height}")]
    DimensionMismatch { line: usize, width: u32, height: u32, map_width: u32, map_height: u32 },
    #[error("line {line}: start on obstacle at {at}")]
    StartOnObstacle { line: usize, at: Vertex },
    #[error("line {line}: goal on obstacle at {at}")]
    GoalOnObstacle { line: usize, at: Vertex },
}

fn cell_is_passable(ch: u8) -> Option<bool> {
    match ch {
        b'.' | b'G' => Some(true),
        b'@' | b'O' | b'T' | b'W' => Some(false),
        _ => None,
    }
}

/// Immutable passable-cell grid. Cells keep their original map character so
/// that a parsed map serializes back to the identical body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMap {
    width: u32,
    height: u32,
    cells: Vec<u8>,
    map_type: String,
}

impl GridMap {
    /// Builds a map from per-row strings using the `.map` cell alphabet.
    pub fn from_rows<S: AsRef<str>>(rows: &[S]) -> Result<Self, MapError> {
        let height = rows.len();
        if height == 0 {
            return Err(MapError::RowCount { line: 1, expected: 1, found: 0 });
        }
        let width = rows[0].as_ref().len();
        if width == 0 {
            return Err(MapError::LineLength { line: 1, expected: 1, found: 0 });
        }
        let mut cells = Vec::with_capacity(width * height);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref().as_bytes();
            if row.len() != width {
                return Err(MapError::LineLength { line: i + 1, expected: width, found: row.len() });
            }
            for &ch in row {
                if cell_is_passable(ch).is_none() {
                    return Err(MapError::UnknownCell { line: i + 1, ch: ch as char });
                }
                cells.push(ch);
            }
        }
        Ok(Self { width: width as u32, height: height as u32, cells, map_type: "octile".into() })
    }

    /// Builds a map from a passability predicate; impassable cells use `@`.
    pub fn from_fn(width: u32, height: u32, mut passable: impl FnMut(Vertex) -> bool) -> Self {
        assert!(width >= 1 && height >= 1, "grid must be at least 1x1");
        let mut cells = Vec::with_capacity((width * height) as usize);
        for y in 0..height {
            for x in 0..width {
                cells.push(if passable(Vertex::new(x, y)) { b'.' } else { b'@' });
            }
        }
        Self { width, height, cells, map_type: "octile".into() }
    }

    pub fn open(width: u32, height: u32) -> Self {
        Self::from_fn(width, height, |_| true)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn in_bounds(&self, v: Vertex) -> bool {
        v.x < self.width && v.y < self.height
    }

    pub fn index(&self, v: Vertex) -> usize {
        (v.y * self.width + v.x) as usize
    }

    pub fn vertex(&self, index: usize) -> Vertex {
        Vertex::new(index as u32 % self.width, index as u32 / self.width)
    }

    pub fn is_passable(&self, v: Vertex) -> bool {
        self.in_bounds(v) && cell_is_passable(self.cells[self.index(v)]).unwrap_or(false)
    }

    /// Passable cells in row-major order.
    pub fn passable_cells(&self) -> impl Iterator<Item = Vertex> + '_ {
        (0..self.cells.len()).map(|i| self.vertex(i)).filter(|&v| self.is_passable(v))
    }

    pub fn passable_count(&self) -> usize {
        self.cells.iter().filter(|&&c| cell_is_passable(c) == Some(true)).count()
    }

    /// Passable in-bounds cells at Manhattan distance 1, in the fixed order
    /// up, left, right, down.
    pub fn neighbors(&self, v: Vertex) -> impl Iterator<Item = Vertex> + '_ {
        let candidates = [
            v.y.checked_sub(1).map(|y| Vertex::new(v.x, y)),
            v.x.checked_sub(1).map(|x| Vertex::new(x, v.y)),
            Some(Vertex::new(v.x + 1, v.y)),
            Some(Vertex::new(v.x, v.y + 1)),
        ];
        candidates.into_iter().flatten().filter(move |&u| self.is_passable(u))
    }

    /// Breadth-first distances from `source` over passable cells, indexed by
    /// [`GridMap::index`]. Unreachable cells hold `u32::MAX`.
    pub fn bfs_distances(&self, source: Vertex) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.cells.len()];
        if !self.is_passable(source) {
            return dist;
        }
        let mut queue = std::collections::VecDeque::new();
        dist[self.index(source)] = 0;
        queue.push_back(source);
        while let Some(v) = queue.pop_front() {
            let d = dist[self.index(v)];
            for u in self.neighbors(v) {
                let slot = &mut dist[self.index(u)];
                if *slot == u32::MAX {
                    *slot = d + 1;
                    queue.push_back(u);
                }
            }
        }
        dist
    }

    /// The grid body, one line per row, LF-terminated.
    pub fn body(&self) -> String {
        let mut out = String::with_capacity(self.cells.len() + self.height as usize);
        for row in self.cells.chunks(self.width as usize) {
            out.extend(row.iter().map(|&c| c as char));
            out.push('\n');
        }
        out
    }

    /// Full `.map` text including the 4-line header.
    pub fn to_map_string(&self) -> String {
        format!(
            "type {}\nheight {}\nwidth {}\nmap\n{}",
            self.map_type,
            self.height,
            self.width,
            self.body()
        )
    }
}

fn header_value<'a>(line: Option<(usize, &'a str)>, key: &'static str, expected: &'static str) -> Result<(usize, &'a str), MapError> {
    let (idx, text) = line.ok_or(MapError::Header { line: 1, expected })?;
    let mut parts = text.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some(k), Some(v), None) if k == key => Ok((idx + 1, v)),
        _ => Err(MapError::Header { line: idx + 1, expected }),
    }
}

/// Parses a MovingAI `.map` file. LF and CRLF line endings are accepted.
pub fn parse_map(text: &str) -> Result<GridMap, MapError> {
    let mut lines = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l)).enumerate();

    let (_, map_type) = header_value(lines.next(), "type", "type <name>")?;
    let map_type = map_type.to_string();
    let (line, h) = header_value(lines.next(), "height", "height <H>")?;
    let height: u32 = h
        .parse()
        .ok()
        .filter(|&h| h > 0)
        .ok_or_else(|| MapError::Dimension { line, value: h.to_string() })?;
    let (line, w) = header_value(lines.next(), "width", "width <W>")?;
    let width: u32 = w
        .parse()
        .ok()
        .filter(|&w| w > 0)
        .ok_or_else(|| MapError::Dimension { line, value: w.to_string() })?;
    match lines.next() {
        Some((_, l)) if l.trim() == "map" => {}
        Some((i, _)) => return Err(MapError::Header { line: i + 1, expected: "map" }),
        None => return Err(MapError::Header { line: 4, expected: "map" }),
    }

    let mut cells = Vec::with_capacity((width * height) as usize);
    let mut rows = 0usize;
    let mut last_line = 4;
    for (i, row) in lines {
        last_line = i + 1;
        if rows == height as usize {
            if row.trim().is_empty() {
                continue;
            }
            return Err(MapError::RowCount { line: i + 1, expected: height as usize, found: rows + 1 });
        }
        let bytes = row.as_bytes();
        if bytes.len() != width as usize {
            return Err(MapError::LineLength { line: i + 1, expected: width as usize, found: bytes.len() });
        }
        for &ch in bytes {
            if cell_is_passable(ch).is_none() {
                return Err(MapError::UnknownCell { line: i + 1, ch: ch as char });
            }
            cells.push(ch);
        }
        rows += 1;
    }
    if rows != height as usize {
        return Err(MapError::RowCount { line: last_line, expected: height as usize, found: rows });
    }
    Ok(GridMap { width, height, cells, map_type })
}

/// One start/goal line of a `.scen` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub bucket: u32,
    pub map_name: String,
    pub start: Vertex,
    pub goal: Vertex,
    /// Octile reference length from the benchmark; informational only.
    pub reference_length: f64,
}

/// Parses a MovingAI `.scen` file against `map`, preserving file order.
pub fn parse_scenario(text: &str, map: &GridMap) -> Result<Vec<ScenarioEntry>, ScenarioError> {
    let mut lines = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l)).enumerate();
    match lines.next() {
        Some((_, l)) if l.split_whitespace().next() == Some("version") => {}
        _ => return Err(ScenarioError::MissingVersion),
    }

    let mut entries = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 9 {
            return Err(ScenarioError::FieldCount { line: line_no, found: fields.len() });
        }
        let uint = |idx: usize, field: &'static str| -> Result<u32, ScenarioError> {
            fields[idx].parse().map_err(|_| ScenarioError::NotNumeric {
                line: line_no,
                field,
                value: fields[idx].to_string(),
            })
        };
        let bucket = uint(0, "bucket")?;
        let width = uint(2, "map width")?;
        let height = uint(3, "map height")?;
        let start = Vertex::new(uint(4, "start x")?, uint(5, "start y")?);
        let goal = Vertex::new(uint(6, "goal x")?, uint(7, "goal y")?);
        let reference_length: f64 = fields[8].parse().map_err(|_| ScenarioError::NotNumeric {
            line: line_no,
            field: "optimal length",
            value: fields[8].to_string(),
        })?;
        if width != map.width() || height != map.height() {
            return Err(ScenarioError::DimensionMismatch {
                line: line_no,
                width,
                height,
                map_width: map.width(),
                map_height: map.height(),
            });
        }
        if !map.is_passable(start) {
            return Err(ScenarioError::StartOnObstacle { line: line_no, at: start });
        }
        if !map.is_passable(goal) {
            return Err(ScenarioError::GoalOnObstacle { line: line_no, at: goal });
        }
        entries.push(ScenarioEntry {
            bucket,
            map_name: fields[1].to_string(),
            start,
            goal,
            reference_length,
        });
    }
    Ok(entries)
}

/// Serializes entries in `.scen` format (version 1).
pub fn scenario_to_string(entries: &[ScenarioEntry], map: &GridMap) -> String {
    let mut out = String::from("version 1\n");
    for e in entries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.8}\n",
            e.bucket,
            e.map_name,
            map.width(),
            map.height(),
            e.start.x,
            e.start.y,
            e.goal.x,
            e.goal.y,
            e.reference_length
        ));
    }
    out
}
