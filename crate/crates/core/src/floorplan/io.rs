use std::fs;
use std::io::Write;
use std::path::Path;

use super::FloorplanGrid;
use crate::error::{Error, Result};

/// On-disk floorplan encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridFormat {
    /// `FLOORPLAN v1 <H> <W> <res> <ox> <oy>` header, then `H` rows of `.`/`#`.
    Text,
    /// Binary 8-bit PGM (P5). Resolution and origin live outside the file.
    Pgm,
}

impl GridFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("pgm") => GridFormat::Pgm,
            _ => GridFormat::Text,
        }
    }
}

impl FloorplanGrid {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "FLOORPLAN v1 {} {} {} {} {}\n",
            self.height, self.width, self.resolution, self.origin.0, self.origin.1
        );
        out.reserve(self.height * (self.width + 1));
        for row in self.occupied.chunks(self.width) {
            out.extend(row.iter().map(|&o| if o { '#' } else { '.' }));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::parse("line 1", "empty file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 7 || fields[0] != "FLOORPLAN" || fields[1] != "v1" {
            return Err(Error::parse(
                "line 1",
                "expected `FLOORPLAN v1 <H> <W> <resolution_m> <origin_x> <origin_y>`",
            ));
        }
        let int = |i: usize, name: &str| -> Result<usize> {
            fields[i]
                .parse()
                .map_err(|_| Error::parse("line 1", format!("bad {name} {:?}", fields[i])))
        };
        let float = |i: usize, name: &str| -> Result<f64> {
            fields[i]
                .parse()
                .map_err(|_| Error::parse("line 1", format!("bad {name} {:?}", fields[i])))
        };
        let height = int(2, "height")?;
        let width = int(3, "width")?;
        let resolution = float(4, "resolution")?;
        let origin = (float(5, "origin_x")?, float(6, "origin_y")?);
        let mut cells = Vec::with_capacity(height.saturating_mul(width).min(1 << 28));
        for r in 0..height {
            let lineno = r + 2;
            let line = lines
                .next()
                .ok_or_else(|| Error::parse(format!("line {lineno}"), "missing grid row"))?;
            if line.len() != width {
                return Err(Error::parse(
                    format!("line {lineno}"),
                    format!("expected {width} cells, found {}", line.len()),
                ));
            }
            for (c, ch) in line.bytes().enumerate() {
                cells.push(match ch {
                    b'.' => false,
                    b'#' => true,
                    other => {
                        return Err(Error::parse(
                            format!("line {lineno}, column {}", c + 1),
                            format!("unexpected cell character {:?}", other as char),
                        ))
                    }
                });
            }
        }
        if let Some((i, _)) = lines.enumerate().find(|(_, l)| !l.trim().is_empty()) {
            return Err(Error::parse(
                format!("line {}", height + 2 + i),
                "trailing content after grid rows",
            ));
        }
        FloorplanGrid::from_cells(height, width, resolution, origin, cells)
            .map_err(|e| Error::parse("line 1", e.to_string()))
    }

    /// PGM encoding: 0 = occupied, 255 = free. Row 0 of the grid is the first
    /// image row.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.occupied.iter().map(|&o| if o { 0u8 } else { 255u8 }));
        out
    }

    /// Pixels below 128 are read as occupied.
    pub fn from_pgm(bytes: &[u8], resolution: f64, origin: (f64, f64)) -> Result<Self> {
        let mut pos = 0;
        let mut tokens = Vec::with_capacity(4);
        while tokens.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::parse(format!("byte {start}"), "truncated PGM header"));
            }
            tokens.push((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()));
        }
        if tokens[0].1 != "P5" {
            return Err(Error::parse("byte 0", "expected binary PGM magic `P5`"));
        }
        let num = |i: usize| -> Result<usize> {
            tokens[i]
                .1
                .parse()
                .map_err(|_| Error::parse(format!("byte {}", tokens[i].0), "bad PGM header number"))
        };
        let (width, height, maxval) = (num(1)?, num(2)?, num(3)?);
        if maxval != 255 {
            return Err(Error::parse(
                format!("byte {}", tokens[3].0),
                format!("only 8-bit PGM supported, maxval {maxval}"),
            ));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let expected = width * height;
        if bytes.len() < pos + expected {
            return Err(Error::parse(
                format!("byte {}", bytes.len()),
                format!("raster truncated: need {expected} pixels"),
            ));
        }
        let cells = bytes[pos..pos + expected].iter().map(|&p| p < 128).collect();
        FloorplanGrid::from_cells(height, width, resolution, origin, cells)
    }
}

pub fn save_floorplan(grid: &FloorplanGrid, path: &Path, format: GridFormat) -> Result<()> {
    let mut file = fs::File::create(path)?;
    match format {
        GridFormat::Text => file.write_all(grid.to_text().as_bytes())?,
        GridFormat::Pgm => file.write_all(&grid.to_pgm())?,
    }
    Ok(())
}

pub fn load_floorplan(path: &Path) -> Result<FloorplanGrid> {
    let text = fs::read_to_string(path)?;
    FloorplanGrid::from_text(&text)
}

pub fn save_pgm(grid: &FloorplanGrid, path: &Path) -> Result<()> {
    save_floorplan(grid, path, GridFormat::Pgm)
}

pub fn load_pgm(path: &Path, resolution: f64, origin: (f64, f64)) -> Result<FloorplanGrid> {
    FloorplanGrid::from_pgm(&fs::read(path)?, resolution, origin)
}
