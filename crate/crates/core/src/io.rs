//! File formats: SPC1 spectral containers, 16-bit linear pixmaps, CSV coefficient
//! tables and trace CSVs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::WavelengthGrid;
use crate::image::{Plane, RgbImage, SpectralCube};
use crate::tissue::{CameraSensitivity, ChromophoreBasis, ConcentrationMap};

pub const SPC_MAGIC: &str = "SPC1";
const PPM_MAXVAL: f64 = 65535.0;

/// Wavelength column followed by one or more value columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub wavelengths: Vec<f64>,
    /// One vector per value column.
    pub values: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .position(|c| c == name)
            .map(|i| self.values[i].as_slice())
    }
}

pub fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("wavelength_nm") {
        return Err(Error::Table(format!(
            "first column must be `wavelength_nm`, found {:?}",
            headers.get(0)
        )));
    }
    if headers.len() < 2 {
        return Err(Error::Table("table has no value columns".into()));
    }
    let columns: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    let mut wavelengths = Vec::new();
    let mut values = vec![Vec::new(); columns.len()];
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let parse = |i: usize| -> Result<f64> {
            let field = record.get(i).unwrap_or("");
            field.parse::<f64>().map_err(|_| {
                Error::Table(format!(
                    "row {}: cannot parse `{field}` in column {}",
                    line + 2,
                    i + 1
                ))
            })
        };
        wavelengths.push(parse(0)?);
        for (i, col) in values.iter_mut().enumerate() {
            col.push(parse(i + 1)?);
        }
    }
    if wavelengths.is_empty() {
        return Err(Error::Table("table has no rows".into()));
    }
    if let Some(w) = wavelengths
        .windows(2)
        .find(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater))
    {
        return Err(Error::Table(format!(
            "wavelengths must be strictly increasing ({} followed by {})",
            w[0], w[1]
        )));
    }
    Ok(Table {
        columns,
        wavelengths,
        values,
    })
}

pub fn write_table<W: Write>(writer: W, table: &Table) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["wavelength_nm".to_owned()];
    header.extend(table.columns.iter().cloned());
    w.write_record(&header)?;
    for (i, wl) in table.wavelengths.iter().enumerate() {
        let mut row = vec![wl.to_string()];
        row.extend(table.values.iter().map(|c| c[i].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a three-channel (R, G, B) sensitivity table and resamples it onto `grid`.
pub fn sensitivity_from_table(table: &Table, grid: WavelengthGrid) -> Result<CameraSensitivity> {
    if table.values.len() != 3 {
        return Err(Error::Table(format!(
            "sensitivity table needs 3 value columns, found {}",
            table.values.len()
        )));
    }
    CameraSensitivity::from_tabulated(grid, &table.wavelengths, &table.values)
}

/// Reads HbO / Hb attenuation columns (by name when present, otherwise the first two).
pub fn basis_from_table(table: &Table, grid: WavelengthGrid) -> Result<ChromophoreBasis> {
    let (hbo, hb) = match (table.column("hbo"), table.column("hb")) {
        (Some(a), Some(b)) => (a, b),
        _ if table.values.len() >= 2 => (table.values[0].as_slice(), table.values[1].as_slice()),
        _ => {
            return Err(Error::Table(
                "chromophore table needs HbO and Hb columns".into(),
            ))
        }
    };
    ChromophoreBasis::from_tabulated(grid, &table.wavelengths, hbo, hb)
}

pub fn load_sensitivity(path: &Path, grid: WavelengthGrid) -> Result<CameraSensitivity> {
    sensitivity_from_table(&read_table(File::open(path)?)?, grid)
}

pub fn load_basis(path: &Path, grid: WavelengthGrid) -> Result<ChromophoreBasis> {
    basis_from_table(&read_table(File::open(path)?)?, grid)
}

/// Parsed SPC1 header.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpcHeader {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub start_nm: f64,
    pub step_nm: f64,
}

/// Writes an SPC1 container; samples are stored as little-endian f32 in (y, x, λ) order.
pub fn write_spc<W: Write>(mut w: W, plane: &Plane, start_nm: f64, step_nm: f64) -> Result<()> {
    writeln!(
        w,
        "{SPC_MAGIC} {} {} {} {start_nm} {step_nm}",
        plane.height(),
        plane.width(),
        plane.channels()
    )?;
    let mut buf = Vec::with_capacity(plane.data().len() * 4);
    for v in plane.data() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_spc<R: Read>(r: R) -> Result<(SpcHeader, Plane)> {
    let mut r = BufReader::new(r);
    let mut line = Vec::new();
    r.by_ref().take(256).read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::MalformedHeader(
            "SPC1 header line is missing or unterminated".into(),
        ));
    }
    let text = std::str::from_utf8(&line[..line.len() - 1])
        .map_err(|_| Error::MalformedHeader("SPC1 header is not text".into()))?;
    let fields: Vec<&str> = text.split(' ').collect();
    if fields.len() != 6 || fields[0] != SPC_MAGIC {
        return Err(Error::MalformedHeader(format!(
            "expected `SPC1 <h> <w> <L> <start> <step>`, got `{text}`"
        )));
    }
    let int = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::MalformedHeader(format!("bad integer `{s}`")))
    };
    let real = |s: &str| {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::MalformedHeader(format!("bad number `{s}`")))
    };
    let header = SpcHeader {
        height: int(fields[1])?,
        width: int(fields[2])?,
        bands: int(fields[3])?,
        start_nm: real(fields[4])?,
        step_nm: real(fields[5])?,
    };
    let n = header
        .height
        .checked_mul(header.width)
        .and_then(|v| v.checked_mul(header.bands))
        .filter(|&v| v <= (1usize << 34))
        .ok_or_else(|| {
            Error::MalformedHeader(format!("implausible SPC1 dimensions in `{text}`"))
        })?;
    let mut bytes = Vec::with_capacity(n * 4);
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n * 4 {
        return Err(Error::Truncated {
            expected: n * 4,
            found: bytes.len(),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok((
        header,
        Plane::from_vec(header.height, header.width, header.bands, data)?,
    ))
}

pub fn write_cube<W: Write>(w: W, cube: &SpectralCube) -> Result<()> {
    write_spc(
        w,
        cube.plane(),
        cube.grid().start_nm(),
        cube.grid().step_nm(),
    )
}

pub fn read_cube<R: Read>(r: R) -> Result<SpectralCube> {
    let (h, plane) = read_spc(r)?;
    let grid = WavelengthGrid::new(h.start_nm, h.step_nm, h.bands)
        .map_err(|e| Error::MalformedHeader(format!("invalid wavelength grid: {e}")))?;
    SpectralCube::new(grid, plane)
}

/// Reads a cube and checks it was sampled on `expected`.
pub fn read_cube_on_grid<R: Read>(r: R, expected: &WavelengthGrid) -> Result<SpectralCube> {
    let cube = read_cube(r)?;
    cube.grid()
        .ensure_compatible(expected, "cube file grid vs expected grid")?;
    Ok(cube)
}

/// Concentration maps use SPC1 with three channels (hbo, hb, offset) and grid 0:1.
pub fn write_map<W: Write>(w: W, map: &ConcentrationMap) -> Result<()> {
    write_spc(w, &map.to_plane(), 0.0, 1.0)
}

pub fn read_map<R: Read>(r: R) -> Result<ConcentrationMap> {
    let (h, plane) = read_spc(r)?;
    if h.bands != 3 || h.start_nm != 0.0 || h.step_nm != 1.0 {
        return Err(Error::MalformedHeader(format!(
            "concentration map needs 3 channels on grid 0:1, found {} channels on {}:{}",
            h.bands, h.start_nm, h.step_nm
        )));
    }
    ConcentrationMap::from_plane(&plane)
}

/// Writes a 16-bit binary pixmap, choosing the scale so the brightest sample maps to 65535.
pub fn write_ppm<W: Write>(w: W, img: &RgbImage) -> Result<f64> {
    let max = img.plane().data().iter().copied().fold(0.0, f64::max);
    let scale = if max > 0.0 {
        max / PPM_MAXVAL
    } else {
        1.0 / PPM_MAXVAL
    };
    write_ppm_scaled(w, img, scale)?;
    Ok(scale)
}

/// Writes with an explicit physical-units-per-count scale; out-of-range values saturate.
pub fn write_ppm_scaled<W: Write>(mut w: W, img: &RgbImage, scale: f64) -> Result<()> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Argument(format!(
            "pixmap scale must be positive, got {scale}"
        )));
    }
    write!(
        w,
        "P6\n# scale {scale:e}\n{} {}\n65535\n",
        img.width(),
        img.height()
    )?;
    let mut buf = Vec::with_capacity(img.plane().data().len() * 2);
    for v in img.plane().data() {
        let count = (v / scale).round().clamp(0.0, PPM_MAXVAL) as u16;
        buf.extend_from_slice(&count.to_be_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

fn next_token<R: BufRead>(r: &mut R, scale: &mut Option<f64>) -> Result<String> {
    let mut tok = Vec::new();
    loop {
        let mut byte = [0u8; 1];
        if r.read(&mut byte)? == 0 {
            return Err(Error::MalformedHeader("pixmap header ended early".into()));
        }
        match byte[0] {
            b'#' => {
                let mut comment = Vec::new();
                r.read_until(b'\n', &mut comment)?;
                let text = String::from_utf8_lossy(&comment);
                let mut parts = text.split_whitespace();
                if parts.next() == Some("scale") {
                    let v = parts
                        .next()
                        .and_then(|s| s.parse::<f64>().ok())
                        .filter(|v| v.is_finite() && *v > 0.0);
                    *scale = Some(v.ok_or_else(|| {
                        Error::MalformedHeader(format!("bad scale comment `{}`", text.trim()))
                    })?);
                }
                if !tok.is_empty() {
                    break;
                }
            }
            c if c.is_ascii_whitespace() => {
                if !tok.is_empty() {
                    break;
                }
            }
            c => tok.push(c),
        }
        if tok.len() > 32 {
            return Err(Error::MalformedHeader(
                "pixmap header token too long".into(),
            ));
        }
    }
    String::from_utf8(tok).map_err(|_| Error::MalformedHeader("pixmap header is not text".into()))
}

/// Reads a binary pixmap (8- or 16-bit); a missing `# scale` comment means 1/maxval.
pub fn read_ppm<R: Read>(r: R) -> Result<RgbImage> {
    let mut r = BufReader::new(r);
    let mut scale = None;
    let magic = next_token(&mut r, &mut scale)?;
    if magic != "P6" {
        return Err(Error::MalformedHeader(format!(
            "expected P6 pixmap, found `{magic}`"
        )));
    }
    let mut dim = |what: &str| -> Result<usize> {
        let t = next_token(&mut r, &mut scale)?;
        t.parse::<usize>()
            .map_err(|_| Error::MalformedHeader(format!("bad pixmap {what} `{t}`")))
    };
    let width = dim("width")?;
    let height = dim("height")?;
    let maxval = dim("maxval")?;
    if maxval == 0 || maxval > 65535 || width == 0 || height == 0 {
        return Err(Error::MalformedHeader(format!(
            "unsupported pixmap {width}x{height} maxval {maxval}"
        )));
    }
    let scale = scale.unwrap_or(1.0 / maxval as f64);
    let bytes_per = if maxval > 255 { 2 } else { 1 };
    let n = width * height * 3;
    let mut bytes = Vec::with_capacity(n * bytes_per);
    r.read_to_end(&mut bytes)?;
    if bytes.len() < n * bytes_per {
        return Err(Error::Truncated {
            expected: n * bytes_per,
            found: bytes.len(),
        });
    }
    let data = if bytes_per == 2 {
        bytes[..2 * n]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 * scale)
            .collect()
    } else {
        bytes[..n].iter().map(|&b| b as f64 * scale).collect()
    };
    RgbImage::from_vec(height, width, data)
}

/// Pixels with any non-zero channel are selected.
pub fn read_mask<R: Read>(r: R) -> Result<(usize, usize, Vec<bool>)> {
    let img = read_ppm(r)?;
    let mask = img
        .plane()
        .data()
        .chunks_exact(3)
        .map(|px| px.iter().any(|&v| v > 0.0))
        .collect();
    Ok((img.height(), img.width(), mask))
}

pub fn save<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unsorted_table_is_rejected() {
        let csv = "wavelength_nm,a\n500,1\n490,2\n";
        assert!(matches!(read_table(csv.as_bytes()), Err(Error::Table(_))));
        let bad_header = "nm,a\n500,1\n";
        assert!(matches!(
            read_table(bad_header.as_bytes()),
            Err(Error::Table(_))
        ));
        let bad_value = "wavelength_nm,a\n500,x\n";
        assert!(matches!(
            read_table(bad_value.as_bytes()),
            Err(Error::Table(_))
        ));
    }

    #[test]
    fn table_round_trip() {
        let t = Table {
            columns: vec!["hbo".into(), "hb".into()],
            wavelengths: vec![400.0, 500.5],
            values: vec![vec![0.1, 0.25], vec![3.0, 4.0]],
        };
        let mut buf = Vec::new();
        write_table(&mut buf, &t).unwrap();
        assert_eq!(read_table(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn spc_errors_are_distinct() {
        assert!(matches!(
            read_spc(&b"SPC2 1 1 3 0 1\n"[..]),
            Err(Error::MalformedHeader(_))
        ));
        assert!(matches!(
            read_spc(&b"SPC1 1 1 3 0\n"[..]),
            Err(Error::MalformedHeader(_))
        ));
        assert!(matches!(
            read_spc(&b"SPC1 1 1 3 0 1"[..]),
            Err(Error::MalformedHeader(_))
        ));
        let mut short = b"SPC1 1 1 3 0 1\n".to_vec();
        short.extend_from_slice(&[0u8; 8]);
        assert!(matches!(
            read_spc(short.as_slice()),
            Err(Error::Truncated {
                expected: 12,
                found: 8
            })
        ));
    }

    #[test]
    fn cube_grid_mismatch_on_load() {
        let grid = WavelengthGrid::new(500.0, 10.0, 4).unwrap();
        let cube = SpectralCube::new(grid, Plane::filled(2, 2, &[0.5, 0.25, 0.125, 1.0])).unwrap();
        let mut buf = Vec::new();
        write_cube(&mut buf, &cube).unwrap();
        assert!(read_cube_on_grid(buf.as_slice(), &grid).is_ok());
        let other = WavelengthGrid::new(505.0, 10.0, 4).unwrap();
        assert!(matches!(
            read_cube_on_grid(buf.as_slice(), &other),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn map_container_uses_reserved_grid() {
        let m =
            ConcentrationMap::new(1, 2, vec![1.0, 2.0], vec![3.0, 4.0], vec![0.5, -0.5]).unwrap();
        let mut buf = Vec::new();
        write_map(&mut buf, &m).unwrap();
        assert!(buf.starts_with(b"SPC1 1 2 3 0 1\n"));
        assert_eq!(read_map(buf.as_slice()).unwrap(), m);
        let grid = WavelengthGrid::new(500.0, 10.0, 3).unwrap();
        let cube = SpectralCube::new(grid, Plane::zeros(1, 1, 3)).unwrap();
        let mut buf = Vec::new();
        write_cube(&mut buf, &cube).unwrap();
        assert!(matches!(
            read_map(buf.as_slice()),
            Err(Error::MalformedHeader(_))
        ));
    }

    #[test]
    fn ppm_header_and_mask() {
        let img = RgbImage::from_vec(1, 2, vec![0.0, 0.0, 0.0, 0.5, 1.0, 0.25]).unwrap();
        let mut buf = Vec::new();
        let scale = write_ppm(&mut buf, &img).unwrap();
        assert_eq!(scale, 1.0 / 65535.0);
        assert!(buf.starts_with(b"P6\n# scale "));
        let (h, w, mask) = read_mask(buf.as_slice()).unwrap();
        assert_eq!((h, w), (1, 2));
        assert_eq!(mask, vec![false, true]);
        assert!(matches!(
            read_ppm(&b"P5\n1 1\n255\n\0"[..]),
            Err(Error::MalformedHeader(_))
        ));
        assert!(matches!(
            read_ppm(&b"P6\n2 2\n65535\n\0\0"[..]),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn eight_bit_ppm_without_scale() {
        let bytes = b"P6\n# made elsewhere\n1 1\n255\n\xff\x00\x80";
        let img = read_ppm(&bytes[..]).unwrap();
        assert_eq!(img.plane().data(), &[1.0, 0.0, 128.0 / 255.0]);
    }

    proptest! {
        #[test]
        fn spc_write_read_write_is_byte_identical(h in 1usize..6, w in 1usize..6, l in 3usize..8, seed in any::<u32>()) {
            let data: Vec<f64> = (0..h * w * l).map(|i| f32::from_bits(((i as u32).wrapping_mul(2654435761) ^ seed) & 0x3f7f_ffff) as f64).collect();
            let grid = WavelengthGrid::new(450.0, 10.0, l).unwrap();
            let cube = SpectralCube::new(grid, Plane::from_vec(h, w, l, data).unwrap()).unwrap();
            let mut first = Vec::new();
            write_cube(&mut first, &cube).unwrap();
            let back = read_cube(first.as_slice()).unwrap();
            prop_assert_eq!(&back, &cube);
            let mut second = Vec::new();
            write_cube(&mut second, &back).unwrap();
            prop_assert_eq!(first, second);
        }

        #[test]
        fn ppm_quantisation_bound(h in 1usize..6, w in 1usize..6, vals in proptest::collection::vec(0.0f64..3.0, 108)) {
            let data = vals[..h * w * 3].to_vec();
            let img = RgbImage::from_vec(h, w, data).unwrap();
            let mut buf = Vec::new();
            let scale = write_ppm(&mut buf, &img).unwrap();
            let back = read_ppm(buf.as_slice()).unwrap();
            prop_assert!(back.plane().max_abs_diff(img.plane()) <= scale * 0.5 * (1.0 + 1e-9));
        }
    }
}
