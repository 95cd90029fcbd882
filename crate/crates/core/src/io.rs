//! File formats: PFM rasters, PNG masks, light CSVs and dataset folders.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{DepthMap, PixelGrid};
use crate::photometric::{detect_missing, ObservationSet, Scene, MISSING_HIGH, MISSING_LOW};

/// Float raster, rows stored top to bottom, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    /// 1 or 3.
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Pfm {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!("PFM supports 1 or 3 channels, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "{} samples for a {width}x{height}x{channels} raster",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn gray(width: usize, height: usize, data: &[f64]) -> Result<Self> {
        Self::new(width, height, 1, data.iter().map(|&v| v as f32).collect())
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

pub fn write_pfm(path: &Path, img: &Pfm) -> Result<()> {
    let mut out = Vec::with_capacity(32 + img.data.len() * 4);
    let tag = if img.channels == 3 { "PF" } else { "Pf" };
    write!(out, "{tag}\n{} {}\n-1.0\n", img.width, img.height).expect("in-memory write");
    let row_len = img.width * img.channels;
    for y in (0..img.height).rev() {
        for v in &img.data[y * row_len..(y + 1) * row_len] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<Pfm> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let token = |r: &mut BufReader<fs::File>| -> Result<String> {
        let mut s = String::new();
        loop {
            let mut b = [0u8];
            if r.read(&mut b).map_err(|e| Error::io(path, e))? == 0 {
                return if s.is_empty() {
                    Err(Error::format(path, "truncated PFM header"))
                } else {
                    Ok(s)
                };
            }
            if b[0].is_ascii_whitespace() {
                if !s.is_empty() {
                    return Ok(s);
                }
            } else {
                s.push(b[0] as char);
            }
        }
    };
    let channels = match token(&mut r)?.as_str() {
        "Pf" => 1,
        "PF" => 3,
        t => return Err(Error::format(path, format!("not a PFM file (magic {t:?})"))),
    };
    let parse = |s: String, what: &str| -> Result<usize> {
        s.parse().map_err(|_| Error::format(path, format!("bad {what} {s:?}")))
    };
    let width = parse(token(&mut r)?, "width")?;
    let height = parse(token(&mut r)?, "height")?;
    let scale_s = token(&mut r)?;
    let scale: f64 = scale_s
        .parse()
        .map_err(|_| Error::format(path, format!("bad scale {scale_s:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format(path, "scale must be nonzero"));
    }
    let little = scale < 0.0;
    let row_len = width * channels;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() != row_len * height * 4 {
        return Err(Error::format(
            path,
            format!("expected {} bytes of samples, found {}", row_len * height * 4, bytes.len()),
        ));
    }
    let mut data = vec![0f32; row_len * height];
    for (k, chunk) in bytes.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (file_row, offset) = (k / row_len, k % row_len);
        data[(height - 1 - file_row) * row_len + offset] = v;
    }
    Pfm::new(width, height, channels, data)
}

/// Nonzero pixels are inside the mask.
pub fn read_mask(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let img = image::open(path).map_err(|e| image_error(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.pixels().map(|p| p.0[0] > 0).collect()))
}

pub fn write_mask(path: &Path, grid: &PixelGrid) -> Result<()> {
    let buf: Vec<u8> = grid.mask().iter().map(|&b| if b { 255 } else { 0 }).collect();
    image::save_buffer(path, &buf, grid.width() as u32, grid.height() as u32, image::ExtendedColorType::L8)
        .map_err(|e| image_error(path, e))
}

fn image_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

pub fn write_lights_csv(path: &Path, lights: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "z"])?;
    for row in lights.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_lights_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut vals = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::format(path, format!("row {} has {} fields", rows + 1, rec.len())));
        }
        for f in rec.iter() {
            vals.push(
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::format(path, format!("bad number {f:?}")))?,
            );
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, 3, &vals))
}

/// Depth and mask (and optionally albedo) loaded from disk.
#[derive(Debug, Clone)]
pub struct RasterScene {
    pub grid: PixelGrid,
    pub depth: Vec<f64>,
    pub albedo: Option<Vec<f64>>,
}

pub fn load_raster_scene(depth: &Path, mask: &Path, albedo: Option<&Path>) -> Result<RasterScene> {
    let d = read_pfm(depth)?;
    let (w, h, m) = read_mask(mask)?;
    if d.channels != 1 || d.width != w || d.height != h {
        return Err(Error::format(
            depth,
            format!("depth is {}x{}x{}, mask is {w}x{h}", d.width, d.height, d.channels),
        ));
    }
    let grid = PixelGrid::new(h, w, m)?;
    let gather = |img: &Pfm| grid.gather(&img.data.iter().map(|&v| v as f64).collect::<Vec<_>>());
    let albedo = match albedo {
        Some(p) => {
            let a = read_pfm(p)?;
            if a.channels != 1 || a.width != w || a.height != h {
                return Err(Error::format(p, "albedo raster does not match the mask"));
            }
            Some(gather(&a))
        }
        None => None,
    };
    Ok(RasterScene {
        depth: gather(&d),
        albedo,
        grid,
    })
}

pub fn write_depth_pfm(path: &Path, grid: &PixelGrid, depth: &DepthMap) -> Result<()> {
    write_pfm(path, &Pfm::gray(grid.width(), grid.height(), &grid.scatter(depth.values(), 0.0))?)
}

pub fn read_depth_pfm(path: &Path, grid: &PixelGrid) -> Result<DepthMap> {
    let img = read_pfm(path)?;
    if img.channels != 1 || img.width != grid.width() || img.height != grid.height() {
        return Err(Error::format(path, "depth raster does not match the mask"));
    }
    Ok(DepthMap(grid.gather(&img.data.iter().map(|&v| v as f64).collect::<Vec<_>>())))
}

/// Writes a `3 x p` field as a 3-channel PFM.
pub fn write_normals_pfm(path: &Path, grid: &PixelGrid, normals: &DMatrix<f64>) -> Result<()> {
    let chans: Vec<Vec<f64>> = (0..3)
        .map(|k| grid.scatter(&normals.row(k).iter().copied().collect::<Vec<_>>(), 0.0))
        .collect();
    let n = grid.width() * grid.height();
    let data = (0..n).flat_map(|i| (0..3).map(|k| chans[k][i] as f32).collect::<Vec<_>>()).collect();
    write_pfm(path, &Pfm::new(grid.width(), grid.height(), 3, data)?)
}

pub fn image_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("images").join(format!("img_{index:03}.pfm"))
}

/// Writes the images, mask, lights, ground truth depth/normals/albedo of a
/// scene under `dir`.
pub fn write_scene(dir: &Path, scene: &Scene) -> Result<()> {
    let grid = &scene.obs.grid;
    fs::create_dir_all(dir.join("images")).map_err(|e| Error::io(dir, e))?;
    for i in 0..scene.obs.images() {
        let row: Vec<f64> = scene.obs.m.row(i).iter().copied().collect();
        write_pfm(&image_path(dir, i), &Pfm::gray(grid.width(), grid.height(), &grid.scatter(&row, 0.0))?)?;
    }
    write_mask(&dir.join("mask.png"), grid)?;
    write_lights_csv(&dir.join("lights.csv"), &scene.lights.0)?;
    write_depth_pfm(&dir.join("depth.pfm"), grid, &scene.surface.depth)?;
    write_normals_pfm(&dir.join("normals.pfm"), grid, &scene.surface.scaled_normals())?;
    write_pfm(
        &dir.join("albedo.pfm"),
        &Pfm::gray(grid.width(), grid.height(), &grid.scatter(&scene.surface.albedo, 0.0))?,
    )?;
    Ok(())
}

/// Loads `images/img_*.pfm` and `mask.png` (full frame when absent).
/// Entries outside `(low, high)` are marked unobserved.
pub fn load_observations(dir: &Path, low: f64, high: f64) -> Result<ObservationSet> {
    let img_dir = dir.join("images");
    let mut paths: Vec<PathBuf> = fs::read_dir(&img_dir)
        .map_err(|e| Error::io(&img_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pfm"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::format(&img_dir, "no .pfm images"));
    }
    let images = paths.iter().map(|p| read_pfm(p)).collect::<Result<Vec<_>>>()?;
    let (w, h) = (images[0].width, images[0].height);
    for (p, img) in paths.iter().zip(&images) {
        if img.width != w || img.height != h || img.channels != 1 {
            return Err(Error::format(p, format!("expected a {w}x{h} single-channel image")));
        }
    }
    let mask_path = dir.join("mask.png");
    let grid = if mask_path.exists() {
        let (mw, mh, mask) = read_mask(&mask_path)?;
        if (mw, mh) != (w, h) {
            return Err(Error::format(&mask_path, format!("mask is {mw}x{mh}, images are {w}x{h}")));
        }
        PixelGrid::new(h, w, mask)?
    } else {
        PixelGrid::full(h, w)?
    };
    let mut m = DMatrix::zeros(images.len(), grid.len());
    for (i, img) in images.iter().enumerate() {
        for (j, &(x, y)) in grid.pixels().iter().enumerate() {
            m[(i, j)] = img.get(x, y, 0) as f64;
        }
    }
    let w = detect_missing(&m, low, high);
    ObservationSet::new(m, w, grid)
}

pub fn load_observations_default(dir: &Path) -> Result<ObservationSet> {
    load_observations(dir, MISSING_LOW, MISSING_HIGH)
}

/// Reads a whole text file, mapping errors to the path.
pub fn read_text(path: &Path) -> Result<String> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut s = String::new();
    BufReader::new(f).read_to_string(&mut s).map_err(|e| Error::io(path, e))?;
    Ok(s)
}

/// Lines of a text file, or an empty list when it does not exist.
pub fn read_lines_if_exists(path: &Path) -> Result<Vec<String>> {
    match fs::File::open(path) {
        Ok(f) => BufReader::new(f)
            .lines()
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(path, e)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(Error::io(path, e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for channels in [1, 3] {
            let data: Vec<f32> = (0..5 * 3 * channels)
                .map(|k| if k == 4 { f32::MIN_POSITIVE } else { (k as f32 * 0.37).sin() * 1e3 })
                .collect();
            let img = Pfm::new(5, 3, channels, data).unwrap();
            let path = dir.path().join(format!("x{channels}.pfm"));
            write_pfm(&path, &img).unwrap();
            let back = read_pfm(&path).unwrap();
            assert_eq!(back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), img.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            assert_eq!((back.width, back.height, back.channels), (5, 3, channels));
        }
    }

    #[test]
    fn pfm_rows_are_stored_bottom_up() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.pfm");
        write_pfm(&path, &Pfm::new(1, 2, 1, vec![1.0, 2.0]).unwrap()).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header = b"Pf\n1 2\n-1.0\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..header.len() + 4], &2f32.to_le_bytes());
    }

    #[test]
    fn big_endian_pfm_is_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("be.pfm");
        let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&1.5f32.to_be_bytes());
        bytes.extend_from_slice(&(-2f32).to_be_bytes());
        fs::write(&path, bytes).unwrap();
        assert_eq!(read_pfm(&path).unwrap().data, vec![1.5, -2.0]);
    }

    #[test]
    fn malformed_pfm_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pfm");
        fs::write(&path, b"P5\n1 1\n-1.0\n0000").unwrap();
        assert!(matches!(read_pfm(&path), Err(Error::Format { .. })));
        fs::write(&path, b"Pf\n2 2\n-1.0\n0000").unwrap();
        assert!(matches!(read_pfm(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn mask_and_lights_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = PixelGrid::from_fn(3, 4, |x, y| x > y).unwrap();
        let mp = dir.path().join("m.png");
        write_mask(&mp, &grid).unwrap();
        let (w, h, mask) = read_mask(&mp).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(mask, grid.mask());

        let l = DMatrix::from_row_slice(2, 3, &[0.1, -0.2, 0.97, 1.0 / 3.0, 0.0, 0.94]);
        let lp = dir.path().join("l.csv");
        write_lights_csv(&lp, &l).unwrap();
        assert_eq!(read_lights_csv(&lp).unwrap(), l);
    }
}
