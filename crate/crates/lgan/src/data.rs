//! Domain types and dataset plumbing: intensity images, binary/probability
//! masks, resizing, manifest parsing and PNG I/O.
//!
//! Images are single-channel with intensities in `[0, 1]`. Masks come in two
//! flavours: hard `{0, 1}` labels ([`BinaryMask`]) and soft generator outputs
//! in the open interval `(0, 1)` ([`ProbMask`]). On disk everything is 8-bit
//! grayscale PNG; masks use pixel values 0/255 only.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Clamp bound for probabilities so logs stay finite.
pub const PROB_EPS: f64 = 1e-7;

/// Default binarization threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Single-channel intensity image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    data: Array2<f64>,
}

impl GrayImage {
    /// Validates that every value is finite and within `[0, 1]`.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        for ((r, c), &v) in data.indexed_iter() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidPixel {
                    row: r,
                    col: c,
                    value: 0,
                    reason: format!("intensity {v} outside [0, 1]"),
                });
            }
        }
        Ok(Self { data })
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }
}

/// Hard per-pixel labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    data: Array2<bool>,
}

impl BinaryMask {
    pub fn new(data: Array2<bool>) -> Self {
        Self { data }
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<bool> {
        &self.data
    }

    /// Number of foreground pixels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Mask as 0.0/1.0 values, the form consumed by losses.
    pub fn to_f64(&self) -> Array2<f64> {
        self.data.mapv(|v| if v { 1.0 } else { 0.0 })
    }
}

/// Soft per-pixel probabilities, strictly inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMask {
    data: Array2<f64>,
}

impl ProbMask {
    /// Validates that every value lies strictly in `(0, 1)`.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        for ((r, c), &v) in data.indexed_iter() {
            if !v.is_finite() || v <= 0.0 || v >= 1.0 {
                return Err(Error::InvalidPixel {
                    row: r,
                    col: c,
                    value: 0,
                    reason: format!("probability {v} outside (0, 1)"),
                });
            }
        }
        Ok(Self { data })
    }

    /// Clamps arbitrary finite values into `[PROB_EPS, 1 - PROB_EPS]` first.
    pub fn from_clamped(data: Array2<f64>) -> Self {
        let data = data.mapv(|v| v.clamp(PROB_EPS, 1.0 - PROB_EPS));
        Self { data }
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }
}

/// Scale raw integer intensities by the bit-depth maximum into `[0, 1]`.
///
/// `bit_depth` must be 8 or 16, and every raw value must fit the range;
/// out-of-range values produce [`Error::InvalidPixel`].
pub fn normalize_image(raw: &Array2<u32>, bit_depth: u32) -> Result<GrayImage> {
    if bit_depth != 8 && bit_depth != 16 {
        return Err(Error::spec(format!(
            "bit_depth must be 8 or 16, got {bit_depth}"
        )));
    }
    let max = (1u32 << bit_depth) - 1;
    let mut out = Array2::zeros(raw.raw_dim());
    for ((r, c), &v) in raw.indexed_iter() {
        if v > max {
            return Err(Error::InvalidPixel {
                row: r,
                col: c,
                value: v as i64,
                reason: format!("exceeds {bit_depth}-bit maximum {max}"),
            });
        }
        out[(r, c)] = v as f64 / max as f64;
    }
    GrayImage::new(out)
}

/// Threshold a probability mask into hard labels; `p >= threshold` maps to 1.
pub fn binarize(p: &ProbMask, threshold: f64) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::spec(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    Ok(BinaryMask::new(p.data.mapv(|v| v >= threshold)))
}

/// Threshold a raw probability array (no `ProbMask` domain check).
pub fn binarize_array(p: &Array2<f64>, threshold: f64) -> BinaryMask {
    BinaryMask::new(p.mapv(|v| v >= threshold))
}

fn check_resize_target(size: usize) -> Result<()> {
    if size < 8 {
        return Err(Error::shape(format!("resize target {size} < 8")));
    }
    Ok(())
}

/// Bilinear resample of an intensity image to `size x size`.
///
/// Sampling uses half-pixel centers, so resizing to the original size is the
/// identity.
pub fn resize_gray(img: &GrayImage, size: usize) -> Result<GrayImage> {
    check_resize_target(size)?;
    let (h, w) = (img.height(), img.width());
    if h == size && w == size {
        return Ok(img.clone());
    }
    let src = img.data();
    let scale_y = h as f64 / size as f64;
    let scale_x = w as f64 / size as f64;
    let mut out = Array2::zeros((size, size));
    for oy in 0..size {
        let sy = ((oy as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for ox in 0..size {
            let sx = ((ox as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            let top = src[(y0, x0)] * (1.0 - fx) + src[(y0, x1)] * fx;
            let bot = src[(y1, x0)] * (1.0 - fx) + src[(y1, x1)] * fx;
            out[(oy, ox)] = (top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0);
        }
    }
    GrayImage::new(out)
}

/// Nearest-neighbor resample of a hard mask to `size x size` (stays binary).
pub fn resize_mask(mask: &BinaryMask, size: usize) -> Result<BinaryMask> {
    check_resize_target(size)?;
    let (h, w) = (mask.height(), mask.width());
    if h == size && w == size {
        return Ok(mask.clone());
    }
    let src = mask.data();
    let scale_y = h as f64 / size as f64;
    let scale_x = w as f64 / size as f64;
    let mut out = Array2::from_elem((size, size), false);
    for oy in 0..size {
        let sy = (((oy as f64 + 0.5) * scale_y).floor() as usize).min(h - 1);
        for ox in 0..size {
            let sx = (((ox as f64 + 0.5) * scale_x).floor() as usize).min(w - 1);
            out[(oy, ox)] = src[(sy, sx)];
        }
    }
    Ok(BinaryMask::new(out))
}

/// Which half of the dataset an entry belongs to. Splits are assigned per
/// scan, never per slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One image/mask pair in a dataset manifest.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub scan_id: String,
    pub slice_index: u32,
    pub split: Split,
}

/// Parsed, validated dataset manifest. Entry order is file order.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    /// Directory the manifest's relative paths resolve against.
    root: PathBuf,
}

impl DatasetManifest {
    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn split_entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Absolute path of an entry's image file.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

/// Parse and validate a manifest file.
///
/// Line format: `image<TAB>mask<TAB>scan_id<TAB>slice_index<TAB>train|test`.
/// Relative paths resolve against the manifest's directory. Referenced files
/// must exist; a scan id may not straddle the split boundary.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile {
                path: path.to_path_buf(),
            }
        } else {
            Error::io(path, e)
        }
    })?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));

    let mut entries = Vec::new();
    let mut scan_split: BTreeMap<String, Split> = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message: format!("expected 5 tab-separated fields, got {}", fields.len()),
            });
        }
        let slice_index: u32 = fields[3].parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message: format!("slice_index '{}' is not an unsigned integer", fields[3]),
        })?;
        let split = match fields[4] {
            "train" => Split::Train,
            "test" => Split::Test,
            other => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    message: format!("split must be 'train' or 'test', got '{other}'"),
                })
            }
        };
        let scan_id = fields[2].to_string();
        match scan_split.get(&scan_id) {
            None => {
                scan_split.insert(scan_id.clone(), split);
            }
            Some(&prev) if prev != split => {
                return Err(Error::SplitViolation { scan_id });
            }
            Some(_) => {}
        }
        let entry = ManifestEntry {
            image_path: PathBuf::from(fields[0]),
            mask_path: PathBuf::from(fields[1]),
            scan_id,
            slice_index,
            split,
        };
        for p in [&entry.image_path, &entry.mask_path] {
            let abs = if p.is_absolute() {
                p.clone()
            } else {
                root.join(p)
            };
            if !abs.is_file() {
                return Err(Error::MissingFile { path: abs });
            }
        }
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(Error::EmptyManifest {
            path: path.to_path_buf(),
        });
    }
    Ok(DatasetManifest {
        entries,
        root,
    })
}

/// Write a manifest in the line format accepted by [`load_manifest`].
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            e.image_path.display(),
            e.mask_path.display(),
            e.scan_id,
            e.slice_index,
            e.split
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// An ordered stack of slices belonging to one scan.
#[derive(Debug, Clone)]
pub struct VolumeScan {
    pub scan_id: String,
    pub slices: Vec<(GrayImage, BinaryMask)>,
}

/// A loaded slice together with its manifest entry.
#[derive(Debug, Clone)]
pub struct LoadedSlice {
    pub scan_id: String,
    pub slice_index: u32,
    pub image: GrayImage,
    pub mask: BinaryMask,
}

/// Load every slice of one split into memory, in manifest order.
pub fn load_split(manifest: &DatasetManifest, split: Split) -> Result<Vec<LoadedSlice>> {
    let mut out = Vec::new();
    for entry in manifest.split_entries(split) {
        let image = load_gray_png(&manifest.resolve(&entry.image_path))?;
        let mask = load_mask_png(&manifest.resolve(&entry.mask_path))?;
        if image.height() != mask.height() || image.width() != mask.width() {
            return Err(Error::shape(format!(
                "image {}x{} and mask {}x{} disagree for scan '{}' slice {}",
                image.height(),
                image.width(),
                mask.height(),
                mask.width(),
                entry.scan_id,
                entry.slice_index
            )));
        }
        out.push(LoadedSlice {
            scan_id: entry.scan_id.clone(),
            slice_index: entry.slice_index,
            image,
            mask,
        });
    }
    Ok(out)
}

/// Group loaded slices into per-scan volumes, ordered by slice index.
pub fn group_scans(slices: &[LoadedSlice]) -> Vec<VolumeScan> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&LoadedSlice>> = BTreeMap::new();
    for s in slices {
        if !groups.contains_key(s.scan_id.as_str()) {
            order.push(&s.scan_id);
        }
        groups.entry(&s.scan_id).or_default().push(s);
    }
    order
        .into_iter()
        .map(|id| {
            let mut members = groups.remove(id).unwrap();
            members.sort_by_key(|s| s.slice_index);
            VolumeScan {
                scan_id: id.to_string(),
                slices: members
                    .into_iter()
                    .map(|s| (s.image.clone(), s.mask.clone()))
                    .collect(),
            }
        })
        .collect()
}

/// Read an 8-bit grayscale PNG as intensities in `[0, 1]`.
pub fn load_gray_png(path: &Path) -> Result<GrayImage> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })?
        .into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = Array2::from_shape_fn((h, w), |(r, c)| u32::from(img.get_pixel(c as u32, r as u32)[0]));
    normalize_image(&raw, 8)
}

/// Read a mask PNG; pixels must be exactly 0 or 255.
pub fn load_mask_png(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })?
        .into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Array2::from_elem((h, w), false);
    for r in 0..h {
        for c in 0..w {
            match img.get_pixel(c as u32, r as u32)[0] {
                0 => {}
                255 => out[(r, c)] = true,
                v => {
                    return Err(Error::InvalidPixel {
                        row: r,
                        col: c,
                        value: i64::from(v),
                        reason: "mask pixels must be 0 or 255".into(),
                    })
                }
            }
        }
    }
    Ok(BinaryMask::new(out))
}

/// Write intensities as an 8-bit grayscale PNG.
pub fn save_gray_png(path: &Path, img: &GrayImage) -> Result<()> {
    let (h, w) = (img.height(), img.width());
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for (r, row) in img.data().outer_iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            buf.put_pixel(c as u32, r as u32, image::Luma([(v * 255.0).round() as u8]));
        }
    }
    buf.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Write a hard mask as a 0/255 grayscale PNG.
pub fn save_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    let (h, w) = (mask.height(), mask.width());
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for (r, row) in mask.data().outer_iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            buf.put_pixel(c as u32, r as u32, image::Luma([if v { 255 } else { 0 }]));
        }
    }
    buf.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn normalize_zero_and_max() {
        let zeros = Array2::<u32>::zeros((3, 3));
        let img = normalize_image(&zeros, 8).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));

        let maxed = Array2::from_elem((2, 2), 255u32);
        let img = normalize_image(&maxed, 8).unwrap();
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn normalize_midpoint() {
        let raw = Array2::from_elem((1, 1), 128u32);
        let img = normalize_image(&raw, 8).unwrap();
        assert_eq!(img.data()[(0, 0)], 128.0 / 255.0);
    }

    #[test]
    fn normalize_rejects_out_of_range() {
        let raw = Array2::from_elem((1, 1), 256u32);
        assert!(matches!(
            normalize_image(&raw, 8),
            Err(Error::InvalidPixel { .. })
        ));
    }

    #[test]
    fn binarize_uniform_and_boundary() {
        let p = ProbMask::new(Array2::from_elem((2, 2), 0.9)).unwrap();
        assert_eq!(binarize(&p, 0.5).unwrap().count(), 4);

        let p = ProbMask::new(Array2::from_elem((2, 2), 0.1)).unwrap();
        assert_eq!(binarize(&p, 0.5).unwrap().count(), 0);

        // The threshold comparison is inclusive.
        let p = ProbMask::new(array![[0.49, 0.50, 0.51]]).unwrap();
        let m = binarize(&p, 0.5).unwrap();
        assert_eq!(m.data().as_slice().unwrap(), &[false, true, true]);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = GrayImage::new(Array2::from_shape_fn((16, 16), |(r, c)| {
            (r * 16 + c) as f64 / 255.0
        }))
        .unwrap();
        assert_eq!(resize_gray(&img, 16).unwrap(), img);

        let flat = GrayImage::new(Array2::from_elem((10, 10), 0.37)).unwrap();
        let up = resize_gray(&flat, 24).unwrap();
        assert!(up.data().iter().all(|&v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn resize_mask_nearest_2x() {
        let m = BinaryMask::new(array![[true, true], [false, false]]);
        let up = resize_mask(&m, 8).unwrap();
        // Nearest-neighbor doubling: top half all ones, bottom half all zeros.
        assert!(up.resize_check_rows(0..4, true));
        assert!(up.resize_check_rows(4..8, false));
    }

    impl BinaryMask {
        fn resize_check_rows(&self, rows: std::ops::Range<usize>, expect: bool) -> bool {
            rows.clone()
                .all(|r| (0..self.width()).all(|c| self.data()[(r, c)] == expect))
        }
    }

    #[test]
    fn resize_mask_nearest_enumerated() {
        let m = BinaryMask::new(array![[true, true], [false, false]]);
        let up = resize_mask(&m, 8).unwrap();
        // Oracle: for each output pixel, find the nearest source pixel.
        for oy in 0..8 {
            for ox in 0..8 {
                let sy = (((oy as f64 + 0.5) * 0.25).floor() as usize).min(1);
                let sx = (((ox as f64 + 0.5) * 0.25).floor() as usize).min(1);
                assert_eq!(up.data()[(oy, ox)], m.data()[(sy, sx)]);
            }
        }
    }

    #[test]
    fn resize_rejects_tiny_target() {
        let m = BinaryMask::new(Array2::from_elem((8, 8), false));
        assert!(matches!(resize_mask(&m, 4), Err(Error::Shape(_))));
    }

    #[test]
    fn manifest_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();

        // Empty manifest.
        std::fs::write(root.join("empty.tsv"), "").unwrap();
        assert!(matches!(
            load_manifest(&root.join("empty.tsv")),
            Err(Error::EmptyManifest { .. })
        ));

        // Two valid records.
        let img = GrayImage::new(Array2::from_elem((8, 8), 0.5)).unwrap();
        let mask = BinaryMask::new(Array2::from_elem((8, 8), true));
        for name in ["a", "b"] {
            save_gray_png(&root.join(format!("{name}.png")), &img).unwrap();
            save_mask_png(&root.join(format!("{name}_m.png")), &mask).unwrap();
        }
        let lines = "a.png\ta_m.png\ts0\t0\ttrain\nb.png\tb_m.png\ts1\t0\ttest\n";
        std::fs::write(root.join("ok.tsv"), lines).unwrap();
        let m = load_manifest(&root.join("ok.tsv")).unwrap();
        assert_eq!(m.entries().len(), 2);
        assert_eq!(m.entries()[0].scan_id, "s0");
        assert_eq!(m.entries()[1].split, Split::Test);

        // Dangling mask path.
        let lines = "a.png\tmissing.png\ts0\t0\ttrain\n";
        std::fs::write(root.join("bad.tsv"), lines).unwrap();
        match load_manifest(&root.join("bad.tsv")) {
            Err(Error::MissingFile { path }) => {
                assert!(path.ends_with("missing.png"));
            }
            other => panic!("expected MissingFile, got {other:?}"),
        }

        // Scan id in both splits.
        let lines =
            "a.png\ta_m.png\ts0\t0\ttrain\nb.png\tb_m.png\ts0\t1\ttest\n";
        std::fs::write(root.join("leak.tsv"), lines).unwrap();
        assert!(matches!(
            load_manifest(&root.join("leak.tsv")),
            Err(Error::SplitViolation { .. })
        ));

        // Malformed record reports its line number.
        let lines = "a.png\ta_m.png\ts0\t0\ttrain\nnot-enough-fields\n";
        std::fs::write(root.join("malformed.tsv"), lines).unwrap();
        match load_manifest(&root.join("malformed.tsv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::new(Array2::from_shape_fn((9, 7), |(r, c)| {
            ((r * 7 + c) % 256) as f64 / 255.0
        }))
        .unwrap();
        let p = dir.path().join("x.png");
        save_gray_png(&p, &img).unwrap();
        let back = load_gray_png(&p).unwrap();
        assert_eq!(back, img);

        let mask = BinaryMask::new(Array2::from_shape_fn((9, 7), |(r, c)| (r + c) % 3 == 0));
        let p = dir.path().join("m.png");
        save_mask_png(&p, &mask).unwrap();
        assert_eq!(load_mask_png(&p).unwrap(), mask);
    }
}
