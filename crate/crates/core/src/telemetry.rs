//! Loss-log and image-snapshot ingestion.
//!
//! Loss logs are line oriented (one record per epoch) so a live run can be
//! tailed. Two encodings are accepted:
//!
//! * JSONL: `{"epoch":0,"g_loss":0.69,"d_loss":0.70}`
//! * CSV with the header `epoch,g_loss,d_loss`
//!
//! Image snapshots are grayscale rasters (binary P5 PGM, or 8-bit grayscale
//! PNG) laid out as `<run>/snapshots/epoch_<N>/*.pgm`.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Smallest raster side that can host one MS-SSIM scale with an 11-tap window.
pub const MIN_IMAGE_SIDE: usize = 16;

/// Generator and discriminator loss for one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: u64,
    pub g_loss: f64,
    pub d_loss: f64,
}

impl LossRecord {
    pub fn new(epoch: u64, g_loss: f64, d_loss: f64) -> Self {
        Self {
            epoch,
            g_loss,
            d_loss,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    BinaryCrossEntropy,
    RelativisticHinge,
    #[default]
    Other,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary-cross-entropy" | "bce" => Ok(LossKind::BinaryCrossEntropy),
            "relativistic-hinge" | "rhinge" => Ok(LossKind::RelativisticHinge),
            "other" => Ok(LossKind::Other),
            _ => Err(Error::Config(format!("unknown loss kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    Jsonl,
    Csv,
}

impl LogFormat {
    /// Guess the format from a file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => LogFormat::Csv,
            _ => LogFormat::Jsonl,
        }
    }
}

impl FromStr for LogFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" | "json" => Ok(LogFormat::Jsonl),
            "csv" => Ok(LogFormat::Csv),
            _ => Err(Error::Config(format!("unknown loss log format `{s}`"))),
        }
    }
}

/// A run of missing epochs: every epoch strictly between `after` and `before`
/// is absent from the series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochGap {
    pub after: u64,
    pub before: u64,
}

/// Validated, epoch-ordered loss records of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSeries {
    records: Vec<LossRecord>,
    loss_kind: LossKind,
    gaps: Vec<EpochGap>,
}

impl LossSeries {
    /// Sorts by epoch and validates: non-empty, finite losses, unique epochs.
    pub fn new(mut records: Vec<LossRecord>, loss_kind: LossKind) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("loss series has no records".into()));
        }
        for (i, r) in records.iter().enumerate() {
            for (field, v) in [("g_loss", r.g_loss), ("d_loss", r.d_loss)] {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        line: i + 1,
                        epoch: r.epoch,
                        field,
                    });
                }
            }
        }
        records.sort_by_key(|r| r.epoch);
        let mut gaps = Vec::new();
        for pair in records.windows(2) {
            let (a, b) = (pair[0].epoch, pair[1].epoch);
            if a == b {
                return Err(Error::DuplicateEpoch(a));
            }
            if b > a + 1 {
                gaps.push(EpochGap {
                    after: a,
                    before: b,
                });
            }
        }
        Ok(Self {
            records,
            loss_kind,
            gaps,
        })
    }

    pub fn records(&self) -> &[LossRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss_kind
    }

    pub fn with_loss_kind(mut self, kind: LossKind) -> Self {
        self.loss_kind = kind;
        self
    }

    pub fn gaps(&self) -> &[EpochGap] {
        &self.gaps
    }

    pub fn epochs(&self) -> impl Iterator<Item = u64> + '_ {
        self.records.iter().map(|r| r.epoch)
    }

    pub fn g_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.g_loss).collect()
    }

    pub fn d_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.d_loss).collect()
    }

    pub fn first_epoch(&self) -> u64 {
        self.records[0].epoch
    }

    pub fn last_epoch(&self) -> u64 {
        self.records[self.records.len() - 1].epoch
    }

    pub fn position(&self, epoch: u64) -> Option<usize> {
        self.records.binary_search_by_key(&epoch, |r| r.epoch).ok()
    }
}

/// Incremental loss-log reader. Yields one record per data line, so a
/// consumer can act on a record before the rest of the stream exists.
pub struct LossLogReader<R: BufRead> {
    inner: R,
    format: LogFormat,
    line_no: usize,
    header_seen: bool,
    buf: String,
}

impl<R: BufRead> LossLogReader<R> {
    pub fn new(inner: R, format: LogFormat) -> Self {
        Self {
            inner,
            format,
            line_no: 0,
            header_seen: false,
            buf: String::new(),
        }
    }

    /// Line number of the most recently read line (1-based).
    pub fn line_no(&self) -> usize {
        self.line_no
    }

    fn parse_csv_line(&mut self, line: &str) -> Result<Option<LossRecord>> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(line.as_bytes());
        let Some(row) = reader.records().next() else {
            return Ok(None);
        };
        let row = row.map_err(|e| Error::Parse {
            line: self.line_no,
            message: e.to_string(),
        })?;
        if !self.header_seen {
            let header: Vec<&str> = row.iter().collect();
            if header != ["epoch", "g_loss", "d_loss"] {
                return Err(Error::Parse {
                    line: self.line_no,
                    message: format!(
                        "expected header `epoch,g_loss,d_loss`, found `{}`",
                        header.join(",")
                    ),
                });
            }
            self.header_seen = true;
            return Ok(None);
        }
        if row.len() != 3 {
            return Err(Error::Parse {
                line: self.line_no,
                message: format!("expected 3 columns, found {}", row.len()),
            });
        }
        let epoch = row[0].parse::<u64>().map_err(|_| Error::Parse {
            line: self.line_no,
            message: format!("epoch `{}` is not a non-negative integer", &row[0]),
        })?;
        let g_loss = parse_loss_text(&row[1], "g_loss", self.line_no)?;
        let d_loss = parse_loss_text(&row[2], "d_loss", self.line_no)?;
        check_finite(LossRecord::new(epoch, g_loss, d_loss), self.line_no).map(Some)
    }
}

impl<R: BufRead> Iterator for LossLogReader<R> {
    type Item = Result<LossRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.inner.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => {
                    return Some(Err(Error::Parse {
                        line: self.line_no + 1,
                        message: e.to_string(),
                    }))
                }
            }
            self.line_no += 1;
            let line = std::mem::take(&mut self.buf);
            let trimmed = line.trim();
            if trimmed.is_empty() {
                self.buf = line;
                continue;
            }
            let parsed = match self.format {
                LogFormat::Jsonl => parse_jsonl_line(trimmed, self.line_no).map(Some),
                LogFormat::Csv => self.parse_csv_line(trimmed),
            };
            self.buf = line;
            match parsed {
                Ok(Some(rec)) => return Some(Ok(rec)),
                Ok(None) => continue,
                Err(e) => return Some(Err(e)),
            }
        }
    }
}

/// Parses one JSONL loss record. `line` is only used for error messages.
pub fn parse_jsonl_line(text: &str, line: usize) -> Result<LossRecord> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        message: format!("unparseable JSON: {e}"),
    })?;
    let Value::Object(obj) = value else {
        return Err(Error::Parse {
            line,
            message: "expected a JSON object".into(),
        });
    };
    let epoch = match obj.get("epoch") {
        Some(v) => v.as_u64().ok_or_else(|| Error::Parse {
            line,
            message: format!("epoch `{v}` is not a non-negative integer"),
        })?,
        None => {
            return Err(Error::Parse {
                line,
                message: "missing field epoch".into(),
            })
        }
    };
    let g_loss = json_loss(&obj, "g_loss", line)?;
    let d_loss = json_loss(&obj, "d_loss", line)?;
    check_finite(LossRecord::new(epoch, g_loss, d_loss), line)
}

fn json_loss(obj: &serde_json::Map<String, Value>, field: &'static str, line: usize) -> Result<f64> {
    match obj.get(field) {
        Some(Value::Number(n)) => n.as_f64().ok_or_else(|| Error::Parse {
            line,
            message: format!("{field} `{n}` is not representable as f64"),
        }),
        // Some writers quote non-finite floats ("NaN", "Infinity").
        Some(Value::String(s)) => parse_loss_text(s, field, line),
        Some(other) => Err(Error::Parse {
            line,
            message: format!("{field} `{other}` is not a number"),
        }),
        None => Err(Error::Parse {
            line,
            message: format!("missing field {field}"),
        }),
    }
}

fn parse_loss_text(s: &str, field: &'static str, line: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("{field} `{s}` is not a number"),
    })
}

fn check_finite(rec: LossRecord, line: usize) -> Result<LossRecord> {
    for (field, v) in [("g_loss", rec.g_loss), ("d_loss", rec.d_loss)] {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                line,
                epoch: rec.epoch,
                field,
            });
        }
    }
    Ok(rec)
}

/// Reads a whole loss log and validates it into a [`LossSeries`].
pub fn parse_loss_log<R: Read>(source: R, format: LogFormat) -> Result<LossSeries> {
    let records = LossLogReader::new(BufReader::new(source), format).collect::<Result<Vec<_>>>()?;
    if records.is_empty() {
        return Err(Error::Empty("loss log contains no records".into()));
    }
    LossSeries::new(records, LossKind::Other)
}

pub fn read_loss_log(path: &Path) -> Result<LossSeries> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_loss_log(file, LogFormat::from_path(path))
}

/// Writes the series as JSONL, one record per line.
pub fn write_jsonl<W: Write>(series: &LossSeries, mut out: W) -> Result<()> {
    for rec in series.records() {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n").map_err(|e| Error::io("<loss log>", e))?;
    }
    Ok(())
}

pub fn write_csv<W: Write>(series: &LossSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let to_err = |e: csv::Error| Error::InvalidInput(e.to_string());
    w.write_record(["epoch", "g_loss", "d_loss"]).map_err(to_err)?;
    for r in series.records() {
        w.write_record([r.epoch.to_string(), r.g_loss.to_string(), r.d_loss.to_string()])
            .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io("<loss log>", e))
}

/// Records with epochs in `(end_epoch - width, end_epoch]`.
pub fn slice_window(series: &LossSeries, end_epoch: u64, width: u64) -> Result<LossSeries> {
    if width < 2 {
        return Err(Error::Config(format!("window width must be >= 2, got {width}")));
    }
    let end = series
        .position(end_epoch)
        .ok_or(Error::EpochNotFound(end_epoch))?;
    let lower = end_epoch.checked_sub(width);
    let start = series.records[..=end]
        .iter()
        .position(|r| lower.map_or(true, |lo| r.epoch > lo))
        .unwrap_or(end);
    LossSeries::new(series.records[start..=end].to_vec(), series.loss_kind)
}

/// A grayscale raster with pixels in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("image has a zero dimension".into()));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidInput(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// 8-bit samples scaled by `1 / maxval`.
    pub fn from_bytes(width: usize, height: usize, bytes: &[u8], maxval: u8) -> Result<Self> {
        let scale = f64::from(maxval);
        Self::new(
            width,
            height,
            bytes.iter().map(|&b| f64::from(b) / scale).collect(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Nearest 8-bit quantization.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

/// An ordered collection of equally sized grayscale images.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    images: Vec<GrayImage>,
    width: usize,
    height: usize,
    source_dir: Option<PathBuf>,
}

impl ImageSet {
    pub fn new(images: Vec<GrayImage>) -> Result<Self> {
        let Some(first) = images.first() else {
            return Err(Error::Empty("image set has no images".into()));
        };
        let (width, height) = (first.width, first.height);
        if width < MIN_IMAGE_SIDE || height < MIN_IMAGE_SIDE {
            return Err(Error::InvalidInput(format!(
                "images must be at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}, got {width}x{height}"
            )));
        }
        if let Some((i, img)) = images
            .iter()
            .enumerate()
            .find(|(_, img)| img.width != width || img.height != height)
        {
            return Err(Error::MixedDimensions {
                first: PathBuf::from("#0"),
                fw: width,
                fh: height,
                other: PathBuf::from(format!("#{i}")),
                ow: img.width,
                oh: img.height,
            });
        }
        Ok(Self {
            images,
            width,
            height,
            source_dir: None,
        })
    }

    pub fn with_source_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.source_dir = Some(dir.into());
        self
    }

    pub fn images(&self) -> &[GrayImage] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Directory the set was loaded from, if any.
    pub fn source_dir(&self) -> Option<&Path> {
        self.source_dir.as_deref()
    }

    pub fn get(&self, i: usize) -> &GrayImage {
        &self.images[i]
    }
}

/// Loads grayscale rasters in the given order. Pixels are scaled to `[0, 1]`.
pub fn load_image_set<P: AsRef<Path>>(paths: &[P]) -> Result<ImageSet> {
    if paths.is_empty() {
        return Err(Error::Empty("no image files given".into()));
    }
    let mut images = Vec::with_capacity(paths.len());
    let mut first: Option<(PathBuf, usize, usize)> = None;
    for path in paths {
        let path = path.as_ref();
        let img = read_image(path)?;
        match &first {
            None => first = Some((path.to_path_buf(), img.width, img.height)),
            Some((fp, fw, fh)) if (*fw, *fh) != (img.width, img.height) => {
                return Err(Error::MixedDimensions {
                    first: fp.clone(),
                    fw: *fw,
                    fh: *fh,
                    other: path.to_path_buf(),
                    ow: img.width,
                    oh: img.height,
                });
            }
            Some(_) => {}
        }
        images.push(img);
    }
    ImageSet::new(images)
}

/// Loads every `.pgm` / `.png` file in `dir`, sorted by file name.
pub fn load_image_dir(dir: &Path) -> Result<ImageSet> {
    let paths = image_files(dir)?;
    if paths.is_empty() {
        return Err(Error::Empty(format!("no .pgm or .png files in {}", dir.display())));
    }
    Ok(load_image_set(&paths)?.with_source_dir(dir))
}

pub fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("png"));
        if is_image && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

pub fn read_image(path: &Path) -> Result<GrayImage> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") {
        decode_pgm(&bytes).map_err(|reason| Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason,
        })
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(&bytes).map_err(|reason| Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason,
        })
    } else {
        Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: "expected binary PGM (P5) or PNG".into(),
        })
    }
}

fn decode_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    // Header: magic, width, height, maxval; whitespace separated, `#` comments.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated PGM header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("malformed PGM header")?;
    }
    let [width, height, maxval] = fields;
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("malformed PGM header".into());
    }
    pos += 1;
    if maxval == 0 || maxval > 255 {
        return Err(format!("PGM maxval {maxval} unsupported (8-bit only)"));
    }
    let data = bytes
        .get(pos..pos + width * height)
        .ok_or("truncated PGM raster")?;
    GrayImage::from_bytes(width, height, data, maxval as u8).map_err(|e| e.to_string())
}

fn decode_png(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(format!(
            "PNG must be 8-bit grayscale, found {:?} {:?}",
            info.color_type, info.bit_depth
        ));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or("PNG too large")?];
    let frame = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let stride = frame.line_size;
    let mut data = Vec::with_capacity(width * height);
    for row in buf.chunks(stride).take(height) {
        data.extend_from_slice(&row[..width]);
    }
    GrayImage::from_bytes(width, height, &data, 255).map_err(|e| e.to_string())
}

pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write!(out, "P5\n{} {}\n255\n", image.width, image.height)
        .and_then(|_| out.write_all(&image.to_bytes()))
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// `<run>/snapshots/epoch_<N>`
pub fn snapshot_dir(snapshots_root: &Path, epoch: u64) -> PathBuf {
    snapshots_root.join(format!("epoch_{epoch}"))
}

/// Epoch-indexed snapshot directories under `snapshots_root`, ascending.
pub fn list_snapshot_dirs(snapshots_root: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let entries = std::fs::read_dir(snapshots_root).map_err(|e| Error::io(snapshots_root, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(snapshots_root, e))?.path();
        let epoch = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("epoch_"))
            .and_then(|n| n.parse::<u64>().ok());
        if let (Some(epoch), true) = (epoch, path.is_dir()) {
            out.push((epoch, path));
        }
    }
    out.sort();
    Ok(out)
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::BinaryCrossEntropy => "binary-cross-entropy",
            LossKind::RelativisticHinge => "relativistic-hinge",
            LossKind::Other => "other",
        })
    }
}
