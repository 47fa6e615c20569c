use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::SampleRecord;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn parse_error(path: &Path, line: usize, column: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        column,
        msg: msg.into(),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// One row per time step, comma-separated, 17 significant digits, LF endings.
pub fn write_sequence_csv(path: &Path, v: &Tensor) -> Result<()> {
    let cells = match v.shape() {
        [_, c] => *c,
        s => return Err(Error::Shape(format!("sequence must be a matrix, got {s:?}"))),
    };
    let mut out = String::with_capacity(v.len() * 24);
    for row in v.data().chunks(cells) {
        for (j, x) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{x:.16e}"));
        }
        out.push('\n');
    }
    let mut f = create(path)?;
    f.write_all(out.as_bytes()).and_then(|_| f.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_sequence_csv(path: &Path, time_steps: usize, cells: usize) -> Result<Tensor> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = text.lines().collect();
    let mut data = Vec::with_capacity(time_steps * cells);
    for (i, line) in lines.iter().enumerate() {
        if i >= time_steps {
            return Err(parse_error(path, i + 1, 1, format!("expected {time_steps} rows, found more")));
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cells {
            return Err(parse_error(
                path,
                i + 1,
                1,
                format!("expected {cells} fields, found {}", fields.len()),
            ));
        }
        for (j, field) in fields.iter().enumerate() {
            let x: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_error(path, i + 1, j + 1, format!("invalid number {field:?}")))?;
            data.push(x);
        }
    }
    if lines.len() != time_steps {
        return Err(parse_error(
            path,
            lines.len() + 1,
            1,
            format!("expected {time_steps} rows, found {}", lines.len()),
        ));
    }
    Tensor::new(vec![time_steps, cells], data)
}

/// Binary greyscale `P5` with maxval 255; pixel byte is `round(v·255)`.
pub fn write_image_pgm(path: &Path, img: &Tensor) -> Result<()> {
    let (h, w) = match img.shape() {
        [1, h, w] => (*h, *w),
        s => return Err(Error::Shape(format!("PGM needs a single-channel image, got {s:?}"))),
    };
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    for &v in img.data() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("pixel value {v} outside [0, 1]")));
        }
        bytes.push((v * 255.0).round() as u8);
    }
    let mut f = create(path)?;
    f.write_all(&bytes).and_then(|_| f.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_image_pgm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    let mut token = |bytes: &[u8]| -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token(&bytes);
    if magic.as_deref() != Some("P5") {
        return Err(Error::format(path, format!("expected magic P5, found {:?}", magic.unwrap_or_default())));
    }
    let mut number = |what: &str| -> Result<usize> {
        let t = token(&bytes).ok_or_else(|| Error::format(path, format!("missing {what}")))?;
        t.parse().map_err(|_| Error::format(path, format!("invalid {what} {t:?}")))
    };
    let w = number("width")?;
    let h = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(Error::format(path, format!("expected maxval 255, found {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(Error::format(path, "image has zero extent"));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let raster = bytes.get(start..).unwrap_or_default();
    if raster.len() != w * h {
        return Err(Error::format(
            path,
            format!("expected {} pixel bytes, found {}", w * h, raster.len()),
        ));
    }
    let data = raster.iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor::new(vec![1, h, w], data)
}

pub fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let mut f = create(path)?;
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: SampleRecord =
            serde_json::from_str(&line).map_err(|e| parse_error(path, i + 1, e.column(), e.to_string()))?;
        if r.label != r.scenario.label() {
            return Err(parse_error(
                path,
                i + 1,
                1,
                format!("label {} contradicts scenario {}", r.label, r.scenario),
            ));
        }
        records.push(r);
    }
    if records.is_empty() {
        return Err(Error::format(path, "manifest lists no samples"));
    }
    Ok(records)
}
