//! CSV images: header `label,p0,p1,...`, one row per image, pixels in `[0,255]`.

use std::path::Path;

use super::RawImages;
use crate::error::{Error, Result};

/// Reads square images with `channels` channels.
pub fn read_csv(path: &Path, channels: usize) -> Result<RawImages> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = rdr.headers()?.clone();
    let bad = |line: u64, msg: String| Error::Format {
        path: path.to_path_buf(),
        offset: line,
        msg,
    };
    if header.get(0) != Some("label") || header.iter().skip(1).enumerate().any(|(i, h)| h != format!("p{i}")) {
        return Err(bad(0, "header must be `label,p0,p1,...`".into()));
    }
    let pixels_per = header.len() - 1;
    let plane = pixels_per / channels.max(1);
    let side = (plane as f64).sqrt().round() as usize;
    if channels == 0 || side * side * channels != pixels_per || side == 0 {
        return Err(bad(
            0,
            format!("{pixels_per} pixel columns do not form square {channels}-channel images"),
        ));
    }
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let label: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| bad(line, format!("label `{}` is not a non-negative integer", &rec[0])))?;
        labels.push(label);
        for field in rec.iter().skip(1) {
            let v: u8 = field
                .trim()
                .parse()
                .map_err(|_| bad(line, format!("pixel `{field}` is not in [0,255]")))?;
            pixels.push(v);
        }
    }
    Ok(RawImages {
        shape: [labels.len(), channels, side, side],
        pixels,
        labels,
    })
}

pub fn write_csv(raw: &RawImages, path: &Path) -> Result<()> {
    let per = raw.shape[1] * raw.shape[2] * raw.shape[3];
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["label".to_string()];
    header.extend((0..per).map(|i| format!("p{i}")));
    w.write_record(&header)?;
    for (i, y) in raw.labels.iter().enumerate() {
        let mut row = vec![y.to_string()];
        row.extend(raw.pixels[i * per..(i + 1) * per].iter().map(|p| p.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
