//! Binary portable pixmaps: P5 (gray) and P6 (RGB), maxval 255.

use std::fs;
use std::path::Path;

use super::Image;
use crate::{Error, Result};

/// Serializes as `P5`/`P6`, one space or newline after each header token.
pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

pub fn decode_pnm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0usize;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| "non-ascii header")?);
    }
    // exactly one whitespace byte separates maxval from the raster
    if bytes.get(pos).is_none_or(|b| !b.is_ascii_whitespace()) {
        return Err("missing whitespace after maxval".into());
    }
    pos += 1;

    let channels = match tokens[0] {
        "P5" => 1,
        "P6" => 3,
        other => return Err(format!("unsupported magic {other:?}")),
    };
    let parse = |t: &str, what: &str| t.parse::<usize>().map_err(|_| format!("bad {what} {t:?}"));
    let width = parse(tokens[1], "width")?;
    let height = parse(tokens[2], "height")?;
    let maxval = parse(tokens[3], "maxval")?;
    if maxval != 255 {
        return Err(format!("maxval must be 255, got {maxval}"));
    }
    let len = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or("dimensions overflow")?;
    let raster = bytes.get(pos..pos + len).ok_or("truncated raster")?;
    Image::new(width, height, channels, raster.to_vec()).map_err(|e| e.to_string())
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes).map_err(|message| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message,
    })
}

pub fn write_pnm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pnm(img)).map_err(|e| Error::io(path, e))
}
