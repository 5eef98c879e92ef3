//! On-disk formats.
//!
//! * AMFF scalar fields: `AMFF\n<w> <h>\n` then `w*h` little-endian f32,
//!   row-major.
//! * PGM (binary P5, maxval 255). Label maps store 0/255 and read back with
//!   a threshold at 128.
//! * AMFS label samples: `AMFS\n<w> <h> <count>\n` then `count` bit-packed
//!   labelings, 8 pixels per byte, most significant bit first, each row
//!   zero-padded to a whole byte.
//!
//! Every writer goes through a temporary file in the target directory that
//! is renamed into place once complete.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{LabelField, ScalarField};

const AMFF_MAGIC: &str = "AMFF";
const AMFS_MAGIC: &str = "AMFS";

fn format_err(kind: &'static str, path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        kind,
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Write `bytes` to `path` atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Whitespace-separated ASCII header tokens; `#` starts a comment running
/// to the end of the line. Returns the tokens and the offset just past the
/// single whitespace byte that ends the last one.
fn header_tokens(bytes: &[u8], count: usize) -> Option<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut pos = 0;
    while tokens.len() < count {
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
            return None;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if pos >= bytes.len() {
        return None;
    }
    Some((tokens, pos + 1))
}

fn parse_dim(kind: &'static str, path: &Path, what: &str, tok: &str) -> Result<usize> {
    match tok.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(format_err(kind, path, format!("{what} must be a positive integer, got {tok:?}"))),
    }
}

pub fn write_amff(path: &Path, f: &ScalarField) -> Result<()> {
    let (w, h) = f.dims();
    let mut buf = format!("{AMFF_MAGIC}\n{w} {h}\n").into_bytes();
    buf.reserve(4 * w * h);
    for &v in f.values() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_atomic(path, &buf)
}

pub fn read_amff(path: &Path) -> Result<ScalarField> {
    const KIND: &str = "AMFF";
    let bytes = read_all(path)?;
    if !bytes.starts_with(b"AMFF\n") {
        return Err(format_err(KIND, path, "missing AMFF magic"));
    }
    let (tok, offset) =
        header_tokens(&bytes[5..], 2).ok_or_else(|| format_err(KIND, path, "truncated header"))?;
    let w = parse_dim(KIND, path, "width", &tok[0])?;
    let h = parse_dim(KIND, path, "height", &tok[1])?;
    let data = &bytes[5 + offset..];
    let expected = w.checked_mul(h).and_then(|n| n.checked_mul(4));
    if expected != Some(data.len()) {
        return Err(format_err(
            KIND,
            path,
            format!("expected {} data bytes for {w}x{h}, found {}", 4 * w * h, data.len()),
        ));
    }
    let values = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect::<Vec<_>>();
    ScalarField::new(w, h, values).map_err(|e| format_err(KIND, path, e.to_string()))
}

/// Write raw 8-bit gray values.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::InvalidField(format!(
            "expected {} pixels, got {}",
            width * height,
            pixels.len()
        )));
    }
    let mut buf = format!("P5\n{width} {height}\n255\n").into_bytes();
    buf.extend_from_slice(pixels);
    write_atomic(path, &buf)
}

/// Read an 8-bit binary PGM as `(width, height, pixels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    const KIND: &str = "PGM";
    let bytes = read_all(path)?;
    let (tok, offset) = header_tokens(&bytes, 4).ok_or_else(|| format_err(KIND, path, "truncated header"))?;
    if tok[0] != "P5" {
        return Err(format_err(KIND, path, format!("expected magic P5, found {:?}", tok[0])));
    }
    let w = parse_dim(KIND, path, "width", &tok[1])?;
    let h = parse_dim(KIND, path, "height", &tok[2])?;
    match tok[3].parse::<u32>() {
        Ok(m) if (1..=255).contains(&m) => {}
        _ => return Err(format_err(KIND, path, format!("only 8-bit maxval is supported, got {:?}", tok[3]))),
    }
    let data = &bytes[offset..];
    if w.checked_mul(h) != Some(data.len()) {
        return Err(format_err(
            KIND,
            path,
            format!("expected {} pixel bytes for {w}x{h}, found {}", w * h, data.len()),
        ));
    }
    Ok((w, h, data.to_vec()))
}

pub fn write_labels_pgm(path: &Path, z: &LabelField) -> Result<()> {
    let px: Vec<u8> = z.labels().iter().map(|&l| l * 255).collect();
    write_pgm(path, z.width(), z.height(), &px)
}

/// Gray values of at least 128 are foreground.
pub fn read_labels_pgm(path: &Path) -> Result<LabelField> {
    let (w, h, px) = read_pgm(path)?;
    LabelField::new(w, h, px.iter().map(|&v| (v >= 128) as u8).collect())
}

fn row_bytes(w: usize) -> usize {
    w.div_ceil(8)
}

pub fn write_samples(path: &Path, width: usize, height: usize, samples: &[&LabelField]) -> Result<()> {
    let rb = row_bytes(width);
    let mut buf = format!("{AMFS_MAGIC}\n{width} {height} {}\n", samples.len()).into_bytes();
    buf.reserve(samples.len() * rb * height);
    for z in samples {
        z.ensure_same_dims((width, height))?;
        for row in z.labels().chunks(width) {
            let mut packed = vec![0u8; rb];
            for (i, &l) in row.iter().enumerate() {
                packed[i / 8] |= l << (7 - i % 8);
            }
            buf.extend_from_slice(&packed);
        }
    }
    write_atomic(path, &buf)
}

pub fn read_samples(path: &Path) -> Result<Vec<LabelField>> {
    const KIND: &str = "AMFS";
    let bytes = read_all(path)?;
    if !bytes.starts_with(b"AMFS\n") {
        return Err(format_err(KIND, path, "missing AMFS magic"));
    }
    let (tok, offset) =
        header_tokens(&bytes[5..], 3).ok_or_else(|| format_err(KIND, path, "truncated header"))?;
    let w = parse_dim(KIND, path, "width", &tok[0])?;
    let h = parse_dim(KIND, path, "height", &tok[1])?;
    let count: usize = tok[2]
        .parse()
        .map_err(|_| format_err(KIND, path, format!("count must be an integer, got {:?}", tok[2])))?;
    let rb = row_bytes(w);
    let per = rb * h;
    let data = &bytes[5 + offset..];
    if per.checked_mul(count) != Some(data.len()) {
        return Err(format_err(
            KIND,
            path,
            format!("expected {} bytes for {count} samples of {w}x{h}, found {}", per * count, data.len()),
        ));
    }
    data.chunks_exact(per.max(1))
        .take(count)
        .map(|chunk| {
            let mut labels = Vec::with_capacity(w * h);
            for row in chunk.chunks_exact(rb) {
                labels.extend((0..w).map(|i| (row[i / 8] >> (7 - i % 8)) & 1));
            }
            LabelField::new(w, h, labels)
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_all(path)?;
    serde_json::from_slice(&bytes).map_err(|e| format_err("JSON", path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn amff_round_trip_at_single_precision() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.amff");
        let f = ScalarField::from_fn(7, 3, |i, j| (i as f64 - 2.5) * 0.1 + j as f64 * 1e3);
        write_amff(&p, &f).unwrap();
        let g = read_amff(&p).unwrap();
        assert_eq!(g.dims(), (7, 3));
        for (a, b) in f.values().iter().zip(g.values()) {
            assert_eq!(*a as f32 as f64, *b);
        }
        write_amff(&p, &g).unwrap();
        assert_eq!(read_amff(&p).unwrap(), g);
        let raw = fs::read(&p).unwrap();
        assert!(raw.starts_with(b"AMFF\n7 3\n"));
        assert_eq!(raw.len(), 9 + 4 * 21);
    }

    #[test]
    fn malformed_inputs_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.amff");
        fs::write(&p, b"AMFX\n1 1\n\0\0\0\0").unwrap();
        let e = read_amff(&p).unwrap_err().to_string();
        assert!(e.contains("bad.amff") && e.contains("magic"), "{e}");
        fs::write(&p, b"AMFF\n2 2\n\0\0\0\0").unwrap();
        assert!(read_amff(&p).unwrap_err().to_string().contains("expected 16 data bytes"));
        fs::write(&p, b"AMFF\n0 2\n").unwrap();
        assert!(read_amff(&p).unwrap_err().to_string().contains("width"));
        fs::write(&p, [b"AMFF\n1 1\n".as_slice(), &f32::NAN.to_le_bytes()].concat()).unwrap();
        assert!(read_amff(&p).is_err());

        let q = dir.path().join("bad.pgm");
        fs::write(&q, b"P2\n1 1\n255\n0").unwrap();
        assert!(read_pgm(&q).unwrap_err().to_string().contains("P5"));
        fs::write(&q, b"P5\n1 1\n65535\n\0\0").unwrap();
        assert!(read_pgm(&q).unwrap_err().to_string().contains("maxval"));
        fs::write(&q, b"P5\n2 1\n255\n\0").unwrap();
        assert!(read_pgm(&q).unwrap_err().to_string().contains("bad.pgm"));

        let missing = read_amff(&dir.path().join("nope.amff")).unwrap_err().to_string();
        assert!(missing.contains("nope.amff"));
    }

    #[test]
    fn pgm_header_comments_and_thresholds() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pgm");
        fs::write(&p, b"P5\n# made by hand\n3 1 # width height\n255\n\x00\x7f\x80").unwrap();
        let z = read_labels_pgm(&p).unwrap();
        assert_eq!(z.labels(), &[0, 0, 1]);
    }

    proptest! {
        #[test]
        fn labels_round_trip(w in 1usize..20, h in 1usize..6, seed in any::<u64>()) {
            let dir = tempfile::tempdir().unwrap();
            let mut s = seed;
            let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (s >> 33) & 1 == 1 };
            let zs: Vec<LabelField> = (0..3).map(|_| LabelField::from_fn(w, h, |_, _| next())).collect();

            let p = dir.path().join("z.pgm");
            write_labels_pgm(&p, &zs[0]).unwrap();
            prop_assert_eq!(&read_labels_pgm(&p).unwrap(), &zs[0]);

            let q = dir.path().join("s.amfs");
            let refs: Vec<&LabelField> = zs.iter().collect();
            write_samples(&q, w, h, &refs).unwrap();
            prop_assert_eq!(read_samples(&q).unwrap(), zs);
            prop_assert_eq!(fs::metadata(&q).unwrap().len() as usize, format!("AMFS\n{w} {h} 3\n").len() + 3 * h * w.div_ceil(8));
        }
    }

    #[test]
    fn atomic_write_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.json");
        write_json(&p, &serde_json::json!({"schema": 1})).unwrap();
        write_json(&p, &serde_json::json!({"schema": 1, "x": 2})).unwrap();
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
        let v: serde_json::Value = read_json(&p).unwrap();
        assert_eq!(v["x"], 2);
    }
}
