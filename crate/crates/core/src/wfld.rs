//! WFLD binary field format.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | content |
//! |---|---|---|
//! | 0 | 4 | magic `WFLD` |
//! | 4 | 1 | version `0x01` |
//! | 5 | 4 | header length `H` (u32) |
//! | 9 | H | UTF-8 `key=value` lines: `n_times`, `n_vars`, `n_rows`, `n_cols`, `variables`, `units`, `lat`, `lon`, `times` (days since 1970-01-01) |
//! | 9+H | rows*cols | mask bytes, 1 = valid, 0 = missing |
//! | … | 4*t*v*rows*cols | f32 payload in `[time][variable][row][col]` order, NaN on missing cells |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fields::{FieldStack, GridSpec};
use crate::kv::{join, KvBlock};

pub const MAGIC: &[u8; 4] = b"WFLD";
pub const VERSION: u8 = 0x01;
const PREAMBLE: usize = 9;

pub fn encode(stack: &FieldStack) -> Vec<u8> {
    let grid = stack.grid();
    let mut header = KvBlock::new();
    header.set("n_times", stack.n_times());
    header.set("n_vars", stack.n_vars());
    header.set("n_rows", grid.n_rows());
    header.set("n_cols", grid.n_cols());
    header.set("variables", stack.variables().join(","));
    header.set("units", stack.units().join(","));
    header.set("lat", join(grid.lat()));
    header.set("lon", join(grid.lon()));
    header.set("times", join(stack.times()));
    let header = header.to_string();

    let mut out = Vec::with_capacity(PREAMBLE + header.len() + stack.n_cells() + 4 * stack.values().len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend(stack.mask().iter().map(|&m| m as u8));
    for &x in stack.values() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

fn header_dim(header: &KvBlock, key: &str, offset: u64) -> Result<usize> {
    header
        .require_value::<usize>(key)
        .map_err(|e| Error::format(offset, e.to_string()))
}

pub fn decode(bytes: &[u8]) -> Result<FieldStack> {
    if bytes.len() < PREAMBLE {
        return Err(Error::format(bytes.len() as u64, "file shorter than preamble"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(0, "magic mismatch, expected WFLD"));
    }
    if bytes[4] != VERSION {
        return Err(Error::format(4, format!("unsupported version {}", bytes[4])));
    }
    let header_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let header_end = PREAMBLE
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::format(bytes.len() as u64, "truncated header"))?;
    let text = std::str::from_utf8(&bytes[PREAMBLE..header_end])
        .map_err(|e| Error::format(PREAMBLE as u64 + e.valid_up_to() as u64, "header is not UTF-8"))?;
    let hoff = PREAMBLE as u64;
    let header = KvBlock::parse(text).map_err(|e| Error::format(hoff, e.to_string()))?;

    let n_times = header_dim(&header, "n_times", hoff)?;
    let n_vars = header_dim(&header, "n_vars", hoff)?;
    let n_rows = header_dim(&header, "n_rows", hoff)?;
    let n_cols = header_dim(&header, "n_cols", hoff)?;
    let overflow = || Error::format(hoff, "dimension overflow");
    let n_cells = n_rows.checked_mul(n_cols).ok_or_else(overflow)?;
    let n_values = n_times
        .checked_mul(n_vars)
        .and_then(|x| x.checked_mul(n_cells))
        .ok_or_else(overflow)?;
    let payload_bytes = n_values.checked_mul(4).ok_or_else(overflow)?;
    let list = |key: &str| -> Result<Vec<String>> {
        Ok(header
            .parse_list::<String>(key)
            .map_err(|e| Error::format(hoff, e.to_string()))?
            .ok_or_else(|| Error::format(hoff, format!("missing key `{key}`")))?)
    };
    let numbers = |key: &str| -> Result<Vec<f64>> {
        header
            .parse_list::<f64>(key)
            .map_err(|e| Error::format(hoff, e.to_string()))?
            .ok_or_else(|| Error::format(hoff, format!("missing key `{key}`")))
    };
    let variables = list("variables")?;
    let units = list("units")?;
    let lat = numbers("lat")?;
    let lon = numbers("lon")?;
    let times = header
        .parse_list::<i64>("times")
        .map_err(|e| Error::format(hoff, e.to_string()))?
        .ok_or_else(|| Error::format(hoff, "missing key `times`"))?;
    if variables.len() != n_vars || units.len() != n_vars {
        return Err(Error::format(hoff, "variable/unit list length disagrees with n_vars"));
    }
    if lat.len() != n_rows || lon.len() != n_cols {
        return Err(Error::format(hoff, "coordinate list length disagrees with grid size"));
    }
    if times.len() != n_times {
        return Err(Error::format(hoff, "time list length disagrees with n_times"));
    }

    let mask_end = header_end.checked_add(n_cells).ok_or_else(overflow)?;
    let payload_end = mask_end.checked_add(payload_bytes).ok_or_else(overflow)?;

    if bytes.len() < mask_end {
        return Err(Error::format(bytes.len() as u64, "truncated mask"));
    }
    if bytes.len() < payload_end {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: expected {payload_end} bytes"),
        ));
    }
    if bytes.len() > payload_end {
        return Err(Error::format(payload_end as u64, "trailing bytes after payload"));
    }

    let mut mask = Vec::with_capacity(n_cells);
    for (i, &b) in bytes[header_end..mask_end].iter().enumerate() {
        match b {
            0 => mask.push(false),
            1 => mask.push(true),
            _ => return Err(Error::format((header_end + i) as u64, format!("mask byte {b} is not 0/1"))),
        }
    }
    let mut values = Vec::with_capacity(n_values);
    for (i, chunk) in bytes[mask_end..payload_end].chunks_exact(4).enumerate() {
        let x = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        if mask[i % n_cells] && !x.is_finite() {
            return Err(Error::format(
                (mask_end + 4 * i) as u64,
                "non-finite value on a valid cell",
            ));
        }
        values.push(x);
    }

    let grid = GridSpec::new(lat, lon).map_err(|e| Error::format(hoff, e.to_string()))?;
    FieldStack::new(grid, variables, units, times, values, mask)
}

pub fn read_fieldstack(path: &Path) -> Result<FieldStack> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write_fieldstack(stack: &FieldStack, path: &Path) -> Result<()> {
    fs::write(path, encode(stack)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::WIND_UNITS;
    use crate::rng::normal_vec;

    fn stack(mask: Vec<bool>) -> FieldStack {
        let g = GridSpec::regular_km(3, 4, 25.0, 25.0, 45.0, 5.0).unwrap();
        let values: Vec<f64> = normal_vec(1, 0, 2 * 2 * 12)
            .into_iter()
            .map(|x| x as f32 as f64)
            .collect();
        FieldStack::new(
            g,
            vec!["uas".into(), "vas".into()],
            vec![WIND_UNITS.into(); 2],
            vec![10957, 10958],
            values,
            mask,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let s = stack(vec![true; 12]);
        let bytes = encode(&s);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn all_masked_round_trips() {
        let s = stack(vec![false; 12]);
        let back = decode(&encode(&s)).unwrap();
        assert_eq!(back.mask(), s.mask());
        assert!(back.values().iter().all(|x| x.is_nan()));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let s = stack(vec![true; 12]);
        let mut bytes = encode(&s);
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format { offset: 0, .. })));

        let bytes = encode(&s);
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(decode(cut), Err(Error::Format { .. })));
    }

    #[test]
    fn header_claiming_extra_variable_is_truncation() {
        let s = stack(vec![true; 12]);
        let text = encode(&s);
        let header_len = u32::from_le_bytes(text[5..9].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&text[9..9 + header_len]).unwrap();
        let forged = header
            .replace("n_vars=2", "n_vars=3")
            .replace("variables=uas,vas", "variables=uas,vas,sfcWind")
            .replace(&format!("units={0},{0}", WIND_UNITS), &format!("units={0},{0},{0}", WIND_UNITS));
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.push(VERSION);
        bytes.extend_from_slice(&(forged.len() as u32).to_le_bytes());
        bytes.extend_from_slice(forged.as_bytes());
        bytes.extend_from_slice(&text[9 + header_len..]);
        match decode(&bytes) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset as usize, bytes.len());
                assert!(message.contains("truncated payload"));
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn dimension_overflow_is_reported() {
        let header = format!(
            "n_times={0}\nn_vars={0}\nn_rows=2\nn_cols=2\nvariables=a\nunits=u\nlat=0,1\nlon=0,1\ntimes=0\n",
            usize::MAX / 2
        );
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.push(VERSION);
        bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
        bytes.extend_from_slice(header.as_bytes());
        match decode(&bytes) {
            Err(Error::Format { message, .. }) => assert!(message.contains("overflow")),
            other => panic!("expected overflow, got {other:?}"),
        }
    }
}
