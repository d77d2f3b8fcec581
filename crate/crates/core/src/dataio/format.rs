//! Directory container: `manifest.json` plus two little-endian blobs.
//!
//! A blob is a four-byte magic followed by the raw row-major scalars at the
//! declared precision, with nothing before or after.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{AtmosDataset, SLOTS_PER_DAY, SLOT_LABELS};
use crate::channelizer::LevelSet;
use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const STACK_MAGIC: &[u8; 4] = b"AGR1";
const TARGET_MAGIC: &[u8; 4] = b"TGT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestDims {
    #[serde(rename = "D")]
    pub d: usize,
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "V")]
    pub v: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "W")]
    pub w: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dims: ManifestDims,
    pub variables: Vec<String>,
    pub levels_hpa: Vec<f64>,
    pub start_date: NaiveDate,
    pub slots: Vec<String>,
    pub precision: Precision,
    pub stack_file: String,
    pub target_file: String,
}

impl Manifest {
    fn validate(&self, path: &Path) -> Result<()> {
        let fail = |reason: String| Err(Error::format(path, reason));
        if self.format_version != FORMAT_VERSION {
            return fail(format!(
                "unsupported format_version {} (this build reads {FORMAT_VERSION})",
                self.format_version
            ));
        }
        let d = &self.dims;
        if [d.d, d.s, d.v, d.l, d.h, d.w].contains(&0) {
            return fail(format!("zero-length dimension in {d:?}"));
        }
        if d.s != SLOTS_PER_DAY || self.slots != SLOT_LABELS {
            return fail(format!(
                "slots must be {SLOT_LABELS:?}, got S={} {:?}",
                d.s, self.slots
            ));
        }
        if d.v != self.variables.len() {
            return fail(format!("dims.V = {} but {} variables listed", d.v, self.variables.len()));
        }
        if d.l != self.levels_hpa.len() {
            return fail(format!("dims.L = {} but {} levels listed", d.l, self.levels_hpa.len()));
        }
        for file in [&self.stack_file, &self.target_file] {
            if file.is_empty() || file.contains(['/', '\\']) || file == ".." || file == "." {
                return fail(format!("blob name `{file}` must be a plain file name"));
            }
        }
        Ok(())
    }
}

/// Writes `values` as a blob with the given magic.
pub fn write_blob(path: &Path, magic: &[u8; 4], values: &[f64], precision: Precision) -> Result<()> {
    let mut bytes = Vec::with_capacity(4 + values.len() * precision.byte_width());
    bytes.extend_from_slice(magic);
    match precision {
        Precision::Single => values
            .iter()
            .for_each(|&x| bytes.extend_from_slice(&(x as f32).to_le_bytes())),
        Precision::Double => values
            .iter()
            .for_each(|&x| bytes.extend_from_slice(&x.to_le_bytes())),
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a blob of exactly `count` scalars; anything else is an error.
pub fn read_blob(path: &Path, magic: &[u8; 4], count: usize, precision: Precision) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 || &bytes[..4] != magic {
        return Err(Error::format(
            path,
            format!("bad magic, expected {:?}", String::from_utf8_lossy(magic)),
        ));
    }
    let width = precision.byte_width();
    let expected = count * width;
    let body = &bytes[4..];
    if body.len() != expected {
        let what = if body.len() < expected { "truncated" } else { "trailing bytes in" };
        return Err(Error::format(
            path,
            format!("{what} blob: {} payload bytes, expected {expected} ({count} × {precision})", body.len()),
        ));
    }
    Ok(match precision {
        Precision::Single => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Precision::Double => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    })
}

pub fn save_dataset(dataset: &AtmosDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dims = dataset.dims();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dims: ManifestDims {
            d: dims.days,
            s: dims.slots,
            v: dims.variables,
            l: dims.levels,
            h: dims.height,
            w: dims.width,
        },
        variables: dataset.variables().to_vec(),
        levels_hpa: dataset.levels().hpa().to_vec(),
        start_date: dataset.start_date(),
        slots: SLOT_LABELS.iter().map(|s| s.to_string()).collect(),
        precision: dataset.precision(),
        stack_file: "stack.bin".into(),
        target_file: "targets.bin".into(),
    };
    write_blob(
        &dir.join(&manifest.stack_file),
        STACK_MAGIC,
        dataset.stack().data(),
        dataset.precision(),
    )?;
    write_blob(
        &dir.join(&manifest.target_file),
        TARGET_MAGIC,
        dataset.targets(),
        dataset.precision(),
    )?;
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<AtmosDataset> {
    let path: PathBuf = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    manifest.validate(&path)?;
    let d = &manifest.dims;
    let shape = [d.d, d.s, d.v, d.l, d.h, d.w];
    let count = shape.iter().try_fold(1usize, |acc, &x| acc.checked_mul(x));
    let count = count.ok_or_else(|| Error::format(&path, "dims overflow"))?;
    let levels = LevelSet::new(manifest.levels_hpa.clone())
        .map_err(|e| Error::format(&path, e.to_string()))?;
    let stack = read_blob(
        &dir.join(&manifest.stack_file),
        STACK_MAGIC,
        count,
        manifest.precision,
    )?;
    let targets = read_blob(
        &dir.join(&manifest.target_file),
        TARGET_MAGIC,
        d.d,
        manifest.precision,
    )?;
    AtmosDataset::new(
        Tensor::from_vec(&shape, stack)?,
        targets,
        manifest.start_date,
        manifest.variables,
        levels,
        manifest.precision,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(precision: Precision) -> AtmosDataset {
        let dims = [3, 4, 2, 2, 3, 2];
        let n: usize = dims.iter().product();
        let data = (0..n).map(|i| (i as f64 * 0.37).sin() * 1e3 + 1e-7 * i as f64).collect();
        AtmosDataset::new(
            Tensor::from_vec(&dims, data).unwrap(),
            vec![0.0, 12.345678901, 1e-9],
            NaiveDate::from_ymd_opt(1999, 12, 31).unwrap(),
            vec!["q".into(), "t".into()],
            LevelSet::new(vec![500.0, 925.0]).unwrap(),
            precision,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for precision in [Precision::Single, Precision::Double] {
            let dir = tempfile::tempdir().unwrap();
            let ds = sample(precision);
            save_dataset(&ds, dir.path()).unwrap();
            let back = load_dataset(dir.path()).unwrap();
            let bits = |d: &AtmosDataset| d.stack().data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&ds), bits(&back));
            assert_eq!(back, ds);
        }
    }

    #[test]
    fn rejects_bad_version_and_dims() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&sample(Precision::Double), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let original = fs::read_to_string(&path).unwrap();

        fs::write(&path, original.replace("\"format_version\": 1", "\"format_version\": 2")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Format { .. })));

        fs::write(&path, original.replace("\"D\": 3", "\"D\": 4")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Format { .. })));

        fs::write(&path, original.replace("\"V\": 2", "\"V\": 3")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Format { .. })));

        fs::write(&path, original.replace("stack.bin", "../stack.bin")).unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }

    #[test]
    fn rejects_bad_blobs() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&sample(Precision::Double), dir.path()).unwrap();
        let stack = dir.path().join("stack.bin");
        let bytes = fs::read(&stack).unwrap();

        fs::write(&stack, &bytes[..bytes.len() - 1]).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");

        let mut longer = bytes.clone();
        longer.extend_from_slice(&[0; 8]);
        fs::write(&stack, &longer).unwrap();
        assert!(load_dataset(dir.path()).unwrap_err().to_string().contains("trailing"));

        let mut wrong = bytes.clone();
        wrong[..4].copy_from_slice(b"TGT1");
        fs::write(&stack, &wrong).unwrap();
        assert!(load_dataset(dir.path()).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Io { .. })));
    }
}
