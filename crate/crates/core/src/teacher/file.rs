use std::fs;
use std::path::Path;

use crate::binio::{put_f32s, Reader};
use crate::data::{SplitRatios, Windows};
use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::rng::Fnv1a;

const MAGIC: &[u8; 4] = b"FDTP";
const VERSION: u32 = 1;

/// Window-aligned teacher forecasts in original flow units,
/// `[W, N, H_out, C]` over every window of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherPredictions {
    pub values: Tensor<f32>,
    pub fingerprint: u64,
}

/// Dimensions a teacher file must match.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TeacherDims {
    pub windows: usize,
    pub regions: usize,
    pub h_out: usize,
    pub channels: usize,
}

/// Hash binding a teacher file to one dataset and window layout.
pub fn dataset_fingerprint(meta_bytes: &[u8], ratios: SplitRatios, windows: &Windows) -> u64 {
    let mut h = Fnv1a::default();
    h.update(meta_bytes);
    for r in [ratios.train, ratios.val, ratios.test] {
        h.update(&r.to_le_bytes());
    }
    for v in [windows.spec.h_in, windows.spec.h_out, windows.spec.stride] {
        h.update(&(v as u64).to_le_bytes());
    }
    for &s in &windows.starts {
        h.update(&(s as u64).to_le_bytes());
    }
    h.finish()
}

impl TeacherPredictions {
    pub fn new(values: Tensor<f32>, fingerprint: u64) -> Result<Self> {
        if values.ndim() != 4 {
            return Err(Error::contract(format!(
                "teacher predictions must be W×N×H_out×C, got {:?}",
                values.shape()
            )));
        }
        if !values.all_finite() {
            return Err(Error::Numerical("teacher predictions".into()));
        }
        Ok(TeacherPredictions {
            values,
            fingerprint,
        })
    }

    pub fn dims(&self) -> TeacherDims {
        let s = self.values.shape();
        TeacherDims {
            windows: s[0],
            regions: s[1],
            h_out: s[2],
            channels: s[3],
        }
    }

    /// Rows for the given window positions, `[B, N, H_out, C]`.
    pub fn rows(&self, positions: &[usize]) -> Result<Tensor<f32>> {
        let d = self.dims();
        let per = d.regions * d.h_out * d.channels;
        let mut out = Vec::with_capacity(positions.len() * per);
        for &p in positions {
            if p >= d.windows {
                return Err(Error::Bounds {
                    what: "teacher windows",
                    index: p,
                    len: d.windows,
                });
            }
            out.extend_from_slice(&self.values.data()[p * per..(p + 1) * per]);
        }
        Tensor::new(vec![positions.len(), d.regions, d.h_out, d.channels], out)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let d = self.dims();
        let narrow = |v: usize, what: &str, max: u64| -> Result<u64> {
            if v as u64 > max {
                return Err(Error::Unsupported(format!(
                    "{what} {v} does not fit the teacher header"
                )));
            }
            Ok(v as u64)
        };
        let mut out = Vec::with_capacity(28 + self.values.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(
            &(narrow(d.windows, "window count", u32::MAX as u64)? as u32).to_le_bytes(),
        );
        out.extend_from_slice(
            &(narrow(d.regions, "region count", u32::MAX as u64)? as u32).to_le_bytes(),
        );
        out.extend_from_slice(&(narrow(d.h_out, "horizon", u16::MAX as u64)? as u16).to_le_bytes());
        out.extend_from_slice(
            &(narrow(d.channels, "channel count", u16::MAX as u64)? as u16).to_le_bytes(),
        );
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        put_f32s(&mut out, self.values.data());
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    /// Parse without checking dimensions or fingerprint.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        if r.take(4, "magic")? != MAGIC {
            return Err(r.fail("bad magic, not a teacher prediction file"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.fail(format!("unsupported version {version}")));
        }
        let w = r.u32("header")? as usize;
        let n = r.u32("header")? as usize;
        let h = r.u16("header")? as usize;
        let c = r.u16("header")? as usize;
        let fingerprint = r.u64("header")?;
        let count = w * n * h * c;
        let values = r.f32s(count, "payload")?;
        r.finish()?;
        TeacherPredictions::new(Tensor::new(vec![w, n, h, c], values)?, fingerprint)
    }
}

/// Read a teacher file and verify it against the dataset it will serve.
pub fn load_predictions(
    path: &Path,
    expected: TeacherDims,
    fingerprint: u64,
) -> Result<TeacherPredictions> {
    let bytes = fs::read(path)?;
    let t = TeacherPredictions::from_bytes(&bytes, path)?;
    let found = t.dims();
    if found != expected {
        return Err(Error::Mismatch {
            what: "teacher dimensions (W, N, H_out, C)",
            expected: format!(
                "({}, {}, {}, {})",
                expected.windows, expected.regions, expected.h_out, expected.channels
            ),
            found: format!(
                "({}, {}, {}, {})",
                found.windows, found.regions, found.h_out, found.channels
            ),
        });
    }
    if t.fingerprint != fingerprint {
        return Err(Error::Mismatch {
            what: "teacher dataset fingerprint",
            expected: format!("{fingerprint:016x}"),
            found: format!("{:016x}", t.fingerprint),
        });
    }
    Ok(t)
}
