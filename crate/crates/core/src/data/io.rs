//! Binary pair files.
//!
//! ```text
//! magic "ESFWPAIR" | version u32 | N u64 | M u64 | flags u32
//! A positions  N×3 f64
//! B positions  M×3 f64
//! gt           N   u64
//! rotation 9 f64 (row-major) | translation 3 f64 | noise sigma f64
//! if flags & 1: kernel width f64 | kernel count u64 | per kernel 7 f64
//!               (center, direction, amplitude)
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};

use super::pairs::{DeformKernel, DeformMeta, PairSample};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const PAIR_MAGIC: &[u8; 8] = b"ESFWPAIR";
pub const PAIR_VERSION: u32 = 1;
const FLAG_DEFORMED: u32 = 1;

pub fn write_pair(path: &Path, sample: &PairSample) -> Result<()> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(PAIR_MAGIC);
    out.write_u32::<LittleEndian>(PAIR_VERSION)?;
    out.write_u64::<LittleEndian>(sample.cloud_a.len() as u64)?;
    out.write_u64::<LittleEndian>(sample.cloud_b.len() as u64)?;
    let flags = if sample.deform.is_some() { FLAG_DEFORMED } else { 0 };
    out.write_u32::<LittleEndian>(flags)?;
    for cloud in [&sample.cloud_a, &sample.cloud_b] {
        for v in cloud.positions().data() {
            out.write_f64::<LittleEndian>(*v)?;
        }
    }
    for &m in &sample.gt {
        out.write_u64::<LittleEndian>(m as u64)?;
    }
    for v in sample.rotation.iter().flatten().chain(&sample.translation) {
        out.write_f64::<LittleEndian>(*v)?;
    }
    out.write_f64::<LittleEndian>(sample.noise_sigma)?;
    if let Some(meta) = &sample.deform {
        out.write_f64::<LittleEndian>(meta.width)?;
        out.write_u64::<LittleEndian>(meta.kernels.len() as u64)?;
        for k in &meta.kernels {
            for v in k.center.iter().chain(&k.direction).chain([&k.amplitude]) {
                out.write_f64::<LittleEndian>(*v)?;
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl Reader<'_> {
    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(self.err(
                self.pos,
                format!("file ends while reading {what} ({len} bytes needed, {} left)", self.bytes.len() - self.pos),
            ));
        }
        let slice = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.take(4, what).map(LittleEndian::read_u32)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        self.take(8, what).map(LittleEndian::read_u64)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        self.take(8, what).map(LittleEndian::read_f64)
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        let v = self.u64(what)?;
        // Every counted item takes at least 8 bytes, so larger counts cannot fit.
        if v > (self.bytes.len() / 8) as u64 {
            return Err(self.err(at, format!("{what} {v} exceeds the file size")));
        }
        Ok(v as usize)
    }

    fn cloud(&mut self, rows: usize, what: &str) -> Result<PointCloud> {
        let at = self.pos;
        let data = (0..rows * 3).map(|_| self.f64(what)).collect::<Result<Vec<f64>>>()?;
        PointCloud::new(Tensor::new(&[rows, 3], data)?).map_err(|e| self.err(at, format!("{what}: {e}")))
    }
}

pub fn read_pair(path: &Path) -> Result<PairSample> {
    let bytes = fs::read(path).map_err(Error::read(path))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path: path.to_path_buf(),
    };
    if r.take(8, "magic")? != PAIR_MAGIC {
        return Err(r.err(0, "not a pair file (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != PAIR_VERSION {
        return Err(r.err(8, format!("unsupported version {version}")));
    }
    let n = r.count("point count N")?;
    let m = r.count("point count M")?;
    let flags_at = r.pos;
    let flags = r.u32("flags")?;
    if flags & !FLAG_DEFORMED != 0 {
        return Err(r.err(flags_at, format!("unknown flags {flags:#x}")));
    }
    let cloud_a = r.cloud(n, "A positions")?;
    let cloud_b = r.cloud(m, "B positions")?;
    let mut gt = Vec::with_capacity(n);
    for _ in 0..n {
        let at = r.pos;
        let v = r.u64("gt permutation")?;
        if v >= m as u64 {
            return Err(r.err(at, format!("gt entry {v} out of range for M = {m}")));
        }
        gt.push(v as usize);
    }
    let mut rotation = [[0.0; 3]; 3];
    for v in rotation.iter_mut().flatten() {
        *v = r.f64("rotation")?;
    }
    let mut translation = [0.0; 3];
    for v in &mut translation {
        *v = r.f64("translation")?;
    }
    let noise_sigma = r.f64("noise sigma")?;
    let deform = if flags & FLAG_DEFORMED != 0 {
        let width = r.f64("kernel width")?;
        let count = r.count("kernel count")?;
        let mut kernels = Vec::with_capacity(count);
        for _ in 0..count {
            let mut v = [0.0; 7];
            for x in &mut v {
                *x = r.f64("kernel")?;
            }
            kernels.push(DeformKernel {
                center: [v[0], v[1], v[2]],
                direction: [v[3], v[4], v[5]],
                amplitude: v[6],
            });
        }
        Some(DeformMeta { width, kernels })
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(r.err(r.pos, format!("{} trailing bytes after the pair", bytes.len() - r.pos)));
    }
    let sample = PairSample {
        cloud_a,
        cloud_b,
        gt,
        rotation,
        translation,
        noise_sigma,
        deform,
    };
    sample.validate().map_err(|e| r.err(0, e.to_string()))?;
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_shape, make_deformed_pair, make_rigid_pair, ShapeKind};

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = gen_shape(ShapeKind::GaussianClusters, 12, 4).unwrap();
        for (i, sample) in [
            make_rigid_pair(&cloud, 1, 0.01).unwrap(),
            make_deformed_pair(&cloud, 2, 3, 0.05).unwrap(),
        ]
        .into_iter()
        .enumerate()
        {
            let path = dir.path().join(format!("p{i}.bin"));
            write_pair(&path, &sample).unwrap();
            assert_eq!(read_pair(&path).unwrap(), sample);
        }
    }

    #[test]
    fn truncation_reports_an_offset() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = gen_shape(ShapeKind::Sphere, 8, 4).unwrap();
        let path = dir.path().join("p.bin");
        write_pair(&path, &make_rigid_pair(&cloud, 1, 0.0).unwrap()).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..100]).unwrap();
        match read_pair(&path) {
            Err(Error::Parse { offset, .. }) => assert!(offset <= 100),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn header_count_must_match_the_payload() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = gen_shape(ShapeKind::Sphere, 8, 4).unwrap();
        let path = dir.path().join("p.bin");
        write_pair(&path, &make_rigid_pair(&cloud, 1, 0.0).unwrap()).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        LittleEndian::write_u64(&mut bytes[12..20], 7);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_pair(&path), Err(Error::Parse { .. })));
    }
}
