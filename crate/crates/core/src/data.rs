//! IDX image files, the bundled mini fixture and epoch batching.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Magic number of an unsigned-byte, three-dimensional IDX file.
pub const IMAGE_MAGIC: u32 = 0x0000_0803;
/// File looked up inside `DATA_DIR`.
pub const DEFAULT_FILE: &str = "train-images-idx3-ubyte";
pub const DATA_DIR_ENV: &str = "DATA_DIR";

const FIXTURE_BYTES: &[u8] = include_bytes!("../assets/mini_fixture.idx");
const FIXTURE_COUNT: usize = 64;
const FIXTURE_SIDE: usize = 28;

/// Equally sized 8-bit grayscale images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSet {
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<Vec<u8>>,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Keeps the first `n` images.
    pub fn truncate(&mut self, n: usize) {
        self.images.truncate(n);
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    match bytes.get(offset..offset + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => Err(Error::IdxTruncated {
            offset: bytes.len() as u64,
            needed: (offset + 4 - bytes.len()) as u64,
        }),
    }
}

/// Parses an IDX image file: big-endian magic `0x00000803`, then count, rows
/// and cols as big-endian `u32`, then `count * rows * cols` bytes.
pub fn parse_idx_images(bytes: &[u8]) -> Result<ImageSet> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::IdxBadMagic {
            offset: 0,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let size = rows * cols;
    let payload = count as u64 * size as u64;
    let available = (bytes.len() - 16) as u64;
    if available < payload {
        return Err(Error::IdxTruncated {
            offset: bytes.len() as u64,
            needed: payload - available,
        });
    }
    let images = (0..count)
        .map(|i| bytes[16 + i * size..16 + (i + 1) * size].to_vec())
        .collect();
    Ok(ImageSet { rows, cols, images })
}

pub fn read_idx_images(path: &Path) -> Result<ImageSet> {
    parse_idx_images(&fs::read(path)?)
}

pub fn encode_idx_images(set: &ImageSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + set.len() * set.rows * set.cols);
    for v in [IMAGE_MAGIC, set.len() as u32, set.rows as u32, set.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in &set.images {
        out.extend_from_slice(img);
    }
    out
}

pub fn write_idx_images(path: &Path, set: &ImageSet) -> Result<()> {
    fs::write(path, encode_idx_images(set))?;
    Ok(())
}

/// The 64 bundled 28x28 images.
pub fn mini_fixture() -> ImageSet {
    parse_idx_images(FIXTURE_BYTES).expect("bundled fixture is valid")
}

struct Lcg(u32);

impl Lcg {
    fn next(&mut self) -> u32 {
        self.0 = self.0.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
        self.0 >> 8
    }

    fn range(&mut self, lo: i32, hi: i32) -> i32 {
        lo + (self.next() % (hi - lo + 1) as u32) as i32
    }
}

/// Regenerates the fixture with integer arithmetic only: rings, bars,
/// strokes, crosses, disks and corner shapes with jittered placement.
pub fn generate_fixture() -> ImageSet {
    let n = FIXTURE_SIDE as i32;
    let mut rng = Lcg(0x5eed_1234);
    let mut images = Vec::with_capacity(FIXTURE_COUNT);
    for i in 0..FIXTURE_COUNT {
        let mut img = vec![0u8; FIXTURE_SIDE * FIXTURE_SIDE];
        let cx = 14 + rng.range(-2, 2);
        let cy = 14 + rng.range(-2, 2);
        let level = rng.range(190, 255);
        let half = rng.range(6, 10);
        let thick = rng.range(1, 2);
        let inside = |r: i32, c: i32| -> bool {
            let (dy, dx) = (r - cy, c - cx);
            let d2 = dx * dx + dy * dy;
            match i % 8 {
                0 => d2 <= half * half && d2 >= (half - 2 * thick) * (half - 2 * thick),
                1 => dx.abs() <= thick && dy.abs() <= half,
                2 => dy.abs() <= thick && dx.abs() <= half,
                3 => (dx - dy).abs() <= thick && dx.abs() <= half,
                4 => (dx.abs() <= thick && dy.abs() <= half) || (dy.abs() <= thick && dx.abs() <= half),
                5 => d2 <= (half / 2 + 1) * (half / 2 + 1),
                6 => {
                    (dx.abs() <= thick && dy.abs() <= half) || ((dy - half).abs() <= thick && (0..=half).contains(&dx))
                }
                _ => ((dy + half).abs() <= thick && dx.abs() <= half) || ((dx + dy).abs() <= thick && dy.abs() <= half),
            }
        };
        for r in 0..n {
            for c in 0..n {
                if inside(r, c) {
                    let shade = level - rng.range(0, 24);
                    img[(r * n + c) as usize] = shade.clamp(0, 255) as u8;
                }
            }
        }
        images.push(img);
    }
    ImageSet {
        rows: FIXTURE_SIDE,
        cols: FIXTURE_SIDE,
        images,
    }
}

/// Where images come from: an explicit path, then `$DATA_DIR`, then the
/// bundled fixture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    File(PathBuf),
    Fixture,
}

impl DataSource {
    pub fn resolve(explicit: Option<&Path>) -> Self {
        if let Some(p) = explicit {
            return DataSource::File(p.to_path_buf());
        }
        match std::env::var_os(DATA_DIR_ENV) {
            Some(dir) if !dir.is_empty() => {
                let dir = PathBuf::from(dir);
                DataSource::File(if dir.is_dir() { dir.join(DEFAULT_FILE) } else { dir })
            }
            _ => DataSource::Fixture,
        }
    }

    pub fn load(&self) -> Result<ImageSet> {
        match self {
            DataSource::File(p) => read_idx_images(p),
            DataSource::Fixture => Ok(mini_fixture()),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            DataSource::File(p) => p.display().to_string(),
            DataSource::Fixture => "bundled mini fixture".to_string(),
        }
    }
}

/// Seeded permutation of `0..n` for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1000 + epoch as u64);
    order.shuffle(&mut rng);
    order
}

/// Consecutive batches of `order`; the last one may be smaller.
pub fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    order.chunks(size.max(1)).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn committed_fixture_matches_generator() {
        assert_eq!(FIXTURE_BYTES, encode_idx_images(&generate_fixture()).as_slice());
        let f = mini_fixture();
        assert_eq!((f.len(), f.rows, f.cols), (64, 28, 28));
        assert!(f.images.iter().all(|img| img.iter().any(|&v| v > 0)));
    }

    #[test]
    fn empty_file_is_truncated_at_zero() {
        assert!(matches!(
            parse_idx_images(&[]),
            Err(Error::IdxTruncated { offset: 0, .. })
        ));
    }

    #[test]
    fn batches_keep_partial_tail() {
        let order = epoch_order(10, 1, 0);
        let b = batches(&order, 4);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_ne!(epoch_order(10, 1, 0), epoch_order(10, 1, 1));
    }
}
