//! Binary persistence for feature sets and retrieval indices, plus a JSON
//! debug export. Both formats are little-endian, versioned, and rejected on
//! unknown magic or version.
//!
//! Feature-set layout (magic `LRSF`, version 1):
//!   header: magic, u16 version, u32 image_id length + UTF-8 bytes,
//!           u32 feature count.
//!   per feature: f32 x, f32 y; 6 × f32 warp (row-major 2×2 linear part,
//!           then translation); u16 rank; f32 dequantization scale;
//!           128 descriptor bytes quantized as round(value / scale).
//!
//! Index layout (magic `LRVT`, version 1):
//!   header: magic, u16 version, u32 branch factor, u32 depth,
//!           u32 node count, u32 image count.
//!   per node: 128 × f32 centroid, f64 idf, u32 child count + u32 child ids,
//!           u32 inverted-file length + (u32 image index, u32 term count).
//!   per image entry: u32 id length + bytes, f64 latitude, f64 longitude,
//!           u32 source-id length + bytes, u32 vector length +
//!           (u32 node id, f64 weight).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use lrsift_core::vocab::{IndexEntry, TreeNode, DESC_DIM};
use lrsift_core::warp::AffineWarp;
use lrsift_core::{DatabaseIndex, Feature, FeatureSet, GeoTag, VocabTree};
use nalgebra::{Matrix2, Vector2};

use crate::error::{CliError, Result};

const FEATURES_MAGIC: &[u8; 4] = b"LRSF";
const INDEX_MAGIC: &[u8; 4] = b"LRVT";
const FORMAT_VERSION: u16 = 1;
const DEQUANT_SCALE: f32 = 1.0 / 255.0;

// ---- writing -------------------------------------------------------------

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

/// Serialize a feature set to its documented binary form.
pub fn feature_set_to_bytes(fs: &FeatureSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(FEATURES_MAGIC);
    out.extend(FORMAT_VERSION.to_le_bytes());
    put_str(&mut out, &fs.image_id);
    out.extend((fs.features.len() as u32).to_le_bytes());
    for f in &fs.features {
        out.extend((f.keypoint.x as f32).to_le_bytes());
        out.extend((f.keypoint.y as f32).to_le_bytes());
        let l = &f.warp.linear;
        for v in [
            l[(0, 0)],
            l[(0, 1)],
            l[(1, 0)],
            l[(1, 1)],
            f.warp.translation[0],
            f.warp.translation[1],
        ] {
            out.extend((v as f32).to_le_bytes());
        }
        out.extend((f.patch_rank.min(u16::MAX as usize) as u16).to_le_bytes());
        out.extend(DEQUANT_SCALE.to_le_bytes());
        debug_assert_eq!(f.descriptor.len(), DESC_DIM);
        for v in &f.descriptor {
            out.push((v / DEQUANT_SCALE).round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

pub fn write_feature_set(path: impl AsRef<Path>, fs: &FeatureSet) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, feature_set_to_bytes(fs)).map_err(|e| CliError::io(path, e))
}

/// Human-readable JSON export of a feature set (debugging aid; lossless for
/// everything but file size).
pub fn feature_set_to_json(fs: &FeatureSet) -> String {
    serde_json::to_string_pretty(fs).expect("feature set serializes")
}

/// Serialize a database index to its documented binary form.
pub fn index_to_bytes(index: &DatabaseIndex) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(INDEX_MAGIC);
    out.extend(FORMAT_VERSION.to_le_bytes());
    out.extend((index.tree.branch_factor as u32).to_le_bytes());
    out.extend((index.tree.depth as u32).to_le_bytes());
    out.extend((index.tree.nodes.len() as u32).to_le_bytes());
    out.extend((index.entries.len() as u32).to_le_bytes());
    for node in &index.tree.nodes {
        debug_assert_eq!(node.centroid.len(), DESC_DIM);
        for v in &node.centroid {
            out.extend(v.to_le_bytes());
        }
        out.extend(node.idf.to_le_bytes());
        out.extend((node.children.len() as u32).to_le_bytes());
        for c in &node.children {
            out.extend(c.to_le_bytes());
        }
        out.extend((node.inverted.len() as u32).to_le_bytes());
        for (img, count) in &node.inverted {
            out.extend(img.to_le_bytes());
            out.extend(count.to_le_bytes());
        }
    }
    for entry in &index.entries {
        put_str(&mut out, &entry.image_id);
        out.extend(entry.geotag.latitude.to_le_bytes());
        out.extend(entry.geotag.longitude.to_le_bytes());
        put_str(&mut out, &entry.geotag.source_id);
        out.extend((entry.vector.len() as u32).to_le_bytes());
        for (node, weight) in &entry.vector {
            out.extend(node.to_le_bytes());
            out.extend(weight.to_le_bytes());
        }
    }
    out
}

pub fn write_index(path: impl AsRef<Path>, index: &DatabaseIndex) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, index_to_bytes(index)).map_err(|e| CliError::io(path, e))
}

// ---- reading -------------------------------------------------------------

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CliError::corrupt(self.path, "unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| CliError::corrupt(self.path, "invalid UTF-8 string"))
    }

    fn header(&mut self, magic: &[u8; 4], what: &str) -> Result<()> {
        if self.take(4)? != magic {
            return Err(CliError::corrupt(
                self.path,
                format!("not a {what} file (bad magic)"),
            ));
        }
        let version = self.u16()?;
        if version != FORMAT_VERSION {
            return Err(CliError::UnsupportedFormat(format!(
                "{}: {what} format version {version} (supported: {FORMAT_VERSION})",
                self.path.display()
            )));
        }
        Ok(())
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(CliError::corrupt(self.path, "trailing bytes"));
        }
        Ok(())
    }
}

pub fn feature_set_from_bytes(path: &Path, bytes: &[u8]) -> Result<FeatureSet> {
    let mut r = Reader { bytes, pos: 0, path };
    r.header(FEATURES_MAGIC, "feature set")?;
    let image_id = r.string()?;
    let count = r.u32()? as usize;
    let mut features = Vec::with_capacity(count);
    for _ in 0..count {
        let x = r.f32()? as f64;
        let y = r.f32()? as f64;
        let mut w = [0.0f64; 6];
        for v in &mut w {
            *v = r.f32()? as f64;
        }
        let rank = r.u16()? as usize;
        let scale = r.f32()?;
        let q = r.take(DESC_DIM)?;
        features.push(Feature {
            keypoint: lrsift_core::Keypoint {
                x,
                y,
                response: 0.0,
            },
            warp: AffineWarp::new(
                Matrix2::new(w[0], w[1], w[2], w[3]),
                Vector2::new(w[4], w[5]),
            ),
            patch_rank: rank,
            descriptor: q.iter().map(|b| *b as f32 * scale).collect(),
        });
    }
    r.done()?;
    Ok(FeatureSet { image_id, features })
}

pub fn read_feature_set(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    feature_set_from_bytes(path, &bytes)
}

pub fn index_from_bytes(path: &Path, bytes: &[u8]) -> Result<DatabaseIndex> {
    let mut r = Reader { bytes, pos: 0, path };
    r.header(INDEX_MAGIC, "index")?;
    let branch_factor = r.u32()? as usize;
    let depth = r.u32()? as usize;
    let node_count = r.u32()? as usize;
    let image_count = r.u32()? as usize;
    let mut nodes = Vec::with_capacity(node_count);
    for _ in 0..node_count {
        let mut centroid = Vec::with_capacity(DESC_DIM);
        for _ in 0..DESC_DIM {
            centroid.push(r.f32()?);
        }
        let idf = r.f64()?;
        let nchildren = r.u32()? as usize;
        let mut children = Vec::with_capacity(nchildren);
        for _ in 0..nchildren {
            children.push(r.u32()?);
        }
        let ninv = r.u32()? as usize;
        let mut inverted = BTreeMap::new();
        for _ in 0..ninv {
            let img = r.u32()?;
            let count = r.u32()?;
            inverted.insert(img, count);
        }
        nodes.push(TreeNode {
            centroid,
            children,
            idf,
            inverted,
        });
    }
    let mut entries = Vec::with_capacity(image_count);
    for _ in 0..image_count {
        let image_id = r.string()?;
        let latitude = r.f64()?;
        let longitude = r.f64()?;
        let source_id = r.string()?;
        let nvec = r.u32()? as usize;
        let mut vector = BTreeMap::new();
        for _ in 0..nvec {
            let node = r.u32()?;
            let weight = r.f64()?;
            vector.insert(node, weight);
        }
        entries.push(IndexEntry {
            image_id,
            geotag: GeoTag {
                latitude,
                longitude,
                source_id,
            },
            vector,
        });
    }
    r.done()?;
    Ok(DatabaseIndex {
        tree: VocabTree {
            branch_factor,
            depth,
            nodes,
        },
        entries,
    })
}

pub fn read_index(path: impl AsRef<Path>) -> Result<DatabaseIndex> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    index_from_bytes(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lrsift_core::Keypoint;

    fn sample_set() -> FeatureSet {
        let desc = |k: usize| -> Vec<f32> {
            let mut v: Vec<f32> = (0..DESC_DIM).map(|i| ((i * 13 + k * 7) % 51) as f32).collect();
            let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            v.iter_mut().for_each(|x| *x /= n);
            v
        };
        FeatureSet {
            image_id: "facade-07".into(),
            features: (0..3)
                .map(|k| Feature {
                    keypoint: Keypoint {
                        x: 40.25 + k as f64,
                        y: 61.5,
                        response: 0.0,
                    },
                    warp: AffineWarp::new(
                        Matrix2::new(1.0, 0.25, -0.125, 1.0),
                        Vector2::new(-3.5, 2.0),
                    ),
                    patch_rank: 2 + k,
                    descriptor: desc(k),
                })
                .collect(),
        }
    }

    #[test]
    fn feature_set_binary_round_trip() {
        let fs = sample_set();
        let bytes = feature_set_to_bytes(&fs);
        let back = feature_set_from_bytes(Path::new("mem"), &bytes).unwrap();
        assert_eq!(back.image_id, fs.image_id);
        assert_eq!(back.features.len(), fs.features.len());
        for (a, b) in fs.features.iter().zip(&back.features) {
            assert_eq!(a.keypoint.x, b.keypoint.x);
            assert_eq!(a.warp, b.warp);
            assert_eq!(a.patch_rank, b.patch_rank);
            for (x, y) in a.descriptor.iter().zip(&b.descriptor) {
                assert!((x - y).abs() <= 0.5 * DEQUANT_SCALE, "{x} vs {y}");
            }
        }
        // re-serialization is byte-stable past the quantization
        assert_eq!(feature_set_to_bytes(&back), bytes);
    }

    #[test]
    fn unknown_version_rejected() {
        let mut bytes = feature_set_to_bytes(&sample_set());
        bytes[4] = 99;
        let err = feature_set_from_bytes(Path::new("mem"), &bytes).unwrap_err();
        assert!(matches!(err, CliError::UnsupportedFormat(_)), "{err}");
    }

    #[test]
    fn bad_magic_and_truncation_rejected() {
        let bytes = feature_set_to_bytes(&sample_set());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(
            feature_set_from_bytes(Path::new("mem"), &wrong),
            Err(CliError::CorruptData { .. })
        ));
        assert!(matches!(
            feature_set_from_bytes(Path::new("mem"), &bytes[..bytes.len() - 7]),
            Err(CliError::CorruptData { .. })
        ));
    }

    #[test]
    fn json_export_parses_back() {
        let fs = sample_set();
        let parsed: FeatureSet = serde_json::from_str(&feature_set_to_json(&fs)).unwrap();
        assert_eq!(parsed, fs);
    }

    #[test]
    fn index_binary_round_trip_exact() {
        let tree = VocabTree {
            branch_factor: 2,
            depth: 1,
            nodes: vec![
                TreeNode {
                    centroid: vec![0.0; DESC_DIM],
                    children: vec![1, 2],
                    idf: 0.0,
                    inverted: BTreeMap::new(),
                },
                TreeNode {
                    centroid: vec![0.25; DESC_DIM],
                    children: vec![],
                    idf: 0.6931471805599453,
                    inverted: BTreeMap::from([(0, 5)]),
                },
                TreeNode {
                    centroid: vec![0.5; DESC_DIM],
                    children: vec![],
                    idf: 0.0,
                    inverted: BTreeMap::from([(0, 2), (1, 3)]),
                },
            ],
        };
        let index = DatabaseIndex {
            tree,
            entries: vec![
                IndexEntry {
                    image_id: "a".into(),
                    geotag: GeoTag::new(22.3193, 114.1694, "hk-01").unwrap(),
                    vector: BTreeMap::from([(1, 0.75), (2, 0.25)]),
                },
                IndexEntry {
                    image_id: "b".into(),
                    geotag: GeoTag::new(48.8584, 2.2945, "").unwrap(),
                    vector: BTreeMap::from([(2, 1.0)]),
                },
            ],
        };
        let bytes = index_to_bytes(&index);
        let back = index_from_bytes(Path::new("mem"), &bytes).unwrap();
        assert_eq!(back, index);
        // deterministic serialization
        assert_eq!(index_to_bytes(&back), bytes);
    }

    #[test]
    fn index_unknown_version_rejected() {
        let index = DatabaseIndex {
            tree: VocabTree {
                branch_factor: 2,
                depth: 0,
                nodes: vec![],
            },
            entries: vec![],
        };
        let mut bytes = index_to_bytes(&index);
        bytes[4] = 7;
        assert!(matches!(
            index_from_bytes(Path::new("mem"), &bytes),
            Err(CliError::UnsupportedFormat(_))
        ));
    }
}
