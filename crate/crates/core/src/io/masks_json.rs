//! Instance-mask JSON:
//! `{"image_id", "height", "width", "instances": [{"id", "score", "bbox": [cu, cv, w, h], "rle": [...]}]}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{BBox, Detection};
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, InstanceMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskRecord {
    pub id: u64,
    pub score: f64,
    pub bbox: [f64; 4],
    pub rle: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskFile {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub instances: Vec<MaskRecord>,
}

impl MaskFile {
    /// Instances are numbered in slice order.
    pub fn from_instances(image_id: impl Into<String>, height: usize, width: usize, instances: &[InstanceMask]) -> Result<Self> {
        let mut records = Vec::with_capacity(instances.len());
        for (id, inst) in instances.iter().enumerate() {
            if (inst.height(), inst.width()) != (height, width) {
                return Err(Error::usage(format!(
                    "instance {id} is {}x{}, file is {height}x{width}",
                    inst.height(),
                    inst.width()
                )));
            }
            let b = inst.detection.bbox;
            records.push(MaskRecord {
                id: id as u64,
                score: inst.detection.score,
                bbox: [b.cu, b.cv, b.w, b.h],
                rle: inst.mask.to_rle(),
            });
        }
        Ok(Self {
            image_id: image_id.into(),
            height,
            width,
            instances: records,
        })
    }

    pub fn to_instances(&self) -> Result<Vec<InstanceMask>> {
        self.instances
            .iter()
            .map(|r| {
                let [cu, cv, w, h] = r.bbox;
                let bbox = BBox::new(cu, cv, w, h)
                    .map_err(|e| Error::Data(format!("instance {}: {e}", r.id)))?;
                let detection = Detection::new(bbox, r.score)
                    .map_err(|e| Error::Data(format!("instance {}: {e}", r.id)))?;
                let mask = BinaryMask::from_rle(self.height, self.width, &r.rle)
                    .map_err(|e| Error::Data(format!("instance {}: {e}", r.id)))?;
                Ok(InstanceMask::new(mask, detection))
            })
            .collect()
    }
}

pub fn parse_masks_json(bytes: &[u8], path: &Path) -> Result<MaskFile> {
    let file: MaskFile = serde_json::from_slice(bytes).map_err(|e| {
        Error::format(path, format!("line {} column {}", e.line(), e.column()), e.to_string())
    })?;
    if file.height == 0 || file.width == 0 {
        return Err(Error::format(path, "height/width", "image extent must be positive"));
    }
    // decode once so that a bad instance is reported against the file
    file.to_instances()
        .map_err(|e| Error::format(path, "instances", e.to_string()))?;
    Ok(file)
}

pub fn read_masks_json(path: impl AsRef<Path>) -> Result<MaskFile> {
    let path = path.as_ref();
    parse_masks_json(&super::read_bytes(path)?, path)
}

pub fn encode_masks_json(file: &MaskFile) -> Vec<u8> {
    let mut bytes = serde_json::to_vec(file).expect("mask file serializes");
    bytes.push(b'\n');
    bytes
}

pub fn write_masks_json(path: impl AsRef<Path>, file: &MaskFile) -> Result<()> {
    super::write_bytes(path.as_ref(), &encode_masks_json(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("m.json")
    }

    #[test]
    fn round_trip() {
        let d = Detection::new(BBox::new(2.5, 1.0, 4.0, 3.0).unwrap(), 0.3).unwrap();
        let inst = InstanceMask::new(BinaryMask::from_fn(4, 6, |r, c| r < 3 && (1..5).contains(&c)), d);
        let file = MaskFile::from_instances("im", 4, 6, std::slice::from_ref(&inst)).unwrap();
        let back = parse_masks_json(&encode_masks_json(&file), p()).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.to_instances().unwrap(), vec![inst]);
    }

    #[test]
    fn bad_documents() {
        let err = parse_masks_json(b"{\"image_id\": \"a\",\n \"height\": -1}", p())
            .unwrap_err()
            .to_string();
        assert!(err.contains("m.json") && err.contains("line 2"), "{err}");
        let short = br#"{"image_id":"a","height":2,"width":2,"instances":[{"id":0,"score":1,"bbox":[0,0,1,1],"rle":[1,2]}]}"#;
        assert!(parse_masks_json(short, p()).is_err());
        let extra = br#"{"image_id":"a","height":2,"width":2,"instances":[],"x":1}"#;
        assert!(parse_masks_json(extra, p()).is_err());
    }
}
