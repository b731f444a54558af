//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! the R, G and B planes, each 32x32 row-major.

use std::path::Path;

use super::{Dataset, Provenance, Split};
use crate::error::{PcnError, Result};
use crate::numerics::Tensor;

pub const RECORD_LEN: usize = 3073;
pub const PIXELS: usize = 3072;
pub const CIFAR_MEAN: [f32; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR_STD: [f32; 3] = [0.2470, 0.2435, 0.2616];
pub const TRAIN_FILES: [&str; 5] =
    ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"];
pub const TEST_FILE: &str = "test_batch.bin";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawRecord {
    pub label: u8,
    pub pixels: Vec<u8>,
}

/// Splits a batch file into records; `base_offset` only shifts error offsets.
pub fn parse_records(bytes: &[u8], base_offset: usize) -> Result<Vec<RawRecord>> {
    if bytes.len() % RECORD_LEN != 0 {
        let whole = bytes.len() / RECORD_LEN * RECORD_LEN;
        return Err(PcnError::Format {
            offset: base_offset + whole,
            msg: format!("{} bytes is not a multiple of {RECORD_LEN}", bytes.len()),
        });
    }
    bytes
        .chunks_exact(RECORD_LEN)
        .enumerate()
        .map(|(i, rec)| {
            if rec[0] > 9 {
                return Err(PcnError::Data(format!(
                    "label byte {} > 9 in record {i} (byte offset {})",
                    rec[0],
                    base_offset + i * RECORD_LEN
                )));
            }
            Ok(RawRecord { label: rec[0], pixels: rec[1..].to_vec() })
        })
        .collect()
}

pub fn serialize_records(records: &[RawRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * RECORD_LEN);
    for r in records {
        out.push(r.label);
        out.extend_from_slice(&r.pixels);
    }
    out
}

/// Scales to [0, 1] and normalises per channel.
pub fn normalise(records: &[RawRecord]) -> Tensor<f32> {
    let mut data = Vec::with_capacity(records.len() * PIXELS);
    for r in records {
        for (c, plane) in r.pixels.chunks_exact(1024).enumerate() {
            data.extend(plane.iter().map(|&p| (p as f32 / 255.0 - CIFAR_MEAN[c]) / CIFAR_STD[c]));
        }
    }
    Tensor::new(&[records.len(), 3, 32, 32], data).expect("record length is fixed")
}

pub fn read_split_records(dir: &Path, split: Split) -> Result<Vec<RawRecord>> {
    let files: Vec<&str> = match split {
        Split::Train => TRAIN_FILES.to_vec(),
        Split::Test => vec![TEST_FILE],
    };
    let mut out = Vec::new();
    for f in files {
        let path = dir.join(f);
        let bytes = std::fs::read(&path)
            .map_err(|e| PcnError::Data(format!("cannot read {}: {e}", path.display())))?;
        out.extend(parse_records(&bytes, 0)?);
    }
    Ok(out)
}

/// Loads a split in file order.
pub fn load_cifar10(dir: &Path, split: Split) -> Result<Dataset> {
    let records = read_split_records(dir, split)?;
    Ok(Dataset {
        images: normalise(&records),
        labels: records.iter().map(|r| r.label as usize).collect(),
        split,
        provenance: Provenance::Cifar10,
        num_classes: 10,
    })
}
