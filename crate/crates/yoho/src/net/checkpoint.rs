//! Binary checkpoint format.
//!
//! Layout: magic `YOHO`, version, architecture block (head kind, width
//! divisor, input shape, class names), then named tensors (length-prefixed
//! UTF-8 name, rank, dims, row-major f32 little-endian values). Batch-norm
//! running statistics ride along as rank-1 tensors. A load/save cycle
//! reproduces the file byte for byte.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use super::{build_frame_cnn, build_yoho, ArchKind, BuildConfig, Network};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"YOHO";
const VERSION: u32 = 1;

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    net: &Network,
    classes: &[String],
) -> Result<()> {
    let path = path.as_ref();
    if classes.len() != net.n_classes {
        return Err(Error::InvalidConfig(format!(
            "{} class names for a {}-class network",
            classes.len(),
            net.n_classes
        )));
    }

    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.push(match net.arch {
        ArchKind::Yoho => 0u8,
        ArchKind::FrameCnn => 1u8,
    });
    bytes.extend_from_slice(&(net.width_divisor as u32).to_le_bytes());
    bytes.extend_from_slice(&(net.input_time as u32).to_le_bytes());
    bytes.extend_from_slice(&(net.n_mels as u32).to_le_bytes());
    bytes.extend_from_slice(&(net.n_classes as u32).to_le_bytes());
    for class in classes {
        let name = class.as_bytes();
        bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
        bytes.extend_from_slice(name);
    }

    let params = net.named_params();
    let state = net.named_state();
    bytes.extend_from_slice(&((params.len() + state.len()) as u32).to_le_bytes());
    let mut write_tensor = |name: &str, shape: &[usize], data: &[f64]| {
        bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        bytes.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            bytes.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in data {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    };
    for (name, p) in &params {
        write_tensor(name, &p.shape, &p.data);
    }
    for (name, s) in &state {
        write_tensor(name, &[s.len()], s);
    }

    std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Network, Vec<String>)> {
    let path = path.as_ref();
    let bad = |detail: String| Error::BadFileFormat {
        path: path.to_path_buf(),
        detail,
    };
    let mut file = std::fs::File::open(path).map_err(|e| Error::Unreadable {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;

    let mut cursor = 0usize;
    macro_rules! take {
        ($n:expr) => {{
            let n = $n;
            if cursor + n > bytes.len() {
                return Err(bad("unexpected end of file".into()));
            }
            let slice = &bytes[cursor..cursor + n];
            cursor += n;
            slice
        }};
    }
    macro_rules! take_u32 {
        () => {
            u32::from_le_bytes(take!(4).try_into().unwrap()) as usize
        };
    }

    if take!(4) != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = take_u32!();
    if version != VERSION as usize {
        return Err(bad(format!("unsupported version {version}")));
    }
    let arch = match take!(1)[0] {
        0 => ArchKind::Yoho,
        1 => ArchKind::FrameCnn,
        other => return Err(bad(format!("unknown architecture tag {other}"))),
    };
    let width_divisor = take_u32!();
    let input_time = take_u32!();
    let n_mels = take_u32!();
    let n_classes = take_u32!();
    let mut classes = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        let len = take_u32!();
        let name = std::str::from_utf8(take!(len))
            .map_err(|_| bad("class name is not UTF-8".into()))?
            .to_string();
        classes.push(name);
    }

    let n_tensors = take_u32!();
    let mut tensors: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::new();
    for _ in 0..n_tensors {
        let name_len = take_u32!();
        let name = std::str::from_utf8(take!(name_len))
            .map_err(|_| bad("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = take_u32!();
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(take_u32!());
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f32::from_le_bytes(take!(4).try_into().unwrap()) as f64);
        }
        tensors.insert(name, (shape, data));
    }
    if cursor != bytes.len() {
        return Err(bad("trailing bytes after tensor table".into()));
    }

    let cfg = BuildConfig {
        width_divisor,
        seed: 0,
    };
    let mut net = match arch {
        ArchKind::Yoho => build_yoho(input_time, n_mels, n_classes, cfg)?,
        ArchKind::FrameCnn => build_frame_cnn(input_time, n_mels, n_classes, cfg)?,
    };
    for (name, p) in net.named_params_mut() {
        let (shape, data) = tensors
            .remove(&name)
            .ok_or_else(|| bad(format!("missing tensor {name}")))?;
        if shape != p.shape {
            return Err(bad(format!(
                "tensor {name} has shape {shape:?}, expected {:?}",
                p.shape
            )));
        }
        p.data = data;
    }
    for (name, s) in net.named_state_mut() {
        let (_, data) = tensors
            .remove(&name)
            .ok_or_else(|| bad(format!("missing tensor {name}")))?;
        if data.len() != s.len() {
            return Err(bad(format!("tensor {name} has wrong length")));
        }
        *s = data;
    }
    if !tensors.is_empty() {
        let mut extra: Vec<String> = tensors.into_keys().collect();
        extra.sort();
        return Err(bad(format!("unexpected tensors: {extra:?}")));
    }
    Ok((net, classes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::build_yoho;

    fn classes() -> Vec<String> {
        vec!["speech".to_string(), "music".to_string()]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = build_yoho(
            64,
            16,
            2,
            BuildConfig {
                width_divisor: 8,
                seed: 77,
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.yoho");
        let p2 = dir.path().join("b.yoho");
        save_checkpoint(&p1, &net, &classes()).unwrap();
        let (loaded, loaded_classes) = load_checkpoint(&p1).unwrap();
        assert_eq!(loaded_classes, classes());
        assert_eq!(loaded.param_count(), net.param_count());
        save_checkpoint(&p2, &loaded, &loaded_classes).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2, "save -> load -> save must be byte-identical");
    }

    #[test]
    fn loaded_network_predicts_identically() {
        use crate::net::tensor::Tensor;
        let mut net = build_yoho(
            64,
            16,
            2,
            BuildConfig {
                width_divisor: 8,
                seed: 78,
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.yoho");
        save_checkpoint(&path, &net, &classes()).unwrap();
        let (mut loaded, _) = load_checkpoint(&path).unwrap();

        let mut batch = Tensor::zeros(&[1, 64, 16, 1]);
        for (i, v) in batch.data.iter_mut().enumerate() {
            *v = ((i % 11) as f64 - 5.0) / 5.0;
        }
        let a = net.forward_infer(&batch).unwrap();
        let b = loaded.forward_infer(&batch).unwrap();
        // Parameters pass through f32 on disk, so fresh f64 weights are
        // truncated; reloading the saved net reproduces its own outputs.
        save_checkpoint(&path, &loaded, &classes()).unwrap();
        let (mut again, _) = load_checkpoint(&path).unwrap();
        let c = again.forward_infer(&batch).unwrap();
        assert_eq!(b.data, c.data);
        for (x, y) in a.data.iter().zip(b.data.iter()) {
            assert!((x - y).abs() < 1e-4, "f32 truncation moved output too far");
        }
    }

    #[test]
    fn corrupted_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.yoho");
        std::fs::write(&path, b"YOHOxxxx").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::BadFileFormat { .. })
        ));
    }
}
