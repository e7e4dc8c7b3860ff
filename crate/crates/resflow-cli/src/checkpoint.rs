//! Binary model checkpoint.
//!
//! Layout, all little-endian, no padding:
//!   magic  [u8; 8]  = "RFLWCKPT"
//!   version u32     = 1
//!   dim     u32
//!   hidden  u32
//!   layers  u32
//!   shared  u8      (0/1)
//!   variant u8      (0 unshared, 1 shared, 2 shared_ic_data, 3 shared_ic_domain)
//!   scheme  u8      (0 euler, 1 rk4)
//!   step_mode u8    (0 normalized, 1 absorbed)
//!   bias    u8      (0/1)
//!   parameters, f64 little-endian, in declared order: for each distinct
//!   field w1 row-major (hidden·dim), b1 (hidden, only when bias=1),
//!   w2 row-major (dim·hidden); then head w (dim), head b (1).
//!
//! Saving a loaded checkpoint reproduces the input byte for byte.

use crate::config::Variant;
use crate::error::CliError;
use resflow_core::{ClassifierHead, Flow, FlowModel, Scheme, StepMode, Tensor, VelocityField};
use std::path::Path;

const MAGIC: &[u8; 8] = b"RFLWCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: FlowModel,
    pub head: ClassifierHead,
    pub variant: Variant,
}

pub fn to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let model = &ckpt.model;
    let dim = model.dim() as u32;
    let hidden = model.distinct_fields()[0].hidden() as u32;
    let bias = model.distinct_fields()[0].has_bias();

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&hidden.to_le_bytes());
    out.extend_from_slice(&(model.steps() as u32).to_le_bytes());
    out.push(u8::from(model.is_shared()));
    out.push(ckpt.variant.to_byte());
    out.push(match model.scheme() {
        Scheme::Euler => 0,
        Scheme::Rk4 => 1,
    });
    out.push(match model.step_mode() {
        StepMode::Normalized => 0,
        StepMode::Absorbed => 1,
    });
    out.push(u8::from(bias));

    let mut push_tensor = |t: &Tensor| {
        for v in t.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for field in model.distinct_fields() {
        for t in field.params() {
            push_tensor(t);
        }
    }
    push_tensor(ckpt.head.w());
    push_tensor(&Tensor::from_vec(1, 1, vec![ckpt.head.b()]));
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CliError> {
    let bad = |msg: String| CliError::Input(format!("invalid checkpoint: {msg}"));
    let header_len = 8 + 4 * 4 + 5;
    if bytes.len() < header_len {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = u32_at(8);
    if version != VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let dim = u32_at(12) as usize;
    let hidden = u32_at(16) as usize;
    let layers = u32_at(20) as usize;
    let shared = match bytes[24] {
        0 => false,
        1 => true,
        b => return Err(bad(format!("bad shared flag {b}"))),
    };
    let variant =
        Variant::from_byte(bytes[25]).ok_or_else(|| bad(format!("bad variant byte {}", bytes[25])))?;
    if variant.shared() != shared {
        return Err(bad(format!(
            "variant {variant} contradicts shared flag {shared}"
        )));
    }
    let scheme = match bytes[26] {
        0 => Scheme::Euler,
        1 => Scheme::Rk4,
        b => return Err(bad(format!("bad scheme byte {b}"))),
    };
    let step_mode = match bytes[27] {
        0 => StepMode::Normalized,
        1 => StepMode::Absorbed,
        b => return Err(bad(format!("bad step-mode byte {b}"))),
    };
    let bias = match bytes[28] {
        0 => false,
        1 => true,
        b => return Err(bad(format!("bad bias flag {b}"))),
    };
    if dim == 0 || hidden == 0 || layers == 0 {
        return Err(bad(format!("degenerate shape dim={dim} hidden={hidden} layers={layers}")));
    }

    let distinct = if shared { 1 } else { layers };
    let field_len = hidden * dim + if bias { hidden } else { 0 } + dim * hidden;
    let expected = header_len + 8 * (distinct * field_len + dim + 1);
    if bytes.len() != expected {
        return Err(bad(format!(
            "expected {expected} bytes for the declared shapes, found {}",
            bytes.len()
        )));
    }

    let mut off = header_len;
    let mut read_tensor = |rows: usize, cols: usize| -> Result<Tensor, CliError> {
        let n = rows * cols;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
            off += 8;
        }
        Tensor::checked(rows, cols, data)
            .map_err(|e| CliError::Input(format!("invalid checkpoint: {e}")))
    };

    let mut fields = Vec::with_capacity(distinct);
    for _ in 0..distinct {
        let w1 = read_tensor(hidden, dim)?;
        let b1 = if bias { Some(read_tensor(hidden, 1)?) } else { None };
        let w2 = read_tensor(dim, hidden)?;
        fields.push(
            VelocityField::new(w1, b1, w2)
                .map_err(|e| CliError::Input(format!("invalid checkpoint: {e}")))?,
        );
    }
    let head_w = read_tensor(1, dim)?;
    let head_b = read_tensor(1, 1)?;

    let model = if shared {
        Flow::shared(fields.pop().expect("one field"), layers, scheme, step_mode)
    } else {
        Flow::unshared(fields, scheme, step_mode)
    }
    .map_err(|e| CliError::Input(format!("invalid checkpoint: {e}")))?;

    Ok(Checkpoint {
        model,
        head: ClassifierHead::new(head_w, head_b.get(0, 0)),
        variant,
    })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<(), CliError> {
    std::fs::write(path, to_bytes(ckpt))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Input(format!("cannot read checkpoint {}: {e}", path.display())))?;
    from_bytes(&bytes)
}
