//! Network model file, version 1. Little-endian throughout:
//!
//! ```text
//! "CNNM" u32 version
//! u32 input_channels u32 height u32 width u32 conv1 u32 conv2 u32 hidden
//! f32 dropout  u64 seed  u32 epochs_run  u32 best_epoch
//! u32 n_params, then n_params × f32 in layout order
//! ```
//!
//! Loss curves are not part of the model file; they go to a CSV log.

use std::io::{Read, Write};

use super::{CnnModel, CnnSpec, Real, TrainMeta};
use crate::codec::{LeReader, LeWriter};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CNNM";
const VERSION: u32 = 1;

impl<F: Real> CnnModel<F> {
    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let s = &self.spec;
        let mut w = LeWriter::new(writer);
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        for d in [s.input_channels, s.height, s.width, s.conv1, s.conv2, s.hidden] {
            w.u32(d as u32)?;
        }
        w.f32(s.dropout as f32)?;
        w.u64(self.meta.seed)?;
        w.u32(self.meta.epochs_run as u32)?;
        w.u32(self.meta.best_epoch as u32)?;
        w.u32(self.params.len() as u32)?;
        for p in &self.params {
            w.f32(p.to_f32().unwrap_or(f32::NAN))?;
        }
        w.finish()?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let bad = |why: String| Error::format("<cnn>", why);
        let mut r = LeReader::new(reader);
        if &r.array::<4>()? != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let [input_channels, height, width, conv1, conv2, hidden] = dims;
        let spec = CnnSpec {
            input_channels,
            height,
            width,
            conv1,
            conv2,
            hidden,
            dropout: r.f32()? as f64,
        };
        spec.validate().map_err(|e| bad(e.to_string()))?;
        let seed = r.u64()?;
        let epochs_run = r.u32()? as usize;
        let best_epoch = r.u32()? as usize;
        let n = r.u32()? as usize;
        if n != spec.layout().total {
            return Err(bad(format!("{n} parameters, spec needs {}", spec.layout().total)));
        }
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let v = r.f32()?;
            if !v.is_finite() {
                return Err(bad("non-finite parameter".into()));
            }
            params.push(F::of(v as f64));
        }
        r.expect_eof().map_err(|_| bad("trailing bytes".into()))?;
        Ok(Self {
            spec,
            params,
            meta: TrainMeta {
                seed,
                epochs_run,
                best_epoch,
                ..TrainMeta::default()
            },
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(buf)
    }
}

/// Appends one row per epoch (`model,epoch,train_loss,val_loss,val_accuracy`),
/// writing the header when `header` is set.
pub fn write_training_log<W: Write>(writer: W, model_name: &str, meta: &TrainMeta, header: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    if header {
        w.write_record(["model", "epoch", "train_loss", "val_loss", "val_accuracy"])?;
    }
    for (i, loss) in meta.train_loss.iter().enumerate() {
        let opt = |v: Option<&f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        w.write_record([
            model_name.to_string(),
            (i + 1).to_string(),
            format!("{loss:.6}"),
            opt(meta.val_loss.get(i)),
            opt(meta.val_accuracy.get(i)),
        ])?;
    }
    w.flush()?;
    Ok(())
}
