use std::fs;
use std::path::Path;

use crate::data::{ModelCheckpoint, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::model::EMBED_DIM;

/// CSV text with header `id,label,f0..f63`, one row per series, using
/// eval-mode embeddings of the checkpoint's backbone. Unlabeled rows get
/// `NA` in the label column.
pub fn embeddings_csv(ckpt: &ModelCheckpoint, ds: &TimeSeriesDataset) -> Result<String> {
    let model = ckpt.to_model::<f32>()?;
    let rows: Vec<&[f64]> = ds.rows().collect();
    let z = model.backbone.embed(&rows)?;
    let mut out = String::from("id,label");
    for f in 0..EMBED_DIM {
        out.push_str(&format!(",f{f}"));
    }
    out.push('\n');
    for (i, row) in z.iter().enumerate() {
        let label = ds.labels().map_or("NA", |l| ds.label_map()[l[i]].as_str());
        out.push_str(&format!("{i},{label}"));
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn export_embeddings(ckpt: &ModelCheckpoint, ds: &TimeSeriesDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv = embeddings_csv(ckpt, ds)?;
    fs::write(path, csv).map_err(|e| Error::io(path, e))
}
