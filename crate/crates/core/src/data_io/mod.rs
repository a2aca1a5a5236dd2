//! File formats: FITS stamps, CSV manifests, `RBNN` models and `RBCC` composite caches.

pub mod cache;
pub mod fits;
pub mod manifest;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::dataset::{DiaSet, Provenance};
use crate::error::{Error, Result};
use crate::nn::{format, Network};
use crate::preprocess::{PostageStamp, Role};

pub use cache::{decode_composites, encode_composites};
pub use fits::{read_fits, read_fits_stamp, write_fits_stamp, FitsHeader, FitsImage};
pub use manifest::{load_manifest, parse_manifest, save_manifest, write_manifest, Manifest, ManifestRow, Split};

/// `ORIGIN` card value marking stamps written by the synthetic generator.
pub const SYNTHETIC_ORIGIN: &str = "rb-synth";

/// Writes through a sibling temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_model(network: &Network, path: &Path) -> Result<()> {
    write_atomic(path, &format::encode(network))
}

pub fn load_model(path: &Path) -> Result<Network> {
    let bytes = std::fs::read(path).map_err(|e| Error::Corrupt(format!("cannot read model {}: {e}", path.display())))?;
    format::decode(&bytes)
}

fn read_stamp(manifest: &Manifest, path: &Path, id: &str, role: Role) -> Result<(PostageStamp, bool)> {
    let full = manifest.resolve(path);
    let bytes = std::fs::read(&full)?;
    let image = read_fits(&bytes)?;
    let synthetic = image.header.get("ORIGIN") == Some(SYNTHETIC_ORIGIN);
    let stamp = read_fits_stamp(&bytes, id, role).map_err(|e| match e {
        Error::FitsParse { card, msg } => Error::FitsParse { card, msg: format!("{}: {msg}", full.display()) },
        other => other,
    })?;
    Ok((stamp, synthetic))
}

/// Reads the stamps of the given rows. Sets whose stamps all carry the
/// synthetic `ORIGIN` card are tagged as synthetic.
pub fn load_rows<'a>(manifest: &Manifest, rows: impl IntoIterator<Item = &'a ManifestRow>) -> Result<Vec<DiaSet>> {
    let rows: Vec<&ManifestRow> = rows.into_iter().collect();
    rows.par_iter()
        .map(|row| {
            let (tmpl, t_syn) = read_stamp(manifest, &row.tmpl, &row.id, Role::Tmpl)?;
            let (srch, s_syn) = read_stamp(manifest, &row.srch, &row.id, Role::Srch)?;
            let (diff, d_syn) = match &row.diff {
                Some(p) => {
                    let (d, syn) = read_stamp(manifest, p, &row.id, Role::Diff)?;
                    (Some(d), syn)
                }
                None => (None, true),
            };
            let provenance = if t_syn && s_syn && d_syn { Provenance::Synthetic } else { Provenance::Des };
            DiaSet::new(row.id.clone(), tmpl, srch, diff, row.label, provenance)
        })
        .collect()
}

pub fn load_dataset(manifest: &Manifest) -> Result<Vec<DiaSet>> {
    load_rows(manifest, &manifest.rows)
}

/// Writes every set's stamps under `dir/stamps/` and returns manifest rows
/// with paths relative to `dir`. `splits` tags the rows one-to-one.
pub fn write_dataset(sets: &[DiaSet], splits: &[Option<Split>], dir: &Path, bitpix: i32) -> Result<Vec<ManifestRow>> {
    if splits.len() != sets.len() {
        return Err(Error::Parameter(format!("{} split tags for {} sets", splits.len(), sets.len())));
    }
    let stamp_dir = dir.join("stamps");
    std::fs::create_dir_all(&stamp_dir)?;
    sets.par_iter()
        .zip(splits)
        .map(|(set, &split)| {
            let write = |stamp: &PostageStamp| -> Result<PathBuf> {
                let rel = PathBuf::from("stamps").join(format!("{}_{}.fits", set.id, stamp.role()));
                let mut cards = vec![("EXTNAME", stamp.role().as_str()), ("OBJECT", set.id.as_str())];
                if set.provenance == Provenance::Synthetic {
                    cards.push(("ORIGIN", SYNTHETIC_ORIGIN));
                }
                let bytes = fits::write_fits_image(stamp.pixels(), bitpix, &cards)?;
                std::fs::write(dir.join(&rel), bytes)?;
                Ok(rel)
            };
            Ok(ManifestRow {
                id: set.id.clone(),
                label: set.label,
                tmpl: write(&set.tmpl)?,
                srch: write(&set.srch)?,
                diff: set.diff.as_ref().map(write).transpose()?,
                split,
            })
        })
        .collect()
}
