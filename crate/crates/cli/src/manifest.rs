//! Line-oriented corpus manifests.
//!
//! One entry per line, tab-separated: `frame<TAB>flow[<TAB>next[<TAB>class]]`.
//! `-` marks an absent optional column, `#` starts a comment, blank lines are
//! skipped. Relative paths resolve against the manifest's directory. Loading
//! verifies that every referenced file exists and that flow dimensions match
//! the frame's.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use stillflow::flowio::read_flo;
use stillflow::imagecore::load_image;
use stillflow::{FlowField, ImageBuffer};

#[derive(Clone, Debug)]
pub struct ManifestEntry {
    pub frame: PathBuf,
    pub flow: PathBuf,
    pub next: Option<PathBuf>,
    pub class: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Manifest {
    pub base: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

fn resolve(base: &Path, raw: &str) -> PathBuf {
    let p = PathBuf::from(raw);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

/// Reads just the header of a .flo file to learn its dimensions.
fn flo_dimensions(path: &Path) -> Result<(usize, usize)> {
    let mut file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut header = [0u8; 12];
    file.read_exact(&mut header)
        .with_context(|| format!("reading header of {}", path.display()))?;
    let magic = f32::from_le_bytes(header[0..4].try_into().unwrap());
    if magic != 202021.25 {
        bail!("{} is not a .flo file (bad magic)", path.display());
    }
    let w = i32::from_le_bytes(header[4..8].try_into().unwrap());
    let h = i32::from_le_bytes(header[8..12].try_into().unwrap());
    if w <= 0 || h <= 0 {
        bail!("{} has non-positive dimensions", path.display());
    }
    Ok((w as usize, h as usize))
}

fn image_dimensions(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path)
        .with_context(|| format!("reading image header of {}", path.display()))?;
    Ok((w as usize, h as usize))
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let mut entries = Vec::new();
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            if cols.len() < 2 || cols.len() > 4 {
                bail!(
                    "manifest {} line {}: expected 2-4 tab-separated columns, got {}",
                    path.display(),
                    lineno + 1,
                    cols.len()
                );
            }
            let optional = |idx: usize| -> Option<&str> {
                cols.get(idx)
                    .copied()
                    .filter(|c| !c.is_empty() && *c != "-")
            };
            let entry = ManifestEntry {
                frame: resolve(&base, cols[0]),
                flow: resolve(&base, cols[1]),
                next: optional(2).map(|c| resolve(&base, c)),
                class: optional(3).map(str::to_owned),
            };
            let frame_dims = image_dimensions(&entry.frame)?;
            let flow_dims = flo_dimensions(&entry.flow)?;
            if frame_dims != flow_dims {
                bail!(
                    "manifest {} line {}: frame is {}x{} but flow is {}x{}",
                    path.display(),
                    lineno + 1,
                    frame_dims.0,
                    frame_dims.1,
                    flow_dims.0,
                    flow_dims.1
                );
            }
            if let Some(next) = &entry.next {
                let next_dims = image_dimensions(next)?;
                if next_dims != frame_dims {
                    bail!(
                        "manifest {} line {}: next frame is {}x{} but frame is {}x{}",
                        path.display(),
                        lineno + 1,
                        next_dims.0,
                        next_dims.1,
                        frame_dims.0,
                        frame_dims.1
                    );
                }
            }
            entries.push(entry);
        }
        if entries.is_empty() {
            bail!("manifest {} lists no entries", path.display());
        }
        Ok(Manifest { base, entries })
    }

    /// Distinct class labels in a stable order: unlabeled first, then sorted.
    pub fn classes(&self) -> Vec<Option<String>> {
        let mut named: Vec<String> = self
            .entries
            .iter()
            .filter_map(|e| e.class.clone())
            .collect();
        named.sort();
        named.dedup();
        let mut out = Vec::new();
        if self.entries.iter().any(|e| e.class.is_none()) {
            out.push(None);
        }
        out.extend(named.into_iter().map(Some));
        out
    }

    pub fn entries_for(&self, class: Option<&str>) -> Vec<&ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| e.class.as_deref() == class)
            .collect()
    }
}

pub fn load_pair(entry: &ManifestEntry) -> Result<(ImageBuffer, FlowField)> {
    let frame =
        load_image(&entry.frame).with_context(|| format!("loading {}", entry.frame.display()))?;
    let flow =
        read_flo(&entry.flow).with_context(|| format!("loading {}", entry.flow.display()))?;
    Ok((frame, flow))
}

#[cfg(test)]
mod tests {
    use super::*;
    use stillflow::flowio::write_flo;
    use stillflow::imagecore::save_png;

    fn write_fixture(dir: &Path, stem: &str, w: usize, h: usize) {
        let img = ImageBuffer::from_fn(w, h, 3, |x, y, c| {
            [x as f64 / w as f64, y as f64 / h as f64, 0.5][c]
        })
        .unwrap();
        save_png(&img, dir.join(format!("{stem}.png"))).unwrap();
        write_flo(&FlowField::zeros(w, h), dir.join(format!("{stem}.flo"))).unwrap();
    }

    #[test]
    fn parses_all_column_counts_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), "a", 8, 6);
        write_fixture(dir.path(), "b", 8, 6);
        let manifest_path = dir.path().join("list.tsv");
        fs::write(
            &manifest_path,
            "# comment\n\
             a.png\ta.flo\n\
             a.png\ta.flo\tb.png\n\
             b.png\tb.flo\t-\twalking\n",
        )
        .unwrap();
        let m = Manifest::load(&manifest_path).unwrap();
        assert_eq!(m.entries.len(), 3);
        assert!(m.entries[0].next.is_none());
        assert!(m.entries[1].next.is_some());
        assert_eq!(m.entries[2].class.as_deref(), Some("walking"));
        assert!(m.entries[0].frame.is_absolute() || m.entries[0].frame.starts_with(dir.path()));
        assert_eq!(m.classes(), vec![None, Some("walking".to_owned())]);
        assert_eq!(m.entries_for(Some("walking")).len(), 1);
        assert_eq!(m.entries_for(None).len(), 2);
    }

    #[test]
    fn rejects_missing_files_and_mismatched_dims() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), "a", 8, 6);
        let manifest_path = dir.path().join("list.tsv");

        fs::write(&manifest_path, "missing.png\ta.flo\n").unwrap();
        assert!(Manifest::load(&manifest_path).is_err());

        // Flow dims differ from the frame's.
        write_flo(&FlowField::zeros(4, 4), dir.path().join("small.flo")).unwrap();
        fs::write(&manifest_path, "a.png\tsmall.flo\n").unwrap();
        let err = Manifest::load(&manifest_path).unwrap_err();
        assert!(err.to_string().contains("frame is 8x6"), "{err}");
    }

    #[test]
    fn rejects_bad_column_counts_and_empty_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let manifest_path = dir.path().join("list.tsv");
        fs::write(&manifest_path, "only_one_column\n").unwrap();
        assert!(Manifest::load(&manifest_path).is_err());
        fs::write(&manifest_path, "# nothing here\n\n").unwrap();
        assert!(Manifest::load(&manifest_path).is_err());
    }
}
