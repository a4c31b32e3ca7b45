//! File and stdout emission: CSV with dot decimals, LF endings, and 17
//! significant digits; JSON via serde.

use std::io::Write;
use std::path::{Path, PathBuf};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub struct OutputDir {
    root: Option<PathBuf>,
}

impl OutputDir {
    pub fn new(dir: Option<&str>) -> std::io::Result<Self> {
        match dir {
            Some(d) => {
                std::fs::create_dir_all(d)?;
                Ok(Self {
                    root: Some(PathBuf::from(d)),
                })
            }
            None => Ok(Self { root: None }),
        }
    }

    pub fn enabled(&self) -> bool {
        self.root.is_some()
    }

    pub fn write(&self, name: &str, content: &str) -> std::io::Result<Option<PathBuf>> {
        let Some(root) = &self.root else {
            return Ok(None);
        };
        let path = root.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut f = std::fs::File::create(&path)?;
        f.write_all(content.as_bytes())?;
        Ok(Some(path))
    }
}

pub fn file_name(prefix: &str, cell: &str, suffix: &str) -> String {
    format!("{prefix}_{}.{suffix}", sanitize(cell))
}

pub fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

pub fn print_json<T: serde::Serialize>(value: &T) {
    match serde_json::to_string_pretty(value) {
        Ok(s) => println!("{s}"),
        Err(e) => eprintln!("serialization failure: {e}"),
    }
}

pub fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}
