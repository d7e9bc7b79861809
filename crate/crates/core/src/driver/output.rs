//! File formats. Every file is written to a temporary sibling and renamed
//! into place.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::mesh::GridMesh;
use crate::optimizer::IterRecord;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp: PathBuf = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let res = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = res {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// ASCII PGM of one value per element, top row = largest `y`. `shade`
/// maps a value to 0 (black) ..= 255 (white).
pub fn pgm(mesh: &GridMesh, values: &[f64], shade: impl Fn(f64) -> u8) -> String {
    let mut s = format!("P2\n{} {}\n255\n", mesh.nelx, mesh.nely);
    for iy in (0..mesh.nely).rev() {
        let row: Vec<String> = (0..mesh.nelx)
            .map(|ix| shade(values[mesh.elem(ix, iy)]).to_string())
            .collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

/// Density image: white = void, black = solid.
pub fn density_pgm(mesh: &GridMesh, xbar: &[f64]) -> String {
    pgm(mesh, xbar, |x| (255.0 * (1.0 - x.clamp(0.0, 1.0))).round() as u8)
}

/// Log-energy image from values in `[-decades, 0]`; dark = high energy.
pub fn log_map_pgm(mesh: &GridMesh, logs: &[f64], decades: f64) -> String {
    pgm(mesh, logs, |v| (255.0 * (-v / decades).clamp(0.0, 1.0)).round() as u8)
}

pub fn history_header(k: usize) -> String {
    let mut h = String::from("iter,p,rho,J,vol,change");
    for i in 1..=k {
        let _ = write!(h, ",lambda_{i}");
    }
    h.push_str(",g_max\n");
    h
}

/// History CSV; `k` λ columns, missing entries left empty.
pub fn history_csv(history: &[IterRecord], k: usize) -> String {
    let mut s = history_header(k);
    for r in history {
        let _ = write!(s, "{},{},{},{:e},{:e},{:e}", r.iter, r.p, r.rho, r.compliance, r.volume, r.change);
        for i in 0..k {
            match r.lambda.get(i) {
                Some(l) => {
                    let _ = write!(s, ",{l:e}");
                }
                None => s.push(','),
            }
        }
        let _ = writeln!(s, ",{:e}", r.g_max);
    }
    s
}

/// `e,ix,iy,x,xbar` per element.
pub fn design_csv(mesh: &GridMesh, x: &[f64], xbar: &[f64]) -> String {
    let mut s = String::from("e,ix,iy,x,xbar\n");
    for e in 0..mesh.n_elems() {
        let (ix, iy) = mesh.elem_pos(e);
        let _ = writeln!(s, "{e},{ix},{iy},{:e},{:e}", x[e], xbar[e]);
    }
    s
}

/// Which column of a design file to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignColumn {
    X,
    Xbar,
}

/// Reads a design CSV as written by [`design_csv`], or a bare list of
/// numbers (one per element, whitespace or comma separated).
pub fn read_design(path: &Path, n: usize, col: DesignColumn) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let perr = |msg: String| Error::Parse { path: path.to_path_buf(), msg };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty()).peekable();
    let values: Vec<f64> = if lines.peek().is_some_and(|l| l.starts_with("e,")) {
        let header: Vec<&str> = lines.next().unwrap().split(',').map(str::trim).collect();
        let name = match col {
            DesignColumn::X => "x",
            DesignColumn::Xbar => "xbar",
        };
        let c = header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| perr(format!("no '{name}' column")))?;
        let ei = header.iter().position(|h| *h == "e").unwrap_or(0);
        let mut v = vec![f64::NAN; n];
        let mut count = 0;
        for (ln, l) in lines.enumerate() {
            let f: Vec<&str> = l.split(',').map(str::trim).collect();
            let get = |i: usize| f.get(i).ok_or_else(|| perr(format!("line {}: missing field", ln + 2)));
            let e: usize = get(ei)?.parse().map_err(|_| perr(format!("line {}: bad element index", ln + 2)))?;
            let x: f64 = get(c)?.parse().map_err(|_| perr(format!("line {}: bad value", ln + 2)))?;
            if e >= n {
                return Err(Error::Dimension { expected: n, got: e + 1 });
            }
            v[e] = x;
            count += 1;
        }
        if count != n || v.iter().any(|x| x.is_nan()) {
            return Err(Error::Dimension { expected: n, got: count });
        }
        v
    } else {
        let mut v = Vec::new();
        for tok in text.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
            v.push(tok.parse().map_err(|_| perr(format!("bad number '{tok}'")))?);
        }
        if v.len() != n {
            return Err(Error::Dimension { expected: n, got: v.len() });
        }
        v
    };
    if let Some(bad) = values.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(perr(format!("density {bad} outside [0, 1]")));
    }
    Ok(values)
}

pub fn json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_grid;

    #[test]
    fn pgm_orientation_and_shades() {
        let mesh = build_grid(2, 2, 1.0, 1.0, 1.0).unwrap();
        // element (0, 1) solid, rest void
        let mut x = vec![0.0; 4];
        x[mesh.elem(0, 1)] = 1.0;
        assert_eq!(density_pgm(&mesh, &x), "P2\n2 2\n255\n0 255\n255 255\n");
        assert_eq!(log_map_pgm(&mesh, &[0.0, -3.0, -6.0, -9.0], 6.0).lines().nth(4), Some("0 255"));
    }

    #[test]
    fn history_schema() {
        let r = IterRecord {
            iter: 0,
            p: 1.0,
            rho: 16.0,
            compliance: 2.0,
            volume: 0.2,
            change: 0.0,
            lambda: vec![0.5],
            g_max: 0.0,
            scale: 1.0,
        };
        let s = history_csv(&[r.clone(), IterRecord { iter: 1, ..r }], 2);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "iter,p,rho,J,vol,change,lambda_1,lambda_2,g_max");
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1].split(',').count(), 9);
        assert!(lines[2].starts_with("1,"));
    }

    #[test]
    fn design_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = build_grid(3, 2, 1.0, 1.0, 1.0).unwrap();
        let x: Vec<f64> = (0..6).map(|i| i as f64 / 7.0).collect();
        let xb: Vec<f64> = x.iter().map(|v| 1.0 - v).collect();
        let p = dir.path().join("d.csv");
        write_atomic(&p, design_csv(&mesh, &x, &xb).as_bytes()).unwrap();
        assert_eq!(read_design(&p, 6, DesignColumn::X).unwrap(), x);
        assert_eq!(read_design(&p, 6, DesignColumn::Xbar).unwrap(), xb);
        assert!(matches!(read_design(&p, 7, DesignColumn::X), Err(Error::Dimension { .. })));
        let q = dir.path().join("plain.txt");
        write_atomic(&q, b"0.2 0.2\n0.2,0.2 0.2 0.2\n").unwrap();
        assert_eq!(read_design(&q, 6, DesignColumn::Xbar).unwrap(), vec![0.2; 6]);
        write_atomic(&q, b"0.2 1.5").unwrap();
        assert!(read_design(&q, 2, DesignColumn::X).is_err());
        assert!(read_design(&dir.path().join("missing"), 2, DesignColumn::X).is_err());
        // no temp files left behind
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
    }
}
