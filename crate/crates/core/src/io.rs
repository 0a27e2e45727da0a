//! Plain-text configuration, field snapshots and CSV diagnostics.
//!
//! A configuration file holds `key = value` lines; blank lines and lines
//! starting with `#` are ignored. Every key is optional:
//!
//! | key | default | range |
//! |---|---|---|
//! | `dim` | 1 | 1 or 2 |
//! | `Lx`, `Ly` | 1 | > 0 |
//! | `nx`, `ny` | 128, 32 | 4 ..= 4096 |
//! | `a` | 1 | > 0 |
//! | `alpha` | 0 | finite |
//! | `beta` | 0.5 | > 0 |
//! | `tau` | 1e-3 | (0, 1) |
//! | `t_end` | 0.1 | ≥ 0 |
//! | `tol_el` | 1e-8 | > 0 |
//! | `tol_area` | 1e-10 | > 0 |
//! | `tol_mean` | 1e-12 | > 0 |
//! | `margin_floor` | 1e-8 | ≥ 0 |
//! | `phi` | `cos1` | `cos1`, `cos2`, `tanh-split`, `file:<path>` |
//! | `snapshot_every` | 10 | ≥ 1 |
//! | `out_dir` | `wpf-out` | path |
//! | `seed` | 0 | unsigned integer |
//!
//! Snapshots are a short header followed by one value per line, all floats
//! written with 17 significant digits so that reading and re-writing a
//! snapshot reproduces it byte for byte.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::constraints::ConstraintSpec;
use crate::flow::{DiagnosticsRow, RunConfig};
use crate::functionals::PotentialParams;
use crate::grid::{Field, Grid};
use crate::stepper::StepConfig;

/// Environment variable overriding `out_dir`.
pub const OUT_DIR_ENV: &str = "WPF_OUT_DIR";

const MAX_NODES: usize = 4096;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("line {line}: expected `key = value`, found `{text}`")]
    Malformed { line: usize, text: String },

    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },

    #[error("line {line}: key `{key}` given twice")]
    DuplicateKey { line: usize, key: String },

    #[error("line {line}: bad value for `{key}`: {message}")]
    InvalidValue {
        line: usize,
        key: String,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Invalid(String),

    #[error("snapshot line {line}: {message}")]
    Snapshot { line: usize, message: String },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type IoResult<T> = std::result::Result<T, IoError>;

/// Initial perturbation direction used by [`crate::constraints::construct_feasible`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PhiChoice {
    /// `cos(πx/Lx)`, or `cos(πx/Lx)·cos(πy/Ly)` in 2D.
    Cos1,
    /// `cos(2πx/Lx)`, or `cos(2πx/Lx)·cos(πy/Ly)` in 2D.
    Cos2,
    /// A steep `tanh` interface at `x = 0.3 Lx`, mean removed.
    TanhSplit,
    /// Values read from a snapshot or a one-value-per-line file.
    File(PathBuf),
}

impl PhiChoice {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "cos1" => Some(Self::Cos1),
            "cos2" => Some(Self::Cos2),
            "tanh-split" => Some(Self::TanhSplit),
            _ => s
                .strip_prefix("file:")
                .filter(|p| !p.is_empty())
                .map(|p| Self::File(PathBuf::from(p))),
        }
    }

    /// Samples the direction on `grid` and removes its mean.
    pub fn field(&self, grid: &Grid) -> IoResult<Field> {
        let lx = grid.extents()[0];
        let ly = if grid.dim() == 2 {
            grid.extents()[1]
        } else {
            1.0
        };
        let two_d = grid.dim() == 2;
        let y_mode = move |y: f64| if two_d { (PI * y / ly).cos() } else { 1.0 };
        let f = match self {
            Self::Cos1 => Field::from_fn(*grid, |x, y| (PI * x / lx).cos() * y_mode(y)),
            Self::Cos2 => Field::from_fn(*grid, |x, y| (2.0 * PI * x / lx).cos() * y_mode(y)),
            Self::TanhSplit => Field::from_fn(*grid, |x, _| ((x - 0.3 * lx) / (0.05 * lx)).tanh()),
            Self::File(path) => {
                let text = read(path)?;
                let values = match Snapshot::parse(&text) {
                    Ok(s) => s.field.into_values(),
                    Err(_) => parse_column(&text)?,
                };
                Field::new(*grid, values).map_err(|e| IoError::Invalid(format!("phi file: {e}")))?
            }
        };
        Ok(f.centered())
    }
}

impl std::fmt::Display for PhiChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Cos1 => f.write_str("cos1"),
            Self::Cos2 => f.write_str("cos2"),
            Self::TanhSplit => f.write_str("tanh-split"),
            Self::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

fn parse_column(text: &str) -> IoResult<Vec<f64>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<f64>().map_err(|e| IoError::Snapshot {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn read(path: &Path) -> IoResult<String> {
    std::fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.to_owned(),
        source,
    })
}

/// Parsed configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFile {
    pub dim: usize,
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
    pub a: f64,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub t_end: f64,
    pub tol_el: f64,
    pub tol_area: f64,
    pub tol_mean: f64,
    pub margin_floor: f64,
    pub phi: PhiChoice,
    pub snapshot_every: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for ConfigFile {
    fn default() -> Self {
        Self {
            dim: 1,
            lx: 1.0,
            ly: 1.0,
            nx: 128,
            ny: 32,
            a: 1.0,
            alpha: 0.0,
            beta: 0.5,
            tau: 1e-3,
            t_end: 0.1,
            tol_el: 1e-8,
            tol_area: 1e-10,
            tol_mean: 1e-12,
            margin_floor: 1e-8,
            phi: PhiChoice::Cos1,
            snapshot_every: 10,
            out_dir: PathBuf::from("wpf-out"),
            seed: 0,
        }
    }
}

fn real(line: usize, key: &str, v: &str, ok: impl Fn(f64) -> bool, range: &str) -> IoResult<f64> {
    let bad = |message: String| IoError::InvalidValue {
        line,
        key: key.to_owned(),
        message,
    };
    let x: f64 = v
        .parse()
        .map_err(|_| bad(format!("`{v}` is not a number")))?;
    if !x.is_finite() || !ok(x) {
        return Err(bad(format!("{v} is outside {range}")));
    }
    Ok(x)
}

fn count(line: usize, key: &str, v: &str, lo: usize, hi: usize) -> IoResult<usize> {
    let n: usize = v.parse().map_err(|_| IoError::InvalidValue {
        line,
        key: key.to_owned(),
        message: format!("`{v}` is not a non-negative integer"),
    })?;
    if n < lo || n > hi {
        return Err(IoError::InvalidValue {
            line,
            key: key.to_owned(),
            message: format!("{n} is outside {lo}..={hi}"),
        });
    }
    Ok(n)
}

impl ConfigFile {
    /// Parses configuration text. Relative `file:` paths stay relative.
    pub fn parse(text: &str) -> IoResult<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<String> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(IoError::Malformed {
                    line,
                    text: trimmed.to_owned(),
                });
            };
            let (key, v) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(IoError::Malformed {
                    line,
                    text: trimmed.to_owned(),
                });
            }
            if seen.iter().any(|k| k == key) {
                return Err(IoError::DuplicateKey {
                    line,
                    key: key.to_owned(),
                });
            }
            let pos = |x: f64| x > 0.0;
            let nonneg = |x: f64| x >= 0.0;
            match key {
                "dim" => cfg.dim = count(line, key, v, 1, 2)?,
                "Lx" => cfg.lx = real(line, key, v, pos, "(0, inf)")?,
                "Ly" => cfg.ly = real(line, key, v, pos, "(0, inf)")?,
                "nx" => cfg.nx = count(line, key, v, 4, MAX_NODES)?,
                "ny" => cfg.ny = count(line, key, v, 4, MAX_NODES)?,
                "a" => cfg.a = real(line, key, v, pos, "(0, inf)")?,
                "alpha" => cfg.alpha = real(line, key, v, |_| true, "the reals")?,
                "beta" => cfg.beta = real(line, key, v, pos, "(0, inf)")?,
                "tau" => cfg.tau = real(line, key, v, |x| x > 0.0 && x < 1.0, "(0, 1)")?,
                "t_end" => cfg.t_end = real(line, key, v, nonneg, "[0, inf)")?,
                "tol_el" => cfg.tol_el = real(line, key, v, pos, "(0, inf)")?,
                "tol_area" => cfg.tol_area = real(line, key, v, pos, "(0, inf)")?,
                "tol_mean" => cfg.tol_mean = real(line, key, v, pos, "(0, inf)")?,
                "margin_floor" => cfg.margin_floor = real(line, key, v, nonneg, "[0, inf)")?,
                "phi" => {
                    cfg.phi = PhiChoice::parse(v).ok_or_else(|| IoError::InvalidValue {
                        line,
                        key: key.to_owned(),
                        message: format!("`{v}` is not cos1, cos2, tanh-split or file:<path>"),
                    })?
                }
                "snapshot_every" => cfg.snapshot_every = count(line, key, v, 1, usize::MAX)?,
                "out_dir" => {
                    if v.is_empty() {
                        return Err(IoError::InvalidValue {
                            line,
                            key: key.to_owned(),
                            message: "empty path".into(),
                        });
                    }
                    cfg.out_dir = PathBuf::from(v)
                }
                "seed" => {
                    cfg.seed = v.parse().map_err(|_| IoError::InvalidValue {
                        line,
                        key: key.to_owned(),
                        message: format!("`{v}` is not an unsigned integer"),
                    })?
                }
                _ => {
                    return Err(IoError::UnknownKey {
                        line,
                        key: key.to_owned(),
                    })
                }
            }
            seen.push(key.to_owned());
        }
        if cfg.t_end / cfg.tau > 1e7 {
            return Err(IoError::Invalid("t_end / tau exceeds 1e7 steps".into()));
        }
        Ok(cfg)
    }

    /// Reads and parses `path`, resolving relative `file:` paths and
    /// `out_dir` against the directory holding the config, then applies the
    /// `WPF_OUT_DIR` override.
    pub fn load(path: &Path) -> IoResult<Self> {
        let mut cfg = Self::parse(&read(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let PhiChoice::File(p) = &cfg.phi {
            if p.is_relative() {
                cfg.phi = PhiChoice::File(base.join(p));
            }
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        cfg.apply_env();
        Ok(cfg)
    }

    /// Applies the `WPF_OUT_DIR` override, if set and non-empty.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|d| !d.is_empty()) {
            self.out_dir = PathBuf::from(dir);
        }
    }

    pub fn grid(&self) -> IoResult<Grid> {
        let g = match self.dim {
            1 => Grid::new_1d(self.lx, self.nx),
            _ => Grid::new_2d(self.lx, self.ly, self.nx, self.ny),
        };
        g.map_err(|e| IoError::Invalid(e.to_string()))
    }

    pub fn potential(&self) -> IoResult<PotentialParams> {
        PotentialParams::new(self.a).map_err(|e| IoError::Invalid(e.to_string()))
    }

    pub fn spec(&self) -> IoResult<ConstraintSpec> {
        ConstraintSpec::with_tolerances(self.alpha, self.beta, self.tol_mean, self.tol_area)
            .map_err(|e| IoError::Invalid(e.to_string()))
    }

    pub fn run_config(&self) -> IoResult<RunConfig> {
        let invalid = |e: crate::Error| IoError::Invalid(e.to_string());
        let mut rc = RunConfig::new(
            self.spec()?,
            self.potential()?,
            self.grid()?,
            self.tau,
            self.t_end,
        )
        .map_err(invalid)?;
        rc.step_cfg = StepConfig::new(self.tau)
            .and_then(|s| s.with_tol_el(self.tol_el))
            .map_err(invalid)?;
        rc.margin_floor = self.margin_floor;
        rc.snapshot_every = self.snapshot_every;
        rc.validate().map_err(invalid)?;
        Ok(rc)
    }

    /// Writes the configuration back in `key = value` form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dim = {}", self.dim);
        let _ = writeln!(s, "Lx = {}", self.lx);
        let _ = writeln!(s, "Ly = {}", self.ly);
        let _ = writeln!(s, "nx = {}", self.nx);
        let _ = writeln!(s, "ny = {}", self.ny);
        let _ = writeln!(s, "a = {}", self.a);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "beta = {}", self.beta);
        let _ = writeln!(s, "tau = {}", self.tau);
        let _ = writeln!(s, "t_end = {}", self.t_end);
        let _ = writeln!(s, "tol_el = {}", self.tol_el);
        let _ = writeln!(s, "tol_area = {}", self.tol_area);
        let _ = writeln!(s, "tol_mean = {}", self.tol_mean);
        let _ = writeln!(s, "margin_floor = {}", self.margin_floor);
        let _ = writeln!(s, "phi = {}", self.phi);
        let _ = writeln!(s, "snapshot_every = {}", self.snapshot_every);
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }
}

/// A field together with the parameters it was produced under.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub a: f64,
    pub alpha: f64,
    pub beta: f64,
    pub t: f64,
    pub field: Field,
}

const MAGIC: &str = "# wpf snapshot v1";

fn sci(x: f64) -> String {
    format!("{x:.16e}")
}

impl Snapshot {
    pub fn to_text(&self) -> String {
        let g = self.field.grid();
        let mut s = String::with_capacity(24 * (g.len() + 10));
        let join = |xs: Vec<String>| xs.join(" ");
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "dim {}", g.dim());
        let _ = writeln!(
            s,
            "extents {}",
            join(g.extents().iter().map(|&x| sci(x)).collect())
        );
        let _ = writeln!(
            s,
            "counts {}",
            join(g.counts().iter().map(|n| n.to_string()).collect())
        );
        let _ = writeln!(s, "a {}", sci(self.a));
        let _ = writeln!(s, "alpha {}", sci(self.alpha));
        let _ = writeln!(s, "beta {}", sci(self.beta));
        let _ = writeln!(s, "t {}", sci(self.t));
        let _ = writeln!(s, "values {}", g.len());
        for v in self.field.values() {
            s.push_str(&sci(*v));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> IoResult<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| -> IoResult<(usize, Vec<String>)> {
            let (line, l) = lines.next().ok_or_else(|| IoError::Snapshot {
                line: 0,
                message: format!("missing `{what}`"),
            })?;
            let mut parts = l.split_whitespace();
            if parts.next() != Some(what) {
                return Err(IoError::Snapshot {
                    line,
                    message: format!("expected `{what}`"),
                });
            }
            Ok((line, parts.map(str::to_owned).collect()))
        };
        let err = |line: usize, message: String| IoError::Snapshot { line, message };
        let num = |line: usize, s: &str| -> IoResult<f64> {
            s.parse::<f64>()
                .map_err(|_| err(line, format!("`{s}` is not a number")))
        };
        let scalar = |(line, parts): (usize, Vec<String>)| -> IoResult<f64> {
            match parts.as_slice() {
                [x] => num(line, x),
                _ => Err(err(line, "expected one value".into())),
            }
        };

        let (line, magic) = {
            let mut it = text.lines();
            (1, it.next().unwrap_or_default())
        };
        if magic != MAGIC {
            return Err(err(line, "not a snapshot file".into()));
        }
        let _ = next("#")?;
        let (line, dim) = next("dim")?;
        let dim: usize = match dim.as_slice() {
            [d] if d == "1" => 1,
            [d] if d == "2" => 2,
            _ => return Err(err(line, "dim must be 1 or 2".into())),
        };
        let (line, extents) = next("extents")?;
        let extents = extents
            .iter()
            .map(|s| num(line, s))
            .collect::<IoResult<Vec<_>>>()?;
        let (cline, counts) = next("counts")?;
        let counts = counts
            .iter()
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| err(cline, format!("bad count `{s}`")))
            })
            .collect::<IoResult<Vec<_>>>()?;
        if extents.len() != dim || counts.len() != dim {
            return Err(err(cline, "extents and counts must match dim".into()));
        }
        let grid = match dim {
            1 => Grid::new_1d(extents[0], counts[0]),
            _ => Grid::new_2d(extents[0], extents[1], counts[0], counts[1]),
        }
        .map_err(|e| err(cline, e.to_string()))?;
        let a = scalar(next("a")?)?;
        let alpha = scalar(next("alpha")?)?;
        let beta = scalar(next("beta")?)?;
        let t = scalar(next("t")?)?;
        let (vline, n) = next("values")?;
        let n: usize = match n.as_slice() {
            [n] => n
                .parse()
                .map_err(|_| err(vline, format!("bad count `{n}`")))?,
            _ => return Err(err(vline, "expected the value count".into())),
        };
        if n != grid.len() {
            return Err(err(
                vline,
                format!("{n} values declared, grid has {}", grid.len()),
            ));
        }
        let mut values = Vec::with_capacity(n);
        for (line, l) in lines {
            if l.trim().is_empty() {
                continue;
            }
            values.push(num(line, l.trim())?);
        }
        if values.len() != n {
            return Err(err(
                vline,
                format!("expected {n} values, found {}", values.len()),
            ));
        }
        let field = Field::new(grid, values).map_err(|e| err(vline, e.to_string()))?;
        if !field.is_finite() {
            return Err(err(vline, "non-finite value".into()));
        }
        Ok(Self {
            a,
            alpha,
            beta,
            t,
            field,
        })
    }

    pub fn save(&self, path: &Path) -> IoResult<()> {
        std::fs::write(path, self.to_text()).map_err(|source| IoError::File {
            path: path.to_owned(),
            source,
        })
    }

    pub fn load(path: &Path) -> IoResult<Self> {
        Self::parse(&read(path)?)
    }
}

/// Writes the header and one line per row.
pub fn write_diagnostics_csv<W: Write>(mut out: W, rows: &[DiagnosticsRow]) -> std::io::Result<()> {
    writeln!(out, "{}", DiagnosticsRow::HEADER)?;
    for r in rows {
        writeln!(out, "{}", r.to_csv())?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg =
            ConfigFile::parse("# comment\n\nbeta = 0.7\n  nx=64 \nphi = tanh-split\n").unwrap();
        assert_eq!(cfg.beta, 0.7);
        assert_eq!(cfg.nx, 64);
        assert_eq!(cfg.phi, PhiChoice::TanhSplit);
        assert_eq!(cfg.tau, 1e-3);
        let again = ConfigFile::parse(&cfg.to_text()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_key_cites_line() {
        let e = ConfigFile::parse("beta = 0.5\n\ntaau=0.1\n").unwrap_err();
        assert!(matches!(e, IoError::UnknownKey { line: 3, ref key } if key == "taau"));
        assert!(e.to_string().contains("line 3"));
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "tau = 1.5",
            "tau = nan",
            "nx = 3",
            "dim = 3",
            "beta = -1",
            "phi = sin",
            "phi = file:",
            "seed = -4",
            "no equals sign",
            "= 3",
            "beta = 1\nbeta = 2",
        ] {
            assert!(ConfigFile::parse(text).is_err(), "{text}");
        }
        assert!(matches!(
            ConfigFile::parse("tau = 1e-9\nt_end = 1").unwrap_err(),
            IoError::Invalid(_)
        ));
    }

    #[test]
    fn presets_have_zero_mean() {
        let g1 = Grid::new_1d(2.0, 32).unwrap();
        let g2 = Grid::new_2d(1.0, 2.0, 8, 16).unwrap();
        for phi in [PhiChoice::Cos1, PhiChoice::Cos2, PhiChoice::TanhSplit] {
            for g in [g1, g2] {
                let f = phi.field(&g).unwrap();
                assert!(crate::grid::mean(&f).abs() < 1e-15);
                assert!(f.max_abs() > 0.5);
            }
        }
    }

    #[test]
    fn snapshot_round_trip_is_byte_identical() {
        let g = Grid::new_2d(1.0, 0.7, 5, 4).unwrap();
        let field = Field::from_fn(g, |x, y| (3.1 * x).sin() / 3.0 + y * 1e-300 - 0.1);
        let s = Snapshot {
            a: 1.0,
            alpha: -0.1,
            beta: 0.5,
            t: 0.1 + 0.2,
            field,
        };
        let text = s.to_text();
        let back = Snapshot::parse(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn snapshot_rejects_truncation() {
        let g = Grid::new_1d(1.0, 4).unwrap();
        let s = Snapshot {
            a: 1.0,
            alpha: 0.0,
            beta: 0.5,
            t: 0.0,
            field: Field::zeros(g),
        };
        let text = s.to_text();
        let cut: String = text.lines().take(11).map(|l| format!("{l}\n")).collect();
        assert!(Snapshot::parse(&cut).is_err());
        assert!(Snapshot::parse("hello").is_err());
    }

    #[test]
    fn csv_header_only() {
        let mut out = Vec::new();
        write_diagnostics_csv(&mut out, &[]).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            format!("{}\n", DiagnosticsRow::HEADER)
        );
    }
}
