use std::io::{BufRead, Write};

use thiserror::Error;

pub const GRID_MAGIC: &str = "stpinn-grid v1";

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid dimensions differ: {0}")]
    DimMismatch(String),
    #[error("reference has zero norm")]
    ZeroReference,
    #[error("expected {expected} values, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("malformed grid file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for GridError {
    fn from(e: std::io::Error) -> Self {
        GridError::Io(e.to_string())
    }
}

/// Cell-centered space axis times an endpoint-inclusive time axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridDims {
    pub nx: usize,
    pub nt: usize,
    pub x_lo: f64,
    pub x_hi: f64,
    pub t_hi: f64,
}

impl GridDims {
    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / self.nx as f64
    }

    pub fn x_coord(&self, i: usize) -> f64 {
        self.x_lo + (i as f64 + 0.5) * self.dx()
    }

    pub fn t_coord(&self, j: usize) -> f64 {
        if self.nt <= 1 {
            0.0
        } else {
            self.t_hi * j as f64 / (self.nt - 1) as f64
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.nt
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All `(t, x)` nodes in row-major (time-major) order.
    pub fn nodes(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(self.len());
        for j in 0..self.nt {
            let t = self.t_coord(j);
            for i in 0..self.nx {
                out.push([t, self.x_coord(i)]);
            }
        }
        out
    }
}

/// Values on a [`GridDims`] grid, time-major: `values[j * nx + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSolution {
    pub dims: GridDims,
    pub values: Vec<f64>,
}

impl GridSolution {
    pub fn new(dims: GridDims, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != dims.len() {
            return Err(GridError::WrongLength { expected: dims.len(), got: values.len() });
        }
        Ok(Self { dims, values })
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.dims.nx..(j + 1) * self.dims.nx]
    }

    pub fn at(&self, j: usize, i: usize) -> f64 {
        self.values[j * self.dims.nx + i]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_same_dims(&self, other: &GridSolution) -> Result<(), GridError> {
        if self.dims != other.dims {
            return Err(GridError::DimMismatch(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        Ok(())
    }
}

pub fn write_grid<W: Write>(mut w: W, grid: &GridSolution) -> Result<(), GridError> {
    let d = &grid.dims;
    writeln!(w, "{GRID_MAGIC}")?;
    writeln!(w, "nx={} nt={} x_lo={:?} x_hi={:?} t_hi={:?}", d.nx, d.nt, d.x_lo, d.x_hi, d.t_hi)?;
    writeln!(w, "---")?;
    for v in &grid.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_grid<R: BufRead>(mut r: R) -> Result<GridSolution, GridError> {
    let bad = |m: String| GridError::Format(m);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end_matches('\n') != GRID_MAGIC {
        return Err(bad(format!("unknown header {:?}", line.trim_end())));
    }
    line.clear();
    r.read_line(&mut line)?;
    let (mut nx, mut nt, mut x_lo, mut x_hi, mut t_hi) = (None, None, None, None, None);
    for field in line.split_whitespace() {
        let (k, v) = field.split_once('=').ok_or_else(|| bad(format!("expected key=value, got {field:?}")))?;
        let int = || v.parse::<usize>().map_err(|_| bad(format!("bad {k}: {v:?}")));
        let float = || v.parse::<f64>().map_err(|_| bad(format!("bad {k}: {v:?}")));
        match k {
            "nx" => nx = Some(int()?),
            "nt" => nt = Some(int()?),
            "x_lo" => x_lo = Some(float()?),
            "x_hi" => x_hi = Some(float()?),
            "t_hi" => t_hi = Some(float()?),
            _ => return Err(bad(format!("unknown key {k:?}"))),
        }
    }
    let missing = |k: &str| bad(format!("missing {k}"));
    let dims = GridDims {
        nx: nx.ok_or_else(|| missing("nx"))?,
        nt: nt.ok_or_else(|| missing("nt"))?,
        x_lo: x_lo.ok_or_else(|| missing("x_lo"))?,
        x_hi: x_hi.ok_or_else(|| missing("x_hi"))?,
        t_hi: t_hi.ok_or_else(|| missing("t_hi"))?,
    };
    line.clear();
    r.read_line(&mut line)?;
    if line.trim_end_matches('\n') != "---" {
        return Err(bad("missing '---' separator".into()));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != dims.len() * 8 {
        return Err(bad(format!("expected {} value bytes, found {}", dims.len() * 8, bytes.len())));
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    GridSolution::new(dims, values)
}
