//! Gridded data model: regular lat/lon grids, `(time, variable, row, col)`
//! stacks with a validity mask, temporal moments and bilinear regridding.

use chrono::{Datelike, NaiveDate};

use crate::error::{Error, Result};

/// Kilometres per degree of latitude.
pub const KM_PER_DEGREE: f64 = 111.32;

/// Default unit for wind variables.
pub const WIND_UNITS: &str = "m s-1";

/// Regular latitude/longitude grid. Coordinates are strictly monotone
/// (ascending or descending) and the mean spacings are cached in kilometres.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    lat: Vec<f64>,
    lon: Vec<f64>,
    dx_km: f64,
    dy_km: f64,
}

fn strictly_monotone(coords: &[f64]) -> bool {
    let ascending = coords.windows(2).all(|w| w[1] > w[0]);
    let descending = coords.windows(2).all(|w| w[1] < w[0]);
    coords.iter().all(|c| c.is_finite()) && (ascending || descending)
}

fn mean_abs_step(coords: &[f64]) -> f64 {
    coords.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (coords.len() - 1) as f64
}

impl GridSpec {
    pub fn new(lat: Vec<f64>, lon: Vec<f64>) -> Result<Self> {
        if lat.len() < 2 || lon.len() < 2 {
            return Err(Error::Grid(format!(
                "need at least 2 rows and 2 columns, got {}x{}",
                lat.len(),
                lon.len()
            )));
        }
        if !strictly_monotone(&lat) || !strictly_monotone(&lon) {
            return Err(Error::Grid("coordinates must be strictly monotone".into()));
        }
        let mean_lat = lat.iter().sum::<f64>() / lat.len() as f64;
        let dy_km = mean_abs_step(&lat) * KM_PER_DEGREE;
        let dx_km = mean_abs_step(&lon) * KM_PER_DEGREE * mean_lat.to_radians().cos();
        if !(dx_km > 0.0 && dy_km > 0.0) {
            return Err(Error::Grid("grid spacing must be positive".into()));
        }
        Ok(Self {
            lat,
            lon,
            dx_km,
            dy_km,
        })
    }

    /// Grid with the requested spacing in kilometres, centred on
    /// (`center_lat`, `center_lon`), latitude ascending with row index.
    pub fn regular_km(
        n_rows: usize,
        n_cols: usize,
        dy_km: f64,
        dx_km: f64,
        center_lat: f64,
        center_lon: f64,
    ) -> Result<Self> {
        let dlat = dy_km / KM_PER_DEGREE;
        let dlon = dx_km / (KM_PER_DEGREE * center_lat.to_radians().cos());
        let lat = (0..n_rows)
            .map(|i| center_lat + (i as f64 - (n_rows as f64 - 1.0) / 2.0) * dlat)
            .collect();
        let lon = (0..n_cols)
            .map(|j| center_lon + (j as f64 - (n_cols as f64 - 1.0) / 2.0) * dlon)
            .collect();
        Self::new(lat, lon)
    }

    pub fn n_rows(&self) -> usize {
        self.lat.len()
    }

    pub fn n_cols(&self) -> usize {
        self.lon.len()
    }

    pub fn n_cells(&self) -> usize {
        self.lat.len() * self.lon.len()
    }

    pub fn lat(&self) -> &[f64] {
        &self.lat
    }

    pub fn lon(&self) -> &[f64] {
        &self.lon
    }

    pub fn dx_km(&self) -> f64 {
        self.dx_km
    }

    pub fn dy_km(&self) -> f64 {
        self.dy_km
    }

    pub fn mean_lat(&self) -> f64 {
        self.lat.iter().sum::<f64>() / self.lat.len() as f64
    }

    /// Planar position of a flat cell index in km relative to the first cell.
    pub fn position_km(&self, cell: usize) -> (f64, f64) {
        let (r, c) = (cell / self.n_cols(), cell % self.n_cols());
        let coslat = self.mean_lat().to_radians().cos();
        (
            (self.lat[r] - self.lat[0]) * KM_PER_DEGREE,
            (self.lon[c] - self.lon[0]) * KM_PER_DEGREE * coslat,
        )
    }

    pub fn distance_km(&self, a: usize, b: usize) -> f64 {
        let (ya, xa) = self.position_km(a);
        let (yb, xb) = self.position_km(b);
        (ya - yb).hypot(xa - xb)
    }

    /// True when both grids have the same shape and coordinates within
    /// `1e-9` degrees.
    pub fn matches(&self, other: &GridSpec) -> bool {
        let close = |a: &[f64], b: &[f64]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9)
        };
        close(&self.lat, &other.lat) && close(&self.lon, &other.lon)
    }
}

/// Calendar helpers for the daily time axis (days since 1970-01-01).
pub mod calendar {
    use super::*;

    const UNIX_EPOCH_CE_DAYS: i32 = 719_163;

    pub fn date(days: i64) -> NaiveDate {
        NaiveDate::from_num_days_from_ce_opt(days as i32 + UNIX_EPOCH_CE_DAYS)
            .expect("day index within chrono range")
    }

    pub fn days(date: NaiveDate) -> i64 {
        (date.num_days_from_ce() - UNIX_EPOCH_CE_DAYS) as i64
    }

    pub fn parse(text: &str) -> Result<i64> {
        NaiveDate::parse_from_str(text.trim(), "%Y-%m-%d")
            .map(days)
            .map_err(|e| Error::Spec(format!("bad date `{text}`: {e}")))
    }

    pub fn daily(start: NaiveDate, n: usize) -> Vec<i64> {
        let d0 = days(start);
        (0..n as i64).map(|i| d0 + i).collect()
    }

    pub fn year(days: i64) -> i32 {
        date(days).year()
    }

    pub fn month(days: i64) -> u32 {
        date(days).month()
    }

    #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
    pub enum Season {
        Djf,
        Mam,
        Jja,
        Son,
    }

    impl Season {
        pub const ALL: [Season; 4] = [Season::Djf, Season::Mam, Season::Jja, Season::Son];

        pub fn of_month(month: u32) -> Season {
            match month {
                12 | 1 | 2 => Season::Djf,
                3..=5 => Season::Mam,
                6..=8 => Season::Jja,
                _ => Season::Son,
            }
        }

        pub fn months(self) -> [u32; 3] {
            match self {
                Season::Djf => [12, 1, 2],
                Season::Mam => [3, 4, 5],
                Season::Jja => [6, 7, 8],
                Season::Son => [9, 10, 11],
            }
        }

        pub fn name(self) -> &'static str {
            match self {
                Season::Djf => "DJF",
                Season::Mam => "MAM",
                Season::Jja => "JJA",
                Season::Son => "SON",
            }
        }
    }

    /// Season and season-year of a day. December belongs to the DJF of the
    /// following year.
    pub fn season(days: i64) -> (Season, i32) {
        let d = date(days);
        let season = Season::of_month(d.month());
        let year = if d.month() == 12 { d.year() + 1 } else { d.year() };
        (season, year)
    }
}

/// One time step of a stack: `[variable][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub n_channels: usize,
    pub n_rows: usize,
    pub n_cols: usize,
    pub data: Vec<f64>,
}

impl Frame {
    pub fn zeros(n_channels: usize, n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_channels,
            n_rows,
            n_cols,
            data: vec![0.0; n_channels * n_rows * n_cols],
        }
    }

    pub fn plane_len(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.n_channels == other.n_channels
            && self.n_rows == other.n_rows
            && self.n_cols == other.n_cols
    }

    /// Copy with NaN (missing) entries replaced by zero.
    pub fn zero_filled(&self) -> Frame {
        let mut out = self.clone();
        for x in &mut out.data {
            if x.is_nan() {
                *x = 0.0;
            }
        }
        out
    }
}

/// `(time, variable, row, col)` field values with a validity mask.
///
/// Masked-out cells hold NaN in every slice; the mask is authoritative.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldStack {
    grid: GridSpec,
    variables: Vec<String>,
    units: Vec<String>,
    times: Vec<i64>,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl FieldStack {
    /// Builds a stack, forcing masked cells to NaN and checking that every
    /// valid value is finite.
    pub fn new(
        grid: GridSpec,
        variables: Vec<String>,
        units: Vec<String>,
        times: Vec<i64>,
        mut values: Vec<f64>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        let n_cells = grid.n_cells();
        if units.len() != variables.len() {
            return Err(Error::Shape(format!(
                "{} variables but {} units",
                variables.len(),
                units.len()
            )));
        }
        if mask.len() != n_cells {
            return Err(Error::Shape(format!(
                "mask has {} cells, grid has {n_cells}",
                mask.len()
            )));
        }
        let expected = times.len() * variables.len() * n_cells;
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "values hold {} entries, expected {expected}",
                values.len()
            )));
        }
        for (i, x) in values.iter_mut().enumerate() {
            let cell = i % n_cells;
            if !mask[cell] {
                *x = f64::NAN;
            } else if !x.is_finite() {
                return Err(Error::Degenerate(format!(
                    "non-finite value at flat index {i} on a valid cell"
                )));
            }
        }
        Ok(Self {
            grid,
            variables,
            units,
            times,
            values,
            mask,
        })
    }

    /// Stack of zeros over a full mask, with wind units.
    pub fn zeros(grid: GridSpec, variables: &[&str], times: Vec<i64>) -> Self {
        let n = times.len() * variables.len() * grid.n_cells();
        let mask = vec![true; grid.n_cells()];
        Self::new(
            grid,
            variables.iter().map(|s| s.to_string()).collect(),
            vec![WIND_UNITS.to_string(); variables.len()],
            times,
            vec![0.0; n],
            mask,
        )
        .expect("consistent zero stack")
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn times(&self) -> &[i64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn n_cells(&self) -> usize {
        self.grid.n_cells()
    }

    pub fn n_valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_fully_valid(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    pub fn valid_cells(&self) -> Vec<usize> {
        (0..self.n_cells()).filter(|&c| self.mask[c]).collect()
    }

    pub fn slice(&self, t: usize, v: usize) -> &[f64] {
        let n = self.n_cells();
        let start = (t * self.n_vars() + v) * n;
        &self.values[start..start + n]
    }

    pub fn slice_mut(&mut self, t: usize, v: usize) -> &mut [f64] {
        let n = self.n_cells();
        let start = (t * self.n_vars() + v) * n;
        &mut self.values[start..start + n]
    }

    pub fn get(&self, t: usize, v: usize, cell: usize) -> f64 {
        self.values[(t * self.n_vars() + v) * self.n_cells() + cell]
    }

    /// Time series of one variable at one cell.
    pub fn series(&self, v: usize, cell: usize) -> Vec<f64> {
        (0..self.n_times()).map(|t| self.get(t, v, cell)).collect()
    }

    pub fn frame(&self, t: usize) -> Frame {
        let n = self.n_vars() * self.n_cells();
        Frame {
            n_channels: self.n_vars(),
            n_rows: self.grid.n_rows(),
            n_cols: self.grid.n_cols(),
            data: self.values[t * n..(t + 1) * n].to_vec(),
        }
    }

    /// Overwrites time step `t`; masked cells are reset to NaN.
    pub fn set_frame(&mut self, t: usize, frame: &Frame) -> Result<()> {
        if frame.n_channels != self.n_vars()
            || frame.n_rows != self.grid.n_rows()
            || frame.n_cols != self.grid.n_cols()
        {
            return Err(Error::Shape("frame does not match stack layout".into()));
        }
        let n = self.n_cells();
        for v in 0..self.n_vars() {
            let src = frame.channel(v);
            let mask = &self.mask;
            let dst = &mut self.values[(t * frame.n_channels + v) * n..(t * frame.n_channels + v + 1) * n];
            for (cell, (d, s)) in dst.iter_mut().zip(src).enumerate() {
                *d = if mask[cell] { *s } else { f64::NAN };
            }
        }
        Ok(())
    }

    /// Same layout with new values (validated like [`FieldStack::new`]).
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(
            self.grid.clone(),
            self.variables.clone(),
            self.units.clone(),
            self.times.clone(),
            values,
            self.mask.clone(),
        )
    }

    /// Same layout with a new mask applied.
    pub fn with_mask(&self, mask: Vec<bool>) -> Result<Self> {
        Self::new(
            self.grid.clone(),
            self.variables.clone(),
            self.units.clone(),
            self.times.clone(),
            self.values.clone(),
            mask,
        )
    }

    /// Elementwise map over valid cells; masked cells stay NaN.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        let mut out = self.clone();
        for x in &mut out.values {
            if !x.is_nan() {
                *x = f(*x);
            }
        }
        out
    }

    /// Elementwise combination of two aligned stacks.
    pub fn zip_with(&self, other: &FieldStack, mut f: impl FnMut(f64, f64) -> f64) -> Result<Self> {
        self.check_aligned(other)?;
        let mut out = self.clone();
        for (x, y) in out.values.iter_mut().zip(&other.values) {
            if !x.is_nan() {
                *x = f(*x, *y);
            }
        }
        Ok(out)
    }

    pub fn select_times(&self, indices: &[usize]) -> Self {
        let n = self.n_vars() * self.n_cells();
        let mut values = Vec::with_capacity(indices.len() * n);
        for &t in indices {
            values.extend_from_slice(&self.values[t * n..(t + 1) * n]);
        }
        Self {
            grid: self.grid.clone(),
            variables: self.variables.clone(),
            units: self.units.clone(),
            times: indices.iter().map(|&t| self.times[t]).collect(),
            values,
            mask: self.mask.clone(),
        }
    }

    /// Time steps with `start <= day <= end`.
    pub fn select_period(&self, start: i64, end: i64) -> Self {
        let idx: Vec<usize> = (0..self.n_times())
            .filter(|&t| self.times[t] >= start && self.times[t] <= end)
            .collect();
        self.select_times(&idx)
    }

    pub fn select_variables(&self, indices: &[usize]) -> Self {
        let n = self.n_cells();
        let mut values = Vec::with_capacity(self.n_times() * indices.len() * n);
        for t in 0..self.n_times() {
            for &v in indices {
                values.extend_from_slice(self.slice(t, v));
            }
        }
        Self {
            grid: self.grid.clone(),
            variables: indices.iter().map(|&v| self.variables[v].clone()).collect(),
            units: indices.iter().map(|&v| self.units[v].clone()).collect(),
            times: self.times.clone(),
            values,
            mask: self.mask.clone(),
        }
    }

    /// Checks that grids, variables, times and masks agree.
    pub fn check_aligned(&self, other: &FieldStack) -> Result<()> {
        self.check_same_space(other)?;
        if self.times.len() != other.times.len() {
            return Err(Error::Alignment(format!(
                "{} vs {} time steps",
                self.times.len(),
                other.times.len()
            )));
        }
        Ok(())
    }

    /// Like [`check_aligned`](Self::check_aligned) but ignores the time axis.
    pub fn check_same_space(&self, other: &FieldStack) -> Result<()> {
        if !self.grid.matches(&other.grid) {
            return Err(Error::Alignment("grids differ".into()));
        }
        if self.variables != other.variables {
            return Err(Error::Alignment(format!(
                "variables differ: {:?} vs {:?}",
                self.variables, other.variables
            )));
        }
        if self.mask != other.mask {
            return Err(Error::Alignment("masks differ".into()));
        }
        Ok(())
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }
}

/// Per-variable temporal mean and (population) standard deviation maps.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMaps {
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
}

/// Temporal mean and population standard deviation per cell and variable.
/// Masked cells are NaN in both maps.
pub fn temporal_moments(stack: &FieldStack) -> Result<MomentMaps> {
    let nt = stack.n_times();
    if nt < 2 {
        return Err(Error::Degenerate(format!(
            "temporal moments need at least 2 time steps, got {nt}"
        )));
    }
    let n = stack.n_cells();
    let mut mean = vec![vec![0.0; n]; stack.n_vars()];
    let mut std = vec![vec![0.0; n]; stack.n_vars()];
    for v in 0..stack.n_vars() {
        for t in 0..nt {
            for (m, x) in mean[v].iter_mut().zip(stack.slice(t, v)) {
                *m += x;
            }
        }
        for m in &mut mean[v] {
            *m /= nt as f64;
        }
        for t in 0..nt {
            for ((s, x), m) in std[v].iter_mut().zip(stack.slice(t, v)).zip(&mean[v]) {
                *s += (x - m) * (x - m);
            }
        }
        for s in &mut std[v] {
            *s = (*s / nt as f64).sqrt();
        }
    }
    Ok(MomentMaps { mean, std })
}

/// Position of `x` on a monotone axis: `(i0, i1, w)` with
/// `x = (1 - w) * coords[i0] + w * coords[i1]`.
fn locate(coords: &[f64], x: f64) -> Option<(usize, usize, f64)> {
    const TOL: f64 = 1e-9;
    let n = coords.len();
    let ascending = coords[n - 1] > coords[0];
    let (lo, hi) = if ascending {
        (coords[0], coords[n - 1])
    } else {
        (coords[n - 1], coords[0])
    };
    if x < lo - TOL || x > hi + TOL {
        return None;
    }
    // first index whose coordinate is past x
    let k = if ascending {
        coords.partition_point(|&c| c <= x)
    } else {
        coords.partition_point(|&c| c >= x)
    };
    let i1 = k.clamp(1, n - 1);
    let i0 = i1 - 1;
    let w = ((x - coords[i0]) / (coords[i1] - coords[i0])).clamp(0.0, 1.0);
    Some((i0, i1, w))
}

/// Bilinear interpolation onto `target`. A target cell is missing when any
/// source cell with non-zero weight is missing.
pub fn bilinear_regrid(stack: &FieldStack, target: &GridSpec) -> Result<FieldStack> {
    let src = stack.grid();
    let rows: Vec<_> = target
        .lat()
        .iter()
        .map(|&y| locate(src.lat(), y))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Extent("target latitude outside source range".into()))?;
    let cols: Vec<_> = target
        .lon()
        .iter()
        .map(|&x| locate(src.lon(), x))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Extent("target longitude outside source range".into()))?;

    let sc = src.n_cols();
    // per target cell: up to four (source cell, weight) contributions
    let mut stencils = Vec::with_capacity(target.n_cells());
    let mut mask = Vec::with_capacity(target.n_cells());
    for &(r0, r1, wr) in &rows {
        for &(c0, c1, wc) in &cols {
            let taps = [
                (r0 * sc + c0, (1.0 - wr) * (1.0 - wc)),
                (r0 * sc + c1, (1.0 - wr) * wc),
                (r1 * sc + c0, wr * (1.0 - wc)),
                (r1 * sc + c1, wr * wc),
            ];
            let valid = taps.iter().all(|&(cell, w)| w == 0.0 || stack.mask()[cell]);
            stencils.push(taps);
            mask.push(valid);
        }
    }

    let n_out = target.n_cells();
    let mut values = vec![f64::NAN; stack.n_times() * stack.n_vars() * n_out];
    for t in 0..stack.n_times() {
        for v in 0..stack.n_vars() {
            let slice = stack.slice(t, v);
            let out = &mut values[(t * stack.n_vars() + v) * n_out..(t * stack.n_vars() + v + 1) * n_out];
            for (cell, taps) in stencils.iter().enumerate() {
                if mask[cell] {
                    out[cell] = taps
                        .iter()
                        .filter(|&&(_, w)| w != 0.0)
                        .map(|&(s, w)| w * slice[s])
                        .sum();
                }
            }
        }
    }
    FieldStack::new(
        target.clone(),
        stack.variables().to_vec(),
        stack.units().to_vec(),
        stack.times().to_vec(),
        values,
        mask,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal_vec;

    fn grid(n_rows: usize, n_cols: usize) -> GridSpec {
        GridSpec::regular_km(n_rows, n_cols, 25.0, 25.0, 46.0, 2.0).unwrap()
    }

    fn random_stack(g: &GridSpec, n_vars: usize, n_times: usize, seed: u64) -> FieldStack {
        let n = g.n_cells() * n_vars * n_times;
        let vars: Vec<String> = (0..n_vars).map(|v| format!("v{v}")).collect();
        FieldStack::new(
            g.clone(),
            vars,
            vec![WIND_UNITS.into(); n_vars],
            (0..n_times as i64).collect(),
            normal_vec(seed, 0, n),
            vec![true; g.n_cells()],
        )
        .unwrap()
    }

    #[test]
    fn grid_spacing_matches_construction() {
        let g = GridSpec::regular_km(8, 10, 25.0, 30.0, 45.0, 3.0).unwrap();
        assert!((g.dy_km() - 25.0).abs() < 1e-9);
        assert!((g.dx_km() - 30.0).abs() < 1e-9);
        assert!(GridSpec::new(vec![0.0], vec![0.0, 1.0]).is_err());
        assert!(GridSpec::new(vec![0.0, 1.0, 0.5], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn masked_cells_become_nan() {
        let g = grid(2, 2);
        let s = FieldStack::new(
            g,
            vec!["a".into()],
            vec![WIND_UNITS.into()],
            vec![0],
            vec![1.0, 2.0, 3.0, 4.0],
            vec![true, false, true, true],
        )
        .unwrap();
        assert!(s.slice(0, 0)[1].is_nan());
        assert_eq!(s.n_valid(), 3);
    }

    #[test]
    fn moments_of_constant_and_two_steps() {
        let g = grid(3, 3);
        let c = FieldStack::zeros(g.clone(), &["a"], vec![0, 1, 2]).map(|_| 4.5);
        let m = temporal_moments(&c).unwrap();
        assert!(m.mean[0].iter().all(|&x| x == 4.5));
        assert!(m.std[0].iter().all(|&x| x == 0.0));

        let mut two = FieldStack::zeros(g, &["a"], vec![0, 1]);
        two.slice_mut(1, 0).fill(2.0);
        let m = temporal_moments(&two).unwrap();
        assert!(m.mean[0].iter().all(|&x| x == 1.0));
        assert!(m.std[0].iter().all(|&x| x == 1.0));

        let one = FieldStack::zeros(grid(2, 2), &["a"], vec![0]);
        assert!(matches!(temporal_moments(&one), Err(Error::Degenerate(_))));
    }

    #[test]
    fn moments_match_loop_oracle() {
        let g = grid(4, 4);
        let s = random_stack(&g, 3, 5, 11);
        let m = temporal_moments(&s).unwrap();
        for v in 0..3 {
            for cell in 0..16 {
                let xs: Vec<f64> = (0..5).map(|t| s.values()[(t * 3 + v) * 16 + cell]).collect();
                let mu = xs.iter().sum::<f64>() / 5.0;
                let var = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / 5.0;
                assert!((m.mean[v][cell] - mu).abs() < 1e-12);
                assert!((m.std[v][cell] - var.sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn standardisation_gives_zero_mean_unit_std() {
        let g = grid(4, 5);
        let s = random_stack(&g, 2, 7, 3);
        let m = temporal_moments(&s).unwrap();
        let mut z = s.clone();
        for t in 0..7 {
            for v in 0..2 {
                for (cell, x) in z.slice_mut(t, v).iter_mut().enumerate() {
                    *x = (*x - m.mean[v][cell]) / m.std[v][cell];
                }
            }
        }
        let mz = temporal_moments(&z).unwrap();
        for v in 0..2 {
            assert!(mz.mean[v].iter().all(|x| x.abs() < 1e-10));
            assert!(mz.std[v].iter().all(|x| (x - 1.0).abs() < 1e-10));
        }
    }

    #[test]
    fn regrid_identity_and_planes() {
        let g = grid(6, 7);
        let s = random_stack(&g, 1, 2, 5);
        let same = bilinear_regrid(&s, &g).unwrap();
        assert_eq!(same.values(), s.values());

        let mut plane = s.clone();
        for cell in 0..g.n_cells() {
            let (r, c) = (cell / 7, cell % 7);
            let x = 0.7 * g.lat()[r] - 1.3 * g.lon()[c] + 2.0;
            plane.slice_mut(0, 0)[cell] = x;
            plane.slice_mut(1, 0)[cell] = x;
        }
        let fine = GridSpec::new(
            (0..11).map(|i| g.lat()[0] + i as f64 * (g.lat()[5] - g.lat()[0]) / 10.0).collect(),
            (0..13).map(|j| g.lon()[0] + j as f64 * (g.lon()[6] - g.lon()[0]) / 12.0).collect(),
        )
        .unwrap();
        let out = bilinear_regrid(&plane, &fine).unwrap();
        for cell in 0..fine.n_cells() {
            let (r, c) = (cell / 13, cell % 13);
            let x = 0.7 * fine.lat()[r] - 1.3 * fine.lon()[c] + 2.0;
            assert!((out.slice(0, 0)[cell] - x).abs() < 1e-10);
        }
    }

    #[test]
    fn regrid_matches_per_point_oracle() {
        let g = grid(5, 5);
        let s = random_stack(&g, 1, 1, 9);
        let fine = GridSpec::new(
            (0..9).map(|i| g.lat()[0] + i as f64 * (g.lat()[4] - g.lat()[0]) / 8.0).collect(),
            (0..9).map(|j| g.lon()[0] + j as f64 * (g.lon()[4] - g.lon()[0]) / 8.0).collect(),
        )
        .unwrap();
        let out = bilinear_regrid(&s, &fine).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                // midpoints of the source cells fall on odd indices
                let (fr, fc) = (i as f64 / 2.0, j as f64 / 2.0);
                let (r0, c0) = ((fr.floor() as usize).min(3), (fc.floor() as usize).min(3));
                let (wr, wc) = (fr - r0 as f64, fc - c0 as f64);
                let at = |r: usize, c: usize| s.slice(0, 0)[r * 5 + c];
                let expect = (1.0 - wr) * (1.0 - wc) * at(r0, c0)
                    + (1.0 - wr) * wc * at(r0, c0 + 1)
                    + wr * (1.0 - wc) * at(r0 + 1, c0)
                    + wr * wc * at(r0 + 1, c0 + 1);
                assert!((out.slice(0, 0)[i * 9 + j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn regrid_propagates_mask_and_rejects_extent() {
        let g = grid(4, 4);
        let mut mask = vec![true; 16];
        mask[5] = false;
        let s = random_stack(&g, 1, 1, 1).with_mask(mask).unwrap();
        let same = bilinear_regrid(&s, &g).unwrap();
        assert_eq!(same.mask(), s.mask());
        let mid = GridSpec::new(
            vec![(g.lat()[0] + g.lat()[1]) / 2.0, g.lat()[3]],
            vec![(g.lon()[0] + g.lon()[1]) / 2.0, g.lon()[3]],
        )
        .unwrap();
        let out = bilinear_regrid(&s, &mid).unwrap();
        assert!(!out.mask()[0]);
        assert!(out.mask()[3]);

        let outside = GridSpec::new(vec![g.lat()[0] - 1.0, g.lat()[1]], g.lon().to_vec()).unwrap();
        assert!(matches!(bilinear_regrid(&s, &outside), Err(Error::Extent(_))));
    }

    #[test]
    fn season_partition_covers_every_day() {
        let days = calendar::daily(NaiveDate::from_ymd_opt(1999, 11, 15).unwrap(), 500);
        for d in days {
            let (s, year) = calendar::season(d);
            let m = calendar::month(d);
            let hits = calendar::Season::ALL.iter().filter(|x| x.months().contains(&m)).count();
            assert_eq!(hits, 1);
            assert!(s.months().contains(&m));
            if m == 12 {
                assert_eq!(year, calendar::year(d) + 1);
            }
        }
        assert_eq!(calendar::parse("1970-01-02").unwrap(), 1);
    }
}
