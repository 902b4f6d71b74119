//! Geometric size grid, projection of initial data and the precomputed
//! coagulation and fragmentation operator tables.
//!
//! Each cell `i` carries three representative volumes: the geometric-mean
//! pivot `x_i` where rates are evaluated, the width `w_i`, and the mass
//! center `c_i = int_cell y dy / w_i`. The state stores cell averages `g_i`, so
//! the particle count of a cell is `g_i w_i` and its mass is `g_i w_i c_i`.
//! Birth splitting and the fragmentation mass normalization are done with
//! respect to the mass centers, which makes the first moment computed by
//! [`moment`] an exact invariant of the discrete operators.

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{FragmentationSpec, KernelSpec, TruncationSpec};
use crate::quadrature::{integrate, Tolerance};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    edges: Vec<f64>,
    pivots: Vec<f64>,
    widths: Vec<f64>,
    centers: Vec<f64>,
}

/// `int_a^b y^p dy` in closed form.
pub fn power_integral(a: f64, b: f64, p: f64) -> f64 {
    if p == -1.0 {
        (b / a).ln()
    } else if p == 0.0 {
        b - a
    } else {
        let q = p + 1.0;
        (b.powf(q) - a.powf(q)) / q
    }
}

impl Grid {
    /// Geometric grid with `cells` cells spanning `[y_min, n]`.
    pub fn geometric(y_min: f64, n: f64, cells: usize) -> Result<Self> {
        if !(y_min > 0.0 && y_min < n && n.is_finite()) {
            return Err(Error::Construction(format!(
                "grid bounds must satisfy 0 < y_min < n, got y_min = {y_min}, n = {n}"
            )));
        }
        if cells < 2 {
            return Err(Error::Construction(format!("grid needs at least 2 cells, got {cells}")));
        }
        if y_min > 1.0 / n {
            warn!(
                "y_min = {y_min} exceeds 1/n = {}; the truncated kernel support is not fully resolved",
                1.0 / n
            );
        }
        // Edges are computed as y_min * 2^(octaves * i / cells) so that grids
        // sharing y_min and cells-per-octave coincide bitwise on their
        // common prefix.
        let octaves = (n / y_min).log2();
        let mut edges: Vec<f64> = (0..=cells)
            .map(|i| y_min * (octaves * i as f64 / cells as f64).exp2())
            .collect();
        edges[0] = y_min;
        edges[cells] = n;
        Ok(Self::from_edges(edges))
    }

    fn from_edges(edges: Vec<f64>) -> Self {
        let pivots = edges.windows(2).map(|e| (e[0] * e[1]).sqrt()).collect();
        let widths: Vec<f64> = edges.windows(2).map(|e| e[1] - e[0]).collect();
        let centers = edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect();
        Self { edges, pivots, widths, centers }
    }

    pub fn cells(&self) -> usize {
        self.pivots.len()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn pivots(&self) -> &[f64] {
        &self.pivots
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    /// Mass centers `int_cell y dy / w_i`.
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn lower(&self) -> f64 {
        self.edges[0]
    }

    pub fn upper(&self) -> f64 {
        self.edges[self.cells()]
    }

    /// `int_{cell i} y^p dy`.
    pub fn cell_power_integral(&self, i: usize, p: f64) -> f64 {
        power_integral(self.edges[i], self.edges[i + 1], p)
    }

    /// `int_{cell i} y^p dy` restricted to `y < cap`.
    pub fn cell_power_integral_below(&self, i: usize, p: f64, cap: f64) -> f64 {
        let hi = self.edges[i + 1].min(cap);
        if hi <= self.edges[i] {
            0.0
        } else {
            power_integral(self.edges[i], hi, p)
        }
    }

    /// Whether `self` is a leading block of `other` (same `y_min`, same
    /// edges as far as `self` extends).
    pub fn is_prefix_of(&self, other: &Grid) -> bool {
        self.edges.len() <= other.edges.len()
            && self
                .edges
                .iter()
                .zip(&other.edges)
                .all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs())
    }
}

/// Cell-averaged number density plus the mass ledgers.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedDensity {
    pub values: Vec<f64>,
    /// Mass of fragments born below the lowest edge.
    pub dust_mass: f64,
    /// Mass removed by non-conservative coagulation events.
    pub escaped_mass: f64,
    /// Mass added by clamping roundoff negativity (stored with sign).
    pub roundoff_mass: f64,
    pub time: f64,
}

impl GriddedDensity {
    pub fn zeros(cells: usize) -> Self {
        Self {
            values: vec![0.0; cells],
            dust_mass: 0.0,
            escaped_mass: 0.0,
            roundoff_mass: 0.0,
            time: 0.0,
        }
    }

    /// Resolved mass plus every ledger; constant along exact trajectories.
    pub fn ledger_total(&self, grid: &Grid) -> f64 {
        moment(grid, self, 1.0) + self.dust_mass + self.escaped_mass + self.roundoff_mass
    }
}

/// Cell averages of `f` via adaptive quadrature at relative tolerance 1e-10.
pub fn project_initial<F>(f: F, grid: &Grid) -> Result<GriddedDensity>
where
    F: Fn(f64) -> f64,
{
    let tol = Tolerance { abs: 1e-300, rel: 1e-10 };
    let values = (0..grid.cells())
        .map(|i| {
            let (a, b) = (grid.edges[i], grid.edges[i + 1]);
            integrate(&f, a, b, tol)
                .map(|v| v / grid.widths[i])
                .map_err(|e| Error::Quadrature(format!("projection of cell {i}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(i) = values.iter().position(|v| *v < 0.0) {
        return Err(Error::Contract(format!("projected density is negative in cell {i}")));
    }
    Ok(GriddedDensity { values, ..GriddedDensity::zeros(grid.cells()) })
}

/// `sum_i g_i int_{cell i} y^p dy`; for `p = 1` this is the resolved mass
/// without the ledgers.
pub fn moment(grid: &Grid, d: &GriddedDensity, p: f64) -> f64 {
    d.values
        .iter()
        .enumerate()
        .map(|(i, v)| v * grid.cell_power_integral(i, p))
        .sum()
}

/// Number fractions `(lower, upper)` assigning a particle of size `b` to the
/// representatives `u <= b <= v` so that number and mass are both kept.
pub fn two_point_split(b: f64, u: f64, v: f64) -> (f64, f64) {
    debug_assert!(u < v && u <= b && b <= v);
    let span = v - u;
    ((v - b) / span, (b - u) / span)
}

/// Where a coagulation product goes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Birth {
    /// Number fractions on two adjacent cells.
    Split { lower: usize, w_lower: f64, w_upper: f64 },
    /// Product lies above the top mass center but below `n`: placed in the
    /// top cell with the number weight that keeps its mass.
    Lumped { cell: usize, weight: f64 },
    /// Product reaches `n` under the non-conservative truncation.
    Escape { mass: f64 },
}

/// A reacting cell pair `i <= j`; events occur at `rate * N_i * N_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEntry {
    pub i: usize,
    pub j: usize,
    pub rate: f64,
    pub birth: Birth,
}

#[derive(Debug, Clone)]
pub struct CoagTables {
    cells: usize,
    pairs: Vec<PairEntry>,
    /// Dense `cells x cells` loss coefficients, row-major.
    loss: Vec<f64>,
    /// Per destination cell: `(i, j, coef)` with gain `coef * N_i * N_j`.
    gains: Vec<Vec<(u32, u32, f64)>>,
    /// `(i, j, coef * mass)` for escaping pairs.
    escapes: Vec<(u32, u32, f64)>,
}

/// Classifies the product of a pair with representative size `b`.
fn place_birth(grid: &Grid, trunc: &TruncationSpec, b: f64) -> Option<Birth> {
    if b >= trunc.n() {
        return if trunc.is_conservative() { None } else { Some(Birth::Escape { mass: b }) };
    }
    let c = grid.centers();
    let top = c.len() - 1;
    if b >= c[top] {
        return Some(Birth::Lumped { cell: top, weight: b / c[top] });
    }
    // First center strictly above b; b >= c[0] always since b = c_i + c_j.
    let upper = c.partition_point(|&x| x <= b);
    let lower = upper - 1;
    let (w_lower, w_upper) = two_point_split(b, c[lower], c[upper]);
    Some(Birth::Split { lower, w_lower, w_upper })
}

impl CoagTables {
    pub fn build(grid: &Grid, spec: &KernelSpec, trunc: &TruncationSpec) -> Result<Self> {
        if (grid.upper() - trunc.n()).abs() > 1e-12 * trunc.n() {
            return Err(Error::Construction(format!(
                "grid upper edge {} does not match the cutoff n = {}",
                grid.upper(),
                trunc.n()
            )));
        }
        let cells = grid.cells();
        let x = grid.pivots();
        let c = grid.centers();

        let rows: Vec<Vec<PairEntry>> = (0..cells)
            .into_par_iter()
            .map(|i| {
                let mut row = Vec::new();
                if !trunc.coagulates(x[i]) {
                    return row;
                }
                for j in i..cells {
                    if !trunc.coagulates(x[j]) {
                        continue;
                    }
                    let Some(birth) = place_birth(grid, trunc, c[i] + c[j]) else {
                        continue;
                    };
                    let a = spec.rate(x[i], x[j]);
                    if a == 0.0 {
                        continue;
                    }
                    let rate = if i == j { 0.5 * a } else { a };
                    row.push(PairEntry { i, j, rate, birth });
                }
                row
            })
            .collect();
        let pairs: Vec<PairEntry> = rows.into_iter().flatten().collect();

        let mut loss = vec![0.0; cells * cells];
        let mut gains: Vec<Vec<(u32, u32, f64)>> = vec![Vec::new(); cells];
        let mut escapes = Vec::new();
        for p in &pairs {
            let a = if p.i == p.j { 2.0 * p.rate } else { p.rate };
            loss[p.i * cells + p.j] = a;
            loss[p.j * cells + p.i] = a;
            let (i, j) = (p.i as u32, p.j as u32);
            match p.birth {
                Birth::Split { lower, w_lower, w_upper } => {
                    if w_lower > 0.0 {
                        gains[lower].push((i, j, p.rate * w_lower));
                    }
                    if w_upper > 0.0 {
                        gains[lower + 1].push((i, j, p.rate * w_upper));
                    }
                }
                Birth::Lumped { cell, weight } => gains[cell].push((i, j, p.rate * weight)),
                Birth::Escape { mass } => escapes.push((i, j, p.rate * mass)),
            }
        }
        Ok(Self { cells, pairs, loss, gains, escapes })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn pairs(&self) -> &[PairEntry] {
        &self.pairs
    }

    pub fn pair(&self, i: usize, j: usize) -> Option<&PairEntry> {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.pairs.iter().find(|p| p.i == i && p.j == j)
    }

    /// Coefficient `L_kj` with loss of cell `k` equal to `N_k sum_j L_kj N_j`.
    pub fn loss_coefficient(&self, k: usize, j: usize) -> f64 {
        self.loss[k * self.cells + j]
    }

    pub(crate) fn loss_row(&self, k: usize) -> &[f64] {
        &self.loss[k * self.cells..(k + 1) * self.cells]
    }

    pub(crate) fn gains_into(&self, k: usize) -> &[(u32, u32, f64)] {
        &self.gains[k]
    }

    pub(crate) fn escapes(&self) -> &[(u32, u32, f64)] {
        &self.escapes
    }
}

/// How fragment mass born below the lowest edge is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DustPolicy {
    /// Accumulate it in the dust ledger.
    Ledger,
    /// Add it to the lowest cell, keeping its mass.
    Lump,
}

impl DustPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            DustPolicy::Ledger => "ledger",
            DustPolicy::Lump => "lump",
        }
    }
}

/// Daughters of the pivot parent of cell `j` landing in cell `i`, before the
/// mass normalization.
pub fn raw_frag_coefficient(grid: &Grid, frag: &FragmentationSpec, i: usize, j: usize) -> f64 {
    if i > j {
        return 0.0;
    }
    let e = grid.edges();
    frag.daughters_between(e[i], e[i + 1], grid.pivots()[j])
}

#[derive(Debug, Clone)]
pub struct FragMatrix {
    cells: usize,
    /// Dense `cells x cells`, row-major: `F[i][j]` daughters in cell `i` per
    /// breakup in cell `j`.
    coeff: Vec<f64>,
    /// Fraction of the source mass sent to the dust ledger.
    dust_fraction: Vec<f64>,
}

impl FragMatrix {
    pub fn build(grid: &Grid, frag: &FragmentationSpec, policy: DustPolicy) -> Self {
        let cells = grid.cells();
        let c = grid.centers();
        let x = grid.pivots();
        let y_min = grid.lower();
        let mut coeff = vec![0.0; cells * cells];
        let mut dust_fraction = vec![0.0; cells];
        for j in 0..cells {
            let d = frag.mass_fraction_below(y_min, x[j]);
            let raw: Vec<f64> = (0..=j).map(|i| raw_frag_coefficient(grid, frag, i, j)).collect();
            let raw_mass: f64 = raw.iter().zip(c).map(|(r, ci)| r * ci).sum();
            let scale = (1.0 - d) * c[j] / raw_mass;
            for (i, r) in raw.iter().enumerate() {
                coeff[i * cells + j] = r * scale;
            }
            match policy {
                DustPolicy::Ledger => dust_fraction[j] = d,
                DustPolicy::Lump => coeff[j] += d * c[j] / c[0],
            }
        }
        Self { cells, coeff, dust_fraction }
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn coefficient(&self, i: usize, j: usize) -> f64 {
        self.coeff[i * self.cells + j]
    }

    pub fn dust_fraction(&self, j: usize) -> f64 {
        self.dust_fraction[j]
    }

    pub(crate) fn row(&self, i: usize) -> &[f64] {
        &self.coeff[i * self.cells..(i + 1) * self.cells]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Zeta;

    #[test]
    fn small_grid_layout() {
        let g = Grid::geometric(1.0, 8.0, 3).unwrap();
        assert_eq!(g.edges(), &[1.0, 2.0, 4.0, 8.0]);
        let s2 = 2f64.sqrt();
        for (p, e) in g.pivots().iter().zip([s2, 2.0 * s2, 4.0 * s2]) {
            assert!((p - e).abs() < 1e-15);
        }
        assert!(Grid::geometric(1.0, 8.0, 1).is_err());
        assert!(Grid::geometric(0.0, 8.0, 4).is_err());
        assert!(Grid::geometric(9.0, 8.0, 4).is_err());
    }

    #[test]
    fn geometric_ratio_is_constant() {
        let g = Grid::geometric(1e-4, 1e3, 160).unwrap();
        let e = g.edges();
        let r0 = e[1] / e[0];
        for w in e.windows(2) {
            assert!((w[1] / w[0] - r0).abs() <= 1e-12 * r0);
        }
        for i in 0..g.cells() {
            assert!(e[i] < g.pivots()[i] && g.pivots()[i] < e[i + 1]);
            assert!(g.pivots()[i] < g.centers()[i]);
        }
    }

    #[test]
    fn power_integrals() {
        assert!((power_integral(1.0, 4.0, -0.5) - 2.0).abs() < 1e-15);
        assert_eq!(power_integral(1.5, 4.0, 0.0), 2.5);
        assert!((power_integral(1.0, std::f64::consts::E, -1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn projection_of_exponential() {
        let g = Grid::geometric(1.0, 8.0, 3).unwrap();
        let d = project_initial(|y: f64| (-y).exp(), &g).unwrap();
        let oracle = (-1f64).exp() - (-2f64).exp();
        assert!((d.values[0] - oracle).abs() < 1e-12);
        assert!((oracle - 0.232544).abs() < 1e-6);
        let z = project_initial(|_| 0.0, &g).unwrap();
        assert!(z.values.iter().all(|v| *v == 0.0));
        assert_eq!(moment(&g, &z, 1.0), 0.0);
    }

    #[test]
    fn split_keeps_number_and_mass() {
        let (a, b) = two_point_split(2.0, 2.0, 3.0);
        assert_eq!((a, b), (1.0, 0.0));
        let (u, v, s) = (1.3, 2.9, 2.2);
        let (wl, wu) = two_point_split(s, u, v);
        assert!((wl + wu - 1.0).abs() < 1e-15);
        assert!((wl * u + wu * v - s).abs() < 1e-15);
        assert!((wl - (v - s) / (v - u)).abs() < 1e-15);
    }

    #[test]
    fn conservative_tables_drop_large_pairs() {
        let g = Grid::geometric(0.1, 10.0, 20).unwrap();
        let k = KernelSpec::constant(1.0).unwrap();
        let t1 = TruncationSpec::new(10.0, Zeta::Conservative).unwrap();
        let tabs = CoagTables::build(&g, &k, &t1).unwrap();
        let c = g.centers();
        for i in 0..g.cells() {
            for j in i..g.cells() {
                let p = tabs.pair(i, j);
                if c[i] + c[j] >= 10.0 {
                    assert!(p.is_none());
                    assert_eq!(tabs.loss_coefficient(i, j), 0.0);
                }
            }
        }
        let t0 = TruncationSpec::new(10.0, Zeta::NonConservative).unwrap();
        let tabs0 = CoagTables::build(&g, &k, &t0).unwrap();
        assert!(tabs0.pairs().iter().any(|p| matches!(p.birth, Birth::Escape { .. })));
        let mismatched = TruncationSpec::new(20.0, Zeta::Conservative).unwrap();
        assert!(CoagTables::build(&g, &k, &mismatched).is_err());
    }

    #[test]
    fn birth_weights_are_in_unit_interval() {
        let g = Grid::geometric(0.02, 50.0, 40).unwrap();
        let k = KernelSpec::singular_affine(1.0, 0.25).unwrap();
        let t = TruncationSpec::new(50.0, Zeta::Conservative).unwrap();
        let tabs = CoagTables::build(&g, &k, &t).unwrap();
        let c = g.centers();
        for p in tabs.pairs() {
            let b = c[p.i] + c[p.j];
            match p.birth {
                Birth::Split { lower, w_lower, w_upper } => {
                    assert!((0.0..=1.0).contains(&w_lower) && (0.0..=1.0).contains(&w_upper));
                    assert!((w_lower + w_upper - 1.0).abs() < 1e-14);
                    assert!((w_lower * c[lower] + w_upper * c[lower + 1] - b).abs() < 1e-13 * b);
                }
                Birth::Lumped { cell, weight } => {
                    assert_eq!(cell, g.cells() - 1);
                    assert!((weight * c[cell] - b).abs() < 1e-13 * b);
                }
                Birth::Escape { .. } => panic!("conservative tables cannot escape"),
            }
        }
    }

    #[test]
    fn frag_matrix_coefficients() {
        let f = FragmentationSpec::new(0.0, 1.0).unwrap();
        // Parent 4, daughter cell [1, 2].
        let quad = integrate(|y| f.breakage(y, 4.0).unwrap(), 1.0, 2.0, Tolerance::default()).unwrap();
        assert!((f.daughters_between(1.0, 2.0, 4.0) - 0.5).abs() < 1e-15);
        assert!((quad - 0.5).abs() < 1e-14);
        // On a grid with ratio 2 the source cell [4, 8] has pivot 4 sqrt2.
        let g = Grid::geometric(1.0, 16.0, 4).unwrap();
        let raw = raw_frag_coefficient(&g, &f, 0, 2);
        assert!((raw - 2.0 / (4.0 * 2f64.sqrt())).abs() < 1e-15);
        assert_eq!(raw_frag_coefficient(&g, &f, 3, 2), 0.0);

        let fm = FragMatrix::build(&g, &f, DustPolicy::Ledger);
        let c = g.centers();
        for j in 0..g.cells() {
            for i in (j + 1)..g.cells() {
                assert_eq!(fm.coefficient(i, j), 0.0);
            }
            let m: f64 = (0..=j).map(|i| c[i] * fm.coefficient(i, j)).sum();
            assert!((m + fm.dust_fraction(j) * c[j] - c[j]).abs() < 1e-14 * c[j]);
        }
    }

    #[test]
    fn dust_fraction_closed_form() {
        let f = FragmentationSpec::new(0.0, 1.0).unwrap();
        let d = f.mass_fraction_below(0.01, 1.0);
        assert!((d - 1e-4).abs() < 1e-18);
        let quad = integrate(|y| y * f.breakage(y, 1.0).unwrap(), 0.0, 0.01, Tolerance::default())
            .unwrap();
        assert!((d - quad).abs() < 1e-16);
    }
}
