//! The fundamental-martingale kernel `g(s, t)` and everything derived from it.
//!
//! `g(·, t)` solves
//!
//! ```text
//! g(s,t) + H d/ds ∫_0^t g(r,t) |r−s|^{2H−1} sign(s−r) dr = 1,   0 < s ≤ t.
//! ```
//!
//! With `g(·, t_j)` piecewise constant on the grid cells and the inner
//! integral evaluated exactly at cell boundaries, the difference quotient in
//! `s` turns the operator into `Δ^{2H−1} ρ_H(i − k)`, the unit-step
//! fractional-Gaussian-noise autocovariance. For `H > 1/2` this is the same
//! matrix as integrating the weakly singular second-kind kernel
//! `H(2H−1)|s−r|^{2H−2}` exactly over pairs of cells. Column `t_j` is the
//! leading `j × j` block of one symmetric Toeplitz system, so all columns
//! come out of a single Levinson recursion in `O(n²)`.
//!
//! Multiplying the system through by `Δ` gives `Cov(Δξ) g = Δ·1`, i.e. `g` is
//! the discrete projection of `W_t` onto the observed increments and
//! `M_{t_j} = Σ g_i(t_j) Δξ_i` is an exact discrete martingale with bracket
//! `Δ Σ_i g_i(t_j)`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{check_len, Error, Result};
use crate::mfbm::{fgn_autocovariance, HurstParam};
use crate::numerics::{derivative_in_measure, MeasureWeights, TimeGrid, M_PRIME_FLOOR};

const CACHE_MAGIC: &[u8; 8] = b"MFOUKRN1";
const CACHE_VERSION: u32 = 1;

/// Lower-triangular table with one row per grid time `t_j`, `j = 1..=n`.
///
/// Row `j` holds `j` values indexed by cell `i < j` (cell `i` is
/// `[t_i, t_{i+1})`). Row `0` is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangularTable {
    n: usize,
    data: Vec<f64>,
}

impl TriangularTable {
    fn with_capacity(n: usize) -> Self {
        Self {
            n,
            data: Vec::with_capacity(n * (n + 1) / 2),
        }
    }

    fn offset(j: usize) -> usize {
        j * (j.saturating_sub(1)) / 2
    }

    /// Number of grid steps.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Values at time `t_j` for cells `0..j`.
    pub fn row(&self, j: usize) -> &[f64] {
        if j == 0 {
            return &[];
        }
        let o = Self::offset(j);
        &self.data[o..o + j]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(j)[i]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Unit-step coefficients of the discretized kernel operator: `(Δ^{2H−1}, ρ_H(d))`.
fn operator_row(grid: &TimeGrid, hurst: HurstParam) -> (f64, Vec<f64>) {
    let scale = grid.dt().powf(2.0 * hurst.value() - 1.0);
    let rho = (0..grid.n_steps())
        .map(|d| fgn_autocovariance(d, hurst.value()))
        .collect();
    (scale, rho)
}

/// Solve for `g(·, t_j)` at every grid time.
pub fn solve_g(grid: &TimeGrid, hurst: HurstParam) -> Result<TriangularTable> {
    let (scale, rho) = operator_row(grid, hurst);
    let r: Vec<f64> = rho
        .iter()
        .enumerate()
        .map(|(d, p)| if d == 0 { 1.0 } else { 0.0 } + scale * p)
        .collect();
    levinson_all_columns(&r)
}

/// Solve `T_j x = 1` for every leading block `T_j` of the symmetric Toeplitz
/// matrix with first row `r`.
pub(crate) fn levinson_all_columns(r: &[f64]) -> Result<TriangularTable> {
    let n = r.len();
    let mut table = TriangularTable::with_capacity(n);
    if n == 0 {
        return Ok(table);
    }
    if !(r[0] > 0.0) {
        return Err(Error::SingularKernel {
            column: 1,
            condition: f64::INFINITY,
        });
    }
    let mut forward = vec![1.0 / r[0]];
    let mut x = vec![1.0 / r[0]];
    let mut condition = 1.0;
    table.data.extend_from_slice(&x);
    for k in 1..n {
        let eps: f64 = (0..k).map(|i| r[k - i] * forward[i]).sum();
        let denom = 1.0 - eps * eps;
        condition /= denom.abs().max(f64::MIN_POSITIVE);
        if !(denom > 1e-14) {
            return Err(Error::SingularKernel {
                column: k + 1,
                condition,
            });
        }
        let next: Vec<f64> = (0..=k)
            .map(|i| {
                let f = if i < k { forward[i] } else { 0.0 };
                let b = if i > 0 { forward[k - i] } else { 0.0 };
                (f - eps * b) / denom
            })
            .collect();
        forward = next;
        let ex: f64 = (0..k).map(|i| r[k - i] * x[i]).sum();
        let coef = 1.0 - ex;
        x.push(0.0);
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += coef * forward[k - i];
        }
        table.data.extend_from_slice(&x);
    }
    Ok(table)
}

/// Bracket `m(t_j) = ∫_0^{t_j} g(s, t_j) ds` and its density `m'` (centered
/// differences, floored).
pub fn bracket(g: &TriangularTable, grid: &TimeGrid) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("kernel table steps", grid.n_steps(), g.n())?;
    let dt = grid.dt();
    let m: Vec<f64> = (0..grid.n_nodes())
        .map(|j| dt * g.row(j).iter().sum::<f64>())
        .collect();
    if let Some(node) = m.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::InvalidKernel { node });
    }
    let m_prime = crate::numerics::centered_derivative(&m, dt)
        .into_iter()
        .map(|x| x.max(M_PRIME_FLOOR))
        .collect();
    Ok((m, m_prime))
}

/// `λ_H = 2H Γ(3−2H) Γ(H+1/2) / Γ(3/2−H)`.
pub fn lambda_h(h: f64) -> Result<f64> {
    use statrs::function::gamma::gamma;
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::Domain(format!("H must lie in (0, 1), got {h}")));
    }
    Ok(2.0 * h * gamma(3.0 - 2.0 * h) * gamma(h + 0.5) / gamma(1.5 - h))
}

/// `ĝ(s_k, t_j) = 1 − d/d<M>_s ∫_0^{t_j} g(r, s) dr` at `s = s_k`, `k < j`.
///
/// For `r > s` the kernel is continued by the left-hand side of its own
/// equation, `g(r, s) = 1 − Δ^{2H−1} Σ_l ρ_H(r − l) g(l, s)`.
pub fn ghat(
    g: &TriangularTable,
    m: &[f64],
    m_prime: &[f64],
    grid: &TimeGrid,
    hurst: HurstParam,
) -> Result<TriangularTable> {
    let n = grid.n_steps();
    check_len("kernel table steps", n, g.n())?;
    check_len("bracket", grid.n_nodes(), m.len())?;
    check_len("bracket density", grid.n_nodes(), m_prime.len())?;
    let dt = grid.dt();
    let two_h = 2.0 * hurst.value();
    let scale = dt.powf(two_h - 1.0);
    // Partial sums Σ_{x=1}^{d} ρ_H(x), telescoped.
    let cum_rho: Vec<f64> = (0..=n)
        .map(|d| {
            let d = d as f64;
            0.5 * ((d + 1.0).powf(two_h) - d.powf(two_h) - 1.0)
        })
        .collect();

    let mut table = TriangularTable::with_capacity(n);
    let mut f = Vec::with_capacity(n + 1);
    for j in 1..=n {
        f.clear();
        for k in 0..j {
            let col = g.row(k);
            let tail: f64 = col
                .iter()
                .enumerate()
                .map(|(l, gl)| gl * (cum_rho[j - 1 - l] - cum_rho[k - 1 - l]))
                .sum();
            let extension = (j - k) as f64 - scale * tail;
            f.push(m[k] + dt * extension);
        }
        f.push(m[j]);
        let d = derivative_in_measure(&f, dt, &m_prime[..=j])?;
        table.data.extend(d[..j].iter().map(|x| 1.0 - x));
    }
    Ok(table)
}

/// Kernel tables on one grid: `g`, `<M>`, `m'`, `ψ(t,t)` and optionally `ĝ`.
#[derive(Debug, Clone)]
pub struct KernelBundle {
    pub grid: TimeGrid,
    pub hurst: HurstParam,
    g: TriangularTable,
    /// `<M>_{t_j}`.
    pub m: Vec<f64>,
    /// `d<M>_t/dt` at the nodes.
    pub m_prime: Vec<f64>,
    /// `ψ(t_j, t_j) = 1 / m'(t_j)`.
    pub psi_diag: Vec<f64>,
    ghat: Option<TriangularTable>,
}

impl KernelBundle {
    pub fn build(grid: &TimeGrid, hurst: HurstParam) -> Result<Self> {
        let g = solve_g(grid, hurst)?;
        Self::from_table(grid, hurst, g)
    }

    fn from_table(grid: &TimeGrid, hurst: HurstParam, g: TriangularTable) -> Result<Self> {
        let (m, m_prime) = bracket(&g, grid)?;
        Ok(Self::from_parts(grid, hurst, g, m, m_prime))
    }

    fn from_parts(
        grid: &TimeGrid,
        hurst: HurstParam,
        g: TriangularTable,
        m: Vec<f64>,
        m_prime: Vec<f64>,
    ) -> Self {
        let psi_diag = m_prime.iter().map(|mp| 1.0 / mp).collect();
        Self {
            grid: *grid,
            hurst,
            g,
            m,
            m_prime,
            psi_diag,
            ghat: None,
        }
    }

    pub fn g(&self) -> &TriangularTable {
        &self.g
    }

    /// `ĝ` table, computing it on first use.
    pub fn ghat(&mut self) -> Result<&TriangularTable> {
        if self.ghat.is_none() {
            let table = ghat(&self.g, &self.m, &self.m_prime, &self.grid, self.hurst)?;
            self.ghat = Some(table);
        }
        Ok(self.ghat.as_ref().expect("just computed"))
    }

    pub fn ghat_if_computed(&self) -> Option<&TriangularTable> {
        self.ghat.as_ref()
    }

    /// Bracket increments `Δm_j = m(t_{j+1}) − m(t_j)`.
    pub fn dm(&self) -> Vec<f64> {
        self.m.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn weights(&self) -> MeasureWeights {
        MeasureWeights::from_bracket(&self.m)
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }

    /// Pointwise residual of the integro-differential equation for column
    /// `t_j`, evaluated at the cell midpoints with the exact derivative of the
    /// inner integral of the piecewise-constant `g(·, t_j)`.
    pub fn plug_back_residual(&self, j: usize) -> Vec<f64> {
        let h = self.hurst.value();
        let dt = self.grid.dt();
        let power = |x: f64| x.abs().powf(2.0 * h - 1.0) * x.signum();
        let row = self.g.row(j);
        (0..j)
            .map(|i| {
                let s = (i as f64 + 0.5) * dt;
                let inner: f64 = row
                    .iter()
                    .enumerate()
                    .map(|(k, g)| {
                        let a = k as f64 * dt;
                        g * (power(s - a) - power(s - a - dt))
                    })
                    .sum();
                row[i] + h * inner - 1.0
            })
            .collect()
    }

    /// `g(t_j, t_j)`, extrapolated from the cell averages of the last two
    /// cells of row `j` with the boundary profile `g(t−x, t) ≈ g(t,t) + β x^{2H−1}`.
    /// For `H < 1/2` that profile is singular and the last cell is returned.
    pub fn diagonal_g(&self, j: usize) -> Option<f64> {
        let row = self.g.row(j);
        let h = self.hurst.value();
        if j < 2 || h < 0.5 {
            return row.last().copied();
        }
        let (last, prev) = (row[j - 1], row[j - 2]);
        let c1 = 1.0 / (2.0 * h);
        let c2 = (2f64.powf(2.0 * h) - 1.0) / (2.0 * h);
        let beta = (last - prev) / (c1 - c2);
        Some(last - beta * c1)
    }

    /// Content hash identifying `(H, T, n)` and the table format.
    pub fn cache_key(grid: &TimeGrid, hurst: HurstParam) -> String {
        let key = format!(
            "mfou-kernel|v{CACHE_VERSION}|{:016x}|{:016x}|{}",
            hurst.value().to_bits(),
            grid.horizon().to_bits(),
            grid.n_steps()
        );
        let digest = Sha256::digest(key.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn cache_path(dir: &Path, grid: &TimeGrid, hurst: HurstParam) -> PathBuf {
        dir.join(format!("kernel-{}.bin", Self::cache_key(grid, hurst)))
    }

    /// Load from `dir` when a matching table exists, otherwise build and store it.
    pub fn load_or_build(grid: &TimeGrid, hurst: HurstParam, dir: &Path) -> Result<Self> {
        let path = Self::cache_path(dir, grid, hurst);
        if path.exists() {
            if let Ok(bundle) = Self::read_cache(&path, grid, hurst) {
                return Ok(bundle);
            }
        }
        let bundle = Self::build(grid, hurst)?;
        fs::create_dir_all(dir)?;
        bundle.write_cache(&path)?;
        Ok(bundle)
    }

    /// Binary layout (little endian): magic `MFOUKRN1`, `u32` version,
    /// `f64` H, `f64` T, `u64` n, then `m` and `m'` (`n+1` values each) and
    /// the packed `g` rows (`n(n+1)/2` values).
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(8 * (self.g.data.len() + 2 * self.m.len() + 8));
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.hurst.value().to_le_bytes());
        buf.extend_from_slice(&self.grid.horizon().to_le_bytes());
        buf.extend_from_slice(&(self.grid.n_steps() as u64).to_le_bytes());
        for x in self.m.iter().chain(&self.m_prime).chain(&self.g.data) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        let tmp = path.with_extension("tmp");
        fs::File::create(&tmp)?.write_all(&buf)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn read_cache(path: &Path, grid: &TimeGrid, hurst: HurstParam) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: path.display().to_string(),
            reason: reason.to_string(),
        };
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 36 || &bytes[..8] != CACHE_MAGIC {
            return Err(bad("missing header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        if u32_at(8) != CACHE_VERSION {
            return Err(bad("format version mismatch"));
        }
        let n = u64::from_le_bytes(bytes[28..36].try_into().unwrap()) as usize;
        if f64_at(12).to_bits() != hurst.value().to_bits()
            || f64_at(20).to_bits() != grid.horizon().to_bits()
            || n != grid.n_steps()
        {
            return Err(bad("parameters do not match request"));
        }
        let n_nodes = n + 1;
        let n_table = n * (n + 1) / 2;
        if bytes.len() != 36 + 8 * (2 * n_nodes + n_table) {
            return Err(bad("truncated body"));
        }
        let values: Vec<f64> = bytes[36..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let m = values[..n_nodes].to_vec();
        let m_prime = values[n_nodes..2 * n_nodes].to_vec();
        let g = TriangularTable {
            n,
            data: values[2 * n_nodes..].to_vec(),
        };
        Ok(Self::from_parts(grid, hurst, g, m, m_prime))
    }
}

/// Cache directory: `$MFOU_CACHE_DIR`, else `<tmp>/mfou-cache`.
pub fn default_cache_dir() -> PathBuf {
    std::env::var_os("MFOU_CACHE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("mfou-cache"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(x: f64) -> HurstParam {
        HurstParam::new(x).unwrap()
    }

    #[test]
    fn levinson_matches_dense_solve() {
        let grid = TimeGrid::new(3.0, 40).unwrap();
        for hv in [0.3, 0.7] {
            let table = solve_g(&grid, h(hv)).unwrap();
            let (scale, rho) = operator_row(&grid, h(hv));
            for j in [1, 2, 17, 40] {
                let x = table.row(j);
                for i in 0..j {
                    let lhs: f64 = (0..j)
                        .map(|k| {
                            let d = i.abs_diff(k);
                            (if d == 0 { 1.0 } else { 0.0 } + scale * rho[d]) * x[k]
                        })
                        .sum();
                    assert!((lhs - 1.0).abs() < 1e-10, "H={hv} j={j} i={i}");
                }
            }
        }
    }

    #[test]
    fn two_cell_system_by_hand() {
        // T=1, n=2, H=0.7: r0 = 1 + Δ^{0.4}, r1 = Δ^{0.4} ρ(1); x solves
        // [[r0, r1],[r1, r0]] x = 1, so x0 = x1 = 1/(r0 + r1).
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let table = solve_g(&grid, h(0.7)).unwrap();
        let s = 0.5f64.powf(0.4);
        let rho1 = 0.5 * (2f64.powf(1.4) - 2.0);
        let r0 = 1.0 + s;
        let r1 = s * rho1;
        assert!((table.get(0, 1) - 1.0 / r0).abs() < 1e-12);
        let x = 1.0 / (r0 + r1);
        assert!((table.get(0, 2) - x).abs() < 1e-12);
        assert!((table.get(1, 2) - x).abs() < 1e-12);
    }

    #[test]
    fn bracket_starts_at_zero_and_increases() {
        let grid = TimeGrid::new(5.0, 100).unwrap();
        for hv in [0.3, 0.7] {
            let k = KernelBundle::build(&grid, h(hv)).unwrap();
            assert_eq!(k.m[0], 0.0);
            assert!(k.m.windows(2).all(|w| w[1] > w[0]));
            for (p, mp) in k.psi_diag.iter().zip(&k.m_prime) {
                assert!((p * mp - 1.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn long_memory_kernel_is_damped() {
        let grid = TimeGrid::new(2.0, 200).unwrap();
        let table = solve_g(&grid, h(0.7)).unwrap();
        assert!(table.as_slice().iter().all(|&x| x > 0.0 && x <= 1.0));
    }

    #[test]
    fn invalid_kernel_detected() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let table = TriangularTable {
            n: 2,
            data: vec![1.0, -5.0, -5.0],
        };
        assert!(matches!(
            bracket(&table, &grid),
            Err(Error::InvalidKernel { node: 1 })
        ));
    }

    #[test]
    fn singular_system_reported() {
        let r = vec![1.0, 1.0, 0.5];
        assert!(matches!(
            levinson_all_columns(&r),
            Err(Error::SingularKernel { column: 2, .. })
        ));
    }

    #[test]
    fn lambda_half_is_one() {
        assert!((lambda_h(0.5).unwrap() - 1.0).abs() < 1e-12);
        assert!((lambda_h(0.7).unwrap() - 0.9865).abs() < 1e-3);
        assert!(lambda_h(1.0).is_err());
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = TimeGrid::new(2.0, 30).unwrap();
        let built = KernelBundle::load_or_build(&grid, h(0.7), dir.path()).unwrap();
        let path = KernelBundle::cache_path(dir.path(), &grid, h(0.7));
        assert!(path.exists());
        let loaded = KernelBundle::read_cache(&path, &grid, h(0.7)).unwrap();
        assert_eq!(built.m, loaded.m);
        assert_eq!(built.g(), loaded.g());
        let other = TimeGrid::new(2.0, 31).unwrap();
        assert!(KernelBundle::read_cache(&path, &other, h(0.7)).is_err());
    }

    #[test]
    fn plug_back_residual_is_small() {
        let k = KernelBundle::build(&TimeGrid::new(1.0, 200).unwrap(), h(0.7)).unwrap();
        let worst = (1..=200)
            .flat_map(|j| k.plug_back_residual(j))
            .fold(0.0f64, |a, r| a.max(r.abs()));
        assert!(worst < 1e-2, "{worst}");
    }

    #[test]
    fn squared_diagonal_matches_bracket_density() {
        let k = KernelBundle::build(&TimeGrid::new(10.0, 500).unwrap(), h(0.7)).unwrap();
        for j in (50..=500).step_by(25) {
            let d = k.diagonal_g(j).unwrap();
            let rel = (d * d / k.m_prime[j] - 1.0).abs();
            assert!(rel < 0.05, "j={j} rel={rel}");
        }
        assert_eq!(k.diagonal_g(0), None);
    }
}
