//! Complete benchmark datasets: samplers feeding solvers, written as NODF.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::dataio::{Component, Metadata, NodfFile, Role};
use crate::error::{Error, Result};
use crate::fieldgen::{
    boundary_grf_mix, darcy_coefficient, fourier_boundary_positive, fourier_ic_1d, fourier_trace, grf_periodic_2d,
    laplace_mad_sample, yukawa_boundary_3d, SineNet,
};
use crate::numerics::{bilinear_downsample, spectral_lowpass_downsample};
use crate::rng::Rng;
use crate::solvers::ns::{ns_rollout, NsConfig};
use crate::solvers::pb_grid::pb_residual;
use crate::solvers::{
    assemble_laplacian, darcy_solve, etdrk4_burgers, gummel_pnp, pnp_centered_residual, solve_pb_fem, solve_pb_grid,
    BurgersConfig, FemSystem, Grid, HomotopyConfig, Mesh, PnpConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BenchmarkId {
    Laplace,
    Burgers,
    DarcySmooth,
    PbSquare,
    PbSource,
    PbFem,
    Pb3d,
    Ns,
    Pnp,
}

impl BenchmarkId {
    pub const ALL: [BenchmarkId; 9] = [
        BenchmarkId::Laplace,
        BenchmarkId::Burgers,
        BenchmarkId::DarcySmooth,
        BenchmarkId::PbSquare,
        BenchmarkId::PbSource,
        BenchmarkId::PbFem,
        BenchmarkId::Pb3d,
        BenchmarkId::Ns,
        BenchmarkId::Pnp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchmarkId::Laplace => "laplace",
            BenchmarkId::Burgers => "burgers",
            BenchmarkId::DarcySmooth => "darcy_smooth",
            BenchmarkId::PbSquare => "pb_square",
            BenchmarkId::PbSource => "pb_source",
            BenchmarkId::PbFem => "pb_fem",
            BenchmarkId::Pb3d => "pb_3d",
            BenchmarkId::Ns => "ns",
            BenchmarkId::Pnp => "pnp",
        }
    }

    /// Input component names in storage order.
    pub fn inputs(self) -> &'static [&'static str] {
        match self {
            BenchmarkId::Burgers => &["u0"],
            BenchmarkId::DarcySmooth => &["a"],
            BenchmarkId::PbSource => &["g", "f"],
            BenchmarkId::Ns => &["w0"],
            BenchmarkId::Pnp => &["g_phi", "g_cp", "g_cm"],
            _ => &["g"],
        }
    }

    /// Output field names in storage order.
    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            BenchmarkId::Ns => &["w"],
            BenchmarkId::Pnp => &["phi", "c_plus", "c_minus"],
            _ => &["u"],
        }
    }
}

impl fmt::Display for BenchmarkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchmarkId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BenchmarkId::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::config(format!("unknown benchmark '{s}'")))
    }
}

/// Everything that determines a dataset. Fields that a benchmark does not
/// use keep their defaults and are still echoed into the metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkSpec {
    pub id: BenchmarkId,
    pub n_samples: usize,
    pub seed: u64,
    /// Stored grid resolution: nodes per side (Burgers: spatial points).
    pub res: usize,
    /// Solver resolution before downsampling (Burgers, Darcy).
    pub fine_res: usize,
    /// PB nonlinearity coefficient.
    pub k: f64,
    /// Mesh source for `pb_fem`.
    pub mesh: String,
    pub t_final: f64,
    /// Recorded time snapshots.
    pub n_t: usize,
    pub dt: f64,
    pub nu: f64,
}

pub const DEFAULT_SAMPLES: usize = 2000;
pub const LAPLACE_SOURCES: usize = 10;
pub const LAPLACE_EPS: f64 = 1e-3;
pub const YUKAWA_SOURCES: usize = 8;
pub const TRACE_FLOOR: f64 = 0.1;
pub const MAX_DISCARD_FRACTION: f64 = 0.2;
const MAX_ATTEMPTS: u64 = 8;

impl BenchmarkSpec {
    pub fn new(id: BenchmarkId, n_samples: usize, seed: u64) -> Self {
        let mut s = BenchmarkSpec {
            id,
            n_samples,
            seed,
            res: 0,
            fine_res: 0,
            k: 1.0,
            mesh: "builtin:star:64:12".into(),
            t_final: 0.0,
            n_t: 0,
            dt: 0.0,
            nu: 0.0,
        };
        let (res, fine) = match id {
            BenchmarkId::Laplace => (51, 51),
            BenchmarkId::Burgers => (64, 512),
            BenchmarkId::DarcySmooth => (129, 241),
            BenchmarkId::PbSquare | BenchmarkId::PbSource => (101, 101),
            BenchmarkId::PbFem => (0, 0),
            BenchmarkId::Pb3d => (33, 33),
            BenchmarkId::Ns => (64, 64),
            BenchmarkId::Pnp => (129, 129),
        };
        s.res = res;
        s.fine_res = fine;
        match id {
            BenchmarkId::Burgers => {
                s.t_final = 1.0;
                s.n_t = 100;
                s.dt = 1e-4;
                s.nu = 0.01;
            }
            BenchmarkId::Ns => {
                s.t_final = 50.0;
                s.n_t = 50;
                s.dt = 1e-4;
                s.nu = 1e-3;
            }
            _ => {}
        }
        s
    }

    /// Overrides the stored resolution, keeping the solver resolution in step
    /// where the two coincide.
    pub fn with_res(mut self, res: usize) -> Self {
        if self.fine_res == self.res {
            self.fine_res = res;
        }
        self.res = res;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.n_samples == 0 {
            return bad("n_samples must be at least 1".into());
        }
        match self.id {
            BenchmarkId::Burgers => {
                if !self.fine_res.is_power_of_two() || !self.res.is_power_of_two() || self.res > self.fine_res {
                    return bad(format!(
                        "Burgers grids {} -> {} must be powers of two",
                        self.fine_res, self.res
                    ));
                }
                if self.n_t == 0 || !(self.nu > 0.0) || !(self.dt > 0.0) || !(self.t_final > 0.0) {
                    return bad("Burgers needs n_t, nu, dt and t_final positive".into());
                }
            }
            BenchmarkId::Ns => {
                if !self.res.is_power_of_two() || self.n_t == 0 || !(self.dt > 0.0) || !(self.t_final > 0.0) {
                    return bad("Navier-Stokes needs a power-of-two grid and positive times".into());
                }
            }
            BenchmarkId::DarcySmooth => {
                if self.res < 3 || self.fine_res < self.res {
                    return bad(format!("Darcy grids {} -> {} invalid", self.fine_res, self.res));
                }
            }
            BenchmarkId::PbFem => {}
            _ => {
                if self.res < 3 {
                    return bad(format!("resolution {} too small", self.res));
                }
            }
        }
        if matches!(
            self.id,
            BenchmarkId::PbSquare | BenchmarkId::PbSource | BenchmarkId::PbFem | BenchmarkId::Pb3d
        ) && !(self.k >= 0.0)
        {
            return bad(format!("k = {} must be >= 0", self.k));
        }
        Ok(())
    }

    pub fn write_metadata(&self, m: &mut Metadata) {
        m.set("benchmark", self.id);
        m.set("n_samples", self.n_samples);
        m.set("seed", self.seed);
        m.set("res", self.res);
        m.set("fine_res", self.fine_res);
        m.set("k", format!("{:?}", self.k));
        m.set("mesh", &self.mesh);
        m.set("t_final", format!("{:?}", self.t_final));
        m.set("n_t", self.n_t);
        m.set("dt", format!("{:?}", self.dt));
        m.set("nu", format!("{:?}", self.nu));
    }

    pub fn from_metadata(m: &Metadata) -> Result<Self> {
        Ok(BenchmarkSpec {
            id: m.require("benchmark")?.parse()?,
            n_samples: m.parse("n_samples")?,
            seed: m.parse("seed")?,
            res: m.parse("res")?,
            fine_res: m.parse("fine_res")?,
            k: m.parse("k")?,
            mesh: m.require("mesh")?.to_string(),
            t_final: m.parse("t_final")?,
            n_t: m.parse("n_t")?,
            dt: m.parse("dt")?,
            nu: m.parse("nu")?,
        })
    }

    fn burgers_config(&self) -> BurgersConfig {
        BurgersConfig {
            nu: self.nu,
            dt: self.dt,
            t_final: self.t_final,
            n_snapshots: self.n_t,
            nonlinear: true,
        }
    }

    fn ns_config(&self) -> NsConfig {
        NsConfig {
            nu: self.nu,
            dt: self.dt,
            t_final: self.t_final,
            record_every: self.t_final / self.n_t as f64,
            forcing: true,
        }
    }
}

/// Inputs then outputs of one sample, in component order.
struct Sample {
    fields: Vec<Vec<f64>>,
}

enum Geometry {
    Grid(Grid),
    Mesh(Mesh),
    None,
}

fn geometry(spec: &BenchmarkSpec) -> Result<Geometry> {
    Ok(match spec.id {
        BenchmarkId::Burgers | BenchmarkId::Ns => Geometry::None,
        BenchmarkId::PbFem => Geometry::Mesh(Mesh::from_source(&spec.mesh)?),
        BenchmarkId::Pb3d => Geometry::Grid(Grid::cube(spec.res)?),
        BenchmarkId::DarcySmooth => Geometry::Grid(Grid::square(spec.fine_res)?),
        _ => Geometry::Grid(Grid::square(spec.res)?),
    })
}

fn grid_of(geo: &Geometry) -> &Grid {
    match geo {
        Geometry::Grid(g) => g,
        _ => unreachable!("benchmark uses a grid"),
    }
}

fn sample_one(spec: &BenchmarkSpec, geo: &Geometry, rng: &mut Rng) -> Result<Sample> {
    let homotopy = HomotopyConfig::default();
    let fields = match spec.id {
        BenchmarkId::Laplace => {
            let (g, u) = laplace_mad_sample(grid_of(geo), LAPLACE_SOURCES, LAPLACE_EPS, rng)?;
            vec![g, u]
        }
        BenchmarkId::Burgers => {
            let u0 = fourier_ic_1d(8, 2.0, spec.fine_res, rng)?;
            let traj = etdrk4_burgers(&u0, &spec.burgers_config())?;
            let coarse: Vec<Vec<f64>> = traj
                .iter()
                .map(|s| spectral_lowpass_downsample(s, spec.res))
                .collect::<Result<_>>()?;
            let mut u = Vec::with_capacity(spec.res * spec.n_t);
            for x in 0..spec.res {
                u.extend(coarse.iter().map(|s| s[x]));
            }
            vec![spectral_lowpass_downsample(&u0, spec.res)?, u]
        }
        BenchmarkId::DarcySmooth => {
            let grid = grid_of(geo);
            let a = darcy_coefficient(&SineNet::sample(rng).field(grid));
            let u = darcy_solve(&a, spec.fine_res)?;
            vec![
                bilinear_downsample(&a, spec.fine_res, spec.res)?,
                bilinear_downsample(&u, spec.fine_res, spec.res)?,
            ]
        }
        BenchmarkId::PbSquare => {
            let grid = grid_of(geo);
            let g = boundary_grf_mix(grid.n_boundary(), rng)?;
            let sol = solve_pb_grid(grid, spec.k, None, &g, &homotopy)?;
            vec![g, sol.u]
        }
        BenchmarkId::PbSource => {
            let grid = grid_of(geo);
            let net = SineNet::sample(rng);
            let (mut u, mut f) = (Vec::with_capacity(grid.n_nodes()), Vec::with_capacity(grid.n_nodes()));
            for i in 0..grid.n_nodes() {
                let p = grid.coords(i);
                let (v, lap) = net.eval_with_laplacian(p[0], p[1]);
                u.push(v);
                f.push(lap - spec.k * v.sinh());
            }
            vec![grid.gather_boundary(&u), f, u]
        }
        BenchmarkId::PbFem => {
            let Geometry::Mesh(mesh) = geo else {
                unreachable!("pb_fem uses a mesh")
            };
            let mut g = Vec::with_capacity(mesh.n_boundary());
            for lp in &mesh.boundary_loops {
                g.extend(boundary_grf_mix(lp.len(), rng)?);
            }
            let sol = solve_pb_fem(mesh, spec.k, &g, &homotopy)?;
            vec![g, sol.u]
        }
        BenchmarkId::Pb3d => {
            let grid = grid_of(geo);
            let g = yukawa_boundary_3d(grid, YUKAWA_SOURCES, rng)?;
            let sol = solve_pb_grid(grid, spec.k, None, &g, &homotopy)?;
            vec![g, sol.u]
        }
        BenchmarkId::Ns => {
            let n = spec.res;
            let w0 = grf_periodic_2d(n, 2.5, 7.0, rng)?;
            let snaps = ns_rollout(&w0, n, &spec.ns_config())?;
            let mut w = Vec::with_capacity(n * n * spec.n_t);
            for p in 0..n * n {
                w.extend(snaps.iter().map(|s| s[p]));
            }
            vec![w0, w]
        }
        BenchmarkId::Pnp => {
            let nb = grid_of(geo).n_boundary();
            let g_phi = fourier_trace(nb, rng)?;
            let g_cp = fourier_boundary_positive(nb, TRACE_FLOOR, rng)?;
            let g_cm = fourier_boundary_positive(nb, TRACE_FLOOR, rng)?;
            let sol = gummel_pnp(spec.res, &g_phi, &g_cp, &g_cm, &PnpConfig::default())?;
            vec![g_phi, g_cp, g_cm, sol.phi, sol.c_plus, sol.c_minus]
        }
    };
    if fields.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Generation("non-finite sample".into()));
    }
    Ok(Sample { fields })
}

/// Stream for attempt `a` of sample `i`: attempt 0 uses stream `i`.
fn stream_id(i: usize, attempt: u64) -> u64 {
    (attempt << 40) | i as u64
}

/// Per-sample dims (without the leading sample axis) of each component.
fn component_dims(spec: &BenchmarkSpec, geo: &Geometry) -> Vec<Vec<usize>> {
    let grid_len = |g: &Grid| g.n_nodes();
    match spec.id {
        BenchmarkId::Burgers => vec![vec![spec.res], vec![spec.res, spec.n_t]],
        BenchmarkId::Ns => vec![vec![spec.res * spec.res], vec![spec.res * spec.res, spec.n_t]],
        BenchmarkId::DarcySmooth => vec![vec![spec.res * spec.res]; 2],
        BenchmarkId::PbFem => {
            let Geometry::Mesh(m) = geo else {
                unreachable!("pb_fem uses a mesh")
            };
            vec![vec![m.n_boundary()], vec![m.n_nodes()]]
        }
        BenchmarkId::PbSource => {
            let g = grid_of(geo);
            vec![vec![g.n_boundary()], vec![grid_len(g)], vec![grid_len(g)]]
        }
        BenchmarkId::Pnp => {
            let g = grid_of(geo);
            let mut d = vec![vec![g.n_boundary()]; 3];
            d.extend(vec![vec![grid_len(g)]; 3]);
            d
        }
        _ => {
            let g = grid_of(geo);
            vec![vec![g.n_boundary()], vec![grid_len(g)]]
        }
    }
}

/// Generates the dataset. Samples are produced in parallel and assembled in
/// index order.
pub fn generate(spec: &BenchmarkSpec) -> Result<NodfFile> {
    spec.validate()?;
    let geo = geometry(spec)?;
    let results: Vec<Result<(Sample, u64)>> = (0..spec.n_samples)
        .into_par_iter()
        .map(|i| {
            let mut last = None;
            for attempt in 0..MAX_ATTEMPTS {
                let mut rng = Rng::new(spec.seed, stream_id(i, attempt));
                match sample_one(spec, &geo, &mut rng) {
                    Ok(s) => return Ok((s, attempt)),
                    Err(e @ (Error::Mesh(_) | Error::Config(_) | Error::Dimension(_))) => return Err(e),
                    Err(e) => last = Some(e),
                }
            }
            Err(Error::Generation(format!(
                "sample {i} failed {MAX_ATTEMPTS} times: {}",
                last.map(|e| e.to_string()).unwrap_or_default()
            )))
        })
        .collect();
    let mut samples = Vec::with_capacity(spec.n_samples);
    let mut discards = 0u64;
    for r in results {
        let (s, d) = r?;
        discards += d;
        samples.push(s);
    }
    if discards as f64 > MAX_DISCARD_FRACTION * spec.n_samples as f64 {
        return Err(Error::Generation(format!(
            "{discards} discarded draws for {} samples exceeds {:.0}%",
            spec.n_samples,
            100.0 * MAX_DISCARD_FRACTION
        )));
    }

    let mut file = NodfFile::new();
    spec.write_metadata(&mut file.metadata);
    file.metadata.set("discards", discards);
    if spec.id == BenchmarkId::PbSource {
        file.metadata.set("forcing_sign", -1);
    }
    let created = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    file.metadata.set(crate::dataio::TIMESTAMP_KEY, created);

    let names: Vec<(&str, Role)> = spec
        .id
        .inputs()
        .iter()
        .map(|n| (*n, Role::Input))
        .chain(spec.id.outputs().iter().map(|n| (*n, Role::Output)))
        .collect();
    for (c, ((name, role), dims)) in names.into_iter().zip(component_dims(spec, &geo)).enumerate() {
        let mut data = Vec::with_capacity(spec.n_samples * dims.iter().product::<usize>());
        for s in &samples {
            data.extend_from_slice(&s.fields[c]);
        }
        let mut full = vec![spec.n_samples];
        full.extend(dims);
        file.push(Component::f64(name, role, &full, data));
    }
    if let Geometry::Mesh(m) = &geo {
        file.push(Component::bytes("mesh", m.to_text().into_bytes()));
    }
    Ok(file)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub benchmark: BenchmarkId,
    pub checked: Vec<usize>,
    /// Largest residual (or invariant violation) over the checked samples.
    pub max_residual: f64,
    pub threshold: f64,
}

/// Threshold applied by `verify_dataset` to each benchmark's residual.
pub fn verify_threshold(spec: &BenchmarkSpec) -> f64 {
    match spec.id {
        BenchmarkId::Laplace => 1.0,
        BenchmarkId::Burgers | BenchmarkId::Ns => 1e-10,
        BenchmarkId::DarcySmooth => 0.5,
        BenchmarkId::PbSource => {
            let h = 1.0 / (spec.res - 1) as f64;
            1e3 * h * h
        }
        _ => 1e-6,
    }
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Discrete 5-point Laplacian of a 2-D nodal field with stencil spacing
/// `s` grid steps, at nodes at least `s` steps from the boundary.
pub fn laplacian_residual(u: &[f64], n: usize, s: usize) -> Vec<(usize, f64)> {
    let h = s as f64 / (n - 1) as f64;
    let mut out = Vec::new();
    for r in s..n - s {
        for c in s..n - s {
            let i = r * n + c;
            let v = (u[i + s] + u[i - s] + u[i + s * n] + u[i - s * n] - 4.0 * u[i]) / (h * h);
            out.push((i, v));
        }
    }
    out
}

/// `max|Δ_{2h} u| / max|Δ_h u|` over nodes at least two steps inside.
pub fn harmonicity_ratio(u: &[f64], n: usize) -> f64 {
    let inside = |i: usize| {
        let (r, c) = (i / n, i % n);
        r >= 2 && c >= 2 && r + 2 < n && c + 2 < n
    };
    let fine = max_abs(
        laplacian_residual(u, n, 1)
            .into_iter()
            .filter(|p| inside(p.0))
            .map(|p| p.1),
    );
    let coarse = max_abs(laplacian_residual(u, n, 2).into_iter().map(|p| p.1));
    if fine == 0.0 {
        4.0
    } else {
        coarse / fine
    }
}

/// Median of a non-empty list.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Residual measure of sample `i`; larger is worse.
fn sample_residual(spec: &BenchmarkSpec, file: &NodfFile, ctx: &VerifyContext, i: usize) -> Result<f64> {
    let field = |name: &str| -> Result<&[f64]> { file.component(name)?.sample(i) };
    Ok(match spec.id {
        BenchmarkId::Laplace => {
            // Ratio of the 2h- to the h-stencil residual; the dataset-level
            // median is compared against 4 by `verify_dataset`.
            let grid = Grid::square(spec.res)?;
            let u = field("u")?;
            let g = field("g")?;
            let mismatch = max_abs(grid.gather_boundary(u).iter().zip(g).map(|(a, b)| a - b));
            let peak = max_abs(u.iter().copied());
            if mismatch > 0.0 || (peak - 1.0).abs() > 1e-12 {
                return Ok(f64::INFINITY);
            }
            harmonicity_ratio(u, spec.res)
        }
        BenchmarkId::Burgers => {
            let u0 = field("u0")?;
            let u = field("u")?;
            let (nx, nt) = (spec.res, spec.n_t);
            let m0 = u0.iter().sum::<f64>() / nx as f64;
            max_abs((0..nt).map(|t| (0..nx).map(|x| u[x * nt + t]).sum::<f64>() / nx as f64 - m0))
        }
        BenchmarkId::Ns => {
            let w = field("w")?;
            let (np, nt) = (spec.res * spec.res, spec.n_t);
            if w.iter().any(|v| !v.is_finite()) {
                return Ok(f64::INFINITY);
            }
            max_abs((0..nt).map(|t| (0..np).map(|p| w[p * nt + t]).sum::<f64>() / np as f64))
        }
        BenchmarkId::DarcySmooth => {
            let a = field("a")?;
            let u = field("u")?;
            let n = spec.res;
            let grid = Grid::square(n)?;
            if a.iter().any(|&v| !(v > 0.1)) || grid.boundary_nodes().iter().any(|&b| u[b] != 0.0) {
                return Ok(f64::INFINITY);
            }
            let inv_h2 = ((n - 1) * (n - 1)) as f64;
            max_abs(grid.interior_nodes().into_iter().map(|i| {
                let flux: f64 = grid
                    .neighbours(i)
                    .map(|j| 0.5 * (a[i] + a[j]) * (u[i] - u[j]) * inv_h2)
                    .sum();
                flux - 1.0
            }))
        }
        BenchmarkId::PbSquare | BenchmarkId::Pb3d => {
            let lap = ctx.laplacian.as_ref().expect("grid benchmark");
            let u = field("u")?;
            let g = field("g")?;
            let bmis = max_abs(lap.grid.gather_boundary(u).iter().zip(g).map(|(a, b)| a - b));
            bmis.max(max_abs(pb_residual(lap, spec.k, None, u)))
        }
        BenchmarkId::PbSource => {
            let lap = ctx.laplacian.as_ref().expect("grid benchmark");
            let u = field("u")?;
            let f = field("f")?;
            let g = field("g")?;
            let bmis = max_abs(lap.grid.gather_boundary(u).iter().zip(g).map(|(a, b)| a - b));
            let neg: Vec<f64> = f.iter().map(|v| -v).collect();
            bmis.max(max_abs(pb_residual(lap, spec.k, Some(&neg), u)))
        }
        BenchmarkId::PbFem => {
            let sys = ctx.fem.as_ref().expect("mesh benchmark");
            let mesh = ctx.mesh.as_ref().expect("mesh benchmark");
            let u = field("u")?;
            let g = field("g")?;
            let bmis = max_abs(mesh.boundary_nodes().iter().zip(g).map(|(&b, v)| u[b] - v));
            bmis.max(max_abs(sys.residual(spec.k, u)))
        }
        BenchmarkId::Pnp => {
            let (phi, cp, cm) = (field("phi")?, field("c_plus")?, field("c_minus")?);
            if cp.iter().chain(cm).any(|&v| !(v > 0.0)) {
                return Ok(f64::INFINITY);
            }
            let grid = Grid::square(spec.res)?;
            let bmis = max_abs(
                [("g_phi", phi), ("g_cp", cp), ("g_cm", cm)]
                    .iter()
                    .map(|(name, fld)| -> Result<f64> {
                        let g = field(name)?;
                        Ok(max_abs(grid.gather_boundary(fld).iter().zip(g).map(|(a, b)| a - b)))
                    })
                    .collect::<Result<Vec<f64>>>()?,
            );
            let r = pnp_centered_residual(spec.res, phi, cp, cm)?;
            bmis.max(r[0]).max(r[1]).max(r[2])
        }
    })
}

struct VerifyContext {
    laplacian: Option<crate::solvers::Laplacian>,
    mesh: Option<Mesh>,
    fem: Option<FemSystem>,
}

/// Re-checks the governing residual (or conservation law) on `n_check`
/// samples drawn deterministically from the file's seed.
pub fn verify_dataset(file: &NodfFile, n_check: usize) -> Result<VerifyReport> {
    let spec = BenchmarkSpec::from_metadata(&file.metadata)?;
    let n = file.n_samples().unwrap_or(0);
    if n != spec.n_samples {
        return Err(Error::format(format!(
            "metadata says {} samples, file holds {n}",
            spec.n_samples
        )));
    }
    let mut ctx = VerifyContext {
        laplacian: None,
        mesh: None,
        fem: None,
    };
    match spec.id {
        BenchmarkId::PbSquare | BenchmarkId::PbSource => {
            ctx.laplacian = Some(assemble_laplacian(&Grid::square(spec.res)?)?)
        }
        BenchmarkId::Pb3d => ctx.laplacian = Some(assemble_laplacian(&Grid::cube(spec.res)?)?),
        BenchmarkId::PbFem => {
            let text = std::str::from_utf8(file.component("mesh")?.as_bytes()?)
                .map_err(|_| Error::format("mesh blob is not UTF-8"))?;
            let mesh = Mesh::parse(text)?;
            ctx.fem = Some(FemSystem::new(&mesh)?);
            ctx.mesh = Some(mesh);
        }
        _ => {}
    }
    let mut idx: Vec<usize> = (0..n).collect();
    Rng::new(spec.seed, u64::MAX).shuffle(&mut idx);
    idx.truncate(n_check.min(n));
    idx.sort_unstable();

    let threshold = verify_threshold(&spec);
    let mut residuals: Vec<f64> = idx
        .par_iter()
        .map(|&i| sample_residual(&spec, file, &ctx, i))
        .collect::<Result<_>>()?;
    if spec.id == BenchmarkId::Laplace {
        let finite: Vec<f64> = residuals.iter().copied().filter(|r| r.is_finite()).collect();
        let spread = if finite.is_empty() {
            f64::INFINITY
        } else {
            (median(&finite) - 4.0).abs()
        };
        for r in residuals.iter_mut() {
            *r = if r.is_finite() { spread } else { f64::INFINITY };
        }
    }
    let failing: Vec<usize> = idx
        .iter()
        .zip(&residuals)
        .filter(|(_, r)| !(**r <= threshold))
        .map(|(i, _)| *i)
        .collect();
    let max_residual = residuals
        .iter()
        .fold(0.0f64, |m, &r| if r.is_nan() { f64::INFINITY } else { m.max(r) });
    if !failing.is_empty() {
        return Err(Error::Verification {
            message: format!("{} residual {max_residual:.3e} above {threshold:.1e}", spec.id),
            samples: failing,
        });
    }
    Ok(VerifyReport {
        benchmark: spec.id,
        checked: idx,
        max_residual,
        threshold,
    })
}
