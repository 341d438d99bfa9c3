//! Method-of-lines solver: node-centred finite volumes in space, backward
//! Euler in time with Newton iteration on the catalyst-zone kinetics.
//!
//! Gas balance per node (per unit cross-section):
//! `S_i dc_i/dt = sum_faces eps_f D_K (c_nb - c_i)/h + cat_i (M r)_gas + source`,
//! surface balance at catalyst nodes: `du/dt = (M r)_surface`.
//! Inert-zone rows are linear and per-gas decoupled, so they are condensed
//! onto the catalyst block by scalar Thomas sweeps before the small coupled
//! block-tridiagonal system is factorised.

use serde::{Deserialize, Serialize};

use super::{knudsen_diffusivity, ExperimentDesign, FluxSeries, ReactorGeometry};
use crate::constants::NMOL_PER_MOL;
use crate::error::{Result, TapError};
use crate::linalg::SmallLu;
use crate::mechanism::{Kinetics, Mechanism, SpeciesKind};
use crate::params::{EnergyKind, ParameterSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Spatial nodes including inlet and outlet.
    pub nodes: usize,
    /// Output and nominal integration step, s.
    pub dt: f64,
    /// Standard deviation of the Gaussian inlet pulse, s.
    pub pulse_width: f64,
    pub newton_rtol: f64,
    pub max_newton: usize,
    pub max_halvings: u32,
    /// Undershoot below zero that is clamped instead of rejected, mol/m3.
    pub negativity_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            nodes: 120,
            dt: 1e-3,
            pulse_width: 1e-3,
            newton_rtol: 1e-10,
            max_newton: 30,
            max_halvings: 10,
            negativity_tol: 1e-12,
        }
    }
}

/// Concentration fields at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateField {
    /// Node positions, m (inlet to outlet).
    pub x: Vec<f64>,
    /// `gas[g][node]`, mol/m3 of gas phase; the outlet node is zero.
    pub gas: Vec<Vec<f64>>,
    /// Positions of catalyst nodes, m.
    pub catalyst_x: Vec<f64>,
    /// `surface[s][catalyst node]`, mol/m3 of catalyst zone.
    pub surface: Vec<Vec<f64>>,
    /// Void volume represented by each node, m3.
    pub gas_volume: Vec<f64>,
    /// Catalyst-zone volume represented by each catalyst node, m3.
    pub catalyst_volume: Vec<f64>,
}

impl StateField {
    /// Moles of gas `g` held in the reactor.
    pub fn gas_inventory(&self, g: usize) -> f64 {
        self.gas[g].iter().zip(&self.gas_volume).map(|(c, v)| c * v).sum()
    }

    /// Moles of surface species `s` held on the catalyst.
    pub fn surface_inventory(&self, s: usize) -> f64 {
        self.surface[s].iter().zip(&self.catalyst_volume).map(|(c, v)| c * v).sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationResult {
    pub flux: FluxSeries,
    pub final_state: StateField,
    /// Largest relative drift of any site-type total over nodes and steps.
    pub max_site_drift: f64,
    pub halvings: usize,
    pub newton_iterations: usize,
}

/// Fick outlet flux `f = D_K * eps_exit * A * (-dc/dx)` in nmol/s for each gas,
/// from the concentration gradient at x = L in mol/m4.
pub fn outlet_flux(gradient: &[f64], diffusivity: &[f64], geometry: &ReactorGeometry) -> Vec<f64> {
    let eps = geometry.zone_void_fractions[2];
    gradient
        .iter()
        .zip(diffusivity)
        .map(|(g, d)| -d * eps * geometry.cross_section_area * g * NMOL_PER_MOL)
        .collect()
}

/// Simulates one pulse experiment with default numerics.
pub fn simulate(
    mech: &Mechanism,
    geometry: &ReactorGeometry,
    design: &ExperimentDesign,
    params: &ParameterSet,
) -> Result<SimulationResult> {
    simulate_with(mech, geometry, design, params, &SolverOptions::default())
}

pub fn simulate_with(
    mech: &Mechanism,
    geometry: &ReactorGeometry,
    design: &ExperimentDesign,
    params: &ParameterSet,
    options: &SolverOptions,
) -> Result<SimulationResult> {
    geometry.validate()?;
    design.validate()?;
    if options.nodes < 4 {
        return Err(TapError::invalid("at least 4 spatial nodes are required"));
    }
    if !(options.dt > 0.0) || !(options.pulse_width > 0.0) {
        return Err(TapError::invalid("time step and pulse width must be positive"));
    }
    let kinetics = Kinetics::with_energies(mech, design.temperature, &params.energies(mech))?;
    let mut sim = Solver::new(mech, geometry, design, options, kinetics, Vec::new())?;
    Ok(sim.run()?.0)
}

/// Simulates and propagates exact derivatives of the discretised outlet
/// fluxes with respect to the free parameters of `params` (nmol/s per eV),
/// one series per free parameter in free-vector order.
pub fn simulate_with_tangents(
    mech: &Mechanism,
    geometry: &ReactorGeometry,
    design: &ExperimentDesign,
    params: &ParameterSet,
    options: &SolverOptions,
) -> Result<(SimulationResult, Vec<FluxSeries>)> {
    geometry.validate()?;
    design.validate()?;
    params.validate(mech)?;
    if options.nodes < 4 {
        return Err(TapError::invalid("at least 4 spatial nodes are required"));
    }
    if !(options.dt > 0.0) || !(options.pulse_width > 0.0) {
        return Err(TapError::invalid("time step and pulse width must be positive"));
    }
    let kinetics = Kinetics::with_energies(mech, design.temperature, &params.energies(mech))?;
    let tangents = params.entries.iter().filter(|e| e.free).map(|e| (e.step, e.kind)).collect();
    let mut sim = Solver::new(mech, geometry, design, options, kinetics, tangents)?;
    sim.run()
}

struct Grid {
    h: f64,
    x: Vec<f64>,
    /// Void length of each unknown node's control volume.
    storage: Vec<f64>,
    /// Catalyst length of each unknown node's control volume.
    cat: Vec<f64>,
    /// Void fraction on the face between node i and i + 1.
    face_eps: Vec<f64>,
    first_cat: usize,
    last_cat: usize,
}

fn overlap(a: f64, b: f64, c: f64, d: f64) -> f64 {
    (b.min(d) - a.max(c)).max(0.0)
}

impl Grid {
    fn new(geometry: &ReactorGeometry, nodes: usize) -> Result<Self> {
        let len = geometry.length();
        let h = len / (nodes - 1) as f64;
        let x: Vec<f64> = (0..nodes).map(|i| i as f64 * h).collect();
        let z = [
            0.0,
            geometry.zone_lengths[0],
            geometry.zone_lengths[0] + geometry.zone_lengths[1],
            len,
        ];
        let eps = geometry.zone_void_fractions;
        let (c0, c1) = geometry.catalyst_span();
        let nu = nodes - 1;
        let mut storage = Vec::with_capacity(nu);
        let mut cat = Vec::with_capacity(nu);
        for &xi in &x[..nu] {
            let lo = (xi - 0.5 * h).max(0.0);
            let hi = (xi + 0.5 * h).min(len);
            storage.push((0..3).map(|k| eps[k] * overlap(lo, hi, z[k], z[k + 1])).sum());
            let c = overlap(lo, hi, c0, c1);
            cat.push(if c > 1e-12 * h { c } else { 0.0 });
        }
        let face_eps = (0..nu)
            .map(|i| {
                let xm = x[i] + 0.5 * h;
                if xm < z[1] {
                    eps[0]
                } else if xm < z[2] {
                    eps[1]
                } else {
                    eps[2]
                }
            })
            .collect();
        let first_cat = cat
            .iter()
            .position(|&c| c > 0.0)
            .ok_or_else(|| TapError::invalid("catalyst zone is narrower than the grid spacing"))?;
        let last_cat = cat.iter().rposition(|&c| c > 0.0).unwrap();
        Ok(Grid { h, x, storage, cat, face_eps, first_cat, last_cat })
    }
}

struct Solver<'a> {
    mech: &'a Mechanism,
    geometry: &'a ReactorGeometry,
    design: &'a ExperimentDesign,
    options: &'a SolverOptions,
    kinetics: Kinetics,
    grid: Grid,
    ng: usize,
    nsurf: usize,
    /// Knudsen diffusivity per gas.
    diff: Vec<f64>,
    /// Injected amount per gas, mol per m2 of cross-section, and delay.
    pulses: Vec<(usize, f64, f64)>,
    /// Gas concentrations, `c[g * nu + i]`.
    c: Vec<f64>,
    /// Surface concentrations, `u[k * nsurf + s]` for catalyst node k.
    u: Vec<f64>,
    /// Parameters whose tangent sensitivities are propagated.
    tangents: Vec<(usize, EnergyKind)>,
    /// `d c / d p` and `d u / d p` per tangent parameter.
    sc: Vec<Vec<f64>>,
    su: Vec<Vec<f64>>,
    site_group: Vec<usize>,
    site_init: Vec<f64>,
    gas_atol: f64,
    surf_atol: f64,
    max_site_drift: f64,
    halvings: usize,
    newton_iterations: usize,
    nominal_step: usize,
    work: Work,
}

/// Linear-system factors and buffers reused across iterations and steps.
#[derive(Default)]
struct Work {
    dt: f64,
    /// Face conductances per gas, `dt * eps_face * D_K / h`.
    cond: Vec<Vec<f64>>,
    /// Diagonal pivots of the condensed inert chains, `[g * nu + i]`.
    chain_pivot: Vec<f64>,
    c: Vec<f64>,
    u: Vec<f64>,
    /// Right-hand side / solution, gas and surface parts.
    rg: Vec<f64>,
    rs: Vec<f64>,
    conc: Vec<f64>,
    prod: Vec<f64>,
    pjac: Vec<f64>,
    blocks: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    col: Vec<f64>,
    lus: Vec<SmallLu>,
}

/// Standard normal CDF.
fn phi(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

impl<'a> Solver<'a> {
    fn new(
        mech: &'a Mechanism,
        geometry: &'a ReactorGeometry,
        design: &'a ExperimentDesign,
        options: &'a SolverOptions,
        kinetics: Kinetics,
        tangents: Vec<(usize, EnergyKind)>,
    ) -> Result<Self> {
        let grid = Grid::new(geometry, options.nodes)?;
        let ng = mech.n_gas();
        let nsurf = mech.n_surface();
        let diff = mech
            .gases()
            .iter()
            .map(|g| knudsen_diffusivity(g.molar_mass().unwrap(), design.temperature, geometry))
            .collect::<Result<Vec<_>>>()?;
        let mut pulses = Vec::new();
        let mut total_mol = 0.0;
        for p in &design.pulses {
            let g = mech
                .gas_index(&p.gas)
                .ok_or_else(|| TapError::invalid(format!("pulsed gas '{}' is not in the mechanism", p.gas)))?;
            if p.intensity > 0.0 {
                let mol = p.intensity / NMOL_PER_MOL;
                total_mol += mol;
                pulses.push((g, mol / geometry.cross_section_area, p.delay));
            }
        }
        let surface = mech.surface_species();
        let site_types = mech.site_types();
        let site_group = surface
            .iter()
            .map(|s| site_types.iter().position(|t| Some(*t) == s.site_type()).unwrap())
            .collect();
        let site_init: Vec<f64> = site_types
            .iter()
            .map(|t| match &mech.species[mech.species_index(t).unwrap()].kind {
                SpeciesKind::Site { initial_conc } => *initial_conc,
                _ => 0.0,
            })
            .collect();
        let nu = options.nodes - 1;
        let ncat = grid.last_cat - grid.first_cat + 1;
        let u0 = mech.initial_surface();
        let mut u = Vec::with_capacity(ncat * nsurf);
        for _ in 0..ncat {
            u.extend_from_slice(&u0);
        }
        let void_volume: f64 = grid.storage.iter().sum();
        let cscale = (total_mol / geometry.cross_section_area / void_volume).max(1e-30);
        let sscale = site_init.iter().cloned().fold(0.0, f64::max).max(1e-30);
        let np = tangents.len();
        Ok(Solver {
            mech,
            geometry,
            design,
            options,
            kinetics,
            grid,
            ng,
            nsurf,
            diff,
            pulses,
            c: vec![0.0; ng * nu],
            u,
            tangents,
            sc: vec![vec![0.0; ng * nu]; np],
            su: vec![vec![0.0; ncat * nsurf]; np],
            site_group,
            site_init,
            gas_atol: options.newton_rtol * cscale * 1e-3,
            surf_atol: options.newton_rtol * sscale * 1e-3,
            max_site_drift: 0.0,
            halvings: 0,
            newton_iterations: 0,
            nominal_step: 0,
            work: Work::default(),
        })
    }

    fn nu(&self) -> usize {
        self.options.nodes - 1
    }

    fn ncat(&self) -> usize {
        self.grid.last_cat - self.grid.first_cat + 1
    }

    /// Source (mol/m2) entering gas `g` over `[t0, t1]`.
    fn source(&self, g: usize, t0: f64, t1: f64) -> f64 {
        let sigma = self.options.pulse_width;
        let horizon = self.design.horizon;
        self.pulses
            .iter()
            .filter(|p| p.0 == g)
            .map(|&(_, amount, mu)| {
                let norm = phi((horizon - mu) / sigma) - phi(-mu / sigma);
                amount * (phi((t1 - mu) / sigma) - phi((t0 - mu) / sigma)) / norm
            })
            .sum()
    }

    fn outlet_factor(&self, g: usize) -> f64 {
        let eps_out = self.grid.face_eps[self.nu() - 1];
        eps_out * self.diff[g] * self.geometry.cross_section_area / self.grid.h * NMOL_PER_MOL
    }

    fn run(&mut self) -> Result<(SimulationResult, Vec<FluxSeries>)> {
        let dt = self.options.dt;
        let n_out = (self.design.horizon / dt).round() as usize;
        if n_out == 0 || ((n_out as f64) * dt - self.design.horizon).abs() > 1e-9 * self.design.horizon {
            return Err(TapError::invalid("horizon must be a whole number of time steps"));
        }
        let nu = self.nu();
        let np = self.tangents.len();
        let factors: Vec<f64> = (0..self.ng).map(|g| self.outlet_factor(g)).collect();
        let mut time = Vec::with_capacity(n_out);
        let mut flux = vec![Vec::with_capacity(n_out); self.ng];
        let mut dflux = vec![vec![Vec::with_capacity(n_out); self.ng]; np];
        for n in 0..n_out {
            self.nominal_step = n;
            let t0 = n as f64 * dt;
            self.advance(t0, dt, 0)?;
            time.push((n + 1) as f64 * dt);
            for g in 0..self.ng {
                flux[g].push(factors[g] * self.c[g * nu + nu - 1]);
                for p in 0..np {
                    dflux[p][g].push(factors[g] * self.sc[p][g * nu + nu - 1]);
                }
            }
        }
        let gases = self.mech.gas_names();
        let series = FluxSeries { time: time.clone(), gases: gases.clone(), flux };
        let finite = |f: &FluxSeries| f.flux.iter().flatten().all(|v| v.is_finite());
        let tangents: Vec<FluxSeries> = dflux
            .into_iter()
            .map(|flux| FluxSeries { time: time.clone(), gases: gases.clone(), flux })
            .collect();
        if !finite(&series) || !tangents.iter().all(finite) {
            return Err(TapError::Solver {
                step: n_out,
                time: self.design.horizon,
                msg: "non-finite outlet flux".into(),
            });
        }
        let result = SimulationResult {
            flux: series,
            final_state: self.state_field(),
            max_site_drift: self.max_site_drift,
            halvings: self.halvings,
            newton_iterations: self.newton_iterations,
        };
        Ok((result, tangents))
    }

    fn state_field(&self) -> StateField {
        let nu = self.nu();
        let area = self.geometry.cross_section_area;
        let gas = (0..self.ng)
            .map(|g| {
                let mut v = self.c[g * nu..(g + 1) * nu].to_vec();
                v.push(0.0);
                v
            })
            .collect();
        let ncat = self.ncat();
        let surface = (0..self.nsurf)
            .map(|s| (0..ncat).map(|k| self.u[k * self.nsurf + s]).collect())
            .collect();
        let mut gas_volume: Vec<f64> = self.grid.storage.iter().map(|s| s * area).collect();
        gas_volume.push(0.0);
        StateField {
            x: self.grid.x.clone(),
            gas,
            catalyst_x: self.grid.x[self.grid.first_cat..=self.grid.last_cat].to_vec(),
            surface,
            gas_volume,
            catalyst_volume: self.grid.cat[self.grid.first_cat..=self.grid.last_cat]
                .iter()
                .map(|c| c * area)
                .collect(),
        }
    }

    fn advance(&mut self, t0: f64, dt: f64, depth: u32) -> Result<()> {
        let mut w = std::mem::take(&mut self.work);
        let outcome = self.try_step(t0, dt, &mut w);
        if outcome.is_ok() {
            self.propagate_tangents(dt, &mut w);
            std::mem::swap(&mut self.c, &mut w.c);
            std::mem::swap(&mut self.u, &mut w.u);
        }
        self.work = w;
        match outcome {
            Ok(()) => {
                self.track_sites();
                Ok(())
            }
            Err(msg) => {
                if depth >= self.options.max_halvings {
                    return Err(TapError::Solver {
                        step: self.nominal_step,
                        time: t0,
                        msg: format!("{msg} after {depth} step halvings"),
                    });
                }
                self.halvings += 1;
                self.advance(t0, 0.5 * dt, depth + 1)?;
                self.advance(t0 + 0.5 * dt, 0.5 * dt, depth + 1)
            }
        }
    }

    fn track_sites(&mut self) {
        let nsites = self.site_init.len();
        let mut sums = vec![0.0; nsites];
        for k in 0..self.ncat() {
            sums.iter_mut().for_each(|s| *s = 0.0);
            for s in 0..self.nsurf {
                sums[self.site_group[s]] += self.u[k * self.nsurf + s];
            }
            for (t, &sum) in sums.iter().enumerate() {
                let init = self.site_init[t];
                if init > 0.0 {
                    self.max_site_drift = self.max_site_drift.max((sum - init).abs() / init);
                }
            }
        }
    }

    /// Sizes the buffers and caches everything that depends only on `dt`.
    fn prepare(&self, dt: f64, w: &mut Work) {
        if w.dt == dt && w.cond.len() == self.ng {
            return;
        }
        let nu = self.nu();
        let (ng, nsurf) = (self.ng, self.nsurf);
        let ns = ng + nsurf;
        let ncat = self.ncat();
        let (a, b) = (self.grid.first_cat, self.grid.last_cat);
        let storage = &self.grid.storage;
        w.dt = dt;
        w.cond = (0..ng)
            .map(|g| self.grid.face_eps.iter().map(|e| dt * e * self.diff[g] / self.grid.h).collect())
            .collect();
        w.chain_pivot = vec![0.0; ng * nu];
        for g in 0..ng {
            let k = &w.cond[g];
            let dp = &mut w.chain_pivot[g * nu..(g + 1) * nu];
            let diag = |i: usize| storage[i] + if i > 0 { k[i - 1] } else { 0.0 } + k[i];
            for i in 0..a {
                dp[i] = if i == 0 { diag(i) } else { diag(i) - k[i - 1] * k[i - 1] / dp[i - 1] };
            }
            for i in (b + 1..nu).rev() {
                dp[i] = if i == nu - 1 { diag(i) } else { diag(i) - k[i] * k[i] / dp[i + 1] };
            }
        }
        w.rg = vec![0.0; ng * nu];
        w.rs = vec![0.0; ncat * nsurf];
        w.conc = vec![0.0; ns];
        w.prod = vec![0.0; ns];
        w.pjac = vec![0.0; ns * ns];
        w.blocks = vec![vec![0.0; ns * ns]; ncat];
        w.y = vec![vec![0.0; ns]; ncat];
        w.col = vec![0.0; ns];
    }

    /// Residual of the step equations at `(w.c, w.u)` into `(w.rg, w.rs)`,
    /// negated so that it is the Newton right-hand side; also assembles and
    /// factorises the Jacobian when `factor` is set.
    fn assemble(&self, dt: f64, src: &[f64], w: &mut Work, factor: bool) -> std::result::Result<(), String> {
        let nu = self.nu();
        let (ng, nsurf) = (self.ng, self.nsurf);
        let ns = ng + nsurf;
        let (a, b) = (self.grid.first_cat, self.grid.last_cat);
        let ncat = b - a + 1;
        let storage = &self.grid.storage;
        for g in 0..ng {
            let cg = &w.c[g * nu..(g + 1) * nu];
            let old = &self.c[g * nu..(g + 1) * nu];
            let k = &w.cond[g];
            let r = &mut w.rg[g * nu..(g + 1) * nu];
            for i in 0..nu {
                let left = if i > 0 { k[i - 1] * (cg[i] - cg[i - 1]) } else { 0.0 };
                let right = k[i] * (cg[i] - if i + 1 < nu { cg[i + 1] } else { 0.0 });
                r[i] = -(storage[i] * (cg[i] - old[i]) + left + right);
            }
            r[0] += src[g];
        }
        for kc in 0..ncat {
            let i = a + kc;
            for g in 0..ng {
                w.conc[g] = w.c[g * nu + i];
            }
            w.conc[ng..].copy_from_slice(&w.u[kc * nsurf..(kc + 1) * nsurf]);
            let wc = self.grid.cat[i];
            if factor {
                self.kinetics.production_with_jacobian(&w.conc, &mut w.prod, &mut w.pjac);
                let blk = &mut w.blocks[kc];
                for r in 0..ns {
                    let scale = if r < ng { dt * wc } else { dt };
                    for col in 0..ns {
                        blk[r * ns + col] = -scale * w.pjac[r * ns + col];
                    }
                }
                for g in 0..ng {
                    let left = if i > 0 { w.cond[g][i - 1] } else { 0.0 };
                    blk[g * ns + g] += storage[i] + left + w.cond[g][i];
                }
                for s in 0..nsurf {
                    blk[(ng + s) * ns + ng + s] += 1.0;
                }
            } else {
                self.kinetics.production(&w.conc, &mut w.prod);
            }
            for g in 0..ng {
                w.rg[g * nu + i] += dt * wc * w.prod[g];
            }
            for s in 0..nsurf {
                let idx = kc * nsurf + s;
                w.rs[idx] = -(w.u[idx] - self.u[idx] - dt * w.prod[ng + s]);
            }
        }
        if !factor {
            return Ok(());
        }

        // Schur complements of the inert chains on the end catalyst blocks.
        for g in 0..ng {
            let k = &w.cond[g];
            let dp = &w.chain_pivot[g * nu..(g + 1) * nu];
            if a > 0 {
                w.blocks[0][g * ns + g] -= k[a - 1] * k[a - 1] / dp[a - 1];
            }
            if b + 1 < nu {
                w.blocks[ncat - 1][g * ns + g] -= k[b] * k[b] / dp[b + 1];
            }
        }
        // Block LU along the catalyst nodes.
        w.lus.clear();
        for kc in 0..ncat {
            if kc > 0 {
                let i = a + kc;
                let prev = &w.lus[kc - 1];
                for g2 in 0..ng {
                    w.col.iter_mut().for_each(|v| *v = 0.0);
                    w.col[g2] = w.cond[g2][i - 1];
                    prev.solve_in_place(&mut w.col);
                    for g in 0..ng {
                        w.blocks[kc][g * ns + g2] -= w.cond[g][i - 1] * w.col[g];
                    }
                }
            }
            let lu = SmallLu::factor(&w.blocks[kc], ns)
                .ok_or_else(|| format!("singular Jacobian block at node {}", a + kc))?;
            w.lus.push(lu);
        }
        Ok(())
    }

    /// Solves `J x = r` in place on `(rg, rs)` with the factors in `w`.
    fn solve(&self, w: &mut Work, rg: &mut [f64], rs: &mut [f64]) {
        let nu = self.nu();
        let (ng, nsurf) = (self.ng, self.nsurf);
        let (a, b) = (self.grid.first_cat, self.grid.last_cat);
        let ncat = b - a + 1;
        // Forward sweeps along the chains towards the catalyst.
        for g in 0..ng {
            let k = &w.cond[g];
            let dp = &w.chain_pivot[g * nu..(g + 1) * nu];
            let r = &mut rg[g * nu..(g + 1) * nu];
            for i in 1..a {
                r[i] += k[i - 1] * r[i - 1] / dp[i - 1];
            }
            if a > 0 {
                r[a] += k[a - 1] * r[a - 1] / dp[a - 1];
            }
            for i in (b + 1..nu - 1).rev() {
                r[i] += k[i] * r[i + 1] / dp[i + 1];
            }
            if b + 1 < nu {
                r[b] += k[b] * r[b + 1] / dp[b + 1];
            }
        }
        // Block forward elimination.
        for kc in 0..ncat {
            let i = a + kc;
            let (done, rest) = w.y.split_at_mut(kc);
            let y = &mut rest[0];
            for g in 0..ng {
                y[g] = rg[g * nu + i];
            }
            y[ng..].copy_from_slice(&rs[kc * nsurf..(kc + 1) * nsurf]);
            if kc > 0 {
                w.col.copy_from_slice(&done[kc - 1]);
                w.lus[kc - 1].solve_in_place(&mut w.col);
                for g in 0..ng {
                    y[g] += w.cond[g][i - 1] * w.col[g];
                }
            }
        }
        // Block back substitution; y[kc] becomes the solution at node kc.
        for kc in (0..ncat).rev() {
            let (head, tail) = w.y.split_at_mut(kc + 1);
            let y = &mut head[kc];
            if kc + 1 < ncat {
                let i = a + kc;
                for g in 0..ng {
                    y[g] += w.cond[g][i] * tail[0][g];
                }
            }
            w.lus[kc].solve_in_place(y);
            for g in 0..ng {
                rg[g * nu + a + kc] = y[g];
            }
            rs[kc * nsurf..(kc + 1) * nsurf].copy_from_slice(&y[ng..]);
        }
        // Back substitution along the chains.
        for g in 0..ng {
            let k = &w.cond[g];
            let dp = &w.chain_pivot[g * nu..(g + 1) * nu];
            let x = &mut rg[g * nu..(g + 1) * nu];
            for i in (0..a).rev() {
                x[i] = (x[i] + k[i] * x[i + 1]) / dp[i];
            }
            for i in b + 1..nu {
                x[i] = (x[i] + k[i - 1] * x[i - 1]) / dp[i];
            }
        }
    }

    /// One backward-Euler step; on success the new state is left in
    /// `w.c` / `w.u`, otherwise a reason for rejection is returned.
    fn try_step(&mut self, t0: f64, dt: f64, w: &mut Work) -> std::result::Result<(), String> {
        self.prepare(dt, w);
        let src: Vec<f64> = (0..self.ng).map(|g| self.source(g, t0, t0 + dt)).collect();
        w.c.clear();
        w.c.extend_from_slice(&self.c);
        w.u.clear();
        w.u.extend_from_slice(&self.u);
        let linear = self.kinetics.n_steps() == 0;
        let rtol = self.options.newton_rtol;
        let mut rg = std::mem::take(&mut w.rg);
        let mut rs = std::mem::take(&mut w.rs);

        let mut outcome = Err("Newton iteration did not converge".to_string());
        let mut prev_norm = f64::INFINITY;
        for _ in 0..self.options.max_newton {
            self.newton_iterations += 1;
            w.rg = rg;
            w.rs = rs;
            let assembled = self.assemble(dt, &src, w, true);
            rg = std::mem::take(&mut w.rg);
            rs = std::mem::take(&mut w.rs);
            if let Err(msg) = assembled {
                outcome = Err(msg);
                break;
            }
            self.solve(w, &mut rg, &mut rs);

            // Update size in units of the tolerance.
            let mut norm = 0.0f64;
            for (v, d) in w.c.iter_mut().zip(&rg) {
                *v += d;
                norm = norm.max(d.abs() / (rtol * v.abs() + self.gas_atol));
            }
            for (v, d) in w.u.iter_mut().zip(&rs) {
                *v += d;
                norm = norm.max(d.abs() / (rtol * v.abs() + self.surf_atol));
            }
            if !norm.is_finite() || w.c.iter().chain(&w.u).any(|v| !v.is_finite()) {
                outcome = Err("non-finite Newton iterate".into());
                break;
            }
            // Remaining error estimated from the observed contraction rate.
            let theta = norm / prev_norm;
            if linear || norm <= 1.0 || (prev_norm.is_finite() && theta < 1.0 && theta / (1.0 - theta) * norm <= 1.0) {
                outcome = Ok(());
                break;
            }
            prev_norm = norm;
        }
        w.rg = rg;
        w.rs = rs;
        outcome?;

        let tol = self.options.negativity_tol;
        for v in w.c.iter_mut().chain(w.u.iter_mut()) {
            if *v < 0.0 {
                if *v < -tol {
                    return Err(format!("negative concentration {v:e}"));
                }
                *v = 0.0;
            }
        }
        Ok(())
    }

    /// Advances `d(state)/dp` through an accepted step: differentiating the
    /// step equations gives `J s_new = S s_old + dt d(M r)/dp` with the
    /// Jacobian re-factorised at the accepted state.
    fn propagate_tangents(&mut self, dt: f64, w: &mut Work) {
        if self.tangents.is_empty() {
            return;
        }
        let nu = self.nu();
        let (ng, nsurf) = (self.ng, self.nsurf);
        let ns = ng + nsurf;
        let a = self.grid.first_cat;
        let ncat = self.ncat();
        // The residual is not needed, only the factors at the new state.
        let zeros = vec![0.0; ng];
        let mut rg = std::mem::take(&mut w.rg);
        let mut rs = std::mem::take(&mut w.rs);
        w.rg = rg;
        w.rs = rs;
        if self.assemble(dt, &zeros, w, true).is_err() {
            // Keep the last Newton factors; they differ by the final update only.
            log::debug!("tangent refactorisation failed; reusing Newton factors");
        }
        rg = std::mem::take(&mut w.rg);
        rs = std::mem::take(&mut w.rs);
        let mut dprod = vec![0.0; ns];
        for p in 0..self.tangents.len() {
            let (step, kind) = self.tangents[p];
            for g in 0..ng {
                for i in 0..nu {
                    rg[g * nu + i] = self.grid.storage[i] * self.sc[p][g * nu + i];
                }
            }
            rs.copy_from_slice(&self.su[p]);
            for kc in 0..ncat {
                let i = a + kc;
                for g in 0..ng {
                    w.conc[g] = w.c[g * nu + i];
                }
                w.conc[ng..].copy_from_slice(&w.u[kc * nsurf..(kc + 1) * nsurf]);
                dprod.iter_mut().for_each(|v| *v = 0.0);
                self.kinetics.add_energy_derivative(step, kind, &w.conc, &mut dprod);
                let wc = self.grid.cat[i];
                for g in 0..ng {
                    rg[g * nu + i] += dt * wc * dprod[g];
                }
                for s in 0..nsurf {
                    rs[kc * nsurf + s] += dt * dprod[ng + s];
                }
            }
            self.solve(w, &mut rg, &mut rs);
            self.sc[p].copy_from_slice(&rg);
            self.su[p].copy_from_slice(&rs);
        }
        w.rg = rg;
        w.rs = rs;
    }
}
